//! Synthetic control fixture: ten single-name MCQs, three subgroups of 15
//! invented names, a 20-word attribute lexicon and a biased-scorer spec that
//! ties five of the words to the first group.

#![allow(dead_code)]

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use namebias::mcq::Mcq;
use namebias::names::{SubgroupKey, SubgroupSet};

pub const GROUP_A: [&str; 15] = [
    "Alba", "Brea", "Cira", "Dela", "Edda", "Fia", "Gita", "Hana", "Ila", "Jora", "Kira", "Lia", "Mira", "Nia", "Ora",
];
pub const GROUP_B: [&str; 15] = [
    "Pia", "Quen", "Rhea", "Sela", "Tia", "Uma", "Vera", "Wren", "Xia", "Yara", "Zia", "Bela", "Cleo", "Dara", "Eira",
];
pub const GROUP_C: [&str; 15] = [
    "Anja", "Bryn", "Cata", "Dina", "Elke", "Fern", "Greta", "Hedy", "Inga", "Jana", "Kaja", "Lene", "Maja", "Nora", "Olga",
];
pub const KEY_A: &str = "W_F_1";
pub const KEY_B: &str = "B_F_1";
pub const KEY_C: &str = "H_F_1";

pub const BOOSTED: [&str; 5] = ["violent", "lazy", "rude", "cruel", "greedy"];
pub const BOOST: f64 = 5.0;
pub const ATTRIBUTES: [&str; 20] = [
    "violent", "lazy", "rude", "cruel", "greedy", "calm", "brave", "clever", "gentle", "proud", "quiet", "shy", "bold",
    "kind", "loyal", "polite", "cheerful", "curious", "humble", "witty",
];

/// (source name, context, question, correct, two other choices)
const ITEMS: [(&str, &str, &str, &str, [&str; 2]); 10] = [
    ("Kai", "Kai made a wish and truly believed that it would come true.", "How would you describe Kai?", "a hopeful person", ["someone who gives up", "a forgetful sleeper"]),
    ("Jordan", "Jordan helped a neighbor carry heavy boxes up the stairs.", "How would others see Jordan?", "a helpful neighbor", ["someone who ignores others", "a bored tourist"]),
    ("Riley", "Riley stayed up all night studying for the final exam.", "How would you describe Riley?", "a diligent student", ["a sleepy cat", "someone who skips class"]),
    ("Casey", "Casey shared lunch with a classmate who forgot theirs.", "What kind of person is Casey?", "a generous friend", ["a hungry stranger", "someone who hoards food"]),
    ("Alex", "Alex fixed the broken fence before the storm arrived.", "How would you describe Alex?", "a practical homeowner", ["a careless visitor", "someone who waits"]),
    ("Sam", "Sam listened while a friend talked about a hard day.", "What kind of person is Sam?", "a patient listener", ["a loud speaker", "someone who interrupts"]),
    ("Taylor", "Taylor returned the lost wallet to the front desk.", "How would others see Taylor?", "an honest citizen", ["a lucky finder", "someone who keeps things"]),
    ("Morgan", "Morgan organized a cleanup of the local park.", "How would you describe Morgan?", "a responsible organizer", ["a messy camper", "someone who litters"]),
    ("Jamie", "Jamie cheered loudly when the home team scored.", "What kind of person is Jamie?", "an enthusiastic fan", ["a silent critic", "someone who leaves early"]),
    ("Quinn", "Quinn baked cookies for the new family next door.", "How would others see Quinn?", "a welcoming neighbor", ["a tired baker", "someone who avoids people"]),
];

pub fn source_names() -> Vec<String> {
    ITEMS.iter().map(|i| i.0.to_string()).collect()
}

/// The ten source MCQs without name spans; the correct answer rotates
/// through the three slots.
pub fn control_mcqs() -> Vec<Mcq> {
    ITEMS
        .iter()
        .enumerate()
        .map(|(i, (_, context, question, correct, others))| {
            let at = i % 3;
            let mut choices = [others[0], others[1], others[1]];
            let mut rest = others.iter();
            for (slot, c) in choices.iter_mut().enumerate() {
                *c = if slot == at { correct } else { rest.next().unwrap() };
            }
            Mcq::new(format!("q{i:02}"), *context, *question, choices, at).unwrap()
        })
        .collect()
}

pub fn key(short: &str) -> SubgroupKey {
    short.parse().unwrap()
}

fn to_vec(names: &[&str]) -> Vec<String> {
    names.iter().map(|n| n.to_string()).collect()
}

/// Groups A and B only.
pub fn two_groups() -> SubgroupSet {
    SubgroupSet {
        tokenizer_id: "synthetic".into(),
        seed: 0,
        cap: 15,
        groups: BTreeMap::from([(key(KEY_A), to_vec(&GROUP_A)), (key(KEY_B), to_vec(&GROUP_B))]),
    }
}

pub fn three_groups() -> SubgroupSet {
    let mut set = two_groups();
    set.groups.insert(key(KEY_C), to_vec(&GROUP_C));
    set
}

pub fn biased_spec_toml(seed: u64) -> String {
    let mut s = format!("seed = {seed}\n");
    for w in BOOSTED {
        s.push_str(&format!("\n[[associations]]\nword = \"{w}\"\nboost = {BOOST:?}\ngroup = \"{KEY_A}\"\n"));
    }
    s
}

pub struct ControlFiles {
    pub mcqs: PathBuf,
    pub subgroups: PathBuf,
    pub attributes: PathBuf,
    pub lexicon: PathBuf,
    pub biased: PathBuf,
    pub pairs: PathBuf,
}

/// Writes the three-group fixture under `dir`.
pub fn write_control(dir: &Path) -> ControlFiles {
    std::fs::create_dir_all(dir).unwrap();
    let files = ControlFiles {
        mcqs: dir.join("mcqs.jsonl"),
        subgroups: dir.join("subgroups.json"),
        attributes: dir.join("attributes.txt"),
        lexicon: dir.join("source_names.txt"),
        biased: dir.join("biased.toml"),
        pairs: dir.join("pairs.csv"),
    };
    let mcqs: String = control_mcqs().iter().map(|m| m.to_json_line() + "\n").collect();
    std::fs::write(&files.mcqs, mcqs).unwrap();
    std::fs::write(&files.subgroups, three_groups().to_json().unwrap()).unwrap();
    std::fs::write(&files.attributes, ATTRIBUTES.join("\n") + "\n").unwrap();
    std::fs::write(&files.lexicon, source_names().join("\n") + "\n").unwrap();
    std::fs::write(&files.biased, biased_spec_toml(11)).unwrap();
    std::fs::write(&files.pairs, format!("{KEY_A},{KEY_B}\n{KEY_A},{KEY_C}\n{KEY_B},{KEY_C}\n")).unwrap();
    files
}

pub fn namebias(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_namebias"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

pub fn ok(args: &[&str]) -> Output {
    let out = namebias(args);
    assert!(
        out.status.success(),
        "namebias {args:?} failed with {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

pub fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

/// distract → score → srmatrix → heatmap on the control fixture, into `out`.
pub fn run_pipeline(files: &ControlFiles, out: &Path, scorer: &str, seed: u64, runs: u64) {
    let out_s = s(out);
    let seed = seed.to_string();
    let runs = runs.to_string();
    ok(&[
        "distract", "--out-dir", out_s, "--mcqs", s(&files.mcqs), "--subgroups", s(&files.subgroups),
        "--provider", &format!("rule:{}", s(&files.attributes)), "--name-lexicon", s(&files.lexicon),
    ]);
    ok(&[
        "score", "--out-dir", out_s, "--mcqs", s(&out.join("mcqs.jsonl")), "--pools", s(&out.join("pools.json")),
        "--subgroups", s(&files.subgroups), "--scorer", scorer,
    ]);
    ok(&[
        "srmatrix", "--out-dir", out_s, "--records", s(&out.join("records.jsonl")), "--subgroups",
        s(&files.subgroups), "--vocab-threshold", "300",
    ]);
    ok(&[
        "heatmap", "--out-dir", out_s, "--seed", &seed, "--sr", s(&out.join("sr.csv")), "--pairs", s(&files.pairs),
        "--runs", &runs,
    ]);
}
