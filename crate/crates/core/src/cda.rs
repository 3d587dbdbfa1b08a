//! Counterfactual data augmentation: copies of each training question with
//! names rewritten so replacement names spread evenly over subgroup bins.

use std::collections::{BTreeMap, HashSet};

use rand::Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mcq::{substitute_names, Mcq, Provenance};
use crate::names::{SubgroupKey, SubgroupSet};
use crate::seed::{rng_for, stable_hash};
use crate::tokenize::title_case;

pub const DEFAULT_FACTOR: usize = 16;

#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentationPlan {
    pub factor: usize,
    pub bins: Vec<SubgroupKey>,
    pub seed: u64,
}

impl AugmentationPlan {
    pub fn new(factor: usize, bins: Vec<SubgroupKey>, seed: u64) -> Result<Self> {
        if factor == 0 {
            return Err(Error::InvalidInput("augmentation factor must be at least 1".into()));
        }
        if bins.is_empty() {
            return Err(Error::InvalidInput("augmentation needs at least one bin".into()));
        }
        Ok(Self { factor, bins, seed })
    }

    /// Every non-empty subgroup of `subgroups`, in key order.
    pub fn over_subgroups(factor: usize, subgroups: &SubgroupSet, seed: u64) -> Result<Self> {
        let bins = subgroups.groups.iter().filter(|(_, m)| !m.is_empty()).map(|(k, _)| *k).collect();
        Self::new(factor, bins, seed)
    }
}

#[derive(Clone, Debug, Default)]
pub struct Augmentation {
    /// Augmented copies in input order, with spanless inputs passed through
    /// once at their original position.
    pub samples: Vec<Mcq>,
    pub augmented: usize,
    pub passthrough: usize,
    pub warnings: Vec<String>,
}

/// Each spanned input becomes `factor` copies; each copy replaces every
/// canonical name with a name from the next bin of a global round-robin
/// ledger. Ledger positions are assigned up front from prefix sums, so the
/// per-sample work runs in parallel and the result depends only on the inputs.
pub fn augment(mcqs: &[Mcq], subgroups: &SubgroupSet, plan: &AugmentationPlan) -> Result<Augmentation> {
    let mut warnings = Vec::new();
    let bins: Vec<SubgroupKey> = plan
        .bins
        .iter()
        .copied()
        .filter(|k| {
            let empty = subgroups.members(k).is_empty();
            if empty {
                warnings.push(format!("bin {} has no names; excluded", k.short()));
            }
            !empty
        })
        .collect();
    if bins.is_empty() {
        return Err(Error::InvalidInput("no augmentation bin has any names".into()));
    }
    let offset = (stable_hash(&[b"cda-ledger", &plan.seed.to_le_bytes()]) % bins.len() as u64) as usize;

    let mut starts = Vec::with_capacity(mcqs.len());
    let mut position = 0usize;
    for mcq in mcqs {
        starts.push(position);
        position += mcq.canonical_names().len() * plan.factor;
    }

    let outputs: Vec<Result<Vec<Mcq>>> = mcqs
        .par_iter()
        .zip(starts)
        .enumerate()
        .map(|(index, (mcq, start))| {
            let names = mcq.canonical_names();
            if names.is_empty() {
                return Ok(vec![mcq.clone()]);
            }
            let mut rng = rng_for(plan.seed, index as u64);
            let mut slot = start;
            let mut copies = Vec::with_capacity(plan.factor);
            for copy in 0..plan.factor {
                let mut used: HashSet<&str> = HashSet::new();
                let mut map = BTreeMap::new();
                for canonical in &names {
                    let bin = bins[(offset + slot) % bins.len()];
                    slot += 1;
                    let members = subgroups.members(&bin);
                    let free: Vec<&str> = members.iter().map(String::as_str).filter(|n| !used.contains(n)).collect();
                    if free.is_empty() {
                        return Err(Error::InvalidInput(format!(
                            "bin {} cannot supply distinct names for mcq {}",
                            bin.short(),
                            mcq.id
                        )));
                    }
                    let pick = free[rng.gen_range(0..free.len())];
                    used.insert(pick);
                    map.insert(canonical.to_string(), title_case(pick));
                }
                let mut out = substitute_names(mcq, &map)?;
                out.id = format!("{}::cda{copy}", mcq.id);
                out.provenance = Some(Provenance {
                    source_id: mcq.id.clone(),
                    replacements: map,
                });
                copies.push(out);
            }
            Ok(copies)
        })
        .collect();

    let mut result = Augmentation {
        warnings,
        ..Augmentation::default()
    };
    for (mcq, out) in mcqs.iter().zip(outputs) {
        let out = out?;
        if mcq.name_spans.is_empty() {
            result.passthrough += 1;
        } else {
            result.augmented += out.len();
        }
        result.samples.extend(out);
    }
    for w in &result.warnings {
        log::warn!("{w}");
    }
    Ok(result)
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct UniformityReport {
    /// Replacement-name occurrences per bin, over the non-empty subgroups.
    pub counts: Vec<(String, u64)>,
    pub total: u64,
    /// max over bins of |count − total / bins|.
    pub max_deviation: f64,
    /// `max_deviation / total`.
    pub max_deviation_fraction: f64,
    pub chi_square: f64,
    /// Samples without provenance or name spans.
    pub passthrough: u64,
    /// Samples with spans but no provenance.
    pub untagged: u64,
    /// Replacement names that belong to no subgroup.
    pub unknown_names: u64,
}

impl UniformityReport {
    pub fn to_csv(&self) -> String {
        let expected = if self.counts.is_empty() { 0.0 } else { self.total as f64 / self.counts.len() as f64 };
        let mut out = String::from("bin,count,expected,deviation\n");
        for (bin, c) in &self.counts {
            out.push_str(&format!("{bin},{c},{expected},{}\n", *c as f64 - expected));
        }
        out
    }
}

pub fn uniformity_report<'a>(augmented: impl IntoIterator<Item = &'a Mcq>, subgroups: &SubgroupSet) -> UniformityReport {
    let index = subgroups.key_index();
    let mut counts: BTreeMap<SubgroupKey, u64> = subgroups
        .groups
        .iter()
        .filter(|(_, m)| !m.is_empty())
        .map(|(k, _)| (*k, 0))
        .collect();
    let mut report = UniformityReport::default();
    for mcq in augmented {
        let Some(p) = &mcq.provenance else {
            if mcq.name_spans.is_empty() {
                report.passthrough += 1;
            } else {
                report.untagged += 1;
            }
            continue;
        };
        for name in p.replacements.values() {
            match index.get(&name.to_lowercase()).and_then(|k| counts.get_mut(k)) {
                Some(c) => {
                    *c += 1;
                    report.total += 1;
                }
                None => report.unknown_names += 1,
            }
        }
    }
    if report.untagged > 0 {
        log::warn!("{} samples with name spans carry no replacement provenance", report.untagged);
    }
    let expected = if counts.is_empty() { 0.0 } else { report.total as f64 / counts.len() as f64 };
    for (k, &c) in &counts {
        let d = c as f64 - expected;
        report.max_deviation = report.max_deviation.max(d.abs());
        if expected > 0.0 {
            report.chi_square += d * d / expected;
        }
        report.counts.push((k.short(), c));
    }
    if report.total > 0 {
        report.max_deviation_fraction = report.max_deviation / report.total as f64;
    }
    report
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mcq::{spot_names, substitute_names, NameLexicon};
    use crate::names::{Gender, Race};
    use proptest::prelude::*;

    fn subgroups(bins: usize, per_bin: usize) -> SubgroupSet {
        let groups = SubgroupKey::all()
            .into_iter()
            .take(bins)
            .map(|k| (k, (0..per_bin).map(|i| format!("{}name{i}", k.short().replace('_', "").to_lowercase())).collect()))
            .collect();
        SubgroupSet {
            tokenizer_id: "t".into(),
            seed: 0,
            cap: 30,
            groups,
        }
    }

    fn lexicon() -> NameLexicon {
        NameLexicon::new(["kai", "alex", "jordan"]).unwrap()
    }

    fn sample(id: &str, context: &str) -> Mcq {
        spot_names(&Mcq::new(id, context, "What will Kai do?", ["x", "y", "z"], 2).unwrap(), &lexicon())
    }

    #[test]
    fn one_copy_per_bin() {
        let set = subgroups(16, 3);
        let plan = AugmentationPlan::over_subgroups(16, &set, 1).unwrap();
        let out = augment(&[sample("s", "Kai slept.")], &set, &plan).unwrap();
        assert_eq!(out.samples.len(), 16);
        let report = uniformity_report(&out.samples, &set);
        assert_eq!(report.total, 16);
        assert!(report.counts.iter().all(|(_, c)| *c == 1));
        assert_eq!(report.max_deviation, 0.0);
    }

    #[test]
    fn single_bin() {
        let set = subgroups(1, 4);
        let plan = AugmentationPlan::over_subgroups(1, &set, 1).unwrap();
        let out = augment(&[sample("s", "Kai slept.")], &set, &plan).unwrap();
        assert_eq!(out.samples.len(), 1);
        let replacement = out.samples[0].provenance.as_ref().unwrap().replacements["Kai"].to_lowercase();
        assert!(set.members(&SubgroupKey::all()[0]).contains(&replacement));
    }

    #[test]
    fn worst_case_deviation() {
        let set = subgroups(4, 2);
        let key = SubgroupKey::all()[0];
        let name = set.members(&key)[0].clone();
        let samples: Vec<Mcq> = (0..10)
            .map(|i| Mcq {
                provenance: Some(Provenance {
                    source_id: format!("{i}"),
                    replacements: BTreeMap::from([("Kai".into(), name.clone())]),
                }),
                ..sample(&i.to_string(), "Kai slept.")
            })
            .collect();
        let report = uniformity_report(&samples, &set);
        assert_eq!(report.max_deviation_fraction, 1.0 - 1.0 / 4.0);
    }

    #[test]
    fn spanless_pass_through_once() {
        let set = subgroups(4, 2);
        let plan = AugmentationPlan::over_subgroups(16, &set, 1).unwrap();
        let plain = Mcq::new("p", "Someone slept.", "Why?", ["a", "b", "c"], 0).unwrap();
        let out = augment(&[plain.clone(), sample("s", "Kai slept.")], &set, &plan).unwrap();
        assert_eq!(out.samples.len(), 17);
        assert_eq!(out.samples[0], plain);
        assert_eq!((out.augmented, out.passthrough), (16, 1));
        assert_eq!(uniformity_report(&out.samples, &set).passthrough, 1);
    }

    #[test]
    fn empty_bin_excluded_with_warning() {
        let mut set = subgroups(3, 2);
        let gap = SubgroupKey::new(Race::Asian, Gender::Male, 3);
        set.groups.insert(gap, vec![]);
        let mut bins: Vec<SubgroupKey> = set.groups.keys().copied().collect();
        bins.sort();
        let plan = AugmentationPlan::new(6, bins, 2).unwrap();
        let out = augment(&[sample("s", "Kai slept.")], &set, &plan).unwrap();
        assert_eq!(out.warnings.len(), 1);
        let report = uniformity_report(&out.samples, &set);
        assert_eq!(report.counts.len(), 3);
        assert_eq!(report.max_deviation, 0.0);
    }

    #[test]
    fn zero_factor_rejected() {
        assert!(AugmentationPlan::new(0, SubgroupKey::all(), 0).is_err());
    }

    fn corpus(n: usize) -> Vec<Mcq> {
        (0..n)
            .map(|i| match i % 5 {
                0 => sample(&format!("s{i}"), "Kai and Alex went out."),
                1 => Mcq::new(format!("s{i}"), "It rained.", "Why?", ["a", "b", "c"], 1).unwrap(),
                _ => sample(&format!("s{i}"), "Kai told Kai's friend about Jordan."),
            })
            .collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn invariants(n in 1usize..40, factor in 1usize..6, bins in 2usize..10, seed in any::<u64>()) {
            let set = subgroups(bins, 5);
            let plan = AugmentationPlan::over_subgroups(factor, &set, seed).unwrap();
            let inputs = corpus(n);
            let out = augment(&inputs, &set, &plan).unwrap();
            let spanned = inputs.iter().filter(|m| !m.name_spans.is_empty()).count();
            prop_assert_eq!(out.samples.len(), factor * spanned + (inputs.len() - spanned));
            prop_assert_eq!(&augment(&inputs, &set, &plan).unwrap().samples, &out.samples);

            let by_id: BTreeMap<&str, &Mcq> = inputs.iter().map(|m| (m.id.as_str(), m)).collect();
            for s in &out.samples {
                let Some(p) = &s.provenance else { continue };
                let source = by_id[p.source_id.as_str()];
                let distinct: HashSet<&String> = p.replacements.values().collect();
                prop_assert_eq!(distinct.len(), p.replacements.len());
                prop_assert_eq!(s.correct_index, source.correct_index);
                let inverse: BTreeMap<String, String> = p.replacements.iter().map(|(k, v)| (v.clone(), k.clone())).collect();
                let mut back = substitute_names(s, &inverse).unwrap();
                back.id = source.id.clone();
                back.provenance = None;
                prop_assert_eq!(&back, source);
            }
            // ledger round robin: no bin more than one assignment from any other
            let report = uniformity_report(&out.samples, &set);
            let (lo, hi) = report.counts.iter().fold((u64::MAX, 0), |(lo, hi), (_, c)| (lo.min(*c), hi.max(*c)));
            prop_assert!(hi - lo <= 1);
        }
    }
}
