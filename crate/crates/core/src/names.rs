//! Name tables, inclusion criteria, gender assignment and controlled subgroups.

use std::collections::{BTreeMap, HashMap};
use std::fmt;
use std::io::{Read, Write};
use std::path::Path;
use std::str::FromStr;

use rand::seq::index;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::seed::rng_for;
use crate::tokenize::Tokenizer;

pub const DEFAULT_MIN_COUNT: u64 = 200;
pub const DEFAULT_DOMINANCE: f64 = 0.5;
pub const DEFAULT_CAP: usize = 30;
/// Subgroups are built for token lengths 1 through this value.
pub const MAX_SUBGROUP_LENGTH: usize = 3;

const SHARE_SUM_TOLERANCE: f64 = 1e-6;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Race {
    White,
    Black,
    Hispanic,
    Asian,
}

impl Race {
    pub const ALL: [Race; 4] = [Race::White, Race::Black, Race::Hispanic, Race::Asian];

    pub fn label(self) -> &'static str {
        match self {
            Race::White => "White",
            Race::Black => "Black",
            Race::Hispanic => "Hispanic",
            Race::Asian => "Asian",
        }
    }

    pub fn code(self) -> &'static str {
        &self.label()[..1]
    }
}

impl fmt::Display for Race {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Race {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Race::ALL
            .into_iter()
            .find(|r| r.label().eq_ignore_ascii_case(s) || r.code().eq_ignore_ascii_case(s))
            .ok_or_else(|| Error::InvalidInput(format!("unknown race {s:?}")))
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Gender {
    Female,
    Male,
    #[default]
    Unassigned,
}

impl Gender {
    pub const BINARY: [Gender; 2] = [Gender::Female, Gender::Male];

    pub fn label(self) -> &'static str {
        match self {
            Gender::Female => "Female",
            Gender::Male => "Male",
            Gender::Unassigned => "Unassigned",
        }
    }

    pub fn code(self) -> &'static str {
        match self {
            Gender::Female => "F",
            Gender::Male => "M",
            Gender::Unassigned => "",
        }
    }
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for Gender {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim().to_ascii_lowercase().as_str() {
            "f" | "female" => Ok(Gender::Female),
            "m" | "male" => Ok(Gender::Male),
            "" | "u" | "unassigned" => Ok(Gender::Unassigned),
            other => Err(Error::InvalidInput(format!("unknown gender {other:?}"))),
        }
    }
}

/// Fractions of a name's bearers in each tracked category. The remainder
/// (`1 - sum`) is the untracked "other" category.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct RaceShares {
    pub white: f64,
    pub black: f64,
    pub hispanic: f64,
    pub asian: f64,
}

impl RaceShares {
    pub fn get(&self, race: Race) -> f64 {
        match race {
            Race::White => self.white,
            Race::Black => self.black,
            Race::Hispanic => self.hispanic,
            Race::Asian => self.asian,
        }
    }

    fn get_mut(&mut self, race: Race) -> &mut f64 {
        match race {
            Race::White => &mut self.white,
            Race::Black => &mut self.black,
            Race::Hispanic => &mut self.hispanic,
            Race::Asian => &mut self.asian,
        }
    }

    pub fn sum(&self) -> f64 {
        Race::ALL.iter().map(|&r| self.get(r)).sum()
    }

    /// Largest share; ties resolve in `Race::ALL` order.
    pub fn max(&self) -> (Race, f64) {
        let mut best = (Race::White, self.white);
        for race in Race::ALL {
            if self.get(race) > best.1 {
                best = (race, self.get(race));
            }
        }
        best
    }

    fn validate(&self) -> std::result::Result<(), String> {
        for race in Race::ALL {
            let share = self.get(race);
            if !(0.0..=1.0).contains(&share) {
                return Err(format!("share_{} = {share} outside [0,1]", race.label().to_lowercase()));
            }
        }
        if self.sum() > 1.0 + SHARE_SUM_TOLERANCE {
            return Err(format!("shares sum to {} > 1", self.sum()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct NameRecord {
    /// Original casing from the source table.
    pub name: String,
    pub shares: RaceShares,
    pub count: u64,
    pub gender: Gender,
    /// Dominant race, set by [`apply_inclusion_criteria`].
    pub race: Option<Race>,
}

impl NameRecord {
    pub fn new(name: impl Into<String>, shares: RaceShares, count: u64) -> Self {
        Self {
            name: name.into(),
            shares,
            count,
            gender: Gender::Unassigned,
            race: None,
        }
    }

    /// Case-insensitive identity used for matching across tables.
    pub fn key(&self) -> String {
        self.name.to_lowercase()
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct RowDiagnostic {
    pub line: u64,
    pub message: String,
}

impl fmt::Display for RowDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "line {}: {}", self.line, self.message)
    }
}

#[derive(Clone, Debug, Default)]
pub struct LoadReport {
    pub records: Vec<NameRecord>,
    pub diagnostics: Vec<RowDiagnostic>,
}

/// Supported name table layouts.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NameSchema {
    /// `name,share_white,share_black,share_hispanic,share_asian,count[,gender]`
    V1,
}

impl NameSchema {
    fn id(self) -> &'static str {
        "name-csv-v1"
    }
}

const V1_COLUMNS: [&str; 6] = [
    "name",
    "share_white",
    "share_black",
    "share_hispanic",
    "share_asian",
    "count",
];

pub fn load_name_records(path: impl AsRef<Path>, schema: NameSchema) -> Result<LoadReport> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_name_records(file, schema).map_err(|e| match e {
        Error::Schema { schema, found, .. } => Error::Schema {
            path: path.to_path_buf(),
            schema,
            found,
        },
        other => other,
    })
}

pub fn read_name_records(reader: impl Read, schema: NameSchema) -> Result<LoadReport> {
    let mut csv = csv::ReaderBuilder::new()
        .flexible(true)
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);

    let headers = csv.headers()?.clone();
    let header_ok = (headers.len() == 6 || headers.len() == 7)
        && headers.iter().zip(V1_COLUMNS).all(|(h, want)| h.eq_ignore_ascii_case(want))
        && (headers.len() == 6 || headers[6].eq_ignore_ascii_case("gender"));
    if !header_ok {
        return Err(Error::Schema {
            path: Default::default(),
            schema: schema.id(),
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }

    let mut report = LoadReport::default();
    let mut index: HashMap<String, usize> = HashMap::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line());
        let record = match parse_row(&row) {
            Ok(r) => r,
            Err(message) => {
                report.diagnostics.push(RowDiagnostic { line, message });
                continue;
            }
        };
        match index.get(&record.key()) {
            Some(&at) => {
                if let Some(message) = merge_into(&mut report.records[at], record) {
                    report.diagnostics.push(RowDiagnostic { line, message });
                }
            }
            None => {
                index.insert(record.key(), report.records.len());
                report.records.push(record);
            }
        }
    }
    Ok(report)
}

fn parse_row(row: &csv::StringRecord) -> std::result::Result<NameRecord, String> {
    if row.len() != 6 && row.len() != 7 {
        return Err(format!("expected 6 or 7 fields, found {}", row.len()));
    }
    let name = &row[0];
    if name.is_empty() || name.chars().any(char::is_whitespace) {
        return Err(format!("invalid name {name:?}"));
    }
    let share = |i: usize| -> std::result::Result<f64, String> {
        row[i]
            .parse::<f64>()
            .map_err(|_| format!("{} is not a number: {:?}", V1_COLUMNS[i], &row[i]))
    };
    let shares = RaceShares {
        white: share(1)?,
        black: share(2)?,
        hispanic: share(3)?,
        asian: share(4)?,
    };
    shares.validate()?;
    let count = row[5]
        .parse::<u64>()
        .map_err(|_| format!("count is not a non-negative integer: {:?}", &row[5]))?;
    let gender = match row.get(6) {
        Some(g) => g.parse::<Gender>().map_err(|e| e.to_string())?,
        None => Gender::Unassigned,
    };
    Ok(NameRecord {
        gender,
        ..NameRecord::new(name, shares, count)
    })
}

/// Writes the v1 layout with the gender column, in input order. Shares use
/// the shortest round-trip float format so a reload is exact.
pub fn write_name_records<'a>(out: impl Write, records: impl IntoIterator<Item = &'a NameRecord>) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let header: Vec<&str> = V1_COLUMNS.iter().copied().chain(["gender"]).collect();
    w.write_record(&header)?;
    for r in records {
        let s = r.shares;
        w.write_record([
            r.name.clone(),
            format!("{}", s.white),
            format!("{}", s.black),
            format!("{}", s.hispanic),
            format!("{}", s.asian),
            r.count.to_string(),
            r.gender.code().to_string(),
        ])?;
    }
    w.flush()?;
    Ok(())
}

/// Merges a duplicate row: counts add, shares are count-weighted.
fn merge_into(into: &mut NameRecord, other: NameRecord) -> Option<String> {
    let total = into.count + other.count;
    for race in Race::ALL {
        let merged = if total == 0 {
            (into.shares.get(race) + other.shares.get(race)) / 2.0
        } else {
            (into.count as f64 * into.shares.get(race) + other.count as f64 * other.shares.get(race))
                / total as f64
        };
        *into.shares.get_mut(race) = merged;
    }
    into.count = total;
    match (into.gender, other.gender) {
        (a, b) if a == b => None,
        (Gender::Unassigned, b) => {
            into.gender = b;
            None
        }
        (_, Gender::Unassigned) => None,
        _ => {
            into.gender = Gender::Unassigned;
            Some(format!("conflicting genders for duplicate name {:?}", into.name))
        }
    }
}

/// Keeps records with `count >= min_count` whose largest share is strictly
/// above `dominance`, annotating each with its dominant race.
pub fn apply_inclusion_criteria(
    records: &[NameRecord],
    min_count: u64,
    dominance: f64,
) -> Vec<NameRecord> {
    records
        .iter()
        .filter(|r| r.count >= min_count)
        .filter_map(|r| {
            let (race, share) = r.shares.max();
            (share > dominance).then(|| NameRecord {
                race: Some(race),
                ..r.clone()
            })
        })
        .collect()
}

/// Per-name `(female_count, male_count)` keyed by lowercase name.
pub type SsaTable = HashMap<String, (u64, u64)>;

pub fn load_ssa_table(path: impl AsRef<Path>) -> Result<SsaTable> {
    let path = path.as_ref();
    let file = std::fs::File::open(path).map_err(|e| Error::io(path, e))?;
    read_ssa_table(file, &path.display().to_string())
}

/// Reads `name,female_count,male_count`; repeated names (e.g. one row per
/// year) are summed.
pub fn read_ssa_table(reader: impl Read, label: &str) -> Result<SsaTable> {
    let mut csv = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .comment(Some(b'#'))
        .from_reader(reader);
    let headers = csv.headers()?.clone();
    let want = ["name", "female_count", "male_count"];
    if headers.len() != 3 || !headers.iter().zip(want).all(|(h, w)| h.eq_ignore_ascii_case(w)) {
        return Err(Error::Schema {
            path: label.into(),
            schema: "ssa-csv",
            found: headers.iter().collect::<Vec<_>>().join(","),
        });
    }
    let mut table = SsaTable::new();
    for row in csv.records() {
        let row = row?;
        let line = row.position().map_or(0, |p| p.line()) as usize;
        let parse = |i: usize| {
            row[i].parse::<u64>().map_err(|_| Error::Parse {
                context: label.to_string(),
                line,
                message: format!("{} is not a non-negative integer", want[i]),
            })
        };
        let (f, m) = (parse(1)?, parse(2)?);
        let entry = table.entry(row[0].to_lowercase()).or_insert((0, 0));
        entry.0 += f;
        entry.1 += m;
    }
    Ok(table)
}

#[derive(Clone, Debug, Default)]
pub struct GenderAssignment {
    pub records: Vec<NameRecord>,
    /// Names missing from the SSA table.
    pub absent: Vec<String>,
    /// Names with exactly equal female and male counts.
    pub ties: Vec<String>,
}

/// Labels each record with its SSA majority gender; absent names and exact
/// ties are dropped and reported.
pub fn assign_gender(records: &[NameRecord], ssa: &SsaTable) -> GenderAssignment {
    let mut out = GenderAssignment::default();
    for record in records {
        match ssa.get(&record.key()) {
            None => out.absent.push(record.name.clone()),
            Some(&(f, m)) if f == m => out.ties.push(record.name.clone()),
            Some(&(f, m)) => out.records.push(NameRecord {
                gender: if f > m { Gender::Female } else { Gender::Male },
                ..record.clone()
            }),
        }
    }
    out
}

/// One controlled cell: race × gender × tokenization length.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct SubgroupKey {
    pub race: Race,
    pub gender: Gender,
    pub token_length: usize,
}

impl SubgroupKey {
    pub fn new(race: Race, gender: Gender, token_length: usize) -> Self {
        Self {
            race,
            gender,
            token_length,
        }
    }

    /// The 24 cells used for subgroup construction.
    pub fn all() -> Vec<SubgroupKey> {
        let mut keys = Vec::with_capacity(24);
        for race in Race::ALL {
            for gender in Gender::BINARY {
                for len in 1..=MAX_SUBGROUP_LENGTH {
                    keys.push(SubgroupKey::new(race, gender, len));
                }
            }
        }
        keys
    }

    /// Compact form, e.g. `W_F_1`.
    pub fn short(&self) -> String {
        format!("{}_{}_{}", self.race.code(), self.gender.code(), self.token_length)
    }
}

impl fmt::Display for SubgroupKey {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}|{}|{}", self.race, self.gender, self.token_length)
    }
}

impl FromStr for SubgroupKey {
    type Err = Error;

    /// Accepts `White|Female|1` and `W_F_1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = if s.contains('|') {
            s.split('|').collect()
        } else {
            s.split('_').collect()
        };
        let [race, gender, len] = parts[..] else {
            return Err(Error::InvalidInput(format!("bad subgroup key {s:?}")));
        };
        let gender: Gender = gender.parse()?;
        if gender == Gender::Unassigned {
            return Err(Error::InvalidInput(format!("subgroup key {s:?} needs a gender")));
        }
        let token_length = len
            .parse::<usize>()
            .ok()
            .filter(|&l| l >= 1)
            .ok_or_else(|| Error::InvalidInput(format!("bad token length in {s:?}")))?;
        Ok(SubgroupKey::new(race.parse()?, gender, token_length))
    }
}

impl Serialize for SubgroupKey {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.serialize_str(&self.short())
    }
}

impl<'de> Deserialize<'de> for SubgroupKey {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Clone, Debug, PartialEq, Eq)]
pub struct SubgroupSet {
    pub tokenizer_id: String,
    pub seed: u64,
    pub cap: usize,
    pub groups: BTreeMap<SubgroupKey, Vec<String>>,
}

#[derive(Serialize, Deserialize)]
struct SubgroupSetJson {
    tokenizer_id: String,
    seed: u64,
    cap: usize,
    groups: BTreeMap<String, Vec<String>>,
}

impl SubgroupSet {
    pub fn members(&self, key: &SubgroupKey) -> &[String] {
        self.groups.get(key).map_or(&[], Vec::as_slice)
    }

    /// All `(key, name)` pairs in key order.
    pub fn iter(&self) -> impl Iterator<Item = (SubgroupKey, &str)> + '_ {
        self.groups
            .iter()
            .flat_map(|(k, names)| names.iter().map(move |n| (*k, n.as_str())))
    }

    pub fn len(&self) -> usize {
        self.groups.values().map(Vec::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Lowercased name → its subgroup.
    pub fn key_index(&self) -> HashMap<String, SubgroupKey> {
        self.iter().map(|(k, n)| (n.to_lowercase(), k)).collect()
    }

    pub fn to_json(&self) -> Result<String> {
        let json = SubgroupSetJson {
            tokenizer_id: self.tokenizer_id.clone(),
            seed: self.seed,
            cap: self.cap,
            groups: self.groups.iter().map(|(k, v)| (k.to_string(), v.clone())).collect(),
        };
        Ok(serde_json::to_string_pretty(&json)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let json: SubgroupSetJson = serde_json::from_str(text)?;
        let mut groups = BTreeMap::new();
        for (key, names) in json.groups {
            groups.insert(key.parse::<SubgroupKey>()?, names);
        }
        Ok(Self {
            tokenizer_id: json.tokenizer_id,
            seed: json.seed,
            cap: json.cap,
            groups,
        })
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }

    /// Counts laid out like the paper's subgroup table: one row per race,
    /// columns `Male 1..3, Female 1..3`.
    pub fn count_table_csv(&self) -> String {
        let mut out = String::from("race");
        for gender in [Gender::Male, Gender::Female] {
            for len in 1..=MAX_SUBGROUP_LENGTH {
                out.push_str(&format!(",{}_{}", gender.label(), len));
            }
        }
        out.push_str(",total\n");
        for race in Race::ALL {
            out.push_str(race.label());
            let mut total = 0;
            for gender in [Gender::Male, Gender::Female] {
                for len in 1..=MAX_SUBGROUP_LENGTH {
                    let n = self.members(&SubgroupKey::new(race, gender, len)).len();
                    total += n;
                    out.push_str(&format!(",{n}"));
                }
            }
            out.push_str(&format!(",{total}\n"));
        }
        out
    }
}

#[derive(Clone, Debug)]
pub struct SubgroupBuild {
    pub set: SubgroupSet,
    pub warnings: Vec<String>,
}

/// Samples at most `cap` names per (race, gender, length) cell, uniformly
/// without replacement. Records need a dominant race and a binary gender.
pub fn build_subgroups(
    records: &[NameRecord],
    tokenizer: &Tokenizer,
    cap: usize,
    seed: u64,
) -> SubgroupBuild {
    let mut eligible: BTreeMap<SubgroupKey, BTreeMap<String, String>> = BTreeMap::new();
    for record in records {
        let Some(race) = record.race else { continue };
        if record.gender == Gender::Unassigned {
            continue;
        }
        let len = tokenizer.token_length(&record.name);
        if !(1..=MAX_SUBGROUP_LENGTH).contains(&len) {
            continue;
        }
        eligible
            .entry(SubgroupKey::new(race, record.gender, len))
            .or_default()
            .entry(record.key())
            .or_insert_with(|| record.name.clone());
    }

    let mut groups = BTreeMap::new();
    let mut warnings = Vec::new();
    for (stream, key) in SubgroupKey::all().into_iter().enumerate() {
        let pool: Vec<String> = eligible
            .remove(&key)
            .map(|m| m.into_values().collect())
            .unwrap_or_default();
        let mut chosen: Vec<String> = if pool.len() <= cap {
            pool
        } else {
            let mut rng = rng_for(seed, stream as u64);
            let mut picked = index::sample(&mut rng, pool.len(), cap).into_vec();
            picked.sort_unstable();
            picked.into_iter().map(|i| pool[i].clone()).collect()
        };
        chosen.sort_by_key(|n| n.to_lowercase());
        if chosen.is_empty() {
            warnings.push(format!("subgroup {key} has no eligible names"));
        } else if chosen.len() < cap {
            warnings.push(format!("subgroup {key} has {} of {cap} names", chosen.len()));
        }
        groups.insert(key, chosen);
    }

    SubgroupBuild {
        set: SubgroupSet {
            tokenizer_id: tokenizer.id().to_string(),
            seed,
            cap,
            groups,
        },
        warnings,
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn shares(w: f64, b: f64, h: f64, a: f64) -> RaceShares {
        RaceShares {
            white: w,
            black: b,
            hispanic: h,
            asian: a,
        }
    }

    const HEADER: &str = "name,share_white,share_black,share_hispanic,share_asian,count,gender\n";

    #[test]
    fn parses_fixture_row() {
        let text = format!("{HEADER}nichelle,0.04,0.91,0.02,0.01,812,F\n");
        let report = read_name_records(text.as_bytes(), NameSchema::V1).unwrap();
        assert!(report.diagnostics.is_empty());
        let r = &report.records[0];
        assert_eq!(r.name, "nichelle");
        assert_eq!(r.shares.black, 0.91);
        assert_eq!(r.count, 812);
        assert_eq!(r.gender, Gender::Female);
    }

    #[test]
    fn written_records_reload_exactly() {
        let text = format!("{HEADER}nichelle,0.04,0.91,0.02,0.01,812,F\nKai,0.1,0.2,0.3,0.4,5,\n");
        let records = read_name_records(text.as_bytes(), NameSchema::V1).unwrap().records;
        let mut out = Vec::new();
        write_name_records(&mut out, &records).unwrap();
        let again = read_name_records(out.as_slice(), NameSchema::V1).unwrap();
        assert!(again.diagnostics.is_empty());
        assert_eq!(again.records, records);
    }

    #[test]
    fn empty_file_loads_nothing() {
        let report = read_name_records(HEADER.as_bytes(), NameSchema::V1).unwrap();
        assert!(report.records.is_empty());
        assert!(report.diagnostics.is_empty());
    }

    #[test]
    fn duplicates_merge_with_weighted_shares() {
        let text = format!("{HEADER}kai,0.2,0.1,0.1,0.6,100,\nKAI,0.6,0.1,0.1,0.2,300,\n");
        let report = read_name_records(text.as_bytes(), NameSchema::V1).unwrap();
        assert_eq!(report.records.len(), 1);
        let r = &report.records[0];
        assert_eq!(r.count, 400);
        assert!((r.shares.white - (100.0 * 0.2 + 300.0 * 0.6) / 400.0).abs() < 1e-12);
        assert!((r.shares.asian - (100.0 * 0.6 + 300.0 * 0.2) / 400.0).abs() < 1e-12);
    }

    #[test]
    fn bad_rows_carry_line_numbers() {
        let text = format!(
            "{HEADER}ok,0.9,0,0,0,500,M\nbad,1.2,0,0,0,500,M\nshort,0.1,0.1\nneg,0.5,0.5,0.5,0,10,\n"
        );
        let report = read_name_records(text.as_bytes(), NameSchema::V1).unwrap();
        assert_eq!(report.records.len(), 1);
        let lines: Vec<u64> = report.diagnostics.iter().map(|d| d.line).collect();
        assert_eq!(lines, vec![3, 4, 5]);
        assert!(report.diagnostics[0].message.contains("outside [0,1]"));
    }

    #[test]
    fn wrong_header_is_schema_error() {
        let err = read_name_records("name,white\nx,1\n".as_bytes(), NameSchema::V1).unwrap_err();
        assert!(matches!(err, Error::Schema { .. }));
    }

    #[test]
    fn missing_file_is_io_error() {
        let err = load_name_records("/nonexistent/names.csv", NameSchema::V1).unwrap_err();
        assert!(matches!(err, Error::Io { .. }));
    }

    #[test]
    fn inclusion_boundaries() {
        let records = vec![
            NameRecord::new("low", shares(0.9, 0.0, 0.0, 0.0), 199),
            NameRecord::new("tie", shares(0.50, 0.30, 0.15, 0.05), 5000),
            NameRecord::new("mei", shares(0.05, 0.02, 0.05, 0.88), 5000),
        ];
        let kept = apply_inclusion_criteria(&records, DEFAULT_MIN_COUNT, DEFAULT_DOMINANCE);
        assert_eq!(kept.len(), 1);
        assert_eq!(kept[0].name, "mei");
        assert_eq!(kept[0].race, Some(Race::Asian));
    }

    #[test]
    fn gender_majority_absent_and_tie() {
        let records = vec![
            NameRecord::new("nancy", shares(0.9, 0.0, 0.0, 0.0), 900),
            NameRecord::new("zyx", shares(0.9, 0.0, 0.0, 0.0), 900),
            NameRecord::new("sam", shares(0.9, 0.0, 0.0, 0.0), 900),
        ];
        let mut ssa = SsaTable::new();
        ssa.insert("nancy".into(), (900_000, 1_200));
        ssa.insert("sam".into(), (50, 50));
        let out = assign_gender(&records, &ssa);
        assert_eq!(out.records.len(), 1);
        assert_eq!(out.records[0].gender, Gender::Female);
        assert_eq!(out.absent, vec!["zyx".to_string()]);
        assert_eq!(out.ties, vec!["sam".to_string()]);
    }

    #[test]
    fn ssa_rows_are_summed() {
        let text = "name,female_count,male_count\nJo,5,7\njo,10,1\n";
        let table = read_ssa_table(text.as_bytes(), "ssa").unwrap();
        assert_eq!(table["jo"], (15, 8));
    }

    #[test]
    fn subgroup_key_forms() {
        let key: SubgroupKey = "W_F_1".parse().unwrap();
        assert_eq!(key, SubgroupKey::new(Race::White, Gender::Female, 1));
        assert_eq!(key.to_string(), "White|Female|1");
        assert_eq!("White|Female|1".parse::<SubgroupKey>().unwrap(), key);
        assert_eq!(key.short(), "W_F_1");
        assert!("W_U_1".parse::<SubgroupKey>().is_err());
        assert!("W_F_0".parse::<SubgroupKey>().is_err());
    }
}
