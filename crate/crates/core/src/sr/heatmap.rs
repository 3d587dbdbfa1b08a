//! Pairwise membership tests between subgroups, as CSV and an SVG grid.

use std::fmt::Write as _;

use super::{permutation_test, MembershipResult, SrTable, CENTROID_SAMPLE};
use crate::names::{Gender, Race, SubgroupKey, SubgroupSet, MAX_SUBGROUP_LENGTH};
use crate::seed::stable_hash;

pub const UNAVAILABLE: &str = "unavailable";

#[derive(Clone, Debug, PartialEq)]
pub struct HeatmapCell {
    pub group_a: SubgroupKey,
    pub group_b: SubgroupKey,
    pub result: Option<MembershipResult>,
    /// Why the cell is unavailable, if it is.
    pub note: Option<String>,
}

impl HeatmapCell {
    pub fn flag(&self) -> &'static str {
        match &self.result {
            Some(r) => significance_flag(r.p_value),
            None => UNAVAILABLE,
        }
    }
}

/// `*` below 0.001, `†` below 0.01.
pub fn significance_flag(p: f64) -> &'static str {
    if p < 0.001 {
        "*"
    } else if p < 0.01 {
        "†"
    } else {
        ""
    }
}

/// Same race and length across gender, same gender and length across race,
/// and same race and gender across length.
pub fn default_pair_plan() -> Vec<(SubgroupKey, SubgroupKey)> {
    let mut plan = Vec::new();
    let lengths = 1..=MAX_SUBGROUP_LENGTH;
    for race in Race::ALL {
        for len in lengths.clone() {
            plan.push((SubgroupKey::new(race, Gender::Female, len), SubgroupKey::new(race, Gender::Male, len)));
        }
    }
    for gender in Gender::BINARY {
        for len in lengths.clone() {
            for (i, &r1) in Race::ALL.iter().enumerate() {
                for &r2 in &Race::ALL[i + 1..] {
                    plan.push((SubgroupKey::new(r1, gender, len), SubgroupKey::new(r2, gender, len)));
                }
            }
        }
    }
    for race in Race::ALL {
        for gender in Gender::BINARY {
            for l1 in lengths.clone() {
                for l2 in l1 + 1..=MAX_SUBGROUP_LENGTH {
                    plan.push((SubgroupKey::new(race, gender, l1), SubgroupKey::new(race, gender, l2)));
                }
            }
        }
    }
    plan
}

/// Runs one permutation test per planned pair. A pair whose groups have
/// fewer than three names with SR data is marked unavailable. Each cell's
/// seed derives from `seed` and the pair, so cells do not depend on plan order.
pub fn pairwise_heatmap(
    table: &SrTable,
    subgroups: &SubgroupSet,
    plan: &[(SubgroupKey, SubgroupKey)],
    runs: u64,
    seed: u64,
) -> Vec<HeatmapCell> {
    let means = table.column_means();
    let vectors = |key: &SubgroupKey| table.group_vectors(subgroups.members(key), &means);

    plan.iter()
        .map(|&(a, b)| {
            let (va, vb) = (vectors(&a), vectors(&b));
            let short = [(a, va.len()), (b, vb.len())]
                .into_iter()
                .find(|(_, n)| *n < CENTROID_SAMPLE);
            if let Some((key, n)) = short {
                return HeatmapCell {
                    group_a: a,
                    group_b: b,
                    result: None,
                    note: Some(format!("{} has {n} names with SR data", key.short())),
                };
            }
            let cell_seed = stable_hash(&[b"heatmap", &seed.to_le_bytes(), a.short().as_bytes(), b.short().as_bytes()]);
            let mut result = permutation_test(&va, &vb, runs, cell_seed).expect("group sizes checked");
            result.group_a = a.short();
            result.group_b = b.short();
            HeatmapCell {
                group_a: a,
                group_b: b,
                result: Some(result),
                note: None,
            }
        })
        .collect()
}

/// `group_a,group_b,accuracy,p_value,flag`.
pub fn heatmap_csv(cells: &[HeatmapCell]) -> String {
    let mut out = String::from("group_a,group_b,accuracy,p_value,flag\n");
    for c in cells {
        let (acc, p) = match &c.result {
            Some(r) => (format!("{}", r.accuracy), format!("{}", r.p_value)),
            None => (String::new(), String::new()),
        };
        let _ = writeln!(out, "{},{},{acc},{p},{}", c.group_a.short(), c.group_b.short(), c.flag());
    }
    out
}

/// Grid with first groups as rows and second groups as columns; cells
/// shade from white at accuracy 0.5 to red at 1.0.
pub fn heatmap_svg(cells: &[HeatmapCell], title: &str) -> String {
    let mut rows: Vec<SubgroupKey> = Vec::new();
    let mut cols: Vec<SubgroupKey> = Vec::new();
    for c in cells {
        if !rows.contains(&c.group_a) {
            rows.push(c.group_a);
        }
        if !cols.contains(&c.group_b) {
            cols.push(c.group_b);
        }
    }
    const CELL: usize = 56;
    const MARGIN: usize = 70;
    let (width, height) = (MARGIN + CELL * cols.len() + 10, MARGIN + CELL * rows.len() + 10);
    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" font-family="sans-serif" font-size="11">"#
    );
    let _ = writeln!(svg, r#"<text x="4" y="14" font-size="13">{}</text>"#, escape(title));
    for (j, k) in cols.iter().enumerate() {
        let x = MARGIN + j * CELL + CELL / 2;
        let _ = writeln!(svg, r#"<text x="{x}" y="{}" text-anchor="middle">{}</text>"#, MARGIN - 8, k.short());
    }
    for (i, k) in rows.iter().enumerate() {
        let y = MARGIN + i * CELL + CELL / 2 + 4;
        let _ = writeln!(svg, r#"<text x="{}" y="{y}" text-anchor="end">{}</text>"#, MARGIN - 6, k.short());
    }
    for c in cells {
        let i = rows.iter().position(|k| *k == c.group_a).expect("row");
        let j = cols.iter().position(|k| *k == c.group_b).expect("col");
        let (x, y) = (MARGIN + j * CELL, MARGIN + i * CELL);
        let (fill, label) = match &c.result {
            Some(r) => {
                let t = ((r.accuracy - 0.5) / 0.5).clamp(0.0, 1.0);
                let gb = (255.0 * (1.0 - t)).round() as u8;
                (format!("rgb(255,{gb},{gb})"), format!("{:.2}{}", r.accuracy, significance_flag(r.p_value)))
            }
            None => ("rgb(200,200,200)".to_string(), "n/a".to_string()),
        };
        let _ = writeln!(
            svg,
            r#"<rect x="{x}" y="{y}" width="{CELL}" height="{CELL}" fill="{fill}" stroke="white"/><text x="{}" y="{}" text-anchor="middle">{label}</text>"#,
            x + CELL / 2,
            y + CELL / 2 + 4
        );
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::BTreeMap;

    #[test]
    fn default_plan_shape() {
        let plan = default_pair_plan();
        assert_eq!(plan.len(), 12 + 36 + 24);
        let distinct: std::collections::BTreeSet<_> = plan.iter().collect();
        assert_eq!(distinct.len(), plan.len());
    }

    #[test]
    fn flags() {
        assert_eq!(significance_flag(0.0009), "*");
        assert_eq!(significance_flag(0.001), "†");
        assert_eq!(significance_flag(0.0099), "†");
        assert_eq!(significance_flag(0.01), "");
    }

    fn fixture() -> (SrTable, SubgroupSet) {
        let wf = SubgroupKey::new(Race::White, Gender::Female, 1);
        let bf = SubgroupKey::new(Race::Black, Gender::Female, 1);
        let names: Vec<String> = (0..8).map(|i| format!("n{i}")).collect();
        // identical multisets of vectors in both groups
        let values = (0..8).flat_map(|i| [Some((i % 4) as f64 / 4.0), Some(0.5)]).collect();
        let table = SrTable {
            names: names.clone(),
            words: vec!["x".into(), "y".into()],
            values,
            annotations: vec![None; 8],
        };
        let set = SubgroupSet {
            tokenizer_id: "t".into(),
            seed: 0,
            cap: 30,
            groups: BTreeMap::from([(wf, names[..4].to_vec()), (bf, names[4..].to_vec())]),
        };
        (table, set)
    }

    #[test]
    fn identical_groups_unflagged_and_missing_group_unavailable() {
        let (table, set) = fixture();
        let wf = SubgroupKey::new(Race::White, Gender::Female, 1);
        let bf = SubgroupKey::new(Race::Black, Gender::Female, 1);
        let am = SubgroupKey::new(Race::Asian, Gender::Male, 1);
        let cells = pairwise_heatmap(&table, &set, &[(wf, bf), (wf, am)], 999, 1);
        assert_eq!(cells[0].flag(), "");
        assert_eq!(cells[1].flag(), UNAVAILABLE);
        let csv = heatmap_csv(&cells);
        assert!(csv.starts_with("group_a,group_b,accuracy,p_value,flag\nW_F_1,B_F_1,"));
        assert!(csv.ends_with("W_F_1,A_M_1,,,unavailable\n"));
        let svg = heatmap_svg(&cells, "test");
        assert!(svg.contains("n/a") && svg.contains("B_F_1"));
    }

    #[test]
    fn cells_independent_of_plan_order() {
        let (table, set) = fixture();
        let wf = SubgroupKey::new(Race::White, Gender::Female, 1);
        let bf = SubgroupKey::new(Race::Black, Gender::Female, 1);
        let am = SubgroupKey::new(Race::Asian, Gender::Male, 1);
        let one = pairwise_heatmap(&table, &set, &[(wf, bf), (wf, am)], 200, 3);
        let two = pairwise_heatmap(&table, &set, &[(wf, am), (wf, bf)], 200, 3);
        assert_eq!(one[0], two[1]);
    }
}
