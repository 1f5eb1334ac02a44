//! Statistics over score records: the chi-squared test for component-order
//! invariance and per-component generation rates.

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::promptgen::PromptSpec;
use crate::scoring::ScoreRecord;
pub use crate::special::regularized_gamma_q;
use crate::special::chi_squared_sf;

/// Significance level used by the order-invariance test.
pub const DEFAULT_ALPHA: f64 = 0.05;
/// Expected counts below this trigger a warning.
pub const LOW_EXPECTED: f64 = 5.0;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ContingencyTable {
    pub row_labels: Vec<usize>,
    pub col_labels: Vec<String>,
    pub counts: Vec<Vec<u64>>,
}

impl ContingencyTable {
    pub fn new(row_labels: Vec<usize>, col_labels: Vec<String>, counts: Vec<Vec<u64>>) -> Result<Self> {
        if counts.len() != row_labels.len() || counts.iter().any(|r| r.len() != col_labels.len()) {
            return Err(Error::InvalidParameter(
                "contingency table shape does not match its labels".into(),
            ));
        }
        Ok(ContingencyTable {
            row_labels,
            col_labels,
            counts,
        })
    }

    /// Unlabeled table, rows numbered from 0.
    pub fn from_counts(counts: Vec<Vec<u64>>) -> Result<Self> {
        let cols = counts.first().map_or(0, Vec::len);
        Self::new(
            (0..counts.len()).collect(),
            (0..cols).map(|c| c.to_string()).collect(),
            counts,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChiSquaredResult {
    pub statistic: f64,
    pub df: usize,
    pub p_value: f64,
    pub n_total: u64,
    /// Cells whose expected count was below 5.
    pub low_expected_cells: usize,
}

/// Pearson chi-squared test of independence (no continuity correction).
/// Rows and columns with a zero marginal are dropped before the degrees of
/// freedom are computed.
pub fn chi_squared_test(table: &ContingencyTable) -> Result<ChiSquaredResult> {
    let ncols = table.col_labels.len();
    let col_totals: Vec<u64> = (0..ncols)
        .map(|j| table.counts.iter().map(|r| r[j]).sum())
        .collect();
    let kept_cols: Vec<usize> = (0..ncols).filter(|&j| col_totals[j] > 0).collect();
    let kept_rows: Vec<&Vec<u64>> = table
        .counts
        .iter()
        .filter(|r| r.iter().sum::<u64>() > 0)
        .collect();
    if kept_rows.len() < 2 || kept_cols.len() < 2 {
        return Err(Error::DegenerateTable {
            rows: kept_rows.len(),
            cols: kept_cols.len(),
        });
    }
    let n_total: u64 = col_totals.iter().sum();
    let n = n_total as f64;
    let mut statistic = 0.0;
    let mut low_expected_cells = 0;
    for row in &kept_rows {
        let row_total = row.iter().sum::<u64>() as f64;
        for &j in &kept_cols {
            let expected = row_total * col_totals[j] as f64 / n;
            if expected < LOW_EXPECTED {
                low_expected_cells += 1;
            }
            if expected > 0.0 {
                let diff = row[j] as f64 - expected;
                statistic += diff * diff / expected;
            }
        }
    }
    if low_expected_cells > 0 {
        log::warn!("{low_expected_cells} contingency cell(s) have expected count < {LOW_EXPECTED}");
    }
    let df = (kept_rows.len() - 1) * (kept_cols.len() - 1);
    let p_value = chi_squared_sf(statistic, df as f64)?;
    Ok(ChiSquaredResult {
        statistic,
        df,
        p_value,
        n_total,
        low_expected_cells,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Verdict {
    Reject,
    FailToReject,
}

impl std::fmt::Display for Verdict {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Verdict::Reject => "reject",
            Verdict::FailToReject => "fail to reject",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InvarianceReport {
    pub table: ContingencyTable,
    pub result: ChiSquaredResult,
    pub alpha: f64,
    pub verdict: Verdict,
}

/// Per-label detection counts implied by records' argmax masks.
pub fn detection_tally(records: &[ScoreRecord], prompts: &[PromptSpec]) -> Result<BTreeMap<usize, u64>> {
    let by_id: HashMap<u64, &PromptSpec> = prompts.iter().map(|p| (p.prompt_id(), p)).collect();
    let mut tally = BTreeMap::new();
    for r in records {
        let prompt = by_id
            .get(&r.prompt_id)
            .ok_or_else(|| Error::ProtocolError(format!("record for unknown prompt {}", r.prompt_id)))?;
        for (bit, c) in prompt.components().iter().enumerate() {
            if r.argmax_mask & (1 << bit) != 0 {
                *tally.entry(c.index).or_insert(0) += 1;
            }
        }
    }
    Ok(tally)
}

fn component_set(p: &PromptSpec) -> BTreeSet<usize> {
    p.component_indices().into_iter().collect()
}

/// Chi-squared comparison of detected-component distributions between
/// original and shuffled prompt sets.
pub fn sequence_invariance_test(
    original_records: &[ScoreRecord],
    original_prompts: &[PromptSpec],
    shuffled_records: &[ScoreRecord],
    shuffled_prompts: &[PromptSpec],
    alpha: f64,
) -> Result<InvarianceReport> {
    let originals: BTreeMap<u64, BTreeSet<usize>> = original_prompts
        .iter()
        .map(|p| (p.prompt_id(), component_set(p)))
        .collect();
    let shuffled: BTreeMap<u64, BTreeSet<usize>> = shuffled_prompts
        .iter()
        .map(|p| (p.prompt_id(), component_set(p)))
        .collect();
    if originals != shuffled {
        return Err(Error::ProtocolError(
            "original and shuffled runs do not share the same prompts and components".into(),
        ));
    }
    let a = detection_tally(original_records, original_prompts)?;
    let b = detection_tally(shuffled_records, shuffled_prompts)?;
    let labels: BTreeSet<usize> = a.keys().chain(b.keys()).copied().collect();
    let counts = labels
        .iter()
        .map(|l| vec![a.get(l).copied().unwrap_or(0), b.get(l).copied().unwrap_or(0)])
        .collect();
    let table = ContingencyTable::new(
        labels.into_iter().collect(),
        vec!["original".into(), "shuffled".into()],
        counts,
    )?;
    let result = chi_squared_test(&table)?;
    let verdict = if result.p_value < alpha {
        Verdict::Reject
    } else {
        Verdict::FailToReject
    };
    Ok(InvarianceReport {
        table,
        result,
        alpha,
        verdict,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ComponentRate {
    pub label: usize,
    pub name: String,
    pub included: u64,
    pub detected: u64,
    pub ratio: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Quantiles {
    pub min: f64,
    pub q25: f64,
    pub median: f64,
    pub q75: f64,
    pub max: f64,
}

impl Quantiles {
    /// Linear-interpolation quantiles of `values` (need not be sorted).
    pub fn of(values: &[f64]) -> Option<Self> {
        if values.is_empty() {
            return None;
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let at = |q: f64| {
            let pos = q * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (v[hi] - v[lo]) * (pos - lo as f64)
        };
        Some(Quantiles {
            min: v[0],
            q25: at(0.25),
            median: at(0.5),
            q75: at(0.75),
            max: v[v.len() - 1],
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BiasReport {
    /// Sorted by descending ratio, then by label.
    pub components: Vec<ComponentRate>,
    pub quantiles: Option<Quantiles>,
    /// Records left out because their prompt had a single component.
    pub excluded_single_component: usize,
}

impl BiasReport {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("rank,label,name,included,detected,ratio\n");
        for (rank, c) in self.components.iter().enumerate() {
            let name = if c.name.contains([',', '"']) {
                format!("\"{}\"", c.name.replace('"', "\"\""))
            } else {
                c.name.clone()
            };
            out.push_str(&format!(
                "{},{},{},{},{},{:.6}\n",
                rank + 1,
                c.label,
                name,
                c.included,
                c.detected,
                c.ratio
            ));
        }
        out
    }
}

/// Per-label detection/inclusion ratios. Only prompts with K >= 2 take part:
/// with a single component there is no competition between components.
pub fn bias_ratios(records: &[ScoreRecord], prompts: &[PromptSpec]) -> Result<BiasReport> {
    let by_id: HashMap<u64, &PromptSpec> = prompts.iter().map(|p| (p.prompt_id(), p)).collect();
    let mut included: BTreeMap<usize, u64> = BTreeMap::new();
    let mut detected: BTreeMap<usize, u64> = BTreeMap::new();
    let mut names: BTreeMap<usize, String> = BTreeMap::new();
    let mut excluded = 0;
    for r in records {
        let prompt = by_id
            .get(&r.prompt_id)
            .ok_or_else(|| Error::ProtocolError(format!("record for unknown prompt {}", r.prompt_id)))?;
        if prompt.k() < 2 {
            excluded += 1;
            continue;
        }
        for (bit, c) in prompt.components().iter().enumerate() {
            *included.entry(c.index).or_insert(0) += 1;
            names.entry(c.index).or_insert_with(|| c.name.clone());
            if r.argmax_mask & (1 << bit) != 0 {
                *detected.entry(c.index).or_insert(0) += 1;
            }
        }
    }
    let mut components: Vec<ComponentRate> = included
        .iter()
        .map(|(&label, &inc)| {
            let det = detected.get(&label).copied().unwrap_or(0);
            ComponentRate {
                label,
                name: names.remove(&label).unwrap_or_default(),
                included: inc,
                detected: det,
                ratio: det as f64 / inc as f64,
            }
        })
        .collect();
    components.sort_by(|a, b| b.ratio.total_cmp(&a.ratio).then(a.label.cmp(&b.label)));
    let ratios: Vec<f64> = components.iter().map(|c| c.ratio).collect();
    Ok(BiasReport {
        quantiles: Quantiles::of(&ratios),
        components,
        excluded_single_component: excluded,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lookup::{build_lookup, LookupOptions};
    use crate::promptgen::{sample_prompts, shuffle_prompt, Grammar};
    use crate::scoring::score_image;
    use crate::vocabulary::Vocabulary;
    use proptest::prelude::*;

    #[test]
    fn two_by_two_statistic() {
        let t = ContingencyTable::from_counts(vec![vec![10, 20], vec![20, 10]]).unwrap();
        let r = chi_squared_test(&t).unwrap();
        assert!((r.statistic - 20.0 / 3.0).abs() < 1e-12);
        assert_eq!(r.df, 1);
        assert_eq!(r.n_total, 60);
        assert_eq!(r.low_expected_cells, 0);
    }

    #[test]
    fn proportional_table_is_independent() {
        let t = ContingencyTable::from_counts(vec![vec![2, 4], vec![5, 10], vec![1, 2]]).unwrap();
        let r = chi_squared_test(&t).unwrap();
        assert!(r.statistic.abs() < 1e-12);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.df, 2);
        assert!(r.low_expected_cells > 0);
    }

    #[test]
    fn zero_marginals_are_dropped() {
        let t = ContingencyTable::from_counts(vec![vec![10, 20], vec![0, 0], vec![20, 10]]).unwrap();
        assert_eq!(chi_squared_test(&t).unwrap().df, 1);
        let one_row = ContingencyTable::from_counts(vec![vec![3, 4], vec![0, 0]]).unwrap();
        assert!(matches!(
            chi_squared_test(&one_row),
            Err(Error::DegenerateTable { rows: 1, cols: 2 })
        ));
        let one_col = ContingencyTable::from_counts(vec![vec![3, 0], vec![4, 0]]).unwrap();
        assert!(matches!(
            chi_squared_test(&one_col),
            Err(Error::DegenerateTable { rows: 2, cols: 1 })
        ));
    }

    #[test]
    fn reference_p_value() {
        let p = chi_squared_sf(1006.76, 996.0).unwrap();
        assert!((p - 0.399).abs() < 0.005, "p = {p}");
    }

    #[test]
    fn quantile_interpolation() {
        let q = Quantiles::of(&[0.0, 1.0, 2.0, 3.0, 4.0]).unwrap();
        assert_eq!((q.min, q.q25, q.median, q.q75, q.max), (0.0, 1.0, 2.0, 3.0, 4.0));
        let q = Quantiles::of(&[1.0, 0.0]).unwrap();
        assert_eq!(q.median, 0.5);
        assert!(Quantiles::of(&[]).is_none());
    }

    fn setup(k: usize, m: usize) -> (Vec<PromptSpec>, Vec<PromptSpec>) {
        let v = Vocabulary::from_names((0..40).map(|i| format!("n{i}"))).unwrap();
        let p = sample_prompts(&v, k, m, 3, Grammar::default()).unwrap();
        let s = p.iter().map(|x| shuffle_prompt(x, 9)).collect();
        (p, s)
    }

    fn full_records(prompts: &[PromptSpec]) -> Vec<ScoreRecord> {
        prompts
            .iter()
            .map(|p| {
                let t = build_lookup(p, LookupOptions::default()).unwrap();
                score_image(p, &t, t.len() - 1, "0", "").unwrap()
            })
            .collect()
    }

    #[test]
    fn identical_conditions_fail_to_reject() {
        let (p, s) = setup(4, 30);
        let r = sequence_invariance_test(&full_records(&p), &p, &full_records(&s), &s, DEFAULT_ALPHA).unwrap();
        assert_eq!(r.result.statistic, 0.0);
        assert_eq!(r.result.p_value, 1.0);
        assert_eq!(r.verdict, Verdict::FailToReject);
        assert_eq!(r.verdict.to_string(), "fail to reject");
    }

    #[test]
    fn mismatched_prompt_sets_are_rejected() {
        let (p, _) = setup(4, 30);
        let (other, _) = setup(3, 30);
        assert!(matches!(
            sequence_invariance_test(&full_records(&p), &p, &full_records(&other), &other, 0.05),
            Err(Error::ProtocolError(_))
        ));
    }

    #[test]
    fn bias_skips_single_component_prompts() {
        let (p1, _) = setup(1, 5);
        let r = bias_ratios(&full_records(&p1), &p1).unwrap();
        assert!(r.components.is_empty());
        assert_eq!(r.excluded_single_component, 5);
    }

    #[test]
    fn perfect_detection_ratios() {
        let (p, _) = setup(4, 10);
        let r = bias_ratios(&full_records(&p), &p).unwrap();
        assert!(r.components.iter().all(|c| c.ratio == 1.0));
        let q = r.quantiles.unwrap();
        assert_eq!((q.min, q.median, q.max), (1.0, 1.0, 1.0));
        let used: BTreeSet<usize> = p.iter().flat_map(|x| x.component_indices()).collect();
        assert_eq!(r.components.len(), used.len());
        assert!(r.to_csv().starts_with("rank,label,name,included,detected,ratio\n1,"));
    }

    proptest! {
        #[test]
        fn statistic_symmetries(rows in proptest::collection::vec((1u64..200, 1u64..200), 2..30), seed: u64) {
            use rand::seq::SliceRandom;
            let counts: Vec<Vec<u64>> = rows.iter().map(|&(a, b)| vec![a, b]).collect();
            let base = chi_squared_test(&ContingencyTable::from_counts(counts.clone()).unwrap()).unwrap();
            let swapped: Vec<Vec<u64>> = rows.iter().map(|&(a, b)| vec![b, a]).collect();
            let sw = chi_squared_test(&ContingencyTable::from_counts(swapped).unwrap()).unwrap();
            let mut permuted = counts;
            permuted.shuffle(&mut crate::rng::child(seed, &[]));
            let pe = chi_squared_test(&ContingencyTable::from_counts(permuted).unwrap()).unwrap();
            prop_assert!((base.statistic - sw.statistic).abs() <= 1e-9 * base.statistic.max(1.0));
            prop_assert!((base.statistic - pe.statistic).abs() <= 1e-9 * base.statistic.max(1.0));
            prop_assert_eq!(base.df, rows.len() - 1);
            prop_assert!((0.0..=1.0).contains(&base.p_value));
        }

        #[test]
        fn detections_conserve_matched_counts(masks in proptest::collection::vec(0u32..256, 1..40)) {
            let (p, _) = setup(8, masks.len());
            let recs: Vec<ScoreRecord> = p.iter().zip(&masks).map(|(pr, &m)| {
                let t = build_lookup(pr, LookupOptions::default()).unwrap();
                score_image(pr, &t, m as usize, "0", "").unwrap()
            }).collect();
            let tally = detection_tally(&recs, &p).unwrap();
            prop_assert_eq!(tally.values().sum::<u64>(), recs.iter().map(|r| r.matched_count as u64).sum::<u64>());
            let bias = bias_ratios(&recs, &p).unwrap();
            for c in &bias.components {
                prop_assert!(c.detected <= c.included);
                prop_assert!((0.0..=1.0).contains(&c.ratio));
            }
        }
    }
}
