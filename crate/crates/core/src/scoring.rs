//! Per-image component scoring and the Components Inclusion Score.
//!
//! Each image is classified against every subset text of its prompt; the
//! winning subset's cardinality divided by K is the image's score, and CIS_K
//! is the mean score over all (prompt, image) pairs.

use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::error::{Error, MissingRecords, Result};
use crate::lookup::LookupTable;
use crate::promptgen::PromptSpec;

/// Default logit scale applied to cosine similarities before the softmax.
pub const DEFAULT_SCALE: f64 = 100.0;
/// Allowed deviation of an embedding norm from 1.
pub const UNIT_NORM_TOLERANCE: f64 = 1e-4;

/// Scaled image-text similarities for one image against a lookup table.
#[derive(Debug, Clone, PartialEq)]
pub struct SimilarityVector {
    pub values: Vec<f64>,
    pub scale: f64,
}

impl SimilarityVector {
    pub fn softmax(&self) -> Vec<f64> {
        let logits: Vec<f64> = self.values.iter().map(|v| v * self.scale).collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let total: f64 = exps.iter().sum();
        exps.into_iter().map(|e| e / total).collect()
    }

    /// Index of the largest similarity; the lowest index wins ties.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, &v) in self.values.iter().enumerate().skip(1) {
            if v > self.values[best] {
                best = i;
            }
        }
        best
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Classification {
    pub similarities: SimilarityVector,
    pub probabilities: Vec<f64>,
    pub argmax_entry: usize,
}

fn check_row(row: &[f32], index: usize, dim: usize) -> Result<()> {
    if row.len() != dim {
        return Err(Error::DimensionMismatch {
            expected: dim,
            actual: row.len(),
        });
    }
    if row.iter().any(|v| !v.is_finite()) {
        return Err(Error::NumericalError(format!(
            "embedding row {index} has non-finite values"
        )));
    }
    let norm = row.iter().map(|&v| f64::from(v).powi(2)).sum::<f64>().sqrt();
    if (norm - 1.0).abs() > UNIT_NORM_TOLERANCE {
        return Err(Error::NotUnitNorm { row: index, norm });
    }
    Ok(())
}

/// Softmax classification of one image embedding against the subset text
/// embeddings. Row 0 of `subset_texts` is index 0 of the result.
pub fn classify_subsets(
    image: &[f32],
    subset_texts: &[Vec<f32>],
    scale: f64,
) -> Result<Classification> {
    if !(scale.is_finite() && scale > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "logit scale must be positive, got {scale}"
        )));
    }
    if subset_texts.is_empty() {
        return Err(Error::InvalidParameter("no subset texts".into()));
    }
    let dim = image.len();
    // Image row is reported as usize::MAX so it is distinguishable from text rows.
    check_row(image, usize::MAX, dim)?;
    for (i, t) in subset_texts.iter().enumerate() {
        check_row(t, i, dim)?;
    }
    let values = subset_texts
        .iter()
        .map(|t| {
            t.iter()
                .zip(image)
                .map(|(&a, &b)| f64::from(a) * f64::from(b))
                .sum::<f64>()
        })
        .collect();
    let similarities = SimilarityVector { values, scale };
    let probabilities = similarities.softmax();
    let argmax_entry = similarities.argmax();
    Ok(Classification {
        similarities,
        probabilities,
        argmax_entry,
    })
}

/// Outcome for one (prompt, image) pair.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRecord {
    pub prompt_id: u64,
    pub image_id: String,
    pub image_path: String,
    pub argmax_mask: u32,
    pub matched_count: usize,
    pub s: f64,
}

pub fn score_image(
    prompt: &PromptSpec,
    table: &LookupTable,
    argmax_entry: usize,
    image_id: &str,
    image_path: &str,
) -> Result<ScoreRecord> {
    if table.k() != prompt.k() || table.component_indices() != prompt.component_indices() {
        return Err(Error::KMismatch {
            prompt_k: prompt.k(),
            table_k: table.k(),
        });
    }
    let matched_count = table.count_components(argmax_entry)?;
    Ok(ScoreRecord {
        prompt_id: prompt.prompt_id(),
        image_id: image_id.to_string(),
        image_path: image_path.to_string(),
        argmax_mask: argmax_entry as u32,
        matched_count,
        s: matched_count as f64 / prompt.k() as f64,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CisResult {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub cis: f64,
    /// Records that contributed; equals `n * m` unless broken images were skipped.
    pub records: usize,
    pub per_component_detected: BTreeMap<usize, u64>,
    pub per_component_included: BTreeMap<usize, u64>,
}

impl CisResult {
    /// Three-decimal display, e.g. `CIS_8 = 0.674`.
    pub fn display(&self) -> String {
        format_cis(self.k, self.cis)
    }
}

pub fn format_cis(k: usize, cis: f64) -> String {
    format!("CIS_{k} = {cis:.3}")
}

/// Reduces per-image records to CIS_K.
///
/// Sums are taken per prompt (records ordered by image id) and then over
/// prompts in ascending id, so the result does not depend on record order.
/// With `allow_partial`, prompts may have fewer than `n` records and the mean
/// is over the records present.
pub fn aggregate_cis(
    records: &[ScoreRecord],
    prompts: &[PromptSpec],
    n: usize,
    allow_partial: bool,
) -> Result<CisResult> {
    let Some(first) = prompts.first() else {
        return Err(Error::InvalidParameter("no prompts to aggregate".into()));
    };
    let k = first.k();
    if let Some(p) = prompts.iter().find(|p| p.k() != k) {
        return Err(Error::KMismatch {
            prompt_k: p.k(),
            table_k: k,
        });
    }
    let by_id: HashMap<u64, &PromptSpec> = prompts.iter().map(|p| (p.prompt_id(), p)).collect();

    let mut grouped: BTreeMap<u64, Vec<&ScoreRecord>> =
        prompts.iter().map(|p| (p.prompt_id(), Vec::new())).collect();
    for r in records {
        grouped
            .get_mut(&r.prompt_id)
            .ok_or_else(|| {
                Error::ProtocolError(format!("record for unknown prompt {}", r.prompt_id))
            })?
            .push(r);
    }

    let mut missing = Vec::new();
    let mut total = 0.0;
    let mut count = 0usize;
    let mut detected = BTreeMap::new();
    let mut included = BTreeMap::new();
    for (prompt_id, group) in &mut grouped {
        group.sort_by(|a, b| a.image_id.cmp(&b.image_id));
        if group.windows(2).any(|w| w[0].image_id == w[1].image_id) {
            return Err(Error::ProtocolError(format!(
                "duplicate image record for prompt {prompt_id}"
            )));
        }
        if group.len() != n && !(allow_partial && group.len() < n) {
            missing.push(MissingRecords {
                prompt_id: *prompt_id,
                expected: n,
                found: group.len(),
            });
            continue;
        }
        let prompt = by_id[prompt_id];
        let indices = prompt.component_indices();
        let mut partial = 0.0;
        for r in group.iter() {
            if r.matched_count as u32 != r.argmax_mask.count_ones() || r.matched_count > k {
                return Err(Error::ProtocolError(format!(
                    "record {}/{} is inconsistent with its mask",
                    r.prompt_id, r.image_id
                )));
            }
            partial += r.s;
            for (bit, &label) in indices.iter().enumerate() {
                *included.entry(label).or_insert(0) += 1;
                if r.argmax_mask & (1 << bit) != 0 {
                    *detected.entry(label).or_insert(0) += 1;
                }
            }
        }
        total += partial;
        count += group.len();
    }
    if !missing.is_empty() {
        return Err(Error::IncompleteRun(missing));
    }
    let cis = if count == 0 { 0.0 } else { total / count as f64 };
    Ok(CisResult {
        k,
        m: prompts.len(),
        n,
        cis,
        records: count,
        per_component_detected: detected,
        per_component_included: included,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lookup::{build_lookup, LookupOptions};
    use crate::promptgen::{sample_prompts, Grammar};
    use crate::vocabulary::Vocabulary;
    use proptest::prelude::*;

    fn unit(v: &[f32]) -> Vec<f32> {
        let n = v.iter().map(|x| x * x).sum::<f32>().sqrt();
        v.iter().map(|x| x / n).collect()
    }

    fn prompts(k: usize, m: usize) -> Vec<PromptSpec> {
        let v = Vocabulary::from_names((0..30).map(|i| format!("c{i}"))).unwrap();
        sample_prompts(&v, k, m, 11, Grammar::default()).unwrap()
    }

    fn record(prompt: &PromptSpec, image: &str, mask: u32) -> ScoreRecord {
        let t = build_lookup(prompt, LookupOptions::default()).unwrap();
        score_image(prompt, &t, mask as usize, image, "").unwrap()
    }

    #[test]
    fn equal_similarities_tie_to_entry_zero() {
        let img = unit(&[1.0, 0.0]);
        let texts = vec![img.clone(); 4];
        let c = classify_subsets(&img, &texts, DEFAULT_SCALE).unwrap();
        assert_eq!(c.argmax_entry, 0);
        for p in &c.probabilities {
            assert!((p - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn dominant_logit() {
        // cosine 0.1 vs 0.9 against the image direction.
        let img = vec![1.0f32, 0.0];
        let a = vec![0.1f32, (1.0f32 - 0.01).sqrt()];
        let b = vec![0.9f32, (1.0f32 - 0.81).sqrt()];
        let c = classify_subsets(&img, &[a, b], 100.0).unwrap();
        assert_eq!(c.argmax_entry, 1);
        assert!(c.probabilities[1] > 0.999_999);
        assert!((c.probabilities.iter().sum::<f64>() - 1.0).abs() < 1e-6);
    }

    #[test]
    fn classify_rejects_bad_input() {
        let img = vec![1.0f32, 0.0];
        assert!(matches!(
            classify_subsets(&img, &[vec![1.0, 0.0, 0.0]], 1.0),
            Err(Error::DimensionMismatch { .. })
        ));
        assert!(matches!(
            classify_subsets(&img, &[vec![f32::NAN, 0.0]], 1.0),
            Err(Error::NumericalError(_))
        ));
        assert!(matches!(
            classify_subsets(&img, &[vec![2.0, 0.0]], 1.0),
            Err(Error::NotUnitNorm { row: 0, .. })
        ));
        assert!(classify_subsets(&img, &[img.clone()], 0.0).is_err());
    }

    #[test]
    fn score_arithmetic() {
        let p4 = &prompts(4, 1)[0];
        assert_eq!(record(p4, "i", 0b0111).s, 0.75);
        assert_eq!(record(p4, "i", 0).s, 0.0);
        let p8 = &prompts(8, 1)[0];
        assert_eq!(record(p8, "i", 0xff).s, 1.0);
    }

    #[test]
    fn score_rejects_foreign_table() {
        let ps = prompts(4, 2);
        let other = build_lookup(&prompts(2, 1)[0], LookupOptions::default()).unwrap();
        assert!(matches!(
            score_image(&ps[0], &other, 0, "i", ""),
            Err(Error::KMismatch { .. })
        ));
    }

    #[test]
    fn aggregate_means() {
        let ps = prompts(2, 1);
        let recs = vec![record(&ps[0], "a", 0b01), record(&ps[0], "b", 0b11)];
        let r = aggregate_cis(&recs, &ps, 2, false).unwrap();
        assert_eq!(r.cis, 0.75);
        assert_eq!(r.records, 2);
        let full: Vec<_> = (0..3).map(|i| record(&ps[0], &i.to_string(), 0b11)).collect();
        assert_eq!(aggregate_cis(&full, &ps, 3, false).unwrap().cis, 1.0);
    }

    #[test]
    fn aggregate_reports_missing_pairs() {
        let ps = prompts(2, 3);
        let recs = vec![
            record(&ps[0], "a", 1),
            record(&ps[0], "b", 1),
            record(&ps[1], "a", 1),
        ];
        match aggregate_cis(&recs, &ps, 2, false) {
            Err(Error::IncompleteRun(missing)) => {
                assert_eq!(missing.len(), 2);
                assert_eq!(missing[0].prompt_id, 1);
                assert_eq!(missing[0].found, 1);
            }
            other => panic!("unexpected {other:?}"),
        }
        let partial = aggregate_cis(&recs, &ps, 2, true).unwrap();
        assert_eq!(partial.records, 3);
        assert_eq!(partial.cis, 0.5);
    }

    #[test]
    fn tallies_follow_masks() {
        let ps = prompts(2, 1);
        let idx = ps[0].component_indices();
        let recs = vec![record(&ps[0], "a", 0b01), record(&ps[0], "b", 0b00)];
        let r = aggregate_cis(&recs, &ps, 2, false).unwrap();
        assert_eq!(r.per_component_included[&idx[0]], 2);
        assert_eq!(r.per_component_detected[&idx[0]], 1);
        assert_eq!(r.per_component_detected.get(&idx[1]), None);
        assert_eq!(r.display(), "CIS_2 = 0.250");
    }

    #[test]
    fn cis_report_format() {
        assert_eq!(format_cis(8, 0.674), "CIS_8 = 0.674");
    }

    proptest! {
        #[test]
        fn argmax_invariant_to_affine_logits(vals in proptest::collection::vec(-1.0f64..1.0, 1..64), c in 0.01f64..100.0, shift in -5.0f64..5.0) {
            let base = SimilarityVector { values: vals.clone(), scale: 1.0 };
            let scaled = SimilarityVector { values: vals.iter().map(|v| v * c).collect(), scale: 1.0 };
            let shifted = SimilarityVector { values: vals.iter().map(|v| v + shift).collect(), scale: 1.0 };
            prop_assert_eq!(base.argmax(), scaled.argmax());
            prop_assert_eq!(base.argmax(), shifted.argmax());
            let p = SimilarityVector { values: vals, scale: c }.softmax();
            prop_assert!((p.iter().sum::<f64>() - 1.0).abs() < 1e-9);
        }

        #[test]
        fn aggregation_ignores_record_order(masks in proptest::collection::vec(0u32..16, 12), perm_seed: u64) {
            use rand::seq::SliceRandom;
            let ps = prompts(4, 3);
            let mut recs: Vec<_> = masks.iter().enumerate()
                .map(|(i, &m)| record(&ps[i / 4], &format!("img{i}"), m))
                .collect();
            let a = aggregate_cis(&recs, &ps, 4, false).unwrap();
            recs.shuffle(&mut crate::rng::child(perm_seed, &[]));
            let b = aggregate_cis(&recs, &ps, 4, false).unwrap();
            prop_assert_eq!(a.cis.to_bits(), b.cis.to_bits());
            prop_assert!((0.0..=1.0).contains(&a.cis));
            for r in &recs {
                prop_assert!((r.s * 4.0).fract() == 0.0);
            }
        }
    }
}
