//! Run summaries and the tables rendered from them.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scoring::format_cis;

/// Written by `cis evaluate` next to its records.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    pub k: usize,
    pub m: usize,
    pub n: usize,
    pub cis: f64,
    pub scale: f64,
    pub backend_id: String,
    pub vocab_hash: String,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub model: Option<String>,
    #[serde(default)]
    pub records: usize,
    #[serde(default)]
    pub skipped: usize,
}

/// Written by `metrics is` and `metrics fid`; a run may carry either or both.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsSummary {
    pub model: String,
    pub k: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_mean: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub is_std: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub fid: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub splits: Option<usize>,
    #[serde(default)]
    pub n_images: usize,
    #[serde(default)]
    pub backend_id: String,
    pub vocab_hash: String,
}

fn single_vocab<'a>(hashes: impl Iterator<Item = &'a str>) -> Result<()> {
    let set: BTreeSet<&str> = hashes.collect();
    if set.len() > 1 {
        return Err(Error::ProtocolError(format!(
            "refusing to combine runs over different vocabularies: {}",
            set.into_iter().collect::<Vec<_>>().join(", ")
        )));
    }
    Ok(())
}

pub fn format_is(mean: f64, std: f64) -> String {
    format!("{mean:.2} ± {std:.2}")
}

pub fn format_fid(fid: f64) -> String {
    format!("{fid:.2}")
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1Row {
    pub model: String,
    /// K → (mean, std).
    pub is: BTreeMap<usize, (f64, f64)>,
    pub fid: BTreeMap<usize, f64>,
    /// Strictly decreasing over the K values present; `None` with fewer than two.
    pub is_decreasing: Option<bool>,
    /// Strictly increasing over the K values present; `None` with fewer than two.
    pub fid_increasing: Option<bool>,
}

/// Percent changes averaged over models. `step` averages the relative
/// change between consecutive K values; `endpoint` compares the largest K
/// with the smallest.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Deltas {
    pub is_step_pct: f64,
    pub is_endpoint_pct: f64,
    pub fid_step_pct: f64,
    pub fid_endpoint_pct: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Table1 {
    pub ks: Vec<usize>,
    pub rows: Vec<Table1Row>,
    pub deltas: Option<Deltas>,
}

fn monotone(values: &[f64], decreasing: bool) -> Option<bool> {
    (values.len() >= 2).then(|| {
        values
            .windows(2)
            .all(|w| if decreasing { w[1] < w[0] } else { w[1] > w[0] })
    })
}

fn pct(from: f64, to: f64) -> f64 {
    100.0 * (to - from) / from
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn deltas_of(series: &[Vec<f64>]) -> Option<(f64, f64)> {
    let usable: Vec<&Vec<f64>> = series.iter().filter(|s| s.len() >= 2).collect();
    if usable.is_empty() {
        return None;
    }
    let step: Vec<f64> = usable
        .iter()
        .map(|s| mean(&s.windows(2).map(|w| pct(w[0], w[1])).collect::<Vec<_>>()))
        .collect();
    let end: Vec<f64> = usable.iter().map(|s| pct(s[0], s[s.len() - 1])).collect();
    Some((mean(&step), mean(&end)))
}

/// Builds the IS/FID table; rows keep the order in which models first
/// appear, and repeated (model, K) entries merge with later values winning.
pub fn table1(summaries: &[MetricsSummary]) -> Result<Table1> {
    single_vocab(summaries.iter().map(|s| s.vocab_hash.as_str()))?;
    let mut order: Vec<String> = Vec::new();
    let mut rows: BTreeMap<String, Table1Row> = BTreeMap::new();
    for s in summaries {
        let row = rows.entry(s.model.clone()).or_insert_with(|| {
            order.push(s.model.clone());
            Table1Row {
                model: s.model.clone(),
                is: BTreeMap::new(),
                fid: BTreeMap::new(),
                is_decreasing: None,
                fid_increasing: None,
            }
        });
        if let Some(m) = s.is_mean {
            row.is.insert(s.k, (m, s.is_std.unwrap_or(0.0)));
        }
        if let Some(f) = s.fid {
            row.fid.insert(s.k, f);
        }
    }
    let ks: Vec<usize> = summaries
        .iter()
        .map(|s| s.k)
        .collect::<BTreeSet<_>>()
        .into_iter()
        .collect();
    let mut ordered = Vec::with_capacity(order.len());
    let (mut is_series, mut fid_series) = (Vec::new(), Vec::new());
    for name in order {
        let mut row = rows.remove(&name).expect("row exists");
        let is: Vec<f64> = row.is.values().map(|v| v.0).collect();
        let fid: Vec<f64> = row.fid.values().copied().collect();
        row.is_decreasing = monotone(&is, true);
        row.fid_increasing = monotone(&fid, false);
        is_series.push(is);
        fid_series.push(fid);
        ordered.push(row);
    }
    let deltas = match (deltas_of(&is_series), deltas_of(&fid_series)) {
        (None, None) => None,
        (i, f) => Some(Deltas {
            is_step_pct: i.map_or(f64::NAN, |v| v.0),
            is_endpoint_pct: i.map_or(f64::NAN, |v| v.1),
            fid_step_pct: f.map_or(f64::NAN, |v| v.0),
            fid_endpoint_pct: f.map_or(f64::NAN, |v| v.1),
        }),
    };
    Ok(Table1 {
        ks,
        rows: ordered,
        deltas,
    })
}

fn flag(v: Option<bool>) -> &'static str {
    match v {
        Some(true) => "yes",
        Some(false) => "no",
        None => "",
    }
}

impl Table1 {
    fn has_trends(&self) -> bool {
        self.ks.len() >= 2
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("model");
        for k in &self.ks {
            write!(out, ",IS K={k}").unwrap();
        }
        for k in &self.ks {
            write!(out, ",FID K={k}").unwrap();
        }
        if self.has_trends() {
            out.push_str(",IS decreasing,FID increasing");
        }
        out.push('\n');
        for row in &self.rows {
            out.push_str(&row.model);
            for k in &self.ks {
                out.push(',');
                if let Some(&(m, s)) = row.is.get(k) {
                    out.push_str(&format_is(m, s));
                }
            }
            for k in &self.ks {
                out.push(',');
                if let Some(&f) = row.fid.get(k) {
                    out.push_str(&format_fid(f));
                }
            }
            if self.has_trends() {
                write!(out, ",{},{}", flag(row.is_decreasing), flag(row.fid_increasing)).unwrap();
            }
            out.push('\n');
        }
        out
    }

    /// One line per delta, or an empty string when no model spans two K.
    pub fn deltas_text(&self) -> String {
        match self.deltas {
            Some(d) => format!(
                "IS change per K step: {:+.2}% (first to last K: {:+.2}%)\n\
                 FID change per K step: {:+.2}% (first to last K: {:+.2}%)\n",
                d.is_step_pct, d.is_endpoint_pct, d.fid_step_pct, d.fid_endpoint_pct
            ),
            None => String::new(),
        }
    }

    pub fn to_json(&self) -> Result<String> {
        let rows: Vec<serde_json::Value> = self
            .rows
            .iter()
            .map(|r| {
                serde_json::json!({
                    "model": r.model,
                    "is": r.is.iter().map(|(k, (m, s))| serde_json::json!({"k": k, "mean": m, "std": s})).collect::<Vec<_>>(),
                    "fid": r.fid.iter().map(|(k, f)| serde_json::json!({"k": k, "fid": f})).collect::<Vec<_>>(),
                    "is_decreasing": r.is_decreasing,
                    "fid_increasing": r.fid_increasing,
                })
            })
            .collect();
        let v = serde_json::json!({ "ks": self.ks, "rows": rows, "deltas": self.deltas });
        Ok(serde_json::to_string_pretty(&v)?)
    }
}

/// CIS per model and K: a CSV plus one "CIS_K = x" line per run.
pub fn cis_summary(runs: &[RunSummary]) -> Result<(String, String)> {
    single_vocab(runs.iter().map(|r| r.vocab_hash.as_str()))?;
    let mut sorted: Vec<&RunSummary> = runs.iter().collect();
    sorted.sort_by(|a, b| (a.model.as_deref(), a.k).cmp(&(b.model.as_deref(), b.k)));
    let mut csv = String::from("model,k,m,n,cis\n");
    let mut text = String::new();
    for r in sorted {
        let model = r.model.as_deref().unwrap_or("");
        writeln!(csv, "{model},{},{},{},{:.6}", r.k, r.m, r.n, r.cis).unwrap();
        if model.is_empty() {
            writeln!(text, "{}", format_cis(r.k, r.cis)).unwrap();
        } else {
            writeln!(text, "{model}: {}", format_cis(r.k, r.cis)).unwrap();
        }
    }
    Ok((csv, text))
}

/// Original and shuffled-order CIS side by side.
pub fn invariance_table(k: usize, original: f64, shuffled: f64) -> String {
    format!("set,CIS_{k}\noriginal,{original:.3}\nshuffled,{shuffled:.3}\n")
}
