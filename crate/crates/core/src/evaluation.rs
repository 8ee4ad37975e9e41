//! Binarization, accuracy and MAE, paired significance tests with Holm
//! correction, and evaluation reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use thiserror::Error;

use crate::agents::QueryOption;
use crate::llm::TokenUsage;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EvalError {
    #[error("response {value} is outside the scale [{min}, {max}]")]
    OutOfScale { value: f64, min: f64, max: f64 },
    #[error("scale minimum {min} must be below maximum {max}")]
    BadScale { min: f64, max: f64 },
    #[error("length mismatch: {left} vs {right}")]
    LengthMismatch { left: usize, right: usize },
    #[error("at least {needed} values are required, got {got}")]
    TooFew { needed: usize, got: usize },
    #[error("item `{item}`: {message}")]
    BadItem { item: String, message: String },
    #[error("prediction for unknown item `{0}`")]
    UnknownItem(String),
    #[error("items line {line}: {message}")]
    BadLine { line: usize, message: String },
}

/// 0 when `r` is at or below the scale midpoint, 1 above it.
pub fn binarize(r: f64, min: f64, max: f64) -> Result<u8, EvalError> {
    if min.is_nan() || max.is_nan() || min >= max {
        return Err(EvalError::BadScale { min, max });
    }
    if !(min..=max).contains(&r) {
        return Err(EvalError::OutOfScale { value: r, min, max });
    }
    Ok(u8::from(r > (min + max) / 2.0))
}

fn check_lengths(left: usize, right: usize) -> Result<(), EvalError> {
    if left != right {
        return Err(EvalError::LengthMismatch { left, right });
    }
    if left == 0 {
        return Err(EvalError::TooFew { needed: 1, got: 0 });
    }
    Ok(())
}

pub fn accuracy(preds: &[u8], golds: &[u8]) -> Result<f64, EvalError> {
    check_lengths(preds.len(), golds.len())?;
    let hits = preds.iter().zip(golds).filter(|(p, g)| p == g).count();
    Ok(hits as f64 / preds.len() as f64)
}

pub fn mae(preds: &[f64], golds: &[f64]) -> Result<f64, EvalError> {
    check_lengths(preds.len(), golds.len())?;
    let total: f64 = preds.iter().zip(golds).map(|(p, g)| (g - p).abs()).sum();
    Ok(total / preds.len() as f64)
}

/// Holm step-down adjustment, returned in input order.
pub fn holm_adjust(raw: &[f64]) -> Vec<f64> {
    let m = raw.len();
    let mut order: Vec<usize> = (0..m).collect();
    order.sort_by(|&a, &b| raw[a].total_cmp(&raw[b]).then(a.cmp(&b)));
    let mut adjusted = vec![0.0; m];
    let mut running: f64 = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        let scaled = ((m - rank) as f64 * raw[i]).min(1.0);
        running = running.max(scaled);
        adjusted[i] = running;
    }
    adjusted
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairedTest {
    pub n: usize,
    pub mean_difference: f64,
    /// `None` when the differences have zero variance.
    pub t: Option<f64>,
    pub raw_p: f64,
    pub degenerate: bool,
}

/// Two-sided paired t-test on per-item differences `a - b`.
pub fn paired_t_test(a: &[f64], b: &[f64]) -> Result<PairedTest, EvalError> {
    check_lengths(a.len(), b.len())?;
    let n = a.len();
    if n < 2 {
        return Err(EvalError::TooFew { needed: 2, got: n });
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if var <= 0.0 {
        return Ok(PairedTest {
            n,
            mean_difference: mean,
            t: None,
            raw_p: 1.0,
            degenerate: true,
        });
    }
    let t = mean / (var / n as f64).sqrt();
    let dist = StudentsT::new(0.0, 1.0, (n - 1) as f64).expect("degrees of freedom are positive");
    let p = (2.0 * dist.sf(t.abs())).min(1.0);
    Ok(PairedTest {
        n,
        mean_difference: mean,
        t: Some(t),
        raw_p: p,
        degenerate: false,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Significance {
    pub baseline: String,
    #[serde(flatten)]
    pub test: PairedTest,
    pub adj_p: f64,
    pub significant: bool,
}

/// Per-item paired tests of a method against each baseline, Holm-adjusted
/// across the baseline family. Significance requires an improvement.
pub fn paired_significance(
    method: &[u8],
    baselines: &BTreeMap<String, Vec<u8>>,
    alpha: f64,
) -> Result<Vec<Significance>, EvalError> {
    let m: Vec<f64> = method.iter().map(|&x| f64::from(x)).collect();
    let tests = baselines
        .iter()
        .map(|(name, b)| {
            let b: Vec<f64> = b.iter().map(|&x| f64::from(x)).collect();
            paired_t_test(&m, &b).map(|t| (name.clone(), t))
        })
        .collect::<Result<Vec<_>, _>>()?;
    let raw: Vec<f64> = tests.iter().map(|(_, t)| t.raw_p).collect();
    let adj = holm_adjust(&raw);
    Ok(tests
        .into_iter()
        .zip(adj)
        .map(|((baseline, test), adj_p)| Significance {
            significant: !test.degenerate && adj_p < alpha && test.mean_difference > 0.0,
            baseline,
            test,
            adj_p,
        })
        .collect())
}

/// How a chosen option maps to the binary decision.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum BinaryRule {
    /// Option values are numbers on an ordinal scale split at its midpoint.
    Scale { min: f64, max: f64 },
    /// Explicit option value to bucket map.
    Buckets { map: BTreeMap<String, u8> },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledItem {
    pub item_id: String,
    pub dataset: String,
    pub question: String,
    pub options: Vec<QueryOption>,
    pub rule: BinaryRule,
    /// Raw gold response on the item's scale, when it has one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gold_response: Option<f64>,
    pub gold_binary: u8,
    #[serde(default)]
    pub demographics: BTreeMap<String, String>,
}

impl LabeledItem {
    pub fn validate(&self) -> Result<(), EvalError> {
        let bad = |message: String| EvalError::BadItem {
            item: self.item_id.clone(),
            message,
        };
        if self.gold_binary > 1 {
            return Err(bad("gold_binary must be 0 or 1".into()));
        }
        match &self.rule {
            BinaryRule::Scale { min, max } => {
                if let Some(r) = self.gold_response {
                    if binarize(r, *min, *max)? != self.gold_binary {
                        return Err(bad(format!("gold_binary disagrees with gold_response {r}")));
                    }
                }
            }
            BinaryRule::Buckets { map } => {
                if let Some(b) = map.values().find(|b| **b > 1) {
                    return Err(bad(format!("bucket value {b} is not binary")));
                }
            }
        }
        Ok(())
    }

    /// Binary outcome of choosing `option_value`, if it is a valid option.
    pub fn binary_of(&self, option_value: &str) -> Option<u8> {
        if !self.options.iter().any(|o| o.value == option_value) {
            return None;
        }
        match &self.rule {
            BinaryRule::Scale { min, max } => option_value
                .trim()
                .parse::<f64>()
                .ok()
                .and_then(|r| binarize(r, *min, *max).ok()),
            BinaryRule::Buckets { map } => map.get(option_value).copied(),
        }
    }

    fn raw_of(&self, option_value: &str) -> Option<f64> {
        match self.rule {
            BinaryRule::Scale { .. } => option_value.trim().parse().ok(),
            BinaryRule::Buckets { .. } => None,
        }
    }
}

pub fn parse_items_jsonl(text: &str) -> Result<Vec<LabeledItem>, EvalError> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let item: LabeledItem = serde_json::from_str(line).map_err(|e| EvalError::BadLine {
            line: i + 1,
            message: e.to_string(),
        })?;
        item.validate()?;
        out.push(item);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetRow {
    pub dataset: String,
    pub n: usize,
    pub correct: usize,
    pub accuracy: f64,
    /// Mean absolute error between predicted and gold binary labels.
    pub mae_binary: f64,
    /// Mean absolute error on the raw scale over ordinal items with a raw gold.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mae_raw: Option<f64>,
    pub n_ordinal: usize,
    /// Items with no prediction; counted as wrong.
    pub abstained: usize,
    /// Items whose prediction is not a valid option; counted as wrong.
    pub invalid: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub method: String,
    pub datasets: Vec<DatasetRow>,
    pub aggregate: DatasetRow,
    /// Paired per item.
    #[serde(default)]
    pub significance: Vec<Significance>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub usage: Option<TokenUsage>,
    /// True when any item lacks a prediction.
    pub abstain_flag: bool,
}

/// Per-item correctness in item order; missing or invalid predictions are 0.
pub fn correctness(predictions: &BTreeMap<String, String>, items: &[LabeledItem]) -> Vec<u8> {
    items
        .iter()
        .map(|it| {
            let p = predictions.get(&it.item_id).and_then(|v| it.binary_of(v));
            u8::from(p == Some(it.gold_binary))
        })
        .collect()
}

#[derive(Default)]
struct Acc {
    n: usize,
    correct: usize,
    abs_err: f64,
    raw_err: f64,
    n_ordinal: usize,
    abstained: usize,
    invalid: usize,
}

impl Acc {
    fn row(&self, dataset: &str) -> DatasetRow {
        let n = self.n.max(1) as f64;
        DatasetRow {
            dataset: dataset.to_string(),
            n: self.n,
            correct: self.correct,
            accuracy: self.correct as f64 / n,
            mae_binary: self.abs_err / n,
            mae_raw: (self.n_ordinal > 0).then(|| self.raw_err / self.n_ordinal as f64),
            n_ordinal: self.n_ordinal,
            abstained: self.abstained,
            invalid: self.invalid,
        }
    }
}

pub fn evaluate_run(
    method: &str,
    predictions: &BTreeMap<String, String>,
    items: &[LabeledItem],
) -> Result<EvaluationReport, EvalError> {
    if let Some(unknown) = predictions.keys().find(|k| !items.iter().any(|i| &i.item_id == *k)) {
        return Err(EvalError::UnknownItem(unknown.clone()));
    }
    let mut per: BTreeMap<&str, Acc> = BTreeMap::new();
    let mut total = Acc::default();
    for it in items {
        let pred = predictions.get(&it.item_id);
        let binary = pred.and_then(|v| it.binary_of(v));
        for acc in [per.entry(it.dataset.as_str()).or_default(), &mut total] {
            acc.n += 1;
            match (pred, binary) {
                (None, _) => {
                    acc.abstained += 1;
                    acc.abs_err += 1.0;
                }
                (Some(_), None) => {
                    acc.invalid += 1;
                    acc.abs_err += 1.0;
                }
                (Some(v), Some(b)) => {
                    if b == it.gold_binary {
                        acc.correct += 1;
                    }
                    acc.abs_err += (f64::from(b) - f64::from(it.gold_binary)).abs();
                    if let (Some(raw), Some(gold)) = (it.raw_of(v), it.gold_response) {
                        acc.raw_err += (raw - gold).abs();
                        acc.n_ordinal += 1;
                    }
                }
            }
        }
    }
    Ok(EvaluationReport {
        method: method.to_string(),
        datasets: per.iter().map(|(d, a)| a.row(d)).collect(),
        aggregate: total.row("ALL"),
        significance: Vec::new(),
        usage: None,
        abstain_flag: total.abstained > 0,
    })
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| format!("{x:.6}"))
}

impl EvaluationReport {
    /// One row per dataset plus the aggregate.
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("method\tdataset\tn\tcorrect\taccuracy\tmae_binary\tmae_raw\tn_ordinal\tabstained\tinvalid\n");
        for r in self.datasets.iter().chain(std::iter::once(&self.aggregate)) {
            out.push_str(&format!(
                "{}\t{}\t{}\t{}\t{:.6}\t{:.6}\t{}\t{}\t{}\t{}\n",
                self.method,
                r.dataset,
                r.n,
                r.correct,
                r.accuracy,
                r.mae_binary,
                fmt_opt(r.mae_raw),
                r.n_ordinal,
                r.abstained,
                r.invalid
            ));
        }
        out
    }

    pub fn significance_tsv(&self) -> String {
        let mut out = String::from("method\tbaseline\tn\tmean_difference\tt\traw_p\tadj_p\tsignificant\tdegenerate\n");
        for s in &self.significance {
            out.push_str(&format!(
                "{}\t{}\t{}\t{:.6}\t{}\t{:.6}\t{:.6}\t{}\t{}\n",
                self.method,
                s.baseline,
                s.test.n,
                s.test.mean_difference,
                fmt_opt(s.test.t),
                s.test.raw_p,
                s.adj_p,
                s.significant,
                s.test.degenerate
            ));
        }
        out
    }
}
