use std::collections::{BTreeMap, HashMap};

use serde::{Deserialize, Serialize};

use crate::affordance::{AffordanceVector, Tag, TAG_COUNT};
use crate::error::{Error, Result};

/// One evaluated instance: ground truth `Y` and prediction `P`.
pub type PredictionRow = (AffordanceVector, AffordanceVector);

fn nonempty(preds: &[PredictionRow]) -> Result<()> {
    if preds.is_empty() {
        return Err(Error::Metric("no predictions to evaluate".into()));
    }
    Ok(())
}

fn ratio(num: u32, den: u32) -> f64 {
    if den == 0 {
        0.0
    } else {
        f64::from(num) / f64::from(den)
    }
}

/// Precision, recall and accuracy, averaged one way or another.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub precision: f64,
    pub recall: f64,
    pub accuracy: f64,
}

/// Fraction of rows with `P = Y` exactly.
pub fn exact_match_ratio(preds: &[PredictionRow]) -> Result<f64> {
    nonempty(preds)?;
    Ok(preds.iter().filter(|(y, p)| y == p).count() as f64 / preds.len() as f64)
}

/// Per-row `|Y∩P|/|P|`, `|Y∩P|/|Y|` and `|Y∩P|/|Y∪P|`, averaged over rows.
/// A row with `Y = P = ∅` scores 1 on all three; any other empty
/// denominator scores 0.
pub fn example_based(preds: &[PredictionRow]) -> Result<Scores> {
    nonempty(preds)?;
    let mut s = Scores {
        precision: 0.0,
        recall: 0.0,
        accuracy: 0.0,
    };
    for &(y, p) in preds {
        if y.is_empty() && p.is_empty() {
            s.precision += 1.0;
            s.recall += 1.0;
            s.accuracy += 1.0;
            continue;
        }
        let inter = y.intersection(p).count();
        s.precision += ratio(inter, p.count());
        s.recall += ratio(inter, y.count());
        s.accuracy += ratio(inter, y.union(p).count());
    }
    let n = preds.len() as f64;
    Ok(Scores {
        precision: s.precision / n,
        recall: s.recall / n,
        accuracy: s.accuracy / n,
    })
}

/// True positive, false positive and false negative counts for one tag.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct LabelCounts {
    pub tp: u32,
    pub fp: u32,
    pub fn_: u32,
}

impl LabelCounts {
    /// Precision, recall and Jaccard accuracy `TP/(TP+FP+FN)`; a zero
    /// denominator gives 0.
    pub fn scores(&self) -> Scores {
        Scores {
            precision: ratio(self.tp, self.tp + self.fp),
            recall: ratio(self.tp, self.tp + self.fn_),
            accuracy: ratio(self.tp, self.tp + self.fp + self.fn_),
        }
    }
}

pub fn label_counts(preds: &[PredictionRow]) -> [LabelCounts; TAG_COUNT] {
    let mut out = [LabelCounts::default(); TAG_COUNT];
    for &(y, p) in preds {
        for t in Tag::ALL {
            let c = &mut out[t.index()];
            match (y.contains(t), p.contains(t)) {
                (true, true) => c.tp += 1,
                (false, true) => c.fp += 1,
                (true, false) => c.fn_ += 1,
                (false, false) => {}
            }
        }
    }
    out
}

/// Macro average over all 13 tags of the per-tag scores.
pub fn label_based(preds: &[PredictionRow]) -> Result<Scores> {
    nonempty(preds)?;
    let per = label_counts(preds).map(|c| c.scores());
    let n = TAG_COUNT as f64;
    Ok(Scores {
        precision: per.iter().map(|s| s.precision).sum::<f64>() / n,
        recall: per.iter().map(|s| s.recall).sum::<f64>() / n,
        accuracy: per.iter().map(|s| s.accuracy).sum::<f64>() / n,
    })
}

/// `α`, `β` (missing-label weight) and `γ` (false-label weight).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AlphaParams {
    pub alpha: f64,
    pub beta: f64,
    pub gamma: f64,
}

impl AlphaParams {
    pub const fn new(alpha: f64, beta: f64, gamma: f64) -> Self {
        AlphaParams { alpha, beta, gamma }
    }

    /// The three settings reported side by side: `(β, γ)` of
    /// `(0.75, 0.25)`, `(1, 1)` and `(0.25, 0.75)`, all with `α = 1`.
    pub const STANDARD: [AlphaParams; 3] = [
        AlphaParams::new(1.0, 0.75, 0.25),
        AlphaParams::new(1.0, 1.0, 1.0),
        AlphaParams::new(1.0, 0.25, 0.75),
    ];

    pub fn validate(&self) -> Result<()> {
        let ok = |v: f64| v.is_finite() && v >= 0.0;
        if !(ok(self.alpha) && ok(self.beta) && ok(self.gamma)) {
            return Err(Error::Metric(format!("alpha parameters must be finite and ≥ 0, got {self:?}")));
        }
        Ok(())
    }

    /// Report key, e.g. `alpha=1 beta=0.75 gamma=0.25`.
    pub fn key(&self) -> String {
        format!("alpha={} beta={} gamma={}", self.alpha, self.beta, self.gamma)
    }
}

/// Score of one row: `max(0, 1 − (βM + γF)/|Y∪P|)^α`, where `M = |Y∖P|`
/// and `F = |P∖Y|`. An empty union counts as 1, so `Y = P = ∅` scores 1.
pub fn alpha_row(y: AffordanceVector, p: AffordanceVector, params: AlphaParams) -> f64 {
    let m = f64::from(y.difference(p).count());
    let f = f64::from(p.difference(y).count());
    let union = f64::from(y.union(p).count().max(1));
    // powf gives 0^0 = 1, so α = 0 scores every row 1.
    (1.0 - (params.beta * m + params.gamma * f) / union).max(0.0).powf(params.alpha)
}

pub fn alpha_score(preds: &[PredictionRow], params: AlphaParams) -> Result<f64> {
    nonempty(preds)?;
    params.validate()?;
    Ok(preds.iter().map(|&(y, p)| alpha_row(y, p, params)).sum::<f64>() / preds.len() as f64)
}

/// Every score for one evaluation run. Serialized with the column names of
/// the usual results table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    #[serde(rename = "EMR")]
    pub emr: f64,
    #[serde(rename = "Example-based Precision")]
    pub example_precision: f64,
    #[serde(rename = "Example-based Recall")]
    pub example_recall: f64,
    #[serde(rename = "Example-based Accuracy")]
    pub example_accuracy: f64,
    #[serde(rename = "Label-based Precision")]
    pub label_precision: f64,
    #[serde(rename = "Label-based Recall")]
    pub label_recall: f64,
    #[serde(rename = "Label-based Accuracy")]
    pub label_accuracy: f64,
    /// Keyed by [`AlphaParams::key`].
    #[serde(rename = "Alpha")]
    pub alpha_scores: BTreeMap<String, f64>,
    pub rows: usize,
    /// Probability threshold the predictions were cut at, if any.
    pub threshold: Option<f64>,
}

impl MetricsReport {
    pub fn compute(preds: &[PredictionRow], alphas: &[AlphaParams], threshold: Option<f64>) -> Result<Self> {
        let ex = example_based(preds)?;
        let lb = label_based(preds)?;
        let mut alpha_scores = BTreeMap::new();
        for a in alphas {
            alpha_scores.insert(a.key(), alpha_score(preds, *a)?);
        }
        Ok(MetricsReport {
            emr: exact_match_ratio(preds)?,
            example_precision: ex.precision,
            example_recall: ex.recall,
            example_accuracy: ex.accuracy,
            label_precision: lb.precision,
            label_recall: lb.recall,
            label_accuracy: lb.accuracy,
            alpha_scores,
            rows: preds.len(),
            threshold,
        })
    }
}

/// The most frequent label combination. Ties go to the lowest bit string
/// (first tag first, `'0' < '1'`).
pub fn most_frequent_combination(labels: &[AffordanceVector]) -> Result<AffordanceVector> {
    let mut counts: HashMap<AffordanceVector, usize> = HashMap::new();
    for &v in labels {
        *counts.entry(v).or_default() += 1;
    }
    counts
        .into_iter()
        .max_by(|(a, ca), (b, cb)| ca.cmp(cb).then_with(|| b.bit_string().cmp(&a.bit_string())))
        .map(|(v, _)| v)
        .ok_or_else(|| Error::Metric("no training labels for the baseline".into()))
}

/// Predicts the most frequent training combination for every test row.
/// Returns the combination and the report on that constant prediction.
pub fn mfl_baseline(
    train: &[AffordanceVector],
    test: &[AffordanceVector],
    alphas: &[AlphaParams],
) -> Result<(AffordanceVector, MetricsReport)> {
    let modal = most_frequent_combination(train)?;
    let preds: Vec<PredictionRow> = test.iter().map(|&y| (y, modal)).collect();
    Ok((modal, MetricsReport::compute(&preds, alphas, None)?))
}
