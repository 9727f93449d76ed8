//! Accuracy, per-class and macro F1, and the confusion matrix over
//! (sentence, gold aspect) pairs.

use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::EncodedSample;
use crate::encoder::ModelParams;
use crate::error::{Error, Result};
use crate::labels::Polarity;
use crate::model::{self, PairPrediction};

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassMetrics {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Gold pairs of this class.
    pub support: usize,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PerClass {
    pub negative: ClassMetrics,
    pub neutral: ClassMetrics,
    pub positive: ClassMetrics,
}

impl PerClass {
    pub fn get(&self, p: Polarity) -> &ClassMetrics {
        match p {
            Polarity::Negative => &self.negative,
            Polarity::Neutral => &self.neutral,
            Polarity::Positive => &self.positive,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub pairs: usize,
    pub accuracy: f64,
    pub macro_f1: f64,
    pub per_class: PerClass,
    /// `confusion[gold][predicted]`, classes ordered negative, neutral, positive.
    pub confusion: [[usize; 3]; 3],
}

/// Precision, recall, and F1 are 0 whenever their denominator is 0, so a
/// class absent from both gold and predictions scores F1 = 0.
pub fn evaluate_pairs(pairs: &[(Polarity, Polarity)]) -> Result<EvalReport> {
    if pairs.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let mut confusion = [[0usize; 3]; 3];
    for &(gold, pred) in pairs {
        confusion[gold.index()][pred.index()] += 1;
    }
    let correct: usize = (0..3).map(|c| confusion[c][c]).sum();
    let ratio = |a: usize, b: usize| if b == 0 { 0.0 } else { a as f64 / b as f64 };
    let class = |c: usize| {
        let tp = confusion[c][c];
        let gold: usize = confusion[c].iter().sum();
        let predicted: usize = (0..3).map(|g| confusion[g][c]).sum();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, gold);
        let f1 = if precision + recall == 0.0 {
            0.0
        } else {
            2.0 * precision * recall / (precision + recall)
        };
        ClassMetrics {
            precision,
            recall,
            f1,
            support: gold,
        }
    };
    let per_class = PerClass {
        negative: class(0),
        neutral: class(1),
        positive: class(2),
    };
    let macro_f1 = (per_class.negative.f1 + per_class.neutral.f1 + per_class.positive.f1) / 3.0;
    Ok(EvalReport {
        pairs: pairs.len(),
        accuracy: ratio(correct, pairs.len()),
        macro_f1,
        per_class,
        confusion,
    })
}

pub fn evaluate_predictions(preds: &[PairPrediction]) -> Result<EvalReport> {
    let pairs: Vec<(Polarity, Polarity)> = preds.iter().map(|p| (p.gold, p.predicted)).collect();
    evaluate_pairs(&pairs)
}

/// Predicts every gold pair of `samples` and scores the predictions.
pub fn evaluate(p: &ModelParams, samples: &[EncodedSample]) -> Result<(EvalReport, Vec<PairPrediction>)> {
    if samples.is_empty() {
        return Err(Error::Input("nothing to evaluate".into()));
    }
    let preds = model::predict_pairs(p, samples)?;
    Ok((evaluate_predictions(&preds)?, preds))
}

/// One line of a prediction dump.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub sentence: usize,
    pub aspect: String,
    pub gold: Polarity,
    pub predicted: Polarity,
    pub confidence: f64,
    pub probabilities: [f64; 3],
}

impl PredictionRecord {
    pub fn new(p: &PairPrediction, aspects: &[String]) -> Self {
        PredictionRecord {
            sentence: p.sentence,
            aspect: aspects[p.aspect].clone(),
            gold: p.gold,
            predicted: p.predicted,
            confidence: p.confidence(),
            probabilities: p.probabilities,
        }
    }
}

/// Writes predictions as JSONL, one gold pair per line.
pub fn write_predictions(path: &Path, preds: &[PairPrediction], aspects: &[String]) -> Result<()> {
    let mut out = String::new();
    for p in preds {
        out.push_str(&serde_json::to_string(&PredictionRecord::new(p, aspects)).expect("record serializes"));
        out.push('\n');
    }
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
}
