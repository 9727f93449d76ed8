//! From EDU representations to aspect-specific sentence vectors, the two
//! prediction heads, the orthogonality penalty on EDU attention, and the
//! combined training loss.

use serde::{Deserialize, Serialize};

use crate::autodiff::{Graph, Var};
use crate::config::{Lambdas, OrthNorm};
use crate::error::{Error, Result};
use crate::labels::Polarity;
use crate::sparsemax;
use crate::tensor::Tensor;

/// EDU-level sparse attention. `edus` is `J×(K·D)` (row `j` holds the `K`
/// aspect-specific representations of EDU `j`); the result `β` is `K×J`.
pub fn edu_attention(g: &mut Graph, edus: Var, w_s: Var, mask: &[bool], num_aspects: usize) -> Result<Var> {
    let j = g.value(edus).rows();
    if j == 0 || mask.len() != j {
        return Err(Error::Dimension(format!("{j} EDUs with a mask of length {}", mask.len())));
    }
    let d = g.value(edus).cols() / num_aspects;
    let flat = g.reshape(edus, j * num_aspects, d)?;
    let scores = g.matmul(flat, w_s)?;
    let grid = g.reshape(scores, j, num_aspects)?;
    let by_aspect = g.transpose(grid);
    g.sparsemax_rows(by_aspect, mask)
}

/// `s^k = Σ_j β[k,j]·e_j^k`; `K×D`.
pub fn sentence_representation(g: &mut Graph, edus: Var, beta: Var) -> Result<Var> {
    g.grouped_weighted_sum(beta, edus)
}

/// `‖MᵀM − I‖` with `M = βᵀ`, recorded on the graph.
pub fn orth_regularization(g: &mut Graph, beta: Var, norm: OrthNorm) -> Result<Var> {
    let k = g.value(beta).rows();
    let beta_t = g.transpose(beta);
    let gram = g.matmul(beta, beta_t)?;
    let eye = g.constant(Tensor::eye(k));
    let diff = g.sub(gram, eye)?;
    let sq = g.mul(diff, diff)?;
    let total = g.sum(sq);
    Ok(match norm {
        OrthNorm::Frobenius => g.sqrt(total),
        OrthNorm::FrobeniusSquared => total,
    })
}

/// The orthogonality penalty of a `J×K` EDU-by-aspect attention matrix.
pub fn orth_penalty(m: &Tensor, norm: OrthNorm) -> Result<f64> {
    let gram = m.transpose().matmul(m)?;
    let k = gram.rows();
    let mut sq = 0.0;
    for i in 0..k {
        for j in 0..k {
            let target = if i == j { 1.0 } else { 0.0 };
            let d = gram.get(i, j) - target;
            sq += d * d;
        }
    }
    Ok(match norm {
        OrthNorm::Frobenius => sq.sqrt(),
        OrthNorm::FrobeniusSquared => sq,
    })
}

/// Sentiment logits `S·W + b`; `K×3`.
pub fn sentiment_logits(g: &mut Graph, sentences: Var, w: Var, b: Var) -> Result<Var> {
    let z = g.matmul(sentences, w)?;
    g.add_row(z, b)
}

/// Aspect-presence logits `S·w + b`; `K×1`.
pub fn aspect_logits(g: &mut Graph, sentences: Var, w: Var, b: Var) -> Result<Var> {
    let z = g.matmul(sentences, w)?;
    g.add_row(z, b)
}

/// Softmax over {negative, neutral, positive}.
pub fn predict_sentiment(logits: &[f64]) -> Result<[f64; 3]> {
    let p = sparsemax::softmax(logits)?;
    p.try_into()
        .map_err(|v: Vec<f64>| Error::Dimension(format!("expected 3 sentiment logits, got {}", v.len())))
}

pub fn predict_aspect_presence(logit: f64) -> f64 {
    if logit >= 0.0 {
        1.0 / (1.0 + (-logit).exp())
    } else {
        let e = logit.exp();
        e / (1.0 + e)
    }
}

/// Graph nodes the loss needs from one sentence's forward pass.
#[derive(Clone, Copy, Debug)]
pub struct SentenceHeads {
    /// `K×3`.
    pub sentiment_logits: Var,
    /// `K×1`.
    pub aspect_logits: Var,
    /// Scalar orthogonality penalty.
    pub orth: Var,
}

/// The loss terms of one batch.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub sentiment: f64,
    pub aspect: f64,
    pub orth: f64,
    pub total: f64,
    pub lambdas: Lambdas,
}

/// Unnormalised loss sums of one sentence.
#[derive(Clone, Copy, Debug)]
pub struct SentenceLossTerms {
    /// `−Σ log p(gold polarity)` over the sentence's gold aspects.
    pub neg_log_likelihood: Var,
    /// Binary cross-entropy summed over all `K` aspects.
    pub aspect_bce: Var,
    pub orth: Var,
}

pub fn sentence_loss_terms(
    g: &mut Graph,
    heads: &SentenceHeads,
    labels: &[(usize, Polarity)],
    num_aspects: usize,
) -> Result<SentenceLossTerms> {
    if labels.is_empty() {
        return Err(Error::Data("sentence without a gold aspect".into()));
    }
    if let Some((a, _)) = labels.iter().find(|(a, _)| *a >= num_aspects) {
        return Err(Error::Data(format!("aspect id {a} out of range")));
    }
    let log_probs = g.log_softmax_rows(heads.sentiment_logits);
    let index: Vec<(usize, usize)> = labels.iter().map(|&(a, p)| (a, p.index())).collect();
    let picked = g.pick(log_probs, &index)?;
    let ll = g.sum(picked);
    let neg_log_likelihood = g.scale(ll, -1.0);
    let mut targets = vec![0.0; num_aspects];
    for &(a, _) in labels {
        targets[a] = 1.0;
    }
    let bce = g.bce_with_logits(heads.aspect_logits, &targets)?;
    let aspect_bce = g.sum(bce);
    Ok(SentenceLossTerms {
        neg_log_likelihood,
        aspect_bce,
        orth: heads.orth,
    })
}

/// Batch-level normalisers of the loss terms.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct LossScale {
    /// (sentence, gold aspect) pairs in the batch.
    pub pairs: usize,
    pub sentences: usize,
    pub num_aspects: usize,
}

impl LossScale {
    pub fn of(gold: &[Vec<(usize, Polarity)>], num_aspects: usize) -> Result<Self> {
        if gold.is_empty() {
            return Err(Error::Data("empty batch".into()));
        }
        if gold.iter().any(Vec::is_empty) {
            return Err(Error::Data("sentence without a gold aspect".into()));
        }
        Ok(LossScale {
            pairs: gold.iter().map(Vec::len).sum(),
            sentences: gold.len(),
            num_aspects,
        })
    }
}

/// One sentence's share of the batch loss, and its (unweighted) shares of
/// the three batch terms.
pub fn weighted_sentence_loss(
    g: &mut Graph,
    terms: &SentenceLossTerms,
    scale: LossScale,
    lambdas: Lambdas,
) -> Result<(Var, [f64; 3])> {
    let n = scale.sentences as f64;
    let sentiment = g.scale(terms.neg_log_likelihood, 1.0 / scale.pairs as f64);
    let aspect = g.scale(terms.aspect_bce, 1.0 / (n * scale.num_aspects as f64));
    let orth = g.scale(terms.orth, 1.0 / n);
    let parts = [g.scalar(sentiment), g.scalar(aspect), g.scalar(orth)];
    let ws = g.scale(sentiment, lambdas.sentiment);
    let wa = g.scale(aspect, lambdas.aspect);
    let wo = g.scale(orth, lambdas.orth);
    Ok((g.sum_all(&[ws, wa, wo])?, parts))
}

impl LossBreakdown {
    /// Assembles the breakdown from summed per-sentence shares; `total` is
    /// the λ-weighted sum of the parts.
    pub fn from_parts(parts: [f64; 3], lambdas: Lambdas) -> Self {
        let [sentiment, aspect, orth] = parts;
        LossBreakdown {
            sentiment,
            aspect,
            orth,
            total: lambdas.sentiment * sentiment + lambdas.aspect * aspect + lambdas.orth * orth,
            lambdas,
        }
    }
}

pub(crate) fn check_lambdas(lambdas: Lambdas) -> Result<()> {
    if [lambdas.sentiment, lambdas.aspect, lambdas.orth].iter().any(|l| l.is_nan() || *l < 0.0) {
        return Err(Error::Config("loss weights must be ≥ 0".into()));
    }
    Ok(())
}

/// Combined objective `λ1·J + λ2·U + λ3·R`:
/// `J` is the mean sentiment cross-entropy over (sentence, gold aspect)
/// pairs, `U` the mean binary cross-entropy of aspect presence over all `K`
/// aspects of every sentence, and `R` the mean per-sentence orthogonality
/// penalty.
pub fn total_loss(
    g: &mut Graph,
    heads: &[SentenceHeads],
    gold: &[Vec<(usize, Polarity)>],
    num_aspects: usize,
    lambdas: Lambdas,
) -> Result<(Var, LossBreakdown)> {
    if heads.is_empty() || heads.len() != gold.len() {
        return Err(Error::Dimension(format!(
            "{} sentence outputs for {} label sets",
            heads.len(),
            gold.len()
        )));
    }
    check_lambdas(lambdas)?;
    let scale = LossScale::of(gold, num_aspects)?;
    let mut losses = Vec::with_capacity(heads.len());
    let mut parts = [0.0; 3];
    for (h, labels) in heads.iter().zip(gold) {
        let terms = sentence_loss_terms(g, h, labels, num_aspects)?;
        let (loss, p) = weighted_sentence_loss(g, &terms, scale, lambdas)?;
        losses.push(loss);
        parts.iter_mut().zip(p).for_each(|(a, b)| *a += b);
    }
    let total = g.sum_all(&losses)?;
    Ok((total, LossBreakdown::from_parts(parts, lambdas)))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::ParamStore;

    #[test]
    fn edu_attention_cases() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let w = g.constant(Tensor::filled(&[1, 1], 1.0));
        let single = g.constant(Tensor::filled(&[1, 1], -3.0));
        let b = edu_attention(&mut g, single, w, &[true], 1).unwrap();
        assert_eq!(g.value(b).data(), &[1.0]);

        let two = g.constant(Tensor::new(vec![2, 1], vec![2.0, 0.0]).unwrap());
        let b = edu_attention(&mut g, two, w, &[true, true], 1).unwrap();
        assert_eq!(g.value(b).data(), &[1.0, 0.0]);

        let same = g.constant(Tensor::filled(&[3, 4], 0.2));
        let w2 = g.constant(Tensor::new(vec![2, 1], vec![1.0, 2.0]).unwrap());
        let b = edu_attention(&mut g, same, w2, &[true; 3], 2).unwrap();
        assert!(g.value(b).data().iter().all(|v| (v - 1.0 / 3.0).abs() < 1e-15));
    }

    #[test]
    fn sentence_representation_cases() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let edus = g.constant(Tensor::from_rows(&[vec![1.0, 1.0], vec![0.0, 0.0], vec![5.0, -7.0]]).unwrap());
        let beta = g.constant(Tensor::row(vec![0.0, 0.0, 1.0]));
        let s = sentence_representation(&mut g, edus, beta).unwrap();
        assert_eq!(g.value(s).data(), &[5.0, -7.0]);
        let beta = g.constant(Tensor::row(vec![0.75, 0.25, 0.0]));
        let s = sentence_representation(&mut g, edus, beta).unwrap();
        assert_eq!(g.value(s).data(), &[0.75, 0.75]);
    }

    #[test]
    fn orth_penalty_cases() {
        let eye = Tensor::eye(3);
        assert_eq!(orth_penalty(&eye, OrthNorm::Frobenius).unwrap(), 0.0);
        let shared = Tensor::row(vec![1.0, 1.0]);
        assert!((orth_penalty(&shared, OrthNorm::Frobenius).unwrap() - 2f64.sqrt()).abs() < 1e-12);
        assert_eq!(orth_penalty(&shared, OrthNorm::FrobeniusSquared).unwrap(), 2.0);
        let uniform = Tensor::new(vec![2, 1], vec![0.5, 0.5]).unwrap();
        assert!((orth_penalty(&uniform, OrthNorm::Frobenius).unwrap() - 0.5).abs() < 1e-15);
    }

    #[test]
    fn orth_graph_matches_plain() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let m = Tensor::from_rows(&[vec![0.7, 0.1], vec![0.3, 0.0], vec![0.0, 0.9]]).unwrap();
        let beta = g.constant(m.transpose());
        for norm in [OrthNorm::Frobenius, OrthNorm::FrobeniusSquared] {
            let r = orth_regularization(&mut g, beta, norm).unwrap();
            assert!((g.scalar(r) - orth_penalty(&m, norm).unwrap()).abs() < 1e-15);
        }
    }

    #[test]
    fn heads() {
        assert_eq!(predict_sentiment(&[0.0; 3]).unwrap(), [1.0 / 3.0; 3]);
        let p = predict_sentiment(&[0.0, 3f64.ln(), 0.0]).unwrap();
        assert!((p[0] - 0.2).abs() < 1e-15 && (p[1] - 0.6).abs() < 1e-15);
        assert_eq!(predict_aspect_presence(0.0), 0.5);
        assert!((predict_aspect_presence(3f64.ln()) - 0.75).abs() < 1e-15);
        assert!(predict_aspect_presence(30.0) < 1.0 && predict_aspect_presence(-40.0) > 0.0);
    }

    fn heads_from(g: &mut Graph, sent: Tensor, asp: Tensor, orth: f64) -> SentenceHeads {
        SentenceHeads {
            sentiment_logits: g.constant(sent),
            aspect_logits: g.constant(asp),
            orth: g.constant(Tensor::scalar(orth)),
        }
    }

    #[test]
    fn uniform_prediction_gives_ln3() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let h = heads_from(&mut g, Tensor::zeros(&[2, 3]), Tensor::zeros(&[2, 1]), 0.0);
        let gold = vec![vec![(0, Polarity::Positive), (1, Polarity::Negative)]];
        let (_, b) = total_loss(&mut g, &[h], &gold, 2, Lambdas::default()).unwrap();
        assert!((b.sentiment - 3f64.ln()).abs() < 1e-12);
        assert!((b.aspect - 2f64.ln()).abs() < 1e-12);
        assert_eq!(b.total, 1.0 * b.sentiment + 1.0 * b.aspect + 0.1 * b.orth);
    }

    #[test]
    fn perfect_predictions_leave_only_aspect_term() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let big = 800.0;
        let h = heads_from(
            &mut g,
            Tensor::from_rows(&[vec![0.0, 0.0, big], vec![big, 0.0, 0.0]]).unwrap(),
            Tensor::new(vec![2, 1], vec![3.0, 3.0]).unwrap(),
            0.0,
        );
        let gold = vec![vec![(0, Polarity::Positive), (1, Polarity::Negative)]];
        let (_, b) = total_loss(&mut g, &[h], &gold, 2, Lambdas::default()).unwrap();
        assert_eq!(b.sentiment, 0.0);
        assert_eq!(b.orth, 0.0);
        assert_eq!(b.total, b.aspect);
    }

    #[test]
    fn non_gold_aspects_do_not_affect_sentiment_term() {
        let store = ParamStore::new();
        let gold = vec![vec![(0, Polarity::Neutral)]];
        let run = |other: f64| {
            let mut g = Graph::new(&store);
            let h = heads_from(
                &mut g,
                Tensor::from_rows(&[vec![0.1, 0.4, -0.2], vec![other, -other, 2.0 * other]]).unwrap(),
                Tensor::zeros(&[2, 1]),
                0.3,
            );
            total_loss(&mut g, &[h], &gold, 2, Lambdas::default()).unwrap().1
        };
        assert_eq!(run(0.0).sentiment, run(9.0).sentiment);
    }

    #[test]
    fn loss_errors() {
        let store = ParamStore::new();
        let mut g = Graph::new(&store);
        let h = heads_from(&mut g, Tensor::zeros(&[2, 3]), Tensor::zeros(&[2, 1]), 0.0);
        assert!(matches!(
            total_loss(&mut g, &[h], &[vec![]], 2, Lambdas::default()),
            Err(Error::Data(_))
        ));
    }
}
