//! Sparsemax and softmax normalisation.
//!
//! Sparsemax is the euclidean projection of a score vector onto the
//! probability simplex. Unlike softmax it can return exact zeros, so an
//! attention distribution built with it ignores low-scoring items entirely.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A probability vector together with its support (indices of nonzero weights).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AttentionVector {
    scores: Vec<f64>,
    support: Vec<usize>,
}

impl AttentionVector {
    fn from_scores(scores: Vec<f64>) -> Self {
        let support = scores
            .iter()
            .enumerate()
            .filter(|(_, &s)| s > 0.0)
            .map(|(i, _)| i)
            .collect();
        AttentionVector { scores, support }
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn support(&self) -> &[usize] {
        &self.support
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn into_scores(self) -> Vec<f64> {
        self.scores
    }
}

fn check_input(z: &[f64]) -> Result<()> {
    if z.is_empty() {
        return Err(Error::Dimension("sparsemax of an empty vector".into()));
    }
    if let Some(i) = z.iter().position(|v| !v.is_finite()) {
        return Err(Error::Numeric(format!("non-finite score {} at index {i}", z[i])));
    }
    Ok(())
}

/// Threshold `τ` such that `max(z - τ, 0)` lies on the simplex.
fn threshold(z: &[f64]) -> f64 {
    let mut sorted = z.to_vec();
    // Stable descending sort keeps ties in index order.
    sorted.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut support_sum = sorted[0];
    let mut k = 1usize;
    for (i, &v) in sorted.iter().enumerate() {
        cumsum += v;
        let rank = (i + 1) as f64;
        if 1.0 + rank * v > cumsum {
            k = i + 1;
            support_sum = cumsum;
        }
    }
    (support_sum - 1.0) / k as f64
}

/// Projects `z` onto the probability simplex with the sort-threshold method.
pub fn sparsemax(z: &[f64]) -> Result<AttentionVector> {
    check_input(z)?;
    let tau = threshold(z);
    Ok(AttentionVector::from_scores(
        z.iter().map(|&v| (v - tau).max(0.0)).collect(),
    ))
}

/// Sparsemax over the positions where `mask` is true; masked positions get
/// exactly zero and take no part in the projection.
pub fn sparsemax_masked(z: &[f64], mask: &[bool]) -> Result<AttentionVector> {
    if z.len() != mask.len() {
        return Err(Error::Dimension(format!(
            "mask length {} differs from score length {}",
            mask.len(),
            z.len()
        )));
    }
    let valid: Vec<f64> = z.iter().zip(mask).filter(|(_, &m)| m).map(|(&v, _)| v).collect();
    if valid.is_empty() {
        return Err(Error::Input("attention over a fully masked vector".into()));
    }
    let projected = sparsemax(&valid)?.into_scores();
    let mut it = projected.into_iter();
    let scores = mask
        .iter()
        .map(|&m| if m { it.next().unwrap_or(0.0) } else { 0.0 })
        .collect();
    Ok(AttentionVector::from_scores(scores))
}

/// Vector-Jacobian product of sparsemax: given the forward output `p` and the
/// upstream gradient, returns `g_i - mean_{j∈S}(g_j)` on the support `S` and 0
/// elsewhere.
pub fn sparsemax_backward(p: &[f64], upstream: &[f64]) -> Vec<f64> {
    let (sum, count) = p
        .iter()
        .zip(upstream)
        .filter(|(&pi, _)| pi > 0.0)
        .fold((0.0, 0usize), |(s, c), (_, &g)| (s + g, c + 1));
    if count == 0 {
        return vec![0.0; p.len()];
    }
    let mean = sum / count as f64;
    p.iter()
        .zip(upstream)
        .map(|(&pi, &g)| if pi > 0.0 { g - mean } else { 0.0 })
        .collect()
}

/// Max-shifted softmax.
pub fn softmax(z: &[f64]) -> Result<Vec<f64>> {
    check_input(z)?;
    let max = z.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let exps: Vec<f64> = z.iter().map(|v| (v - max).exp()).collect();
    let total: f64 = exps.iter().sum();
    Ok(exps.into_iter().map(|e| e / total).collect())
}

/// Reference projection onto the simplex by exhaustive search over supports.
///
/// For every nonempty subset `S` the equality-constrained minimiser is
/// `p_S = z_S - (Σ z_S - 1)/|S|`, zero elsewhere; the feasible candidate with
/// the smallest `‖p - z‖²` wins. Exponential in `n`; meant for verifying
/// [`sparsemax`] on small inputs.
pub fn simplex_project_oracle(z: &[f64]) -> Result<AttentionVector> {
    check_input(z)?;
    let n = z.len();
    if n > 10 {
        return Err(Error::Scale(format!("oracle supports n ≤ 10, got {n}")));
    }
    let mut best: Option<(f64, Vec<f64>)> = None;
    for subset in 1u32..(1 << n) {
        let members: Vec<usize> = (0..n).filter(|i| subset & (1 << i) != 0).collect();
        let shift = (members.iter().map(|&i| z[i]).sum::<f64>() - 1.0) / members.len() as f64;
        let mut p = vec![0.0; n];
        for &i in &members {
            p[i] = z[i] - shift;
        }
        if p.iter().any(|&v| v < 0.0) {
            continue;
        }
        let dist: f64 = p.iter().zip(z).map(|(a, b)| (a - b) * (a - b)).sum();
        if best.as_ref().is_none_or(|(d, _)| dist < *d) {
            best = Some((dist, p));
        }
    }
    let (_, p) = best.expect("the full-support or a singleton candidate is always feasible");
    Ok(AttentionVector::from_scores(p))
}
