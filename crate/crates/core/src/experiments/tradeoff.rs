//! Cost of a sampled representation against its information: `C(k)` samples,
//! entropy `H(k)`, and the weighted sum `Q(k) = λ₁C(k) + λ₂/H(k)`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffRow {
    pub k: usize,
    pub cost: f64,
    pub entropy: f64,
    pub q: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TradeoffTable {
    pub rows: Vec<TradeoffRow>,
    pub argmin: usize,
}

impl TradeoffTable {
    /// True when successive differences of `Q` change sign at most once, from
    /// negative to positive.
    pub fn is_unimodal(&self) -> bool {
        is_unimodal(&self.rows.iter().map(|r| r.q).collect::<Vec<_>>())
    }

    pub fn argmin_is_interior(&self) -> bool {
        let first = self.rows.first().map(|r| r.k);
        let last = self.rows.last().map(|r| r.k);
        Some(self.argmin) != first && Some(self.argmin) != last
    }
}

pub fn is_unimodal(q: &[f64]) -> bool {
    let mut rising = false;
    for w in q.windows(2) {
        let d = w[1] - w[0];
        if d > 0.0 {
            rising = true;
        } else if d < 0.0 && rising {
            return false;
        }
    }
    true
}

/// Shannon entropy in bits of a level distribution.
pub fn level_entropy(probs: &[f64]) -> f64 {
    -probs.iter().filter(|&&p| p > 0.0).map(|&p| p * p.log2()).sum::<f64>()
}

/// Evaluates the trade-off for an `nx × ny` image with `probs` over its `ns`
/// grey levels at every block size in `ks`.
pub fn sampling_tradeoff(
    nx: usize,
    ny: usize,
    ns: usize,
    probs: &[f64],
    lam1: f64,
    lam2: f64,
    ks: &[usize],
) -> Result<TradeoffTable> {
    if nx == 0 || ny == 0 || ns == 0 {
        return Err(Error::Parameter("image and level counts must be positive".into()));
    }
    if probs.len() != ns {
        return Err(Error::Parameter(format!("{} probabilities for {ns} levels", probs.len())));
    }
    let total: f64 = probs.iter().sum();
    if probs.iter().any(|p| !(p.is_finite() && *p >= 0.0)) || (total - 1.0).abs() > 1e-9 {
        return Err(Error::Parameter("level probabilities must be non-negative and sum to 1".into()));
    }
    if !(lam1 > 0.0 && lam2 > 0.0) {
        return Err(Error::Parameter(format!("weights must be positive, got {lam1}, {lam2}")));
    }
    if ks.is_empty() {
        return Err(Error::Parameter("no block sizes given".into()));
    }
    let pixels = nx * ny;
    let h_levels = level_entropy(probs);
    let mut rows = Vec::with_capacity(ks.len());
    for &k in ks {
        if k == 0 || pixels % k != 0 {
            return Err(Error::Parameter(format!("block size {k} does not divide {pixels}")));
        }
        let cost = (pixels / k) as f64;
        let entropy = cost.log2() + h_levels;
        if !(entropy > 0.0) {
            return Err(Error::Degenerate(format!("entropy {entropy} at k = {k}")));
        }
        rows.push(TradeoffRow { k, cost, entropy, q: lam1 * cost + lam2 / entropy });
    }
    let argmin = rows.iter().min_by(|a, b| a.q.total_cmp(&b.q)).map(|r| r.k).unwrap_or(ks[0]);
    Ok(TradeoffTable { rows, argmin })
}

/// `1, 2, 4, …` up to `n`.
pub fn powers_of_two(n: usize) -> Vec<usize> {
    std::iter::successors(Some(1usize), |k| k.checked_mul(2)).take_while(|&k| k <= n).collect()
}
