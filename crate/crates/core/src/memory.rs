//! Memory block: global aggregation against `K` stored patterns and
//! chronological top-K memorization.
//!
//! Retrieval is differentiable. Writes are rule-based mutations of the bank
//! made outside the tape, so the bank never receives optimizer updates.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::concepts::Stage;
use crate::error::{MtmdError, Result};
use crate::numerics::tensor::norm;
use crate::numerics::{l2_normalize_rows, Tape, Tensor, Var, EPS};

/// `K × L` matrix of unit-norm memory items.
#[derive(Debug, Clone, PartialEq)]
pub struct MemoryBank {
    pub stage: Stage,
    items: Tensor,
}

impl MemoryBank {
    /// Rows drawn i.i.d. standard normal, then L2-normalized.
    pub fn init(k: usize, width: usize, seed: u64, stage: Stage) -> Result<Self> {
        if k == 0 || width == 0 {
            return Err(MtmdError::Config("memory bank needs K >= 1 and L >= 1".into()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let data: Vec<f64> = (0..k * width).map(|_| StandardNormal.sample(&mut rng)).collect();
        let raw = Tensor::new(vec![k, width], data)?;
        Ok(MemoryBank {
            stage,
            items: l2_normalize_rows(&raw, EPS)?,
        })
    }

    /// Wraps existing items (e.g. from a checkpoint); rows must be unit norm.
    pub fn from_items(items: Tensor, stage: Stage) -> Result<Self> {
        let (k, _) = items.dims2()?;
        if k == 0 {
            return Err(MtmdError::Config("memory bank needs K >= 1".into()));
        }
        Ok(MemoryBank { stage, items })
    }

    pub fn items(&self) -> &Tensor {
        &self.items
    }

    pub fn k(&self) -> usize {
        self.items.rows()
    }

    pub fn width(&self) -> usize {
        self.items.cols()
    }

    /// Largest deviation of a row norm from 1.
    pub fn max_norm_deviation(&self) -> f64 {
        (0..self.k())
            .map(|r| (norm(self.items.row(r)) - 1.0).abs())
            .fold(0.0, f64::max)
    }

    /// Puts the bank on the tape as a constant.
    pub fn on_tape(&self, tape: &mut Tape) -> Var {
        tape.constant(self.items.clone())
    }
}

/// Tape handles of a retrieval.
#[derive(Debug, Clone, Copy)]
pub struct RetrievalState {
    /// `[N_s × K]` query/item correlations.
    pub correlations: Var,
    /// `[N_s × K]` match probabilities, each column summing to 1 over stocks.
    pub match_probs: Var,
    /// `[N_s × L]` refined features.
    pub refined: Var,
}

/// `b = Ĥ·Mᵀ`, `v = softmax over stocks (per item)`, `q = Ĥ ⊙ (v·M)`.
pub fn global_aggregate(tape: &mut Tape, queries: Var, bank: Var) -> Result<RetrievalState> {
    let (_, l) = tape.value(queries).dims2()?;
    let (_, lb) = tape.value(bank).dims2()?;
    if l != lb {
        return Err(MtmdError::shape(
            "global_aggregate",
            tape.value(queries).shape(),
            tape.value(bank).shape(),
        ));
    }
    let bank_t = tape.transpose(bank)?;
    let correlations = tape.matmul(queries, bank_t)?;
    let match_probs = tape.softmax(correlations, 0)?;
    let retrieved = tape.matmul(match_probs, bank)?;
    let refined = tape.mul(queries, retrieved)?;
    Ok(RetrievalState {
        correlations,
        match_probs,
        refined,
    })
}

/// What a write did.
#[derive(Debug, Clone, PartialEq)]
pub struct WriteReport {
    /// `s_i` for every stock.
    pub scores: Vec<f64>,
    /// Stock written into row `k`, for `k < min(K, N_s)`.
    pub order: Vec<usize>,
}

/// Per-stock max-renormalized match sums `s_i = Σ_k v_ik / max_k v_ik`.
pub fn match_scores(match_probs: &Tensor) -> Result<Vec<f64>> {
    let (n, _) = match_probs.dims2()?;
    Ok((0..n)
        .map(|i| {
            let row = match_probs.row(i);
            let max = row.iter().copied().fold(0.0, f64::max);
            if max > 0.0 {
                row.iter().map(|v| v / max).sum()
            } else {
                0.0
            }
        })
        .collect())
}

/// Writes the top-`K` stocks by match score into the bank, row `k` taking
/// the `k`-th best stock: `M_k ← L2(M_k + s·ĥ)`. Rows beyond `N_s` are left
/// untouched; an update that vanishes keeps the previous row.
pub fn memorize(bank: &mut MemoryBank, queries: &Tensor, match_probs: &Tensor) -> Result<WriteReport> {
    let (n, l) = queries.dims2()?;
    let (np, kp) = match_probs.dims2()?;
    if np != n || kp != bank.k() || l != bank.width() {
        return Err(MtmdError::shape("memorize", queries.shape(), match_probs.shape()));
    }
    let scores = match_scores(match_probs)?;
    let mut order: Vec<usize> = (0..n).collect();
    // Stable sort keeps lower stock indices first on ties.
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]));
    order.truncate(bank.k().min(n));

    for (k, &i) in order.iter().enumerate() {
        let s = scores[i];
        let updated: Vec<f64> = bank
            .items
            .row(k)
            .iter()
            .zip(queries.row(i))
            .map(|(m, q)| m + s * q)
            .collect();
        let nrm = norm(&updated);
        if nrm > EPS {
            for (dst, v) in bank.items.row_mut(k).iter_mut().zip(&updated) {
                *dst = v / nrm;
            }
        }
    }
    Ok(WriteReport { scores, order })
}
