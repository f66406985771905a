//! Probability transforms, divergences, and the training losses.
//!
//! Losses come in two flavours: tape composites (differentiable, used by
//! training and attacks) and plain slice functions (used by evaluation and
//! the transferability analysis). The per-timestep cross-entropy treats each
//! timestep's logits as its own classifier and averages the losses; the
//! temporal-ensemble loss adds a per-timestep KL pull between clean and
//! adversarial prediction distributions.

use crate::error::{Error, Result};
use crate::snn::aggregate_output;
use crate::tape::{Tape, Var};
use crate::tensor::softmax_row_into;

/// Default lower clamp applied inside logs: spiking sub-networks readily
/// produce near-zero probabilities.
pub const DEFAULT_KL_EPSILON: f64 = 1e-12;

/// Argument order of the regularizing KL term.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum KlDirection {
    /// KL(clean || adversarial), the default.
    RefFirst,
    /// KL(adversarial || clean), ablation switch.
    AdvFirst,
}

/// Weights and numeric guards for the ensemble loss.
#[derive(Debug, Clone, Copy)]
pub struct LossConfig {
    pub gamma: f64,
    pub kl_epsilon: f64,
    pub kl_direction: KlDirection,
}

impl LossConfig {
    pub fn new(gamma: f64) -> Result<Self> {
        if gamma < 0.0 {
            return Err(Error::contract(format!("gamma must be >= 0, got {gamma}")));
        }
        Ok(LossConfig {
            gamma,
            kl_epsilon: DEFAULT_KL_EPSILON,
            kl_direction: KlDirection::RefFirst,
        })
    }
}

/// A class distribution: entries nonnegative, summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProbVector {
    p: Vec<f64>,
}

impl ProbVector {
    pub fn new(p: Vec<f64>) -> Result<Self> {
        if p.is_empty() {
            return Err(Error::contract("empty probability vector"));
        }
        if p.iter().any(|&v| v < 0.0 || !v.is_finite()) {
            return Err(Error::contract("probability entries must be finite and >= 0"));
        }
        let sum: f64 = p.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return Err(Error::contract(format!(
                "probabilities sum to {sum}, expected 1"
            )));
        }
        Ok(ProbVector { p })
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.p
    }

    pub fn len(&self) -> usize {
        self.p.len()
    }

    pub fn is_empty(&self) -> bool {
        self.p.is_empty()
    }
}

// ── Plain (non-tape) transforms ──────────────────────────────────────

/// Numerically stable softmax of one logit row.
pub fn softmax(logits: &[f64]) -> ProbVector {
    let mut out = vec![0.0; logits.len()];
    softmax_row_into(logits, &mut out);
    ProbVector { p: out }
}

/// `-ln(max(p[y], eps))`.
pub fn cross_entropy_onehot(p: &ProbVector, y: usize, eps: f64) -> Result<f64> {
    if y >= p.len() {
        return Err(Error::contract(format!(
            "class index {y} out of range for {} classes",
            p.len()
        )));
    }
    Ok(-(p.p[y].max(eps)).ln())
}

/// Clamped KL divergence `Σ p_i (ln max(p_i,eps) - ln max(q_i,eps))`;
/// exactly zero when the arguments are identical.
pub fn kl_divergence(p: &ProbVector, q: &ProbVector, eps: f64) -> Result<f64> {
    if p.len() != q.len() {
        return Err(Error::Dim {
            op: "kl_divergence",
            left: vec![p.len()],
            right: vec![q.len()],
        });
    }
    Ok(p.p
        .iter()
        .zip(&q.p)
        .map(|(&pi, &qi)| pi * (pi.max(eps).ln() - qi.max(eps).ln()))
        .sum())
}

pub fn l1_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).sum()
}

pub fn l2_dist(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

pub fn one_hot(y: usize, classes: usize) -> Vec<f64> {
    let mut v = vec![0.0; classes];
    v[y] = 1.0;
    v
}

// ── Tape losses ──────────────────────────────────────────────────────

/// Mean over timesteps and batch of the per-timestep cross-entropy.
pub fn tet_ce_loss(
    tape: &mut Tape,
    logits_per_t: &[Var],
    labels: &[usize],
    eps: f64,
) -> Result<Var> {
    if logits_per_t.is_empty() {
        return Err(Error::contract("tet_ce_loss needs at least one timestep"));
    }
    let mut acc: Option<Var> = None;
    for &lv in logits_per_t {
        let p = tape.softmax_rows(lv)?;
        let ce = tape.ce_mean(p, labels, eps)?;
        acc = Some(match acc {
            None => ce,
            Some(a) => tape.add(a, ce)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), 1.0 / logits_per_t.len() as f64))
}

/// Temporal-ensemble training loss: per-timestep cross-entropy on the clean
/// branch plus `gamma`-weighted KL between clean and adversarial
/// per-timestep distributions, meaned over timesteps.
///
/// With `gamma == 0` the KL term is skipped entirely, so the recorded graph
/// is identical to [`tet_ce_loss`] on the clean logits.
pub fn rte_loss(
    tape: &mut Tape,
    logits_clean: &[Var],
    logits_adv: &[Var],
    labels: &[usize],
    cfg: &LossConfig,
) -> Result<Var> {
    if logits_clean.len() != logits_adv.len() {
        return Err(Error::Dim {
            op: "rte_loss",
            left: vec![logits_clean.len()],
            right: vec![logits_adv.len()],
        });
    }
    if logits_clean.is_empty() {
        return Err(Error::contract("rte_loss needs at least one timestep"));
    }
    let t_count = logits_clean.len();
    let mut acc: Option<Var> = None;
    for t in 0..t_count {
        let p = tape.softmax_rows(logits_clean[t])?;
        let ce = tape.ce_mean(p, labels, cfg.kl_epsilon)?;
        let term = if cfg.gamma != 0.0 {
            let q = tape.softmax_rows(logits_adv[t])?;
            let kl = match cfg.kl_direction {
                KlDirection::RefFirst => tape.kl_mean(p, q, cfg.kl_epsilon)?,
                KlDirection::AdvFirst => tape.kl_mean(q, p, cfg.kl_epsilon)?,
            };
            let reg = tape.scale(kl, cfg.gamma);
            tape.add(ce, reg)?
        } else {
            ce
        };
        acc = Some(match acc {
            None => term,
            Some(a) => tape.add(a, term)?,
        });
    }
    Ok(tape.scale(acc.unwrap(), 1.0 / t_count as f64))
}

/// Baseline trade-off loss: cross-entropy on the aggregated clean output
/// plus `beta`-weighted KL between aggregated clean and adversarial
/// distributions.
pub fn trades_loss(
    tape: &mut Tape,
    logits_clean: &[Var],
    logits_adv: &[Var],
    labels: &[usize],
    beta: f64,
    eps: f64,
) -> Result<Var> {
    if logits_clean.len() != logits_adv.len() {
        return Err(Error::Dim {
            op: "trades_loss",
            left: vec![logits_clean.len()],
            right: vec![logits_adv.len()],
        });
    }
    let agg_clean = aggregate_output(tape, logits_clean)?;
    let p = tape.softmax_rows(agg_clean)?;
    let ce = tape.ce_mean(p, labels, eps)?;
    if beta == 0.0 {
        return Ok(ce);
    }
    let agg_adv = aggregate_output(tape, logits_adv)?;
    let q = tape.softmax_rows(agg_adv)?;
    let kl = tape.kl_mean(p, q, eps)?;
    let reg = tape.scale(kl, beta);
    tape.add(ce, reg)
}
