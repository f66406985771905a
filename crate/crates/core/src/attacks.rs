//! L-infinity perturbation generators: ball/box projection, FGSM, PGD
//! against a configurable objective, and the per-timestep sub-network PGD.
//!
//! Attacks are pure given (model, input, seed). KL and L2 objectives freeze
//! the clean-branch distribution once per attack; sign steps maximize the
//! objective and every iterate is projected back into the budget ball
//! intersected with the data box.

use rand::Rng;

use crate::error::{Error, Result};
use crate::rng::seeded_rng;
use crate::snn::{aggregate_output, SnnModel, SpikeMode};
use crate::tape::{Tape, Var};
use crate::tensor::{sign, Tensor};

/// What the sign steps ascend on. Timesteps are 1-indexed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackObjective {
    /// Cross-entropy of the aggregated (temporal-mean) output.
    CeOnAggregate,
    /// KL from the frozen clean aggregated distribution to the perturbed one.
    KlAggregate,
    /// KL from the frozen clean sub-network distribution at timestep `m`.
    KlSubnet(usize),
    /// Cross-entropy of sub-network `m` alone.
    CeSubnet(usize),
    /// L2 distance from the frozen clean sub-network distribution at `m`.
    L2Subnet(usize),
}

/// Perturbation-generation procedure: budget, step size, iterations, start
/// rule, objective, and the data box.
#[derive(Debug, Clone, Copy)]
pub struct AttackConfig {
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    pub objective: AttackObjective,
    pub box_lo: f64,
    pub box_hi: f64,
}

impl AttackConfig {
    pub fn new(epsilon: f64, alpha: f64, steps: usize, objective: AttackObjective) -> Result<Self> {
        let cfg = AttackConfig {
            epsilon,
            alpha,
            steps,
            random_start: true,
            objective,
            box_lo: 0.0,
            box_hi: 1.0,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.epsilon < 0.0 {
            return Err(Error::contract(format!(
                "epsilon must be >= 0, got {}",
                self.epsilon
            )));
        }
        if self.steps >= 1 && !(self.alpha > 0.0) {
            return Err(Error::contract(format!(
                "alpha must be > 0 when steps >= 1, got {}",
                self.alpha
            )));
        }
        if self.box_lo > self.box_hi {
            return Err(Error::contract(format!(
                "box [{}, {}] is empty",
                self.box_lo, self.box_hi
            )));
        }
        Ok(())
    }

    pub fn with_random_start(mut self, on: bool) -> Self {
        self.random_start = on;
        self
    }
}

/// Elementwise clip of `x_adv` into `[x - eps, x + eps]` intersected with
/// the box. The returned tensor satisfies the measured bound
/// `|out_i - x_i| <= eps` in f64 arithmetic, exactly: after the clip, any
/// element whose measured offset still rounds above `eps` is nudged toward
/// `x_i` one ulp at a time.
pub fn project_ball(x_adv: &Tensor, x: &Tensor, eps: f64, box_lo: f64, box_hi: f64) -> Result<Tensor> {
    if x_adv.shape() != x.shape() {
        return Err(Error::Dim {
            op: "project_ball",
            left: x_adv.shape().to_vec(),
            right: x.shape().to_vec(),
        });
    }
    let mut out = Vec::with_capacity(x.numel());
    for (&a, &c) in x_adv.data().iter().zip(x.data()) {
        let delta = (a - c).clamp(-eps, eps);
        let mut v = (c + delta).clamp(box_lo, box_hi);
        while v - c > eps {
            v = v.next_down();
        }
        while c - v > eps {
            v = v.next_up();
        }
        out.push(v);
    }
    Tensor::from_vec(x.shape().to_vec(), out)
}

/// Frozen clean branch plus objective evaluation for one attacked batch.
struct ObjectiveEval<'a> {
    model: &'a SnnModel,
    objective: AttackObjective,
    labels: Option<Vec<usize>>,
    /// Softmax distribution of the clean input under the objective's view,
    /// computed once and held constant across iterations.
    clean_probs: Option<Tensor>,
    /// Timesteps that must be unrolled to evaluate the objective.
    t_count: usize,
}

impl<'a> ObjectiveEval<'a> {
    fn new(
        model: &'a SnnModel,
        x: &Tensor,
        labels: Option<&[usize]>,
        objective: AttackObjective,
    ) -> Result<Self> {
        let t_total = model.lif.timesteps;
        let t_count = match objective {
            AttackObjective::CeOnAggregate | AttackObjective::KlAggregate => t_total,
            AttackObjective::KlSubnet(m)
            | AttackObjective::CeSubnet(m)
            | AttackObjective::L2Subnet(m) => {
                if m < 1 || m > t_total {
                    return Err(Error::contract(format!(
                        "timestep {m} out of range 1..={t_total}"
                    )));
                }
                m
            }
        };
        let needs_labels = matches!(
            objective,
            AttackObjective::CeOnAggregate | AttackObjective::CeSubnet(_)
        );
        if needs_labels && labels.is_none() {
            return Err(Error::contract("objective requires labels"));
        }
        if let Some(l) = labels {
            if l.len() != x.rows() {
                return Err(Error::Dim {
                    op: "attack labels",
                    left: vec![x.rows()],
                    right: vec![l.len()],
                });
            }
        }
        let clean_probs = match objective {
            AttackObjective::KlAggregate => {
                let mut tape = Tape::new(0);
                let (_, logits) = model.forward(&mut tape, x)?;
                let agg = aggregate_output(&mut tape, &logits)?;
                let p = tape.softmax_rows(agg)?;
                Some(tape.value(p).clone())
            }
            AttackObjective::KlSubnet(m) | AttackObjective::L2Subnet(m) => {
                let mut tape = Tape::new(0);
                let params = model.register_params(&mut tape);
                let xv = tape.input(x.clone());
                let logits = model.forward_from(&mut tape, &params, xv, SpikeMode::Binary, m)?;
                let p = tape.softmax_rows(logits[m - 1])?;
                Some(tape.value(p).clone())
            }
            _ => None,
        };
        Ok(ObjectiveEval {
            model,
            objective,
            labels: labels.map(|l| l.to_vec()),
            clean_probs,
            t_count,
        })
    }

    /// Record the objective at `x_at`; returns the tape, input var, and loss.
    fn record(&self, x_at: &Tensor) -> Result<(Tape, Var, Var)> {
        let mut tape = Tape::new(0);
        let params = self.model.register_params(&mut tape);
        let xv = tape.input(x_at.clone());
        let logits =
            self.model
                .forward_from(&mut tape, &params, xv, SpikeMode::Binary, self.t_count)?;
        let eps = crate::objectives::DEFAULT_KL_EPSILON;
        let loss = match self.objective {
            AttackObjective::CeOnAggregate => {
                let agg = aggregate_output(&mut tape, &logits)?;
                let p = tape.softmax_rows(agg)?;
                tape.ce_mean(p, self.labels.as_ref().unwrap(), eps)?
            }
            AttackObjective::CeSubnet(m) => {
                let p = tape.softmax_rows(logits[m - 1])?;
                tape.ce_mean(p, self.labels.as_ref().unwrap(), eps)?
            }
            AttackObjective::KlAggregate => {
                let agg = aggregate_output(&mut tape, &logits)?;
                let q = tape.softmax_rows(agg)?;
                let pc = tape.input(self.clean_probs.clone().unwrap());
                tape.kl_mean(pc, q, eps)?
            }
            AttackObjective::KlSubnet(m) => {
                let q = tape.softmax_rows(logits[m - 1])?;
                let pc = tape.input(self.clean_probs.clone().unwrap());
                tape.kl_mean(pc, q, eps)?
            }
            AttackObjective::L2Subnet(m) => {
                let q = tape.softmax_rows(logits[m - 1])?;
                let pc = tape.input(self.clean_probs.clone().unwrap());
                let d = tape.sub(pc, q)?;
                let sq = tape.mul(d, d)?;
                let total = tape.sum_all(sq);
                tape.sqrt(total)
            }
        };
        Ok((tape, xv, loss))
    }

    fn loss_at(&self, x_at: &Tensor) -> Result<f64> {
        let (tape, _, loss) = self.record(x_at)?;
        Ok(tape.value_data(loss)[0])
    }

    fn grad_at(&self, x_at: &Tensor) -> Result<Vec<f64>> {
        let (mut tape, xv, loss) = self.record(x_at)?;
        tape.backward(loss)?;
        Ok(tape.grad(xv).unwrap().to_vec())
    }
}

/// Objective value at `x_adv`, with the clean branch frozen at `x`. Used by
/// the analysis layer and the attack-effectiveness checks.
pub fn objective_value(
    model: &SnnModel,
    x: &Tensor,
    x_adv: &Tensor,
    labels: Option<&[usize]>,
    objective: AttackObjective,
) -> Result<f64> {
    ObjectiveEval::new(model, x, labels, objective)?.loss_at(x_adv)
}

/// One-step sign attack on the aggregated cross-entropy.
pub fn fgsm(
    model: &SnnModel,
    x: &Tensor,
    labels: &[usize],
    eps: f64,
    box_lo: f64,
    box_hi: f64,
) -> Result<Tensor> {
    if eps < 0.0 {
        return Err(Error::contract(format!("epsilon must be >= 0, got {eps}")));
    }
    let eval = ObjectiveEval::new(model, x, Some(labels), AttackObjective::CeOnAggregate)?;
    let grad = eval.grad_at(x)?;
    let stepped: Vec<f64> = x
        .data()
        .iter()
        .zip(&grad)
        .map(|(&xi, &gi)| xi + eps * sign(gi))
        .collect();
    let stepped = Tensor::from_vec(x.shape().to_vec(), stepped)?;
    project_ball(&stepped, x, eps, box_lo, box_hi)
}

/// Iterated sign attack per the attack config. With `steps == 0` and no
/// random start this is the identity.
pub fn pgd(
    model: &SnnModel,
    x: &Tensor,
    labels: Option<&[usize]>,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    cfg.validate()?;
    let eval = ObjectiveEval::new(model, x, labels, cfg.objective)?;
    let mut x_adv = if cfg.random_start {
        let mut rng = seeded_rng(seed);
        let noisy: Vec<f64> = x
            .data()
            .iter()
            .map(|&xi| xi + rng.gen_range(-cfg.epsilon..=cfg.epsilon))
            .collect();
        let noisy = Tensor::from_vec(x.shape().to_vec(), noisy)?;
        project_ball(&noisy, x, cfg.epsilon, cfg.box_lo, cfg.box_hi)?
    } else {
        x.clone()
    };
    for _ in 0..cfg.steps {
        let grad = eval.grad_at(&x_adv)?;
        let stepped: Vec<f64> = x_adv
            .data()
            .iter()
            .zip(&grad)
            .map(|(&xi, &gi)| xi + cfg.alpha * sign(gi))
            .collect();
        let stepped = Tensor::from_vec(x.shape().to_vec(), stepped)?;
        x_adv = project_ball(&stepped, x, cfg.epsilon, cfg.box_lo, cfg.box_hi)?;
    }
    Ok(x_adv)
}

/// PGD maximizing the KL shift of sub-network `m` (1-indexed), with the
/// clean distribution held constant. Returns the perturbed batch.
pub fn subnet_pgd(
    model: &SnnModel,
    x: &Tensor,
    m: usize,
    cfg: &AttackConfig,
    seed: u64,
) -> Result<Tensor> {
    let mut c = *cfg;
    c.objective = AttackObjective::KlSubnet(m);
    pgd(model, x, None, &c, seed)
}

/// Uniform same-budget noise, projected; the baseline attacks must beat.
pub fn random_perturbation(
    x: &Tensor,
    eps: f64,
    box_lo: f64,
    box_hi: f64,
    seed: u64,
) -> Result<Tensor> {
    let mut rng = seeded_rng(seed);
    let noisy: Vec<f64> = x
        .data()
        .iter()
        .map(|&xi| xi + rng.gen_range(-eps..=eps))
        .collect();
    let noisy = Tensor::from_vec(x.shape().to_vec(), noisy)?;
    project_ball(&noisy, x, eps, box_lo, box_hi)
}
