//! Run configuration: a flat key-value file plus mirror flags.
//!
//! Every key has a documented default; flags override file values; the
//! fully resolved configuration (defaults included) is echoed into the
//! output directory so any run can be reproduced from its artifacts alone.

use std::fmt::Write as _;
use std::path::Path;

use rte_core::analysis::TransferMetric;
use rte_core::attacks::{AttackConfig, AttackObjective};
use rte_core::error::{Error, Result};
use rte_core::objectives::KlDirection;
use rte_core::surrogate::{SurrogateKind, SurrogateSpec};
use rte_core::training::Method;

/// One evaluation attack: `fgsm@EPS` or `pgd@EPSxK`.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalAttackSpec {
    pub name: String,
    pub epsilon: f64,
    pub steps: usize,
}

impl EvalAttackSpec {
    pub fn to_config(&self, alpha_hint: f64) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            alpha: if self.epsilon > 0.0 {
                self.epsilon / 4.0
            } else {
                alpha_hint.max(1e-3)
            },
            steps: self.steps,
            random_start: self.steps > 1,
            objective: AttackObjective::CeOnAggregate,
            box_lo: 0.0,
            box_hi: 1.0,
        }
    }
}

/// Fully resolved run configuration; field order matches the documented key
/// list.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub method: Method,
    pub seed: u64,
    pub out: String,
    pub dataset: String,
    pub checkpoint: String,
    pub epochs: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub alpha: f64,
    pub steps: usize,
    pub random_start: bool,
    pub timesteps: usize,
    pub leak: f64,
    pub threshold: f64,
    pub surrogate: SurrogateKind,
    pub surrogate_width: f64,
    pub detach_reset: bool,
    pub readout_bias: bool,
    pub hidden: Vec<usize>,
    pub grad_clip: f64,
    pub cosine_decay: bool,
    pub kl_epsilon: f64,
    pub kl_direction: KlDirection,
    pub blobs_n: usize,
    pub blobs_classes: usize,
    pub blobs_dim: usize,
    pub blobs_spread: f64,
    pub train_frac: f64,
    pub eval_attacks: Vec<EvalAttackSpec>,
    pub metric: TransferMetric,
    pub n_eval: usize,
    pub extent: f64,
    pub resolution: usize,
    pub surface_index: usize,
}

/// Pre-resolution view: every key optional, so file and flags can be merged
/// before defaults fill the gaps.
#[derive(Debug, Clone, Default)]
pub struct PartialConfig {
    entries: Vec<(String, String, Option<usize>)>,
}

impl PartialConfig {
    pub fn set(&mut self, key: &str, value: String) {
        self.entries.push((key.to_string(), value, None));
    }

    fn set_at(&mut self, key: &str, value: String, line: usize) {
        self.entries.push((key.to_string(), value, Some(line)));
    }

    /// Parse a flat `key = value` file. `#` starts a comment; blank lines
    /// are ignored; later entries override earlier ones.
    pub fn from_file(path: &Path) -> Result<Self> {
        let body = std::fs::read_to_string(path)?;
        let mut cfg = PartialConfig::default();
        for (i, raw) in body.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let (key, value) = line.split_once('=').ok_or_else(|| {
                Error::config_at(line.to_string(), line_no, "expected 'key = value'")
            })?;
            let key = key.trim();
            if !KEY_NAMES.contains(&key) {
                return Err(Error::config_at(key, line_no, "unknown key"));
            }
            cfg.set_at(key, value.trim().to_string(), line_no);
        }
        Ok(cfg)
    }

    /// Overlay: `self` first, then `other` (other wins).
    pub fn merged_with(mut self, other: PartialConfig) -> PartialConfig {
        self.entries.extend(other.entries);
        self
    }

    /// Fill defaults, parse and validate every key.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = RunConfig::default();
        let mut alpha_set = false;
        let mut attacks_set = false;
        for (key, value, line) in &self.entries {
            apply_key(&mut cfg, key, value, *line, &mut alpha_set, &mut attacks_set)?;
        }
        if !alpha_set {
            cfg.alpha = default_alpha(cfg.epsilon);
        }
        if !attacks_set {
            cfg.eval_attacks = vec![EvalAttackSpec {
                name: format!("pgd@{}x10", cfg.epsilon),
                epsilon: cfg.epsilon,
                steps: 10,
            }];
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn default_alpha(epsilon: f64) -> f64 {
    if epsilon > 0.0 {
        epsilon / 4.0
    } else {
        1e-3
    }
}

pub const KEY_NAMES: [&str; 37] = [
    "method",
    "seed",
    "out",
    "dataset",
    "checkpoint",
    "epochs",
    "batch_size",
    "learning_rate",
    "momentum",
    "gamma",
    "epsilon",
    "alpha",
    "steps",
    "random_start",
    "timesteps",
    "leak",
    "threshold",
    "surrogate",
    "surrogate_width",
    "detach_reset",
    "readout_bias",
    "hidden",
    "grad_clip",
    "cosine_decay",
    "kl_epsilon",
    "kl_direction",
    "blobs_n",
    "blobs_classes",
    "blobs_dim",
    "blobs_spread",
    "train_frac",
    "eval_attacks",
    "metric",
    "n_eval",
    "extent",
    "resolution",
    "surface_index",
];

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            method: Method::Rte,
            seed: 0,
            out: "out".to_string(),
            dataset: "blobs".to_string(),
            checkpoint: String::new(),
            epochs: 30,
            batch_size: 32,
            learning_rate: 0.1,
            momentum: 0.9,
            gamma: 6.0,
            epsilon: 0.05,
            alpha: default_alpha(0.05),
            steps: 7,
            random_start: true,
            timesteps: 4,
            leak: 0.5,
            threshold: 0.5,
            surrogate: SurrogateKind::Triangle,
            surrogate_width: 1.0,
            detach_reset: true,
            readout_bias: true,
            hidden: vec![32, 32],
            grad_clip: 5.0,
            cosine_decay: false,
            kl_epsilon: 1e-12,
            kl_direction: KlDirection::RefFirst,
            blobs_n: 512,
            blobs_classes: 2,
            blobs_dim: 2,
            blobs_spread: 0.12,
            train_frac: 0.5,
            eval_attacks: vec![EvalAttackSpec {
                name: "pgd@0.05x10".to_string(),
                epsilon: 0.05,
                steps: 10,
            }],
            metric: TransferMetric::Kl,
            n_eval: 256,
            extent: 0.1,
            resolution: 21,
            surface_index: 0,
        }
    }
}

fn parse_err(key: &str, line: Option<usize>, what: impl Into<String>) -> Error {
    match line {
        Some(l) => Error::config_at(key, l, what),
        None => Error::config(key, what),
    }
}

fn parse_typed<T: std::str::FromStr>(key: &str, value: &str, line: Option<usize>) -> Result<T> {
    value
        .parse::<T>()
        .map_err(|_| parse_err(key, line, format!("cannot parse '{value}'")))
}

fn parse_attacks(key: &str, value: &str, line: Option<usize>) -> Result<Vec<EvalAttackSpec>> {
    let mut out = Vec::new();
    for token in value.split(',') {
        let token = token.trim();
        if token.is_empty() {
            continue;
        }
        let (kind, rest) = token
            .split_once('@')
            .ok_or_else(|| parse_err(key, line, format!("bad attack spec '{token}'")))?;
        let spec = match kind {
            "fgsm" => EvalAttackSpec {
                name: token.to_string(),
                epsilon: parse_typed(key, rest, line)?,
                steps: 1,
            },
            "pgd" => {
                let (eps, k) = rest
                    .split_once('x')
                    .ok_or_else(|| parse_err(key, line, format!("bad pgd spec '{token}'")))?;
                EvalAttackSpec {
                    name: token.to_string(),
                    epsilon: parse_typed(key, eps, line)?,
                    steps: parse_typed(key, k, line)?,
                }
            }
            other => return Err(parse_err(key, line, format!("unknown attack '{other}'"))),
        };
        if spec.epsilon < 0.0 {
            return Err(parse_err(key, line, "attack epsilon must be >= 0"));
        }
        out.push(spec);
    }
    if out.is_empty() {
        return Err(parse_err(key, line, "no attacks given"));
    }
    Ok(out)
}

fn apply_key(
    cfg: &mut RunConfig,
    key: &str,
    value: &str,
    line: Option<usize>,
    alpha_set: &mut bool,
    attacks_set: &mut bool,
) -> Result<()> {
    match key {
        "method" => {
            cfg.method = Method::parse(value)
                .map_err(|_| parse_err(key, line, format!("unknown method '{value}'")))?
        }
        "seed" => cfg.seed = parse_typed(key, value, line)?,
        "out" => cfg.out = value.to_string(),
        "dataset" => cfg.dataset = value.to_string(),
        "checkpoint" => cfg.checkpoint = value.to_string(),
        "epochs" => cfg.epochs = parse_typed(key, value, line)?,
        "batch_size" => cfg.batch_size = parse_typed(key, value, line)?,
        "learning_rate" => cfg.learning_rate = parse_typed(key, value, line)?,
        "momentum" => cfg.momentum = parse_typed(key, value, line)?,
        "gamma" => cfg.gamma = parse_typed(key, value, line)?,
        "epsilon" => cfg.epsilon = parse_typed(key, value, line)?,
        "alpha" => {
            cfg.alpha = parse_typed(key, value, line)?;
            *alpha_set = true;
        }
        "steps" => cfg.steps = parse_typed(key, value, line)?,
        "random_start" => cfg.random_start = parse_typed(key, value, line)?,
        "timesteps" => cfg.timesteps = parse_typed(key, value, line)?,
        "leak" => cfg.leak = parse_typed(key, value, line)?,
        "threshold" => cfg.threshold = parse_typed(key, value, line)?,
        "surrogate" => {
            cfg.surrogate = match value {
                "triangle" => SurrogateKind::Triangle,
                "sigmoid-derivative" => SurrogateKind::SigmoidDerivative,
                "rectangle" => SurrogateKind::Rectangle,
                other => {
                    return Err(parse_err(key, line, format!("unknown surrogate '{other}'")))
                }
            }
        }
        "surrogate_width" => cfg.surrogate_width = parse_typed(key, value, line)?,
        "detach_reset" => cfg.detach_reset = parse_typed(key, value, line)?,
        "readout_bias" => cfg.readout_bias = parse_typed(key, value, line)?,
        "hidden" => {
            let dims: Result<Vec<usize>> = value
                .split(',')
                .map(|v| parse_typed::<usize>(key, v.trim(), line))
                .collect();
            cfg.hidden = dims?;
        }
        "grad_clip" => cfg.grad_clip = parse_typed(key, value, line)?,
        "cosine_decay" => cfg.cosine_decay = parse_typed(key, value, line)?,
        "kl_epsilon" => cfg.kl_epsilon = parse_typed(key, value, line)?,
        "kl_direction" => {
            cfg.kl_direction = match value {
                "ref-first" => KlDirection::RefFirst,
                "adv-first" => KlDirection::AdvFirst,
                other => {
                    return Err(parse_err(
                        key,
                        line,
                        format!("unknown kl direction '{other}'"),
                    ))
                }
            }
        }
        "blobs_n" => cfg.blobs_n = parse_typed(key, value, line)?,
        "blobs_classes" => cfg.blobs_classes = parse_typed(key, value, line)?,
        "blobs_dim" => cfg.blobs_dim = parse_typed(key, value, line)?,
        "blobs_spread" => cfg.blobs_spread = parse_typed(key, value, line)?,
        "train_frac" => cfg.train_frac = parse_typed(key, value, line)?,
        "eval_attacks" => {
            cfg.eval_attacks = parse_attacks(key, value, line)?;
            *attacks_set = true;
        }
        "metric" => {
            cfg.metric = TransferMetric::parse(value)
                .map_err(|_| parse_err(key, line, format!("unknown metric '{value}'")))?
        }
        "n_eval" => cfg.n_eval = parse_typed(key, value, line)?,
        "extent" => cfg.extent = parse_typed(key, value, line)?,
        "resolution" => cfg.resolution = parse_typed(key, value, line)?,
        "surface_index" => cfg.surface_index = parse_typed(key, value, line)?,
        other => return Err(parse_err(other, line, "unknown key")),
    }
    Ok(())
}

impl RunConfig {
    pub fn validate(&self) -> Result<()> {
        let check = |ok: bool, key: &str, what: &str| -> Result<()> {
            if ok {
                Ok(())
            } else {
                Err(Error::config(key, what))
            }
        };
        check(self.epochs >= 1, "epochs", "must be >= 1")?;
        check(self.batch_size >= 1, "batch_size", "must be >= 1")?;
        check(self.learning_rate > 0.0, "learning_rate", "must be > 0")?;
        check(
            (0.0..1.0).contains(&self.momentum),
            "momentum",
            "must be in [0,1)",
        )?;
        check(self.gamma >= 0.0, "gamma", "must be >= 0")?;
        check(self.epsilon >= 0.0, "epsilon", "must be >= 0")?;
        check(self.alpha > 0.0, "alpha", "must be > 0")?;
        check(self.timesteps >= 1, "timesteps", "must be >= 1")?;
        check(
            self.leak > 0.0 && self.leak <= 1.0,
            "leak",
            "must be in (0,1]",
        )?;
        check(self.threshold > 0.0, "threshold", "must be > 0")?;
        check(self.surrogate_width > 0.0, "surrogate_width", "must be > 0")?;
        check(
            !self.hidden.is_empty() && self.hidden.iter().all(|&d| d >= 1),
            "hidden",
            "must list positive widths",
        )?;
        check(self.grad_clip >= 0.0, "grad_clip", "must be >= 0 (0 disables)")?;
        check(self.kl_epsilon > 0.0, "kl_epsilon", "must be > 0")?;
        check(self.blobs_n >= 4, "blobs_n", "must be >= 4")?;
        check(self.blobs_classes >= 2, "blobs_classes", "must be >= 2")?;
        check(self.blobs_dim >= 2, "blobs_dim", "must be >= 2")?;
        check(self.blobs_spread >= 0.0, "blobs_spread", "must be >= 0")?;
        check(
            self.train_frac > 0.0 && self.train_frac < 1.0,
            "train_frac",
            "must be in (0,1)",
        )?;
        check(self.n_eval >= 1, "n_eval", "must be >= 1")?;
        check(self.extent >= 0.0, "extent", "must be >= 0")?;
        check(self.resolution >= 2, "resolution", "must be >= 2")?;
        check(
            self.dataset == "blobs" || self.dataset.starts_with("idx:"),
            "dataset",
            "must be 'blobs' or 'idx:PREFIX'",
        )?;
        Ok(())
    }

    pub fn surrogate_spec(&self) -> Result<SurrogateSpec> {
        SurrogateSpec::new(self.surrogate, self.surrogate_width)
    }

    pub fn train_attack(&self) -> AttackConfig {
        AttackConfig {
            epsilon: self.epsilon,
            alpha: self.alpha,
            steps: self.steps,
            random_start: self.random_start,
            objective: AttackObjective::CeOnAggregate,
            box_lo: 0.0,
            box_hi: 1.0,
        }
    }

    /// Echo every key, sorted, in re-parseable `key = value` form.
    pub fn to_flat_text(&self) -> String {
        let surrogate = match self.surrogate {
            SurrogateKind::Triangle => "triangle",
            SurrogateKind::SigmoidDerivative => "sigmoid-derivative",
            SurrogateKind::Rectangle => "rectangle",
        };
        let kl_direction = match self.kl_direction {
            KlDirection::RefFirst => "ref-first",
            KlDirection::AdvFirst => "adv-first",
        };
        let hidden = self
            .hidden
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",");
        let attacks = self
            .eval_attacks
            .iter()
            .map(|a| a.name.clone())
            .collect::<Vec<_>>()
            .join(",");
        let mut pairs: Vec<(&str, String)> = vec![
            ("method", self.method.name().to_string()),
            ("seed", self.seed.to_string()),
            ("out", self.out.clone()),
            ("dataset", self.dataset.clone()),
            ("checkpoint", self.checkpoint.clone()),
            ("epochs", self.epochs.to_string()),
            ("batch_size", self.batch_size.to_string()),
            ("learning_rate", self.learning_rate.to_string()),
            ("momentum", self.momentum.to_string()),
            ("gamma", self.gamma.to_string()),
            ("epsilon", self.epsilon.to_string()),
            ("alpha", self.alpha.to_string()),
            ("steps", self.steps.to_string()),
            ("random_start", self.random_start.to_string()),
            ("timesteps", self.timesteps.to_string()),
            ("leak", self.leak.to_string()),
            ("threshold", self.threshold.to_string()),
            ("surrogate", surrogate.to_string()),
            ("surrogate_width", self.surrogate_width.to_string()),
            ("detach_reset", self.detach_reset.to_string()),
            ("readout_bias", self.readout_bias.to_string()),
            ("hidden", hidden),
            ("grad_clip", self.grad_clip.to_string()),
            ("cosine_decay", self.cosine_decay.to_string()),
            ("kl_epsilon", self.kl_epsilon.to_string()),
            ("kl_direction", kl_direction.to_string()),
            ("blobs_n", self.blobs_n.to_string()),
            ("blobs_classes", self.blobs_classes.to_string()),
            ("blobs_dim", self.blobs_dim.to_string()),
            ("blobs_spread", self.blobs_spread.to_string()),
            ("train_frac", self.train_frac.to_string()),
            ("eval_attacks", attacks),
            ("metric", self.metric.name().to_string()),
            ("n_eval", self.n_eval.to_string()),
            ("extent", self.extent.to_string()),
            ("resolution", self.resolution.to_string()),
            ("surface_index", self.surface_index.to_string()),
        ];
        pairs.sort_by(|a, b| a.0.cmp(b.0));
        let mut out = String::new();
        for (k, v) in pairs {
            let _ = writeln!(out, "{k} = {v}");
        }
        out
    }
}
