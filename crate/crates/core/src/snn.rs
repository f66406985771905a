//! Leaky integrate-and-fire dynamics and the time-unrolled spiking network.
//!
//! The network injects the same input at every timestep (direct encoding),
//! evolves hidden-layer membrane potentials per the LIF recurrence, and reads
//! out real-valued logits at each timestep; the prediction is their temporal
//! mean. All timesteps are recorded on one tape so gradients flow through
//! time.

use std::fs;
use std::path::Path;

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{derive_seed, seeded_rng, stream};
use crate::surrogate::SurrogateSpec;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// LIF neuron configuration: leak in (0,1], positive threshold, T >= 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LifConfig {
    pub leak: f64,
    pub v_th: f64,
    pub timesteps: usize,
}

impl LifConfig {
    pub fn new(leak: f64, v_th: f64, timesteps: usize) -> Result<Self> {
        if !(leak > 0.0 && leak <= 1.0) {
            return Err(Error::contract(format!("leak must be in (0,1], got {leak}")));
        }
        if !(v_th > 0.0) {
            return Err(Error::contract(format!(
                "threshold must be positive, got {v_th}"
            )));
        }
        if timesteps < 1 {
            return Err(Error::contract("timesteps must be >= 1"));
        }
        Ok(LifConfig {
            leak,
            v_th,
            timesteps,
        })
    }
}

impl Default for LifConfig {
    fn default() -> Self {
        LifConfig {
            leak: 0.5,
            v_th: 0.5,
            timesteps: 4,
        }
    }
}

/// One affine layer; `weight` is `[fan_in x fan_out]`, bias has `fan_out`
/// entries when present.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: Tensor,
    pub bias: Option<Tensor>,
}

/// Spike nonlinearity selector for a forward pass. `Smooth` replaces the
/// hard threshold with a sigmoid of the same center so the whole network
/// becomes differentiable end to end (finite-difference validation).
#[derive(Debug, Clone, Copy)]
pub enum SpikeMode {
    Binary,
    Smooth { steepness: f64 },
}

/// Layer parameters plus LIF configuration; the final layer produces logits
/// without spiking.
#[derive(Debug, Clone)]
pub struct SnnModel {
    pub layers: Vec<Linear>,
    pub lif: LifConfig,
    pub surrogate: SurrogateSpec,
    /// Treat the (1 - s) reset factor as a constant during backward.
    pub detach_reset: bool,
}

/// Tape handles for every parameter tensor, in layer order (weight, then
/// bias when present).
pub struct ParamVars {
    pub vars: Vec<Var>,
}

/// Per-hidden-layer membrane potential and previous spikes, on one tape.
pub struct LayerState {
    pub v: Vec<Var>,
    pub s: Vec<Var>,
    batch: usize,
}

impl SnnModel {
    /// Fresh model with fan-in-scaled uniform weight init and zero biases.
    /// `dims` chains input, hidden widths, and class count.
    pub fn init(
        dims: &[usize],
        lif: LifConfig,
        surrogate: SurrogateSpec,
        detach_reset: bool,
        readout_bias: bool,
        seed: u64,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::contract("model needs at least input and output dims"));
        }
        if dims.contains(&0) {
            return Err(Error::contract(format!("zero-width layer in {dims:?}")));
        }
        let mut rng = seeded_rng(derive_seed(seed, stream::INIT, 0, 0));
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for l in 0..dims.len() - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            let bound = (6.0 / fan_in as f64).sqrt();
            let data: Vec<f64> = (0..fan_in * fan_out)
                .map(|_| rng.gen_range(-bound..bound))
                .collect();
            let is_readout = l == dims.len() - 2;
            let bias = if is_readout && !readout_bias {
                None
            } else {
                Some(Tensor::from_vec(vec![fan_out], vec![0.0; fan_out])?)
            };
            layers.push(Linear {
                weight: Tensor::matrix(fan_in, fan_out, data)?,
                bias,
            });
        }
        Ok(SnnModel {
            layers,
            lif,
            surrogate,
            detach_reset,
        })
    }

    /// Layer widths, input first.
    pub fn dims(&self) -> Vec<usize> {
        let mut d: Vec<usize> = self.layers.iter().map(|l| l.weight.shape()[0]).collect();
        d.push(self.layers.last().unwrap().weight.shape()[1]);
        d
    }

    pub fn n_hidden(&self) -> usize {
        self.layers.len() - 1
    }

    pub fn n_classes(&self) -> usize {
        self.layers.last().unwrap().weight.shape()[1]
    }

    pub fn n_features(&self) -> usize {
        self.layers[0].weight.shape()[0]
    }

    /// All parameter tensors in layer order (weight, then bias when present).
    pub fn param_tensors(&self) -> Vec<&Tensor> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.push(&l.weight);
            if let Some(b) = &l.bias {
                out.push(b);
            }
        }
        out
    }

    pub fn param_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        let mut out = Vec::new();
        for l in &mut self.layers {
            out.push(&mut l.weight);
            if let Some(b) = &mut l.bias {
                out.push(b);
            }
        }
        out
    }

    /// Register every parameter as a tape leaf; gradients accumulate across
    /// all forward passes sharing these vars.
    pub fn register_params(&self, tape: &mut Tape) -> ParamVars {
        let vars = self
            .param_tensors()
            .into_iter()
            .map(|t| tape.input(t.clone()))
            .collect();
        ParamVars { vars }
    }

    /// Zeroed membrane and spike state shaped for `batch`.
    pub fn reset_state(&self, tape: &mut Tape, batch: usize) -> Result<LayerState> {
        if batch < 1 {
            return Err(Error::contract("batch must be >= 1"));
        }
        let mut v = Vec::with_capacity(self.n_hidden());
        let mut s = Vec::with_capacity(self.n_hidden());
        for l in 0..self.n_hidden() {
            let width = self.layers[l].weight.shape()[1];
            v.push(tape.input(Tensor::zeros(vec![batch, width])));
            s.push(tape.input(Tensor::zeros(vec![batch, width])));
        }
        Ok(LayerState { v, s, batch })
    }

    /// Unroll `t_count` timesteps from input var `x`, returning the readout
    /// logits at each step. `t_count` of `lif.timesteps` is the full pass;
    /// a prefix is enough when only an early sub-network is needed.
    pub fn forward_from(
        &self,
        tape: &mut Tape,
        params: &ParamVars,
        x: Var,
        mode: SpikeMode,
        t_count: usize,
    ) -> Result<Vec<Var>> {
        if t_count < 1 || t_count > self.lif.timesteps {
            return Err(Error::contract(format!(
                "t_count must be in 1..={}, got {t_count}",
                self.lif.timesteps
            )));
        }
        let batch = tape.value(x).rows();
        if tape.value(x).cols() != self.n_features() {
            return Err(Error::Dim {
                op: "forward",
                left: tape.value(x).shape().to_vec(),
                right: vec![batch, self.n_features()],
            });
        }
        let mut state = self.reset_state(tape, batch)?;
        let mut pvar = params.vars.iter();
        let mut layer_vars = Vec::with_capacity(self.layers.len());
        for l in &self.layers {
            let w = *pvar.next().expect("params exhausted");
            let b = l.bias.as_ref().map(|_| *pvar.next().expect("params exhausted"));
            layer_vars.push((w, b));
        }

        let mut logits = Vec::with_capacity(t_count);
        for _t in 0..t_count {
            let mut below = x;
            for l in 0..self.n_hidden() {
                let (w, b) = layer_vars[l];
                let mut current = tape.matmul(below, w)?;
                if let Some(b) = b {
                    current = tape.add_row(current, b)?;
                }
                below = lif_step_mode(
                    tape,
                    &mut state,
                    l,
                    current,
                    &self.lif,
                    self.surrogate,
                    self.detach_reset,
                    mode,
                )?;
            }
            let (w, b) = layer_vars[self.layers.len() - 1];
            let mut out = tape.matmul(below, w)?;
            if let Some(b) = b {
                out = tape.add_row(out, b)?;
            }
            logits.push(out);
        }
        Ok(logits)
    }

    /// Register params and input, then unroll all timesteps.
    pub fn forward(&self, tape: &mut Tape, x: &Tensor) -> Result<(Var, Vec<Var>)> {
        let params = self.register_params(tape);
        let xv = tape.input(x.clone());
        let logits = self.forward_from(tape, &params, xv, SpikeMode::Binary, self.lif.timesteps)?;
        Ok((xv, logits))
    }

    /// Aggregated (temporal-mean) logits for a batch, off-tape convenience.
    pub fn aggregate_logits(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new(0);
        let (_, logits) = self.forward(&mut tape, x)?;
        let agg = aggregate_output(&mut tape, &logits)?;
        Ok(tape.value(agg).clone())
    }

    /// Argmax class predictions on aggregated logits.
    pub fn predict(&self, x: &Tensor) -> Result<Vec<usize>> {
        Ok(self.aggregate_logits(x)?.argmax_rows())
    }
}

/// One LIF update for hidden layer `layer`: the raw synaptic current is
/// scaled by the built-in (1 - leak) factor, the membrane decays by `leak`
/// with the post-spike reset, and the new spikes are emitted
/// threshold-inclusively. Returns the spike var and updates `state` in place.
pub fn lif_step(
    tape: &mut Tape,
    state: &mut LayerState,
    layer: usize,
    input_current: Var,
    cfg: &LifConfig,
    surrogate: SurrogateSpec,
    detach_reset: bool,
) -> Result<Var> {
    let scaled = tape.scale(input_current, 1.0 - cfg.leak);
    lif_step_prescaled(tape, state, layer, scaled, cfg, surrogate, detach_reset)
}

/// [`lif_step`] variant for callers that already applied the (1 - leak)
/// input scaling.
pub fn lif_step_prescaled(
    tape: &mut Tape,
    state: &mut LayerState,
    layer: usize,
    injected: Var,
    cfg: &LifConfig,
    surrogate: SurrogateSpec,
    detach_reset: bool,
) -> Result<Var> {
    if layer >= state.v.len() {
        return Err(Error::contract(format!(
            "layer {layer} not initialized in state of {} layers",
            state.v.len()
        )));
    }
    let s_prev = if detach_reset {
        tape.detach(state.s[layer])
    } else {
        state.s[layer]
    };
    let neg_s = tape.scale(s_prev, -1.0);
    let keep = tape.add_scalar(neg_s, 1.0); // 1 - s_prev
    let retained = tape.mul(state.v[layer], keep)?;
    let decayed = tape.scale(retained, cfg.leak);
    let v_new = tape.add(decayed, injected)?;
    let s_new = tape.spike(v_new, cfg.v_th, surrogate);
    state.v[layer] = v_new;
    state.s[layer] = s_new;
    Ok(s_new)
}

fn lif_step_mode(
    tape: &mut Tape,
    state: &mut LayerState,
    layer: usize,
    input_current: Var,
    cfg: &LifConfig,
    surrogate: SurrogateSpec,
    detach_reset: bool,
    mode: SpikeMode,
) -> Result<Var> {
    match mode {
        SpikeMode::Binary => lif_step(tape, state, layer, input_current, cfg, surrogate, detach_reset),
        SpikeMode::Smooth { steepness } => {
            let scaled = tape.scale(input_current, 1.0 - cfg.leak);
            let s_prev = if detach_reset {
                tape.detach(state.s[layer])
            } else {
                state.s[layer]
            };
            let neg_s = tape.scale(s_prev, -1.0);
            let keep = tape.add_scalar(neg_s, 1.0);
            let retained = tape.mul(state.v[layer], keep)?;
            let decayed = tape.scale(retained, cfg.leak);
            let v_new = tape.add(decayed, scaled)?;
            let s_new = tape.sigmoid_shift(v_new, cfg.v_th, steepness);
            state.v[layer] = v_new;
            state.s[layer] = s_new;
            Ok(s_new)
        }
    }
}

impl LayerState {
    pub fn batch(&self) -> usize {
        self.batch
    }
}

/// Arithmetic mean of the per-timestep logits: the temporal self-ensemble
/// output.
pub fn aggregate_output(tape: &mut Tape, logits_per_t: &[Var]) -> Result<Var> {
    let first = *logits_per_t
        .first()
        .ok_or_else(|| Error::contract("aggregate_output of zero timesteps"))?;
    let mut acc = first;
    for &v in &logits_per_t[1..] {
        acc = tape.add(acc, v)?;
    }
    Ok(tape.scale(acc, 1.0 / logits_per_t.len() as f64))
}

// ── Checkpoint format ────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct CheckpointLayer {
    fan_in: usize,
    fan_out: usize,
    weight: Vec<f64>,
    bias: Option<Vec<f64>>,
}

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    lif: LifConfig,
    surrogate: SurrogateSpec,
    detach_reset: bool,
    layers: Vec<CheckpointLayer>,
}

const CHECKPOINT_FORMAT: &str = "rte-checkpoint-v1";

/// Write the model as a JSON checkpoint (shapes, flat weights, LIF and
/// surrogate config, detach flag).
pub fn save_checkpoint(model: &SnnModel, path: &Path) -> Result<()> {
    let ck = Checkpoint {
        format: CHECKPOINT_FORMAT.to_string(),
        lif: model.lif,
        surrogate: model.surrogate,
        detach_reset: model.detach_reset,
        layers: model
            .layers
            .iter()
            .map(|l| CheckpointLayer {
                fan_in: l.weight.shape()[0],
                fan_out: l.weight.shape()[1],
                weight: l.weight.data().to_vec(),
                bias: l.bias.as_ref().map(|b| b.data().to_vec()),
            })
            .collect(),
    };
    let body = serde_json::to_string(&ck)
        .map_err(|e| Error::format(format!("checkpoint encode: {e}")))?;
    fs::write(path, body)?;
    Ok(())
}

pub fn load_checkpoint(path: &Path) -> Result<SnnModel> {
    let body = fs::read_to_string(path)?;
    let ck: Checkpoint = serde_json::from_str(&body)
        .map_err(|e| Error::format(format!("checkpoint decode: {e}")))?;
    if ck.format != CHECKPOINT_FORMAT {
        return Err(Error::format(format!(
            "unsupported checkpoint format '{}'",
            ck.format
        )));
    }
    LifConfig::new(ck.lif.leak, ck.lif.v_th, ck.lif.timesteps)?;
    let mut layers = Vec::with_capacity(ck.layers.len());
    for (i, l) in ck.layers.into_iter().enumerate() {
        let weight = Tensor::matrix(l.fan_in, l.fan_out, l.weight)?;
        let bias = match l.bias {
            Some(b) => {
                if b.len() != l.fan_out {
                    return Err(Error::consistency(format!(
                        "layer {i} bias length {} != fan_out {}",
                        b.len(),
                        l.fan_out
                    )));
                }
                Some(Tensor::from_vec(vec![l.fan_out], b)?)
            }
            None => None,
        };
        layers.push(Linear { weight, bias });
    }
    if layers.is_empty() {
        return Err(Error::format("checkpoint has no layers"));
    }
    for w in layers.windows(2) {
        if w[0].weight.shape()[1] != w[1].weight.shape()[0] {
            return Err(Error::consistency(format!(
                "layer dims do not chain: {:?} then {:?}",
                w[0].weight.shape(),
                w[1].weight.shape()
            )));
        }
    }
    Ok(SnnModel {
        layers,
        lif: ck.lif,
        surrogate: ck.surrogate,
        detach_reset: ck.detach_reset,
    })
}
