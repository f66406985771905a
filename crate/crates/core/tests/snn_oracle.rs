//! Independent recurrence oracles for the LIF dynamics.
//!
//! The oracle here is a from-scratch scalar/loop reimplementation of the
//! membrane update and readout, sharing no code with the tape path.

use rand::Rng;
use rte_core::rng::seeded_rng;
use rte_core::snn::{lif_step, LifConfig, SnnModel};
use rte_core::surrogate::SurrogateSpec;
use rte_core::tape::Tape;
use rte_core::tensor::Tensor;

/// Scalar LIF recurrence: V <- leak*V*(1-s) + (1-leak)*c; s <- H(V - v_th).
fn oracle_lif_sequence(leak: f64, v_th: f64, currents: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let mut v = 0.0;
    let mut s = 0.0;
    let mut vs = Vec::new();
    let mut ss = Vec::new();
    for &c in currents {
        v = leak * v * (1.0 - s) + (1.0 - leak) * c;
        s = if v >= v_th { 1.0 } else { 0.0 };
        vs.push(v);
        ss.push(s);
    }
    (vs, ss)
}

fn engine_lif_sequence(leak: f64, v_th: f64, currents: &[f64]) -> (Vec<f64>, Vec<f64>) {
    let cfg = LifConfig::new(leak, v_th, currents.len().max(1)).unwrap();
    let model = SnnModel {
        layers: vec![
            rte_core::snn::Linear {
                weight: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                bias: None,
            },
            rte_core::snn::Linear {
                weight: Tensor::matrix(1, 1, vec![1.0]).unwrap(),
                bias: None,
            },
        ],
        lif: cfg,
        surrogate: SurrogateSpec::default(),
        detach_reset: true,
    };
    let mut tape = Tape::new(0);
    let mut state = model.reset_state(&mut tape, 1).unwrap();
    let mut vs = Vec::new();
    let mut ss = Vec::new();
    for &c in currents {
        let cur = tape.input(Tensor::matrix(1, 1, vec![c]).unwrap());
        let spike = lif_step(&mut tape, &mut state, 0, cur, &cfg, model.surrogate, true).unwrap();
        vs.push(tape.value_data(state.v[0])[0]);
        ss.push(tape.value_data(spike)[0]);
    }
    (vs, ss)
}

#[test]
fn lif_step_matches_recurrence_oracle_on_random_cases() {
    let mut rng = seeded_rng(200);
    for case in 0..100 {
        let leak = rng.gen_range(0.05..=1.0);
        let v_th = rng.gen_range(0.1..1.0);
        let steps = rng.gen_range(3..12);
        let currents: Vec<f64> = (0..steps).map(|_| rng.gen_range(-0.5..2.0)).collect();
        let (ov, os) = oracle_lif_sequence(leak, v_th, &currents);
        let (ev, es) = engine_lif_sequence(leak, v_th, &currents);
        for t in 0..steps {
            assert!(
                (ov[t] - ev[t]).abs() < 1e-12,
                "case {case} step {t}: V {} vs {}",
                ov[t],
                ev[t]
            );
            assert_eq!(os[t], es[t], "case {case} step {t}: spike");
        }
    }
}

#[test]
fn lif_worked_half_leak_example() {
    // leak 0.5, v_th 0.5, injected 0.3/step: V = 0.3, 0.45, 0.525 -> spike,
    // then the reset drops V back to 0.3 on the next step
    let raw = 0.3 / 0.5;
    let currents = vec![raw; 4];
    let (ov, os) = oracle_lif_sequence(0.5, 0.5, &currents);
    assert!((ov[0] - 0.3).abs() < 1e-15);
    assert!((ov[1] - 0.45).abs() < 1e-15);
    assert!((ov[2] - 0.525).abs() < 1e-15);
    assert_eq!(os[..3], [0.0, 0.0, 1.0]);
    assert!((ov[3] - 0.3).abs() < 1e-15);

    let (ev, es) = engine_lif_sequence(0.5, 0.5, &currents);
    for t in 0..4 {
        assert!((ov[t] - ev[t]).abs() < 1e-12);
        assert_eq!(os[t], es[t]);
    }
}

/// Whole-network oracle: explicit loops over layers, timesteps, batch and
/// neurons, with direct encoding and a non-spiking readout.
fn oracle_forward(
    weights: &[Vec<f64>],
    biases: &[Vec<f64>],
    dims: &[usize],
    x: &[f64],
    batch: usize,
    leak: f64,
    v_th: f64,
    t_total: usize,
) -> Vec<Vec<f64>> {
    let n_layers = dims.len() - 1;
    let mut v: Vec<Vec<f64>> = (1..n_layers)
        .map(|l| vec![0.0; batch * dims[l]])
        .collect();
    let mut s: Vec<Vec<f64>> = (1..n_layers)
        .map(|l| vec![0.0; batch * dims[l]])
        .collect();
    let mut logits_per_t = Vec::new();
    for _t in 0..t_total {
        let mut below: Vec<f64> = x.to_vec();
        for l in 0..n_layers - 1 {
            let (fan_in, fan_out) = (dims[l], dims[l + 1]);
            for b in 0..batch {
                for j in 0..fan_out {
                    let mut current = biases[l][j];
                    for i in 0..fan_in {
                        current += below[b * fan_in + i] * weights[l][i * fan_out + j];
                    }
                    let idx = b * fan_out + j;
                    v[l][idx] =
                        leak * v[l][idx] * (1.0 - s[l][idx]) + (1.0 - leak) * current;
                    s[l][idx] = if v[l][idx] >= v_th { 1.0 } else { 0.0 };
                }
            }
            below = s[l].clone();
        }
        let l = n_layers - 1;
        let (fan_in, fan_out) = (dims[l], dims[l + 1]);
        let mut logits = vec![0.0; batch * fan_out];
        for b in 0..batch {
            for j in 0..fan_out {
                let mut z = biases[l][j];
                for i in 0..fan_in {
                    z += below[b * fan_in + i] * weights[l][i * fan_out + j];
                }
                logits[b * fan_out + j] = z;
            }
        }
        logits_per_t.push(logits);
    }
    logits_per_t
}

#[test]
fn forward_timesteps_matches_independent_reimplementation() {
    let mut rng = seeded_rng(201);
    let dims = [2usize, 16, 3];
    let model = SnnModel::init(
        &dims,
        LifConfig::new(0.5, 0.5, 4).unwrap(),
        SurrogateSpec::default(),
        true,
        true,
        999,
    )
    .unwrap();
    let batch = 5;
    let x_data: Vec<f64> = (0..batch * 2).map(|_| rng.gen_range(0.0..1.0)).collect();
    let x = Tensor::matrix(batch, 2, x_data.clone()).unwrap();

    let mut tape = Tape::new(0);
    let (_, logits) = model.forward(&mut tape, &x).unwrap();

    let weights: Vec<Vec<f64>> = model.layers.iter().map(|l| l.weight.data().to_vec()).collect();
    let biases: Vec<Vec<f64>> = model
        .layers
        .iter()
        .map(|l| l.bias.as_ref().unwrap().data().to_vec())
        .collect();
    let want = oracle_forward(&weights, &biases, &dims, &x_data, batch, 0.5, 0.5, 4);

    assert_eq!(logits.len(), want.len());
    for (t, want_slice) in want.iter().enumerate() {
        let got = tape.value_data(logits[t]);
        for (g, w) in got.iter().zip(want_slice) {
            assert!((g - w).abs() < 1e-12, "t={t}: {g} vs {w}");
        }
    }
}

#[test]
fn forward_after_reset_is_independent_of_history() {
    let model = SnnModel::init(
        &[2, 8, 2],
        LifConfig::default(),
        SurrogateSpec::default(),
        true,
        true,
        7,
    )
    .unwrap();
    let x = Tensor::matrix(1, 2, vec![0.8, 0.3]).unwrap();
    let fresh = model.aggregate_logits(&x).unwrap();

    // run a long unrelated sequence first, then the same input again
    for i in 0..5 {
        let junk = Tensor::matrix(3, 2, vec![0.1 * i as f64; 6]).unwrap();
        model.aggregate_logits(&junk).unwrap();
    }
    let after = model.aggregate_logits(&x).unwrap();
    let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&fresh), bits(&after));
}
