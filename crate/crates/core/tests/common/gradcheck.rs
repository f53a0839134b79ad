//! Finite-difference gradient check: analytic gradients from the library
//! against central differences of the binary64 reference forward pass.

#![allow(dead_code)]

use super::reference::{self, RefParams};
use lowprec::network::{ConvSpec, TrainConfig};
use lowprec::{ArithContext, Network, NetworkSpec, Params, Rng, Tensor};

pub const H: f64 = 1e-3;
pub const TOLERANCE: f64 = 1e-4;
/// Differences below this are binary32 round-off in the analytic path, not
/// gradient errors.
const FLOOR: f64 = 1e-5;
/// Ten steps: no finite-difference probe can cross a kink or tie.
const MARGIN: f64 = 1e-2;

pub struct Case {
    spec: NetworkSpec,
    params: Params,
    images: Vec<f32>,
    labels: Vec<usize>,
}

/// Builds a batch and parameters far enough from ReLU kinks and pooling ties
/// that a step of `H` cannot cross one.
pub fn case(spec: NetworkSpec, batch: usize, seed0: u64) -> Case {
    let net = Network::new(spec.clone()).unwrap();
    let (c, h, w) = spec.input;
    for seed in seed0..seed0 + 10_000 {
        let cfg = TrainConfig { seed, init_scale: 0.6, ..TrainConfig::default() };
        let mut params = net.init_weights(&cfg);
        let mut rng = Rng::with_stream(seed, 99);
        for l in &mut params.layers {
            for b in l.bias.data_mut() {
                *b = 0.1 * rng.symmetric_f32();
            }
        }
        let images: Vec<f32> = (0..batch * c * h * w).map(|_| rng.unit_f32()).collect();
        let labels: Vec<usize> = (0..batch).map(|i| (i * 7 + seed as usize) % spec.classes).collect();
        let imgs64: Vec<f64> = images.iter().map(|&v| v as f64).collect();
        let (_, m) = reference::loss(&spec, &RefParams::from_params(&params), &imgs64, &labels);
        if m.relu > MARGIN && m.pool > MARGIN {
            return Case { spec, params, images, labels };
        }
    }
    panic!("no kink-free case found")
}

/// Largest relative error over every parameter, with the layer it came from.
pub fn max_relative_error(case: &Case) -> (f64, usize) {
    let net = Network::new(case.spec.clone()).unwrap();
    let (c, h, w) = case.spec.input;
    let b = case.labels.len();
    let batch = Tensor::new(vec![b, c, h, w], case.images.clone()).unwrap();
    let mut targets = Tensor::zeros(&[b, case.spec.classes]);
    for (i, &l) in case.labels.iter().enumerate() {
        targets.data_mut()[i * case.spec.classes + l] = 1.0;
    }
    let mut ctx = ArithContext::exact();
    let (_, trace) = net.forward(&case.params, &batch, &mut ctx).unwrap();
    let grads = net.backward(&case.params, &trace, &targets, &mut ctx).unwrap();

    let imgs64: Vec<f64> = case.images.iter().map(|&v| v as f64).collect();
    let base = RefParams::from_params(&case.params);
    let loss = |p: &RefParams| reference::loss(&case.spec, p, &imgs64, &case.labels).0;

    let mut worst = (0.0, 0);
    for (layer, g) in grads.layers.iter().enumerate() {
        for (part, analytic) in [g.weight.data(), g.bias.data()].into_iter().enumerate() {
            for (i, &a) in analytic.iter().enumerate() {
                let plus = nudged(&base, layer, part, i, H);
                let minus = nudged(&base, layer, part, i, -H);
                let numeric = (loss(&plus) - loss(&minus)) / (2.0 * H);
                let a = a as f64;
                let rel = (a - numeric).abs() / a.abs().max(numeric.abs()).max(FLOOR);
                if rel > worst.0 {
                    worst = (rel, layer);
                }
            }
        }
    }
    worst
}

fn nudged(p: &RefParams, layer: usize, part: usize, i: usize, delta: f64) -> RefParams {
    let mut out = p.clone();
    let (w, b) = &mut out.layers[layer];
    if part == 0 {
        w[i] += delta;
    } else {
        b[i] += delta;
    }
    out
}

/// 4×4 input, one 2×2 filter, one hidden dense layer of 3 units.
pub fn tiny_spec() -> NetworkSpec {
    NetworkSpec {
        input: (1, 4, 4),
        conv_layers: vec![ConvSpec { filters: 1, kernel: (2, 2) }],
        dense_layers: 1,
        dense_units: 3,
        classes: 3,
    }
}

/// Two channels in, two conv stages, two hidden dense layers.
pub fn stacked_spec() -> NetworkSpec {
    NetworkSpec {
        input: (2, 8, 9),
        conv_layers: vec![ConvSpec { filters: 2, kernel: (3, 2) }, ConvSpec { filters: 2, kernel: (2, 3) }],
        dense_layers: 2,
        dense_units: 4,
        classes: 3,
    }
}
