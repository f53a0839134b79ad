//! Tiny separable image set: horizontal bars are class 0, vertical bars
//! class 1, on a noisy background.

#![allow(dead_code)]

use lowprec::data::Split;
use lowprec::network::ConvSpec;
use lowprec::{Dataset, NetworkSpec, Rng, Tensor};

pub const SIDE: usize = 8;

pub fn bars(n: usize, seed: u64, split: Split) -> Dataset {
    let mut rng = Rng::new(seed);
    let mut data = vec![0.0f32; n * SIDE * SIDE];
    let mut labels = Vec::with_capacity(n);
    for (s, img) in data.chunks_mut(SIDE * SIDE).enumerate() {
        for v in img.iter_mut() {
            *v = 0.2 * rng.unit_f32();
        }
        let line = 1 + (rng.unit_f32() * (SIDE - 2) as f32) as usize;
        let label = (s % 2) as u8;
        for k in 0..SIDE {
            let (r, c) = if label == 0 { (line, k) } else { (k, line) };
            img[r * SIDE + c] = 0.8 + 0.2 * rng.unit_f32();
        }
        labels.push(label);
    }
    Dataset::new(Tensor::new(vec![n, SIDE, SIDE], data).unwrap(), labels, 2, split).unwrap()
}

pub fn bars_spec() -> NetworkSpec {
    NetworkSpec {
        input: (1, SIDE, SIDE),
        conv_layers: vec![ConvSpec { filters: 4, kernel: (3, 3) }],
        dense_layers: 1,
        dense_units: 8,
        classes: 2,
    }
}
