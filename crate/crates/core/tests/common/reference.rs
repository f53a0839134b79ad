//! Straightforward binary64 forward pass used as a gradient oracle.
//!
//! Written independently of the library kernels: plain nested loops, no
//! shared helpers.

#![allow(dead_code)]

use lowprec::network::ConvSpec;
use lowprec::{NetworkSpec, Params};

/// Parameters copied out to binary64, one `(weight, bias)` per layer.
#[derive(Clone, Debug)]
pub struct RefParams {
    pub layers: Vec<(Vec<f64>, Vec<f64>)>,
}

impl RefParams {
    pub fn from_params(p: &Params) -> Self {
        RefParams {
            layers: p
                .layers
                .iter()
                .map(|l| {
                    (
                        l.weight.data().iter().map(|&v| v as f64).collect(),
                        l.bias.data().iter().map(|&v| v as f64).collect(),
                    )
                })
                .collect(),
        }
    }
}

/// Smallest distance to a ReLU kink or a max-pool tie seen in a forward
/// pass. Finite differences are only trustworthy when this is well above
/// the step size.
#[derive(Clone, Copy, Debug)]
pub struct Margins {
    pub relu: f64,
    pub pool: f64,
}

/// Mean cross-entropy over the batch. `images` holds `B` samples of
/// `C×H×W` values in row-major order.
pub fn loss(spec: &NetworkSpec, p: &RefParams, images: &[f64], labels: &[usize]) -> (f64, Margins) {
    let (c0, h0, w0) = spec.input;
    let per = c0 * h0 * w0;
    let mut margins = Margins { relu: f64::INFINITY, pool: f64::INFINITY };
    let mut total = 0.0;
    for (s, &label) in labels.iter().enumerate() {
        let mut x = images[s * per..(s + 1) * per].to_vec();
        let (mut c, mut h, mut w) = (c0, h0, w0);
        for (k, ConvSpec { filters, kernel: (kh, kw) }) in spec.conv_layers.iter().enumerate() {
            let (weight, bias) = &p.layers[k];
            let (oh, ow) = (h - kh + 1, w - kw + 1);
            let mut z = vec![0.0; filters * oh * ow];
            for f in 0..*filters {
                for i in 0..oh {
                    for j in 0..ow {
                        let mut acc = bias[f];
                        for ch in 0..c {
                            for m in 0..*kh {
                                for n in 0..*kw {
                                    acc += x[(ch * h + i + m) * w + j + n] * weight[((f * c + ch) * kh + m) * kw + n];
                                }
                            }
                        }
                        margins.relu = margins.relu.min(acc.abs());
                        z[(f * oh + i) * ow + j] = acc.max(0.0);
                    }
                }
            }
            let (ph, pw) = (oh / 2, ow / 2);
            let mut pooled = vec![0.0; filters * ph * pw];
            for f in 0..*filters {
                for i in 0..ph {
                    for j in 0..pw {
                        let mut window = [0.0; 4];
                        for (t, (di, dj)) in [(0, 0), (0, 1), (1, 0), (1, 1)].into_iter().enumerate() {
                            window[t] = z[(f * oh + 2 * i + di) * ow + 2 * j + dj];
                        }
                        window.sort_by(|a, b| b.partial_cmp(a).unwrap());
                        if window[0] > 0.0 {
                            margins.pool = margins.pool.min(window[0] - window[1]);
                        }
                        pooled[(f * ph + i) * pw + j] = window[0];
                    }
                }
            }
            x = pooled;
            (c, h, w) = (*filters, ph, pw);
        }
        let n_conv = spec.conv_layers.len();
        let dense = &p.layers[n_conv..];
        for (k, (weight, bias)) in dense.iter().enumerate() {
            let out = bias.len();
            let inp = x.len();
            let mut z = vec![0.0; out];
            for o in 0..out {
                let mut acc = bias[o];
                for i in 0..inp {
                    acc += weight[o * inp + i] * x[i];
                }
                z[o] = acc;
            }
            if k + 1 < dense.len() {
                for v in &mut z {
                    margins.relu = margins.relu.min(v.abs());
                    *v = v.max(0.0);
                }
            }
            x = z;
        }
        let max = x.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_sum = x.iter().map(|v| (v - max).exp()).sum::<f64>().ln() + max;
        total += log_sum - x[label];
    }
    (total / labels.len() as f64, margins)
}
