//! Plain-loop reference implementations on `Tensor<f64>`; nothing here goes
//! through the tape, im2col or GEMM.

use lssf_core::params::ParamStore;
use lssf_tensor::Tensor;

pub const BN_EPS: f64 = 1e-5;

fn dims(x: &Tensor<f64>) -> [usize; 4] {
    x.nhwc().unwrap()
}

/// Same-padded stride-1 cross-correlation by sliding window.
pub fn conv(x: &Tensor<f64>, kernel: &Tensor<f64>, bias: Option<&Tensor<f64>>) -> Tensor<f64> {
    let [n, h, w, cin] = dims(x);
    let (k, cout) = (kernel.shape()[0], kernel.shape()[3]);
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros([n, h, w, cout]);
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for co in 0..cout {
                    let mut acc = bias.map_or(0.0, |bb| bb.data()[co]);
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - pad;
                            let ix = xx as isize + kx as isize - pad;
                            if iy < 0 || ix < 0 || iy >= h as isize || ix >= w as isize {
                                continue;
                            }
                            for ci in 0..cin {
                                acc += x.at(&[b, iy as usize, ix as usize, ci]) * kernel.at(&[ky, kx, ci, co]);
                            }
                        }
                    }
                    out.data_mut()[((b * h + y) * w + xx) * cout + co] = acc;
                }
            }
        }
    }
    out
}

pub fn depthwise(x: &Tensor<f64>, kernel: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, c] = dims(x);
    let k = kernel.shape()[0];
    let pad = (k / 2) as isize;
    let mut out = Tensor::zeros([n, h, w, c]);
    for b in 0..n {
        for y in 0..h {
            for xx in 0..w {
                for ch in 0..c {
                    let mut acc = 0.0;
                    for ky in 0..k {
                        for kx in 0..k {
                            let iy = y as isize + ky as isize - pad;
                            let ix = xx as isize + kx as isize - pad;
                            if iy >= 0 && ix >= 0 && iy < h as isize && ix < w as isize {
                                acc += x.at(&[b, iy as usize, ix as usize, ch]) * kernel.at(&[ky, kx, ch]);
                            }
                        }
                    }
                    out.data_mut()[((b * h + y) * w + xx) * c + ch] = acc;
                }
            }
        }
    }
    out
}

pub fn map(x: &Tensor<f64>, f: impl Fn(f64) -> f64) -> Tensor<f64> {
    x.map(f)
}

pub fn zip(a: &Tensor<f64>, b: &Tensor<f64>, f: impl Fn(f64, f64) -> f64) -> Tensor<f64> {
    assert_eq!(a.shape(), b.shape());
    Tensor::new(a.shape().to_vec(), a.data().iter().zip(b.data()).map(|(&x, &y)| f(x, y)).collect()).unwrap()
}

pub fn add(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    zip(a, b, |x, y| x + y)
}

pub fn mul(a: &Tensor<f64>, b: &Tensor<f64>) -> Tensor<f64> {
    zip(a, b, |x, y| x * y)
}

pub fn relu(x: &Tensor<f64>) -> Tensor<f64> {
    map(x, |v| v.max(0.0))
}

pub fn gelu(x: &Tensor<f64>) -> Tensor<f64> {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    map(x, |v| 0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh()))
}

pub fn sigmoid(x: &Tensor<f64>) -> Tensor<f64> {
    map(x, |v| 1.0 / (1.0 + (-v).exp()))
}

/// Per-channel `(mean, biased variance)` over every axis but the last.
pub fn channel_stats(x: &Tensor<f64>) -> (Vec<f64>, Vec<f64>) {
    let c = *x.shape().last().unwrap();
    let rows = x.numel() / c;
    let mut mean = vec![0.0; c];
    for (i, v) in x.data().iter().enumerate() {
        mean[i % c] += v / rows as f64;
    }
    let mut var = vec![0.0; c];
    for (i, v) in x.data().iter().enumerate() {
        var[i % c] += (v - mean[i % c]).powi(2) / rows as f64;
    }
    (mean, var)
}

pub fn normalize(x: &Tensor<f64>, mean: &[f64], var: &[f64], gamma: &[f64], beta: &[f64], eps: f64) -> Tensor<f64> {
    let c = mean.len();
    let data = x
        .data()
        .iter()
        .enumerate()
        .map(|(i, &v)| {
            let ch = i % c;
            (v - mean[ch]) / (var[ch] + eps).sqrt() * gamma[ch] + beta[ch]
        })
        .collect();
    Tensor::new(x.shape().to_vec(), data).unwrap()
}

pub fn layer_norm(x: &Tensor<f64>, gamma: &[f64], beta: &[f64], eps: f64) -> Tensor<f64> {
    let c = gamma.len();
    let mut out = Vec::with_capacity(x.numel());
    for row in x.data().chunks(c) {
        let m = row.iter().sum::<f64>() / c as f64;
        let v = row.iter().map(|r| (r - m).powi(2)).sum::<f64>() / c as f64;
        for (j, &r) in row.iter().enumerate() {
            out.push((r - m) / (v + eps).sqrt() * gamma[j] + beta[j]);
        }
    }
    Tensor::new(x.shape().to_vec(), out).unwrap()
}

pub fn maxpool(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, c] = dims(x);
    Tensor::from_fn([n, h / 2, w / 2, c], |i| {
        let ch = i % c;
        let ox = (i / c) % (w / 2);
        let oy = (i / c / (w / 2)) % (h / 2);
        let b = i / c / (w / 2) / (h / 2);
        let mut m = f64::NEG_INFINITY;
        for dy in 0..2 {
            for dx in 0..2 {
                m = m.max(x.at(&[b, 2 * oy + dy, 2 * ox + dx, ch]));
            }
        }
        m
    })
}

pub fn upsample(x: &Tensor<f64>) -> Tensor<f64> {
    let [n, h, w, c] = dims(x);
    Tensor::from_fn([n, 2 * h, 2 * w, c], |i| {
        let ch = i % c;
        let ox = (i / c) % (2 * w);
        let oy = (i / c / (2 * w)) % (2 * h);
        let b = i / c / (2 * w) / (2 * h);
        x.at(&[b, oy / 2, ox / 2, ch])
    })
}

/// Row-major `[m, k] x [k, n]`.
pub fn matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}

pub fn transpose(a: &[f64], rows: usize, cols: usize) -> Vec<f64> {
    let mut out = vec![0.0; a.len()];
    for i in 0..rows {
        for j in 0..cols {
            out[j * rows + i] = a[i * cols + j];
        }
    }
    out
}

pub fn softmax_rows(a: &mut [f64], cols: usize) {
    for row in a.chunks_mut(cols) {
        let m = row.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let s: f64 = row.iter().map(|v| (v - m).exp()).sum();
        row.iter_mut().for_each(|v| *v = (*v - m).exp() / s);
    }
}

/// Evaluates blocks from raw registry tensors, in inference mode (running
/// statistics) or training mode (batch statistics).
pub struct Reference<'a> {
    pub store: &'a ParamStore<f64>,
    pub train: bool,
}

impl Reference<'_> {
    pub fn t(&self, name: &str) -> &Tensor<f64> {
        self.store.get(name).unwrap()
    }

    pub fn conv(&self, p: &str, x: &Tensor<f64>) -> Tensor<f64> {
        let bias = self.store.get(&format!("{p}.bias")).ok();
        conv(x, self.t(&format!("{p}.kernel")), bias)
    }

    pub fn bn(&self, p: &str, x: &Tensor<f64>) -> Tensor<f64> {
        let gamma = self.t(&format!("{p}.gamma")).data();
        let beta = self.t(&format!("{p}.beta")).data();
        if self.train {
            let (m, v) = channel_stats(x);
            normalize(x, &m, &v, gamma, beta, BN_EPS)
        } else {
            let b = self.store.bn(p).unwrap();
            normalize(x, &b.mean, &b.var, gamma, beta, BN_EPS)
        }
    }

    pub fn unit(&self, p: &str, x: &Tensor<f64>) -> Tensor<f64> {
        relu(&self.bn(p, &self.conv(p, x)))
    }

    pub fn conv_bn(&self, p: &str, x: &Tensor<f64>) -> Tensor<f64> {
        self.bn(p, &self.conv(p, x))
    }
}
