//! A two-hidden-layer ReLU network used as the neural-linear feature map,
//! trained with AdaGrad on a weighted squared error.

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::data::Dataset;
use crate::error::{Error, Result};
use crate::rng::ChaCha8Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MlpConfig {
    pub hidden: usize,
    pub batch_norm: bool,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// AdaGrad steps per training round.
    pub steps: usize,
}

impl Default for MlpConfig {
    fn default() -> Self {
        Self { hidden: 30, batch_norm: false, learning_rate: 0.05, batch_size: 32, steps: 1000 }
    }
}

const BN_EPS: f64 = 1e-5;
const BN_MOMENTUM: f64 = 0.1;
const ADAGRAD_EPS: f64 = 1e-8;

/// Parameter layout inside the flat vector.
#[derive(Debug, Clone, Copy, PartialEq)]
struct Layout {
    d: usize,
    h: usize,
    bn: bool,
}

impl Layout {
    fn w1(&self) -> usize { 0 }
    fn b1(&self) -> usize { self.h * self.d }
    fn w2(&self) -> usize { self.b1() + self.h }
    fn b2(&self) -> usize { self.w2() + self.h * self.h }
    fn head(&self) -> usize { self.b2() + self.h }
    fn bias(&self) -> usize { self.head() + self.h }
    /// gamma1, beta1, gamma2, beta2 when batch norm is on.
    fn bn(&self) -> usize { self.bias() + 1 }
    fn len(&self) -> usize { self.bn() + if self.bn { 4 * self.h } else { 0 } }
}

#[derive(Debug, Clone, PartialEq)]
struct RunningStats {
    mean: [Vec<f64>; 2],
    var: [Vec<f64>; 2],
}

#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    layout: Layout,
    params: Vec<f64>,
    running: Option<RunningStats>,
}

/// Per-example activations kept for the backward pass.
struct Cache {
    x: Vec<f64>,
    pre: [Vec<f64>; 2],
    normed: [Vec<f64>; 2],
    out: [Vec<f64>; 2],
}

impl Mlp {
    pub fn new(d: usize, hidden: usize, batch_norm: bool, rng: &mut ChaCha8Rng) -> Result<Self> {
        if d == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("network dimensions must be positive".into()));
        }
        let layout = Layout { d, h: hidden, bn: batch_norm };
        let mut params = vec![0.0; layout.len()];
        let mut he = |slice: &mut [f64], fan_in: usize| {
            let sd = (2.0 / fan_in as f64).sqrt();
            for p in slice {
                *p = sd * rng.sample::<f64, _>(StandardNormal);
            }
        };
        he(&mut params[layout.w1()..layout.b1()], d);
        he(&mut params[layout.w2()..layout.b2()], hidden);
        he(&mut params[layout.head()..layout.bias()], 2 * hidden);
        let running = batch_norm.then(|| {
            for k in 0..2 {
                let g = layout.bn() + 2 * k * hidden;
                params[g..g + hidden].iter_mut().for_each(|v| *v = 1.0);
            }
            RunningStats {
                mean: [vec![0.0; hidden], vec![0.0; hidden]],
                var: [vec![1.0; hidden], vec![1.0; hidden]],
            }
        });
        Ok(Self { layout, params, running })
    }

    pub fn input_dim(&self) -> usize {
        self.layout.d
    }

    pub fn hidden(&self) -> usize {
        self.layout.h
    }

    fn gamma_beta(&self, layer: usize) -> (&[f64], &[f64]) {
        let h = self.layout.h;
        let g = self.layout.bn() + 2 * layer * h;
        (&self.params[g..g + h], &self.params[g + h..g + 2 * h])
    }

    fn affine(&self, layer: usize, input: &[f64]) -> Vec<f64> {
        let l = &self.layout;
        let (w, b, fan_in) = if layer == 0 { (l.w1(), l.b1(), l.d) } else { (l.w2(), l.b2(), l.h) };
        (0..l.h)
            .map(|j| {
                let row = &self.params[w + j * fan_in..w + (j + 1) * fan_in];
                self.params[b + j] + row.iter().zip(input).map(|(a, x)| a * x).sum::<f64>()
            })
            .collect()
    }

    /// Last-hidden-layer features in evaluation mode.
    pub fn embed(&self, x: &[f64]) -> Vec<f64> {
        let mut input = x.to_vec();
        for layer in 0..2 {
            let mut a = self.affine(layer, &input);
            if let Some(stats) = &self.running {
                let (gamma, beta) = self.gamma_beta(layer);
                for j in 0..a.len() {
                    let normed = (a[j] - stats.mean[layer][j]) / (stats.var[layer][j] + BN_EPS).sqrt();
                    a[j] = gamma[j] * normed + beta[j];
                }
            }
            a.iter_mut().for_each(|v| *v = v.max(0.0));
            input = a;
        }
        input
    }

    pub fn predict(&self, x: &[f64]) -> f64 {
        let z = self.embed(x);
        let l = &self.layout;
        self.params[l.bias()] + z.iter().zip(&self.params[l.head()..l.bias()]).map(|(a, b)| a * b).sum::<f64>()
    }

    /// `sum_n w_n (y_n - prediction_n)^2` in evaluation mode.
    pub fn weighted_loss(&self, ds: &Dataset, w: &[(usize, f64)]) -> Result<f64> {
        let labels = ds.require_labels()?;
        Ok(w.iter().map(|&(i, wi)| wi * (labels[i] - self.predict(ds.row(i))).powi(2)).sum())
    }

    /// Mean weighted squared error and its gradient on one minibatch, in
    /// training mode (batch statistics when batch norm is on).
    fn batch_gradient(&mut self, batch: &[(&[f64], f64, f64)]) -> (f64, Vec<f64>) {
        let l = self.layout;
        let h = l.h;
        let b = batch.len() as f64;
        let mut caches: Vec<Cache> = batch
            .iter()
            .map(|(x, _, _)| Cache {
                x: x.to_vec(),
                pre: [vec![], vec![]],
                normed: [vec![], vec![]],
                out: [vec![], vec![]],
            })
            .collect();

        let mut batch_stats: [(Vec<f64>, Vec<f64>); 2] = Default::default();
        for layer in 0..2 {
            for c in caches.iter_mut() {
                let input = if layer == 0 { c.x.clone() } else { c.out[0].clone() };
                c.pre[layer] = self.affine(layer, &input);
            }
            if l.bn {
                let mut mean = vec![0.0; h];
                let mut var = vec![0.0; h];
                for c in &caches {
                    for j in 0..h {
                        mean[j] += c.pre[layer][j] / b;
                    }
                }
                for c in &caches {
                    for j in 0..h {
                        var[j] += (c.pre[layer][j] - mean[j]).powi(2) / b;
                    }
                }
                let (gamma, beta) = self.gamma_beta(layer);
                let (gamma, beta) = (gamma.to_vec(), beta.to_vec());
                for c in caches.iter_mut() {
                    c.normed[layer] = (0..h).map(|j| (c.pre[layer][j] - mean[j]) / (var[j] + BN_EPS).sqrt()).collect();
                    c.out[layer] = (0..h).map(|j| (gamma[j] * c.normed[layer][j] + beta[j]).max(0.0)).collect();
                }
                if let Some(stats) = self.running.as_mut() {
                    for j in 0..h {
                        stats.mean[layer][j] = (1.0 - BN_MOMENTUM) * stats.mean[layer][j] + BN_MOMENTUM * mean[j];
                        stats.var[layer][j] = (1.0 - BN_MOMENTUM) * stats.var[layer][j] + BN_MOMENTUM * var[j];
                    }
                }
                batch_stats[layer] = (mean, var);
            } else {
                for c in caches.iter_mut() {
                    c.out[layer] = c.pre[layer].iter().map(|v| v.max(0.0)).collect();
                }
            }
        }

        let mut grad = vec![0.0; l.len()];
        let mut loss = 0.0;
        let head = self.params[l.head()..l.bias()].to_vec();
        // Gradient with respect to the post-BN (pre-ReLU) activations.
        let mut upstream: Vec<Vec<f64>> = Vec::with_capacity(batch.len());
        for (c, &(_, y, w)) in caches.iter().zip(batch) {
            let pred = self.params[l.bias()] + c.out[1].iter().zip(&head).map(|(a, b)| a * b).sum::<f64>();
            let r = pred - y;
            loss += w * r * r / b;
            let dpred = 2.0 * w * r / b;
            grad[l.bias()] += dpred;
            for j in 0..h {
                grad[l.head() + j] += dpred * c.out[1][j];
            }
            upstream.push((0..h).map(|j| if c.out[1][j] > 0.0 { dpred * head[j] } else { 0.0 }).collect());
        }

        for layer in (0..2).rev() {
            let dpre = if l.bn {
                self.batch_norm_backward(layer, &caches, &upstream, &batch_stats[layer].1, &mut grad)
            } else {
                upstream.clone()
            };
            let (w_off, b_off, fan_in) = if layer == 0 { (l.w1(), l.b1(), l.d) } else { (l.w2(), l.b2(), h) };
            let mut next = Vec::with_capacity(batch.len());
            for (c, dp) in caches.iter().zip(&dpre) {
                let input = if layer == 0 { &c.x } else { &c.out[0] };
                let mut dinput = vec![0.0; fan_in];
                for j in 0..h {
                    if dp[j] == 0.0 {
                        continue;
                    }
                    grad[b_off + j] += dp[j];
                    for k in 0..fan_in {
                        grad[w_off + j * fan_in + k] += dp[j] * input[k];
                        dinput[k] += dp[j] * self.params[w_off + j * fan_in + k];
                    }
                }
                if layer == 1 {
                    // Through the first layer's ReLU.
                    for k in 0..fan_in {
                        if c.out[0][k] <= 0.0 {
                            dinput[k] = 0.0;
                        }
                    }
                }
                next.push(dinput);
            }
            upstream = next;
        }
        (loss, grad)
    }

    /// Backward pass through `gamma * normalize(a) + beta`.
    fn batch_norm_backward(
        &self,
        layer: usize,
        caches: &[Cache],
        upstream: &[Vec<f64>],
        var: &[f64],
        grad: &mut [f64],
    ) -> Vec<Vec<f64>> {
        let h = self.layout.h;
        let b = caches.len() as f64;
        let g_off = self.layout.bn() + 2 * layer * h;
        let (gamma, _) = self.gamma_beta(layer);
        let mut sum_dy = vec![0.0; h];
        let mut sum_dy_xhat = vec![0.0; h];
        for (c, dy) in caches.iter().zip(upstream) {
            for j in 0..h {
                sum_dy[j] += dy[j];
                sum_dy_xhat[j] += dy[j] * c.normed[layer][j];
            }
        }
        for j in 0..h {
            grad[g_off + j] += sum_dy_xhat[j];
            grad[g_off + h + j] += sum_dy[j];
        }
        caches
            .iter()
            .zip(upstream)
            .map(|(c, dy)| {
                (0..h)
                    .map(|j| {
                        let inv_sd = 1.0 / (var[j] + BN_EPS).sqrt();
                        gamma[j] * inv_sd * (dy[j] - sum_dy[j] / b - c.normed[layer][j] * sum_dy_xhat[j] / b)
                    })
                    .collect()
            })
            .collect()
    }

    /// One AdaGrad training round on the positively weighted rows.
    pub fn train(&mut self, ds: &Dataset, w: &[(usize, f64)], cfg: &MlpConfig, rng: &mut ChaCha8Rng) -> Result<()> {
        if cfg.steps == 0 {
            return Ok(());
        }
        let labels = ds.require_labels()?;
        let support: Vec<(usize, f64)> = w.iter().copied().filter(|&(_, v)| v > 0.0).collect();
        if support.is_empty() {
            return Err(Error::InvalidArgument("cannot train on an empty coreset".into()));
        }
        let mean_w = support.iter().map(|&(_, v)| v).sum::<f64>() / support.len() as f64;
        let batch_size = cfg.batch_size.clamp(1, support.len().max(1));
        let mut accum = vec![0.0; self.params.len()];
        for step in 0..cfg.steps {
            let batch: Vec<(&[f64], f64, f64)> = (0..batch_size)
                .map(|_| {
                    let (i, wi) = support[rng.random_range(0..support.len())];
                    (ds.row(i), labels[i], wi / mean_w)
                })
                .collect();
            let (loss, grad) = self.batch_gradient(&batch);
            if !loss.is_finite() || grad.iter().any(|g| !g.is_finite()) {
                return Err(Error::Diverged(format!("non-finite loss at step {step}")));
            }
            for ((p, g), a) in self.params.iter_mut().zip(&grad).zip(accum.iter_mut()) {
                *a += g * g;
                *p -= cfg.learning_rate * g / (a.sqrt() + ADAGRAD_EPS);
            }
        }
        Ok(())
    }

    #[cfg(test)]
    fn loss_and_grad(&mut self, batch: &[(&[f64], f64, f64)]) -> (f64, Vec<f64>) {
        let saved = self.running.clone();
        let out = self.batch_gradient(batch);
        self.running = saved;
        out
    }
}
