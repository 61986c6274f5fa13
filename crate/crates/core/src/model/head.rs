//! Classification head: batch normalization, dropout, a ReLU dense layer
//! and a 4-way softmax output.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{Error, Result};
use crate::model::backbone::Tensor;
use crate::model::nn;

pub(crate) const BN_EPSILON: f32 = 1e-3;

#[derive(Debug, Clone)]
pub struct Head {
    pub(crate) gamma: Tensor,
    pub(crate) beta: Tensor,
    pub(crate) running_mean: Tensor,
    pub(crate) running_var: Tensor,
    pub(crate) hidden_w: Tensor,
    pub(crate) hidden_b: Tensor,
    pub(crate) out_w: Tensor,
    pub(crate) out_b: Tensor,
    pub(crate) dropout: f32,
    pub(crate) momentum: f32,
}

/// Gradients in the order of [`Head::trainable`].
pub(crate) type HeadGrads = [Vec<f32>; 6];

pub(crate) struct HeadStep {
    /// Mean categorical cross-entropy over the batch.
    pub loss: f64,
    pub correct: usize,
    pub grad_features: Vec<Vec<f32>>,
    pub grads: HeadGrads,
}

impl Head {
    pub fn new(
        features: usize,
        hidden: usize,
        classes: usize,
        dropout: f32,
        momentum: f32,
        rng: &mut ChaCha8Rng,
    ) -> Self {
        let mut gamma = Tensor::zeros("head.bn.gamma", vec![features]);
        gamma.data.fill(1.0);
        let mut running_var = Tensor::zeros("head.bn.running_var", vec![features]);
        running_var.data.fill(1.0);
        // Glorot-uniform output layer, He-normal hidden layer.
        let limit = (6.0 / (hidden + classes) as f64).sqrt();
        let glorot = Uniform::new_inclusive(-limit, limit);
        let mut out_w = Tensor::zeros("head.out.weight", vec![classes, hidden]);
        for v in &mut out_w.data {
            *v = glorot.sample(rng) as f32;
        }
        Head {
            gamma,
            beta: Tensor::zeros("head.bn.beta", vec![features]),
            running_mean: Tensor::zeros("head.bn.running_mean", vec![features]),
            running_var,
            hidden_w: Tensor::he_normal("head.hidden.weight", vec![hidden, features], features, rng),
            hidden_b: Tensor::zeros("head.hidden.bias", vec![hidden]),
            out_w,
            out_b: Tensor::zeros("head.out.bias", vec![classes]),
            dropout,
            momentum,
        }
    }

    pub fn features(&self) -> usize {
        self.gamma.len()
    }

    pub fn hidden(&self) -> usize {
        self.hidden_b.len()
    }

    pub fn classes(&self) -> usize {
        self.out_b.len()
    }

    /// Parameters updated by the optimizer.
    pub(crate) fn trainable(&self) -> [&Tensor; 6] {
        [&self.gamma, &self.beta, &self.hidden_w, &self.hidden_b, &self.out_w, &self.out_b]
    }

    pub(crate) fn trainable_mut(&mut self) -> [&mut Tensor; 6] {
        [&mut self.gamma, &mut self.beta, &mut self.hidden_w, &mut self.hidden_b, &mut self.out_w, &mut self.out_b]
    }

    /// Every stored tensor, including the normalization statistics.
    pub(crate) fn all_tensors(&self) -> Vec<&Tensor> {
        let [g, b, hw, hb, ow, ob] = self.trainable();
        vec![g, b, &self.running_mean, &self.running_var, hw, hb, ow, ob]
    }

    pub(crate) fn all_tensors_mut(&mut self) -> Vec<&mut Tensor> {
        vec![
            &mut self.gamma,
            &mut self.beta,
            &mut self.running_mean,
            &mut self.running_var,
            &mut self.hidden_w,
            &mut self.hidden_b,
            &mut self.out_w,
            &mut self.out_b,
        ]
    }

    fn dense(x: &[f32], rows: usize, w: &Tensor, b: &Tensor) -> Vec<f32> {
        let (out, inp) = (w.shape[0], w.shape[1]);
        let mut y: Vec<f32> = (0..rows).flat_map(|_| b.data.iter().copied()).collect();
        nn::gemm(rows, inp, out, x, false, &w.data, true, 1.0, &mut y);
        y
    }

    /// Inference-mode logits: running statistics, no dropout.
    pub fn logits(&self, features: &[f32]) -> Vec<f32> {
        let normed: Vec<f32> = features
            .iter()
            .enumerate()
            .map(|(j, x)| {
                let inv = 1.0 / (self.running_var.data[j] + BN_EPSILON).sqrt();
                self.gamma.data[j] * (x - self.running_mean.data[j]) * inv + self.beta.data[j]
            })
            .collect();
        let mut hidden = Self::dense(&normed, 1, &self.hidden_w, &self.hidden_b);
        hidden.iter_mut().for_each(|v| *v = v.max(0.0));
        Self::dense(&hidden, 1, &self.out_w, &self.out_b)
    }

    /// Training-mode forward and backward over one batch. Updates the
    /// running statistics as a side effect.
    pub(crate) fn train_step(
        &mut self,
        batch: &[Vec<f32>],
        labels: &[usize],
        rng: &mut ChaCha8Rng,
    ) -> Result<HeadStep> {
        let n = batch.len();
        let f = self.features();
        let hdim = self.hidden();
        let k = self.classes();
        if n == 0 || labels.len() != n {
            return Err(Error::Shape(format!("{n} features for {} labels", labels.len())));
        }

        // Batch normalization with biased batch variance.
        let mut mean = vec![0.0f32; f];
        let mut var = vec![0.0f32; f];
        for x in batch {
            for j in 0..f {
                mean[j] += x[j];
            }
        }
        mean.iter_mut().for_each(|m| *m /= n as f32);
        for x in batch {
            for j in 0..f {
                var[j] += (x[j] - mean[j]).powi(2);
            }
        }
        var.iter_mut().for_each(|v| *v /= n as f32);
        let inv_std: Vec<f32> = var.iter().map(|v| 1.0 / (v + BN_EPSILON).sqrt()).collect();
        let mut xhat = vec![0.0f32; n * f];
        let mut bn = vec![0.0f32; n * f];
        for (i, x) in batch.iter().enumerate() {
            for j in 0..f {
                let v = (x[j] - mean[j]) * inv_std[j];
                xhat[i * f + j] = v;
                bn[i * f + j] = self.gamma.data[j] * v + self.beta.data[j];
            }
        }
        // Keras-style running statistics (unbiased variance).
        let unbias = if n > 1 { n as f32 / (n as f32 - 1.0) } else { 1.0 };
        for j in 0..f {
            let m = self.momentum;
            self.running_mean.data[j] = m * self.running_mean.data[j] + (1.0 - m) * mean[j];
            self.running_var.data[j] = m * self.running_var.data[j] + (1.0 - m) * var[j] * unbias;
        }

        // Inverted dropout.
        let keep = 1.0 - self.dropout;
        let drop_mask: Vec<f32> =
            (0..n * f).map(|_| if self.dropout == 0.0 || rng.gen::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect();
        let dropped: Vec<f32> = bn.iter().zip(&drop_mask).map(|(a, m)| a * m).collect();

        let pre_hidden = Self::dense(&dropped, n, &self.hidden_w, &self.hidden_b);
        let hidden: Vec<f32> = pre_hidden.iter().map(|v| v.max(0.0)).collect();
        let logits = Self::dense(&hidden, n, &self.out_w, &self.out_b);

        let mut loss = 0.0f64;
        let mut correct = 0;
        let mut grad_logits = vec![0.0f32; n * k];
        for i in 0..n {
            let row = &logits[i * k..(i + 1) * k];
            let probs = softmax_f32(row);
            let label = labels[i];
            loss -= (probs[label].max(1e-12) as f64).ln();
            if argmax(&probs) == label {
                correct += 1;
            }
            for c in 0..k {
                grad_logits[i * k + c] = (probs[c] - if c == label { 1.0 } else { 0.0 }) / n as f32;
            }
        }
        loss /= n as f64;

        let mut g_out_w = vec![0.0f32; k * hdim];
        nn::gemm(k, n, hdim, &grad_logits, true, &hidden, false, 0.0, &mut g_out_w);
        let g_out_b: Vec<f32> = (0..k).map(|c| (0..n).map(|i| grad_logits[i * k + c]).sum()).collect();
        let mut g_hidden = vec![0.0f32; n * hdim];
        nn::gemm(n, k, hdim, &grad_logits, false, &self.out_w.data, false, 0.0, &mut g_hidden);
        for (g, p) in g_hidden.iter_mut().zip(&pre_hidden) {
            if *p <= 0.0 {
                *g = 0.0;
            }
        }
        let mut g_hidden_w = vec![0.0f32; hdim * f];
        nn::gemm(hdim, n, f, &g_hidden, true, &dropped, false, 0.0, &mut g_hidden_w);
        let g_hidden_b: Vec<f32> = (0..hdim).map(|c| (0..n).map(|i| g_hidden[i * hdim + c]).sum()).collect();
        let mut g_dropped = vec![0.0f32; n * f];
        nn::gemm(n, hdim, f, &g_hidden, false, &self.hidden_w.data, false, 0.0, &mut g_dropped);
        let g_bn: Vec<f32> = g_dropped.iter().zip(&drop_mask).map(|(g, m)| g * m).collect();

        let mut g_gamma = vec![0.0f32; f];
        let mut g_beta = vec![0.0f32; f];
        for i in 0..n {
            for j in 0..f {
                g_gamma[j] += g_bn[i * f + j] * xhat[i * f + j];
                g_beta[j] += g_bn[i * f + j];
            }
        }
        let mut grad_features = vec![vec![0.0f32; f]; n];
        for j in 0..f {
            // dx = γ·inv_std/n · (n·dy − Σdy − x̂·Σ(dy·x̂))
            let scale = self.gamma.data[j] * inv_std[j] / n as f32;
            for (i, gf) in grad_features.iter_mut().enumerate() {
                gf[j] = scale * (n as f32 * g_bn[i * f + j] - g_beta[j] - xhat[i * f + j] * g_gamma[j]);
            }
        }

        Ok(HeadStep {
            loss,
            correct,
            grad_features,
            grads: [g_gamma, g_beta, g_hidden_w, g_hidden_b, g_out_w, g_out_b],
        })
    }
}

fn softmax_f32(row: &[f32]) -> Vec<f32> {
    let max = row.iter().copied().fold(f32::NEG_INFINITY, f32::max);
    let exps: Vec<f32> = row.iter().map(|v| (v - max).exp()).collect();
    let sum: f32 = exps.iter().sum();
    exps.into_iter().map(|e| e / sum).collect()
}

/// Index of the largest value; ties go to the lowest index.
pub(crate) fn argmax<T: PartialOrd + Copy>(values: &[T]) -> usize {
    let mut best = 0;
    for (i, v) in values.iter().enumerate() {
        if *v > values[best] {
            best = i;
        }
    }
    best
}

#[cfg(test)]
mod tests {
    use rand::SeedableRng;

    use super::*;

    fn head(dropout: f32) -> Head {
        Head::new(5, 6, 4, dropout, 0.9, &mut ChaCha8Rng::seed_from_u64(1))
    }

    fn batch() -> (Vec<Vec<f32>>, Vec<usize>) {
        let b = vec![
            vec![0.1, 0.5, -0.3, 1.2, 0.0],
            vec![0.7, -0.2, 0.4, 0.1, 0.9],
            vec![-0.5, 0.3, 0.8, -1.0, 0.2],
            vec![0.2, 0.1, 0.0, 0.5, -0.4],
        ];
        (b, vec![0, 1, 2, 3])
    }

    fn loss_of(h: &Head, feats: &[Vec<f32>], labels: &[usize]) -> f64 {
        let mut h = h.clone();
        h.train_step(feats, labels, &mut ChaCha8Rng::seed_from_u64(0)).unwrap().loss
    }

    #[test]
    fn gradients_match_finite_differences() {
        let h = head(0.0);
        let (feats, labels) = batch();
        let mut hh = h.clone();
        let step = hh.train_step(&feats, &labels, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let eps = 1e-3f32;
        for (t, grad) in step.grads.iter().enumerate() {
            for i in 0..grad.len() {
                let mut plus = h.clone();
                plus.trainable_mut()[t].data[i] += eps;
                let mut minus = h.clone();
                minus.trainable_mut()[t].data[i] -= eps;
                let fd = (loss_of(&plus, &feats, &labels) - loss_of(&minus, &feats, &labels)) / (2.0 * eps as f64);
                assert!((fd - grad[i] as f64).abs() < 2e-3, "tensor {t}[{i}]: fd {fd} vs {}", grad[i]);
            }
        }
        for s in 0..feats.len() {
            for j in 0..5 {
                let mut plus = feats.clone();
                plus[s][j] += eps;
                let mut minus = feats.clone();
                minus[s][j] -= eps;
                let fd = (loss_of(&h, &plus, &labels) - loss_of(&h, &minus, &labels)) / (2.0 * eps as f64);
                let g = step.grad_features[s][j] as f64;
                assert!((fd - g).abs() < 2e-3, "feature {s},{j}: fd {fd} vs {g}");
            }
        }
    }

    #[test]
    fn running_statistics_track_batches() {
        let mut h = head(0.3);
        let (feats, labels) = batch();
        for _ in 0..200 {
            h.train_step(&feats, &labels, &mut ChaCha8Rng::seed_from_u64(2)).unwrap();
        }
        let mean0: f32 = feats.iter().map(|x| x[0]).sum::<f32>() / 4.0;
        assert!((h.running_mean.data[0] - mean0).abs() < 1e-4);
    }

    #[test]
    fn single_sample_batch_normalizes_to_beta() {
        let mut h = head(0.0);
        let step = h.train_step(&[vec![0.3; 5]], &[0], &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(step.loss.is_finite());
        assert!(step.grad_features[0].iter().all(|g| g.abs() < 1e-6));
        assert!(h.train_step(&[vec![0.3; 5]], &[], &mut ChaCha8Rng::seed_from_u64(0)).is_err());
    }

    #[test]
    fn argmax_ties_go_low() {
        assert_eq!(argmax(&[0.25, 0.25, 0.25, 0.25]), 0);
        assert_eq!(argmax(&[0.1, 0.4, 0.4, 0.1]), 1);
    }
}
