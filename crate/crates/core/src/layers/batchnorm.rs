//! Per-channel batch normalization over `(N, T, H, W)`.
//!
//! Train mode normalizes with the biased batch variance and folds the batch
//! statistics into the running estimates:
//! `running ← (1 − momentum)·running + momentum·batch`.
//! Eval mode normalizes with the running estimates. Statistics are
//! accumulated in `f64` regardless of the storage type.
//!
//! An all-zero channel has zero mean and variance, so `x̂ = 0 / √eps = 0`
//! and the output is exactly `beta`.

use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{expect_rank5, Mode};

pub const BN_EPS: f64 = 1e-5;
pub const BN_MOMENTUM: f64 = 0.1;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchNorm3d<T> {
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
    pub running_mean: Tensor<T>,
    pub running_var: Tensor<T>,
    pub eps: f64,
    pub momentum: f64,
}

/// Saved train-mode state for the backward pass.
#[derive(Debug, Clone)]
pub struct BnCache<T> {
    pub x_hat: Tensor<T>,
    pub inv_std: Vec<f64>,
}

#[derive(Debug, Clone)]
pub struct BnGrads<T> {
    pub input: Tensor<T>,
    pub gamma: Tensor<T>,
    pub beta: Tensor<T>,
}

/// Iterates the `(N, spatial)` planes of channel `c` in a `[N,C,S]` buffer.
fn channel_planes<T>(data: &[T], n: usize, ch: usize, spatial: usize, c: usize) -> impl Iterator<Item = &[T]> {
    (0..n).map(move |i| {
        let start = (i * ch + c) * spatial;
        &data[start..start + spatial]
    })
}

impl<T: Scalar> BatchNorm3d<T> {
    /// gamma = 1, beta = 0, running mean 0, running variance 1.
    pub fn new(channels: usize) -> Self {
        BatchNorm3d {
            gamma: Tensor::ones(&[channels]),
            beta: Tensor::zeros(&[channels]),
            running_mean: Tensor::zeros(&[channels]),
            running_var: Tensor::ones(&[channels]),
            eps: BN_EPS,
            momentum: BN_MOMENTUM,
        }
    }

    pub fn channels(&self) -> usize {
        self.gamma.len()
    }

    pub fn param_count(&self) -> usize {
        self.gamma.len() + self.beta.len()
    }

    fn dims(&self, shape: &[usize]) -> Result<(usize, usize, usize)> {
        let [n, c, t, h, w] = expect_rank5("batchnorm3d", shape)?;
        if c != self.channels() {
            return Err(Error::invalid(format!(
                "batchnorm3d: input has {c} channels, layer has {}",
                self.channels()
            )));
        }
        Ok((n, c, t * h * w))
    }

    pub fn forward(&mut self, input: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.forward_train(input).map(|(y, _)| y),
            Mode::Eval => self.forward_eval(input),
        }
    }

    pub fn forward_train(&mut self, input: &Tensor<T>) -> Result<(Tensor<T>, BnCache<T>)> {
        let (n, ch, spatial) = self.dims(input.shape())?;
        let count = n * spatial;
        if count < 2 {
            return Err(Error::invalid(
                "batchnorm3d: train mode needs at least 2 values per channel",
            ));
        }
        let x = input.data();
        let mut x_hat = Tensor::zeros(input.shape());
        let mut out = Tensor::zeros(input.shape());
        let mut inv_std = Vec::with_capacity(ch);
        for c in 0..ch {
            let mean = channel_planes(x, n, ch, spatial, c)
                .flat_map(|p| p.iter())
                .map(|v| v.as_f64())
                .sum::<f64>()
                / count as f64;
            let var = channel_planes(x, n, ch, spatial, c)
                .flat_map(|p| p.iter())
                .map(|v| {
                    let d = v.as_f64() - mean;
                    d * d
                })
                .sum::<f64>()
                / count as f64;
            let istd = 1.0 / (var + self.eps).sqrt();
            inv_std.push(istd);
            let (g, b) = (self.gamma.data()[c], self.beta.data()[c]);
            for i in 0..n {
                let start = (i * ch + c) * spatial;
                for k in start..start + spatial {
                    let xh = T::of((x[k].as_f64() - mean) * istd);
                    x_hat.data_mut()[k] = xh;
                    out.data_mut()[k] = g * xh + b;
                }
            }
            let m = self.momentum;
            let rm = &mut self.running_mean.data_mut()[c];
            *rm = T::of((1.0 - m) * rm.as_f64() + m * mean);
            let rv = &mut self.running_var.data_mut()[c];
            *rv = T::of((1.0 - m) * rv.as_f64() + m * var);
        }
        Ok((out, BnCache { x_hat, inv_std }))
    }

    pub fn forward_eval(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, ch, spatial) = self.dims(input.shape())?;
        let mut out = input.clone();
        for c in 0..ch {
            let istd = 1.0 / (self.running_var.data()[c].as_f64() + self.eps).sqrt();
            let scale = T::of(self.gamma.data()[c].as_f64() * istd);
            let mean = self.running_mean.data()[c];
            let b = self.beta.data()[c];
            for i in 0..n {
                let start = (i * ch + c) * spatial;
                for v in &mut out.data_mut()[start..start + spatial] {
                    *v = (*v - mean) * scale + b;
                }
            }
        }
        Ok(out)
    }

    /// Full batch-norm gradient, including the terms that flow through the
    /// batch mean and variance:
    /// `dx = inv_std/M · (M·dx̂ − Σdx̂ − x̂·Σ(dx̂·x̂))` with `dx̂ = γ·dy`.
    pub fn backward(&self, cache: &BnCache<T>, grad_out: &Tensor<T>) -> Result<BnGrads<T>> {
        if grad_out.shape() != cache.x_hat.shape() {
            return Err(Error::shape(
                "batchnorm3d backward",
                grad_out.shape(),
                cache.x_hat.shape(),
            ));
        }
        let (n, ch, spatial) = self.dims(grad_out.shape())?;
        let count = (n * spatial) as f64;
        let dy = grad_out.data();
        let xh = cache.x_hat.data();
        let mut grad_input = Tensor::zeros(grad_out.shape());
        let mut grad_gamma = vec![0.0; ch];
        let mut grad_beta = vec![0.0; ch];
        for c in 0..ch {
            let (mut sum_dy, mut sum_dy_xh) = (0.0f64, 0.0f64);
            for i in 0..n {
                let start = (i * ch + c) * spatial;
                for k in start..start + spatial {
                    sum_dy += dy[k].as_f64();
                    sum_dy_xh += dy[k].as_f64() * xh[k].as_f64();
                }
            }
            grad_gamma[c] = sum_dy_xh;
            grad_beta[c] = sum_dy;
            let g = self.gamma.data()[c].as_f64();
            let k_scale = g * cache.inv_std[c] / count;
            for i in 0..n {
                let start = (i * ch + c) * spatial;
                for k in start..start + spatial {
                    let v = count * dy[k].as_f64() - sum_dy - xh[k].as_f64() * sum_dy_xh;
                    grad_input.data_mut()[k] = T::of(k_scale * v);
                }
            }
        }
        Ok(BnGrads {
            input: grad_input,
            gamma: Tensor::from_f64(&[ch], &grad_gamma)?,
            beta: Tensor::from_f64(&[ch], &grad_beta)?,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    #[test]
    fn constant_channel_normalizes_to_zero() {
        let mut bn = BatchNorm3d::<f64>::new(2);
        let x = Tensor::full(&[2, 2, 1, 2, 2], 3.5);
        let y = bn.forward(&x, Mode::Train).unwrap();
        assert!(y.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn all_zero_input_returns_beta_exactly() {
        let mut bn = BatchNorm3d::<f32>::new(2);
        bn.gamma = Tensor::from_f64(&[2], &[3.0, -7.0]).unwrap();
        bn.beta = Tensor::from_f64(&[2], &[0.25, -1.5]).unwrap();
        let y = bn.forward(&Tensor::zeros(&[1, 2, 2, 1, 1]), Mode::Train).unwrap();
        assert_eq!(y.data(), &[0.25, 0.25, -1.5, -1.5]);
    }

    #[test]
    fn two_value_channel() {
        let mut bn = BatchNorm3d::<f64>::new(1);
        let x = Tensor::from_f64(&[2, 1, 1, 1, 1], &[1.0, 3.0]).unwrap();
        let y = bn.forward(&x, Mode::Train).unwrap();
        // mean 2, biased variance 1
        let want = 1.0 / (1.0f64 + 1e-5).sqrt();
        assert!((y.data()[0] + want).abs() < 1e-15);
        assert!((y.data()[1] - want).abs() < 1e-15);
        assert!((bn.running_mean.data()[0] - 0.2).abs() < 1e-15);
        assert!((bn.running_var.data()[0] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn train_output_is_standardized() {
        let mut rng = Rng::new(8);
        let mut bn = BatchNorm3d::<f64>::new(3);
        let x = Tensor::from_fn(&[4, 3, 2, 3, 3], |_| 5.0 + 2.0 * rng.normal());
        let y = bn.forward(&x, Mode::Train).unwrap();
        for c in 0..3 {
            let vals: Vec<f64> = (0..4)
                .flat_map(|n| y.data()[(n * 3 + c) * 18..(n * 3 + c + 1) * 18].to_vec())
                .collect();
            let mean = vals.iter().sum::<f64>() / vals.len() as f64;
            let var = vals.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / vals.len() as f64;
            assert!(mean.abs() < 1e-5);
            assert!((var - 1.0).abs() < 1e-3);
            assert!(bn.running_var.data()[c] >= 0.0);
        }
    }

    #[test]
    fn single_value_per_channel_rejected_in_train() {
        let mut bn = BatchNorm3d::<f32>::new(2);
        let x = Tensor::ones(&[1, 2, 1, 1, 1]);
        assert!(bn.forward(&x, Mode::Train).is_err());
        assert!(bn.forward(&x, Mode::Eval).is_ok());
    }

    #[test]
    fn eval_is_per_channel_affine() {
        let mut rng = Rng::new(2);
        let mut bn = BatchNorm3d::<f64>::new(2);
        bn.gamma = Tensor::from_f64(&[2], &[1.5, -0.5]).unwrap();
        bn.running_var = Tensor::from_f64(&[2], &[4.0, 0.25]).unwrap();
        bn.running_mean = Tensor::from_f64(&[2], &[1.0, -1.0]).unwrap();
        let x = Tensor::from_fn(&[2, 2, 1, 2, 2], |_| rng.normal());
        let mut x2 = x.clone();
        let delta = 0.3;
        let idx = [1, 1, 0, 1, 0];
        x2.set(&idx, x.get(&idx) + delta);
        let (y, y2) = (bn.forward_eval(&x).unwrap(), bn.forward_eval(&x2).unwrap());
        for off in 0..y.len() {
            let d = y2.data()[off] - y.data()[off];
            if off == y.offset(&idx) {
                let want = -0.5 * delta / (0.25f64 + 1e-5).sqrt();
                assert!((d - want).abs() < 1e-12);
            } else {
                assert_eq!(d, 0.0);
            }
        }
    }
}
