use crate::error::{Error, Result};
use crate::layers::{expect_rank5, relu_backward, BatchNorm3d, BnCache, Conv3d};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{pad_and_slice, Tensor};

use super::arch::{BLOCK_KERNEL, BLOCK_PADDING};

/// Parameter-free shortcut across a dimension change: keep every
/// `stride`-th position along T, H and W (starting at 0), then append
/// `out_ch − C` all-zero channels.
pub fn type_a_shortcut<T: Scalar>(x: &Tensor<T>, out_ch: usize, stride: usize) -> Result<Tensor<T>> {
    let [_, c, _, _, _] = expect_rank5("type-A shortcut", x.shape())?;
    if out_ch < c {
        return Err(Error::invalid(format!(
            "type-A shortcut cannot shrink channels ({c} -> {out_ch})"
        )));
    }
    if stride == 0 {
        return Err(Error::invalid("type-A shortcut: stride must be positive"));
    }
    pad_and_slice(
        x,
        &[(0, 0), (0, out_ch - c), (0, 0), (0, 0), (0, 0)],
        &[1, 1, stride, stride, stride],
    )
}

/// Transpose of [`type_a_shortcut`]: drop the padded channels and scatter
/// the rest back to the sampled positions; every other position gets 0.
pub fn type_a_shortcut_backward<T: Scalar>(
    grad: &Tensor<T>,
    input_shape: &[usize],
    stride: usize,
) -> Result<Tensor<T>> {
    let [n, c, t, h, w] = expect_rank5("type-A shortcut backward", input_shape)?;
    let [gn, gc, gt, gh, gw] = expect_rank5("type-A shortcut backward", grad.shape())?;
    let sampled = |e: usize| (e - 1) / stride + 1;
    if gn != n || gc < c || gt != sampled(t) || gh != sampled(h) || gw != sampled(w) {
        return Err(Error::shape("type-A shortcut backward", grad.shape(), input_shape));
    }
    let mut out = Tensor::zeros(input_shape);
    let g = grad.data();
    let o = out.data_mut();
    for ni in 0..n {
        for ci in 0..c {
            for ti in 0..gt {
                for hi in 0..gh {
                    let src = (((ni * gc + ci) * gt + ti) * gh + hi) * gw;
                    let dst = (((ni * c + ci) * t + ti * stride) * h + hi * stride) * w;
                    for wi in 0..gw {
                        o[dst + wi * stride] = g[src + wi];
                    }
                }
            }
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shortcut {
    Identity,
    ZeroPad { out_channels: usize, stride: usize },
}

impl Shortcut {
    pub fn forward<T: Scalar>(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        match *self {
            Shortcut::Identity => Ok(x.clone()),
            Shortcut::ZeroPad { out_channels, stride } => type_a_shortcut(x, out_channels, stride),
        }
    }

    pub fn backward<T: Scalar>(&self, grad: &Tensor<T>, input_shape: &[usize]) -> Result<Tensor<T>> {
        match *self {
            Shortcut::Identity => Ok(grad.clone()),
            Shortcut::ZeroPad { stride, .. } => type_a_shortcut_backward(grad, input_shape, stride),
        }
    }
}

/// Two 3×3×3 conv–BN units with a shortcut added before the final ReLU:
/// `out = ReLU(BN_b(conv_b(ReLU(BN_a(conv_a(x))))) + shortcut(x))`.
#[derive(Debug, Clone, PartialEq)]
pub struct BasicBlock<T> {
    pub conv_a: Conv3d<T>,
    pub bn_a: BatchNorm3d<T>,
    pub conv_b: Conv3d<T>,
    pub bn_b: BatchNorm3d<T>,
    pub shortcut: Shortcut,
}

/// Intermediates kept from a train-mode forward pass.
#[derive(Debug, Clone)]
pub struct BlockCache<T> {
    pub input: Tensor<T>,
    pub bn_a: BnCache<T>,
    /// `BN_a` output (ReLU input).
    pub pre_a: Tensor<T>,
    /// ReLU output (conv_b input).
    pub act_a: Tensor<T>,
    pub bn_b: BnCache<T>,
    /// Residual sum before the final ReLU.
    pub sum: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct BlockGrads<T> {
    pub input: Tensor<T>,
    pub conv_a: Tensor<T>,
    pub bn_a_gamma: Tensor<T>,
    pub bn_a_beta: Tensor<T>,
    pub conv_b: Tensor<T>,
    pub bn_b_gamma: Tensor<T>,
    pub bn_b_beta: Tensor<T>,
}

impl<T: Scalar> BasicBlock<T> {
    pub fn new(in_ch: usize, out_ch: usize, stride: usize, rng: &mut Rng) -> Self {
        let shortcut = if stride != 1 || in_ch != out_ch {
            Shortcut::ZeroPad {
                out_channels: out_ch,
                stride,
            }
        } else {
            Shortcut::Identity
        };
        BasicBlock {
            conv_a: Conv3d::new(in_ch, out_ch, BLOCK_KERNEL, [stride; 3], BLOCK_PADDING, false, rng),
            bn_a: BatchNorm3d::new(out_ch),
            conv_b: Conv3d::new(out_ch, out_ch, BLOCK_KERNEL, [1; 3], BLOCK_PADDING, false, rng),
            bn_b: BatchNorm3d::new(out_ch),
            shortcut,
        }
    }

    pub fn param_count(&self) -> usize {
        self.conv_a.param_count() + self.bn_a.param_count() + self.conv_b.param_count() + self.bn_b.param_count()
    }

    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        let a = self.bn_a.forward_eval(&self.conv_a.forward(x)?)?.relu();
        let b = self.bn_b.forward_eval(&self.conv_b.forward(&a)?)?;
        Ok(b.add(&self.shortcut.forward(x)?)?.relu())
    }

    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<(Tensor<T>, BlockCache<T>)> {
        let (pre_a, bn_a) = self.bn_a.forward_train(&self.conv_a.forward(x)?)?;
        let act_a = pre_a.relu();
        let (b, bn_b) = self.bn_b.forward_train(&self.conv_b.forward(&act_a)?)?;
        let sum = b.add(&self.shortcut.forward(x)?)?;
        let out = sum.relu();
        Ok((
            out,
            BlockCache {
                input: x.clone(),
                bn_a,
                pre_a,
                act_a,
                bn_b,
                sum,
            },
        ))
    }

    pub fn backward(&self, cache: &BlockCache<T>, grad_out: &Tensor<T>) -> Result<BlockGrads<T>> {
        let g_sum = relu_backward(&cache.sum, grad_out)?;
        let mut g_input = self.shortcut.backward(&g_sum, cache.input.shape())?;

        let bn_b = self.bn_b.backward(&cache.bn_b, &g_sum)?;
        let conv_b = self.conv_b.backward(&cache.act_a, &bn_b.input)?;
        let g_pre_a = relu_backward(&cache.pre_a, &conv_b.input)?;
        let bn_a = self.bn_a.backward(&cache.bn_a, &g_pre_a)?;
        let conv_a = self.conv_a.backward(&cache.input, &bn_a.input)?;
        g_input.add_assign(&conv_a.input)?;

        Ok(BlockGrads {
            input: g_input,
            conv_a: conv_a.weight,
            bn_a_gamma: bn_a.gamma,
            bn_a_beta: bn_a.beta,
            conv_b: conv_b.weight,
            bn_b_gamma: bn_b.gamma,
            bn_b_beta: bn_b.beta,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_width_unit_stride_is_identity() {
        let mut rng = Rng::new(0);
        let x = Tensor::<f64>::from_fn(&[1, 3, 2, 3, 3], |_| rng.normal());
        assert_eq!(type_a_shortcut(&x, 3, 1).unwrap(), x);
    }

    #[test]
    fn downsampling_zero_pad() {
        let mut rng = Rng::new(1);
        let x = Tensor::<f32>::from_fn(&[1, 64, 8, 28, 28], |_| rng.normal() as f32);
        let y = type_a_shortcut(&x, 128, 2).unwrap();
        assert_eq!(y.shape(), &[1, 128, 4, 14, 14]);
        for c in 0..128 {
            for t in 0..4 {
                for h in 0..14 {
                    for w in 0..14 {
                        let want = if c < 64 {
                            x.get(&[0, c, 2 * t, 2 * h, 2 * w])
                        } else {
                            0.0
                        };
                        assert_eq!(y.get(&[0, c, t, h, w]), want);
                    }
                }
            }
        }
    }

    #[test]
    fn shrinking_is_an_error() {
        assert!(type_a_shortcut(&Tensor::<f32>::zeros(&[1, 4, 1, 1, 1]), 2, 1).is_err());
    }

    #[test]
    fn backward_then_sampling_recovers_gradient() {
        let mut rng = Rng::new(2);
        let in_shape = [2, 3, 5, 4, 3];
        let g = Tensor::<f64>::from_fn(&[2, 5, 3, 2, 2], |_| rng.normal());
        let back = type_a_shortcut_backward(&g, &in_shape, 2).unwrap();
        let resampled = type_a_shortcut(&back, 5, 2).unwrap();
        for off in 0..g.len() {
            let idx = g.unravel(off);
            let want = if idx[1] < 3 { g.data()[off] } else { 0.0 };
            assert_eq!(resampled.data()[off], want);
        }
        // positions not on the sampling grid receive nothing
        let on_grid = |i: &[usize]| i[2] % 2 == 0 && i[3] % 2 == 0 && i[4] % 2 == 0;
        for off in 0..back.len() {
            if !on_grid(&back.unravel(off)) {
                assert_eq!(back.data()[off], 0.0);
            }
        }
    }
}
