use crate::error::{Error, Result};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::{conv_output_extent, expect_rank5};

/// Windowed 3D max pooling. Padded positions behave as −∞, so they never
/// win a window.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct MaxPool3d {
    pub kernel: [usize; 3],
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

/// Argmax routing saved by the forward pass: for every output element, the
/// flat offset of the input element that won its window.
#[derive(Debug, Clone)]
pub struct PoolCache {
    pub input_shape: Vec<usize>,
    pub argmax: Vec<usize>,
}

impl MaxPool3d {
    pub fn new(kernel: [usize; 3], stride: [usize; 3], padding: [usize; 3]) -> Result<Self> {
        if kernel.contains(&0) {
            return Err(Error::invalid("maxpool3d: window smaller than 1"));
        }
        if stride.contains(&0) {
            return Err(Error::invalid("maxpool3d: stride must be positive"));
        }
        if (0..3).any(|a| padding[a] >= kernel[a]) {
            return Err(Error::invalid("maxpool3d: padding must be smaller than the window"));
        }
        Ok(MaxPool3d {
            kernel,
            stride,
            padding,
        })
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<[usize; 5]> {
        let [n, c, t, h, w] = expect_rank5("maxpool3d", input_shape)?;
        let input = [t, h, w];
        let mut out = [n, c, 0, 0, 0];
        for axis in 0..3 {
            out[axis + 2] =
                conv_output_extent(input[axis], self.kernel[axis], self.stride[axis], self.padding[axis])
                    .ok_or_else(|| Error::invalid(format!("maxpool3d: non-positive output extent on axis {axis}")))?;
        }
        Ok(out)
    }

    pub fn forward<T: Scalar>(&self, input: &Tensor<T>) -> Result<(Tensor<T>, PoolCache)> {
        let out_shape = self.output_shape(input.shape())?;
        let [_, _, it, ih, iw] = expect_rank5("maxpool3d", input.shape())?;
        let [n, c, ot, oh, ow] = out_shape;
        let x = input.data();
        let mut out = Vec::with_capacity(out_shape.iter().product());
        let mut argmax = Vec::with_capacity(out.capacity());
        let window = |o: usize, axis: usize, extent: usize| {
            let start = (o * self.stride[axis]) as isize - self.padding[axis] as isize;
            let lo = start.max(0) as usize;
            let hi = ((start + self.kernel[axis] as isize) as usize).min(extent);
            lo..hi
        };
        for plane in 0..n * c {
            let base = plane * it * ih * iw;
            for to in 0..ot {
                for ho in 0..oh {
                    for wo in 0..ow {
                        let mut best: Option<(T, usize)> = None;
                        for ti in window(to, 0, it) {
                            for hi in window(ho, 1, ih) {
                                for wi in window(wo, 2, iw) {
                                    let off = base + (ti * ih + hi) * iw + wi;
                                    match best {
                                        Some((m, _)) if !(x[off] > m) => {}
                                        _ => best = Some((x[off], off)),
                                    }
                                }
                            }
                        }
                        let (m, off) = best.expect("window holds at least one input element");
                        out.push(m);
                        argmax.push(off);
                    }
                }
            }
        }
        Ok((
            Tensor::new(out_shape.to_vec(), out)?,
            PoolCache {
                input_shape: input.shape().to_vec(),
                argmax,
            },
        ))
    }

    /// Scatters each output gradient to its window's argmax; overlapping
    /// windows accumulate.
    pub fn backward<T: Scalar>(&self, cache: &PoolCache, grad_out: &Tensor<T>) -> Result<Tensor<T>> {
        if grad_out.len() != cache.argmax.len() {
            return Err(Error::invalid(format!(
                "maxpool3d backward: gradient {:?} does not match {} saved windows",
                grad_out.shape(),
                cache.argmax.len()
            )));
        }
        let mut grad = Tensor::zeros(&cache.input_shape);
        let g = grad.data_mut();
        for (&off, &v) in cache.argmax.iter().zip(grad_out.data()) {
            g[off] += v;
        }
        Ok(grad)
    }
}

/// Mean over `(T, H, W)`: `[N,C,T,H,W] → [N,C]`.
pub fn global_avgpool<T: Scalar>(input: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, t, h, w] = expect_rank5("global_avgpool", input.shape())?;
    let spatial = t * h * w;
    let data = input
        .data()
        .chunks(spatial)
        .map(|p| T::of(p.iter().map(|v| v.as_f64()).sum::<f64>() / spatial as f64))
        .collect();
    Tensor::new(vec![n, c], data)
}

/// Distributes `grad[n,c] / (T·H·W)` uniformly over the pooled volume.
pub fn global_avgpool_backward<T: Scalar>(input_shape: &[usize], grad_out: &Tensor<T>) -> Result<Tensor<T>> {
    let [n, c, t, h, w] = expect_rank5("global_avgpool backward", input_shape)?;
    if grad_out.shape() != [n, c] {
        return Err(Error::shape("global_avgpool backward", grad_out.shape(), &[n, c]));
    }
    let spatial = t * h * w;
    let inv = T::of(1.0 / spatial as f64);
    let mut grad = Tensor::zeros(input_shape);
    for (plane, &g) in grad.data_mut().chunks_mut(spatial).zip(grad_out.data()) {
        plane.iter_mut().for_each(|v| *v = g * inv);
    }
    Ok(grad)
}
