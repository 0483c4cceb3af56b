use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{gemm, init_weights, Tensor};

use super::expect_rank5;

/// `floor((input + 2·pad − kernel) / stride) + 1`, or `None` when that is
/// not a positive extent.
pub fn conv_output_extent(input: usize, kernel: usize, stride: usize, pad: usize) -> Option<usize> {
    if stride == 0 || kernel == 0 || input + 2 * pad < kernel {
        return None;
    }
    Some((input + 2 * pad - kernel) / stride + 1)
}

/// 3D convolution (cross-correlation) with zero padding.
#[derive(Debug, Clone, PartialEq)]
pub struct Conv3d<T> {
    /// `[out_ch, in_ch, kT, kH, kW]`
    pub weight: Tensor<T>,
    /// `[out_ch]`; absent for convolutions followed by batch norm.
    pub bias: Option<Tensor<T>>,
    pub stride: [usize; 3],
    pub padding: [usize; 3],
}

#[derive(Debug, Clone)]
pub struct ConvGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Option<Tensor<T>>,
}

/// Index arithmetic shared by im2col and col2im for one sample.
#[derive(Debug, Clone, Copy)]
struct Geometry {
    channels: usize,
    input: [usize; 3],
    kernel: [usize; 3],
    stride: [usize; 3],
    pad: [usize; 3],
    output: [usize; 3],
}

impl Geometry {
    fn rows(&self) -> usize {
        self.channels * self.kernel.iter().product::<usize>()
    }

    fn cols(&self) -> usize {
        self.output.iter().product()
    }

    fn input_len(&self) -> usize {
        self.channels * self.input.iter().product::<usize>()
    }

    /// Input coordinate along `axis` hit by output position `o` and kernel
    /// tap `k`, if it falls inside the unpadded input.
    #[inline]
    fn source(&self, axis: usize, o: usize, k: usize) -> Option<usize> {
        (o * self.stride[axis] + k)
            .checked_sub(self.pad[axis])
            .filter(|&i| i < self.input[axis])
    }

    /// Output positions `lo..hi` along `axis` whose source for tap `k` lies
    /// inside the input.
    fn valid_range(&self, axis: usize, k: usize) -> (usize, usize) {
        let (n, p, s, o) = (self.input[axis], self.pad[axis], self.stride[axis], self.output[axis]);
        let lo = if k >= p { 0 } else { (p - k).div_ceil(s) };
        let hi = if n + p > k { ((n + p - k - 1) / s + 1).min(o) } else { 0 };
        (lo.min(o), hi.max(lo.min(o)))
    }

    /// Visits each column-matrix row segment of length `output[2]` in
    /// row-major order as `(slot, Some((first_src, lo, hi)))`, where slots
    /// `slot+lo..slot+hi` read the input at `first_src` onward with the
    /// width stride; everything else in the segment is padding. `None`
    /// marks a segment that is entirely padding.
    fn for_each_row(&self, mut f: impl FnMut(usize, Option<(usize, usize, usize)>)) {
        let [it, ih, iw] = self.input;
        let [kt, kh, kw] = self.kernel;
        let [ot, oh, ow] = self.output;
        let mut slot = 0;
        for c in 0..self.channels {
            let base_c = c * it * ih * iw;
            for a in 0..kt {
                for b in 0..kh {
                    for d in 0..kw {
                        let (lo, hi) = self.valid_range(2, d);
                        for to in 0..ot {
                            let ti = self.source(0, to, a);
                            for ho in 0..oh {
                                let row = match (ti, self.source(1, ho, b)) {
                                    (Some(t), Some(h)) if lo < hi => {
                                        let w0 = lo * self.stride[2] + d - self.pad[2];
                                        Some((base_c + (t * ih + h) * iw + w0, lo, hi))
                                    }
                                    _ => None,
                                };
                                f(slot, row);
                                slot += ow;
                            }
                        }
                    }
                }
            }
        }
    }

    fn im2col<T: Scalar>(&self, input: &[T], col: &mut [T]) {
        let ow = self.output[2];
        let sw = self.stride[2];
        self.for_each_row(|slot, row| {
            let dst = &mut col[slot..slot + ow];
            match row {
                None => dst.fill(T::zero()),
                Some((src, lo, hi)) => {
                    dst[..lo].fill(T::zero());
                    if sw == 1 {
                        dst[lo..hi].copy_from_slice(&input[src..src + hi - lo]);
                    } else {
                        for (j, v) in dst[lo..hi].iter_mut().enumerate() {
                            *v = input[src + j * sw];
                        }
                    }
                    dst[hi..].fill(T::zero());
                }
            }
        });
    }

    /// Scatter-adds a column matrix back onto the input grid.
    fn col2im<T: Scalar>(&self, col: &[T], grad_input: &mut [T]) {
        let sw = self.stride[2];
        self.for_each_row(|slot, row| {
            if let Some((src, lo, hi)) = row {
                for (j, v) in col[slot + lo..slot + hi].iter().enumerate() {
                    grad_input[src + j * sw] += *v;
                }
            }
        });
    }
}

impl<T: Scalar> Conv3d<T> {
    /// Rectifier-scaled Gaussian weights; bias (when requested) starts at 0.
    pub fn new(
        in_ch: usize,
        out_ch: usize,
        kernel: [usize; 3],
        stride: [usize; 3],
        padding: [usize; 3],
        bias: bool,
        rng: &mut Rng,
    ) -> Self {
        let fan_in = in_ch * kernel.iter().product::<usize>();
        let shape = [out_ch, in_ch, kernel[0], kernel[1], kernel[2]];
        Conv3d {
            weight: init_weights(&shape, fan_in, rng),
            bias: bias.then(|| Tensor::zeros(&[out_ch])),
            stride,
            padding,
        }
    }

    pub fn from_weights(
        weight: Tensor<T>,
        bias: Option<Tensor<T>>,
        stride: [usize; 3],
        padding: [usize; 3],
    ) -> Result<Self> {
        let w = expect_rank5("conv3d weight", weight.shape())?;
        if let Some(b) = &bias {
            if b.shape() != [w[0]] {
                return Err(Error::shape("conv3d bias", b.shape(), &[w[0]]));
            }
        }
        if stride.contains(&0) {
            return Err(Error::invalid("conv3d: stride must be positive"));
        }
        Ok(Conv3d {
            weight,
            bias,
            stride,
            padding,
        })
    }

    pub fn out_channels(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn in_channels(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn kernel(&self) -> [usize; 3] {
        let s = self.weight.shape();
        [s[2], s[3], s[4]]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.as_ref().map_or(0, |b| b.len())
    }

    fn geometry(&self, input_shape: &[usize]) -> Result<(usize, Geometry)> {
        let [n, c, t, h, w] = expect_rank5("conv3d", input_shape)?;
        if c != self.in_channels() {
            return Err(Error::invalid(format!(
                "conv3d: input has {c} channels, layer expects {}",
                self.in_channels()
            )));
        }
        let input = [t, h, w];
        let kernel = self.kernel();
        let mut output = [0; 3];
        for axis in 0..3 {
            output[axis] = conv_output_extent(input[axis], kernel[axis], self.stride[axis], self.padding[axis])
                .ok_or_else(|| {
                    Error::invalid(format!(
                        "conv3d: non-positive output extent on axis {axis} \
                             (input {}, kernel {}, pad {})",
                        input[axis], kernel[axis], self.padding[axis]
                    ))
                })?;
        }
        Ok((
            n,
            Geometry {
                channels: c,
                input,
                kernel,
                stride: self.stride,
                pad: self.padding,
                output,
            },
        ))
    }

    pub fn output_shape(&self, input_shape: &[usize]) -> Result<[usize; 5]> {
        let (n, g) = self.geometry(input_shape)?;
        Ok([n, self.out_channels(), g.output[0], g.output[1], g.output[2]])
    }

    /// Lowered to one GEMM per sample: `out[n] = W[O,K] · col[K,P]`.
    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let (n, g) = self.geometry(input.shape())?;
        let out_ch = self.out_channels();
        let (rows, cols) = (g.rows(), g.cols());
        let mut out = Tensor::zeros(&[n, out_ch, g.output[0], g.output[1], g.output[2]]);
        out.data_mut()
            .par_chunks_mut(out_ch * cols)
            .zip(input.data().par_chunks(g.input_len()))
            .for_each_init(
                || vec![T::zero(); rows * cols],
                |col, (y, x)| {
                    g.im2col(x, col);
                    gemm(
                        false,
                        false,
                        out_ch,
                        cols,
                        rows,
                        T::one(),
                        self.weight.data(),
                        col,
                        T::zero(),
                        y,
                    );
                    if let Some(bias) = &self.bias {
                        for (o, plane) in y.chunks_mut(cols).enumerate() {
                            let b = bias.data()[o];
                            plane.iter_mut().for_each(|v| *v += b);
                        }
                    }
                },
            );
        debug_assert_eq!(n, out.shape()[0]);
        Ok(out)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<ConvGrads<T>> {
        let (weight, bias) = self.param_grads(input, grad_out)?;
        let (_, g) = self.geometry(input.shape())?;
        let out_ch = self.out_channels();
        let (rows, cols) = (g.rows(), g.cols());

        let mut grad_input = Tensor::zeros(input.shape());
        grad_input
            .data_mut()
            .par_chunks_mut(g.input_len())
            .zip(grad_out.data().par_chunks(out_ch * cols))
            .for_each_init(
                || vec![T::zero(); rows * cols],
                |col, (gx, gy)| {
                    gemm(
                        true,
                        false,
                        rows,
                        cols,
                        out_ch,
                        T::one(),
                        self.weight.data(),
                        gy,
                        T::zero(),
                        col,
                    );
                    g.col2im(col, gx);
                },
            );

        Ok(ConvGrads {
            input: grad_input,
            weight,
            bias,
        })
    }

    /// Weight and bias gradients only, for layers whose input needs no
    /// gradient (the network stem).
    pub fn param_grads(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<(Tensor<T>, Option<Tensor<T>>)> {
        let out_shape = self.output_shape(input.shape())?;
        if grad_out.shape() != out_shape {
            return Err(Error::shape("conv3d backward", grad_out.shape(), &out_shape));
        }
        let (_, g) = self.geometry(input.shape())?;
        let out_ch = self.out_channels();
        let (rows, cols) = (g.rows(), g.cols());

        // Weight gradient accumulates over samples in index order.
        let mut grad_weight = Tensor::zeros(self.weight.shape());
        let mut col = vec![T::zero(); rows * cols];
        for (x, gy) in input
            .data()
            .chunks(g.input_len())
            .zip(grad_out.data().chunks(out_ch * cols))
        {
            g.im2col(x, &mut col);
            gemm(
                false,
                true,
                out_ch,
                rows,
                cols,
                T::one(),
                gy,
                &col,
                T::one(),
                grad_weight.data_mut(),
            );
        }

        let grad_bias = self.bias.as_ref().map(|_| {
            let mut acc = vec![0.0f64; out_ch];
            for sample in grad_out.data().chunks(out_ch * cols) {
                for (o, plane) in sample.chunks(cols).enumerate() {
                    acc[o] += plane.iter().map(|v| v.as_f64()).sum::<f64>();
                }
            }
            Tensor::from_f64(&[out_ch], &acc).expect("bias shape")
        });
        Ok((grad_weight, grad_bias))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn identity_kernel(ch: usize) -> Conv3d<f64> {
        let w = Tensor::from_fn(&[ch, ch, 1, 1, 1], |i| if i / ch == i % ch { 1.0 } else { 0.0 });
        Conv3d::from_weights(w, None, [1; 3], [0; 3]).unwrap()
    }

    #[test]
    fn unit_kernel_is_identity() {
        let mut rng = Rng::new(1);
        let x = Tensor::<f64>::from_fn(&[2, 3, 2, 3, 4], |_| rng.normal());
        let conv = identity_kernel(3);
        assert_eq!(conv.forward(&x).unwrap(), x);
        let g = conv.backward(&x, &x).unwrap();
        assert_eq!(g.input, x);
    }

    #[test]
    fn ones_kernel_on_ones_input() {
        // 2×2×2 input, 3×3×3 kernel, pad 1: every window covers all 8 inputs.
        let conv = Conv3d::from_weights(Tensor::<f64>::ones(&[1, 1, 3, 3, 3]), None, [1; 3], [1; 3]).unwrap();
        let y = conv.forward(&Tensor::ones(&[1, 1, 2, 2, 2])).unwrap();
        assert_eq!(y.shape(), &[1, 1, 2, 2, 2]);
        assert!(y.data().iter().all(|&v| v == 8.0));
    }

    #[test]
    fn stem_output_shape() {
        let conv = Conv3d::<f32>::new(3, 64, [7; 3], [1, 2, 2], [3; 3], false, &mut Rng::new(0));
        assert_eq!(conv.output_shape(&[2, 3, 16, 112, 112]).unwrap(), [2, 64, 16, 56, 56]);
    }

    #[test]
    fn zero_upstream_gradient_gives_zero_gradients() {
        let mut rng = Rng::new(4);
        let conv = Conv3d::<f64>::new(2, 3, [3; 3], [2; 3], [1; 3], true, &mut rng);
        let x = Tensor::from_fn(&[2, 2, 3, 4, 4], |_| rng.normal());
        let gy = Tensor::zeros(&conv.output_shape(x.shape()).unwrap());
        let g = conv.backward(&x, &gy).unwrap();
        assert!(g.input.data().iter().all(|&v| v == 0.0));
        assert!(g.weight.data().iter().all(|&v| v == 0.0));
        assert!(g.bias.unwrap().data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn errors() {
        let conv = Conv3d::<f32>::new(2, 3, [3; 3], [1; 3], [0; 3], false, &mut Rng::new(0));
        assert!(conv.forward(&Tensor::zeros(&[1, 3, 4, 4, 4])).is_err());
        assert!(conv.forward(&Tensor::zeros(&[1, 2, 2, 4, 4])).is_err());
        let x = Tensor::zeros(&[1, 2, 4, 4, 4]);
        assert!(conv.backward(&x, &Tensor::zeros(&[1, 3, 1, 1, 1])).is_err());
    }
}
