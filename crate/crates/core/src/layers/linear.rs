use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::{gemm, init_weights, Tensor};

/// Fully-connected layer `y = x·Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Linear<T> {
    /// `[out, in]`
    pub weight: Tensor<T>,
    /// `[out]`
    pub bias: Tensor<T>,
}

#[derive(Debug, Clone)]
pub struct LinearGrads<T> {
    pub input: Tensor<T>,
    pub weight: Tensor<T>,
    pub bias: Tensor<T>,
}

impl<T: Scalar> Linear<T> {
    pub fn new(in_features: usize, out_features: usize, rng: &mut Rng) -> Self {
        Linear {
            weight: init_weights(&[out_features, in_features], in_features, rng),
            bias: Tensor::zeros(&[out_features]),
        }
    }

    pub fn from_weights(weight: Tensor<T>, bias: Tensor<T>) -> Result<Self> {
        if weight.rank() != 2 || bias.shape() != [weight.shape()[0]] {
            return Err(Error::shape("linear", weight.shape(), bias.shape()));
        }
        Ok(Linear { weight, bias })
    }

    pub fn in_features(&self) -> usize {
        self.weight.shape()[1]
    }

    pub fn out_features(&self) -> usize {
        self.weight.shape()[0]
    }

    pub fn param_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    fn check_input(&self, input: &Tensor<T>) -> Result<usize> {
        if input.rank() != 2 || input.shape()[1] != self.in_features() {
            return Err(Error::shape("linear", input.shape(), self.weight.shape()));
        }
        Ok(input.shape()[0])
    }

    pub fn forward(&self, input: &Tensor<T>) -> Result<Tensor<T>> {
        let n = self.check_input(input)?;
        let (out, inp) = (self.out_features(), self.in_features());
        let mut y = Tensor::zeros(&[n, out]);
        for row in y.data_mut().chunks_mut(out) {
            row.copy_from_slice(self.bias.data());
        }
        gemm(
            false,
            true,
            n,
            out,
            inp,
            T::one(),
            input.data(),
            self.weight.data(),
            T::one(),
            y.data_mut(),
        );
        Ok(y)
    }

    pub fn backward(&self, input: &Tensor<T>, grad_out: &Tensor<T>) -> Result<LinearGrads<T>> {
        let n = self.check_input(input)?;
        let (out, inp) = (self.out_features(), self.in_features());
        if grad_out.shape() != [n, out] {
            return Err(Error::shape("linear backward", grad_out.shape(), &[n, out]));
        }
        let mut gx = Tensor::zeros(&[n, inp]);
        gemm(
            false,
            false,
            n,
            inp,
            out,
            T::one(),
            grad_out.data(),
            self.weight.data(),
            T::zero(),
            gx.data_mut(),
        );
        let mut gw = Tensor::zeros(&[out, inp]);
        gemm(
            true,
            false,
            out,
            inp,
            n,
            T::one(),
            grad_out.data(),
            input.data(),
            T::zero(),
            gw.data_mut(),
        );
        let mut gb = Tensor::zeros(&[out]);
        for row in grad_out.data().chunks(out) {
            for (b, &g) in gb.data_mut().iter_mut().zip(row) {
                *b += g;
            }
        }
        Ok(LinearGrads {
            input: gx,
            weight: gw,
            bias: gb,
        })
    }
}
