//! Dense row-major tensors and the bulk primitives the layers are built on.

mod io;
mod linalg;

pub use io::TENSOR_MAGIC;
pub use linalg::{gemm, matmul};

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::scalar::Scalar;

/// Dense tensor with row-major (last axis fastest) contiguous storage.
///
/// Invariants: rank ≥ 1, every extent ≥ 1, `data.len() == shape.product()`.
#[derive(Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: fmt::Debug> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor{:?} ", self.shape)?;
        if self.data.len() <= SHOWN {
            write!(f, "{:?}", self.data)
        } else {
            write!(f, "{:?}..", &self.data[..SHOWN])
        }
    }
}

fn check_shape(shape: &[usize]) -> Result<usize> {
    if shape.is_empty() {
        return Err(Error::invalid("tensor rank must be at least 1"));
    }
    if let Some(axis) = shape.iter().position(|&e| e == 0) {
        return Err(Error::invalid(format!(
            "tensor extents must be positive, axis {axis} of {shape:?} is 0"
        )));
    }
    Ok(shape.iter().product())
}

/// Row-major strides for `shape`.
pub fn strides_of(shape: &[usize]) -> Vec<usize> {
    let mut strides = vec![1; shape.len()];
    for axis in (0..shape.len().saturating_sub(1)).rev() {
        strides[axis] = strides[axis + 1] * shape[axis + 1];
    }
    strides
}

impl<T: Copy> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let len = check_shape(&shape)?;
        if len != data.len() {
            return Err(Error::invalid(format!(
                "shape {shape:?} needs {len} elements, buffer has {}",
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        let len = check_shape(shape).expect("invalid shape");
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    /// Builds a tensor by evaluating `f` at every flat row-major offset.
    pub fn from_fn(shape: &[usize], f: impl FnMut(usize) -> T) -> Self {
        let len = check_shape(shape).expect("invalid shape");
        Tensor {
            shape: shape.to_vec(),
            data: (0..len).map(f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn strides(&self) -> Vec<usize> {
        strides_of(&self.shape)
    }

    /// Flat offset of a multi-index. Panics on a wrong rank or an
    /// out-of-range coordinate.
    pub fn offset(&self, index: &[usize]) -> usize {
        assert_eq!(
            index.len(),
            self.shape.len(),
            "index rank {} does not match tensor rank {}",
            index.len(),
            self.shape.len()
        );
        let mut off = 0;
        for (axis, (&i, &extent)) in index.iter().zip(&self.shape).enumerate() {
            assert!(
                i < extent,
                "index {i} out of range for axis {axis} with extent {extent}"
            );
            off = off * extent + i;
        }
        off
    }

    /// Inverse of [`Tensor::offset`].
    pub fn unravel(&self, mut offset: usize) -> Vec<usize> {
        assert!(offset < self.data.len(), "offset {offset} out of range");
        let mut index = vec![0; self.shape.len()];
        for axis in (0..self.shape.len()).rev() {
            index[axis] = offset % self.shape[axis];
            offset /= self.shape[axis];
        }
        index
    }

    pub fn get(&self, index: &[usize]) -> T {
        self.data[self.offset(index)]
    }

    pub fn set(&mut self, index: &[usize], value: T) {
        let off = self.offset(index);
        self.data[off] = value;
    }

    pub fn reshape(self, shape: &[usize]) -> Result<Self> {
        let len = check_shape(shape)?;
        if len != self.data.len() {
            return Err(Error::shape("reshape", &self.shape, shape));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data,
        })
    }

    pub fn map<U: Copy>(&self, f: impl Fn(T) -> U) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&x| f(x)).collect(),
        }
    }

    /// Contiguous sub-block along the leading axis.
    pub fn slice_outer(&self, index: usize) -> &[T] {
        let inner = self.data.len() / self.shape[0];
        &self.data[index * inner..(index + 1) * inner]
    }
}

impl<T: Scalar> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        Tensor::full(shape, T::zero())
    }

    pub fn ones(shape: &[usize]) -> Self {
        Tensor::full(shape, T::one())
    }

    pub fn scalar(value: T) -> Self {
        Tensor::full(&[1], value)
    }

    pub fn from_f64(shape: &[usize], values: &[f64]) -> Result<Self> {
        Tensor::new(shape.to_vec(), values.iter().map(|&v| T::of(v)).collect())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        self.map(|x| U::of(x.as_f64()))
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|x| x.is_finite())
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        elementwise(ElementwiseOp::Add, self, Operand::Tensor(other))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        elementwise(ElementwiseOp::Sub, self, Operand::Tensor(other))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        elementwise(ElementwiseOp::Mul, self, Operand::Tensor(other))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|x| x * s)
    }

    /// `max(x, 0)` pointwise.
    pub fn relu(&self) -> Self {
        self.map(|x| if x > T::zero() { x } else { T::zero() })
    }

    /// In-place `self += other`.
    pub fn add_assign(&mut self, other: &Tensor<T>) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::shape("add_assign", &self.shape, &other.shape));
        }
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
        Ok(())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|x| *x = value);
    }

    pub fn max_abs(&self) -> T {
        self.data
            .iter()
            .fold(T::zero(), |m, &x| if x.abs() > m { x.abs() } else { m })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ElementwiseOp {
    Add,
    Sub,
    Mul,
    /// `max(a, b)`; with a scalar zero operand this is the rectifier.
    Max,
}

/// Right-hand operand of [`elementwise`]: a co-shaped tensor or a scalar
/// broadcast to every element.
#[derive(Debug, Clone, Copy)]
pub enum Operand<'a, T> {
    Tensor(&'a Tensor<T>),
    Scalar(T),
}

pub fn elementwise<T: Scalar>(op: ElementwiseOp, a: &Tensor<T>, b: Operand<'_, T>) -> Result<Tensor<T>> {
    let f = |x: T, y: T| match op {
        ElementwiseOp::Add => x + y,
        ElementwiseOp::Sub => x - y,
        ElementwiseOp::Mul => x * y,
        ElementwiseOp::Max => {
            if y > x {
                y
            } else {
                x
            }
        }
    };
    let data = match b {
        Operand::Scalar(s) => a.data.iter().map(|&x| f(x, s)).collect(),
        Operand::Tensor(t) => {
            if t.shape != a.shape {
                return Err(Error::shape("elementwise", &a.shape, &t.shape));
            }
            a.data.iter().zip(&t.data).map(|(&x, &y)| f(x, y)).collect()
        }
    };
    Ok(Tensor {
        shape: a.shape.clone(),
        data,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReduceKind {
    Sum,
    Mean,
    /// Maximum plus the flat input offset of the first maximizer.
    Max,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Reduction<T> {
    /// Reduced axes are removed; reducing every axis leaves shape `[1]`.
    pub values: Tensor<T>,
    /// For [`ReduceKind::Max`]: flat row-major offset into the *input* of
    /// the first maximizer of each output element.
    pub argmax: Option<Vec<usize>>,
}

pub fn reduce<T: Scalar>(t: &Tensor<T>, axes: &[usize], kind: ReduceKind) -> Result<Reduction<T>> {
    if axes.is_empty() {
        return Err(Error::invalid("reduce: empty axis list"));
    }
    let rank = t.rank();
    let mut reduced = vec![false; rank];
    for &axis in axes {
        if axis >= rank {
            return Err(Error::invalid(format!(
                "reduce: axis {axis} out of range for rank {rank}"
            )));
        }
        if reduced[axis] {
            return Err(Error::invalid(format!("reduce: duplicate axis {axis}")));
        }
        reduced[axis] = true;
    }

    let mut out_shape: Vec<usize> = (0..rank).filter(|&a| !reduced[a]).map(|a| t.shape[a]).collect();
    if out_shape.is_empty() {
        out_shape.push(1);
    }
    let out_len: usize = out_shape.iter().product();
    let group: usize = (0..rank).filter(|&a| reduced[a]).map(|a| t.shape[a]).product();

    // Output offset of every input element, visited in row-major order so
    // that the first maximizer wins ties.
    let kept_strides = {
        let mut strides = vec![0usize; rank];
        let mut acc = 1;
        for axis in (0..rank).rev() {
            if !reduced[axis] {
                strides[axis] = acc;
                acc *= t.shape[axis];
            }
        }
        strides
    };

    let mut acc = vec![0.0f64; out_len];
    let mut best: Vec<Option<(T, usize)>> = vec![None; out_len];
    let mut index = vec![0usize; rank];
    for (flat, &x) in t.data.iter().enumerate() {
        let out: usize = index.iter().zip(&kept_strides).map(|(i, s)| i * s).sum();
        match kind {
            ReduceKind::Sum | ReduceKind::Mean => acc[out] += x.as_f64(),
            ReduceKind::Max => match best[out] {
                Some((m, _)) if !(x > m) => {}
                _ => best[out] = Some((x, flat)),
            },
        }
        for axis in (0..rank).rev() {
            index[axis] += 1;
            if index[axis] < t.shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }

    let (data, argmax) = match kind {
        ReduceKind::Sum => (acc.into_iter().map(T::of).collect(), None),
        ReduceKind::Mean => (acc.into_iter().map(|s| T::of(s / group as f64)).collect(), None),
        ReduceKind::Max => {
            let pairs: Vec<(T, usize)> = best.into_iter().map(|b| b.unwrap()).collect();
            (
                pairs.iter().map(|p| p.0).collect(),
                Some(pairs.iter().map(|p| p.1).collect()),
            )
        }
    };
    Ok(Reduction {
        values: Tensor::new(out_shape, data)?,
        argmax,
    })
}

/// Zero-pads every axis by `(before, after)`, then keeps every `step`-th
/// index starting at 0. Output extent per axis is
/// `(extent + before + after - 1) / step + 1`.
pub fn pad_and_slice<T: Scalar>(t: &Tensor<T>, pads: &[(usize, usize)], steps: &[usize]) -> Result<Tensor<T>> {
    let rank = t.rank();
    if pads.len() != rank || steps.len() != rank {
        return Err(Error::invalid(format!(
            "pad_and_slice: need {rank} pads and steps, got {} and {}",
            pads.len(),
            steps.len()
        )));
    }
    if let Some(axis) = steps.iter().position(|&s| s == 0) {
        return Err(Error::invalid(format!("pad_and_slice: step on axis {axis} is 0")));
    }
    let out_shape: Vec<usize> = (0..rank)
        .map(|a| (t.shape[a] + pads[a].0 + pads[a].1 - 1) / steps[a] + 1)
        .collect();
    let in_strides = t.strides();
    let mut out = Tensor::zeros(&out_shape);
    let mut index = vec![0usize; rank];
    for value in out.data.iter_mut() {
        let mut src = Some(0usize);
        for axis in 0..rank {
            let padded = index[axis] * steps[axis];
            match padded.checked_sub(pads[axis].0) {
                Some(i) if i < t.shape[axis] => {
                    src = src.map(|s| s + i * in_strides[axis]);
                }
                _ => {
                    src = None;
                    break;
                }
            }
        }
        if let Some(s) = src {
            *value = t.data[s];
        }
        for axis in (0..rank).rev() {
            index[axis] += 1;
            if index[axis] < out_shape[axis] {
                break;
            }
            index[axis] = 0;
        }
    }
    Ok(out)
}

/// Zero-mean Gaussian weights with variance `2 / fan_in`.
pub fn init_weights<T: Scalar>(shape: &[usize], fan_in: usize, rng: &mut Rng) -> Tensor<T> {
    assert!(fan_in >= 1, "fan_in must be positive");
    let std = (2.0 / fan_in as f64).sqrt();
    Tensor::from_fn(shape, |_| T::of(rng.normal() * std))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;
    use proptest::prelude::*;

    fn t(shape: &[usize], v: &[f64]) -> Tensor<f64> {
        Tensor::from_f64(shape, v).unwrap()
    }

    #[test]
    fn construction_rejects_bad_shapes() {
        assert!(Tensor::<f32>::new(vec![], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 0], vec![]).is_err());
        assert!(Tensor::<f32>::new(vec![2, 2], vec![1.0; 3]).is_err());
    }

    #[test]
    #[should_panic(expected = "out of range")]
    fn out_of_range_index_panics() {
        Tensor::<f32>::zeros(&[2, 3]).get(&[0, 3]);
    }

    #[test]
    fn elementwise_examples() {
        let a = t(&[2], &[1.0, 2.0]);
        let b = t(&[2], &[3.0, 4.0]);
        assert_eq!(a.add(&b).unwrap().data(), &[4.0, 6.0]);
        assert_eq!(t(&[2], &[1.0, -2.0]).scale(0.0).data(), &[0.0, 0.0]);
        let r = elementwise(ElementwiseOp::Max, &t(&[3], &[-1.0, 0.0, 2.0]), Operand::Scalar(0.0)).unwrap();
        assert_eq!(r.data(), &[0.0, 0.0, 2.0]);
        assert_eq!(t(&[3], &[-1.0, 0.0, 2.0]).relu().data(), &[0.0, 0.0, 2.0]);
    }

    #[test]
    fn elementwise_shape_error_names_both_shapes() {
        let err = t(&[2], &[1.0, 2.0]).add(&Tensor::zeros(&[3])).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2]") && msg.contains("[3]"), "{msg}");
    }

    #[test]
    fn reduce_examples() {
        let s = reduce(&Tensor::<f64>::ones(&[2, 3]), &[0, 1], ReduceKind::Sum).unwrap();
        assert_eq!(s.values.shape(), &[1]);
        assert_eq!(s.values.data(), &[6.0]);

        let m = reduce(&t(&[2, 2], &[1.0, 3.0, 2.0, 4.0]), &[0], ReduceKind::Mean).unwrap();
        assert_eq!(m.values.data(), &[1.5, 3.5]);

        let mx = reduce(&t(&[3], &[5.0, 5.0, 1.0]), &[0], ReduceKind::Max).unwrap();
        assert_eq!(mx.values.data(), &[5.0]);
        assert_eq!(mx.argmax.unwrap(), vec![0]);
    }

    #[test]
    fn reduce_inner_axis_keeps_outer() {
        let x = t(&[2, 3], &[1.0, 7.0, 7.0, -1.0, -2.0, -3.0]);
        let mx = reduce(&x, &[1], ReduceKind::Max).unwrap();
        assert_eq!(mx.values.data(), &[7.0, -1.0]);
        assert_eq!(mx.argmax.unwrap(), vec![1, 3]);
    }

    #[test]
    fn reduce_errors() {
        let x = Tensor::<f64>::ones(&[2, 2]);
        assert!(reduce(&x, &[], ReduceKind::Sum).is_err());
        assert!(reduce(&x, &[1, 1], ReduceKind::Sum).is_err());
        assert!(reduce(&x, &[2], ReduceKind::Sum).is_err());
    }

    #[test]
    fn pad_and_slice_examples() {
        let p = pad_and_slice(&t(&[2], &[1.0, 2.0]), &[(1, 1)], &[1]).unwrap();
        assert_eq!(p.data(), &[0.0, 1.0, 2.0, 0.0]);
        let s = pad_and_slice(&t(&[5], &[0.0, 1.0, 2.0, 3.0, 4.0]), &[(0, 0)], &[2]).unwrap();
        assert_eq!(s.data(), &[0.0, 2.0, 4.0]);
        // padded sequence [0,1,2,3]; indices 0 and 2 are kept
        let ps = pad_and_slice(&t(&[3], &[1.0, 2.0, 3.0]), &[(1, 0)], &[2]).unwrap();
        assert_eq!(ps.data(), &[0.0, 2.0]);
    }

    #[test]
    fn init_weights_is_deterministic_and_scaled() {
        let a: Tensor<f32> = init_weights(&[64], 1_000_000, &mut Rng::new(3));
        let b: Tensor<f32> = init_weights(&[64], 1_000_000, &mut Rng::new(3));
        assert_eq!(
            a.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>(),
            b.data().iter().map(|x| x.to_bits()).collect::<Vec<_>>()
        );
        assert!(a.max_abs() < 0.01);
    }

    #[test]
    fn init_weights_variance() {
        // fan_in 1e6: variance 2e-6; standard error of the sample variance is
        // sqrt(2/n)·σ² for a Gaussian.
        let n = 10_000;
        let w: Tensor<f64> = init_weights(&[n], 1_000_000, &mut Rng::new(11));
        let var = w.data().iter().map(|x| x * x).sum::<f64>() / n as f64;
        let se = (2.0 / n as f64).sqrt() * 2e-6;
        assert!((var - 2e-6).abs() < 3.0 * se, "var {var}");

        let n = 100_000;
        let w: Tensor<f64> = init_weights(&[n], 2, &mut Rng::new(12));
        let var = w.data().iter().map(|x| x * x).sum::<f64>() / n as f64;
        assert!((var - 1.0).abs() < 0.05, "var {var}");
    }

    fn shape_strategy() -> impl Strategy<Value = Vec<usize>> {
        prop::collection::vec(1usize..5, 1..5)
    }

    proptest! {
        #[test]
        fn offset_unravel_round_trip(shape in shape_strategy()) {
            let x = Tensor::<f32>::zeros(&shape);
            for off in 0..x.len() {
                prop_assert_eq!(x.offset(&x.unravel(off)), off);
            }
        }

        #[test]
        fn unit_step_zero_pad_is_identity(shape in shape_strategy(), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let x: Tensor<f64> = Tensor::from_fn(&shape, |_| rng.normal());
            let pads = vec![(0, 0); shape.len()];
            let steps = vec![1; shape.len()];
            prop_assert_eq!(pad_and_slice(&x, &pads, &steps).unwrap(), x);
        }

        #[test]
        fn full_sum_matches_sequential(shape in shape_strategy(), seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let x: Tensor<f32> = Tensor::from_fn(&shape, |_| rng.normal() as f32);
            let axes: Vec<usize> = (0..shape.len()).collect();
            let r = reduce(&x, &axes, ReduceKind::Sum).unwrap().values.data()[0];
            let mut seq = 0.0f64;
            for &v in x.data() { seq += v as f64; }
            prop_assert!(((r as f64) - seq).abs() <= 1e-6 * seq.abs().max(1.0));
        }
    }
}
