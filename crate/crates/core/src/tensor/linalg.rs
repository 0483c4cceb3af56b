use crate::error::{Error, Result};
use crate::scalar::Scalar;

use super::Tensor;

/// `C ← alpha·op(A)·op(B) + beta·C` on contiguous row-major buffers.
///
/// `op(A)` is `m×k`; when `trans_a` is set, `a` holds the `k×m` matrix.
/// Likewise `b` holds `k×n`, or `n×k` when `trans_b` is set. With
/// `beta == 0` the previous contents of `c` are ignored.
#[allow(clippy::too_many_arguments)]
pub fn gemm<T: Scalar>(
    trans_a: bool,
    trans_b: bool,
    m: usize,
    n: usize,
    k: usize,
    alpha: T,
    a: &[T],
    b: &[T],
    beta: T,
    c: &mut [T],
) {
    assert_eq!(a.len(), m * k, "gemm: lhs buffer does not hold {m}x{k}");
    assert_eq!(b.len(), k * n, "gemm: rhs buffer does not hold {k}x{n}");
    assert_eq!(c.len(), m * n, "gemm: output buffer does not hold {m}x{n}");
    if m == 0 || n == 0 {
        return;
    }
    let (rsa, csa) = if trans_a { (1, m as isize) } else { (k as isize, 1) };
    let (rsb, csb) = if trans_b { (1, k as isize) } else { (n as isize, 1) };
    // SAFETY: buffer lengths were checked against the extents above and the
    // strides describe a dense row-major layout of exactly those extents.
    unsafe {
        T::gemm_raw(
            m,
            k,
            n,
            alpha,
            a.as_ptr(),
            rsa,
            csa,
            b.as_ptr(),
            rsb,
            csb,
            beta,
            c.as_mut_ptr(),
            n as isize,
            1,
        );
    }
}

/// Matrix product of `[m,k]` and `[k,n]`.
pub fn matmul<T: Scalar>(a: &Tensor<T>, b: &Tensor<T>) -> Result<Tensor<T>> {
    if a.rank() != 2 || b.rank() != 2 {
        return Err(Error::invalid(format!(
            "matmul needs rank-2 operands, got {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    let (m, k) = (a.shape()[0], a.shape()[1]);
    let (k2, n) = (b.shape()[0], b.shape()[1]);
    if k != k2 {
        return Err(Error::shape("matmul", a.shape(), b.shape()));
    }
    let mut out = Tensor::zeros(&[m, n]);
    gemm(
        false,
        false,
        m,
        n,
        k,
        T::one(),
        a.data(),
        b.data(),
        T::zero(),
        out.data_mut(),
    );
    Ok(out)
}
