//! Independent oracles shared by the integration tests and the acceptance
//! suite. Nothing here calls the code under test except to read inputs.
#![allow(dead_code)]

use st3d::Tensor;

/// Direct convolution by nested loops over output and kernel positions.
pub fn direct_conv3d(
    x: &Tensor<f64>,
    w: &Tensor<f64>,
    bias: Option<&[f64]>,
    stride: [usize; 3],
    pad: [usize; 3],
) -> Tensor<f64> {
    let [n, c, t, h, wd] = <[usize; 5]>::try_from(x.shape()).unwrap();
    let [o, c2, kt, kh, kw] = <[usize; 5]>::try_from(w.shape()).unwrap();
    assert_eq!(c, c2);
    let ext = |e: usize, k: usize, s: usize, p: usize| (e + 2 * p - k) / s + 1;
    let (ot, oh, ow) = (
        ext(t, kt, stride[0], pad[0]),
        ext(h, kh, stride[1], pad[1]),
        ext(wd, kw, stride[2], pad[2]),
    );
    let mut out = Tensor::zeros(&[n, o, ot, oh, ow]);
    for b in 0..n {
        for oc in 0..o {
            for i in 0..ot {
                for j in 0..oh {
                    for k in 0..ow {
                        let mut acc = bias.map_or(0.0, |bb| bb[oc]);
                        for ic in 0..c {
                            for a in 0..kt {
                                for bq in 0..kh {
                                    for cq in 0..kw {
                                        let ti = (i * stride[0] + a) as isize - pad[0] as isize;
                                        let hi = (j * stride[1] + bq) as isize - pad[1] as isize;
                                        let wi = (k * stride[2] + cq) as isize - pad[2] as isize;
                                        if ti < 0
                                            || hi < 0
                                            || wi < 0
                                            || ti >= t as isize
                                            || hi >= h as isize
                                            || wi >= wd as isize
                                        {
                                            continue;
                                        }
                                        acc += x.get(&[b, ic, ti as usize, hi as usize, wi as usize])
                                            * w.get(&[oc, ic, a, bq, cq]);
                                    }
                                }
                            }
                        }
                        out.set(&[b, oc, i, j, k], acc);
                    }
                }
            }
        }
    }
    out
}

pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-12)
}

/// Largest elementwise relative error, with differences below `floor`
/// treated as absolute.
pub fn max_rel_err(a: &[f64], b: &[f64], floor: f64) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()).max(floor))
        .fold(0.0, f64::max)
}

/// Central differences of `f` at every element of `x`.
pub fn numeric_grad(x: &Tensor<f64>, h: f64, mut f: impl FnMut(&Tensor<f64>) -> f64) -> Vec<f64> {
    let mut probe = x.clone();
    (0..x.len())
        .map(|i| {
            let v = x.data()[i];
            probe.data_mut()[i] = v + h;
            let up = f(&probe);
            probe.data_mut()[i] = v - h;
            let down = f(&probe);
            probe.data_mut()[i] = v;
            (up - down) / (2.0 * h)
        })
        .collect()
}

pub fn dot(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    a.data().iter().zip(b.data()).map(|(x, y)| x * y).sum()
}

/// Parameter count read off the architecture table: bias-free 3D convs,
/// two BN scalars per channel, zero-parameter type-A shortcuts, and a
/// biased fully connected layer.
pub fn count_params(depth: usize, classes: usize, widths: [usize; 4], in_ch: usize) -> usize {
    let blocks = match depth {
        18 => [2, 2, 2, 2],
        34 => [3, 4, 6, 3],
        _ => panic!("depth"),
    };
    let conv = |i: usize, o: usize, k: usize| i * o * k * k * k;
    let bn = |c: usize| 2 * c;
    let mut total = conv(in_ch, widths[0], 7) + bn(widths[0]);
    let mut prev = widths[0];
    for s in 0..4 {
        for _ in 0..blocks[s] {
            let out = widths[s];
            total += conv(prev, out, 3) + bn(out) + conv(out, out, 3) + bn(out);
            prev = out;
        }
    }
    total + prev * classes + classes
}

pub fn random_tensor(shape: &[usize], rng: &mut st3d::Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}
