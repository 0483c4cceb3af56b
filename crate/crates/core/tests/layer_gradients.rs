//! Backward passes against central differences (h = 1e-5) in f64, using
//! the projection loss `L = Σ out ⊙ R` so the upstream gradient is `R`.

mod common;

use common::{dot, max_rel_err, numeric_grad, random_tensor};
use st3d::layers::{
    global_avgpool, global_avgpool_backward, relu, relu_backward, softmax, softmax_cross_entropy, BatchNorm3d, Conv3d,
    Linear, MaxPool3d,
};
use st3d::{Rng, Tensor};

const H: f64 = 1e-5;

#[test]
fn conv3d_small_case() {
    let mut rng = Rng::new(10);
    let mut conv = Conv3d::<f64>::new(2, 3, [3; 3], [2; 3], [1; 3], true, &mut rng);
    conv.bias = Some(random_tensor(&[3], &mut rng));
    let x = random_tensor(&[2, 2, 3, 4, 4], &mut rng);
    let r = random_tensor(&conv.output_shape(x.shape()).unwrap(), &mut rng);
    let g = conv.backward(&x, &r).unwrap();

    let num_x = numeric_grad(&x, H, |p| dot(&conv.forward(p).unwrap(), &r));
    assert!(max_rel_err(g.input.data(), &num_x, 1e-6) < 1e-6);
    let num_w = numeric_grad(&conv.weight, H, |p| {
        let c = Conv3d::from_weights(p.clone(), conv.bias.clone(), conv.stride, conv.padding).unwrap();
        dot(&c.forward(&x).unwrap(), &r)
    });
    assert!(max_rel_err(g.weight.data(), &num_w, 1e-6) < 1e-6);
    let num_b = numeric_grad(conv.bias.as_ref().unwrap(), H, |p| {
        let c = Conv3d::from_weights(conv.weight.clone(), Some(p.clone()), conv.stride, conv.padding).unwrap();
        dot(&c.forward(&x).unwrap(), &r)
    });
    assert!(max_rel_err(g.bias.unwrap().data(), &num_b, 1e-6) < 1e-6);
}

#[test]
fn batchnorm_small_case() {
    let mut rng = Rng::new(11);
    let mut bn = BatchNorm3d::<f64>::new(3);
    bn.gamma = Tensor::from_fn(&[3], |_| 1.0 + 0.3 * rng.normal());
    bn.beta = random_tensor(&[3], &mut rng);
    let x = random_tensor(&[2, 3, 2, 2, 2], &mut rng);
    let r = random_tensor(x.shape(), &mut rng);
    let (_, cache) = bn.clone().forward_train(&x).unwrap();
    let g = bn.backward(&cache, &r).unwrap();

    let loss = |b: &BatchNorm3d<f64>, x: &Tensor<f64>| dot(&b.clone().forward_train(x).unwrap().0, &r);
    let num_x = numeric_grad(&x, H, |p| loss(&bn, p));
    assert!(max_rel_err(g.input.data(), &num_x, 1e-6) < 1e-6);
    let num_gamma = numeric_grad(&bn.gamma, H, |p| {
        let mut b = bn.clone();
        b.gamma = p.clone();
        loss(&b, &x)
    });
    assert!(max_rel_err(g.gamma.data(), &num_gamma, 1e-6) < 1e-6);
    let num_beta = numeric_grad(&bn.beta, H, |p| {
        let mut b = bn.clone();
        b.beta = p.clone();
        loss(&b, &x)
    });
    assert!(max_rel_err(g.beta.data(), &num_beta, 1e-6) < 1e-6);
}

#[test]
fn relu_away_from_zero() {
    let mut rng = Rng::new(12);
    let x = Tensor::from_fn(&[3, 4, 5], |_| {
        let v = rng.normal();
        v.signum() * (0.05 + v.abs())
    });
    let r = random_tensor(x.shape(), &mut rng);
    let g = relu_backward(&x, &r).unwrap();
    let num = numeric_grad(&x, H, |p| dot(&relu(p), &r));
    assert!(max_rel_err(g.data(), &num, 1e-8) < 1e-8);
}

#[test]
fn maxpool_with_distinct_values() {
    let mut rng = Rng::new(13);
    let pool = MaxPool3d::new([3; 3], [2; 3], [1; 3]).unwrap();
    // a permutation of spread-out values keeps every window's maximum
    // unique and far from the runner-up
    let mut vals: Vec<f64> = (0..2 * 2 * 4 * 5 * 5).map(|i| i as f64 * 0.01).collect();
    rng.shuffle(&mut vals);
    let x = Tensor::new(vec![2, 2, 4, 5, 5], vals).unwrap();
    let (y, cache) = pool.forward(&x).unwrap();
    let r = random_tensor(y.shape(), &mut rng);
    let g = pool.backward(&cache, &r).unwrap();
    let num = numeric_grad(&x, H, |p| dot(&pool.forward(p).unwrap().0, &r));
    assert!(max_rel_err(g.data(), &num, 1e-6) < 1e-5);
}

#[test]
fn avgpool_gradient() {
    let mut rng = Rng::new(14);
    let x = random_tensor(&[2, 3, 2, 3, 3], &mut rng);
    let r = random_tensor(&[2, 3], &mut rng);
    let g = global_avgpool_backward(x.shape(), &r).unwrap();
    let num = numeric_grad(&x, H, |p| dot(&global_avgpool(p).unwrap(), &r));
    assert!(max_rel_err(g.data(), &num, 1e-6) < 1e-8);
}

#[test]
fn linear_gradient() {
    let mut rng = Rng::new(15);
    let fc = Linear::from_weights(random_tensor(&[3, 5], &mut rng), random_tensor(&[3], &mut rng)).unwrap();
    let x = random_tensor(&[4, 5], &mut rng);
    let r = random_tensor(&[4, 3], &mut rng);
    let g = fc.backward(&x, &r).unwrap();
    let num_x = numeric_grad(&x, H, |p| dot(&fc.forward(p).unwrap(), &r));
    assert!(max_rel_err(g.input.data(), &num_x, 1e-6) < 1e-8);
    let num_w = numeric_grad(&fc.weight, H, |p| {
        dot(
            &Linear::from_weights(p.clone(), fc.bias.clone())
                .unwrap()
                .forward(&x)
                .unwrap(),
            &r,
        )
    });
    assert!(max_rel_err(g.weight.data(), &num_w, 1e-6) < 1e-8);
    let num_b = numeric_grad(&fc.bias, H, |p| {
        dot(
            &Linear::from_weights(fc.weight.clone(), p.clone())
                .unwrap()
                .forward(&x)
                .unwrap(),
            &r,
        )
    });
    assert!(max_rel_err(g.bias.data(), &num_b, 1e-6) < 1e-8);
}

#[test]
fn softmax_cross_entropy_gradient() {
    let mut rng = Rng::new(16);
    let logits = Tensor::from_fn(&[4, 6], |_| 2.0 * rng.normal());
    let labels = [5, 0, 3, 3];
    let out = softmax_cross_entropy(&logits, &labels).unwrap();
    let num = numeric_grad(&logits, H, |p| softmax_cross_entropy(p, &labels).unwrap().loss);
    assert!(max_rel_err(out.grad.data(), &num, 1e-6) < 1e-5);
    let p = softmax(&logits).unwrap();
    assert_eq!(p.data(), out.probs.data());
}

#[test]
fn batchnorm_eval_perturbation_is_local() {
    let mut rng = Rng::new(17);
    let mut bn = BatchNorm3d::<f64>::new(2);
    bn.gamma = random_tensor(&[2], &mut rng);
    bn.beta = random_tensor(&[2], &mut rng);
    bn.running_mean = random_tensor(&[2], &mut rng);
    bn.running_var = Tensor::from_fn(&[2], |_| 0.5 + rng.uniform());
    let x = random_tensor(&[2, 2, 2, 2, 2], &mut rng);
    let mut x2 = x.clone();
    let (idx, delta) = (21, 0.75);
    x2.data_mut()[idx] += delta;
    let (a, b) = (bn.forward_eval(&x).unwrap(), bn.forward_eval(&x2).unwrap());
    let c = (idx / 8) % 2;
    let want = bn.gamma.data()[c] * delta / (bn.running_var.data()[c] + bn.eps).sqrt();
    for i in 0..a.len() {
        let d = b.data()[i] - a.data()[i];
        if i == idx {
            assert!((d - want).abs() < 1e-12);
        } else {
            assert_eq!(d, 0.0);
        }
    }
}
