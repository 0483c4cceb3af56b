//! Finite-difference verification of every hand-derived backward pass.
//!
//! Each layer is checked in `f64` against central differences with step
//! [`FD_STEP`]. Layers whose output is a tensor are reduced to a scalar by
//! projecting onto a fixed random tensor `R` (loss `Σ out ⊙ R`, so the
//! upstream gradient is `R`). The whole-network check perturbs
//! [`NETWORK_SAMPLES`] randomly chosen parameters of a tiny network under
//! the mean cross-entropy loss.
//!
//! Error metric per element: `|a − n| / max(|a|, |n|, DENOM_FLOOR)`.

use std::fmt;

use crate::error::Result;
use crate::layers::{
    global_avgpool, global_avgpool_backward, relu, relu_backward, softmax_cross_entropy, BatchNorm3d, Conv3d, Linear,
    MaxPool3d,
};
use crate::resnet::{ArchSpec, Network};
use crate::rng::Rng;
use crate::tensor::Tensor;

pub const FD_STEP: f64 = 1e-5;
pub const LAYER_TOLERANCE: f64 = 1e-5;
pub const NETWORK_TOLERANCE: f64 = 1e-4;
pub const NETWORK_SAMPLES: usize = 50;
/// Gradients smaller than this are compared in absolute terms. With an O(1)
/// loss and h = 1e-5 the central difference carries ~1e-10 of roundoff, so
/// relative error is meaningless well below this magnitude.
pub const DENOM_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LayerKind {
    Conv3d,
    BatchNorm3d,
    Relu,
    MaxPool3d,
    GlobalAvgPool,
    FullyConnected,
    SoftmaxCrossEntropy,
    Network,
}

impl LayerKind {
    pub const ALL: [LayerKind; 8] = [
        LayerKind::Conv3d,
        LayerKind::BatchNorm3d,
        LayerKind::Relu,
        LayerKind::MaxPool3d,
        LayerKind::GlobalAvgPool,
        LayerKind::FullyConnected,
        LayerKind::SoftmaxCrossEntropy,
        LayerKind::Network,
    ];

    pub fn name(self) -> &'static str {
        match self {
            LayerKind::Conv3d => "conv3d",
            LayerKind::BatchNorm3d => "batchnorm3d",
            LayerKind::Relu => "relu",
            LayerKind::MaxPool3d => "maxpool3d",
            LayerKind::GlobalAvgPool => "global_avgpool",
            LayerKind::FullyConnected => "fully_connected",
            LayerKind::SoftmaxCrossEntropy => "softmax_cross_entropy",
            LayerKind::Network => "network",
        }
    }

    pub fn parse(name: &str) -> Option<Self> {
        LayerKind::ALL.into_iter().find(|k| k.name() == name)
    }

    pub fn tolerance(self) -> f64 {
        match self {
            LayerKind::Network => NETWORK_TOLERANCE,
            _ => LAYER_TOLERANCE,
        }
    }
}

impl fmt::Display for LayerKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Debug, Clone, Copy, Default)]
pub struct GradcheckOptions {
    pub seed: u64,
    /// Negative control: perturb the analytic gradient of this layer so the
    /// check must fail.
    pub corrupt: Option<LayerKind>,
}

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub layer: LayerKind,
    pub worst: f64,
    pub tolerance: f64,
    /// Number of scalar derivatives compared.
    pub checked: usize,
    /// Network samples rejected because a perturbation crossed a ReLU kink
    /// or changed a pooling argmax.
    pub skipped: usize,
}

impl CheckResult {
    pub fn passed(&self) -> bool {
        self.worst.is_finite() && self.worst < self.tolerance
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(DENOM_FLOOR)
}

fn corrupt(t: &mut Tensor<f64>) {
    for v in t.data_mut() {
        *v = *v * 1.01 + 1e-3;
    }
}

fn random(shape: &[usize], rng: &mut Rng) -> Tensor<f64> {
    Tensor::from_fn(shape, |_| rng.normal())
}

fn project(out: &Tensor<f64>, r: &Tensor<f64>) -> f64 {
    out.data().iter().zip(r.data()).map(|(a, b)| a * b).sum()
}

/// Worst error between `analytic` and central differences of `loss` taken
/// with respect to every element of `x`.
fn compare(
    x: &Tensor<f64>,
    analytic: &Tensor<f64>,
    mut loss: impl FnMut(&Tensor<f64>) -> Result<f64>,
) -> Result<(f64, usize)> {
    let mut worst: f64 = 0.0;
    let mut probe = x.clone();
    for i in 0..x.len() {
        let orig = x.data()[i];
        probe.data_mut()[i] = orig + FD_STEP;
        let up = loss(&probe)?;
        probe.data_mut()[i] = orig - FD_STEP;
        let down = loss(&probe)?;
        probe.data_mut()[i] = orig;
        let numeric = (up - down) / (2.0 * FD_STEP);
        worst = worst.max(relative_error(analytic.data()[i], numeric));
    }
    Ok((worst, x.len()))
}

struct Acc {
    worst: f64,
    checked: usize,
}

impl Acc {
    fn new() -> Self {
        Acc { worst: 0.0, checked: 0 }
    }

    fn add(&mut self, (w, n): (f64, usize)) {
        if w.is_nan() || w > self.worst {
            self.worst = w;
        }
        self.checked += n;
    }

    fn finish(self, layer: LayerKind) -> CheckResult {
        CheckResult {
            layer,
            worst: self.worst,
            tolerance: layer.tolerance(),
            checked: self.checked,
            skipped: 0,
        }
    }
}

pub fn check_layer(kind: LayerKind, opts: &GradcheckOptions) -> Result<CheckResult> {
    let mut rng = Rng::new(opts.seed ^ (kind as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15));
    let bad = opts.corrupt == Some(kind);
    let mut acc = Acc::new();
    match kind {
        LayerKind::Conv3d => {
            let mut conv = Conv3d::<f64>::new(2, 3, [3; 3], [2; 3], [1; 3], true, &mut rng);
            conv.bias = Some(random(&[3], &mut rng));
            let x = random(&[2, 2, 3, 4, 4], &mut rng);
            let r = random(&conv.output_shape(x.shape())?, &mut rng);
            let mut g = conv.backward(&x, &r)?;
            if bad {
                corrupt(&mut g.input);
                corrupt(&mut g.weight);
            }
            acc.add(compare(&x, &g.input, |p| Ok(project(&conv.forward(p)?, &r)))?);
            acc.add(compare(&conv.weight, &g.weight, |p| {
                let mut c = conv.clone();
                c.weight = p.clone();
                Ok(project(&c.forward(&x)?, &r))
            })?);
            let bias = conv.bias.clone().unwrap();
            acc.add(compare(&bias, g.bias.as_ref().unwrap(), |p| {
                let mut c = conv.clone();
                c.bias = Some(p.clone());
                Ok(project(&c.forward(&x)?, &r))
            })?);
        }
        LayerKind::BatchNorm3d => {
            let mut bn = BatchNorm3d::<f64>::new(3);
            bn.gamma = Tensor::from_fn(&[3], |_| 1.0 + 0.5 * rng.normal());
            bn.beta = random(&[3], &mut rng);
            let x = random(&[2, 3, 2, 2, 2], &mut rng);
            let r = random(x.shape(), &mut rng);
            let (_, cache) = bn.clone().forward_train(&x)?;
            let mut g = bn.backward(&cache, &r)?;
            if bad {
                corrupt(&mut g.input);
            }
            acc.add(compare(&x, &g.input, |p| {
                Ok(project(&bn.clone().forward_train(p)?.0, &r))
            })?);
            acc.add(compare(&bn.gamma, &g.gamma, |p| {
                let mut b = bn.clone();
                b.gamma = p.clone();
                Ok(project(&b.forward_train(&x)?.0, &r))
            })?);
            acc.add(compare(&bn.beta, &g.beta, |p| {
                let mut b = bn.clone();
                b.beta = p.clone();
                Ok(project(&b.forward_train(&x)?.0, &r))
            })?);
        }
        LayerKind::Relu => {
            // keep every input at least 0.1 away from the kink
            let x = Tensor::from_fn(&[2, 3, 2, 3, 3], |_| {
                let v = rng.normal();
                v.signum() * (0.1 + v.abs())
            });
            let r = random(x.shape(), &mut rng);
            let mut g = relu_backward(&x, &r)?;
            if bad {
                corrupt(&mut g);
            }
            acc.add(compare(&x, &g, |p| Ok(project(&relu(p), &r)))?);
        }
        LayerKind::MaxPool3d => {
            let pool = MaxPool3d::new([3; 3], [2; 3], [1; 3])?;
            let x = random(&[2, 2, 4, 5, 5], &mut rng);
            let (y, cache) = pool.forward(&x)?;
            let r = random(y.shape(), &mut rng);
            let mut g = pool.backward(&cache, &r)?;
            if bad {
                corrupt(&mut g);
            }
            acc.add(compare(&x, &g, |p| Ok(project(&pool.forward(p)?.0, &r)))?);
        }
        LayerKind::GlobalAvgPool => {
            let x = random(&[2, 3, 2, 3, 3], &mut rng);
            let r = random(&[2, 3], &mut rng);
            let mut g = global_avgpool_backward(x.shape(), &r)?;
            if bad {
                corrupt(&mut g);
            }
            acc.add(compare(&x, &g, |p| Ok(project(&global_avgpool(p)?, &r)))?);
        }
        LayerKind::FullyConnected => {
            let mut fc = Linear::<f64>::new(5, 3, &mut rng);
            fc.bias = random(&[3], &mut rng);
            let x = random(&[4, 5], &mut rng);
            let r = random(&[4, 3], &mut rng);
            let mut g = fc.backward(&x, &r)?;
            if bad {
                corrupt(&mut g.input);
            }
            acc.add(compare(&x, &g.input, |p| Ok(project(&fc.forward(p)?, &r)))?);
            acc.add(compare(&fc.weight, &g.weight, |p| {
                let f = Linear::from_weights(p.clone(), fc.bias.clone())?;
                Ok(project(&f.forward(&x)?, &r))
            })?);
            acc.add(compare(&fc.bias, &g.bias, |p| {
                let f = Linear::from_weights(fc.weight.clone(), p.clone())?;
                Ok(project(&f.forward(&x)?, &r))
            })?);
        }
        LayerKind::SoftmaxCrossEntropy => {
            let logits = Tensor::from_fn(&[4, 5], |_| 3.0 * rng.normal());
            let labels = [0, 4, 2, 2];
            let mut g = softmax_cross_entropy(&logits, &labels)?.grad;
            if bad {
                corrupt(&mut g);
            }
            acc.add(compare(&logits, &g, |p| Ok(softmax_cross_entropy(p, &labels)?.loss))?);
        }
        LayerKind::Network => return check_network(opts, &mut rng),
    }
    Ok(acc.finish(kind))
}

/// Reduced architecture used by the whole-network check.
pub fn tiny_spec() -> ArchSpec {
    ArchSpec::resnet18(3)
        .with_stage_channels([4, 8, 8, 8])
        .with_input([3, 4, 16, 16])
}

fn check_network(opts: &GradcheckOptions, rng: &mut Rng) -> Result<CheckResult> {
    let spec = tiny_spec();
    let mut net = Network::<f64>::build(&spec, rng)?;
    let x = random(&[2, 3, 4, 16, 16], rng);
    let labels = [0, 2];

    let logits = net.forward_train(&x)?;
    let base_sig = net.activation_signature();
    let grad_logits = softmax_cross_entropy(&logits, &labels)?.grad;
    let mut grads = net.backward(&grad_logits)?;
    if opts.corrupt == Some(LayerKind::Network) {
        for e in &mut grads.entries {
            corrupt(&mut e.tensor);
        }
    }

    let sizes: Vec<usize> = net.parameters().iter().map(|(_, _, t)| t.len()).collect();
    let total: usize = sizes.iter().sum();
    let loss_at = |net: &mut Network<f64>, which: usize, offset: usize, value: f64| -> Result<(f64, Option<u64>)> {
        *net.parameters_mut()[which].2.data_mut().get_mut(offset).unwrap() = value;
        let logits = net.forward_train(&x)?;
        Ok((
            softmax_cross_entropy(&logits, &labels)?.loss,
            net.activation_signature(),
        ))
    };

    let mut worst: f64 = 0.0;
    let (mut checked, mut skipped) = (0, 0);
    while checked < NETWORK_SAMPLES && skipped < 20 * NETWORK_SAMPLES {
        let mut flat = rng.below(total);
        let mut which = 0;
        while flat >= sizes[which] {
            flat -= sizes[which];
            which += 1;
        }
        let orig = net.parameters()[which].2.data()[flat];
        let (up, sig_up) = loss_at(&mut net, which, flat, orig + FD_STEP)?;
        let (down, sig_down) = loss_at(&mut net, which, flat, orig - FD_STEP)?;
        loss_at(&mut net, which, flat, orig)?;
        if sig_up != base_sig || sig_down != base_sig {
            skipped += 1;
            continue;
        }
        let numeric = (up - down) / (2.0 * FD_STEP);
        let analytic = grads.entries[which].tensor.data()[flat];
        let err = relative_error(analytic, numeric);
        if err.is_nan() || err > worst {
            worst = err;
        }
        checked += 1;
    }
    if checked < NETWORK_SAMPLES {
        worst = f64::INFINITY;
    }
    Ok(CheckResult {
        layer: LayerKind::Network,
        worst,
        tolerance: NETWORK_TOLERANCE,
        checked,
        skipped,
    })
}

pub fn run_all(opts: &GradcheckOptions) -> Result<Vec<CheckResult>> {
    LayerKind::ALL.iter().map(|&k| check_layer(k, opts)).collect()
}

/// One line per layer type plus a verdict line.
pub fn render_report(results: &[CheckResult]) -> String {
    let mut out = String::new();
    for r in results {
        out.push_str(&format!(
            "{:<22} worst_rel_err {:.3e}  tol {:.0e}  checked {:>4}  skipped {:>3}  {}\n",
            r.layer.name(),
            r.worst,
            r.tolerance,
            r.checked,
            r.skipped,
            if r.passed() { "PASS" } else { "FAIL" }
        ));
    }
    let failed: Vec<&str> = results.iter().filter(|r| !r.passed()).map(|r| r.layer.name()).collect();
    if failed.is_empty() {
        out.push_str("gradcheck: all layers passed\n");
    } else {
        out.push_str(&format!("gradcheck: FAILED {}\n", failed.join(", ")));
    }
    out
}
