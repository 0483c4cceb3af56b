use crate::error::{Error, Result};
use crate::resnet::{Gradients, Network};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const DEFAULT_LR: f64 = 0.1;
pub const DEFAULT_MOMENTUM: f64 = 0.9;
pub const DEFAULT_WEIGHT_DECAY: f64 = 0.001;

/// `v ← m·v + (g + wd·w)`, then `w ← w − lr·v`.
pub fn sgd_update<T: Scalar>(
    w: &mut Tensor<T>,
    g: &Tensor<T>,
    v: &mut Tensor<T>,
    lr: f64,
    momentum: f64,
    weight_decay: f64,
) -> Result<()> {
    if g.shape() != w.shape() {
        return Err(Error::shape("sgd gradient", g.shape(), w.shape()));
    }
    if v.shape() != w.shape() {
        return Err(Error::shape("sgd velocity", v.shape(), w.shape()));
    }
    let (lr, m, wd) = (T::of(lr), T::of(momentum), T::of(weight_decay));
    for ((w, &g), v) in w.data_mut().iter_mut().zip(g.data()).zip(v.data_mut()) {
        *v = m * *v + (g + wd * *w);
        *w -= lr * *v;
    }
    Ok(())
}

/// SGD with momentum and L2 weight decay; one velocity per parameter.
#[derive(Debug, Clone)]
pub struct Sgd<T: Scalar> {
    pub momentum: f64,
    pub weight_decay: f64,
    /// Apply weight decay to batch-norm gamma/beta as well.
    pub decay_batchnorm: bool,
    velocities: Vec<(String, Tensor<T>)>,
}

impl<T: Scalar> Sgd<T> {
    pub fn new(net: &Network<T>, momentum: f64, weight_decay: f64, decay_batchnorm: bool) -> Self {
        let velocities = net
            .parameters()
            .into_iter()
            .map(|(name, _, t)| (name, Tensor::zeros(t.shape())))
            .collect();
        Sgd {
            momentum,
            weight_decay,
            decay_batchnorm,
            velocities,
        }
    }

    pub fn velocities(&self) -> &[(String, Tensor<T>)] {
        &self.velocities
    }

    /// Replaces the velocity of `name`, checking its shape.
    pub fn set_velocity(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let slot = self
            .velocities
            .iter_mut()
            .find(|(n, _)| n == name)
            .ok_or_else(|| Error::Parameter {
                name: name.to_string(),
                reason: "no such parameter".into(),
            })?;
        if slot.1.shape() != value.shape() {
            return Err(Error::Parameter {
                name: name.to_string(),
                reason: format!(
                    "velocity shape {:?} vs parameter shape {:?}",
                    value.shape(),
                    slot.1.shape()
                ),
            });
        }
        slot.1 = value;
        Ok(())
    }

    pub fn step(&mut self, net: &mut Network<T>, grads: &Gradients<T>, lr: f64) -> Result<()> {
        let params = net.parameters_mut();
        if params.len() != grads.len() || params.len() != self.velocities.len() {
            return Err(Error::invalid(format!(
                "optimizer tracks {} tensors, network has {}, gradients {}",
                self.velocities.len(),
                params.len(),
                grads.len()
            )));
        }
        for (((name, kind, w), g), (vname, v)) in params.into_iter().zip(grads.iter()).zip(&mut self.velocities) {
            if name != g.name || name != *vname {
                return Err(Error::Parameter {
                    name,
                    reason: format!("out of order with gradient `{}` / velocity `{vname}`", g.name),
                });
            }
            let wd = if kind.is_batchnorm() && !self.decay_batchnorm {
                0.0
            } else {
                self.weight_decay
            };
            sgd_update(w, &g.tensor, v, lr, self.momentum, wd).map_err(|e| Error::Parameter {
                name: name.clone(),
                reason: e.to_string(),
            })?;
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn s(v: f64) -> Tensor<f64> {
        Tensor::from_f64(&[1], &[v]).unwrap()
    }

    #[test]
    fn hand_examples() {
        let (mut w, mut v) = (s(2.0), s(0.0));
        sgd_update(&mut w, &s(0.0), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert_eq!(w.data(), &[2.0]);

        let (mut w, mut v) = (s(1.0), s(0.0));
        sgd_update(&mut w, &s(0.0), &mut v, 0.1, 0.9, 0.001).unwrap();
        assert!((v.data()[0] - 0.001).abs() < 1e-15);
        assert!((w.data()[0] - 0.9999).abs() < 1e-15);

        let (mut w, mut v) = (s(0.0), s(0.0));
        sgd_update(&mut w, &s(1.0), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((w.data()[0] + 0.1).abs() < 1e-15);
        sgd_update(&mut w, &s(1.0), &mut v, 0.1, 0.9, 0.0).unwrap();
        assert!((w.data()[0] + 0.29).abs() < 1e-15);
    }

    #[test]
    fn shape_checked() {
        let mut w = Tensor::<f64>::zeros(&[2]);
        let mut v = Tensor::zeros(&[2]);
        assert!(sgd_update(&mut w, &Tensor::zeros(&[3]), &mut v, 0.1, 0.9, 0.0).is_err());
    }
}
