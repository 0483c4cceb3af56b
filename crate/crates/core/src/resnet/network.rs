use std::collections::hash_map::DefaultHasher;
use std::hash::{Hash, Hasher};

use crate::error::{Error, Result};
use crate::layers::{
    global_avgpool, global_avgpool_backward, relu_backward, BatchNorm3d, BnCache, Conv3d, Linear, MaxPool3d, Mode,
    PoolCache,
};
use crate::rng::Rng;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

use super::arch::*;
use super::block::{BasicBlock, BlockCache};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ParamKind {
    ConvWeight,
    ConvBias,
    BnGamma,
    BnBeta,
    FcWeight,
    FcBias,
}

impl ParamKind {
    pub fn is_batchnorm(self) -> bool {
        matches!(self, ParamKind::BnGamma | ParamKind::BnBeta)
    }
}

#[derive(Debug, Clone)]
pub struct NamedTensor<T> {
    pub name: String,
    pub kind: ParamKind,
    pub tensor: Tensor<T>,
}

/// Gradients of every trainable tensor, in [`Network::parameters`] order.
#[derive(Debug, Clone)]
pub struct Gradients<T> {
    pub entries: Vec<NamedTensor<T>>,
}

impl<T: Scalar> Gradients<T> {
    pub fn get(&self, name: &str) -> Option<&Tensor<T>> {
        self.entries.iter().find(|e| e.name == name).map(|e| &e.tensor)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &NamedTensor<T>> {
        self.entries.iter()
    }
}

#[derive(Debug, Clone)]
struct NetCache<T> {
    input: Tensor<T>,
    bn1: BnCache<T>,
    stem_pre: Tensor<T>,
    pool: PoolCache,
    blocks: Vec<BlockCache<T>>,
    last_shape: Vec<usize>,
    features: Tensor<T>,
}

/// A 3D residual network built from an [`ArchSpec`].
#[derive(Debug, Clone)]
pub struct Network<T> {
    spec: ArchSpec,
    pub conv1: Conv3d<T>,
    pub bn1: BatchNorm3d<T>,
    pub pool: MaxPool3d,
    /// Residual blocks of all four stages in order; see [`Network::block_names`].
    pub blocks: Vec<BasicBlock<T>>,
    pub fc: Linear<T>,
    cache: Option<NetCache<T>>,
}

impl<T: Scalar> Network<T> {
    /// Conv weights and fc weights get rectifier-scaled Gaussian init; BN
    /// gamma = 1, beta = 0; fc bias = 0.
    pub fn build(spec: &ArchSpec, rng: &mut Rng) -> Result<Self> {
        spec.validate()?;
        let stem = spec.stage_channels[0];
        let conv1 = Conv3d::new(
            spec.input_shape[0],
            stem,
            STEM_KERNEL,
            STEM_STRIDE,
            STEM_PADDING,
            false,
            rng,
        );
        let pool = MaxPool3d::new(POOL_KERNEL, POOL_STRIDE, POOL_PADDING)?;
        let mut blocks = Vec::with_capacity(spec.num_blocks());
        let mut ch = stem;
        for (stage, (&count, &out_ch)) in spec.block_counts.iter().zip(&spec.stage_channels).enumerate() {
            for block in 0..count {
                blocks.push(BasicBlock::new(ch, out_ch, ArchSpec::block_stride(stage, block), rng));
                ch = out_ch;
            }
        }
        Ok(Network {
            spec: spec.clone(),
            conv1,
            bn1: BatchNorm3d::new(stem),
            pool,
            blocks,
            fc: Linear::new(ch, spec.num_classes, rng),
            cache: None,
        })
    }

    pub fn spec(&self) -> &ArchSpec {
        &self.spec
    }

    pub fn block_names(&self) -> Vec<String> {
        let mut names = Vec::with_capacity(self.blocks.len());
        for (stage, &count) in self.spec.block_counts.iter().enumerate() {
            for block in 0..count {
                names.push(ArchSpec::block_name(stage, block));
            }
        }
        names
    }

    fn check_input(&self, x: &Tensor<T>) -> Result<()> {
        let want = &self.spec.input_shape;
        if x.rank() != 5 || x.shape()[1..] != want[..] {
            let mut expected = vec![0];
            expected.extend_from_slice(want);
            return Err(Error::shape("network input", x.shape(), &expected));
        }
        Ok(())
    }

    pub fn forward(&mut self, x: &Tensor<T>, mode: Mode) -> Result<Tensor<T>> {
        match mode {
            Mode::Train => self.forward_train(x),
            Mode::Eval => self.forward_eval(x),
        }
    }

    /// Pure function of the parameters and running statistics.
    pub fn forward_eval(&self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.forward_eval_traced(x, &mut |_, _| {})
    }

    /// Eval-mode forward that reports the output shape after the stem conv,
    /// the pool, every block, the average pool and the classifier.
    pub fn trace_shapes(&self, x: &Tensor<T>) -> Result<Vec<(String, Vec<usize>)>> {
        let mut trace = vec![("input".to_string(), x.shape().to_vec())];
        self.forward_eval_traced(x, &mut |name, shape| trace.push((name.to_string(), shape.to_vec())))?;
        Ok(trace)
    }

    fn forward_eval_traced(&self, x: &Tensor<T>, record: &mut dyn FnMut(&str, &[usize])) -> Result<Tensor<T>> {
        self.check_input(x)?;
        let stem = self.conv1.forward(x)?;
        record("conv1", stem.shape());
        let (mut h, _) = self.pool.forward(&self.bn1.forward_eval(&stem)?.relu())?;
        record("pool", h.shape());
        for (block, name) in self.blocks.iter().zip(self.block_names()) {
            h = block.forward_eval(&h)?;
            record(&name, h.shape());
        }
        let features = global_avgpool(&h)?;
        record("avgpool", features.shape());
        let logits = self.fc.forward(&features)?;
        record("fc", logits.shape());
        Ok(logits)
    }

    /// Train-mode forward: batch statistics, running-stat updates, and a
    /// cache for [`Network::backward`].
    pub fn forward_train(&mut self, x: &Tensor<T>) -> Result<Tensor<T>> {
        self.check_input(x)?;
        self.cache = None;
        let (stem_pre, bn1) = self.bn1.forward_train(&self.conv1.forward(x)?)?;
        let (mut h, pool) = self.pool.forward(&stem_pre.relu())?;
        let mut blocks = Vec::with_capacity(self.blocks.len());
        for block in &mut self.blocks {
            let (out, cache) = block.forward_train(&h)?;
            blocks.push(cache);
            h = out;
        }
        let features = global_avgpool(&h)?;
        let logits = self.fc.forward(&features)?;
        self.cache = Some(NetCache {
            input: x.clone(),
            bn1,
            stem_pre,
            pool,
            blocks,
            last_shape: h.shape().to_vec(),
            features,
        });
        Ok(logits)
    }

    pub fn has_cache(&self) -> bool {
        self.cache.is_some()
    }

    pub fn clear_cache(&mut self) {
        self.cache = None;
    }

    /// Gradients of every trainable tensor given `dLoss/dLogits` for the
    /// batch of the last train-mode forward.
    pub fn backward(&self, grad_logits: &Tensor<T>) -> Result<Gradients<T>> {
        let cache = self.cache.as_ref().ok_or(Error::NoCachedForward)?;
        let expected = [cache.features.shape()[0], self.spec.num_classes];
        if grad_logits.shape() != expected {
            return Err(Error::shape("network backward", grad_logits.shape(), &expected));
        }
        let mut grads = self.zeros_like();

        let fc = self.fc.backward(&cache.features, grad_logits)?;
        grads.fc.weight = fc.weight;
        grads.fc.bias = fc.bias;
        let mut g = global_avgpool_backward(&cache.last_shape, &fc.input)?;

        for (i, (block, bc)) in self.blocks.iter().zip(&cache.blocks).enumerate().rev() {
            let bg = block.backward(bc, &g)?;
            let dst = &mut grads.blocks[i];
            dst.conv_a.weight = bg.conv_a;
            dst.bn_a.gamma = bg.bn_a_gamma;
            dst.bn_a.beta = bg.bn_a_beta;
            dst.conv_b.weight = bg.conv_b;
            dst.bn_b.gamma = bg.bn_b_gamma;
            dst.bn_b.beta = bg.bn_b_beta;
            g = bg.input;
        }

        let g = self.pool.backward(&cache.pool, &g)?;
        let g = relu_backward(&cache.stem_pre, &g)?;
        let bn1 = self.bn1.backward(&cache.bn1, &g)?;
        grads.bn1.gamma = bn1.gamma;
        grads.bn1.beta = bn1.beta;
        grads.conv1.weight = self.conv1.param_grads(&cache.input, &bn1.input)?.0;

        Ok(Gradients {
            entries: grads
                .parameters_mut()
                .into_iter()
                .map(|(name, kind, t)| NamedTensor {
                    name,
                    kind,
                    tensor: std::mem::replace(t, Tensor::scalar(T::zero())),
                })
                .collect(),
        })
    }

    /// Structural copy with every trainable tensor zeroed.
    fn zeros_like(&self) -> Network<T> {
        let mut z = Network {
            spec: self.spec.clone(),
            conv1: self.conv1.clone(),
            bn1: self.bn1.clone(),
            pool: self.pool,
            blocks: self.blocks.clone(),
            fc: self.fc.clone(),
            cache: None,
        };
        for (_, _, t) in z.parameters_mut() {
            t.fill(T::zero());
        }
        z
    }

    /// Hash of the ReLU on/off pattern and pooling argmax routing of the
    /// cached forward pass. Two forwards with equal signatures lie in the
    /// same linear region of the piecewise-smooth network.
    pub fn activation_signature(&self) -> Option<u64> {
        let cache = self.cache.as_ref()?;
        let mut h = DefaultHasher::new();
        let mut mask = |t: &Tensor<T>| {
            for v in t.data() {
                (*v > T::zero()).hash(&mut h);
            }
        };
        mask(&cache.stem_pre);
        for b in &cache.blocks {
            mask(&b.pre_a);
            mask(&b.sum);
        }
        cache.pool.argmax.hash(&mut h);
        Some(h.finish())
    }

    /// Trainable tensors with stable dotted names.
    pub fn parameters(&self) -> Vec<(String, ParamKind, &Tensor<T>)> {
        let mut out = vec![
            ("conv1.weight".to_string(), ParamKind::ConvWeight, &self.conv1.weight),
            ("bn1.gamma".to_string(), ParamKind::BnGamma, &self.bn1.gamma),
            ("bn1.beta".to_string(), ParamKind::BnBeta, &self.bn1.beta),
        ];
        for (b, name) in self.blocks.iter().zip(self.block_names()) {
            out.push((format!("{name}.conv_a.weight"), ParamKind::ConvWeight, &b.conv_a.weight));
            out.push((format!("{name}.bn_a.gamma"), ParamKind::BnGamma, &b.bn_a.gamma));
            out.push((format!("{name}.bn_a.beta"), ParamKind::BnBeta, &b.bn_a.beta));
            out.push((format!("{name}.conv_b.weight"), ParamKind::ConvWeight, &b.conv_b.weight));
            out.push((format!("{name}.bn_b.gamma"), ParamKind::BnGamma, &b.bn_b.gamma));
            out.push((format!("{name}.bn_b.beta"), ParamKind::BnBeta, &b.bn_b.beta));
        }
        out.push(("fc.weight".to_string(), ParamKind::FcWeight, &self.fc.weight));
        out.push(("fc.bias".to_string(), ParamKind::FcBias, &self.fc.bias));
        out
    }

    /// Same order and names as [`Network::parameters`].
    pub fn parameters_mut(&mut self) -> Vec<(String, ParamKind, &mut Tensor<T>)> {
        let names = self.block_names();
        let mut out = vec![
            (
                "conv1.weight".to_string(),
                ParamKind::ConvWeight,
                &mut self.conv1.weight,
            ),
            ("bn1.gamma".to_string(), ParamKind::BnGamma, &mut self.bn1.gamma),
            ("bn1.beta".to_string(), ParamKind::BnBeta, &mut self.bn1.beta),
        ];
        for (b, name) in self.blocks.iter_mut().zip(names) {
            out.push((
                format!("{name}.conv_a.weight"),
                ParamKind::ConvWeight,
                &mut b.conv_a.weight,
            ));
            out.push((format!("{name}.bn_a.gamma"), ParamKind::BnGamma, &mut b.bn_a.gamma));
            out.push((format!("{name}.bn_a.beta"), ParamKind::BnBeta, &mut b.bn_a.beta));
            out.push((
                format!("{name}.conv_b.weight"),
                ParamKind::ConvWeight,
                &mut b.conv_b.weight,
            ));
            out.push((format!("{name}.bn_b.gamma"), ParamKind::BnGamma, &mut b.bn_b.gamma));
            out.push((format!("{name}.bn_b.beta"), ParamKind::BnBeta, &mut b.bn_b.beta));
        }
        out.push(("fc.weight".to_string(), ParamKind::FcWeight, &mut self.fc.weight));
        out.push(("fc.bias".to_string(), ParamKind::FcBias, &mut self.fc.bias));
        out
    }

    /// Batch-norm running statistics (state, not trained by SGD).
    pub fn buffers_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        let names = self.block_names();
        let mut out = vec![
            ("bn1.running_mean".to_string(), &mut self.bn1.running_mean),
            ("bn1.running_var".to_string(), &mut self.bn1.running_var),
        ];
        for (b, name) in self.blocks.iter_mut().zip(names) {
            out.push((format!("{name}.bn_a.running_mean"), &mut b.bn_a.running_mean));
            out.push((format!("{name}.bn_a.running_var"), &mut b.bn_a.running_var));
            out.push((format!("{name}.bn_b.running_mean"), &mut b.bn_b.running_mean));
            out.push((format!("{name}.bn_b.running_var"), &mut b.bn_b.running_var));
        }
        out
    }

    pub fn buffers(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out = vec![
            ("bn1.running_mean".to_string(), &self.bn1.running_mean),
            ("bn1.running_var".to_string(), &self.bn1.running_var),
        ];
        for (b, name) in self.blocks.iter().zip(self.block_names()) {
            out.push((format!("{name}.bn_a.running_mean"), &b.bn_a.running_mean));
            out.push((format!("{name}.bn_a.running_var"), &b.bn_a.running_var));
            out.push((format!("{name}.bn_b.running_mean"), &b.bn_b.running_mean));
            out.push((format!("{name}.bn_b.running_var"), &b.bn_b.running_var));
        }
        out
    }

    /// Parameters followed by buffers: everything a checkpoint stores.
    pub fn state_tensors(&self) -> Vec<(String, &Tensor<T>)> {
        let mut out: Vec<_> = self.parameters().into_iter().map(|(n, _, t)| (n, t)).collect();
        out.extend(self.buffers());
        out
    }

    pub fn state_tensors_mut(&mut self) -> Vec<(String, &mut Tensor<T>)> {
        // Split borrows: parameters and buffers are disjoint fields.
        let names = self.block_names();
        let mut params = Vec::new();
        let mut bufs = Vec::new();
        params.push(("conv1.weight".to_string(), &mut self.conv1.weight));
        params.push(("bn1.gamma".to_string(), &mut self.bn1.gamma));
        params.push(("bn1.beta".to_string(), &mut self.bn1.beta));
        bufs.push(("bn1.running_mean".to_string(), &mut self.bn1.running_mean));
        bufs.push(("bn1.running_var".to_string(), &mut self.bn1.running_var));
        for (b, name) in self.blocks.iter_mut().zip(names) {
            params.push((format!("{name}.conv_a.weight"), &mut b.conv_a.weight));
            params.push((format!("{name}.bn_a.gamma"), &mut b.bn_a.gamma));
            params.push((format!("{name}.bn_a.beta"), &mut b.bn_a.beta));
            params.push((format!("{name}.conv_b.weight"), &mut b.conv_b.weight));
            params.push((format!("{name}.bn_b.gamma"), &mut b.bn_b.gamma));
            params.push((format!("{name}.bn_b.beta"), &mut b.bn_b.beta));
            bufs.push((format!("{name}.bn_a.running_mean"), &mut b.bn_a.running_mean));
            bufs.push((format!("{name}.bn_a.running_var"), &mut b.bn_a.running_var));
            bufs.push((format!("{name}.bn_b.running_mean"), &mut b.bn_b.running_mean));
            bufs.push((format!("{name}.bn_b.running_var"), &mut b.bn_b.running_var));
        }
        params.push(("fc.weight".to_string(), &mut self.fc.weight));
        params.push(("fc.bias".to_string(), &mut self.fc.bias));
        params.extend(bufs);
        params
    }

    pub fn param_count(&self) -> usize {
        self.parameters().iter().map(|(_, _, t)| t.len()).sum()
    }
}
