use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::autograd::{ParamId, ParamStore};
use crate::error::{invalid, Result};
use crate::nn::exec::Exec;
use crate::tensor::{ConvSpec, Tensor};

/// Registers parameters under a dotted name prefix with He fan-in initialization.
pub struct ParamBuilder<'a> {
    store: &'a mut ParamStore,
    rng: &'a mut ChaCha8Rng,
    prefix: Vec<String>,
}

impl<'a> ParamBuilder<'a> {
    pub fn new(store: &'a mut ParamStore, rng: &'a mut ChaCha8Rng) -> Self {
        ParamBuilder {
            store,
            rng,
            prefix: Vec::new(),
        }
    }

    fn path(&self, leaf: &str) -> String {
        let mut parts = self.prefix.clone();
        parts.push(leaf.to_string());
        parts.join(".")
    }

    /// Runs `f` with `name` appended to the prefix.
    pub fn scope<R>(&mut self, name: impl Into<String>, f: impl FnOnce(&mut Self) -> R) -> R {
        self.prefix.push(name.into());
        let r = f(self);
        self.prefix.pop();
        r
    }

    pub fn tensor(&mut self, leaf: &str, value: Tensor, trainable: bool) -> Result<ParamId> {
        let name = self.path(leaf);
        self.store.add(name, value, trainable)
    }

    /// Normal weights with standard deviation `sqrt(2 / fan_in)`.
    pub fn he_weight(&mut self, spec: &ConvSpec) -> Result<ParamId> {
        let fan_in = spec.patch_rows() as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        let rng = &mut *self.rng;
        let w = Tensor::from_fn(spec.weight_shape(), |_, _, _, _| normal.sample(rng) as f32);
        self.tensor("weight", w, true)
    }

    pub fn uniform(&mut self, lo: f32, hi: f32) -> f32 {
        self.rng.random_range(lo..hi)
    }
}

/// A convolution bound to stored parameters.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conv {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub spec: ConvSpec,
}

impl Conv {
    pub fn build(b: &mut ParamBuilder, name: &str, spec: ConvSpec, bias: bool) -> Result<Self> {
        spec.validate()?;
        b.scope(name, |b| {
            let weight = b.he_weight(&spec)?;
            let bias = if bias {
                Some(b.tensor("bias", Tensor::vector(vec![0.0; spec.out_channels]), true)?)
            } else {
                None
            };
            Ok(Conv { weight, bias, spec })
        })
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::V) -> Result<E::V> {
        ex.conv(x, self)
    }
}

/// Batchnorm affine parameters plus running statistics.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BatchNorm {
    pub gamma: ParamId,
    pub beta: ParamId,
    pub running_mean: ParamId,
    pub running_var: ParamId,
    pub channels: usize,
}

impl BatchNorm {
    pub fn build(b: &mut ParamBuilder, name: &str, channels: usize) -> Result<Self> {
        b.scope(name, |b| {
            Ok(BatchNorm {
                gamma: b.tensor("gamma", Tensor::vector(vec![1.0; channels]), true)?,
                beta: b.tensor("beta", Tensor::vector(vec![0.0; channels]), true)?,
                running_mean: b.tensor("running_mean", Tensor::vector(vec![0.0; channels]), false)?,
                running_var: b.tensor("running_var", Tensor::vector(vec![1.0; channels]), false)?,
                channels,
            })
        })
    }
}

/// Convolution (no bias) followed by batchnorm and an optional ReLU.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct ConvBn {
    pub conv: Conv,
    pub bn: BatchNorm,
}

impl ConvBn {
    pub fn build(b: &mut ParamBuilder, name: &str, spec: ConvSpec) -> Result<Self> {
        b.scope(name, |b| {
            Ok(ConvBn {
                conv: Conv::build(b, "conv", spec, false)?,
                bn: BatchNorm::build(b, "bn", spec.out_channels)?,
            })
        })
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::V, relu: bool) -> Result<E::V> {
        let y = ex.conv(x, &self.conv)?;
        self.post(ex, &y, relu)
    }

    /// The batchnorm (and ReLU) half, for outputs produced by a conv bank.
    pub fn post<E: Exec>(&self, ex: &mut E, y: &E::V, relu: bool) -> Result<E::V> {
        let z = ex.batchnorm(y, &self.bn)?;
        Ok(if relu { ex.relu(&z) } else { z })
    }
}

/// Two 3x3 conv-BN layers with a residual connection. `groups > 1` runs that
/// many independent copies side by side.
#[derive(Clone, Debug, PartialEq)]
pub struct BasicBlock {
    pub conv1: ConvBn,
    pub conv2: ConvBn,
    pub skip: Option<ConvBn>,
    pub stride: usize,
}

impl BasicBlock {
    pub fn build(
        b: &mut ParamBuilder,
        name: &str,
        c_in: usize,
        c_out: usize,
        stride: usize,
        groups: usize,
    ) -> Result<Self> {
        if stride != 1 && stride != 2 {
            return invalid(format!("basic block stride must be 1 or 2, got {stride}"));
        }
        b.scope(name, |b| {
            let conv1 = ConvBn::build(
                b,
                "conv1",
                ConvSpec::new(c_in, c_out, 3).stride(stride).padding(1).groups(groups),
            )?;
            let conv2 = ConvBn::build(b, "conv2", ConvSpec::new(c_out, c_out, 3).padding(1).groups(groups))?;
            let skip = if stride != 1 || c_in != c_out {
                Some(ConvBn::build(
                    b,
                    "skip",
                    ConvSpec::new(c_in, c_out, 1).stride(stride).groups(groups),
                )?)
            } else {
                None
            };
            Ok(BasicBlock {
                conv1,
                conv2,
                skip,
                stride,
            })
        })
    }

    pub fn forward<E: Exec>(&self, ex: &mut E, x: &E::V) -> Result<E::V> {
        let h = self.conv1.forward(ex, x, true)?;
        let h = self.conv2.forward(ex, &h, false)?;
        let s = match &self.skip {
            Some(skip) => skip.forward(ex, x, false)?,
            None => x.clone(),
        };
        let y = ex.add(&h, &s)?;
        Ok(ex.relu(&y))
    }
}

/// 3x3 conv to one map per group, bilinear upsampling, sigmoid.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SideHead {
    pub conv: Conv,
}

impl SideHead {
    pub fn build(b: &mut ParamBuilder, name: &str, c_in: usize, groups: usize) -> Result<Self> {
        let spec = ConvSpec::new(c_in, groups, 3).padding(1).groups(groups);
        Ok(SideHead {
            conv: Conv::build(b, name, spec, true)?,
        })
    }

    /// Output `(n, groups, target_h, target_w)` with values in (0, 1).
    pub fn forward<E: Exec>(&self, ex: &mut E, feat: &E::V, target_h: usize, target_w: usize) -> Result<E::V> {
        let logits = ex.conv(feat, &self.conv)?;
        let up = ex.resize(&logits, target_h, target_w)?;
        Ok(ex.sigmoid(&up))
    }
}
