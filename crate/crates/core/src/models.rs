//! Mini U-Net and mini SegNet assembled from the autodiff ops, with a
//! pluggable normalization layer after every convolution
//! (conv → norm → ReLU).
//!
//! Both nets keep the output spatial extent equal to the input extent and
//! finish with a 1×1 convolution into a sigmoid probability map. U-Net
//! upsamples with stride-2 transposed convolutions and concatenates encoder
//! skips; SegNet upsamples by scattering through the max-pooling indices
//! memorized on the way down, with no skip concatenations.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::norm::{NormConfig, NormLayer, NormState};
use crate::ops;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Arch {
    Unet,
    Segnet,
}

impl std::fmt::Display for Arch {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Arch::Unet => write!(f, "unet"),
            Arch::Segnet => write!(f, "segnet"),
        }
    }
}

/// Declarative description of a model instance.
#[derive(Clone, Copy, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSpec {
    pub arch: Arch,
    /// Pooling levels; input extents must be divisible by 2^depth.
    pub depth: usize,
    /// Channels at the first level; doubled at each deeper level.
    pub base_channels: usize,
    pub norm: NormConfig,
    pub dropout_rate: f64,
    pub in_channels: usize,
    pub out_channels: usize,
}

impl Default for ModelSpec {
    fn default() -> Self {
        ModelSpec {
            arch: Arch::Unet,
            depth: 3,
            base_channels: 16,
            norm: NormConfig::default(),
            dropout_rate: 0.0,
            in_channels: 1,
            out_channels: 1,
        }
    }
}

impl ModelSpec {
    pub fn validate(&self) -> Result<()> {
        if self.depth < 1 {
            return Err(Error::Config("model depth must be >= 1".into()));
        }
        if self.base_channels < 1 {
            return Err(Error::Config("base_channels must be >= 1".into()));
        }
        if !(0.0..1.0).contains(&self.dropout_rate) {
            return Err(Error::Config(format!(
                "dropout_rate must be in [0, 1), got {}",
                self.dropout_rate
            )));
        }
        if self.in_channels < 1 || self.out_channels < 1 {
            return Err(Error::Config("channel counts must be >= 1".into()));
        }
        self.norm.validate()
    }

    fn channels_at(&self, level: usize) -> usize {
        self.base_channels << level
    }
}

#[derive(Clone, Copy, PartialEq, Eq, Debug, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum EntryKind {
    Param,
    Buffer,
    Flag,
}

/// One named piece of model state: a learnable parameter, a running-statistic
/// buffer, or a boolean flag.
#[derive(Clone, Debug)]
pub struct StateEntry<S: Scalar> {
    pub name: String,
    pub kind: EntryKind,
    pub shape: Vec<usize>,
    pub data: Vec<S>,
}

pub(crate) trait StateVisitor<S: Scalar> {
    fn param(&mut self, name: &str, t: &mut Tensor<S>) -> Result<()>;
    fn buffer(&mut self, name: &str, shape: &[usize], data: &mut Vec<S>) -> Result<()>;
    fn flag(&mut self, name: &str, value: &mut bool) -> Result<()>;
}

/// Prefix the layer name onto non-finite faults so a NaN names its source.
fn at<T>(site: &str, r: Result<T>) -> Result<T> {
    r.map_err(|e| match e {
        Error::NonFinite { site: inner } => Error::NonFinite {
            site: format!("{site}: {inner}"),
        },
        other => other,
    })
}

fn kaiming_uniform<S: Scalar, R: Rng>(rng: &mut R, fan_in: usize, len: usize) -> Vec<S> {
    let bound = (6.0 / fan_in as f64).sqrt();
    (0..len)
        .map(|_| S::from_f64(rng.random_range(-bound..bound)))
        .collect()
}

/// conv3×3 (pad 1) → norm → ReLU
struct ConvBlock<S: Scalar> {
    name: String,
    weight: Tensor<S>,
    bias: Tensor<S>,
    norm: NormLayer<S>,
}

impl<S: Scalar> ConvBlock<S> {
    fn new<R: Rng>(name: String, cin: usize, cout: usize, norm: &NormConfig, rng: &mut R) -> Result<Self> {
        let weight = Tensor::param(
            kaiming_uniform(rng, cin * 9, cout * cin * 9),
            [cout, cin, 3, 3],
        )?;
        let bias = Tensor::param(vec![S::ZERO; cout], [cout])?;
        Ok(ConvBlock {
            name,
            weight,
            bias,
            norm: NormLayer::new(*norm, cout)?,
        })
    }

    fn forward(&mut self, x: &Tensor<S>, training: bool) -> Result<Tensor<S>> {
        let y = at(&self.name, ops::conv2d(x, &self.weight, &self.bias, 1, 1))?;
        let y = at(&self.name, self.norm.forward(&y, training))?;
        at(&self.name, ops::relu(&y))
    }

    fn forward_frozen(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = at(&self.name, ops::conv2d(x, &self.weight, &self.bias, 1, 1))?;
        let y = at(&self.name, self.norm.forward_frozen(&y))?;
        at(&self.name, ops::relu(&y))
    }

    fn visit(&mut self, v: &mut dyn StateVisitor<S>) -> Result<()> {
        v.param(&format!("{}.weight", self.name), &mut self.weight)?;
        v.param(&format!("{}.bias", self.name), &mut self.bias)?;
        visit_norm(&format!("{}.norm", self.name), &mut self.norm, v)
    }
}

fn visit_norm<S: Scalar>(
    prefix: &str,
    layer: &mut NormLayer<S>,
    v: &mut dyn StateVisitor<S>,
) -> Result<()> {
    if let Some(affine) = &mut layer.affine {
        v.param(&format!("{prefix}.gamma"), &mut affine.gamma)?;
        v.param(&format!("{prefix}.beta"), &mut affine.beta)?;
    }
    match &mut layer.state {
        NormState::None => {}
        NormState::Batch(stats) => {
            let c = stats.channels;
            v.buffer(&format!("{prefix}.mu"), &[c], &mut stats.mu)?;
            v.buffer(&format!("{prefix}.var"), &[c], &mut stats.var)?;
            v.buffer(&format!("{prefix}.running_mu"), &[c], &mut stats.running_mu)?;
            v.buffer(&format!("{prefix}.running_var"), &[c], &mut stats.running_var)?;
        }
        NormState::Mode(state) => {
            let shape = [state.modes, state.channels];
            v.buffer(&format!("{prefix}.pi"), &shape, &mut state.pi)?;
            v.buffer(&format!("{prefix}.mu"), &shape, &mut state.mu)?;
            v.buffer(&format!("{prefix}.var"), &shape, &mut state.var)?;
            v.buffer(&format!("{prefix}.running_pi"), &shape, &mut state.running_pi)?;
            v.buffer(&format!("{prefix}.running_mu"), &shape, &mut state.running_mu)?;
            v.buffer(&format!("{prefix}.running_var"), &shape, &mut state.running_var)?;
            v.flag(&format!("{prefix}.initialized"), &mut state.initialized)?;
        }
    }
    Ok(())
}

/// 2×2 stride-2 transposed convolution.
struct UpConv<S: Scalar> {
    name: String,
    weight: Tensor<S>,
    bias: Tensor<S>,
}

impl<S: Scalar> UpConv<S> {
    fn new<R: Rng>(name: String, cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Ok(UpConv {
            name,
            weight: Tensor::param(kaiming_uniform(rng, cin * 4, cin * cout * 4), [cin, cout, 2, 2])?,
            bias: Tensor::param(vec![S::ZERO; cout], [cout])?,
        })
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        at(&self.name, ops::conv_transpose2d(x, &self.weight, &self.bias, 2))
    }

    fn visit(&mut self, v: &mut dyn StateVisitor<S>) -> Result<()> {
        v.param(&format!("{}.weight", self.name), &mut self.weight)?;
        v.param(&format!("{}.bias", self.name), &mut self.bias)
    }
}

struct FinalConv<S: Scalar> {
    weight: Tensor<S>,
    bias: Tensor<S>,
}

impl<S: Scalar> FinalConv<S> {
    fn new<R: Rng>(cin: usize, cout: usize, rng: &mut R) -> Result<Self> {
        Ok(FinalConv {
            weight: Tensor::param(kaiming_uniform(rng, cin, cout * cin), [cout, cin, 1, 1])?,
            bias: Tensor::param(vec![S::ZERO; cout], [cout])?,
        })
    }

    fn forward(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        let y = at("final", ops::conv2d(x, &self.weight, &self.bias, 1, 0))?;
        at("final", ops::sigmoid(&y))
    }

    fn visit(&mut self, v: &mut dyn StateVisitor<S>) -> Result<()> {
        v.param("final.weight", &mut self.weight)?;
        v.param("final.bias", &mut self.bias)
    }
}

pub struct UNet<S: Scalar> {
    spec: ModelSpec,
    enc: Vec<(ConvBlock<S>, ConvBlock<S>)>,
    bottleneck: (ConvBlock<S>, ConvBlock<S>),
    ups: Vec<UpConv<S>>,
    dec: Vec<(ConvBlock<S>, ConvBlock<S>)>,
    final_conv: FinalConv<S>,
}

pub struct SegNet<S: Scalar> {
    spec: ModelSpec,
    enc: Vec<(ConvBlock<S>, ConvBlock<S>)>,
    dec: Vec<(ConvBlock<S>, ConvBlock<S>)>,
    final_conv: FinalConv<S>,
}

pub enum Model<S: Scalar> {
    Unet(UNet<S>),
    Segnet(SegNet<S>),
}

fn check_input<S: Scalar>(spec: &ModelSpec, x: &Tensor<S>) -> Result<()> {
    let (_, c, h, w) = x.shape().nchw()?;
    if c != spec.in_channels {
        return Err(Error::Dimension(format!(
            "model expects {} input channels, got {c}",
            spec.in_channels
        )));
    }
    let div = 1usize << spec.depth;
    if h % div != 0 || w % div != 0 {
        return Err(Error::Config(format!(
            "input extent {h}x{w} not divisible by 2^depth = {div}"
        )));
    }
    Ok(())
}

impl<S: Scalar> UNet<S> {
    fn build(spec: ModelSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut enc = Vec::new();
        let mut cin = spec.in_channels;
        for level in 0..spec.depth {
            let c = spec.channels_at(level);
            enc.push((
                ConvBlock::new(format!("enc{level}.conv1"), cin, c, &spec.norm, rng)?,
                ConvBlock::new(format!("enc{level}.conv2"), c, c, &spec.norm, rng)?,
            ));
            cin = c;
        }
        let cb = spec.channels_at(spec.depth);
        let bottleneck = (
            ConvBlock::new("bottleneck.conv1".into(), cin, cb, &spec.norm, rng)?,
            ConvBlock::new("bottleneck.conv2".into(), cb, cb, &spec.norm, rng)?,
        );
        let mut ups = Vec::new();
        let mut dec = Vec::new();
        for level in 0..spec.depth {
            let c = spec.channels_at(level);
            let below = spec.channels_at(level + 1);
            ups.push(UpConv::new(format!("up{level}"), below, c, rng)?);
            dec.push((
                ConvBlock::new(format!("dec{level}.conv1"), 2 * c, c, &spec.norm, rng)?,
                ConvBlock::new(format!("dec{level}.conv2"), c, c, &spec.norm, rng)?,
            ));
        }
        let final_conv = FinalConv::new(spec.base_channels, spec.out_channels, rng)?;
        Ok(UNet {
            spec,
            enc,
            bottleneck,
            ups,
            dec,
            final_conv,
        })
    }

    fn forward<R: Rng>(&mut self, x: &Tensor<S>, training: bool, rng: &mut R) -> Result<Tensor<S>> {
        check_input(&self.spec, x)?;
        let mut skips = Vec::with_capacity(self.spec.depth);
        let mut cur = x.clone();
        for level in 0..self.spec.depth {
            cur = self.enc[level].0.forward(&cur, training)?;
            cur = self.enc[level].1.forward(&cur, training)?;
            if self.spec.dropout_rate > 0.0 {
                cur = at(
                    &format!("enc{level}.dropout"),
                    ops::dropout(&cur, self.spec.dropout_rate, training, rng),
                )?;
            }
            skips.push(cur.clone());
            let (pooled, _) = at(&format!("enc{level}.pool"), ops::maxpool2d(&cur))?;
            cur = pooled;
        }
        cur = self.bottleneck.0.forward(&cur, training)?;
        cur = self.bottleneck.1.forward(&cur, training)?;
        for level in (0..self.spec.depth).rev() {
            cur = self.ups[level].forward(&cur)?;
            cur = at(
                &format!("dec{level}.concat"),
                ops::concat_channels(&cur, &skips[level]),
            )?;
            cur = self.dec[level].0.forward(&cur, training)?;
            cur = self.dec[level].1.forward(&cur, training)?;
        }
        self.final_conv.forward(&cur)
    }

    fn forward_frozen(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        check_input(&self.spec, x)?;
        let mut skips = Vec::with_capacity(self.spec.depth);
        let mut cur = x.clone();
        for level in 0..self.spec.depth {
            cur = self.enc[level].0.forward_frozen(&cur)?;
            cur = self.enc[level].1.forward_frozen(&cur)?;
            skips.push(cur.clone());
            let (pooled, _) = ops::maxpool2d(&cur)?;
            cur = pooled;
        }
        cur = self.bottleneck.0.forward_frozen(&cur)?;
        cur = self.bottleneck.1.forward_frozen(&cur)?;
        for level in (0..self.spec.depth).rev() {
            cur = self.ups[level].forward(&cur)?;
            cur = ops::concat_channels(&cur, &skips[level])?;
            cur = self.dec[level].0.forward_frozen(&cur)?;
            cur = self.dec[level].1.forward_frozen(&cur)?;
        }
        self.final_conv.forward(&cur)
    }

    fn visit(&mut self, v: &mut dyn StateVisitor<S>) -> Result<()> {
        for level in 0..self.enc.len() {
            self.enc[level].0.visit(v)?;
            self.enc[level].1.visit(v)?;
        }
        self.bottleneck.0.visit(v)?;
        self.bottleneck.1.visit(v)?;
        for level in 0..self.ups.len() {
            self.ups[level].visit(v)?;
            self.dec[level].0.visit(v)?;
            self.dec[level].1.visit(v)?;
        }
        self.final_conv.visit(v)
    }
}

impl<S: Scalar> SegNet<S> {
    fn build(spec: ModelSpec, rng: &mut ChaCha8Rng) -> Result<Self> {
        let mut enc = Vec::new();
        let mut cin = spec.in_channels;
        for level in 0..spec.depth {
            let c = spec.channels_at(level);
            enc.push((
                ConvBlock::new(format!("enc{level}.conv1"), cin, c, &spec.norm, rng)?,
                ConvBlock::new(format!("enc{level}.conv2"), c, c, &spec.norm, rng)?,
            ));
            cin = c;
        }
        let mut dec = Vec::new();
        for level in (0..spec.depth).rev() {
            let c = spec.channels_at(level);
            let cout = if level > 0 { spec.channels_at(level - 1) } else { c };
            dec.push((
                ConvBlock::new(format!("dec{level}.conv1"), c, c, &spec.norm, rng)?,
                ConvBlock::new(format!("dec{level}.conv2"), c, cout, &spec.norm, rng)?,
            ));
        }
        let final_conv = FinalConv::new(spec.base_channels, spec.out_channels, rng)?;
        Ok(SegNet {
            spec,
            enc,
            dec,
            final_conv,
        })
    }

    fn forward<R: Rng>(&mut self, x: &Tensor<S>, training: bool, rng: &mut R) -> Result<Tensor<S>> {
        check_input(&self.spec, x)?;
        let mut indices = Vec::with_capacity(self.spec.depth);
        let mut cur = x.clone();
        for level in 0..self.spec.depth {
            cur = self.enc[level].0.forward(&cur, training)?;
            cur = self.enc[level].1.forward(&cur, training)?;
            if self.spec.dropout_rate > 0.0 {
                cur = at(
                    &format!("enc{level}.dropout"),
                    ops::dropout(&cur, self.spec.dropout_rate, training, rng),
                )?;
            }
            let (pooled, idx) = at(&format!("enc{level}.pool"), ops::maxpool2d(&cur))?;
            indices.push(idx);
            cur = pooled;
        }
        for (i, level) in (0..self.spec.depth).rev().enumerate() {
            cur = at(
                &format!("dec{level}.unpool"),
                ops::max_unpool2d(&cur, &indices[level]),
            )?;
            cur = self.dec[i].0.forward(&cur, training)?;
            cur = self.dec[i].1.forward(&cur, training)?;
        }
        self.final_conv.forward(&cur)
    }

    fn forward_frozen(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        check_input(&self.spec, x)?;
        let mut indices = Vec::with_capacity(self.spec.depth);
        let mut cur = x.clone();
        for level in 0..self.spec.depth {
            cur = self.enc[level].0.forward_frozen(&cur)?;
            cur = self.enc[level].1.forward_frozen(&cur)?;
            let (pooled, idx) = ops::maxpool2d(&cur)?;
            indices.push(idx);
            cur = pooled;
        }
        for (i, level) in (0..self.spec.depth).rev().enumerate() {
            cur = ops::max_unpool2d(&cur, &indices[level])?;
            cur = self.dec[i].0.forward_frozen(&cur)?;
            cur = self.dec[i].1.forward_frozen(&cur)?;
        }
        self.final_conv.forward(&cur)
    }

    fn visit(&mut self, v: &mut dyn StateVisitor<S>) -> Result<()> {
        for level in 0..self.enc.len() {
            self.enc[level].0.visit(v)?;
            self.enc[level].1.visit(v)?;
        }
        for level in 0..self.dec.len() {
            self.dec[level].0.visit(v)?;
            self.dec[level].1.visit(v)?;
        }
        self.final_conv.visit(v)
    }
}

impl<S: Scalar> Model<S> {
    /// Build a model with deterministically seeded Kaiming-uniform weights.
    pub fn build(spec: &ModelSpec, seed: u64) -> Result<Self> {
        spec.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        match spec.arch {
            Arch::Unet => Ok(Model::Unet(UNet::build(*spec, &mut rng)?)),
            Arch::Segnet => Ok(Model::Segnet(SegNet::build(*spec, &mut rng)?)),
        }
    }

    pub fn spec(&self) -> &ModelSpec {
        match self {
            Model::Unet(m) => &m.spec,
            Model::Segnet(m) => &m.spec,
        }
    }

    /// Training-mode forward: batch statistics, EM refresh, live dropout.
    pub fn forward_train<R: Rng>(&mut self, x: &Tensor<S>, rng: &mut R) -> Result<Tensor<S>> {
        match self {
            Model::Unet(m) => m.forward(x, true, rng),
            Model::Segnet(m) => m.forward(x, true, rng),
        }
    }

    /// Inference-mode forward: running statistics, no dropout, no mutation.
    pub fn forward_eval(&self, x: &Tensor<S>) -> Result<Tensor<S>> {
        match self {
            Model::Unet(m) => m.forward_frozen(x),
            Model::Segnet(m) => m.forward_frozen(x),
        }
    }

    pub(crate) fn visit(&mut self, v: &mut dyn StateVisitor<S>) -> Result<()> {
        match self {
            Model::Unet(m) => m.visit(v),
            Model::Segnet(m) => m.visit(v),
        }
    }

    /// Apply a closure to every learnable parameter, in a stable order.
    pub fn visit_params_mut(
        &mut self,
        f: &mut dyn FnMut(&str, &mut Tensor<S>) -> Result<()>,
    ) -> Result<()> {
        struct V<'a, S: Scalar> {
            f: &'a mut dyn FnMut(&str, &mut Tensor<S>) -> Result<()>,
        }
        impl<S: Scalar> StateVisitor<S> for V<'_, S> {
            fn param(&mut self, name: &str, t: &mut Tensor<S>) -> Result<()> {
                (self.f)(name, t)
            }
            fn buffer(&mut self, _: &str, _: &[usize], _: &mut Vec<S>) -> Result<()> {
                Ok(())
            }
            fn flag(&mut self, _: &str, _: &mut bool) -> Result<()> {
                Ok(())
            }
        }
        self.visit(&mut V { f })
    }

    pub fn param_count(&mut self) -> usize {
        let mut total = 0;
        self.visit_params_mut(&mut |_, t| {
            total += t.numel();
            Ok(())
        })
        .expect("counting cannot fail");
        total
    }

    /// Snapshot every parameter, buffer, and flag.
    pub fn export_state(&mut self) -> Vec<StateEntry<S>> {
        struct Export<S: Scalar> {
            out: Vec<StateEntry<S>>,
        }
        impl<S: Scalar> StateVisitor<S> for Export<S> {
            fn param(&mut self, name: &str, t: &mut Tensor<S>) -> Result<()> {
                self.out.push(StateEntry {
                    name: name.to_string(),
                    kind: EntryKind::Param,
                    shape: t.dims().to_vec(),
                    data: t.data().to_vec(),
                });
                Ok(())
            }
            fn buffer(&mut self, name: &str, shape: &[usize], data: &mut Vec<S>) -> Result<()> {
                self.out.push(StateEntry {
                    name: name.to_string(),
                    kind: EntryKind::Buffer,
                    shape: shape.to_vec(),
                    data: data.clone(),
                });
                Ok(())
            }
            fn flag(&mut self, name: &str, value: &mut bool) -> Result<()> {
                self.out.push(StateEntry {
                    name: name.to_string(),
                    kind: EntryKind::Flag,
                    shape: vec![1],
                    data: vec![if *value { S::ONE } else { S::ZERO }],
                });
                Ok(())
            }
        }
        let mut v = Export { out: Vec::new() };
        self.visit(&mut v).expect("export cannot fail");
        v.out
    }

    /// Restore a snapshot produced by [`export_state`](Self::export_state)
    /// (or a checkpoint). Every entry must match by name and shape, and every
    /// slot of the model must be covered.
    pub fn import_state(&mut self, entries: &[StateEntry<S>]) -> Result<()> {
        use std::collections::HashMap;
        struct Import<'a, S: Scalar> {
            by_name: HashMap<&'a str, &'a StateEntry<S>>,
            used: usize,
        }
        impl<'a, S: Scalar> Import<'a, S> {
            fn take(&mut self, name: &str, kind: EntryKind, len: usize) -> Result<&'a StateEntry<S>> {
                let e = self.by_name.get(name).copied().ok_or_else(|| {
                    Error::Format(format!("checkpoint is missing entry {name}"))
                })?;
                if e.kind != kind {
                    return Err(Error::Format(format!("entry {name} has wrong kind")));
                }
                if e.data.len() != len {
                    return Err(Error::Format(format!(
                        "entry {name} has {} values, expected {len}",
                        e.data.len()
                    )));
                }
                self.used += 1;
                Ok(e)
            }
        }
        impl<S: Scalar> StateVisitor<S> for Import<'_, S> {
            fn param(&mut self, name: &str, t: &mut Tensor<S>) -> Result<()> {
                let e = self.take(name, EntryKind::Param, t.numel())?;
                *t = Tensor::param(e.data.clone(), t.shape().clone())?;
                Ok(())
            }
            fn buffer(&mut self, name: &str, _shape: &[usize], data: &mut Vec<S>) -> Result<()> {
                let e = self.take(name, EntryKind::Buffer, data.len())?;
                data.copy_from_slice(&e.data);
                Ok(())
            }
            fn flag(&mut self, name: &str, value: &mut bool) -> Result<()> {
                let e = self.take(name, EntryKind::Flag, 1)?;
                *value = e.data[0] != S::ZERO;
                Ok(())
            }
        }
        let mut v = Import {
            by_name: entries.iter().map(|e| (e.name.as_str(), e)).collect(),
            used: 0,
        };
        self.visit(&mut v)?;
        if v.used != entries.len() {
            return Err(Error::Format(format!(
                "checkpoint has {} entries, model consumed {}",
                entries.len(),
                v.used
            )));
        }
        Ok(())
    }
}
