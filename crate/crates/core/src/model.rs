//! A miniature DeepLabV3+-style network: residual backbone, dilated pyramid
//! pooling with a global-pool branch and 1x1 fusion, and a decoder that
//! merges upsampled context with low-level backbone features.
//!
//! Three insertion points accept a regularizer: after every residual block,
//! after the pyramid fusion, and after the last decoder feature map.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::autograd::{Tape, Var};
use crate::error::{Error, Result};
use crate::metrics::LabelMap;
use crate::ops::conv::ConvGeometry;
use crate::ops::norm::{BatchNormState, NormMode};
use crate::regularizers::{self, MaskKey, RegularizerSpec};
use crate::rng;
use crate::tensor::{self, Shape, Tensor};
use crate::Mode;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub num_classes: usize,
    pub stage_widths: Vec<usize>,
    pub blocks_per_stage: usize,
    pub pyramid_rates: Vec<usize>,
    pub decoder_width: usize,
    /// Channels of the 1x1 reducer applied to the low-level skip.
    pub low_level_width: usize,
    pub output_stride: usize,
}

impl Default for ModelConfig {
    fn default() -> Self {
        ModelConfig {
            in_channels: 3,
            num_classes: 21,
            stage_widths: vec![16, 32, 64],
            blocks_per_stage: 2,
            pyramid_rates: vec![1, 2, 4],
            decoder_width: 32,
            low_level_width: 8,
            output_stride: 8,
        }
    }
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.in_channels == 0 || self.num_classes < 2 {
            return bad(format!(
                "need input channels > 0 and at least 2 classes, got {} and {}",
                self.in_channels, self.num_classes
            ));
        }
        if self.stage_widths.is_empty() || self.stage_widths.contains(&0) {
            return bad(format!(
                "stage widths must be nonempty and positive: {:?}",
                self.stage_widths
            ));
        }
        if self.blocks_per_stage == 0 || self.decoder_width == 0 || self.low_level_width == 0 {
            return bad(
                "blocks per stage, decoder width and low-level width must be positive".into(),
            );
        }
        let mut rates = self.pyramid_rates.clone();
        rates.sort_unstable();
        rates.dedup();
        if rates.len() != self.pyramid_rates.len() || rates.is_empty() || rates[0] == 0 {
            return bad(format!(
                "pyramid rates must be distinct and >= 1: {:?}",
                self.pyramid_rates
            ));
        }
        let os = self.output_stride;
        let reachable = STEM_STRIDE << (self.stage_widths.len() - 1);
        if !os.is_power_of_two() || os < STEM_STRIDE || os > reachable {
            return bad(format!(
                "output stride {os} must be a power of two in [{STEM_STRIDE}, {reachable}]"
            ));
        }
        Ok(())
    }
}

/// Downsampling of the two stride-2 stem convolutions.
const STEM_STRIDE: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HookPoint {
    BackboneBlocks,
    SppOutput,
    DecoderOutput,
}

impl HookPoint {
    pub const ALL: [HookPoint; 3] = [
        HookPoint::BackboneBlocks,
        HookPoint::SppOutput,
        HookPoint::DecoderOutput,
    ];
}

/// One regularizer (possibly `none`) per insertion point.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hooks {
    pub backbone_blocks: RegularizerSpec,
    pub spp_output: RegularizerSpec,
    pub decoder_output: RegularizerSpec,
}

impl Default for Hooks {
    fn default() -> Self {
        Hooks {
            backbone_blocks: RegularizerSpec::none(),
            spp_output: RegularizerSpec::none(),
            decoder_output: RegularizerSpec::none(),
        }
    }
}

impl Hooks {
    pub fn get(&self, at: HookPoint) -> &RegularizerSpec {
        match at {
            HookPoint::BackboneBlocks => &self.backbone_blocks,
            HookPoint::SppOutput => &self.spp_output,
            HookPoint::DecoderOutput => &self.decoder_output,
        }
    }

    pub fn get_mut(&mut self, at: HookPoint) -> &mut RegularizerSpec {
        match at {
            HookPoint::BackboneBlocks => &mut self.backbone_blocks,
            HookPoint::SppOutput => &mut self.spp_output,
            HookPoint::DecoderOutput => &mut self.decoder_output,
        }
    }

    pub fn validate(&self) -> Result<()> {
        HookPoint::ALL
            .iter()
            .try_for_each(|&h| self.get(h).validate())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GroupId {
    Backbone,
    Head,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParameterGroup {
    pub id: GroupId,
    pub members: Vec<String>,
    pub lr_multiplier: f64,
}

#[derive(Clone, Debug)]
pub struct Param {
    pub name: String,
    pub value: Tensor,
    pub group: GroupId,
}

#[derive(Clone, Copy, Debug)]
struct BnRef {
    gamma: usize,
    beta: usize,
    state: usize,
}

#[derive(Clone, Debug)]
struct ConvUnit {
    weight: usize,
    bias: Option<usize>,
    bn: Option<BnRef>,
    geom: ConvGeometry,
    relu: bool,
}

#[derive(Clone, Debug)]
struct ResBlock {
    conv1: ConvUnit,
    conv2: ConvUnit,
    proj: Option<ConvUnit>,
}

#[derive(Clone, Debug)]
struct Layout {
    stem: Vec<ConvUnit>,
    stages: Vec<Vec<ResBlock>>,
    branches: Vec<ConvUnit>,
    pool: ConvUnit,
    fuse: ConvUnit,
    reduce: ConvUnit,
    dec1: ConvUnit,
    dec2: ConvUnit,
    classifier: ConvUnit,
}

/// Per-forward settings: the epoch drives the regularizer schedules and
/// `batch` keys the mask streams.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ForwardCtx {
    pub epoch: usize,
    pub mode: Mode,
    pub batch: u64,
}

impl ForwardCtx {
    pub fn eval() -> Self {
        ForwardCtx {
            epoch: 0,
            mode: Mode::Eval,
            batch: 0,
        }
    }

    pub fn train(epoch: usize, batch: u64) -> Self {
        ForwardCtx {
            epoch,
            mode: Mode::Train,
            batch,
        }
    }
}

pub struct ForwardVars {
    pub logits: Var,
    /// Tape handle of every parameter, in model order.
    pub params: Vec<Var>,
}

/// Invocation counters for instrumentation.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct HookStats {
    /// Train-mode passes through each insertion point (backbone, spp, decoder).
    pub applications: [u64; 3],
    /// Masks actually drawn.
    pub masks_drawn: u64,
}

const SPP_LAYER: u64 = 1_000;
const DECODER_LAYER: u64 = 1_001;

#[derive(Clone, Debug)]
pub struct Model {
    config: ModelConfig,
    hooks: Hooks,
    params: Vec<Param>,
    bn: Vec<BatchNormState>,
    bn_names: Vec<String>,
    layout: Layout,
    pub stats: HookStats,
}

struct Builder<R> {
    params: Vec<Param>,
    bn: Vec<BatchNormState>,
    bn_names: Vec<String>,
    rng: R,
}

impl<R: rand::Rng> Builder<R> {
    fn param(&mut self, name: String, value: Tensor, group: GroupId) -> usize {
        self.params.push(Param { name, value, group });
        self.params.len() - 1
    }

    #[allow(clippy::too_many_arguments)]
    fn conv(
        &mut self,
        name: &str,
        group: GroupId,
        cin: usize,
        cout: usize,
        k: usize,
        geom: ConvGeometry,
        bn: bool,
        relu: bool,
    ) -> ConvUnit {
        let std = (2.0 / (cin * k * k) as f64).sqrt();
        let w = Tensor::randn(Shape::new(cout, cin, k, k), std, &mut self.rng);
        let weight = self.param(format!("{name}.weight"), w, group);
        let (bias, bn) = if bn {
            let gamma = self.param(
                format!("{name}.bn.gamma"),
                Tensor::ones(Shape::new(1, cout, 1, 1)),
                group,
            );
            let beta = self.param(
                format!("{name}.bn.beta"),
                Tensor::zeros(Shape::new(1, cout, 1, 1)),
                group,
            );
            self.bn.push(BatchNormState::new(cout));
            self.bn_names.push(format!("{name}.bn"));
            (
                None,
                Some(BnRef {
                    gamma,
                    beta,
                    state: self.bn.len() - 1,
                }),
            )
        } else {
            let b = self.param(
                format!("{name}.bias"),
                Tensor::zeros(Shape::new(1, cout, 1, 1)),
                group,
            );
            (Some(b), None)
        };
        ConvUnit {
            weight,
            bias,
            bn,
            geom,
            relu,
        }
    }
}

fn g(stride: usize, padding: usize, dilation: usize) -> ConvGeometry {
    ConvGeometry::new(stride, padding, dilation)
}

impl Model {
    pub fn build(config: ModelConfig, hooks: Hooks, seed: u64) -> Result<Model> {
        config.validate()?;
        hooks.validate()?;
        let mut b = Builder {
            params: Vec::new(),
            bn: Vec::new(),
            bn_names: Vec::new(),
            rng: rng::keyed(&[rng::stream::INIT, seed]),
        };
        use GroupId::{Backbone, Head};
        let w0 = config.stage_widths[0];
        let stem = vec![
            b.conv(
                "stem.0",
                Backbone,
                config.in_channels,
                w0,
                3,
                g(2, 1, 1),
                true,
                true,
            ),
            b.conv("stem.1", Backbone, w0, w0, 3, g(2, 1, 1), true, true),
        ];
        let mut stages = Vec::new();
        let (mut cin, mut current, mut dilation) = (w0, STEM_STRIDE, 1);
        for (si, &width) in config.stage_widths.iter().enumerate() {
            let mut stride = 1;
            if si > 0 {
                if current < config.output_stride {
                    stride = 2;
                    current *= 2;
                } else {
                    dilation *= 2;
                }
            }
            let mut blocks = Vec::new();
            for bi in 0..config.blocks_per_stage {
                let name = format!("stage{si}.block{bi}");
                let (s, inp) = if bi == 0 { (stride, cin) } else { (1, width) };
                let conv1 = b.conv(
                    &format!("{name}.conv1"),
                    Backbone,
                    inp,
                    width,
                    3,
                    g(s, dilation, dilation),
                    true,
                    true,
                );
                let conv2 = b.conv(
                    &format!("{name}.conv2"),
                    Backbone,
                    width,
                    width,
                    3,
                    g(1, dilation, dilation),
                    true,
                    false,
                );
                let proj = (s != 1 || inp != width).then(|| {
                    b.conv(
                        &format!("{name}.proj"),
                        Backbone,
                        inp,
                        width,
                        1,
                        g(s, 0, 1),
                        true,
                        false,
                    )
                });
                blocks.push(ResBlock { conv1, conv2, proj });
            }
            stages.push(blocks);
            cin = width;
        }
        let d = config.decoder_width;
        let branches = config
            .pyramid_rates
            .iter()
            .map(|&r| {
                b.conv(
                    &format!("aspp.rate{r}"),
                    Head,
                    cin,
                    d,
                    3,
                    g(1, r, r),
                    true,
                    true,
                )
            })
            .collect::<Vec<_>>();
        let pool = b.conv("aspp.pool", Head, cin, d, 1, g(1, 0, 1), false, true);
        let fuse = b.conv(
            "aspp.fuse",
            Head,
            d * (branches.len() + 1),
            d,
            1,
            g(1, 0, 1),
            true,
            true,
        );
        let l = config.low_level_width;
        let reduce = b.conv("decoder.reduce", Head, w0, l, 1, g(1, 0, 1), true, true);
        let dec1 = b.conv("decoder.conv1", Head, d + l, d, 3, g(1, 1, 1), true, true);
        let dec2 = b.conv("decoder.conv2", Head, d, d, 3, g(1, 1, 1), true, true);
        let classifier = b.conv(
            "classifier",
            Head,
            d,
            config.num_classes,
            1,
            g(1, 0, 1),
            false,
            false,
        );
        Ok(Model {
            config,
            hooks,
            params: b.params,
            bn: b.bn,
            bn_names: b.bn_names,
            layout: Layout {
                stem,
                stages,
                branches,
                pool,
                fuse,
                reduce,
                dec1,
                dec2,
                classifier,
            },
            stats: HookStats::default(),
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn hooks(&self) -> &Hooks {
        &self.hooks
    }

    pub fn set_hooks(&mut self, hooks: Hooks) -> Result<()> {
        hooks.validate()?;
        self.hooks = hooks;
        Ok(())
    }

    pub fn params(&self) -> &[Param] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Param] {
        &mut self.params
    }

    pub fn param_count(&self) -> usize {
        self.params.iter().map(|p| p.value.shape().numel()).sum()
    }

    pub fn batchnorm_states(&self) -> &[BatchNormState] {
        &self.bn
    }

    pub fn parameter_groups(&self) -> [ParameterGroup; 2] {
        self.parameter_groups_with(10.0)
    }

    /// Backbone at 1x, head (pyramid, decoder, classifier) at `head_multiplier`.
    pub fn parameter_groups_with(&self, head_multiplier: f64) -> [ParameterGroup; 2] {
        let members = |id| {
            self.params
                .iter()
                .filter(|p| p.group == id)
                .map(|p| p.name.clone())
                .collect()
        };
        [
            ParameterGroup {
                id: GroupId::Backbone,
                members: members(GroupId::Backbone),
                lr_multiplier: 1.0,
            },
            ParameterGroup {
                id: GroupId::Head,
                members: members(GroupId::Head),
                lr_multiplier: head_multiplier,
            },
        ]
    }

    fn check_input(&self, s: Shape) -> Result<()> {
        let os = self.config.output_stride;
        if s.c() != self.config.in_channels {
            return Err(Error::ShapeMismatch {
                op: "model input",
                left: s.to_vec(),
                right: vec![self.config.in_channels],
            });
        }
        if s.h() % os != 0 || s.w() % os != 0 || s.h() == 0 || s.w() == 0 {
            return Err(Error::Config(format!(
                "input {}x{} is not divisible by output stride {os}",
                s.h(),
                s.w()
            )));
        }
        Ok(())
    }

    fn conv_unit(
        &mut self,
        tape: &mut Tape,
        p: &[Var],
        x: Var,
        u: &ConvUnit,
        mode: Mode,
    ) -> Result<Var> {
        let mut y = tape.conv2d(x, p[u.weight], u.bias.map(|b| p[b]), u.geom)?;
        if let Some(bn) = u.bn {
            let nm = match mode {
                Mode::Train => NormMode::Training,
                Mode::Eval => NormMode::Inference,
            };
            y = tape.batchnorm2d(y, p[bn.gamma], p[bn.beta], &mut self.bn[bn.state], nm)?;
        }
        if u.relu {
            y = tape.relu(y)?;
        }
        Ok(y)
    }

    fn hook(
        &mut self,
        tape: &mut Tape,
        x: Var,
        at: HookPoint,
        layer: u64,
        ctx: &ForwardCtx,
    ) -> Result<Var> {
        let spec = *self.hooks.get(at);
        if ctx.mode == Mode::Eval || !spec.is_active() {
            return Ok(x);
        }
        self.stats.applications[at as usize] += 1;
        let key = MaskKey {
            seed: spec.seed,
            epoch: ctx.epoch,
            layer,
            batch: ctx.batch,
        };
        let (y, mask) = regularizers::apply_on_tape(tape, x, &spec, key, ctx.mode)?;
        if mask.is_some() {
            self.stats.masks_drawn += 1;
        }
        Ok(y)
    }

    /// Records the full forward pass on `tape`. Parameters enter as leaves
    /// that require gradients when `track` is set.
    pub fn forward_on(
        &mut self,
        tape: &mut Tape,
        input: Var,
        ctx: &ForwardCtx,
        track: bool,
    ) -> Result<ForwardVars> {
        let in_shape = tape.shape(input);
        self.check_input(in_shape)?;
        let p: Vec<Var> = self
            .params
            .iter()
            .map(|q| tape.leaf(q.value.clone().with_requires_grad(track)))
            .collect();
        let layout = self.layout.clone();
        let mode = ctx.mode;

        let mut x = input;
        for u in &layout.stem {
            x = self.conv_unit(tape, &p, x, u, mode)?;
        }
        let mut low_level = None;
        let mut layer = 0u64;
        for (si, stage) in layout.stages.iter().enumerate() {
            for block in stage {
                let h = self.conv_unit(tape, &p, x, &block.conv1, mode)?;
                let h = self.conv_unit(tape, &p, h, &block.conv2, mode)?;
                let skip = match &block.proj {
                    Some(u) => self.conv_unit(tape, &p, x, u, mode)?,
                    None => x,
                };
                let sum = tape.add(h, skip)?;
                let out = tape.relu(sum)?;
                x = self.hook(tape, out, HookPoint::BackboneBlocks, layer, ctx)?;
                layer += 1;
            }
            if si == 0 {
                low_level = Some(x);
            }
        }
        let low_level = low_level.expect("at least one stage");

        let deep = tape.shape(x);
        let mut branches = Vec::with_capacity(layout.branches.len() + 1);
        for u in &layout.branches {
            branches.push(self.conv_unit(tape, &p, x, u, mode)?);
        }
        let pooled = tape.global_avg_pool(x)?;
        let pooled = self.conv_unit(tape, &p, pooled, &layout.pool, mode)?;
        branches.push(tape.upsample(pooled, deep.h(), deep.w())?);
        let cat = tape.concat_channels(&branches)?;
        let fused = self.conv_unit(tape, &p, cat, &layout.fuse, mode)?;
        let fused = self.hook(tape, fused, HookPoint::SppOutput, SPP_LAYER, ctx)?;

        let ll = tape.shape(low_level);
        let up = tape.upsample(fused, ll.h(), ll.w())?;
        let reduced = self.conv_unit(tape, &p, low_level, &layout.reduce, mode)?;
        let cat = tape.concat_channels(&[up, reduced])?;
        let h = self.conv_unit(tape, &p, cat, &layout.dec1, mode)?;
        let h = self.conv_unit(tape, &p, h, &layout.dec2, mode)?;
        let h = self.hook(tape, h, HookPoint::DecoderOutput, DECODER_LAYER, ctx)?;
        let logits = self.conv_unit(tape, &p, h, &layout.classifier, mode)?;
        let logits = tape.upsample(logits, in_shape.h(), in_shape.w())?;
        Ok(ForwardVars { logits, params: p })
    }

    /// Forward pass without gradient tracking.
    pub fn forward(&mut self, x: &Tensor, ctx: &ForwardCtx) -> Result<Tensor> {
        let mut tape = Tape::new();
        let input = tape.leaf(x.clone());
        let out = self.forward_on(&mut tape, input, ctx, false)?;
        Ok(tape.take(out.logits))
    }

    /// Loads tensors whose names match backbone parameters; returns how many
    /// were replaced.
    pub fn load_backbone(&mut self, manifest: &Path, blob: &Path) -> Result<usize> {
        let named = tensor::load_named(manifest, blob)?;
        let mut loaded = 0;
        for (name, t) in named {
            if let Some(p) = self
                .params
                .iter_mut()
                .find(|p| p.name == name && p.group == GroupId::Backbone)
            {
                if p.value.shape() != t.shape() {
                    return Err(Error::ShapeMismatch {
                        op: "load_backbone",
                        left: p.value.shape().to_vec(),
                        right: t.shape().to_vec(),
                    });
                }
                p.value = t;
                loaded += 1;
            }
        }
        Ok(loaded)
    }

    /// Writes `<stem>.json` (config, hooks, file names), `<stem>.manifest.json`
    /// and `<stem>.bin`. Optimizer velocity, when given, is stored alongside.
    pub fn save_checkpoint(&self, stem: &Path, velocity: Option<&[Vec<f64>]>) -> Result<PathBuf> {
        let mut tensors: Vec<(String, Tensor)> = self
            .params
            .iter()
            .map(|p| (p.name.clone(), p.value.clone()))
            .collect();
        for (name, st) in self.bn_names.iter().zip(&self.bn) {
            let c = st.channels();
            tensors.push((
                format!("{name}.running_mean"),
                Tensor::from_vec(Shape::new(1, c, 1, 1), st.running_mean.clone())?,
            ));
            tensors.push((
                format!("{name}.running_var"),
                Tensor::from_vec(Shape::new(1, c, 1, 1), st.running_var.clone())?,
            ));
        }
        if let Some(v) = velocity {
            for (p, v) in self.params.iter().zip(v) {
                tensors.push((
                    format!("velocity.{}", p.name),
                    Tensor::from_vec(p.value.shape(), v.clone())?,
                ));
            }
        }
        let file = |ext: &str| {
            let mut s = stem.as_os_str().to_owned();
            s.push(ext);
            PathBuf::from(s)
        };
        let (sidecar, manifest, blob) = (file(".json"), file(".manifest.json"), file(".bin"));
        let refs: Vec<(String, &Tensor)> = tensors.iter().map(|(n, t)| (n.clone(), t)).collect();
        tensor::save_named(&refs, &manifest, &blob)?;
        let meta = CheckpointMeta {
            config: self.config.clone(),
            hooks: self.hooks,
            manifest: file_name(&manifest),
            blob: file_name(&blob),
            has_velocity: velocity.is_some(),
        };
        fs::write(&sidecar, serde_json::to_string_pretty(&meta)?)
            .map_err(|e| Error::io(&sidecar, e))?;
        Ok(sidecar)
    }

    /// Inverse of [`Model::save_checkpoint`]; takes the sidecar path.
    pub fn load_checkpoint(sidecar: &Path) -> Result<(Model, Option<Vec<Vec<f64>>>)> {
        let text = fs::read_to_string(sidecar).map_err(|e| Error::io(sidecar, e))?;
        let meta: CheckpointMeta = serde_json::from_str(&text)?;
        let dir = sidecar.parent().unwrap_or(Path::new("."));
        let named = tensor::load_named(&dir.join(&meta.manifest), &dir.join(&meta.blob))?;
        let mut model = Model::build(meta.config, meta.hooks, 0)?;
        let lookup = |name: &str| -> Result<&Tensor> {
            named
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::config(format!("checkpoint is missing {name}")))
        };
        for p in &mut model.params {
            let t = lookup(&p.name)?;
            if t.shape() != p.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "load_checkpoint",
                    left: p.value.shape().to_vec(),
                    right: t.shape().to_vec(),
                });
            }
            p.value = t.clone();
        }
        for (name, st) in model.bn_names.iter().zip(&mut model.bn) {
            st.running_mean = lookup(&format!("{name}.running_mean"))?.data().to_vec();
            st.running_var = lookup(&format!("{name}.running_var"))?.data().to_vec();
        }
        let velocity = if meta.has_velocity {
            Some(
                model
                    .params
                    .iter()
                    .map(|p| lookup(&format!("velocity.{}", p.name)).map(|t| t.data().to_vec()))
                    .collect::<Result<Vec<_>>>()?,
            )
        } else {
            None
        };
        Ok((model, velocity))
    }
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
struct CheckpointMeta {
    config: ModelConfig,
    hooks: Hooks,
    manifest: String,
    blob: String,
    has_velocity: bool,
}

/// Per-pixel argmax over the class axis, one map per batch item.
pub fn predict_labels(logits: &Tensor) -> Vec<LabelMap> {
    let s = logits.shape();
    (0..s.n())
        .map(|n| {
            let data = (0..s.plane())
                .map(|px| {
                    let mut best = 0;
                    let mut best_v = f64::NEG_INFINITY;
                    for c in 0..s.c() {
                        let v = logits.plane(n, c)[px];
                        if v > best_v {
                            best_v = v;
                            best = c;
                        }
                    }
                    best as u8
                })
                .collect();
            LabelMap::new(s.h(), s.w(), data).expect("plane size")
        })
        .collect()
}
