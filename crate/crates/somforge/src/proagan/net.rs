//! Mirrored progressive generator and discriminator.
//!
//! Both nets share one channel rule: `channels(level) = min(c_max, c0 *
//! 2^(L_max - level))`, so the discriminator mirrors the generator block for
//! block. Growth appends one top-resolution block (and its 1-channel
//! projection) without touching existing parameters; fading blends the new
//! path with the previous level at the image (generator) or feature
//! (discriminator) boundary.

use rand_distr::{Distribution, StandardNormal};

use crate::proagan::schedule::{resolution, FadeState};
use crate::rng::Rng;
use crate::tensor::{Graph, NodeId, Op, Tensor};
use crate::{Error, Result};

/// Architecture-wide settings shared by the generator and discriminator.
#[derive(Debug, Clone, PartialEq)]
pub struct NetConfig {
    pub latent_dim: usize,
    /// Channel count at the top (max_level) resolution.
    pub base_channels: usize,
    /// Channel cap toward the low-resolution end.
    pub max_channels: usize,
    /// Level of the full dataset resolution; blocks can grow up to here.
    pub max_level: usize,
    pub leaky_slope: f64,
    pub pixel_norm_eps: f64,
    /// Runtime He-scaling of stored N(0,1) weights instead of He init.
    pub use_eqlr: bool,
    /// Minibatch-stddev channel before the discriminator base conv.
    pub use_mbstd: bool,
    /// Generator output: out = out_mid + out_half * tanh(.)
    pub out_mid: f64,
    pub out_half: f64,
}

impl NetConfig {
    pub fn channels(&self, level: usize) -> usize {
        let shift = self.max_level - level;
        self.max_channels.min(self.base_channels << shift)
    }
}

/// Flat named parameter store; order is construction order and is the
/// contract for optimizer state and checkpoints.
#[derive(Debug, Clone, Default)]
pub struct ParamSet {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

impl ParamSet {
    fn add(&mut self, name: String, t: Tensor) -> usize {
        self.names.push(name);
        self.tensors.push(t);
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn tensors(&self) -> &[Tensor] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor] {
        &mut self.tensors
    }

    pub fn total_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.names.iter().position(|n| n == name).map(|i| &self.tensors[i])
    }

    pub fn set(&mut self, name: &str, t: Tensor) -> Result<()> {
        match self.names.iter().position(|n| n == name) {
            Some(i) => {
                if self.tensors[i].shape() != t.shape() {
                    return Err(Error::Shape(format!(
                        "parameter '{name}': shape {:?} != stored {:?}",
                        t.shape(),
                        self.tensors[i].shape()
                    )));
                }
                self.tensors[i] = t;
                Ok(())
            }
            None => Err(Error::Format(format!("unknown parameter '{name}'"))),
        }
    }
}

/// Parameter tensors staged onto a graph as input nodes, aligned with
/// [`ParamSet`] order.
pub struct StagedParams {
    pub ids: Vec<NodeId>,
}

/// One weight+bias layer (conv or dense) with its runtime He scale.
#[derive(Debug, Clone, Copy)]
struct Layer {
    w: usize,
    b: usize,
    /// Multiplier applied to the stored weight at use time (1.0 unless eqlr).
    scale: f64,
}

fn he_std(fan_in: usize, gain: f64) -> f64 {
    gain / (fan_in as f64).sqrt()
}

fn normal_tensor(shape: &[usize], std: f64, rng: &mut Rng) -> Tensor {
    let data: Vec<f32> = (0..shape.iter().product::<usize>())
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            (z * std) as f32
        })
        .collect();
    Tensor::from_f32(shape, data)
}

fn add_layer(
    params: &mut ParamSet,
    name: &str,
    w_shape: &[usize],
    fan_in: usize,
    gain: f64,
    use_eqlr: bool,
    rng: &mut Rng,
) -> Layer {
    let (init_std, scale) =
        if use_eqlr { (1.0, he_std(fan_in, gain)) } else { (he_std(fan_in, gain), 1.0) };
    let bias_len = w_shape[0];
    let w = params.add(format!("{name}.w"), normal_tensor(w_shape, init_std, rng));
    let b = params.add(format!("{name}.b"), Tensor::zeros(&[bias_len], crate::tensor::DType::F32));
    Layer { w, b, scale }
}

const LRELU_GAIN: f64 = std::f64::consts::SQRT_2;
const LINEAR_GAIN: f64 = 1.0;

fn staged_weight(g: &mut Graph, sp: &StagedParams, layer: Layer) -> Result<NodeId> {
    if layer.scale == 1.0 {
        Ok(sp.ids[layer.w])
    } else {
        g.apply(Op::ScaleByConstant { factor: layer.scale }, &[sp.ids[layer.w]])
    }
}

fn conv(g: &mut Graph, sp: &StagedParams, layer: Layer, x: NodeId) -> Result<NodeId> {
    let w = staged_weight(g, sp, layer)?;
    let y = g.apply(Op::Conv2d, &[x, w])?;
    g.apply(Op::BiasAdd, &[y, sp.ids[layer.b]])
}

fn dense(g: &mut Graph, sp: &StagedParams, layer: Layer, x: NodeId) -> Result<NodeId> {
    let w = staged_weight(g, sp, layer)?;
    let y = g.apply(Op::Dense, &[x, w])?;
    g.apply(Op::BiasAdd, &[y, sp.ids[layer.b]])
}

/// alpha * new + (1 - alpha) * old, skipping the degenerate endpoints so the
/// endpoint identities hold bit-exactly.
fn blend(g: &mut Graph, new: NodeId, old: NodeId, alpha: f64) -> Result<NodeId> {
    if alpha == 0.0 {
        return Ok(old);
    }
    if alpha == 1.0 {
        return Ok(new);
    }
    let a = g.apply(Op::ScaleByConstant { factor: alpha }, &[new])?;
    let b = g.apply(Op::ScaleByConstant { factor: 1.0 - alpha }, &[old])?;
    g.apply(Op::Add, &[a, b])
}

// ---------------------------------------------------------------------------
// Generator
// ---------------------------------------------------------------------------

pub struct Generator {
    pub cfg: NetConfig,
    pub level: usize,
    pub params: ParamSet,
    base_dense: Layer,
    base_conv: Layer,
    /// (conv1, conv2) per level 1..=level.
    blocks: Vec<(Layer, Layer)>,
    /// 1-channel projections per level 0..=level.
    torgb: Vec<Layer>,
}

impl Generator {
    pub fn new(cfg: NetConfig, level: usize, rng: &mut Rng) -> Result<Self> {
        if level > cfg.max_level {
            return Err(Error::Config(format!(
                "generator level {level} exceeds max level {}",
                cfg.max_level
            )));
        }
        let mut params = ParamSet::default();
        let ch0 = cfg.channels(0);
        let base_dense = add_layer(
            &mut params,
            "g.base.dense",
            &[ch0 * 16, cfg.latent_dim],
            cfg.latent_dim,
            LRELU_GAIN,
            cfg.use_eqlr,
            rng,
        );
        let base_conv = add_layer(
            &mut params,
            "g.base.conv",
            &[ch0, ch0, 3, 3],
            ch0 * 9,
            LRELU_GAIN,
            cfg.use_eqlr,
            rng,
        );
        let torgb0 = add_layer(
            &mut params,
            "g.torgb0",
            &[1, ch0, 1, 1],
            ch0,
            LINEAR_GAIN,
            cfg.use_eqlr,
            rng,
        );
        let mut net = Generator {
            cfg,
            level: 0,
            params,
            base_dense,
            base_conv,
            blocks: Vec::new(),
            torgb: vec![torgb0],
        };
        for _ in 0..level {
            net.grow(rng)?;
        }
        Ok(net)
    }

    /// Add the next resolution block; existing parameters are untouched.
    pub fn grow(&mut self, rng: &mut Rng) -> Result<()> {
        let next = self.level + 1;
        if next > self.cfg.max_level {
            return Err(Error::Config(format!(
                "generator cannot grow past level {}",
                self.cfg.max_level
            )));
        }
        let (c_prev, c) = (self.cfg.channels(next - 1), self.cfg.channels(next));
        let conv1 = add_layer(
            &mut self.params,
            &format!("g.block{next}.conv1"),
            &[c, c_prev, 3, 3],
            c_prev * 9,
            LRELU_GAIN,
            self.cfg.use_eqlr,
            rng,
        );
        let conv2 = add_layer(
            &mut self.params,
            &format!("g.block{next}.conv2"),
            &[c, c, 3, 3],
            c * 9,
            LRELU_GAIN,
            self.cfg.use_eqlr,
            rng,
        );
        let torgb = add_layer(
            &mut self.params,
            &format!("g.torgb{next}"),
            &[1, c, 1, 1],
            c,
            LINEAR_GAIN,
            self.cfg.use_eqlr,
            rng,
        );
        self.blocks.push((conv1, conv2));
        self.torgb.push(torgb);
        self.level = next;
        Ok(())
    }

    pub fn stage(&self, g: &mut Graph) -> StagedParams {
        StagedParams { ids: self.params.tensors().iter().map(|t| g.input(t.clone())).collect() }
    }

    fn act_norm(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        let a = g.apply(Op::LeakyRelu { slope: self.cfg.leaky_slope }, &[x])?;
        g.apply(Op::PixelNorm { eps: self.cfg.pixel_norm_eps }, &[a])
    }

    /// Project a feature map to the scaled-tanh output image.
    fn to_image(&self, g: &mut Graph, sp: &StagedParams, level: usize, x: NodeId) -> Result<NodeId> {
        let y = conv(g, sp, self.torgb[level], x)?;
        let t = g.apply(Op::Tanh, &[y])?;
        let scaled = g.apply(Op::ScaleByConstant { factor: self.cfg.out_half }, &[t])?;
        let mid = g.input(Tensor::from_f32(&[1], vec![self.cfg.out_mid as f32]));
        g.apply(Op::BiasAdd, &[scaled, mid])
    }

    /// Forward pass: latent batch `[B, latent_dim]` to images at the fade
    /// level's resolution `[B, 1, r, r]`.
    pub fn forward(
        &self,
        g: &mut Graph,
        sp: &StagedParams,
        z: NodeId,
        fade: &FadeState,
    ) -> Result<NodeId> {
        if fade.level != self.level {
            return Err(Error::Shape(format!(
                "gen_forward: fade level {} != network level {}",
                fade.level, self.level
            )));
        }
        let zs = g.value(z).shape().to_vec();
        if zs.len() != 2 || zs[1] != self.cfg.latent_dim {
            return Err(Error::Shape(format!(
                "gen_forward: latent shape {:?}, expected [B, {}]",
                zs, self.cfg.latent_dim
            )));
        }
        let batch = zs[0];
        let ch0 = self.cfg.channels(0);

        // 4x4 base
        let h = dense(g, sp, self.base_dense, z)?;
        let h = g.apply(Op::Reshape { shape: vec![batch, ch0, 4, 4] }, &[h])?;
        let h = self.act_norm(g, h)?;
        let h = conv(g, sp, self.base_conv, h)?;
        let mut feat = self.act_norm(g, h)?;
        let mut prev_feat = feat;

        for &(conv1, conv2) in &self.blocks {
            prev_feat = feat;
            let up = g.apply(Op::UpsampleNearest2x, &[feat])?;
            let h = conv(g, sp, conv1, up)?;
            let h = self.act_norm(g, h)?;
            let h = conv(g, sp, conv2, h)?;
            feat = self.act_norm(g, h)?;
        }

        if self.level == 0 || fade.alpha >= 1.0 {
            return self.to_image(g, sp, self.level, feat);
        }
        // fading: blend the new top output with the upsampled previous-level output
        let img_new = self.to_image(g, sp, self.level, feat)?;
        let img_prev = self.to_image(g, sp, self.level - 1, prev_feat)?;
        let img_prev_up = g.apply(Op::UpsampleNearest2x, &[img_prev])?;
        blend(g, img_new, img_prev_up, fade.alpha)
    }

    /// Convenience inference pass (no tape retained).
    pub fn generate(&self, z: &Tensor, fade: &FadeState) -> Result<Tensor> {
        let mut g = Graph::inference();
        let sp = self.stage(&mut g);
        let zid = g.input(z.clone());
        let out = self.forward(&mut g, &sp, zid, fade)?;
        Ok(g.value(out).clone())
    }
}

// ---------------------------------------------------------------------------
// Discriminator
// ---------------------------------------------------------------------------

pub struct Discriminator {
    pub cfg: NetConfig,
    pub level: usize,
    pub params: ParamSet,
    fromrgb: Vec<Layer>,
    /// (conv1, conv2) per level 1..=level; conv2 steps channels down a level.
    blocks: Vec<(Layer, Layer)>,
    base_conv: Layer,
    base_dense1: Layer,
    base_dense2: Layer,
}

impl Discriminator {
    pub fn new(cfg: NetConfig, level: usize, rng: &mut Rng) -> Result<Self> {
        if level > cfg.max_level {
            return Err(Error::Config(format!(
                "discriminator level {level} exceeds max level {}",
                cfg.max_level
            )));
        }
        let mut params = ParamSet::default();
        let ch0 = cfg.channels(0);
        let conv_in = ch0 + if cfg.use_mbstd { 1 } else { 0 };
        let base_conv = add_layer(
            &mut params,
            "d.base.conv",
            &[ch0, conv_in, 3, 3],
            conv_in * 9,
            LRELU_GAIN,
            cfg.use_eqlr,
            rng,
        );
        let base_dense1 = add_layer(
            &mut params,
            "d.base.dense1",
            &[ch0, ch0 * 16],
            ch0 * 16,
            LRELU_GAIN,
            cfg.use_eqlr,
            rng,
        );
        let base_dense2 = add_layer(
            &mut params,
            "d.base.dense2",
            &[1, ch0],
            ch0,
            LINEAR_GAIN,
            cfg.use_eqlr,
            rng,
        );
        let fromrgb0 = add_layer(
            &mut params,
            "d.fromrgb0",
            &[ch0, 1, 1, 1],
            1,
            LRELU_GAIN,
            cfg.use_eqlr,
            rng,
        );
        let mut net = Discriminator {
            cfg,
            level: 0,
            params,
            fromrgb: vec![fromrgb0],
            blocks: Vec::new(),
            base_conv,
            base_dense1,
            base_dense2,
        };
        for _ in 0..level {
            net.grow(rng)?;
        }
        Ok(net)
    }

    /// Mirror of [`Generator::grow`]: prepend a block on the input side.
    pub fn grow(&mut self, rng: &mut Rng) -> Result<()> {
        let next = self.level + 1;
        if next > self.cfg.max_level {
            return Err(Error::Config(format!(
                "discriminator cannot grow past level {}",
                self.cfg.max_level
            )));
        }
        let (c_prev, c) = (self.cfg.channels(next - 1), self.cfg.channels(next));
        let conv1 = add_layer(
            &mut self.params,
            &format!("d.block{next}.conv1"),
            &[c, c, 3, 3],
            c * 9,
            LRELU_GAIN,
            self.cfg.use_eqlr,
            rng,
        );
        let conv2 = add_layer(
            &mut self.params,
            &format!("d.block{next}.conv2"),
            &[c_prev, c, 3, 3],
            c * 9,
            LRELU_GAIN,
            self.cfg.use_eqlr,
            rng,
        );
        let fromrgb = add_layer(
            &mut self.params,
            &format!("d.fromrgb{next}"),
            &[c, 1, 1, 1],
            1,
            LRELU_GAIN,
            self.cfg.use_eqlr,
            rng,
        );
        self.blocks.push((conv1, conv2));
        self.fromrgb.push(fromrgb);
        self.level = next;
        Ok(())
    }

    pub fn stage(&self, g: &mut Graph) -> StagedParams {
        StagedParams { ids: self.params.tensors().iter().map(|t| g.input(t.clone())).collect() }
    }

    fn lrelu(&self, g: &mut Graph, x: NodeId) -> Result<NodeId> {
        g.apply(Op::LeakyRelu { slope: self.cfg.leaky_slope }, &[x])
    }

    fn from_rgb(&self, g: &mut Graph, sp: &StagedParams, level: usize, x: NodeId) -> Result<NodeId> {
        let h = conv(g, sp, self.fromrgb[level], x)?;
        self.lrelu(g, h)
    }

    /// Conv-conv-pool block taking level `lvl` features down one level.
    fn block(&self, g: &mut Graph, sp: &StagedParams, lvl: usize, x: NodeId) -> Result<NodeId> {
        let (conv1, conv2) = self.blocks[lvl - 1];
        let h = conv(g, sp, conv1, x)?;
        let h = self.lrelu(g, h)?;
        let h = conv(g, sp, conv2, h)?;
        let h = self.lrelu(g, h)?;
        g.apply(Op::AvgPool2x, &[h])
    }

    fn base(&self, g: &mut Graph, sp: &StagedParams, x: NodeId) -> Result<NodeId> {
        let x = if self.cfg.use_mbstd {
            g.apply(Op::MinibatchStddev { eps: 1e-8 }, &[x])?
        } else {
            x
        };
        let h = conv(g, sp, self.base_conv, x)?;
        let h = self.lrelu(g, h)?;
        let batch = g.value(h).shape()[0];
        let ch0 = self.cfg.channels(0);
        let h = g.apply(Op::Reshape { shape: vec![batch, ch0 * 16] }, &[h])?;
        let h = dense(g, sp, self.base_dense1, h)?;
        let h = self.lrelu(g, h)?;
        dense(g, sp, self.base_dense2, h)
    }

    /// Score a batch of images `[B, 1, r, r]` at the fade level; returns
    /// `[B, 1]` unbounded scores, order-preserving.
    pub fn forward(
        &self,
        g: &mut Graph,
        sp: &StagedParams,
        x: NodeId,
        fade: &FadeState,
    ) -> Result<NodeId> {
        if fade.level != self.level {
            return Err(Error::Shape(format!(
                "disc_forward: fade level {} != network level {}",
                fade.level, self.level
            )));
        }
        let r = resolution(self.level);
        let xs = g.value(x).shape().to_vec();
        if xs.len() != 4 || xs[1] != 1 || xs[2] != r || xs[3] != r {
            return Err(Error::Shape(format!(
                "disc_forward: input shape {xs:?}, expected [B, 1, {r}, {r}]"
            )));
        }

        let mut h = if self.level == 0 {
            self.from_rgb(g, sp, 0, x)?
        } else {
            let top = self.level;
            let h_through = {
                let h = self.from_rgb(g, sp, top, x)?;
                self.block(g, sp, top, h)?
            };
            let h = if fade.alpha >= 1.0 {
                h_through
            } else {
                // mirrored input-side blend with the downscaled image
                let xd = g.apply(Op::AvgPool2x, &[x])?;
                let h_skip = self.from_rgb(g, sp, top - 1, xd)?;
                blend(g, h_through, h_skip, fade.alpha)?
            };
            let mut h = h;
            for lvl in (1..top).rev() {
                h = self.block(g, sp, lvl, h)?;
            }
            h
        };
        h = self.base(g, sp, h)?;
        Ok(h)
    }

    /// Convenience inference scoring.
    pub fn score(&self, x: &Tensor, fade: &FadeState) -> Result<Tensor> {
        let mut g = Graph::inference();
        let sp = self.stage(&mut g);
        let xid = g.input(x.clone());
        let out = self.forward(&mut g, &sp, xid, fade)?;
        Ok(g.value(out).clone())
    }
}
