//! A small encoder with four heads: inpainting decoder, LBP histogram
//! decoder, segmentation classifier and labeledness discriminator.
//!
//! ```text
//! x ─ f: conv3x3/2 ─ conv3x3/2 ─ conv3x3 ... ─┬─ g: 1x1 ─ up ─ 1x1          → C_img × H × W
//!                                               ├─ h: pool ─ 1x1 ─ 1x1       → grid × Cp
//!                                               ├─ φ: 1x1 ─ up               → C × H × W logits
//!                                               └─ d: (stop-grad) 3x3 ─ 1x1 ─ up ─ σ → H × W
//! ```

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::ops::{self, ConvShape, Scalar};
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct RefNetConfig {
    pub in_channels: usize,
    pub height: usize,
    pub width: usize,
    /// Encoder widths; the first two layers downsample by two.
    pub widths: Vec<usize>,
    pub categories: usize,
    /// LBP histogram bins (`P + 2`).
    pub bins: usize,
    /// Histogram patch size in pixels.
    pub patch: usize,
    pub inpaint_hidden: usize,
    pub texture_hidden: usize,
    pub disc_hidden: usize,
}

/// Spatial reduction of the encoder.
pub const ENCODER_STRIDE: usize = 4;

impl RefNetConfig {
    pub fn new(in_channels: usize, height: usize, width: usize, categories: usize, bins: usize, patch: usize) -> Self {
        Self {
            in_channels,
            height,
            width,
            widths: vec![8, 16, 32],
            categories,
            bins,
            patch,
            inpaint_hidden: 16,
            texture_hidden: 32,
            disc_hidden: 8,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.widths.len() < 2 || self.widths.contains(&0) {
            return Err(Error::invalid("encoder needs at least two layers of positive width"));
        }
        if self.in_channels == 0 || self.categories == 0 || self.bins == 0 {
            return Err(Error::invalid("channel, category and bin counts must be positive"));
        }
        if self.patch == 0 || self.patch % ENCODER_STRIDE != 0 {
            return Err(Error::invalid(format!(
                "histogram patch {} must be a positive multiple of {ENCODER_STRIDE}",
                self.patch
            )));
        }
        if self.height % self.patch != 0 || self.width % self.patch != 0 {
            return Err(Error::invalid(format!(
                "input {}x{} must be a multiple of the {}px patch",
                self.height, self.width, self.patch
            )));
        }
        Ok(())
    }

    pub fn feature_dims(&self) -> (usize, usize) {
        (self.height / ENCODER_STRIDE, self.width / ENCODER_STRIDE)
    }

    pub fn grid_dims(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    fn feature_width(&self) -> usize {
        *self.widths.last().unwrap()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Conv<T> {
    pub shape: ConvShape,
    pub weight: Vec<T>,
    pub bias: Vec<T>,
}

impl<T: Scalar> Conv<T> {
    fn init(shape: ConvShape, rng: &mut ChaCha8Rng) -> Self {
        let fan_in = (shape.cin * shape.kernel * shape.kernel) as f64;
        let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("positive std");
        Self {
            shape,
            weight: (0..shape.weight_len()).map(|_| T::of(normal.sample(rng))).collect(),
            bias: vec![T::zero(); shape.cout],
        }
    }

    fn zeros(shape: ConvShape) -> Self {
        Self {
            shape,
            weight: vec![T::zero(); shape.weight_len()],
            bias: vec![T::zero(); shape.cout],
        }
    }

    fn forward(&self, input: &[T], h: usize, w: usize) -> (Vec<T>, usize, usize) {
        ops::conv2d(input, h, w, &self.shape, &self.weight, &self.bias)
    }

    fn backward(&self, input: &[T], h: usize, w: usize, grad_out: &[T], grads: &mut Conv<f64>, need_input: bool) -> Option<Vec<T>> {
        ops::conv2d_backward(
            input,
            h,
            w,
            &self.shape,
            &self.weight,
            grad_out,
            &mut grads.weight,
            &mut grads.bias,
            need_input,
        )
    }

    pub fn cast<U: Scalar>(&self) -> Conv<U> {
        Conv {
            shape: self.shape,
            weight: self.weight.iter().map(|v| U::of(v.wide())).collect(),
            bias: self.bias.iter().map(|v| U::of(v.wide())).collect(),
        }
    }
}

/// Network parameters. `RefNet<f64>` doubles as the gradient container.
#[derive(Debug, Clone, PartialEq)]
pub struct RefNet<T> {
    pub config: RefNetConfig,
    pub encoder: Vec<Conv<T>>,
    pub inpaint: Vec<Conv<T>>,
    pub texture: Vec<Conv<T>>,
    pub classifier: Vec<Conv<T>>,
    pub discriminator: Vec<Conv<T>>,
}

fn conv(cin: usize, cout: usize, kernel: usize, stride: usize) -> ConvShape {
    ConvShape {
        cin,
        cout,
        kernel,
        stride,
    }
}

fn layer_shapes(cfg: &RefNetConfig) -> [Vec<ConvShape>; 5] {
    let mut encoder = Vec::new();
    let mut cin = cfg.in_channels;
    for (i, &w) in cfg.widths.iter().enumerate() {
        encoder.push(conv(cin, w, 3, if i < 2 { 2 } else { 1 }));
        cin = w;
    }
    let f = cfg.feature_width();
    [
        encoder,
        vec![conv(f, cfg.inpaint_hidden, 1, 1), conv(cfg.inpaint_hidden, cfg.in_channels, 1, 1)],
        vec![conv(f, cfg.texture_hidden, 1, 1), conv(cfg.texture_hidden, cfg.bins, 1, 1)],
        vec![conv(f, cfg.categories, 1, 1)],
        vec![conv(f, cfg.disc_hidden, 3, 1), conv(cfg.disc_hidden, 1, 1, 1)],
    ]
}

/// Which heads a forward pass evaluates.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub struct Heads {
    pub inpaint: bool,
    pub texture: bool,
    pub classify: bool,
    pub discriminate: bool,
}

impl Heads {
    pub const PRETRAIN: Heads = Heads {
        inpaint: true,
        texture: true,
        classify: false,
        discriminate: false,
    };
    pub const FINETUNE: Heads = Heads {
        inpaint: false,
        texture: false,
        classify: true,
        discriminate: true,
    };
    pub const CLASSIFY: Heads = Heads {
        inpaint: false,
        texture: false,
        classify: true,
        discriminate: false,
    };
    pub const ALL: Heads = Heads {
        inpaint: true,
        texture: true,
        classify: true,
        discriminate: true,
    };
}

#[derive(Debug, Clone)]
struct HiddenCache<T> {
    pre: Vec<T>,
    act: Vec<T>,
}

/// Activations kept for the backward pass, plus the head outputs.
#[derive(Debug, Clone)]
pub struct Pass<T> {
    input: Vec<T>,
    /// `(pre-activation, activation, height, width)` per encoder layer.
    encoder: Vec<(Vec<T>, Vec<T>, usize, usize)>,
    inpaint_cache: Option<(HiddenCache<T>, Vec<T>)>,
    texture_cache: Option<(Vec<T>, HiddenCache<T>)>,
    classifier_low: Option<Vec<T>>,
    disc_cache: Option<(HiddenCache<T>, Vec<T>)>,
    /// Reconstruction, planar `C_img × H × W`.
    pub inpaint: Option<Vec<T>>,
    /// Histograms, `[cell][bin]`.
    pub texture: Option<Vec<T>>,
    /// Category logits, planar `C × H × W`.
    pub logits: Option<Vec<T>>,
    /// Labeledness probability per pixel.
    pub certainty: Option<Vec<T>>,
}

impl<T> Pass<T> {
    pub fn features(&self) -> &[T] {
        &self.encoder.last().unwrap().1
    }
}

/// Loss gradients with respect to each head output (same layouts as [`Pass`]).
#[derive(Debug, Clone, Default)]
pub struct OutputGrads {
    pub inpaint: Option<Vec<f64>>,
    pub texture: Option<Vec<f64>>,
    pub logits: Option<Vec<f64>>,
    pub certainty: Option<Vec<f64>>,
}

fn cast_vec<T: Scalar>(v: &[f64]) -> Vec<T> {
    v.iter().map(|&x| T::of(x)).collect()
}

fn add_into<T: Scalar>(acc: &mut Option<Vec<T>>, v: Vec<T>) {
    match acc {
        Some(a) => a.iter_mut().zip(v).for_each(|(x, y)| *x = *x + y),
        None => *acc = Some(v),
    }
}

/// `[bin][cell]` planar to `[cell][bin]`.
fn planar_to_cells<T: Copy>(v: &[T], bins: usize, cells: usize) -> Vec<T> {
    let mut out = Vec::with_capacity(v.len());
    for c in 0..cells {
        for b in 0..bins {
            out.push(v[b * cells + c]);
        }
    }
    out
}

fn cells_to_planar<T: Copy + Default>(v: &[T], bins: usize, cells: usize) -> Vec<T> {
    let mut out = vec![T::default(); v.len()];
    for c in 0..cells {
        for b in 0..bins {
            out[b * cells + c] = v[c * bins + b];
        }
    }
    out
}

impl<T: Scalar> RefNet<T> {
    /// He-normal weights, zero biases, deterministic in `seed`.
    pub fn init(config: RefNetConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let [e, g, h, c, d] = layer_shapes(&config);
        let mut build = |shapes: Vec<ConvShape>| shapes.into_iter().map(|s| Conv::init(s, &mut rng)).collect();
        Ok(Self {
            encoder: build(e),
            inpaint: build(g),
            texture: build(h),
            classifier: build(c),
            discriminator: build(d),
            config,
        })
    }

    pub fn zeros_like(&self) -> RefNet<f64> {
        let [e, g, h, c, d] = layer_shapes(&self.config);
        let build = |shapes: Vec<ConvShape>| shapes.into_iter().map(Conv::zeros).collect();
        RefNet {
            config: self.config.clone(),
            encoder: build(e),
            inpaint: build(g),
            texture: build(h),
            classifier: build(c),
            discriminator: build(d),
        }
    }

    pub fn cast<U: Scalar>(&self) -> RefNet<U> {
        let c = |v: &[Conv<T>]| v.iter().map(Conv::cast).collect();
        RefNet {
            config: self.config.clone(),
            encoder: c(&self.encoder),
            inpaint: c(&self.inpaint),
            texture: c(&self.texture),
            classifier: c(&self.classifier),
            discriminator: c(&self.discriminator),
        }
    }

    /// Layers in a fixed order, with stable names.
    pub fn named_layers(&self) -> Vec<(String, &Conv<T>)> {
        let groups: [(&str, &Vec<Conv<T>>); 5] = [
            ("encoder", &self.encoder),
            ("inpaint", &self.inpaint),
            ("texture", &self.texture),
            ("classifier", &self.classifier),
            ("discriminator", &self.discriminator),
        ];
        groups
            .into_iter()
            .flat_map(|(name, layers)| layers.iter().enumerate().map(move |(i, l)| (format!("{name}.{i}"), l)))
            .collect()
    }

    pub fn layers_mut(&mut self) -> impl Iterator<Item = &mut Conv<T>> {
        self.encoder
            .iter_mut()
            .chain(self.inpaint.iter_mut())
            .chain(self.texture.iter_mut())
            .chain(self.classifier.iter_mut())
            .chain(self.discriminator.iter_mut())
    }

    pub fn layers(&self) -> impl Iterator<Item = &Conv<T>> {
        self.encoder
            .iter()
            .chain(self.inpaint.iter())
            .chain(self.texture.iter())
            .chain(self.classifier.iter())
            .chain(self.discriminator.iter())
    }

    /// Every weight and bias tensor, in layer order.
    pub fn tensors_mut(&mut self) -> Vec<&mut Vec<T>> {
        self.layers_mut()
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn tensors(&self) -> Vec<&Vec<T>> {
        self.layers().flat_map(|l| [&l.weight, &l.bias]).collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Copies the encoder from another network with the same encoder shape.
    pub fn load_encoder(&mut self, other: &RefNet<T>) -> Result<()> {
        if self.encoder.len() != other.encoder.len()
            || self.encoder.iter().zip(&other.encoder).any(|(a, b)| a.shape != b.shape)
        {
            return Err(Error::invalid("encoder shapes differ"));
        }
        self.encoder = other.encoder.clone();
        Ok(())
    }

    /// `x` is planar `C_img × H × W`.
    pub fn forward(&self, x: &[T], heads: Heads) -> Result<Pass<T>> {
        let cfg = &self.config;
        if x.len() != cfg.in_channels * cfg.height * cfg.width {
            return Err(Error::invalid(format!(
                "input length {} != {}x{}x{}",
                x.len(),
                cfg.in_channels,
                cfg.height,
                cfg.width
            )));
        }
        let (mut h, mut w) = (cfg.height, cfg.width);
        let mut encoder = Vec::with_capacity(self.encoder.len());
        let mut cur = x.to_vec();
        for layer in &self.encoder {
            let (pre, oh, ow) = layer.forward(&cur, h, w);
            let act = ops::silu(&pre);
            h = oh;
            w = ow;
            cur = act.clone();
            encoder.push((pre, act, h, w));
        }
        let feat = &cur;
        let (fh, fw) = (h, w);
        let (gh, gw) = cfg.grid_dims();

        let mut pass = Pass {
            input: x.to_vec(),
            encoder: Vec::new(),
            inpaint_cache: None,
            texture_cache: None,
            classifier_low: None,
            disc_cache: None,
            inpaint: None,
            texture: None,
            logits: None,
            certainty: None,
        };

        if heads.inpaint {
            let (pre, _, _) = self.inpaint[0].forward(feat, fh, fw);
            let act = ops::silu(&pre);
            let up = ops::resize_bilinear(&act, cfg.inpaint_hidden, fh, fw, cfg.height, cfg.width);
            let (out, _, _) = self.inpaint[1].forward(&up, cfg.height, cfg.width);
            pass.inpaint_cache = Some((HiddenCache { pre, act }, up));
            pass.inpaint = Some(out);
        }
        if heads.texture {
            let block = cfg.patch / ENCODER_STRIDE;
            let pooled = ops::avg_pool(feat, cfg.feature_width(), fh, fw, block);
            let (pre, _, _) = self.texture[0].forward(&pooled, gh, gw);
            let act = ops::silu(&pre);
            let (out, _, _) = self.texture[1].forward(&act, gh, gw);
            pass.texture = Some(planar_to_cells(&out, cfg.bins, gh * gw));
            pass.texture_cache = Some((pooled, HiddenCache { pre, act }));
        }
        if heads.classify {
            let (low, _, _) = self.classifier[0].forward(feat, fh, fw);
            pass.logits = Some(ops::resize_bilinear(&low, cfg.categories, fh, fw, cfg.height, cfg.width));
            pass.classifier_low = Some(low);
        }
        if heads.discriminate {
            let (pre, _, _) = self.discriminator[0].forward(feat, fh, fw);
            let act = ops::silu(&pre);
            let (low, _, _) = self.discriminator[1].forward(&act, fh, fw);
            let up = ops::resize_bilinear(&low, 1, fh, fw, cfg.height, cfg.width);
            pass.certainty = Some(up.iter().map(|&v| ops::sigmoid_scalar(v)).collect());
            pass.disc_cache = Some((HiddenCache { pre, act }, up));
        }
        pass.encoder = encoder;
        Ok(pass)
    }

    /// Accumulates parameter gradients of the loss into `grads`.
    ///
    /// The discriminator is trained through its own head only: its gradient
    /// does not reach the encoder.
    pub fn backward(&self, pass: &Pass<T>, out: &OutputGrads, grads: &mut RefNet<f64>) -> Result<()> {
        let cfg = &self.config;
        let (fh, fw) = cfg.feature_dims();
        let (gh, gw) = cfg.grid_dims();
        let fwidth = cfg.feature_width();
        let feat = pass.features();
        let mut gfeat: Option<Vec<T>> = None;
        let missing = |head: &str| Error::invalid(format!("backward through {head} head that was not evaluated"));

        if let Some(g) = &out.inpaint {
            let (hidden, up) = pass.inpaint_cache.as_ref().ok_or_else(|| missing("inpaint"))?;
            let g_up = self.inpaint[1]
                .backward(up, cfg.height, cfg.width, &cast_vec(g), &mut grads.inpaint[1], true)
                .unwrap();
            let g_act = ops::resize_bilinear_backward(&g_up, cfg.inpaint_hidden, fh, fw, cfg.height, cfg.width);
            let g_pre = ops::silu_backward(&hidden.pre, &g_act);
            let gf = self.inpaint[0].backward(feat, fh, fw, &g_pre, &mut grads.inpaint[0], true).unwrap();
            add_into(&mut gfeat, gf);
        }
        if let Some(g) = &out.texture {
            let (pooled, hidden) = pass.texture_cache.as_ref().ok_or_else(|| missing("texture"))?;
            let g_out = cells_to_planar(&cast_vec::<T>(g), cfg.bins, gh * gw);
            let g_act = self.texture[1]
                .backward(&hidden.act, gh, gw, &g_out, &mut grads.texture[1], true)
                .unwrap();
            let g_pre = ops::silu_backward(&hidden.pre, &g_act);
            let g_pool = self.texture[0].backward(pooled, gh, gw, &g_pre, &mut grads.texture[0], true).unwrap();
            add_into(
                &mut gfeat,
                ops::avg_pool_backward(&g_pool, fwidth, fh, fw, cfg.patch / ENCODER_STRIDE),
            );
        }
        if let Some(g) = &out.logits {
            if pass.classifier_low.is_none() {
                return Err(missing("classifier"));
            }
            let g_low = ops::resize_bilinear_backward(&cast_vec::<T>(g), cfg.categories, fh, fw, cfg.height, cfg.width);
            let gf = self.classifier[0].backward(feat, fh, fw, &g_low, &mut grads.classifier[0], true).unwrap();
            add_into(&mut gfeat, gf);
        }
        if let Some(g) = &out.certainty {
            let (hidden, up) = pass.disc_cache.as_ref().ok_or_else(|| missing("discriminator"))?;
            let g_up: Vec<T> = up
                .iter()
                .zip(g)
                .map(|(&z, &gp)| {
                    let s = ops::sigmoid_scalar(z);
                    T::of(gp) * s * (T::one() - s)
                })
                .collect();
            let g_low = ops::resize_bilinear_backward(&g_up, 1, fh, fw, cfg.height, cfg.width);
            let g_act = self.discriminator[1]
                .backward(&hidden.act, fh, fw, &g_low, &mut grads.discriminator[1], true)
                .unwrap();
            let g_pre = ops::silu_backward(&hidden.pre, &g_act);
            // stop-gradient: the encoder input gradient is not requested
            self.discriminator[0].backward(feat, fh, fw, &g_pre, &mut grads.discriminator[0], false);
        }

        let Some(mut g) = gfeat else {
            return Ok(());
        };
        for i in (0..self.encoder.len()).rev() {
            let (pre, _, _, _) = &pass.encoder[i];
            let g_pre = ops::silu_backward(pre, &g);
            let (input, ih, iw) = if i == 0 {
                (&pass.input, cfg.height, cfg.width)
            } else {
                let (_, act, h, w) = &pass.encoder[i - 1];
                (act, *h, *w)
            };
            match self.encoder[i].backward(input, ih, iw, &g_pre, &mut grads.encoder[i], i > 0) {
                Some(next) => g = next,
                None => break,
            }
        }
        Ok(())
    }
}

impl RefNet<f64> {
    pub fn scale(&mut self, factor: f64) {
        for t in self.tensors_mut() {
            t.iter_mut().for_each(|v| *v *= factor);
        }
    }

    pub fn add(&mut self, other: &RefNet<f64>) {
        for (a, b) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.iter_mut().zip(b).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|v| v.is_finite()))
    }

    pub fn squared_norm(&self) -> f64 {
        self.tensors().iter().flat_map(|t| t.iter()).map(|v| v * v).sum()
    }
}
