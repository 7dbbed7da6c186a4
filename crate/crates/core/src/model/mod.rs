//! A small encoder-decoder depth network with manual forward and backward
//! passes.
//!
//! The encoder is a chain of stride-2 3×3 convolutions with ReLU; the decoder
//! upsamples bilinearly back through the encoder resolutions, each step
//! followed by a 3×3 convolution, with skip connections by addition. The
//! regression head maps to meters through a softplus plus a 1e-3 m floor; the
//! ordinal head emits per-bin sigmoid probabilities.

mod checkpoint;
mod tensor;

pub use checkpoint::{load_checkpoint, save_checkpoint};
pub use tensor::{Tensor, Tensor3, TensorMap};

use crate::geometry::DenseDepthImage;
use crate::losses::{l1_loss, ordinal_loss, LossError, ProbabilityVolume, CLAMP_EPS};
use crate::sid::OrdinalLabelMap;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

/// Floor added to the regression head output, meters.
pub const DEPTH_FLOOR: f64 = 1e-3;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("input shape {got_c}x{got_h}x{got_w} does not match model (expects {want_c} channels)")]
    InputShape {
        got_c: usize,
        got_h: usize,
        got_w: usize,
        want_c: usize,
    },
    #[error("invalid model config: {0}")]
    InvalidConfig(String),
    #[error("non-finite gradient in tensor `{0}`")]
    NonFiniteGradient(String),
    #[error("non-finite parameter after update in tensor `{0}`")]
    NonFiniteParameter(String),
    #[error("training diverged at epoch {epoch}, step {step}: loss {loss}")]
    Divergence { epoch: usize, step: usize, loss: f64 },
    #[error("empty dataset")]
    EmptyDataset,
    #[error("target kind does not match the model head")]
    TargetMismatch,
    #[error(transparent)]
    Loss(#[from] LossError),
    #[error("checkpoint i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("checkpoint format: {0}")]
    Checkpoint(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum HeadKind {
    /// One channel mapped to meters by `softplus(z) + DEPTH_FLOOR`.
    Regression,
    /// `bins` sigmoid channels, one per "depth exceeds bin k" decision.
    Ordinal { bins: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelConfig {
    pub in_channels: usize,
    pub base_width: usize,
    pub encoder_depth: usize,
    pub head: HeadKind,
}

impl ModelConfig {
    fn validate(&self) -> Result<(), ModelError> {
        if self.in_channels == 0 || self.base_width == 0 || self.encoder_depth == 0 {
            return Err(ModelError::InvalidConfig(format!("{self:?}")));
        }
        if let HeadKind::Ordinal { bins } = self.head {
            if bins < 2 {
                return Err(ModelError::InvalidConfig(format!(
                    "ordinal head needs at least 2 bins, got {bins}"
                )));
            }
        }
        Ok(())
    }

    fn out_channels(&self) -> usize {
        match self.head {
            HeadKind::Regression => 1,
            HeadKind::Ordinal { bins } => bins,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub initial_lr: f64,
    pub poly_power: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            initial_lr: 1e-4,
            poly_power: 0.9,
            momentum: 0.9,
            weight_decay: 5e-4,
            batch_size: 8,
            epochs: 30,
            seed: 0,
        }
    }
}

struct ConvSpec {
    name: &'static str,
    index: usize,
    in_ch: usize,
    out_ch: usize,
    stride: usize,
}

impl ConvSpec {
    fn weight_name(&self) -> String {
        if self.name == "enc" || self.name == "dec" {
            format!("{}{}.weight", self.name, self.index)
        } else {
            format!("{}.weight", self.name)
        }
    }

    fn bias_name(&self) -> String {
        if self.name == "enc" || self.name == "dec" {
            format!("{}{}.bias", self.name, self.index)
        } else {
            format!("{}.bias", self.name)
        }
    }
}

/// The trainable network: configuration plus named parameters.
#[derive(Debug, Clone)]
pub struct TinyDepth {
    cfg: ModelConfig,
    params: TensorMap,
}

/// Network output, by head kind.
#[derive(Debug, Clone)]
pub enum ModelOutput {
    Depth(DenseDepthImage),
    Probs(ProbabilityVolume),
}

/// Activations retained by [`TinyDepth::forward`] for the backward pass.
pub struct ForwardCache {
    input: Tensor3,
    enc_out: Vec<Tensor3>,
    dec_resized: Vec<Tensor3>,
    dec_relu: Vec<Tensor3>,
    full_resized: Tensor3,
    head_input: Tensor3,
    head_pre: Tensor3,
}

impl TinyDepth {
    /// He-initialized model; weights drawn from the run seed, biases zero.
    pub fn init(cfg: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        cfg.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 0x7f4a_7c15_u64);
        let mut params = TensorMap::new();
        for spec in Self::layer_specs(&cfg) {
            let fan_in = (spec.in_ch * 9) as f64;
            let normal = Normal::new(0.0, (2.0 / fan_in).sqrt()).expect("valid stddev");
            let mut w = Tensor::zeros(vec![spec.out_ch, spec.in_ch, 3, 3]);
            for v in &mut w.data {
                *v = normal.sample(&mut rng);
            }
            params.insert(spec.weight_name(), w);
            params.insert(spec.bias_name(), Tensor::zeros(vec![spec.out_ch]));
        }
        Ok(Self { cfg, params })
    }

    pub fn from_parts(cfg: ModelConfig, params: TensorMap) -> Result<Self, ModelError> {
        cfg.validate()?;
        for spec in Self::layer_specs(&cfg) {
            let w = params
                .get(&spec.weight_name())
                .ok_or_else(|| ModelError::Checkpoint(format!("missing {}", spec.weight_name())))?;
            if w.shape != vec![spec.out_ch, spec.in_ch, 3, 3] {
                return Err(ModelError::Checkpoint(format!(
                    "bad shape for {}: {:?}",
                    spec.weight_name(),
                    w.shape
                )));
            }
            let b = params
                .get(&spec.bias_name())
                .ok_or_else(|| ModelError::Checkpoint(format!("missing {}", spec.bias_name())))?;
            if b.shape != vec![spec.out_ch] {
                return Err(ModelError::Checkpoint(format!(
                    "bad shape for {}: {:?}",
                    spec.bias_name(),
                    b.shape
                )));
            }
        }
        Ok(Self { cfg, params })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.cfg
    }

    pub fn params(&self) -> &TensorMap {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut TensorMap {
        &mut self.params
    }

    fn layer_specs(cfg: &ModelConfig) -> Vec<ConvSpec> {
        let d = cfg.encoder_depth;
        let b = cfg.base_width;
        let mut specs = Vec::new();
        for i in 0..d {
            specs.push(ConvSpec {
                name: "enc",
                index: i,
                in_ch: if i == 0 { cfg.in_channels } else { b << (i - 1) },
                out_ch: b << i,
                stride: 2,
            });
        }
        for i in (0..d.saturating_sub(1)).rev() {
            specs.push(ConvSpec {
                name: "dec",
                index: i,
                in_ch: b << (i + 1),
                out_ch: b << i,
                stride: 1,
            });
        }
        specs.push(ConvSpec {
            name: "dec_full",
            index: 0,
            in_ch: b,
            out_ch: b,
            stride: 1,
        });
        specs.push(ConvSpec {
            name: "head",
            index: 0,
            in_ch: b,
            out_ch: cfg.out_channels(),
            stride: 1,
        });
        specs
    }

    fn weight(&self, name: &str) -> &Tensor {
        self.params.get(name).expect("validated at construction")
    }

    /// Runs the network, returning the head output and the activation cache.
    pub fn forward(&self, input: &Tensor3) -> Result<(ModelOutput, ForwardCache), ModelError> {
        if input.channels != self.cfg.in_channels {
            return Err(ModelError::InputShape {
                got_c: input.channels,
                got_h: input.height,
                got_w: input.width,
                want_c: self.cfg.in_channels,
            });
        }
        let d = self.cfg.encoder_depth;

        let mut enc_out: Vec<Tensor3> = Vec::with_capacity(d);
        for i in 0..d {
            let src = if i == 0 { input } else { &enc_out[i - 1] };
            let mut z = conv2d(
                src,
                self.weight(&format!("enc{i}.weight")),
                self.weight(&format!("enc{i}.bias")),
                2,
            );
            relu_inplace(&mut z);
            enc_out.push(z);
        }

        let mut x = enc_out[d - 1].clone();
        let mut dec_resized: Vec<Tensor3> = vec![Tensor3::zeros(0, 0, 0); d.saturating_sub(1)];
        let mut dec_relu: Vec<Tensor3> = vec![Tensor3::zeros(0, 0, 0); d.saturating_sub(1)];
        for i in (0..d.saturating_sub(1)).rev() {
            let target = &enc_out[i];
            let r = resize_bilinear(&x, target.height, target.width);
            let mut z = conv2d(
                &r,
                self.weight(&format!("dec{i}.weight")),
                self.weight(&format!("dec{i}.bias")),
                1,
            );
            relu_inplace(&mut z);
            dec_resized[i] = r;
            dec_relu[i] = z.clone();
            for (out, skip) in z.data.iter_mut().zip(&target.data) {
                *out += skip;
            }
            x = z;
        }

        let full_resized = resize_bilinear(&x, input.height, input.width);
        let mut head_input = conv2d(
            &full_resized,
            self.weight("dec_full.weight"),
            self.weight("dec_full.bias"),
            1,
        );
        relu_inplace(&mut head_input);
        let head_pre = conv2d(
            &head_input,
            self.weight("head.weight"),
            self.weight("head.bias"),
            1,
        );

        let output = match self.cfg.head {
            HeadKind::Regression => {
                let data: Vec<f64> = head_pre
                    .data
                    .iter()
                    .map(|&z| softplus(z) + DEPTH_FLOOR)
                    .collect();
                ModelOutput::Depth(
                    DenseDepthImage::from_data(input.width, input.height, data)
                        .expect("softplus output is positive and finite"),
                )
            }
            HeadKind::Ordinal { bins } => {
                // Transpose from channel-major to per-pixel bin-major.
                let (h, w) = (head_pre.height, head_pre.width);
                let mut probs = vec![0.0; w * h * bins];
                for k in 0..bins {
                    for y in 0..h {
                        for x in 0..w {
                            probs[(y * w + x) * bins + k] = sigmoid(head_pre.at(k, y, x));
                        }
                    }
                }
                ModelOutput::Probs(
                    ProbabilityVolume::from_data(w, h, bins, probs).expect("sized above"),
                )
            }
        };

        Ok((
            output,
            ForwardCache {
                input: input.clone(),
                enc_out,
                dec_resized,
                dec_relu,
                full_resized,
                head_input,
                head_pre,
            },
        ))
    }

    /// Inference without keeping the cache.
    pub fn predict(&self, input: &Tensor3) -> Result<ModelOutput, ModelError> {
        self.forward(input).map(|(out, _)| out)
    }

    /// Exact reverse-mode gradients of the forward graph.
    ///
    /// `upstream` is the loss gradient with respect to the head output after
    /// its activation (depth map or probability volume, channel-major). Every
    /// parameter gradient additionally carries the weight-decay term
    /// `weight_decay * w`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        upstream: &Tensor3,
        weight_decay: f64,
    ) -> TensorMap {
        let d = self.cfg.encoder_depth;
        let mut grads = self.params.zeros_like();

        // Head activation adjoint.
        let mut g_head_pre = Tensor3::zeros(upstream.channels, upstream.height, upstream.width);
        match self.cfg.head {
            HeadKind::Regression => {
                for i in 0..upstream.data.len() {
                    g_head_pre.data[i] = upstream.data[i] * sigmoid(cache.head_pre.data[i]);
                }
            }
            HeadKind::Ordinal { .. } => {
                for i in 0..upstream.data.len() {
                    let s = sigmoid(cache.head_pre.data[i]);
                    // Clamped probabilities contribute no gradient.
                    let ds = if s <= CLAMP_EPS || s >= 1.0 - CLAMP_EPS {
                        0.0
                    } else {
                        s * (1.0 - s)
                    };
                    g_head_pre.data[i] = upstream.data[i] * ds;
                }
            }
        }

        // Head convolution.
        let (dw, db, mut g_x) = conv2d_backward(
            &cache.head_input,
            self.weight("head.weight"),
            &g_head_pre,
            1,
        );
        accumulate(&mut grads, "head.weight", dw);
        accumulate(&mut grads, "head.bias", db);

        // Full-resolution decoder stage (no skip).
        relu_backward_inplace(&mut g_x, &cache.head_input);
        let (dw, db, g_full_resized) = conv2d_backward(
            &cache.full_resized,
            self.weight("dec_full.weight"),
            &g_x,
            1,
        );
        accumulate(&mut grads, "dec_full.weight", dw);
        accumulate(&mut grads, "dec_full.bias", db);
        let src = if d >= 2 {
            &cache.enc_out[0]
        } else {
            &cache.enc_out[d - 1]
        };
        let mut g_x = resize_bilinear_adjoint(&g_full_resized, src.height, src.width);

        // Skip-connected decoder stages, finest target first.
        let mut g_enc: Vec<Option<Tensor3>> = (0..d).map(|_| None).collect();
        for i in 0..d.saturating_sub(1) {
            // g_x is the gradient of x_after = relu(conv(resized)) + enc_out[i].
            add_into(&mut g_enc[i], &g_x);
            relu_backward_inplace(&mut g_x, &cache.dec_relu[i]);
            let (dw, db, g_resized) = conv2d_backward(
                &cache.dec_resized[i],
                self.weight(&format!("dec{i}.weight")),
                &g_x,
                1,
            );
            accumulate(&mut grads, &format!("dec{i}.weight"), dw);
            accumulate(&mut grads, &format!("dec{i}.bias"), db);
            let src = &cache.enc_out[i + 1];
            g_x = resize_bilinear_adjoint(&g_resized, src.height, src.width);
        }
        add_into(&mut g_enc[d - 1], &g_x);

        // Encoder chain.
        for i in (0..d).rev() {
            let mut g = g_enc[i].take().expect("populated by decoder pass");
            relu_backward_inplace(&mut g, &cache.enc_out[i]);
            let input = if i == 0 { &cache.input } else { &cache.enc_out[i - 1] };
            let (dw, db, g_in) =
                conv2d_backward(input, self.weight(&format!("enc{i}.weight")), &g, 2);
            accumulate(&mut grads, &format!("enc{i}.weight"), dw);
            accumulate(&mut grads, &format!("enc{i}.bias"), db);
            if i > 0 {
                add_into(&mut g_enc[i - 1], &g_in);
            }
        }

        if weight_decay != 0.0 {
            grads.add_scaled(&self.params, weight_decay);
        }
        grads
    }
}

fn accumulate(grads: &mut TensorMap, name: &str, tensor: Tensor) {
    let slot = grads.get_mut(name).expect("grads mirror params");
    debug_assert_eq!(slot.shape, tensor.shape);
    for (a, b) in slot.data.iter_mut().zip(tensor.data) {
        *a += b;
    }
}

fn add_into(slot: &mut Option<Tensor3>, g: &Tensor3) {
    match slot {
        Some(acc) => {
            for (a, b) in acc.data.iter_mut().zip(&g.data) {
                *a += b;
            }
        }
        None => *slot = Some(g.clone()),
    }
}

pub(crate) fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

pub(crate) fn softplus(x: f64) -> f64 {
    // Stable form: max(x, 0) + ln(1 + exp(-|x|)).
    x.max(0.0) + (-x.abs()).exp().ln_1p()
}

fn relu_inplace(t: &mut Tensor3) {
    for v in &mut t.data {
        if *v < 0.0 {
            *v = 0.0;
        }
    }
}

/// Zeroes gradient entries where the forward activation was clipped.
fn relu_backward_inplace(grad: &mut Tensor3, post_activation: &Tensor3) {
    for (g, &a) in grad.data.iter_mut().zip(&post_activation.data) {
        if a <= 0.0 {
            *g = 0.0;
        }
    }
}

/// 3×3 convolution with padding 1 and the given stride.
fn conv2d(input: &Tensor3, weight: &Tensor, bias: &Tensor, stride: usize) -> Tensor3 {
    let out_ch = weight.shape[0];
    let in_ch = weight.shape[1];
    debug_assert_eq!(in_ch, input.channels);
    let out_h = (input.height + stride - 1) / stride;
    let out_w = (input.width + stride - 1) / stride;
    let mut out = Tensor3::zeros(out_ch, out_h, out_w);
    for oc in 0..out_ch {
        let w_base = oc * in_ch * 9;
        for oy in 0..out_h {
            let out_row_start = (oc * out_h + oy) * out_w;
            for ox in 0..out_w {
                let mut acc = bias.data[oc];
                for ic in 0..in_ch {
                    let w_off = w_base + ic * 9;
                    for ky in 0..3usize {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= input.height as isize {
                            continue;
                        }
                        let row = input.row(ic, iy as usize);
                        let wrow = &weight.data[w_off + ky * 3..w_off + ky * 3 + 3];
                        for kx in 0..3usize {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= input.width as isize {
                                continue;
                            }
                            acc += wrow[kx] * row[ix as usize];
                        }
                    }
                }
                out.data[out_row_start + ox] = acc;
            }
        }
    }
    out
}

/// Gradients of [`conv2d`] with respect to weights, bias, and input.
fn conv2d_backward(
    input: &Tensor3,
    weight: &Tensor,
    grad_out: &Tensor3,
    stride: usize,
) -> (Tensor, Tensor, Tensor3) {
    let out_ch = weight.shape[0];
    let in_ch = weight.shape[1];
    let mut grad_w = Tensor::zeros(weight.shape.clone());
    let mut grad_b = Tensor::zeros(vec![out_ch]);
    let mut grad_in = Tensor3::zeros(input.channels, input.height, input.width);

    for oc in 0..out_ch {
        let w_base = oc * in_ch * 9;
        for oy in 0..grad_out.height {
            for ox in 0..grad_out.width {
                let g = grad_out.at(oc, oy, ox);
                if g == 0.0 {
                    continue;
                }
                grad_b.data[oc] += g;
                for ic in 0..in_ch {
                    let w_off = w_base + ic * 9;
                    for ky in 0..3usize {
                        let iy = (oy * stride + ky) as isize - 1;
                        if iy < 0 || iy >= input.height as isize {
                            continue;
                        }
                        let iy = iy as usize;
                        for kx in 0..3usize {
                            let ix = (ox * stride + kx) as isize - 1;
                            if ix < 0 || ix >= input.width as isize {
                                continue;
                            }
                            let ix = ix as usize;
                            grad_w.data[w_off + ky * 3 + kx] += g * input.at(ic, iy, ix);
                            *grad_in.at_mut(ic, iy, ix) += g * weight.data[w_off + ky * 3 + kx];
                        }
                    }
                }
            }
        }
    }
    (grad_w, grad_b, grad_in)
}

/// Bilinear resize to an arbitrary target size (half-pixel convention).
fn resize_bilinear(src: &Tensor3, dst_h: usize, dst_w: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(src.channels, dst_h, dst_w);
    let maps_y = resize_axis_map(src.height, dst_h);
    let maps_x = resize_axis_map(src.width, dst_w);
    for c in 0..src.channels {
        for (y, &(y0, y1, fy)) in maps_y.iter().enumerate() {
            for (x, &(x0, x1, fx)) in maps_x.iter().enumerate() {
                let v = (1.0 - fy) * (1.0 - fx) * src.at(c, y0, x0)
                    + (1.0 - fy) * fx * src.at(c, y0, x1)
                    + fy * (1.0 - fx) * src.at(c, y1, x0)
                    + fy * fx * src.at(c, y1, x1);
                *out.at_mut(c, y, x) = v;
            }
        }
    }
    out
}

/// Adjoint of [`resize_bilinear`]: scatters output gradients back to the
/// source grid with the same weights (which sum to one per output pixel).
fn resize_bilinear_adjoint(grad_out: &Tensor3, src_h: usize, src_w: usize) -> Tensor3 {
    let mut out = Tensor3::zeros(grad_out.channels, src_h, src_w);
    let maps_y = resize_axis_map(src_h, grad_out.height);
    let maps_x = resize_axis_map(src_w, grad_out.width);
    for c in 0..grad_out.channels {
        for (y, &(y0, y1, fy)) in maps_y.iter().enumerate() {
            for (x, &(x0, x1, fx)) in maps_x.iter().enumerate() {
                let g = grad_out.at(c, y, x);
                *out.at_mut(c, y0, x0) += (1.0 - fy) * (1.0 - fx) * g;
                *out.at_mut(c, y0, x1) += (1.0 - fy) * fx * g;
                *out.at_mut(c, y1, x0) += fy * (1.0 - fx) * g;
                *out.at_mut(c, y1, x1) += fy * fx * g;
            }
        }
    }
    out
}

/// Per-destination-index source interpolation: `(i0, i1, frac)`.
fn resize_axis_map(src: usize, dst: usize) -> Vec<(usize, usize, f64)> {
    let scale = src as f64 / dst as f64;
    (0..dst)
        .map(|i| {
            let pos = (i as f64 + 0.5) * scale - 0.5;
            let floor = pos.floor();
            let frac = pos - floor;
            let i0 = floor.max(0.0) as usize;
            let i0 = i0.min(src - 1);
            let i1 = (i0 + 1).min(src - 1);
            // When pos < 0 both taps clamp to index 0; keep the value exact.
            if floor < 0.0 {
                (0, 0, 0.0)
            } else {
                (i0, i1, frac)
            }
        })
        .collect()
}

/// Momentum SGD with the polynomial learning-rate schedule
/// `lr(step) = lr0 · (1 - step/total)^power`.
pub struct SgdOptimizer {
    velocity: TensorMap,
    step_index: usize,
    total_steps: usize,
    cfg: TrainConfig,
}

impl SgdOptimizer {
    pub fn new(params: &TensorMap, cfg: TrainConfig, total_steps: usize) -> Self {
        Self {
            velocity: params.zeros_like(),
            step_index: 0,
            total_steps: total_steps.max(1),
            cfg,
        }
    }

    pub fn learning_rate(&self) -> f64 {
        let frac = 1.0 - (self.step_index.min(self.total_steps) as f64)
            / (self.total_steps as f64);
        self.cfg.initial_lr * frac.powf(self.cfg.poly_power)
    }

    pub fn step_index(&self) -> usize {
        self.step_index
    }

    /// `v ← momentum·v + g; w ← w − lr·v`.
    pub fn step(&mut self, params: &mut TensorMap, grads: &TensorMap) -> Result<(), ModelError> {
        if let Some(name) = grads.first_non_finite() {
            return Err(ModelError::NonFiniteGradient(name.to_string()));
        }
        let lr = self.learning_rate();
        self.velocity.scale(self.cfg.momentum);
        self.velocity.add_scaled(grads, 1.0);
        params.add_scaled(&self.velocity, -lr);
        if let Some(name) = params.first_non_finite() {
            return Err(ModelError::NonFiniteParameter(name.to_string()));
        }
        self.step_index += 1;
        Ok(())
    }
}

/// One training example: the input tensor and its supervision target.
#[derive(Debug, Clone)]
pub enum TrainTarget {
    Depth(crate::geometry::SparseDepthImage),
    Ordinal(OrdinalLabelMap),
}

#[derive(Debug, Clone)]
pub struct TrainSample {
    pub input: Tensor3,
    pub target: TrainTarget,
}

pub struct FitResult {
    pub model: TinyDepth,
    /// Mean loss per epoch, in sample order weighting.
    pub epoch_losses: Vec<f64>,
}

/// Loss and parameter gradients for one sample at the current parameters.
fn sample_gradient(
    model: &TinyDepth,
    sample: &TrainSample,
    weight_decay: f64,
) -> Result<(f64, TensorMap), ModelError> {
    let (output, cache) = model.forward(&sample.input)?;
    let (loss_value, upstream) = match (&output, &sample.target) {
        (ModelOutput::Depth(pred), TrainTarget::Depth(target)) => {
            let loss = l1_loss(pred, target)?;
            let up = Tensor3::from_data(1, pred.height(), pred.width(), loss.gradient);
            (loss.value, up)
        }
        (ModelOutput::Probs(probs), TrainTarget::Ordinal(labels)) => {
            let loss = ordinal_loss(probs, labels)?;
            let (w, h, k) = (probs.width(), probs.height(), probs.bins());
            let mut up = Tensor3::zeros(k, h, w);
            for y in 0..h {
                for x in 0..w {
                    for b in 0..k {
                        *up.at_mut(b, y, x) = loss.gradient[(y * w + x) * k + b];
                    }
                }
            }
            (loss.value, up)
        }
        _ => return Err(ModelError::TargetMismatch),
    };
    let grads = model.backward(&cache, &upstream, weight_decay);
    Ok((loss_value, grads))
}

/// Trains a fresh model on the samples. Deterministic for a fixed seed: the
/// initialization and the per-epoch shuffle order both derive from it.
pub fn fit(
    samples: &[TrainSample],
    model_cfg: ModelConfig,
    train_cfg: TrainConfig,
) -> Result<FitResult, ModelError> {
    if samples.is_empty() {
        return Err(ModelError::EmptyDataset);
    }
    let mut model = TinyDepth::init(model_cfg, train_cfg.seed)?;
    let n = samples.len();
    let batch = train_cfg.batch_size.max(1);
    let steps_per_epoch = n.div_ceil(batch);
    let total_steps = steps_per_epoch * train_cfg.epochs;
    let mut optimizer = SgdOptimizer::new(model.params(), train_cfg, total_steps);
    let mut shuffle_rng = ChaCha8Rng::seed_from_u64(train_cfg.seed ^ 0x9e37_79b9_u64);
    let mut epoch_losses = Vec::with_capacity(train_cfg.epochs);

    for epoch in 0..train_cfg.epochs {
        let mut order: Vec<usize> = (0..n).collect();
        // Fisher-Yates from the seeded stream.
        for i in (1..n).rev() {
            use rand::Rng;
            let j = shuffle_rng.gen_range(0..=i);
            order.swap(i, j);
        }
        let mut epoch_sum = 0.0;
        for (step, chunk) in order.chunks(batch).enumerate() {
            let results: Vec<Result<(f64, TensorMap), ModelError>> = chunk
                .par_iter()
                .map(|&idx| sample_gradient(&model, &samples[idx], train_cfg.weight_decay))
                .collect();
            let mut grad_sum: Option<TensorMap> = None;
            let mut loss_sum = 0.0;
            for r in results {
                let (loss, grads) = r?;
                loss_sum += loss;
                match &mut grad_sum {
                    Some(acc) => acc.add_scaled(&grads, 1.0),
                    None => grad_sum = Some(grads),
                }
            }
            let mut grads = grad_sum.expect("non-empty chunk");
            grads.scale(1.0 / chunk.len() as f64);
            let batch_loss = loss_sum / chunk.len() as f64;
            if !batch_loss.is_finite() {
                return Err(ModelError::Divergence {
                    epoch,
                    step,
                    loss: batch_loss,
                });
            }
            optimizer.step(model.params_mut(), &grads)?;
            epoch_sum += loss_sum;
        }
        epoch_losses.push(epoch_sum / n as f64);
    }
    Ok(FitResult {
        model,
        epoch_losses,
    })
}
