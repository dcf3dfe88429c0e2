//! Per-frame embedder, temporal transformer encoder, per-frame classifier
//! head and clip-level probability averaging.
//!
//! ```text
//! clip [P', C·H·W] ─ linear ─► features [P', D] ─ + sinusoid(source index)
//!   ─► N × { x + MHSA(LN(x)) ; x + FFN(LN(x)) } ─ linear ─► logits [P', K]
//!   ─ row softmax ─► frame probabilities ─ mean over frames ─► clip probability
//! ```
//!
//! Backward passes are written out by hand and only cover the loss gradient
//! with respect to the clip-level probability vector.

use crate::augment::ClipTensor;
use crate::error::{Error, Result};
use crate::tensors::ops::{self, LayerNormCache};
use crate::tensors::{Real, RngStream, Tensor};

/// Architecture hyperparameters; fixes every parameter shape.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ArchConfig {
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub classes: usize,
    pub ff_dim: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            channels: 1,
            height: 16,
            width: 16,
            dim: 32,
            heads: 2,
            blocks: 2,
            classes: 8,
            ff_dim: 128,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        let extents = [
            self.channels,
            self.height,
            self.width,
            self.dim,
            self.heads,
            self.ff_dim,
        ];
        if extents.contains(&0) {
            return Err(Error::config("architecture extents must be positive"));
        }
        if !self.dim.is_multiple_of(self.heads) {
            return Err(Error::config(format!(
                "dim {} not divisible by heads {}",
                self.dim, self.heads
            )));
        }
        if self.classes < 2 {
            return Err(Error::config("at least two classes required"));
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn head_dim(&self) -> usize {
        self.dim / self.heads
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct BlockParams {
    pub ln1_gamma: Tensor,
    pub ln1_beta: Tensor,
    pub wq: Tensor,
    pub bq: Tensor,
    pub wk: Tensor,
    pub bk: Tensor,
    pub wv: Tensor,
    pub bv: Tensor,
    pub wo: Tensor,
    pub bo: Tensor,
    pub ln2_gamma: Tensor,
    pub ln2_beta: Tensor,
    pub ff_w1: Tensor,
    pub ff_b1: Tensor,
    pub ff_w2: Tensor,
    pub ff_b2: Tensor,
}

impl BlockParams {
    fn init(arch: &ArchConfig, rng: &mut RngStream) -> Self {
        let d = arch.dim;
        let f = arch.ff_dim;
        let sd = 1.0 / (d as Real).sqrt();
        let sf = 1.0 / (f as Real).sqrt();
        Self {
            ln1_gamma: Tensor::filled(&[d], 1.0),
            ln1_beta: Tensor::zeros(&[d]),
            wq: Tensor::randn(&[d, d], sd, rng),
            bq: Tensor::zeros(&[d]),
            wk: Tensor::randn(&[d, d], sd, rng),
            bk: Tensor::zeros(&[d]),
            wv: Tensor::randn(&[d, d], sd, rng),
            bv: Tensor::zeros(&[d]),
            wo: Tensor::randn(&[d, d], sd, rng),
            bo: Tensor::zeros(&[d]),
            ln2_gamma: Tensor::filled(&[d], 1.0),
            ln2_beta: Tensor::zeros(&[d]),
            ff_w1: Tensor::randn(&[d, f], sd, rng),
            ff_b1: Tensor::zeros(&[f]),
            ff_w2: Tensor::randn(&[f, d], sf, rng),
            ff_b2: Tensor::zeros(&[d]),
        }
    }

    const NAMES: [&'static str; 16] = [
        "ln1_gamma",
        "ln1_beta",
        "wq",
        "bq",
        "wk",
        "bk",
        "wv",
        "bv",
        "wo",
        "bo",
        "ln2_gamma",
        "ln2_beta",
        "ff_w1",
        "ff_b1",
        "ff_w2",
        "ff_b2",
    ];

    fn tensors(&self) -> [&Tensor; 16] {
        [
            &self.ln1_gamma,
            &self.ln1_beta,
            &self.wq,
            &self.bq,
            &self.wk,
            &self.bk,
            &self.wv,
            &self.bv,
            &self.wo,
            &self.bo,
            &self.ln2_gamma,
            &self.ln2_beta,
            &self.ff_w1,
            &self.ff_b1,
            &self.ff_w2,
            &self.ff_b2,
        ]
    }

    fn tensors_mut(&mut self) -> [&mut Tensor; 16] {
        [
            &mut self.ln1_gamma,
            &mut self.ln1_beta,
            &mut self.wq,
            &mut self.bq,
            &mut self.wk,
            &mut self.bk,
            &mut self.wv,
            &mut self.bv,
            &mut self.wo,
            &mut self.bo,
            &mut self.ln2_gamma,
            &mut self.ln2_beta,
            &mut self.ff_w1,
            &mut self.ff_b1,
            &mut self.ff_w2,
            &mut self.ff_b2,
        ]
    }
}

/// Every trainable weight. Also used as the container for gradients.
#[derive(Clone, Debug, PartialEq)]
pub struct ModelParams {
    arch: ArchConfig,
    pub embed_w: Tensor,
    pub embed_b: Tensor,
    pub blocks: Vec<BlockParams>,
    pub head_w: Tensor,
    pub head_b: Tensor,
}

impl ModelParams {
    pub fn init(arch: ArchConfig, rng: &mut RngStream) -> Result<Self> {
        arch.validate()?;
        let n = arch.input_len();
        let d = arch.dim;
        let embed_w = Tensor::randn(&[n, d], 1.0 / (n as Real).sqrt(), rng);
        let blocks = (0..arch.blocks)
            .map(|_| BlockParams::init(&arch, rng))
            .collect();
        let head_w = Tensor::randn(&[d, arch.classes], 1.0 / (d as Real).sqrt(), rng);
        Ok(Self {
            arch,
            embed_w,
            embed_b: Tensor::zeros(&[d]),
            blocks,
            head_w,
            head_b: Tensor::zeros(&[arch.classes]),
        })
    }

    pub fn arch(&self) -> &ArchConfig {
        &self.arch
    }

    pub fn zeros_like(&self) -> Self {
        let mut out = self.clone();
        for (_, t) in out.tensors_mut() {
            t.fill(0.0);
        }
        out
    }

    /// Named parameter groups in checkpoint order.
    pub fn tensors(&self) -> Vec<(String, &Tensor)> {
        let mut out = vec![
            ("embed_w".to_string(), &self.embed_w),
            ("embed_b".to_string(), &self.embed_b),
        ];
        for (i, block) in self.blocks.iter().enumerate() {
            for (name, t) in BlockParams::NAMES.iter().zip(block.tensors()) {
                out.push((format!("block{i}.{name}"), t));
            }
        }
        out.push(("head_w".to_string(), &self.head_w));
        out.push(("head_b".to_string(), &self.head_b));
        out
    }

    pub fn tensors_mut(&mut self) -> Vec<(String, &mut Tensor)> {
        let mut out = vec![
            ("embed_w".to_string(), &mut self.embed_w),
            ("embed_b".to_string(), &mut self.embed_b),
        ];
        for (i, block) in self.blocks.iter_mut().enumerate() {
            for (name, t) in BlockParams::NAMES.iter().zip(block.tensors_mut()) {
                out.push((format!("block{i}.{name}"), t));
            }
        }
        out.push(("head_w".to_string(), &mut self.head_w));
        out.push(("head_b".to_string(), &mut self.head_b));
        out
    }

    pub fn num_params(&self) -> usize {
        self.tensors().iter().map(|(_, t)| t.len()).sum()
    }

    /// Adds Gaussian noise to every coordinate, including biases and
    /// layer-norm affine terms that start at constants.
    pub fn jitter(&mut self, std: Real, rng: &mut RngStream) {
        for (_, t) in self.tensors_mut() {
            let noise = Tensor::randn(t.shape(), std, rng);
            t.axpy(1.0, &noise).expect("same shape");
        }
    }

    /// `self += alpha * other`, group by group.
    pub fn axpy(&mut self, alpha: Real, other: &ModelParams) -> Result<()> {
        for ((_, a), (_, b)) in self.tensors_mut().into_iter().zip(other.tensors()) {
            a.axpy(alpha, b)?;
        }
        Ok(())
    }

    pub fn scale(&mut self, alpha: Real) {
        for (_, t) in self.tensors_mut() {
            t.scale(alpha);
        }
    }
}

/// A point on the probability simplex.
#[derive(Clone, Debug, PartialEq)]
pub struct ProbVector(Vec<Real>);

impl ProbVector {
    /// Allowed deviation of the sum from 1.
    #[cfg(not(feature = "f32"))]
    pub const TOLERANCE: Real = 1e-9;
    #[cfg(feature = "f32")]
    pub const TOLERANCE: Real = 1e-5;

    pub fn new(probs: Vec<Real>) -> Result<Self> {
        let sum: Real = probs.iter().sum();
        if probs.is_empty()
            || probs.iter().any(|p| !p.is_finite() || *p < 0.0)
            || (sum - 1.0).abs() > Self::TOLERANCE
        {
            return Err(Error::config("probabilities must lie on the simplex"));
        }
        Ok(Self(probs))
    }

    pub fn uniform(k: usize) -> Self {
        Self(vec![1.0 / k as Real; k])
    }

    pub fn as_slice(&self) -> &[Real] {
        &self.0
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    /// Index of the largest probability; ties go to the lowest index.
    pub fn argmax(&self) -> usize {
        let mut best = 0;
        for (i, p) in self.0.iter().enumerate() {
            if *p > self.0[best] {
                best = i;
            }
        }
        best
    }
}

/// Per-frame feature vectors with their source frame positions.
#[derive(Clone, Debug, PartialEq)]
pub struct FeatureSequence {
    pub features: Tensor,
    pub frame_index: Vec<usize>,
}

/// Encoder output: per-frame class logits, the final encoder states and
/// every attention matrix (`[block][head]`, each `P' × P'`).
#[derive(Clone, Debug)]
pub struct HiddenSequence {
    pub logits: Tensor,
    pub states: Tensor,
    pub attention: Vec<Vec<Tensor>>,
}

/// Everything `backward` needs from one forward pass.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    input: Tensor,
    blocks: Vec<BlockCache>,
    states: Tensor,
    frame_probs: Tensor,
}

#[derive(Clone, Debug)]
struct BlockCache {
    ln1: LayerNormCache,
    normed1: Tensor,
    q: Tensor,
    k: Tensor,
    v: Tensor,
    attention: Vec<Tensor>,
    mixed: Tensor,
    ln2: LayerNormCache,
    normed2: Tensor,
    pre_act: Tensor,
    act: Tensor,
}

pub struct ForwardPass {
    pub frame_probs: Tensor,
    pub clip_prob: ProbVector,
    pub cache: ForwardCache,
}

/// Sinusoidal encoding of (possibly non-contiguous) source positions.
pub fn positional_encoding(frame_index: &[usize], dim: usize) -> Tensor {
    let mut pe = Tensor::zeros(&[frame_index.len(), dim]);
    for (r, &pos) in frame_index.iter().enumerate() {
        let row = pe.row_mut(r);
        for i in (0..dim).step_by(2) {
            let freq = (10_000.0 as Real).powf(-(i as Real) / dim as Real);
            let angle = pos as Real * freq;
            row[i] = angle.sin();
            if i + 1 < dim {
                row[i + 1] = angle.cos();
            }
        }
    }
    pe
}

fn clip_matrix(clip: &ClipTensor, arch: &ArchConfig) -> Result<Tensor> {
    if clip.channels() != arch.channels
        || clip.height() != arch.height
        || clip.width() != arch.width
    {
        return Err(Error::ShapeMismatch {
            op: "embed_frames",
            expected: vec![arch.channels, arch.height, arch.width],
            got: vec![clip.channels(), clip.height(), clip.width()],
        });
    }
    Tensor::from_vec(&[clip.frames(), clip.frame_len()], clip.data().to_vec())
}

/// Maps every frame independently through the same linear projection.
pub fn embed_frames(clip: &ClipTensor, params: &ModelParams) -> Result<FeatureSequence> {
    let input = clip_matrix(clip, &params.arch)?;
    Ok(FeatureSequence {
        features: ops::linear(&input, &params.embed_w, &params.embed_b)?,
        frame_index: clip.frame_index().to_vec(),
    })
}

fn block_forward(x: &Tensor, p: &BlockParams, arch: &ArchConfig) -> Result<(Tensor, BlockCache)> {
    let (normed1, ln1) = ops::layer_norm(x, &p.ln1_gamma, &p.ln1_beta)?;
    let q = ops::linear(&normed1, &p.wq, &p.bq)?;
    let k = ops::linear(&normed1, &p.wk, &p.bk)?;
    let v = ops::linear(&normed1, &p.wv, &p.bv)?;

    let hd = arch.head_dim();
    let scale = 1.0 / (hd as Real).sqrt();
    let mut mixed = Tensor::zeros(x.shape());
    let mut attention = Vec::with_capacity(arch.heads);
    for h in 0..arch.heads {
        let qh = q.column_block(h * hd, hd);
        let kh = k.column_block(h * hd, hd);
        let vh = v.column_block(h * hd, hd);
        let mut scores = ops::matmul_nt(&qh, &kh)?;
        scores.scale(scale);
        let weights = ops::softmax_rows(&scores)?;
        mixed.set_column_block(h * hd, &ops::matmul(&weights, &vh)?);
        attention.push(weights);
    }
    let attn_out = ops::linear(&mixed, &p.wo, &p.bo)?;
    let mid = ops::residual_add(x, &attn_out)?;

    let (normed2, ln2) = ops::layer_norm(&mid, &p.ln2_gamma, &p.ln2_beta)?;
    let pre_act = ops::linear(&normed2, &p.ff_w1, &p.ff_b1)?;
    let act = ops::relu(&pre_act);
    let ff_out = ops::linear(&act, &p.ff_w2, &p.ff_b2)?;
    let out = ops::residual_add(&mid, &ff_out)?;

    Ok((
        out,
        BlockCache {
            ln1,
            normed1,
            q,
            k,
            v,
            attention,
            mixed,
            ln2,
            normed2,
            pre_act,
            act,
        },
    ))
}

fn block_backward(
    upstream: &Tensor,
    p: &BlockParams,
    cache: &BlockCache,
    arch: &ArchConfig,
    grads: &mut BlockParams,
) -> Result<Tensor> {
    // Feed-forward sublayer.
    let (mut g_mid, g_ff) = ops::residual_backward(upstream);
    let ff2 = ops::linear_backward(&cache.act, &p.ff_w2, &g_ff)?;
    grads.ff_w2.axpy(1.0, &ff2.weight)?;
    grads.ff_b2.axpy(1.0, &ff2.bias)?;
    let g_pre = ops::relu_backward(&cache.pre_act, &ff2.input)?;
    let ff1 = ops::linear_backward(&cache.normed2, &p.ff_w1, &g_pre)?;
    grads.ff_w1.axpy(1.0, &ff1.weight)?;
    grads.ff_b1.axpy(1.0, &ff1.bias)?;
    let ln2 = ops::layer_norm_backward(&cache.ln2, &p.ln2_gamma, &ff1.input)?;
    grads.ln2_gamma.axpy(1.0, &ln2.gamma)?;
    grads.ln2_beta.axpy(1.0, &ln2.beta)?;
    g_mid.axpy(1.0, &ln2.input)?;

    // Attention sublayer.
    let (mut g_in, g_attn) = ops::residual_backward(&g_mid);
    let out_proj = ops::linear_backward(&cache.mixed, &p.wo, &g_attn)?;
    grads.wo.axpy(1.0, &out_proj.weight)?;
    grads.bo.axpy(1.0, &out_proj.bias)?;

    let hd = arch.head_dim();
    let scale = 1.0 / (hd as Real).sqrt();
    let mut g_q = Tensor::zeros(cache.q.shape());
    let mut g_k = Tensor::zeros(cache.k.shape());
    let mut g_v = Tensor::zeros(cache.v.shape());
    for h in 0..arch.heads {
        let qh = cache.q.column_block(h * hd, hd);
        let kh = cache.k.column_block(h * hd, hd);
        let vh = cache.v.column_block(h * hd, hd);
        let weights = &cache.attention[h];
        let g_out = out_proj.input.column_block(h * hd, hd);
        let (g_weights, g_vh) = ops::matmul_backward(weights, &vh, &g_out)?;
        let mut g_scores = ops::softmax_rows_backward(weights, &g_weights)?;
        g_scores.scale(scale);
        g_q.set_column_block(h * hd, &ops::matmul(&g_scores, &kh)?);
        g_k.set_column_block(h * hd, &ops::matmul_tn(&g_scores, &qh)?);
        g_v.set_column_block(h * hd, &g_vh);
    }

    let mut g_normed1 = Tensor::zeros(cache.normed1.shape());
    for (g, w, gw, gb) in [
        (&g_q, &p.wq, &mut grads.wq, &mut grads.bq),
        (&g_k, &p.wk, &mut grads.wk, &mut grads.bk),
        (&g_v, &p.wv, &mut grads.wv, &mut grads.bv),
    ] {
        let lin = ops::linear_backward(&cache.normed1, w, g)?;
        gw.axpy(1.0, &lin.weight)?;
        gb.axpy(1.0, &lin.bias)?;
        g_normed1.axpy(1.0, &lin.input)?;
    }
    let ln1 = ops::layer_norm_backward(&cache.ln1, &p.ln1_gamma, &g_normed1)?;
    grads.ln1_gamma.axpy(1.0, &ln1.gamma)?;
    grads.ln1_beta.axpy(1.0, &ln1.beta)?;
    g_in.axpy(1.0, &ln1.input)?;
    Ok(g_in)
}

fn encode(
    seq: &FeatureSequence,
    params: &ModelParams,
) -> Result<(HiddenSequence, Vec<BlockCache>)> {
    let arch = &params.arch;
    if seq.features.rows() == 0 {
        return Err(Error::EmptyClip);
    }
    seq.features
        .expect_shape(&[seq.frame_index.len(), arch.dim], "temporal_encode")?;
    let mut x = seq.features.clone();
    x.axpy(1.0, &positional_encoding(&seq.frame_index, arch.dim))?;
    let mut caches = Vec::with_capacity(params.blocks.len());
    for block in &params.blocks {
        let (out, cache) = block_forward(&x, block, arch)?;
        caches.push(cache);
        x = out;
    }
    let logits = ops::linear(&x, &params.head_w, &params.head_b)?;
    let attention = caches.iter().map(|c| c.attention.clone()).collect();
    Ok((
        HiddenSequence {
            logits,
            states: x,
            attention,
        },
        caches,
    ))
}

/// Adds positional encodings, runs the transformer blocks and applies the
/// classifier head to every frame.
pub fn temporal_encode(seq: &FeatureSequence, params: &ModelParams) -> Result<HiddenSequence> {
    Ok(encode(seq, params)?.0)
}

/// Row-wise softmax of per-frame logits.
pub fn frame_probabilities(hidden: &HiddenSequence) -> Result<Tensor> {
    ops::softmax_rows(&hidden.logits)
}

/// Mean of frame probability rows.
pub fn clip_probability(frame_probs: &Tensor) -> Result<ProbVector> {
    if frame_probs.shape().len() != 2 || frame_probs.rows() == 0 {
        return Err(Error::EmptyClip);
    }
    let n = frame_probs.rows();
    let mut mean = vec![0.0; frame_probs.cols()];
    for r in 0..n {
        for (m, p) in mean.iter_mut().zip(frame_probs.row(r)) {
            *m += p;
        }
    }
    mean.iter_mut().for_each(|m| *m /= n as Real);
    ProbVector::new(mean)
}

pub fn forward(clip: &ClipTensor, params: &ModelParams) -> Result<ForwardPass> {
    let input = clip_matrix(clip, &params.arch)?;
    let seq = FeatureSequence {
        features: ops::linear(&input, &params.embed_w, &params.embed_b)?,
        frame_index: clip.frame_index().to_vec(),
    };
    let (hidden, blocks) = encode(&seq, params)?;
    let frame_probs = frame_probabilities(&hidden)?;
    let clip_prob = clip_probability(&frame_probs)?;
    Ok(ForwardPass {
        frame_probs: frame_probs.clone(),
        clip_prob,
        cache: ForwardCache {
            input,
            blocks,
            states: hidden.states,
            frame_probs,
        },
    })
}

/// Clip-level prediction only.
pub fn predict(clip: &ClipTensor, params: &ModelParams) -> Result<ProbVector> {
    Ok(forward(clip, params)?.clip_prob)
}

/// Gradients of a scalar loss with respect to every parameter, given the
/// loss gradient with respect to the clip probability vector.
pub fn backward(
    params: &ModelParams,
    cache: &ForwardCache,
    grad_clip_prob: &[Real],
) -> Result<ModelParams> {
    let arch = &params.arch;
    let frames = cache.frame_probs.rows();
    if grad_clip_prob.len() != arch.classes {
        return Err(Error::ShapeMismatch {
            op: "backward",
            expected: vec![arch.classes],
            got: vec![grad_clip_prob.len()],
        });
    }
    let mut grads = params.zeros_like();

    let mut g_probs = Tensor::zeros(cache.frame_probs.shape());
    for r in 0..frames {
        for (g, up) in g_probs.row_mut(r).iter_mut().zip(grad_clip_prob) {
            *g = up / frames as Real;
        }
    }
    let g_logits = ops::softmax_rows_backward(&cache.frame_probs, &g_probs)?;
    let head = ops::linear_backward(&cache.states, &params.head_w, &g_logits)?;
    grads.head_w = head.weight;
    grads.head_b = head.bias;

    let mut g_x = head.input;
    for ((block, block_cache), block_grads) in params
        .blocks
        .iter()
        .zip(&cache.blocks)
        .zip(grads.blocks.iter_mut())
        .rev()
    {
        g_x = block_backward(&g_x, block, block_cache, arch, block_grads)?;
    }

    // Positional encodings are constant, so the gradient reaches the
    // embedder unchanged.
    let embed = ops::linear_backward(&cache.input, &params.embed_w, &g_x)?;
    grads.embed_w = embed.weight;
    grads.embed_b = embed.bias;
    Ok(grads)
}
