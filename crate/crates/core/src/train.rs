//! AdamW training loop, evaluation, finite-difference gradient checking and
//! the four-way ablation (vanilla / +augmentation / +NAW / both).

use std::time::Instant;

use crate::augment::{augment_clip, AugmentConfig, ClipTensor};
use crate::data::{generate_dataset, train_val_split, GenConfig, LabeledClip};
use crate::error::{Error, Result};
use crate::loss::{self, KernelMean, LossOutput, NawParams};
use crate::metrics::ConfusionCounts;
use crate::model::{self, ArchConfig, ModelParams};
use crate::tensors::{Real, RngStream, Tensor};

#[derive(Clone, Debug, PartialEq)]
pub struct AdamWConfig {
    pub lr: Real,
    pub beta1: Real,
    pub beta2: Real,
    pub eps: Real,
    pub weight_decay: Real,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
        }
    }
}

/// Kernel settings before the class count is known.
#[derive(Clone, Debug, PartialEq)]
pub struct NawSettings {
    pub mean: KernelMean,
    pub sigma: Real,
    pub weight_cap: Option<Real>,
}

impl Default for NawSettings {
    fn default() -> Self {
        Self {
            mean: KernelMean::Uniform,
            sigma: 0.2,
            weight_cap: None,
        }
    }
}

impl NawSettings {
    pub fn build(&self, classes: usize) -> Result<NawParams> {
        NawParams::new(classes, self.mean.clone(), self.sigma, self.weight_cap)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub optimizer: AdamWConfig,
    pub use_augment: bool,
    pub augment: AugmentConfig,
    pub use_naw: bool,
    pub naw: NawSettings,
    pub dim: usize,
    pub heads: usize,
    pub blocks: usize,
    pub ff_dim: usize,
    /// Score every frame's probability row instead of the clip average.
    pub per_frame_eval: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 20,
            batch_size: 32,
            optimizer: AdamWConfig::default(),
            use_augment: true,
            augment: AugmentConfig::default(),
            use_naw: true,
            naw: NawSettings::default(),
            dim: 32,
            heads: 2,
            blocks: 2,
            ff_dim: 128,
            per_frame_eval: false,
            seed: 0,
        }
    }
}

impl TrainConfig {
    /// Values used for the full-size video runs: 1e-4 learning rate and
    /// batches of 4096 clips.
    pub fn full_scale() -> Self {
        Self {
            batch_size: 4096,
            optimizer: AdamWConfig {
                lr: 1e-4,
                ..AdamWConfig::default()
            },
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.optimizer.lr > 0.0 && self.optimizer.lr.is_finite()) {
            return Err(Error::config("learning rate must be positive"));
        }
        if self.batch_size == 0 {
            return Err(Error::config("batch size must be at least 1"));
        }
        if !(0.0..1.0).contains(&self.optimizer.beta1)
            || !(0.0..1.0).contains(&self.optimizer.beta2)
        {
            return Err(Error::config("betas must lie in [0, 1)"));
        }
        if self.optimizer.weight_decay < 0.0 || self.optimizer.eps <= 0.0 {
            return Err(Error::config("weight decay must be >= 0 and eps > 0"));
        }
        self.augment.validate()
    }

    /// Architecture for clips shaped like `clip`.
    pub fn arch_for(&self, clip: &ClipTensor, classes: usize) -> ArchConfig {
        ArchConfig {
            channels: clip.channels(),
            height: clip.height(),
            width: clip.width(),
            dim: self.dim,
            heads: self.heads,
            blocks: self.blocks,
            classes,
            ff_dim: self.ff_dim,
        }
    }
}

/// First and second moment estimates, one pair per parameter group.
#[derive(Clone, Debug, PartialEq)]
pub struct OptState {
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl OptState {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Tensor> = params
            .tensors()
            .iter()
            .map(|(_, t)| Tensor::zeros(t.shape()))
            .collect();
        Self {
            first: zeros.clone(),
            second: zeros,
            step: 0,
        }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Errors unless every moment tensor matches its parameter group.
    pub fn check_shapes(&self, params: &ModelParams) -> Result<()> {
        let groups = params.tensors();
        if groups.len() != self.first.len() || groups.len() != self.second.len() {
            return Err(Error::config("optimizer state does not match parameters"));
        }
        for ((_, p), (m, v)) in groups.iter().zip(self.first.iter().zip(&self.second)) {
            p.same_shape(m, "optimizer state")?;
            p.same_shape(v, "optimizer state")?;
        }
        Ok(())
    }
}

/// One bias-corrected AdamW update. Weight decay scales the weights
/// directly and never enters the moment estimates.
pub fn optimizer_step(
    params: &mut ModelParams,
    grads: &ModelParams,
    state: &mut OptState,
    cfg: &AdamWConfig,
) -> Result<()> {
    state.check_shapes(params)?;
    for (name, g) in grads.tensors() {
        if !g.is_finite() {
            return Err(Error::NonFiniteGradient { group: name });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for (((_, p), (_, g)), (m, v)) in params
        .tensors_mut()
        .into_iter()
        .zip(grads.tensors())
        .zip(state.first.iter_mut().zip(state.second.iter_mut()))
    {
        p.same_shape(g, "optimizer_step")?;
        let iter = p
            .data_mut()
            .iter_mut()
            .zip(g.data())
            .zip(m.data_mut().iter_mut().zip(v.data_mut().iter_mut()));
        for ((w, &gi), (mi, vi)) in iter {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w = *w * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

/// Loss of one clip and its gradient with respect to every parameter.
///
/// With `naw` the loss is `(1 + w*) · CE` with `w*` detached; without it,
/// plain cross-entropy. `scale` multiplies the loss and its gradient.
pub fn loss_and_grads(
    params: &ModelParams,
    clip: &ClipTensor,
    label: usize,
    naw: Option<&NawParams>,
    scale: Real,
) -> Result<(LossOutput, ModelParams, model::ProbVector)> {
    let pass = model::forward(clip, params)?;
    let mut out = match naw {
        Some(naw) => loss::naw_ce_loss(&pass.clip_prob, label, naw)?,
        None => loss::ce_loss(&pass.clip_prob, label)?,
    };
    out.value *= scale;
    out.grad.iter_mut().for_each(|g| *g *= scale);
    let grads = model::backward(params, &pass.cache, &out.grad)?;
    Ok((out, grads, pass.clip_prob))
}

/// One row of the training log.
#[derive(Clone, Debug, PartialEq)]
pub struct EpochStats {
    pub epoch: usize,
    pub mean_loss: f64,
    pub mean_weight: f64,
    /// Running macro-F1 of the training forward passes against the
    /// observed labels.
    pub train_macro_f1: f64,
    pub val_macro_f1: f64,
    pub val_per_class_f1: Vec<f64>,
    pub wall_secs: f64,
}

const SHUFFLE_TAG: u64 = 0x7368_7566;
const AUGMENT_TAG: u64 = 0x6175_676d;
const INIT_TAG: u64 = 0x696e_6974;

struct ClipResult {
    value: Real,
    weight: Real,
    pred: usize,
    grads: ModelParams,
}

/// Sizes the global worker pool. Results do not depend on the thread
/// count: per-clip work is collected in order before any reduction.
pub fn configure_threads(threads: usize) -> Result<()> {
    #[cfg(feature = "parallel")]
    {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| Error::config(format!("thread pool: {e}")))
    }
    #[cfg(not(feature = "parallel"))]
    {
        let _ = threads;
        Ok(())
    }
}

fn map_ordered<T, R, F>(items: &[T], f: F) -> Vec<R>
where
    T: Sync,
    R: Send,
    F: Fn(&T) -> R + Sync + Send,
{
    #[cfg(feature = "parallel")]
    {
        use rayon::prelude::*;
        items.par_iter().map(f).collect()
    }
    #[cfg(not(feature = "parallel"))]
    {
        items.iter().map(f).collect()
    }
}

/// One pass over `train` (indices into `dataset`) in shuffled mini-batches.
/// Returns `(mean loss, mean weight, running train confusion)`.
pub fn train_epoch(
    dataset: &[LabeledClip],
    train: &[usize],
    params: &mut ModelParams,
    state: &mut OptState,
    cfg: &TrainConfig,
    epoch: usize,
) -> Result<(f64, f64, ConfusionCounts)> {
    if train.is_empty() {
        return Err(Error::config("empty training set"));
    }
    let classes = params.arch().classes;
    let naw = cfg.naw.build(classes)?;
    let mut order = train.to_vec();
    {
        use rand::seq::SliceRandom;
        let mut rng = RngStream::new(cfg.seed, SHUFFLE_TAG).derive(epoch as u64);
        order.shuffle(&mut rng);
    }
    let augment_root = RngStream::new(cfg.seed, AUGMENT_TAG).derive(epoch as u64);

    let mut loss_sum = 0.0f64;
    let mut weight_sum = 0.0f64;
    let mut counts = ConfusionCounts::new(classes);
    for batch in order.chunks(cfg.batch_size) {
        let snapshot = &*params;
        let results: Vec<Result<ClipResult>> = map_ordered(batch, |&i| {
            let item = &dataset[i];
            let clip = if cfg.use_augment {
                let mut rng = augment_root.derive(i as u64);
                augment_clip(&item.clip, &cfg.augment, &mut rng)?
            } else {
                item.clip.clone()
            };
            let used = cfg.use_naw.then_some(&naw);
            let (out, grads, prob) = loss_and_grads(snapshot, &clip, item.label, used, 1.0)?;
            if !out.value.is_finite() {
                return Err(Error::NonFiniteLoss {
                    clip_id: item.id.clone(),
                });
            }
            let weight = if cfg.use_naw {
                out.weight
            } else {
                loss::naw_weight(&prob, &naw)?
            };
            Ok(ClipResult {
                value: out.value,
                weight,
                pred: prob.argmax(),
                grads,
            })
        });

        let mut total = params.zeros_like();
        for (r, &i) in results.into_iter().zip(batch) {
            let r = r?;
            loss_sum += r.value as f64;
            weight_sum += r.weight as f64;
            counts.accumulate(r.pred, dataset[i].label)?;
            total.axpy(1.0, &r.grads)?;
        }
        total.scale(1.0 / batch.len() as Real);
        optimizer_step(params, &total, state, &cfg.optimizer)?;
    }
    let n = train.len() as f64;
    Ok((loss_sum / n, weight_sum / n, counts))
}

/// Confusion counts of `params` on the given clips, scored against the
/// clean labels when `clean` is set. `per_frame` scores every frame row.
pub fn evaluate(
    clips: &[&LabeledClip],
    params: &ModelParams,
    clean: bool,
    per_frame: bool,
) -> Result<ConfusionCounts> {
    let classes = params.arch().classes;
    let preds: Vec<Result<Vec<usize>>> = map_ordered(clips, |c| {
        let pass = model::forward(&c.clip, params)?;
        if per_frame {
            Ok((0..pass.frame_probs.rows())
                .map(|r| argmax(pass.frame_probs.row(r)))
                .collect())
        } else {
            Ok(vec![pass.clip_prob.argmax()])
        }
    });
    let mut counts = ConfusionCounts::new(classes);
    for (p, c) in preds.into_iter().zip(clips) {
        let truth = if clean { c.clean_label } else { c.label };
        for pred in p? {
            counts.accumulate(pred, truth)?;
        }
    }
    Ok(counts)
}

fn argmax(v: &[Real]) -> usize {
    let mut best = 0;
    for (i, x) in v.iter().enumerate() {
        if *x > v[best] {
            best = i;
        }
    }
    best
}

/// Fresh parameters for a dataset whose clips look like `sample`.
pub fn init_params(cfg: &TrainConfig, sample: &ClipTensor, classes: usize) -> Result<ModelParams> {
    let arch = cfg.arch_for(sample, classes);
    ModelParams::init(arch, &mut RngStream::new(cfg.seed, INIT_TAG))
}

pub struct TrainOutcome {
    pub params: ModelParams,
    pub state: OptState,
    pub history: Vec<EpochStats>,
}

/// Trains on the 7:3 split of `dataset` and evaluates on the validation
/// part (clean labels) after every epoch.
pub fn train_model(
    dataset: &[LabeledClip],
    classes: usize,
    cfg: &TrainConfig,
    mut on_epoch: impl FnMut(&EpochStats),
) -> Result<TrainOutcome> {
    cfg.validate()?;
    let first = dataset
        .first()
        .ok_or_else(|| Error::config("empty dataset"))?;
    let (train_idx, val_idx) = train_val_split(dataset.len());
    let val: Vec<&LabeledClip> = val_idx.iter().map(|&i| &dataset[i]).collect();
    let mut params = init_params(cfg, &first.clip, classes)?;
    let mut state = OptState::new(&params);
    let mut history = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let start = Instant::now();
        let (mean_loss, mean_weight, train_counts) =
            train_epoch(dataset, &train_idx, &mut params, &mut state, cfg, epoch)?;
        let val_counts = evaluate(&val, &params, true, cfg.per_frame_eval)?;
        let stats = EpochStats {
            epoch: epoch + 1,
            mean_loss,
            mean_weight,
            train_macro_f1: train_counts.macro_f1(),
            val_macro_f1: val_counts.macro_f1(),
            val_per_class_f1: val_counts.per_class_f1(),
            wall_secs: start.elapsed().as_secs_f64(),
        };
        on_epoch(&stats);
        history.push(stats);
    }
    Ok(TrainOutcome {
        params,
        state,
        history,
    })
}

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    pub step: Real,
    /// Lower bound on the relative-error denominator, multiplied by
    /// `max(1, |loss|)` because finite-difference roundoff grows with the
    /// loss value.
    pub floor: Real,
    /// Multiplies the loss; zero makes every gradient vanish.
    pub loss_scale: Real,
    /// Check at most this many seeded coordinates per group; `None` checks
    /// all of them.
    pub max_coords_per_group: Option<usize>,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        Self {
            step: 1e-5,
            floor: 1e-6,
            loss_scale: 1.0,
            max_coords_per_group: None,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub worst_group: String,
    pub coords_checked: usize,
    /// Analytic gradient of the loss (with the configured scale).
    pub analytic: ModelParams,
}

/// `|a − n| / max(|a|, |n|, floor)`.
pub fn relative_error(analytic: f64, numeric: f64, floor: f64) -> f64 {
    let denom = analytic.abs().max(numeric.abs()).max(floor);
    (analytic - numeric).abs() / denom
}

/// Compares analytic gradients with central finite differences of the
/// same loss. The noise-aware weight is evaluated once at the unperturbed
/// parameters and held fixed, matching the detached backward pass.
pub fn check_gradients_with(
    params: &ModelParams,
    clip: &ClipTensor,
    label: usize,
    naw: Option<&NawParams>,
    opts: &GradCheckOptions,
) -> Result<GradCheckReport> {
    let (out, analytic, _) = loss_and_grads(params, clip, label, naw, opts.loss_scale)?;
    let multiplier = opts.loss_scale * (1.0 + out.weight);
    let loss_at = |p: &ModelParams| -> Result<f64> {
        let prob = model::predict(clip, p)?;
        Ok((multiplier * loss::cross_entropy(&prob, label)?) as f64)
    };

    let floor = opts.floor as f64 * (out.value.abs() as f64).max(1.0);
    let mut probe = params.clone();
    let mut rng = RngStream::new(opts.seed, 0x6763);
    let mut max_err = 0.0f64;
    let mut worst_group = String::new();
    let mut checked = 0;
    let groups = analytic.tensors().len();
    for g in 0..groups {
        let len = analytic.tensors()[g].1.len();
        let coords: Vec<usize> = match opts.max_coords_per_group {
            Some(n) if n < len => rand::seq::index::sample(&mut rng, len, n).into_vec(),
            _ => (0..len).collect(),
        };
        for j in coords {
            let original = probe.tensors()[g].1.data()[j];
            probe.tensors_mut()[g].1.data_mut()[j] = original + opts.step;
            let plus = loss_at(&probe)?;
            probe.tensors_mut()[g].1.data_mut()[j] = original - opts.step;
            let minus = loss_at(&probe)?;
            probe.tensors_mut()[g].1.data_mut()[j] = original;
            let numeric = (plus - minus) / (2.0 * opts.step as f64);
            let a = analytic.tensors()[g].1.data()[j] as f64;
            let err = relative_error(a, numeric, floor);
            if err > max_err {
                max_err = err;
                worst_group = analytic.tensors()[g].0.clone();
            }
            checked += 1;
        }
    }
    Ok(GradCheckReport {
        max_rel_error: max_err,
        worst_group,
        coords_checked: checked,
        analytic,
    })
}

/// Maximum relative error between analytic and central-difference
/// gradients over every parameter coordinate.
pub fn check_gradients(
    params: &ModelParams,
    clip: &ClipTensor,
    label: usize,
    naw: Option<&NawParams>,
    step: Real,
) -> Result<f64> {
    let opts = GradCheckOptions {
        step,
        ..GradCheckOptions::default()
    };
    Ok(check_gradients_with(params, clip, label, naw, &opts)?.max_rel_error)
}

/// Architecture used by the gradient checker: 6×6 single-channel frames,
/// `D = 8`, two heads, one block, four classes.
pub fn gradcheck_arch() -> ArchConfig {
    ArchConfig {
        channels: 1,
        height: 6,
        width: 6,
        dim: 8,
        heads: 2,
        blocks: 1,
        classes: 4,
        ff_dim: 32,
    }
}

/// Random parameters, three-frame clip and label for the gradient checker.
pub fn gradcheck_problem(seed: u64) -> Result<(ModelParams, ClipTensor, usize)> {
    let arch = gradcheck_arch();
    let mut rng = RngStream::new(seed, 0x6772_6164);
    let mut params = ModelParams::init(arch, &mut rng)?;
    params.jitter(0.1, &mut rng);
    let frames = 3;
    let data = (0..frames * arch.input_len())
        .map(|_| rng.uniform())
        .collect();
    let clip = ClipTensor::new(frames, 1, arch.height, arch.width, data)?
        .with_frame_index(vec![0, 2, 3])?;
    let label = rng.below(arch.classes);
    Ok((params, clip, label))
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Variant {
    Vanilla,
    Augment,
    Naw,
    Both,
}

impl Variant {
    pub const ALL: [Variant; 4] = [
        Variant::Vanilla,
        Variant::Augment,
        Variant::Naw,
        Variant::Both,
    ];

    pub fn flags(self) -> (bool, bool) {
        match self {
            Variant::Vanilla => (false, false),
            Variant::Augment => (true, false),
            Variant::Naw => (false, true),
            Variant::Both => (true, true),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Vanilla => "vanilla",
            Variant::Augment => "aug",
            Variant::Naw => "naw",
            Variant::Both => "aug+naw",
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AblationRow {
    pub variant: Variant,
    pub per_class_f1: Vec<f64>,
    pub macro_f1: f64,
    /// Validation macro-F1 of every seed, in seed order.
    pub per_seed_macro_f1: Vec<f64>,
}

/// Trains the four variants on identical data for every seed and averages
/// their validation scores. Seed `s` uses dataset seed `gen.seed + s` and
/// training seed `base.seed + s`.
pub fn run_ablation(
    gen: &GenConfig,
    base: &TrainConfig,
    seeds: &[u64],
    mut progress: impl FnMut(Variant, u64, &EpochStats),
) -> Result<Vec<AblationRow>> {
    if seeds.is_empty() {
        return Err(Error::config("ablation needs at least one seed"));
    }
    let classes = gen.classes;
    let mut sums: Vec<(Vec<f64>, Vec<f64>)> =
        vec![(vec![0.0; classes], Vec::new()); Variant::ALL.len()];
    for &s in seeds {
        let data = generate_dataset(&GenConfig {
            seed: gen.seed.wrapping_add(s),
            ..gen.clone()
        })?;
        for (v, variant) in Variant::ALL.iter().enumerate() {
            let (use_augment, use_naw) = variant.flags();
            let cfg = TrainConfig {
                use_augment,
                use_naw,
                seed: base.seed.wrapping_add(s),
                ..base.clone()
            };
            let outcome = train_model(&data, classes, &cfg, |e| progress(*variant, s, e))?;
            let last = outcome
                .history
                .last()
                .ok_or_else(|| Error::config("ablation needs at least one epoch"))?;
            for (acc, f) in sums[v].0.iter_mut().zip(&last.val_per_class_f1) {
                *acc += f;
            }
            sums[v].1.push(last.val_macro_f1);
        }
    }
    let n = seeds.len() as f64;
    Ok(Variant::ALL
        .iter()
        .zip(sums)
        .map(|(variant, (per_class, per_seed))| AblationRow {
            variant: *variant,
            per_class_f1: per_class.iter().map(|f| f / n).collect(),
            macro_f1: per_seed.iter().sum::<f64>() / n,
            per_seed_macro_f1: per_seed,
        })
        .collect())
}
