//! `vnaw`: generate synthetic clip datasets, preview augmentation, train,
//! evaluate, check gradients and run the four-way ablation.
//!
//! Exit codes: 0 success, 1 usage or configuration error, 2 runtime failure.

use std::fs::File;
use std::io::{self, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use vnaw_core::augment::augment_clip_with_masks;
use vnaw_core::data::{self, GenConfig, LabeledClip};
use vnaw_core::loss::NawParams;
use vnaw_core::metrics::class_names;
use vnaw_core::tensors::RngStream;
use vnaw_core::train::{self, EpochStats, GradCheckOptions, TrainConfig};
use vnaw_core::{checkpoint, config};

#[derive(Parser)]
#[command(
    name = "vnaw",
    version,
    about = "Video expression classification with noise-aware loss weighting"
)]
struct Cli {
    /// Worker threads (also read from VNAW_THREADS). Results do not depend on it.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labelled clip dataset directory.
    GenData(GenDataArgs),
    /// Augment one clip file and report the masks that were applied.
    Augment(AugmentArgs),
    /// Train a model and write a checkpoint.
    Train(TrainArgs),
    /// Score a checkpoint on the validation split of a dataset.
    Eval(EvalArgs),
    /// Compare analytic and finite-difference gradients on a tiny model.
    Gradcheck(GradcheckArgs),
    /// Train vanilla / +aug / +naw / both over several seeds.
    Ablate(AblateArgs),
}

#[derive(Args, Default)]
struct GenOverrides {
    #[arg(long)]
    clips: Option<usize>,
    #[arg(long)]
    classes: Option<usize>,
    #[arg(long)]
    frames: Option<usize>,
    #[arg(long)]
    height: Option<usize>,
    #[arg(long)]
    width: Option<usize>,
    /// Class prior ratio between consecutive classes.
    #[arg(long)]
    imbalance: Option<f64>,
    /// Symmetric label-flip rate.
    #[arg(long)]
    noise: Option<f64>,
    #[arg(long)]
    snr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
}

#[derive(Args)]
struct GenDataArgs {
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
    /// Dataset config file (`data.*` keys).
    #[arg(long)]
    config: Option<PathBuf>,
    #[command(flatten)]
    gen: GenOverrides,
}

#[derive(Args)]
struct AugmentArgs {
    /// Input clip file.
    #[arg(long)]
    clip: PathBuf,
    /// Output clip file.
    #[arg(long)]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long)]
    lambda_min: Option<f64>,
    #[arg(long)]
    lambda_max: Option<f64>,
    #[arg(long)]
    erase_ratio: Option<f64>,
    #[arg(long)]
    no_frame_skip: bool,
    #[arg(long)]
    no_pixel_erase: bool,
}

#[derive(Args)]
struct TrainOverrides {
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    lr: Option<f64>,
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    sigma: Option<f64>,
    #[arg(long, conflicts_with = "no_augment")]
    augment: bool,
    #[arg(long)]
    no_augment: bool,
    #[arg(long, conflicts_with = "no_naw")]
    naw: bool,
    #[arg(long)]
    no_naw: bool,
}

impl TrainOverrides {
    fn apply(&self, cfg: &mut TrainConfig) {
        if let Some(v) = self.epochs {
            cfg.epochs = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(v) = self.lr {
            cfg.optimizer.lr = v;
        }
        if let Some(v) = self.seed {
            cfg.seed = v;
        }
        if let Some(v) = self.sigma {
            cfg.naw.sigma = v;
        }
        if self.augment {
            cfg.use_augment = true;
        }
        if self.no_augment {
            cfg.use_augment = false;
        }
        if self.naw {
            cfg.use_naw = true;
        }
        if self.no_naw {
            cfg.use_naw = false;
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// Dataset directory.
    #[arg(long)]
    data: PathBuf,
    /// Checkpoint to write.
    #[arg(long)]
    out: PathBuf,
    /// Training config file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Per-epoch CSV log.
    #[arg(long)]
    log: Option<PathBuf>,
    /// Number of classes in the dataset.
    #[arg(long, default_value_t = 8)]
    classes: usize,
    #[command(flatten)]
    overrides: TrainOverrides,
}

#[derive(Args)]
struct EvalArgs {
    #[arg(long)]
    data: PathBuf,
    #[arg(long)]
    ckpt: PathBuf,
    /// Score every frame instead of the clip average.
    #[arg(long)]
    per_frame: bool,
    /// Score against the observed (noisy) labels instead of the clean ones.
    #[arg(long)]
    noisy: bool,
}

#[derive(Args)]
struct GradcheckArgs {
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long, default_value_t = 1e-5)]
    step: f64,
    #[arg(long, default_value_t = 1e-4)]
    tolerance: f64,
}

#[derive(Args)]
struct AblateArgs {
    #[arg(long)]
    data_config: Option<PathBuf>,
    #[arg(long)]
    train_config: Option<PathBuf>,
    #[arg(long, default_value_t = 5)]
    seeds: u64,
    /// Also write the table as CSV.
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    overrides: TrainOverrides,
}

/// Errors caused by what the user asked for rather than by the run itself.
#[derive(Debug)]
struct UsageError(String);

impl std::fmt::Display for UsageError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(&self.0)
    }
}

impl std::error::Error for UsageError {}

fn usage(e: vnaw_core::Error) -> anyhow::Error {
    match e {
        vnaw_core::Error::Config(msg) => UsageError(msg).into(),
        other => other.into(),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => ExitCode::SUCCESS,
                _ => ExitCode::from(1),
            };
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            if e.downcast_ref::<UsageError>().is_some() {
                ExitCode::from(1)
            } else {
                ExitCode::from(2)
            }
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    let threads = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var("VNAW_THREADS") {
            Ok(v) => Some(
                v.parse()
                    .map_err(|_| UsageError(format!("VNAW_THREADS: `{v}`")))?,
            ),
            Err(_) => None,
        },
    };
    if let Some(n) = threads {
        if n == 0 {
            bail!(UsageError("thread count must be at least 1".into()));
        }
        train::configure_threads(n).map_err(usage)?;
    }
    match cli.command {
        Command::GenData(a) => gen_data(a),
        Command::Augment(a) => augment(a),
        Command::Train(a) => train_cmd(a),
        Command::Eval(a) => eval(a),
        Command::Gradcheck(a) => gradcheck(a),
        Command::Ablate(a) => ablate(a),
    }
}

fn gen_config(file: Option<&Path>, o: &GenOverrides) -> Result<GenConfig> {
    let mut cfg = match file {
        Some(p) => config::load_gen(p).map_err(usage)?,
        None => GenConfig::default(),
    };
    let set = |v: Option<usize>, f: &mut usize| {
        if let Some(v) = v {
            *f = v;
        }
    };
    set(o.clips, &mut cfg.clips);
    set(o.classes, &mut cfg.classes);
    set(o.frames, &mut cfg.frames);
    set(o.height, &mut cfg.height);
    set(o.width, &mut cfg.width);
    if let Some(v) = o.imbalance {
        cfg.imbalance = v as _;
    }
    if let Some(v) = o.noise {
        cfg.label_noise = v as _;
    }
    if let Some(v) = o.snr {
        cfg.snr = v as _;
    }
    if let Some(v) = o.seed {
        cfg.seed = v;
    }
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn train_config(file: Option<&Path>, o: &TrainOverrides) -> Result<TrainConfig> {
    let mut cfg = match file {
        Some(p) => config::load_train(p).map_err(usage)?,
        None => TrainConfig::default(),
    };
    o.apply(&mut cfg);
    cfg.validate().map_err(usage)?;
    Ok(cfg)
}

fn gen_data(a: GenDataArgs) -> Result<ExitCode> {
    let cfg = gen_config(a.config.as_deref(), &a.gen)?;
    let clips = data::generate_dataset(&cfg)?;
    data::write_dataset(&a.out, &clips).with_context(|| format!("writing {}", a.out.display()))?;
    let flipped = clips.iter().filter(|c| c.label != c.clean_label).count();
    println!(
        "wrote {} clips ({} relabelled) to {}",
        clips.len(),
        flipped,
        a.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn augment(a: AugmentArgs) -> Result<ExitCode> {
    let (clip, label) =
        data::read_clip(&a.clip).with_context(|| format!("reading {}", a.clip.display()))?;
    let mut cfg = vnaw_core::augment::AugmentConfig::default();
    if let Some(v) = a.lambda_min {
        cfg.lambda_min = v as _;
    }
    if let Some(v) = a.lambda_max {
        cfg.lambda_max = v as _;
    }
    if let Some(v) = a.erase_ratio {
        cfg.erase_ratio = v as _;
    }
    cfg.frame_skip = !a.no_frame_skip;
    cfg.pixel_erase = !a.no_pixel_erase;
    cfg.validate().map_err(usage)?;
    let mut rng = RngStream::new(a.seed, 0);
    let (out, frames, pixels) = augment_clip_with_masks(&clip, &cfg, &mut rng)?;
    data::write_clip(&a.out, &out, label)?;
    let index: Vec<String> = out.frame_index().iter().map(|i| i.to_string()).collect();
    println!("frames: {} -> {}", clip.frames(), out.frames());
    println!("retained source frames: {}", index.join(" "));
    if let Some(m) = frames {
        let bits: String = m
            .bits()
            .iter()
            .map(|b| if *b { '1' } else { '0' })
            .collect();
        println!("frame mask: {bits}");
    }
    if let Some(m) = pixels {
        println!(
            "erased pixels: {} of {}",
            m.erased().len(),
            m.height() * m.width()
        );
    }
    Ok(ExitCode::SUCCESS)
}

fn read_data(dir: &Path) -> Result<Vec<LabeledClip>> {
    let clips = data::read_dataset(dir).with_context(|| format!("reading {}", dir.display()))?;
    if clips.is_empty() {
        bail!(UsageError(format!("{} holds no clips", dir.display())));
    }
    Ok(clips)
}

/// Shared by CSV output and human tables so both show the same numbers.
fn fmt_f(v: f64) -> String {
    format!("{v:.6}")
}

fn log_header(classes: usize) -> String {
    let mut cols = vec![
        "epoch".to_string(),
        "loss".into(),
        "mean_weight".into(),
        "train_macro_f1".into(),
    ];
    cols.extend(class_names(classes));
    cols.push("macro_f1".into());
    cols.join(",")
}

fn log_row(e: &EpochStats) -> String {
    let mut cols = vec![
        e.epoch.to_string(),
        fmt_f(e.mean_loss),
        fmt_f(e.mean_weight),
        fmt_f(e.train_macro_f1),
    ];
    cols.extend(e.val_per_class_f1.iter().map(|f| fmt_f(*f)));
    cols.push(fmt_f(e.val_macro_f1));
    cols.join(",")
}

fn train_cmd(a: TrainArgs) -> Result<ExitCode> {
    let cfg = train_config(a.config.as_deref(), &a.overrides)?;
    let clips = read_data(&a.data)?;
    if a.classes < 2 {
        bail!(UsageError("--classes must be at least 2".into()));
    }
    if let Some(c) = clips
        .iter()
        .find(|c| c.label.max(c.clean_label) >= a.classes)
    {
        bail!(UsageError(format!(
            "clip {} has a label outside 1..={}",
            c.id, a.classes
        )));
    }
    let mut log = match &a.log {
        Some(p) => {
            let mut f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            writeln!(f, "{}", log_header(a.classes))?;
            Some(f)
        }
        None => None,
    };
    let mut log_err = None;
    let outcome = train::train_model(&clips, a.classes, &cfg, |e| {
        eprintln!(
            "epoch {:>3}  loss {:.4}  w* {:.3}  train F1 {:.4}  val F1 {:.4}  ({:.2}s)",
            e.epoch, e.mean_loss, e.mean_weight, e.train_macro_f1, e.val_macro_f1, e.wall_secs
        );
        if let Some(f) = log.as_mut() {
            if let Err(err) = writeln!(f, "{}", log_row(e)) {
                log_err.get_or_insert(err);
            }
        }
    })?;
    if let Some(err) = log_err {
        return Err(err).context("writing training log");
    }
    checkpoint::save(&a.out, &outcome.params)
        .with_context(|| format!("writing {}", a.out.display()))?;
    if let Some(last) = outcome.history.last() {
        println!("final val macro-F1 {}", fmt_f(last.val_macro_f1));
    }
    println!("checkpoint written to {}", a.out.display());
    Ok(ExitCode::SUCCESS)
}

fn print_table(
    out: &mut impl Write,
    classes: usize,
    rows: &[(String, Vec<f64>, f64)],
) -> io::Result<()> {
    let names = class_names(classes);
    let label_w = rows.iter().map(|r| r.0.len()).max().unwrap_or(0).max(6);
    write!(out, "{:<label_w$}", "")?;
    for n in &names {
        write!(out, " {:>9}", n)?;
    }
    writeln!(out, " {:>9}", "Avg.")?;
    for (label, per_class, macro_f1) in rows {
        write!(out, "{:<label_w$}", label)?;
        for f in per_class {
            write!(out, " {:>9}", fmt_f(*f))?;
        }
        writeln!(out, " {:>9}", fmt_f(*macro_f1))?;
    }
    Ok(())
}

fn eval(a: EvalArgs) -> Result<ExitCode> {
    let params =
        checkpoint::load(&a.ckpt).with_context(|| format!("reading {}", a.ckpt.display()))?;
    let clips = read_data(&a.data)?;
    let classes = params.arch().classes;
    let (_, val_idx) = data::train_val_split(clips.len());
    let val: Vec<&LabeledClip> = val_idx.iter().map(|&i| &clips[i]).collect();
    let counts = train::evaluate(&val, &params, !a.noisy, a.per_frame)?;
    let per_class = counts.per_class_f1();
    let macro_f1 = counts.macro_f1();

    let mut stdout = io::stdout().lock();
    let mut header = class_names(classes);
    header.push("macro_f1".into());
    writeln!(stdout, "{}", header.join(","))?;
    let mut row: Vec<String> = per_class.iter().map(|f| fmt_f(*f)).collect();
    row.push(fmt_f(macro_f1));
    writeln!(stdout, "{}", row.join(","))?;
    writeln!(stdout)?;
    print_table(&mut stdout, classes, &[("F1".into(), per_class, macro_f1)])?;
    Ok(ExitCode::SUCCESS)
}

fn gradcheck(a: GradcheckArgs) -> Result<ExitCode> {
    let (params, clip, label) = train::gradcheck_problem(a.seed)?;
    let naw = NawParams::default_for(params.arch().classes)?;
    let opts = GradCheckOptions {
        step: a.step as _,
        ..GradCheckOptions::default()
    };
    let mut pass = true;
    for (name, mode) in [("ce", None), ("naw", Some(&naw))] {
        let r = train::check_gradients_with(&params, &clip, label, mode, &opts)?;
        let ok = r.max_rel_error <= a.tolerance;
        pass &= ok;
        println!(
            "{name:<4} max relative error {:.3e} over {} coordinates (worst: {})  {}",
            r.max_rel_error,
            r.coords_checked,
            r.worst_group,
            if ok { "PASS" } else { "FAIL" }
        );
    }
    Ok(if pass {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn ablate(a: AblateArgs) -> Result<ExitCode> {
    let gen = gen_config(a.data_config.as_deref(), &GenOverrides::default())?;
    let cfg = train_config(a.train_config.as_deref(), &a.overrides)?;
    if a.seeds == 0 {
        bail!(UsageError("--seeds must be at least 1".into()));
    }
    let seeds: Vec<u64> = (0..a.seeds).collect();
    let rows = train::run_ablation(&gen, &cfg, &seeds, |v, s, e| {
        if e.epoch == cfg.epochs {
            eprintln!(
                "seed {s} {:<8} val macro-F1 {:.4}",
                v.name(),
                e.val_macro_f1
            );
        }
    })?;
    let table: Vec<(String, Vec<f64>, f64)> = rows
        .iter()
        .map(|r| {
            (
                r.variant.name().to_string(),
                r.per_class_f1.clone(),
                r.macro_f1,
            )
        })
        .collect();
    print_table(&mut io::stdout().lock(), gen.classes, &table)?;
    if let Some(p) = &a.out {
        let mut f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
        let mut header = vec!["variant".to_string()];
        header.extend(class_names(gen.classes));
        header.push("macro_f1".into());
        writeln!(f, "{}", header.join(","))?;
        for (name, per_class, macro_f1) in &table {
            let mut cols = vec![name.clone()];
            cols.extend(per_class.iter().map(|v| fmt_f(*v)));
            cols.push(fmt_f(*macro_f1));
            writeln!(f, "{}", cols.join(","))?;
        }
    }
    Ok(ExitCode::SUCCESS)
}
