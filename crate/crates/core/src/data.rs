//! Synthetic labelled clips, symmetric label noise, and the on-disk clip
//! and manifest formats.
//!
//! Clip file layout (little-endian):
//!
//! ```text
//! "VCLP" | u16 version = 1 | u32 P | u32 C | u32 H | u32 W | u16 label (1..=K)
//! | P·C·H·W × f32 pixel values, row-major
//! ```
//!
//! A dataset directory holds `manifest.csv` (`clip_id,path,label,clean_label`,
//! labels one-based, paths relative to the directory) and one clip file per
//! row.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use crate::augment::ClipTensor;
use crate::error::{Error, Result};
use crate::tensors::{Real, RngStream};

pub const CLIP_MAGIC: &[u8; 4] = b"VCLP";
pub const CLIP_VERSION: u16 = 1;
pub const MANIFEST_FILE: &str = "manifest.csv";
const HEADER_LEN: usize = 4 + 2 + 4 * 4 + 2;

/// A clip with its observed (possibly noisy) label and the label it was
/// generated with. Labels are zero-based in memory.
#[derive(Clone, Debug, PartialEq)]
pub struct LabeledClip {
    pub id: String,
    pub clip: ClipTensor,
    pub label: usize,
    pub clean_label: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GenConfig {
    pub classes: usize,
    pub clips: usize,
    pub frames: usize,
    pub channels: usize,
    pub height: usize,
    pub width: usize,
    /// Class `k` has prior weight `imbalance^(-k)`.
    pub imbalance: Real,
    pub label_noise: Real,
    /// Blob amplitude divided by per-pixel noise standard deviation.
    pub snr: Real,
    pub seed: u64,
}

impl Default for GenConfig {
    fn default() -> Self {
        Self {
            classes: 8,
            clips: 1600,
            frames: 16,
            channels: 1,
            height: 16,
            width: 16,
            imbalance: 4.0,
            label_noise: 0.2,
            snr: 0.75,
            seed: 0,
        }
    }
}

impl GenConfig {
    pub fn validate(&self) -> Result<()> {
        if [
            self.clips,
            self.frames,
            self.channels,
            self.height,
            self.width,
        ]
        .contains(&0)
        {
            return Err(Error::config("dataset extents must be positive"));
        }
        if self.classes < 2 {
            return Err(Error::config("at least two classes required"));
        }
        if !(self.imbalance >= 1.0 && self.imbalance.is_finite()) {
            return Err(Error::config("imbalance ratio must be >= 1"));
        }
        if !(0.0..1.0).contains(&self.label_noise) {
            return Err(Error::config("label noise must lie in [0, 1)"));
        }
        if !(self.snr > 0.0 && self.snr.is_finite()) {
            return Err(Error::config("snr must be positive"));
        }
        Ok(())
    }

    /// Normalised class prior.
    pub fn class_priors(&self) -> Vec<Real> {
        let raw: Vec<Real> = (0..self.classes)
            .map(|k| self.imbalance.powi(-(k as i32)))
            .collect();
        let total: Real = raw.iter().sum();
        raw.into_iter().map(|w| w / total).collect()
    }
}

const BACKGROUND: Real = 0.2;
const AMPLITUDE: Real = 0.6;

/// Renders one clip of class `class`: a Gaussian blob drifting outward from
/// the centre, with class-dependent direction and ring frequency, plus
/// pixel noise.
pub fn render_clip(cfg: &GenConfig, class: usize, rng: &mut RngStream) -> Result<ClipTensor> {
    if class >= cfg.classes {
        return Err(Error::ClassOutOfRange {
            class,
            classes: cfg.classes,
        });
    }
    let (p, c, h, w) = (cfg.frames, cfg.channels, cfg.height, cfg.width);
    let side = h.min(w) as Real;
    let angle = 2.0 * std::f64::consts::PI as Real * class as Real / cfg.classes as Real;
    let (dir_y, dir_x) = (angle.sin(), angle.cos());
    let travel = 0.45 * side;
    let width = 0.12 * side;
    let ring = (class % 3) as Real * 0.6 / width.max(1.0);
    let noise_std = AMPLITUDE / cfg.snr;

    let jitter = 0.03 * side;
    let cy0 = 0.5 * (h as Real - 1.0) + jitter * gaussian(rng);
    let cx0 = 0.5 * (w as Real - 1.0) + jitter * gaussian(rng);
    let gain = 1.0 + 0.1 * gaussian(rng);

    let mut data = Vec::with_capacity(p * c * h * w);
    for t in 0..p {
        let progress = if p > 1 {
            t as Real / (p - 1) as Real
        } else {
            0.5
        };
        let cy = cy0 + travel * progress * dir_y;
        let cx = cx0 + travel * progress * dir_x;
        for _ in 0..c {
            for y in 0..h {
                for x in 0..w {
                    let dy = y as Real - cy;
                    let dx = x as Real - cx;
                    let r2 = dy * dy + dx * dx;
                    let blob = (-r2 / (2.0 * width * width)).exp()
                        * (0.5 + 0.5 * (ring * r2.sqrt()).cos());
                    let v = BACKGROUND + AMPLITUDE * gain * blob + noise_std * gaussian(rng);
                    // Stored as f32 on disk; keep the in-memory value identical.
                    data.push(v.clamp(0.0, 1.0) as f32 as Real);
                }
            }
        }
    }
    ClipTensor::new(p, c, h, w, data)
}

fn gaussian(rng: &mut RngStream) -> Real {
    use rand_distr::{Distribution, StandardNormal};
    StandardNormal.sample(rng)
}

fn sample_class(priors: &[Real], rng: &mut RngStream) -> usize {
    let u = rng.uniform();
    let mut acc = 0.0;
    for (k, p) in priors.iter().enumerate() {
        acc += p;
        if u < acc {
            return k;
        }
    }
    priors.len() - 1
}

const CLASS_TAG: u64 = 0x0063_6c61_7373;
const NOISE_TAG: u64 = 0x006e_6f69_7365;

/// Deterministic synthetic dataset. Clip `i` draws from its own stream, so
/// any clip can be regenerated in isolation and generation parallelises.
pub fn generate_dataset(cfg: &GenConfig) -> Result<Vec<LabeledClip>> {
    cfg.validate()?;
    let priors = cfg.class_priors();
    let root = RngStream::new(cfg.seed, CLASS_TAG);
    let make = |i: usize| -> Result<LabeledClip> {
        let mut rng = root.derive(i as u64);
        let class = sample_class(&priors, &mut rng);
        Ok(LabeledClip {
            id: format!("clip_{i:05}"),
            clip: render_clip(cfg, class, &mut rng)?,
            label: class,
            clean_label: class,
        })
    };
    #[cfg(feature = "parallel")]
    let clips: Result<Vec<LabeledClip>> = {
        use rayon::prelude::*;
        (0..cfg.clips).into_par_iter().map(make).collect()
    };
    #[cfg(not(feature = "parallel"))]
    let clips: Result<Vec<LabeledClip>> = (0..cfg.clips).map(make).collect();
    let mut clips = clips?;
    flip_labels(
        &mut clips,
        cfg.classes,
        cfg.label_noise,
        &RngStream::new(cfg.seed, NOISE_TAG),
    )?;
    Ok(clips)
}

/// Replaces each clean label, with probability `rate`, by a uniform draw
/// over the other classes. Clip `i` uses child stream `i` of `rng`.
pub fn flip_labels(
    clips: &mut [LabeledClip],
    classes: usize,
    rate: Real,
    rng: &RngStream,
) -> Result<()> {
    if !(0.0..1.0).contains(&rate) {
        return Err(Error::config("label noise must lie in [0, 1)"));
    }
    for (i, clip) in clips.iter_mut().enumerate() {
        if clip.clean_label >= classes {
            return Err(Error::ClassOutOfRange {
                class: clip.clean_label,
                classes,
            });
        }
        let mut r = rng.derive(i as u64);
        clip.label = clip.clean_label;
        if r.uniform() < rate {
            let other = r.below(classes - 1);
            clip.label = if other >= clip.clean_label {
                other + 1
            } else {
                other
            };
        }
    }
    Ok(())
}

/// Deterministic 7:3 split by position: every index with `i % 10 >= 7`
/// goes to validation.
pub fn train_val_split(n: usize) -> (Vec<usize>, Vec<usize>) {
    (0..n).partition(|i| i % 10 < 7)
}

pub fn encode_clip(clip: &ClipTensor, label: usize) -> Result<Vec<u8>> {
    let dims = [clip.frames(), clip.channels(), clip.height(), clip.width()];
    let mut out = Vec::with_capacity(HEADER_LEN + clip.data().len() * 4);
    out.extend_from_slice(CLIP_MAGIC);
    out.extend_from_slice(&CLIP_VERSION.to_le_bytes());
    for d in dims {
        let d = u32::try_from(d).map_err(|_| Error::DimensionOverflow)?;
        out.extend_from_slice(&d.to_le_bytes());
    }
    let label = u16::try_from(label + 1).map_err(|_| Error::DimensionOverflow)?;
    out.extend_from_slice(&label.to_le_bytes());
    for v in clip.data() {
        out.extend_from_slice(&(*v as f32).to_le_bytes());
    }
    Ok(out)
}

/// Parses a clip file; returns the clip and its zero-based label.
pub fn decode_clip(bytes: &[u8]) -> Result<(ClipTensor, usize)> {
    if bytes.len() < 4 {
        return Err(if CLIP_MAGIC.starts_with(bytes) {
            Error::TruncatedPayload
        } else {
            Error::BadMagic
        });
    }
    if &bytes[..4] != CLIP_MAGIC {
        return Err(Error::BadMagic);
    }
    if bytes.len() < HEADER_LEN {
        return Err(Error::TruncatedPayload);
    }
    let u16_at = |o: usize| u16::from_le_bytes([bytes[o], bytes[o + 1]]);
    let u32_at = |o: usize| u32::from_le_bytes(bytes[o..o + 4].try_into().unwrap());
    let version = u16_at(4);
    if version != CLIP_VERSION {
        return Err(Error::UnsupportedVersion(version as u32));
    }
    let dims: Vec<usize> = (0..4).map(|i| u32_at(6 + 4 * i) as usize).collect();
    let label = u16_at(22);
    if dims.contains(&0) {
        return Err(Error::Malformed("zero extent".into()));
    }
    if label == 0 {
        return Err(Error::Malformed("labels are one-based".into()));
    }
    let payload = dims
        .iter()
        .try_fold(4usize, |acc, d| acc.checked_mul(*d))
        .ok_or(Error::DimensionOverflow)?;
    let body = &bytes[HEADER_LEN..];
    if body.len() < payload {
        return Err(Error::TruncatedPayload);
    }
    if body.len() > payload {
        return Err(Error::Malformed("trailing bytes after payload".into()));
    }
    let data = body
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()) as Real)
        .collect();
    let clip = ClipTensor::new(dims[0], dims[1], dims[2], dims[3], data)?;
    Ok((clip, label as usize - 1))
}

pub fn write_clip(path: &Path, clip: &ClipTensor, label: usize) -> Result<()> {
    let bytes = encode_clip(clip, label)?;
    let mut f = fs::File::create(path)?;
    f.write_all(&bytes)?;
    Ok(())
}

pub fn read_clip(path: &Path) -> Result<(ClipTensor, usize)> {
    let mut bytes = Vec::new();
    fs::File::open(path)?.read_to_end(&mut bytes)?;
    decode_clip(&bytes)
}

/// Writes every clip under `dir/clips/` and the manifest under `dir/`.
pub fn write_dataset(dir: &Path, clips: &[LabeledClip]) -> Result<()> {
    fs::create_dir_all(dir.join("clips"))?;
    let mut manifest = csv::Writer::from_path(dir.join(MANIFEST_FILE)).map_err(csv_err)?;
    manifest
        .write_record(["clip_id", "path", "label", "clean_label"])
        .map_err(csv_err)?;
    for c in clips {
        let rel = format!("clips/{}.vclp", c.id);
        write_clip(&dir.join(&rel), &c.clip, c.label)?;
        manifest
            .write_record([
                c.id.clone(),
                rel,
                (c.label + 1).to_string(),
                (c.clean_label + 1).to_string(),
            ])
            .map_err(csv_err)?;
    }
    manifest.flush()?;
    Ok(())
}

/// Loads a dataset directory in manifest order. A missing `clean_label`
/// column means the observed label is taken as clean.
pub fn read_dataset(dir: &Path) -> Result<Vec<LabeledClip>> {
    let mut reader = csv::Reader::from_path(dir.join(MANIFEST_FILE)).map_err(csv_err)?;
    let mut out = Vec::new();
    for record in reader.records() {
        let record = record.map_err(csv_err)?;
        if record.len() < 3 {
            return Err(Error::Malformed(
                "manifest rows need clip_id,path,label".into(),
            ));
        }
        let parse_label = |s: &str| -> Result<usize> {
            match s.trim().parse::<usize>() {
                Ok(l) if l >= 1 => Ok(l - 1),
                _ => Err(Error::Malformed(format!("bad label `{s}`"))),
            }
        };
        let label = parse_label(&record[2])?;
        let clean_label = match record.get(3) {
            Some(s) if !s.trim().is_empty() => parse_label(s)?,
            _ => label,
        };
        let (clip, file_label) = read_clip(&dir.join(&record[1]))?;
        if file_label != label {
            return Err(Error::Malformed(format!(
                "label mismatch for `{}`: manifest {} vs file {}",
                &record[0],
                label + 1,
                file_label + 1
            )));
        }
        out.push(LabeledClip {
            id: record[0].to_string(),
            clip,
            label,
            clean_label,
        });
    }
    if out.is_empty() {
        return Err(Error::Malformed("empty manifest".into()));
    }
    Ok(out)
}

fn csv_err(e: csv::Error) -> Error {
    Error::Malformed(e.to_string())
}
