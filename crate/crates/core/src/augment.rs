//! Frame skipping and in-frame pixel erasing for video clips.
//!
//! Frame skipping keeps each frame independently with probability `1 - λ`.
//! Pixel erasing samples one set of `floor(ratio · H · W)` positions and
//! zeroes those positions, across every channel, in every frame of the
//! clip. Both transforms draw all randomness from the [`RngStream`] they
//! are handed, so the output is a pure function of `(clip, config, stream)`.

use rand::seq::index;

use crate::error::{Error, Result};
use crate::tensors::{Real, RngStream};

/// `P × C × H × W` pixel intensities in `[0, 1]`.
///
/// `frame_index` records, for every stored frame, its position in the
/// original clip; skipping frames keeps these so positional encodings stay
/// faithful to the source timeline.
#[derive(Clone, Debug, PartialEq)]
pub struct ClipTensor {
    frames: usize,
    channels: usize,
    height: usize,
    width: usize,
    data: Vec<Real>,
    frame_index: Vec<usize>,
}

impl ClipTensor {
    pub fn new(
        frames: usize,
        channels: usize,
        height: usize,
        width: usize,
        data: Vec<Real>,
    ) -> Result<Self> {
        if frames == 0 {
            return Err(Error::EmptyClip);
        }
        if channels == 0 || height == 0 || width == 0 {
            return Err(Error::config("clip extents must be positive"));
        }
        let len = frames
            .checked_mul(channels)
            .and_then(|v| v.checked_mul(height))
            .and_then(|v| v.checked_mul(width))
            .ok_or(Error::DimensionOverflow)?;
        if data.len() != len {
            return Err(Error::ShapeMismatch {
                op: "ClipTensor::new",
                expected: vec![frames, channels, height, width],
                got: vec![data.len()],
            });
        }
        if let Some(v) = data.iter().find(|v| !(0.0..=1.0).contains(*v)) {
            return Err(Error::config(format!("pixel value {v} outside [0, 1]")));
        }
        Ok(Self {
            frames,
            channels,
            height,
            width,
            data,
            frame_index: (0..frames).collect(),
        })
    }

    pub fn zeros(frames: usize, channels: usize, height: usize, width: usize) -> Result<Self> {
        Self::new(
            frames,
            channels,
            height,
            width,
            vec![0.0; frames * channels * height * width],
        )
    }

    pub fn frames(&self) -> usize {
        self.frames
    }

    pub fn channels(&self) -> usize {
        self.channels
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    /// `C · H · W`.
    pub fn frame_len(&self) -> usize {
        self.channels * self.height * self.width
    }

    pub fn data(&self) -> &[Real] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [Real] {
        &mut self.data
    }

    pub fn frame(&self, p: usize) -> &[Real] {
        let n = self.frame_len();
        &self.data[p * n..(p + 1) * n]
    }

    pub fn frame_index(&self) -> &[usize] {
        &self.frame_index
    }

    /// Replaces the recorded source positions.
    pub fn with_frame_index(mut self, index: Vec<usize>) -> Result<Self> {
        if index.len() != self.frames {
            return Err(Error::ShapeMismatch {
                op: "with_frame_index",
                expected: vec![self.frames],
                got: vec![index.len()],
            });
        }
        self.frame_index = index;
        Ok(self)
    }

    pub fn value(&self, p: usize, c: usize, y: usize, x: usize) -> Real {
        self.data[((p * self.channels + c) * self.height + y) * self.width + x]
    }

    fn select_frames(&self, keep: &[usize]) -> ClipTensor {
        let n = self.frame_len();
        let mut data = Vec::with_capacity(keep.len() * n);
        for &p in keep {
            data.extend_from_slice(self.frame(p));
        }
        ClipTensor {
            frames: keep.len(),
            channels: self.channels,
            height: self.height,
            width: self.width,
            data,
            frame_index: keep.iter().map(|&p| self.frame_index[p]).collect(),
        }
    }
}

/// Per-frame retain (`true`) / drop (`false`) decisions.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct FrameMask {
    bits: Vec<bool>,
}

impl FrameMask {
    pub fn bits(&self) -> &[bool] {
        &self.bits
    }

    pub fn retained(&self) -> usize {
        self.bits.iter().filter(|b| **b).count()
    }
}

/// The erased pixel set Ω and its complement indicator.
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct PixelMask {
    height: usize,
    width: usize,
    erased: Vec<(usize, usize)>,
    keep: Vec<bool>,
}

impl PixelMask {
    /// Erased `(row, col)` positions in row-major order.
    pub fn erased(&self) -> &[(usize, usize)] {
        &self.erased
    }

    /// `𝟙_Ω`: `false` on erased positions.
    pub fn keep(&self) -> &[bool] {
        &self.keep
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AugmentConfig {
    pub lambda_min: Real,
    pub lambda_max: Real,
    pub erase_ratio: Real,
    pub frame_skip: bool,
    pub pixel_erase: bool,
}

impl Default for AugmentConfig {
    fn default() -> Self {
        Self {
            lambda_min: 0.2,
            lambda_max: 0.4,
            erase_ratio: 0.2,
            frame_skip: true,
            pixel_erase: true,
        }
    }
}

impl AugmentConfig {
    pub fn disabled() -> Self {
        Self {
            frame_skip: false,
            pixel_erase: false,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        check_fraction("lambda_min", self.lambda_min)?;
        check_fraction("lambda_max", self.lambda_max)?;
        check_fraction("erase_ratio", self.erase_ratio)?;
        if self.lambda_min > self.lambda_max {
            return Err(Error::config(format!(
                "lambda range is empty: {} > {}",
                self.lambda_min, self.lambda_max
            )));
        }
        Ok(())
    }
}

fn check_fraction(name: &str, v: Real) -> Result<()> {
    if !(0.0..1.0).contains(&v) {
        return Err(Error::config(format!("{name} must lie in [0, 1), got {v}")));
    }
    Ok(())
}

/// Number of positions erased for an `height × width` frame.
pub fn erase_count(ratio: Real, height: usize, width: usize) -> usize {
    (ratio as f64 * (height * width) as f64).floor() as usize
}

/// Drops each frame with probability `lambda`.
///
/// If every frame is dropped, one uniformly chosen frame is kept so the
/// clip never becomes empty.
pub fn frame_skip(
    clip: &ClipTensor,
    lambda: Real,
    rng: &mut RngStream,
) -> Result<(ClipTensor, FrameMask)> {
    check_fraction("lambda", lambda)?;
    let mut bits: Vec<bool> = (0..clip.frames())
        .map(|_| rng.uniform() >= lambda)
        .collect();
    if !bits.iter().any(|b| *b) {
        bits[rng.below(clip.frames())] = true;
    }
    let keep: Vec<usize> = bits
        .iter()
        .enumerate()
        .filter_map(|(p, b)| b.then_some(p))
        .collect();
    Ok((clip.select_frames(&keep), FrameMask { bits }))
}

/// Zeroes one shared random pixel set in every frame and channel.
pub fn pixel_erase(
    clip: &ClipTensor,
    ratio: Real,
    rng: &mut RngStream,
) -> Result<(ClipTensor, PixelMask)> {
    check_fraction("erase_ratio", ratio)?;
    let (h, w) = (clip.height(), clip.width());
    let n = erase_count(ratio, h, w);
    let mut positions = index::sample(rng, h * w, n).into_vec();
    positions.sort_unstable();

    let mut keep = vec![true; h * w];
    for &pos in &positions {
        keep[pos] = false;
    }
    let mut out = clip.clone();
    let plane = h * w;
    for chunk in out.data_mut().chunks_mut(plane) {
        for &pos in &positions {
            chunk[pos] = 0.0;
        }
    }
    let mask = PixelMask {
        height: h,
        width: w,
        erased: positions.iter().map(|&p| (p / w, p % w)).collect(),
        keep,
    };
    Ok((out, mask))
}

/// Full augmentation: draws `λ` from the configured range, skips frames,
/// then erases pixels on the surviving frames.
pub fn augment_clip(
    clip: &ClipTensor,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<ClipTensor> {
    Ok(augment_clip_with_masks(clip, cfg, rng)?.0)
}

/// Like [`augment_clip`] but also returns the masks that were applied.
pub fn augment_clip_with_masks(
    clip: &ClipTensor,
    cfg: &AugmentConfig,
    rng: &mut RngStream,
) -> Result<(ClipTensor, Option<FrameMask>, Option<PixelMask>)> {
    cfg.validate()?;
    let mut out = clip.clone();
    let mut frame_mask = None;
    let mut pixel_mask = None;
    if cfg.frame_skip {
        let lambda = cfg.lambda_min + (cfg.lambda_max - cfg.lambda_min) * rng.uniform();
        let (skipped, mask) = frame_skip(&out, lambda, rng)?;
        out = skipped;
        frame_mask = Some(mask);
    }
    if cfg.pixel_erase {
        let (erased, mask) = pixel_erase(&out, cfg.erase_ratio, rng)?;
        out = erased;
        pixel_mask = Some(mask);
    }
    Ok((out, frame_mask, pixel_mask))
}
