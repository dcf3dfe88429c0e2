//! Browser bindings: augmentation preview, a noise-aware weight heatmap over
//! the three-class probability simplex, and CE vs weighted-CE loss curves.
//!
//! The `*_impl` functions hold the logic and run natively; the exported
//! wrappers only convert types.

use vnaw_core::augment::{augment_clip_with_masks, AugmentConfig, ClipTensor};
use vnaw_core::data::{render_clip, GenConfig};
use vnaw_core::loss::{cross_entropy, naw_weight, KernelMean, NawParams};
use vnaw_core::model::ProbVector;
use vnaw_core::tensors::{Real, RngStream};
use wasm_bindgen::prelude::*;

/// Original and augmented frames of one synthetic clip, laid out as RGBA
/// strips (frames side by side).
#[wasm_bindgen]
pub struct AugmentPreview {
    frames: usize,
    size: usize,
    original: Vec<u8>,
    augmented: Vec<u8>,
    retained: Vec<u32>,
    erased: u32,
}

#[wasm_bindgen]
impl AugmentPreview {
    #[wasm_bindgen(getter)]
    pub fn frames(&self) -> usize {
        self.frames
    }

    /// Frame side in pixels.
    #[wasm_bindgen(getter)]
    pub fn size(&self) -> usize {
        self.size
    }

    /// `size × (frames · size)` RGBA strip of the input clip.
    pub fn original(&self) -> Vec<u8> {
        self.original.clone()
    }

    /// Same layout; dropped frames are shown in dark red and erased pixels
    /// in blue.
    pub fn augmented(&self) -> Vec<u8> {
        self.augmented.clone()
    }

    /// Source indices of the frames that survived skipping.
    pub fn retained(&self) -> Vec<u32> {
        self.retained.clone()
    }

    #[wasm_bindgen(getter)]
    pub fn erased(&self) -> u32 {
        self.erased
    }
}

const DROPPED: [u8; 4] = [90, 20, 20, 255];
const ERASED: [u8; 4] = [40, 90, 220, 255];

fn grey(v: Real) -> [u8; 4] {
    let g = (v.clamp(0.0, 1.0) * 255.0).round() as u8;
    [g, g, g, 255]
}

fn put(
    strip: &mut [u8],
    frames: usize,
    size: usize,
    frame: usize,
    y: usize,
    x: usize,
    px: [u8; 4],
) {
    let row_len = frames * size;
    let at = 4 * (y * row_len + frame * size + x);
    strip[at..at + 4].copy_from_slice(&px);
}

pub fn augment_preview_impl(
    class: usize,
    seed: u64,
    lambda_min: f64,
    lambda_max: f64,
    erase_ratio: f64,
) -> vnaw_core::Result<AugmentPreview> {
    let gen = GenConfig {
        classes: 8,
        frames: 8,
        height: 16,
        width: 16,
        seed,
        ..GenConfig::default()
    };
    let clip: ClipTensor = render_clip(&gen, class, &mut RngStream::new(seed, class as u64))?;
    let cfg = AugmentConfig {
        lambda_min: lambda_min as Real,
        lambda_max: lambda_max as Real,
        erase_ratio: erase_ratio as Real,
        frame_skip: true,
        pixel_erase: true,
    };
    let (out, frame_mask, pixel_mask) =
        augment_clip_with_masks(&clip, &cfg, &mut RngStream::new(seed, 0xa0))?;
    let (frames, size) = (clip.frames(), clip.height());
    let mut original = vec![0u8; 4 * frames * size * size];
    let mut augmented = original.clone();
    for p in 0..frames {
        for y in 0..size {
            for x in 0..size {
                put(
                    &mut original,
                    frames,
                    size,
                    p,
                    y,
                    x,
                    grey(clip.value(p, 0, y, x)),
                );
            }
        }
    }
    let keep = pixel_mask.as_ref().map(|m| m.keep().to_vec());
    let mut kept = 0;
    for p in 0..frames {
        let survived = frame_mask.as_ref().is_none_or(|m| m.bits()[p]);
        for y in 0..size {
            for x in 0..size {
                let px = if !survived {
                    DROPPED
                } else if keep.as_ref().is_some_and(|k| !k[y * size + x]) {
                    ERASED
                } else {
                    grey(out.value(kept, 0, y, x))
                };
                put(&mut augmented, frames, size, p, y, x, px);
            }
        }
        if survived {
            kept += 1;
        }
    }
    Ok(AugmentPreview {
        frames,
        size,
        original,
        augmented,
        retained: out.frame_index().iter().map(|&i| i as u32).collect(),
        erased: pixel_mask.map_or(0, |m| m.erased().len() as u32),
    })
}

/// Synthesises a clip of `class` (0..8) and augments it.
#[wasm_bindgen]
pub fn augment_preview(
    class: usize,
    seed: u64,
    lambda_min: f64,
    lambda_max: f64,
    erase_ratio: f64,
) -> Result<AugmentPreview, JsError> {
    augment_preview_impl(class, seed, lambda_min, lambda_max, erase_ratio)
        .map_err(|e| JsError::new(&e.to_string()))
}

fn naw_params(classes: usize, sigma: f64, cap: f64) -> vnaw_core::Result<NawParams> {
    let cap = (cap > 0.0).then_some(cap as Real);
    NawParams::new(classes, KernelMean::Uniform, sigma as Real, cap)
}

/// Weights over the 3-class simplex drawn as an equilateral triangle in a
/// `size × size` grid (row-major, top row first). Cells outside the
/// triangle are NaN. Vertex order: class 1 bottom-left, class 2
/// bottom-right, class 3 top.
pub fn weight_heatmap_impl(size: usize, sigma: f64, cap: f64) -> vnaw_core::Result<Vec<f64>> {
    let naw = naw_params(3, sigma, cap)?;
    let h = 3f64.sqrt() / 2.0;
    let mut out = Vec::with_capacity(size * size);
    for row in 0..size {
        for col in 0..size {
            let x = (col as f64 + 0.5) / size as f64;
            let y = h * (1.0 - (row as f64 + 0.5) / size as f64);
            let p3 = y / h;
            let p2 = x - 0.5 * p3;
            let p1 = 1.0 - p2 - p3;
            if p1 < 0.0 || p2 < 0.0 || p3 < 0.0 {
                out.push(f64::NAN);
                continue;
            }
            let total = p1 + p2 + p3;
            let p = ProbVector::new([p1, p2, p3].iter().map(|v| (v / total) as Real).collect())?;
            out.push(naw_weight(&p, &naw)? as f64);
        }
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn weight_heatmap(size: usize, sigma: f64, cap: f64) -> Result<Vec<f64>, JsError> {
    weight_heatmap_impl(size, sigma, cap).map_err(|e| JsError::new(&e.to_string()))
}

/// Along `p(t) = (1 − t)·e₁ + t·u` for `t` in `[0, 1]`, with true class 1:
/// `[t, CE, w*, (1 + w*)·CE]` per step, flattened.
pub fn loss_curve_impl(
    classes: usize,
    sigma: f64,
    cap: f64,
    steps: usize,
) -> vnaw_core::Result<Vec<f64>> {
    let naw = naw_params(classes, sigma, cap)?;
    let steps = steps.max(2);
    let uniform = 1.0 / classes as f64;
    let mut out = Vec::with_capacity(4 * steps);
    for i in 0..steps {
        let t = i as f64 / (steps - 1) as f64;
        let probs: Vec<Real> = (0..classes)
            .map(|k| {
                let one_hot = if k == 0 { 1.0 } else { 0.0 };
                ((1.0 - t) * one_hot + t * uniform) as Real
            })
            .collect();
        let p = ProbVector::new(probs)?;
        let ce = cross_entropy(&p, 0)? as f64;
        let w = naw_weight(&p, &naw)? as f64;
        out.extend_from_slice(&[t, ce, w, (1.0 + w) * ce]);
    }
    Ok(out)
}

#[wasm_bindgen]
pub fn loss_curve(classes: usize, sigma: f64, cap: f64, steps: usize) -> Result<Vec<f64>, JsError> {
    loss_curve_impl(classes, sigma, cap, steps).map_err(|e| JsError::new(&e.to_string()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn preview_layout() {
        let p = augment_preview_impl(2, 5, 0.2, 0.4, 0.2).unwrap();
        assert_eq!(p.original.len(), 4 * 8 * 16 * 16);
        assert_eq!(p.augmented.len(), p.original.len());
        assert_eq!(p.erased, 51);
        assert!(!p.retained.is_empty());
        assert!(p.retained.windows(2).all(|w| w[0] < w[1]));
        let dropped = p.augmented.chunks(4).filter(|c| *c == DROPPED).count();
        assert_eq!(dropped, (8 - p.retained.len()) * 16 * 16);
    }

    #[test]
    fn preview_rejects_bad_class() {
        assert!(augment_preview_impl(8, 0, 0.2, 0.4, 0.2).is_err());
        assert!(augment_preview_impl(0, 0, 0.5, 0.4, 0.2).is_err());
    }

    #[test]
    fn heatmap_peaks_at_centre() {
        let n = 61;
        let map = weight_heatmap_impl(n, 0.2, 0.0).unwrap();
        let max = map
            .iter()
            .copied()
            .filter(|v| v.is_finite())
            .fold(0.0, f64::max);
        let c = 1.0 / (2.0 * std::f64::consts::PI * 0.2f64.powi(3));
        assert!(max <= c * (1.0 + 1e-12) && max > 0.9 * c);
        assert!(map[0].is_nan());
        assert!(map.iter().any(|v| v.is_finite()));
    }

    #[test]
    fn curve_endpoints() {
        let c = loss_curve_impl(4, 0.5, 0.0, 11).unwrap();
        assert_eq!(c.len(), 44);
        // t = 0: one-hot on the true class
        assert_eq!(&c[..2], &[0.0, 0.0]);
        let last = &c[40..];
        assert_eq!(last[0], 1.0);
        assert!((last[1] - 4f64.ln()).abs() < 1e-12);
        let naw = naw_params(4, 0.5, 0.0).unwrap();
        assert!((last[2] - naw.norm_const() as f64).abs() < 1e-9);
        assert!((last[3] - (1.0 + last[2]) * last[1]).abs() < 1e-9);
    }

    #[test]
    fn cap_limits_weights() {
        let map = weight_heatmap_impl(21, 0.2, 3.0).unwrap();
        assert!(map.iter().filter(|v| v.is_finite()).all(|v| *v <= 3.0));
    }
}
