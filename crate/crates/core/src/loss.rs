//! Cross-entropy, the Gaussian-kernel noise-aware weight, and their product.
//!
//! The weight is `w* = C · exp(-½ (p − μ)ᵀ Σ⁻¹ (p − μ))` with `Σ = σ² I`
//! and `C = 1 / (2π √det Σ) = 1 / (2π σᴷ)`. The combined loss is
//! `(1 + w*) · CE`. During backpropagation `w*` is a constant: the gradient
//! is `(1 + w*)` times the cross-entropy gradient.

use crate::error::{Error, Result};
use crate::model::ProbVector;
use crate::tensors::Real;

/// Probabilities are clamped to this floor before the logarithm.
pub const PROB_FLOOR: Real = 1e-12;

/// Kernel mean: the uniform vector or an explicit point.
#[derive(Clone, Debug, PartialEq)]
pub enum KernelMean {
    Uniform,
    Explicit(Vec<Real>),
}

#[derive(Clone, Debug, PartialEq)]
pub struct NawParams {
    mu: Vec<Real>,
    sigma: Real,
    norm_const: Real,
    weight_cap: Option<Real>,
}

impl NawParams {
    pub fn new(
        classes: usize,
        mean: KernelMean,
        sigma: Real,
        weight_cap: Option<Real>,
    ) -> Result<Self> {
        if classes < 2 {
            return Err(Error::config("at least two classes required"));
        }
        if !(sigma.is_finite() && sigma > 0.0) {
            return Err(Error::config(format!(
                "singular covariance: sigma must be positive, got {sigma}"
            )));
        }
        let mu = match mean {
            KernelMean::Uniform => vec![1.0 / classes as Real; classes],
            KernelMean::Explicit(v) => {
                if v.len() != classes || v.iter().any(|x| !x.is_finite()) {
                    return Err(Error::config(format!(
                        "kernel mean must hold {classes} finite values"
                    )));
                }
                v
            }
        };
        if let Some(cap) = weight_cap {
            if !(cap.is_finite() && cap >= 0.0) {
                return Err(Error::config("weight cap must be finite and non-negative"));
            }
        }
        // det Σ = σ^(2K), so √det Σ = σ^K.
        let norm_const = 1.0 / (2.0 * std::f64::consts::PI as Real * sigma.powi(classes as i32));
        if !(norm_const.is_finite() && norm_const > 0.0) {
            return Err(Error::config(format!(
                "normalising constant overflows for sigma {sigma} and {classes} classes"
            )));
        }
        Ok(Self {
            mu,
            sigma,
            norm_const,
            weight_cap,
        })
    }

    /// Uniform mean, `σ = 0.2`, no cap.
    pub fn default_for(classes: usize) -> Result<Self> {
        Self::new(classes, KernelMean::Uniform, 0.2, None)
    }

    pub fn mu(&self) -> &[Real] {
        &self.mu
    }

    pub fn sigma(&self) -> Real {
        self.sigma
    }

    /// The kernel's normalising constant `C`, its value at `p = μ`.
    pub fn norm_const(&self) -> Real {
        self.norm_const
    }

    pub fn weight_cap(&self) -> Option<Real> {
        self.weight_cap
    }

    /// Largest weight this configuration can produce.
    pub fn max_weight(&self) -> Real {
        match self.weight_cap {
            Some(cap) => cap.min(self.norm_const),
            None => self.norm_const,
        }
    }

    pub fn classes(&self) -> usize {
        self.mu.len()
    }

    /// `(p − μ)ᵀ Σ⁻¹ (p − μ)`. Terms are summed in sorted order, so
    /// permuting `p` (with a uniform `μ`) gives a bit-identical result.
    pub fn mahalanobis_sq(&self, p: &[Real]) -> Real {
        let mut terms: Vec<Real> = p
            .iter()
            .zip(&self.mu)
            .map(|(a, b)| (a - b) * (a - b))
            .collect();
        terms.sort_by(|a, b| a.total_cmp(b));
        terms.iter().sum::<Real>() / (self.sigma * self.sigma)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct LossOutput {
    pub value: Real,
    pub weight: Real,
    /// Gradient of `value` with respect to the clip probability vector.
    pub grad: Vec<Real>,
}

fn check_class(y: usize, classes: usize) -> Result<()> {
    if y >= classes {
        return Err(Error::ClassOutOfRange { class: y, classes });
    }
    Ok(())
}

/// `−log max(p_y, 1e-12)` for a zero-based class index `y`.
pub fn cross_entropy(p: &ProbVector, y: usize) -> Result<Real> {
    check_class(y, p.len())?;
    Ok(-p.as_slice()[y].max(PROB_FLOOR).ln())
}

/// Gradient of [`cross_entropy`] with respect to `p`.
pub fn cross_entropy_grad(p: &ProbVector, y: usize) -> Result<Vec<Real>> {
    check_class(y, p.len())?;
    let mut g = vec![0.0; p.len()];
    let py = p.as_slice()[y];
    if py > PROB_FLOOR {
        g[y] = -1.0 / py;
    }
    Ok(g)
}

/// Gaussian-kernel weight of a clip probability vector.
pub fn naw_weight(p: &ProbVector, naw: &NawParams) -> Result<Real> {
    if p.len() != naw.classes() {
        return Err(Error::ShapeMismatch {
            op: "naw_weight",
            expected: vec![naw.classes()],
            got: vec![p.len()],
        });
    }
    let w = naw.norm_const * (-0.5 * naw.mahalanobis_sq(p.as_slice())).exp();
    Ok(match naw.weight_cap {
        Some(cap) => w.min(cap),
        None => w,
    })
}

/// Plain cross-entropy packaged as a [`LossOutput`] with zero weight.
pub fn ce_loss(p: &ProbVector, y: usize) -> Result<LossOutput> {
    Ok(LossOutput {
        value: cross_entropy(p, y)?,
        weight: 0.0,
        grad: cross_entropy_grad(p, y)?,
    })
}

/// `(1 + w*) · CE`, with `w*` held constant in the gradient.
pub fn naw_ce_loss(p: &ProbVector, y: usize, naw: &NawParams) -> Result<LossOutput> {
    let weight = naw_weight(p, naw)?;
    let scale = 1.0 + weight;
    let mut grad = cross_entropy_grad(p, y)?;
    grad.iter_mut().for_each(|g| *g *= scale);
    Ok(LossOutput {
        value: scale * cross_entropy(p, y)?,
        weight,
        grad,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn pv(v: &[Real]) -> ProbVector {
        ProbVector::new(v.to_vec()).unwrap()
    }

    fn k2_naw() -> NawParams {
        NawParams::new(2, KernelMean::Uniform, 0.5, None).unwrap()
    }

    #[test]
    fn ce_examples() {
        assert_eq!(cross_entropy(&pv(&[1.0, 0.0]), 0).unwrap(), 0.0);
        let half = cross_entropy(&pv(&[0.5, 0.5]), 0).unwrap();
        assert!((half - std::f64::consts::LN_2 as Real).abs() < 1e-12);
        let clamped = cross_entropy(&pv(&[1.0 - 1e-20, 1e-20]), 1).unwrap();
        assert!((clamped - 27.631_021_115_928_547).abs() < 1e-9);
        assert!(clamped.is_finite());
    }

    #[test]
    fn ce_rejects_class_out_of_range() {
        assert!(matches!(
            cross_entropy(&pv(&[0.5, 0.5]), 2),
            Err(Error::ClassOutOfRange {
                class: 2,
                classes: 2
            })
        ));
    }

    #[test]
    fn weight_peaks_at_mean() {
        let naw = k2_naw();
        let w = naw_weight(&pv(&[0.5, 0.5]), &naw).unwrap();
        assert_eq!(w, naw.norm_const());
        // 1 / (2π · 0.25) = 2/π
        assert!((naw.norm_const() as f64 - std::f64::consts::FRAC_2_PI).abs() < 1e-12);
    }

    #[test]
    fn worked_k2_example() {
        // C · exp(−½ · (0.4² + 0.4²) / 0.25) = 0.63662 · exp(−0.64)
        let w = naw_weight(&pv(&[0.9, 0.1]), &k2_naw()).unwrap();
        assert!((w - 0.335_684_782_965_435_75).abs() < 1e-12, "{w}");
    }

    #[test]
    #[cfg(not(feature = "f32"))]
    fn norm_const_k8() {
        let naw = NawParams::default_for(8).unwrap();
        assert!((naw.norm_const() - 62_169.899_645_271_6).abs() < 1e-6);
    }

    #[test]
    fn weight_monotone_in_distance() {
        let naw = k2_naw();
        let near = naw_weight(&pv(&[0.6, 0.4]), &naw).unwrap();
        let far = naw_weight(&pv(&[0.8, 0.2]), &naw).unwrap();
        assert!(near > far);
    }

    #[test]
    fn singular_covariance_rejected() {
        assert!(matches!(
            NawParams::new(3, KernelMean::Uniform, 0.0, None),
            Err(Error::Config(_))
        ));
        assert!(NawParams::new(3, KernelMean::Explicit(vec![0.5, 0.5]), 0.2, None).is_err());
    }

    #[test]
    fn zero_cap_reduces_to_ce() {
        let naw = NawParams::new(2, KernelMean::Uniform, 0.5, Some(0.0)).unwrap();
        let p = pv(&[0.3, 0.7]);
        let out = naw_ce_loss(&p, 0, &naw).unwrap();
        assert_eq!(out.value, cross_entropy(&p, 0).unwrap());
        assert_eq!(out.grad, cross_entropy_grad(&p, 0).unwrap());
    }

    #[test]
    fn combined_k2_example() {
        let out = naw_ce_loss(&pv(&[0.5, 0.5]), 0, &k2_naw()).unwrap();
        // (1 + 0.6366198) · ln 2
        assert!(
            (out.value - 1.134_418_380_865_248_6).abs() < 1e-12,
            "{}",
            out.value
        );
    }

    #[test]
    fn batch_mean_is_mean_of_values() {
        let naw = NawParams::default_for(3).unwrap();
        let clips = [
            (pv(&[0.2, 0.5, 0.3]), 1),
            (pv(&[0.7, 0.2, 0.1]), 0),
            (pv(&[0.3, 0.3, 0.4]), 2),
        ];
        let values: Vec<Real> = clips
            .iter()
            .map(|(p, y)| naw_ce_loss(p, *y, &naw).unwrap().value)
            .collect();
        let mean = values.iter().sum::<Real>() / 3.0;
        let manual = (values[0] + values[1] + values[2]) / 3.0;
        assert!((mean - manual).abs() < 1e-12);
    }
}
