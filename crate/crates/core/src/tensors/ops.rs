//! Differentiable primitives with hand-written backward passes.
//!
//! Every forward function is paired with a backward function that takes
//! whatever the forward pass saved plus the upstream gradient, and returns
//! the gradient for each input. All rank-2 tensors are `[rows, cols]`.

use super::{Real, Tensor};
use crate::error::{Error, Result};

pub const LAYER_NORM_EPS: Real = 1e-5;

fn rank2(t: &Tensor, op: &'static str) -> Result<(usize, usize)> {
    match t.shape() {
        [r, c] => Ok((*r, *c)),
        other => Err(Error::ShapeMismatch {
            op,
            expected: vec![0, 0],
            got: other.to_vec(),
        }),
    }
}

/// `a · b` for `a: [m, k]`, `b: [k, n]`.
pub fn matmul(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = rank2(a, "matmul")?;
    let (k2, n) = rank2(b, "matmul")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul",
            expected: vec![k, n],
            got: vec![k2, n],
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    let (ad, bd) = (a.data(), b.data());
    let od = out.data_mut();
    for i in 0..m {
        let orow = &mut od[i * n..(i + 1) * n];
        for p in 0..k {
            let aip = ad[i * k + p];
            if aip == 0.0 {
                continue;
            }
            let brow = &bd[p * n..(p + 1) * n];
            for (o, bv) in orow.iter_mut().zip(brow) {
                *o += aip * bv;
            }
        }
    }
    Ok(out)
}

/// `a · bᵀ` for `a: [m, k]`, `b: [n, k]`.
pub fn matmul_nt(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (m, k) = rank2(a, "matmul_nt")?;
    let (n, k2) = rank2(b, "matmul_nt")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul_nt",
            expected: vec![n, k],
            got: vec![n, k2],
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    for i in 0..m {
        let arow = a.row(i);
        let orow = out.row_mut(i);
        for (j, o) in orow.iter_mut().enumerate() {
            *o = arow.iter().zip(b.row(j)).map(|(x, y)| x * y).sum();
        }
    }
    Ok(out)
}

/// `aᵀ · b` for `a: [k, m]`, `b: [k, n]`.
pub fn matmul_tn(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let (k, m) = rank2(a, "matmul_tn")?;
    let (k2, n) = rank2(b, "matmul_tn")?;
    if k != k2 {
        return Err(Error::ShapeMismatch {
            op: "matmul_tn",
            expected: vec![k, n],
            got: vec![k2, n],
        });
    }
    let mut out = Tensor::zeros(&[m, n]);
    let od = out.data_mut();
    for p in 0..k {
        let arow = a.row(p);
        let brow = b.row(p);
        for (i, &av) in arow.iter().enumerate() {
            if av == 0.0 {
                continue;
            }
            for (o, bv) in od[i * n..(i + 1) * n].iter_mut().zip(brow) {
                *o += av * bv;
            }
        }
    }
    Ok(out)
}

/// Gradients of `a · b` with respect to `a` and `b`.
pub fn matmul_backward(a: &Tensor, b: &Tensor, upstream: &Tensor) -> Result<(Tensor, Tensor)> {
    let (m, _) = rank2(a, "matmul_backward")?;
    let (_, n) = rank2(b, "matmul_backward")?;
    upstream.expect_shape(&[m, n], "matmul_backward")?;
    Ok((matmul_nt(upstream, b)?, matmul_tn(a, upstream)?))
}

/// Adds `bias: [n]` to every row of `x: [m, n]`.
pub fn add_bias(x: &Tensor, bias: &Tensor) -> Result<Tensor> {
    let (_, n) = rank2(x, "add_bias")?;
    bias.expect_shape(&[n], "add_bias")?;
    let mut out = x.clone();
    for r in 0..out.rows() {
        for (o, b) in out.row_mut(r).iter_mut().zip(bias.data()) {
            *o += b;
        }
    }
    Ok(out)
}

/// Gradient of `add_bias` with respect to the bias: column sums.
pub fn bias_backward(upstream: &Tensor) -> Result<Tensor> {
    let (m, n) = rank2(upstream, "bias_backward")?;
    let mut g = Tensor::zeros(&[n]);
    for r in 0..m {
        for (o, u) in g.data_mut().iter_mut().zip(upstream.row(r)) {
            *o += u;
        }
    }
    Ok(g)
}

pub struct LinearGrads {
    pub input: Tensor,
    pub weight: Tensor,
    pub bias: Tensor,
}

/// `x · w + b`.
pub fn linear(x: &Tensor, w: &Tensor, b: &Tensor) -> Result<Tensor> {
    add_bias(&matmul(x, w)?, b)
}

pub fn linear_backward(x: &Tensor, w: &Tensor, upstream: &Tensor) -> Result<LinearGrads> {
    let (input, weight) = matmul_backward(x, w, upstream)?;
    Ok(LinearGrads {
        input,
        weight,
        bias: bias_backward(upstream)?,
    })
}

/// Element-wise sum of two equally shaped tensors.
pub fn residual_add(a: &Tensor, b: &Tensor) -> Result<Tensor> {
    let mut out = a.clone();
    out.axpy(1.0, b)?;
    Ok(out)
}

/// A residual join routes the upstream gradient unchanged into both inputs.
pub fn residual_backward(upstream: &Tensor) -> (Tensor, Tensor) {
    (upstream.clone(), upstream.clone())
}

pub fn relu(x: &Tensor) -> Tensor {
    let mut out = x.clone();
    out.data_mut().iter_mut().for_each(|v| *v = v.max(0.0));
    out
}

/// Gradient of `relu` given its forward input.
pub fn relu_backward(x: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    x.same_shape(upstream, "relu_backward")?;
    let mut g = upstream.clone();
    for (gv, xv) in g.data_mut().iter_mut().zip(x.data()) {
        if *xv <= 0.0 {
            *gv = 0.0;
        }
    }
    Ok(g)
}

/// Numerically stable softmax of a logit vector.
pub fn softmax(logits: &[Real]) -> Result<Vec<Real>> {
    if logits.is_empty() || logits.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidLogits);
    }
    let max = logits.iter().copied().fold(Real::NEG_INFINITY, Real::max);
    let mut out: Vec<Real> = logits.iter().map(|v| (v - max).exp()).collect();
    let sum: Real = out.iter().sum();
    out.iter_mut().for_each(|v| *v /= sum);
    Ok(out)
}

/// Vector-Jacobian product of softmax: `p ⊙ (g − ⟨g, p⟩)`.
pub fn softmax_backward(probs: &[Real], upstream: &[Real]) -> Result<Vec<Real>> {
    if probs.len() != upstream.len() {
        return Err(Error::ShapeMismatch {
            op: "softmax_backward",
            expected: vec![probs.len()],
            got: vec![upstream.len()],
        });
    }
    let dot: Real = probs.iter().zip(upstream).map(|(p, g)| p * g).sum();
    Ok(probs
        .iter()
        .zip(upstream)
        .map(|(p, g)| p * (g - dot))
        .collect())
}

/// Row-wise softmax of a rank-2 tensor.
pub fn softmax_rows(x: &Tensor) -> Result<Tensor> {
    let (m, n) = rank2(x, "softmax_rows")?;
    let mut data = Vec::with_capacity(m * n);
    for r in 0..m {
        data.extend(softmax(x.row(r))?);
    }
    Tensor::from_vec(&[m, n], data)
}

/// Backward of `softmax_rows` given its forward output.
pub fn softmax_rows_backward(probs: &Tensor, upstream: &Tensor) -> Result<Tensor> {
    probs.same_shape(upstream, "softmax_rows_backward")?;
    let (m, n) = rank2(probs, "softmax_rows_backward")?;
    let mut data = Vec::with_capacity(m * n);
    for r in 0..m {
        data.extend(softmax_backward(probs.row(r), upstream.row(r))?);
    }
    Tensor::from_vec(&[m, n], data)
}

/// Saved state of a layer-norm forward pass.
#[derive(Clone, Debug)]
pub struct LayerNormCache {
    normalized: Tensor,
    inv_std: Vec<Real>,
}

pub struct LayerNormGrads {
    pub input: Tensor,
    pub gamma: Tensor,
    pub beta: Tensor,
}

/// Normalises each row to zero mean and unit variance, then applies
/// `gamma ⊙ x̂ + beta`.
pub fn layer_norm(x: &Tensor, gamma: &Tensor, beta: &Tensor) -> Result<(Tensor, LayerNormCache)> {
    let (m, n) = rank2(x, "layer_norm")?;
    gamma.expect_shape(&[n], "layer_norm")?;
    beta.expect_shape(&[n], "layer_norm")?;
    let mut normalized = Tensor::zeros(&[m, n]);
    let mut out = Tensor::zeros(&[m, n]);
    let mut inv_std = Vec::with_capacity(m);
    for r in 0..m {
        let row = x.row(r);
        let mean = row.iter().sum::<Real>() / n as Real;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<Real>() / n as Real;
        let inv = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        inv_std.push(inv);
        let nrow = normalized.row_mut(r);
        for (h, v) in nrow.iter_mut().zip(row) {
            *h = (v - mean) * inv;
        }
        let nrow = normalized.row(r);
        for (j, o) in out.row_mut(r).iter_mut().enumerate() {
            *o = gamma.data()[j] * nrow[j] + beta.data()[j];
        }
    }
    Ok((
        out,
        LayerNormCache {
            normalized,
            inv_std,
        },
    ))
}

pub fn layer_norm_backward(
    cache: &LayerNormCache,
    gamma: &Tensor,
    upstream: &Tensor,
) -> Result<LayerNormGrads> {
    cache
        .normalized
        .same_shape(upstream, "layer_norm_backward")?;
    let (m, n) = rank2(upstream, "layer_norm_backward")?;
    let mut input = Tensor::zeros(&[m, n]);
    let mut g_gamma = Tensor::zeros(&[n]);
    let mut g_beta = Tensor::zeros(&[n]);
    let mut dxhat = vec![0.0; n];
    for r in 0..m {
        let xhat = cache.normalized.row(r);
        let up = upstream.row(r);
        for j in 0..n {
            g_gamma.data_mut()[j] += up[j] * xhat[j];
            g_beta.data_mut()[j] += up[j];
            dxhat[j] = up[j] * gamma.data()[j];
        }
        let sum: Real = dxhat.iter().sum();
        let dot: Real = dxhat.iter().zip(xhat).map(|(d, h)| d * h).sum();
        let scale = cache.inv_std[r] / n as Real;
        for (j, o) in input.row_mut(r).iter_mut().enumerate() {
            *o = scale * (n as Real * dxhat[j] - sum - xhat[j] * dot);
        }
    }
    Ok(LayerNormGrads {
        input,
        gamma: g_gamma,
        beta: g_beta,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensors::RngStream;

    const LN2: Real = std::f64::consts::LN_2 as Real;

    #[test]
    fn softmax_uniform() {
        let p = softmax(&[0.0; 4]).unwrap();
        for v in p {
            assert!((v - 0.25).abs() < 1e-12);
        }
    }

    #[test]
    fn softmax_ln2() {
        let p = softmax(&[0.0, LN2]).unwrap();
        assert!((p[0] - 1.0 / 3.0).abs() < 1e-12);
        assert!((p[1] - 2.0 / 3.0).abs() < 1e-12);
    }

    #[test]
    fn softmax_large_logit_no_overflow() {
        let p = softmax(&[1000.0, 0.0]).unwrap();
        assert!(p.iter().all(|v| v.is_finite()));
        assert!((p[0] - 1.0).abs() < 1e-12);
        assert!(p[1] < 1e-300 || p[1] == 0.0);
    }

    #[test]
    fn softmax_rejects_non_finite() {
        assert!(matches!(
            softmax(&[0.0, Real::NAN]),
            Err(Error::InvalidLogits)
        ));
        assert!(matches!(
            softmax(&[Real::INFINITY]),
            Err(Error::InvalidLogits)
        ));
        assert!(matches!(softmax(&[]), Err(Error::InvalidLogits)));
    }

    #[test]
    fn softmax_backward_uniform_k2() {
        // Jacobian diag(p) - p pᵀ at p = [0.5, 0.5], applied to e_1.
        let g = softmax_backward(&[0.5, 0.5], &[1.0, 0.0]).unwrap();
        assert!((g[0] - 0.25).abs() < 1e-15);
        assert!((g[1] + 0.25).abs() < 1e-15);
    }

    #[test]
    fn identity_matmul_passes_gradient() {
        let mut eye = Tensor::zeros(&[3, 3]);
        for i in 0..3 {
            eye.data_mut()[i * 3 + i] = 1.0;
        }
        let x = Tensor::randn(&[2, 3], 1.0, &mut RngStream::new(0, 0));
        let up = Tensor::randn(&[2, 3], 1.0, &mut RngStream::new(0, 1));
        let (gx, _) = matmul_backward(&x, &eye, &up).unwrap();
        assert_eq!(gx, up);
    }

    #[test]
    fn matmul_shape_errors() {
        let a = Tensor::zeros(&[2, 3]);
        let b = Tensor::zeros(&[4, 2]);
        assert!(matches!(matmul(&a, &b), Err(Error::ShapeMismatch { .. })));
        let good = Tensor::zeros(&[3, 2]);
        let bad_up = Tensor::zeros(&[3, 3]);
        assert!(matmul_backward(&a, &good, &bad_up).is_err());
    }

    #[test]
    fn layer_norm_constant_row_outputs_beta() {
        let x = Tensor::filled(&[1, 5], 3.7);
        let gamma = Tensor::randn(&[5], 1.0, &mut RngStream::new(1, 0));
        let beta = Tensor::randn(&[5], 1.0, &mut RngStream::new(1, 1));
        let (y, cache) = layer_norm(&x, &gamma, &beta).unwrap();
        assert_eq!(y.data(), beta.data());
        // A uniform upstream through unit gamma cancels in the mean path.
        let ones = Tensor::filled(&[5], 1.0);
        let g = layer_norm_backward(&cache, &ones, &Tensor::filled(&[1, 5], 1.0)).unwrap();
        assert!(g.input.data().iter().all(|v| v.abs() < 1e-9));
    }

    #[test]
    fn relu_backward_masks() {
        let x = Tensor::from_vec(&[1, 3], vec![-1.0, 0.0, 2.0]).unwrap();
        let g = relu_backward(&x, &Tensor::filled(&[1, 3], 5.0)).unwrap();
        assert_eq!(g.data(), &[0.0, 0.0, 5.0]);
    }
}
