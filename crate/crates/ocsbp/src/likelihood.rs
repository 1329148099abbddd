//! Probability machinery: spatial Gaussian-mixture image log-likelihood,
//! diagonal-Gaussian KL, and the categorical mask-consistency KL.

use thiserror::Error;

use crate::tensor::{Array, El, Tensor};

pub const DEFAULT_SIGMA_X: f64 = 0.7;
const LOG_EPS: f64 = 1e-10;

#[derive(Debug, Error)]
pub enum LikelihoodError {
    #[error("sigma_x must be positive, got {0}")]
    NonPositiveSigma(f64),
    #[error("{arg} is not normalized over slots: pixel {pixel} sums to {sum}")]
    NotNormalized {
        arg: &'static str,
        pixel: usize,
        sum: f64,
    },
    #[error("dimension mismatch: {lhs:?} vs {rhs:?}")]
    DimMismatch { lhs: Vec<usize>, rhs: Vec<usize> },
}

/// Per-slot decoder outputs: RGB means in (0,1) `[k, c, h, w]` and mixing
/// weights `[k, h, w]` already softmax-normalized over slots.
pub struct SceneComponents<T: El> {
    pub means: Tensor<T>,
    pub mask_logits: Tensor<T>,
    pub masks_pi: Tensor<T>,
}

/// Diagonal Gaussian given by mean and log standard deviation tensors of
/// equal shape.
pub struct DiagGaussian<T: El> {
    pub mean: Tensor<T>,
    pub log_std: Tensor<T>,
}

impl<T: El> DiagGaussian<T> {
    pub fn new(mean: Tensor<T>, log_std: Tensor<T>) -> Self {
        assert_eq!(mean.shape(), log_std.shape());
        Self { mean, log_std }
    }

    pub fn standard(graph: &crate::tensor::Graph<T>, dim: usize) -> Self {
        Self {
            mean: graph.constant(Array::zeros(&[dim])),
            log_std: graph.constant(Array::zeros(&[dim])),
        }
    }
}

/// log p(x | components) under the mixture
/// sum_{ijc} log sum_k pi_{ijk} N(x_{ijc}; mu_{ijck}, sigma_x^2),
/// evaluated with a log-sum-exp over slots.
pub fn sgmm_log_likelihood<T: El>(
    x: &Tensor<T>,
    comps: &SceneComponents<T>,
    sigma_x: f64,
) -> Result<Tensor<T>, LikelihoodError> {
    if sigma_x <= 0.0 {
        return Err(LikelihoodError::NonPositiveSigma(sigma_x));
    }
    let xs = x.shape();
    let ms = comps.means.shape();
    if ms.len() != 4 || xs.as_slice() != &ms[1..] {
        return Err(LikelihoodError::DimMismatch { lhs: xs, rhs: ms });
    }
    let (k, c, h, w) = (ms[0], ms[1], ms[2], ms[3]);

    let log_norm = -0.5 * (2.0 * std::f64::consts::PI).ln() - sigma_x.ln();
    let inv_two_var = 1.0 / (2.0 * sigma_x * sigma_x);
    let xb = x.reshape(&[1, c, h, w]).broadcast_to(&[k, c, h, w]);
    // log N per slot/channel/pixel
    let log_n = comps
        .means
        .sub(&xb)
        .square()
        .mul_scalar(-inv_two_var)
        .add_scalar(log_norm);
    let log_pi = comps
        .masks_pi
        .clamp_min(LOG_EPS)
        .log()
        .reshape(&[k, 1, h, w])
        .broadcast_to(&[k, c, h, w]);
    let per_pixel = log_pi.add(&log_n).logsumexp(0, false);
    Ok(per_pixel.sum_all())
}

/// KL(q || p) for diagonal Gaussians, summed over all dimensions.
pub fn gaussian_kl<T: El>(
    q: &DiagGaussian<T>,
    p: &DiagGaussian<T>,
) -> Result<Tensor<T>, LikelihoodError> {
    if q.mean.shape() != p.mean.shape() {
        return Err(LikelihoodError::DimMismatch {
            lhs: q.mean.shape(),
            rhs: p.mean.shape(),
        });
    }
    // KL = log(sp/sq) + (sq^2 + (mq-mp)^2) / (2 sp^2) - 1/2
    let log_ratio = p.log_std.sub(&q.log_std);
    let var_q = q.log_std.mul_scalar(2.0).exp();
    let diff_sq = q.mean.sub(&p.mean).square();
    let inv_two_var_p = p.log_std.mul_scalar(-2.0).exp().mul_scalar(0.5);
    let kl = log_ratio
        .add(&var_q.add(&diff_sq).mul(&inv_two_var_p))
        .add_scalar(-0.5);
    Ok(kl.sum_all())
}

fn check_normalized<T: El>(
    arg: &'static str,
    stacked: &Tensor<T>,
) -> Result<(), LikelihoodError> {
    let shape = stacked.shape();
    let (k, n) = (shape[0], shape[1] * shape[2]);
    stacked.with_value(|v| {
        for p in 0..n {
            let sum: f64 = (0..k).map(|s| v.data()[s * n + p].to_f64()).sum();
            if (sum - 1.0).abs() > 1e-4 {
                return Err(LikelihoodError::NotNormalized { arg, pixel: p, sum });
            }
        }
        Ok(())
    })
}

/// sum_{ij} KL(m_ij || pi_ij) between per-pixel categoricals, with the
/// gradient stopped on `pi`. Both arguments are `[k, h, w]`.
pub fn mask_consistency_kl<T: El>(
    masks: &Tensor<T>,
    pi: &Tensor<T>,
) -> Result<Tensor<T>, LikelihoodError> {
    if masks.shape() != pi.shape() {
        return Err(LikelihoodError::DimMismatch {
            lhs: masks.shape(),
            rhs: pi.shape(),
        });
    }
    check_normalized("masks", masks)?;
    check_normalized("pi", pi)?;
    // m log(m/pi) with 0 log 0 = 0: floor both logs; the m factor kills
    // the floored log m term wherever m = 0
    let log_m = masks.clamp_min(LOG_EPS).log();
    let log_pi = pi.detach().clamp_min(LOG_EPS).log();
    Ok(masks.mul(&log_m.sub(&log_pi)).sum_all())
}
