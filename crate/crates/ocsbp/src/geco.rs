//! GECO-constrained loss: total = nll + beta * (KL_latent + KL_mask),
//! where beta is steered by a multiplicative controller comparing a
//! moving average of the reconstruction error against a target.

use crate::likelihood::{
    gaussian_kl, mask_consistency_kl, sgmm_log_likelihood, LikelihoodError,
};
use crate::model::EncodeResult;
use crate::tensor::{El, Tensor};

/// Paper-scale reconstruction goal, per pixel and per channel.
pub const DEFAULT_GOAL_PER_PIXEL_CHANNEL: f64 = 0.5655;
pub const DEFAULT_ALPHA: f64 = 0.99;
pub const ETA_DOWN: f64 = 1e-5;
pub const ETA_UP: f64 = 1e-4;
pub const BETA_MIN: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GecoState {
    pub beta: f64,
    /// Moving average of the per-image negative log-likelihood; None
    /// until the first update.
    pub ema_error: Option<f64>,
    /// Total reconstruction goal (already scaled by pixels and channels).
    pub goal: f64,
    pub alpha: f64,
}

impl GecoState {
    /// `goal_per_pixel_channel` is scaled by the image volume. The mask
    /// consistency variant starts beta at the floor: an initial high
    /// weighting of the mask loss inhibits learning.
    pub fn new(
        goal_per_pixel_channel: f64,
        image_size: (usize, usize),
        channels: usize,
        use_mask_loss: bool,
    ) -> Self {
        Self {
            beta: if use_mask_loss { BETA_MIN } else { 1.0 },
            ema_error: None,
            goal: goal_per_pixel_channel * (image_size.0 * image_size.1 * channels) as f64,
            alpha: DEFAULT_ALPHA,
        }
    }

    /// One controller step from the batch-mean per-image nll.
    pub fn update(&mut self, nll: f64) {
        let e = match self.ema_error {
            None => nll,
            Some(prev) => self.alpha * prev + (1.0 - self.alpha) * nll,
        };
        self.ema_error = Some(e);
        let eta = if self.goal <= e { ETA_DOWN } else { ETA_UP };
        self.beta = (self.beta * (eta * (self.goal - e)).exp()).max(BETA_MIN);
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossBreakdown {
    pub nll: f64,
    pub kl_latent: f64,
    pub kl_mask: f64,
    pub total: f64,
    pub beta_used: f64,
}

/// Assemble the loss for one image. Returns the differentiable total and
/// a numeric breakdown; beta enters as a constant.
pub fn compute_loss<T: El>(
    result: &EncodeResult<T>,
    x: &Tensor<T>,
    sigma_x: f64,
    beta: f64,
    use_mask_loss: bool,
) -> Result<(Tensor<T>, LossBreakdown), LikelihoodError> {
    let nll = sgmm_log_likelihood(x, &result.components, sigma_x)?.neg();
    let g = x.graph();
    let mut kl_latent = g.scalar(0.0);
    for (q, p) in result.latents.posterior.iter().zip(&result.latents.prior) {
        kl_latent = kl_latent.add(&gaussian_kl(q, p)?);
    }
    let kl_mask = if use_mask_loss {
        Some(mask_consistency_kl(
            &result.attention.stacked(),
            &result.components.masks_pi,
        )?)
    } else {
        None
    };
    let mut penalty = kl_latent.clone();
    if let Some(km) = &kl_mask {
        penalty = penalty.add(km);
    }
    let total = nll.add(&penalty.mul_scalar(beta));
    let breakdown = LossBreakdown {
        nll: nll.item().to_f64(),
        kl_latent: kl_latent.item().to_f64(),
        kl_mask: kl_mask.as_ref().map_or(0.0, |t| t.item().to_f64()),
        total: total.item().to_f64(),
        beta_used: beta,
    };
    Ok((total, breakdown))
}
