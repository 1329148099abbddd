//! Feature head, mask-weighted pooling, and the shared posterior head.

use crate::icsbp::AttentionMaskSet;
use crate::likelihood::DiagGaussian;
use crate::tensor::{init_conv, init_linear, init_norm};
use crate::tensor::{Binder, El, ParamStore, RngState, Tensor};

use super::{linear, ModelConfig, GN_GROUPS, LOG_STD_MAX, LOG_STD_MIN};

const POOL_EPS: f64 = 1e-5;

pub(crate) fn init_feature_head<T: El>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut RngState,
) {
    init_conv(store, "feature.conv", cfg.head_filters, cfg.d_e, 3, rng);
    init_norm(store, "feature.norm", cfg.head_filters);
    init_conv(store, "feature.out", cfg.d_f, cfg.head_filters, 1, rng);
}

pub(crate) fn init_posterior_head<T: El>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut RngState,
) {
    init_norm(store, "posterior.ln", cfg.d_f);
    init_linear(store, "posterior.fc1", cfg.head_hidden, cfg.d_f, rng);
    init_linear(
        store,
        "posterior.fc2",
        2 * cfg.latent_dim,
        cfg.head_hidden,
        rng,
    );
}

/// Map backbone features `[d_e, h, w]` to pooling features `[d_f, h, w]`.
pub fn feature_head<T: El>(features: &Tensor<T>, binder: &Binder<T>, cfg: &ModelConfig) -> Tensor<T> {
    let _ = cfg;
    features
        .conv2d(
            &binder.get("feature.conv.weight"),
            &binder.get("feature.conv.bias"),
            1,
            1,
        )
        .group_norm(
            GN_GROUPS,
            &binder.get("feature.norm.gamma"),
            &binder.get("feature.norm.beta"),
        )
        .relu()
        .conv2d(
            &binder.get("feature.out.weight"),
            &binder.get("feature.out.bias"),
            1,
            0,
        )
}

/// slot_k = sum_ij m_ijk f_ij / (sum_ij m_ijk + eps), one `[d_f]` vector
/// per mask.
pub fn pool_slot_features<T: El>(features: &Tensor<T>, masks: &AttentionMaskSet<T>) -> Vec<Tensor<T>> {
    assert!(!masks.is_empty(), "pooling requires at least one mask");
    let shape = features.shape();
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    masks
        .masks
        .iter()
        .map(|m| {
            let mb = m.reshape(&[1, h, w]).broadcast_to(&[d, h, w]);
            let num = features.mul(&mb).sum_axes(&[1, 2], false);
            let den = m.sum_all().add_scalar(POOL_EPS);
            num.div(&den.reshape(&[1]).broadcast_to(&[d]))
        })
        .collect()
}

/// Shared-weight posterior head: layernorm, fc-relu, fc to 2*d_z, split
/// into mean and clamped log_std.
pub fn posterior_head<T: El>(
    slot: &Tensor<T>,
    binder: &Binder<T>,
    cfg: &ModelConfig,
) -> DiagGaussian<T> {
    let normed = slot.layer_norm(
        &binder.get("posterior.ln.gamma"),
        &binder.get("posterior.ln.beta"),
    );
    let hidden = linear(
        &normed,
        &binder.get("posterior.fc1.weight"),
        &binder.get("posterior.fc1.bias"),
    )
    .relu();
    let out = linear(
        &hidden,
        &binder.get("posterior.fc2.weight"),
        &binder.get("posterior.fc2.bias"),
    );
    let mean = out.narrow(0, 0, cfg.latent_dim);
    let log_std = out
        .narrow(0, cfg.latent_dim, cfg.latent_dim)
        .clamp(LOG_STD_MIN, LOG_STD_MAX);
    DiagGaussian::new(mean, log_std)
}
