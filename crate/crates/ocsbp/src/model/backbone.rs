//! UNet backbone: stride-2 convolutional down blocks, a two-layer
//! fully-connected bottleneck, and mirrored transposed-conv up blocks
//! with skip connections, ending at full resolution with d_e channels.

use crate::tensor::{init_conv, init_conv_transpose, init_linear, init_norm};
use crate::tensor::{Binder, El, ParamStore, RngState, Tensor};

use super::{linear, ModelConfig, GN_GROUPS};

const BOTTLENECK_UNITS: usize = 128;

pub(crate) fn init_backbone<T: El>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut RngState,
) {
    let (h, w) = cfg.image_size;
    let mut c_in = cfg.channels;
    for (i, &f) in cfg.backbone_filters.iter().enumerate() {
        init_conv(store, &format!("backbone.down{i}"), f, c_in, 3, rng);
        init_norm(store, &format!("backbone.dnorm{i}"), f);
        c_in = f;
    }
    let depth = cfg.backbone_filters.len();
    let bottom = c_in * (h >> depth) * (w >> depth);
    init_linear(store, "backbone.fc1", BOTTLENECK_UNITS, bottom, rng);
    init_linear(store, "backbone.fc2", BOTTLENECK_UNITS, BOTTLENECK_UNITS, rng);
    init_linear(store, "backbone.fc3", bottom, BOTTLENECK_UNITS, rng);

    // up block i consumes the bottleneck/up output concatenated with the
    // skip from down block i
    let mut prev = c_in;
    for i in (0..depth).rev() {
        let skip = cfg.backbone_filters[i];
        let out = if i == 0 {
            cfg.d_e
        } else {
            cfg.backbone_filters[i - 1]
        };
        init_conv_transpose(store, &format!("backbone.up{i}"), prev + skip, out, 3, rng);
        init_norm(store, &format!("backbone.unorm{i}"), out);
        prev = out;
    }
}

/// Encode an image `[c, h, w]` to features `[d_e, h, w]`.
pub fn backbone_encode<T: El>(x: &Tensor<T>, binder: &Binder<T>, cfg: &ModelConfig) -> Tensor<T> {
    let shape = x.shape();
    assert_eq!(
        (shape[1], shape[2]),
        cfg.image_size,
        "input size does not match config"
    );
    let depth = cfg.backbone_filters.len();
    let mut skips: Vec<Tensor<T>> = Vec::with_capacity(depth);
    let mut cur = x.clone();
    for i in 0..depth {
        cur = cur
            .conv2d(
                &binder.get(&format!("backbone.down{i}.weight")),
                &binder.get(&format!("backbone.down{i}.bias")),
                2,
                1,
            )
            .group_norm(
                GN_GROUPS,
                &binder.get(&format!("backbone.dnorm{i}.gamma")),
                &binder.get(&format!("backbone.dnorm{i}.beta")),
            )
            .relu();
        skips.push(cur.clone());
    }

    let bottom_shape = cur.shape();
    let bottom: usize = bottom_shape.iter().product();
    let flat = cur.reshape(&[bottom]);
    let hidden = linear(
        &flat,
        &binder.get("backbone.fc1.weight"),
        &binder.get("backbone.fc1.bias"),
    )
    .relu();
    let hidden = linear(
        &hidden,
        &binder.get("backbone.fc2.weight"),
        &binder.get("backbone.fc2.bias"),
    )
    .relu();
    let restored = linear(
        &hidden,
        &binder.get("backbone.fc3.weight"),
        &binder.get("backbone.fc3.bias"),
    )
    .relu()
    .reshape(&bottom_shape);

    let mut cur = restored;
    for i in (0..depth).rev() {
        let joined = crate::tensor::concat(&[cur, skips[i].clone()], 0);
        cur = joined
            .conv_transpose2d(
                &binder.get(&format!("backbone.up{i}.weight")),
                &binder.get(&format!("backbone.up{i}.bias")),
                2,
                1,
                1,
            )
            .group_norm(
                GN_GROUPS,
                &binder.get(&format!("backbone.unorm{i}.gamma")),
                &binder.get(&format!("backbone.unorm{i}.beta")),
            )
            .relu();
    }
    cur
}
