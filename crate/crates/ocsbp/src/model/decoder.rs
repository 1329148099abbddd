//! Per-slot spatial-broadcast decoder. Each latent is tiled over a
//! (h/16, w/16) grid with coordinate channels appended, upsampled by four
//! stride-2 transposed convolutions, and projected to 3 RGB channels
//! (sigmoid) plus one mask logit. Mixing weights are the softmax of the
//! logits across slots.

use crate::embeddings::coordinate_grid;
use crate::likelihood::SceneComponents;
use crate::tensor::{init_conv, init_conv_transpose, init_norm};
use crate::tensor::{Binder, El, ParamStore, RngState, Tensor};

use super::{ModelConfig, GN_GROUPS};

const UP_LAYERS: usize = 4;
const KERNEL: usize = 5;

pub(crate) fn init_decoder<T: El>(
    store: &mut ParamStore<T>,
    cfg: &ModelConfig,
    rng: &mut RngState,
) {
    let mut c_in = cfg.latent_dim + 2;
    for i in 0..UP_LAYERS {
        init_conv_transpose(
            store,
            &format!("decoder.up{i}"),
            c_in,
            cfg.decoder_filters,
            KERNEL,
            rng,
        );
        init_norm(store, &format!("decoder.norm{i}"), cfg.decoder_filters);
        c_in = cfg.decoder_filters;
    }
    init_conv(store, "decoder.out", 4, cfg.decoder_filters, 1, rng);
}

/// Decode one latent `[d_z]` to `(rgb [3, h, w], mask_logit [h, w])`.
pub fn decode_slot<T: El>(
    z: &Tensor<T>,
    binder: &Binder<T>,
    cfg: &ModelConfig,
) -> (Tensor<T>, Tensor<T>) {
    let (h, w) = cfg.image_size;
    let (h0, w0) = (h >> UP_LAYERS, w >> UP_LAYERS);
    let d = cfg.latent_dim;
    let tiled = z.reshape(&[d, 1, 1]).broadcast_to(&[d, h0, w0]);
    let coords = binder.graph().constant(coordinate_grid::<T>(h0, w0));
    let mut cur = crate::tensor::concat(&[tiled, coords], 0);
    for i in 0..UP_LAYERS {
        cur = cur
            .conv_transpose2d(
                &binder.get(&format!("decoder.up{i}.weight")),
                &binder.get(&format!("decoder.up{i}.bias")),
                2,
                2,
                1,
            )
            .group_norm(
                GN_GROUPS,
                &binder.get(&format!("decoder.norm{i}.gamma")),
                &binder.get(&format!("decoder.norm{i}.beta")),
            )
            .relu();
    }
    let out = cur.conv2d(
        &binder.get("decoder.out.weight"),
        &binder.get("decoder.out.bias"),
        1,
        0,
    );
    let rgb = out.narrow(0, 0, 3).sigmoid();
    let logit = out.narrow(0, 3, 1).reshape(&[h, w]);
    (rgb, logit)
}

/// Decode every slot and normalise the mask logits across slots.
pub fn decode_components<T: El>(
    samples: &[Tensor<T>],
    binder: &Binder<T>,
    cfg: &ModelConfig,
) -> SceneComponents<T> {
    assert!(!samples.is_empty());
    let (h, w) = cfg.image_size;
    let mut rgbs = Vec::with_capacity(samples.len());
    let mut logits = Vec::with_capacity(samples.len());
    for z in samples {
        let (rgb, logit) = decode_slot(z, binder, cfg);
        rgbs.push(rgb.reshape(&[1, 3, h, w]));
        logits.push(logit.reshape(&[1, h, w]));
    }
    let means = crate::tensor::concat(&rgbs, 0);
    let mask_logits = crate::tensor::concat(&logits, 0);
    let masks_pi = mask_logits.softmax(0);
    SceneComponents {
        means,
        mask_logits,
        masks_pi,
    }
}
