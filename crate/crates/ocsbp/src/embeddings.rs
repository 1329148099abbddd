//! Semi-convolutional pixel embeddings.
//!
//! A small head maps backbone features to D_zeta channels and adds the
//! pixel's relative coordinates to the first two, so that at
//! initialisation (zeroed final layer) the embedding of a pixel is
//! exactly its position and distance-based clustering yields spatially
//! compact masks.

use crate::tensor::{Array, Binder, El, ParamStore, RngState, Tensor};

pub const EMBED_DIM: usize = 8;
const GN_GROUPS: usize = 8;

/// `[2, h, w]` grid; channel 0 = x (varies along columns), channel 1 = y.
/// Both linear in [-1, 1] with the corners exactly at the endpoints.
pub fn coordinate_grid<T: El>(h: usize, w: usize) -> Array<T> {
    let mut data = vec![T::zero(); 2 * h * w];
    let coord = |i: usize, n: usize| -> f64 {
        if n <= 1 {
            0.0
        } else {
            -1.0 + 2.0 * i as f64 / (n - 1) as f64
        }
    };
    for i in 0..h {
        for j in 0..w {
            data[i * w + j] = T::from_f64(coord(j, w));
            data[h * w + i * w + j] = T::from_f64(coord(i, h));
        }
    }
    Array::new(vec![2, h, w], data)
}

/// Allocate head parameters: 3x3 conv to `filters` with GN8+relu, then a
/// 1x1 projection to [`EMBED_DIM`] whose weights start at zero so initial
/// embeddings equal the coordinate grid.
pub fn init_embedding_head<T: El>(
    store: &mut ParamStore<T>,
    prefix: &str,
    d_in: usize,
    filters: usize,
    rng: &mut RngState,
) {
    crate::tensor::init_conv(store, &format!("{prefix}.conv"), filters, d_in, 3, rng);
    crate::tensor::init_norm(store, &format!("{prefix}.norm"), filters);
    crate::tensor::init_conv(store, &format!("{prefix}.out"), EMBED_DIM, filters, 1, rng);
    zero_init_embedding_head(store, prefix);
}

/// Zero the final projection so that `semiconv_embed` returns exactly the
/// coordinate grid in channels 0-1 and zeros elsewhere.
pub fn zero_init_embedding_head<T: El>(store: &mut ParamStore<T>, prefix: &str) {
    let w = format!("{prefix}.out.weight");
    let shape = store.get(&w).value.shape().to_vec();
    store.set_value(&w, Array::zeros(&shape));
    let b = format!("{prefix}.out.bias");
    let shape = store.get(&b).value.shape().to_vec();
    store.set_value(&b, Array::zeros(&shape));
}

/// Map features `[d_in, h, w]` to embeddings `[EMBED_DIM, h, w]`.
pub fn semiconv_embed<T: El>(features: &Tensor<T>, binder: &Binder<T>, prefix: &str) -> Tensor<T> {
    let shape = features.shape();
    assert_eq!(shape.len(), 3, "features must be [d, h, w]");
    let (h, w) = (shape[1], shape[2]);
    let hidden = features
        .conv2d(
            &binder.get(&format!("{prefix}.conv.weight")),
            &binder.get(&format!("{prefix}.conv.bias")),
            1,
            1,
        )
        .group_norm(
            GN_GROUPS,
            &binder.get(&format!("{prefix}.norm.gamma")),
            &binder.get(&format!("{prefix}.norm.beta")),
        )
        .relu();
    let out = hidden.conv2d(
        &binder.get(&format!("{prefix}.out.weight")),
        &binder.get(&format!("{prefix}.out.bias")),
        1,
        0,
    );
    let grid = features.graph().constant(coordinate_grid::<T>(h, w));
    let coords = out.narrow(0, 0, 2).add(&grid);
    let rest = out.narrow(0, 2, EMBED_DIM - 2);
    crate::tensor::concat(&[coords, rest], 0)
}
