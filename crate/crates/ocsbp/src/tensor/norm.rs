//! Group and layer normalization, built from primitive ops so the
//! backward pass comes for free.

use super::{El, Tensor};

const NORM_EPS: f64 = 1e-5;

impl<T: El> Tensor<T> {
    /// Group normalization over a `[C, H, W]` map with `groups` groups and
    /// learned per-channel scale/shift (`gamma`, `beta`: `[C]`).
    pub fn group_norm(&self, groups: usize, gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
        let shape = self.shape();
        assert_eq!(shape.len(), 3, "group_norm expects [C,H,W], got {shape:?}");
        let (c, h, w) = (shape[0], shape[1], shape[2]);
        assert!(
            c % groups == 0,
            "group_norm: {c} channels not divisible into {groups} groups"
        );
        let grouped = self.reshape(&[groups, c / groups * h * w]);
        let mean = grouped.mean_axes(&[1], true);
        let centred = grouped.sub(&mean);
        let var = centred.square().mean_axes(&[1], true);
        let normed = centred.div(&var.add_scalar(NORM_EPS).sqrt());
        let normed = normed.reshape(&[c, h, w]);
        let gamma_c = gamma.reshape(&[c, 1, 1]);
        let beta_c = beta.reshape(&[c, 1, 1]);
        normed.mul(&gamma_c).add(&beta_c)
    }

    /// Layer normalization over the last axis with learned scale/shift.
    pub fn layer_norm(&self, gamma: &Tensor<T>, beta: &Tensor<T>) -> Tensor<T> {
        let shape = self.shape();
        let last = shape.len() - 1;
        let mean = self.mean_axes(&[last], true);
        let centred = self.sub(&mean);
        let var = centred.square().mean_axes(&[last], true);
        let normed = centred.div(&var.add_scalar(NORM_EPS).sqrt());
        normed.mul(gamma).add(beta)
    }
}
