//! Distance kernels mapping embedding distances to attention values in
//! [0, 1], with a bandwidth initialisation that places the half-response
//! point at distance 1/sqrt(K) for K expected clusters.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::tensor::{Array, El, Tensor};

#[derive(Debug, Error)]
pub enum KernelError {
    #[error("expected at least one cluster, got k = 0")]
    ZeroClusters,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum KernelKind {
    Gaussian,
    Laplacian,
    Epanechnikov,
}

impl KernelKind {
    pub fn name(self) -> &'static str {
        match self {
            KernelKind::Gaussian => "gaussian",
            KernelKind::Laplacian => "laplacian",
            KernelKind::Epanechnikov => "epanechnikov",
        }
    }
}

impl std::str::FromStr for KernelKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "gaussian" => Ok(KernelKind::Gaussian),
            "laplacian" => Ok(KernelKind::Laplacian),
            "epanechnikov" => Ok(KernelKind::Epanechnikov),
            other => Err(format!(
                "unknown kernel {other:?} (expected gaussian, laplacian or epanechnikov)"
            )),
        }
    }
}

/// Bandwidth such that the kernel evaluates to 1/2 at distance 1/sqrt(k).
pub fn kernel_init_sigma(kind: KernelKind, k: usize) -> Result<f64, KernelError> {
    if k == 0 {
        return Err(KernelError::ZeroClusters);
    }
    let k = k as f64;
    Ok(match kind {
        KernelKind::Gaussian => 1.0 / (k * std::f64::consts::LN_2),
        KernelKind::Laplacian => 1.0 / (k.sqrt() * std::f64::consts::LN_2),
        KernelKind::Epanechnikov => 2.0 / k,
    })
}

/// Evaluates attention between a seed embedding and a full embedding field.
///
/// Abstracted so clustering can run with alternative similarity functions
/// (for example hard threshold kernels in verification code).
pub trait SeedKernel<T: El> {
    /// `field` is `[d, h, w]`, `seed` is `[d]`; returns alphas `[h, w]`.
    fn attention(&self, field: &Tensor<T>, seed: &Tensor<T>) -> Tensor<T>;
}

/// The standard differentiable kernels with a learnable log-bandwidth.
pub struct DistanceKernel<T: El> {
    pub kind: KernelKind,
    pub log_sigma: Tensor<T>,
}

impl<T: El> DistanceKernel<T> {
    pub fn new(kind: KernelKind, log_sigma: Tensor<T>) -> Self {
        Self { kind, log_sigma }
    }
}

/// Squared Euclidean distance from `seed` `[d]` to every pixel of `field`
/// `[d, h, w]`, as a `[h, w]` tensor.
pub fn squared_distance_field<T: El>(field: &Tensor<T>, seed: &Tensor<T>) -> Tensor<T> {
    let shape = field.shape();
    assert_eq!(shape.len(), 3, "embedding field must be [d, h, w]");
    let d = shape[0];
    let seed = seed.reshape(&[d, 1, 1]).broadcast_to(&shape);
    field.sub(&seed).square().sum_axes(&[0], false)
}

impl<T: El> SeedKernel<T> for DistanceKernel<T> {
    fn attention(&self, field: &Tensor<T>, seed: &Tensor<T>) -> Tensor<T> {
        let sq = squared_distance_field(field, seed);
        let inv_sigma = self.log_sigma.neg().exp();
        match self.kind {
            KernelKind::Gaussian => sq.mul(&inv_sigma.broadcast_to(&sq.shape())).neg().exp(),
            KernelKind::Laplacian => sq
                .sqrt()
                .mul(&inv_sigma.broadcast_to(&sq.shape()))
                .neg()
                .exp(),
            KernelKind::Epanechnikov => {
                let one = sq.graph().constant(Array::full(&sq.shape(), T::one()));
                one.sub(&sq.mul(&inv_sigma.broadcast_to(&sq.shape())))
                    .clamp_min(0.0)
            }
        }
    }
}
