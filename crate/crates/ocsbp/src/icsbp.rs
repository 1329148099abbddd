//! Instance-colouring stick-breaking clustering of pixel embeddings.
//!
//! A scope map starts at one everywhere. Each step picks the unclaimed
//! pixel with the highest seed score, evaluates kernel attention from
//! that pixel's embedding to the whole field, carves the attended mass
//! out of the scope, and emits it as a mask. The residual scope becomes
//! the last mask, so the masks always sum to one at every pixel.

use serde::{Deserialize, Serialize};

use crate::kernels::SeedKernel;
use crate::tensor::{Array, El, RngState, Tensor};

/// When to stop emitting kernel masks.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
pub enum StopPolicy {
    /// Exactly `k` masks: `k - 1` kernel steps plus the residual scope.
    FixedK { k: usize },
    /// Stop before committing a mask whose total mass falls below
    /// `tau_pixels` (expressed at a 64x64 reference resolution and scaled
    /// by `h * w / 4096`), or after `k_max` kernel steps.
    MassThreshold { tau_pixels: f64, k_max: usize },
}

impl StopPolicy {
    pub fn max_masks(&self) -> usize {
        match *self {
            StopPolicy::FixedK { k } => k,
            StopPolicy::MassThreshold { k_max, .. } => k_max + 1,
        }
    }
}

/// Ordered soft partition of the image: `masks[k]` is `[h, w]`, the last
/// entry is the residual scope and has no seed pixel.
pub struct AttentionMaskSet<T: El> {
    pub masks: Vec<Tensor<T>>,
    pub seed_pixels: Vec<(usize, usize)>,
}

impl<T: El> AttentionMaskSet<T> {
    pub fn len(&self) -> usize {
        self.masks.len()
    }

    pub fn is_empty(&self) -> bool {
        self.masks.is_empty()
    }

    /// Masks stacked into one `[k, h, w]` tensor.
    pub fn stacked(&self) -> Tensor<T> {
        let shape = self.masks[0].shape();
        let (h, w) = (shape[0], shape[1]);
        let rows: Vec<Tensor<T>> = self
            .masks
            .iter()
            .map(|m| m.reshape(&[1, h, w]))
            .collect();
        crate::tensor::concat(&rows, 0)
    }

    /// Row-major per-pixel argmax over masks (lowest index wins ties).
    pub fn hard_assignment(&self) -> Vec<usize> {
        let n = self.masks[0].numel();
        let mut best = vec![0usize; n];
        let mut best_val = self.masks[0].value().to_f64_vec();
        for (k, m) in self.masks.iter().enumerate().skip(1) {
            m.with_value(|v| {
                for (p, x) in v.data().iter().enumerate() {
                    let x = x.to_f64();
                    if x > best_val[p] {
                        best_val[p] = x;
                        best[p] = k;
                    }
                }
            });
        }
        best
    }
}

pub fn icsbp_count_slots<T: El>(set: &AttentionMaskSet<T>) -> usize {
    set.masks.len()
}

/// Runs the stick-breaking loop on an embedding field `[d, h, w]`.
///
/// Seed scores are drawn once per call; gradients flow through the
/// attention values and the scope but not through seed selection.
pub fn icsbp_cluster<T: El>(
    embeddings: &Tensor<T>,
    kernel: &dyn SeedKernel<T>,
    policy: StopPolicy,
    rng: &mut RngState,
) -> AttentionMaskSet<T> {
    let shape = embeddings.shape();
    assert_eq!(shape.len(), 3, "embeddings must be [d, h, w]");
    let (d, h, w) = (shape[0], shape[1], shape[2]);
    assert!(d >= 1);
    let g = embeddings.graph();

    let scores: Vec<f64> = (0..h * w).map(|_| rng.uniform_open01()).collect();
    let kernel_steps = match policy {
        StopPolicy::FixedK { k } => {
            assert!(k >= 1, "FixedK requires at least one mask");
            k - 1
        }
        StopPolicy::MassThreshold { k_max, .. } => {
            assert!(k_max >= 1, "MassThreshold requires k_max >= 1");
            k_max
        }
    };
    let tau = match policy {
        StopPolicy::MassThreshold { tau_pixels, .. } => {
            Some(tau_pixels * (h * w) as f64 / 4096.0)
        }
        StopPolicy::FixedK { .. } => None,
    };

    let mut scope = g.constant(Array::full(&[h, w], T::one()));
    let one = g.constant(Array::full(&[h, w], T::one()));
    let mut masks: Vec<Tensor<T>> = Vec::new();
    let mut seed_pixels: Vec<(usize, usize)> = Vec::new();

    for _ in 0..kernel_steps {
        let pixel = scope.with_value(|s| {
            let mut best = 0usize;
            let mut best_val = f64::NEG_INFINITY;
            for (p, v) in s.data().iter().enumerate() {
                let weighted = v.to_f64() * scores[p];
                if weighted > best_val {
                    best_val = weighted;
                    best = p;
                }
            }
            best
        });
        let (i, j) = (pixel / w, pixel % w);
        let seed = embeddings.narrow(1, i, 1).narrow(2, j, 1).reshape(&[d]);
        let alpha = kernel.attention(embeddings, &seed);
        let mask = scope.mul(&alpha);
        if let Some(tau) = tau {
            let mass = mask.with_value(|m| m.data().iter().map(|v| v.to_f64()).sum::<f64>());
            if mass < tau {
                break;
            }
        }
        masks.push(mask);
        seed_pixels.push((i, j));
        scope = scope.mul(&one.sub(&alpha));
    }
    masks.push(scope);

    AttentionMaskSet { masks, seed_pixels }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::kernels::{DistanceKernel, KernelKind};
    use crate::tensor::Graph;

    /// psi = 1 when squared distance < threshold, else 0.
    struct ThresholdKernel {
        threshold: f64,
    }

    impl SeedKernel<f64> for ThresholdKernel {
        fn attention(&self, field: &Tensor<f64>, seed: &Tensor<f64>) -> Tensor<f64> {
            let sq = crate::kernels::squared_distance_field(field, seed).value();
            let data: Vec<f64> = sq
                .data()
                .iter()
                .map(|&v| if v < self.threshold { 1.0 } else { 0.0 })
                .collect();
            field
                .graph()
                .constant(Array::new(sq.shape().to_vec(), data))
        }
    }

    /// Fixed attention rows keyed on which of two pixels was the seed.
    struct TwoPixelKernel;

    impl SeedKernel<f64> for TwoPixelKernel {
        fn attention(&self, field: &Tensor<f64>, seed: &Tensor<f64>) -> Tensor<f64> {
            let row = if seed.item() == 0.0 {
                vec![1.0, 0.4]
            } else {
                vec![0.4, 1.0]
            };
            field.graph().constant(Array::new(vec![1, 2], row))
        }
    }

    fn mask_values(set: &AttentionMaskSet<f64>) -> Vec<Vec<f64>> {
        set.masks.iter().map(|m| m.value().to_f64_vec()).collect()
    }

    fn assert_partition_of_unity(set: &AttentionMaskSet<f64>) {
        let n = set.masks[0].numel();
        let mut sums = vec![0.0; n];
        for m in mask_values(set) {
            for (p, v) in m.iter().enumerate() {
                assert!(
                    (-1e-12..=1.0 + 1e-12).contains(v),
                    "mask value {v} outside [0, 1]"
                );
                sums[p] += v;
            }
        }
        for s in sums {
            assert!((s - 1.0).abs() < 1e-5, "pixel sum {s}");
        }
    }

    #[test]
    fn fixed_k_one_is_the_all_ones_scope() {
        let g: Graph<f64> = Graph::new();
        let emb = g.constant(Array::zeros(&[2, 3, 3]));
        let kernel = DistanceKernel::new(KernelKind::Gaussian, g.constant(Array::scalar(0.0)));
        let mut rng = RngState::new(1);
        let set = icsbp_cluster(&emb, &kernel, StopPolicy::FixedK { k: 1 }, &mut rng);
        assert_eq!(icsbp_count_slots(&set), 1);
        assert!(set.seed_pixels.is_empty());
        assert!(set.masks[0].value().data().iter().all(|&v| v == 1.0));
    }

    #[test]
    fn two_pixel_hand_execution() {
        // find a seed where pixel 0 carries the larger seed score
        let seed = (0..)
            .find(|&s| {
                let mut r = RngState::new(s);
                let a = r.uniform_open01();
                let b = r.uniform_open01();
                a > b
            })
            .unwrap();
        let g: Graph<f64> = Graph::new();
        let emb = g.constant(Array::new(vec![1, 1, 2], vec![0.0, 1.0]));
        let mut rng = RngState::new(seed);
        let set = icsbp_cluster(&emb, &TwoPixelKernel, StopPolicy::FixedK { k: 2 }, &mut rng);
        let m = mask_values(&set);
        assert_eq!(set.seed_pixels, vec![(0, 0)]);
        assert_eq!(m[0], vec![1.0, 0.4]);
        assert!((m[1][0]).abs() < 1e-12 && (m[1][1] - 0.6).abs() < 1e-12);
        assert_partition_of_unity(&set);
    }

    #[test]
    fn identical_embeddings_collapse_to_first_mask() {
        let g: Graph<f64> = Graph::new();
        let emb = g.constant(Array::full(&[2, 2, 2], 0.7));
        let kernel = DistanceKernel::new(KernelKind::Gaussian, g.constant(Array::scalar(0.0)));
        let mut rng = RngState::new(5);
        let set = icsbp_cluster(&emb, &kernel, StopPolicy::FixedK { k: 3 }, &mut rng);
        assert_eq!(set.len(), 3);
        let m = mask_values(&set);
        assert!(m[0].iter().all(|&v| (v - 1.0).abs() < 1e-12));
        assert!(m[1].iter().all(|&v| v.abs() < 1e-12));
        assert!(m[2].iter().all(|&v| v.abs() < 1e-12));
        assert_partition_of_unity(&set);
    }

    fn two_cluster_field(g: &Graph<f64>) -> Tensor<f64> {
        // left half near 0, right half near 10: well separated
        let (h, w) = (2, 4);
        let mut data = vec![0.0; h * w];
        for i in 0..h {
            for j in 0..w {
                data[i * w + j] = if j < 2 { 0.0 } else { 10.0 };
            }
        }
        g.constant(Array::new(vec![1, h, w], data))
    }

    #[test]
    fn hard_kernel_partitions_exactly() {
        let g: Graph<f64> = Graph::new();
        let emb = two_cluster_field(&g);
        let kernel = ThresholdKernel { threshold: 1.0 };
        let mut rng = RngState::new(3);
        let set = icsbp_cluster(&emb, &kernel, StopPolicy::FixedK { k: 3 }, &mut rng);
        assert_partition_of_unity(&set);
        for m in mask_values(&set) {
            for v in m {
                assert!(v == 0.0 || v == 1.0, "hard kernel produced soft value {v}");
            }
        }
        // each seed claimed a distinct cluster
        let seeds: std::collections::BTreeSet<_> = set
            .seed_pixels
            .iter()
            .map(|&(_, j)| usize::from(j >= 2))
            .collect();
        assert_eq!(seeds.len(), 2);
    }

    #[test]
    fn mask_order_is_seed_dependent_but_set_is_not() {
        let g: Graph<f64> = Graph::new();
        let emb = two_cluster_field(&g);
        let kernel = ThresholdKernel { threshold: 1.0 };
        let mut orders = std::collections::BTreeSet::new();
        let mut sets: Vec<Vec<Vec<f64>>> = Vec::new();
        for seed in 0..20 {
            let mut rng = RngState::new(seed);
            let set = icsbp_cluster(&emb, &kernel, StopPolicy::FixedK { k: 3 }, &mut rng);
            orders.insert(usize::from(set.seed_pixels[0].1 >= 2));
            let mut m = mask_values(&set);
            m.sort_by(|a, b| a.partial_cmp(b).unwrap());
            sets.push(m);
        }
        assert_eq!(orders.len(), 2, "expected both cluster orders across seeds");
        for s in &sets[1..] {
            for (a, b) in s.iter().zip(&sets[0]) {
                for (x, y) in a.iter().zip(b) {
                    assert!((x - y).abs() < 1e-3);
                }
            }
        }
    }

    #[test]
    fn scope_is_monotone_and_masks_stay_in_range() {
        let g: Graph<f64> = Graph::new();
        let mut rng = RngState::new(9);
        let emb = g.constant(Array::new(vec![3, 4, 4], rng.normal_vec(48)));
        let kernel = DistanceKernel::new(KernelKind::Gaussian, g.constant(Array::scalar(-0.5)));
        let set = icsbp_cluster(&emb, &kernel, StopPolicy::FixedK { k: 5 }, &mut rng);
        assert_eq!(set.len(), 5);
        assert_partition_of_unity(&set);
        // scope after step t is 1 - sum of masks so far; monotone because
        // every mask is non-negative
        let m = mask_values(&set);
        let n = 16;
        let mut scope = vec![1.0; n];
        for row in &m[..m.len() - 1] {
            for (p, v) in row.iter().enumerate() {
                let next = scope[p] - v;
                assert!(next <= scope[p] + 1e-15);
                assert!(next >= -1e-12);
                scope[p] = next;
            }
        }
    }

    #[test]
    fn mass_threshold_stops_before_small_masks() {
        let g: Graph<f64> = Graph::new();
        let emb = two_cluster_field(&g);
        let kernel = ThresholdKernel { threshold: 1.0 };
        // each cluster holds 4 pixels = mass 4; at 2x4 resolution the
        // scale factor is 8/4096, so tau_pixels = 1024 demands mass >= 2
        let policy = StopPolicy::MassThreshold {
            tau_pixels: 1024.0,
            k_max: 6,
        };
        let mut rng = RngState::new(2);
        let set = icsbp_cluster(&emb, &kernel, policy, &mut rng);
        // both clusters pass the threshold, the third candidate has mass 0
        assert_eq!(icsbp_count_slots(&set), 3);
        assert_partition_of_unity(&set);

        let strict = StopPolicy::MassThreshold {
            tau_pixels: 4096.0,
            k_max: 6,
        };
        let mut rng = RngState::new(2);
        let set = icsbp_cluster(&emb, &kernel, strict, &mut rng);
        // mass 4 < 8: every candidate is rejected, only the scope remains
        assert_eq!(icsbp_count_slots(&set), 1);
    }

    #[test]
    fn mass_threshold_respects_k_max() {
        let g: Graph<f64> = Graph::new();
        let mut rng = RngState::new(11);
        let emb = g.constant(Array::new(vec![2, 3, 3], rng.normal_vec(18)));
        let kernel = DistanceKernel::new(KernelKind::Gaussian, g.constant(Array::scalar(2.0)));
        let policy = StopPolicy::MassThreshold {
            tau_pixels: 0.0,
            k_max: 4,
        };
        let set = icsbp_cluster(&emb, &kernel, policy, &mut rng);
        assert_eq!(icsbp_count_slots(&set), policy.max_masks());
        assert_eq!(icsbp_count_slots(&set), 5);
    }

    #[test]
    fn gradients_flow_through_masks() {
        let g: Graph<f64> = Graph::new();
        let mut rng = RngState::new(4);
        let emb = g.leaf(Array::new(vec![2, 3, 3], rng.normal_vec(18)));
        let kernel = DistanceKernel::new(KernelKind::Gaussian, g.leaf(Array::scalar(-0.3)));
        let set = icsbp_cluster(&emb, &kernel, StopPolicy::FixedK { k: 3 }, &mut rng);
        set.masks[0].sum_all().backward().unwrap();
        let ge = emb.grad_or_zeros();
        assert!(ge.data().iter().any(|&v| v != 0.0));
        assert!(kernel.log_sigma.grad_or_zeros().item() != 0.0);
    }

    #[test]
    fn stacked_and_hard_assignment_agree() {
        let g: Graph<f64> = Graph::new();
        let emb = two_cluster_field(&g);
        let kernel = ThresholdKernel { threshold: 1.0 };
        let mut rng = RngState::new(3);
        let set = icsbp_cluster(&emb, &kernel, StopPolicy::FixedK { k: 3 }, &mut rng);
        let stacked = set.stacked();
        assert_eq!(stacked.shape(), vec![3, 2, 4]);
        let hard = set.hard_assignment();
        let vals = stacked.value();
        for p in 0..8 {
            assert_eq!(vals.data()[hard[p] * 8 + p], 1.0);
        }
    }
}
