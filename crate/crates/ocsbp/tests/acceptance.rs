//! End-to-end acceptance gate. Each test pins one release criterion and
//! prints a single pass line with the measured values.
//!
//! The desk-scale criteria (goal-reaching training, flexible-K slot
//! usage) share one cached 20k-step run under `CARGO_TARGET_TMPDIR`; the
//! first execution trains it (hours on one core), later executions reuse
//! the checkpoint byte-for-byte because training is deterministic.

use std::collections::BTreeSet;
use std::path::PathBuf;
use std::sync::OnceLock;

use ocsbp::config::RunConfig;
use ocsbp::data::{generate_corpus, read_corpus, split_indices, CorpusRecord, SpriteSceneSpec};
use ocsbp::embeddings::{coordinate_grid, init_embedding_head, semiconv_embed, EMBED_DIM};
use ocsbp::geco::{compute_loss, GecoState, BETA_MIN, ETA_DOWN, ETA_UP};
use ocsbp::icsbp::{icsbp_cluster, StopPolicy};
use ocsbp::kernels::{
    kernel_init_sigma, squared_distance_field, DistanceKernel, KernelKind, SeedKernel,
};
use ocsbp::likelihood::{gaussian_kl, mask_consistency_kl, sgmm_log_likelihood, DiagGaussian,
    SceneComponents};
use ocsbp::metrics::{ari, msc};
use ocsbp::model::{Model, ModelConfig, PriorKind};
use ocsbp::tensor::gradcheck::GradCheck;
use ocsbp::tensor::{checkpoint, Binder, ParamStore};
use ocsbp::training::{evaluate, image_to_array, train};
use ocsbp::{Array, Graph, RngState, Tensor};

const KINDS: [KernelKind; 3] = [
    KernelKind::Gaussian,
    KernelKind::Laplacian,
    KernelKind::Epanechnikov,
];

fn tmpdir(name: &str) -> PathBuf {
    let dir = PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join(name);
    std::fs::create_dir_all(&dir).unwrap();
    dir
}

fn tiny_model_config() -> ModelConfig {
    ModelConfig {
        image_size: (16, 16),
        channels: 3,
        k_train: 3,
        latent_dim: 4,
        backbone_filters: vec![8],
        d_e: 8,
        d_f: 8,
        head_filters: 8,
        head_hidden: 8,
        decoder_filters: 8,
        prior_hidden: 8,
        kernel: KernelKind::Gaussian,
        prior: PriorKind::Independent,
    }
}

/// Finite differences straddle the Epanechnikov support edge; only use
/// fields where every pixel sits clear of psi = 0.
fn clear_of_kink(kind: KernelKind, field: &Array<f64>, sigma: f64) -> bool {
    if kind != KernelKind::Epanechnikov {
        return true;
    }
    let (d, n) = (field.shape()[0], field.shape()[1] * field.shape()[2]);
    for a in 0..n {
        for b in 0..n {
            let sq: f64 = (0..d)
                .map(|c| {
                    let diff = field.data()[c * n + a] - field.data()[c * n + b];
                    diff * diff
                })
                .sum();
            if (1.0 - sq / sigma).abs() < 0.02 {
                return false;
            }
        }
    }
    true
}

// ---------------------------------------------------------------- 1 ----

#[test]
fn criterion_1_gradients_match_finite_differences() {
    let started = std::time::Instant::now();
    let check = GradCheck::default();
    let mut instances = 0usize;

    // distance kernels: gradients w.r.t. the field and log sigma
    for (ki, &kind) in KINDS.iter().enumerate() {
        let mut seed = 100 * ki as u64;
        let mut done = 0;
        while done < 12 {
            seed += 1;
            let mut rng = RngState::new(seed);
            let (d, h, w) = (2, 3, 3);
            let data: Vec<f64> = rng.normal_vec(d * h * w).iter().map(|v| 0.4 * v).collect();
            let field = Array::new(vec![d, h, w], data);
            let k = 2 + rng.gen_index(4);
            let sigma = kernel_init_sigma(kind, k).unwrap();
            if !clear_of_kink(kind, &field, sigma) {
                continue;
            }
            let probe = Array::new(vec![h, w], rng.normal_vec(h * w));
            let (i0, j0) = (rng.gen_index(h), rng.gen_index(w));
            check
                .check(&[field, Array::scalar(sigma.ln())], move |g, inputs| {
                    let kernel = DistanceKernel::new(kind, inputs[1].clone());
                    let seed = inputs[0].narrow(1, i0, 1).narrow(2, j0, 1).reshape(&[d]);
                    kernel
                        .attention(&inputs[0], &seed)
                        .mul(&g.constant(probe.clone()))
                        .sum_all()
                })
                .unwrap_or_else(|e| panic!("kernel {} seed {seed}: {e}", kind.name()));
            done += 1;
            instances += 1;
        }
    }

    // stick-breaking masks: gradients w.r.t. embeddings and log sigma
    let policies: Vec<(KernelKind, StopPolicy)> = KINDS
        .iter()
        .flat_map(|&kind| (2..10).map(move |k| (kind, StopPolicy::FixedK { k: 2 + k % 3 })))
        .chain((0..6).map(|k| {
            (
                KernelKind::Gaussian,
                StopPolicy::MassThreshold {
                    tau_pixels: 1.0,
                    k_max: 2 + k % 3,
                },
            )
        }))
        .collect();
    let mut seed = 5000u64;
    for (kind, policy) in policies {
        loop {
            seed += 1;
            let mut rng = RngState::new(seed);
            let (d, h, w) = (2, 4, 4);
            let data: Vec<f64> = rng.normal_vec(d * h * w).iter().map(|v| 0.4 * v).collect();
            let field = Array::new(vec![d, h, w], data);
            let sigma = kernel_init_sigma(kind, policy.max_masks()).unwrap();
            if !clear_of_kink(kind, &field, sigma) {
                continue;
            }
            // the mask count must be stable under perturbation for finite
            // differences to make sense; probe it once up front
            let count = {
                let g: Graph<f64> = Graph::new();
                let f = g.constant(field.clone());
                let kernel = DistanceKernel::new(kind, g.constant(Array::scalar(sigma.ln())));
                icsbp_cluster(&f, &kernel, policy, &mut RngState::new(seed)).len()
            };
            let probe = Array::new(vec![count, h, w], rng.normal_vec(count * h * w));
            let result = check.check(&[field, Array::scalar(sigma.ln())], move |g, inputs| {
                let kernel = DistanceKernel::new(kind, inputs[1].clone());
                let masks =
                    icsbp_cluster(&inputs[0], &kernel, policy, &mut RngState::new(seed));
                assert_eq!(masks.len(), count, "mask count changed under perturbation");
                masks.stacked().mul(&g.constant(probe.clone())).sum_all()
            });
            match result {
                Ok(()) => break,
                // a seed-pixel argmax flip under perturbation is a real
                // discontinuity, not a gradient bug; resample the field
                Err(e) if e.contains("coord") => {
                    let margin_flip = {
                        let g: Graph<f64> = Graph::new();
                        let f = g.constant(field_bump(seed, d, h, w, 2e-4));
                        let kernel =
                            DistanceKernel::new(kind, g.constant(Array::scalar(sigma.ln())));
                        icsbp_cluster(&f, &kernel, policy, &mut RngState::new(seed)).seed_pixels
                    } != {
                        let g: Graph<f64> = Graph::new();
                        let f = g.constant(field_bump(seed, d, h, w, -2e-4));
                        let kernel =
                            DistanceKernel::new(kind, g.constant(Array::scalar(sigma.ln())));
                        icsbp_cluster(&f, &kernel, policy, &mut RngState::new(seed)).seed_pixels
                    };
                    if margin_flip {
                        continue;
                    }
                    panic!("icsbp {} {policy:?} seed {seed}: {e}", kind.name());
                }
                Err(e) => panic!("icsbp {} {policy:?} seed {seed}: {e}", kind.name()),
            }
        }
        instances += 1;
    }

    // mixture likelihood: gradients w.r.t. image, means and mask logits
    for seed in 0..20u64 {
        let mut rng = RngState::new(9000 + seed);
        let (k, c, h, w) = (1 + rng.gen_index(4), 3, 3, 3);
        let x = Array::new(vec![c, h, w], rng.uniform_vec(c * h * w));
        let means = Array::new(vec![k, c, h, w], rng.normal_vec(k * c * h * w));
        let logits = Array::new(vec![k, h, w], rng.normal_vec(k * h * w));
        check
            .check(&[x, means, logits], move |_, inputs| {
                let masks_pi = inputs[2].softmax(0);
                let comps = SceneComponents {
                    means: inputs[1].clone(),
                    mask_logits: inputs[2].clone(),
                    masks_pi,
                };
                sgmm_log_likelihood(&inputs[0], &comps, 0.7).unwrap()
            })
            .unwrap_or_else(|e| panic!("sgmm seed {seed}: {e}"));
        instances += 1;
    }

    // latent KL: gradients w.r.t. both distributions
    for seed in 0..15u64 {
        let mut rng = RngState::new(11000 + seed);
        let dim = 1 + rng.gen_index(6);
        let arrays: Vec<Array<f64>> = (0..4)
            .map(|_| {
                Array::new(
                    vec![dim],
                    rng.normal_vec(dim).iter().map(|v| 0.5 * v).collect::<Vec<_>>(),
                )
            })
            .collect();
        check
            .check(&arrays, |_, inputs| {
                let q = DiagGaussian::new(inputs[0].clone(), inputs[1].clone());
                let p = DiagGaussian::new(inputs[2].clone(), inputs[3].clone());
                gaussian_kl(&q, &p).unwrap()
            })
            .unwrap_or_else(|e| panic!("gaussian kl seed {seed}: {e}"));
        instances += 1;
    }

    // mask consistency KL: gradients w.r.t. the attention side only (the
    // mixture side is gradient-stopped by construction)
    for seed in 0..10u64 {
        let mut rng = RngState::new(13000 + seed);
        let (k, h, w) = (2 + rng.gen_index(3), 3, 3);
        let logits = Array::new(vec![k, h, w], rng.normal_vec(k * h * w));
        let pi = {
            let g: Graph<f64> = Graph::new();
            g.constant(Array::new(vec![k, h, w], rng.normal_vec(k * h * w)))
                .softmax(0)
                .value()
        };
        check
            .check(&[logits], move |g, inputs| {
                mask_consistency_kl(&inputs[0].softmax(0), &g.constant(pi.clone())).unwrap()
            })
            .unwrap_or_else(|e| panic!("mask kl seed {seed}: {e}"));
        instances += 1;
    }

    // full model loss: gradients w.r.t. the input image, sampled coords
    let sparse = GradCheck {
        max_coords: 6,
        ..GradCheck::default()
    };
    for seed in 0..6u64 {
        let model: Model<f64> = Model::init(tiny_model_config(), 40 + seed).unwrap();
        let mut rng = RngState::new(15000 + seed);
        let x = Array::new(vec![3, 16, 16], rng.uniform_vec(3 * 16 * 16));
        let k = model.config.k_train;
        let model_ref = &model;
        sparse
            .check(&[x], move |g, inputs| {
                let binder = Binder::new(&model_ref.store, g);
                let mut rng = RngState::new(seed);
                let result =
                    model_ref.encode_on(&binder, &inputs[0], StopPolicy::FixedK { k }, &mut rng);
                let (loss, _) = compute_loss(&result, &inputs[0], 0.7, 1.0, false).unwrap();
                loss
            })
            .unwrap_or_else(|e| panic!("model loss seed {seed}: {e}"));
        instances += 1;
    }

    assert!(instances >= 100, "only {instances} gradient instances");
    println!(
        "[PASS] criterion 1: {instances} gradient instances match finite differences \
         (rel tol 1e-4, {:.1}s)",
        started.elapsed().as_secs_f64()
    );
}

fn field_bump(seed: u64, d: usize, h: usize, w: usize, eps: f64) -> Array<f64> {
    let mut rng = RngState::new(seed);
    let data: Vec<f64> = rng
        .normal_vec(d * h * w)
        .iter()
        .map(|v| 0.4 * v + eps)
        .collect();
    Array::new(vec![d, h, w], data)
}

// ---------------------------------------------------------------- 2 ----

#[test]
fn criterion_2_masks_partition_every_pixel() {
    let mut worst = 0.0f64;
    for i in 0..1000u64 {
        let kind = KINDS[(i % 3) as usize];
        let mut rng = RngState::new(i);
        let (d, h, w) = (2, 6, 6);
        let scale = 0.2 + 3.0 * rng.uniform_open01();
        let data: Vec<f64> = rng.normal_vec(d * h * w).iter().map(|v| scale * v).collect();
        for policy in [
            StopPolicy::FixedK {
                k: 2 + (i % 5) as usize,
            },
            StopPolicy::MassThreshold {
                tau_pixels: 1.0 + 150.0 * rng.uniform_open01(),
                k_max: 2 + (i % 5) as usize,
            },
        ] {
            let g: Graph<f64> = Graph::new();
            let field = g.constant(Array::new(vec![d, h, w], data.clone()));
            let sigma = kernel_init_sigma(kind, policy.max_masks()).unwrap();
            let kernel = DistanceKernel::new(kind, g.constant(Array::scalar(sigma.ln())));
            let masks = icsbp_cluster(&field, &kernel, policy, &mut rng);
            assert!(masks.len() <= policy.max_masks());
            let sums = masks.stacked().sum_axes(&[0], false).value();
            for &s in sums.data() {
                worst = worst.max((s - 1.0).abs());
            }
        }
    }
    assert!(worst <= 1e-5, "worst partition error {worst:.3e}");
    println!(
        "[PASS] criterion 2: 1000 fields x 3 kernels x 2 policies partition to one \
         (max |sum - 1| = {worst:.2e} <= 1e-5)"
    );
}

// ---------------------------------------------------------------- 3 ----

#[test]
fn criterion_3_half_response_at_expected_cluster_spacing() {
    // with the zero-initialised projection, embeddings are exactly the
    // pixel coordinates, so kernel distances are spatial distances
    let (h, w) = (5, 5);
    let mut store: ParamStore<f64> = ParamStore::new();
    let mut rng = RngState::new(3);
    init_embedding_head(&mut store, "attention", 4, 8, &mut rng);
    let g: Graph<f64> = Graph::new();
    let binder = Binder::new(&store, &g);
    let features = g.constant(Array::new(vec![4, h, w], rng.normal_vec(4 * h * w)));
    let zeta = semiconv_embed(&features, &binder, "attention").value();
    let grid = coordinate_grid::<f64>(h, w);
    let n = h * w;
    for p in 0..n {
        assert_eq!(zeta.data()[p], grid.data()[p], "x coordinate at {p}");
        assert_eq!(zeta.data()[n + p], grid.data()[n + p], "y coordinate at {p}");
    }
    for v in &zeta.data()[2 * n..] {
        assert_eq!(*v, 0.0, "free channels must start at zero");
    }

    // each kernel initialised for K clusters responds with exactly 1/2 at
    // embedding distance 1/sqrt(K)
    let mut worst = 0.0f64;
    for k in [4usize, 7, 9] {
        for &kind in &KINDS {
            let sigma = kernel_init_sigma(kind, k).unwrap();
            let r = 1.0 / (k as f64).sqrt();
            let dir = [0.6, 0.8];
            let mut data = vec![0.0; EMBED_DIM * 2];
            for (c, &u) in dir.iter().enumerate() {
                data[c * 2] = -1.0;
                data[c * 2 + 1] = -1.0 + r * u;
            }
            let g: Graph<f64> = Graph::new();
            let field = g.constant(Array::new(vec![EMBED_DIM, 1, 2], data));
            let seed = field.narrow(1, 0, 1).narrow(2, 0, 1).reshape(&[EMBED_DIM]);
            let kernel = DistanceKernel::new(kind, g.constant(Array::scalar(sigma.ln())));
            let alpha = kernel.attention(&field, &seed).value();
            assert_eq!(alpha.data()[0], 1.0, "self-response must be one");
            let err = (alpha.data()[1] - 0.5).abs();
            assert!(err <= 1e-3, "{} K={k}: alpha {}", kind.name(), alpha.data()[1]);
            worst = worst.max(err);
        }
    }
    println!(
        "[PASS] criterion 3: alpha(1/sqrt(K)) = 0.5 for K in {{4,7,9}}, all kernels \
         (max err {worst:.1e} <= 1e-3), zero-init embeddings = coordinates exactly"
    );
}

// ---------------------------------------------------------------- 4 ----

/// Binary attention: 1 inside a fixed squared distance, else 0.
struct ThresholdKernel {
    threshold: f64,
}

impl SeedKernel<f64> for ThresholdKernel {
    fn attention(&self, field: &Tensor<f64>, seed: &Tensor<f64>) -> Tensor<f64> {
        let sq = squared_distance_field(field, seed).value();
        let data: Vec<f64> = sq
            .data()
            .iter()
            .map(|&v| if v < self.threshold { 1.0 } else { 0.0 })
            .collect();
        field.graph().constant(Array::new(sq.shape().to_vec(), data))
    }
}

#[test]
fn criterion_4_hard_kernel_partition_is_seed_order_invariant() {
    let (h, w) = (8, 8);
    let centres = [[0.0, 0.0], [4.0, 0.0], [0.0, 4.0], [4.0, 4.0]];
    for case in 0..100u64 {
        let mut rng = RngState::new(300 + case);
        let n_clusters = 2 + rng.gen_index(3);
        let mut assignment = vec![0usize; h * w];
        let mut data = vec![0.0f64; 2 * h * w];
        for p in 0..h * w {
            let c = rng.gen_index(n_clusters);
            assignment[p] = c;
            for d in 0..2 {
                data[d * h * w + p] = centres[c][d] + 0.3 * (rng.uniform_open01() - 0.5);
            }
        }
        // make sure every cluster is populated
        for c in 0..n_clusters {
            assignment[c] = c;
            for d in 0..2 {
                data[d * h * w + c] = centres[c][d];
            }
        }
        let policy = StopPolicy::MassThreshold {
            tau_pixels: 0.5 * 4096.0 / (h * w) as f64,
            k_max: 8,
        };
        let partition = |seed: u64| -> BTreeSet<Vec<usize>> {
            let g: Graph<f64> = Graph::new();
            let field = g.constant(Array::new(vec![2, h, w], data.clone()));
            let kernel = ThresholdKernel { threshold: 1.0 };
            let masks = icsbp_cluster(&field, &kernel, policy, &mut RngState::new(seed));
            let hard = masks.hard_assignment();
            let mut groups: Vec<Vec<usize>> = vec![Vec::new(); masks.len()];
            for (p, &s) in hard.iter().enumerate() {
                groups[s].push(p);
            }
            groups.into_iter().filter(|gr| !gr.is_empty()).collect()
        };
        let a = partition(1000 + case);
        let b = partition(7777 + case);
        assert_eq!(a.len(), n_clusters, "case {case}: wrong cluster count");
        assert_eq!(a, b, "case {case}: partitions differ across seed orders");
        let truth: BTreeSet<Vec<usize>> = (0..n_clusters)
            .map(|c| (0..h * w).filter(|&p| assignment[p] == c).collect())
            .collect();
        assert_eq!(a, truth, "case {case}: partition does not match construction");
    }
    println!(
        "[PASS] criterion 4: hard-kernel partitions identical across seed orders \
         on 100 separable fields"
    );
}

// ---------------------------------------------------------------- 5 ----

/// ARI from raw pair counting, the textbook definition.
fn ari_pair_oracle(pred: &[u32], truth: &[u32]) -> f64 {
    let n = pred.len();
    let (mut s11, mut s10, mut s01, mut s00) = (0.0f64, 0.0, 0.0, 0.0);
    for i in 0..n {
        for j in i + 1..n {
            match (pred[i] == pred[j], truth[i] == truth[j]) {
                (true, true) => s11 += 1.0,
                (true, false) => s10 += 1.0,
                (false, true) => s01 += 1.0,
                (false, false) => s00 += 1.0,
            }
        }
    }
    let den = (s11 + s10) * (s10 + s00) + (s11 + s01) * (s01 + s00);
    if den == 0.0 {
        return 1.0;
    }
    2.0 * (s11 * s00 - s10 * s01) / den
}

/// MSC from explicit segment sets and intersection counting.
fn msc_iou_oracle(pred: &[u32], truth: &[u32]) -> f64 {
    let t_labels: BTreeSet<u32> = truth.iter().copied().collect();
    let p_labels: BTreeSet<u32> = pred.iter().copied().collect();
    let mut total = 0.0;
    for &t in &t_labels {
        let t_set: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] == t).collect();
        let mut best = 0.0f64;
        for &p in &p_labels {
            let p_set: Vec<usize> = (0..pred.len()).filter(|&i| pred[i] == p).collect();
            let inter = t_set.iter().filter(|i| p_set.contains(i)).count() as f64;
            let union = (t_set.len() + p_set.len()) as f64 - inter;
            best = best.max(inter / union);
        }
        total += best;
    }
    total / t_labels.len() as f64
}

fn fg_restrict(pred: &[u32], truth: &[u32]) -> (Vec<u32>, Vec<u32>) {
    let idx: Vec<usize> = (0..truth.len()).filter(|&i| truth[i] != 0).collect();
    (
        idx.iter().map(|&i| pred[i]).collect(),
        idx.iter().map(|&i| truth[i]).collect(),
    )
}

#[test]
fn criterion_5_metrics_match_independent_oracles() {
    // known values
    assert!((ari(&[0, 0, 1, 1], &[0, 1, 0, 1], false).unwrap() + 0.5).abs() < 1e-12);
    assert_eq!(ari(&[2, 2, 5, 5], &[2, 2, 5, 5], false).unwrap(), 1.0);
    assert_eq!(msc(&[2, 2, 5, 5], &[7, 7, 1, 1], false, false).unwrap(), 1.0);

    // exhaustive: every pair of label maps up to 5 pixels with 3 labels
    let mut exhaustive = 0usize;
    for n in 2..=5usize {
        let maps = 3usize.pow(n as u32);
        let decode = |mut m: usize| -> Vec<u32> {
            (0..n)
                .map(|_| {
                    let l = (m % 3) as u32;
                    m /= 3;
                    l
                })
                .collect()
        };
        for pm in 0..maps {
            let pred = decode(pm);
            for tm in 0..maps {
                let truth = decode(tm);
                let got = ari(&pred, &truth, false).unwrap();
                let want = ari_pair_oracle(&pred, &truth);
                assert!(
                    (got - want).abs() < 1e-12,
                    "ARI {pred:?} vs {truth:?}: {got} != {want}"
                );
                if truth.iter().any(|&t| t != 0) {
                    let (pf, tf) = fg_restrict(&pred, &truth);
                    let got = ari(&pred, &truth, true).unwrap();
                    let want = ari_pair_oracle(&pf, &tf);
                    assert!((got - want).abs() < 1e-12, "fg ARI {pred:?} vs {truth:?}");
                }
                exhaustive += 1;
            }
        }
    }

    // sampled: larger maps, plus the covering metric against direct IOU
    let mut rng = RngState::new(55);
    for case in 0..1000 {
        let n = 6 + rng.gen_index(4);
        let pred: Vec<u32> = (0..n).map(|_| rng.gen_index(4) as u32).collect();
        let truth: Vec<u32> = (0..n).map(|_| rng.gen_index(4) as u32).collect();
        let got = ari(&pred, &truth, false).unwrap();
        let want = ari_pair_oracle(&pred, &truth);
        assert!((got - want).abs() < 1e-12, "case {case} ARI {got} != {want}");
        let got = msc(&pred, &truth, false, false).unwrap();
        let want = msc_iou_oracle(&pred, &truth);
        assert!((got - want).abs() < 1e-12, "case {case} MSC {got} != {want}");
        if truth.iter().any(|&t| t != 0) {
            let (pf, tf) = fg_restrict(&pred, &truth);
            let got = msc(&pred, &truth, true, false).unwrap();
            let want = msc_iou_oracle(&pf, &tf);
            assert!((got - want).abs() < 1e-12, "case {case} fg MSC");
        }
    }
    println!(
        "[PASS] criterion 5: ARI matches pair counting on {exhaustive} exhaustive + \
         1000 sampled cases, MSC matches direct IOU, ARI(-0.5) and identity cases exact"
    );
}

// ---------------------------------------------------------------- 6 ----

#[test]
fn criterion_6_constraint_controller_dynamics() {
    let goal = 0.5655 * (32 * 32 * 3) as f64;

    // exact one-step factors, both sides of the goal
    let mut st = GecoState::new(0.5655, (32, 32), 3, false);
    st.update(goal + 500.0);
    let want = (ETA_DOWN * -500.0).exp();
    assert!((st.beta - want).abs() < 1e-15, "down step {} != {want}", st.beta);
    let mut st = GecoState::new(0.5655, (32, 32), 3, false);
    st.update(goal - 500.0);
    let want = (ETA_UP * 500.0).exp();
    assert!((st.beta - want).abs() < 1e-15, "up step {} != {want}", st.beta);

    // asymmetry: relaxing is 10x slower than tightening
    let down = (1.0f64.ln() - (ETA_DOWN * -500.0f64).exp().ln()).abs();
    let up = ((ETA_UP * 500.0f64).exp().ln()).abs();
    assert!((up / down - ETA_UP / ETA_DOWN).abs() < 1e-9);

    // fixed point: error at the goal leaves beta untouched forever
    let mut st = GecoState::new(0.5655, (32, 32), 3, false);
    for _ in 0..100 {
        st.update(goal);
        assert_eq!(st.beta, 1.0);
        assert_eq!(st.ema_error, Some(goal));
    }

    // monotonicity under persistent violation / satisfaction
    let mut st = GecoState::new(0.5655, (32, 32), 3, false);
    let mut prev = st.beta;
    for _ in 0..50 {
        st.update(goal + 2000.0);
        assert!(st.beta < prev, "beta must fall while above the goal");
        prev = st.beta;
    }
    let mut st = GecoState::new(0.5655, (32, 32), 3, false);
    let mut prev = st.beta;
    for _ in 0..50 {
        st.update(goal - 2000.0);
        assert!(st.beta > prev, "beta must rise while below the goal");
        prev = st.beta;
    }

    // hard floor
    let mut st = GecoState::new(0.5655, (32, 32), 3, false);
    for _ in 0..100_000 {
        st.update(goal + 1e9);
        assert!(st.beta >= BETA_MIN);
    }
    assert_eq!(st.beta, BETA_MIN);

    println!(
        "[PASS] criterion 6: controller fixed point, monotone both sides, 10x step \
         asymmetry, floor at {BETA_MIN:.0e}"
    );
}

// ---------------------------------------------------------------- 7 ----

#[test]
fn criterion_7_mixture_likelihood_matches_linear_domain() {
    let mut worst = 0.0f64;
    for seed in 0..20u64 {
        let mut rng = RngState::new(700 + seed);
        let (k, c, h, w) = (1 + rng.gen_index(4), 3, 4, 4);
        let x: Vec<f64> = rng.uniform_vec(c * h * w);
        let means: Vec<f64> = rng.normal_vec(k * c * h * w);
        let pi = {
            let g: Graph<f64> = Graph::new();
            g.constant(Array::new(vec![k, h, w], rng.normal_vec(k * h * w)))
                .softmax(0)
                .value()
                .to_f64_vec()
        };
        let sigma_x = 0.3 + rng.uniform_open01();

        // linear-domain oracle
        let norm = 1.0 / ((2.0 * std::f64::consts::PI).sqrt() * sigma_x);
        let mut want = 0.0f64;
        for ch in 0..c {
            for p in 0..h * w {
                let xv = x[ch * h * w + p];
                let mix: f64 = (0..k)
                    .map(|s| {
                        let mu = means[s * c * h * w + ch * h * w + p];
                        pi[s * h * w + p]
                            * norm
                            * (-(xv - mu) * (xv - mu) / (2.0 * sigma_x * sigma_x)).exp()
                    })
                    .sum();
                want += mix.ln();
            }
        }

        let eval = |means: &[f64], pi: &[f64]| -> f64 {
            let g: Graph<f64> = Graph::new();
            let masks_pi = g.constant(Array::new(vec![k, h, w], pi.to_vec()));
            let comps = SceneComponents {
                means: g.constant(Array::new(vec![k, c, h, w], means.to_vec())),
                mask_logits: masks_pi.clamp_min(1e-12).log(),
                masks_pi,
            };
            let xt = g.constant(Array::new(vec![c, h, w], x.clone()));
            sgmm_log_likelihood(&xt, &comps, sigma_x).unwrap().item()
        };
        let got = eval(&means, &pi);
        let err = (got - want).abs() / want.abs().max(1.0);
        assert!(err <= 1e-6, "seed {seed}: {got} vs oracle {want}");
        worst = worst.max(err);

        // slot order must not matter
        let perm: Vec<usize> = RngState::new(seed).shuffled_indices(k);
        let means_p: Vec<f64> = perm
            .iter()
            .flat_map(|&s| means[s * c * h * w..(s + 1) * c * h * w].to_vec())
            .collect();
        let pi_p: Vec<f64> = perm
            .iter()
            .flat_map(|&s| pi[s * h * w..(s + 1) * h * w].to_vec())
            .collect();
        let got_p = eval(&means_p, &pi_p);
        assert!(
            (got - got_p).abs() <= 1e-6,
            "seed {seed}: permutation changed likelihood by {}",
            (got - got_p).abs()
        );
    }
    println!(
        "[PASS] criterion 7: log-sum-exp likelihood matches linear-domain oracle \
         (worst rel err {worst:.1e} <= 1e-6) and is slot-permutation invariant"
    );
}

// ----------------------------------------------------------- 8 and 9 ----

struct Smoke {
    model: Model<f32>,
    test_records: Vec<CorpusRecord>,
    ema_error: f64,
    goal: f64,
}

fn smoke() -> &'static Smoke {
    static CACHE: OnceLock<Smoke> = OnceLock::new();
    CACHE.get_or_init(|| {
        let dir = tmpdir("acceptance_smoke");
        let spec = SpriteSceneSpec {
            n_objects: (1, 3),
            distinct_colors: true,
            ..SpriteSceneSpec::default()
        };
        let corpus = dir.join("corpus.ocrs");
        if !corpus.exists() {
            generate_corpus(&spec, 2500, 11, &corpus).unwrap();
        }
        let (_, records) = read_corpus(&corpus).unwrap();
        let cfg = RunConfig::from_json(r#"{"steps": 20000, "seed": 0}"#).unwrap();
        let mut model: Model<f32> = Model::init(cfg.model_config(), cfg.seed).unwrap();
        let mut geco = cfg.geco_state();
        let goal = geco.goal;

        // resume from whatever the cache holds; train the remainder
        let ckpt_dir = dir.join("ckpt");
        let latest = std::fs::read_dir(&ckpt_dir)
            .ok()
            .into_iter()
            .flatten()
            .filter_map(|e| {
                let name = e.ok()?.file_name().into_string().ok()?;
                name.strip_prefix("step-")?
                    .strip_suffix(".ocpt")?
                    .parse::<u64>()
                    .ok()
            })
            .max();
        if let Some(step) = latest {
            let loaded = checkpoint::load(&ckpt_dir.join(format!("step-{step}.ocpt"))).unwrap();
            loaded.install(&mut model.store);
            geco.beta = loaded.footer.geco_beta;
            geco.ema_error = Some(loaded.footer.geco_ema);
        }
        let (train_idx, _, test_idx) = split_indices(records.len(), cfg.seed);
        if model.store.step() < cfg.steps {
            let images: Vec<Array<f32>> = train_idx
                .iter()
                .map(|&i| image_to_array(&records[i].image, 32, 32, 3))
                .collect();
            train(&mut model, &images, &cfg.train_config(), &mut geco, &dir).unwrap();
        }
        Smoke {
            model,
            test_records: test_idx.iter().map(|&i| records[i].clone()).collect(),
            ema_error: geco.ema_error.unwrap(),
            goal,
        }
    })
}

#[test]
fn criterion_8_desk_scale_training_reaches_the_goal() {
    let s = smoke();
    let rel = (s.ema_error - s.goal).abs() / s.goal;
    assert!(
        rel <= 0.10,
        "EMA error {} vs goal {} ({:.1}% off)",
        s.ema_error,
        s.goal,
        100.0 * rel
    );
    let k = s.model.config.k_train;
    let eval = evaluate(&s.model, &s.test_records, StopPolicy::FixedK { k }, 0.7, 123).unwrap();
    assert!(
        eval.ari_fg > 0.5,
        "held-out foreground ARI {} <= 0.5",
        eval.ari_fg
    );
    println!(
        "[PASS] criterion 8: 20k-step run reaches EMA {:.1} vs goal {:.1} ({:.2}% off, \
         <= 10%), held-out ARI-FG {:.3} > 0.5 (MSC-FG {:.3}, ELBO {:.1})",
        s.ema_error,
        s.goal,
        100.0 * rel,
        eval.ari_fg,
        eval.msc_fg,
        eval.elbo
    );
}

#[test]
fn criterion_9_flexible_stopping_uses_fewer_slots() {
    let s = smoke();
    let k = s.model.config.k_train;
    let fixed = evaluate(&s.model, &s.test_records, StopPolicy::FixedK { k }, 0.7, 123).unwrap();
    let flexible = evaluate(
        &s.model,
        &s.test_records,
        StopPolicy::MassThreshold {
            tau_pixels: 20.0,
            k_max: 9,
        },
        0.7,
        123,
    )
    .unwrap();
    assert!(
        flexible.avg_slots < fixed.avg_slots,
        "flexible {} slots vs fixed {}",
        flexible.avg_slots,
        fixed.avg_slots
    );
    assert!(
        flexible.slot_mae <= fixed.slot_mae,
        "flexible MAE {} vs fixed {}",
        flexible.slot_mae,
        fixed.slot_mae
    );
    println!(
        "[PASS] criterion 9: mass-threshold stopping averages {:.2} slots vs {:.2} fixed, \
         slot MAE {:.2} vs {:.2} (ARI-FG {:.3} vs {:.3})",
        flexible.avg_slots,
        fixed.avg_slots,
        flexible.slot_mae,
        fixed.slot_mae,
        flexible.ari_fg,
        fixed.ari_fg
    );
}

// --------------------------------------------------------------- 10 ----

const TINY_RUN: &str = r#"{
    "image_height": 16, "image_width": 16, "k_train": 3, "latent_dim": 4,
    "backbone_filters": [8], "d_e": 8, "d_f": 8, "head_filters": 8,
    "head_hidden": 8, "decoder_filters": 8, "prior_hidden": 8,
    "prior": "independent", "steps": 6, "batch_size": 2, "log_every": 1,
    "save_every": 3, "precision": "f64", "seed": 3
}"#;

#[test]
fn criterion_10_determinism_and_byte_exact_round_trips() {
    // identical seeds produce bit-identical training logs and checkpoints
    let spec = SpriteSceneSpec {
        image_size: (16, 16),
        min_object_radius: 2,
        max_object_radius: 3,
        n_objects: (1, 2),
        ..SpriteSceneSpec::default()
    };
    let base = tmpdir("acceptance_determinism");
    let corpus = base.join("tiny.ocrs");
    generate_corpus(&spec, 8, 21, &corpus).unwrap();
    let (_, records) = read_corpus(&corpus).unwrap();
    let cfg = RunConfig::from_json(TINY_RUN).unwrap();
    let images: Vec<Array<f64>> = records
        .iter()
        .map(|r| image_to_array(&r.image, 16, 16, 3))
        .collect();
    let mut runs = Vec::new();
    for name in ["a", "b"] {
        let dir = base.join(name);
        if dir.exists() {
            std::fs::remove_dir_all(&dir).unwrap();
        }
        std::fs::create_dir_all(&dir).unwrap();
        let mut model: Model<f64> = Model::init(cfg.model_config(), cfg.seed).unwrap();
        let mut geco = cfg.geco_state();
        train(&mut model, &images, &cfg.train_config(), &mut geco, &dir).unwrap();
        runs.push(dir);
    }
    let bytes = |p: &PathBuf| std::fs::read(p).unwrap();
    assert_eq!(
        bytes(&runs[0].join("metrics.csv")),
        bytes(&runs[1].join("metrics.csv")),
        "metrics logs differ between identically seeded runs"
    );
    assert_eq!(
        bytes(&runs[0].join("ckpt/step-6.ocpt")),
        bytes(&runs[1].join("ckpt/step-6.ocpt")),
        "checkpoints differ between identically seeded runs"
    );

    // corpus generation and the corpus format are byte-stable
    let corpus2 = base.join("tiny2.ocrs");
    generate_corpus(&spec, 8, 21, &corpus2).unwrap();
    assert_eq!(bytes(&corpus), bytes(&corpus2), "corpus generation not stable");
    let (header, back) = read_corpus(&corpus).unwrap();
    assert_eq!(back, records);
    let rewritten = base.join("tiny3.ocrs");
    ocsbp::data::write_corpus(&back, header.height, header.width, header.channels, &rewritten)
        .unwrap();
    assert_eq!(bytes(&corpus), bytes(&rewritten), "corpus round trip not byte-exact");

    // checkpoints survive a load/install/save cycle byte-for-byte
    let ck = runs[0].join("ckpt/step-6.ocpt");
    let loaded = checkpoint::load(&ck).unwrap();
    let mut model: Model<f64> = Model::init(cfg.model_config(), cfg.seed).unwrap();
    loaded.install(&mut model.store);
    let ck2 = base.join("resaved.ocpt");
    checkpoint::save(&ck2, &model.store, &loaded.footer).unwrap();
    assert_eq!(bytes(&ck), bytes(&ck2), "checkpoint round trip not byte-exact");

    println!(
        "[PASS] criterion 10: seeded reruns bit-identical (metrics + checkpoint), corpus \
         and checkpoint formats round-trip byte-exact"
    );
}
