//! Training and evaluation loops.
//!
//! Training accumulates per-image gradients over a batch, applies one Adam
//! update, then advances the GECO controller on the batch-mean nll. Every
//! source of randomness (batch selection, seed scores, reparameterisation
//! noise) is derived from the run seed and the step index, so a run is
//! reproducible from its config alone.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use thiserror::Error;

use crate::data::CorpusRecord;
use crate::geco::{compute_loss, GecoState, LossBreakdown};
use crate::icsbp::{icsbp_count_slots, StopPolicy};
use crate::likelihood::LikelihoodError;
use crate::metrics::{ari, msc, slot_count_mae, MetricError};
use crate::model::Model;
use crate::tensor::checkpoint::{save, CheckpointError, Footer};
use crate::tensor::params::ParamError;
use crate::tensor::{adam_step, apply_grads, AdamConfig, Array, Binder, El, Graph, RngState};

pub const METRICS_HEADER: &str = "step,nll,kl_latent,kl_mask,beta,ema_error";

#[derive(Debug, Error)]
pub enum TrainError {
    #[error("training corpus is empty")]
    EmptyCorpus,
    #[error("non-finite loss at step {step}: {breakdown:?}")]
    NonFinite { step: u64, breakdown: LossBreakdown },
    #[error(transparent)]
    Likelihood(#[from] LikelihoodError),
    #[error(transparent)]
    Optim(#[from] ParamError),
    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),
    #[error("train i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Metric(#[from] MetricError),
}

#[derive(Debug, Clone, Copy)]
pub struct TrainConfig {
    pub steps: u64,
    pub batch_size: usize,
    pub lr: f64,
    pub log_every: u64,
    pub save_every: u64,
    pub sigma_x: f64,
    pub use_mask_loss: bool,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 20_000,
            batch_size: 8,
            lr: 1e-4,
            log_every: 50,
            save_every: 2_000,
            sigma_x: 0.7,
            use_mask_loss: false,
            seed: 0,
        }
    }
}

/// Convert one interleaved-u8 record image to a `[c, h, w]` float array
/// in [0, 1].
pub fn image_to_array<T: El>(image: &[u8], h: usize, w: usize, c: usize) -> Array<T> {
    assert_eq!(image.len(), h * w * c);
    let mut data = vec![T::zero(); c * h * w];
    for p in 0..h * w {
        for ch in 0..c {
            data[ch * h * w + p] = T::from_f64(image[p * c + ch] as f64 / 255.0);
        }
    }
    Array::new(vec![c, h, w], data)
}

#[derive(Debug, Clone, Copy)]
pub struct TrainStats {
    pub steps_run: u64,
    pub last: LossBreakdown,
}

/// Run (or resume) training. `images` is the training split, already
/// converted to float arrays. Starts from the store's optimizer step, so
/// a model restored from a checkpoint continues where it left off;
/// `run_dir/metrics.csv` is appended to and checkpoints land in
/// `run_dir/ckpt/`.
pub fn train<T: El>(
    model: &mut Model<T>,
    images: &[Array<T>],
    cfg: &TrainConfig,
    geco: &mut GecoState,
    run_dir: &Path,
) -> Result<TrainStats, TrainError> {
    if images.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let ckpt_dir = run_dir.join("ckpt");
    fs::create_dir_all(&ckpt_dir)?;
    let metrics_path = run_dir.join("metrics.csv");
    if !metrics_path.exists() {
        fs::write(&metrics_path, format!("{METRICS_HEADER}\n"))?;
    }
    let mut metrics = OpenOptions::new().append(true).open(&metrics_path)?;

    let base = RngState::new(cfg.seed);
    let policy = StopPolicy::FixedK {
        k: model.config.k_train,
    };
    let start = model.store.step();
    let mut last = LossBreakdown {
        nll: 0.0,
        kl_latent: 0.0,
        kl_mask: 0.0,
        total: 0.0,
        beta_used: geco.beta,
    };
    for step in start + 1..=cfg.steps {
        let step_base = base.fork(step);
        let mut pick = step_base.fork(0);
        let mut mean = LossBreakdown {
            nll: 0.0,
            kl_latent: 0.0,
            kl_mask: 0.0,
            total: 0.0,
            beta_used: geco.beta,
        };
        for i in 0..cfg.batch_size {
            let x = &images[pick.gen_index(images.len())];
            let mut rng = step_base.fork(1 + i as u64);
            let grads = {
                let g: Graph<T> = Graph::new();
                let binder = Binder::new(&model.store, &g);
                let xt = g.constant(x.clone());
                let result = model.encode_on(&binder, &xt, policy, &mut rng);
                let (total, b) =
                    compute_loss(&result, &xt, cfg.sigma_x, geco.beta, cfg.use_mask_loss)?;
                if !b.total.is_finite() {
                    return Err(TrainError::NonFinite { step, breakdown: b });
                }
                total.backward().expect("loss is scalar");
                mean.nll += b.nll;
                mean.kl_latent += b.kl_latent;
                mean.kl_mask += b.kl_mask;
                mean.total += b.total;
                binder.into_grads()
            };
            apply_grads(&mut model.store, grads);
        }
        let inv = 1.0 / cfg.batch_size as f64;
        mean.nll *= inv;
        mean.kl_latent *= inv;
        mean.kl_mask *= inv;
        mean.total *= inv;
        model.store.scale_grads(inv);
        fill_missing_grads(&mut model.store);
        adam_step(
            &mut model.store,
            &AdamConfig {
                lr: cfg.lr,
                ..Default::default()
            },
        )?;
        geco.update(mean.nll);
        last = mean;

        if step % cfg.log_every == 0 || step == start + 1 || step == cfg.steps {
            writeln!(
                metrics,
                "{step},{},{},{},{},{}",
                mean.nll,
                mean.kl_latent,
                mean.kl_mask,
                geco.beta,
                geco.ema_error.unwrap_or(f64::NAN)
            )?;
            metrics.flush()?;
        }
        if step % cfg.save_every == 0 || step == cfg.steps {
            save_checkpoint(model, geco, &ckpt_dir, step)?;
        }
    }
    Ok(TrainStats {
        steps_run: cfg.steps.saturating_sub(start),
        last,
    })
}

pub fn save_checkpoint<T: El>(
    model: &Model<T>,
    geco: &GecoState,
    ckpt_dir: &Path,
    step: u64,
) -> Result<PathBuf, CheckpointError> {
    let path = ckpt_dir.join(format!("step-{step}.ocpt"));
    save(
        &path,
        &model.store,
        &Footer {
            step,
            geco_beta: geco.beta,
            geco_ema: geco.ema_error.unwrap_or(0.0),
        },
    )?;
    Ok(path)
}

/// Parameters missed by a forward pass (e.g. an unused prior in
/// independent mode) get zero gradients so the optimizer can run.
fn fill_missing_grads<T: El>(store: &mut crate::tensor::ParamStore<T>) {
    let missing: Vec<(String, Vec<usize>)> = store
        .iter()
        .filter(|(_, p)| p.grad.is_none())
        .map(|(n, p)| (n.clone(), p.value.shape().to_vec()))
        .collect();
    for (name, shape) in missing {
        store.accumulate_grad(&name, &Array::zeros(&shape));
    }
}

#[derive(Debug, Clone)]
pub struct EvalSummary {
    pub ari_fg: f64,
    pub msc_fg: f64,
    pub ari_full: f64,
    pub msc_full: f64,
    pub avg_slots: f64,
    pub slot_mae: f64,
    pub elbo: f64,
    /// Per-image rows `(ari_fg, msc_fg, used_slots, ideal_slots, elbo)`.
    pub per_image: Vec<(f64, f64, usize, usize, f64)>,
}

impl EvalSummary {
    pub fn rows(&self) -> Vec<(&'static str, f64)> {
        vec![
            ("ari_fg", self.ari_fg),
            ("msc_fg", self.msc_fg),
            ("ari_full", self.ari_full),
            ("msc_full", self.msc_full),
            ("avg_slots", self.avg_slots),
            ("slot_mae", self.slot_mae),
            ("elbo", self.elbo),
        ]
    }
}

/// Evaluate on a labelled split. Segmentations are the hard assignment of
/// the attention masks; the ideal slot count is one per object plus one
/// for the background. The ELBO estimate uses a single posterior sample.
pub fn evaluate<T: El>(
    model: &Model<T>,
    records: &[CorpusRecord],
    policy: StopPolicy,
    sigma_x: f64,
    seed: u64,
) -> Result<EvalSummary, TrainError> {
    if records.is_empty() {
        return Err(TrainError::EmptyCorpus);
    }
    let (h, w) = model.config.image_size;
    let c = model.config.channels;
    let base = RngState::new(seed);
    // each image forks its own rng stream, so parallel order cannot
    // change the result
    let rows: Result<Vec<_>, TrainError> = records
        .par_iter()
        .enumerate()
        .map(|(i, rec)| {
            let x = image_to_array::<T>(&rec.image, h, w, c);
            let mut rng = base.fork(i as u64);
            let (_g, result) = model.encode(&x, policy, &mut rng);
            let pred: Vec<u32> = result
                .attention
                .hard_assignment()
                .into_iter()
                .map(|k| k as u32)
                .collect();
            let truth: Vec<u32> = rec.labels.iter().map(|&l| l as u32).collect();
            let ari_fg = ari(&pred, &truth, true)?;
            let msc_fg = msc(&pred, &truth, true, false)?;
            let ari_full = ari(&pred, &truth, false)?;
            let msc_full = msc(&pred, &truth, false, false)?;
            let used = icsbp_count_slots(&result.attention);
            let ideal = rec.labels.iter().map(|&l| l as usize).max().unwrap_or(0) + 1;
            let xt = result.reconstruction.graph().constant(x);
            let (_, b) = compute_loss(&result, &xt, sigma_x, 1.0, false)?;
            let elbo = -(b.nll + b.kl_latent);
            Ok((ari_fg, msc_fg, ari_full, msc_full, used, ideal, elbo))
        })
        .collect();
    let rows = rows?;
    let (mut s_ari, mut s_msc, mut s_ari_full, mut s_msc_full, mut s_elbo) =
        (0.0, 0.0, 0.0, 0.0, 0.0);
    let mut counts = Vec::with_capacity(rows.len());
    let mut per_image = Vec::with_capacity(rows.len());
    for (ari_fg, msc_fg, ari_full, msc_full, used, ideal, elbo) in rows {
        s_ari += ari_fg;
        s_msc += msc_fg;
        s_ari_full += ari_full;
        s_msc_full += msc_full;
        s_elbo += elbo;
        counts.push((used, ideal));
        per_image.push((ari_fg, msc_fg, used, ideal, elbo));
    }
    let n = records.len() as f64;
    Ok(EvalSummary {
        ari_fg: s_ari / n,
        msc_fg: s_msc / n,
        ari_full: s_ari_full / n,
        msc_full: s_msc_full / n,
        avg_slots: counts.iter().map(|&(u, _)| u as f64).sum::<f64>() / n,
        slot_mae: slot_count_mae(&counts)?,
        elbo: s_elbo / n,
        per_image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::SpriteSceneSpec;
    use crate::kernels::KernelKind;
    use crate::model::{Model, ModelConfig, PriorKind};
    use crate::tensor::checkpoint::load;

    fn tiny_cfg() -> ModelConfig {
        ModelConfig {
            image_size: (16, 16),
            channels: 3,
            k_train: 3,
            latent_dim: 8,
            backbone_filters: vec![16, 16],
            d_e: 16,
            d_f: 16,
            head_filters: 16,
            head_hidden: 32,
            decoder_filters: 16,
            prior_hidden: 16,
            kernel: KernelKind::Gaussian,
            prior: PriorKind::Autoregressive,
        }
    }

    fn tiny_corpus(n: usize) -> Vec<CorpusRecord> {
        let spec = SpriteSceneSpec {
            image_size: (16, 16),
            n_objects: (1, 2),
            min_object_radius: 2,
            max_object_radius: 3,
            ..Default::default()
        };
        let base = RngState::new(7);
        (0..n)
            .map(|i| crate::data::generate_record(&spec, &mut base.fork(i as u64)).unwrap())
            .collect()
    }

    fn tmp_dir(tag: &str) -> PathBuf {
        let d = std::env::temp_dir().join(format!("ocsbp_train_{tag}"));
        let _ = fs::remove_dir_all(&d);
        fs::create_dir_all(&d).unwrap();
        d
    }

    #[test]
    fn image_conversion_is_chw_and_unit_range() {
        // 1x2 image, RGB interleaved
        let a = image_to_array::<f64>(&[255, 0, 51, 0, 255, 102], 1, 2, 3);
        assert_eq!(a.shape(), vec![3, 1, 2]);
        let d = a.data();
        assert_eq!(d[0], 1.0); // R at pixel 0
        assert_eq!(d[1], 0.0); // R at pixel 1
        assert_eq!(d[2], 0.0); // G at pixel 0
        assert_eq!(d[3], 1.0); // G at pixel 1
        assert!((d[4] - 0.2).abs() < 1e-12);
        assert!((d[5] - 0.4).abs() < 1e-12);
    }

    #[test]
    fn short_training_run_writes_metrics_and_checkpoints() {
        let dir = tmp_dir("smoke");
        let mut model: Model<f64> = Model::init(tiny_cfg(), 1).unwrap();
        let records = tiny_corpus(4);
        let images: Vec<Array<f64>> = records
            .iter()
            .map(|r| image_to_array(&r.image, 16, 16, 3))
            .collect();
        let cfg = TrainConfig {
            steps: 3,
            batch_size: 2,
            log_every: 1,
            save_every: 2,
            ..Default::default()
        };
        let mut geco = GecoState::new(0.5655, (16, 16), 3, false);
        let stats = train(&mut model, &images, &cfg, &mut geco, &dir).unwrap();
        assert_eq!(stats.steps_run, 3);
        assert!(stats.last.total.is_finite());
        let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], METRICS_HEADER);
        assert_eq!(lines.len(), 4); // header + steps 1..3
        assert!(lines[1].starts_with("1,"));
        assert!(dir.join("ckpt/step-2.ocpt").exists());
        assert!(dir.join("ckpt/step-3.ocpt").exists());
        assert_eq!(model.store.step(), 3);
        assert!(geco.ema_error.is_some());
    }

    #[test]
    fn training_lowers_the_loss_on_a_single_image() {
        let dir = tmp_dir("descent");
        let mut model: Model<f64> = Model::init(tiny_cfg(), 2).unwrap();
        let records = tiny_corpus(1);
        let images: Vec<Array<f64>> = records
            .iter()
            .map(|r| image_to_array(&r.image, 16, 16, 3))
            .collect();
        let cfg = TrainConfig {
            steps: 25,
            batch_size: 1,
            lr: 1e-3,
            log_every: 100,
            save_every: 100,
            ..Default::default()
        };
        let mut geco = GecoState::new(0.5655, (16, 16), 3, false);
        // probe the initial loss with the same rng stream the first step uses
        let base = RngState::new(cfg.seed);
        let probe = |model: &Model<f64>| {
            let mut rng = base.fork(1).fork(1);
            let g: Graph<f64> = Graph::new();
            let binder = Binder::new(&model.store, &g);
            let xt = g.constant(images[0].clone());
            let r = model.encode_on(&binder, &xt, StopPolicy::FixedK { k: 3 }, &mut rng);
            compute_loss(&r, &xt, 0.7, 1.0, false).unwrap().1.nll
        };
        let before = probe(&model);
        train(&mut model, &images, &cfg, &mut geco, &dir).unwrap();
        let after = probe(&model);
        assert!(after < before, "nll {before} -> {after}");
    }

    #[test]
    fn resume_continues_from_the_checkpoint_step() {
        let dir = tmp_dir("resume");
        let mut model: Model<f64> = Model::init(tiny_cfg(), 3).unwrap();
        let records = tiny_corpus(2);
        let images: Vec<Array<f64>> = records
            .iter()
            .map(|r| image_to_array(&r.image, 16, 16, 3))
            .collect();
        let cfg = TrainConfig {
            steps: 2,
            batch_size: 1,
            log_every: 1,
            save_every: 2,
            ..Default::default()
        };
        let mut geco = GecoState::new(0.5655, (16, 16), 3, false);
        train(&mut model, &images, &cfg, &mut geco, &dir).unwrap();

        let loaded = load(&dir.join("ckpt/step-2.ocpt")).unwrap();
        let mut model2: Model<f64> = Model::init(tiny_cfg(), 99).unwrap();
        loaded.install(&mut model2.store);
        let mut geco2 = GecoState::new(0.5655, (16, 16), 3, false);
        geco2.beta = loaded.footer.geco_beta;
        geco2.ema_error = Some(loaded.footer.geco_ema);
        assert_eq!(model2.store.step(), 2);
        let cfg2 = TrainConfig { steps: 4, ..cfg };
        let stats = train(&mut model2, &images, &cfg2, &mut geco2, &dir).unwrap();
        assert_eq!(stats.steps_run, 2);
        assert_eq!(model2.store.step(), 4);
        // metrics file was appended, not truncated
        let csv = fs::read_to_string(dir.join("metrics.csv")).unwrap();
        assert!(csv.lines().any(|l| l.starts_with("1,")));
        assert!(csv.lines().any(|l| l.starts_with("4,")));
    }

    #[test]
    fn evaluation_reports_every_metric() {
        let model: Model<f64> = Model::init(tiny_cfg(), 4).unwrap();
        let records = tiny_corpus(3);
        let summary = evaluate(&model, &records, StopPolicy::FixedK { k: 3 }, 0.7, 11).unwrap();
        assert_eq!(summary.per_image.len(), 3);
        assert_eq!(summary.avg_slots, 3.0);
        for (name, v) in summary.rows() {
            assert!(v.is_finite(), "{name} = {v}");
        }
        assert!((-1.0..=1.0).contains(&summary.ari_fg));
        assert!((0.0..=1.0).contains(&summary.msc_fg));
        assert!(summary.elbo < 0.0);
    }

    #[test]
    fn evaluation_is_deterministic_in_the_seed() {
        let model: Model<f64> = Model::init(tiny_cfg(), 5).unwrap();
        let records = tiny_corpus(2);
        let a = evaluate(&model, &records, StopPolicy::FixedK { k: 3 }, 0.7, 1).unwrap();
        let b = evaluate(&model, &records, StopPolicy::FixedK { k: 3 }, 0.7, 1).unwrap();
        assert_eq!(a.per_image, b.per_image);
        assert_eq!(a.elbo, b.elbo);
    }
}
