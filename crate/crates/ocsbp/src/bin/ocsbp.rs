//! Command-line front end: corpus generation, training, evaluation,
//! single-image segmentation, and scene sampling.
//!
//! Exit codes are a stable contract: 0 success, 2 config or usage error,
//! 3 I/O error, 4 numerical failure.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ocsbp::config::{parse_stop, render_stop, ConfigError, RunConfig};
use ocsbp::data::{
    chw_to_rgb, generate_corpus, read_corpus, read_ppm, render_segmentation, tile_grid, write_ppm,
    CorpusRecord, DataError, SpriteSceneSpec,
};
use ocsbp::icsbp::StopPolicy;
use ocsbp::model::{Model, ModelError};
use ocsbp::tensor::checkpoint::{load, CheckpointError};
use ocsbp::tensor::params::ParamError;
use ocsbp::training::{evaluate, image_to_array, train, EvalSummary, TrainError};
use ocsbp::{Array, El, RngState};

#[derive(Parser)]
#[command(name = "ocsbp", version, about = "Object-centric scene decomposition")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate a procedural sprite corpus.
    Gen {
        /// Scene spec JSON; defaults to the built-in 32x32 spec.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Train a model; resumes if the run directory has checkpoints.
    Train {
        /// Run config JSON; defaults to the desk32 preset.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a checkpoint on the test split of a corpus.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        data: PathBuf,
        /// Stop policy override: fixed:K or mass:TAU,KMAX.
        #[arg(long)]
        stop: Option<String>,
        /// Summary CSV path; per-image rows land next to it.
        #[arg(long)]
        out: PathBuf,
        /// Config override when the checkpoint is outside a run directory.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Decompose one PPM image into reconstruction, segmentation and
    /// per-slot components.
    Segment {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        image: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        stop: Option<String>,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Sample scenes from the autoregressive prior.
    Sample {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        n: usize,
        /// Slots per scene; defaults to the config's k_train.
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
    },
}

enum CliError {
    Config(String),
    Io(String),
    Numeric(String),
}

impl CliError {
    fn code(&self) -> u8 {
        match self {
            CliError::Config(_) => 2,
            CliError::Io(_) => 3,
            CliError::Numeric(_) => 4,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Config(m) | CliError::Io(m) | CliError::Numeric(m) => m,
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Io(_) => CliError::Io(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<DataError> for CliError {
    fn from(e: DataError) -> Self {
        match e {
            DataError::BadSpec(_) | DataError::Placement { .. } => {
                CliError::Config(e.to_string())
            }
            _ => CliError::Io(e.to_string()),
        }
    }
}

impl From<CheckpointError> for CliError {
    fn from(e: CheckpointError) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ModelError> for CliError {
    fn from(e: ModelError) -> Self {
        CliError::Config(e.to_string())
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<ParamError> for CliError {
    fn from(e: ParamError) -> Self {
        CliError::Numeric(e.to_string())
    }
}

impl From<TrainError> for CliError {
    fn from(e: TrainError) -> Self {
        match e {
            TrainError::Io(_) | TrainError::Checkpoint(_) => CliError::Io(e.to_string()),
            TrainError::EmptyCorpus => CliError::Config(e.to_string()),
            _ => CliError::Numeric(e.to_string()),
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Ok(threads) = std::env::var("OCSBP_THREADS") {
        if let Ok(n) = threads.parse::<usize>() {
            let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {}", e.message());
            ExitCode::from(e.code())
        }
    }
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.cmd {
        Cmd::Gen { spec, out, n, seed } => cmd_gen(spec, out, n, seed),
        Cmd::Train { config, data, out } => cmd_train(config, data, out),
        Cmd::Eval {
            checkpoint,
            data,
            stop,
            out,
            config,
        } => cmd_eval(checkpoint, data, stop, out, config),
        Cmd::Segment {
            checkpoint,
            image,
            out,
            stop,
            config,
            seed,
        } => cmd_segment(checkpoint, image, out, stop, config, seed),
        Cmd::Sample {
            checkpoint,
            n,
            k,
            seed,
            out,
            config,
        } => cmd_sample(checkpoint, n, k, seed, out, config),
    }
}

fn cmd_gen(spec: Option<PathBuf>, out: PathBuf, n: usize, seed: u64) -> Result<(), CliError> {
    let spec: SpriteSceneSpec = match spec {
        Some(path) => {
            let text = fs::read_to_string(&path)?;
            serde_json::from_str(&text).map_err(|e| CliError::Config(format!("scene spec: {e}")))?
        }
        None => SpriteSceneSpec::default(),
    };
    generate_corpus(&spec, n, seed, &out)?;
    println!(
        "wrote {n} records ({}x{}) to {}",
        spec.image_size.0,
        spec.image_size.1,
        out.display()
    );
    Ok(())
}

fn load_run_config(path: Option<PathBuf>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(RunConfig::load(&p)?),
        None => Ok(RunConfig::preset("desk32")?),
    }
}

fn cmd_train(config: Option<PathBuf>, data: PathBuf, out: PathBuf) -> Result<(), CliError> {
    let mut cfg = load_run_config(config)?;
    cfg.data = Some(data.display().to_string());
    cfg.out = Some(out.display().to_string());
    fs::create_dir_all(&out)?;
    cfg.save(&out.join("config.json"))?;
    if cfg.precision == "f64" {
        run_train::<f64>(&cfg, &data, &out)
    } else {
        run_train::<f32>(&cfg, &data, &out)
    }
}

fn run_train<T: El>(cfg: &RunConfig, data: &Path, out: &Path) -> Result<(), CliError> {
    let records = load_matching_corpus(cfg, data)?;
    let (train_idx, _, _) = ocsbp::data::split_indices(records.len(), cfg.seed);
    let (h, w) = (cfg.image_height, cfg.image_width);
    let images: Vec<Array<T>> = train_idx
        .iter()
        .map(|&i| image_to_array(&records[i].image, h, w, cfg.channels))
        .collect();
    let mut model: Model<T> = Model::init(cfg.model_config(), cfg.seed)?;
    let mut geco = cfg.geco_state();
    if let Some(latest) = latest_checkpoint(&out.join("ckpt"))? {
        let loaded = load(&latest)?;
        loaded.install(&mut model.store);
        geco.beta = loaded.footer.geco_beta;
        if loaded.footer.step > 0 {
            geco.ema_error = Some(loaded.footer.geco_ema);
        }
        println!(
            "resuming from {} at step {}",
            latest.display(),
            loaded.footer.step
        );
    }
    println!(
        "training {} ({}) on {} images: {} steps, batch {}, geco goal {} per pixel-channel ({} total)",
        cfg.preset,
        T::NAME,
        images.len(),
        cfg.steps,
        cfg.batch_size,
        cfg.goal_per_pixel_channel,
        geco.goal
    );
    let stats = train(&mut model, &images, &cfg.train_config(), &mut geco, out)?;
    println!(
        "done at step {}: nll {:.3}, kl {:.3}, beta {:.3e}",
        model.store.step(),
        stats.last.nll,
        stats.last.kl_latent,
        geco.beta
    );
    Ok(())
}

/// Newest checkpoint in a run's `ckpt/` directory, by step number.
fn latest_checkpoint(dir: &Path) -> Result<Option<PathBuf>, CliError> {
    if !dir.is_dir() {
        return Ok(None);
    }
    let mut best: Option<(u64, PathBuf)> = None;
    for entry in fs::read_dir(dir)? {
        let path = entry?.path();
        let name = path.file_name().and_then(|n| n.to_str()).unwrap_or("");
        if let Some(step) = name
            .strip_prefix("step-")
            .and_then(|s| s.strip_suffix(".ocpt"))
            .and_then(|s| s.parse::<u64>().ok())
        {
            if best.as_ref().map_or(true, |(b, _)| step > *b) {
                best = Some((step, path));
            }
        }
    }
    Ok(best.map(|(_, p)| p))
}

/// Read a corpus and require its geometry to match the config.
fn load_matching_corpus(cfg: &RunConfig, data: &Path) -> Result<Vec<CorpusRecord>, CliError> {
    let (header, records) = read_corpus(data)?;
    let (h, w, c) = (
        header.height as usize,
        header.width as usize,
        header.channels as usize,
    );
    if (h, w, c) != (cfg.image_height, cfg.image_width, cfg.channels) {
        return Err(CliError::Config(format!(
            "corpus is {h}x{w}x{c} but the config expects {}x{}x{}",
            cfg.image_height, cfg.image_width, cfg.channels
        )));
    }
    Ok(records)
}

/// Load a checkpoint and its run config (from `--config` or the standard
/// `<run>/ckpt/step-N.ocpt` layout), then rebuild the model.
fn load_model<T: El>(
    checkpoint: &Path,
    config: Option<PathBuf>,
) -> Result<(RunConfig, Model<T>), CliError> {
    let loaded = load(checkpoint)?;
    let cfg = match config {
        Some(p) => RunConfig::load(&p)?,
        None => {
            let run_config = checkpoint
                .parent()
                .and_then(|d| d.parent())
                .map(|run| run.join("config.json"));
            match run_config {
                Some(p) if p.is_file() => RunConfig::load(&p)?,
                _ => {
                    return Err(CliError::Config(format!(
                        "no config.json in the run directory above {}; pass --config",
                        checkpoint.display()
                    )))
                }
            }
        }
    };
    let mut model: Model<T> = Model::init(cfg.model_config(), cfg.seed)?;
    loaded.install(&mut model.store);
    Ok((cfg, model))
}

fn resolve_stop(cfg: &RunConfig, flag: Option<String>) -> Result<StopPolicy, CliError> {
    match flag {
        Some(s) => Ok(parse_stop(&s)?),
        None => Ok(cfg.stop_policy()?),
    }
}

fn cmd_eval(
    checkpoint: PathBuf,
    data: PathBuf,
    stop: Option<String>,
    out: PathBuf,
    config: Option<PathBuf>,
) -> Result<(), CliError> {
    // precision dispatch duplicates the body's monomorphization, so peek
    // at the config through a throwaway f32 load
    let (cfg, _probe) = load_model::<f32>(&checkpoint, config.clone())?;
    if cfg.precision == "f64" {
        let (cfg, model) = load_model::<f64>(&checkpoint, config)?;
        run_eval(&cfg, &model, &data, stop, &out)
    } else {
        let (cfg, model) = load_model::<f32>(&checkpoint, config)?;
        run_eval(&cfg, &model, &data, stop, &out)
    }
}

fn run_eval<T: El>(
    cfg: &RunConfig,
    model: &Model<T>,
    data: &Path,
    stop: Option<String>,
    out: &Path,
) -> Result<(), CliError> {
    let records = load_matching_corpus(cfg, data)?;
    let (_, _, test_idx) = ocsbp::data::split_indices(records.len(), cfg.seed);
    let test: Vec<CorpusRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();
    let policy = resolve_stop(cfg, stop)?;
    let summary = evaluate(model, &test, policy, cfg.sigma_x, cfg.seed)?;
    if let Some(parent) = out.parent() {
        if !parent.as_os_str().is_empty() {
            fs::create_dir_all(parent)?;
        }
    }
    write_eval_csvs(&summary, out)?;
    println!(
        "evaluated {} test images with {}:",
        test.len(),
        render_stop(&policy)
    );
    for (name, value) in summary.rows() {
        println!("  {name} = {value:.4}");
    }
    Ok(())
}

fn write_eval_csvs(summary: &EvalSummary, out: &Path) -> Result<(), CliError> {
    let mut text = String::from("metric,value\n");
    for (name, value) in summary.rows() {
        text.push_str(&format!("{name},{value}\n"));
    }
    fs::write(out, text)?;

    let stem = out.file_stem().and_then(|s| s.to_str()).unwrap_or("eval");
    let per_image = out.with_file_name(format!("{stem}_per_image.csv"));
    let mut text = String::from("image,ari_fg,msc_fg,used_slots,ideal_slots,elbo\n");
    for (i, (ari_fg, msc_fg, used, ideal, elbo)) in summary.per_image.iter().enumerate() {
        text.push_str(&format!("{i},{ari_fg},{msc_fg},{used},{ideal},{elbo}\n"));
    }
    text.push_str(&format!(
        "mean,{},{},{},{},{}\n",
        summary.ari_fg,
        summary.msc_fg,
        summary.avg_slots,
        summary
            .per_image
            .iter()
            .map(|r| r.3 as f64)
            .sum::<f64>()
            / summary.per_image.len() as f64,
        summary.elbo
    ));
    fs::write(per_image, text)?;
    Ok(())
}

fn cmd_segment(
    checkpoint: PathBuf,
    image: PathBuf,
    out: PathBuf,
    stop: Option<String>,
    config: Option<PathBuf>,
    seed: u64,
) -> Result<(), CliError> {
    let (cfg, model) = load_model::<f64>(&checkpoint, config)?;
    let (h, w, rgb) = read_ppm(&image)?;
    if (h, w) != (cfg.image_height, cfg.image_width) {
        return Err(CliError::Config(format!(
            "image is {h}x{w} but the model expects {}x{}",
            cfg.image_height, cfg.image_width
        )));
    }
    let policy = resolve_stop(&cfg, stop)?;
    let x = image_to_array::<f64>(&rgb, h, w, cfg.channels);
    let mut rng = RngState::new(seed);
    let (_g, result) = model.encode(&x, policy, &mut rng);

    fs::create_dir_all(&out)?;
    let recon = result.reconstruction.value().to_f64_vec();
    write_ppm(&out.join("reconstruction.ppm"), h, w, &chw_to_rgb(&recon, h, w))?;

    let labels: Vec<u8> = result
        .attention
        .hard_assignment()
        .into_iter()
        .map(|k| k as u8)
        .collect();
    write_ppm(
        &out.join("segmentation.ppm"),
        h,
        w,
        &render_segmentation(&labels),
    )?;

    // per-slot appearance weighted by its mixing mask
    let means = result.components.means.value().to_f64_vec();
    let pi = result.components.masks_pi.value().to_f64_vec();
    let k = result.attention.masks.len();
    let mut tiles = Vec::with_capacity(k);
    for slot in 0..k {
        let mut chw = vec![0.0f64; 3 * h * w];
        for c in 0..3 {
            for p in 0..h * w {
                chw[c * h * w + p] =
                    means[slot * 3 * h * w + c * h * w + p] * pi[slot * h * w + p];
            }
        }
        tiles.push(chw_to_rgb(&chw, h, w));
    }
    let grid = tile_grid(&tiles, h, w);
    let grid_w = k * w + (k - 1) * ocsbp::data::GUTTER_PX;
    write_ppm(&out.join("components.ppm"), h, grid_w, &grid)?;
    println!(
        "segmented {} into {k} slots -> {}",
        image.display(),
        out.display()
    );
    Ok(())
}

fn cmd_sample(
    checkpoint: PathBuf,
    n: usize,
    k: Option<usize>,
    seed: u64,
    out: PathBuf,
    config: Option<PathBuf>,
) -> Result<(), CliError> {
    let (cfg, model) = load_model::<f64>(&checkpoint, config)?;
    let k = k.unwrap_or(cfg.k_train);
    if n == 0 {
        return Err(CliError::Config("sample count must be at least 1".into()));
    }
    fs::create_dir_all(&out)?;
    let base = RngState::new(seed);
    let (h, w) = (cfg.image_height, cfg.image_width);
    for i in 0..n {
        let mut rng = base.fork(i as u64);
        let (_g, image, _comps) = model
            .generate_scene(k, &mut rng)
            .map_err(|e| CliError::Config(format!("{e}; sampling needs an autoregressive prior")))?;
        let chw = image.value().to_f64_vec();
        write_ppm(
            &out.join(format!("scene-{i:03}.ppm")),
            h,
            w,
            &chw_to_rgb(&chw, h, w),
        )?;
    }
    println!("wrote {n} sampled scenes (k={k}) to {}", out.display());
    Ok(())
}
