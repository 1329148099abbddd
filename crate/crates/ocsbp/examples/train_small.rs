//! A miniature end-to-end training run: tiny model, tiny corpus, a few
//! dozen optimiser steps, with the GECO controller steering beta.
//!
//!     cargo run --release --example train_small

use ocsbp::data::{generate_record, SpriteSceneSpec};
use ocsbp::geco::GecoState;
use ocsbp::kernels::KernelKind;
use ocsbp::model::{Model, ModelConfig, PriorKind};
use ocsbp::training::{image_to_array, train, TrainConfig};
use ocsbp::{Array, RngState};

fn main() {
    let config = ModelConfig {
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
    };
    let spec = SpriteSceneSpec {
        image_size: (16, 16),
        n_objects: (1, 2),
        min_object_radius: 2,
        max_object_radius: 3,
        ..Default::default()
    };
    let base = RngState::new(3);
    let images: Vec<Array<f32>> = (0..16)
        .map(|i| {
            let rec = generate_record(&spec, &mut base.fork(i)).unwrap();
            image_to_array(&rec.image, 16, 16, 3)
        })
        .collect();

    let run_dir = std::env::temp_dir().join("ocsbp_example_train");
    let _ = std::fs::remove_dir_all(&run_dir);
    std::fs::create_dir_all(&run_dir).unwrap();

    let mut model: Model<f32> = Model::init(config, 1).unwrap();
    let mut geco = GecoState::new(0.5655, (16, 16), 3, false);
    let cfg = TrainConfig {
        steps: 40,
        batch_size: 4,
        lr: 3e-4,
        log_every: 5,
        save_every: 40,
        ..Default::default()
    };
    println!("training {} parameters on {} images...", model.store.num_values(), images.len());
    let stats = train(&mut model, &images, &cfg, &mut geco, &run_dir).unwrap();
    println!(
        "step {}: nll {:.1}, kl {:.2}, beta {:.4}",
        stats.steps_run, stats.last.nll, stats.last.kl_latent, geco.beta
    );

    println!("metrics log:");
    print!("{}", std::fs::read_to_string(run_dir.join("metrics.csv")).unwrap());
    println!("checkpoint: {}", run_dir.join("ckpt/step-40.ocpt").display());
}
