//! Segmentation metrics on a freshly initialised model: fixed-K versus
//! flexible-K evaluation of the same corpus, with per-image ARI/MSC and
//! slot-count statistics.
//!
//!     cargo run --release --example evaluate_segmentation

use ocsbp::data::{generate_record, CorpusRecord, SpriteSceneSpec};
use ocsbp::icsbp::StopPolicy;
use ocsbp::kernels::KernelKind;
use ocsbp::model::{Model, ModelConfig, PriorKind};
use ocsbp::training::evaluate;
use ocsbp::RngState;

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
    let base = RngState::new(9);
    let records: Vec<CorpusRecord> = (0..32)
        .map(|i| generate_record(&spec, &mut base.fork(i)).unwrap())
        .collect();

    let model: Model<f64> = Model::init(config, 2).unwrap();
    for (label, policy) in [
        ("fixed:3", StopPolicy::FixedK { k: 3 }),
        (
            "mass:20,5",
            StopPolicy::MassThreshold {
                tau_pixels: 20.0,
                k_max: 5,
            },
        ),
    ] {
        let summary = evaluate(&model, &records, policy, 0.7, 0).unwrap();
        println!("policy {label}:");
        for (name, value) in summary.rows() {
            println!("  {name:>10} = {value:.4}");
        }
    }
    println!("(an untrained model scores near zero — see train_small for learning)");
}
