//! The full encode path on one image: backbone features, semi-convolutional
//! embeddings, stick-breaking attention, per-slot latents, and the decoded
//! mixture reconstruction.
//!
//!     cargo run --release --example scene_decomposition

use ocsbp::data::{chw_to_rgb, generate_record, render_segmentation, tile_grid, write_ppm,
    SpriteSceneSpec, GUTTER_PX};
use ocsbp::icsbp::StopPolicy;
use ocsbp::kernels::KernelKind;
use ocsbp::model::{Model, ModelConfig, PriorKind};
use ocsbp::training::image_to_array;
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
    let (h, w) = config.image_size;
    let spec = SpriteSceneSpec {
        image_size: (16, 16),
        n_objects: (2, 2),
        min_object_radius: 2,
        max_object_radius: 3,
        ..Default::default()
    };
    let mut rng = RngState::new(1);
    let rec = generate_record(&spec, &mut rng).unwrap();
    let x = image_to_array::<f64>(&rec.image, h, w, 3);

    let model: Model<f64> = Model::init(config, 6).unwrap();
    let (_graph, result) = model.encode(&x, StopPolicy::FixedK { k: 3 }, &mut rng);

    println!("slots: {}", result.attention.masks.len());
    println!("seed pixels: {:?}", result.attention.seed_pixels);
    for (k, q) in result.latents.posterior.iter().enumerate() {
        let m = q.mean.value();
        let norm: f64 = m.data().iter().map(|v| v * v).sum::<f64>().sqrt();
        println!("slot {k}: |posterior mean| = {norm:.3}");
    }

    let dir = std::env::temp_dir().join("ocsbp_example_decomposition");
    std::fs::create_dir_all(&dir).unwrap();
    let labels: Vec<u8> = result
        .attention
        .hard_assignment()
        .into_iter()
        .map(|k| k as u8)
        .collect();
    let recon = result.reconstruction.value().to_f64_vec();
    let tiles = vec![
        rec.image.clone(),
        render_segmentation(&rec.labels),
        render_segmentation(&labels),
        chw_to_rgb(&recon, h, w),
    ];
    let grid = tile_grid(&tiles, h, w);
    let grid_w = tiles.len() * w + (tiles.len() - 1) * GUTTER_PX;
    let path = dir.join("input_truth_pred_recon.ppm");
    write_ppm(&path, h, grid_w, &grid).unwrap();
    println!("strip (input | truth | predicted | reconstruction): {}", path.display());
}
