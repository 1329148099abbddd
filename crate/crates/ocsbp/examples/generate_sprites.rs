//! Build a small sprite corpus and export a preview strip of images next
//! to their ground-truth instance masks.
//!
//!     cargo run --example generate_sprites

use ocsbp::data::{
    generate_corpus, read_corpus, render_segmentation, tile_grid, write_ppm, SpriteSceneSpec,
};

fn main() {
    let dir = std::env::temp_dir().join("ocsbp_example_sprites");
    std::fs::create_dir_all(&dir).unwrap();
    let corpus = dir.join("corpus.ocrs");

    let spec = SpriteSceneSpec {
        n_objects: (1, 3),
        distinct_colors: true,
        ..Default::default()
    };
    generate_corpus(&spec, 64, 11, &corpus).unwrap();

    let (header, records) = read_corpus(&corpus).unwrap();
    let (h, w) = (header.height as usize, header.width as usize);
    println!(
        "corpus: {} records of {h}x{w}x{} at {}",
        header.count,
        header.channels,
        corpus.display()
    );

    let mut tiles = Vec::new();
    for rec in records.iter().take(6) {
        tiles.push(rec.image.clone());
        tiles.push(render_segmentation(&rec.labels));
    }
    let grid = tile_grid(&tiles, h, w);
    let grid_w = tiles.len() * w + (tiles.len() - 1) * ocsbp::data::GUTTER_PX;
    let preview = dir.join("preview.ppm");
    write_ppm(&preview, h, grid_w, &grid).unwrap();
    println!("preview strip (image | mask pairs): {}", preview.display());

    let objects: Vec<usize> = records
        .iter()
        .map(|r| r.labels.iter().map(|&l| l as usize).max().unwrap_or(0))
        .collect();
    let mean = objects.iter().sum::<usize>() as f64 / objects.len() as f64;
    println!("objects per scene: min {}, max {}, mean {mean:.2}",
        objects.iter().min().unwrap(),
        objects.iter().max().unwrap());
}
