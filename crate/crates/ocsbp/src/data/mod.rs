//! Procedural sprite corpus: scene generation with exact instance labels,
//! a streaming binary corpus format, and PPM image export.

mod corpus;
mod ppm;
mod sprites;

pub use corpus::{read_corpus, write_corpus, CorpusHeader, CorpusReader};
pub use ppm::{
    chw_to_rgb, floats_to_rgb, read_ppm, render_segmentation, tile_grid, write_ppm, GUTTER_PX,
    SEGMENT_PALETTE,
};
pub use sprites::{generate_corpus, generate_record, Shape, SpriteSceneSpec};

use thiserror::Error;

#[derive(Debug, Error)]
pub enum DataError {
    #[error("corpus i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("bad corpus magic: expected \"OCRS\", found {0:02x?}")]
    BadMagic([u8; 4]),
    #[error("unsupported corpus version {found} (expected {expected})")]
    BadVersion { found: u8, expected: u8 },
    #[error("truncated corpus: needed {expected} more bytes, got {actual}")]
    Truncated { expected: usize, actual: usize },
    #[error("invalid scene spec: {0}")]
    BadSpec(String),
    #[error("could not place object {object} after {attempts} attempts")]
    Placement { object: usize, attempts: usize },
}

/// One generated scene: row-major RGB bytes plus per-pixel instance
/// labels (0 = background, 1..n = objects, later objects win occlusions).
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CorpusRecord {
    pub image: Vec<u8>,
    pub labels: Vec<u8>,
}

/// Deterministic 80/10/10 train/val/test split of record indices.
pub fn split_indices(n: usize, seed: u64) -> (Vec<usize>, Vec<usize>, Vec<usize>) {
    let mut rng = crate::tensor::RngState::new(seed);
    let idx = rng.shuffled_indices(n);
    let n_train = n * 8 / 10;
    let n_val = n / 10;
    (
        idx[..n_train].to_vec(),
        idx[n_train..n_train + n_val].to_vec(),
        idx[n_train + n_val..].to_vec(),
    )
}
