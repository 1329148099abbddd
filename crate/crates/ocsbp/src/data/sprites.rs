//! Scene generation: circles, squares, and axis-aligned isoceles
//! triangles rasterized without anti-aliasing, so instance labels are
//! exact at every pixel.

use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::tensor::RngState;

use super::{CorpusRecord, DataError};

const PLACEMENT_ATTEMPTS: usize = 1000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Shape {
    Circle,
    Square,
    Triangle,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpriteSceneSpec {
    pub image_size: (usize, usize),
    pub n_objects: (usize, usize),
    pub shapes: Vec<Shape>,
    pub palette: Vec<[u8; 3]>,
    pub background: [u8; 3],
    pub min_object_radius: usize,
    pub max_object_radius: usize,
    pub allow_occlusion: bool,
    /// Sample object colours without replacement within a scene.
    pub distinct_colors: bool,
}

impl Default for SpriteSceneSpec {
    fn default() -> Self {
        Self {
            image_size: (32, 32),
            n_objects: (1, 4),
            shapes: vec![Shape::Circle, Shape::Square, Shape::Triangle],
            palette: super::SEGMENT_PALETTE[1..].to_vec(),
            background: [16, 16, 16],
            min_object_radius: 3,
            max_object_radius: 6,
            allow_occlusion: false,
            distinct_colors: false,
        }
    }
}

impl SpriteSceneSpec {
    pub fn validate(&self) -> Result<(), DataError> {
        let (h, w) = self.image_size;
        let bad = |msg: String| Err(DataError::BadSpec(msg));
        if h == 0 || w == 0 {
            return bad("image size must be positive".into());
        }
        if self.n_objects.0 < 1 || self.n_objects.0 > self.n_objects.1 {
            return bad(format!("invalid object count range {:?}", self.n_objects));
        }
        if self.shapes.is_empty() {
            return bad("at least one shape required".into());
        }
        if self.palette.is_empty() {
            return bad("palette must not be empty".into());
        }
        for (i, a) in self.palette.iter().enumerate() {
            if *a == self.background {
                return bad(format!("palette entry {i} equals the background colour"));
            }
            for (j, b) in self.palette.iter().enumerate().skip(i + 1) {
                if a == b {
                    return bad(format!("palette entries {i} and {j} are identical"));
                }
            }
        }
        if self.distinct_colors && self.n_objects.1 > self.palette.len() {
            return bad(format!(
                "distinct colours need a palette of at least {} entries, got {}",
                self.n_objects.1,
                self.palette.len()
            ));
        }
        if self.min_object_radius < 1 || self.min_object_radius > self.max_object_radius {
            return bad(format!(
                "invalid radius range [{}, {}]",
                self.min_object_radius, self.max_object_radius
            ));
        }
        if 2 * self.max_object_radius + 1 > h.min(w) {
            return bad(format!(
                "radius {} does not fit a {h}x{w} image",
                self.max_object_radius
            ));
        }
        Ok(())
    }
}

fn covers(shape: Shape, dy: i64, dx: i64, r: i64) -> bool {
    match shape {
        Shape::Circle => dy * dy + dx * dx <= r * r,
        Shape::Square => dy.abs() <= r && dx.abs() <= r,
        // apex at the top, base at the bottom; half-width grows linearly
        Shape::Triangle => dy.abs() <= r && 2 * dx.abs() <= dy + r,
    }
}

/// Generate one scene from its own RNG stream.
pub fn generate_record(spec: &SpriteSceneSpec, rng: &mut RngState) -> Result<CorpusRecord, DataError> {
    let (h, w) = spec.image_size;
    let mut image = Vec::with_capacity(h * w * 3);
    for _ in 0..h * w {
        image.extend_from_slice(&spec.background);
    }
    let mut labels = vec![0u8; h * w];

    let n = spec.n_objects.0 + rng.gen_index(spec.n_objects.1 - spec.n_objects.0 + 1);
    let mut available: Vec<[u8; 3]> = spec.palette.clone();
    for obj in 1..=n {
        let mut placed = false;
        for _ in 0..PLACEMENT_ATTEMPTS {
            let r = (spec.min_object_radius
                + rng.gen_index(spec.max_object_radius - spec.min_object_radius + 1))
                as i64;
            let cy = (r as usize + rng.gen_index(h - 2 * r as usize)) as i64;
            let cx = (r as usize + rng.gen_index(w - 2 * r as usize)) as i64;
            let shape = spec.shapes[rng.gen_index(spec.shapes.len())];
            let color_idx = rng.gen_index(available.len());
            let color = available[color_idx];

            let mut pixels = Vec::new();
            for dy in -r..=r {
                for dx in -r..=r {
                    if covers(shape, dy, dx, r) {
                        pixels.push(((cy + dy) as usize) * w + (cx + dx) as usize);
                    }
                }
            }
            if !spec.allow_occlusion && pixels.iter().any(|&p| labels[p] != 0) {
                continue;
            }
            for &p in &pixels {
                labels[p] = obj as u8;
                image[3 * p..3 * p + 3].copy_from_slice(&color);
            }
            if spec.distinct_colors {
                available.swap_remove(color_idx);
            }
            placed = true;
            break;
        }
        if !placed {
            return Err(DataError::Placement {
                object: obj,
                attempts: PLACEMENT_ATTEMPTS,
            });
        }
    }
    Ok(CorpusRecord { image, labels })
}

/// Generate `n` records deterministically from `seed` and write them as
/// one corpus file.
pub fn generate_corpus(
    spec: &SpriteSceneSpec,
    n: usize,
    seed: u64,
    path: &Path,
) -> Result<(), DataError> {
    if n == 0 {
        return Err(DataError::BadSpec("record count must be at least 1".into()));
    }
    spec.validate()?;
    let base = RngState::new(seed);
    let records: Result<Vec<CorpusRecord>, DataError> = (0..n)
        .map(|i| generate_record(spec, &mut base.fork(i as u64)))
        .collect();
    let (h, w) = spec.image_size;
    super::write_corpus(&records?, h, w, 3, path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_spec_is_valid() {
        SpriteSceneSpec::default().validate().unwrap();
    }

    #[test]
    fn distinct_colors_never_repeat_within_a_scene() {
        let spec = SpriteSceneSpec {
            n_objects: (3, 3),
            distinct_colors: true,
            ..Default::default()
        };
        spec.validate().unwrap();
        let base = RngState::new(41);
        for i in 0..50 {
            let rec = generate_record(&spec, &mut base.fork(i)).unwrap();
            let mut colors: Vec<[u8; 3]> = Vec::new();
            for obj in 1..=3u8 {
                let p = rec.labels.iter().position(|&l| l == obj).unwrap();
                colors.push([rec.image[3 * p], rec.image[3 * p + 1], rec.image[3 * p + 2]]);
            }
            colors.sort_unstable();
            colors.dedup();
            assert_eq!(colors.len(), 3, "scene {i} repeats a colour");
        }
    }

    #[test]
    fn distinct_colors_need_a_large_enough_palette() {
        let spec = SpriteSceneSpec {
            n_objects: (1, 4),
            palette: super::super::SEGMENT_PALETTE[1..4].to_vec(),
            distinct_colors: true,
            ..Default::default()
        };
        assert!(matches!(spec.validate(), Err(DataError::BadSpec(_))));
    }

    #[test]
    fn palette_clash_with_background_is_rejected() {
        let spec = SpriteSceneSpec {
            palette: vec![[16, 16, 16]],
            ..Default::default()
        };
        assert!(matches!(spec.validate(), Err(DataError::BadSpec(_))));
    }

    #[test]
    fn same_stream_same_record() {
        let spec = SpriteSceneSpec::default();
        let base = RngState::new(11);
        let a = generate_record(&spec, &mut base.fork(3)).unwrap();
        let b = generate_record(&spec, &mut base.fork(3)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn single_object_records_have_labels_zero_and_one() {
        let spec = SpriteSceneSpec {
            n_objects: (1, 1),
            ..Default::default()
        };
        let base = RngState::new(2);
        for i in 0..20 {
            let rec = generate_record(&spec, &mut base.fork(i)).unwrap();
            let mut seen: Vec<u8> = rec.labels.clone();
            seen.sort_unstable();
            seen.dedup();
            assert_eq!(seen, vec![0, 1]);
        }
    }

    #[test]
    fn labels_never_exceed_object_count() {
        let spec = SpriteSceneSpec::default();
        let base = RngState::new(3);
        for i in 0..50 {
            let rec = generate_record(&spec, &mut base.fork(i)).unwrap();
            let max = *rec.labels.iter().max().unwrap();
            assert!(max as usize <= spec.n_objects.1);
            assert!(max >= 1);
        }
    }

    #[test]
    fn foreground_pixels_differ_from_background() {
        let spec = SpriteSceneSpec::default();
        let base = RngState::new(4);
        for i in 0..20 {
            let rec = generate_record(&spec, &mut base.fork(i)).unwrap();
            for (p, &label) in rec.labels.iter().enumerate() {
                let px: [u8; 3] = rec.image[3 * p..3 * p + 3].try_into().unwrap();
                if label == 0 {
                    assert_eq!(px, spec.background);
                } else {
                    assert_ne!(px, spec.background);
                }
            }
        }
    }

    #[test]
    fn circle_coverage_matches_area() {
        // fixed radius 5 circles; mean foreground fraction over many
        // records should approach pi r^2 / (H W)
        let spec = SpriteSceneSpec {
            n_objects: (1, 1),
            shapes: vec![Shape::Circle],
            min_object_radius: 5,
            max_object_radius: 5,
            ..Default::default()
        };
        let base = RngState::new(5);
        let mut covered = 0usize;
        let n = 1000;
        for i in 0..n {
            let rec = generate_record(&spec, &mut base.fork(i)).unwrap();
            covered += rec.labels.iter().filter(|&&l| l != 0).count();
        }
        let mean = covered as f64 / n as f64;
        let expect = std::f64::consts::PI * 25.0;
        assert!(
            (mean - expect).abs() / expect < 0.10,
            "mean {mean} vs {expect}"
        );
    }

    #[test]
    fn no_occlusion_keeps_objects_disjoint() {
        let spec = SpriteSceneSpec {
            n_objects: (3, 4),
            ..Default::default()
        };
        let base = RngState::new(6);
        for i in 0..20 {
            let rec = generate_record(&spec, &mut base.fork(i)).unwrap();
            // disjointness is implied by exact label counts: every object
            // drew its full pixel set without overwriting another
            let max = *rec.labels.iter().max().unwrap() as usize;
            assert!(max >= 3);
        }
    }

    #[test]
    fn impossible_placement_errors_out() {
        let spec = SpriteSceneSpec {
            image_size: (13, 13),
            n_objects: (8, 8),
            min_object_radius: 4,
            max_object_radius: 4,
            allow_occlusion: false,
            ..Default::default()
        };
        spec.validate().unwrap();
        let base = RngState::new(1);
        assert!(matches!(
            generate_record(&spec, &mut base.fork(0)),
            Err(DataError::Placement { .. })
        ));
    }

    #[test]
    fn triangle_rows_widen_downwards() {
        assert!(covers(Shape::Triangle, 5, 0, 5)); // base centre
        assert!(covers(Shape::Triangle, -5, 0, 5)); // apex
        assert!(!covers(Shape::Triangle, -5, 1, 5)); // beside the apex
        assert!(covers(Shape::Triangle, 5, 5, 5)); // base corner
        assert!(!covers(Shape::Triangle, 0, 3, 5)); // outside the slant
        assert!(covers(Shape::Triangle, 0, 2, 5));
    }
}
