//! Binary PPM (P6) export, categorical segmentation rendering, and
//! side-by-side component grids.

use std::io::Write;
use std::path::Path;

use super::DataError;

pub const GUTTER_PX: usize = 2;

/// Fixed categorical palette for rendering segmentations.
pub const SEGMENT_PALETTE: [[u8; 3]; 12] = [
    [64, 64, 64],
    [230, 25, 75],
    [60, 180, 75],
    [255, 225, 25],
    [0, 130, 200],
    [245, 130, 48],
    [145, 30, 180],
    [70, 240, 240],
    [240, 50, 230],
    [210, 245, 60],
    [250, 190, 190],
    [0, 128, 128],
];

/// Write row-major RGB bytes as a binary PPM with maxval 255.
pub fn write_ppm(path: &Path, height: usize, width: usize, rgb: &[u8]) -> Result<(), DataError> {
    assert_eq!(rgb.len(), height * width * 3, "rgb buffer size");
    let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
    write!(f, "P6\n{width} {height}\n255\n")?;
    f.write_all(rgb)?;
    f.flush()?;
    Ok(())
}

/// Read a binary PPM (P6) with maxval 255; `#` comments are allowed in
/// the header. Returns `(height, width, rgb)`.
pub fn read_ppm(path: &Path) -> Result<(usize, usize, Vec<u8>), DataError> {
    let bytes = std::fs::read(path)?;
    if bytes.len() < 2 || &bytes[..2] != b"P6" {
        let mut m = [0u8; 4];
        for (d, s) in m.iter_mut().zip(bytes.iter()) {
            *d = *s;
        }
        return Err(DataError::BadMagic(m));
    }
    let mut pos = 2;
    let mut fields = [0usize; 3];
    for field in fields.iter_mut() {
        // skip whitespace and comments
        loop {
            match bytes.get(pos) {
                Some(b) if b.is_ascii_whitespace() => pos += 1,
                Some(b'#') => {
                    while pos < bytes.len() && bytes[pos] != b'\n' {
                        pos += 1;
                    }
                }
                _ => break,
            }
        }
        let start = pos;
        while pos < bytes.len() && bytes[pos].is_ascii_digit() {
            pos += 1;
        }
        let text = std::str::from_utf8(&bytes[start..pos]).expect("digits");
        *field = text
            .parse()
            .map_err(|_| DataError::BadSpec(format!("ppm header field at byte {start}")))?;
    }
    let [width, height, maxval] = fields;
    if maxval != 255 {
        return Err(DataError::BadSpec(format!("ppm maxval {maxval} (expected 255)")));
    }
    pos += 1; // single whitespace byte after maxval
    let expected = height * width * 3;
    let actual = bytes.len().saturating_sub(pos);
    if actual < expected {
        return Err(DataError::Truncated { expected, actual });
    }
    Ok((height, width, bytes[pos..pos + expected].to_vec()))
}

/// Map per-pixel labels to palette colours.
pub fn render_segmentation(labels: &[u8]) -> Vec<u8> {
    let mut rgb = Vec::with_capacity(labels.len() * 3);
    for &l in labels {
        rgb.extend_from_slice(&SEGMENT_PALETTE[l as usize % SEGMENT_PALETTE.len()]);
    }
    rgb
}

/// Tile equally-sized RGB images left-to-right with white gutters.
pub fn tile_grid(images: &[Vec<u8>], height: usize, width: usize) -> Vec<u8> {
    assert!(!images.is_empty());
    for img in images {
        assert_eq!(img.len(), height * width * 3, "tile size");
    }
    let k = images.len();
    let out_w = k * width + (k - 1) * GUTTER_PX;
    let mut out = vec![255u8; height * out_w * 3];
    for (t, img) in images.iter().enumerate() {
        let x0 = t * (width + GUTTER_PX);
        for row in 0..height {
            let src = &img[row * width * 3..(row + 1) * width * 3];
            let dst = (row * out_w + x0) * 3;
            out[dst..dst + width * 3].copy_from_slice(src);
        }
    }
    out
}

/// Clamp unit-interval floats to bytes.
pub fn floats_to_rgb(values: &[f64]) -> Vec<u8> {
    values
        .iter()
        .map(|&v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
        .collect()
}

/// Convert a CHW float image in [0,1] to row-major RGB bytes.
pub fn chw_to_rgb(values: &[f64], height: usize, width: usize) -> Vec<u8> {
    assert_eq!(values.len(), 3 * height * width);
    let n = height * width;
    let mut rgb = Vec::with_capacity(n * 3);
    for p in 0..n {
        for c in 0..3 {
            rgb.push((values[c * n + p].clamp(0.0, 1.0) * 255.0).round() as u8);
        }
    }
    rgb
}
