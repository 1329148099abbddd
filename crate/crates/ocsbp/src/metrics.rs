//! Segmentation metrics: adjusted Rand index, mean segmentation covering
//! (both with foreground-restricted variants) and slot-count MAE.

use std::collections::HashMap;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("label maps differ in length: {0} vs {1}")]
    LengthMismatch(usize, usize),
    #[error("no pixels left after foreground restriction")]
    EmptyForeground,
    #[error("ground truth contains no segments")]
    NoSegments,
    #[error("empty slot-count list")]
    EmptyCounts,
}

pub const BACKGROUND_LABEL: u32 = 0;

fn restricted<'a>(
    pred: &'a [u32],
    truth: &'a [u32],
    foreground_only: bool,
) -> Result<Vec<(u32, u32)>, MetricError> {
    if pred.len() != truth.len() {
        return Err(MetricError::LengthMismatch(pred.len(), truth.len()));
    }
    let pairs: Vec<(u32, u32)> = pred
        .iter()
        .zip(truth)
        .filter(|(_, &t)| !foreground_only || t != BACKGROUND_LABEL)
        .map(|(&p, &t)| (p, t))
        .collect();
    if pairs.is_empty() {
        return Err(MetricError::EmptyForeground);
    }
    Ok(pairs)
}

/// Adjusted Rand index between two label maps. With `foreground_only`,
/// both maps are restricted to pixels whose ground truth is foreground.
pub fn ari(pred: &[u32], truth: &[u32], foreground_only: bool) -> Result<f64, MetricError> {
    let pairs = restricted(pred, truth, foreground_only)?;
    let n = pairs.len() as f64;

    let mut table: HashMap<(u32, u32), f64> = HashMap::new();
    let mut rows: HashMap<u32, f64> = HashMap::new();
    let mut cols: HashMap<u32, f64> = HashMap::new();
    for &(p, t) in &pairs {
        *table.entry((p, t)).or_default() += 1.0;
        *rows.entry(p).or_default() += 1.0;
        *cols.entry(t).or_default() += 1.0;
    }
    let choose2 = |x: f64| x * (x - 1.0) / 2.0;
    let sum_cells: f64 = table.values().map(|&v| choose2(v)).sum();
    let sum_rows: f64 = rows.values().map(|&v| choose2(v)).sum();
    let sum_cols: f64 = cols.values().map(|&v| choose2(v)).sum();
    let total = choose2(n);
    if total == 0.0 {
        // a single pixel: the partitions agree trivially
        return Ok(1.0);
    }
    let expected = sum_rows * sum_cols / total;
    let max_index = 0.5 * (sum_rows + sum_cols);
    if (max_index - expected).abs() < 1e-12 {
        // both partitions trivial (e.g. single clusters): perfect agreement
        return Ok(1.0);
    }
    Ok((sum_cells - expected) / (max_index - expected))
}

/// Mean segmentation covering: mean over ground-truth segments of the
/// best IOU achieved by any predicted segment. `pixel_weighted` weights
/// each segment by its size instead of uniformly.
pub fn msc(
    pred: &[u32],
    truth: &[u32],
    foreground_only: bool,
    pixel_weighted: bool,
) -> Result<f64, MetricError> {
    let pairs = restricted(pred, truth, foreground_only)?;

    let mut overlap: HashMap<(u32, u32), f64> = HashMap::new();
    let mut truth_size: HashMap<u32, f64> = HashMap::new();
    let mut pred_size: HashMap<u32, f64> = HashMap::new();
    for &(p, t) in &pairs {
        *overlap.entry((t, p)).or_default() += 1.0;
        *truth_size.entry(t).or_default() += 1.0;
        *pred_size.entry(p).or_default() += 1.0;
    }
    if truth_size.is_empty() {
        return Err(MetricError::NoSegments);
    }
    let mut num = 0.0;
    let mut den = 0.0;
    for (&t, &ts) in &truth_size {
        let mut best = 0.0f64;
        for (&p, &ps) in &pred_size {
            if let Some(&inter) = overlap.get(&(t, p)) {
                let iou = inter / (ts + ps - inter);
                best = best.max(iou);
            }
        }
        let wgt = if pixel_weighted { ts } else { 1.0 };
        num += wgt * best;
        den += wgt;
    }
    Ok(num / den)
}

/// Mean absolute error between used and ideal slot counts.
pub fn slot_count_mae(counts: &[(usize, usize)]) -> Result<f64, MetricError> {
    if counts.is_empty() {
        return Err(MetricError::EmptyCounts);
    }
    let total: f64 = counts
        .iter()
        .map(|&(used, ideal)| (used as f64 - ideal as f64).abs())
        .sum();
    Ok(total / counts.len() as f64)
}
