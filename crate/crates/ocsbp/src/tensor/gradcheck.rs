//! Central finite-difference verification of reverse-mode gradients.
//!
//! Runs in f64. The closure rebuilds the computation from scratch for every
//! perturbed evaluation, so it must be a pure function of its inputs.

use super::{Array, Graph, Tensor};

pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
    /// Check at most this many coordinates per input (0 = all).
    pub max_coords: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-4,
            tol: 1e-4,
            max_coords: 0,
        }
    }
}

impl GradCheck {
    /// Compare reverse-mode gradients of a scalar-valued function against
    /// central differences at every (sampled) input coordinate.
    pub fn check<F>(&self, inputs: &[Array<f64>], f: F) -> Result<(), String>
    where
        F: Fn(&Graph<f64>, &[Tensor<f64>]) -> Tensor<f64>,
    {
        let eval = |arrays: &[Array<f64>]| -> f64 {
            let g = Graph::new();
            let ts: Vec<Tensor<f64>> = arrays.iter().map(|a| g.constant(a.clone())).collect();
            f(&g, &ts).item()
        };
        let g = Graph::new();
        let ts: Vec<Tensor<f64>> = inputs.iter().map(|a| g.leaf(a.clone())).collect();
        let y = f(&g, &ts);
        if y.numel() != 1 {
            return Err(format!("gradcheck function must be scalar, got {:?}", y.shape()));
        }
        y.backward().map_err(|e| e.to_string())?;
        let grads: Vec<Array<f64>> = ts.iter().map(|t| t.grad_or_zeros()).collect();

        for (i, input) in inputs.iter().enumerate() {
            let n = input.numel();
            let coords: Vec<usize> = if self.max_coords == 0 || n <= self.max_coords {
                (0..n).collect()
            } else {
                // deterministic stratified subsample
                (0..self.max_coords)
                    .map(|j| j * n / self.max_coords)
                    .collect()
            };
            for &c in &coords {
                let mut plus = inputs.to_vec();
                plus[i].data_mut()[c] += self.step;
                let mut minus = inputs.to_vec();
                minus[i].data_mut()[c] -= self.step;
                let fd = (eval(&plus) - eval(&minus)) / (2.0 * self.step);
                let ad = grads[i].data()[c];
                let err = (ad - fd).abs();
                let scale = ad.abs().max(fd.abs());
                if err > self.tol * scale + 1e-7 {
                    return Err(format!(
                        "input {i} coord {c}: reverse-mode {ad:.8e} vs finite-diff {fd:.8e} (err {err:.3e})"
                    ));
                }
            }
        }
        Ok(())
    }
}

/// Convenience wrapper with default step and tolerance.
pub fn check_gradients<F>(inputs: &[Array<f64>], f: F) -> Result<(), String>
where
    F: Fn(&Graph<f64>, &[Tensor<f64>]) -> Tensor<f64>,
{
    GradCheck::default().check(inputs, f)
}
