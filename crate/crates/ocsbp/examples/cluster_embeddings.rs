//! Stick-breaking clustering on a synthetic embedding field: three well
//! separated clusters, recovered as soft attention masks whose per-pixel
//! sums are exactly one.
//!
//!     cargo run --example cluster_embeddings

use ocsbp::icsbp::{icsbp_cluster, StopPolicy};
use ocsbp::kernels::{kernel_init_sigma, DistanceKernel, KernelKind};
use ocsbp::{Array, Graph, RngState};

fn main() {
    let (h, w) = (8, 12);
    // embedding = jittered cluster centre; left / middle / right thirds
    let centres = [[0.0, 0.0], [3.0, 0.0], [0.0, 3.0]];
    let mut rng = RngState::new(5);
    let mut data = vec![0.0f64; 2 * h * w];
    for i in 0..h {
        for j in 0..w {
            let c = centres[j / (w / 3)];
            for d in 0..2 {
                data[d * h * w + i * w + j] = c[d] + 0.05 * rng.normal();
            }
        }
    }

    let g: Graph<f64> = Graph::new();
    let field = g.constant(Array::new(vec![2, h, w], data));
    let k = 4;
    let sigma = kernel_init_sigma(KernelKind::Gaussian, k).unwrap();
    let kernel = DistanceKernel::new(KernelKind::Gaussian, g.constant(Array::scalar(sigma.ln())));

    let masks = icsbp_cluster(&field, &kernel, StopPolicy::FixedK { k }, &mut rng);
    println!("seeds: {:?}", masks.seed_pixels);

    // masks partition the unit budget at every pixel
    let stacked = masks.stacked();
    let sums = stacked.sum_axes(&[0], false).value();
    let max_err = sums
        .data()
        .iter()
        .map(|&s| (s - 1.0).abs())
        .fold(0.0f64, f64::max);
    println!("max |sum(masks) - 1| = {max_err:.2e}");

    let hard = masks.hard_assignment();
    println!("hard assignment ({h}x{w}):");
    for i in 0..h {
        let row: String = (0..w).map(|j| char::from(b'a' + hard[i * w + j] as u8)).collect();
        println!("  {row}");
    }

    // flexible stopping keeps only clusters with enough mass
    let flexible = icsbp_cluster(
        &field,
        &kernel,
        StopPolicy::MassThreshold {
            tau_pixels: 200.0,
            k_max: 9,
        },
        &mut rng,
    );
    println!(
        "flexible-K produced {} masks (fixed run produced {k})",
        flexible.masks.len()
    );
}
