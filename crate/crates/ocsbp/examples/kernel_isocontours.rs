//! The distance-kernel initialisation puts the attention half-maximum on
//! a circle of radius 1/sqrt(K) around every seed, for each kernel family.
//!
//!     cargo run --example kernel_isocontours

use ocsbp::kernels::{kernel_init_sigma, DistanceKernel, KernelKind, SeedKernel};
use ocsbp::{Array, Graph};

fn main() {
    let kinds = [
        KernelKind::Gaussian,
        KernelKind::Laplacian,
        KernelKind::Epanechnikov,
    ];
    println!("{:<14} {:>3} {:>10} {:>12}", "kernel", "K", "sigma", "psi(1/sqrt K)");
    for kind in kinds {
        for k in [4usize, 7, 9] {
            let sigma = kernel_init_sigma(kind, k).unwrap();
            let g: Graph<f64> = Graph::new();
            let kernel = DistanceKernel::new(kind, g.constant(Array::scalar(sigma.ln())));

            // a 1-d embedding field holding the distance axis: the seed
            // sits at 0, the probe pixel at exactly 1/sqrt(K)
            let r = 1.0 / (k as f64).sqrt();
            let field = g.constant(Array::new(vec![1, 1, 2], vec![0.0, r]));
            let seed = g.constant(Array::new(vec![1], vec![0.0]));
            let alpha = kernel.attention(&field, &seed);
            let at_radius = alpha.value().data()[1];
            println!("{:<14} {:>3} {:>10.5} {:>12.6}", kind.name(), k, sigma, at_radius);
            assert!((at_radius - 0.5).abs() < 1e-12);
        }
    }
    println!("every kernel family crosses 0.5 exactly at radius 1/sqrt(K)");
}
