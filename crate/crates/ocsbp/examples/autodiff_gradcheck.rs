//! Reverse-mode gradients on the tape engine, verified against central
//! finite differences.
//!
//!     cargo run --example autodiff_gradcheck

use ocsbp::tensor::gradcheck::GradCheck;
use ocsbp::{Array, Graph, RngState};

fn main() {
    // d/dx sum(tanh(x)^2) at a random point, by hand on the tape
    let g: Graph<f64> = Graph::new();
    let mut rng = RngState::new(7);
    let x = g.leaf(Array::new(vec![4], rng.normal_vec(4)));
    let y = x.tanh().mul(&x.tanh()).sum_all();
    y.backward().unwrap();
    println!("value        = {:.6}", y.item());
    println!("grad         = {:?}", x.grad_or_zeros().data());

    // the same function through the generic checker, plus a composite
    // expression exercising conv, softmax and reductions
    let check = GradCheck::default();
    check
        .check(&[Array::new(vec![4], rng.normal_vec(4))], |g, inputs| {
            inputs[0].tanh().mul(&inputs[0].tanh()).sum_all().mul(&g.scalar(1.0))
        })
        .expect("tanh^2 gradient");
    println!("tanh^2       : reverse mode matches finite differences");

    let field = Array::new(vec![2, 5, 5], rng.normal_vec(50));
    let weight = Array::new(vec![3, 2, 3, 3], rng.normal_vec(54));
    let probe = Array::new(vec![3, 5, 5], rng.normal_vec(75));
    check
        .check(&[field, weight], move |g, inputs| {
            let bias = g.constant(Array::zeros(&[3]));
            inputs[0]
                .conv2d(&inputs[1], &bias, 1, 1)
                .softmax(0)
                .mul(&g.constant(probe.clone()))
                .sum_all()
        })
        .expect("conv/softmax gradient");
    println!("conv+softmax : reverse mode matches finite differences");
}
