//! Slot priors. Independent mode fixes every slot to N(0, I); the
//! autoregressive mode runs an LSTM over the previous latent samples
//! (zero input for the first slot) and emits per-slot Gaussian parameters
//! through a linear readout.

use crate::likelihood::DiagGaussian;
use crate::tensor::{init_linear, Array, Binder, El, ParamStore, RngState, Tensor};

use super::{linear, ModelConfig, PriorKind, LOG_STD_MAX, LOG_STD_MIN};

pub(crate) fn init_prior<T: El>(store: &mut ParamStore<T>, cfg: &ModelConfig, rng: &mut RngState) {
    let h = cfg.prior_hidden;
    init_linear(store, "prior.lstm.ih", 4 * h, cfg.latent_dim, rng);
    init_linear(store, "prior.lstm.hh", 4 * h, h, rng);
    init_linear(store, "prior.out", 2 * cfg.latent_dim, h, rng);
}

struct LstmState<T: El> {
    h: Tensor<T>,
    c: Tensor<T>,
}

fn lstm_step<T: El>(
    state: &LstmState<T>,
    x: &Tensor<T>,
    binder: &Binder<T>,
    hidden: usize,
) -> LstmState<T> {
    let gates = linear(
        x,
        &binder.get("prior.lstm.ih.weight"),
        &binder.get("prior.lstm.ih.bias"),
    )
    .add(&linear(
        &state.h,
        &binder.get("prior.lstm.hh.weight"),
        &binder.get("prior.lstm.hh.bias"),
    ));
    let i = gates.narrow(0, 0, hidden).sigmoid();
    let f = gates.narrow(0, hidden, hidden).sigmoid();
    let g = gates.narrow(0, 2 * hidden, hidden).tanh();
    let o = gates.narrow(0, 3 * hidden, hidden).sigmoid();
    let c = f.mul(&state.c).add(&i.mul(&g));
    let h = o.mul(&c.tanh());
    LstmState { h, c }
}

fn readout<T: El>(state: &LstmState<T>, binder: &Binder<T>, cfg: &ModelConfig) -> DiagGaussian<T> {
    let out = linear(
        &state.h,
        &binder.get("prior.out.weight"),
        &binder.get("prior.out.bias"),
    );
    DiagGaussian::new(
        out.narrow(0, 0, cfg.latent_dim),
        out.narrow(0, cfg.latent_dim, cfg.latent_dim)
            .clamp(LOG_STD_MIN, LOG_STD_MAX),
    )
}

/// Parameters of p(z_k | z_{<k}) given the previous samples.
pub(crate) fn prior_step<T: El>(
    previous: &[Tensor<T>],
    binder: &Binder<T>,
    cfg: &ModelConfig,
) -> DiagGaussian<T> {
    let g = binder.graph();
    let zero = |n: usize| g.constant(Array::<T>::zeros(&[n]));
    let mut state = LstmState {
        h: zero(cfg.prior_hidden),
        c: zero(cfg.prior_hidden),
    };
    state = lstm_step(&state, &zero(cfg.latent_dim), binder, cfg.prior_hidden);
    for z in previous {
        state = lstm_step(&state, z, binder, cfg.prior_hidden);
    }
    readout(&state, binder, cfg)
}

/// Prior parameters for every slot, in the order the samples were drawn.
pub fn prior_params<T: El>(
    samples: &[Tensor<T>],
    binder: &Binder<T>,
    cfg: &ModelConfig,
) -> Vec<DiagGaussian<T>> {
    match cfg.prior {
        PriorKind::Independent => samples
            .iter()
            .map(|_| DiagGaussian::standard(binder.graph(), cfg.latent_dim))
            .collect(),
        PriorKind::Autoregressive => {
            let g = binder.graph();
            let zero = |n: usize| g.constant(Array::<T>::zeros(&[n]));
            let mut state = LstmState {
                h: zero(cfg.prior_hidden),
                c: zero(cfg.prior_hidden),
            };
            let mut out = Vec::with_capacity(samples.len());
            for k in 0..samples.len() {
                let input = if k == 0 {
                    zero(cfg.latent_dim)
                } else {
                    samples[k - 1].clone()
                };
                state = lstm_step(&state, &input, binder, cfg.prior_hidden);
                out.push(readout(&state, binder, cfg));
            }
            out
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::likelihood::gaussian_kl;
    use crate::tensor::Graph;

    fn ar_cfg() -> ModelConfig {
        ModelConfig {
            prior_hidden: 16,
            latent_dim: 8,
            ..ModelConfig::desk32()
        }
    }

    fn store(cfg: &ModelConfig) -> crate::tensor::ParamStore<f64> {
        let mut s = crate::tensor::ParamStore::new();
        init_prior(&mut s, cfg, &mut RngState::new(1));
        s
    }

    #[test]
    fn independent_mode_is_standard_normal() {
        let cfg = ModelConfig {
            prior: PriorKind::Independent,
            ..ar_cfg()
        };
        let s = store(&cfg);
        let g: Graph<f64> = Graph::new();
        let binder = Binder::new(&s, &g);
        let mut rng = RngState::new(2);
        let samples: Vec<_> = (0..3)
            .map(|_| g.constant(Array::new(vec![8], rng.normal_vec(8))))
            .collect();
        let priors = prior_params(&samples, &binder, &cfg);
        for p in &priors {
            assert!(p.mean.value().data().iter().all(|&v| v == 0.0));
            assert!(p.log_std.value().data().iter().all(|&v| v == 0.0));
        }
        // KL against them equals the closed-form standard-normal KL
        let q = DiagGaussian::new(samples[0].clone(), g.constant(Array::zeros(&[8])));
        let direct = gaussian_kl(&q, &priors[0]).unwrap().item();
        let oracle: f64 = samples[0]
            .value()
            .data()
            .iter()
            .map(|&m| 0.5 * m * m)
            .sum();
        assert!((direct - oracle).abs() < 1e-12);
    }

    #[test]
    fn first_slot_prior_ignores_the_input() {
        let cfg = ar_cfg();
        let s = store(&cfg);
        let g: Graph<f64> = Graph::new();
        let binder = Binder::new(&s, &g);
        let mut rng = RngState::new(3);
        let a: Vec<_> = (0..2)
            .map(|_| g.constant(Array::new(vec![8], rng.normal_vec(8))))
            .collect();
        let b: Vec<_> = (0..2)
            .map(|_| g.constant(Array::new(vec![8], rng.normal_vec(8))))
            .collect();
        let pa = prior_params(&a, &binder, &cfg);
        let pb = prior_params(&b, &binder, &cfg);
        assert_eq!(pa[0].mean.value().data(), pb[0].mean.value().data());
        assert_ne!(pa[1].mean.value().data(), pb[1].mean.value().data());
    }

    #[test]
    fn prior_step_matches_sequential_params() {
        let cfg = ar_cfg();
        let s = store(&cfg);
        let g: Graph<f64> = Graph::new();
        let binder = Binder::new(&s, &g);
        let mut rng = RngState::new(4);
        let samples: Vec<_> = (0..3)
            .map(|_| g.constant(Array::new(vec![8], rng.normal_vec(8))))
            .collect();
        let all = prior_params(&samples, &binder, &cfg);
        for k in 0..3 {
            let step = prior_step(&samples[..k], &binder, &cfg);
            assert_eq!(step.mean.value().data(), all[k].mean.value().data());
            assert_eq!(step.log_std.value().data(), all[k].log_std.value().data());
        }
    }

    #[test]
    fn gradients_flow_into_prior_parameters_and_samples() {
        let cfg = ar_cfg();
        let mut s = store(&cfg);
        let grads = {
            let g: Graph<f64> = Graph::new();
            let binder = Binder::new(&s, &g);
            let mut rng = RngState::new(5);
            let z0 = g.leaf(Array::new(vec![8], rng.normal_vec(8)));
            let z1 = g.leaf(Array::new(vec![8], rng.normal_vec(8)));
            let priors = prior_params(&[z0.clone(), z1], &binder, &cfg);
            priors[1].mean.sum_all().backward().unwrap();
            assert!(z0.grad_or_zeros().data().iter().any(|&v| v != 0.0));
            binder.into_grads()
        };
        assert!(grads
            .iter()
            .any(|(n, g)| n.starts_with("prior.lstm") && g.data().iter().any(|&v| v != 0.0)));
        crate::tensor::apply_grads(&mut s, grads);
    }
}
