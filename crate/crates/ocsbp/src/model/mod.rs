//! The object-centric VAE: UNet backbone, attention/feature/posterior
//! heads, stick-breaking clustering, mask-weighted pooling, per-slot
//! spatial-broadcast decoders, and independent or autoregressive priors.

mod backbone;
mod decoder;
mod heads;
mod prior;

pub use backbone::backbone_encode;
pub use decoder::{decode_components, decode_slot};
pub use heads::{feature_head, pool_slot_features, posterior_head};
pub use prior::prior_params;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::embeddings;
use crate::icsbp::{icsbp_cluster, AttentionMaskSet, StopPolicy};
use crate::kernels::{kernel_init_sigma, DistanceKernel, KernelKind};
use crate::likelihood::{DiagGaussian, SceneComponents};
use crate::tensor::{Array, Binder, El, Graph, ParamStore, RngState, Tensor};

pub const LOG_STD_MIN: f64 = -6.0;
pub const LOG_STD_MAX: f64 = 3.0;
pub(crate) const GN_GROUPS: usize = 8;

#[derive(Debug, Error)]
pub enum ModelError {
    #[error("invalid model config: {0}")]
    BadConfig(String),
    #[error("scene generation requires the autoregressive prior")]
    NoPrior,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PriorKind {
    Independent,
    Autoregressive,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub image_size: (usize, usize),
    pub channels: usize,
    pub k_train: usize,
    pub latent_dim: usize,
    pub backbone_filters: Vec<usize>,
    pub d_e: usize,
    pub d_f: usize,
    pub head_filters: usize,
    pub head_hidden: usize,
    pub decoder_filters: usize,
    pub prior_hidden: usize,
    pub kernel: KernelKind,
    pub prior: PriorKind,
}

impl ModelConfig {
    /// Desk-scale preset: 32x32 images, thin everything.
    pub fn desk32() -> Self {
        Self {
            image_size: (32, 32),
            channels: 3,
            k_train: 5,
            latent_dim: 32,
            backbone_filters: vec![32, 32, 64],
            d_e: 32,
            d_f: 64,
            head_filters: 32,
            head_hidden: 128,
            decoder_filters: 32,
            prior_hidden: 128,
            kernel: KernelKind::Gaussian,
            prior: PriorKind::Autoregressive,
        }
    }

    /// Full-size preset: 64x64 images with the published layer widths.
    pub fn paper64() -> Self {
        Self {
            image_size: (64, 64),
            channels: 3,
            k_train: 7,
            latent_dim: 64,
            backbone_filters: vec![64, 64, 128, 128, 128],
            d_e: 64,
            d_f: 128,
            head_filters: 64,
            head_hidden: 128,
            decoder_filters: 64,
            prior_hidden: 256,
            kernel: KernelKind::Gaussian,
            prior: PriorKind::Autoregressive,
        }
    }

    pub fn validate(&self) -> Result<(), ModelError> {
        let (h, w) = self.image_size;
        let bad = |m: String| Err(ModelError::BadConfig(m));
        let stride = 1usize << self.backbone_filters.len();
        if !h.is_power_of_two() || !w.is_power_of_two() {
            return bad(format!("image size {h}x{w} must be powers of two"));
        }
        if h < stride || w < stride {
            return bad(format!(
                "image {h}x{w} smaller than total backbone stride {stride}"
            ));
        }
        if h < 16 || w < 16 {
            return bad("decoder broadcasts at 1/16 resolution; image must be >= 16".into());
        }
        if self.latent_dim < 1 {
            return bad("latent_dim must be >= 1".into());
        }
        if self.k_train < 2 {
            return bad("k_train must be >= 2".into());
        }
        if self.channels != 3 {
            return bad("only RGB (3-channel) images supported".into());
        }
        for &f in &self.backbone_filters {
            if f % GN_GROUPS != 0 {
                return bad(format!("backbone filter count {f} not divisible by 8"));
            }
        }
        for f in [self.d_e, self.head_filters, self.decoder_filters] {
            if f % GN_GROUPS != 0 {
                return bad(format!("channel count {f} not divisible by 8"));
            }
        }
        Ok(())
    }
}

/// Per-slot latent state from one encode pass.
pub struct SlotLatents<T: El> {
    pub posterior: Vec<DiagGaussian<T>>,
    pub samples: Vec<Tensor<T>>,
    pub prior: Vec<DiagGaussian<T>>,
}

pub struct EncodeResult<T: El> {
    pub attention: AttentionMaskSet<T>,
    pub latents: SlotLatents<T>,
    pub components: SceneComponents<T>,
    pub reconstruction: Tensor<T>,
}

pub struct Model<T: El> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
}

impl<T: El> Model<T> {
    /// Allocate and initialise all parameters from a seed.
    pub fn init(config: ModelConfig, seed: u64) -> Result<Self, ModelError> {
        config.validate()?;
        let mut store = ParamStore::new();
        let mut rng = RngState::new(seed);
        backbone::init_backbone(&mut store, &config, &mut rng);
        embeddings::init_embedding_head(
            &mut store,
            "attention",
            config.d_e,
            config.head_filters,
            &mut rng,
        );
        heads::init_feature_head(&mut store, &config, &mut rng);
        heads::init_posterior_head(&mut store, &config, &mut rng);
        decoder::init_decoder(&mut store, &config, &mut rng);
        if config.prior == PriorKind::Autoregressive {
            prior::init_prior(&mut store, &config, &mut rng);
        }
        let sigma = kernel_init_sigma(config.kernel, config.k_train)
            .map_err(|e| ModelError::BadConfig(e.to_string()))?;
        store.insert("kernel.log_sigma", Array::scalar(T::from_f64(sigma.ln())));
        Ok(Self { config, store })
    }

    pub fn kernel(&self, binder: &Binder<T>) -> DistanceKernel<T> {
        DistanceKernel::new(self.config.kernel, binder.get("kernel.log_sigma"))
    }

    /// Full encode pass on an existing graph/binder (so training code can
    /// harvest parameter gradients afterwards).
    pub fn encode_on(
        &self,
        binder: &Binder<T>,
        x: &Tensor<T>,
        policy: StopPolicy,
        rng: &mut RngState,
    ) -> EncodeResult<T> {
        let cfg = &self.config;
        let features = backbone_encode(x, binder, cfg);
        let zeta = embeddings::semiconv_embed(&features, binder, "attention");
        let kernel = self.kernel(binder);
        let attention = icsbp_cluster(&zeta, &kernel, policy, rng);
        let f = feature_head(&features, binder, cfg);
        let pooled = pool_slot_features(&f, &attention);

        let mut posterior = Vec::with_capacity(pooled.len());
        let mut samples = Vec::with_capacity(pooled.len());
        for slot in &pooled {
            let q = posterior_head(slot, binder, cfg);
            let noise = binder
                .graph()
                .constant(Array::new(vec![cfg.latent_dim], {
                    rng.normal_vec(cfg.latent_dim)
                        .into_iter()
                        .map(T::from_f64)
                        .collect()
                }));
            let z = q.mean.add(&q.log_std.exp().mul(&noise));
            posterior.push(q);
            samples.push(z);
        }
        let prior = prior_params(&samples, binder, cfg);
        let components = decode_components(&samples, binder, cfg);
        let reconstruction = mixture_image(&components, cfg);
        EncodeResult {
            attention,
            latents: SlotLatents {
                posterior,
                samples,
                prior,
            },
            components,
            reconstruction,
        }
    }

    /// Convenience encode on a fresh graph (evaluation use).
    pub fn encode(
        &self,
        x: &Array<T>,
        policy: StopPolicy,
        rng: &mut RngState,
    ) -> (Graph<T>, EncodeResult<T>) {
        let g: Graph<T> = Graph::new();
        let binder = Binder::new(&self.store, &g);
        let xt = g.constant(x.clone());
        let result = self.encode_on(&binder, &xt, policy, rng);
        (g, result)
    }

    /// Ancestrally sample a scene with `k_gen` slots from the prior.
    pub fn generate_scene(
        &self,
        k_gen: usize,
        rng: &mut RngState,
    ) -> Result<(Graph<T>, Tensor<T>, SceneComponents<T>), ModelError> {
        if self.config.prior != PriorKind::Autoregressive {
            return Err(ModelError::NoPrior);
        }
        let g: Graph<T> = Graph::new();
        let binder = Binder::new(&self.store, &g);
        let cfg = &self.config;
        let mut samples: Vec<Tensor<T>> = Vec::with_capacity(k_gen);
        for k in 0..k_gen {
            let p = prior::prior_step(&samples[..k], &binder, cfg);
            let noise = g.constant(Array::new(vec![cfg.latent_dim], {
                rng.normal_vec(cfg.latent_dim)
                    .into_iter()
                    .map(T::from_f64)
                    .collect()
            }));
            samples.push(p.mean.add(&p.log_std.exp().mul(&noise)));
        }
        let components = decode_components(&samples, &binder, cfg);
        let image = mixture_image(&components, cfg);
        Ok((g, image, components))
    }
}

/// sum_k pi_k * mu_k as a `[c, h, w]` image.
pub fn mixture_image<T: El>(comps: &SceneComponents<T>, cfg: &ModelConfig) -> Tensor<T> {
    let (h, w) = cfg.image_size;
    let k = comps.masks_pi.shape()[0];
    let pi = comps
        .masks_pi
        .reshape(&[k, 1, h, w])
        .broadcast_to(&[k, cfg.channels, h, w]);
    comps.means.mul(&pi).sum_axes(&[0], false)
}

/// `[m, n] x [n] -> [m]` fully-connected layer.
pub(crate) fn linear<T: El>(x: &Tensor<T>, w: &Tensor<T>, b: &Tensor<T>) -> Tensor<T> {
    let n = x.shape()[0];
    let m = w.shape()[0];
    w.matmul(&x.reshape(&[n, 1])).reshape(&[m]).add(b)
}
