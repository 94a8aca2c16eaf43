//! Seeded random instances.
//!
//! Per seed a single stream draws, in order: the weights of every head, a
//! standard-normal token matrix `Z` and the labels `Y ~ N(0, 1)`. Sweeps over
//! the embedding scale use `X = σ Z`, so labels and weights stay frozen.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::error::Result;
use crate::model::{forward, Activation, AttentionSpec, HeadParams, Sequence};
use crate::tensor::Mat;

use super::config::{Dims, ExperimentConfig, Parameterization, Variant};

/// Attention rows whose largest entry exceeds this count as saturated.
pub const SATURATION_LIMIT: f64 = 0.9;

/// Draws per seed before a saturated instance is kept and flagged.
pub const MAX_RESAMPLES: usize = 10;

pub fn rng_for(seed: u64, offset: i64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed.wrapping_add_signed(offset))
}

pub fn normal_mat(rng: &mut ChaCha8Rng, rows: usize, cols: usize, std: f64) -> Mat {
    let dist = Normal::new(0.0, std).expect("standard deviation is positive");
    Mat::from_fn(rows, cols, |_, _| dist.sample(rng))
}

pub fn sample_spec(
    rng: &mut ChaCha8Rng,
    dims: &Dims,
    variant: &Variant,
    std: f64,
) -> Result<AttentionSpec> {
    let d = dims.d_v;
    let heads = (0..dims.heads)
        .map(|_| match variant.parameterization {
            Parameterization::Classical => {
                let w_q = normal_mat(rng, d, dims.d_k, std);
                let w_k = normal_mat(rng, d, dims.d_k, std);
                HeadParams::classical(w_q, w_k, normal_mat(rng, d, d, std))
            }
            Parameterization::Single => {
                let w_qk = normal_mat(rng, d, d, std);
                HeadParams::single(w_qk, normal_mat(rng, d, d, std))
            }
        })
        .collect();
    AttentionSpec::multi_head(heads)?
        .with_activation(variant.activation)
        .with_temperature(variant.temperature)
}

#[derive(Clone, Debug)]
pub struct Instance {
    pub spec: AttentionSpec,
    /// Unit-scale tokens; the sequence at scale `σ` uses `σ Z`.
    pub z: Mat,
    pub y: Mat,
}

impl Instance {
    pub fn sample(rng: &mut ChaCha8Rng, cfg: &ExperimentConfig) -> Result<Self> {
        let spec = sample_spec(rng, &cfg.dims, &cfg.variant, cfg.weight_std())?;
        let z = normal_mat(rng, cfg.dims.seq_len, cfg.dims.d_v, 1.0);
        let y = normal_mat(rng, cfg.dims.seq_len, cfg.dims.d_v, 1.0);
        Ok(Self { spec, z, y })
    }

    pub fn sequence(&self, sigma: f64) -> Result<Sequence> {
        Sequence::new(self.z.scale(sigma), self.y.clone())
    }

    /// Largest attention entry over all heads and all `σ` in the grid.
    pub fn max_attention(&self, sigmas: &[f64]) -> Result<f64> {
        let mut max: f64 = 0.0;
        for &s in sigmas {
            let cache = forward(&self.spec, &self.sequence(s)?)?;
            for h in &cache.heads {
                max = max.max(h.a.max_abs());
            }
        }
        Ok(max)
    }
}

/// An instance together with how it was obtained.
#[derive(Clone, Debug)]
pub struct Draw {
    pub instance: Instance,
    pub attempts: usize,
    /// `true` if every attempt saturated and the last one was kept.
    pub saturated: bool,
}

/// Draw an instance whose softmax attention stays below
/// [`SATURATION_LIMIT`] over the whole `σ` grid, redrawing from the same
/// stream up to [`MAX_RESAMPLES`] times.
pub fn sample_unsaturated(cfg: &ExperimentConfig, seed: u64, offset: i64) -> Result<Draw> {
    let mut rng = rng_for(seed, offset);
    let mut attempts = 0;
    loop {
        attempts += 1;
        let instance = Instance::sample(&mut rng, cfg)?;
        let saturated = cfg.variant.activation == Activation::Softmax
            && instance.max_attention(&cfg.sigma_grid)? > SATURATION_LIMIT;
        if !saturated || attempts >= MAX_RESAMPLES {
            return Ok(Draw {
                instance,
                attempts,
                saturated,
            });
        }
    }
}
