//! Curvature growth with depth: stacked identity-attention layers against a
//! plain linear network.
//!
//! For `D` stacked layers `X_{l+1} = (X_l W_Q W_Kᵀ X_lᵀ / s) X_l W_V`, each
//! layer multiplies the polynomial degree in `σ` by three. The Hessian of
//! `‖X_D‖² / (L d_v)` w.r.t. the last `W_V` is therefore homogeneous of
//! degree `2·3^D` in `σ`. A linear network `X W_1 ⋯ W_D` gives degree 2 at
//! every depth. The Hessians come from the finite-difference oracle, so this
//! experiment does not depend on the closed forms.

use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::oracle::{fd_hessian_fn, DEFAULT_PARAM_CAP};
use crate::tensor::Mat;

use super::config::{Command, ExperimentConfig};
use super::output::{mean_sem, write_csv, write_json, RunContext};
use super::sampling::{normal_mat, rng_for};
use super::scaling::{fit_series, render_series, ScalingPoint, ScalingResult};

/// Depths of the linear-network control.
pub const MLP_DEPTHS: [usize; 3] = [1, 2, 3];

/// Slope tolerance for the linear-network control.
pub const MLP_TOLERANCE: f64 = 0.3;

/// Expected slope and tolerance for `depth` stacked attention layers.
pub fn attention_expectation(depth: usize) -> (f64, f64) {
    let slope = 2.0 * 3f64.powi(depth as i32);
    (slope, 0.5 * 3f64.powi(depth as i32 - 1))
}

/// Weights of one identity-attention layer.
#[derive(Clone, Debug)]
pub struct Layer {
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
}

/// Frozen draws for one seed; shallower stacks use a prefix of the layers.
#[derive(Clone, Debug)]
pub struct DepthInstance {
    pub layers: Vec<Layer>,
    pub z: Mat,
    pub mlp: Vec<Mat>,
    /// `t √d_k`.
    pub scale: f64,
}

impl DepthInstance {
    /// Draw order: attention layers, tokens, linear-network weights.
    pub fn sample(rng: &mut ChaCha8Rng, cfg: &ExperimentConfig) -> Self {
        let (d, k) = (cfg.dims.d_v, cfg.dims.d_k);
        let std = cfg.weight_std();
        let max_depth = cfg.depths.iter().copied().max().unwrap_or(1);
        let layers = (0..max_depth)
            .map(|_| Layer {
                w_q: normal_mat(rng, d, k, std),
                w_k: normal_mat(rng, d, k, std),
                w_v: normal_mat(rng, d, d, std),
            })
            .collect();
        let z = normal_mat(rng, cfg.dims.seq_len, d, 1.0);
        let mlp = (0..MLP_DEPTHS[MLP_DEPTHS.len() - 1])
            .map(|_| normal_mat(rng, d, d, std))
            .collect();
        Self {
            layers,
            z,
            mlp,
            scale: cfg.variant.temperature * (k as f64).sqrt(),
        }
    }
}

/// One identity-attention layer.
pub fn attention_layer(x: &Mat, layer: &Layer, w_v: &Mat, scale: f64) -> Mat {
    let t = x
        .dot(&layer.w_q)
        .dot(&x.dot(&layer.w_k).transpose())
        .scale(1.0 / scale);
    t.dot(&x.dot(w_v))
}

fn mean_square(f: &Mat) -> f64 {
    f.as_slice().iter().map(|v| v * v).sum::<f64>() / f.len() as f64
}

/// Loss of a `depth`-layer attention stack as a function of the last `W_V`.
pub fn attention_stack_loss(inst: &DepthInstance, x: &Mat, depth: usize, last_w_v: &Mat) -> f64 {
    let mut h = x.clone();
    for (i, layer) in inst.layers[..depth].iter().enumerate() {
        let w_v = if i + 1 == depth { last_w_v } else { &layer.w_v };
        h = attention_layer(&h, layer, w_v, inst.scale);
    }
    mean_square(&h)
}

/// Loss of a `depth`-layer linear network as a function of the last weight.
pub fn mlp_loss(inst: &DepthInstance, x: &Mat, depth: usize, last: &Mat) -> f64 {
    let mut h = x.clone();
    for w in &inst.mlp[..depth - 1] {
        h = h.dot(w);
    }
    mean_square(&h.dot(last))
}

fn fd_norm(d: usize, theta: &Mat, f: impl Fn(&Mat) -> f64 + Sync) -> Result<f64> {
    let h = fd_hessian_fn(
        |p| {
            let w = Mat::from_vec(d, d, p.to_vec())?;
            Ok(f(&w))
        },
        theta.as_slice(),
        DEFAULT_PARAM_CAP,
    )?;
    Ok(h.frobenius_norm())
}

/// Series labels: `attn_D<depth>:V` and `mlp_D<depth>:W`.
pub fn attention_label(depth: usize) -> String {
    format!("attn_D{depth}:V")
}

pub fn mlp_label(depth: usize) -> String {
    format!("mlp_D{depth}:W")
}

/// Writes `depth.csv` and `depth.json` in the scaling format.
pub fn run_depth(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<(ScalingResult, Vec<ScalingPoint>)> {
    cfg.validate()?;
    if cfg.depths.is_empty() || cfg.depths.contains(&0) {
        return Err(Error::Config(
            "depths must be a nonempty list of positive integers".into(),
        ));
    }
    let d = cfg.dims.d_v;
    if cfg.dims.heads != 1 {
        return Err(Error::Config(
            "the depth experiment uses a single head".into(),
        ));
    }
    let instances: Vec<DepthInstance> = cfg
        .seeds
        .iter()
        .map(|&seed| DepthInstance::sample(&mut rng_for(seed, ctx.seed_offset), cfg))
        .collect();

    let mut labels: Vec<(String, Option<(f64, f64)>)> = Vec::new();
    for &depth in &cfg.depths {
        labels.push((attention_label(depth), Some(attention_expectation(depth))));
    }
    for depth in MLP_DEPTHS {
        labels.push((mlp_label(depth), Some((2.0, MLP_TOLERANCE))));
    }

    // norms[σ index][seed index][label index]
    let norms = cfg
        .sigma_grid
        .par_iter()
        .map(|&sigma| {
            instances
                .par_iter()
                .map(|inst| -> Result<Vec<f64>> {
                    let x = inst.z.scale(sigma);
                    let mut out = Vec::with_capacity(labels.len());
                    for &depth in &cfg.depths {
                        let theta = &inst.layers[depth - 1].w_v;
                        out.push(fd_norm(d, theta, |w| {
                            attention_stack_loss(inst, &x, depth, w)
                        })?);
                    }
                    for depth in MLP_DEPTHS {
                        let theta = &inst.mlp[depth - 1];
                        out.push(fd_norm(d, theta, |w| mlp_loss(inst, &x, depth, w))?);
                    }
                    Ok(out)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    let mut series = Vec::new();
    for (k, (label, expected)) in labels.iter().enumerate() {
        let mut means = Vec::new();
        for (si, &sigma) in cfg.sigma_grid.iter().enumerate() {
            let values: Vec<f64> = norms[si].iter().map(|cell| cell[k]).collect();
            let (mean, sem) = mean_sem(&values);
            means.push(mean);
            points.push(ScalingPoint {
                block: label.clone(),
                part: "full".into(),
                sigma,
                mean_norm: mean,
                sem,
            });
        }
        series.push(fit_series(
            label.clone(),
            "full".into(),
            &cfg.sigma_grid,
            &means,
            *expected,
        ));
    }

    let result = ScalingResult {
        kind: Command::Depth.name(),
        variant: cfg.variant.label(),
        dims: cfg.dims,
        sigma_grid: cfg.sigma_grid.clone(),
        seeds: cfg.seeds.clone(),
        series,
        flagged_seeds: Vec::new(),
        attempts: vec![1; cfg.seeds.len()],
    };
    ctx.ensure_dir()?;
    write_csv(&ctx.path("depth.csv"), &points)?;
    write_json(&ctx.path("depth.json"), &result)?;
    if ctx.svg {
        render_series(
            &ctx.path("depth.svg"),
            "Last-layer curvature vs embedding scale",
            &points,
            &result.series,
        )?;
    }
    Ok((result, points))
}
