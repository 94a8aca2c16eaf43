//! Growth of block Frobenius norms with the embedding scale `σ`.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::hessian::{HessianContext, Part};
use crate::model::{Activation, ParamId, ParamKind};

use super::config::{Command, Dims, ExperimentConfig};
use super::output::{
    block_name, log_log_slope, mean_sem, upper_pairs, write_csv, write_json, RunContext,
};
use super::sampling::sample_unsaturated;
use super::svg::{line_chart, Axes, Series};

/// One CSV row: mean norm over seeds at one `σ`.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ScalingPoint {
    pub block: String,
    pub part: String,
    pub sigma: f64,
    pub mean_norm: f64,
    pub sem: f64,
}

/// Fitted log-log slope of one series.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SeriesFit {
    pub block: String,
    pub part: String,
    /// `None` when the series contains zeros (e.g. an exactly vanishing block).
    pub slope: Option<f64>,
    pub slope_stderr: Option<f64>,
    pub expected_slope: Option<f64>,
    pub tolerance: Option<f64>,
    pub within_tolerance: Option<bool>,
}

#[derive(Clone, Debug, Serialize)]
pub struct ScalingResult {
    pub kind: &'static str,
    pub variant: String,
    pub dims: Dims,
    pub sigma_grid: Vec<f64>,
    pub seeds: Vec<u64>,
    pub series: Vec<SeriesFit>,
    /// Seeds whose instance stayed saturated after every redraw.
    pub flagged_seeds: Vec<u64>,
    /// Total draws used per seed, in seed order.
    pub attempts: Vec<usize>,
}

impl ScalingResult {
    pub fn series(&self, block: &str, part: &str) -> Option<&SeriesFit> {
        self.series
            .iter()
            .find(|s| s.block == block && s.part == part)
    }

    pub fn slope(&self, block: &str, part: &str) -> Option<f64> {
        self.series(block, part).and_then(|s| s.slope)
    }
}

/// Slopes the theory predicts for the current variant, with tolerances.
fn expectation(
    cfg: &ExperimentConfig,
    row: ParamId,
    col: ParamId,
    part: Part,
) -> Option<(f64, f64)> {
    if row != col || cfg.dims.heads != 1 {
        return None;
    }
    match (cfg.variant.activation, row.kind, part) {
        (Activation::Softmax, ParamKind::Value, Part::Outer) => Some((2.0, 0.5)),
        (Activation::Softmax, ParamKind::Query | ParamKind::QueryKey, Part::Outer) => {
            Some((6.0, 0.5))
        }
        (Activation::Softmax, ParamKind::Query | ParamKind::QueryKey, Part::Functional) => {
            Some((5.0, 0.5))
        }
        (Activation::Identity, _, Part::Outer) => Some((6.0, 0.5)),
        _ => None,
    }
}

pub(crate) fn fit_series(
    block: String,
    part: String,
    sigmas: &[f64],
    means: &[f64],
    expected: Option<(f64, f64)>,
) -> SeriesFit {
    let fit = log_log_slope(sigmas, means);
    let within = match (fit, expected) {
        (Some((b, _)), Some((e, tol))) => Some((b - e).abs() <= tol),
        _ => None,
    };
    SeriesFit {
        block,
        part,
        slope: fit.map(|f| f.0),
        slope_stderr: fit.map(|f| f.1),
        expected_slope: expected.map(|e| e.0),
        tolerance: expected.map(|e| e.1),
        within_tolerance: within,
    }
}

pub(crate) fn render_series(
    path: &std::path::Path,
    title: &str,
    points: &[ScalingPoint],
    fits: &[SeriesFit],
) -> Result<()> {
    let series: Vec<Series> = fits
        .iter()
        .filter(|f| f.slope.is_some())
        .map(|f| Series {
            name: format!(
                "{} {} (slope {:.2})",
                f.block,
                f.part,
                f.slope.unwrap_or(f64::NAN)
            ),
            points: points
                .iter()
                .filter(|p| p.block == f.block && p.part == f.part)
                .map(|p| (p.sigma, p.mean_norm))
                .collect(),
        })
        .collect();
    line_chart(
        path,
        title,
        "sigma",
        "mean Frobenius norm",
        &series,
        Axes {
            log_x: true,
            log_y: true,
        },
    )
}

/// Frobenius norms of every upper-triangular block and part, for every
/// `(σ, seed)` cell; writes `scaling.csv` and `scaling.json`.
pub fn run_scaling(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<(ScalingResult, Vec<ScalingPoint>)> {
    cfg.validate()?;
    let draws = cfg
        .seeds
        .par_iter()
        .map(|&seed| sample_unsaturated(cfg, seed, ctx.seed_offset))
        .collect::<Result<Vec<_>>>()?;
    let params = draws[0].instance.spec.param_ids();
    let pairs = upper_pairs(&params);
    let keys: Vec<(ParamId, ParamId, Part)> = pairs
        .iter()
        .flat_map(|&(a, b)| Part::ALL.into_iter().map(move |p| (a, b, p)))
        .collect();

    // norms[σ index][seed index][key index]
    let norms = cfg
        .sigma_grid
        .par_iter()
        .map(|&sigma| {
            draws
                .par_iter()
                .map(|draw| {
                    let seq = draw.instance.sequence(sigma)?;
                    let hctx =
                        HessianContext::with_cap(&draw.instance.spec, &seq, cfg.element_cap)?;
                    let grid = hctx.grid(&params)?;
                    keys.iter()
                        .map(|&(a, b, p)| Ok(grid.block(a, b, p)?.m.frobenius_norm()))
                        .collect::<Result<Vec<f64>>>()
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<Vec<_>>>()?;

    let mut points = Vec::new();
    let mut series = Vec::new();
    for (k, &(a, b, part)) in keys.iter().enumerate() {
        let mut means = Vec::with_capacity(cfg.sigma_grid.len());
        for (si, &sigma) in cfg.sigma_grid.iter().enumerate() {
            let values: Vec<f64> = norms[si].iter().map(|cell| cell[k]).collect();
            let (mean, sem) = mean_sem(&values);
            means.push(mean);
            points.push(ScalingPoint {
                block: block_name(a, b),
                part: part.name().into(),
                sigma,
                mean_norm: mean,
                sem,
            });
        }
        series.push(fit_series(
            block_name(a, b),
            part.name().into(),
            &cfg.sigma_grid,
            &means,
            expectation(cfg, a, b, part),
        ));
    }

    let result = ScalingResult {
        kind: Command::Scaling.name(),
        variant: cfg.variant.label(),
        dims: cfg.dims,
        sigma_grid: cfg.sigma_grid.clone(),
        seeds: cfg.seeds.clone(),
        series,
        flagged_seeds: cfg
            .seeds
            .iter()
            .zip(&draws)
            .filter(|(_, d)| d.saturated)
            .map(|(&s, _)| s)
            .collect(),
        attempts: draws.iter().map(|d| d.attempts).collect(),
    };
    ctx.ensure_dir()?;
    write_csv(&ctx.path("scaling.csv"), &points)?;
    write_json(&ctx.path("scaling.json"), &result)?;
    if ctx.svg {
        render_series(
            &ctx.path("scaling.svg"),
            "Block norm vs embedding scale",
            &points,
            &result.series,
        )?;
    }
    Ok((result, points))
}
