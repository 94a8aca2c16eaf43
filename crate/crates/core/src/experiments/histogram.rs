//! Distribution of entry magnitudes in the query and value diagonal blocks,
//! for softmax and identity attention side by side.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::hessian::{HessianContext, Part};
use crate::model::{Activation, ParamId};

use super::config::{Command, Dims, ExperimentConfig, Parameterization};
use super::output::{block_name, median, write_csv, write_json, RunContext};
use super::sampling::sample_unsaturated;
use super::svg::{line_chart, Axes, Series};

/// Logarithmically spaced bins per histogram.
pub const BINS: usize = 64;

/// In the identity variant, medians of the two blocks must agree within
/// this factor.
pub const LINEAR_MEDIAN_FACTOR: f64 = 10.0;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramBin {
    pub block: String,
    pub bin: usize,
    pub lower: f64,
    pub upper: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct BlockStats {
    pub variant: String,
    pub block: String,
    /// Median over the nonzero magnitudes.
    pub median_abs: f64,
    pub nonzero: usize,
    pub zeros: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistogramCheck {
    pub name: String,
    pub detail: String,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct HistogramSummary {
    pub kind: &'static str,
    pub dims: Dims,
    pub sigma: f64,
    pub seeds: Vec<u64>,
    pub stats: Vec<BlockStats>,
    pub checks: Vec<HistogramCheck>,
    pub passed: bool,
}

/// Log-spaced histogram of positive values; zeros are not binned. A
/// degenerate range collapses to one bin, and an all-zero block becomes the
/// single bin `[0, 0]` counting its zeros.
pub fn log_histogram(block: &str, values: &[f64], bins: usize) -> Vec<HistogramBin> {
    let pos: Vec<f64> = values
        .iter()
        .copied()
        .filter(|v| *v > 0.0 && v.is_finite())
        .collect();
    if pos.is_empty() {
        if values.is_empty() {
            return Vec::new();
        }
        return vec![HistogramBin {
            block: block.into(),
            bin: 0,
            lower: 0.0,
            upper: 0.0,
            count: values.len(),
        }];
    }
    let lo = pos.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = pos.iter().copied().fold(0.0, f64::max);
    if lo == hi {
        return vec![HistogramBin {
            block: block.into(),
            bin: 0,
            lower: lo,
            upper: hi,
            count: pos.len(),
        }];
    }
    let (a, b) = (lo.ln(), hi.ln());
    let width = (b - a) / bins as f64;
    let mut counts = vec![0usize; bins];
    for v in &pos {
        let i = (((v.ln() - a) / width) as usize).min(bins - 1);
        counts[i] += 1;
    }
    counts
        .into_iter()
        .enumerate()
        .map(|(i, count)| HistogramBin {
            block: block.into(),
            bin: i,
            lower: (a + width * i as f64).exp(),
            upper: if i + 1 == bins {
                hi
            } else {
                (a + width * (i + 1) as f64).exp()
            },
            count,
        })
        .collect()
}

/// Pooled `|H_ij|` of the query (or `W_QK`) and value diagonal blocks over
/// every seed, at the first `σ` of the grid.
pub fn pooled_magnitudes(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<Vec<(ParamId, Vec<f64>)>> {
    let query = match cfg.variant.parameterization {
        Parameterization::Classical => ParamId::Q,
        Parameterization::Single => ParamId::QK,
    };
    let sigma = cfg.sigma_grid[0];
    let per_seed = cfg
        .seeds
        .par_iter()
        .map(|&seed| -> Result<Vec<Vec<f64>>> {
            let draw = sample_unsaturated(cfg, seed, ctx.seed_offset)?;
            let seq = draw.instance.sequence(sigma)?;
            let hctx = HessianContext::with_cap(&draw.instance.spec, &seq, cfg.element_cap)?;
            [query, ParamId::V]
                .iter()
                .map(|&p| {
                    Ok(hctx
                        .block(p, p, Part::Full)?
                        .m
                        .as_slice()
                        .iter()
                        .map(|v| v.abs())
                        .collect())
                })
                .collect()
        })
        .collect::<Result<Vec<_>>>()?;
    Ok([query, ParamId::V]
        .iter()
        .enumerate()
        .map(|(i, &p)| {
            (
                p,
                per_seed.iter().flat_map(|s| s[i].iter().copied()).collect(),
            )
        })
        .collect())
}

fn activation_name(a: Activation) -> &'static str {
    match a {
        Activation::Softmax => "softmax",
        Activation::Identity => "identity",
    }
}

/// Runs the configured dims and parameterization with both activations;
/// writes `histogram_<activation>.csv`, `histogram_summary.csv` and
/// `histogram.json`.
pub fn run_histogram(cfg: &ExperimentConfig, ctx: &RunContext) -> Result<HistogramSummary> {
    cfg.validate()?;
    ctx.ensure_dir()?;
    let mut stats = Vec::new();
    let mut checks = Vec::new();
    for activation in [Activation::Softmax, Activation::Identity] {
        let mut run = cfg.clone();
        run.variant.activation = activation;
        let pooled = pooled_magnitudes(&run, ctx)?;
        let name = activation_name(activation);
        let mut bins = Vec::new();
        let mut medians = Vec::new();
        for (p, values) in &pooled {
            let block = block_name(*p, *p);
            bins.extend(log_histogram(&block, values, BINS));
            let nonzero: Vec<f64> = values.iter().copied().filter(|v| *v > 0.0).collect();
            let med = median(&nonzero).unwrap_or(0.0);
            medians.push(med);
            stats.push(BlockStats {
                variant: run.variant.label(),
                block,
                median_abs: med,
                nonzero: nonzero.len(),
                zeros: values.len() - nonzero.len(),
            });
        }
        write_csv(&ctx.path(&format!("histogram_{name}.csv")), &bins)?;
        let (q, v) = (medians[0], medians[1]);
        checks.push(match activation {
            Activation::Softmax => HistogramCheck {
                name: "softmax_query_median_below_value".into(),
                detail: format!("median |query| = {q:.3e}, median |value| = {v:.3e}"),
                passed: q < v,
            },
            Activation::Identity => {
                let ratio = if q > 0.0 && v > 0.0 {
                    (q / v).max(v / q)
                } else {
                    f64::INFINITY
                };
                HistogramCheck {
                    name: "identity_medians_comparable".into(),
                    detail: format!("median ratio = {ratio:.3}"),
                    passed: ratio <= LINEAR_MEDIAN_FACTOR,
                }
            }
        });
        if ctx.svg {
            let series: Vec<Series> = pooled
                .iter()
                .map(|(p, _)| {
                    let block = block_name(*p, *p);
                    Series {
                        points: bins
                            .iter()
                            .filter(|b| b.block == block)
                            .map(|b| ((b.lower * b.upper).sqrt(), b.count as f64))
                            .collect(),
                        name: block,
                    }
                })
                .collect();
            let axes = Axes {
                log_x: true,
                log_y: false,
            };
            line_chart(
                &ctx.path(&format!("histogram_{name}.svg")),
                &format!("Entry magnitudes ({name})"),
                "|H_ij|",
                "count",
                &series,
                axes,
            )?;
        }
    }
    write_csv(&ctx.path("histogram_summary.csv"), &stats)?;
    let summary = HistogramSummary {
        kind: Command::Histogram.name(),
        dims: cfg.dims,
        sigma: cfg.sigma_grid[0],
        seeds: cfg.seeds.clone(),
        stats,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    write_json(&ctx.path("histogram.json"), &summary)?;
    Ok(summary)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bins_cover_every_positive_value() {
        let v = [0.0, 1e-6, 1e-3, 2e-3, 1.0, 1.0];
        let h = log_histogram("x", &v, 8);
        assert_eq!(h.len(), 8);
        assert_eq!(h.iter().map(|b| b.count).sum::<usize>(), 5);
        assert_eq!(h[7].count, 2);
        assert!((h[0].lower - 1e-6).abs() < 1e-18);
    }

    #[test]
    fn degenerate_range_is_one_bin() {
        let h = log_histogram("x", &[2.0, 2.0, 0.0], 64);
        assert_eq!(h.len(), 1);
        assert_eq!(h[0].count, 2);
        let zeros = log_histogram("x", &[0.0, 0.0, 0.0], 64);
        assert_eq!((zeros.len(), zeros[0].count, zeros[0].upper), (1, 3, 0.0));
        assert!(log_histogram("x", &[], 64).is_empty());
    }

    #[test]
    fn zero_weights_give_a_single_zero_bin_for_the_query_block() {
        use crate::experiments::sampling::{rng_for, Instance};
        use crate::tensor::Mat;
        let cfg = ExperimentConfig::default_for(Command::Verify);
        let inst = Instance::sample(&mut rng_for(0, 0), &cfg).unwrap();
        let spec = inst
            .spec
            .with_param(ParamId::Q, Mat::zeros(4, 2))
            .unwrap()
            .with_param(ParamId::K, Mat::zeros(4, 2))
            .unwrap();
        let seq = inst.sequence(0.3).unwrap();
        let q = HessianContext::new(&spec, &seq)
            .unwrap()
            .block(ParamId::Q, ParamId::Q, Part::Full)
            .unwrap()
            .m;
        let values: Vec<f64> = q.as_slice().iter().map(|v| v.abs()).collect();
        let bins = log_histogram("Q:Q", &values, BINS);
        assert_eq!(bins.len(), 1);
        assert_eq!(bins[0].count, 64);
        assert_eq!(
            median(
                &values
                    .iter()
                    .copied()
                    .filter(|v| *v > 0.0)
                    .collect::<Vec<_>>()
            ),
            None
        );
    }
}
