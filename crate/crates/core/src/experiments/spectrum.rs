//! Eigenvalues of the query-key decomposition and of the full Hessian.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::hessian::{assemble, t_decompose};
use crate::tensor::{numerical_rank, symmetric_eigenvalues, Mat};

use super::config::{Command, Dims, ExperimentConfig};
use super::output::{write_csv, write_json, RunContext};
use super::sampling::{rng_for, Instance};
use super::svg::{line_chart, Axes, Series};

/// Singular values below this fraction of the largest count as zero.
pub const RANK_TOL: f64 = 1e-8;

/// Allowed `|λ_i + λ_{n−1−i}|` for the block-hollow part.
pub const PAIRING_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumRow {
    pub seed: u64,
    pub sigma: f64,
    pub matrix: String,
    pub index: usize,
    pub eigenvalue: f64,
    pub pairing_residual: f64,
    pub numerical_rank: usize,
    /// Only for `t_outer`.
    pub rank_bound: Option<usize>,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct SpectrumCheck {
    pub seed: u64,
    pub sigma: f64,
    pub pairing_residual: f64,
    /// Largest spread inside consecutive groups of `d_k` sorted eigenvalues.
    pub multiplicity_spread: f64,
    pub t_outer_rank: usize,
    pub rank_bound: usize,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumSummary {
    pub kind: &'static str,
    pub variant: String,
    pub dims: Dims,
    pub pairing_tolerance: f64,
    pub rank_tolerance: f64,
    pub checks: Vec<SpectrumCheck>,
    pub passed: bool,
}

/// `max_i |λ_i + λ_{n−1−i}|` over ascending eigenvalues.
pub fn pairing_residual(sorted: &[f64]) -> f64 {
    let n = sorted.len();
    (0..n)
        .map(|i| (sorted[i] + sorted[n - 1 - i]).abs())
        .fold(0.0, f64::max)
}

/// Largest `max − min` within consecutive groups of `size` sorted values.
pub fn multiplicity_spread(sorted: &[f64], size: usize) -> f64 {
    sorted
        .chunks(size)
        .map(|c| c.last().unwrap() - c.first().unwrap())
        .fold(0.0, f64::max)
}

/// Rank bound on the outer part: `2 d_k d_v − d_k²` if `d_k < d_v`, else `d_v²`.
pub fn rank_bound(d_v: usize, d_k: usize) -> usize {
    if d_k < d_v {
        2 * d_k * d_v - d_k * d_k
    } else {
        d_v * d_v
    }
}

pub fn run_spectrum(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<(SpectrumSummary, Vec<SpectrumRow>)> {
    cfg.validate()?;
    let (d, k) = (cfg.dims.d_v, cfg.dims.d_k);
    let bound = rank_bound(d, k);
    let cells: Vec<(f64, u64)> = cfg
        .sigma_grid
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let results = cells
        .par_iter()
        .map(
            |&(sigma, seed)| -> Result<(Vec<SpectrumRow>, SpectrumCheck)> {
                let inst = Instance::sample(&mut rng_for(seed, ctx.seed_offset), cfg)?;
                let seq = inst.sequence(sigma)?;
                let dec = t_decompose(&inst.spec, &seq)?;
                let full = assemble(&inst.spec, &seq)?.full();
                let mut rows = Vec::new();
                let mut push =
                    |name: &str, m: &Mat, rb: Option<usize>| -> (Vec<f64>, f64, usize) {
                        let ev = symmetric_eigenvalues(m);
                        let residual = pairing_residual(&ev);
                        let rank = numerical_rank(m, RANK_TOL);
                        rows.extend(ev.iter().enumerate().map(|(index, &eigenvalue)| {
                            SpectrumRow {
                                seed,
                                sigma,
                                matrix: name.into(),
                                index,
                                eigenvalue,
                                pairing_residual: residual,
                                numerical_rank: rank,
                                rank_bound: rb,
                            }
                        }));
                        (ev, residual, rank)
                    };
                let (ev_f, residual, _) = push("t_functional", &dec.t_functional, None);
                let (_, _, rank) = push("t_outer", &dec.t_outer, Some(bound));
                push("full", &full, None);
                let spread = multiplicity_spread(&ev_f, k);
                let check = SpectrumCheck {
                    seed,
                    sigma,
                    pairing_residual: residual,
                    multiplicity_spread: spread,
                    t_outer_rank: rank,
                    rank_bound: bound,
                    passed: residual <= PAIRING_TOL && spread <= PAIRING_TOL && rank <= bound,
                };
                Ok((rows, check))
            },
        )
        .collect::<Result<Vec<_>>>()?;

    let mut rows = Vec::new();
    let mut checks = Vec::new();
    for (r, c) in results {
        rows.extend(r);
        checks.push(c);
    }
    let summary = SpectrumSummary {
        kind: Command::Spectrum.name(),
        variant: cfg.variant.label(),
        dims: cfg.dims,
        pairing_tolerance: PAIRING_TOL,
        rank_tolerance: RANK_TOL,
        passed: checks.iter().all(|c| c.passed),
        checks,
    };
    ctx.ensure_dir()?;
    write_csv(&ctx.path("spectrum.csv"), &rows)?;
    write_json(&ctx.path("spectrum.json"), &summary)?;
    if ctx.svg {
        let first = cfg.seeds[0];
        let series: Vec<Series> = ["t_functional", "t_outer", "full"]
            .iter()
            .map(|&m| Series {
                name: m.into(),
                points: rows
                    .iter()
                    .filter(|r| r.seed == first && r.sigma == cfg.sigma_grid[0] && r.matrix == m)
                    .map(|r| (r.index as f64, r.eigenvalue))
                    .collect(),
            })
            .collect();
        line_chart(
            &ctx.path("spectrum.svg"),
            "Sorted eigenvalues",
            "index",
            "eigenvalue",
            &series,
            Axes::default(),
        )?;
    }
    Ok((summary, rows))
}
