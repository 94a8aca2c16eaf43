//! Analytic blocks against the finite-difference oracle.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::Result;
use crate::hessian::{linear_blocks, single_matrix_block, HessianContext, Part};
use crate::model::{Activation, AttentionSpec, ParamId, ParamKind, Sequence};
use crate::oracle::{compare, fd_hessian_capped, OracleReport, DEFAULT_PARAM_CAP};
use crate::tensor::Mat;

use super::config::{Command, Dims, ExperimentConfig};
use super::output::{block_name, upper_pairs, write_csv, write_json, RunContext};
use super::sampling::{rng_for, Instance};

/// Max-abs tolerance for every oracle comparison.
pub const VERIFY_TOL: f64 = 1e-5;

#[derive(Clone, Debug, Serialize)]
pub struct VerifyRecord {
    pub seed: u64,
    pub sigma: f64,
    pub check: String,
    pub block: String,
    pub max_abs_error: f64,
    pub rel_frobenius_error: f64,
    pub worst_row: usize,
    pub worst_col: usize,
    pub analytic_norm: f64,
    pub oracle_norm: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct VerifySummary {
    pub kind: &'static str,
    pub variant: String,
    pub dims: Dims,
    pub tolerance: f64,
    pub checks: usize,
    pub failures: usize,
    pub passed: bool,
    pub worst_max_abs_error: f64,
    pub worst_rel_frobenius_error: f64,
}

fn record(
    seed: u64,
    sigma: f64,
    check: &str,
    block: String,
    rep: &OracleReport,
    passed: bool,
) -> VerifyRecord {
    VerifyRecord {
        seed,
        sigma,
        check: check.into(),
        block,
        max_abs_error: rep.max_abs_error,
        rel_frobenius_error: rep.rel_frobenius_error,
        worst_row: rep.worst_index.0,
        worst_col: rep.worst_index.1,
        analytic_norm: rep.analytic_norm,
        oracle_norm: rep.oracle_norm,
        passed,
    }
}

/// An exact-zero claim, reported in the same record format.
fn zero_record(seed: u64, sigma: f64, check: &str, block: String, m: &Mat) -> Result<VerifyRecord> {
    let rep = compare(m, &Mat::zeros(m.rows(), m.cols()))?;
    let passed = m.is_zero();
    Ok(record(seed, sigma, check, block, &rep, passed))
}

/// Submatrix of a matrix laid out over `params` for the pair `(a, b)`.
pub fn oracle_block(
    full: &Mat,
    spec: &AttentionSpec,
    params: &[ParamId],
    a: ParamId,
    b: ParamId,
) -> Result<Mat> {
    let offset = |id: ParamId| -> Result<usize> {
        let mut off = 0;
        for &p in params {
            if p == id {
                return Ok(off);
            }
            off += spec.param_len(p)?;
        }
        Err(crate::Error::UnknownParam(id.to_string()))
    };
    Ok(full.submatrix(
        offset(a)?,
        offset(b)?,
        spec.param_len(a)?,
        spec.param_len(b)?,
    ))
}

/// All checks for one instance.
pub fn verify_instance(
    spec: &AttentionSpec,
    seq: &Sequence,
    seed: u64,
    sigma: f64,
    cap: usize,
) -> Result<Vec<VerifyRecord>> {
    let params = spec.param_ids();
    let ctx = HessianContext::with_cap(spec, seq, cap)?;
    let grid = ctx.grid(&params)?;
    let fd = fd_hessian_capped(spec, seq, &params, DEFAULT_PARAM_CAP)?;
    let mut out = Vec::new();

    for (a, b) in upper_pairs(&params) {
        let analytic = grid.block(a, b, Part::Full)?.m;
        let rep = compare(&analytic, &oracle_block(&fd, spec, &params, a, b)?)?;
        out.push(record(
            seed,
            sigma,
            "full_block",
            block_name(a, b),
            &rep,
            rep.passes(VERIFY_TOL),
        ));
    }

    for h in 0..spec.num_heads() {
        let v = ParamId::new(h, ParamKind::Value);
        let f = grid.block(v, v, Part::Functional)?.m;
        out.push(zero_record(
            seed,
            sigma,
            "value_functional_zero",
            block_name(v, v),
            &f,
        )?);
        let outer = grid.block(v, v, Part::Outer)?.m;
        let rep = compare(&outer, &oracle_block(&fd, spec, &params, v, v)?)?;
        out.push(record(
            seed,
            sigma,
            "value_outer_vs_oracle",
            block_name(v, v),
            &rep,
            rep.passes(VERIFY_TOL),
        ));
    }

    if spec.num_heads() > 1 {
        for (a, b) in upper_pairs(&params)
            .into_iter()
            .filter(|(a, b)| a.head != b.head)
        {
            let f = grid.block(a, b, Part::Functional)?.m;
            out.push(zero_record(
                seed,
                sigma,
                "inter_head_functional_zero",
                block_name(a, b),
                &f,
            )?);
        }
    }

    if spec.activation() == Activation::Identity {
        for &p in &params {
            let f = grid.block(p, p, Part::Functional)?.m;
            out.push(zero_record(
                seed,
                sigma,
                "linear_functional_diagonal_zero",
                block_name(p, p),
                &f,
            )?);
            let outer = grid.block(p, p, Part::Outer)?.m;
            let rep = compare(&outer, &oracle_block(&fd, spec, &params, p, p)?)?;
            out.push(record(
                seed,
                sigma,
                "linear_diagonal_outer_vs_oracle",
                block_name(p, p),
                &rep,
                rep.passes(VERIFY_TOL),
            ));
        }
        if spec.is_classical() && spec.num_heads() == 1 {
            let closed = linear_blocks(spec, seq)?;
            for (a, b) in upper_pairs(&params) {
                let m = closed.block(a, b, Part::Full)?.m;
                let rep = compare(&m, &oracle_block(&fd, spec, &params, a, b)?)?;
                out.push(record(
                    seed,
                    sigma,
                    "linear_closed_form",
                    block_name(a, b),
                    &rep,
                    rep.passes(VERIFY_TOL),
                ));
            }
        }
    }

    if !spec.is_classical() && spec.activation() == Activation::Softmax && spec.num_heads() == 1 {
        let m = single_matrix_block(spec, seq)?.m;
        let rep = compare(
            &m,
            &oracle_block(&fd, spec, &params, ParamId::QK, ParamId::QK)?,
        )?;
        out.push(record(
            seed,
            sigma,
            "single_matrix_block",
            block_name(ParamId::QK, ParamId::QK),
            &rep,
            rep.passes(VERIFY_TOL),
        ));
    }
    Ok(out)
}

/// Run every check for every `(σ, seed)` cell and write `verify.csv` and
/// `verify.json`.
pub fn run_verify(
    cfg: &ExperimentConfig,
    ctx: &RunContext,
) -> Result<(VerifySummary, Vec<VerifyRecord>)> {
    cfg.validate()?;
    let cells: Vec<(f64, u64)> = cfg
        .sigma_grid
        .iter()
        .flat_map(|&s| cfg.seeds.iter().map(move |&seed| (s, seed)))
        .collect();
    let records = cells
        .par_iter()
        .map(|&(sigma, seed)| {
            let inst = Instance::sample(&mut rng_for(seed, ctx.seed_offset), cfg)?;
            verify_instance(
                &inst.spec,
                &inst.sequence(sigma)?,
                seed,
                sigma,
                cfg.element_cap,
            )
        })
        .collect::<Result<Vec<_>>>()?
        .into_iter()
        .flatten()
        .collect::<Vec<_>>();

    let failures = records.iter().filter(|r| !r.passed).count();
    let summary = VerifySummary {
        kind: Command::Verify.name(),
        variant: cfg.variant.label(),
        dims: cfg.dims,
        tolerance: VERIFY_TOL,
        checks: records.len(),
        failures,
        passed: failures == 0,
        worst_max_abs_error: records.iter().map(|r| r.max_abs_error).fold(0.0, f64::max),
        worst_rel_frobenius_error: records
            .iter()
            .map(|r| r.rel_frobenius_error)
            .fold(0.0, f64::max),
    };
    ctx.ensure_dir()?;
    write_csv(&ctx.path("verify.csv"), &records)?;
    write_json(&ctx.path("verify.json"), &summary)?;
    Ok((summary, records))
}
