//! Acceptance criteria, one PASS/FAIL line each. Exits non-zero if any fails.

use std::process::ExitCode;
use std::time::Instant;

use attn_hessian::experiments::depth::{attention_label, mlp_label, run_depth};
use attn_hessian::experiments::histogram::run_histogram;
use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::scaling::{run_scaling, ScalingResult};
use attn_hessian::experiments::spectrum::{multiplicity_spread, pairing_residual, rank_bound};
use attn_hessian::experiments::verify::oracle_block;
use attn_hessian::experiments::{Command, ExperimentConfig, Parameterization, RunContext};
use attn_hessian::hessian::{
    assemble, freeze, linear_blocks, single_matrix_block, t_decompose, temperature_prefactors, Part,
};
use attn_hessian::model::{forward, Activation, ParamId};
use attn_hessian::moments::{moments_for, z1_via_moments, z2_via_moments, z_direct};
use attn_hessian::oracle::{compare, fd_hessian};
use attn_hessian::tensor::{numerical_rank, symmetric_eigenvalues, DEFAULT_ELEMENT_CAP};
use attn_hessian::{Mat, Result};

type Criterion = (&'static str, fn() -> Result<Outcome>);

struct Outcome {
    passed: bool,
    detail: String,
}

fn outcome(passed: bool, detail: String) -> Result<Outcome> {
    Ok(Outcome { passed, detail })
}

fn verify_cfg(edit: impl FnOnce(&mut ExperimentConfig)) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::default_for(Command::Verify);
    edit(&mut cfg);
    cfg
}

fn draw(cfg: &ExperimentConfig, seed: u64) -> Result<Instance> {
    Instance::sample(&mut rng_for(seed, 0), cfg)
}

/// Closed-form Hessian against the oracle on ten softmax instances.
fn oracle_agreement() -> Result<Outcome> {
    let cfg = verify_cfg(|_| {});
    let start = Instant::now();
    let (mut max_abs, mut rel) = (0.0f64, 0.0f64);
    for seed in 0..10 {
        let inst = draw(&cfg, seed)?;
        let seq = inst.sequence(1.0)?;
        let rep = compare(
            &assemble(&inst.spec, &seq)?.full(),
            &fd_hessian(&inst.spec, &seq, &inst.spec.param_ids())?,
        )?;
        max_abs = max_abs.max(rep.max_abs_error);
        rel = rel.max(rep.rel_frobenius_error);
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        max_abs <= 1e-5 && rel <= 1e-7 && secs <= 60.0,
        format!("max-abs {max_abs:.2e} (≤ 1e-5), rel-Frobenius {rel:.2e} (≤ 1e-7), {secs:.2} s (≤ 60 s)"),
    )
}

/// Value-value block: no functional part; the outer part alone is the Hessian.
fn value_block() -> Result<Outcome> {
    let cfg = verify_cfg(|_| {});
    let (mut all_zero, mut err) = (true, 0.0f64);
    for seed in 0..10 {
        let inst = draw(&cfg, seed)?;
        let seq = inst.sequence(1.0)?;
        let grid = assemble(&inst.spec, &seq)?;
        all_zero &= grid
            .block(ParamId::V, ParamId::V, Part::Functional)?
            .m
            .is_zero();
        let fd = fd_hessian(&inst.spec, &seq, &[ParamId::V])?;
        err = err
            .max(compare(&grid.block(ParamId::V, ParamId::V, Part::Outer)?.m, &fd)?.max_abs_error);
    }
    outcome(
        all_zero && err <= 1e-5,
        format!("functional exactly zero: {all_zero}; |oracle − outer| {err:.2e} (≤ 1e-5)"),
    )
}

/// Derivative and moment forms of Z1 and Z2 agree.
fn moment_duals() -> Result<Outcome> {
    let mut worst = 0.0f64;
    let mut n = 0;
    for seed in 0..10u64 {
        let l = 2 + (seed as usize % 3);
        let d = 1 + (seed as usize / 3 % 3);
        let cfg = verify_cfg(|c| {
            c.dims.seq_len = l;
            c.dims.d_v = d;
            c.dims.d_k = d;
        });
        let inst = draw(&cfg, seed)?;
        let seq = inst.sequence(1.0)?;
        let cache = forward(&inst.spec, &seq)?;
        let m = moments_for(Activation::Softmax, cache.a(), seq.x())?;
        let (z1, z2) = z_direct(Activation::Softmax, cache.a(), seq.x(), DEFAULT_ELEMENT_CAP)?;
        worst = worst.max(compare(&z1_via_moments(seq.x(), &m)?, &z1)?.rel_frobenius_error);
        worst = worst.max(
            compare(&z2_via_moments(seq.x(), &m, DEFAULT_ELEMENT_CAP)?, &z2)?.rel_frobenius_error,
        );
        n += 1;
    }
    outcome(
        worst <= 1e-10,
        format!(
            "{n} instances with L ≤ 4, d ≤ 3: worst rel-Frobenius difference {worst:.2e} (≤ 1e-10)"
        ),
    )
}

/// Identity activation: diagonal functional blocks vanish, and the
/// second-moment closed forms match the oracle.
fn linear_attention() -> Result<Outcome> {
    let cfg = verify_cfg(|c| c.variant.activation = Activation::Identity);
    let (mut zero, mut diag_err, mut closed_err) = (true, 0.0f64, 0.0f64);
    for seed in 0..5 {
        let inst = draw(&cfg, seed)?;
        let seq = inst.sequence(1.0)?;
        let params = inst.spec.param_ids();
        let grid = assemble(&inst.spec, &seq)?;
        let closed = linear_blocks(&inst.spec, &seq)?;
        let fd = fd_hessian(&inst.spec, &seq, &params)?;
        for &a in &params {
            zero &= grid.block(a, a, Part::Functional)?.m.is_zero();
            let outer = grid.block(a, a, Part::Outer)?.m;
            diag_err = diag_err.max(
                compare(&outer, &oracle_block(&fd, &inst.spec, &params, a, a)?)?.max_abs_error,
            );
            for &b in &params {
                let m = closed.block(a, b, Part::Full)?.m;
                closed_err = closed_err.max(
                    compare(&m, &oracle_block(&fd, &inst.spec, &params, a, b)?)?.max_abs_error,
                );
            }
        }
    }
    outcome(
        zero && diag_err <= 1e-5 && closed_err <= 1e-6,
        format!("diagonal functional zero: {zero}; diagonal |oracle − outer| {diag_err:.2e} (≤ 1e-5); closed forms vs oracle {closed_err:.2e} (≤ 1e-6)"),
    )
}

/// Single-matrix `(W_QK, W_QK)` block at L = 3, d = 3.
fn single_matrix() -> Result<Outcome> {
    let cfg = verify_cfg(|c| {
        c.dims.d_v = 3;
        c.variant.parameterization = Parameterization::Single;
    });
    let mut err = 0.0f64;
    for seed in 0..5 {
        let inst = draw(&cfg, seed)?;
        let seq = inst.sequence(1.0)?;
        let block = single_matrix_block(&inst.spec, &seq)?.m;
        err =
            err.max(compare(&block, &fd_hessian(&inst.spec, &seq, &[ParamId::QK])?)?.max_abs_error);
    }
    outcome(
        err <= 1e-5,
        format!("|oracle − closed form| {err:.2e} (≤ 1e-5)"),
    )
}

/// Spectrum of the query-key decomposition: ± pairing with multiplicity
/// d_k, and the rank bound on the outer part.
fn t_spectrum() -> Result<Outcome> {
    let cfg = ExperimentConfig::default_for(Command::Spectrum);
    let (d, k) = (cfg.dims.d_v, cfg.dims.d_k);
    let bound = rank_bound(d, k);
    let (mut pairing, mut spread, mut max_rank) = (0.0f64, 0.0f64, 0usize);
    for seed in 0..10 {
        let inst = draw(&cfg, seed)?;
        let dec = t_decompose(&inst.spec, &inst.sequence(1.0)?)?;
        let ev = symmetric_eigenvalues(&dec.t_functional);
        pairing = pairing.max(pairing_residual(&ev));
        spread = spread.max(multiplicity_spread(&ev, k));
        max_rank = max_rank.max(numerical_rank(&dec.t_outer, 1e-8));
    }
    outcome(
        pairing <= 1e-8 && spread <= 1e-8 && max_rank <= bound,
        format!("pairing {pairing:.2e}, multiplicity-{k} spread {spread:.2e} (≤ 1e-8); max rank {max_rank} ≤ {bound}"),
    )
}

fn slope_line(r: &ScalingResult, block: &str, part: &str) -> (bool, String) {
    match r.series(block, part) {
        Some(s) => (
            s.within_tolerance == Some(true),
            format!(
                "{block} {part} {:.3} ({}±{})",
                s.slope.unwrap_or(f64::NAN),
                s.expected_slope.unwrap_or(f64::NAN),
                s.tolerance.unwrap_or(f64::NAN)
            ),
        ),
        None => (false, format!("{block} {part} missing")),
    }
}

fn slopes(r: &ScalingResult, wanted: &[(&str, &str)]) -> Result<Outcome> {
    let (mut ok, mut parts) = (true, Vec::new());
    for (b, p) in wanted {
        let (pass, text) = slope_line(r, b, p);
        ok &= pass;
        parts.push(text);
    }
    outcome(ok, parts.join("; "))
}

fn single_threaded<T: Send>(f: impl FnOnce() -> Result<T> + Send) -> Result<T> {
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(1)
        .build()
        .map_err(|e| attn_hessian::Error::Config(e.to_string()))?;
    pool.install(f)
}

fn scratch(name: &str) -> RunContext {
    RunContext::new(std::env::temp_dir().join(format!(
        "attn-hessian-acceptance-{}-{name}",
        std::process::id()
    )))
}

/// Block-norm growth with σ over 12 scales and 20 seeds.
fn scaling_slopes() -> Result<Outcome> {
    let cfg = ExperimentConfig::default_for(Command::Scaling);
    let ctx = scratch("scaling");
    let start = Instant::now();
    let (r, _) = single_threaded(|| run_scaling(&cfg, &ctx))?;
    let secs = start.elapsed().as_secs_f64();
    let _ = std::fs::remove_dir_all(&ctx.out_dir);
    let mut o = slopes(
        &r,
        &[("V:V", "outer"), ("Q:Q", "outer"), ("Q:Q", "functional")],
    )?;
    o.passed &= secs <= 600.0;
    o.detail = format!(
        "{} ({} σ × {} seeds, {} flagged; {secs:.1} s on one thread, ≤ 600 s)",
        o.detail,
        cfg.sigma_grid.len(),
        cfg.seeds.len(),
        r.flagged_seeds.len()
    );
    Ok(o)
}

/// Entry-magnitude medians for softmax and identity attention.
fn histogram_medians() -> Result<Outcome> {
    let cfg = ExperimentConfig::default_for(Command::Histogram);
    let ctx = scratch("histogram");
    let s = run_histogram(&cfg, &ctx)?;
    let _ = std::fs::remove_dir_all(&ctx.out_dir);
    let detail = s
        .checks
        .iter()
        .map(|c| c.detail.clone())
        .collect::<Vec<_>>()
        .join("; ");
    outcome(s.passed, detail)
}

/// Two heads: blocks between heads have no functional part and match the oracle.
fn multi_head() -> Result<Outcome> {
    let cfg = verify_cfg(|c| {
        c.dims.heads = 2;
        c.dims.d_v = 3;
    });
    let (mut zero, mut err, mut count) = (true, 0.0f64, 0);
    for seed in 0..3 {
        let inst = draw(&cfg, seed)?;
        let seq = inst.sequence(1.0)?;
        let params = inst.spec.param_ids();
        let grid = assemble(&inst.spec, &seq)?;
        let fd = fd_hessian(&inst.spec, &seq, &params)?;
        for &a in &params {
            for &b in params.iter().filter(|b| b.head != a.head) {
                zero &= grid.block(a, b, Part::Functional)?.m.is_zero();
                let full = grid.block(a, b, Part::Full)?.m;
                err = err.max(
                    compare(&full, &oracle_block(&fd, &inst.spec, &params, a, b)?)?.max_abs_error,
                );
                count += 1;
            }
        }
    }
    outcome(zero && err <= 1e-5, format!("{count} inter-head blocks: functional zero {zero}; |oracle − closed form| {err:.2e} (≤ 1e-5)"))
}

/// Stacked identity attention grows as σ^(2·3^D); a linear network as σ².
fn depth_slopes() -> Result<Outcome> {
    let cfg = ExperimentConfig::default_for(Command::Depth);
    let ctx = scratch("depth");
    let start = Instant::now();
    let (r, _) = run_depth(&cfg, &ctx)?;
    let secs = start.elapsed().as_secs_f64();
    let _ = std::fs::remove_dir_all(&ctx.out_dir);
    let (a1, a2) = (attention_label(1), attention_label(2));
    let (m1, m2, m3) = (mlp_label(1), mlp_label(2), mlp_label(3));
    let mut o = slopes(
        &r,
        &[
            (&a1, "full"),
            (&a2, "full"),
            (&m1, "full"),
            (&m2, "full"),
            (&m3, "full"),
        ],
    )?;
    o.passed &= secs <= 900.0;
    o.detail = format!("{}; {secs:.1} s (≤ 900 s)", o.detail);
    Ok(o)
}

/// `max |m_ij / base_ij − ratio| / ratio` over nonzero base entries; a zero
/// base entry must stay exactly zero.
fn entrywise_ratio_error(m: &Mat, base: &Mat, ratio: f64) -> f64 {
    m.as_slice()
        .iter()
        .zip(base.as_slice())
        .map(|(&v, &b)| match b == 0.0 {
            true if v == 0.0 => 0.0,
            true => f64::INFINITY,
            false => (v / b - ratio).abs() / ratio,
        })
        .fold(0.0, f64::max)
}

/// With Z1, Z2 and the residual frozen, the outer part scales as 1/t² and
/// the functional part as 1/t.
fn temperature() -> Result<Outcome> {
    let cfg = verify_cfg(|_| {});
    let mut worst = 0.0f64;
    for seed in 0..5 {
        let inst = draw(&cfg, seed)?;
        let frozen = freeze(&inst.spec, &inst.sequence(1.0)?)?;
        let (o1, f1) = temperature_prefactors(&frozen, 1.0)?;
        for t in [1.0, 2.0, 10.0] {
            let (o, f) = temperature_prefactors(&frozen, t)?;
            worst = worst.max(entrywise_ratio_error(&o, &o1, 1.0 / (t * t)));
            worst = worst.max(entrywise_ratio_error(&f, &f1, 1.0 / t));
        }
    }
    outcome(
        worst <= 1e-12,
        format!("t ∈ {{1, 2, 10}}: worst entrywise ratio deviation {worst:.2e} (≤ 1e-12)"),
    )
}

fn main() -> ExitCode {
    let criteria: [Criterion; 11] = [
        (
            "closed-form Hessian matches the finite-difference oracle",
            oracle_agreement,
        ),
        ("value-value block has no functional part", value_block),
        ("Z1/Z2 derivative and moment forms agree", moment_duals),
        ("identity-activation closed forms", linear_attention),
        ("single-matrix query-key block", single_matrix),
        ("T-decomposition spectrum and rank bound", t_spectrum),
        ("block-norm scaling slopes in σ", scaling_slopes),
        ("entry-magnitude histogram medians", histogram_medians),
        ("two-head cross blocks", multi_head),
        (
            "depth scaling of stacked attention vs linear network",
            depth_slopes,
        ),
        (
            "temperature scaling of outer and functional parts",
            temperature,
        ),
    ];
    let mut failed = 0;
    for (i, (name, check)) in criteria.iter().enumerate() {
        let (passed, detail) = match check() {
            Ok(o) => (o.passed, o.detail),
            Err(e) => (false, format!("error: {e}")),
        };
        failed += usize::from(!passed);
        println!(
            "[{}] {:>2}. {name}: {detail}",
            if passed { "PASS" } else { "FAIL" },
            i + 1
        );
    }
    println!(
        "{} of {} criteria passed",
        criteria.len() - failed,
        criteria.len()
    );
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
