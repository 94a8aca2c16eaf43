use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Parser, Subcommand};

use attn_hessian::experiments::depth::run_depth;
use attn_hessian::experiments::histogram::run_histogram;
use attn_hessian::experiments::scaling::{run_scaling, ScalingResult};
use attn_hessian::experiments::spectrum::run_spectrum;
use attn_hessian::experiments::verify::run_verify;
use attn_hessian::experiments::{Command, ExperimentConfig, RunContext};

/// Exact Hessians of single-layer self-attention: oracle checks and
/// scaling experiments.
#[derive(Parser, Debug)]
#[command(name = "attn-hessian", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,

    /// JSON configuration; keys must be fields of the experiment config and
    /// missing keys take the subcommand's defaults.
    #[arg(long, global = true, value_name = "PATH")]
    config: Option<PathBuf>,

    /// Output directory (overrides `output_path` in the config).
    #[arg(long, global = true, value_name = "DIR")]
    out: Option<PathBuf>,

    /// Added to every seed before seeding the generator.
    #[arg(long, global = true, default_value_t = 0, allow_hyphen_values = true)]
    seed_offset: i64,

    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    threads: Option<usize>,

    /// Also write SVG charts.
    #[arg(long, global = true)]
    svg: bool,
}

#[derive(Subcommand, Debug, Clone, Copy)]
enum Cmd {
    /// Compare every analytic block with the finite-difference oracle.
    Verify,
    /// Log-log slopes of block norms against the embedding scale.
    Scaling,
    /// Eigenvalues of the query-key decomposition.
    Spectrum,
    /// Entry-magnitude histograms of the query and value blocks.
    Histogram,
    /// Curvature growth with the number of stacked layers.
    Depth,
}

impl Cmd {
    fn command(self) -> Command {
        match self {
            Cmd::Verify => Command::Verify,
            Cmd::Scaling => Command::Scaling,
            Cmd::Spectrum => Command::Spectrum,
            Cmd::Histogram => Command::Histogram,
            Cmd::Depth => Command::Depth,
        }
    }
}

fn report_fits(result: &ScalingResult) -> bool {
    let mut ok = true;
    for s in &result.series {
        let slope = s.slope.map_or("-".to_string(), |b| format!("{b:.3}"));
        let expect = match (s.expected_slope, s.tolerance) {
            (Some(e), Some(t)) => format!("expected {e} ± {t}"),
            _ => String::new(),
        };
        let mark = match s.within_tolerance {
            Some(true) => "ok",
            Some(false) => {
                ok = false;
                "OUT OF RANGE"
            }
            None => "",
        };
        println!(
            "{:<14} {:<10} slope {slope:>8} {expect} {mark}",
            s.block, s.part
        );
    }
    if !result.flagged_seeds.is_empty() {
        println!(
            "saturated seeds kept after redraws: {:?}",
            result.flagged_seeds
        );
    }
    ok
}

fn run(cli: &Cli) -> Result<bool> {
    let command = cli.command.command();
    let cfg = match &cli.config {
        Some(path) => ExperimentConfig::load_for(path, command)
            .with_context(|| format!("loading {}", path.display()))?,
        None => ExperimentConfig::default_for(command),
    };
    let out = cli
        .out
        .clone()
        .or_else(|| cfg.output_path.clone())
        .unwrap_or_else(|| PathBuf::from("results").join(command.name()));
    let ctx = RunContext {
        out_dir: out,
        seed_offset: cli.seed_offset,
        svg: cli.svg,
    };

    let passed = match cli.command {
        Cmd::Verify => {
            let (summary, records) = run_verify(&cfg, &ctx)?;
            for r in records.iter().filter(|r| !r.passed) {
                println!(
                    "FAIL seed {} σ {} {} {}: max-abs {:.3e}",
                    r.seed, r.sigma, r.check, r.block, r.max_abs_error
                );
            }
            println!(
                "{} checks, {} failures; worst max-abs {:.3e}, worst rel-Frobenius {:.3e}",
                summary.checks,
                summary.failures,
                summary.worst_max_abs_error,
                summary.worst_rel_frobenius_error
            );
            summary.passed
        }
        Cmd::Scaling => report_fits(&run_scaling(&cfg, &ctx)?.0),
        Cmd::Depth => report_fits(&run_depth(&cfg, &ctx)?.0),
        Cmd::Spectrum => {
            let (summary, _) = run_spectrum(&cfg, &ctx)?;
            for c in &summary.checks {
                println!(
                    "seed {} σ {}: pairing {:.2e}, multiplicity spread {:.2e}, rank(T_outer) {} ≤ {}",
                    c.seed, c.sigma, c.pairing_residual, c.multiplicity_spread, c.t_outer_rank, c.rank_bound
                );
            }
            summary.passed
        }
        Cmd::Histogram => {
            let summary = run_histogram(&cfg, &ctx)?;
            for s in &summary.stats {
                println!(
                    "{:<28} {:<8} median |H| {:.3e} ({} nonzero, {} zero)",
                    s.variant, s.block, s.median_abs, s.nonzero, s.zeros
                );
            }
            for c in &summary.checks {
                println!(
                    "{} {}: {}",
                    if c.passed { "ok" } else { "FAIL" },
                    c.name,
                    c.detail
                );
            }
            summary.passed
        }
    };
    println!("results written to {}", ctx.out_dir.display());
    Ok(passed)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(n) = cli.threads {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
        {
            eprintln!("error: cannot configure {n} threads: {e}");
            return ExitCode::from(2);
        }
    }
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(2)
        }
    }
}
