//! A small `σ` sweep written to a temporary directory, with fitted slopes.

use attn_hessian::experiments::config::log_grid;
use attn_hessian::experiments::scaling::run_scaling;
use attn_hessian::experiments::{Command, ExperimentConfig, RunContext};

fn main() -> attn_hessian::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Scaling);
    cfg.sigma_grid = log_grid(0.05, 0.5, 6);
    cfg.seeds = (0..5).collect();
    let ctx = RunContext::new(std::env::temp_dir().join("attn-hessian-scaling-example"));
    let (result, _) = run_scaling(&cfg, &ctx)?;
    for s in result.series.iter().filter(|s| s.expected_slope.is_some()) {
        println!(
            "{} {}: slope {:.3} (expected {})",
            s.block,
            s.part,
            s.slope.unwrap_or(f64::NAN),
            s.expected_slope.unwrap()
        );
    }
    println!("CSV and JSON in {}", ctx.out_dir.display());
    Ok(())
}
