//! Curvature of stacked identity-attention layers grows as `σ^(2·3^D)`.

use attn_hessian::experiments::config::log_grid;
use attn_hessian::experiments::depth::run_depth;
use attn_hessian::experiments::{Command, ExperimentConfig, RunContext};

fn main() -> attn_hessian::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Depth);
    cfg.sigma_grid = log_grid(0.1, 0.5, 5);
    cfg.seeds = (0..4).collect();
    let ctx = RunContext::new(std::env::temp_dir().join("attn-hessian-depth-example"));
    let (result, _) = run_depth(&cfg, &ctx)?;
    for s in &result.series {
        println!(
            "{}: slope {:.3} (expected {})",
            s.block,
            s.slope.unwrap_or(f64::NAN),
            s.expected_slope.unwrap_or(f64::NAN)
        );
    }
    Ok(())
}
