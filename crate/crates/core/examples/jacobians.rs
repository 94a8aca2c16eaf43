//! Analytic Jacobians of the attention output against finite differences.

use attn_hessian::derivatives::jacobian;
use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::model::forward;
use attn_hessian::oracle::fd_jacobian;

fn main() -> attn_hessian::Result<()> {
    let cfg = ExperimentConfig::default_for(Command::Verify);
    let inst = Instance::sample(&mut rng_for(0, 0), &cfg)?;
    let seq = inst.sequence(1.0)?;
    let cache = forward(&inst.spec, &seq)?;
    for id in inst.spec.param_ids() {
        let analytic = jacobian(&inst.spec, &seq, &cache, id)?;
        let fd = fd_jacobian(&inst.spec, &seq, id)?;
        println!(
            "∂vecr(F)/∂vecr(W_{id}): {}x{}, max |analytic − fd| = {:.2e}",
            analytic.rows(),
            analytic.cols(),
            (&analytic - &fd).max_abs()
        );
    }
    Ok(())
}
