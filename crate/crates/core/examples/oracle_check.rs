//! Closed-form Hessian against the central-difference oracle.

use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::hessian::assemble;
use attn_hessian::oracle::{compare, fd_hessian};

fn main() -> attn_hessian::Result<()> {
    let cfg = ExperimentConfig::default_for(Command::Verify);
    for seed in 0..3 {
        let inst = Instance::sample(&mut rng_for(seed, 0), &cfg)?;
        let seq = inst.sequence(1.0)?;
        let params = inst.spec.param_ids();
        let analytic = assemble(&inst.spec, &seq)?.full();
        let oracle = fd_hessian(&inst.spec, &seq, &params)?;
        let rep = compare(&analytic, &oracle)?;
        println!(
            "seed {seed}: max-abs {:.2e} at {:?}, rel-Frobenius {:.2e}, ‖H‖ = {:.4}",
            rep.max_abs_error, rep.worst_index, rep.rel_frobenius_error, rep.analytic_norm
        );
    }
    Ok(())
}
