//! Identity activation: closed forms in the token second moment agree with
//! the general assembly, and the diagonal functional blocks vanish.

use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::hessian::{assemble, linear_blocks, Part};
use attn_hessian::model::Activation;

fn main() -> attn_hessian::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Verify);
    cfg.variant.activation = Activation::Identity;
    let inst = Instance::sample(&mut rng_for(2, 0), &cfg)?;
    let seq = inst.sequence(0.8)?;
    let general = assemble(&inst.spec, &seq)?;
    let closed = linear_blocks(&inst.spec, &seq)?;
    for &a in general.params() {
        let f = general.block(a, a, Part::Functional)?.m;
        println!("functional({a},{a}) is zero: {}", f.is_zero());
        for &b in general.params() {
            let diff = (&general.block(a, b, Part::Full)?.m - &closed.block(a, b, Part::Full)?.m)
                .max_abs();
            println!("  block {a}{b}: closed form vs general {diff:.2e}");
        }
    }
    Ok(())
}
