//! Two heads: blocks between heads have no functional part.

use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::hessian::{multihead_assemble, Part};

fn main() -> attn_hessian::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Verify);
    cfg.dims.heads = 2;
    let inst = Instance::sample(&mut rng_for(0, 0), &cfg)?;
    let grid = multihead_assemble(&inst.spec, &inst.sequence(1.0)?)?;
    for &a in grid.params() {
        for &b in grid.params().iter().filter(|b| b.head > a.head) {
            let f = grid.block(a, b, Part::Functional)?.m;
            let o = grid.block(a, b, Part::Outer)?.m;
            println!(
                "{a} × {b}: outer {:.4e}, functional zero: {}",
                o.frobenius_norm(),
                f.is_zero()
            );
        }
    }
    Ok(())
}
