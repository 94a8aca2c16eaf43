//! Assemble the full Hessian and inspect its outer and functional parts.

use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::hessian::{assemble, Part};
use attn_hessian::tensor::symmetric_eigenvalues;

fn main() -> attn_hessian::Result<()> {
    let cfg = ExperimentConfig::default_for(Command::Verify);
    let inst = Instance::sample(&mut rng_for(1, 0), &cfg)?;
    let seq = inst.sequence(1.0)?;
    let grid = assemble(&inst.spec, &seq)?;
    println!(
        "parameters {:?}, total dimension {}",
        grid.params()
            .iter()
            .map(|p| p.to_string())
            .collect::<Vec<_>>(),
        grid.dim()
    );
    println!(
        "{:<6} {:>12} {:>12} {:>12}",
        "block", "outer", "functional", "full"
    );
    for &a in grid.params() {
        for &b in grid.params() {
            let n = |p| grid.block(a, b, p).map(|blk| blk.m.frobenius_norm());
            println!(
                "{:<6} {:>12.4e} {:>12.4e} {:>12.4e}",
                format!("{a}{b}"),
                n(Part::Outer)?,
                n(Part::Functional)?,
                n(Part::Full)?
            );
        }
    }
    let full = grid.full();
    let ev = symmetric_eigenvalues(&full);
    println!(
        "asymmetry {:.1e}; eigenvalues from {:.4e} to {:.4e}",
        full.asymmetry(),
        ev[0],
        ev[ev.len() - 1]
    );
    Ok(())
}
