//! Query-key Hessian through the similarity matrix `T`: a low-rank outer part
//! and a block-hollow functional part with symmetric spectrum.

use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::spectrum::{pairing_residual, rank_bound};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::hessian::t_decompose;
use attn_hessian::tensor::{numerical_rank, symmetric_eigenvalues};

fn main() -> attn_hessian::Result<()> {
    let cfg = ExperimentConfig::default_for(Command::Spectrum);
    let inst = Instance::sample(&mut rng_for(0, 0), &cfg)?;
    let seq = inst.sequence(1.0)?;
    let dec = t_decompose(&inst.spec, &seq)?;
    let ev = symmetric_eigenvalues(&dec.t_functional);
    println!(
        "functional-part eigenvalues: {:?}",
        ev.iter().map(|v| format!("{v:.4e}")).collect::<Vec<_>>()
    );
    println!(
        "pairing residual max |λ_i + λ_(n−1−i)| = {:.2e}",
        pairing_residual(&ev)
    );
    println!(
        "rank of outer part: {} (bound {})",
        numerical_rank(&dec.t_outer, 1e-8),
        rank_bound(cfg.dims.d_v, cfg.dims.d_k)
    );
    println!(
        "V is {}x{}, U is {}x{}, s = {:.4}",
        dec.v_factor.rows(),
        dec.v_factor.cols(),
        dec.u_core.rows(),
        dec.u_core.cols(),
        dec.scale
    );
    Ok(())
}
