//! Single-matrix parameterization `T = X W_QK Xᵀ / t` and its Hessian block.

use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig, Parameterization};
use attn_hessian::hessian::single_matrix_block;
use attn_hessian::model::ParamId;
use attn_hessian::oracle::{compare, fd_hessian};

fn main() -> attn_hessian::Result<()> {
    let mut cfg = ExperimentConfig::default_for(Command::Verify);
    cfg.dims.d_v = 3;
    cfg.variant.parameterization = Parameterization::Single;
    let inst = Instance::sample(&mut rng_for(5, 0), &cfg)?;
    let seq = inst.sequence(1.0)?;
    let block = single_matrix_block(&inst.spec, &seq)?;
    let fd = fd_hessian(&inst.spec, &seq, &[ParamId::QK])?;
    let rep = compare(&block.m, &fd)?;
    println!("(W_QK, W_QK) block {}x{}", block.m.rows(), block.m.cols());
    println!(
        "max-abs vs oracle {:.2e}, rel-Frobenius {:.2e}",
        rep.max_abs_error, rep.rel_frobenius_error
    );
    Ok(())
}
