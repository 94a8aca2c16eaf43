//! Mean Hessian over a batch of sequences sharing one set of weights.

use attn_hessian::experiments::sampling::{normal_mat, rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::hessian::{batch_mean, Part};
use attn_hessian::model::{ParamId, Sequence};

fn main() -> attn_hessian::Result<()> {
    let cfg = ExperimentConfig::default_for(Command::Verify);
    let mut rng = rng_for(0, 0);
    let inst = Instance::sample(&mut rng, &cfg)?;
    let (l, d) = (cfg.dims.seq_len, cfg.dims.d_v);
    let batch = (0..8)
        .map(|_| {
            Sequence::new(
                normal_mat(&mut rng, l, d, 1.0),
                normal_mat(&mut rng, l, d, 1.0),
            )
        })
        .collect::<attn_hessian::Result<Vec<_>>>()?;
    let mean = batch_mean(&inst.spec, &batch)?;
    println!(
        "batch of {}: ‖H‖ = {:.4e}",
        batch.len(),
        mean.full().frobenius_norm()
    );
    println!(
        "mean (Q,Q) outer norm {:.4e}",
        mean.block(ParamId::Q, ParamId::Q, Part::Outer)?
            .m
            .frobenius_norm()
    );
    println!(
        "mean (V,V) outer norm {:.4e}",
        mean.block(ParamId::V, ParamId::V, Part::Outer)?
            .m
            .frobenius_norm()
    );
    Ok(())
}
