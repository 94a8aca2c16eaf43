//! With `Z1`, `Z2` and the residual held fixed, the outer part scales as
//! `1/t²` and the functional part as `1/t`.

use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::hessian::{freeze, temperature_prefactors};

fn main() -> attn_hessian::Result<()> {
    let cfg = ExperimentConfig::default_for(Command::Verify);
    let inst = Instance::sample(&mut rng_for(0, 0), &cfg)?;
    let frozen = freeze(&inst.spec, &inst.sequence(1.0)?)?;
    let (o1, f1) = temperature_prefactors(&frozen, 1.0)?;
    for t in [1.0, 2.0, 10.0] {
        let (o, f) = temperature_prefactors(&frozen, t)?;
        let ro = o.frobenius_norm() / o1.frobenius_norm();
        let rf = f.frobenius_norm() / f1.frobenius_norm();
        println!("t = {t:>4}: outer ratio {ro:.6} (1/t² = {:.6}), functional ratio {rf:.6} (1/t = {:.6})", 1.0 / (t * t), 1.0 / t);
    }
    Ok(())
}
