//! Attention moments and the two equivalent forms of `Z1` and `Z2`.

use attn_hessian::experiments::sampling::{rng_for, Instance};
use attn_hessian::experiments::{Command, ExperimentConfig};
use attn_hessian::model::forward;
use attn_hessian::moments::{moments, z1_via_moments, z2_via_moments, z_direct};
use attn_hessian::tensor::DEFAULT_ELEMENT_CAP;

fn main() -> attn_hessian::Result<()> {
    let cfg = ExperimentConfig::default_for(Command::Verify);
    let inst = Instance::sample(&mut rng_for(3, 0), &cfg)?;
    let seq = inst.sequence(1.0)?;
    let cache = forward(&inst.spec, &seq)?;
    let m = moments(cache.a(), seq.x())?;
    println!("row means M1 (= A X):");
    for i in 0..seq.seq_len() {
        println!("  {:?}", m.m1.row_slice(i));
    }
    println!(
        "trace of each row covariance: {:?}",
        (0..seq.seq_len())
            .map(|i| m.m2_block(i).trace())
            .collect::<Vec<_>>()
    );

    let (z1, z2) = z_direct(
        inst.spec.activation(),
        cache.a(),
        seq.x(),
        DEFAULT_ELEMENT_CAP,
    )?;
    let z1m = z1_via_moments(seq.x(), &m)?;
    let z2m = z2_via_moments(seq.x(), &m, DEFAULT_ELEMENT_CAP)?;
    println!(
        "Z1 {}x{}: derivative form vs moment form {:.2e}",
        z1.rows(),
        z1.cols(),
        (&z1 - &z1m).max_abs()
    );
    println!(
        "Z2 {}x{}: derivative form vs moment form {:.2e}",
        z2.rows(),
        z2.cols(),
        (&z2 - &z2m).max_abs()
    );
    Ok(())
}
