//! Forward pass and square loss of a single attention layer.

use attn_hessian::model::{forward, loss, AttentionSpec, Sequence};
use attn_hessian::Mat;

fn main() -> attn_hessian::Result<()> {
    let x = Mat::from_rows(&[&[1.0, 0.0, 0.5], &[0.2, -1.0, 0.3], &[0.0, 0.4, -0.7]]);
    let y = Mat::from_rows(&[&[0.5, 0.5, 0.0], &[0.0, 1.0, 0.0], &[-0.5, 0.0, 0.5]]);
    let seq = Sequence::new(x, y)?;
    let w_q = Mat::from_fn(3, 2, |i, j| 0.3 * (i as f64 - j as f64));
    let w_k = Mat::from_fn(3, 2, |i, j| 0.2 * (i + j) as f64);
    let w_v = Mat::from_fn(3, 3, |i, j| if i == j { 0.8 } else { 0.1 });
    let spec = AttentionSpec::classical(w_q, w_k, w_v)?;

    let cache = forward(&spec, &seq)?;
    println!("similarity scale 1/s = {:.4}", spec.similarity_scale());
    println!("attention rows (each sums to 1):");
    for i in 0..3 {
        println!("  {:?}", cache.a().row_slice(i));
    }
    println!("output F = A X W_V:");
    for i in 0..3 {
        println!("  {:?}", cache.f.row_slice(i));
    }
    println!("loss ‖F − Y‖² / (L d_v) = {:.6}", loss(&cache, &seq));
    Ok(())
}
