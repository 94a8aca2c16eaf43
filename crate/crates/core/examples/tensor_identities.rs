//! Row-major vectorization, Kronecker products and commutation matrices.

use attn_hessian::tensor::{commutation, kron, vecr};
use attn_hessian::Mat;

fn main() -> attn_hessian::Result<()> {
    let a = Mat::from_fn(2, 3, |i, j| (i * 3 + j) as f64 + 1.0);
    let x = Mat::from_fn(3, 4, |i, j| (i as f64) - 0.5 * j as f64);
    let b = Mat::from_fn(4, 2, |i, j| 0.25 * (i + 2 * j) as f64);

    // vecr(A X B) = (A ⊗ Bᵀ) vecr(X)
    let lhs = vecr(&a.dot(&x).dot(&b));
    let rhs = kron(&a, &b.transpose())?.dot(&vecr(&x));
    println!(
        "vecr(AXB) identity residual: {:.2e}",
        (&lhs - &rhs).max_abs()
    );

    // K_{4,3} vecr(X) = vecr(Xᵀ) for the 3 x 4 matrix X
    let k = commutation(4, 3)?;
    let swapped = k.dot(&vecr(&x));
    println!(
        "commutation residual:        {:.2e}",
        (&swapped - &vecr(&x.transpose())).max_abs()
    );

    // Mixed product (A ⊗ B)(C ⊗ D) = AC ⊗ BD
    let c = Mat::from_fn(3, 2, |i, j| (i + j) as f64);
    let d = Mat::from_fn(2, 3, |i, j| (2 * i + j) as f64 - 1.0);
    let mixed = (&kron(&a, &b)?.dot(&kron(&c, &d)?) - &kron(&a.dot(&c), &b.dot(&d))?).max_abs();
    println!("mixed-product residual:      {mixed:.2e}");
    Ok(())
}
