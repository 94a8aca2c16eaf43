//! Attention moment matrices and the data matrices `Z1`, `Z2` that carry
//! every query/key curvature term.
//!
//! Row `i` of the attention matrix is read as a distribution over the tokens
//! `x_j`. `M1` holds the means, `M2` the stacked `d_v x d_v` covariances and
//! `M3` the stacked `d_v² x d_v` third central moments with
//! `M3_i[(a d + b), c] = E[(x − m_i)_a (x − m_i)_b (x − m_i)_c]`.

use crate::derivatives::{activation_jacobian, activation_second};
use crate::error::{Error, Result};
use crate::model::Activation;
use crate::tensor::{commutation, khatri_rao, kron, kron_capped, BlockPartition, Mat};

/// Tolerance on attention row sums before moments are accepted.
pub const STOCHASTIC_TOL: f64 = 1e-8;

#[derive(Clone, Debug, PartialEq)]
pub struct MomentSet {
    /// `L x d_v` attention means `A X`.
    pub m1: Mat,
    /// `L d_v x d_v`, block row `i` is the covariance under row `i`.
    pub m2: Mat,
    /// `L d_v² x d_v`, block row `i` is the third central moment under row `i`.
    pub m3: Mat,
}

impl MomentSet {
    pub fn seq_len(&self) -> usize {
        self.m1.rows()
    }

    pub fn d_v(&self) -> usize {
        self.m1.cols()
    }

    pub fn m2_block(&self, i: usize) -> Mat {
        let d = self.d_v();
        self.m2.submatrix(i * d, 0, d, d)
    }

    pub fn m3_block(&self, i: usize) -> Mat {
        let d = self.d_v();
        self.m3.submatrix(i * d * d, 0, d * d, d)
    }
}

fn check_inputs(a: &Mat, x: &Mat) -> Result<()> {
    if a.rows() != a.cols() || a.rows() != x.rows() {
        return Err(crate::error::shape_err(
            "moments",
            format!("square A with {} rows", x.rows()),
            format!("{}x{}", a.rows(), a.cols()),
        ));
    }
    Ok(())
}

/// Moments of the attention distributions `A` (rows must sum to one) over the
/// tokens `X`.
pub fn moments(a: &Mat, x: &Mat) -> Result<MomentSet> {
    check_inputs(a, x)?;
    for i in 0..a.rows() {
        let sum: f64 = a.row_slice(i).iter().sum();
        if (sum - 1.0).abs() > STOCHASTIC_TOL {
            return Err(Error::NotStochastic { row: i, sum });
        }
    }
    let (l, d) = x.shape();
    let m1 = a.dot(x);
    let mut m2 = Mat::zeros(l * d, d);
    let mut m3 = Mat::zeros(l * d * d, d);
    let mut c = vec![0.0; d];
    for i in 0..l {
        let mean = m1.row_slice(i);
        for j in 0..l {
            let w = a[(i, j)];
            if w == 0.0 {
                continue;
            }
            for (cv, (xv, mv)) in c.iter_mut().zip(x.row_slice(j).iter().zip(mean)) {
                *cv = xv - mv;
            }
            for p in 0..d {
                for q in 0..d {
                    let wpq = w * c[p] * c[q];
                    m2[(i * d + p, q)] += wpq;
                    for r in 0..d {
                        m3[((i * d + p) * d + q, r)] += wpq * c[r];
                    }
                }
            }
        }
    }
    Ok(MomentSet { m1, m2, m3 })
}

/// Moment set as seen by the Hessian formulas for the given activation.
///
/// For the identity activation `∂A/∂T = I` and `∂²A/∂T² = 0`, which the
/// moment identities reproduce with `M2_i = XᵀX` and `M3_i = 0`.
pub fn moments_for(activation: Activation, a: &Mat, x: &Mat) -> Result<MomentSet> {
    match activation {
        Activation::Softmax => moments(a, x),
        Activation::Identity => {
            check_inputs(a, x)?;
            let (l, d) = x.shape();
            let gram = x.t_dot(x);
            let mut m2 = Mat::zeros(l * d, d);
            for i in 0..l {
                m2.set_block(i * d, 0, &gram);
            }
            Ok(MomentSet {
                m1: a.dot(x),
                m2,
                m3: Mat::zeros(l * d * d, d),
            })
        }
    }
}

/// `Z1 = (I_L ⊗ Xᵀ) J (X ⊗ X)` from the activation Jacobian `J`.
pub fn z1_direct(x: &Mat, jac: &Mat, cap: usize) -> Result<Mat> {
    let l = x.rows();
    let left = kron_capped(&Mat::identity(l), &x.transpose(), cap)?;
    let xx = kron_capped(x, x, cap)?;
    left.try_dot(jac)?.try_dot(&xx)
}

/// `Z1 = X * M2` with `X` split into rows and `M2` into `d_v x d_v` blocks.
pub fn z1_via_moments(x: &Mat, m: &MomentSet) -> Result<Mat> {
    let (l, d) = x.shape();
    let px = BlockPartition::new(vec![1; l], vec![d])?;
    let pm = BlockPartition::new(vec![d; l], vec![d])?;
    khatri_rao(x, &px, &m.m2, &pm)
}

/// `Z2 = (I_L ⊗ Xᵀ ⊗ Xᵀ ⊗ Xᵀ) H2 (X ⊗ X)` from the activation second derivative.
pub fn z2_direct(x: &Mat, h2: &Mat, cap: usize) -> Result<Mat> {
    let l = x.rows();
    let xt = x.transpose();
    let xt3 = kron_capped(&kron_capped(&xt, &xt, cap)?, &xt, cap)?;
    let left = kron_capped(&Mat::identity(l), &xt3, cap)?;
    let xx = kron_capped(x, x, cap)?;
    left.try_dot(h2)?.try_dot(&xx)
}

/// `Z2 = (I_L ⊗ K_{d,d} ⊗ I_d)(X * Xᵀ * M3)`, where block `i` of the triple
/// Khatri-Rao product is `x_i x_iᵀ ⊗ M3_i`.
pub fn z2_via_moments(x: &Mat, m: &MomentSet, cap: usize) -> Result<Mat> {
    let (l, d) = x.shape();
    let requested = (l * d * d * d) as u128 * (d * d) as u128;
    if requested > cap as u128 {
        return Err(Error::SizeLimit {
            what: format!("Z2 ({} x {})", l * d * d * d, d * d),
            requested,
            cap,
        });
    }
    // Block i of X * Xᵀ is the outer product x_i x_iᵀ: the columns of Xᵀ are
    // stacked into an L d x 1 grid so both operands share an L x 1 block grid.
    let x_cols = x.reshape(l * d, 1)?;
    let col_blocks = BlockPartition::new(vec![d; l], vec![1])?;
    let row_blocks = BlockPartition::new(vec![1; l], vec![d])?;
    let outer = khatri_rao(&x_cols, &col_blocks, x, &row_blocks)?;
    let pm3 = BlockPartition::new(vec![d * d; l], vec![d])?;
    let pouter = BlockPartition::new(vec![d; l], vec![d])?;
    let kr = khatri_rao(&outer, &pouter, &m.m3, &pm3)?;
    let perm = kron(
        &kron(&Mat::identity(l), &commutation(d, d)?)?,
        &Mat::identity(d),
    )?;
    perm.try_dot(&kr)
}

/// `Z1` and `Z2` computed by the direct definitions.
pub fn z_direct(activation: Activation, a: &Mat, x: &Mat, cap: usize) -> Result<(Mat, Mat)> {
    let j = activation_jacobian(activation, a);
    let h2 = activation_second(activation, a, cap)?;
    Ok((z1_direct(x, &j, cap)?, z2_direct(x, &h2, cap)?))
}
