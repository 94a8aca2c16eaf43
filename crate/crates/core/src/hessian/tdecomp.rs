//! Gauss-Newton split taken at the similarity map `T` instead of at `F`.
//!
//! Restricted to the query and key weights, the Hessian equals
//! `T_outer + T_functional` with
//!
//! * `T_outer = Vᵀ U V / s²`, `V = [I ⊗ W_K, (W_Q ⊗ I) K_{d_k,d_v}]`,
//!   `U = c [Z1ᵀ (I ⊗ W_V W_Vᵀ) Z1 + (δᵀ (I ⊗ W_Vᵀ) ⊗ I) Z2]`
//! * `T_functional = [[0, Bᵀ], [B, 0]] ⊗ I_{d_k} / s`, block-hollow, so its
//!   eigenvalues come in `±λ` pairs, each with multiplicity `d_k`.

use crate::error::{Error, Result};
use crate::model::{forward, Activation, AttentionSpec, ParamId, Sequence};
use crate::moments::{moments, z1_via_moments, z2_via_moments};
use crate::tensor::{commutation, kron, kron_capped, shuffle, Mat, DEFAULT_ELEMENT_CAP};

use super::{contract_rows, residual_weights, HessianContext, Part};

/// Softmax-derived quantities held fixed while the temperature varies.
#[derive(Clone, Debug, PartialEq)]
pub struct FrozenInputs {
    pub z1: Mat,
    pub z2: Mat,
    pub delta: Mat,
    pub w_q: Mat,
    pub w_k: Mat,
    pub w_v: Mat,
    pub seq_len: usize,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TDecomposition {
    pub t_outer: Mat,
    pub t_functional: Mat,
    /// `V`, shape `d_v² x 2 d_v d_k`.
    pub v_factor: Mat,
    /// `U`, shape `d_v² x d_v²`, including the loss scale `2/(L d_v)`.
    pub u_core: Mat,
    /// `B`, the lower-left `d_v x d_v` core of `T_functional` (before `⊗ I` and `1/s`).
    pub b_offdiag: Mat,
    /// Similarity scale `s = t √d_k`.
    pub scale: f64,
}

impl TDecomposition {
    pub fn total(&self) -> Mat {
        &self.t_outer + &self.t_functional
    }
}

fn require_softmax_classical(spec: &AttentionSpec) -> Result<()> {
    if !spec.is_classical() {
        return Err(Error::Parameterization {
            expected: "classical",
        });
    }
    if spec.activation() != Activation::Softmax {
        return Err(Error::Activation {
            expected: "softmax",
        });
    }
    if spec.num_heads() != 1 {
        return Err(Error::Config(
            "the decomposition covers a single head".into(),
        ));
    }
    Ok(())
}

/// Evaluate the softmax-derived inputs once, at the model's own temperature.
pub fn freeze(spec: &AttentionSpec, seq: &Sequence) -> Result<FrozenInputs> {
    require_softmax_classical(spec)?;
    let cache = forward(spec, seq)?;
    let m = moments(cache.a(), seq.x())?;
    Ok(FrozenInputs {
        z1: z1_via_moments(seq.x(), &m)?,
        z2: z2_via_moments(seq.x(), &m, DEFAULT_ELEMENT_CAP)?,
        delta: cache.delta,
        w_q: spec.param(ParamId::Q)?.clone(),
        w_k: spec.param(ParamId::K)?.clone(),
        w_v: spec.param(ParamId::V)?.clone(),
        seq_len: seq.seq_len(),
    })
}

fn build(frozen: &FrozenInputs, t: f64) -> Result<TDecomposition> {
    if !(t > 0.0 && t.is_finite()) {
        return Err(Error::Temperature(t));
    }
    let (d, k) = frozen.w_q.shape();
    let l = frozen.seq_len;
    let c = 2.0 / (l * d) as f64;
    let s = t * (k as f64).sqrt();

    let v_factor = Mat::hstack(&[
        &kron(&Mat::identity(d), &frozen.w_k)?,
        &kron(&frozen.w_q, &Mat::identity(d))?.dot(&commutation(k, d)?),
    ])?;
    let vvt = kron_capped(
        &Mat::identity(l),
        &frozen.w_v.dot(&frozen.w_v.transpose()),
        DEFAULT_ELEMENT_CAP,
    )?;
    let w = residual_weights(&frozen.delta, &frozen.w_v, l)?;
    let u_core = &frozen.z1.t_dot(&vvt.dot(&frozen.z1)) + &contract_rows(&w, &frozen.z2, d * d);
    let u_core = u_core.scale(c);
    let t_outer = v_factor
        .t_dot(&u_core.dot(&v_factor))
        .scale(1.0 / (s * s))
        .symmetrized();

    let wz1 = contract_rows(&w, &frozen.z1, 1);
    let cross = kron(&wz1, &Mat::identity(d))?.dot(&shuffle(d)?).scale(c);
    let b_offdiag = cross.transpose();
    let zero = Mat::zeros(d, d);
    let hollow = Mat::vstack(&[
        &Mat::hstack(&[&zero, &cross])?,
        &Mat::hstack(&[&b_offdiag, &zero])?,
    ])?;
    let t_functional = kron(&hollow, &Mat::identity(k))?.scale(1.0 / s);

    Ok(TDecomposition {
        t_outer,
        t_functional,
        v_factor,
        u_core,
        b_offdiag,
        scale: s,
    })
}

/// `(T_outer, T_functional)` at temperature `t` from frozen inputs. With the
/// inputs held fixed the two parts scale exactly as `1/t²` and `1/t`.
pub fn temperature_prefactors(frozen: &FrozenInputs, t: f64) -> Result<(Mat, Mat)> {
    let dec = build(frozen, t)?;
    Ok((dec.t_outer, dec.t_functional))
}

/// Tolerance for the internal consistency check against the block grid.
const CONSISTENCY_TOL: f64 = 1e-10;

/// Decompose the `[Q, K] x [Q, K]` Hessian and check it against the block
/// formulas of the full grid.
pub fn t_decompose(spec: &AttentionSpec, seq: &Sequence) -> Result<TDecomposition> {
    let frozen = freeze(spec, seq)?;
    let dec = build(&frozen, spec.temperature())?;
    let grid = HessianContext::new(spec, seq)?.grid(&[ParamId::Q, ParamId::K])?;
    let reference = grid.assemble(Part::Full);
    let err = (&dec.total() - &reference).frobenius_norm() / reference.frobenius_norm().max(1.0);
    if err > CONSISTENCY_TOL {
        return Err(Error::Decomposition(err));
    }
    Ok(dec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::symmetric_eigenvalues;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn instance(seed: u64) -> (AttentionSpec, Sequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut r = |a: usize, b: usize| Mat::from_fn(a, b, |_, _| rng.gen_range(-1.0..1.0));
        let spec = AttentionSpec::classical(r(4, 2), r(4, 2), r(4, 4)).unwrap();
        let seq = Sequence::new(r(3, 4), r(3, 4)).unwrap();
        (spec, seq)
    }

    #[test]
    fn zero_residual_gives_zero_functional() {
        let (spec, seq) = instance(0);
        let f = forward(&spec, &seq).unwrap().f;
        let dec = t_decompose(&spec, &seq.with_y(f).unwrap()).unwrap();
        assert!(dec.b_offdiag.is_zero());
        assert!(dec.t_functional.is_zero());
    }

    #[test]
    fn functional_spectrum_pairs() {
        let (spec, seq) = instance(1);
        let dec = t_decompose(&spec, &seq).unwrap();
        let ev = symmetric_eigenvalues(&dec.t_functional);
        let n = ev.len();
        for i in 0..n {
            assert!((ev[i] + ev[n - 1 - i]).abs() <= 1e-12);
        }
    }

    #[test]
    fn temperature_ratios() {
        let (spec, seq) = instance(2);
        let frozen = freeze(&spec, &seq).unwrap();
        let (o1, f1) = temperature_prefactors(&frozen, 1.0).unwrap();
        let (o2, f2) = temperature_prefactors(&frozen, 2.0).unwrap();
        assert!((&o2 - &o1.scale(0.25)).max_abs() <= 1e-12 * o1.max_abs());
        assert!((&f2 - &f1.scale(0.5)).max_abs() <= 1e-12 * f1.max_abs());
        assert!(temperature_prefactors(&frozen, -1.0).is_err());
    }
}
