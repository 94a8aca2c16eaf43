//! Closed-form loss Hessian of self-attention, split into its outer-product
//! (Gauss-Newton) and functional parts.
//!
//! Notation used throughout this module, with `c = 2/(L d_v)`, the scale `s`
//! of the similarity map (`t √d_k` or `t`) and `G_P` the factor with
//! `∂ vecr T / ∂ vecr P = (X ⊗ X) G_P`:
//!
//! * `outer(P, P')      = G_Pᵀ Ψ G_P'`, `Ψ = c Z1ᵀ (I_L ⊗ W_V W_Vᵀ) Z1`
//! * `outer(V, V)       = c M1ᵀ M1 ⊗ I`
//! * `outer(V, P)       = c (M1ᵀ ⊗ W_Vᵀ) Z1 G_P`
//! * `functional(P, P') = G_Pᵀ Ω G_P'`, `Ω = c (δᵀ (I_L ⊗ W_Vᵀ) ⊗ I) Z2`,
//!   plus `(1/s) C ⊗ I_{d_k}` for the query-key pair where
//!   `C = c ((δᵀ (I_L ⊗ W_Vᵀ) Z1) ⊗ I) S`
//! * `functional(V, P)  = Φ G_P`, `Φ = c (δᵀ ⊗ I) (I_L ⊗ S) Z1`
//! * `functional(V, V)  = 0`
//!
//! Blocks between different heads have no functional part and an outer part
//! `c J_Pᵀ J_P'` built from the per-head Jacobians.

mod linear;
mod tdecomp;

pub use linear::linear_blocks;
pub use tdecomp::{freeze, t_decompose, temperature_prefactors, FrozenInputs, TDecomposition};

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::derivatives::{jacobian, similarity_factor};
use crate::error::{shape_err, Error, Result};
use crate::model::{
    forward, loss_scale, Activation, AttentionSpec, ForwardCache, ParamId, ParamKind, Sequence,
};
use crate::moments::{moments_for, z1_via_moments, z2_via_moments, MomentSet};
use crate::tensor::{kron, kron_capped, shuffle, Mat, DEFAULT_ELEMENT_CAP};

/// Which part of the Gauss-Newton split a block holds.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Part {
    Outer,
    Functional,
    Full,
}

impl Part {
    pub const ALL: [Part; 3] = [Part::Outer, Part::Functional, Part::Full];

    pub fn name(self) -> &'static str {
        match self {
            Part::Outer => "outer",
            Part::Functional => "functional",
            Part::Full => "full",
        }
    }
}

impl fmt::Display for Part {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct HessianBlock {
    pub row: ParamId,
    pub col: ParamId,
    pub part: Part,
    pub m: Mat,
}

/// Every ordered pair of parameters with both parts of the split.
#[derive(Clone, Debug, PartialEq)]
pub struct HessianGrid {
    params: Vec<ParamId>,
    sizes: Vec<usize>,
    outer: Vec<Vec<Mat>>,
    functional: Vec<Vec<Mat>>,
    pub seq_len: usize,
    pub d_v: usize,
    pub d_k: usize,
}

impl HessianGrid {
    fn from_parts(
        params: Vec<ParamId>,
        outer: Vec<Vec<Mat>>,
        functional: Vec<Vec<Mat>>,
        seq_len: usize,
        d_v: usize,
        d_k: usize,
    ) -> Self {
        let sizes = outer.iter().map(|row| row[0].rows()).collect();
        Self {
            params,
            sizes,
            outer,
            functional,
            seq_len,
            d_v,
            d_k,
        }
    }

    pub fn params(&self) -> &[ParamId] {
        &self.params
    }

    pub fn sizes(&self) -> &[usize] {
        &self.sizes
    }

    pub fn dim(&self) -> usize {
        self.sizes.iter().sum()
    }

    pub fn index_of(&self, id: ParamId) -> Result<usize> {
        self.params
            .iter()
            .position(|&p| p == id)
            .ok_or_else(|| Error::UnknownParam(id.to_string()))
    }

    /// Offset of the parameter's first coordinate in the assembled matrix.
    pub fn offset(&self, id: ParamId) -> Result<usize> {
        let i = self.index_of(id)?;
        Ok(self.sizes[..i].iter().sum())
    }

    fn matrix(&self, i: usize, j: usize, part: Part) -> Mat {
        match part {
            Part::Outer => self.outer[i][j].clone(),
            Part::Functional => self.functional[i][j].clone(),
            Part::Full => &self.outer[i][j] + &self.functional[i][j],
        }
    }

    pub fn block(&self, row: ParamId, col: ParamId, part: Part) -> Result<HessianBlock> {
        let (i, j) = (self.index_of(row)?, self.index_of(col)?);
        Ok(HessianBlock {
            row,
            col,
            part,
            m: self.matrix(i, j, part),
        })
    }

    /// The block matrix of one part for all parameters, in grid order.
    pub fn assemble(&self, part: Part) -> Mat {
        let n = self.dim();
        let mut out = Mat::zeros(n, n);
        let mut r0 = 0;
        for i in 0..self.params.len() {
            let mut c0 = 0;
            for j in 0..self.params.len() {
                out.set_block(r0, c0, &self.matrix(i, j, part));
                c0 += self.sizes[j];
            }
            r0 += self.sizes[i];
        }
        out
    }

    pub fn full(&self) -> Mat {
        self.assemble(Part::Full)
    }

    /// Restriction to a subset of parameters, in the order given.
    pub fn subgrid(&self, ids: &[ParamId]) -> Result<HessianGrid> {
        let idx = ids
            .iter()
            .map(|&id| self.index_of(id))
            .collect::<Result<Vec<_>>>()?;
        let pick = |src: &Vec<Vec<Mat>>| -> Vec<Vec<Mat>> {
            idx.iter()
                .map(|&i| idx.iter().map(|&j| src[i][j].clone()).collect())
                .collect()
        };
        Ok(Self::from_parts(
            ids.to_vec(),
            pick(&self.outer),
            pick(&self.functional),
            self.seq_len,
            self.d_v,
            self.d_k,
        ))
    }

    fn scaled_add(&mut self, other: &HessianGrid, w: f64) -> Result<()> {
        if self.params != other.params || self.sizes != other.sizes {
            return Err(shape_err(
                "HessianGrid",
                "identical parameter layout",
                "different layout",
            ));
        }
        for (mine, theirs) in [
            (&mut self.outer, &other.outer),
            (&mut self.functional, &other.functional),
        ] {
            for (row, orow) in mine.iter_mut().zip(theirs) {
                for (m, o) in row.iter_mut().zip(orow) {
                    *m += &o.scale(w);
                }
            }
        }
        Ok(())
    }
}

/// Head-local ingredients shared by the closed-form blocks.
#[derive(Clone, Debug)]
struct HeadTerms {
    moments: MomentSet,
    z1: Mat,
    /// `c Z1ᵀ (I ⊗ W_V W_Vᵀ) Z1`
    psi: Mat,
    /// `c (δᵀ (I ⊗ W_Vᵀ) ⊗ I) Z2`
    omega: Mat,
    /// `c (δᵀ ⊗ I) (I ⊗ S) Z1`
    phi: Mat,
    /// `c ((δᵀ (I ⊗ W_Vᵀ) Z1) ⊗ I) S`
    cross: Mat,
}

/// `δᵀ (I_L ⊗ W_Vᵀ)` as an `L x d_v` matrix: entry `(i, a)` multiplies row
/// `(i, a)` of `Z1`/`Z2` block rows.
fn residual_weights(delta: &Mat, w_v: &Mat, l: usize) -> Result<Mat> {
    let d = w_v.rows();
    let resid = delta.reshape(l, d)?;
    Ok(resid.dot(&w_v.transpose()))
}

/// `(wᵀ ⊗ I_m) Z` for `Z` with `L d` block rows of height `m`, where `w` is
/// the `L x d` weight matrix in row-major order.
fn contract_rows(w: &Mat, z: &Mat, m: usize) -> Mat {
    let mut out = Mat::zeros(m, z.cols());
    for (r, &wr) in w.as_slice().iter().enumerate() {
        if wr == 0.0 {
            continue;
        }
        out += &z.submatrix(r * m, 0, m, z.cols()).scale(wr);
    }
    out
}

fn head_terms(
    spec: &AttentionSpec,
    seq: &Sequence,
    cache: &ForwardCache,
    head: usize,
    cap: usize,
) -> Result<HeadTerms> {
    let x = seq.x();
    let (l, d) = x.shape();
    let c = loss_scale(seq);
    let w_v = &spec.head(head).w_v;
    let moments = moments_for(spec.activation(), &cache.heads[head].a, x)?;
    let z1 = z1_via_moments(x, &moments)?;

    let vvt = kron_capped(&Mat::identity(l), &w_v.dot(&w_v.transpose()), cap)?;
    let psi = z1.t_dot(&vvt.dot(&z1)).scale(c);

    let w = residual_weights(&cache.delta, w_v, l)?;
    let omega = match spec.activation() {
        Activation::Identity => Mat::zeros(d * d, d * d),
        Activation::Softmax => {
            let z2 = z2_via_moments(x, &moments, cap)?;
            contract_rows(&w, &z2, d * d).scale(c)
        }
    };

    let s = shuffle(d)?;
    let r = kron(&cache.delta.transpose(), &Mat::identity(d * d))?;
    let is = kron_capped(&Mat::identity(l), &s, cap)?;
    let phi = r.dot(&is.dot(&z1)).scale(c);

    let wz1 = contract_rows(&w, &z1, 1);
    let cross = kron(&wz1, &Mat::identity(d))?.dot(&s).scale(c);

    Ok(HeadTerms {
        moments,
        z1,
        psi,
        omega,
        phi,
        cross,
    })
}

/// Precomputed forward pass and per-head terms from which any block of the
/// Hessian can be read off.
#[derive(Clone, Debug)]
pub struct HessianContext<'a> {
    spec: &'a AttentionSpec,
    seq: &'a Sequence,
    cache: ForwardCache,
    heads: Vec<HeadTerms>,
    cap: usize,
}

impl<'a> HessianContext<'a> {
    pub fn new(spec: &'a AttentionSpec, seq: &'a Sequence) -> Result<Self> {
        Self::with_cap(spec, seq, DEFAULT_ELEMENT_CAP)
    }

    pub fn with_cap(spec: &'a AttentionSpec, seq: &'a Sequence, cap: usize) -> Result<Self> {
        let cache = forward(spec, seq)?;
        let heads = (0..spec.num_heads())
            .map(|h| head_terms(spec, seq, &cache, h, cap))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            spec,
            seq,
            cache,
            heads,
            cap,
        })
    }

    pub fn cache(&self) -> &ForwardCache {
        &self.cache
    }

    pub fn moments(&self, head: usize) -> &MomentSet {
        &self.heads[head].moments
    }

    pub fn z1(&self, head: usize) -> &Mat {
        &self.heads[head].z1
    }

    fn check(&self, id: ParamId) -> Result<usize> {
        self.spec.param_len(id)
    }

    fn scale(&self) -> f64 {
        self.spec.similarity_scale()
    }

    pub fn outer_block(&self, row: ParamId, col: ParamId) -> Result<Mat> {
        self.check(row)?;
        self.check(col)?;
        let c = loss_scale(self.seq);
        if row.head != col.head {
            let jr = jacobian(self.spec, self.seq, &self.cache, row)?;
            let jc = jacobian(self.spec, self.seq, &self.cache, col)?;
            return Ok(jr.t_dot(&jc).scale(c));
        }
        let t = &self.heads[row.head];
        let d = self.spec.d_v();
        let value_qk = |p: ParamId| -> Result<Mat> {
            let w_v = &self.spec.head(p.head).w_v;
            let left = kron(&t.moments.m1.transpose(), &w_v.transpose())?;
            Ok(left
                .dot(&t.z1)
                .dot(&similarity_factor(self.spec, p)?)
                .scale(c))
        };
        match (row.kind, col.kind) {
            (ParamKind::Value, ParamKind::Value) => {
                kron(&t.moments.m1.t_dot(&t.moments.m1), &Mat::identity(d)).map(|m| m.scale(c))
            }
            (ParamKind::Value, _) => value_qk(col),
            (_, ParamKind::Value) => Ok(value_qk(row)?.transpose()),
            _ => {
                let gr = similarity_factor(self.spec, row)?;
                let gc = similarity_factor(self.spec, col)?;
                Ok(gr.t_dot(&t.psi.dot(&gc)))
            }
        }
    }

    pub fn functional_block(&self, row: ParamId, col: ParamId) -> Result<Mat> {
        let (nr, nc) = (self.check(row)?, self.check(col)?);
        if row.head != col.head {
            return Ok(Mat::zeros(nr, nc));
        }
        let t = &self.heads[row.head];
        match (row.kind, col.kind) {
            (ParamKind::Value, ParamKind::Value) => Ok(Mat::zeros(nr, nc)),
            (ParamKind::Value, _) => Ok(t.phi.dot(&similarity_factor(self.spec, col)?)),
            (_, ParamKind::Value) => Ok(t.phi.dot(&similarity_factor(self.spec, row)?).transpose()),
            (rk, ck) => {
                let gr = similarity_factor(self.spec, row)?;
                let gc = similarity_factor(self.spec, col)?;
                let mut m = gr.t_dot(&t.omega.dot(&gc));
                let d_k = self.spec.d_k();
                let eye = Mat::identity(d_k);
                match (rk, ck) {
                    (ParamKind::Query, ParamKind::Key) => {
                        m += &kron(&t.cross, &eye)?.scale(self.scale());
                    }
                    (ParamKind::Key, ParamKind::Query) => {
                        m += &kron(&t.cross.transpose(), &eye)?.scale(self.scale());
                    }
                    _ => {}
                }
                Ok(m)
            }
        }
    }

    pub fn block(&self, row: ParamId, col: ParamId, part: Part) -> Result<HessianBlock> {
        let m = match part {
            Part::Outer => self.outer_block(row, col)?,
            Part::Functional => self.functional_block(row, col)?,
            Part::Full => &self.outer_block(row, col)? + &self.functional_block(row, col)?,
        };
        Ok(HessianBlock { row, col, part, m })
    }

    /// Both parts for every ordered pair of `params`. Blocks below the
    /// diagonal are transposes of those above, so the grid is symmetric by
    /// construction.
    pub fn grid(&self, params: &[ParamId]) -> Result<HessianGrid> {
        let n = params.len();
        let mut outer = vec![vec![Mat::scalar(0.0); n]; n];
        let mut functional = vec![vec![Mat::scalar(0.0); n]; n];
        for i in 0..n {
            for j in i..n {
                let o = self.outer_block(params[i], params[j])?;
                let f = self.functional_block(params[i], params[j])?;
                if i == j {
                    outer[i][i] = o.symmetrized();
                    functional[i][i] = f.symmetrized();
                } else {
                    outer[j][i] = o.transpose();
                    functional[j][i] = f.transpose();
                    outer[i][j] = o;
                    functional[i][j] = f;
                }
            }
        }
        Ok(HessianGrid::from_parts(
            params.to_vec(),
            outer,
            functional,
            self.seq.seq_len(),
            self.spec.d_v(),
            self.spec.d_k(),
        ))
    }

    pub fn element_cap(&self) -> usize {
        self.cap
    }
}

pub fn outer_block(
    spec: &AttentionSpec,
    seq: &Sequence,
    row: ParamId,
    col: ParamId,
) -> Result<HessianBlock> {
    HessianContext::new(spec, seq)?.block(row, col, Part::Outer)
}

pub fn functional_block(
    spec: &AttentionSpec,
    seq: &Sequence,
    row: ParamId,
    col: ParamId,
) -> Result<HessianBlock> {
    HessianContext::new(spec, seq)?.block(row, col, Part::Functional)
}

/// Full grid over the canonical parameter order (per head `[Q, K, V]`, or
/// `[QK, V]` for the single-matrix parameterization).
pub fn assemble(spec: &AttentionSpec, seq: &Sequence) -> Result<HessianGrid> {
    HessianContext::new(spec, seq)?.grid(&spec.param_ids())
}

/// Grid over `(head, parameter)` pairs for a multi-head spec, head-major.
pub fn multihead_assemble(spec: &AttentionSpec, seq: &Sequence) -> Result<HessianGrid> {
    if !spec.is_classical() {
        return Err(Error::Parameterization {
            expected: "classical",
        });
    }
    assemble(spec, seq)
}

/// `(W_QK, W_QK)` block of the single-matrix parameterization (both parts summed).
pub fn single_matrix_block(spec: &AttentionSpec, seq: &Sequence) -> Result<HessianBlock> {
    if spec.is_classical() {
        return Err(Error::Parameterization {
            expected: "single-matrix",
        });
    }
    if spec.activation() != Activation::Softmax {
        return Err(Error::Activation {
            expected: "softmax",
        });
    }
    HessianContext::new(spec, seq)?.block(ParamId::QK, ParamId::QK, Part::Full)
}

/// Mean of the per-sequence grids over a batch.
pub fn batch_mean(spec: &AttentionSpec, batch: &[Sequence]) -> Result<HessianGrid> {
    let (first, rest) = batch
        .split_first()
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let w = 1.0 / batch.len() as f64;
    let mut acc = assemble(spec, first)?;
    let zero = acc.clone();
    acc.scaled_add(&zero, w - 1.0)?;
    for seq in rest {
        acc.scaled_add(&assemble(spec, seq)?, w)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::HeadParams;
    use crate::tensor::{commutation, symmetric_eigenvalues};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random(rng: &mut ChaCha8Rng, r: usize, c: usize, s: f64) -> Mat {
        Mat::from_fn(r, c, |_, _| rng.gen_range(-s..s))
    }

    fn instance(seed: u64) -> (AttentionSpec, Sequence) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let spec = AttentionSpec::classical(
            random(&mut rng, 3, 2, 1.0),
            random(&mut rng, 3, 2, 1.0),
            random(&mut rng, 3, 3, 1.0),
        )
        .unwrap();
        let seq = Sequence::new(random(&mut rng, 3, 3, 1.0), random(&mut rng, 3, 3, 1.0)).unwrap();
        (spec, seq)
    }

    #[test]
    fn grid_is_symmetric_and_split_adds_up() {
        let (spec, seq) = instance(0);
        let grid = assemble(&spec, &seq).unwrap();
        for &a in grid.params() {
            for &b in grid.params() {
                let ab = grid.block(a, b, Part::Full).unwrap().m;
                let ba = grid.block(b, a, Part::Full).unwrap().m;
                assert_eq!(ab, ba.transpose());
                let o = grid.block(a, b, Part::Outer).unwrap().m;
                let f = grid.block(a, b, Part::Functional).unwrap().m;
                assert_eq!(ab, &o + &f);
            }
        }
        assert_eq!(grid.full().asymmetry(), 0.0);
        assert_eq!(grid.dim(), 6 + 6 + 9);
    }

    #[test]
    fn value_value_functional_is_exactly_zero() {
        let (spec, seq) = instance(1);
        let grid = assemble(&spec, &seq).unwrap();
        assert!(grid
            .block(ParamId::V, ParamId::V, Part::Functional)
            .unwrap()
            .m
            .is_zero());
    }

    #[test]
    fn value_value_outer_with_identity_attention() {
        // L = 1 forces A = [1], so M1 = X.
        let x = Mat::from_rows(&[[0.5, -1.0]]);
        let spec =
            AttentionSpec::classical(Mat::identity(2), Mat::identity(2), Mat::identity(2)).unwrap();
        let seq = Sequence::new(x.clone(), Mat::zeros(1, 2)).unwrap();
        let vv = outer_block(&spec, &seq, ParamId::V, ParamId::V).unwrap().m;
        let expected = kron(&x.t_dot(&x), &Mat::identity(2))
            .unwrap()
            .scale(2.0 / 2.0);
        assert!((&vv - &expected).max_abs() < 1e-15);
    }

    #[test]
    fn zero_value_weights_and_labels_leave_only_value_outer() {
        let (spec, seq) = instance(2);
        let spec = spec.with_param(ParamId::V, Mat::zeros(3, 3)).unwrap();
        let seq = seq.with_y(Mat::zeros(3, 3)).unwrap();
        let grid = assemble(&spec, &seq).unwrap();
        for &a in grid.params() {
            for &b in grid.params() {
                for part in [Part::Outer, Part::Functional] {
                    let m = grid.block(a, b, part).unwrap().m;
                    let keep = a == ParamId::V && b == ParamId::V && part == Part::Outer;
                    assert_eq!(m.is_zero(), !keep, "{a} {b} {part}");
                }
            }
        }
    }

    #[test]
    fn zero_residual_kills_functional_part() {
        let (spec, seq) = instance(3);
        let f = forward(&spec, &seq).unwrap().f;
        let seq = seq.with_y(f).unwrap();
        let grid = assemble(&spec, &seq).unwrap();
        assert!(grid.assemble(Part::Functional).is_zero());
    }

    #[test]
    fn outer_part_is_positive_semidefinite() {
        let (spec, seq) = instance(4);
        let outer = assemble(&spec, &seq).unwrap().assemble(Part::Outer);
        let ev = symmetric_eigenvalues(&outer);
        let max = ev.last().copied().unwrap();
        assert!(ev[0] >= -1e-8 * max);
    }

    #[test]
    fn value_scaling_scales_query_outer_quadratically() {
        let (spec, seq) = instance(5);
        let s = 3.0;
        let scaled = spec
            .with_param(ParamId::V, spec.param(ParamId::V).unwrap().scale(s))
            .unwrap();
        let base = outer_block(&spec, &seq, ParamId::Q, ParamId::Q).unwrap().m;
        let big = outer_block(&scaled, &seq, ParamId::Q, ParamId::Q)
            .unwrap()
            .m;
        assert!((&big - &base.scale(s * s)).max_abs() <= 1e-12 * big.max_abs());
    }

    #[test]
    fn phi_matches_direct_contraction() {
        let (spec, seq) = instance(6);
        let ctx = HessianContext::new(&spec, &seq).unwrap();
        let t = &ctx.heads[0];
        let d = 3;
        let c = loss_scale(&seq);
        let delta = &ctx.cache.delta;
        let direct = Mat::from_fn(d * d, d * d, |r, col| {
            let (a, b) = (r / d, r % d);
            (0..3)
                .map(|i| delta[(i * d + b, 0)] * t.z1[(i * d + a, col)])
                .sum::<f64>()
                * c
        });
        assert!((&direct - &t.phi).max_abs() < 1e-14);
    }

    #[test]
    fn key_factor_matches_transpose_rule() {
        let (spec, _) = instance(7);
        let g = similarity_factor(&spec, ParamId::K).unwrap();
        let w_q = spec.param(ParamId::Q).unwrap();
        let manual = kron(w_q, &Mat::identity(3))
            .unwrap()
            .dot(&commutation(2, 3).unwrap());
        assert_eq!(g, manual.scale(spec.similarity_scale()));
    }

    #[test]
    fn batch_mean_of_identical_sequences() {
        let (spec, seq) = instance(8);
        let one = assemble(&spec, &seq).unwrap();
        let two = batch_mean(&spec, &[seq.clone(), seq]).unwrap();
        assert!((&one.full() - &two.full()).max_abs() < 1e-14);
    }

    #[test]
    fn single_head_multihead_matches_assemble() {
        let (spec, seq) = instance(9);
        assert_eq!(
            multihead_assemble(&spec, &seq).unwrap(),
            assemble(&spec, &seq).unwrap()
        );
        let h = spec.head(0).clone();
        let two = AttentionSpec::multi_head(vec![
            h.clone(),
            HeadParams {
                w_v: h.w_v.scale(0.5),
                ..h
            },
        ])
        .unwrap();
        let grid = multihead_assemble(&two, &seq).unwrap();
        assert_eq!(grid.params().len(), 6);
        for &a in &grid.params()[..3] {
            for &b in &grid.params()[3..] {
                assert!(grid.block(a, b, Part::Functional).unwrap().m.is_zero());
            }
        }
    }
}
