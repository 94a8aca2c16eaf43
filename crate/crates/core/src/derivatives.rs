//! First and second derivatives of the attention activation and the
//! Jacobians of `vecr F` with respect to every weight matrix.
//!
//! All Jacobians use numerator layout over row-major flattenings:
//! `J[r, c] = ∂ vecr(F)_r / ∂ vecr(W)_c`.

use crate::error::{Error, Result};
use crate::model::{
    Activation, AttentionSpec, ForwardCache, ParamId, ParamKind, QueryKey, Sequence,
};
use crate::tensor::{commutation, kron, kron_capped, Mat, DEFAULT_ELEMENT_CAP};

/// Per-row Jacobian block `diag(a) − a aᵀ` of the softmax.
pub fn softmax_row_jacobian(a: &[f64]) -> Mat {
    let l = a.len();
    Mat::from_fn(l, l, |j, k| {
        if j == k {
            a[j] - a[j] * a[k]
        } else {
            -a[j] * a[k]
        }
    })
}

/// `∂ vecr(A) / ∂ vecr(T)` for row-wise softmax: block diagonal with
/// blocks `diag(a_i) − a_i a_iᵀ`.
pub fn softmax_jacobian(a: &Mat) -> Mat {
    let l = a.rows();
    let mut j = Mat::zeros(l * l, l * l);
    for i in 0..l {
        j.set_block(i * l, i * l, &softmax_row_jacobian(a.row_slice(i)));
    }
    j
}

/// `∂ vecr(A) / ∂ vecr(T)` for either activation.
pub fn activation_jacobian(activation: Activation, a: &Mat) -> Mat {
    match activation {
        Activation::Softmax => softmax_jacobian(a),
        Activation::Identity => Mat::identity(a.rows() * a.rows()),
    }
}

/// Hessian of the single entry `A_ij` with respect to the row `t_i`:
/// `A_ij (2 a aᵀ + E_jj − diag(a) − e_j aᵀ − a e_jᵀ)`.
pub fn softmax_entry_hessian(a: &[f64], j: usize) -> Mat {
    let l = a.len();
    let aij = a[j];
    Mat::from_fn(l, l, |p, q| {
        let mut v = 2.0 * a[p] * a[q];
        if p == j && q == j {
            v += 1.0;
        }
        if p == q {
            v -= a[p];
        }
        if p == j {
            v -= a[q];
        }
        if q == j {
            v -= a[p];
        }
        aij * v
    })
}

/// Block `D_i` of the softmax second derivative: the `L² x L` stack of
/// entry Hessians `∂²A_ij / ∂t_i²` for `j = 0..L` (rows `j·L + j'`).
pub fn softmax_second_row(a: &Mat, i: usize) -> Mat {
    let l = a.rows();
    let row = a.row_slice(i);
    let mut d = Mat::zeros(l * l, l);
    for j in 0..l {
        d.set_block(j * l, 0, &softmax_entry_hessian(row, j));
    }
    d
}

/// `∂² vecr(A) / ∂ vecr(T)²` as the `L⁴ x L²` matrix whose row
/// `(i L + j) L² + i' L + j'` and column `i'' L + j''` hold
/// `∂² A_ij / ∂T_{i'j'} ∂T_{i''j''}`. Only `i = i' = i''` is nonzero.
pub fn softmax_second(a: &Mat, cap: usize) -> Result<Mat> {
    let l = a.rows();
    let rows = (l as u128).pow(4);
    let requested = rows * (l as u128).pow(2);
    if requested > cap as u128 {
        return Err(Error::SizeLimit {
            what: format!("softmax second derivative (L = {l})"),
            requested,
            cap,
        });
    }
    let l2 = l * l;
    let mut h = Mat::zeros(l2 * l2, l2);
    for i in 0..l {
        let row = a.row_slice(i);
        for j in 0..l {
            let e = softmax_entry_hessian(row, j);
            h.set_block((i * l + j) * l2 + i * l, i * l, &e);
        }
    }
    Ok(h)
}

/// Second derivative for either activation (zero for the identity).
pub fn activation_second(activation: Activation, a: &Mat, cap: usize) -> Result<Mat> {
    match activation {
        Activation::Softmax => softmax_second(a, cap),
        Activation::Identity => {
            let l2 = a.rows() * a.rows();
            let requested = (l2 as u128) * (l2 as u128) * (l2 as u128);
            if requested > cap as u128 {
                return Err(Error::SizeLimit {
                    what: "activation second derivative".into(),
                    requested,
                    cap,
                });
            }
            Ok(Mat::zeros(l2 * l2, l2))
        }
    }
}

/// `∂ vecr(T) / ∂ vecr(X W X')`-style factor `G_P` such that
/// `∂ vecr(T^h) / ∂ vecr(P) = (X ⊗ X) G_P`. Shape `d_v² x size(P)`.
pub fn similarity_factor(spec: &AttentionSpec, id: ParamId) -> Result<Mat> {
    let head = spec
        .heads()
        .get(id.head)
        .ok_or_else(|| Error::UnknownParam(id.to_string()))?;
    let s = spec.similarity_scale();
    let d = spec.d_v();
    match (&head.query_key, id.kind) {
        (QueryKey::Classical { w_k, .. }, ParamKind::Query) => {
            Ok(kron(&Mat::identity(d), w_k)?.scale(s))
        }
        (QueryKey::Classical { w_q, .. }, ParamKind::Key) => {
            let k = w_q.cols();
            Ok(kron(w_q, &Mat::identity(d))?
                .dot(&commutation(k, d)?)
                .scale(s))
        }
        (QueryKey::Single { .. }, ParamKind::QueryKey) => Ok(Mat::identity(d * d).scale(s)),
        (_, ParamKind::Value) => Err(Error::UnknownParam(format!(
            "{id} has no similarity factor"
        ))),
        (QueryKey::Classical { .. }, _) => Err(Error::Parameterization {
            expected: "single-matrix",
        }),
        (QueryKey::Single { .. }, _) => Err(Error::Parameterization {
            expected: "classical",
        }),
    }
}

/// `∂ vecr(F) / ∂ vecr(W_V^h) = (A^h X) ⊗ I_{d_v}`.
pub fn jac_value(cache: &ForwardCache, seq: &Sequence, head: usize) -> Result<Mat> {
    let a = &cache.heads[head].a;
    kron(&a.dot(seq.x()), &Mat::identity(seq.d_v()))
}

/// `(I_L ⊗ W_Vᵀ Xᵀ) ∂A/∂T (X ⊗ X) G_P` for a query, key or single-matrix parameter.
fn jac_similarity_param(
    spec: &AttentionSpec,
    seq: &Sequence,
    cache: &ForwardCache,
    id: ParamId,
) -> Result<Mat> {
    let x = seq.x();
    let l = seq.seq_len();
    let w_v = &spec.head(id.head).w_v;
    let left = kron(&Mat::identity(l), &x.dot(w_v).transpose())?;
    let j = activation_jacobian(spec.activation(), &cache.heads[id.head].a);
    let xx = kron_capped(x, x, DEFAULT_ELEMENT_CAP)?;
    let g = similarity_factor(spec, id)?;
    Ok(left.dot(&j).dot(&xx.dot(&g)))
}

fn require(spec: &AttentionSpec, classical: bool) -> Result<()> {
    match (spec.is_classical(), classical) {
        (true, false) => Err(Error::Parameterization {
            expected: "single-matrix",
        }),
        (false, true) => Err(Error::Parameterization {
            expected: "classical",
        }),
        _ => Ok(()),
    }
}

pub fn jac_query(
    spec: &AttentionSpec,
    seq: &Sequence,
    cache: &ForwardCache,
    head: usize,
) -> Result<Mat> {
    require(spec, true)?;
    jac_similarity_param(spec, seq, cache, ParamId::new(head, ParamKind::Query))
}

pub fn jac_key(
    spec: &AttentionSpec,
    seq: &Sequence,
    cache: &ForwardCache,
    head: usize,
) -> Result<Mat> {
    require(spec, true)?;
    jac_similarity_param(spec, seq, cache, ParamId::new(head, ParamKind::Key))
}

pub fn jac_qk_single(
    spec: &AttentionSpec,
    seq: &Sequence,
    cache: &ForwardCache,
    head: usize,
) -> Result<Mat> {
    require(spec, false)?;
    jac_similarity_param(spec, seq, cache, ParamId::new(head, ParamKind::QueryKey))
}

/// Jacobian of `vecr F` with respect to any parameter.
pub fn jacobian(
    spec: &AttentionSpec,
    seq: &Sequence,
    cache: &ForwardCache,
    id: ParamId,
) -> Result<Mat> {
    if id.head >= spec.num_heads() {
        return Err(Error::UnknownParam(id.to_string()));
    }
    match id.kind {
        ParamKind::Value => jac_value(cache, seq, id.head),
        ParamKind::Query => jac_query(spec, seq, cache, id.head),
        ParamKind::Key => jac_key(spec, seq, cache, id.head),
        ParamKind::QueryKey => jac_qk_single(spec, seq, cache, id.head),
    }
}

/// Jacobians for every parameter of the model, in canonical order.
#[derive(Clone, Debug)]
pub struct JacobianSet {
    pub entries: Vec<(ParamId, Mat)>,
}

impl JacobianSet {
    pub fn new(spec: &AttentionSpec, seq: &Sequence, cache: &ForwardCache) -> Result<Self> {
        let entries = spec
            .param_ids()
            .into_iter()
            .map(|id| Ok((id, jacobian(spec, seq, cache, id)?)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self { entries })
    }

    pub fn get(&self, id: ParamId) -> Option<&Mat> {
        self.entries.iter().find(|(p, _)| *p == id).map(|(_, m)| m)
    }

    /// All Jacobians side by side, in canonical parameter order.
    pub fn stacked(&self) -> Mat {
        let parts: Vec<&Mat> = self.entries.iter().map(|(_, m)| m).collect();
        Mat::hstack(&parts).expect("Jacobians share their row count")
    }
}
