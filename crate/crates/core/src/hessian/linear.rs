//! Closed forms for linear self-attention (identity activation), written in
//! terms of the intra-sequence covariance `Σ = XᵀX / L`.

use crate::error::{Error, Result};
use crate::model::{forward, Activation, AttentionSpec, ParamId, Sequence};
use crate::tensor::{commutation, kron, shuffle, Mat};

use super::HessianGrid;

/// Hessian grid `[Q, K, V]` of a single-head linear-attention layer.
///
/// Every outer block carries the prefactor `2L² / (d_v s²)` and the nonzero
/// functional blocks `2 / (d_v s)`, where `s = t √d_k`. All functional
/// diagonal blocks are exact zeros.
pub fn linear_blocks(spec: &AttentionSpec, seq: &Sequence) -> Result<HessianGrid> {
    if spec.activation() != Activation::Identity {
        return Err(Error::Activation {
            expected: "identity",
        });
    }
    if !spec.is_classical() {
        return Err(Error::Parameterization {
            expected: "classical",
        });
    }
    if spec.num_heads() != 1 {
        return Err(Error::Config(
            "closed linear forms cover a single head".into(),
        ));
    }
    let x = seq.x();
    let (l, d) = x.shape();
    let lf = l as f64;
    let w_q = spec.param(ParamId::Q)?;
    let w_k = spec.param(ParamId::K)?;
    let w_v = spec.param(ParamId::V)?;
    let k = w_q.cols();
    let s = 1.0 / spec.similarity_scale();
    let sigma = x.t_dot(x).scale(1.0 / lf);
    let kc = commutation(k, d)?;
    let id_d = Mat::identity(d);

    let outer_pre = 2.0 * lf * lf / (d as f64 * s * s);
    let s_wk = sigma.dot(w_k);
    let s_wq = sigma.dot(w_q);
    let vvt = w_v.dot(&w_v.transpose());
    let s_vvt_s = sigma.dot(&vvt).dot(&sigma);
    let s_wk_wqt_s = s_wk.dot(&w_q.transpose()).dot(&sigma);

    let vv = kron(
        &s_wk_wqt_s.dot(w_q).dot(&w_k.transpose()).dot(&sigma),
        &id_d,
    )?;
    let qq = kron(&sigma, &w_k.t_dot(&s_vvt_s).dot(w_k))?;
    let vq = kron(&s_wk_wqt_s, &w_v.t_dot(&s_wk))?;
    let qk = kron(&s_wq, &w_k.t_dot(&s_vvt_s))?.dot(&kc);
    let kk = kc.t_dot(&kron(&w_q.t_dot(&s_wq), &s_vvt_s)?.dot(&kc));
    let vk = kron(&s_wk_wqt_s.dot(w_q), &w_v.t_dot(&sigma))?.dot(&kc);

    let delta = forward(spec, seq)?.delta;
    let func_pre = 2.0 / (d as f64 * s);
    let shuf = shuffle(d)?;
    let r = kron(&delta.transpose(), &Mat::identity(d * d))?;
    let is = kron(&Mat::identity(l), &shuf)?;
    let r_is = r.dot(&is);
    let f_vq = r_is.dot(&kron(x, &s_wk)?);
    let f_vk = r_is.dot(&kron(&x.dot(w_q), &sigma)?).dot(&kc);
    let dx = delta.t_dot(&kron(x, &w_v.t_dot(&sigma))?);
    let f_qk = kron(&kron(&dx, &id_d)?.dot(&shuf), &Mat::identity(k))?;

    let (nq, nv) = (d * k, d * d);
    let zeros = |r: usize, c: usize| Mat::zeros(r, c);
    let sc = |m: &Mat, p: f64| m.scale(p);

    let outer = vec![
        vec![
            sc(&qq, outer_pre),
            sc(&qk, outer_pre),
            sc(&vq.transpose(), outer_pre),
        ],
        vec![
            sc(&qk.transpose(), outer_pre),
            sc(&kk, outer_pre),
            sc(&vk.transpose(), outer_pre),
        ],
        vec![sc(&vq, outer_pre), sc(&vk, outer_pre), sc(&vv, outer_pre)],
    ];
    let functional = vec![
        vec![
            zeros(nq, nq),
            sc(&f_qk, func_pre),
            sc(&f_vq.transpose(), func_pre),
        ],
        vec![
            sc(&f_qk.transpose(), func_pre),
            zeros(nq, nq),
            sc(&f_vk.transpose(), func_pre),
        ],
        vec![sc(&f_vq, func_pre), sc(&f_vk, func_pre), zeros(nv, nv)],
    ];
    Ok(HessianGrid::from_parts(
        vec![ParamId::Q, ParamId::K, ParamId::V],
        outer,
        functional,
        l,
        d,
        k,
    ))
}
