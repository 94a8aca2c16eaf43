//! The generalized single-layer self-attention map `F = a(T(X)) X W_V`,
//! its multi-head sum, and the square loss.

use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{shape_err, Error, Result};
use crate::tensor::{vecr, Mat};

/// Token embeddings `X` and labels `Y`, both `L x d_v`.
#[derive(Clone, Debug, PartialEq)]
pub struct Sequence {
    x: Mat,
    y: Mat,
}

impl Sequence {
    pub fn new(x: Mat, y: Mat) -> Result<Self> {
        if x.shape() != y.shape() {
            return Err(shape_err(
                "Sequence::new",
                format!("Y shaped like X ({}x{})", x.rows(), x.cols()),
                format!("{}x{}", y.rows(), y.cols()),
            ));
        }
        if !x.is_finite() || !y.is_finite() {
            return Err(Error::NonFinite("Sequence"));
        }
        Ok(Self { x, y })
    }

    pub fn x(&self) -> &Mat {
        &self.x
    }

    pub fn y(&self) -> &Mat {
        &self.y
    }

    pub fn seq_len(&self) -> usize {
        self.x.rows()
    }

    pub fn d_v(&self) -> usize {
        self.x.cols()
    }

    pub fn with_x(&self, x: Mat) -> Result<Self> {
        Self::new(x, self.y.clone())
    }

    pub fn with_y(&self, y: Mat) -> Result<Self> {
        Self::new(self.x.clone(), y)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    /// Row-wise softmax.
    #[default]
    Softmax,
    /// No activation: `A = T` (linear self-attention).
    Identity,
}

#[derive(Clone, Debug, PartialEq)]
pub enum QueryKey {
    /// `T = X W_Q W_Kᵀ Xᵀ / (t √d_k)` with `W_Q, W_K` of shape `d_v x d_k`.
    Classical { w_q: Mat, w_k: Mat },
    /// `T = X W_QK Xᵀ / t` with `W_QK` of shape `d_v x d_v`.
    Single { w_qk: Mat },
}

#[derive(Clone, Debug, PartialEq)]
pub struct HeadParams {
    pub query_key: QueryKey,
    pub w_v: Mat,
}

impl HeadParams {
    pub fn classical(w_q: Mat, w_k: Mat, w_v: Mat) -> Self {
        Self {
            query_key: QueryKey::Classical { w_q, w_k },
            w_v,
        }
    }

    pub fn single(w_qk: Mat, w_v: Mat) -> Self {
        Self {
            query_key: QueryKey::Single { w_qk },
            w_v,
        }
    }

    pub fn d_v(&self) -> usize {
        self.w_v.rows()
    }

    pub fn is_classical(&self) -> bool {
        matches!(self.query_key, QueryKey::Classical { .. })
    }
}

/// Which weight matrix a Hessian row/column block belongs to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamKind {
    Query,
    Key,
    Value,
    QueryKey,
}

impl ParamKind {
    pub fn symbol(self) -> &'static str {
        match self {
            ParamKind::Query => "Q",
            ParamKind::Key => "K",
            ParamKind::Value => "V",
            ParamKind::QueryKey => "QK",
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId {
    pub head: usize,
    pub kind: ParamKind,
}

impl ParamId {
    pub const Q: ParamId = ParamId::new(0, ParamKind::Query);
    pub const K: ParamId = ParamId::new(0, ParamKind::Key);
    pub const V: ParamId = ParamId::new(0, ParamKind::Value);
    pub const QK: ParamId = ParamId::new(0, ParamKind::QueryKey);

    pub const fn new(head: usize, kind: ParamKind) -> Self {
        Self { head, kind }
    }
}

impl fmt::Display for ParamId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        if self.head == 0 {
            write!(f, "{}", self.kind.symbol())
        } else {
            write!(f, "h{}.{}", self.head, self.kind.symbol())
        }
    }
}

/// Weights plus the variant flags that select which attention model is meant.
#[derive(Clone, Debug, PartialEq)]
pub struct AttentionSpec {
    heads: Vec<HeadParams>,
    activation: Activation,
    temperature: f64,
}

impl AttentionSpec {
    pub fn classical(w_q: Mat, w_k: Mat, w_v: Mat) -> Result<Self> {
        Self::multi_head(vec![HeadParams::classical(w_q, w_k, w_v)])
    }

    pub fn single(w_qk: Mat, w_v: Mat) -> Result<Self> {
        Self::multi_head(vec![HeadParams::single(w_qk, w_v)])
    }

    /// Heads are summed: `F = Σ_h A^h X W_V^h`.
    pub fn multi_head(heads: Vec<HeadParams>) -> Result<Self> {
        let spec = Self {
            heads,
            activation: Activation::Softmax,
            temperature: 1.0,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn with_activation(mut self, activation: Activation) -> Self {
        self.activation = activation;
        self
    }

    pub fn with_temperature(mut self, t: f64) -> Result<Self> {
        if !(t > 0.0 && t.is_finite()) {
            return Err(Error::Temperature(t));
        }
        self.temperature = t;
        Ok(self)
    }

    fn validate(&self) -> Result<()> {
        let first = self
            .heads
            .first()
            .ok_or_else(|| Error::Config("at least one head is required".into()))?;
        let d_v = first.w_v.rows();
        let classical = first.is_classical();
        let d_k = self.d_k_of(first);
        for (h, head) in self.heads.iter().enumerate() {
            if head.w_v.shape() != (d_v, d_v) {
                return Err(shape_err(
                    "AttentionSpec",
                    format!("W_V of head {h} to be {d_v}x{d_v}"),
                    format!("{}x{}", head.w_v.rows(), head.w_v.cols()),
                ));
            }
            if head.is_classical() != classical {
                return Err(Error::Config(
                    "all heads must share one parameterization".into(),
                ));
            }
            match &head.query_key {
                QueryKey::Classical { w_q, w_k } => {
                    for (name, w) in [("W_Q", w_q), ("W_K", w_k)] {
                        if w.shape() != (d_v, d_k) {
                            return Err(shape_err(
                                "AttentionSpec",
                                format!("{name} of head {h} to be {d_v}x{d_k}"),
                                format!("{}x{}", w.rows(), w.cols()),
                            ));
                        }
                    }
                }
                QueryKey::Single { w_qk } => {
                    if w_qk.shape() != (d_v, d_v) {
                        return Err(shape_err(
                            "AttentionSpec",
                            format!("W_QK of head {h} to be {d_v}x{d_v}"),
                            format!("{}x{}", w_qk.rows(), w_qk.cols()),
                        ));
                    }
                }
            }
            let all_finite = head.w_v.is_finite()
                && match &head.query_key {
                    QueryKey::Classical { w_q, w_k } => w_q.is_finite() && w_k.is_finite(),
                    QueryKey::Single { w_qk } => w_qk.is_finite(),
                };
            if !all_finite {
                return Err(Error::NonFinite("attention weights"));
            }
        }
        Ok(())
    }

    fn d_k_of(&self, head: &HeadParams) -> usize {
        match &head.query_key {
            QueryKey::Classical { w_q, .. } => w_q.cols(),
            QueryKey::Single { w_qk } => w_qk.cols(),
        }
    }

    pub fn heads(&self) -> &[HeadParams] {
        &self.heads
    }

    pub fn head(&self, h: usize) -> &HeadParams {
        &self.heads[h]
    }

    pub fn num_heads(&self) -> usize {
        self.heads.len()
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn d_v(&self) -> usize {
        self.heads[0].d_v()
    }

    /// Key dimension; for the single-matrix parameterization this is `d_v`.
    pub fn d_k(&self) -> usize {
        self.d_k_of(&self.heads[0])
    }

    pub fn is_classical(&self) -> bool {
        self.heads[0].is_classical()
    }

    /// Factor multiplying the bilinear form inside `T`: `1/(t √d_k)` for the
    /// classical parameterization and `1/t` for the single matrix.
    pub fn similarity_scale(&self) -> f64 {
        if self.is_classical() {
            1.0 / (self.temperature * (self.d_k() as f64).sqrt())
        } else {
            1.0 / self.temperature
        }
    }

    /// Canonical parameter order: per head `[Q, K, V]`, or `[QK, V]` for the
    /// single-matrix parameterization.
    pub fn param_ids(&self) -> Vec<ParamId> {
        let kinds: &[ParamKind] = if self.is_classical() {
            &[ParamKind::Query, ParamKind::Key, ParamKind::Value]
        } else {
            &[ParamKind::QueryKey, ParamKind::Value]
        };
        (0..self.heads.len())
            .flat_map(|h| kinds.iter().map(move |&k| ParamId::new(h, k)))
            .collect()
    }

    pub fn param(&self, id: ParamId) -> Result<&Mat> {
        let head = self
            .heads
            .get(id.head)
            .ok_or_else(|| Error::UnknownParam(id.to_string()))?;
        match (id.kind, &head.query_key) {
            (ParamKind::Value, _) => Ok(&head.w_v),
            (ParamKind::Query, QueryKey::Classical { w_q, .. }) => Ok(w_q),
            (ParamKind::Key, QueryKey::Classical { w_k, .. }) => Ok(w_k),
            (ParamKind::QueryKey, QueryKey::Single { w_qk }) => Ok(w_qk),
            _ => Err(Error::UnknownParam(id.to_string())),
        }
    }

    fn param_mut(&mut self, id: ParamId) -> Result<&mut Mat> {
        let name = id.to_string();
        let head = self
            .heads
            .get_mut(id.head)
            .ok_or_else(|| Error::UnknownParam(name.clone()))?;
        match (id.kind, &mut head.query_key) {
            (ParamKind::Value, _) => Ok(&mut head.w_v),
            (ParamKind::Query, QueryKey::Classical { w_q, .. }) => Ok(w_q),
            (ParamKind::Key, QueryKey::Classical { w_k, .. }) => Ok(w_k),
            (ParamKind::QueryKey, QueryKey::Single { w_qk }) => Ok(w_qk),
            _ => Err(Error::UnknownParam(name)),
        }
    }

    pub fn param_len(&self, id: ParamId) -> Result<usize> {
        Ok(self.param(id)?.len())
    }

    /// Concatenated row-major flattening of the listed parameters.
    pub fn flatten(&self, ids: &[ParamId]) -> Result<Vec<f64>> {
        let mut out = Vec::new();
        for &id in ids {
            out.extend_from_slice(self.param(id)?.as_slice());
        }
        Ok(out)
    }

    /// Copy of `self` with the listed parameters overwritten from `theta`.
    pub fn with_flat(&self, ids: &[ParamId], theta: &[f64]) -> Result<Self> {
        let mut spec = self.clone();
        let mut offset = 0;
        for &id in ids {
            let m = spec.param_mut(id)?;
            let n = m.len();
            if offset + n > theta.len() {
                return Err(shape_err(
                    "with_flat",
                    "enough parameters",
                    format!("{}", theta.len()),
                ));
            }
            m.as_mut_slice().copy_from_slice(&theta[offset..offset + n]);
            offset += n;
        }
        if offset != theta.len() {
            return Err(shape_err(
                "with_flat",
                format!("{offset} parameters"),
                format!("{}", theta.len()),
            ));
        }
        Ok(spec)
    }

    pub fn with_param(&self, id: ParamId, value: Mat) -> Result<Self> {
        let mut spec = self.clone();
        let slot = spec.param_mut(id)?;
        if slot.shape() != value.shape() {
            return Err(shape_err(
                "with_param",
                format!("{}x{}", slot.rows(), slot.cols()),
                format!("{}x{}", value.rows(), value.cols()),
            ));
        }
        *slot = value;
        Ok(spec)
    }
}

/// Intermediates of one head.
#[derive(Clone, Debug)]
pub struct HeadCache {
    /// Similarity `T`, `L x L`.
    pub t: Mat,
    /// Attention `A = a(T)`, `L x L`.
    pub a: Mat,
    /// This head's output `A X W_V`.
    pub f: Mat,
}

/// Forward intermediates shared by every derivative formula.
#[derive(Clone, Debug)]
pub struct ForwardCache {
    pub heads: Vec<HeadCache>,
    /// Output `F = Σ_h A^h X W_V^h`.
    pub f: Mat,
    /// Residual `vecr(F - Y)` as an `L d_v x 1` column.
    pub delta: Mat,
}

impl ForwardCache {
    pub fn a(&self) -> &Mat {
        &self.heads[0].a
    }

    pub fn t(&self) -> &Mat {
        &self.heads[0].t
    }
}

fn check_dims(spec: &AttentionSpec, seq: &Sequence) -> Result<()> {
    if spec.d_v() != seq.d_v() {
        return Err(shape_err(
            "attention",
            format!("d_v = {}", spec.d_v()),
            format!("X with {} columns", seq.d_v()),
        ));
    }
    Ok(())
}

/// Similarity matrix `T^h` of one head.
pub fn similarity(spec: &AttentionSpec, seq: &Sequence, head: usize) -> Result<Mat> {
    check_dims(spec, seq)?;
    let x = seq.x();
    let p = spec
        .heads
        .get(head)
        .ok_or_else(|| Error::UnknownParam(format!("head {head}")))?;
    let bilinear = match &p.query_key {
        QueryKey::Classical { w_q, w_k } => {
            let xq = x * w_q;
            let xk = x * w_k;
            xq.dot(&xk.transpose())
        }
        QueryKey::Single { w_qk } => &(x * w_qk) * &x.transpose(),
    };
    Ok(bilinear.scale(spec.similarity_scale()))
}

/// Row-wise softmax (max-subtracted) or the identity.
pub fn attend(activation: Activation, t: &Mat) -> Mat {
    match activation {
        Activation::Identity => t.clone(),
        Activation::Softmax => {
            let mut a = t.clone();
            let cols = a.cols();
            for row in a.as_mut_slice().chunks_mut(cols) {
                let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                let mut sum = 0.0;
                for v in row.iter_mut() {
                    *v = (*v - max).exp();
                    sum += *v;
                }
                for v in row.iter_mut() {
                    *v /= sum;
                }
            }
            a
        }
    }
}

pub fn forward(spec: &AttentionSpec, seq: &Sequence) -> Result<ForwardCache> {
    check_dims(spec, seq)?;
    let x = seq.x();
    let mut heads = Vec::with_capacity(spec.num_heads());
    let mut f = Mat::zeros(x.rows(), x.cols());
    for h in 0..spec.num_heads() {
        let t = similarity(spec, seq, h)?;
        let a = attend(spec.activation, &t);
        let fh = &(&a * x) * &spec.heads[h].w_v;
        f += &fh;
        heads.push(HeadCache { t, a, f: fh });
    }
    let delta = vecr(&(&f - seq.y()));
    Ok(ForwardCache { heads, f, delta })
}

/// `‖F − Y‖_F² / (L d_v)`.
pub fn loss(cache: &ForwardCache, seq: &Sequence) -> f64 {
    let n = (seq.seq_len() * seq.d_v()) as f64;
    cache.delta.as_slice().iter().map(|r| r * r).sum::<f64>() / n
}

/// Convenience: forward pass followed by [`loss`].
pub fn loss_of(spec: &AttentionSpec, seq: &Sequence) -> Result<f64> {
    Ok(loss(&forward(spec, seq)?, seq))
}

/// Loss curvature scale `2 / (L d_v)`.
pub fn loss_scale(seq: &Sequence) -> f64 {
    2.0 / (seq.seq_len() * seq.d_v()) as f64
}

/// Gradient of the loss w.r.t. `vecr(F)`, as a column.
pub fn loss_gradient(cache: &ForwardCache, seq: &Sequence) -> Mat {
    cache.delta.scale(loss_scale(seq))
}

/// Hessian of the loss w.r.t. `vecr(F)`.
pub fn loss_hessian(seq: &Sequence) -> Mat {
    Mat::identity(seq.seq_len() * seq.d_v()).scale(loss_scale(seq))
}
