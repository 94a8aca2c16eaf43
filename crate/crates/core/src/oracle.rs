//! Finite-difference ground truth for Hessians and Jacobians, and the metrics
//! used to compare analytic results against it.

use rayon::prelude::*;
use serde::Serialize;

use crate::error::{shape_err, Error, Result};
use crate::model::{forward, loss_of, AttentionSpec, ParamId, Sequence};
use crate::tensor::{vecr, Mat};

/// Largest parameter count the oracles accept by default.
pub const DEFAULT_PARAM_CAP: usize = 4096;

/// Central-difference step for second derivatives: `ε^(1/4) max(1, |θ|)`,
/// rounded so that `θ ± h` is exactly representable as a displacement.
pub fn hessian_step(theta: f64) -> f64 {
    representable(theta, f64::EPSILON.powf(0.25) * theta.abs().max(1.0))
}

/// Central-difference step for first derivatives: `ε^(1/3) max(1, |θ|)`.
pub fn jacobian_step(theta: f64) -> f64 {
    representable(theta, f64::EPSILON.cbrt() * theta.abs().max(1.0))
}

fn representable(theta: f64, h: f64) -> f64 {
    (theta + h) - theta
}

fn check_cap(n: usize, cap: usize) -> Result<()> {
    if n > cap {
        return Err(Error::OracleCap { requested: n, cap });
    }
    Ok(())
}

fn finite(v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite("oracle loss evaluation"))
    }
}

/// Symmetrized central-difference Hessian of a scalar function.
pub fn fd_hessian_fn<F>(f: F, theta: &[f64], cap: usize) -> Result<Mat>
where
    F: Fn(&[f64]) -> Result<f64> + Sync,
{
    let n = theta.len();
    check_cap(n, cap)?;
    let steps: Vec<f64> = theta.iter().map(|&t| hessian_step(t)).collect();
    let eval = |i: usize, si: f64, j: usize, sj: f64| -> Result<f64> {
        let mut p = theta.to_vec();
        p[i] += si * steps[i];
        p[j] += sj * steps[j];
        finite(f(&p)?)
    };
    let rows: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|i| {
            (0..n)
                .map(|j| {
                    if j < i {
                        return Ok(0.0);
                    }
                    let num =
                        eval(i, 1.0, j, 1.0)? - eval(i, 1.0, j, -1.0)? - eval(i, -1.0, j, 1.0)?
                            + eval(i, -1.0, j, -1.0)?;
                    Ok(num / (4.0 * steps[i] * steps[j]))
                })
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let upper = Mat::from_fn(n, n, |i, j| if j >= i { rows[i][j] } else { rows[j][i] });
    Ok(upper.symmetrized())
}

/// Central-difference Jacobian of a vector function (rows: outputs).
pub fn fd_jacobian_fn<F>(f: F, theta: &[f64], cap: usize) -> Result<Mat>
where
    F: Fn(&[f64]) -> Result<Vec<f64>> + Sync,
{
    let n = theta.len();
    check_cap(n, cap)?;
    let cols: Vec<Vec<f64>> = (0..n)
        .into_par_iter()
        .map(|j| {
            let h = jacobian_step(theta[j]);
            let mut p = theta.to_vec();
            p[j] += h;
            let plus = f(&p)?;
            p[j] = theta[j] - h;
            let minus = f(&p)?;
            plus.iter()
                .zip(&minus)
                .map(|(a, b)| finite((a - b) / (2.0 * h)))
                .collect::<Result<Vec<f64>>>()
        })
        .collect::<Result<Vec<_>>>()?;
    let m = cols.first().map_or(0, Vec::len);
    Ok(Mat::from_fn(m, n, |i, j| cols[j][i]))
}

/// Finite-difference Hessian of the loss over the listed parameters, in
/// the order given (row-major within each parameter).
pub fn fd_hessian(spec: &AttentionSpec, seq: &Sequence, params: &[ParamId]) -> Result<Mat> {
    fd_hessian_capped(spec, seq, params, DEFAULT_PARAM_CAP)
}

pub fn fd_hessian_capped(
    spec: &AttentionSpec,
    seq: &Sequence,
    params: &[ParamId],
    cap: usize,
) -> Result<Mat> {
    let theta = spec.flatten(params)?;
    fd_hessian_fn(|p| loss_of(&spec.with_flat(params, p)?, seq), &theta, cap)
}

/// Finite-difference Jacobian of `vecr F` with respect to one parameter.
pub fn fd_jacobian(spec: &AttentionSpec, seq: &Sequence, param: ParamId) -> Result<Mat> {
    let ids = [param];
    let theta = spec.flatten(&ids)?;
    fd_jacobian_fn(
        |p| Ok(vecr(&forward(&spec.with_flat(&ids, p)?, seq)?.f).into_vec()),
        &theta,
        DEFAULT_PARAM_CAP,
    )
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct OracleReport {
    pub max_abs_error: f64,
    /// `‖A − O‖_F / max(1, ‖O‖_F)`.
    pub rel_frobenius_error: f64,
    pub worst_index: (usize, usize),
    pub analytic_norm: f64,
    pub oracle_norm: f64,
}

impl OracleReport {
    pub fn passes(&self, max_abs: f64) -> bool {
        self.max_abs_error <= max_abs
    }
}

pub fn compare(analytic: &Mat, oracle: &Mat) -> Result<OracleReport> {
    if analytic.shape() != oracle.shape() {
        return Err(shape_err(
            "compare",
            format!("{}x{}", oracle.rows(), oracle.cols()),
            format!("{}x{}", analytic.rows(), analytic.cols()),
        ));
    }
    let diff = analytic - oracle;
    let (mut worst, mut max_abs) = ((0, 0), 0.0);
    for r in 0..diff.rows() {
        for (c, v) in diff.row_slice(r).iter().enumerate() {
            if v.abs() > max_abs {
                max_abs = v.abs();
                worst = (r, c);
            }
        }
    }
    let oracle_norm = oracle.frobenius_norm();
    Ok(OracleReport {
        max_abs_error: max_abs,
        rel_frobenius_error: diff.frobenius_norm() / oracle_norm.max(1.0),
        worst_index: worst,
        analytic_norm: analytic.frobenius_norm(),
        oracle_norm,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic_recovers_twice_the_matrix() {
        let m = Mat::from_rows(&[[2.0, -0.5, 0.1], [-0.5, 1.0, 0.3], [0.1, 0.3, -1.5]]);
        let f = |p: &[f64]| {
            let v = Mat::column(p);
            Ok(v.t_dot(&m.dot(&v))[(0, 0)])
        };
        // Small |θ| keeps the loss values, and so their rounding, small.
        let h = fd_hessian_fn(f, &[0.1, -0.2, 0.05], DEFAULT_PARAM_CAP).unwrap();
        assert!((&h - &m.scale(2.0)).max_abs() <= 1e-8);
        assert_eq!(h.asymmetry(), 0.0);
    }

    #[test]
    fn inert_direction_gives_zero_row() {
        let f = |p: &[f64]| Ok(p[0] * p[0] * p[0]);
        let h = fd_hessian_fn(f, &[0.7, 4.0], DEFAULT_PARAM_CAP).unwrap();
        assert_eq!(h[(1, 1)], 0.0);
        assert_eq!(h[(0, 1)], 0.0);
        assert!((h[(0, 0)] - 6.0 * 0.7).abs() < 1e-6);
    }

    #[test]
    fn caps_and_non_finite_values_are_errors() {
        let f = |_: &[f64]| Ok(0.0);
        assert!(matches!(
            fd_hessian_fn(f, &[0.0; 5], 4),
            Err(Error::OracleCap {
                requested: 5,
                cap: 4
            })
        ));
        let g = |p: &[f64]| Ok(1.0 / (p[0] - p[0]));
        assert!(matches!(
            fd_hessian_fn(g, &[1.0], 4),
            Err(Error::NonFinite(_))
        ));
    }

    #[test]
    fn compare_examples() {
        let a = Mat::from_rows(&[[1.0, 2.0], [3.0, 4.0]]);
        let r = compare(&a, &a).unwrap();
        assert_eq!((r.max_abs_error, r.rel_frobenius_error), (0.0, 0.0));

        let mut b = a.clone();
        b[(1, 0)] += 1e-3;
        let r = compare(&b, &a).unwrap();
        assert!((r.max_abs_error - 1e-3).abs() < 1e-15);
        assert_eq!(r.worst_index, (1, 0));
        assert!(compare(&a, &Mat::zeros(1, 2)).is_err());
    }

    #[test]
    fn jacobian_of_linear_map_is_exact() {
        let m = Mat::from_rows(&[[1.0, 2.0], [-3.0, 0.5], [0.0, 1.0]]);
        let f = |p: &[f64]| Ok(m.dot(&Mat::column(p)).into_vec());
        let j = fd_jacobian_fn(f, &[0.4, -0.2], DEFAULT_PARAM_CAP).unwrap();
        assert!((&j - &m).max_abs() <= 1e-10);
    }

    #[test]
    fn steps_follow_policy() {
        let h = hessian_step(0.0);
        assert!((h - f64::EPSILON.powf(0.25)).abs() < 1e-18);
        // Rounding θ + h moves the step by at most ulp(θ), a relative change below 1e-9 here.
        assert!((hessian_step(100.0) / (100.0 * f64::EPSILON.powf(0.25)) - 1.0).abs() < 1e-9);
        assert!((jacobian_step(-4.0) / (4.0 * f64::EPSILON.cbrt()) - 1.0).abs() < 1e-9);
        let theta = 0.37;
        let h = jacobian_step(theta);
        assert_eq!((theta + h) - theta, h);
    }
}
