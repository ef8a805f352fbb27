//! Closed-form limits of OTTD and OTTD-NIS.

use crate::data::{LinearSystem, NisModel};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

/// A closed-form limit together with the norm condition it assumes.
#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub theta: Vector,
    /// `‖N M†‖∞`.
    pub w_inf_norm: f64,
    /// `‖N M†‖ ≤ 1` in the infinity or spectral norm.
    pub condition_satisfied: bool,
}

const NORM_SLACK: f64 = 1e-10;

fn w_condition(w: &Matrix) -> (f64, bool) {
    let inf = numerics::inf_norm(w);
    let ok = inf <= 1.0 + NORM_SLACK || numerics::spectral_norm(w) <= 1.0 + NORM_SLACK;
    (inf, ok)
}

fn solve_bellman(a: &Matrix, b: &Vector) -> Result<Vector> {
    numerics::linear_solve(a, b).map_err(|e| match e {
        Error::Singular(msg) => Error::Nonexistence(msg),
        other => other,
    })
}

/// Limit of OTTD from `θ₀`:
/// `M†(I-γW)⁻¹R + (I - M†M + M†(I-γW)⁻¹γN(I-M†M))θ₀` with `W = NM†`.
pub fn fixed_point_ottd(sys: &LinearSystem, theta0: &Vector) -> Result<FixedPoint> {
    let d = sys.dim();
    if theta0.len() != d {
        return Err(Error::shape("theta0 does not match the feature dimension"));
    }
    let m_pinv = numerics::pinv_default(&sys.m)?;
    let w = &sys.n * &m_pinv;
    let (w_inf_norm, condition_satisfied) = w_condition(&w);
    let k = sys.k();
    let a = Matrix::identity(k, k) - sys.gamma * &w;
    let perp = Matrix::identity(d, d) - &m_pinv * &sys.m;
    let perp0 = &perp * theta0;
    let rhs = &sys.r + sys.gamma * (&sys.n * &perp0);
    let x = solve_bellman(&a, &rhs)?;
    Ok(FixedPoint {
        theta: &m_pinv * x + perp0,
        w_inf_norm,
        condition_satisfied,
    })
}

/// Limit of OTTD-NIS: `M†(I - γN_NIS M†)⁻¹R + (I - M†M)θ₀`.
pub fn fixed_point_nis(nis: &NisModel, theta0: &Vector) -> Result<FixedPoint> {
    let sys = nis.system();
    if theta0.len() != sys.dim() {
        return Err(Error::shape("theta0 does not match the feature dimension"));
    }
    let m_pinv = numerics::pinv_default(&sys.m)?;
    let w = &sys.n * &m_pinv;
    let (w_inf_norm, condition_satisfied) = w_condition(&w);
    let k = sys.k();
    let d = sys.dim();
    let a = Matrix::identity(k, k) - sys.gamma * &w;
    let x = solve_bellman(&a, &sys.r)?;
    let perp = Matrix::identity(d, d) - &m_pinv * &sys.m;
    Ok(FixedPoint {
        theta: &m_pinv * x + perp * theta0,
        w_inf_norm,
        condition_satisfied,
    })
}

/// Projected TD solution `(MᵀD(M-γN))⁻¹MᵀDR` for systems with `d ≤ k`.
/// A singular system has no fixed point.
pub fn fixed_point_projected(sys: &LinearSystem) -> Result<Vector> {
    let mtd = sys.m.transpose() * Matrix::from_diagonal(&sys.d);
    let a = &mtd * sys.g();
    let b = &mtd * &sys.r;
    let scale = (numerics::inf_norm(&mtd) * numerics::inf_norm(&sys.g())).max(f64::MIN_POSITIVE);
    let smin = numerics::singular_values(&a).min();
    if smin.is_nan() || smin <= 1e-10 * scale {
        return Err(Error::Nonexistence(format!(
            "M^T D (M - gamma N) is singular (smallest singular value {smin:e})"
        )));
    }
    solve_bellman(&a, &b)
}
