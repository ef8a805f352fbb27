//! Value-error bounds for the OTTD fixed point and the minimax reference
//! parameter they are stated against.

use std::fmt;

use minilp::{ComparisonOp, OptimizationDirection, Problem};

use crate::data::{EmpiricalModel, NisModel};
use crate::error::{Error, Result};
use crate::learners::{fixed_point_nis, fixed_point_ottd};
use crate::mdp::{self, Mdp, Policy};
use crate::numerics::{self, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum NormKind {
    Infinity,
    DPiWeighted,
}

#[derive(Debug, Clone)]
pub struct BoundReport {
    pub eps_stat: f64,
    pub eps_projection: f64,
    pub eps_approx: f64,
    pub total: f64,
    pub delta: f64,
    pub norm_kind: NormKind,
    pub theta_star: Vector,
    /// Error of the learned fixed point in the same norm, when ground truth is known.
    pub actual_error: Option<f64>,
}

impl BoundReport {
    fn new(
        eps_stat: f64,
        eps_projection: f64,
        eps_approx: f64,
        delta: f64,
        norm_kind: NormKind,
        theta_star: Vector,
        actual_error: Option<f64>,
    ) -> Self {
        Self {
            eps_stat,
            eps_projection,
            eps_approx,
            total: eps_stat + eps_projection + eps_approx,
            delta,
            norm_kind,
            theta_star,
            actual_error,
        }
    }

    /// `actual_error <= total`, if the actual error is known.
    pub fn holds(&self) -> Option<bool> {
        self.actual_error.map(|e| e <= self.total)
    }
}

impl fmt::Display for BoundReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let norm = match self.norm_kind {
            NormKind::Infinity => "infinity",
            NormKind::DPiWeighted => "d_pi-weighted",
        };
        writeln!(f, "norm            {norm}")?;
        writeln!(f, "delta           {}", self.delta)?;
        writeln!(f, "eps_stat        {:.6e}", self.eps_stat)?;
        writeln!(f, "eps_projection  {:.6e}", self.eps_projection)?;
        writeln!(f, "eps_approx      {:.6e}", self.eps_approx)?;
        write!(f, "total           {:.6e}", self.total)?;
        if let Some(e) = self.actual_error {
            write!(f, "\nactual_error    {e:.6e}")?;
        }
        Ok(())
    }
}

/// `argmin_θ ‖Φθ - q‖∞` as the linear program `min t` subject to
/// `-t ≤ Φθ - q ≤ t`.
pub fn minimax_theta(phi: &Matrix, q: &Vector) -> Result<Vector> {
    let (n, d) = phi.shape();
    if q.len() != n {
        return Err(Error::shape("q does not match the feature rows"));
    }
    let mut lp = Problem::new(OptimizationDirection::Minimize);
    let theta: Vec<_> = (0..d)
        .map(|_| lp.add_var(0.0, (f64::NEG_INFINITY, f64::INFINITY)))
        .collect();
    let t = lp.add_var(1.0, (0.0, f64::INFINITY));
    for i in 0..n {
        let row: Vec<_> = theta.iter().enumerate().map(|(j, &v)| (v, phi[(i, j)])).collect();
        let mut upper = row.clone();
        upper.push((t, -1.0));
        lp.add_constraint(upper.as_slice(), ComparisonOp::Le, q[i]);
        let mut lower = row;
        lower.push((t, 1.0));
        lp.add_constraint(lower.as_slice(), ComparisonOp::Ge, q[i]);
    }
    let sol = lp
        .solve()
        .map_err(|e| Error::NoConvergence(format!("Chebyshev fit: {e}")))?;
    Ok(Vector::from_iterator(d, theta.iter().map(|&v| sol[v])))
}

/// `‖Φθ - q‖∞` at the minimax parameter.
pub fn minimax_residual(phi: &Matrix, q: &Vector) -> Result<f64> {
    let theta = minimax_theta(phi, q)?;
    Ok((phi * theta - q).amax())
}

fn check_delta(delta: f64) -> Result<()> {
    if !(delta > 0.0 && delta <= 1.0) {
        return Err(Error::invalid(format!("delta must lie in (0,1], got {delta}")));
    }
    Ok(())
}

struct Shared {
    phi_m_pinv: Matrix,
    perp: Matrix,
    min_n: f64,
    k: f64,
    n_actions: f64,
    gamma: f64,
}

fn shared(model: &EmpiricalModel, q_true: &Vector) -> Result<Shared> {
    let phi = model.phi();
    if q_true.len() != phi.nrows() {
        return Err(Error::shape("q does not match the feature rows"));
    }
    let min_n = model.min_count();
    if min_n == 0 {
        return Err(Error::Degenerate("a seen pair has zero count".into()));
    }
    let m_pinv = numerics::pinv_default(model.m())?;
    let d = phi.ncols();
    Ok(Shared {
        phi_m_pinv: phi * &m_pinv,
        perp: Matrix::identity(d, d) - &m_pinv * model.m(),
        min_n: min_n as f64,
        k: model.k() as f64,
        n_actions: model.n_actions() as f64,
        gamma: model.gamma(),
    })
}

/// Infinity-norm bound on `‖Φθ*_TD - q_π‖∞` for OTTD with sampled target
/// actions. The statistical term uses Hoeffding constants with the `√2`.
pub fn bound_ottd(model: &EmpiricalModel, q_true: &Vector, delta: f64) -> Result<BoundReport> {
    check_delta(delta)?;
    let sh = shared(model, q_true)?;
    let phi = model.phi();
    let c = numerics::inf_norm(&sh.phi_m_pinv);
    let g = sh.gamma;
    let eps_stat = c / (1.0 - g).powi(2)
        * ((2.0 * sh.k * sh.n_actions / delta).ln() / (2.0 * sh.min_n)).sqrt();
    let theta_star = minimax_theta(phi, q_true)?;
    let (eps_projection, eps_approx) = proj_approx_inf(phi, &sh, &theta_star, q_true, c);
    let actual = fixed_point_ottd(model.system(), &Vector::zeros(phi.ncols()))
        .map(|fp| (phi * fp.theta - q_true).amax())
        .ok();
    Ok(BoundReport::new(
        eps_stat,
        eps_projection,
        eps_approx,
        delta,
        NormKind::Infinity,
        theta_star,
        actual,
    ))
}

fn proj_approx_inf(phi: &Matrix, sh: &Shared, theta_star: &Vector, q: &Vector, c: f64) -> (f64, f64) {
    let g = sh.gamma;
    let proj = c / (1.0 - g) * (phi * (&sh.perp * theta_star)).amax();
    let approx = 2.0 * c / (1.0 - g) * (phi * theta_star - q).amax();
    (proj, approx)
}

/// `‖Φθ*_TD - q_π‖∞ ≤ 2/(1-γ) · inf_θ ‖Φθ - q_π‖∞` for expected updates.
/// Returns `(left, right)`.
pub fn bound_expected(phi: &Matrix, q_true: &Vector, mdp: &Mdp, pi: &Policy) -> Result<(f64, f64)> {
    let gamma = mdp.gamma();
    let right = 2.0 / (1.0 - gamma) * minimax_residual(phi, q_true)?;
    let p_pi = mdp::state_action_transition(mdp, pi)?;
    let phi_pinv = numerics::pinv_default(phi)?;
    let n = phi.nrows();
    let w = &p_pi * phi * &phi_pinv;
    let x = numerics::linear_solve(&(Matrix::identity(n, n) - gamma * w), mdp.reward())
        .map_err(|e| match e {
            Error::Singular(m) => Error::Nonexistence(m),
            o => o,
        })?;
    let theta = phi_pinv * x;
    let left = (phi * theta - q_true).amax();
    Ok((left, right))
}

/// Episodic NIS bound: the statistical term uses the ratio-concentration
/// constants with `ρ_M` taken over the observed ratios.
pub fn bound_nis_episodic(
    model: &EmpiricalModel,
    nis: &NisModel,
    q_true: &Vector,
    delta: f64,
) -> Result<BoundReport> {
    check_delta(delta)?;
    let sh = shared(model, q_true)?;
    let phi = model.phi();
    let c = numerics::inf_norm(&sh.phi_m_pinv);
    let g = sh.gamma;
    let rho_m = nis.rho_m();
    let eps_stat = c * rho_m * (rho_m - 1.0).max(1.0) / ((1.0 - g).powi(2) * sh.min_n.sqrt())
        * (4.0 * sh.k * sh.n_actions / delta).ln();
    let theta_star = minimax_theta(phi, q_true)?;
    let (eps_projection, eps_approx) = proj_approx_inf(phi, &sh, &theta_star, q_true, c);
    let actual = fixed_point_nis(nis, &Vector::zeros(phi.ncols()))
        .map(|fp| (phi * fp.theta - q_true).amax())
        .ok();
    Ok(BoundReport::new(
        eps_stat,
        eps_projection,
        eps_approx,
        delta,
        NormKind::Infinity,
        theta_star,
        actual,
    ))
}

/// `‖x‖_{D_π} = sqrt(Σ d_π(i) x_i²)`.
pub fn d_norm(x: &Vector, d_pi: &Vector) -> f64 {
    x.iter().zip(d_pi.iter()).map(|(v, w)| w * v * v).sum::<f64>().sqrt()
}

/// Induced norm `‖D^{1/2} A (D^{1/2})⁺‖₂`.
pub fn d_matrix_norm(a: &Matrix, d_pi: &Vector) -> f64 {
    let sq = d_pi.map(f64::sqrt);
    let inv = sq.map(|x| if x > 0.0 { 1.0 / x } else { 0.0 });
    let scaled = Matrix::from_diagonal(&sq) * a * Matrix::from_diagonal(&inv);
    numerics::spectral_norm(&scaled)
}

/// `argmin_θ ‖Φθ - q‖_{D_π}` (weighted least squares).
pub fn weighted_least_squares(phi: &Matrix, q: &Vector, d_pi: &Vector) -> Result<Vector> {
    let sq = Matrix::from_diagonal(&d_pi.map(f64::sqrt));
    Ok(numerics::pinv_default(&(&sq * phi))? * (sq * q))
}

/// Continuing-task bound under the stationary distribution `d_π` of `P_π`.
///
/// Loop transitions replace the true next pair of the final state-action of a
/// truncated trajectory. On those pairs the estimation error is bounded by
/// `1 + 2γ/(1-γ) = (1+γ)/(1-γ)` (reward plus transition), which enters the
/// statistical term as `C(1+γ)√d_π(L)/(1-γ)²`, `L` being the looped pairs.
pub fn bound_continuing(
    model: &EmpiricalModel,
    nis: &NisModel,
    q_true: &Vector,
    mdp: &Mdp,
    pi: &Policy,
    delta: f64,
) -> Result<BoundReport> {
    check_delta(delta)?;
    let sh = shared(model, q_true)?;
    let phi = model.phi();
    let g = sh.gamma;
    let p_pi = mdp::state_action_transition(mdp, pi)?;
    let d_pi = numerics::stationary_distribution(&p_pi)?;

    let c = d_matrix_norm(&(&sh.phi_m_pinv * model.h()), &d_pi);
    let p_norm = d_matrix_norm(nis.p_hat_nis(), &d_pi);
    let rho_m = nis.rho_m();

    let na = model.n_actions();
    let loop_mass: f64 = model
        .seen_pairs()
        .iter()
        .zip(model.has_loop())
        .filter(|(_, &l)| l)
        .map(|(&(s, a), _)| d_pi[s * na + a])
        .sum();
    let sampling = c * rho_m * (rho_m - 1.0).max(1.0) / ((1.0 - g).powi(2) * sh.min_n.sqrt())
        * (4.0 * sh.k * sh.n_actions / delta).ln();
    let looping = c * (1.0 + g) * loop_mass.sqrt() / (1.0 - g).powi(2);
    let eps_stat = sampling + looping;

    let theta_star = weighted_least_squares(phi, q_true, &d_pi)?;
    let eps_projection =
        c * (1.0 + g * p_norm) / (1.0 - g) * d_norm(&(phi * (&sh.perp * &theta_star)), &d_pi);
    let eps_approx = c * (2.0 + g * p_norm) / (1.0 - g) * d_norm(&(phi * &theta_star - q_true), &d_pi);
    let actual = fixed_point_nis(nis, &Vector::zeros(phi.ncols()))
        .map(|fp| d_norm(&(phi * fp.theta - q_true), &d_pi))
        .ok();
    Ok(BoundReport::new(
        eps_stat,
        eps_projection,
        eps_approx,
        delta,
        NormKind::DPiWeighted,
        theta_star,
        actual,
    ))
}
