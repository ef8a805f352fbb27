//! Convergence conditions, the target-window threshold `m̄`, iteration
//! matrices and the convergence-rate metric.

use std::fmt;

use crate::data::LinearSystem;
use crate::error::{Error, Result};
use crate::learners::{
    self, Algorithm, GradientVariant, LearnerConfig, LearnerState, OtqModel,
};
use crate::numerics::{self, Matrix, Vector};

const NORM_SLACK: f64 = 1e-10;
pub const NONEXISTENCE_TOL: f64 = 1e-10;

#[derive(Debug, Clone, PartialEq)]
pub struct ConditionReport {
    pub name: String,
    pub value: f64,
    pub threshold: f64,
    pub satisfied: bool,
    pub detail: String,
}

impl fmt::Display for ConditionReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "{:<28} value={:<14.6e} threshold={:<12.6e} {}  {}",
            self.name,
            self.value,
            self.threshold,
            if self.satisfied { "ok" } else { "VIOLATED" },
            self.detail
        )
    }
}

fn w_norm_report(sys: &LinearSystem) -> Result<ConditionReport> {
    let w = sys.w()?;
    let inf = numerics::inf_norm(&w);
    let spec = numerics::spectral_norm(&w);
    Ok(ConditionReport {
        name: "norm(N M^+)".into(),
        value: inf,
        threshold: 1.0,
        satisfied: inf <= 1.0 + NORM_SLACK || spec <= 1.0 + NORM_SLACK,
        detail: format!("infinity norm {inf:.6}, spectral norm {spec:.6}"),
    })
}

/// Both sufficient conditions for OTD:
/// `ρ(I - η(M-γN)MᵀD) < 1` and `‖NM†‖ ≤ 1`.
pub fn check_otd(sys: &LinearSystem, eta: f64) -> Result<Vec<ConditionReport>> {
    let k = sys.k();
    let mtd = sys.m.transpose() * Matrix::from_diagonal(&sys.d);
    let a = Matrix::identity(k, k) - eta * sys.g() * mtd;
    let rho = numerics::spectral_radius(&a)?;
    Ok(vec![
        ConditionReport {
            name: "rho(I - eta (M - gN) M^T D)".into(),
            value: rho,
            threshold: 1.0,
            satisfied: rho < 1.0,
            detail: format!("eta = {eta}"),
        },
        w_norm_report(sys)?,
    ])
}

/// `‖NM†‖∞ ≤ 1` (the spectral norm is accepted as well).
pub fn check_ottd(sys: &LinearSystem) -> Result<ConditionReport> {
    w_norm_report(sys)
}

/// `max_i ‖Φ_i M†‖∞ < 1/γ`.
pub fn check_otq(sys: &LinearSystem, otq: &OtqModel) -> Result<ConditionReport> {
    let value = otq.condition_value(sys)?;
    let threshold = if sys.gamma > 0.0 { 1.0 / sys.gamma } else { f64::INFINITY };
    Ok(ConditionReport {
        name: "max_i norm(Phi_i M^+)".into(),
        value,
        threshold,
        satisfied: value < threshold,
        detail: format!("{} state blocks", otq.blocks().len()),
    })
}

/// Smallest target window for which the `m`-step OTTD map contracts:
/// `1 + ⌈(log(1-γ) - log((1+γ)√k)) / log(1 - ηλ_min(MMᵀD))⌉`.
pub fn m_bar(sys: &LinearSystem, eta: f64) -> Result<usize> {
    let lam = numerics::min_eig_mmtd(&sys.m, &sys.d)?;
    let x = eta * lam;
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!(
            "learning rate too large: eta * lambda_min = {x}, need a value in (0, 1)"
        )));
    }
    let g = sys.gamma;
    let num = (1.0 - g).ln() - ((1.0 + g) * (sys.k() as f64).sqrt()).ln();
    let ratio = num / (1.0 - x).ln();
    Ok(1 + ratio.ceil().max(0.0) as usize)
}

/// Window length for OTQ with target contraction factor `c ∈ (γ, 1)`:
/// `1 + ⌈(ln(c-γ) - ln(1+γ)) / ln(1-ηλ_k)⌉`.
pub fn otq_m_bar(sys: &LinearSystem, eta: f64, c: f64) -> Result<usize> {
    let g = sys.gamma;
    if !(c > g && c < 1.0) {
        return Err(Error::Domain(format!("contraction target must lie in (gamma, 1), got {c}")));
    }
    let lam = numerics::min_eig_mmtd(&sys.m, &sys.d)?;
    let x = eta * lam;
    if !(x > 0.0 && x < 1.0) {
        return Err(Error::Domain(format!(
            "learning rate too large: eta * lambda_min = {x}, need a value in (0, 1)"
        )));
    }
    let ratio = ((c - g).ln() - (1.0 + g).ln()) / (1.0 - x).ln();
    Ok(1 + ratio.ceil().max(0.0) as usize)
}

/// `(‖Aᵐ‖∞ + γ‖I - Aᵐ‖∞) · max_i ‖Φ_i M†‖∞` with `A = I - ηMMᵀD`, the
/// Lipschitz bound of one OTQ window in value space.
pub fn otq_window_bound(sys: &LinearSystem, otq: &OtqModel, eta: f64, m: usize) -> Result<f64> {
    let k = sys.k();
    let a = Matrix::identity(k, k) - eta * &sys.m * sys.m.transpose() * Matrix::from_diagonal(&sys.d);
    let am = a.pow(m as u32);
    let rest = Matrix::identity(k, k) - &am;
    Ok((numerics::inf_norm(&am) + sys.gamma * numerics::inf_norm(&rest)) * otq.condition_value(sys)?)
}

/// `γW + (I - γW)(I - ηMMᵀD)^m` in value space.
pub fn window_value_matrix(sys: &LinearSystem, eta: f64, m: usize) -> Result<Matrix> {
    let k = sys.k();
    let w = sys.w()?;
    let a = Matrix::identity(k, k) - eta * &sys.m * sys.m.transpose() * Matrix::from_diagonal(&sys.d);
    let mut am = Matrix::identity(k, k);
    for _ in 0..m {
        am = &a * am;
    }
    let gw = sys.gamma * w;
    Ok(&gw + (Matrix::identity(k, k) - &gw) * am)
}

/// The linear part of an affine update together with the number of single
/// steps one application covers.
#[derive(Debug, Clone)]
pub struct IterationMatrix {
    pub full: Matrix,
    /// `full` restricted to the range of `full - I`, which removes the
    /// unit eigenvalues of the directions the update never moves.
    pub effective: Matrix,
    pub steps: usize,
}

impl IterationMatrix {
    pub fn new(full: Matrix, steps: usize) -> Self {
        let n = full.nrows();
        let q = numerics::range_basis(&(&full - Matrix::identity(n, n)), 1e-10);
        let effective = q.transpose() * &full * q;
        Self {
            full,
            effective,
            steps,
        }
    }
}

/// Linear part of one application of `algorithm` (for OTTD, one full target
/// window). GTD2 and TDC return the joint `(θ, w)` matrix.
pub fn iteration_matrix(
    algorithm: Algorithm,
    sys: &LinearSystem,
    cfg: &LearnerConfig,
) -> Result<IterationMatrix> {
    let d = sys.dim();
    let eye = Matrix::identity(d, d);
    let dg = Matrix::from_diagonal(&sys.d) * sys.g();
    let (full, steps) = match algorithm {
        Algorithm::Otd => (&eye - cfg.eta * sys.m.transpose() * &dg, 1),
        Algorithm::Ottd => {
            let b = learners::window_sum(sys, cfg.eta, cfg.m);
            (&eye - cfg.eta * sys.m.transpose() * b * &dg, cfg.m)
        }
        Algorithm::Rm => (&eye - cfg.eta * sys.g().transpose() * &dg, 1),
        Algorithm::BairdRm => {
            let dir = &sys.m - cfg.mix * sys.gamma * &sys.n;
            (&eye - cfg.eta * dir.transpose() * &dg, 1)
        }
        Algorithm::Gtd2 | Algorithm::Tdc => {
            let variant = if algorithm == Algorithm::Gtd2 {
                GradientVariant::Gtd2
            } else {
                GradientVariant::Tdc
            };
            (joint_gradient_matrix(sys, cfg, variant), 1)
        }
        Algorithm::Otq => {
            return Err(Error::invalid("OTQ is not affine in the parameter"));
        }
    };
    Ok(IterationMatrix::new(full, steps))
}

/// Reads the joint `(θ, w)` linear map off the step function by probing unit
/// vectors with the rewards zeroed.
fn joint_gradient_matrix(sys: &LinearSystem, cfg: &LearnerConfig, variant: GradientVariant) -> Matrix {
    let d = sys.dim();
    let mut homog = sys.clone();
    homog.r.fill(0.0);
    let mut c = Matrix::zeros(2 * d, 2 * d);
    for j in 0..2 * d {
        let mut z = Vector::zeros(2 * d);
        z[j] = 1.0;
        let state = LearnerState {
            theta: z.rows(0, d).into_owned(),
            theta_targ: z.rows(0, d).into_owned(),
            step: 0,
            aux_w: Some(z.rows(d, d).into_owned()),
        };
        let next = learners::gradient_td_step(&state, &homog, cfg, variant);
        c.view_mut((0, j), (d, 1)).copy_from(&next.theta);
        c.view_mut((d, j), (d, 1)).copy_from(next.aux_w.as_ref().expect("aux weights"));
    }
    c
}

/// `ρ(C)^(1/steps)`.
pub fn convergence_metric(c: &Matrix, steps: usize) -> Result<f64> {
    let rho = numerics::spectral_radius(c)?;
    Ok(if steps <= 1 { rho } else { rho.powf(1.0 / steps as f64) })
}

/// The metric under both root conventions, on the full and effective matrices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MetricReport {
    pub steps: usize,
    pub full_per_step: f64,
    pub full_per_window: f64,
    pub effective_per_step: f64,
    pub effective_per_window: f64,
}

pub fn metric_report(it: &IterationMatrix) -> Result<MetricReport> {
    let eff = if it.effective.is_empty() {
        0.0
    } else {
        numerics::spectral_radius(&it.effective)?
    };
    let full = numerics::spectral_radius(&it.full)?;
    let root = |x: f64| x.powf(1.0 / it.steps as f64);
    Ok(MetricReport {
        steps: it.steps,
        full_per_step: root(full),
        full_per_window: full,
        effective_per_step: root(eff),
        effective_per_window: eff,
    })
}

/// Smallest singular value of `ΦᵀD(I-γP_π)Φ`; below the tolerance the
/// projected Bellman fixed point does not exist.
pub fn detect_nonexistence(phi: &Matrix, p_pi: &Matrix, d: &Vector, gamma: f64) -> Result<ConditionReport> {
    let n = phi.nrows();
    if p_pi.shape() != (n, n) || d.len() != n {
        return Err(Error::shape("features, transition and weights disagree"));
    }
    let a = phi.transpose() * Matrix::from_diagonal(d) * (Matrix::identity(n, n) - gamma * p_pi) * phi;
    let sv = numerics::singular_values(&a);
    let value = sv.min();
    Ok(ConditionReport {
        name: "sigma_min(Phi^T D (I - gP) Phi)".into(),
        value,
        threshold: NONEXISTENCE_TOL,
        satisfied: value >= NONEXISTENCE_TOL,
        detail: if value >= NONEXISTENCE_TOL {
            "fixed point exists".into()
        } else {
            "singular: no fixed point".into()
        },
    })
}
