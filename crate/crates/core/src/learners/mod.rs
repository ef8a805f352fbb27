//! Iterative update rules, their closed-form limits, and a run loop.

mod fixed_point;
mod otq;
mod steps;

pub use fixed_point::{fixed_point_nis, fixed_point_ottd, fixed_point_projected, FixedPoint};
pub use otq::{
    fixed_point_otq, otq_contraction_estimate, otq_emsbe, otq_step, otq_window_operator,
    OtqFixedPoint, OtqModel,
};
pub use steps::{
    expected_step, gradient_td_step, otd_step, ottd_combined_step, ottd_nis_step, ottd_step,
    residual_step, window_sum, ExpectedVariant, GradientVariant, ResidualVariant,
};

use crate::data::LinearSystem;
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Algorithm {
    Otd,
    Ottd,
    Rm,
    BairdRm,
    Gtd2,
    Tdc,
    Otq,
}

impl Algorithm {
    pub fn name(self) -> &'static str {
        match self {
            Algorithm::Otd => "otd",
            Algorithm::Ottd => "ottd",
            Algorithm::Rm => "rm",
            Algorithm::BairdRm => "baird_rm",
            Algorithm::Gtd2 => "gtd2",
            Algorithm::Tdc => "tdc",
            Algorithm::Otq => "otq",
        }
    }
}

/// Order of the two GTD2/TDC updates within a step.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GtdOrder {
    /// Update `w` first and use the new `w` for `θ`.
    #[default]
    AuxFirst,
    Simultaneous,
}

/// How OTQ reduces the seen-action values of a state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Bootstrap {
    #[default]
    Max,
    MaxAbs,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerConfig {
    pub eta: f64,
    /// Target copy window.
    pub m: usize,
    /// Secondary rate of GTD2/TDC.
    pub eta2: f64,
    /// Weight on the residual gradient in Baird's residual method.
    pub mix: f64,
    pub max_iters: usize,
    /// Stop once the parameter moves less than this over one target window.
    pub tol: f64,
    pub divergence_threshold: f64,
    pub record_every: usize,
    pub gtd_order: GtdOrder,
    pub bootstrap: Bootstrap,
}

impl Default for LearnerConfig {
    fn default() -> Self {
        Self {
            eta: 0.5,
            m: 1,
            eta2: 0.0,
            mix: 0.5,
            max_iters: 10_000,
            tol: 1e-10,
            divergence_threshold: 1e8,
            record_every: 1,
            gtd_order: GtdOrder::AuxFirst,
            bootstrap: Bootstrap::Max,
        }
    }
}

impl LearnerConfig {
    /// Tuned rates for the Baird comparison.
    pub fn baird_defaults(alg: Algorithm) -> Self {
        let base = Self::default();
        match alg {
            Algorithm::Otd => Self { eta: 0.5, ..base },
            Algorithm::Ottd => Self { eta: 0.997, m: 3, ..base },
            Algorithm::Rm => Self { eta: 0.8, ..base },
            Algorithm::BairdRm => Self { eta: 0.95, mix: 0.5, ..base },
            Algorithm::Gtd2 => Self { eta: 0.6, eta2: 0.6, ..base },
            Algorithm::Tdc => Self { eta: 0.6, eta2: 0.4, ..base },
            Algorithm::Otq => Self { eta: 0.5, ..base },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(what.to_string()));
        if !(self.eta.is_finite() && self.eta >= 0.0) {
            return bad("learning rate must be nonnegative");
        }
        if !(self.eta2.is_finite() && self.eta2 >= 0.0) {
            return bad("second learning rate must be nonnegative");
        }
        if self.m == 0 {
            return bad("target window must be at least 1");
        }
        if !(0.0..=1.0).contains(&self.mix) {
            return bad("mixing weight must lie in [0,1]");
        }
        if self.record_every == 0 {
            return bad("record_every must be at least 1");
        }
        if !(self.tol >= 0.0 && self.divergence_threshold > 0.0) {
            return bad("tolerances must be positive");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LearnerState {
    pub theta: Vector,
    pub theta_targ: Vector,
    pub step: usize,
    /// Secondary weights of GTD2/TDC.
    pub aux_w: Option<Vector>,
}

impl LearnerState {
    pub fn new(theta0: Vector) -> Self {
        Self {
            theta_targ: theta0.clone(),
            theta: theta0,
            step: 0,
            aux_w: None,
        }
    }
}

/// `½‖R + γNθ - Mθ‖²_D`.
pub fn emsbe(theta: &Vector, sys: &LinearSystem) -> f64 {
    let mut e = &sys.r + sys.gamma * (&sys.n * theta);
    e -= &sys.m * theta;
    0.5 * e.iter().zip(sys.d.iter()).map(|(x, w)| w * x * x).sum::<f64>()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RunStatus {
    Converged,
    MaxIters,
    Diverged,
}

impl RunStatus {
    pub fn name(self) -> &'static str {
        match self {
            RunStatus::Converged => "converged",
            RunStatus::MaxIters => "max_iters",
            RunStatus::Diverged => "diverged",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TracePoint {
    pub step: usize,
    pub max_value_error: Option<f64>,
    pub emsbe: f64,
}

#[derive(Debug, Clone)]
pub struct RunResult {
    pub final_state: LearnerState,
    pub status: RunStatus,
    pub trace: Vec<TracePoint>,
}

impl RunResult {
    /// First recorded step whose value error is at most `level`.
    pub fn first_step_below(&self, level: f64) -> Option<usize> {
        self.trace
            .iter()
            .find(|p| p.max_value_error.is_some_and(|e| e <= level))
            .map(|p| p.step)
    }

    pub fn final_point(&self) -> &TracePoint {
        self.trace.last().expect("trace holds the initial point")
    }
}

/// Ground truth for the value-error trace: `‖Φθ - q‖∞`.
#[derive(Debug, Clone)]
pub struct Evaluation {
    pub phi: Matrix,
    pub q: Vector,
}

impl Evaluation {
    pub fn value_error(&self, theta: &Vector) -> f64 {
        (&self.phi * theta - &self.q).amax()
    }
}

/// Normal-equation form of the affine updates,
/// `θ ← θ - η(Aθ - Bθ_targ - b)`, used when `d` is small next to `k`.
struct AffineUpdate {
    a: Matrix,
    b_targ: Option<Matrix>,
    b: Vector,
    window: usize,
}

impl AffineUpdate {
    fn new(algorithm: Algorithm, sys: &LinearSystem, cfg: &LearnerConfig) -> Option<Self> {
        if sys.dim() > 2 * sys.k() {
            return None;
        }
        let dm = Matrix::from_diagonal(&sys.d) * &sys.m;
        let dr = sys.r.component_mul(&sys.d);
        let g = sys.g();
        let (left, b_targ, window) = match algorithm {
            Algorithm::Otd => (sys.m.clone(), None, 1),
            Algorithm::Ottd if cfg.m == 1 => (sys.m.clone(), None, 1),
            Algorithm::Ottd => {
                let bt = sys.gamma * dm.tr_mul(&sys.n);
                return Some(Self {
                    a: dm.tr_mul(&sys.m),
                    b_targ: Some(bt),
                    b: sys.m.tr_mul(&dr),
                    window: cfg.m,
                });
            }
            Algorithm::Rm => (g.clone(), None, 1),
            Algorithm::BairdRm => (&sys.m - cfg.mix * sys.gamma * &sys.n, None, 1),
            _ => return None,
        };
        let dg = Matrix::from_diagonal(&sys.d) * g;
        Some(Self {
            a: left.tr_mul(&dg),
            b_targ,
            b: left.tr_mul(&dr),
            window,
        })
    }

    fn step(&self, state: &LearnerState, cfg: &LearnerConfig) -> LearnerState {
        let mut dir = &self.a * &state.theta - &self.b;
        let targ = match &self.b_targ {
            Some(bt) => {
                let targ = if state.step.is_multiple_of(self.window) {
                    state.theta.clone()
                } else {
                    state.theta_targ.clone()
                };
                dir -= bt * &targ;
                targ
            }
            None => state.theta.clone(),
        };
        let theta = &state.theta - cfg.eta * dir;
        LearnerState {
            theta_targ: if self.b_targ.is_some() { targ } else { theta.clone() },
            theta,
            step: state.step + 1,
            aux_w: state.aux_w.clone(),
        }
    }
}

/// Iterates `algorithm` from `theta0` until the parameter settles over a
/// target window, the values blow past the divergence threshold, or
/// `max_iters` steps have run.
pub fn run(
    algorithm: Algorithm,
    sys: &LinearSystem,
    otq: Option<&OtqModel>,
    theta0: &Vector,
    cfg: &LearnerConfig,
    eval: Option<&Evaluation>,
) -> Result<RunResult> {
    cfg.validate()?;
    if theta0.len() != sys.dim() {
        return Err(Error::shape("theta0 does not match the feature dimension"));
    }
    if let Some(ev) = eval {
        if ev.phi.ncols() != sys.dim() || ev.phi.nrows() != ev.q.len() {
            return Err(Error::shape("evaluation features do not match"));
        }
    }
    if algorithm == Algorithm::Otq && otq.is_none() {
        return Err(Error::invalid("OTQ needs per-state feature blocks"));
    }
    let window = match algorithm {
        Algorithm::Ottd | Algorithm::Otq => cfg.m,
        _ => 1,
    };

    let point = |s: &LearnerState| TracePoint {
        step: s.step,
        max_value_error: eval.map(|ev| ev.value_error(&s.theta)),
        emsbe: match (algorithm, otq) {
            (Algorithm::Otq, Some(o)) => otq_emsbe(&s.theta, sys, o, cfg.bootstrap),
            _ => emsbe(&s.theta, sys),
        },
    };
    let mag_features = eval.map_or(&sys.m, |ev| &ev.phi);
    let mag_bound = numerics::inf_norm(mag_features);
    // ‖Φθ‖∞ ≤ ‖Φ‖∞‖θ‖∞ spares the product on most steps.
    let diverged = |theta: &Vector| {
        let t = theta.amax();
        if !t.is_finite() {
            return true;
        }
        if mag_bound * t <= cfg.divergence_threshold {
            return false;
        }
        let mag = (mag_features * theta).amax();
        !mag.is_finite() || mag > cfg.divergence_threshold
    };
    let fast = AffineUpdate::new(algorithm, sys, cfg);

    let mut state = LearnerState::new(theta0.clone());
    let mut trace = vec![point(&state)];
    let mut checkpoint = (state.theta.clone(), state.aux_w.clone());
    let mut status = RunStatus::MaxIters;
    while state.step < cfg.max_iters {
        state = match (&fast, algorithm) {
            (Some(f), _) => f.step(&state, cfg),
            (None, Algorithm::Otd) => otd_step(&state, sys, cfg),
            (None, Algorithm::Ottd) => ottd_step(&state, sys, cfg),
            (None, Algorithm::Rm) => residual_step(&state, sys, cfg, ResidualVariant::Rm),
            (None, Algorithm::BairdRm) => residual_step(&state, sys, cfg, ResidualVariant::BairdRm),
            (None, Algorithm::Gtd2) => gradient_td_step(&state, sys, cfg, GradientVariant::Gtd2),
            (None, Algorithm::Tdc) => gradient_td_step(&state, sys, cfg, GradientVariant::Tdc),
            (None, Algorithm::Otq) => otq_step(&state, sys, otq.expect("checked above"), cfg),
        };
        if diverged(&state.theta) {
            status = RunStatus::Diverged;
            break;
        }
        if state.step.is_multiple_of(window) {
            let moved = (&state.theta - &checkpoint.0).amax();
            let moved_w = match (&state.aux_w, &checkpoint.1) {
                (Some(w), Some(w0)) => (w - w0).amax(),
                (Some(w), None) => w.amax(),
                _ => 0.0,
            };
            if moved.max(moved_w) <= cfg.tol {
                status = RunStatus::Converged;
                break;
            }
            checkpoint = (state.theta.clone(), state.aux_w.clone());
        }
        if state.step.is_multiple_of(cfg.record_every) {
            trace.push(point(&state));
        }
    }
    if trace.last().map(|p| p.step) != Some(state.step) {
        trace.push(point(&state));
    }
    Ok(RunResult {
        final_state: state,
        status,
        trace,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::envs::random::make_random_instance;

    #[test]
    fn emsbe_examples() {
        let sys = LinearSystem::new(
            Matrix::from_element(1, 1, 1.0),
            Matrix::zeros(1, 1),
            Vector::from_element(1, 1.0),
            Vector::from_element(1, 1.0),
            0.9,
        )
        .unwrap();
        assert_eq!(emsbe(&Vector::zeros(1), &sys), 0.5);
        assert_eq!(emsbe(&Vector::from_element(1, 1.0), &sys), 0.0);
    }

    #[test]
    fn zero_iterations_trace() {
        let inst = make_random_instance(3, 7, 0.9, 1, true).unwrap();
        let cfg = LearnerConfig { max_iters: 0, ..LearnerConfig::default() };
        let res = run(Algorithm::Ottd, &inst.system, None, &inst.theta0, &cfg, None).unwrap();
        assert_eq!(res.trace.len(), 1);
        assert_eq!(res.trace[0].step, 0);
        assert_eq!(res.status, RunStatus::MaxIters);
    }

    #[test]
    fn ottd_run_converges_to_closed_form() {
        let inst = make_random_instance(4, 9, 0.9, 2, true).unwrap();
        let eta = 0.5 / crate::numerics::max_eig_mmtd(&inst.system.m, &inst.system.d).unwrap();
        let m = crate::diagnostics::m_bar(&inst.system, eta).unwrap();
        let cfg = LearnerConfig { eta, m, max_iters: 200_000, record_every: 1000, ..LearnerConfig::default() };
        let res = run(Algorithm::Ottd, &inst.system, None, &inst.theta0, &cfg, None).unwrap();
        assert_eq!(res.status, RunStatus::Converged);
        let fp = fixed_point_ottd(&inst.system, &inst.theta0).unwrap();
        assert!((&res.final_state.theta - fp.theta).amax() < 1e-6);
        let steps: Vec<_> = res.trace.iter().map(|p| p.step).collect();
        assert!(steps.windows(2).all(|w| w[0] < w[1]));
    }
}
