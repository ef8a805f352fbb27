//! Over-parameterized target Q-learning on an offline dataset.

use crate::data::{EmpiricalModel, LinearSystem};
use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

use super::{Bootstrap, LearnerConfig, LearnerState};

/// Per-state feature blocks `Φ_i` of the actions seen at each state, and the
/// empirical next-state law of every seen pair.
#[derive(Debug, Clone)]
pub struct OtqModel {
    /// `Φ_i`, one row per seen action; unseen states get a single zero row.
    blocks: Vec<Matrix>,
    seen_actions: Vec<Vec<usize>>,
    /// `k x |S|`.
    p_state: Matrix,
}

impl OtqModel {
    /// Seen actions at `s` are those appearing at `s` as a current or a next
    /// pair anywhere in the dataset.
    pub fn from_empirical(model: &EmpiricalModel, next_pairs: &[(usize, usize)]) -> Self {
        let ns = model.n_states();
        let na = model.n_actions();
        let mut seen = vec![vec![false; na]; ns];
        for &(s, a) in model.seen_pairs().iter().chain(next_pairs) {
            seen[s][a] = true;
        }
        let seen_actions: Vec<Vec<usize>> = seen
            .iter()
            .map(|row| (0..na).filter(|&a| row[a]).collect())
            .collect();
        let d = model.phi().ncols();
        let blocks = seen_actions
            .iter()
            .enumerate()
            .map(|(s, acts)| {
                if acts.is_empty() {
                    Matrix::zeros(1, d)
                } else {
                    let rows: Vec<usize> = acts.iter().map(|&a| s * na + a).collect();
                    model.phi().select_rows(&rows)
                }
            })
            .collect();
        Self {
            blocks,
            seen_actions,
            p_state: model.p_state().clone(),
        }
    }

    pub fn new(blocks: Vec<Matrix>, p_state: Matrix) -> Result<Self> {
        if blocks.len() != p_state.ncols() {
            return Err(Error::shape("one feature block per state is required"));
        }
        let seen_actions = blocks.iter().map(|b| (0..b.nrows()).collect()).collect();
        Ok(Self {
            blocks,
            seen_actions,
            p_state,
        })
    }

    pub fn blocks(&self) -> &[Matrix] {
        &self.blocks
    }

    pub fn seen_actions(&self, s: usize) -> &[usize] {
        &self.seen_actions[s]
    }

    pub fn p_state(&self) -> &Matrix {
        &self.p_state
    }

    /// Bootstrap value of every state, `max_a Φ_i θ` over the seen actions.
    pub fn state_values(&self, theta: &Vector, bootstrap: Bootstrap) -> Vector {
        Vector::from_iterator(
            self.blocks.len(),
            self.blocks.iter().map(|b| reduce(&(b * theta), bootstrap)),
        )
    }

    /// `R + γ P̂ v(θ)`.
    pub fn targets(&self, sys: &LinearSystem, theta: &Vector, bootstrap: Bootstrap) -> Vector {
        &sys.r + sys.gamma * (&self.p_state * self.state_values(theta, bootstrap))
    }

    /// `max_i ‖Φ_i M†‖∞`, which must stay below `1/γ`.
    pub fn condition_value(&self, sys: &LinearSystem) -> Result<f64> {
        let m_pinv = numerics::pinv_default(&sys.m)?;
        Ok(self
            .blocks
            .iter()
            .map(|b| numerics::inf_norm(&(b * &m_pinv)))
            .fold(0.0, f64::max))
    }
}

fn reduce(values: &Vector, bootstrap: Bootstrap) -> f64 {
    match bootstrap {
        Bootstrap::Max => values.max(),
        Bootstrap::MaxAbs => values.amax(),
    }
}

/// `θ ← θ - η MᵀD(Mθ - R - γP̂ v(θ_targ))`, with the target copied every `m` steps.
pub fn otq_step(
    state: &LearnerState,
    sys: &LinearSystem,
    otq: &OtqModel,
    cfg: &LearnerConfig,
) -> LearnerState {
    let targ = if state.step.is_multiple_of(cfg.m) {
        state.theta.clone()
    } else {
        state.theta_targ.clone()
    };
    let y = otq.targets(sys, &targ, cfg.bootstrap);
    let e = (&sys.m * &state.theta - y).component_mul(&sys.d);
    LearnerState {
        theta: &state.theta - cfg.eta * sys.m.tr_mul(&e),
        theta_targ: targ,
        step: state.step + 1,
        aux_w: state.aux_w.clone(),
    }
}

/// Bellman error of the greedy bootstrap, `½‖R + γP̂v(θ) - Mθ‖²_D`.
pub fn otq_emsbe(theta: &Vector, sys: &LinearSystem, otq: &OtqModel, bootstrap: Bootstrap) -> f64 {
    let e = otq.targets(sys, theta, bootstrap) - &sys.m * theta;
    0.5 * e.iter().zip(sys.d.iter()).map(|(x, w)| w * x * x).sum::<f64>()
}

#[derive(Debug, Clone)]
pub struct OtqFixedPoint {
    pub q_hat: Vector,
    pub theta: Vector,
    /// `max_i ‖Φ_i M†‖∞`.
    pub condition_value: f64,
    pub condition_satisfied: bool,
    pub iterations: usize,
}

const OTQ_TOL: f64 = 1e-12;
const OTQ_MAX_ITERS: usize = 1_000_000;

/// Solves `q = R + γP̂ v(M†q + (I-M†M)θ₀)` by fixed-point iteration and maps
/// the solution to `θ* = M†q̂* + (I-M†M)θ₀`.
///
/// The offset `(I-M†M)θ₀` only matters for seen actions outside the row
/// space of `M`; on looped episodic data it vanishes.
pub fn fixed_point_otq(
    sys: &LinearSystem,
    otq: &OtqModel,
    theta0: &Vector,
    bootstrap: Bootstrap,
) -> Result<OtqFixedPoint> {
    let d = sys.dim();
    if theta0.len() != d {
        return Err(Error::shape("theta0 does not match the feature dimension"));
    }
    let m_pinv = numerics::pinv_default(&sys.m)?;
    let perp0 = (Matrix::identity(d, d) - &m_pinv * &sys.m) * theta0;
    let condition_value = otq.condition_value(sys)?;
    let condition_satisfied = condition_value * sys.gamma < 1.0;

    let apply = |q: &Vector| otq.targets(sys, &(&m_pinv * q + &perp0), bootstrap);
    let mut q = &sys.m * theta0;
    let mut prev_delta = f64::INFINITY;
    let mut growth = 0;
    for it in 1..=OTQ_MAX_ITERS {
        let next = apply(&q);
        let delta = (&next - &q).amax();
        q = next;
        if !delta.is_finite() {
            break;
        }
        if delta <= OTQ_TOL * q.amax().max(1.0) {
            return Ok(OtqFixedPoint {
                theta: &m_pinv * &q + &perp0,
                q_hat: q,
                condition_value,
                condition_satisfied,
                iterations: it,
            });
        }
        growth = if delta > prev_delta { growth + 1 } else { 0 };
        if growth > 50 {
            break;
        }
        prev_delta = delta;
    }
    Err(Error::Nonexistence(format!(
        "the Q-value operator did not contract (max_i ‖Φ_i M†‖∞ = {condition_value})"
    )))
}

/// One target window in Q-value space:
/// `T(x) = Aᵐx + (I - Aᵐ)(R + γP̂ v(M†x + (I-M†M)θ₀))`, `A = I - ηMMᵀD`.
pub fn otq_window_operator<'a>(
    sys: &'a LinearSystem,
    otq: &'a OtqModel,
    eta: f64,
    m: usize,
    theta0: &Vector,
    bootstrap: Bootstrap,
) -> Result<impl Fn(&Vector) -> Vector + 'a> {
    let k = sys.k();
    let d = sys.dim();
    let m_pinv = numerics::pinv_default(&sys.m)?;
    let perp0 = (Matrix::identity(d, d) - &m_pinv * &sys.m) * theta0;
    let a = Matrix::identity(k, k) - eta * &sys.m * sys.m.transpose() * Matrix::from_diagonal(&sys.d);
    let am = a.pow(m as u32);
    let rest = Matrix::identity(k, k) - &am;
    Ok(move |x: &Vector| {
        let y = otq.targets(sys, &(&m_pinv * x + &perp0), bootstrap);
        &am * x + &rest * y
    })
}

/// Largest observed `‖Tx - Tx'‖∞ / ‖x - x'‖∞` over `samples` random pairs.
pub fn otq_contraction_estimate(
    op: &dyn Fn(&Vector) -> Vector,
    k: usize,
    samples: usize,
    seed: u64,
) -> f64 {
    use rand::{Rng, SeedableRng};
    let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..samples {
        let scale = 10f64.powf(rng.random_range(-2.0..2.0));
        let x = Vector::from_fn(k, |_, _| scale * rng.random_range(-1.0..1.0));
        let x2 = Vector::from_fn(k, |_, _| scale * rng.random_range(-1.0..1.0));
        let den = (&x - &x2).amax();
        if den > 0.0 {
            worst = worst.max((op(&x) - op(&x2)).amax() / den);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{build_empirical, Correction, Transition, TransitionDataset, CollectionKind};
    use crate::mdp::FeatureMatrix;

    fn self_loop_model(r: f64) -> (EmpiricalModel, OtqModel) {
        let t = Transition { s: 0, a: 0, r, s_next: 0, a_next: 0, is_ratio: 1.0, loop_flag: false };
        let ds = TransitionDataset::new(vec![t], None, CollectionKind::Iid).unwrap();
        let (model, _) =
            build_empirical(&ds, &FeatureMatrix::tabular(1, 1), 1, 0.95, Correction::SampleTargetAction).unwrap();
        let otq = OtqModel::from_empirical(&model, &[(0, 0)]);
        (model, otq)
    }

    #[test]
    fn self_loop_value() {
        let (model, otq) = self_loop_model(1.0);
        let fp = fixed_point_otq(model.system(), &otq, &Vector::zeros(1), Bootstrap::Max).unwrap();
        assert!((fp.q_hat[0] - 20.0).abs() < 1e-9);
        let cfg = LearnerConfig { eta: 0.5, m: 1, ..LearnerConfig::default() };
        let mut s = LearnerState::new(Vector::zeros(1));
        for _ in 0..2000 {
            s = otq_step(&s, model.system(), &otq, &cfg);
        }
        assert!((s.theta[0] - 20.0).abs() < 1e-6);
    }

    #[test]
    fn zero_reward_loop() {
        let (model, otq) = self_loop_model(0.0);
        let fp = fixed_point_otq(model.system(), &otq, &Vector::zeros(1), Bootstrap::Max).unwrap();
        assert_eq!(fp.q_hat[0], 0.0);
        assert!(fp.condition_satisfied);
        assert!((fp.condition_value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn unseen_state_block_is_zero() {
        let t = Transition { s: 0, a: 1, r: 0.5, s_next: 1, a_next: 0, is_ratio: 1.0, loop_flag: false };
        let ds = TransitionDataset::new(vec![t], None, CollectionKind::Iid).unwrap();
        let (model, _) =
            build_empirical(&ds, &FeatureMatrix::tabular(3, 2), 3, 0.9, Correction::SampleTargetAction).unwrap();
        let otq = OtqModel::from_empirical(&model, &[]);
        assert_eq!(otq.blocks()[2], Matrix::zeros(1, 6));
        assert_eq!(otq.seen_actions(0), &[1]);
        assert!(otq.seen_actions(1).is_empty());
    }
}
