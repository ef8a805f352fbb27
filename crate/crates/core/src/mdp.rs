//! Finite MDPs, policies, feature matrices and the exact Bellman machinery.
//!
//! State-action pairs are flattened as `s * n_actions + a` everywhere in the
//! crate, including every file format.

use crate::error::{Error, Result};
use crate::numerics::{self, Matrix, Vector};

const ROW_SUM_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct Mdp {
    n_states: usize,
    n_actions: usize,
    /// `(n_states * n_actions) x n_states`, row `s * n_actions + a` is P(.|s,a).
    transition: Matrix,
    /// Length `n_states * n_actions`.
    reward: Vector,
    gamma: f64,
}

impl Mdp {
    pub fn new(
        n_states: usize,
        n_actions: usize,
        transition: Matrix,
        reward: Vector,
        gamma: f64,
    ) -> Result<Self> {
        let n_sa = n_states * n_actions;
        if n_sa == 0 {
            return Err(Error::invalid("MDP needs at least one state and action"));
        }
        if transition.shape() != (n_sa, n_states) {
            return Err(Error::shape(format!(
                "transition must be {n_sa}x{n_states}, got {:?}",
                transition.shape()
            )));
        }
        if reward.len() != n_sa {
            return Err(Error::shape(format!(
                "reward must have length {n_sa}, got {}",
                reward.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid(format!("discount must lie in [0,1), got {gamma}")));
        }
        check_stochastic_rows(&transition, "transition")?;
        if reward.iter().any(|r| !r.is_finite() || r.abs() > 1.0) {
            return Err(Error::invalid("rewards must lie in [-1, 1]"));
        }
        Ok(Self {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
        })
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn n_state_actions(&self) -> usize {
        self.n_states * self.n_actions
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn transition(&self) -> &Matrix {
        &self.transition
    }

    pub fn reward(&self) -> &Vector {
        &self.reward
    }

    pub fn index(&self, s: usize, a: usize) -> usize {
        s * self.n_actions + a
    }

    pub fn reward_of(&self, s: usize, a: usize) -> f64 {
        self.reward[self.index(s, a)]
    }

    pub fn next_state_probs(&self, s: usize, a: usize) -> Vector {
        self.transition.row(self.index(s, a)).transpose()
    }

    pub fn with_gamma(&self, gamma: f64) -> Result<Self> {
        Mdp::new(
            self.n_states,
            self.n_actions,
            self.transition.clone(),
            self.reward.clone(),
            gamma,
        )
    }
}

fn check_stochastic_rows(m: &Matrix, what: &str) -> Result<()> {
    for (i, row) in m.row_iter().enumerate() {
        if row.iter().any(|&x| !x.is_finite() || x < 0.0) {
            return Err(Error::invalid(format!("{what} row {i} has negative or non-finite entries")));
        }
        let s: f64 = row.iter().sum();
        if (s - 1.0).abs() > ROW_SUM_TOL {
            return Err(Error::invalid(format!("{what} row {i} sums to {s}")));
        }
    }
    Ok(())
}

/// A stationary stochastic policy, `n_states x n_actions`.
#[derive(Debug, Clone, PartialEq)]
pub struct Policy {
    probs: Matrix,
}

impl Policy {
    pub fn new(probs: Matrix) -> Result<Self> {
        if probs.is_empty() {
            return Err(Error::invalid("empty policy"));
        }
        check_stochastic_rows(&probs, "policy")?;
        Ok(Self { probs })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        Self {
            probs: Matrix::from_element(n_states, n_actions, 1.0 / n_actions as f64),
        }
    }

    pub fn deterministic(actions: &[usize], n_actions: usize) -> Result<Self> {
        let mut probs = Matrix::zeros(actions.len(), n_actions);
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::invalid(format!("action {a} out of range at state {s}")));
            }
            probs[(s, a)] = 1.0;
        }
        Policy::new(probs)
    }

    /// `(1 - eps) * self + eps * uniform`.
    pub fn epsilon_mix(&self, eps: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&eps) {
            return Err(Error::invalid(format!("epsilon must lie in [0,1], got {eps}")));
        }
        let na = self.n_actions() as f64;
        Ok(Self {
            probs: self.probs.map(|p| (1.0 - eps) * p + eps / na),
        })
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[(s, a)]
    }

    pub fn probs(&self) -> &Matrix {
        &self.probs
    }

    fn check_against(&self, mdp: &Mdp) -> Result<()> {
        if self.n_states() != mdp.n_states() || self.n_actions() != mdp.n_actions() {
            return Err(Error::shape(format!(
                "policy is {}x{}, MDP has {} states and {} actions",
                self.n_states(),
                self.n_actions(),
                mdp.n_states(),
                mdp.n_actions()
            )));
        }
        Ok(())
    }
}

/// Feature matrix Φ with one row per state-action pair.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMatrix {
    phi: Matrix,
    n_actions: usize,
}

impl FeatureMatrix {
    /// Only finiteness and the row count are checked here; the rank
    /// requirement that matters to the learners is `rank(M) = k` on the
    /// dataset rows, which is verified where `M` is built.
    pub fn new(phi: Matrix, n_actions: usize) -> Result<Self> {
        if phi.is_empty() {
            return Err(Error::invalid("empty feature matrix"));
        }
        if n_actions == 0 || !phi.nrows().is_multiple_of(n_actions) {
            return Err(Error::shape(format!(
                "{} feature rows are not a multiple of {} actions",
                phi.nrows(),
                n_actions
            )));
        }
        if !numerics::is_finite(&phi) {
            return Err(Error::invalid("feature matrix has non-finite entries"));
        }
        Ok(Self { phi, n_actions })
    }

    pub fn tabular(n_states: usize, n_actions: usize) -> Self {
        let n = n_states * n_actions;
        Self {
            phi: Matrix::identity(n, n),
            n_actions,
        }
    }

    pub fn matrix(&self) -> &Matrix {
        &self.phi
    }

    pub fn dim(&self) -> usize {
        self.phi.ncols()
    }

    pub fn n_rows(&self) -> usize {
        self.phi.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    pub fn row(&self, s: usize, a: usize) -> Vector {
        self.phi.row(s * self.n_actions + a).transpose()
    }

    /// Values Φθ.
    pub fn values(&self, theta: &Vector) -> Vector {
        &self.phi * theta
    }

    pub fn check_against(&self, mdp: &Mdp) -> Result<()> {
        if self.phi.nrows() != mdp.n_state_actions() || self.n_actions != mdp.n_actions() {
            return Err(Error::shape(format!(
                "feature matrix has {} rows, MDP has {} state-action pairs",
                self.phi.nrows(),
                mdp.n_state_actions()
            )));
        }
        Ok(())
    }
}

/// `P_π` over state-action pairs: `P_π((s,a) -> (s',a')) = P(s'|s,a) π(a'|s')`.
pub fn state_action_transition(mdp: &Mdp, pi: &Policy) -> Result<Matrix> {
    pi.check_against(mdp)?;
    let na = mdp.n_actions();
    let n = mdp.n_state_actions();
    let p = mdp.transition();
    Ok(Matrix::from_fn(n, n, |i, j| {
        let (s_next, a_next) = (j / na, j % na);
        p[(i, s_next)] * pi.prob(s_next, a_next)
    }))
}

/// `T_π q = r + γ P_π q`.
pub fn bellman_apply(mdp: &Mdp, pi: &Policy, q: &Vector) -> Result<Vector> {
    if q.len() != mdp.n_state_actions() {
        return Err(Error::shape(format!(
            "q has length {}, expected {}",
            q.len(),
            mdp.n_state_actions()
        )));
    }
    let p_pi = state_action_transition(mdp, pi)?;
    Ok(mdp.reward() + mdp.gamma() * (p_pi * q))
}

/// `q_π = (I - γ P_π)^{-1} r`.
pub fn true_q(mdp: &Mdp, pi: &Policy) -> Result<Vector> {
    let p_pi = state_action_transition(mdp, pi)?;
    let n = mdp.n_state_actions();
    let a = Matrix::identity(n, n) - mdp.gamma() * p_pi;
    numerics::linear_solve(&a, mdp.reward())
}

/// Optimal action values by value iteration on the full model.
pub fn optimal_q(mdp: &Mdp, tol: f64) -> Vector {
    let na = mdp.n_actions();
    let mut q = Vector::zeros(mdp.n_state_actions());
    loop {
        let v = Vector::from_fn(mdp.n_states(), |s, _| {
            (0..na).map(|a| q[s * na + a]).fold(f64::NEG_INFINITY, f64::max)
        });
        let next = mdp.reward() + mdp.gamma() * (mdp.transition() * v);
        let delta = numerics::vec_inf_norm(&(&next - &q));
        q = next;
        if delta <= tol * (1.0 - mdp.gamma()) {
            return q;
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn self_loop(r: f64, gamma: f64) -> Mdp {
        Mdp::new(
            1,
            1,
            Matrix::from_element(1, 1, 1.0),
            Vector::from_element(1, r),
            gamma,
        )
        .unwrap()
    }

    fn two_state() -> Mdp {
        let p = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
        Mdp::new(2, 1, p, Vector::zeros(2), 0.9).unwrap()
    }

    #[test]
    fn self_loop_transition() {
        let mdp = self_loop(0.0, 0.5);
        let p = state_action_transition(&mdp, &Policy::uniform(1, 1)).unwrap();
        assert_eq!(p, Matrix::from_element(1, 1, 1.0));
    }

    #[test]
    fn two_state_transition() {
        let p = state_action_transition(&two_state(), &Policy::uniform(2, 1)).unwrap();
        assert_eq!(p, Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]));
    }

    #[test]
    fn bellman_zero_and_no_discount() {
        let p = Matrix::from_row_slice(4, 2, &[0.3, 0.7, 1.0, 0.0, 0.5, 0.5, 0.0, 1.0]);
        let r = Vector::from_vec(vec![0.1, -0.4, 1.0, 0.0]);
        let mdp = Mdp::new(2, 2, p, r.clone(), 0.8).unwrap();
        let pi = Policy::uniform(2, 2);
        assert_eq!(bellman_apply(&mdp, &pi, &Vector::zeros(4)).unwrap(), r);
        let mdp0 = mdp.with_gamma(0.0).unwrap();
        let q = Vector::from_vec(vec![3.0, -1.0, 2.0, 5.0]);
        assert_eq!(bellman_apply(&mdp0, &pi, &q).unwrap(), r);
    }

    #[test]
    fn true_q_geometric_series() {
        let q = true_q(&self_loop(1.0, 0.95), &Policy::uniform(1, 1)).unwrap();
        assert!((q[0] - 20.0).abs() < 1e-10);
        let q = true_q(&self_loop(0.0, 0.95), &Policy::uniform(1, 1)).unwrap();
        assert_eq!(q[0], 0.0);
    }

    #[test]
    fn rejects_bad_inputs() {
        let p = Matrix::from_row_slice(1, 1, &[0.9]);
        assert!(Mdp::new(1, 1, p, Vector::zeros(1), 0.5).is_err());
        let p = Matrix::from_element(1, 1, 1.0);
        assert!(Mdp::new(1, 1, p.clone(), Vector::from_element(1, 2.0), 0.5).is_err());
        assert!(Mdp::new(1, 1, p, Vector::zeros(1), 1.0).is_err());
        let mdp = two_state();
        assert!(bellman_apply(&mdp, &Policy::uniform(2, 1), &Vector::zeros(3)).is_err());
        assert!(state_action_transition(&mdp, &Policy::uniform(3, 1)).is_err());
    }

    #[test]
    fn epsilon_mix_rows_sum_to_one() {
        let pi = Policy::deterministic(&[0, 2, 1], 3).unwrap();
        let mixed = pi.epsilon_mix(0.08).unwrap();
        for s in 0..3 {
            let total: f64 = (0..3).map(|a| mixed.prob(s, a)).sum();
            assert!((total - 1.0).abs() < 1e-15);
        }
        assert!((mixed.prob(1, 2) - (0.92 + 0.08 / 3.0)).abs() < 1e-15);
    }

    #[test]
    fn optimal_q_self_loop() {
        let q = optimal_q(&self_loop(1.0, 0.9), 1e-12);
        assert!((q[0] - 10.0).abs() < 1e-9);
    }
}
