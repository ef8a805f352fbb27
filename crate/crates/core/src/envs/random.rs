//! Seeded random instances for property tests and Monte Carlo checks.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::data::LinearSystem;
use crate::error::{Error, Result};
use crate::mdp::{Mdp, Policy};
use crate::numerics::{self, Matrix, Vector};

/// A synthetic `(M, N, R, D)` system with a starting parameter.
#[derive(Debug, Clone)]
pub struct RandomInstance {
    pub system: LinearSystem,
    pub theta0: Vector,
}

fn uniform_matrix(rng: &mut ChaCha8Rng, r: usize, c: usize, lo: f64, hi: f64) -> Matrix {
    Matrix::from_fn(r, c, |_, _| rng.random_range(lo..hi))
}

fn uniform_vector(rng: &mut ChaCha8Rng, n: usize, lo: f64, hi: f64) -> Vector {
    Vector::from_fn(n, |_, _| rng.random_range(lo..hi))
}

/// With `ensure_condition`, row `i` of `N` is divided by
/// `max(1, Σ_j |(NM†)_{ij}|)` so that `‖NM†‖∞ ≤ 1`.
pub fn make_random_instance(
    k: usize,
    d: usize,
    gamma: f64,
    seed: u64,
    ensure_condition: bool,
) -> Result<RandomInstance> {
    if k == 0 || d == 0 {
        return Err(Error::invalid("k and d must be positive"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let m = uniform_matrix(&mut rng, k, d, -1.0, 1.0);
    let mut n = uniform_matrix(&mut rng, k, d, -1.0, 1.0);
    if ensure_condition {
        let w = &n * numerics::pinv_default(&m)?;
        for i in 0..k {
            let s = w.row(i).abs().sum().max(1.0);
            n.row_mut(i).iter_mut().for_each(|x| *x /= s);
        }
    }
    let r = uniform_vector(&mut rng, k, -1.0, 1.0);
    let mut dk = uniform_vector(&mut rng, k, 0.2, 1.0);
    dk /= dk.sum();
    let theta0 = uniform_vector(&mut rng, d, -1.0, 1.0);
    Ok(RandomInstance {
        system: LinearSystem::new(m, n, r, dk, gamma)?,
        theta0,
    })
}

/// Random transition rows with every entry positive (an ergodic chain under
/// any policy) and rewards in `[-1, 1]`.
pub fn random_mdp(n_states: usize, n_actions: usize, gamma: f64, seed: u64) -> Result<Mdp> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = uniform_matrix(&mut rng, n_states * n_actions, n_states, 0.05, 1.0);
    normalize_rows(&mut p);
    let r = uniform_vector(&mut rng, n_states * n_actions, -1.0, 1.0);
    Mdp::new(n_states, n_actions, p, r, gamma)
}

/// Like [`random_mdp`] but the last state is an absorbing zero-reward
/// terminal entered with probability at least `p_terminal` from every pair.
pub fn random_episodic_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    p_terminal: f64,
    seed: u64,
) -> Result<Mdp> {
    if n_states < 2 || !(0.0..=1.0).contains(&p_terminal) {
        return Err(Error::invalid("need two states and a terminal probability in [0,1]"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let term = n_states - 1;
    let n_sa = n_states * n_actions;
    let mut p = uniform_matrix(&mut rng, n_sa, n_states, 0.05, 1.0);
    let mut r = uniform_vector(&mut rng, n_sa, -1.0, 1.0);
    for i in 0..n_sa {
        if i / n_actions == term {
            p.row_mut(i).fill(0.0);
            p[(i, term)] = 1.0;
            r[i] = 0.0;
            continue;
        }
        p[(i, term)] = 0.0;
        let s: f64 = p.row(i).sum();
        p.row_mut(i).iter_mut().for_each(|x| *x *= (1.0 - p_terminal) / s);
        p[(i, term)] += p_terminal;
    }
    normalize_rows(&mut p);
    Mdp::new(n_states, n_actions, p, r, gamma)
}

fn normalize_rows(p: &mut Matrix) {
    for mut row in p.row_iter_mut() {
        let s: f64 = row.sum();
        row /= s;
    }
}

/// Stochastic policy with every probability at least `floor / n_actions`.
pub fn random_policy(n_states: usize, n_actions: usize, floor: f64, seed: u64) -> Policy {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut p = uniform_matrix(&mut rng, n_states, n_actions, floor.max(1e-3), 1.0);
    normalize_rows(&mut p);
    Policy::new(p).expect("rows normalised")
}

/// Standard-ish random features in `[-1, 1]`.
pub fn random_features(rows: usize, d: usize, seed: u64) -> Matrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    uniform_matrix(&mut rng, rows, d, -1.0, 1.0)
}

/// Uniformly random distribution with full support.
pub fn random_distribution(n: usize, seed: u64) -> Vector {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut v = uniform_vector(&mut rng, n, 0.1, 1.0);
    v /= v.sum();
    v
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn instance_flags_and_condition() {
        let inst = make_random_instance(3, 7, 0.9, 1, true).unwrap();
        assert!(inst.system.is_over_parameterized());
        let w = inst.system.w().unwrap();
        assert!(numerics::inf_norm(&w) <= 1.0 + 1e-12);
        assert!((inst.system.d.sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn seeds_differ() {
        let a = make_random_instance(3, 7, 0.9, 1, true).unwrap();
        let b = make_random_instance(3, 7, 0.9, 2, true).unwrap();
        assert_ne!(a.system.m, b.system.m);
    }

    #[test]
    fn episodic_mdp_terminal() {
        let mdp = random_episodic_mdp(4, 2, 0.9, 0.3, 5).unwrap();
        for a in 0..2 {
            assert_eq!(mdp.transition()[(mdp.index(3, a), 3)], 1.0);
            assert_eq!(mdp.reward_of(3, a), 0.0);
        }
        assert!(mdp.transition()[(0, 3)] >= 0.3 - 1e-12);
    }
}
