//! Baird's seven-state counterexample.

use crate::data::LinearSystem;
use crate::error::Result;
use crate::learners::Evaluation;
use crate::mdp::{self, FeatureMatrix, Mdp, Policy};
use crate::numerics::{Matrix, Vector};

pub const BAIRD_GAMMA: f64 = 0.95;
const N_STATES: usize = 7;
const DIM: usize = 8;

#[derive(Debug, Clone)]
pub struct BairdProblem {
    pub mdp: Mdp,
    pub pi: Policy,
    pub phi: FeatureMatrix,
    pub theta0: Vector,
    /// Uniform over the seven states.
    pub lambda: Vector,
}

/// States 1-6 have `φ = 2e_i + e_8`, state 7 has `φ = e_7 + 2e_8`; every
/// state moves to state 7 with zero reward. `θ₀ = (1,…,1,10)`.
pub fn make_baird() -> BairdProblem {
    make_baird_with_gamma(BAIRD_GAMMA).expect("valid discount")
}

pub fn make_baird_with_gamma(gamma: f64) -> Result<BairdProblem> {
    let mut p = Matrix::zeros(N_STATES, N_STATES);
    p.column_mut(N_STATES - 1).fill(1.0);
    let mdp = Mdp::new(N_STATES, 1, p, Vector::zeros(N_STATES), gamma)?;
    let mut phi = Matrix::zeros(N_STATES, DIM);
    for i in 0..6 {
        phi[(i, i)] = 2.0;
        phi[(i, 7)] = 1.0;
    }
    phi[(6, 6)] = 1.0;
    phi[(6, 7)] = 2.0;
    let mut theta0 = Vector::from_element(DIM, 1.0);
    theta0[7] = 10.0;
    Ok(BairdProblem {
        mdp,
        pi: Policy::uniform(N_STATES, 1),
        phi: FeatureMatrix::new(phi, 1)?,
        theta0,
        lambda: Vector::from_element(N_STATES, 1.0 / N_STATES as f64),
    })
}

impl BairdProblem {
    /// `M = Φ`, `N = P_πΦ`, `D = I/7`.
    pub fn expected_system(&self) -> LinearSystem {
        LinearSystem::expected(&self.mdp, &self.pi, &self.phi, &self.lambda).expect("consistent by construction")
    }

    pub fn evaluation(&self) -> Evaluation {
        Evaluation {
            phi: self.phi.matrix().clone(),
            q: mdp::true_q(&self.mdp, &self.pi).expect("solvable"),
        }
    }
}
