//! Two states, one action: left moves right, right loops on itself.

use crate::error::{Error, Result};
use crate::mdp::{FeatureMatrix, Mdp, Policy};
use crate::numerics::{Matrix, Vector};

#[derive(Debug, Clone)]
pub struct TwoStateProblem {
    pub mdp: Mdp,
    pub pi: Policy,
    /// `Φ = (1; 2)`.
    pub phi: FeatureMatrix,
}

pub fn make_two_state(gamma: f64) -> Result<TwoStateProblem> {
    let p = Matrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 1.0]);
    Ok(TwoStateProblem {
        mdp: Mdp::new(2, 1, p, Vector::zeros(2), gamma)?,
        pi: Policy::uniform(2, 1),
        phi: FeatureMatrix::new(Matrix::from_column_slice(2, 1, &[1.0, 2.0]), 1)?,
    })
}

impl TwoStateProblem {
    /// `[Φ | I₂]`, which makes the instance over-parameterized.
    pub fn over_parameterized_phi(&self) -> FeatureMatrix {
        let mut phi = Matrix::zeros(2, 3);
        phi.column_mut(0).copy_from(&self.phi.matrix().column(0));
        phi[(0, 1)] = 1.0;
        phi[(1, 2)] = 1.0;
        FeatureMatrix::new(phi, 1).expect("finite")
    }
}

/// `((4γ-4)/(2γ-3), (1-2γ)/(2γ-3))`, the off-policy distribution under which
/// the projected fixed point is `0/0`.
pub fn pathological_lambda(gamma: f64) -> Result<Vector> {
    if !(gamma > 0.5 && gamma < 1.0) {
        return Err(Error::Domain(format!(
            "the pathological distribution needs 0.5 < gamma < 1, got {gamma}"
        )));
    }
    let den = 2.0 * gamma - 3.0;
    Ok(Vector::from_vec(vec![(4.0 * gamma - 4.0) / den, (1.0 - 2.0 * gamma) / den]))
}
