//! Single-step update rules over the dataset matrices.

use crate::data::{LinearSystem, NisModel};
use crate::error::Result;
use crate::mdp::{FeatureMatrix, Mdp, Policy};
use crate::numerics::{Matrix, Vector};

use super::{GtdOrder, LearnerConfig, LearnerState};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExpectedVariant {
    Td,
    TargetTd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ResidualVariant {
    Rm,
    BairdRm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GradientVariant {
    Gtd2,
    Tdc,
}

/// `D (Mθ - R - γ N θ_boot)`.
fn weighted_residual(sys: &LinearSystem, theta: &Vector, boot: &Vector) -> Vector {
    let mut e = &sys.m * theta - &sys.r;
    e.axpy(-sys.gamma, &(&sys.n * boot), 1.0);
    e.component_mul_assign(&sys.d);
    e
}

pub fn otd_step(state: &LearnerState, sys: &LinearSystem, cfg: &LearnerConfig) -> LearnerState {
    let e = weighted_residual(sys, &state.theta, &state.theta);
    let theta = &state.theta - cfg.eta * sys.m.tr_mul(&e);
    LearnerState {
        theta_targ: theta.clone(),
        theta,
        step: state.step + 1,
        aux_w: state.aux_w.clone(),
    }
}

/// Copies the student into the target at multiples of `m`, then updates the
/// student against the frozen target.
pub fn ottd_step(state: &LearnerState, sys: &LinearSystem, cfg: &LearnerConfig) -> LearnerState {
    let targ = if state.step.is_multiple_of(cfg.m) {
        state.theta.clone()
    } else {
        state.theta_targ.clone()
    };
    let e = weighted_residual(sys, &state.theta, &targ);
    LearnerState {
        theta: &state.theta - cfg.eta * sys.m.tr_mul(&e),
        theta_targ: targ,
        step: state.step + 1,
        aux_w: state.aux_w.clone(),
    }
}

/// `B = Σ_{i<m} (I - η D M Mᵀ)^i`.
pub fn window_sum(sys: &LinearSystem, eta: f64, m: usize) -> Matrix {
    let k = sys.k();
    let dm = Matrix::from_diagonal(&sys.d) * &sys.m;
    let a = Matrix::identity(k, k) - eta * &dm * sys.m.transpose();
    let mut b = Matrix::zeros(k, k);
    let mut pow = Matrix::identity(k, k);
    for _ in 0..m {
        b += &pow;
        pow = &a * pow;
    }
    b
}

/// The image of `m` OTTD steps started right after a target copy.
pub fn ottd_combined_step(theta_nm: &Vector, sys: &LinearSystem, cfg: &LearnerConfig) -> Vector {
    let b = window_sum(sys, cfg.eta, cfg.m);
    let resid = sys.g() * theta_nm - &sys.r;
    let e = b * resid.component_mul(&sys.d);
    theta_nm - cfg.eta * sys.m.tr_mul(&e)
}

pub fn expected_step(
    state: &LearnerState,
    mdp: &Mdp,
    pi: &Policy,
    phi: &FeatureMatrix,
    lambda: &Vector,
    cfg: &LearnerConfig,
    variant: ExpectedVariant,
) -> Result<LearnerState> {
    let sys = LinearSystem::expected(mdp, pi, phi, lambda)?;
    Ok(match variant {
        ExpectedVariant::Td => otd_step(state, &sys, cfg),
        ExpectedVariant::TargetTd => ottd_step(state, &sys, cfg),
    })
}

pub fn residual_step(
    state: &LearnerState,
    sys: &LinearSystem,
    cfg: &LearnerConfig,
    variant: ResidualVariant,
) -> LearnerState {
    let e = weighted_residual(sys, &state.theta, &state.theta);
    let mix = match variant {
        ResidualVariant::Rm => 1.0,
        ResidualVariant::BairdRm => cfg.mix,
    };
    // (1 - mix) Mᵀ e + mix (M - γN)ᵀ e = (M - mix γ N)ᵀ e
    let dir = sys.m.tr_mul(&e) - mix * sys.gamma * sys.n.tr_mul(&e);
    let theta = &state.theta - cfg.eta * dir;
    LearnerState {
        theta_targ: theta.clone(),
        theta,
        step: state.step + 1,
        aux_w: state.aux_w.clone(),
    }
}

pub fn gradient_td_step(
    state: &LearnerState,
    sys: &LinearSystem,
    cfg: &LearnerConfig,
    variant: GradientVariant,
) -> LearnerState {
    let w = state
        .aux_w
        .clone()
        .unwrap_or_else(|| Vector::zeros(state.theta.len()));
    // δ = R + γNθ - Mθ, weighted by D
    let delta = -weighted_residual(sys, &state.theta, &state.theta);
    let dmw = (&sys.m * &w).component_mul(&sys.d);
    let w_new = &w + cfg.eta2 * (sys.m.tr_mul(&delta) - sys.m.tr_mul(&dmw));
    let w_used = match cfg.gtd_order {
        GtdOrder::AuxFirst => &w_new,
        GtdOrder::Simultaneous => &w,
    };
    let dmw_used = (&sys.m * w_used).component_mul(&sys.d);
    let dir = match variant {
        GradientVariant::Gtd2 => sys.g().tr_mul(&dmw_used),
        GradientVariant::Tdc => sys.m.tr_mul(&delta) - sys.gamma * sys.n.tr_mul(&dmw_used),
    };
    let theta = &state.theta + cfg.eta * dir;
    LearnerState {
        theta_targ: theta.clone(),
        theta,
        step: state.step + 1,
        aux_w: Some(w_new),
    }
}

/// OTTD with ratio-proportional weights `D_{k,NIS}` and `N_NIS`.
pub fn ottd_nis_step(state: &LearnerState, nis: &NisModel, cfg: &LearnerConfig) -> LearnerState {
    ottd_step(state, nis.system(), cfg)
}
