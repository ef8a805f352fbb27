//! Turns a config into the linear system a learner iterates on.

use ottd_core::data::{
    build_empirical, collect_iid, collect_trajectories, relabel_next_actions, Correction,
    EmpiricalModel, LinearSystem, NisModel, TransitionDataset,
};
use ottd_core::diagnostics;
use ottd_core::envs::baird::BAIRD_GAMMA;
use ottd_core::envs::{
    build_four_room_features, make_baird_with_gamma, make_four_room_with, make_random_instance,
    make_two_state, pathological_lambda, FourRoomProblem, FOUR_ROOM_GAMMA, HUMAN_POLICY,
    LAYOUT,
};
use ottd_core::learners::{Algorithm, Evaluation, LearnerConfig, OtqModel};
use ottd_core::mdp::{self, FeatureMatrix, Mdp, Policy};
use ottd_core::numerics::{self, Vector};

use crate::config::{
    AlgorithmName, CorrectionMode, DatasetKind, ExperimentConfig, LambdaSpec, ProblemKind,
    RandomConfig,
};
use crate::error::{invalid, CliError, CliResult};
use crate::problem::ProblemFile;

const TWO_STATE_GAMMA: f64 = 0.95;
const RANDOM_GAMMA: f64 = 0.9;
const RELABEL_SALT: u64 = 0x9e37_79b9;

/// A finite MDP with everything needed to sample data from it.
#[derive(Debug, Clone)]
pub struct Env {
    pub mdp: Mdp,
    pub target: Policy,
    pub behavior: Policy,
    /// `None` when the features depend on the dataset (four rooms).
    pub phi: Option<FeatureMatrix>,
    /// Sampling distribution over state-action pairs.
    pub lambda: Vector,
    pub start: Vector,
    pub terminals: Vec<usize>,
    pub theta0: Option<Vector>,
    pub four_room: Option<FourRoomProblem>,
}

#[derive(Debug, Clone)]
pub enum World {
    Env(Box<Env>),
    /// Synthetic systems with no underlying MDP, one per seed.
    Random(RandomConfig, f64),
}

/// Everything one learner run needs.
#[derive(Debug, Clone)]
pub struct Prepared {
    pub system: LinearSystem,
    pub theta0: Vector,
    pub evaluation: Option<Evaluation>,
    pub otq: Option<OtqModel>,
    pub model: Option<EmpiricalModel>,
    pub nis: Option<NisModel>,
    pub dataset: Option<TransitionDataset>,
    /// Under-parameterized features on an expected system.
    pub features: Option<FeatureMatrix>,
}

impl World {
    pub fn build(cfg: &ExperimentConfig) -> CliResult<Self> {
        let kind = cfg.problem_kind()?;
        if let ProblemKind::Random = kind {
            let r = cfg.random.clone().ok_or_else(|| invalid("missing [random] table"))?;
            return Ok(World::Random(r, cfg.gamma.unwrap_or(RANDOM_GAMMA)));
        }
        let env = match kind {
            ProblemKind::Baird => {
                let b = make_baird_with_gamma(cfg.gamma.unwrap_or(BAIRD_GAMMA))?;
                let n = b.mdp.n_states();
                Env {
                    target: b.pi.clone(),
                    behavior: b.pi,
                    phi: Some(b.phi),
                    lambda: b.lambda,
                    start: Vector::from_element(n, 1.0 / n as f64),
                    terminals: Vec::new(),
                    theta0: Some(b.theta0),
                    four_room: None,
                    mdp: b.mdp,
                }
            }
            ProblemKind::TwoState => {
                let gamma = cfg.gamma.unwrap_or(TWO_STATE_GAMMA);
                let t = make_two_state(gamma)?;
                let lambda = match &cfg.lambda {
                    None => Vector::from_element(2, 0.5),
                    Some(LambdaSpec::Named(n)) if n == "uniform" => Vector::from_element(2, 0.5),
                    Some(LambdaSpec::Named(n)) if n == "pathological" => pathological_lambda(gamma)?,
                    Some(LambdaSpec::Named(n)) => return Err(invalid(format!("unknown lambda {n:?}"))),
                    Some(LambdaSpec::Values(v)) => Vector::from_vec(v.clone()),
                };
                let phi = if cfg.over_parameterized {
                    t.over_parameterized_phi()
                } else {
                    t.phi.clone()
                };
                Env {
                    target: t.pi.clone(),
                    behavior: t.pi,
                    theta0: Some(Vector::from_element(phi.dim(), 1.0)),
                    phi: Some(phi),
                    lambda,
                    start: Vector::from_element(2, 0.5),
                    terminals: Vec::new(),
                    four_room: None,
                    mdp: t.mdp,
                }
            }
            ProblemKind::FourRoom => {
                let fr = make_four_room_with(LAYOUT, HUMAN_POLICY, cfg.gamma.unwrap_or(FOUR_ROOM_GAMMA))?;
                let n_sa = fr.mdp.n_state_actions();
                Env {
                    mdp: fr.mdp.clone(),
                    target: fr.target.clone(),
                    behavior: fr.behavior.clone(),
                    phi: None,
                    lambda: Vector::from_element(n_sa, 1.0 / n_sa as f64),
                    start: fr.start.clone(),
                    terminals: vec![fr.goal],
                    theta0: None,
                    four_room: Some(fr),
                }
            }
            ProblemKind::File(path) => {
                let p = ProblemFile::load(&path)?.build(cfg.gamma)?;
                Env {
                    mdp: p.mdp,
                    target: p.target,
                    behavior: p.behavior,
                    phi: Some(p.phi),
                    lambda: p.lambda,
                    start: p.start,
                    terminals: p.terminals,
                    theta0: Some(p.theta0),
                    four_room: None,
                }
            }
            ProblemKind::Random => unreachable!("handled above"),
        };
        Ok(World::Env(Box::new(env)))
    }

    pub fn env(&self) -> Option<&Env> {
        match self {
            World::Env(e) => Some(e),
            World::Random(..) => None,
        }
    }
}

/// Expected updates on `(Φ, P_π, λ)` unless the algorithm needs data.
pub fn uses_expected(alg: AlgorithmName, kind: &ProblemKind) -> bool {
    match alg {
        AlgorithmName::ExpectedTd | AlgorithmName::ExpectedTargetTd => true,
        AlgorithmName::OttdIs | AlgorithmName::OttdNis | AlgorithmName::Otq => false,
        _ => matches!(kind, ProblemKind::Baird | ProblemKind::TwoState | ProblemKind::Random),
    }
}

/// Collects (or loads) the raw behaviour dataset for `seed`, with ratios filled in.
pub fn collect_dataset(env: &Env, cfg: &ExperimentConfig, seed: u64) -> CliResult<TransitionDataset> {
    let ds = match &cfg.dataset.path {
        Some(p) => {
            let f = std::fs::File::open(p).map_err(|e| CliError::Io(format!("{}: {e}", p.display())))?;
            TransitionDataset::read_csv(f)?
        }
        None => {
            let s = seed.wrapping_add(cfg.dataset.seed);
            match cfg.dataset.kind {
                DatasetKind::Iid => collect_iid(&env.mdp, &env.lambda, &env.behavior, cfg.dataset.size, s)?,
                DatasetKind::Trajectory => {
                    let n_traj = (cfg.dataset.size / cfg.dataset.horizon).max(1);
                    collect_trajectories(
                        &env.mdp,
                        &env.behavior,
                        &env.start,
                        n_traj,
                        cfg.dataset.horizon,
                        &env.terminals,
                        s,
                    )?
                }
            }
        }
    };
    Ok(ds.with_is_ratios(&env.target, &env.behavior)?)
}

pub fn prepare(world: &World, cfg: &ExperimentConfig, alg: AlgorithmName, seed: u64) -> CliResult<Prepared> {
    let kind = cfg.problem_kind()?;
    let env = match world {
        World::Random(r, gamma) => {
            if !uses_expected(alg, &kind) {
                return Err(invalid(format!("{} needs sampled data; random problems have none", alg.as_str())));
            }
            let s = seed.wrapping_add(cfg.dataset.seed);
            let inst = make_random_instance(r.k, r.d, *gamma, s, r.ensure_condition)?;
            return Ok(Prepared {
                system: inst.system,
                theta0: inst.theta0,
                evaluation: None,
                otq: None,
                model: None,
                nis: None,
                dataset: None,
                features: None,
            });
        }
        World::Env(e) => e,
    };

    if uses_expected(alg, &kind) {
        let phi = match &env.phi {
            Some(phi) => phi.clone(),
            None => build_four_room_features(env.four_room.as_ref().expect("four rooms"), None)?,
        };
        let system = LinearSystem::expected(&env.mdp, &env.target, &phi, &env.lambda)?;
        let q = mdp::true_q(&env.mdp, &env.target)?;
        return Ok(Prepared {
            theta0: env.theta0.clone().unwrap_or_else(|| Vector::zeros(phi.dim())),
            evaluation: Some(Evaluation {
                phi: phi.matrix().clone(),
                q,
            }),
            otq: None,
            model: None,
            nis: None,
            dataset: None,
            features: (!system.is_over_parameterized()).then_some(phi),
            system,
        });
    }

    let mode = cfg.correction(alg);
    let mut ds = collect_dataset(env, cfg, seed)?;
    let is_otq = alg == AlgorithmName::Otq;
    if mode == CorrectionMode::TargetAction && !is_otq {
        let s = seed.wrapping_add(cfg.dataset.seed).wrapping_add(RELABEL_SALT);
        ds = relabel_next_actions(&ds, &env.target, s)?;
    }
    let phi = match (&env.phi, &env.four_room) {
        (Some(phi), _) => phi.clone(),
        (None, Some(fr)) => build_four_room_features(fr, Some(&ds))?,
        (None, None) => return Err(invalid("problem has no features")),
    };
    let (pi, mu) = (&env.target, &env.behavior);
    let correction = match mode {
        _ if is_otq => Correction::SampleTargetAction,
        CorrectionMode::None | CorrectionMode::TargetAction => Correction::SampleTargetAction,
        CorrectionMode::Is => Correction::Is { pi, mu },
        CorrectionMode::Nis => Correction::Nis { pi, mu },
    };
    let (model, nis) = build_empirical(&ds, &phi, env.mdp.n_states(), env.mdp.gamma(), correction)?;
    let system = match &nis {
        Some(n) => n.system().clone(),
        None => model.system().clone(),
    };
    let (otq, q) = if is_otq {
        let next: Vec<(usize, usize)> = ds.transitions().iter().map(|t| (t.s_next, t.a_next)).collect();
        (Some(OtqModel::from_empirical(&model, &next)), mdp::optimal_q(&env.mdp, 1e-12))
    } else {
        (None, mdp::true_q(&env.mdp, pi)?)
    };
    Ok(Prepared {
        theta0: env.theta0.clone().unwrap_or_else(|| Vector::zeros(phi.dim())),
        evaluation: Some(Evaluation {
            phi: phi.matrix().clone(),
            q,
        }),
        otq,
        model: Some(model),
        nis,
        dataset: Some(ds),
        features: None,
        system,
    })
}

/// The config's learner settings; on random problems unset rates are
/// derived from the system so the defaults are stable.
pub fn learner_config(cfg: &ExperimentConfig, alg: AlgorithmName, prep: &Prepared) -> CliResult<LearnerConfig> {
    let kind = cfg.problem_kind()?;
    let mut lc = cfg.learner_config(alg, kind.clone(), cfg.correction(alg));
    if kind == ProblemKind::Random {
        let over = cfg.overrides.get(&alg);
        let eta_set = cfg.hyper.eta.is_some() || over.is_some_and(|h| h.eta.is_some());
        let m_set = cfg.hyper.m.is_some() || over.is_some_and(|h| h.m.is_some());
        if !eta_set {
            lc.eta = 0.9 / numerics::max_eig_mmtd(&prep.system.m, &prep.system.d)?;
        }
        if !m_set && alg.core() == Algorithm::Ottd {
            lc.m = diagnostics::m_bar(&prep.system, lc.eta)?;
        }
    }
    Ok(lc)
}
