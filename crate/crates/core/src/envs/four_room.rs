//! The four-rooms gridworld with a shipped shortest-path "human" policy.

use crate::data::{
    build_empirical, collect_trajectories, relabel_next_actions, Correction, EmpiricalModel,
    LinearSystem, NisModel, TransitionDataset,
};
use crate::error::{Error, Result};
use crate::learners::Evaluation;
use crate::mdp::{self, FeatureMatrix, Mdp, Policy};
use crate::numerics::{self, Matrix, Vector};

pub const LAYOUT: &str = include_str!("../../assets/four_room_layout.txt");
pub const HUMAN_POLICY: &str = include_str!("../../assets/four_room_policy.txt");

pub const FOUR_ROOM_GAMMA: f64 = 0.95;
pub const FOUR_ROOM_EPSILON: f64 = 0.08;
pub const FOUR_ROOM_HORIZON: usize = 30;
pub const FOUR_ROOM_TRAJECTORIES: usize = 10;
const SIDE: usize = 11;
const N_ACTIONS: usize = 4;
/// Up, down, left, right.
const MOVES: [(isize, isize); N_ACTIONS] = [(0, -1), (0, 1), (-1, 0), (1, 0)];
const ONE_HOT_DIM: usize = SIDE + SIDE + N_ACTIONS;

#[derive(Debug, Clone)]
pub struct FourRoomProblem {
    pub mdp: Mdp,
    /// Interior `(x, y)` of every state, row-major.
    pub cells: Vec<(usize, usize)>,
    pub goal: usize,
    pub human: Policy,
    pub target: Policy,
    pub behavior: Policy,
    pub epsilon: f64,
    /// Uniform over non-terminal cells.
    pub start: Vector,
    pub horizon: usize,
    pub n_trajectories: usize,
}

fn grid_lines(text: &str) -> Vec<&str> {
    text.lines()
        .filter(|l| !l.starts_with("# ") && !l.trim().is_empty())
        .collect()
}

pub fn make_four_room() -> Result<FourRoomProblem> {
    make_four_room_with(LAYOUT, HUMAN_POLICY, FOUR_ROOM_GAMMA)
}

/// Builds the problem from a 13x13 walled layout and an 11x11 action grid.
pub fn make_four_room_with(layout: &str, policy: &str, gamma: f64) -> Result<FourRoomProblem> {
    let rows = grid_lines(layout);
    if rows.len() != SIDE + 2 || rows.iter().any(|r| r.chars().count() != SIDE + 2) {
        return Err(Error::invalid("layout must be a 13x13 grid"));
    }
    let grid: Vec<Vec<char>> = rows.iter().map(|r| r.chars().collect()).collect();
    let mut cells = Vec::new();
    let mut index = vec![vec![None; SIDE + 2]; SIDE + 2];
    let mut goal = None;
    for (y, row) in grid.iter().enumerate() {
        for (x, &c) in row.iter().enumerate() {
            let border = x == 0 || y == 0 || x == SIDE + 1 || y == SIDE + 1;
            match c {
                '#' => {}
                '.' | 'G' if !border => {
                    index[y][x] = Some(cells.len());
                    if c == 'G' {
                        goal = Some(cells.len());
                    }
                    cells.push((x - 1, y - 1));
                }
                _ => return Err(Error::invalid(format!("bad layout cell {c:?} at ({x},{y})"))),
            }
        }
    }
    let goal = goal.ok_or_else(|| Error::invalid("layout has no goal"))?;
    let ns = cells.len();

    let mut p = Matrix::zeros(ns * N_ACTIONS, ns);
    let mut r = Vector::zeros(ns * N_ACTIONS);
    for (s, &(x, y)) in cells.iter().enumerate() {
        for (a, &(dx, dy)) in MOVES.iter().enumerate() {
            let i = s * N_ACTIONS + a;
            if s == goal {
                p[(i, s)] = 1.0;
                continue;
            }
            let (gx, gy) = ((x + 1) as isize + dx, (y + 1) as isize + dy);
            let next = index[gy as usize][gx as usize].unwrap_or(s);
            p[(i, next)] = 1.0;
            if next == goal {
                r[i] = 1.0;
            }
        }
    }
    let mdp = Mdp::new(ns, N_ACTIONS, p, r, gamma)?;

    let prow = grid_lines(policy);
    if prow.len() != SIDE || prow.iter().any(|r| r.chars().count() != SIDE) {
        return Err(Error::invalid("policy must be an 11x11 grid"));
    }
    let mut actions = vec![0; ns];
    for (s, &(x, y)) in cells.iter().enumerate() {
        let c = prow[y].chars().nth(x).expect("checked width");
        actions[s] = match c {
            'U' | 'G' => 0,
            'D' => 1,
            'L' => 2,
            'R' => 3,
            _ => return Err(Error::invalid(format!("policy has {c:?} on a free cell ({x},{y})"))),
        };
    }
    let human = Policy::deterministic(&actions, N_ACTIONS)?;
    let target = human.epsilon_mix(FOUR_ROOM_EPSILON)?;
    let mut start = Vector::from_element(ns, 1.0 / (ns - 1) as f64);
    start[goal] = 0.0;
    Ok(FourRoomProblem {
        mdp,
        cells,
        goal,
        human,
        target,
        behavior: Policy::uniform(ns, N_ACTIONS),
        epsilon: FOUR_ROOM_EPSILON,
        start,
        horizon: FOUR_ROOM_HORIZON,
        n_trajectories: FOUR_ROOM_TRAJECTORIES,
    })
}

impl FourRoomProblem {
    pub fn collect(&self, seed: u64) -> Result<TransitionDataset> {
        collect_trajectories(
            &self.mdp,
            &self.behavior,
            &self.start,
            self.n_trajectories,
            self.horizon,
            &[self.goal],
            seed,
        )
    }
}

/// One-hot `x`, one-hot `y` and one-hot action, followed by `Hᵀ` for the
/// pairs seen in `dataset` (first-occurrence order), so `d = 26 + k`.
pub fn build_four_room_features(
    problem: &FourRoomProblem,
    dataset: Option<&TransitionDataset>,
) -> Result<FeatureMatrix> {
    let ns = problem.cells.len();
    let mut seen: Vec<usize> = Vec::new();
    if let Some(ds) = dataset {
        let mut mark = vec![false; ns * N_ACTIONS];
        for t in ds.transitions() {
            let i = t.s * N_ACTIONS + t.a;
            if !mark[i] {
                mark[i] = true;
                seen.push(i);
            }
        }
    }
    let d = ONE_HOT_DIM + seen.len();
    let mut phi = Matrix::zeros(ns * N_ACTIONS, d);
    for (s, &(x, y)) in problem.cells.iter().enumerate() {
        for a in 0..N_ACTIONS {
            let i = s * N_ACTIONS + a;
            phi[(i, x)] = 1.0;
            phi[(i, SIDE + y)] = 1.0;
            phi[(i, 2 * SIDE + a)] = 1.0;
        }
    }
    for (j, &i) in seen.iter().enumerate() {
        phi[(i, ONE_HOT_DIM + j)] = 1.0;
    }
    let rows = phi.select_rows(&seen);
    if numerics::rank(&rows, 1e-10) < seen.len() {
        return Err(Error::Degenerate("four-room features lost rank on the seen pairs".into()));
    }
    FeatureMatrix::new(phi, N_ACTIONS)
}

/// How next actions in the four-room data are treated.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FourRoomMode {
    /// Behaviour next actions used as if they came from π.
    None,
    /// Next actions resampled from π.
    TargetAction,
    Is,
    Nis,
}

#[derive(Debug, Clone)]
pub struct FourRoomSetup {
    pub dataset: TransitionDataset,
    pub phi: FeatureMatrix,
    pub model: EmpiricalModel,
    pub nis: Option<NisModel>,
    /// The system the learner iterates on for this mode.
    pub system: LinearSystem,
    /// `‖Φθ - q_π‖∞` over every state-action pair.
    pub evaluation: Evaluation,
}

pub fn four_room_setup(problem: &FourRoomProblem, seed: u64, mode: FourRoomMode) -> Result<FourRoomSetup> {
    let mut dataset = problem.collect(seed)?;
    if mode == FourRoomMode::TargetAction {
        dataset = relabel_next_actions(&dataset, &problem.target, seed.wrapping_add(0x9e37_79b9))?;
    }
    let phi = build_four_room_features(problem, Some(&dataset))?;
    let (pi, mu) = (&problem.target, &problem.behavior);
    let correction = match mode {
        FourRoomMode::None | FourRoomMode::TargetAction => Correction::SampleTargetAction,
        FourRoomMode::Is => Correction::Is { pi, mu },
        FourRoomMode::Nis => Correction::Nis { pi, mu },
    };
    let ns = problem.cells.len();
    let (model, nis) = build_empirical(&dataset, &phi, ns, problem.mdp.gamma(), correction)?;
    let system = match &nis {
        Some(n) => n.system().clone(),
        None => model.system().clone(),
    };
    let q = mdp::true_q(&problem.mdp, pi)?;
    let evaluation = Evaluation {
        phi: phi.matrix().clone(),
        q,
    };
    Ok(FourRoomSetup {
        dataset,
        phi,
        model,
        nis,
        system,
        evaluation,
    })
}
