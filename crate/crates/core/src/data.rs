//! Offline datasets and the empirical quantities derived from them.

use std::collections::HashMap;
use std::io::{Read, Write};
use std::ops::Range;

use rand::distr::weighted::WeightedIndex;
use rand::distr::Distribution;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{self, FeatureMatrix, Mdp, Policy};
use crate::numerics::{self, Matrix, Vector};

const DIST_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Transition {
    pub s: usize,
    pub a: usize,
    pub r: f64,
    pub s_next: usize,
    pub a_next: usize,
    /// π(a'|s') / μ(a'|s'); 1 until filled in by [`TransitionDataset::with_is_ratios`].
    pub is_ratio: f64,
    /// Set on the artificial self-loop appended at the end of a trajectory.
    pub loop_flag: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CollectionKind {
    Iid,
    Trajectory,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    transitions: Vec<Transition>,
    trajectory_bounds: Option<Vec<Range<usize>>>,
    kind: CollectionKind,
}

impl TransitionDataset {
    pub fn new(
        transitions: Vec<Transition>,
        trajectory_bounds: Option<Vec<Range<usize>>>,
        kind: CollectionKind,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::invalid("dataset is empty"));
        }
        for (i, t) in transitions.iter().enumerate() {
            if !t.r.is_finite() || !t.is_ratio.is_finite() || t.is_ratio < 0.0 {
                return Err(Error::invalid(format!("transition {i} has invalid reward or ratio")));
            }
            if t.loop_flag && (t.r != 0.0 || t.s_next != t.s) {
                return Err(Error::invalid(format!("loop transition {i} must be a zero-reward self-loop")));
            }
        }
        if let Some(bounds) = &trajectory_bounds {
            let mut next = 0;
            for b in bounds {
                if b.start != next || b.end <= b.start {
                    return Err(Error::invalid("trajectory bounds do not partition the dataset"));
                }
                next = b.end;
            }
            if next != transitions.len() {
                return Err(Error::invalid("trajectory bounds do not cover the dataset"));
            }
        }
        Ok(Self {
            transitions,
            trajectory_bounds,
            kind,
        })
    }

    pub fn transitions(&self) -> &[Transition] {
        &self.transitions
    }

    pub fn trajectory_bounds(&self) -> Option<&[Range<usize>]> {
        self.trajectory_bounds.as_deref()
    }

    pub fn kind(&self) -> CollectionKind {
        self.kind
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Number of non-loop transitions.
    pub fn n_real(&self) -> usize {
        self.transitions.iter().filter(|t| !t.loop_flag).count()
    }

    /// Fills in `is_ratio` for every transition. Fails if μ puts zero mass on
    /// an observed next action.
    pub fn with_is_ratios(&self, pi: &Policy, mu: &Policy) -> Result<Self> {
        let mut out = self.clone();
        for t in &mut out.transitions {
            t.is_ratio = is_ratio(pi, mu, t.s_next, t.a_next)?;
        }
        Ok(out)
    }

    fn check_indices(&self, n_states: usize, n_actions: usize) -> Result<()> {
        for (i, t) in self.transitions.iter().enumerate() {
            if t.s >= n_states || t.s_next >= n_states || t.a >= n_actions || t.a_next >= n_actions {
                return Err(Error::invalid(format!("transition {i} indexes outside the model")));
            }
        }
        Ok(())
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut traj_of = vec![None; self.transitions.len()];
        let mut t_of = vec![0; self.transitions.len()];
        if let Some(bounds) = &self.trajectory_bounds {
            for (j, b) in bounds.iter().enumerate() {
                for (t, i) in b.clone().enumerate() {
                    traj_of[i] = Some(j);
                    t_of[i] = t;
                }
            }
        }
        for (i, t) in self.transitions.iter().enumerate() {
            w.serialize(TransitionRecord {
                traj_id: traj_of[i],
                t: t_of[i],
                s: t.s,
                a: t.a,
                r: t.r,
                s_next: t.s_next,
                a_next: t.a_next,
                is_ratio: t.is_ratio,
                loop_flag: t.loop_flag,
            })?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn read_csv<R: Read>(reader: R) -> Result<Self> {
        let mut rd = csv::Reader::from_reader(reader);
        let mut transitions = Vec::new();
        let mut bounds: Vec<Range<usize>> = Vec::new();
        let mut last_traj = None;
        let mut any_traj = false;
        for (i, rec) in rd.deserialize::<TransitionRecord>().enumerate() {
            let rec = rec?;
            if let Some(j) = rec.traj_id {
                any_traj = true;
                if last_traj == Some(j) {
                    bounds.last_mut().expect("open trajectory").end = i + 1;
                } else {
                    bounds.push(i..i + 1);
                }
            }
            last_traj = rec.traj_id;
            transitions.push(Transition {
                s: rec.s,
                a: rec.a,
                r: rec.r,
                s_next: rec.s_next,
                a_next: rec.a_next,
                is_ratio: rec.is_ratio,
                loop_flag: rec.loop_flag,
            });
        }
        if any_traj {
            TransitionDataset::new(transitions, Some(bounds), CollectionKind::Trajectory)
        } else {
            TransitionDataset::new(transitions, None, CollectionKind::Iid)
        }
    }
}

#[derive(Debug, Serialize, Deserialize)]
struct TransitionRecord {
    traj_id: Option<usize>,
    t: usize,
    s: usize,
    a: usize,
    r: f64,
    s_next: usize,
    a_next: usize,
    is_ratio: f64,
    loop_flag: bool,
}

fn is_ratio(pi: &Policy, mu: &Policy, s: usize, a: usize) -> Result<f64> {
    let b = mu.prob(s, a);
    if b <= 0.0 {
        return Err(Error::Coverage(format!(
            "behaviour probability of action {a} at state {s} is zero"
        )));
    }
    Ok(pi.prob(s, a) / b)
}

fn check_distribution(v: &Vector, len: usize, what: &str) -> Result<()> {
    if v.len() != len {
        return Err(Error::shape(format!("{what} has length {}, expected {len}", v.len())));
    }
    if v.iter().any(|&x| !x.is_finite() || x < 0.0) || (v.sum() - 1.0).abs() > DIST_TOL {
        return Err(Error::invalid(format!("{what} is not a probability distribution")));
    }
    Ok(())
}

fn sampler(probs: impl IntoIterator<Item = f64>) -> WeightedIndex<f64> {
    WeightedIndex::new(probs).expect("validated distribution")
}

struct Samplers {
    next_state: Vec<WeightedIndex<f64>>,
    policy: Vec<WeightedIndex<f64>>,
}

impl Samplers {
    fn new(mdp: &Mdp, policy: &Policy) -> Self {
        Self {
            next_state: mdp
                .transition()
                .row_iter()
                .map(|row| sampler(row.iter().copied()))
                .collect(),
            policy: policy
                .probs()
                .row_iter()
                .map(|row| sampler(row.iter().copied()))
                .collect(),
        }
    }
}

/// Samples `n` pairs from λ, then a reward, next state and next action from π.
pub fn collect_iid(
    mdp: &Mdp,
    lambda: &Vector,
    pi: &Policy,
    n: usize,
    seed: u64,
) -> Result<TransitionDataset> {
    check_distribution(lambda, mdp.n_state_actions(), "lambda")?;
    if n == 0 {
        return Err(Error::invalid("need at least one transition"));
    }
    if pi.n_states() != mdp.n_states() || pi.n_actions() != mdp.n_actions() {
        return Err(Error::shape("policy does not match MDP"));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let pairs = sampler(lambda.iter().copied());
    let smp = Samplers::new(mdp, pi);
    let na = mdp.n_actions();
    let transitions = (0..n)
        .map(|_| {
            let i = pairs.sample(&mut rng);
            let (s, a) = (i / na, i % na);
            let s_next = smp.next_state[i].sample(&mut rng);
            let a_next = smp.policy[s_next].sample(&mut rng);
            Transition {
                s,
                a,
                r: mdp.reward_of(s, a),
                s_next,
                a_next,
                is_ratio: 1.0,
                loop_flag: false,
            }
        })
        .collect();
    TransitionDataset::new(transitions, None, CollectionKind::Iid)
}

/// Rolls out `n_traj` trajectories of at most `horizon` steps under μ.
///
/// A trajectory stops early when it enters a terminal state. Each trajectory
/// ends with a zero-reward self-loop on its final pair `(s_T, a_T)`, where
/// `a_T ~ μ(.|s_T)` is the next action of the last real transition, so every
/// bootstrapped pair is also a trained pair.
pub fn collect_trajectories(
    mdp: &Mdp,
    mu: &Policy,
    start: &Vector,
    n_traj: usize,
    horizon: usize,
    terminals: &[usize],
    seed: u64,
) -> Result<TransitionDataset> {
    check_distribution(start, mdp.n_states(), "start distribution")?;
    if horizon == 0 || n_traj == 0 {
        return Err(Error::invalid("horizon and trajectory count must be positive"));
    }
    if mu.n_states() != mdp.n_states() || mu.n_actions() != mdp.n_actions() {
        return Err(Error::shape("behaviour policy does not match MDP"));
    }
    if terminals.iter().any(|&s| s >= mdp.n_states()) {
        return Err(Error::invalid("terminal state out of range"));
    }
    let mut is_terminal = vec![false; mdp.n_states()];
    for &s in terminals {
        is_terminal[s] = true;
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let starts = sampler(start.iter().copied());
    let smp = Samplers::new(mdp, mu);
    let mut transitions = Vec::new();
    let mut bounds = Vec::with_capacity(n_traj);
    for _ in 0..n_traj {
        let begin = transitions.len();
        let mut s = starts.sample(&mut rng);
        let mut a = smp.policy[s].sample(&mut rng);
        if !is_terminal[s] {
            for _ in 0..horizon {
                let s_next = smp.next_state[mdp.index(s, a)].sample(&mut rng);
                let a_next = smp.policy[s_next].sample(&mut rng);
                transitions.push(Transition {
                    s,
                    a,
                    r: mdp.reward_of(s, a),
                    s_next,
                    a_next,
                    is_ratio: 1.0,
                    loop_flag: false,
                });
                s = s_next;
                a = a_next;
                if is_terminal[s] {
                    break;
                }
            }
        }
        transitions.push(loop_transition(s, a));
        bounds.push(begin..transitions.len());
    }
    TransitionDataset::new(transitions, Some(bounds), CollectionKind::Trajectory)
}

fn loop_transition(s: usize, a: usize) -> Transition {
    Transition {
        s,
        a,
        r: 0.0,
        s_next: s,
        a_next: a,
        is_ratio: 1.0,
        loop_flag: true,
    }
}

/// Resamples every real next action from π. Loop transitions follow the
/// relabelled final action so they stay self-loops on the last bootstrapped
/// pair.
pub fn relabel_next_actions(
    dataset: &TransitionDataset,
    pi: &Policy,
    seed: u64,
) -> Result<TransitionDataset> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let policy: Vec<_> = pi
        .probs()
        .row_iter()
        .map(|row| sampler(row.iter().copied()))
        .collect();
    let mut out = dataset.clone();
    let mut prev: Option<usize> = None;
    for t in &mut out.transitions {
        if t.s_next >= policy.len() {
            return Err(Error::invalid("transition state outside policy"));
        }
        if t.loop_flag {
            if let Some(a) = prev {
                t.a = a;
                t.a_next = a;
            }
            prev = None;
        } else {
            t.a_next = policy[t.s_next].sample(&mut rng);
            t.is_ratio = 1.0;
            prev = Some(t.a_next);
        }
    }
    Ok(out)
}

/// The matrices the learners iterate on: `M`, `N`, `R`, diag `D` and γ.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearSystem {
    pub m: Matrix,
    pub n: Matrix,
    pub r: Vector,
    /// Diagonal of `D_k`.
    pub d: Vector,
    pub gamma: f64,
}

impl LinearSystem {
    pub fn new(m: Matrix, n: Matrix, r: Vector, d: Vector, gamma: f64) -> Result<Self> {
        let k = m.nrows();
        if n.shape() != m.shape() || r.len() != k || d.len() != k {
            return Err(Error::shape(format!(
                "M {:?}, N {:?}, R {}, D {} are inconsistent",
                m.shape(),
                n.shape(),
                r.len(),
                d.len()
            )));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::invalid("discount must lie in [0,1)"));
        }
        if d.iter().any(|&x| x < 0.0 || !x.is_finite()) {
            return Err(Error::invalid("weights must be nonnegative"));
        }
        Ok(Self { m, n, r, d, gamma })
    }

    /// The expected-update system: every pair with λ > 0 is a row, `M = HΦ`,
    /// `N = H P_π Φ`, `D = diag(λ)` restricted to the support.
    pub fn expected(mdp: &Mdp, pi: &Policy, phi: &FeatureMatrix, lambda: &Vector) -> Result<Self> {
        phi.check_against(mdp)?;
        check_distribution(lambda, mdp.n_state_actions(), "lambda")?;
        let p_pi = mdp::state_action_transition(mdp, pi)?;
        let rows: Vec<usize> = (0..lambda.len()).filter(|&i| lambda[i] > 0.0).collect();
        let pf = &p_pi * phi.matrix();
        let m = phi.matrix().select_rows(&rows);
        let n = pf.select_rows(&rows);
        let r = Vector::from_iterator(rows.len(), rows.iter().map(|&i| mdp.reward()[i]));
        let d = Vector::from_iterator(rows.len(), rows.iter().map(|&i| lambda[i]));
        LinearSystem::new(m, n, r, d, mdp.gamma())
    }

    pub fn k(&self) -> usize {
        self.m.nrows()
    }

    pub fn dim(&self) -> usize {
        self.m.ncols()
    }

    pub fn is_over_parameterized(&self) -> bool {
        self.dim() > self.k()
    }

    /// `W = N M†`.
    pub fn w(&self) -> Result<Matrix> {
        Ok(&self.n * numerics::pinv_default(&self.m)?)
    }

    /// `M - γN`.
    pub fn g(&self) -> Matrix {
        &self.m - self.gamma * &self.n
    }
}

/// How next actions are reconciled with the target policy.
#[derive(Debug, Clone, Copy)]
pub enum Correction<'a> {
    /// Next actions in the data were already drawn from π (or no correction).
    SampleTargetAction,
    /// Ratio-weighted next pairs normalised by the visit count.
    Is { pi: &'a Policy, mu: &'a Policy },
    /// Ratio-weighted next pairs normalised by the ratio sum.
    Nis { pi: &'a Policy, mu: &'a Policy },
}

#[derive(Debug, Clone)]
pub struct EmpiricalModel {
    n_states: usize,
    n_actions: usize,
    seen_pairs: Vec<(usize, usize)>,
    counts: Vec<usize>,
    has_loop: Vec<bool>,
    n_total: usize,
    h: Matrix,
    p_hat: Matrix,
    /// Empirical next-state law per seen pair, `k x |S|`.
    p_state: Matrix,
    phi: Matrix,
    system: LinearSystem,
    is_mode: bool,
}

impl EmpiricalModel {
    pub fn k(&self) -> usize {
        self.seen_pairs.len()
    }

    pub fn n_states(&self) -> usize {
        self.n_states
    }

    pub fn n_actions(&self) -> usize {
        self.n_actions
    }

    /// Seen pairs in order of first occurrence.
    pub fn seen_pairs(&self) -> &[(usize, usize)] {
        &self.seen_pairs
    }

    pub fn counts(&self) -> &[usize] {
        &self.counts
    }

    /// Whether each seen pair carries an appended loop transition.
    pub fn has_loop(&self) -> &[bool] {
        &self.has_loop
    }

    pub fn min_count(&self) -> usize {
        self.counts.iter().copied().min().unwrap_or(0)
    }

    pub fn n_total(&self) -> usize {
        self.n_total
    }

    pub fn h(&self) -> &Matrix {
        &self.h
    }

    /// `P̂_π`, `|S||A| x |S||A|`, zero rows for unseen pairs. In IS mode these
    /// are the ratio-weighted (unnormalised) estimates.
    pub fn p_hat(&self) -> &Matrix {
        &self.p_hat
    }

    pub fn p_state(&self) -> &Matrix {
        &self.p_state
    }

    pub fn phi(&self) -> &Matrix {
        &self.phi
    }

    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn gamma(&self) -> f64 {
        self.system.gamma
    }

    pub fn is_over_parameterized(&self) -> bool {
        self.system.is_over_parameterized()
    }

    /// `rank(M) = k`, which the over-parameterized results assume.
    pub fn has_full_row_rank(&self) -> bool {
        numerics::rank(&self.system.m, 1e-10) == self.k()
    }

    pub fn is_is_mode(&self) -> bool {
        self.is_mode
    }

    pub fn m(&self) -> &Matrix {
        &self.system.m
    }

    pub fn n(&self) -> &Matrix {
        &self.system.n
    }

    pub fn r(&self) -> &Vector {
        &self.system.r
    }

    pub fn dk(&self) -> &Vector {
        &self.system.d
    }
}

#[derive(Debug, Clone)]
pub struct NisModel {
    p_hat_nis: Matrix,
    system: LinearSystem,
    rho_max: f64,
    rho_min: f64,
}

impl NisModel {
    pub fn p_hat_nis(&self) -> &Matrix {
        &self.p_hat_nis
    }

    /// `M`, `N_NIS`, `R`, `D_{k,NIS}`.
    pub fn system(&self) -> &LinearSystem {
        &self.system
    }

    pub fn n_nis(&self) -> &Matrix {
        &self.system.n
    }

    pub fn dk_nis(&self) -> &Vector {
        &self.system.d
    }

    pub fn rho_max(&self) -> f64 {
        self.rho_max
    }

    pub fn rho_min(&self) -> f64 {
        self.rho_min
    }

    /// Ratio of the largest to the smallest importance ratio in the data;
    /// infinite if some observed ratio is zero.
    pub fn rho_m(&self) -> f64 {
        if self.rho_min > 0.0 {
            self.rho_max / self.rho_min
        } else {
            f64::INFINITY
        }
    }
}

pub fn build_empirical(
    dataset: &TransitionDataset,
    phi: &FeatureMatrix,
    n_states: usize,
    gamma: f64,
    mode: Correction<'_>,
) -> Result<(EmpiricalModel, Option<NisModel>)> {
    let na = phi.n_actions();
    if phi.n_rows() != n_states * na {
        return Err(Error::shape("feature matrix does not match the state count"));
    }
    dataset.check_indices(n_states, na)?;
    let n_sa = n_states * na;

    let mut row_of: HashMap<usize, usize> = HashMap::new();
    let mut seen_pairs = Vec::new();
    let mut counts: Vec<usize> = Vec::new();
    for t in dataset.transitions() {
        let i = t.s * na + t.a;
        let row = *row_of.entry(i).or_insert_with(|| {
            seen_pairs.push((t.s, t.a));
            counts.push(0);
            seen_pairs.len() - 1
        });
        counts[row] += 1;
    }
    let k = seen_pairs.len();
    let n_total = dataset.len();

    let ratios: Vec<f64> = match mode {
        Correction::SampleTargetAction => vec![1.0; n_total],
        Correction::Is { pi, mu } | Correction::Nis { pi, mu } => dataset
            .transitions()
            .iter()
            .map(|t| is_ratio(pi, mu, t.s_next, t.a_next))
            .collect::<Result<_>>()?,
    };

    let mut h = Matrix::zeros(k, n_sa);
    let mut p_hat = Matrix::zeros(n_sa, n_sa);
    let mut p_nis = Matrix::zeros(n_sa, n_sa);
    let mut p_state = Matrix::zeros(k, n_states);
    let mut r = Vector::zeros(k);
    let mut ratio_sum = vec![0.0; k];
    let mut has_loop = vec![false; k];
    for (&(s, a), row) in seen_pairs.iter().zip(0..) {
        h[(row, s * na + a)] = 1.0;
    }
    let weighted = !matches!(mode, Correction::SampleTargetAction);
    for (t, &rho) in dataset.transitions().iter().zip(&ratios) {
        let i = t.s * na + t.a;
        let j = t.s_next * na + t.a_next;
        let row = row_of[&i];
        let c = counts[row] as f64;
        p_hat[(i, j)] += if weighted { rho } else { 1.0 } / c;
        p_nis[(i, j)] += rho;
        p_state[(row, t.s_next)] += 1.0 / c;
        r[row] += t.r / c;
        ratio_sum[row] += rho;
        has_loop[row] |= t.loop_flag;
    }

    let m = &h * phi.matrix();
    let n = &h * &p_hat * phi.matrix();
    let d = Vector::from_iterator(k, counts.iter().map(|&c| c as f64 / n_total as f64));
    let system = LinearSystem::new(m.clone(), n, r.clone(), d, gamma)?;

    let nis = match mode {
        Correction::Nis { .. } => {
            for (&(s, a), row) in seen_pairs.iter().zip(0..) {
                let i = s * na + a;
                if ratio_sum[row] > 0.0 {
                    let z = ratio_sum[row];
                    p_nis.row_mut(i).iter_mut().for_each(|x| *x /= z);
                }
            }
            let total: f64 = ratio_sum.iter().sum();
            if total <= 0.0 {
                return Err(Error::Coverage("every importance ratio is zero".into()));
            }
            let d_nis = Vector::from_iterator(k, ratio_sum.iter().map(|&w| w / total));
            let n_nis = &h * &p_nis * phi.matrix();
            let rho_max = ratios.iter().copied().fold(0.0, f64::max);
            let rho_min = ratios.iter().copied().fold(f64::INFINITY, f64::min);
            Some(NisModel {
                p_hat_nis: p_nis,
                system: LinearSystem::new(m, n_nis, r, d_nis, gamma)?,
                rho_max,
                rho_min,
            })
        }
        _ => None,
    };

    let model = EmpiricalModel {
        n_states,
        n_actions: na,
        seen_pairs,
        counts,
        has_loop,
        n_total,
        h,
        p_hat,
        p_state,
        phi: phi.matrix().clone(),
        system,
        is_mode: matches!(mode, Correction::Is { .. }),
    };
    Ok((model, nis))
}

/// Collects `n` transitions from every pair (next actions from μ) and returns
/// the largest deviation of the NIS estimate from `P_π`.
pub fn nis_consistency_probe(
    mdp: &Mdp,
    pi: &Policy,
    mu: &Policy,
    n: usize,
    seed: u64,
) -> Result<f64> {
    let n_sa = mdp.n_state_actions();
    let na = mdp.n_actions();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let smp = Samplers::new(mdp, mu);
    let mut est = Matrix::zeros(n_sa, n_sa);
    for i in 0..n_sa {
        let mut z = 0.0;
        for _ in 0..n {
            let s_next = smp.next_state[i].sample(&mut rng);
            let a_next = smp.policy[s_next].sample(&mut rng);
            let rho = is_ratio(pi, mu, s_next, a_next)?;
            est[(i, s_next * na + a_next)] += rho;
            z += rho;
        }
        if z > 0.0 {
            est.row_mut(i).iter_mut().for_each(|x| *x /= z);
        }
    }
    let p_pi = mdp::state_action_transition(mdp, pi)?;
    Ok((est - p_pi).abs().max())
}
