//! Experiment configuration files (TOML).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use ottd_core::learners::{Algorithm, LearnerConfig};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliError, CliResult};

/// Algorithms selectable from a config file.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AlgorithmName {
    Otd,
    Ottd,
    Rm,
    BairdRm,
    Gtd2,
    Tdc,
    OttdIs,
    OttdNis,
    Otq,
    ExpectedTd,
    ExpectedTargetTd,
}

impl AlgorithmName {
    pub fn as_str(self) -> &'static str {
        match self {
            AlgorithmName::Otd => "otd",
            AlgorithmName::Ottd => "ottd",
            AlgorithmName::Rm => "rm",
            AlgorithmName::BairdRm => "baird_rm",
            AlgorithmName::Gtd2 => "gtd2",
            AlgorithmName::Tdc => "tdc",
            AlgorithmName::OttdIs => "ottd_is",
            AlgorithmName::OttdNis => "ottd_nis",
            AlgorithmName::Otq => "otq",
            AlgorithmName::ExpectedTd => "expected_td",
            AlgorithmName::ExpectedTargetTd => "expected_target_td",
        }
    }

    /// The update rule that runs on the prepared system.
    pub fn core(self) -> Algorithm {
        match self {
            AlgorithmName::Otd | AlgorithmName::ExpectedTd => Algorithm::Otd,
            AlgorithmName::Ottd
            | AlgorithmName::OttdIs
            | AlgorithmName::OttdNis
            | AlgorithmName::ExpectedTargetTd => Algorithm::Ottd,
            AlgorithmName::Rm => Algorithm::Rm,
            AlgorithmName::BairdRm => Algorithm::BairdRm,
            AlgorithmName::Gtd2 => Algorithm::Gtd2,
            AlgorithmName::Tdc => Algorithm::Tdc,
            AlgorithmName::Otq => Algorithm::Otq,
        }
    }

    /// Correction forced by the algorithm, if any.
    pub fn forced_correction(self) -> Option<CorrectionMode> {
        match self {
            AlgorithmName::OttdIs => Some(CorrectionMode::Is),
            AlgorithmName::OttdNis => Some(CorrectionMode::Nis),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum CorrectionMode {
    /// Behaviour next actions used as if drawn from the target policy.
    None,
    #[default]
    TargetAction,
    Is,
    Nis,
}

impl CorrectionMode {
    pub fn as_str(self) -> &'static str {
        match self {
            CorrectionMode::None => "none",
            CorrectionMode::TargetAction => "target_action",
            CorrectionMode::Is => "is",
            CorrectionMode::Nis => "nis",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum DatasetKind {
    Iid,
    #[default]
    Trajectory,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DatasetConfig {
    /// Total number of real transitions.
    #[serde(default = "default_size")]
    pub size: usize,
    #[serde(default)]
    pub kind: DatasetKind,
    #[serde(default = "default_horizon")]
    pub horizon: usize,
    /// Added to each run seed to get the collection seed.
    #[serde(default)]
    pub seed: u64,
    /// Load this CSV instead of collecting.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub path: Option<PathBuf>,
}

fn default_size() -> usize {
    300
}

fn default_horizon() -> usize {
    30
}

impl Default for DatasetConfig {
    fn default() -> Self {
        Self {
            size: default_size(),
            kind: DatasetKind::Trajectory,
            horizon: default_horizon(),
            seed: 0,
            path: None,
        }
    }
}

/// Per-algorithm overrides of the learning rates and window.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Hyper {
    pub eta: Option<f64>,
    pub eta2: Option<f64>,
    pub m: Option<usize>,
    pub mix: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RandomConfig {
    pub k: usize,
    pub d: usize,
    #[serde(default = "default_true")]
    pub ensure_condition: bool,
}

fn default_true() -> bool {
    true
}

/// How the two-state problem samples its states.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum LambdaSpec {
    Named(String),
    Values(Vec<f64>),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment_id: String,
    /// `baird`, `two_state`, `four_room`, `random` or `file:<path>`.
    pub problem: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub algorithm: Option<AlgorithmName>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub algorithms: Vec<AlgorithmName>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub correction_mode: Option<CorrectionMode>,
    #[serde(default, flatten)]
    pub hyper: Hyper,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub overrides: BTreeMap<AlgorithmName, Hyper>,
    pub seeds: Vec<u64>,
    #[serde(default = "default_max_iters")]
    pub max_iters: usize,
    #[serde(default = "default_record_every")]
    pub record_every: usize,
    #[serde(default = "default_tol")]
    pub tol: f64,
    #[serde(default = "default_divergence")]
    pub divergence_threshold: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub gamma: Option<f64>,
    #[serde(default)]
    pub dataset: DatasetConfig,
    #[serde(default = "default_delta")]
    pub delta: f64,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    /// Two-state sampling distribution: `pathological`, `uniform` or explicit weights.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<LambdaSpec>,
    /// Two-state only: use the `[Φ | I]` features.
    #[serde(default)]
    pub over_parameterized: bool,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub random: Option<RandomConfig>,
}

fn default_max_iters() -> usize {
    10_000
}

fn default_record_every() -> usize {
    1
}

fn default_tol() -> f64 {
    1e-10
}

fn default_divergence() -> f64 {
    1e8
}

fn default_delta() -> f64 {
    0.1
}

fn default_output() -> PathBuf {
    PathBuf::from("out")
}

/// What `problem` names.
#[derive(Debug, Clone, PartialEq)]
pub enum ProblemKind {
    Baird,
    TwoState,
    FourRoom,
    Random,
    File(PathBuf),
}

impl ExperimentConfig {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let mut cfg: Self =
            toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))?;
        cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
        cfg.validate()?;
        Ok(cfg)
    }

    /// Makes file references relative to the config's directory.
    fn resolve_paths(&mut self, base: &Path) {
        if let Some(rest) = self.problem.strip_prefix("file:") {
            let p = Path::new(rest);
            if p.is_relative() {
                self.problem = format!("file:{}", base.join(p).display());
            }
        }
        if let Some(p) = &self.dataset.path {
            if p.is_relative() {
                self.dataset.path = Some(base.join(p));
            }
        }
    }

    pub fn problem_kind(&self) -> CliResult<ProblemKind> {
        Ok(match self.problem.as_str() {
            "baird" => ProblemKind::Baird,
            "two_state" => ProblemKind::TwoState,
            "four_room" => ProblemKind::FourRoom,
            "random" => ProblemKind::Random,
            other => match other.strip_prefix("file:") {
                Some(p) => ProblemKind::File(PathBuf::from(p)),
                None => return Err(invalid(format!("unknown problem {other:?}"))),
            },
        })
    }

    /// `algorithms` followed by `algorithm`, without duplicates.
    pub fn algorithm_list(&self) -> Vec<AlgorithmName> {
        let mut out = self.algorithms.clone();
        if let Some(a) = self.algorithm {
            if !out.contains(&a) {
                out.push(a);
            }
        }
        out
    }

    pub fn validate(&self) -> CliResult<()> {
        if self.experiment_id.trim().is_empty() {
            return Err(invalid("experiment_id must not be empty"));
        }
        if self.seeds.is_empty() {
            return Err(invalid("seeds must not be empty"));
        }
        if self.algorithm_list().is_empty() {
            return Err(invalid("no algorithm given"));
        }
        match self.problem_kind()? {
            ProblemKind::File(p) if !p.is_file() => {
                return Err(invalid(format!("problem file {} does not exist", p.display())));
            }
            ProblemKind::Random if self.random.is_none() => {
                return Err(invalid("problem = \"random\" needs a [random] table"));
            }
            _ => {}
        }
        if let Some(p) = &self.dataset.path {
            if !p.is_file() {
                return Err(invalid(format!("dataset file {} does not exist", p.display())));
            }
        }
        if let Some(g) = self.gamma {
            if !(0.0..1.0).contains(&g) {
                return Err(invalid(format!("gamma must lie in [0, 1), got {g}")));
            }
        }
        if !(self.delta > 0.0 && self.delta <= 1.0) {
            return Err(invalid(format!("delta must lie in (0, 1], got {}", self.delta)));
        }
        if self.dataset.size == 0 || self.dataset.horizon == 0 {
            return Err(invalid("dataset size and horizon must be positive"));
        }
        for alg in self.algorithm_list() {
            self.learner_config(alg, self.problem_kind()?, self.correction(alg))
                .validate()?;
        }
        Ok(())
    }

    pub fn correction(&self, alg: AlgorithmName) -> CorrectionMode {
        alg.forced_correction()
            .or(self.correction_mode)
            .unwrap_or_default()
    }

    /// Tuned defaults, then the top-level values, then per-algorithm overrides.
    pub fn learner_config(&self, alg: AlgorithmName, kind: ProblemKind, mode: CorrectionMode) -> LearnerConfig {
        let mut cfg = default_hyper(alg, &kind, mode);
        for h in [Some(&self.hyper), self.overrides.get(&alg)].into_iter().flatten() {
            if let Some(v) = h.eta {
                cfg.eta = v;
            }
            if let Some(v) = h.eta2 {
                cfg.eta2 = v;
            }
            if let Some(v) = h.m {
                cfg.m = v;
            }
            if let Some(v) = h.mix {
                cfg.mix = v;
            }
        }
        cfg.max_iters = self.max_iters;
        cfg.record_every = self.record_every;
        cfg.tol = self.tol;
        cfg.divergence_threshold = self.divergence_threshold;
        cfg
    }
}

/// Tuned rates: the Baird set for expected problems, the four-room set
/// (by correction) for dataset problems.
pub fn default_hyper(alg: AlgorithmName, kind: &ProblemKind, mode: CorrectionMode) -> LearnerConfig {
    let base = LearnerConfig::baird_defaults(alg.core());
    if *kind != ProblemKind::FourRoom || alg.core() != Algorithm::Ottd {
        return base;
    }
    let eta = match mode {
        CorrectionMode::None => 0.95,
        CorrectionMode::TargetAction => 0.97,
        CorrectionMode::Nis => 0.97,
        CorrectionMode::Is => 0.02,
    };
    LearnerConfig { eta, m: 1, ..base }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn parse(text: &str) -> CliResult<ExperimentConfig> {
        let cfg: ExperimentConfig = toml::from_str(text).map_err(|e| invalid(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    #[test]
    fn minimal_config_uses_defaults() {
        let cfg = parse("experiment_id = \"b\"\nproblem = \"baird\"\nalgorithm = \"ottd\"\nseeds = [0]\n").unwrap();
        let lc = cfg.learner_config(AlgorithmName::Ottd, ProblemKind::Baird, CorrectionMode::TargetAction);
        assert_eq!((lc.eta, lc.m), (0.997, 3));
        assert_eq!(cfg.dataset.size, 300);
    }

    #[test]
    fn four_room_rates() {
        let cfg = parse(
            "experiment_id = \"f\"\nproblem = \"four_room\"\nalgorithms = [\"ottd\", \"ottd_is\", \"ottd_nis\"]\nseeds = [0]\n",
        )
        .unwrap();
        let rate = |a| cfg.learner_config(a, ProblemKind::FourRoom, cfg.correction(a)).eta;
        assert_eq!(rate(AlgorithmName::Ottd), 0.97);
        assert_eq!(rate(AlgorithmName::OttdIs), 0.02);
        assert_eq!(rate(AlgorithmName::OttdNis), 0.97);
    }

    #[test]
    fn overrides_apply_last() {
        let cfg = parse(
            "experiment_id = \"b\"\nproblem = \"baird\"\nalgorithms = [\"ottd\", \"rm\"]\neta = 0.1\nseeds = [0]\n[overrides.rm]\neta = 0.3\n",
        )
        .unwrap();
        let kind = ProblemKind::Baird;
        assert_eq!(cfg.learner_config(AlgorithmName::Ottd, kind.clone(), CorrectionMode::None).eta, 0.1);
        assert_eq!(cfg.learner_config(AlgorithmName::Rm, kind, CorrectionMode::None).eta, 0.3);
    }

    #[test]
    fn rejects_bad_configs() {
        assert!(parse("experiment_id = \"b\"\nproblem = \"baird\"\nalgorithm = \"ottd\"\nseeds = []\n").is_err());
        assert!(parse("experiment_id = \"b\"\nproblem = \"nope\"\nalgorithm = \"ottd\"\nseeds = [0]\n").is_err());
        assert!(parse("experiment_id = \"b\"\nproblem = \"file:/no/such.toml\"\nalgorithm = \"ottd\"\nseeds = [0]\n").is_err());
        assert!(parse("experiment_id = \"b\"\nproblem = \"baird\"\nalgorithm = \"ottd\"\nseeds = [0]\nm = 0\n").is_err());
        assert!(parse("experiment_id = \"b\"\nproblem = \"baird\"\nalgorithm = \"ottd\"\nseeds = [0]\nbogus = 1\n").is_err());
    }
}
