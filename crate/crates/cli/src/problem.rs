//! Plain-text (TOML) description of a finite MDP with features and policies.
//!
//! Rows of `transition`, `reward` and `features` follow the state-action
//! index `s * n_actions + a`.

use std::path::Path;

use ottd_core::mdp::{FeatureMatrix, Mdp, Policy};
use ottd_core::numerics::{Matrix, Vector};
use serde::{Deserialize, Serialize};

use crate::error::{invalid, CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProblemFile {
    pub n_states: usize,
    pub n_actions: usize,
    pub gamma: f64,
    /// `n_states * n_actions` rows of `n_states` next-state probabilities.
    pub transition: Vec<Vec<f64>>,
    pub reward: Vec<f64>,
    pub features: Vec<Vec<f64>>,
    /// `n_states` rows of action probabilities.
    pub target_policy: Vec<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub behavior_policy: Option<Vec<Vec<f64>>>,
    /// Start-state distribution for trajectory collection.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub start: Option<Vec<f64>>,
    /// Sampling distribution over state-action pairs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub lambda: Option<Vec<f64>>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub terminals: Vec<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub theta0: Option<Vec<f64>>,
}

/// A problem file turned into library types.
#[derive(Debug, Clone)]
pub struct LoadedProblem {
    pub mdp: Mdp,
    pub phi: FeatureMatrix,
    pub target: Policy,
    pub behavior: Policy,
    pub start: Vector,
    pub lambda: Vector,
    pub terminals: Vec<usize>,
    pub theta0: Vector,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> CliResult<Matrix> {
    let ncols = rows.first().map_or(0, Vec::len);
    if rows.is_empty() || ncols == 0 || rows.iter().any(|r| r.len() != ncols) {
        return Err(invalid(format!("{what} must be a nonempty rectangular table")));
    }
    Ok(Matrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn to_rows(m: &Matrix) -> Vec<Vec<f64>> {
    m.row_iter().map(|r| r.iter().copied().collect()).collect()
}

impl ProblemFile {
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        toml::from_str(&text).map_err(|e| invalid(format!("{}: {e}", path.display())))
    }

    pub fn save(&self, path: &Path) -> CliResult<()> {
        let text = toml::to_string(self).map_err(|e| invalid(e.to_string()))?;
        std::fs::write(path, text).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))
    }

    pub fn from_parts(mdp: &Mdp, phi: &FeatureMatrix, target: &Policy) -> Self {
        Self {
            n_states: mdp.n_states(),
            n_actions: mdp.n_actions(),
            gamma: mdp.gamma(),
            transition: to_rows(mdp.transition()),
            reward: mdp.reward().iter().copied().collect(),
            features: to_rows(phi.matrix()),
            target_policy: to_rows(target.probs()),
            behavior_policy: None,
            start: None,
            lambda: None,
            terminals: Vec::new(),
            theta0: None,
        }
    }

    /// Missing behaviour policy defaults to the target, missing start and
    /// sampling distributions to uniform, missing `theta0` to zero.
    pub fn build(&self, gamma: Option<f64>) -> CliResult<LoadedProblem> {
        let (ns, na) = (self.n_states, self.n_actions);
        let p = to_matrix(&self.transition, "transition")?;
        let r = Vector::from_vec(self.reward.clone());
        let mdp = Mdp::new(ns, na, p, r, gamma.unwrap_or(self.gamma))?;
        let phi = FeatureMatrix::new(to_matrix(&self.features, "features")?, na)?;
        phi.check_against(&mdp)?;
        let target = Policy::new(to_matrix(&self.target_policy, "target_policy")?)?;
        let behavior = match &self.behavior_policy {
            Some(rows) => Policy::new(to_matrix(rows, "behavior_policy")?)?,
            None => target.clone(),
        };
        for p in [&target, &behavior] {
            if p.n_states() != ns || p.n_actions() != na {
                return Err(invalid("policy shape does not match the MDP"));
            }
        }
        let dist = |v: &Option<Vec<f64>>, n: usize, what: &str| -> CliResult<Vector> {
            match v {
                Some(v) if v.len() != n => Err(invalid(format!("{what} needs {n} entries"))),
                Some(v) => Ok(Vector::from_vec(v.clone())),
                None => Ok(Vector::from_element(n, 1.0 / n as f64)),
            }
        };
        let start = dist(&self.start, ns, "start")?;
        let lambda = dist(&self.lambda, ns * na, "lambda")?;
        if self.terminals.iter().any(|&s| s >= ns) {
            return Err(invalid("terminal state out of range"));
        }
        let theta0 = match &self.theta0 {
            Some(t) if t.len() != phi.dim() => return Err(invalid("theta0 does not match the feature dimension")),
            Some(t) => Vector::from_vec(t.clone()),
            None => Vector::zeros(phi.dim()),
        };
        Ok(LoadedProblem {
            mdp,
            phi,
            target,
            behavior,
            start,
            lambda,
            terminals: self.terminals.clone(),
            theta0,
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ottd_core::envs::random::{random_features, random_mdp, random_policy};

    #[test]
    fn round_trip_is_exact() {
        let mdp = random_mdp(3, 2, 0.9, 11).unwrap();
        let phi = FeatureMatrix::new(random_features(6, 4, 12), 2).unwrap();
        let pi = random_policy(3, 2, 0.1, 13);
        let mut file = ProblemFile::from_parts(&mdp, &phi, &pi);
        file.behavior_policy = Some(to_rows(random_policy(3, 2, 0.1, 14).probs()));
        file.terminals = vec![2];
        file.theta0 = Some(vec![0.1, -1.0 / 3.0, 2.0, 1e-300]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.toml");
        file.save(&path).unwrap();
        let back = ProblemFile::load(&path).unwrap();
        assert_eq!(back, file);
        let built = back.build(None).unwrap();
        assert_eq!(built.mdp.transition(), mdp.transition());
        assert_eq!(built.mdp.reward(), mdp.reward());
        assert_eq!(built.phi.matrix(), phi.matrix());
    }

    #[test]
    fn rejects_bad_shapes() {
        let mdp = random_mdp(2, 1, 0.9, 1).unwrap();
        let phi = FeatureMatrix::tabular(2, 1);
        let mut file = ProblemFile::from_parts(&mdp, &phi, &Policy::uniform(2, 1));
        file.features.pop();
        assert!(file.build(None).is_err());
    }
}
