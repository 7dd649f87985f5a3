//! Scenario files: a single TOML document describing the plant, the initial
//! state, the STL formula, the planning grid, encoder configuration, and any
//! standing safety predicates.
//!
//! Matrices are row-major nested arrays. See `scenarios/` for the bundled
//! examples.

use crate::encoder::{CbfMode, EncodingConfig, SafetySpec};
use crate::lin_dynamics::{DynamicsError, LinearSystem, TimeGrid};
use crate::stl::{parse, Formula, Predicate, StlError};
use nalgebra::{DMatrix, DVector, RowDVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("cannot read scenario: {0}")]
    Io(#[from] std::io::Error),
    #[error("cannot parse scenario: {0}")]
    Toml(#[from] toml::de::Error),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error("invalid scenario: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SystemSection {
    /// State matrix, row-major.
    pub a: Vec<Vec<f64>>,
    /// Input matrix, row-major.
    pub b: Vec<Vec<f64>>,
}

#[derive(Debug, Clone, Default, Serialize, Deserialize)]
#[serde(default)]
pub struct ConfigSection {
    pub big_m: Option<f64>,
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    pub ecbf_poles: Vec<f64>,
    pub cbf_windows: Option<bool>,
    /// "zcbf" | "ecbf"
    pub always_mode: Option<String>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct SafetySection {
    pub row: Vec<f64>,
    pub offset: f64,
    #[serde(default)]
    pub name: Option<String>,
    /// "zcbf" | "ecbf"
    #[serde(default)]
    pub mode: Option<String>,
    #[serde(default)]
    pub poles: Option<Vec<f64>>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Scenario {
    pub name: String,
    pub formula: String,
    pub t_f: f64,
    pub intervals: usize,
    pub x0: Vec<f64>,
    pub system: SystemSection,
    #[serde(default)]
    pub config: ConfigSection,
    #[serde(default)]
    pub safety: Vec<SafetySection>,
}

fn to_matrix(rows: &[Vec<f64>], what: &str) -> Result<DMatrix<f64>, ScenarioError> {
    if rows.is_empty() {
        return Err(ScenarioError::Invalid(format!("{what} is empty")));
    }
    let ncols = rows[0].len();
    if rows.iter().any(|r| r.len() != ncols) {
        return Err(ScenarioError::Invalid(format!("{what} rows have uneven lengths")));
    }
    Ok(DMatrix::from_fn(rows.len(), ncols, |i, j| rows[i][j]))
}

fn parse_mode(s: Option<&str>, what: &str) -> Result<CbfMode, ScenarioError> {
    match s {
        None | Some("zcbf") => Ok(CbfMode::Zcbf),
        Some("ecbf") => Ok(CbfMode::Ecbf),
        Some(other) => Err(ScenarioError::Invalid(format!(
            "{what} mode '{other}' (expected 'zcbf' or 'ecbf')"
        ))),
    }
}

impl Scenario {
    pub fn from_toml(text: &str) -> Result<Self, ScenarioError> {
        let sc: Scenario = toml::from_str(text)?;
        sc.validate()?;
        Ok(sc)
    }

    pub fn load(path: &std::path::Path) -> Result<Self, ScenarioError> {
        Self::from_toml(&std::fs::read_to_string(path)?)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string_pretty(self).expect("scenario serializes")
    }

    fn validate(&self) -> Result<(), ScenarioError> {
        let sys = self.system()?;
        if self.x0.len() != sys.state_dim() {
            return Err(ScenarioError::Invalid(format!(
                "x0 has {} entries for a {}-state system",
                self.x0.len(),
                sys.state_dim()
            )));
        }
        if self.x0.iter().any(|v| !v.is_finite()) {
            return Err(ScenarioError::Invalid("x0 has non-finite entries".into()));
        }
        if self.intervals == 0 {
            return Err(ScenarioError::Invalid("need at least one interval".into()));
        }
        if !(self.t_f > 0.0) {
            return Err(ScenarioError::Invalid(format!("t_f must be positive, got {}", self.t_f)));
        }
        self.parsed_formula()?;
        self.encoding_config()?;
        self.safety_specs(&sys)?;
        Ok(())
    }

    pub fn system(&self) -> Result<LinearSystem, ScenarioError> {
        let a = to_matrix(&self.system.a, "system.a")?;
        let b = to_matrix(&self.system.b, "system.b")?;
        let n = a.ncols();
        Ok(LinearSystem::new(a, b, DMatrix::zeros(0, n))?)
    }

    pub fn initial_state(&self) -> DVector<f64> {
        DVector::from_row_slice(&self.x0)
    }

    pub fn base_grid(&self) -> Result<TimeGrid, ScenarioError> {
        Ok(TimeGrid::uniform(self.t_f, self.intervals)?)
    }

    pub fn parsed_formula(&self) -> Result<Formula, ScenarioError> {
        Ok(parse(&self.formula, self.system.a.len())?)
    }

    pub fn encoding_config(&self) -> Result<EncodingConfig, ScenarioError> {
        let mut cfg = EncodingConfig::default();
        let c = &self.config;
        if let Some(m) = c.big_m {
            if !(m > 0.0) {
                return Err(ScenarioError::Invalid(format!("big_m must be positive, got {m}")));
            }
            cfg.big_m = m;
        }
        if !c.u_lower.is_empty() || !c.u_upper.is_empty() {
            if c.u_lower.len() != c.u_upper.len() {
                return Err(ScenarioError::Invalid("u_lower/u_upper length mismatch".into()));
            }
            if c.u_lower.iter().zip(&c.u_upper).any(|(l, u)| l > u) {
                return Err(ScenarioError::Invalid("u_lower exceeds u_upper".into()));
            }
            cfg.u_lower = c.u_lower.clone();
            cfg.u_upper = c.u_upper.clone();
        }
        if !c.x_lower.is_empty() || !c.x_upper.is_empty() {
            if c.x_lower.len() != c.x_upper.len() {
                return Err(ScenarioError::Invalid("x_lower/x_upper length mismatch".into()));
            }
            if c.x_lower.iter().zip(&c.x_upper).any(|(l, u)| l > u) {
                return Err(ScenarioError::Invalid("x_lower exceeds x_upper".into()));
            }
            cfg.x_lower = c.x_lower.clone();
            cfg.x_upper = c.x_upper.clone();
        }
        if !c.ecbf_poles.is_empty() {
            cfg.ecbf_poles = c.ecbf_poles.clone();
        }
        if let Some(w) = c.cbf_windows {
            cfg.cbf_windows = w;
        }
        cfg.always_mode = parse_mode(c.always_mode.as_deref(), "config.always_mode")?;
        Ok(cfg)
    }

    pub fn safety_specs(&self, sys: &LinearSystem) -> Result<Vec<SafetySpec>, ScenarioError> {
        self.safety
            .iter()
            .enumerate()
            .map(|(i, s)| {
                if s.row.len() != sys.state_dim() {
                    return Err(ScenarioError::Invalid(format!(
                        "safety[{i}] row has {} entries for a {}-state system",
                        s.row.len(),
                        sys.state_dim()
                    )));
                }
                Ok(SafetySpec {
                    pred: Predicate::new(
                        RowDVector::from_row_slice(&s.row),
                        s.offset,
                        s.name.clone().unwrap_or_else(|| format!("safety{i}")),
                    ),
                    mode: parse_mode(s.mode.as_deref(), &format!("safety[{i}]"))?,
                    poles: s.poles.clone(),
                })
            })
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    const SAMPLE: &str = r#"
name = "toy"
formula = "F[0.2,0.8](x1 <= -2)"
t_f = 2.0
intervals = 10
x0 = [1.0, -1.0]

[system]
a = [[0.0, 1.0], [0.0, 0.0]]
b = [[0.0], [1.0]]

[config]
big_m = 1000.0
always_mode = "zcbf"

[[safety]]
row = [0.0, -1.0]
offset = 10.0
name = "v_hi"
"#;

    #[test]
    fn parses_and_validates() {
        let sc = Scenario::from_toml(SAMPLE).unwrap();
        assert_eq!(sc.name, "toy");
        let sys = sc.system().unwrap();
        assert_eq!(sys.state_dim(), 2);
        assert_eq!(sc.base_grid().unwrap().num_nodes(), 11);
        let cfg = sc.encoding_config().unwrap();
        assert_eq!(cfg.big_m, 1000.0);
        let safety = sc.safety_specs(&sys).unwrap();
        assert_eq!(safety.len(), 1);
        assert_eq!(safety[0].pred.offset, 10.0);
    }

    #[test]
    fn rejects_bad_dimensions() {
        let bad = SAMPLE.replace("x0 = [1.0, -1.0]", "x0 = [1.0]");
        assert!(matches!(
            Scenario::from_toml(&bad),
            Err(ScenarioError::Invalid(_))
        ));
    }

    #[test]
    fn rejects_bad_mode() {
        let bad = SAMPLE.replace("always_mode = \"zcbf\"", "always_mode = \"magic\"");
        assert!(Scenario::from_toml(&bad).is_err());
    }

    #[test]
    fn round_trips_through_toml() {
        let sc = Scenario::from_toml(SAMPLE).unwrap();
        let sc2 = Scenario::from_toml(&sc.to_toml()).unwrap();
        assert_eq!(sc2.formula, sc.formula);
        assert_eq!(sc2.x0, sc.x0);
        assert_eq!(sc2.safety.len(), 1);
    }
}
