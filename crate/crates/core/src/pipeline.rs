//! End-to-end runs: plan a scenario, re-check a stored trajectory, or export
//! the model in LP format. This is the layer the CLI calls into.

use crate::encoder::{build_miqp, EncoderError, EncodingConfig};
use crate::lin_dynamics::{DynamicsError, TimeGrid, TIME_TOL};
use crate::miqp::{branch_and_bound, export_lp, MiqpError, Solution, SolveStatus};
use crate::monitor::{
    cbf_bound_audit, check_continuous, compare_discrete_continuous, ComparisonReport,
    MonitorError, Trajectory, Verdict, WindowAudit,
};
use crate::scenario::{Scenario, ScenarioError};
use crate::stl::{discrete_robustness, parse, Formula, Interval, StlError};
use nalgebra::DVector;
use std::fmt::Write as _;
use std::path::Path;
use std::time::Instant;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PipelineError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Encoder(#[from] EncoderError),
    #[error(transparent)]
    Miqp(#[from] MiqpError),
    #[error(transparent)]
    Monitor(#[from] MonitorError),
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
    #[error("no feasible control sequence (solver status {0:?})")]
    Infeasible(SolveStatus),
    #[error("big-M audit still flags tight constants after {0} retries")]
    BigMExhausted(usize),
    #[error("bad trajectory csv: {0}")]
    BadCsv(String),
}

/// Knobs the CLI exposes on top of the scenario file.
#[derive(Debug, Clone)]
pub struct RunOptions {
    pub big_m: Option<f64>,
    pub poles: Option<Vec<f64>>,
    /// Spacing of the dense rows in the trajectory CSV.
    pub dense_step: f64,
}

impl Default for RunOptions {
    fn default() -> Self {
        Self {
            big_m: None,
            poles: None,
            dense_step: 1e-3,
        }
    }
}

/// Everything a plan run produced, for reporting and for tests.
#[derive(Debug)]
pub struct RunReport {
    pub scenario: String,
    pub solution: Solution,
    pub num_binaries: usize,
    pub big_m: f64,
    pub big_m_retries: usize,
    /// Discrete vs continuous verdict on the scenario formula.
    pub comparison: ComparisonReport,
    /// Continuous verdict on the standing safety predicates, if any.
    pub safety: Option<Verdict>,
    pub window_audits: Vec<WindowAudit>,
    pub trajectory: Trajectory,
    pub solve_secs: f64,
}

impl RunReport {
    /// The exit-code criterion: feasible and continuously satisfied,
    /// including the standing safety predicates.
    pub fn accepted(&self) -> bool {
        self.solution.status == SolveStatus::Optimal
            && self.comparison.verdict.satisfied
            && self.safety.as_ref().map(|v| v.satisfied).unwrap_or(true)
    }
}

fn apply_overrides(cfg: &mut EncodingConfig, opts: &RunOptions) {
    if let Some(m) = opts.big_m {
        cfg.big_m = m;
    }
    if let Some(p) = &opts.poles {
        cfg.ecbf_poles = p.clone();
    }
}

/// Conjunction of the standing safety predicates, held over the whole horizon.
fn safety_formula(sc: &Scenario) -> Result<Option<Formula>, PipelineError> {
    let sys = sc.system()?;
    let specs = sc.safety_specs(&sys)?;
    if specs.is_empty() {
        return Ok(None);
    }
    let preds: Vec<Formula> = specs
        .into_iter()
        .map(|s| Formula::Pred(s.pred))
        .collect();
    let body = if preds.len() == 1 {
        preds.into_iter().next().unwrap()
    } else {
        Formula::And(preds)
    };
    Ok(Some(Formula::Always(
        Interval::new(0.0, sc.t_f)?,
        Box::new(body),
    )))
}

const MAX_BIG_M_RETRIES: usize = 3;

/// Plans `sc`: encode, solve, certify. If the big-M audit flags a constant as
/// nearly tight the model is rebuilt with a doubled M and re-solved.
pub fn run_plan(sc: &Scenario, opts: &RunOptions) -> Result<RunReport, PipelineError> {
    let sys = sc.system()?;
    let x0 = sc.initial_state();
    let formula = sc.parsed_formula()?;
    let base = sc.base_grid()?;
    let safety = sc.safety_specs(&sys)?;
    let mut cfg = sc.encoding_config()?;
    apply_overrides(&mut cfg, opts);

    let started = Instant::now();
    let mut retries = 0;
    let (encoded, sol) = loop {
        let encoded = build_miqp(&sys, &x0, &formula, &base, &safety, &cfg)?;
        let sol = branch_and_bound(&encoded.model)?;
        if sol.status != SolveStatus::Optimal {
            return Err(PipelineError::Infeasible(sol.status));
        }
        let flagged = encoded.audit_big_m(&sol.x);
        if flagged.is_empty() {
            break (encoded, sol);
        }
        if retries == MAX_BIG_M_RETRIES {
            return Err(PipelineError::BigMExhausted(retries));
        }
        retries += 1;
        cfg.big_m *= 2.0;
        for v in cfg.x_lower.iter_mut().chain(cfg.x_upper.iter_mut()) {
            *v *= 2.0;
        }
    };
    let solve_secs = started.elapsed().as_secs_f64();

    let traj = Trajectory::new(
        sys,
        encoded.grid.clone(),
        encoded.states(&sol.x),
        encoded.controls(&sol.x),
    )?;
    let window_audits = cbf_bound_audit(&traj, &encoded.cbf_windows, &sol.x)?;
    let comparison = compare_discrete_continuous(&traj, &formula)?;
    let safety_verdict = match safety_formula(sc)? {
        Some(f) => Some(check_continuous(&traj, &f)?),
        None => None,
    };

    Ok(RunReport {
        scenario: sc.name.clone(),
        num_binaries: encoded.model.binary_indices().len(),
        big_m: encoded.big_m,
        big_m_retries: retries,
        solution: sol,
        comparison,
        safety: safety_verdict,
        window_audits,
        trajectory: traj,
        solve_secs,
    })
}

fn fmt_sig(v: f64) -> String {
    // 12 significant digits; strip the noise a plain {} would add past that.
    format!("{v:.11e}")
}

/// Writes the trajectory as `t,x1..xn,u1..um`: dense rows every `dense_step`
/// plus a row at every grid node. Node rows carry the stored node states
/// verbatim.
pub fn trajectory_csv(traj: &Trajectory, dense_step: f64) -> Result<String, PipelineError> {
    let grid = traj.grid();
    let n = traj.system().state_dim();
    let m = traj.system().input_dim();
    let mut times: Vec<f64> = grid.nodes().to_vec();
    if dense_step > 0.0 {
        let mut t = dense_step;
        while t < grid.t_f() - TIME_TOL {
            if grid.index_of(t).is_none() {
                times.push(t);
            }
            t += dense_step;
        }
    }
    times.sort_by(f64::total_cmp);

    let mut out = String::new();
    out.push('t');
    for i in 1..=n {
        write!(out, ",x{i}").unwrap();
    }
    for j in 1..=m {
        write!(out, ",u{j}").unwrap();
    }
    out.push('\n');
    for &t in &times {
        let x = match grid.index_of(t) {
            Some(k) => traj.states()[k].clone(),
            None => traj.eval(t)?,
        };
        // The control in force at t; the final node reports the last one.
        let k = grid.interval_of(t).unwrap_or(grid.num_intervals() - 1);
        let k = k.min(grid.num_intervals() - 1);
        let u = &traj.controls()[k];
        out.push_str(&fmt_sig(t));
        for i in 0..n {
            out.push(',');
            out.push_str(&fmt_sig(x[i]));
        }
        for j in 0..m {
            out.push(',');
            out.push_str(&fmt_sig(u[j]));
        }
        out.push('\n');
    }
    Ok(out)
}

/// Human-readable verdict summary written next to the CSV.
pub fn verdict_text(report: &RunReport) -> String {
    let mut s = String::new();
    let _ = writeln!(s, "scenario: {}", report.scenario);
    let _ = writeln!(s, "status: {:?}", report.solution.status);
    let _ = writeln!(s, "objective: {:.12e}", report.solution.objective);
    let _ = writeln!(s, "binaries: {}", report.num_binaries);
    let _ = writeln!(s, "bb_nodes: {}", report.solution.nodes);
    let _ = writeln!(s, "incumbents: {}", report.solution.incumbents);
    let _ = writeln!(s, "big_m: {}", report.big_m);
    let _ = writeln!(s, "big_m_retries: {}", report.big_m_retries);
    let _ = writeln!(s, "solve_secs: {:.3}", report.solve_secs);
    let _ = writeln!(
        s,
        "discrete_robustness: {:.6e}",
        report.comparison.discrete_robustness
    );
    let v = &report.comparison.verdict;
    let _ = writeln!(
        s,
        "continuous: {}",
        if v.satisfied { "satisfied" } else { "violated" }
    );
    let _ = writeln!(s, "worst_margin: {:.6e}", v.worst_margin);
    let _ = writeln!(s, "witness_time: {:.6}", v.witness_time);
    let _ = writeln!(s, "gap_class: {:?}", report.comparison.class);
    if let Some(sv) = &report.safety {
        let _ = writeln!(
            s,
            "safety: {} (worst {:.6e} at t={:.6})",
            if sv.satisfied { "satisfied" } else { "violated" },
            sv.worst_margin,
            sv.witness_time
        );
    }
    let _ = writeln!(s, "cbf_windows_audited: {}", report.window_audits.len());
    let _ = writeln!(s, "accepted: {}", report.accepted());
    s
}

/// Writes `<name>_trajectory.csv` and `<name>_verdict.txt` under `out_dir`.
pub fn write_outputs(
    report: &RunReport,
    out_dir: &Path,
    dense_step: f64,
) -> Result<(), PipelineError> {
    std::fs::create_dir_all(out_dir)?;
    let csv = trajectory_csv(&report.trajectory, dense_step)?;
    std::fs::write(out_dir.join(format!("{}_trajectory.csv", report.scenario)), csv)?;
    std::fs::write(
        out_dir.join(format!("{}_verdict.txt", report.scenario)),
        verdict_text(report),
    )?;
    Ok(())
}

/// Builds the scenario's MIQP and renders it in LP format.
pub fn run_export(sc: &Scenario, opts: &RunOptions) -> Result<String, PipelineError> {
    let sys = sc.system()?;
    let mut cfg = sc.encoding_config()?;
    apply_overrides(&mut cfg, opts);
    let encoded = build_miqp(
        &sys,
        &sc.initial_state(),
        &sc.parsed_formula()?,
        &sc.base_grid()?,
        &sc.safety_specs(&sys)?,
        &cfg,
    )?;
    Ok(export_lp(&encoded.model))
}

/// Result of re-checking a stored trajectory against a formula.
#[derive(Debug)]
pub struct CheckReport {
    pub discrete_robustness: f64,
    /// Present only when a scenario supplied the plant model.
    pub continuous: Option<Verdict>,
    pub warning: Option<String>,
}

impl CheckReport {
    pub fn satisfied(&self) -> bool {
        match &self.continuous {
            Some(v) => v.satisfied,
            None => self.discrete_robustness >= -crate::stl::EPS_STRICT,
        }
    }
}

/// Parsed trajectory CSV: times, states, and optional controls.
struct CsvData {
    times: Vec<f64>,
    states: Vec<DVector<f64>>,
    controls: Vec<DVector<f64>>,
}

fn parse_csv(text: &str) -> Result<CsvData, PipelineError> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines
        .next()
        .ok_or_else(|| PipelineError::BadCsv("empty file".into()))?;
    let cols: Vec<&str> = header.split(',').map(str::trim).collect();
    if cols.first() != Some(&"t") {
        return Err(PipelineError::BadCsv("first column must be 't'".into()));
    }
    let n = cols.iter().filter(|c| c.starts_with('x')).count();
    let m = cols.iter().filter(|c| c.starts_with('u')).count();
    if n == 0 || cols.len() != 1 + n + m {
        return Err(PipelineError::BadCsv(format!("unrecognized header '{header}'")));
    }
    let mut data = CsvData {
        times: Vec::new(),
        states: Vec::new(),
        controls: Vec::new(),
    };
    for (lineno, line) in lines.enumerate() {
        let vals: Result<Vec<f64>, _> = line.split(',').map(|v| v.trim().parse::<f64>()).collect();
        let vals = vals.map_err(|e| {
            PipelineError::BadCsv(format!("row {}: {e}", lineno + 2))
        })?;
        if vals.len() != cols.len() {
            return Err(PipelineError::BadCsv(format!(
                "row {} has {} fields, expected {}",
                lineno + 2,
                vals.len(),
                cols.len()
            )));
        }
        data.times.push(vals[0]);
        data.states.push(DVector::from_row_slice(&vals[1..1 + n]));
        data.controls.push(DVector::from_row_slice(&vals[1 + n..]));
    }
    if data.times.len() < 2 {
        return Err(PipelineError::BadCsv("need at least two rows".into()));
    }
    if data.times.windows(2).any(|w| w[1] <= w[0]) {
        return Err(PipelineError::BadCsv("times must be strictly increasing".into()));
    }
    Ok(data)
}

/// Re-checks a trajectory CSV against `formula_text`. With a scenario the
/// rows are treated as grid nodes of a zero-order-hold trajectory and the
/// check is continuous; without one only the discrete samples are monitored.
pub fn run_check(
    csv_text: &str,
    formula_text: &str,
    sc: Option<&Scenario>,
) -> Result<CheckReport, PipelineError> {
    let data = parse_csv(csv_text)?;
    let samples: Vec<(f64, DVector<f64>)> = data
        .times
        .iter()
        .cloned()
        .zip(data.states.iter().cloned())
        .collect();
    let state_dim = data.states[0].len();
    let formula = parse(formula_text, state_dim)?;
    let discrete = discrete_robustness(&samples, &formula)?;

    let (continuous, warning) = match sc {
        Some(sc) => {
            let sys = sc.system()?;
            if sys.state_dim() != state_dim {
                return Err(PipelineError::BadCsv(format!(
                    "csv has {} state columns, scenario system has {}",
                    state_dim,
                    sys.state_dim()
                )));
            }
            if data.controls[0].len() != sys.input_dim() {
                return Err(PipelineError::BadCsv(format!(
                    "csv has {} control columns, scenario system has {}",
                    data.controls[0].len(),
                    sys.input_dim()
                )));
            }
            let grid = TimeGrid::from_nodes(
                data.times.clone(),
                vec![false; data.times.len()],
            )?;
            let controls = data.controls[..data.controls.len() - 1].to_vec();
            let traj = Trajectory::new(sys, grid, data.states.clone(), controls)?;
            (Some(check_continuous(&traj, &formula)?), None)
        }
        None => (
            None,
            Some("no system model given; check is on the discrete samples only".to_string()),
        ),
    };
    Ok(CheckReport {
        discrete_robustness: discrete,
        continuous,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    const TOY: &str = r#"
name = "toy"
formula = "F[0.0,2.0](x1 >= 1)"
t_f = 2.0
intervals = 4
x0 = [0.0, 0.0]

[system]
a = [[0.0, 1.0], [0.0, 0.0]]
b = [[0.0], [1.0]]

[config]
big_m = 100.0
"#;

    #[test]
    fn plans_a_toy_scenario() {
        let sc = Scenario::from_toml(TOY).unwrap();
        let report = run_plan(&sc, &RunOptions::default()).unwrap();
        assert_eq!(report.solution.status, SolveStatus::Optimal);
        assert!(report.comparison.verdict.satisfied);
        assert!(report.accepted());
        // Reaching x1 = 1 costs effort; the objective must be positive.
        assert!(report.solution.objective > 1e-6);
    }

    #[test]
    fn csv_round_trips_through_check() {
        let sc = Scenario::from_toml(TOY).unwrap();
        let report = run_plan(&sc, &RunOptions::default()).unwrap();
        let csv = trajectory_csv(&report.trajectory, 0.05).unwrap();
        let check = run_check(&csv, &sc.formula, Some(&sc)).unwrap();
        assert!(check.continuous.as_ref().unwrap().satisfied);
        assert!(check.satisfied());
        // Without the system we fall back to the discrete samples.
        let discrete_only = run_check(&csv, &sc.formula, None).unwrap();
        assert!(discrete_only.warning.is_some());
        assert!(discrete_only.satisfied());
    }

    #[test]
    fn csv_node_rows_match_states_exactly() {
        let sc = Scenario::from_toml(TOY).unwrap();
        let report = run_plan(&sc, &RunOptions::default()).unwrap();
        let csv = trajectory_csv(&report.trajectory, 0.01).unwrap();
        let grid = report.trajectory.grid().clone();
        for line in csv.lines().skip(1) {
            let fields: Vec<&str> = line.split(',').collect();
            let t: f64 = fields[0].parse().unwrap();
            if let Some(k) = grid.index_of(t) {
                for i in 0..2 {
                    let want = format!("{:.11e}", report.trajectory.states()[k][i]);
                    assert_eq!(fields[1 + i], want, "node {k} state {i}");
                }
            }
        }
    }

    #[test]
    fn export_produces_lp() {
        let sc = Scenario::from_toml(TOY).unwrap();
        let lp = run_export(&sc, &RunOptions::default()).unwrap();
        assert!(lp.starts_with("\\ "), "{lp}");
        assert!(lp.contains("Minimize"));
        assert!(lp.contains("Binary"));
        assert!(lp.trim_end().ends_with("End"));
    }

    #[test]
    fn infeasible_scenario_is_reported() {
        // Demand x1 >= 1 and x1 <= -1 at the same instant.
        let bad = TOY.replace(
            "formula = \"F[0.0,2.0](x1 >= 1)\"",
            "formula = \"G[0.5,0.5](x1 >= 1) & G[0.5,0.5](x1 <= -1)\"",
        );
        let sc = Scenario::from_toml(&bad).unwrap();
        match run_plan(&sc, &RunOptions::default()) {
            Err(PipelineError::Infeasible(_)) => {}
            other => panic!("expected infeasible, got {other:?}"),
        }
    }
}
