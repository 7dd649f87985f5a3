//! Translation of a grounded STL formula, barrier window requirements and the
//! ZOH dynamics into a [`MiqpModel`].
//!
//! The big-M boolean layer follows the usual satisfaction-variable scheme
//! (`z = 1` forces the subformula to hold). What makes satisfaction carry over
//! to continuous time is the window layer: for every `Always`-covered interval
//! the barrier output is expanded on the modal basis `e^{λt}·t^j` and each
//! term is bounded below over the whole interval by an exact candidate-point
//! minimum, selected per term by a sign-detection binary.

use crate::lin_dynamics::{
    mode_decompose, step_matrices, DynamicsError, LinearSystem, ModeDecomposition, TimeGrid,
};
use crate::miqp::{MiqpError, MiqpModel, Sense};
use crate::stl::{ground, to_nnf, window_indices, Formula, GroundedFormula, Predicate, StlError};
use nalgebra::{DVector, RowDVector};
#[cfg(test)]
use nalgebra::DMatrix;
use std::collections::{BTreeMap, BTreeSet};
use thiserror::Error;


#[derive(Debug, Error)]
pub enum EncoderError {
    #[error(transparent)]
    Stl(#[from] StlError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Miqp(#[from] MiqpError),
    #[error("barrier output has no relative degree (C_h A^k B = 0 for all k < n)")]
    NoRelativeDegree,
    #[error("bad configuration: {0}")]
    BadConfig(String),
}

/// How a barrier window bound is realized.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CbfMode {
    /// Bound the direct modal expansion of `h(x(t))` over the window.
    Zcbf,
    /// Bound the pole-placed ECBF output `ζ = h^{(r)} + K_b·ξ_b` over the
    /// window plus set membership `h ≥ 0` at the window start.
    Ecbf,
}

/// Standing safety requirement `G[0,t_f] h ≥ 0` enforced on every interval.
#[derive(Debug, Clone)]
pub struct SafetySpec {
    pub pred: Predicate,
    pub mode: CbfMode,
    /// Poles for `Ecbf` mode; `None` falls back to [`EncodingConfig::ecbf_poles`].
    pub poles: Option<Vec<f64>>,
}

#[derive(Debug, Clone)]
pub struct EncodingConfig {
    pub big_m: f64,
    pub eps_strict: f64,
    /// Componentwise input bounds; empty means `±big_m`.
    pub u_lower: Vec<f64>,
    pub u_upper: Vec<f64>,
    /// Componentwise state bounds; empty means `±big_m`. Tight boxes let the
    /// predicate rows carry an interval-derived `M` far below the global one,
    /// which is what keeps the branch-and-bound relaxation honest.
    pub x_lower: Vec<f64>,
    pub x_upper: Vec<f64>,
    /// Default pole list for ECBF gains; the first `r_b` entries are used.
    pub ecbf_poles: Vec<f64>,
    /// Emit window lower bounds for `Always`-over-predicate nodes. Turning
    /// this off reproduces the plain discrete-time encoding.
    pub cbf_windows: bool,
    /// Window realization for `Always` nodes inside the formula.
    pub always_mode: CbfMode,
}

impl Default for EncodingConfig {
    fn default() -> Self {
        Self {
            big_m: 1e4,
            eps_strict: 1e-6,
            u_lower: Vec::new(),
            u_upper: Vec::new(),
            x_lower: Vec::new(),
            x_upper: Vec::new(),
            ecbf_poles: vec![-2.0, -3.0, -4.0, -5.0],
            cbf_windows: true,
            always_mode: CbfMode::Zcbf,
        }
    }
}

// ---------------------------------------------------------------------------
// Per-term window minimum
// ---------------------------------------------------------------------------

/// Extrema of the basis function `f(t) = e^{λt}·t^j` over `[0, τ]`:
/// `((min, argmin), (max, argmax))`.
///
/// `f ≥ 0` throughout; the only interior critical point is `t* = −j/λ`
/// (a maximum, present when λ < 0 and j > 0), so candidate evaluation at
/// `{0, τ, t*}` is exact.
pub fn basis_extrema(lambda: f64, j: u32, tau: f64) -> ((f64, f64), (f64, f64)) {
    let f = |t: f64| (lambda * t).exp() * t.powi(j as i32);
    let mut candidates = vec![0.0, tau];
    if lambda < 0.0 && j > 0 {
        let t_star = -(j as f64) / lambda;
        if t_star > 0.0 && t_star < tau {
            candidates.push(t_star);
        }
    }
    let mut min = (f(candidates[0]), candidates[0]);
    let mut max = min;
    for &t in &candidates[1..] {
        let v = f(t);
        if v < min.0 {
            min = (v, t);
        }
        if v > max.0 {
            max = (v, t);
        }
    }
    (min, max)
}

/// Exact minimum of `coef·e^{λt}·t^j` over `t ∈ [0, τ]`, with its argmin.
pub fn term_window_min(coef: f64, lambda: f64, j: u32, tau: f64) -> (f64, f64) {
    let ((fmin, tmin), (fmax, tmax)) = basis_extrema(lambda, j, tau);
    if coef >= 0.0 {
        (coef * fmin, tmin)
    } else {
        (coef * fmax, tmax)
    }
}

/// Tightest lower bound on `dec` over `[0, τ]` expressible by the per-term
/// encoding: σ plus the sum of per-term window minima.
pub fn encoded_window_bound(
    dec: &ModeDecomposition,
    x0: &DVector<f64>,
    u0: &DVector<f64>,
    tau: f64,
) -> f64 {
    dec.sigma
        + dec
            .terms
            .iter()
            .map(|t| term_window_min(t.coefficient(x0, u0), t.lambda, t.power, tau).0)
            .sum::<f64>()
}

// ---------------------------------------------------------------------------
// ECBF
// ---------------------------------------------------------------------------

/// Pole-placed exponential-CBF data for a linear barrier `h = row·x + σ`:
/// `ζ(x, u) = zeta_x·x + zeta_u·u + zeta_offset`.
#[derive(Debug, Clone)]
pub struct EcbfSpec {
    pub pred: Predicate,
    pub r_b: usize,
    /// Gain row `[a_0, …, a_{r_b−1}]`, the non-leading coefficients of
    /// `∏ (s − p_i)`.
    pub k_b: Vec<f64>,
    pub zeta_x: RowDVector<f64>,
    pub zeta_u: RowDVector<f64>,
    pub zeta_offset: f64,
}

pub fn ecbf_spec(
    sys: &LinearSystem,
    pred: &Predicate,
    poles: &[f64],
) -> Result<EcbfSpec, EncoderError> {
    let n = sys.state_dim();
    let tol = 1e-9 * (1.0 + pred.row.norm()) * (1.0 + sys.b().norm());
    // derivatives of h: h^{(k)} = row·A^k·x (+ input once row·A^{k-1}·B ≠ 0)
    let mut row_pows: Vec<RowDVector<f64>> = vec![pred.row.clone()];
    for _ in 0..n {
        row_pows.push(row_pows.last().unwrap() * sys.a());
    }
    let r_b = (1..=n)
        .find(|&k| (&row_pows[k - 1] * sys.b()).norm() > tol)
        .ok_or(EncoderError::NoRelativeDegree)?;
    if poles.len() < r_b {
        return Err(EncoderError::BadConfig(format!(
            "need {r_b} ECBF poles, got {}",
            poles.len()
        )));
    }
    let poles = &poles[..r_b];
    if poles.iter().any(|&p| !(p < 0.0)) {
        return Err(EncoderError::BadConfig(format!(
            "ECBF poles must be negative, got {poles:?}"
        )));
    }
    // coefficients of ∏ (s − p): conv([1], [−p_i, 1] …), ascending powers
    let mut coeffs = vec![1.0];
    for &p in poles {
        let mut next = vec![0.0; coeffs.len() + 1];
        for (k, &c) in coeffs.iter().enumerate() {
            next[k] += -p * c;
            next[k + 1] += c;
        }
        coeffs = next;
    }
    let k_b: Vec<f64> = coeffs[..r_b].to_vec();
    let mut zeta_x = row_pows[r_b].clone();
    for (i, &g) in k_b.iter().enumerate() {
        zeta_x += &row_pows[i] * g;
    }
    let zeta_u = &row_pows[r_b - 1] * sys.b();
    Ok(EcbfSpec {
        pred: pred.clone(),
        r_b,
        zeta_offset: k_b[0] * pred.offset,
        k_b,
        zeta_x,
        zeta_u,
    })
}

// ---------------------------------------------------------------------------
// Grid alignment
// ---------------------------------------------------------------------------

/// Control-tie equality: the interval starting at a virtual node inherits the
/// control of the interval starting at the preceding real node.
pub type ControlTie = (usize, usize); // (virtual interval, source interval)

/// Inserts a virtual node for every temporal endpoint of `f` that falls
/// strictly between nodes of `base`, and records the induced control ties.
pub fn align_time_grid(
    f: &Formula,
    base: &TimeGrid,
) -> Result<(TimeGrid, Vec<ControlTie>), EncoderError> {
    let mut endpoints = Vec::new();
    f.absolute_endpoints(0.0, &mut endpoints);
    endpoints.sort_by(f64::total_cmp);
    endpoints.dedup();
    let mut grid = base.clone();
    for &t in &endpoints {
        grid = grid.with_virtual_node(t)?;
    }
    let mut ties = Vec::new();
    for k in 0..grid.num_nodes() {
        if grid.is_virtual(k) {
            // ZOH continuation: same control as the window opened at the last
            // real node before this one
            let src = (0..k).rev().find(|&r| !grid.is_virtual(r)).ok_or_else(|| {
                EncoderError::BadConfig("virtual node before any real node".into())
            })?;
            if k < grid.num_intervals() {
                ties.push((k, src));
            }
        }
    }
    Ok((grid, ties))
}

// ---------------------------------------------------------------------------
// Encoded model
// ---------------------------------------------------------------------------

/// One emitted barrier window, kept for post-solve audits.
#[derive(Debug, Clone)]
pub struct CbfWindowInfo {
    pub label: String,
    /// Grid interval index; the window is `[t_k, t_{k+1}]`.
    pub interval: usize,
    /// Expansion of the bounded output (for `Ecbf` this is ζ, not `h`).
    pub dec: ModeDecomposition,
    /// Original barrier predicate `h`.
    pub pred: Predicate,
    pub mode: CbfMode,
    /// Gating binary column; `None` for unconditional safety windows.
    pub gate: Option<usize>,
}

/// [`MiqpModel`] together with the variable layout needed to read a
/// trajectory back out of a solution.
#[derive(Debug, Clone)]
pub struct EncodedModel {
    pub model: MiqpModel,
    pub grid: TimeGrid,
    pub formula: Formula,
    pub grounded: GroundedFormula,
    /// `x_vars[k][i]` = column of state `i` at node `k`.
    pub x_vars: Vec<Vec<usize>>,
    /// `u_vars[k][i]` = column of input `i` on interval `k`.
    pub u_vars: Vec<Vec<usize>>,
    /// Satisfaction binaries keyed by (formula node id, grid node index).
    pub z_vars: BTreeMap<(usize, usize), usize>,
    pub cbf_windows: Vec<CbfWindowInfo>,
    pub ties: Vec<ControlTie>,
    pub big_m: f64,
    /// True when the inputs had no explicit bounds and fall back to `±big_m`,
    /// in which case the audit must watch them too.
    pub u_box_from_m: bool,
    /// Per-dimension magnitude cap on the states (box half-width or `big_m`).
    pub x_caps: Vec<f64>,
}

impl EncodedModel {
    /// States at grid nodes from a solution vector.
    pub fn states(&self, x: &[f64]) -> Vec<DVector<f64>> {
        self.x_vars
            .iter()
            .map(|vars| DVector::from_iterator(vars.len(), vars.iter().map(|&v| x[v])))
            .collect()
    }

    /// Controls per interval from a solution vector.
    pub fn controls(&self, x: &[f64]) -> Vec<DVector<f64>> {
        self.u_vars
            .iter()
            .map(|vars| DVector::from_iterator(vars.len(), vars.iter().map(|&v| x[v])))
            .collect()
    }

    /// Big-M adequacy audit: every continuous quantity that a big-M constraint
    /// compares against must stay safely inside `M`. Returns violation notes;
    /// the caller is expected to raise `M` and re-encode when non-empty.
    pub fn audit_big_m(&self, x: &[f64]) -> Vec<String> {
        let cap = 0.99 * self.big_m;
        let mut notes = Vec::new();
        for (k, node) in self.x_vars.iter().enumerate() {
            for (i, &v) in node.iter().enumerate() {
                if x[v].abs() > 0.99 * self.x_caps[i] {
                    notes.push(format!("state x{}[{k}] = {} near its box", i + 1, x[v]));
                }
            }
        }
        if self.u_box_from_m {
            for (k, node) in self.u_vars.iter().enumerate() {
                for (i, &v) in node.iter().enumerate() {
                    if x[v].abs() > cap {
                        notes.push(format!("input u{}[{k}] = {} near big-M", i + 1, x[v]));
                    }
                }
            }
        }
        let states = self.states(x);
        let controls = self.controls(x);
        for w in &self.cbf_windows {
            let xk = &states[w.interval];
            let uk = &controls[w.interval];
            for (ti, term) in w.dec.terms.iter().enumerate() {
                let e = term.coefficient(xk, uk);
                let (_, fmax) = basis_extrema(term.lambda, term.power, self.grid.tau(w.interval));
                if e.abs().max(e.abs() * fmax.0) > cap {
                    notes.push(format!(
                        "window {} term {ti} coefficient {e} near big-M",
                        w.label
                    ));
                }
            }
        }
        notes
    }
}

// ---------------------------------------------------------------------------
// Builder
// ---------------------------------------------------------------------------

struct Encoder<'a> {
    sys: &'a LinearSystem,
    cfg: &'a EncodingConfig,
    grid: TimeGrid,
    model: MiqpModel,
    x_vars: Vec<Vec<usize>>,
    u_vars: Vec<Vec<usize>>,
    z_vars: BTreeMap<(usize, usize), usize>,
    windows: Vec<CbfWindowInfo>,
    /// Ids of predicate nodes whose binaries gate a barrier window. Their
    /// encoding stays one-directional so holding a predicate by accident does
    /// not drag its window constraints in.
    gated: BTreeSet<usize>,
    aux: usize,
}

/// Pre-order walk mirroring `encode_node`'s id assignment, collecting the
/// predicate ids that [`Encoder::emit_always_windows`] will use as gates.
fn collect_gated_ids(f: &Formula, windows_on: bool, next: &mut usize, out: &mut BTreeSet<usize>) {
    *next += 1;
    match f {
        Formula::True | Formula::Pred(_) => {}
        Formula::Not(c) | Formula::Eventually(_, c) => {
            collect_gated_ids(c, windows_on, next, out)
        }
        Formula::And(cs) | Formula::Or(cs) => {
            for c in cs {
                collect_gated_ids(c, windows_on, next, out);
            }
        }
        Formula::Always(_, c) => {
            if windows_on {
                let cid = *next;
                match &**c {
                    Formula::Pred(_) => {
                        out.insert(cid);
                    }
                    Formula::And(cs) | Formula::Or(cs)
                        if cs.iter().all(|x| matches!(x, Formula::Pred(_))) =>
                    {
                        for i in 0..cs.len() {
                            out.insert(cid + 1 + i);
                        }
                    }
                    _ => {}
                }
            }
            collect_gated_ids(c, windows_on, next, out);
        }
        Formula::Until(_, l, r) => {
            collect_gated_ids(l, windows_on, next, out);
            collect_gated_ids(r, windows_on, next, out);
        }
    }
}

impl<'a> Encoder<'a> {
    fn z(&self, id: usize, k: usize) -> usize {
        self.z_vars[&(id, k)]
    }

    /// Valid big-M for one predicate row: an interval bound on |row·x + offset|
    /// over the state box, capped by the global constant.
    fn pred_m(&self, p: &Predicate) -> f64 {
        let mut bound = p.offset.abs();
        for (i, &c) in p.row.iter().enumerate() {
            let cap = if self.cfg.x_lower.is_empty() {
                self.cfg.big_m
            } else {
                self.cfg.x_lower[i].abs().max(self.cfg.x_upper[i].abs())
            };
            bound += c.abs() * cap;
        }
        bound.min(self.cfg.big_m)
    }

    /// Interval bound on |expr| over the declared variable boxes.
    fn expr_cap(&self, e: &[(usize, f64)]) -> f64 {
        e.iter()
            .map(|&(v, c)| {
                let b = &self.model.vars[v];
                c.abs() * b.lower.abs().max(b.upper.abs())
            })
            .sum()
    }

    /// Linear expression for `row_x·x_k + row_u·u_k` as sparse model columns.
    fn expr(&self, k: usize, row_x: &RowDVector<f64>, row_u: Option<&RowDVector<f64>>) -> Vec<(usize, f64)> {
        let mut e = Vec::new();
        for (i, &c) in row_x.iter().enumerate() {
            if c != 0.0 {
                e.push((self.x_vars[k][i], c));
            }
        }
        if let Some(ru) = row_u {
            for (i, &c) in ru.iter().enumerate() {
                if c != 0.0 {
                    e.push((self.u_vars[k][i], c));
                }
            }
        }
        e
    }

    fn create_z_vars(&mut self, f: &Formula, g: &GroundedFormula, next_id: &mut usize) {
        let id = *next_id;
        *next_id += 1;
        for &k in &g.eval_times[id] {
            let var = self.model.add_binary(format!("z{id}_t{k}"));
            self.z_vars.insert((id, k), var);
        }
        match f {
            Formula::True | Formula::Pred(_) => {}
            Formula::Not(c) | Formula::Eventually(_, c) | Formula::Always(_, c) => {
                self.create_z_vars(c, g, next_id)
            }
            Formula::And(cs) | Formula::Or(cs) => {
                for c in cs {
                    self.create_z_vars(c, g, next_id);
                }
            }
            Formula::Until(_, l, r) => {
                self.create_z_vars(l, g, next_id);
                self.create_z_vars(r, g, next_id);
            }
        }
    }

    fn encode_node(
        &mut self,
        f: &Formula,
        g: &GroundedFormula,
        next_id: &mut usize,
    ) -> Result<usize, EncoderError> {
        let id = *next_id;
        *next_id += 1;
        match f {
            Formula::True => {
                for &k in &g.eval_times[id].clone() {
                    let z = self.z(id, k);
                    self.model
                        .add_constraint(format!("true{id}_t{k}"), vec![(z, 1.0)], Sense::Eq, 1.0);
                }
            }
            Formula::Pred(p) => {
                let m = self.pred_m(p);
                for &k in &g.eval_times[id].clone() {
                    let z = self.z(id, k);
                    // z = 1 ⇒ y ≥ 0 for y = row·x_k + offset, as −y ≤ M·(1−z)
                    let mut lo: Vec<(usize, f64)> = self
                        .expr(k, &p.row, None)
                        .into_iter()
                        .map(|(v, c)| (v, -c))
                        .collect();
                    lo.push((z, m));
                    self.model
                        .add_constraint(format!("p{id}_t{k}_l"), lo, Sense::Le, m + p.offset);
                    // The reverse direction (z = 0 ⇒ y ≤ 0) sharpens the
                    // relaxation, but must be left off when z gates a barrier
                    // window: a certificate that is merely *allowed* to hold
                    // must not be forced on wherever the predicate happens to
                    // be true, or the window constraints it drags in would
                    // pin the trajectory to the barrier's decay rate.
                    if !self.gated.contains(&id) {
                        let mut up = self.expr(k, &p.row, None);
                        up.push((z, -m));
                        self.model
                            .add_constraint(format!("p{id}_t{k}_u"), up, Sense::Le, -p.offset);
                    }
                }
            }
            Formula::Not(_) => {
                // NNF leaves no Not nodes; grounding would have walked it, so
                // refuse early rather than emit an unsound constraint
                return Err(EncoderError::BadConfig(
                    "encoder expects negation normal form".into(),
                ));
            }
            Formula::And(cs) => {
                let child_ids: Vec<usize> = cs
                    .iter()
                    .map(|c| self.encode_node(c, g, next_id))
                    .collect::<Result<_, _>>()?;
                for &k in &g.eval_times[id].clone() {
                    let z = self.z(id, k);
                    self.emit_conjunction(
                        &format!("and{id}_t{k}"),
                        z,
                        &child_ids.iter().map(|&cid| self.z(cid, k)).collect::<Vec<_>>(),
                    );
                }
            }
            Formula::Or(cs) => {
                let child_ids: Vec<usize> = cs
                    .iter()
                    .map(|c| self.encode_node(c, g, next_id))
                    .collect::<Result<_, _>>()?;
                for &k in &g.eval_times[id].clone() {
                    let z = self.z(id, k);
                    self.emit_disjunction(
                        &format!("or{id}_t{k}"),
                        z,
                        &child_ids.iter().map(|&cid| self.z(cid, k)).collect::<Vec<_>>(),
                    );
                }
            }
            Formula::Always(iv, c) => {
                let cid = self.encode_node(c, g, next_id)?;
                for &k in &g.eval_times[id].clone() {
                    let z = self.z(id, k);
                    let covered = window_indices(&self.grid, self.grid.node(k), iv.a, iv.b)?;
                    self.emit_conjunction(
                        &format!("alw{id}_t{k}"),
                        z,
                        &covered.iter().map(|&l| self.z(cid, l)).collect::<Vec<_>>(),
                    );
                    if self.cfg.cbf_windows {
                        self.emit_always_windows(c, cid, &covered)?;
                    }
                }
            }
            Formula::Eventually(iv, c) => {
                let cid = self.encode_node(c, g, next_id)?;
                for &k in &g.eval_times[id].clone() {
                    let z = self.z(id, k);
                    let covered = window_indices(&self.grid, self.grid.node(k), iv.a, iv.b)?;
                    self.emit_disjunction(
                        &format!("ev{id}_t{k}"),
                        z,
                        &covered.iter().map(|&l| self.z(cid, l)).collect::<Vec<_>>(),
                    );
                }
            }
            Formula::Until(iv, l, r) => {
                let lid = self.encode_node(l, g, next_id)?;
                let rid = self.encode_node(r, g, next_id)?;
                for &k in &g.eval_times[id].clone() {
                    let z = self.z(id, k);
                    let picks = window_indices(&self.grid, self.grid.node(k), iv.a, iv.b)?;
                    let mut pick_vars = Vec::new();
                    for &tp in &picks {
                        // c = z_r(t') ∧ ⋀_{t'' ∈ [t, t']} z_l(t'')
                        let c_var = self
                            .model
                            .add_binary(format!("until{id}_t{k}_p{tp}"));
                        let mut lits = vec![self.z(rid, tp)];
                        for &tpp in g.eval_times[lid].iter().filter(|&&q| q >= k && q <= tp) {
                            lits.push(self.z(lid, tpp));
                        }
                        self.emit_conjunction(&format!("untilc{id}_t{k}_p{tp}"), c_var, &lits);
                        pick_vars.push(c_var);
                    }
                    self.emit_disjunction(&format!("until{id}_t{k}"), z, &pick_vars);
                }
            }
        }
        Ok(id)
    }

    /// `z = ⋀ lits`: z ≤ lit_i, z ≥ 1 − p + Σ lit_i.
    fn emit_conjunction(&mut self, name: &str, z: usize, lits: &[usize]) {
        for (i, &l) in lits.iter().enumerate() {
            self.model
                .add_constraint(format!("{name}_le{i}"), vec![(z, 1.0), (l, -1.0)], Sense::Le, 0.0);
        }
        let mut row = vec![(z, 1.0)];
        for &l in lits {
            row.push((l, -1.0));
        }
        self.model.add_constraint(
            format!("{name}_ge"),
            row,
            Sense::Ge,
            1.0 - lits.len() as f64,
        );
    }

    /// `z = ⋁ lits`: z ≥ lit_i, z ≤ Σ lit_i.
    fn emit_disjunction(&mut self, name: &str, z: usize, lits: &[usize]) {
        for (i, &l) in lits.iter().enumerate() {
            self.model
                .add_constraint(format!("{name}_ge{i}"), vec![(z, 1.0), (l, -1.0)], Sense::Ge, 0.0);
        }
        let mut row = vec![(z, 1.0)];
        for &l in lits {
            row.push((l, -1.0));
        }
        self.model.add_constraint(format!("{name}_le"), row, Sense::Le, 0.0);
    }

    /// Window bounds for an `Always` node whose child is a predicate, or a
    /// conjunction/disjunction of predicates. Each predicate's bound over
    /// window `[t_l, t_{l+1}]` is gated by that predicate's satisfaction
    /// binary at the window start, so a disjunct only pays for the windows it
    /// claims.
    fn emit_always_windows(
        &mut self,
        child: &Formula,
        child_id: usize,
        covered: &[usize],
    ) -> Result<(), EncoderError> {
        // (predicate, formula id) pairs under the child node
        let preds: Vec<(&Predicate, usize)> = match child {
            Formula::Pred(p) => vec![(p, child_id)],
            Formula::And(cs) | Formula::Or(cs)
                if cs.iter().all(|c| matches!(c, Formula::Pred(_))) =>
            {
                cs.iter()
                    .enumerate()
                    .map(|(i, c)| match c {
                        Formula::Pred(p) => (p, child_id + 1 + i),
                        _ => unreachable!(),
                    })
                    .collect()
            }
            _ => return Ok(()), // nested temporal structure: grid-only semantics
        };
        for pair in covered.windows(2) {
            let (lo, hi) = (pair[0], pair[1]);
            if hi != lo + 1 {
                continue;
            }
            for &(p, pid) in &preds {
                if p.row.len() == 0 {
                    continue; // constant placeholder predicate
                }
                let gate = self.z(pid, lo);
                self.emit_cbf_window(p, lo, Some(gate), self.cfg.always_mode, None)?;
            }
        }
        Ok(())
    }

    /// Emits the full window constraint set for barrier `h = pred` on grid
    /// interval `k` (spec: sign binaries, per-term minima, aggregate bound,
    /// start membership).
    fn emit_cbf_window(
        &mut self,
        pred: &Predicate,
        k: usize,
        gate: Option<usize>,
        mode: CbfMode,
        poles: Option<&[f64]>,
    ) -> Result<(), EncoderError> {
        let m = self.cfg.big_m;
        let tau = self.grid.tau(k);
        let wid = self.aux;
        self.aux += 1;

        let dec = match mode {
            CbfMode::Zcbf => mode_decompose(self.sys, &pred.row, pred.offset)?,
            CbfMode::Ecbf => {
                let spec = ecbf_spec(
                    self.sys,
                    pred,
                    poles.unwrap_or(&self.cfg.ecbf_poles),
                )?;
                let mut d = mode_decompose(self.sys, &spec.zeta_x, spec.zeta_offset)?;
                if spec.zeta_u.norm() > 0.0 {
                    d.add_direct_input(spec.zeta_u.clone());
                }
                d
            }
        };

        // aggregate: σ + Σ_const e_i + Σ w_i + β_x + β_u (+ M(1−gate)) ≥ 0
        let beta_x = self
            .model
            .add_continuous(format!("bx{wid}"), -m, m);
        let beta_u = self
            .model
            .add_continuous(format!("bu{wid}"), -m, m);
        self.model.add_constraint(
            format!("w{wid}_beta"),
            vec![(beta_x, 1.0), (beta_u, 1.0)],
            Sense::Eq,
            0.0,
        );
        let mut agg: Vec<(usize, f64)> = vec![(beta_x, 1.0), (beta_u, 1.0)];
        // worst-case shortfall of the aggregate over the variable boxes; the
        // gate must be able to relax at least this much or "inactive" windows
        // would still constrain the trajectory
        let mut deficit = dec.sigma.abs() + 1.0;

        for (ti, term) in dec.terms.iter().enumerate() {
            let e = self.expr(k, &term.x_coeff, Some(&term.u_coeff));
            if e.is_empty() {
                continue;
            }
            if term.lambda == 0.0 && term.power == 0 {
                // constant basis: the term value is its own window minimum
                deficit += self.expr_cap(&e);
                agg.extend(e);
                continue;
            }
            let ((fmin, _), (fmax, _)) = basis_extrema(term.lambda, term.power, tau);
            let _ = fmin;
            // a box-derived bound on |e| keeps every row below valid without
            // leaning on the global constant
            let me = self.expr_cap(&e);
            let mw = fmax * me;
            let z = self.model.add_binary(format!("zw{wid}_{ti}"));
            // pure sign detector: with the hull cut below, any relaxation
            // point extends to a consistent 0/1 value, so the solver may
            // settle it by sign instead of branching
            self.model.mark_indicator(z, e.clone(), 0.0);
            // w ≤ 0 is valid at every integer point (dropped terms give
            // w ≤ 0, selected ones w ≤ F·e ≤ 0 since e ≤ 0 and F ≥ 0) and
            // stops relaxations from faking safety margin through w.
            let w = self.model.add_continuous(format!("w{wid}_{ti}"), -mw, 0.0);
            // sign detection: e ≤ M(1−z), −e ≤ M z
            let mut up = e.clone();
            up.push((z, me));
            self.model
                .add_constraint(format!("w{wid}_{ti}_sgnu"), up, Sense::Le, me);
            let mut lo: Vec<(usize, f64)> = e.iter().map(|&(v, c)| (v, -c)).collect();
            lo.push((z, -me));
            self.model
                .add_constraint(format!("w{wid}_{ti}_sgnl"), lo, Sense::Le, 0.0);
            // z = 0 (e ≥ 0): term dropped, w ≤ 0
            self.model.add_constraint(
                format!("w{wid}_{ti}_drop"),
                vec![(w, 1.0), (z, -mw)],
                Sense::Le,
                0.0,
            );
            // z = 1 (e ≤ 0): w ≤ F·e, the exact window minimum of e·f(t)
            let mut sel: Vec<(usize, f64)> = vec![(w, 1.0)];
            for &(v, c) in &e {
                sel.push((v, -fmax * c));
            }
            sel.push((z, mw));
            self.model
                .add_constraint(format!("w{wid}_{ti}_min"), sel, Sense::Le, mw);
            // Hull cut: w ≤ F·e holds at both z values (e ≥ 0 when z = 0,
            // and then w ≤ 0 ≤ F·e), so together with w ≤ 0 the relaxation
            // of this term is exact and z never has to be branched on.
            let mut hull: Vec<(usize, f64)> = vec![(w, 1.0)];
            for &(v, c) in &e {
                hull.push((v, -fmax * c));
            }
            self.model
                .add_constraint(format!("w{wid}_{ti}_hull"), hull, Sense::Le, 0.0);
            deficit += mw;
            agg.push((w, 1.0));
        }
        let mut rhs = -dec.sigma;
        if let Some(gz) = gate {
            // relax by the full shortfall when the gate binary is off
            agg.push((gz, -deficit));
            rhs -= deficit;
        }
        self.model
            .add_constraint(format!("w{wid}_bound"), agg, Sense::Ge, rhs);

        // window-start membership h(x_k) ≥ 0
        let mut mem = self.expr(k, &pred.row, None);
        let mut mem_rhs = -pred.offset;
        if let Some(gz) = gate {
            let slack = self.expr_cap(&mem) + pred.offset.abs() + 1.0;
            mem.push((gz, -slack));
            mem_rhs -= slack;
        }
        self.model
            .add_constraint(format!("w{wid}_member"), mem, Sense::Ge, mem_rhs);

        self.windows.push(CbfWindowInfo {
            label: format!("w{wid}[{}]", pred.name),
            interval: k,
            dec,
            pred: pred.clone(),
            mode,
            gate,
        });
        Ok(())
    }
}

/// Builds the full planning MIQP: multiple-shooting dynamics, input bounds,
/// formula satisfaction with root `z = 1`, barrier windows, control ties, and
/// the interval-weighted effort objective `Σ τ_k·u_kᵀu_k`.
///
/// `formula` is normalized and the grid aligned internally; pass the raw
/// parsed formula and the uniform base grid.
pub fn build_miqp(
    sys: &LinearSystem,
    x0: &DVector<f64>,
    formula: &Formula,
    base: &TimeGrid,
    safety: &[SafetySpec],
    cfg: &EncodingConfig,
) -> Result<EncodedModel, EncoderError> {
    if x0.len() != sys.state_dim() {
        return Err(EncoderError::BadConfig(format!(
            "x0 has length {}, state dimension is {}",
            x0.len(),
            sys.state_dim()
        )));
    }
    let n = sys.state_dim();
    let m_in = sys.input_dim();
    if !cfg.u_lower.is_empty() && (cfg.u_lower.len() != m_in || cfg.u_upper.len() != m_in) {
        return Err(EncoderError::BadConfig("input bound length mismatch".into()));
    }
    let nnf = to_nnf(formula)?;
    let (grid, ties) = align_time_grid(&nnf, base)?;
    let grounded = ground(&nnf, &grid)?;

    let mut model = MiqpModel::new();
    let big = cfg.big_m;
    if !cfg.x_lower.is_empty() && (cfg.x_lower.len() != n || cfg.x_upper.len() != n) {
        return Err(EncoderError::BadConfig("state bound length mismatch".into()));
    }
    let x_vars: Vec<Vec<usize>> = (0..grid.num_nodes())
        .map(|k| {
            (0..n)
                .map(|i| {
                    let (lo, hi) = if cfg.x_lower.is_empty() {
                        (-big, big)
                    } else {
                        (cfg.x_lower[i], cfg.x_upper[i])
                    };
                    model.add_continuous(format!("x{k}_{i}"), lo, hi)
                })
                .collect()
        })
        .collect();
    let u_vars: Vec<Vec<usize>> = (0..grid.num_intervals())
        .map(|k| {
            (0..m_in)
                .map(|i| {
                    let (lo, hi) = if cfg.u_lower.is_empty() {
                        (-big, big)
                    } else {
                        (cfg.u_lower[i], cfg.u_upper[i])
                    };
                    model.add_continuous(format!("u{k}_{i}"), lo, hi)
                })
                .collect()
        })
        .collect();

    // objective: Σ_k τ_k·u_kᵀu_k
    for k in 0..grid.num_intervals() {
        for &v in &u_vars[k] {
            model.set_quadratic(v, grid.tau(k));
        }
    }

    // x_0 = x0
    for i in 0..n {
        model.add_constraint(
            format!("init_{i}"),
            vec![(x_vars[0][i], 1.0)],
            Sense::Eq,
            x0[i],
        );
    }

    // exact one-step dynamics per interval
    for k in 0..grid.num_intervals() {
        let (ad, bd) = step_matrices(sys, grid.tau(k))?;
        for i in 0..n {
            let mut row = vec![(x_vars[k + 1][i], -1.0)];
            for j in 0..n {
                if ad[(i, j)] != 0.0 {
                    row.push((x_vars[k][j], ad[(i, j)]));
                }
            }
            for j in 0..m_in {
                if bd[(i, j)] != 0.0 {
                    row.push((u_vars[k][j], bd[(i, j)]));
                }
            }
            model.add_constraint(format!("dyn{k}_{i}"), row, Sense::Eq, 0.0);
        }
    }

    // control ties for virtual nodes
    for &(vk, src) in &ties {
        for i in 0..m_in {
            model.add_constraint(
                format!("tie{vk}_{i}"),
                vec![(u_vars[vk][i], 1.0), (u_vars[src][i], -1.0)],
                Sense::Eq,
                0.0,
            );
        }
    }

    let mut enc = Encoder {
        sys,
        cfg,
        grid: grid.clone(),
        model,
        x_vars,
        u_vars,
        z_vars: BTreeMap::new(),
        windows: Vec::new(),
        gated: {
            let mut g = BTreeSet::new();
            let mut n = 0;
            collect_gated_ids(&nnf, cfg.cbf_windows, &mut n, &mut g);
            g
        },
        aux: 0,
    };

    let mut next_id = 0;
    enc.create_z_vars(&nnf, &grounded, &mut next_id);
    next_id = 0;
    let root = enc.encode_node(&nnf, &grounded, &mut next_id)?;
    let root_z = enc.z(root, grounded.eval_times[root][0]);
    enc.model
        .add_constraint("root", vec![(root_z, 1.0)], Sense::Eq, 1.0);

    // standing safety: every interval, ungated
    for spec in safety {
        for k in 0..grid.num_intervals() {
            enc.emit_cbf_window(&spec.pred, k, None, spec.mode, spec.poles.as_deref())?;
        }
    }

    Ok(EncodedModel {
        model: enc.model,
        grid,
        formula: nnf,
        grounded,
        x_vars: enc.x_vars,
        u_vars: enc.u_vars,
        z_vars: enc.z_vars,
        cbf_windows: enc.windows,
        ties,
        big_m: cfg.big_m,
        u_box_from_m: cfg.u_lower.is_empty(),
        x_caps: (0..n)
            .map(|i| {
                if cfg.x_lower.is_empty() {
                    cfg.big_m
                } else {
                    cfg.x_lower[i].abs().max(cfg.x_upper[i].abs())
                }
            })
            .collect(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::miqp::{branch_and_bound, SolveStatus};
    use crate::stl::{discrete_robustness, parse};
    use approx::assert_abs_diff_eq;

    fn double_integrator() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(0, 2),
        )
        .unwrap()
    }

    fn dense_term_min(coef: f64, lambda: f64, j: u32, tau: f64) -> f64 {
        (0..=10_000)
            .map(|i| {
                let t = tau * i as f64 / 10_000.0;
                coef * (lambda * t).exp() * t.powi(j as i32)
            })
            .fold(f64::INFINITY, f64::min)
    }

    #[test]
    fn term_window_min_spec_cases() {
        let (v, t) = term_window_min(-1.0, 0.0, 1, 0.5);
        assert_abs_diff_eq!(v, -0.5, epsilon = 1e-12);
        assert_abs_diff_eq!(t, 0.5, epsilon = 1e-12);

        let (v, t) = term_window_min(-1.0, -2.0, 1, 1.0);
        assert_abs_diff_eq!(v, -0.5 * (-1.0f64).exp(), epsilon = 1e-12);
        assert_abs_diff_eq!(t, 0.5, epsilon = 1e-12);

        let (v, t) = term_window_min(2.0, 1.0, 0, 3.0);
        assert_abs_diff_eq!(v, 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(t, 0.0, epsilon = 1e-12);
    }

    #[test]
    fn term_window_min_matches_dense_sampling() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        for _ in 0..200 {
            let coef = rng.random_range(-3.0..3.0);
            let lambda = rng.random_range(-4.0..2.0);
            let j = rng.random_range(0..4u32);
            let tau = rng.random_range(0.05..2.0);
            let (v, _) = term_window_min(coef, lambda, j, tau);
            let dense = dense_term_min(coef, lambda, j, tau);
            assert!(
                v <= dense + 1e-12 && v >= dense - 1e-8 * (1.0 + coef.abs()),
                "coef={coef} λ={lambda} j={j} τ={tau}: analytic {v} vs dense {dense}"
            );
        }
    }

    #[test]
    fn ecbf_gains_from_poles() {
        let sys = double_integrator();
        let p = Predicate::new(RowDVector::from_row_slice(&[1.0, 0.0]), 0.0, "h");
        let spec = ecbf_spec(&sys, &p, &[-1.0, -2.0]).unwrap();
        assert_eq!(spec.r_b, 2);
        assert_abs_diff_eq!(spec.k_b[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.k_b[1], 3.0, epsilon = 1e-12);
        // ζ = u + 2 x1 + 3 x2
        assert_abs_diff_eq!(spec.zeta_u[0], 1.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.zeta_x[0], 2.0, epsilon = 1e-12);
        assert_abs_diff_eq!(spec.zeta_x[1], 3.0, epsilon = 1e-12);

        let p2 = Predicate::new(RowDVector::from_row_slice(&[0.0, 1.0]), 0.0, "h2");
        assert_eq!(ecbf_spec(&sys, &p2, &[-1.0]).unwrap().r_b, 1);

        let sys_nodeg = LinearSystem::new(
            DMatrix::zeros(2, 2),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(0, 2),
        )
        .unwrap();
        let p3 = Predicate::new(RowDVector::from_row_slice(&[1.0, 0.0]), 0.0, "h3");
        assert!(matches!(
            ecbf_spec(&sys_nodeg, &p3, &[-1.0, -2.0]),
            Err(EncoderError::NoRelativeDegree)
        ));
    }

    #[test]
    fn align_grid_example3_endpoints() {
        let base = TimeGrid::uniform(2.0, 10).unwrap();
        let f = parse("G[0.63,0.80](x2 >= 3) & F[1.4,2.0](x2 <= -4)", 2).unwrap();
        let (grid, ties) = align_time_grid(&f, &base).unwrap();
        assert_eq!(grid.num_nodes(), 12);
        assert!(grid.is_virtual(4));
        assert_abs_diff_eq!(grid.node(4), 0.63, epsilon = 1e-12);
        assert_eq!(ties, vec![(4, 3)]);
    }

    #[test]
    fn align_grid_no_op_when_aligned() {
        let base = TimeGrid::uniform(2.0, 10).unwrap();
        let f = parse("F[0.2,0.8](x1 <= -2)", 2).unwrap();
        let (grid, ties) = align_time_grid(&f, &base).unwrap();
        assert_eq!(grid, base);
        assert!(ties.is_empty());
    }

    #[test]
    fn align_grid_two_virtuals_same_interval() {
        let base = TimeGrid::uniform(2.0, 10).unwrap();
        let f = parse("F[0.63,0.71](x1 >= 0)", 2).unwrap();
        let (grid, ties) = align_time_grid(&f, &base).unwrap();
        assert_eq!(grid.num_nodes(), 13);
        // both inserted intervals continue the control of interval 3 ([0.6, ...))
        assert_eq!(ties, vec![(4, 3), (5, 3)]);
    }

    #[test]
    fn build_top_formula_is_pure_qp() {
        let sys = double_integrator();
        let base = TimeGrid::uniform(1.0, 5).unwrap();
        let x0 = DVector::from_row_slice(&[1.0, -1.0]);
        let enc = build_miqp(&sys, &x0, &Formula::True, &base, &[], &EncodingConfig::default())
            .unwrap();
        assert_eq!(enc.u_vars.len(), 5);
        let sol = branch_and_bound(&enc.model).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        for u in enc.controls(&sol.x) {
            assert_abs_diff_eq!(u[0], 0.0, epsilon = 1e-5);
        }
        // shooting consistency of the zero-input rollout
        let states = enc.states(&sol.x);
        assert_abs_diff_eq!(states[5][0], 0.0, epsilon = 1e-5); // x1 = 1 - t at t=1
    }

    #[test]
    fn build_eventually_reaches_target() {
        let sys = double_integrator();
        let base = TimeGrid::uniform(1.0, 5).unwrap();
        let x0 = DVector::from_row_slice(&[0.0, 0.0]);
        let f = parse("F[0.4,0.8](x1 >= 1)", 2).unwrap();
        let enc =
            build_miqp(&sys, &x0, &f, &base, &[], &EncodingConfig::default()).unwrap();
        let sol = branch_and_bound(&enc.model).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let states = enc.states(&sol.x);
        let samples: Vec<(f64, DVector<f64>)> = (0..enc.grid.num_nodes())
            .map(|k| (enc.grid.node(k), states[k].clone()))
            .collect();
        let rho = discrete_robustness(&samples, &f).unwrap();
        assert!(rho >= -1e-6, "discrete robustness {rho}");
    }

    #[test]
    fn always_window_bound_holds_between_nodes() {
        // G[0,1](x1 >= 0) with a coarse grid: without windows the continuous
        // trajectory may dip below 0 between nodes; with windows it must not.
        let sys = double_integrator();
        let base = TimeGrid::uniform(1.0, 4).unwrap();
        let x0 = DVector::from_row_slice(&[0.5, -2.0]);
        let f = parse("G[0.0,1.0](x1 >= 0)", 2).unwrap();
        let cfg = EncodingConfig {
            always_mode: CbfMode::Ecbf,
            ecbf_poles: vec![-2.0, -3.0],
            ..EncodingConfig::default()
        };
        let enc = build_miqp(&sys, &x0, &f, &base, &[], &cfg).unwrap();
        assert!(!enc.cbf_windows.is_empty());
        let sol = branch_and_bound(&enc.model).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let states = enc.states(&sol.x);
        let controls = enc.controls(&sol.x);
        for k in 0..enc.grid.num_intervals() {
            for i in 0..=100 {
                let dt = enc.grid.tau(k) * i as f64 / 100.0;
                let (ad, bd) = step_matrices(&sys, dt).unwrap();
                let xt = &ad * &states[k] + &bd * &controls[k];
                assert!(
                    xt[0] >= -1e-6,
                    "x1 dips to {} inside interval {k}",
                    xt[0]
                );
            }
        }
    }

    #[test]
    fn safety_spec_keeps_band() {
        let sys = double_integrator();
        let base = TimeGrid::uniform(1.0, 4).unwrap();
        let x0 = DVector::from_row_slice(&[0.0, 0.0]);
        let f = parse("F[0.4,0.8](x1 >= 0.5)", 2).unwrap();
        let safety = vec![
            SafetySpec {
                pred: Predicate::new(RowDVector::from_row_slice(&[0.0, -1.0]), 3.0, "v_hi"),
                mode: CbfMode::Zcbf,
                poles: None,
            },
            SafetySpec {
                pred: Predicate::new(RowDVector::from_row_slice(&[0.0, 1.0]), 3.0, "v_lo"),
                mode: CbfMode::Zcbf,
                poles: None,
            },
        ];
        let enc = build_miqp(&sys, &x0, &f, &base, &safety, &EncodingConfig::default()).unwrap();
        // endpoints 0.4/0.8 insert two virtual nodes: 6 intervals x 2 barriers
        assert_eq!(enc.cbf_windows.len(), 12);
        let sol = branch_and_bound(&enc.model).unwrap();
        assert_eq!(sol.status, SolveStatus::Optimal);
        let states = enc.states(&sol.x);
        let controls = enc.controls(&sol.x);
        for k in 0..enc.grid.num_intervals() {
            for i in 0..=50 {
                let dt = enc.grid.tau(k) * i as f64 / 50.0;
                let (ad, bd) = step_matrices(&sys, dt).unwrap();
                let xt = &ad * &states[k] + &bd * &controls[k];
                assert!(xt[1].abs() <= 3.0 + 1e-6, "|x2| = {} exceeds band", xt[1].abs());
            }
        }
        assert!(enc.audit_big_m(&sol.x).is_empty());
    }

    #[test]
    fn encoded_bound_is_sound_underestimate() {
        use rand::{Rng, SeedableRng};
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(5);
        let sys = double_integrator();
        let p = Predicate::new(RowDVector::from_row_slice(&[1.0, 0.0]), 1.0, "h");
        let dec = mode_decompose(&sys, &p.row, p.offset).unwrap();
        for _ in 0..100 {
            let x0 = DVector::from_row_slice(&[rng.random_range(-2.0..2.0), rng.random_range(-2.0..2.0)]);
            let u0 = DVector::from_row_slice(&[rng.random_range(-2.0..2.0)]);
            let tau = rng.random_range(0.05..1.0);
            let bound = encoded_window_bound(&dec, &x0, &u0, tau);
            let dense = (0..=2000)
                .map(|i| dec.value(&x0, &u0, tau * i as f64 / 2000.0))
                .fold(f64::INFINITY, f64::min);
            assert!(bound <= dense + 1e-9, "bound {bound} above true min {dense}");
        }
    }
}
