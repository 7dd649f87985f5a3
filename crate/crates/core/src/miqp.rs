//! Mixed-integer quadratic programs with a diagonal PSD objective:
//! model container, convex QP relaxation (interior point, via Clarabel),
//! best-first branch-and-bound on the binary columns, and LP-format export
//! for external cross-checks.

use clarabel::algebra::CscMatrix;
use clarabel::solver::{
    DefaultSettings, DefaultSolver, IPSolver, SolverStatus, SupportedConeT,
};
use std::cmp::Ordering;
use std::collections::{BTreeMap, BinaryHeap};
use std::fmt::Write as _;
use thiserror::Error;

/// Feasibility tolerance for reported solutions.
pub const FEAS_TOL: f64 = 1e-7;
/// A relaxation value within this distance of 0/1 counts as integral.
pub const INTEGRALITY_TOL: f64 = 1e-6;
/// Absolute optimality gap of branch-and-bound.
pub const GAP_ABS: f64 = 1e-6;
/// Node budget before giving up with the best incumbent.
pub const MAX_NODES: usize = 200_000;
/// Relaxation-only preference nudging binaries toward zero so interior-point
/// solutions don't leave don't-care binaries fractional. Never part of the
/// model objective; branch-and-bound compensates its bounds for it.
const BIN_PREF: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum MiqpError {
    #[error("constraint references variable {index} but model has {count}")]
    BadVariableRef { index: usize, count: usize },
    #[error("objective weight for variable {index} is negative ({w})")]
    IndefiniteObjective { index: usize, w: f64 },
    #[error("non-finite coefficient in {place}")]
    NonFinite { place: String },
    #[error("fixed value {v} for binary {index} is not 0 or 1")]
    BadFixedValue { index: usize, v: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Sense {
    Le,
    Eq,
    Ge,
}

#[derive(Debug, Clone)]
pub struct Variable {
    pub name: String,
    pub lower: f64,
    pub upper: f64,
    pub binary: bool,
}

/// Sparse linear constraint `row · x  (sense)  rhs`.
#[derive(Debug, Clone)]
pub struct LinearConstraint {
    pub row: Vec<(usize, f64)>,
    pub sense: Sense,
    pub rhs: f64,
    pub name: String,
}

/// Quadratic program with binary columns. Objective is
/// `Σ quad[i]·x_i² + Σ lin[i]·x_i` with `quad[i] ≥ 0`.
#[derive(Debug, Clone, Default)]
pub struct MiqpModel {
    pub vars: Vec<Variable>,
    pub constraints: Vec<LinearConstraint>,
    pub quad: Vec<f64>,
    pub lin: Vec<f64>,
    /// Sign-indicator binaries: `z ↦ (expr, offset)` where any integer point
    /// admits `z = 1` exactly when `expr·x + offset ≤ 0` (either value works
    /// on the boundary). Branch-and-bound never branches on these; it derives
    /// their values from the relaxation point, which is always consistent.
    pub indicators: BTreeMap<usize, (Vec<(usize, f64)>, f64)>,
}

impl MiqpModel {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add_continuous(&mut self, name: impl Into<String>, lower: f64, upper: f64) -> usize {
        self.vars.push(Variable {
            name: name.into(),
            lower,
            upper,
            binary: false,
        });
        self.quad.push(0.0);
        self.lin.push(0.0);
        self.vars.len() - 1
    }

    pub fn add_binary(&mut self, name: impl Into<String>) -> usize {
        self.vars.push(Variable {
            name: name.into(),
            lower: 0.0,
            upper: 1.0,
            binary: true,
        });
        self.quad.push(0.0);
        self.lin.push(0.0);
        self.vars.len() - 1
    }

    pub fn add_constraint(
        &mut self,
        name: impl Into<String>,
        row: Vec<(usize, f64)>,
        sense: Sense,
        rhs: f64,
    ) {
        self.constraints.push(LinearConstraint {
            row,
            sense,
            rhs,
            name: name.into(),
        });
    }

    /// Declares `z` a sign indicator of `expr·x + offset` (see
    /// [`MiqpModel::indicators`]). The caller must guarantee the claimed
    /// consistency; the solver does not check it.
    pub fn mark_indicator(&mut self, z: usize, expr: Vec<(usize, f64)>, offset: f64) {
        self.indicators.insert(z, (expr, offset));
    }

    pub fn set_quadratic(&mut self, index: usize, weight: f64) {
        self.quad[index] = weight;
    }

    pub fn set_linear(&mut self, index: usize, coeff: f64) {
        self.lin[index] = coeff;
    }

    pub fn num_vars(&self) -> usize {
        self.vars.len()
    }

    pub fn binary_indices(&self) -> Vec<usize> {
        (0..self.vars.len()).filter(|&i| self.vars[i].binary).collect()
    }

    pub fn validate(&self) -> Result<(), MiqpError> {
        let n = self.vars.len();
        for (i, &w) in self.quad.iter().enumerate() {
            if w < 0.0 {
                return Err(MiqpError::IndefiniteObjective { index: i, w });
            }
            if !w.is_finite() || !self.lin[i].is_finite() {
                return Err(MiqpError::NonFinite {
                    place: format!("objective term {i}"),
                });
            }
        }
        for c in &self.constraints {
            if !c.rhs.is_finite() {
                return Err(MiqpError::NonFinite {
                    place: format!("rhs of {}", c.name),
                });
            }
            for &(j, a) in &c.row {
                if j >= n {
                    return Err(MiqpError::BadVariableRef { index: j, count: n });
                }
                if !a.is_finite() {
                    return Err(MiqpError::NonFinite {
                        place: format!("coefficient in {}", c.name),
                    });
                }
            }
        }
        Ok(())
    }

    /// Objective value at a point.
    pub fn objective(&self, x: &[f64]) -> f64 {
        x.iter()
            .enumerate()
            .map(|(i, &v)| self.quad[i] * v * v + self.lin[i] * v)
            .sum()
    }

    /// Worst signed constraint violation at a point (0 when feasible).
    pub fn max_violation(&self, x: &[f64]) -> f64 {
        let mut worst: f64 = 0.0;
        for c in &self.constraints {
            let lhs: f64 = c.row.iter().map(|&(j, a)| a * x[j]).sum();
            let v = match c.sense {
                Sense::Le => lhs - c.rhs,
                Sense::Ge => c.rhs - lhs,
                Sense::Eq => (lhs - c.rhs).abs(),
            };
            worst = worst.max(v);
        }
        for (i, var) in self.vars.iter().enumerate() {
            if var.lower.is_finite() {
                worst = worst.max(var.lower - x[i]);
            }
            if var.upper.is_finite() {
                worst = worst.max(x[i] - var.upper);
            }
        }
        worst
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SolveStatus {
    Optimal,
    Infeasible,
    IterLimit,
}

#[derive(Debug, Clone)]
pub struct Solution {
    pub status: SolveStatus,
    pub x: Vec<f64>,
    pub objective: f64,
    /// Values of the binary columns in model order.
    pub binaries: Vec<f64>,
    pub nodes: usize,
    pub incumbents: usize,
}

impl Solution {
    fn infeasible(n: usize) -> Self {
        Solution {
            status: SolveStatus::Infeasible,
            x: vec![0.0; n],
            objective: f64::INFINITY,
            binaries: Vec::new(),
            nodes: 0,
            incumbents: 0,
        }
    }
}

/// Partial assignment of the binary columns, keyed by variable index.
pub type FixedBinaries = Vec<(usize, f64)>;

/// Solves the convex QP relaxation. Binaries in `fixed` are pinned to the
/// given 0/1 value, the rest relax to `[0, 1]`.
pub fn solve_qp(model: &MiqpModel, fixed: &FixedBinaries) -> Result<Solution, MiqpError> {
    solve_qp_with(model, fixed, true)
}

/// `strict = false` loosens the interior-point tolerances; branch-and-bound
/// uses it for relaxations whose exact values never leave the search.
fn solve_qp_with(
    model: &MiqpModel,
    fixed: &FixedBinaries,
    strict: bool,
) -> Result<Solution, MiqpError> {
    model.validate()?;
    for &(i, v) in fixed {
        if i >= model.vars.len() {
            return Err(MiqpError::BadVariableRef {
                index: i,
                count: model.vars.len(),
            });
        }
        if v != 0.0 && v != 1.0 {
            return Err(MiqpError::BadFixedValue { index: i, v });
        }
    }
    let n = model.vars.len();
    if n == 0 {
        return Ok(Solution {
            status: SolveStatus::Optimal,
            x: Vec::new(),
            objective: 0.0,
            binaries: Vec::new(),
            nodes: 0,
            incumbents: 0,
        });
    }

    // Clarabel solves min ½x'Px + q'x s.t. Ax + s = b, s in cones,
    // with all equality rows (ZeroCone) listed before inequality rows.
    let mut eq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    let mut ineq_rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new(); // row·x ≤ b form
    for c in &model.constraints {
        match c.sense {
            Sense::Eq => eq_rows.push((c.row.clone(), c.rhs)),
            Sense::Le => ineq_rows.push((c.row.clone(), c.rhs)),
            Sense::Ge => ineq_rows.push((
                c.row.iter().map(|&(j, a)| (j, -a)).collect(),
                -c.rhs,
            )),
        }
    }
    let mut pinned = vec![None; n];
    for &(i, v) in fixed {
        pinned[i] = Some(v);
    }
    for (i, var) in model.vars.iter().enumerate() {
        if let Some(v) = pinned[i] {
            eq_rows.push((vec![(i, 1.0)], v));
            continue;
        }
        if var.lower.is_finite() {
            ineq_rows.push((vec![(i, -1.0)], -var.lower));
        }
        if var.upper.is_finite() {
            ineq_rows.push((vec![(i, 1.0)], var.upper));
        }
    }

    let m = eq_rows.len() + ineq_rows.len();
    let mut triplets: Vec<(usize, usize, f64)> = Vec::new();
    let mut b = Vec::with_capacity(m);
    for (r, (row, rhs)) in eq_rows.iter().chain(ineq_rows.iter()).enumerate() {
        for &(j, a) in row {
            triplets.push((r, j, a));
        }
        b.push(*rhs);
    }
    let a_mat = csc_from_triplets(m, n, &mut triplets);
    let p_mat = {
        let mut t: Vec<(usize, usize, f64)> = model
            .quad
            .iter()
            .enumerate()
            .filter(|(_, &w)| w != 0.0)
            .map(|(i, &w)| (i, i, 2.0 * w))
            .collect();
        csc_from_triplets(n, n, &mut t)
    };
    let cones = [
        SupportedConeT::ZeroConeT(eq_rows.len()),
        SupportedConeT::NonnegativeConeT(ineq_rows.len()),
    ];
    let settings = if strict {
        DefaultSettings {
            verbose: false,
            tol_gap_abs: 1e-10,
            tol_gap_rel: 1e-10,
            tol_feas: 1e-9,
            max_iter: 200,
            ..DefaultSettings::default()
        }
    } else {
        DefaultSettings {
            verbose: false,
            // gap kept ahead of the BIN_PREF nudge so it actually lands
            // binaries near 0/1 instead of drowning in the duality gap
            tol_gap_abs: 1e-9,
            tol_gap_rel: 1e-9,
            tol_feas: 1e-8,
            max_iter: 100,
            ..DefaultSettings::default()
        }
    };
    let mut lin = model.lin.clone();
    if !strict {
        for (i, var) in model.vars.iter().enumerate() {
            if var.binary {
                lin[i] += BIN_PREF;
            }
        }
    }
    let mut solver = DefaultSolver::new(&p_mat, &lin, &a_mat, &b, &cones, settings)
        .map_err(|e| MiqpError::NonFinite {
            place: format!("solver setup: {e:?}"),
        })?;
    solver.solve();

    let status = match solver.solution.status {
        SolverStatus::Solved | SolverStatus::AlmostSolved => SolveStatus::Optimal,
        SolverStatus::PrimalInfeasible | SolverStatus::AlmostPrimalInfeasible => {
            SolveStatus::Infeasible
        }
        SolverStatus::DualInfeasible | SolverStatus::AlmostDualInfeasible => {
            // unbounded relaxation; callers bound every variable so treat as breakdown
            SolveStatus::IterLimit
        }
        _ => SolveStatus::IterLimit,
    };
    let x = solver.solution.x.clone();
    let objective = if status == SolveStatus::Infeasible {
        f64::INFINITY
    } else {
        model.objective(&x)
    };
    let binaries = model
        .binary_indices()
        .iter()
        .map(|&i| x.get(i).copied().unwrap_or(0.0))
        .collect();
    Ok(Solution {
        status,
        x,
        objective,
        binaries,
        nodes: 1,
        incumbents: 0,
    })
}

fn csc_from_triplets(m: usize, n: usize, triplets: &mut [(usize, usize, f64)]) -> CscMatrix<f64> {
    triplets.sort_by(|a, b| (a.1, a.0).cmp(&(b.1, b.0)));
    let mut colptr = vec![0usize; n + 1];
    let mut rowval = Vec::with_capacity(triplets.len());
    let mut nzval: Vec<f64> = Vec::with_capacity(triplets.len());
    for &(r, c, v) in triplets.iter() {
        // merge duplicates landing on the same entry
        if rowval.last() == Some(&r) && colptr[c + 1] > 0 && {
            let filled: usize = colptr[1..=c + 1].iter().sum();
            filled == rowval.len()
        } {
            *nzval.last_mut().unwrap() += v;
            continue;
        }
        colptr[c + 1] += 1;
        rowval.push(r);
        nzval.push(v);
    }
    for c in 0..n {
        colptr[c + 1] += colptr[c];
    }
    CscMatrix::new(m, n, colptr, rowval, nzval)
}

/// Heap entry ordered by (bound, sequence id); BinaryHeap is a max-heap so
/// the ordering is reversed to pop the lowest bound first.
struct Node {
    bound: f64,
    seq: usize,
    fixed: FixedBinaries,
}

impl PartialEq for Node {
    fn eq(&self, other: &Self) -> bool {
        self.cmp(other) == Ordering::Equal
    }
}
impl Eq for Node {}
impl PartialOrd for Node {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}
impl Ord for Node {
    fn cmp(&self, other: &Self) -> Ordering {
        other
            .bound
            .total_cmp(&self.bound)
            .then_with(|| other.seq.cmp(&self.seq))
    }
}

/// Completes `fixed` to a full binary assignment guided by a relaxation
/// point. Whenever a constraint contains exactly one undecided binary (all
/// other entries evaluated at decided/relaxation values) and only one of its
/// two values keeps the constraint satisfied, that binary is pinned; the
/// sweep repeats to a fixpoint and leftovers are rounded. The result is only
/// a guess — callers verify it with a pinned QP solve.
fn propagate_rounding(
    model: &MiqpModel,
    bin_idx: &[usize],
    fixed: &FixedBinaries,
    x: &[f64],
) -> FixedBinaries {
    let value = propagate(model, fixed, x, false);
    bin_idx
        .iter()
        .map(|&i| {
            let v = value[i].unwrap_or_else(|| indicator_value(model, i, x).unwrap_or(
                if x[i] >= 0.5 { 1.0 } else { 0.0 },
            ));
            (i, v)
        })
        .collect()
}

/// Consistent value for an indicator binary at a relaxation point, `None`
/// when the binary is not an indicator.
fn indicator_value(model: &MiqpModel, i: usize, x: &[f64]) -> Option<f64> {
    model.indicators.get(&i).map(|(expr, offset)| {
        let e: f64 = expr.iter().map(|&(v, c)| c * x[v]).sum::<f64>() + offset;
        if e <= 0.0 {
            1.0
        } else {
            0.0
        }
    })
}

/// Extends `fixed` with sign-derived values for every unpinned indicator.
fn pin_indicators(model: &MiqpModel, fixed: &mut FixedBinaries, x: &[f64]) {
    for &i in model.indicators.keys() {
        if !fixed.iter().any(|&(j, _)| j == i) {
            fixed.push((i, indicator_value(model, i, x).unwrap()));
        }
    }
    fixed.sort_by_key(|&(j, _)| j);
}

/// The propagation half of [`propagate_rounding`]: pins only what some
/// constraint forces given the decided binaries and the relaxation point.
///
/// With `logic_only` set, rows touching continuous variables are skipped.
/// What remains is sound deduction over the boolean structure — continuous
/// values can still move after a pin, so inferences leaning on them are only
/// guesses.
fn propagate(
    model: &MiqpModel,
    fixed: &FixedBinaries,
    x: &[f64],
    logic_only: bool,
) -> Vec<Option<f64>> {
    const SLACK: f64 = 1e-6;
    let mut value: Vec<Option<f64>> = vec![None; model.vars.len()];
    for &(i, v) in fixed {
        value[i] = Some(v);
    }
    loop {
        let mut changed = false;
        for c in &model.constraints {
            if logic_only && c.row.iter().any(|&(j, _)| !model.vars[j].binary) {
                continue;
            }
            let mut undecided: Option<(usize, f64)> = None;
            let mut count = 0usize;
            let mut base = 0.0;
            for &(j, a) in &c.row {
                if model.vars[j].binary && value[j].is_none() {
                    count += 1;
                    undecided = Some((j, a));
                } else if model.vars[j].binary {
                    base += a * value[j].unwrap();
                } else {
                    base += a * x[j];
                }
            }
            if count != 1 {
                continue;
            }
            let (j, a) = undecided.unwrap();
            let ok = |lhs: f64| match c.sense {
                Sense::Le => lhs <= c.rhs + SLACK,
                Sense::Ge => lhs >= c.rhs - SLACK,
                Sense::Eq => (lhs - c.rhs).abs() <= SLACK,
            };
            let (ok0, ok1) = (ok(base), ok(base + a));
            if ok0 != ok1 {
                value[j] = Some(if ok1 { 1.0 } else { 0.0 });
                changed = true;
            }
        }
        if !changed {
            break;
        }
    }
    value
}

/// Activity-based bound tightening from a partial binary assignment.
///
/// Classic node presolve: row activity bounds over the current variable
/// boxes either prove the node infeasible, tighten a continuous box, or —
/// after integer rounding — pin further binaries. Everything deduced here is
/// sound (no relaxation values involved), so the pins extend the node's
/// assignment and infeasible nodes are pruned without a QP solve.
///
/// Returns `None` when some row cannot be satisfied over the boxes;
/// otherwise the extended assignment, sorted by variable index.
fn bound_propagate(model: &MiqpModel, fixed: &FixedBinaries) -> Option<FixedBinaries> {
    const TOL: f64 = 1e-9;
    let n = model.vars.len();
    let mut lb: Vec<f64> = model.vars.iter().map(|v| v.lower).collect();
    let mut ub: Vec<f64> = model.vars.iter().map(|v| v.upper).collect();
    for &(i, v) in fixed {
        lb[i] = v;
        ub[i] = v;
    }
    // (lhs ≤ rhs) views of every constraint; Eq contributes both directions
    let mut rows: Vec<(Vec<(usize, f64)>, f64)> = Vec::new();
    for c in &model.constraints {
        match c.sense {
            Sense::Le => rows.push((c.row.clone(), c.rhs)),
            Sense::Ge => rows.push((c.row.iter().map(|&(j, a)| (j, -a)).collect(), -c.rhs)),
            Sense::Eq => {
                rows.push((c.row.clone(), c.rhs));
                rows.push((c.row.iter().map(|&(j, a)| (j, -a)).collect(), -c.rhs));
            }
        }
    }
    for _sweep in 0..12 {
        let mut changed = false;
        for (row, rhs) in &rows {
            // minimum activity over the boxes, and its per-variable parts
            let mut minact = 0.0;
            for &(j, a) in row {
                minact += if a > 0.0 { a * lb[j] } else { a * ub[j] };
            }
            if !minact.is_finite() {
                continue;
            }
            if minact > rhs + TOL {
                return None;
            }
            for &(j, a) in row {
                if a == 0.0 {
                    continue;
                }
                let own = if a > 0.0 { a * lb[j] } else { a * ub[j] };
                let slack = rhs - (minact - own); // budget left for a·x_j
                if a > 0.0 {
                    let mut cap = slack / a;
                    if model.vars[j].binary && cap < 1.0 - 1e-6 {
                        cap = 0.0; // integer rounding
                    }
                    if cap < ub[j] - TOL {
                        if cap < lb[j] - TOL {
                            return None;
                        }
                        ub[j] = cap.max(lb[j]);
                        changed = true;
                    }
                } else {
                    let mut floor = slack / a;
                    if model.vars[j].binary && floor > 1e-6 {
                        floor = 1.0;
                    }
                    if floor > lb[j] + TOL {
                        if floor > ub[j] + TOL {
                            return None;
                        }
                        lb[j] = floor.min(ub[j]);
                        changed = true;
                    }
                }
            }
        }
        if !changed {
            break;
        }
    }
    let mut out = fixed.clone();
    for (i, var) in model.vars.iter().enumerate() {
        if var.binary && !fixed.iter().any(|&(j, _)| j == i) {
            if ub[i] < 0.5 {
                out.push((i, 0.0));
            } else if lb[i] > 0.5 {
                out.push((i, 1.0));
            }
        }
    }
    out.sort_by_key(|&(j, _)| j);
    Some(out)
}

/// Budgeted depth-first plunge for a first feasible integer point. Rounds the
/// most settled fractional binary, takes constraint-implied pins for free, and
/// backtracks on infeasibility instead of abandoning the attempt — rounding
/// alone rarely hits the thin feasible patterns that barrier-gated
/// disjunctions leave behind.
fn dive(
    model: &MiqpModel,
    bin_idx: &[usize],
    start_fixed: &FixedBinaries,
    budget: usize,
    nodes: &mut usize,
) -> Result<Option<Solution>, MiqpError> {
    let mut stack: Vec<FixedBinaries> = vec![start_fixed.clone()];
    let mut solves = 0usize;
    let mut rejects = 0usize;
    let mut deepest = 0usize;
    while let Some(fixed) = stack.pop() {
        if solves >= budget {
            if std::env::var_os("STLPLAN_BB_TRACE").is_some() {
                eprintln!(
                    "dive: budget out, deepest={deepest}/{} rejects={rejects}",
                    bin_idx.len()
                );
            }
            return Ok(None);
        }
        // sound implied pins come free, and boxes often refute a plunge
        // branch outright before it costs a solve
        let mut fixed = match bound_propagate(model, &fixed) {
            Some(f) => f,
            None => {
                rejects += 1;
                continue;
            }
        };
        let r = solve_qp_with(model, &fixed, false)?;
        solves += 1;
        *nodes += 1;
        deepest = deepest.max(fixed.len());
        if r.status != SolveStatus::Optimal {
            rejects += 1;
            continue;
        }
        let x = &r.x;
        let mut pick: Option<(usize, f64)> = None;
        let mut undecided = 0usize;
        for &i in bin_idx {
            if fixed.iter().any(|&(j, _)| j == i) {
                continue;
            }
            undecided += 1;
            let frac = x[i].min(1.0 - x[i]);
            if pick.map(|(_, f)| frac < f - 1e-12).unwrap_or(true) {
                pick = Some((i, frac));
            }
        }
        if undecided == 0 {
            pin_indicators(model, &mut fixed, x);
            let cand = solve_qp(model, &fixed)?;
            solves += 1;
            *nodes += 1;
            if cand.status == SolveStatus::Optimal && model.max_violation(&cand.x) <= FEAS_TOL {
                return Ok(Some(cand));
            }
            if std::env::var_os("STLPLAN_BB_TRACE").is_some() {
                eprintln!(
                    "dive: leaf rejected status={:?} viol={:.3e}",
                    cand.status,
                    model.max_violation(&cand.x)
                );
            }
            continue;
        }
        let (i, _) = pick.unwrap();
        let lead = if x[i] >= 0.5 { 1.0 } else { 0.0 };
        for v in [1.0 - lead, lead] {
            let mut child = fixed.clone();
            child.push((i, v));
            child.sort_by_key(|&(j, _)| j);
            stack.push(child); // rounded side on top, explored first
        }
    }
    Ok(None)
}

/// Global optimum over binary assignments by best-first branch-and-bound.
///
/// Branching variable is the most fractional relaxation value, ties broken
/// by lowest variable index; the search is sequential and deterministic.
pub fn branch_and_bound(model: &MiqpModel) -> Result<Solution, MiqpError> {
    model.validate()?;
    let bin_idx = model.binary_indices();
    if bin_idx.is_empty() {
        return solve_qp(model, &Vec::new());
    }
    // indicator binaries are settled by sign, never by branching
    let branch_idx: Vec<usize> = bin_idx
        .iter()
        .copied()
        .filter(|i| !model.indicators.contains_key(i))
        .collect();

    let mut heap = BinaryHeap::new();
    let mut seq = 0usize;
    let mut nodes = 0usize;
    let mut incumbents = 0usize;
    let mut best: Option<Solution> = None;

    let root = solve_qp(model, &Vec::new())?;
    nodes += 1;
    match root.status {
        SolveStatus::Infeasible => return Ok(Solution::infeasible(model.num_vars())),
        SolveStatus::IterLimit => {
            return Ok(Solution {
                status: SolveStatus::IterLimit,
                nodes,
                ..Solution::infeasible(model.num_vars())
            })
        }
        SolveStatus::Optimal => {}
    }
    heap.push(Node {
        bound: root.objective,
        seq,
        fixed: Vec::new(),
    });

    let mut hit_limit = false;
    while let Some(node) = heap.pop() {
        if let Some(ref inc) = best {
            if node.bound >= inc.objective - GAP_ABS {
                break; // best-first: every remaining node is at least as bad
            }
        }
        if nodes >= MAX_NODES {
            hit_limit = true;
            break;
        }
        // sound bound tightening: may refute the node before any solve, and
        // the pins it deduces are inherited by the whole subtree
        let fixed = match bound_propagate(model, &node.fixed) {
            Some(f) => f,
            None => continue,
        };
        let mut relax = solve_qp_with(model, &fixed, false)?;
        nodes += 1;
        let mut exact = false;
        if relax.status == SolveStatus::IterLimit {
            // loose solve stalled; retry at full precision before deciding
            relax = solve_qp(model, &fixed)?;
            nodes += 1;
            exact = true;
        }
        match relax.status {
            SolveStatus::Infeasible => continue,
            SolveStatus::IterLimit => {
                // No usable relaxation: the node cannot be pruned soundly, so
                // branch on the first unfixed binary with the parent's bound.
                if let Some(&i) = branch_idx
                    .iter()
                    .find(|&&i| !fixed.iter().any(|&(j, _)| j == i))
                {
                    for v in [0.0, 1.0] {
                        let mut fixed = fixed.clone();
                        fixed.push((i, v));
                        fixed.sort_by_key(|&(j, _)| j);
                        seq += 1;
                        heap.push(Node {
                            bound: node.bound,
                            seq,
                            fixed,
                        });
                    }
                }
                continue;
            }
            SolveStatus::Optimal => {}
        }
        // Loose solves carry a tiny preference pushing binaries toward zero
        // (see solve_qp_with); subtract its worst case so the bound stays a
        // true lower bound on the subtree.
        let mut bound = if exact {
            relax.objective
        } else {
            relax.objective - BIN_PREF * bin_idx.len() as f64
        };
        if let Some(ref inc) = best {
            if bound >= inc.objective - GAP_ABS {
                continue;
            }
        }
        // Propagation-guided rounding. Without it the interior point leaves
        // don't-care binaries fractional and the search branches on binaries
        // that never affect the objective. When the rounded point matches the
        // exact relaxation bound the node is solved and closed. Once an
        // incumbent exists the rounding rarely improves it, so only retry it
        // now and then instead of paying a full solve per node.
        // Without any incumbent nothing ever prunes, so dive for one early
        // and keep trying from fresh nodes while the search stays empty-handed.
        if best.is_none() && (nodes <= 2 || nodes % 512 < 4) {
            if let Some(cand) = dive(model, &branch_idx, &fixed, 600, &mut nodes)? {
                incumbents += 1;
                best = Some(cand);
            }
        }
        let mut closed = false;
        if nodes % 8 < 2 {
            let guess = propagate_rounding(model, &bin_idx, &fixed, &relax.x);
            let cand = solve_qp(model, &guess)?;
            nodes += 1;
            if cand.status == SolveStatus::Optimal && model.max_violation(&cand.x) <= FEAS_TOL {
                if best
                    .as_ref()
                    .map(|inc| cand.objective < inc.objective - GAP_ABS)
                    .unwrap_or(true)
                {
                    incumbents += 1;
                    best = Some(cand.clone());
                }
                if cand.objective <= relax.objective + GAP_ABS {
                    // may match the subtree optimum; confirm against the
                    // exact relaxation before closing
                    if !exact {
                        let sharp = solve_qp(model, &fixed)?;
                        nodes += 1;
                        match sharp.status {
                            SolveStatus::Infeasible => {
                                continue;
                            }
                            SolveStatus::Optimal => {
                                relax = sharp;
                                bound = relax.objective;
                                exact = true;
                            }
                            SolveStatus::IterLimit => {}
                        }
                    }
                    if exact && cand.objective <= bound + GAP_ABS {
                        closed = true;
                    }
                }
            }
        }
        if closed {
            continue;
        }
        if let Some(ref inc) = best {
            if bound >= inc.objective - GAP_ABS {
                continue;
            }
        }
        // most fractional unfixed binary, lowest index on ties
        let select_branch = |x: &[f64]| {
            let mut branch: Option<(usize, f64)> = None;
            for &i in &branch_idx {
                if fixed.iter().any(|&(j, _)| j == i) {
                    continue;
                }
                let v = x[i];
                let frac = v.min(1.0 - v); // distance to the nearest integer
                if frac > INTEGRALITY_TOL {
                    let better = match branch {
                        None => true,
                        Some((_, best_frac)) => frac > best_frac + 1e-12,
                    };
                    if better {
                        branch = Some((i, frac));
                    }
                }
            }
            branch
        };
        let mut branch = select_branch(&relax.x);
        if let Some((_, f)) = branch {
            if f < 1e-4 && !exact {
                // fractionality at loose-solve noise level: sharpen before
                // spending nodes on it
                relax = solve_qp(model, &fixed)?;
                nodes += 1;
                if relax.status != SolveStatus::Optimal {
                    continue;
                }
                bound = relax.objective;
                branch = select_branch(&relax.x);
            }
        }
        if std::env::var_os("STLPLAN_BB_TRACE").is_some() && nodes % 500 < 2 {
            eprintln!(
                "bb: nodes={} heap={} depth={} bound={:.6} inc={:?} branch={:?}",
                nodes,
                heap.len(),
                fixed.len(),
                relax.objective,
                best.as_ref().map(|b| b.objective),
                branch.map(|(i, f)| (model.vars[i].name.clone(), f)),
            );
        }
        match branch {
            None => {
                // integral relaxation: re-solve with binaries pinned so the
                // reported point is exactly feasible at integral values
                let mut fixed = fixed.clone();
                for &i in &branch_idx {
                    if !fixed.iter().any(|&(j, _)| j == i) {
                        fixed.push((i, relax.x[i].round()));
                    }
                }
                pin_indicators(model, &mut fixed, &relax.x);
                let cand = solve_qp(model, &fixed)?;
                nodes += 1;
                if cand.status == SolveStatus::Optimal
                    && model.max_violation(&cand.x) <= FEAS_TOL
                    && best
                        .as_ref()
                        .map(|inc| cand.objective < inc.objective - GAP_ABS)
                        .unwrap_or(true)
                {
                    incumbents += 1;
                    best = Some(cand);
                }
            }
            Some((i, _)) => {
                for v in [0.0, 1.0] {
                    let mut fixed = fixed.clone();
                    fixed.push((i, v));
                    fixed.sort_by_key(|&(j, _)| j);
                    seq += 1;
                    heap.push(Node {
                        bound,
                        seq,
                        fixed,
                    });
                }
            }
        }
    }

    Ok(match best {
        Some(mut sol) => {
            sol.status = if hit_limit {
                SolveStatus::IterLimit
            } else {
                SolveStatus::Optimal
            };
            sol.nodes = nodes;
            sol.incumbents = incumbents;
            sol
        }
        None => {
            let mut sol = Solution::infeasible(model.num_vars());
            sol.status = if hit_limit {
                SolveStatus::IterLimit
            } else {
                SolveStatus::Infeasible
            };
            sol.nodes = nodes;
            sol
        }
    })
}

/// Writes the model in LP format (CPLEX dialect: quadratic objective inside
/// `[ ... ] / 2`, `Binary` section, `End` terminator). Output is a pure
/// function of the model.
pub fn export_lp(model: &MiqpModel) -> String {
    let mut out = String::new();
    out.push_str("\\ stlplan MIQP export\n");
    out.push_str("Minimize\n obj:");
    let mut wrote = false;
    for (i, &c) in model.lin.iter().enumerate() {
        if c != 0.0 {
            let _ = write!(out, " {} {}", fmt_signed(c, wrote), model.vars[i].name);
            wrote = true;
        }
    }
    let quad_terms: Vec<(usize, f64)> = model
        .quad
        .iter()
        .enumerate()
        .filter(|(_, &w)| w != 0.0)
        .map(|(i, &w)| (i, w))
        .collect();
    if !quad_terms.is_empty() {
        if wrote {
            out.push_str(" +");
        }
        out.push_str(" [");
        for (k, &(i, w)) in quad_terms.iter().enumerate() {
            let _ = write!(
                out,
                " {} {} ^ 2",
                fmt_signed(2.0 * w, k > 0),
                model.vars[i].name
            );
        }
        out.push_str(" ] / 2");
        wrote = true;
    }
    if !wrote {
        out.push_str(" 0");
    }
    out.push('\n');
    out.push_str("Subject To\n");
    for c in &model.constraints {
        let _ = write!(out, " {}:", c.name);
        let mut first = true;
        for &(j, a) in &c.row {
            if a != 0.0 {
                let _ = write!(out, " {} {}", fmt_signed(a, !first), model.vars[j].name);
                first = false;
            }
        }
        if first {
            out.push_str(" 0");
        }
        let op = match c.sense {
            Sense::Le => "<=",
            Sense::Eq => "=",
            Sense::Ge => ">=",
        };
        let _ = writeln!(out, " {op} {}", fmt_plain(c.rhs));
    }
    out.push_str("Bounds\n");
    for v in &model.vars {
        if v.binary {
            continue; // implied 0/1 via Binary section
        }
        match (v.lower.is_finite(), v.upper.is_finite()) {
            (false, false) => {
                let _ = writeln!(out, " {} free", v.name);
            }
            (true, false) => {
                let _ = writeln!(out, " {} >= {}", v.name, fmt_plain(v.lower));
            }
            (false, true) => {
                let _ = writeln!(out, " {} <= {}", v.name, fmt_plain(v.upper));
            }
            (true, true) => {
                let _ = writeln!(
                    out,
                    " {} <= {} <= {}",
                    fmt_plain(v.lower),
                    v.name,
                    fmt_plain(v.upper)
                );
            }
        }
    }
    let bins: Vec<&str> = model
        .vars
        .iter()
        .filter(|v| v.binary)
        .map(|v| v.name.as_str())
        .collect();
    if !bins.is_empty() {
        out.push_str("Binary\n ");
        out.push_str(&bins.join(" "));
        out.push('\n');
    }
    out.push_str("End\n");
    out
}

fn fmt_plain(v: f64) -> String {
    if v == v.trunc() && v.abs() < 1e15 {
        format!("{v}")
    } else {
        format!("{v:.12}")
    }
}

fn fmt_signed(v: f64, explicit_plus: bool) -> String {
    if v < 0.0 {
        format!("- {}", fmt_plain(-v))
    } else if explicit_plus {
        format!("+ {}", fmt_plain(v))
    } else {
        fmt_plain(v)
    }
}
