//! Exact zero-order-hold discretization and modal decomposition of linear
//! time-invariant dynamics `x' = Ax + Bu`, `y = Cx`.
//!
//! [`step_matrices`] gives the one-step transition pair `(Ad, Bd)` for an
//! arbitrary hold interval, valid for singular and nonsingular `A` alike.
//! [`mode_decompose`] expands a scalar linear output `h(x(t)) = row·x(t) + σ`
//! along the held-input trajectory onto the basis `e^{λt}·t^j`, which is what
//! the barrier window bounds and the continuous monitor operate on.

use nalgebra::{DMatrix, DVector, RowDVector};
use thiserror::Error;

/// Absolute tolerance used when matching time instants against grid nodes.
pub const TIME_TOL: f64 = 1e-9;

/// Relative tolerance for eigenvalue clustering and rank decisions.
const SPECTRUM_TOL: f64 = 1e-8;

#[derive(Debug, Error)]
pub enum DynamicsError {
    #[error("invalid system: {0}")]
    InvalidSystem(String),
    #[error("invalid time grid: {0}")]
    InvalidGrid(String),
    #[error("complex eigenvalue pair {re} ± {im}i is not supported by the modal path")]
    ComplexModesUnsupported { re: f64, im: f64 },
    #[error("numerical Jordan structure is unstable: {0}")]
    DecompositionUnstable(String),
    #[error("time {t} outside window [{start}, {end}]")]
    OutOfWindow { t: f64, start: f64, end: f64 },
}

/// Continuous-time plant `x' = Ax + Bu`, `y = Cx`.
#[derive(Debug, Clone)]
pub struct LinearSystem {
    a: DMatrix<f64>,
    b: DMatrix<f64>,
    c: DMatrix<f64>,
}

impl LinearSystem {
    /// `a` must be square, `b` must have matching row count and `c` (possibly
    /// zero rows) matching column count; all entries finite.
    pub fn new(a: DMatrix<f64>, b: DMatrix<f64>, c: DMatrix<f64>) -> Result<Self, DynamicsError> {
        if a.nrows() != a.ncols() {
            return Err(DynamicsError::InvalidSystem(format!(
                "A must be square, got {}x{}",
                a.nrows(),
                a.ncols()
            )));
        }
        if b.nrows() != a.nrows() {
            return Err(DynamicsError::InvalidSystem(format!(
                "B has {} rows but A is {}x{}",
                b.nrows(),
                a.nrows(),
                a.nrows()
            )));
        }
        if c.nrows() > 0 && c.ncols() != a.ncols() {
            return Err(DynamicsError::InvalidSystem(format!(
                "C rows must have length {}, got {}",
                a.ncols(),
                c.ncols()
            )));
        }
        for m in [&a, &b, &c] {
            if m.iter().any(|v| !v.is_finite()) {
                return Err(DynamicsError::InvalidSystem("non-finite entry".into()));
            }
        }
        Ok(Self { a, b, c })
    }

    pub fn state_dim(&self) -> usize {
        self.a.nrows()
    }

    pub fn input_dim(&self) -> usize {
        self.b.ncols()
    }

    pub fn a(&self) -> &DMatrix<f64> {
        &self.a
    }

    pub fn b(&self) -> &DMatrix<f64> {
        &self.b
    }

    pub fn c(&self) -> &DMatrix<f64> {
        &self.c
    }
}

/// One-step ZOH transition pair: `x(t_k + dt) = Ad·x(t_k) + Bd·u_k`.
///
/// Both matrices come from a single exponential of the augmented block matrix
/// `[[A, B], [0, 0]]`, which handles singular `A` with no special case.
pub fn step_matrices(
    sys: &LinearSystem,
    dt: f64,
) -> Result<(DMatrix<f64>, DMatrix<f64>), DynamicsError> {
    if !dt.is_finite() || dt < 0.0 {
        return Err(DynamicsError::InvalidSystem(format!("invalid step length {dt}")));
    }
    let n = sys.state_dim();
    let m = sys.input_dim();
    if dt == 0.0 {
        return Ok((DMatrix::identity(n, n), DMatrix::zeros(n, m)));
    }
    let mut aug = DMatrix::zeros(n + m, n + m);
    aug.view_mut((0, 0), (n, n)).copy_from(&(&sys.a * dt));
    aug.view_mut((0, n), (n, m)).copy_from(&(&sys.b * dt));
    let e = aug.exp();
    let ad = e.view((0, 0), (n, n)).into_owned();
    let bd = e.view((0, n), (n, m)).into_owned();
    if ad.iter().chain(bd.iter()).any(|v| !v.is_finite()) {
        return Err(DynamicsError::InvalidSystem(
            "matrix exponential overflowed".into(),
        ));
    }
    Ok((ad, bd))
}

/// Control-update instants `t_0 = 0 < t_1 < … < t_N = t_f`, each marked as a
/// real sampling instant or an inserted virtual node.
#[derive(Debug, Clone, PartialEq)]
pub struct TimeGrid {
    nodes: Vec<f64>,
    virtual_flags: Vec<bool>,
}

impl TimeGrid {
    pub fn uniform(t_f: f64, intervals: usize) -> Result<Self, DynamicsError> {
        if !(t_f > 0.0) || intervals == 0 {
            return Err(DynamicsError::InvalidGrid(format!(
                "need t_f > 0 and at least one interval, got t_f={t_f}, N={intervals}"
            )));
        }
        let nodes = (0..=intervals)
            .map(|k| t_f * k as f64 / intervals as f64)
            .collect();
        Ok(Self {
            nodes,
            virtual_flags: vec![false; intervals + 1],
        })
    }

    pub fn from_nodes(nodes: Vec<f64>, virtual_flags: Vec<bool>) -> Result<Self, DynamicsError> {
        if nodes.len() < 2 || virtual_flags.len() != nodes.len() {
            return Err(DynamicsError::InvalidGrid("need at least two nodes".into()));
        }
        if nodes[0].abs() > TIME_TOL {
            return Err(DynamicsError::InvalidGrid("first node must be t=0".into()));
        }
        if nodes.windows(2).any(|w| w[1] - w[0] <= TIME_TOL) {
            return Err(DynamicsError::InvalidGrid(
                "nodes must be strictly increasing".into(),
            ));
        }
        Ok(Self {
            nodes,
            virtual_flags,
        })
    }

    pub fn t_f(&self) -> f64 {
        *self.nodes.last().unwrap()
    }

    pub fn num_nodes(&self) -> usize {
        self.nodes.len()
    }

    pub fn num_intervals(&self) -> usize {
        self.nodes.len() - 1
    }

    pub fn node(&self, k: usize) -> f64 {
        self.nodes[k]
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn is_virtual(&self, k: usize) -> bool {
        self.virtual_flags[k]
    }

    /// Interval length `τ_k = t_{k+1} − t_k`.
    pub fn tau(&self, k: usize) -> f64 {
        self.nodes[k + 1] - self.nodes[k]
    }

    /// Index of the node matching `t` within [`TIME_TOL`], if any.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        self.nodes.iter().position(|&x| (x - t).abs() <= TIME_TOL)
    }

    /// Index of the interval containing `t` (the last one for `t = t_f`).
    pub fn interval_of(&self, t: f64) -> Option<usize> {
        if t < -TIME_TOL || t > self.t_f() + TIME_TOL {
            return None;
        }
        let t = t.clamp(0.0, self.t_f());
        let k = self.nodes.partition_point(|&x| x <= t + TIME_TOL);
        Some(k.saturating_sub(1).min(self.num_intervals() - 1))
    }

    /// Returns a grid with `t` inserted as a virtual node (no-op when `t`
    /// already matches a node).
    pub fn with_virtual_node(&self, t: f64) -> Result<Self, DynamicsError> {
        if t < -TIME_TOL || t > self.t_f() + TIME_TOL {
            return Err(DynamicsError::InvalidGrid(format!(
                "virtual node {t} outside [0, {}]",
                self.t_f()
            )));
        }
        if self.index_of(t).is_some() {
            return Ok(self.clone());
        }
        let pos = self.nodes.partition_point(|&x| x < t);
        let mut nodes = self.nodes.clone();
        let mut flags = self.virtual_flags.clone();
        nodes.insert(pos, t);
        flags.insert(pos, true);
        Self::from_nodes(nodes, flags)
    }
}

/// One term `(c_x·x_0 + c_u·u_0)·e^{λt}·t^j` of a modal expansion.
#[derive(Debug, Clone)]
pub struct ModalTerm {
    pub lambda: f64,
    pub power: u32,
    pub x_coeff: RowDVector<f64>,
    pub u_coeff: RowDVector<f64>,
}

impl ModalTerm {
    /// `e^{λt}·t^j`.
    pub fn basis(&self, t: f64) -> f64 {
        (self.lambda * t).exp() * t.powi(self.power as i32)
    }

    pub fn coefficient(&self, x0: &DVector<f64>, u0: &DVector<f64>) -> f64 {
        (&self.x_coeff * x0)[0] + (&self.u_coeff * u0)[0]
    }
}

/// Expansion of a scalar linear output along the held-input trajectory:
///
/// `h(x(t)) = σ + Σ_terms (c_x·x_0 + c_u·u_0)·e^{λt}·t^j`
///
/// for `x(t)` the exact ZOH solution started at `x_0` with constant input
/// `u_0`. `blocks` records the Jordan structure `(λ_i, s_i)` of `A`.
#[derive(Debug, Clone)]
pub struct ModeDecomposition {
    pub blocks: Vec<(f64, usize)>,
    pub terms: Vec<ModalTerm>,
    pub sigma: f64,
}

impl ModeDecomposition {
    /// Value of the expansion at elapsed time `t` since the window start.
    pub fn value(&self, x0: &DVector<f64>, u0: &DVector<f64>, t: f64) -> f64 {
        self.sigma
            + self
                .terms
                .iter()
                .map(|term| term.coefficient(x0, u0) * term.basis(t))
                .sum::<f64>()
    }

    /// Time derivative of the expansion at elapsed time `t`.
    pub fn derivative(&self, x0: &DVector<f64>, u0: &DVector<f64>, t: f64) -> f64 {
        self.terms
            .iter()
            .map(|term| {
                let j = term.power as i32;
                let e = (term.lambda * t).exp();
                let dt_basis = term.lambda * e * t.powi(j)
                    + if j > 0 { j as f64 * e * t.powi(j - 1) } else { 0.0 };
                term.coefficient(x0, u0) * dt_basis
            })
            .sum()
    }

    /// Collapses the expansion for fixed `(x_0, u_0)` into scalar
    /// `(λ, j, coef)` triples.
    pub fn scalar_terms(&self, x0: &DVector<f64>, u0: &DVector<f64>) -> Vec<(f64, u32, f64)> {
        self.terms
            .iter()
            .map(|t| (t.lambda, t.power, t.coefficient(x0, u0)))
            .collect()
    }

    /// Adds `row·u_0` as a constant (λ=0, j=0) input term. Used for barrier
    /// outputs with a direct input feedthrough.
    pub fn add_direct_input(&mut self, row: RowDVector<f64>) {
        if let Some(t) = self
            .terms
            .iter_mut()
            .find(|t| t.lambda == 0.0 && t.power == 0)
        {
            t.u_coeff += row;
            return;
        }
        let n = self.terms.first().map(|t| t.x_coeff.len()).unwrap_or(0);
        self.terms.insert(
            0,
            ModalTerm {
                lambda: 0.0,
                power: 0,
                x_coeff: RowDVector::zeros(n),
                u_coeff: row,
            },
        );
    }
}

fn rank_with_tol(m: &DMatrix<f64>, tol: f64) -> usize {
    if m.iter().all(|v| v.abs() <= tol) {
        return 0;
    }
    m.clone().svd(false, false).rank(tol)
}

/// Modal decomposition of `h(x(t)) = row·x(t) + offset` along the ZOH
/// trajectory of `sys`, restricted to real spectra.
///
/// The state part comes from the spectral projectors of `A` (computed by
/// Hermite interpolation over the clustered spectrum); the forced-response
/// part is integrated per block onto the same `e^{λt}·t^j` basis, so the
/// expansion may contain a λ=0 constant and, for nilpotent blocks, one extra
/// power of `t` beyond the block size.
pub fn mode_decompose(
    sys: &LinearSystem,
    row: &RowDVector<f64>,
    offset: f64,
) -> Result<ModeDecomposition, DynamicsError> {
    let n = sys.state_dim();
    if row.len() != n {
        return Err(DynamicsError::InvalidSystem(format!(
            "predicate row length {} does not match state dimension {n}",
            row.len()
        )));
    }
    let a = sys.a();
    let scale = 1.0 + a.norm();
    let tol = SPECTRUM_TOL * scale;

    let eigs = a.clone().complex_eigenvalues();
    for e in eigs.iter() {
        if e.im.abs() > tol {
            return Err(DynamicsError::ComplexModesUnsupported { re: e.re, im: e.im });
        }
    }
    let mut lambdas: Vec<f64> = eigs.iter().map(|c| c.re).collect();
    lambdas.sort_by(|x, y| x.total_cmp(y));

    // Cluster eigenvalues; each cluster gets its mean value and multiplicity.
    let mut clusters: Vec<(f64, usize)> = Vec::new();
    for l in lambdas {
        match clusters.last_mut() {
            Some((val, count)) if (l - *val).abs() <= tol => {
                *val = (*val * *count as f64 + l) / (*count as f64 + 1.0);
                *count += 1;
            }
            _ => clusters.push((l, 1)),
        }
    }

    // Hermite interpolation: coefficients of the degree n-1 polynomial p_i
    // with p_i^(d)(λ_l) = δ_il·δ_d0, giving the spectral projector P_i = p_i(A).
    let mut cond_rows = Vec::new();
    for &(lam, mult) in &clusters {
        for d in 0..mult {
            let mut r = RowDVector::zeros(n);
            for k in d..n {
                let mut fall = 1.0;
                for q in 0..d {
                    fall *= (k - q) as f64;
                }
                r[k] = fall * lam.powi((k - d) as i32);
            }
            cond_rows.push(r);
        }
    }
    let vand = DMatrix::from_rows(&cond_rows);
    let lu = vand.lu();

    let mut a_pows = vec![DMatrix::identity(n, n)];
    for _ in 1..n {
        a_pows.push(a * a_pows.last().unwrap());
    }

    let mut projectors = Vec::with_capacity(clusters.len());
    {
        let mut cond_idx = 0;
        for &(_, mult) in &clusters {
            let mut rhs = DVector::zeros(n);
            rhs[cond_idx] = 1.0;
            cond_idx += mult;
            let coeffs = lu.solve(&rhs).ok_or_else(|| {
                DynamicsError::DecompositionUnstable("confluent Vandermonde solve failed".into())
            })?;
            let mut p = DMatrix::zeros(n, n);
            for (k, pow) in a_pows.iter().enumerate() {
                p += pow * coeffs[k];
            }
            projectors.push(p);
        }
    }
    let p_sum = projectors
        .iter()
        .fold(DMatrix::zeros(n, n), |acc, p| acc + p);
    let p_scale: f64 = 1.0 + projectors.iter().map(DMatrix::norm).sum::<f64>();
    if (&p_sum - DMatrix::identity(n, n)).norm() > SPECTRUM_TOL * p_scale {
        return Err(DynamicsError::DecompositionUnstable(
            "spectral projectors do not resolve the identity".into(),
        ));
    }

    let drop_tol = 1e-11 * (1.0 + row.norm()) * (1.0 + sys.b().norm());
    let zero_tol = tol;

    // Collect terms keyed by (cluster, power). A synthetic λ=0 cluster holds
    // constants produced by integrating λ≠0 modes.
    let zero_cluster = clusters
        .iter()
        .position(|&(lam, _)| lam.abs() <= zero_tol)
        .unwrap_or_else(|| {
            clusters.push((0.0, 0));
            clusters.len() - 1
        });
    let mut x_terms: std::collections::BTreeMap<(usize, u32), RowDVector<f64>> = Default::default();
    let mut u_terms: std::collections::BTreeMap<(usize, u32), RowDVector<f64>> = Default::default();

    let mut blocks = Vec::new();
    for (ci, (&(lam, mult), p)) in clusters.iter().zip(&projectors).enumerate() {
        if mult == 0 {
            continue;
        }
        let nil = (a - DMatrix::identity(n, n) * lam) * p;

        // Jordan block sizes from rank drops of the nilpotent powers.
        let rank_tol = SPECTRUM_TOL * p_scale * scale.powi(mult as i32);
        let mut ranks = vec![rank_with_tol(p, rank_tol)];
        let mut npow = p.clone();
        for _ in 0..mult {
            npow = &nil * &npow;
            ranks.push(rank_with_tol(&npow, rank_tol));
        }
        if ranks[0] != mult || ranks[mult] != 0 {
            return Err(DynamicsError::DecompositionUnstable(format!(
                "rank profile {ranks:?} inconsistent with multiplicity {mult} at λ={lam}"
            )));
        }
        for s in 1..=mult {
            let count = (ranks[s - 1] - ranks[s]).saturating_sub(if s < mult {
                ranks[s] - ranks[s + 1]
            } else {
                0
            });
            // count = (#blocks of size >= s) - (#blocks of size >= s+1)
            for _ in 0..count {
                blocks.push((lam, s));
            }
        }
        let q = (1..=mult).rev().find(|&s| ranks[s - 1] > 0).unwrap_or(1); // max block size

        // Basis coefficients of row·e^{At}: term (λ, j) has row·N^j·P/j!.
        let mut npow = p.clone();
        let mut fact = 1.0;
        for j in 0..q as u32 {
            if j > 0 {
                npow = &nil * &npow;
                fact *= j as f64;
            }
            let cx = (row * &npow) / fact;
            let cu = &cx * sys.b();
            if cx.norm() > drop_tol {
                *x_terms
                    .entry((ci, j))
                    .or_insert_with(|| RowDVector::zeros(n)) += &cx;
            }
            // Forced response: integrate e^{λs}·s^j against the held input.
            let m = sys.input_dim();
            if cu.norm() > drop_tol {
                if lam.abs() <= zero_tol {
                    *u_terms
                        .entry((ci, j + 1))
                        .or_insert_with(|| RowDVector::zeros(m)) += &cu / (j as f64 + 1.0);
                } else {
                    // ∫_0^t e^{λs}s^j ds = e^{λt}·Σ_k a_k t^k + d
                    let mut poly = vec![0.0; j as usize + 1];
                    let mut constant = -1.0 / lam;
                    poly[0] = 1.0 / lam;
                    for jj in 1..=j as usize {
                        let mut next = vec![0.0; j as usize + 1];
                        next[jj] = 1.0 / lam;
                        for k in 0..jj {
                            next[k] = -(jj as f64 / lam) * poly[k];
                        }
                        constant *= -(jj as f64) / lam;
                        poly = next;
                    }
                    for (k, &ak) in poly.iter().enumerate() {
                        if ak != 0.0 {
                            *u_terms
                                .entry((ci, k as u32))
                                .or_insert_with(|| RowDVector::zeros(m)) += &cu * ak;
                        }
                    }
                    *u_terms
                        .entry((zero_cluster, 0))
                        .or_insert_with(|| RowDVector::zeros(m)) += &cu * constant;
                }
            }
        }
    }

    let total: usize = blocks.iter().map(|&(_, s)| s).sum();
    if total != n {
        return Err(DynamicsError::DecompositionUnstable(format!(
            "block sizes sum to {total}, expected {n}"
        )));
    }

    let mut keys: std::collections::BTreeSet<(usize, u32)> = Default::default();
    keys.extend(x_terms.keys().copied());
    keys.extend(u_terms.keys().copied());
    let mut terms = Vec::new();
    for (ci, j) in keys {
        let x_coeff = x_terms
            .remove(&(ci, j))
            .unwrap_or_else(|| RowDVector::zeros(n));
        let u_coeff = u_terms
            .remove(&(ci, j))
            .unwrap_or_else(|| RowDVector::zeros(sys.input_dim()));
        if x_coeff.norm() + u_coeff.norm() <= drop_tol {
            continue;
        }
        terms.push(ModalTerm {
            lambda: if clusters[ci].0.abs() <= zero_tol {
                0.0
            } else {
                clusters[ci].0
            },
            power: j,
            x_coeff,
            u_coeff,
        });
    }
    terms.sort_by(|a, b| a.lambda.total_cmp(&b.lambda).then(a.power.cmp(&b.power)));

    Ok(ModeDecomposition {
        blocks,
        terms,
        sigma: offset,
    })
}

/// Closed-form ZOH trajectory segment: state `x_start` at `t_start`, input
/// held at `u` until `t_end`.
#[derive(Debug, Clone)]
pub struct Interpolant {
    sys: LinearSystem,
    x_start: DVector<f64>,
    u: DVector<f64>,
    t_start: f64,
    t_end: f64,
}

impl Interpolant {
    pub fn new(
        sys: LinearSystem,
        x_start: DVector<f64>,
        u: DVector<f64>,
        t_start: f64,
        t_end: f64,
    ) -> Result<Self, DynamicsError> {
        if x_start.len() != sys.state_dim() || u.len() != sys.input_dim() {
            return Err(DynamicsError::InvalidSystem(
                "interpolant dimensions do not match system".into(),
            ));
        }
        if !(t_end > t_start) {
            return Err(DynamicsError::InvalidGrid(format!(
                "empty window [{t_start}, {t_end}]"
            )));
        }
        Ok(Self {
            sys,
            x_start,
            u,
            t_start,
            t_end,
        })
    }

    pub fn window(&self) -> (f64, f64) {
        (self.t_start, self.t_end)
    }

    pub fn system(&self) -> &LinearSystem {
        &self.sys
    }

    pub fn start_state(&self) -> &DVector<f64> {
        &self.x_start
    }

    pub fn input(&self) -> &DVector<f64> {
        &self.u
    }

    /// `x(t) = Ad(t−t_k)·x_k + Bd(t−t_k)·u_k`; exact at `t = t_k`.
    pub fn eval(&self, t: f64) -> Result<DVector<f64>, DynamicsError> {
        if t < self.t_start - TIME_TOL || t > self.t_end + TIME_TOL {
            return Err(DynamicsError::OutOfWindow {
                t,
                start: self.t_start,
                end: self.t_end,
            });
        }
        let dt = (t - self.t_start).max(0.0);
        if dt == 0.0 {
            return Ok(self.x_start.clone());
        }
        let (ad, bd) = step_matrices(&self.sys, dt)?;
        Ok(ad * &self.x_start + bd * &self.u)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn double_integrator() -> LinearSystem {
        LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(0, 2),
        )
        .unwrap()
    }

    #[test]
    fn step_matrices_double_integrator_closed_form() {
        let sys = double_integrator();
        let t = 0.37;
        let (ad, bd) = step_matrices(&sys, t).unwrap();
        assert_relative_eq!(ad, DMatrix::from_row_slice(2, 2, &[1.0, t, 0.0, 1.0]), epsilon = 1e-12);
        assert_relative_eq!(
            bd,
            DMatrix::from_row_slice(2, 1, &[t * t / 2.0, t]),
            epsilon = 1e-12
        );
    }

    #[test]
    fn step_matrices_zero_a() {
        let sys = LinearSystem::new(
            DMatrix::zeros(3, 3),
            DMatrix::from_row_slice(3, 2, &[1.0, 2.0, 3.0, 4.0, 5.0, 6.0]),
            DMatrix::zeros(0, 3),
        )
        .unwrap();
        let dt = 0.8;
        let (ad, bd) = step_matrices(&sys, dt).unwrap();
        assert_relative_eq!(ad, DMatrix::identity(3, 3), epsilon = 1e-14);
        assert_relative_eq!(bd, sys.b() * dt, epsilon = 1e-13);
    }

    #[test]
    fn step_matrices_scalar_decay() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(1, 1, &[-1.0]),
            DMatrix::from_row_slice(1, 1, &[1.0]),
            DMatrix::zeros(0, 1),
        )
        .unwrap();
        let (ad, bd) = step_matrices(&sys, std::f64::consts::LN_2).unwrap();
        assert_relative_eq!(ad[(0, 0)], 0.5, epsilon = 1e-12);
        assert_relative_eq!(bd[(0, 0)], 0.5, epsilon = 1e-12);
    }

    #[test]
    fn invalid_system_rejected() {
        assert!(LinearSystem::new(
            DMatrix::from_row_slice(1, 1, &[f64::NAN]),
            DMatrix::zeros(1, 1),
            DMatrix::zeros(0, 1)
        )
        .is_err());
        assert!(LinearSystem::new(
            DMatrix::zeros(2, 3),
            DMatrix::zeros(2, 1),
            DMatrix::zeros(0, 2)
        )
        .is_err());
    }

    #[test]
    fn mode_decompose_nilpotent_single_block() {
        let sys = double_integrator();
        let dec = mode_decompose(&sys, &RowDVector::from_row_slice(&[1.0, 0.0]), 0.0).unwrap();
        assert_eq!(dec.blocks.len(), 1);
        assert_relative_eq!(dec.blocks[0].0, 0.0, epsilon = 1e-8);
        assert_eq!(dec.blocks[0].1, 2);
        // x1(t) = x1 + x2 t + u t^2/2
        let x0 = DVector::from_row_slice(&[1.5, -0.7]);
        let u0 = DVector::from_row_slice(&[2.0]);
        for &t in &[0.0, 0.3, 1.0, 2.0] {
            let expect = 1.5 - 0.7 * t + 2.0 * t * t / 2.0;
            assert_relative_eq!(dec.value(&x0, &u0, t), expect, epsilon = 1e-10);
        }
    }

    #[test]
    fn mode_decompose_diagonal_two_blocks() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.0, 0.0, 0.0, -2.0]),
            DMatrix::from_row_slice(2, 1, &[1.0, 1.0]),
            DMatrix::zeros(0, 2),
        )
        .unwrap();
        let dec = mode_decompose(&sys, &RowDVector::from_row_slice(&[1.0, 1.0]), 0.5).unwrap();
        assert_eq!(dec.blocks.len(), 2);
        assert_relative_eq!(dec.blocks[0].0, -2.0, epsilon = 1e-8);
        assert_relative_eq!(dec.blocks[1].0, -1.0, epsilon = 1e-8);
        assert!(dec.blocks.iter().all(|&(_, s)| s == 1));
    }

    #[test]
    fn mode_decompose_rejects_complex_pair() {
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[0.0, 1.0, -1.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.0, 1.0]),
            DMatrix::zeros(0, 2),
        )
        .unwrap();
        let err = mode_decompose(&sys, &RowDVector::from_row_slice(&[1.0, 0.0]), 0.0).unwrap_err();
        assert!(matches!(err, DynamicsError::ComplexModesUnsupported { .. }));
    }

    #[test]
    fn mode_decompose_reconstructs_forced_response() {
        // Mixed spectrum: one stable mode, one integrator.
        let sys = LinearSystem::new(
            DMatrix::from_row_slice(2, 2, &[-1.5, 1.0, 0.0, 0.0]),
            DMatrix::from_row_slice(2, 1, &[0.3, 1.0]),
            DMatrix::zeros(0, 2),
        )
        .unwrap();
        let row = RowDVector::from_row_slice(&[1.0, -2.0]);
        let dec = mode_decompose(&sys, &row, 0.25).unwrap();
        let x0 = DVector::from_row_slice(&[0.4, -1.1]);
        let u0 = DVector::from_row_slice(&[0.9]);
        for &t in &[0.0, 0.1, 0.5, 1.3] {
            let (ad, bd) = step_matrices(&sys, t).unwrap();
            let xt = &ad * &x0 + &bd * &u0;
            let expect = (&row * &xt)[0] + 0.25;
            assert_relative_eq!(dec.value(&x0, &u0, t), expect, epsilon = 1e-9, max_relative = 1e-9);
        }
    }

    #[test]
    fn interpolate_identity_at_window_start() {
        let sys = double_integrator();
        let x = DVector::from_row_slice(&[1.0, -1.0]);
        let interp =
            Interpolant::new(sys, x.clone(), DVector::from_row_slice(&[0.0]), 0.0, 1.0).unwrap();
        assert_eq!(interp.eval(0.0).unwrap(), x);
    }

    #[test]
    fn interpolate_double_integrator_cases() {
        let sys = double_integrator();
        let interp = Interpolant::new(
            sys.clone(),
            DVector::from_row_slice(&[1.0, -1.0]),
            DVector::from_row_slice(&[0.0]),
            0.0,
            1.0,
        )
        .unwrap();
        let x = interp.eval(0.5).unwrap();
        assert_relative_eq!(x[0], 0.5, epsilon = 1e-12);
        assert_relative_eq!(x[1], -1.0, epsilon = 1e-12);

        let interp = Interpolant::new(
            sys,
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[2.0]),
            0.0,
            1.0,
        )
        .unwrap();
        let x = interp.eval(1.0).unwrap();
        assert_relative_eq!(x[0], 1.0, epsilon = 1e-12);
        assert_relative_eq!(x[1], 2.0, epsilon = 1e-12);
    }

    #[test]
    fn interpolate_rejects_out_of_window() {
        let sys = double_integrator();
        let interp = Interpolant::new(
            sys,
            DVector::from_row_slice(&[0.0, 0.0]),
            DVector::from_row_slice(&[0.0]),
            0.5,
            1.0,
        )
        .unwrap();
        assert!(matches!(
            interp.eval(1.2),
            Err(DynamicsError::OutOfWindow { .. })
        ));
    }

    #[test]
    fn grid_basics() {
        let g = TimeGrid::uniform(2.0, 10).unwrap();
        assert_eq!(g.num_nodes(), 11);
        assert_relative_eq!(g.tau(3), 0.2, epsilon = 1e-12);
        assert_eq!(g.index_of(0.6), Some(3));
        assert_eq!(g.index_of(0.63), None);
        let g2 = g.with_virtual_node(0.63).unwrap();
        assert_eq!(g2.num_nodes(), 12);
        assert!(g2.is_virtual(4));
        assert_eq!(g2.interval_of(0.7), Some(4));
        assert_eq!(g2.interval_of(2.0), Some(10));
    }
}
