//! Signal Temporal Logic formulas over linear predicates: concrete syntax,
//! negation normal form, grounding onto a time grid, and discrete-time
//! quantitative semantics.
//!
//! Satisfaction is non-strict (`row·x + offset ≥ 0`). Negating a predicate
//! materializes a sign flip with an [`EPS_STRICT`] margin, since the MIQP
//! encoding cannot express strict inequalities.

use crate::lin_dynamics::{TimeGrid, TIME_TOL};
use nalgebra::{DVector, RowDVector};
use thiserror::Error;

/// Margin injected when a negated predicate is materialized.
pub const EPS_STRICT: f64 = 1e-6;

/// Robustness value used for `⊤` (infinity capped).
pub const ROBUSTNESS_CAP: f64 = 1e18;

#[derive(Debug, Error)]
pub enum StlError {
    #[error("parse error at column {pos}: {msg}")]
    Parse { pos: usize, msg: String },
    #[error("unknown state index x{index}; system has {dim} states")]
    UnknownState { index: usize, dim: usize },
    #[error("temporal endpoint {t} falls strictly between grid nodes")]
    UnalignedInterval { t: f64 },
    #[error("formula horizon {horizon} exceeds grid end time {t_f}")]
    HorizonExceedsGrid { horizon: f64, t_f: f64 },
    #[error("negated Until cannot be normalized")]
    NegatedUntil,
    #[error("trace ends at {have} but the formula needs samples up to {needed}")]
    InsufficientTrace { needed: f64, have: f64 },
    #[error("no samples inside temporal window [{lo}, {hi}]")]
    EmptyWindow { lo: f64, hi: f64 },
    #[error("invalid temporal interval [{a}, {b}]")]
    InvalidInterval { a: f64, b: f64 },
}

/// Linear predicate `row·x + offset ≥ 0`.
#[derive(Debug, Clone)]
pub struct Predicate {
    pub row: RowDVector<f64>,
    pub offset: f64,
    pub name: String,
}

// the name is a diagnostic label and does not participate in identity
impl PartialEq for Predicate {
    fn eq(&self, other: &Self) -> bool {
        self.row == other.row && self.offset == other.offset
    }
}

impl Predicate {
    pub fn new(row: RowDVector<f64>, offset: f64, name: impl Into<String>) -> Self {
        Self {
            row,
            offset,
            name: name.into(),
        }
    }

    /// Robustness of the predicate at state `x`.
    pub fn eval(&self, x: &DVector<f64>) -> f64 {
        (&self.row * x)[0] + self.offset
    }

    /// Sign-flipped predicate with the strictness margin absorbed.
    pub fn negated(&self) -> Predicate {
        Predicate {
            row: -self.row.clone(),
            offset: -self.offset - EPS_STRICT,
            name: format!("!({})", self.name),
        }
    }
}

/// Closed temporal interval `[a, b]` in seconds, `0 ≤ a ≤ b`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    pub a: f64,
    pub b: f64,
}

impl Interval {
    pub fn new(a: f64, b: f64) -> Result<Self, StlError> {
        if !(0.0 <= a && a <= b) || !a.is_finite() || !b.is_finite() {
            return Err(StlError::InvalidInterval { a, b });
        }
        Ok(Self { a, b })
    }
}

/// STL abstract syntax tree.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    True,
    Pred(Predicate),
    Not(Box<Formula>),
    And(Vec<Formula>),
    Or(Vec<Formula>),
    Eventually(Interval, Box<Formula>),
    Always(Interval, Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
}

impl Formula {
    /// Worst-case look-ahead in seconds.
    pub fn horizon(&self) -> f64 {
        match self {
            Formula::True | Formula::Pred(_) => 0.0,
            Formula::Not(f) => f.horizon(),
            Formula::And(fs) | Formula::Or(fs) => {
                fs.iter().map(Formula::horizon).fold(0.0, f64::max)
            }
            Formula::Eventually(iv, f) | Formula::Always(iv, f) => iv.b + f.horizon(),
            Formula::Until(iv, lhs, rhs) => iv.b + lhs.horizon().max(rhs.horizon()),
        }
    }

    /// Number of nodes, which is also the id space used by grounding
    /// (pre-order, root id 0).
    pub fn node_count(&self) -> usize {
        let mut count = 0;
        self.visit(&mut |_| count += 1);
        count
    }

    fn visit(&self, f: &mut impl FnMut(&Formula)) {
        f(self);
        match self {
            Formula::True | Formula::Pred(_) => {}
            Formula::Not(c) => c.visit(f),
            Formula::And(cs) | Formula::Or(cs) => cs.iter().for_each(|c| c.visit(f)),
            Formula::Eventually(_, c) | Formula::Always(_, c) => c.visit(f),
            Formula::Until(_, l, r) => {
                l.visit(f);
                r.visit(f);
            }
        }
    }

    /// All temporal interval endpoints as absolute times, assuming evaluation
    /// starts at `base`. Used by grid alignment.
    pub fn absolute_endpoints(&self, base: f64, out: &mut Vec<f64>) {
        match self {
            Formula::True | Formula::Pred(_) => {}
            Formula::Not(c) => c.absolute_endpoints(base, out),
            Formula::And(cs) | Formula::Or(cs) => {
                cs.iter().for_each(|c| c.absolute_endpoints(base, out))
            }
            Formula::Eventually(iv, c) | Formula::Always(iv, c) => {
                out.push(base + iv.a);
                out.push(base + iv.b);
                // conservative: children may be evaluated anywhere in the window
                c.absolute_endpoints(base + iv.a, out);
                c.absolute_endpoints(base + iv.b, out);
            }
            Formula::Until(iv, l, r) => {
                out.push(base + iv.a);
                out.push(base + iv.b);
                l.absolute_endpoints(base, out);
                l.absolute_endpoints(base + iv.b, out);
                r.absolute_endpoints(base + iv.a, out);
                r.absolute_endpoints(base + iv.b, out);
            }
        }
    }

    /// Canonical text form; parses back to the same tree modulo predicate
    /// normalization.
    pub fn to_text(&self) -> String {
        fn pred_text(p: &Predicate) -> String {
            let mut parts = Vec::new();
            for (i, &c) in p.row.iter().enumerate() {
                if c != 0.0 {
                    parts.push(format!("{}*x{}", fmt_num(c), i + 1));
                }
            }
            if p.offset != 0.0 || parts.is_empty() {
                parts.push(fmt_num(p.offset));
            }
            format!("{} >= 0", parts.join(" + "))
        }
        fn fmt_num(v: f64) -> String {
            if v == v.trunc() && v.abs() < 1e15 {
                format!("{v:.1}")
            } else {
                format!("{v}")
            }
        }
        fn go(f: &Formula) -> String {
            match f {
                Formula::True => "true".into(),
                Formula::Pred(p) => format!("({})", pred_text(p)),
                Formula::Not(c) => format!("!{}", go(c)),
                Formula::And(cs) => format!(
                    "({})",
                    cs.iter().map(go).collect::<Vec<_>>().join(" & ")
                ),
                Formula::Or(cs) => {
                    format!("({})", cs.iter().map(go).collect::<Vec<_>>().join(" | "))
                }
                Formula::Eventually(iv, c) => format!("F[{},{}]{}", iv.a, iv.b, go(c)),
                Formula::Always(iv, c) => format!("G[{},{}]{}", iv.a, iv.b, go(c)),
                Formula::Until(iv, l, r) => {
                    format!("({} U[{},{}] {})", go(l), iv.a, iv.b, go(r))
                }
            }
        }
        go(self)
    }
}

// ---------------------------------------------------------------------------
// Parsing
// ---------------------------------------------------------------------------

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Num(f64),
    Var(usize),
    True,
    G,
    F,
    U,
    And,
    Or,
    Not,
    Plus,
    Minus,
    Star,
    Ge,
    Le,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Comma,
}

fn tokenize(text: &str) -> Result<Vec<(usize, Tok)>, StlError> {
    let bytes = text.as_bytes();
    let mut toks = Vec::new();
    let mut i = 0;
    while i < bytes.len() {
        let c = bytes[i] as char;
        match c {
            ' ' | '\t' | '\n' | '\r' => i += 1,
            '&' => {
                toks.push((i, Tok::And));
                i += 1;
            }
            '|' => {
                toks.push((i, Tok::Or));
                i += 1;
            }
            '!' => {
                toks.push((i, Tok::Not));
                i += 1;
            }
            '+' => {
                toks.push((i, Tok::Plus));
                i += 1;
            }
            '-' => {
                toks.push((i, Tok::Minus));
                i += 1;
            }
            '*' => {
                toks.push((i, Tok::Star));
                i += 1;
            }
            '(' => {
                toks.push((i, Tok::LParen));
                i += 1;
            }
            ')' => {
                toks.push((i, Tok::RParen));
                i += 1;
            }
            '[' => {
                toks.push((i, Tok::LBracket));
                i += 1;
            }
            ']' => {
                toks.push((i, Tok::RBracket));
                i += 1;
            }
            ',' => {
                toks.push((i, Tok::Comma));
                i += 1;
            }
            '>' | '<' => {
                if i + 1 >= bytes.len() || bytes[i + 1] as char != '=' {
                    return Err(StlError::Parse {
                        pos: i,
                        msg: format!("expected '{c}=' (only non-strict comparisons)"),
                    });
                }
                toks.push((i, if c == '>' { Tok::Ge } else { Tok::Le }));
                i += 2;
            }
            '0'..='9' | '.' => {
                let start = i;
                while i < bytes.len()
                    && matches!(bytes[i] as char, '0'..='9' | '.' | 'e' | 'E')
                {
                    // allow exponent sign
                    if matches!(bytes[i] as char, 'e' | 'E')
                        && i + 1 < bytes.len()
                        && matches!(bytes[i + 1] as char, '+' | '-')
                    {
                        i += 1;
                    }
                    i += 1;
                }
                let s = &text[start..i];
                let v = s.parse::<f64>().map_err(|_| StlError::Parse {
                    pos: start,
                    msg: format!("bad number '{s}'"),
                })?;
                toks.push((start, Tok::Num(v)));
            }
            _ if c.is_ascii_alphabetic() => {
                let start = i;
                while i < bytes.len() && (bytes[i] as char).is_ascii_alphanumeric() {
                    i += 1;
                }
                let word = &text[start..i];
                let tok = match word {
                    "G" => Tok::G,
                    "F" => Tok::F,
                    "U" => Tok::U,
                    "true" => Tok::True,
                    _ if word.starts_with('x') && word[1..].chars().all(|d| d.is_ascii_digit()) && word.len() > 1 => {
                        let idx: usize = word[1..].parse().map_err(|_| StlError::Parse {
                            pos: start,
                            msg: format!("bad state variable '{word}'"),
                        })?;
                        Tok::Var(idx)
                    }
                    _ => {
                        return Err(StlError::Parse {
                            pos: start,
                            msg: format!("unknown token '{word}'"),
                        })
                    }
                };
                toks.push((start, tok));
            }
            _ => {
                return Err(StlError::Parse {
                    pos: i,
                    msg: format!("unexpected character '{c}'"),
                })
            }
        }
    }
    Ok(toks)
}

struct Parser<'a> {
    toks: &'a [(usize, Tok)],
    pos: usize,
    dim: usize,
    text_len: usize,
}

/// Linear expression accumulated while parsing an atom.
#[derive(Clone)]
struct LinAtom {
    row: Vec<f64>,
    constant: f64,
}

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.pos).map(|(_, t)| t)
    }

    fn here(&self) -> usize {
        self.toks
            .get(self.pos)
            .map(|&(p, _)| p)
            .unwrap_or(self.text_len)
    }

    fn bump(&mut self) -> Option<Tok> {
        let t = self.toks.get(self.pos).map(|(_, t)| t.clone());
        self.pos += 1;
        t
    }

    fn expect(&mut self, want: Tok, what: &str) -> Result<(), StlError> {
        let pos = self.here();
        match self.bump() {
            Some(t) if t == want => Ok(()),
            _ => Err(StlError::Parse {
                pos,
                msg: format!("expected {what}"),
            }),
        }
    }

    fn err<T>(&self, msg: impl Into<String>) -> Result<T, StlError> {
        Err(StlError::Parse {
            pos: self.here(),
            msg: msg.into(),
        })
    }

    fn interval(&mut self) -> Result<Interval, StlError> {
        self.expect(Tok::LBracket, "'['")?;
        let a = self.number()?;
        self.expect(Tok::Comma, "','")?;
        let b = self.number()?;
        self.expect(Tok::RBracket, "']'")?;
        Interval::new(a, b)
    }

    fn number(&mut self) -> Result<f64, StlError> {
        let pos = self.here();
        match self.bump() {
            Some(Tok::Num(v)) => Ok(v),
            Some(Tok::Minus) => match self.bump() {
                Some(Tok::Num(v)) => Ok(-v),
                _ => Err(StlError::Parse {
                    pos,
                    msg: "expected number".into(),
                }),
            },
            _ => Err(StlError::Parse {
                pos,
                msg: "expected number".into(),
            }),
        }
    }

    fn or_expr(&mut self) -> Result<Formula, StlError> {
        let mut parts = vec![self.and_expr()?];
        while self.peek() == Some(&Tok::Or) {
            self.bump();
            parts.push(self.and_expr()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::Or(parts)
        })
    }

    fn and_expr(&mut self) -> Result<Formula, StlError> {
        let mut parts = vec![self.until_expr()?];
        while self.peek() == Some(&Tok::And) {
            self.bump();
            parts.push(self.until_expr()?);
        }
        Ok(if parts.len() == 1 {
            parts.pop().unwrap()
        } else {
            Formula::And(parts)
        })
    }

    fn until_expr(&mut self) -> Result<Formula, StlError> {
        let mut lhs = self.unary()?;
        while self.peek() == Some(&Tok::U) {
            self.bump();
            let iv = self.interval()?;
            let rhs = self.unary()?;
            lhs = Formula::Until(iv, Box::new(lhs), Box::new(rhs));
        }
        Ok(lhs)
    }

    fn unary(&mut self) -> Result<Formula, StlError> {
        match self.peek() {
            Some(Tok::Not) => {
                self.bump();
                Ok(Formula::Not(Box::new(self.unary()?)))
            }
            Some(Tok::G) => {
                self.bump();
                let iv = self.interval()?;
                Ok(Formula::Always(iv, Box::new(self.unary()?)))
            }
            Some(Tok::F) => {
                self.bump();
                let iv = self.interval()?;
                Ok(Formula::Eventually(iv, Box::new(self.unary()?)))
            }
            _ => self.primary(),
        }
    }

    fn primary(&mut self) -> Result<Formula, StlError> {
        match self.peek() {
            Some(Tok::LParen) => {
                // either a parenthesized formula or a parenthesized atom;
                // atoms contain a comparison before the matching ')'
                self.bump();
                let f = self.or_expr()?;
                self.expect(Tok::RParen, "')'")?;
                Ok(f)
            }
            Some(Tok::True) => {
                self.bump();
                Ok(Formula::True)
            }
            Some(Tok::Num(_) | Tok::Var(_) | Tok::Minus) => self.atom(),
            _ => self.err("expected formula"),
        }
    }

    fn lin_side(&mut self) -> Result<LinAtom, StlError> {
        let mut atom = LinAtom {
            row: vec![0.0; self.dim],
            constant: 0.0,
        };
        let mut first = true;
        loop {
            let mut sign = 1.0;
            if !first {
                match self.peek() {
                    Some(Tok::Plus) => {
                        self.bump();
                    }
                    Some(Tok::Minus) => {
                        self.bump();
                        sign = -1.0;
                    }
                    _ => break,
                }
            }
            while self.peek() == Some(&Tok::Minus) {
                self.bump();
                sign = -sign;
            }
            first = false;
            // term: number ['*' var] | var
            match self.bump() {
                Some(Tok::Num(v)) => {
                    let coef = sign * v;
                    if self.peek() == Some(&Tok::Star) {
                        self.bump();
                        let pos = self.here();
                        match self.bump() {
                            Some(Tok::Var(idx)) => {
                                self.check_var(idx)?;
                                atom.row[idx - 1] += coef;
                            }
                            _ => {
                                return Err(StlError::Parse {
                                    pos,
                                    msg: "expected state variable after '*'".into(),
                                })
                            }
                        }
                    } else {
                        atom.constant += coef;
                    }
                }
                Some(Tok::Var(idx)) => {
                    self.check_var(idx)?;
                    atom.row[idx - 1] += sign;
                }
                _ => return self.err("expected linear term"),
            }
        }
        Ok(atom)
    }

    fn check_var(&self, idx: usize) -> Result<(), StlError> {
        if idx == 0 || idx > self.dim {
            return Err(StlError::UnknownState {
                index: idx,
                dim: self.dim,
            });
        }
        Ok(())
    }

    fn atom(&mut self) -> Result<Formula, StlError> {
        let start = self.here();
        let lhs = self.lin_side()?;
        let pos = self.here();
        let ge = match self.bump() {
            Some(Tok::Ge) => true,
            Some(Tok::Le) => false,
            _ => {
                return Err(StlError::Parse {
                    pos,
                    msg: "expected '>=' or '<=' in predicate".into(),
                })
            }
        };
        let rhs = self.lin_side()?;
        // normalize to row·x + offset >= 0
        let (mut row, mut offset) = (vec![0.0; self.dim], 0.0);
        let sgn = if ge { 1.0 } else { -1.0 };
        for i in 0..self.dim {
            row[i] = sgn * (lhs.row[i] - rhs.row[i]);
        }
        offset += sgn * (lhs.constant - rhs.constant);
        let end = self.here();
        Ok(Formula::Pred(Predicate::new(
            RowDVector::from_row_slice(&row),
            offset,
            format!("p@{start}..{end}"),
        )))
    }
}

/// Parses a formula over a system with `state_dim` states. Predicates use
/// 1-based variables `x1 … xn`; operators `&`, `|`, `!`, `G[a,b]`, `F[a,b]`,
/// `U[a,b]`; comparisons are non-strict.
pub fn parse(text: &str, state_dim: usize) -> Result<Formula, StlError> {
    let toks = tokenize(text)?;
    let mut p = Parser {
        toks: &toks,
        pos: 0,
        dim: state_dim,
        text_len: text.len(),
    };
    let f = p.or_expr()?;
    if p.pos != toks.len() {
        return p.err("trailing input after formula");
    }
    Ok(f)
}

// ---------------------------------------------------------------------------
// Negation normal form
// ---------------------------------------------------------------------------

/// Pushes negations down to predicates and absorbs them by sign flip.
/// The result contains no `Not` nodes.
pub fn to_nnf(f: &Formula) -> Result<Formula, StlError> {
    fn go(f: &Formula, neg: bool) -> Result<Formula, StlError> {
        Ok(match (f, neg) {
            (Formula::True, false) => Formula::True,
            // ¬⊤ has no dedicated node; a trivially false predicate stands in
            (Formula::True, true) => Formula::Pred(Predicate::new(
                RowDVector::zeros(0),
                -1.0,
                "false",
            )),
            (Formula::Pred(p), false) => Formula::Pred(p.clone()),
            (Formula::Pred(p), true) => Formula::Pred(p.negated()),
            (Formula::Not(c), _) => go(c, !neg)?,
            (Formula::And(cs), false) | (Formula::Or(cs), true) => Formula::And(
                cs.iter().map(|c| go(c, neg)).collect::<Result<_, _>>()?,
            ),
            (Formula::Or(cs), false) | (Formula::And(cs), true) => Formula::Or(
                cs.iter().map(|c| go(c, neg)).collect::<Result<_, _>>()?,
            ),
            (Formula::Always(iv, c), false) | (Formula::Eventually(iv, c), true) => {
                Formula::Always(*iv, Box::new(go(c, neg)?))
            }
            (Formula::Eventually(iv, c), false) | (Formula::Always(iv, c), true) => {
                Formula::Eventually(*iv, Box::new(go(c, neg)?))
            }
            (Formula::Until(iv, l, r), false) => Formula::Until(
                *iv,
                Box::new(go(l, false)?),
                Box::new(go(r, false)?),
            ),
            (Formula::Until(..), true) => return Err(StlError::NegatedUntil),
        })
    }
    go(f, false)
}

// ---------------------------------------------------------------------------
// Grounding
// ---------------------------------------------------------------------------

/// Formula with every temporal interval resolved to grid-node index sets.
/// Node ids are pre-order positions in `formula`.
#[derive(Debug, Clone)]
pub struct GroundedFormula {
    pub formula: Formula,
    pub grid: TimeGrid,
    /// `eval_times[node_id]` = sorted grid-node indices the node is evaluated at.
    pub eval_times: Vec<Vec<usize>>,
}

/// Grid-node indices inside `[t + a, t + b]`. Fails when either endpoint
/// falls strictly between grid nodes — the signal that virtual nodes are
/// required.
pub fn window_indices(grid: &TimeGrid, t: f64, a: f64, b: f64) -> Result<Vec<usize>, StlError> {
    let lo = t + a;
    let hi = t + b;
    if grid.index_of(lo).is_none() {
        return Err(StlError::UnalignedInterval { t: lo });
    }
    if grid.index_of(hi).is_none() {
        return Err(StlError::UnalignedInterval { t: hi });
    }
    Ok((0..grid.num_nodes())
        .filter(|&k| grid.node(k) >= lo - TIME_TOL && grid.node(k) <= hi + TIME_TOL)
        .collect())
}

/// Grounds `f` (expected in NNF) at evaluation time `t_0 = 0`.
pub fn ground(f: &Formula, grid: &TimeGrid) -> Result<GroundedFormula, StlError> {
    let horizon = f.horizon();
    if horizon > grid.t_f() + TIME_TOL {
        return Err(StlError::HorizonExceedsGrid {
            horizon,
            t_f: grid.t_f(),
        });
    }
    let mut eval_times = vec![Vec::new(); f.node_count()];
    let mut next_id = 0usize;
    fn go(
        f: &Formula,
        times: &[usize],
        grid: &TimeGrid,
        eval_times: &mut Vec<Vec<usize>>,
        next_id: &mut usize,
    ) -> Result<(), StlError> {
        let id = *next_id;
        *next_id += 1;
        let mut merged: Vec<usize> = times.to_vec();
        merged.sort_unstable();
        merged.dedup();
        eval_times[id] = merged.clone();
        match f {
            Formula::True | Formula::Pred(_) => {}
            Formula::Not(c) => go(c, &merged, grid, eval_times, next_id)?,
            Formula::And(cs) | Formula::Or(cs) => {
                for c in cs {
                    go(c, &merged, grid, eval_times, next_id)?;
                }
            }
            Formula::Eventually(iv, c) | Formula::Always(iv, c) => {
                let mut child_times = Vec::new();
                for &k in &merged {
                    child_times.extend(window_indices(grid, grid.node(k), iv.a, iv.b)?);
                }
                go(c, &child_times, grid, eval_times, next_id)?;
            }
            Formula::Until(iv, l, r) => {
                let mut l_times = Vec::new();
                let mut r_times = Vec::new();
                for &k in &merged {
                    // ψ1 is needed on [t, t+b], ψ2 on [t+a, t+b]
                    l_times.extend(window_indices(grid, grid.node(k), 0.0, iv.b)?);
                    r_times.extend(window_indices(grid, grid.node(k), iv.a, iv.b)?);
                }
                go(l, &l_times, grid, eval_times, next_id)?;
                go(r, &r_times, grid, eval_times, next_id)?;
            }
        }
        Ok(())
    }
    go(f, &[0], grid, &mut eval_times, &mut next_id)?;
    Ok(GroundedFormula {
        formula: f.clone(),
        grid: grid.clone(),
        eval_times,
    })
}

// ---------------------------------------------------------------------------
// Discrete robustness
// ---------------------------------------------------------------------------

/// Standard discrete-time quantitative semantics over a sampled trace,
/// evaluated at the first sample.
pub fn discrete_robustness(
    samples: &[(f64, DVector<f64>)],
    f: &Formula,
) -> Result<f64, StlError> {
    if samples.is_empty() {
        return Err(StlError::InsufficientTrace {
            needed: f.horizon(),
            have: 0.0,
        });
    }
    let last = samples.last().unwrap().0;
    fn rob(
        f: &Formula,
        i: usize,
        samples: &[(f64, DVector<f64>)],
        last: f64,
    ) -> Result<f64, StlError> {
        let t = samples[i].0;
        Ok(match f {
            Formula::True => ROBUSTNESS_CAP,
            Formula::Pred(p) => {
                if p.row.len() == 0 {
                    p.offset
                } else {
                    p.eval(&samples[i].1)
                }
            }
            Formula::Not(c) => -rob(c, i, samples, last)?,
            Formula::And(cs) => {
                let mut v = ROBUSTNESS_CAP;
                for c in cs {
                    v = v.min(rob(c, i, samples, last)?);
                }
                v
            }
            Formula::Or(cs) => {
                let mut v = -ROBUSTNESS_CAP;
                for c in cs {
                    v = v.max(rob(c, i, samples, last)?);
                }
                v
            }
            Formula::Eventually(iv, c) | Formula::Always(iv, c) => {
                let idx = sample_window(samples, t + iv.a, t + iv.b, last)?;
                let mut v = if matches!(f, Formula::Eventually(..)) {
                    -ROBUSTNESS_CAP
                } else {
                    ROBUSTNESS_CAP
                };
                for j in idx {
                    let r = rob(c, j, samples, last)?;
                    v = if matches!(f, Formula::Eventually(..)) {
                        v.max(r)
                    } else {
                        v.min(r)
                    };
                }
                v
            }
            Formula::Until(iv, lhs, rhs) => {
                let idx = sample_window(samples, t + iv.a, t + iv.b, last)?;
                let mut best = -ROBUSTNESS_CAP;
                for j in idx {
                    let mut v = rob(rhs, j, samples, last)?;
                    for l in i..=j {
                        v = v.min(rob(lhs, l, samples, last)?);
                    }
                    best = best.max(v);
                }
                best
            }
        })
    }
    rob(f, 0, samples, last)
}

fn sample_window(
    samples: &[(f64, DVector<f64>)],
    lo: f64,
    hi: f64,
    last: f64,
) -> Result<Vec<usize>, StlError> {
    if hi > last + TIME_TOL {
        return Err(StlError::InsufficientTrace {
            needed: hi,
            have: last,
        });
    }
    let idx: Vec<usize> = samples
        .iter()
        .enumerate()
        .filter(|(_, (t, _))| *t >= lo - TIME_TOL && *t <= hi + TIME_TOL)
        .map(|(j, _)| j)
        .collect();
    if idx.is_empty() {
        return Err(StlError::EmptyWindow { lo, hi });
    }
    Ok(idx)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn e(i: usize, n: usize) -> RowDVector<f64> {
        let mut r = RowDVector::zeros(n);
        r[i] = 1.0;
        r
    }

    #[test]
    fn parse_paper_example3_formula() {
        let f = parse("G[0.63,0.80](x2 >= 3) & F[1.4,2.0](x2 <= -4)", 2).unwrap();
        match &f {
            Formula::And(cs) => {
                assert_eq!(cs.len(), 2);
                match &cs[0] {
                    Formula::Always(iv, c) => {
                        assert_eq!((iv.a, iv.b), (0.63, 0.80));
                        match c.as_ref() {
                            Formula::Pred(p) => {
                                assert_eq!(p.row, e(1, 2));
                                assert_eq!(p.offset, -3.0);
                            }
                            other => panic!("unexpected {other:?}"),
                        }
                    }
                    other => panic!("unexpected {other:?}"),
                }
                match &cs[1] {
                    Formula::Eventually(iv, c) => {
                        assert_eq!((iv.a, iv.b), (1.4, 2.0));
                        match c.as_ref() {
                            Formula::Pred(p) => {
                                assert_eq!(p.row, -e(1, 2));
                                assert_eq!(p.offset, -4.0);
                            }
                            other => panic!("unexpected {other:?}"),
                        }
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_negation_and_general_linear_atom() {
        let f = parse("!(x1 >= 0)", 2).unwrap();
        assert!(matches!(f, Formula::Not(_)));

        let f = parse("F[0.1,0.6](x1 <= -0.5 & x3 >= 0.5)", 4).unwrap();
        match f {
            Formula::Eventually(iv, c) => {
                assert_eq!((iv.a, iv.b), (0.1, 0.6));
                assert!(matches!(*c, Formula::And(_)));
            }
            other => panic!("unexpected {other:?}"),
        }

        let f = parse("2*x1 - 1.5*x2 + 3 >= 0", 2).unwrap();
        match f {
            Formula::Pred(p) => {
                assert_eq!(p.row, RowDVector::from_row_slice(&[2.0, -1.5]));
                assert_eq!(p.offset, 3.0);
            }
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn parse_errors_carry_position() {
        let err = parse("G[0.2,0.4](x9 >= 1)", 2).unwrap_err();
        assert!(matches!(err, StlError::UnknownState { index: 9, dim: 2 }));
        assert!(matches!(parse("x1 >", 2), Err(StlError::Parse { .. })));
        assert!(matches!(parse("G[0.4,0.2](x1 >= 0)", 2), Err(StlError::InvalidInterval { .. })));
    }

    #[test]
    fn nnf_de_morgan_and_duals() {
        let f = parse("!(x1 >= 0 & x2 >= 1)", 2).unwrap();
        let g = to_nnf(&f).unwrap();
        match g {
            Formula::Or(cs) => {
                assert_eq!(cs.len(), 2);
                for c in &cs {
                    assert!(matches!(c, Formula::Pred(_)));
                }
            }
            other => panic!("unexpected {other:?}"),
        }

        let f = parse("!G[0.1,0.5](x1 >= 0)", 2).unwrap();
        match to_nnf(&f).unwrap() {
            Formula::Eventually(iv, c) => {
                assert_eq!((iv.a, iv.b), (0.1, 0.5));
                match *c {
                    Formula::Pred(p) => {
                        assert_eq!(p.row, -e(0, 2));
                        assert_eq!(p.offset, -EPS_STRICT);
                    }
                    other => panic!("unexpected {other:?}"),
                }
            }
            other => panic!("unexpected {other:?}"),
        }

        let f = parse("!!(x1 >= 0)", 2).unwrap();
        assert_eq!(to_nnf(&f).unwrap(), parse("x1 >= 0", 2).unwrap());
    }

    #[test]
    fn grounding_alignment() {
        let grid = TimeGrid::uniform(2.0, 10).unwrap();
        let f = parse("G[0.2,0.4](x1 >= 0)", 1).unwrap();
        let g = ground(&f, &grid).unwrap();
        assert_eq!(g.eval_times[0], vec![0]);
        assert_eq!(g.eval_times[1], vec![1, 2]);

        let f = parse("G[0.63,0.80](x1 >= 0)", 1).unwrap();
        match ground(&f, &grid).unwrap_err() {
            StlError::UnalignedInterval { t } => assert!((t - 0.63).abs() < 1e-12),
            other => panic!("unexpected {other:?}"),
        }

        let f = parse("F[0.0,2.0](x1 >= 0)", 1).unwrap();
        let g = ground(&f, &grid).unwrap();
        assert_eq!(g.eval_times[1], (0..11).collect::<Vec<_>>());
    }

    #[test]
    fn grounding_is_idempotent_and_deterministic() {
        let grid = TimeGrid::uniform(2.0, 10).unwrap();
        let f = parse("F[0.2,0.8](x1 >= 0) & G[1.0,1.4](x1 <= 3)", 1).unwrap();
        let g1 = ground(&f, &grid).unwrap();
        let g2 = ground(&f, &grid).unwrap();
        assert_eq!(g1.eval_times, g2.eval_times);
    }

    #[test]
    fn horizon_check() {
        let grid = TimeGrid::uniform(1.0, 5).unwrap();
        let f = parse("F[0.0,2.0](x1 >= 0)", 1).unwrap();
        assert!(matches!(
            ground(&f, &grid),
            Err(StlError::HorizonExceedsGrid { .. })
        ));
    }

    fn const_trace(value: &[f64], times: &[f64]) -> Vec<(f64, DVector<f64>)> {
        times
            .iter()
            .map(|&t| (t, DVector::from_row_slice(value)))
            .collect()
    }

    #[test]
    fn robustness_constant_signal() {
        let trace = const_trace(&[0.0, 5.0], &[0.0, 0.5, 1.0]);
        let f = parse("G[0.0,1.0](x2 >= 3)", 2).unwrap();
        assert_eq!(discrete_robustness(&trace, &f).unwrap(), 2.0);
    }

    #[test]
    fn robustness_alternating_signal() {
        let trace: Vec<_> = (0..3)
            .map(|k| {
                (
                    0.5 * k as f64,
                    DVector::from_row_slice(&[if k % 2 == 0 { 1.0 } else { -1.0 }]),
                )
            })
            .collect();
        let f = parse("G[0.0,1.0](x1 >= 0)", 1).unwrap();
        assert_eq!(discrete_robustness(&trace, &f).unwrap(), -1.0);
    }

    #[test]
    fn robustness_until() {
        // x1 high until x2 turns on at t=1
        let trace = vec![
            (0.0, DVector::from_row_slice(&[2.0, -1.0])),
            (0.5, DVector::from_row_slice(&[1.5, -1.0])),
            (1.0, DVector::from_row_slice(&[1.0, 4.0])),
        ];
        let f = parse("(x1 >= 0) U[0.5,1.0] (x2 >= 0)", 2).unwrap();
        // best t' = 1.0: min(rho2(1.0)=4, min lhs over [0,1] = 1.0) = 1.0
        assert_eq!(discrete_robustness(&trace, &f).unwrap(), 1.0);
    }

    #[test]
    fn robustness_insufficient_trace() {
        let trace = const_trace(&[1.0], &[0.0, 0.5]);
        let f = parse("F[0.0,2.0](x1 >= 0)", 1).unwrap();
        assert!(matches!(
            discrete_robustness(&trace, &f),
            Err(StlError::InsufficientTrace { .. })
        ));
    }

    #[test]
    fn printer_round_trips() {
        let src = "G[0.63,0.8](x2 >= 3) & F[1.4,2](x2 <= -4) | !(x1 >= 0)";
        let f = parse(src, 2).unwrap();
        let printed = f.to_text();
        let re = parse(&printed, 2).unwrap();
        // compare semantics via canonical text of NNF
        assert_eq!(to_nnf(&f).unwrap().to_text(), to_nnf(&re).unwrap().to_text());
    }
}
