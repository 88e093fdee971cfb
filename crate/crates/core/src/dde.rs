//! Translation to constant-delay DDEs and their numerical solution.
//!
//! The system is `dx/dt = D * v(t)` where `D` is the stoichiometry matrix and
//! `v` holds one kinetic law per action, every species reference in the law
//! of `a` read at `t - delay(a)`. Integration is classical RK4 on a grid
//! whose step divides every delay, so delayed stage times always fall on grid
//! points or grid midpoints; the latter are read by cubic Hermite
//! interpolation.

use std::fmt::{self, Write as _};

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{fmt_operand, needs_parens, BinOp, EvalError, Expr};
use crate::model::{stoichiometry_matrix, ModelError, RateLaw, RoleOp, SystemSpec};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DdeError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("model has no actions")]
    NoActions,
    #[error("step size {0} must be positive and finite")]
    BadStep(f64),
    #[error("end time {t_end} precedes t0 = {t0}")]
    BadEnd { t_end: f64, t0: f64 },
    #[error("no step size up to {step} divides every delay")]
    IncompatibleDelays { step: f64 },
    #[error("history of `{species}`: {source}")]
    History {
        species: String,
        #[source]
        source: EvalError,
    },
    #[error("unbound parameter `{0}`")]
    Unbound(String),
    #[error("solution is not finite at t = {time}")]
    BlowUp { time: f64 },
}

/// Kinetic-law expression whose species references carry a delay.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DelayedExpr {
    Num(f64),
    Param(String),
    Species { name: String, delay: f64 },
    Neg(Box<DelayedExpr>),
    Bin(BinOp, Box<DelayedExpr>, Box<DelayedExpr>),
}

const NEG_PREC: u8 = 3;
const ATOM_PREC: u8 = 5;

impl DelayedExpr {
    pub fn bin(op: BinOp, l: DelayedExpr, r: DelayedExpr) -> Self {
        DelayedExpr::Bin(op, Box::new(l), Box::new(r))
    }

    fn precedence(&self) -> u8 {
        match self {
            DelayedExpr::Num(_) | DelayedExpr::Param(_) | DelayedExpr::Species { .. } => ATOM_PREC,
            DelayedExpr::Neg(_) => NEG_PREC,
            DelayedExpr::Bin(op, _, _) => op.precedence(),
        }
    }

    /// Every `(species, delay)` reference, left to right.
    pub fn references(&self) -> Vec<(&str, f64)> {
        let mut out = Vec::new();
        fn walk<'a>(e: &'a DelayedExpr, out: &mut Vec<(&'a str, f64)>) {
            match e {
                DelayedExpr::Species { name, delay } => out.push((name, *delay)),
                DelayedExpr::Neg(a) => walk(a, out),
                DelayedExpr::Bin(_, l, r) => {
                    walk(l, out);
                    walk(r, out);
                }
                DelayedExpr::Num(_) | DelayedExpr::Param(_) => {}
            }
        }
        walk(self, &mut out);
        out
    }
}

impl fmt::Display for DelayedExpr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DelayedExpr::Num(v) => write!(f, "{v}"),
            DelayedExpr::Param(p) => f.write_str(p),
            DelayedExpr::Species { name, delay } if *delay == 0.0 => f.write_str(name),
            DelayedExpr::Species { name, delay } => write!(f, "{name}(t-{delay})"),
            DelayedExpr::Neg(a) => {
                f.write_str("-")?;
                fmt_operand(f, a, a.precedence() < NEG_PREC)
            }
            DelayedExpr::Bin(op, l, r) => {
                fmt_operand(f, l, needs_parens(*op, l.precedence(), true))?;
                match op {
                    BinOp::Pow => f.write_str("^")?,
                    _ => write!(f, " {} ", op.symbol())?,
                }
                fmt_operand(f, r, needs_parens(*op, r.precedence(), false))
            }
        }
    }
}

/// Values before `t0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum History {
    Constant(f64),
    /// Expression over parameters and `t`.
    Expr(Expr),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DdeSystem {
    pub variables: Vec<String>,
    pub actions: Vec<String>,
    /// `stoichiometry[species][action]`.
    pub stoichiometry: Vec<Vec<i64>>,
    pub kinetic: Vec<DelayedExpr>,
    pub delays: Vec<f64>,
    pub max_delay: f64,
    pub params: IndexMap<String, f64>,
    pub history: Vec<History>,
    pub t0: f64,
}

fn delayed(expr: &Expr, spec: &SystemSpec, delay: f64) -> DelayedExpr {
    match expr {
        Expr::Num(v) => DelayedExpr::Num(*v),
        Expr::Var(n) if spec.params.contains_key(n) => DelayedExpr::Param(n.clone()),
        Expr::Var(n) => DelayedExpr::Species {
            name: n.clone(),
            delay,
        },
        Expr::Neg(a) => DelayedExpr::Neg(Box::new(delayed(a, spec, delay))),
        Expr::Bin(op, l, r) => DelayedExpr::bin(*op, delayed(l, spec, delay), delayed(r, spec, delay)),
    }
}

/// Builds the DDE system of `spec`.
pub fn derive_dde(spec: &SystemSpec) -> Result<DdeSystem, DdeError> {
    let matrix = stoichiometry_matrix(spec)?;
    if matrix.actions.is_empty() {
        return Err(DdeError::NoActions);
    }
    let mut kinetic = Vec::new();
    let mut delays = Vec::new();
    for action in &matrix.actions {
        let d = spec.delay(action);
        let law = match spec.rates.get(action) {
            Some(RateLaw::MassAction(k)) => {
                let mut e = DelayedExpr::Param(k.clone());
                for (s, term) in spec.participants(action) {
                    if !matches!(term.role, RoleOp::Reactant | RoleOp::Activator) {
                        continue;
                    }
                    let mut x = DelayedExpr::Species { name: s, delay: d };
                    if term.stoich != 1 {
                        x = DelayedExpr::bin(BinOp::Pow, x, DelayedExpr::Num(f64::from(term.stoich)));
                    }
                    e = DelayedExpr::bin(BinOp::Mul, e, x);
                }
                e
            }
            Some(RateLaw::Expr(e)) => delayed(e, spec, d),
            None => return Err(ModelError::MissingRate(action.clone()).into()),
        };
        kinetic.push(law);
        delays.push(d);
    }
    let history = matrix
        .species
        .iter()
        .map(|s| match spec.histories.get(s) {
            Some(e) => History::Expr(e.clone()),
            None => History::Constant(
                spec.step * f64::from(spec.species.get(s).map_or(0, |q| q.init_level)),
            ),
        })
        .collect();
    Ok(DdeSystem {
        variables: matrix.species.clone(),
        max_delay: delays.iter().copied().fold(0.0, f64::max),
        actions: matrix.actions,
        stoichiometry: matrix.entries,
        kinetic,
        delays,
        params: spec.params.clone(),
        history,
        t0: 0.0,
    })
}

impl DdeSystem {
    /// One `dX/dt = ...` line per variable.
    pub fn to_text(&self) -> String {
        let mut out = String::new();
        for (i, v) in self.variables.iter().enumerate() {
            let mut rhs = String::new();
            for (j, law) in self.kinetic.iter().enumerate() {
                let c = self.stoichiometry[i][j];
                if c == 0 {
                    continue;
                }
                let term = if c.abs() == 1 {
                    law.to_string()
                } else {
                    let paren = law.precedence() < BinOp::Mul.precedence();
                    if paren {
                        format!("{} * ({law})", c.abs())
                    } else {
                        format!("{} * {law}", c.abs())
                    }
                };
                let term = if c.abs() == 1 && law.precedence() < BinOp::Mul.precedence() && c < 0 {
                    format!("({term})")
                } else {
                    term
                };
                match (rhs.is_empty(), c < 0) {
                    (true, false) => rhs.push_str(&term),
                    (true, true) => {
                        let _ = write!(rhs, "-{term}");
                    }
                    (false, false) => {
                        let _ = write!(rhs, " + {term}");
                    }
                    (false, true) => {
                        let _ = write!(rhs, " - {term}");
                    }
                }
            }
            if rhs.is_empty() {
                rhs.push('0');
            }
            let _ = writeln!(out, "d{v}/dt = {rhs}");
        }
        out
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("DDE system serializes")
    }

    pub fn from_json(text: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(text)
    }

    fn history_value(&self, i: usize, t: f64) -> Result<f64, DdeError> {
        match &self.history[i] {
            History::Constant(v) => Ok(*v),
            History::Expr(e) => {
                let lookup = |n: &str| if n == "t" { Some(t) } else { self.params.get(n).copied() };
                e.eval(&lookup).map_err(|source| DdeError::History {
                    species: self.variables[i].clone(),
                    source,
                })
            }
        }
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Num(f64),
    /// Variable index and delay slot.
    Var(usize, usize),
    Neg(Box<Compiled>),
    Bin(BinOp, Box<Compiled>, Box<Compiled>),
}

impl Compiled {
    fn eval(&self, read: &dyn Fn(usize, usize) -> f64) -> f64 {
        match self {
            Compiled::Num(v) => *v,
            Compiled::Var(i, d) => read(*i, *d),
            Compiled::Neg(a) => -a.eval(read),
            Compiled::Bin(op, l, r) => op.apply(l.eval(read), r.eval(read)),
        }
    }
}

struct Rhs {
    laws: Vec<Compiled>,
    delays: Vec<f64>,
    columns: Vec<Vec<(usize, f64)>>,
}

impl Rhs {
    fn new(sys: &DdeSystem) -> Result<Self, DdeError> {
        let mut delays: Vec<f64> = Vec::new();
        let mut slot = |d: f64| match delays.iter().position(|&x| x == d) {
            Some(k) => k,
            None => {
                delays.push(d);
                delays.len() - 1
            }
        };
        fn compile(
            e: &DelayedExpr,
            sys: &DdeSystem,
            slot: &mut dyn FnMut(f64) -> usize,
        ) -> Result<Compiled, DdeError> {
            Ok(match e {
                DelayedExpr::Num(v) => Compiled::Num(*v),
                DelayedExpr::Param(p) => Compiled::Num(
                    *sys.params.get(p).ok_or_else(|| DdeError::Unbound(p.clone()))?,
                ),
                DelayedExpr::Species { name, delay } => Compiled::Var(
                    sys.variables
                        .iter()
                        .position(|v| v == name)
                        .ok_or_else(|| DdeError::Unbound(name.clone()))?,
                    slot(*delay),
                ),
                DelayedExpr::Neg(a) => Compiled::Neg(Box::new(compile(a, sys, slot)?)),
                DelayedExpr::Bin(op, l, r) => Compiled::Bin(
                    *op,
                    Box::new(compile(l, sys, slot)?),
                    Box::new(compile(r, sys, slot)?),
                ),
            })
        }
        let laws = sys
            .kinetic
            .iter()
            .map(|e| compile(e, sys, &mut slot))
            .collect::<Result<Vec<_>, _>>()?;
        let columns = (0..sys.variables.len())
            .map(|i| {
                sys.stoichiometry[i]
                    .iter()
                    .enumerate()
                    .filter(|(_, &c)| c != 0)
                    .map(|(j, &c)| (j, c as f64))
                    .collect()
            })
            .collect();
        Ok(Rhs {
            laws,
            delays,
            columns,
        })
    }

    /// `D * v` given, for each delay slot, the state at `t - delay`.
    fn eval(&self, lagged: &[Vec<f64>], out: &mut [f64]) {
        let v: Vec<f64> = self.laws.iter().map(|l| l.eval(&|i, d| lagged[d][i])).collect();
        for (o, col) in out.iter_mut().zip(&self.columns) {
            *o = col.iter().map(|&(j, c)| c * v[j]).sum();
        }
    }
}

/// Largest step no greater than `requested` that divides every positive
/// delay to within `1e-9`.
pub fn compatible_step(requested: f64, delays: &[f64]) -> Option<f64> {
    let positive: Vec<f64> = delays.iter().copied().filter(|&d| d > 0.0).collect();
    let Some(&first) = positive.first() else {
        return Some(requested);
    };
    let mut n = (first / requested - 1e-9).ceil().max(1.0);
    for _ in 0..1_000_000 {
        let s = first / n;
        if positive.iter().all(|&d| (d - (d / s).round() * s).abs() <= 1e-9) {
            return Some(s);
        }
        n += 1.0;
    }
    None
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SolutionGrid {
    pub variables: Vec<String>,
    pub t0: f64,
    pub requested_step: f64,
    /// Step actually used; the final step may be shorter to land on the end
    /// time.
    pub step: f64,
    pub times: Vec<f64>,
    pub values: Vec<Vec<f64>>,
}

impl SolutionGrid {
    /// Index of the first solution (non-history) row.
    pub fn solution_start(&self) -> usize {
        self.times.iter().position(|&t| t >= self.t0).unwrap_or(self.times.len())
    }

    /// Value of variable `i` at `t`: exact on grid points, linear in between.
    pub fn value_at(&self, i: usize, t: f64) -> Option<f64> {
        let k = self.times.iter().position(|&x| x >= t)?;
        if self.times[k] == t || k == 0 {
            return Some(self.values[k][i]);
        }
        let (t_a, t_b) = (self.times[k - 1], self.times[k]);
        let w = (t - t_a) / (t_b - t_a);
        Some(self.values[k - 1][i] * (1.0 - w) + self.values[k][i] * w)
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("time,{},segment\n", self.variables.join(","));
        for (t, row) in self.times.iter().zip(&self.values) {
            let _ = write!(out, "{t}");
            for v in row {
                let _ = write!(out, ",{v}");
            }
            let seg = if *t < self.t0 { "history" } else { "solution" };
            let _ = writeln!(out, ",{seg}");
        }
        out
    }
}

fn hermite(h: f64, y0: f64, y1: f64, f0: f64, f1: f64, w: f64) -> f64 {
    let w2 = w * w;
    let w3 = w2 * w;
    (2.0 * w3 - 3.0 * w2 + 1.0) * y0
        + (w3 - 2.0 * w2 + w) * h * f0
        + (-2.0 * w3 + 3.0 * w2) * y1
        + (w3 - w2) * h * f1
}

/// Integrates from `t0` to `t_end` with fixed-step RK4.
pub fn solve_dde(sys: &DdeSystem, t_end: f64, step: f64) -> Result<SolutionGrid, DdeError> {
    if !(step > 0.0 && step.is_finite()) {
        return Err(DdeError::BadStep(step));
    }
    if !(t_end >= sys.t0) {
        return Err(DdeError::BadEnd { t_end, t0: sys.t0 });
    }
    let rhs = Rhs::new(sys)?;
    let s = compatible_step(step, &rhs.delays).ok_or(DdeError::IncompatibleDelays { step })?;
    let n = sys.variables.len();
    let t0 = sys.t0;
    let history = |t: f64| -> Result<Vec<f64>, DdeError> {
        (0..n).map(|i| sys.history_value(i, t)).collect()
    };

    let mut times = Vec::new();
    let mut values = Vec::new();
    let m = (sys.max_delay / s).round() as i64;
    for k in (1..=m).rev() {
        let t = t0 - k as f64 * s;
        times.push(t);
        values.push(history(t)?);
    }
    let first = times.len();
    // Solution segment: states and derivatives at grid points.
    let mut sol_t = vec![t0];
    let mut sol_y = vec![history(t0)?];
    let mut sol_f: Vec<Vec<f64>> = Vec::new();

    let lookup = |t: f64,
                  sol_t: &[f64],
                  sol_y: &[Vec<f64>],
                  sol_f: &[Vec<f64>]|
     -> Result<Vec<f64>, DdeError> {
        if t <= t0 {
            return history(t);
        }
        // Grid points are t0 + k*s except possibly the last.
        let k = (((t - t0) / s).floor() as usize).min(sol_t.len() - 1);
        let k = if k + 1 >= sol_t.len() { sol_t.len() - 2 } else { k };
        let (ta, tb) = (sol_t[k], sol_t[k + 1]);
        let hk = tb - ta;
        let w = (t - ta) / hk;
        if w.abs() < 1e-12 {
            return Ok(sol_y[k].clone());
        }
        if (w - 1.0).abs() < 1e-12 {
            return Ok(sol_y[k + 1].clone());
        }
        Ok((0..sol_y[k].len())
            .map(|i| hermite(hk, sol_y[k][i], sol_y[k + 1][i], sol_f[k][i], sol_f[k + 1][i], w))
            .collect())
    };
    let stage = |t: f64,
                 y: &[f64],
                 sol_t: &[f64],
                 sol_y: &[Vec<f64>],
                 sol_f: &[Vec<f64>]|
     -> Result<Vec<f64>, DdeError> {
        let lagged = rhs
            .delays
            .iter()
            .map(|&d| {
                if d == 0.0 {
                    Ok(y.to_vec())
                } else {
                    lookup(t - d, sol_t, sol_y, sol_f)
                }
            })
            .collect::<Result<Vec<_>, _>>()?;
        let mut out = vec![0.0; n];
        rhs.eval(&lagged, &mut out);
        Ok(out)
    };

    let f0 = stage(t0, &sol_y[0], &sol_t, &sol_y, &sol_f)?;
    sol_f.push(f0);
    let mut k_step = 0u64;
    loop {
        let t = *sol_t.last().unwrap();
        let remaining = t_end - t;
        if remaining <= s * 1e-9 {
            break;
        }
        k_step += 1;
        let t_next = if remaining < s * (1.0 + 1e-9) {
            t_end
        } else {
            t0 + k_step as f64 * s
        };
        let h = t_next - t;
        let y = sol_y.last().unwrap().clone();
        let k1 = sol_f.last().unwrap().clone();
        let add = |a: &[f64], b: &[f64], c: f64| -> Vec<f64> {
            a.iter().zip(b).map(|(x, y)| x + c * y).collect()
        };
        let k2 = stage(t + h / 2.0, &add(&y, &k1, h / 2.0), &sol_t, &sol_y, &sol_f)?;
        let k3 = stage(t + h / 2.0, &add(&y, &k2, h / 2.0), &sol_t, &sol_y, &sol_f)?;
        let k4 = stage(t + h, &add(&y, &k3, h), &sol_t, &sol_y, &sol_f)?;
        let y_next: Vec<f64> = (0..n)
            .map(|i| y[i] + h / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]))
            .collect();
        if y_next.iter().any(|v| !v.is_finite()) {
            return Err(DdeError::BlowUp { time: t_next });
        }
        sol_t.push(t_next);
        sol_y.push(y_next);
        let f_next = stage(t_next, sol_y.last().unwrap(), &sol_t, &sol_y, &sol_f)?;
        if f_next.iter().any(|v| !v.is_finite()) {
            return Err(DdeError::BlowUp { time: t_next });
        }
        sol_f.push(f_next);
    }
    debug_assert_eq!(times.len(), first);
    times.extend(sol_t);
    values.extend(sol_y);
    Ok(SolutionGrid {
        variables: sys.variables.clone(),
        t0,
        requested_step: step,
        step: s,
        times,
        values,
    })
}
