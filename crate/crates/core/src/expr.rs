//! Arithmetic expressions used by functional rates and history functions.

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BinOp {
    Add,
    Sub,
    Mul,
    Div,
    Pow,
}

impl BinOp {
    pub fn symbol(self) -> &'static str {
        match self {
            BinOp::Add => "+",
            BinOp::Sub => "-",
            BinOp::Mul => "*",
            BinOp::Div => "/",
            BinOp::Pow => "^",
        }
    }

    pub(crate) fn precedence(self) -> u8 {
        match self {
            BinOp::Add | BinOp::Sub => 1,
            BinOp::Mul | BinOp::Div => 2,
            BinOp::Pow => 4,
        }
    }

    fn right_assoc(self) -> bool {
        matches!(self, BinOp::Pow)
    }

    pub fn apply(self, a: f64, b: f64) -> f64 {
        match self {
            BinOp::Add => a + b,
            BinOp::Sub => a - b,
            BinOp::Mul => a * b,
            BinOp::Div => a / b,
            BinOp::Pow => a.powf(b),
        }
    }
}

const NEG_PRECEDENCE: u8 = 3;
const ATOM_PRECEDENCE: u8 = 5;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expr {
    Num(f64),
    Var(String),
    Neg(Box<Expr>),
    Bin(BinOp, Box<Expr>, Box<Expr>),
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error("unbound name `{0}`")]
    Unbound(String),
}

impl Expr {
    pub fn var(name: impl Into<String>) -> Self {
        Expr::Var(name.into())
    }

    pub fn bin(op: BinOp, lhs: Expr, rhs: Expr) -> Self {
        Expr::Bin(op, Box::new(lhs), Box::new(rhs))
    }

    /// Evaluates the expression, resolving names through `lookup`.
    pub fn eval<F>(&self, lookup: &F) -> Result<f64, EvalError>
    where
        F: Fn(&str) -> Option<f64>,
    {
        Ok(match self {
            Expr::Num(v) => *v,
            Expr::Var(name) => lookup(name).ok_or_else(|| EvalError::Unbound(name.clone()))?,
            Expr::Neg(arg) => -arg.eval(lookup)?,
            Expr::Bin(op, lhs, rhs) => op.apply(lhs.eval(lookup)?, rhs.eval(lookup)?),
        })
    }

    /// Free names, sorted.
    pub fn names(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_names(&mut out);
        out
    }

    fn collect_names(&self, out: &mut BTreeSet<String>) {
        match self {
            Expr::Num(_) => {}
            Expr::Var(name) => {
                out.insert(name.clone());
            }
            Expr::Neg(arg) => arg.collect_names(out),
            Expr::Bin(_, lhs, rhs) => {
                lhs.collect_names(out);
                rhs.collect_names(out);
            }
        }
    }

    pub fn mentions(&self, name: &str) -> bool {
        match self {
            Expr::Num(_) => false,
            Expr::Var(v) => v == name,
            Expr::Neg(arg) => arg.mentions(name),
            Expr::Bin(_, lhs, rhs) => lhs.mentions(name) || rhs.mentions(name),
        }
    }

    pub(crate) fn precedence(&self) -> u8 {
        match self {
            Expr::Num(_) | Expr::Var(_) => ATOM_PRECEDENCE,
            Expr::Neg(_) => NEG_PRECEDENCE,
            Expr::Bin(op, _, _) => op.precedence(),
        }
    }
}

pub(crate) fn fmt_operand<T: fmt::Display>(
    f: &mut fmt::Formatter<'_>,
    item: &T,
    parens: bool,
) -> fmt::Result {
    if parens {
        write!(f, "({item})")
    } else {
        write!(f, "{item}")
    }
}

/// Whether the left/right operand of `op` needs parentheses given its precedence.
pub(crate) fn needs_parens(op: BinOp, child_prec: u8, is_left: bool) -> bool {
    let p = op.precedence();
    if child_prec < p {
        return true;
    }
    child_prec == p && (is_left == op.right_assoc())
}

impl fmt::Display for Expr {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Expr::Num(v) => write!(f, "{v}"),
            Expr::Var(name) => f.write_str(name),
            Expr::Neg(arg) => {
                f.write_str("-")?;
                fmt_operand(f, arg, arg.precedence() < NEG_PRECEDENCE)
            }
            Expr::Bin(op, lhs, rhs) => {
                fmt_operand(f, lhs, needs_parens(*op, lhs.precedence(), true))?;
                match op {
                    BinOp::Pow => f.write_str("^")?,
                    _ => write!(f, " {} ", op.symbol())?,
                }
                fmt_operand(f, rhs, needs_parens(*op, rhs.precedence(), false))
            }
        }
    }
}
