//! Text format for Bio-PEPAd models (`.biopepad`).
//!
//! ```text
//! // toy model
//! step = 1;
//! param k = 0.5;
//! rate alpha = MA(k);
//! delay alpha = 2.0;
//! species A : max = 4, init = 3;
//! species B : max = 4, init = 0;
//! A = (alpha, 1) << A;
//! B = (alpha, 1) >> B;
//! system A[3] <alpha> B[0];
//! ```
//!
//! Role operators: `<<` reactant, `>>` product, `(+)` activator, `(-)`
//! inhibitor, `(.)` modifier. Statements end with `;`, comments run from `//`
//! to the end of the line. A missing `delay` defaults to 0 with a warning; a
//! missing `species` line defaults the maximum level to
//! [`DEFAULT_MAX_LEVEL`] with a warning. `history S = expr;` overrides the
//! DDE history of `S` with an expression over parameters and `t`.

use std::collections::{BTreeSet, HashMap};
use std::fmt;
use std::fmt::Write as _;
use std::path::PathBuf;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::expr::{BinOp, Expr};
use crate::model::{
    validate, Compartment, InitialLeaf, Location, PrefixTerm, ProcessTree, Quantity, RateLaw,
    RoleOp, SpeciesComponent, SystemSpec,
};

pub const DEFAULT_MAX_LEVEL: u32 = 1_000_000;

const KEYWORDS: &[&str] = &[
    "param", "step", "rate", "delay", "species", "system", "history", "compartment", "MA", "max",
    "init",
];

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Origin {
    File(PathBuf),
    Inline(String),
}

#[derive(Debug, Clone)]
pub struct ModelSource {
    pub text: String,
    pub origin: Origin,
}

impl ModelSource {
    pub fn inline(tag: &str, text: impl Into<String>) -> Self {
        ModelSource {
            text: text.into(),
            origin: Origin::Inline(tag.to_string()),
        }
    }

    pub fn from_file(path: impl Into<PathBuf>) -> std::io::Result<Self> {
        let path = path.into();
        let text = std::fs::read_to_string(&path)?;
        Ok(ModelSource {
            text,
            origin: Origin::File(path),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ParseDiagnostic {
    pub line: usize,
    pub column: usize,
    pub message: String,
    pub severity: Severity,
}

impl fmt::Display for ParseDiagnostic {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let sev = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{}:{}: {sev}: {}", self.line, self.column, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct ParsedModel {
    pub spec: SystemSpec,
    pub warnings: Vec<ParseDiagnostic>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
struct Pos {
    line: usize,
    column: usize,
}

#[derive(Debug, Clone, PartialEq)]
enum Tok {
    Ident(String),
    Number(f64),
    Semi,
    Eq,
    Comma,
    Colon,
    LParen,
    RParen,
    LBracket,
    RBracket,
    Lt,
    Gt,
    Role(RoleOp),
    Plus,
    Minus,
    Star,
    Slash,
    Caret,
}

impl fmt::Display for Tok {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Tok::Ident(s) => write!(f, "`{s}`"),
            Tok::Number(v) => write!(f, "number {v}"),
            Tok::Semi => f.write_str("`;`"),
            Tok::Eq => f.write_str("`=`"),
            Tok::Comma => f.write_str("`,`"),
            Tok::Colon => f.write_str("`:`"),
            Tok::LParen => f.write_str("`(`"),
            Tok::RParen => f.write_str("`)`"),
            Tok::LBracket => f.write_str("`[`"),
            Tok::RBracket => f.write_str("`]`"),
            Tok::Lt => f.write_str("`<`"),
            Tok::Gt => f.write_str("`>`"),
            Tok::Role(r) => write!(f, "`{}`", r.symbol()),
            Tok::Plus => f.write_str("`+`"),
            Tok::Minus => f.write_str("`-`"),
            Tok::Star => f.write_str("`*`"),
            Tok::Slash => f.write_str("`/`"),
            Tok::Caret => f.write_str("`^`"),
        }
    }
}

fn error(pos: Pos, message: impl Into<String>) -> ParseDiagnostic {
    ParseDiagnostic {
        line: pos.line,
        column: pos.column,
        message: message.into(),
        severity: Severity::Error,
    }
}

fn warning(pos: Pos, message: impl Into<String>) -> ParseDiagnostic {
    ParseDiagnostic {
        line: pos.line,
        column: pos.column,
        message: message.into(),
        severity: Severity::Warning,
    }
}

fn lex(text: &str) -> Result<Vec<(Tok, Pos)>, ParseDiagnostic> {
    let chars: Vec<char> = text.chars().collect();
    let mut out = Vec::new();
    let (mut i, mut line, mut col) = (0usize, 1usize, 1usize);
    let advance = |i: &mut usize, col: &mut usize, n: usize| {
        *i += n;
        *col += n;
    };
    while i < chars.len() {
        let c = chars[i];
        let pos = Pos { line, column: col };
        let next = chars.get(i + 1).copied();
        match c {
            '\n' => {
                i += 1;
                line += 1;
                col = 1;
            }
            c if c.is_whitespace() => advance(&mut i, &mut col, 1),
            '/' if next == Some('/') => {
                while i < chars.len() && chars[i] != '\n' {
                    advance(&mut i, &mut col, 1);
                }
            }
            c if c.is_ascii_alphabetic() || c == '_' => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_alphanumeric() || chars[i] == '_') {
                    advance(&mut i, &mut col, 1);
                }
                out.push((Tok::Ident(chars[start..i].iter().collect()), pos));
            }
            c if c.is_ascii_digit() || (c == '.' && next.is_some_and(|n| n.is_ascii_digit())) => {
                let start = i;
                while i < chars.len() && (chars[i].is_ascii_digit() || chars[i] == '.') {
                    advance(&mut i, &mut col, 1);
                }
                if i < chars.len() && (chars[i] == 'e' || chars[i] == 'E') {
                    let mut j = i + 1;
                    if j < chars.len() && (chars[j] == '+' || chars[j] == '-') {
                        j += 1;
                    }
                    if j < chars.len() && chars[j].is_ascii_digit() {
                        while j < chars.len() && chars[j].is_ascii_digit() {
                            j += 1;
                        }
                        let n = j - i;
                        advance(&mut i, &mut col, n);
                    }
                }
                let s: String = chars[start..i].iter().collect();
                let v = s
                    .parse::<f64>()
                    .map_err(|_| error(pos, format!("malformed number `{s}`")))?;
                out.push((Tok::Number(v), pos));
            }
            '(' if matches!(next, Some('+' | '-' | '.')) && chars.get(i + 2) == Some(&')') => {
                let role = match next {
                    Some('+') => RoleOp::Activator,
                    Some('-') => RoleOp::Inhibitor,
                    _ => RoleOp::Modifier,
                };
                out.push((Tok::Role(role), pos));
                advance(&mut i, &mut col, 3);
            }
            '<' if next == Some('<') => {
                out.push((Tok::Role(RoleOp::Reactant), pos));
                advance(&mut i, &mut col, 2);
            }
            '>' if next == Some('>') => {
                out.push((Tok::Role(RoleOp::Product), pos));
                advance(&mut i, &mut col, 2);
            }
            _ => {
                let tok = match c {
                    ';' => Tok::Semi,
                    '=' => Tok::Eq,
                    ',' => Tok::Comma,
                    ':' => Tok::Colon,
                    '(' => Tok::LParen,
                    ')' => Tok::RParen,
                    '[' => Tok::LBracket,
                    ']' => Tok::RBracket,
                    '<' => Tok::Lt,
                    '>' => Tok::Gt,
                    '+' => Tok::Plus,
                    '-' => Tok::Minus,
                    '*' => Tok::Star,
                    '/' => Tok::Slash,
                    '^' => Tok::Caret,
                    other => return Err(error(pos, format!("unexpected character `{other}`"))),
                };
                out.push((tok, pos));
                advance(&mut i, &mut col, 1);
            }
        }
    }
    Ok(out)
}

/// A value that is either a literal or a parameter reference.
#[derive(Debug, Clone)]
enum Value {
    Lit(f64),
    Param(String, Pos),
}

#[derive(Debug)]
enum Stmt {
    Param(String, f64),
    Step(f64),
    Rate(String, RateLaw),
    Delay(String, Value),
    Species(String, u32, Option<u32>),
    History(String, Expr),
    Compartment(String, f64),
    Component(SpeciesComponent),
    System(ProcessTree<(InitialLeaf, Pos)>),
}

struct Parser<'a> {
    toks: &'a [(Tok, Pos)],
    at: usize,
    end: Pos,
}

type PResult<T> = Result<T, ParseDiagnostic>;

impl<'a> Parser<'a> {
    fn peek(&self) -> Option<&Tok> {
        self.toks.get(self.at).map(|(t, _)| t)
    }

    fn pos(&self) -> Pos {
        self.toks.get(self.at).map_or(self.end, |(_, p)| *p)
    }

    fn bump(&mut self) -> Option<(Tok, Pos)> {
        let t = self.toks.get(self.at).cloned();
        self.at += 1;
        t
    }

    fn unexpected(&self, wanted: &str) -> ParseDiagnostic {
        match self.toks.get(self.at) {
            Some((t, p)) => error(*p, format!("expected {wanted}, found {t}")),
            None => error(self.end, format!("expected {wanted}, found end of input")),
        }
    }

    fn expect(&mut self, tok: Tok, wanted: &str) -> PResult<Pos> {
        if self.peek() == Some(&tok) {
            Ok(self.bump().expect("peeked").1)
        } else {
            Err(self.unexpected(wanted))
        }
    }

    fn ident(&mut self, wanted: &str) -> PResult<(String, Pos)> {
        match self.peek() {
            Some(Tok::Ident(s)) if !KEYWORDS.contains(&s.as_str()) => {
                let s = s.clone();
                Ok((s, self.bump().expect("peeked").1))
            }
            _ => Err(self.unexpected(wanted)),
        }
    }

    fn keyword(&mut self, kw: &str) -> PResult<()> {
        match self.peek() {
            Some(Tok::Ident(s)) if s == kw => {
                self.bump();
                Ok(())
            }
            _ => Err(self.unexpected(&format!("`{kw}`"))),
        }
    }

    fn real(&mut self) -> PResult<f64> {
        let neg = if self.peek() == Some(&Tok::Minus) {
            self.bump();
            true
        } else {
            false
        };
        match self.peek() {
            Some(Tok::Number(v)) => {
                let v = *v;
                self.bump();
                Ok(if neg { -v } else { v })
            }
            _ => Err(self.unexpected("a number")),
        }
    }

    fn integer(&mut self) -> PResult<u32> {
        let pos = self.pos();
        let v = self.real()?;
        if v.fract() != 0.0 || !(0.0..=f64::from(u32::MAX)).contains(&v) {
            return Err(error(pos, format!("expected a nonnegative integer, found {v}")));
        }
        Ok(v as u32)
    }

    fn statement(&mut self) -> PResult<(Stmt, Pos)> {
        let pos = self.pos();
        let head = match self.peek() {
            Some(Tok::Ident(s)) => s.clone(),
            _ => return Err(self.unexpected("a statement")),
        };
        let stmt = match head.as_str() {
            "param" => {
                self.bump();
                let (name, _) = self.ident("a parameter name")?;
                self.expect(Tok::Eq, "`=`")?;
                Stmt::Param(name, self.real()?)
            }
            "step" => {
                self.bump();
                self.expect(Tok::Eq, "`=`")?;
                Stmt::Step(self.real()?)
            }
            "rate" => {
                self.bump();
                let (name, _) = self.ident("an action name")?;
                self.expect(Tok::Eq, "`=`")?;
                let is_ma = matches!(self.peek(), Some(Tok::Ident(s)) if s == "MA")
                    && matches!(self.toks.get(self.at + 1), Some((Tok::LParen, _)));
                if is_ma {
                    self.bump();
                    self.bump();
                    let (k, _) = self.ident("a parameter name")?;
                    self.expect(Tok::RParen, "`)`")?;
                    Stmt::Rate(name, RateLaw::MassAction(k))
                } else {
                    Stmt::Rate(name, RateLaw::Expr(self.expr()?))
                }
            }
            "delay" => {
                self.bump();
                let (name, _) = self.ident("an action name")?;
                self.expect(Tok::Eq, "`=`")?;
                let value = match self.peek() {
                    Some(Tok::Ident(_)) => {
                        let (p, ppos) = self.ident("a parameter name")?;
                        Value::Param(p, ppos)
                    }
                    _ => Value::Lit(self.real()?),
                };
                Stmt::Delay(name, value)
            }
            "species" => {
                self.bump();
                let (name, _) = self.ident("a species name")?;
                self.expect(Tok::Colon, "`:`")?;
                self.keyword("max")?;
                self.expect(Tok::Eq, "`=`")?;
                let max = self.integer()?;
                let init = if self.peek() == Some(&Tok::Comma) {
                    self.bump();
                    self.keyword("init")?;
                    self.expect(Tok::Eq, "`=`")?;
                    Some(self.integer()?)
                } else {
                    None
                };
                Stmt::Species(name, max, init)
            }
            "history" => {
                self.bump();
                let (name, _) = self.ident("a species name")?;
                self.expect(Tok::Eq, "`=`")?;
                Stmt::History(name, self.expr()?)
            }
            "compartment" => {
                self.bump();
                let (name, _) = self.ident("a compartment name")?;
                self.expect(Tok::Eq, "`=`")?;
                Stmt::Compartment(name, self.real()?)
            }
            "system" => {
                self.bump();
                Stmt::System(self.process()?)
            }
            _ => {
                let (name, _) = self.ident("a statement")?;
                self.expect(Tok::Eq, "`=`")?;
                Stmt::Component(self.component(name)?)
            }
        };
        self.expect(Tok::Semi, "`;`")?;
        Ok((stmt, pos))
    }

    fn component(&mut self, name: String) -> PResult<SpeciesComponent> {
        let mut terms = Vec::new();
        loop {
            self.expect(Tok::LParen, "`(`")?;
            let (action, _) = self.ident("an action name")?;
            self.expect(Tok::Comma, "`,`")?;
            let spos = self.pos();
            let stoich = self.integer()?;
            if stoich == 0 {
                return Err(error(spos, "stoichiometry must be at least 1"));
            }
            self.expect(Tok::RParen, "`)`")?;
            let role = match self.bump() {
                Some((Tok::Role(r), _)) => r,
                _ => {
                    self.at -= 1;
                    return Err(self.unexpected("a role operator (<<, >>, (+), (-), (.))"));
                }
            };
            if let Some(Tok::Ident(_)) = self.peek() {
                let (tail, tpos) = self.ident("a species name")?;
                if tail != name {
                    return Err(error(
                        tpos,
                        format!("`{name}` may only recur to itself, found `{tail}`"),
                    ));
                }
            }
            terms.push(PrefixTerm { action, stoich, role });
            if self.peek() == Some(&Tok::Plus) {
                self.bump();
            } else {
                break;
            }
        }
        Ok(SpeciesComponent { name, terms })
    }

    fn process(&mut self) -> PResult<ProcessTree<(InitialLeaf, Pos)>> {
        let mut lhs = self.process_atom()?;
        while self.peek() == Some(&Tok::Lt) {
            self.bump();
            let mut actions = BTreeSet::new();
            if self.peek() != Some(&Tok::Gt) {
                loop {
                    let (a, _) = self.ident("an action name")?;
                    actions.insert(a);
                    if self.peek() == Some(&Tok::Comma) {
                        self.bump();
                    } else {
                        break;
                    }
                }
            }
            self.expect(Tok::Gt, "`>`")?;
            let rhs = self.process_atom()?;
            lhs = ProcessTree::Coop {
                left: Box::new(lhs),
                right: Box::new(rhs),
                actions,
            };
        }
        Ok(lhs)
    }

    fn process_atom(&mut self) -> PResult<ProcessTree<(InitialLeaf, Pos)>> {
        if self.peek() == Some(&Tok::LParen) {
            self.bump();
            let inner = self.process()?;
            self.expect(Tok::RParen, "`)`")?;
            return Ok(inner);
        }
        let (species, pos) = self.ident("a species name")?;
        self.expect(Tok::LBracket, "`[`")?;
        let level = self.integer()?;
        self.expect(Tok::RBracket, "`]`")?;
        Ok(ProcessTree::Leaf((InitialLeaf { species, level }, pos)))
    }

    fn expr(&mut self) -> PResult<Expr> {
        let mut lhs = self.term()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Plus) => BinOp::Add,
                Some(Tok::Minus) => BinOp::Sub,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.term()?);
        }
    }

    fn term(&mut self) -> PResult<Expr> {
        let mut lhs = self.unary()?;
        loop {
            let op = match self.peek() {
                Some(Tok::Star) => BinOp::Mul,
                Some(Tok::Slash) => BinOp::Div,
                _ => return Ok(lhs),
            };
            self.bump();
            lhs = Expr::bin(op, lhs, self.unary()?);
        }
    }

    fn unary(&mut self) -> PResult<Expr> {
        if self.peek() == Some(&Tok::Minus) {
            self.bump();
            return Ok(Expr::Neg(Box::new(self.unary()?)));
        }
        let base = self.atom()?;
        if self.peek() == Some(&Tok::Caret) {
            self.bump();
            return Ok(Expr::bin(BinOp::Pow, base, self.unary()?));
        }
        Ok(base)
    }

    fn atom(&mut self) -> PResult<Expr> {
        match self.peek() {
            Some(Tok::Number(v)) => {
                let v = *v;
                self.bump();
                Ok(Expr::Num(v))
            }
            Some(Tok::LParen) => {
                self.bump();
                let e = self.expr()?;
                self.expect(Tok::RParen, "`)`")?;
                Ok(e)
            }
            Some(Tok::Ident(_)) => Ok(Expr::Var(self.ident("a name")?.0)),
            _ => Err(self.unexpected("an expression")),
        }
    }

    /// Skips past the next `;` after an error.
    fn recover(&mut self) {
        while let Some(t) = self.peek() {
            let semi = *t == Tok::Semi;
            self.at += 1;
            if semi {
                break;
            }
        }
    }
}

fn end_pos(text: &str) -> Pos {
    let line = text.lines().count().max(1);
    let column = text.lines().last().map_or(1, |l| l.chars().count() + 1);
    if text.ends_with('\n') {
        Pos { line: line + 1, column: 1 }
    } else {
        Pos { line, column }
    }
}

/// Parses a model. On success the returned spec passes [`validate`];
/// warnings are returned alongside. On failure every error found is
/// returned.
pub fn parse_model(src: &ModelSource) -> Result<ParsedModel, Vec<ParseDiagnostic>> {
    let toks = lex(&src.text).map_err(|d| vec![d])?;
    let mut parser = Parser {
        toks: &toks,
        at: 0,
        end: end_pos(&src.text),
    };
    let mut errors = Vec::new();
    let mut stmts = Vec::new();
    while parser.peek().is_some() {
        match parser.statement() {
            Ok(s) => stmts.push(s),
            Err(d) => {
                errors.push(d);
                parser.recover();
            }
        }
    }
    if !errors.is_empty() {
        return Err(errors);
    }
    build(stmts)
}

fn build(stmts: Vec<(Stmt, Pos)>) -> Result<ParsedModel, Vec<ParseDiagnostic>> {
    let mut errors = Vec::new();
    let mut warnings = Vec::new();
    let mut step: Option<(f64, Pos)> = None;
    let mut params: IndexMap<String, f64> = IndexMap::new();
    let mut rates: IndexMap<String, RateLaw> = IndexMap::new();
    let mut delays_raw: IndexMap<String, (Value, Pos)> = IndexMap::new();
    let mut quantities: IndexMap<String, (u32, Option<u32>, Pos)> = IndexMap::new();
    let mut histories: IndexMap<String, Expr> = IndexMap::new();
    let mut compartments: Vec<Compartment> = Vec::new();
    let mut components: IndexMap<String, SpeciesComponent> = IndexMap::new();
    let mut system: Option<ProcessTree<(InitialLeaf, Pos)>> = None;
    // Definition sites, for locating validation failures.
    let mut sites: HashMap<String, Pos> = HashMap::new();

    let dup = |kind: &str, name: &str, pos: Pos, errors: &mut Vec<ParseDiagnostic>| {
        errors.push(error(pos, format!("duplicate {kind} `{name}`")));
    };

    for (stmt, pos) in stmts {
        match stmt {
            Stmt::Param(name, v) => {
                if params.insert(name.clone(), v).is_some() {
                    dup("parameter", &name, pos, &mut errors);
                }
                sites.entry(format!("param {name}")).or_insert(pos);
            }
            Stmt::Step(v) => {
                if step.is_some() {
                    errors.push(error(pos, "duplicate step size"));
                }
                step = Some((v, pos));
            }
            Stmt::Rate(name, law) => {
                if rates.insert(name.clone(), law).is_some() {
                    dup("rate", &name, pos, &mut errors);
                }
                sites.entry(format!("action {name}")).or_insert(pos);
            }
            Stmt::Delay(name, v) => {
                if delays_raw.insert(name.clone(), (v, pos)).is_some() {
                    dup("delay", &name, pos, &mut errors);
                }
            }
            Stmt::Species(name, max, init) => {
                if quantities.insert(name.clone(), (max, init, pos)).is_some() {
                    dup("species declaration", &name, pos, &mut errors);
                }
                sites.entry(format!("species {name}")).or_insert(pos);
            }
            Stmt::History(name, e) => {
                if histories.insert(name.clone(), e).is_some() {
                    dup("history", &name, pos, &mut errors);
                }
                sites.entry(format!("history {name}")).or_insert(pos);
            }
            Stmt::Compartment(name, size) => {
                if compartments.iter().any(|c| c.name == name) {
                    dup("compartment", &name, pos, &mut errors);
                }
                compartments.push(Compartment { name, size });
            }
            Stmt::Component(c) => {
                let name = c.name.clone();
                if components.insert(name.clone(), c).is_some() {
                    dup("component", &name, pos, &mut errors);
                }
                sites.entry(format!("component {name}")).or_insert(pos);
            }
            Stmt::System(p) => {
                if system.is_some() {
                    errors.push(error(pos, "duplicate system definition"));
                }
                system = Some(p);
                sites.insert("system".into(), pos);
            }
        }
    }

    let Some(system_raw) = system else {
        errors.push(error(Pos { line: 1, column: 1 }, "missing system definition"));
        return Err(errors);
    };

    // Resolve names in the system.
    let mut leaf_levels: IndexMap<String, (u32, Pos)> = IndexMap::new();
    system_raw.visit_leaves(&mut |(leaf, pos)| {
        if !components.contains_key(&leaf.species) {
            errors.push(error(*pos, format!("undefined species `{}`", leaf.species)));
        }
        if leaf_levels.insert(leaf.species.clone(), (leaf.level, *pos)).is_some() {
            errors.push(error(*pos, format!("species `{}` appears twice in the system", leaf.species)));
        }
    });
    let system_pos = sites["system"];
    system_raw.visit_coops(&mut |_, _, set| {
        for a in set {
            let known = components.values().any(|c| c.term(a).is_some());
            if !known {
                errors.push(error(system_pos, format!("unknown action `{a}` in cooperation set")));
            }
        }
    });
    let system = system_raw.map_leaves(&mut |(leaf, _)| leaf.clone());

    // Quantities.
    let mut species = IndexMap::new();
    for leaf in system.leaves() {
        let name = &leaf.species;
        match quantities.get(name) {
            Some(&(max, init, pos)) => {
                if let Some(init) = init {
                    if init != leaf.level {
                        errors.push(error(
                            pos,
                            format!(
                                "species `{name}` declares init = {init} but the system starts it at {}",
                                leaf.level
                            ),
                        ));
                    }
                }
                species.insert(name.clone(), Quantity { max_level: max, init_level: leaf.level });
            }
            None => {
                let pos = leaf_levels.get(name).map_or(system_pos, |(_, p)| *p);
                warnings.push(warning(
                    pos,
                    format!("no species declaration for `{name}`; maximum level defaults to {DEFAULT_MAX_LEVEL}"),
                ));
                species.insert(
                    name.clone(),
                    Quantity { max_level: DEFAULT_MAX_LEVEL, init_level: leaf.level },
                );
            }
        }
    }
    for (name, (_, _, pos)) in &quantities {
        if !components.contains_key(name) {
            errors.push(error(*pos, format!("species `{name}` has no component definition")));
        }
    }

    // Actions and delays.
    let mut actions: Vec<String> = Vec::new();
    for c in components.values() {
        for t in &c.terms {
            if !actions.contains(&t.action) {
                actions.push(t.action.clone());
            }
        }
    }
    let mut delays = IndexMap::new();
    for (name, (value, pos)) in &delays_raw {
        if !actions.contains(name) {
            errors.push(error(*pos, format!("delay for unknown action `{name}`")));
            continue;
        }
        let v = match value {
            Value::Lit(v) => *v,
            Value::Param(p, ppos) => match params.get(p) {
                Some(v) => *v,
                None => {
                    errors.push(error(*ppos, format!("unknown parameter `{p}`")));
                    continue;
                }
            },
        };
        delays.insert(name.clone(), v);
    }
    let last_pos = system_pos;
    for a in &actions {
        if !delays.contains_key(a) && !delays_raw.contains_key(a) {
            warnings.push(warning(
                last_pos,
                format!("no delay given for action `{a}`; defaulting to 0"),
            ));
            delays.insert(a.clone(), 0.0);
        }
    }
    // Keep delays in action order for a stable canonical form.
    let delays: IndexMap<String, f64> = actions
        .iter()
        .filter_map(|a| delays.get(a).map(|d| (a.clone(), *d)))
        .collect();

    for (name, law) in &rates {
        let pos = sites[&format!("action {name}")];
        if !actions.contains(name) {
            errors.push(error(pos, format!("rate for unknown action `{name}`")));
        }
        match law {
            RateLaw::MassAction(k) if !params.contains_key(k) => {
                errors.push(error(pos, format!("unknown parameter `{k}`")));
            }
            RateLaw::Expr(e) => {
                for n in e.names() {
                    if !params.contains_key(&n) && !components.contains_key(&n) {
                        errors.push(error(pos, format!("unresolved name `{n}` in rate of `{name}`")));
                    }
                }
            }
            _ => {}
        }
    }
    for a in &actions {
        if !rates.contains_key(a) {
            errors.push(error(last_pos, format!("no rate given for action `{a}`")));
        }
    }
    for (name, e) in &histories {
        let pos = sites[&format!("history {name}")];
        if !components.contains_key(name) {
            errors.push(error(pos, format!("history for unknown species `{name}`")));
        }
        for n in e.names() {
            if n != "t" && !params.contains_key(&n) {
                errors.push(error(pos, format!("unresolved name `{n}` in history of `{name}`")));
            }
        }
    }

    if !errors.is_empty() {
        return Err(errors);
    }

    let spec = SystemSpec {
        compartments,
        step: step.map_or(1.0, |(v, _)| v),
        species,
        params,
        rates,
        components,
        system,
        delays,
        histories,
    };

    let violations = validate(&spec);
    if !violations.is_empty() {
        let locate = |loc: &Location| -> Pos {
            let key = match loc {
                Location::Step => return step.map_or(Pos { line: 1, column: 1 }, |(_, p)| p),
                Location::Species(s) => format!("species {s}"),
                Location::Component(c) => format!("component {c}"),
                Location::Action(a) => format!("action {a}"),
                Location::Param(p) => format!("param {p}"),
                Location::History(h) => format!("history {h}"),
                Location::System => "system".into(),
            };
            sites
                .get(&key)
                .or_else(|| match loc {
                    Location::Species(s) => sites.get(&format!("component {s}")),
                    _ => None,
                })
                .copied()
                .unwrap_or(system_pos)
        };
        return Err(violations
            .into_iter()
            .map(|v| error(locate(&v.location), v.to_string()))
            .collect());
    }

    Ok(ParsedModel { spec, warnings })
}

/// Canonical text for `spec`; parsing it yields an equal spec.
pub fn serialize_model(spec: &SystemSpec) -> String {
    let mut out = String::new();
    for c in &spec.compartments {
        let _ = writeln!(out, "compartment {} = {};", c.name, c.size);
    }
    let _ = writeln!(out, "step = {};", spec.step);
    for (name, v) in &spec.params {
        let _ = writeln!(out, "param {name} = {v};");
    }
    for (name, law) in &spec.rates {
        match law {
            RateLaw::MassAction(k) => {
                let _ = writeln!(out, "rate {name} = MA({k});");
            }
            RateLaw::Expr(e) => {
                let _ = writeln!(out, "rate {name} = {e};");
            }
        }
    }
    for (name, d) in &spec.delays {
        let _ = writeln!(out, "delay {name} = {d};");
    }
    for (name, q) in &spec.species {
        let _ = writeln!(out, "species {name} : max = {}, init = {};", q.max_level, q.init_level);
    }
    for (name, e) in &spec.histories {
        let _ = writeln!(out, "history {name} = {e};");
    }
    for (name, comp) in &spec.components {
        let terms: Vec<String> = comp
            .terms
            .iter()
            .map(|t| format!("({}, {}) {} {name}", t.action, t.stoich, t.role.symbol()))
            .collect();
        let _ = writeln!(out, "{name} = {};", terms.join(" + "));
    }
    let _ = writeln!(out, "system {};", spec.system);
    out
}
