//! Domain types for Bio-PEPAd systems: species components, the initial
//! process, functional rates and the delay map.
//!
//! A [`SystemSpec`] is immutable once built; every analysis back-end borrows
//! it. [`validate`] reports every violated invariant as data, and a spec with
//! an empty report is accepted by every other operation in the crate.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{EvalError, Expr};

/// The role a species plays in an action.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleOp {
    Reactant,
    Product,
    Activator,
    Inhibitor,
    Modifier,
}

impl RoleOp {
    pub const ALL: [RoleOp; 5] = [
        RoleOp::Reactant,
        RoleOp::Product,
        RoleOp::Activator,
        RoleOp::Inhibitor,
        RoleOp::Modifier,
    ];

    /// Concrete syntax used in model files.
    pub fn symbol(self) -> &'static str {
        match self {
            RoleOp::Reactant => "<<",
            RoleOp::Product => ">>",
            RoleOp::Activator => "(+)",
            RoleOp::Inhibitor => "(-)",
            RoleOp::Modifier => "(.)",
        }
    }
}

impl fmt::Display for RoleOp {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.symbol())
    }
}

/// `(action, stoich) op` inside a species definition.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct PrefixTerm {
    pub action: String,
    pub stoich: u32,
    pub role: RoleOp,
}

/// A sequential component: a choice over prefix terms, each recurring to the
/// same species.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SpeciesComponent {
    pub name: String,
    pub terms: Vec<PrefixTerm>,
}

impl SpeciesComponent {
    pub fn term(&self, action: &str) -> Option<&PrefixTerm> {
        self.terms.iter().find(|t| t.action == action)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Quantity {
    pub max_level: u32,
    pub init_level: u32,
}

/// Opaque compartment declaration. Retained, never interpreted.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Compartment {
    pub name: String,
    pub size: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RateLaw {
    /// Mass action with the named parameter as rate constant.
    MassAction(String),
    Expr(Expr),
}

/// Cooperation tree. Leaves are species, internal nodes synchronise on a set
/// of actions.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ProcessTree<L> {
    Leaf(L),
    Coop {
        left: Box<ProcessTree<L>>,
        right: Box<ProcessTree<L>>,
        actions: BTreeSet<String>,
    },
}

impl<L> ProcessTree<L> {
    pub fn coop(left: Self, right: Self, actions: impl IntoIterator<Item = String>) -> Self {
        ProcessTree::Coop {
            left: Box::new(left),
            right: Box::new(right),
            actions: actions.into_iter().collect(),
        }
    }

    /// Leaves in left-to-right order.
    pub fn leaves(&self) -> Vec<&L> {
        let mut out = Vec::new();
        self.visit_leaves(&mut |l| out.push(l));
        out
    }

    pub fn visit_leaves<'a>(&'a self, f: &mut impl FnMut(&'a L)) {
        match self {
            ProcessTree::Leaf(l) => f(l),
            ProcessTree::Coop { left, right, .. } => {
                left.visit_leaves(f);
                right.visit_leaves(f);
            }
        }
    }

    pub fn map_leaves<M>(&self, f: &mut impl FnMut(&L) -> M) -> ProcessTree<M> {
        match self {
            ProcessTree::Leaf(l) => ProcessTree::Leaf(f(l)),
            ProcessTree::Coop {
                left,
                right,
                actions,
            } => ProcessTree::Coop {
                left: Box::new(left.map_leaves(f)),
                right: Box::new(right.map_leaves(f)),
                actions: actions.clone(),
            },
        }
    }

    /// Visits every cooperation node together with its two subtrees.
    pub fn visit_coops<'a>(&'a self, f: &mut impl FnMut(&'a Self, &'a Self, &'a BTreeSet<String>)) {
        if let ProcessTree::Coop {
            left,
            right,
            actions,
        } = self
        {
            f(left, right, actions);
            left.visit_coops(f);
            right.visit_coops(f);
        }
    }
}

/// Leaf of the initial process: `Name[level]`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct InitialLeaf {
    pub species: String,
    pub level: u32,
}

impl fmt::Display for ProcessTree<InitialLeaf> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_tree(self, f, &|leaf, f| write!(f, "{}[{}]", leaf.species, leaf.level))
    }
}

/// Writes a cooperation tree left-associatively, parenthesising right
/// subtrees that are themselves cooperations.
pub(crate) fn fmt_tree<L>(
    tree: &ProcessTree<L>,
    f: &mut fmt::Formatter<'_>,
    leaf: &dyn Fn(&L, &mut fmt::Formatter<'_>) -> fmt::Result,
) -> fmt::Result {
    match tree {
        ProcessTree::Leaf(l) => leaf(l, f),
        ProcessTree::Coop {
            left,
            right,
            actions,
        } => {
            fmt_tree(left, f, leaf)?;
            let set: Vec<&str> = actions.iter().map(String::as_str).collect();
            write!(f, " <{}> ", set.join(", "))?;
            if matches!(**right, ProcessTree::Coop { .. }) {
                f.write_str("(")?;
                fmt_tree(right, f, leaf)?;
                f.write_str(")")
            } else {
                fmt_tree(right, f, leaf)
            }
        }
    }
}

/// A Bio-PEPAd system: compartments, quantities, parameters, functional
/// rates, component definitions, the initial process and the delay map.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SystemSpec {
    pub compartments: Vec<Compartment>,
    /// Step size `h`: one concentration level corresponds to `h` units.
    pub step: f64,
    pub species: IndexMap<String, Quantity>,
    pub params: IndexMap<String, f64>,
    pub rates: IndexMap<String, RateLaw>,
    pub components: IndexMap<String, SpeciesComponent>,
    pub system: ProcessTree<InitialLeaf>,
    pub delays: IndexMap<String, f64>,
    /// DDE history overrides, expressions over parameters and `t`.
    pub histories: IndexMap<String, Expr>,
}

impl SystemSpec {
    /// Actions in order of first appearance across component definitions.
    pub fn actions(&self) -> Vec<String> {
        let mut seen = BTreeSet::new();
        let mut out = Vec::new();
        for comp in self.components.values() {
            for term in &comp.terms {
                if seen.insert(term.action.as_str()) {
                    out.push(term.action.clone());
                }
            }
        }
        out
    }

    /// Species in the left-to-right leaf order of the initial process. This
    /// is the order of every state vector in the crate.
    pub fn species_order(&self) -> Vec<String> {
        self.system.leaves().into_iter().map(|l| l.species.clone()).collect()
    }

    pub fn delay(&self, action: &str) -> f64 {
        self.delays.get(action).copied().unwrap_or(0.0)
    }

    pub fn max_level(&self, species: &str) -> u32 {
        self.species.get(species).map_or(0, |q| q.max_level)
    }

    /// Participants of `action` in species order.
    pub fn participants(&self, action: &str) -> Vec<(String, PrefixTerm)> {
        self.species_order()
            .into_iter()
            .filter_map(|s| {
                let term = self.components.get(&s)?.term(action)?.clone();
                Some((s, term))
            })
            .collect()
    }

    /// Sets the initial level of a species in both the quantity table and
    /// the initial process.
    pub fn set_initial_level(&mut self, species: &str, level: u32) {
        if let Some(q) = self.species.get_mut(species) {
            q.init_level = level;
        }
        fn walk(tree: &mut ProcessTree<InitialLeaf>, species: &str, level: u32) {
            match tree {
                ProcessTree::Leaf(l) if l.species == species => l.level = level,
                ProcessTree::Leaf(_) => {}
                ProcessTree::Coop { left, right, .. } => {
                    walk(left, species, level);
                    walk(right, species, level);
                }
            }
        }
        walk(&mut self.system, species, level);
    }

    /// Whether the stored level of `species` in a scheduled `action` can
    /// influence that action's rate.
    pub fn rate_reads(&self, action: &str, species: &str) -> bool {
        match self.rates.get(action) {
            Some(RateLaw::MassAction(_)) => self
                .components
                .get(species)
                .and_then(|c| c.term(action))
                .is_some_and(|t| matches!(t.role, RoleOp::Reactant | RoleOp::Activator)),
            Some(RateLaw::Expr(e)) => e.mentions(species),
            None => true,
        }
    }
}

/// Where a violation was found.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Location {
    Step,
    Species(String),
    Component(String),
    Action(String),
    Param(String),
    History(String),
    System,
}

impl fmt::Display for Location {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Location::Step => f.write_str("step"),
            Location::Species(s) => write!(f, "species {s}"),
            Location::Component(s) => write!(f, "component {s}"),
            Location::Action(a) => write!(f, "action {a}"),
            Location::Param(p) => write!(f, "param {p}"),
            Location::History(s) => write!(f, "history {s}"),
            Location::System => f.write_str("system"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Violation {
    pub location: Location,
    pub message: String,
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: {}", self.location, self.message)
    }
}

/// Checks every structural invariant of `spec`. An empty result means valid.
pub fn validate(spec: &SystemSpec) -> Vec<Violation> {
    let mut out = Vec::new();
    let mut push = |location: Location, message: String| out.push(Violation { location, message });

    if !(spec.step.is_finite() && spec.step > 0.0) {
        push(Location::Step, format!("step size must be positive, got {}", spec.step));
    }

    for (name, value) in &spec.params {
        if !value.is_finite() {
            push(Location::Param(name.clone()), format!("value {value} is not finite"));
        }
    }

    for (name, q) in &spec.species {
        if q.max_level == 0 {
            push(Location::Species(name.clone()), "maximum level must be at least 1".into());
        }
        if q.init_level > q.max_level {
            push(
                Location::Species(name.clone()),
                format!("initial level {} exceeds maximum level {}", q.init_level, q.max_level),
            );
        }
        if !spec.components.contains_key(name) {
            push(Location::Species(name.clone()), "no component definition".into());
        }
    }

    for (name, comp) in &spec.components {
        let loc = || Location::Component(name.clone());
        if comp.name != *name {
            push(loc(), format!("definition is keyed as `{name}` but named `{}`", comp.name));
        }
        if comp.terms.is_empty() {
            push(loc(), "definition has no prefix terms".into());
        }
        let mut roles: BTreeMap<&str, Vec<RoleOp>> = BTreeMap::new();
        for term in &comp.terms {
            if term.stoich == 0 {
                push(loc(), format!("stoichiometry of `{}` must be at least 1", term.action));
            }
            roles.entry(&term.action).or_default().push(term.role);
        }
        for (action, rs) in roles {
            if rs.len() > 1 {
                let listed: Vec<String> = rs.iter().map(|r| format!("{r:?}").to_lowercase()).collect();
                push(
                    loc(),
                    format!("takes part in `{action}` more than once ({})", listed.join(", ")),
                );
            }
        }
        if !spec.species.contains_key(name) {
            push(loc(), "no species quantity declared".into());
        }
    }

    // Initial process.
    let mut seen = BTreeSet::new();
    for leaf in spec.system.leaves() {
        let loc = || Location::Species(leaf.species.clone());
        if !seen.insert(leaf.species.as_str()) {
            push(Location::System, format!("species `{}` appears more than once", leaf.species));
        }
        if !spec.components.contains_key(&leaf.species) {
            push(loc(), "used in the system but never defined".into());
        }
        if let Some(q) = spec.species.get(&leaf.species) {
            if q.init_level != leaf.level {
                push(
                    loc(),
                    format!(
                        "system starts at level {} but the quantity declares {}",
                        leaf.level, q.init_level
                    ),
                );
            }
            if leaf.level > q.max_level {
                push(
                    loc(),
                    format!("initial level {} exceeds maximum level {}", leaf.level, q.max_level),
                );
            }
        }
    }
    for name in spec.components.keys() {
        if !seen.contains(name.as_str()) {
            push(Location::Component(name.clone()), "not part of the system".into());
        }
    }

    let actions = spec.actions();
    let action_set: BTreeSet<&str> = actions.iter().map(String::as_str).collect();

    // Cooperation sets.
    spec.system.visit_coops(&mut |left, right, set| {
        let performs = |tree: &ProcessTree<InitialLeaf>, action: &str| {
            tree.leaves().iter().any(|l| {
                spec.components
                    .get(&l.species)
                    .is_some_and(|c| c.term(action).is_some())
            })
        };
        for action in set {
            if !action_set.contains(action.as_str()) {
                push(
                    Location::Action(action.clone()),
                    "unknown action in cooperation set".into(),
                );
            } else if !(performs(left, action) && performs(right, action)) {
                push(
                    Location::Action(action.clone()),
                    "in a cooperation set but not performed on both sides".into(),
                );
            }
        }
        for action in &actions {
            if !set.contains(action) && performs(left, action) && performs(right, action) {
                push(
                    Location::Action(action.clone()),
                    "performed on both sides of a cooperation but missing from its set".into(),
                );
            }
        }
    });

    // Rates.
    let species_names: BTreeSet<&str> = spec.species_order_ref();
    for action in &actions {
        let loc = || Location::Action(action.clone());
        match spec.rates.get(action) {
            None => push(loc(), "no functional rate".into()),
            Some(RateLaw::MassAction(k)) => {
                if !spec.params.contains_key(k) {
                    push(loc(), format!("mass-action constant `{k}` is not a parameter"));
                }
            }
            Some(RateLaw::Expr(e)) => {
                for name in e.names() {
                    if spec.params.contains_key(&name) {
                        continue;
                    }
                    if species_names.contains(name.as_str()) {
                        let takes_part = spec
                            .components
                            .get(&name)
                            .is_some_and(|c| c.term(action).is_some());
                        if !takes_part {
                            push(loc(), format!("rate reads `{name}`, which does not take part"));
                        }
                    } else {
                        push(loc(), format!("rate refers to unknown name `{name}`"));
                    }
                }
            }
        }
        match spec.delays.get(action) {
            None => push(loc(), "no delay".into()),
            Some(d) if !(d.is_finite() && *d >= 0.0) => {
                push(loc(), format!("delay must be a nonnegative real, got {d}"))
            }
            Some(_) => {}
        }
    }
    for action in spec.rates.keys() {
        if !action_set.contains(action.as_str()) {
            push(Location::Action(action.clone()), "rate given for an unused action".into());
        }
    }
    for action in spec.delays.keys() {
        if !action_set.contains(action.as_str()) {
            push(Location::Action(action.clone()), "delay given for an unused action".into());
        }
    }

    for (species, expr) in &spec.histories {
        if !spec.species.contains_key(species) {
            push(Location::History(species.clone()), "unknown species".into());
        }
        for name in expr.names() {
            if name != "t" && !spec.params.contains_key(&name) {
                push(
                    Location::History(species.clone()),
                    format!("history may only use parameters and `t`, found `{name}`"),
                );
            }
        }
    }

    out
}

impl SystemSpec {
    fn species_order_ref(&self) -> BTreeSet<&str> {
        self.system.leaves().into_iter().map(|l| l.species.as_str()).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ModelError {
    #[error("species `{species}` is both reactant and product of `{action}`")]
    DualRole { species: String, action: String },
    #[error("no functional rate for action `{0}`")]
    MissingRate(String),
    #[error("rate of `{action}`: {source}")]
    Binding {
        action: String,
        #[source]
        source: EvalError,
    },
    #[error("rate of `{action}` evaluated to {value}")]
    BadRate { action: String, value: f64 },
}

/// Species x actions matrix of net level changes.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct StoichiometryMatrix {
    pub species: Vec<String>,
    pub actions: Vec<String>,
    /// Row-major, `entries[species][action]`.
    pub entries: Vec<Vec<i64>>,
}

impl StoichiometryMatrix {
    pub fn get(&self, species: &str, action: &str) -> Option<i64> {
        let i = self.species.iter().position(|s| s == species)?;
        let j = self.actions.iter().position(|a| a == action)?;
        Some(self.entries[i][j])
    }

    pub fn column(&self, j: usize) -> Vec<i64> {
        self.entries.iter().map(|row| row[j]).collect()
    }
}

pub fn stoichiometry_matrix(spec: &SystemSpec) -> Result<StoichiometryMatrix, ModelError> {
    let species = spec.species_order();
    let actions = spec.actions();
    let mut entries = vec![vec![0i64; actions.len()]; species.len()];
    for (i, s) in species.iter().enumerate() {
        let Some(comp) = spec.components.get(s) else { continue };
        for (j, a) in actions.iter().enumerate() {
            let mut reactant = false;
            let mut product = false;
            for term in comp.terms.iter().filter(|t| &t.action == a) {
                let k = i64::from(term.stoich);
                match term.role {
                    RoleOp::Reactant => {
                        reactant = true;
                        entries[i][j] -= k;
                    }
                    RoleOp::Product => {
                        product = true;
                        entries[i][j] += k;
                    }
                    _ => {}
                }
            }
            if reactant && product {
                return Err(ModelError::DualRole {
                    species: s.clone(),
                    action: a.clone(),
                });
            }
        }
    }
    Ok(StoichiometryMatrix {
        species,
        actions,
        entries,
    })
}

/// `[S : op(l, k)]`: one participant of a starting or completing action.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RateEntry {
    pub species: String,
    pub role: RoleOp,
    pub level: u32,
    pub stoich: u32,
}

/// The list `w` exhibited by start and completion derivations.
#[derive(Debug, Clone, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct RateContext(pub Vec<RateEntry>);

impl RateContext {
    pub fn single(entry: RateEntry) -> Self {
        RateContext(vec![entry])
    }

    /// `w1 @ w2`.
    pub fn concat(mut self, other: RateContext) -> Self {
        self.0.extend(other.0);
        self
    }

    pub fn entries(&self) -> &[RateEntry] {
        &self.0
    }

    fn level_of(&self, species: &str) -> Option<u32> {
        self.0.iter().find(|e| e.species == species).map(|e| e.level)
    }
}

/// `x^k` with the exact value for `k = 1`.
fn pow_stoich(x: f64, k: u32) -> f64 {
    if k == 1 {
        x
    } else {
        x.powi(k as i32)
    }
}

/// Rate of `action` for the participants in `ctx`: the functional rate
/// evaluated at concentrations `level * h`, divided by `h`.
///
/// Returns `Ok(0.0)` when the action cannot fire (e.g. an exhausted reactant
/// under mass action); negative and non-finite values are errors.
pub fn eval_rate(action: &str, ctx: &RateContext, spec: &SystemSpec) -> Result<f64, ModelError> {
    let h = spec.step;
    let law = spec
        .rates
        .get(action)
        .ok_or_else(|| ModelError::MissingRate(action.to_string()))?;
    let value = match law {
        RateLaw::MassAction(k) => {
            let k = *spec.params.get(k).ok_or_else(|| ModelError::Binding {
                action: action.to_string(),
                source: EvalError::Unbound(k.clone()),
            })?;
            let mut product = 1.0;
            for e in ctx.entries() {
                if matches!(e.role, RoleOp::Reactant | RoleOp::Activator) {
                    product *= pow_stoich(f64::from(e.level) * h, e.stoich);
                }
            }
            k * product / h
        }
        RateLaw::Expr(expr) => {
            let lookup = |name: &str| {
                spec.params
                    .get(name)
                    .copied()
                    .or_else(|| ctx.level_of(name).map(|l| f64::from(l) * h))
            };
            expr.eval(&lookup).map_err(|source| ModelError::Binding {
                action: action.to_string(),
                source,
            })? / h
        }
    };
    check_rate(action, value)
}

fn check_rate(action: &str, value: f64) -> Result<f64, ModelError> {
    if value.is_finite() && value >= 0.0 {
        Ok(value)
    } else {
        Err(ModelError::BadRate {
            action: action.to_string(),
            value,
        })
    }
}

#[derive(Debug, Clone)]
enum Compiled {
    Num(f64),
    Species(usize),
    Neg(Box<Compiled>),
    Bin(crate::expr::BinOp, Box<Compiled>, Box<Compiled>),
}

impl Compiled {
    fn eval(&self, conc: &dyn Fn(usize) -> f64) -> f64 {
        match self {
            Compiled::Num(v) => *v,
            Compiled::Species(i) => conc(*i),
            Compiled::Neg(a) => -a.eval(conc),
            Compiled::Bin(op, l, r) => op.apply(l.eval(conc), r.eval(conc)),
        }
    }
}

/// A functional rate with names resolved to species indices (in
/// [`SystemSpec::species_order`]) and parameter values. Evaluates to the same
/// value as [`eval_rate`] on the equivalent context.
#[derive(Debug, Clone)]
pub struct CompiledRate {
    action: String,
    h: f64,
    law: CompiledLaw,
}

#[derive(Debug, Clone)]
enum CompiledLaw {
    MassAction { k: f64, factors: Vec<(usize, u32)> },
    Expr(Compiled),
}

impl CompiledRate {
    pub fn new(action: &str, spec: &SystemSpec) -> Result<Self, ModelError> {
        let order = spec.species_order();
        let index = |s: &str| order.iter().position(|o| o == s);
        let unbound = |name: &str| ModelError::Binding {
            action: action.to_string(),
            source: EvalError::Unbound(name.to_string()),
        };
        let law = match spec
            .rates
            .get(action)
            .ok_or_else(|| ModelError::MissingRate(action.to_string()))?
        {
            RateLaw::MassAction(k) => {
                let k = *spec.params.get(k).ok_or_else(|| unbound(k))?;
                let factors = spec
                    .participants(action)
                    .into_iter()
                    .filter(|(_, t)| matches!(t.role, RoleOp::Reactant | RoleOp::Activator))
                    .map(|(s, t)| (index(&s).expect("participant is a leaf"), t.stoich))
                    .collect();
                CompiledLaw::MassAction { k, factors }
            }
            RateLaw::Expr(e) => {
                fn compile(
                    e: &Expr,
                    spec: &SystemSpec,
                    index: &dyn Fn(&str) -> Option<usize>,
                    unbound: &dyn Fn(&str) -> ModelError,
                ) -> Result<Compiled, ModelError> {
                    Ok(match e {
                        Expr::Num(v) => Compiled::Num(*v),
                        Expr::Var(name) => match spec.params.get(name) {
                            Some(v) => Compiled::Num(*v),
                            None => Compiled::Species(index(name).ok_or_else(|| unbound(name))?),
                        },
                        Expr::Neg(a) => Compiled::Neg(Box::new(compile(a, spec, index, unbound)?)),
                        Expr::Bin(op, l, r) => Compiled::Bin(
                            *op,
                            Box::new(compile(l, spec, index, unbound)?),
                            Box::new(compile(r, spec, index, unbound)?),
                        ),
                    })
                }
                CompiledLaw::Expr(compile(e, spec, &index, &unbound)?)
            }
        };
        Ok(CompiledRate {
            action: action.to_string(),
            h: spec.step,
            law,
        })
    }

    /// Rate given the level of every species (indexed in species order).
    pub fn eval(&self, levels: &[u32]) -> Result<f64, ModelError> {
        let h = self.h;
        let value = match &self.law {
            CompiledLaw::MassAction { k, factors } => {
                let mut product = 1.0;
                for &(i, stoich) in factors {
                    product *= pow_stoich(f64::from(levels[i]) * h, stoich);
                }
                k * product / h
            }
            CompiledLaw::Expr(c) => c.eval(&|i| f64::from(levels[i]) * h) / h,
        };
        check_rate(&self.action, value)
    }
}
