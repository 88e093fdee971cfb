//! Starting-Terminating operational semantics.
//!
//! A configuration is the initial process with a level and a FIFO schedule
//! list on every species leaf. The start relation consumes reactant levels
//! and appends one entry per participant; the completion relation pops the
//! oldest entry of an action from every participant and credits products.
//! The stochastic relation labels both with the action's rate and delay.

mod explore;
mod export;

pub use explore::{explore, ExploreOptions, Slts, SltsEdge, StateIdentity, Truncation};
pub use export::{to_dot, to_json, SltsDocument};

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{
    eval_rate, fmt_tree, InitialLeaf, ModelError, ProcessTree, RateContext, RateEntry, RoleOp,
    SystemSpec,
};

/// `(l, k, action, op)`: `k` levels of the species are held by a running
/// instance of `action` that started when the species was at level `l`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ScheduleEntry {
    pub level: u32,
    pub stoich: u32,
    pub action: String,
    pub role: RoleOp,
}

/// Leaf of a configuration, `S(l, L)`.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct SpeciesState {
    pub species: String,
    pub level: u32,
    pub schedule: Vec<ScheduleEntry>,
}

pub type ProcessConfiguration = ProcessTree<SpeciesState>;

impl fmt::Display for ScheduleEntry {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "({},{},{},{})", self.level, self.stoich, self.action, self.role)
    }
}

impl fmt::Display for ProcessTree<SpeciesState> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt_tree(self, f, &|leaf, f| {
            let entries: Vec<String> = leaf.schedule.iter().map(ToString::to_string).collect();
            write!(f, "{}({}, [{}])", leaf.species, leaf.level, entries.join(","))
        })
    }
}

/// How the product side of the start rule bounds pending levels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CapacityRule {
    /// `l + rho(pi L) + k <= N`: completions can never push a level past `N`.
    #[default]
    Strict,
    /// `0 <= l + rho(pi L) <= N`, exactly as the rule is usually written.
    Literal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    Start,
    Complete,
}

/// Edge label of the stochastic relation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TransitionLabel {
    pub action: String,
    pub phase: Phase,
    pub rate: f64,
    pub delay: f64,
    pub ctx: RateContext,
}

/// One derivation of the start or completion relation.
#[derive(Debug, Clone, PartialEq)]
pub struct Derivation {
    pub action: String,
    pub ctx: RateContext,
    pub target: ProcessConfiguration,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SemanticsError {
    #[error("action `{action}`: {source}")]
    Rate {
        action: String,
        #[source]
        source: ModelError,
    },
    #[error("action `{0}` is pending on one side of a synchronisation but not the other")]
    InconsistentSchedule(String),
}

/// `mu`: attaches an empty schedule to every leaf.
pub fn mu(process: &ProcessTree<InitialLeaf>) -> ProcessConfiguration {
    process.map_leaves(&mut |leaf| SpeciesState {
        species: leaf.species.clone(),
        level: leaf.level,
        schedule: Vec::new(),
    })
}

/// `phi`: the first entry of `action`, scanning left to right.
pub fn phi<'a>(action: &str, list: &'a [ScheduleEntry]) -> Option<&'a ScheduleEntry> {
    list.iter().find(|e| e.action == action)
}

/// `zeta`: the list without its first entry of `action`.
pub fn zeta(action: &str, list: &[ScheduleEntry]) -> Vec<ScheduleEntry> {
    let mut out = list.to_vec();
    if let Some(i) = out.iter().position(|e| e.action == action) {
        out.remove(i);
    }
    out
}

/// `pi`: entries in which the species takes part as a product.
pub fn pi_products(list: &[ScheduleEntry]) -> Vec<ScheduleEntry> {
    list.iter().filter(|e| e.role == RoleOp::Product).cloned().collect()
}

/// `rho`: total levels held by the entries.
pub fn rho_levels(list: &[ScheduleEntry]) -> u64 {
    list.iter().map(|e| u64::from(e.stoich)).sum()
}

fn pending_products(list: &[ScheduleEntry]) -> u64 {
    list.iter()
        .filter(|e| e.role == RoleOp::Product)
        .map(|e| u64::from(e.stoich))
        .sum()
}

type Partial = (RateContext, ProcessConfiguration);

/// Combines leaf derivations through cooperation nodes: synchronised actions
/// need a derivation on both sides, others proceed on exactly one.
fn derive(
    tree: &ProcessConfiguration,
    action: &str,
    leaf_rule: &dyn Fn(&SpeciesState) -> Option<Partial>,
) -> Result<Vec<Partial>, SemanticsError> {
    match tree {
        ProcessTree::Leaf(s) => Ok(leaf_rule(s).into_iter().collect()),
        ProcessTree::Coop {
            left,
            right,
            actions,
        } => {
            let lhs = derive(left, action, leaf_rule)?;
            let rhs = derive(right, action, leaf_rule)?;
            let rebuild = |l: ProcessConfiguration, r: ProcessConfiguration| ProcessTree::Coop {
                left: Box::new(l),
                right: Box::new(r),
                actions: actions.clone(),
            };
            let mut out = Vec::new();
            if actions.contains(action) {
                for (w1, l) in &lhs {
                    for (w2, r) in &rhs {
                        out.push((w1.clone().concat(w2.clone()), rebuild(l.clone(), r.clone())));
                    }
                }
            } else {
                for (w, l) in lhs {
                    out.push((w, rebuild(l, right.as_ref().clone())));
                }
                for (w, r) in rhs {
                    out.push((w, rebuild(left.as_ref().clone(), r)));
                }
            }
            Ok(out)
        }
    }
}

fn start_leaf(
    s: &SpeciesState,
    action: &str,
    spec: &SystemSpec,
    capacity: CapacityRule,
) -> Option<Partial> {
    let term = spec.components.get(&s.species)?.term(action)?;
    let max = spec.max_level(&s.species);
    let (l, k) = (s.level, term.stoich);
    let enabled = match term.role {
        RoleOp::Reactant | RoleOp::Activator => k <= l && l <= max,
        RoleOp::Modifier | RoleOp::Inhibitor => 1 <= l && l <= max,
        RoleOp::Product => {
            let held = u64::from(l) + pending_products(&s.schedule);
            match capacity {
                CapacityRule::Strict => held + u64::from(k) <= u64::from(max),
                CapacityRule::Literal => held <= u64::from(max),
            }
        }
    };
    if !enabled {
        return None;
    }
    let mut schedule = s.schedule.clone();
    schedule.push(ScheduleEntry {
        level: l,
        stoich: k,
        action: action.to_string(),
        role: term.role,
    });
    let level = if term.role == RoleOp::Reactant { l - k } else { l };
    let ctx = RateContext::single(RateEntry {
        species: s.species.clone(),
        role: term.role,
        level: l,
        stoich: k,
    });
    Some((
        ctx,
        ProcessTree::Leaf(SpeciesState {
            species: s.species.clone(),
            level,
            schedule,
        }),
    ))
}

fn complete_leaf(s: &SpeciesState, action: &str) -> Option<Partial> {
    let entry = phi(action, &s.schedule)?;
    let level = if entry.role == RoleOp::Product {
        s.level + entry.stoich
    } else {
        s.level
    };
    let ctx = RateContext::single(RateEntry {
        species: s.species.clone(),
        role: entry.role,
        level: entry.level,
        stoich: entry.stoich,
    });
    Some((
        ctx,
        ProcessTree::Leaf(SpeciesState {
            species: s.species.clone(),
            level,
            schedule: zeta(action, &s.schedule),
        }),
    ))
}

/// Every derivable `action+`, in action order.
pub fn start_transitions(
    cfg: &ProcessConfiguration,
    spec: &SystemSpec,
    capacity: CapacityRule,
) -> Vec<Derivation> {
    let mut out = Vec::new();
    for action in spec.actions() {
        let rule = |s: &SpeciesState| start_leaf(s, &action, spec, capacity);
        let found = derive(cfg, &action, &rule).expect("start derivations cannot fail");
        out.extend(found.into_iter().map(|(ctx, target)| Derivation {
            action: action.clone(),
            ctx,
            target,
        }));
    }
    out
}

/// Every derivable `action-`, in action order.
pub fn completion_transitions(
    cfg: &ProcessConfiguration,
    spec: &SystemSpec,
) -> Result<Vec<Derivation>, SemanticsError> {
    let mut out = Vec::new();
    for action in spec.actions() {
        check_pending_consistency(cfg, &action)?;
        let rule = |s: &SpeciesState| complete_leaf(s, &action);
        let found = derive(cfg, &action, &rule)?;
        out.extend(found.into_iter().map(|(ctx, target)| Derivation {
            action: action.clone(),
            ctx,
            target,
        }));
    }
    Ok(out)
}

/// Under a synchronisation on `action`, both sides must hold the same
/// number of pending instances.
fn check_pending_consistency(tree: &ProcessConfiguration, action: &str) -> Result<(), SemanticsError> {
    if let ProcessTree::Coop {
        left,
        right,
        actions,
    } = tree
    {
        if actions.contains(action) && instances(left, action) != instances(right, action) {
            return Err(SemanticsError::InconsistentSchedule(action.to_string()));
        }
        check_pending_consistency(left, action)?;
        check_pending_consistency(right, action)?;
    }
    Ok(())
}

/// Running instances of `action`: one entry per participant, counted once
/// per synchronised group.
fn instances(tree: &ProcessConfiguration, action: &str) -> usize {
    match tree {
        ProcessTree::Leaf(s) => s.schedule.iter().filter(|e| e.action == action).count(),
        ProcessTree::Coop {
            left,
            right,
            actions,
        } => {
            let (l, r) = (instances(left, action), instances(right, action));
            if actions.contains(action) {
                l.max(r)
            } else {
                l + r
            }
        }
    }
}

/// Total number of running action instances in `cfg`.
pub fn pending_instances(cfg: &ProcessConfiguration, spec: &SystemSpec) -> usize {
    spec.actions().iter().map(|a| instances(cfg, a)).sum()
}

/// Species levels in leaf order.
pub fn levels(cfg: &ProcessConfiguration) -> Vec<u32> {
    cfg.leaves().iter().map(|l| l.level).collect()
}

/// The stochastic relation: completions first, then starts, each in action
/// order. Starts whose rate evaluates to zero cannot fire and are omitted.
pub fn stochastic_transitions(
    cfg: &ProcessConfiguration,
    spec: &SystemSpec,
    capacity: CapacityRule,
) -> Result<Vec<(TransitionLabel, ProcessConfiguration)>, SemanticsError> {
    let rate = |d: &Derivation| {
        eval_rate(&d.action, &d.ctx, spec).map_err(|source| SemanticsError::Rate {
            action: d.action.clone(),
            source,
        })
    };
    let mut out = Vec::new();
    for d in completion_transitions(cfg, spec)? {
        let r = rate(&d)?;
        out.push((label(&d, Phase::Complete, r, spec), d.target));
    }
    for d in start_transitions(cfg, spec, capacity) {
        let r = rate(&d)?;
        if r > 0.0 {
            out.push((label(&d, Phase::Start, r, spec), d.target));
        }
    }
    Ok(out)
}

fn label(d: &Derivation, phase: Phase, rate: f64, spec: &SystemSpec) -> TransitionLabel {
    TransitionLabel {
        action: d.action.clone(),
        phase,
        rate,
        delay: spec.delay(&d.action),
        ctx: d.ctx.clone(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::parser::{parse_model, ModelSource};

    pub(crate) fn toy_spec() -> SystemSpec {
        let text = "param k = 0.5; rate alpha = MA(k); delay alpha = 2;
            species A : max = 4, init = 3; species B : max = 4, init = 0;
            A = (alpha,1) << A; B = (alpha,1) >> B;
            system A[3] <alpha> B[0];";
        parse_model(&ModelSource::inline("toy", text)).unwrap().spec
    }

    fn e(level: u32, action: &str, role: RoleOp) -> ScheduleEntry {
        ScheduleEntry {
            level,
            stoich: 1,
            action: action.into(),
            role,
        }
    }

    fn toy_cfg(a: u32, la: &[u32], b: u32, lb: &[u32]) -> ProcessConfiguration {
        let leaf = |species: &str, level: u32, list: &[u32], role| {
            ProcessTree::Leaf(SpeciesState {
                species: species.into(),
                level,
                schedule: list.iter().map(|&l| e(l, "alpha", role)).collect(),
            })
        };
        ProcessTree::coop(
            leaf("A", a, la, RoleOp::Reactant),
            leaf("B", b, lb, RoleOp::Product),
            ["alpha".to_string()],
        )
    }

    #[test]
    fn mu_attaches_empty_schedules() {
        let spec = toy_spec();
        assert_eq!(mu(&spec.system), toy_cfg(3, &[], 0, &[]));
        let single = ProcessTree::Leaf(InitialLeaf { species: "S".into(), level: 0 });
        assert_eq!(
            mu(&single),
            ProcessTree::Leaf(SpeciesState { species: "S".into(), level: 0, schedule: vec![] })
        );
    }

    #[test]
    fn list_functions() {
        let r = RoleOp::Reactant;
        assert_eq!(phi("alpha", &[]), None);
        let l = [e(3, "alpha", r), e(2, "alpha", r)];
        assert_eq!(phi("alpha", &l), Some(&l[0]));
        assert_eq!(phi("beta", &l[..1]), None);

        assert_eq!(zeta("alpha", &[]), vec![]);
        assert_eq!(zeta("alpha", &l), vec![l[1].clone()]);
        assert_eq!(zeta("beta", &l[..1]), l[..1].to_vec());

        assert_eq!(pi_products(&[]), vec![]);
        let mixed = [e(0, "alpha", RoleOp::Product), e(2, "beta", RoleOp::Reactant)];
        assert_eq!(pi_products(&mixed), vec![mixed[0].clone()]);
        assert_eq!(pi_products(&l), vec![]);

        assert_eq!(rho_levels(&[]), 0);
        let mut two = e(0, "alpha", RoleOp::Product);
        two.stoich = 2;
        assert_eq!(rho_levels(&[two.clone(), e(1, "beta", RoleOp::Product)]), 3);
        two.stoich = 5;
        assert_eq!(rho_levels(&[two]), 5);
    }

    #[test]
    fn toy_start() {
        let spec = toy_spec();
        let starts = start_transitions(&toy_cfg(3, &[], 0, &[]), &spec, CapacityRule::Strict);
        assert_eq!(starts.len(), 1);
        assert_eq!(starts[0].target, toy_cfg(2, &[3], 0, &[0]));
        assert!(start_transitions(&toy_cfg(0, &[], 0, &[]), &spec, CapacityRule::Strict).is_empty());
    }

    #[test]
    fn product_capacity_rules() {
        // N_B = 2, B at level 1 with one pending product: l + rho(pi L) = 2.
        let mut spec = toy_spec();
        spec.species.get_mut("B").unwrap().max_level = 2;
        let cfg = toy_cfg(2, &[3], 1, &[0]);
        assert!(start_transitions(&cfg, &spec, CapacityRule::Strict).is_empty());
        assert_eq!(start_transitions(&cfg, &spec, CapacityRule::Literal).len(), 1);
        // One level of headroom lets the strict rule through.
        let cfg = toy_cfg(2, &[], 1, &[]);
        assert_eq!(start_transitions(&cfg, &spec, CapacityRule::Strict).len(), 1);
    }

    #[test]
    fn toy_completion() {
        let spec = toy_spec();
        let done = completion_transitions(&toy_cfg(2, &[3], 0, &[0]), &spec).unwrap();
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].target, toy_cfg(2, &[], 1, &[]));
        assert!(completion_transitions(&toy_cfg(3, &[], 0, &[]), &spec).unwrap().is_empty());
    }

    #[test]
    fn completion_consumes_oldest_entry() {
        let spec = toy_spec();
        let done = completion_transitions(&toy_cfg(1, &[3, 2], 0, &[0, 0]), &spec).unwrap();
        assert_eq!(done.len(), 1);
        assert_eq!(done[0].target, toy_cfg(1, &[2], 1, &[0]));
        assert_eq!(done[0].ctx.entries()[0].level, 3);
    }

    #[test]
    fn inconsistent_schedule_is_detected() {
        let spec = toy_spec();
        let err = completion_transitions(&toy_cfg(2, &[3], 0, &[]), &spec).unwrap_err();
        assert_eq!(err, SemanticsError::InconsistentSchedule("alpha".into()));
    }

    #[test]
    fn stochastic_labels() {
        let spec = toy_spec();
        let out = stochastic_transitions(&toy_cfg(2, &[3], 0, &[0]), &spec, CapacityRule::Strict)
            .unwrap();
        let labels: Vec<(Phase, f64, f64)> =
            out.iter().map(|(l, _)| (l.phase, l.rate, l.delay)).collect();
        // Completion recomputes the rate from the stored level 3; the start
        // uses the current level 2.
        assert_eq!(labels, vec![(Phase::Complete, 1.5, 2.0), (Phase::Start, 1.0, 2.0)]);
        let end = stochastic_transitions(&toy_cfg(0, &[], 3, &[]), &spec, CapacityRule::Strict)
            .unwrap();
        assert!(end.is_empty());
    }

    #[test]
    fn zero_delay_labels() {
        let mut spec = toy_spec();
        spec.delays.insert("alpha".into(), 0.0);
        let out = stochastic_transitions(&toy_cfg(2, &[3], 0, &[0]), &spec, CapacityRule::Strict)
            .unwrap();
        assert!(out.iter().all(|(l, _)| l.delay == 0.0));
    }

    #[test]
    fn unsynchronised_actions_interleave() {
        let text = "param k = 1; rate a = MA(k); delay a = 1;
            X = (a,1) << X; Y = (a,1) << Y;
            species X : max = 2, init = 1; species Y : max = 2, init = 1;
            system X[1] <> Y[1];";
        // Invalid as a model (shared action outside the set) but the
        // relations themselves still apply rule by rule.
        let spec = parse_model(&ModelSource::inline("t", text));
        assert!(spec.is_err());
    }

    #[test]
    fn display_configuration() {
        let cfg = toy_cfg(2, &[3], 0, &[0]);
        assert_eq!(cfg.to_string(), "A(2, [(3,1,alpha,<<)]) <alpha> B(0, [(0,1,alpha,>>)])");
    }
}
