//! Breadth-first construction of the stochastic labelled transition system.

use std::collections::HashMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{
    levels, mu, pending_instances, stochastic_transitions, CapacityRule, Phase,
    ProcessConfiguration, SemanticsError, SpeciesState, TransitionLabel,
};
use crate::model::{ProcessTree, SystemSpec};

/// When two configurations count as the same SLTS state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum StateIdentity {
    /// Element-wise comparison, except that the stored start level of an
    /// entry is ignored when that species cannot influence the action's
    /// rate. Both configurations then have identical futures.
    #[default]
    Reduced,
    /// Element-wise comparison of every schedule entry.
    Structural,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ExploreOptions {
    pub max_states: usize,
    pub max_pending_per_species: usize,
    pub capacity: CapacityRule,
    pub identity: StateIdentity,
}

impl Default for ExploreOptions {
    fn default() -> Self {
        ExploreOptions {
            max_states: 1_000_000,
            max_pending_per_species: 64,
            capacity: CapacityRule::Strict,
            identity: StateIdentity::Reduced,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "kind")]
pub enum Truncation {
    MaxStates { limit: usize },
    MaxPending { species: String, action: String, limit: usize },
}

impl std::fmt::Display for Truncation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Truncation::MaxStates { limit } => write!(f, "state limit {limit} reached"),
            Truncation::MaxPending {
                species,
                action,
                limit,
            } => write!(
                f,
                "schedule of `{species}` exceeded {limit} entries (action `{action}` starts without consuming levels)"
            ),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SltsEdge {
    pub source: usize,
    pub target: usize,
    pub label: TransitionLabel,
}

/// States are numbered in discovery order; state 0 is the initial one.
#[derive(Debug, Clone, PartialEq)]
pub struct Slts {
    pub states: Vec<ProcessConfiguration>,
    pub edges: Vec<SltsEdge>,
    pub truncated: Option<Truncation>,
}

impl Slts {
    /// `(levels):pending` of a state.
    pub fn state_label(&self, id: usize, spec: &SystemSpec) -> String {
        let cfg = &self.states[id];
        let lv: Vec<String> = levels(cfg).iter().map(u32::to_string).collect();
        format!("({}):{}", lv.join(","), pending_instances(cfg, spec))
    }

    pub fn count(&self, phase: Phase) -> usize {
        self.edges.iter().filter(|e| e.label.phase == phase).count()
    }
}

fn state_key(cfg: &ProcessConfiguration, spec: &SystemSpec, identity: StateIdentity) -> ProcessConfiguration {
    match identity {
        StateIdentity::Structural => cfg.clone(),
        StateIdentity::Reduced => cfg.map_leaves(&mut |leaf: &SpeciesState| {
            let mut leaf = leaf.clone();
            for e in &mut leaf.schedule {
                if !spec.rate_reads(&e.action, &leaf.species) {
                    e.level = u32::MAX;
                }
            }
            leaf
        }),
    }
}

fn overfull(cfg: &ProcessConfiguration, limit: usize) -> Option<(String, String)> {
    let mut found = None;
    cfg.visit_leaves(&mut |leaf: &SpeciesState| {
        if found.is_none() && leaf.schedule.len() > limit {
            let action = leaf.schedule.last().map(|e| e.action.clone()).unwrap_or_default();
            found = Some((leaf.species.clone(), action));
        }
    });
    found
}

/// Explores every configuration reachable from `mu` of the initial process.
///
/// Each frontier is expanded in parallel; successors are then numbered
/// sequentially in frontier order, so the result does not depend on the
/// number of worker threads.
pub fn explore(spec: &SystemSpec, opts: &ExploreOptions) -> Result<Slts, SemanticsError> {
    let init = mu(&spec.system);
    let mut index: HashMap<ProcessConfiguration, usize> = HashMap::new();
    index.insert(state_key(&init, spec, opts.identity), 0);
    let mut states = vec![init];
    let mut edges: Vec<SltsEdge> = Vec::new();
    let mut truncated = None;
    let mut frontier = vec![0usize];

    'bfs: while !frontier.is_empty() {
        let expanded: Vec<Result<Vec<_>, SemanticsError>> = frontier
            .par_iter()
            .map(|&id| stochastic_transitions(&states[id], spec, opts.capacity))
            .collect();
        let mut next = Vec::new();
        for (&source, succ) in frontier.iter().zip(expanded) {
            for (label, target_cfg) in succ? {
                if let Some((species, action)) = overfull(&target_cfg, opts.max_pending_per_species) {
                    truncated.get_or_insert(Truncation::MaxPending {
                        species,
                        action,
                        limit: opts.max_pending_per_species,
                    });
                    continue;
                }
                let key = state_key(&target_cfg, spec, opts.identity);
                let target = match index.get(&key) {
                    Some(&t) => t,
                    None => {
                        if states.len() >= opts.max_states {
                            truncated = Some(Truncation::MaxStates {
                                limit: opts.max_states,
                            });
                            break 'bfs;
                        }
                        let t = states.len();
                        index.insert(key, t);
                        states.push(target_cfg);
                        next.push(t);
                        t
                    }
                };
                edges.push(SltsEdge {
                    source,
                    target,
                    label,
                });
            }
        }
        frontier = next;
    }

    edges.sort_by(|a, b| {
        (a.source, a.target, &a.label.action, a.label.phase)
            .cmp(&(b.source, b.target, &b.label.action, b.label.phase))
            .then(a.label.rate.total_cmp(&b.label.rate))
    });
    edges.dedup_by(|a, b| {
        a.source == b.source
            && a.target == b.target
            && a.label.action == b.label.action
            && a.label.phase == b.label.phase
            && a.label.rate == b.label.rate
    });
    Ok(Slts {
        states,
        edges,
        truncated,
    })
}

impl ProcessTree<SpeciesState> {
    /// The leaf of `species`, if present.
    pub fn leaf(&self, species: &str) -> Option<&SpeciesState> {
        self.leaves().into_iter().find(|l| l.species == species)
    }
}
