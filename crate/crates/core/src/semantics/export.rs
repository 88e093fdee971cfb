//! DOT and JSON renderings of an SLTS.

use std::fmt::Write;

use serde::{Deserialize, Serialize};

use super::{explore::Slts, levels, pending_instances, Phase, SpeciesState, Truncation};
use crate::model::SystemSpec;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StateRecord {
    pub id: usize,
    pub label: String,
    pub levels: Vec<u32>,
    pub pending: usize,
    pub configuration: String,
    pub leaves: Vec<SpeciesState>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EdgeRecord {
    pub source: usize,
    pub target: usize,
    pub action: String,
    pub phase: Phase,
    pub rate: f64,
    pub delay: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SltsDocument {
    pub species: Vec<String>,
    pub initial: usize,
    pub states: Vec<StateRecord>,
    pub edges: Vec<EdgeRecord>,
    pub truncated: Option<Truncation>,
}

impl SltsDocument {
    pub fn new(slts: &Slts, spec: &SystemSpec) -> Self {
        let states = slts
            .states
            .iter()
            .enumerate()
            .map(|(id, cfg)| StateRecord {
                id,
                label: slts.state_label(id, spec),
                levels: levels(cfg),
                pending: pending_instances(cfg, spec),
                configuration: cfg.to_string(),
                leaves: cfg.leaves().into_iter().cloned().collect(),
            })
            .collect();
        let edges = slts
            .edges
            .iter()
            .map(|e| EdgeRecord {
                source: e.source,
                target: e.target,
                action: e.label.action.clone(),
                phase: e.label.phase,
                rate: e.label.rate,
                delay: e.label.delay,
            })
            .collect();
        SltsDocument {
            species: spec.species_order(),
            initial: 0,
            states,
            edges,
            truncated: slts.truncated.clone(),
        }
    }
}

pub fn to_json(slts: &Slts, spec: &SystemSpec) -> String {
    serde_json::to_string_pretty(&SltsDocument::new(slts, spec)).expect("SLTS serializes")
}

/// Start edges are solid, completion edges dashed with an empty arrowhead.
pub fn to_dot(slts: &Slts, spec: &SystemSpec) -> String {
    let mut out = String::from("digraph slts {\n  rankdir=TB;\n  node [shape=box];\n");
    for id in 0..slts.states.len() {
        let _ = writeln!(out, "  s{id} [label=\"{}\"];", slts.state_label(id, spec));
    }
    for e in &slts.edges {
        let (sign, style) = match e.label.phase {
            Phase::Start => ("+", "style=solid"),
            Phase::Complete => ("-", "style=dashed, arrowhead=empty"),
        };
        let _ = writeln!(
            out,
            "  s{} -> s{} [label=\"{}{} ({}, {})\", {}];",
            e.source, e.target, e.label.action, sign, e.label.rate, e.label.delay, style
        );
    }
    if let Some(t) = &slts.truncated {
        let _ = writeln!(out, "  // truncated: {t}");
    }
    out.push_str("}\n");
    out
}

#[cfg(test)]
mod tests {
    use super::super::{explore, ExploreOptions};
    use super::*;
    use crate::parser::{parse_model, ModelSource};

    fn toy() -> SystemSpec {
        let text = "param k = 0.5; rate alpha = MA(k); delay alpha = 2;
            species A : max = 4, init = 3; species B : max = 4, init = 0;
            A = (alpha,1) << A; B = (alpha,1) >> B;
            system A[3] <alpha> B[0];";
        parse_model(&ModelSource::inline("toy", text)).unwrap().spec
    }

    #[test]
    fn dot_styles_follow_phase() {
        let spec = toy();
        let slts = explore(&spec, &ExploreOptions::default()).unwrap();
        let dot = to_dot(&slts, &spec);
        assert!(dot.contains("label=\"(3,0):0\""));
        assert_eq!(dot.matches("style=solid").count(), 6);
        assert_eq!(dot.matches("style=dashed, arrowhead=empty").count(), 6);
    }

    #[test]
    fn json_round_trip() {
        let spec = toy();
        let slts = explore(&spec, &ExploreOptions::default()).unwrap();
        let doc: SltsDocument = serde_json::from_str(&to_json(&slts, &spec)).unwrap();
        assert_eq!(doc, SltsDocument::new(&slts, &spec));
        assert_eq!(doc.states.len(), 10);
        assert_eq!(doc.states[1].leaves[0].schedule.len(), 1);
    }
}
