//! Delay stochastic simulation, delay-as-duration.
//!
//! Reactants are removed when an action starts; its products are added once
//! its delay has elapsed. Pending completions live in a min-heap keyed by
//! `(completion time, insertion number)`. A drawn waiting time that would
//! overshoot the earliest pending completion is discarded and the completion
//! is applied instead.

use std::cmp::{Ordering, Reverse};
use std::collections::BinaryHeap;
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::model::{CompiledRate, ModelError, RoleOp, SystemSpec};
use crate::semantics::CapacityRule;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum DssaError {
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error("step {step} at t = {time}: {source}")]
    Step {
        step: u64,
        time: f64,
        #[source]
        source: ModelError,
    },
    #[error("run {run} (seed {seed}): {source}")]
    Run {
        run: usize,
        seed: u64,
        #[source]
        source: Box<DssaError>,
    },
    #[error("invalid argument: {0}")]
    Argument(String),
}

/// Seeded ChaCha8 stream with a draw counter.
#[derive(Debug, Clone)]
pub struct RngStream {
    rng: ChaCha8Rng,
    seed: u64,
    draws: u64,
}

impl RngStream {
    pub const ALGORITHM: &'static str = "chacha8";

    pub fn new(seed: u64) -> Self {
        RngStream {
            rng: ChaCha8Rng::seed_from_u64(seed),
            seed,
            draws: 0,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn draws(&self) -> u64 {
        self.draws
    }

    /// Uniform on `[0, 1)`.
    pub fn uniform(&mut self) -> f64 {
        self.draws += 1;
        self.rng.gen::<f64>()
    }

    /// Exponential with the given rate, by inverse transform.
    pub fn exponential(&mut self, rate: f64) -> f64 {
        -(1.0 - self.uniform()).ln() / rate
    }
}

/// Seed of run `index` in an ensemble: splitmix64 of the base seed offset by
/// the index.
pub fn run_seed(base: u64, index: u64) -> u64 {
    let mut z = base.wrapping_add(index.wrapping_add(1).wrapping_mul(0x9E37_79B9_7F4A_7C15));
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

#[derive(Debug, Clone, PartialEq)]
pub struct PendingEvent {
    pub completion_time: f64,
    pub seq: u64,
    pub action: usize,
    pub products: Vec<(usize, u32)>,
}

impl Eq for PendingEvent {}

impl Ord for PendingEvent {
    fn cmp(&self, other: &Self) -> Ordering {
        self.completion_time
            .total_cmp(&other.completion_time)
            .then(self.seq.cmp(&other.seq))
    }
}

impl PartialOrd for PendingEvent {
    fn partial_cmp(&self, other: &Self) -> Option<Ordering> {
        Some(self.cmp(other))
    }
}

#[derive(Debug, Clone)]
pub struct SimState {
    pub time: f64,
    pub counts: Vec<u32>,
    pending: BinaryHeap<Reverse<PendingEvent>>,
    seq: u64,
    /// Levels of each species promised by pending completions.
    in_flight: Vec<u32>,
}

impl SimState {
    pub fn pending_len(&self) -> usize {
        self.pending.len()
    }

    pub fn next_completion(&self) -> Option<&PendingEvent> {
        self.pending.peek().map(|r| &r.0)
    }

    pub fn in_flight(&self) -> &[u32] {
        &self.in_flight
    }
}

#[derive(Debug, Clone)]
struct Reaction {
    name: String,
    delay: f64,
    rate: CompiledRate,
    /// Levels needed to start: reactants and activators.
    required: Vec<(usize, u32)>,
    /// Modifiers and inhibitors, which need level at least 1.
    present: Vec<usize>,
    consumed: Vec<(usize, u32)>,
    produced: Vec<(usize, u32)>,
}

/// What a single step did.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Event {
    Start(usize),
    Complete(usize),
    /// A zero-delay action: start and completion at the same instant.
    StartComplete(usize),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepOutcome {
    pub event: Event,
    pub waiting_time: f64,
}

/// A compiled model ready for simulation.
#[derive(Debug, Clone)]
pub struct Simulator {
    species: Vec<String>,
    max_levels: Vec<u32>,
    init: Vec<u32>,
    reactions: Vec<Reaction>,
    capacity: CapacityRule,
    pub t0: f64,
}

impl Simulator {
    pub fn new(spec: &SystemSpec, capacity: CapacityRule) -> Result<Self, DssaError> {
        let species = spec.species_order();
        let index = |s: &str| species.iter().position(|o| o == s).expect("participant is a leaf");
        let mut reactions = Vec::new();
        for action in spec.actions() {
            let mut r = Reaction {
                name: action.clone(),
                delay: spec.delay(&action),
                rate: CompiledRate::new(&action, spec)?,
                required: Vec::new(),
                present: Vec::new(),
                consumed: Vec::new(),
                produced: Vec::new(),
            };
            for (s, term) in spec.participants(&action) {
                let i = index(&s);
                match term.role {
                    RoleOp::Reactant => {
                        r.required.push((i, term.stoich));
                        r.consumed.push((i, term.stoich));
                    }
                    RoleOp::Activator => r.required.push((i, term.stoich)),
                    RoleOp::Modifier | RoleOp::Inhibitor => r.present.push(i),
                    RoleOp::Product => r.produced.push((i, term.stoich)),
                }
            }
            reactions.push(r);
        }
        let leaves = spec.system.leaves();
        Ok(Simulator {
            max_levels: species.iter().map(|s| spec.max_level(s)).collect(),
            init: leaves.iter().map(|l| l.level).collect(),
            species,
            reactions,
            capacity,
            t0: 0.0,
        })
    }

    pub fn species(&self) -> &[String] {
        &self.species
    }

    pub fn action_names(&self) -> Vec<&str> {
        self.reactions.iter().map(|r| r.name.as_str()).collect()
    }

    pub fn initial_state(&self) -> SimState {
        SimState {
            time: self.t0,
            counts: self.init.clone(),
            pending: BinaryHeap::new(),
            seq: 0,
            in_flight: vec![0; self.species.len()],
        }
    }

    fn can_start(&self, r: &Reaction, state: &SimState) -> bool {
        let c = &state.counts;
        r.required.iter().all(|&(i, k)| k <= c[i])
            && r.present.iter().all(|&i| c[i] >= 1)
            && r.produced.iter().all(|&(i, k)| {
                let held = u64::from(c[i]) + u64::from(state.in_flight[i]);
                match self.capacity {
                    CapacityRule::Strict => held + u64::from(k) <= u64::from(self.max_levels[i]),
                    CapacityRule::Literal => held <= u64::from(self.max_levels[i]),
                }
            })
    }

    /// Rate of every action that may start now, zero for the others.
    pub fn propensities(&self, state: &SimState) -> Result<Vec<f64>, ModelError> {
        let mut out = Vec::with_capacity(self.reactions.len());
        for r in &self.reactions {
            out.push(if self.can_start(r, state) {
                r.rate.eval(&state.counts)?
            } else {
                0.0
            });
        }
        Ok(out)
    }

    /// Advances the state by one event; `None` once nothing is enabled and
    /// nothing is pending.
    pub fn step(&self, state: &mut SimState, rng: &mut RngStream) -> Result<Option<StepOutcome>, ModelError> {
        let a = self.propensities(state)?;
        let a0: f64 = a.iter().sum();
        if a0 == 0.0 && state.pending.is_empty() {
            return Ok(None);
        }
        let tau = if a0 > 0.0 { rng.exponential(a0) } else { f64::INFINITY };
        if let Some(next) = state.next_completion() {
            if next.completion_time <= state.time + tau {
                let Reverse(ev) = state.pending.pop().expect("peeked");
                let waiting_time = ev.completion_time - state.time;
                state.time = ev.completion_time;
                for &(i, k) in &ev.products {
                    state.counts[i] += k;
                    state.in_flight[i] -= k;
                }
                return Ok(Some(StepOutcome {
                    event: Event::Complete(ev.action),
                    waiting_time,
                }));
            }
        }
        state.time += tau;
        let j = select(&a, a0, rng.uniform());
        let r = &self.reactions[j];
        for &(i, k) in &r.consumed {
            state.counts[i] -= k;
        }
        let event = if r.delay == 0.0 {
            for &(i, k) in &r.produced {
                state.counts[i] += k;
            }
            Event::StartComplete(j)
        } else {
            for &(i, k) in &r.produced {
                state.in_flight[i] += k;
            }
            state.pending.push(Reverse(PendingEvent {
                completion_time: state.time + r.delay,
                seq: state.seq,
                action: j,
                products: r.produced.clone(),
            }));
            state.seq += 1;
            Event::Start(j)
        };
        Ok(Some(StepOutcome {
            event,
            waiting_time: tau,
        }))
    }

    /// Counts right after the start half of a zero-delay action.
    fn after_start(&self, counts: &[u32], action: usize) -> Vec<u32> {
        let mut out = counts.to_vec();
        for &(i, k) in &self.reactions[action].produced {
            out[i] -= k;
        }
        out
    }

    /// Runs until quiescence or until the next event would fall after
    /// `t_end`.
    pub fn simulate(&self, t_end: f64, seed: u64, recording: Recording) -> Result<Trajectory, DssaError> {
        if !(t_end >= self.t0) {
            return Err(DssaError::Argument(format!("t_end {t_end} precedes t0 {}", self.t0)));
        }
        if let Recording::Grid(dt) = recording {
            if !(dt > 0.0 && dt.is_finite()) {
                return Err(DssaError::Argument(format!("grid spacing {dt} must be positive")));
            }
        }
        let mut rng = RngStream::new(seed);
        let mut state = self.initial_state();
        let mut samples = Vec::new();
        let mut grid_next = 0u64;
        let grid_time = |i: u64, dt: f64| self.t0 + i as f64 * dt;
        let sample = |time, event, state: &SimState| Sample {
            time,
            event,
            counts: state.counts.clone(),
            pending: state.pending.len(),
        };
        if recording == Recording::AllEvents {
            samples.push(sample(self.t0, EventTag::Initial, &state));
        }
        let mut steps = 0u64;
        loop {
            let before = state.clone();
            let outcome = self.step(&mut state, &mut rng).map_err(|source| DssaError::Step {
                step: steps,
                time: before.time,
                source,
            })?;
            if let Recording::Grid(dt) = recording {
                let done = outcome.is_none() || state.time > t_end;
                loop {
                    let g = grid_time(grid_next, dt);
                    if g > t_end || !(done || g < state.time) {
                        break;
                    }
                    samples.push(sample(g, EventTag::Grid, &before));
                    grid_next += 1;
                }
            }
            let Some(out) = outcome else { break };
            if state.time > t_end {
                break;
            }
            steps += 1;
            if recording == Recording::AllEvents {
                match out.event {
                    Event::Start(j) => samples.push(sample(state.time, EventTag::Start(j), &state)),
                    Event::Complete(j) => {
                        samples.push(sample(state.time, EventTag::Complete(j), &state))
                    }
                    Event::StartComplete(j) => {
                        let mid = Sample {
                            time: state.time,
                            event: EventTag::Start(j),
                            counts: self.after_start(&state.counts, j),
                            pending: state.pending.len(),
                        };
                        samples.push(mid);
                        samples.push(sample(state.time, EventTag::Complete(j), &state));
                    }
                }
            }
        }
        Ok(Trajectory {
            species: self.species.clone(),
            actions: self.reactions.iter().map(|r| r.name.clone()).collect(),
            samples,
        })
    }

    /// Grid statistics over `runs` independent simulations.
    pub fn ensemble(&self, t_end: f64, runs: usize, base_seed: u64, dt: f64) -> Result<EnsembleStats, DssaError> {
        if runs == 0 {
            return Err(DssaError::Argument("runs must be at least 1".into()));
        }
        let trajectories: Vec<Trajectory> = (0..runs)
            .into_par_iter()
            .map(|i| {
                let seed = run_seed(base_seed, i as u64);
                self.simulate(t_end, seed, Recording::Grid(dt))
                    .map_err(|e| DssaError::Run {
                        run: i,
                        seed,
                        source: Box::new(e),
                    })
            })
            .collect::<Result<_, _>>()?;
        let times: Vec<f64> = trajectories[0].samples.iter().map(|s| s.time).collect();
        let n_species = self.species.len();
        let mut mean = vec![vec![0.0; n_species]; times.len()];
        let mut var = vec![vec![0.0; n_species]; times.len()];
        for (p, (m_row, v_row)) in mean.iter_mut().zip(var.iter_mut()).enumerate() {
            for s in 0..n_species {
                let values = trajectories.iter().map(|t| f64::from(t.samples[p].counts[s]));
                let (m, v) = mean_variance(values, runs);
                m_row[s] = m;
                v_row[s] = v;
            }
        }
        Ok(EnsembleStats {
            species: self.species.clone(),
            runs,
            times,
            mean,
            variance: var,
        })
    }
}

/// Index of the action selected by `u` in a linear scan of cumulative
/// propensities.
fn select(a: &[f64], a0: f64, u: f64) -> usize {
    let target = u * a0;
    let mut acc = 0.0;
    let mut last = 0;
    for (j, &aj) in a.iter().enumerate() {
        if aj > 0.0 {
            acc += aj;
            last = j;
            if target < acc {
                return j;
            }
        }
    }
    last
}

/// Neumaier-compensated sum.
#[derive(Debug, Clone, Copy, Default)]
struct Neumaier {
    sum: f64,
    c: f64,
}

impl Neumaier {
    fn add(&mut self, x: f64) {
        let t = self.sum + x;
        if self.sum.abs() >= x.abs() {
            self.c += (self.sum - t) + x;
        } else {
            self.c += (x - t) + self.sum;
        }
        self.sum = t;
    }

    fn value(&self) -> f64 {
        self.sum + self.c
    }
}

/// Mean and sample variance (zero for a single value).
fn mean_variance(values: impl Iterator<Item = f64> + Clone, n: usize) -> (f64, f64) {
    let mut s = Neumaier::default();
    for x in values.clone() {
        s.add(x);
    }
    let mean = s.value() / n as f64;
    if n < 2 {
        return (mean, 0.0);
    }
    let mut q = Neumaier::default();
    for x in values {
        q.add((x - mean) * (x - mean));
    }
    (mean, q.value() / (n - 1) as f64)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Recording {
    AllEvents,
    /// Counts at `t0 + i * dt`, taking the value after every event at or
    /// before each grid time.
    Grid(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EventTag {
    Initial,
    Start(usize),
    Complete(usize),
    Grid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Sample {
    pub time: f64,
    pub event: EventTag,
    pub counts: Vec<u32>,
    pub pending: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub species: Vec<String>,
    pub actions: Vec<String>,
    pub samples: Vec<Sample>,
}

impl Trajectory {
    pub fn event_name(&self, tag: EventTag) -> String {
        match tag {
            EventTag::Initial => "initial".into(),
            EventTag::Grid => "grid".into(),
            EventTag::Start(j) => format!("start({})", self.actions[j]),
            EventTag::Complete(j) => format!("complete({})", self.actions[j]),
        }
    }

    pub fn to_csv(&self) -> String {
        let mut out = format!("time,event,{}\n", self.species.join(","));
        for s in &self.samples {
            let _ = write!(out, "{},{}", s.time, self.event_name(s.event));
            for c in &s.counts {
                let _ = write!(out, ",{c}");
            }
            out.push('\n');
        }
        out
    }

    pub fn last(&self) -> &Sample {
        self.samples.last().expect("trajectory has an initial sample")
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnsembleStats {
    pub species: Vec<String>,
    pub runs: usize,
    pub times: Vec<f64>,
    /// `mean[time][species]`.
    pub mean: Vec<Vec<f64>>,
    pub variance: Vec<Vec<f64>>,
}

impl EnsembleStats {
    pub fn to_csv(&self) -> String {
        let mut out = String::from("time");
        for s in &self.species {
            let _ = write!(out, ",{s}_mean,{s}_var");
        }
        out.push('\n');
        for (p, t) in self.times.iter().enumerate() {
            let _ = write!(out, "{t}");
            for s in 0..self.species.len() {
                let _ = write!(out, ",{},{}", self.mean[p][s], self.variance[p][s]);
            }
            out.push('\n');
        }
        out
    }
}
