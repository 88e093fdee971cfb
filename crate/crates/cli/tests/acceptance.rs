//! Acceptance gate. Prints one PASS/FAIL line per criterion and exits
//! nonzero if any criterion fails. Tolerances are fixed here.

use std::collections::{BTreeMap, BTreeSet, VecDeque};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::time::{Duration, Instant};

use biopepad::dde::{derive_dde, solve_dde};
use biopepad::dssa::{Event, EventTag, Recording, RngStream, Simulator};
use biopepad::parser::ParsedModel;
use biopepad::semantics::{explore, CapacityRule, ExploreOptions, Phase};
use biopepad::{parse_model, serialize_model, ModelSource, SystemSpec};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const DDE_POINT_TOL: f64 = 1e-6;
const DDE_ORDER_RANGE: (f64, f64) = (12.0, 20.0);
const SSA_STEPS: usize = 100_000;
const TOY_RUNS: u64 = 1_000;
const CELL_RUNS: usize = 10_000;
const CELL_SEED: u64 = 2024;
const CELL_REL_TOL: f64 = 0.05;
const CELL_MIN_POPULATION: f64 = 20.0;
const MEAN_Z_TOL: f64 = 5.0;

type Outcome = Result<String, String>;

fn models_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../models")
}

fn load(name: &str) -> ParsedModel {
    let src = ModelSource::from_file(models_dir().join(name)).expect("model file");
    parse_model(&src).expect("model parses")
}

fn parse_inline(text: &str) -> SystemSpec {
    parse_model(&ModelSource::inline("acceptance", text)).expect("inline model parses").spec
}

fn bin() -> Command {
    Command::new(env!("CARGO_BIN_EXE_biopepad"))
}

fn check(cond: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if cond {
        Ok(())
    } else {
        Err(msg())
    }
}

// ---------------------------------------------------------------------------
// 1. Toy SLTS

/// Brute-force closure of the toy model written directly from the rules:
/// A reacts with stored start levels, B's stored levels never matter to the
/// rate and are dropped. State: (a, A entries, b, number of B entries).
fn toy_closure() -> (BTreeSet<(u32, Vec<u32>, u32, usize)>, usize) {
    type S = (u32, Vec<u32>, u32, usize);
    let n = 4;
    let init: S = (3, vec![], 0, 0);
    let mut seen = BTreeSet::from([init.clone()]);
    let mut queue = VecDeque::from([init]);
    let mut edges = BTreeSet::new();
    while let Some(s) = queue.pop_front() {
        let (a, la, b, lb) = s.clone();
        let mut succ = Vec::new();
        if !la.is_empty() {
            succ.push(((a, la[1..].to_vec(), b + 1, lb - 1), '-'));
        }
        if a >= 1 && b as usize + lb + 1 <= n {
            let mut la2 = la.clone();
            la2.push(a);
            succ.push(((a - 1, la2, b, lb + 1), '+'));
        }
        for (t, phase) in succ {
            edges.insert((s.clone(), t.clone(), phase));
            if seen.insert(t.clone()) {
                queue.push_back(t);
            }
        }
    }
    (seen, edges.len())
}

fn criterion_1() -> Outcome {
    let spec = load("toy.biopepad").spec;
    let slts = explore(&spec, &ExploreOptions::default()).map_err(|e| e.to_string())?;

    let (oracle_states, oracle_edges) = toy_closure();
    check(oracle_states.len() == 10 && oracle_edges == 12, || {
        format!("oracle closure gave {} states, {} edges", oracle_states.len(), oracle_edges)
    })?;
    check(slts.states.len() == 10 && slts.edges.len() == 12, || {
        format!("{} states, {} transitions", slts.states.len(), slts.edges.len())
    })?;
    check(slts.count(Phase::Start) == 6 && slts.count(Phase::Complete) == 6, || {
        "expected 6 start and 6 completion edges".into()
    })?;

    // Table rows (label -> A level, A stored levels, B level, B stored
    // levels), with rows (2,0):1, (0,0):3 and (0,1):2 corrected to the level
    // their labels state.
    let table: BTreeMap<&str, (u32, Vec<u32>, u32, Vec<u32>)> = BTreeMap::from([
        ("(3,0):0", (3, vec![], 0, vec![])),
        ("(2,0):1", (2, vec![3], 0, vec![0])),
        ("(2,1):0", (2, vec![], 1, vec![])),
        ("(1,0):2", (1, vec![3, 2], 0, vec![0, 0])),
        ("(1,1):1", (1, vec![2], 1, vec![1])),
        ("(1,2):0", (1, vec![], 2, vec![])),
        ("(0,0):3", (0, vec![3, 2, 1], 0, vec![0, 0, 0])),
        ("(0,1):2", (0, vec![2, 1], 1, vec![1, 1])),
        ("(0,2):1", (0, vec![1], 2, vec![2])),
        ("(0,3):0", (0, vec![], 3, vec![])),
    ]);
    let mut labels = BTreeSet::new();
    for (id, cfg) in slts.states.iter().enumerate() {
        let label = slts.state_label(id, &spec);
        let leaves = cfg.leaves();
        let (a, b) = (leaves[0], leaves[1]);
        let got = (
            a.level,
            a.schedule.iter().map(|e| e.level).collect::<Vec<_>>(),
            b.level,
            b.schedule.iter().map(|e| e.level).collect::<Vec<_>>(),
        );
        let want = table.get(label.as_str()).ok_or_else(|| format!("unexpected state {label}"))?;
        check(&got == want, || format!("state {label}: got {cfg}"))?;
        check(cfg.leaves().iter().all(|l| l.schedule.iter().all(|e| e.stoich == 1)), || {
            format!("state {label}: stoichiometry other than 1")
        })?;
        let key = (a.level, got.1.clone(), b.level, b.schedule.len());
        check(oracle_states.contains(&key), || format!("state {label} not in oracle closure"))?;
        labels.insert(label);
    }
    check(labels.len() == 10, || "duplicate state labels".into())?;

    let out = bin()
        .args(["explore", "--out"])
        .arg(std::env::temp_dir().join("acceptance_toy.dot"))
        .arg(models_dir().join("toy.biopepad"))
        .output()
        .map_err(|e| e.to_string())?;
    let stdout = String::from_utf8_lossy(&out.stdout);
    check(out.status.code() == Some(0) && stdout.contains("10 states, 12 transitions"), || {
        format!("cli explore printed {stdout:?}")
    })?;
    Ok("10 states, 12 transitions, every schedule list matches the table".into())
}

// ---------------------------------------------------------------------------
// 2. Cell-cycle DDE export

/// Splits `lhs = t1 + t2 - t3` into signed terms with spaces removed.
fn term_set(rhs: &str) -> BTreeSet<String> {
    let mut terms = BTreeSet::new();
    let mut current = String::new();
    let mut depth = 0;
    for ch in rhs.chars().filter(|c| !c.is_whitespace()) {
        match ch {
            '(' => depth += 1,
            ')' => depth -= 1,
            '+' | '-' if depth == 0 => {
                if !current.is_empty() && current != "-" {
                    terms.insert(normalise(&current));
                }
                current = if ch == '-' { "-".into() } else { String::new() };
                continue;
            }
            _ => {}
        }
        current.push(ch);
    }
    if !current.is_empty() {
        terms.insert(normalise(&current));
    }
    terms
}

/// Sign followed by the sorted factors.
fn normalise(term: &str) -> String {
    let (sign, body) = match term.strip_prefix('-') {
        Some(rest) => ("-", rest),
        None => ("+", term),
    };
    let mut factors: Vec<&str> = body.split('*').collect();
    factors.sort_unstable();
    format!("{sign}{}", factors.join("*"))
}

fn criterion_2() -> Outcome {
    let out = bin()
        .args(["dde", "--export-only"])
        .arg(models_dir().join("cell_cycle.biopepad"))
        .output()
        .map_err(|e| e.to_string())?;
    check(out.status.success(), || format!("exit {:?}", out.status.code()))?;
    let text = String::from_utf8_lossy(&out.stdout).into_owned();
    let equations: BTreeMap<String, BTreeSet<String>> = text
        .lines()
        .filter_map(|l| l.split_once(" = "))
        .map(|(lhs, rhs)| (lhs.to_string(), term_set(rhs)))
        .collect();
    let expected = BTreeMap::from([
        ("dT_I/dt".to_string(), term_set("2*a4*T_M - d2*T_I - a1*T_I(t-1)")),
        ("dT_M/dt".to_string(), term_set("a1*T_I(t-1) - d3*T_M - a4*T_M")),
    ]);
    check(equations == expected, || format!("got {equations:?}\nexpected {expected:?}"))?;
    Ok("term sets equal for dT_I/dt and dT_M/dt".into())
}

// ---------------------------------------------------------------------------
// 3. DDE integrator

/// Method of steps for x' = -x(t-1), x = 1 on [-1, 0].
fn lag_one_exact(t: f64) -> f64 {
    let mut x = 0.0;
    let mut fact = 1.0;
    for j in 0..=(t.floor() as i32 + 1) {
        if j > 0 {
            fact *= f64::from(j);
        }
        let base = t - f64::from(j) + 1.0;
        if base > 0.0 {
            x += (-1f64).powi(j) * base.powi(j) / fact;
        }
    }
    x
}

fn criterion_3() -> Outcome {
    let spec = parse_inline(
        "param k = 1; rate decay = MA(k); delay decay = 1;
         species X : max = 10, init = 1;
         X = (decay, 1) << X;
         system X[1];",
    );
    let sys = derive_dde(&spec).map_err(|e| e.to_string())?;
    let g = solve_dde(&sys, 2.0, 1e-3).map_err(|e| e.to_string())?;
    let x1 = g.value_at(0, 1.0).unwrap();
    let x2 = g.value_at(0, 2.0).unwrap();
    check((x1 - 0.0).abs() <= DDE_POINT_TOL && (x2 + 0.5).abs() <= DDE_POINT_TOL, || {
        format!("x(1) = {x1}, x(2) = {x2}")
    })?;
    // The solution is piecewise cubic up to t = 5, where RK4 and Hermite
    // interpolation are exact; errors are measured at t = 8.
    let err = |h: f64| -> Result<f64, String> {
        let g = solve_dde(&sys, 8.0, h).map_err(|e| e.to_string())?;
        Ok((g.value_at(0, 8.0).unwrap() - lag_one_exact(8.0)).abs())
    };
    let (e1, e2, e3) = (err(0.2)?, err(0.1)?, err(0.05)?);
    let ratios = [e1 / e2, e2 / e3];
    check(ratios.iter().all(|r| (DDE_ORDER_RANGE.0..=DDE_ORDER_RANGE.1).contains(r)), || {
        format!("halving ratios {ratios:?}")
    })?;
    Ok(format!(
        "|x(1)| = {:.1e}, |x(2)+0.5| = {:.1e}, halving ratios {:.2} {:.2}",
        x1.abs(),
        (x2 + 0.5).abs(),
        ratios[0],
        ratios[1]
    ))
}

// ---------------------------------------------------------------------------
// 4. Zero-delay SSA equivalence

/// Classic Gillespie direct method on 2A -> B, B -> C, C -> 2A.
fn reference_ssa(seed: u64, steps: usize) -> Vec<(usize, f64)> {
    let k = [0.001, 0.5, 0.3];
    let mut x = [100u32, 0, 0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(steps);
    for _ in 0..steps {
        let a = [
            k[0] * (f64::from(x[0]) * f64::from(x[0])),
            k[1] * f64::from(x[1]),
            k[2] * f64::from(x[2]),
        ];
        let mut a0 = 0.0;
        for v in a {
            a0 += v;
        }
        let tau = -(1.0 - rng.gen::<f64>()).ln() / a0;
        let target = rng.gen::<f64>() * a0;
        let mut acc = 0.0;
        let mut j = 0;
        for (i, v) in a.iter().enumerate() {
            if *v > 0.0 {
                acc += v;
                j = i;
                if target < acc {
                    break;
                }
            }
        }
        match j {
            0 => {
                x[0] -= 2;
                x[1] += 1;
            }
            1 => {
                x[1] -= 1;
                x[2] += 1;
            }
            _ => {
                x[2] -= 1;
                x[0] += 2;
            }
        }
        out.push((j, tau));
    }
    out
}

fn criterion_4() -> Outcome {
    let spec = parse_inline(
        "param k1 = 0.001; param k2 = 0.5; param k3 = 0.3;
         rate r1 = MA(k1); rate r2 = MA(k2); rate r3 = MA(k3);
         delay r1 = 0; delay r2 = 0; delay r3 = 0;
         species A : max = 1000000, init = 100;
         species B : max = 1000000, init = 0;
         species C : max = 1000000, init = 0;
         B = (r1, 1) >> B + (r2, 1) << B;
         C = (r2, 1) >> C + (r3, 1) << C;
         A = (r1, 2) << A + (r3, 2) >> A;
         system (A[100] <r1> B[0]) <r2, r3> C[0];",
    );
    let sim = Simulator::new(&spec, CapacityRule::Strict).map_err(|e| e.to_string())?;
    let seed = 31_337;
    let reference = reference_ssa(seed, SSA_STEPS);
    let mut state = sim.initial_state();
    let mut rng = RngStream::new(seed);
    let names = sim.action_names();
    let reference_names = ["r1", "r2", "r3"];
    check(names == reference_names, || format!("action order {names:?}"))?;
    for (n, want) in reference.iter().enumerate() {
        let out = sim
            .step(&mut state, &mut rng)
            .map_err(|e| e.to_string())?
            .ok_or_else(|| format!("quiescent at step {n}"))?;
        let Event::StartComplete(j) = out.event else {
            return Err(format!("step {n}: event {:?} in a zero-delay model", out.event));
        };
        let got = (names[j], out.waiting_time.to_bits());
        check(got == (reference_names[want.0], want.1.to_bits()), || {
            format!("step {n}: dssa ({}, {}) vs reference {want:?}", names[j], out.waiting_time)
        })?;
    }
    Ok(format!("{SSA_STEPS} steps bit-identical"))
}

// ---------------------------------------------------------------------------
// 5. Delay-as-duration invariants on the toy model

fn criterion_5() -> Outcome {
    let spec = load("toy.biopepad").spec;
    let sigma = spec.delay("alpha");
    let sim = Simulator::new(&spec, CapacityRule::Strict).map_err(|e| e.to_string())?;
    for seed in 0..TOY_RUNS {
        let tr = sim.simulate(f64::INFINITY, seed, Recording::AllEvents).map_err(|e| e.to_string())?;
        let mut starts = Vec::new();
        let mut completions = Vec::new();
        for s in &tr.samples {
            let total = s.counts[0] as usize + s.counts[1] as usize + s.pending;
            check(total == 3, || format!("seed {seed}: A+B+pending = {total} at t = {}", s.time))?;
            match s.event {
                EventTag::Start(_) => starts.push(s.time),
                EventTag::Complete(_) => completions.push(s.time),
                _ => {}
            }
        }
        check(tr.last().counts == vec![0, 3], || format!("seed {seed}: ends at {:?}", tr.last().counts))?;
        check(starts.len() == 3 && completions.len() == 3, || {
            format!("seed {seed}: {} starts, {} completions", starts.len(), completions.len())
        })?;
        for (s, c) in starts.iter().zip(&completions) {
            check(*c == *s + sigma, || format!("seed {seed}: start {s} completed at {c}"))?;
        }
    }
    Ok(format!("{TOY_RUNS} runs end at (0,3) with 3+3 events, completions exactly {sigma} after starts"))
}

// ---------------------------------------------------------------------------
// 6. Stochastic/deterministic agreement on the cell cycle

/// Exact mean of the delay-as-duration process: cells leave T_I when alpha
/// starts and reach T_M one delay later, with nothing in flight at t0.
fn duration_mean(spec: &SystemSpec, t_end: f64, h: f64) -> Vec<(f64, f64, f64)> {
    let p = |n: &str| spec.params[n];
    let (a1, a4, d2, d3) = (p("a1"), p("a4"), p("d2"), p("d3"));
    let sigma = spec.delay("alpha");
    let lag = (sigma / h).round() as usize;
    let x0 = f64::from(spec.species["T_I"].init_level);
    let m0 = f64::from(spec.species["T_M"].init_level);
    let mut xs = vec![x0];
    let mut out = vec![(0.0, x0, m0)];
    let (mut x, mut m) = (x0, m0);
    let steps = (t_end / h).round() as usize;
    for n in 0..steps {
        let f = |x: f64, m: f64, inflow: f64| (2.0 * a4 * m - (d2 + a1) * x, inflow - (d3 + a4) * m);
        // Inflow a1 * X(t - sigma) over [t_n, t_n+1]; zero on steps before sigma.
        let (in0, in_half, in1) = if n >= lag {
            let i = n - lag;
            (a1 * xs[i], a1 * 0.5 * (xs[i] + xs[i + 1]), a1 * xs[i + 1])
        } else {
            (0.0, 0.0, 0.0)
        };
        let (k1x, k1m) = f(x, m, in0);
        let (k2x, k2m) = f(x + h / 2.0 * k1x, m + h / 2.0 * k1m, in_half);
        let (k3x, k3m) = f(x + h / 2.0 * k2x, m + h / 2.0 * k2m, in_half);
        let (k4x, k4m) = f(x + h * k3x, m + h * k3m, in1);
        x += h / 6.0 * (k1x + 2.0 * k2x + 2.0 * k3x + k4x);
        m += h / 6.0 * (k1m + 2.0 * k2m + 2.0 * k3m + k4m);
        xs.push(x);
        out.push(((n + 1) as f64 * h, x, m));
    }
    out
}

fn criterion_6() -> (Outcome, Outcome) {
    let spec = load("cell_cycle.biopepad").spec;
    let run = || -> Result<_, String> {
        let sim = Simulator::new(&spec, CapacityRule::Strict).map_err(|e| e.to_string())?;
        let stats = sim.ensemble(10.0, CELL_RUNS, CELL_SEED, 1.0).map_err(|e| e.to_string())?;
        let grid = solve_dde(&derive_dde(&spec).map_err(|e| e.to_string())?, 10.0, 0.01)
            .map_err(|e| e.to_string())?;
        Ok((stats, grid))
    };
    let (stats, grid) = match run() {
        Ok(v) => v,
        Err(e) => return (Err(e.clone()), Err(e)),
    };

    let mut worst = (0.0f64, 0.0, "");
    let mut floor_ok = true;
    for (p, &t) in stats.times.iter().enumerate().skip(1) {
        for (s, name) in ["T_I", "T_M"].iter().enumerate() {
            let det = grid.value_at(s, t).unwrap();
            floor_ok &= det >= CELL_MIN_POPULATION && stats.mean[p][s] >= CELL_MIN_POPULATION;
            let dev = (stats.mean[p][s] - det).abs() / det;
            if dev > worst.0 {
                worst = (dev, t, name);
            }
        }
    }
    let main = if !floor_ok {
        Err("a population fell below the checkpoint floor".into())
    } else if worst.0 <= CELL_REL_TOL {
        Ok(format!("worst relative deviation {:.4} ({} at t = {})", worst.0, worst.2, worst.1))
    } else {
        Err(format!(
            "worst relative deviation {:.4} ({} at t = {}) exceeds {CELL_REL_TOL}",
            worst.0, worst.2, worst.1
        ))
    };

    let exact = duration_mean(&spec, 10.0, 1e-3);
    let mut worst_z = (0.0f64, 0.0, "");
    for (p, &t) in stats.times.iter().enumerate().skip(1) {
        let row = exact[(t / 1e-3).round() as usize];
        for (s, name) in ["T_I", "T_M"].iter().enumerate() {
            let want = if s == 0 { row.1 } else { row.2 };
            let se = (stats.variance[p][s] / CELL_RUNS as f64).sqrt();
            let z = (stats.mean[p][s] - want).abs() / se;
            if z > worst_z.0 {
                worst_z = (z, t, name);
            }
        }
    }
    let supplementary = if worst_z.0 <= MEAN_Z_TOL {
        Ok(format!("ensemble mean within {:.2} standard errors of the exact mean equations", worst_z.0))
    } else {
        Err(format!("{:.2} standard errors from the exact mean ({} at t = {})", worst_z.0, worst_z.2, worst_z.1))
    };
    (main, supplementary)
}

// ---------------------------------------------------------------------------
// 7. Round trip and determinism

fn criterion_7() -> Outcome {
    for name in ["toy.biopepad", "cell_cycle.biopepad"] {
        let spec = load(name).spec;
        let text = serialize_model(&spec);
        let again = parse_inline(&text);
        check(again == spec, || format!("{name}: round trip changed the spec"))?;
    }
    let dir = std::env::temp_dir().join(format!("biopepad-acceptance-{}", std::process::id()));
    std::fs::create_dir_all(&dir).map_err(|e| e.to_string())?;
    let mut outputs = Vec::new();
    for i in 0..2 {
        let out = dir.join(format!("run{i}.csv"));
        let status = bin()
            .args(["simulate", "--t-end", "5", "--seed", "99", "--out"])
            .arg(&out)
            .arg(models_dir().join("cell_cycle.biopepad"))
            .output()
            .map_err(|e| e.to_string())?;
        check(status.status.success(), || format!("simulate exit {:?}", status.status.code()))?;
        outputs.push(std::fs::read(&out).map_err(|e| e.to_string())?);
    }
    let _ = std::fs::remove_dir_all(&dir);
    check(outputs[0] == outputs[1], || "simulation CSVs differ".into())?;
    Ok(format!("both models round-trip; seeded CSV byte-identical ({} bytes)", outputs[0].len()))
}

fn report(id: &str, title: &str, limit: Duration, elapsed: Duration, outcome: &Outcome) -> bool {
    let timely = elapsed <= limit;
    let pass = outcome.is_ok() && timely;
    let detail = match outcome {
        Ok(d) => d.clone(),
        Err(e) => e.clone(),
    };
    let late = if timely { String::new() } else { format!(" [over {:?} budget]", limit) };
    println!(
        "[{}] {id} {title}: {detail} ({:.2} s){late}",
        if pass { "PASS" } else { "FAIL" },
        elapsed.as_secs_f64()
    );
    pass
}

fn timed<T>(f: impl FnOnce() -> T) -> (T, Duration) {
    let start = Instant::now();
    let v = f();
    (v, start.elapsed())
}

fn main() {
    let mut all = true;
    let (o, d) = timed(criterion_1);
    all &= report("1", "toy SLTS oracle", Duration::from_secs(1), d, &o);
    let (o, d) = timed(criterion_2);
    all &= report("2", "cell-cycle DDE export", Duration::from_secs(1), d, &o);
    let (o, d) = timed(criterion_3);
    all &= report("3", "DDE integrator accuracy", Duration::from_secs(1), d, &o);
    let (o, d) = timed(criterion_4);
    all &= report("4", "zero-delay SSA equivalence", Duration::from_secs(5), d, &o);
    let (o, d) = timed(criterion_5);
    all &= report("5", "delay-as-duration invariants", Duration::from_secs(5), d, &o);
    let ((main6, extra6), d) = timed(criterion_6);
    all &= report("6", "cell-cycle DSSA mean vs DDE (5%)", Duration::from_secs(120), d, &main6);
    all &= report("6b", "cell-cycle DSSA mean vs exact duration mean", Duration::from_secs(120), d, &extra6);
    let (o, d) = timed(criterion_7);
    all &= report("7", "round trip and determinism", Duration::from_secs(1), d, &o);
    if !all {
        println!("acceptance: FAILED");
        std::process::exit(1);
    }
    println!("acceptance: all criteria passed");
}
