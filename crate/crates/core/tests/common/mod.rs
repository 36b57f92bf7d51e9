//! Seeded generators and an independent grid-scan monitor shared by the
//! integration tests.
#![allow(dead_code)]

use clarifystl::dataset::DatasetRecord;
use clarifystl::stl::{Atom, Comparator, Formula, Interval, Term, Trace};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const NAMES: [&str; 5] = ["x", "y", "speed", "x_2", "rpm"];

fn comparator(rng: &mut ChaCha8Rng) -> Comparator {
    [
        Comparator::Lt,
        Comparator::Le,
        Comparator::Gt,
        Comparator::Ge,
    ][rng.random_range(0..4)]
}

/// Thresholds with a few decimal digits, including negatives and zero.
fn number(rng: &mut ChaCha8Rng) -> f64 {
    match rng.random_range(0..4) {
        0 => rng.random_range(-20..20) as f64,
        1 => rng.random_range(-2000..2000) as f64 / 100.0,
        2 => rng.random_range(0..100_000) as f64 / 1000.0,
        _ => 0.0,
    }
}

/// Shape of randomly generated formulas.
#[derive(Clone, Copy)]
pub struct Shape {
    pub depth: usize,
    pub variables: usize,
    /// Integer interval bounds no greater than this and simple atoms with
    /// integer-friendly thresholds; otherwise arbitrary decimals and affine
    /// atoms.
    pub grid: Option<u32>,
}

pub fn random_atom(rng: &mut ChaCha8Rng, shape: Shape) -> Atom {
    let names = &NAMES[..shape.variables];
    if shape.grid.is_some() || rng.random_bool(0.6) {
        let name = names[rng.random_range(0..names.len())];
        let threshold = if shape.grid.is_some() {
            rng.random_range(-4..=4) as f64 / 2.0
        } else {
            number(rng)
        };
        return Atom::simple(name, comparator(rng), threshold).unwrap();
    }
    let count = rng.random_range(1..=names.len().min(3));
    let terms = (0..count)
        .map(|_| {
            let c = match rng.random_range(0..3) {
                0 => 1.0,
                1 => -(rng.random_range(1..5) as f64),
                _ => rng.random_range(1..400) as f64 / 8.0,
            };
            Term::new(c, names[rng.random_range(0..names.len())])
        })
        .collect();
    Atom::new(terms, comparator(rng), number(rng)).unwrap()
}

pub fn random_interval(rng: &mut ChaCha8Rng, shape: Shape) -> Interval {
    match shape.grid {
        Some(max) => {
            let lo = rng.random_range(0..max);
            let hi = rng.random_range(lo + 1..=max);
            Interval::new(lo as f64, hi as f64).unwrap()
        }
        None => {
            let lo = rng.random_range(0..200) as f64 / 4.0;
            let hi = lo + rng.random_range(1..400) as f64 / 8.0;
            Interval::new(lo, hi).unwrap()
        }
    }
}

/// Formula of syntactic depth at most `shape.depth`.
pub fn random_formula(rng: &mut ChaCha8Rng, shape: Shape) -> Formula {
    if shape.depth == 0 || rng.random_bool(0.2) {
        return match rng.random_range(0..12) {
            0 => Formula::True,
            1 => Formula::False,
            _ => Formula::atom(random_atom(rng, shape)),
        };
    }
    let sub = Shape {
        depth: shape.depth - 1,
        ..shape
    };
    match rng.random_range(0..8) {
        0 => Formula::not(random_formula(rng, sub)),
        1 => Formula::and(random_formula(rng, sub), random_formula(rng, sub)),
        2 => Formula::or(random_formula(rng, sub), random_formula(rng, sub)),
        3 => Formula::implies(random_formula(rng, sub), random_formula(rng, sub)),
        4 => Formula::globally(random_interval(rng, shape), random_formula(rng, sub)),
        5 => Formula::eventually(random_interval(rng, shape), random_formula(rng, sub)),
        6 => Formula::until(
            random_interval(rng, shape),
            random_formula(rng, sub),
            random_formula(rng, sub),
        ),
        _ => Formula::atom(random_atom(rng, shape)),
    }
}

/// Trace over the first `variables` names with at most `max_segments`
/// segments. Integer breakpoints when `integer` is set.
pub fn random_trace(
    rng: &mut ChaCha8Rng,
    variables: usize,
    max_segments: usize,
    horizon: f64,
    integer: bool,
) -> Trace {
    let segments = rng.random_range(1..=max_segments);
    let mut inner: Vec<f64> = Vec::new();
    let mut attempts = 0;
    while inner.len() + 1 < segments && attempts < 100 {
        attempts += 1;
        let b = if integer {
            rng.random_range(1..horizon.max(2.0) as u32) as f64
        } else {
            rng.random_range(0.01..horizon)
        };
        if b < horizon && !inner.contains(&b) {
            inner.push(b);
        }
    }
    inner.sort_by(f64::total_cmp);
    let mut breakpoints = vec![0.0];
    breakpoints.extend(inner);
    breakpoints.push(horizon);
    let n = breakpoints.len() - 1;
    let names: Vec<String> = NAMES[..variables].iter().map(|s| s.to_string()).collect();
    let values = names
        .iter()
        .map(|_| {
            (0..n)
                .map(|_| rng.random_range(-6..=6) as f64 / 2.0)
                .collect()
        })
        .collect();
    Trace::new(names, breakpoints, values).unwrap()
}

/// Value of `variable` at `t`, read straight from the breakpoint table.
fn lookup(trace: &Trace, variable: &str, t: f64) -> f64 {
    let v = trace
        .variables()
        .iter()
        .position(|n| n == variable)
        .expect("variable in trace");
    let bps = trace.breakpoints();
    let mut segment = 0;
    for (i, b) in bps.iter().enumerate().take(bps.len() - 1) {
        if *b <= t {
            segment = i;
        }
    }
    trace.values()[v][segment]
}

fn grid(from: f64, to: f64, step: f64) -> impl Iterator<Item = f64> {
    let n = ((to - from) / step).round() as usize;
    (0..=n).map(move |k| from + k as f64 * step)
}

/// Dense-grid monitor. Exact when breakpoints and interval bounds are
/// integers and `step` is 0.5: every truth value is then constant on each
/// open unit cell, and the grid visits every integer and every cell midpoint.
pub fn grid_sat(formula: &Formula, trace: &Trace, t: f64, step: f64) -> bool {
    match formula {
        Formula::True => true,
        Formula::False => false,
        Formula::Atom(atom) => {
            let lhs: f64 = atom
                .terms()
                .iter()
                .map(|term| term.coefficient * lookup(trace, &term.variable, t))
                .sum();
            match atom.comparator() {
                Comparator::Lt => lhs < atom.threshold(),
                Comparator::Le => lhs <= atom.threshold(),
                Comparator::Gt => lhs > atom.threshold(),
                Comparator::Ge => lhs >= atom.threshold(),
            }
        }
        Formula::Not(a) => !grid_sat(a, trace, t, step),
        Formula::And(a, b) => grid_sat(a, trace, t, step) && grid_sat(b, trace, t, step),
        Formula::Or(a, b) => grid_sat(a, trace, t, step) || grid_sat(b, trace, t, step),
        Formula::Implies(a, b) => !grid_sat(a, trace, t, step) || grid_sat(b, trace, t, step),
        Formula::Globally(i, a) => {
            grid(t + i.lo(), t + i.hi(), step).all(|s| grid_sat(a, trace, s, step))
        }
        Formula::Eventually(i, a) => {
            grid(t + i.lo(), t + i.hi(), step).any(|s| grid_sat(a, trace, s, step))
        }
        Formula::Until(i, a, b) => grid(t + i.lo(), t + i.hi(), step).any(|s| {
            grid_sat(b, trace, s, step) && grid(t, s, step).all(|r| grid_sat(a, trace, r, step))
        }),
    }
}

const SIGNALS: [&str; 8] = [
    "speed", "rpm", "pressure", "temp", "x1", "x2", "voltage", "flow",
];

/// Clean NL/STL pairs from a few sentence templates. Every sentence is an
/// implication with a time span, comparison thresholds and one signal named
/// twice.
pub fn clean_corpus(n: usize, seed: u64) -> Vec<DatasetRecord> {
    let mut rng = rng(seed);
    (0..n)
        .map(|i| {
            let a = SIGNALS[rng.random_range(0..SIGNALS.len())];
            let b = loop {
                let b = SIGNALS[rng.random_range(0..SIGNALS.len())];
                if b != a {
                    break b;
                }
            };
            let c1 = rng.random_range(1..100);
            let c2 = rng.random_range(1..100) as f64 / 10.0;
            let c3 = c1 + rng.random_range(5..50);
            let t = rng.random_range(2..40);
            let (nl, stl) = match i % 3 {
                0 => (
                    format!(
                        "If {a} exceeds {c1}, then {b} must stay below {c2} for the next {t} seconds and {a} must remain below {c3}"
                    ),
                    format!("({a} > {c1}) -> (G[0,{t}]({b} < {c2}) & ({a} < {c3}))"),
                ),
                1 => (
                    format!(
                        "Whenever {a} is greater than {c1}, {b} shall rise above {c2} within {t} seconds and {a} shall stay below {c3}"
                    ),
                    format!("({a} > {c1}) -> (F[0,{t}]({b} > {c2}) & ({a} < {c3}))"),
                ),
                _ => {
                    let lo = rng.random_range(1..10);
                    (
                        format!(
                            "When {a} drops below {c1} then {b} must exceed {c2} during {lo}-{} seconds and {a} must stay above 0.5",
                            lo + t
                        ),
                        format!("({a} < {c1}) -> (G[{lo},{}]({b} > {c2}) & ({a} > 0.5))", lo + t),
                    )
                }
            };
            DatasetRecord::clean(format!("r{i:03}"), nl, stl)
        })
        .collect()
}

/// Two Gaussian clusters in `dim` dimensions, centred at `±separation / 2`
/// along a fixed unit direction, unit variance per coordinate. Box-Muller.
pub fn two_clusters(n: usize, dim: usize, separation: f64, seed: u64) -> Vec<(Vec<f64>, bool)> {
    let mut rng = rng(seed);
    let mut gaussian = move || {
        let u1: f64 = rng.random_range(f64::EPSILON..1.0);
        let u2: f64 = rng.random_range(0.0..1.0);
        (-2.0 * u1.ln()).sqrt() * (std::f64::consts::TAU * u2).cos()
    };
    let direction = 1.0 / (dim as f64).sqrt();
    (0..n)
        .map(|i| {
            let label = i % 2 == 0;
            let centre = if label {
                separation / 2.0
            } else {
                -separation / 2.0
            };
            (
                (0..dim).map(|_| centre * direction + gaussian()).collect(),
                label,
            )
        })
        .collect()
}
