//! Exact Boolean monitoring over piecewise-constant traces.
//!
//! Every subformula has a finite *critical set*: time points outside of which
//! its truth value is constant on each open gap. Atoms change only at trace
//! breakpoints; a temporal operator with interval `[l, u]` shifts its
//! operand's critical points by `-l` and `-u`; `Until` additionally depends on
//! its left operand at the evaluation instant itself. Quantifiers are then
//! decided by sampling the critical points inside the window, both window
//! endpoints, and one midpoint per gap.

use std::collections::HashMap;

use super::ast::{Atom, Formula, Interval};
use super::trace::Trace;
use super::StlError;

/// `(trace, t) |= formula`.
///
/// Fails when a variable is missing from the trace, when `t` lies outside
/// `[0, horizon]`, or when some temporal window would reach past the horizon.
pub fn evaluate(formula: &Formula, trace: &Trace, t: f64) -> Result<bool, StlError> {
    let horizon = trace.horizon();
    if !(0.0..=horizon).contains(&t) {
        return Err(StlError::TimeOutOfRange { t, horizon });
    }
    for variable in formula.variables() {
        if trace.variable_index(&variable).is_none() {
            return Err(StlError::UnknownVariable(variable));
        }
    }
    let required = t + formula.temporal_depth();
    if required > horizon {
        return Err(StlError::HorizonExceeded { required, horizon });
    }
    let monitor = Monitor::new(formula, trace);
    Ok(monitor.sat(formula, t))
}

type NodeKey = *const Formula;

struct Monitor<'a> {
    trace: &'a Trace,
    critical: HashMap<NodeKey, Vec<f64>>,
    /// Union of both operands' critical sets, for `Until` nodes.
    until_window: HashMap<NodeKey, Vec<f64>>,
    atoms: HashMap<*const Atom, Vec<(f64, usize)>>,
}

fn sorted_union(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out: Vec<f64> = a.iter().chain(b).copied().collect();
    out.sort_by(f64::total_cmp);
    out.dedup();
    out
}

impl<'a> Monitor<'a> {
    fn new(formula: &Formula, trace: &'a Trace) -> Self {
        let mut monitor = Monitor {
            trace,
            critical: HashMap::new(),
            until_window: HashMap::new(),
            atoms: HashMap::new(),
        };
        monitor.prepare(formula);
        monitor
    }

    fn shifted(&self, points: &[f64], interval: Interval) -> Vec<f64> {
        let horizon = self.trace.horizon();
        let mut out: Vec<f64> = points
            .iter()
            .flat_map(|c| [c - interval.lo(), c - interval.hi()])
            .filter(|p| (0.0..=horizon).contains(p))
            .collect();
        out.sort_by(f64::total_cmp);
        out.dedup();
        out
    }

    fn prepare(&mut self, formula: &Formula) -> Vec<f64> {
        let points = match formula {
            Formula::Atom(atom) => {
                let resolved = atom
                    .terms()
                    .iter()
                    .map(|term| {
                        let index = self
                            .trace
                            .variable_index(&term.variable)
                            .expect("checked by evaluate");
                        (term.coefficient, index)
                    })
                    .collect();
                self.atoms.insert(atom as *const Atom, resolved);
                self.trace.breakpoints().to_vec()
            }
            Formula::True | Formula::False => Vec::new(),
            Formula::Not(inner) => self.prepare(inner),
            Formula::And(a, b) | Formula::Or(a, b) | Formula::Implies(a, b) => {
                let left = self.prepare(a);
                let right = self.prepare(b);
                sorted_union(&left, &right)
            }
            Formula::Globally(interval, inner) | Formula::Eventually(interval, inner) => {
                let inner_points = self.prepare(inner);
                self.shifted(&inner_points, *interval)
            }
            Formula::Until(interval, a, b) => {
                let left = self.prepare(a);
                let right = self.prepare(b);
                let window = sorted_union(&left, &right);
                let shifted = self.shifted(&window, *interval);
                self.until_window.insert(formula as NodeKey, window);
                sorted_union(&left, &shifted)
            }
        };
        self.critical.insert(formula as NodeKey, points.clone());
        points
    }

    fn critical_of(&self, formula: &Formula) -> &[f64] {
        &self.critical[&(formula as NodeKey)]
    }

    fn atom_holds(&self, atom: &Atom, t: f64) -> bool {
        let lhs: f64 = self.atoms[&(atom as *const Atom)]
            .iter()
            .map(|(coefficient, index)| coefficient * self.trace.value(*index, t))
            .sum();
        atom.comparator().holds(lhs, atom.threshold())
    }

    fn sat(&self, formula: &Formula, t: f64) -> bool {
        match formula {
            Formula::Atom(atom) => self.atom_holds(atom, t),
            Formula::True => true,
            Formula::False => false,
            Formula::Not(inner) => !self.sat(inner, t),
            Formula::And(a, b) => self.sat(a, t) && self.sat(b, t),
            Formula::Or(a, b) => self.sat(a, t) || self.sat(b, t),
            Formula::Implies(a, b) => !self.sat(a, t) || self.sat(b, t),
            Formula::Globally(interval, inner) => sample_points(
                self.critical_of(inner),
                t + interval.lo(),
                t + interval.hi(),
            )
            .into_iter()
            .all(|p| self.sat(inner, p)),
            Formula::Eventually(interval, inner) => sample_points(
                self.critical_of(inner),
                t + interval.lo(),
                t + interval.hi(),
            )
            .into_iter()
            .any(|p| self.sat(inner, p)),
            Formula::Until(interval, lhs, rhs) => {
                let window = &self.until_window[&(formula as NodeKey)];
                for candidate in sample_points(window, t + interval.lo(), t + interval.hi()) {
                    // Holding lhs on [t, t'] is monotone in t'.
                    if !self.holds_throughout(lhs, t, candidate) {
                        return false;
                    }
                    if self.sat(rhs, candidate) {
                        return true;
                    }
                }
                false
            }
        }
    }

    fn holds_throughout(&self, formula: &Formula, from: f64, to: f64) -> bool {
        sample_points(self.critical_of(formula), from, to)
            .into_iter()
            .all(|p| self.sat(formula, p))
    }
}

/// Window endpoints, the critical points strictly inside, and the midpoint of
/// every gap between consecutive points.
fn sample_points(critical: &[f64], lo: f64, hi: f64) -> Vec<f64> {
    let mut anchors = vec![lo];
    let start = critical.partition_point(|c| *c <= lo);
    anchors.extend(critical[start..].iter().copied().take_while(|c| *c < hi));
    if hi > lo {
        anchors.push(hi);
    }
    let mut out = Vec::with_capacity(anchors.len() * 2);
    for (i, point) in anchors.iter().enumerate() {
        if i > 0 {
            out.push(0.5 * (anchors[i - 1] + point));
        }
        out.push(*point);
    }
    out
}
