use std::collections::BTreeSet;
use std::fmt;

use super::StlError;

/// Closed, non-singular, finite time interval `[lo, hi]` with `0 <= lo < hi`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Interval {
    lo: f64,
    hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Result<Self, StlError> {
        if !lo.is_finite() || !hi.is_finite() {
            return Err(StlError::Interval(format!(
                "interval bounds must be finite, got [{lo}, {hi}]"
            )));
        }
        if lo < 0.0 {
            return Err(StlError::Interval(format!(
                "interval lower bound {lo} is negative"
            )));
        }
        if lo >= hi {
            return Err(StlError::Interval(format!(
                "interval lo >= hi in [{lo}, {hi}]"
            )));
        }
        Ok(Self { lo, hi })
    }

    pub fn lo(&self) -> f64 {
        self.lo
    }

    pub fn hi(&self) -> f64 {
        self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Comparator {
    Lt,
    Le,
    Gt,
    Ge,
}

impl Comparator {
    pub fn symbol(self) -> &'static str {
        match self {
            Comparator::Lt => "<",
            Comparator::Le => "<=",
            Comparator::Gt => ">",
            Comparator::Ge => ">=",
        }
    }

    pub fn holds(self, lhs: f64, rhs: f64) -> bool {
        match self {
            Comparator::Lt => lhs < rhs,
            Comparator::Le => lhs <= rhs,
            Comparator::Gt => lhs > rhs,
            Comparator::Ge => lhs >= rhs,
        }
    }
}

/// One `coefficient * variable` summand of an affine expression.
#[derive(Debug, Clone, PartialEq)]
pub struct Term {
    pub coefficient: f64,
    pub variable: String,
}

impl Term {
    pub fn new(coefficient: f64, variable: impl Into<String>) -> Self {
        Self {
            coefficient,
            variable: variable.into(),
        }
    }
}

/// Affine predicate `sum(c_i * x_i) <cmp> threshold`.
#[derive(Debug, Clone, PartialEq)]
pub struct Atom {
    terms: Vec<Term>,
    comparator: Comparator,
    threshold: f64,
}

pub(crate) fn is_identifier(name: &str) -> bool {
    let mut chars = name.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

pub(crate) const RESERVED: [&str; 5] = ["G", "F", "U", "true", "false"];

impl Atom {
    pub fn new(terms: Vec<Term>, comparator: Comparator, threshold: f64) -> Result<Self, StlError> {
        if terms.is_empty() {
            return Err(StlError::Atom("atom needs at least one term".into()));
        }
        for term in &terms {
            if !is_identifier(&term.variable) || RESERVED.contains(&term.variable.as_str()) {
                return Err(StlError::Atom(format!(
                    "invalid signal identifier `{}`",
                    term.variable
                )));
            }
            if !term.coefficient.is_finite() {
                return Err(StlError::Atom(format!(
                    "coefficient of `{}` is not finite",
                    term.variable
                )));
            }
        }
        if !threshold.is_finite() {
            return Err(StlError::Atom("threshold is not finite".into()));
        }
        Ok(Self {
            terms,
            comparator,
            threshold,
        })
    }

    /// `variable <cmp> threshold`.
    pub fn simple(
        variable: &str,
        comparator: Comparator,
        threshold: f64,
    ) -> Result<Self, StlError> {
        Self::new(vec![Term::new(1.0, variable)], comparator, threshold)
    }

    pub fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub fn comparator(&self) -> Comparator {
        self.comparator
    }

    pub fn threshold(&self) -> f64 {
        self.threshold
    }
}

/// STL abstract syntax. `Or` and `Implies` are first-class nodes but evaluate
/// exactly like their desugared forms.
#[derive(Debug, Clone, PartialEq)]
pub enum Formula {
    Atom(Atom),
    True,
    False,
    Not(Box<Formula>),
    And(Box<Formula>, Box<Formula>),
    Or(Box<Formula>, Box<Formula>),
    Implies(Box<Formula>, Box<Formula>),
    Globally(Interval, Box<Formula>),
    Eventually(Interval, Box<Formula>),
    Until(Interval, Box<Formula>, Box<Formula>),
}

impl Formula {
    pub fn atom(atom: Atom) -> Self {
        Formula::Atom(atom)
    }

    #[allow(clippy::should_implement_trait)]
    pub fn not(inner: Formula) -> Self {
        Formula::Not(Box::new(inner))
    }

    pub fn and(lhs: Formula, rhs: Formula) -> Self {
        Formula::And(Box::new(lhs), Box::new(rhs))
    }

    pub fn or(lhs: Formula, rhs: Formula) -> Self {
        Formula::Or(Box::new(lhs), Box::new(rhs))
    }

    pub fn implies(lhs: Formula, rhs: Formula) -> Self {
        Formula::Implies(Box::new(lhs), Box::new(rhs))
    }

    pub fn globally(interval: Interval, inner: Formula) -> Self {
        Formula::Globally(interval, Box::new(inner))
    }

    pub fn eventually(interval: Interval, inner: Formula) -> Self {
        Formula::Eventually(interval, Box::new(inner))
    }

    pub fn until(interval: Interval, lhs: Formula, rhs: Formula) -> Self {
        Formula::Until(interval, Box::new(lhs), Box::new(rhs))
    }

    pub fn children(&self) -> Vec<&Formula> {
        match self {
            Formula::Atom(_) | Formula::True | Formula::False => vec![],
            Formula::Not(a) | Formula::Globally(_, a) | Formula::Eventually(_, a) => vec![a],
            Formula::And(a, b)
            | Formula::Or(a, b)
            | Formula::Implies(a, b)
            | Formula::Until(_, a, b) => {
                vec![a, b]
            }
        }
    }

    /// Distinct signal identifiers, sorted.
    pub fn variables(&self) -> BTreeSet<String> {
        let mut out = BTreeSet::new();
        self.collect_variables(&mut out);
        out
    }

    fn collect_variables(&self, out: &mut BTreeSet<String>) {
        if let Formula::Atom(atom) = self {
            out.extend(atom.terms.iter().map(|t| t.variable.clone()));
        }
        for child in self.children() {
            child.collect_variables(out);
        }
    }

    pub fn atoms(&self) -> Vec<&Atom> {
        let mut out = Vec::new();
        self.collect_atoms(&mut out);
        out
    }

    fn collect_atoms<'a>(&'a self, out: &mut Vec<&'a Atom>) {
        if let Formula::Atom(atom) = self {
            out.push(atom);
        }
        for child in self.children() {
            child.collect_atoms(out);
        }
    }

    pub fn intervals(&self) -> Vec<Interval> {
        let mut out = Vec::new();
        self.collect_intervals(&mut out);
        out
    }

    fn collect_intervals(&self, out: &mut Vec<Interval>) {
        if let Some(interval) = self.interval() {
            out.push(interval);
        }
        for child in self.children() {
            child.collect_intervals(out);
        }
    }

    pub fn interval(&self) -> Option<Interval> {
        match self {
            Formula::Globally(i, _) | Formula::Eventually(i, _) | Formula::Until(i, _, _) => {
                Some(*i)
            }
            _ => None,
        }
    }

    /// Largest time offset, relative to the evaluation instant, at which the
    /// formula can inspect the trace (sum of upper bounds along the deepest path).
    pub fn temporal_depth(&self) -> f64 {
        let own = self.interval().map_or(0.0, |i| i.hi());
        own + self
            .children()
            .iter()
            .map(|c| c.temporal_depth())
            .fold(0.0, f64::max)
    }

    /// Syntactic nesting depth; leaves have depth 0.
    pub fn depth(&self) -> usize {
        self.children()
            .iter()
            .map(|c| c.depth() + 1)
            .max()
            .unwrap_or(0)
    }
}

impl fmt::Display for Formula {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&super::render(self))
    }
}
