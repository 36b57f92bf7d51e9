use serde::{Deserialize, Serialize};

use super::StlError;

/// Multi-variable, right-continuous, piecewise-constant signal on `[0, horizon]`.
///
/// `values[v][i]` is the value of variable `v` on `[breakpoints[i],
/// breakpoints[i + 1])`; the last segment is closed at the horizon.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "TraceRecord", into = "TraceRecord")]
pub struct Trace {
    variables: Vec<String>,
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
}

/// Line-format record for trace interchange.
#[derive(Debug, Clone, Serialize, Deserialize)]
struct TraceRecord {
    variables: Vec<String>,
    breakpoints: Vec<f64>,
    values: Vec<Vec<f64>>,
    horizon: f64,
}

impl TryFrom<TraceRecord> for Trace {
    type Error = StlError;

    fn try_from(record: TraceRecord) -> Result<Self, StlError> {
        let trace = Trace::new(record.variables, record.breakpoints, record.values)?;
        if trace.horizon() != record.horizon {
            return Err(StlError::Trace(format!(
                "horizon {} does not match final breakpoint {}",
                record.horizon,
                trace.horizon()
            )));
        }
        Ok(trace)
    }
}

impl From<Trace> for TraceRecord {
    fn from(trace: Trace) -> Self {
        let horizon = trace.horizon();
        TraceRecord {
            variables: trace.variables,
            breakpoints: trace.breakpoints,
            values: trace.values,
            horizon,
        }
    }
}

impl Trace {
    pub fn new(
        variables: Vec<String>,
        breakpoints: Vec<f64>,
        values: Vec<Vec<f64>>,
    ) -> Result<Self, StlError> {
        if breakpoints.len() < 2 {
            return Err(StlError::Trace(
                "need at least two breakpoints (0 and the horizon)".into(),
            ));
        }
        if breakpoints[0] != 0.0 {
            return Err(StlError::Trace("first breakpoint must be 0".into()));
        }
        if breakpoints.iter().any(|b| !b.is_finite())
            || breakpoints.windows(2).any(|w| w[0] >= w[1])
        {
            return Err(StlError::Trace(
                "breakpoints must be finite and strictly increasing".into(),
            ));
        }
        if variables.len() != values.len() {
            return Err(StlError::Trace(format!(
                "{} variables but {} value rows",
                variables.len(),
                values.len()
            )));
        }
        let segments = breakpoints.len() - 1;
        for (name, row) in variables.iter().zip(&values) {
            if row.len() != segments {
                return Err(StlError::Trace(format!(
                    "variable `{name}` has {} values for {segments} segments",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(StlError::Trace(format!(
                    "variable `{name}` has a non-finite value"
                )));
            }
        }
        let mut sorted = variables.clone();
        sorted.sort();
        sorted.dedup();
        if sorted.len() != variables.len() {
            return Err(StlError::Trace("duplicate variable names".into()));
        }
        Ok(Self {
            variables,
            breakpoints,
            values,
        })
    }

    /// Every variable constant over `[0, horizon]`.
    pub fn constant(assignments: &[(&str, f64)], horizon: f64) -> Result<Self, StlError> {
        Self::new(
            assignments.iter().map(|(n, _)| n.to_string()).collect(),
            vec![0.0, horizon],
            assignments.iter().map(|(_, v)| vec![*v]).collect(),
        )
    }

    pub fn variables(&self) -> &[String] {
        &self.variables
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[Vec<f64>] {
        &self.values
    }

    pub fn horizon(&self) -> f64 {
        *self.breakpoints.last().expect("validated non-empty")
    }

    pub fn segment_count(&self) -> usize {
        self.breakpoints.len() - 1
    }

    pub fn min_segment_length(&self) -> f64 {
        self.breakpoints
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
    }

    pub fn variable_index(&self, name: &str) -> Option<usize> {
        self.variables.iter().position(|v| v == name)
    }

    /// Index of the segment containing `t` (right-continuous; the horizon
    /// belongs to the last segment).
    pub fn segment_at(&self, t: f64) -> usize {
        let after = self.breakpoints.partition_point(|b| *b <= t);
        after.saturating_sub(1).min(self.segment_count() - 1)
    }

    pub fn value(&self, variable: usize, t: f64) -> f64 {
        self.values[variable][self.segment_at(t)]
    }
}
