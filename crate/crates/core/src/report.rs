//! Iteration log shared by the descent loops.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    Tolerance,
    MaxIter,
    LineSearchFailure,
}

impl fmt::Display for Termination {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Termination::Tolerance => "tolerance",
            Termination::MaxIter => "max_iter",
            Termination::LineSearchFailure => "line_search_failure",
        })
    }
}

/// History of a descent run. `objective_history[0]` is the starting value;
/// entry `k + 1` is the objective after the `k`-th accepted step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescentReport {
    pub iterations: usize,
    pub objective_history: Vec<f64>,
    pub gradient_norm_history: Vec<f64>,
    pub step_sizes: Vec<f64>,
    pub termination: Termination,
}

#[derive(Serialize)]
struct Record {
    index: usize,
    objective: f64,
    gradient_norm: Option<f64>,
    step: Option<f64>,
}

impl DescentReport {
    pub(crate) fn new() -> Self {
        Self {
            iterations: 0,
            objective_history: Vec::new(),
            gradient_norm_history: Vec::new(),
            step_sizes: Vec::new(),
            termination: Termination::MaxIter,
        }
    }

    pub fn initial_objective(&self) -> f64 {
        self.objective_history[0]
    }

    pub fn final_objective(&self) -> f64 {
        *self.objective_history.last().expect("non-empty history")
    }

    /// True when every accepted step strictly lowered the objective.
    pub fn is_monotone(&self) -> bool {
        self.objective_history.windows(2).all(|w| w[1] < w[0])
    }

    /// One JSON object per line: the objective after each step, the gradient
    /// norm measured before it and the accepted step length.
    pub fn to_json_lines(&self) -> String {
        let mut out = String::new();
        for (index, &objective) in self.objective_history.iter().enumerate() {
            let rec = Record {
                index,
                objective,
                gradient_norm: index.checked_sub(1).and_then(|k| self.gradient_norm_history.get(k).copied()),
                step: index.checked_sub(1).and_then(|k| self.step_sizes.get(k).copied()),
            };
            out.push_str(&serde_json::to_string(&rec).expect("plain record"));
            out.push('\n');
        }
        out
    }

    pub fn write_json_lines(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.to_json_lines()).map_err(|e| Error::io(path, e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn json_lines_have_one_record_per_objective() {
        let r = DescentReport {
            iterations: 3,
            objective_history: vec![4.0, 2.0, 1.0],
            gradient_norm_history: vec![3.0, 1.5, 0.1],
            step_sizes: vec![0.5, 0.25],
            termination: Termination::Tolerance,
        };
        let s = r.to_json_lines();
        let lines: Vec<serde_json::Value> = s.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
        assert_eq!(lines.len(), 3);
        assert_eq!(lines[0]["step"], serde_json::Value::Null);
        assert_eq!(lines[2]["objective"], 1.0);
        assert_eq!(lines[2]["step"], 0.25);
        assert!(r.is_monotone());
        assert_eq!(serde_json::to_string(&r.termination).unwrap(), "\"tolerance\"");
    }
}
