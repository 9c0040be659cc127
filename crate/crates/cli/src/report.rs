//! Self-describing run reports.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::config::{Command, ExperimentConfig};

/// A checked inequality `lhs ≤ rhs` (or `<`), with both sides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Assertion {
    pub name: String,
    pub inequality: String,
    pub lhs: f64,
    pub rhs: f64,
    pub passed: bool,
}

impl Assertion {
    pub fn le(name: impl Into<String>, inequality: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), inequality: inequality.into(), lhs, rhs, passed: lhs <= rhs }
    }

    pub fn lt(name: impl Into<String>, inequality: impl Into<String>, lhs: f64, rhs: f64) -> Self {
        Self { name: name.into(), inequality: inequality.into(), lhs, rhs, passed: lhs < rhs }
    }

    /// Zero violations out of `total`.
    pub fn none_violated(name: impl Into<String>, violations: usize, total: usize) -> Self {
        Self::le(name, format!("violations out of {total} <= 0"), violations as f64, 0.0)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunReport {
    pub command: Command,
    /// The effective config, seed included; re-running it reproduces every number.
    pub config: ExperimentConfig,
    pub metrics: BTreeMap<String, Value>,
    pub assertions: Vec<Assertion>,
    /// Files written, relative to the output directory.
    pub outputs: Vec<String>,
    pub wall_clock_s: f64,
    pub passed: bool,
}

impl RunReport {
    pub fn new(command: Command, config: ExperimentConfig) -> Self {
        Self { command, config, metrics: BTreeMap::new(), assertions: Vec::new(), outputs: Vec::new(), wall_clock_s: 0.0, passed: true }
    }

    pub fn metric(&mut self, key: &str, value: impl Serialize) {
        let value = serde_json::to_value(value).unwrap_or(Value::Null);
        self.metrics.insert(key.to_string(), value);
    }

    pub fn check(&mut self, assertion: Assertion) {
        self.passed &= assertion.passed;
        self.assertions.push(assertion);
    }

    pub fn exit_code(&self) -> i32 {
        if self.passed {
            0
        } else {
            1
        }
    }
}
