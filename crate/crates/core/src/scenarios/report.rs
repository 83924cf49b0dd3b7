use std::collections::BTreeMap;
use std::io::Write;

use serde::Serialize;

use super::config::{ScenarioConfig, ScenarioKind};
use crate::diagnostics::{DriftCondition, DriftReport, RateReport};
use crate::engine::{TerminalStatus, Trajectory};
use crate::error::Result;

/// Inequality a check was tested against.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "relation", rename_all = "kebab-case")]
pub enum Relation {
    AtMost { threshold: f64 },
    AtLeast { threshold: f64 },
    Within { target: f64, tolerance: f64 },
}

impl Relation {
    fn holds(&self, value: f64) -> bool {
        match *self {
            Relation::AtMost { threshold } => value <= threshold,
            Relation::AtLeast { threshold } => value >= threshold,
            Relation::Within { target, tolerance } => (value - target).abs() <= tolerance,
        }
    }
}

/// One declared acceptance check with the exact inequality it tested.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    /// `None` when the statistic could not be computed; the check then fails.
    pub value: Option<f64>,
    #[serde(flatten)]
    pub relation: Relation,
    pub passed: bool,
}

impl Check {
    pub fn new(name: impl Into<String>, value: Option<f64>, relation: Relation) -> Self {
        let passed = value.is_some_and(|v| relation.holds(v));
        Self {
            name: name.into(),
            value,
            relation,
            passed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ReplicationSummary {
    pub rep: u64,
    pub status: TerminalStatus,
    pub steps: u64,
    pub terminal_sq_err: Option<f64>,
    pub projections: u64,
    /// Scenario-specific terminal statistic, e.g. the Fisher quadratic form.
    pub statistic: Option<f64>,
}

impl ReplicationSummary {
    pub fn from_trajectory(rep: u64, traj: &Trajectory) -> Self {
        Self {
            rep,
            status: traj.status().clone(),
            steps: traj.steps(),
            terminal_sq_err: traj.terminal_error2(),
            projections: traj.projections(),
            statistic: None,
        }
    }
}

/// Rate statistics for one variant of a scenario.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RateEntry {
    pub label: String,
    pub step_exponent: Option<f64>,
    /// The exponents actually applied to `t` in the sup statistic.
    pub sup_exponents: Vec<f64>,
    pub rate: RateReport,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ConditionSummary {
    pub condition: DriftCondition,
    pub evaluated: usize,
    pub violations: usize,
    pub early_violations: usize,
    pub passed: bool,
}

impl From<&DriftReport> for ConditionSummary {
    fn from(r: &DriftReport) -> Self {
        Self {
            condition: r.condition,
            evaluated: r.evaluated,
            violations: r.violations,
            early_violations: r.early_violations,
            passed: r.passed(),
        }
    }
}

/// Self-describing outcome of one scenario run.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScenarioReport {
    pub scenario: ScenarioKind,
    pub config: ScenarioConfig,
    pub replications: Vec<ReplicationSummary>,
    pub rates: Vec<RateEntry>,
    pub conditions: Vec<ConditionSummary>,
    pub metrics: BTreeMap<String, f64>,
    pub checks: Vec<Check>,
    pub warnings: Vec<String>,
    pub passed: bool,
}

impl ScenarioReport {
    pub fn new(config: &ScenarioConfig) -> Self {
        Self {
            scenario: config.scenario,
            config: config.clone(),
            replications: Vec::new(),
            rates: Vec::new(),
            conditions: Vec::new(),
            metrics: BTreeMap::new(),
            checks: Vec::new(),
            warnings: Vec::new(),
            passed: true,
        }
    }

    pub fn metric(&mut self, name: &str, value: f64) {
        self.metrics.insert(name.to_string(), value);
    }

    pub fn check(&mut self, name: impl Into<String>, value: Option<f64>, relation: Relation) {
        self.checks.push(Check::new(name, value, relation));
    }

    pub fn find_check(&self, name: &str) -> Option<&Check> {
        self.checks.iter().find(|c| c.name == name)
    }

    pub(crate) fn finish(mut self) -> Self {
        self.passed = self.checks.iter().all(|c| c.passed);
        self
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("report serializes")
    }

    /// One row per (variant, δ) with the headline statistics.
    pub fn write_rates_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record([
            "label",
            "step_exponent",
            "delta",
            "sup_exponent",
            "median_ratio",
            "ratio_q10",
            "ratio_q90",
            "tail_slope",
            "rate_exponent",
            "replications",
        ])?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        let deltas = self.config.deltas();
        for entry in &self.rates {
            let base = |delta: String, sup: String, q: [String; 3]| {
                let [m, lo, hi] = q;
                vec![
                    entry.label.clone(),
                    opt(entry.step_exponent),
                    delta,
                    sup,
                    m,
                    lo,
                    hi,
                    opt(entry.rate.slope),
                    opt(entry.rate.rate_exponent),
                    entry.rate.replications.to_string(),
                ]
            };
            if entry.rate.boundedness.is_empty() {
                w.write_record(base(String::new(), String::new(), Default::default()))?;
            }
            for (i, b) in entry.rate.boundedness.iter().enumerate() {
                let q = &b.ratio_quantiles;
                let delta = deltas.get(i).copied().unwrap_or(b.delta);
                w.write_record(base(
                    delta.to_string(),
                    b.delta.to_string(),
                    [q.median.to_string(), q.q10.to_string(), q.q90.to_string()],
                ))?;
            }
        }
        w.flush()?;
        Ok(())
    }
}

/// Plot-ready path of the first replication.
#[derive(Debug, Clone, PartialEq)]
#[allow(clippy::large_enum_variant)]
pub enum Trace {
    Trajectory(Trajectory),
    Table { header: Vec<String>, rows: Vec<Vec<f64>> },
}

impl Trace {
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        match self {
            Trace::Trajectory(t) => t.write_csv(writer),
            Trace::Table { header, rows } => {
                let mut w = csv::Writer::from_writer(writer);
                w.write_record(header)?;
                for row in rows {
                    w.write_record(row.iter().map(|v| v.to_string()))?;
                }
                w.flush()?;
                Ok(())
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioOutcome {
    pub report: ScenarioReport,
    pub trace: Trace,
}
