use std::io::Write;

use nalgebra::{DVector, DVectorView};
use serde::{Deserialize, Serialize};

use crate::error::Result;

/// How a run ended.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "status", rename_all = "kebab-case")]
pub enum TerminalStatus {
    Completed,
    /// A coordinate became non-finite or exceeded the overflow bound at step `t`.
    Diverged { t: u64 },
    /// A domain error occurred at step `t`.
    Rejected { t: u64, reason: String },
}

impl TerminalStatus {
    pub fn is_completed(&self) -> bool {
        matches!(self, TerminalStatus::Completed)
    }

    pub fn is_diverged(&self) -> bool {
        matches!(self, TerminalStatus::Diverged { .. })
    }
}

/// Recorded path of one run of the recursion.
///
/// States are stored row-major (`dim` values per record). When a root is
/// known, `norm2[i] = ‖Z_t − z⁰‖²` for every record.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    pub(crate) dim: usize,
    pub(crate) start: DVector<f64>,
    pub(crate) root: Option<DVector<f64>>,
    pub(crate) times: Vec<u64>,
    pub(crate) states: Vec<f64>,
    pub(crate) norm2: Vec<f64>,
    pub(crate) projected: Vec<bool>,
    pub(crate) terminal: DVector<f64>,
    pub(crate) steps: u64,
    pub(crate) projections: u64,
    pub(crate) noise_draws: u64,
    pub(crate) status: TerminalStatus,
}

impl Trajectory {
    pub(crate) fn new(start: DVector<f64>, root: Option<DVector<f64>>, capacity: usize) -> Self {
        let dim = start.len();
        Self {
            dim,
            terminal: start.clone(),
            start,
            root,
            times: Vec::with_capacity(capacity),
            states: Vec::with_capacity(capacity * dim),
            norm2: Vec::new(),
            projected: Vec::with_capacity(capacity),
            steps: 0,
            projections: 0,
            noise_draws: 0,
            status: TerminalStatus::Completed,
        }
    }

    pub(crate) fn record(&mut self, t: u64, z: &DVector<f64>, projected: bool) {
        self.times.push(t);
        self.states.extend_from_slice(z.as_slice());
        if let Some(root) = &self.root {
            self.norm2.push((z - root).norm_squared());
        }
        self.projected.push(projected);
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn start(&self) -> &DVector<f64> {
        &self.start
    }

    pub fn root(&self) -> Option<&DVector<f64>> {
        self.root.as_ref()
    }

    pub fn times(&self) -> &[u64] {
        &self.times
    }

    pub fn state(&self, i: usize) -> DVectorView<'_, f64> {
        DVectorView::from_slice(&self.states[i * self.dim..(i + 1) * self.dim], self.dim)
    }

    /// Squared distances to the root, one per record; empty without a root.
    pub fn norm2(&self) -> &[f64] {
        &self.norm2
    }

    pub fn projected(&self) -> &[bool] {
        &self.projected
    }

    /// Last state reached (the start if no step completed).
    pub fn terminal_state(&self) -> &DVector<f64> {
        &self.terminal
    }

    pub fn terminal_error2(&self) -> Option<f64> {
        self.root.as_ref().map(|r| (&self.terminal - r).norm_squared())
    }

    /// Number of completed steps.
    pub fn steps(&self) -> u64 {
        self.steps
    }

    /// Number of completed steps whose update was moved by the projection.
    pub fn projections(&self) -> u64 {
        self.projections
    }

    pub fn noise_draws(&self) -> u64 {
        self.noise_draws
    }

    pub fn status(&self) -> &TerminalStatus {
        &self.status
    }

    /// CSV with header `t,z_1..z_m,norm2,projected`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["t".to_string()];
        header.extend((1..=self.dim).map(|i| format!("z_{i}")));
        header.push("norm2".into());
        header.push("projected".into());
        w.write_record(&header)?;
        for i in 0..self.len() {
            let mut row = vec![self.times[i].to_string()];
            row.extend(self.state(i).iter().map(|v| v.to_string()));
            row.push(self.norm2.get(i).map(|v| v.to_string()).unwrap_or_default());
            row.push(self.projected[i].to_string());
            w.write_record(&row)?;
        }
        w.flush()?;
        Ok(())
    }

    pub fn summary(&self) -> TrajectorySummary {
        TrajectorySummary {
            status: self.status.clone(),
            steps: self.steps,
            projections: self.projections,
            noise_draws: self.noise_draws,
            terminal_state: self.terminal.as_slice().to_vec(),
            terminal_error2: self.terminal_error2(),
        }
    }
}

/// JSON-friendly digest of a trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrajectorySummary {
    pub status: TerminalStatus,
    pub steps: u64,
    pub projections: u64,
    pub noise_draws: u64,
    pub terminal_state: Vec<f64>,
    pub terminal_error2: Option<f64>,
}
