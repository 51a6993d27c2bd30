//! Run outputs: convergence records, score series, traffic counters.

use alloc::string::String;
use alloc::vec::Vec;

use serde::{Deserialize, Serialize};

use crate::units::SimTime;

/// One observer→peer authentication trajectory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub observer: String,
    pub peer: String,
    /// First instant the observer's score of the peer crossed the
    /// threshold, if it ever did.
    pub converged_at: Option<SimTime>,
    /// Successful exchanges observed up to convergence (or horizon).
    pub noe: u32,
    pub exchanges_attempted: u32,
    /// Mobility model of the observed peer.
    pub peer_model: String,
}

/// Sampled score row for the CSV export.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreSample {
    pub observer: String,
    pub peer: String,
    pub at: SimTime,
    pub score: f64,
    pub f1: f64,
    pub f2: f64,
    pub epoch_index: u32,
}

/// One line of the message trace (enabled by `trace`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptLine {
    pub at_ms: u64,
    pub from: String,
    pub to: String,
    pub variant: String,
    pub channel: String,
    pub sms_segments: u32,
    pub outcome: String,
}

/// Aggregate traffic and protocol counters.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Counters {
    pub events_processed: u64,
    pub messages_sent: u64,
    pub messages_delivered: u64,
    pub messages_intercepted: u64,
    pub messages_failed: u64,
    pub sms_segments_sent: u64,
    pub epochs_completed: u64,
    pub epochs_aborted: u64,
    pub audits: u64,
    pub probes_sent: u64,
    pub probes_answered: u64,
    pub proofs_issued: u64,
}

/// Everything a finished run reports.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunMetrics {
    pub seed: u64,
    pub horizon: SimTime,
    pub node_count: u32,
    pub threshold: f64,
    pub convergence: Vec<ConvergenceRecord>,
    pub scores: Vec<ScoreSample>,
    pub counters: Counters,
    /// Fraction of trajectories that never reached the threshold.
    pub lambda: f64,
    /// Mean convergence time in hours, failures coded at the horizon.
    pub mean_convergence_hours: f64,
    /// Mean exchanges-to-threshold over converged trajectories.
    pub mean_noe: f64,
    pub transcript: Vec<TranscriptLine>,
}

impl RunMetrics {
    /// Derives the aggregate statistics from the convergence records.
    pub fn finalize(&mut self) {
        let n = self.convergence.len();
        if n == 0 {
            self.lambda = 0.0;
            self.mean_convergence_hours = 0.0;
            self.mean_noe = 0.0;
            return;
        }
        let mut failed = 0usize;
        let mut hours = 0.0;
        let mut noe_sum = 0.0;
        let mut noe_n = 0usize;
        for rec in &self.convergence {
            match rec.converged_at {
                Some(t) => {
                    hours += t.as_hours_f64();
                    noe_sum += rec.noe as f64;
                    noe_n += 1;
                }
                None => {
                    failed += 1;
                    hours += self.horizon.as_hours_f64();
                }
            }
        }
        self.lambda = failed as f64 / n as f64;
        self.mean_convergence_hours = hours / n as f64;
        self.mean_noe = if noe_n > 0 { noe_sum / noe_n as f64 } else { 0.0 };
    }

    /// Mean convergence hours over records whose peer moved under `model`.
    pub fn mean_hours_for_model(&self, model: &str) -> Option<f64> {
        let subset: Vec<f64> = self
            .convergence
            .iter()
            .filter(|r| r.peer_model == model)
            .map(|r| r.converged_at.unwrap_or(self.horizon).as_hours_f64())
            .collect();
        if subset.is_empty() {
            None
        } else {
            Some(subset.iter().sum::<f64>() / subset.len() as f64)
        }
    }

    /// Mean exchanges-to-threshold over records whose peer moved under
    /// `model`; unconverged records contribute their attempt count.
    pub fn mean_noe_for_model(&self, model: &str) -> Option<f64> {
        let subset: Vec<f64> = self
            .convergence
            .iter()
            .filter(|r| r.peer_model == model)
            .map(|r| if r.converged_at.is_some() { r.noe as f64 } else { r.exchanges_attempted as f64 })
            .collect();
        if subset.is_empty() {
            None
        } else {
            Some(subset.iter().sum::<f64>() / subset.len() as f64)
        }
    }
}
