//! Run artifacts: summary JSON, score and convergence CSVs, and the
//! optional message transcript.
//!
//! Everything written here is a pure function of the trial results, which
//! are themselves pure functions of (preset, seed), so re-running a
//! configuration reproduces every file byte for byte.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use serde::Serialize;

use smi_core::metrics::Counters;

use crate::presets::{experiment_hash, noe_by_model, Experiment, ExperimentKind};
use crate::runner::TrialResult;

#[derive(Debug, Clone, Serialize)]
pub struct ArmSummary {
    pub label: String,
    pub seeds: u32,
    pub records: u32,
    pub converged: u32,
    pub lambda: f64,
    pub mean_convergence_hours: f64,
    pub mean_noe: f64,
    pub counters: Counters,
    /// Mean exchanges-to-threshold per mobility model, when the population
    /// mixes models.
    pub noe_by_model: BTreeMap<String, f64>,
}

#[derive(Debug, Clone, Serialize)]
pub struct Summary {
    pub version: String,
    pub preset: String,
    pub preset_hash: String,
    pub seeds: Vec<u64>,
    pub threshold: f64,
    pub arms: Vec<ArmSummary>,
    /// Growth experiment: adversarial time over clean time.
    pub growth_slowdown: Option<f64>,
    /// Bootstrap experiment: plain time over verifier time.
    pub bootstrap_speedup: Option<f64>,
    pub config: serde_json::Value,
}

fn mean(values: impl Iterator<Item = f64>) -> f64 {
    let v: Vec<f64> = values.collect();
    if v.is_empty() {
        0.0
    } else {
        v.iter().sum::<f64>() / v.len() as f64
    }
}

/// Aggregates trials into the summary structure.
pub fn summarize(exp: &Experiment, seeds: &[u64], trials: &[TrialResult]) -> Summary {
    let mut arms = Vec::new();
    for arm in &exp.arms {
        let own: Vec<&TrialResult> = trials.iter().filter(|t| t.arm == arm.label).collect();
        let mut counters = Counters::default();
        let mut records = 0u32;
        let mut converged = 0u32;
        for t in &own {
            let c = &t.metrics.counters;
            counters.events_processed += c.events_processed;
            counters.messages_sent += c.messages_sent;
            counters.messages_delivered += c.messages_delivered;
            counters.messages_intercepted += c.messages_intercepted;
            counters.messages_failed += c.messages_failed;
            counters.sms_segments_sent += c.sms_segments_sent;
            counters.epochs_completed += c.epochs_completed;
            counters.epochs_aborted += c.epochs_aborted;
            counters.audits += c.audits;
            counters.probes_sent += c.probes_sent;
            counters.probes_answered += c.probes_answered;
            counters.proofs_issued += c.proofs_issued;
            records += t.metrics.convergence.len() as u32;
            converged +=
                t.metrics.convergence.iter().filter(|r| r.converged_at.is_some()).count() as u32;
        }
        // Per-model NOE means, averaged over seeds.
        let mut by_model: BTreeMap<String, Vec<f64>> = BTreeMap::new();
        for t in &own {
            for (model, noe) in noe_by_model(&t.metrics) {
                by_model.entry(model).or_default().push(noe);
            }
        }
        let noe_by_model: BTreeMap<String, f64> = by_model
            .into_iter()
            .map(|(m, v)| (m, v.iter().sum::<f64>() / v.len() as f64))
            .collect();
        arms.push(ArmSummary {
            label: arm.label.clone(),
            seeds: own.len() as u32,
            records,
            converged,
            lambda: mean(own.iter().map(|t| t.metrics.lambda)),
            mean_convergence_hours: mean(own.iter().map(|t| t.metrics.mean_convergence_hours)),
            mean_noe: mean(own.iter().map(|t| t.metrics.mean_noe)),
            counters,
            noe_by_model,
        });
    }

    // Subject-observer experiments compare one direction: the observer's
    // score of the mobile subject.
    let subject_hours = |label: &str| -> Option<f64> {
        let hours: Vec<f64> = trials
            .iter()
            .filter(|t| t.arm == label)
            .flat_map(|t| {
                t.metrics.convergence.iter().filter(|r| r.peer == "d-00000").map(|r| {
                    r.converged_at
                        .map(|at| at.as_hours_f64())
                        .unwrap_or(t.metrics.horizon.as_hours_f64())
                })
            })
            .collect();
        (!hours.is_empty()).then(|| hours.iter().sum::<f64>() / hours.len() as f64)
    };
    let ratio_of = |num: &str, den: &str| -> Option<f64> {
        let n = subject_hours(num)?;
        let d = subject_hours(den)?;
        (d > 0.0).then(|| n / d)
    };
    let growth_slowdown =
        (exp.kind == ExperimentKind::Growth).then(|| ratio_of("adversarial", "clean")).flatten();
    let bootstrap_speedup =
        (exp.kind == ExperimentKind::Bootstrap).then(|| ratio_of("plain", "verifier")).flatten();

    let threshold = trials.first().map(|t| t.metrics.threshold).unwrap_or(0.0);
    Summary {
        version: env!("CARGO_PKG_VERSION").to_string(),
        preset: exp.name.clone(),
        preset_hash: experiment_hash(exp),
        seeds: seeds.to_vec(),
        threshold,
        arms,
        growth_slowdown,
        bootstrap_speedup,
        config: serde_json::to_value(
            exp.arms.iter().map(|a| (&a.label, &a.cfg)).collect::<Vec<_>>(),
        )
        .expect("config serializes"),
    }
}

/// Writes summary.json, convergence.csv, scores.csv and (when traced)
/// transcript.jsonl under `out_dir`.
pub fn write_artifacts(
    out_dir: &Path,
    exp: &Experiment,
    seeds: &[u64],
    trials: &[TrialResult],
) -> std::io::Result<Summary> {
    fs::create_dir_all(out_dir)?;
    let summary = summarize(exp, seeds, trials);

    let mut summary_file = fs::File::create(out_dir.join("summary.json"))?;
    serde_json::to_writer_pretty(&mut summary_file, &summary)?;
    summary_file.write_all(b"\n")?;

    let mut conv = csv::Writer::from_path(out_dir.join("convergence.csv"))?;
    conv.write_record([
        "arm",
        "seed",
        "observer",
        "peer",
        "peer_model",
        "converged",
        "hours",
        "noe",
        "attempts",
    ])?;
    for t in trials {
        for r in &t.metrics.convergence {
            let hours = r
                .converged_at
                .map(|at| at.as_hours_f64())
                .unwrap_or(t.metrics.horizon.as_hours_f64());
            conv.write_record([
                t.arm.as_str(),
                &t.seed.to_string(),
                &r.observer,
                &r.peer,
                &r.peer_model,
                if r.converged_at.is_some() { "1" } else { "0" },
                &format!("{hours:.6}"),
                &r.noe.to_string(),
                &r.exchanges_attempted.to_string(),
            ])?;
        }
    }
    conv.flush()?;

    let mut scores = csv::Writer::from_path(out_dir.join("scores.csv"))?;
    scores.write_record([
        "arm",
        "seed",
        "observer_id",
        "peer_id",
        "sim_time_s",
        "score",
        "f1",
        "f2",
        "epoch_index",
    ])?;
    for t in trials {
        for s in &t.metrics.scores {
            scores.write_record([
                t.arm.as_str(),
                &t.seed.to_string(),
                &s.observer,
                &s.peer,
                &s.at.as_secs().to_string(),
                &format!("{:.9}", s.score),
                &format!("{:.9}", s.f1),
                &format!("{:.9}", s.f2),
                &s.epoch_index.to_string(),
            ])?;
        }
    }
    scores.flush()?;

    if trials.iter().any(|t| !t.metrics.transcript.is_empty()) {
        let mut out = fs::File::create(out_dir.join("transcript.jsonl"))?;
        for t in trials {
            for line in &t.metrics.transcript {
                #[derive(Serialize)]
                struct Line<'a> {
                    arm: &'a str,
                    seed: u64,
                    #[serde(flatten)]
                    line: &'a smi_core::metrics::TranscriptLine,
                }
                serde_json::to_writer(&mut out, &Line { arm: &t.arm, seed: t.seed, line })?;
                out.write_all(b"\n")?;
            }
        }
    }
    Ok(summary)
}
