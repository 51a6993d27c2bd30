//! Analytic self-checks: the fast algebraic validations behind the
//! `verify` subcommand.

use smi_core::reputation::{
    closed_form_score, compute_threshold, interference_l, ReputationLedger, Scoring,
    UniquenessMode, Weights,
};
use smi_core::rng::SimRng;
use smi_core::units::{Duration, SimTime, SECS_PER_DAY};

#[derive(Debug, Clone)]
pub struct CheckResult {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

/// Weight and reputation constants the checks run against.
#[derive(Debug, Clone)]
pub struct VerifyInputs {
    pub weights: Result<Weights, smi_core::reputation::ReputationError>,
    pub per_epoch_increase: f64,
    pub epochs_to_threshold: u32,
    pub calibration_k: u32,
    pub proof_unit: f64,
}

impl Default for VerifyInputs {
    fn default() -> Self {
        VerifyInputs {
            weights: Ok(Weights::default()),
            per_epoch_increase: 1680.0,
            epochs_to_threshold: 3,
            calibration_k: 24,
            proof_unit: 100.0,
        }
    }
}

pub fn run_checks(inputs: &VerifyInputs) -> Vec<CheckResult> {
    let mut out = Vec::new();

    // 1. Weight constraint gate.
    let weights = match &inputs.weights {
        Ok(w) => {
            out.push(CheckResult {
                name: "weight-constraints",
                pass: true,
                detail: format!(
                    "alpha={} gamma={} delta={} w_untrusted={} w_trusted={}",
                    w.alpha, w.gamma, w.delta, w.w_untrusted, w.w_trusted
                ),
            });
            *w
        }
        Err(e) => {
            out.push(CheckResult {
                name: "weight-constraints",
                pass: false,
                detail: format!("construction rejected: {e}"),
            });
            // The remaining checks need a valid set; fall back to defaults
            // and keep reporting.
            Weights::default()
        }
    };

    // 2. Closed-form equivalence over random histories.
    let scoring = Scoring::calibrated(
        weights,
        inputs.proof_unit,
        inputs.per_epoch_increase,
        inputs.calibration_k,
        inputs.epochs_to_threshold,
    );
    let cf = closed_form_sample(&scoring, 1000);
    out.push(CheckResult {
        name: "closed-form-equivalence",
        pass: cf.0,
        detail: format!("1000 histories, max relative error {:.3e}", cf.1),
    });

    // 3. Threshold arithmetic.
    let policy = compute_threshold(
        0.28,
        inputs.epochs_to_threshold,
        inputs.calibration_k,
        inputs.per_epoch_increase,
    );
    match policy {
        Ok(p) => {
            let in_band = (5000.0..=5100.0).contains(&p.delta_threshold)
                || (inputs.per_epoch_increase - 1680.0).abs() > 1e-9;
            out.push(CheckResult {
                name: "threshold-arithmetic",
                pass: in_band,
                detail: format!(
                    "delta = {:.1} = {} x {:.1}",
                    p.delta_threshold, inputs.epochs_to_threshold, inputs.per_epoch_increase
                ),
            });
            // 4. Design inequality across the tested interference levels.
            let mut all = true;
            let mut details = Vec::new();
            for p_test in [0.1, 0.28, 0.54] {
                match p.design_inequality_holds(p_test) {
                    Ok(holds) => {
                        all &= holds;
                        details.push(format!(
                            "p={p_test}: delta_norm={:.1} {}",
                            p.normalized_threshold(p_test),
                            if holds { "holds" } else { "VIOLATED" }
                        ));
                    }
                    Err(e) => {
                        all = false;
                        details.push(format!("p={p_test}: {e}"));
                    }
                }
            }
            out.push(CheckResult {
                name: "design-inequality",
                pass: all,
                detail: details.join("; "),
            });
        }
        Err(e) => {
            out.push(CheckResult {
                name: "threshold-arithmetic",
                pass: false,
                detail: format!("policy construction failed: {e}"),
            });
        }
    }

    // 5. l(p) grid: monotone, with the symmetry point l(0.5) = 1.
    let mut monotone = true;
    let mut prev = f64::NEG_INFINITY;
    for i in 1..100 {
        let p = i as f64 / 100.0;
        let l = interference_l(p).expect("p in range");
        if l <= prev {
            monotone = false;
        }
        prev = l;
    }
    let l_half = interference_l(0.5).expect("0.5 in range");
    out.push(CheckResult {
        name: "interference-l-grid",
        pass: monotone && (l_half - 1.0).abs() < 1e-12,
        detail: format!("monotone on (0,1); l(0.5) = {l_half}"),
    });

    out
}

/// Recursion vs closed form over seeded random histories; returns
/// (all within 1e-9 relative, max relative error).
fn closed_form_sample(scoring: &Scoring, histories: u32) -> (bool, f64) {
    let day = Duration::from_secs(SECS_PER_DAY);
    let mut rng = SimRng::derive(2024, "verify.cf", 0);
    let mut max_rel = 0.0f64;
    for _ in 0..histories {
        let q = rng.index(10) + 1;
        let mut ledger = ReputationLedger::new(day, UniquenessMode::default(), SimTime::ZERO);
        let mut history = Vec::new();
        let mut now = SimTime::ZERO;
        for epoch in 0..q {
            let m1 = rng.index(40) as u32;
            let count = m1.max(1) as u64;
            for j in 0..m1 as u64 {
                let t = SimTime(now.as_millis() + (2 * j + 1) * day.as_millis() / (2 * count));
                ledger.record_interaction(
                    smi_core::reputation::ObservedLocation {
                        trust: smi_core::reputation::ObservedTrust::Untrusted,
                        credible: true,
                    },
                    t,
                );
            }
            history.push(scoring.weights.w_untrusted * m1 as f64);
            now = now + day;
            if epoch + 1 < q {
                ledger.close_epoch(&scoring.weights, now);
            }
        }
        let f2 = rng.index(5) as u32;
        ledger.f2_proofs = f2;
        let recursive = ledger.score(scoring);
        let closed = closed_form_score(&history, f2, scoring);
        let rel = (recursive - closed).abs() / closed.abs().max(1.0);
        max_rel = max_rel.max(rel);
    }
    (max_rel <= 1e-9, max_rel)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn default_inputs_pass_every_check() {
        let results = run_checks(&VerifyInputs::default());
        for r in &results {
            assert!(r.pass, "{}: {}", r.name, r.detail);
        }
        assert_eq!(results.len(), 5);
    }

    #[test]
    fn bad_alpha_fails_the_gate() {
        let inputs = VerifyInputs {
            weights: Weights::new(0.4, 1.0, 10.0, 2.0, 5.0),
            ..VerifyInputs::default()
        };
        let results = run_checks(&inputs);
        assert!(!results[0].pass);
        assert!(results[0].detail.contains("rejected"));
    }
}
