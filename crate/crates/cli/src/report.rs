//! JSON reports and their aligned-text summaries.

use std::fmt::Write as _;
use std::path::Path;

use rasp_core::simulator::{Estimate, OperatingCharacteristics};
use rasp_core::{DecisionRule, RiskReport, SamplingPlan, Verdict};
use serde::{Deserialize, Serialize};

use crate::config::{Format, Outputs};
use crate::error::{write_file, Result};
use crate::plan::{describe, DecisionKind};

/// Plan as it was before `h` was rounded for reporting.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Unrounded {
    pub plan: SamplingPlan,
    pub total_risk: f64,
}

/// Monte Carlo settings behind an approximate risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct McSetup {
    pub draws: usize,
    pub seed: u64,
}

/// Output of `design` and `evaluate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlanReport {
    pub command: String,
    pub decision: DecisionKind,
    pub plan: SamplingPlan,
    pub interval_length: Option<f64>,
    pub rule: DecisionRule,
    /// Every threshold in `[lower, upper)` gives the same risk.
    pub threshold_step: Option<[f64; 2]>,
    pub risk: RiskReport,
    pub unrounded: Option<Unrounded>,
    pub monte_carlo: Option<McSetup>,
}

impl PlanReport {
    pub fn r0(&self) -> Option<f64> {
        match self.rule {
            DecisionRule::Reliability { r0 } => Some(r0),
            DecisionRule::Bayes => None,
        }
    }

    pub fn summary(&self) -> String {
        let mut s = String::new();
        line(&mut s, "command", &self.command);
        line(&mut s, "decision", self.decision.name());
        line(&mut s, "plan (n, h, k)", &describe(&self.plan));
        if !self.plan.is_no_sampling() {
            let e: Vec<String> = self
                .plan
                .epochs()
                .iter()
                .map(|t| format!("{t:.6}"))
                .collect();
            line(&mut s, "epochs", &e.join(", "));
        } else {
            let v = if self.risk.p_accept > 0.0 {
                "accept without testing"
            } else {
                "reject without testing"
            };
            line(&mut s, "verdict", v);
        }
        if let Some(r0) = self.r0() {
            let mut v = format!("{r0:.6}");
            if let Some([lo, hi]) = self.threshold_step {
                let _ = write!(v, "  (same risk on [{lo:.4}, {hi:.4}))");
            }
            line(&mut s, "threshold R0", &v);
        }
        line(
            &mut s,
            "Bayes risk",
            &format!("{:.6}", self.risk.total_risk),
        );
        for t in &self.risk.decomposition {
            line(
                &mut s,
                &format!("  {}", t.label),
                &format!("{:.6}", t.value),
            );
        }
        line(&mut s, "P(A)", &format!("{:.4}", self.risk.p_accept));
        line(&mut s, "E[D_t]", &format!("{:.4}", self.risk.e_failures));
        line(&mut s, "E[tau]", &format!("{:.4}", self.risk.e_duration));
        line(&mut s, "E[M]", &format!("{:.4}", self.risk.e_inspections));
        if let Some(u) = &self.unrounded {
            line(
                &mut s,
                "before rounding",
                &format!("{} at risk {:.6}", describe(&u.plan), u.total_risk),
            );
        }
        if let Some(mc) = self.monte_carlo {
            line(
                &mut s,
                "monte carlo",
                &format!("{} draws, seed {}", mc.draws, mc.seed),
            );
        }
        s
    }
}

/// Output of `decide`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecideReport {
    pub command: String,
    pub decision: DecisionKind,
    pub plan: SamplingPlan,
    pub rule: DecisionRule,
    pub counts: Vec<Vec<u32>>,
    /// `None` when every unit failed in the first interval.
    pub total_rate: Option<f64>,
    pub cause_rates: Option<Vec<f64>>,
    /// No failures were seen, so the total rate is `1/(n τ_k)`.
    pub fallback: bool,
    pub reliability: f64,
    pub phi: f64,
    pub c_reject: f64,
    pub verdict: Verdict,
}

impl DecideReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        line(&mut s, "command", &self.command);
        line(&mut s, "decision", self.decision.name());
        line(&mut s, "plan (n, h, k)", &describe(&self.plan));
        let rows: Vec<String> = self
            .counts
            .iter()
            .map(|r| {
                format!(
                    "({})",
                    r.iter().map(u32::to_string).collect::<Vec<_>>().join(", ")
                )
            })
            .collect();
        line(&mut s, "counts", &rows.join(" "));
        match (&self.total_rate, &self.cause_rates) {
            (Some(t), Some(c)) => {
                let per: Vec<String> = c.iter().map(|v| format!("{v:.6}")).collect();
                let note = if self.fallback {
                    "  (no failures: 1/(n tau_k) used)"
                } else {
                    ""
                };
                line(&mut s, "rate estimate", &format!("{t:.6}{note}"));
                line(&mut s, "per cause", &per.join(", "));
            }
            _ => line(
                &mut s,
                "rate estimate",
                "unbounded (all units failed in the first interval)",
            ),
        }
        line(&mut s, "reliability", &format!("{:.6}", self.reliability));
        line(&mut s, "phi(d)", &format!("{:.6}", self.phi));
        line(&mut s, "C_r", &format!("{}", self.c_reject));
        if let DecisionRule::Reliability { r0 } = self.rule {
            line(&mut s, "threshold R0", &format!("{r0:.6}"));
        }
        let v = match self.verdict {
            Verdict::Accept => "accept the lot",
            Verdict::Reject => "reject the lot",
        };
        line(&mut s, "verdict", v);
        s
    }
}

/// Output of `simulate`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SimulateReport {
    pub command: String,
    pub decision: DecisionKind,
    pub plan: SamplingPlan,
    pub rule: DecisionRule,
    /// `None` when rates are drawn from the prior in every replication.
    pub fixed_rates: Option<Vec<f64>>,
    pub seed: u64,
    pub oc: OperatingCharacteristics,
    pub notes: Vec<String>,
}

impl SimulateReport {
    pub fn summary(&self) -> String {
        let mut s = String::new();
        line(&mut s, "command", &self.command);
        line(&mut s, "decision", self.decision.name());
        line(&mut s, "plan (n, h, k)", &describe(&self.plan));
        if let DecisionRule::Reliability { r0 } = self.rule {
            line(&mut s, "threshold R0", &format!("{r0:.6}"));
        }
        let source = match &self.fixed_rates {
            Some(r) => format!("fixed rates {r:?}"),
            None => "prior draws".to_owned(),
        };
        line(&mut s, "rates", &source);
        line(
            &mut s,
            "replications",
            &format!("{} (seed {})", self.oc.reps, self.seed),
        );
        line(&mut s, "P(A)", &estimate(&self.oc.p_accept));
        line(&mut s, "E[D_t]", &estimate(&self.oc.e_failures));
        line(&mut s, "E[tau]", &estimate(&self.oc.e_duration));
        line(&mut s, "E[M]", &estimate(&self.oc.e_inspections));
        for n in &self.notes {
            line(&mut s, "note", n);
        }
        s
    }
}

fn estimate(e: &Estimate) -> String {
    match e.std_error {
        Some(se) => format!("{:.6} ± {:.6}", e.mean, se),
        None => format!("{:.6} (s.e. undefined)", e.mean),
    }
}

fn line(s: &mut String, key: &str, value: &str) {
    let _ = writeln!(s, "{key:<18}{value}");
}

/// Writes the JSON report to `out` (or the configured path) and the summary
/// to stdout; with no path, stdout gets whichever format is configured.
pub fn emit<T: Serialize>(
    report: &T,
    summary: &str,
    out: Option<&Path>,
    outputs: &Outputs,
) -> Result<()> {
    let json = serde_json::to_string_pretty(report).expect("reports serialise") + "\n";
    match out.or(outputs.report.as_deref()) {
        Some(path) => {
            write_file(path, &json)?;
            print!("{summary}");
        }
        None => match outputs.format {
            Format::Text => print!("{summary}"),
            Format::Json => print!("{json}"),
        },
    }
    Ok(())
}
