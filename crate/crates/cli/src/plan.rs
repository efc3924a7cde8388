//! Plans and rules named on the command line or taken from a design report.

use std::path::PathBuf;

use clap::{Args, ValueEnum};
use rasp_core::SamplingPlan;
use serde::{Deserialize, Serialize};

use crate::error::{input, read_file, Result};
use crate::report::PlanReport;

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum DecisionKind {
    /// Accept when the posterior expected cost is at most the rejection cost.
    Bayes,
    /// Accept when the estimated reliability exceeds R0 (exact risk).
    Reliability,
    /// Reliability rule scored with the large-sample normal approximation.
    Approx,
}

impl DecisionKind {
    pub fn name(self) -> &'static str {
        match self {
            DecisionKind::Bayes => "bayes",
            DecisionKind::Reliability => "reliability",
            DecisionKind::Approx => "approx",
        }
    }
}

#[derive(Args, Debug, Clone, Default)]
pub struct PlanArgs {
    /// Sample size; 0 decides without testing.
    #[arg(long)]
    pub n: Option<u32>,
    /// Length of each inspection interval.
    #[arg(long, requires = "k")]
    pub h: Option<f64>,
    /// Number of inspections.
    #[arg(long, requires = "h")]
    pub k: Option<u32>,
    /// Inspection epochs, comma separated and increasing.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["h", "k"])]
    pub epochs: Option<Vec<f64>>,
    /// JSON report from `design` or `evaluate` whose plan and rule are reused.
    #[arg(long, conflicts_with_all = ["n", "h", "k", "epochs"])]
    pub from: Option<PathBuf>,
}

/// A plan plus whatever rule information came with it.
#[derive(Debug, Clone)]
pub struct Resolved {
    pub plan: SamplingPlan,
    pub decision: Option<DecisionKind>,
    pub r0: Option<f64>,
}

impl PlanArgs {
    pub fn resolve(&self) -> Result<Resolved> {
        if let Some(path) = &self.from {
            let text = read_file(path)?;
            let report: PlanReport = serde_json::from_str(&text)
                .map_err(|e| input(format!("{}: {e}", path.display())))?;
            return Ok(Resolved {
                plan: rebuild(&report.plan)?,
                decision: Some(report.decision),
                r0: report.r0(),
            });
        }
        let n = self.n.ok_or_else(|| {
            input("a plan is required: --n with --h and --k, or --n with --epochs, or --from")
        })?;
        let plan = if n == 0 {
            if self.h.is_some() || self.epochs.is_some() {
                return Err(input(
                    "--n 0 is the no-sampling plan and takes no inspections",
                ));
            }
            SamplingPlan::no_sampling()
        } else if let Some(epochs) = &self.epochs {
            SamplingPlan::new(n, epochs.clone())?
        } else {
            match (self.h, self.k) {
                (Some(h), Some(k)) => SamplingPlan::equal(n, h, k)?,
                _ => return Err(input("--n needs either --h and --k or --epochs")),
            }
        };
        Ok(Resolved {
            plan,
            decision: None,
            r0: None,
        })
    }
}

/// Re-validates a deserialized plan.
pub fn rebuild(plan: &SamplingPlan) -> Result<SamplingPlan> {
    if plan.n() == 0 && plan.k() == 0 {
        return Ok(SamplingPlan::no_sampling());
    }
    Ok(SamplingPlan::new(plan.n(), plan.epochs().to_vec())?)
}

/// Plans at `digits` decimals around `plan`: the interval length rounded
/// down and up, or each epoch rounded to nearest. Falls back to `plan`
/// itself when rounding would make it invalid.
pub fn rounded_plans(plan: &SamplingPlan, digits: u32) -> Vec<SamplingPlan> {
    if plan.is_no_sampling() {
        return vec![plan.clone()];
    }
    let scale = 10f64.powi(digits as i32);
    let mut out: Vec<SamplingPlan> = match plan.interval_length() {
        Some(h) => {
            let x = h * scale;
            let (lo, hi) = if (x - x.round()).abs() < 1e-9 {
                (x.round(), x.round())
            } else {
                (x.floor(), x.ceil())
            };
            [lo, hi]
                .into_iter()
                .filter_map(|v| SamplingPlan::equal(plan.n(), v / scale, plan.k() as u32).ok())
                .collect()
        }
        None => SamplingPlan::new(
            plan.n(),
            plan.epochs()
                .iter()
                .map(|&t| (t * scale).round() / scale)
                .collect(),
        )
        .into_iter()
        .collect(),
    };
    out.dedup();
    if out.is_empty() {
        out.push(plan.clone());
    }
    out
}

/// Representative of an optimal threshold step `[lower, upper)`: the
/// smallest two-decimal value inside it, else the midpoint.
pub fn tidy_threshold(lower: f64, upper: f64, mid: f64) -> f64 {
    let c = (lower * 100.0 - 1e-9).ceil() / 100.0;
    if c >= lower && c < upper && c <= 1.0 {
        c
    } else {
        mid
    }
}

pub fn describe(plan: &SamplingPlan) -> String {
    if plan.is_no_sampling() {
        return "no test (0, 0, 0)".to_owned();
    }
    match plan.interval_length() {
        Some(h) => format!("({}, {}, {})", plan.n(), trim(h), plan.k()),
        None => {
            let e: Vec<String> = plan.epochs().iter().map(|&t| trim(t)).collect();
            format!("n = {}, epochs [{}]", plan.n(), e.join(", "))
        }
    }
}

/// Shortest of the 10-significant-digit rendering and the exact one.
fn trim(x: f64) -> String {
    let short = format!("{:.10}", x);
    let short = short.trim_end_matches('0').trim_end_matches('.').to_owned();
    if short.len() < x.to_string().len() {
        short
    } else {
        x.to_string()
    }
}
