//! The `design`, `evaluate`, `decide` and `simulate` commands.

use std::path::Path;

use rasp_core::decision::assess;
use rasp_core::optimizer::approx_plan_risk;
use rasp_core::risk::bayes_risk;
use rasp_core::simulator::{empirical_oc, RateSource};
use rasp_core::{
    optimize_plan, optimize_plan_approx, optimize_threshold, DecisionRule, FailureRates,
    IntervalData, RiskReport, RuleKind, SamplingPlan,
};

use crate::config::RunConfig;
use crate::error::{input, read_file, Result};
use crate::plan::{rounded_plans, tidy_threshold, DecisionKind, Resolved};
use crate::report::{DecideReport, McSetup, PlanReport, SimulateReport, Unrounded};

/// Risk of one plan under one rule.
pub struct Evaluation {
    pub rule: DecisionRule,
    pub step: Option<[f64; 2]>,
    pub risk: RiskReport,
}

fn check_r0(r0: f64) -> Result<f64> {
    if (0.0..=1.0).contains(&r0) {
        Ok(r0)
    } else {
        Err(input(format!("--r0 must lie in [0, 1], got {r0}")))
    }
}

/// Scores `plan`; a missing reliability threshold is chosen to minimise the risk.
pub fn evaluate_plan(
    kind: DecisionKind,
    plan: &SamplingPlan,
    r0: Option<f64>,
    cfg: &RunConfig,
) -> Result<Evaluation> {
    let (prior, costs) = (&cfg.prior, &cfg.costs);
    if plan.is_no_sampling() {
        let risk = bayes_risk(plan, DecisionRule::Bayes, prior, costs)?;
        let rule = match kind {
            DecisionKind::Bayes => DecisionRule::Bayes,
            _ => DecisionRule::Reliability {
                r0: r0.map(check_r0).transpose()?.unwrap_or(1.0 - risk.p_accept),
            },
        };
        return Ok(Evaluation {
            rule,
            step: None,
            risk,
        });
    }
    match (kind, r0) {
        (DecisionKind::Bayes, _) => Ok(Evaluation {
            rule: DecisionRule::Bayes,
            step: None,
            risk: bayes_risk(plan, DecisionRule::Bayes, prior, costs)?,
        }),
        (DecisionKind::Reliability, Some(r0)) => {
            let rule = DecisionRule::Reliability { r0: check_r0(r0)? };
            Ok(Evaluation {
                rule,
                step: None,
                risk: bayes_risk(plan, rule, prior, costs)?,
            })
        }
        (DecisionKind::Reliability, None) => {
            let t = optimize_threshold(plan, prior, costs)?;
            let r0 = tidy_threshold(t.lower, t.upper, t.r0);
            Ok(Evaluation {
                rule: DecisionRule::Reliability { r0 },
                step: Some([t.lower, t.upper]),
                risk: t.report,
            })
        }
        (DecisionKind::Approx, Some(r0)) => {
            let r0 = check_r0(r0)?;
            let risk = approx_plan_risk(plan, r0, prior, costs, &cfg.search)?;
            Ok(Evaluation {
                rule: DecisionRule::Reliability { r0 },
                step: None,
                risk,
            })
        }
        (DecisionKind::Approx, None) => {
            Err(input("the approximate risk needs a threshold: pass --r0"))
        }
    }
}

fn monte_carlo(kind: DecisionKind, plan: &SamplingPlan, cfg: &RunConfig) -> Option<McSetup> {
    (kind == DecisionKind::Approx && !plan.is_no_sampling()).then_some(McSetup {
        draws: cfg.search.mc_draws,
        seed: cfg.search.seed,
    })
}

/// Searches for the optimal plan, then reports the better of its two
/// neighbours at the configured precision of `h`, re-evaluated.
pub fn design(kind: DecisionKind, cfg: &RunConfig) -> Result<PlanReport> {
    let (prior, costs, opts) = (&cfg.prior, &cfg.costs, &cfg.search);
    let found = match kind {
        DecisionKind::Bayes => optimize_plan(RuleKind::Bayes, prior, costs, opts)?,
        DecisionKind::Reliability => optimize_plan(RuleKind::Reliability, prior, costs, opts)?,
        DecisionKind::Approx => optimize_plan_approx(prior, costs, opts)?,
    };
    let digits = cfg
        .outputs
        .h_digits
        .unwrap_or(if kind == DecisionKind::Approx { 3 } else { 2 });
    let r0 = match (kind, found.rule) {
        (DecisionKind::Approx, DecisionRule::Reliability { r0 }) => Some(r0),
        _ => None,
    };
    let mut best: Option<(SamplingPlan, Evaluation)> = None;
    for plan in rounded_plans(&found.plan, digits) {
        let ev = evaluate_plan(kind, &plan, r0, cfg)?;
        if best
            .as_ref()
            .is_none_or(|(_, b)| ev.risk.total_risk < b.risk.total_risk)
        {
            best = Some((plan, ev));
        }
    }
    let (plan, ev) = best.expect("at least one rounded plan");
    let unrounded = (plan != found.plan).then(|| Unrounded {
        plan: found.plan.clone(),
        total_risk: found.report.total_risk,
    });
    Ok(PlanReport {
        command: "design".into(),
        decision: kind,
        interval_length: plan.interval_length(),
        monte_carlo: monte_carlo(kind, &plan, cfg),
        plan,
        rule: ev.rule,
        threshold_step: ev.step,
        risk: ev.risk,
        unrounded,
    })
}

/// Picks the rule kind from the flag, then the source report, then `bayes`.
fn kind_and_r0(
    flag: Option<DecisionKind>,
    r0: Option<f64>,
    resolved: &Resolved,
) -> (DecisionKind, Option<f64>) {
    let kind = flag.or(resolved.decision).unwrap_or(DecisionKind::Bayes);
    let inherited = if flag.is_none() || flag == resolved.decision {
        resolved.r0
    } else {
        None
    };
    (kind, r0.or(inherited))
}

pub fn evaluate(
    cfg: &RunConfig,
    flag: Option<DecisionKind>,
    r0: Option<f64>,
    resolved: Resolved,
) -> Result<PlanReport> {
    let (kind, r0) = kind_and_r0(flag, r0, &resolved);
    let ev = evaluate_plan(kind, &resolved.plan, r0, cfg)?;
    Ok(PlanReport {
        command: "evaluate".into(),
        decision: kind,
        interval_length: resolved.plan.interval_length(),
        monte_carlo: monte_carlo(kind, &resolved.plan, cfg),
        plan: resolved.plan,
        rule: ev.rule,
        threshold_step: ev.step,
        risk: ev.risk,
        unrounded: None,
    })
}

/// Reads a counts file: header `interval,cause_1,…,cause_J`, one row per
/// inspection in time order; trailing rows may be omitted after every unit failed.
pub fn read_counts(path: &Path, causes: usize) -> Result<Vec<Vec<u32>>> {
    let text = read_file(path)?;
    parse_counts(&text, causes).map_err(|e| input(format!("{}: {e}", path.display())))
}

pub fn parse_counts(text: &str, causes: usize) -> Result<Vec<Vec<u32>>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_reader(text.as_bytes());
    let header = reader.headers().map_err(|e| input(e.to_string()))?.clone();
    let expected: Vec<String> = std::iter::once("interval".to_owned())
        .chain((1..=causes).map(|j| format!("cause_{j}")))
        .collect();
    if header.iter().ne(expected.iter().map(String::as_str)) {
        return Err(input(format!(
            "header must be `{}`, found `{}`",
            expected.join(","),
            header.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut rows = Vec::new();
    for (i, record) in reader.records().enumerate() {
        let record = record.map_err(|e| input(e.to_string()))?;
        let line = i + 2;
        let field = |c: usize| -> Result<u32> {
            record[c].parse().map_err(|_| {
                input(format!(
                    "line {line}: `{}` is not a non-negative count",
                    &record[c]
                ))
            })
        };
        if field(0)? as usize != i + 1 {
            return Err(input(format!(
                "line {line}: interval {} out of order, expected {}",
                &record[0],
                i + 1
            )));
        }
        rows.push((1..=causes).map(field).collect::<Result<Vec<u32>>>()?);
    }
    Ok(rows)
}

pub fn decide(
    cfg: &RunConfig,
    flag: Option<DecisionKind>,
    r0: Option<f64>,
    resolved: Resolved,
    data: &Path,
) -> Result<DecideReport> {
    if resolved.plan.is_no_sampling() {
        return Err(input("decide needs a plan with units on test"));
    }
    let (kind, r0) = kind_and_r0(flag, r0, &resolved);
    let causes = cfg.prior.causes();
    let counts = read_counts(data, causes)?;
    let data = IntervalData::for_plan(&resolved.plan, causes, counts)?;
    let rule = match kind {
        DecisionKind::Bayes => DecisionRule::Bayes,
        _ => evaluate_rule(kind, &resolved.plan, r0, cfg)?,
    };
    let a = assess(&resolved.plan, &data, &cfg.prior, &cfg.costs, rule)?;
    Ok(DecideReport {
        command: "decide".into(),
        decision: kind,
        rule,
        counts: data.counts().to_vec(),
        total_rate: a.estimate.as_ref().map(|e| e.total),
        cause_rates: a.estimate.as_ref().map(|e| e.per_cause.clone()),
        fallback: a.estimate.as_ref().is_some_and(|e| e.used_fallback),
        reliability: a.reliability,
        phi: a.phi,
        c_reject: cfg.costs.c_reject,
        verdict: a.verdict,
        plan: resolved.plan,
    })
}

/// Reliability rule with the given threshold, or the risk-minimising one.
fn evaluate_rule(
    kind: DecisionKind,
    plan: &SamplingPlan,
    r0: Option<f64>,
    cfg: &RunConfig,
) -> Result<DecisionRule> {
    match r0 {
        Some(r0) => Ok(DecisionRule::Reliability { r0: check_r0(r0)? }),
        None if kind == DecisionKind::Approx => {
            Err(input("the approximate rule needs a threshold: pass --r0"))
        }
        None => Ok(evaluate_plan(kind, plan, None, cfg)?.rule),
    }
}

pub struct SimulateArgs {
    pub reps: usize,
    pub seed: u64,
    pub rates: Option<Vec<f64>>,
}

pub fn simulate(
    cfg: &RunConfig,
    flag: Option<DecisionKind>,
    r0: Option<f64>,
    resolved: Resolved,
    args: SimulateArgs,
) -> Result<SimulateReport> {
    if resolved.plan.is_no_sampling() {
        return Err(input("simulate needs a plan with units on test"));
    }
    if args.reps == 0 {
        return Err(input("--reps must be at least 1"));
    }
    let (kind, r0) = kind_and_r0(flag, r0, &resolved);
    let rule = match kind {
        DecisionKind::Bayes => DecisionRule::Bayes,
        _ => evaluate_rule(kind, &resolved.plan, r0, cfg)?,
    };
    let fixed = args.rates.clone().map(FailureRates::new).transpose()?;
    let source = match &fixed {
        Some(r) => RateSource::Fixed(r),
        None => RateSource::Prior,
    };
    let oc = empirical_oc(
        &resolved.plan,
        rule,
        &cfg.prior,
        &cfg.costs,
        source,
        args.reps,
        args.seed,
    )?;
    let mut notes = Vec::new();
    if args.reps == 1 {
        notes.push("standard errors are undefined for a single replication".to_owned());
    }
    Ok(SimulateReport {
        command: "simulate".into(),
        decision: kind,
        plan: resolved.plan,
        rule,
        fixed_rates: args.rates,
        seed: args.seed,
        oc,
        notes,
    })
}
