//! Search for the plan (and threshold) of least Bayes risk.
//!
//! The exact search is a best-first branch and bound over `(n, k, h)` cells.
//! Each cell has a cheap lower bound: the test costs, which need only the
//! prior probabilities that every unit has failed by each inspection, plus
//! [`penalty_floor`]. The bound grows with `n`, with `k` at fixed `h`, and
//! (through `E[τ] ≥ h`) with `h` at `k = 1`, which gives the loop exits.

use std::collections::HashMap;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::asymptotics::{normal_accept, total_rate_information};
use crate::decision::{CostModel, DecisionRule};
use crate::error::{invalid, Error, Result};
use crate::kernel::{GammaMixture, Kernel};
use crate::model::SamplingPlan;
use crate::numeric::{ln_binomial, KahanSum};
use crate::outcomes::SpreadTable;
use crate::prior::{expected_acceptance_cost, sample_prior, PriorSpec};
use crate::risk::{
    all_failed_prob, counts_from, penalty_floor, ExpectedCounts, ProfileTerm, RiskEngine,
    RiskReport, ThresholdChoice,
};

/// Inspection cap used when inspections are free.
pub const DEFAULT_K_CAP: u32 = 10;

/// Cells evaluated between two updates of the incumbent.
const BATCH: usize = 32;
/// Grid-optimal cells this close to the incumbent get a continuous refinement.
const REFINE_MARGIN: f64 = 0.01;
const REFINE_CELLS: usize = 5;
const FREE_SWEEPS: usize = 20;
/// Quadrature step in `ln ν` while screening the approximate objective.
const SCREEN_STEP: f64 = 0.02;
/// Screened cells this close to the best are re-scored by Monte Carlo.
const APPROX_MARGIN: f64 = 0.1;
const APPROX_CANDIDATES: usize = 60;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SearchMode {
    EqualIntervals,
    FreeIntervals,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RuleKind {
    Reliability,
    Bayes,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SearchOptions {
    pub mode: SearchMode,
    /// Step of the coarse interval-length grid.
    pub h_grid: f64,
    /// Tolerance of the continuous refinement in `h`.
    pub refine_tol: f64,
    pub n_cap: Option<u32>,
    pub k_cap: Option<u32>,
    /// Cap on the last inspection time.
    pub tau_cap: Option<f64>,
    pub mc_draws: usize,
    pub seed: u64,
}

impl Default for SearchOptions {
    fn default() -> Self {
        Self {
            mode: SearchMode::EqualIntervals,
            h_grid: 0.01,
            refine_tol: 1e-4,
            n_cap: None,
            k_cap: None,
            tau_cap: None,
            mc_draws: 100_000,
            seed: 1,
        }
    }
}

impl SearchOptions {
    pub fn validate(&self) -> Result<()> {
        if !(self.h_grid > 0.0 && self.h_grid.is_finite()) {
            return Err(invalid("h_grid", "must be positive"));
        }
        if !(self.refine_tol > 0.0) {
            return Err(invalid("refine_tol", "must be positive"));
        }
        if self.mc_draws == 0 {
            return Err(invalid("mc_draws", "at least one draw is required"));
        }
        if let Some(t) = self.tau_cap {
            if !(t >= 0.0) {
                return Err(invalid("tau_cap", "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Upper bounds on `n`, `k` and `τ_k` implied by the no-sampling risk.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SearchBounds {
    pub n0: u32,
    /// `min{E[h(ν)], C_r}`.
    pub budget: f64,
    unit: f64,
    c_inspect: f64,
    c_time: f64,
}

impl SearchBounds {
    /// `⌊(budget - (C_s - r_s) n) / C_I⌋`; `None` when inspections are free.
    pub fn k0(&self, n: u32) -> Option<u32> {
        if self.c_inspect == 0.0 {
            return None;
        }
        let v = ((self.budget - self.unit * f64::from(n)) / self.c_inspect).floor();
        Some(v.clamp(0.0, f64::from(u32::MAX)) as u32)
    }

    /// `(budget - (C_s - r_s) n - C_I k) / C_τ`; `None` when time is free.
    pub fn tau_bound(&self, n: u32, k: u32) -> Option<f64> {
        if self.c_time == 0.0 {
            return None;
        }
        Some(
            ((self.budget - self.unit * f64::from(n) - self.c_inspect * f64::from(k))
                / self.c_time)
                .max(0.0),
        )
    }
}

pub fn search_bounds(costs: &CostModel, prior: &PriorSpec) -> Result<SearchBounds> {
    let budget = expected_acceptance_cost(prior, costs)?.min(costs.c_reject);
    let unit = costs.c_sample - costs.salvage;
    Ok(SearchBounds {
        n0: (budget / unit).floor().clamp(0.0, f64::from(u32::MAX)) as u32,
        budget,
        unit,
        c_inspect: costs.c_inspect,
        c_time: costs.c_time,
    })
}

/// Time by which a unit has failed with prior-predictive probability 0.999;
/// the last-inspection cap when test time is free.
fn default_tau_cap(prior: &PriorSpec) -> f64 {
    prior.eta() * (1000f64.powf(1.0 / prior.alpha()) - 1.0)
}

struct Limits {
    bounds: SearchBounds,
    n_max: u32,
    k_cap: u32,
    tau_cap: f64,
}

impl Limits {
    fn new(prior: &PriorSpec, costs: &CostModel, opts: &SearchOptions) -> Result<Self> {
        opts.validate()?;
        let bounds = search_bounds(costs, prior)?;
        let default_k = if costs.c_inspect == 0.0 {
            DEFAULT_K_CAP
        } else {
            u32::MAX
        };
        let default_tau = if costs.c_time == 0.0 {
            default_tau_cap(prior)
        } else {
            f64::INFINITY
        };
        Ok(Self {
            bounds,
            n_max: opts.n_cap.map_or(bounds.n0, |c| c.min(bounds.n0)),
            k_cap: opts.k_cap.unwrap_or(default_k),
            tau_cap: opts.tau_cap.unwrap_or(default_tau),
        })
    }

    fn k_max(&self, n: u32) -> u32 {
        self.bounds.k0(n).map_or(self.k_cap, |k| k.min(self.k_cap))
    }

    fn tau_max(&self, n: u32, k: u32) -> f64 {
        self.bounds
            .tau_bound(n, k)
            .map_or(self.tau_cap, |t| t.min(self.tau_cap))
    }
}

/// Reliability threshold minimising the risk of a fixed plan.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalThreshold {
    /// Midpoint of the optimal step of thresholds.
    pub r0: f64,
    /// Every threshold in `[lower, upper)` has the same risk.
    pub lower: f64,
    pub upper: f64,
    pub report: RiskReport,
}

pub fn optimize_threshold(
    plan: &SamplingPlan,
    prior: &PriorSpec,
    costs: &CostModel,
) -> Result<OptimalThreshold> {
    let mut engine = RiskEngine::new(prior, costs)?;
    if plan.is_no_sampling() {
        return Ok(OptimalThreshold {
            r0: 0.5,
            lower: 0.0,
            upper: 1.0,
            report: engine.no_sampling_report()?,
        });
    }
    engine.reserve(plan.n());
    let terms = engine.terms(plan, None)?;
    let t = engine.threshold(&terms);
    let report = RiskReport::assemble(costs, plan.n(), engine.counts(plan)?, t.penalty, t.p_accept);
    Ok(OptimalThreshold {
        r0: t.r0,
        lower: t.lower,
        upper: t.upper,
        report,
    })
}

/// One plan scored during a search.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub plan: SamplingPlan,
    pub rule: DecisionRule,
    pub risk: f64,
    /// Lower bound that admitted the plan for evaluation.
    pub lower_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimalPlanResult {
    pub plan: SamplingPlan,
    pub rule: DecisionRule,
    pub report: RiskReport,
    #[serde(skip)]
    pub trace: Vec<TraceEntry>,
}

/// Strictly better, or equal within rounding and cheaper (smaller `n`, then `k`, then `τ_k`).
fn better(risk: f64, plan: &SamplingPlan, best_risk: f64, best: &SamplingPlan) -> bool {
    let tol = 1e-12 * best_risk.abs().max(1.0);
    if risk < best_risk - tol {
        return true;
    }
    if risk > best_risk + tol {
        return false;
    }
    (plan.n(), plan.k(), plan.last_epoch()) < (best.n(), best.k(), best.last_epoch())
}

/// Lazily filled `E[P(τ)]` on the lattice `τ = i · step`.
struct AllFailedLattice {
    gamma: GammaMixture,
    n: u32,
    step: f64,
    values: Vec<f64>,
}

impl AllFailedLattice {
    fn new(gamma: GammaMixture, n: u32, step: f64) -> Self {
        Self {
            gamma,
            n,
            step,
            values: vec![0.0],
        }
    }

    fn get(&mut self, i: usize) -> f64 {
        while self.values.len() <= i {
            let tau = self.values.len() as f64 * self.step;
            let v = all_failed_prob(&self.gamma, self.n, tau);
            self.values.push(v);
        }
        self.values[i]
    }
}

/// Bayes-rule penalty when the exact failure time and cause of all `n` units
/// are seen: a lower bound for every plan with `n` units.
///
/// With total time on test `T`, `ν | T ~ Gamma(α + n, η + T)` and
/// `x = η / (η + T) ~ Beta(α, n)`, so each cause split contributes a
/// truncated quadratic moment of a beta variable.
fn complete_data_penalty(engine: &RiskEngine, n: u32) -> f64 {
    use statrs::function::beta::{beta_reg, ln_beta};
    let c = &engine.costs;
    let (alpha, eta) = (engine.gamma.alpha(), engine.gamma.eta());
    let nf = f64::from(n);
    let a1 = (alpha + nf) / eta;
    let a2 = (alpha + nf) * (alpha + nf + 1.0) / (eta * eta);
    let lb0 = ln_beta(alpha, nf);
    let partial =
        |r: f64, x: f64| (ln_beta(alpha + r, nf) - lb0).exp() * beta_reg(alpha + r, nf, x);
    let mut pen = KahanSum::new();
    for sp in engine.splits.splits(n) {
        // φ(x) = C_0 + lin a1 x + quad a2 x², accepted while φ ≤ C_r.
        let (q, l, k0) = (sp.quad * a2, sp.lin * a1, c.c0 - c.c_reject);
        if k0 >= 0.0 {
            continue;
        }
        let root = if q > 0.0 {
            (-l + (l * l - 4.0 * q * k0).sqrt()) / (2.0 * q)
        } else {
            -k0 / l
        };
        let x = root.min(1.0);
        pen.add(sp.prob * (k0 * partial(0.0, x) + l * partial(1.0, x) + q * partial(2.0, x)));
    }
    pen.value()
}

/// Lower bound on the Bayes-rule penalty of every equal-interval plan with
/// `n` units and spacing `h`, whatever `k`.
///
/// Extra inspections refine the data, so the penalty falls with `k` towards
/// its value when every unit is followed until it fails. There the time
/// profiles are indexed by `s = Σ (m_i - 1)` alone, with `C(s+n-1, n-1)`
/// placements each. The unsummed tail is bounded by `-(C_r - C_0)` times its mass.
fn unlimited_penalty_bound(engine: &RiskEngine, n: u32, h: f64) -> f64 {
    const TAIL: f64 = 1e-3;
    const MAX_TERMS: u64 = 1_000_000;
    let c = &engine.costs;
    let worst = (c.c_reject - c.c0).max(0.0);
    let factors = [(h, n)];
    let splits = engine.splits.splits(n);
    let mut pen = KahanSum::new();
    let mut mass = KahanSum::new();
    for s in 0..MAX_TERMS {
        let m = engine.gamma.ln_moments(Kernel {
            exposure: h * s as f64,
            factors: &factors,
        });
        let ln_w = ln_binomial(s as u32 + n - 1, n - 1);
        let p0 = (ln_w + m[0]).exp();
        let (r1, r2) = ((m[1] - m[0]).exp(), (m[2] - m[0]).exp());
        for sp in splits {
            let phi = c.c0 + r1 * sp.lin + r2 * sp.quad;
            if phi <= c.c_reject {
                pen.add(p0 * sp.prob * (phi - c.c_reject));
            }
        }
        mass.add(p0);
        if worst * (1.0 - mass.value()) < TAIL && s > 0 {
            break;
        }
    }
    pen.value() - worst * (1.0 - mass.value()).max(0.0)
}

/// Below this spacing the unlimited-inspection bound barely improves on the
/// complete-data one and costs many terms.
const FINE_SPACING: f64 = 0.05;

fn penalty_bound(engine: &RiskEngine, n: u32, h: f64, complete: f64) -> f64 {
    if h < FINE_SPACING {
        complete
    } else {
        unlimited_penalty_bound(engine, n, h).max(complete)
    }
}

/// Test-cost part of the risk of an equal-interval plan, given `E[M]`.
#[inline]
fn test_costs(costs: &CostModel, prior: &PriorSpec, n: u32, h: f64, k: u32, e_m: f64) -> f64 {
    let e_dt = f64::from(n) * (1.0 - prior.laplace(h * f64::from(k)));
    costs.c_reject
        + f64::from(n) * (costs.c_sample - costs.salvage)
        + (costs.c_time * h + costs.c_inspect) * e_m
        + costs.salvage * e_dt
}

struct Scored {
    risk: f64,
    rule: DecisionRule,
    penalty: f64,
    p_accept: f64,
}

fn score(engine: &RiskEngine, kind: RuleKind, terms: &[ProfileTerm], base: f64) -> Scored {
    match kind {
        RuleKind::Bayes => {
            let (penalty, p_accept) = engine.bayes_penalty(terms);
            Scored {
                risk: base + penalty,
                rule: DecisionRule::Bayes,
                penalty,
                p_accept,
            }
        }
        RuleKind::Reliability => {
            let ThresholdChoice {
                r0,
                penalty,
                p_accept,
                ..
            } = engine.threshold(terms);
            Scored {
                risk: base + penalty,
                rule: DecisionRule::Reliability { r0 },
                penalty,
                p_accept,
            }
        }
    }
}

fn base_from(costs: &CostModel, n: u32, c: &ExpectedCounts) -> f64 {
    costs.c_reject
        + f64::from(n) * (costs.c_sample - costs.salvage)
        + costs.c_time * c.e_duration
        + costs.c_inspect * c.e_inspections
        + costs.salvage * c.e_failures
}

/// Exact risk of an arbitrary plan under the chosen rule kind.
fn evaluate(
    engine: &RiskEngine,
    kind: RuleKind,
    plan: &SamplingPlan,
    spreads: Option<&SpreadTable>,
) -> Result<(Scored, RiskReport)> {
    let terms = engine.terms(plan, spreads)?;
    let counts = engine.counts(plan)?;
    let s = score(
        engine,
        kind,
        &terms,
        base_from(&engine.costs, plan.n(), &counts),
    );
    let report = RiskReport::assemble(&engine.costs, plan.n(), counts, s.penalty, s.p_accept);
    Ok((s, report))
}

/// Minimise `f` on `[a, b]` by golden-section search.
fn golden<F: FnMut(f64) -> f64>(mut f: F, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    const INV_PHI: f64 = 0.618_033_988_749_894_8;
    let mut c = b - INV_PHI * (b - a);
    let mut d = a + INV_PHI * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while b - a > tol {
        if fc <= fd {
            b = d;
            d = c;
            fd = fc;
            c = b - INV_PHI * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + INV_PHI * (b - a);
            fd = f(d);
        }
    }
    if fc <= fd {
        (c, fc)
    } else {
        (d, fd)
    }
}

struct Incumbent {
    plan: SamplingPlan,
    rule: DecisionRule,
    report: RiskReport,
}

impl Incumbent {
    fn offer(&mut self, plan: &SamplingPlan, rule: DecisionRule, report: RiskReport) {
        if better(report.total_risk, plan, self.report.total_risk, &self.plan) {
            self.plan = plan.clone();
            self.rule = rule;
            self.report = report;
        }
    }

    fn risk(&self) -> f64 {
        self.report.total_risk
    }
}

/// Nested minimisation over `n`, `k`, the inspection times and, for the
/// reliability rule, the threshold. Returns the no-sampling plan when no test
/// beats it.
pub fn optimize_plan(
    kind: RuleKind,
    prior: &PriorSpec,
    costs: &CostModel,
    opts: &SearchOptions,
) -> Result<OptimalPlanResult> {
    let limits = Limits::new(prior, costs, opts)?;
    let mut engine = RiskEngine::new(prior, costs)?;
    engine.reserve(limits.n_max);
    let none = engine.no_sampling_report()?;
    let none_rule = match kind {
        RuleKind::Bayes => DecisionRule::Bayes,
        RuleKind::Reliability => DecisionRule::Reliability {
            r0: if none.p_accept > 0.0 {
                f64::MIN_POSITIVE
            } else {
                1.0
            },
        },
    };
    let mut best = Incumbent {
        plan: SamplingPlan::no_sampling(),
        rule: none_rule,
        report: none,
    };
    let mut trace = Vec::new();
    let floor = penalty_floor(prior, costs);
    let g = opts.h_grid;
    let unit = costs.c_sample - costs.salvage;
    let mut spreads: Vec<SpreadTable> = Vec::new();
    // Grid results per (n, k): (risk, grid index).
    let mut grid_best: HashMap<(u32, u32), Vec<(f64, usize)>> = HashMap::new();

    for n in 1..=limits.n_max {
        if costs.c_reject + unit * f64::from(n) + costs.c_inspect + floor >= best.risk() {
            break;
        }
        let complete = complete_data_penalty(&engine, n).max(floor);
        if costs.c_reject + unit * f64::from(n) + costs.c_inspect + complete >= best.risk() {
            continue;
        }
        let mut lattice = AllFailedLattice::new(engine.gamma, n, g);
        let mut cells: Vec<(f64, u32, usize)> = Vec::new();
        for j in 1usize.. {
            let h = j as f64 * g;
            if h >= limits.tau_max(n, 1)
                || test_costs(costs, prior, n, h, 1, 1.0) + complete >= best.risk()
            {
                break;
            }
            let mut e_m = 0.0;
            let mut bound = None;
            for k in 1..=limits.k_max(n) {
                if h * f64::from(k) >= limits.tau_max(n, k) {
                    break;
                }
                e_m += 1.0 - lattice.get((k as usize - 1) * j);
                let tc = test_costs(costs, prior, n, h, k, e_m);
                if tc + complete >= best.risk() {
                    break;
                }
                let lb = tc + *bound.get_or_insert_with(|| penalty_bound(&engine, n, h, complete));
                if lb >= best.risk() {
                    break;
                }
                cells.push((lb, k, j));
            }
        }
        cells.sort_by(|a, b| a.0.total_cmp(&b.0));
        let k_top = cells.iter().map(|c| c.1).max().unwrap_or(0) as usize;
        while spreads.len() <= k_top {
            spreads.push(SpreadTable::new(spreads.len().max(1)));
        }
        for t in spreads.iter_mut().skip(1) {
            t.ensure(n);
        }
        let lattice_vals = |k: u32, j: usize, lat: &mut AllFailedLattice| -> Vec<f64> {
            (1..k as usize).map(|i| lat.get(i * j)).collect()
        };
        // Cells are sorted by bound, so the first one that cannot win ends the scan.
        let mut idx = 0;
        while idx < cells.len() && cells[idx].0 < best.risk() {
            let end = (idx + BATCH).min(cells.len());
            let batch: Vec<_> = cells[idx..end]
                .iter()
                .take_while(|c| c.0 < best.risk())
                .map(|&(lb, k, j)| (lb, k, j, lattice_vals(k, j, &mut lattice)))
                .collect();
            idx += batch.len();
            let results: Vec<Result<(u32, usize, f64, SamplingPlan, Scored, RiskReport)>> = batch
                .par_iter()
                .map(|(lb, k, j, probs)| {
                    let plan = SamplingPlan::equal(n, *j as f64 * g, *k)?;
                    let terms = engine.terms(&plan, Some(&spreads[*k as usize]))?;
                    let counts = counts_from(&plan, prior, probs);
                    let s = score(&engine, kind, &terms, base_from(costs, n, &counts));
                    let report = RiskReport::assemble(costs, n, counts, s.penalty, s.p_accept);
                    Ok((*k, *j, *lb, plan, s, report))
                })
                .collect();
            for r in results {
                let (k, j, lb, plan, s, report) = r?;
                trace.push(TraceEntry {
                    plan: plan.clone(),
                    rule: s.rule,
                    risk: s.risk,
                    lower_bound: lb,
                });
                let slot = grid_best.entry((n, k)).or_default();
                slot.push((s.risk, j));
                slot.sort_by(|a, b| a.0.total_cmp(&b.0));
                slot.truncate(3);
                best.offer(&plan, s.rule, report);
            }
        }
    }

    // Continuous refinement of the most promising cells.
    let mut cells: Vec<((u32, u32), Vec<(f64, usize)>)> = grid_best.into_iter().collect();
    cells.sort_by(|a, b| a.1[0].0.total_cmp(&b.1[0].0).then(a.0.cmp(&b.0)));
    let chosen: Vec<_> = cells
        .into_iter()
        .filter(|c| c.1[0].0 <= best.risk() + REFINE_MARGIN)
        .take(REFINE_CELLS)
        .collect();
    for ((n, k), starts) in &chosen {
        let (n, k) = (*n, *k);
        let h_hi = limits.tau_max(n, k) / f64::from(k);
        let mut local_best: Option<(f64, f64)> = None;
        for &(_, j) in starts {
            let a = ((j as f64 - 1.0) * g).max(g * 1e-3);
            let b = ((j as f64 + 1.0) * g).min(h_hi * (1.0 - 1e-12));
            if b <= a {
                continue;
            }
            let mut failure = None;
            let (h, risk) = golden(
                |h| match SamplingPlan::equal(n, h, k)
                    .and_then(|p| evaluate(&engine, kind, &p, None))
                {
                    Ok((s, _)) => s.risk,
                    Err(e) => {
                        failure = Some(e);
                        f64::INFINITY
                    }
                },
                a,
                b,
                opts.refine_tol,
            );
            if let Some(e) = failure {
                return Err(e);
            }
            if local_best.is_none_or(|(_, r)| risk < r) {
                local_best = Some((h, risk));
            }
        }
        if let Some((h, _)) = local_best {
            let plan = SamplingPlan::equal(n, h, k)?;
            let (s, report) = evaluate(&engine, kind, &plan, None)?;
            trace.push(TraceEntry {
                plan: plan.clone(),
                rule: s.rule,
                risk: s.risk,
                lower_bound: f64::NEG_INFINITY,
            });
            best.offer(&plan, s.rule, report);
        }
    }

    if opts.mode == SearchMode::FreeIntervals {
        let starts: Vec<SamplingPlan> = {
            let mut seen: Vec<SamplingPlan> = chosen
                .iter()
                .map(|((n, k), s)| SamplingPlan::equal(*n, s[0].1 as f64 * g, *k))
                .collect::<Result<_>>()?;
            if !best.plan.is_no_sampling() {
                seen.insert(0, best.plan.clone());
            }
            seen
        };
        for start in starts {
            let (plan, s, report) =
                coordinate_descent(&engine, kind, &limits, start, opts, &mut trace)?;
            best.offer(&plan, s.rule, report);
        }
    }

    Ok(OptimalPlanResult {
        plan: best.plan,
        rule: best.rule,
        report: best.report,
        trace,
    })
}

fn plan_from_gaps(n: u32, gaps: &[f64]) -> Result<SamplingPlan> {
    let mut t = 0.0;
    SamplingPlan::new(
        n,
        gaps.iter()
            .map(|g| {
                t += g;
                t
            })
            .collect(),
    )
}

/// Cyclic coordinate descent over the gaps `h_1..h_k`.
fn coordinate_descent(
    engine: &RiskEngine,
    kind: RuleKind,
    limits: &Limits,
    start: SamplingPlan,
    opts: &SearchOptions,
    trace: &mut Vec<TraceEntry>,
) -> Result<(SamplingPlan, Scored, RiskReport)> {
    let n = start.n();
    let k = start.k();
    let tau_max = limits.tau_max(n, k as u32);
    let mut gaps = start.gaps();
    let (mut cur, mut report) = evaluate(engine, kind, &start, None)?;
    for _ in 0..FREE_SWEEPS {
        let before = cur.risk;
        for i in 0..k {
            let others: f64 = gaps
                .iter()
                .enumerate()
                .filter(|(m, _)| *m != i)
                .map(|(_, g)| g)
                .sum();
            let room = (tau_max - others) * (1.0 - 1e-12);
            if room <= 0.0 {
                continue;
            }
            let mut failure = None;
            let mut objective = |x: f64| {
                let mut trial = gaps.clone();
                trial[i] = x;
                match plan_from_gaps(n, &trial).and_then(|p| evaluate(engine, kind, &p, None)) {
                    Ok((s, _)) => s.risk,
                    Err(e) => {
                        failure = Some(e);
                        f64::INFINITY
                    }
                }
            };
            // Coarse grid around the current value, then golden section.
            let cur_x = gaps[i];
            let grid: Vec<f64> = (1..=12)
                .map(|m| cur_x * f64::from(m) / 6.0)
                .filter(|&x| x < room)
                .collect();
            let vals: Vec<f64> = grid.iter().map(|&x| objective(x)).collect();
            let m = (0..vals.len())
                .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
                .unwrap_or(0);
            let a = if m == 0 { cur_x * 1e-3 } else { grid[m - 1] };
            let b = grid.get(m + 1).copied().unwrap_or(room);
            let (x, _) = golden(&mut objective, a, b, opts.refine_tol);
            if let Some(e) = failure {
                return Err(e);
            }
            let mut trial = gaps.clone();
            trial[i] = x;
            let plan = plan_from_gaps(n, &trial)?;
            let (s, r) = evaluate(engine, kind, &plan, None)?;
            trace.push(TraceEntry {
                plan,
                rule: s.rule,
                risk: s.risk,
                lower_bound: f64::NEG_INFINITY,
            });
            if s.risk < cur.risk {
                gaps = trial;
                cur = s;
                report = r;
            }
        }
        if before - cur.risk < 1e-6 {
            break;
        }
    }
    Ok((plan_from_gaps(n, &gaps)?, cur, report))
}

/// Prior draws shared by every candidate (common random numbers).
struct ApproxDraws {
    nu: Vec<f64>,
    /// `h(ν) - C_r`.
    g: Vec<f64>,
}

impl ApproxDraws {
    fn new(prior: &PriorSpec, costs: &CostModel, n: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut nu = Vec::with_capacity(n);
        let mut g = Vec::with_capacity(n);
        for _ in 0..n {
            let d = sample_prior(prior, &mut rng);
            nu.push(d.total());
            g.push(costs.acceptance_cost_unchecked(d.rates()) - costs.c_reject);
        }
        Self { nu, g }
    }
}

/// Per-point pieces of the approximate penalty for one inspection schedule:
/// weight times `h - C_r`, `c(ν)` and `S(ν)√n`.
struct ApproxPoints {
    wg: Vec<f64>,
    w: Vec<f64>,
    c: Vec<f64>,
    s1: Vec<f64>,
}

impl ApproxPoints {
    fn penalty(&self, n: u32, r0: f64) -> (f64, f64) {
        let root_n = f64::from(n).sqrt();
        let mut pen = 0.0;
        let mut pa = 0.0;
        for i in 0..self.wg.len() {
            let s = self.s1[i] / root_n;
            let z = (self.c[i] - r0) / s;
            let p = if z > 8.5 {
                1.0
            } else if z < -8.5 {
                0.0
            } else {
                normal_accept(self.c[i], s, r0)
            };
            pen += self.wg[i] * p;
            pa += self.w[i] * p;
        }
        (pen, pa)
    }

    /// Best threshold: coarse grid then golden section.
    fn best_threshold(&self, n: u32, tol: f64) -> (f64, f64) {
        let grid: Vec<f64> = (1..40).map(|i| f64::from(i) / 40.0).collect();
        let vals: Vec<f64> = grid.iter().map(|&r| self.penalty(n, r).0).collect();
        let m = (0..vals.len())
            .min_by(|&a, &b| vals[a].total_cmp(&vals[b]))
            .unwrap_or(0);
        let a = if m == 0 { 1e-6 } else { grid[m - 1] };
        let b = grid.get(m + 1).copied().unwrap_or(1.0 - 1e-9);
        golden(|r| self.penalty(n, r).0, a, b, tol)
    }
}

fn quadrature_points(nodes: &[(f64, f64, f64)], gaps: &[f64], t0: f64) -> ApproxPoints {
    let mut p = ApproxPoints {
        wg: Vec::new(),
        w: Vec::new(),
        c: Vec::new(),
        s1: Vec::new(),
    };
    for &(nu, w, g) in nodes {
        let c = (-nu * t0).exp();
        let info = total_rate_information(nu, gaps);
        if !(info > 0.0 && info.is_finite()) {
            continue;
        }
        p.wg.push(w * g);
        p.w.push(w);
        p.c.push(c);
        p.s1.push(t0 * c / info.sqrt());
    }
    p
}

fn draw_points(draws: &ApproxDraws, gaps: &[f64], t0: f64) -> Result<ApproxPoints> {
    let total = draws.nu.len();
    let mut p = ApproxPoints {
        wg: Vec::new(),
        w: Vec::new(),
        c: Vec::new(),
        s1: Vec::new(),
    };
    let mut dropped = 0;
    for (&nu, &g) in draws.nu.iter().zip(&draws.g) {
        let c = (-nu * t0).exp();
        let info = total_rate_information(nu, gaps);
        if !(info > 0.0 && info.is_finite()) {
            dropped += 1;
            continue;
        }
        p.wg.push(g);
        p.w.push(1.0);
        p.c.push(c);
        p.s1.push(t0 * c / info.sqrt());
    }
    if dropped * 100 > total {
        return Err(Error::TooManySingular { dropped, total });
    }
    let kept = (total - dropped) as f64;
    for v in p.wg.iter_mut().chain(p.w.iter_mut()) {
        *v /= kept;
    }
    Ok(p)
}

/// Equal-interval search on the approximate risk with `(h, R₀)` optimised
/// jointly. Cells are screened with a deterministic quadrature of the
/// approximation; the best ones are then scored by Monte Carlo on one shared
/// set of `mc_draws` prior draws from `seed`, so the objective is a fixed
/// function within a run.
pub fn optimize_plan_approx(
    prior: &PriorSpec,
    costs: &CostModel,
    opts: &SearchOptions,
) -> Result<OptimalPlanResult> {
    let limits = Limits::new(prior, costs, opts)?;
    let engine = RiskEngine::new(prior, costs)?;
    let none = engine.no_sampling_report()?;
    let floor = penalty_floor(prior, costs);
    let unit = costs.c_sample - costs.salvage;
    let t0 = costs.t0;
    let nodes: Vec<(f64, f64, f64)> = engine
        .gamma
        .nodes(SCREEN_STEP)
        .into_iter()
        .map(|(nu, w)| {
            let g = costs.c0 + nu * engine.splits.prior_lin + nu * nu * engine.splits.prior_quad
                - costs.c_reject;
            (nu, w, g)
        })
        .collect();
    let screen_g = opts.h_grid.max(0.01);
    let mut trace = Vec::new();
    let mut best_screen = none.total_risk;
    // (risk, n, k, j)
    let mut screened: Vec<(f64, u32, u32, usize)> = Vec::new();
    let mut lattices: Vec<AllFailedLattice> = Vec::new();

    let k_all = (1..=limits.n_max)
        .map(|n| limits.k_max(n))
        .max()
        .unwrap_or(0);
    for k in 1..=k_all {
        for j in 1usize.. {
            let h = j as f64 * screen_g;
            let crude = costs.c_reject + unit + costs.c_time * h + costs.c_inspect + floor;
            if crude >= best_screen || h * f64::from(k) >= limits.tau_max(1, k) {
                break;
            }
            let gaps = vec![h; k as usize];
            let points = quadrature_points(&nodes, &gaps, t0);
            for n in 1..=limits.n_max {
                if k > limits.k_max(n) || h * f64::from(k) >= limits.tau_max(n, k) {
                    break;
                }
                while lattices.len() < n as usize {
                    lattices.push(AllFailedLattice::new(
                        engine.gamma,
                        lattices.len() as u32 + 1,
                        screen_g,
                    ));
                }
                let lat = &mut lattices[n as usize - 1];
                let e_m: f64 = (0..k as usize).map(|i| 1.0 - lat.get(i * j)).sum();
                let base = test_costs(costs, prior, n, h, k, e_m);
                if base + floor >= best_screen {
                    break;
                }
                let (_, pen) = points.best_threshold(n, 1e-5);
                let risk = base + pen;
                screened.push((risk, n, k, j));
                if risk < best_screen {
                    best_screen = risk;
                }
            }
        }
    }
    if screened.is_empty() {
        return Ok(OptimalPlanResult {
            plan: SamplingPlan::no_sampling(),
            rule: DecisionRule::Reliability {
                r0: if none.p_accept > 0.0 {
                    f64::MIN_POSITIVE
                } else {
                    1.0
                },
            },
            report: none,
            trace,
        });
    }
    screened.sort_by(|a, b| {
        a.0.total_cmp(&b.0)
            .then((a.1, a.2, a.3).cmp(&(b.1, b.2, b.3)))
    });
    // Keep the best grid point per (n, k), then the closest cells overall.
    let mut seen = std::collections::HashSet::new();
    let candidates: Vec<_> = screened
        .iter()
        .filter(|c| c.0 <= best_screen + APPROX_MARGIN && seen.insert((c.1, c.2)))
        .take(APPROX_CANDIDATES)
        .copied()
        .collect();

    // Fine grid around each screened optimum, still on the quadrature.
    let step = opts.h_grid;
    let fine: Vec<(u32, u32, f64)> = candidates
        .par_iter()
        .map(|&(_, n, k, j)| {
            let centre = j as f64 * screen_g;
            let span = (screen_g / step).round() as i64;
            let h_hi = limits.tau_max(n, k) / f64::from(k);
            let mut best = (f64::INFINITY, centre);
            for o in -span..=span {
                let h = ((centre / step).round() + o as f64) * step;
                if h <= 0.0 || h >= h_hi {
                    continue;
                }
                let risk = match exact_base(&engine, n, h, k) {
                    Some(base) => {
                        base + quadrature_points(&nodes, &vec![h; k as usize], t0)
                            .best_threshold(n, 1e-5)
                            .1
                    }
                    None => continue,
                };
                if risk < best.0 {
                    best = (risk, h);
                }
            }
            (n, k, best.1)
        })
        .collect();

    let draws = ApproxDraws::new(prior, costs, opts.mc_draws, opts.seed);
    let scored: Vec<Result<(SamplingPlan, f64, RiskReport)>> = fine
        .par_iter()
        .map(|&(n, k, h)| {
            let plan = SamplingPlan::equal(n, h, k)?;
            let points = draw_points(&draws, &plan.gaps(), t0)?;
            let (r0, pen) = points.best_threshold(n, 1e-6);
            let (_, pa) = points.penalty(n, r0);
            let report = RiskReport::assemble(costs, n, engine.counts(&plan)?, pen, pa);
            Ok((plan, r0, report))
        })
        .collect();
    let mut best: Option<Incumbent> = None;
    for s in scored {
        let (plan, r0, report) = s?;
        let rule = DecisionRule::Reliability { r0 };
        trace.push(TraceEntry {
            plan: plan.clone(),
            rule,
            risk: report.total_risk,
            lower_bound: f64::NEG_INFINITY,
        });
        match &mut best {
            None => best = Some(Incumbent { plan, rule, report }),
            Some(b) => b.offer(&plan, rule, report),
        }
    }
    let best = best.expect("at least one candidate");
    if best.report.total_risk >= none.total_risk {
        return Ok(OptimalPlanResult {
            plan: SamplingPlan::no_sampling(),
            rule: DecisionRule::Reliability {
                r0: if none.p_accept > 0.0 {
                    f64::MIN_POSITIVE
                } else {
                    1.0
                },
            },
            report: none,
            trace,
        });
    }
    Ok(OptimalPlanResult {
        plan: best.plan,
        rule: best.rule,
        report: best.report,
        trace,
    })
}

/// Test-cost part of the risk with exact all-failed probabilities.
fn exact_base(engine: &RiskEngine, n: u32, h: f64, k: u32) -> Option<f64> {
    let plan = SamplingPlan::equal(n, h, k).ok()?;
    let counts = engine.counts(&plan).ok()?;
    Some(base_from(&engine.costs, n, &counts))
}

/// Approximate risk of a fixed plan and threshold on the shared draws of `opts`.
pub fn approx_plan_risk(
    plan: &SamplingPlan,
    r0: f64,
    prior: &PriorSpec,
    costs: &CostModel,
    opts: &SearchOptions,
) -> Result<RiskReport> {
    if plan.is_no_sampling() {
        return Err(invalid("plan", "the approximation needs units on test"));
    }
    opts.validate()?;
    let engine = RiskEngine::new(prior, costs)?;
    let draws = ApproxDraws::new(prior, costs, opts.mc_draws, opts.seed);
    let points = draw_points(&draws, &plan.gaps(), costs.t0)?;
    let (pen, pa) = points.penalty(plan.n(), r0);
    Ok(RiskReport::assemble(
        costs,
        plan.n(),
        engine.counts(plan)?,
        pen,
        pa,
    ))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{costs, prior};
    use crate::risk::bayes_risk;

    #[test]
    fn bounds() {
        let b = search_bounds(&costs(), &prior()).unwrap();
        assert_eq!(b.n0, 160);
        assert_eq!(b.k0(0), Some(400));
        assert!(b.k0(10).unwrap() > b.k0(20).unwrap());
        let t = b.tau_bound(4, 3).unwrap();
        assert!((t - (40.0 - 1.0 - 0.3) / 0.3).abs() < 1e-9);
        let mut c = costs();
        c.c_reject = 0.2;
        assert_eq!(search_bounds(&c, &prior()).unwrap().n0, 0);
        c.c_reject = 40.0;
        c.c_inspect = 0.0;
        assert_eq!(search_bounds(&c, &prior()).unwrap().k0(3), None);
    }

    #[test]
    fn penalty_bounds_are_ordered() {
        let (pr, c) = (prior(), costs());
        let mut engine = RiskEngine::new(&pr, &c).unwrap();
        engine.reserve(12);
        let floor = penalty_floor(&pr, &c);
        for n in [1u32, 4, 9] {
            let complete = complete_data_penalty(&engine, n);
            // Inspections every 0.005 are nearly continuous monitoring.
            let fine = unlimited_penalty_bound(&engine, n, 0.005);
            assert!(floor <= complete && complete <= fine + 1e-9, "n={n}");
            assert!(
                (fine - complete).abs() < 0.02,
                "n={n}: {fine} vs {complete}"
            );
            for h in [0.1, 0.3, 0.8] {
                let b = unlimited_penalty_bound(&engine, n, h);
                assert!(complete <= b + 1e-9);
                let mut prev = 0.0;
                for k in 1..=6 {
                    let plan = SamplingPlan::equal(n, h, k).unwrap();
                    let (pen, _) = engine.bayes_penalty(&engine.terms(&plan, None).unwrap());
                    assert!(b <= pen + 1e-9, "n={n} h={h} k={k}");
                    assert!(pen <= prev + 1e-9, "more inspections cannot hurt");
                    prev = pen;
                }
            }
        }
    }

    #[test]
    fn golden_section() {
        let (x, f) = golden(|x| (x - 0.3) * (x - 0.3) + 1.0, 0.0, 1.0, 1e-8);
        assert!((x - 0.3).abs() < 1e-7 && (f - 1.0).abs() < 1e-12);
    }

    #[test]
    fn threshold_on_the_table_plan() {
        let plan = SamplingPlan::equal(4, 0.3, 3).unwrap();
        let t = optimize_threshold(&plan, &prior(), &costs()).unwrap();
        assert!(t.lower <= 0.76 && 0.76 < t.upper, "{t:?}");
        assert!((t.report.total_risk - 33.908257).abs() < 1e-5);
        assert!(t.lower <= t.r0 && t.r0 < t.upper);
    }

    #[test]
    fn threshold_beats_a_brute_force_scan() {
        let (pr, c) = (prior(), costs());
        for plan in [
            SamplingPlan::equal(4, 0.3, 3).unwrap(),
            SamplingPlan::new(3, vec![0.15, 0.5]).unwrap(),
        ] {
            let t = optimize_threshold(&plan, &pr, &c).unwrap();
            let mut engine = RiskEngine::new(&pr, &c).unwrap();
            engine.reserve(plan.n());
            let terms = engine.terms(&plan, None).unwrap();
            for i in 1..1000 {
                let r0 = f64::from(i) / 1000.0;
                let (pen, _) = engine.reliability_penalty(&terms, r0);
                assert!(t.report.penalty_r1 <= pen + 1e-12, "r0={r0}");
            }
        }
    }

    #[test]
    fn single_outcome_plan() {
        // One unit, one inspection so early that the outcome is nearly always "survived".
        let plan = SamplingPlan::new(1, vec![1e-9]).unwrap();
        let (pr, c) = (prior(), costs());
        let t = optimize_threshold(&plan, &pr, &c).unwrap();
        let accept_all = bayes_risk(&plan, DecisionRule::Reliability { r0: 1e-6 }, &pr, &c)
            .unwrap()
            .total_risk;
        let reject_all = bayes_risk(&plan, DecisionRule::Reliability { r0: 1.0 }, &pr, &c)
            .unwrap()
            .total_risk;
        assert!((t.report.total_risk - accept_all.min(reject_all)).abs() < 1e-9);
    }

    #[test]
    fn small_search_is_consistent_with_its_trace() {
        let (pr, c) = (prior(), costs());
        let opts = SearchOptions {
            n_cap: Some(5),
            k_cap: Some(4),
            h_grid: 0.05,
            ..SearchOptions::default()
        };
        let bayes = optimize_plan(RuleKind::Bayes, &pr, &c, &opts).unwrap();
        let rel = optimize_plan(RuleKind::Reliability, &pr, &c, &opts).unwrap();
        assert!(bayes.report.total_risk <= rel.report.total_risk + 1e-9);
        for res in [&bayes, &rel] {
            assert!(!res.trace.is_empty());
            let min = res
                .trace
                .iter()
                .map(|t| t.risk)
                .fold(f64::INFINITY, f64::min);
            assert!(res.report.total_risk <= min + 1e-9);
            assert!(res.report.total_risk <= 40.0);
        }
        for t in &bayes.trace {
            let r = optimize_threshold(&t.plan, &pr, &c).unwrap();
            assert!(t.risk <= r.report.total_risk + 1e-9, "{:?}", t.plan);
        }
    }

    #[test]
    fn infeasible_search_returns_no_sampling() {
        let pr = prior();
        let mut c = costs();
        c.c_reject = 20.0;
        let res = optimize_plan(RuleKind::Bayes, &pr, &c, &SearchOptions::default()).unwrap();
        assert!(res.plan.is_no_sampling());
        assert_eq!(res.report.total_risk, 20.0);
    }

    #[test]
    fn free_intervals_do_not_lose() {
        let (pr, c) = (prior(), costs());
        let eq = SearchOptions {
            n_cap: Some(4),
            k_cap: Some(3),
            h_grid: 0.05,
            ..SearchOptions::default()
        };
        let free = SearchOptions {
            mode: SearchMode::FreeIntervals,
            ..eq.clone()
        };
        let a = optimize_plan(RuleKind::Bayes, &pr, &c, &eq).unwrap();
        let b = optimize_plan(RuleKind::Bayes, &pr, &c, &free).unwrap();
        assert!(b.report.total_risk <= a.report.total_risk + 1e-12);
        let tau = search_bounds(&c, &pr)
            .unwrap()
            .tau_bound(b.plan.n(), b.plan.k() as u32)
            .unwrap();
        assert!(b.plan.last_epoch() < tau);
    }

    #[test]
    fn options_validation() {
        assert!(SearchOptions {
            h_grid: 0.0,
            ..SearchOptions::default()
        }
        .validate()
        .is_err());
        assert!(SearchOptions {
            mc_draws: 0,
            ..SearchOptions::default()
        }
        .validate()
        .is_err());
        let parsed: SearchOptions =
            serde_json::from_str(r#"{"mode":"free_intervals","k_cap":5}"#).unwrap();
        assert_eq!(parsed.mode, SearchMode::FreeIntervals);
        assert_eq!(parsed.h_grid, 0.01);
    }
}
