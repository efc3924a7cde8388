//! Reproduction of the reference design tables as CSV.

use std::path::Path;

use rasp_core::decision::assess;
use rasp_core::{DecisionRule, IntervalData, PriorSpec, SamplingPlan, Verdict};

use crate::commands::{design, evaluate_plan};
use crate::config::RunConfig;
use crate::error::{input, write_file, Result};
use crate::plan::DecisionKind;
use crate::report::PlanReport;

pub const TABLES: std::ops::RangeInclusive<u8> = 1..=8;

/// Tolerance on the Monte Carlo risk of the approximate tables.
const MC_TOLERANCE: f64 = 0.05;

const EXAMPLE1: &str = include_str!("../configs/example1.json");
const EXAMPLE2: &str = include_str!("../configs/example2.json");

/// `"all"` or a single table number.
pub fn parse_selector(s: &str) -> Result<Vec<u8>> {
    if s.eq_ignore_ascii_case("all") {
        return Ok(TABLES.collect());
    }
    match s.trim().parse::<u8>() {
        Ok(t) if TABLES.contains(&t) => Ok(vec![t]),
        _ => Err(input(format!(
            "unknown table `{s}`: expected 1 to 8 or `all`"
        ))),
    }
}

pub struct Configs {
    pub exact: RunConfig,
    pub approx: RunConfig,
}

impl Configs {
    /// `example1.json` and `example2.json` from `dir`, or the bundled copies.
    pub fn load(dir: Option<&Path>) -> Result<Self> {
        Ok(match dir {
            Some(d) => Self {
                exact: RunConfig::load(&d.join("example1.json"))?,
                approx: RunConfig::load(&d.join("example2.json"))?,
            },
            None => Self {
                exact: RunConfig::parse(EXAMPLE1)?,
                approx: RunConfig::parse(EXAMPLE2)?,
            },
        })
    }
}

pub struct Table {
    pub number: u8,
    pub header: Vec<String>,
    pub rows: Vec<Vec<String>>,
}

impl Table {
    pub fn to_csv(&self) -> String {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(&self.header).expect("in-memory write");
        for r in &self.rows {
            w.write_record(r).expect("in-memory write");
        }
        String::from_utf8(w.into_inner().expect("in-memory write")).expect("utf-8 fields")
    }
}

const DESIGN_COLUMNS: [&str; 10] = [
    "type",
    "n",
    "h",
    "k",
    "r0",
    "p_accept",
    "e_failures",
    "e_duration",
    "e_inspections",
    "risk",
];

fn design_cells(label: &str, r: &PlanReport) -> Vec<String> {
    let p = &r.plan;
    let h = p
        .interval_length()
        .map_or("-".to_owned(), |h| format!("{h:.2}"));
    let r0 = r.r0().map_or("-".to_owned(), |v| format!("{v:.2}"));
    let k = p.k();
    let h = if p.is_no_sampling() {
        "0".to_owned()
    } else {
        h
    };
    vec![
        label.to_owned(),
        p.n().to_string(),
        h,
        k.to_string(),
        r0,
        format!("{:.4}", r.risk.p_accept),
        format!("{:.4}", r.risk.e_failures),
        format!("{:.4}", r.risk.e_duration),
        format!("{:.4}", r.risk.e_inspections),
        format!("{:.6}", r.risk.total_risk),
    ]
}

/// Both rule types for one configuration.
fn both_types(cfg: &RunConfig, lead: &[String]) -> Result<Vec<Vec<String>>> {
    let mut rows = Vec::new();
    for (label, kind) in [
        ("I", DecisionKind::Bayes),
        ("II", DecisionKind::Reliability),
    ] {
        let r = design(kind, cfg)?;
        rows.push(
            lead.iter()
                .cloned()
                .chain(design_cells(label, &r))
                .collect(),
        );
    }
    Ok(rows)
}

fn header(lead: &[&str], rest: &[&str]) -> Vec<String> {
    lead.iter().chain(rest).map(|s| s.to_string()).collect()
}

fn sweep(
    number: u8,
    base: &RunConfig,
    name: &str,
    values: &[f64],
    set: fn(&mut RunConfig, f64) -> Result<()>,
) -> Result<Table> {
    let mut rows = Vec::new();
    for &v in values {
        let mut cfg = base.clone();
        set(&mut cfg, v)?;
        rows.extend(both_types(&cfg, &[v.to_string()])?);
    }
    Ok(Table {
        number,
        header: header(&[name], &DESIGN_COLUMNS),
        rows,
    })
}

fn with_prior(cfg: &mut RunConfig, alpha: f64, eta: f64) -> Result<()> {
    cfg.prior = PriorSpec::new(alpha, eta, cfg.prior.dir_alphas().to_vec())?;
    Ok(())
}

fn approx_cells(cfg: &RunConfig) -> Result<Vec<String>> {
    let r = design(DecisionKind::Approx, cfg)?;
    let p = &r.plan;
    Ok(vec![
        p.n().to_string(),
        p.interval_length()
            .map_or("0".to_owned(), |h| format!("{h:.3}")),
        p.k().to_string(),
        r.r0().map_or("-".to_owned(), |v| format!("{v:.3}")),
        format!("{:.4}", r.risk.p_accept),
        format!("{:.4}", r.risk.e_failures),
        format!("{:.4}", r.risk.e_duration),
        format!("{:.4}", r.risk.e_inspections),
        format!("{:.6}", r.risk.total_risk),
        cfg.search.seed.to_string(),
        cfg.search.mc_draws.to_string(),
        MC_TOLERANCE.to_string(),
    ])
}

const APPROX_COLUMNS: [&str; 12] = [
    "n",
    "h",
    "k",
    "r0",
    "p_accept",
    "e_failures",
    "e_duration",
    "e_inspections",
    "risk",
    "seed",
    "mc_draws",
    "tolerance",
];

/// The six observed data sets on the plan (4, 0.30, 3).
const OBSERVED: [&[[u32; 2]]; 6] = [
    &[[0, 0], [0, 0], [0, 1]],
    &[[0, 0], [0, 0], [0, 0]],
    &[[0, 0], [1, 0], [2, 1]],
    &[[1, 1], [1, 0], [1, 0]],
    &[[2, 0], [2, 0]],
    &[[2, 1], [0, 0], [0, 1]],
];

fn decisions(cfg: &RunConfig) -> Result<Table> {
    let plan = SamplingPlan::equal(4, 0.3, 3)?;
    let rule = evaluate_plan(DecisionKind::Reliability, &plan, None, cfg)?.rule;
    let DecisionRule::Reliability { r0 } = rule else {
        unreachable!("reliability evaluation")
    };
    let word = |v: Verdict| if v.is_accept() { "accept" } else { "reject" }.to_owned();
    let mut rows = Vec::new();
    for (i, obs) in OBSERVED.iter().enumerate() {
        let counts: Vec<Vec<u32>> = obs.iter().map(|r| r.to_vec()).collect();
        let shown: Vec<String> = counts
            .iter()
            .map(|r| format!("({}, {})", r[0], r[1]))
            .collect();
        let data = IntervalData::for_plan(&plan, 2, counts)?;
        let bayes = assess(&plan, &data, &cfg.prior, &cfg.costs, DecisionRule::Bayes)?;
        let rel = assess(&plan, &data, &cfg.prior, &cfg.costs, rule)?;
        rows.push(vec![
            (i + 1).to_string(),
            shown.join(" "),
            format!("{:.4}", bayes.reliability),
            format!("{:.4}", bayes.phi),
            word(bayes.verdict),
            word(rel.verdict),
            format!("{r0:.2}"),
        ]);
    }
    let header = header(
        &[
            "i",
            "data",
            "reliability",
            "phi",
            "bayes_verdict",
            "reliability_verdict",
            "r0",
        ],
        &[],
    );
    Ok(Table {
        number: 8,
        header,
        rows,
    })
}

pub fn build(number: u8, configs: &Configs) -> Result<Table> {
    let ex1 = &configs.exact;
    let ex2 = &configs.approx;
    match number {
        1 => Ok(Table {
            number,
            header: header(&[], &DESIGN_COLUMNS),
            rows: both_types(ex1, &[])?,
        }),
        2 => sweep(
            number,
            ex1,
            "c_reject",
            &[20.0, 30.0, 50.0, 60.0, 70.0, 90.0],
            |c, v| {
                c.costs.c_reject = v;
                Ok(())
            },
        ),
        3 => sweep(number, ex1, "c_inspect", &[0.0, 0.2, 0.3, 1.0], |c, v| {
            c.costs.c_inspect = v;
            Ok(())
        }),
        4 => sweep(number, ex1, "c_time", &[0.0, 0.1, 0.5, 1.0], |c, v| {
            c.costs.c_time = v;
            Ok(())
        }),
        5 => {
            let eta = sweep(number, ex1, "value", &[0.5, 0.75, 1.25, 1.5], |c, v| {
                let a = c.prior.alpha();
                with_prior(c, a, v)
            })?;
            let alpha = sweep(number, ex1, "value", &[2.2, 2.5, 3.0, 3.3], |c, v| {
                let e = c.prior.eta();
                with_prior(c, v, e)
            })?;
            let tag = |name: &str, rows: Vec<Vec<String>>| {
                rows.into_iter()
                    .map(|r| {
                        std::iter::once(name.to_owned())
                            .chain(r)
                            .collect::<Vec<_>>()
                    })
                    .collect::<Vec<_>>()
            };
            let mut rows = tag("eta", eta.rows);
            rows.extend(tag("alpha", alpha.rows));
            Ok(Table {
                number,
                header: header(&["parameter", "value"], &DESIGN_COLUMNS),
                rows,
            })
        }
        6 => {
            let mut rows = Vec::new();
            for c_sample in [0.12, 0.15, 0.18] {
                for c_inspect in [0.01, 0.05, 0.1] {
                    let mut cfg = ex2.clone();
                    cfg.costs.c_sample = c_sample;
                    cfg.costs.c_inspect = c_inspect;
                    let lead = [c_sample.to_string(), c_inspect.to_string()];
                    rows.push(lead.into_iter().chain(approx_cells(&cfg)?).collect());
                }
            }
            Ok(Table {
                number,
                header: header(&["c_sample", "c_inspect"], &APPROX_COLUMNS),
                rows,
            })
        }
        7 => Ok(Table {
            number,
            header: header(&[], &APPROX_COLUMNS),
            rows: vec![approx_cells(ex2)?],
        }),
        8 => decisions(ex1),
        _ => Err(input(format!(
            "unknown table `{number}`: expected 1 to 8 or `all`"
        ))),
    }
}

/// Builds the selected tables and writes `table_<n>.csv` into `out`, or
/// prints them separated by blank lines.
pub fn run(which: &str, config_dir: Option<&Path>, out: Option<&Path>) -> Result<()> {
    let selected = parse_selector(which)?;
    let configs = Configs::load(config_dir)?;
    if let Some(dir) = out {
        std::fs::create_dir_all(dir).map_err(|source| crate::error::CliError::Io {
            path: dir.to_owned(),
            source,
        })?;
    }
    for (i, &t) in selected.iter().enumerate() {
        let table = build(t, &configs)?;
        match out {
            Some(dir) => {
                let path = dir.join(format!("table_{}.csv", table.number));
                write_file(&path, &table.to_csv())?;
                println!("{}", path.display());
            }
            None => {
                if i > 0 {
                    println!();
                }
                print!("{}", table.to_csv());
            }
        }
    }
    Ok(())
}
