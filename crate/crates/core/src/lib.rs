#![allow(
    clippy::neg_cmp_op_on_partial_ord,
    clippy::needless_range_loop,
    clippy::type_complexity
)]

pub mod asymptotics;
pub mod decision;
pub mod error;
pub mod kernel;
pub mod mle;
pub mod model;
pub mod numeric;
pub mod optimizer;
pub mod outcomes;
pub mod prior;
pub mod risk;
pub mod simulator;

#[cfg(test)]
mod fixtures;

pub use decision::{CostModel, DecisionRule, Verdict};
pub use error::{Error, Result};
pub use model::{FailureRates, IntervalData, SamplingPlan};
pub use optimizer::{
    optimize_plan, optimize_plan_approx, optimize_threshold, RuleKind, SearchMode, SearchOptions,
};
pub use prior::PriorSpec;
pub use risk::RiskReport;
