//! Shared inputs for the benchmarks.

use rasp_core::{CostModel, PriorSpec, SamplingPlan};

/// Two-cause prior used throughout the benchmarks.
pub fn reference_prior() -> PriorSpec {
    PriorSpec::new(2.8, 1.0, vec![1.5, 1.8]).expect("valid prior")
}

pub fn reference_costs() -> CostModel {
    CostModel {
        c0: 2.0,
        c_lin: vec![4.0, 4.0],
        c_quad: vec![vec![4.0, 4.0], vec![0.0, 4.0]],
        c_reject: 40.0,
        c_sample: 0.5,
        salvage: 0.25,
        c_time: 0.3,
        c_inspect: 0.1,
        t0: 0.1,
    }
}

/// `(n, h, k)` plans of increasing outcome-space size.
pub fn plans() -> Vec<SamplingPlan> {
    [(4, 0.3, 3), (8, 0.2, 4), (12, 0.15, 5)]
        .into_iter()
        .map(|(n, h, k)| SamplingPlan::equal(n, h, k).expect("valid plan"))
        .collect()
}
