//! Shared test inputs.

use crate::decision::CostModel;
use crate::prior::PriorSpec;

pub(crate) fn prior() -> PriorSpec {
    PriorSpec::new(2.8, 1.0, vec![1.5, 1.8]).unwrap()
}

pub(crate) fn costs() -> CostModel {
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
