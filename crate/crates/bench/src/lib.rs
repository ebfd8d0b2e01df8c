//! Benchmark fixtures shared by the criterion targets.

use pm_robopt_core::fem::PmParams;
use pm_robopt_core::robust::{MachineModel, P_INIT};

/// Shipped machine at mesh level 0.
pub fn model() -> MachineModel {
    MachineModel::shipped(0).expect("shipped machine builds")
}

pub fn p_init() -> PmParams {
    PmParams::from_slice(&P_INIT)
}
