//! Bundled demonstration cases.
//!
//! The same cases ship as JSON files under `cases/` in the repository
//! root; a CLI test keeps file and builder in lockstep. All values are
//! per-unit on a 100 MVA base.

use alloc::string::String;
use alloc::vec;

use crate::network::{AreaSpec, BranchSpec, BusSpec, NetworkCase};

fn branch(from: u32, to: u32, r: f64, x: f64, b: f64) -> BranchSpec {
    BranchSpec::from_impedance(from, to, r, x, b).expect("nonzero impedance")
}

fn tap_branch(from: u32, to: u32, r: f64, x: f64, b: f64, ratio: f64) -> BranchSpec {
    branch(from, to, r, x, b).with_tap(ratio, 0.0)
}

/// Three-bus system: slack, one load bus, one generator bus.
pub fn case3() -> NetworkCase {
    let buses = vec![
        BusSpec::slack(1, 1.0, 0.0),
        BusSpec::load(2, 0.55, 0.13),
        BusSpec::generator(3, 0.98, 0.25, -1.0, 1.0),
    ];
    let branches = vec![
        branch(1, 2, 0.02, 0.12, 0.02),
        branch(2, 3, 0.025, 0.10, 0.02),
        branch(1, 3, 0.04, 0.15, 0.03),
    ];
    NetworkCase::new(100.0, buses, branches)
}

fn case4_ring(v_setpoint: f64, q_max: f64) -> NetworkCase {
    let buses = vec![
        BusSpec::slack(1, 1.02, 0.0),
        BusSpec::load(2, 0.80, 0.25),
        BusSpec::load(3, 0.90, 0.30),
        BusSpec::generator(4, v_setpoint, 0.40, -2.0, q_max),
    ];
    let branches = vec![
        branch(1, 2, 0.015, 0.080, 0.020),
        branch(2, 3, 0.020, 0.100, 0.020),
        branch(3, 4, 0.018, 0.090, 0.020),
        branch(4, 1, 0.012, 0.060, 0.020),
    ];
    let mut case = NetworkCase::new(100.0, buses, branches);
    case.areas = vec![
        AreaSpec { name: String::from("load2"), buses: vec![2] },
        AreaSpec { name: String::from("load3"), buses: vec![3] },
    ];
    case
}

/// Four-bus ring: slack, two load buses, one generator bus with ample
/// reactive headroom.
pub fn case4() -> NetworkCase {
    case4_ring(0.98, 2.0)
}

/// Limit-study variant of [`case4`]: the generator holds a higher
/// setpoint, so its reactive output climbs with loading and crosses the
/// tightened upper limit once both loads scale past roughly 1.3.
pub fn case4_qlim() -> NetworkCase {
    case4_ring(1.00, 0.20)
}

/// IEEE 14-bus test system, standard published data, loads grouped into
/// four areas.
pub fn ieee14() -> NetworkCase {
    let buses = vec![
        BusSpec::slack(1, 1.06, 0.0),
        BusSpec::generator(2, 1.045, 0.40, -0.40, 0.50).with_load(0.217, 0.127),
        BusSpec::generator(3, 1.01, 0.0, 0.0, 0.40).with_load(0.942, 0.19),
        BusSpec::load(4, 0.478, -0.039),
        BusSpec::load(5, 0.076, 0.016),
        BusSpec::generator(6, 1.07, 0.0, -0.06, 0.24).with_load(0.112, 0.075),
        BusSpec::load(7, 0.0, 0.0),
        BusSpec::generator(8, 1.09, 0.0, -0.06, 0.24),
        BusSpec::load(9, 0.295, 0.166).with_shunt(0.0, 0.19),
        BusSpec::load(10, 0.09, 0.058),
        BusSpec::load(11, 0.035, 0.018),
        BusSpec::load(12, 0.061, 0.016),
        BusSpec::load(13, 0.135, 0.058),
        BusSpec::load(14, 0.149, 0.05),
    ];
    let branches = vec![
        branch(1, 2, 0.01938, 0.05917, 0.0528),
        branch(1, 5, 0.05403, 0.22304, 0.0492),
        branch(2, 3, 0.04699, 0.19797, 0.0438),
        branch(2, 4, 0.05811, 0.17632, 0.0340),
        branch(2, 5, 0.05695, 0.17388, 0.0346),
        branch(3, 4, 0.06701, 0.17103, 0.0128),
        branch(4, 5, 0.01335, 0.04211, 0.0),
        tap_branch(4, 7, 0.0, 0.20912, 0.0, 0.978),
        tap_branch(4, 9, 0.0, 0.55618, 0.0, 0.969),
        tap_branch(5, 6, 0.0, 0.25202, 0.0, 0.932),
        branch(6, 11, 0.09498, 0.19890, 0.0),
        branch(6, 12, 0.12291, 0.25581, 0.0),
        branch(6, 13, 0.06615, 0.13027, 0.0),
        branch(7, 8, 0.0, 0.17615, 0.0),
        branch(7, 9, 0.0, 0.11001, 0.0),
        branch(9, 10, 0.03181, 0.08450, 0.0),
        branch(9, 14, 0.12711, 0.27038, 0.0),
        branch(10, 11, 0.08205, 0.19207, 0.0),
        branch(12, 13, 0.22092, 0.19988, 0.0),
        branch(13, 14, 0.17093, 0.34802, 0.0),
    ];
    let mut case = NetworkCase::new(100.0, buses, branches);
    case.areas = vec![
        AreaSpec { name: String::from("area1"), buses: vec![4, 5] },
        AreaSpec { name: String::from("area2"), buses: vec![9, 10] },
        AreaSpec { name: String::from("area3"), buses: vec![11, 12, 13] },
        AreaSpec { name: String::from("area4"), buses: vec![14] },
    ];
    case
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bundled_cases_validate() {
        for case in [case3(), case4(), case4_qlim(), ieee14()] {
            case.validate().unwrap();
        }
        assert_eq!(case3().counts(), (1, 1, 1));
        assert_eq!(case4().counts(), (1, 2, 1));
        assert_eq!(ieee14().counts(), (1, 9, 4));
    }
}
