//! Conventional Newton-Raphson power flow, used as the independent
//! verification oracle.
//!
//! Polar formulation with the full Jacobian rebuilt and refactored every
//! iteration. Divergence is a returned value, not an error: failure of
//! the iteration does not prove that no solution exists.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;

use crate::error::{Error, Result};
use crate::mdhem::{MdhemArtifact, PfSolution};
use crate::network::{bus_roles, AdmittanceMatrix, BusRole, NetworkCase, PvToPqConversion};
use crate::numeric::{factorize, RealMatrix};

#[derive(Debug, Clone, PartialEq)]
pub enum StartPoint {
    /// Setpoint magnitudes at generator buses, 1 pu elsewhere, flat angles.
    Flat,
    /// Start from a germ operating point.
    Germ(Vec<Complex64>),
    /// Arbitrary caller-supplied start.
    Given(Vec<Complex64>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct NrConfig {
    /// Maximum per-bus injection mismatch, per-unit.
    pub tol: f64,
    pub max_iter: usize,
    pub start: StartPoint,
    pub enforce_q_limits: bool,
}

impl Default for NrConfig {
    fn default() -> Self {
        Self { tol: 1e-10, max_iter: 50, start: StartPoint::Flat, enforce_q_limits: false }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Divergence {
    pub reason: String,
    pub iterations: usize,
    pub last_mismatch: f64,
}

#[derive(Debug, Clone)]
pub enum NrOutcome {
    Converged(PfSolution),
    Diverged(Divergence),
}

impl NrOutcome {
    pub fn converged(&self) -> Option<&PfSolution> {
        match self {
            NrOutcome::Converged(sol) => Some(sol),
            NrOutcome::Diverged(_) => None,
        }
    }

    pub fn is_converged(&self) -> bool {
        self.converged().is_some()
    }
}

/// Solve the power flow for explicit per-bus loads.
///
/// `loads` gives the effective `(p_load, q_load)` at every bus; for PQ
/// buses these are the (scaled) consumed powers, for generator buses the
/// fixed local loads. Buses listed in `conversions` operate as PQ buses
/// with the generator reactive output pinned; with
/// `cfg.enforce_q_limits` further PV buses are switched internally, at
/// most one per restart, the worst violator first.
pub fn nr_solve(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    conversions: &[PvToPqConversion],
    loads: &[(f64, f64)],
    cfg: &NrConfig,
) -> NrOutcome {
    let mut all_conversions = conversions.to_vec();
    let mut switched: Vec<PvToPqConversion> = Vec::new();
    let switch_cap = case.pv_indices().len();
    loop {
        let roles = bus_roles(case, &all_conversions);
        let outcome = nr_inner(case, y, &roles, loads, cfg);
        let sol = match outcome {
            NrOutcome::Converged(sol) => sol,
            diverged => return diverged,
        };
        if !cfg.enforce_q_limits || switched.len() >= switch_cap {
            return NrOutcome::Converged(finish(sol, switched));
        }
        // Worst violator beyond its limit, if any.
        let mut worst: Option<PvToPqConversion> = None;
        let mut worst_excess = 0.0;
        for (i, role) in roles.iter().enumerate() {
            if *role != BusRole::Pv {
                continue;
            }
            let bus = &case.buses[i];
            let q_gen = sol.s_inj[i].im + loads[i].1;
            let (excess, conv) = if q_gen > bus.q_max {
                (q_gen - bus.q_max, PvToPqConversion { bus: i, q_gen: bus.q_max, at_upper: true })
            } else if q_gen < bus.q_min {
                (bus.q_min - q_gen, PvToPqConversion { bus: i, q_gen: bus.q_min, at_upper: false })
            } else {
                continue;
            };
            if excess > worst_excess {
                worst_excess = excess;
                worst = Some(conv);
            }
        }
        match worst {
            Some(conv) => {
                all_conversions.push(conv);
                switched.push(conv);
            }
            None => return NrOutcome::Converged(finish(sol, switched)),
        }
    }
}

fn finish(mut sol: PfSolution, switched: Vec<PvToPqConversion>) -> PfSolution {
    sol.switched = switched;
    sol
}

fn start_voltages(case: &NetworkCase, start: &StartPoint) -> Vec<Complex64> {
    match start {
        StartPoint::Flat => case
            .buses
            .iter()
            .map(|b| match b.kind {
                crate::network::BusKind::Slack => Complex64::from_polar(b.v_setpoint, b.v_angle),
                crate::network::BusKind::Pv => Complex64::new(b.v_setpoint, 0.0),
                crate::network::BusKind::Pq => Complex64::new(1.0, 0.0),
            })
            .collect(),
        StartPoint::Germ(v) | StartPoint::Given(v) => v.clone(),
    }
}

fn nr_inner(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    roles: &[BusRole],
    loads: &[(f64, f64)],
    cfg: &NrConfig,
) -> NrOutcome {
    let n = case.n_buses();
    let v0 = start_voltages(case, &cfg.start);
    let mut vm: Vec<f64> = v0.iter().map(|v| v.norm()).collect();
    let mut va: Vec<f64> = v0.iter().map(|v| v.arg()).collect();

    // Hold generator magnitudes at their setpoints regardless of start.
    for (i, role) in roles.iter().enumerate() {
        if *role == BusRole::Pv {
            vm[i] = case.buses[i].v_setpoint;
        }
        if *role == BusRole::Slack {
            vm[i] = case.buses[i].v_setpoint;
            va[i] = case.buses[i].v_angle;
        }
    }

    // Specified net injections.
    let p_spec: Vec<f64> = (0..n)
        .map(|i| match roles[i] {
            BusRole::Slack => 0.0,
            BusRole::Pq => -loads[i].0,
            BusRole::Pv => case.buses[i].p_gen - loads[i].0,
            BusRole::FixedInjection(s) => s.re,
        })
        .collect();
    let q_spec: Vec<f64> = (0..n)
        .map(|i| match roles[i] {
            BusRole::Slack | BusRole::Pv => 0.0,
            BusRole::Pq => -loads[i].1,
            BusRole::FixedInjection(s) => s.im,
        })
        .collect();

    let ang_buses: Vec<usize> =
        (0..n).filter(|&i| roles[i] != BusRole::Slack).collect();
    let mag_buses: Vec<usize> = (0..n)
        .filter(|&i| matches!(roles[i], BusRole::Pq | BusRole::FixedInjection(_)))
        .collect();
    let dim = ang_buses.len() + mag_buses.len();

    let mismatch = |vm: &[f64], va: &[f64]| -> (Vec<f64>, Vec<Complex64>) {
        let v: Vec<Complex64> = vm.iter().zip(va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
        let s = y.injections(&v);
        let mut f = Vec::with_capacity(dim);
        for &i in &ang_buses {
            f.push(p_spec[i] - s[i].re);
        }
        for &i in &mag_buses {
            f.push(q_spec[i] - s[i].im);
        }
        (f, s)
    };

    let (mut f, mut s_calc) = mismatch(&vm, &va);
    let mut norm = inf_norm(&f);
    let mut iterations = 0;
    while norm >= cfg.tol {
        if iterations >= cfg.max_iter {
            return NrOutcome::Diverged(Divergence {
                reason: format!("no convergence in {} iterations", cfg.max_iter),
                iterations,
                last_mismatch: norm,
            });
        }
        iterations += 1;

        let jac = jacobian(y, &vm, &va, &s_calc, &ang_buses, &mag_buses);
        let fact = match factorize(&jac) {
            Ok(fact) => fact,
            Err(Error::SingularSystem { pivot_step }) => {
                return NrOutcome::Diverged(Divergence {
                    reason: format!("singular Jacobian at elimination step {pivot_step}"),
                    iterations,
                    last_mismatch: norm,
                })
            }
            Err(e) => {
                return NrOutcome::Diverged(Divergence {
                    reason: format!("{e}"),
                    iterations,
                    last_mismatch: norm,
                })
            }
        };
        let dx = match fact.solve(&f) {
            Ok(dx) => dx,
            Err(e) => {
                return NrOutcome::Diverged(Divergence {
                    reason: format!("{e}"),
                    iterations,
                    last_mismatch: norm,
                })
            }
        };
        for (slot, &i) in ang_buses.iter().enumerate() {
            va[i] += dx[slot];
        }
        for (slot, &i) in mag_buses.iter().enumerate() {
            vm[i] += dx[ang_buses.len() + slot];
        }
        if vm.iter().any(|m| !m.is_finite() || *m <= 0.0) || va.iter().any(|a| !a.is_finite()) {
            return NrOutcome::Diverged(Divergence {
                reason: String::from("iterate left the physical voltage region"),
                iterations,
                last_mismatch: norm,
            });
        }
        let (nf, ns) = mismatch(&vm, &va);
        f = nf;
        s_calc = ns;
        norm = inf_norm(&f);
        if !norm.is_finite() {
            return NrOutcome::Diverged(Divergence {
                reason: String::from("mismatch became non-finite"),
                iterations,
                last_mismatch: norm,
            });
        }
    }

    let v: Vec<Complex64> = vm.iter().zip(&va).map(|(&m, &a)| Complex64::from_polar(m, a)).collect();
    let q_gen: Vec<f64> = (0..n)
        .map(|i| match roles[i] {
            BusRole::Slack | BusRole::Pv => s_calc[i].im + loads[i].1,
            BusRole::FixedInjection(_) => s_calc[i].im + loads[i].1,
            BusRole::Pq => 0.0,
        })
        .collect();
    NrOutcome::Converged(PfSolution {
        v,
        s_inj: s_calc,
        q_gen,
        iterations,
        max_residual: norm,
        switched: Vec::new(),
    })
}

fn inf_norm(f: &[f64]) -> f64 {
    f.iter().fold(0.0f64, |m, v| m.max(v.abs()))
}

fn jacobian(
    y: &AdmittanceMatrix,
    vm: &[f64],
    va: &[f64],
    s_calc: &[Complex64],
    ang_buses: &[usize],
    mag_buses: &[usize],
) -> RealMatrix {
    let na = ang_buses.len();
    let dim = na + mag_buses.len();
    let mut jac = RealMatrix::zeros(dim, dim);
    let term = |i: usize, k: usize| -> (f64, f64) {
        let g = y.at(i, k).re;
        let b = y.at(i, k).im;
        let th = va[i] - va[k];
        let (sin, cos) = th.sin_cos();
        (g * cos + b * sin, g * sin - b * cos)
    };
    // dP rows.
    for (row, &i) in ang_buses.iter().enumerate() {
        for (col, &k) in ang_buses.iter().enumerate() {
            let v = if i == k {
                -s_calc[i].im - y.at(i, i).im * vm[i] * vm[i]
            } else {
                let (_, t2) = term(i, k);
                vm[i] * vm[k] * t2
            };
            jac.set(row, col, v);
        }
        for (col, &k) in mag_buses.iter().enumerate() {
            let v = if i == k {
                s_calc[i].re / vm[i] + y.at(i, i).re * vm[i]
            } else {
                let (t1, _) = term(i, k);
                vm[i] * t1
            };
            jac.set(row, na + col, v);
        }
    }
    // dQ rows.
    for (row, &i) in mag_buses.iter().enumerate() {
        for (col, &k) in ang_buses.iter().enumerate() {
            let v = if i == k {
                s_calc[i].re - y.at(i, i).re * vm[i] * vm[i]
            } else {
                let (t1, _) = term(i, k);
                -vm[i] * vm[k] * t1
            };
            jac.set(na + row, col, v);
        }
        for (col, &k) in mag_buses.iter().enumerate() {
            let v = if i == k {
                s_calc[i].im / vm[i] - y.at(i, i).im * vm[i]
            } else {
                let (_, t2) = term(i, k);
                vm[i] * t2
            };
            jac.set(na + row, na + col, v);
        }
    }
    jac
}

/// One grid point of an oracle comparison.
#[derive(Debug, Clone)]
pub struct GridCompareRow {
    pub s: Vec<f64>,
    pub evaluated: PfSolution,
    pub nr: Option<PfSolution>,
    /// Largest per-bus voltage difference, absent when N-R diverged.
    pub max_dv: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct GridComparison {
    pub rows: Vec<GridCompareRow>,
    pub convergent_points: usize,
    /// Statistics over the N-R-convergent subset only.
    pub max_error: Option<f64>,
    pub mean_error: Option<f64>,
}

/// Evaluate the artifact on a set of grid points and compare against the
/// oracle, solving the same converted system at each point. Divergent
/// points are excluded from the error statistics.
pub fn nr_grid_compare(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    artifact: &MdhemArtifact,
    points: &[Vec<f64>],
    cfg: &NrConfig,
) -> Result<GridComparison> {
    let got = case.digest();
    if got != artifact.case_digest {
        return Err(Error::DigestMismatch { expected: artifact.case_digest, got });
    }
    let mut rows = Vec::with_capacity(points.len());
    let mut max_error: Option<f64> = None;
    let mut error_sum = 0.0;
    let mut convergent_points = 0;
    for s in points {
        let evaluated = artifact.evaluate(s)?;
        let loads = artifact.assignment.loads_at(case, s)?;
        let outcome = nr_solve(case, y, &artifact.conversions, &loads, cfg);
        let (nr, max_dv) = match outcome {
            NrOutcome::Converged(sol) => {
                let dv = sol
                    .v
                    .iter()
                    .zip(&evaluated.v)
                    .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
                convergent_points += 1;
                error_sum += dv;
                max_error = Some(max_error.map_or(dv, |m: f64| m.max(dv)));
                (Some(sol), Some(dv))
            }
            NrOutcome::Diverged(_) => (None, None),
        };
        rows.push(GridCompareRow { s: s.clone(), evaluated, nr, max_dv });
    }
    let mean_error =
        if convergent_points > 0 { Some(error_sum / convergent_points as f64) } else { None };
    Ok(GridComparison { rows, convergent_points, max_error, mean_error })
}

/// Base loads straight from the case, one `(p, q)` pair per bus.
pub fn base_loads(case: &NetworkCase) -> Vec<(f64, f64)> {
    case.buses.iter().map(|b| (b.p_load, b.q_load)).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::network::build_ybus;

    #[test]
    fn zero_load_case_is_flat() {
        let buses = vec![
            crate::network::BusSpec::slack(1, 1.0, 0.0),
            crate::network::BusSpec::load(2, 0.0, 0.0),
            crate::network::BusSpec::load(3, 0.0, 0.0),
        ];
        let branches = vec![
            crate::network::BranchSpec::from_impedance(1, 2, 0.01, 0.05, 0.0).unwrap(),
            crate::network::BranchSpec::from_impedance(2, 3, 0.02, 0.08, 0.0).unwrap(),
        ];
        let case = crate::network::NetworkCase::new(100.0, buses, branches);
        case.validate().unwrap();
        let y = build_ybus(&case).unwrap();
        let sol = nr_solve(&case, &y, &[], &base_loads(&case), &NrConfig::default());
        let sol = sol.converged().expect("flat case converges");
        assert_eq!(sol.iterations, 0);
        for v in &sol.v {
            assert!((v - Complex64::new(1.0, 0.0)).norm() <= 1e-12);
        }
    }

    #[test]
    fn case3_self_residual() {
        let case = cases::case3();
        let y = build_ybus(&case).unwrap();
        let sol = nr_solve(&case, &y, &[], &base_loads(&case), &NrConfig::default());
        let sol = sol.converged().expect("base case converges");
        // Recompute injections from the solved voltages and compare with
        // the specification.
        let s = y.injections(&sol.v);
        let pq = case.pq_indices();
        for &i in &pq {
            let spec = Complex64::new(-case.buses[i].p_load, -case.buses[i].q_load);
            assert!((s[i] - spec).norm() <= 1e-10, "bus {i}");
        }
        for &i in &case.pv_indices() {
            assert!((s[i].re - case.buses[i].net_p()).abs() <= 1e-10);
            assert!((sol.v[i].norm() - case.buses[i].v_setpoint).abs() <= 1e-10);
        }
    }

    #[test]
    fn far_beyond_nose_diverges() {
        let case = cases::case4();
        let y = build_ybus(&case).unwrap();
        let loads: Vec<(f64, f64)> =
            case.buses.iter().map(|b| (b.p_load * 40.0, b.q_load * 40.0)).collect();
        let outcome = nr_solve(&case, &y, &[], &loads, &NrConfig::default());
        assert!(!outcome.is_converged());
    }

    #[test]
    fn start_point_independence() {
        let case = cases::ieee14();
        let y = build_ybus(&case).unwrap();
        let flat = nr_solve(&case, &y, &[], &base_loads(&case), &NrConfig::default());
        let flat = flat.converged().expect("base case");
        let perturbed: Vec<Complex64> =
            flat.v.iter().map(|v| v + Complex64::new(0.01, -0.005)).collect();
        let cfg = NrConfig { start: StartPoint::Given(perturbed), ..NrConfig::default() };
        let again = nr_solve(&case, &y, &[], &base_loads(&case), &cfg);
        let again = again.converged().expect("perturbed start");
        for (a, b) in flat.v.iter().zip(&again.v) {
            assert!((a - b).norm() <= 1e-8);
        }
    }

    #[test]
    fn flat_and_germ_starts_agree_across_grid() {
        let case = cases::case4();
        let y = build_ybus(&case).unwrap();
        let germ = crate::germ::compute_germ(&case, &y, &[], &crate::germ::GermConfig::default())
            .unwrap();
        let assignment = crate::mdhem::ScaleAssignment::per_load_bus(&case).unwrap();
        for i in 0..=4 {
            for j in 0..=4 {
                let s = [i as f64 * 0.5, j as f64 * 0.5];
                let loads = assignment.loads_at(&case, &s).unwrap();
                let flat = nr_solve(&case, &y, &[], &loads, &NrConfig::default());
                let cfg = NrConfig {
                    start: StartPoint::Germ(germ.v0.clone()),
                    ..NrConfig::default()
                };
                let from_germ = nr_solve(&case, &y, &[], &loads, &cfg);
                if let (Some(a), Some(b)) = (flat.converged(), from_germ.converged()) {
                    for (x, y) in a.v.iter().zip(&b.v) {
                        assert!((x - y).norm() <= 1e-8, "at {s:?}");
                    }
                }
            }
        }
    }

    #[test]
    fn q_limit_switching_pins_generator_output() {
        // Tight upper limit: the PV bus cannot hold its setpoint.
        let buses = vec![
            crate::network::BusSpec::slack(1, 1.0, 0.0),
            crate::network::BusSpec::load(2, 0.4, 0.5),
            crate::network::BusSpec::generator(3, 1.05, 0.3, -0.1, 0.1),
        ];
        let branches = vec![
            crate::network::BranchSpec::from_impedance(1, 2, 0.01, 0.08, 0.0).unwrap(),
            crate::network::BranchSpec::from_impedance(2, 3, 0.01, 0.08, 0.0).unwrap(),
        ];
        let case = crate::network::NetworkCase::new(100.0, buses, branches);
        case.validate().unwrap();
        let y = build_ybus(&case).unwrap();
        let cfg = NrConfig { enforce_q_limits: true, ..NrConfig::default() };
        let sol = nr_solve(&case, &y, &[], &base_loads(&case), &cfg);
        let sol = sol.converged().expect("limited case converges");
        assert_eq!(sol.switched.len(), 1);
        assert_eq!(sol.switched[0].bus, 2);
        assert!(sol.switched[0].at_upper);
        assert!((sol.q_gen[2] - 0.1).abs() <= 1e-9);
        assert!(sol.v[2].norm() < 1.05);
    }
}
