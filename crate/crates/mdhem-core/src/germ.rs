//! Physical germ solution.
//!
//! The germ is the operating point the multivariate series expand
//! around: no load at PQ buses, every PV bus at its specified active
//! power with its voltage magnitude controlled to the setpoint. It is
//! computed in two steps:
//!
//! 1. point A — only the slack bus propagates its voltage through the
//!    passive network, every other bus has zero injection;
//! 2. a single-variable embedding ramps PV active power and the squared
//!    magnitude from point A to the setpoint, solved order by order on
//!    an augmented real system of dimension `2s + 2p + 5v` (each PV bus
//!    carries its voltage, reciprocal-voltage and reactive-power
//!    coefficients as unknowns).
//!
//! Buses converted to fixed injections by the reactive-limit loop embed
//! their full injection with the same ramp variable and no magnitude
//! constraint.

use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mpseries::{IndexSet, MpSeries};
use crate::network::{bus_roles, AdmittanceMatrix, BusRole, NetworkCase, PvToPqConversion};
use crate::numeric::{factorize, stamp_mul, RealMatrix};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GermConfig {
    /// Order cap for the germ series.
    pub n_max: usize,
    /// Tail tolerance: the run stops once the largest coefficient
    /// magnitude of an order falls below this.
    pub tol: f64,
}

impl Default for GermConfig {
    fn default() -> Self {
        Self { n_max: 40, tol: 1e-10 }
    }
}

/// Converged germ: the series anchor of every embedding.
#[derive(Debug, Clone, PartialEq)]
pub struct GermSolution {
    /// Step-1 voltages (point A).
    pub v_st: Vec<Complex64>,
    /// Germ voltages, the order-zero series coefficients.
    pub v0: Vec<Complex64>,
    /// Exact reciprocals `1 / v0`.
    pub w0: Vec<Complex64>,
    /// Germ reactive injection per bus; nonzero only at PV buses.
    pub q0: Vec<f64>,
    /// Largest coefficient magnitude of the last computed order.
    pub tail: f64,
    /// Tail magnitude per order, starting at order 1.
    pub tails: Vec<f64>,
    pub orders_used: usize,
}

/// Residuals of the germ against the power-flow equations.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GermFeasibility {
    /// Largest `|S_i|` over PQ buses.
    pub max_pq_injection: f64,
    /// Largest `|Re S_i - P_i|` over PV buses.
    pub max_pv_p_dev: f64,
    /// Largest `||V_i| - setpoint|` over PV buses.
    pub max_pv_v_dev: f64,
    /// Largest `|S_i - S_fixed|` over converted buses.
    pub max_fixed_dev: f64,
}

impl GermFeasibility {
    pub fn worst(&self) -> f64 {
        self.max_pq_injection
            .max(self.max_pv_p_dev)
            .max(self.max_pv_v_dev)
            .max(self.max_fixed_dev)
    }
}

/// Step 1: solve the linear system that pins slack rows to the slack
/// phasor and forces zero injection current into every other bus.
pub fn germ_step1(case: &NetworkCase, y: &AdmittanceMatrix) -> Result<Vec<Complex64>> {
    let n = case.n_buses();
    let slack = case.slack_index();
    let v_sl = case.slack_phasor();
    let mut a = RealMatrix::zeros(2 * n, 2 * n);
    let mut rhs = vec![0.0; 2 * n];
    for i in 0..n {
        let row = 2 * i;
        if i == slack {
            a.set(row, row, 1.0);
            a.set(row + 1, row + 1, 1.0);
            rhs[row] = v_sl.re;
            rhs[row + 1] = v_sl.im;
        } else {
            for k in 0..n {
                stamp_mul(&mut a, row, 2 * k, y.at(i, k));
            }
        }
    }
    let fact = factorize(&a).map_err(|e| match e {
        Error::SingularSystem { pivot_step } => {
            Error::StructurallySingular { bus: case.buses[pivot_step / 2].id }
        }
        other => other,
    })?;
    let x = fact.solve(&rhs)?;
    Ok((0..n).map(|i| Complex64::new(x[2 * i], x[2 * i + 1])).collect())
}

/// Column layout of the augmented germ system.
struct Layout {
    /// First column of each bus's voltage Re/Im pair.
    v_col: Vec<usize>,
    /// First column of the reciprocal pair (PV buses only).
    w_col: Vec<Option<usize>>,
    /// Reactive-power column (PV buses only).
    q_col: Vec<Option<usize>>,
    dim: usize,
}

fn layout(roles: &[BusRole]) -> Layout {
    let mut v_col = Vec::with_capacity(roles.len());
    let mut w_col = Vec::with_capacity(roles.len());
    let mut q_col = Vec::with_capacity(roles.len());
    let mut next = 0;
    for role in roles {
        v_col.push(next);
        next += 2;
        if *role == BusRole::Pv {
            w_col.push(Some(next));
            next += 2;
            q_col.push(Some(next));
            next += 1;
        } else {
            w_col.push(None);
            q_col.push(None);
        }
    }
    Layout { v_col, w_col, q_col, dim: next }
}

fn map_singular(case: &NetworkCase, lay: &Layout, e: Error) -> Error {
    if let Error::SingularSystem { pivot_step } = e {
        // The failing elimination step is a column; find its bus.
        let bus = (0..case.n_buses())
            .rev()
            .find(|&i| lay.v_col[i] <= pivot_step)
            .unwrap_or(0);
        Error::StructurallySingular { bus: case.buses[bus].id }
    } else {
        e
    }
}

/// Step 2: ramp PV generation and magnitude from point A to the germ.
pub fn germ_step2(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    conversions: &[PvToPqConversion],
    v_st: &[Complex64],
    cfg: &GermConfig,
) -> Result<GermSolution> {
    let n = case.n_buses();
    let roles = bus_roles(case, conversions);
    for (i, role) in roles.iter().enumerate() {
        if *role == BusRole::Pv && v_st[i].norm() < 1e-9 {
            return Err(Error::DegenerateGermAnchor { bus: case.buses[i].id });
        }
    }
    let lay = layout(&roles);
    let ix = IndexSet::new(1, cfg.n_max)?;

    let a = assemble_germ_lhs(case, y, &roles, &lay, v_st);
    let fact = factorize(&a).map_err(|e| map_singular(case, &lay, e))?;

    let mut v_ser: Vec<MpSeries> = (0..n).map(|_| MpSeries::zero(ix.clone())).collect();
    let mut w_ser: Vec<MpSeries> = (0..n).map(|_| MpSeries::zero(ix.clone())).collect();
    let mut q_ser: Vec<MpSeries> = (0..n).map(|_| MpSeries::zero(ix.clone())).collect();
    for i in 0..n {
        v_ser[i].set(0, v_st[i]);
        w_ser[i].set(0, Complex64::new(1.0, 0.0) / v_st[i]);
    }

    // Magnitude ramp constants `|V_sp|^2 - |V_ST|^2` per PV bus.
    let c1: Vec<f64> = (0..n)
        .map(|i| {
            let sp = case.buses[i].v_setpoint;
            sp * sp - (v_st[i] * v_st[i].conj()).re
        })
        .collect();

    let mut tails = Vec::new();
    let mut orders_used = 0;
    for order in 1..=cfg.n_max {
        let mut rhs = vec![0.0; lay.dim];
        let mut row = 0;
        for i in 0..n {
            match roles[i] {
                BusRole::Slack | BusRole::Pq => {
                    row += 2;
                }
                BusRole::FixedInjection(s_inj) => {
                    // Coefficient of s^order in  s * conj(S_fix) * W*(s).
                    let c = s_inj.conj() * w_ser[i].get(order - 1).conj();
                    rhs[row] = c.re;
                    rhs[row + 1] = c.im;
                    row += 2;
                }
                BusRole::Pv => {
                    let p_net = case.buses[i].net_p();
                    let qw = crate::mpseries::conv_kernel(
                        &ix,
                        q_ser[i].coeffs(),
                        w_ser[i].coeffs(),
                        order,
                        true,
                        true,
                        false,
                        true,
                    );
                    let c = p_net * w_ser[i].get(order - 1).conj()
                        - Complex64::new(0.0, 1.0) * qw;
                    rhs[row] = c.re;
                    rhs[row + 1] = c.im;
                    let wv = crate::mpseries::conv_kernel(
                        &ix,
                        w_ser[i].coeffs(),
                        v_ser[i].coeffs(),
                        order,
                        true,
                        true,
                        false,
                        false,
                    );
                    rhs[row + 2] = -wv.re;
                    rhs[row + 3] = -wv.im;
                    let vv = crate::mpseries::conv_kernel(
                        &ix,
                        v_ser[i].coeffs(),
                        v_ser[i].coeffs(),
                        order,
                        true,
                        true,
                        false,
                        true,
                    );
                    let constant = if order == 1 { c1[i] / 2.0 } else { 0.0 };
                    rhs[row + 4] = constant - 0.5 * vv.re;
                    row += 5;
                }
            }
        }

        let x = fact.solve(&rhs)?;
        let mut tail = 0.0f64;
        for i in 0..n {
            let v = Complex64::new(x[lay.v_col[i]], x[lay.v_col[i] + 1]);
            v_ser[i].set(order, v);
            tail = tail.max(v.norm());
            if let (Some(wc), Some(qc)) = (lay.w_col[i], lay.q_col[i]) {
                let w = Complex64::new(x[wc], x[wc + 1]);
                w_ser[i].set(order, w);
                q_ser[i].set(order, Complex64::new(x[qc], 0.0));
                tail = tail.max(w.norm()).max(x[qc].abs());
            } else {
                w_ser[i].seal_reciprocal_at(&v_ser[i], order);
                tail = tail.max(w_ser[i].get(order).norm());
            }
        }
        tails.push(tail);
        orders_used = order;
        if tail < cfg.tol {
            break;
        }
    }

    let tail = *tails.last().unwrap_or(&0.0);
    if tail >= cfg.tol {
        return Err(Error::GermNonConvergence { tail, orders: orders_used });
    }

    let one = [1.0f64];
    let v0: Vec<Complex64> = v_ser.iter().map(|s| s.evaluate(&one).unwrap()).collect();
    let q0: Vec<f64> = q_ser.iter().map(|s| s.evaluate(&one).unwrap().re).collect();
    let w0: Vec<Complex64> = v0.iter().map(|v| Complex64::new(1.0, 0.0) / v).collect();

    for (i, role) in roles.iter().enumerate() {
        if *role == BusRole::Pv {
            let deviation = (v0[i].norm() - case.buses[i].v_setpoint).abs();
            if deviation > 1e-8 {
                return Err(Error::GermConstraintViolation {
                    bus: case.buses[i].id,
                    deviation,
                });
            }
        }
    }

    Ok(GermSolution { v_st: v_st.to_vec(), v0, w0, q0, tail, tails, orders_used })
}

/// Both germ steps.
pub fn compute_germ(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    conversions: &[PvToPqConversion],
    cfg: &GermConfig,
) -> Result<GermSolution> {
    let v_st = germ_step1(case, y)?;
    germ_step2(case, y, conversions, &v_st, cfg)
}

fn assemble_germ_lhs(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    roles: &[BusRole],
    lay: &Layout,
    v_st: &[Complex64],
) -> RealMatrix {
    let n = case.n_buses();
    let mut a = RealMatrix::zeros(lay.dim, lay.dim);
    let mut row = 0;
    for i in 0..n {
        match roles[i] {
            BusRole::Slack => {
                a.set(row, lay.v_col[i], 1.0);
                a.set(row + 1, lay.v_col[i] + 1, 1.0);
                row += 2;
            }
            BusRole::Pq | BusRole::FixedInjection(_) => {
                for k in 0..n {
                    stamp_mul(&mut a, row, lay.v_col[k], y.at(i, k));
                }
                row += 2;
            }
            BusRole::Pv => {
                for k in 0..n {
                    stamp_mul(&mut a, row, lay.v_col[k], y.at(i, k));
                }
                // Same-order reactive unknown moved to the left:
                // + j * conj(W[0]) * Q[n].
                let cq = Complex64::new(0.0, 1.0) * (Complex64::new(1.0, 0.0) / v_st[i]).conj();
                let qc = lay.q_col[i].unwrap();
                a.add_to(row, qc, cq.re);
                a.add_to(row + 1, qc, cq.im);
                // Reciprocal definition rows: W[0] V[n] + V[0] W[n] = rhs.
                let w0 = Complex64::new(1.0, 0.0) / v_st[i];
                stamp_mul(&mut a, row + 2, lay.v_col[i], w0);
                stamp_mul(&mut a, row + 2, lay.w_col[i].unwrap(), v_st[i]);
                // Magnitude row: Re(conj(V[0]) V[n]) = rhs.
                a.add_to(row + 4, lay.v_col[i], v_st[i].re);
                a.add_to(row + 4, lay.v_col[i] + 1, v_st[i].im);
                row += 5;
            }
        }
    }
    a
}

/// Power-flow residuals of the germ operating point.
pub fn germ_feasibility(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    conversions: &[PvToPqConversion],
    germ: &GermSolution,
) -> GermFeasibility {
    let roles = bus_roles(case, conversions);
    let s = y.injections(&germ.v0);
    let mut out = GermFeasibility {
        max_pq_injection: 0.0,
        max_pv_p_dev: 0.0,
        max_pv_v_dev: 0.0,
        max_fixed_dev: 0.0,
    };
    for (i, role) in roles.iter().enumerate() {
        match role {
            BusRole::Slack => {}
            BusRole::Pq => out.max_pq_injection = out.max_pq_injection.max(s[i].norm()),
            BusRole::Pv => {
                out.max_pv_p_dev =
                    out.max_pv_p_dev.max((s[i].re - case.buses[i].net_p()).abs());
                out.max_pv_v_dev = out
                    .max_pv_v_dev
                    .max((germ.v0[i].norm() - case.buses[i].v_setpoint).abs());
            }
            BusRole::FixedInjection(s_fix) => {
                out.max_fixed_dev = out.max_fixed_dev.max((s[i] - s_fix).norm());
            }
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::network::{build_ybus, BranchSpec, BusKind, BusSpec};
    use crate::nr::{nr_solve, NrConfig, StartPoint};

    #[test]
    fn step1_flat_without_shunts() {
        let buses = vec![
            BusSpec::slack(1, 1.03, 0.1),
            BusSpec::load(2, 0.5, 0.2),
            BusSpec::generator(3, 1.0, 0.3, -1.0, 1.0),
        ];
        let branches = vec![
            BranchSpec::from_impedance(1, 2, 0.01, 0.08, 0.0).unwrap(),
            BranchSpec::from_impedance(2, 3, 0.02, 0.09, 0.0).unwrap(),
        ];
        let case = crate::network::NetworkCase::new(100.0, buses, branches);
        let y = build_ybus(&case).unwrap();
        let v_st = germ_step1(&case, &y).unwrap();
        let slack = case.slack_phasor();
        for v in &v_st {
            assert!((v - slack).norm() <= 1e-12);
        }
    }

    #[test]
    fn step1_residual_with_shunts() {
        let case = cases::ieee14();
        let y = build_ybus(&case).unwrap();
        let v_st = germ_step1(&case, &y).unwrap();
        let slack = case.slack_index();
        let currents = y.mul_vec(&v_st);
        for (i, c) in currents.iter().enumerate() {
            if i != slack {
                assert!(c.norm() <= 1e-12, "bus {i}: residual {}", c.norm());
            }
        }
        // Charging shunts push the propagated profile off the slack phasor.
        assert!(v_st.iter().any(|v| (v - case.slack_phasor()).norm() > 1e-6));
    }

    #[test]
    fn step1_matches_nr_with_zero_injections() {
        let case = cases::case3();
        let y = build_ybus(&case).unwrap();
        let v_st = germ_step1(&case, &y).unwrap();
        // Oracle: N-R with every non-slack bus treated as a zero-injection
        // PQ bus.
        let mut zeroed = case.clone();
        for b in &mut zeroed.buses {
            if b.kind != BusKind::Slack {
                b.kind = BusKind::Pq;
                b.p_load = 0.0;
                b.q_load = 0.0;
                b.p_gen = 0.0;
            }
        }
        let sol = nr_solve(&zeroed, &y, &[], &crate::nr::base_loads(&zeroed), &NrConfig::default());
        let sol = sol.converged().expect("zero-injection case converges");
        for (a, b) in v_st.iter().zip(&sol.v) {
            assert!((a - b).norm() <= 1e-8);
        }
    }

    #[test]
    fn trivial_germ_stops_at_first_order() {
        // No shunts: point A is the flat slack profile; PV setpoint equal
        // to the propagated magnitude and zero generation leave nothing
        // to ramp.
        let buses = vec![
            BusSpec::slack(1, 1.0, 0.0),
            BusSpec::load(2, 0.4, 0.1),
            BusSpec::generator(3, 1.0, 0.0, -1.0, 1.0),
        ];
        let branches = vec![
            BranchSpec::from_impedance(1, 2, 0.01, 0.08, 0.0).unwrap(),
            BranchSpec::from_impedance(2, 3, 0.02, 0.09, 0.0).unwrap(),
        ];
        let case = crate::network::NetworkCase::new(100.0, buses, branches);
        let y = build_ybus(&case).unwrap();
        let germ = compute_germ(&case, &y, &[], &GermConfig::default()).unwrap();
        assert_eq!(germ.orders_used, 1);
        assert!(germ.tail <= 1e-14);
        for (a, b) in germ.v0.iter().zip(&germ.v_st) {
            assert!((a - b).norm() <= 1e-14);
        }
    }

    #[test]
    fn case3_germ_is_feasible_and_matches_nr_at_zero_load() {
        let case = cases::case3();
        let y = build_ybus(&case).unwrap();
        let germ = compute_germ(&case, &y, &[], &GermConfig::default()).unwrap();
        let feas = germ_feasibility(&case, &y, &[], &germ);
        assert!(feas.max_pq_injection <= 1e-10, "pq residual {}", feas.max_pq_injection);
        assert!(feas.max_pv_v_dev <= 1e-10);
        assert!(feas.max_pv_p_dev <= 1e-10);
        // Oracle: N-R with loads removed (PV generation kept).
        let mut unloaded = case.clone();
        for b in &mut unloaded.buses {
            b.p_load = 0.0;
            b.q_load = 0.0;
        }
        let sol = nr_solve(&unloaded, &y, &[], &crate::nr::base_loads(&unloaded), &NrConfig::default());
        let sol = sol.converged().expect("unloaded case converges");
        for (a, b) in germ.v0.iter().zip(&sol.v) {
            assert!((a - b).norm() <= 1e-8);
        }
        let pv = case.pv_indices()[0];
        assert!((germ.q0[pv] - sol.s_inj[pv].im).abs() <= 1e-8);
    }

    #[test]
    fn ieee14_germ_feasibility() {
        let case = cases::ieee14();
        let y = build_ybus(&case).unwrap();
        let germ = compute_germ(&case, &y, &[], &GermConfig::default()).unwrap();
        let feas = germ_feasibility(&case, &y, &[], &germ);
        assert!(feas.max_pq_injection <= 1e-10, "pq {}", feas.max_pq_injection);
        assert!(feas.max_pv_v_dev <= 1e-10, "v dev {}", feas.max_pv_v_dev);
        assert!(feas.max_pv_p_dev <= 1e-10, "p dev {}", feas.max_pv_p_dev);
    }

    #[test]
    fn augmented_dimension_is_2s_2p_5v() {
        let case = cases::case3();
        let roles = bus_roles(&case, &[]);
        let lay = layout(&roles);
        let (s, p, v) = case.counts();
        assert_eq!(lay.dim, 2 * s + 2 * p + 5 * v);
        assert_eq!(lay.dim, 9);
    }

    #[test]
    fn germ_with_conversion_embeds_fixed_injection() {
        let case = cases::case3();
        let y = build_ybus(&case).unwrap();
        let pv = case.pv_indices()[0];
        let conv = PvToPqConversion { bus: pv, q_gen: 0.05, at_upper: true };
        let germ = compute_germ(&case, &y, &[conv], &GermConfig::default()).unwrap();
        let feas = germ_feasibility(&case, &y, &[conv], &germ);
        assert!(feas.worst() <= 1e-10, "worst {}", feas.worst());
        // Start-from-germ N-R with the same conversion agrees.
        let mut unloaded = case.clone();
        for b in &mut unloaded.buses {
            b.p_load = 0.0;
            b.q_load = 0.0;
        }
        let cfg = NrConfig { start: StartPoint::Germ(germ.v0.clone()), ..NrConfig::default() };
        let sol = nr_solve(&unloaded, &y, &[conv], &crate::nr::base_loads(&unloaded), &cfg);
        let sol = sol.converged().expect("converted germ case converges");
        for (a, b) in germ.v0.iter().zip(&sol.v) {
            assert!((a - b).norm() <= 1e-8);
        }
    }

    #[test]
    fn germ_tails_decay() {
        let case = cases::ieee14();
        let y = build_ybus(&case).unwrap();
        let germ = compute_germ(&case, &y, &[], &GermConfig::default()).unwrap();
        let k = germ.tails.len();
        assert!(k >= 3);
        assert!(germ.tails[k - 1] <= germ.tails[k - 3]);
    }
}
