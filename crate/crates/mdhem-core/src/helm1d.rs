//! Conventional single-dimensional holomorphic embedding, kept as the
//! background implementation and cross-check path.
//!
//! The admittance matrix is split into a series part with zero row sums
//! and a per-bus shunt part, so the germ is the flat profile 1 at angle 0
//! with no load, generation or shunt current. Load, generation and shunt
//! terms all carry the embedding variable and the final solution is the
//! series evaluated at 1.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::mpseries::{conv_kernel, IndexSet, MpSeries};
use crate::network::{AdmittanceMatrix, BusKind, NetworkCase};
use crate::numeric::{factorize, stamp_mul, RealMatrix};

#[derive(Debug, Clone)]
pub struct Helm1dSolution {
    pub v_series: Vec<MpSeries>,
    pub w_series: Vec<MpSeries>,
    /// Reactive-injection series at PV buses.
    pub q_series: Vec<Option<MpSeries>>,
    pub order: usize,
    /// Series evaluated at 1.
    pub v1: Vec<Complex64>,
    /// Net reactive injection at 1 per bus (PV buses).
    pub q1: Vec<f64>,
    pub tails: Vec<f64>,
    pub converged: bool,
    /// Present when the tail failed to decay; the embedding not
    /// converging does not prove the case has no solution.
    pub report: Option<String>,
}

/// Solve the base case through the single-dimensional embedding.
pub fn helm_solve(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    n_max: usize,
    tol: f64,
) -> Result<Helm1dSolution> {
    case.validate()?;
    let n = case.n_buses();
    let ix = IndexSet::new(1, n_max)?;
    let v_sl = case.slack_phasor();

    // Column layout: per-bus voltage pair, then one reactive column per
    // PV bus; one magnitude row per PV bus pins its real part.
    let mut v_col = Vec::with_capacity(n);
    let mut q_col: Vec<Option<usize>> = Vec::with_capacity(n);
    let mut next = 0;
    for bus in &case.buses {
        v_col.push(next);
        next += 2;
        if bus.kind == BusKind::Pv {
            q_col.push(Some(next));
            next += 1;
        } else {
            q_col.push(None);
        }
    }
    let dim = next;

    let mut a = RealMatrix::zeros(dim, dim);
    let mut row_of = Vec::with_capacity(n);
    let mut row = 0;
    for (i, bus) in case.buses.iter().enumerate() {
        row_of.push(row);
        match bus.kind {
            BusKind::Slack => {
                a.set(row, v_col[i], 1.0);
                a.set(row + 1, v_col[i] + 1, 1.0);
                row += 2;
            }
            BusKind::Pq => {
                for k in 0..n {
                    stamp_mul(&mut a, row, v_col[k], y.series_at(i, k));
                }
                row += 2;
            }
            BusKind::Pv => {
                for k in 0..n {
                    stamp_mul(&mut a, row, v_col[k], y.series_at(i, k));
                }
                // Same-order reactive term moved left; the germ
                // reciprocal is exactly 1, so it lands on the imaginary
                // row alone.
                a.add_to(row + 1, q_col[i].unwrap(), 1.0);
                // Magnitude row pins the real part.
                a.set(row + 2, v_col[i], 1.0);
                row += 3;
            }
        }
    }
    let fact = factorize(&a).map_err(|e| match e {
        Error::SingularSystem { pivot_step } => {
            let bus = (0..n).rev().find(|&i| v_col[i] <= pivot_step).unwrap_or(0);
            Error::StructurallySingular { bus: case.buses[bus].id }
        }
        other => other,
    })?;

    let one = Complex64::new(1.0, 0.0);
    let mut v_ser: Vec<MpSeries> = (0..n).map(|_| MpSeries::zero(ix.clone())).collect();
    let mut w_ser: Vec<MpSeries> = (0..n).map(|_| MpSeries::zero(ix.clone())).collect();
    let mut q_ser: Vec<MpSeries> = (0..n).map(|_| MpSeries::zero(ix.clone())).collect();
    for i in 0..n {
        v_ser[i].set(0, one);
        w_ser[i].set(0, one);
    }

    let mut tails = Vec::new();
    let mut order = 0;
    for m in 1..=n_max {
        let mut rhs = vec![0.0; dim];
        for (i, bus) in case.buses.iter().enumerate() {
            let r = row_of[i];
            match bus.kind {
                BusKind::Slack => {
                    if m == 1 {
                        rhs[r] = v_sl.re - 1.0;
                        rhs[r + 1] = v_sl.im;
                    }
                }
                BusKind::Pq => {
                    let s_conj = Complex64::new(-bus.p_load, bus.q_load);
                    let c = s_conj * w_ser[i].get(m - 1).conj()
                        - y.shunt(i) * v_ser[i].get(m - 1);
                    rhs[r] = c.re;
                    rhs[r + 1] = c.im;
                }
                BusKind::Pv => {
                    let qw = conv_kernel(
                        &ix,
                        q_ser[i].coeffs(),
                        w_ser[i].coeffs(),
                        m,
                        true,
                        true,
                        false,
                        true,
                    );
                    let c = bus.net_p() * w_ser[i].get(m - 1).conj()
                        - Complex64::new(0.0, 1.0) * qw
                        - y.shunt(i) * v_ser[i].get(m - 1);
                    rhs[r] = c.re;
                    rhs[r + 1] = c.im;
                    // Real part fixed by the magnitude expansion.
                    let vv = conv_kernel(
                        &ix,
                        v_ser[i].coeffs(),
                        v_ser[i].coeffs(),
                        m,
                        true,
                        true,
                        false,
                        true,
                    );
                    let sp = bus.v_setpoint;
                    let constant = if m == 1 { (sp * sp - 1.0) / 2.0 } else { 0.0 };
                    rhs[r + 2] = constant - 0.5 * vv.re;
                }
            }
        }
        let x = fact.solve(&rhs)?;
        let mut tail = 0.0f64;
        for i in 0..n {
            let v = Complex64::new(x[v_col[i]], x[v_col[i] + 1]);
            v_ser[i].set(m, v);
            tail = tail.max(v.norm());
            if let Some(qc) = q_col[i] {
                q_ser[i].set(m, Complex64::new(x[qc], 0.0));
                tail = tail.max(x[qc].abs());
            }
            w_ser[i].seal_reciprocal_at(&v_ser[i], m);
            tail = tail.max(w_ser[i].get(m).norm());
        }
        tails.push(tail);
        order = m;
        if tail < tol {
            break;
        }
    }

    let tail = *tails.last().unwrap_or(&0.0);
    let converged = tail < tol;
    let report = if converged {
        None
    } else {
        Some(format!(
            "series tail {tail:.3e} still above {tol:.1e} after {order} orders; \
             this does not prove the case is infeasible"
        ))
    };

    let at_one = [1.0f64];
    let v1: Vec<Complex64> = v_ser.iter().map(|s| s.evaluate(&at_one).unwrap()).collect();
    let q1: Vec<f64> = q_ser.iter().map(|s| s.evaluate(&at_one).unwrap().re).collect();
    let q_series = case
        .buses
        .iter()
        .zip(q_ser)
        .map(|(bus, s)| (bus.kind == BusKind::Pv).then_some(s))
        .collect();
    Ok(Helm1dSolution {
        v_series: v_ser,
        w_series: w_ser,
        q_series,
        order,
        v1,
        q1,
        tails,
        converged,
        report,
    })
}
