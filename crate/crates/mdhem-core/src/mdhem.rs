//! Multi-dimensional embedding engine.
//!
//! Every assigned load power is multiplied by one of `D` loading scales;
//! bus voltages become multivariate power series in those scales around
//! the germ. The per-order coefficient systems share one real matrix of
//! dimension `2s + 2p + 5v` (each PV bus carries voltage, reciprocal and
//! reactive-power unknowns), which is factorized once; the columns of an
//! order are solved in a single batch.

use alloc::format;
use alloc::string::String;
use alloc::sync::Arc;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::germ::{compute_germ, GermConfig, GermSolution};
use crate::mpseries::{conv_kernel, IndexSet, MpSeries};
use crate::network::{
    build_ybus, bus_roles, AdmittanceMatrix, BusKind, BusRole, NetworkCase, PvToPqConversion,
};
use crate::numeric::{factorize, stamp_mul, stamp_mul_conj, Factorization, RealMatrix};

/// Assignment of load powers to embedding dimensions.
///
/// Each PQ-bus active and reactive load is controlled by at most one of
/// the `D` scales; powers sharing a dimension scale together. PV active
/// powers and the slack bus are never assigned — they are fixed in the
/// germ.
#[derive(Debug, Clone, PartialEq)]
pub struct ScaleAssignment {
    dims: usize,
    names: Vec<String>,
    p_dim: Vec<Option<usize>>,
    q_dim: Vec<Option<usize>>,
}

impl ScaleAssignment {
    pub fn new(
        case: &NetworkCase,
        names: Vec<String>,
        p_dim: Vec<Option<usize>>,
        q_dim: Vec<Option<usize>>,
    ) -> Result<Self> {
        let dims = names.len();
        let assignment = Self { dims, names, p_dim, q_dim };
        assignment.validate(case)?;
        Ok(assignment)
    }

    fn validate(&self, case: &NetworkCase) -> Result<()> {
        let n = case.n_buses();
        if self.dims == 0 {
            return Err(Error::InvalidAssignment(String::from("at least one dimension required")));
        }
        if self.p_dim.len() != n || self.q_dim.len() != n {
            return Err(Error::InvalidAssignment(String::from(
                "assignment length does not match bus count",
            )));
        }
        let mut referenced = vec![false; self.dims];
        for (i, bus) in case.buses.iter().enumerate() {
            for (dim, label, load) in [
                (self.p_dim[i], "P", bus.p_load),
                (self.q_dim[i], "Q", bus.q_load),
            ] {
                match dim {
                    Some(d) if d >= self.dims => {
                        return Err(Error::InvalidAssignment(format!(
                            "bus {} {label} assigned to dimension {d} of {}",
                            bus.id, self.dims
                        )))
                    }
                    Some(d) => {
                        if bus.kind != BusKind::Pq {
                            return Err(Error::InvalidAssignment(format!(
                                "bus {} is not a PQ bus; only PQ-bus loads take scales",
                                bus.id
                            )));
                        }
                        referenced[d] = true;
                    }
                    None => {
                        if bus.kind == BusKind::Pq && load != 0.0 {
                            return Err(Error::InvalidAssignment(format!(
                                "bus {} has a nonzero {label} load without a scale",
                                bus.id
                            )));
                        }
                    }
                }
            }
        }
        if let Some(d) = referenced.iter().position(|r| !r) {
            return Err(Error::InvalidAssignment(format!(
                "dimension '{}' controls no load",
                self.names[d]
            )));
        }
        Ok(())
    }

    /// All PQ loads grouped under a single scale.
    pub fn single(case: &NetworkCase) -> Result<Self> {
        let mut p_dim = vec![None; case.n_buses()];
        let mut q_dim = vec![None; case.n_buses()];
        for (i, bus) in case.buses.iter().enumerate() {
            if bus.kind == BusKind::Pq {
                p_dim[i] = Some(0);
                q_dim[i] = Some(0);
            }
        }
        Self::new(case, vec![String::from("s1")], p_dim, q_dim)
    }

    /// One scale per load bus (PQ bus with any nonzero load); the bus's
    /// P and Q share the dimension.
    pub fn per_load_bus(case: &NetworkCase) -> Result<Self> {
        let mut names = Vec::new();
        let mut p_dim = vec![None; case.n_buses()];
        let mut q_dim = vec![None; case.n_buses()];
        for (i, bus) in case.buses.iter().enumerate() {
            if bus.kind == BusKind::Pq && (bus.p_load != 0.0 || bus.q_load != 0.0) {
                let d = names.len();
                names.push(format!("s{}", d + 1));
                p_dim[i] = Some(d);
                q_dim[i] = Some(d);
            }
        }
        Self::new(case, names, p_dim, q_dim)
    }

    /// One scale per case area, controlling the PQ loads of the area's
    /// buses.
    pub fn from_areas(case: &NetworkCase) -> Result<Self> {
        if case.areas.is_empty() {
            return Err(Error::InvalidAssignment(String::from("case declares no areas")));
        }
        let mut names = Vec::new();
        let mut p_dim = vec![None; case.n_buses()];
        let mut q_dim = vec![None; case.n_buses()];
        for (d, area) in case.areas.iter().enumerate() {
            names.push(area.name.clone());
            for id in &area.buses {
                let i = case
                    .bus_index(*id)
                    .ok_or_else(|| Error::InvalidAssignment(format!("unknown bus {id}")))?;
                if case.buses[i].kind == BusKind::Pq {
                    p_dim[i] = Some(d);
                    q_dim[i] = Some(d);
                }
            }
        }
        Self::new(case, names, p_dim, q_dim)
    }

    pub fn dims(&self) -> usize {
        self.dims
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn p_dim_of(&self, bus: usize) -> Option<usize> {
        self.p_dim[bus]
    }

    pub fn q_dim_of(&self, bus: usize) -> Option<usize> {
        self.q_dim[bus]
    }

    /// Effective `(p_load, q_load)` at every bus for a scale vector.
    /// Generator- and slack-bus loads are fixed.
    pub fn loads_at(&self, case: &NetworkCase, s: &[f64]) -> Result<Vec<(f64, f64)>> {
        if s.len() != self.dims {
            return Err(Error::DimensionMismatch { expected: self.dims, got: s.len() });
        }
        Ok(case
            .buses
            .iter()
            .enumerate()
            .map(|(i, bus)| {
                let p = match self.p_dim[i] {
                    Some(d) => bus.p_load * s[d],
                    None => bus.p_load,
                };
                let q = match self.q_dim[i] {
                    Some(d) => bus.q_load * s[d],
                    None => bus.q_load,
                };
                (p, q)
            })
            .collect())
    }

    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(&(self.dims as u32).to_le_bytes());
        for name in &self.names {
            out.extend_from_slice(&(name.len() as u32).to_le_bytes());
            out.extend_from_slice(name.as_bytes());
        }
        for dims in [&self.p_dim, &self.q_dim] {
            for d in dims.iter() {
                out.extend_from_slice(&(d.map(|v| v as i64).unwrap_or(-1)).to_le_bytes());
            }
        }
        out
    }

    pub fn digest(&self) -> u64 {
        crate::fnv1a64(&self.canonical_bytes())
    }
}

/// One power-flow operating point, from either solver path.
#[derive(Debug, Clone, PartialEq)]
pub struct PfSolution {
    pub v: Vec<Complex64>,
    /// Net complex injection recomputed from the voltages.
    pub s_inj: Vec<Complex64>,
    /// Generator reactive output per bus (meaningful at slack/PV/converted
    /// buses).
    pub q_gen: Vec<f64>,
    pub iterations: usize,
    /// Largest per-bus equation residual (N-R: final mismatch; series
    /// evaluation: PFE residual of the truncated solution).
    pub max_residual: f64,
    /// Bus-type switches applied while producing this solution.
    pub switched: Vec<PvToPqConversion>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QLimitViolation {
    pub bus: usize,
    pub q_gen: f64,
    pub limit: f64,
    pub at_upper: bool,
    pub excess: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MdhemOptions {
    /// Maximum total series order.
    pub m_max: usize,
    /// Stop early once an order's largest coefficient falls below this.
    pub tol: f64,
    pub germ: GermConfig,
}

impl Default for MdhemOptions {
    fn default() -> Self {
        Self { m_max: 12, tol: 1e-8, germ: GermConfig::default() }
    }
}

/// The solved embedding: per-bus voltage, reciprocal and reactive-power
/// series anchored at the germ, plus provenance metadata.
#[derive(Debug, Clone)]
pub struct MdhemArtifact {
    pub case: NetworkCase,
    pub assignment: ScaleAssignment,
    /// Solved series order (may stop short of the requested cap).
    pub order: usize,
    pub index_set: Arc<IndexSet>,
    pub v: Vec<MpSeries>,
    pub w: Vec<MpSeries>,
    /// Reactive-power series, present at PV buses.
    pub q: Vec<Option<MpSeries>>,
    pub germ: GermSolution,
    pub conversions: Vec<PvToPqConversion>,
    pub case_digest: u64,
    pub assignment_digest: u64,
    /// Largest coefficient magnitude per order, starting at order 1.
    pub tails: Vec<f64>,
    pub divergence_warning: Option<String>,
    y: AdmittanceMatrix,
}

impl MdhemArtifact {
    /// Rebuild an artifact from stored parts (deserialization path); the
    /// admittance matrix and digests are recomputed from the case.
    pub fn from_parts(
        case: NetworkCase,
        assignment: ScaleAssignment,
        order: usize,
        v: Vec<MpSeries>,
        w: Vec<MpSeries>,
        q: Vec<Option<MpSeries>>,
        germ: GermSolution,
        conversions: Vec<PvToPqConversion>,
        tails: Vec<f64>,
        divergence_warning: Option<String>,
    ) -> Result<Self> {
        case.validate()?;
        let y = build_ybus(&case)?;
        let n = case.n_buses();
        if v.len() != n || w.len() != n || q.len() != n {
            return Err(Error::ShapeMismatch);
        }
        let index_set = v[0].index_set().clone();
        let case_digest = case.digest();
        let assignment_digest = assignment.digest();
        Ok(Self {
            case,
            assignment,
            order,
            index_set,
            v,
            w,
            q,
            germ,
            conversions,
            case_digest,
            assignment_digest,
            tails,
            divergence_warning,
            y,
        })
    }

    pub fn y(&self) -> &AdmittanceMatrix {
        &self.y
    }

    pub fn dims(&self) -> usize {
        self.assignment.dims()
    }

    /// Evaluate every series at a scale vector and grade the result by
    /// its power-flow residual. Points outside the convergence region
    /// return large residuals, not errors.
    pub fn evaluate(&self, s: &[f64]) -> Result<PfSolution> {
        let n = self.case.n_buses();
        let mut v = Vec::with_capacity(n);
        for series in &self.v {
            v.push(series.evaluate(s)?);
        }
        let s_inj = self.y.injections(&v);
        let roles = bus_roles(&self.case, &self.conversions);
        let loads = self.assignment.loads_at(&self.case, s)?;
        let mut q_gen = vec![0.0; n];
        let mut max_residual = 0.0f64;
        for i in 0..n {
            let bus = &self.case.buses[i];
            match roles[i] {
                BusRole::Slack => {
                    q_gen[i] = s_inj[i].im + loads[i].1;
                }
                BusRole::Pq => {
                    let spec = Complex64::new(-loads[i].0, -loads[i].1);
                    max_residual = max_residual.max((s_inj[i] - spec).norm());
                }
                BusRole::Pv => {
                    let q_series = self.q[i].as_ref().expect("PV bus carries a Q series");
                    q_gen[i] = q_series.evaluate(s)?.re + loads[i].1;
                    max_residual = max_residual
                        .max((s_inj[i].re - bus.net_p()).abs())
                        .max((v[i].norm() - bus.v_setpoint).abs());
                }
                BusRole::FixedInjection(s_fix) => {
                    q_gen[i] = self
                        .conversions
                        .iter()
                        .find(|c| c.bus == i)
                        .map(|c| c.q_gen)
                        .unwrap_or(0.0);
                    max_residual = max_residual.max((s_inj[i] - s_fix).norm());
                }
            }
        }
        Ok(PfSolution {
            v,
            s_inj,
            q_gen,
            iterations: 0,
            max_residual,
            switched: self.conversions.clone(),
        })
    }

    /// Compare evaluated generator reactive output against the limits at
    /// one scale vector. Converted buses are already pinned and are not
    /// re-checked.
    pub fn check_q_limits(&self, s: &[f64]) -> Result<Vec<QLimitViolation>> {
        let roles = bus_roles(&self.case, &self.conversions);
        let loads = self.assignment.loads_at(&self.case, s)?;
        let mut out = Vec::new();
        for (i, role) in roles.iter().enumerate() {
            if *role != BusRole::Pv {
                continue;
            }
            let bus = &self.case.buses[i];
            let q_series = self.q[i].as_ref().expect("PV bus carries a Q series");
            let q_gen = q_series.evaluate(s)?.re + loads[i].1;
            if q_gen > bus.q_max {
                out.push(QLimitViolation {
                    bus: i,
                    q_gen,
                    limit: bus.q_max,
                    at_upper: true,
                    excess: q_gen - bus.q_max,
                });
            } else if q_gen < bus.q_min {
                out.push(QLimitViolation {
                    bus: i,
                    q_gen,
                    limit: bus.q_min,
                    at_upper: false,
                    excess: bus.q_min - q_gen,
                });
            }
        }
        Ok(out)
    }
}

/// Column layout of the embedding system for orders >= 1.
struct Layout {
    v_col: Vec<usize>,
    w_col: Vec<Option<usize>>,
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
        match role {
            BusRole::Pv => {
                w_col.push(Some(next));
                next += 2;
                q_col.push(Some(next));
                next += 1;
            }
            BusRole::FixedInjection(_) => {
                w_col.push(Some(next));
                next += 2;
                q_col.push(None);
            }
            _ => {
                w_col.push(None);
                q_col.push(None);
            }
        }
    }
    Layout { v_col, w_col, q_col, dim: next }
}

/// The order-independent left-hand matrix: slack rows pin coefficients,
/// PQ rows carry the admittance balance, PV buses contribute power
/// balance, reciprocal-definition and magnitude rows with their
/// same-order unknowns moved left, converted buses the same without the
/// reactive unknown and magnitude row.
fn assemble_lhs(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    roles: &[BusRole],
    lay: &Layout,
    germ: &GermSolution,
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
            BusRole::Pq => {
                for k in 0..n {
                    stamp_mul(&mut a, row, lay.v_col[k], y.at(i, k));
                }
                row += 2;
            }
            BusRole::FixedInjection(s_fix) => {
                for k in 0..n {
                    stamp_mul(&mut a, row, lay.v_col[k], y.at(i, k));
                }
                stamp_mul_conj(&mut a, row, lay.w_col[i].unwrap(), -s_fix.conj());
                stamp_mul(&mut a, row + 2, lay.v_col[i], germ.w0[i]);
                stamp_mul(&mut a, row + 2, lay.w_col[i].unwrap(), germ.v0[i]);
                row += 4;
            }
            BusRole::Pv => {
                for k in 0..n {
                    stamp_mul(&mut a, row, lay.v_col[k], y.at(i, k));
                }
                let s_germ_conj = Complex64::new(case.buses[i].net_p(), -germ.q0[i]);
                stamp_mul_conj(&mut a, row, lay.w_col[i].unwrap(), -s_germ_conj);
                let cq = Complex64::new(0.0, 1.0) * germ.w0[i].conj();
                let qc = lay.q_col[i].unwrap();
                a.add_to(row, qc, cq.re);
                a.add_to(row + 1, qc, cq.im);
                stamp_mul(&mut a, row + 2, lay.v_col[i], germ.w0[i]);
                stamp_mul(&mut a, row + 2, lay.w_col[i].unwrap(), germ.v0[i]);
                a.add_to(row + 4, lay.v_col[i], germ.v0[i].re);
                a.add_to(row + 4, lay.v_col[i] + 1, germ.v0[i].im);
                row += 5;
            }
        }
    }
    a
}

/// Artifact under construction: everything the per-order right-hand
/// sides read.
struct Recursion<'a> {
    case: &'a NetworkCase,
    assignment: &'a ScaleAssignment,
    roles: &'a [BusRole],
    lay: &'a Layout,
    ix: &'a Arc<IndexSet>,
    v: Vec<MpSeries>,
    w: Vec<MpSeries>,
    q: Vec<Option<MpSeries>>,
    sealed_degree: usize,
}

impl<'a> Recursion<'a> {
    /// Right-hand column for one multi-index of degree `sealed + 1`.
    fn rhs_for_index(&self, rank: usize) -> Result<Vec<f64>> {
        let degree = self.ix.degree_of(rank);
        if degree > self.sealed_degree + 1 || degree == 0 {
            return Err(Error::UnsealedOrder { degree });
        }
        let mut rhs = vec![0.0; self.lay.dim];
        let mut row = 0;
        for (i, role) in self.roles.iter().enumerate() {
            match role {
                BusRole::Slack => {
                    row += 2;
                }
                BusRole::Pq => {
                    let bus = &self.case.buses[i];
                    let mut c = Complex64::new(0.0, 0.0);
                    if let Some(d) = self.assignment.p_dim_of(i) {
                        if let Some(shifted) = self.ix.rank_shift_down(rank, d) {
                            c += -bus.p_load * self.w[i].get(shifted).conj();
                        }
                    }
                    if let Some(d) = self.assignment.q_dim_of(i) {
                        if let Some(shifted) = self.ix.rank_shift_down(rank, d) {
                            c += Complex64::new(0.0, 1.0) * bus.q_load * self.w[i].get(shifted).conj();
                        }
                    }
                    rhs[row] = c.re;
                    rhs[row + 1] = c.im;
                    row += 2;
                }
                BusRole::FixedInjection(_) => {
                    // Balance rows have every term of this order on the
                    // left; only the reciprocal interior remains.
                    let wv = conv_kernel(
                        self.ix,
                        self.w[i].coeffs(),
                        self.v[i].coeffs(),
                        rank,
                        true,
                        true,
                        false,
                        false,
                    );
                    rhs[row + 2] = -wv.re;
                    rhs[row + 3] = -wv.im;
                    row += 4;
                }
                BusRole::Pv => {
                    let q = self.q[i].as_ref().expect("PV bus carries a Q series");
                    let qw = conv_kernel(
                        self.ix,
                        q.coeffs(),
                        self.w[i].coeffs(),
                        rank,
                        true,
                        true,
                        false,
                        true,
                    );
                    let c = -Complex64::new(0.0, 1.0) * qw;
                    rhs[row] = c.re;
                    rhs[row + 1] = c.im;
                    let wv = conv_kernel(
                        self.ix,
                        self.w[i].coeffs(),
                        self.v[i].coeffs(),
                        rank,
                        true,
                        true,
                        false,
                        false,
                    );
                    rhs[row + 2] = -wv.re;
                    rhs[row + 3] = -wv.im;
                    let vv = conv_kernel(
                        self.ix,
                        self.v[i].coeffs(),
                        self.v[i].coeffs(),
                        rank,
                        true,
                        true,
                        false,
                        true,
                    );
                    rhs[row + 4] = -0.5 * vv.re;
                    row += 5;
                }
            }
        }
        Ok(rhs)
    }

    /// Write one solved column into the series.
    fn store_column(&mut self, rank: usize, x: &[f64]) -> f64 {
        let mut tail = 0.0f64;
        for i in 0..self.roles.len() {
            let v = Complex64::new(x[self.lay.v_col[i]], x[self.lay.v_col[i] + 1]);
            self.v[i].set(rank, v);
            tail = tail.max(v.norm());
            if let Some(wc) = self.lay.w_col[i] {
                let w = Complex64::new(x[wc], x[wc + 1]);
                self.w[i].set(rank, w);
                tail = tail.max(w.norm());
            }
            if let Some(qc) = self.lay.q_col[i] {
                let q = x[qc];
                self.q[i].as_mut().unwrap().set(rank, Complex64::new(q, 0.0));
                tail = tail.max(q.abs());
            }
        }
        tail
    }

    /// After an order's columns are stored, update the reciprocal series
    /// of the buses whose `W` is not an augmented unknown.
    fn seal_order(&mut self, degree: usize) {
        for i in 0..self.roles.len() {
            if self.lay.w_col[i].is_none() {
                for rank in self.ix.shell(degree) {
                    let (w, v) = (&mut self.w[i], &self.v[i]);
                    w.seal_reciprocal_at(v, rank);
                }
            }
        }
        self.sealed_degree = degree;
    }
}

fn map_singular(case: &NetworkCase, lay: &Layout, e: Error) -> Error {
    if let Error::SingularSystem { pivot_step } = e {
        let bus = (0..case.n_buses()).rev().find(|&i| lay.v_col[i] <= pivot_step).unwrap_or(0);
        Error::StructurallySingular { bus: case.buses[bus].id }
    } else {
        e
    }
}

/// Run the embedding recursion for a computed germ.
pub fn run(
    case: &NetworkCase,
    y: &AdmittanceMatrix,
    assignment: &ScaleAssignment,
    germ: &GermSolution,
    conversions: &[PvToPqConversion],
    opts: &MdhemOptions,
) -> Result<MdhemArtifact> {
    case.validate()?;
    assignment.validate(case)?;
    let n = case.n_buses();
    let roles = bus_roles(case, conversions);
    let lay = layout(&roles);
    let ix = IndexSet::new(assignment.dims(), opts.m_max)?;

    let mut v: Vec<MpSeries> = (0..n).map(|_| MpSeries::zero(ix.clone())).collect();
    let mut w: Vec<MpSeries> = (0..n).map(|_| MpSeries::zero(ix.clone())).collect();
    let mut q: Vec<Option<MpSeries>> = roles
        .iter()
        .map(|role| (*role == BusRole::Pv).then(|| MpSeries::zero(ix.clone())))
        .collect();
    for i in 0..n {
        v[i].set(0, germ.v0[i]);
        w[i].set(0, germ.w0[i]);
        if let Some(qs) = q[i].as_mut() {
            qs.set(0, Complex64::new(germ.q0[i], 0.0));
        }
    }

    let mut tails: Vec<f64> = Vec::new();
    let mut divergence_warning = None;
    let mut order = 0;

    if opts.m_max > 0 {
        let a = assemble_lhs(case, y, &roles, &lay, germ);
        let fact: Factorization = factorize(&a).map_err(|e| map_singular(case, &lay, e))?;
        let mut rec = Recursion {
            case,
            assignment,
            roles: &roles,
            lay: &lay,
            ix: &ix,
            v,
            w,
            q,
            sealed_degree: 0,
        };
        for m in 1..=opts.m_max {
            let shell = ix.shell(m);
            let mut b = RealMatrix::zeros(lay.dim, shell.len());
            for (col, rank) in shell.clone().enumerate() {
                let column = rec.rhs_for_index(rank)?;
                b.set_column(col, &column);
            }
            let solved = fact.solve_many(&b)?;
            let mut tail = 0.0f64;
            for (col, rank) in shell.clone().enumerate() {
                tail = tail.max(rec.store_column(rank, &solved.column(col)));
            }
            rec.seal_order(m);
            tails.push(tail);
            order = m;
            let k = tails.len();
            if divergence_warning.is_none() && k >= 3 && tails[k - 1] > tails[k - 2] && tails[k - 2] > tails[k - 3]
            {
                divergence_warning = Some(format!(
                    "series tail grew over orders {} to {} ({:.3e} -> {:.3e})",
                    k - 2,
                    k,
                    tails[k - 3],
                    tails[k - 1]
                ));
            }
            if tail < opts.tol {
                break;
            }
        }
        v = rec.v;
        w = rec.w;
        q = rec.q;
    }

    // Early stop: drop the untouched zero shells above the solved order.
    let (index_set, v, w, q) = if order < opts.m_max {
        let small = IndexSet::new(assignment.dims(), order)?;
        let trunc = |s: &MpSeries| s.truncated_to(small.clone()).expect("prefix truncation");
        let v2: Vec<MpSeries> = v.iter().map(&trunc).collect();
        let w2: Vec<MpSeries> = w.iter().map(&trunc).collect();
        let q2: Vec<Option<MpSeries>> = q.iter().map(|o| o.as_ref().map(&trunc)).collect();
        (small, v2, w2, q2)
    } else {
        (ix, v, w, q)
    };

    Ok(MdhemArtifact {
        case: case.clone(),
        assignment: assignment.clone(),
        order,
        index_set,
        v,
        w,
        q,
        germ: germ.clone(),
        conversions: conversions.to_vec(),
        case_digest: case.digest(),
        assignment_digest: assignment.digest(),
        tails,
        divergence_warning,
        y: y.clone(),
    })
}

/// Germ plus embedding, no reactive-limit handling.
pub fn solve(case: &NetworkCase, assignment: &ScaleAssignment, opts: &MdhemOptions) -> Result<MdhemArtifact> {
    case.validate()?;
    let y = build_ybus(case)?;
    let germ = compute_germ(case, &y, &[], &opts.germ)?;
    run(case, &y, assignment, &germ, &[], opts)
}

/// Solve with the reactive-limit loop: rebuild germ and artifact until
/// the evaluated generator outputs at `target_s` respect their limits,
/// converting the worst violator per pass. Conversions are never
/// reverted.
pub fn solve_with_limits(
    case: &NetworkCase,
    assignment: &ScaleAssignment,
    target_s: &[f64],
    opts: &MdhemOptions,
) -> Result<MdhemArtifact> {
    case.validate()?;
    let y = build_ybus(case)?;
    let v_count = case.pv_indices().len();
    let pass_cap = (2 * v_count).max(1);
    let mut conversions: Vec<PvToPqConversion> = Vec::new();
    for _pass in 0..pass_cap {
        // Convert anything already violating at the germ before running
        // the embedding.
        let germ = loop {
            let germ = compute_germ(case, &y, &conversions, &opts.germ)?;
            match worst_germ_violation(case, &conversions, &germ) {
                Some(conv) => conversions.push(conv),
                None => break germ,
            }
        };
        let artifact = run(case, &y, assignment, &germ, &conversions, opts)?;
        let violations = artifact.check_q_limits(target_s)?;
        match violations
            .iter()
            .max_by(|a, b| a.excess.partial_cmp(&b.excess).expect("finite excess"))
        {
            None => return Ok(artifact),
            Some(worst) => {
                conversions.push(PvToPqConversion {
                    bus: worst.bus,
                    q_gen: worst.limit,
                    at_upper: worst.at_upper,
                });
            }
        }
    }
    let log = conversions
        .iter()
        .map(|c| {
            format!(
                "bus {} -> {} limit {:.6}",
                case.buses[c.bus].id,
                if c.at_upper { "upper" } else { "lower" },
                c.q_gen
            )
        })
        .collect::<Vec<_>>()
        .join("; ");
    Err(Error::LimitLoopCap { passes: pass_cap, log })
}

fn worst_germ_violation(
    case: &NetworkCase,
    conversions: &[PvToPqConversion],
    germ: &GermSolution,
) -> Option<PvToPqConversion> {
    let roles = bus_roles(case, conversions);
    let mut worst: Option<(f64, PvToPqConversion)> = None;
    for (i, role) in roles.iter().enumerate() {
        if *role != BusRole::Pv {
            continue;
        }
        let bus = &case.buses[i];
        let q_gen = germ.q0[i] + bus.q_load;
        let candidate = if q_gen > bus.q_max {
            (q_gen - bus.q_max, PvToPqConversion { bus: i, q_gen: bus.q_max, at_upper: true })
        } else if q_gen < bus.q_min {
            (bus.q_min - q_gen, PvToPqConversion { bus: i, q_gen: bus.q_min, at_upper: false })
        } else {
            continue;
        };
        if worst.as_ref().is_none_or(|(excess, _)| candidate.0 > *excess) {
            worst = Some(candidate);
        }
    }
    worst.map(|(_, conv)| conv)
}

/// Memory and operation-count estimates for a run shape.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ResourceReport {
    pub lhs_dim: u64,
    /// Right-hand columns at the top order.
    pub cols_at_order: u64,
    /// Stored coefficients per series.
    pub terms_per_series: u64,
    /// Multiply count of the top-order convolutions:
    /// `(p + 3v) * cols * ((M-1)^D - 1)`.
    pub conv_multiplies: u64,
    /// Bytes for all V, W (complex) and Q (real) series at 8 bytes per
    /// real element.
    pub series_bytes: u64,
    pub lhs_bytes: u64,
    pub rhs_bytes: u64,
    /// Set when any count saturated u64.
    pub overflow: bool,
}

pub fn estimate_resources(dims: usize, m_max: usize, s: usize, p: usize, v: usize) -> ResourceReport {
    let mut overflow = false;
    let mut col = |value: Result<u64>| match value {
        Ok(v) => v,
        Err(_) => {
            overflow = true;
            u64::MAX
        }
    };
    let cols_at_order = col(crate::mpseries::n_col(dims.max(1), m_max));
    let terms_per_series = col(crate::mpseries::n_term(dims.max(1), m_max));
    let lhs_dim = (2 * s + 2 * p + 5 * v) as u64;
    let conv_count = {
        let base = (m_max as u128).saturating_sub(1);
        let per_conv = base.checked_pow(dims as u32).map(|x| x.saturating_sub(1)).unwrap_or_else(|| {
            overflow = true;
            u128::MAX
        });
        let total = (p as u128 + 3 * v as u128)
            .saturating_mul(cols_at_order as u128)
            .saturating_mul(per_conv);
        if total > u64::MAX as u128 {
            overflow = true;
            u64::MAX
        } else {
            total as u64
        }
    };
    let n_bus = (s + p + v) as u64;
    let series_bytes = terms_per_series
        .saturating_mul(8)
        .saturating_mul(4 * n_bus + v as u64);
    let lhs_bytes = lhs_dim.saturating_mul(lhs_dim).saturating_mul(8);
    let rhs_bytes = lhs_dim.saturating_mul(cols_at_order).saturating_mul(8);
    ResourceReport {
        lhs_dim,
        cols_at_order,
        terms_per_series,
        conv_multiplies: conv_count,
        series_bytes,
        lhs_bytes,
        rhs_bytes,
        overflow,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;
    use crate::nr::{nr_solve, NrConfig, NrOutcome};

    fn solved(case: &NetworkCase, assignment: &ScaleAssignment, m_max: usize) -> MdhemArtifact {
        let opts = MdhemOptions { m_max, tol: 1e-30, ..MdhemOptions::default() };
        solve(case, assignment, &opts).unwrap()
    }

    #[test]
    fn lhs_dimension_matches_formula() {
        let case = cases::case3();
        let roles = bus_roles(&case, &[]);
        let lay = layout(&roles);
        assert_eq!(lay.dim, 9);

        // Without PV buses the dimension collapses to 2s + 2p.
        let buses = vec![
            crate::network::BusSpec::slack(1, 1.0, 0.0),
            crate::network::BusSpec::load(2, 0.1, 0.05),
            crate::network::BusSpec::load(3, 0.2, 0.1),
        ];
        let case2 = NetworkCase::new(
            100.0,
            buses,
            vec![
                crate::network::BranchSpec::from_impedance(1, 2, 0.01, 0.1, 0.0).unwrap(),
                crate::network::BranchSpec::from_impedance(2, 3, 0.01, 0.1, 0.0).unwrap(),
            ],
        );
        let lay2 = layout(&bus_roles(&case2, &[]));
        assert_eq!(lay2.dim, 2 + 2 * 2);
    }

    #[test]
    fn lhs_is_order_independent() {
        let case = cases::case3();
        let y = build_ybus(&case).unwrap();
        let germ = compute_germ(&case, &y, &[], &GermConfig::default()).unwrap();
        let roles = bus_roles(&case, &[]);
        let lay = layout(&roles);
        let a1 = assemble_lhs(&case, &y, &roles, &lay, &germ);
        let a2 = assemble_lhs(&case, &y, &roles, &lay, &germ);
        assert_eq!(a1, a2);
    }

    #[test]
    fn zero_load_artifact_is_pure_germ() {
        let buses = vec![
            crate::network::BusSpec::slack(1, 1.02, 0.0),
            crate::network::BusSpec::load(2, 0.0, 0.0),
            crate::network::BusSpec::generator(3, 0.99, 0.2, -1.0, 1.0),
        ];
        let case = NetworkCase::new(
            100.0,
            buses,
            vec![
                crate::network::BranchSpec::from_impedance(1, 2, 0.01, 0.1, 0.02).unwrap(),
                crate::network::BranchSpec::from_impedance(2, 3, 0.01, 0.1, 0.02).unwrap(),
            ],
        );
        let assignment = ScaleAssignment::single(&case).unwrap();
        let opts = MdhemOptions { m_max: 6, ..MdhemOptions::default() };
        let artifact = solve(&case, &assignment, &opts).unwrap();
        for series in &artifact.v {
            for rank in 1..artifact.index_set.len() {
                assert!(series.get(rank).norm() <= 1e-12);
            }
        }
        // Evaluation anywhere returns the germ.
        let sol = artifact.evaluate(&[1.7]).unwrap();
        for (a, b) in sol.v.iter().zip(&artifact.germ.v0) {
            assert!((a - b).norm() <= 1e-10);
        }
    }

    #[test]
    fn order_zero_artifact_is_germ_only() {
        let case = cases::case4();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let artifact = solved(&case, &assignment, 0);
        assert_eq!(artifact.order, 0);
        assert_eq!(artifact.index_set.len(), 1);
        assert!(artifact.tails.is_empty());
        let sol = artifact.evaluate(&[0.7, 0.4]).unwrap();
        for (a, b) in sol.v.iter().zip(&artifact.germ.v0) {
            assert_eq!(a, b);
        }
    }

    #[test]
    fn first_order_rhs_is_decremented_germ_term() {
        let case = cases::case4();
        let y = build_ybus(&case).unwrap();
        let germ = compute_germ(&case, &y, &[], &GermConfig::default()).unwrap();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let roles = bus_roles(&case, &[]);
        let lay = layout(&roles);
        let ix = IndexSet::new(2, 4).unwrap();
        let n = case.n_buses();
        let mut rec = Recursion {
            case: &case,
            assignment: &assignment,
            roles: &roles,
            lay: &lay,
            ix: &ix,
            v: (0..n).map(|_| MpSeries::zero(ix.clone())).collect(),
            w: (0..n).map(|_| MpSeries::zero(ix.clone())).collect(),
            q: roles
                .iter()
                .map(|r| (*r == BusRole::Pv).then(|| MpSeries::zero(ix.clone())))
                .collect(),
            sealed_degree: 0,
        };
        for i in 0..n {
            rec.v[i].set(0, germ.v0[i]);
            rec.w[i].set(0, germ.w0[i]);
            if let Some(qs) = rec.q[i].as_mut() {
                qs.set(0, Complex64::new(germ.q0[i], 0.0));
            }
        }
        // Dimension 0 scales only bus 2's loads; at n = e_1 the only
        // nonzero PQ entries are bus 2's rows with P, Q against conj(W0).
        let rank_e1 = ix.rank_of(&[1, 0]).unwrap();
        let rhs = rec.rhs_for_index(rank_e1).unwrap();
        let bus2 = case.bus_index(2).unwrap();
        let bus3 = case.bus_index(3).unwrap();
        let b2 = &case.buses[bus2];
        let expected = (-b2.p_load + Complex64::new(0.0, 1.0) * b2.q_load) * germ.w0[bus2].conj();
        let r2 = lay.v_col[bus2];
        assert!((rhs[r2] - expected.re).abs() <= 1e-15);
        assert!((rhs[r2 + 1] - expected.im).abs() <= 1e-15);
        let r3 = lay.v_col[bus3];
        assert_eq!(rhs[r3], 0.0);
        assert_eq!(rhs[r3 + 1], 0.0);
        // Unsealed orders are refused.
        let rank_deg2 = ix.rank_of(&[1, 1]).unwrap();
        assert!(matches!(rec.rhs_for_index(rank_deg2), Err(Error::UnsealedOrder { degree: 2 })));
    }

    #[test]
    fn artifact_order_zero_equals_germ_bit_exact() {
        let case = cases::case4();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let artifact = solved(&case, &assignment, 4);
        for i in 0..case.n_buses() {
            assert_eq!(artifact.v[i].get(0), artifact.germ.v0[i]);
            assert_eq!(artifact.w[i].get(0), artifact.germ.w0[i]);
        }
        let sol = artifact.evaluate(&[0.0, 0.0]).unwrap();
        for (a, b) in sol.v.iter().zip(&artifact.germ.v0) {
            assert_eq!(a, b);
        }
    }

    /// Multiply a series by one scale variable: shift every coefficient
    /// up along `dim`, dropping overflowing degrees.
    fn shift_up(f: &MpSeries, dim: usize) -> MpSeries {
        let ix = f.index_set().clone();
        let mut out = MpSeries::zero(ix.clone());
        for (rank, exps) in ix.iter() {
            let mut up = exps.to_vec();
            up[dim] += 1;
            if let Some(r) = ix.rank_of(&up) {
                out.set(r, f.get(rank));
            }
        }
        out
    }

    /// Independent verification of the whole recursion: rebuild both
    /// sides of the embedded equations as full series products and
    /// compare coefficient-wise.
    #[test]
    fn solved_series_satisfy_embedded_equations() {
        let case = cases::case4();
        let y = build_ybus(&case).unwrap();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let artifact = solved(&case, &assignment, 6);
        let ix = artifact.index_set.clone();
        let n = case.n_buses();
        for i in 0..n {
            // Left side: sum_k Y_ik V_k as a series.
            let mut lhs = MpSeries::zero(ix.clone());
            for k in 0..n {
                for rank in 0..ix.len() {
                    let c = lhs.get(rank) + y.at(i, k) * artifact.v[k].get(rank);
                    lhs.set(rank, c);
                }
            }
            match case.buses[i].kind {
                BusKind::Slack => {}
                BusKind::Pq => {
                    let w_conj = artifact.w[i].conj_coeffs();
                    let mut rhs = MpSeries::zero(ix.clone());
                    if let Some(d) = assignment.p_dim_of(i) {
                        let t = shift_up(&w_conj, d);
                        for rank in 0..ix.len() {
                            rhs.set(rank, rhs.get(rank) + (-case.buses[i].p_load) * t.get(rank));
                        }
                    }
                    if let Some(d) = assignment.q_dim_of(i) {
                        let t = shift_up(&w_conj, d);
                        for rank in 0..ix.len() {
                            let c = rhs.get(rank)
                                + Complex64::new(0.0, 1.0) * case.buses[i].q_load * t.get(rank);
                            rhs.set(rank, c);
                        }
                    }
                    for rank in 0..ix.len() {
                        assert!(
                            (lhs.get(rank) - rhs.get(rank)).norm() <= 1e-10,
                            "PQ bus {i} rank {rank}"
                        );
                    }
                }
                BusKind::Pv => {
                    // (P - jQ(s)) * W*(s) via the generic product kernel.
                    let w_conj = artifact.w[i].conj_coeffs();
                    let q = artifact.q[i].as_ref().unwrap();
                    let mut p_minus_jq = MpSeries::zero(ix.clone());
                    for rank in 0..ix.len() {
                        let mut c = -Complex64::new(0.0, 1.0) * q.get(rank);
                        if rank == 0 {
                            c += Complex64::new(case.buses[i].net_p(), 0.0);
                        }
                        p_minus_jq.set(rank, c);
                    }
                    let rhs = p_minus_jq.truncated_product(&w_conj).unwrap();
                    for rank in 0..ix.len() {
                        assert!(
                            (lhs.get(rank) - rhs.get(rank)).norm() <= 1e-10,
                            "PV bus {i} rank {rank}"
                        );
                    }
                    // Magnitude constraint: conv(V, V*) is the squared
                    // setpoint at the origin and zero elsewhere.
                    let vv = artifact.v[i].truncated_product(&artifact.v[i].conj_coeffs()).unwrap();
                    let sp = case.buses[i].v_setpoint;
                    assert!((vv.get(0).re - sp * sp).abs() <= 1e-9);
                    for rank in 1..ix.len() {
                        assert!(vv.get(rank).norm() <= 1e-10, "magnitude rank {rank}");
                    }
                }
            }
            // Reciprocal identity at every bus.
            let unit = artifact.w[i].truncated_product(&artifact.v[i]).unwrap();
            assert!((unit.get(0) - Complex64::new(1.0, 0.0)).norm() <= 1e-12);
            for rank in 1..ix.len() {
                assert!(unit.get(rank).norm() <= 1e-12);
            }
            // Q-series coefficients stay real.
            if let Some(q) = artifact.q[i].as_ref() {
                for rank in 0..ix.len() {
                    assert!(q.get(rank).im.abs() <= 1e-12);
                }
            }
        }
    }

    #[test]
    fn evaluation_matches_nr_at_base_point() {
        let case = cases::case4();
        let y = build_ybus(&case).unwrap();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let artifact = solved(&case, &assignment, 12);
        let sol = artifact.evaluate(&[1.0, 1.0]).unwrap();
        let nr = nr_solve(&case, &y, &[], &crate::nr::base_loads(&case), &NrConfig::default());
        let nr = nr.converged().expect("base case converges");
        for (a, b) in sol.v.iter().zip(&nr.v) {
            assert!((a - b).norm() <= 1e-6, "{a} vs {b}");
        }
        assert!(sol.max_residual <= 1e-8);
    }

    #[test]
    fn residual_decays_with_order() {
        let case = cases::case4();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let r4 = solved(&case, &assignment, 4).evaluate(&[1.0, 1.0]).unwrap().max_residual;
        let r8 = solved(&case, &assignment, 8).evaluate(&[1.0, 1.0]).unwrap().max_residual;
        let r12 = solved(&case, &assignment, 12).evaluate(&[1.0, 1.0]).unwrap().max_residual;
        assert!(r8 <= r4 * 10.0);
        assert!(r12 <= r8 * 10.0);
        assert!(r12 < r4);
    }

    #[test]
    fn diagonal_of_2d_matches_grouped_1d() {
        let case = cases::case4();
        let two = ScaleAssignment::per_load_bus(&case).unwrap();
        let one = ScaleAssignment::single(&case).unwrap();
        let art2 = solved(&case, &two, 8);
        let art1 = solved(&case, &one, 8);
        for sigma in [0.0, 0.5, 1.0] {
            let a = art2.evaluate(&[sigma, sigma]).unwrap();
            let b = art1.evaluate(&[sigma]).unwrap();
            for (x, y) in a.v.iter().zip(&b.v) {
                assert!((x - y).norm() <= 1e-8, "sigma {sigma}");
            }
        }
    }

    #[test]
    fn far_point_reports_residual_without_error() {
        let case = cases::case4();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let artifact = solved(&case, &assignment, 8);
        let sol = artifact.evaluate(&[40.0, 40.0]).unwrap();
        assert!(sol.max_residual > 1.0);
    }

    #[test]
    fn q_limit_checks() {
        let case = cases::case4();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let artifact = solved(&case, &assignment, 8);
        // Germ point, generous limits: nothing violates.
        assert!(artifact.check_q_limits(&[0.0, 0.0]).unwrap().is_empty());
        assert!(artifact.check_q_limits(&[1.0, 1.0]).unwrap().is_empty());

        let tight = cases::case4_qlim();
        let assignment = ScaleAssignment::per_load_bus(&tight).unwrap();
        let artifact = solved(&tight, &assignment, 8);
        let violations = artifact.check_q_limits(&[1.5, 1.5]).unwrap();
        assert_eq!(violations.len(), 1);
        assert!(violations[0].at_upper);
        assert_eq!(tight.buses[violations[0].bus].id, 4);
    }

    #[test]
    fn limit_loop_converts_and_matches_limited_nr() {
        let case = cases::case4_qlim();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let opts = MdhemOptions::default();
        let artifact = solve_with_limits(&case, &assignment, &[1.5, 1.5], &opts).unwrap();
        assert_eq!(artifact.conversions.len(), 1);
        let y = build_ybus(&case).unwrap();
        let loads = assignment.loads_at(&case, &[1.5, 1.5]).unwrap();
        let cfg = NrConfig { enforce_q_limits: true, ..NrConfig::default() };
        let nr = match nr_solve(&case, &y, &[], &loads, &cfg) {
            NrOutcome::Converged(sol) => sol,
            NrOutcome::Diverged(d) => panic!("oracle diverged: {d:?}"),
        };
        assert_eq!(nr.switched.len(), 1);
        assert_eq!(nr.switched[0].bus, artifact.conversions[0].bus);
        let sol = artifact.evaluate(&[1.5, 1.5]).unwrap();
        for (a, b) in sol.v.iter().zip(&nr.v) {
            assert!((a - b).norm() <= 1e-3, "{a} vs {b}");
        }
    }

    #[test]
    fn no_violation_means_single_pass_empty_log() {
        let case = cases::case4();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let artifact =
            solve_with_limits(&case, &assignment, &[1.0, 1.0], &MdhemOptions::default()).unwrap();
        assert!(artifact.conversions.is_empty());
    }

    #[test]
    fn grid_compare_rejects_foreign_case() {
        let case = cases::case4();
        let assignment = ScaleAssignment::per_load_bus(&case).unwrap();
        let artifact = solved(&case, &assignment, 3);
        let mut other = case.clone();
        other.buses[1].q_load *= 2.0;
        let y = build_ybus(&other).unwrap();
        let err = crate::nr::nr_grid_compare(
            &other,
            &y,
            &artifact,
            &[vec![0.0, 0.0]],
            &crate::nr::NrConfig::default(),
        )
        .unwrap_err();
        assert!(matches!(err, Error::DigestMismatch { .. }));
    }

    #[test]
    fn resource_report_formulas() {
        let r = estimate_resources(1, 12, 1, 2, 1);
        assert_eq!(r.lhs_dim, 11);
        assert_eq!(r.cols_at_order, 1);
        assert_eq!(r.terms_per_series, 13);

        let r2 = estimate_resources(2, 12, 1, 2, 1);
        assert_eq!(r2.conv_multiplies, 5 * 13 * 120);

        let r4 = estimate_resources(4, 11, 1, 9, 4);
        assert_eq!(r4.cols_at_order, 364);
        assert_eq!(r4.terms_per_series, 1365);
        assert!(!r4.overflow);
    }

    #[test]
    fn assignment_validation() {
        let case = cases::case4();
        // Nonzero load left unassigned.
        let err = ScaleAssignment::new(
            &case,
            vec![String::from("s1")],
            vec![None, Some(0), None, None],
            vec![None, Some(0), None, None],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidAssignment(_)));
        // PV bus must not take a scale.
        let err = ScaleAssignment::new(
            &case,
            vec![String::from("s1")],
            vec![None, Some(0), Some(0), Some(0)],
            vec![None, Some(0), Some(0), None],
        )
        .unwrap_err();
        assert!(matches!(err, Error::InvalidAssignment(_)));
        // Areas of the bundled case give two dimensions.
        let areas = ScaleAssignment::from_areas(&case).unwrap();
        assert_eq!(areas.dims(), 2);
        assert_eq!(areas.names()[0], "load2");
    }
}
