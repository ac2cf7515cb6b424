//! Network case model and admittance-matrix construction.
//!
//! All electrical quantities are per-unit on the case MVA base. Loads are
//! constant power. The case is immutable after validation; solvers index
//! buses by position in `buses`.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use num_complex::Complex64;
use num_traits::Float;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BusKind {
    Slack,
    Pv,
    Pq,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BusSpec {
    pub id: u32,
    pub kind: BusKind,
    /// Voltage magnitude setpoint (slack and PV buses).
    pub v_setpoint: f64,
    /// Voltage angle in radians (slack bus).
    pub v_angle: f64,
    pub p_load: f64,
    pub q_load: f64,
    /// Specified active generation (PV buses).
    pub p_gen: f64,
    /// Generator reactive limits (PV buses); unlimited is +-infinity.
    pub q_min: f64,
    pub q_max: f64,
    /// Bus shunt admittance `g + jb`.
    pub shunt: Complex64,
}

impl BusSpec {
    pub fn load(id: u32, p_load: f64, q_load: f64) -> Self {
        Self {
            id,
            kind: BusKind::Pq,
            v_setpoint: 1.0,
            v_angle: 0.0,
            p_load,
            q_load,
            p_gen: 0.0,
            q_min: f64::neg_infinity(),
            q_max: f64::infinity(),
            shunt: Complex64::new(0.0, 0.0),
        }
    }

    pub fn slack(id: u32, v_setpoint: f64, v_angle: f64) -> Self {
        Self { id, kind: BusKind::Slack, v_setpoint, v_angle, ..Self::load(id, 0.0, 0.0) }
    }

    pub fn generator(id: u32, v_setpoint: f64, p_gen: f64, q_min: f64, q_max: f64) -> Self {
        Self { id, kind: BusKind::Pv, v_setpoint, p_gen, q_min, q_max, ..Self::load(id, 0.0, 0.0) }
    }

    pub fn with_load(mut self, p_load: f64, q_load: f64) -> Self {
        self.p_load = p_load;
        self.q_load = q_load;
        self
    }

    pub fn with_shunt(mut self, g: f64, b: f64) -> Self {
        self.shunt = Complex64::new(g, b);
        self
    }

    /// Net active injection for PV buses: generation minus local load.
    /// PV- and slack-bus loads are fixed; loading scales only act on PQ
    /// buses.
    pub fn net_p(&self) -> f64 {
        self.p_gen - self.p_load
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BranchSpec {
    pub from: u32,
    pub to: u32,
    pub series_admittance: Complex64,
    /// Total line charging admittance, split half-half to the endpoints.
    pub total_shunt: Complex64,
    /// Off-nominal transformer ratio `t * e^{j*phase}` on the from side.
    pub tap: Option<Complex64>,
}

impl BranchSpec {
    /// Branch from series impedance `r + jx` and total charging
    /// susceptance `b`.
    pub fn from_impedance(from: u32, to: u32, r: f64, x: f64, b: f64) -> Result<Self> {
        if r == 0.0 && x == 0.0 {
            return Err(Error::ZeroImpedanceBranch { from, to });
        }
        let z = Complex64::new(r, x);
        Ok(Self {
            from,
            to,
            series_admittance: Complex64::new(1.0, 0.0) / z,
            total_shunt: Complex64::new(0.0, b),
            tap: None,
        })
    }

    pub fn with_tap(mut self, ratio: f64, phase: f64) -> Self {
        self.tap = Some(Complex64::from_polar(ratio, phase));
        self
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AreaSpec {
    pub name: String,
    pub buses: Vec<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NetworkCase {
    pub base_mva: f64,
    pub buses: Vec<BusSpec>,
    pub branches: Vec<BranchSpec>,
    pub areas: Vec<AreaSpec>,
}

impl NetworkCase {
    pub fn new(base_mva: f64, buses: Vec<BusSpec>, branches: Vec<BranchSpec>) -> Self {
        Self { base_mva, buses, branches, areas: Vec::new() }
    }

    pub fn n_buses(&self) -> usize {
        self.buses.len()
    }

    pub fn bus_index(&self, id: u32) -> Option<usize> {
        self.buses.iter().position(|b| b.id == id)
    }

    pub fn slack_index(&self) -> usize {
        self.buses.iter().position(|b| b.kind == BusKind::Slack).expect("validated case")
    }

    pub fn slack_phasor(&self) -> Complex64 {
        let s = &self.buses[self.slack_index()];
        Complex64::from_polar(s.v_setpoint, s.v_angle)
    }

    pub fn pv_indices(&self) -> Vec<usize> {
        (0..self.n_buses()).filter(|&i| self.buses[i].kind == BusKind::Pv).collect()
    }

    pub fn pq_indices(&self) -> Vec<usize> {
        (0..self.n_buses()).filter(|&i| self.buses[i].kind == BusKind::Pq).collect()
    }

    /// `(slack, pq, pv)` bus counts.
    pub fn counts(&self) -> (usize, usize, usize) {
        let mut s = 0;
        let mut p = 0;
        let mut v = 0;
        for b in &self.buses {
            match b.kind {
                BusKind::Slack => s += 1,
                BusKind::Pq => p += 1,
                BusKind::Pv => v += 1,
            }
        }
        (s, p, v)
    }

    /// Check every case invariant; the error message names the first
    /// violated one.
    pub fn validate(&self) -> Result<()> {
        if self.buses.is_empty() {
            return Err(Error::InvalidCase(String::from("case has no buses")));
        }
        if !(self.base_mva.is_finite() && self.base_mva > 0.0) {
            return Err(Error::InvalidCase(String::from("base_mva must be finite and positive")));
        }
        let slack_count = self.buses.iter().filter(|b| b.kind == BusKind::Slack).count();
        if slack_count != 1 {
            return Err(Error::InvalidCase(format!(
                "exactly one slack bus required, found {slack_count}"
            )));
        }
        for (i, b) in self.buses.iter().enumerate() {
            if self.buses[..i].iter().any(|other| other.id == b.id) {
                return Err(Error::InvalidCase(format!("duplicate bus id {}", b.id)));
            }
            let fields = [b.v_setpoint, b.v_angle, b.p_load, b.q_load, b.p_gen, b.shunt.re, b.shunt.im];
            if fields.iter().any(|v| v.is_nan()) {
                return Err(Error::InvalidCase(format!("bus {} has a NaN field", b.id)));
            }
            match b.kind {
                BusKind::Slack | BusKind::Pv => {
                    if !(b.v_setpoint > 0.0) {
                        return Err(Error::InvalidCase(format!(
                            "bus {}: v_setpoint must be positive for slack/PV buses",
                            b.id
                        )));
                    }
                }
                BusKind::Pq => {}
            }
            if b.kind == BusKind::Pv && !(b.q_min <= b.q_max) {
                return Err(Error::InvalidCase(format!(
                    "bus {}: q_min must not exceed q_max",
                    b.id
                )));
            }
        }
        for br in &self.branches {
            if br.from == br.to {
                return Err(Error::InvalidCase(format!(
                    "branch {}-{} connects a bus to itself",
                    br.from, br.to
                )));
            }
            if self.bus_index(br.from).is_none() || self.bus_index(br.to).is_none() {
                return Err(Error::InvalidCase(format!(
                    "branch {}-{} references an unknown bus",
                    br.from, br.to
                )));
            }
            let y = br.series_admittance;
            if !(y.re.is_finite() && y.im.is_finite()) || y == Complex64::new(0.0, 0.0) {
                return Err(Error::ZeroImpedanceBranch { from: br.from, to: br.to });
            }
        }
        for area in &self.areas {
            for bus in &area.buses {
                if self.bus_index(*bus).is_none() {
                    return Err(Error::InvalidCase(format!(
                        "area '{}' references unknown bus {bus}",
                        area.name
                    )));
                }
            }
        }
        Ok(())
    }

    /// Canonical byte encoding used for the case digest: every field in
    /// declaration order, floats as little-endian IEEE 754 bits.
    pub fn canonical_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        let f = |buf: &mut Vec<u8>, v: f64| buf.extend_from_slice(&v.to_le_bytes());
        f(&mut out, self.base_mva);
        out.extend_from_slice(&(self.buses.len() as u32).to_le_bytes());
        for b in &self.buses {
            out.extend_from_slice(&b.id.to_le_bytes());
            out.push(match b.kind {
                BusKind::Slack => 0,
                BusKind::Pv => 1,
                BusKind::Pq => 2,
            });
            for v in [b.v_setpoint, b.v_angle, b.p_load, b.q_load, b.p_gen, b.q_min, b.q_max, b.shunt.re, b.shunt.im] {
                f(&mut out, v);
            }
        }
        out.extend_from_slice(&(self.branches.len() as u32).to_le_bytes());
        for br in &self.branches {
            out.extend_from_slice(&br.from.to_le_bytes());
            out.extend_from_slice(&br.to.to_le_bytes());
            let tap = br.tap.unwrap_or(Complex64::new(1.0, 0.0));
            for v in [br.series_admittance.re, br.series_admittance.im, br.total_shunt.re, br.total_shunt.im, tap.re, tap.im] {
                f(&mut out, v);
            }
        }
        out.extend_from_slice(&(self.areas.len() as u32).to_le_bytes());
        for area in &self.areas {
            out.extend_from_slice(&(area.name.len() as u32).to_le_bytes());
            out.extend_from_slice(area.name.as_bytes());
            out.extend_from_slice(&(area.buses.len() as u32).to_le_bytes());
            for bus in &area.buses {
                out.extend_from_slice(&bus.to_le_bytes());
            }
        }
        out
    }

    pub fn digest(&self) -> u64 {
        crate::fnv1a64(&self.canonical_bytes())
    }
}

/// A PV bus fixed at a violated reactive limit, operating as a PQ bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PvToPqConversion {
    /// Internal bus index.
    pub bus: usize,
    /// Generator reactive output pinned at the limit.
    pub q_gen: f64,
    pub at_upper: bool,
}

/// Effective role of each bus once conversions are applied.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BusRole {
    Slack,
    Pq,
    Pv,
    /// Fixed complex net injection (converted PV bus).
    FixedInjection(Complex64),
}

pub fn bus_roles(case: &NetworkCase, conversions: &[PvToPqConversion]) -> Vec<BusRole> {
    let mut roles: Vec<BusRole> = case
        .buses
        .iter()
        .map(|b| match b.kind {
            BusKind::Slack => BusRole::Slack,
            BusKind::Pq => BusRole::Pq,
            BusKind::Pv => BusRole::Pv,
        })
        .collect();
    for conv in conversions {
        let b = &case.buses[conv.bus];
        roles[conv.bus] =
            BusRole::FixedInjection(Complex64::new(b.net_p(), conv.q_gen - b.q_load));
    }
    roles
}

/// Full admittance matrix plus its series/shunt split.
///
/// `y = y_tr + diag(y_sh)` with `y_sh` the full row sums, so `y_tr` rows
/// sum to zero and a flat voltage profile draws no series current.
#[derive(Debug, Clone, PartialEq)]
pub struct AdmittanceMatrix {
    n: usize,
    y: Vec<Complex64>,
    y_sh: Vec<Complex64>,
}

impl AdmittanceMatrix {
    pub fn n(&self) -> usize {
        self.n
    }

    pub fn at(&self, row: usize, col: usize) -> Complex64 {
        self.y[row * self.n + col]
    }

    pub fn shunt(&self, row: usize) -> Complex64 {
        self.y_sh[row]
    }

    pub fn series_at(&self, row: usize, col: usize) -> Complex64 {
        if row == col {
            self.y[row * self.n + col] - self.y_sh[row]
        } else {
            self.y[row * self.n + col]
        }
    }

    pub fn row(&self, row: usize) -> &[Complex64] {
        &self.y[row * self.n..(row + 1) * self.n]
    }

    pub fn mul_vec(&self, v: &[Complex64]) -> Vec<Complex64> {
        (0..self.n)
            .map(|r| self.row(r).iter().zip(v).map(|(a, b)| a * b).sum())
            .collect()
    }

    /// Complex injection `S_i = V_i * conj(sum_k Y_ik V_k)` at every bus.
    pub fn injections(&self, v: &[Complex64]) -> Vec<Complex64> {
        self.mul_vec(v).iter().zip(v).map(|(i, vi)| vi * i.conj()).collect()
    }
}

/// Build the admittance matrix from validated case data.
pub fn build_ybus(case: &NetworkCase) -> Result<AdmittanceMatrix> {
    let n = case.n_buses();
    let mut y = vec![Complex64::new(0.0, 0.0); n * n];
    for br in &case.branches {
        let ys = br.series_admittance;
        if !(ys.re.is_finite() && ys.im.is_finite()) || ys == Complex64::new(0.0, 0.0) {
            return Err(Error::ZeroImpedanceBranch { from: br.from, to: br.to });
        }
        let f = case.bus_index(br.from).ok_or_else(|| {
            Error::InvalidCase(format!("branch references unknown bus {}", br.from))
        })?;
        let t = case.bus_index(br.to).ok_or_else(|| {
            Error::InvalidCase(format!("branch references unknown bus {}", br.to))
        })?;
        let half_shunt = br.total_shunt * 0.5;
        let tap = br.tap.unwrap_or(Complex64::new(1.0, 0.0));
        let tap_sq = (tap * tap.conj()).re;
        y[f * n + f] += (ys + half_shunt) / tap_sq;
        y[f * n + t] += -ys / tap.conj();
        y[t * n + f] += -ys / tap;
        y[t * n + t] += ys + half_shunt;
    }
    for (i, b) in case.buses.iter().enumerate() {
        y[i * n + i] += b.shunt;
    }
    let y_sh: Vec<Complex64> = (0..n)
        .map(|r| y[r * n..(r + 1) * n].iter().sum())
        .collect();
    Ok(AdmittanceMatrix { n, y, y_sh })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cases;

    #[test]
    fn two_bus_textbook_matrix() {
        let buses = vec![BusSpec::slack(1, 1.0, 0.0), BusSpec::load(2, 0.0, 0.0)];
        let branches = vec![BranchSpec {
            from: 1,
            to: 2,
            series_admittance: Complex64::new(1.0, -5.0),
            total_shunt: Complex64::new(0.0, 0.0),
            tap: None,
        }];
        let case = NetworkCase::new(100.0, buses, branches);
        case.validate().unwrap();
        let y = build_ybus(&case).unwrap();
        assert_eq!(y.at(0, 0), Complex64::new(1.0, -5.0));
        assert_eq!(y.at(0, 1), Complex64::new(-1.0, 5.0));
        assert_eq!(y.at(1, 0), Complex64::new(-1.0, 5.0));
        assert_eq!(y.at(1, 1), Complex64::new(1.0, -5.0));
        // No shunts: the shunt split vanishes and rows sum to zero.
        for r in 0..2 {
            assert!(y.shunt(r).norm() <= 1e-12);
            let row_sum: Complex64 = y.row(r).iter().sum();
            assert!(row_sum.norm() <= 1e-12);
        }
    }

    #[test]
    fn split_reassembles_full_matrix() {
        let case = cases::ieee14();
        let y = build_ybus(&case).unwrap();
        for r in 0..y.n() {
            for c in 0..y.n() {
                let rebuilt = y.series_at(r, c)
                    + if r == c { y.shunt(r) } else { Complex64::new(0.0, 0.0) };
                assert!((rebuilt - y.at(r, c)).norm() <= 1e-12);
            }
            // Series rows sum to zero by construction.
            let tr_sum: Complex64 = (0..y.n()).map(|c| y.series_at(r, c)).sum();
            assert!(tr_sum.norm() <= 1e-12);
        }
    }

    /// Second, naive admittance builder: stamps the full matrix directly
    /// from impedances in one pass, no series/shunt bookkeeping.
    fn naive_ybus(case: &NetworkCase) -> Vec<Complex64> {
        let n = case.n_buses();
        let mut y = vec![Complex64::new(0.0, 0.0); n * n];
        for br in &case.branches {
            let f = case.bus_index(br.from).unwrap();
            let t = case.bus_index(br.to).unwrap();
            let ys = br.series_admittance;
            let sh = br.total_shunt * 0.5;
            let tap = br.tap.unwrap_or(Complex64::new(1.0, 0.0));
            y[f * n + f] += (ys + sh) / (tap.norm() * tap.norm());
            y[t * n + t] += ys + sh;
            y[f * n + t] -= ys / tap.conj();
            y[t * n + f] -= ys / tap;
        }
        for (i, b) in case.buses.iter().enumerate() {
            y[i * n + i] += b.shunt;
        }
        y
    }

    #[test]
    fn ieee14_matches_independent_builder() {
        let case = cases::ieee14();
        case.validate().unwrap();
        assert_eq!(case.n_buses(), 14);
        assert_eq!(case.areas.len(), 4);
        let y = build_ybus(&case).unwrap();
        let naive = naive_ybus(&case);
        for r in 0..14 {
            for c in 0..14 {
                assert!(
                    (y.at(r, c) - naive[r * 14 + c]).norm() <= 1e-12,
                    "mismatch at ({r},{c})"
                );
            }
        }
    }

    #[test]
    fn build_is_deterministic() {
        let case = cases::ieee14();
        assert_eq!(build_ybus(&case).unwrap(), build_ybus(&case).unwrap());
        assert_eq!(case.digest(), cases::ieee14().digest());
    }

    #[test]
    fn two_slack_buses_rejected() {
        let buses = vec![BusSpec::slack(1, 1.0, 0.0), BusSpec::slack(2, 1.0, 0.0)];
        let case = NetworkCase::new(100.0, buses, vec![]);
        let err = case.validate().unwrap_err();
        assert!(matches!(err, Error::InvalidCase(msg) if msg.contains("slack")));
    }

    #[test]
    fn zero_impedance_branch_rejected() {
        assert_eq!(
            BranchSpec::from_impedance(1, 2, 0.0, 0.0, 0.0).unwrap_err(),
            Error::ZeroImpedanceBranch { from: 1, to: 2 }
        );
    }

    #[test]
    fn conversions_yield_fixed_injections() {
        let case = cases::case4();
        let pv = case.pv_indices()[0];
        let conv = PvToPqConversion { bus: pv, q_gen: 0.5, at_upper: true };
        let roles = bus_roles(&case, &[conv]);
        match roles[pv] {
            BusRole::FixedInjection(s) => {
                let b = &case.buses[pv];
                assert!((s.re - b.net_p()).abs() < 1e-15);
                assert!((s.im - (0.5 - b.q_load)).abs() < 1e-15);
            }
            other => panic!("expected fixed injection, got {other:?}"),
        }
    }
}
