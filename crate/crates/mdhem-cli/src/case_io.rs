//! JSON case schema.
//!
//! ```json
//! {
//!   "base_mva": 100.0,
//!   "buses": [{"id": 1, "kind": "slack", "v_setpoint": 1.06, "v_angle": 0.0,
//!              "p_load": 0.0, "q_load": 0.0, "p_gen": 0.0,
//!              "q_min": null, "q_max": null, "g_shunt": 0.0, "b_shunt": 0.0}],
//!   "branches": [{"from": 1, "to": 2, "r": 0.01938, "x": 0.05917,
//!                 "b": 0.0528, "tap": null, "phase": null}],
//!   "areas": [{"name": "area1", "buses": [4, 5]}]
//! }
//! ```
//!
//! All electrical quantities are per-unit on `base_mva`; angles are
//! radians. `kind` is one of `slack`, `pv`, `pq`. Missing reactive
//! limits mean an unlimited generator; a missing `tap` means a nominal
//! (1.0) ratio.

use std::path::Path;

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use mdhem_core::network::{AreaSpec, BranchSpec, BusSpec, NetworkCase};
use mdhem_core::BusKind;

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct CaseFile {
    pub base_mva: f64,
    pub buses: Vec<BusFile>,
    pub branches: Vec<BranchFile>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub areas: Vec<AreaFile>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BusFile {
    pub id: u32,
    pub kind: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub v_setpoint: Option<f64>,
    #[serde(default)]
    pub v_angle: f64,
    #[serde(default)]
    pub p_load: f64,
    #[serde(default)]
    pub q_load: f64,
    #[serde(default)]
    pub p_gen: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_min: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q_max: Option<f64>,
    #[serde(default)]
    pub g_shunt: f64,
    #[serde(default)]
    pub b_shunt: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct BranchFile {
    pub from: u32,
    pub to: u32,
    pub r: f64,
    pub x: f64,
    #[serde(default)]
    pub b: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tap: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub phase: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct AreaFile {
    pub name: String,
    pub buses: Vec<u32>,
}

impl CaseFile {
    pub fn into_case(self) -> Result<NetworkCase> {
        let mut buses = Vec::with_capacity(self.buses.len());
        for b in &self.buses {
            let kind = match b.kind.to_ascii_lowercase().as_str() {
                "slack" => BusKind::Slack,
                "pv" => BusKind::Pv,
                "pq" => BusKind::Pq,
                other => bail!("bus {}: unknown kind '{other}' (expected slack/pv/pq)", b.id),
            };
            buses.push(BusSpec {
                id: b.id,
                kind,
                v_setpoint: b.v_setpoint.unwrap_or(1.0),
                v_angle: b.v_angle,
                p_load: b.p_load,
                q_load: b.q_load,
                p_gen: b.p_gen,
                q_min: b.q_min.unwrap_or(f64::NEG_INFINITY),
                q_max: b.q_max.unwrap_or(f64::INFINITY),
                shunt: Complex64::new(b.g_shunt, b.b_shunt),
            });
        }
        let mut branches = Vec::with_capacity(self.branches.len());
        for br in &self.branches {
            let mut spec = BranchSpec::from_impedance(br.from, br.to, br.r, br.x, br.b)
                .with_context(|| format!("branch {}-{}", br.from, br.to))?;
            if br.tap.is_some() || br.phase.is_some() {
                spec = spec.with_tap(br.tap.unwrap_or(1.0), br.phase.unwrap_or(0.0));
            }
            branches.push(spec);
        }
        let mut case = NetworkCase::new(self.base_mva, buses, branches);
        case.areas = self
            .areas
            .into_iter()
            .map(|a| AreaSpec { name: a.name, buses: a.buses })
            .collect();
        case.validate()?;
        Ok(case)
    }

    pub fn from_case(case: &NetworkCase) -> Self {
        let buses = case
            .buses
            .iter()
            .map(|b| BusFile {
                id: b.id,
                kind: match b.kind {
                    BusKind::Slack => "slack".into(),
                    BusKind::Pv => "pv".into(),
                    BusKind::Pq => "pq".into(),
                },
                v_setpoint: Some(b.v_setpoint),
                v_angle: b.v_angle,
                p_load: b.p_load,
                q_load: b.q_load,
                p_gen: b.p_gen,
                q_min: b.q_min.is_finite().then_some(b.q_min),
                q_max: b.q_max.is_finite().then_some(b.q_max),
                g_shunt: b.shunt.re,
                b_shunt: b.shunt.im,
            })
            .collect();
        let branches = case
            .branches
            .iter()
            .map(|br| {
                let z = Complex64::new(1.0, 0.0) / br.series_admittance;
                BranchFile {
                    from: br.from,
                    to: br.to,
                    r: z.re,
                    x: z.im,
                    b: br.total_shunt.im,
                    tap: br.tap.map(|t| t.norm()),
                    phase: br.tap.and_then(|t| (t.arg() != 0.0).then(|| t.arg())),
                }
            })
            .collect();
        let areas = case
            .areas
            .iter()
            .map(|a| AreaFile { name: a.name.clone(), buses: a.buses.clone() })
            .collect();
        CaseFile { base_mva: case.base_mva, buses, branches, areas }
    }
}

/// Parse and validate a case file. Parse errors carry the JSON
/// line/column; validation errors name the violated invariant.
pub fn load_case(path: &Path) -> Result<NetworkCase> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading case file {}", path.display()))?;
    let file: CaseFile = serde_json::from_str(&text)
        .with_context(|| format!("parsing case file {}", path.display()))?;
    file.into_case()
        .with_context(|| format!("validating case file {}", path.display()))
}

pub fn save_case(path: &Path, case: &NetworkCase) -> Result<()> {
    let file = CaseFile::from_case(case);
    let text = serde_json::to_string_pretty(&file)?;
    std::fs::write(path, text + "\n")
        .with_context(|| format!("writing case file {}", path.display()))
}
