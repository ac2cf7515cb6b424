//! Artifact files.
//!
//! Two equivalent encodings of a solved artifact: pretty JSON (numbers
//! printed with round-trip-exact shortest representations) and a
//! little-endian binary layout. Both reproduce every coefficient
//! bit-exactly. The admittance matrix is not stored; loading takes the
//! case and checks it against the stored digest.
//!
//! Binary layout, little-endian throughout:
//!
//! ```text
//! "MDHA"  u32 version  u32 dims  u32 order  u32 n_buses
//! u64 case_digest  u64 assignment_digest
//! dims * (u32 len, utf8 name)   n_buses * i64 p_dim   n_buses * i64 q_dim
//! n_buses * 7 f64 (v_st, v0, w0 as re/im pairs, q0)
//! f64 germ_tail  u64 germ_orders  u32 n_germ_tails * f64
//! u32 n_conversions * (u32 bus, f64 q_gen, u8 at_upper)
//! u32 n_tails * f64
//! u32 warning_len, utf8
//! per bus: n_term * 2 f64 (V), n_term * 2 f64 (W), u8 has_q, n_term f64 (Q)
//! ```

use std::path::Path;

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use serde::{Deserialize, Serialize};

use mdhem_core::mdhem::MdhemArtifact;
use mdhem_core::mpseries::{IndexSet, MpSeries};
use mdhem_core::network::{NetworkCase, PvToPqConversion};
use mdhem_core::{GermSolution, ScaleAssignment};

const MAGIC: &[u8; 4] = b"MDHA";
const VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
pub struct ArtifactFile {
    pub schema_version: u32,
    pub dims: usize,
    pub order: usize,
    pub n_buses: usize,
    pub case_digest: String,
    pub assignment_digest: String,
    pub assignment: AssignmentFile,
    pub germ: GermFile,
    pub conversions: Vec<ConversionFile>,
    pub tails: Vec<f64>,
    pub divergence_warning: Option<String>,
    /// Per-bus series; coefficients as `[re, im]` in graded-lex rank order.
    pub series: Vec<BusSeriesFile>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct AssignmentFile {
    pub names: Vec<String>,
    pub p_dim: Vec<i64>,
    pub q_dim: Vec<i64>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct GermFile {
    pub v_st: Vec<[f64; 2]>,
    pub v0: Vec<[f64; 2]>,
    pub w0: Vec<[f64; 2]>,
    pub q0: Vec<f64>,
    pub tail: f64,
    pub tails: Vec<f64>,
    pub orders_used: usize,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct ConversionFile {
    pub bus: usize,
    pub q_gen: f64,
    pub at_upper: bool,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct BusSeriesFile {
    pub v: Vec<[f64; 2]>,
    pub w: Vec<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub q: Option<Vec<f64>>,
}

fn pairs(series: &MpSeries) -> Vec<[f64; 2]> {
    series.coeffs().iter().map(|c| [c.re, c.im]).collect()
}

pub fn to_file(artifact: &MdhemArtifact) -> ArtifactFile {
    let n = artifact.case.n_buses();
    let assignment = AssignmentFile {
        names: artifact.assignment.names().to_vec(),
        p_dim: (0..n)
            .map(|i| artifact.assignment.p_dim_of(i).map(|d| d as i64).unwrap_or(-1))
            .collect(),
        q_dim: (0..n)
            .map(|i| artifact.assignment.q_dim_of(i).map(|d| d as i64).unwrap_or(-1))
            .collect(),
    };
    let germ = GermFile {
        v_st: artifact.germ.v_st.iter().map(|c| [c.re, c.im]).collect(),
        v0: artifact.germ.v0.iter().map(|c| [c.re, c.im]).collect(),
        w0: artifact.germ.w0.iter().map(|c| [c.re, c.im]).collect(),
        q0: artifact.germ.q0.clone(),
        tail: artifact.germ.tail,
        tails: artifact.germ.tails.clone(),
        orders_used: artifact.germ.orders_used,
    };
    let series = (0..n)
        .map(|i| BusSeriesFile {
            v: pairs(&artifact.v[i]),
            w: pairs(&artifact.w[i]),
            q: artifact.q[i].as_ref().map(|q| q.coeffs().iter().map(|c| c.re).collect()),
        })
        .collect();
    ArtifactFile {
        schema_version: VERSION,
        dims: artifact.dims(),
        order: artifact.order,
        n_buses: n,
        case_digest: format!("{:016x}", artifact.case_digest),
        assignment_digest: format!("{:016x}", artifact.assignment_digest),
        assignment,
        germ,
        conversions: artifact
            .conversions
            .iter()
            .map(|c| ConversionFile { bus: c.bus, q_gen: c.q_gen, at_upper: c.at_upper })
            .collect(),
        tails: artifact.tails.clone(),
        divergence_warning: artifact.divergence_warning.clone(),
        series,
    }
}

fn complexes(pairs: &[[f64; 2]]) -> Vec<Complex64> {
    pairs.iter().map(|[re, im]| Complex64::new(*re, *im)).collect()
}

pub fn from_file(file: ArtifactFile, case: &NetworkCase) -> Result<MdhemArtifact> {
    if file.schema_version != VERSION {
        bail!("unsupported artifact schema version {}", file.schema_version);
    }
    let opt = |v: i64| (v >= 0).then_some(v as usize);
    let assignment = ScaleAssignment::new(
        case,
        file.assignment.names,
        file.assignment.p_dim.into_iter().map(opt).collect(),
        file.assignment.q_dim.into_iter().map(opt).collect(),
    )?;
    let ix = IndexSet::new(file.dims, file.order)?;
    let mut v = Vec::with_capacity(file.n_buses);
    let mut w = Vec::with_capacity(file.n_buses);
    let mut q = Vec::with_capacity(file.n_buses);
    for bus in file.series {
        v.push(MpSeries::from_coeffs(ix.clone(), complexes(&bus.v))?);
        w.push(MpSeries::from_coeffs(ix.clone(), complexes(&bus.w))?);
        q.push(match bus.q {
            Some(reals) => Some(MpSeries::from_coeffs(
                ix.clone(),
                reals.into_iter().map(|re| Complex64::new(re, 0.0)).collect(),
            )?),
            None => None,
        });
    }
    let germ = GermSolution {
        v_st: complexes(&file.germ.v_st),
        v0: complexes(&file.germ.v0),
        w0: complexes(&file.germ.w0),
        q0: file.germ.q0,
        tail: file.germ.tail,
        tails: file.germ.tails,
        orders_used: file.germ.orders_used,
    };
    let conversions: Vec<PvToPqConversion> = file
        .conversions
        .iter()
        .map(|c| PvToPqConversion { bus: c.bus, q_gen: c.q_gen, at_upper: c.at_upper })
        .collect();
    let artifact = MdhemArtifact::from_parts(
        case.clone(),
        assignment,
        file.order,
        v,
        w,
        q,
        germ,
        conversions,
        file.tails,
        file.divergence_warning,
    )?;
    let stored = u64::from_str_radix(&file.case_digest, 16).context("case digest")?;
    if stored != artifact.case_digest {
        return Err(mdhem_core::Error::DigestMismatch {
            expected: stored,
            got: artifact.case_digest,
        }
        .into());
    }
    let stored = u64::from_str_radix(&file.assignment_digest, 16).context("assignment digest")?;
    if stored != artifact.assignment_digest {
        return Err(mdhem_core::Error::DigestMismatch {
            expected: stored,
            got: artifact.assignment_digest,
        }
        .into());
    }
    Ok(artifact)
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn new() -> Self {
        Self { buf: Vec::new() }
    }
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn i64(&mut self, v: i64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn complex(&mut self, c: Complex64) {
        self.f64(c.re);
        self.f64(c.im);
    }
    fn str(&mut self, s: &str) {
        self.u32(s.len() as u32);
        self.buf.extend_from_slice(s.as_bytes());
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.pos + n > self.buf.len() {
            bail!("artifact file truncated at byte {}", self.pos);
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn i64(&mut self) -> Result<i64> {
        Ok(i64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn complex(&mut self) -> Result<Complex64> {
        Ok(Complex64::new(self.f64()?, self.f64()?))
    }
    fn str(&mut self) -> Result<String> {
        let len = self.u32()? as usize;
        Ok(String::from_utf8(self.take(len)?.to_vec())?)
    }
}

pub fn to_binary(artifact: &MdhemArtifact) -> Vec<u8> {
    let file = to_file(artifact);
    let mut w = Writer::new();
    w.buf.extend_from_slice(MAGIC);
    w.u32(VERSION);
    w.u32(file.dims as u32);
    w.u32(file.order as u32);
    w.u32(file.n_buses as u32);
    w.u64(artifact.case_digest);
    w.u64(artifact.assignment_digest);
    for name in &file.assignment.names {
        w.str(name);
    }
    for v in file.assignment.p_dim.iter().chain(&file.assignment.q_dim) {
        w.i64(*v);
    }
    for i in 0..file.n_buses {
        w.complex(Complex64::new(file.germ.v_st[i][0], file.germ.v_st[i][1]));
        w.complex(Complex64::new(file.germ.v0[i][0], file.germ.v0[i][1]));
        w.complex(Complex64::new(file.germ.w0[i][0], file.germ.w0[i][1]));
        w.f64(file.germ.q0[i]);
    }
    w.f64(file.germ.tail);
    w.u64(file.germ.orders_used as u64);
    w.u32(file.germ.tails.len() as u32);
    for t in &file.germ.tails {
        w.f64(*t);
    }
    w.u32(file.conversions.len() as u32);
    for c in &file.conversions {
        w.u32(c.bus as u32);
        w.f64(c.q_gen);
        w.u8(c.at_upper as u8);
    }
    w.u32(file.tails.len() as u32);
    for t in &file.tails {
        w.f64(*t);
    }
    w.str(file.divergence_warning.as_deref().unwrap_or(""));
    for bus in &file.series {
        for pair in bus.v.iter().chain(&bus.w) {
            w.f64(pair[0]);
            w.f64(pair[1]);
        }
        match &bus.q {
            Some(reals) => {
                w.u8(1);
                for r in reals {
                    w.f64(*r);
                }
            }
            None => w.u8(0),
        }
    }
    w.buf
}

pub fn from_binary(bytes: &[u8], case: &NetworkCase) -> Result<MdhemArtifact> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        bail!("not a binary artifact (missing magic)");
    }
    let version = r.u32()?;
    if version != VERSION {
        bail!("unsupported artifact version {version}");
    }
    let dims = r.u32()? as usize;
    let order = r.u32()? as usize;
    let n_buses = r.u32()? as usize;
    let case_digest = format!("{:016x}", r.u64()?);
    let assignment_digest = format!("{:016x}", r.u64()?);
    let names: Vec<String> = (0..dims).map(|_| r.str()).collect::<Result<_>>()?;
    let p_dim: Vec<i64> = (0..n_buses).map(|_| r.i64()).collect::<Result<_>>()?;
    let q_dim: Vec<i64> = (0..n_buses).map(|_| r.i64()).collect::<Result<_>>()?;
    let mut v_st = Vec::new();
    let mut v0 = Vec::new();
    let mut w0 = Vec::new();
    let mut q0 = Vec::new();
    for _ in 0..n_buses {
        let a = r.complex()?;
        let b = r.complex()?;
        let c = r.complex()?;
        v_st.push([a.re, a.im]);
        v0.push([b.re, b.im]);
        w0.push([c.re, c.im]);
        q0.push(r.f64()?);
    }
    let tail = r.f64()?;
    let orders_used = r.u64()? as usize;
    let n_germ_tails = r.u32()? as usize;
    let germ_tails: Vec<f64> = (0..n_germ_tails).map(|_| r.f64()).collect::<Result<_>>()?;
    let n_conversions = r.u32()? as usize;
    let mut conversions = Vec::with_capacity(n_conversions);
    for _ in 0..n_conversions {
        let bus = r.u32()? as usize;
        let q_gen = r.f64()?;
        let at_upper = r.u8()? != 0;
        conversions.push(ConversionFile { bus, q_gen, at_upper });
    }
    let n_tails = r.u32()? as usize;
    let tails: Vec<f64> = (0..n_tails).map(|_| r.f64()).collect::<Result<_>>()?;
    let warning = r.str()?;
    let n_term = mdhem_core::mpseries::n_term(dims, order)? as usize;
    let mut series = Vec::with_capacity(n_buses);
    for _ in 0..n_buses {
        let mut v = Vec::with_capacity(n_term);
        for _ in 0..n_term {
            let c = r.complex()?;
            v.push([c.re, c.im]);
        }
        let mut w = Vec::with_capacity(n_term);
        for _ in 0..n_term {
            let c = r.complex()?;
            w.push([c.re, c.im]);
        }
        let q = if r.u8()? != 0 {
            Some((0..n_term).map(|_| r.f64()).collect::<Result<_>>()?)
        } else {
            None
        };
        series.push(BusSeriesFile { v, w, q });
    }
    let file = ArtifactFile {
        schema_version: VERSION,
        dims,
        order,
        n_buses,
        case_digest,
        assignment_digest,
        assignment: AssignmentFile { names, p_dim, q_dim },
        germ: GermFile { v_st, v0, w0, q0, tail, tails: germ_tails, orders_used },
        conversions,
        tails,
        divergence_warning: (!warning.is_empty()).then_some(warning),
        series,
    };
    from_file(file, case)
}

/// Write an artifact; `json` selects the human-readable form.
pub fn save_artifact(path: &Path, artifact: &MdhemArtifact, json: bool) -> Result<()> {
    let bytes = if json {
        let mut text = serde_json::to_string_pretty(&to_file(artifact))?;
        text.push('\n');
        text.into_bytes()
    } else {
        to_binary(artifact)
    };
    std::fs::write(path, bytes).with_context(|| format!("writing artifact {}", path.display()))
}

/// Load an artifact of either form, validating it against the case.
pub fn load_artifact(path: &Path, case: &NetworkCase) -> Result<MdhemArtifact> {
    let bytes =
        std::fs::read(path).with_context(|| format!("reading artifact {}", path.display()))?;
    if bytes.starts_with(MAGIC) {
        from_binary(&bytes, case)
    } else {
        let file: ArtifactFile = serde_json::from_slice(&bytes)
            .with_context(|| format!("parsing artifact {}", path.display()))?;
        from_file(file, case)
    }
}
