//! CSV and table formatting.
//!
//! CSV and JSON numbers carry 17 significant digits so oracle
//! comparisons lose nothing in transit; human tables round to 6.

use std::fmt::Write as _;

use mdhem_core::{NetworkCase, PfSolution};

/// 17 significant digits, round-trip safe for f64.
pub fn full(x: f64) -> String {
    format!("{x:.16e}")
}

pub fn human(x: f64) -> String {
    format!("{x:.6}")
}

/// Header of the sweep CSV: scale names, per-bus magnitude and angle,
/// generator reactive output per PV bus, and the evaluation residual.
pub fn sweep_header(case: &NetworkCase, scale_names: &[String]) -> String {
    let mut head: Vec<String> = scale_names.to_vec();
    for b in &case.buses {
        head.push(format!("vm_{}", b.id));
        head.push(format!("va_{}", b.id));
    }
    for &i in &case.pv_indices() {
        head.push(format!("qgen_{}", case.buses[i].id));
    }
    head.push("max_residual".into());
    head.join(",")
}

pub fn sweep_row(case: &NetworkCase, s: &[f64], sol: &PfSolution) -> String {
    let mut row: Vec<String> = s.iter().map(|v| full(*v)).collect();
    for v in &sol.v {
        row.push(full(v.norm()));
        row.push(full(v.arg()));
    }
    for &i in &case.pv_indices() {
        row.push(full(sol.q_gen[i]));
    }
    row.push(full(sol.max_residual));
    row.join(",")
}

/// Compare CSV: the sweep columns plus oracle columns and the per-bus
/// voltage difference.
pub fn compare_header(case: &NetworkCase, scale_names: &[String]) -> String {
    let mut head = sweep_header(case, scale_names);
    head.push_str(",nr_converged");
    for b in &case.buses {
        head.push_str(&format!(",nr_vm_{},nr_va_{}", b.id, b.id));
    }
    head.push_str(",max_dv");
    head
}

pub fn compare_row(
    case: &NetworkCase,
    s: &[f64],
    sol: &PfSolution,
    nr: Option<&PfSolution>,
    max_dv: Option<f64>,
) -> String {
    let mut row = sweep_row(case, s, sol);
    match nr {
        Some(nr) => {
            row.push_str(",1");
            for v in &nr.v {
                let _ = write!(row, ",{},{}", full(v.norm()), full(v.arg()));
            }
            let _ = write!(row, ",{}", full(max_dv.unwrap_or(f64::NAN)));
        }
        None => {
            row.push_str(",0");
            for _ in &case.buses {
                row.push_str(",,");
            }
            row.push(',');
        }
    }
    row
}

pub fn table(headers: &[&str], rows: &[Vec<String>]) -> String {
    let mut widths: Vec<usize> = headers.iter().map(|h| h.len()).collect();
    for row in rows {
        for (w, cell) in widths.iter_mut().zip(row) {
            *w = (*w).max(cell.len());
        }
    }
    let mut out = String::new();
    for (h, w) in headers.iter().zip(&widths) {
        let _ = write!(out, "{h:>w$}  ");
    }
    out.push('\n');
    for row in rows {
        for (cell, w) in row.iter().zip(&widths) {
            let _ = write!(out, "{cell:>w$}  ");
        }
        out.push('\n');
    }
    out
}
