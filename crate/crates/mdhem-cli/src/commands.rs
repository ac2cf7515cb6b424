//! Subcommand implementations. Each returns the process exit code on
//! success; errors are classified by `classify_error`.

use std::path::Path;

use anyhow::{bail, Context, Result};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use mdhem_core::germ::{compute_germ, germ_feasibility, GermConfig};
use mdhem_core::mdhem::{estimate_resources, MdhemOptions, ScaleAssignment};
use mdhem_core::network::build_ybus;
use mdhem_core::nr::{nr_solve, NrConfig, NrOutcome};
use mdhem_core::NetworkCase;

use crate::artifact_io::{load_artifact, save_artifact};
use crate::case_io::load_case;
use crate::exit_codes;
use crate::grid::{parse_grid, parse_point, points};
use crate::output;

/// Inline/JSON scale-assignment specification: dimension names mapped to
/// the bus powers they control.
#[derive(Debug, Serialize, Deserialize)]
struct ScalesSpec {
    dims: Vec<ScaleDimSpec>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScaleDimSpec {
    name: String,
    targets: Vec<ScaleTarget>,
}

#[derive(Debug, Serialize, Deserialize)]
struct ScaleTarget {
    bus: u32,
    /// `p`, `q` or `pq`.
    power: String,
}

fn assignment_from_spec(case: &NetworkCase, spec: ScalesSpec) -> Result<ScaleAssignment> {
    let n = case.n_buses();
    let mut names = Vec::with_capacity(spec.dims.len());
    let mut p_dim = vec![None; n];
    let mut q_dim = vec![None; n];
    for (d, dim) in spec.dims.into_iter().enumerate() {
        names.push(dim.name);
        for target in dim.targets {
            let i = case
                .bus_index(target.bus)
                .with_context(|| format!("scale target references unknown bus {}", target.bus))?;
            match target.power.to_ascii_lowercase().as_str() {
                "p" => p_dim[i] = Some(d),
                "q" => q_dim[i] = Some(d),
                "pq" => {
                    p_dim[i] = Some(d);
                    q_dim[i] = Some(d);
                }
                other => bail!("scale target power '{other}' (expected p, q or pq)"),
            }
        }
    }
    Ok(ScaleAssignment::new(case, names, p_dim, q_dim)?)
}

/// Resolve `--scales`/`--dims` into an assignment. Defaults to the case
/// areas when declared, otherwise one scale per load bus.
pub fn resolve_assignment(
    case: &NetworkCase,
    scales: Option<&str>,
    dims: Option<usize>,
) -> Result<ScaleAssignment> {
    if let Some(d) = dims {
        if d == 1 {
            return Ok(ScaleAssignment::single(case)?);
        }
        bail!("--dims only supports 1 (grouped scale); use --scales for higher dimensions");
    }
    match scales {
        None => {
            if case.areas.is_empty() {
                Ok(ScaleAssignment::per_load_bus(case)?)
            } else {
                Ok(ScaleAssignment::from_areas(case)?)
            }
        }
        Some("areas") => Ok(ScaleAssignment::from_areas(case)?),
        Some("per-load") => Ok(ScaleAssignment::per_load_bus(case)?),
        Some("single") => Ok(ScaleAssignment::single(case)?),
        Some(text) if text.trim_start().starts_with('{') => {
            let spec: ScalesSpec = serde_json::from_str(text).context("parsing inline --scales")?;
            assignment_from_spec(case, spec)
        }
        Some(path) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading scales file {path}"))?;
            let spec: ScalesSpec =
                serde_json::from_str(&text).with_context(|| format!("parsing scales file {path}"))?;
            assignment_from_spec(case, spec)
        }
    }
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

#[derive(Serialize)]
struct GermDump {
    v_st: Vec<[f64; 2]>,
    v0: Vec<[f64; 2]>,
    q0: Vec<f64>,
    tails: Vec<f64>,
    orders_used: usize,
    max_pq_injection: f64,
    max_pv_p_dev: f64,
    max_pv_v_dev: f64,
}

pub fn cmd_germ(case_path: &Path, json: bool, germ_cfg: &GermConfig) -> Result<i32> {
    let case = load_case(case_path)?;
    let y = build_ybus(&case)?;
    let germ = compute_germ(&case, &y, &[], germ_cfg)?;
    let feas = germ_feasibility(&case, &y, &[], &germ);
    if json {
        let dump = GermDump {
            v_st: germ.v_st.iter().map(|c| [c.re, c.im]).collect(),
            v0: germ.v0.iter().map(|c| [c.re, c.im]).collect(),
            q0: germ.q0.clone(),
            tails: germ.tails.clone(),
            orders_used: germ.orders_used,
            max_pq_injection: feas.max_pq_injection,
            max_pv_p_dev: feas.max_pv_p_dev,
            max_pv_v_dev: feas.max_pv_v_dev,
        };
        println!("{}", serde_json::to_string_pretty(&dump)?);
        return Ok(exit_codes::OK);
    }
    println!("germ converged in {} orders, tail {:.3e}", germ.orders_used, germ.tail);
    println!("feasibility residuals:");
    println!("  max |S| at PQ buses        {:.3e}", feas.max_pq_injection);
    println!("  max |Re S - P| at PV buses {:.3e}", feas.max_pv_p_dev);
    println!("  max ||V| - sp| at PV buses {:.3e}", feas.max_pv_v_dev);
    let rows: Vec<Vec<String>> = case
        .buses
        .iter()
        .enumerate()
        .map(|(i, b)| {
            vec![
                b.id.to_string(),
                output::human(germ.v0[i].norm()),
                output::human(germ.v0[i].arg()),
                output::human(germ.q0[i]),
            ]
        })
        .collect();
    println!("{}", output::table(&["bus", "vm", "va", "q0"], &rows));
    Ok(exit_codes::OK)
}

pub fn cmd_helm(case_path: &Path, order: usize, tol: f64, json: bool) -> Result<i32> {
    let case = load_case(case_path)?;
    let y = build_ybus(&case)?;
    let sol = mdhem_core::helm1d::helm_solve(&case, &y, order, tol)?;
    if json {
        #[derive(Serialize)]
        struct HelmDump {
            v1: Vec<[f64; 2]>,
            q1: Vec<f64>,
            order: usize,
            tails: Vec<f64>,
            converged: bool,
            report: Option<String>,
        }
        let dump = HelmDump {
            v1: sol.v1.iter().map(|c| [c.re, c.im]).collect(),
            q1: sol.q1.clone(),
            order: sol.order,
            tails: sol.tails.clone(),
            converged: sol.converged,
            report: sol.report.clone(),
        };
        println!("{}", serde_json::to_string_pretty(&dump)?);
    } else {
        println!("series order {}, final tail {:.3e}", sol.order, sol.tails.last().unwrap_or(&0.0));
        let rows: Vec<Vec<String>> = case
            .buses
            .iter()
            .enumerate()
            .map(|(i, b)| {
                vec![
                    b.id.to_string(),
                    output::human(sol.v1[i].norm()),
                    output::human(sol.v1[i].arg()),
                    output::human(sol.q1[i]),
                ]
            })
            .collect();
        println!("{}", output::table(&["bus", "vm", "va", "q_inj"], &rows));
    }
    if let Some(report) = &sol.report {
        eprintln!("warning: {report}");
        return Ok(exit_codes::DIVERGENCE_WARNING);
    }
    Ok(exit_codes::OK)
}

#[allow(clippy::too_many_arguments)]
pub fn cmd_solve(
    case_path: &Path,
    scales: Option<&str>,
    dims: Option<usize>,
    order: usize,
    tol: f64,
    target_s: Option<&str>,
    out: &Path,
    json: bool,
    germ_cfg: &GermConfig,
) -> Result<i32> {
    let case = load_case(case_path)?;
    let assignment = resolve_assignment(&case, scales, dims)?;
    let opts = MdhemOptions { m_max: order, tol, germ: *germ_cfg };
    let artifact = match target_s {
        Some(text) => {
            let target = parse_point(text, assignment.dims())?;
            mdhem_core::mdhem::solve_with_limits(&case, &assignment, &target, &opts)?
        }
        None => mdhem_core::mdhem::solve(&case, &assignment, &opts)?,
    };

    println!(
        "germ: {} orders, tail {:.3e}",
        artifact.germ.orders_used, artifact.germ.tail
    );
    if !artifact.conversions.is_empty() {
        println!("bus-type conversions:");
        for c in &artifact.conversions {
            println!(
                "  bus {} fixed at {} reactive limit ({:.6} pu)",
                artifact.case.buses[c.bus].id,
                if c.at_upper { "upper" } else { "lower" },
                c.q_gen
            );
        }
    }
    println!("order  max|coeff|");
    for (m, tail) in artifact.tails.iter().enumerate() {
        println!("{:>5}  {:.6e}", m + 1, tail);
    }
    let (s, p, v) = case.counts();
    let report = estimate_resources(assignment.dims(), artifact.order, s, p, v);
    println!(
        "resources: lhs {}x{}, {} columns at top order, {} terms/series, ~{} convolution multiplies, ~{} series bytes",
        report.lhs_dim,
        report.lhs_dim,
        report.cols_at_order,
        report.terms_per_series,
        report.conv_multiplies,
        report.series_bytes
    );
    save_artifact(out, &artifact, json)?;
    println!("artifact written to {}", out.display());
    if let Some(warning) = &artifact.divergence_warning {
        eprintln!("warning: {warning}");
        return Ok(exit_codes::DIVERGENCE_WARNING);
    }
    Ok(exit_codes::OK)
}

pub fn cmd_eval(
    artifact_path: &Path,
    case_path: &Path,
    at: Option<&str>,
    points_file: Option<&Path>,
    out: Option<&Path>,
) -> Result<i32> {
    let case = load_case(case_path)?;
    let artifact = load_artifact(artifact_path, &case)?;
    let names: Vec<String> = artifact.assignment.names().to_vec();
    match (at, points_file) {
        (Some(text), None) => {
            let s = parse_point(text, artifact.dims())?;
            let sol = artifact.evaluate(&s)?;
            if let Some(path) = out {
                let mut csv = output::sweep_header(&case, &names);
                csv.push('\n');
                csv.push_str(&output::sweep_row(&case, &s, &sol));
                csv.push('\n');
                write_text(path, &csv)?;
            } else {
                let rows: Vec<Vec<String>> = case
                    .buses
                    .iter()
                    .enumerate()
                    .map(|(i, b)| {
                        vec![
                            b.id.to_string(),
                            output::human(sol.v[i].norm()),
                            output::human(sol.v[i].arg()),
                            output::human(sol.s_inj[i].re),
                            output::human(sol.s_inj[i].im),
                        ]
                    })
                    .collect();
                println!("{}", output::table(&["bus", "vm", "va", "p_inj", "q_inj"], &rows));
                println!("max residual {:.3e}", sol.max_residual);
            }
            Ok(exit_codes::OK)
        }
        (None, Some(path)) => {
            let text = std::fs::read_to_string(path)
                .with_context(|| format!("reading points file {}", path.display()))?;
            let mut csv = output::sweep_header(&case, &names);
            csv.push('\n');
            for (lineno, line) in text.lines().enumerate() {
                let line = line.trim();
                if line.is_empty() || line.starts_with('#') {
                    continue;
                }
                let s = parse_point(line, artifact.dims())
                    .with_context(|| format!("line {} of {}", lineno + 1, path.display()))?;
                let sol = artifact.evaluate(&s)?;
                csv.push_str(&output::sweep_row(&case, &s, &sol));
                csv.push('\n');
            }
            match out {
                Some(path) => write_text(path, &csv)?,
                None => print!("{csv}"),
            }
            Ok(exit_codes::OK)
        }
        _ => bail!("eval needs exactly one of --at or --points"),
    }
}

pub fn cmd_sweep(
    artifact_path: &Path,
    case_path: &Path,
    grid_spec: &str,
    out: Option<&Path>,
) -> Result<i32> {
    let case = load_case(case_path)?;
    let artifact = load_artifact(artifact_path, &case)?;
    let grid = parse_grid(grid_spec, artifact.dims())?;
    let pts = points(&grid);
    let names: Vec<String> = artifact.assignment.names().to_vec();
    let rows: Vec<String> = pts
        .par_iter()
        .map(|s| {
            let sol = artifact.evaluate(s).expect("grid point evaluates");
            output::sweep_row(&case, s, &sol)
        })
        .collect();
    let mut csv = output::sweep_header(&case, &names);
    csv.push('\n');
    for row in rows {
        csv.push_str(&row);
        csv.push('\n');
    }
    match out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(exit_codes::OK)
}

pub fn cmd_compare(
    artifact_path: &Path,
    case_path: &Path,
    grid_spec: &str,
    out: Option<&Path>,
) -> Result<i32> {
    let case = load_case(case_path)?;
    let artifact = load_artifact(artifact_path, &case)?;
    let y = build_ybus(&case)?;
    let grid = parse_grid(grid_spec, artifact.dims())?;
    let pts = points(&grid);
    let names: Vec<String> = artifact.assignment.names().to_vec();
    let cfg = NrConfig::default();
    // Each point solves the same converted system the artifact embeds.
    let results: Vec<(String, Option<f64>)> = pts
        .par_iter()
        .map(|s| {
            let sol = artifact.evaluate(s).expect("grid point evaluates");
            let loads = artifact.assignment.loads_at(&case, s).expect("grid point loads");
            let outcome = nr_solve(&case, &y, &artifact.conversions, &loads, &cfg);
            match outcome {
                NrOutcome::Converged(nr) => {
                    let dv = nr
                        .v
                        .iter()
                        .zip(&sol.v)
                        .fold(0.0f64, |m, (a, b)| m.max((a - b).norm()));
                    (output::compare_row(&case, s, &sol, Some(&nr), Some(dv)), Some(dv))
                }
                NrOutcome::Diverged(_) => {
                    (output::compare_row(&case, s, &sol, None, None), None)
                }
            }
        })
        .collect();
    let mut csv = output::compare_header(&case, &names);
    csv.push('\n');
    let mut max_err: Option<f64> = None;
    let mut sum = 0.0;
    let mut convergent = 0usize;
    for (row, dv) in &results {
        csv.push_str(row);
        csv.push('\n');
        if let Some(dv) = dv {
            convergent += 1;
            sum += dv;
            max_err = Some(max_err.map_or(*dv, |m: f64| m.max(*dv)));
        }
    }
    match out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    println!(
        "{} of {} grid points N-R-convergent; max error {}, mean error {}",
        convergent,
        results.len(),
        max_err.map_or("n/a".into(), |e| format!("{e:.6e}")),
        if convergent > 0 { format!("{:.6e}", sum / convergent as f64) } else { "n/a".into() }
    );
    Ok(exit_codes::OK)
}

pub fn cmd_limits(
    artifact_path: &Path,
    case_path: &Path,
    grid_spec: Option<&str>,
    at: Option<&str>,
    out: Option<&Path>,
) -> Result<i32> {
    let case = load_case(case_path)?;
    let artifact = load_artifact(artifact_path, &case)?;
    let pts: Vec<Vec<f64>> = match (grid_spec, at) {
        (Some(spec), None) => points(&parse_grid(spec, artifact.dims())?),
        (None, Some(text)) => vec![parse_point(text, artifact.dims())?],
        _ => bail!("limits needs exactly one of --grid or --at"),
    };
    let pv = case.pv_indices();
    let mut head: Vec<String> = artifact.assignment.names().to_vec();
    for &i in &pv {
        let id = case.buses[i].id;
        head.push(format!("qgen_{id}"));
        head.push(format!("margin_min_{id}"));
        head.push(format!("margin_max_{id}"));
        head.push(format!("violated_{id}"));
    }
    head.push("crossing".into());
    let mut csv = head.join(",");
    csv.push('\n');
    let mut prev_violated: Option<bool> = None;
    for s in &pts {
        let sol = artifact.evaluate(s)?;
        let mut row: Vec<String> = s.iter().map(|v| output::full(*v)).collect();
        let mut any = false;
        for &i in &pv {
            let b = &case.buses[i];
            let q = sol.q_gen[i];
            let violated = q > b.q_max || q < b.q_min;
            any |= violated;
            row.push(output::full(q));
            row.push(output::full(q - b.q_min));
            row.push(output::full(b.q_max - q));
            row.push(if violated { "1".into() } else { "0".into() });
        }
        // Boundary crossing along the innermost scan direction.
        let crossing = prev_violated.is_some_and(|p| p != any);
        row.push(if crossing { "1".into() } else { "0".into() });
        prev_violated = Some(any);
        csv.push_str(&row.join(","));
        csv.push('\n');
    }
    match out {
        Some(path) => write_text(path, &csv)?,
        None => print!("{csv}"),
    }
    Ok(exit_codes::OK)
}

pub fn cmd_info(case_path: &Path, dims: usize, order: usize, json: bool) -> Result<i32> {
    let case = load_case(case_path)?;
    let (s, p, v) = case.counts();
    let report = estimate_resources(dims, order, s, p, v);
    if json {
        #[derive(Serialize)]
        struct InfoDump {
            buses: usize,
            slack: usize,
            pq: usize,
            pv: usize,
            dims: usize,
            order: usize,
            lhs_dim: u64,
            cols_at_order: u64,
            terms_per_series: u64,
            conv_multiplies: u64,
            series_bytes: u64,
            lhs_bytes: u64,
            rhs_bytes: u64,
            overflow: bool,
        }
        let dump = InfoDump {
            buses: case.n_buses(),
            slack: s,
            pq: p,
            pv: v,
            dims,
            order,
            lhs_dim: report.lhs_dim,
            cols_at_order: report.cols_at_order,
            terms_per_series: report.terms_per_series,
            conv_multiplies: report.conv_multiplies,
            series_bytes: report.series_bytes,
            lhs_bytes: report.lhs_bytes,
            rhs_bytes: report.rhs_bytes,
            overflow: report.overflow,
        };
        println!("{}", serde_json::to_string_pretty(&dump)?);
    } else {
        println!("case: {} buses ({s} slack, {p} PQ, {v} PV)", case.n_buses());
        println!("embedding: D={dims}, M={order}");
        println!("lhs dimension        {}", report.lhs_dim);
        println!("columns at order M   {}", report.cols_at_order);
        println!("terms per series     {}", report.terms_per_series);
        println!("conv multiplies      {}", report.conv_multiplies);
        println!("series bytes         {}", report.series_bytes);
        println!("lhs bytes            {}", report.lhs_bytes);
        println!("rhs bytes            {}", report.rhs_bytes);
        if report.overflow {
            println!("counts saturated; shape too large for exact estimates");
        }
    }
    Ok(exit_codes::OK)
}

/// Shared by tests: solve a case end to end the way `cmd_solve` does.
pub fn solve_to_artifact(
    case_path: &Path,
    scales: Option<&str>,
    dims: Option<usize>,
    order: usize,
    tol: f64,
) -> Result<(NetworkCase, mdhem_core::mdhem::MdhemArtifact)> {
    let case = load_case(case_path)?;
    let assignment = resolve_assignment(&case, scales, dims)?;
    let opts = MdhemOptions { m_max: order, tol, ..MdhemOptions::default() };
    let artifact = mdhem_core::mdhem::solve(&case, &assignment, &opts)?;
    Ok((case, artifact))
}

