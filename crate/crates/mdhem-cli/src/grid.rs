//! Grid specifications for sweeps and comparisons.
//!
//! A grid is given per dimension as `min:max:step`, comma-separated
//! (`0:2:0.1,0:2:0.1`); a single spec is reused for every dimension.
//! Points are generated as `min + k*step` with integer `k`, never by
//! accumulated addition, so grids are reproducible. Rows iterate the
//! last dimension fastest.

use anyhow::{bail, Context, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GridDim {
    pub min: f64,
    pub max: f64,
    pub step: f64,
}

impl GridDim {
    pub fn count(&self) -> usize {
        ((self.max - self.min) / self.step + 1e-9).floor() as usize + 1
    }

    pub fn value(&self, k: usize) -> f64 {
        self.min + k as f64 * self.step
    }
}

pub fn parse_grid(spec: &str, dims: usize) -> Result<Vec<GridDim>> {
    let parts: Vec<&str> = spec.split(',').collect();
    let parsed: Vec<GridDim> = parts
        .iter()
        .map(|part| {
            let fields: Vec<&str> = part.split(':').collect();
            if fields.len() != 3 {
                bail!("grid dimension '{part}' is not min:max:step");
            }
            let min: f64 = fields[0].trim().parse().context("grid min")?;
            let max: f64 = fields[1].trim().parse().context("grid max")?;
            let step: f64 = fields[2].trim().parse().context("grid step")?;
            if !(step > 0.0) {
                bail!("grid step must be positive in '{part}'");
            }
            if max < min {
                bail!("grid max below min in '{part}'");
            }
            Ok(GridDim { min, max, step })
        })
        .collect::<Result<_>>()?;
    let grid = if parsed.len() == dims {
        parsed
    } else if parsed.len() == 1 {
        vec![parsed[0]; dims]
    } else {
        bail!("grid has {} dimensions, artifact has {dims}", parsed.len());
    };
    Ok(grid)
}

pub fn points(grid: &[GridDim]) -> Vec<Vec<f64>> {
    let counts: Vec<usize> = grid.iter().map(GridDim::count).collect();
    let total: usize = counts.iter().product();
    let mut out = Vec::with_capacity(total);
    let mut idx = vec![0usize; grid.len()];
    for _ in 0..total {
        out.push(idx.iter().zip(grid).map(|(&k, d)| d.value(k)).collect());
        for d in (0..grid.len()).rev() {
            idx[d] += 1;
            if idx[d] < counts[d] {
                break;
            }
            idx[d] = 0;
        }
    }
    out
}

/// Parse a comma-separated scale vector such as `1.0,0.5`.
pub fn parse_point(text: &str, dims: usize) -> Result<Vec<f64>> {
    let values: Vec<f64> = text
        .split(',')
        .map(|v| v.trim().parse::<f64>().with_context(|| format!("scale value '{v}'")))
        .collect::<Result<_>>()?;
    if values.len() != dims {
        bail!("expected {dims} scale values, got {}", values.len());
    }
    Ok(values)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn grid_counts_and_values() {
        let grid = parse_grid("0:2:0.1", 2).unwrap();
        assert_eq!(grid.len(), 2);
        assert_eq!(grid[0].count(), 21);
        let pts = points(&grid);
        assert_eq!(pts.len(), 441);
        assert_eq!(pts[0], vec![0.0, 0.0]);
        // Last dimension fastest.
        assert_eq!(pts[1], vec![0.0, 0.1]);
        assert_eq!(pts[440], vec![2.0, 2.0]);
        // Integer stepping, no accumulation drift.
        assert_eq!(pts[440][0], 2.0);
    }

    #[test]
    fn bad_specs_rejected() {
        assert!(parse_grid("0:2", 1).is_err());
        assert!(parse_grid("0:2:0", 1).is_err());
        assert!(parse_grid("2:0:0.1", 1).is_err());
        assert!(parse_grid("0:1:0.5,0:1:0.5,0:1:0.5", 2).is_err());
    }
}
