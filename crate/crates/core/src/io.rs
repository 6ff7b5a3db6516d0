//! Plain-text artifacts: field dumps, support rasters and energy histories.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::grid::{parse_matrix, DomainGrid, ScalarField};
use crate::optimizer::HistoryEntry;

/// Phase colors of the support raster, cycled for `k > 8`.
pub const PALETTE: [[u8; 3]; 8] = [
    [230, 57, 70],
    [29, 120, 205],
    [46, 160, 67],
    [245, 166, 35],
    [142, 68, 173],
    [23, 190, 207],
    [214, 39, 140],
    [140, 86, 75],
];
/// Cells in the domain that belong to no phase.
pub const EMPTY_COLOR: [u8; 3] = [0, 0, 0];
/// Lattice nodes outside the domain.
pub const EXTERIOR_COLOR: [u8; 3] = [255, 255, 255];

/// Mask-file layout with real values: header `N nx ny [nz] h`, then one
/// x-row per line, exterior nodes written as zero. Values carry 17
/// significant digits, so reading back is bitwise exact.
pub fn format_field(grid: &DomainGrid, u: &ScalarField) -> Result<String> {
    if u.len() != grid.interior_count() {
        return Err(Error::Shape { expected: grid.interior_count(), found: u.len() });
    }
    let dims = grid.dims();
    let mut full = vec![0.0; dims.iter().product()];
    for (p, &g) in grid.cells().iter().enumerate() {
        full[g] = u.0[p];
    }
    let mut out = String::new();
    write!(out, "{}", dims.len()).unwrap();
    for d in dims {
        write!(out, " {d}").unwrap();
    }
    writeln!(out, " {}", grid.spacing()).unwrap();
    for row in full.chunks(dims[0]) {
        let line: Vec<String> = row.iter().map(|v| format!("{v:.16e}")).collect();
        out.push_str(&line.join(" "));
        out.push('\n');
    }
    Ok(out)
}

pub fn write_field(path: &Path, grid: &DomainGrid, u: &ScalarField) -> Result<()> {
    fs::write(path, format_field(grid, u)?)?;
    Ok(())
}

/// Parses a field dump against `grid`; extents and spacing must match and
/// exterior entries must be zero.
pub fn parse_field(text: &str, grid: &DomainGrid) -> Result<ScalarField> {
    let (dims, h, values) = parse_matrix(text)?;
    if dims != grid.dims() {
        return Err(Error::Format(format!("field extents {dims:?} do not match grid {:?}", grid.dims())));
    }
    if h != grid.spacing() {
        return Err(Error::Format(format!("field spacing {h} does not match grid spacing {}", grid.spacing())));
    }
    let mut u = grid.zeros();
    for (g, v) in values.into_iter().enumerate() {
        match grid.ordinal_of(g) {
            Some(p) => u.0[p] = v,
            None if v != 0.0 => return Err(Error::Format(format!("nonzero value {v} at exterior node {g}"))),
            None => {}
        }
    }
    if u.0.iter().any(|v| !v.is_finite()) {
        return Err(Error::Format("field contains non-finite values".into()));
    }
    Ok(u)
}

pub fn read_field(path: &Path, grid: &DomainGrid) -> Result<ScalarField> {
    parse_field(&fs::read_to_string(path)?, grid)
}

/// Plain PPM (P3) of the phase supports. 3-D grids are cut at the middle z plane.
/// The top row is the largest y.
pub fn format_raster(grid: &DomainGrid, supports: &[Vec<bool>]) -> String {
    let dims = grid.dims();
    let (nx, ny) = (dims[0], dims[1]);
    let z = if dims.len() == 3 { dims[2] / 2 } else { 0 };
    let mut out = format!("P3\n{nx} {ny}\n255\n");
    for j in (0..ny).rev() {
        let mut row = Vec::with_capacity(nx);
        for i in 0..nx {
            let g = grid.global_index(&[i, j, z][..dims.len()]);
            let color = match grid.ordinal_of(g) {
                None => EXTERIOR_COLOR,
                Some(p) => supports.iter().position(|s| s[p]).map_or(EMPTY_COLOR, |i| PALETTE[i % PALETTE.len()]),
            };
            row.push(format!("{} {} {}", color[0], color[1], color[2]));
        }
        out.push_str(&row.join(" "));
        out.push('\n');
    }
    out
}

pub fn write_raster(path: &Path, grid: &DomainGrid, supports: &[Vec<bool>]) -> Result<()> {
    fs::write(path, format_raster(grid, supports))?;
    Ok(())
}

pub fn format_history(history: &[HistoryEntry]) -> String {
    let mut out = String::from("iteration,outer,total,rayleigh,measure_penalty,segregation_penalty,mu\n");
    for h in history {
        writeln!(
            out,
            "{},{},{:e},{:e},{:e},{:e},{:e}",
            h.iteration, h.outer, h.total, h.rayleigh, h.measure_penalty, h.segregation_penalty, h.mu
        )
        .unwrap();
    }
    out
}

pub fn write_history(path: &Path, history: &[HistoryEntry]) -> Result<()> {
    fs::write(path, format_history(history))?;
    Ok(())
}
