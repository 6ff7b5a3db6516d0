//! Uniform Cartesian discretization of the design domain.
//!
//! Unknowns live on lattice nodes `origin + i * h`. Nodes outside the mask
//! (including the outer ring of a rectangle) carry the homogeneous Dirichlet
//! condition, so every operator treats them as zero.

use std::fmt;
use std::path::Path;

use crate::error::{Error, Result};

/// Marks a missing (exterior) neighbor in a stencil table.
pub const NONE: u32 = u32::MAX;

/// Shape descriptor accepted by [`build_domain`].
#[derive(Clone, Debug, PartialEq)]
pub enum DomainSpec {
    /// Axis-aligned box `[0, L_1] x ... x [0, L_N]`, N = 2 or 3.
    Rectangle(Vec<f64>),
    /// Disk (N = 2) or ball (N = 3) of the given radius.
    Ball { dim: usize, radius: f64 },
    /// Plain-text 0/1 mask file.
    MaskFile(std::path::PathBuf),
}

impl fmt::Display for DomainSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            DomainSpec::Rectangle(l) => {
                write!(f, "rectangle")?;
                for x in l {
                    write!(f, " {x}")?;
                }
                Ok(())
            }
            DomainSpec::Ball { dim: 2, radius } => write!(f, "disk {radius}"),
            DomainSpec::Ball { radius, .. } => write!(f, "ball {radius}"),
            DomainSpec::MaskFile(p) => write!(f, "mask {}", p.display()),
        }
    }
}

/// A field with one value per interior cell, ordered like [`DomainGrid::cells`].
#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField(pub Vec<f64>);

impl ScalarField {
    pub fn zeros(n: usize) -> Self {
        ScalarField(vec![0.0; n])
    }

    pub fn len(&self) -> usize {
        self.0.len()
    }

    pub fn is_empty(&self) -> bool {
        self.0.is_empty()
    }

    pub fn values(&self) -> &[f64] {
        &self.0
    }

    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.0
    }

    pub fn sup_norm(&self) -> f64 {
        self.0.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }

    pub fn is_zero(&self) -> bool {
        self.0.iter().all(|v| *v == 0.0)
    }

    pub fn scaled(&self, c: f64) -> Self {
        ScalarField(self.0.iter().map(|v| c * v).collect())
    }

    pub fn positive_part(&self) -> Self {
        ScalarField(self.0.iter().map(|v| v.max(0.0)).collect())
    }
}

/// Negative Laplacian on an arbitrary set of cells, zero outside the set.
///
/// `lines` groups consecutive entries that differ only in the x index;
/// reductions pair the two ends of each line so that sums are bitwise
/// invariant under reflection of x.
#[derive(Clone, Debug)]
pub struct Stencil {
    pub ndim: usize,
    pub inv_h2: f64,
    pub nbrs: Vec<[u32; 6]>,
    pub lines: Vec<(usize, usize)>,
}

impl Stencil {
    pub fn len(&self) -> usize {
        self.nbrs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nbrs.is_empty()
    }

    /// `out = -Δ_h u`.
    pub fn apply(&self, u: &[f64], out: &mut [f64]) {
        let diag = 2.0 * self.ndim as f64;
        let get = |q: u32| if q == NONE { 0.0 } else { u[q as usize] };
        for (p, nb) in self.nbrs.iter().enumerate() {
            let mut s = get(nb[0]) + get(nb[1]);
            for d in 1..self.ndim {
                s += get(nb[2 * d]) + get(nb[2 * d + 1]);
            }
            out[p] = (diag * u[p] - s) * self.inv_h2;
        }
    }

    /// Reflection-symmetric sum of `f(p)` over all entries.
    pub fn sum_by<F: Fn(usize) -> f64>(&self, f: F) -> f64 {
        let mut total = 0.0;
        for &(start, end) in &self.lines {
            let len = end - start;
            let mut row = 0.0;
            for k in 0..len / 2 {
                row += f(start + k) + f(end - 1 - k);
            }
            if len % 2 == 1 {
                row += f(start + len / 2);
            }
            total += row;
        }
        total
    }

    pub fn dot(&self, a: &[f64], b: &[f64]) -> f64 {
        self.sum_by(|p| a[p] * b[p])
    }
}

/// Uniform grid with an interior mask.
#[derive(Clone, Debug)]
pub struct DomainGrid {
    dims: Vec<usize>,
    spacing: f64,
    origin: Vec<f64>,
    mask: Vec<bool>,
    /// Global (row-major, x fastest) index of every interior cell.
    cells: Vec<usize>,
    /// Interior ordinal of every global index, or `NONE`.
    ordinal: Vec<u32>,
    stencil: Stencil,
}

impl DomainGrid {
    /// Builds a grid from an explicit mask; `mask.len()` must equal the product of `dims`.
    pub fn from_mask(dims: Vec<usize>, spacing: f64, origin: Vec<f64>, mask: Vec<bool>) -> Result<Self> {
        let ndim = dims.len();
        if !(2..=3).contains(&ndim) {
            return Err(Error::Domain(format!("unsupported dimension {ndim}")));
        }
        if !(spacing > 0.0 && spacing.is_finite()) {
            return Err(Error::Domain(format!("spacing must be positive, got {spacing}")));
        }
        let total: usize = dims.iter().product();
        if mask.len() != total || origin.len() != ndim {
            return Err(Error::Domain("mask/origin size does not match grid dims".into()));
        }
        let cells: Vec<usize> = (0..total).filter(|&g| mask[g]).collect();
        if cells.is_empty() {
            return Err(Error::Domain("domain has no interior cells (resolution too coarse for the shape?)".into()));
        }
        let mut ordinal = vec![NONE; total];
        for (p, &g) in cells.iter().enumerate() {
            ordinal[g] = p as u32;
        }
        let mut grid = DomainGrid {
            dims,
            spacing,
            origin,
            mask,
            cells,
            ordinal,
            stencil: Stencil { ndim, inv_h2: 0.0, nbrs: Vec::new(), lines: Vec::new() },
        };
        let all: Vec<usize> = (0..grid.cells.len()).collect();
        grid.stencil = grid.sub_stencil(&all);
        if grid.component_count(&vec![true; grid.cells.len()]) > 1 {
            log::warn!("domain mask is disconnected");
        }
        Ok(grid)
    }

    pub fn ndim(&self) -> usize {
        self.dims.len()
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn spacing(&self) -> f64 {
        self.spacing
    }

    pub fn origin(&self) -> &[f64] {
        &self.origin
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn cell_volume(&self) -> f64 {
        self.spacing.powi(self.ndim() as i32)
    }

    pub fn interior_count(&self) -> usize {
        self.cells.len()
    }

    /// Discrete measure of the domain, `#interior * h^N`.
    pub fn measure(&self) -> f64 {
        self.interior_count() as f64 * self.cell_volume()
    }

    pub fn cells(&self) -> &[usize] {
        &self.cells
    }

    pub fn stencil(&self) -> &Stencil {
        &self.stencil
    }

    /// Interior ordinal of a global index.
    pub fn ordinal_of(&self, global: usize) -> Option<usize> {
        match self.ordinal.get(global) {
            Some(&o) if o != NONE => Some(o as usize),
            _ => None,
        }
    }

    pub fn multi_index(&self, global: usize) -> [usize; 3] {
        let mut idx = [0usize; 3];
        let mut rem = global;
        for (d, &n) in self.dims.iter().enumerate() {
            idx[d] = rem % n;
            rem /= n;
        }
        idx
    }

    pub fn global_index(&self, idx: &[usize]) -> usize {
        let mut g = 0;
        for d in (0..self.ndim()).rev() {
            g = g * self.dims[d] + idx[d];
        }
        g
    }

    /// Physical coordinates of interior cell `p`.
    pub fn position(&self, p: usize) -> [f64; 3] {
        let idx = self.multi_index(self.cells[p]);
        let mut x = [0.0; 3];
        for d in 0..self.ndim() {
            x[d] = self.origin[d] + idx[d] as f64 * self.spacing;
        }
        x
    }

    /// Interior ordinal of the mirror image of `p` across the grid's central x plane.
    pub fn mirror_x(&self, p: usize) -> Option<usize> {
        let mut idx = self.multi_index(self.cells[p]);
        idx[0] = self.dims[0] - 1 - idx[0];
        self.ordinal_of(self.global_index(&idx[..self.ndim()]))
    }

    pub fn zeros(&self) -> ScalarField {
        ScalarField::zeros(self.interior_count())
    }

    pub fn field_from_fn<F: Fn([f64; 3]) -> f64>(&self, f: F) -> ScalarField {
        ScalarField((0..self.interior_count()).map(|p| f(self.position(p))).collect())
    }

    /// Stencil restricted to the listed interior ordinals (sorted ascending).
    pub fn sub_stencil(&self, subset: &[usize]) -> Stencil {
        let ndim = self.ndim();
        let mut local = std::collections::HashMap::with_capacity(subset.len());
        for (l, &p) in subset.iter().enumerate() {
            local.insert(p, l as u32);
        }
        let mut nbrs = Vec::with_capacity(subset.len());
        let mut lines: Vec<(usize, usize)> = Vec::new();
        let mut line_key: Option<usize> = None;
        let mut prev_x = 0usize;
        for (l, &p) in subset.iter().enumerate() {
            let g = self.cells[p];
            let idx = self.multi_index(g);
            let mut nb = [NONE; 6];
            let mut stride = 1usize;
            for d in 0..ndim {
                if idx[d] > 0 {
                    if let Some(q) = self.ordinal_of(g - stride) {
                        nb[2 * d] = *local.get(&q).unwrap_or(&NONE);
                    }
                }
                if idx[d] + 1 < self.dims[d] {
                    if let Some(q) = self.ordinal_of(g + stride) {
                        nb[2 * d + 1] = *local.get(&q).unwrap_or(&NONE);
                    }
                }
                stride *= self.dims[d];
            }
            nbrs.push(nb);
            let key = g / self.dims[0];
            if line_key == Some(key) && idx[0] > prev_x {
                lines.last_mut().unwrap().1 = l + 1;
            } else {
                lines.push((l, l + 1));
                line_key = Some(key);
            }
            prev_x = idx[0];
        }
        Stencil { ndim, inv_h2: 1.0 / (self.spacing * self.spacing), nbrs, lines }
    }

    /// Number of face-connected components of the selected interior cells.
    pub fn component_count(&self, selected: &[bool]) -> usize {
        crate::partition::label_components(self, selected).1
    }

    fn check(&self, u: &ScalarField) -> Result<()> {
        if u.len() != self.interior_count() {
            return Err(Error::Shape { expected: self.interior_count(), found: u.len() });
        }
        Ok(())
    }

    /// Quadrature inner product `h^N * sum(u v)`.
    pub fn inner(&self, u: &ScalarField, v: &ScalarField) -> f64 {
        self.cell_volume() * self.stencil.dot(&u.0, &v.0)
    }

    pub fn norm_sq(&self, u: &ScalarField) -> f64 {
        self.inner(u, u)
    }

    pub fn norm(&self, u: &ScalarField) -> f64 {
        self.norm_sq(u).sqrt()
    }
}

/// Builds a grid for the given shape; `resolution` is cells per unit length.
pub fn build_domain(spec: &DomainSpec, resolution: usize) -> Result<DomainGrid> {
    if resolution < 8 {
        return Err(Error::Domain(format!("resolution must be >= 8, got {resolution}")));
    }
    let h = 1.0 / resolution as f64;
    match spec {
        DomainSpec::Rectangle(lengths) => {
            if !(2..=3).contains(&lengths.len()) {
                return Err(Error::Domain("rectangle needs 2 or 3 edge lengths".into()));
            }
            if lengths.iter().any(|l| !(*l > 0.0)) {
                return Err(Error::Domain("rectangle edge lengths must be positive".into()));
            }
            // Nodes 0..=n along each axis; the outer ring is the Dirichlet boundary.
            let cells: Vec<usize> = lengths.iter().map(|l| (l * resolution as f64).round() as usize).collect();
            if cells.iter().any(|&n| n < 2) {
                return Err(Error::Domain("rectangle has no interior nodes at this resolution".into()));
            }
            let dims: Vec<usize> = cells.iter().map(|n| n + 1).collect();
            let total: usize = dims.iter().product();
            let mut mask = vec![false; total];
            for (g, m) in mask.iter_mut().enumerate() {
                let mut rem = g;
                let mut inside = true;
                for &n in &dims {
                    let i = rem % n;
                    rem /= n;
                    inside &= i > 0 && i + 1 < n;
                }
                *m = inside;
            }
            DomainGrid::from_mask(dims, h, vec![0.0; lengths.len()], mask)
        }
        DomainSpec::Ball { dim, radius } => {
            if !(2..=3).contains(dim) {
                return Err(Error::Domain(format!("unsupported dimension {dim}")));
            }
            if !(*radius > 0.0) {
                return Err(Error::Domain("radius must be positive".into()));
            }
            let half = (radius * resolution as f64).ceil() as usize + 1;
            let n = 2 * half + 1;
            let dims = vec![n; *dim];
            let total: usize = dims.iter().product();
            let r2 = (radius * resolution as f64).powi(2);
            let mut mask = vec![false; total];
            for (g, m) in mask.iter_mut().enumerate() {
                let mut rem = g;
                let mut d2 = 0.0;
                for _ in 0..*dim {
                    let i = (rem % n) as f64 - half as f64;
                    rem /= n;
                    d2 += i * i;
                }
                *m = d2 < r2;
            }
            DomainGrid::from_mask(dims, h, vec![-(half as f64) * h; *dim], mask)
        }
        DomainSpec::MaskFile(path) => read_mask_file(path),
    }
}

/// Reads `N nx ny [nz] h` followed by 0/1 flags in row-major order.
pub fn read_mask_file(path: &Path) -> Result<DomainGrid> {
    let text = std::fs::read_to_string(path)?;
    parse_mask(&text)
}

pub fn parse_mask(text: &str) -> Result<DomainGrid> {
    let (dims, h, values) = parse_matrix(text)?;
    let mut mask = Vec::with_capacity(values.len());
    for v in values {
        match v {
            x if x == 0.0 => mask.push(false),
            x if x == 1.0 => mask.push(true),
            x => return Err(Error::Format(format!("mask flag must be 0 or 1, got {x}"))),
        }
    }
    let ndim = dims.len();
    DomainGrid::from_mask(dims, h, vec![0.0; ndim], mask)
}

/// Parses the shared header + matrix layout used by mask files and field dumps.
pub fn parse_matrix(text: &str) -> Result<(Vec<usize>, f64, Vec<f64>)> {
    let mut lines = text.lines().filter(|l| !l.trim().is_empty());
    let header = lines.next().ok_or_else(|| Error::Format("empty file".into()))?;
    let head: Vec<&str> = header.split_whitespace().collect();
    let ndim: usize =
        head.first().and_then(|s| s.parse().ok()).ok_or_else(|| Error::Format(format!("bad header '{header}'")))?;
    if !(2..=3).contains(&ndim) || head.len() != ndim + 2 {
        return Err(Error::Format(format!("bad header '{header}'")));
    }
    let mut dims = Vec::with_capacity(ndim);
    for s in &head[1..=ndim] {
        dims.push(s.parse::<usize>().map_err(|_| Error::Format(format!("bad extent '{s}'")))?);
    }
    let h: f64 = head[ndim + 1].parse().map_err(|_| Error::Format(format!("bad spacing '{}'", head[ndim + 1])))?;
    let total: usize = dims.iter().product();
    let mut values = Vec::with_capacity(total);
    for line in lines {
        let row: Vec<&str> = line.split_whitespace().collect();
        if row.len() != dims[0] {
            return Err(Error::Format(format!("row has {} entries, expected {}", row.len(), dims[0])));
        }
        for s in row {
            values.push(s.parse::<f64>().map_err(|_| Error::Format(format!("bad value '{s}'")))?);
        }
    }
    if values.len() != total {
        return Err(Error::Format(format!("expected {total} values, found {}", values.len())));
    }
    Ok((dims, h, values))
}

/// `-Δ_h u` with zero Dirichlet exterior.
pub fn laplacian_apply(grid: &DomainGrid, u: &ScalarField) -> Result<ScalarField> {
    grid.check(u)?;
    let mut out = grid.zeros();
    grid.stencil.apply(&u.0, &mut out.0);
    Ok(out)
}

/// Sum over faces of squared differences times `h^(N-2)`; exterior faces see zero.
pub fn dirichlet_energy(grid: &DomainGrid, u: &ScalarField) -> Result<f64> {
    grid.check(u)?;
    Ok(stencil_energy(grid.stencil(), &u.0) * grid.spacing.powi(grid.ndim() as i32 - 2))
}

/// Face sum of squared jumps, each interior face split evenly between its two cells.
pub(crate) fn stencil_energy(st: &Stencil, u: &[f64]) -> f64 {
    let face = |p: usize, q: u32| -> f64 {
        if q == NONE {
            u[p] * u[p]
        } else {
            let d = u[p] - u[q as usize];
            0.5 * d * d
        }
    };
    st.sum_by(|p| {
        let nb = &st.nbrs[p];
        let mut s = face(p, nb[0]) + face(p, nb[1]);
        for d in 1..st.ndim {
            s += face(p, nb[2 * d]) + face(p, nb[2 * d + 1]);
        }
        s
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn random_field(grid: &DomainGrid, seed: u64) -> ScalarField {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        ScalarField((0..grid.interior_count()).map(|_| rng.gen_range(-1.0..1.0)).collect())
    }

    #[test]
    fn unit_square_layout() {
        let g = build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0]), 64).unwrap();
        assert_eq!(g.dims(), &[65, 65]);
        assert_eq!(g.interior_count(), 63 * 63);
        assert_eq!(g.spacing(), 1.0 / 64.0);
        assert_eq!(g.cell_volume(), g.spacing().powi(2));
    }

    #[test]
    fn disk_area_quadrature() {
        let res = 64;
        let g = build_domain(&DomainSpec::Ball { dim: 2, radius: 0.5 }, res).unwrap();
        let h = 1.0 / res as f64;
        let area = std::f64::consts::PI * 0.25;
        assert!((g.measure() - area).abs() <= 2.0 * h, "{} vs {}", g.measure(), area);
        assert_eq!(g.component_count(&vec![true; g.interior_count()]), 1);
    }

    #[test]
    fn empty_mask_rejected() {
        let text = "2 3 2 0.1\n0 0 0\n0 0 0\n";
        assert!(matches!(parse_mask(text), Err(Error::Domain(_))));
        assert!(build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0]), 4).is_err());
    }

    #[test]
    fn mask_file_parsing() {
        let text = "2 3 2 0.5\n1 1 0\n0 1 0\n";
        let g = parse_mask(text).unwrap();
        assert_eq!(g.interior_count(), 3);
        assert_eq!(g.cell_volume(), 0.25);
        assert!(parse_mask("2 3 2 0.5\n1 2 0\n0 1 0\n").is_err());
        assert!(parse_mask("2 3 2 0.5\n1 1\n0 1 0\n").is_err());
    }

    #[test]
    fn laplacian_of_zero_is_zero() {
        let g = build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0]), 16).unwrap();
        let out = laplacian_apply(&g, &g.zeros()).unwrap();
        assert!(out.is_zero());
        assert!(matches!(laplacian_apply(&g, &ScalarField::zeros(3)), Err(Error::Shape { .. })));
    }

    #[test]
    fn laplacian_of_sine_on_strip() {
        // 1-D strip: a single interior row, so the y-direction contributes 2u/h^2.
        let res = 64;
        let n = res + 1;
        let mut mask = vec![false; n * 3];
        for i in 1..n - 1 {
            mask[n + i] = true;
        }
        let h = 1.0 / res as f64;
        let g = DomainGrid::from_mask(vec![n, 3], h, vec![0.0, -h], mask).unwrap();
        let pi = std::f64::consts::PI;
        let u = g.field_from_fn(|x| (pi * x[0]).sin());
        let lap = laplacian_apply(&g, &u).unwrap();
        let mut max_rel: f64 = 0.0;
        for p in 0..g.interior_count() {
            let x_part = lap.0[p] - 2.0 * u.0[p] / (h * h);
            max_rel = max_rel.max((x_part - pi * pi * u.0[p]).abs() / (pi * pi * u.0[p].abs()));
        }
        // Taylor: (4/h^2) sin^2(pi h/2) = pi^2 (1 - pi^2 h^2 / 12 + ...)
        assert!(max_rel <= pi * pi * h * h / 12.0 * 1.01, "{max_rel}");
    }

    #[test]
    fn laplacian_is_symmetric() {
        let g = build_domain(&DomainSpec::Ball { dim: 2, radius: 0.4 }, 32).unwrap();
        let u = random_field(&g, 1);
        let v = random_field(&g, 2);
        let lu = laplacian_apply(&g, &u).unwrap();
        let lv = laplacian_apply(&g, &v).unwrap();
        let a = g.inner(&lu, &v);
        let b = g.inner(&u, &lv);
        assert!((a - b).abs() <= 1e-12 * a.abs().max(b.abs()));
    }

    #[test]
    fn energy_basics() {
        let g = build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0, 1.0]), 8).unwrap();
        assert_eq!(dirichlet_energy(&g, &g.zeros()).unwrap(), 0.0);
        let u = random_field(&g, 3);
        let e = dirichlet_energy(&g, &u).unwrap();
        let e3 = dirichlet_energy(&g, &u.scaled(3.0)).unwrap();
        assert!(e > 0.0);
        assert!((e3 - 9.0 * e).abs() <= 1e-12 * e3);
    }

    #[test]
    fn energy_matches_bilinear_form() {
        for (spec, res) in [
            (DomainSpec::Rectangle(vec![1.0, 0.5]), 32),
            (DomainSpec::Ball { dim: 2, radius: 0.5 }, 24),
            (DomainSpec::Ball { dim: 3, radius: 0.5 }, 12),
        ] {
            let g = build_domain(&spec, res).unwrap();
            let u = random_field(&g, 4);
            let e = dirichlet_energy(&g, &u).unwrap();
            let form = g.inner(&laplacian_apply(&g, &u).unwrap(), &u);
            assert!((e - form).abs() <= 1e-10 * e, "{spec}: {e} vs {form}");
        }
    }

    #[test]
    fn reflection_gives_bitwise_equal_sums() {
        let g = build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0]), 17).unwrap();
        let u = random_field(&g, 5);
        let mut r = g.zeros();
        for p in 0..g.interior_count() {
            r.0[g.mirror_x(p).unwrap()] = u.0[p];
        }
        assert_eq!(g.norm_sq(&u).to_bits(), g.norm_sq(&r).to_bits());
        assert_eq!(dirichlet_energy(&g, &u).unwrap().to_bits(), dirichlet_energy(&g, &r).unwrap().to_bits());
        let lu = laplacian_apply(&g, &u).unwrap();
        let lr = laplacian_apply(&g, &r).unwrap();
        for p in 0..g.interior_count() {
            assert_eq!(lu.0[p].to_bits(), lr.0[g.mirror_x(p).unwrap()].to_bits());
        }
    }
}
