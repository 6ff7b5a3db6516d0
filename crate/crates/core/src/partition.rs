//! Extraction of the open partition from a converged phase vector and its audit.

use serde::Serialize;

use crate::eigen::smallest_dirichlet_eig;
use crate::energy::{support_mask, PhaseVector};
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ScalarField, NONE};
use crate::oracles::faber_krahn_bound;

/// Disjoint-set forest with path halving and union by rank.
#[derive(Clone, Debug)]
pub struct UnionFind {
    parent: Vec<usize>,
    rank: Vec<u8>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind { parent: (0..n).collect(), rank: vec![0; n] }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (ra, rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        match self.rank[ra].cmp(&self.rank[rb]) {
            std::cmp::Ordering::Less => self.parent[ra] = rb,
            std::cmp::Ordering::Greater => self.parent[rb] = ra,
            std::cmp::Ordering::Equal => {
                self.parent[rb] = ra;
                self.rank[ra] += 1;
            }
        }
        true
    }
}

/// Labels face-connected components of the selected interior cells.
/// Unselected cells get `u32::MAX`; labels are dense and ordered by first cell.
pub fn label_components(grid: &DomainGrid, selected: &[bool]) -> (Vec<u32>, usize) {
    let st = grid.stencil();
    let n = st.len();
    let mut uf = UnionFind::new(n);
    for p in 0..n {
        if !selected[p] {
            continue;
        }
        for &q in &st.nbrs[p][..2 * st.ndim] {
            if q != NONE && selected[q as usize] {
                uf.union(p, q as usize);
            }
        }
    }
    let mut labels = vec![u32::MAX; n];
    let mut root_label = vec![u32::MAX; n];
    let mut count = 0usize;
    for p in 0..n {
        if selected[p] {
            let r = uf.find(p);
            if root_label[r] == u32::MAX {
                root_label[r] = count as u32;
                count += 1;
            }
            labels[p] = root_label[r];
        }
    }
    (labels, count)
}

#[derive(Clone, Debug, Serialize)]
pub struct PartitionResult {
    #[serde(skip)]
    pub supports: Vec<Vec<bool>>,
    #[serde(skip)]
    pub eigenfunctions: Vec<ScalarField>,
    pub components_per_phase: Vec<usize>,
    pub measures: Vec<f64>,
    pub lambdas: Vec<f64>,
    pub rayleigh_quotients: Vec<f64>,
    pub objective: f64,
    /// `Σ quotients - Σ lambdas`.
    pub rayleigh_gap: f64,
    /// `|Σ measures - a|`.
    pub saturation_gap: f64,
    pub eps_rel: f64,
}

impl PartitionResult {
    pub fn total_measure(&self) -> f64 {
        self.measures.iter().sum()
    }
}

/// Thresholds each phase, re-solves the first eigenvalue on every support and
/// collects measures and component counts.
pub fn extract_partition(
    grid: &DomainGrid,
    phases: &PhaseVector,
    eps_rel: f64,
    eig_tol: f64,
) -> Result<PartitionResult> {
    let k = phases.k();
    let mut supports = Vec::with_capacity(k);
    let mut eigenfunctions = Vec::with_capacity(k);
    let mut components = Vec::with_capacity(k);
    let mut measures = Vec::with_capacity(k);
    let mut lambdas = Vec::with_capacity(k);
    let mut quotients = Vec::with_capacity(k);
    for (i, u) in phases.fields.iter().enumerate() {
        let mask = support_mask(u, eps_rel);
        let count = mask.iter().filter(|b| **b).count();
        if count == 0 {
            return Err(Error::EmptySubset(format!("phase {i} has an empty support")));
        }
        let eig = smallest_dirichlet_eig(grid, &mask, eig_tol)?;
        components.push(label_components(grid, &mask).1);
        measures.push(count as f64 * grid.cell_volume());
        lambdas.push(eig.lambda);
        quotients.push(crate::eigen::rayleigh_quotient(grid, u)?);
        eigenfunctions.push(eig.eigenfunction);
        supports.push(mask);
    }
    let objective: f64 = lambdas.iter().sum();
    let rayleigh_gap = quotients.iter().sum::<f64>() - objective;
    let saturation_gap = (measures.iter().sum::<f64>() - phases.a).abs();
    Ok(PartitionResult {
        supports,
        eigenfunctions,
        components_per_phase: components,
        measures,
        lambdas,
        rayleigh_quotients: quotients,
        objective,
        rayleigh_gap,
        saturation_gap,
        eps_rel,
    })
}

/// A pass/fail flag with the number that decided it.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct Check {
    pub ok: bool,
    pub value: f64,
    pub threshold: f64,
}

impl Check {
    fn at_most(value: f64, threshold: f64) -> Self {
        Check { ok: value <= threshold, value, threshold }
    }

    fn at_least(value: f64, threshold: f64) -> Self {
        Check { ok: value >= threshold, value, threshold }
    }
}

/// Tolerances of [`audit_partition`].
#[derive(Clone, Copy, Debug, Serialize)]
pub struct AuditTolerances {
    /// Allowed `|Σ m_i - a| / a`.
    pub saturation_rel: f64,
    /// Slack on the Faber-Krahn bound.
    pub faber_krahn_slack: f64,
    /// Subsolution margin must be `>= -subsolution_rel * max λ`.
    pub subsolution_rel: f64,
    /// Interior eigen-residual must be `<= residual_rel * λ_i`.
    pub residual_rel: f64,
}

impl Default for AuditTolerances {
    fn default() -> Self {
        AuditTolerances { saturation_rel: 0.02, faber_krahn_slack: 0.05, subsolution_rel: 1e-6, residual_rel: 1e-4 }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditReport {
    pub saturation: Check,
    pub connected: Check,
    pub disjoint: Check,
    pub faber_krahn: Check,
    pub subsolution: Check,
    pub eigen_residual: Check,
    /// Σ λ_1(B(m_i)).
    pub faber_krahn_bound: f64,
}

impl AuditReport {
    pub fn all_ok(&self) -> bool {
        [self.saturation, self.connected, self.disjoint, self.faber_krahn, self.subsolution, self.eigen_residual]
            .iter()
            .all(|c| c.ok)
    }
}

/// Worst subsolution margin `λ⟨u,φ⟩ - ⟨∇u,∇φ⟩` over unit-L² nodal hats `φ`.
pub fn subsolution_margin(grid: &DomainGrid, u: &ScalarField, lambda: f64) -> f64 {
    let st = grid.stencil();
    let mut au = vec![0.0; st.len()];
    st.apply(&u.0, &mut au);
    let w = grid.cell_volume().sqrt();
    (0..st.len()).map(|p| w * (lambda * u.0[p] - au[p])).fold(f64::INFINITY, f64::min)
}

/// `||-Δ_h u - λu||` over cells of `{u > cut}` whose face neighbors all lie in that set.
pub fn interior_residual(grid: &DomainGrid, u: &ScalarField, lambda: f64, cut: f64) -> f64 {
    let st = grid.stencil();
    let mut au = vec![0.0; st.len()];
    st.apply(&u.0, &mut au);
    let inside = |p: usize| u.0[p] > cut;
    let sq = st.sum_by(|p| {
        let nb = &st.nbrs[p];
        let interior = inside(p) && nb[..2 * st.ndim].iter().all(|&q| q != NONE && inside(q as usize));
        if interior {
            let r = au[p] - lambda * u.0[p];
            r * r
        } else {
            0.0
        }
    });
    (grid.cell_volume() * sq).sqrt()
}

/// Checks saturation, connectedness, disjointness, the Faber-Krahn bound,
/// the subsolution inequality and the interior eigen-equation. Never fails.
pub fn audit_partition(
    grid: &DomainGrid,
    result: &PartitionResult,
    phases: &PhaseVector,
    a: f64,
    tol: &AuditTolerances,
) -> AuditReport {
    let n = grid.ndim();
    let saturation = Check::at_most(result.saturation_gap, tol.saturation_rel * a);
    let max_components = result.components_per_phase.iter().copied().max().unwrap_or(0) as f64;
    let connected = Check::at_most(max_components, 1.0);

    let cells = grid.interior_count();
    let overlap = (0..cells).filter(|&p| result.supports.iter().filter(|s| s[p]).count() > 1).count() as f64;
    let disjoint = Check::at_most(overlap, 0.0);

    let bound: f64 = result.measures.iter().map(|m| faber_krahn_bound(n, *m).unwrap_or(f64::NAN)).sum();
    let faber_krahn = Check::at_least(result.objective, bound * (1.0 - tol.faber_krahn_slack));

    let lambda_max = result.lambdas.iter().copied().fold(0.0, f64::max);
    let margin = phases
        .fields
        .iter()
        .zip(&result.lambdas)
        .map(|(u, l)| subsolution_margin(grid, u, *l))
        .fold(f64::INFINITY, f64::min);
    let subsolution = Check::at_least(margin, -tol.subsolution_rel * lambda_max);

    let worst_residual = phases
        .fields
        .iter()
        .zip(&result.lambdas)
        .map(|(u, l)| interior_residual(grid, u, *l, result.eps_rel * u.sup_norm()) / l)
        .fold(0.0, f64::max);
    let eigen_residual = Check::at_most(worst_residual, tol.residual_rel);

    AuditReport { saturation, connected, disjoint, faber_krahn, subsolution, eigen_residual, faber_krahn_bound: bound }
}

/// Weighted Dirichlet energies of two phases on concentric balls.
///
/// Returns `ψ(r) = (r^-2 ∫_{B_r} |∇u|² |x-x0|^(2-N)) (r^-2 ∫_{B_r} |∇v|² |x-x0|^(2-N))`
/// for each radius. The singular weight in the center cell is replaced by its cell average.
pub fn cjk_diagnostic(
    grid: &DomainGrid,
    u: &ScalarField,
    v: &ScalarField,
    center: usize,
    radii: &[f64],
) -> Result<Vec<f64>> {
    let h = grid.spacing();
    let n = grid.ndim();
    if center >= grid.interior_count() {
        return Err(Error::InvalidArgument(format!("center {center} is not an interior cell")));
    }
    if let Some(r) = radii.iter().find(|r| **r < 2.0 * h) {
        return Err(Error::InvalidArgument(format!("radius {r} below 2h = {}", 2.0 * h)));
    }
    let gu = gradient_sq(grid, u);
    let gv = gradient_sq(grid, v);
    let x0 = grid.position(center);
    let center_weight = center_cell_weight(n, h);
    let mut out = Vec::with_capacity(radii.len());
    for &r in radii {
        let (mut eu, mut ev) = (0.0, 0.0);
        for p in 0..grid.interior_count() {
            let x = grid.position(p);
            let d = (0..n).map(|k| (x[k] - x0[k]).powi(2)).sum::<f64>().sqrt();
            if d > r {
                continue;
            }
            let w = if p == center { center_weight } else { d.powi(2 - n as i32) };
            eu += gu[p] * w;
            ev += gv[p] * w;
        }
        let vol = grid.cell_volume();
        out.push((eu * vol / (r * r)) * (ev * vol / (r * r)));
    }
    Ok(out)
}

/// Cell average of `|x|^(2-N)` over the centered cell `[-h/2, h/2]^N`.
fn center_cell_weight(n: usize, h: f64) -> f64 {
    if n == 2 {
        return 1.0;
    }
    // Midpoint rule on a fine sub-lattice; the singularity is integrable in 3-D.
    let m = 16;
    let mut s = 0.0;
    for i in 0..m {
        for j in 0..m {
            for k in 0..m {
                let c = |t: usize| (t as f64 + 0.5) / m as f64 - 0.5;
                let r = (c(i).powi(2) + c(j).powi(2) + c(k).powi(2)).sqrt() * h;
                s += 1.0 / r;
            }
        }
    }
    s / (m * m * m) as f64
}

/// Cell-centred `|∇u|²` from central differences, zero exterior.
fn gradient_sq(grid: &DomainGrid, u: &ScalarField) -> Vec<f64> {
    let st = grid.stencil();
    let h = grid.spacing();
    let get = |q: u32| if q == NONE { 0.0 } else { u.0[q as usize] };
    (0..st.len())
        .map(|p| {
            let nb = &st.nbrs[p];
            (0..st.ndim).map(|d| ((get(nb[2 * d + 1]) - get(nb[2 * d])) / (2.0 * h)).powi(2)).sum()
        })
        .collect()
}

/// `||u - u∘R|| / ||u||` for the reflection `R` across the central x plane.
pub fn axial_symmetry_defect(grid: &DomainGrid, u: &ScalarField) -> f64 {
    let mut diff = grid.zeros();
    for p in 0..grid.interior_count() {
        let m = grid.mirror_x(p).map_or(0.0, |q| u.0[q]);
        diff.0[p] = u.0[p] - m;
    }
    let nrm = grid.norm(u);
    if nrm == 0.0 {
        0.0
    } else {
        grid.norm(&diff) / nrm
    }
}

/// `measure / (π (diameter/2)²)` with the diameter taken between cell centres
/// and widened by one cell.
pub fn roundness(grid: &DomainGrid, support: &[bool]) -> f64 {
    let pts: Vec<[f64; 3]> = (0..support.len()).filter(|&p| support[p]).map(|p| grid.position(p)).collect();
    if pts.is_empty() {
        return 0.0;
    }
    let mut diam2: f64 = 0.0;
    for i in 0..pts.len() {
        for j in i + 1..pts.len() {
            let d2: f64 = (0..3).map(|k| (pts[i][k] - pts[j][k]).powi(2)).sum();
            diam2 = diam2.max(d2);
        }
    }
    let diam = diam2.sqrt() + grid.spacing();
    let measure = pts.len() as f64 * grid.cell_volume();
    measure / (std::f64::consts::PI * (diam / 2.0).powi(2))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};

    fn square(res: usize) -> DomainGrid {
        build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0]), res).unwrap()
    }

    fn boxed(g: &DomainGrid, lo: [f64; 2], hi: [f64; 2]) -> Vec<bool> {
        (0..g.interior_count())
            .map(|p| {
                let x = g.position(p);
                x[0] > lo[0] && x[0] < hi[0] && x[1] > lo[1] && x[1] < hi[1]
            })
            .collect()
    }

    #[test]
    fn union_find_basics() {
        let mut uf = UnionFind::new(5);
        assert!(uf.union(0, 1));
        assert!(uf.union(3, 4));
        assert!(!uf.union(1, 0));
        assert_eq!(uf.find(0), uf.find(1));
        assert_ne!(uf.find(0), uf.find(3));
    }

    #[test]
    fn components_use_face_neighbors() {
        let g = square(8);
        let mut sel = vec![false; g.interior_count()];
        // Diagonal neighbors only: two components.
        sel[0] = true;
        sel[8] = true;
        assert_eq!(label_components(&g, &sel).1, 2);
        sel[1] = true;
        assert_eq!(label_components(&g, &sel).1, 1);
    }

    #[test]
    fn two_subsquares_partition() {
        let g = square(32);
        let m1 = boxed(&g, [0.1, 0.1], [0.4, 0.4]);
        let m2 = boxed(&g, [0.55, 0.5], [0.9, 0.8]);
        let e1 = smallest_dirichlet_eig(&g, &m1, 1e-10).unwrap();
        let e2 = smallest_dirichlet_eig(&g, &m2, 1e-10).unwrap();
        let count = |m: &Vec<bool>| m.iter().filter(|b| **b).count() as f64 * g.cell_volume();
        let (a1, a2) = (count(&m1), count(&m2));
        let u = PhaseVector::new(vec![e1.eigenfunction.clone(), e2.eigenfunction.clone()], a1 + a2).unwrap();
        let r = extract_partition(&g, &u, 0.0, 1e-10).unwrap();
        assert_eq!(r.measures, vec![a1, a2]);
        assert!((r.lambdas[0] - e1.lambda).abs() < 1e-8 * e1.lambda);
        assert!((r.lambdas[1] - e2.lambda).abs() < 1e-8 * e2.lambda);
        assert_eq!(r.components_per_phase, vec![1, 1]);
        let audit = audit_partition(&g, &r, &u, a1 + a2, &AuditTolerances::default());
        assert!(audit.saturation.ok && audit.connected.ok && audit.disjoint.ok);
        assert!(audit.subsolution.ok, "{:?}", audit.subsolution);
        assert!(audit.eigen_residual.ok, "{:?}", audit.eigen_residual);
    }

    #[test]
    fn split_phase_and_undersaturated_budget_are_flagged() {
        let g = square(32);
        let m1 = boxed(&g, [0.05, 0.05], [0.25, 0.25]);
        let far = boxed(&g, [0.75, 0.75], [0.95, 0.95]);
        let split: Vec<bool> = m1.iter().zip(&far).map(|(a, b)| *a || *b).collect();
        let mid = boxed(&g, [0.4, 0.05], [0.6, 0.25]);
        let bump = |m: &Vec<bool>| ScalarField(m.iter().map(|&b| b as u8 as f64).collect());
        let u = PhaseVector::new(vec![bump(&split), bump(&mid)], 1.0).unwrap();
        let r = extract_partition(&g, &u, 1e-3, 1e-8).unwrap();
        assert_eq!(r.components_per_phase, vec![2, 1]);
        let total = r.total_measure();
        let audit = audit_partition(&g, &r, &u, 2.0 * total, &AuditTolerances::default());
        assert!(!audit.connected.ok);
        assert!(!audit.saturation.ok);
        assert!(audit.disjoint.ok);
    }

    #[test]
    fn empty_phase_is_an_error() {
        let g = square(16);
        let mut f = g.zeros();
        f.0[3] = 1.0;
        let u = PhaseVector::new(vec![f, g.zeros()], 0.1).unwrap();
        assert!(extract_partition(&g, &u, 1e-3, 1e-8).is_err());
    }

    #[test]
    fn cjk_vanishes_with_a_zero_phase() {
        let g = square(32);
        let u = g.field_from_fn(|x| x[0] * (1.0 - x[0]) * x[1] * (1.0 - x[1]));
        let c = g.interior_count() / 2;
        let h = g.spacing();
        let psi = cjk_diagnostic(&g, &u, &g.zeros(), c, &[2.0 * h, 4.0 * h]).unwrap();
        assert!(psi.iter().all(|v| *v == 0.0));
        let psi = cjk_diagnostic(&g, &g.zeros(), &g.zeros(), c, &[3.0 * h]).unwrap();
        assert_eq!(psi, vec![0.0]);
        assert!(cjk_diagnostic(&g, &u, &u, c, &[h]).is_err());
    }

    #[test]
    fn disk_roundness_is_near_one() {
        let g = square(64);
        let disk: Vec<bool> = (0..g.interior_count())
            .map(|p| {
                let x = g.position(p);
                (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2) < 0.2 * 0.2
            })
            .collect();
        let r = roundness(&g, &disk);
        assert!(r > 0.9 && r < 1.1, "{r}");
        let strip = boxed(&g, [0.1, 0.4], [0.9, 0.5]);
        assert!(roundness(&g, &strip) < 0.3);
    }
}
