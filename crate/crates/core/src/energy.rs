//! Phase vectors and the penalized multiphase Rayleigh functional.

use serde::Serialize;

use crate::eigen::rayleigh_quotient;
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ScalarField};
use crate::oracles::unit_ball_volume;

/// Default support threshold relative to the sup norm.
pub const DEFAULT_EPS_REL: f64 = 1e-3;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum SegregationMode {
    /// At most one phase is nonzero in every cell.
    Hard,
    /// Overlap allowed and penalized by the segregation term.
    Soft,
}

/// `k` nonnegative phase fields and the measure budget `a`.
#[derive(Clone, Debug, PartialEq)]
pub struct PhaseVector {
    pub fields: Vec<ScalarField>,
    pub a: f64,
}

impl PhaseVector {
    pub fn new(fields: Vec<ScalarField>, a: f64) -> Result<Self> {
        if fields.len() < 2 {
            return Err(Error::InvalidArgument(format!("need at least 2 phases, got {}", fields.len())));
        }
        let n = fields[0].len();
        if fields.iter().any(|f| f.len() != n) {
            return Err(Error::InvalidArgument("phase fields differ in length".into()));
        }
        Ok(PhaseVector { fields, a })
    }

    pub fn k(&self) -> usize {
        self.fields.len()
    }

    /// True when no cell carries two nonzero phases.
    pub fn is_segregated(&self) -> bool {
        let n = self.fields[0].len();
        (0..n).all(|p| self.fields.iter().filter(|f| f.0[p] != 0.0).count() <= 1)
    }

    pub fn is_nonnegative(&self) -> bool {
        self.fields.iter().all(|f| f.0.iter().all(|v| *v >= 0.0))
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct EnergyBreakdown {
    /// Rayleigh quotient of each phase.
    pub dirichlet: Vec<f64>,
    /// `[Σ smoothed measures - a]^+`.
    pub measure_excess: f64,
    pub measure_penalty: f64,
    pub segregation_penalty: f64,
    pub total: f64,
}

impl EnergyBreakdown {
    pub fn rayleigh_sum(&self) -> f64 {
        self.dirichlet.iter().sum()
    }
}

/// `h^N * #{cells : |u| > eps_rel * ||u||_inf}`.
pub fn support_measure(grid: &DomainGrid, u: &ScalarField, eps_rel: f64) -> f64 {
    grid.cell_volume() * support_count(u, eps_rel) as f64
}

pub fn support_count(u: &ScalarField, eps_rel: f64) -> usize {
    let sup = u.sup_norm();
    if sup == 0.0 {
        return 0;
    }
    let cut = eps_rel * sup;
    u.0.iter().filter(|v| v.abs() > cut).count()
}

pub fn support_mask(u: &ScalarField, eps_rel: f64) -> Vec<bool> {
    let cut = eps_rel * u.sup_norm();
    u.0.iter().map(|v| *v != 0.0 && v.abs() > cut).collect()
}

/// `ρ_ε(s) = min(s / ε², 1)` applied to `s = u²`.
#[inline]
pub fn smoothed_indicator(u: f64, eps: f64) -> f64 {
    (u * u / (eps * eps)).min(1.0)
}

/// `∫ ρ_ε(u²)`; tends to the support measure from below as `ε → 0`.
pub fn smoothed_measure(grid: &DomainGrid, u: &ScalarField, eps: f64) -> f64 {
    grid.cell_volume() * grid.stencil().sum_by(|p| smoothed_indicator(u.0[p], eps))
}

/// `β Σ_{i<j} ∫ u_i² u_j²`.
pub fn segregation_penalty(grid: &DomainGrid, phases: &PhaseVector, beta: f64) -> f64 {
    if beta == 0.0 {
        return 0.0;
    }
    let k = phases.k();
    let mut total = 0.0;
    for i in 0..k {
        for j in i + 1..k {
            let (a, b) = (&phases.fields[i].0, &phases.fields[j].0);
            total += grid.stencil().sum_by(|p| a[p] * a[p] * b[p] * b[p]);
        }
    }
    beta * grid.cell_volume() * total
}

/// Evaluates the Rayleigh sum plus the smoothed measure penalty and the segregation penalty.
pub fn penalized_energy(
    grid: &DomainGrid,
    phases: &PhaseVector,
    mu: f64,
    beta: f64,
    eps_measure: f64,
) -> Result<EnergyBreakdown> {
    if !(mu >= 0.0 && beta >= 0.0) {
        return Err(Error::InvalidArgument(format!("penalty weights must be >= 0 (mu = {mu}, beta = {beta})")));
    }
    if !(eps_measure > 0.0) {
        return Err(Error::InvalidArgument(format!("smoothing width must be positive, got {eps_measure}")));
    }
    let mut dirichlet = Vec::with_capacity(phases.k());
    for (i, u) in phases.fields.iter().enumerate() {
        if u.is_zero() {
            return Err(Error::PhaseCollapse(i));
        }
        dirichlet.push(rayleigh_quotient(grid, u)?);
    }
    let measure: f64 = phases.fields.iter().map(|u| smoothed_measure(grid, u, eps_measure)).sum();
    let measure_excess = (measure - phases.a).max(0.0);
    let measure_penalty = if mu == 0.0 { 0.0 } else { mu * measure_excess };
    let segregation_penalty = segregation_penalty(grid, phases, beta);
    let total = dirichlet.iter().sum::<f64>() + measure_penalty + segregation_penalty;
    Ok(EnergyBreakdown { dirichlet, measure_excess, measure_penalty, segregation_penalty, total })
}

/// Penalty weight above which the penalized and constrained problems share a minimizer:
/// `(2^((k-1)/2) c a^((2-N)/(2N)) / (N |B_1|^(1/N)))^2`.
pub fn mu_threshold(c_tilde: f64, n: usize, a: f64, k: usize) -> Result<f64> {
    if !(c_tilde >= 0.0) || !(a > 0.0) || k < 2 {
        return Err(Error::InvalidArgument(format!(
            "mu_threshold needs c >= 0, a > 0, k >= 2 (c = {c_tilde}, a = {a}, k = {k})"
        )));
    }
    let ball = unit_ball_volume(n)?;
    let nf = n as f64;
    let base =
        2f64.powf((k as f64 - 1.0) / 2.0) * c_tilde * a.powf((2.0 - nf) / (2.0 * nf)) / (nf * ball.powf(1.0 / nf));
    Ok(base * base)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eigen::smallest_dirichlet_eig;
    use crate::grid::{build_domain, DomainSpec};
    use std::f64::consts::PI;

    fn square(res: usize) -> DomainGrid {
        build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0]), res).unwrap()
    }

    fn in_box(g: &DomainGrid, lo: [f64; 2], hi: [f64; 2]) -> Vec<bool> {
        (0..g.interior_count())
            .map(|p| {
                let x = g.position(p);
                x[0] > lo[0] && x[0] < hi[0] && x[1] > lo[1] && x[1] < hi[1]
            })
            .collect()
    }

    #[test]
    fn support_measure_counts() {
        let g = square(32);
        assert_eq!(support_measure(&g, &g.zeros(), 1e-3), 0.0);
        let mut u = g.zeros();
        for p in [3, 10, 11, 400] {
            u.0[p] = 1.0;
        }
        assert_eq!(support_measure(&g, &u, 0.0), 4.0 * g.cell_volume());
    }

    #[test]
    fn support_of_disk_bump() {
        let res = 128;
        let g = square(res);
        let u = g.field_from_fn(|x| {
            let r2 = (x[0] - 0.5).powi(2) + (x[1] - 0.5).powi(2);
            (0.09 - r2).max(0.0)
        });
        let m = support_measure(&g, &u, 1e-3);
        assert!((m - PI * 0.09).abs() <= 3.0 / res as f64, "{m}");
    }

    #[test]
    fn measure_penalty_vanishes_below_budget() {
        let g = square(32);
        let f1 = ScalarField(in_box(&g, [0.1, 0.1], [0.3, 0.3]).iter().map(|&b| b as u8 as f64).collect());
        let f2 = ScalarField(in_box(&g, [0.6, 0.6], [0.8, 0.8]).iter().map(|&b| b as u8 as f64).collect());
        let u = PhaseVector::new(vec![f1, f2], 0.5).unwrap();
        let e = penalized_energy(&g, &u, 1e6, 10.0, 1e-3).unwrap();
        assert_eq!(e.measure_penalty, 0.0);
        assert_eq!(e.segregation_penalty, 0.0);
        assert!((e.total - e.rayleigh_sum()).abs() == 0.0);
    }

    #[test]
    fn disjoint_subsquares_sum_their_eigenvalues() {
        let g = square(48);
        let m1 = in_box(&g, [0.0, 0.0], [0.45, 0.45]);
        let m2 = in_box(&g, [0.5, 0.3], [0.9, 0.9]);
        let e1 = smallest_dirichlet_eig(&g, &m1, 1e-10).unwrap();
        let e2 = smallest_dirichlet_eig(&g, &m2, 1e-10).unwrap();
        let u = PhaseVector::new(vec![e1.eigenfunction, e2.eigenfunction], 0.2).unwrap();
        let e = penalized_energy(&g, &u, 0.0, 0.0, 1e-3).unwrap();
        assert!((e.total - (e1.lambda + e2.lambda)).abs() < 1e-8 * e.total);
    }

    #[test]
    fn zero_phase_rejected() {
        let g = square(16);
        let mut f = g.zeros();
        f.0[0] = 1.0;
        let u = PhaseVector::new(vec![f, g.zeros()], 0.1).unwrap();
        assert!(matches!(penalized_energy(&g, &u, 1.0, 1.0, 1e-2), Err(Error::PhaseCollapse(1))));
    }

    #[test]
    fn mu_threshold_values() {
        assert_eq!(mu_threshold(0.0, 2, 0.1, 2).unwrap(), 0.0);
        for c in [1.0, 37.5, 726.8] {
            let t = mu_threshold(c, 2, 0.3, 2).unwrap();
            assert!((t - c * c / (2.0 * PI)).abs() <= 1e-12 * t);
        }
        // Independent evaluation for N = 3, k = 2, a = 0.1, c = 50.
        let ball = 4.0 / 3.0 * PI;
        let inner = 2f64.sqrt() * 50.0 * 0.1f64.powf(-1.0 / 6.0) / (3.0 * ball.cbrt());
        let t3 = mu_threshold(50.0, 3, 0.1, 2).unwrap();
        assert!((t3 - inner * inner).abs() <= 1e-12 * t3);
        assert!(mu_threshold(51.0, 3, 0.1, 2).unwrap() > t3);
        assert!(mu_threshold(-1.0, 2, 0.1, 2).is_err());
        assert!(mu_threshold(1.0, 2, 0.0, 2).is_err());
        assert!(mu_threshold(1.0, 2, 0.1, 1).is_err());
        assert!(mu_threshold(1.0, 4, 0.1, 2).is_err());
    }
}
