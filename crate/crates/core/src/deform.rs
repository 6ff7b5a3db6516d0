//! Support-preserving deformations of segregated phase vectors and the
//! first-order expansion of the inverse squared norm of a positive part.

use serde::Serialize;

use crate::energy::PhaseVector;
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ScalarField};

/// Which side of `u ± tφ` to expand.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Sign {
    Plus,
    Minus,
}

impl Sign {
    fn factor(self) -> f64 {
        match self {
            Sign::Plus => 1.0,
            Sign::Minus => -1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct DeformationReport {
    pub t: f64,
    pub norms_after: Vec<f64>,
    /// Phase `j` after the move is supported where it was before (plus `supp φ` for the receiver).
    pub support_inclusions: Vec<bool>,
    pub disjointness: bool,
    pub energy_delta: f64,
}

/// `û_i = u_i - Σ_{j≠i} u_j`.
pub fn hat_transform(phases: &PhaseVector, i: usize) -> Result<ScalarField> {
    check_index(phases, i)?;
    let n = phases.fields[i].len();
    let mut out = phases.fields[i].clone();
    for (j, f) in phases.fields.iter().enumerate() {
        if j != i {
            for p in 0..n {
                out.0[p] -= f.0[p];
            }
        }
    }
    Ok(out)
}

fn check_index(phases: &PhaseVector, i: usize) -> Result<()> {
    if i >= phases.k() {
        return Err(Error::InvalidArgument(format!("phase index {i} out of range for k = {}", phases.k())));
    }
    Ok(())
}

fn check_phi(phases: &PhaseVector, i: usize, phi: &ScalarField, t: f64) -> Result<()> {
    if phi.len() != phases.fields[i].len() {
        return Err(Error::Shape { expected: phases.fields[i].len(), found: phi.len() });
    }
    if phi.0.iter().any(|v| *v < 0.0) {
        return Err(Error::InvalidArgument("test function must be nonnegative".into()));
    }
    if !(t >= 0.0) {
        return Err(Error::InvalidArgument(format!("step must be nonnegative, got {t}")));
    }
    let limit = max_step(&phases.fields[i], phi);
    if t > limit {
        return Err(Error::InvalidArgument(format!("step {t} exceeds the admissible bound {limit:.3e}")));
    }
    Ok(())
}

/// Largest step accepted by the deformations: `½ ||u_i||_∞ / ||φ||_∞`.
pub fn max_step(u: &ScalarField, phi: &ScalarField) -> f64 {
    let p = phi.sup_norm();
    if p == 0.0 {
        f64::INFINITY
    } else {
        0.5 * u.sup_norm() / p
    }
}

fn normalized_positive(grid: &DomainGrid, v: ScalarField, phase: usize) -> Result<ScalarField> {
    let v = v.positive_part();
    let nrm = grid.norm(&v);
    if nrm == 0.0 {
        return Err(Error::PhaseCollapse(phase));
    }
    Ok(v.scaled(1.0 / nrm))
}

/// `(u_i - tφ)^+ / ||(u_i - tφ)^+||`, other phases untouched.
pub fn deform_simple(
    grid: &DomainGrid,
    phases: &PhaseVector,
    i: usize,
    phi: &ScalarField,
    t: f64,
) -> Result<PhaseVector> {
    check_index(phases, i)?;
    check_phi(phases, i, phi, t)?;
    if t == 0.0 {
        return Ok(phases.clone());
    }
    let mut out = phases.clone();
    let shifted = ScalarField(phases.fields[i].0.iter().zip(&phi.0).map(|(u, f)| u - t * f).collect());
    out.fields[i] = normalized_positive(grid, shifted, i)?;
    Ok(out)
}

/// Moves mass from every other phase into phase `i` through `φ`:
/// `(û_i + tφ)^+` for the receiver and `(û_j - tφ)^+` for the rest, each renormalized.
pub fn deform_transfer(
    grid: &DomainGrid,
    phases: &PhaseVector,
    i: usize,
    phi: &ScalarField,
    t: f64,
) -> Result<PhaseVector> {
    check_index(phases, i)?;
    check_phi(phases, i, phi, t)?;
    if t == 0.0 {
        return Ok(phases.clone());
    }
    let mut fields = Vec::with_capacity(phases.k());
    for j in 0..phases.k() {
        let mut hat = hat_transform(phases, j)?;
        let s = if j == i { t } else { -t };
        for (h, f) in hat.0.iter_mut().zip(&phi.0) {
            *h += s * f;
        }
        fields.push(normalized_positive(grid, hat, j)?);
    }
    PhaseVector::new(fields, phases.a)
}

/// Checks the set-inclusion, norm and disjointness conclusions of a deformation
/// cell by cell, with supports taken as exact nonzero sets.
pub fn deformation_report(
    grid: &DomainGrid,
    before: &PhaseVector,
    after: &PhaseVector,
    receiver: Option<(usize, &ScalarField)>,
    t: f64,
) -> Result<DeformationReport> {
    let norms_after: Vec<f64> = after.fields.iter().map(|f| grid.norm(f)).collect();
    let mut support_inclusions = Vec::with_capacity(after.k());
    for j in 0..after.k() {
        let (old, new) = (&before.fields[j].0, &after.fields[j].0);
        let extra = match receiver {
            Some((r, phi)) if r == j => Some(&phi.0),
            _ => None,
        };
        let ok = (0..new.len()).all(|p| new[p] == 0.0 || old[p] != 0.0 || extra.map_or(false, |e| e[p] > 0.0));
        support_inclusions.push(ok);
    }
    let disjointness = after.is_segregated();
    let e0 = crate::energy::penalized_energy(grid, before, 0.0, 0.0, 1.0)?.total;
    let e1 = crate::energy::penalized_energy(grid, after, 0.0, 0.0, 1.0)?.total;
    Ok(DeformationReport { t, norms_after, support_inclusions, disjointness, energy_delta: e1 - e0 })
}

/// Result of [`expansion_check`].
#[derive(Clone, Debug)]
pub struct ExpansionFit {
    pub steps: Vec<f64>,
    /// `|1/||(u ± tφ)^+||² - (1/||u^+||² ∓ 2t ∫u^+φ / ||u^+||⁴)|` for each step.
    pub remainders: Vec<f64>,
    /// Least-squares slope of `log remainder` against `log t`; `None` when every remainder is zero.
    pub slope: Option<f64>,
}

/// The exact first-order coefficient `∓ 2 ∫u^+φ / ||u^+||⁴`.
pub fn first_order_coefficient(grid: &DomainGrid, u: &ScalarField, phi: &ScalarField, sign: Sign) -> Result<f64> {
    let up = u.positive_part();
    let n2 = grid.norm_sq(&up);
    if n2 == 0.0 {
        return Err(Error::InvalidArgument("positive part vanishes".into()));
    }
    Ok(-sign.factor() * 2.0 * grid.inner(&up, phi) / (n2 * n2))
}

/// Measures the order of the remainder in the expansion of `1/||(u ± tφ)^+||²`.
pub fn expansion_check(
    grid: &DomainGrid,
    u: &ScalarField,
    phi: &ScalarField,
    steps: &[f64],
    sign: Sign,
) -> Result<ExpansionFit> {
    if steps.len() < 2 || steps.iter().any(|t| !(*t > 0.0)) {
        return Err(Error::InvalidArgument("need at least two positive steps".into()));
    }
    let up = u.positive_part();
    let n2 = grid.norm_sq(&up);
    if n2 == 0.0 {
        return Err(Error::InvalidArgument("positive part vanishes".into()));
    }
    let coef = first_order_coefficient(grid, u, phi, sign)?;
    let s = sign.factor();
    let mut remainders = Vec::with_capacity(steps.len());
    for &t in steps {
        let moved = ScalarField(u.0.iter().zip(&phi.0).map(|(a, b)| a + s * t * b).collect()).positive_part();
        let m = grid.norm_sq(&moved);
        if m == 0.0 {
            return Err(Error::InvalidArgument(format!("positive part vanishes at t = {t}")));
        }
        remainders.push((1.0 / m - (1.0 / n2 + coef * t)).abs());
    }
    let slope = if remainders.iter().all(|r| *r == 0.0) {
        None
    } else {
        let pts: Vec<(f64, f64)> =
            steps.iter().zip(&remainders).filter(|(_, r)| **r > 0.0).map(|(t, r)| (t.ln(), r.ln())).collect();
        Some(fit_slope(&pts))
    };
    Ok(ExpansionFit { steps: steps.to_vec(), remainders, slope })
}

/// Ordinary least-squares slope.
pub fn fit_slope(pts: &[(f64, f64)]) -> f64 {
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    sxy / sxx
}
