//! Smallest Dirichlet eigenpair of `-Δ_h` on a subset of interior cells.

use crate::error::{Error, Result};
use crate::grid::{dirichlet_energy, DomainGrid, ScalarField, Stencil};

/// Relative residual of the inner conjugate-gradient solves (tightened for stricter outer tolerances).
pub const INNER_TOL: f64 = 1e-8;
/// Relative eigenvalue change below which the outer iteration is considered stagnant.
pub const STAGNATION_TOL: f64 = 1e-9;
pub const MAX_OUTER: usize = 500;
/// Stagnant outer iterations tolerated before giving up on the residual bound.
const STAGNANT_LIMIT: usize = 50;

#[derive(Clone, Debug)]
pub struct EigenResult {
    pub lambda: f64,
    /// Unit L² norm, nonnegative mean, zero outside the subset.
    pub eigenfunction: ScalarField,
    pub iterations: usize,
    /// `||-Δ_h u - λ u||_2` in the quadrature norm.
    pub residual: f64,
}

/// Solves `(A + diag(shift)) x = b` by (Jacobi-preconditioned) conjugate gradients.
///
/// `x` holds the initial guess on entry. Returns the iteration count and the
/// final relative residual.
pub fn conjugate_gradient(
    st: &Stencil,
    shift: Option<&[f64]>,
    b: &[f64],
    x: &mut [f64],
    tol: f64,
    max_iter: usize,
) -> (usize, f64) {
    let n = st.len();
    let base = 2.0 * st.ndim as f64 * st.inv_h2;
    let apply = |v: &[f64], out: &mut [f64]| {
        st.apply(v, out);
        if let Some(s) = shift {
            for p in 0..n {
                out[p] += s[p] * v[p];
            }
        }
    };
    let inv_diag: Vec<f64> = match shift {
        Some(s) => s.iter().map(|d| 1.0 / (base + d)).collect(),
        None => vec![1.0 / base; n],
    };
    let b_norm = st.dot(b, b).sqrt();
    if b_norm == 0.0 {
        x.iter_mut().for_each(|v| *v = 0.0);
        return (0, 0.0);
    }
    let mut r = vec![0.0; n];
    apply(x, &mut r);
    for p in 0..n {
        r[p] = b[p] - r[p];
    }
    let mut z: Vec<f64> = r.iter().zip(&inv_diag).map(|(a, d)| a * d).collect();
    let mut dir = z.clone();
    let mut rz = st.dot(&r, &z);
    let mut ad = vec![0.0; n];
    let mut res = st.dot(&r, &r).sqrt() / b_norm;
    let mut it = 0;
    while res > tol && it < max_iter {
        apply(&dir, &mut ad);
        let alpha = rz / st.dot(&dir, &ad);
        for p in 0..n {
            x[p] += alpha * dir[p];
            r[p] -= alpha * ad[p];
        }
        for p in 0..n {
            z[p] = r[p] * inv_diag[p];
        }
        let rz_new = st.dot(&r, &z);
        let beta = rz_new / rz;
        rz = rz_new;
        for p in 0..n {
            dir[p] = z[p] + beta * dir[p];
        }
        res = st.dot(&r, &r).sqrt() / b_norm;
        it += 1;
    }
    (it, res)
}

fn rayleigh_local(st: &Stencil, u: &[f64], work: &mut [f64]) -> f64 {
    st.apply(u, work);
    st.dot(work, u) / st.dot(u, u)
}

/// Smallest eigenpair on the cells flagged in `subset` (one flag per interior cell).
///
/// Inverse power iteration from the all-ones vector; each inner solve starts
/// from the current eigenvector estimate scaled by `1/λ`.
pub fn smallest_dirichlet_eig(grid: &DomainGrid, subset: &[bool], tol: f64) -> Result<EigenResult> {
    if subset.len() != grid.interior_count() {
        return Err(Error::Shape { expected: grid.interior_count(), found: subset.len() });
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidArgument(format!("tolerance must be positive, got {tol}")));
    }
    let cells: Vec<usize> = (0..subset.len()).filter(|&p| subset[p]).collect();
    if cells.is_empty() {
        return Err(Error::EmptySubset("eigenproblem on an empty cell set".into()));
    }
    let st = grid.sub_stencil(&cells);
    let n = cells.len();
    let vol = grid.cell_volume();
    let max_cg = 20 * n + 100;
    let inner_tol = INNER_TOL.min(0.1 * tol);

    let mut u = vec![1.0; n];
    normalize(&st, &mut u, vol);
    let mut work = vec![0.0; n];
    let mut lambda = rayleigh_local(&st, &u, &mut work);
    let mut x = vec![0.0; n];
    let mut residual = f64::INFINITY;
    let mut stagnant_rounds = 0;
    let mut iterations = 0;
    for it in 1..=MAX_OUTER {
        iterations = it;
        for p in 0..n {
            x[p] = u[p] / lambda;
        }
        conjugate_gradient(&st, None, &u, &mut x, inner_tol, max_cg);
        u.copy_from_slice(&x);
        normalize(&st, &mut u, vol);
        let next = rayleigh_local(&st, &u, &mut work);
        for p in 0..n {
            work[p] -= next * u[p];
        }
        residual = (vol * st.dot(&work, &work)).sqrt();
        let stagnant = (next - lambda).abs() <= STAGNATION_TOL * next;
        lambda = next;
        if residual <= tol * lambda {
            return Ok(finish(grid, &cells, &st, u, lambda, it, residual));
        }
        if stagnant {
            stagnant_rounds += 1;
            if stagnant_rounds > STAGNANT_LIMIT {
                break;
            }
        }
    }
    Err(Error::NoConvergence { iterations, residual })
}

fn normalize(st: &Stencil, u: &mut [f64], vol: f64) {
    let nrm = (vol * st.dot(u, u)).sqrt();
    u.iter_mut().for_each(|v| *v /= nrm);
}

fn finish(
    grid: &DomainGrid,
    cells: &[usize],
    st: &Stencil,
    mut u: Vec<f64>,
    lambda: f64,
    iterations: usize,
    residual: f64,
) -> EigenResult {
    if st.sum_by(|p| u[p]) < 0.0 {
        u.iter_mut().for_each(|v| *v = -*v);
    }
    let mut field = grid.zeros();
    for (l, &p) in cells.iter().enumerate() {
        field.0[p] = u[l];
    }
    EigenResult { lambda, eigenfunction: field, iterations, residual }
}

/// `dirichlet_energy(u) / ||u||²`.
pub fn rayleigh_quotient(grid: &DomainGrid, u: &ScalarField) -> Result<f64> {
    let e = dirichlet_energy(grid, u)?;
    let m = grid.norm_sq(u);
    if m == 0.0 {
        return Err(Error::InvalidArgument("Rayleigh quotient of the zero field".into()));
    }
    Ok(e / m)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::{build_domain, DomainSpec};
    use crate::oracles::box_lambda1;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn square(res: usize) -> DomainGrid {
        build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0]), res).unwrap()
    }

    #[test]
    fn single_cell_is_stencil_diagonal() {
        let g = square(16);
        let mut subset = vec![false; g.interior_count()];
        subset[40] = true;
        let r = smallest_dirichlet_eig(&g, &subset, 1e-10).unwrap();
        let h = g.spacing();
        assert!((r.lambda - 4.0 / (h * h)).abs() <= 1e-12 * r.lambda);
        assert!((g.norm(&r.eigenfunction) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_subset_is_an_error() {
        let g = square(16);
        let subset = vec![false; g.interior_count()];
        assert!(matches!(smallest_dirichlet_eig(&g, &subset, 1e-8), Err(Error::EmptySubset(_))));
    }

    #[test]
    fn square_matches_separation_of_variables() {
        let g = square(64);
        let r = smallest_dirichlet_eig(&g, &vec![true; g.interior_count()], 1e-8).unwrap();
        let exact = box_lambda1(&[1.0, 1.0]).unwrap();
        assert!((r.lambda - exact).abs() / exact < 1e-2);
        // Discrete closed form: (8/h^2) sin^2(pi h / 2).
        let h = g.spacing();
        let discrete = 8.0 / (h * h) * (std::f64::consts::PI * h / 2.0).sin().powi(2);
        assert!((r.lambda - discrete).abs() / discrete < 1e-9, "{} vs {discrete}", r.lambda);
        assert!(r.residual <= 1e-8 * r.lambda);
        assert!(r.eigenfunction.values().iter().all(|v| *v >= 0.0));
        assert!((g.norm(&r.eigenfunction) - 1.0).abs() < 1e-12);
    }

    #[test]
    fn rayleigh_quotient_properties() {
        let g = square(32);
        let r = smallest_dirichlet_eig(&g, &vec![true; g.interior_count()], 1e-9).unwrap();
        let q = rayleigh_quotient(&g, &r.eigenfunction).unwrap();
        assert!((q - r.lambda).abs() <= 1e-9 * r.lambda);

        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let u = ScalarField((0..g.interior_count()).map(|_| rng.gen_range(0.0..1.0)).collect());
        let q1 = rayleigh_quotient(&g, &u).unwrap();
        let q5 = rayleigh_quotient(&g, &u.scaled(5.0)).unwrap();
        assert!((q1 - q5).abs() <= 1e-14 * q1);
        assert!(q1 >= r.lambda);
        assert!(rayleigh_quotient(&g, &g.zeros()).is_err());
    }

    #[test]
    fn nested_subsets_are_monotone() {
        let g = square(32);
        let inner: Vec<bool> = (0..g.interior_count())
            .map(|p| {
                let x = g.position(p);
                (0.25..0.75).contains(&x[0]) && (0.25..0.75).contains(&x[1])
            })
            .collect();
        let small = smallest_dirichlet_eig(&g, &inner, 1e-8).unwrap();
        let big = smallest_dirichlet_eig(&g, &vec![true; g.interior_count()], 1e-8).unwrap();
        assert!(small.lambda >= big.lambda);
    }

    #[test]
    fn disk_scaling_law() {
        let res = 64;
        let half = build_domain(&DomainSpec::Ball { dim: 2, radius: 0.5 }, res).unwrap();
        let unit = build_domain(&DomainSpec::Ball { dim: 2, radius: 1.0 }, res).unwrap();
        let lh = smallest_dirichlet_eig(&half, &vec![true; half.interior_count()], 1e-8).unwrap().lambda;
        let lu = smallest_dirichlet_eig(&unit, &vec![true; unit.interior_count()], 1e-8).unwrap().lambda;
        assert!((lh / 4.0 - lu).abs() / lu < 0.02, "{lh} {lu}");
    }
}
