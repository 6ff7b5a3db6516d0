#![allow(dead_code)]

use optpart::energy::PhaseVector;
use optpart::grid::{build_domain, DomainGrid, DomainSpec, ScalarField};
use rand::Rng;
use rand_chacha::ChaCha8Rng;

pub fn square(res: usize) -> DomainGrid {
    build_domain(&DomainSpec::Rectangle(vec![1.0, 1.0]), res).unwrap()
}

pub fn normalized(grid: &DomainGrid, f: ScalarField) -> ScalarField {
    let n = grid.norm(&f);
    f.scaled(1.0 / n)
}

/// Hard-segregated random phases: each cell is empty with probability `empty`,
/// otherwise owned by a uniformly drawn phase with a uniform value in (0, 1].
pub fn random_segregated(grid: &DomainGrid, k: usize, empty: f64, rng: &mut ChaCha8Rng) -> PhaseVector {
    loop {
        let mut fields = vec![grid.zeros(); k];
        for p in 0..grid.interior_count() {
            if rng.gen::<f64>() >= empty {
                let i = rng.gen_range(0..k);
                fields[i].0[p] = 1.0 - rng.gen::<f64>();
            }
        }
        if fields.iter().all(|f| !f.is_zero()) {
            let fields = fields.into_iter().map(|f| normalized(grid, f)).collect();
            return PhaseVector::new(fields, 0.5).unwrap();
        }
    }
}

/// Smooth field: a random combination of a few Dirichlet sine modes plus a shift.
pub fn random_smooth(grid: &DomainGrid, rng: &mut ChaCha8Rng, shift: f64) -> ScalarField {
    use std::f64::consts::PI;
    let modes: Vec<(f64, f64, f64)> =
        (0..4).map(|_| (rng.gen_range(1..4) as f64, rng.gen_range(1..4) as f64, rng.gen_range(-1.0..1.0))).collect();
    grid.field_from_fn(|x| {
        shift + modes.iter().map(|(m, n, c)| c * (m * PI * x[0]).sin() * (n * PI * x[1]).sin()).sum::<f64>()
    })
}

/// Eigenfunction-based two-disk configuration with centers `c0`, `c1` and radius `r`.
pub fn disk_mask(grid: &DomainGrid, c: [f64; 2], r: f64) -> Vec<bool> {
    (0..grid.interior_count())
        .map(|p| {
            let x = grid.position(p);
            (x[0] - c[0]).powi(2) + (x[1] - c[1]).powi(2) < r * r
        })
        .collect()
}
