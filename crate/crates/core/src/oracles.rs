//! Closed-form reference values: balls, boxes and the equal-ball optimum.

use std::f64::consts::PI;

use serde::Serialize;

use crate::error::{Error, Result};

const ROOT_TOL: f64 = 1e-12;

/// Equal-radius ball configuration for a total measure budget.
#[derive(Clone, Copy, Debug, Serialize)]
pub struct BallPrediction {
    pub radius: f64,
    pub per_ball_lambda: f64,
    pub total_objective: f64,
}

fn check_dim(n: usize) -> Result<()> {
    if (2..=3).contains(&n) {
        Ok(())
    } else {
        Err(Error::InvalidArgument(format!("unsupported dimension {n}")))
    }
}

/// `|B_1|` in dimension `n`.
pub fn unit_ball_volume(n: usize) -> Result<f64> {
    check_dim(n)?;
    Ok(if n == 2 { PI } else { 4.0 * PI / 3.0 })
}

/// `J_nu(x)` up to the positive factor `(x/2)^nu / Gamma(nu+1)`; enough to locate roots.
fn bessel_series_reduced(nu: f64, x: f64) -> f64 {
    let q = -(x * x) / 4.0;
    let mut term = 1.0;
    let mut sum = 1.0;
    let mut m = 0.0;
    loop {
        m += 1.0;
        term *= q / (m * (m + nu));
        sum += term;
        if term.abs() < 1e-17 * sum.abs().max(1e-300) && m > x {
            break;
        }
    }
    sum
}

fn bisect<F: Fn(f64) -> f64>(f: F, mut lo: f64, mut hi: f64) -> f64 {
    let mut flo = f(lo);
    debug_assert!(flo * f(hi) < 0.0);
    while hi - lo > ROOT_TOL {
        let mid = 0.5 * (lo + hi);
        let fm = f(mid);
        if (fm < 0.0) == (flo < 0.0) {
            lo = mid;
            flo = fm;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// First positive zero of `J_{N/2-1}`.
pub fn first_bessel_zero(n: usize) -> Result<f64> {
    check_dim(n)?;
    let nu = n as f64 / 2.0 - 1.0;
    let (lo, hi) = if n == 2 { (2.0, 3.0) } else { (3.0, 4.0) };
    Ok(bisect(|x| bessel_series_reduced(nu, x), lo, hi))
}

/// `λ_1(B_r) = (j_{N/2-1,1} / r)^2`.
pub fn ball_lambda1(n: usize, r: f64) -> Result<f64> {
    if !(r > 0.0) {
        return Err(Error::InvalidArgument(format!("radius must be positive, got {r}")));
    }
    let j = first_bessel_zero(n)?;
    Ok((j / r).powi(2))
}

/// First Dirichlet eigenvalue of a box with the given edge lengths.
pub fn box_lambda1(lengths: &[f64]) -> Result<f64> {
    if lengths.is_empty() || lengths.iter().any(|l| !(*l > 0.0)) {
        return Err(Error::InvalidArgument("box edge lengths must be positive".into()));
    }
    Ok(PI * PI * lengths.iter().map(|l| 1.0 / (l * l)).sum::<f64>())
}

/// Radius of the ball of measure `m`.
pub fn ball_radius_for_measure(n: usize, m: f64) -> Result<f64> {
    Ok((m / unit_ball_volume(n)?).powf(1.0 / n as f64))
}

/// Faber-Krahn lower bound `λ_1(B(m))` for a set of measure `m`.
pub fn faber_krahn_bound(n: usize, m: f64) -> Result<f64> {
    ball_lambda1(n, ball_radius_for_measure(n, m)?)
}

/// `k` disjoint equal balls sharing the budget `a`.
pub fn equal_ball_prediction(n: usize, k: usize, a: f64) -> Result<BallPrediction> {
    if !(a > 0.0) || k == 0 {
        return Err(Error::InvalidArgument(format!("need a > 0 and k >= 1 (a = {a}, k = {k})")));
    }
    let radius = ball_radius_for_measure(n, a / k as f64)?;
    let per_ball_lambda = ball_lambda1(n, radius)?;
    Ok(BallPrediction { radius, per_ball_lambda, total_objective: k as f64 * per_ball_lambda })
}
