//! Projected descent on the penalized functional with penalty continuation.
//!
//! Each step takes the L² gradient of the smoothed functional, scales it by the
//! diagonal of `-Δ_h` plus the penalty curvature, backtracks on the step
//! length and projects back onto nonnegative, segregated, unit-norm phases.
//! The support-count penalty enters through its proximal map.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::eigen::smallest_dirichlet_eig;
use crate::energy::{mu_threshold, penalized_energy, support_mask, EnergyBreakdown, PhaseVector, SegregationMode};
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, ScalarField};
use crate::partition::{extract_partition, PartitionResult};

pub const MAX_HALVINGS: usize = 30;

#[derive(Clone, Debug, Serialize)]
pub struct SolverConfig {
    pub k: usize,
    pub a: f64,
    pub resolution: usize,
    pub seed: u64,
    pub restarts: usize,
    /// Initial step length of the preconditioned direction.
    pub step: f64,
    pub beta_schedule: Vec<f64>,
    pub mu_safety: f64,
    /// Overrides the threshold-based penalty weight when set.
    pub mu_fixed: Option<f64>,
    /// Smoothing widths relative to the flat-phase height `sqrt(k / a)`.
    pub eps_schedule: Vec<f64>,
    pub segregation: SegregationMode,
    pub max_outer: usize,
    pub max_inner: usize,
    pub tol_energy: f64,
    pub eps_rel: f64,
    pub eig_tol: f64,
    /// Replace each phase by the first eigenfunction of its support at the end.
    pub polish: bool,
}

impl Default for SolverConfig {
    fn default() -> Self {
        SolverConfig {
            k: 2,
            a: 0.1,
            resolution: 64,
            seed: 0,
            restarts: 1,
            step: 1.0,
            beta_schedule: vec![1.0, 10.0, 100.0, 1000.0],
            mu_safety: 2.0,
            mu_fixed: None,
            eps_schedule: vec![0.3, 0.1, 0.03, 0.01, 0.003],
            segregation: SegregationMode::Hard,
            max_outer: 12,
            max_inner: 200,
            tol_energy: 1e-7,
            eps_rel: crate::energy::DEFAULT_EPS_REL,
            eig_tol: 1e-9,
            polish: true,
        }
    }
}

impl SolverConfig {
    pub fn validate(&self, grid: &DomainGrid) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if self.k < 2 {
            return bad(format!("k must be >= 2, got {}", self.k));
        }
        if !(self.a > 0.0) {
            return bad(format!("a must be > 0, got {}", self.a));
        }
        if self.a >= grid.measure() {
            return bad(format!("a must be < |Ω| = {}", grid.measure()));
        }
        if self.k > grid.interior_count() {
            return bad(format!("k = {} exceeds the number of interior cells", self.k));
        }
        if self.beta_schedule.is_empty() || self.eps_schedule.is_empty() {
            return bad("schedules must be nonempty".into());
        }
        if self.beta_schedule.windows(2).any(|w| w[1] < w[0]) || self.beta_schedule.iter().any(|b| *b < 0.0) {
            return bad("beta_schedule must be nonnegative and nondecreasing".into());
        }
        if self.eps_schedule.windows(2).any(|w| w[1] > w[0]) || self.eps_schedule.iter().any(|e| !(*e > 0.0)) {
            return bad("eps_schedule must be positive and nonincreasing".into());
        }
        if !(self.mu_safety >= 1.0) {
            return bad(format!("mu_safety must be >= 1, got {}", self.mu_safety));
        }
        if matches!(self.mu_fixed, Some(m) if !(m >= 0.0)) {
            return bad("mu_fixed must be >= 0".into());
        }
        if !(self.step > 0.0) || !(self.tol_energy >= 0.0) || !(self.eig_tol > 0.0) {
            return bad("step and eig_tol must be positive, tol_energy nonnegative".into());
        }
        if !(0.0..1.0).contains(&self.eps_rel) {
            return bad(format!("eps_rel must lie in [0, 1), got {}", self.eps_rel));
        }
        if self.max_outer == 0 || self.max_inner == 0 || self.restarts == 0 {
            return bad("iteration caps and restarts must be positive".into());
        }
        Ok(())
    }

    fn rounds(&self) -> usize {
        self.beta_schedule.len().max(self.eps_schedule.len())
    }

    fn round_params(&self, outer: usize) -> (f64, f64) {
        let b = self.beta_schedule[outer.min(self.beta_schedule.len() - 1)];
        let e = self.eps_schedule[outer.min(self.eps_schedule.len() - 1)];
        (b, e * (self.k as f64 / self.a).sqrt())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct HistoryEntry {
    pub iteration: usize,
    pub outer: usize,
    pub total: f64,
    pub rayleigh: f64,
    pub measure_penalty: f64,
    pub segregation_penalty: f64,
    pub mu: f64,
}

#[derive(Clone, Debug)]
pub struct SolverState {
    pub phases: PhaseVector,
    pub breakdown: EnergyBreakdown,
    pub outer: usize,
    pub iterations: usize,
    pub energy_history: Vec<HistoryEntry>,
    pub mu: f64,
    pub beta: f64,
    pub eps_measure: f64,
    /// Last accepted step length.
    pub step: f64,
    pub converged: bool,
}

impl SolverState {
    pub fn new(
        grid: &DomainGrid,
        phases: PhaseVector,
        mu: f64,
        beta: f64,
        eps_measure: f64,
        step: f64,
    ) -> Result<Self> {
        let breakdown = penalized_energy(grid, &phases, mu, beta, eps_measure)?;
        Ok(SolverState {
            phases,
            breakdown,
            outer: 0,
            iterations: 0,
            energy_history: Vec::new(),
            mu,
            beta,
            eps_measure,
            step,
            converged: false,
        })
    }

    fn record(&mut self) {
        let b = &self.breakdown;
        self.energy_history.push(HistoryEntry {
            iteration: self.iterations,
            outer: self.outer,
            total: b.total,
            rayleigh: b.rayleigh_sum(),
            measure_penalty: b.measure_penalty,
            segregation_penalty: b.segregation_penalty,
            mu: self.mu,
        });
    }
}

/// Draws `k` distinct seed cells from `seed` and builds the initial phases.
pub fn initialize_phases(grid: &DomainGrid, k: usize, a: f64, seed: u64) -> Result<PhaseVector> {
    let n = grid.interior_count();
    if k < 2 {
        return Err(Error::InvalidArgument(format!("need k >= 2, got {k}")));
    }
    if k > n {
        return Err(Error::InvalidArgument(format!("k = {k} exceeds {n} interior cells")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let seeds = sample(&mut rng, n, k).into_vec();
    initialize_from_seeds(grid, &seeds, a)
}

/// Nearest-seed Voronoi cells, each clipped to a common radius so that the
/// total support is about `a`; every phase is a normalized quadratic bump.
pub fn initialize_from_seeds(grid: &DomainGrid, seeds: &[usize], a: f64) -> Result<PhaseVector> {
    let n = grid.interior_count();
    let k = seeds.len();
    if k < 2 || seeds.iter().any(|&s| s >= n) {
        return Err(Error::InvalidArgument("need at least two valid seed cells".into()));
    }
    let idx: Vec<[usize; 3]> = (0..n).map(|p| grid.multi_index(grid.cells()[p])).collect();
    // Squared distances in lattice units are exact integers.
    let dist2 =
        |p: usize, s: usize| -> i64 { (0..grid.ndim()).map(|d| (idx[p][d] as i64 - idx[s][d] as i64).pow(2)).sum() };
    let mut owner = vec![0usize; n];
    let mut best = vec![i64::MAX; n];
    for p in 0..n {
        for (i, &s) in seeds.iter().enumerate() {
            let d = dist2(p, s);
            if d < best[p] {
                best[p] = d;
                owner[p] = i;
            }
        }
    }
    let target = ((a / grid.cell_volume()).floor() as usize).clamp(k, n);
    let mut sorted = best.clone();
    sorted.sort_unstable();
    // Largest radius whose closed ball count stays within the budget.
    let cut = if target == n || sorted[target] > sorted[target - 1] {
        sorted[target - 1]
    } else {
        let below = sorted.partition_point(|&d| d < sorted[target - 1]);
        if below >= k {
            sorted[below - 1]
        } else {
            sorted[target - 1]
        }
    };
    let height = (cut + 1) as f64;
    let mut fields = vec![grid.zeros(); k];
    for p in 0..n {
        if best[p] <= cut {
            fields[owner[p]].0[p] = height - best[p] as f64;
        }
    }
    for (i, f) in fields.iter_mut().enumerate() {
        let nrm = grid.norm(f);
        if nrm == 0.0 {
            return Err(Error::PhaseCollapse(i));
        }
        *f = f.scaled(1.0 / nrm);
    }
    PhaseVector::new(fields, a)
}

/// Positive part, then (hard mode) keep only the largest phase per cell with
/// ties going to the lowest index, then rescale every phase to unit norm.
pub fn project_constraints(grid: &DomainGrid, phases: &PhaseVector, mode: SegregationMode) -> Result<PhaseVector> {
    let mut fields: Vec<ScalarField> = phases.fields.iter().map(|f| f.positive_part()).collect();
    if mode == SegregationMode::Hard {
        let n = fields[0].len();
        for p in 0..n {
            let mut win = 0;
            for i in 1..fields.len() {
                if fields[i].0[p] > fields[win].0[p] {
                    win = i;
                }
            }
            for (i, f) in fields.iter_mut().enumerate() {
                if i != win {
                    f.0[p] = 0.0;
                }
            }
        }
    }
    for (i, f) in fields.iter_mut().enumerate() {
        let nrm = grid.norm(f);
        if nrm == 0.0 {
            return Err(Error::PhaseCollapse(i));
        }
        let inv = 1.0 / nrm;
        f.0.iter_mut().for_each(|v| *v *= inv);
    }
    PhaseVector::new(fields, phases.a)
}

/// Proximal step for `μ [h^N #supp - a]^+` with the diagonal of the
/// preconditioner as metric: while the exact support exceeds the budget,
/// cells below the prox threshold are zeroed in increasing order of value.
/// Cells of equal value are removed together.
pub fn measure_prox(
    grid: &DomainGrid,
    phases: &PhaseVector,
    mu: f64,
    t: f64,
    mode: SegregationMode,
) -> Result<PhaseVector> {
    let vol = grid.cell_volume();
    // Cell budget; the small allowance keeps an exact count of cells from rounding down.
    let budget = (phases.a / vol * (1.0 + 1e-12)).floor() as usize;
    let count: usize = phases.fields.iter().map(|f| f.0.iter().filter(|v| **v > 0.0).count()).sum();
    if mu == 0.0 || count <= budget {
        return Ok(phases.clone());
    }
    let h2 = grid.spacing() * grid.spacing();
    let cut2 = t * mu * h2 / (2.0 * grid.ndim() as f64);
    let mut small: Vec<(f64, usize, usize)> = Vec::new();
    for (i, f) in phases.fields.iter().enumerate() {
        for (p, v) in f.0.iter().enumerate() {
            if *v > 0.0 && v * v < cut2 {
                small.push((*v, i, p));
            }
        }
    }
    if small.is_empty() {
        return Ok(phases.clone());
    }
    small.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut fields = phases.fields.clone();
    let mut remaining = count - budget;
    let mut start = 0;
    while remaining > 0 && start < small.len() {
        let value = small[start].0;
        let mut end = start;
        while end < small.len() && small[end].0 == value {
            let (_, i, p) = small[end];
            fields[i].0[p] = 0.0;
            end += 1;
        }
        remaining = remaining.saturating_sub(end - start);
        start = end;
    }
    project_constraints(grid, &PhaseVector { fields, a: phases.a }, mode)
}

/// Diagonally scaled descent direction for every phase.
fn descent_directions(grid: &DomainGrid, state: &SolverState) -> Vec<Vec<f64>> {
    let st = grid.stencil();
    let n = st.len();
    let k = state.phases.k();
    let eps2 = state.eps_measure * state.eps_measure;
    let active = state.breakdown.measure_excess > 0.0;
    let mut dirs = Vec::with_capacity(k);
    let mut au = vec![0.0; n];
    for i in 0..k {
        let u = &state.phases.fields[i].0;
        let m = grid.cell_volume() * st.dot(u, u);
        let q = state.breakdown.dirichlet[i];
        st.apply(u, &mut au);
        let base = 2.0 * st.ndim as f64 * st.inv_h2;
        let mut w = vec![0.0; n];
        for p in 0..n {
            let mut others = 0.0;
            if state.beta > 0.0 {
                for (j, f) in state.phases.fields.iter().enumerate() {
                    if j != i {
                        others += f.0[p] * f.0[p];
                    }
                }
            }
            let rho_prime = if u[p] * u[p] < eps2 { 1.0 / eps2 } else { 0.0 };
            let pen = if active { state.mu * rho_prime } else { 0.0 };
            let curvature = pen + state.beta * others;
            let g = 2.0 * (au[p] - q * u[p]) / m + 2.0 * u[p] * curvature;
            w[p] = -0.5 * m * g / (base + m * curvature);
        }
        dirs.push(w);
    }
    dirs
}

/// One backtracking step on the smoothed functional followed by projection.
pub fn descent_step(grid: &DomainGrid, state: &SolverState, config: &SolverConfig) -> Result<SolverState> {
    let dirs = descent_directions(grid, state);
    let current = state.breakdown.total;
    let mut t = (2.0 * state.step).min(config.step);
    let mut last: Option<(PhaseVector, EnergyBreakdown, f64)> = None;
    for _ in 0..=MAX_HALVINGS {
        let trial_fields: Vec<ScalarField> = state
            .phases
            .fields
            .iter()
            .zip(&dirs)
            .map(|(f, d)| ScalarField(f.0.iter().zip(d).map(|(u, v)| u + t * v).collect()))
            .collect();
        let trial = PhaseVector { fields: trial_fields, a: state.phases.a };
        match project_constraints(grid, &trial, config.segregation)
            .and_then(|p| measure_prox(grid, &p, state.mu, t, config.segregation))
        {
            Ok(projected) => {
                let b = penalized_energy(grid, &projected, state.mu, state.beta, state.eps_measure)?;
                if b.total <= current {
                    return Ok(accept(state, projected, b, t));
                }
                last = Some((projected, b, t));
            }
            Err(Error::PhaseCollapse(_)) => {}
            Err(e) => return Err(e),
        }
        t *= 0.5;
    }
    match last {
        Some((p, b, t)) if b.total <= current + config.tol_energy * current.abs() => Ok(accept(state, p, b, t)),
        _ => Err(Error::Stalled(MAX_HALVINGS)),
    }
}

fn accept(state: &SolverState, phases: PhaseVector, breakdown: EnergyBreakdown, t: f64) -> SolverState {
    let mut next = state.clone();
    next.phases = phases;
    next.breakdown = breakdown;
    next.iterations += 1;
    next.step = t;
    next.record();
    next
}

fn penalty_weight(grid: &DomainGrid, config: &SolverConfig, rayleigh_sum: f64) -> Result<f64> {
    match config.mu_fixed {
        Some(m) => Ok(m),
        None => Ok(config.mu_safety * mu_threshold(rayleigh_sum, grid.ndim(), config.a, config.k)?),
    }
}

/// Runs the continuation from a random initialization drawn from `config.seed`.
pub fn solve(grid: &DomainGrid, config: &SolverConfig) -> Result<(SolverState, PartitionResult)> {
    config.validate(grid)?;
    let init = initialize_phases(grid, config.k, config.a, config.seed)?;
    solve_from(grid, config, init)
}

/// Runs the continuation from the given phases.
pub fn solve_from(
    grid: &DomainGrid,
    config: &SolverConfig,
    init: PhaseVector,
) -> Result<(SolverState, PartitionResult)> {
    config.validate(grid)?;
    let phases = project_constraints(grid, &init, config.segregation)?;
    let (beta, eps) = config.round_params(0);
    let probe = penalized_energy(grid, &phases, 0.0, beta, eps)?;
    let mu = penalty_weight(grid, config, probe.rayleigh_sum())?;
    let mut state = SolverState::new(grid, phases, mu, beta, eps, config.step)?;
    state.record();

    for outer in 0..config.max_outer {
        let (beta, eps) = config.round_params(outer);
        state.outer = outer;
        state.beta = beta;
        state.eps_measure = eps;
        state.mu = penalty_weight(grid, config, state.breakdown.rayleigh_sum())?;
        state.breakdown = penalized_energy(grid, &state.phases, state.mu, beta, eps)?;
        state.step = config.step;
        state.record();
        let round_start = state.breakdown.total;
        for _ in 0..config.max_inner {
            let before = state.breakdown.total;
            state = descent_step(grid, &state, config)?;
            log::trace!(
                "step {}: total {:.9} rayleigh {:.9} t {:.3e}",
                state.iterations,
                state.breakdown.total,
                state.breakdown.rayleigh_sum(),
                state.step
            );
            if before - state.breakdown.total <= config.tol_energy * before.abs() {
                break;
            }
        }
        let change = (round_start - state.breakdown.total).abs() / state.breakdown.total.abs().max(f64::MIN_POSITIVE);
        log::debug!(
            "round {outer}: total {:.6} rayleigh {:.6} excess {:.3e} mu {:.3e} eps {:.3e} iters {}",
            state.breakdown.total,
            state.breakdown.rayleigh_sum(),
            state.breakdown.measure_excess,
            state.mu,
            eps,
            state.iterations
        );
        if outer + 1 >= config.rounds() && change <= config.tol_energy {
            state.converged = true;
            break;
        }
    }
    if !state.converged {
        log::warn!("outer iteration cap reached; returning the last state");
    }

    if config.segregation == SegregationMode::Soft {
        state.phases = project_constraints(grid, &state.phases, SegregationMode::Hard)?;
        state.breakdown = penalized_energy(grid, &state.phases, state.mu, state.beta, state.eps_measure)?;
        state.record();
    }
    if config.polish {
        polish(grid, &mut state, config)?;
    }
    let result = extract_partition(grid, &state.phases, config.eps_rel, config.eig_tol)?;
    Ok((state, result))
}

/// Replaces each phase by the first eigenfunction of its thresholded support
/// when that does not raise the Rayleigh sum. Supports can only shrink.
fn polish(grid: &DomainGrid, state: &mut SolverState, config: &SolverConfig) -> Result<()> {
    let mut fields = Vec::with_capacity(state.phases.k());
    for u in &state.phases.fields {
        let mask = support_mask(u, config.eps_rel);
        fields.push(smallest_dirichlet_eig(grid, &mask, config.eig_tol)?.eigenfunction);
    }
    let candidate = PhaseVector::new(fields, state.phases.a)?;
    let b = penalized_energy(grid, &candidate, state.mu, state.beta, state.eps_measure)?;
    let current = state.breakdown.rayleigh_sum();
    if b.rayleigh_sum() <= current * (1.0 + config.tol_energy) {
        state.phases = candidate;
        state.breakdown = b;
        state.iterations += 1;
        state.record();
    } else {
        log::info!("support polish rejected: {:.6} > {:.6}", b.rayleigh_sum(), current);
    }
    Ok(())
}

/// Best of `config.restarts` seeds starting at `config.seed`, by objective.
pub fn solve_best(grid: &DomainGrid, config: &SolverConfig) -> Result<(u64, SolverState, PartitionResult)> {
    let mut best: Option<(u64, SolverState, PartitionResult)> = None;
    for r in 0..config.restarts as u64 {
        let mut c = config.clone();
        c.seed = config.seed + r;
        let (s, p) = solve(grid, &c)?;
        if best.as_ref().map_or(true, |b| p.objective < b.2.objective) {
            best = Some((c.seed, s, p));
        }
    }
    Ok(best.expect("restarts >= 1"))
}
