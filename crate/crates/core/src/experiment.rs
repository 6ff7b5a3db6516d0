//! End-to-end runs: restarts, artifacts and the JSON manifest.

use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::Serialize;

use crate::config::ExperimentConfig;
use crate::energy::{EnergyBreakdown, PhaseVector};
use crate::error::{Error, Result};
use crate::grid::{DomainGrid, DomainSpec, NONE};
use crate::io;
use crate::optimizer::{solve, SolverConfig, SolverState};
use crate::oracles::{equal_ball_prediction, BallPrediction};
use crate::partition::{
    audit_partition, axial_symmetry_defect, cjk_diagnostic, extract_partition, roundness, AuditReport, AuditTolerances,
    PartitionResult,
};

#[derive(Clone, Copy, Debug, Default)]
pub struct RunOptions {
    /// Run restarts on separate threads. Outputs are identical to a sequential run.
    pub parallel: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct GridSummary {
    pub dims: Vec<usize>,
    pub spacing: f64,
    pub interior_cells: usize,
    pub measure: f64,
}

impl GridSummary {
    fn of(grid: &DomainGrid) -> Self {
        GridSummary {
            dims: grid.dims().to_vec(),
            spacing: grid.spacing(),
            interior_cells: grid.interior_count(),
            measure: grid.measure(),
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct RestartSummary {
    pub seed: u64,
    pub objective: Option<f64>,
    pub status: String,
}

#[derive(Clone, Debug, Serialize)]
pub struct SolverSummary {
    pub iterations: usize,
    pub outer_rounds: usize,
    pub converged: bool,
    pub mu: f64,
    pub beta: f64,
    pub eps_measure: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct OracleComparison {
    pub prediction: BallPrediction,
    /// `(objective - prediction) / prediction`.
    pub relative_gap: f64,
    /// Whether `k` balls of twice the predicted radius fit disjointly in the domain.
    pub balls_fit: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct CjkSummary {
    pub phases: [usize; 2],
    pub center: [f64; 3],
    pub radii: Vec<f64>,
    pub values: Vec<f64>,
}

#[derive(Clone, Debug, Serialize)]
pub struct RunManifest {
    pub config: ExperimentConfig,
    pub grid: GridSummary,
    pub best_seed: u64,
    pub restarts: Vec<RestartSummary>,
    pub solver: SolverSummary,
    pub breakdown: EnergyBreakdown,
    pub partition: PartitionResult,
    pub roundness: Vec<f64>,
    pub audit: AuditReport,
    pub oracle: Option<OracleComparison>,
    /// Per phase, relative to the reflection across the central x plane.
    pub axial_symmetry_defect: Vec<f64>,
    pub cjk: Option<CjkSummary>,
}

#[derive(Clone, Debug, Serialize)]
pub struct AuditManifest {
    pub audit: AuditReport,
    pub partition: PartitionResult,
}

#[derive(Clone, Debug, Serialize)]
pub struct Timings {
    pub total_seconds: f64,
    pub per_seed_seconds: Vec<(u64, f64)>,
}

struct SeedRun {
    seed: u64,
    seconds: f64,
    outcome: Result<(SolverState, PartitionResult)>,
}

fn run_seed(grid: &DomainGrid, solver: &SolverConfig, seed: u64) -> SeedRun {
    let mut c = solver.clone();
    c.seed = seed;
    let start = Instant::now();
    let outcome = solve(grid, &c);
    SeedRun { seed, seconds: start.elapsed().as_secs_f64(), outcome }
}

/// Solves every restart, writes artifacts to `out_dir` and returns the manifest
/// of the best run. With more than one restart each seed also gets its own
/// `seed_<s>` subdirectory.
pub fn run_experiment(config: &ExperimentConfig, out_dir: &Path, options: RunOptions) -> Result<RunManifest> {
    let start = Instant::now();
    let grid = config.grid()?;
    let solver = &config.solver;
    fs::create_dir_all(out_dir)?;
    let seeds: Vec<u64> = (0..solver.restarts as u64).map(|r| solver.seed + r).collect();
    let runs: Vec<SeedRun> = if options.parallel && seeds.len() > 1 {
        std::thread::scope(|s| {
            let handles: Vec<_> = seeds
                .iter()
                .map(|&seed| {
                    s.spawn({
                        let grid = &grid;
                        move || run_seed(grid, solver, seed)
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().expect("solver thread panicked")).collect()
        })
    } else {
        seeds.iter().map(|&seed| run_seed(&grid, solver, seed)).collect()
    };

    let mut summaries = Vec::with_capacity(runs.len());
    let mut best: Option<usize> = None;
    for (i, run) in runs.iter().enumerate() {
        let (objective, status) = match &run.outcome {
            Ok((_, p)) => (Some(p.objective), "ok".to_string()),
            Err(e) => {
                log::warn!("seed {} failed: {e}", run.seed);
                (None, e.to_string())
            }
        };
        if let Some(obj) = objective {
            let better = best.map_or(true, |b| match &runs[b].outcome {
                Ok((_, p)) => obj < p.objective,
                Err(_) => true,
            });
            if better {
                best = Some(i);
            }
        }
        summaries.push(RestartSummary { seed: run.seed, objective, status });
    }
    let mut csv = String::from("seed,objective,status\n");
    for s in &summaries {
        let obj = s.objective.map_or(String::new(), |o| format!("{o:e}"));
        csv.push_str(&format!("{},{},{}\n", s.seed, obj, s.status.replace(',', ";")));
    }
    fs::write(out_dir.join("restarts.csv"), csv)?;

    if runs.len() > 1 {
        for run in &runs {
            if let Ok((state, partition)) = &run.outcome {
                let dir = out_dir.join(format!("seed_{}", run.seed));
                fs::create_dir_all(&dir)?;
                write_artifacts(&dir, &grid, state, partition)?;
            }
        }
    }
    let best = match best {
        Some(b) => b,
        None => {
            let first = runs.into_iter().next().expect("restarts >= 1");
            return Err(first.outcome.err().expect("failed run"));
        }
    };
    let run = &runs[best];
    let (state, partition) = run.outcome.as_ref().expect("best run succeeded");
    write_artifacts(out_dir, &grid, state, partition)?;

    let audit = audit_partition(&grid, partition, &state.phases, solver.a, &AuditTolerances::default());
    let manifest = RunManifest {
        config: config.clone(),
        grid: GridSummary::of(&grid),
        best_seed: run.seed,
        restarts: summaries,
        solver: SolverSummary {
            iterations: state.iterations,
            outer_rounds: state.outer + 1,
            converged: state.converged,
            mu: state.mu,
            beta: state.beta,
            eps_measure: state.eps_measure,
        },
        breakdown: state.breakdown.clone(),
        roundness: partition.supports.iter().map(|s| roundness(&grid, s)).collect(),
        audit,
        oracle: oracle_comparison(&config.domain, &grid, solver.k, solver.a, partition.objective)?,
        axial_symmetry_defect: state.phases.fields.iter().map(|u| axial_symmetry_defect(&grid, u)).collect(),
        cjk: cjk_summary(&grid, partition)?,
        partition: partition.clone(),
    };
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    let timings = Timings {
        total_seconds: start.elapsed().as_secs_f64(),
        per_seed_seconds: runs.iter().map(|r| (r.seed, r.seconds)).collect(),
    };
    write_json(&out_dir.join("timings.json"), &timings)?;
    Ok(manifest)
}

fn write_artifacts(dir: &Path, grid: &DomainGrid, state: &SolverState, partition: &PartitionResult) -> Result<()> {
    for (i, u) in state.phases.fields.iter().enumerate() {
        io::write_field(&dir.join(phase_file(i)), grid, u)?;
    }
    io::write_raster(&dir.join("supports.ppm"), grid, &partition.supports)?;
    io::write_history(&dir.join("history.csv"), &state.energy_history)
}

pub fn phase_file(i: usize) -> String {
    format!("phase_{i}.txt")
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value).map_err(|e| Error::Format(e.to_string()))?;
    fs::write(path, text + "\n")?;
    Ok(())
}

/// Audits phase dumps `phase_0.txt, phase_1.txt, ...` found in `dump_dir` and
/// writes a manifest with the audit section only to `out_dir`.
pub fn audit_only(config: &ExperimentConfig, dump_dir: &Path, out_dir: &Path) -> Result<AuditManifest> {
    let grid = config.grid()?;
    let mut fields = Vec::new();
    loop {
        let path: PathBuf = dump_dir.join(phase_file(fields.len()));
        if !path.exists() {
            break;
        }
        fields.push(io::read_field(&path, &grid)?);
    }
    if fields.len() < 2 {
        return Err(Error::InvalidArgument(format!(
            "{} holds {} phase dumps, need at least 2",
            dump_dir.display(),
            fields.len()
        )));
    }
    let phases = PhaseVector::new(fields, config.solver.a)?;
    let partition = extract_partition(&grid, &phases, config.solver.eps_rel, config.solver.eig_tol)?;
    let audit = audit_partition(&grid, &partition, &phases, config.solver.a, &AuditTolerances::default());
    let manifest = AuditManifest { audit, partition };
    fs::create_dir_all(out_dir)?;
    write_json(&out_dir.join("manifest.json"), &manifest)?;
    Ok(manifest)
}

/// Equal-ball comparison for analytic domains.
pub fn oracle_comparison(
    spec: &DomainSpec,
    grid: &DomainGrid,
    k: usize,
    a: f64,
    objective: f64,
) -> Result<Option<OracleComparison>> {
    let fit_radius = |r: f64| 2.0 * r;
    let balls_fit = match spec {
        DomainSpec::Rectangle(l) => {
            let p = equal_ball_prediction(l.len(), k, a)?;
            balls_fit_box(l, k, fit_radius(p.radius))
        }
        DomainSpec::Ball { radius, .. } => {
            let p = equal_ball_prediction(grid.ndim(), k, a)?;
            balls_fit_ball(*radius, k, fit_radius(p.radius))
        }
        DomainSpec::MaskFile(_) => return Ok(None),
    };
    let prediction = equal_ball_prediction(grid.ndim(), k, a)?;
    let relative_gap = (objective - prediction.total_objective) / prediction.total_objective;
    Ok(Some(OracleComparison { prediction, relative_gap, balls_fit }))
}

/// Balls of radius `r` on a square lattice inside the box, or two balls in opposite corners.
pub fn balls_fit_box(lengths: &[f64], k: usize, r: f64) -> bool {
    if lengths.iter().any(|l| *l < 2.0 * r) {
        return false;
    }
    let per_axis: usize = lengths.iter().map(|l| ((l - 2.0 * r) / (2.0 * r)).floor() as usize + 1).product();
    let diagonal = lengths.iter().map(|l| (l - 2.0 * r).powi(2)).sum::<f64>().sqrt();
    per_axis >= k || (k == 2 && diagonal >= 2.0 * r)
}

/// Balls of radius `r` with centers evenly spaced on a circle inside a ball of radius `big`.
pub fn balls_fit_ball(big: f64, k: usize, r: f64) -> bool {
    let ring = big - r;
    if ring < 0.0 {
        return false;
    }
    k == 1 || 2.0 * ring * (std::f64::consts::PI / k as f64).sin() >= 2.0 * r
}

/// Monotonicity diagnostic for the first two phases, centered on a cell of
/// phase 0 touching phase 1, or else on the cell closest to the midpoint of
/// their centroids.
fn cjk_summary(grid: &DomainGrid, partition: &PartitionResult) -> Result<Option<CjkSummary>> {
    if partition.eigenfunctions.len() < 2 {
        return Ok(None);
    }
    let center = match interface_cell(grid, &partition.supports[0], &partition.supports[1]) {
        Some(c) => c,
        None => midpoint_cell(grid, &partition.supports[0], &partition.supports[1]),
    };
    let h = grid.spacing();
    let extent = grid.dims().iter().map(|n| (*n as f64 - 1.0) * h).fold(f64::INFINITY, f64::min);
    let radii: Vec<f64> = [2.0, 4.0, 8.0, 16.0].iter().map(|m| m * h).filter(|r| *r <= 0.5 * extent).collect();
    if radii.is_empty() {
        return Ok(None);
    }
    let values = cjk_diagnostic(grid, &partition.eigenfunctions[0], &partition.eigenfunctions[1], center, &radii)?;
    Ok(Some(CjkSummary { phases: [0, 1], center: grid.position(center), radii, values }))
}

/// First cell of `a` with a face neighbor in `b`.
pub fn interface_cell(grid: &DomainGrid, a: &[bool], b: &[bool]) -> Option<usize> {
    let st = grid.stencil();
    (0..st.len()).find(|&p| a[p] && st.nbrs[p][..2 * st.ndim].iter().any(|&q| q != NONE && b[q as usize]))
}

fn midpoint_cell(grid: &DomainGrid, a: &[bool], b: &[bool]) -> usize {
    let centroid = |s: &[bool]| {
        let mut c = [0.0; 3];
        let mut n = 0.0;
        for p in (0..s.len()).filter(|&p| s[p]) {
            let x = grid.position(p);
            (0..3).for_each(|d| c[d] += x[d]);
            n += 1.0;
        }
        c.map(|v| v / n)
    };
    let (c0, c1) = (centroid(a), centroid(b));
    let mid = [0, 1, 2].map(|d| 0.5 * (c0[d] + c1[d]));
    let dist = |i: usize| {
        let x = grid.position(i);
        (0..3).map(|k| (x[k] - mid[k]).powi(2)).sum::<f64>()
    };
    (0..grid.interior_count()).min_by(|&p, &q| dist(p).total_cmp(&dist(q))).expect("nonempty grid")
}
