//! Experiment orchestration: trajectories, replica parallelism, errors
//! against references, slope fits and CSV output.

mod config;

pub use config::{parse_model, BinSpec, ConfigError, ExperimentSpec};

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use thiserror::Error;

use crate::dynamics::{DynamicsError, Integrator, Method, PhaseState};
use crate::model::{init_hexagon, Potential, PotentialModel};
use crate::reference::{self, RdfReferenceParams, ReferenceDistribution, ReferenceError};
use crate::rng::NoiseStream;
use crate::stats::{self, Histogram, LineFit, StatsError};
use crate::theory::{self, CorrectionMethod, TheoryError};

/// CSV header shared by every study table.
pub const CSV_HEADER: &str = "model,method,dt,gamma,kBT,t_total,replicas,seed,error,variance,diverged,steps,wall_s";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Theory(#[from] TheoryError),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error("cluster studies need `h_ref` for the simulated reference")]
    MissingReferenceStep,
    #[error("{0}")]
    Unsupported(String),
}

/// Worker count: explicit request, else `SAMPLE_WORKERS`, else all cores.
pub fn worker_count(requested: Option<usize>) -> usize {
    requested
        .or_else(|| std::env::var("SAMPLE_WORKERS").ok()?.trim().parse().ok())
        .filter(|&w| w > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Runs `f` on a dedicated pool of `workers` threads.
pub fn with_workers<T: Send>(workers: usize, f: impl FnOnce() -> T + Send) -> T {
    match rayon::ThreadPoolBuilder::new().num_threads(workers.max(1)).build() {
        Ok(pool) => pool.install(f),
        Err(_) => f(),
    }
}

/// Seed for reference runs, distinct from every study stream.
pub fn reference_seed(seed: u64) -> u64 {
    // splitmix64 finaliser of a tagged seed
    let mut z = seed ^ 0x7265_6665_7265_6e63;
    z = z.wrapping_add(0x9e37_79b9_7f4a_7c15);
    z = (z ^ (z >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    z ^ (z >> 31)
}

/// One (method, δt, γ) point of a study; replicas differ only in stream id.
#[derive(Debug, Clone, PartialEq)]
pub struct CellSpec {
    pub model: PotentialModel,
    pub method: Method,
    pub dt: f64,
    pub gamma: f64,
    pub kbt: f64,
    pub t_total: f64,
    pub burn_in_fraction: f64,
    pub stride: u64,
    pub edges: Vec<f64>,
    pub seed: u64,
}

impl CellSpec {
    pub fn steps(&self) -> u64 {
        (self.t_total / self.dt).round() as u64
    }

    pub fn burn_in_steps(&self) -> u64 {
        (self.burn_in_fraction * self.steps() as f64).round() as u64
    }

    /// Configurations binned by a full trajectory.
    pub fn binned_samples(&self) -> u64 {
        (self.steps() - self.burn_in_steps()) / self.stride
    }

    pub fn validate(&self) -> Result<(), DynamicsError> {
        let bad = |name, value, reason| Err(DynamicsError::InvalidParameter { name, value, reason });
        if !(self.dt > 0.0 && self.t_total > 0.0) {
            return bad("t_total", self.t_total, "needs positive time and stepsize");
        }
        if self.steps() == 0 {
            return bad("t_total", self.t_total, "shorter than one step");
        }
        if !(0.0..1.0).contains(&self.burn_in_fraction) || self.burn_in_steps() >= self.steps() {
            return bad("burn_in_fraction", self.burn_in_fraction, "must leave steps to bin");
        }
        if self.stride == 0 {
            return bad("stride", 0.0, "must be at least 1");
        }
        if Histogram::new(self.edges.clone()).is_err() {
            return bad("edges", f64::NAN, "must be finite and increasing");
        }
        Ok(())
    }

    fn initial_state(&self, stream: &mut NoiseStream) -> PhaseState {
        let x = if self.model.is_cluster() {
            init_hexagon()
        } else {
            vec![0.0; self.model.dimension()]
        };
        PhaseState::canonical(x, self.kbt, stream)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryOutcome {
    pub histogram: Histogram,
    /// Histogram copies taken when the binned-sample count reached each checkpoint.
    pub snapshots: Vec<Histogram>,
    pub steps_completed: u64,
    pub diverged: bool,
    pub wall_s: f64,
}

/// Integrates one replica; instability is reported in the outcome, not as an error.
pub fn run_trajectory(cell: &CellSpec, replica: u64) -> Result<TrajectoryOutcome, DynamicsError> {
    run_trajectory_with_checkpoints(cell, replica, &[])
}

pub fn run_trajectory_with_checkpoints(
    cell: &CellSpec,
    replica: u64,
    checkpoints: &[u64],
) -> Result<TrajectoryOutcome, DynamicsError> {
    cell.validate()?;
    let start = Instant::now();
    let mut stream = NoiseStream::new(cell.seed, replica);
    let mut state = cell.initial_state(&mut stream);
    let mut integrator = Integrator::new(
        cell.method.clone(),
        cell.dt,
        cell.gamma,
        cell.kbt,
        state.dimension(),
    )?;
    let mut histogram = Histogram::new(cell.edges.clone()).expect("validated edges");
    let mut snapshots = Vec::with_capacity(checkpoints.len());
    let mut pending = checkpoints.iter().peekable();
    let mut binned = 0u64;
    let take_snapshots = |binned: u64,
                          h: &Histogram,
                          snaps: &mut Vec<Histogram>,
                          pending: &mut std::iter::Peekable<std::slice::Iter<'_, u64>>| {
        while pending.peek().is_some_and(|&&c| c == binned) {
            snaps.push(h.clone());
            pending.next();
        }
    };
    take_snapshots(0, &histogram, &mut snapshots, &mut pending);

    let steps = cell.steps();
    let burn = cell.burn_in_steps();
    let cluster = cell.model.is_cluster();
    let mut diverged = false;
    let mut completed = 0;
    for n in 1..=steps {
        match integrator.step(&mut state, &cell.model, &mut stream) {
            Ok(()) => {}
            Err(DynamicsError::Diverged { .. }) => {
                diverged = true;
                break;
            }
            Err(e) => return Err(e),
        }
        completed = n;
        if n > burn && (n - burn).is_multiple_of(cell.stride) {
            if cluster {
                stats::rdf_accumulate(&mut histogram, &state.x);
            } else {
                histogram.add(state.x[0]);
            }
            binned += 1;
            take_snapshots(binned, &histogram, &mut snapshots, &mut pending);
        }
    }
    Ok(TrajectoryOutcome {
        histogram,
        snapshots,
        steps_completed: completed,
        diverged,
        wall_s: start.elapsed().as_secs_f64(),
    })
}

/// Replicas `0..replicas` on `workers` threads, returned in replica order.
pub fn run_replicas(
    cell: &CellSpec,
    replicas: u64,
    checkpoints: &[u64],
    workers: usize,
) -> Result<Vec<TrajectoryOutcome>, DynamicsError> {
    with_workers(workers, || {
        (0..replicas)
            .into_par_iter()
            .map(|r| run_trajectory_with_checkpoints(cell, r, checkpoints))
            .collect()
    })
}

impl ExperimentSpec {
    /// Cells in output order: method, then δt ascending, then γ ascending.
    pub fn cells(&self) -> Vec<CellSpec> {
        let mut dts = self.stepsizes.clone();
        dts.sort_by(f64::total_cmp);
        dts.dedup();
        let mut gammas = self.gammas.clone();
        gammas.sort_by(f64::total_cmp);
        gammas.dedup();
        let edges = self.edges();
        let mut out = Vec::new();
        for method in &self.methods {
            for &dt in &dts {
                for &gamma in &gammas {
                    out.push(CellSpec {
                        model: self.model,
                        method: method.clone(),
                        dt,
                        gamma,
                        kbt: self.kbt,
                        t_total: self.t_total,
                        burn_in_fraction: self.burn_in_fraction,
                        stride: self.stride,
                        edges: edges.clone(),
                        seed: self.seed,
                    });
                }
            }
        }
        out
    }
}

/// The reference a study is scored against: quadrature for the oscillator,
/// a cached BAOAB run at `h_ref` for clusters.
pub fn build_reference(
    spec: &ExperimentSpec,
    cache_dir: Option<&Path>,
    workers: usize,
) -> Result<ReferenceDistribution, HarnessError> {
    let edges = spec.edges();
    if !spec.model.is_cluster() {
        return Ok(reference::quadrature_bin_probabilities(
            &spec.model,
            1.0 / spec.kbt,
            &edges,
            reference::DEFAULT_HALF_WIDTH,
        )?);
    }
    let h_ref = spec.h_ref.ok_or(HarnessError::MissingReferenceStep)?;
    let params = RdfReferenceParams {
        model: spec.model,
        kbt: spec.kbt,
        gamma: spec.gammas[0],
        h_ref,
        t_total: spec.t_total,
        replicas: spec.reference_replicas.unwrap_or(spec.replicas),
        seed: reference_seed(spec.seed),
        edges,
        burn_in_fraction: spec.burn_in_fraction,
        stride: spec.stride,
        smallest_study_stepsize: Some(spec.smallest_stepsize()),
    };
    Ok(match cache_dir {
        Some(dir) => reference::cached_reference_rdf(&params, dir, workers)?,
        None => reference::simulated_reference_rdf(&params, workers)?,
    })
}

/// One row of a study table.
#[derive(Debug, Clone, PartialEq)]
pub struct RunResult {
    pub model: String,
    pub method: Method,
    pub dt: f64,
    pub gamma: f64,
    pub kbt: f64,
    pub t_total: f64,
    pub replicas: u64,
    pub seed: u64,
    /// Absent when any replica diverged or nothing was binned.
    pub error: Option<f64>,
    /// Standard deviation of per-replica errors over `sqrt(replicas)`.
    pub error_stderr: Option<f64>,
    pub variance: Option<f64>,
    pub diverged: bool,
    /// Fewest steps completed by any replica.
    pub steps: u64,
    pub wall_s: f64,
    /// Binned samples per replica at a gamma-sweep checkpoint.
    pub samples: Option<u64>,
}

fn summarize(
    spec: &ExperimentSpec,
    cell: &CellSpec,
    histograms: &[&Histogram],
    reference: &ReferenceDistribution,
    diverged: bool,
    steps: u64,
    wall_s: f64,
    samples: Option<u64>,
) -> Result<RunResult, HarnessError> {
    let mut merged = Histogram::new(cell.edges.clone())?;
    for h in histograms {
        merged.merge(h)?;
    }
    let scored = !diverged && merged.total_samples() > 0;
    let error = if scored {
        Some(stats::l1_bin_error(&merged, &reference.probabilities)?)
    } else {
        None
    };
    let (variance, error_stderr) = if scored && histograms.len() >= 2 && histograms.iter().all(|h| h.total_samples() > 0) {
        let freqs: Vec<Vec<f64>> = histograms.iter().map(|h| h.frequencies()).collect();
        let errors = histograms
            .iter()
            .map(|h| stats::l1_bin_error(h, &reference.probabilities))
            .collect::<Result<Vec<_>, _>>()?;
        let n = errors.len() as f64;
        let mean = errors.iter().sum::<f64>() / n;
        let sd = (errors.iter().map(|e| (e - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        (Some(stats::ensemble_variance(&freqs)?), Some(sd / n.sqrt()))
    } else {
        (None, None)
    };
    Ok(RunResult {
        model: spec.model_name().to_string(),
        method: cell.method.clone(),
        dt: cell.dt,
        gamma: cell.gamma,
        kbt: cell.kbt,
        t_total: cell.t_total,
        replicas: spec.replicas,
        seed: spec.seed,
        error,
        error_stderr,
        variance,
        diverged,
        steps,
        wall_s,
        samples,
    })
}

/// Every cell × replica, run as one flat parallel batch.
fn run_all(
    spec: &ExperimentSpec,
    cells: &[CellSpec],
    checkpoints: &[u64],
    workers: usize,
) -> Result<Vec<Vec<TrajectoryOutcome>>, HarnessError> {
    let jobs: Vec<(usize, u64)> = (0..cells.len())
        .flat_map(|c| (0..spec.replicas).map(move |r| (c, r)))
        .collect();
    let outcomes: Vec<TrajectoryOutcome> = with_workers(workers, || {
        jobs.par_iter()
            .map(|&(c, r)| run_trajectory_with_checkpoints(&cells[c], r, checkpoints))
            .collect::<Result<Vec<_>, _>>()
    })?;
    let mut grouped: Vec<Vec<TrajectoryOutcome>> = cells.iter().map(|_| Vec::new()).collect();
    for ((c, _), o) in jobs.iter().zip(outcomes) {
        grouped[*c].push(o);
    }
    Ok(grouped)
}

/// A scored cell together with its replica-merged histogram.
#[derive(Debug, Clone, PartialEq)]
pub struct CellOutcome {
    pub row: RunResult,
    pub merged: Histogram,
}

/// Every cell of `spec`, scored against `reference`.
pub fn run_cells(
    spec: &ExperimentSpec,
    reference: &ReferenceDistribution,
    workers: usize,
) -> Result<Vec<CellOutcome>, HarnessError> {
    if reference.edges != spec.edges() {
        return Err(StatsError::EdgeMismatch.into());
    }
    let cells = spec.cells();
    let grouped = run_all(spec, &cells, &[], workers)?;
    cells
        .iter()
        .zip(&grouped)
        .map(|(cell, runs)| {
            let hs: Vec<&Histogram> = runs.iter().map(|o| &o.histogram).collect();
            let diverged = runs.iter().any(|o| o.diverged);
            let steps = runs.iter().map(|o| o.steps_completed).min().unwrap_or(0);
            let wall = runs.iter().map(|o| o.wall_s).sum();
            let row = summarize(spec, cell, &hs, reference, diverged, steps, wall, None)?;
            let mut merged = Histogram::new(cell.edges.clone())?;
            for h in hs {
                merged.merge(h)?;
            }
            Ok(CellOutcome { row, merged })
        })
        .collect()
}

/// Per-cell results without slope fits.
pub fn run_study(
    spec: &ExperimentSpec,
    reference: &ReferenceDistribution,
    workers: usize,
) -> Result<Vec<RunResult>, HarnessError> {
    Ok(run_cells(spec, reference, workers)?.into_iter().map(|c| c.row).collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct SlopeFit {
    pub method: Method,
    pub gamma: f64,
    /// `None` when fewer than three stepsizes survived.
    pub fit: Option<LineFit>,
    pub used: Vec<f64>,
    /// Stepsizes left out because the cell diverged or had no error.
    pub skipped: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StudyResult {
    pub rows: Vec<RunResult>,
    pub slopes: Vec<SlopeFit>,
}

impl StudyResult {
    pub fn all_diverged(&self) -> bool {
        !self.rows.is_empty() && self.rows.iter().all(|r| r.diverged)
    }

    pub fn row(&self, method: &Method, dt: f64) -> Option<&RunResult> {
        self.rows.iter().find(|r| &r.method == method && r.dt == dt)
    }

    pub fn slope(&self, method: &Method) -> Option<f64> {
        self.slopes
            .iter()
            .find(|s| &s.method == method)
            .and_then(|s| s.fit.map(|f| f.slope))
    }
}

/// Log-log fits of error against stepsize per method and γ, skipping
/// diverged cells.
pub fn fit_slopes(rows: &[RunResult]) -> Vec<SlopeFit> {
    let mut keys: Vec<(Method, f64)> = Vec::new();
    for r in rows {
        if !keys.iter().any(|(m, g)| m == &r.method && *g == r.gamma) {
            keys.push((r.method.clone(), r.gamma));
        }
    }
    keys.into_iter()
        .map(|(method, gamma)| {
            let (mut used, mut errs, mut skipped) = (Vec::new(), Vec::new(), Vec::new());
            for r in rows.iter().filter(|r| r.method == method && r.gamma == gamma) {
                match r.error {
                    Some(e) if e > 0.0 => {
                        used.push(r.dt);
                        errs.push(e);
                    }
                    _ => skipped.push(r.dt),
                }
            }
            let fit = stats::fit_loglog_slope(&used, &errs).ok();
            SlopeFit {
                method,
                gamma,
                fit,
                used,
                skipped,
            }
        })
        .collect()
}

/// Errors and fitted orders for every method over the stepsize list.
pub fn convergence_study(
    spec: &ExperimentSpec,
    reference: &ReferenceDistribution,
    workers: usize,
) -> Result<StudyResult, HarnessError> {
    if spec.stepsizes.len() < 3 {
        return Err(ConfigError::Invalid {
            key: "stepsizes",
            message: "a convergence study needs at least three".into(),
        }
        .into());
    }
    let rows = run_study(spec, reference, workers)?;
    let slopes = fit_slopes(&rows);
    Ok(StudyResult { rows, slopes })
}

/// Error at each cumulative-sample checkpoint for every (method, γ) at one δt.
pub fn gamma_sweep(
    spec: &ExperimentSpec,
    reference: &ReferenceDistribution,
    workers: usize,
) -> Result<Vec<RunResult>, HarnessError> {
    if spec.stepsizes.len() != 1 {
        return Err(ConfigError::Invalid {
            key: "stepsizes",
            message: "a gamma sweep uses exactly one stepsize".into(),
        }
        .into());
    }
    if spec.checkpoints.is_empty() {
        return Err(ConfigError::Missing("checkpoints").into());
    }
    if reference.edges != spec.edges() {
        return Err(StatsError::EdgeMismatch.into());
    }
    let cells = spec.cells();
    let grouped = run_all(spec, &cells, &spec.checkpoints, workers)?;
    let mut rows = Vec::new();
    for (cell, runs) in cells.iter().zip(&grouped) {
        let diverged = runs.iter().any(|o| o.diverged);
        let steps = runs.iter().map(|o| o.steps_completed).min().unwrap_or(0);
        let wall = runs.iter().map(|o| o.wall_s).sum();
        for (k, &samples) in spec.checkpoints.iter().enumerate() {
            let reached = runs.iter().all(|o| o.snapshots.len() > k);
            let hs: Vec<&Histogram> = if reached {
                runs.iter().map(|o| &o.snapshots[k]).collect()
            } else {
                Vec::new()
            };
            let lost = diverged && !reached;
            rows.push(summarize(spec, cell, &hs, reference, lost, steps, wall, Some(samples))?);
        }
    }
    Ok(rows)
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or_else(|| "NA".to_string(), |x| x.to_string())
}

fn csv_line(r: &RunResult, out: &mut String) {
    let _ = write!(
        out,
        "{},{},{},{},{},{},{},{},{},{},{},{},{:.3}",
        r.model,
        r.method,
        r.dt,
        r.gamma,
        r.kbt,
        r.t_total,
        r.replicas,
        r.seed,
        fmt_opt(r.error),
        fmt_opt(r.variance),
        r.diverged,
        r.steps,
        r.wall_s,
    );
}

/// Study table with the fixed header, rows in the given order.
pub fn csv_string(results: &[RunResult]) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for r in results {
        csv_line(r, &mut out);
        out.push('\n');
    }
    out
}

/// Gamma-sweep grid: the study columns plus the checkpoint sample count.
pub fn sweep_csv_string(results: &[RunResult]) -> String {
    let mut out = format!("{CSV_HEADER},samples\n");
    for r in results {
        csv_line(r, &mut out);
        let _ = writeln!(out, ",{}", r.samples.map_or("NA".into(), |s| s.to_string()));
    }
    out
}

pub fn slopes_csv_string(slopes: &[SlopeFit]) -> String {
    let mut out = String::from("method,gamma,slope,intercept,points,skipped\n");
    for s in slopes {
        let (slope, intercept) = match s.fit {
            Some(f) => (f.slope.to_string(), f.intercept.to_string()),
            None => ("NA".into(), "NA".into()),
        };
        let skipped: Vec<String> = s.skipped.iter().map(|v| v.to_string()).collect();
        let _ = writeln!(
            out,
            "{},{},{},{},{},{}",
            s.method,
            s.gamma,
            slope,
            intercept,
            s.used.len(),
            skipped.join(";")
        );
    }
    out
}

pub fn write_text(path: &Path, text: &str) -> Result<(), HarnessError> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| HarnessError::Io {
            path: parent.to_path_buf(),
            source,
        })?;
    }
    fs::write(path, text).map_err(|source| HarnessError::Io {
        path: path.to_path_buf(),
        source,
    })
}

pub fn emit_csv(results: &[RunResult], path: &Path) -> Result<(), HarnessError> {
    write_text(path, &csv_string(results))
}

/// Per-bin comparison of empirical and predicted configurational bias.
#[derive(Debug, Clone, PartialEq)]
pub struct TheoryCheckRow {
    pub method: Method,
    pub dt: f64,
    pub gamma: f64,
    pub bin: usize,
    pub x: f64,
    pub exact: f64,
    pub observed: f64,
    pub predicted: f64,
    /// `log(observed / exact)`; absent for empty bins.
    pub empirical: Option<f64>,
}

/// Runs each BAOAB/ABOBA cell of a 1D spec and lines up `log(ω/ω̂)` with
/// the δt² prediction.
pub fn theory_check(
    spec: &ExperimentSpec,
    reference: &ReferenceDistribution,
    workers: usize,
) -> Result<Vec<TheoryCheckRow>, HarnessError> {
    if spec.model.is_cluster() {
        return Err(HarnessError::Unsupported("theory checks need the 1D oscillator".into()));
    }
    let mapped: Vec<CorrectionMethod> = spec
        .methods
        .iter()
        .map(|m| match m {
            Method::Baoab => Ok(CorrectionMethod::Baoab),
            Method::Aboba => Ok(CorrectionMethod::Aboba),
            other => Err(HarnessError::Unsupported(format!("no theory prediction for {other}"))),
        })
        .collect::<Result<_, _>>()?;
    let edges = spec.edges();
    let centers: Vec<f64> = edges.windows(2).map(|w| 0.5 * (w[0] + w[1])).collect();
    let beta = 1.0 / spec.kbt;
    let mut rows = Vec::new();
    for cell in run_cells(spec, reference, workers)? {
        let run = &cell.row;
        if run.diverged {
            continue;
        }
        let idx = spec.methods.iter().position(|m| m == &run.method).expect("cell method from spec");
        let predicted = theory::predicted_bin_log_deviation(
            &spec.model,
            mapped[idx],
            run.dt,
            beta,
            &edges,
            reference::DEFAULT_HALF_WIDTH,
        )?;
        let observed = cell.merged.frequencies();
        for bin in 0..centers.len() {
            let exact = reference.probabilities[bin];
            let empirical = (observed[bin] > 0.0 && exact > 0.0).then(|| (observed[bin] / exact).ln());
            rows.push(TheoryCheckRow {
                method: run.method.clone(),
                dt: run.dt,
                gamma: run.gamma,
                bin,
                x: centers[bin],
                exact,
                observed: observed[bin],
                predicted: predicted[bin],
                empirical,
            });
        }
    }
    Ok(rows)
}

pub fn theory_csv_string(rows: &[TheoryCheckRow]) -> String {
    let mut out = String::from("method,dt,gamma,bin,x,exact,observed,predicted,empirical\n");
    for r in rows {
        let _ = writeln!(
            out,
            "{},{},{},{},{},{},{},{},{}",
            r.method,
            r.dt,
            r.gamma,
            r.bin,
            r.x,
            r.exact,
            r.observed,
            r.predicted,
            fmt_opt(r.empirical)
        );
    }
    out
}
