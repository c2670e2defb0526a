//! Ground-truth bin probabilities.
//!
//! 1D models get quadrature of `exp(-βU)`; clusters get a long BAOAB run at
//! a small reference stepsize, cached on disk by a hash of its parameters.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::dynamics::{DynamicsError, Method};
use crate::harness::{self, CellSpec};
use crate::model::{ModelError, Potential, PotentialModel};
use crate::rng::NoiseStream;
use crate::stats::{self, Histogram, StatsError};

/// Absolute tolerance for every quadrature integral.
pub const QUADRATURE_TOLERANCE: f64 = 1e-12;

/// Largest admissible tail mass beyond `±L`, relative to the normaliser.
pub const TAIL_TOLERANCE: f64 = 1e-12;

/// Default half-width of the oscillator quadrature domain.
pub const DEFAULT_HALF_WIDTH: f64 = 6.0;

const MAX_DEPTH: u32 = 50;
const INITIAL_PANELS: usize = 8;

#[derive(Debug, Error)]
pub enum ReferenceError {
    #[error("quadrature references need a 1D potential, got dimension {0}")]
    NotOneDimensional(usize),
    #[error("invalid {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("adaptive quadrature did not reach tolerance on [{a}, {b}]")]
    ToleranceNotMet { a: f64, b: f64 },
    #[error("tail mass beyond ±{half_width} may be {mass:e}, above {TAIL_TOLERANCE:e}")]
    TailBoundViolation { half_width: f64, mass: f64 },
    #[error("potential could not be evaluated at x = {0}")]
    Evaluation(f64),
    #[error("reference stepsize {h_ref} exceeds {limit} (a third of the smallest study stepsize)")]
    StepTooLarge { h_ref: f64, limit: f64 },
    #[error("reference trajectory diverged in replica {replica}")]
    Diverged { replica: u64 },
    #[error("reference file {path}: {reason}")]
    Cache { path: PathBuf, reason: String },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Stats(#[from] StatsError),
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Dynamics(#[from] DynamicsError),
}

/// Exact or high-resolution bin probabilities with a provenance record.
#[derive(Debug, Clone, PartialEq)]
pub struct ReferenceDistribution {
    pub edges: Vec<f64>,
    pub probabilities: Vec<f64>,
    /// Number of samples behind a simulated reference; 0 for quadrature.
    pub samples: u64,
    /// `key=value` provenance entries.
    pub meta: Vec<String>,
}

impl ReferenceDistribution {
    pub fn bins(&self) -> usize {
        self.probabilities.len()
    }

    pub fn meta_value(&self, key: &str) -> Option<&str> {
        self.meta.iter().find_map(|m| {
            let (k, v) = m.split_once('=')?;
            (k == key).then_some(v)
        })
    }

    /// Histogram file layout with `# meta:` lines and a probability per row.
    pub fn to_text(&self) -> String {
        let mut out = stats::header_text(&self.edges, self.samples, &self.meta);
        for (i, p) in self.probabilities.iter().enumerate() {
            let _ = writeln!(out, "{i} {p:e}");
        }
        out
    }

    pub fn from_text(text: &str) -> Result<Self, StatsError> {
        let t = stats::parse_table(text)?;
        let probabilities = t
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| {
                v.parse::<f64>().map_err(|e| StatsError::Parse {
                    line: t.first_row_line + i,
                    reason: e.to_string(),
                })
            })
            .collect::<Result<Vec<_>, _>>()?;
        Histogram::new(t.edges.clone())?;
        Ok(Self {
            edges: t.edges,
            probabilities,
            samples: t.total,
            meta: t.meta,
        })
    }

    pub fn write(&self, path: &Path) -> Result<(), ReferenceError> {
        fs::write(path, self.to_text()).map_err(|source| ReferenceError::Io {
            path: path.to_path_buf(),
            source,
        })
    }

    pub fn read(path: &Path) -> Result<Self, ReferenceError> {
        let text = fs::read_to_string(path).map_err(|source| ReferenceError::Io {
            path: path.to_path_buf(),
            source,
        })?;
        Ok(Self::from_text(&text)?)
    }
}

fn simpson(fa: f64, fm: f64, fb: f64, a: f64, b: f64) -> f64 {
    (b - a) / 6.0 * (fa + 4.0 * fm + fb)
}

#[allow(clippy::too_many_arguments)]
fn simpson_recurse<F: Fn(f64) -> f64>(
    f: &F,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64, ReferenceError> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm);
    let frm = f(rm);
    let left = simpson(fa, flm, fm, a, m);
    let right = simpson(fm, frm, fb, m, b);
    let delta = left + right - whole;
    if !delta.is_finite() {
        return Err(ReferenceError::ToleranceNotMet { a, b });
    }
    if delta.abs() <= 15.0 * tol {
        return Ok(left + right + delta / 15.0);
    }
    if depth == 0 {
        return Err(ReferenceError::ToleranceNotMet { a, b });
    }
    Ok(simpson_recurse(f, a, m, fa, flm, fm, left, 0.5 * tol, depth - 1)?
        + simpson_recurse(f, m, b, fm, frm, fb, right, 0.5 * tol, depth - 1)?)
}

/// Adaptive Simpson on `[a, b]` to absolute tolerance `tol`.
pub fn adaptive_simpson<F: Fn(f64) -> f64>(f: F, a: f64, b: f64, tol: f64) -> Result<f64, ReferenceError> {
    if a == b {
        return Ok(0.0);
    }
    // Start from several panels so a narrow feature cannot hide between
    // the first five sample points.
    let width = (b - a) / INITIAL_PANELS as f64;
    let panel_tol = tol / INITIAL_PANELS as f64;
    let mut total = 0.0;
    for k in 0..INITIAL_PANELS {
        let lo = a + k as f64 * width;
        let hi = if k + 1 == INITIAL_PANELS { b } else { lo + width };
        let (fa, fm, fb) = (f(lo), f(0.5 * (lo + hi)), f(hi));
        let whole = simpson(fa, fm, fb, lo, hi);
        total += simpson_recurse(&f, lo, hi, fa, fm, fb, whole, panel_tol, MAX_DEPTH)?;
    }
    Ok(total)
}

/// `exp(-β(U - shift))` for a 1D potential, with the shift chosen so the
/// largest sampled weight on the domain is 1.
struct BoltzmannWeight<'a, P: ?Sized> {
    model: &'a P,
    beta: f64,
    shift: f64,
}

impl<'a, P: Potential + ?Sized> BoltzmannWeight<'a, P> {
    fn new(model: &'a P, beta: f64, half_width: f64) -> Result<Self, ReferenceError> {
        if model.dimension() != 1 {
            return Err(ReferenceError::NotOneDimensional(model.dimension()));
        }
        let grid = 4096;
        let mut shift = f64::INFINITY;
        for i in 0..=grid {
            let x = -half_width + 2.0 * half_width * i as f64 / grid as f64;
            let u = model.energy(&[x])?;
            if !u.is_finite() {
                return Err(ReferenceError::Evaluation(x));
            }
            shift = shift.min(u);
        }
        Ok(Self { model, beta, shift })
    }

    fn eval(&self, x: f64) -> f64 {
        match self.model.energy(&[x]) {
            Ok(u) => (-self.beta * (u - self.shift)).exp(),
            Err(_) => f64::NAN,
        }
    }

    fn integrate(&self, a: f64, b: f64) -> Result<f64, ReferenceError> {
        adaptive_simpson(|x| self.eval(x), a, b, QUADRATURE_TOLERANCE)
    }

    /// Normaliser on `[-L, L]` assembled from the pieces between `cuts`.
    fn integrate_pieces(&self, cuts: &[f64]) -> Result<Vec<f64>, ReferenceError> {
        cuts.windows(2).map(|w| self.integrate(w[0], w[1])).collect()
    }
}

fn check_beta_domain(beta: f64, edges: &[f64], half_width: f64) -> Result<(), ReferenceError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(ReferenceError::InvalidParameter {
            name: "beta",
            value: beta,
            reason: "must be positive and finite",
        });
    }
    Histogram::new(edges.to_vec())?;
    let reach = edges[0].abs().max(edges[edges.len() - 1].abs());
    if !(half_width >= reach) || !half_width.is_finite() {
        return Err(ReferenceError::InvalidParameter {
            name: "half_width",
            value: half_width,
            reason: "must cover every bin edge",
        });
    }
    Ok(())
}

/// `P_i = ∫_{bin i} e^{-βU} / ∫_{-L}^{L} e^{-βU}`, each integral to 1e-12.
///
/// When the model supplies a tail bound, the mass beyond `±L` is certified
/// below 1e-12 of the normaliser; a model without one is treated as
/// supported on `[-L, L]`, which the meta record states.
pub fn quadrature_bin_probabilities<P: Potential + ?Sized>(
    model: &P,
    beta: f64,
    edges: &[f64],
    half_width: f64,
) -> Result<ReferenceDistribution, ReferenceError> {
    check_beta_domain(beta, edges, half_width)?;
    let weight = BoltzmannWeight::new(model, beta, half_width)?;

    let mut cuts = Vec::with_capacity(edges.len() + 2);
    if edges[0] > -half_width {
        cuts.push(-half_width);
    }
    cuts.extend_from_slice(edges);
    if edges[edges.len() - 1] < half_width {
        cuts.push(half_width);
    }
    let pieces = weight.integrate_pieces(&cuts)?;
    let z: f64 = pieces.iter().sum();
    let offset = usize::from(edges[0] > -half_width);
    let probabilities: Vec<f64> = pieces[offset..offset + edges.len() - 1]
        .iter()
        .map(|v| v / z)
        .collect();

    let tail = match model.tail_mass_bound(beta, half_width) {
        Some(bound) => {
            // Bound is for the unshifted density; bring it to our units.
            let mass = bound * (beta * weight.shift).exp() / z;
            if !(mass < TAIL_TOLERANCE) {
                return Err(ReferenceError::TailBoundViolation { half_width, mass });
            }
            format!("{mass:e}")
        }
        None => "truncated".to_string(),
    };

    Ok(ReferenceDistribution {
        edges: edges.to_vec(),
        probabilities,
        samples: 0,
        meta: vec![
            "source=quadrature".into(),
            "rule=adaptive-simpson".into(),
            format!("tolerance={QUADRATURE_TOLERANCE:e}"),
            format!("beta={beta}"),
            format!("half_width={half_width}"),
            format!("tail_bound={tail}"),
        ],
    })
}

/// Five-point Gauss–Legendre nodes and weights on `[-1, 1]`.
const GL5: [(f64, f64); 5] = [
    (0.0, 0.568_888_888_888_888_9),
    (-0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (0.538_469_310_105_683_1, 0.478_628_670_499_366_5),
    (-0.906_179_845_938_664, 0.236_926_885_056_189_08),
    (0.906_179_845_938_664, 0.236_926_885_056_189_08),
];

/// Exact draws from the 1D Gibbs density by inverse CDF.
///
/// The CDF is tabulated on a fine grid by adaptive quadrature; inside a cell
/// the root is found by safeguarded Newton iteration.
pub struct GibbsSampler1D<'a, P: ?Sized> {
    weight: BoltzmannWeight<'a, P>,
    grid: Vec<f64>,
    cdf: Vec<f64>,
    z: f64,
}

impl<'a, P: Potential + ?Sized> GibbsSampler1D<'a, P> {
    pub fn new(model: &'a P, beta: f64, half_width: f64, cells: usize) -> Result<Self, ReferenceError> {
        check_beta_domain(beta, &[-half_width, half_width], half_width)?;
        if cells == 0 {
            return Err(ReferenceError::InvalidParameter {
                name: "cells",
                value: 0.0,
                reason: "need at least one cell",
            });
        }
        let weight = BoltzmannWeight::new(model, beta, half_width)?;
        let grid: Vec<f64> = (0..=cells)
            .map(|i| -half_width + 2.0 * half_width * i as f64 / cells as f64)
            .collect();
        let pieces = weight.integrate_pieces(&grid)?;
        let mut cdf = Vec::with_capacity(grid.len());
        let mut acc = 0.0;
        cdf.push(0.0);
        for p in &pieces {
            acc += p;
            cdf.push(acc);
        }
        let z = acc;
        for c in cdf.iter_mut() {
            *c /= z;
        }
        Ok(Self { weight, grid, cdf, z })
    }

    fn density(&self, x: f64) -> f64 {
        self.weight.eval(x) / self.z
    }

    fn partial(&self, a: f64, x: f64) -> f64 {
        let half = 0.5 * (x - a);
        let mid = 0.5 * (x + a);
        GL5.iter().map(|(t, w)| w * self.density(mid + half * t)).sum::<f64>() * half
    }

    /// Inverse CDF at `u ∈ [0, 1)`.
    pub fn quantile(&self, u: f64) -> f64 {
        let cells = self.grid.len() - 1;
        let i = self.cdf.partition_point(|&c| c <= u).clamp(1, cells) - 1;
        let (a, b) = (self.grid[i], self.grid[i + 1]);
        let target = u - self.cdf[i];
        let mass = self.cdf[i + 1] - self.cdf[i];
        let (mut lo, mut hi) = (a, b);
        let mut x = if mass > 0.0 {
            a + (b - a) * (target / mass).clamp(0.0, 1.0)
        } else {
            0.5 * (a + b)
        };
        for _ in 0..40 {
            let g = self.partial(a, x) - target;
            if g > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.density(x);
            let mut next = x - g / d;
            if !(next > lo && next < hi) {
                next = 0.5 * (lo + hi);
            }
            if (next - x).abs() <= 1e-15 * (1.0 + x.abs()) {
                return next;
            }
            x = next;
        }
        x
    }

    pub fn sample(&self, stream: &mut NoiseStream) -> f64 {
        self.quantile(stream.next_uniform())
    }
}

/// Parameters of a simulated cluster G(r) reference.
#[derive(Debug, Clone, PartialEq)]
pub struct RdfReferenceParams {
    pub model: PotentialModel,
    pub kbt: f64,
    pub gamma: f64,
    pub h_ref: f64,
    pub t_total: f64,
    pub replicas: u64,
    pub seed: u64,
    pub edges: Vec<f64>,
    pub burn_in_fraction: f64,
    pub stride: u64,
    /// Smallest stepsize of the study this reference serves, if any.
    pub smallest_study_stepsize: Option<f64>,
}

impl RdfReferenceParams {
    fn meta(&self) -> Vec<String> {
        let edges: Vec<String> = self.edges.iter().map(|e| e.to_string()).collect();
        vec![
            "source=simulation".into(),
            format!("model={}", model_descriptor(&self.model)),
            "method=baoab".into(),
            format!("kBT={}", self.kbt),
            format!("gamma={}", self.gamma),
            format!("h_ref={}", self.h_ref),
            format!("t_total={}", self.t_total),
            format!("replicas={}", self.replicas),
            format!("seed={}", self.seed),
            format!("burn_in_fraction={}", self.burn_in_fraction),
            format!("stride={}", self.stride),
            format!("edges={}", edges.join(",")),
        ]
    }

    /// Hex SHA-256 of the provenance record; names the cache file.
    pub fn cache_key(&self) -> String {
        let digest = Sha256::digest(self.meta().join("\n").as_bytes());
        let mut hex = String::with_capacity(64);
        for byte in digest.iter() {
            let _ = write!(hex, "{byte:02x}");
        }
        hex
    }
}

pub fn model_descriptor(model: &PotentialModel) -> String {
    match model {
        PotentialModel::Oscillator1D => "oscillator".into(),
        PotentialModel::MorseCluster { a, r_m } => format!("morse(a={a},r_m={r_m})"),
        PotentialModel::LjCluster {
            epsilon,
            r_m,
            restraint,
        } => format!("lj(epsilon={epsilon},r_m={r_m},restraint={restraint})"),
    }
}

/// G(r) frequencies from BAOAB at `h_ref`, replicas merged in index order.
pub fn simulated_reference_rdf(
    params: &RdfReferenceParams,
    workers: usize,
) -> Result<ReferenceDistribution, ReferenceError> {
    if !params.model.is_cluster() {
        return Err(ReferenceError::InvalidParameter {
            name: "model",
            value: params.model.dimension() as f64,
            reason: "simulated G(r) references need a cluster model",
        });
    }
    if !(params.h_ref > 0.0) {
        return Err(ReferenceError::InvalidParameter {
            name: "h_ref",
            value: params.h_ref,
            reason: "must be positive",
        });
    }
    if let Some(smallest) = params.smallest_study_stepsize {
        let limit = smallest / 3.0;
        if params.h_ref > limit * (1.0 + 1e-12) {
            return Err(ReferenceError::StepTooLarge {
                h_ref: params.h_ref,
                limit,
            });
        }
    }
    if params.replicas == 0 {
        return Err(ReferenceError::InvalidParameter {
            name: "replicas",
            value: 0.0,
            reason: "need at least one replica",
        });
    }
    let cell = CellSpec {
        model: params.model,
        method: Method::Baoab,
        dt: params.h_ref,
        gamma: params.gamma,
        kbt: params.kbt,
        t_total: params.t_total,
        burn_in_fraction: params.burn_in_fraction,
        stride: params.stride,
        edges: params.edges.clone(),
        seed: params.seed,
    };
    cell.validate()?;
    let outcomes = harness::run_replicas(&cell, params.replicas, &[], workers)?;
    let mut merged = Histogram::new(params.edges.clone())?;
    for (replica, o) in outcomes.iter().enumerate() {
        if o.diverged {
            return Err(ReferenceError::Diverged {
                replica: replica as u64,
            });
        }
        merged.merge(&o.histogram)?;
    }
    Ok(ReferenceDistribution {
        edges: params.edges.clone(),
        probabilities: merged.frequencies(),
        samples: merged.total_samples(),
        meta: params.meta(),
    })
}

/// [`simulated_reference_rdf`] through an on-disk cache in `dir`.
pub fn cached_reference_rdf(
    params: &RdfReferenceParams,
    dir: &Path,
    workers: usize,
) -> Result<ReferenceDistribution, ReferenceError> {
    let path = dir.join(format!("rdf-{}.txt", &params.cache_key()[..32]));
    if path.exists() {
        let cached = ReferenceDistribution::read(&path)?;
        if cached.meta != params.meta() {
            return Err(ReferenceError::Cache {
                path,
                reason: "provenance does not match the requested parameters".into(),
            });
        }
        return Ok(cached);
    }
    let fresh = simulated_reference_rdf(params, workers)?;
    fs::create_dir_all(dir).map_err(|source| ReferenceError::Io {
        path: dir.to_path_buf(),
        source,
    })?;
    fresh.write(&path)?;
    Ok(fresh)
}
