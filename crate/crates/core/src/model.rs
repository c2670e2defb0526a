//! Benchmark potentials: the 1D quartic-plus-sine oscillator and the 7-atom
//! planar Morse and Lennard-Jones clusters.
//!
//! Cluster configurations are flat vectors in atom-major order
//! `(x0, y0, x1, y1, ...)`.

use thiserror::Error;

/// Pair distances below this are treated as a collision.
pub const MIN_PAIR_DISTANCE: f64 = 1e-12;

/// Number of atoms in the benchmark clusters.
pub const CLUSTER_ATOMS: usize = 7;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ModelError {
    #[error("degenerate configuration: atoms {i} and {j} are {distance:e} apart")]
    DegenerateConfiguration { i: usize, j: usize, distance: f64 },
    #[error("configuration has length {got}, model expects {expected}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("{0} does not provide analytic higher derivatives")]
    Unsupported(&'static str),
}

/// `U` and its first four derivatives at a point of a 1D potential.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DerivativeTower1D {
    pub u: f64,
    pub u1: f64,
    pub u2: f64,
    pub u3: f64,
    pub u4: f64,
}

/// Anything the integrators can move on.
pub trait Potential: Send + Sync {
    fn dimension(&self) -> usize;

    fn energy(&self, x: &[f64]) -> Result<f64, ModelError>;

    /// Writes `∇U(x)` into `grad`.
    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<(), ModelError>;

    /// Analytic derivative tower; 1D potentials only.
    fn derivative_tower(&self, _x: f64) -> Result<DerivativeTower1D, ModelError> {
        Err(ModelError::Unsupported("this potential"))
    }

    /// Upper bound on `∫_{|x|>L} exp(-βU)` for 1D potentials with known growth.
    ///
    /// `None` means the density is treated as supported on `[-L, L]`.
    fn tail_mass_bound(&self, _beta: f64, _half_width: f64) -> Option<f64> {
        None
    }
}

fn check_len(x: &[f64], expected: usize) -> Result<(), ModelError> {
    if x.len() != expected {
        return Err(ModelError::DimensionMismatch {
            expected,
            got: x.len(),
        });
    }
    Ok(())
}

/// `U(x) = x⁴/4 + sin(1 + 5x)` and derivatives.
pub fn oscillator_eval(x: f64) -> DerivativeTower1D {
    let arg = 1.0 + 5.0 * x;
    let (s, c) = arg.sin_cos();
    let x2 = x * x;
    DerivativeTower1D {
        u: 0.25 * x2 * x2 + s,
        u1: x2 * x + 5.0 * c,
        u2: 3.0 * x2 - 25.0 * s,
        u3: 6.0 * x - 125.0 * c,
        u4: 6.0 + 625.0 * s,
    }
}

/// Morse pair energy `(1 - e^{-a(r-r_m)})²` and its r-derivative.
pub fn morse_pair(r: f64, a: f64, r_m: f64) -> (f64, f64) {
    let e = (-a * (r - r_m)).exp();
    let one_minus = 1.0 - e;
    (one_minus * one_minus, 2.0 * a * one_minus * e)
}

/// Lennard-Jones pair energy `ε((r_m/r)¹² - 2(r_m/r)⁶)` and its r-derivative.
pub fn lj_pair(r: f64, epsilon: f64, r_m: f64) -> (f64, f64) {
    let s6 = (r_m / r).powi(6);
    let s12 = s6 * s6;
    (epsilon * (s12 - 2.0 * s6), 12.0 * epsilon * (s6 - s12) / r)
}

/// Six atoms on a unit hexagon around a central atom at the origin.
pub fn init_hexagon() -> Vec<f64> {
    let mut x = vec![0.0; 2 * CLUSTER_ATOMS];
    for k in 1..CLUSTER_ATOMS {
        let angle = (k - 1) as f64 * std::f64::consts::FRAC_PI_3;
        x[2 * k] = angle.cos();
        x[2 * k + 1] = angle.sin();
    }
    x
}

/// Kind-specific parameters live on the variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum PotentialModel {
    Oscillator1D,
    MorseCluster { a: f64, r_m: f64 },
    LjCluster { epsilon: f64, r_m: f64, restraint: f64 },
}

impl PotentialModel {
    pub fn morse() -> Self {
        PotentialModel::MorseCluster { a: 2.0, r_m: 1.0 }
    }

    pub fn lennard_jones() -> Self {
        PotentialModel::LjCluster {
            epsilon: 1.0,
            r_m: 1.0,
            restraint: 0.125,
        }
    }

    pub fn is_cluster(&self) -> bool {
        !matches!(self, PotentialModel::Oscillator1D)
    }

    pub fn name(&self) -> &'static str {
        match self {
            PotentialModel::Oscillator1D => "oscillator",
            PotentialModel::MorseCluster { .. } => "morse",
            PotentialModel::LjCluster { .. } => "lj",
        }
    }

    fn pair(&self, r: f64) -> (f64, f64) {
        match *self {
            PotentialModel::MorseCluster { a, r_m } => morse_pair(r, a, r_m),
            PotentialModel::LjCluster { epsilon, r_m, .. } => lj_pair(r, epsilon, r_m),
            PotentialModel::Oscillator1D => unreachable!("pair term requested for 1D model"),
        }
    }

    /// Energy and force `F = -∇U` of a cluster configuration.
    pub fn cluster_energy_force(&self, x: &[f64]) -> Result<(f64, Vec<f64>), ModelError> {
        let mut grad = vec![0.0; x.len()];
        let energy = self.cluster_energy_gradient(x, &mut grad)?;
        grad.iter_mut().for_each(|g| *g = -*g);
        Ok((energy, grad))
    }

    fn cluster_energy_gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<f64, ModelError> {
        check_len(x, 2 * CLUSTER_ATOMS)?;
        check_len(grad, 2 * CLUSTER_ATOMS)?;
        grad.fill(0.0);
        let mut energy = 0.0;
        for i in 0..CLUSTER_ATOMS {
            for j in (i + 1)..CLUSTER_ATOMS {
                let dx = x[2 * i] - x[2 * j];
                let dy = x[2 * i + 1] - x[2 * j + 1];
                let r = (dx * dx + dy * dy).sqrt();
                if !(r >= MIN_PAIR_DISTANCE) {
                    return Err(ModelError::DegenerateConfiguration { i, j, distance: r });
                }
                let (phi, dphi) = self.pair(r);
                energy += phi;
                let scale = dphi / r;
                grad[2 * i] += scale * dx;
                grad[2 * i + 1] += scale * dy;
                grad[2 * j] -= scale * dx;
                grad[2 * j + 1] -= scale * dy;
            }
        }
        if let PotentialModel::LjCluster { restraint, .. } = *self {
            for (xi, gi) in x.iter().zip(grad.iter_mut()) {
                energy += restraint * xi * xi;
                *gi += 2.0 * restraint * xi;
            }
        }
        Ok(energy)
    }
}

impl Potential for PotentialModel {
    fn dimension(&self) -> usize {
        match self {
            PotentialModel::Oscillator1D => 1,
            _ => 2 * CLUSTER_ATOMS,
        }
    }

    fn energy(&self, x: &[f64]) -> Result<f64, ModelError> {
        match self {
            PotentialModel::Oscillator1D => {
                check_len(x, 1)?;
                Ok(oscillator_eval(x[0]).u)
            }
            _ => {
                let mut scratch = [0.0; 2 * CLUSTER_ATOMS];
                self.cluster_energy_gradient(x, &mut scratch)
            }
        }
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<(), ModelError> {
        match self {
            PotentialModel::Oscillator1D => {
                check_len(x, 1)?;
                check_len(grad, 1)?;
                let arg = 1.0 + 5.0 * x[0];
                grad[0] = x[0] * x[0] * x[0] + 5.0 * arg.cos();
                Ok(())
            }
            _ => self.cluster_energy_gradient(x, grad).map(|_| ()),
        }
    }

    fn derivative_tower(&self, x: f64) -> Result<DerivativeTower1D, ModelError> {
        match self {
            PotentialModel::Oscillator1D => Ok(oscillator_eval(x)),
            PotentialModel::MorseCluster { .. } => Err(ModelError::Unsupported("Morse cluster")),
            PotentialModel::LjCluster { .. } => Err(ModelError::Unsupported("Lennard-Jones cluster")),
        }
    }

    // U(x) ≥ x⁴/4 - 1, and ∫_L^∞ e^{-c x⁴} dx ≤ e^{-c L⁴} / (4 c L³).
    fn tail_mass_bound(&self, beta: f64, half_width: f64) -> Option<f64> {
        match self {
            PotentialModel::Oscillator1D => {
                let c = 0.25 * beta;
                let l = half_width;
                let one_side = (beta - c * l.powi(4)).exp() / (4.0 * c * l.powi(3));
                Some(2.0 * one_side)
            }
            _ => None,
        }
    }
}

/// `U(x) = k x²/2` in one dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Harmonic1D {
    pub stiffness: f64,
}

impl Potential for Harmonic1D {
    fn dimension(&self) -> usize {
        1
    }

    fn energy(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_len(x, 1)?;
        Ok(0.5 * self.stiffness * x[0] * x[0])
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<(), ModelError> {
        check_len(x, 1)?;
        grad[0] = self.stiffness * x[0];
        Ok(())
    }

    fn derivative_tower(&self, x: f64) -> Result<DerivativeTower1D, ModelError> {
        Ok(DerivativeTower1D {
            u: 0.5 * self.stiffness * x * x,
            u1: self.stiffness * x,
            u2: self.stiffness,
            u3: 0.0,
            u4: 0.0,
        })
    }

    // Gaussian tail: ∫_L^∞ e^{-a x²} ≤ e^{-a L²} / (2 a L).
    fn tail_mass_bound(&self, beta: f64, half_width: f64) -> Option<f64> {
        let a = 0.5 * beta * self.stiffness;
        Some(2.0 * (-a * half_width * half_width).exp() / (2.0 * a * half_width))
    }
}

/// `U ≡ 0` in any dimension.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Flat {
    pub dim: usize,
}

impl Potential for Flat {
    fn dimension(&self) -> usize {
        self.dim
    }

    fn energy(&self, x: &[f64]) -> Result<f64, ModelError> {
        check_len(x, self.dim)?;
        Ok(0.0)
    }

    fn gradient(&self, x: &[f64], grad: &mut [f64]) -> Result<(), ModelError> {
        check_len(x, self.dim)?;
        grad.fill(0.0);
        Ok(())
    }

    fn derivative_tower(&self, _x: f64) -> Result<DerivativeTower1D, ModelError> {
        Ok(DerivativeTower1D {
            u: 0.0,
            u1: 0.0,
            u2: 0.0,
            u3: 0.0,
            u4: 0.0,
        })
    }
}
