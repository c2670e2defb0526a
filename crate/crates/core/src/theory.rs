//! Perturbative predictions for the configurational bias of BAOAB and ABOBA
//! on 1D models.
//!
//! The modified invariant density is `exp(-β[p²/2 + U + δt² f₂ + ...])`.
//! Each `f₂` piece is a polynomial in `p` whose coefficients are derivatives
//! of `U`; in 1D every tensor contraction is an ordinary product:
//! `pᵀU''p → p²u2`, `ΔU → u2`, `pᵀ∇ΔU → p·u3`, `pᵀ∇(pᵀU''p) → p³u3`,
//! `∇U·∇(pᵀU''p)`-type terms `→ u1·p²·u3`, and the fourth-order
//! contraction `→ p⁴u4`.

use thiserror::Error;

use crate::model::{DerivativeTower1D, ModelError, Potential};
use crate::reference::{self, GibbsSampler1D, ReferenceError};
use crate::rng::NoiseStream;

#[derive(Debug, Error)]
pub enum TheoryError {
    #[error("{order} is only derived for BAOAB")]
    BaoabOnly { order: CorrectionOrder },
    #[error("expansion invalid at x = {x}, dt = {dt}: δt²|U''|/4 = {ratio} ≥ 1")]
    NotPositiveDefinite { x: f64, dt: f64, ratio: f64 },
    #[error("invalid {name} = {value}")]
    InvalidParameter { name: &'static str, value: f64 },
    #[error(transparent)]
    Model(#[from] ModelError),
    #[error(transparent)]
    Reference(#[from] ReferenceError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionMethod {
    Baoab,
    Aboba,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CorrectionOrder {
    F20,
    F21,
    F22,
}

impl std::fmt::Display for CorrectionOrder {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            CorrectionOrder::F20 => "f20",
            CorrectionOrder::F21 => "f21",
            CorrectionOrder::F22 => "f22",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrectionEvaluation {
    pub method: CorrectionMethod,
    pub order: CorrectionOrder,
    pub value: f64,
}

/// `f20 = a·p² + k·u2/β`, kept in this split form so that the marginal
/// coefficient `-a - k·u2` cancels exactly for BAOAB.
fn f20_parts(method: CorrectionMethod, u2: f64) -> (f64, f64) {
    match method {
        // (1/8)(p²u2 − u2/β)
        CorrectionMethod::Baoab => (u2 / 8.0, -1.0 / 8.0),
        // −(1/8)(p²u2 − 2u2/β)
        CorrectionMethod::Aboba => (-u2 / 8.0, 2.0 / 8.0),
    }
}

fn tower<P: Potential + ?Sized>(model: &P, x: f64) -> Result<DerivativeTower1D, TheoryError> {
    Ok(model.derivative_tower(x)?)
}

fn check_beta(beta: f64) -> Result<(), TheoryError> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(TheoryError::InvalidParameter { name: "beta", value: beta });
    }
    Ok(())
}

pub fn eval_f20<P: Potential + ?Sized>(
    model: &P,
    method: CorrectionMethod,
    x: f64,
    p: f64,
    beta: f64,
) -> Result<f64, TheoryError> {
    check_beta(beta)?;
    let t = tower(model, x)?;
    let (a, k) = f20_parts(method, t.u2);
    Ok(a * p * p + k * t.u2 / beta)
}

/// `(1/24)β⁻¹·p·u3 − (1/72)·p³·u3`.
pub fn eval_f21<P: Potential + ?Sized>(model: &P, x: f64, p: f64, beta: f64) -> Result<f64, TheoryError> {
    check_beta(beta)?;
    let t = tower(model, x)?;
    Ok(p * t.u3 / (24.0 * beta) - p * p * p * t.u3 / 72.0)
}

/// `(1/296)·p⁴·u4 − (1/48)·u1·p²·u3`; the 1/296 is kept exactly as printed.
pub fn eval_f22<P: Potential + ?Sized>(model: &P, x: f64, p: f64, beta: f64) -> Result<f64, TheoryError> {
    check_beta(beta)?;
    let t = tower(model, x)?;
    let p2 = p * p;
    Ok(p2 * p2 * t.u4 / 296.0 - t.u1 * p2 * t.u3 / 48.0)
}

pub fn evaluate<P: Potential + ?Sized>(
    model: &P,
    method: CorrectionMethod,
    order: CorrectionOrder,
    x: f64,
    p: f64,
    beta: f64,
) -> Result<CorrectionEvaluation, TheoryError> {
    let value = match (method, order) {
        (_, CorrectionOrder::F20) => eval_f20(model, method, x, p, beta)?,
        (CorrectionMethod::Baoab, CorrectionOrder::F21) => eval_f21(model, x, p, beta)?,
        (CorrectionMethod::Baoab, CorrectionOrder::F22) => eval_f22(model, x, p, beta)?,
        (CorrectionMethod::Aboba, order) => return Err(TheoryError::BaoabOnly { order }),
    };
    Ok(CorrectionEvaluation { method, order, value })
}

fn validity(u2: f64, x: f64, dt: f64) -> Result<(), TheoryError> {
    let ratio = dt * dt * u2.abs() / 4.0;
    if ratio >= 1.0 {
        return Err(TheoryError::NotPositiveDefinite { x, dt, ratio });
    }
    Ok(())
}

/// δt² coefficient of `log ρ_marginal(x) + βU(x)` (up to a constant).
///
/// Integrating `exp(-β[(1/2 + δt²a)p² + δt²k·u2/β])` over `p` gives
/// `(1 + 2δt²a)^{-1/2} exp(-δt²k·u2)`, whose log has δt² coefficient
/// `-a - k·u2`: zero for BAOAB and `-u2/8` for ABOBA.
pub fn predicted_marginal_correction<P: Potential + ?Sized>(
    model: &P,
    method: CorrectionMethod,
    x: f64,
    dt: f64,
    beta: f64,
) -> Result<f64, TheoryError> {
    check_beta(beta)?;
    let t = tower(model, x)?;
    validity(t.u2, x, dt)?;
    let (a, k) = f20_parts(method, t.u2);
    Ok(-a - k * t.u2)
}

/// The same Gaussian integral without expanding in δt:
/// `-½ log(1 + 2δt²a) - δt²k·u2`.
pub fn marginal_log_ratio<P: Potential + ?Sized>(
    model: &P,
    method: CorrectionMethod,
    x: f64,
    dt: f64,
    beta: f64,
) -> Result<f64, TheoryError> {
    check_beta(beta)?;
    let t = tower(model, x)?;
    validity(t.u2, x, dt)?;
    let (a, k) = f20_parts(method, t.u2);
    let h2 = dt * dt;
    Ok(-0.5 * (2.0 * h2 * a).ln_1p() - h2 * k * t.u2)
}

/// Predicted `log(ω_i / ω̂_i)` per bin to order δt²:
/// `δt² (⟨C⟩_bin − ⟨C⟩_ρ)` with `C` the marginal coefficient.
pub fn predicted_bin_log_deviation<P: Potential + ?Sized>(
    model: &P,
    method: CorrectionMethod,
    dt: f64,
    beta: f64,
    edges: &[f64],
    half_width: f64,
) -> Result<Vec<f64>, TheoryError> {
    crate::stats::Histogram::new(edges.to_vec()).map_err(ReferenceError::from)?;
    let u_min = {
        let mut m = f64::INFINITY;
        for i in 0..=4096 {
            let x = -half_width + 2.0 * half_width * i as f64 / 4096.0;
            m = m.min(model.energy(&[x])?);
        }
        m
    };
    let coefficient = |x: f64| -> f64 {
        match model.derivative_tower(x) {
            Ok(t) => {
                let (a, k) = f20_parts(method, t.u2);
                -a - k * t.u2
            }
            Err(_) => f64::NAN,
        }
    };
    let weighted = |x: f64| -> f64 {
        let u = model.energy(&[x]).unwrap_or(f64::NAN);
        (-beta * (u - u_min)).exp() * coefficient(x)
    };
    let plain = |x: f64| -> f64 {
        let u = model.energy(&[x]).unwrap_or(f64::NAN);
        (-beta * (u - u_min)).exp()
    };
    let tol = reference::QUADRATURE_TOLERANCE;
    let z = reference::adaptive_simpson(plain, -half_width, half_width, tol)?;
    let mean = reference::adaptive_simpson(weighted, -half_width, half_width, tol)? / z;
    let mut out = Vec::with_capacity(edges.len() - 1);
    for w in edges.windows(2) {
        let mass = reference::adaptive_simpson(plain, w[0], w[1], tol)?;
        let bin_mean = reference::adaptive_simpson(weighted, w[0], w[1], tol)? / mass;
        out.push(dt * dt * (bin_mean - mean));
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FredholmEstimate {
    pub estimate: f64,
    pub stderr: f64,
    /// Even-in-p part `(1/4)(u2/β − p²u2)`.
    pub even: f64,
    pub even_stderr: f64,
    /// Odd-in-p part `(1/4)p·u2·u1 − (1/12)p³·u3`.
    pub odd: f64,
    pub odd_stderr: f64,
}

#[derive(Default)]
struct Moments {
    n: f64,
    mean: f64,
    m2: f64,
}

impl Moments {
    fn push(&mut self, v: f64) {
        self.n += 1.0;
        let d = v - self.mean;
        self.mean += d / self.n;
        self.m2 += d * (v - self.mean);
    }

    fn stderr(&self) -> f64 {
        (self.m2 / (self.n - 1.0) / self.n).sqrt()
    }
}

/// Monte Carlo average of the solvability inhomogeneity over exact Gibbs
/// samples `x ~ e^{-βU}/Z`, `p ~ N(0, 1/β)`.
pub fn fredholm_average_check<P: Potential + ?Sized>(
    model: &P,
    beta: f64,
    n_samples: u64,
    stream: &mut NoiseStream,
) -> Result<FredholmEstimate, TheoryError> {
    check_beta(beta)?;
    if n_samples < 2 {
        return Err(TheoryError::InvalidParameter {
            name: "n_samples",
            value: n_samples as f64,
        });
    }
    tower(model, 0.0)?;
    let sampler = GibbsSampler1D::new(model, beta, reference::DEFAULT_HALF_WIDTH, 4096)?;
    let sigma = beta.recip().sqrt();
    let (mut total, mut even, mut odd) = (Moments::default(), Moments::default(), Moments::default());
    for _ in 0..n_samples {
        let x = sampler.sample(stream);
        let p = sigma * stream.next_normal();
        let t = tower(model, x)?;
        let g0 = 0.25 * (t.u2 / beta - p * p * t.u2);
        let g1 = 0.25 * p * t.u2 * t.u1 - p * p * p * t.u3 / 12.0;
        total.push(g0 + g1);
        even.push(g0);
        odd.push(g1);
    }
    Ok(FredholmEstimate {
        estimate: total.mean,
        stderr: total.stderr(),
        even: even.mean,
        even_stderr: even.stderr(),
        odd: odd.mean,
        odd_stderr: odd.stderr(),
    })
}
