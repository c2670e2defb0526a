//! One-step maps for Langevin and Brownian dynamics.
//!
//! Langevin splittings are built from three exactly solvable pieces:
//!
//! * `A`: drift, `x ← x + t M⁻¹ p`
//! * `B`: kick, `p ← p − t ∇U(x)`
//! * `O`: Ornstein–Uhlenbeck, `p ← c₁ p + c₃ M^{1/2} R`
//!
//! Every integrator here needs one fresh force evaluation per step. The
//! force at the end of a step is held in a [`ForceCache`] owned by the
//! trajectory's [`StepContext`] and reused by the next opening kick.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::model::{ModelError, Potential};
use crate::rng::NoiseStream;

/// Coordinates beyond this magnitude mark a step as unstable.
pub const DIVERGENCE_THRESHOLD: f64 = 1e100;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DynamicsError {
    #[error("invalid parameter {name} = {value}: {reason}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        reason: &'static str,
    },
    #[error("invalid splitting string {0:?}: expected letters from {{A, B, O}}")]
    InvalidScheme(String),
    #[error("unknown method {0:?}")]
    UnknownMethod(String),
    #[error("unstable at this stepsize: state exceeded 1e100 or became non-finite at step {step}")]
    Diverged { step: u64 },
    #[error(transparent)]
    Model(#[from] ModelError),
}

fn positive(name: &'static str, value: f64) -> Result<f64, DynamicsError> {
    if value > 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DynamicsError::InvalidParameter {
            name,
            value,
            reason: "must be positive and finite",
        })
    }
}

fn nonnegative(name: &'static str, value: f64) -> Result<f64, DynamicsError> {
    if value >= 0.0 && value.is_finite() {
        Ok(value)
    } else {
        Err(DynamicsError::InvalidParameter {
            name,
            value,
            reason: "must be nonnegative and finite",
        })
    }
}

/// Positions, momenta and diagonal masses.
#[derive(Debug, Clone, PartialEq)]
pub struct PhaseState {
    pub x: Vec<f64>,
    pub p: Vec<f64>,
    pub masses: Vec<f64>,
}

impl PhaseState {
    pub fn new(x: Vec<f64>, p: Vec<f64>, masses: Vec<f64>) -> Result<Self, DynamicsError> {
        if p.len() != x.len() || masses.len() != x.len() {
            return Err(ModelError::DimensionMismatch {
                expected: x.len(),
                got: if p.len() != x.len() { p.len() } else { masses.len() },
            }
            .into());
        }
        for &m in &masses {
            positive("mass", m)?;
        }
        Ok(Self { x, p, masses })
    }

    /// Unit masses, zero momenta.
    pub fn at_rest(x: Vec<f64>) -> Self {
        let n = x.len();
        Self {
            x,
            p: vec![0.0; n],
            masses: vec![1.0; n],
        }
    }

    /// Unit masses, momenta drawn from `N(0, kBT m)`.
    pub fn canonical(x: Vec<f64>, kbt: f64, stream: &mut NoiseStream) -> Self {
        let mut s = Self::at_rest(x);
        for (p, m) in s.p.iter_mut().zip(&s.masses) {
            *p = (kbt * m).sqrt() * stream.next_normal();
        }
        s
    }

    pub fn dimension(&self) -> usize {
        self.x.len()
    }

    pub fn is_stable(&self) -> bool {
        self.x
            .iter()
            .chain(&self.p)
            .all(|v| v.is_finite() && v.abs() <= DIVERGENCE_THRESHOLD)
    }
}

/// Exact OU solve constants for one substep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OuCoefficients {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
}

/// `c₁ = e^{−γδt}`, `c₂ = (1 − c₁)/γ`, `c₃ = √(kBT(1 − c₁²))`.
///
/// `c₁` underflows to exactly zero once `γδt` exceeds about 745.
pub fn ou_coefficients(gamma: f64, dt: f64, kbt: f64) -> Result<OuCoefficients, DynamicsError> {
    positive("gamma", gamma)?;
    positive("dt", dt)?;
    positive("kBT", kbt)?;
    let gdt = gamma * dt;
    let c1 = (-gdt).exp();
    let c2 = -(-gdt).exp_m1() / gamma;
    let c3 = (kbt * -(-2.0 * gdt).exp_m1()).sqrt();
    Ok(OuCoefficients { c1, c2, c3 })
}

/// Force at the current configuration, evaluated lazily.
#[derive(Debug, Clone)]
pub struct ForceCache {
    grad: Vec<f64>,
    valid: bool,
    evaluations: u64,
}

impl ForceCache {
    pub fn new(dim: usize) -> Self {
        Self {
            grad: vec![0.0; dim],
            valid: false,
            evaluations: 0,
        }
    }

    /// `∇U(x)`, reusing the stored value if `x` has not moved since.
    pub fn gradient<P: Potential + ?Sized>(
        &mut self,
        model: &P,
        x: &[f64],
    ) -> Result<&[f64], ModelError> {
        if !self.valid {
            model.gradient(x, &mut self.grad)?;
            self.evaluations += 1;
            self.valid = true;
        }
        Ok(&self.grad)
    }

    pub fn invalidate(&mut self) {
        self.valid = false;
    }

    pub fn evaluations(&self) -> u64 {
        self.evaluations
    }
}

/// One Gaussian draw carried over between steps.
#[derive(Debug, Clone)]
pub struct ColoredNoiseCache {
    previous: Vec<f64>,
    primed: bool,
}

impl ColoredNoiseCache {
    pub fn new(dim: usize) -> Self {
        Self {
            previous: vec![0.0; dim],
            primed: false,
        }
    }

    pub fn is_primed(&self) -> bool {
        self.primed
    }

    pub fn previous(&self) -> &[f64] {
        &self.previous
    }

    /// Draws `R₀` if this is the first use.
    pub fn prime(&mut self, stream: &mut NoiseStream) {
        if !self.primed {
            stream.fill_normal(&mut self.previous);
            self.primed = true;
        }
    }
}

/// Per-trajectory mutable state shared by all step functions.
#[derive(Debug, Clone)]
pub struct StepContext {
    pub force: ForceCache,
    pub colored: ColoredNoiseCache,
    noise: Vec<f64>,
}

impl StepContext {
    pub fn new(dim: usize) -> Self {
        Self {
            force: ForceCache::new(dim),
            colored: ColoredNoiseCache::new(dim),
            noise: vec![0.0; dim],
        }
    }

    pub fn force_evaluations(&self) -> u64 {
        self.force.evaluations()
    }

    pub fn a_flow(&mut self, s: &mut PhaseState, t: f64) {
        a_flow(s, t);
        if t != 0.0 {
            self.force.invalidate();
        }
    }

    pub fn b_flow<P: Potential + ?Sized>(
        &mut self,
        s: &mut PhaseState,
        t: f64,
        model: &P,
    ) -> Result<(), DynamicsError> {
        let grad = self.force.gradient(model, &s.x)?;
        b_kick(s, t, grad);
        Ok(())
    }

    pub fn o_flow(&mut self, s: &mut PhaseState, coeffs: &OuCoefficients, stream: &mut NoiseStream) {
        stream.fill_normal(&mut self.noise);
        o_update(s, coeffs, &self.noise);
    }
}

/// `x ← x + t M⁻¹ p`.
pub fn a_flow(s: &mut PhaseState, t: f64) {
    for ((x, p), m) in s.x.iter_mut().zip(&s.p).zip(&s.masses) {
        *x += t * p / m;
    }
}

/// `p ← p − t g` for a precomputed gradient `g`.
pub fn b_kick(s: &mut PhaseState, t: f64, grad: &[f64]) {
    for (p, g) in s.p.iter_mut().zip(grad) {
        *p -= t * g;
    }
}

/// `p ← c₁ p + c₃ M^{1/2} R` for a given draw `R`.
pub fn o_update(s: &mut PhaseState, coeffs: &OuCoefficients, noise: &[f64]) {
    for ((p, m), r) in s.p.iter_mut().zip(&s.masses).zip(noise) {
        *p = coeffs.c1 * *p + coeffs.c3 * m.sqrt() * r;
    }
}

/// Exact OU solve with a fresh draw from `stream`.
pub fn o_flow(s: &mut PhaseState, coeffs: &OuCoefficients, stream: &mut NoiseStream) {
    for (p, m) in s.p.iter_mut().zip(&s.masses) {
        let r = stream.next_normal();
        *p = coeffs.c1 * *p + coeffs.c3 * m.sqrt() * r;
    }
}

/// Langevin step parameters with their OU constants.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LangevinParams {
    pub dt: f64,
    pub gamma: f64,
    pub kbt: f64,
    pub coeffs: OuCoefficients,
}

impl LangevinParams {
    pub fn new(dt: f64, gamma: f64, kbt: f64) -> Result<Self, DynamicsError> {
        Ok(Self {
            dt,
            gamma,
            kbt,
            coeffs: ou_coefficients(gamma, dt, kbt)?,
        })
    }
}

/// Brownian-dynamics step size and temperature. `kbt = 0` is allowed.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BrownianParams {
    pub h: f64,
    pub kbt: f64,
}

impl BrownianParams {
    pub fn new(h: f64, kbt: f64) -> Result<Self, DynamicsError> {
        Ok(Self {
            h: positive("h", h)?,
            kbt: nonnegative("kBT", kbt)?,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Letter {
    A,
    B,
    O,
}

/// A validated composition string over `{A, B, O}`.
///
/// Each occurrence of a letter runs for `δt` divided by that letter's
/// occurrence count, so `BAOAB` is `B(δt/2) A(δt/2) O(δt) A(δt/2) B(δt/2)`.
#[derive(Debug, Clone, PartialEq)]
pub struct SplittingScheme {
    letters: Vec<Letter>,
    dt: f64,
    gamma: f64,
    kbt: f64,
    a_time: f64,
    b_time: f64,
    o_coeffs: Option<OuCoefficients>,
}

impl SplittingScheme {
    pub fn new(letters: &str, dt: f64, gamma: f64, kbt: f64) -> Result<Self, DynamicsError> {
        if letters.is_empty() {
            return Err(DynamicsError::InvalidScheme(letters.to_string()));
        }
        let parsed = letters
            .chars()
            .map(|c| match c {
                'A' => Ok(Letter::A),
                'B' => Ok(Letter::B),
                'O' => Ok(Letter::O),
                _ => Err(DynamicsError::InvalidScheme(letters.to_string())),
            })
            .collect::<Result<Vec<_>, _>>()?;
        positive("dt", dt)?;
        positive("gamma", gamma)?;
        positive("kBT", kbt)?;
        let count = |l: Letter| parsed.iter().filter(|&&x| x == l).count();
        let share = |l: Letter| match count(l) {
            0 => 0.0,
            n => dt / n as f64,
        };
        let o_coeffs = match count(Letter::O) {
            0 => None,
            _ => Some(ou_coefficients(gamma, share(Letter::O), kbt)?),
        };
        Ok(Self {
            a_time: share(Letter::A),
            b_time: share(Letter::B),
            o_coeffs,
            letters: parsed,
            dt,
            gamma,
            kbt,
        })
    }

    pub fn letters(&self) -> String {
        self.letters
            .iter()
            .map(|l| match l {
                Letter::A => 'A',
                Letter::B => 'B',
                Letter::O => 'O',
            })
            .collect()
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    pub fn gamma(&self) -> f64 {
        self.gamma
    }

    pub fn kbt(&self) -> f64 {
        self.kbt
    }

    /// Substep durations for A and B, and the OU constants for one O.
    pub fn substeps(&self) -> (f64, f64, Option<OuCoefficients>) {
        (self.a_time, self.b_time, self.o_coeffs)
    }

    /// Applies the letters left to right.
    pub fn step<P: Potential + ?Sized>(
        &self,
        s: &mut PhaseState,
        ctx: &mut StepContext,
        model: &P,
        stream: &mut NoiseStream,
    ) -> Result<(), DynamicsError> {
        for letter in &self.letters {
            match letter {
                Letter::A => ctx.a_flow(s, self.a_time),
                Letter::B => ctx.b_flow(s, self.b_time, model)?,
                Letter::O => {
                    let coeffs = self.o_coeffs.expect("O letter implies coefficients");
                    ctx.o_flow(s, &coeffs, stream);
                }
            }
        }
        Ok(())
    }
}

/// Builds the one-step map for a composition string.
pub fn compose_splitting(
    letters: &str,
    dt: f64,
    gamma: f64,
    kbt: f64,
) -> Result<SplittingScheme, DynamicsError> {
    SplittingScheme::new(letters, dt, gamma, kbt)
}

// The listings below follow the update sequences line by line.

pub fn step_baoab<P: Potential + ?Sized>(
    s: &mut PhaseState,
    params: &LangevinParams,
    ctx: &mut StepContext,
    model: &P,
    stream: &mut NoiseStream,
) -> Result<(), DynamicsError> {
    let half = params.dt / 2.0;
    let grad = ctx.force.gradient(model, &s.x)?;
    b_kick(s, half, grad);
    a_flow(s, half);
    ctx.o_flow(s, &params.coeffs, stream);
    a_flow(s, half);
    ctx.force.invalidate();
    let grad = ctx.force.gradient(model, &s.x)?;
    b_kick(s, half, grad);
    Ok(())
}

pub fn step_aboba<P: Potential + ?Sized>(
    s: &mut PhaseState,
    params: &LangevinParams,
    ctx: &mut StepContext,
    model: &P,
    stream: &mut NoiseStream,
) -> Result<(), DynamicsError> {
    let half = params.dt / 2.0;
    a_flow(s, half);
    ctx.force.invalidate();
    let grad = ctx.force.gradient(model, &s.x)?;
    b_kick(s, half, grad);
    ctx.o_flow(s, &params.coeffs, stream);
    let grad = ctx.force.gradient(model, &s.x)?;
    b_kick(s, half, grad);
    a_flow(s, half);
    ctx.force.invalidate();
    Ok(())
}

/// Stochastic position Verlet: drift, combined kick/OU with `c₂` on the force, drift.
pub fn step_spv<P: Potential + ?Sized>(
    s: &mut PhaseState,
    params: &LangevinParams,
    ctx: &mut StepContext,
    model: &P,
    stream: &mut NoiseStream,
) -> Result<(), DynamicsError> {
    let half = params.dt / 2.0;
    let OuCoefficients { c1, c2, c3 } = params.coeffs;
    a_flow(s, half);
    ctx.force.invalidate();
    let grad = ctx.force.gradient(model, &s.x)?;
    for ((p, m), g) in s.p.iter_mut().zip(&s.masses).zip(grad) {
        let r = stream.next_normal();
        *p = c1 * *p - c2 * g + c3 * m.sqrt() * r;
    }
    a_flow(s, half);
    ctx.force.invalidate();
    Ok(())
}

/// Brünger–Brooks–Karplus.
///
/// The draw `R_{n+1}` injected at the end of step `n` is reused as `R_n` at
/// the start of step `n + 1`, so each step takes one fresh draw (after a
/// priming draw for `R₀`). Each injection is scaled by `√(2 δt kBT γ)/2`,
/// which makes the momentum temperature `kBT / (1 + δtγ/2)`.
pub fn step_bbk<P: Potential + ?Sized>(
    s: &mut PhaseState,
    params: &LangevinParams,
    ctx: &mut StepContext,
    model: &P,
    stream: &mut NoiseStream,
) -> Result<(), DynamicsError> {
    let LangevinParams { dt, gamma, kbt, .. } = *params;
    let half = dt / 2.0;
    let damp = 1.0 - dt * gamma / 2.0;
    let denom = 1.0 + dt * gamma / 2.0;
    let amp = (2.0 * dt * kbt * gamma).sqrt() / 2.0;

    ctx.colored.prime(stream);
    let grad = ctx.force.gradient(model, &s.x)?;
    for (((p, m), g), r) in s
        .p
        .iter_mut()
        .zip(&s.masses)
        .zip(grad)
        .zip(&ctx.colored.previous)
    {
        *p = damp * *p - half * g + amp * m.sqrt() * r;
    }
    for ((x, p), m) in s.x.iter_mut().zip(&s.p).zip(&s.masses) {
        *x += dt * p / m;
    }
    ctx.force.invalidate();
    stream.fill_normal(&mut ctx.colored.previous);
    let grad = ctx.force.gradient(model, &s.x)?;
    for (((p, m), g), r) in s
        .p
        .iter_mut()
        .zip(&s.masses)
        .zip(grad)
        .zip(&ctx.colored.previous)
    {
        *p = (*p - half * g + amp * m.sqrt() * r) / denom;
    }
    Ok(())
}

/// `x ← x − h M⁻¹∇U(x) + √(2 kBT h) M^{−1/2} R`; momenta untouched.
pub fn step_euler_maruyama<P: Potential + ?Sized>(
    s: &mut PhaseState,
    params: &BrownianParams,
    ctx: &mut StepContext,
    model: &P,
    stream: &mut NoiseStream,
) -> Result<(), DynamicsError> {
    let BrownianParams { h, kbt } = *params;
    let amp = (2.0 * kbt * h).sqrt();
    let grad = ctx.force.gradient(model, &s.x)?;
    for ((x, m), g) in s.x.iter_mut().zip(&s.masses).zip(grad) {
        let r = stream.next_normal();
        *x += -h * g / m + amp / m.sqrt() * r;
    }
    ctx.force.invalidate();
    Ok(())
}

/// High-friction limit of BAOAB:
/// `x ← x − h M⁻¹∇U(x) + √(kBT h / 2) M^{−1/2} (R_n + R_{n+1})`.
pub fn step_baoab_limit<P: Potential + ?Sized>(
    s: &mut PhaseState,
    params: &BrownianParams,
    ctx: &mut StepContext,
    model: &P,
    stream: &mut NoiseStream,
) -> Result<(), DynamicsError> {
    let BrownianParams { h, kbt } = *params;
    let amp = (kbt * h / 2.0).sqrt();
    ctx.colored.prime(stream);
    let grad = ctx.force.gradient(model, &s.x)?;
    for (((x, m), g), prev) in s
        .x
        .iter_mut()
        .zip(&s.masses)
        .zip(grad)
        .zip(ctx.colored.previous.iter_mut())
    {
        let fresh = stream.next_normal();
        *x += -h * g / m + amp / m.sqrt() * (*prev + fresh);
        *prev = fresh;
    }
    ctx.force.invalidate();
    Ok(())
}

/// Integrator names accepted on the command line and in config files.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub enum Method {
    Baoab,
    Aboba,
    Spv,
    Bbk,
    EulerMaruyama,
    BaoabLimit,
    Split(String),
}

impl Method {
    /// Position-only methods whose stepsize is `h` rather than `δt`.
    pub fn is_brownian(&self) -> bool {
        matches!(self, Method::EulerMaruyama | Method::BaoabLimit)
    }
}

impl fmt::Display for Method {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Method::Baoab => f.write_str("baoab"),
            Method::Aboba => f.write_str("aboba"),
            Method::Spv => f.write_str("spv"),
            Method::Bbk => f.write_str("bbk"),
            Method::EulerMaruyama => f.write_str("euler-maruyama"),
            Method::BaoabLimit => f.write_str("baoab-limit"),
            Method::Split(letters) => write!(f, "split:{letters}"),
        }
    }
}

impl FromStr for Method {
    type Err = DynamicsError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "baoab" => Ok(Method::Baoab),
            "aboba" => Ok(Method::Aboba),
            "spv" => Ok(Method::Spv),
            "bbk" => Ok(Method::Bbk),
            "euler-maruyama" => Ok(Method::EulerMaruyama),
            "baoab-limit" => Ok(Method::BaoabLimit),
            other => match other.strip_prefix("split:") {
                Some(letters) if !letters.is_empty() && letters.chars().all(|c| "ABO".contains(c)) => {
                    Ok(Method::Split(letters.to_string()))
                }
                Some(letters) => Err(DynamicsError::InvalidScheme(letters.to_string())),
                None => Err(DynamicsError::UnknownMethod(other.to_string())),
            },
        }
    }
}

#[derive(Debug, Clone)]
enum Kernel {
    Baoab(LangevinParams),
    Aboba(LangevinParams),
    Spv(LangevinParams),
    Bbk(LangevinParams),
    EulerMaruyama(BrownianParams),
    BaoabLimit(BrownianParams),
    Split(SplittingScheme),
}

/// A method bound to its parameters and a private step context.
#[derive(Debug, Clone)]
pub struct Integrator {
    method: Method,
    kernel: Kernel,
    ctx: StepContext,
    steps: u64,
}

impl Integrator {
    /// `stepsize` is `δt` for Langevin methods and `h` for Brownian ones;
    /// `gamma` is ignored by the latter.
    pub fn new(
        method: Method,
        stepsize: f64,
        gamma: f64,
        kbt: f64,
        dim: usize,
    ) -> Result<Self, DynamicsError> {
        let kernel = match &method {
            Method::Baoab => Kernel::Baoab(LangevinParams::new(stepsize, gamma, kbt)?),
            Method::Aboba => Kernel::Aboba(LangevinParams::new(stepsize, gamma, kbt)?),
            Method::Spv => Kernel::Spv(LangevinParams::new(stepsize, gamma, kbt)?),
            Method::Bbk => Kernel::Bbk(LangevinParams::new(stepsize, gamma, kbt)?),
            Method::EulerMaruyama => Kernel::EulerMaruyama(BrownianParams::new(stepsize, kbt)?),
            Method::BaoabLimit => Kernel::BaoabLimit(BrownianParams::new(stepsize, kbt)?),
            Method::Split(letters) => Kernel::Split(SplittingScheme::new(letters, stepsize, gamma, kbt)?),
        };
        Ok(Self {
            method,
            kernel,
            ctx: StepContext::new(dim),
            steps: 0,
        })
    }

    pub fn method(&self) -> &Method {
        &self.method
    }

    pub fn steps(&self) -> u64 {
        self.steps
    }

    pub fn force_evaluations(&self) -> u64 {
        self.ctx.force_evaluations()
    }

    /// Advances one step; instability is reported as [`DynamicsError::Diverged`].
    pub fn step<P: Potential + ?Sized>(
        &mut self,
        s: &mut PhaseState,
        model: &P,
        stream: &mut NoiseStream,
    ) -> Result<(), DynamicsError> {
        let ctx = &mut self.ctx;
        match &self.kernel {
            Kernel::Baoab(p) => step_baoab(s, p, ctx, model, stream),
            Kernel::Aboba(p) => step_aboba(s, p, ctx, model, stream),
            Kernel::Spv(p) => step_spv(s, p, ctx, model, stream),
            Kernel::Bbk(p) => step_bbk(s, p, ctx, model, stream),
            Kernel::EulerMaruyama(p) => step_euler_maruyama(s, p, ctx, model, stream),
            Kernel::BaoabLimit(p) => step_baoab_limit(s, p, ctx, model, stream),
            Kernel::Split(scheme) => scheme.step(s, ctx, model, stream),
        }
        .map_err(|e| match e {
            // A collision at a huge stepsize is an instability, not a bug.
            DynamicsError::Model(ModelError::DegenerateConfiguration { .. }) => {
                DynamicsError::Diverged { step: self.steps + 1 }
            }
            other => other,
        })?;
        self.steps += 1;
        if !s.is_stable() {
            return Err(DynamicsError::Diverged { step: self.steps });
        }
        Ok(())
    }
}
