//! Averaged two-mode slow flow in the amplitude/angle/phase variables
//! `(rho, theta, delta)`.
//!
//! The perturbed system carries harmonic forcing of size `eps`; at `eps = 0`
//! `rho` is frozen and `(theta, delta)` follow an integrable planar flow whose
//! orbits are the level sets of `I = sin 2theta sin delta`. For every
//! `rho > 2 k P^2 sqrt(k)` the level `K(rho) = 4 k^3 P^4 / rho^2` carries an
//! orbit of period exactly `2 pi / P`; that one-parameter family is the
//! backbone of the Melnikov analysis.

use std::f64::consts::{FRAC_PI_2, PI};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, FieldFault, IntegratorSpec, NumericsError, RootSpec, Trajectory};

/// Distance from `theta in {0, pi/2}` below which the forcing terms are
/// treated as singular.
pub const SINGULAR_GUARD: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SlowFlowError {
    #[error("invalid slow-flow parameters: {0}")]
    InvalidParams(String),
    #[error("forcing terms singular at theta = {theta} (rho = {rho})")]
    SingularDivisor { rho: f64, theta: f64 },
    #[error("first-integral level {0} outside (0, 1)")]
    LevelOutOfRange(f64),
    #[error("rho = {rho} does not exceed the family threshold {threshold}")]
    BelowThreshold { rho: f64, threshold: f64 },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, SlowFlowError>;

/// Parameters of the forced slow flow. Both modal frequencies equal
/// `base_freq` and the averaging frequency is `harmonic * base_freq`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowFlowParams {
    pub base_freq: f64,
    pub harmonic: u32,
    pub eps: f64,
    pub mu1: f64,
    pub mu2: f64,
    pub beta1: f64,
}

impl SlowFlowParams {
    pub fn new(base_freq: f64, harmonic: u32, eps: f64, mu1: f64, mu2: f64, beta1: f64) -> Result<Self> {
        let p = Self {
            base_freq,
            harmonic,
            eps,
            mu1,
            mu2,
            beta1,
        };
        p.validate()?;
        Ok(p)
    }

    /// Unforced flow (`eps = 0`, `mu = (0, 1)`, `beta1 = 0`).
    pub fn unforced(base_freq: f64, harmonic: u32) -> Result<Self> {
        Self::new(base_freq, harmonic, 0.0, 0.0, 1.0, 0.0)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.base_freq > 0.0 && self.base_freq.is_finite()) {
            return Err(SlowFlowError::InvalidParams(format!(
                "base frequency must be positive, got {}",
                self.base_freq
            )));
        }
        if self.harmonic == 0 {
            return Err(SlowFlowError::InvalidParams("harmonic k must be at least 1".into()));
        }
        if ![self.eps, self.mu1, self.mu2, self.beta1].iter().all(|v| v.is_finite()) {
            return Err(SlowFlowError::InvalidParams("non-finite parameter".into()));
        }
        let circle = self.mu1 * self.mu1 + self.mu2 * self.mu2 - 1.0;
        if circle.abs() > 1e-12 {
            return Err(SlowFlowError::InvalidParams(format!(
                "forcing weights must satisfy mu1^2 + mu2^2 = 1 (off by {circle:e})"
            )));
        }
        Ok(())
    }

    pub fn with_forcing(mut self, eps: f64, mu1: f64, mu2: f64, beta1: f64) -> Result<Self> {
        self.eps = eps;
        self.mu1 = mu1;
        self.mu2 = mu2;
        self.beta1 = beta1;
        self.validate()?;
        Ok(self)
    }

    pub fn with_eps(mut self, eps: f64) -> Self {
        self.eps = eps;
        self
    }

    pub fn with_beta1(mut self, beta1: f64) -> Self {
        self.beta1 = beta1;
        self
    }

    /// `k^3 P^3`, the cube of the averaging frequency.
    fn omega_cubed(&self) -> f64 {
        let k = self.harmonic as f64;
        (k * self.base_freq).powi(3)
    }

    /// Forcing period `T = 2 pi / P`.
    pub fn period(&self) -> f64 {
        2.0 * PI / self.base_freq
    }

    /// Family threshold `2 k P^2 sqrt(k)`.
    pub fn threshold_rho(&self) -> f64 {
        let k = self.harmonic as f64;
        2.0 * k * self.base_freq * self.base_freq * k.sqrt()
    }

    /// `K(rho) = 4 k^3 P^4 / rho^2`.
    pub fn level_for_rho(&self, rho: f64) -> f64 {
        let k = self.harmonic as f64;
        4.0 * k.powi(3) * self.base_freq.powi(4) / (rho * rho)
    }

    /// Inverse of [`level_for_rho`](Self::level_for_rho).
    pub fn rho_for_level(&self, level: f64) -> f64 {
        let k = self.harmonic as f64;
        (4.0 * k.powi(3) * self.base_freq.powi(4) / level).sqrt()
    }

    /// `dK/drho = -8 k^3 P^4 / rho^3`.
    pub fn level_derivative(&self, rho: f64) -> f64 {
        let k = self.harmonic as f64;
        -8.0 * k.powi(3) * self.base_freq.powi(4) / rho.powi(3)
    }

    /// Factor `rho^2 / (8 k^3 P^3)` converting `tau` into the rescaled time `tau2`.
    pub fn tau2_rate(&self, rho: f64) -> f64 {
        rho * rho / (8.0 * self.omega_cubed())
    }

    fn check_family(&self, rho: f64) -> Result<()> {
        let threshold = self.threshold_rho();
        if !(rho > threshold) || !rho.is_finite() {
            return Err(SlowFlowError::BelowThreshold { rho, threshold });
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SlowFlowState {
    pub rho: f64,
    pub theta: f64,
    pub delta: f64,
}

impl SlowFlowState {
    pub fn new(rho: f64, theta: f64, delta: f64) -> Self {
        Self { rho, theta, delta }
    }

    pub fn to_array(self) -> [f64; 3] {
        [self.rho, self.theta, self.delta]
    }

    pub fn from_slice(v: &[f64]) -> Self {
        Self::new(v[0], v[1], v[2])
    }

    pub fn first_integral(&self) -> f64 {
        first_integral(self.theta, self.delta)
    }
}

/// A member of the `2 pi / P`-periodic family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OrbitFamilyPoint {
    pub rho: f64,
    pub level: f64,
    pub period: f64,
}

impl OrbitFamilyPoint {
    pub fn new(rho: f64, params: &SlowFlowParams) -> Result<Self> {
        params.check_family(rho)?;
        Ok(Self {
            rho,
            level: params.level_for_rho(rho),
            period: params.period(),
        })
    }

    /// `rho - 2 k P^2 sqrt(k)`.
    pub fn threshold_margin(&self, params: &SlowFlowParams) -> f64 {
        self.rho - params.threshold_rho()
    }
}

/// Inverse cotangent with range `(0, pi)`, continuous through `acot(0) = pi/2`.
pub fn acot(x: f64) -> f64 {
    1.0_f64.atan2(x)
}

/// `acos` with its argument clamped to `[-1, 1]` to absorb rounding.
pub(crate) fn acos_clamped(x: f64) -> f64 {
    debug_assert!(x.abs() <= 1.0 + 1e-12, "acos argument {x}");
    x.clamp(-1.0, 1.0).acos()
}

/// Right-hand side of the forced slow flow at `(state, tau)`.
pub fn slow_flow_rhs(state: &SlowFlowState, tau: f64, params: &SlowFlowParams) -> Result<SlowFlowState> {
    let SlowFlowState { rho, theta, delta } = *state;
    let (st, ct) = theta.sin_cos();
    let w3 = params.omega_cubed();
    let mut d_rho = 0.0;
    let mut d_theta = -(rho * rho / (16.0 * w3)) * (2.0 * theta).sin() * (2.0 * delta).sin();
    let mut d_delta = (rho * rho / (4.0 * w3)) * (2.0 * theta).cos() * delta.sin().powi(2);

    if params.eps != 0.0 {
        if st.abs() < SINGULAR_GUARD || ct.abs() < SINGULAR_GUARD || rho == 0.0 {
            return Err(SlowFlowError::SingularDivisor { rho, theta });
        }
        let p = params.base_freq;
        let k = params.harmonic as f64;
        let eps = params.eps;
        let cp = (p * tau).cos();
        let phase1 = k * p * tau + params.beta1;
        let phase2 = phase1 + delta;
        let (s1, c1) = phase1.sin_cos();
        let (s2, c2) = phase2.sin_cos();
        let (mu1, mu2) = (params.mu1, params.mu2);

        d_rho = -eps * mu1 * st * cp * c1 - eps * mu2 * ct * cp * c2;
        d_theta += -eps * mu1 * (ct / rho) * cp * c1 + eps * mu2 * (st / rho) * cp * c2;
        d_delta += -eps * mu1 / (rho * st) * cp * s1 + eps * mu2 / (rho * ct) * cp * s2;
    }
    Ok(SlowFlowState::new(d_rho, d_theta, d_delta))
}

/// The slow flow as a vector field on `[rho, theta, delta]` for the integrators.
pub fn slow_flow_field(
    params: SlowFlowParams,
) -> impl FnMut(f64, &[f64], &mut [f64]) -> std::result::Result<(), FieldFault> {
    move |tau, y, dy| {
        let d = slow_flow_rhs(&SlowFlowState::from_slice(y), tau, &params)
            .map_err(|e| FieldFault(e.to_string()))?;
        dy[0] = d.rho;
        dy[1] = d.theta;
        dy[2] = d.delta;
        Ok(())
    }
}

/// Unforced `(theta, delta)` flow in the rescaled time `tau2`.
pub fn unperturbed_rhs_tau2(theta: f64, delta: f64) -> (f64, f64) {
    (
        -0.5 * (2.0 * theta).sin() * (2.0 * delta).sin(),
        2.0 * (2.0 * theta).cos() * delta.sin().powi(2),
    )
}

pub fn first_integral(theta: f64, delta: f64) -> f64 {
    (2.0 * theta).sin() * delta.sin()
}

/// Closed-form orbit of the `tau2` flow on level `level`, passing through
/// `(theta0, pi/2)` at `tau2 = 0` with `sin 2 theta0 = level`, `theta0 < pi/4`.
pub fn exact_solution_tau2(level: f64, tau2: f64) -> Result<(f64, f64)> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SlowFlowError::LevelOutOfRange(level));
    }
    let root = (1.0 - level * level).sqrt();
    let arg = 2.0 * level * tau2;
    let theta = 0.5 * acos_clamped(root * arg.cos());
    let delta = PI - acot(root / level * arg.sin());
    Ok((theta, delta))
}

/// Period of the closed-form `tau2` orbit, `pi / level`.
pub fn period_tau2(level: f64) -> Result<f64> {
    if !(level > 0.0 && level < 1.0) {
        return Err(SlowFlowError::LevelOutOfRange(level));
    }
    Ok(PI / level)
}

/// The `2 pi / P`-periodic orbit at amplitude `rho`, evaluated at `tau`.
pub fn periodic_family(rho: f64, tau: f64, params: &SlowFlowParams) -> Result<(f64, f64)> {
    params.check_family(rho)?;
    let k = params.harmonic as f64;
    let p = params.base_freq;
    let r = (rho.powi(4) - 16.0 * k.powi(6) * p.powi(8)).sqrt();
    let theta = 0.5 * acos_clamped(r / (rho * rho) * (p * tau).cos());
    let delta = PI - acot(r / (4.0 * k.powi(3) * p.powi(4)) * (p * tau).sin());
    Ok((theta, delta))
}

/// Starting point of the family orbit at `tau = 0`.
pub fn family_initial_state(rho: f64, params: &SlowFlowParams) -> Result<SlowFlowState> {
    let (theta, delta) = periodic_family(rho, 0.0, params)?;
    Ok(SlowFlowState::new(rho, theta, delta))
}

/// Pointwise `rho -> infinity` limit of the family: `theta` is the tent
/// `P tau / 2`, `pi - P tau / 2`, and `delta` jumps between `pi` and `0`,
/// taking `pi/2` at multiples of `pi / P`.
pub fn periodic_family_limit(tau: f64, base_freq: f64) -> (f64, f64) {
    let period = 2.0 * PI / base_freq;
    let t = tau.rem_euclid(period);
    let half = PI / base_freq;
    let theta = if t <= half {
        0.5 * base_freq * t
    } else {
        PI - 0.5 * base_freq * t
    };
    let on_grid = |x: f64| x.abs() <= 1e-12 * period.max(1.0);
    let delta = if on_grid(t) || on_grid(t - half) || on_grid(t - period) {
        FRAC_PI_2
    } else if t < half {
        PI
    } else {
        0.0
    };
    (theta, delta)
}

/// Integrates the unforced flow over one forcing period from the family's
/// `tau = 0` point and returns the sup-norm distance to that start.
pub fn family_residual(rho: f64, params: &SlowFlowParams, spec: &IntegratorSpec) -> Result<f64> {
    let start = family_initial_state(rho, params)?;
    let unforced = params.with_eps(0.0);
    let y = numerics::flow_map(slow_flow_field(unforced), &start.to_array(), (0.0, params.period()), spec)?;
    Ok(numerics::sup_norm(&[y[0] - start.rho, y[1] - start.theta, y[2] - start.delta]))
}

/// Vector field of the unforced `tau2` flow on `[theta, delta]`.
pub fn unperturbed_field_tau2(_t: f64, y: &[f64], dy: &mut [f64]) -> std::result::Result<(), FieldFault> {
    let (a, b) = unperturbed_rhs_tau2(y[0], y[1]);
    dy[0] = a;
    dy[1] = b;
    Ok(())
}

/// Integrates the unforced `tau2` flow from `(theta0, pi/2)` over `[0, span]`.
pub fn integrate_orbit_tau2(theta0: f64, span: f64, spec: &IntegratorSpec) -> Result<Trajectory> {
    Ok(numerics::integrate(unperturbed_field_tau2, &[theta0, FRAC_PI_2], (0.0, span), spec)?)
}

/// Measures the return time of the unforced `tau2` orbit through
/// `(theta0, pi/2)` by locating the next upward crossing of `delta = pi/2`
/// on the dense output.
pub fn measure_period_tau2(theta0: f64, spec: &IntegratorSpec) -> Result<f64> {
    let level = (2.0 * theta0).sin();
    let expected = period_tau2(level)?;
    let traj = integrate_orbit_tau2(theta0, 1.25 * expected, spec)?;
    let g = |t: f64| traj.eval(t).map(|y| y[1] - FRAC_PI_2).unwrap_or(f64::NAN);
    let root_spec = RootSpec {
        residual_tol: 1e-15,
        step_tol: 1e-15,
        max_iter: 200,
        ..RootSpec::default()
    };
    // Scan past the half-period downward crossing for the upward one.
    let n = 400;
    let (t0, t1) = (0.75 * expected, 1.25 * expected);
    let mut prev = (t0, g(t0));
    for i in 1..=n {
        let t = t0 + (t1 - t0) * i as f64 / n as f64;
        let v = g(t);
        if prev.1 < 0.0 && v >= 0.0 {
            return Ok(numerics::find_root_1d(g, (prev.0, t), &root_spec)?);
        }
        prev = (t, v);
    }
    Err(SlowFlowError::Numerics(NumericsError::NoSignChange {
        a: t0,
        b: t1,
        fa: g(t0),
        fb: g(t1),
    }))
}
