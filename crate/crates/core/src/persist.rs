//! Shooting verification of persisting periodic orbits.
//!
//! A periodic orbit of the forced slow flow with the forcing period
//! `T = 2 pi / P` is a fixed point of the stroboscopic map over `T`. Newton
//! on `x -> map(x) - x` is seeded from the unperturbed family orbit at the
//! Melnikov root and the converged orbit is compared with that prediction.
//!
//! The displacement map is rank deficient near the family (the time-`T` map
//! of the unperturbed flow is the identity on it), so the Newton correction
//! is the minimum-norm least-squares step. Larger `eps` are reached by
//! doubling `eps` from a small value and extrapolating each fixed point
//! linearly in `eps`.

use nalgebra::{DMatrix, Matrix3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::melnikov::MelnikovRoot;
use crate::numerics::{self, IntegratorSpec, LinearSolve, NumericsError, RootSpec};
use crate::slowflow::{self, SlowFlowError, SlowFlowParams, SlowFlowState};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum PersistError {
    #[error("invalid shooting problem: {0}")]
    InvalidProblem(String),
    #[error("shooting at eps = {eps} did not converge: {reason}")]
    NoConvergence { eps: f64, reason: String },
    #[error(transparent)]
    SlowFlow(#[from] SlowFlowError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, PersistError>;

/// Time-`T` flow of the forced slow flow, `T = 2 pi / P`.
pub fn poincare_map(x: &SlowFlowState, params: &SlowFlowParams, spec: &IntegratorSpec) -> Result<SlowFlowState> {
    let y = numerics::flow_map(slowflow::slow_flow_field(*params), &x.to_array(), (0.0, params.period()), spec)?;
    Ok(SlowFlowState::from_slice(&y))
}

/// Central-difference Jacobian of [`poincare_map`] with steps
/// `rel_step * (1 + |x_i|)`.
pub fn monodromy(x: &SlowFlowState, params: &SlowFlowParams, spec: &IntegratorSpec, rel_step: f64) -> Result<Matrix3<f64>> {
    let base = x.to_array();
    let mut m = Matrix3::zeros();
    for c in 0..3 {
        let h = rel_step * (1.0 + base[c].abs());
        let mut plus = base;
        plus[c] += h;
        let mut minus = base;
        minus[c] -= h;
        let fp = poincare_map(&SlowFlowState::from_slice(&plus), params, spec)?.to_array();
        let fm = poincare_map(&SlowFlowState::from_slice(&minus), params, spec)?.to_array();
        for r in 0..3 {
            m[(r, c)] = (fp[r] - fm[r]) / (2.0 * h);
        }
    }
    Ok(m)
}

/// Moduli of the eigenvalues of `m`, sorted descending.
pub fn floquet_moduli(m: &Matrix3<f64>) -> [f64; 3] {
    let ev = m.complex_eigenvalues();
    let mut out = [ev[0].norm(), ev[1].norm(), ev[2].norm()];
    out.sort_by(|a, b| b.total_cmp(a));
    out
}

/// What Newton solves for.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Unknowns {
    /// The initial state `(rho, theta, delta)` with the forcing phase fixed.
    State,
    /// The forcing phase `beta1` and `(theta, delta)`, with the initial
    /// `rho` pinned at the predicted amplitude.
    PhaseAndAngles,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ShootingProblem {
    /// Forced parameters; `eps`, the weights and `beta1` come from here.
    pub params: SlowFlowParams,
    /// Amplitude of the predicted family orbit.
    pub rho0: f64,
    pub unknowns: Unknowns,
}

impl ShootingProblem {
    pub fn new(params: SlowFlowParams, rho0: f64) -> Result<Self> {
        let p = Self {
            params,
            rho0,
            unknowns: Unknowns::State,
        };
        p.seed()?;
        Ok(p)
    }

    /// Forcing weights and phase taken from a Melnikov root.
    pub fn from_root(root: &MelnikovRoot, base: &SlowFlowParams, eps: f64) -> Result<Self> {
        let params = base.with_forcing(eps, root.mu1_0, root.mu2_0, root.beta1_0)?;
        Self::new(params, root.rho_0)
    }

    pub fn with_unknowns(mut self, unknowns: Unknowns) -> Self {
        self.unknowns = unknowns;
        self
    }

    /// Family orbit point at `tau = 0`.
    pub fn seed(&self) -> Result<SlowFlowState> {
        let s = slowflow::family_initial_state(self.rho0, &self.params)?;
        if !(s.theta > 0.0 && s.theta < std::f64::consts::FRAC_PI_2 && s.delta > 0.0 && s.delta < std::f64::consts::PI) {
            return Err(PersistError::InvalidProblem(format!("seed {s:?} leaves the open angle domain")));
        }
        Ok(s)
    }

    fn with_eps(&self, eps: f64) -> Self {
        Self {
            params: self.params.with_eps(eps),
            ..*self
        }
    }

    fn unknown_vector(&self, x: &SlowFlowState) -> Vec<f64> {
        match self.unknowns {
            Unknowns::State => x.to_array().to_vec(),
            Unknowns::PhaseAndAngles => vec![self.params.beta1, x.theta, x.delta],
        }
    }

    fn split(&self, u: &[f64]) -> (SlowFlowParams, SlowFlowState) {
        match self.unknowns {
            Unknowns::State => (self.params, SlowFlowState::from_slice(u)),
            Unknowns::PhaseAndAngles => (self.params.with_beta1(u[0]), SlowFlowState::new(self.rho0, u[1], u[2])),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ShootingSpec {
    pub integrator: IntegratorSpec,
    pub root: RootSpec,
    /// Relative step for the reported monodromy.
    pub monodromy_step: f64,
    /// Uniform samples over one period for the distance to the prediction.
    pub distance_samples: usize,
    /// Smallest fraction of the target `eps` the ladder may start from.
    pub ladder_floor: f64,
}

impl Default for ShootingSpec {
    fn default() -> Self {
        Self {
            integrator: IntegratorSpec::rk45(1e-12),
            root: RootSpec {
                residual_tol: 1e-9,
                step_tol: 1e-15,
                max_iter: 40,
                fd_jacobian_step: 1e-7,
                linear_solve: LinearSolve::MinNorm { rcond: 1e-8 },
            },
            monodromy_step: 1e-7,
            distance_samples: 2000,
            ladder_floor: 1.0 / 1024.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Status {
    Converged,
    /// Filled from the closed-form family without shooting (`eps = 0`).
    Analytic,
    Failed,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PersistenceResult {
    pub eps: f64,
    pub status: Status,
    /// Forcing phase of the orbit (differs from the root only when the
    /// phase is an unknown).
    pub beta1: f64,
    pub fixed_point: SlowFlowState,
    /// `|map(x*) - x*|_inf`.
    pub residual: f64,
    /// Sup-norm distance to the predicted family orbit over one period.
    pub distance: f64,
    pub floquet_moduli: [f64; 3],
    pub newton_iterations: usize,
    pub message: Option<String>,
}

impl PersistenceResult {
    fn analytic(problem: &ShootingProblem) -> Result<Self> {
        Ok(Self {
            eps: problem.params.eps,
            status: Status::Analytic,
            beta1: problem.params.beta1,
            fixed_point: problem.seed()?,
            residual: 0.0,
            distance: 0.0,
            floquet_moduli: [1.0; 3],
            newton_iterations: 0,
            message: None,
        })
    }

    fn failed(problem: &ShootingProblem, err: &PersistError) -> Self {
        let nan = f64::NAN;
        Self {
            eps: problem.params.eps,
            status: Status::Failed,
            beta1: problem.params.beta1,
            fixed_point: SlowFlowState::new(nan, nan, nan),
            residual: residual_of(err),
            distance: nan,
            floquet_moduli: [nan; 3],
            newton_iterations: 0,
            message: Some(err.to_string()),
        }
    }
}

fn residual_of(err: &PersistError) -> f64 {
    match err {
        PersistError::Numerics(NumericsError::MaxIter { residual, .. }) => *residual,
        _ => f64::NAN,
    }
}

fn newton(problem: &ShootingProblem, guess: &[f64], spec: &ShootingSpec) -> Result<(Vec<f64>, usize)> {
    let residual = |u: &[f64]| -> Result<Vec<f64>> {
        let (params, x) = problem.split(u);
        let y = poincare_map(&x, &params, &spec.integrator)?.to_array();
        let x = x.to_array();
        Ok((0..3).map(|i| y[i] - x[i]).collect())
    };
    let root = numerics::find_root_nd(residual, guess, &spec.root)?;
    Ok((root.x, root.iterations))
}

fn extrapolate(seed: &[f64], from: &[f64], ratio: f64) -> Vec<f64> {
    seed.iter().zip(from).map(|(s, x)| s + ratio * (x - s)).collect()
}

/// Newton from `guess`; if that fails, reaches the target `eps` through a
/// doubling ladder started from a fraction of it.
fn solve_with_ladder(problem: &ShootingProblem, guess: &[f64], spec: &ShootingSpec) -> Result<(Vec<f64>, usize)> {
    let target = problem.params.eps;
    let first = match newton(problem, guess, spec) {
        Ok(done) => return Ok(done),
        Err(e) => e,
    };
    let seed = problem.unknown_vector(&problem.seed()?);
    let mut frac = 0.125;
    let (mut eps, mut x) = loop {
        if frac < spec.ladder_floor {
            return Err(PersistError::NoConvergence {
                eps: target,
                reason: format!("direct Newton failed ({first}) and no ladder start converged"),
            });
        }
        let eps = target * frac;
        if let Ok((x, _)) = newton(&problem.with_eps(eps), &seed, spec) {
            break (eps, x);
        }
        frac *= 0.5;
    };
    let mut iterations = 0;
    while eps.abs() < target.abs() {
        let next = if (2.0 * eps).abs() >= target.abs() { target } else { 2.0 * eps };
        let rung = problem.with_eps(next);
        let guess = extrapolate(&seed, &x, next / eps);
        let (xn, it) = newton(&rung, &guess, spec)
            .or_else(|_| newton(&rung, &seed, spec))
            .map_err(|e| PersistError::NoConvergence {
                eps: target,
                reason: format!("ladder stalled at eps = {next}: {e}"),
            })?;
        x = xn;
        eps = next;
        iterations = it;
    }
    Ok((x, iterations))
}

fn finish(problem: &ShootingProblem, u: &[f64], iterations: usize, spec: &ShootingSpec) -> Result<PersistenceResult> {
    let (params, x) = problem.split(u);
    let y = poincare_map(&x, &params, &spec.integrator)?;
    let residual = numerics::sup_norm(&[y.rho - x.rho, y.theta - x.theta, y.delta - x.delta]);
    let distance = distance_to_prediction(&x, &params, problem.rho0, spec)?;
    let m = monodromy(&x, &params, &spec.integrator, spec.monodromy_step)?;
    Ok(PersistenceResult {
        eps: params.eps,
        status: Status::Converged,
        beta1: params.beta1,
        fixed_point: x,
        residual,
        distance,
        floquet_moduli: floquet_moduli(&m),
        newton_iterations: iterations,
        message: None,
    })
}

/// Sup-norm distance over one period between the forced orbit through `x`
/// and the family orbit at `rho0`.
pub fn distance_to_prediction(x: &SlowFlowState, params: &SlowFlowParams, rho0: f64, spec: &ShootingSpec) -> Result<f64> {
    let t = params.period();
    let traj = numerics::integrate(slowflow::slow_flow_field(*params), &x.to_array(), (0.0, t), &spec.integrator)?;
    let n = spec.distance_samples.max(1);
    let mut y = [0.0; 3];
    let mut sup = 0.0_f64;
    for i in 0..=n {
        let tau = t * i as f64 / n as f64;
        traj.eval_into(tau, &mut y);
        let (theta, delta) = slowflow::periodic_family(rho0, tau, params)?;
        sup = sup.max((y[0] - rho0).abs()).max((y[1] - theta).abs()).max((y[2] - delta).abs());
    }
    Ok(sup)
}

/// Finds the periodic orbit near the family at `problem.rho0`. At `eps = 0`
/// the family point itself is returned without shooting.
pub fn shoot_periodic(problem: &ShootingProblem, spec: &ShootingSpec) -> Result<PersistenceResult> {
    let seed = problem.seed()?;
    if problem.params.eps == 0.0 {
        return PersistenceResult::analytic(problem);
    }
    let (u, it) = solve_with_ladder(problem, &problem.unknown_vector(&seed), spec)?;
    finish(problem, &u, it, spec)
}

/// Shoots at each `eps` in turn (largest first), seeding every row after
/// the first from the previous fixed point rescaled to the new `eps`.
/// Failed rows are kept with [`Status::Failed`] and do not stop the sweep.
pub fn epsilon_sweep(
    root: &MelnikovRoot,
    eps_list: &[f64],
    base: &SlowFlowParams,
    unknowns: Unknowns,
    spec: &ShootingSpec,
) -> Result<Vec<PersistenceResult>> {
    if eps_list.windows(2).any(|w| !(w[0].abs() > w[1].abs())) {
        return Err(PersistError::InvalidProblem("eps list must be strictly decreasing in magnitude".into()));
    }
    let mut rows = Vec::with_capacity(eps_list.len());
    let mut previous: Option<(f64, Vec<f64>)> = None;
    for &eps in eps_list {
        let problem = ShootingProblem::from_root(root, base, eps)?.with_unknowns(unknowns);
        let seed = problem.unknown_vector(&problem.seed()?);
        if eps == 0.0 {
            rows.push(PersistenceResult::analytic(&problem)?);
            continue;
        }
        let guess = match &previous {
            Some((pe, px)) => extrapolate(&seed, px, eps / pe),
            None => seed,
        };
        let outcome = solve_with_ladder(&problem, &guess, spec).and_then(|(u, it)| {
            let r = finish(&problem, &u, it, spec)?;
            Ok((u, r))
        });
        match outcome {
            Ok((u, r)) => {
                previous = Some((eps, u));
                rows.push(r);
            }
            Err(e) => rows.push(PersistenceResult::failed(&problem, &e)),
        }
    }
    Ok(rows)
}

/// Least-squares slope of `ln distance` against `ln eps` over the converged
/// rows with positive `eps` and distance; `None` with fewer than two.
pub fn loglog_slope(rows: &[PersistenceResult]) -> Option<f64> {
    let pts: Vec<(f64, f64)> = rows
        .iter()
        .filter(|r| r.status == Status::Converged && r.eps != 0.0 && r.distance > 0.0)
        .map(|r| (r.eps.abs().ln(), r.distance.ln()))
        .collect();
    if pts.len() < 2 {
        return None;
    }
    let n = pts.len() as f64;
    let mx = pts.iter().map(|p| p.0).sum::<f64>() / n;
    let my = pts.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = pts.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = pts.iter().map(|p| (p.0 - mx).powi(2)).sum();
    (sxx > 0.0).then(|| sxy / sxx)
}

/// Eigenvalue moduli of a general square matrix, sorted descending.
pub fn spectrum_moduli(m: &DMatrix<f64>) -> Vec<f64> {
    let mut v: Vec<f64> = m.complex_eigenvalues().iter().map(|c| c.norm()).collect();
    v.sort_by(|a, b| b.total_cmp(a));
    v
}
