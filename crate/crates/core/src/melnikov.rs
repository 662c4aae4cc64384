//! Melnikov analysis of the `2 pi / P`-periodic family of the slow flow.
//!
//! The forcing enters the slow flow through six fields `g_ij`; integrating
//! them against the gradient of the first integral along a family orbit gives
//! the four reduced components `Mbar_ij(beta1, rho)`. Roots of
//! `Mtilde = Mbar_11 Mbar_22 - Mbar_12 Mbar_21` together with a unit null
//! vector `(mu1, mu2)` of `[Mbar_ij]` locate the forcing weights for which
//! a periodic orbit persists.

use std::f64::consts::{FRAC_PI_2, PI};

use nalgebra::Matrix2;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, IntegratorSpec, NumericsError, QuadratureSpec, RootSpec};
use crate::slowflow::{self, SlowFlowError, SlowFlowParams};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum MelnikovError {
    #[error("invalid Melnikov input: {0}")]
    InvalidInput(String),
    #[error("no root of Mtilde near beta1 = {beta1} at rho = {rho}")]
    NoRoot { beta1: f64, rho: f64 },
    #[error(transparent)]
    SlowFlow(#[from] SlowFlowError),
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, MelnikovError>;

/// One of the six perturbation fields `g_ij`, `i in {1, 2, 3}`, `j in {1, 2}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GField {
    pub i: u8,
    pub j: u8,
    params: SlowFlowParams,
}

impl GField {
    /// `g_ij(rho, theta, delta, tau)`; none of the fields depends on `rho`.
    pub fn eval(&self, _rho: f64, theta: f64, delta: f64, tau: f64) -> f64 {
        g_value(self.i, self.j, theta, delta, tau, self.params.beta1, &self.params)
    }
}

/// The six perturbation fields for `params`, ordered
/// `g11, g12, g21, g22, g31, g32`.
pub fn g_fields(params: &SlowFlowParams) -> [GField; 6] {
    let f = |i, j| GField { i, j, params: *params };
    [f(1, 1), f(1, 2), f(2, 1), f(2, 2), f(3, 1), f(3, 2)]
}

fn g_value(i: u8, j: u8, theta: f64, delta: f64, tau: f64, beta1: f64, params: &SlowFlowParams) -> f64 {
    let p = params.base_freq;
    let kp = params.harmonic as f64 * p;
    let cp = (p * tau).cos();
    let phase = kp * tau + beta1;
    match (i, j) {
        (1, 1) => -theta.cos() * cp * phase.cos(),
        (1, 2) => theta.sin() * cp * (phase + delta).cos(),
        (2, 1) => -cp * phase.sin() / theta.sin(),
        (2, 2) => cp * (phase + delta).sin() / theta.cos(),
        (3, 1) => -theta.sin() * cp * phase.cos(),
        (3, 2) => -theta.cos() * cp * (phase + delta).cos(),
        _ => unreachable!("g fields are indexed by i in 1..=3, j in 1..=2"),
    }
}

/// The four reduced Melnikov components at one `(beta1, rho)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelnikovBar {
    pub m11: f64,
    pub m12: f64,
    pub m21: f64,
    pub m22: f64,
}

impl MelnikovBar {
    pub fn tilde(&self) -> f64 {
        self.m11 * self.m22 - self.m12 * self.m21
    }

    pub fn matrix(&self) -> Matrix2<f64> {
        Matrix2::new(self.m11, self.m12, self.m21, self.m22)
    }

    /// `(mu1 Mbar_11 + mu2 Mbar_12, mu1 Mbar_21 + mu2 Mbar_22)`.
    pub fn apply(&self, mu1: f64, mu2: f64) -> [f64; 2] {
        [mu1 * self.m11 + mu2 * self.m12, mu1 * self.m21 + mu2 * self.m22]
    }

    pub fn as_array(&self) -> [f64; 4] {
        [self.m11, self.m12, self.m21, self.m22]
    }

    fn from_array(v: [f64; 4]) -> Self {
        Self {
            m11: v[0],
            m12: v[1],
            m21: v[2],
            m22: v[3],
        }
    }
}

/// Which encoding of the `Mbar_1j` integrands to use.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Form {
    Expanded,
    Gradient,
}

fn integrand(c: usize, form: Form, theta: f64, delta: f64, tau: f64, beta1: f64, params: &SlowFlowParams) -> f64 {
    let g = |i, j| g_value(i, j, theta, delta, tau, beta1, params);
    match (c, form) {
        (0, Form::Gradient) | (1, Form::Gradient) => {
            let j = c as u8 + 1;
            let (di_theta, di_delta) = grad_first_integral(theta, delta);
            di_theta * g(1, j) + di_delta * g(2, j)
        }
        (0, Form::Expanded) => {
            let p = params.base_freq;
            let phase = params.harmonic as f64 * p * tau + beta1;
            let cp = (p * tau).cos();
            -(2.0 * (2.0 * theta).cos() * delta.sin() * theta.cos() * cp * phase.cos()
                + 2.0 * theta.cos() * delta.cos() * cp * phase.sin())
        }
        (1, Form::Expanded) => {
            let p = params.base_freq;
            let phase = params.harmonic as f64 * p * tau + delta + beta1;
            let cp = (p * tau).cos();
            2.0 * (2.0 * theta).cos() * delta.sin() * theta.sin() * cp * phase.cos()
                + 2.0 * theta.sin() * delta.cos() * cp * phase.sin()
        }
        (2, _) => g(3, 1),
        (3, _) => g(3, 2),
        _ => unreachable!(),
    }
}

/// `(dI/dtheta, dI/ddelta)` for `I = sin 2theta sin delta`.
pub fn grad_first_integral(theta: f64, delta: f64) -> (f64, f64) {
    (2.0 * (2.0 * theta).cos() * delta.sin(), (2.0 * theta).sin() * delta.cos())
}

fn integrate_components<O>(beta1: f64, params: &SlowFlowParams, quad: &QuadratureSpec, form: Form, mut orbit: O) -> Result<MelnikovBar>
where
    O: FnMut(f64) -> (f64, f64),
{
    let t = params.period();
    let mut out = [0.0; 4];
    for (c, slot) in out.iter_mut().enumerate() {
        *slot = numerics::quad(
            |tau| {
                let (theta, delta) = orbit(tau);
                integrand(c, form, theta, delta, tau, beta1, params)
            },
            0.0,
            t,
            quad,
        )?;
    }
    Ok(MelnikovBar::from_array(out))
}

fn closed_form_orbit(rho: f64, params: &SlowFlowParams) -> Result<impl Fn(f64) -> (f64, f64) + '_> {
    slowflow::periodic_family(rho, 0.0, params)?;
    Ok(move |tau| slowflow::periodic_family(rho, tau, params).unwrap_or((f64::NAN, f64::NAN)))
}

/// Reduced components by quadrature along the closed-form family orbit at
/// `rho`, using the fully expanded integrands of `Mbar_11`, `Mbar_12`.
/// `params.beta1` is ignored in favour of `beta1`.
pub fn melnikov_bar(beta1: f64, rho: f64, params: &SlowFlowParams, quad: &QuadratureSpec) -> Result<MelnikovBar> {
    let orbit = closed_form_orbit(rho, params)?;
    integrate_components(beta1, params, quad, Form::Expanded, orbit)
}

/// Same components with `Mbar_1j = int (dI/dtheta g_1j + dI/ddelta g_2j)`
/// assembled from the `g` fields.
pub fn melnikov_bar_gradient_form(beta1: f64, rho: f64, params: &SlowFlowParams, quad: &QuadratureSpec) -> Result<MelnikovBar> {
    let orbit = closed_form_orbit(rho, params)?;
    integrate_components(beta1, params, quad, Form::Gradient, orbit)
}

/// Same components with the orbit taken from a numerical solution of the
/// unforced slow flow instead of the closed form.
pub fn melnikov_bar_on_trajectory(
    beta1: f64,
    rho: f64,
    params: &SlowFlowParams,
    quad: &QuadratureSpec,
    integrator: &IntegratorSpec,
) -> Result<MelnikovBar> {
    let start = slowflow::family_initial_state(rho, params)?;
    let unforced = params.with_eps(0.0);
    let traj = numerics::integrate(slowflow::slow_flow_field(unforced), &start.to_array(), (0.0, params.period()), integrator)?;
    let mut y = [0.0; 3];
    integrate_components(beta1, params, quad, Form::Expanded, |tau| {
        traj.eval_into(tau, &mut y);
        (y[1], y[2])
    })
}

/// `Mtilde = Mbar_11 Mbar_22 - Mbar_12 Mbar_21`.
pub fn melnikov_tilde(beta1: f64, rho: f64, params: &SlowFlowParams, quad: &QuadratureSpec) -> Result<f64> {
    Ok(melnikov_bar(beta1, rho, params, quad)?.tilde())
}

/// Unreduced Melnikov vector for the weights `(params.mu1, params.mu2)`:
/// `M_1 = Mbar_1 / rho - (dK/drho) Mbar_2` and `M_2 = Mbar_2`.
pub fn melnikov_full(beta1: f64, rho: f64, params: &SlowFlowParams, quad: &QuadratureSpec) -> Result<[f64; 2]> {
    let bar = melnikov_bar(beta1, rho, params, quad)?;
    let [m1, m2] = bar.apply(params.mu1, params.mu2);
    Ok([m1 / rho - params.level_derivative(rho) * m2, m2])
}

/// Closed-form `rho -> infinity` limits.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticMelnikov {
    pub bar: MelnikovBar,
    pub tilde: f64,
}

/// Limits of the four components and of `Mtilde` as `rho -> infinity`.
pub fn asymptotic_melnikov(beta1: f64, harmonic: u32, base_freq: f64) -> AsymptoticMelnikov {
    let k = harmonic as f64;
    let p = base_freq;
    let d = (16.0 * k.powi(4) - 40.0 * k * k + 9.0) * p;
    let (s, c) = beta1.sin_cos();
    let bar = MelnikovBar {
        m11: 16.0 * k * (4.0 * k * k - 5.0) * c / d,
        m12: -8.0 * (4.0 * k * k + 3.0) * s / d,
        m21: 4.0 * (4.0 * k * k + 3.0) * c / d,
        m22: -8.0 * k * (4.0 * k * k - 5.0) * s / d,
    };
    AsymptoticMelnikov {
        bar,
        tilde: -16.0 * (2.0 * beta1).sin() / ((4.0 * k * k - 9.0) * p * p),
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelnikovRow {
    pub beta1: f64,
    pub rho: f64,
    pub bar: MelnikovBar,
    pub tilde: f64,
}

/// Components on the tensor grid `betas x rhos`, row-major in `beta1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelnikovTable {
    pub betas: Vec<f64>,
    pub rhos: Vec<f64>,
    pub quadrature: QuadratureSpec,
    pub rows: Vec<MelnikovRow>,
}

impl MelnikovTable {
    pub fn get(&self, beta_index: usize, rho_index: usize) -> &MelnikovRow {
        &self.rows[beta_index * self.rhos.len() + rho_index]
    }
}

/// Fills the grid in parallel on the current rayon pool.
pub fn melnikov_table(betas: &[f64], rhos: &[f64], params: &SlowFlowParams, quad: &QuadratureSpec) -> Result<MelnikovTable> {
    if betas.is_empty() || rhos.is_empty() {
        return Err(MelnikovError::InvalidInput("Melnikov grid must be nonempty".into()));
    }
    let cells: Vec<(f64, f64)> = betas.iter().flat_map(|&b| rhos.iter().map(move |&r| (b, r))).collect();
    let rows = cells
        .par_iter()
        .map(|&(beta1, rho)| {
            let bar = melnikov_bar(beta1, rho, params, quad)?;
            Ok(MelnikovRow {
                beta1,
                rho,
                bar,
                tilde: bar.tilde(),
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(MelnikovTable {
        betas: betas.to_vec(),
        rhos: rhos.to_vec(),
        quadrature: *quad,
        rows,
    })
}

/// Settings for root location and continuation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RootSearchSpec {
    pub quadrature: QuadratureSpec,
    pub root: RootSpec,
    /// Initial half-width of the `beta1` bracket around the seed.
    pub bracket: f64,
    /// Ratio between consecutive `rho` in continuation.
    pub continuation_factor: f64,
    /// Singular values of `[Mbar_ij]` below this count as zero.
    pub null_tol: f64,
    /// Finite-difference steps `(h_beta, h_rho / rho)` for the gradients.
    pub fd_steps: (f64, f64),
}

impl Default for RootSearchSpec {
    fn default() -> Self {
        Self {
            quadrature: QuadratureSpec::simpson(1e-12),
            root: RootSpec {
                residual_tol: 1e-10,
                step_tol: 1e-13,
                max_iter: 100,
                ..RootSpec::default()
            },
            bracket: 0.1,
            continuation_factor: 0.9,
            null_tol: 1e-8,
            fd_steps: (1e-6, 1e-4),
        }
    }
}

/// Asymptotic branch a root belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Branch {
    /// `sin beta1 = 0`, weights near `(0, 1)`.
    Sin,
    /// `cos beta1 = 0`, weights near `(1, 0)`.
    Cos,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MelnikovRoot {
    pub beta1_0: f64,
    pub rho_0: f64,
    pub level: f64,
    pub mu1_0: f64,
    pub mu2_0: f64,
    pub bar: MelnikovBar,
    /// `|Mtilde(beta1_0, rho_0)|`.
    pub tilde_residual: f64,
    /// `|[Mbar_ij] (mu1_0, mu2_0)|_inf`.
    pub null_residual: f64,
    pub singular_values: [f64; 2],
    /// Nondegeneracy determinant built from the `(beta1, rho)` gradients.
    pub det_con1: f64,
    /// Both singular values of `[Mbar_ij]` fell below the null tolerance.
    pub degenerate: bool,
}

impl MelnikovRoot {
    pub fn branch(&self) -> Branch {
        if self.mu2_0.abs() >= self.mu1_0.abs() {
            Branch::Sin
        } else {
            Branch::Cos
        }
    }
}

/// Unit null vector of `m` for its smallest singular value, normalised to
/// `mu2 >= 0` (or `mu1 > 0` when `mu2` vanishes).
pub fn null_vector(m: &Matrix2<f64>) -> ((f64, f64), [f64; 2]) {
    let svd = m.svd(false, true);
    let v_t = svd.v_t.expect("requested V^T");
    let (imin, imax) = if svd.singular_values[0] <= svd.singular_values[1] {
        (0, 1)
    } else {
        (1, 0)
    };
    let (mut mu1, mut mu2) = (v_t[(imin, 0)], v_t[(imin, 1)]);
    let norm = mu1.hypot(mu2);
    mu1 /= norm;
    mu2 /= norm;
    if mu2.abs() <= 1e-12 {
        mu2 = 0.0;
        mu1 = 1.0;
    } else if mu2 < 0.0 {
        mu1 = -mu1;
        mu2 = -mu2;
    }
    ((mu1, mu2), [svd.singular_values[imin], svd.singular_values[imax]])
}

/// Nondegeneracy determinant: rows `mu1 grad Mbar_i1 + mu2 grad Mbar_i2`,
/// gradients in `(beta1, rho)` by central differences.
pub fn con1_determinant(
    beta1: f64,
    rho: f64,
    mu: (f64, f64),
    params: &SlowFlowParams,
    spec: &RootSearchSpec,
) -> Result<f64> {
    let hb = spec.fd_steps.0;
    let hr = spec.fd_steps.1 * rho;
    let q = &spec.quadrature;
    let eval = |b: f64, r: f64| melnikov_bar(b, r, params, q).map(|m| m.apply(mu.0, mu.1));
    let bp = eval(beta1 + hb, rho)?;
    let bm = eval(beta1 - hb, rho)?;
    let rp = eval(beta1, rho + hr)?;
    let rm = eval(beta1, rho - hr)?;
    let j = Matrix2::new(
        (bp[0] - bm[0]) / (2.0 * hb),
        (rp[0] - rm[0]) / (2.0 * hr),
        (bp[1] - bm[1]) / (2.0 * hb),
        (rp[1] - rm[1]) / (2.0 * hr),
    );
    Ok(j.determinant())
}

/// Locates a root of `Mtilde(., rho)` near `seed.0` at `rho = seed.1`, then
/// the null weights and the nondegeneracy determinant there.
pub fn solve_root_system(seed: (f64, f64), params: &SlowFlowParams, spec: &RootSearchSpec) -> Result<MelnikovRoot> {
    let (beta_seed, rho) = seed;
    let q = &spec.quadrature;
    let f = |b: f64| melnikov_tilde(b, rho, params, q).unwrap_or(f64::NAN);
    let beta1 = bracket_root(f, beta_seed, spec).ok_or(MelnikovError::NoRoot { beta1: beta_seed, rho })?;
    let bar = melnikov_bar(beta1, rho, params, q)?;
    let (mu, singular_values) = null_vector(&bar.matrix());
    let null_residual = numerics::sup_norm(&bar.apply(mu.0, mu.1));
    let det_con1 = con1_determinant(beta1, rho, mu, params, spec)?;
    Ok(MelnikovRoot {
        beta1_0: beta1,
        rho_0: rho,
        level: params.level_for_rho(rho),
        mu1_0: mu.0,
        mu2_0: mu.1,
        bar,
        tilde_residual: bar.tilde().abs(),
        null_residual,
        singular_values,
        det_con1,
        degenerate: singular_values[1] <= spec.null_tol,
    })
}

fn bracket_root<F: FnMut(f64) -> f64>(mut f: F, seed: f64, spec: &RootSearchSpec) -> Option<f64> {
    let f0 = f(seed);
    if f0.is_finite() && f0.abs() <= spec.root.residual_tol {
        return Some(seed);
    }
    let mut w = spec.bracket;
    while w <= FRAC_PI_2 {
        let (a, b) = (seed - w, seed + w);
        let (fa, fb) = (f(a), f(b));
        // Prefer the half bracket holding the seed's nearest sign change.
        let pick = if f0 * fa < 0.0 && (f0 * fb >= 0.0 || fa.abs() <= fb.abs()) {
            Some((a, seed))
        } else if f0 * fb < 0.0 {
            Some((seed, b))
        } else {
            None
        };
        if let Some(br) = pick {
            return numerics::find_root_1d(&mut f, br, &spec.root).ok();
        }
        w *= 2.0;
    }
    None
}

/// A root branch followed from large `rho` toward the family threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RootBranch {
    pub seed_beta1: f64,
    pub roots: Vec<MelnikovRoot>,
    /// Why continuation stopped before `rho_min`, if it did.
    pub stopped: Option<String>,
}

/// Follows the root seeded at `beta_seed` from `rho_start` down to `rho_min`
/// (clipped to the family threshold), shrinking `rho` geometrically by
/// `spec.continuation_factor` and reusing each root as the next seed.
pub fn continue_root(
    beta_seed: f64,
    rho_start: f64,
    rho_min: f64,
    params: &SlowFlowParams,
    spec: &RootSearchSpec,
) -> Result<RootBranch> {
    let factor = spec.continuation_factor;
    if !(factor > 0.0 && factor < 1.0) {
        return Err(MelnikovError::InvalidInput(format!("continuation factor must lie in (0, 1), got {factor}")));
    }
    let floor = rho_min.max(params.threshold_rho());
    if !(rho_start > floor) {
        return Err(MelnikovError::InvalidInput(format!(
            "continuation start rho = {rho_start} must exceed {floor}"
        )));
    }
    let mut roots = Vec::new();
    let mut stopped = None;
    let mut beta = beta_seed;
    let mut rho = rho_start;
    while rho > floor {
        match solve_root_system((beta, rho), params, spec) {
            Ok(r) => {
                beta = r.beta1_0;
                roots.push(r);
            }
            Err(e) => {
                stopped = Some(e.to_string());
                break;
            }
        }
        rho *= factor;
    }
    Ok(RootBranch {
        seed_beta1: beta_seed,
        roots,
        stopped,
    })
}

/// The four asymptotic roots `beta1 in {0, pi/2, pi, 3pi/2}`.
pub const ASYMPTOTIC_SEEDS: [f64; 4] = [0.0, FRAC_PI_2, PI, 3.0 * FRAC_PI_2];

/// Runs [`continue_root`] from every asymptotic seed in parallel.
pub fn continue_all_roots(rho_start: f64, rho_min: f64, params: &SlowFlowParams, spec: &RootSearchSpec) -> Result<Vec<RootBranch>> {
    ASYMPTOTIC_SEEDS
        .par_iter()
        .map(|&b| continue_root(b, rho_start, rho_min, params, spec))
        .collect()
}

/// Coefficients `(a, b, c, d)` of the limiting bifurcation system
/// `a sinG cosB - b cosG sinB = 0`, `c sinG cosB - d cosG sinB = 0`.
pub fn bifurcation_coefficients(harmonic: u32, base_freq: f64) -> [f64; 4] {
    let k = harmonic as f64;
    let d = (16.0 * k.powi(4) - 40.0 * k * k + 9.0) * base_freq;
    [
        16.0 * k * (4.0 * k * k - 5.0) / d,
        8.0 * (4.0 * k * k + 3.0) / d,
        4.0 * (4.0 * k * k + 3.0) / d,
        8.0 * k * (4.0 * k * k - 5.0) / d,
    ]
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BifurcationEval {
    pub residual: [f64; 2],
    /// Rows are equations, columns `(d/dGamma, d/dbeta1)`.
    pub jacobian: [[f64; 2]; 2],
    pub jacobian_det: f64,
    /// Determinant of the system viewed as linear in
    /// `(sinG cosB, cosG sinB)`, `-32 / ((4k^2 - 9) P^2)`.
    pub coefficient_det: f64,
}

/// Limiting bifurcation equations with `mu1 = sin Gamma`, `mu2 = cos Gamma`.
pub fn corollary_bifurcation(gamma: f64, beta1: f64, harmonic: u32, base_freq: f64) -> BifurcationEval {
    let [a, b, c, d] = bifurcation_coefficients(harmonic, base_freq);
    let (sg, cg) = gamma.sin_cos();
    let (sb, cb) = beta1.sin_cos();
    let residual = [a * sg * cb - b * cg * sb, c * sg * cb - d * cg * sb];
    let jacobian = [
        [a * cg * cb + b * sg * sb, -a * sg * sb - b * cg * cb],
        [c * cg * cb + d * sg * sb, -c * sg * sb - d * cg * cb],
    ];
    BifurcationEval {
        residual,
        jacobian,
        jacobian_det: jacobian[0][0] * jacobian[1][1] - jacobian[0][1] * jacobian[1][0],
        coefficient_det: b * c - a * d,
    }
}
