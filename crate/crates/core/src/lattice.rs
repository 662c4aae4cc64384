//! Lattice models: the exact normalized lattice of particles joined by
//! linear springs, the reduced transverse system, its modal decomposition
//! onto the standing-wave basis, and the two-mode truncation.
//!
//! Boundaries are fixed: `s_0 = w_0 = s_{N+1} = w_{N+1} = 0`. Indices in the
//! public API are 1-based for modes (`1 <= p <= N`) and 0-based for particles
//! in slices.

use std::f64::consts::PI;

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numerics::{self, FieldFault, IntegratorSpec, NumericsError};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LatticeError {
    #[error("invalid lattice configuration: {0}")]
    InvalidConfig(String),
    #[error("mode index {p} outside 1..={n}")]
    ModeOutOfRange { p: usize, n: usize },
    #[error("expected a state of dimension {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("spring {index} has zero length")]
    DegenerateSpring { index: usize },
    #[error(transparent)]
    Numerics(#[from] NumericsError),
}

pub type Result<T> = std::result::Result<T, LatticeError>;

/// One harmonic load shaped like the `mode`-th standing wave.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ForcingTerm {
    pub mode: usize,
    pub amplitude: f64,
    /// Drive frequency override; the natural frequency of `mode` when absent.
    #[serde(default)]
    pub drive_freq: Option<f64>,
}

impl ForcingTerm {
    pub fn resonant(mode: usize, amplitude: f64) -> Self {
        Self {
            mode,
            amplitude,
            drive_freq: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeConfig {
    pub n: usize,
    #[serde(default)]
    pub damping: f64,
    #[serde(default)]
    pub forcing: Vec<ForcingTerm>,
}

impl LatticeConfig {
    pub fn new(n: usize, damping: f64, forcing: Vec<ForcingTerm>) -> Result<Self> {
        let cfg = Self { n, damping, forcing };
        cfg.validate()?;
        Ok(cfg)
    }

    /// Conservative lattice: no damping, no forcing.
    pub fn free(n: usize) -> Result<Self> {
        Self::new(n, 0.0, Vec::new())
    }

    pub fn validate(&self) -> Result<()> {
        if self.n == 0 {
            return Err(LatticeError::InvalidConfig("n must be at least 1".into()));
        }
        if !(self.damping >= 0.0) || !self.damping.is_finite() {
            return Err(LatticeError::InvalidConfig(format!(
                "damping must be finite and non-negative, got {}",
                self.damping
            )));
        }
        for f in &self.forcing {
            if f.mode == 0 || f.mode > self.n {
                return Err(LatticeError::ModeOutOfRange { p: f.mode, n: self.n });
            }
            if !f.amplitude.is_finite() || f.drive_freq.is_some_and(|w| !w.is_finite()) {
                return Err(LatticeError::InvalidConfig(format!(
                    "forcing on mode {} must be finite",
                    f.mode
                )));
            }
        }
        Ok(())
    }

    /// Transverse load `f_i(tau)` on every particle.
    pub fn forcing_profile(&self, tau: f64) -> Vec<f64> {
        let mut f = vec![0.0; self.n];
        for term in &self.forcing {
            let omega = term.drive_freq.unwrap_or_else(|| natural_frequency(term.mode, self.n));
            let a = term.amplitude * (omega * tau).cos();
            for (i, fi) in f.iter_mut().enumerate() {
                *fi += a * mode_entry(term.mode, i + 1, self.n);
            }
        }
        f
    }
}

/// Positions and velocities of the exact lattice. As a derivative, the same
/// layout carries `(s', w', s'', w'')`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LatticeState {
    pub s: Vec<f64>,
    pub w: Vec<f64>,
    pub ds: Vec<f64>,
    pub dw: Vec<f64>,
}

impl LatticeState {
    pub fn zeros(n: usize) -> Self {
        Self {
            s: vec![0.0; n],
            w: vec![0.0; n],
            ds: vec![0.0; n],
            dw: vec![0.0; n],
        }
    }

    /// Transverse displacement `w` at rest with no axial motion.
    pub fn transverse(w: Vec<f64>) -> Self {
        let n = w.len();
        Self {
            w,
            ..Self::zeros(n)
        }
    }

    pub fn len(&self) -> usize {
        self.s.len()
    }

    pub fn is_empty(&self) -> bool {
        self.s.is_empty()
    }

    /// Flat first-order layout `[s, w, s', w']`.
    pub fn to_vec(&self) -> Vec<f64> {
        let mut v = Vec::with_capacity(4 * self.len());
        v.extend_from_slice(&self.s);
        v.extend_from_slice(&self.w);
        v.extend_from_slice(&self.ds);
        v.extend_from_slice(&self.dw);
        v
    }

    pub fn from_slice(n: usize, y: &[f64]) -> Result<Self> {
        if y.len() != 4 * n {
            return Err(LatticeError::DimensionMismatch {
                expected: 4 * n,
                got: y.len(),
            });
        }
        Ok(Self {
            s: y[..n].to_vec(),
            w: y[n..2 * n].to_vec(),
            ds: y[2 * n..3 * n].to_vec(),
            dw: y[3 * n..].to_vec(),
        })
    }
}

fn natural_frequency(p: usize, n: usize) -> f64 {
    2.0 * (PI * p as f64 / (2.0 * (n as f64 + 1.0))).sin()
}

fn mode_entry(p: usize, i: usize, n: usize) -> f64 {
    (PI * (p * i) as f64 / (n as f64 + 1.0)).sin()
}

fn check_mode(p: usize, n: usize) -> Result<()> {
    if p == 0 || p > n {
        return Err(LatticeError::ModeOutOfRange { p, n });
    }
    Ok(())
}

/// `omega_p = 2 sin(pi p / (2 (N + 1)))`.
pub fn nnm_frequency(p: usize, n: usize) -> Result<f64> {
    check_mode(p, n)?;
    Ok(natural_frequency(p, n))
}

/// Standing-wave shape `phi_p,i = sin(p i pi / (N + 1))`, `i = 1..=N`.
pub fn nnm_shape(p: usize, n: usize) -> Result<Vec<f64>> {
    check_mode(p, n)?;
    Ok((1..=n).map(|i| mode_entry(p, i, n)).collect())
}

/// Tridiagonal `(-1, 2, -1)` matrix of the fixed-end chain.
pub fn stiffness_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(n, n, |r, c| match r.abs_diff(c) {
        0 => 2.0,
        1 => -1.0,
        _ => 0.0,
    })
}

/// Period of the free nonlinear normal mode `A'' + omega_p^4 A^3 / 4 = 0`
/// started at rest from modal amplitude `amplitude`.
pub fn nnm_period(p: usize, n: usize, amplitude: f64) -> Result<f64> {
    let omega = nnm_frequency(p, n)?;
    // int_0^1 du / sqrt(1 - u^4)
    const LEMNISCATE_QUARTER: f64 = 1.311_028_777_146_059_9;
    Ok(8.0 * std::f64::consts::SQRT_2 * LEMNISCATE_QUARTER / (amplitude.abs() * omega * omega))
}

struct Spring {
    delta: f64,
    ddelta: f64,
    cos: f64,
    sin: f64,
}

fn springs(state: &LatticeState) -> Result<Vec<Spring>> {
    let n = state.len();
    let at = |v: &[f64], i: usize| if i == 0 || i > n { 0.0 } else { v[i - 1] };
    (0..=n)
        .map(|i| {
            let dw = at(&state.w, i + 1) - at(&state.w, i);
            let ds = 1.0 + at(&state.s, i + 1) - at(&state.s, i);
            let len = dw.hypot(ds);
            if !(len > 0.0) {
                return Err(LatticeError::DegenerateSpring { index: i });
            }
            let vw = at(&state.dw, i + 1) - at(&state.dw, i);
            let vs = at(&state.ds, i + 1) - at(&state.ds, i);
            Ok(Spring {
                delta: len - 1.0,
                ddelta: (dw * vw + ds * vs) / len,
                cos: ds / len,
                sin: dw / len,
            })
        })
        .collect()
}

/// Right-hand side of the exact lattice. Returns `(s', w', s'', w'')` in a
/// [`LatticeState`].
pub fn exact_lattice_rhs(state: &LatticeState, tau: f64, cfg: &LatticeConfig) -> Result<LatticeState> {
    let n = cfg.n;
    for v in [&state.s, &state.w, &state.ds, &state.dw] {
        if v.len() != n {
            return Err(LatticeError::DimensionMismatch {
                expected: n,
                got: v.len(),
            });
        }
    }
    let sp = springs(state)?;
    let c = cfg.damping;
    let f = cfg.forcing_profile(tau);
    let mut out = LatticeState::zeros(n);
    out.s.copy_from_slice(&state.ds);
    out.w.copy_from_slice(&state.dw);
    for i in 1..=n {
        let (r, l) = (&sp[i], &sp[i - 1]);
        out.ds[i - 1] = r.delta * r.cos - l.delta * l.cos + c * r.ddelta * r.cos - c * l.ddelta * l.cos;
        out.dw[i - 1] = r.delta * r.sin - l.delta * l.sin + c * r.ddelta * r.sin - c * l.ddelta * l.sin + f[i - 1];
    }
    Ok(out)
}

/// Exact lattice as a first-order field on `[s, w, s', w']`.
pub fn exact_lattice_field(
    cfg: &LatticeConfig,
) -> impl FnMut(f64, &[f64], &mut [f64]) -> std::result::Result<(), FieldFault> + '_ {
    move |tau, y, dy| {
        let state = LatticeState::from_slice(cfg.n, y).map_err(|e| FieldFault(e.to_string()))?;
        let d = exact_lattice_rhs(&state, tau, cfg).map_err(|e| FieldFault(e.to_string()))?;
        let n = cfg.n;
        dy[..n].copy_from_slice(&d.s);
        dy[n..2 * n].copy_from_slice(&d.w);
        dy[2 * n..3 * n].copy_from_slice(&d.ds);
        dy[3 * n..].copy_from_slice(&d.dw);
        Ok(())
    }
}

/// Kinetic plus spring energy `sum (s'^2 + w'^2) / 2 + sum delta^2 / 2`.
pub fn lattice_energy(state: &LatticeState) -> Result<f64> {
    let kinetic: f64 = state.ds.iter().chain(&state.dw).map(|v| 0.5 * v * v).sum();
    let potential: f64 = springs(state)?.iter().map(|s| 0.5 * s.delta * s.delta).sum();
    Ok(kinetic + potential)
}

/// `sum_{q=0}^{N} (w_{q+1} - w_q)^2` with fixed ends.
fn stretch(w: &[f64]) -> f64 {
    let n = w.len();
    let at = |i: usize| if i == 0 || i > n { 0.0 } else { w[i - 1] };
    (0..=n).map(|q| (at(q + 1) - at(q)).powi(2)).sum()
}

/// Reduced transverse accelerations, written as the componentwise sum.
pub fn reduced_rhs(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let at = |i: usize| if i == 0 || i > n { 0.0 } else { w[i - 1] };
    let gain = stretch(w) / (2.0 * (n as f64 + 1.0));
    (1..=n).map(|i| -gain * (2.0 * at(i) - at(i + 1) - at(i - 1))).collect()
}

/// Reduced transverse accelerations, `-<Mw, w> Mw / (2 (N + 1))`.
pub fn reduced_rhs_matrix(w: &[f64]) -> Vec<f64> {
    let n = w.len();
    let m = stiffness_matrix(n);
    let wv = DVector::from_column_slice(w);
    let mw = &m * &wv;
    let gain = mw.dot(&wv) / (2.0 * (n as f64 + 1.0));
    (-gain * mw).as_slice().to_vec()
}

/// Energy of the reduced system, `|w'|^2 / 2 + <Mw, w>^2 / (8 (N + 1))`.
pub fn reduced_energy(w: &[f64], dw: &[f64]) -> f64 {
    let s = stretch(w);
    0.5 * dw.iter().map(|v| v * v).sum::<f64>() + s * s / (8.0 * (w.len() as f64 + 1.0))
}

/// Forced reduced system as a first-order field on `[w, w']`; the load is
/// `sum_p F_p cos(omega_p tau) phi_p` from `cfg.forcing`.
pub fn reduced_field(
    cfg: &LatticeConfig,
) -> impl FnMut(f64, &[f64], &mut [f64]) -> std::result::Result<(), FieldFault> + '_ {
    move |tau, y, dy| {
        let n = cfg.n;
        let acc = reduced_rhs(&y[..n]);
        let f = cfg.forcing_profile(tau);
        dy[..n].copy_from_slice(&y[n..]);
        for i in 0..n {
            dy[n + i] = acc[i] + f[i];
        }
        Ok(())
    }
}

/// Modal coordinate convention.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModalConvention {
    /// Plain expansion coefficients `w = sum_p C_p phi_p`.
    C,
    /// Rescaled amplitudes `A_p = omega_p C_p / 2`.
    A,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ModalState {
    pub amp: Vec<f64>,
    pub vel: Vec<f64>,
    pub convention: ModalConvention,
}

impl ModalState {
    pub fn zeros(n: usize, convention: ModalConvention) -> Self {
        Self {
            amp: vec![0.0; n],
            vel: vec![0.0; n],
            convention,
        }
    }

    /// Same motion expressed in the other convention.
    pub fn convert(&self, to: ModalConvention) -> Self {
        let n = self.amp.len();
        let factor = |p: usize| match (self.convention, to) {
            (ModalConvention::C, ModalConvention::A) => 0.5 * natural_frequency(p, n),
            (ModalConvention::A, ModalConvention::C) => 2.0 / natural_frequency(p, n),
            _ => 1.0,
        };
        Self {
            amp: self.amp.iter().enumerate().map(|(i, a)| a * factor(i + 1)).collect(),
            vel: self.vel.iter().enumerate().map(|(i, a)| a * factor(i + 1)).collect(),
            convention: to,
        }
    }

    /// Projects a transverse configuration onto the standing-wave basis.
    pub fn from_physical(w: &[f64], dw: &[f64], convention: ModalConvention) -> Self {
        let n = w.len();
        let norm = 2.0 / (n as f64 + 1.0);
        let project = |v: &[f64], p: usize| norm * (1..=n).map(|i| v[i - 1] * mode_entry(p, i, n)).sum::<f64>();
        let c = Self {
            amp: (1..=n).map(|p| project(w, p)).collect(),
            vel: (1..=n).map(|p| project(dw, p)).collect(),
            convention: ModalConvention::C,
        };
        c.convert(convention)
    }

    /// Transverse displacements `w = sum_p C_p phi_p`.
    pub fn to_physical(&self) -> Vec<f64> {
        let c = self.convert(ModalConvention::C);
        let n = c.amp.len();
        (1..=n)
            .map(|i| (1..=n).map(|p| c.amp[p - 1] * mode_entry(p, i, n)).sum())
            .collect()
    }
}

/// Forced modal equations in the convention carried by `state`. The
/// derivative comes back in the same layout: `amp` holds velocities and
/// `vel` accelerations. `forcing` lists `(p, F_p)`.
pub fn modal_rhs(state: &ModalState, tau: f64, forcing: &[(usize, f64)], n: usize) -> Result<ModalState> {
    if state.amp.len() != n || state.vel.len() != n {
        return Err(LatticeError::DimensionMismatch {
            expected: n,
            got: state.amp.len().min(state.vel.len()),
        });
    }
    let omega: Vec<f64> = (1..=n).map(|p| natural_frequency(p, n)).collect();
    let mut acc = vec![0.0; n];
    match state.convention {
        ModalConvention::C => {
            let sum: f64 = state.amp.iter().zip(&omega).map(|(c, w)| c * c * w * w).sum();
            for p in 0..n {
                acc[p] = -0.25 * sum * omega[p] * omega[p] * state.amp[p];
            }
        }
        ModalConvention::A => {
            let sum: f64 = state.amp.iter().map(|a| a * a).sum();
            for p in 0..n {
                acc[p] = -sum * omega[p] * omega[p] * state.amp[p];
            }
        }
    }
    for &(p, f) in forcing {
        check_mode(p, n)?;
        let w = omega[p - 1];
        let load = match state.convention {
            ModalConvention::C => f,
            ModalConvention::A => 0.5 * f * w,
        };
        acc[p - 1] += load * (w * tau).cos();
    }
    Ok(ModalState {
        amp: state.vel.clone(),
        vel: acc,
        convention: state.convention,
    })
}

/// Parameters of the two-mode truncation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TwoModeParams {
    pub omega_k: f64,
    pub omega_p: f64,
    pub eps: f64,
    pub mu1: f64,
    pub mu2: f64,
}

impl TwoModeParams {
    /// Exchanges the roles of the two modes.
    pub fn swapped(&self) -> Self {
        Self {
            omega_k: self.omega_p,
            omega_p: self.omega_k,
            eps: self.eps,
            mu1: self.mu2,
            mu2: self.mu1,
        }
    }
}

/// Two-mode system on `(A_k, A_k', A_p, A_p')`.
pub fn two_mode_rhs(y: [f64; 4], tau: f64, params: &TwoModeParams) -> [f64; 4] {
    let [ak, vk, ap, vp] = y;
    let r2 = ak * ak + ap * ap;
    let TwoModeParams {
        omega_k: wk,
        omega_p: wp,
        eps,
        mu1,
        mu2,
    } = *params;
    [
        vk,
        -r2 * wk * wk * ak - eps * mu1 * (wk * tau).cos(),
        vp,
        -r2 * wp * wp * ap - eps * mu2 * (wp * tau).cos(),
    ]
}

/// Conserved energy of the unforced two-mode system,
/// `A_k'^2 / (2 w_k^2) + A_p'^2 / (2 w_p^2) + (A_k^2 + A_p^2)^2 / 4`.
pub fn two_mode_energy(y: [f64; 4], params: &TwoModeParams) -> f64 {
    let [ak, vk, ap, vp] = y;
    let r2 = ak * ak + ap * ap;
    0.5 * vk * vk / (params.omega_k * params.omega_k) + 0.5 * vp * vp / (params.omega_p * params.omega_p) + 0.25 * r2 * r2
}

/// Exact versus reduced transverse motion from the same standing-wave start.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ComparisonReport {
    pub mode: usize,
    pub amplitude: f64,
    pub horizon: f64,
    pub nnm_period: f64,
    pub samples: usize,
    /// Sup over particles and sample times of `|w_exact - w_reduced|`.
    pub sup_mismatch: f64,
}

/// Starts both models from `w = amplitude * phi_mode` at rest (no axial
/// displacement) and compares transverse displacements on a uniform grid of
/// 101 samples per free-mode period over `[0, horizon]`.
pub fn compare_exact_vs_reduced(
    cfg: &LatticeConfig,
    mode: usize,
    amplitude: f64,
    horizon: f64,
    spec: &IntegratorSpec,
) -> Result<ComparisonReport> {
    cfg.validate()?;
    if !(horizon > 0.0) {
        return Err(LatticeError::InvalidConfig(format!("horizon must be positive, got {horizon}")));
    }
    let n = cfg.n;
    let shape = nnm_shape(mode, n)?;
    let period = nnm_period(mode, n, amplitude)?;
    let samples = if period.is_finite() {
        ((101.0 * horizon / period).ceil() as usize).max(101)
    } else {
        101
    };
    let w0: Vec<f64> = shape.iter().map(|v| amplitude * v).collect();
    let exact = numerics::integrate(
        exact_lattice_field(cfg),
        &LatticeState::transverse(w0.clone()).to_vec(),
        (0.0, horizon),
        spec,
    )?;
    let mut y0 = w0;
    y0.extend(std::iter::repeat_n(0.0, n));
    let reduced = numerics::integrate(reduced_field(cfg), &y0, (0.0, horizon), spec)?;
    let mut sup = 0.0_f64;
    let mut ye = vec![0.0; 4 * n];
    let mut yr = vec![0.0; 2 * n];
    for j in 0..=samples {
        let t = horizon * j as f64 / samples as f64;
        exact.eval_into(t, &mut ye);
        reduced.eval_into(t, &mut yr);
        for i in 0..n {
            sup = sup.max((ye[n + i] - yr[i]).abs());
        }
    }
    Ok(ComparisonReport {
        mode,
        amplitude,
        horizon,
        nnm_period: period,
        samples,
        sup_mismatch: sup,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn equilibrium_is_at_rest() {
        let cfg = LatticeConfig::free(5).unwrap();
        let d = exact_lattice_rhs(&LatticeState::zeros(5), 0.3, &cfg).unwrap();
        assert!(d.to_vec().iter().all(|v| *v == 0.0));
    }

    #[test]
    fn single_particle_by_hand() {
        let h = 0.01;
        let cfg = LatticeConfig::free(1).unwrap();
        let d = exact_lattice_rhs(&LatticeState::transverse(vec![h]), 0.0, &cfg).unwrap();
        let len = (1.0 + h * h).sqrt();
        let delta = len - 1.0;
        // Spring 0 runs from the wall up to the particle, spring 1 back down.
        let (cos0, sin0) = (1.0 / len, h / len);
        let (cos1, sin1) = (1.0 / len, -h / len);
        assert!((d.ds[0] - (delta * cos1 - delta * cos0)).abs() < 1e-16);
        assert!((d.dw[0] - (delta * sin1 - delta * sin0)).abs() < 1e-16);
        assert!(d.dw[0] < 0.0);
    }

    #[test]
    fn damping_enters_linearly() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let n = 6;
        let mut st = LatticeState::zeros(n);
        for v in [&mut st.s, &mut st.w, &mut st.ds, &mut st.dw] {
            v.iter_mut().for_each(|x| *x = rng.random_range(-0.1..0.1));
        }
        let free = LatticeConfig::free(n).unwrap();
        let d0 = exact_lattice_rhs(&st, 0.0, &free).unwrap();
        let d1 = exact_lattice_rhs(&st, 0.0, &LatticeConfig::new(n, 0.3, vec![]).unwrap()).unwrap();
        let d2 = exact_lattice_rhs(&st, 0.0, &LatticeConfig::new(n, 0.6, vec![]).unwrap()).unwrap();
        for i in 0..n {
            let a = d1.dw[i] - d0.dw[i];
            let b = d2.dw[i] - d0.dw[i];
            assert!((b - 2.0 * a).abs() < 1e-14);
            assert_eq!(d1.w[i], d0.w[i]);
        }
    }

    #[test]
    fn forcing_uses_natural_frequency() {
        let cfg = LatticeConfig::new(3, 0.0, vec![ForcingTerm::resonant(2, 0.5)]).unwrap();
        let tau = 1.7;
        let w2 = nnm_frequency(2, 3).unwrap();
        let f = cfg.forcing_profile(tau);
        let shape = nnm_shape(2, 3).unwrap();
        for i in 0..3 {
            assert!((f[i] - 0.5 * (w2 * tau).cos() * shape[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn degenerate_spring_is_rejected() {
        let cfg = LatticeConfig::free(2).unwrap();
        let mut st = LatticeState::zeros(2);
        st.s = vec![0.0, -1.0];
        assert!(matches!(
            exact_lattice_rhs(&st, 0.0, &cfg),
            Err(LatticeError::DegenerateSpring { index: 1 })
        ));
    }

    #[test]
    fn frequencies() {
        assert!((nnm_frequency(1, 1).unwrap() - 2f64.sqrt()).abs() < 1e-15);
        let w: Vec<f64> = (1..=9).map(|p| nnm_frequency(p, 9).unwrap()).collect();
        assert!(w.windows(2).all(|p| p[0] < p[1]));
        assert!(w[8] < 2.0);
        assert!(nnm_frequency(0, 3).is_err());
        assert!(nnm_frequency(4, 3).is_err());
    }

    #[test]
    fn reduced_on_a_mode_is_a_cubic_oscillator() {
        let n = 7;
        for p in 1..=n {
            let a = 0.37;
            let phi = nnm_shape(p, n).unwrap();
            let w: Vec<f64> = phi.iter().map(|v| a * v).collect();
            let acc = reduced_rhs(&w);
            let om = nnm_frequency(p, n).unwrap();
            for i in 0..n {
                let expect = -0.25 * om.powi(4) * a.powi(3) * phi[i];
                assert!((acc[i] - expect).abs() < 1e-14, "p {p} i {i}");
            }
        }
    }

    #[test]
    fn sum_and_matrix_forms_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..100 {
            let w: Vec<f64> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
            let a = reduced_rhs(&w);
            let b = reduced_rhs_matrix(&w);
            for (x, y) in a.iter().zip(&b) {
                assert!((x - y).abs() < 1e-12);
            }
        }
        assert!(reduced_rhs(&[0.0; 4]).iter().all(|v| *v == 0.0));
    }

    #[test]
    fn modal_single_mode() {
        let n = 5;
        let mut st = ModalState::zeros(n, ModalConvention::A);
        st.amp[2] = 0.4;
        let d = modal_rhs(&st, 0.0, &[], n).unwrap();
        let w = nnm_frequency(3, n).unwrap();
        assert!((d.vel[2] + w * w * 0.4f64.powi(3)).abs() < 1e-15);
        let z = modal_rhs(&ModalState::zeros(n, ModalConvention::C), 1.0, &[], n).unwrap();
        assert!(z.vel.iter().all(|v| *v == 0.0));
    }

    #[test]
    fn modal_conventions_describe_the_same_motion() {
        let n = 4;
        let forcing = [(1, 0.3), (3, -0.2)];
        let mut c = ModalState::zeros(n, ModalConvention::C);
        c.amp = vec![0.1, -0.2, 0.05, 0.3];
        c.vel = vec![0.01, 0.0, -0.02, 0.04];
        let a = c.convert(ModalConvention::A);
        let dc = modal_rhs(&c, 0.8, &forcing, n).unwrap();
        let da = modal_rhs(&a, 0.8, &forcing, n).unwrap().convert(ModalConvention::C);
        for p in 0..n {
            assert!((dc.vel[p] - da.vel[p]).abs() < 1e-14);
        }
    }

    #[test]
    fn projection_round_trip() {
        let w = vec![0.3, -0.1, 0.25, 0.0, 0.7];
        let m = ModalState::from_physical(&w, &[0.0; 5], ModalConvention::A);
        let back = m.to_physical();
        for (x, y) in w.iter().zip(&back) {
            assert!((x - y).abs() < 1e-14);
        }
    }

    #[test]
    fn two_mode_structure() {
        let p = TwoModeParams {
            omega_k: 0.7,
            omega_p: 1.3,
            eps: 0.1,
            mu1: 0.6,
            mu2: 0.8,
        };
        let y = [0.2, -0.1, 0.4, 0.3];
        let d = two_mode_rhs(y, 0.9, &p);
        let ds = two_mode_rhs([y[2], y[3], y[0], y[1]], 0.9, &p.swapped());
        assert_eq!([d[2], d[3], d[0], d[1]], ds);

        let free = TwoModeParams { eps: 0.0, ..p };
        let d = two_mode_rhs([0.5, 0.0, 0.0, 0.0], 0.0, &free);
        assert!((d[1] + 0.49 * 0.125).abs() < 1e-16);
        assert_eq!(d[3], 0.0);
    }

    #[test]
    fn nnm_period_matches_integration() {
        let (p, n, a) = (1, 4, 0.2);
        let t = nnm_period(p, n, a).unwrap();
        let w = nnm_frequency(p, n).unwrap();
        let alpha = 0.25 * w.powi(4);
        let traj = numerics::integrate(
            |_t, y: &[f64], dy: &mut [f64]| {
                dy[0] = y[1];
                dy[1] = -alpha * y[0].powi(3);
                Ok(())
            },
            &[a, 0.0],
            (0.0, t),
            &IntegratorSpec::rk45(1e-12),
        )
        .unwrap();
        let y = traj.final_state();
        assert!((y[0] - a).abs() < 1e-8 && y[1].abs() < 1e-8);
    }

    #[test]
    fn zero_amplitude_comparison_is_exact() {
        let cfg = LatticeConfig::free(3).unwrap();
        let r = compare_exact_vs_reduced(&cfg, 1, 0.0, 10.0, &IntegratorSpec::default()).unwrap();
        assert_eq!(r.sup_mismatch, 0.0);
    }
}
