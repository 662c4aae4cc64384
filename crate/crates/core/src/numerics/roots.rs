//! Root finding: Brent's method on a bracket, and damped Newton with a
//! central-difference Jacobian for square systems.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use super::{sup_norm, NumericsError, Result};

/// How the Newton correction is obtained from the Jacobian.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum LinearSolve {
    /// LU factorisation; a numerically singular Jacobian is an error.
    Lu,
    /// Minimum-norm least-squares step through the SVD, discarding singular
    /// values below `rcond * sigma_max`. Converges onto solution manifolds
    /// where the Jacobian is rank deficient.
    MinNorm { rcond: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct RootSpec {
    pub residual_tol: f64,
    pub step_tol: f64,
    pub max_iter: usize,
    /// Relative central-difference step: `h_i = fd_jacobian_step * max(1, |x_i|)`.
    pub fd_jacobian_step: f64,
    pub linear_solve: LinearSolve,
}

impl Default for RootSpec {
    fn default() -> Self {
        Self {
            residual_tol: 1e-10,
            step_tol: 1e-14,
            max_iter: 50,
            fd_jacobian_step: 1e-6,
            linear_solve: LinearSolve::Lu,
        }
    }
}

impl RootSpec {
    pub fn validate(&self) -> Result<()> {
        if !(self.residual_tol > 0.0 && self.step_tol > 0.0 && self.fd_jacobian_step > 0.0) {
            return Err(NumericsError::InvalidSpec(
                "root-finding tolerances and difference step must be positive".into(),
            ));
        }
        if self.max_iter == 0 {
            return Err(NumericsError::InvalidSpec("max_iter must be at least 1".into()));
        }
        if let LinearSolve::MinNorm { rcond } = self.linear_solve {
            if !(rcond > 0.0 && rcond < 1.0) {
                return Err(NumericsError::InvalidSpec(format!("rcond must lie in (0, 1), got {rcond}")));
            }
        }
        Ok(())
    }
}

/// Brent's method on a sign-changing bracket.
///
/// Stops once `|f(x)| <= residual_tol` or the bracket has shrunk below
/// `step_tol` (relative to `max(1, |x|)`).
pub fn find_root_1d<F: FnMut(f64) -> f64>(mut f: F, bracket: (f64, f64), spec: &RootSpec) -> Result<f64> {
    spec.validate()?;
    let (mut a, mut b) = bracket;
    let mut fa = f(a);
    let mut fb = f(b);
    if !(fa.is_finite() && fb.is_finite()) || fa * fb > 0.0 {
        return Err(NumericsError::NoSignChange { a, b, fa, fb });
    }
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.abs() < fb.abs() {
        std::mem::swap(&mut a, &mut b);
        std::mem::swap(&mut fa, &mut fb);
    }
    let mut c = a;
    let mut fc = fa;
    let mut d = b - a;
    let mut bisected = true;

    for _ in 0..spec.max_iter {
        if fb.abs() <= spec.residual_tol || (b - a).abs() <= spec.step_tol * b.abs().max(1.0) {
            return Ok(b);
        }
        let mut s = if fa != fc && fb != fc {
            // Inverse quadratic interpolation.
            a * fb * fc / ((fa - fb) * (fa - fc))
                + b * fa * fc / ((fb - fa) * (fb - fc))
                + c * fa * fb / ((fc - fa) * (fc - fb))
        } else {
            b - fb * (b - a) / (fb - fa)
        };
        let lo = (3.0 * a + b) / 4.0;
        let outside = !((s > lo.min(b)) && (s < lo.max(b)));
        let tol = spec.step_tol * b.abs().max(1.0);
        let slow = if bisected {
            (s - b).abs() >= 0.5 * (b - c).abs() || (b - c).abs() < tol
        } else {
            (s - b).abs() >= 0.5 * (c - d).abs() || (c - d).abs() < tol
        };
        if outside || slow {
            s = 0.5 * (a + b);
            bisected = true;
        } else {
            bisected = false;
        }
        let fs = f(s);
        if !fs.is_finite() {
            return Err(NumericsError::NoSignChange { a, b, fa, fb });
        }
        d = c;
        c = b;
        fc = fb;
        if fa * fs < 0.0 {
            b = s;
            fb = fs;
        } else {
            a = s;
            fa = fs;
        }
        if fa.abs() < fb.abs() {
            std::mem::swap(&mut a, &mut b);
            std::mem::swap(&mut fa, &mut fb);
        }
    }
    if fb.abs() <= spec.residual_tol {
        Ok(b)
    } else {
        Err(NumericsError::MaxIter {
            max_iter: spec.max_iter,
            residual: fb.abs(),
        })
    }
}

/// Converged Newton iterate.
#[derive(Debug, Clone)]
pub struct NdRoot {
    pub x: Vec<f64>,
    pub residual: Vec<f64>,
    /// Central-difference Jacobian evaluated at `x`.
    pub jacobian: DMatrix<f64>,
    pub iterations: usize,
}

impl NdRoot {
    pub fn residual_norm(&self) -> f64 {
        sup_norm(&self.residual)
    }
}

/// Central-difference Jacobian of `f` at `x`.
pub fn fd_jacobian<F, E>(f: &mut F, x: &[f64], rel_step: f64) -> std::result::Result<DMatrix<f64>, E>
where
    F: FnMut(&[f64]) -> std::result::Result<Vec<f64>, E>,
{
    let n = x.len();
    let mut jac: Option<DMatrix<f64>> = None;
    let mut probe = x.to_vec();
    for i in 0..n {
        let h = rel_step * x[i].abs().max(1.0);
        probe[i] = x[i] + h;
        let fp = f(&probe)?;
        probe[i] = x[i] - h;
        let fm = f(&probe)?;
        probe[i] = x[i];
        let m = jac.get_or_insert_with(|| DMatrix::zeros(fp.len(), n));
        for (r, (p, q)) in fp.iter().zip(&fm).enumerate() {
            m[(r, i)] = (p - q) / (2.0 * h);
        }
    }
    Ok(jac.unwrap_or_else(|| DMatrix::zeros(0, 0)))
}

/// Damped Newton iteration for `F(x) = 0` with a backtracking line search
/// (at most 30 halvings).
pub fn find_root_nd<F, E>(mut f: F, x0: &[f64], spec: &RootSpec) -> std::result::Result<NdRoot, E>
where
    F: FnMut(&[f64]) -> std::result::Result<Vec<f64>, E>,
    E: From<NumericsError>,
{
    spec.validate()?;
    let scale0 = 1.0 + sup_norm(x0);
    let mut x = x0.to_vec();
    let mut fx = f(&x)?;
    if fx.len() != x.len() {
        return Err(NumericsError::InvalidSpec(format!(
            "system maps R^{} to R^{}",
            x.len(),
            fx.len()
        ))
        .into());
    }
    let mut norm = sup_norm(&fx);

    for iteration in 0..spec.max_iter {
        if norm <= spec.residual_tol {
            let jacobian = fd_jacobian(&mut f, &x, spec.fd_jacobian_step)?;
            return Ok(NdRoot {
                x,
                residual: fx,
                jacobian,
                iterations: iteration,
            });
        }
        let jac = fd_jacobian(&mut f, &x, spec.fd_jacobian_step)?;
        let rhs = -DVector::from_column_slice(&fx);
        let step = solve_linear(jac, rhs, spec.linear_solve)
            .ok_or(NumericsError::SingularJacobian { iteration })?;
        if sup_norm(step.as_slice()) <= spec.step_tol * (1.0 + sup_norm(&x)) {
            return Err(NumericsError::MaxIter {
                max_iter: iteration,
                residual: norm,
            }
            .into());
        }

        let mut lambda = 1.0;
        let mut accepted = None;
        for _ in 0..=30 {
            let trial: Vec<f64> = x.iter().zip(step.iter()).map(|(xi, di)| xi + lambda * di).collect();
            if trial.iter().any(|v| !v.is_finite()) || sup_norm(&trial) > 1e12 * scale0 {
                return Err(NumericsError::Divergence { iteration }.into());
            }
            if let Ok(ft) = f(&trial) {
                let tn = sup_norm(&ft);
                if tn.is_finite() && tn < norm {
                    accepted = Some((trial, ft, tn));
                    break;
                }
            }
            lambda *= 0.5;
        }
        match accepted {
            Some((xn, fnew, nn)) => {
                x = xn;
                fx = fnew;
                norm = nn;
            }
            None => {
                return Err(NumericsError::MaxIter {
                    max_iter: iteration + 1,
                    residual: norm,
                }
                .into())
            }
        }
    }
    if norm <= spec.residual_tol {
        let jacobian = fd_jacobian(&mut f, &x, spec.fd_jacobian_step)?;
        return Ok(NdRoot {
            x,
            residual: fx,
            jacobian,
            iterations: spec.max_iter,
        });
    }
    Err(NumericsError::MaxIter {
        max_iter: spec.max_iter,
        residual: norm,
    }
    .into())
}

fn solve_linear(jac: DMatrix<f64>, rhs: DVector<f64>, how: LinearSolve) -> Option<DVector<f64>> {
    let svd = jac.clone().svd(true, true);
    let smax = svd.singular_values.max();
    if !(smax > 0.0) || !smax.is_finite() {
        return None;
    }
    match how {
        LinearSolve::Lu => {
            let smin = svd.singular_values.min();
            if smin <= 1e-14 * smax {
                return None;
            }
            jac.lu().solve(&rhs)
        }
        LinearSolve::MinNorm { rcond } => svd.solve(&rhs, rcond * smax).ok(),
    }
}
