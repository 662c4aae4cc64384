//! One-dimensional quadrature: adaptive Simpson and composite Gauss–Legendre.

use serde::{Deserialize, Serialize};

use super::{NumericsError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case", tag = "kind")]
pub enum QuadratureMethod {
    AdaptiveSimpson,
    /// `panels` equal panels with a `points`-node Gauss–Legendre rule each.
    GaussLegendre { points: usize, panels: usize },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct QuadratureSpec {
    pub method: QuadratureMethod,
    pub abs_tol: f64,
    /// Panel budget for the adaptive rule; upper bound on `panels` otherwise.
    pub max_subdivisions: usize,
}

impl Default for QuadratureSpec {
    fn default() -> Self {
        Self {
            method: QuadratureMethod::AdaptiveSimpson,
            abs_tol: 1e-10,
            max_subdivisions: 1 << 20,
        }
    }
}

impl QuadratureSpec {
    pub fn simpson(abs_tol: f64) -> Self {
        Self {
            abs_tol,
            ..Self::default()
        }
    }

    /// Composite 8-point Gauss–Legendre with `64 * harmonic` panels, sized for
    /// period integrals whose integrand carries the harmonic `harmonic` of
    /// the base frequency.
    pub fn gauss_legendre_for_harmonic(harmonic: u32) -> Self {
        let panels = 64 * harmonic.max(1) as usize;
        Self {
            method: QuadratureMethod::GaussLegendre { points: 8, panels },
            abs_tol: 1e-10,
            max_subdivisions: panels.max(1 << 20),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.abs_tol > 0.0) {
            return Err(NumericsError::InvalidSpec(format!(
                "quadrature abs_tol must be positive, got {}",
                self.abs_tol
            )));
        }
        if self.max_subdivisions == 0 {
            return Err(NumericsError::InvalidSpec("max_subdivisions must be at least 1".into()));
        }
        if let QuadratureMethod::GaussLegendre { points, panels } = self.method {
            if points == 0 || panels == 0 {
                return Err(NumericsError::InvalidSpec(
                    "Gauss-Legendre needs at least one point and one panel".into(),
                ));
            }
            if panels > self.max_subdivisions {
                return Err(NumericsError::InvalidSpec(format!(
                    "{panels} panels exceed the budget of {}",
                    self.max_subdivisions
                )));
            }
        }
        Ok(())
    }
}

/// Integrates `f` over `[a, b]`.
pub fn quad<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, spec: &QuadratureSpec) -> Result<f64> {
    spec.validate()?;
    if a == b {
        return Ok(0.0);
    }
    if b < a {
        return quad(f, b, a, spec).map(|v| -v);
    }
    let mut checked = |x: f64| {
        let v = f(x);
        if v.is_finite() {
            Ok(v)
        } else {
            Err(NumericsError::NonFiniteIntegrand { x })
        }
    };
    match spec.method {
        QuadratureMethod::AdaptiveSimpson => adaptive_simpson(&mut checked, a, b, spec.abs_tol, spec.max_subdivisions),
        QuadratureMethod::GaussLegendre { points, panels } => {
            let (nodes, weights) = gauss_legendre_nodes(points);
            let width = (b - a) / panels as f64;
            let mut sum = 0.0;
            for p in 0..panels {
                let lo = a + p as f64 * width;
                let mid = lo + 0.5 * width;
                let mut panel = 0.0;
                for (x, w) in nodes.iter().zip(&weights) {
                    panel += w * checked(mid + 0.5 * width * x)?;
                }
                sum += 0.5 * width * panel;
            }
            Ok(sum)
        }
    }
}

struct Panel {
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
}

fn adaptive_simpson<F>(f: &mut F, a: f64, b: f64, abs_tol: f64, budget: usize) -> Result<f64>
where
    F: FnMut(f64) -> Result<f64>,
{
    let total = b - a;
    let simpson = |h: f64, fa: f64, fm: f64, fb: f64| h / 6.0 * (fa + 4.0 * fm + fb);
    let fa = f(a)?;
    let fm = f(0.5 * (a + b))?;
    let fb = f(b)?;
    let mut stack = vec![Panel {
        a,
        b,
        fa,
        fm,
        fb,
        whole: simpson(total, fa, fm, fb),
    }];
    let mut panels = 1usize;
    let mut sum = 0.0;
    // Kahan compensation: accepted panels can number in the millions.
    let mut carry = 0.0;
    let mut first = true;

    while let Some(p) = stack.pop() {
        let m = 0.5 * (p.a + p.b);
        let lm = 0.5 * (p.a + m);
        let rm = 0.5 * (m + p.b);
        let flm = f(lm)?;
        let frm = f(rm)?;
        let h = p.b - p.a;
        let left = simpson(0.5 * h, p.fa, flm, p.fm);
        let right = simpson(0.5 * h, p.fm, frm, p.fb);
        let delta = left + right - p.whole;
        let local_tol = abs_tol * h / total;
        // The first split is never accepted: five samples can alias a
        // periodic integrand to zero error.
        let tiny = h <= 64.0 * f64::EPSILON * p.a.abs().max(p.b.abs()).max(1.0);
        if (!first && delta.abs() <= 15.0 * local_tol) || tiny {
            let y = left + right + delta / 15.0 - carry;
            let t = sum + y;
            carry = (t - sum) - y;
            sum = t;
        } else {
            panels += 1;
            if panels > budget {
                return Err(NumericsError::SubdivisionBudget { budget });
            }
            stack.push(Panel {
                a: m,
                b: p.b,
                fa: p.fm,
                fm: frm,
                fb: p.fb,
                whole: right,
            });
            stack.push(Panel {
                a: p.a,
                b: m,
                fa: p.fa,
                fm: flm,
                fb: p.fm,
                whole: left,
            });
        }
        first = false;
    }
    Ok(sum)
}

/// Nodes and weights of the `n`-point Gauss–Legendre rule on `[-1, 1]`.
pub fn gauss_legendre_nodes(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    let nf = n as f64;
    for i in 0..n.div_ceil(2) {
        // Tricomi initial guess, refined by Newton on P_n.
        let mut x = (std::f64::consts::PI * (i as f64 + 0.75) / (nf + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre_with_derivative(n, x);
            dp = d;
            let dx = p / d;
            x -= dx;
            if dx.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre_with_derivative(n, x);
        if d != 0.0 {
            dp = d;
        }
        let w = 2.0 / ((1.0 - x * x) * dp * dp);
        nodes[i] = -x;
        nodes[n - 1 - i] = x;
        weights[i] = w;
        weights[n - 1 - i] = w;
    }
    (nodes, weights)
}

fn legendre_with_derivative(n: usize, x: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = x;
    if n == 0 {
        return (1.0, 0.0);
    }
    for k in 2..=n {
        let kf = k as f64;
        let p2 = ((2.0 * kf - 1.0) * x * p1 - (kf - 1.0) * p0) / kf;
        p0 = p1;
        p1 = p2;
    }
    let d = n as f64 * (x * p1 - p0) / (x * x - 1.0);
    (p1, d)
}
