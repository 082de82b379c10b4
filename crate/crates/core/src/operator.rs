//! The solution operator T, the σ-equation and the parameterized operator H.

use std::sync::atomic::{AtomicBool, Ordering};

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::homeo::HomeoError;
use crate::problem::{ProblemError, ProblemInstance};
use crate::quadrature::{integrate, Antiderivative, QuadError, SingularityHint};
use crate::roots::{bisect_predicate, brent_with_values};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum OperatorError {
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error(transparent)]
    Homeo(#[from] HomeoError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("nu has no sign change on (0, 1); the source vanishes or quadrature failed")]
    NoSignChange,
    #[error("quadrature for {what} did not converge near t = {t}")]
    Unconverged { what: &'static str, t: f64 },
    #[error("invalid grid: {0}")]
    BadGrid(String),
}

/// Nodes on [0, 1]: `layers` geometric intervals with the given ratio at each
/// end, uniform in between, symmetric about 1/2.
pub fn graded_mesh(n: usize, ratio: f64, layers: usize) -> Vec<f64> {
    assert!(n >= 3, "mesh needs at least 3 nodes");
    let k = n - 1;
    let layers = layers.min(k.saturating_sub(1) / 2);
    let uniform = k - 2 * layers;
    let graded: f64 = (1..=layers).map(|j| ratio.powi(j as i32)).sum();
    let w = 1.0 / (uniform as f64 + 2.0 * graded);
    let mut widths: Vec<f64> = (1..=layers).rev().map(|j| w * ratio.powi(j as i32)).collect();
    widths.extend(std::iter::repeat(w).take(uniform));
    widths.extend((1..=layers).map(|j| w * ratio.powi(j as i32)));
    let mut nodes = Vec::with_capacity(n);
    let mut x = 0.0;
    nodes.push(0.0);
    for wd in &widths[..k - 1] {
        x += wd;
        nodes.push(x);
    }
    nodes.push(1.0);
    for i in 0..n / 2 {
        nodes[k - i] = 1.0 - nodes[i];
    }
    if k % 2 == 0 {
        nodes[k / 2] = 0.5;
    }
    nodes
}

pub const DEFAULT_MESH_NODES: usize = 257;
pub const DEFAULT_MESH_RATIO: f64 = 0.85;
pub const DEFAULT_MESH_LAYERS: usize = 24;

pub fn default_mesh() -> Vec<f64> {
    graded_mesh(DEFAULT_MESH_NODES, DEFAULT_MESH_RATIO, DEFAULT_MESH_LAYERS)
}

/// Node values with a piecewise cubic Hermite interpolant.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GridFunction {
    nodes: Vec<f64>,
    values: Vec<f64>,
    slopes: Vec<f64>,
}

fn pchip_slopes(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let h: Vec<f64> = x.windows(2).map(|w| w[1] - w[0]).collect();
    let delta: Vec<f64> = (0..n - 1).map(|i| (y[i + 1] - y[i]) / h[i]).collect();
    let mut d = vec![0.0; n];
    if n == 2 {
        return vec![delta[0], delta[0]];
    }
    for k in 1..n - 1 {
        let (d0, d1) = (delta[k - 1], delta[k]);
        if d0 * d1 > 0.0 {
            let w1 = 2.0 * h[k] + h[k - 1];
            let w2 = h[k] + 2.0 * h[k - 1];
            d[k] = (w1 + w2) / (w1 / d0 + w2 / d1);
        }
    }
    let edge = |h0: f64, h1: f64, m0: f64, m1: f64| {
        let d = ((2.0 * h0 + h1) * m0 - h0 * m1) / (h0 + h1);
        if d.signum() != m0.signum() || m0 == 0.0 {
            0.0
        } else if m0.signum() != m1.signum() && d.abs() > 3.0 * m0.abs() {
            3.0 * m0
        } else {
            d
        }
    };
    d[0] = edge(h[0], h[1], delta[0], delta[1]);
    d[n - 1] = edge(h[n - 2], h[n - 3], delta[n - 2], delta[n - 3]);
    d
}

impl GridFunction {
    fn check(nodes: &[f64], values: &[f64]) -> Result<(), OperatorError> {
        if nodes.len() < 3 || nodes.len() != values.len() {
            return Err(OperatorError::BadGrid("need at least 3 nodes and one value per node".into()));
        }
        if nodes[0] != 0.0 || *nodes.last().unwrap() != 1.0 {
            return Err(OperatorError::BadGrid("nodes must start at 0 and end at 1".into()));
        }
        if nodes.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(OperatorError::BadGrid("nodes must be strictly increasing".into()));
        }
        if values.iter().any(|v| !v.is_finite()) {
            return Err(OperatorError::BadGrid("values must be finite".into()));
        }
        Ok(())
    }

    /// Monotone (PCHIP) slopes.
    pub fn new(nodes: Vec<f64>, values: Vec<f64>) -> Result<GridFunction, OperatorError> {
        Self::check(&nodes, &values)?;
        let slopes = pchip_slopes(&nodes, &values);
        Ok(GridFunction { nodes, values, slopes })
    }

    /// Known slopes; non-finite entries fall back to PCHIP estimates.
    pub fn with_slopes(nodes: Vec<f64>, values: Vec<f64>, slopes: Vec<f64>) -> Result<GridFunction, OperatorError> {
        Self::check(&nodes, &values)?;
        if slopes.len() != nodes.len() {
            return Err(OperatorError::BadGrid("one slope per node required".into()));
        }
        let fallback = pchip_slopes(&nodes, &values);
        let slopes = slopes
            .iter()
            .zip(fallback)
            .map(|(&s, f)| if s.is_finite() { s } else { f })
            .collect();
        Ok(GridFunction { nodes, values, slopes })
    }

    pub fn from_fn<F: Fn(f64) -> f64>(nodes: Vec<f64>, f: F) -> Result<GridFunction, OperatorError> {
        let values = nodes.iter().map(|&t| f(t)).collect();
        Self::new(nodes, values)
    }

    pub fn zero(nodes: Vec<f64>) -> Result<GridFunction, OperatorError> {
        let n = nodes.len();
        Self::with_slopes(nodes, vec![0.0; n], vec![0.0; n])
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn slopes(&self) -> &[f64] {
        &self.slopes
    }

    fn locate(&self, t: f64) -> usize {
        let n = self.nodes.len();
        match self.nodes.binary_search_by(|x| x.total_cmp(&t)) {
            Ok(i) => i.min(n - 2),
            Err(0) => 0,
            Err(i) => (i - 1).min(n - 2),
        }
    }

    pub fn eval(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let i = self.locate(t);
        let (x0, x1) = (self.nodes[i], self.nodes[i + 1]);
        if t == x0 {
            return self.values[i];
        }
        if t == x1 {
            return self.values[i + 1];
        }
        let h = x1 - x0;
        let s = (t - x0) / h;
        let (y0, y1, d0, d1) = (self.values[i], self.values[i + 1], self.slopes[i], self.slopes[i + 1]);
        let s2 = s * s;
        let s3 = s2 * s;
        (2.0 * s3 - 3.0 * s2 + 1.0) * y0 + (s3 - 2.0 * s2 + s) * h * d0 + (-2.0 * s3 + 3.0 * s2) * y1 + (s3 - s2) * h * d1
    }

    pub fn derivative(&self, t: f64) -> f64 {
        let t = t.clamp(0.0, 1.0);
        let i = self.locate(t);
        let (x0, x1) = (self.nodes[i], self.nodes[i + 1]);
        let h = x1 - x0;
        let s = (t - x0) / h;
        let (y0, y1, d0, d1) = (self.values[i], self.values[i + 1], self.slopes[i], self.slopes[i + 1]);
        let s2 = s * s;
        ((6.0 * s2 - 6.0 * s) * (y0 - y1)) / h + (3.0 * s2 - 4.0 * s + 1.0) * d0 + (3.0 * s2 - 2.0 * s) * d1
    }

    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn min_value(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn scaled(&self, k: f64) -> GridFunction {
        GridFunction {
            nodes: self.nodes.clone(),
            values: self.values.iter().map(|v| k * v).collect(),
            slopes: self.slopes.iter().map(|v| k * v).collect(),
        }
    }

    /// `(1 − w)·self + w·other` on shared nodes.
    pub fn blend(&self, other: &GridFunction, w: f64) -> GridFunction {
        assert_eq!(self.nodes, other.nodes, "blend requires a shared mesh");
        let mix = |a: &[f64], b: &[f64]| a.iter().zip(b).map(|(x, y)| (1.0 - w) * x + w * y).collect();
        GridFunction {
            nodes: self.nodes.clone(),
            values: mix(&self.values, &other.values),
            slopes: mix(&self.slopes, &other.slopes),
        }
    }

    /// Max of |self − other| over the nodes of `self`.
    pub fn distance(&self, other: &GridFunction) -> f64 {
        self.nodes
            .iter()
            .zip(&self.values)
            .map(|(&t, v)| (v - other.eval(t)).abs())
            .fold(0.0, f64::max)
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from("t,u\n");
        for (t, u) in self.nodes.iter().zip(&self.values) {
            out.push_str(&format!("{t:.16e},{u:.16e}\n"));
        }
        out
    }

    pub fn from_csv(text: &str) -> Result<GridFunction, OperatorError> {
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || (i == 0 && line.starts_with('t')) {
                continue;
            }
            let mut parts = line.split(',');
            let parse = |p: Option<&str>| -> Result<f64, OperatorError> {
                p.and_then(|s| s.trim().parse().ok())
                    .ok_or_else(|| OperatorError::BadGrid(format!("bad CSV line {}", i + 1)))
            };
            nodes.push(parse(parts.next())?);
            values.push(parse(parts.next())?);
        }
        Self::new(nodes, values)
    }
}

/// A nonnegative source term with a cached antiderivative `G(s) = ∫_{1/2}^s g`.
#[derive(Debug, Clone)]
pub struct Source {
    primitive: Antiderivative,
    nonzero: bool,
}

impl Source {
    pub fn new<F: Fn(f64) -> f64 + Sync>(g: F, breaks: &[f64]) -> Result<Source, OperatorError> {
        let seen = AtomicBool::new(false);
        let wrapped = |t: f64| {
            if t <= 0.0 || t >= 1.0 {
                return 0.0;
            }
            let v = g(t);
            if v != 0.0 {
                seen.store(true, Ordering::Relaxed);
            }
            v
        };
        let primitive = Antiderivative::new(wrapped, breaks)?;
        Ok(Source {
            primitive,
            nonzero: seen.load(Ordering::Relaxed),
        })
    }

    pub fn is_zero(&self) -> bool {
        !self.nonzero
    }

    /// `∫_a^b g`.
    pub fn integral(&self, a: f64, b: f64) -> f64 {
        self.primitive.integral(a, b)
    }

    fn primitive(&self, s: f64) -> f64 {
        self.primitive.eval(s)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct SigmaResult {
    pub sigma: f64,
    pub zero_interval: Option<(f64, f64)>,
    pub residual: f64,
    pub tolerance: f64,
}

pub const SIGMA_PLATEAU_WIDTH: f64 = 1e-6;
const QUAD_TOL: f64 = 1e-12;

/// `(1/c(s))·φ⁻¹(y/d(s))`, NaN on failure.
fn branch_integrand(inst: &ProblemInstance, s: f64, y: f64) -> f64 {
    let v = inst.homeo.phi_inv(y / inst.d(s)).unwrap_or(f64::NAN);
    v / inst.c(s)
}

fn integrate_checked<F: Fn(f64) -> f64>(
    f: F,
    a: f64,
    b: f64,
    hints: &[SingularityHint],
    what: &'static str,
) -> Result<f64, OperatorError> {
    let r = integrate(f, a, b, QUAD_TOL, hints)?;
    if !r.converged && r.error_estimate > 1e-9 * (1.0 + r.value.abs()) {
        return Err(OperatorError::Unconverged { what, t: 0.5 * (a + b) });
    }
    Ok(r.value)
}

/// `ν¹(t) = ∫₀^t (1/c)φ⁻¹((1/d(s))∫_s^t g) ds`.
pub fn nu1(inst: &ProblemInstance, g: &Source, t: f64) -> Result<f64, OperatorError> {
    let gt = g.primitive(t);
    integrate_checked(
        |s| branch_integrand(inst, s, gt - g.primitive(s)),
        0.0,
        t,
        &SingularityHint::both(),
        "nu1",
    )
}

/// `ν²(t) = ∫_t^1 (1/c)φ⁻¹((1/d(s))∫_t^s g) ds`.
pub fn nu2(inst: &ProblemInstance, g: &Source, t: f64) -> Result<f64, OperatorError> {
    let gt = g.primitive(t);
    integrate_checked(
        |s| branch_integrand(inst, s, g.primitive(s) - gt),
        t,
        1.0,
        &SingularityHint::both(),
        "nu2",
    )
}

pub fn nu(inst: &ProblemInstance, g: &Source, t: f64) -> Result<f64, OperatorError> {
    Ok(nu1(inst, g, t)? - nu2(inst, g, t)?)
}

/// A zero of the nondecreasing function ν, with plateau detection.
pub fn find_sigma(inst: &ProblemInstance, g: &Source) -> Result<SigmaResult, OperatorError> {
    if g.is_zero() {
        return Err(OperatorError::NoSignChange);
    }
    let probes: Vec<f64> = (1..16).map(|k| k as f64 / 16.0).collect();
    let vals = probes
        .iter()
        .map(|&t| nu(inst, g, t))
        .collect::<Result<Vec<_>, _>>()?;
    let mut scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    if scale == 0.0 {
        scale = nu(inst, g, 1e-3)?.abs().max(nu(inst, g, 1.0 - 1e-3)?.abs());
    }
    if scale == 0.0 {
        return Err(OperatorError::NoSignChange);
    }
    let tol = 1e-10 * scale;
    // bracket: last probe with ν < -tol, first with ν > tol
    let mut lo = probes.iter().zip(&vals).filter(|(_, v)| **v < -tol).map(|(t, v)| (*t, *v)).last();
    let mut hi = probes.iter().zip(&vals).find(|(_, v)| **v > tol).map(|(t, v)| (*t, *v));
    let mut k = 5;
    while lo.is_none() && k <= 48 {
        let t = 0.5f64.powi(k);
        let v = nu(inst, g, t)?;
        if v < -tol {
            lo = Some((t, v));
        }
        k += 1;
    }
    let mut k = 5;
    while hi.is_none() && k <= 48 {
        let t = 1.0 - 0.5f64.powi(k);
        let v = nu(inst, g, t)?;
        if v > tol {
            hi = Some((t, v));
        }
        k += 1;
    }
    let (Some((a, fa)), Some((b, fb))) = (lo, hi) else {
        return Err(OperatorError::NoSignChange);
    };
    let mut failure = None;
    let root = brent_with_values(
        |t| match nu(inst, g, t) {
            Ok(v) => Ok(v),
            Err(e) => {
                failure = Some(e.clone());
                Err(e.to_string())
            }
        },
        a,
        b,
        fa,
        fb,
        1e-15,
        1e-14,
    );
    if let Some(e) = failure {
        return Err(e);
    }
    let root = root.map_err(|_| OperatorError::NoSignChange)?;
    let half = 0.5 * SIGMA_PLATEAU_WIDTH;
    let flat = |t: f64| -> Result<bool, OperatorError> { Ok(nu(inst, g, t)?.abs() <= tol) };
    if root - half > a && root + half < b && flat(root - half)? && flat(root + half)? {
        let below = |t: f64| nu(inst, g, t).map(|v| v < -tol).unwrap_or(false);
        let above = |t: f64| nu(inst, g, t).map(|v| v <= tol).unwrap_or(false);
        let left = bisect_predicate(below, a, root - half, 1e-13).1;
        let right = bisect_predicate(above, root + half, b, 1e-13).0;
        let sigma = 0.5 * (left + right);
        return Ok(SigmaResult {
            sigma,
            zero_interval: Some((left, right)),
            residual: nu(inst, g, sigma)?.abs(),
            tolerance: tol,
        });
    }
    Ok(SigmaResult {
        sigma: root,
        zero_interval: None,
        residual: nu(inst, g, root)?.abs(),
        tolerance: tol,
    })
}

#[derive(Debug, Clone)]
pub struct TResult {
    pub u: GridFunction,
    pub sigma: SigmaResult,
    /// `T(g)(σ)`, the sup-norm of the image.
    pub peak: f64,
}

/// `T(g)` on the given mesh.
pub fn apply_t(inst: &ProblemInstance, g: &Source, mesh: &[f64]) -> Result<TResult, OperatorError> {
    if g.is_zero() {
        return Ok(TResult {
            u: GridFunction::zero(mesh.to_vec())?,
            sigma: SigmaResult {
                sigma: 0.5,
                zero_interval: None,
                residual: 0.0,
                tolerance: 0.0,
            },
            peak: 0.0,
        });
    }
    let sigma = find_sigma(inst, g)?;
    let (u, peak) = apply_t_at_sigma(inst, g, mesh, sigma.sigma)?;
    Ok(TResult { u, sigma, peak })
}

/// `T(g)` with a prescribed σ; returns the grid function and `T(g)(σ)`.
pub fn apply_t_at_sigma(
    inst: &ProblemInstance,
    g: &Source,
    mesh: &[f64],
    sigma: f64,
) -> Result<(GridFunction, f64), OperatorError> {
    let n = mesh.len();
    if n < 3 || mesh[0] != 0.0 || mesh[n - 1] != 1.0 {
        return Err(OperatorError::BadGrid("mesh must run from 0 to 1".into()));
    }
    let gs = g.primitive(sigma);
    let left = |s: f64| branch_integrand(inst, s, gs - g.primitive(s));
    let right = |s: f64| branch_integrand(inst, s, g.primitive(s) - gs);
    let hints_for = |a: f64, b: f64| {
        let mut h = Vec::new();
        if a == 0.0 || a == sigma {
            h.push(SingularityHint::left());
        }
        if b == 1.0 || b == sigma {
            h.push(SingularityHint::right());
        }
        h
    };
    // per interval: (integral of the left branch, integral of the right branch)
    let pieces: Vec<(f64, f64)> = (0..n - 1)
        .into_par_iter()
        .map(|j| {
            let (a, b) = (mesh[j], mesh[j + 1]);
            if b <= sigma {
                Ok((integrate_checked(left, a, b, &hints_for(a, b), "T (left branch)")?, 0.0))
            } else if a >= sigma {
                Ok((0.0, integrate_checked(right, a, b, &hints_for(a, b), "T (right branch)")?))
            } else {
                Ok((
                    integrate_checked(left, a, sigma, &hints_for(a, sigma), "T (left branch)")?,
                    integrate_checked(right, sigma, b, &hints_for(sigma, b), "T (right branch)")?,
                ))
            }
        })
        .collect::<Result<_, OperatorError>>()?;
    let mut values = vec![0.0; n];
    let mut acc = 0.0;
    for j in 0..n - 1 {
        if mesh[j + 1] <= sigma {
            acc += pieces[j].0;
            values[j + 1] = acc;
        }
    }
    let peak_left = acc + pieces.iter().enumerate().filter(|(j, _)| mesh[*j] < sigma && mesh[*j + 1] > sigma).map(|(_, p)| p.0).sum::<f64>();
    let mut acc = 0.0;
    for j in (0..n - 1).rev() {
        if mesh[j] >= sigma {
            acc += pieces[j].1;
            values[j] = acc;
        }
    }
    let peak_right = acc + pieces.iter().enumerate().filter(|(j, _)| mesh[*j] < sigma && mesh[*j + 1] > sigma).map(|(_, p)| p.1).sum::<f64>();
    values[0] = 0.0;
    values[n - 1] = 0.0;
    let slopes: Vec<f64> = mesh
        .iter()
        .map(|&t| {
            if t == 0.0 || t == 1.0 {
                f64::NAN
            } else {
                branch_integrand(inst, t, gs - g.primitive(t))
            }
        })
        .collect();
    let u = GridFunction::with_slopes(mesh.to_vec(), values, slopes)?;
    Ok((u, 0.5 * (peak_left + peak_right)))
}

/// The source `F(λ,u)(t) = λ h(t) f(u(t))`.
pub fn source_for(inst: &ProblemInstance, lambda: f64, u: &GridFunction) -> Result<Source, OperatorError> {
    let p = &inst.profile;
    let mut breaks = u.nodes().to_vec();
    breaks.extend([p.alpha, p.alpha_bar, p.beta_bar, p.beta]);
    Source::new(
        |t| {
            let h = inst.h(t);
            if h == 0.0 {
                return 0.0;
            }
            let fu = inst.f(u.eval(t).max(0.0)).unwrap_or(f64::NAN);
            lambda * h * fu
        },
        &breaks,
    )
}

/// `H(λ,u) = T(F(λ,u))` on the mesh of `u`.
pub fn apply_h(inst: &ProblemInstance, lambda: f64, u: &GridFunction) -> Result<TResult, OperatorError> {
    if lambda == 0.0 {
        return apply_t(inst, &Source::new(|_| 0.0, &[])?, u.nodes());
    }
    let g = source_for(inst, lambda, u)?;
    apply_t(inst, &g, u.nodes())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ConeMode {
    /// `u(t) ≥ min{t, 1−t}·ρ₁·‖u‖∞` on [0, 1]
    Concavity,
    /// `u(t) ≥ ρ_h·‖u‖∞` on [γ¹, γ²]
    ConeK,
}

pub fn cone_margin(inst: &ProblemInstance, u: &GridFunction, mode: ConeMode) -> f64 {
    let norm = u.sup_norm();
    let c = &inst.constants;
    let p = &inst.profile;
    let pts = u.nodes().iter().zip(u.values());
    match mode {
        ConeMode::Concavity => pts
            .map(|(&t, &v)| v - t.min(1.0 - t) * c.rho1.value * norm)
            .fold(f64::INFINITY, f64::min),
        ConeMode::ConeK => pts
            .filter(|(&t, _)| t >= p.gamma1 && t <= p.gamma2)
            .map(|(_, &v)| v - c.rho_h.value * norm)
            .fold(f64::INFINITY, f64::min),
    }
}

#[derive(Debug, Clone)]
pub struct Residuals {
    /// `‖u − H(λ,u)‖∞` over the nodes
    pub sup_residual: f64,
    /// max over interior nodes of `|d φ(c u′) − ∫_t^σ F(λ,u)|`
    pub quasi_derivative_residual: f64,
    pub image: TResult,
}

/// Three-point derivative on a nonuniform mesh.
fn centered_derivative(x: &[f64], y: &[f64], i: usize) -> f64 {
    let h1 = x[i] - x[i - 1];
    let h2 = x[i + 1] - x[i];
    -h2 / (h1 * (h1 + h2)) * y[i - 1] + (h2 - h1) / (h1 * h2) * y[i] + h1 / (h2 * (h1 + h2)) * y[i + 1]
}

pub fn residual(inst: &ProblemInstance, lambda: f64, u: &GridFunction) -> Result<Residuals, OperatorError> {
    let image = apply_h(inst, lambda, u)?;
    let sup_residual = u
        .values()
        .iter()
        .zip(image.u.values())
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max);
    let quasi_derivative_residual = if lambda == 0.0 {
        let (x, y) = (u.nodes(), u.values());
        (3..x.len().saturating_sub(3))
            .map(|i| {
                let du = centered_derivative(x, y, i);
                (inst.d(x[i]) * inst.homeo.phi(inst.c(x[i]) * du).unwrap_or(f64::NAN)).abs()
            })
            .fold(0.0, f64::max)
    } else {
        let g = source_for(inst, lambda, u)?;
        let sigma = image.sigma.sigma;
        let (x, y) = (u.nodes(), u.values());
        (3..x.len().saturating_sub(3))
            .map(|i| {
                let du = centered_derivative(x, y, i);
                let q = inst.d(x[i]) * inst.homeo.phi(inst.c(x[i]) * du).unwrap_or(f64::NAN);
                (q - g.integral(x[i], sigma)).abs()
            })
            .fold(0.0, f64::max)
    };
    Ok(Residuals {
        sup_residual,
        quasi_derivative_residual,
        image,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::problem::InstanceSpec;

    fn inst(phi: &str, d: &str, h: &str, f: &str) -> ProblemInstance {
        ProblemInstance::new(InstanceSpec::parse(phi, "y", "y", "1", d, h, f).unwrap()).unwrap()
    }

    fn p3() -> ProblemInstance {
        let spec = InstanceSpec::parse("x*abs(x)", "y^2", "y^2", "1", "1", "1", "s").unwrap();
        ProblemInstance::new(spec).unwrap()
    }

    fn one() -> Source {
        Source::new(|_| 1.0, &[]).unwrap()
    }

    #[test]
    fn mesh_shape() {
        let m = default_mesh();
        assert_eq!(m.len(), 257);
        assert_eq!((m[0], m[128], m[256]), (0.0, 0.5, 1.0));
        assert!(m.windows(2).all(|w| w[1] > w[0]));
        for i in 0..=128 {
            assert_eq!(m[256 - i], 1.0 - m[i]);
        }
        assert!(m[1] < 1e-4);
        let small = graded_mesh(5, 0.5, 10);
        assert_eq!(small.len(), 5);
    }

    #[test]
    fn hermite_and_pchip() {
        let nodes = default_mesh();
        let g = GridFunction::from_fn(nodes.clone(), |t| t * (1.0 - t)).unwrap();
        for &t in &[0.1234, 0.5, 0.77777] {
            assert!((g.eval(t) - t * (1.0 - t)).abs() < 1e-6);
        }
        let exact = GridFunction::with_slopes(
            nodes.clone(),
            nodes.iter().map(|t| t * t * t).collect(),
            nodes.iter().map(|t| 3.0 * t * t).collect(),
        )
        .unwrap();
        assert!((exact.eval(0.3141) - 0.3141f64.powi(3)).abs() < 1e-15);
        assert!((exact.derivative(0.3141) - 3.0 * 0.3141f64.powi(2)).abs() < 1e-13);
        // monotone data stays monotone
        let step = GridFunction::new(vec![0.0, 0.2, 0.4, 0.6, 1.0], vec![0.0, 0.0, 1.0, 1.0, 1.0]).unwrap();
        let mut prev = -1.0;
        for k in 0..=1000 {
            let v = step.eval(k as f64 / 1000.0);
            assert!(v >= prev - 1e-15 && (-1e-15..=1.0 + 1e-15).contains(&v));
            prev = v;
        }
        let csv = g.to_csv();
        let back = GridFunction::from_csv(&csv).unwrap();
        assert_eq!(back.values(), g.values());
        assert!(GridFunction::new(vec![0.0, 0.5, 0.4, 1.0], vec![0.0; 4]).is_err());
    }

    #[test]
    fn nu_values() {
        let i = inst("x", "1", "1", "s");
        assert!(nu(&i, &one(), 0.5).unwrap().abs() < 1e-14);
        assert!((nu(&i, &one(), 0.75).unwrap() - 0.25).abs() < 1e-13);
        let p = p3();
        assert!(nu(&p, &one(), 0.5).unwrap().abs() < 1e-13);
    }

    #[test]
    fn sigma_values() {
        let i = inst("x", "1", "1", "s");
        let s = find_sigma(&i, &one()).unwrap();
        assert!((s.sigma - 0.5).abs() < 1e-12 && s.zero_interval.is_none());
        let i = inst("x", "1+t", "1", "s");
        let s = find_sigma(&i, &one()).unwrap();
        assert!((s.sigma - 0.442695040888963407).abs() < 1e-8, "{}", s.sigma);
        let zero = Source::new(|_| 0.0, &[]).unwrap();
        assert!(matches!(find_sigma(&i, &zero), Err(OperatorError::NoSignChange)));
    }

    #[test]
    fn sigma_plateau() {
        let h = "piece(0<=t<0.4 : 1; 0.4<=t<0.6 : 0; 0.6<=t<1 : 1)";
        let i = inst("x", "1", h, "s");
        let g = Source::new(|t| i.h(t), &[0.4, 0.6]).unwrap();
        let s = find_sigma(&i, &g).unwrap();
        let (a, b) = s.zero_interval.expect("plateau");
        assert!(a < 0.4 + 1e-9 && b > 0.6 - 1e-9 && a > 0.39 && b < 0.61, "{a} {b}");
        let (u1, _) = apply_t_at_sigma(&i, &g, &default_mesh(), a).unwrap();
        let (u2, _) = apply_t_at_sigma(&i, &g, &default_mesh(), b).unwrap();
        assert!(u1.distance(&u2) < 1e-8);
    }

    #[test]
    fn t_closed_forms() {
        let mesh = default_mesh();
        let i = inst("x", "1", "1", "s");
        let r = apply_t(&i, &one(), &mesh).unwrap();
        let err = mesh.iter().map(|&t| (r.u.eval(t) - t * (1.0 - t) / 2.0).abs()).fold(0.0, f64::max);
        assert!(err < 1e-12, "{err}");
        assert!((r.peak - 0.125).abs() < 1e-12);
        assert!((r.u.eval(0.3) - 0.105).abs() < 1e-12);
        let r = apply_t(&p3(), &one(), &mesh).unwrap();
        assert!((r.peak - 0.2357022603955158).abs() < 1e-10, "{}", r.peak);
        assert!((r.u.sup_norm() - 0.2357022603955158).abs() < 1e-10);
        let z = apply_t(&i, &Source::new(|_| 0.0, &[]).unwrap(), &mesh).unwrap();
        assert_eq!(z.u.sup_norm(), 0.0);
    }

    #[test]
    fn h_fixtures() {
        let mesh = default_mesh();
        let i = inst("x", "1", "1", "1");
        let u = GridFunction::from_fn(mesh.clone(), |t| 3.0 * t.min(1.0 - t)).unwrap();
        assert_eq!(apply_h(&i, 0.0, &u).unwrap().u.sup_norm(), 0.0);
        let r = apply_h(&i, 1.0, &u).unwrap();
        assert!(mesh.iter().all(|&t| (r.u.eval(t) - t * (1.0 - t) / 2.0).abs() < 1e-12));
        let q = inst("x", "1", "1", "s^2");
        // nodes hugging the kink keep the interpolant a tent
        let mut kinked = mesh.clone();
        kinked.extend([0.5 - 1e-6, 0.5 + 1e-6]);
        kinked.sort_by(f64::total_cmp);
        let tent = GridFunction::from_fn(kinked, |t| 2.0 * t.min(1.0 - t)).unwrap();
        let r = apply_h(&q, 6.0, &tent).unwrap();
        assert!((r.peak - 0.375).abs() < 1e-6, "{}", r.peak);
    }

    #[test]
    fn cone_margins() {
        let mesh = default_mesh();
        let i = inst("x", "1", "1", "1");
        let u = GridFunction::from_fn(mesh.clone(), |t| t * (1.0 - t) / 2.0).unwrap();
        assert!(cone_margin(&i, &u, ConeMode::Concavity) >= 0.0);
        assert!((u.eval(0.25) - 0.25 * 0.125 - 1.0 / 16.0).abs() < 1e-7);
        let z = GridFunction::zero(mesh.clone()).unwrap();
        assert_eq!(cone_margin(&i, &z, ConeMode::Concavity), 0.0);
        assert_eq!(cone_margin(&i, &z, ConeMode::ConeK), 0.0);
        let spike = GridFunction::from_fn(mesh, |t| (-(t - 0.5) * (t - 0.5) / 1e-4).exp()).unwrap();
        assert!(cone_margin(&i, &spike, ConeMode::Concavity) < 0.0);
        assert!(cone_margin(&i, &spike, ConeMode::ConeK) < 0.0);
    }

    #[test]
    fn residual_fixtures() {
        let mesh = default_mesh();
        let i = inst("x", "1", "1", "1");
        let u = GridFunction::from_fn(mesh.clone(), |t| t * (1.0 - t) / 2.0).unwrap();
        let r = residual(&i, 1.0, &u).unwrap();
        assert!(r.sup_residual < 1e-8 && r.quasi_derivative_residual < 1e-8, "{} {}", r.sup_residual, r.quasi_derivative_residual);
        let r = residual(&i, 1.0, &u.scaled(1.1)).unwrap();
        assert!((r.sup_residual - 0.1 / 8.0).abs() < 1e-10);
        let r = residual(&i, 2.0, &u).unwrap();
        assert!((r.sup_residual - 1.0 / 8.0).abs() < 1e-10);
        let q = inst("x", "1", "1", "s^2");
        let r = residual(&q, 5.0, &GridFunction::zero(mesh).unwrap()).unwrap();
        assert_eq!((r.sup_residual, r.quasi_derivative_residual), (0.0, 0.0));
    }

    #[test]
    fn singular_weight_image() {
        let h = "piece(0<=t<0.0625 : 0; 0.0625<=t<1 : (t-0.0625)*(1-t)^(-1))";
        let spec = InstanceSpec::parse("x+x^2", "min(y,y^2)", "max(y,y^2)", "1", "1", h, "s^2").unwrap();
        let i = ProblemInstance::new(spec).unwrap();
        let g = Source::new(|t| i.h(t), &[0.0625]).unwrap();
        let r = apply_t(&i, &g, &default_mesh()).unwrap();
        assert!(r.u.values()[255] > 0.0 && r.peak.is_finite());
        assert!(cone_margin(&i, &r.u, ConeMode::Concavity) >= -1e-10 * r.peak);
        assert!(cone_margin(&i, &r.u, ConeMode::ConeK) >= -1e-10 * r.peak);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(12))]

            #[test]
            fn monotone_in_source(a in 0.0f64..2.0, b in 0.1f64..3.0, k in 0.0f64..1.0) {
                let spec = InstanceSpec::parse("x+x^2", "min(y,y^2)", "max(y,y^2)", "1", "1+t", "1", "s").unwrap();
                let i = ProblemInstance::new(spec).unwrap();
                let mesh = graded_mesh(65, 0.85, 8);
                let g2 = Source::new(|t| b * (1.0 + a * t), &[]).unwrap();
                let g1 = Source::new(|t| b * (1.0 + a * t) + k * t * t, &[]).unwrap();
                let n1 = apply_t(&i, &g1, &mesh).unwrap().peak;
                let n2 = apply_t(&i, &g2, &mesh).unwrap().peak;
                prop_assert!(n1 >= n2 - 1e-10);
            }
        }
    }
}
