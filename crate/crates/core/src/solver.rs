//! Positive solutions: peak-anchored shooting, branch continuation in the
//! peak value, fixed-λ enumeration and Picard iteration.

use rayon::prelude::*;
use serde::Serialize;
use thiserror::Error;

use crate::operator::{apply_h, cone_margin, residual, ConeMode, GridFunction, OperatorError};
use crate::problem::{ProblemError, ProblemInstance};
use crate::quadrature::{integrate, SingularityHint};
use crate::roots::brent;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum SolverError {
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error("right-hand side failed at t = {t}: {msg}")]
    Rhs { t: f64, msg: String },
    #[error("step size underflow at t = {t}")]
    StepUnderflow { t: f64 },
    #[error("step budget exhausted at t = {t}")]
    StepBudget { t: f64 },
    #[error("tail integral did not converge at the {side} end")]
    Tail { side: &'static str },
    #[error("no branch point found for M = {m}")]
    NoBranchPoint { m: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ShootOptions {
    pub rtol: f64,
    /// width of the end regions handled by the frozen-f integral form
    pub tail_eps: f64,
    pub max_steps: usize,
}

impl Default for ShootOptions {
    fn default() -> Self {
        ShootOptions {
            rtol: 1e-12,
            tail_eps: 1e-4,
            max_steps: 200_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolverOptions {
    pub shoot: ShootOptions,
    pub newton_max_iter: usize,
    pub fd_step: f64,
    pub newton_tol: f64,
    pub cluster_tol: f64,
    /// acceptance bound for ‖u − H(λ,u)‖∞ / (1 + ‖u‖∞)
    pub residual_tol: f64,
    pub cone_tol: f64,
    pub mesh: Vec<f64>,
}

impl Default for SolverOptions {
    fn default() -> Self {
        SolverOptions {
            shoot: ShootOptions::default(),
            newton_max_iter: 50,
            fd_step: 1e-6,
            newton_tol: 1e-11,
            cluster_tol: 1e-3,
            residual_tol: 1e-6,
            cone_tol: 1e-8,
            mesh: crate::operator::default_mesh(),
        }
    }
}

/// `per_decade` log-spaced points on `[lo, hi]`, endpoints included.
pub fn log_grid(lo: f64, hi: f64, per_decade: usize) -> Vec<f64> {
    let decades = (hi / lo).log10();
    let n = ((decades * per_decade as f64).round() as usize).max(1);
    (0..=n).map(|i| lo * 10f64.powf(decades * i as f64 / n as f64)).collect()
}

pub fn default_m_grid() -> Vec<f64> {
    log_grid(1e-3, 1e3, 64)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Dir {
    Left,
    Right,
}

type State = [f64; 2];

const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    71.0 / 57600.0,
    0.0,
    -71.0 / 16695.0,
    71.0 / 1920.0,
    -17253.0 / 339200.0,
    22.0 / 525.0,
    -1.0 / 40.0,
];

/// Outcome of one leg: state at the tail boundary, the endpoint value of
/// u, and optional node samples `(t, u, u′)`.
struct Leg {
    end_u: f64,
    samples: Vec<(f64, f64, f64)>,
}

/// Peak-anchored shooting for `u′ = (1/c)φ⁻¹(q/d)`, `q′ = −λhf(u)`.
pub struct Shooter<'a> {
    inst: &'a ProblemInstance,
    opts: ShootOptions,
    stops: Vec<f64>,
}

impl<'a> Shooter<'a> {
    pub fn new(inst: &'a ProblemInstance, opts: ShootOptions) -> Self {
        let p = &inst.profile;
        let mut stops: Vec<f64> = vec![p.alpha, p.alpha_bar, p.beta_bar, p.beta]
            .into_iter()
            .chain(inst.h_expr.piece_breaks())
            .chain(inst.c_expr.piece_breaks())
            .chain(inst.d_expr.piece_breaks())
            .filter(|&x| x > 0.0 && x < 1.0)
            .collect();
        stops.sort_by(f64::total_cmp);
        stops.dedup();
        Shooter { inst, opts, stops }
    }

    fn du(&self, t: f64, q: f64) -> f64 {
        self.inst.homeo.phi_inv(q / self.inst.d(t)).unwrap_or(f64::NAN) / self.inst.c(t)
    }

    fn rhs(&self, t: f64, y: &State, lambda: f64) -> Result<State, SolverError> {
        let du = self.du(t, y[1]);
        let h = self.inst.h(t);
        let dq = if h == 0.0 {
            0.0
        } else {
            -lambda * h * self.inst.f(y[0].max(0.0)).map_err(|e| SolverError::Rhs { t, msg: e.to_string() })?
        };
        if !du.is_finite() || !dq.is_finite() {
            return Err(SolverError::Rhs {
                t,
                msg: format!("non-finite derivative (u = {}, q = {})", y[0], y[1]),
            });
        }
        Ok([du, dq])
    }

    /// Dormand-Prince 5(4) from `t0` to `t1`, landing exactly on every stop.
    fn integrate(
        &self,
        t0: f64,
        t1: f64,
        y0: State,
        lambda: f64,
        stops: &[f64],
        scale: f64,
        mut visit: impl FnMut(f64, &State),
    ) -> Result<State, SolverError> {
        let dir = (t1 - t0).signum();
        let mut t = t0;
        let mut y = y0;
        let mut k1 = self.rhs(t, &y, lambda)?;
        let span = (t1 - t0).abs();
        let mut h = 1e-3 * span;
        let mut qmax = y[1].abs();
        let mut stop_idx = 0;
        let mut steps = 0;
        while (t1 - t) * dir > 0.0 {
            let target = stops.get(stop_idx).copied().unwrap_or(t1);
            let remaining = (target - t).abs();
            let mut hh = h.min(remaining);
            let landing = hh >= remaining;
            if landing {
                hh = remaining;
            }
            let step = dir * hh;
            let mut k = [[0.0; 2]; 7];
            k[0] = k1;
            for s in 1..7 {
                let mut ys = y;
                for (j, kj) in k.iter().enumerate().take(s) {
                    ys[0] += step * A[s][j] * kj[0];
                    ys[1] += step * A[s][j] * kj[1];
                }
                let ts = if s >= 5 && landing { target } else { t + C[s] * step };
                k[s] = match self.rhs(ts, &ys, lambda) {
                    Ok(v) => v,
                    Err(e) => {
                        if hh < 1e-14 * span.max(1e-300) {
                            return Err(e);
                        }
                        // retry with a smaller step
                        k[s] = [f64::NAN; 2];
                        break;
                    }
                };
            }
            // the 5th-order solution is the last stage row (FSAL)
            let mut ynew = y;
            let mut err = [0.0; 2];
            for s in 0..6 {
                ynew[0] += step * A[6][s] * k[s][0];
                ynew[1] += step * A[6][s] * k[s][1];
            }
            for s in 0..7 {
                err[0] += step * E[s] * k[s][0];
                err[1] += step * E[s] * k[s][1];
            }
            let su = self.opts.rtol * (y[0].abs().max(ynew[0].abs()) + 1e-3 * scale);
            let sq = self.opts.rtol * (y[1].abs().max(ynew[1].abs()).max(qmax) + 1e-300);
            let en = ((err[0] / su).powi(2) + (err[1] / sq).powi(2)).sqrt() / std::f64::consts::SQRT_2;
            steps += 1;
            if steps > self.opts.max_steps {
                return Err(SolverError::StepBudget { t });
            }
            if !en.is_finite() || en > 1.0 {
                let fac = if en.is_finite() { (0.9 * en.powf(-0.2)).max(0.2) } else { 0.25 };
                h = hh * fac;
                if h < 1e-15 * span.max(1e-300) || h < f64::EPSILON * t.abs() * 4.0 {
                    return Err(SolverError::StepUnderflow { t });
                }
                continue;
            }
            t = if landing { target } else { t + step };
            y = ynew;
            qmax = qmax.max(y[1].abs());
            k1 = k[6];
            let fac = if en == 0.0 { 5.0 } else { (0.9 * en.powf(-0.2)).clamp(0.2, 5.0) };
            h = hh * fac;
            if landing {
                if stop_idx < stops.len() {
                    visit(t, &y);
                    stop_idx += 1;
                    // restart cleanly after a possible kink
                    k1 = self.rhs(t, &y, lambda)?;
                } else {
                    break;
                }
            }
        }
        Ok(y)
    }

    /// Integral form over the end region with f frozen at the boundary-side value.
    fn tail(&self, dir: Dir, edge: f64, y: State, lambda: f64, upto: f64) -> Result<f64, SolverError> {
        let hi = self.inst.h_integral();
        let fu = self.inst.f(y[0].max(0.0))?;
        let h_edge = hi.eval(edge);
        let (a, b, hints, sign) = match dir {
            Dir::Left => (upto, edge, vec![SingularityHint::left()], -1.0),
            Dir::Right => (edge, upto, vec![SingularityHint::right()], 1.0),
        };
        if a >= b {
            return Ok(y[0]);
        }
        let q = |s: f64| match dir {
            Dir::Left => y[1] + lambda * fu * (h_edge - hi.eval(s)),
            Dir::Right => y[1] - lambda * fu * (hi.eval(s) - h_edge),
        };
        let r = integrate(|s| self.du(s, q(s)), a, b, 1e-13, &hints).map_err(OperatorError::from)?;
        if !r.converged && r.error_estimate > 1e-9 * (1.0 + r.value.abs()) {
            return Err(SolverError::Tail {
                side: if dir == Dir::Left { "left" } else { "right" },
            });
        }
        Ok(y[0] + sign * r.value)
    }

    fn leg(&self, sigma: f64, m: f64, lambda: f64, dir: Dir, nodes: Option<&[f64]>, eps: f64) -> Result<Leg, SolverError> {
        let eps = eps.min(0.25 * sigma.min(1.0 - sigma));
        let (edge, end) = match dir {
            Dir::Left => (eps, 0.0),
            Dir::Right => (1.0 - eps, 1.0),
        };
        let inside = |x: f64| match dir {
            Dir::Left => x > edge && x < sigma,
            Dir::Right => x < edge && x > sigma,
        };
        let mut stops: Vec<f64> = self.stops.iter().copied().filter(|&x| inside(x)).collect();
        if let Some(ns) = nodes {
            stops.extend(ns.iter().copied().filter(|&x| inside(x)));
        }
        stops.sort_by(f64::total_cmp);
        stops.dedup();
        if dir == Dir::Left {
            stops.reverse();
        }
        let mut samples = Vec::new();
        let record = nodes.is_some();
        let y = self.integrate(sigma, edge, [m, 0.0], lambda, &stops, m, |t, y| {
            if record {
                samples.push((t, y[0], self.du(t, y[1])));
            }
        })?;
        if let Some(ns) = nodes {
            samples.push((edge, y[0], self.du(edge, y[1])));
            for &x in ns.iter().filter(|&&x| match dir {
                Dir::Left => x < edge,
                Dir::Right => x > edge,
            }) {
                if x == end {
                    continue;
                }
                let ux = self.tail(dir, edge, y, lambda, x)?;
                let fu = self.inst.f(y[0].max(0.0))?;
                let hi = self.inst.h_integral();
                let qx = match dir {
                    Dir::Left => y[1] + lambda * fu * (hi.eval(edge) - hi.eval(x)),
                    Dir::Right => y[1] - lambda * fu * (hi.eval(x) - hi.eval(edge)),
                };
                samples.push((x, ux, self.du(x, qx)));
            }
        }
        let end_u = self.tail(dir, edge, y, lambda, end)?;
        Ok(Leg { end_u, samples })
    }

    /// `(u(0), u(1)) / M` for the solution launched from `(σ, M)`.
    pub fn residual(&self, sigma: f64, m: f64, lambda: f64) -> Result<[f64; 2], SolverError> {
        let eps = self.opts.tail_eps;
        let (l, r) = rayon::join(
            || self.leg(sigma, m, lambda, Dir::Left, None, eps),
            || self.leg(sigma, m, lambda, Dir::Right, None, eps),
        );
        Ok([l?.end_u / m, r?.end_u / m])
    }

    /// The solution with exact node slopes, plus the change in the endpoint
    /// values when the tail width is halved.  The nodes are `mesh` together
    /// with the coefficient breakpoints and the points where u crosses a
    /// breakpoint of f, so the interpolant is smooth inside every cell.
    pub fn profile(&self, sigma: f64, m: f64, lambda: f64, mesh: &[f64]) -> Result<(GridFunction, f64), SolverError> {
        let close = |nodes: &[f64], x: f64| {
            let i = nodes.partition_point(|&v| v < x);
            (i < nodes.len() && nodes[i] - x < 1e-10) || (i > 0 && x - nodes[i - 1] < 1e-10)
        };
        let mut nodes = mesh.to_vec();
        let insert = |nodes: &mut Vec<f64>, x: f64| {
            if x > 0.0 && x < 1.0 && !close(nodes, x) {
                nodes.push(x);
                nodes.sort_by(f64::total_cmp);
            }
        };
        for &x in &self.stops {
            insert(&mut nodes, x);
        }
        // u − M behaves like |t − σ|^{1+1/p} when φ ~ x|x|^{p−1} near 0
        let i = nodes.partition_point(|&v| v < sigma).clamp(1, nodes.len() - 1);
        let h0 = nodes[i] - nodes[i - 1];
        insert(&mut nodes, sigma);
        let mut d = 8.0 * h0;
        for _ in 0..SIGMA_LAYERS {
            insert(&mut nodes, sigma - d);
            insert(&mut nodes, sigma + d);
            d *= SIGMA_GRADING;
        }
        let levels: Vec<f64> = self.inst.f_expr.piece_breaks().into_iter().filter(|&l| l > 0.0 && l < m).collect();
        if levels.is_empty() {
            return self.profile_on(sigma, m, lambda, &nodes);
        }
        let first = self.profile_on(sigma, m, lambda, &nodes)?;
        let u = &first.0;
        let mut extra = Vec::new();
        for w in nodes.windows(2) {
            let (a, b) = (w[0], w[1]);
            let (ua, ub) = (u.eval(a), u.eval(b));
            for &l in &levels {
                if (ua - l) * (ub - l) < 0.0 {
                    if let Ok(x) = brent(|t| Ok(u.eval(t) - l), a, b, 1e-15, 1e-14) {
                        if x > a && x < b {
                            extra.push(x);
                        }
                    }
                }
            }
        }
        if extra.is_empty() {
            return Ok(first);
        }
        for x in extra {
            insert(&mut nodes, x);
        }
        self.profile_on(sigma, m, lambda, &nodes)
    }

    fn profile_on(&self, sigma: f64, m: f64, lambda: f64, mesh: &[f64]) -> Result<(GridFunction, f64), SolverError> {
        let eps = self.opts.tail_eps;
        let left = self.leg(sigma, m, lambda, Dir::Left, Some(mesh), eps)?;
        let right = self.leg(sigma, m, lambda, Dir::Right, Some(mesh), eps)?;
        let l2 = self.leg(sigma, m, lambda, Dir::Left, None, 0.5 * eps)?;
        let r2 = self.leg(sigma, m, lambda, Dir::Right, None, 0.5 * eps)?;
        let tail_error = (l2.end_u - left.end_u).abs().max((r2.end_u - right.end_u).abs());
        let n = mesh.len();
        let mut values = vec![f64::NAN; n];
        let mut slopes = vec![f64::NAN; n];
        let mut put = |t: f64, u: f64, du: f64| {
            if let Ok(i) = mesh.binary_search_by(|x| x.total_cmp(&t)) {
                values[i] = u;
                slopes[i] = du;
            }
        };
        for &(t, u, du) in left.samples.iter().chain(&right.samples) {
            put(t, u, du);
        }
        for (i, &t) in mesh.iter().enumerate() {
            if t == sigma {
                values[i] = m;
                slopes[i] = 0.0;
            }
        }
        values[0] = 0.0;
        values[n - 1] = 0.0;
        slopes[0] = f64::NAN;
        slopes[n - 1] = f64::NAN;
        if values.iter().any(|v| v.is_nan()) {
            // nodes not hit by a leg (tail width clamp); fill from the interpolant of what we have
            let known: Vec<(f64, f64)> = mesh.iter().zip(&values).filter(|(_, v)| !v.is_nan()).map(|(t, v)| (*t, *v)).collect();
            for i in 0..n {
                if values[i].is_nan() {
                    let j = known.partition_point(|(t, _)| *t < mesh[i]);
                    let (t0, v0) = known[j - 1];
                    let (t1, v1) = known[j];
                    values[i] = v0 + (v1 - v0) * (mesh[i] - t0) / (t1 - t0);
                }
            }
        }
        Ok((GridFunction::with_slopes(mesh.to_vec(), values, slopes)?, tail_error))
    }
}

const SIGMA_LAYERS: usize = 56;
const SIGMA_GRADING: f64 = 0.85;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BranchSample {
    pub m: f64,
    pub lambda: f64,
    pub sigma: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Branch {
    pub samples: Vec<BranchSample>,
    /// M-intervals where continuation stalled
    pub gaps: Vec<(f64, f64)>,
}

impl Branch {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("M,lambda,sigma,residual\n");
        for p in &self.samples {
            s.push_str(&format!("{:.16e},{:.16e},{:.16e},{:.16e}\n", p.m, p.lambda, p.sigma, p.residual));
        }
        s
    }
}

fn norm2(r: &[f64; 2]) -> f64 {
    r[0].hypot(r[1])
}

/// Damped Newton with a forward-difference Jacobian on a 2×2 system.
fn newton2<F>(mut f: F, x0: [f64; 2], steps: [f64; 2], tol: f64, max_iter: usize) -> Option<([f64; 2], f64)>
where
    F: FnMut(&[f64; 2]) -> Option<[f64; 2]>,
{
    let mut x = x0;
    let mut r = f(&x)?;
    let mut rn = norm2(&r);
    for _ in 0..max_iter {
        if rn <= tol {
            return Some((x, rn));
        }
        let mut jac = [[0.0; 2]; 2];
        for j in 0..2 {
            let mut xp = x;
            xp[j] += steps[j];
            let rp = f(&xp)?;
            for i in 0..2 {
                jac[i][j] = (rp[i] - r[i]) / steps[j];
            }
        }
        let det = jac[0][0] * jac[1][1] - jac[0][1] * jac[1][0];
        if !det.is_finite() || det == 0.0 {
            return None;
        }
        let dx = [
            -(jac[1][1] * r[0] - jac[0][1] * r[1]) / det,
            -(-jac[1][0] * r[0] + jac[0][0] * r[1]) / det,
        ];
        let mut w = 1.0;
        let mut accepted = false;
        for _ in 0..30 {
            let xn = [x[0] + w * dx[0], x[1] + w * dx[1]];
            if let Some(rnew) = f(&xn) {
                let nn = norm2(&rnew);
                if nn < rn {
                    x = xn;
                    r = rnew;
                    rn = nn;
                    accepted = true;
                    break;
                }
            }
            w *= 0.5;
        }
        if !accepted {
            return if rn <= 1e3 * tol { Some((x, rn)) } else { None };
        }
        if (w * dx[0]).abs() < 1e-15 && (w * dx[1]).abs() < 1e-15 * x[1].abs().max(1.0) && rn <= 1e3 * tol {
            return Some((x, rn));
        }
    }
    (rn <= tol).then_some((x, rn))
}

pub struct Solver<'a> {
    pub inst: &'a ProblemInstance,
    pub opts: SolverOptions,
    shooter: Shooter<'a>,
}

impl<'a> Solver<'a> {
    pub fn new(inst: &'a ProblemInstance, opts: SolverOptions) -> Self {
        let shooter = Shooter::new(inst, opts.shoot);
        Solver { inst, opts, shooter }
    }

    pub fn shooter(&self) -> &Shooter<'a> {
        &self.shooter
    }

    fn sigma_bounds(&self) -> (f64, f64) {
        let e = 4.0 * self.opts.shoot.tail_eps;
        (e, 1.0 - e)
    }

    /// Newton on `(σ, ln λ)` at fixed peak value.
    pub fn branch_point_newton(&self, m: f64, sigma0: f64, lambda0: f64) -> Option<BranchSample> {
        let (lo, hi) = self.sigma_bounds();
        let f = |x: &[f64; 2]| -> Option<[f64; 2]> {
            if !(x[0] > lo && x[0] < hi) || !x[1].is_finite() {
                return None;
            }
            self.shooter.residual(x[0], m, x[1].exp()).ok()
        };
        let h = self.opts.fd_step;
        let (x, rn) = newton2(f, [sigma0, lambda0.ln()], [h, h], self.opts.newton_tol, self.opts.newton_max_iter)?;
        Some(BranchSample {
            m,
            lambda: x[1].exp(),
            sigma: x[0],
            residual: rn,
        })
    }

    /// ln λ making one leg end at zero, or ±∞ when no sign change exists.
    fn leg_log_lambda(&self, sigma: f64, m: f64, dir: Dir, guess: f64) -> Result<f64, SolverError> {
        let eps = self.opts.shoot.tail_eps;
        let g = |l: f64| -> Result<f64, String> {
            self.shooter
                .leg(sigma, m, l.exp(), dir, None, eps)
                .map(|leg| leg.end_u / m)
                .map_err(|e| e.to_string())
        };
        let mut a = guess;
        let mut fa = match g(a) {
            Ok(v) => v,
            Err(_) => -1.0,
        };
        let mut b = a;
        let mut fb = fa;
        let step = 1.5;
        for _ in 0..200 {
            if fa > 0.0 {
                b = a + step;
                fb = g(b).unwrap_or(-1.0);
                if fb <= 0.0 {
                    break;
                }
                a = b;
                fa = fb;
            } else {
                b = a;
                fb = fa;
                a = b - step;
                fa = g(a).unwrap_or(-1.0);
                if fa > 0.0 {
                    break;
                }
            }
            if a.abs() > 700.0 {
                return Ok(if fa > 0.0 { f64::INFINITY } else { f64::NEG_INFINITY });
            }
        }
        if !(fa > 0.0 && fb <= 0.0) {
            return Ok(f64::INFINITY);
        }
        crate::roots::brent_with_values(g, a, b, fa, fb, 1e-14, 0.0).map_err(|_| SolverError::NoBranchPoint { m })
    }

    /// Robust fallback: nested bracketing in σ and λ, then Newton polish.
    pub fn branch_point_bracketing(&self, m: f64, lambda_guess: f64) -> Result<BranchSample, SolverError> {
        let (lo, hi) = self.sigma_bounds();
        let guess = std::cell::Cell::new(lambda_guess.ln());
        let diff = |s: f64| -> Result<(f64, f64), SolverError> {
            let l = self.leg_log_lambda(s, m, Dir::Left, guess.get())?;
            let r = self.leg_log_lambda(s, m, Dir::Right, guess.get())?;
            if l.is_finite() {
                guess.set(l);
            }
            Ok((l - r, 0.5 * (l + r)))
        };
        let (mut a, mut b) = (lo, hi);
        let mut mid_level = guess.get();
        for _ in 0..26 {
            let c = 0.5 * (a + b);
            let (d, lvl) = diff(c)?;
            if lvl.is_finite() {
                mid_level = lvl;
            }
            if d.is_nan() {
                return Err(SolverError::NoBranchPoint { m });
            }
            if d > 0.0 {
                a = c;
            } else {
                b = c;
            }
        }
        let sigma = 0.5 * (a + b);
        self.branch_point_newton(m, sigma, mid_level.exp())
            .ok_or(SolverError::NoBranchPoint { m })
    }

    /// λ(M) along `m_grid`, each point seeded by extrapolation from the previous two.
    pub fn continue_branch(&self, m_grid: &[f64]) -> Branch {
        let mut samples: Vec<BranchSample> = Vec::new();
        let mut gaps = Vec::new();
        let mut idx = 0;
        while idx < m_grid.len() {
            let m = m_grid[idx];
            let found = if samples.is_empty() {
                self.branch_point_bracketing(m, 1.0).ok()
            } else {
                self.continue_to(&samples, m).or_else(|| {
                    let last = samples.last().unwrap();
                    self.branch_point_bracketing(m, last.lambda).ok()
                })
            };
            match found {
                Some(s) => samples.push(s),
                None => {
                    let prev = samples.last().map(|s| s.m).unwrap_or(m);
                    gaps.push((prev, m));
                }
            }
            idx += 1;
        }
        Branch { samples, gaps }
    }

    fn seed(samples: &[BranchSample], m: f64) -> (f64, f64) {
        let n = samples.len();
        let last = samples[n - 1];
        if n < 2 {
            return (last.sigma, last.lambda);
        }
        let prev = samples[n - 2];
        let w = (m / last.m).ln() / (last.m / prev.m).ln();
        let sigma = last.sigma + w * (last.sigma - prev.sigma);
        let ll = last.lambda.ln() + w * (last.lambda.ln() - prev.lambda.ln());
        (sigma, ll.exp())
    }

    /// Newton from an extrapolated seed, with step halving in M on failure.
    fn continue_to(&self, samples: &[BranchSample], m: f64) -> Option<BranchSample> {
        let (s, l) = Self::seed(samples, m);
        if let Some(p) = self.branch_point_newton(m, s, l) {
            return Some(p);
        }
        let mut local: Vec<BranchSample> = samples[samples.len().saturating_sub(2)..].to_vec();
        let mut target = m;
        let floor = 1e-6;
        loop {
            let last = *local.last().unwrap();
            if target == m {
                let (s, l) = Self::seed(&local, m);
                if let Some(p) = self.branch_point_newton(m, s, l) {
                    return Some(p);
                }
            }
            let mid = (last.m * target).sqrt();
            if (mid / last.m).ln().abs() < floor {
                return None;
            }
            let (s, l) = Self::seed(&local, mid);
            match self.branch_point_newton(mid, s, l) {
                Some(p) => {
                    local.push(p);
                    target = m;
                }
                None => target = mid,
            }
        }
    }

    /// λ at peak value `m`, seeded by interpolation between two branch samples.
    fn lambda_between(&self, a: &BranchSample, b: &BranchSample, m: f64) -> Option<BranchSample> {
        let w = (m / a.m).ln() / (b.m / a.m).ln();
        let sigma = a.sigma + w * (b.sigma - a.sigma);
        let lambda = (a.lambda.ln() + w * (b.lambda.ln() - a.lambda.ln())).exp();
        self.branch_point_newton(m, sigma, lambda)
    }

    /// Solutions at fixed λ: crossings of the branch with the level λ,
    /// refined in M and verified on the mesh.
    pub fn solve_fixed_lambda(&self, lambda: f64, branch: &Branch) -> FixedLambdaReport {
        let mut failures = Vec::new();
        if !(lambda > 0.0) {
            return FixedLambdaReport {
                lambda,
                solutions: Vec::new(),
                failures,
            };
        }
        let pairs: Vec<(BranchSample, BranchSample)> = branch
            .samples
            .windows(2)
            .filter(|w| (w[0].lambda - lambda) * (w[1].lambda - lambda) <= 0.0 && w[0].lambda != w[1].lambda)
            .map(|w| (w[0], w[1]))
            .collect();
        let results: Vec<Result<Solution, String>> = pairs
            .par_iter()
            .map(|(a, b)| {
                let crossing = self.refine_crossing(a, b, lambda).map_err(|e| format!("M in [{}, {}]: {e}", a.m, b.m))?;
                self.build_solution(crossing.sigma, crossing.m, lambda)
                    .map_err(|e| format!("M = {}: {e}", crossing.m))
            })
            .collect();
        let mut solutions: Vec<Solution> = Vec::new();
        for r in results {
            match r {
                Ok(s) => solutions.push(s),
                Err(e) => failures.push(e),
            }
        }
        solutions.sort_by(|a, b| a.sup_norm.total_cmp(&b.sup_norm));
        let mut distinct: Vec<Solution> = Vec::new();
        for s in solutions {
            let dup = distinct.iter().any(|d| {
                (d.sup_norm.ln() - s.sup_norm.ln()).abs() <= self.opts.cluster_tol && (d.sigma - s.sigma).abs() <= self.opts.cluster_tol
            });
            if !dup {
                distinct.push(s);
            }
        }
        FixedLambdaReport {
            lambda,
            solutions: distinct,
            failures,
        }
    }

    fn refine_crossing(&self, a: &BranchSample, b: &BranchSample, lambda: f64) -> Result<BranchSample, String> {
        if a.lambda == lambda {
            return Ok(*a);
        }
        if b.lambda == lambda {
            return Ok(*b);
        }
        let mut last = None;
        let f = |lm: f64| -> Result<f64, String> {
            let p = self.lambda_between(a, b, lm.exp()).ok_or_else(|| "branch point failed".to_string())?;
            Ok(p.lambda.ln() - lambda.ln())
        };
        let lm = brent(f, a.m.ln(), b.m.ln(), 1e-13, 1e-13).map_err(|e| e.to_string())?;
        if let Some(p) = self.lambda_between(a, b, lm.exp()) {
            last = Some(p);
        }
        let p = last.ok_or_else(|| "branch point failed".to_string())?;
        // pin λ exactly: re-solve (σ, M) at fixed λ
        self.fixed_lambda_newton(lambda, p.sigma, p.m).ok_or_else(|| "Newton at fixed lambda failed".to_string())
    }

    /// Newton on `(σ, ln M)` at fixed λ.
    pub fn fixed_lambda_newton(&self, lambda: f64, sigma0: f64, m0: f64) -> Option<BranchSample> {
        let (lo, hi) = self.sigma_bounds();
        let f = |x: &[f64; 2]| -> Option<[f64; 2]> {
            if !(x[0] > lo && x[0] < hi) || !x[1].is_finite() {
                return None;
            }
            self.shooter.residual(x[0], x[1].exp(), lambda).ok()
        };
        let h = self.opts.fd_step;
        let (x, rn) = newton2(f, [sigma0, m0.ln()], [h, h], self.opts.newton_tol, self.opts.newton_max_iter)?;
        Some(BranchSample {
            m: x[1].exp(),
            lambda,
            sigma: x[0],
            residual: rn,
        })
    }

    /// Mesh solution from shooting data, with its certificate.
    pub fn build_solution(&self, sigma: f64, m: f64, lambda: f64) -> Result<Solution, SolverError> {
        let (u, tail_error) = self.shooter.profile(sigma, m, lambda, &self.opts.mesh)?;
        let cert = verify_solution(self.inst, lambda, &u, &self.opts)?;
        Ok(Solution {
            sup_norm: m.max(u.sup_norm()),
            u,
            sigma,
            lambda,
            sup_residual: cert.sup_residual,
            cone_margin: cert.cone_margin_concavity,
            tail_error,
            certificate: cert,
        })
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Solution {
    #[serde(skip)]
    pub u: GridFunction,
    pub sigma: f64,
    pub lambda: f64,
    pub sup_norm: f64,
    pub sup_residual: f64,
    pub cone_margin: f64,
    pub tail_error: f64,
    pub certificate: Certificate,
}

#[derive(Debug, Clone, Serialize)]
pub struct FixedLambdaReport {
    pub lambda: f64,
    pub solutions: Vec<Solution>,
    pub failures: Vec<String>,
}

impl FixedLambdaReport {
    pub fn index_csv(&self) -> String {
        let mut s = String::from("index,lambda,sup_norm,sigma,sup_residual,quasi_derivative_residual,cone_margin,pass\n");
        for (i, sol) in self.solutions.iter().enumerate() {
            s.push_str(&format!(
                "{},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{:.16e},{}\n",
                i,
                sol.lambda,
                sol.sup_norm,
                sol.sigma,
                sol.sup_residual,
                sol.certificate.quasi_derivative_residual,
                sol.cone_margin,
                sol.certificate.pass
            ));
        }
        s
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct Certificate {
    pub lambda: f64,
    pub sup_norm: f64,
    pub sup_residual: f64,
    pub relative_residual: f64,
    pub quasi_derivative_residual: f64,
    pub cone_margin_concavity: f64,
    pub cone_margin_k: f64,
    pub boundary: [f64; 2],
    pub min_value: f64,
    /// σ of the source F(λ,u) from the σ-equation
    pub operator_sigma: f64,
    pub tolerance: f64,
    pub pass: bool,
    pub failures: Vec<String>,
}

pub fn verify_solution(
    inst: &ProblemInstance,
    lambda: f64,
    u: &GridFunction,
    opts: &SolverOptions,
) -> Result<Certificate, SolverError> {
    let norm = u.sup_norm();
    let res = residual(inst, lambda, u)?;
    let relative = res.sup_residual / (1.0 + norm);
    let concave = cone_margin(inst, u, ConeMode::Concavity);
    let conek = cone_margin(inst, u, ConeMode::ConeK);
    let vals = u.values();
    let boundary = [vals[0], vals[vals.len() - 1]];
    let min_value = u.min_value();
    let mut failures = Vec::new();
    if !(norm > 0.0) {
        failures.push("zero function".to_string());
    }
    if relative > opts.residual_tol {
        failures.push(format!("fixed-point residual {relative:.3e} exceeds {:.1e}", opts.residual_tol));
    }
    if min_value < -opts.cone_tol * norm {
        failures.push(format!("negative values (min {min_value:.3e})"));
    }
    if concave < -opts.cone_tol * norm {
        failures.push(format!("cone bound min(t,1-t) rho1 |u| violated by {:.3e}", -concave));
    }
    if conek < -opts.cone_tol * norm {
        failures.push(format!("cone K bound violated by {:.3e}", -conek));
    }
    if boundary != [0.0, 0.0] {
        failures.push("boundary values are not zero".to_string());
    }
    Ok(Certificate {
        lambda,
        sup_norm: norm,
        sup_residual: res.sup_residual,
        relative_residual: relative,
        quasi_derivative_residual: res.quasi_derivative_residual,
        cone_margin_concavity: concave,
        cone_margin_k: conek,
        boundary,
        min_value,
        operator_sigma: res.image.sigma.sigma,
        tolerance: opts.residual_tol,
        pass: failures.is_empty(),
        failures,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NonConvergenceKind {
    CollapsedToZero,
    Oscillating,
    Diverged,
    Budget,
}

#[derive(Debug, Clone)]
pub enum PicardOutcome {
    Converged(Box<Solution>),
    Failed { kind: NonConvergenceKind, iterations: usize, last_norm: f64 },
}

/// `u ← (1−w)u + w H(λ,u)` until the sup-change is below `tol·(1+‖u‖)`.
pub fn picard(
    inst: &ProblemInstance,
    lambda: f64,
    u0: &GridFunction,
    damping: f64,
    max_iter: usize,
    tol: f64,
    opts: &SolverOptions,
) -> Result<PicardOutcome, SolverError> {
    let start = u0.sup_norm();
    let floor = 1e-12 * start.max(1e-300);
    let mut u = u0.clone();
    let mut changes: Vec<f64> = Vec::new();
    for it in 1..=max_iter {
        let image = apply_h(inst, lambda, &u)?;
        let next = if damping == 1.0 { image.u.clone() } else { u.blend(&image.u, damping) };
        let change = next.distance(&u);
        let norm = next.sup_norm();
        u = next;
        if norm <= floor {
            return Ok(PicardOutcome::Failed {
                kind: NonConvergenceKind::CollapsedToZero,
                iterations: it,
                last_norm: norm,
            });
        }
        if !norm.is_finite() || norm > 1e12 * start.max(1.0) {
            return Ok(PicardOutcome::Failed {
                kind: NonConvergenceKind::Diverged,
                iterations: it,
                last_norm: norm,
            });
        }
        if change <= tol * (1.0 + norm) {
            let cert = verify_solution(inst, lambda, &u, opts)?;
            let sol = Solution {
                sigma: image.sigma.sigma,
                lambda,
                sup_norm: norm,
                sup_residual: cert.sup_residual,
                cone_margin: cert.cone_margin_concavity,
                tail_error: 0.0,
                certificate: cert,
                u,
            };
            return Ok(PicardOutcome::Converged(Box::new(sol)));
        }
        changes.push(change);
        let n = changes.len();
        if n >= 40 && changes[n - 1] >= 0.99 * changes[n - 21] {
            return Ok(PicardOutcome::Failed {
                kind: NonConvergenceKind::Oscillating,
                iterations: it,
                last_norm: norm,
            });
        }
    }
    Ok(PicardOutcome::Failed {
        kind: NonConvergenceKind::Budget,
        iterations: max_iter,
        last_norm: u.sup_norm(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::default_mesh;
    use crate::problem::InstanceSpec;

    fn inst(f: &str) -> ProblemInstance {
        ProblemInstance::new(InstanceSpec::parse("x", "y", "y", "1", "1", "1", f).unwrap()).unwrap()
    }

    fn tent(height: f64) -> GridFunction {
        GridFunction::from_fn(default_mesh(), |t| 2.0 * height * t.min(1.0 - t)).unwrap()
    }

    #[test]
    fn log_grid_shape() {
        let g = log_grid(1e-3, 1e3, 64);
        assert_eq!(g.len(), 385);
        assert!((g[0] - 1e-3).abs() < 1e-18 && (g[384] - 1e3).abs() < 1e-9);
    }

    #[test]
    fn linear_branch_is_flat() {
        let i = inst("s");
        let s = Solver::new(&i, SolverOptions::default());
        let b = s.continue_branch(&log_grid(1e-2, 1e2, 4));
        assert!(b.gaps.is_empty());
        for p in &b.samples {
            assert!((p.lambda - std::f64::consts::PI.powi(2)).abs() < 1e-7, "{p:?}");
            assert!((p.sigma - 0.5).abs() < 1e-7);
        }
    }

    #[test]
    fn quadratic_branch_scaling() {
        let i = inst("s^2");
        let s = Solver::new(&i, SolverOptions::default());
        let b = s.continue_branch(&log_grid(1e-1, 1e1, 4));
        assert!(b.gaps.is_empty());
        for p in &b.samples {
            assert!((p.lambda * p.m - 11.79668793896954).abs() < 1e-7, "{p:?}");
        }
        assert!(b.samples.windows(2).all(|w| w[1].lambda < w[0].lambda));
    }

    #[test]
    fn fixed_lambda_quadratic() {
        let i = inst("s^2");
        let s = Solver::new(&i, SolverOptions::default());
        let b = s.continue_branch(&log_grid(1e-1, 1e2, 8));
        let r = s.solve_fixed_lambda(6.0, &b);
        assert_eq!(r.solutions.len(), 1, "{:?}", r.failures);
        let sol = &r.solutions[0];
        assert!((sol.sup_norm - 1.9661146564949233).abs() < 1e-7, "{}", sol.sup_norm);
        assert!(sol.certificate.pass, "{:?}", sol.certificate);
        assert!((sol.certificate.operator_sigma - sol.sigma).abs() < 1e-6);
        assert!(s.solve_fixed_lambda(0.0, &b).solutions.is_empty());
    }

    #[test]
    fn picard_fixtures() {
        let opts = SolverOptions::default();
        let i = inst("sqrt(s)");
        match picard(&i, 1.0, &tent(1.0), 1.0, 200, 1e-13, &opts).unwrap() {
            PicardOutcome::Converged(sol) => {
                assert!((sol.sup_norm - 0.012556345121604762).abs() < 1e-6, "{}", sol.sup_norm);
                assert!(sol.certificate.pass);
            }
            other => panic!("{other:?}"),
        }
        let q = inst("s^2");
        assert!(matches!(
            picard(&q, 6.0, &tent(0.01), 1.0, 200, 1e-13, &opts).unwrap(),
            PicardOutcome::Failed {
                kind: NonConvergenceKind::CollapsedToZero,
                ..
            }
        ));
        let zero = GridFunction::zero(default_mesh()).unwrap();
        assert!(matches!(
            picard(&q, 6.0, &zero, 1.0, 10, 1e-13, &opts).unwrap(),
            PicardOutcome::Failed {
                kind: NonConvergenceKind::CollapsedToZero,
                ..
            }
        ));
    }

    #[test]
    fn certificates() {
        let i = inst("1");
        let opts = SolverOptions::default();
        let u = GridFunction::with_slopes(
            default_mesh(),
            default_mesh().iter().map(|t| t * (1.0 - t) / 2.0).collect(),
            default_mesh().iter().map(|t| 0.5 - t).collect(),
        )
        .unwrap();
        assert!(verify_solution(&i, 1.0, &u, &opts).unwrap().pass);
        let c = verify_solution(&i, 2.0, &u, &opts).unwrap();
        assert!(!c.pass && (c.sup_residual - 0.125).abs() < 1e-10);
        let neg = u.scaled(-1.0);
        assert!(!verify_solution(&i, 1.0, &neg, &opts).unwrap().pass);
    }
}
