//! Certificates built from the R-curves: existence and multiplicity windows,
//! the (f₀, f_∞) case table, nonexistence bounds and sampled shell checks.

use serde::Serialize;
use thiserror::Error;

use crate::homeo::HomeoError;
use crate::operator::{apply_h, cone_margin, ConeMode, GridFunction, OperatorError};
use crate::problem::{LimitClass, ProblemError, ProblemInstance};
use crate::roots::golden_min;
use crate::solver::{log_grid, Branch};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TheoremError {
    #[error(transparent)]
    Problem(#[from] ProblemError),
    #[error(transparent)]
    Homeo(#[from] HomeoError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error("invalid arguments: {0}")]
    Precondition(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Witnesses {
    pub m1: f64,
    pub m2: f64,
    pub big_m1: Option<f64>,
    pub big_m2: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Window {
    pub lambda_low: f64,
    pub lambda_high: f64,
    pub predicted_count: usize,
    pub shells: Vec<(f64, f64)>,
    pub theorem: &'static str,
    pub witnesses: Witnesses,
}

impl Window {
    pub fn length(&self) -> f64 {
        self.lambda_high - self.lambda_low
    }

    pub fn midpoint(&self) -> f64 {
        0.5 * (self.lambda_low + self.lambda_high)
    }

    fn separation(&self) -> f64 {
        self.shells
            .windows(2)
            .map(|w| (w[1].0 / w[0].1).ln().abs())
            .fold(f64::INFINITY, f64::min)
            .min(self.shells.iter().map(|s| (s.1 / s.0).ln()).fold(f64::INFINITY, f64::min))
    }
}

/// R-curves sampled on an increasing m-grid.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RScan {
    pub m: Vec<f64>,
    pub r1: Vec<f64>,
    pub r2: Vec<f64>,
}

impl RScan {
    pub fn new(inst: &ProblemInstance, m: &[f64]) -> Result<RScan, TheoremError> {
        if m.len() < 2 || m.windows(2).any(|w| !(w[1] > w[0])) || m[0] <= 0.0 {
            return Err(TheoremError::Precondition("m-grid must be positive and increasing".into()));
        }
        let rows = inst.r_table(m)?;
        Ok(RScan {
            m: m.to_vec(),
            r1: rows.iter().map(|r| r[1]).collect(),
            r2: rows.iter().map(|r| r[2]).collect(),
        })
    }

    pub fn decades(&self) -> f64 {
        (self.m[self.m.len() - 1] / self.m[0]).log10()
    }
}

/// Single-solution window from a witness pair.
pub fn existence_window(inst: &ProblemInstance, m1: f64, m2: f64) -> Result<Option<Window>, TheoremError> {
    if !(m1 > 0.0 && m2 > 0.0) || m1 == m2 {
        return Err(TheoremError::Precondition(format!(
            "need distinct positive m1, m2 (got {m1}, {m2})"
        )));
    }
    let (r1, _) = inst.r_curves(m1)?;
    let (_, r2) = inst.r_curves(m2)?;
    if r1 < r2 {
        Ok(Some(Window {
            lambda_low: r1,
            lambda_high: r2,
            predicted_count: 1,
            shells: vec![(m1.min(m2), m1.max(m2))],
            theorem: "one solution",
            witnesses: Witnesses {
                m1,
                m2,
                big_m1: None,
                big_m2: None,
            },
        }))
    } else {
        Ok(None)
    }
}

/// Widest single-solution window over pairs of distinct scan points.
pub fn best_existence_window(scan: &RScan) -> Option<Window> {
    let n = scan.m.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| scan.r2[b].total_cmp(&scan.r2[a]).then(a.cmp(&b)));
    let mut best: Option<Window> = None;
    for i in 0..n {
        let Some(&j) = order.iter().find(|&&j| j != i) else { continue };
        let (m1, m2) = (scan.m[i], scan.m[j]);
        consider(
            &mut best,
            Window {
                lambda_low: scan.r1[i],
                lambda_high: scan.r2[j],
                predicted_count: 1,
                shells: vec![(m1.min(m2), m1.max(m2))],
                theorem: "one solution",
                witnesses: Witnesses {
                    m1,
                    m2,
                    big_m1: None,
                    big_m2: None,
                },
            },
        );
    }
    best
}

fn prefix_best(v: &[f64], better: impl Fn(f64, f64) -> bool) -> Vec<Option<usize>> {
    // out[i] = best index strictly below i
    let mut out = vec![None; v.len()];
    let mut best: Option<usize> = None;
    for i in 0..v.len() {
        out[i] = best;
        if best.map_or(true, |b| better(v[i], v[b])) {
            best = Some(i);
        }
    }
    out
}

fn suffix_best(v: &[f64], better: impl Fn(f64, f64) -> bool) -> Vec<Option<usize>> {
    // out[i] = best index strictly above i; ties go to the smaller index
    let mut out = vec![None; v.len()];
    let mut best: Option<usize> = None;
    for i in (0..v.len()).rev() {
        out[i] = best;
        if best.map_or(true, |b| !better(v[b], v[i])) {
            best = Some(i);
        }
    }
    out
}

fn lt(a: f64, b: f64) -> bool {
    a < b
}

fn gt(a: f64, b: f64) -> bool {
    a > b
}

fn consider(best: &mut Option<Window>, w: Window) {
    if !(w.lambda_low < w.lambda_high) {
        return;
    }
    let take = match best {
        None => true,
        Some(b) => {
            let (lw, lb) = (w.length(), b.length());
            lw > lb || (lw == lb && w.separation() > b.separation())
        }
    };
    if take {
        *best = Some(w);
    }
}

/// Best windows for the two- and three-solution theorems over the scan,
/// with witnesses refined between neighbouring grid points.
pub fn multiplicity_windows(inst: &ProblemInstance, scan: &RScan) -> Result<Vec<Window>, TheoremError> {
    if scan.decades() < 4.0 - 1e-9 {
        return Err(TheoremError::Precondition("scan must cover at least 4 decades".into()));
    }
    let (m, r1, r2) = (&scan.m, &scan.r1, &scan.r2);
    let n = m.len();
    let min_r1_below = prefix_best(r1, lt);
    let min_r1_above = suffix_best(r1, lt);
    let max_r2_below = prefix_best(r2, gt);
    let max_r2_above = suffix_best(r2, gt);
    let mut out = Vec::new();

    // two solutions, m1 < m2 < M1
    let mut best = None;
    for j in 0..n {
        if let (Some(i), Some(k)) = (min_r1_below[j], min_r1_above[j]) {
            consider(
                &mut best,
                Window {
                    lambda_low: r1[i].max(r1[k]),
                    lambda_high: r2[j],
                    predicted_count: 2,
                    shells: vec![(m[i], m[j]), (m[j], m[k])],
                    theorem: "two solutions (m1 < m2 < M1)",
                    witnesses: Witnesses {
                        m1: m[i],
                        m2: m[j],
                        big_m1: Some(m[k]),
                        big_m2: None,
                    },
                },
            );
        }
    }
    out.extend(best);

    // two solutions, m2 < m1 < M2
    let mut best = None;
    for j in 0..n {
        if let (Some(i), Some(k)) = (max_r2_below[j], max_r2_above[j]) {
            consider(
                &mut best,
                Window {
                    lambda_low: r1[j],
                    lambda_high: r2[i].min(r2[k]),
                    predicted_count: 2,
                    shells: vec![(m[i], m[j]), (m[j], m[k])],
                    theorem: "two solutions (m2 < m1 < M2)",
                    witnesses: Witnesses {
                        m1: m[j],
                        m2: m[i],
                        big_m1: None,
                        big_m2: Some(m[k]),
                    },
                },
            );
        }
    }
    out.extend(best);

    // three solutions, m2 < m1 < M2 < M1
    let mut best = None;
    for a in 0..n {
        let Some(i) = max_r2_below[a] else { continue };
        for b in a + 1..n {
            let Some(k) = min_r1_above[b] else { continue };
            consider(
                &mut best,
                Window {
                    lambda_low: r1[a].max(r1[k]),
                    lambda_high: r2[i].min(r2[b]),
                    predicted_count: 3,
                    shells: vec![(m[i], m[a]), (m[a], m[b]), (m[b], m[k])],
                    theorem: "three solutions (m2 < m1 < M2 < M1)",
                    witnesses: Witnesses {
                        m1: m[a],
                        m2: m[i],
                        big_m1: Some(m[k]),
                        big_m2: Some(m[b]),
                    },
                },
            );
        }
    }
    if let Some(w) = best {
        out.push(refine_three(inst, scan, w)?);
    }

    // three solutions, m1 < m2 < M1 < M2
    let mut best = None;
    for a in 0..n {
        let Some(i) = min_r1_below[a] else { continue };
        for b in a + 1..n {
            let Some(k) = max_r2_above[b] else { continue };
            consider(
                &mut best,
                Window {
                    lambda_low: r1[i].max(r1[b]),
                    lambda_high: r2[a].min(r2[k]),
                    predicted_count: 3,
                    shells: vec![(m[i], m[a]), (m[a], m[b]), (m[b], m[k])],
                    theorem: "three solutions (m1 < m2 < M1 < M2)",
                    witnesses: Witnesses {
                        m1: m[i],
                        m2: m[a],
                        big_m1: Some(m[b]),
                        big_m2: Some(m[k]),
                    },
                },
            );
        }
    }
    out.extend(best);
    Ok(out)
}

/// Optimize one witness of a three-solution window within its grid cell.
fn refine_three(inst: &ProblemInstance, scan: &RScan, w: Window) -> Result<Window, TheoremError> {
    let cell = |x: f64| -> (f64, f64) {
        let i = scan.m.iter().position(|&v| v == x).unwrap_or(0);
        let lo = if i > 0 { scan.m[i - 1] } else { x };
        let hi = if i + 1 < scan.m.len() { scan.m[i + 1] } else { x };
        (lo, hi)
    };
    let r1 = |m: f64| inst.r_curves(m).map(|r| r.0).unwrap_or(f64::INFINITY);
    let r2 = |m: f64| inst.r_curves(m).map(|r| r.1).unwrap_or(f64::NEG_INFINITY);
    let wt = w.witnesses;
    let (big_m1, big_m2) = (wt.big_m1.unwrap(), wt.big_m2.unwrap());
    let optimize = |x: f64, lower: f64, upper: f64, minimize: bool, f: &dyn Fn(f64) -> f64| -> f64 {
        let (lo, hi) = cell(x);
        let (lo, hi) = (lo.max(lower * (1.0 + 1e-12)), hi.min(upper * (1.0 - 1e-12)));
        if !(lo < hi) {
            return x;
        }
        let sign = if minimize { 1.0 } else { -1.0 };
        let (z, v) = golden_min(|z| sign * f(z.exp()), lo.ln(), hi.ln(), 60);
        if v < sign * f(x) {
            z.exp()
        } else {
            x
        }
    };
    let m2 = optimize(wt.m2, 0.0, wt.m1, false, &r2);
    let m1 = optimize(wt.m1, m2, big_m2, true, &r1);
    let bm2 = optimize(big_m2, m1, big_m1, false, &r2);
    let bm1 = optimize(big_m1, bm2, f64::INFINITY, true, &r1);
    let low = r1(m1).max(r1(bm1));
    let high = r2(m2).min(r2(bm2));
    if !(low < high) || high - low < w.length() {
        return Ok(w);
    }
    Ok(Window {
        lambda_low: low,
        lambda_high: high,
        shells: vec![(m2, m1), (m1, bm2), (bm2, bm1)],
        witnesses: Witnesses {
            m1,
            m2,
            big_m1: Some(bm1),
            big_m2: Some(bm2),
        },
        ..w
    })
}

/// Re-check `R_* < R^*` (or the two-point inequality) on another instance,
/// typically one built with a tighter quadrature tolerance.
pub fn recheck_window(inst: &ProblemInstance, w: &Window) -> Result<bool, TheoremError> {
    let r1 = |m: f64| inst.r_curves(m).map(|r| r.0);
    let r2 = |m: f64| inst.r_curves(m).map(|r| r.1);
    let wt = &w.witnesses;
    let mut low = r1(wt.m1)?;
    let mut high = r2(wt.m2)?;
    if let Some(x) = wt.big_m1 {
        low = low.max(r1(x)?);
    }
    if let Some(x) = wt.big_m2 {
        high = high.min(r2(x)?);
    }
    Ok(low < high)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Threshold {
    pub value: f64,
    /// where the scan extremum sits; infinite or zero when it ran off the scan
    pub at_m: f64,
    pub method: &'static str,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct NonexistenceBound {
    pub value: f64,
    /// C₁ = sup f/φ or ε = inf f/φ
    pub ratio_bound: f64,
    pub at_s: f64,
    pub method: &'static str,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CaseReport {
    pub f0: LimitClass,
    pub finf: LimitClass,
    pub cases: Vec<u8>,
    pub inconclusive: bool,
    pub predictions: Vec<String>,
    pub lambda_lower_star: Option<Threshold>,
    pub lambda_upper_star: Option<Threshold>,
    pub lambda_bar: Option<NonexistenceBound>,
    pub lambda_underline: Option<NonexistenceBound>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Lim {
    Zero,
    Fin,
    Inf,
}

fn lim(c: LimitClass) -> Option<Lim> {
    match c {
        LimitClass::Zero => Some(Lim::Zero),
        LimitClass::Finite(v) if v > 0.0 => Some(Lim::Fin),
        LimitClass::Finite(_) => Some(Lim::Zero),
        LimitClass::Infinite => Some(Lim::Inf),
        LimitClass::Inconclusive => None,
    }
}

/// Case numbers for a pair of limit classes.
pub fn case_table(f0: LimitClass, finf: LimitClass) -> Option<Vec<u8>> {
    use Lim::*;
    let (a, b) = (lim(f0)?, lim(finf)?);
    let mut cases = match (a, b) {
        (Zero, Inf) | (Inf, Zero) => vec![1],
        (Zero, Fin) | (Fin, Zero) => vec![2],
        (Inf, Fin) | (Fin, Inf) => vec![3],
        (Zero, Zero) => vec![4],
        (Inf, Inf) => vec![5],
        (Fin, Fin) => vec![],
    };
    if a != Inf && b != Inf {
        cases.push(6);
    }
    if a != Zero && b != Zero {
        cases.push(7);
    }
    Some(cases)
}

fn prediction(case: u8, f0: Lim, finf: Lim) -> String {
    use Lim::*;
    match (case, f0, finf) {
        (1, Zero, _) => "a positive solution for every lambda > 0; |u| -> inf as lambda -> 0 and |u| -> 0 as lambda -> inf".into(),
        (1, _, _) => "a positive solution for every lambda > 0; |u| -> 0 as lambda -> 0 and |u| -> inf as lambda -> inf".into(),
        (2, Zero, _) => "a positive solution for lambda > lambda_*, with |u| < m_* and |u| -> 0 as lambda -> inf".into(),
        (2, _, _) => "a positive solution for lambda > lambda_*, with |u| > m_* and |u| -> inf as lambda -> inf".into(),
        (3, Inf, _) => "a positive solution for 0 < lambda < lambda^*, with |u| < m^* and |u| -> 0 as lambda -> 0".into(),
        (3, _, _) => "a positive solution for 0 < lambda < lambda^*, with |u| > m^* and |u| -> inf as lambda -> 0".into(),
        (4, _, _) => "two positive solutions for lambda > lambda_*, one at lambda_*; norms split at m_*".into(),
        (5, _, _) => "two positive solutions for 0 < lambda < lambda^*, one at lambda^*; norms split at m^*".into(),
        (6, _, _) => "no positive solution for lambda < lambda_bar".into(),
        (7, _, _) => "no positive solution for lambda > lambda_underline".into(),
        _ => String::new(),
    }
}

/// Extremum of an R-curve over a scan, extending the scan by a decade at a
/// time (at most three times) while the extremum sits on an edge.
fn scan_extremum(
    inst: &ProblemInstance,
    lo: f64,
    hi: f64,
    per_decade: usize,
    which: usize,
    minimize: bool,
) -> Result<Threshold, TheoremError> {
    let (mut lo, mut hi) = (lo, hi);
    let mut extensions = 0;
    loop {
        let grid = log_grid(lo, hi, per_decade);
        let rows = inst.r_table(&grid)?;
        let vals: Vec<f64> = rows.iter().map(|r| r[which]).collect();
        let mut best = 0;
        for i in 1..vals.len() {
            let better = if minimize { vals[i] < vals[best] } else { vals[i] > vals[best] };
            if better {
                best = i;
            }
        }
        let at_top = best == vals.len() - 1;
        let at_bottom = best == 0;
        if !(at_top || at_bottom) {
            return Ok(Threshold {
                value: vals[best],
                at_m: grid[best],
                method: "scan extremum",
            });
        }
        if extensions == 3 {
            return Ok(Threshold {
                value: vals[best],
                at_m: if at_top { f64::INFINITY } else { 0.0 },
                method: "scan extremum at the scan edge after 3 extensions",
            });
        }
        extensions += 1;
        if at_top {
            hi *= 10.0;
        } else {
            lo /= 10.0;
        }
    }
}

/// Sampled sup (or inf) of f/φ on a 2001-point log grid over [1e-8, 1e8]
/// with golden-section refinement at the extremal sample.
pub fn ratio_extremum(inst: &ProblemInstance, maximize: bool) -> Result<(f64, f64), TheoremError> {
    let n = 2001;
    let ratio = |s: f64| -> f64 {
        match (inst.f(s), inst.homeo.phi(s)) {
            (Ok(f), Ok(p)) if p > 0.0 => f / p,
            _ => f64::NAN,
        }
    };
    let sign = if maximize { -1.0 } else { 1.0 };
    let zs: Vec<f64> = (0..n).map(|i| -8.0 + 16.0 * i as f64 / (n - 1) as f64).collect();
    let mut best = 0;
    let mut best_v = f64::INFINITY;
    for (i, &z) in zs.iter().enumerate() {
        let v = sign * ratio(10f64.powf(z));
        if v.is_nan() {
            return Err(TheoremError::Precondition(format!("f/phi undefined at s = {}", 10f64.powf(z))));
        }
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    let lo = zs[best.saturating_sub(1)];
    let hi = zs[(best + 1).min(n - 1)];
    let (z, v) = golden_min(|z| sign * ratio(10f64.powf(z)), lo, hi, 60);
    if v < best_v {
        Ok((sign * v, 10f64.powf(z)))
    } else {
        Ok((sign * best_v, 10f64.powf(zs[best])))
    }
}

/// (λ̄, λ̲) when their hypotheses hold.
pub fn nonexistence_bounds(
    inst: &ProblemInstance,
    f0: LimitClass,
    finf: LimitClass,
) -> Result<(Option<NonexistenceBound>, Option<NonexistenceBound>), TheoremError> {
    let (Some(a), Some(b)) = (lim(f0), lim(finf)) else {
        return Ok((None, None));
    };
    let c = &inst.constants;
    let e = &inst.extrema;
    let upper = if a != Lim::Inf && b != Lim::Inf {
        let (c1, at) = ratio_extremum(inst, true)?;
        let v = (e.d0 / c1) * inst.homeo.psi1(e.c0 / c.h_upper.value)?;
        Some(NonexistenceBound {
            value: v,
            ratio_bound: c1,
            at_s: at,
            method: "sampled sup of f/phi (2001-point log grid + golden section)",
        })
    } else {
        None
    };
    let lower = if a != Lim::Zero && b != Lim::Zero {
        let (eps, at) = ratio_extremum(inst, false)?;
        let v = (e.d_max / (c.h_lower.value * eps)) * inst.homeo.psi2(e.c_max / c.gamma0.value)?;
        Some(NonexistenceBound {
            value: v,
            ratio_bound: eps,
            at_s: at,
            method: "sampled inf of f/phi (2001-point log grid + golden section)",
        })
    } else {
        None
    };
    Ok((upper, lower))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ScanRange {
    pub lo: f64,
    pub hi: f64,
    pub per_decade: usize,
}

impl Default for ScanRange {
    fn default() -> Self {
        ScanRange {
            lo: 1e-3,
            hi: 1e3,
            per_decade: 64,
        }
    }
}

pub fn classify_case(inst: &ProblemInstance, range: ScanRange) -> Result<CaseReport, TheoremError> {
    let (f0, finf) = inst.estimate_f_limits()?;
    let Some(cases) = case_table(f0, finf) else {
        return Ok(CaseReport {
            f0,
            finf,
            cases: Vec::new(),
            inconclusive: true,
            predictions: vec!["f-limits inconclusive; no thresholds computed".into()],
            lambda_lower_star: None,
            lambda_upper_star: None,
            lambda_bar: None,
            lambda_underline: None,
        });
    };
    let (a, b) = (lim(f0).unwrap(), lim(finf).unwrap());
    let lower_star = if cases.iter().any(|&c| c == 2 || c == 4) {
        Some(scan_extremum(inst, range.lo, range.hi, range.per_decade, 1, true)?)
    } else {
        None
    };
    let upper_star = if cases.iter().any(|&c| c == 3 || c == 5) {
        Some(scan_extremum(inst, range.lo, range.hi, range.per_decade, 2, false)?)
    } else {
        None
    };
    let (bar, underline) = nonexistence_bounds(inst, f0, finf)?;
    Ok(CaseReport {
        f0,
        finf,
        predictions: cases.iter().map(|&c| prediction(c, a, b)).collect(),
        cases,
        inconclusive: false,
        lambda_lower_star: lower_star,
        lambda_upper_star: upper_star,
        lambda_bar: bar,
        lambda_underline: underline,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum ShellOutcome {
    Expanding,
    Contracting,
    Inconclusive,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ShellCheck {
    pub lambda: f64,
    pub m: f64,
    pub outcome: ShellOutcome,
    /// ‖H(λ,v)‖∞ per profile
    pub image_norms: Vec<f64>,
    pub profile_names: Vec<&'static str>,
}

/// Cone profiles of sup-norm `m` on the mesh; those violating the cone
/// condition for this instance are dropped.
pub fn default_profiles(inst: &ProblemInstance, mesh: &[f64], m: f64) -> Vec<(&'static str, GridFunction)> {
    let shapes: [(&'static str, fn(f64) -> f64); 6] = [
        ("tent", |t| 2.0 * t.min(1.0 - t)),
        ("parabola", |t| 4.0 * t * (1.0 - t)),
        ("sine", |t| (std::f64::consts::PI * t).sin()),
        ("plateau", |t| (4.0 * t.min(1.0 - t)).min(1.0)),
        ("quartic", |t| 1.0 - (2.0 * t - 1.0).powi(4)),
        ("skewed", |t| 6.75 * t * t * (1.0 - t)),
    ];
    let mut out = Vec::new();
    for (name, f) in shapes {
        let Ok(g) = GridFunction::from_fn(mesh.to_vec(), f) else { continue };
        let norm = g.sup_norm();
        let g = g.scaled(m / norm);
        let tol = 1e-12 * m;
        if g.min_value() >= -tol && cone_margin(inst, &g, ConeMode::ConeK) >= -tol {
            out.push((name, g));
        }
    }
    out
}

pub fn shell_index_check(
    inst: &ProblemInstance,
    lambda: f64,
    m: f64,
    profiles: &[(&'static str, GridFunction)],
) -> Result<ShellCheck, TheoremError> {
    if !(m > 0.0) {
        return Err(TheoremError::Precondition("m must be positive".into()));
    }
    let mut norms = Vec::with_capacity(profiles.len());
    for (_, v) in profiles {
        norms.push(apply_h(inst, lambda, v)?.peak);
    }
    let outcome = if !norms.is_empty() && norms.iter().all(|&n| n > m) {
        ShellOutcome::Expanding
    } else if !norms.is_empty() && norms.iter().all(|&n| n < m) {
        ShellOutcome::Contracting
    } else {
        ShellOutcome::Inconclusive
    };
    Ok(ShellCheck {
        lambda,
        m,
        outcome,
        image_norms: norms,
        profile_names: profiles.iter().map(|p| p.0).collect(),
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TrendRule {
    /// samples at each end of the branch
    pub samples: usize,
    /// minimal factor of change in λ across those samples
    pub factor: f64,
}

impl Default for TrendRule {
    fn default() -> Self {
        TrendRule { samples: 8, factor: 2.0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrendCheck {
    pub statement: String,
    pub observed_factor: f64,
    pub pass: bool,
}

/// Check the λ ↔ ‖u‖ limits of the case table as monotone trends at the ends of a branch.
pub fn branch_trends(report: &CaseReport, branch: &Branch, rule: TrendRule) -> Vec<TrendCheck> {
    let s = &branch.samples;
    let k = rule.samples.min(s.len());
    if k < 2 || report.inconclusive {
        return Vec::new();
    }
    let (a, b) = (lim(report.f0).unwrap(), lim(report.finf).unwrap());
    // +1: λ grows toward the end (moving outward in M), -1: λ shrinks
    let mut expect: Vec<(bool, i32, String)> = Vec::new();
    use Lim::*;
    for &c in &report.cases {
        match (c, a, b) {
            (1, Zero, _) => {
                expect.push((false, 1, "|u| -> 0 as lambda -> inf".into()));
                expect.push((true, -1, "|u| -> inf as lambda -> 0".into()));
            }
            (1, _, _) => {
                expect.push((false, -1, "|u| -> 0 as lambda -> 0".into()));
                expect.push((true, 1, "|u| -> inf as lambda -> inf".into()));
            }
            (2, Zero, _) => expect.push((false, 1, "|u| -> 0 as lambda -> inf".into())),
            (2, _, _) => expect.push((true, 1, "|u| -> inf as lambda -> inf".into())),
            (3, Inf, _) => expect.push((false, -1, "|u| -> 0 as lambda -> 0".into())),
            (3, _, _) => expect.push((true, -1, "|u| -> inf as lambda -> 0".into())),
            (4, _, _) => {
                expect.push((false, 1, "small solution: |u| -> 0 as lambda -> inf".into()));
                expect.push((true, 1, "large solution: |u| -> inf as lambda -> inf".into()));
            }
            (5, _, _) => {
                expect.push((false, -1, "small solution: |u| -> 0 as lambda -> 0".into()));
                expect.push((true, -1, "large solution: |u| -> inf as lambda -> 0".into()));
            }
            _ => {}
        }
    }
    expect
        .into_iter()
        .map(|(large_end, dir, statement)| {
            let seg: Vec<f64> = if large_end {
                s[s.len() - k..].iter().map(|p| p.lambda).collect()
            } else {
                s[..k].iter().rev().map(|p| p.lambda).collect()
            };
            let monotone = seg.windows(2).all(|w| if dir > 0 { w[1] > w[0] } else { w[1] < w[0] });
            let factor = if dir > 0 { seg[k - 1] / seg[0] } else { seg[0] / seg[k - 1] };
            TrendCheck {
                statement,
                observed_factor: factor,
                pass: monotone && factor >= rule.factor,
            }
        })
        .collect()
}
