//! Problem instances and the constants derived from them.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::homeo::{HomeoBundle, HomeoError, Which};
use crate::quadrature::{
    classify_l1, classify_membership, nested_with, Antiderivative, MembershipReport, QuadError, Side,
    SingularityHint,
};
use crate::roots::{bisect_predicate, golden_min};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum ProblemError {
    #[error(transparent)]
    Homeo(#[from] HomeoError),
    #[error("{name}: {source}")]
    Expr { name: &'static str, source: ExprError },
    #[error("{name} must be positive on [0, 1]; {name}({at}) = {value}")]
    NonPositive { name: &'static str, at: f64, value: f64 },
    #[error("f must satisfy f(0) >= 0 and f(s) > 0 for s > 0; f({at}) = {value}")]
    BadNonlinearity { at: f64, value: f64 },
    #[error("weight h vanishes identically on the sampled grid")]
    WeightZero,
    #[error("weight h is negative at t = {at}: {value}")]
    WeightNegative { at: f64, value: f64 },
    #[error("declared {name} = {declared} is inconsistent with the scanned value {scanned}")]
    SupportMismatch { name: &'static str, declared: f64, scanned: f64 },
    #[error("support profile violates 0 <= alpha < gamma1 < gamma < gamma2 < beta <= 1: {0:?}")]
    ProfileOrder(WeightProfile),
    #[error(transparent)]
    Quad(#[from] QuadError),
    #[error("quadrature for {what} did not converge (estimate {value}, error {error})")]
    Unconverged { what: &'static str, value: f64, error: f64 },
    #[error("f_*({m}) = 0: f vanishes on [rho_h m, m]")]
    EnvelopeZero { m: f64 },
    #[error("annulus requires 0 < R1 < R2 < inf and N >= 2 (got R1 = {r1}, R2 = {r2}, N = {n})")]
    BadAnnulus { r1: f64, r2: f64, n: u32 },
}

/// A number together with how it was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Quantity {
    pub value: f64,
    pub error: f64,
    pub method: &'static str,
}

impl Quantity {
    fn exact(value: f64) -> Self {
        Quantity {
            value,
            error: 0.0,
            method: "exact",
        }
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize)]
pub struct DeclaredSupport {
    pub alpha: Option<f64>,
    pub alpha_bar: Option<f64>,
    pub beta_bar: Option<f64>,
    pub beta: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WeightProfile {
    pub alpha: f64,
    pub alpha_bar: f64,
    pub beta_bar: f64,
    pub beta: f64,
    pub gamma1: f64,
    pub gamma2: f64,
    pub gamma: f64,
}

impl WeightProfile {
    pub fn from_support(alpha: f64, alpha_bar: f64, beta_bar: f64, beta: f64) -> WeightProfile {
        let gamma1 = (3.0 * alpha + alpha_bar) / 4.0;
        let gamma2 = (beta_bar + 3.0 * beta) / 4.0;
        WeightProfile {
            alpha,
            alpha_bar,
            beta_bar,
            beta,
            gamma1,
            gamma2,
            gamma: (gamma1 + gamma2) / 2.0,
        }
    }

    fn ordered(&self) -> bool {
        0.0 <= self.alpha
            && self.alpha < self.gamma1
            && self.gamma1 < self.gamma
            && self.gamma < self.gamma2
            && self.gamma2 < self.beta
            && self.beta <= 1.0
    }
}

pub const WEIGHT_SCAN_POINTS: usize = 4097;

/// Determine the support structure of `h` from a grid scan, or take the
/// declared values after checking them against the scan.
pub fn analyze_weight<H: Fn(f64) -> f64>(
    h: H,
    declared: &DeclaredSupport,
    zero_threshold: f64,
) -> Result<WeightProfile, ProblemError> {
    let n = WEIGHT_SCAN_POINTS - 1;
    let t: Vec<f64> = (0..=n).map(|i| i as f64 / n as f64).collect();
    // interior samples only; h may be singular at 0 and 1
    let v: Vec<f64> = (0..=n)
        .map(|i| if i == 0 || i == n { f64::NAN } else { h(t[i]) })
        .collect();
    let local = |i: usize| {
        let lo = i.saturating_sub(8).max(1);
        let hi = (i + 8).min(n - 1);
        (lo..=hi).map(|j| v[j].abs()).filter(|x| x.is_finite()).fold(0.0, f64::max)
    };
    let mut zero = vec![false; n + 1];
    for i in 1..n {
        let scale = zero_threshold * (1.0 + local(i));
        if v[i].is_nan() {
            return Err(ProblemError::WeightNegative { at: t[i], value: v[i] });
        }
        if v[i] < -scale {
            return Err(ProblemError::WeightNegative { at: t[i], value: v[i] });
        }
        zero[i] = v[i].abs() <= scale;
    }
    let Some(first) = (1..n).find(|&i| !zero[i]) else {
        return Err(ProblemError::WeightZero);
    };
    let last = (1..n).rev().find(|&i| !zero[i]).unwrap();
    let h = &h;
    let is_zero_near = |i: usize| {
        let s = zero_threshold * (1.0 + local(i));
        move |x: f64| h(x).abs() <= s
    };
    let tol = 1e-9;
    let alpha = if first == 1 {
        0.0
    } else {
        let pred = is_zero_near(first);
        bisect_predicate(&pred, t[first - 1], t[first], tol).0
    };
    let alpha_bar = match (first + 1..n).find(|&i| zero[i]) {
        None => 1.0,
        Some(iz) => {
            let pred = is_zero_near(iz);
            bisect_predicate(|x| !pred(x), t[iz - 1], t[iz], tol).1
        }
    };
    let beta = if last == n - 1 {
        1.0
    } else {
        let pred = is_zero_near(last);
        bisect_predicate(|x| !pred(x), t[last], t[last + 1], tol).1
    };
    let beta_bar = match (1..last).rev().find(|&i| zero[i]) {
        None => 0.0,
        Some(iy) => {
            let pred = is_zero_near(iy);
            bisect_predicate(&pred, t[iy], t[iy + 1], tol).0
        }
    };
    let scanned = [alpha, alpha_bar, beta_bar, beta];
    let names = ["alpha", "alpha_bar", "beta_bar", "beta"];
    let decl = [declared.alpha, declared.alpha_bar, declared.beta_bar, declared.beta];
    let mut chosen = scanned;
    for k in 0..4 {
        if let Some(d) = decl[k] {
            // one scan cell of slack
            if (d - scanned[k]).abs() > 1.5 / n as f64 {
                return Err(ProblemError::SupportMismatch {
                    name: names[k],
                    declared: d,
                    scanned: scanned[k],
                });
            }
            chosen[k] = d;
        }
    }
    let p = WeightProfile::from_support(chosen[0], chosen[1], chosen[2], chosen[3]);
    if !p.ordered() {
        return Err(ProblemError::ProfileOrder(p));
    }
    Ok(p)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Extrema {
    pub c0: f64,
    pub c_max: f64,
    pub d0: f64,
    pub d_max: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct DerivedConstants {
    pub rho1: Quantity,
    pub rho_h: Quantity,
    pub gamma0: Quantity,
    pub a1: Quantity,
    pub a2: Quantity,
    /// max of the two ψ₁⁻¹-nested integrals in A₂ (unscaled)
    pub h_upper: Quantity,
    /// min of the plain integrals of h over [γ¹, γ] and [γ, γ²]
    pub h_lower: Quantity,
}

/// Thresholds for classifying f₀ and f_∞ from samples.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LimitRule {
    pub decades: usize,
    pub trend_decades: usize,
    pub trend_factor: f64,
    pub flat_decades: usize,
    pub flat_tolerance: f64,
}

impl Default for LimitRule {
    fn default() -> Self {
        LimitRule {
            decades: 12,
            trend_decades: 4,
            trend_factor: 10.0,
            flat_decades: 3,
            flat_tolerance: 1e-3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
#[serde(tag = "class", content = "value", rename_all = "lowercase")]
pub enum LimitClass {
    Zero,
    Finite(f64),
    Infinite,
    Inconclusive,
}

impl std::fmt::Display for LimitClass {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            LimitClass::Zero => f.write_str("0"),
            LimitClass::Finite(v) => write!(f, "{v:.6e} (extrapolated)"),
            LimitClass::Infinite => f.write_str("inf"),
            LimitClass::Inconclusive => f.write_str("inconclusive"),
        }
    }
}

/// Classify the limit of a sampled ratio sequence `r[0], r[1], ...`
/// taken one decade apart toward the limit point.
pub fn classify_ratio_sequence(r: &[f64], rule: &LimitRule) -> LimitClass {
    let n = r.len();
    if n < rule.trend_decades + 1 || r.iter().any(|x| !x.is_finite() || *x < 0.0) {
        return LimitClass::Inconclusive;
    }
    let last = r[n - 1];
    let back = r[n - 1 - rule.trend_decades];
    let monotone_up = r[n - 1 - rule.trend_decades..].windows(2).all(|w| w[1] >= w[0]);
    let monotone_down = r[n - 1 - rule.trend_decades..].windows(2).all(|w| w[1] <= w[0]);
    if monotone_up && last >= rule.trend_factor * back {
        return LimitClass::Infinite;
    }
    if monotone_down && back >= rule.trend_factor * last {
        return LimitClass::Zero;
    }
    let flat_back = r[n - 1 - rule.flat_decades];
    if last > 0.0 && (last - flat_back).abs() <= rule.flat_tolerance * last {
        let (a, b, c) = (r[n - 3], r[n - 2], r[n - 1]);
        let denom = (c - b) - (b - a);
        let v = if denom.abs() > 1e-300 && ((c - b) / denom).is_finite() {
            c - (c - b) * (c - b) / denom
        } else {
            c
        };
        let v = if (v - c).abs() <= (c - a).abs().max(1e-15 * c) { v } else { c };
        return LimitClass::Finite(v);
    }
    LimitClass::Inconclusive
}

/// Everything needed to build an instance.
#[derive(Debug, Clone)]
pub struct InstanceSpec {
    pub phi: Expression,
    pub psi1: Expression,
    pub psi2: Expression,
    pub c: Expression,
    pub d: Expression,
    pub h: Expression,
    pub f: Expression,
    pub hints: Vec<SingularityHint>,
    pub support: DeclaredSupport,
    pub quad_tol: f64,
    pub zero_threshold: f64,
    pub limit_rule: LimitRule,
}

impl InstanceSpec {
    /// Parse from source strings with the usual variable names.
    pub fn parse(phi: &str, psi1: &str, psi2: &str, c: &str, d: &str, h: &str, f: &str) -> Result<InstanceSpec, ProblemError> {
        let p = |name: &'static str, src: &str, var: &str| {
            Expression::parse_auto(src, var).map_err(|source| ProblemError::Expr { name, source })
        };
        Ok(InstanceSpec {
            phi: p("phi", phi, "x")?,
            psi1: p("psi1", psi1, "y")?,
            psi2: p("psi2", psi2, "y")?,
            c: p("c", c, "t")?,
            d: p("d", d, "t")?,
            h: p("h", h, "t")?,
            f: p("f", f, "s")?,
            hints: SingularityHint::both(),
            support: DeclaredSupport::default(),
            quad_tol: 1e-10,
            zero_threshold: 1e-12,
            limit_rule: LimitRule::default(),
        })
    }
}

#[derive(Debug, Clone)]
pub struct ProblemInstance {
    pub homeo: HomeoBundle,
    pub c_expr: Expression,
    pub d_expr: Expression,
    pub h_expr: Expression,
    pub f_expr: Expression,
    pub hints: Vec<SingularityHint>,
    pub quad_tol: f64,
    pub limit_rule: LimitRule,
    pub extrema: Extrema,
    pub profile: WeightProfile,
    pub constants: DerivedConstants,
    h_integral: Antiderivative,
    c_const: Option<f64>,
    d_const: Option<f64>,
}

fn extremum<F: Fn(f64) -> f64>(g: &F, maximize: bool) -> f64 {
    let n = 1024;
    let sign = if maximize { -1.0 } else { 1.0 };
    let key = |t: f64| sign * g(t);
    let mut best = 0usize;
    let mut best_v = f64::INFINITY;
    for i in 0..=n {
        let v = key(i as f64 / n as f64);
        if v < best_v {
            best_v = v;
            best = i;
        }
    }
    let lo = best.saturating_sub(1) as f64 / n as f64;
    let hi = (best + 1).min(n) as f64 / n as f64;
    let (_, v) = golden_min(key, lo, hi, 60);
    sign * v.min(best_v)
}

impl ProblemInstance {
    pub fn new(spec: InstanceSpec) -> Result<ProblemInstance, ProblemError> {
        let homeo = HomeoBundle::new(spec.phi.clone(), spec.psi1.clone(), spec.psi2.clone())?;
        let coef = |name: &'static str, e: &Expression| -> Result<(), ProblemError> {
            for i in 0..=1024 {
                let t = i as f64 / 1024.0;
                let v = e.eval(t).map_err(|source| ProblemError::Expr { name, source })?;
                if !(v > 0.0) {
                    return Err(ProblemError::NonPositive { name, at: t, value: v });
                }
            }
            Ok(())
        };
        coef("c", &spec.c)?;
        coef("d", &spec.d)?;
        let f0 = spec.f.eval(0.0).map_err(|source| ProblemError::Expr { name: "f", source })?;
        if f0 < 0.0 {
            return Err(ProblemError::BadNonlinearity { at: 0.0, value: f0 });
        }
        for k in -80..=80 {
            let s = 10f64.powf(k as f64 / 10.0);
            let v = spec.f.eval(s).map_err(|source| ProblemError::Expr { name: "f", source })?;
            if !(v > 0.0) {
                return Err(ProblemError::BadNonlinearity { at: s, value: v });
            }
        }
        let h_fn = |t: f64| spec.h.eval(t).unwrap_or(f64::NAN);
        let profile = analyze_weight(h_fn, &spec.support, spec.zero_threshold)?;
        let c_fn = |t: f64| spec.c.eval(t).unwrap_or(f64::NAN);
        let d_fn = |t: f64| spec.d.eval(t).unwrap_or(f64::NAN);
        let extrema = Extrema {
            c0: extremum(&c_fn, false),
            c_max: extremum(&c_fn, true),
            d0: extremum(&d_fn, false),
            d_max: extremum(&d_fn, true),
        };
        let breaks = [
            profile.alpha,
            profile.alpha_bar,
            profile.beta_bar,
            profile.beta,
            profile.gamma1,
            profile.gamma,
            profile.gamma2,
        ];
        let h_integral = Antiderivative::new(|t| if t <= 0.0 || t >= 1.0 { 0.0 } else { h_fn(t) }, &breaks)?;
        let c_const = spec.c.is_constant().then(|| spec.c.eval(0.0).unwrap());
        let d_const = spec.d.is_constant().then(|| spec.d.eval(0.0).unwrap());
        let mut inst = ProblemInstance {
            homeo,
            c_expr: spec.c,
            d_expr: spec.d,
            h_expr: spec.h,
            f_expr: spec.f,
            hints: spec.hints,
            quad_tol: spec.quad_tol,
            limit_rule: spec.limit_rule,
            extrema,
            profile,
            constants: DerivedConstants {
                rho1: Quantity::exact(f64::NAN),
                rho_h: Quantity::exact(f64::NAN),
                gamma0: Quantity::exact(f64::NAN),
                a1: Quantity::exact(f64::NAN),
                a2: Quantity::exact(f64::NAN),
                h_upper: Quantity::exact(f64::NAN),
                h_lower: Quantity::exact(f64::NAN),
            },
            h_integral,
            c_const,
            d_const,
        };
        inst.constants = inst.compute_constants()?;
        Ok(inst)
    }

    pub fn c(&self, t: f64) -> f64 {
        match self.c_const {
            Some(v) => v,
            None => self.c_expr.eval(t).unwrap_or(f64::NAN),
        }
    }

    pub fn d(&self, t: f64) -> f64 {
        match self.d_const {
            Some(v) => v,
            None => self.d_expr.eval(t).unwrap_or(f64::NAN),
        }
    }

    /// The weight, NaN where its expression fails (e.g. at a pole).
    pub fn h(&self, t: f64) -> f64 {
        self.h_expr.eval(t).unwrap_or(f64::NAN)
    }

    pub fn f(&self, s: f64) -> Result<f64, ProblemError> {
        self.f_expr.eval(s).map_err(|source| ProblemError::Expr { name: "f", source })
    }

    pub fn h_integral(&self) -> &Antiderivative {
        &self.h_integral
    }

    pub fn coefficients_constant(&self) -> bool {
        self.c_const.is_some() && self.d_const.is_some()
    }

    pub fn compute_rho1(&self) -> Result<f64, ProblemError> {
        let e = &self.extrema;
        Ok((e.c0 / e.c_max) * self.homeo.psi2_inv(1.0 / e.d_max)? / self.homeo.psi1_inv(1.0 / e.d0)?)
    }

    fn nested(&self, which: Which, side: Side, outer: (f64, f64), what: &'static str) -> Result<Quantity, ProblemError> {
        let gamma = self.profile.gamma;
        let inv = |y: f64| self.homeo.invert(which, y).unwrap_or(f64::NAN);
        let r = nested_with(inv, &self.h_integral, gamma, side, outer, self.quad_tol)?;
        if !r.converged {
            return Err(ProblemError::Unconverged {
                what,
                value: r.value,
                error: r.error_estimate,
            });
        }
        Ok(Quantity {
            value: r.value,
            error: r.error_estimate,
            method: "adaptive quadrature",
        })
    }

    fn compute_constants(&self) -> Result<DerivedConstants, ProblemError> {
        let p = &self.profile;
        let e = &self.extrema;
        let rho1 = self.compute_rho1()?;
        let gamma0 = p.gamma1.min(1.0 - p.gamma2);
        let a1_left = self.nested(Which::Psi2, Side::LeftOfAnchor, (p.gamma1, p.gamma), "A1 (left)")?;
        let a1_right = self.nested(Which::Psi2, Side::RightOfAnchor, (p.gamma, p.gamma2), "A1 (right)")?;
        let a2_left = self.nested(Which::Psi1, Side::LeftOfAnchor, (0.0, p.gamma), "A2 (left)")?;
        let a2_right = self.nested(Which::Psi1, Side::RightOfAnchor, (p.gamma, 1.0), "A2 (right)")?;
        let s1 = self.homeo.psi2_inv(1.0 / e.d_max)? / e.c_max;
        let s2 = self.homeo.psi1_inv(1.0 / e.d0)? / e.c0;
        let a1_min = if a1_left.value <= a1_right.value { a1_left } else { a1_right };
        let a2_max = if a2_left.value >= a2_right.value { a2_left } else { a2_right };
        let h_left = self.h_integral.integral(p.gamma1, p.gamma);
        let h_right = self.h_integral.integral(p.gamma, p.gamma2);
        let grid = "grid extrema with golden-section refinement";
        Ok(DerivedConstants {
            rho1: Quantity {
                value: rho1,
                error: 1e-12 * rho1,
                method: grid,
            },
            rho_h: Quantity {
                value: rho1 * gamma0,
                error: 1e-12 * rho1,
                method: grid,
            },
            gamma0: Quantity::exact(gamma0),
            a1: Quantity {
                value: s1 * a1_min.value,
                error: s1 * a1_min.error,
                method: a1_min.method,
            },
            a2: Quantity {
                value: s2 * a2_max.value,
                error: s2 * a2_max.error,
                method: a2_max.method,
            },
            h_upper: a2_max,
            h_lower: Quantity {
                value: h_left.min(h_right),
                error: 1e-13 * (h_left.abs() + h_right.abs()),
                method: "panel Chebyshev quadrature",
            },
        })
    }

    pub fn rho_h(&self) -> f64 {
        self.constants.rho_h.value
    }

    /// (f_*(m), f^*(m)) for a single m.
    pub fn f_envelopes(&self, m: f64) -> Result<(f64, f64), ProblemError> {
        let lo = self.f_min_on(self.rho_h() * m, m)?;
        let hi = self.f_max_on(0.0, m)?;
        Ok((lo, hi))
    }

    fn f_nan(&self, s: f64) -> f64 {
        self.f_expr.eval(s).unwrap_or(f64::NAN)
    }

    fn f_min_on(&self, a: f64, b: f64) -> Result<f64, ProblemError> {
        let n = 256;
        let mut best = (a, self.f(a)?);
        for i in 1..=n {
            let s = a + (b - a) * i as f64 / n as f64;
            let v = self.f(s)?;
            if v < best.1 {
                best = (s, v);
            }
        }
        let w = (b - a) / n as f64;
        let (_, v) = golden_min(|s| self.f_nan(s), (best.0 - w).max(a), (best.0 + w).min(b), 50);
        Ok(if v.is_finite() { v.min(best.1) } else { best.1 })
    }

    fn f_max_on(&self, a: f64, b: f64) -> Result<f64, ProblemError> {
        // uniform samples plus log-spaced ones so features near 0 are seen
        let n = 128;
        let mut pts: Vec<f64> = (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect();
        if a == 0.0 {
            pts.extend((0..128).map(|i| b * 10f64.powf(-12.0 + 12.0 * i as f64 / 128.0)));
        }
        let mut best = (b, self.f(b)?);
        for &s in &pts {
            let v = self.f(s)?;
            if v > best.1 {
                best = (s, v);
            }
        }
        let w = (b - a) / n as f64;
        let (_, v) = golden_min(|s| -self.f_nan(s), (best.0 - w).max(a), (best.0 + w).min(b), 50);
        Ok(if v.is_finite() { (-v).max(best.1) } else { best.1 })
    }

    /// Envelopes on an increasing grid; f^* is made nondecreasing by a
    /// running maximum.
    pub fn envelope_table(&self, ms: &[f64]) -> Result<Vec<(f64, f64)>, ProblemError> {
        let mut out = Vec::with_capacity(ms.len());
        let mut running = 0.0f64;
        let mut prev: Option<f64> = None;
        for &m in ms {
            let lo = self.f_min_on(self.rho_h() * m, m)?;
            let hi = match prev {
                Some(p) if p < m => self.f_max_on(p, m)?.max(running),
                _ => self.f_max_on(0.0, m)?,
            };
            running = hi;
            prev = Some(m);
            out.push((lo, hi.max(lo)));
        }
        Ok(out)
    }

    /// (R₁(m), R₂(m)).
    pub fn r_curves(&self, m: f64) -> Result<(f64, f64), ProblemError> {
        let (lo, hi) = self.f_envelopes(m)?;
        self.r_from_envelopes(m, lo, hi)
    }

    pub fn r_from_envelopes(&self, m: f64, f_lo: f64, f_hi: f64) -> Result<(f64, f64), ProblemError> {
        if !(f_lo > 0.0) {
            return Err(ProblemError::EnvelopeZero { m });
        }
        let c = &self.constants;
        let r1 = self.homeo.phi(m / c.a1.value)? / f_lo;
        let r2 = self.homeo.phi(m / c.a2.value)? / f_hi;
        Ok((r1, r2))
    }

    /// R-curves on an increasing m-grid (columns m, R₁, R₂, f_*, f^*).
    pub fn r_table(&self, ms: &[f64]) -> Result<Vec<[f64; 5]>, ProblemError> {
        let env = self.envelope_table(ms)?;
        ms.iter()
            .zip(env)
            .map(|(&m, (lo, hi))| {
                let (r1, r2) = self.r_from_envelopes(m, lo, hi)?;
                Ok([m, r1, r2, lo, hi])
            })
            .collect()
    }

    /// Ratios f(s)/φ(s) at s = 10^{-k} (toward 0) and 10^{k} (toward ∞).
    pub fn limit_samples(&self) -> Result<(Vec<f64>, Vec<f64>), ProblemError> {
        let k = self.limit_rule.decades as i32;
        let ratio = |s: f64| -> Result<f64, ProblemError> { Ok(self.f(s)? / self.homeo.phi(s)?) };
        let zero = (1..=k).map(|i| ratio(10f64.powi(-i))).collect::<Result<Vec<_>, _>>()?;
        let inf = (1..=k).map(|i| ratio(10f64.powi(i))).collect::<Result<Vec<_>, _>>()?;
        Ok((zero, inf))
    }

    pub fn estimate_f_limits(&self) -> Result<(LimitClass, LimitClass), ProblemError> {
        let (zero, inf) = self.limit_samples()?;
        Ok((
            classify_ratio_sequence(&zero, &self.limit_rule),
            classify_ratio_sequence(&inf, &self.limit_rule),
        ))
    }

    /// Membership of h in ℋ_ξ for ξ ∈ {φ, ψ₁, ψ₂}.
    pub fn membership(&self, which: Which, tol: f64) -> Result<MembershipReport, ProblemError> {
        let inv = |y: f64| self.homeo.invert(which, y).unwrap_or(f64::NAN);
        Ok(classify_membership(&self.h_integral, inv, tol)?)
    }

    pub fn l1_membership(&self, tol: f64) -> Result<MembershipReport, ProblemError> {
        Ok(classify_l1(|t| self.h(t), tol)?)
    }
}

/// Expressions of the reduced one-dimensional problem.
#[derive(Debug, Clone)]
pub struct ReducedProblem {
    pub phi: Expression,
    pub c: Expression,
    pub d: Expression,
    pub h: Expression,
}

/// Radial reduction of `div(w(|x|)A(|∇v|)∇v) + λk(|x|)f(v) = 0` on the
/// annulus `R1 < |x| < R2` in ℝ^N.
pub fn reduce_annular(
    w: &Expression,
    a: &Expression,
    k: &Expression,
    r1: f64,
    r2: f64,
    n: u32,
) -> Result<ReducedProblem, ProblemError> {
    if !(r1 > 0.0 && r2 > r1 && r2.is_finite() && n >= 2) {
        return Err(ProblemError::BadAnnulus { r1, r2, n });
    }
    let width = r2 - r1;
    let radius = Expression::constant(width)
        .mul(&Expression::identity("t"))
        .add(&Expression::constant(r1));
    let radial_power = radius.powf((n - 1) as f64);
    let s = Expression::identity("s");
    let phi = a.compose(&s.abs()).mul(&s);
    let d = w.compose(&radius).mul(&radial_power);
    let c = Expression::constant(1.0 / width).compose(&Expression::identity("t"));
    let h = Expression::constant(width).mul(&radial_power).mul(&k.compose(&radius));
    Ok(ReducedProblem { phi, c, d, h })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn instance(phi: &str, c: &str, d: &str, h: &str, f: &str) -> ProblemInstance {
        ProblemInstance::new(InstanceSpec::parse(phi, "y", "y", c, d, h, f).unwrap()).unwrap()
    }

    fn example_h() -> &'static str {
        "piece(0<=t<0.0625 : 0; 0.0625<=t<1 : (t-0.0625)*(1-t)^(-1))"
    }

    #[test]
    fn example_weight_profile_is_exact() {
        let e = Expression::parse(example_h(), "t").unwrap();
        let p = analyze_weight(|t| e.eval(t).unwrap_or(f64::NAN), &DeclaredSupport::default(), 1e-12).unwrap();
        assert_eq!(p.alpha, 1.0 / 16.0);
        assert_eq!(p.alpha_bar, 1.0);
        assert_eq!(p.beta_bar, 1.0 / 16.0);
        assert_eq!(p.beta, 1.0);
        assert_eq!(p.gamma1, 19.0 / 64.0);
        assert_eq!(p.gamma2, 49.0 / 64.0);
        assert_eq!(p.gamma, 17.0 / 32.0);
    }

    #[test]
    fn full_support_profile() {
        let p = analyze_weight(|_| 1.0, &DeclaredSupport::default(), 1e-12).unwrap();
        assert_eq!((p.alpha, p.alpha_bar, p.beta_bar, p.beta), (0.0, 1.0, 0.0, 1.0));
        assert_eq!((p.gamma1, p.gamma2, p.gamma), (0.25, 0.75, 0.5));
        assert!(matches!(
            analyze_weight(|_| 0.0, &DeclaredSupport::default(), 1e-12),
            Err(ProblemError::WeightZero)
        ));
    }

    #[test]
    fn middle_gap_profile_and_declared_mismatch() {
        let h = |t: f64| if (0.4..=0.6).contains(&t) { 0.0 } else { 1.0 };
        let p = analyze_weight(h, &DeclaredSupport::default(), 1e-12).unwrap();
        assert!((p.alpha_bar - 0.4).abs() < 1e-9 && (p.beta_bar - 0.6).abs() < 1e-9);
        let bad = DeclaredSupport {
            alpha_bar: Some(0.3),
            ..Default::default()
        };
        assert!(matches!(analyze_weight(h, &bad, 1e-12), Err(ProblemError::SupportMismatch { .. })));
        let good = DeclaredSupport {
            alpha_bar: Some(0.4),
            beta_bar: Some(0.6),
            ..Default::default()
        };
        let p = analyze_weight(h, &good, 1e-12).unwrap();
        assert_eq!(p.gamma1, 0.1);
    }

    #[test]
    fn rho1_examples() {
        let i = instance("x", "1", "1", "1", "s^2");
        assert_eq!(i.constants.rho1.value, 1.0);
        let i = instance("x", "1", "1+t", "1", "s^2");
        assert!((i.constants.rho1.value - 0.5).abs() < 1e-12);
        let spec = InstanceSpec::parse("x+x^2", "min(y,y^2)", "max(y,y^2)", "1", "1", "1", "s").unwrap();
        let i = ProblemInstance::new(spec).unwrap();
        assert!((i.constants.rho1.value - 1.0).abs() < 1e-12);
    }

    #[test]
    fn identity_constants_and_curves() {
        let i = instance("x", "1", "1", "1", "s^2");
        let c = &i.constants;
        assert!((c.a1.value - 1.0 / 32.0).abs() < 1e-13);
        assert!((c.a2.value - 1.0 / 8.0).abs() < 1e-13);
        assert!((c.h_upper.value - 1.0 / 8.0).abs() < 1e-13);
        assert!((c.h_lower.value - 0.25).abs() < 1e-13);
        assert_eq!(c.gamma0.value, 0.25);
        assert_eq!(c.rho_h.value, 0.25);
        let (lo, hi) = i.f_envelopes(1.0).unwrap();
        assert!((lo - 1.0 / 16.0).abs() < 1e-14 && (hi - 1.0).abs() < 1e-14);
        for &m in &[0.01, 1.0, 37.0, 1e3] {
            let (r1, r2) = i.r_curves(m).unwrap();
            assert!((r1 - 512.0 / m).abs() < 1e-9 * r1);
            assert!((r2 - 8.0 / m).abs() < 1e-9 * r2);
        }
    }

    #[test]
    fn constant_nonlinearity_envelopes() {
        let i = instance("x", "1", "1", "1", "3");
        for &m in &[1e-3, 1.0, 1e5] {
            assert_eq!(i.f_envelopes(m).unwrap(), (3.0, 3.0));
        }
    }

    #[test]
    fn f_limit_classes() {
        let i = instance("x", "1", "1", "1", "s^2");
        assert_eq!(i.estimate_f_limits().unwrap(), (LimitClass::Zero, LimitClass::Infinite));
        let i = instance("x", "1", "1", "1", "s");
        assert_eq!(i.estimate_f_limits().unwrap(), (LimitClass::Finite(1.0), LimitClass::Finite(1.0)));
        let i = instance("x", "1", "1", "1", "s^1.1");
        assert_eq!(i.estimate_f_limits().unwrap().1, LimitClass::Inconclusive);
        let i = instance("x", "1", "1", "1", "s*(2 + s)/(1 + s)");
        match i.estimate_f_limits().unwrap() {
            (LimitClass::Finite(a), LimitClass::Finite(b)) => {
                assert!((a - 2.0).abs() < 1e-9 && (b - 1.0).abs() < 1e-9);
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn rejects_bad_instances() {
        let bad_c = InstanceSpec::parse("x", "y", "y", "t - 0.5", "1", "1", "s");
        assert!(matches!(
            ProblemInstance::new(bad_c.unwrap()),
            Err(ProblemError::NonPositive { name: "c", .. })
        ));
        let bad_f = InstanceSpec::parse("x", "y", "y", "1", "1", "1", "s - 1");
        assert!(matches!(
            ProblemInstance::new(bad_f.unwrap()),
            Err(ProblemError::BadNonlinearity { .. })
        ));
    }

    #[test]
    fn annular_reduction() {
        let one = Expression::constant(1.0);
        let k = Expression::parse("1 + r", "r").unwrap();
        let red = reduce_annular(&one, &one, &k, 1.0, 2.0, 2).unwrap();
        for &t in &[0.0, 0.3, 1.0] {
            assert_eq!(red.c.eval(t).unwrap(), 1.0);
            assert!((red.d.eval(t).unwrap() - (1.0 + t)).abs() < 1e-15);
            assert!((red.h.eval(t).unwrap() - (1.0 + t) * (2.0 + t)).abs() < 1e-14);
        }
        assert_eq!(red.phi.eval(-2.5).unwrap(), -2.5);
        let red = reduce_annular(&one, &one, &one, 1.0, 3.0, 3).unwrap();
        assert!((red.d.eval(0.5).unwrap() - 4.0).abs() < 1e-14);
        assert!(matches!(
            reduce_annular(&one, &one, &one, 1.0, 1.0, 2),
            Err(ProblemError::BadAnnulus { .. })
        ));
        // printed expressions parse back
        let again = Expression::parse(&red.h.to_string(), "t").unwrap();
        assert_eq!(again.eval(0.25).unwrap(), red.h.eval(0.25).unwrap());
    }

    #[test]
    fn example_membership() {
        let spec = InstanceSpec::parse(
            "x+x^2",
            "min(y,y^2)",
            "max(y,y^2)",
            "1",
            "1",
            example_h(),
            "s^2",
        )
        .unwrap();
        let i = ProblemInstance::new(spec).unwrap();
        assert_eq!(i.membership(Which::Psi1, 1e-8).unwrap().verdict, crate::quadrature::Membership::Member);
        assert_eq!(i.l1_membership(1e-8).unwrap().verdict, crate::quadrature::Membership::Nonmember);
        assert!(i.constants.a1.value < i.constants.a2.value);
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #![proptest_config(ProptestConfig::with_cases(16))]

            #[test]
            fn r_curve_inequalities(k in 0usize..3, e in -3.0f64..3.0) {
                let f = ["s^2", "s", "sqrt(s) + s^3"][k];
                let spec = InstanceSpec::parse("x+x^2", "min(y,y^2)", "max(y,y^2)", "1 + t/2", "2 - t", "1 + t", f).unwrap();
                let i = ProblemInstance::new(spec).unwrap();
                prop_assert!(i.constants.a1.value < i.constants.a2.value);
                let m = 10f64.powf(e);
                let (r1, r2) = i.r_curves(m).unwrap();
                prop_assert!(r2 < r1);
                let (lo, hi) = i.f_envelopes(m).unwrap();
                prop_assert!(lo <= hi);
            }
        }
    }
}
