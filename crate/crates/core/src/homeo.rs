//! The odd homeomorphism φ, its control pair (ψ₁, ψ₂), numerical inverses
//! and lattice checks of the control inequalities.

use serde::Serialize;
use thiserror::Error;

use crate::expr::{ExprError, Expression};
use crate::roots::{brent_with_values, RootError};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Which {
    Phi,
    Psi1,
    Psi2,
}

impl std::fmt::Display for Which {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            Which::Phi => "phi",
            Which::Psi1 => "psi1",
            Which::Psi2 => "psi2",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HomeoError {
    #[error("{which}: {source}")]
    Eval { which: Which, source: ExprError },
    #[error("{which} is not strictly increasing near x = {at}")]
    NotMonotone { which: Which, at: f64 },
    #[error("{which}(0) = {value}, expected 0")]
    NotZeroAtOrigin { which: Which, value: f64 },
    #[error("{which}: no bracket for inverse at y = {y} (function not onto?)")]
    BracketNotFound { which: Which, y: f64 },
    #[error("{which}: negative argument {y} for a map of the half-line")]
    NegativeArgument { which: Which, y: f64 },
}

const TABLE_LO: f64 = -46.0;
const TABLE_HI: f64 = 46.0;
const TABLE_STEP: f64 = 0.25;

/// An increasing map of [0, ∞) with a log-log table used to seed inversion.
#[derive(Debug, Clone)]
struct Increasing {
    which: Which,
    expr: Expression,
    identity: bool,
    /// (ln x, ln f(x)) on a uniform ln x grid, where f is finite and positive.
    table: Vec<(f64, f64)>,
}

impl Increasing {
    fn new(which: Which, expr: Expression) -> Result<Increasing, HomeoError> {
        let identity = expr.is_identity();
        let f0 = expr.eval(0.0).map_err(|source| HomeoError::Eval { which, source })?;
        if f0 != 0.0 {
            return Err(HomeoError::NotZeroAtOrigin { which, value: f0 });
        }
        let mut inc = Increasing {
            which,
            expr,
            identity,
            table: Vec::new(),
        };
        let n = ((TABLE_HI - TABLE_LO) / TABLE_STEP) as usize;
        for i in 0..=n {
            let z = TABLE_LO + i as f64 * TABLE_STEP;
            if let Ok(v) = inc.eval(z.exp()) {
                if v > 0.0 && v.is_finite() {
                    inc.table.push((z, v.ln()));
                }
            }
        }
        Ok(inc)
    }

    fn eval(&self, x: f64) -> Result<f64, HomeoError> {
        if self.identity {
            return Ok(x);
        }
        self.expr
            .eval(x)
            .map_err(|source| HomeoError::Eval { which: self.which, source })
    }

    /// Strict increase on a log grid of `n` points over [1e-8, 1e8], plus
    /// positivity just right of the origin.
    fn check_monotone(&self, n: usize) -> Result<(), HomeoError> {
        let mut prev = 0.0;
        let mut prev_x = 0.0;
        for i in 0..n {
            let x = 10f64.powf(-8.0 + 16.0 * i as f64 / (n - 1) as f64);
            let v = self.eval(x)?;
            if !(v > prev) {
                return Err(HomeoError::NotMonotone {
                    which: self.which,
                    at: if i == 0 { x } else { prev_x },
                });
            }
            prev = v;
            prev_x = x;
        }
        Ok(())
    }

    fn seed(&self, w: f64) -> f64 {
        let t = &self.table;
        if t.len() < 2 {
            return w;
        }
        let i = t.partition_point(|p| p.1 < w);
        let (p, q) = if i == 0 {
            (t[0], t[1])
        } else if i >= t.len() {
            (t[t.len() - 2], t[t.len() - 1])
        } else {
            (t[i - 1], t[i])
        };
        if q.1 == p.1 {
            return p.0;
        }
        p.0 + (w - p.1) * (q.0 - p.0) / (q.1 - p.1)
    }

    /// x ≥ 0 with f(x) = y, y ≥ 0, to relative tolerance `xtol`.
    fn invert(&self, y: f64, xtol: f64, growth: f64) -> Result<f64, HomeoError> {
        if y == 0.0 {
            return Ok(0.0);
        }
        if self.identity {
            return Ok(y);
        }
        let which = self.which;
        let w = y.ln();
        let g = |z: f64| -> Result<f64, String> {
            let v = self.eval(z.exp()).map_err(|e| e.to_string())?;
            if v <= 0.0 {
                return Ok(f64::NEG_INFINITY);
            }
            if !v.is_finite() {
                return Ok(f64::INFINITY);
            }
            Ok(v.ln() - w)
        };
        let z0 = self.seed(w);
        let mut step = 0.02;
        let (mut lo, mut hi) = (z0 - step, z0 + step);
        let map = |_: String| HomeoError::BracketNotFound { which, y };
        let mut glo = g(lo).map_err(map)?;
        let mut ghi = g(hi).map_err(map)?;
        let mut tries = 0;
        while !(glo <= 0.0 && ghi >= 0.0) {
            tries += 1;
            if tries > 80 || step > 1e4 {
                return Err(HomeoError::BracketNotFound { which, y });
            }
            step *= growth;
            if glo > 0.0 {
                hi = lo;
                ghi = glo;
                lo -= step;
                glo = g(lo).map_err(map)?;
            } else {
                lo = hi;
                glo = ghi;
                hi += step;
                ghi = g(hi).map_err(map)?;
            }
        }
        if !glo.is_finite() || !ghi.is_finite() {
            // shrink an infinite end toward the finite one
            for _ in 0..200 {
                if glo.is_finite() && ghi.is_finite() {
                    break;
                }
                let mid = 0.5 * (lo + hi);
                let gm = g(mid).map_err(map)?;
                if gm <= 0.0 {
                    lo = mid;
                    glo = gm;
                } else {
                    hi = mid;
                    ghi = gm;
                }
            }
        }
        let z = brent_with_values(g, lo, hi, glo, ghi, xtol, 0.0).map_err(|e| match e {
            RootError::Eval { .. } | RootError::NoSignChange { .. } | RootError::Budget => {
                HomeoError::BracketNotFound { which, y }
            }
        })?;
        Ok(z.exp())
    }
}

/// φ with its control pair. φ is defined on [0, ∞) and extended oddly.
#[derive(Debug, Clone)]
pub struct HomeoBundle {
    phi: Increasing,
    psi1: Increasing,
    psi2: Increasing,
    pub inverse_tolerance: f64,
    pub bracket_growth: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct CheckReport {
    pub passed: bool,
    /// Most negative relative slack over the lattice (≥ -tolerance to pass).
    pub worst_margin: f64,
    pub worst_point: (f64, f64),
    /// Which side attained the worst margin: "lower" or "upper".
    pub worst_side: &'static str,
    pub points: usize,
    pub tolerance: f64,
}

impl HomeoBundle {
    pub fn new(phi: Expression, psi1: Expression, psi2: Expression) -> Result<HomeoBundle, HomeoError> {
        Self::with_options(phi, psi1, psi2, 1e-14, 2.0)
    }

    pub fn with_options(
        phi: Expression,
        psi1: Expression,
        psi2: Expression,
        inverse_tolerance: f64,
        bracket_growth: f64,
    ) -> Result<HomeoBundle, HomeoError> {
        let b = HomeoBundle {
            phi: Increasing::new(Which::Phi, phi)?,
            psi1: Increasing::new(Which::Psi1, psi1)?,
            psi2: Increasing::new(Which::Psi2, psi2)?,
            inverse_tolerance,
            bracket_growth: bracket_growth.max(1.0 + 1e-3),
        };
        for f in [&b.phi, &b.psi1, &b.psi2] {
            f.check_monotone(1024)?;
        }
        Ok(b)
    }

    /// Parse the three maps from source text (variables detected).
    pub fn parse(phi: &str, psi1: &str, psi2: &str) -> Result<HomeoBundle, HomeoError> {
        let p = |which, s: &str| Expression::parse_auto(s, "x").map_err(|source| HomeoError::Eval { which, source });
        Self::new(p(Which::Phi, phi)?, p(Which::Psi1, psi1)?, p(Which::Psi2, psi2)?)
    }

    pub fn phi_expr(&self) -> &Expression {
        &self.phi.expr
    }

    pub fn psi_exprs(&self) -> (&Expression, &Expression) {
        (&self.psi1.expr, &self.psi2.expr)
    }

    fn get(&self, which: Which) -> &Increasing {
        match which {
            Which::Phi => &self.phi,
            Which::Psi1 => &self.psi1,
            Which::Psi2 => &self.psi2,
        }
    }

    pub fn phi(&self, x: f64) -> Result<f64, HomeoError> {
        if x < 0.0 {
            Ok(-self.phi.eval(-x)?)
        } else {
            self.phi.eval(x)
        }
    }

    pub fn psi1(&self, y: f64) -> Result<f64, HomeoError> {
        self.eval(Which::Psi1, y)
    }

    pub fn psi2(&self, y: f64) -> Result<f64, HomeoError> {
        self.eval(Which::Psi2, y)
    }

    pub fn eval(&self, which: Which, x: f64) -> Result<f64, HomeoError> {
        match which {
            Which::Phi => self.phi(x),
            _ if x < 0.0 => Err(HomeoError::NegativeArgument { which, y: x }),
            _ => self.get(which).eval(x),
        }
    }

    /// Inverse of φ (odd) or of ψᵢ (y ≥ 0).
    pub fn invert(&self, which: Which, y: f64) -> Result<f64, HomeoError> {
        let f = self.get(which);
        if y < 0.0 {
            return match which {
                Which::Phi => Ok(-f.invert(-y, self.inverse_tolerance, self.bracket_growth)?),
                _ => Err(HomeoError::NegativeArgument { which, y }),
            };
        }
        f.invert(y, self.inverse_tolerance, self.bracket_growth)
    }

    pub fn phi_inv(&self, y: f64) -> Result<f64, HomeoError> {
        self.invert(Which::Phi, y)
    }

    pub fn psi1_inv(&self, y: f64) -> Result<f64, HomeoError> {
        self.invert(Which::Psi1, y)
    }

    pub fn psi2_inv(&self, y: f64) -> Result<f64, HomeoError> {
        self.invert(Which::Psi2, y)
    }

    /// `φ(x)ψ₁(y) ≤ φ(xy) ≤ φ(x)ψ₂(y)` on the lattice.
    pub fn check_condition_a(&self, lattice: &[(f64, f64)], tolerance: f64) -> Result<CheckReport, HomeoError> {
        let mut report = empty_report(lattice.len(), tolerance);
        for &(x, y) in lattice {
            let pxy = self.phi(x * y)?;
            let px = self.phi(x)?;
            let lower = px * self.psi1(y)?;
            let upper = px * self.psi2(y)?;
            record(&mut report, (x, y), pxy, lower, upper);
        }
        report.passed = report.worst_margin >= -tolerance;
        Ok(report)
    }

    /// `φ⁻¹(x)ψ₂⁻¹(y) ≤ φ⁻¹(xy) ≤ φ⁻¹(x)ψ₁⁻¹(y)` on the lattice.
    pub fn check_inverse_sandwich(&self, lattice: &[(f64, f64)], tolerance: f64) -> Result<CheckReport, HomeoError> {
        let mut report = empty_report(lattice.len(), tolerance);
        for &(x, y) in lattice {
            let mid = self.phi_inv(x * y)?;
            let ix = self.phi_inv(x)?;
            let lower = ix * self.psi2_inv(y)?;
            let upper = ix * self.psi1_inv(y)?;
            record(&mut report, (x, y), mid, lower, upper);
        }
        report.passed = report.worst_margin >= -tolerance;
        Ok(report)
    }
}

fn empty_report(points: usize, tolerance: f64) -> CheckReport {
    CheckReport {
        passed: true,
        worst_margin: f64::INFINITY,
        worst_point: (f64::NAN, f64::NAN),
        worst_side: "none",
        points,
        tolerance,
    }
}

fn record(r: &mut CheckReport, at: (f64, f64), mid: f64, lower: f64, upper: f64) {
    let scale = mid.abs().max(lower.abs()).max(upper.abs()).max(f64::MIN_POSITIVE);
    let lo_margin = (mid - lower) / scale;
    let hi_margin = (upper - mid) / scale;
    if lo_margin < r.worst_margin {
        r.worst_margin = lo_margin;
        r.worst_point = at;
        r.worst_side = "lower";
    }
    if hi_margin < r.worst_margin {
        r.worst_margin = hi_margin;
        r.worst_point = at;
        r.worst_side = "upper";
    }
}

/// The default verification lattice: `n`×`n` log-spaced points over
/// [1e-6, 1e6]² plus rows and columns at 1e-9, 1 and 1e9.
pub fn default_lattice(n: usize) -> Vec<(f64, f64)> {
    let mut axis: Vec<f64> = (0..n)
        .map(|i| 10f64.powf(-6.0 + 12.0 * i as f64 / (n - 1) as f64))
        .collect();
    axis.extend([1e-9, 1.0, 1e9]);
    axis.sort_by(f64::total_cmp);
    let mut out = Vec::with_capacity(axis.len() * axis.len());
    for &x in &axis {
        for &y in &axis {
            out.push((x, y));
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    fn example() -> HomeoBundle {
        HomeoBundle::parse("x + x^2", "min(y, y^2)", "max(y, y^2)").unwrap()
    }

    #[test]
    fn odd_evaluation() {
        let b = example();
        assert_eq!(b.phi(2.0).unwrap(), 6.0);
        assert_eq!(b.phi(0.0).unwrap(), 0.0);
        assert_eq!(b.phi(-2.0).unwrap(), -6.0);
    }

    #[test]
    fn inverses() {
        let b = example();
        assert!((b.phi_inv(6.0).unwrap() - 2.0).abs() < 1e-11);
        assert!((b.phi_inv(-6.0).unwrap() + 2.0).abs() < 1e-11);
        assert!((b.psi1_inv(0.25).unwrap() - 0.5).abs() < 1e-12);
        let other = HomeoBundle::parse("x^2/(1+x)", "min(y, y^2)", "max(y, y^2)").unwrap();
        assert_eq!(other.phi_inv(0.0).unwrap(), 0.0);
        let x = other.phi_inv(1e-20).unwrap();
        assert!((other.phi(x).unwrap() - 1e-20).abs() <= 1e-12 * 1e-20);
        let x = other.phi_inv(1e15).unwrap();
        assert!((other.phi(x).unwrap() - 1e15).abs() <= 1e-11 * 1e15);
    }

    #[test]
    fn condition_a_on_example_bundles() {
        let lattice = default_lattice(64);
        assert!(example().check_condition_a(&lattice, 1e-12).unwrap().passed);
        let other = HomeoBundle::parse("x^2/(1+x)", "min(y, y^2)", "max(y, y^2)").unwrap();
        assert!(other.check_condition_a(&lattice, 1e-12).unwrap().passed);
        assert!(example().check_inverse_sandwich(&lattice, 1e-9).unwrap().passed);
        assert!(other.check_inverse_sandwich(&lattice, 1e-9).unwrap().passed);
    }

    #[test]
    fn condition_a_fails_with_identity_pair() {
        let b = HomeoBundle::parse("x + x^2", "y", "y").unwrap();
        let r = b.check_condition_a(&[(2.0, 2.0)], 1e-12).unwrap();
        assert!(!r.passed);
        assert_eq!(r.worst_side, "upper");
        // φ(4) = 20 against φ(2)·2 = 12
        assert!((r.worst_margin - (12.0 - 20.0) / 20.0).abs() < 1e-15);
        assert!(!b.check_condition_a(&default_lattice(64), 1e-12).unwrap().passed);
    }

    #[test]
    fn unit_point_and_identity_equality() {
        let b = example();
        let r = b.check_inverse_sandwich(&[(1.0, 1.0)], 1e-12).unwrap();
        assert!(r.passed && r.worst_margin.abs() < 1e-12);
        let id = HomeoBundle::parse("x", "y", "y").unwrap();
        let r = id.check_inverse_sandwich(&default_lattice(16), 0.0).unwrap();
        assert!(r.passed);
        assert_eq!(r.worst_margin, 0.0);
    }

    #[test]
    fn construction_rejects_bad_maps() {
        assert!(matches!(
            HomeoBundle::parse("x - x^2", "y", "y"),
            Err(HomeoError::NotMonotone { .. })
        ));
        assert!(matches!(
            HomeoBundle::parse("x + 1", "y", "y"),
            Err(HomeoError::NotZeroAtOrigin { .. })
        ));
    }

    #[test]
    fn bounded_map_has_no_inverse_beyond_range() {
        let b = HomeoBundle::parse("x/(1+x)", "y", "y").unwrap();
        assert!((b.phi_inv(0.5).unwrap() - 1.0).abs() < 1e-11);
        assert!(matches!(b.phi_inv(2.0), Err(HomeoError::BracketNotFound { .. })));
    }

    mod props {
        use super::*;
        use proptest::prelude::*;

        proptest! {
            #[test]
            fn round_trip_and_oddness(e in -12.0f64..12.0, which in 0usize..2) {
                let b = if which == 0 { example() } else {
                    HomeoBundle::parse("x^2/(1+x)", "min(y, y^2)", "max(y, y^2)").unwrap()
                };
                let y = 10f64.powf(e);
                let x = b.phi_inv(y).unwrap();
                prop_assert!((b.phi(x).unwrap() - y).abs() <= 1e-11 * (1.0 + y));
                prop_assert_eq!(b.phi_inv(-y).unwrap(), -x);
            }

            #[test]
            fn psi2_inverse_below_psi1_inverse(e in -12.0f64..12.0) {
                let b = example();
                let y = 10f64.powf(e);
                prop_assert!(b.psi2_inv(y).unwrap() <= b.psi1_inv(y).unwrap() * (1.0 + 1e-12));
            }

            #[test]
            fn inverse_is_monotone(e in -10.0f64..10.0, d in 0.0f64..1e-3) {
                let b = example();
                let y1 = 10f64.powf(e);
                let y2 = y1 * (1.0 + d);
                prop_assert!(b.phi_inv(y2).unwrap() >= b.phi_inv(y1).unwrap() * (1.0 - 1e-12));
            }
        }
    }
}
