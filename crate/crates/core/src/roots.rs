//! Scalar root finding and one-dimensional minimisation.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RootError {
    #[error("no sign change on [{a}, {b}]: f(a) = {fa}, f(b) = {fb}")]
    NoSignChange { a: f64, b: f64, fa: f64, fb: f64 },
    #[error("function evaluation failed at {x}: {msg}")]
    Eval { x: f64, msg: String },
    #[error("iteration budget exhausted")]
    Budget,
}

/// Brent's method on a bracketing interval. `f` may fail; failures abort.
///
/// Stops when the bracket is narrower than `xtol_abs + xtol_rel * |x|` or
/// an exact zero is hit.
pub fn brent<F>(mut f: F, a: f64, b: f64, xtol_abs: f64, xtol_rel: f64) -> Result<f64, RootError>
where
    F: FnMut(f64) -> Result<f64, String>,
{
    let eval = |f: &mut F, x: f64| f(x).map_err(|msg| RootError::Eval { x, msg });
    let fa0 = eval(&mut f, a)?;
    let fb0 = eval(&mut f, b)?;
    brent_with_values(f, a, b, fa0, fb0, xtol_abs, xtol_rel)
}

pub fn brent_with_values<F>(
    mut f: F,
    a: f64,
    b: f64,
    fa: f64,
    fb: f64,
    xtol_abs: f64,
    xtol_rel: f64,
) -> Result<f64, RootError>
where
    F: FnMut(f64) -> Result<f64, String>,
{
    if fa == 0.0 {
        return Ok(a);
    }
    if fb == 0.0 {
        return Ok(b);
    }
    if fa.signum() == fb.signum() || fa.is_nan() || fb.is_nan() {
        return Err(RootError::NoSignChange { a, b, fa, fb });
    }
    let (mut a, mut b, mut fa, mut fb) = (a, b, fa, fb);
    let (mut c, mut fc) = (a, fa);
    let mut d = b - a;
    let mut e = d;
    for _ in 0..300 {
        if fb.signum() == fc.signum() {
            c = a;
            fc = fa;
            d = b - a;
            e = d;
        }
        if fc.abs() < fb.abs() {
            a = b;
            b = c;
            c = a;
            fa = fb;
            fb = fc;
            fc = fa;
        }
        let tol = 2.0 * f64::EPSILON * b.abs() + 0.5 * (xtol_abs + xtol_rel * b.abs());
        let m = 0.5 * (c - b);
        if m.abs() <= tol || fb == 0.0 {
            return Ok(b);
        }
        if e.abs() >= tol && fa.abs() > fb.abs() {
            let s = fb / fa;
            let (mut p, mut q);
            if a == c {
                p = 2.0 * m * s;
                q = 1.0 - s;
            } else {
                let qq = fa / fc;
                let r = fb / fc;
                p = s * (2.0 * m * qq * (qq - r) - (b - a) * (r - 1.0));
                q = (qq - 1.0) * (r - 1.0) * (s - 1.0);
            }
            if p > 0.0 {
                q = -q;
            } else {
                p = -p;
            }
            if 2.0 * p < (3.0 * m * q - (tol * q).abs()).min((e * q).abs()) {
                e = d;
                d = p / q;
            } else {
                d = m;
                e = m;
            }
        } else {
            d = m;
            e = m;
        }
        a = b;
        fa = fb;
        b += if d.abs() > tol { d } else { tol.copysign(m) };
        fb = f(b).map_err(|msg| RootError::Eval { x: b, msg })?;
    }
    Err(RootError::Budget)
}

/// Plain bisection for the last `x` with `pred(x)` true, given `pred(lo)`
/// true and `pred(hi)` false.
pub fn bisect_predicate<P: FnMut(f64) -> bool>(mut pred: P, mut lo: f64, mut hi: f64, tol: f64) -> (f64, f64) {
    while (hi - lo).abs() > tol {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        if pred(mid) {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

/// Golden-section search for a local minimiser of `f` on `[a, b]`.
/// Returns `(x, f(x))`, including the endpoints as candidates.
pub fn golden_min<F: FnMut(f64) -> f64>(mut f: F, a: f64, b: f64, iters: usize) -> (f64, f64) {
    const INVPHI: f64 = 0.618_033_988_749_894_8;
    let (fa, fb) = (f(a), f(b));
    let (mut lo, mut hi) = (a, b);
    let mut x1 = hi - INVPHI * (hi - lo);
    let mut x2 = lo + INVPHI * (hi - lo);
    let mut f1 = f(x1);
    let mut f2 = f(x2);
    for _ in 0..iters {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - INVPHI * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + INVPHI * (hi - lo);
            f2 = f(x2);
        }
    }
    let mut best = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    if fa < best.1 {
        best = (a, fa);
    }
    if fb < best.1 {
        best = (b, fb);
    }
    best
}
