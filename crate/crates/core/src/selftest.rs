//! Built-in fixtures with closed-form or independently computed answers.

use std::f64::consts::PI;

use crate::expr::Expression;
use crate::homeo::{default_lattice, HomeoBundle, Which};
use crate::operator::{apply_t, default_mesh, find_sigma, Source};
use crate::problem::{InstanceSpec, ProblemInstance};
use crate::quadrature::{integrate, Membership, SingularityHint};
use crate::solver::{log_grid, Solver, SolverOptions};
use crate::theorems::{
    default_profiles, existence_window, nonexistence_bounds, shell_index_check, ShellOutcome,
};

pub struct Outcome {
    pub name: &'static str,
    pub pass: bool,
    pub detail: String,
}

type Check = fn() -> Result<String, String>;

const EXAMPLE_H: &str = "piece(0<=t<0.0625 : 0; 0.0625<=t<1 : (t-0.0625)*(1-t)^(-1))";

fn inst(phi: &str, c: &str, d: &str, h: &str, f: &str) -> Result<ProblemInstance, String> {
    let spec = InstanceSpec::parse(phi, "y", "y", c, d, h, f).map_err(|e| e.to_string())?;
    ProblemInstance::new(spec).map_err(|e| e.to_string())
}

fn close(name: &str, got: f64, want: f64, tol: f64) -> Result<String, String> {
    if (got - want).abs() <= tol {
        Ok(format!("{name} = {got:.12e}"))
    } else {
        Err(format!("{name} = {got:.12e}, expected {want:.12e} ± {tol:.0e}"))
    }
}

fn expressions() -> Result<String, String> {
    let e = |s: &str, v: &str, x: f64| Expression::parse(s, v).and_then(|e| e.eval(x)).map_err(|e| e.to_string());
    if e("x + x^2", "x", 2.0)? != 6.0 || e(EXAMPLE_H, "t", 0.03)? != 0.0 || e("min(y, y^2)", "y", 0.5)? != 0.25 {
        return Err("wrong value".into());
    }
    if Expression::parse("x + (x", "x").is_ok() || e("(1-t)^(-1)", "t", 1.0).is_ok() {
        return Err("malformed input accepted".into());
    }
    Ok("arithmetic, piecewise and errors".into())
}

fn homeomorphisms() -> Result<String, String> {
    let p = |s: &str, v: &str| Expression::parse(s, v).map_err(|e| e.to_string());
    let b = HomeoBundle::new(p("x + x^2", "x")?, p("min(y, y^2)", "y")?, p("max(y, y^2)", "y")?).map_err(|e| e.to_string())?;
    close("phi^-1(6)", b.invert(Which::Phi, 6.0).map_err(|e| e.to_string())?, 2.0, 1e-12)?;
    close("psi1^-1(0.25)", b.invert(Which::Psi1, 0.25).map_err(|e| e.to_string())?, 0.5, 1e-12)?;
    let lattice = default_lattice(32);
    if !b.check_condition_a(&lattice, 1e-12).map_err(|e| e.to_string())?.passed {
        return Err("condition (A) should hold".into());
    }
    let bad = HomeoBundle::new(p("x + x^2", "x")?, p("y", "y")?, p("y", "y")?).map_err(|e| e.to_string())?;
    if bad.check_condition_a(&lattice, 1e-12).map_err(|e| e.to_string())?.passed {
        return Err("condition (A) should fail for the identity pair".into());
    }
    Ok("inverses and condition (A)".into())
}

fn singular_quadrature() -> Result<String, String> {
    let r = integrate(|t| 1.0 / t.sqrt(), 0.0, 1.0, 1e-12, &[SingularityHint::left()]).map_err(|e| e.to_string())?;
    close("int t^-1/2", r.value, 2.0, 1e-10)
}

fn sigma_oracle() -> Result<String, String> {
    let i = inst("x", "1", "1 + t", "1", "s")?;
    let g = Source::new(|_| 1.0, &[]).map_err(|e| e.to_string())?;
    let s = find_sigma(&i, &g).map_err(|e| e.to_string())?;
    close("sigma", s.sigma, 1.0 / 2f64.ln() - 1.0, 1e-10)
}

fn operator_exactness() -> Result<String, String> {
    let i = inst("x", "1", "1", "1", "s")?;
    let g = Source::new(|_| 1.0, &[]).map_err(|e| e.to_string())?;
    let r = apply_t(&i, &g, &default_mesh()).map_err(|e| e.to_string())?;
    let err = r.u.nodes().iter().zip(r.u.values()).map(|(t, u)| (u - t * (1.0 - t) / 2.0).abs()).fold(0.0, f64::max);
    close("sup error of T(1)", err, 0.0, 1e-8)?;
    let j = inst("x*abs(x)", "1", "1", "1", "s")?;
    let r = apply_t(&j, &g, &default_mesh()).map_err(|e| e.to_string())?;
    close("|T(1)| for x|x|", r.peak, (2.0 / 3.0) * 0.5f64.powf(1.5), 1e-8)
}

fn identity_constants() -> Result<String, String> {
    let i = inst("x", "1", "1", "1", "s^2")?;
    close("A1", i.constants.a1.value, 1.0 / 32.0, 1e-12)?;
    close("A2", i.constants.a2.value, 1.0 / 8.0, 1e-12)?;
    let (r1, r2) = i.r_curves(2.0).map_err(|e| e.to_string())?;
    close("R1(2)", r1, 256.0, 1e-8)?;
    close("R2(2)", r2, 4.0, 1e-10)
}

fn example_profile() -> Result<String, String> {
    let i = inst("x + x^2", "1", "1", EXAMPLE_H, "s")?;
    let p = &i.profile;
    if p.gamma1 != 19.0 / 64.0 || p.gamma2 != 49.0 / 64.0 || p.gamma != 17.0 / 32.0 {
        return Err(format!("gamma = ({}, {}, {})", p.gamma1, p.gamma2, p.gamma));
    }
    let m = i.membership(Which::Psi1, 1e-8).map_err(|e| e.to_string())?;
    let l1 = i.l1_membership(1e-8).map_err(|e| e.to_string())?;
    if m.verdict != Membership::Member || l1.verdict != Membership::Nonmember {
        return Err(format!("membership {} / L1 {}", m.verdict, l1.verdict));
    }
    Ok("gamma = (19/64, 49/64, 17/32); member, not L1".into())
}

fn linear_bounds() -> Result<String, String> {
    use crate::problem::LimitClass::Finite;
    let i = inst("x", "1", "1", "1", "s")?;
    let (bar, under) = nonexistence_bounds(&i, Finite(1.0), Finite(1.0)).map_err(|e| e.to_string())?;
    close("lambda_bar", bar.map_or(f64::NAN, |b| b.value), 8.0, 1e-10)?;
    close("lambda_underline", under.map_or(f64::NAN, |b| b.value), 16.0, 1e-10)
}

fn windows_and_shells() -> Result<String, String> {
    let i = inst("x", "1", "1", "1", "s^2")?;
    let w = existence_window(&i, 100.0, 1.0).map_err(|e| e.to_string())?.ok_or("no window")?;
    close("window low", w.lambda_low, 5.12, 1e-9)?;
    close("window high", w.lambda_high, 8.0, 1e-9)?;
    let profiles = default_profiles(&i, &default_mesh(), 1.0);
    let hi = shell_index_check(&i, 1000.0, 1.0, &profiles).map_err(|e| e.to_string())?;
    let lo = shell_index_check(&i, 4.0, 1.0, &profiles).map_err(|e| e.to_string())?;
    if hi.outcome != ShellOutcome::Expanding || lo.outcome != ShellOutcome::Contracting {
        return Err(format!("shell outcomes {:?} / {:?}", hi.outcome, lo.outcome));
    }
    Ok(format!("window (5.12, 8); shells agree on {} profiles", profiles.len()))
}

fn linear_branch() -> Result<String, String> {
    let i = inst("x", "1", "1", "1", "s")?;
    let s = Solver::new(&i, SolverOptions::default());
    let b = s.continue_branch(&log_grid(0.1, 10.0, 2));
    let worst = b.samples.iter().map(|p| (p.lambda - PI * PI).abs()).fold(0.0, f64::max);
    if b.samples.is_empty() {
        return Err("empty branch".into());
    }
    close("max |lambda - pi^2|", worst, 0.0, 1e-6)
}

fn quadratic_branch() -> Result<String, String> {
    let i = inst("x", "1", "1", "1", "s^2")?;
    let s = Solver::new(&i, SolverOptions::default());
    let b = s.continue_branch(&log_grid(0.1, 10.0, 2));
    let worst = b.samples.iter().map(|p| (p.lambda * p.m - 11.79668793896954).abs()).fold(0.0, f64::max);
    if b.samples.is_empty() {
        return Err("empty branch".into());
    }
    close("max |lambda M - K|", worst, 0.0, 1e-7)
}

pub const CHECKS: &[(&str, Check)] = &[
    ("expressions", expressions),
    ("homeomorphisms", homeomorphisms),
    ("singular quadrature", singular_quadrature),
    ("peak abscissa", sigma_oracle),
    ("operator exactness", operator_exactness),
    ("identity constants", identity_constants),
    ("example weight profile", example_profile),
    ("linear nonexistence bounds", linear_bounds),
    ("windows and shells", windows_and_shells),
    ("linear branch", linear_branch),
    ("quadratic branch", quadratic_branch),
];

pub fn run_all() -> Vec<Outcome> {
    CHECKS
        .iter()
        .map(|(name, check)| match check() {
            Ok(detail) => Outcome { name, pass: true, detail },
            Err(detail) => Outcome { name, pass: false, detail },
        })
        .collect()
}

#[cfg(test)]
mod tests {
    #[test]
    fn all_fixtures_pass() {
        for o in super::run_all() {
            assert!(o.pass, "{}: {}", o.name, o.detail);
        }
    }
}
