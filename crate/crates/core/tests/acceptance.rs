//! Acceptance suite. Runs without the libtest harness so every criterion
//! prints exactly one PASS/FAIL line; exits nonzero if any fails.

use std::f64::consts::PI;
use std::path::PathBuf;
use std::time::{Duration, Instant};

use philap::config::Config;
use philap::homeo::Which;
use philap::operator::{
    apply_t, apply_t_at_sigma, cone_margin, default_mesh, find_sigma, ConeMode, Source,
};
use philap::problem::{InstanceSpec, LimitClass, ProblemInstance};
use philap::quadrature::Membership;
use philap::solver::{log_grid, Solver, SolverOptions};
use philap::theorems::{
    default_profiles, multiplicity_windows, nonexistence_bounds, shell_index_check, RScan, ShellOutcome,
};
use proptest::prelude::*;
use proptest::test_runner::{Config as RunnerConfig, TestRunner};

type Outcome = Result<String, String>;

fn ensure(ok: bool, msg: impl FnOnce() -> String) -> Result<(), String> {
    if ok {
        Ok(())
    } else {
        Err(msg())
    }
}

fn inst(phi: &str, psi1: &str, psi2: &str, c: &str, d: &str, h: &str, f: &str) -> Result<ProblemInstance, String> {
    let spec = InstanceSpec::parse(phi, psi1, psi2, c, d, h, f).map_err(|e| e.to_string())?;
    ProblemInstance::new(spec).map_err(|e| e.to_string())
}

fn simple(h: &str, f: &str) -> Result<ProblemInstance, String> {
    inst("x", "y", "y", "1", "1", h, f)
}

fn config_path(name: &str) -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../configs").join(name)
}

fn operator_exactness() -> Outcome {
    let mesh = default_mesh();
    let one = Source::new(|_| 1.0, &[]).map_err(|e| e.to_string())?;

    let start = Instant::now();
    let i = simple("1", "s")?;
    let r = apply_t(&i, &one, &mesh).map_err(|e| e.to_string())?;
    let err = r
        .u
        .nodes()
        .iter()
        .zip(r.u.values())
        .map(|(t, u)| (u - t * (1.0 - t) / 2.0).abs())
        .fold(0.0, f64::max);
    let t1 = start.elapsed();
    ensure(err <= 1e-8, || format!("identity: sup error {err:.3e}"))?;

    let start = Instant::now();
    let j = inst("x*abs(x)", "y^2", "y^2", "1", "1", "1", "s")?;
    let r = apply_t(&j, &one, &mesh).map_err(|e| e.to_string())?;
    let want = (2.0 / 3.0) * 0.5f64.powf(1.5);
    let t2 = start.elapsed();
    ensure((r.peak - want).abs() <= 1e-8, || format!("x|x|: norm {} vs {want}", r.peak))?;
    ensure(t1 < Duration::from_secs(1) && t2 < Duration::from_secs(1), || format!("runtime {t1:?}, {t2:?}"))?;
    Ok(format!("sup error {err:.1e}; x|x| norm error {:.1e}; {t1:.0?} / {t2:.0?}", (r.peak - want).abs()))
}

const PHI_FAMILY: [(&str, &str, &str); 4] = [
    ("x", "y", "y"),
    ("x*abs(x)", "y^2", "y^2"),
    ("x + x^2", "min(y, y^2)", "max(y, y^2)"),
    ("x^2/(1+x)", "min(y, y^2)", "max(y, y^2)"),
];

fn weight_strategy() -> impl Strategy<Value = String> {
    prop_oneof![
        (0.1f64..2.0, 0.0f64..3.0).prop_map(|(a, b)| format!("{a} + {b}*t*(1-t)")),
        (0.0f64..0.7, 0.0f64..0.7).prop_map(|(p, q)| format!("t^(-{p}) * (1-t)^(-{q})")),
        (0.05f64..0.3, 0.55f64..0.95).prop_map(|(a, b)| format!("piece(0<=t<{a} : 0; {a}<=t<{b} : (t-{a})*({b}-t); {b}<=t<1 : 0)")),
        (0.5f64..4.0, 0.1f64..0.9).prop_map(|(a, k)| format!("1 + {a}*abs(t - {k})")),
    ]
}

fn concavity_suite() -> Outcome {
    let start = Instant::now();
    let mut runner = TestRunner::new(RunnerConfig {
        cases: 100,
        failure_persistence: None,
        rng_algorithm: proptest::test_runner::RngAlgorithm::ChaCha,
        ..RunnerConfig::default()
    });
    let strategy = (
        0usize..4,
        (0.2f64..3.0, -0.5f64..0.5, 0.2f64..3.0, -0.5f64..0.5),
        weight_strategy(),
    );
    let worst = std::cell::Cell::new(f64::INFINITY);
    let count = std::cell::Cell::new(0usize);
    let result = runner.run(&strategy, |(k, (c0, c1, d0, d1), h)| {
        let (phi, psi1, psi2) = PHI_FAMILY[k];
        let c = format!("{c0}*(1 + {c1}*t^2)");
        let d = format!("{d0}*(1 + {d1}*t)");
        let i = inst(phi, psi1, psi2, &c, &d, &h, "s").map_err(|e| TestCaseError::fail(format!("{h}: {e}")))?;
        let g = Source::new(|t| i.h(t), &[]).map_err(|e| TestCaseError::fail(e.to_string()))?;
        let r = apply_t(&i, &g, &default_mesh()).map_err(|e| TestCaseError::fail(format!("{h}: {e}")))?;
        let margin = cone_margin(&i, &r.u, ConeMode::Concavity);
        worst.set(worst.get().min(margin / r.peak));
        count.set(count.get() + 1);
        prop_assert!(margin >= -1e-8 * r.peak, "phi {phi}, c {c}, d {d}, h {h}: margin {margin}");
        Ok(())
    });
    result.map_err(|e| e.to_string())?;
    let elapsed = start.elapsed();
    ensure(count.get() == 100, || format!("{} instances ran", count.get()))?;
    ensure(elapsed < Duration::from_secs(120), || format!("runtime {elapsed:?}"))?;
    Ok(format!("100 instances, worst relative margin {:.2e}, {elapsed:.1?}", worst.get()))
}

/// (name, instance, f0, f_inf) for the fixture set.
fn fixtures() -> Result<Vec<(&'static str, ProblemInstance)>, String> {
    let example = Config::load(&config_path("three_solutions.cfg"))
        .and_then(|c| c.instance())
        .map_err(|e| e.to_string())?;
    Ok(vec![
        ("quadratic", simple("1", "s^2")?),
        ("linear", simple("1", "s")?),
        ("sqrt", simple("1", "sqrt(s)")?),
        ("sublinear at both ends", simple("1", "s^2/(1+s^3)")?),
        ("p-Laplacian", inst("x*abs(x)", "y^2", "y^2", "1 + t", "2 - t", "t*(1-t)", "s^3")?),
        ("variable coefficients", inst("x + x^2", "min(y, y^2)", "max(y, y^2)", "1 + t/2", "2 - t", "1 + t", "s")?),
        ("example", example),
    ])
}

fn r_curve_suite() -> Outcome {
    let grid = log_grid(1e-2, 1e2, 16);
    let mut trend_checks = 0;
    for (name, i) in fixtures()? {
        let (a1, a2) = (i.constants.a1.value, i.constants.a2.value);
        ensure(a1 < a2, || format!("{name}: A1 = {a1} >= A2 = {a2}"))?;
        let rows = i.r_table(&grid).map_err(|e| e.to_string())?;
        for row in &rows {
            ensure(row[2] < row[1], || format!("{name}: R2({}) = {} >= R1 = {}", row[0], row[2], row[1]))?;
        }
        let (f0, finf) = i.estimate_f_limits().map_err(|e| e.to_string())?;
        let ends = [
            (f0, vec![1e-3, 1e-4, 1e-5, 1e-6], "m -> 0"),
            (finf, vec![1e5, 1e6, 1e7, 1e8], "m -> inf"),
        ];
        for (class, ms, label) in ends {
            let expect_up = match class {
                LimitClass::Zero => true,
                LimitClass::Infinite => false,
                _ => continue,
            };
            for k in [1usize, 2] {
                let r: Vec<f64> = ms
                    .iter()
                    .map(|&m| i.r_curves(m).map(|x| if k == 1 { x.0 } else { x.1 }))
                    .collect::<Result<_, _>>()
                    .map_err(|e| e.to_string())?;
                let monotone = r.windows(2).all(|w| if expect_up { w[1] > w[0] } else { w[1] < w[0] });
                let factor = if expect_up { r[3] / r[0] } else { r[0] / r[3] };
                ensure(monotone && factor >= 10.0, || {
                    format!("{name}: R{k} as {label} should go to {} but reads {r:?}", if expect_up { "inf" } else { "0" })
                })?;
                trend_checks += 1;
            }
        }
    }
    Ok(format!("7 fixtures, {} grid points each, {trend_checks} envelope trends", grid.len()))
}

fn shell_checks() -> Outcome {
    let start = Instant::now();
    let i = simple("1", "s^2")?;
    let profiles = default_profiles(&i, &default_mesh(), 1.0);
    ensure(profiles.len() >= 5, || format!("only {} cone profiles", profiles.len()))?;
    let hi = shell_index_check(&i, 1000.0, 1.0, &profiles).map_err(|e| e.to_string())?;
    let lo = shell_index_check(&i, 4.0, 1.0, &profiles).map_err(|e| e.to_string())?;
    ensure(hi.outcome == ShellOutcome::Expanding, || format!("lambda = 1000: {:?} {:?}", hi.outcome, hi.image_norms))?;
    ensure(lo.outcome == ShellOutcome::Contracting, || format!("lambda = 4: {:?} {:?}", lo.outcome, lo.image_norms))?;
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(30), || format!("runtime {elapsed:?}"))?;
    Ok(format!("{} profiles, {elapsed:.1?}", profiles.len()))
}

fn example_reproduction() -> Outcome {
    let start = Instant::now();
    let cfg = Config::load(&config_path("three_solutions.cfg")).map_err(|e| e.to_string())?;
    let i = cfg.instance().map_err(|e| e.to_string())?;
    let p = &i.profile;
    ensure(p.gamma1 == 19.0 / 64.0 && p.gamma2 == 49.0 / 64.0 && p.gamma == 17.0 / 32.0, || {
        format!("gamma = ({}, {}, {})", p.gamma1, p.gamma2, p.gamma)
    })?;

    // M2 as required by the construction of f
    let m2_param = cfg.params["M2"];
    let rho = i.rho_h();
    let (a1, a2) = (i.constants.a1.value, i.constants.a2.value);
    let hb = &i.homeo;
    let e = |x: Result<f64, philap::homeo::HomeoError>| x.map_err(|e| e.to_string());
    let inner = e(hb.phi(1.0 / (rho * a1)))?.powi(2) / (e(hb.phi(1.0))? * e(hb.psi1(1.0 / a2))?.powi(2));
    let bound = (1.0 / rho).max(e(hb.invert(Which::Phi, inner))?);
    ensure(m2_param > bound, || format!("M2 = {m2_param} does not exceed {bound}"))?;

    let lo_ref = i.r_curves(1.0 / rho).map_err(|e| e.to_string())?.0;
    let hi_ref = i.r_curves(m2_param).map_err(|e| e.to_string())?.1;
    let range = cfg.scan_range();
    let scan = RScan::new(&i, &log_grid(range.lo, range.hi, range.per_decade)).map_err(|e| e.to_string())?;
    let windows = multiplicity_windows(&i, &scan).map_err(|e| e.to_string())?;
    let w = windows
        .iter()
        .find(|w| w.predicted_count == 3)
        .ok_or_else(|| "no three-solution window".to_string())?;
    ensure(lo_ref <= w.lambda_low && w.lambda_high <= hi_ref && w.lambda_low < w.lambda_high, || {
        format!("window ({}, {}) not inside ({lo_ref}, {hi_ref})", w.lambda_low, w.lambda_high)
    })?;

    let solver = Solver::new(&i, cfg.solver_options());
    let branch = solver.continue_branch(&cfg.m_grid());
    let lambda = w.midpoint();
    let report = solver.solve_fixed_lambda(lambda, &branch);
    let sols = &report.solutions;
    ensure(sols.len() >= 3, || format!("{} solutions at lambda = {lambda}: {:?}", sols.len(), report.failures))?;
    for s in sols {
        let rel = s.sup_residual / s.sup_norm;
        ensure(rel <= 1e-6, || format!("|u| = {}: relative residual {rel:.2e}", s.sup_norm))?;
        ensure(s.certificate.pass, || format!("|u| = {}: {:?}", s.sup_norm, s.certificate.failures))?;
    }
    for w2 in sols.windows(2) {
        ensure(w2[1].sup_norm > w2[0].sup_norm * (1.0 + 1e-3), || "solutions not distinct".into())?;
    }
    for (k, (a, b)) in w.shells.iter().enumerate() {
        ensure(sols.iter().any(|s| *a < s.sup_norm && s.sup_norm < *b), || {
            format!("no solution in shell {k} = ({a}, {b})")
        })?;
    }
    let elapsed = start.elapsed();
    ensure(elapsed < Duration::from_secs(600), || format!("runtime {elapsed:?}"))?;
    let norms: Vec<String> = sols.iter().map(|s| format!("{:.6e}", s.sup_norm)).collect();
    Ok(format!(
        "window ({:.3}, {:.3}) in ({lo_ref:.3}, {hi_ref:.3}); norms {} at lambda {lambda:.3}; {elapsed:.1?}",
        w.lambda_low,
        w.lambda_high,
        norms.join(", ")
    ))
}

fn quadratic_trend() -> Outcome {
    let i = simple("1", "s^2")?;
    let s = Solver::new(&i, SolverOptions::default());
    let b = s.continue_branch(&log_grid(1e-2, 1e2, 16));
    ensure(b.gaps.is_empty(), || format!("gaps {:?}", b.gaps))?;
    ensure(b.samples.len() == 65, || format!("{} samples", b.samples.len()))?;
    ensure(b.samples.windows(2).all(|w| w[1].lambda < w[0].lambda), || "lambda not strictly decreasing".into())?;
    let span = (b.samples[0].lambda / b.samples.last().unwrap().lambda).log10();
    ensure(span >= 3.0, || format!("lambda spans {span:.2} decades"))?;
    Ok(format!("strictly decreasing over {} points, {span:.2} decades of lambda", b.samples.len()))
}

fn nonexistence_consistency() -> Outcome {
    let i = simple("1", "s")?;
    let (bar, under) =
        nonexistence_bounds(&i, LimitClass::Finite(1.0), LimitClass::Finite(1.0)).map_err(|e| e.to_string())?;
    let (bar, under) = (bar.ok_or("no lambda_bar")?.value, under.ok_or("no lambda_underline")?.value);
    ensure((bar - 8.0).abs() <= 1e-10 && (under - 16.0).abs() <= 1e-10, || format!("bounds {bar}, {under}"))?;
    let s = Solver::new(&i, SolverOptions::default());
    let b = s.continue_branch(&log_grid(1e-3, 1e3, 64));
    ensure(!b.samples.is_empty(), || "empty branch".into())?;
    let worst = b.samples.iter().map(|p| (p.lambda - PI * PI).abs()).fold(0.0, f64::max);
    ensure(worst <= 1e-6, || format!("flat branch deviates by {worst:.2e}"))?;
    ensure(bar < PI * PI && PI * PI < under, || "pi^2 outside the bounds".into())?;
    for lambda in [4.0, 32.0] {
        let r = s.solve_fixed_lambda(lambda, &b);
        ensure(r.solutions.is_empty(), || format!("{} solutions at lambda = {lambda}", r.solutions.len()))?;
    }
    Ok(format!("lambda_bar = {bar}, lambda_underline = {under}, |lambda - pi^2| <= {worst:.1e}"))
}

fn sigma_independence() -> Outcome {
    let i = simple("piece(0<=t<0.4 : 1; 0.4<=t<0.6 : 0; 0.6<=t<1 : 1)", "s")?;
    let g = Source::new(|t| i.h(t), &[0.4, 0.6]).map_err(|e| e.to_string())?;
    let s = find_sigma(&i, &g).map_err(|e| e.to_string())?;
    let (a, b) = s.zero_interval.ok_or("no zero interval detected")?;
    let mesh = default_mesh();
    let (ua, _) = apply_t_at_sigma(&i, &g, &mesh, a).map_err(|e| e.to_string())?;
    let (ub, _) = apply_t_at_sigma(&i, &g, &mesh, b).map_err(|e| e.to_string())?;
    let d = ua.distance(&ub);
    ensure(d <= 1e-8, || format!("sup distance {d:.3e}"))?;
    Ok(format!("zero interval ({a:.9}, {b:.9}), sup distance {d:.1e}"))
}

fn membership() -> Outcome {
    let cfg = Config::load(&config_path("three_solutions.cfg")).map_err(|e| e.to_string())?;
    let i = cfg.instance().map_err(|e| e.to_string())?;
    let m = i.membership(Which::Psi1, 1e-8).map_err(|e| e.to_string())?;
    let l1 = i.l1_membership(1e-8).map_err(|e| e.to_string())?;
    ensure(m.verdict == Membership::Member, || format!("example: H_psi1 verdict {}", m.verdict))?;
    ensure(l1.verdict == Membership::Nonmember, || format!("example: L1 verdict {}", l1.verdict))?;
    let continuous = ["1", "t*(1-t)", "1 + t", "exp(t)", "piece(0<=t<0.3 : 0; 0.3<=t<1 : t-0.3)", "abs(t - 0.5)"];
    for h in continuous {
        let j = inst("x + x^2", "min(y, y^2)", "max(y, y^2)", "1", "1", h, "s")?;
        for which in [Which::Psi1, Which::Phi, Which::Psi2] {
            let v = j.membership(which, 1e-8).map_err(|e| e.to_string())?.verdict;
            ensure(v == Membership::Member, || format!("h = {h}: {which} verdict {v}"))?;
        }
    }
    Ok(format!("example member/nonmember; {} continuous weights member", continuous.len()))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 9] = [
        ("operator exactness", operator_exactness),
        ("cone bound on random instances", concavity_suite),
        ("R-curve ordering and envelope limits", r_curve_suite),
        ("shell expansion and contraction", shell_checks),
        ("three-solution example", example_reproduction),
        ("superlinear branch trend", quadratic_trend),
        ("nonexistence consistency", nonexistence_consistency),
        ("peak abscissa independence", sigma_independence),
        ("weight class membership", membership),
    ];
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    for (k, (name, check)) in criteria.iter().enumerate() {
        if !filter.is_empty() && !filter.iter().any(|f| name.contains(f.as_str())) {
            continue;
        }
        let outcome = std::panic::catch_unwind(check).unwrap_or_else(|_| Err("panicked".into()));
        match outcome {
            Ok(detail) => println!("criterion {} PASS {name}: {detail}", k + 1),
            Err(detail) => {
                failed += 1;
                println!("criterion {} FAIL {name}: {detail}", k + 1);
            }
        }
    }
    if failed > 0 {
        std::process::exit(1);
    }
}
