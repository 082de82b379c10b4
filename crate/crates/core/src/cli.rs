//! Command-line front end.

use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};

use crate::config::{Config, ConfigError};
use crate::homeo::{default_lattice, Which};
use crate::operator::{default_mesh, OperatorError};
use crate::problem::{ProblemError, ProblemInstance};
use crate::report::{csv_num, num, write_atomic, Report};
use crate::solver::{Solver, SolverError};
use crate::theorems::{
    best_existence_window, branch_trends, classify_case, default_profiles, multiplicity_windows, recheck_window,
    shell_index_check, RScan, ShellOutcome, TheoremError, Window,
};

#[derive(Debug, Parser)]
#[command(name = "philap", version, about = "Positive solutions of singular phi-Laplacian Dirichlet problems")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Weight profile, constants, R-curve table, f-limits and weight-class verdicts
    Analyze(RunArgs),
    /// Solutions at a fixed lambda
    Solve(RunArgs),
    /// The branch lambda(M) over the M-grid
    Branch(RunArgs),
    /// Case table, windows, nonexistence bounds, shell and trend checks
    Certify(RunArgs),
    /// Write the one-dimensional config for an [annulus] problem
    Reduce(RunArgs),
    /// Run the built-in fixtures
    Selftest,
}

#[derive(Debug, clap::Args)]
struct RunArgs {
    /// Problem config (TOML)
    config: PathBuf,
    #[arg(long)]
    lambda: Option<f64>,
    /// Quadrature tolerance
    #[arg(long)]
    tol: Option<f64>,
    /// Number of mesh nodes (odd)
    #[arg(long)]
    mesh: Option<usize>,
    #[arg(long)]
    mgrid_lo: Option<f64>,
    #[arg(long)]
    mgrid_hi: Option<f64>,
    #[arg(long)]
    mgrid_per_decade: Option<usize>,
    #[arg(long)]
    out_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub enum CliError {
    Input(String),
    Numerical(String),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Input(_) => 1,
            CliError::Numerical(_) => 2,
        }
    }

    fn message(&self) -> &str {
        match self {
            CliError::Input(m) | CliError::Numerical(m) => m,
        }
    }
}

impl From<ProblemError> for CliError {
    fn from(e: ProblemError) -> Self {
        match e {
            ProblemError::Quad(_) | ProblemError::Unconverged { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Input(e.to_string()),
        }
    }
}

impl From<ConfigError> for CliError {
    fn from(e: ConfigError) -> Self {
        match e {
            ConfigError::Problem(p) => p.into(),
            other => CliError::Input(other.to_string()),
        }
    }
}

impl From<OperatorError> for CliError {
    fn from(e: OperatorError) -> Self {
        match e {
            OperatorError::Problem(p) => p.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<SolverError> for CliError {
    fn from(e: SolverError) -> Self {
        match e {
            SolverError::Problem(p) => p.into(),
            SolverError::Operator(o) => o.into(),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<TheoremError> for CliError {
    fn from(e: TheoremError) -> Self {
        match e {
            TheoremError::Problem(p) => p.into(),
            TheoremError::Operator(o) => o.into(),
            TheoremError::Precondition(m) => CliError::Input(m),
            other => CliError::Numerical(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Input(format!("cannot write output: {e}"))
    }
}

struct Job {
    cfg: Config,
    stem: String,
    out_dir: PathBuf,
}

impl Job {
    fn new(args: &RunArgs) -> Result<Job, CliError> {
        let mut cfg = Config::load(&args.config)?;
        let n = &mut cfg.numerics;
        if let Some(t) = args.tol {
            n.quad_tol = t;
        }
        if let Some(m) = args.mesh {
            n.mesh_nodes = m;
        }
        if let Some(v) = args.mgrid_lo {
            n.mgrid_lo = v;
        }
        if let Some(v) = args.mgrid_hi {
            n.mgrid_hi = v;
        }
        if let Some(v) = args.mgrid_per_decade {
            n.mgrid_per_decade = v;
        }
        if args.lambda.is_some() {
            cfg.run.lambda = args.lambda;
        }
        cfg.validate()?;
        let stem = args
            .config
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_else(|| "problem".into());
        let out_dir = args
            .out_dir
            .clone()
            .or_else(|| cfg.run.out_dir.as_ref().map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from("."));
        Ok(Job { cfg, stem, out_dir })
    }

    fn path(&self, suffix: &str) -> PathBuf {
        self.out_dir.join(format!("{}.{suffix}", self.stem))
    }

    fn write(&self, suffix: &str, contents: &str) -> Result<PathBuf, CliError> {
        let p = self.path(suffix);
        write_atomic(&p, contents)?;
        Ok(p)
    }
}

/// Parse `argv` (including the program name), run, and return the exit code.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Analyze(a) => Job::new(a).and_then(|j| analyze(&j)),
        Command::Solve(a) => Job::new(a).and_then(|j| solve(&j)),
        Command::Branch(a) => Job::new(a).and_then(|j| branch(&j)),
        Command::Certify(a) => Job::new(a).and_then(|j| certify(&j)),
        Command::Reduce(a) => Job::new(a).and_then(|j| reduce(&j)),
        Command::Selftest => selftest(),
    };
    match result {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("error: {}", e.message());
            e.code()
        }
    }
}

fn describe_written(paths: &[PathBuf]) {
    for p in paths {
        eprintln!("wrote {}", p.display());
    }
}

pub fn analyze_report(cfg: &Config, inst: &ProblemInstance) -> Result<(Report, String), CliError> {
    let mut r = Report::new("analysis");
    r.section("instance")
        .text("phi", &cfg.homeo.phi)
        .text("psi1", &cfg.homeo.psi1)
        .text("psi2", &cfg.homeo.psi2)
        .text("c", &cfg.coefficients.c)
        .text("d", &cfg.coefficients.d)
        .text("h", &cfg.weight.as_ref().map(|w| w.h.clone()).unwrap_or_default())
        .text("f", &cfg.nonlinearity.f);
    for (k, v) in &cfg.params {
        r.value(&format!("param {k}"), *v, "input");
    }

    let lattice = default_lattice(64);
    let a = inst.homeo.check_condition_a(&lattice, 1e-12).map_err(ProblemError::from)?;
    let s = inst.homeo.check_inverse_sandwich(&lattice, 1e-9).map_err(ProblemError::from)?;
    r.section("homeomorphisms")
        .text("condition (A)", if a.passed { "pass" } else { "fail" })
        .value("condition (A) worst relative margin", a.worst_margin, "sampled 64x64 log lattice on [1e-6, 1e6]^2")
        .text("inverse sandwich", if s.passed { "pass" } else { "fail" })
        .value("inverse sandwich worst relative margin", s.worst_margin, "sampled 64x64 log lattice on [1e-6, 1e6]^2")
        .value("inverse tolerance", inst.homeo.inverse_tolerance, "input");

    let p = &inst.profile;
    let support_tag = "scan on 1/4096 cells, bisection to 1e-9; declared values kept when consistent";
    r.section("weight profile")
        .value("alpha", p.alpha, support_tag)
        .value("alpha_bar", p.alpha_bar, support_tag)
        .value("beta_bar", p.beta_bar, support_tag)
        .value("beta", p.beta, support_tag)
        .value("gamma1", p.gamma1, "derived from support points")
        .value("gamma2", p.gamma2, "derived from support points")
        .value("gamma", p.gamma, "derived from support points");

    let e = &inst.extrema;
    let ext_tag = "sampled 1025 points + golden-section refinement";
    r.section("coefficient extrema")
        .value("c0 = min c", e.c0, ext_tag)
        .value("|c|_inf", e.c_max, ext_tag)
        .value("d0 = min d", e.d0, ext_tag)
        .value("|d|_inf", e.d_max, ext_tag);

    let c = &inst.constants;
    r.section("constants")
        .quantity("rho1", &c.rho1)
        .quantity("rho_h", &c.rho_h)
        .quantity("gamma0", &c.gamma0)
        .quantity("A1", &c.a1)
        .quantity("A2", &c.a2)
        .quantity("h^*", &c.h_upper)
        .quantity("h_*", &c.h_lower);

    let (f0, finf) = inst.estimate_f_limits()?;
    r.section("limits of f/phi")
        .text("f0", &format!("{f0}  [extrapolated over {} decades]", cfg.numerics.limit_decades))
        .text("f_inf", &format!("{finf}  [extrapolated over {} decades]", cfg.numerics.limit_decades));

    r.section("weight classes");
    let tol = cfg.numerics.membership_tol;
    for (label, which) in [("H_psi1", Which::Psi1), ("H_psi2", Which::Psi2), ("H_phi", Which::Phi)] {
        match inst.membership(which, tol) {
            Ok(m) => {
                r.text(label, &format!("{}  [nested-integral increment test, {} levels]", m.verdict, m.levels));
            }
            Err(err) => {
                r.text(label, &format!("inconclusive  [evaluation failed: {err}]"));
            }
        }
    }
    match inst.l1_membership(tol) {
        Ok(m) => r.text("L1", &format!("{}  [increment test, {} levels]", m.verdict, m.levels)),
        Err(err) => r.text("L1", &format!("inconclusive  [evaluation failed: {err}]")),
    };

    let grid = cfg.m_grid();
    let rows = inst.r_table(&grid)?;
    let mut csv = String::from("m,R1,R2,f_lower,f_upper\n");
    for row in &rows {
        csv.push_str(&row.iter().map(|v| csv_num(*v)).collect::<Vec<_>>().join(","));
        csv.push('\n');
    }
    let r1_min = rows.iter().map(|x| x[1]).fold(f64::INFINITY, f64::min);
    let r2_max = rows.iter().map(|x| x[2]).fold(f64::NEG_INFINITY, f64::max);
    r.section("R-curves")
        .value("grid points", rows.len() as f64, "input")
        .value("min R1 over grid", r1_min, "sampled; envelopes by sampling + golden section")
        .value("max R2 over grid", r2_max, "sampled; envelopes by sampling + golden section")
        .text("table", "see the rcurves CSV");
    Ok((r, csv))
}

fn analyze(job: &Job) -> Result<(), CliError> {
    let inst = job.cfg.instance()?;
    let (report, csv) = analyze_report(&job.cfg, &inst)?;
    print!("{}", report.as_str());
    let a = job.write("analyze.report.txt", report.as_str())?;
    let b = job.write("rcurves.csv", &csv)?;
    describe_written(&[a, b]);
    Ok(())
}

fn solve(job: &Job) -> Result<(), CliError> {
    let lambda = job
        .cfg
        .run
        .lambda
        .ok_or_else(|| CliError::Input("solve needs --lambda or run.lambda".into()))?;
    let inst = job.cfg.instance()?;
    let solver = Solver::new(&inst, job.cfg.solver_options());
    let report = if lambda > 0.0 {
        let branch = solver.continue_branch(&job.cfg.m_grid());
        solver.solve_fixed_lambda(lambda, &branch)
    } else {
        solver.solve_fixed_lambda(lambda, &crate::solver::Branch { samples: Vec::new(), gaps: Vec::new() })
    };
    let mut written = vec![job.write("solutions.csv", &report.index_csv())?];
    for (k, s) in report.solutions.iter().enumerate() {
        written.push(job.write(&format!("solution_{k}.csv"), &s.u.to_csv())?);
    }
    println!("lambda = {}: {} solution(s)", num(lambda), report.solutions.len());
    for (k, s) in report.solutions.iter().enumerate() {
        println!(
            "  [{k}] |u| = {}  sigma = {}  relative residual = {:.2e}  certificate {}",
            num(s.sup_norm),
            num(s.sigma),
            s.certificate.relative_residual,
            if s.certificate.pass { "pass" } else { "FAIL" }
        );
    }
    for f in &report.failures {
        eprintln!("note: {f}");
    }
    describe_written(&written);
    Ok(())
}

fn branch(job: &Job) -> Result<(), CliError> {
    let inst = job.cfg.instance()?;
    let solver = Solver::new(&inst, job.cfg.solver_options());
    let b = solver.continue_branch(&job.cfg.m_grid());
    if b.samples.is_empty() {
        return Err(CliError::Numerical("continuation produced no branch points".into()));
    }
    for (lo, hi) in &b.gaps {
        eprintln!("note: continuation gap for M in ({}, {})", num(*lo), num(*hi));
    }
    let p = job.write("branch.csv", &b.to_csv())?;
    println!("{} branch points", b.samples.len());
    describe_written(&[p]);
    Ok(())
}

fn window_lines(r: &mut Report, w: &Window) {
    r.text("theorem", w.theorem)
        .value("predicted solutions", w.predicted_count as f64, "theorem")
        .value("lambda low", w.lambda_low, "R-curve value at witness")
        .value("lambda high", w.lambda_high, "R-curve value at witness");
    let wt = &w.witnesses;
    r.value("m1", wt.m1, "scan point, refined");
    r.value("m2", wt.m2, "scan point, refined");
    if let Some(x) = wt.big_m1 {
        r.value("M1", x, "scan point, refined");
    }
    if let Some(x) = wt.big_m2 {
        r.value("M2", x, "scan point, refined");
    }
    for (k, (a, b)) in w.shells.iter().enumerate() {
        r.text(&format!("shell {k}"), &format!("({}, {})  [witness norms]", num(*a), num(*b)));
    }
}

pub fn certify_report(cfg: &Config, inst: &ProblemInstance) -> Result<Report, CliError> {
    let mut r = Report::new("certificate");
    let range = cfg.scan_range();
    let case = classify_case(inst, range)?;
    r.section("case table")
        .text("f0", &format!("{}  [extrapolated]", case.f0))
        .text("f_inf", &format!("{}  [extrapolated]", case.finf));
    if case.inconclusive {
        r.text("cases", "inconclusive (no thresholds computed)");
    } else {
        r.text("cases", &case.cases.iter().map(|c| c.to_string()).collect::<Vec<_>>().join(", "));
    }
    for p in &case.predictions {
        r.line(&format!("  - {p}"));
    }
    if let Some(t) = case.lambda_lower_star {
        r.value("lambda_*", t.value, t.method).value("m_*", t.at_m, t.method);
    }
    if let Some(t) = case.lambda_upper_star {
        r.value("lambda^*", t.value, t.method).value("m^*", t.at_m, t.method);
    }
    r.section("nonexistence bounds");
    match case.lambda_bar {
        Some(b) => {
            r.value("lambda_bar", b.value, b.method).value("C1 = sup f/phi", b.ratio_bound, b.method);
        }
        None => {
            r.text("lambda_bar", "absent (needs finite f0 and f_inf)");
        }
    }
    match case.lambda_underline {
        Some(b) => {
            r.value("lambda_underline", b.value, b.method).value("eps = inf f/phi", b.ratio_bound, b.method);
        }
        None => {
            r.text("lambda_underline", "absent (needs positive f0 and f_inf)");
        }
    }

    let grid = crate::solver::log_grid(range.lo, range.hi, range.per_decade);
    let scan = RScan::new(inst, &grid)?;
    let mut windows: Vec<Window> = best_existence_window(&scan).into_iter().collect();
    if scan.decades() >= 4.0 - 1e-9 {
        windows.extend(multiplicity_windows(inst, &scan)?);
    } else {
        r.section("multiplicity").text("status", "skipped: the scan covers fewer than 4 decades");
    }
    let mut tight_cfg = cfg.clone();
    tight_cfg.numerics.quad_tol *= 1e-2;
    let tight = tight_cfg.instance()?;
    let mesh = default_mesh();
    for (k, w) in windows.iter().enumerate() {
        r.section(&format!("window {k}"));
        window_lines(&mut r, w);
        let ok = recheck_window(&tight, w)?;
        r.text(
            "recheck",
            &format!("{}  [quadrature tolerance {:.0e}]", if ok { "pass" } else { "fail" }, tight_cfg.numerics.quad_tol),
        );
        let lambda = w.midpoint();
        r.value("shell checks at lambda", lambda, "window midpoint");
        let wt = &w.witnesses;
        let mut probes = vec![(wt.m1, ShellOutcome::Expanding), (wt.m2, ShellOutcome::Contracting)];
        if let Some(x) = wt.big_m1 {
            probes.push((x, ShellOutcome::Expanding));
        }
        if let Some(x) = wt.big_m2 {
            probes.push((x, ShellOutcome::Contracting));
        }
        for (m, expected) in probes {
            let profiles = default_profiles(inst, &mesh, m);
            let check = shell_index_check(inst, lambda, m, &profiles)?;
            r.text(
                &format!("shell m = {}", num(m)),
                &format!(
                    "{:?} (expected {:?}) over {} profiles  [sampled necessary check]",
                    check.outcome,
                    expected,
                    profiles.len()
                )
                .to_lowercase(),
            );
        }
    }

    if !case.inconclusive && case.cases.iter().any(|&c| c <= 5) {
        let solver = Solver::new(inst, cfg.solver_options());
        let branch = solver.continue_branch(&cfg.m_grid());
        r.section("branch trends");
        for t in branch_trends(&case, &branch, cfg.trend_rule()) {
            r.text(
                &t.statement,
                &format!(
                    "{}  [monotone over the last {} branch points; lambda factor {}]",
                    if t.pass { "consistent" } else { "not confirmed" },
                    cfg.numerics.trend_samples,
                    num(t.observed_factor)
                ),
            );
        }
    }
    Ok(r)
}

fn certify(job: &Job) -> Result<(), CliError> {
    let inst = job.cfg.instance()?;
    let report = certify_report(&job.cfg, &inst)?;
    print!("{}", report.as_str());
    let p = job.write("certify.report.txt", report.as_str())?;
    describe_written(&[p]);
    Ok(())
}

fn reduce(job: &Job) -> Result<(), CliError> {
    let reduced = job.cfg.reduced()?;
    reduced.instance()?;
    let p = job.write("reduced.cfg", &reduced.to_toml())?;
    describe_written(&[p]);
    Ok(())
}

fn selftest() -> Result<(), CliError> {
    let outcomes = crate::selftest::run_all();
    let mut failed = 0;
    for o in &outcomes {
        println!("{} {}: {}", if o.pass { "PASS" } else { "FAIL" }, o.name, o.detail);
        failed += usize::from(!o.pass);
    }
    if failed > 0 {
        return Err(CliError::Numerical(format!("{failed} fixture(s) failed")));
    }
    Ok(())
}

/// Convenience for callers holding a path.
pub fn load_instance(path: &Path) -> Result<(Config, ProblemInstance), CliError> {
    let cfg = Config::load(path)?;
    let inst = cfg.instance()?;
    Ok((cfg, inst))
}
