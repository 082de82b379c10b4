//! Problem configuration files: TOML with the sections
//! `[homeo] [coefficients] [weight] [nonlinearity] [numerics] [run] [params]`
//! and an optional `[annulus]` used by `reduce`.

use std::collections::BTreeMap;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::expr::{substitute_params, Expression};
use crate::homeo::default_lattice;
use crate::operator::{graded_mesh, DEFAULT_MESH_LAYERS, DEFAULT_MESH_NODES, DEFAULT_MESH_RATIO};
use crate::problem::{DeclaredSupport, InstanceSpec, LimitRule, ProblemError, ProblemInstance};
use crate::quadrature::{Endpoint, SingularityHint};
use crate::solver::{log_grid, ShootOptions, SolverOptions};
use crate::theorems::{ScanRange, TrendRule};

#[derive(Debug, Error)]
pub enum ConfigError {
    #[error("cannot read {path}: {source}")]
    Io { path: String, source: std::io::Error },
    #[error("malformed config: {0}")]
    Syntax(#[from] toml::de::Error),
    #[error("invalid config: {0}")]
    Invalid(String),
    #[error(transparent)]
    Problem(#[from] ProblemError),
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct HomeoSection {
    pub phi: String,
    pub psi1: String,
    pub psi2: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct CoefficientSection {
    #[serde(default = "one")]
    pub c: String,
    #[serde(default = "one")]
    pub d: String,
}

fn one() -> String {
    "1".into()
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct WeightSection {
    pub h: String,
    pub alpha: Option<f64>,
    pub alpha_bar: Option<f64>,
    pub beta_bar: Option<f64>,
    pub beta: Option<f64>,
    /// `h ~ t^{-left_exponent}` near 0
    pub left_exponent: Option<f64>,
    /// `h ~ (1-t)^{-right_exponent}` near 1
    pub right_exponent: Option<f64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct NonlinearitySection {
    pub f: String,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct NumericsSection {
    pub quad_tol: f64,
    pub zero_threshold: f64,
    pub membership_tol: f64,
    pub mesh_nodes: usize,
    pub mesh_ratio: f64,
    pub mesh_layers: usize,
    pub mgrid_lo: f64,
    pub mgrid_hi: f64,
    pub mgrid_per_decade: usize,
    pub scan_lo: f64,
    pub scan_hi: f64,
    pub scan_per_decade: usize,
    pub shoot_rtol: f64,
    pub tail_eps: f64,
    pub newton_tol: f64,
    pub residual_tol: f64,
    pub cone_tol: f64,
    pub limit_decades: usize,
    pub limit_trend_decades: usize,
    pub limit_trend_factor: f64,
    pub limit_flat_decades: usize,
    pub limit_flat_tolerance: f64,
    pub trend_samples: usize,
    pub trend_factor: f64,
}

impl Default for NumericsSection {
    fn default() -> Self {
        let solver = SolverOptions::default();
        let limits = LimitRule::default();
        let scan = ScanRange::default();
        let trend = TrendRule::default();
        NumericsSection {
            quad_tol: 1e-10,
            zero_threshold: 1e-12,
            membership_tol: 1e-8,
            mesh_nodes: DEFAULT_MESH_NODES,
            mesh_ratio: DEFAULT_MESH_RATIO,
            mesh_layers: DEFAULT_MESH_LAYERS,
            mgrid_lo: 1e-3,
            mgrid_hi: 1e3,
            mgrid_per_decade: 64,
            scan_lo: scan.lo,
            scan_hi: scan.hi,
            scan_per_decade: scan.per_decade,
            shoot_rtol: solver.shoot.rtol,
            tail_eps: solver.shoot.tail_eps,
            newton_tol: solver.newton_tol,
            residual_tol: solver.residual_tol,
            cone_tol: solver.cone_tol,
            limit_decades: limits.decades,
            limit_trend_decades: limits.trend_decades,
            limit_trend_factor: limits.trend_factor,
            limit_flat_decades: limits.flat_decades,
            limit_flat_tolerance: limits.flat_tolerance,
            trend_samples: trend.samples,
            trend_factor: trend.factor,
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize, Serialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub lambda: Option<f64>,
    pub out_dir: Option<String>,
    pub seed: Option<u64>,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct AnnulusSection {
    pub w: String,
    #[serde(rename = "A")]
    pub a: String,
    pub k: String,
    pub r1: f64,
    pub r2: f64,
    pub n: u32,
}

#[derive(Debug, Clone, Deserialize, Serialize)]
#[serde(deny_unknown_fields)]
pub struct Config {
    pub homeo: HomeoSection,
    #[serde(default = "default_coefficients")]
    pub coefficients: CoefficientSection,
    pub weight: Option<WeightSection>,
    pub nonlinearity: NonlinearitySection,
    #[serde(default)]
    pub numerics: NumericsSection,
    #[serde(default)]
    pub run: RunSection,
    #[serde(default)]
    pub params: BTreeMap<String, f64>,
    pub annulus: Option<AnnulusSection>,
}

fn default_coefficients() -> CoefficientSection {
    CoefficientSection { c: one(), d: one() }
}

impl Config {
    pub fn from_str(src: &str) -> Result<Config, ConfigError> {
        let cfg: Config = toml::from_str(src)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Config, ConfigError> {
        let src = std::fs::read_to_string(path).map_err(|source| ConfigError::Io {
            path: path.display().to_string(),
            source,
        })?;
        Self::from_str(&src)
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let n = &self.numerics;
        let positive = [
            ("quad_tol", n.quad_tol),
            ("zero_threshold", n.zero_threshold),
            ("membership_tol", n.membership_tol),
            ("mesh_ratio", n.mesh_ratio),
            ("mgrid_lo", n.mgrid_lo),
            ("mgrid_hi", n.mgrid_hi),
            ("scan_lo", n.scan_lo),
            ("scan_hi", n.scan_hi),
            ("shoot_rtol", n.shoot_rtol),
            ("tail_eps", n.tail_eps),
            ("newton_tol", n.newton_tol),
            ("residual_tol", n.residual_tol),
            ("cone_tol", n.cone_tol),
            ("limit_trend_factor", n.limit_trend_factor),
            ("limit_flat_tolerance", n.limit_flat_tolerance),
            ("trend_factor", n.trend_factor),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(ConfigError::Invalid(format!("numerics.{name} must be positive (got {v})")));
            }
        }
        if n.mesh_ratio >= 1.0 {
            return Err(ConfigError::Invalid("numerics.mesh_ratio must be below 1".into()));
        }
        if n.mesh_nodes < 9 || n.mesh_nodes % 2 == 0 {
            return Err(ConfigError::Invalid("numerics.mesh_nodes must be odd and at least 9".into()));
        }
        if n.mgrid_hi <= n.mgrid_lo || n.scan_hi <= n.scan_lo {
            return Err(ConfigError::Invalid("grid upper bounds must exceed lower bounds".into()));
        }
        if n.mgrid_per_decade == 0 || n.scan_per_decade == 0 || n.trend_samples < 2 {
            return Err(ConfigError::Invalid("grid densities must be positive".into()));
        }
        if let Some(l) = self.run.lambda {
            if !(l >= 0.0 && l.is_finite()) {
                return Err(ConfigError::Invalid(format!("run.lambda must be nonnegative (got {l})")));
            }
        }
        if self.weight.is_none() && self.annulus.is_none() {
            return Err(ConfigError::Invalid("either [weight] or [annulus] is required".into()));
        }
        Ok(())
    }

    fn expr_source(&self, src: &str) -> String {
        substitute_params(src, &self.params)
    }

    /// Instance spec with parameters substituted.
    pub fn instance_spec(&self) -> Result<InstanceSpec, ConfigError> {
        let w = self
            .weight
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("[weight] is required for this command".into()))?;
        let s = |x: &str| self.expr_source(x);
        let mut spec = InstanceSpec::parse(
            &s(&self.homeo.phi),
            &s(&self.homeo.psi1),
            &s(&self.homeo.psi2),
            &s(&self.coefficients.c),
            &s(&self.coefficients.d),
            &s(&w.h),
            &s(&self.nonlinearity.f),
        )?;
        spec.hints = vec![
            SingularityHint {
                endpoint: Endpoint::Left,
                exponent: w.left_exponent,
            },
            SingularityHint {
                endpoint: Endpoint::Right,
                exponent: w.right_exponent,
            },
        ];
        spec.support = DeclaredSupport {
            alpha: w.alpha,
            alpha_bar: w.alpha_bar,
            beta_bar: w.beta_bar,
            beta: w.beta,
        };
        let n = &self.numerics;
        spec.quad_tol = n.quad_tol;
        spec.zero_threshold = n.zero_threshold;
        spec.limit_rule = LimitRule {
            decades: n.limit_decades,
            trend_decades: n.limit_trend_decades,
            trend_factor: n.limit_trend_factor,
            flat_decades: n.limit_flat_decades,
            flat_tolerance: n.limit_flat_tolerance,
        };
        Ok(spec)
    }

    /// Build and validate the instance, including condition (A) on the default lattice.
    pub fn instance(&self) -> Result<ProblemInstance, ConfigError> {
        let inst = ProblemInstance::new(self.instance_spec()?)?;
        let report = inst
            .homeo
            .check_condition_a(&default_lattice(64), 1e-12)
            .map_err(ProblemError::from)?;
        if !report.passed {
            return Err(ConfigError::Invalid(format!(
                "condition (A) fails: {} bound violated at (x, y) = {:?} by relative margin {:.3e}",
                report.worst_side, report.worst_point, report.worst_margin
            )));
        }
        Ok(inst)
    }

    pub fn mesh(&self) -> Vec<f64> {
        let n = &self.numerics;
        graded_mesh(n.mesh_nodes, n.mesh_ratio, n.mesh_layers)
    }

    pub fn m_grid(&self) -> Vec<f64> {
        let n = &self.numerics;
        log_grid(n.mgrid_lo, n.mgrid_hi, n.mgrid_per_decade)
    }

    pub fn scan_range(&self) -> ScanRange {
        let n = &self.numerics;
        ScanRange {
            lo: n.scan_lo,
            hi: n.scan_hi,
            per_decade: n.scan_per_decade,
        }
    }

    pub fn trend_rule(&self) -> TrendRule {
        TrendRule {
            samples: self.numerics.trend_samples,
            factor: self.numerics.trend_factor,
        }
    }

    pub fn solver_options(&self) -> SolverOptions {
        let n = &self.numerics;
        SolverOptions {
            shoot: ShootOptions {
                rtol: n.shoot_rtol,
                tail_eps: n.tail_eps,
                ..ShootOptions::default()
            },
            newton_tol: n.newton_tol,
            residual_tol: n.residual_tol,
            cone_tol: n.cone_tol,
            mesh: self.mesh(),
            ..SolverOptions::default()
        }
    }

    /// The one-dimensional config obtained from the `[annulus]` section.
    pub fn reduced(&self) -> Result<Config, ConfigError> {
        let a = self
            .annulus
            .as_ref()
            .ok_or_else(|| ConfigError::Invalid("[annulus] is required for reduce".into()))?;
        let p = |name: &'static str, src: &str, var: &str| {
            Expression::parse_auto(&self.expr_source(src), var).map_err(|source| ProblemError::Expr { name, source })
        };
        let red = crate::problem::reduce_annular(&p("w", &a.w, "r")?, &p("A", &a.a, "s")?, &p("k", &a.k, "r")?, a.r1, a.r2, a.n)?;
        let mut out = self.clone();
        out.annulus = None;
        out.homeo.phi = red.phi.to_string();
        out.homeo.psi1 = self.expr_source(&self.homeo.psi1);
        out.homeo.psi2 = self.expr_source(&self.homeo.psi2);
        out.coefficients = CoefficientSection {
            c: red.c.to_string(),
            d: red.d.to_string(),
        };
        out.weight = Some(WeightSection {
            h: red.h.to_string(),
            alpha: None,
            alpha_bar: None,
            beta_bar: None,
            beta: None,
            left_exponent: None,
            right_exponent: None,
        });
        out.nonlinearity.f = self.expr_source(&self.nonlinearity.f);
        out.params.clear();
        Ok(out)
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }
}
