use std::fmt;
use std::path::{Path, PathBuf};

use grsd_core::condition_diagnostics::Thresholds;
use grsd_core::residual_renorm::depth_threshold;
use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

pub const RECIPES: [(&str, &str); 6] = [
    ("power-law-recovery", "manufactured transport runs through the shell pipeline and power-law fit"),
    ("condition-suite", "four condition diagnostics on a residual, recurrent or banded trajectory"),
    ("residual-depth-sweep", "KS distance, mixing and coupling dilution across depths"),
    ("mixing-sweep", "mixing time of the direction chain across epsilon and eta"),
    ("gronwall-check", "incoherence envelope against the Gronwall bound on banded runs"),
    ("covariance-check", "time-rescaling covariance of gradient flow on a toy model"),
];

#[derive(Clone, Debug, PartialEq)]
pub struct FieldError {
    pub line: Option<usize>,
    pub field: String,
    pub message: String,
}

impl fmt::Display for FieldError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}: {}", self.field, self.message),
            None => write!(f, "{}: {}", self.field, self.message),
        }
    }
}

#[derive(Debug)]
pub enum ConfigError {
    Unreadable(String),
    Schema(Vec<FieldError>),
}

impl fmt::Display for ConfigError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            ConfigError::Unreadable(m) => write!(f, "{m}"),
            ConfigError::Schema(errs) => {
                for (i, e) in errs.iter().enumerate() {
                    if i > 0 {
                        writeln!(f)?;
                    }
                    write!(f, "{e}")?;
                }
                Ok(())
            }
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PowerLawParams {
    pub exponents: Vec<f64>,
    pub coefficients: Vec<f64>,
    pub s_min: f64,
    pub h: f64,
    pub n_bins: usize,
    /// Fit window in `s = ln λ`.
    pub window: [f64; 2],
    pub dt: f64,
    pub samples: usize,
}

impl Default for PowerLawParams {
    fn default() -> Self {
        Self {
            exponents: vec![-0.5, 0.7, 2.0],
            coefficients: vec![0.5, 3.0],
            s_min: -6.0,
            h: 0.1,
            n_bins: 120,
            window: [-3.0, 3.0],
            dt: 1e-5,
            samples: 5,
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Family {
    #[default]
    Residual,
    Ssm,
    Banded,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ResidualFamily {
    pub width: usize,
    pub depth: usize,
    pub epsilon: f64,
    pub n_f: usize,
    pub p: usize,
    pub drift: f64,
    pub times: Vec<f64>,
}

impl Default for ResidualFamily {
    fn default() -> Self {
        Self {
            width: 16,
            depth: 256,
            epsilon: 0.1,
            n_f: 64,
            p: 1,
            drift: 0.5,
            times: vec![0.0, 0.01, 0.02],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SsmFamily {
    pub rho: f64,
    pub horizon: usize,
    pub state_dim: usize,
    pub window: usize,
    pub drift_relative: f64,
    pub times: Vec<f64>,
}

impl Default for SsmFamily {
    fn default() -> Self {
        Self {
            rho: 0.9,
            horizon: 200,
            state_dim: 1,
            window: 1,
            drift_relative: -0.5,
            times: vec![0.0, 0.01, 0.02],
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BandedFamily {
    pub n_f: usize,
    pub block_dims: Vec<usize>,
    pub bandwidth: usize,
    pub c_a: f64,
    pub eps1: f64,
    pub ratio: f64,
    pub t_end: f64,
    pub n_samples: usize,
    pub steps_per_sample: usize,
}

impl Default for BandedFamily {
    fn default() -> Self {
        Self {
            n_f: 48,
            block_dims: vec![4; 8],
            bandwidth: 1,
            c_a: 0.5,
            eps1: 0.3,
            ratio: 0.5,
            t_end: 1.0,
            n_samples: 11,
            steps_per_sample: 20,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Operator {
    Rate,
    Gram,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteSettings {
    pub h: f64,
    pub edge_margin: usize,
    pub rho_w: f64,
    pub operator: Operator,
    pub renormalize: bool,
}

impl Default for SuiteSettings {
    fn default() -> Self {
        Self {
            h: 1.0,
            edge_margin: 2,
            rho_w: 0.5,
            operator: Operator::Rate,
            renormalize: true,
        }
    }
}

#[derive(Clone, Debug, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SuiteParams {
    pub family: Family,
    pub residual: ResidualFamily,
    pub ssm: SsmFamily,
    pub banded: BandedFamily,
    pub suite: SuiteSettings,
    pub thresholds: Thresholds,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DepthSweepParams {
    pub width: usize,
    pub epsilons: Vec<f64>,
    pub eta: f64,
    pub depths: Vec<usize>,
    pub members: usize,
    pub dilution_width: usize,
    pub dilution_h: f64,
    pub c1: f64,
    pub c2: f64,
}

impl Default for DepthSweepParams {
    fn default() -> Self {
        Self {
            width: 8,
            epsilons: vec![0.1],
            eta: 0.1,
            depths: vec![64, 256, 1024],
            members: 1000,
            dilution_width: 32,
            dilution_h: 0.5,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct MixingParams {
    pub width: usize,
    pub epsilons: Vec<f64>,
    pub etas: Vec<f64>,
    pub members: usize,
    pub budget: usize,
    pub c1: f64,
    pub c2: f64,
}

impl Default for MixingParams {
    fn default() -> Self {
        Self {
            width: 8,
            epsilons: vec![0.05, 0.1, 0.2],
            etas: vec![0.1, 0.05],
            members: 1000,
            budget: 20_000,
            c1: 1.0,
            c2: 1.0,
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GronwallParams {
    pub n_f: usize,
    pub block_dims: Vec<usize>,
    pub bandwidth: usize,
    pub c_a: f64,
    pub eps1: f64,
    pub ratio: f64,
    pub t_end: f64,
    pub n_samples: usize,
    pub steps_per_sample: usize,
    pub rho_w: f64,
    pub replicates: usize,
    pub tol: f64,
}

impl Default for GronwallParams {
    fn default() -> Self {
        let b = BandedFamily::default();
        Self {
            n_f: b.n_f,
            block_dims: b.block_dims,
            bandwidth: b.bandwidth,
            c_a: b.c_a,
            eps1: b.eps1,
            ratio: b.ratio,
            t_end: b.t_end,
            n_samples: b.n_samples,
            steps_per_sample: b.steps_per_sample,
            rho_w: 0.5,
            replicates: 20,
            tol: 1e-8,
        }
    }
}

impl GronwallParams {
    pub fn banded(&self) -> BandedFamily {
        BandedFamily {
            n_f: self.n_f,
            block_dims: self.block_dims.clone(),
            bandwidth: self.bandwidth,
            c_a: self.c_a,
            eps1: self.eps1,
            ratio: self.ratio,
            t_end: self.t_end,
            n_samples: self.n_samples,
            steps_per_sample: self.steps_per_sample,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum ModelKind {
    LinearRegression,
    TwoLayerLinear,
    ShallowTanh,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Method {
    Euler,
    Rk4,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CovarianceParams {
    pub model: ModelKind,
    pub hidden: usize,
    pub n_samples: usize,
    pub d_in: usize,
    pub d_out: usize,
    pub alphas: Vec<f64>,
    pub t_end: f64,
    pub h: f64,
    pub method: Method,
    pub tol: f64,
}

impl Default for CovarianceParams {
    fn default() -> Self {
        Self {
            model: ModelKind::ShallowTanh,
            hidden: 16,
            n_samples: 16,
            d_in: 3,
            d_out: 2,
            alphas: vec![0.5, 2.0, 3.0],
            t_end: 1.0,
            h: 1e-3,
            method: Method::Rk4,
            tol: 1e-5,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
#[serde(untagged)]
pub enum Params {
    PowerLaw(PowerLawParams),
    ConditionSuite(SuiteParams),
    DepthSweep(DepthSweepParams),
    Mixing(MixingParams),
    Gronwall(GronwallParams),
    Covariance(CovarianceParams),
}

/// A fully resolved experiment.
#[derive(Clone, Debug, Serialize)]
pub struct Recipe {
    pub recipe: String,
    pub seed: u64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub out_dir: Option<PathBuf>,
    pub params: Params,
}

impl Recipe {
    /// The resolved recipe as TOML, every default written out.
    pub fn to_toml(&self) -> String {
        let mut table = toml::Table::new();
        table.insert("recipe".into(), toml::Value::String(self.recipe.clone()));
        table.insert("seed".into(), toml::Value::Integer(self.seed as i64));
        if let Some(d) = &self.out_dir {
            table.insert("out_dir".into(), toml::Value::String(d.display().to_string()));
        }
        let params = toml::Value::try_from(&self.params).expect("params serialize");
        table.insert("params".into(), params);
        toml::to_string(&table).expect("table serializes")
    }
}

#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct Envelope<P> {
    #[allow(dead_code)]
    recipe: String,
    seed: Option<u64>,
    out_dir: Option<PathBuf>,
    #[serde(default)]
    params: Option<P>,
}

fn line_of_offset(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

fn toml_error(text: &str, e: &toml::de::Error) -> FieldError {
    let line = e.span().map(|s| line_of_offset(text, s.start));
    let field = e
        .message()
        .split('`')
        .nth(1)
        .filter(|_| e.message().starts_with("unknown field"))
        .unwrap_or("config")
        .to_string();
    FieldError {
        line,
        field,
        message: e.message().trim().to_string(),
    }
}

/// Line of `key = …`, preferring occurrences after the `[params]` header.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    let mut fallback = None;
    let mut in_params = false;
    for (i, raw) in text.lines().enumerate() {
        let l = raw.trim();
        if l.starts_with('[') {
            in_params = l.starts_with("[params");
            continue;
        }
        let Some((k, _)) = l.split_once('=') else { continue };
        if k.trim().trim_matches('"') == key {
            if in_params {
                return Some(i + 1);
            }
            fallback.get_or_insert(i + 1);
        }
    }
    fallback
}

struct Checker<'a> {
    text: &'a str,
    errors: Vec<FieldError>,
}

impl Checker<'_> {
    fn fail(&mut self, field: &str, message: impl Into<String>) {
        let key = field.rsplit('.').next().unwrap_or(field);
        self.errors.push(FieldError {
            line: line_of_key(self.text, key),
            field: field.to_string(),
            message: message.into(),
        });
    }

    fn require(&mut self, ok: bool, field: &str, message: &str) {
        if !ok {
            self.fail(field, message);
        }
    }

    fn positive(&mut self, v: f64, field: &str) {
        self.require(v > 0.0 && v.is_finite(), field, "must be positive and finite");
    }

    fn at_least(&mut self, v: usize, min: usize, field: &str) {
        self.require(v >= min, field, &format!("must be at least {min}"));
    }

    fn non_empty<T>(&mut self, v: &[T], field: &str) {
        self.require(!v.is_empty(), field, "must not be empty");
    }

    fn fraction(&mut self, v: f64, field: &str) {
        self.require(v > 0.0 && v < 1.0, field, "must lie strictly between 0 and 1");
    }

    fn eta(&mut self, eta: f64, field: &str, epsilons: &[f64], c1: f64, c2: f64) {
        let eps = epsilons.iter().copied().find(|e| *e > 0.0).unwrap_or(1.0);
        if let Err(e) = depth_threshold(eps, eta, c1.max(f64::MIN_POSITIVE), c2.max(f64::MIN_POSITIVE)) {
            self.fail(field, e.to_string());
        }
    }

    fn increasing(&mut self, v: &[f64], field: &str) {
        self.require(v.windows(2).all(|w| w[1] > w[0]), field, "must be strictly increasing");
    }
}

fn check_banded(c: &mut Checker, b: &BandedFamily, prefix: &str) {
    c.at_least(b.n_f, 1, &format!("{prefix}n_f"));
    c.at_least(b.block_dims.len(), 1, &format!("{prefix}block_dims"));
    c.require(!b.block_dims.contains(&0), &format!("{prefix}block_dims"), "dimensions must be positive");
    c.require(b.c_a >= 0.0 && b.c_a.is_finite(), &format!("{prefix}c_a"), "must be non-negative");
    c.require(b.eps1 >= 0.0 && b.eps1.is_finite(), &format!("{prefix}eps1"), "must be non-negative");
    c.require(b.ratio >= 0.0 && b.ratio < 1.0, &format!("{prefix}ratio"), "must lie in [0, 1)");
    c.positive(b.t_end, &format!("{prefix}t_end"));
    c.at_least(b.n_samples, 3, &format!("{prefix}n_samples"));
    c.at_least(b.steps_per_sample, 1, &format!("{prefix}steps_per_sample"));
}

fn check(text: &str, params: &Params) -> Vec<FieldError> {
    let mut c = Checker {
        text,
        errors: Vec::new(),
    };
    match params {
        Params::PowerLaw(p) => {
            c.non_empty(&p.exponents, "params.exponents");
            c.non_empty(&p.coefficients, "params.coefficients");
            c.require(
                p.coefficients.iter().all(|x| *x != 0.0 && x.is_finite()),
                "params.coefficients",
                "must be non-zero and finite",
            );
            c.positive(p.h, "params.h");
            c.at_least(p.n_bins, 3, "params.n_bins");
            c.positive(p.dt, "params.dt");
            c.at_least(p.samples, 3, "params.samples");
            let hi = p.s_min + p.h * p.n_bins as f64;
            c.require(
                p.window[0] < p.window[1] && p.window[0] >= p.s_min && p.window[1] <= hi,
                "params.window",
                &format!("must be an increasing pair inside [{}, {hi}]", p.s_min),
            );
        }
        Params::ConditionSuite(p) => {
            match p.family {
                Family::Residual => {
                    let r = &p.residual;
                    c.at_least(r.width, 1, "params.residual.width");
                    c.at_least(r.depth, 1, "params.residual.depth");
                    c.at_least(r.n_f, 1, "params.residual.n_f");
                    c.at_least(r.p, 1, "params.residual.p");
                    c.require(r.epsilon >= 0.0 && r.epsilon.is_finite(), "params.residual.epsilon", "must be non-negative");
                    c.at_least(r.times.len(), 3, "params.residual.times");
                    c.increasing(&r.times, "params.residual.times");
                }
                Family::Ssm => {
                    let s = &p.ssm;
                    c.fraction(s.rho, "params.ssm.rho");
                    c.at_least(s.horizon, 2, "params.ssm.horizon");
                    c.at_least(s.state_dim, 1, "params.ssm.state_dim");
                    c.require(
                        s.window >= 1 && s.horizon % s.window.max(1) == 0,
                        "params.ssm.window",
                        "must divide the horizon",
                    );
                    c.at_least(s.times.len(), 3, "params.ssm.times");
                    c.increasing(&s.times, "params.ssm.times");
                }
                Family::Banded => check_banded(&mut c, &p.banded, "params.banded."),
            }
            c.positive(p.suite.h, "params.suite.h");
            c.fraction(p.suite.rho_w, "params.suite.rho_w");
            let t = &p.thresholds;
            c.fraction(t.range_delta, "params.thresholds.range_delta");
            c.require(
                t.range_fraction > 0.0 && t.range_fraction <= 1.0,
                "params.thresholds.range_fraction",
                "must lie in (0, 1]",
            );
            for (v, name) in [
                (t.span_tol, "span_tol"),
                (t.incoherence_max, "incoherence_max"),
                (t.gronwall_tol, "gronwall_tol"),
                (t.path_max, "path_max"),
                (t.stationarity_max, "stationarity_max"),
            ] {
                c.positive(v, &format!("params.thresholds.{name}"));
            }
        }
        Params::DepthSweep(p) => {
            c.at_least(p.width, 1, "params.width");
            c.non_empty(&p.epsilons, "params.epsilons");
            c.require(p.epsilons.iter().all(|e| *e > 0.0 && e.is_finite()), "params.epsilons", "must be positive");
            c.eta(p.eta, "params.eta", &p.epsilons, p.c1, p.c2);
            c.non_empty(&p.depths, "params.depths");
            c.require(
                p.depths.windows(2).all(|w| w[1] > w[0]) && p.depths.first().is_some_and(|d| *d > 0),
                "params.depths",
                "must be positive and strictly increasing",
            );
            c.at_least(p.members, grsd_core::residual_renorm::MIN_ENSEMBLE, "params.members");
            c.at_least(p.dilution_width, 2, "params.dilution_width");
            c.positive(p.dilution_h, "params.dilution_h");
            c.positive(p.c1, "params.c1");
            c.positive(p.c2, "params.c2");
        }
        Params::Mixing(p) => {
            c.at_least(p.width, 1, "params.width");
            c.non_empty(&p.epsilons, "params.epsilons");
            c.require(p.epsilons.iter().all(|e| *e > 0.0 && e.is_finite()), "params.epsilons", "must be positive");
            c.non_empty(&p.etas, "params.etas");
            for &eta in &p.etas {
                c.eta(eta, "params.etas", &p.epsilons, p.c1, p.c2);
            }
            c.at_least(p.members, 1, "params.members");
            c.positive(p.c1, "params.c1");
            c.positive(p.c2, "params.c2");
        }
        Params::Gronwall(p) => {
            check_banded(&mut c, &p.banded(), "params.");
            c.fraction(p.rho_w, "params.rho_w");
            c.at_least(p.replicates, 1, "params.replicates");
            c.require(p.tol >= 0.0, "params.tol", "must be non-negative");
        }
        Params::Covariance(p) => {
            if p.model != ModelKind::LinearRegression {
                c.at_least(p.hidden, 1, "params.hidden");
            }
            c.at_least(p.n_samples, 1, "params.n_samples");
            c.at_least(p.d_in, 1, "params.d_in");
            c.at_least(p.d_out, 1, "params.d_out");
            c.non_empty(&p.alphas, "params.alphas");
            c.require(p.alphas.iter().all(|a| *a > 0.0 && a.is_finite()), "params.alphas", "must be positive");
            c.positive(p.t_end, "params.t_end");
            c.positive(p.h, "params.h");
            c.require(p.h <= p.t_end, "params.h", "must not exceed t_end");
            c.require(p.tol >= 0.0, "params.tol", "must be non-negative");
        }
    }
    c.errors.sort_by_key(|e| e.line);
    c.errors
}

fn typed<P: DeserializeOwned + Default>(text: &str) -> Result<(Option<u64>, Option<PathBuf>, P), FieldError> {
    let env: Envelope<P> = toml::from_str(text).map_err(|e| toml_error(text, &e))?;
    Ok((env.seed, env.out_dir, env.params.unwrap_or_default()))
}

/// Parses and validates a recipe, resolving every default.
pub fn parse_recipe(text: &str) -> Result<Recipe, ConfigError> {
    let table: toml::Table = toml::from_str(text).map_err(|e| ConfigError::Schema(vec![toml_error(text, &e)]))?;
    let name = match table.get("recipe") {
        Some(toml::Value::String(s)) => s.clone(),
        Some(_) => {
            return Err(ConfigError::Schema(vec![FieldError {
                line: line_of_key(text, "recipe"),
                field: "recipe".into(),
                message: "must be a string".into(),
            }]))
        }
        None => {
            return Err(ConfigError::Schema(vec![FieldError {
                line: None,
                field: "recipe".into(),
                message: "missing; run `grsd list-recipes` for the choices".into(),
            }]))
        }
    };
    let parsed = match name.as_str() {
        "power-law-recovery" => typed(text).map(|(s, o, p)| (s, o, Params::PowerLaw(p))),
        "condition-suite" => typed(text).map(|(s, o, p)| (s, o, Params::ConditionSuite(p))),
        "residual-depth-sweep" => typed(text).map(|(s, o, p)| (s, o, Params::DepthSweep(p))),
        "mixing-sweep" => typed(text).map(|(s, o, p)| (s, o, Params::Mixing(p))),
        "gronwall-check" => typed(text).map(|(s, o, p)| (s, o, Params::Gronwall(p))),
        "covariance-check" => typed(text).map(|(s, o, p)| (s, o, Params::Covariance(p))),
        other => Err(FieldError {
            line: line_of_key(text, "recipe"),
            field: "recipe".into(),
            message: format!(
                "unknown recipe `{other}`, expected one of {}",
                RECIPES.iter().map(|r| r.0).collect::<Vec<_>>().join(", ")
            ),
        }),
    };
    let (seed, out_dir, params) = parsed.map_err(|e| ConfigError::Schema(vec![e]))?;
    let errors = check(text, &params);
    if !errors.is_empty() {
        return Err(ConfigError::Schema(errors));
    }
    Ok(Recipe {
        recipe: name,
        seed: seed.unwrap_or(0),
        out_dir,
        params,
    })
}

pub fn load_recipe(path: &Path) -> Result<Recipe, ConfigError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ConfigError::Unreadable(format!("cannot read {}: {e}", path.display())))?;
    parse_recipe(&text)
}
