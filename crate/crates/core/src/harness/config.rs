//! Experiment configuration files.
//!
//! The format is line oriented:
//!
//! ```text
//! # comment
//! [experiment]
//! kind = leveling
//! seed = 7
//!
//! [cone]
//! preset = orthant
//! k = 2
//!
//! [model]
//! drift = constant
//! drift_vector = [-0.70710678118654752, -0.70710678118654752]
//! epsilon = [0.4, 0.2, 0.1]
//!
//! [leveling]
//! x = [0.4, 0.1]
//! y = [0.1, 0.4]
//! ```
//!
//! Values are numbers, booleans, bare or double-quoted strings, bracketed
//! vectors or bracketed lists of vectors. `#` starts a comment anywhere
//! outside a quoted string. Only the section named by `kind` may appear
//! besides `[experiment]`, `[cone]`, `[model]` and `[domain]`.

use std::collections::BTreeMap;

use serde::Serialize;

use crate::density::{KilledSetup, MinorizationSetup};
use crate::error::{ConfigError, Error, Result};
use crate::geometry::{validate_cone, PolyhedralCone};
use crate::leveling::GapSetup;
use crate::simulate::{DiffusionModel, Dispersion, Domain, Drift, ModelBounds};

pub const DEFAULT_DT: f64 = 1e-3;
pub const DEFAULT_REPLICAS: u64 = 10_000;
pub const DEFAULT_EPSILONS: [f64; 3] = [0.4, 0.2, 0.1];

#[derive(Debug, Clone, PartialEq)]
enum Value {
    Number(f64),
    Bool(bool),
    Text(String),
    Vector(Vec<f64>),
    Matrix(Vec<Vec<f64>>),
}

impl Value {
    fn describe(&self) -> &'static str {
        match self {
            Value::Number(_) => "a number",
            Value::Bool(_) => "a boolean",
            Value::Text(_) => "a string",
            Value::Vector(_) => "a vector",
            Value::Matrix(_) => "a list of vectors",
        }
    }
}

fn parse_number(s: &str) -> Option<f64> {
    let s = s.trim();
    if s.is_empty() {
        return None;
    }
    s.parse::<f64>().ok().filter(|v| v.is_finite())
}

fn parse_vector(inner: &str) -> std::result::Result<Vec<f64>, String> {
    if inner.trim().is_empty() {
        return Ok(Vec::new());
    }
    inner
        .split(',')
        .map(|item| parse_number(item).ok_or_else(|| format!("'{}' is not a finite number", item.trim())))
        .collect()
}

fn parse_value(raw: &str) -> std::result::Result<Value, String> {
    let raw = raw.trim();
    if raw.is_empty() {
        return Err("missing value".into());
    }
    if let Some(body) = raw.strip_prefix('[') {
        let body = body.strip_suffix(']').ok_or("unterminated '['")?.trim();
        if body.starts_with('[') {
            let mut rows = Vec::new();
            let mut rest = body;
            loop {
                let open = rest.strip_prefix('[').ok_or("expected '[' starting a row")?;
                let close = open.find(']').ok_or("unterminated row")?;
                if open[..close].contains('[') {
                    return Err("nesting deeper than a list of vectors".into());
                }
                rows.push(parse_vector(&open[..close])?);
                rest = open[close + 1..].trim_start();
                if rest.is_empty() {
                    break;
                }
                rest = rest.strip_prefix(',').ok_or("expected ',' between rows")?.trim_start();
            }
            return Ok(Value::Matrix(rows));
        }
        if body.contains('[') || body.contains(']') {
            return Err("unbalanced brackets".into());
        }
        return parse_vector(body).map(Value::Vector);
    }
    if let Some(body) = raw.strip_prefix('"') {
        let body = body.strip_suffix('"').ok_or("unterminated string")?;
        return Ok(Value::Text(body.to_string()));
    }
    match raw {
        "true" => return Ok(Value::Bool(true)),
        "false" => return Ok(Value::Bool(false)),
        _ => {}
    }
    if let Some(v) = parse_number(raw) {
        return Ok(Value::Number(v));
    }
    if raw.chars().next().is_some_and(|c| c.is_ascii_digit() || c == '-' || c == '+' || c == '.') {
        return Err(format!("'{raw}' is not a finite number"));
    }
    if raw.chars().any(char::is_whitespace) {
        return Err(format!("bare string '{raw}' contains whitespace; quote it"));
    }
    Ok(Value::Text(raw.to_string()))
}

fn strip_comment(line: &str) -> &str {
    let mut quoted = false;
    for (i, c) in line.char_indices() {
        match c {
            '"' => quoted = !quoted,
            '#' if !quoted => return &line[..i],
            _ => {}
        }
    }
    line
}

#[derive(Debug)]
struct Entry {
    value: Value,
    line: usize,
    used: bool,
}

#[derive(Debug)]
struct Section {
    line: usize,
    entries: BTreeMap<String, Entry>,
}

fn lex(text: &str, errors: &mut Vec<ConfigError>) -> BTreeMap<String, Section> {
    let mut sections: BTreeMap<String, Section> = BTreeMap::new();
    let mut current: Option<String> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let body = strip_comment(raw).trim();
        if body.is_empty() {
            continue;
        }
        if let Some(name) = body.strip_prefix('[').and_then(|b| b.strip_suffix(']')) {
            let name = name.trim();
            if name.is_empty() || !name.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
                errors.push(ConfigError::parse(line, format!("bad section header '{body}'")));
                current = None;
                continue;
            }
            if sections.contains_key(name) {
                errors.push(ConfigError::parse(line, format!("section [{name}] appears twice")));
            } else {
                sections.insert(
                    name.to_string(),
                    Section {
                        line,
                        entries: BTreeMap::new(),
                    },
                );
            }
            current = Some(name.to_string());
            continue;
        }
        let Some((key, value)) = body.split_once('=') else {
            errors.push(ConfigError::parse(line, format!("expected 'key = value', found '{body}'")));
            continue;
        };
        let key = key.trim();
        let Some(section) = current.as_ref() else {
            errors.push(ConfigError::parse(line, format!("key '{key}' appears before any section")));
            continue;
        };
        if key.is_empty() || !key.chars().all(|c| c.is_ascii_alphanumeric() || c == '_') {
            errors.push(ConfigError::parse(line, format!("bad key '{key}'")));
            continue;
        }
        let value = match parse_value(value) {
            Ok(v) => v,
            Err(msg) => {
                errors.push(ConfigError::parse(line, format!("{key}: {msg}")));
                continue;
            }
        };
        let entries = &mut sections.get_mut(section).expect("section registered").entries;
        if entries.contains_key(key) {
            errors.push(ConfigError::parse(line, format!("key '{key}' repeated in [{section}]")));
            continue;
        }
        entries.insert(key.to_string(), Entry { value, line, used: false });
    }
    sections
}

/// Typed access to one section; records which keys were consumed.
struct Fields<'a> {
    name: &'a str,
    section: Option<&'a mut Section>,
    errors: &'a mut Vec<ConfigError>,
}

impl<'a> Fields<'a> {
    fn line(&self) -> Option<usize> {
        self.section.as_ref().map(|s| s.line)
    }

    fn take(&mut self, key: &str) -> Option<(Value, usize)> {
        let entry = self.section.as_mut()?.entries.get_mut(key)?;
        entry.used = true;
        Some((entry.value.clone(), entry.line))
    }

    fn line_of(&self, key: &str) -> Option<usize> {
        self.section.as_ref()?.entries.get(key).map(|e| e.line)
    }

    fn wrong_type(&mut self, key: &str, line: usize, want: &str, got: &Value) {
        self.errors.push(ConfigError::parse(
            line,
            format!("{}.{key} must be {want}, found {}", self.name, got.describe()),
        ));
    }

    fn missing(&mut self, key: &str) {
        self.errors.push(ConfigError::validate(
            self.line(),
            format!("missing required key '{key}' in [{}]", self.name),
        ));
    }

    fn number(&mut self, key: &str) -> Option<f64> {
        match self.take(key)? {
            (Value::Number(v), _) => Some(v),
            (other, line) => {
                self.wrong_type(key, line, "a number", &other);
                None
            }
        }
    }

    fn number_or(&mut self, key: &str, default: f64) -> f64 {
        self.number(key).unwrap_or(default)
    }

    fn required_number(&mut self, key: &str) -> f64 {
        if self.line_of(key).is_none() {
            self.missing(key);
            return f64::NAN;
        }
        self.number(key).unwrap_or(f64::NAN)
    }

    fn count(&mut self, key: &str) -> Option<u64> {
        let (value, line) = self.take(key)?;
        match value {
            Value::Number(v) if v >= 0.0 && v.fract() == 0.0 && v <= u64::MAX as f64 => Some(v as u64),
            other => {
                self.wrong_type(key, line, "a nonnegative integer", &other);
                None
            }
        }
    }

    fn count_or(&mut self, key: &str, default: u64) -> u64 {
        self.count(key).unwrap_or(default)
    }

    fn boolean_or(&mut self, key: &str, default: bool) -> bool {
        match self.take(key) {
            None => default,
            Some((Value::Bool(b), _)) => b,
            Some((other, line)) => {
                self.wrong_type(key, line, "true or false", &other);
                default
            }
        }
    }

    fn text(&mut self, key: &str) -> Option<String> {
        match self.take(key)? {
            (Value::Text(s), _) => Some(s),
            (other, line) => {
                self.wrong_type(key, line, "a string", &other);
                None
            }
        }
    }

    fn vector(&mut self, key: &str) -> Option<Vec<f64>> {
        match self.take(key)? {
            (Value::Vector(v), _) => Some(v),
            (other, line) => {
                self.wrong_type(key, line, "a vector", &other);
                None
            }
        }
    }

    fn required_vector(&mut self, key: &str) -> Vec<f64> {
        if self.line_of(key).is_none() {
            self.missing(key);
        }
        self.vector(key).unwrap_or_default()
    }

    /// A number or a vector of numbers.
    fn grid(&mut self, key: &str) -> Option<Vec<f64>> {
        match self.take(key)? {
            (Value::Number(v), _) => Some(vec![v]),
            (Value::Vector(v), _) => Some(v),
            (other, line) => {
                self.wrong_type(key, line, "a number or a vector", &other);
                None
            }
        }
    }

    fn matrix(&mut self, key: &str) -> Option<Vec<Vec<f64>>> {
        match self.take(key)? {
            (Value::Matrix(m), _) => Some(m),
            (Value::Vector(v), _) if v.is_empty() => Some(Vec::new()),
            (other, line) => {
                self.wrong_type(key, line, "a list of vectors", &other);
                None
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum ExperimentKind {
    Validate,
    SpSolve,
    Simulate,
    Flow,
    Minorization,
    KilledFloor,
    Leveling,
    PsiGap,
    ScalingCheck,
}

impl ExperimentKind {
    pub const ALL: [ExperimentKind; 9] = [
        ExperimentKind::Validate,
        ExperimentKind::SpSolve,
        ExperimentKind::Simulate,
        ExperimentKind::Flow,
        ExperimentKind::Minorization,
        ExperimentKind::KilledFloor,
        ExperimentKind::Leveling,
        ExperimentKind::PsiGap,
        ExperimentKind::ScalingCheck,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ExperimentKind::Validate => "validate",
            ExperimentKind::SpSolve => "sp_solve",
            ExperimentKind::Simulate => "simulate",
            ExperimentKind::Flow => "flow",
            ExperimentKind::Minorization => "minorization",
            ExperimentKind::KilledFloor => "killed_floor",
            ExperimentKind::Leveling => "leveling",
            ExperimentKind::PsiGap => "psi_gap",
            ExperimentKind::ScalingCheck => "scaling_check",
        }
    }

    fn from_name(name: &str) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.name() == name)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "preset", rename_all = "snake_case")]
pub enum ConeSpec {
    Orthant { k: usize },
    General { normals: Vec<Vec<f64>>, directions: Vec<Vec<f64>> },
}

impl ConeSpec {
    pub fn build(&self) -> Result<PolyhedralCone> {
        match self {
            ConeSpec::Orthant { k } => Ok(PolyhedralCone::orthant(*k)),
            ConeSpec::General { normals, directions } => PolyhedralCone::new(normals.clone(), directions.clone()),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            ConeSpec::Orthant { k } => *k,
            ConeSpec::General { normals, .. } => normals.first().map_or(0, Vec::len),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DriftSpec {
    Zero,
    Constant { vector: Vec<f64> },
    Saturating { base: Vec<f64>, gain: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum DispersionSpec {
    Identity,
    Constant { matrix: Vec<Vec<f64>> },
    Modulated { matrix: Vec<Vec<f64>>, amplitude: f64 },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ModelSpec {
    pub drift: DriftSpec,
    pub dispersion: DispersionSpec,
    pub epsilons: Vec<f64>,
    /// Declared `(gamma1, gamma2, sigma_lower)`; analytic bounds otherwise.
    pub bounds: Option<ModelBounds>,
}

impl ModelSpec {
    /// The model at noise level `epsilon`.
    pub fn build(&self, dim: usize, epsilon: f64) -> Result<DiffusionModel> {
        let drift = match &self.drift {
            DriftSpec::Zero => Drift::Zero,
            DriftSpec::Constant { vector } => Drift::Constant(vector.clone()),
            DriftSpec::Saturating { base, gain } => Drift::Saturating {
                base: base.clone(),
                gain: *gain,
            },
        };
        let flat = |m: &Vec<Vec<f64>>| -> Vec<f64> { m.iter().flatten().copied().collect() };
        let dispersion = match &self.dispersion {
            DispersionSpec::Identity => Dispersion::Identity,
            DispersionSpec::Constant { matrix } => Dispersion::Constant(flat(matrix)),
            DispersionSpec::Modulated { matrix, amplitude } => Dispersion::Modulated {
                matrix: flat(matrix),
                amplitude: *amplitude,
            },
        };
        if let DispersionSpec::Constant { matrix } | DispersionSpec::Modulated { matrix, .. } = &self.dispersion {
            if matrix.len() != dim || matrix.iter().any(|r| r.len() != dim) {
                return Err(Error::ModelRejected(format!("dispersion matrix must be {dim} x {dim}")));
            }
        }
        match self.bounds {
            Some(b) => DiffusionModel::new(dim, drift, dispersion, epsilon, b),
            None => DiffusionModel::with_default_bounds(dim, drift, dispersion, epsilon),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "source", rename_all = "snake_case")]
pub enum PathSource {
    /// CSV file, relative paths resolved against the config file's directory.
    File { path: String },
    Inline { times: Vec<f64>, values: Vec<Vec<f64>> },
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SpSolveParams {
    pub path: PathSource,
    pub refine: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SimulateParams {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    /// Paths per epsilon.
    pub paths: u64,
    pub save_increments: bool,
    /// Off: only terminal states are kept, one `terminals.csv` row per path.
    pub write_paths: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FlowParams {
    pub x0: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
    /// With a `[domain]`, the start is classified against `B_gamma`.
    pub domain: Option<Domain>,
    pub gamma: f64,
}

/// Bounded exit-point functionals selectable from a config.
#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Functional {
    /// `1{z_1 > z_2}`.
    FirstExceedsSecond,
    /// `z_index` (zero based).
    Coordinate { index: usize },
    Constant { value: f64 },
}

impl Functional {
    pub fn eval(&self, z: &[f64]) -> f64 {
        match self {
            Functional::FirstExceedsSecond => {
                if z[0] > z[1] {
                    1.0
                } else {
                    0.0
                }
            }
            Functional::Coordinate { index } => z[*index],
            Functional::Constant { value } => *value,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LevelingParams {
    pub setup: GapSetup,
    pub domain: Domain,
    pub functional: Functional,
    pub functional_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PsiGapParams {
    pub setup: GapSetup,
    pub domain: Domain,
    /// `psi(t) = (1 + log+ t)^power`.
    pub power: f64,
    pub q: f64,
    pub m: f64,
    pub probe_horizon: f64,
    pub declared_bound: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingParams {
    pub x_bar: Vec<f64>,
    pub horizon: f64,
    pub dts: Vec<f64>,
    /// Paths per `(epsilon, dt)`.
    pub paths: u64,
    /// PASS when every sup gap is at most `factor * sqrt(dt)`.
    pub factor: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum KindParams {
    Validate,
    SpSolve(SpSolveParams),
    Simulate(SimulateParams),
    Flow(FlowParams),
    Minorization(MinorizationSetup),
    KilledFloor(KilledSetup),
    Leveling(LevelingParams),
    PsiGap(PsiGapParams),
    ScalingCheck(ScalingParams),
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ExperimentConfig {
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output: Option<String>,
    pub cone: ConeSpec,
    pub model: ModelSpec,
    pub params: KindParams,
}

impl ExperimentConfig {
    pub fn to_json(&self) -> serde_json::Value {
        serde_json::to_value(self).expect("config serializes")
    }
}

/// Parses and validates a config. `seed_override` replaces (or supplies)
/// the `[experiment]` seed.
pub fn parse_config_with(text: &str, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut errors = Vec::new();
    let mut sections = lex(text, &mut errors);
    let config = build(&mut sections, seed_override, &mut errors);
    // Report parse errors before semantic ones, in line order.
    errors.sort_by_key(|e| (e.kind != crate::error::ConfigErrorKind::Parse, e.line.unwrap_or(0)));
    match config {
        Some(c) if errors.is_empty() => Ok(c),
        _ => {
            if errors.is_empty() {
                errors.push(ConfigError::validate(None, "config incomplete"));
            }
            Err(Error::Config(errors))
        }
    }
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    parse_config_with(text, None)
}

fn fields<'a>(
    sections: &'a mut BTreeMap<String, Section>,
    name: &'a str,
    errors: &'a mut Vec<ConfigError>,
) -> Fields<'a> {
    Fields {
        name,
        section: sections.get_mut(name),
        errors,
    }
}

fn build(
    sections: &mut BTreeMap<String, Section>,
    seed_override: Option<u64>,
    errors: &mut Vec<ConfigError>,
) -> Option<ExperimentConfig> {
    if !sections.contains_key("experiment") {
        errors.push(ConfigError::validate(None, "missing [experiment] section"));
        return None;
    }
    let mut exp = fields(sections, "experiment", errors);
    let kind_name = exp.text("kind");
    let seed = exp.count("seed");
    let output = exp.text("output");
    let exp_line = exp.line();
    report_unused(&mut exp);
    let kind = match kind_name.as_deref() {
        None => {
            errors.push(ConfigError::validate(exp_line, "missing required key 'kind' in [experiment]"));
            return None;
        }
        Some(name) => match ExperimentKind::from_name(name) {
            Some(k) => k,
            None => {
                let names: Vec<&str> = ExperimentKind::ALL.iter().map(|k| k.name()).collect();
                errors.push(ConfigError::parse(
                    exp_line.unwrap_or(0),
                    format!("unknown experiment kind '{name}' (expected one of {})", names.join(", ")),
                ));
                return None;
            }
        },
    };
    let seed = match seed_override.or(seed) {
        Some(s) => s,
        None => {
            errors.push(ConfigError::validate(
                exp_line,
                "missing required key 'seed' in [experiment]; runs are always seeded",
            ));
            0
        }
    };

    let allowed = ["experiment", "cone", "model", "domain", kind.name()];
    for (name, section) in sections.iter() {
        if !allowed.contains(&name.as_str()) {
            errors.push(ConfigError::parse(
                section.line,
                format!("unknown section [{name}] for kind '{}'", kind.name()),
            ));
        }
    }

    let cone_spec = parse_cone(&mut fields(sections, "cone", errors))?;
    let dim = cone_spec.dim();
    let cone = match cone_spec.build() {
        Ok(c) => Some(c),
        Err(e) => {
            errors.push(ConfigError::validate(sections.get("cone").map(|s| s.line), e.to_string()));
            None
        }
    };
    if kind != ExperimentKind::Validate {
        if let Some(cone) = &cone {
            if let Err(e) = validate_cone(cone) {
                errors.push(ConfigError::validate(sections.get("cone").map(|s| s.line), e.to_string()));
            }
        }
    }
    let model_line = sections.get("model").map(|s| s.line);
    let model = parse_model(&mut fields(sections, "model", errors), dim);
    if let Err(e) = model.build(dim, model.epsilons[0]) {
        errors.push(ConfigError::validate(model_line, e.to_string()));
    }

    let kind_line = sections.get(kind.name()).map(|s| s.line);
    let domain = parse_domain(&mut fields(sections, "domain", errors), kind);
    let mut f = fields(sections, kind.name(), errors);
    let params = parse_params(&mut f, kind, dim, &model, domain);
    report_unused(&mut f);
    let params = params?;

    if let Some(cone) = &cone {
        if let Err(e) = check_params(&params, cone, &model) {
            errors.push(ConfigError::validate(kind_line, e.to_string()));
        }
    }
    Some(ExperimentConfig {
        kind,
        seed,
        output,
        cone: cone_spec,
        model,
        params,
    })
}

fn parse_cone(f: &mut Fields<'_>) -> Option<ConeSpec> {
    if f.section.is_none() {
        f.errors.push(ConfigError::validate(None, "missing [cone] section"));
        return None;
    }
    let preset = f.text("preset").unwrap_or_else(|| "general".into());
    let k = f.count("k");
    let spec = match preset.as_str() {
        "orthant" => match k {
            Some(k) if k >= 1 => Some(ConeSpec::Orthant { k: k as usize }),
            _ => {
                let line = f.line();
                f.errors.push(ConfigError::validate(line, "orthant cone needs k >= 1"));
                None
            }
        },
        "general" => {
            let normals = f.matrix("normals");
            let directions = f.matrix("directions");
            let n = f.count("n");
            match (normals, directions) {
                (Some(normals), Some(directions)) => {
                    let line = f.line();
                    if let Some(k) = k {
                        if normals.iter().chain(&directions).any(|r| r.len() as u64 != k) {
                            f.errors.push(ConfigError::validate(line, format!("cone vectors must have length k = {k}")));
                        }
                    }
                    if let Some(n) = n {
                        if normals.len() as u64 != n || directions.len() as u64 != n {
                            f.errors.push(ConfigError::validate(line, format!("cone needs N = {n} normals and directions")));
                        }
                    }
                    Some(ConeSpec::General { normals, directions })
                }
                _ => {
                    let line = f.line();
                    f.errors
                        .push(ConfigError::validate(line, "general cone needs 'normals' and 'directions'"));
                    None
                }
            }
        }
        other => {
            let line = f.line_of("preset").unwrap_or(0);
            f.errors.push(ConfigError::parse(line, format!("unknown cone preset '{other}'")));
            None
        }
    };
    report_unused(f);
    spec
}

/// Reports every key that no reader consumed.
fn report_unused(f: &mut Fields<'_>) {
    let remaining: Vec<(String, usize)> = f
        .section
        .as_ref()
        .map(|s| s.entries.iter().filter(|(_, e)| !e.used).map(|(k, e)| (k.clone(), e.line)).collect())
        .unwrap_or_default();
    for (key, line) in remaining {
        f.errors.push(ConfigError::parse(line, format!("unknown key '{key}' in [{}]", f.name)));
    }
}

fn parse_model(f: &mut Fields<'_>, dim: usize) -> ModelSpec {
    let line = f.line();
    let drift = match f.text("drift").as_deref().unwrap_or("zero") {
        "zero" => DriftSpec::Zero,
        "constant" => DriftSpec::Constant {
            vector: f.required_vector("drift_vector"),
        },
        "saturating" => DriftSpec::Saturating {
            base: f.required_vector("drift_vector"),
            gain: f.required_number("drift_gain"),
        },
        other => {
            let l = f.line_of("drift").unwrap_or(0);
            f.errors.push(ConfigError::parse(l, format!("unknown drift '{other}' (zero, constant, saturating)")));
            DriftSpec::Zero
        }
    };
    let identity = || (0..dim).map(|i| (0..dim).map(|j| if i == j { 1.0 } else { 0.0 }).collect()).collect();
    let dispersion = match f.text("dispersion").as_deref().unwrap_or("identity") {
        "identity" => DispersionSpec::Identity,
        "constant" => DispersionSpec::Constant {
            matrix: f.matrix("dispersion_matrix").unwrap_or_else(identity),
        },
        "modulated" => DispersionSpec::Modulated {
            matrix: f.matrix("dispersion_matrix").unwrap_or_else(identity),
            amplitude: f.required_number("dispersion_amplitude"),
        },
        other => {
            let l = f.line_of("dispersion").unwrap_or(0);
            f.errors.push(ConfigError::parse(
                l,
                format!("unknown dispersion '{other}' (identity, constant, modulated)"),
            ));
            DispersionSpec::Identity
        }
    };
    let epsilons = f.grid("epsilon").unwrap_or_else(|| DEFAULT_EPSILONS.to_vec());
    if epsilons.is_empty() || epsilons.iter().any(|e| *e < 0.0) {
        f.errors.push(ConfigError::validate(line, "epsilon must be a nonempty list of nonnegative values"));
    }
    let g1 = f.number("gamma1");
    let g2 = f.number("gamma2");
    let sl = f.number("sigma_lower");
    let bounds = match (g1, g2, sl) {
        (None, None, None) => None,
        (Some(a), Some(b), Some(c)) => Some(ModelBounds::new(a, b, c)),
        _ => {
            f.errors.push(ConfigError::validate(
                line,
                "declare all of gamma1, gamma2, sigma_lower or none of them",
            ));
            None
        }
    };
    report_unused(f);
    ModelSpec {
        drift,
        dispersion,
        epsilons: if epsilons.is_empty() { DEFAULT_EPSILONS.to_vec() } else { epsilons },
        bounds,
    }
}

/// `[domain]`: `radius = r` for a ball, or `normals` and `offsets` for
/// half-spaces. Defaults to the unit ball for the exit-time kinds.
fn parse_domain(f: &mut Fields<'_>, kind: ExperimentKind) -> Option<Domain> {
    let line = f.line();
    f.section.as_ref()?;
    let domain = if let Some(r) = f.number("radius") {
        Domain::ball(r)
    } else {
        let normals = f.matrix("normals").unwrap_or_default();
        let offsets = f.vector("offsets").unwrap_or_default();
        Domain::half_spaces(normals, offsets)
    };
    report_unused(f);
    if !matches!(kind, ExperimentKind::Flow | ExperimentKind::Leveling | ExperimentKind::PsiGap) {
        f.errors.push(ConfigError::parse(
            line.unwrap_or(0),
            format!("[domain] is not used by kind '{}'", kind.name()),
        ));
    }
    match domain {
        Ok(d) => Some(d),
        Err(e) => {
            f.errors.push(ConfigError::validate(line, e.to_string()));
            None
        }
    }
}

fn unit_ball() -> Domain {
    Domain::Ball { radius: 1.0 }
}

fn gap_setup(f: &mut Fields<'_>, model: &ModelSpec) -> GapSetup {
    let x = f.required_vector("x");
    let y = f.required_vector("y");
    let mut setup = GapSetup::new(x, y);
    setup.epsilons = model.epsilons.clone();
    setup.replicas = f.count_or("replicas", DEFAULT_REPLICAS);
    setup.dt = f.number_or("dt", DEFAULT_DT);
    setup.horizon = f.number_or("horizon", setup.horizon);
    setup.certify_horizon = f.number_or("certify_horizon", setup.certify_horizon);
    setup
}

fn parse_params(
    f: &mut Fields<'_>,
    kind: ExperimentKind,
    dim: usize,
    model: &ModelSpec,
    domain: Option<Domain>,
) -> Option<KindParams> {
    if f.section.is_none() && !matches!(kind, ExperimentKind::Validate) {
        f.errors.push(ConfigError::validate(None, format!("missing [{}] section", kind.name())));
        return None;
    }
    let params = match kind {
        ExperimentKind::Validate => KindParams::Validate,
        ExperimentKind::SpSolve => {
            let refine = f.number_or("refine", 1e-3);
            let path = match f.text("path") {
                Some(path) => PathSource::File { path },
                None => {
                    let times = f.required_vector("times");
                    let values = match f.take("values") {
                        Some((Value::Matrix(m), _)) => m,
                        // A plain vector is a one-dimensional path.
                        Some((Value::Vector(v), _)) => v.into_iter().map(|x| vec![x]).collect(),
                        Some((other, line)) => {
                            f.wrong_type("values", line, "a list of vectors", &other);
                            Vec::new()
                        }
                        None => {
                            f.missing("values");
                            Vec::new()
                        }
                    };
                    PathSource::Inline { times, values }
                }
            };
            KindParams::SpSolve(SpSolveParams { path, refine })
        }
        ExperimentKind::Simulate => KindParams::Simulate(SimulateParams {
            x0: f.required_vector("x0"),
            horizon: f.required_number("horizon"),
            dt: f.number_or("dt", DEFAULT_DT),
            paths: f.count_or("paths", 1),
            save_increments: f.boolean_or("save_increments", false),
            write_paths: f.boolean_or("write_paths", true),
        }),
        ExperimentKind::Flow => KindParams::Flow(FlowParams {
            x0: f.required_vector("x0"),
            horizon: f.required_number("horizon"),
            dt: f.number_or("dt", DEFAULT_DT),
            domain,
            gamma: f.number_or("gamma", 0.0),
        }),
        ExperimentKind::Minorization => {
            let x0 = f.required_vector("x0");
            let radii = (f.required_number("r0"), f.required_number("r1"), f.required_number("r2"));
            let (m, m1, t1) = (f.required_number("m"), f.required_number("m1"), f.required_number("t1"));
            let mut s = MinorizationSetup::new(x0, radii, m, m1, t1);
            s.t2 = f.number_or("t2", s.t2);
            s.target_radius = f.number("target_radius");
            s.epsilons = model.epsilons.clone();
            s.starts = f.matrix("starts").unwrap_or_default();
            s.start_points_per_axis = f.count_or("start_points_per_axis", s.start_points_per_axis as u64) as usize;
            s.target_bins_per_axis = f.count_or("target_bins_per_axis", s.target_bins_per_axis as u64) as usize;
            s.replicas = f.count_or("replicas", DEFAULT_REPLICAS);
            s.dt = f.number_or("dt", DEFAULT_DT);
            KindParams::Minorization(s)
        }
        ExperimentKind::KilledFloor => {
            let center = f.vector("center").unwrap_or_else(|| vec![0.0; dim]);
            let radius = f.number_or("radius", 1.0);
            let mut s = KilledSetup::new(center, radius, f.required_number("gamma"), f.required_number("t"));
            s.epsilons = model.epsilons.clone();
            s.starts = f.matrix("starts").unwrap_or_default();
            s.start_points_per_axis = f.count_or("start_points_per_axis", s.start_points_per_axis as u64) as usize;
            s.target_bins_per_axis = f.count_or("target_bins_per_axis", s.target_bins_per_axis as u64) as usize;
            s.replicas = f.count_or("replicas", DEFAULT_REPLICAS);
            s.dt = f.number_or("dt", DEFAULT_DT);
            KindParams::KilledFloor(s)
        }
        ExperimentKind::Leveling => {
            let setup = gap_setup(f, model);
            let domain = domain.unwrap_or_else(unit_ball);
            let functional = match f.text("functional").as_deref().unwrap_or("first_exceeds_second") {
                "first_exceeds_second" => Functional::FirstExceedsSecond,
                "coordinate" => Functional::Coordinate {
                    index: f.count_or("index", 0) as usize,
                },
                "constant" => Functional::Constant {
                    value: f.number_or("value", 1.0),
                },
                other => {
                    let l = f.line_of("functional").unwrap_or(0);
                    f.errors.push(ConfigError::parse(
                        l,
                        format!("unknown functional '{other}' (first_exceeds_second, coordinate, constant)"),
                    ));
                    Functional::Constant { value: 0.0 }
                }
            };
            let default_bound = match (&functional, &domain) {
                (Functional::FirstExceedsSecond, _) => 1.0,
                (Functional::Constant { value }, _) => value.abs(),
                (Functional::Coordinate { .. }, Domain::Ball { radius }) => *radius,
                (Functional::Coordinate { .. }, Domain::HalfSpaces { .. }) => f64::NAN,
            };
            let functional_bound = f.number("functional_bound").unwrap_or(default_bound);
            KindParams::Leveling(LevelingParams {
                setup,
                domain,
                functional,
                functional_bound,
            })
        }
        ExperimentKind::PsiGap => KindParams::PsiGap(PsiGapParams {
            setup: gap_setup(f, model),
            domain: domain.unwrap_or_else(unit_ball),
            power: f.number_or("power", 0.5),
            q: f.number_or("q", 0.5),
            m: f.number_or("m", 1.0),
            probe_horizon: f.number_or("probe_horizon", 1e6),
            declared_bound: f.number_or("declared_bound", 10.0),
        }),
        ExperimentKind::ScalingCheck => KindParams::ScalingCheck(ScalingParams {
            x_bar: f.required_vector("x_bar"),
            horizon: f.required_number("horizon"),
            dts: f.grid("dt").unwrap_or_else(|| vec![DEFAULT_DT]),
            paths: f.count_or("paths", 100),
            factor: f.number_or("factor", 5.0),
        }),
    };
    Some(params)
}

/// Semantic preconditions of the target operation, checked before any run.
fn check_params(params: &KindParams, cone: &PolyhedralCone, model: &ModelSpec) -> Result<()> {
    let k = cone.dim();
    let fail = |msg: String| Err(Error::Precondition(msg));
    let positive = |name: &str, v: f64| -> Result<()> {
        if v.is_finite() && v > 0.0 {
            Ok(())
        } else {
            Err(Error::Precondition(format!("{name} must be positive, got {v}")))
        }
    };
    let in_cone = |name: &str, x: &[f64]| -> Result<()> {
        if x.len() != k {
            return Err(Error::Precondition(format!("{name} must have length {k}")));
        }
        if cone.min_inner(x) < -crate::geometry::default_face_tolerance(x) {
            return Err(Error::Precondition(format!("{name} = {x:?} lies outside the cone")));
        }
        Ok(())
    };
    match params {
        KindParams::Validate => Ok(()),
        KindParams::SpSolve(p) => {
            positive("refine", p.refine)?;
            if let PathSource::Inline { times, values } = &p.path {
                crate::skorokhod::PiecewisePath::new(times.clone(), values.clone())?;
                if values.first().is_some_and(|v| v.len() != k) {
                    return fail(format!("path values must have length {k}"));
                }
            }
            Ok(())
        }
        KindParams::Simulate(p) => {
            in_cone("x0", &p.x0)?;
            positive("dt", p.dt)?;
            positive("horizon", p.horizon)?;
            if p.dt > p.horizon {
                return fail("dt must not exceed the horizon".into());
            }
            if p.paths == 0 {
                return fail("paths must be at least 1".into());
            }
            if p.save_increments && !p.write_paths {
                return fail("save_increments needs write_paths = true".into());
            }
            Ok(())
        }
        KindParams::Flow(p) => {
            in_cone("x0", &p.x0)?;
            positive("dt", p.dt)?;
            positive("horizon", p.horizon)?;
            if p.dt > p.horizon {
                return fail("dt must not exceed the horizon".into());
            }
            if let Some(d) = &p.domain {
                if !d.contains(&p.x0) {
                    return fail("x0 must lie inside the domain".into());
                }
            }
            if !(p.gamma >= 0.0) {
                return fail("gamma must be nonnegative".into());
            }
            Ok(())
        }
        KindParams::Minorization(s) => {
            s.check_geometry(cone)?;
            positive("dt", s.dt)?;
            if s.replicas == 0 {
                return fail("replicas must be at least 1".into());
            }
            if s.epsilons.iter().any(|e| !(*e > 0.0)) {
                return fail("minorization needs every epsilon > 0".into());
            }
            for x in &s.starts {
                in_cone("start", x)?;
            }
            Ok(())
        }
        KindParams::KilledFloor(s) => {
            s.check_geometry(k)?;
            if s.replicas == 0 {
                return fail("replicas must be at least 1".into());
            }
            if s.epsilons.iter().any(|e| !(*e > 0.0)) {
                return fail("killed_floor needs every epsilon > 0".into());
            }
            Ok(())
        }
        KindParams::Leveling(p) => {
            check_gap(&p.setup, &p.domain, cone, model)?;
            if !(p.functional_bound.is_finite() && p.functional_bound >= 0.0) {
                return fail("functional_bound must be declared (finite, nonnegative)".into());
            }
            match p.functional {
                Functional::FirstExceedsSecond if k < 2 => fail("first_exceeds_second needs k >= 2".into()),
                Functional::Coordinate { index } if index >= k => fail(format!("coordinate index must be below {k}")),
                _ => Ok(()),
            }
        }
        KindParams::PsiGap(p) => {
            check_gap(&p.setup, &p.domain, cone, model)?;
            if !(p.q > 0.0 && p.q < 1.0) || !(p.m >= 1.0) {
                return fail(format!("class parameters need 0 < q < 1 and m >= 1 (q = {}, m = {})", p.q, p.m));
            }
            positive("probe_horizon", p.probe_horizon)?;
            positive("declared_bound", p.declared_bound)
        }
        KindParams::ScalingCheck(p) => {
            in_cone("x_bar", &p.x_bar)?;
            positive("horizon", p.horizon)?;
            positive("factor", p.factor)?;
            if p.dts.is_empty() {
                return fail("dt grid must be nonempty".into());
            }
            for &dt in &p.dts {
                positive("dt", dt)?;
            }
            if p.paths == 0 {
                return fail("paths must be at least 1".into());
            }
            if model.epsilons.iter().any(|e| !(*e > 0.0)) {
                return fail("scaling_check needs every epsilon > 0".into());
            }
            Ok(())
        }
    }
}

fn check_gap(setup: &GapSetup, domain: &Domain, cone: &PolyhedralCone, model: &ModelSpec) -> Result<()> {
    let k = cone.dim();
    for (name, p) in [("x", &setup.x), ("y", &setup.y)] {
        if p.len() != k {
            return Err(Error::Precondition(format!("{name} must have length {k}")));
        }
        if cone.min_inner(p) < -crate::geometry::default_face_tolerance(p) {
            return Err(Error::Precondition(format!("{name} = {p:?} lies outside the cone")));
        }
        if !domain.contains(p) {
            return Err(Error::Precondition(format!("{name} = {p:?} lies outside the domain")));
        }
    }
    if let Domain::HalfSpaces { normals, .. } = domain {
        if normals.iter().any(|a| a.len() != k) {
            return Err(Error::Precondition(format!("domain normals must have length {k}")));
        }
    }
    if model.epsilons.iter().any(|e| !(*e > 0.0)) {
        return Err(Error::Precondition("exit-time kinds need every epsilon > 0".into()));
    }
    if setup.replicas == 0 {
        return Err(Error::Precondition("replicas must be at least 1".into()));
    }
    if !(setup.dt > 0.0 && setup.horizon >= setup.dt && setup.certify_horizon >= setup.dt) {
        return Err(Error::Precondition("need 0 < dt <= horizon and dt <= certify_horizon".into()));
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::ConfigErrorKind;

    const LEVELING: &str = "\
[experiment]
kind = leveling
seed = 11

[cone]
preset = orthant
k = 2

[model]
drift = constant
drift_vector = [-0.7071067811865476, -0.7071067811865476]

[leveling]
x = [0.4, 0.1]
y = [0.1, 0.4]
";

    fn errors(text: &str) -> Vec<ConfigError> {
        match parse_config(text) {
            Err(Error::Config(e)) => e,
            other => panic!("expected config errors, got {other:?}"),
        }
    }

    #[test]
    fn minimal_leveling_config_fills_defaults() {
        let c = parse_config(LEVELING).unwrap();
        assert_eq!(c.kind, ExperimentKind::Leveling);
        assert_eq!(c.seed, 11);
        let KindParams::Leveling(p) = &c.params else { panic!() };
        assert_eq!(p.setup.dt, 1e-3);
        assert_eq!(p.setup.replicas, 10_000);
        assert_eq!(p.setup.epsilons, vec![0.4, 0.2, 0.1]);
        assert_eq!(p.domain, Domain::Ball { radius: 1.0 });
        assert_eq!(p.functional_bound, 1.0);
        let echo = c.to_json();
        assert_eq!(echo["params"]["setup"]["dt"], 1e-3);
        assert_eq!(echo["params"]["setup"]["replicas"], 10_000);
    }

    #[test]
    fn unknown_key_names_its_line() {
        let text = LEVELING.replace("y = [0.1, 0.4]", "y = [0.1, 0.4]\nwobble = 3");
        let e = errors(&text);
        assert_eq!(e[0].kind, ConfigErrorKind::Parse);
        assert_eq!(e[0].line, Some(16));
        assert!(e[0].message.contains("wobble"));
    }

    #[test]
    fn reversed_radii_fail_validation_naming_the_rule() {
        let text = "\
[experiment]
kind = minorization
seed = 1
[cone]
preset = orthant
k = 2
[model]
drift = constant
drift_vector = [-0.7071067811865476, -0.7071067811865476]
[minorization]
x0 = [1, 1]
r0 = 0.5
r1 = 0.25
r2 = 0.75
m = 2
m1 = 1.8
t1 = 1
";
        let e = errors(text);
        assert_eq!(e.len(), 1);
        assert_eq!(e[0].kind, ConfigErrorKind::Validate);
        assert!(e[0].message.contains("r0 < r1 < r2"), "{}", e[0]);
        assert_eq!(e[0].line, Some(10));
    }

    #[test]
    fn seed_is_required_unless_overridden() {
        let text = LEVELING.replace("seed = 11\n", "");
        let e = errors(&text);
        assert!(e[0].message.contains("seed"));
        assert_eq!(parse_config_with(&text, Some(5)).unwrap().seed, 5);
        assert_eq!(parse_config_with(LEVELING, Some(5)).unwrap().seed, 5);
    }

    #[test]
    fn malformed_values_and_sections() {
        let e = errors(&LEVELING.replace("x = [0.4, 0.1]", "x = [0.4, 0.1"));
        assert_eq!(e[0].line, Some(14));
        assert!(e[0].message.contains("unterminated"));
        let e = errors(&LEVELING.replace("[leveling]", "[flow]"));
        assert!(e.iter().any(|e| e.message.contains("unknown section [flow]")));
        let e = errors(&LEVELING.replace("kind = leveling", "kind = juggle"));
        assert!(e[0].message.contains("unknown experiment kind"));
        let e = errors(&LEVELING.replace("seed = 11", "seed = 1.5"));
        assert!(e[0].message.contains("nonnegative integer"));
    }

    #[test]
    fn values_parse() {
        assert_eq!(parse_value("[[1, 2], [3,4]]").unwrap(), Value::Matrix(vec![vec![1.0, 2.0], vec![3.0, 4.0]]));
        assert_eq!(parse_value("[ ]").unwrap(), Value::Vector(vec![]));
        assert_eq!(parse_value("-1e-3").unwrap(), Value::Number(-1e-3));
        assert_eq!(parse_value("\"a b\"").unwrap(), Value::Text("a b".into()));
        assert!(parse_value("[[1],[2]").is_err());
        assert!(parse_value("[1, x]").is_err());
        assert!(parse_value("1e999").is_err());
        assert!(parse_value("two words").is_err());
        assert_eq!(strip_comment("a = \"#x\" # c"), "a = \"#x\" ");
    }

    #[test]
    fn general_cone_and_declared_bounds() {
        let text = "\
[experiment]
kind = validate
seed = 3
[cone]
normals = [[1, 0], [0, 1]]
directions = [[1, 0], [0.6, 0.8]]
[model]
epsilon = 0.5
gamma1 = 1
gamma2 = 1
sigma_lower = 1
";
        let c = parse_config(text).unwrap();
        assert_eq!(c.model.epsilons, vec![0.5]);
        assert!(c.model.bounds.is_some());
        assert!(matches!(c.cone, ConeSpec::General { .. }));
        let e = errors(&text.replace("sigma_lower = 1\n", ""));
        assert!(e[0].message.contains("gamma1, gamma2, sigma_lower"));
    }
}
