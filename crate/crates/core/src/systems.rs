//! Constraint Hamiltonian systems `L = (1/2N) g_ij q̇^i q̇^j − N V` and their
//! geometrizations: Jacobi metric, Eisenhart lift and the combined lift.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use indexmap::IndexMap;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::expr::{eval_scalar, parse, validate_symbols, Expr};
use crate::jet::MAX_VARS;
use crate::metric::{Interval, MetricField};

/// Default name of the Eisenhart fiber coordinate.
pub const FIBER: &str = "z";

/// Which conformal factor builds the Jacobi metric from `(g, V)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Convention {
    /// `ḡ = V g`
    Canonical,
    /// `ḡ = g / V`
    Inverse,
}

impl Convention {
    pub const ALL: [Convention; 2] = [Convention::Canonical, Convention::Inverse];

    pub fn name(self) -> &'static str {
        match self {
            Convention::Canonical => "canonical",
            Convention::Inverse => "inverse",
        }
    }
}

impl fmt::Display for Convention {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for Convention {
    type Err = String;
    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "canonical" => Ok(Convention::Canonical),
            "inverse" => Ok(Convention::Inverse),
            _ => Err(format!("unknown convention `{s}` (expected canonical or inverse)")),
        }
    }
}

/// Metric whose flat chart a transform claims to be.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Target {
    JacobiCanonical,
    JacobiInverse,
    Lift,
}

impl Target {
    pub fn name(self) -> &'static str {
        match self {
            Target::JacobiCanonical => "jacobi-canonical",
            Target::JacobiInverse => "jacobi-inverse",
            Target::Lift => "lift",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Transform {
    pub name: String,
    pub target: Target,
    /// New coordinate name to its expression in the old coordinates.
    pub maps: IndexMap<String, Expr>,
}

/// Point symmetry generator `ξ ∂_t + η^i ∂_i` with boundary term `f`.
#[derive(Debug, Clone, PartialEq)]
pub struct Generator {
    pub name: String,
    pub xi: Expr,
    /// One component per coordinate, in coordinate order.
    pub eta: Vec<Expr>,
    pub boundary: Expr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SystemSpec {
    pub name: String,
    /// Kinetic metric; carries coordinates, parameters, domain and guards.
    pub metric: MetricField,
    pub potential: Expr,
    pub transforms: Vec<Transform>,
    pub generators: Vec<Generator>,
}

// ---------------------------------------------------------------------------
// JSON form

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawSpec {
    name: String,
    coordinates: Vec<String>,
    #[serde(default)]
    parameters: IndexMap<String, f64>,
    metric: Vec<Vec<String>>,
    potential: String,
    domain: IndexMap<String, Interval>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    guards: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    transforms: Vec<RawTransform>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    generators: Vec<RawGenerator>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawTransform {
    name: String,
    target: Target,
    maps: IndexMap<String, String>,
}

fn zero_string() -> String {
    "0".into()
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RawGenerator {
    name: String,
    #[serde(default = "zero_string")]
    xi: String,
    #[serde(default)]
    eta: IndexMap<String, String>,
    #[serde(default = "zero_string")]
    boundary: String,
}

fn parse_at(text: &str, path: String, allowed: &[String]) -> Result<Expr> {
    let e = parse(text).map_err(|source| Error::Parse {
        path: path.clone(),
        source,
    })?;
    validate_symbols(&e, allowed).map_err(|names| Error::UnknownSymbols { path, names })?;
    Ok(e)
}

fn schema(path: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Schema {
        path: path.into(),
        message: message.into(),
    }
}

fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    matches!(chars.next(), Some(c) if c.is_ascii_alphabetic() || c == '_')
        && chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

impl SystemSpec {
    /// Parse and validate a JSON system document.
    pub fn from_json(text: &str) -> Result<SystemSpec> {
        let de = &mut serde_json::Deserializer::from_str(text);
        let raw: RawSpec = serde_path_to_error::deserialize(de).map_err(|e| {
            let path = e.path().to_string();
            let path = if path == "." {
                "$".to_string()
            } else {
                format!("$.{path}")
            };
            schema(path, e.into_inner().to_string())
        })?;
        SystemSpec::from_raw(raw)
    }

    fn from_raw(raw: RawSpec) -> Result<SystemSpec> {
        let n = raw.coordinates.len();
        if n == 0 {
            return Err(schema("$.coordinates", "at least one coordinate required"));
        }
        if n + 1 > MAX_VARS {
            return Err(schema(
                "$.coordinates",
                format!("at most {} coordinates supported", MAX_VARS - 1),
            ));
        }
        let mut seen = std::collections::BTreeSet::new();
        for (i, c) in raw.coordinates.iter().enumerate() {
            if !is_identifier(c) {
                return Err(schema(
                    format!("$.coordinates[{i}]"),
                    format!("`{c}` is not an identifier"),
                ));
            }
            if !seen.insert(c.clone()) {
                return Err(Error::NameCollision(c.clone()));
            }
        }
        for (k, v) in &raw.parameters {
            if !is_identifier(k) {
                return Err(schema(format!("$.parameters.{k}"), "not an identifier"));
            }
            if !seen.insert(k.clone()) {
                return Err(Error::NameCollision(k.clone()));
            }
            if !v.is_finite() {
                return Err(schema(format!("$.parameters.{k}"), "must be finite"));
            }
        }
        let params: BTreeMap<String, f64> = raw.parameters.iter().map(|(k, v)| (k.clone(), *v)).collect();
        let allowed: Vec<String> = raw.coordinates.iter().cloned().chain(params.keys().cloned()).collect();

        if raw.metric.len() != n {
            return Err(schema(
                "$.metric",
                format!("expected {n} rows, got {}", raw.metric.len()),
            ));
        }
        let mut rows = Vec::with_capacity(n);
        for (i, row) in raw.metric.iter().enumerate() {
            if row.len() != n {
                return Err(schema(
                    format!("$.metric[{i}]"),
                    format!("expected {n} entries, got {}", row.len()),
                ));
            }
            let mut parsed = Vec::with_capacity(n);
            for (j, cell) in row.iter().enumerate() {
                parsed.push(parse_at(cell, format!("$.metric[{i}][{j}]"), &allowed)?);
            }
            rows.push(parsed);
        }

        let mut domain = Vec::with_capacity(n);
        for c in &raw.coordinates {
            let iv = raw
                .domain
                .get(c)
                .ok_or_else(|| schema("$.domain", format!("missing interval for `{c}`")))?;
            if !(iv.lo.is_finite() && iv.hi.is_finite() && iv.lo < iv.hi) {
                return Err(schema(format!("$.domain.{c}"), "need finite lo < hi"));
            }
            domain.push(*iv);
        }
        if let Some(extra) = raw.domain.keys().find(|k| !raw.coordinates.contains(k)) {
            return Err(schema(format!("$.domain.{extra}"), "not a coordinate"));
        }

        let mut metric = MetricField::from_rows(raw.coordinates.clone(), params, domain, rows)?;
        for (i, g) in raw.guards.iter().enumerate() {
            metric.guards.push(parse_at(g, format!("$.guards[{i}]"), &allowed)?);
        }
        let potential = parse_at(&raw.potential, "$.potential".into(), &allowed)?;

        let mut transforms = Vec::new();
        for (t, rt) in raw.transforms.iter().enumerate() {
            let mut tallowed = allowed.clone();
            let want = match rt.target {
                Target::Lift => {
                    tallowed.push(FIBER.into());
                    n + 1
                }
                _ => n,
            };
            if rt.maps.len() != want {
                return Err(schema(
                    format!("$.transforms[{t}].maps"),
                    format!("target {} needs {want} maps, got {}", rt.target.name(), rt.maps.len()),
                ));
            }
            let mut maps = IndexMap::new();
            for (k, v) in &rt.maps {
                maps.insert(
                    k.clone(),
                    parse_at(v, format!("$.transforms[{t}].maps.{k}"), &tallowed)?,
                );
            }
            transforms.push(Transform {
                name: rt.name.clone(),
                target: rt.target,
                maps,
            });
        }

        let mut generators = Vec::new();
        for (g, rg) in raw.generators.iter().enumerate() {
            if let Some(bad) = rg.eta.keys().find(|k| !raw.coordinates.contains(k)) {
                return Err(schema(format!("$.generators[{g}].eta.{bad}"), "not a coordinate"));
            }
            let mut eta = Vec::with_capacity(n);
            for c in &raw.coordinates {
                eta.push(match rg.eta.get(c) {
                    Some(s) => parse_at(s, format!("$.generators[{g}].eta.{c}"), &allowed)?,
                    None => Expr::c(0.0),
                });
            }
            generators.push(Generator {
                name: rg.name.clone(),
                xi: parse_at(&rg.xi, format!("$.generators[{g}].xi"), &allowed)?,
                eta,
                boundary: parse_at(&rg.boundary, format!("$.generators[{g}].boundary"), &allowed)?,
            });
        }

        Ok(SystemSpec {
            name: raw.name,
            metric,
            potential,
            transforms,
            generators,
        })
    }

    fn to_raw(&self) -> RawSpec {
        let m = &self.metric;
        RawSpec {
            name: self.name.clone(),
            coordinates: m.coords.clone(),
            parameters: m.params.iter().map(|(k, v)| (k.clone(), *v)).collect(),
            metric: m
                .rows()
                .iter()
                .map(|r| r.iter().map(|e| e.to_string()).collect())
                .collect(),
            potential: self.potential.to_string(),
            domain: m.coords.iter().cloned().zip(m.domain.iter().copied()).collect(),
            guards: m.guards.iter().map(|g| g.to_string()).collect(),
            transforms: self
                .transforms
                .iter()
                .map(|t| RawTransform {
                    name: t.name.clone(),
                    target: t.target,
                    maps: t.maps.iter().map(|(k, v)| (k.clone(), v.to_string())).collect(),
                })
                .collect(),
            generators: self
                .generators
                .iter()
                .map(|g| RawGenerator {
                    name: g.name.clone(),
                    xi: g.xi.to_string(),
                    eta: m
                        .coords
                        .iter()
                        .zip(&g.eta)
                        .filter(|(_, e)| !e.is_zero())
                        .map(|(c, e)| (c.clone(), e.to_string()))
                        .collect(),
                    boundary: g.boundary.to_string(),
                })
                .collect(),
        }
    }

    pub fn to_json_value(&self) -> serde_json::Value {
        serde_json::to_value(self.to_raw()).expect("spec serializes")
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(&self.to_raw()).expect("spec serializes")
    }

    pub fn dim(&self) -> usize {
        self.metric.dim()
    }

    pub fn coords(&self) -> &[String] {
        &self.metric.coords
    }

    pub fn params(&self) -> &BTreeMap<String, f64> {
        &self.metric.params
    }

    pub fn potential_at(&self, q: &[f64]) -> Result<f64> {
        Ok(eval_scalar(&self.potential, &self.metric.env(q))?)
    }

    /// Override declared parameters (`--set`); unknown names are rejected.
    pub fn with_params(&self, overrides: &BTreeMap<String, f64>) -> Result<SystemSpec> {
        Ok(SystemSpec {
            metric: self.metric.with_params(overrides)?,
            ..self.clone()
        })
    }

    pub fn transform(&self, name: &str) -> Option<&Transform> {
        self.transforms.iter().find(|t| t.name == name)
    }

    /// Kinetic metric with `V` added to the guards, the sampling space for
    /// anything that divides by the potential.
    pub fn sampling_metric(&self) -> MetricField {
        let mut m = self.metric.clone();
        m.guards.push(self.potential.clone());
        m
    }

    /// `V g` (canonical) or `g / V` (inverse).
    pub fn jacobi_metric(&self, convention: Convention) -> MetricField {
        let v = &self.potential;
        let mut m = self.metric.map_components(|_, _, e| match convention {
            Convention::Canonical => Expr::mul(v.clone(), e.clone()),
            Convention::Inverse => Expr::div(e.clone(), v.clone()),
        });
        m.guards.push(v.clone());
        m
    }

    fn check_fiber(&self, fiber: &str) -> Result<()> {
        if self.metric.coords.iter().any(|c| c == fiber) || self.metric.params.contains_key(fiber) {
            return Err(Error::NameCollision(fiber.into()));
        }
        Ok(())
    }

    fn extend(base: &MetricField, fiber: &str, gzz: Expr) -> MetricField {
        let n = base.dim();
        let mut coords = base.coords.clone();
        coords.push(fiber.into());
        let mut domain = base.domain.clone();
        domain.push(Interval::new(-1.0, 1.0));
        let mut m = MetricField::from_fn(coords, base.params.clone(), domain, |i, j| {
            if i < n && j < n {
                base.component(i, j).clone()
            } else if i == n && j == n {
                gzz.clone()
            } else {
                Expr::c(0.0)
            }
        });
        m.guards = base.guards.clone();
        m
    }

    /// `g ⊕ (1/V) dz²`, fiber domain `[-1, 1]`.
    pub fn eisenhart_lift(&self, fiber: &str) -> Result<MetricField> {
        self.check_fiber(fiber)?;
        let mut m = Self::extend(&self.metric, fiber, Expr::div(Expr::c(1.0), self.potential.clone()));
        m.guards.push(self.potential.clone());
        Ok(m)
    }

    /// `ḡ ⊕ dz²` with `ḡ` the Jacobi metric in `convention`.
    pub fn jacobi_eisenhart_lift(&self, convention: Convention, fiber: &str) -> Result<MetricField> {
        self.check_fiber(fiber)?;
        Ok(Self::extend(&self.jacobi_metric(convention), fiber, Expr::c(1.0)))
    }
}

// ---------------------------------------------------------------------------
// one-dimensional flattening

/// `Y(q) = ∫_{q0}^{q} |V(s)|^{-1/2} ds` on the domain, `q0` its lower bound.
///
/// The integral is tabulated on a uniform grid by adaptive Simpson; values
/// between nodes add an adaptive Simpson integral from the nearest node.
#[derive(Debug, Clone)]
pub struct Flattening1d {
    integrand: Expr,
    coord: String,
    params: BTreeMap<String, f64>,
    q0: f64,
    h: f64,
    table: Vec<f64>,
}

const FLATTEN_CELLS: usize = 256;
const FLATTEN_TOL: f64 = 1e-13;

#[allow(clippy::too_many_arguments)]
fn simpson(
    f: &dyn Fn(f64) -> Result<f64>,
    a: f64,
    b: f64,
    fa: f64,
    fm: f64,
    fb: f64,
    whole: f64,
    tol: f64,
    depth: u32,
) -> Result<f64> {
    let m = 0.5 * (a + b);
    let lm = 0.5 * (a + m);
    let rm = 0.5 * (m + b);
    let flm = f(lm)?;
    let frm = f(rm)?;
    let left = (m - a) / 6.0 * (fa + 4.0 * flm + fm);
    let right = (b - m) / 6.0 * (fm + 4.0 * frm + fb);
    let diff = left + right - whole;
    if depth == 0 || diff.abs() <= 15.0 * tol {
        return Ok(left + right + diff / 15.0);
    }
    Ok(simpson(f, a, m, fa, flm, fm, left, tol / 2.0, depth - 1)?
        + simpson(f, m, b, fm, frm, fb, right, tol / 2.0, depth - 1)?)
}

fn integrate(f: &dyn Fn(f64) -> Result<f64>, a: f64, b: f64, tol: f64) -> Result<f64> {
    if a == b {
        return Ok(0.0);
    }
    let fa = f(a)?;
    let fb = f(b)?;
    let fm = f(0.5 * (a + b))?;
    let whole = (b - a) / 6.0 * (fa + 4.0 * fm + fb);
    simpson(f, a, b, fa, fm, fb, whole, tol, 40)
}

impl Flattening1d {
    fn integrand_at(&self, q: f64) -> Result<f64> {
        let mut env = self.params.clone();
        env.insert(self.coord.clone(), q);
        Ok(eval_scalar(&self.integrand, &env)?)
    }

    pub fn lower(&self) -> f64 {
        self.q0
    }

    pub fn upper(&self) -> f64 {
        self.q0 + self.h * FLATTEN_CELLS as f64
    }

    /// Evaluate `Y(q)`; `q` must lie in the domain.
    pub fn eval(&self, q: f64) -> Result<f64> {
        if !(self.q0..=self.upper()).contains(&q) {
            return Err(Error::Precondition(format!(
                "q={q} outside [{}, {}]",
                self.q0,
                self.upper()
            )));
        }
        let cell = (((q - self.q0) / self.h).round() as usize).min(FLATTEN_CELLS);
        let node = self.q0 + cell as f64 * self.h;
        let f = |s: f64| self.integrand_at(s);
        let tail = if q >= node {
            integrate(&f, node, q, FLATTEN_TOL)?
        } else {
            -integrate(&f, q, node, FLATTEN_TOL)?
        };
        Ok(self.table[cell] + tail)
    }
}

/// Flat coordinate of a one-dimensional system.
pub fn flatten_1d(s: &SystemSpec) -> Result<Flattening1d> {
    if s.dim() != 1 {
        return Err(Error::Dimension {
            op: "flatten_1d",
            expected: "1".into(),
            got: s.dim(),
        });
    }
    let iv = s.metric.domain[0];
    let coord = s.coords()[0].clone();
    let h = iv.width() / FLATTEN_CELLS as f64;

    // sign scan on a grid four times finer than the table
    let probe = 4 * FLATTEN_CELLS;
    let mut sign = 0.0;
    for k in 0..=probe {
        let q = iv.lo + iv.width() * k as f64 / probe as f64;
        let v = s.potential_at(&[q])?;
        if v == 0.0 || (sign != 0.0 && v.signum() != sign) {
            return Err(Error::SignChange { at: q });
        }
        sign = v.signum();
    }

    // g_qq / |V| under the root keeps Y a proper length for any g_qq
    let integrand = Expr::Call(
        crate::expr::Func::Sqrt,
        Box::new(Expr::div(
            s.metric.component(0, 0).clone(),
            Expr::mul(Expr::c(sign), s.potential.clone()),
        )),
    );
    let mut flat = Flattening1d {
        integrand,
        coord,
        params: s.params().clone(),
        q0: iv.lo,
        h,
        table: vec![0.0; FLATTEN_CELLS + 1],
    };
    let f = |q: f64| flat.integrand_at(q);
    let mut acc = 0.0;
    let mut table = vec![0.0];
    for k in 0..FLATTEN_CELLS {
        let a = iv.lo + k as f64 * h;
        let b = if k + 1 == FLATTEN_CELLS { iv.hi } else { a + h };
        acc += integrate(&f, a, b, FLATTEN_TOL)?;
        table.push(acc);
    }
    flat.table = table;
    Ok(flat)
}
