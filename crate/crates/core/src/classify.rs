//! Linearizability verdicts from sampled curvature diagnostics.
//!
//! A system is linearizable when the Eisenhart-type lift of one of its
//! Jacobi metrics is conformally flat (Cotton-York in three dimensions, Weyl
//! above). The plain lift `g ⊕ dz²/V` is conformal to the canonical
//! `Vg ⊕ dz²`; the inverse convention `g/V ⊕ dz²` lies in a different
//! conformal class, so both are tested. The constant-curvature test of each
//! Jacobi metric is recorded as evidence.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::curvature::{curvature_at, Curvature};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::metric::{Interval, MetricField};
use crate::sampling::sample_points;
use crate::systems::{Convention, SystemSpec, FIBER};

/// Residuals below this pass.
pub const PASS: f64 = 1e-8;
/// Residuals above this fail; in between is indeterminate.
pub const FAIL: f64 = 1e-4;
/// Relative spread of `K` below which it counts as constant.
pub const K_SPREAD: f64 = 1e-6;
/// `|K|` below which every sample counts as flat.
pub const K_ZERO: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "SCREAMING_SNAKE_CASE")]
pub enum Decision {
    Linearizable,
    NotLinearizable,
    Indeterminate,
}

impl Decision {
    pub fn as_str(self) -> &'static str {
        match self {
            Decision::Linearizable => "LINEARIZABLE",
            Decision::NotLinearizable => "NOT_LINEARIZABLE",
            Decision::Indeterminate => "INDETERMINATE",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Outcome {
    Pass,
    Fail,
    Indeterminate,
}

fn grade(residual: f64) -> Outcome {
    if residual < PASS {
        Outcome::Pass
    } else if residual > FAIL || residual.is_nan() {
        Outcome::Fail
    } else {
        Outcome::Indeterminate
    }
}

fn worst(a: Outcome, b: Outcome) -> Outcome {
    match (a, b) {
        (Outcome::Fail, _) | (_, Outcome::Fail) => Outcome::Fail,
        (Outcome::Indeterminate, _) | (_, Outcome::Indeterminate) => Outcome::Indeterminate,
        _ => Outcome::Pass,
    }
}

/// Evaluate curvature at every point in parallel, keeping point order.
fn curvatures(m: &MetricField, points: &[Vec<f64>]) -> Result<Vec<Curvature>> {
    let all: Vec<Result<Curvature>> = points.par_iter().map(|p| curvature_at(m, p)).collect();
    all.into_iter().collect()
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (mean, var.sqrt())
}

fn max_of(xs: &[f64]) -> f64 {
    xs.iter()
        .fold(0.0f64, |m, &x| if x.is_nan() { f64::NAN } else { m.max(x) })
}

#[derive(Debug, Clone)]
pub struct MaxSymReport {
    pub k: Vec<f64>,
    pub residuals: Vec<f64>,
    pub k_mean: f64,
    pub k_std: f64,
    pub residual_max: f64,
    pub outcome: Outcome,
}

impl MaxSymReport {
    /// `std(K) / (|mean K| + 1e-12)`.
    pub fn k_spread(&self) -> f64 {
        self.k_std / (self.k_mean.abs() + 1e-12)
    }

    pub fn to_json(&self) -> Value {
        json!({
            "K_mean": self.k_mean,
            "K_std": self.k_std,
            "residual_max": self.residual_max,
            "outcome": self.outcome,
        })
    }
}

/// Constant-curvature test of `m` at `points`.
pub fn maximal_symmetry_test(m: &MetricField, points: &[Vec<f64>]) -> Result<MaxSymReport> {
    if m.dim() < 2 {
        return Err(Error::Dimension {
            op: "maximal_symmetry_test",
            expected: ">= 2".into(),
            got: m.dim(),
        });
    }
    if points.is_empty() {
        return Err(Error::Precondition("no sample points".into()));
    }
    let mut k = Vec::with_capacity(points.len());
    let mut residuals = Vec::with_capacity(points.len());
    for c in curvatures(m, points)? {
        let (ki, r) = c.max_symmetry_residual().expect("n >= 2");
        k.push(ki);
        residuals.push(r);
    }
    let (k_mean, k_std) = mean_std(&k);
    let residual_max = max_of(&residuals);
    let spread = k_std / (k_mean.abs() + 1e-12);
    let flat = k.iter().all(|x| x.abs() < K_ZERO);
    let k_outcome = if flat || spread < K_SPREAD {
        Outcome::Pass
    } else if spread > FAIL {
        Outcome::Fail
    } else {
        Outcome::Indeterminate
    };
    Ok(MaxSymReport {
        outcome: worst(grade(residual_max), k_outcome),
        k,
        residuals,
        k_mean,
        k_std,
        residual_max,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ConformalKind {
    #[serde(rename = "dim<=2")]
    LowDim,
    #[serde(rename = "cotton")]
    Cotton,
    #[serde(rename = "weyl")]
    Weyl,
}

#[derive(Debug, Clone)]
pub struct ConformalReport {
    pub kind: ConformalKind,
    pub residuals: Vec<f64>,
    pub residual_max: f64,
    pub outcome: Outcome,
}

impl ConformalReport {
    pub fn to_json(&self) -> Value {
        json!({
            "kind": self.kind,
            "residual_max": self.residual_max,
            "outcome": self.outcome,
        })
    }
}

/// Conformal flatness of `m`: automatic for `n <= 2`, Cotton-York for
/// `n = 3`, Weyl above.
pub fn conformal_flatness_test(m: &MetricField, points: &[Vec<f64>]) -> Result<ConformalReport> {
    let kind = match m.dim() {
        0..=2 => ConformalKind::LowDim,
        3 => ConformalKind::Cotton,
        _ => ConformalKind::Weyl,
    };
    let residuals = match kind {
        ConformalKind::LowDim => vec![0.0; points.len()],
        ConformalKind::Cotton => curvatures(m, points)?.iter().map(Curvature::cotton_residual).collect(),
        ConformalKind::Weyl => curvatures(m, points)?.iter().map(Curvature::weyl_residual).collect(),
    };
    let residual_max = max_of(&residuals);
    Ok(ConformalReport {
        kind,
        outcome: grade(residual_max),
        residuals,
        residual_max,
    })
}

/// The two lifts whose conformal flatness decides linearizability, one per
/// Jacobi convention's conformal class.
#[derive(Debug, Clone)]
pub struct LiftPair {
    /// Conformal to `V g ⊕ dz²`; by default the plain lift `g ⊕ dz²/V`.
    pub canonical: MetricField,
    /// Conformal to `g/V ⊕ dz²`.
    pub inverse: MetricField,
}

impl LiftPair {
    pub fn standard(s: &SystemSpec) -> Result<LiftPair> {
        Ok(LiftPair {
            canonical: s.eisenhart_lift(FIBER)?,
            inverse: s.jacobi_eisenhart_lift(Convention::Inverse, FIBER)?,
        })
    }

    fn get(&self, c: Convention) -> &MetricField {
        match c {
            Convention::Canonical => &self.canonical,
            Convention::Inverse => &self.inverse,
        }
    }
}

#[derive(Debug, Clone)]
pub struct ConventionEvidence {
    pub convention: Convention,
    /// `None` for one-dimensional systems.
    pub max_sym: Option<MaxSymReport>,
    pub conformal: ConformalReport,
}

#[derive(Debug, Clone)]
pub struct Verdict {
    pub system: String,
    pub n: usize,
    pub decision: Decision,
    pub per_convention: Vec<ConventionEvidence>,
    /// Convention whose lift decided the verdict.
    pub deciding: Convention,
    pub seed: u64,
    pub points: usize,
    pub params: std::collections::BTreeMap<String, f64>,
}

impl Verdict {
    /// Number of Noether point symmetries implied by a positive verdict,
    /// `n(n+1)/2`; never computed independently.
    pub fn implied_noether_count(&self) -> Option<usize> {
        (self.decision == Decision::Linearizable).then(|| self.n * (self.n + 1) / 2)
    }

    pub fn evidence(&self, c: Convention) -> &ConventionEvidence {
        self.per_convention
            .iter()
            .find(|e| e.convention == c)
            .expect("both conventions")
    }

    pub fn to_json(&self) -> Value {
        let canonical = self.evidence(Convention::Canonical);
        let deciding = self.evidence(self.deciding);
        let mut per = serde_json::Map::new();
        for e in &self.per_convention {
            per.insert(
                e.convention.name().into(),
                json!({
                    "max_sym": e.max_sym.as_ref().map(MaxSymReport::to_json),
                    "conformal": e.conformal.to_json(),
                }),
            );
        }
        json!({
            "system": self.system,
            "n": self.n,
            "decision": self.decision,
            "evidence": {
                "max_sym": canonical.max_sym.as_ref().map(|m| json!({
                    "K_mean": m.k_mean,
                    "K_std": m.k_std,
                    "residual_max": m.residual_max,
                })),
                "per_convention": Value::Object(per),
                "conformal": {
                    "kind": deciding.conformal.kind,
                    "residual_max": deciding.conformal.residual_max,
                    "convention": self.deciding,
                },
                "implied_noether_count": self.implied_noether_count(),
            },
            "seed": self.seed,
            "points": self.points,
            "parameters": self.params,
            "thresholds": {
                "pass": PASS,
                "fail": FAIL,
                "k_spread": K_SPREAD,
                "k_zero": K_ZERO,
            },
        })
    }
}

/// Classify with the standard lifts.
pub fn classify(s: &SystemSpec, samples: usize, seed: u64) -> Result<Verdict> {
    classify_with(s, &LiftPair::standard(s)?, samples, seed)
}

/// Classify using caller-supplied lifts (any conformal rescaling of the
/// standard ones must give the same decision).
pub fn classify_with(s: &SystemSpec, lifts: &LiftPair, samples: usize, seed: u64) -> Result<Verdict> {
    if samples == 0 {
        return Err(Error::Precondition("samples must be positive".into()));
    }
    let n = s.dim();
    let points = sample_points(&s.eisenhart_lift(FIBER)?, samples, seed)?;
    let base: Vec<Vec<f64>> = points.iter().map(|p| p[..n].to_vec()).collect();

    let mut per_convention = Vec::with_capacity(2);
    for c in Convention::ALL {
        let max_sym = if n >= 2 {
            Some(maximal_symmetry_test(&s.jacobi_metric(c), &base)?)
        } else {
            None
        };
        let conformal = conformal_flatness_test(lifts.get(c), &points)?;
        per_convention.push(ConventionEvidence {
            convention: c,
            max_sym,
            conformal,
        });
    }

    let outcomes: Vec<Outcome> = per_convention.iter().map(|e| e.conformal.outcome).collect();
    let (decision, deciding) = if n == 1 {
        (Decision::Linearizable, Convention::Canonical)
    } else if let Some(i) = outcomes.iter().position(|&o| o == Outcome::Pass) {
        (Decision::Linearizable, Convention::ALL[i])
    } else if outcomes.iter().all(|&o| o == Outcome::Fail) {
        (Decision::NotLinearizable, Convention::Canonical)
    } else {
        let i = outcomes.iter().position(|&o| o == Outcome::Indeterminate).unwrap_or(0);
        (Decision::Indeterminate, Convention::ALL[i])
    };

    Ok(Verdict {
        system: s.name.clone(),
        n,
        decision,
        per_convention,
        deciding,
        seed,
        points: points.len(),
        params: s.params().clone(),
    })
}

/// `L = (1/2N) δ_ij q̇^i q̇^j + N (1 + κ/4 δ_ij q^i q^j)²` on `[-1, 1]^n`,
/// coordinates `x1..xn`, parameter `k = κ`.
pub fn corollary3_system(n: usize, kappa: f64) -> Result<SystemSpec> {
    if n < 2 {
        return Err(Error::Dimension {
            op: "corollary3_system",
            expected: ">= 2".into(),
            got: n,
        });
    }
    let coords: Vec<String> = (1..=n).map(|i| format!("x{i}")).collect();
    let r2 = coords.iter().map(|c| format!("{c}^2")).collect::<Vec<_>>().join(" + ");
    let potential = parse(&format!("-(1 + k/4*({r2}))^2")).expect("generated potential parses");
    let metric = MetricField::diagonal(
        coords,
        [("k".to_string(), kappa)].into(),
        vec![Interval::new(-1.0, 1.0); n],
        vec![Expr::c(1.0); n],
    );
    Ok(SystemSpec {
        name: format!("corollary3-n{n}"),
        metric,
        potential,
        transforms: Vec::new(),
        generators: Vec::new(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn spec(text: &str) -> SystemSpec {
        SystemSpec::from_json(text).unwrap()
    }

    fn szekeres(h: f64) -> SystemSpec {
        spec(&format!(
            r#"{{"name":"szekeres","coordinates":["u","v"],"parameters":{{"h":{h}}},
            "metric":[["0","1"],["1","0"]],"potential":"v/u^2 - h",
            "domain":{{"u":[0.5,2],"v":[0.5,2]}},"guards":["u","v"]}}"#
        ))
    }

    #[test]
    fn szekeres_verdicts() {
        let v = classify(&szekeres(0.0), 20, 0).unwrap();
        assert_eq!(v.decision, Decision::Linearizable);
        assert_eq!(v.implied_noether_count(), Some(3));
        let v = classify(&szekeres(1.0), 20, 0).unwrap();
        assert_eq!(v.decision, Decision::NotLinearizable);
        assert_eq!(v.implied_noether_count(), None);
    }

    #[test]
    fn harmonic_oscillator_is_not_linearizable() {
        let s = spec(
            r#"{"name":"ho","coordinates":["x","y"],"parameters":{"w":1,"h":1},
            "metric":[["1","0"],["0","1"]],"potential":"w^2/2*(x^2 + y^2) - h",
            "domain":{"x":[-2,2],"y":[-2,2]}}"#,
        );
        assert_eq!(classify(&s, 20, 0).unwrap().decision, Decision::NotLinearizable);
    }

    #[test]
    fn corollary3() {
        let s = corollary3_system(2, 1.0).unwrap();
        assert_eq!(s.potential.to_string(), "-(1 + k/4*(x1^2 + x2^2))^2");
        for k in [1.0, 0.0] {
            let s = corollary3_system(3, k).unwrap();
            assert_eq!(classify(&s, 10, 0).unwrap().decision, Decision::Linearizable, "k={k}");
        }
        assert!(corollary3_system(1, 1.0).is_err());
    }

    #[test]
    fn one_dimensional_is_linearizable() {
        let s =
            spec(r#"{"name":"e","coordinates":["q"],"metric":[["1"]],"potential":"exp(2*q)","domain":{"q":[0,1]}}"#);
        let v = classify(&s, 5, 0).unwrap();
        assert_eq!(v.decision, Decision::Linearizable);
        assert_eq!(v.implied_noether_count(), Some(1));
    }

    #[test]
    fn printed_oscillator_metric_has_constant_curvature() {
        for kappa in [1.0, 2.0, -1.0] {
            let m = MetricField::diagonal(
                vec!["x".into(), "y".into()],
                [("k".to_string(), kappa)].into(),
                vec![Interval::new(-1.0, 1.0); 2],
                vec![parse("1/(1 + k/4*(x^2 + y^2))^2").unwrap(); 2],
            );
            let pts = sample_points(&m, 20, 0).unwrap();
            let r = maximal_symmetry_test(&m, &pts).unwrap();
            assert_eq!(r.outcome, Outcome::Pass);
            assert!((r.k_mean - kappa).abs() < 1e-9, "{}", r.k_mean);
        }
    }

    #[test]
    fn product_of_sphere_and_line_fails_max_sym() {
        let m = MetricField::diagonal(
            vec!["a".into(), "b".into(), "c".into()],
            Default::default(),
            vec![Interval::new(0.5, 2.0); 3],
            vec![parse("1").unwrap(), parse("sin(a)^2").unwrap(), parse("1").unwrap()],
        );
        let pts = sample_points(&m, 10, 0).unwrap();
        assert_eq!(maximal_symmetry_test(&m, &pts).unwrap().outcome, Outcome::Fail);
    }

    #[test]
    fn conformal_dispatch() {
        let m = MetricField::diagonal(
            vec!["a".into(), "b".into()],
            Default::default(),
            vec![Interval::new(0.5, 2.0); 2],
            vec![parse("a^3").unwrap(), parse("exp(b)").unwrap()],
        );
        let pts = sample_points(&m, 3, 0).unwrap();
        let r = conformal_flatness_test(&m, &pts).unwrap();
        assert_eq!((r.kind, r.outcome), (ConformalKind::LowDim, Outcome::Pass));
        let schw = MetricField::diagonal(
            ["t", "r", "th", "ph"].iter().map(|s| s.to_string()).collect(),
            Default::default(),
            vec![
                Interval::new(0.0, 1.0),
                Interval::new(2.0, 5.0),
                Interval::new(0.5, 2.5),
                Interval::new(0.0, 1.0),
            ],
            ["-(1 - 1/r)", "1/(1 - 1/r)", "r^2", "r^2*sin(th)^2"]
                .iter()
                .map(|s| parse(s).unwrap())
                .collect(),
        );
        let pts = sample_points(&schw, 5, 0).unwrap();
        let r = conformal_flatness_test(&schw, &pts).unwrap();
        assert_eq!((r.kind, r.outcome), (ConformalKind::Weyl, Outcome::Fail));
    }

    #[test]
    fn verdict_json_is_deterministic_and_ordered() {
        let a = serde_json::to_string(&classify(&szekeres(0.0), 10, 3).unwrap().to_json()).unwrap();
        let b = serde_json::to_string(&classify(&szekeres(0.0), 10, 3).unwrap().to_json()).unwrap();
        assert_eq!(a, b);
        let keys = [
            "\"system\"",
            "\"n\"",
            "\"decision\"",
            "\"evidence\"",
            "\"seed\"",
            "\"points\"",
            "\"thresholds\"",
        ];
        let pos: Vec<usize> = keys.iter().map(|k| a.find(k).unwrap()).collect();
        assert!(pos.windows(2).all(|w| w[0] < w[1]), "{a}");
    }
}
