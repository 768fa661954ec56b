//! Worked systems shipped as fixtures, with the claims each one must meet.

use rayon::prelude::*;
use serde::Serialize;
use serde_json::{json, Value};

use crate::classify::{
    classify, classify_with, conformal_flatness_test, maximal_symmetry_test, Decision, LiftPair, Outcome,
};
use crate::curvature::{cotton_york, ricci_scalar, weyl};
use crate::dynamics::{
    affine_check, apply_transform, charge_drift, eom_rhs, integrate, metric_flatness_check,
    noether_charge_from_generator, null_lift_recover, project_to_constraint, straightness_residual, weak_noether_check,
    ChargeSpec, Trajectory,
};
use crate::error::{Error, Result};
use crate::expr::{parse, Expr};
use crate::metric::{Interval, MetricField};
use crate::sampling::{sample_points, SplitMix64};
use crate::systems::{flatten_1d, Convention, SystemSpec, Target, Transform, FIBER};

/// Initial data for catalog runs: `q̇0` is `direction` projected onto the
/// constraint surface.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DynamicsSetup {
    pub q0: Vec<f64>,
    pub direction: Vec<f64>,
    pub horizon: f64,
    pub dt: f64,
}

#[derive(Debug, Clone)]
pub struct CatalogEntry {
    pub name: &'static str,
    pub summary: &'static str,
    pub system: SystemSpec,
    /// Expected decision at the default parameters, if the entry claims one.
    pub expected: Option<Decision>,
    pub dynamics: Option<DynamicsSetup>,
    /// Transforms checked only for a constant-coefficient target metric.
    pub flatness_only: Vec<&'static str>,
    /// A metric the entry reproduces directly rather than derives.
    pub printed_metric: Option<MetricField>,
    pub notes: Vec<&'static str>,
}

impl CatalogEntry {
    pub fn to_json(&self) -> Value {
        json!({
            "name": self.name,
            "summary": self.summary,
            "system": self.system.to_json_value(),
            "expected_decision": self.expected,
            "dynamics": self.dynamics,
            "flatness_only_transforms": self.flatness_only,
            "printed_metric": self.printed_metric.as_ref().map(|m| {
                m.rows().iter().map(|r| r.iter().map(|e| e.to_string()).collect::<Vec<_>>()).collect::<Vec<_>>()
            }),
            "notes": self.notes,
        })
    }
}

pub const NAMES: [&str; 12] = [
    "corollary3-n3",
    "exponential-interaction",
    "exponential-interaction-real",
    "free-particle",
    "harmonic-oscillator-control",
    "one-dim-exp",
    "oscillator-corrections",
    "oscillator-corrections-printed-jacobi",
    "reissner-nordstrom",
    "szekeres",
    "szekeres-lambda",
    "szekeres-lambda-printed-jacobi",
];

pub fn catalog_list() -> Vec<&'static str> {
    NAMES.to_vec()
}

fn sys(text: &str) -> SystemSpec {
    SystemSpec::from_json(text).unwrap_or_else(|e| panic!("built-in system fails to load: {e}"))
}

fn ex(text: &str) -> Expr {
    parse(text).unwrap_or_else(|e| panic!("built-in expression `{text}`: {e}"))
}

const SZEKERES: &str = r#"{
    "name": "szekeres",
    "coordinates": ["u", "v"],
    "parameters": {"h": 0},
    "metric": [["0", "1"], ["1", "0"]],
    "potential": "v/u^2 - h",
    "domain": {"u": [0.5, 2], "v": [0.5, 2]},
    "guards": ["u", "v"],
    "transforms": [{"name": "rectifier", "target": "jacobi-canonical", "maps": {"U": "-1/u", "V": "v^2/2"}}],
    "generators": [
        {"name": "X1", "eta": {"v": "1/v"}},
        {"name": "X2", "eta": {"u": "u^2"}},
        {"name": "X3", "eta": {"u": "2*u", "v": "v"}}
    ]
}"#;

const SZEKERES_LAMBDA: &str = r#"{
    "name": "szekeres-lambda",
    "coordinates": ["u", "v"],
    "parameters": {"L": 1, "h": 0},
    "metric": [["0", "1"], ["1", "0"]],
    "potential": "v/u^2 - L*u*v - h",
    "domain": {"u": [0.5, 3], "v": [0.5, 3]},
    "guards": ["u", "v"],
    "transforms": [{"name": "rectifier", "target": "jacobi-canonical", "maps": {"U": "-1/u - L*u^2/2", "V": "v^2/2"}}]
}"#;

const SZEKERES_LAMBDA_PRINTED: &str = r#"{
    "name": "szekeres-lambda-printed-jacobi",
    "coordinates": ["u", "v"],
    "parameters": {"L": 1, "h": 1},
    "metric": [["0", "1"], ["1", "0"]],
    "potential": "v/u^2 - L*u*v - h",
    "domain": {"u": [0.5, 2], "v": [0.5, 2]},
    "guards": ["u", "v"],
    "transforms": [{"name": "printed-chart", "target": "jacobi-inverse", "maps": {"U": "-ln(1 - L*u^3)/(3*L)", "V": "ln(v)"}}]
}"#;

const EXPONENTIAL: &str = r#"{
    "name": "exponential-interaction",
    "coordinates": ["q1", "q2"],
    "parameters": {"V0": 1, "h": 0},
    "metric": [["1", "0"], ["0", "1"]],
    "potential": "V0*exp(q1 - q2) - h",
    "domain": {"q1": [-1, 1], "q2": [-1, 1]}
}"#;

const EXPONENTIAL_REAL: &str = r#"{
    "name": "exponential-interaction-real",
    "coordinates": ["q1", "q2"],
    "parameters": {"V0": -1, "h": 0},
    "metric": [["1", "0"], ["0", "1"]],
    "potential": "V0*exp(q1 - q2) - h",
    "domain": {"q1": [-1, 1], "q2": [-1, 1]},
    "transforms": [{"name": "rectifier", "target": "jacobi-canonical", "maps": {
        "X": "2*exp((q1 - q2)/2)*cos((q1 + q2)/2)",
        "Y": "2*exp((q1 - q2)/2)*sin((q1 + q2)/2)"
    }}]
}"#;

const OSCILLATOR: &str = r#"{
    "name": "oscillator-corrections",
    "coordinates": ["x", "y"],
    "parameters": {"k": 1},
    "metric": [["1", "0"], ["0", "1"]],
    "potential": "-(1 + k/4*(x^2 + y^2))^2",
    "domain": {"x": [-1, 1], "y": [-1, 1]}
}"#;

const REISSNER_NORDSTROM: &str = r#"{
    "name": "reissner-nordstrom",
    "coordinates": ["a", "b", "zeta"],
    "metric": [["0", "4*b", "0"], ["4*b", "4*a", "0"], ["0", "0", "4*b^2/a"]],
    "potential": "-2*a",
    "domain": {"a": [0.5, 2], "b": [0.5, 2], "zeta": [-1, 1]},
    "guards": ["a", "b"],
    "generators": [
        {"name": "X1", "eta": {"a": "1/(a*b)"}},
        {"name": "X2", "eta": {"a": "-a", "b": "b", "zeta": "-zeta"}},
        {"name": "X3", "eta": {"a": "-(a/(2*b) + zeta^2/(a*b))", "b": "1", "zeta": "-zeta/b"}},
        {"name": "X4", "eta": {"a": "-a*zeta", "b": "b*zeta", "zeta": "a^2/4 - zeta^2/2"}},
        {"name": "X5", "eta": {"a": "2*zeta/(a*b)", "zeta": "1/b"}},
        {"name": "X6", "eta": {"zeta": "1"}}
    ]
}"#;

const HARMONIC: &str = r#"{
    "name": "harmonic-oscillator-control",
    "coordinates": ["x", "y"],
    "parameters": {"w": 1, "h": 1},
    "metric": [["1", "0"], ["0", "1"]],
    "potential": "w^2/2*(x^2 + y^2) - h",
    "domain": {"x": [-2, 2], "y": [-2, 2]}
}"#;

const FREE: &str = r#"{
    "name": "free-particle",
    "coordinates": ["x", "y"],
    "metric": [["1", "0"], ["0", "1"]],
    "potential": "-0.5",
    "domain": {"x": [-5, 5], "y": [-5, 5]},
    "transforms": [{"name": "identity", "target": "jacobi-canonical", "maps": {"X": "x", "Y": "y"}}]
}"#;

const ONE_DIM_EXP: &str = r#"{
    "name": "one-dim-exp",
    "coordinates": ["q"],
    "metric": [["1"]],
    "potential": "exp(2*q)",
    "domain": {"q": [0, 1]}
}"#;

fn setup(q0: &[f64], direction: &[f64], horizon: f64) -> Option<DynamicsSetup> {
    Some(DynamicsSetup {
        q0: q0.to_vec(),
        direction: direction.to_vec(),
        horizon,
        dt: 1e-3,
    })
}

/// Printed form `g_uv = 1/(2F)` of the cosmological-constant Jacobi metric.
fn printed_lambda_metric(params: &std::collections::BTreeMap<String, f64>) -> MetricField {
    let f = ex("1/(2*(v/u^2 - L*u*v - h))");
    let mut m = MetricField::from_fn(
        vec!["u".into(), "v".into()],
        params.clone(),
        vec![Interval::new(0.5, 2.0); 2],
        |i, j| if i == j { Expr::c(0.0) } else { f.clone() },
    );
    m.guards = vec![ex("u"), ex("v"), ex("v/u^2 - L*u*v - h")];
    m
}

/// `δ / (1 + κr²/4)²` on `[-1, 1]²`.
fn printed_oscillator_metric(kappa: f64) -> MetricField {
    let mut m = MetricField::diagonal(
        vec!["x".into(), "y".into()],
        [("k".to_string(), kappa)].into(),
        vec![Interval::new(-1.0, 1.0); 2],
        vec![ex("1/(1 + k/4*(x^2 + y^2))^2"); 2],
    );
    m.guards = vec![ex("1 + k/4*(x^2 + y^2)")];
    m
}

fn with_fiber(m: &MetricField, gzz: Expr) -> MetricField {
    let n = m.dim();
    let mut coords = m.coords.clone();
    coords.push(FIBER.into());
    let mut domain = m.domain.clone();
    domain.push(Interval::new(-1.0, 1.0));
    let mut out = MetricField::from_fn(coords, m.params.clone(), domain, |i, j| {
        if i < n && j < n {
            m.component(i, j).clone()
        } else if i == j {
            gzz.clone()
        } else {
            Expr::c(0.0)
        }
    });
    out.guards = m.guards.clone();
    out
}

pub fn catalog_get(name: &str) -> Result<CatalogEntry> {
    let e = match name {
        "szekeres" => CatalogEntry {
            name: "szekeres",
            summary: "Szekeres system; linearizable on the h = 0 surface",
            system: sys(SZEKERES),
            expected: Some(Decision::Linearizable),
            dynamics: setup(&[1.0, 1.0], &[1.0, -1.0], 0.5),
            flatness_only: vec![],
            printed_metric: None,
            notes: vec![
                "rectifier U = -1/u, V = v^2/2 integrates du/u^2 = dU, v dv = dV",
                "generators X1-X3 give charges -p_v/v, -u^2 p_u, -(2u p_u + v p_v)",
            ],
        },
        "szekeres-lambda" => CatalogEntry {
            name: "szekeres-lambda",
            summary: "Szekeres system with cosmological constant, canonical Jacobi convention",
            system: sys(SZEKERES_LAMBDA),
            expected: Some(Decision::Linearizable),
            dynamics: setup(&[1.2, 1.0], &[1.0, 0.2], 0.5),
            flatness_only: vec![],
            printed_metric: None,
            notes: vec![
                "rectifier U = -1/u - L u^2/2 is the antiderivative of (1/u^2 - L u) for the V g metric",
                "initial point moved to u = 1.2: at (1,1) with L = 1, h = 0 the potential vanishes",
            ],
        },
        "szekeres-lambda-printed-jacobi" => {
            let system = sys(SZEKERES_LAMBDA_PRINTED);
            CatalogEntry {
                name: "szekeres-lambda-printed-jacobi",
                summary: "printed g/V-type Jacobi metric of the cosmological-constant Szekeres system",
                printed_metric: Some(printed_lambda_metric(system.params())),
                system,
                expected: None,
                dynamics: None,
                flatness_only: vec!["printed-chart"],
                notes: vec![
                    "a printed term F du dv contributes g_uv = F/2",
                    "Ricci scalar anchor R = -4(2 + L u^3) h / (u (v (L u^3 - 1) + h u^2))",
                    "printed chart U = -ln(1 - L u^3)/(3L), V = ln v flattens the g/V metric at h = 0; checked at L = -1",
                    "metric-level entry; no dynamics claims",
                ],
            }
        }
        "exponential-interaction" => CatalogEntry {
            name: "exponential-interaction",
            summary: "two-particle exponential interaction as printed (V0 = 1)",
            system: sys(EXPONENTIAL),
            expected: Some(Decision::Linearizable),
            dynamics: None,
            flatness_only: vec![],
            printed_metric: None,
            notes: vec![
                "with V0 > 0 and h = 0 the constraint surface is empty over the reals; metric-level claims only",
                "lift Cotton-York tensor vanishes at h = 0 and not for h = 1, V0 = 2",
            ],
        },
        "exponential-interaction-real" => CatalogEntry {
            name: "exponential-interaction-real",
            summary: "exponential interaction with V0 = -1, real constraint surface",
            system: sys(EXPONENTIAL_REAL),
            expected: Some(Decision::Linearizable),
            dynamics: setup(&[0.0, 0.0], &[1.0, 0.0], 0.5),
            flatness_only: vec![],
            printed_metric: None,
            notes: vec![
                "X + iY = 2 exp((q1 - q2 + i(q1 + q2))/2) is a flat chart of exp(q1 - q2)(dq1^2 + dq2^2)",
                "replaces the complex change of variables of the V0 > 0 case",
            ],
        },
        "oscillator-corrections" => CatalogEntry {
            name: "oscillator-corrections",
            summary: "two-dimensional oscillator with corrections, kappa = 1",
            system: sys(OSCILLATOR),
            expected: Some(Decision::Linearizable),
            dynamics: None,
            flatness_only: vec![],
            printed_metric: None,
            notes: vec![
                "canonical Jacobi metric -(1 + k r^2/4)^2 delta is not of constant curvature",
                "inverse convention gives minus the printed maximally symmetric metric",
            ],
        },
        "oscillator-corrections-printed-jacobi" => CatalogEntry {
            name: "oscillator-corrections-printed-jacobi",
            summary: "printed Jacobi metric delta/(1 + k r^2/4)^2 and its lift",
            system: sys(OSCILLATOR).with_params(&[("k".to_string(), 1.0)].into())?,
            expected: None,
            dynamics: None,
            flatness_only: vec![],
            printed_metric: Some(printed_oscillator_metric(1.0)),
            notes: vec![
                "printed metric drops the sign of V = -(1 + k r^2/4)^2",
                "constant curvature K = kappa for kappa in {1, 2, -1} on [-1,1]^2",
                "the printed conformally flat chart of the lift (X, Y, Z) is given only as an inverse map and did not reproduce numerically; recorded, not asserted",
                "metric-level entry; no dynamics claims",
            ],
        },
        "corollary3-n3" => {
            let mut system = crate::classify::corollary3_system(3, 1.0)?;
            system.name = "corollary3-n3".into();
            CatalogEntry {
                name: "corollary3-n3",
                summary: "n-dimensional corrected oscillator at n = 3, kappa = 1",
                system,
                expected: Some(Decision::Linearizable),
                dynamics: None,
                flatness_only: vec![],
                printed_metric: None,
                notes: vec![
                    "the plain lift is not conformally flat here; the inverse-convention lift is",
                ],
            }
        }
        "reissner-nordstrom" => CatalogEntry {
            name: "reissner-nordstrom",
            summary: "static spherically symmetric charged spacetime minisuperspace",
            system: sys(REISSNER_NORDSTROM),
            expected: Some(Decision::Linearizable),
            dynamics: setup(&[1.0, 1.0, 0.0], &[0.0, 1.0, 0.3], 0.5),
            flatness_only: vec![],
            printed_metric: None,
            notes: vec![
                "g_ab = 4b, g_bb = 4a, g_zeta zeta = 4 b^2/a from the kinetic term 8b a'b' + 4a b'^2 + 4(b^2/a) zeta'^2",
                "generator components printed with z are read as zeta",
                "boundary terms are not given; charges use f = 0 and are reported without a conservation claim",
                "no rectifying transform: the map for b is not specified",
            ],
        },
        "harmonic-oscillator-control" => CatalogEntry {
            name: "harmonic-oscillator-control",
            summary: "isotropic oscillator with h = 1; expected not linearizable",
            system: sys(HARMONIC),
            expected: Some(Decision::NotLinearizable),
            dynamics: setup(&[1.5, 1.5], &[1.0, 0.0], 0.5),
            flatness_only: vec![],
            printed_metric: None,
            notes: vec!["V > 0 at the initial point, so projection onto the constraint must fail"],
        },
        "free-particle" => CatalogEntry {
            name: "free-particle",
            summary: "free particle in the plane with V = -1/2",
            system: sys(FREE),
            expected: Some(Decision::Linearizable),
            dynamics: setup(&[0.0, 0.0], &[1.0, 0.0], 1.0),
            flatness_only: vec![],
            printed_metric: None,
            notes: vec!["trivial control"],
        },
        "one-dim-exp" => CatalogEntry {
            name: "one-dim-exp",
            summary: "one-dimensional system with V = exp(2q)",
            system: sys(ONE_DIM_EXP),
            expected: Some(Decision::Linearizable),
            dynamics: None,
            flatness_only: vec![],
            printed_metric: None,
            notes: vec!["every one-dimensional system is linearizable; flat coordinate Y = 1 - exp(-q)"],
        },
        other => return Err(Error::UnknownEntry(other.to_string())),
    };
    Ok(e)
}

// ---------------------------------------------------------------------------
// checks shared with the command line

/// One pass/fail item with its measurement.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Check {
    pub name: String,
    pub measured: Value,
    pub expected: Value,
    /// `None` for informational items.
    pub pass: Option<bool>,
}

impl Check {
    fn below(name: impl Into<String>, measured: f64, bound: f64) -> Check {
        Check {
            name: name.into(),
            measured: json!(measured),
            expected: json!(format!("< {bound:e}")),
            pass: Some(measured < bound),
        }
    }

    fn failed(name: impl Into<String>, err: &Error) -> Check {
        Check {
            name: name.into(),
            measured: json!(err.to_string()),
            expected: Value::Null,
            pass: Some(false),
        }
    }
}

/// Project the setup's direction and integrate.
pub fn run_dynamics(s: &SystemSpec, d: &DynamicsSetup) -> Result<Trajectory> {
    let qd0 = project_to_constraint(s, &d.q0, &d.direction)?;
    integrate(s, &d.q0, &qd0, d.horizon, d.dt)
}

fn target_metric(s: &SystemSpec, t: Target) -> Result<MetricField> {
    match t {
        Target::JacobiCanonical => Ok(s.jacobi_metric(Convention::Canonical)),
        Target::JacobiInverse => Ok(s.jacobi_metric(Convention::Inverse)),
        Target::Lift => s.eisenhart_lift(FIBER),
    }
}

/// Straightening checks for every transform along the run, or a
/// constant-coefficient check of the target metric when no run is given or
/// the transform is listed in `flatness_only`.
pub fn verify_transforms(
    s: &SystemSpec,
    run: Option<&DynamicsSetup>,
    flatness_only: &[&str],
    samples: usize,
    seed: u64,
) -> Result<Vec<Check>> {
    if s.transforms.is_empty() {
        return Err(Error::Precondition(format!("system {} has no transforms", s.name)));
    }
    let mut out = Vec::new();
    let traj = match run {
        Some(d) => Some(run_dynamics(s, d)?),
        None => None,
    };
    for tr in &s.transforms {
        let straight_mode = traj.is_some() && tr.target != Target::Lift && !flatness_only.contains(&tr.name.as_str());
        if straight_mode {
            let traj = traj.as_ref().expect("checked");
            out.extend(straightening_checks(s, tr, traj));
        } else {
            let m = target_metric(s, tr.target)?;
            let check = sample_points(&m, samples, seed).and_then(|pts| metric_flatness_check(&m, tr, &pts));
            out.push(match check {
                Ok(r) => Check::below(format!("{}: metric coefficient spread", tr.name), r, 1e-8),
                Err(e) => Check::failed(format!("{}: metric coefficient spread", tr.name), &e),
            });
        }
    }
    Ok(out)
}

fn straightening_checks(s: &SystemSpec, tr: &Transform, traj: &Trajectory) -> Vec<Check> {
    let mut out = Vec::new();
    let cols = match apply_transform(tr, traj, s.params()) {
        Ok(c) => c,
        Err(e) => return vec![Check::failed(format!("{}: apply", tr.name), &e)],
    };
    if let Some(t) = cols.truncated_at.or(traj.truncated_at) {
        out.push(Check {
            name: format!("{}: untruncated run", tr.name),
            measured: json!(t),
            expected: json!("no truncation"),
            pass: Some(false),
        });
    }
    match straightness_residual(&cols.rows) {
        Ok(r) => out.push(Check::below(format!("{}: straightness", tr.name), r, 1e-6)),
        Err(e) => out.push(Check::failed(format!("{}: straightness", tr.name), &e)),
    }
    if tr.target == Target::JacobiCanonical {
        let columns: Vec<Vec<f64>> = (0..cols.names.len()).map(|i| cols.column(i)).collect();
        match affine_check(&columns, &traj.tau[..cols.rows.len()]) {
            Ok(r) => out.push(Check::below(format!("{}: affine in Jacobi time", tr.name), r, 1e-5)),
            Err(e) => out.push(Check::failed(format!("{}: affine in Jacobi time", tr.name), &e)),
        }
    }
    out
}

/// Drift of every generator's charge along the run. With `assert` false
/// the items are informational.
pub fn verify_charges(s: &SystemSpec, run: &DynamicsSetup, assert: bool) -> Result<Vec<Check>> {
    if s.generators.is_empty() {
        return Err(Error::Precondition(format!("system {} has no generators", s.name)));
    }
    let traj = run_dynamics(s, run)?;
    let mut out = Vec::new();
    for g in &s.generators {
        let ch = noether_charge_from_generator(s, g)?;
        let name = format!("{}: drift of {}", g.name, ch.expr);
        match charge_drift(s, &ch, &traj) {
            Ok((_, d)) => {
                let mut c = Check::below(name, d.normalized, 1e-7);
                if !assert {
                    c.pass = None;
                }
                out.push(c);
            }
            Err(e) => out.push(Check::failed(name, &e)),
        }
    }
    Ok(out)
}

/// Lift recovery for `I0 = ±1` and rejection of `I0 = 2`.
pub fn verify_lift_recovery(s: &SystemSpec, run: &DynamicsSetup) -> Result<Vec<Check>> {
    let qd0 = project_to_constraint(s, &run.q0, &run.direction)?;
    let mut out = Vec::new();
    for i0 in [1.0, -1.0] {
        let name = format!("I0 = {i0}: projection residual");
        match null_lift_recover(s, i0, &run.q0, &qd0, run.horizon, run.dt) {
            Ok(r) => out.push(Check::below(name, r.residual, 1e-8)),
            Err(e) => out.push(Check::failed(name, &e)),
        }
    }
    let rejected = matches!(
        null_lift_recover(s, 2.0, &run.q0, &qd0, run.horizon, run.dt),
        Err(Error::Precondition(_))
    );
    out.push(Check {
        name: "I0 = 2 rejected".into(),
        measured: json!(rejected),
        expected: json!(true),
        pass: Some(rejected),
    });
    Ok(out)
}

/// Observed order `log2(|y(h) − y(h/2)| / |y(h/2) − y(h/4)|)` of the
/// integrator on `run`.
pub fn rk4_order(s: &SystemSpec, run: &DynamicsSetup, h: f64) -> Result<f64> {
    let qd0 = project_to_constraint(s, &run.q0, &run.direction)?;
    let end = |dt: f64| -> Result<Vec<f64>> {
        let tr = integrate(s, &run.q0, &qd0, run.horizon, dt)?;
        if tr.truncated_at.is_some() {
            return Err(Error::Precondition("run truncated".into()));
        }
        let k = tr.len() - 1;
        Ok(tr.q[k].iter().chain(&tr.qd[k]).copied().collect())
    };
    let (a, b, c) = (end(h)?, end(h / 2.0)?, end(h / 4.0)?);
    let dist = |x: &[f64], y: &[f64]| x.iter().zip(y).map(|(p, q)| (p - q).powi(2)).sum::<f64>().sqrt();
    Ok((dist(&a, &b) / dist(&b, &c)).log2())
}

// ---------------------------------------------------------------------------
// suite

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Claim {
    pub entry: String,
    pub claim: String,
    pub provenance: &'static str,
    pub expected: Value,
    pub measured: Value,
    pub tolerance: Value,
    /// `None` for informational claims.
    pub pass: Option<bool>,
}

/// Samples per classification.
pub const CLASSIFY_SAMPLES: usize = 20;
/// Samples per curvature anchor.
pub const ANCHOR_SAMPLES: usize = 50;

struct Sink {
    entry: &'static str,
    claims: Vec<Claim>,
}

impl Sink {
    fn push(
        &mut self,
        claim: &str,
        provenance: &'static str,
        expected: Value,
        measured: Value,
        tolerance: Value,
        pass: Option<bool>,
    ) {
        self.claims.push(Claim {
            entry: self.entry.into(),
            claim: claim.into(),
            provenance,
            expected,
            measured,
            tolerance,
            pass,
        });
    }

    fn check(&mut self, prefix: &str, provenance: &'static str, c: Check) {
        let name = if prefix.is_empty() {
            c.name
        } else {
            format!("{prefix}{}", c.name)
        };
        self.push(&name, provenance, c.expected, c.measured, Value::Null, c.pass);
    }

    fn checks(&mut self, prefix: &str, provenance: &'static str, r: Result<Vec<Check>>) {
        match r {
            Ok(cs) => cs.into_iter().for_each(|c| self.check(prefix, provenance, c)),
            Err(e) => self.check(prefix, provenance, Check::failed("run", &e)),
        }
    }

    fn below(&mut self, claim: &str, provenance: &'static str, r: Result<f64>, bound: f64) {
        match r {
            Ok(v) => self.push(
                claim,
                provenance,
                json!(format!("< {bound:e}")),
                json!(v),
                json!(bound),
                Some(v < bound),
            ),
            Err(e) => self.push(
                claim,
                provenance,
                json!(format!("< {bound:e}")),
                json!(e.to_string()),
                json!(bound),
                Some(false),
            ),
        }
    }

    fn above(&mut self, claim: &str, provenance: &'static str, r: Result<f64>, bound: f64) {
        match r {
            Ok(v) => self.push(
                claim,
                provenance,
                json!(format!("> {bound:e}")),
                json!(v),
                json!(bound),
                Some(v > bound),
            ),
            Err(e) => self.push(
                claim,
                provenance,
                json!(format!("> {bound:e}")),
                json!(e.to_string()),
                json!(bound),
                Some(false),
            ),
        }
    }

    fn near(&mut self, claim: &str, provenance: &'static str, r: Result<f64>, expected: f64, tol: f64) {
        match r {
            Ok(v) => self.push(
                claim,
                provenance,
                json!(expected),
                json!(v),
                json!(tol),
                Some((v - expected).abs() <= tol),
            ),
            Err(e) => self.push(
                claim,
                provenance,
                json!(expected),
                json!(e.to_string()),
                json!(tol),
                Some(false),
            ),
        }
    }

    fn decision(
        &mut self,
        claim: &str,
        provenance: &'static str,
        s: Result<SystemSpec>,
        expected: Decision,
        seed: u64,
    ) {
        let got = s.and_then(|s| classify(&s, CLASSIFY_SAMPLES, seed));
        match got {
            Ok(v) => self.push(
                claim,
                provenance,
                json!(expected),
                json!(v.decision),
                Value::Null,
                Some(v.decision == expected),
            ),
            Err(e) => self.push(
                claim,
                provenance,
                json!(expected),
                json!(e.to_string()),
                Value::Null,
                Some(false),
            ),
        }
    }
}

fn set(s: &SystemSpec, kv: &[(&str, f64)]) -> Result<SystemSpec> {
    s.with_params(&kv.iter().map(|(k, v)| (k.to_string(), *v)).collect())
}

/// Decision with the standard lifts against rescaled combined lifts.
pub fn convention_free(s: &SystemSpec, samples: usize, seed: u64) -> Result<(Decision, Decision)> {
    let standard = classify(s, samples, seed)?.decision;
    let first = Expr::sym(s.coords()[0].clone());
    let factor = Expr::mul(
        Expr::c(2.0),
        Expr::Call(crate::expr::Func::Exp, Box::new(Expr::div(first, Expr::c(3.0)))),
    );
    let lifts = LiftPair {
        canonical: s
            .jacobi_eisenhart_lift(Convention::Canonical, FIBER)?
            .conformal_rescale(&factor),
        inverse: s
            .jacobi_eisenhart_lift(Convention::Inverse, FIBER)?
            .conformal_rescale(&factor),
    };
    let rescaled = classify_with(s, &lifts, samples, seed)?.decision;
    Ok((standard, rescaled))
}

fn entry_claims(e: &CatalogEntry, seed: u64) -> Vec<Claim> {
    let mut k = Sink {
        entry: e.name,
        claims: Vec::new(),
    };
    let s = &e.system;
    if let Some(expected) = e.expected {
        let prov = if matches!(e.name, "free-particle") {
            "trivial"
        } else {
            "paper"
        };
        k.decision("classify", prov, Ok(s.clone()), expected, seed);
        match convention_free(s, CLASSIFY_SAMPLES, seed) {
            Ok((a, b)) => k.push(
                "decision unchanged under rescaled combined lifts",
                "derived",
                json!(a),
                json!(b),
                Value::Null,
                Some(a == b),
            ),
            Err(err) => k.check(
                "",
                "derived",
                Check::failed("decision unchanged under rescaled combined lifts", &err),
            ),
        }
    }

    match e.name {
        "szekeres" => szekeres_claims(&mut k, e, seed),
        "szekeres-lambda" => {
            let r = eom_rhs(s, &[1.0, 1.0], &[0.0, 0.0]);
            k.near(
                "eom u'' at (1,1)",
                "derived",
                r.as_ref().map(|a| a[0]).map_err(clone_err),
                0.0,
                1e-12,
            );
            k.near(
                "eom v'' at (1,1)",
                "derived",
                r.as_ref().map(|a| a[1]).map_err(clone_err),
                3.0,
                1e-12,
            );
        }
        "szekeres-lambda-printed-jacobi" => printed_lambda_claims(&mut k, e, seed),
        "exponential-interaction" => {
            let lift = |kv: &[(&str, f64)]| set(s, kv).and_then(|s| s.eisenhart_lift(FIBER));
            k.below(
                "lift Cotton-York max at h = 0",
                "paper",
                lift(&[("h", 0.0)]).and_then(|m| cotton_stat(&m, seed, f64::max)),
                1e-9,
            );
            k.above(
                "lift Cotton-York min at h = 1, V0 = 2",
                "derived",
                lift(&[("h", 1.0), ("V0", 2.0)]).and_then(|m| cotton_stat(&m, seed, f64::min)),
                1e-3,
            );
        }
        "oscillator-corrections" => {
            let canon = MetricField::diagonal(
                s.coords().to_vec(),
                s.params().clone(),
                s.metric.domain.clone(),
                vec![ex("(1 + k/4*(x^2 + y^2))^2"); 2],
            );
            let spread = sample_points(&canon, ANCHOR_SAMPLES, seed)
                .and_then(|p| maximal_symmetry_test(&canon, &p))
                .map(|r| r.k_spread());
            k.above("(1 + k r^2/4)^2 delta: K spread", "derived", spread, 1e-2);
        }
        "oscillator-corrections-printed-jacobi" => printed_oscillator_claims(&mut k, seed),
        "corollary3-n3" => {
            k.decision(
                "kappa = 0 is a free particle",
                "trivial",
                crate::classify::corollary3_system(3, 0.0),
                Decision::Linearizable,
                seed,
            );
            let n2 = crate::classify::corollary3_system(2, 1.0);
            let osc = sys(OSCILLATOR);
            let same = n2.map(|c| {
                let mut rng = SplitMix64::new(seed);
                (0..20).all(|_| {
                    let p = [rng.uniform(-1.0, 1.0), rng.uniform(-1.0, 1.0)];
                    c.potential_at(&p).ok() == osc.potential_at(&p).ok()
                        && c.metric.values(&p).ok() == osc.metric.values(&p).ok()
                })
            });
            let same = same.unwrap_or(false);
            k.push(
                "n = 2 matches oscillator-corrections",
                "paper",
                json!(true),
                json!(same),
                Value::Null,
                Some(same),
            );
        }
        "reissner-nordstrom" => rn_claims(&mut k, e, seed),
        "harmonic-oscillator-control" => {
            let d = e.dynamics.as_ref().expect("setup");
            let r = project_to_constraint(s, &d.q0, &d.direction);
            let ok = matches!(r, Err(Error::EmptyConstraintSurface { .. }));
            let measured = match r {
                Ok(v) => json!(v),
                Err(e) => json!(e.to_string()),
            };
            k.push(
                "projection where V > 0 fails",
                "trivial",
                json!("empty constraint surface"),
                measured,
                Value::Null,
                Some(ok),
            );
        }
        "free-particle" => {
            let d = e.dynamics.as_ref().expect("setup");
            k.below(
                "raw straightness",
                "trivial",
                run_dynamics(s, d).and_then(|t| straightness_residual(&t.q)),
                1e-12,
            );
        }
        "one-dim-exp" => {
            let f = flatten_1d(s);
            let err = f.and_then(|f| {
                let mut worst = 0.0f64;
                for i in 0..=50 {
                    let q = i as f64 / 50.0;
                    worst = worst.max((f.eval(q)? - (1.0 - (-q).exp())).abs());
                }
                Ok(worst)
            });
            k.below("flat coordinate matches 1 - exp(-q)", "derived", err, 1e-9);
        }
        _ => {}
    }

    // dynamics shared by every entry with real initial data
    if let Some(d) = &e.dynamics {
        if e.name != "harmonic-oscillator-control" {
            k.below(
                "max |H| along run",
                "derived",
                run_dynamics(s, d).map(|t| t.max_abs_h()),
                1e-8,
            );
            if !s.transforms.is_empty() {
                k.checks(
                    "transform ",
                    "derived",
                    verify_transforms(s, Some(d), &e.flatness_only, ANCHOR_SAMPLES, seed),
                );
                if matches!(e.name, "szekeres" | "szekeres-lambda") {
                    k.above(
                        "raw straightness",
                        "derived",
                        run_dynamics(s, d).and_then(|t| straightness_residual(&t.q)),
                        1e-2,
                    );
                }
            }
            if matches!(e.name, "exponential-interaction-real" | "free-particle") {
                k.checks("lift recovery ", "derived", verify_lift_recovery(s, d));
            }
        }
    }
    k.claims
}

fn clone_err(e: &Error) -> Error {
    Error::Precondition(e.to_string())
}

fn cotton_stat(m: &MetricField, seed: u64, fold: fn(f64, f64) -> f64) -> Result<f64> {
    let pts = sample_points(m, ANCHOR_SAMPLES, seed)?;
    let mut acc: Option<f64> = None;
    for p in &pts {
        let r = cotton_york(m, p)?.1;
        acc = Some(acc.map_or(r, |a| fold(a, r)));
    }
    Ok(acc.unwrap_or(0.0))
}

fn szekeres_claims(k: &mut Sink, e: &CatalogEntry, seed: u64) {
    let s = &e.system;
    let d = e.dynamics.as_ref().expect("setup");
    k.decision(
        "classify at h = 1",
        "derived",
        set(s, &[("h", 1.0)]),
        Decision::NotLinearizable,
        seed,
    );
    let r = eom_rhs(s, &[1.0, 1.0], &[0.0, 0.0]);
    k.near(
        "eom u'' at (1,1)",
        "paper",
        r.as_ref().map(|a| a[0]).map_err(clone_err),
        -1.0,
        1e-12,
    );
    k.near(
        "eom v'' at (1,1)",
        "paper",
        r.as_ref().map(|a| a[1]).map_err(clone_err),
        2.0,
        1e-12,
    );
    let p = project_to_constraint(s, &[1.0, 1.0], &[1.0, -1.0]);
    let ok = p.as_ref().map(|v| v == &[1.0, -1.0]).unwrap_or(false);
    k.push(
        "projection of (1,-1) at (1,1)",
        "derived",
        json!([1.0, -1.0]),
        p.map(|v| json!(v)).unwrap_or_else(|e| json!(e.to_string())),
        Value::Null,
        Some(ok),
    );
    k.checks("charge ", "derived", verify_charges(s, d, true));
    let dilation = ChargeSpec {
        name: "dilation".into(),
        expr: ex("v*p_v + 2*u*p_u"),
        note: String::new(),
    };
    match weak_noether_check(s, &dilation, ANCHOR_SAMPLES, seed) {
        Ok(w) => {
            k.push(
                "weak conservation of v p_v + 2u p_u: on-shell bracket",
                "derived",
                json!("< 1e-9"),
                json!(w.onshell_max),
                json!(1e-9),
                Some(w.onshell_max < 1e-9),
            );
            let chi = w.chi.map(f64::abs);
            k.push(
                "weak conservation of v p_v + 2u p_u: |chi|",
                "derived",
                json!(3.0),
                json!(w.chi),
                json!(1e-6),
                Some(chi.is_some_and(|c| (c - 3.0).abs() < 1e-6)),
            );
        }
        Err(err) => k.check(
            "",
            "derived",
            Check::failed("weak conservation of v p_v + 2u p_u", &err),
        ),
    }
    k.checks("lift recovery ", "derived", verify_lift_recovery(s, d));
    let order = rk4_order(s, &DynamicsSetup { dt: 0.05, ..d.clone() }, 0.05);
    match order {
        Ok(o) => k.push(
            "RK4 observed order",
            "derived",
            json!("[3.8, 4.2]"),
            json!(o),
            json!(0.2),
            Some((3.8..=4.2).contains(&o)),
        ),
        Err(err) => k.check("", "derived", Check::failed("RK4 observed order", &err)),
    }
}

/// Closed form of the Ricci scalar of the printed metric.
pub fn printed_lambda_ricci(u: f64, v: f64, l: f64, h: f64) -> f64 {
    -4.0 * (2.0 + l * u.powi(3)) * h / (u * (v * (l * u.powi(3) - 1.0) + h * u * u))
}

/// Largest relative deviation of the numeric Ricci scalar from the closed
/// form over `count` random `(u, v, L, h)`, `L ∈ [-1,1]`, `h ∈ [0.5,2]`.
pub fn printed_lambda_anchor(count: usize, seed: u64) -> Result<f64> {
    let mut rng = SplitMix64::new(seed);
    let mut worst = 0.0f64;
    let mut done = 0;
    let mut tries = 0;
    while done < count {
        tries += 1;
        if tries > 1000 * count {
            return Err(Error::SamplingExhausted {
                accepted: done,
                rejected: tries - done,
                tightest: "v/u^2 - L*u*v - h".into(),
            });
        }
        let (l, h) = (rng.uniform(-1.0, 1.0), rng.uniform(0.5, 2.0));
        let (u, v) = (rng.uniform(0.5, 2.0), rng.uniform(0.5, 2.0));
        let f = v / (u * u) - l * u * v - h;
        if f.abs() < 0.05 {
            continue;
        }
        let m = printed_lambda_metric(&[("L".to_string(), l), ("h".to_string(), h)].into());
        let r = ricci_scalar(&m, &[u, v])?.1.value();
        let want = printed_lambda_ricci(u, v, l, h);
        worst = worst.max((r - want).abs() / want.abs().max(1e-300));
        done += 1;
    }
    Ok(worst)
}

fn printed_lambda_claims(k: &mut Sink, e: &CatalogEntry, seed: u64) {
    let spot = ricci_scalar(e.printed_metric.as_ref().expect("printed"), &[1.0, 2.0]).map(|(_, r)| r.value());
    k.near("Ricci scalar at (1,2), L = 1, h = 1", "paper", spot, -12.0, 1e-10);
    k.below(
        "Ricci scalar vs closed form, 20 random (u,v,L,h)",
        "paper",
        printed_lambda_anchor(20, seed),
        1e-8,
    );
    let s = set(&e.system, &[("L", -1.0), ("h", 0.0)]);
    match s {
        Ok(s) => {
            let m = printed_lambda_metric(s.params());
            let tr = s.transform("printed-chart").expect("transform").clone();
            let r = sample_points(&m, ANCHOR_SAMPLES, seed).and_then(|p| metric_flatness_check(&m, &tr, &p));
            k.below(
                "printed chart has constant coefficients at L = -1, h = 0",
                "paper",
                r,
                1e-8,
            );
        }
        Err(err) => k.check("", "paper", Check::failed("printed chart", &err)),
    }
}

fn printed_oscillator_claims(k: &mut Sink, seed: u64) {
    for kappa in [1.0, 2.0, -1.0] {
        let m = printed_oscillator_metric(kappa);
        let report = sample_points(&m, ANCHOR_SAMPLES, seed).and_then(|p| maximal_symmetry_test(&m, &p));
        match report {
            Ok(r) => {
                k.push(
                    &format!("kappa = {kappa}: maximally symmetric"),
                    "paper",
                    json!("pass"),
                    json!(r.outcome),
                    json!(crate::classify::PASS),
                    Some(r.outcome == Outcome::Pass),
                );
                k.near(&format!("kappa = {kappa}: K"), "derived", Ok(r.k_mean), kappa, 1e-9);
            }
            Err(err) => k.check("", "paper", Check::failed(format!("kappa = {kappa}"), &err)),
        }
        let lift = with_fiber(&m, Expr::c(1.0));
        let r = sample_points(&lift, ANCHOR_SAMPLES, seed).and_then(|p| conformal_flatness_test(&lift, &p));
        k.below(
            &format!("kappa = {kappa}: lift Cotton-York max"),
            "paper",
            r.map(|r| r.residual_max),
            1e-9,
        );
    }
    k.push(
        "printed chart of the lift",
        "paper",
        json!("conformally flat chart"),
        json!("not reproduced; given only as an inverse map"),
        Value::Null,
        None,
    );
}

fn rn_claims(k: &mut Sink, e: &CatalogEntry, seed: u64) {
    let s = &e.system;
    let g = s.metric.values(&[1.0, 2.0, 0.0]).map(|g| g[8]);
    k.near("g_zeta zeta at (a,b) = (1,2)", "paper", g, 16.0, 0.0);
    let lift = s.eisenhart_lift(FIBER);
    let w = lift.and_then(|m| {
        let pts = sample_points(&m, ANCHOR_SAMPLES, seed)?;
        let mut worst = 0.0f64;
        for p in &pts {
            worst = worst.max(weyl(&m, p)?.1);
        }
        Ok(worst)
    });
    k.below("lift Weyl max", "paper", w, 1e-9);
    match classify(s, CLASSIFY_SAMPLES, seed) {
        Ok(v) => {
            k.push(
                "implied Noether count",
                "paper",
                json!(6),
                json!(v.implied_noether_count()),
                Value::Null,
                Some(v.implied_noether_count() == Some(6)),
            );
            for ev in &v.per_convention {
                k.push(
                    &format!("Jacobi {} constant curvature", ev.convention),
                    "derived",
                    Value::Null,
                    json!(ev.max_sym.as_ref().map(|m| m.to_json())),
                    Value::Null,
                    None,
                );
            }
        }
        Err(err) => k.check("", "paper", Check::failed("classify", &err)),
    }
    let d = e.dynamics.as_ref().expect("setup");
    k.checks("charge ", "paper", verify_charges(s, d, false));
}

/// Run every entry's claims. Entries run concurrently and report in name
/// order.
pub fn run_all(seed: u64) -> Vec<Claim> {
    let per: Vec<Vec<Claim>> = NAMES
        .par_iter()
        .map(|name| match catalog_get(name) {
            Ok(e) => entry_claims(&e, seed),
            Err(err) => vec![Claim {
                entry: name.to_string(),
                claim: "load".into(),
                provenance: "trivial",
                expected: Value::Null,
                measured: json!(err.to_string()),
                tolerance: Value::Null,
                pass: Some(false),
            }],
        })
        .collect();
    per.into_iter().flatten().collect()
}

pub fn all_pass(claims: &[Claim]) -> bool {
    claims.iter().all(|c| c.pass != Some(false))
}
