//! Constrained dynamics at unit lapse, null-lift recovery, Noether charges
//! and straightening checks.
//!
//! The equations of motion are `q̈^i = −Γ^i_jk q̇^j q̇^k − g^ij ∂_j V` with the
//! constraint `H = ½ g_ij q̇^i q̇^j + V = 0`. Momenta are `p_i = g_ij q̇^j`.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde_json::{json, Value};

use crate::curvature::christoffel;
use crate::error::{Error, Result};
use crate::expr::{eval_jet, eval_scalar, Expr};
use crate::metric::{Interval, MetricField};
use crate::sampling::{is_admissible, sample_points, SplitMix64};
use crate::systems::{Generator, SystemSpec, Target, Transform, FIBER};

/// A metric and potential driving geodesic-with-potential motion.
#[derive(Debug, Clone)]
struct Flow {
    metric: MetricField,
    potential: Expr,
}

impl Flow {
    fn of(s: &SystemSpec) -> Flow {
        Flow {
            metric: s.metric.clone(),
            potential: s.potential.clone(),
        }
    }

    fn n(&self) -> usize {
        self.metric.dim()
    }

    fn accel(&self, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
        let n = self.n();
        let conn = christoffel(&self.metric, q)?;
        let dv = eval_jet(&self.potential, q, &self.metric.coords, &self.metric.params)?;
        let ginv = conn.inverse_values();
        let mut out = vec![0.0; n];
        for (i, slot) in out.iter_mut().enumerate() {
            let mut a = 0.0;
            for j in 0..n {
                for k in 0..n {
                    a -= conn.gamma_at(i, j, k).value() * qd[j] * qd[k];
                }
                a -= ginv[i * n + j] * dv.d1(j);
            }
            if !a.is_finite() {
                return Err(Error::SingularMetric {
                    point: self.metric.describe(q),
                });
            }
            *slot = a;
        }
        Ok(out)
    }

    fn potential_at(&self, q: &[f64]) -> Result<f64> {
        Ok(eval_scalar(&self.potential, &self.metric.env(q))?)
    }

    fn energy(&self, q: &[f64], qd: &[f64]) -> Result<f64> {
        Ok(0.5 * quad(&self.metric.values(q)?, qd, qd) + self.potential_at(q)?)
    }

    fn admissible(&self, q: &[f64]) -> bool {
        is_admissible(&self.metric, q) && self.potential_at(q).is_ok()
    }

    /// Classical RK4; truncates at the first inadmissible stage.
    fn integrate(&self, name: &str, q0: &[f64], qd0: &[f64], horizon: f64, dt: f64) -> Result<Trajectory> {
        let n = self.n();
        if q0.len() != n || qd0.len() != n {
            return Err(Error::Dimension {
                op: "integrate",
                expected: n.to_string(),
                got: q0.len().min(qd0.len()),
            });
        }
        if !(dt > 0.0 && dt.is_finite() && horizon >= 0.0 && horizon.is_finite()) {
            return Err(Error::Precondition(format!(
                "need dt > 0 and T >= 0, got dt={dt}, T={horizon}"
            )));
        }
        if !self.metric.in_domain(q0) {
            return Err(Error::Precondition(format!(
                "initial point {} outside the domain",
                self.metric.describe(q0)
            )));
        }
        if !self.admissible(q0) {
            return Err(Error::Precondition(format!(
                "initial point {} violates a guard or the metric is singular",
                self.metric.describe(q0)
            )));
        }
        self.accel(q0, qd0)?;

        let steps = (horizon / dt).round() as usize;
        let mut traj = Trajectory {
            system: name.to_string(),
            coords: self.metric.coords.clone(),
            t: vec![0.0],
            q: vec![q0.to_vec()],
            qd: vec![qd0.to_vec()],
            h: vec![self.energy(q0, qd0)?],
            tau: vec![0.0],
            extra: Vec::new(),
            truncated_at: None,
        };
        let mut v_prev = self.potential_at(q0)?;
        let (mut q, mut qd) = (q0.to_vec(), qd0.to_vec());
        for k in 1..=steps {
            match self.step(&q, &qd, dt) {
                Some((q1, qd1)) => {
                    let (h, v) = match (self.energy(&q1, &qd1), self.potential_at(&q1)) {
                        (Ok(h), Ok(v)) => (h, v),
                        _ => {
                            traj.truncated_at = Some(k as f64 * dt);
                            break;
                        }
                    };
                    let tau = traj.tau[k - 1] + 0.5 * dt * (v_prev + v);
                    v_prev = v;
                    traj.t.push(k as f64 * dt);
                    traj.q.push(q1.clone());
                    traj.qd.push(qd1.clone());
                    traj.h.push(h);
                    traj.tau.push(tau);
                    q = q1;
                    qd = qd1;
                }
                None => {
                    traj.truncated_at = Some(k as f64 * dt);
                    break;
                }
            }
        }
        Ok(traj)
    }

    fn step(&self, q: &[f64], qd: &[f64], dt: f64) -> Option<(Vec<f64>, Vec<f64>)> {
        let n = self.n();
        let shift =
            |base: &[f64], d: &[f64], c: f64| -> Vec<f64> { base.iter().zip(d).map(|(b, x)| b + c * x).collect() };
        let stage = |q: &[f64], qd: &[f64]| -> Option<Vec<f64>> {
            if !self.admissible(q) {
                return None;
            }
            self.accel(q, qd).ok()
        };
        let k1q = qd.to_vec();
        let k1v = stage(q, qd)?;
        let q2 = shift(q, &k1q, 0.5 * dt);
        let k2q = shift(qd, &k1v, 0.5 * dt);
        let k2v = stage(&q2, &k2q)?;
        let q3 = shift(q, &k2q, 0.5 * dt);
        let k3q = shift(qd, &k2v, 0.5 * dt);
        let k3v = stage(&q3, &k3q)?;
        let q4 = shift(q, &k3q, dt);
        let k4q = shift(qd, &k3v, dt);
        let k4v = stage(&q4, &k4q)?;
        let mut q1 = vec![0.0; n];
        let mut qd1 = vec![0.0; n];
        for i in 0..n {
            q1[i] = q[i] + dt / 6.0 * (k1q[i] + 2.0 * k2q[i] + 2.0 * k3q[i] + k4q[i]);
            qd1[i] = qd[i] + dt / 6.0 * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
        }
        if !self.admissible(&q1) || qd1.iter().any(|x| !x.is_finite()) {
            return None;
        }
        Some((q1, qd1))
    }
}

fn quad(g: &[f64], a: &[f64], b: &[f64]) -> f64 {
    let n = a.len();
    let mut s = 0.0;
    for i in 0..n {
        for j in 0..n {
            s += g[i * n + j] * a[i] * b[j];
        }
    }
    s
}

fn lower(g: &[f64], v: &[f64]) -> Vec<f64> {
    let n = v.len();
    (0..n).map(|i| (0..n).map(|j| g[i * n + j] * v[j]).sum()).collect()
}

// ---------------------------------------------------------------------------
// trajectories

#[derive(Debug, Clone)]
pub struct Trajectory {
    pub system: String,
    pub coords: Vec<String>,
    pub t: Vec<f64>,
    pub q: Vec<Vec<f64>>,
    pub qd: Vec<Vec<f64>>,
    /// Constraint residual `½ g(q̇,q̇) + V`.
    pub h: Vec<f64>,
    /// Jacobi time `∫ V dt` by the trapezoid rule.
    pub tau: Vec<f64>,
    /// Appended transform or charge columns, at most one value per row.
    pub extra: Vec<(String, Vec<f64>)>,
    pub truncated_at: Option<f64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.t.len()
    }

    pub fn is_empty(&self) -> bool {
        self.t.is_empty()
    }

    pub fn max_abs_h(&self) -> f64 {
        self.h.iter().fold(0.0f64, |m, x| m.max(x.abs()))
    }

    pub fn push_columns(&mut self, cols: &Columns) {
        for (i, name) in cols.names.iter().enumerate() {
            self.extra
                .push((name.clone(), cols.rows.iter().map(|r| r[i]).collect()));
        }
    }

    /// CSV with a header row and full-precision floats; a trailing
    /// `# truncated_at=<t>` line marks truncation.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        let mut header = vec!["t".to_string()];
        header.extend(self.coords.iter().cloned());
        header.extend(self.coords.iter().map(|c| format!("d{c}/dt")));
        header.push("H".into());
        header.push("tau".into());
        header.extend(self.extra.iter().map(|(n, _)| n.clone()));
        out.push_str(&header.join(","));
        out.push('\n');
        for k in 0..self.len() {
            let mut row: Vec<f64> = vec![self.t[k]];
            row.extend(&self.q[k]);
            row.extend(&self.qd[k]);
            row.push(self.h[k]);
            row.push(self.tau[k]);
            let mut cells: Vec<String> = row.iter().map(|x| format!("{x:.16e}")).collect();
            for (_, col) in &self.extra {
                cells.push(col.get(k).map(|x| format!("{x:.16e}")).unwrap_or_default());
            }
            out.push_str(&cells.join(","));
            out.push('\n');
        }
        if let Some(t) = self.truncated_at {
            let _ = writeln!(out, "# truncated_at={t}");
        }
        out
    }
}

/// Accelerations at `(q, q̇)`.
pub fn eom_rhs(s: &SystemSpec, q: &[f64], qd: &[f64]) -> Result<Vec<f64>> {
    Flow::of(s).accel(q, qd)
}

/// `λ d` with `½ λ² g(d,d) = −V`.
pub fn project_to_constraint(s: &SystemSpec, q: &[f64], d: &[f64]) -> Result<Vec<f64>> {
    let gdd = quad(&s.metric.values(q)?, d, d);
    let v = s.potential_at(q)?;
    let ratio = -2.0 * v / gdd;
    if gdd == 0.0 || ratio.is_nan() || ratio <= 0.0 || !ratio.is_finite() {
        return Err(Error::EmptyConstraintSurface { ratio });
    }
    let lambda = ratio.sqrt();
    Ok(d.iter().map(|x| lambda * x).collect())
}

/// Fixed-step RK4 from `(q0, q̇0)` over `[0, T]`.
pub fn integrate(s: &SystemSpec, q0: &[f64], qd0: &[f64], horizon: f64, dt: f64) -> Result<Trajectory> {
    Flow::of(s).integrate(&s.name, q0, qd0, horizon, dt)
}

#[derive(Debug, Clone)]
pub struct LiftRecovery {
    pub base: Trajectory,
    /// Lifted geodesic against its own affine parameter.
    pub lifted: Trajectory,
    /// Affine-parameter rescaling `|I0|/√2` mapping lifted to physical time.
    pub lapse: f64,
    /// `max_k ‖q_lift(t_k) − q_base(t_k)‖`.
    pub residual: f64,
}

/// Integrate the null geodesic of `g ⊕ dz²/V` with `ż = I0 V` and compare its
/// projection with the base motion at matching physical times.
///
/// Along the lift the fiber momentum `ż/V = I0` is conserved and the base
/// coordinates feel the potential `(I0²/2) V`; an affine parameter scaled by
/// `|I0|/√2` therefore reproduces the base clock.
pub fn null_lift_recover(
    s: &SystemSpec,
    i0: f64,
    q0: &[f64],
    qd0: &[f64],
    horizon: f64,
    dt: f64,
) -> Result<LiftRecovery> {
    if (i0 * i0 - 1.0).abs() > 1e-12 {
        return Err(Error::Precondition(format!(
            "lift recovery needs I0^2 = 1, got I0 = {i0}"
        )));
    }
    let v0 = s.potential_at(q0)?;
    let h0 = 0.5 * quad(&s.metric.values(q0)?, qd0, qd0) + v0;
    if h0.abs() > 1e-8 * v0.abs().max(1.0) {
        return Err(Error::Precondition(format!(
            "initial data off the constraint surface (H = {h0:e})"
        )));
    }
    let base = integrate(s, q0, qd0, horizon, dt)?;

    let mut lift = s.eisenhart_lift(FIBER)?;
    *lift.domain.last_mut().expect("fiber") = Interval::unbounded();
    let flow = Flow {
        metric: lift,
        potential: Expr::c(0.0),
    };
    let lapse = i0.abs() / 2f64.sqrt();
    let mut lq0 = q0.to_vec();
    lq0.push(0.0);
    let mut lqd0: Vec<f64> = qd0.iter().map(|x| lapse * x).collect();
    lqd0.push(i0 * v0);
    let lifted = flow.integrate(&format!("{}-lift", s.name), &lq0, &lqd0, horizon / lapse, dt / lapse)?;

    let n = s.dim();
    let rows = base.len().min(lifted.len());
    let mut residual = 0.0f64;
    for k in 0..rows {
        let d: f64 = (0..n)
            .map(|i| (lifted.q[k][i] - base.q[k][i]).powi(2))
            .sum::<f64>()
            .sqrt();
        residual = residual.max(d);
    }
    if base.len() != lifted.len() {
        residual = f64::INFINITY;
    }
    Ok(LiftRecovery {
        base,
        lifted,
        lapse,
        residual,
    })
}

// ---------------------------------------------------------------------------
// transforms and straightening

/// Values of transform maps along a trajectory.
#[derive(Debug, Clone)]
pub struct Columns {
    pub names: Vec<String>,
    /// One row per trajectory row up to truncation.
    pub rows: Vec<Vec<f64>>,
    pub truncated_at: Option<f64>,
}

impl Columns {
    pub fn column(&self, i: usize) -> Vec<f64> {
        self.rows.iter().map(|r| r[i]).collect()
    }
}

/// Evaluate `tr`'s maps at every row of `traj`.
pub fn apply_transform(tr: &Transform, traj: &Trajectory, params: &BTreeMap<String, f64>) -> Result<Columns> {
    let mut known: Vec<&str> = traj.coords.iter().map(String::as_str).collect();
    known.extend(params.keys().map(String::as_str));
    for e in tr.maps.values() {
        let missing: Vec<String> = e
            .symbols()
            .into_iter()
            .filter(|s| !known.contains(&s.as_str()))
            .collect();
        if !missing.is_empty() {
            let hint = if tr.target == Target::Lift {
                " (lift transforms need a lifted trajectory)"
            } else {
                ""
            };
            return Err(Error::UnknownSymbols {
                path: format!("transform {}{hint}", tr.name),
                names: missing,
            });
        }
    }
    let mut rows = Vec::with_capacity(traj.len());
    let mut truncated_at = None;
    'rows: for k in 0..traj.len() {
        let mut env = params.clone();
        for (c, x) in traj.coords.iter().zip(&traj.q[k]) {
            env.insert(c.clone(), *x);
        }
        let mut row = Vec::with_capacity(tr.maps.len());
        for e in tr.maps.values() {
            match eval_scalar(e, &env) {
                Ok(v) => row.push(v),
                Err(_) => {
                    truncated_at = Some(traj.t[k]);
                    break 'rows;
                }
            }
        }
        rows.push(row);
    }
    Ok(Columns {
        names: tr.maps.keys().cloned().collect(),
        rows,
        truncated_at,
    })
}

/// `σ₂/σ₁` of the centered point cloud; zero for collinear points.
pub fn straightness_residual(points: &[Vec<f64>]) -> Result<f64> {
    if points.len() < 3 {
        return Err(Error::Precondition("straightness needs at least 3 points".into()));
    }
    let m = points[0].len();
    let k = points.len();
    let mut mean = vec![0.0; m];
    for p in points {
        for (a, x) in mean.iter_mut().zip(p) {
            *a += x / k as f64;
        }
    }
    let centered = nalgebra::DMatrix::from_fn(k, m, |r, c| points[r][c] - mean[c]);
    let mut sv: Vec<f64> = centered.singular_values().iter().copied().collect();
    sv.sort_by(|a, b| b.total_cmp(a));
    if sv.is_empty() || sv[0] == 0.0 {
        return Err(Error::Precondition("degenerate path: all points coincide".into()));
    }
    Ok(sv.get(1).copied().unwrap_or(0.0) / sv[0])
}

/// Max over columns of the least-squares affine fit error against `tau`,
/// relative to the column's range.
pub fn affine_check(columns: &[Vec<f64>], tau: &[f64]) -> Result<f64> {
    let k = tau.len();
    if k < 3 {
        return Err(Error::Precondition("affine check needs at least 3 rows".into()));
    }
    let inc = tau.windows(2).all(|w| w[1] > w[0]);
    let dec = tau.windows(2).all(|w| w[1] < w[0]);
    if !inc && !dec {
        return Err(Error::Precondition(
            "Jacobi time is not monotone along the trajectory".into(),
        ));
    }
    let tm = tau.iter().sum::<f64>() / k as f64;
    let stt: f64 = tau.iter().map(|t| (t - tm).powi(2)).sum();
    let mut worst = 0.0f64;
    for col in columns {
        let col = &col[..k.min(col.len())];
        let ym = col.iter().sum::<f64>() / col.len() as f64;
        let sty: f64 = tau.iter().zip(col).map(|(t, y)| (t - tm) * (y - ym)).sum();
        let b = sty / stt;
        let max_err = tau
            .iter()
            .zip(col)
            .map(|(t, y)| (y - (ym + b * (t - tm))).abs())
            .fold(0.0f64, f64::max);
        let (lo, hi) = col
            .iter()
            .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), &y| (l.min(y), h.max(y)));
        let range = hi - lo;
        if range > 0.0 {
            worst = worst.max(max_err / range);
        }
    }
    Ok(worst)
}

/// Components of the target metric in the transform's coordinates,
/// `G = J^{-T} ḡ J^{-1}`, at one point.
fn pulled_back(m: &MetricField, tr: &Transform, p: &[f64]) -> Result<Vec<f64>> {
    let n = m.dim();
    if tr.maps.len() != n {
        return Err(Error::Dimension {
            op: "metric_flatness_check",
            expected: n.to_string(),
            got: tr.maps.len(),
        });
    }
    let mut jac = nalgebra::DMatrix::zeros(n, n);
    for (a, e) in tr.maps.values().enumerate() {
        let j = eval_jet(e, p, &m.coords, &m.params)?;
        for i in 0..n {
            jac[(a, i)] = j.d1(i);
        }
    }
    let jinv = jac
        .try_inverse()
        .ok_or_else(|| Error::Precondition(format!("transform {} is singular at {}", tr.name, m.describe(p))))?;
    let g = nalgebra::DMatrix::from_row_slice(n, n, &m.values(p)?);
    let big = jinv.transpose() * g * &jinv;
    Ok((0..n * n).map(|k| big[(k / n, k % n)]).collect())
}

/// Relative spread of the transformed metric components over `points`;
/// zero iff the transform is a chart with constant metric coefficients.
pub fn metric_flatness_check(m: &MetricField, tr: &Transform, points: &[Vec<f64>]) -> Result<f64> {
    let first = pulled_back(m, tr, &points[0])?;
    let scale = first.iter().map(|x| x * x).sum::<f64>().sqrt().max(1e-300);
    let mut worst = 0.0f64;
    for p in &points[1..] {
        let g = pulled_back(m, tr, p)?;
        let d = g.iter().zip(&first).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        worst = worst.max(d / scale);
    }
    Ok(worst)
}

// ---------------------------------------------------------------------------
// charges

/// Phase-space function over coordinates, momenta `p_<coord>` and
/// parameters.
#[derive(Debug, Clone, PartialEq)]
pub struct ChargeSpec {
    pub name: String,
    pub expr: Expr,
    pub note: String,
}

pub fn momentum_name(coord: &str) -> String {
    format!("p_{coord}")
}

fn symbolic_det(m: &[Vec<Expr>]) -> Expr {
    let n = m.len();
    if n == 1 {
        return m[0][0].clone();
    }
    let mut acc = Expr::c(0.0);
    for j in 0..n {
        if m[0][j].is_zero() {
            continue;
        }
        let minor: Vec<Vec<Expr>> = m[1..]
            .iter()
            .map(|r| {
                r.iter()
                    .enumerate()
                    .filter(|(c, _)| *c != j)
                    .map(|(_, e)| e.clone())
                    .collect()
            })
            .collect();
        let term = Expr::mul(m[0][j].clone(), symbolic_det(&minor));
        acc = if j % 2 == 0 {
            Expr::add(acc, term)
        } else {
            Expr::sub(acc, term)
        };
    }
    acc
}

/// Symbolic inverse by cofactors; practical for small dimensions.
fn symbolic_inverse(rows: &[Vec<Expr>]) -> Result<Vec<Vec<Expr>>> {
    let n = rows.len();
    if n > 6 {
        return Err(Error::Dimension {
            op: "symbolic inverse",
            expected: "<= 6".into(),
            got: n,
        });
    }
    let det = symbolic_det(rows);
    let mut out = vec![vec![Expr::c(0.0); n]; n];
    for (i, row) in out.iter_mut().enumerate() {
        for (j, slot) in row.iter_mut().enumerate() {
            // (g^-1)_ij = cofactor_ji / det
            let minor: Vec<Vec<Expr>> = rows
                .iter()
                .enumerate()
                .filter(|(r, _)| *r != j)
                .map(|(_, r)| {
                    r.iter()
                        .enumerate()
                        .filter(|(c, _)| *c != i)
                        .map(|(_, e)| e.clone())
                        .collect()
                })
                .collect();
            let cof = if n == 1 { Expr::c(1.0) } else { symbolic_det(&minor) };
            let cof = if (i + j) % 2 == 0 { cof } else { Expr::neg(cof) };
            *slot = Expr::div(cof, det.clone());
        }
    }
    Ok(out)
}

/// `½ g^ij p_i p_j + V`.
pub fn hamiltonian(s: &SystemSpec) -> Result<Expr> {
    let n = s.dim();
    let inv = symbolic_inverse(&s.metric.rows())?;
    let p: Vec<Expr> = s.coords().iter().map(|c| Expr::sym(momentum_name(c))).collect();
    let mut kin = Expr::c(0.0);
    for i in 0..n {
        for j in i..n {
            let w = if i == j {
                Expr::mul(Expr::c(0.5), inv[i][i].clone())
            } else {
                inv[i][j].clone()
            };
            if w.is_zero() {
                continue;
            }
            let pp = if i == j {
                Expr::Pow(Box::new(p[i].clone()), Box::new(Expr::c(2.0)))
            } else {
                Expr::mul(p[i].clone(), p[j].clone())
            };
            kin = Expr::add(kin, Expr::mul(w, pp));
        }
    }
    Ok(Expr::add(kin, s.potential.clone()))
}

/// `Φ = ξ H − η^i p_i + f`.
pub fn noether_charge_from_generator(s: &SystemSpec, gen: &Generator) -> Result<ChargeSpec> {
    let mut expr = if gen.xi.is_zero() {
        Expr::c(0.0)
    } else {
        Expr::mul(gen.xi.clone(), hamiltonian(s)?)
    };
    for (c, eta) in s.coords().iter().zip(&gen.eta) {
        if !eta.is_zero() {
            expr = Expr::sub(expr, Expr::mul(eta.clone(), Expr::sym(momentum_name(c))));
        }
    }
    expr = Expr::add(expr, gen.boundary.clone());
    Ok(ChargeSpec {
        name: gen.name.clone(),
        expr,
        note: format!("Noether charge of generator {}", gen.name),
    })
}

fn phase_env(s: &SystemSpec, q: &[f64], p: &[f64]) -> BTreeMap<String, f64> {
    let mut env = s.metric.env(q);
    for (c, x) in s.coords().iter().zip(p) {
        env.insert(momentum_name(c), *x);
    }
    env
}

pub fn eval_charge(s: &SystemSpec, ch: &ChargeSpec, q: &[f64], p: &[f64]) -> Result<f64> {
    Ok(eval_scalar(&ch.expr, &phase_env(s, q, p))?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Drift {
    pub initial: f64,
    pub max_abs: f64,
    /// `max_abs / max(|Φ_0|, 1)`.
    pub normalized: f64,
}

/// Charge values along `traj` (momenta `p = g q̇`) and their drift.
pub fn charge_drift(s: &SystemSpec, ch: &ChargeSpec, traj: &Trajectory) -> Result<(Vec<f64>, Drift)> {
    let mut values = Vec::with_capacity(traj.len());
    for k in 0..traj.len() {
        let p = lower(&s.metric.values(&traj.q[k])?, &traj.qd[k]);
        values.push(eval_charge(s, ch, &traj.q[k], &p)?);
    }
    let initial = values[0];
    let max_abs = values.iter().map(|v| (v - initial).abs()).fold(0.0, f64::max);
    Ok((
        values,
        Drift {
            initial,
            max_abs,
            normalized: max_abs / initial.abs().max(1.0),
        },
    ))
}

/// `{a, b} = ∂_q a ∂_p b − ∂_p a ∂_q b` at a phase point.
pub fn poisson_bracket(s: &SystemSpec, a: &Expr, b: &Expr, q: &[f64], p: &[f64]) -> Result<f64> {
    let n = s.dim();
    let mut vars: Vec<String> = s.coords().to_vec();
    vars.extend(s.coords().iter().map(|c| momentum_name(c)));
    if vars.len() > crate::jet::MAX_VARS {
        return Err(Error::Dimension {
            op: "poisson_bracket",
            expected: format!("<= {}", crate::jet::MAX_VARS / 2),
            got: n,
        });
    }
    let point: Vec<f64> = q.iter().chain(p).copied().collect();
    let ja = eval_jet(a, &point, &vars, s.params())?;
    let jb = eval_jet(b, &point, &vars, s.params())?;
    let mut out = 0.0;
    for i in 0..n {
        out += ja.d1(i) * jb.d1(n + i) - ja.d1(n + i) * jb.d1(i);
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeakNoether {
    /// `max |{Φ, H}|` over on-shell samples.
    pub onshell_max: f64,
    /// Least-squares `χ` in `{Φ, H} ≈ χ H` off shell, when the fit holds.
    pub chi: Option<f64>,
    /// Relative fit residual `‖{Φ,H} − χH‖ / ‖{Φ,H}‖`.
    pub fit_residual: f64,
    pub onshell_points: usize,
}

impl WeakNoether {
    pub fn to_json(&self) -> Value {
        json!({
            "onshell_residual_max": self.onshell_max,
            "chi": self.chi,
            "fit_residual": self.fit_residual,
            "onshell_points": self.onshell_points,
        })
    }
}

/// Weak conservation of `ch`: `{Φ, H}` on the constraint surface, and the
/// conformal factor `χ` fitted off it.
pub fn weak_noether_check(s: &SystemSpec, ch: &ChargeSpec, samples: usize, seed: u64) -> Result<WeakNoether> {
    let n = s.dim();
    let h = hamiltonian(s)?;
    let positions = sample_points(&s.sampling_metric(), samples, seed)?;
    let mut rng = SplitMix64::new(seed ^ 0x005E_ED0F_C4A7);

    let mut onshell_max = 0.0f64;
    let mut onshell_points = 0;
    let (mut sbh, mut shh, mut sbb) = (0.0, 0.0, 0.0);
    for q in &positions {
        let g = s.metric.values(q)?;
        // on shell: retry random directions until the constraint is solvable
        for _ in 0..64 {
            let d: Vec<f64> = (0..n).map(|_| rng.uniform(-1.0, 1.0)).collect();
            if let Ok(qd) = project_to_constraint(s, q, &d) {
                let p = lower(&g, &qd);
                onshell_max = onshell_max.max(poisson_bracket(s, &ch.expr, &h, q, &p)?.abs());
                onshell_points += 1;
                break;
            }
        }
        // off shell: arbitrary momenta
        let p: Vec<f64> = (0..n).map(|_| rng.uniform(-2.0, 2.0)).collect();
        let b = poisson_bracket(s, &ch.expr, &h, q, &p)?;
        let hv = eval_scalar(&h, &phase_env(s, q, &p))?;
        sbh += b * hv;
        shh += hv * hv;
        sbb += b * b;
    }
    if onshell_points == 0 {
        return Err(Error::SamplingExhausted {
            accepted: 0,
            rejected: positions.len(),
            tightest: "constraint surface empty at every sampled position".into(),
        });
    }
    let chi = if shh > 0.0 { sbh / shh } else { 0.0 };
    let fit_residual = if sbb == 0.0 {
        0.0
    } else {
        ((sbb - 2.0 * chi * sbh + chi * chi * shh).max(0.0) / sbb).sqrt()
    };
    Ok(WeakNoether {
        onshell_max,
        chi: (fit_residual < 1e-6).then_some(chi),
        fit_residual,
        onshell_points,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn spec(text: &str) -> SystemSpec {
        SystemSpec::from_json(text).unwrap()
    }

    fn szekeres() -> SystemSpec {
        spec(
            r#"{"name":"szekeres","coordinates":["u","v"],"parameters":{"h":0},
            "metric":[["0","1"],["1","0"]],"potential":"v/u^2 - h",
            "domain":{"u":[0.5,3],"v":[0.5,3]},"guards":["u","v"],
            "transforms":[{"name":"rectifier","target":"jacobi-canonical","maps":{"U":"-1/u","V":"v^2/2"}}],
            "generators":[{"name":"X1","eta":{"v":"1/v"}},{"name":"X2","eta":{"u":"u^2"}},{"name":"X3","eta":{"u":"2*u","v":"v"}}]}"#,
        )
    }

    fn free(v: &str) -> SystemSpec {
        spec(&format!(
            r#"{{"name":"free","coordinates":["x","y"],"metric":[["1","0"],["0","1"]],"potential":"{v}","domain":{{"x":[-5,5],"y":[-5,5]}}}}"#
        ))
    }

    #[test]
    fn eom_examples() {
        assert_eq!(eom_rhs(&free("0"), &[0.3, 0.1], &[1.0, 2.0]).unwrap(), vec![0.0, 0.0]);
        let a = eom_rhs(&szekeres(), &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!((a[0] + 1.0).abs() < 1e-14 && (a[1] - 2.0).abs() < 1e-14, "{a:?}");
        let lam = spec(
            r#"{"name":"sl","coordinates":["u","v"],"parameters":{"L":1,"h":0},
            "metric":[["0","1"],["1","0"]],"potential":"v/u^2 - L*u*v - h","domain":{"u":[0.5,3],"v":[0.5,3]}}"#,
        );
        let a = eom_rhs(&lam, &[1.0, 1.0], &[0.0, 0.0]).unwrap();
        assert!(a[0].abs() < 1e-14 && (a[1] - 3.0).abs() < 1e-14, "{a:?}");
    }

    #[test]
    fn projection_examples() {
        let qd = project_to_constraint(&szekeres(), &[1.0, 1.0], &[1.0, -1.0]).unwrap();
        assert_eq!(qd, vec![1.0, -1.0]);
        assert_eq!(
            project_to_constraint(&free("-0.5"), &[0.0, 0.0], &[1.0, 0.0]).unwrap(),
            vec![1.0, 0.0]
        );
        assert!(matches!(
            project_to_constraint(&free("1"), &[0.0, 0.0], &[1.0, 0.3]),
            Err(Error::EmptyConstraintSurface { .. })
        ));
    }

    #[test]
    fn free_particle_is_exact() {
        let tr = integrate(&free("0"), &[0.0, 0.0], &[1.0, 0.0], 1.0, 0.01).unwrap();
        for (t, q) in tr.t.iter().zip(&tr.q) {
            assert!((q[0] - t).abs() < 1e-12);
        }
    }

    #[test]
    fn szekeres_constraint_and_rectification() {
        let s = szekeres();
        let qd0 = project_to_constraint(&s, &[1.0, 1.0], &[1.0, -1.0]).unwrap();
        let tr = integrate(&s, &[1.0, 1.0], &qd0, 0.5, 1e-3).unwrap();
        assert!(tr.truncated_at.is_none());
        assert_eq!(tr.len(), 501);
        assert!(tr.max_abs_h() < 1e-10, "{}", tr.max_abs_h());
        let cols = apply_transform(&s.transforms[0], &tr, s.params()).unwrap();
        assert_eq!(cols.rows[0], vec![-1.0, 0.5]);
        let straight = straightness_residual(&cols.rows).unwrap();
        assert!(straight < 1e-6, "{straight}");
        assert!(straightness_residual(&tr.q).unwrap() > 1e-2);
        let aff = affine_check(&[cols.column(0), cols.column(1)], &tr.tau).unwrap();
        assert!(aff < 1e-5, "{aff}");
    }

    #[test]
    fn straight_line_residual() {
        let pts: Vec<Vec<f64>> = (0..10).map(|k| vec![k as f64, 2.0 * k as f64 + 1.0]).collect();
        assert!(straightness_residual(&pts).unwrap() < 1e-12);
        assert!(straightness_residual(&vec![vec![1.0, 1.0]; 4]).is_err());
    }

    #[test]
    fn rk4_is_fourth_order() {
        let s = szekeres();
        let qd0 = project_to_constraint(&s, &[1.0, 1.0], &[1.0, -1.0]).unwrap();
        let end = |dt: f64| {
            integrate(&s, &[1.0, 1.0], &qd0, 0.5, dt)
                .unwrap()
                .q
                .last()
                .unwrap()
                .clone()
        };
        let reference = end(0.05 / 8.0);
        let err = |dt: f64| {
            let q = end(dt);
            ((q[0] - reference[0]).powi(2) + (q[1] - reference[1]).powi(2)).sqrt()
        };
        let ratio = err(0.05) / err(0.025);
        assert!((14.0..18.5).contains(&ratio), "{ratio}");
    }

    #[test]
    fn lift_recovery() {
        let s = szekeres();
        let qd0 = project_to_constraint(&s, &[1.0, 1.0], &[1.0, -1.0]).unwrap();
        for i0 in [1.0, -1.0] {
            let r = null_lift_recover(&s, i0, &[1.0, 1.0], &qd0, 0.5, 1e-3).unwrap();
            assert!(r.residual < 1e-8, "{}", r.residual);
        }
        assert!(matches!(
            null_lift_recover(&s, 2.0, &[1.0, 1.0], &qd0, 0.5, 1e-3),
            Err(Error::Precondition(_))
        ));
        let f = free("-0.5");
        let r = null_lift_recover(&f, 1.0, &[0.0, 0.0], &[1.0, 0.0], 1.0, 1e-2).unwrap();
        assert!(r.residual < 1e-13);
    }

    #[test]
    fn charges() {
        let s = szekeres();
        let x1 = noether_charge_from_generator(&s, &s.generators[0]).unwrap();
        assert_eq!(x1.expr.to_string(), "-(1/v*p_v)");
        let x3 = noether_charge_from_generator(&s, &s.generators[2]).unwrap();
        assert_eq!(x3.expr.to_string(), "-(2*u*p_u) - v*p_v");
        let energy = Generator {
            name: "E".into(),
            xi: Expr::c(1.0),
            eta: vec![Expr::c(0.0); 2],
            boundary: Expr::c(0.0),
        };
        let e = noether_charge_from_generator(&s, &energy).unwrap();
        assert_eq!(e.expr, hamiltonian(&s).unwrap());

        let qd0 = project_to_constraint(&s, &[1.0, 1.0], &[1.0, -1.0]).unwrap();
        let tr = integrate(&s, &[1.0, 1.0], &qd0, 0.5, 1e-3).unwrap();
        for g in &s.generators {
            let ch = noether_charge_from_generator(&s, g).unwrap();
            let (_, d) = charge_drift(&s, &ch, &tr).unwrap();
            assert!(d.normalized < 1e-7, "{}: {:?}", g.name, d);
        }
        let u = ChargeSpec {
            name: "u".into(),
            expr: parse("u").unwrap(),
            note: String::new(),
        };
        assert!(charge_drift(&s, &u, &tr).unwrap().1.normalized > 1e-2);
    }

    #[test]
    fn weak_noether() {
        let s = szekeres();
        let ch = ChargeSpec {
            name: "dilation".into(),
            expr: parse("v*p_v + 2*u*p_u").unwrap(),
            note: String::new(),
        };
        let w = weak_noether_check(&s, &ch, 30, 0).unwrap();
        assert!(w.onshell_max < 1e-9, "{w:?}");
        assert!((w.chi.unwrap().abs() - 3.0).abs() < 1e-6, "{w:?}");
        let h = ChargeSpec {
            name: "H".into(),
            expr: hamiltonian(&s).unwrap(),
            note: String::new(),
        };
        let w = weak_noether_check(&s, &h, 10, 0).unwrap();
        assert_eq!(w.chi, Some(0.0));
        let u = ChargeSpec {
            name: "u".into(),
            expr: parse("u").unwrap(),
            note: String::new(),
        };
        let w = weak_noether_check(&s, &u, 10, 0).unwrap();
        assert!(w.onshell_max > 1e-2 && w.chi.is_none(), "{w:?}");
    }

    #[test]
    fn bracket_is_antisymmetric() {
        let s = szekeres();
        let h = hamiltonian(&s).unwrap();
        let phi = parse("u^2*p_u").unwrap();
        let (q, p) = ([1.3, 0.8], [0.4, -1.1]);
        let ab = poisson_bracket(&s, &phi, &h, &q, &p).unwrap();
        let ba = poisson_bracket(&s, &h, &phi, &q, &p).unwrap();
        assert!((ab + ba).abs() < 1e-12);
    }

    #[test]
    fn csv_layout() {
        let s = szekeres();
        let qd0 = project_to_constraint(&s, &[1.0, 1.0], &[1.0, -1.0]).unwrap();
        let mut tr = integrate(&s, &[1.0, 1.0], &qd0, 0.002, 1e-3).unwrap();
        let cols = apply_transform(&s.transforms[0], &tr, s.params()).unwrap();
        tr.push_columns(&cols);
        let csv = tr.to_csv();
        let mut lines = csv.lines();
        assert_eq!(lines.next().unwrap(), "t,u,v,du/dt,dv/dt,H,tau,U,V");
        assert_eq!(lines.next().unwrap().split(',').count(), 9);
        assert!(csv.contains("1.0000000000000000e0"));
    }

    #[test]
    fn truncation_is_flagged() {
        let s = free("0");
        let tr = integrate(&s, &[4.9, 0.0], &[1.0, 0.0], 1.0, 0.01).unwrap();
        assert!(tr.truncated_at.is_some());
        assert!(tr
            .to_csv()
            .trim_end()
            .ends_with(&format!("# truncated_at={}", tr.truncated_at.unwrap())));
        assert!(integrate(&s, &[6.0, 0.0], &[1.0, 0.0], 1.0, 0.01).is_err());
    }

    #[test]
    fn printed_lambda_chart_is_flat() {
        let m = MetricField::from_rows(
            vec!["u".into(), "v".into()],
            [("L".to_string(), -1.0), ("h".to_string(), 0.0)].into(),
            vec![Interval::new(0.5, 2.0); 2],
            vec![
                vec![parse("0").unwrap(), parse("1/(2*(v/u^2 - L*u*v - h))").unwrap()],
                vec![parse("1/(2*(v/u^2 - L*u*v - h))").unwrap(), parse("0").unwrap()],
            ],
        )
        .unwrap();
        let tr = Transform {
            name: "printed".into(),
            target: Target::JacobiInverse,
            maps: [
                ("U".to_string(), parse("-ln(1 - L*u^3)/(3*L)").unwrap()),
                ("V".to_string(), parse("ln(v)").unwrap()),
            ]
            .into_iter()
            .collect(),
        };
        let pts = sample_points(&m, 10, 0).unwrap();
        assert!(metric_flatness_check(&m, &tr, &pts).unwrap() < 1e-12);
    }
}
