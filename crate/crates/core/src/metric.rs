//! Metric fields: a symmetric matrix of expressions over named coordinates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::error::{describe_point, Error, Result};
use crate::expr::{eval_jet, eval_scalar, Expr};
use crate::jet::Jet;

/// Closed coordinate interval. Infinite bounds are allowed for integration
/// boxes but not for sampling.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(from = "[f64; 2]", into = "[f64; 2]")]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
}

impl Interval {
    pub fn new(lo: f64, hi: f64) -> Interval {
        Interval { lo, hi }
    }

    pub fn unbounded() -> Interval {
        Interval::new(f64::NEG_INFINITY, f64::INFINITY)
    }

    pub fn contains(&self, x: f64) -> bool {
        self.lo <= x && x <= self.hi
    }

    pub fn width(&self) -> f64 {
        self.hi - self.lo
    }
}

impl From<[f64; 2]> for Interval {
    fn from(a: [f64; 2]) -> Interval {
        Interval::new(a[0], a[1])
    }
}

impl From<Interval> for [f64; 2] {
    fn from(i: Interval) -> [f64; 2] {
        [i.lo, i.hi]
    }
}

/// Symmetric `n×n` metric with expression components.
///
/// Only the upper triangle is stored; `component(i, j)` and
/// `component(j, i)` return the same expression.
#[derive(Debug, Clone, PartialEq)]
pub struct MetricField {
    pub coords: Vec<String>,
    upper: Vec<Expr>,
    pub params: BTreeMap<String, f64>,
    pub domain: Vec<Interval>,
    /// Points where any guard is within 1e-10 of zero are inadmissible.
    pub guards: Vec<Expr>,
}

fn upper_index(n: usize, i: usize, j: usize) -> usize {
    let (i, j) = if i <= j { (i, j) } else { (j, i) };
    i * n - i * (i + 1) / 2 + j
}

impl MetricField {
    /// Build from the upper triangle supplied by `entry(i, j)` for `i <= j`.
    pub fn from_fn(
        coords: Vec<String>,
        params: BTreeMap<String, f64>,
        domain: Vec<Interval>,
        mut entry: impl FnMut(usize, usize) -> Expr,
    ) -> MetricField {
        let n = coords.len();
        assert_eq!(domain.len(), n, "one interval per coordinate");
        let mut upper = Vec::with_capacity(n * (n + 1) / 2);
        for i in 0..n {
            for j in i..n {
                upper.push(entry(i, j));
            }
        }
        MetricField {
            coords,
            upper,
            params,
            domain,
            guards: Vec::new(),
        }
    }

    /// Diagonal metric.
    pub fn diagonal(
        coords: Vec<String>,
        params: BTreeMap<String, f64>,
        domain: Vec<Interval>,
        diag: Vec<Expr>,
    ) -> MetricField {
        MetricField::from_fn(coords, params, domain, |i, j| {
            if i == j {
                diag[i].clone()
            } else {
                Expr::c(0.0)
            }
        })
    }

    /// Build from full rows, rejecting asymmetric input by canonical print.
    pub fn from_rows(
        coords: Vec<String>,
        params: BTreeMap<String, f64>,
        domain: Vec<Interval>,
        rows: Vec<Vec<Expr>>,
    ) -> Result<MetricField> {
        let n = coords.len();
        if rows.len() != n || rows.iter().any(|r| r.len() != n) {
            return Err(Error::Schema {
                path: "$.metric".into(),
                message: format!("expected a {n}x{n} matrix"),
            });
        }
        for i in 0..n {
            for j in (i + 1)..n {
                if rows[i][j].to_string() != rows[j][i].to_string() {
                    return Err(Error::NotSymmetric {
                        row: coords[i].clone(),
                        col: coords[j].clone(),
                    });
                }
            }
        }
        Ok(MetricField::from_fn(coords, params, domain, |i, j| rows[i][j].clone()))
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn component(&self, i: usize, j: usize) -> &Expr {
        &self.upper[upper_index(self.dim(), i, j)]
    }

    pub fn rows(&self) -> Vec<Vec<Expr>> {
        let n = self.dim();
        (0..n)
            .map(|i| (0..n).map(|j| self.component(i, j).clone()).collect())
            .collect()
    }

    /// Apply `f` to every stored component.
    pub fn map_components(&self, mut f: impl FnMut(usize, usize, &Expr) -> Expr) -> MetricField {
        let n = self.dim();
        let mut out = self.clone();
        for i in 0..n {
            for j in i..n {
                out.upper[upper_index(n, i, j)] = f(i, j, self.component(i, j));
            }
        }
        out
    }

    /// Symbols that may legally appear in components.
    pub fn allowed_symbols(&self) -> Vec<String> {
        self.coords.iter().cloned().chain(self.params.keys().cloned()).collect()
    }

    pub fn env(&self, point: &[f64]) -> BTreeMap<String, f64> {
        let mut env = self.params.clone();
        for (c, x) in self.coords.iter().zip(point) {
            env.insert(c.clone(), *x);
        }
        env
    }

    pub fn describe(&self, point: &[f64]) -> String {
        describe_point(&self.coords, point)
    }

    /// Component values, row-major `n×n`.
    pub fn values(&self, point: &[f64]) -> Result<Vec<f64>> {
        let n = self.dim();
        let env = self.env(point);
        let mut upper = Vec::with_capacity(self.upper.len());
        for e in &self.upper {
            upper.push(eval_scalar(e, &env)?);
        }
        let mut out = vec![0.0; n * n];
        for i in 0..n {
            for j in 0..n {
                out[i * n + j] = upper[upper_index(n, i, j)];
            }
        }
        Ok(out)
    }

    /// Component jets in the coordinates, row-major `n×n`.
    pub fn jets(&self, point: &[f64]) -> Result<Vec<Jet>> {
        let n = self.dim();
        let mut upper = Vec::with_capacity(self.upper.len());
        for e in &self.upper {
            upper.push(eval_jet(e, point, &self.coords, &self.params)?);
        }
        let mut out = Vec::with_capacity(n * n);
        for i in 0..n {
            for j in 0..n {
                out.push(upper[upper_index(n, i, j)].clone());
            }
        }
        Ok(out)
    }

    pub fn in_domain(&self, point: &[f64]) -> bool {
        self.domain.iter().zip(point).all(|(iv, x)| iv.contains(*x))
    }

    /// Override declared parameters; unknown names are rejected.
    pub fn with_params(&self, overrides: &BTreeMap<String, f64>) -> Result<MetricField> {
        let mut out = self.clone();
        for (k, v) in overrides {
            match out.params.get_mut(k) {
                Some(slot) => *slot = *v,
                None => {
                    return Err(Error::UnknownSymbols {
                        path: "--set".into(),
                        names: vec![k.clone()],
                    })
                }
            }
        }
        Ok(out)
    }

    /// Multiply every component by `factor`. Guards are kept.
    pub fn conformal_rescale(&self, factor: &Expr) -> MetricField {
        self.map_components(|_, _, e| Expr::mul(factor.clone(), e.clone()))
    }
}

/// Determinant via partial-pivot elimination of a row-major `n×n` matrix.
pub fn determinant(a: &[f64], n: usize) -> f64 {
    let mut m = a.to_vec();
    let mut det = 1.0;
    for col in 0..n {
        let piv = (col..n)
            .max_by(|&r, &s| m[r * n + col].abs().total_cmp(&m[s * n + col].abs()))
            .unwrap_or(col);
        if m[piv * n + col] == 0.0 {
            return 0.0;
        }
        if piv != col {
            for k in 0..n {
                m.swap(col * n + k, piv * n + k);
            }
            det = -det;
        }
        let d = m[col * n + col];
        det *= d;
        for r in (col + 1)..n {
            let f = m[r * n + col] / d;
            for k in col..n {
                m[r * n + k] -= f * m[col * n + k];
            }
        }
    }
    det
}

/// `|det g| > 1e-12 · (max |g_ij|)^n`.
pub fn is_nondegenerate(g: &[f64], n: usize) -> bool {
    let scale = g.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    if scale == 0.0 {
        return false;
    }
    determinant(g, n).abs() > 1e-12 * scale.powi(n as i32)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;

    fn coords(names: &[&str]) -> Vec<String> {
        names.iter().map(|s| s.to_string()).collect()
    }

    #[test]
    fn symmetric_storage() {
        let m = MetricField::from_rows(
            coords(&["u", "v"]),
            BTreeMap::new(),
            vec![Interval::new(0.5, 2.0); 2],
            vec![
                vec![parse("0").unwrap(), parse("1").unwrap()],
                vec![parse("1").unwrap(), parse("0").unwrap()],
            ],
        )
        .unwrap();
        assert_eq!(m.values(&[1.0, 1.0]).unwrap(), vec![0.0, 1.0, 1.0, 0.0]);
        assert_eq!(m.component(1, 0), m.component(0, 1));
    }

    #[test]
    fn asymmetric_rows_rejected() {
        let err = MetricField::from_rows(
            coords(&["u", "v"]),
            BTreeMap::new(),
            vec![Interval::new(0.5, 2.0); 2],
            vec![
                vec![parse("0").unwrap(), parse("1").unwrap()],
                vec![parse("2").unwrap(), parse("0").unwrap()],
            ],
        )
        .unwrap_err();
        assert_eq!(err.to_string(), "metric not symmetric at (u,v)");
    }

    #[test]
    fn determinant_and_degeneracy() {
        assert_eq!(determinant(&[0.0, 1.0, 1.0, 0.0], 2), -1.0);
        assert!((determinant(&[2.0, 1.0, 0.0, 1.0, 3.0, 1.0, 0.0, 1.0, 4.0], 3) - 18.0).abs() < 1e-12);
        assert!(is_nondegenerate(&[0.0, 1.0, 1.0, 0.0], 2));
        assert!(!is_nondegenerate(&[1.0, 1.0, 1.0, 1.0], 2));
        assert!(!is_nondegenerate(&[0.0; 4], 2));
    }
}
