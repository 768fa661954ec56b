//! Levi-Civita connection and curvature of a [`MetricField`] at a point.
//!
//! Every quantity is computed in jet arithmetic from order-3 jets of the
//! metric components, so first derivatives of the Ricci tensor (needed for
//! the Cotton-York tensor) are exact to rounding.
//!
//! Conventions:
//! - `Γ^i_jk = ½ g^il (∂_j g_lk + ∂_k g_lj − ∂_l g_jk)`
//! - `R^ρ_σμν = ∂_μ Γ^ρ_νσ − ∂_ν Γ^ρ_μσ + Γ^ρ_μλ Γ^λ_νσ − Γ^ρ_νλ Γ^λ_μσ`
//! - `R_σν = R^λ_σλν`, `R = g^σν R_σν` (the unit 2-sphere has `R = 2`)
//!
//! Normalized residuals divide a tensor's frame norm by the frame norm of
//! the natural companion tensor plus a derivative scale of the metric of
//! the same order, so that chart-induced round-off in a flat metric does not
//! read as curvature.

use serde_json::{json, Value};

use crate::error::{Error, Result};
use crate::expr::{eval_jet, Expr};
use crate::jet::Jet;
use crate::metric::{is_nondegenerate, MetricField};

/// Guards divisions in normalized residuals.
pub const EPS: f64 = 1e-300;

/// Dense real tensor with row-major storage.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    pub n: usize,
    pub rank: usize,
    pub data: Vec<f64>,
}

impl Tensor {
    pub fn zeros(n: usize, rank: usize) -> Tensor {
        Tensor {
            n,
            rank,
            data: vec![0.0; n.pow(rank as u32)],
        }
    }

    pub fn offset(&self, idx: &[usize]) -> usize {
        debug_assert_eq!(idx.len(), self.rank);
        idx.iter().fold(0, |acc, &i| acc * self.n + i)
    }

    pub fn get(&self, idx: &[usize]) -> f64 {
        self.data[self.offset(idx)]
    }

    pub fn set(&mut self, idx: &[usize], v: f64) {
        let o = self.offset(idx);
        self.data[o] = v;
    }

    /// Coordinate Euclidean norm.
    pub fn norm(&self) -> f64 {
        self.data.iter().map(|x| x * x).sum::<f64>().sqrt()
    }

    fn nested(&self) -> Value {
        fn rec(data: &[f64], n: usize, rank: usize) -> Value {
            if rank == 0 {
                return json!(data[0]);
            }
            let stride = data.len() / n;
            Value::Array(
                (0..n)
                    .map(|i| rec(&data[i * stride..(i + 1) * stride], n, rank - 1))
                    .collect(),
            )
        }
        rec(&self.data, self.n, self.rank)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Variance {
    Co,
    Contra,
}

/// Orthonormal frame from the eigendecomposition of `g` (ascending
/// eigenvalues), scaled by `1/√|λ|`; valid for any signature.
#[derive(Debug, Clone)]
pub struct Frame {
    n: usize,
    /// `co[a*n+i] = e_a^i`; covariant components `T_a = T_i e_a^i`.
    co: Vec<f64>,
    /// `contra[a*n+i] = θ^a_i`; contravariant components `T^a = θ^a_i T^i`.
    contra: Vec<f64>,
}

impl Frame {
    pub fn from_metric(g: &[f64], n: usize) -> Frame {
        let m = nalgebra::DMatrix::from_row_slice(n, n, g);
        let eig = nalgebra::SymmetricEigen::new(m);
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
        let mut co = vec![0.0; n * n];
        let mut contra = vec![0.0; n * n];
        for (a, &col) in order.iter().enumerate() {
            let s = eig.eigenvalues[col].abs().sqrt();
            for i in 0..n {
                let q = eig.eigenvectors[(i, col)];
                co[a * n + i] = q / s;
                contra[a * n + i] = q * s;
            }
        }
        Frame { n, co, contra }
    }

    /// Components of `t` in this frame.
    pub fn components(&self, t: &Tensor, variance: &[Variance]) -> Tensor {
        assert_eq!(variance.len(), t.rank);
        assert_eq!(t.n, self.n);
        let n = self.n;
        let mut cur = t.data.clone();
        for (slot, v) in variance.iter().enumerate() {
            let m = match v {
                Variance::Co => &self.co,
                Variance::Contra => &self.contra,
            };
            let inner = n.pow((t.rank - slot - 1) as u32);
            let outer = n.pow(slot as u32);
            let mut next = vec![0.0; cur.len()];
            for o in 0..outer {
                for a in 0..n {
                    for r in 0..inner {
                        let mut s = 0.0;
                        for i in 0..n {
                            s += m[a * n + i] * cur[(o * n + i) * inner + r];
                        }
                        next[(o * n + a) * inner + r] = s;
                    }
                }
            }
            cur = next;
        }
        Tensor {
            n,
            rank: t.rank,
            data: cur,
        }
    }

    pub fn norm(&self, t: &Tensor, variance: &[Variance]) -> f64 {
        self.components(t, variance).norm()
    }

    pub fn norm_covariant(&self, t: &Tensor) -> f64 {
        self.norm(t, &vec![Variance::Co; t.rank])
    }
}

/// Frame norm of `t` in the orthonormal frame of `m` at `p`.
pub fn frame_norm(t: &Tensor, variance: &[Variance], m: &MetricField, p: &[f64]) -> Result<f64> {
    let g = m.values(p)?;
    if !is_nondegenerate(&g, m.dim()) {
        return Err(Error::SingularMetric { point: m.describe(p) });
    }
    Ok(Frame::from_metric(&g, m.dim()).norm(t, variance))
}

// ---------------------------------------------------------------------------
// connection

/// Metric, inverse and Christoffel symbols as jets at one point.
///
/// `g` and `ginv` carry three valid orders, `gamma` two.
#[derive(Debug, Clone)]
pub struct Connection {
    pub n: usize,
    pub point: Vec<f64>,
    pub g: Vec<Jet>,
    pub ginv: Vec<Jet>,
    /// `Γ^i_jk` at `(i*n + j)*n + k`.
    pub gamma: Vec<Jet>,
}

impl Connection {
    pub fn gamma_at(&self, i: usize, j: usize, k: usize) -> &Jet {
        &self.gamma[(i * self.n + j) * self.n + k]
    }

    pub fn gamma_values(&self) -> Tensor {
        Tensor {
            n: self.n,
            rank: 3,
            data: self.gamma.iter().map(Jet::value).collect(),
        }
    }

    pub fn metric_values(&self) -> Vec<f64> {
        self.g.iter().map(Jet::value).collect()
    }

    pub fn inverse_values(&self) -> Vec<f64> {
        self.ginv.iter().map(Jet::value).collect()
    }
}

/// Gauss-Jordan inverse with partial pivoting on the jets' values.
pub(crate) fn invert_jets(a: &[Jet], n: usize) -> Option<Vec<Jet>> {
    let nv = a.first().map(Jet::nvars).unwrap_or(0);
    let mut a = a.to_vec();
    let mut inv: Vec<Jet> = (0..n * n)
        .map(|k| Jet::constant(nv, if k / n == k % n { 1.0 } else { 0.0 }))
        .collect();
    for col in 0..n {
        let piv = (col..n).max_by(|&r, &s| a[r * n + col].value().abs().total_cmp(&a[s * n + col].value().abs()))?;
        if a[piv * n + col].value() == 0.0 {
            return None;
        }
        if piv != col {
            for k in 0..n {
                a.swap(col * n + k, piv * n + k);
                inv.swap(col * n + k, piv * n + k);
            }
        }
        let pinv = a[col * n + col].recip();
        for k in 0..n {
            a[col * n + k] = a[col * n + k].mul(&pinv);
            inv[col * n + k] = inv[col * n + k].mul(&pinv);
        }
        for r in 0..n {
            if r == col || a[r * n + col].coefficients().iter().all(|&c| c == 0.0) {
                continue;
            }
            let f = a[r * n + col].clone();
            for k in 0..n {
                let ta = f.mul(&a[col * n + k]);
                let ti = f.mul(&inv[col * n + k]);
                a[r * n + k].sub_assign(&ta);
                inv[r * n + k].sub_assign(&ti);
            }
        }
    }
    Some(inv)
}

pub fn christoffel(m: &MetricField, p: &[f64]) -> Result<Connection> {
    let n = m.dim();
    let g = m.jets(p)?;
    let gv: Vec<f64> = g.iter().map(Jet::value).collect();
    if !is_nondegenerate(&gv, n) {
        return Err(Error::SingularMetric { point: m.describe(p) });
    }
    let ginv = invert_jets(&g, n).ok_or_else(|| Error::SingularMetric { point: m.describe(p) })?;
    // dg[(k*n + i)*n + j] = ∂_k g_ij
    let mut dg = Vec::with_capacity(n * n * n);
    for k in 0..n {
        for gij in &g {
            dg.push(gij.partial(k));
        }
    }
    let d = |k: usize, i: usize, j: usize| &dg[(k * n + i) * n + j];
    let nv = n;
    let mut gamma = vec![Jet::constant(nv, 0.0); n * n * n];
    for j in 0..n {
        for k in j..n {
            // lowered Γ_ljk
            let lowered: Vec<Jet> = (0..n)
                .map(|l| {
                    let mut s = d(j, l, k).clone();
                    s.add_assign(d(k, l, j));
                    s.sub_assign(d(l, j, k));
                    s.scale(0.5)
                })
                .collect();
            for i in 0..n {
                let mut acc = Jet::constant(nv, 0.0);
                for (l, low) in lowered.iter().enumerate() {
                    acc.fma_assign(&ginv[i * n + l], low);
                }
                gamma[(i * n + j) * n + k] = acc.clone();
                gamma[(i * n + k) * n + j] = acc;
            }
        }
    }
    Ok(Connection {
        n,
        point: p.to_vec(),
        g,
        ginv,
        gamma,
    })
}

// ---------------------------------------------------------------------------
// curvature

/// Riemann, Ricci and scalar curvature jets (one valid order).
#[derive(Debug, Clone)]
pub struct Curvature {
    pub conn: Connection,
    /// `R^ρ_σμν` at `((ρ*n + σ)*n + μ)*n + ν`.
    pub riemann_up: Vec<Jet>,
    /// `R_σν` row-major.
    pub ricci: Vec<Jet>,
    pub scalar: Jet,
}

pub fn riemann(conn: Connection) -> Curvature {
    let n = conn.n;
    let zero = Jet::constant(n, 0.0);
    let at4 = |a: usize, b: usize, c: usize, d: usize| ((a * n + b) * n + c) * n + d;
    // dgamma[m][(r*n + s)*n + t] = ∂_m Γ^r_st
    let dgamma: Vec<Vec<Jet>> = (0..n)
        .map(|mu| conn.gamma.iter().map(|j| j.partial(mu)).collect())
        .collect();
    let mut r_up = vec![zero.clone(); n * n * n * n];
    for rho in 0..n {
        for sigma in 0..n {
            for mu in 0..n {
                for nu in (mu + 1)..n {
                    let mut acc = dgamma[mu][(rho * n + nu) * n + sigma].clone();
                    acc.sub_assign(&dgamma[nu][(rho * n + mu) * n + sigma]);
                    for lam in 0..n {
                        acc.fma_assign(conn.gamma_at(rho, mu, lam), conn.gamma_at(lam, nu, sigma));
                        let t = conn.gamma_at(rho, nu, lam).mul(conn.gamma_at(lam, mu, sigma));
                        acc.sub_assign(&t);
                    }
                    r_up[at4(rho, sigma, nu, mu)] = acc.scale(-1.0);
                    r_up[at4(rho, sigma, mu, nu)] = acc;
                }
            }
        }
    }
    let mut ricci = vec![zero.clone(); n * n];
    for s in 0..n {
        for v in 0..n {
            let mut acc = zero.clone();
            for l in 0..n {
                acc.add_assign(&r_up[at4(l, s, l, v)]);
            }
            ricci[s * n + v] = acc;
        }
    }
    let mut scalar = zero;
    for s in 0..n {
        for v in 0..n {
            scalar.fma_assign(&conn.ginv[s * n + v], &ricci[s * n + v]);
        }
    }
    Curvature {
        conn,
        riemann_up: r_up,
        ricci,
        scalar,
    }
}

impl Curvature {
    pub fn riemann_up_values(&self) -> Tensor {
        Tensor {
            n: self.conn.n,
            rank: 4,
            data: self.riemann_up.iter().map(Jet::value).collect(),
        }
    }

    /// `R_ρσμν = g_ρα R^α_σμν`.
    pub fn riemann_down_values(&self) -> Tensor {
        let n = self.conn.n;
        let g = self.conn.metric_values();
        let up = self.riemann_up_values();
        let mut out = Tensor::zeros(n, 4);
        let block = n * n * n;
        for rho in 0..n {
            for rest in 0..block {
                let mut s = 0.0;
                for a in 0..n {
                    s += g[rho * n + a] * up.data[a * block + rest];
                }
                out.data[rho * block + rest] = s;
            }
        }
        out
    }

    pub fn ricci_values(&self) -> Tensor {
        Tensor {
            n: self.conn.n,
            rank: 2,
            data: self.ricci.iter().map(Jet::value).collect(),
        }
    }

    pub fn scalar_value(&self) -> f64 {
        self.scalar.value()
    }

    /// `R_μν;κ = ∂_κ R_μν − Γ^λ_κμ R_λν − Γ^λ_κν R_μλ` at `(μ*n+ν)*n+κ`.
    pub fn ricci_gradient(&self) -> Tensor {
        let n = self.conn.n;
        let ric = self.ricci_values();
        let mut out = Tensor::zeros(n, 3);
        for mu in 0..n {
            for nu in 0..n {
                for ka in 0..n {
                    let mut s = self.ricci[mu * n + nu].d1(ka);
                    for lam in 0..n {
                        s -= self.conn.gamma_at(lam, ka, mu).value() * ric.get(&[lam, nu]);
                        s -= self.conn.gamma_at(lam, ka, nu).value() * ric.get(&[mu, lam]);
                    }
                    out.set(&[mu, nu, ka], s);
                }
            }
        }
        out
    }

    /// Cotton-York tensor, antisymmetric in its first and last index:
    /// `C_μνκ = R_μν;κ − R_κν;μ + ¼(R_;μ g_κν − R_;κ g_μν)`.
    pub fn cotton_values(&self) -> Tensor {
        let n = self.conn.n;
        let g = self.conn.metric_values();
        let grad = self.ricci_gradient();
        let mut out = Tensor::zeros(n, 3);
        for mu in 0..n {
            for nu in 0..n {
                for ka in 0..n {
                    let v = grad.get(&[mu, nu, ka]) - grad.get(&[ka, nu, mu])
                        + 0.25 * (self.scalar.d1(mu) * g[ka * n + nu] - self.scalar.d1(ka) * g[mu * n + nu]);
                    out.set(&[mu, nu, ka], v);
                }
            }
        }
        out
    }

    /// Weyl tensor, `n >= 3` (identically zero for `n = 3`).
    pub fn weyl_values(&self) -> Tensor {
        let n = self.conn.n;
        let nf = n as f64;
        let g = self.conn.metric_values();
        let gg = |i: usize, j: usize| g[i * n + j];
        let ric = self.ricci_values();
        let rc = |i: usize, j: usize| ric.get(&[i, j]);
        let r = self.scalar_value();
        let riem = self.riemann_down_values();
        let mut out = Tensor::zeros(n, 4);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let ricci_part = (gg(i, k) * rc(j, l) - gg(i, l) * rc(j, k) - gg(j, k) * rc(i, l)
                            + gg(j, l) * rc(i, k))
                            / (nf - 2.0);
                        let scalar_part = r / ((nf - 1.0) * (nf - 2.0)) * (gg(i, k) * gg(j, l) - gg(i, l) * gg(j, k));
                        out.set(&[i, j, k, l], riem.get(&[i, j, k, l]) - ricci_part + scalar_part);
                    }
                }
            }
        }
        out
    }

    pub fn frame(&self) -> Frame {
        Frame::from_metric(&self.conn.metric_values(), self.conn.n)
    }

    /// Frame norms of `∂g`, `∂²g`, `∂³g`, treating each as covariant.
    pub fn derivative_scales(&self) -> [f64; 3] {
        let n = self.conn.n;
        let frame = self.frame();
        let mut out = [0.0; 3];
        for (order, slot) in out.iter_mut().enumerate() {
            let rank = order + 3;
            let mut t = Tensor::zeros(n, rank);
            let total = n.pow(rank as u32);
            for flat in 0..total {
                let mut idx = vec![0usize; rank];
                let mut rem = flat;
                for s in (0..rank).rev() {
                    idx[s] = rem % n;
                    rem /= n;
                }
                let gij = &self.conn.g[idx[0] * n + idx[1]];
                t.data[flat] = gij.derivative(&idx[2..]);
            }
            *slot = frame.norm_covariant(&t);
        }
        out
    }

    fn second_order_scale(&self) -> f64 {
        let [s1, s2, _] = self.derivative_scales();
        s2 + s1 * s1
    }

    fn third_order_scale(&self) -> f64 {
        let [s1, s2, s3] = self.derivative_scales();
        s3 + s2 * s1 + s1 * s1 * s1
    }

    /// `R / (n(n−1))`, `None` for `n < 2`.
    pub fn sectional_constant(&self) -> Option<f64> {
        let n = self.conn.n as f64;
        (self.conn.n >= 2).then(|| self.scalar_value() / (n * (n - 1.0)))
    }

    /// `(K, ‖R_ijkl − K(g_ik g_jl − g_il g_jk)‖ / scale)`.
    pub fn max_symmetry_residual(&self) -> Option<(f64, f64)> {
        let k = self.sectional_constant()?;
        let n = self.conn.n;
        let g = self.conn.metric_values();
        let gg = |i: usize, j: usize| g[i * n + j];
        let riem = self.riemann_down_values();
        let mut diff = riem.clone();
        for i in 0..n {
            for j in 0..n {
                for a in 0..n {
                    for b in 0..n {
                        let o = diff.offset(&[i, j, a, b]);
                        diff.data[o] -= k * (gg(i, a) * gg(j, b) - gg(i, b) * gg(j, a));
                    }
                }
            }
        }
        let frame = self.frame();
        let g_norm_sq = n as f64; // ‖g‖² in an orthonormal frame
        let scale = frame.norm_covariant(&riem) + k.abs() * g_norm_sq + self.second_order_scale() + EPS;
        Some((k, frame.norm_covariant(&diff) / scale))
    }

    /// First Bianchi identity residual `R_ijkl + R_iklj + R_iljk`.
    pub fn bianchi_residual(&self) -> f64 {
        let n = self.conn.n;
        let riem = self.riemann_down_values();
        let mut cyc = Tensor::zeros(n, 4);
        for i in 0..n {
            for j in 0..n {
                for k in 0..n {
                    for l in 0..n {
                        let v = riem.get(&[i, j, k, l]) + riem.get(&[i, k, l, j]) + riem.get(&[i, l, j, k]);
                        cyc.set(&[i, j, k, l], v);
                    }
                }
            }
        }
        let frame = self.frame();
        frame.norm_covariant(&cyc) / (frame.norm_covariant(&riem) + self.second_order_scale() + EPS)
    }

    /// `‖C‖ / (‖∇Ric‖ + scale)` for the Cotton-York tensor (n = 3).
    pub fn cotton_residual(&self) -> f64 {
        let frame = self.frame();
        let c = frame.norm_covariant(&self.cotton_values());
        c / (frame.norm_covariant(&self.ricci_gradient()) + self.third_order_scale() + EPS)
    }

    /// `‖W‖ / (‖Riem‖ + scale)` for the Weyl tensor.
    pub fn weyl_residual(&self) -> f64 {
        let frame = self.frame();
        let w = frame.norm_covariant(&self.weyl_values());
        w / (frame.norm_covariant(&self.riemann_down_values()) + self.second_order_scale() + EPS)
    }
}

pub fn curvature_at(m: &MetricField, p: &[f64]) -> Result<Curvature> {
    Ok(riemann(christoffel(m, p)?))
}

/// Ricci tensor and scalar jets (one valid order).
pub fn ricci_scalar(m: &MetricField, p: &[f64]) -> Result<(Vec<Jet>, Jet)> {
    let c = curvature_at(m, p)?;
    Ok((c.ricci, c.scalar))
}

/// All 27 components and the normalized norm.
pub fn cotton_york(m: &MetricField, p: &[f64]) -> Result<(Tensor, f64)> {
    if m.dim() != 3 {
        return Err(Error::Dimension {
            op: "cotton_york",
            expected: "3".into(),
            got: m.dim(),
        });
    }
    let c = curvature_at(m, p)?;
    Ok((c.cotton_values(), c.cotton_residual()))
}

pub fn weyl(m: &MetricField, p: &[f64]) -> Result<(Tensor, f64)> {
    if m.dim() < 4 {
        return Err(Error::Dimension {
            op: "weyl",
            expected: ">= 4".into(),
            got: m.dim(),
        });
    }
    let c = curvature_at(m, p)?;
    Ok((c.weyl_values(), c.weyl_residual()))
}

/// `(K, residual)` with `K = R/(n(n−1))`.
pub fn constant_curvature_residual(m: &MetricField, p: &[f64]) -> Result<(f64, f64)> {
    if m.dim() < 2 {
        return Err(Error::Dimension {
            op: "constant_curvature_residual",
            expected: ">= 2".into(),
            got: m.dim(),
        });
    }
    let c = curvature_at(m, p)?;
    Ok(c.max_symmetry_residual().expect("n >= 2"))
}

/// `U_xx + U_yy + κ e^{2U}` at `p`; zero everywhere iff `e^{2U}δ` has
/// constant Gaussian curvature `κ`.
pub fn liouville_residual(
    u: &Expr,
    coords: [&str; 2],
    params: &std::collections::BTreeMap<String, f64>,
    kappa: f64,
    p: [f64; 2],
) -> Result<f64> {
    let j = eval_jet(u, &p, &coords, params)?;
    Ok(j.derivative(&[0, 0]) + j.derivative(&[1, 1]) + kappa * (2.0 * j.value()).exp())
}

// ---------------------------------------------------------------------------
// report

#[derive(Debug, Clone, PartialEq)]
pub struct Residuals {
    pub max_sym: Option<f64>,
    pub cotton: Option<f64>,
    pub weyl: Option<f64>,
    pub bianchi: f64,
}

#[derive(Debug, Clone)]
pub struct CurvatureReport {
    pub point: Vec<f64>,
    pub gamma: Tensor,
    pub riemann_up: Tensor,
    pub riemann: Tensor,
    pub ricci: Tensor,
    pub scalar: f64,
    pub cotton: Option<Tensor>,
    pub weyl: Option<Tensor>,
    pub k: Option<f64>,
    pub residuals: Residuals,
}

impl CurvatureReport {
    pub fn at(m: &MetricField, p: &[f64]) -> Result<CurvatureReport> {
        let c = curvature_at(m, p)?;
        let n = m.dim();
        let (k, max_sym) = match c.max_symmetry_residual() {
            Some((k, r)) => (Some(k), Some(r)),
            None => (None, None),
        };
        let (cotton, cotton_res) = if n == 3 {
            (Some(c.cotton_values()), Some(c.cotton_residual()))
        } else {
            (None, None)
        };
        let (weyl, weyl_res) = if n >= 4 {
            (Some(c.weyl_values()), Some(c.weyl_residual()))
        } else {
            (None, None)
        };
        Ok(CurvatureReport {
            point: p.to_vec(),
            gamma: c.conn.gamma_values(),
            riemann_up: c.riemann_up_values(),
            riemann: c.riemann_down_values(),
            ricci: c.ricci_values(),
            scalar: c.scalar_value(),
            cotton,
            weyl,
            k,
            residuals: Residuals {
                max_sym,
                cotton: cotton_res,
                weyl: weyl_res,
                bianchi: c.bianchi_residual(),
            },
        })
    }

    /// `{point, K, residuals:{max_sym, cotton, weyl}, R, tensors?}`.
    pub fn to_json(&self, verbose: bool) -> Value {
        let mut obj = serde_json::Map::new();
        obj.insert("point".into(), json!(self.point));
        obj.insert("K".into(), json!(self.k));
        obj.insert(
            "residuals".into(),
            json!({
                "max_sym": self.residuals.max_sym,
                "cotton": self.residuals.cotton,
                "weyl": self.residuals.weyl,
            }),
        );
        obj.insert("R".into(), json!(self.scalar));
        if verbose {
            let mut t = serde_json::Map::new();
            t.insert("christoffel".into(), self.gamma.nested());
            t.insert("riemann_up".into(), self.riemann_up.nested());
            t.insert("riemann".into(), self.riemann.nested());
            t.insert("ricci".into(), self.ricci.nested());
            if let Some(c) = &self.cotton {
                t.insert("cotton".into(), c.nested());
            }
            if let Some(w) = &self.weyl {
                t.insert("weyl".into(), w.nested());
            }
            obj.insert("tensors".into(), Value::Object(t));
        }
        Value::Object(obj)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::parse;
    use crate::metric::Interval;
    use std::collections::BTreeMap;

    fn metric(coords: &[&str], rows: &[&[&str]], params: &[(&str, f64)]) -> MetricField {
        MetricField::from_rows(
            coords.iter().map(|s| s.to_string()).collect(),
            params.iter().map(|(k, v)| (k.to_string(), *v)).collect(),
            vec![Interval::new(-10.0, 10.0); coords.len()],
            rows.iter()
                .map(|r| r.iter().map(|s| parse(s).unwrap()).collect())
                .collect(),
        )
        .unwrap()
    }

    #[test]
    fn euclidean_has_zero_connection() {
        let m = metric(&["x", "y"], &[&["1", "0"], &["0", "1"]], &[]);
        let c = christoffel(&m, &[0.3, -2.0]).unwrap();
        assert!(c.gamma_values().data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn polar_christoffels() {
        let m = metric(&["r", "th"], &[&["1", "0"], &["0", "r^2"]], &[]);
        let c = christoffel(&m, &[2.0, 0.7]).unwrap();
        let g = c.gamma_values();
        assert!((g.get(&[0, 1, 1]) + 2.0).abs() < 1e-14);
        assert!((g.get(&[1, 0, 1]) - 0.5).abs() < 1e-14);
        assert!((g.get(&[1, 1, 0]) - 0.5).abs() < 1e-14);
        for (i, j, k) in [(0, 0, 0), (0, 0, 1), (0, 1, 0), (1, 0, 0), (1, 1, 1)] {
            assert_eq!(g.get(&[i, j, k]), 0.0);
        }
    }

    #[test]
    fn szekeres_metric_is_flat_connection() {
        let m = metric(&["u", "v"], &[&["0", "1"], &["1", "0"]], &[]);
        let c = christoffel(&m, &[1.0, 1.0]).unwrap();
        assert!(c.gamma_values().data.iter().all(|&g| g == 0.0));
    }

    #[test]
    fn singular_metric_rejected() {
        let m = metric(&["x", "y"], &[&["x", "0"], &["0", "1"]], &[]);
        assert!(matches!(
            christoffel(&m, &[0.0, 1.0]),
            Err(Error::SingularMetric { .. })
        ));
    }

    #[test]
    fn polar_plane_is_flat() {
        let m = metric(&["r", "th"], &[&["1", "0"], &["0", "r^2"]], &[]);
        let c = curvature_at(&m, &[1.7, 0.4]).unwrap();
        assert!(c.riemann_up_values().data.iter().all(|x| x.abs() < 1e-10));
        assert!(c.scalar_value().abs() < 1e-10);
    }

    #[test]
    fn unit_sphere() {
        let m = metric(&["th", "ph"], &[&["1", "0"], &["0", "sin(th)^2"]], &[]);
        let th: f64 = 0.9;
        let c = curvature_at(&m, &[th, 0.3]).unwrap();
        let r = c.riemann_down_values();
        assert!((r.get(&[0, 1, 0, 1]) - th.sin().powi(2)).abs() < 1e-12);
        assert_eq!(r.get(&[0, 1, 0, 1]), -r.get(&[1, 0, 0, 1]));
        assert_eq!(r.get(&[0, 1, 0, 1]), -r.get(&[0, 1, 1, 0]));
        assert!((c.scalar_value() - 2.0).abs() < 1e-12);
        let (k, res) = c.max_symmetry_residual().unwrap();
        assert!((k - 1.0).abs() < 1e-12);
        assert!(res < 1e-12);
    }

    #[test]
    fn sphere_of_radius_a() {
        let m = metric(&["th", "ph"], &[&["a^2", "0"], &["0", "a^2*sin(th)^2"]], &[("a", 3.0)]);
        let (k, res) = constant_curvature_residual(&m, &[1.1, 0.2]).unwrap();
        assert!((k - 1.0 / 9.0).abs() < 1e-13);
        assert!(res < 1e-12);
    }

    #[test]
    fn szekeres_lambda_printed_spot_value() {
        let m = metric(
            &["u", "v"],
            &[&["0", "1/(2*(v/u^2 - L*u*v - h))"], &["1/(2*(v/u^2 - L*u*v - h))", "0"]],
            &[("L", 1.0), ("h", 1.0)],
        );
        let (_, r) = ricci_scalar(&m, &[1.0, 2.0]).unwrap();
        assert!((r.value() + 12.0).abs() < 1e-10, "{}", r.value());
    }

    #[test]
    fn cotton_dimension_checked() {
        let m = metric(&["x", "y"], &[&["1", "0"], &["0", "1"]], &[]);
        assert!(matches!(cotton_york(&m, &[0.0, 0.0]), Err(Error::Dimension { .. })));
        assert!(matches!(weyl(&m, &[0.0, 0.0]), Err(Error::Dimension { .. })));
    }

    #[test]
    fn exponential_lift_cotton() {
        let rows: &[&[&str]] = &[
            &["1", "0", "0"],
            &["0", "1", "0"],
            &["0", "0", "1/(V0*exp(q1 - q2) - h)"],
        ];
        let flat = metric(&["q1", "q2", "z"], rows, &[("V0", 1.0), ("h", 0.0)]);
        let (c, res) = cotton_york(&flat, &[0.0, 0.0, 0.0]).unwrap();
        assert!(res < 1e-9, "{res}");
        // antisymmetric in first and last index
        for a in 0..3 {
            for b in 0..3 {
                for d in 0..3 {
                    assert!((c.get(&[a, b, d]) + c.get(&[d, b, a])).abs() < 1e-12);
                }
            }
        }
        let bent = metric(&["q1", "q2", "z"], rows, &[("V0", 2.0), ("h", 1.0)]);
        let (_, res) = cotton_york(&bent, &[0.0, 0.0, 0.0]).unwrap();
        assert!(res > 1e-3, "{res}");
    }

    #[test]
    fn weyl_vanishes_for_conformally_flat() {
        let m = metric(
            &["t", "x", "y", "z"],
            &[
                &["-exp(2*x)", "0", "0", "0"],
                &["0", "exp(2*x)", "0", "0"],
                &["0", "0", "exp(2*x)", "0"],
                &["0", "0", "0", "exp(2*x)"],
            ],
            &[],
        );
        let (_, res) = weyl(&m, &[0.1, 0.3, -0.2, 0.5]).unwrap();
        assert!(res < 1e-9, "{res}");
    }

    #[test]
    fn weyl_detects_schwarzschild_like() {
        let m = metric(
            &["t", "r", "th", "ph"],
            &[
                &["-(1 - 1/r)", "0", "0", "0"],
                &["0", "1/(1 - 1/r)", "0", "0"],
                &["0", "0", "r^2", "0"],
                &["0", "0", "0", "r^2*sin(th)^2"],
            ],
            &[],
        );
        let (_, res) = weyl(&m, &[0.0, 3.0, 1.0, 0.0]).unwrap();
        assert!(res > 1e-2, "{res}");
    }

    #[test]
    fn liouville_examples() {
        let none = BTreeMap::new();
        let k1: BTreeMap<String, f64> = [("k".to_string(), 1.0)].into();
        let u = parse("-ln(1 + k/4*(x^2 + y^2))").unwrap();
        for p in [[0.0, 0.0], [0.3, -1.2], [2.0, 1.5]] {
            assert!(liouville_residual(&u, ["x", "y"], &k1, 1.0, p).unwrap().abs() < 1e-10);
        }
        assert_eq!(
            liouville_residual(&parse("0").unwrap(), ["x", "y"], &none, 0.0, [0.4, 0.1]).unwrap(),
            0.0
        );
        let r = liouville_residual(&parse("x").unwrap(), ["x", "y"], &none, 1.0, [1.0, 0.0]).unwrap();
        assert!((r - 1f64.exp().powi(2)).abs() < 1e-12);
    }

    #[test]
    fn frame_norm_scaling() {
        let id = metric(&["x", "y"], &[&["1", "0"], &["0", "1"]], &[]);
        let v = Tensor {
            n: 2,
            rank: 1,
            data: vec![3.0, 4.0],
        };
        assert!((frame_norm(&v, &[Variance::Contra], &id, &[0.0, 0.0]).unwrap() - 5.0).abs() < 1e-14);
        let scaled = metric(&["x", "y"], &[&["4", "0"], &["0", "4"]], &[]);
        let up = frame_norm(&v, &[Variance::Contra], &scaled, &[0.0, 0.0]).unwrap();
        let down = frame_norm(&v, &[Variance::Co], &scaled, &[0.0, 0.0]).unwrap();
        assert!((up - 10.0).abs() < 1e-13);
        assert!((down - 2.5).abs() < 1e-13);
        let t = Tensor {
            n: 2,
            rank: 2,
            data: vec![1.0, 0.0, 0.0, 1.0],
        };
        let n2 = frame_norm(&t, &[Variance::Co, Variance::Co], &scaled, &[0.0, 0.0]).unwrap();
        assert!((n2 - 2f64.sqrt() / 4.0).abs() < 1e-13);
    }

    #[test]
    fn report_json_key_order() {
        let m = metric(&["x", "y"], &[&["1", "0"], &["0", "1"]], &[]);
        let r = CurvatureReport::at(&m, &[0.0, 0.0]).unwrap();
        let s = serde_json::to_string(&r.to_json(false)).unwrap();
        assert!(
            s.starts_with("{\"point\":[0.0,0.0],\"K\":0.0,\"residuals\":{\"max_sym\":"),
            "{s}"
        );
        assert!(!s.contains("tensors"));
        assert!(serde_json::to_string(&r.to_json(true)).unwrap().contains("\"tensors\""));
    }
}
