//! Order-3 truncated multivariate Taylor scalars.
//!
//! A [`Jet`] over `n` variables stores the Taylor coefficients
//! `c_μ = ∂^μ f / μ!` for every multi-index with `|μ| <= 3`. Coefficients are
//! laid out in graded lexicographic order: degree first, then the sorted
//! variable tuple `(i <= j <= k)` lexicographically. Mixed partials are stored
//! once.
//!
//! Differentiating a jet ([`Jet::partial`]) lowers the number of trustworthy
//! orders by one; the top order is zeroed and callers only read what is valid.

use std::collections::HashMap;
use std::sync::OnceLock;

pub const MAX_VARS: usize = 16;
pub const ORDER: usize = 3;

#[derive(Debug)]
struct Layout {
    n: usize,
    /// Sorted variable tuples, one per coefficient.
    tuples: Vec<Vec<usize>>,
    index: HashMap<Vec<usize>, usize>,
    /// `(out, a, b)`: `c[out] += a[a] * b[b]`.
    products: Vec<(u16, u16, u16)>,
    /// Per variable: `(dst, src, factor)` for `∂_i`.
    partials: Vec<Vec<(u16, u16, f64)>>,
}

fn size_for(n: usize) -> usize {
    1 + n + n * (n + 1) / 2 + n * (n + 1) * (n + 2) / 6
}

impl Layout {
    fn build(n: usize) -> Layout {
        let mut tuples: Vec<Vec<usize>> = vec![vec![]];
        for i in 0..n {
            tuples.push(vec![i]);
        }
        for i in 0..n {
            for j in i..n {
                tuples.push(vec![i, j]);
            }
        }
        for i in 0..n {
            for j in i..n {
                for k in j..n {
                    tuples.push(vec![i, j, k]);
                }
            }
        }
        debug_assert_eq!(tuples.len(), size_for(n));
        let index: HashMap<Vec<usize>, usize> = tuples.iter().enumerate().map(|(i, t)| (t.clone(), i)).collect();

        let mut products = Vec::new();
        for (a, ta) in tuples.iter().enumerate() {
            for (b, tb) in tuples.iter().enumerate() {
                if ta.len() + tb.len() > ORDER {
                    continue;
                }
                let mut t: Vec<usize> = ta.iter().chain(tb.iter()).copied().collect();
                t.sort_unstable();
                products.push((index[&t] as u16, a as u16, b as u16));
            }
        }

        let mut partials = vec![Vec::new(); n];
        for (i, list) in partials.iter_mut().enumerate() {
            for (dst, t) in tuples.iter().enumerate() {
                if t.len() == ORDER {
                    continue;
                }
                let mut up = t.clone();
                up.push(i);
                up.sort_unstable();
                let mult = up.iter().filter(|&&x| x == i).count() as f64;
                list.push((dst as u16, index[&up] as u16, mult));
            }
        }
        Layout {
            n,
            tuples,
            index,
            products,
            partials,
        }
    }

    fn get(n: usize) -> &'static Layout {
        static LAYOUTS: OnceLock<Vec<Layout>> = OnceLock::new();
        assert!(n <= MAX_VARS, "jets support at most {MAX_VARS} variables");
        &LAYOUTS.get_or_init(|| (0..=MAX_VARS).map(Layout::build).collect())[n]
    }
}

#[derive(Clone)]
pub struct Jet {
    layout: &'static Layout,
    coef: Vec<f64>,
}

impl std::fmt::Debug for Jet {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Jet")
            .field("n", &self.layout.n)
            .field("coef", &self.coef)
            .finish()
    }
}

impl PartialEq for Jet {
    fn eq(&self, other: &Jet) -> bool {
        self.layout.n == other.layout.n && self.coef == other.coef
    }
}

fn sorted(index: &[usize]) -> Vec<usize> {
    let mut t = index.to_vec();
    t.sort_unstable();
    t
}

fn multiplicity_factorial(t: &[usize]) -> f64 {
    let mut out = 1.0;
    let mut run = 1.0;
    for w in t.windows(2) {
        if w[0] == w[1] {
            run += 1.0;
            out *= run;
        } else {
            run = 1.0;
        }
    }
    out
}

impl Jet {
    pub fn constant(n: usize, v: f64) -> Jet {
        let layout = Layout::get(n);
        let mut coef = vec![0.0; layout.tuples.len()];
        coef[0] = v;
        Jet { layout, coef }
    }

    /// The coordinate function `x_i` at value `v`.
    pub fn variable(n: usize, i: usize, v: f64) -> Jet {
        assert!(i < n);
        let mut j = Jet::constant(n, v);
        j.coef[1 + i] = 1.0;
        j
    }

    pub fn nvars(&self) -> usize {
        self.layout.n
    }

    pub fn len(&self) -> usize {
        self.coef.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coef.is_empty()
    }

    pub fn value(&self) -> f64 {
        self.coef[0]
    }

    /// Raw coefficients in graded lexicographic order.
    pub fn coefficients(&self) -> &[f64] {
        &self.coef
    }

    /// Sorted variable tuple of each coefficient, in storage order.
    pub fn multi_indices(&self) -> impl Iterator<Item = &[usize]> {
        self.layout.tuples.iter().map(|t| t.as_slice())
    }

    /// Taylor coefficient for the variable tuple `index` (any order, repeats
    /// allowed), i.e. `∂^μ f / μ!`.
    pub fn coeff(&self, index: &[usize]) -> f64 {
        self.coef[self.layout.index[&sorted(index)]]
    }

    /// Partial derivative value `∂_{index} f` at the expansion point.
    pub fn derivative(&self, index: &[usize]) -> f64 {
        let t = sorted(index);
        self.coef[self.layout.index[&t]] * multiplicity_factorial(&t)
    }

    pub fn d1(&self, i: usize) -> f64 {
        self.coef[1 + i]
    }

    /// `∂_i` as a jet; the highest order of the result is zero (unknown).
    pub fn partial(&self, i: usize) -> Jet {
        let mut coef = vec![0.0; self.coef.len()];
        for &(dst, src, f) in &self.layout.partials[i] {
            coef[dst as usize] = self.coef[src as usize] * f;
        }
        Jet {
            layout: self.layout,
            coef,
        }
    }

    pub fn scale(&self, s: f64) -> Jet {
        Jet {
            layout: self.layout,
            coef: self.coef.iter().map(|c| c * s).collect(),
        }
    }

    pub fn add_assign(&mut self, o: &Jet) {
        for (a, b) in self.coef.iter_mut().zip(&o.coef) {
            *a += b;
        }
    }

    pub fn sub_assign(&mut self, o: &Jet) {
        for (a, b) in self.coef.iter_mut().zip(&o.coef) {
            *a -= b;
        }
    }

    pub fn mul(&self, o: &Jet) -> Jet {
        debug_assert_eq!(self.layout.n, o.layout.n);
        let mut coef = vec![0.0; self.coef.len()];
        for &(out, a, b) in &self.layout.products {
            coef[out as usize] += self.coef[a as usize] * o.coef[b as usize];
        }
        Jet {
            layout: self.layout,
            coef,
        }
    }

    /// `self += a * b`.
    pub fn fma_assign(&mut self, a: &Jet, b: &Jet) {
        for &(out, i, j) in &self.layout.products {
            self.coef[out as usize] += a.coef[i as usize] * b.coef[j as usize];
        }
    }

    /// `f ∘ self` from `f, f', f'', f'''` at `self.value()`.
    ///
    /// With `δ = self - value`, `f(self) = Σ_k f^(k) δ^k / k!`, which is the
    /// third-order Faà di Bruno formula written in Taylor coefficients.
    pub fn compose(&self, d: [f64; 4]) -> Jet {
        let mut delta = self.clone();
        delta.coef[0] = 0.0;
        let delta2 = delta.mul(&delta);
        let delta3 = delta2.mul(&delta);
        let mut coef = vec![0.0; self.coef.len()];
        coef[0] = d[0];
        for (i, c) in coef.iter_mut().enumerate().skip(1) {
            *c = d[1] * delta.coef[i] + d[2] * 0.5 * delta2.coef[i] + d[3] / 6.0 * delta3.coef[i];
        }
        Jet {
            layout: self.layout,
            coef,
        }
    }

    pub fn recip(&self) -> Jet {
        let r = 1.0 / self.value();
        self.compose([r, -r * r, 2.0 * r * r * r, -6.0 * r * r * r * r])
    }
}

impl crate::expr::Scalar for Jet {
    fn value(&self) -> f64 {
        self.coef[0]
    }
    fn constant_like(&self, c: f64) -> Jet {
        Jet::constant(self.layout.n, c)
    }
    fn add(&self, o: &Jet) -> Jet {
        let mut out = self.clone();
        out.add_assign(o);
        out
    }
    fn sub(&self, o: &Jet) -> Jet {
        let mut out = self.clone();
        out.sub_assign(o);
        out
    }
    fn mul(&self, o: &Jet) -> Jet {
        Jet::mul(self, o)
    }
    fn neg(&self) -> Jet {
        self.scale(-1.0)
    }
    fn compose(&self, derivs: [f64; 4]) -> Jet {
        Jet::compose(self, derivs)
    }
    fn all_finite(&self) -> bool {
        self.coef.iter().all(|c| c.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{eval_jet, parse};
    use std::collections::BTreeMap;

    #[test]
    fn layout_sizes() {
        for n in 0..=MAX_VARS {
            assert_eq!(Jet::constant(n, 0.0).len(), size_for(n));
        }
        assert_eq!(Jet::constant(16, 0.0).len(), 969);
    }

    #[test]
    fn graded_lex_order() {
        let j = Jet::constant(2, 0.0);
        let idx: Vec<Vec<usize>> = j.multi_indices().map(|t| t.to_vec()).collect();
        assert_eq!(
            idx,
            vec![
                vec![],
                vec![0],
                vec![1],
                vec![0, 0],
                vec![0, 1],
                vec![1, 1],
                vec![0, 0, 0],
                vec![0, 0, 1],
                vec![0, 1, 1],
                vec![1, 1, 1],
            ]
        );
    }

    #[test]
    fn variable_seed() {
        let v = Jet::variable(3, 1, 2.5);
        assert_eq!(v.value(), 2.5);
        assert_eq!((v.d1(0), v.d1(1), v.d1(2)), (0.0, 1.0, 0.0));
        assert!(v.coefficients()[4..].iter().all(|&c| c == 0.0));
    }

    #[test]
    fn polynomial_coefficient() {
        let e = parse("x^2*y").unwrap();
        let j = eval_jet(&e, &[1.0, 2.0], &["x", "y"], &BTreeMap::new()).unwrap();
        assert_eq!(j.coeff(&[0, 0, 1]), 1.0);
        assert_eq!(j.derivative(&[0, 0, 1]), 2.0);
        assert_eq!(j.derivative(&[0, 0]), 4.0);
        assert_eq!(j.value(), 2.0);
    }

    #[test]
    fn exp_taylor() {
        let e = parse("exp(x)").unwrap();
        let j = eval_jet(&e, &[0.0], &["x"], &BTreeMap::new()).unwrap();
        let c = j.coefficients();
        assert!((c[0] - 1.0).abs() < 1e-15);
        assert!((c[1] - 1.0).abs() < 1e-15);
        assert!((c[2] - 0.5).abs() < 1e-15);
        assert!((c[3] - 1.0 / 6.0).abs() < 1e-15);
    }

    #[test]
    fn partial_lowers_order() {
        let e = parse("x^3*y").unwrap();
        let j = eval_jet(&e, &[2.0, 3.0], &["x", "y"], &BTreeMap::new()).unwrap();
        let dx = j.partial(0);
        // ∂x = 3x²y; ∂x∂x = 6xy; ∂x∂y = 3x²
        assert_eq!(dx.value(), 36.0);
        assert_eq!(dx.derivative(&[0]), 36.0);
        assert_eq!(dx.derivative(&[1]), 12.0);
        assert_eq!(dx.derivative(&[0, 1]), 12.0);
        assert_eq!(dx.derivative(&[0, 0]), 18.0);
    }

    #[test]
    fn recip_matches_quotient() {
        let x = Jet::variable(1, 0, 2.0);
        let r = x.recip();
        // 1/x at 2: 1/2, -1/4, 2/8, -6/16
        assert_eq!(r.derivative(&[]), 0.5);
        assert_eq!(r.derivative(&[0]), -0.25);
        assert_eq!(r.derivative(&[0, 0]), 0.25);
        assert_eq!(r.derivative(&[0, 0, 0]), -0.375);
    }
}
