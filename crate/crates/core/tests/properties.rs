use std::collections::BTreeMap;

use proptest::prelude::*;
use proptest::test_runner::RngSeed;

use geolin_core::curvature::curvature_at;
use geolin_core::expr::{eval_jet, eval_scalar, fd_oracle, parse, Expr, Func};
use geolin_core::metric::{Interval, MetricField};
use geolin_core::systems::SystemSpec;

const VARS: [&str; 2] = ["x", "y"];

/// Expression trees over `x`, `y` and parameter `a` that stay smooth and
/// moderate on `[0.5, 1.5]^2` for `a` in `[-1, 1]`.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (-3.0f64..3.0).prop_map(|c| Expr::c((c * 100.0).round() / 100.0)),
        Just(Expr::sym("x")),
        Just(Expr::sym("y")),
        Just(Expr::sym("a")),
    ];
    leaf.prop_recursive(3, 16, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            // 1/(2 + u^2) keeps the divisor away from zero
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(
                Box::new(a),
                Box::new(Expr::Add(
                    Box::new(Expr::c(2.0)),
                    Box::new(Expr::Pow(Box::new(b), Box::new(Expr::c(2.0))))
                ))
            )),
            (inner.clone(), 0u8..4).prop_map(|(a, k)| Expr::Pow(Box::new(a), Box::new(Expr::c(k as f64)))),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            inner.clone().prop_map(|a| Expr::Call(Func::Sin, Box::new(a))),
            inner.clone().prop_map(|a| Expr::Call(Func::Cos, Box::new(a))),
            inner
                .clone()
                .prop_map(|a| Expr::Call(Func::Exp, Box::new(Expr::Call(Func::Sin, Box::new(a))))),
            inner.clone().prop_map(|a| Expr::Call(
                Func::Ln,
                Box::new(Expr::Add(
                    Box::new(Expr::c(2.0)),
                    Box::new(Expr::Call(Func::Cos, Box::new(a)))
                ))
            )),
            inner.prop_map(|a| Expr::Call(
                Func::Sqrt,
                Box::new(Expr::Add(
                    Box::new(Expr::c(1.0)),
                    Box::new(Expr::Pow(Box::new(a), Box::new(Expr::c(2.0))))
                ))
            )),
        ]
    })
}

/// Arbitrary well-formed trees, including constants that print with
/// exponents and negative literals.
fn any_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        any::<f64>().prop_filter("finite", |v| v.is_finite()).prop_map(Expr::c),
        (0u32..1000).prop_map(|k| Expr::c(k as f64)),
        "[a-z][a-z0-9_]{0,4}".prop_map(Expr::sym),
    ];
    let funcs = [Func::Exp, Func::Ln, Func::Sin, Func::Cos, Func::Sqrt];
    leaf.prop_recursive(4, 32, 2, move |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Add(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Sub(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Mul(Box::new(a), Box::new(b))),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| Expr::Div(Box::new(a), Box::new(b))),
            (inner.clone(), -4i32..8).prop_map(|(a, k)| Expr::Pow(Box::new(a), Box::new(Expr::c(k as f64 / 2.0)))),
            inner.clone().prop_map(|a| Expr::Neg(Box::new(a))),
            (inner, 0usize..5).prop_map(move |(a, f)| Expr::Call(funcs[f], Box::new(a))),
        ]
    })
}

fn derivative_tuple(index: &[usize]) -> Vec<usize> {
    index
        .iter()
        .enumerate()
        .flat_map(|(i, &m)| std::iter::repeat_n(i, m))
        .collect()
}

/// `(i, j)` with `lo <= i + j <= 3`.
fn multi_index(lo: usize) -> impl Strategy<Value = (usize, usize)> {
    (lo..=3usize).prop_flat_map(|o| (0..=o).prop_map(move |i| (i, o - i)))
}

fn falling(n: i32, k: usize) -> f64 {
    (0..k as i32).map(|j| (n - j) as f64).product()
}

proptest! {
    #![proptest_config(ProptestConfig {
        cases: 128,
        rng_seed: RngSeed::Fixed(0x6E0_11E),
        ..ProptestConfig::default()
    })]

    #[test]
    fn polynomial_jets_are_exact(
        coeffs in proptest::collection::vec(-5i32..=5, 10),
        x in -2.0f64..2.0,
        y in -2.0f64..2.0,
        (a, b) in multi_index(0),
    ) {
        // all monomials x^i y^j with i + j <= 3
        let monos: Vec<(i32, i32)> = (0..=3).flat_map(|i| (0..=3 - i).map(move |j| (i, j))).collect();
        let text: Vec<String> = monos.iter().zip(&coeffs).map(|((i, j), c)| format!("{c}*x^{i}*y^{j}")).collect();
        let e = parse(&text.join(" + ")).unwrap();
        let jet = eval_jet(&e, &[x, y], &VARS, &BTreeMap::new()).unwrap();
        let want: f64 = monos.iter().zip(&coeffs).map(|(&(i, j), &c)| {
            if (i as usize) < a || (j as usize) < b {
                0.0
            } else {
                c as f64 * falling(i, a) * falling(j, b) * x.powi(i - a as i32) * y.powi(j - b as i32)
            }
        }).sum();
        let got = jet.derivative(&derivative_tuple(&[a, b]));
        prop_assert!((got - want).abs() <= 1e-12 * want.abs().max(1.0), "{got} vs {want}");
    }

    #[test]
    fn jets_match_finite_differences(
        e in smooth_expr(),
        x in 0.5f64..1.5,
        y in 0.5f64..1.5,
        a in -1.0f64..1.0,
        (i, j) in multi_index(1),
    ) {
        let params: BTreeMap<String, f64> = [("a".to_string(), a)].into();
        let jet = eval_jet(&e, &[x, y], &VARS, &params);
        let fd = fd_oracle(&e, &[x, y], &VARS, &params, &[i, j]);
        if let (Ok(jet), Ok(fd)) = (jet, fd) {
            let got = jet.derivative(&derivative_tuple(&[i, j]));
            prop_assume!(got.abs() < 1e4 && jet.value().abs() < 1e4);
            let rel = (got - fd).abs() / got.abs().max(fd.abs()).max(1.0);
            prop_assert!(rel < 1e-5, "{e}: jet {got} fd {fd}");
        }
    }

    #[test]
    fn parse_print_parse_is_identity(e in any_expr()) {
        let once = parse(&e.to_string()).unwrap();
        let twice = parse(&once.to_string()).unwrap();
        prop_assert_eq!(&once, &twice);
        prop_assert_eq!(once.to_string(), twice.to_string());
    }

    #[test]
    fn constant_jets_match_scalar_evaluation(e in smooth_expr(), x in 0.5f64..1.5, y in 0.5f64..1.5, a in -1.0f64..1.0) {
        let env: BTreeMap<String, f64> = [("x".to_string(), x), ("y".to_string(), y), ("a".to_string(), a)].into();
        let none: [&str; 0] = [];
        match (eval_jet(&e, &[], &none, &env), eval_scalar(&e, &env)) {
            (Ok(j), Ok(s)) => prop_assert!(j.value() == s, "{} vs {s}", j.value()),
            (Err(_), Err(_)) => {}
            (j, s) => prop_assert!(false, "{j:?} vs {s:?}"),
        }
    }

    #[test]
    fn polar_chart_is_flat(r in 0.3f64..5.0, t in -3.0f64..3.0) {
        let m = MetricField::diagonal(
            vec!["r".into(), "t".into()],
            BTreeMap::new(),
            vec![Interval::new(0.1, 10.0), Interval::new(-4.0, 4.0)],
            vec![Expr::c(1.0), parse("r^2").unwrap()],
        );
        let c = curvature_at(&m, &[r, t]).unwrap();
        prop_assert!(c.scalar_value().abs() < 1e-12);
        prop_assert!(c.riemann_down_values().norm() < 1e-10 * r * r);
    }

    #[test]
    fn scalar_curvature_scales_inversely(c in 0.1f64..10.0, u in 0.6f64..1.8, v in 0.6f64..1.8) {
        // a curved Jacobi-type metric, and the same times a constant
        let g = |scale: f64| MetricField::from_rows(
            vec!["u".into(), "v".into()],
            [("s".to_string(), scale)].into(),
            vec![Interval::new(0.5, 2.0); 2],
            vec![
                vec![parse("s*u*v").unwrap(), parse("s*v/u^2").unwrap()],
                vec![parse("s*v/u^2").unwrap(), parse("s*(1 + u^2)").unwrap()],
            ],
        ).unwrap();
        let base = curvature_at(&g(1.0), &[u, v]);
        let scaled = curvature_at(&g(c), &[u, v]);
        if let (Ok(base), Ok(scaled)) = (base, scaled) {
            let (r0, r1) = (base.scalar_value(), scaled.scalar_value());
            prop_assert!((r1 * c - r0).abs() <= 1e-10 * r0.abs().max(1.0), "{r0} vs {r1} * {c}");
        }
    }

    #[test]
    fn spec_load_serialize_load_is_identity(
        h in -10.0f64..10.0,
        lo in -3.0f64..0.0,
        width in 0.1f64..5.0,
        pot in 0usize..4,
        with_transform in any::<bool>(),
    ) {
        let potentials = ["v/u^2 - h", "-(1 + h/4*(u^2 + v^2))^2", "h*exp(u - v)", "-0.5"];
        let transform = if with_transform {
            r#", "transforms": [{"name": "t", "target": "jacobi-inverse", "maps": {"A": "u + v", "B": "u*v"}}]"#
        } else {
            ""
        };
        let text = format!(
            r#"{{"name": "p", "coordinates": ["u", "v"], "parameters": {{"h": {h:?}}},
                "metric": [["1", "u"], ["u", "2"]], "potential": "{}",
                "domain": {{"u": [{lo:?}, {}], "v": [0, 1]}},
                "generators": [{{"name": "X", "xi": "1", "eta": {{"v": "u"}}}}]{transform}}}"#,
            potentials[pot], lo + width,
        );
        let first = SystemSpec::from_json(&text).unwrap();
        let second = SystemSpec::from_json(&first.to_json()).unwrap();
        prop_assert_eq!(&first, &second);
        prop_assert_eq!(first.to_json(), second.to_json());
    }
}
