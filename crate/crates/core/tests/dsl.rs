use nonhol::dsl::{differentiate, evaluate, parse, parse_expr, BundlePoint, EvalError, Expr, ParseError, Tape, Var};
use proptest::prelude::*;

const VARS: [Var; 4] = [Var::Base(0), Var::Base(1), Var::Fiber(0), Var::Fiber(1)];

/// Smooth expressions over x1, x2, y1, y2 that stay inside every domain.
fn smooth_expr() -> impl Strategy<Value = Expr> {
    let leaf = prop_oneof![
        (0usize..4).prop_map(|i| Expr::var(VARS[i])),
        (-2.0f64..2.0).prop_map(Expr::constant),
    ];
    leaf.prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a + b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a - b),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a * b),
            inner.clone().prop_map(Expr::sin),
            inner.clone().prop_map(Expr::cos),
            inner.clone().prop_map(|a| Expr::unary(nonhol::dsl::UnaryOp::Tanh, a)),
            inner.clone().prop_map(|a| a.sin().exp()),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| a / (Expr::constant(2.5) + b.sin())),
            inner.clone().prop_map(|a| (Expr::one() + a.clone() * a).sqrt()),
            inner.clone().prop_map(|a| (Expr::one() + a.clone() * a).ln()),
            inner.clone().prop_map(|a| Expr::pow(a.cos(), 3.0)),
        ]
    })
}

fn point() -> impl Strategy<Value = BundlePoint> {
    (prop::collection::vec(-1.0f64..1.0, 2), prop::collection::vec(-1.0f64..1.0, 2))
        .prop_map(|(x, y)| BundlePoint::new(x, y))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn derivative_matches_central_difference(e in smooth_expr(), p in point(), vi in 0usize..4) {
        let v = VARS[vi];
        let d = evaluate(&differentiate(&e, v), &p).unwrap();
        let h = 1e-5;
        let mut pp = p.clone();
        *pp.get_mut(v) += h;
        let mut pm = p.clone();
        *pm.get_mut(v) -= h;
        let fd = (evaluate(&e, &pp).unwrap() - evaluate(&e, &pm).unwrap()) / (2.0 * h);
        prop_assert!((fd - d).abs() <= 1e-6 * d.abs().max(1.0), "{e}: fd {fd} vs {d}");
    }

    #[test]
    fn derivative_is_linear(a in smooth_expr(), b in smooth_expr(), c in -3.0f64..3.0, p in point(), vi in 0usize..4) {
        let v = VARS[vi];
        let lhs = differentiate(&(Expr::constant(c) * a.clone() + b.clone()), v);
        let rhs = Expr::constant(c) * differentiate(&a, v) + differentiate(&b, v);
        let (l, r) = (evaluate(&lhs, &p).unwrap(), evaluate(&rhs, &p).unwrap());
        prop_assert!((l - r).abs() <= 1e-12 * l.abs().max(1.0), "{l} vs {r}");
    }

    #[test]
    fn mixed_partials_commute(e in smooth_expr(), p in point(), i in 0usize..4, j in 0usize..4) {
        let a = evaluate(&differentiate(&differentiate(&e, VARS[i]), VARS[j]), &p).unwrap();
        let b = evaluate(&differentiate(&differentiate(&e, VARS[j]), VARS[i]), &p).unwrap();
        prop_assert!((a - b).abs() <= 1e-12 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn printing_round_trips(e in smooth_expr(), p in point()) {
        let back = parse_expr(&e.to_string(), 2, 2).unwrap();
        let (a, b) = (evaluate(&e, &p).unwrap(), evaluate(&back, &p).unwrap());
        prop_assert_eq!(a.to_bits(), b.to_bits());
    }

    #[test]
    fn tape_agrees_with_tree_evaluation(e in smooth_expr(), p in point()) {
        let d = differentiate(&e, Var::Fiber(0));
        let vals = Tape::compile(&[e.clone(), d.clone()]).eval(&p).unwrap();
        prop_assert_eq!(vals[0].to_bits(), evaluate(&e, &p).unwrap().to_bits());
        prop_assert_eq!(vals[1].to_bits(), evaluate(&d, &p).unwrap().to_bits());
    }
}

#[test]
fn parse_examples() {
    let spec = parse("y1^2 + y2^2", 2, 2).unwrap();
    let p = BundlePoint::new(vec![0.0, 0.0], vec![1.5, -2.0]);
    assert_eq!(evaluate(&spec.body, &p).unwrap(), 6.25);
    let back = parse_expr(&spec.body.to_string(), 2, 2).unwrap();
    assert_eq!(evaluate(&back, &p).unwrap(), 6.25);
    assert!(matches!(
        parse("m0*(y1^2 + exp(2*x1)*y2^2)", 2, 2),
        Err(ParseError::UnknownIdentifier { offset: 0, .. })
    ));
    let e = parse_expr("2*(y1^2*y2) - sin(x2)*y1", 2, 2).unwrap();
    let p = BundlePoint::new(vec![0.0, 0.5], vec![1.5, -2.0]);
    let want = 2.0 * (1.5f64.powi(2) * -2.0) - 0.5f64.sin() * 1.5;
    assert_eq!(evaluate(&e, &p).unwrap(), want);
    assert!(matches!(parse("y3", 2, 2), Err(ParseError::IndexOutOfRange { .. })));
    assert!(parse("y1", 1, 1).is_err());
    assert!(parse("y1", 3, 2).is_err());
}

#[test]
fn differentiate_examples() {
    let e = parse_expr("y1^2 + y2^2", 2, 2).unwrap();
    let p = BundlePoint::new(vec![0.0, 0.0], vec![1.25, 4.0]);
    assert_eq!(evaluate(&differentiate(&e, Var::Fiber(0)), &p).unwrap(), 2.5);

    let e = parse_expr("exp(2*x1)*y2^2", 2, 2).unwrap();
    let p = BundlePoint::new(vec![0.3, 0.0], vec![0.0, 1.5]);
    let got = evaluate(&differentiate(&e, Var::Base(0)), &p).unwrap();
    assert!((got - 2.0 * (0.6f64).exp() * 2.25).abs() < 1e-14);

    let e = parse_expr("y1^4", 2, 2).unwrap();
    let d2 = differentiate(&differentiate(&e, Var::Fiber(0)), Var::Fiber(0));
    let p = BundlePoint::new(vec![0.0, 0.0], vec![2.0, 0.0]);
    assert_eq!(evaluate(&d2, &p).unwrap(), 48.0);

    // fourth order derivatives stay exact
    let d4 = differentiate(&differentiate(&d2, Var::Fiber(0)), Var::Fiber(0));
    assert_eq!(evaluate(&d4, &p).unwrap(), 24.0);
}

#[test]
fn evaluate_examples() {
    let p = BundlePoint::new(vec![0.0, 0.0], vec![3.0, 0.0]);
    assert_eq!(evaluate(&parse_expr("2*y1", 2, 2).unwrap(), &p).unwrap(), 6.0);
    assert_eq!(evaluate(&parse_expr("exp(2*x1)", 2, 2).unwrap(), &p).unwrap(), 1.0);
    let q = BundlePoint::new(vec![0.0, 0.0], vec![1.0, 0.0]);
    match evaluate(&parse_expr("1/(y1-1)", 2, 2).unwrap(), &q) {
        Err(EvalError::DivisionByZero { node }) => assert!(node.contains("y1 - 1"), "{node}"),
        other => panic!("unexpected {other:?}"),
    }
    assert!(matches!(
        evaluate(&parse_expr("log(x1)", 2, 2).unwrap(), &p),
        Err(EvalError::LogDomain { .. })
    ));
}
