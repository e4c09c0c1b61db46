use num_complex::Complex64;
use proptest::prelude::*;
use qtorus::dynamics::{evolve, ModeFrequencies, TorusState};
use qtorus::expr::{parse, ParamEnv, Var};
use qtorus::oracle::{rat, weyl_op, weyl_symbol, Poly};

fn leaf() -> impl Strategy<Value = String> {
    prop_oneof![
        Just("q1".to_string()),
        Just("p1".to_string()),
        Just("q2".to_string()),
        Just("a".to_string()),
        (1u32..9).prop_map(|n| n.to_string()),
        (1u32..9, 1u32..5).prop_map(|(a, b)| format!("{a}.{b}")),
    ]
}

fn expr_text() -> impl Strategy<Value = String> {
    leaf().prop_recursive(4, 24, 2, |inner| {
        prop_oneof![
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} + {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} - {b})")),
            (inner.clone(), inner.clone()).prop_map(|(a, b)| format!("({a} * {b})")),
            (inner.clone(), 1u32..4).prop_map(|(a, n)| format!("({a})^{n}")),
            inner.clone().prop_map(|a| format!("sin({a})")),
            inner.clone().prop_map(|a| format!("cos({a})")),
            inner.clone().prop_map(|a| format!("-({a})")),
        ]
    })
}

fn env() -> ParamEnv {
    ParamEnv::from_pairs(&[("a", 0.37)])
}

const PT: [f64; 4] = [0.31, -0.42, 0.27, 0.15];

fn close(a: f64, b: f64, tol: f64) -> bool {
    (a - b).abs() <= tol * (1.0 + a.abs().max(b.abs()))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn render_parse_round_trip(text in expr_text()) {
        let e = parse(&text).unwrap();
        let back = parse(&e.render()).unwrap();
        let (x, y) = (e.eval(&PT, &env()).unwrap(), back.eval(&PT, &env()).unwrap());
        prop_assert!(close(x, y, 1e-12), "{} vs {}: {x} {y}", text, e.render());
    }

    #[test]
    fn mixed_partials_commute(text in expr_text()) {
        let e = parse(&text).unwrap();
        let (q, p) = (Var::Q(0), Var::P(0));
        let qp = e.diff(q).diff(p).eval(&PT, &env()).unwrap();
        let pq = e.diff(p).diff(q).eval(&PT, &env()).unwrap();
        prop_assert!(close(qp, pq, 1e-10), "{qp} {pq}");
    }

    #[test]
    fn jet_matches_finite_differences(text in expr_text()) {
        let e = parse(&text).unwrap();
        let jet = e.jet_of(&PT, 2, &env()).unwrap();
        let h = 1e-5;
        for (k, g) in jet.gradient().iter().enumerate() {
            let mut a = PT;
            let mut b = PT;
            a[k] += h;
            b[k] -= h;
            let fd = (e.eval(&a, &env()).unwrap() - e.eval(&b, &env()).unwrap()) / (2.0 * h);
            prop_assert!((fd - g).abs() <= 1e-5 * (1.0 + g.abs()), "slot {k}: jet {g} fd {fd}");
        }
    }

    #[test]
    fn weyl_symbol_round_trip(c in proptest::collection::vec(-5i64..6, 6), h in 1i64..5) {
        let monos = [(0, 0), (1, 0), (0, 1), (2, 1), (1, 2), (2, 2)];
        let mut p = Poly::zero();
        for (&(a, b), &ck) in monos.iter().zip(&c) {
            p = p.add(&Poly::monomial(a, b).scale(&rat(ck, 1)));
        }
        let (re, im) = weyl_symbol(&weyl_op(&p, &rat(1, h)));
        prop_assert!(im.is_zero());
        prop_assert_eq!(re.render(), p.render());
    }

    #[test]
    fn evolution_is_unitary_and_composes(
        coeffs in proptest::collection::vec((-1.0f64..1.0, -1.0f64..1.0), 9),
        w in proptest::collection::vec(-3.0f64..3.0, 9),
        t1 in -50.0f64..50.0,
        t2 in -50.0f64..50.0,
    ) {
        let freqs = ModeFrequencies { s: 0.5, hbar: 0.1, freqs: w.iter().map(|&x| Some(x)).collect() };
        let st = TorusState::new(0, 0.5, coeffs.iter().map(|&(a, b)| Complex64::new(a, b)).collect()).unwrap();
        let a = evolve(&st, t1 + t2, &freqs).unwrap();
        prop_assert!((a.state.norm_sqr() - st.norm_sqr()).abs() <= 1e-12 * (1.0 + st.norm_sqr()));
        let b = evolve(&evolve(&st, t1, &freqs).unwrap().state, t2, &freqs).unwrap().state;
        let gap = a.state.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max);
        prop_assert!(gap <= 1e-12, "group law gap {gap}");
    }
}
