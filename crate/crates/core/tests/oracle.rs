use approx::assert_abs_diff_eq;
use num_traits::Zero;
use qtorus::expr::{parse, ParamEnv};
use qtorus::moyal::dd_bracket;
use qtorus::jets::Jet;
use qtorus::oracle::*;

#[test]
fn dvr_harmonic_levels() {
    let v = |q: f64| 0.5 * q * q;
    let grid = Grid1D::new(-12.0, 12.0, 64).unwrap();
    let out = eigenlevels(&v, 0.5, grid, 12).unwrap();
    for (n, e) in out.levels.iter().enumerate() {
        assert_abs_diff_eq!(*e, 0.5 * (n as f64 + 0.5), epsilon = 1e-11);
    }
    assert!(out.error < 1e-10);
    assert!(out.edge_mass < 1e-12);
}

#[test]
fn pendulum_levels_on_the_circle() {
    let v = |q: f64| -q.cos();
    let lv = periodic_levels(&v, 0.1, 2.0 * std::f64::consts::PI, 0.8).unwrap();
    // harmonic ground level with the first-order shift −⟨q⁴⟩/24 = −ℏ²/32
    assert!((lv[0] - (-1.0 + 0.05 - 0.01 / 32.0)).abs() < 1e-5, "{}", lv[0]);
    assert!(lv.iter().all(|&e| e <= 0.8));
    assert!(lv.windows(2).all(|w| w[1] > w[0]));
    // Richardson-style cross-check: a finer grid changes nothing retained
    let g = PeriodicGrid::new(2.0 * std::f64::consts::PI, 255).unwrap();
    let mut fine: Vec<f64> = periodic_hamiltonian(&v, 0.1, &g.refined()).symmetric_eigenvalues().iter().copied().collect();
    fine.sort_by(f64::total_cmp);
    for (a, b) in lv.iter().zip(&fine) {
        assert!((a - b).abs() < 1e-10, "{a} {b}");
    }
}

#[test]
fn periodic_grid_free_particle() {
    let g = PeriodicGrid::new(2.0 * std::f64::consts::PI, 31).unwrap();
    let mut e: Vec<f64> = periodic_hamiltonian(&|_| 0.0, 1.0, &g).symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    // k²/2 with k = 0, ±1, ±2
    for (x, want) in e.iter().zip([0.0, 0.5, 0.5, 2.0, 2.0]) {
        assert_abs_diff_eq!(*x, want, epsilon = 1e-12);
    }
}

#[test]
fn dvr_refuses_narrow_grid() {
    let v = |q: f64| 0.5 * q * q;
    let grid = Grid1D::new(-2.0, 2.0, 64).unwrap();
    assert!(eigenlevels(&v, 0.5, grid, 8).is_err());
}

#[test]
fn grid_rejects_bad_sizes() {
    assert!(Grid1D::new(0.0, 1.0, 100).is_err());
    assert!(Grid1D::new(1.0, 0.0, 64).is_err());
}

#[test]
fn weyl_q2p2_matches_all_orderings() {
    for h in [rat(1, 1), rat(1, 3), rat(5, 2)] {
        let a = weyl_monomial(2, 2, &h);
        let b = weyl_by_orderings(2, 2, &h);
        assert!(a.sub(&b).is_zero());
    }
}

#[test]
fn weyl_monomials_match_orderings_up_to_degree_five() {
    let h = rat(2, 7);
    for a in 0..=3 {
        for b in 0..=(5 - a).min(3) {
            assert!(weyl_monomial(a, b, &h).sub(&weyl_by_orderings(a, b, &h)).is_zero(), "q^{a} p^{b}");
        }
    }
}

#[test]
fn position_matrix_is_tridiagonal() {
    let m = weyl_quantize(&Poly::monomial(1, 0), 0.3, 8).unwrap();
    for i in 0..8 {
        for j in 0..8 {
            let z = m.matrix[(i, j)];
            if j == i + 1 {
                assert_abs_diff_eq!(z.re, (0.3f64 / 2.0).sqrt() * (j as f64).sqrt(), epsilon = 1e-14);
            } else if i == j + 1 {
                assert_abs_diff_eq!(z.re, (0.3f64 / 2.0).sqrt() * (i as f64).sqrt(), epsilon = 1e-14);
            } else {
                assert!(z.norm() < 1e-14);
            }
        }
    }
}

#[test]
fn oscillator_is_diagonal() {
    let ho = Poly::monomial(2, 0).add(&Poly::monomial(0, 2)).scale(&rat(1, 2));
    let m = weyl_quantize(&ho, 0.7, 10).unwrap();
    for i in 0..10 {
        for j in 0..10 {
            let want = if i == j { 0.7 * (i as f64 + 0.5) } else { 0.0 };
            assert!((m.matrix[(i, j)].re - want).abs() < 1e-13 && m.matrix[(i, j)].im.abs() < 1e-13);
        }
    }
}

#[test]
fn weyl_matrices_are_hermitian() {
    let e = parse("q^2*p^2 + q^3*p - 2*p^3 + q").unwrap();
    let sym = Poly::from_expr(&e, &ParamEnv::new()).unwrap();
    let m = weyl_quantize(&sym, 0.4, 20).unwrap();
    assert!(m.hermiticity_defect() < 1e-13, "{}", m.hermiticity_defect());
}

#[test]
fn weyl_quantize_rejects_small_basis() {
    assert!(matches!(weyl_quantize(&Poly::monomial(3, 3), 0.1, 6), Err(qtorus::error::Error::DegreeTooHigh { .. })));
}

#[test]
fn non_polynomials_are_refused() {
    assert!(Poly::from_expr(&parse("sin(q)").unwrap(), &ParamEnv::new()).is_err());
}

#[test]
fn quadratic_commutators_have_one_term() {
    let a = Poly::monomial(2, 0).add(&Poly::monomial(1, 1));
    let b = Poly::monomial(0, 2).add(&Poly::monomial(1, 0));
    let c = star_commutator(&a, &b);
    assert_eq!(c.coeffs.len(), 1);
    assert!(c.residual.is_zero() && c.imaginary.is_zero());
}

#[test]
fn cubic_pair_second_order_coefficient() {
    // −(1/24) D³A·J⊗J⊗J·D³B with D³q³ = 6, D³p³ = 6 leaves |36/24|
    let c = star_commutator(&Poly::monomial(3, 0), &Poly::monomial(0, 3));
    let k = c.coeff(1).as_constant().expect("constant ℏ² coefficient");
    assert_eq!(k.clone() * k, rat(9, 4));
    // and it agrees with the bracket implementation
    let pt = [0.3, -0.2];
    let a = &Jet::variable(&pt, 5, 0).powi(3) * &Jet::constant(&pt, 5, 1.0);
    let b = Jet::variable(&pt, 5, 1).powi(3);
    let d = -dd_bracket(&a, &b, 0).unwrap();
    assert_abs_diff_eq!(d, c.coeff(1).eval(pt[0], pt[1]), epsilon = 1e-13);
}

#[test]
fn one_variable_symbols_commute() {
    let a = Poly::monomial(3, 0).add(&Poly::monomial(1, 0));
    let b = Poly::monomial(4, 0);
    let c = star_commutator(&a, &b);
    assert!(c.coeffs.iter().all(|p| p.is_zero()));
}

#[test]
fn composite_residual_is_fourth_order() {
    let ho = Poly::monomial(2, 0).add(&Poly::monomial(0, 2)).scale(&rat(1, 2));
    let mixed = ho.add(&Poly::monomial(2, 2).scale(&rat(1, 4)));
    let quartic = Poly::monomial(0, 2).scale(&rat(1, 2)).add(&Poly::monomial(4, 0).scale(&rat(1, 4)));
    let sq = [rat(0, 1), rat(0, 1), rat(1, 1)];
    let cube = [rat(0, 1), rat(0, 1), rat(0, 1), rat(1, 1)];
    let fourth = [rat(0, 1), rat(0, 1), rat(0, 1), rat(0, 1), rat(1, 1)];
    let hbars = [0.05, 0.1, 0.2, 0.4];
    for (k, s) in [(&sq[..], &mixed), (&cube[..], &quartic), (&fourth[..], &ho)] {
        let r = weyl_compose(k, s, &hbars, 16).unwrap();
        assert!(r.slope >= 3.8, "slope {}", r.slope);
        assert_eq!(r.exact_order, Some(4));
    }
}

#[test]
fn linear_composite_is_exact() {
    let s = Poly::monomial(2, 2).add(&Poly::monomial(0, 2));
    let lin = [rat(1, 3), rat(2, 1)];
    let r = weyl_compose(&lin, &s, &[0.1, 0.2], 12).unwrap();
    assert!(r.samples.iter().all(|c| c.residual < 1e-10));
    assert_eq!(r.exact_order, None);
}

#[test]
fn degenerate_composite_check() {
    let s = Poly::monomial(2, 0).scale(&rat(1, 2));
    let cube = [rat(0, 1), rat(0, 1), rat(0, 1), rat(1, 1)];
    let r = weyl_compose(&cube, &s, &[0.1, 0.2], 12).unwrap();
    assert!(r.samples.iter().all(|c| c.residual < 1e-10));
}
