use std::f64::consts::PI;

use approx::assert_relative_eq;
use qtorus::chart::{build_chart, product_chart, AAChart, ChartOptions};
use qtorus::expr::{parse, ParamEnv};
use qtorus::moyal::poisson;

fn small() -> ChartOptions {
    ChartOptions { n_tau: 64, n_levels: 12, ..ChartOptions::default() }
}

fn quartic_env() -> ParamEnv {
    ParamEnv::from_pairs(&[("lambda", 0.1)])
}

fn quartic(opts: &ChartOptions) -> AAChart {
    build_chart(&parse("p1^2/2 + q1^2/2 + lambda*q1^4").unwrap(), &quartic_env(), (0.0, 1.5), opts).unwrap()
}

fn harmonic(opts: &ChartOptions) -> AAChart {
    build_chart(&parse("p1^2/2 + q1^2/2").unwrap(), &ParamEnv::new(), (0.0, 2.0), opts).unwrap()
}

fn pendulum(opts: &ChartOptions) -> AAChart {
    build_chart(&parse("p^2/2 - cos(q)").unwrap(), &ParamEnv::new(), (-1.0, 0.8), opts).unwrap()
}

/// tanh-sinh quadrature on [a, b], refined until two levels agree.
fn tanh_sinh(f: &dyn Fn(f64) -> f64, a: f64, b: f64) -> f64 {
    let (c, r) = (0.5 * (a + b), 0.5 * (b - a));
    let mut prev = f64::NAN;
    let mut h = 0.5;
    loop {
        let mut sum = 0.0;
        let mut k = 0i64;
        loop {
            let t = k as f64 * h;
            let u = 0.5 * PI * t.sinh();
            let x = u.tanh();
            let w = 0.5 * PI * t.cosh() / u.cosh().powi(2);
            if w < 1e-300 || x >= 1.0 {
                break;
            }
            let term = if k == 0 { w * f(c) } else { w * (f(c + r * x) + f(c - r * x)) };
            sum += term;
            k += 1;
        }
        let val = sum * h * r;
        if (val - prev).abs() < 1e-15 * val.abs() || h < 1e-4 {
            return val;
        }
        prev = val;
        h *= 0.5;
    }
}

fn quartic_action_oracle(e: f64, lam: f64) -> f64 {
    let a = ((-1.0 + (1.0 + 16.0 * lam * e).sqrt()) / (4.0 * lam)).sqrt();
    let f = |q: f64| (2.0 * (e - q * q / 2.0 - lam * q.powi(4))).max(0.0).sqrt();
    tanh_sinh(&f, -a, a) / PI
}

#[test]
fn harmonic_chart_is_exact() {
    let c = harmonic(&small());
    assert_eq!(c.maslov, 2);
    for lv in &c.levels {
        assert_relative_eq!(lv.energy, lv.s, epsilon = 1e-13);
        assert_relative_eq!(lv.f_derivs[1], 1.0, epsilon = 1e-12);
        assert!(lv.f_derivs[2].abs() < 1e-11);
    }
    let pj = c.chart_jets(5, 7, 3).unwrap();
    let h = pj.s.hessian();
    assert_relative_eq!(h[(0, 0)], 1.0, epsilon = 1e-10);
    assert_relative_eq!(h[(1, 1)], 1.0, epsilon = 1e-10);
    assert!(h[(0, 1)].abs() < 1e-10);
    for (k, ix) in pj.s.layout().indices.iter().enumerate() {
        if ix.iter().map(|&a| a as usize).sum::<usize>() == 3 {
            assert!(pj.s.coeffs()[k].abs() < 1e-9);
        }
    }
}

#[test]
fn harmonic_angle_third_derivatives_match_closed_form() {
    // τ = atan2(-p, q) for q = √(2s) cos τ, p = -√(2s) sin τ
    let c = harmonic(&small());
    let pj = c.chart_jets(7, 9, 3).unwrap();
    let (q, p) = (pj.q(), pj.p());
    let tau = |x: f64, y: f64| (-y).atan2(x);
    let h = 1e-3;
    // central third difference in q
    let d3 = (tau(q + 2.0 * h, p) - 2.0 * tau(q + h, p) + 2.0 * tau(q - h, p) - tau(q - 2.0 * h, p)) / (2.0 * h * h * h);
    assert_relative_eq!(pj.tau.partial(&[3, 0]), d3, max_relative = 1e-4);
    let exact_q = {
        // ∂τ/∂q = p / r²
        let r2 = q * q + p * p;
        p / r2
    };
    assert_relative_eq!(pj.tau.partial(&[1, 0]), exact_q, epsilon = 1e-10);
}

#[test]
fn quartic_action_matches_adaptive_oracle() {
    let c = quartic(&small());
    for lv in &c.levels {
        let s = quartic_action_oracle(lv.energy, 0.1);
        assert!((s - lv.s).abs() < 1e-10, "E={} s={} oracle={}", lv.energy, lv.s, s);
    }
    assert_eq!(c.maslov, 2);
}

#[test]
fn quartic_chart_invariants() {
    let c = quartic(&small());
    let k = &c.checks;
    assert!(k.canonicity < 1e-8, "{k:?}");
    assert!(k.area < 1e-9, "{k:?}");
    assert!(k.frequency < 1e-8, "{k:?}");
    assert!(k.jet_routes < 1e-5, "{k:?}");
    // s(E) increasing and f' > 0
    for w in c.levels.windows(2) {
        assert!(w[1].s > w[0].s && w[1].energy > w[0].energy);
    }
    assert!(c.levels.iter().all(|l| l.f_derivs[1] > 0.0));
}

#[test]
fn pendulum_is_librational() {
    let c = pendulum(&small());
    assert_eq!(c.maslov, 2);
    assert!(c.checks.canonicity < 1e-8 && c.checks.area < 1e-9, "{:?}", c.checks);
    assert!(c.checks.jet_routes < 1e-5, "{:?}", c.checks);
}

#[test]
fn rotational_pendulum_window_rejected() {
    let r = build_chart(&parse("p^2/2 - cos(q)").unwrap(), &ParamEnv::new(), (-1.0, 1.5), &small());
    assert!(matches!(r, Err(qtorus::Error::TurningPoints { .. })), "{r:?}");
}

#[test]
fn double_well_window_rejected() {
    let r = build_chart(&parse("p^2/2 + (q^2 - 1)^2").unwrap(), &ParamEnv::new(), (0.0, 2.0), &ChartOptions { q_center: 1.0, ..small() });
    assert!(matches!(r, Err(qtorus::Error::TurningPoints { .. })), "{r:?}");
}

#[test]
fn arbitrary_point_jets_agree_with_grid() {
    let c = quartic(&small());
    let taus = c.tau_grid();
    let grid = c.chart_jets(4, 10, 4).unwrap();
    let free = c.chart_jets_at(taus[10], c.levels[4].s, 4).unwrap();
    assert!(grid.s.max_abs_diff(&free.s) < 1e-9);
    assert!(grid.tau.max_abs_diff(&free.tau) < 1e-8);
}

#[test]
fn dump_restore_round_trip() {
    let c = quartic(&ChartOptions { n_tau: 32, n_levels: 6, jet_order: 3, ..ChartOptions::default() });
    let text = c.dump();
    assert!(text.starts_with("# qtorus chart v1"));
    let r = AAChart::restore(&text).unwrap();
    assert_eq!(r.maslov, c.maslov);
    assert_eq!(r.levels.len(), c.levels.len());
    for (a, b) in c.points.iter().flatten().zip(r.points.iter().flatten()) {
        assert_eq!(a.s.coeffs(), b.s.coeffs());
        assert_eq!(a.tau.coeffs(), b.tau.coeffs());
    }
    assert_eq!(r.dump(), text);
}

#[test]
fn product_charts_have_zero_cross_brackets() {
    let o = ChartOptions { n_tau: 16, n_levels: 4, jet_order: 3, ..ChartOptions::default() };
    let pairs = [(harmonic(&o), quartic(&o)), (quartic(&o), pendulum(&o)), (harmonic(&o), pendulum(&o))];
    for (a, b) in pairs {
        let sc = product_chart(a, b);
        assert_eq!(sc.maslov(), (2, 2));
        for (i1, j1, i2, j2) in [(0, 0, 1, 3), (2, 5, 3, 11), (3, 15, 0, 8)] {
            let pj = sc.jets(i1, j1, i2, j2, 3).unwrap();
            assert_eq!(sc.cross_brackets(&pj).unwrap(), 0.0);
            assert_relative_eq!(poisson(&pj.s[1], &pj.tau[1]).unwrap(), 1.0, epsilon = 1e-8);
        }
    }
}
