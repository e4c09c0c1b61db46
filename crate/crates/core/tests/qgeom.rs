use qtorus::chart::{build_chart, product_chart, AAChart, ChartOptions};
use qtorus::expr::{parse, ParamEnv};
use qtorus::moyal::DiffusionCoeffs;
use qtorus::oracle::{eigenlevels, Grid1D};
use qtorus::qgeom::*;

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

fn order4() -> ChartOptions {
    ChartOptions { n_tau: 64, n_levels: 24, jet_order: 6, ..ChartOptions::default() }
}

fn coarse() -> ChartOptions {
    ChartOptions { n_tau: 32, n_levels: 12, ..ChartOptions::default() }
}

fn max_abs(f: &[Vec<f64>]) -> f64 {
    f.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
}

/// Grid eigenvalue `E_N` of the quartic oscillator.
fn quartic_level(n: usize, hbar: f64) -> f64 {
    let v = |q: f64| 0.5 * q * q + 0.1 * q.powi(4);
    let out = eigenlevels(&v, hbar, Grid1D::new(-6.0, 6.0, 256).unwrap(), n + 1).unwrap();
    out.levels[n]
}

/// Richardson limit of `y(h)` sampled at three step sizes, assuming an even series in h.
fn richardson3(h: [f64; 3], y: [f64; 3]) -> f64 {
    let x: Vec<f64> = h.iter().map(|v| v * v).collect();
    // Lagrange extrapolation to x = 0
    (0..3)
        .map(|i| {
            let w: f64 = (0..3).filter(|&j| j != i).map(|j| x[j] / (x[j] - x[i])).product();
            w * y[i]
        })
        .sum()
}

#[test]
fn harmonic_corrections_vanish() {
    let c = harmonic(&ChartOptions { n_tau: 64, n_levels: 16, ..ChartOptions::default() });
    let corr = corrections(&c, None, &ParamEnv::new(), 0.0, false).unwrap();
    assert!(max_abs(&corr.kappa.cross) < 1e-8);
    assert!(max_abs(&corr.energy.l) < 1e-8);
    assert!(max_abs(&corr.action.a) < 1e-8);
    assert!(max_abs(&corr.angle.phi) < 1e-8);
    assert!(corr.action.g.iter().all(|g| g.abs() < 1e-8));
}

#[test]
fn quartic_second_order_energy_matches_grid_levels() {
    let c = quartic(&ChartOptions { n_tau: 64, n_levels: 16, ..ChartOptions::default() });
    let corr = corrections(&c, None, &quartic_env(), 0.0, false).unwrap();
    let s = 0.5;
    let f = c.energy(s).unwrap();
    let ns = [4usize, 9, 19];
    let h = ns.map(|n| s / (n as f64 + 0.5));
    let y = [0, 1, 2].map(|k| (quartic_level(ns[k], h[k]) - f) / (h[k] * h[k]));
    let est = richardson3(h, y);
    let g = corr.action.g_at(s);
    assert!((g - est).abs() < 1e-7, "chart {g} grid {est}");
    assert!((g - 0.024644518512).abs() < 1e-7, "{g}");
}

#[test]
fn fourth_order_energy_matches_grid_levels() {
    let c = quartic(&order4());
    let corr = corrections(&c, None, &quartic_env(), 0.0, true).unwrap();
    let st = corr.step1.as_ref().unwrap();
    assert!(st.commutation < 1e-5, "commutation {}", st.commutation);
    let s = 1.0;
    let f = c.energy(s).unwrap();
    let g = corr.action.g_at(s);
    let ns = [9usize, 14, 19];
    let h = ns.map(|n| s / (n as f64 + 0.5));
    let y = [0, 1, 2].map(|k| (quartic_level(ns[k], h[k]) - f - h[k] * h[k] * g) / h[k].powi(4));
    let est = richardson3(h, y);
    let g1 = st.g1_at(s);
    assert!((g1 - est).abs() < 2e-6, "chart {g1} grid {est}");
}

#[test]
fn energy_is_linear_in_m() {
    let c = quartic(&coarse());
    let env = quartic_env();
    let base = corrections(&c, None, &env, 0.0, false).unwrap();
    let one = corrections(&c, Some(&parse("q^2").unwrap()), &env, 0.0, false).unwrap();
    let two = corrections(&c, Some(&parse("2*q^2").unwrap()), &env, 0.0, false).unwrap();
    for i in 0..c.n_levels() {
        let d1 = one.action.g[i] - base.action.g[i];
        let d2 = two.action.g[i] - base.action.g[i];
        assert!((d2 - 2.0 * d1).abs() < 1e-10, "level {i}: {d1} {d2}");
        assert!(d1 > 0.0);
    }
}

#[test]
fn constant_m_shifts_energy_only() {
    let c = quartic(&coarse());
    let env = quartic_env();
    let base = corrections(&c, None, &env, 0.0, false).unwrap();
    let shifted = corrections(&c, Some(&parse("0.3").unwrap()), &env, 0.0, false).unwrap();
    for i in 0..c.n_levels() {
        assert!((shifted.action.g[i] - base.action.g[i] - 0.3).abs() < 1e-10);
    }
    let gap = shifted.action.a.iter().flatten().zip(base.action.a.iter().flatten()).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
    assert!(gap < 1e-10, "{gap}");
}

#[test]
fn angle_gauge_does_not_change_the_energy() {
    let c = quartic(&order4());
    let env = quartic_env();
    let corr = corrections(&c, None, &env, 0.0, true).unwrap();
    let psi = |s: f64| [0.3 * s * s, 0.6 * s, 0.6, 0.0];
    let gauged = angle_correction_gauged(&corr.action, &corr.kappa, &c, &psi).unwrap();
    // the gauge moves φ by ψ′(s) on every level
    for (i, lv) in c.levels.iter().enumerate() {
        for (x, y) in gauged.phi[i].iter().zip(&corr.angle.phi[i]) {
            assert!((x - y - 0.3 * lv.s * lv.s).abs() < 1e-12);
        }
    }
    let st = induction_step(&c, &corr.energy, &corr.action, &gauged, 1e-5).unwrap();
    let base = corr.step1.as_ref().unwrap();
    for s in [0.4, 0.7, 1.0] {
        let (a, b) = (st.g1_at(s), base.g1_at(s));
        assert!((a - b).abs() < 1e-6 * (1.0 + b.abs()), "s = {s}: {a} vs {b}");
    }
}

#[test]
fn angle_correction_is_periodic() {
    let c = quartic(&ChartOptions { n_tau: 64, n_levels: 16, ..ChartOptions::default() });
    let corr = corrections(&c, None, &quartic_env(), 0.0, false).unwrap();
    assert!(corr.angle.periodicity < 1e-5, "{}", corr.angle.periodicity);
    assert!(corr.kappa.diagonal < 1e-8, "{}", corr.kappa.diagonal);
}

#[test]
fn induction_step_needs_order_six_jets() {
    let c = quartic(&coarse());
    let corr = corrections(&c, None, &quartic_env(), 0.0, false).unwrap();
    let r = induction_step(&c, &corr.energy, &corr.action, &corr.angle, 1e-5);
    assert!(matches!(r, Err(qtorus::error::Error::JetOrder { .. })));
}

#[test]
fn leading_form_is_closed_on_product_charts() {
    let o = coarse();
    for (name, sc) in [
        ("harmonic x quartic", product_chart(harmonic(&o), quartic(&o))),
        ("quartic x pendulum", product_chart(quartic(&o), pendulum(&o))),
        ("harmonic x pendulum", product_chart(harmonic(&o), pendulum(&o))),
    ] {
        let d = closedness(&sc, KappaOrder::Leading).unwrap();
        assert!(d < 1e-6, "{name}: {d}");
    }
}

#[test]
fn involution_identity_holds_and_detects_a_wrong_coefficient() {
    let o = coarse();
    let sc = product_chart(harmonic(&o), quartic(&o));
    let env = ParamEnv::new();
    for fam in [["e1 + e2", "e1*e2 + e2^2/2"], ["e1*e2", "e1^2 + e2^3"]] {
        let f = [parse(fam[0]).unwrap(), parse(fam[1]).unwrap()];
        let good = involution_residual(&sc, [&f[0], &f[1]], &env, DiffusionCoeffs::default(), 3, 5).unwrap();
        assert!(good.max_residual < 1e-5, "{fam:?}: {}", good.max_residual);
        assert!(good.scale > 0.1);
        let bad = involution_residual(&sc, [&f[0], &f[1]], &env, DiffusionCoeffs { c2: 1.0 / 15.0, ..DiffusionCoeffs::default() }, 3, 5).unwrap();
        assert!(bad.max_residual > 1e3 * good.max_residual.max(1e-12), "{fam:?}: {} vs {}", bad.max_residual, good.max_residual);
    }
}
