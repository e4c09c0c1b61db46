use std::sync::OnceLock;

use qtorus::chart::{build_chart, AAChart, ChartOptions};
use qtorus::error::Error;
use qtorus::expr::{parse, ParamEnv};
use qtorus::qgeom::{corrections, Corrections};
use qtorus::spectra::*;

fn quartic_system() -> System {
    System {
        name: "quartic".into(),
        h0: parse("p^2/2 + q^2/2 + lambda*q^4").unwrap(),
        m: None,
        env: ParamEnv::from_pairs(&[("lambda", 0.1)]),
        window: (0.0, 2.0),
        chart: ChartOptions::default(),
        period: None,
    }
}

/// The default quartic chart, built once for all tests.
fn quartic_built() -> &'static (AAChart, Corrections) {
    static BUILT: OnceLock<(AAChart, Corrections)> = OnceLock::new();
    BUILT.get_or_init(|| quartic_system().build(2).unwrap())
}

#[test]
fn harmonic_levels_are_exact() {
    let opts = ChartOptions { n_tau: 64, n_levels: 16, ..ChartOptions::default() };
    let chart = build_chart(&parse("p^2/2 + q^2/2").unwrap(), &ParamEnv::new(), (0.0, 22.0), &opts).unwrap();
    let corr = corrections(&chart, None, &ParamEnv::new(), 0.0, false).unwrap();
    assert_eq!(chart.maslov, 2);
    for hbar in [0.1, 0.5, 1.0] {
        let cfg = QuantizationConfig { hbar, n_range: Some((0, 20)), mu: MuPolicy::Maslov, order: 2 };
        let t = quantize("harmonic", &chart, &corr, &cfg).unwrap();
        assert_eq!(t.rows.len(), 21);
        for r in &t.rows {
            let exact = hbar * (r.n as f64 + 0.5);
            for e in &r.energies {
                assert!((e - exact).abs() < 1e-9, "hbar {hbar} N {}: {e}", r.n);
            }
            assert!((r.implicit - exact).abs() < 1e-9);
        }
    }
}

#[test]
fn golden_quartic_levels() {
    let text = include_str!("../data/golden/quartic_hbar0.1.csv");
    let sys = quartic_system();
    let (chart, corr) = quartic_built();
    let t = quantize(&sys.name, chart, corr, &QuantizationConfig::new(0.1, 2)).unwrap();
    let reference = sys.oracle_levels(chart, 0.1).unwrap();
    let rows: Vec<Vec<f64>> = text
        .lines()
        .filter(|l| !l.starts_with('#'))
        .skip(1)
        .map(|l| l.split(',').map(|c| c.parse().unwrap()).collect())
        .collect();
    assert_eq!(rows.len(), t.rows.len());
    for (g, r) in rows.iter().zip(&t.rows) {
        assert_eq!(g[0] as usize, r.n);
        assert!((g[1] - r.energies[1]).abs() < 1e-10, "N {}: {} vs {}", r.n, g[1], r.energies[1]);
        assert!((g[2] - reference[r.n]).abs() < 1e-10, "N {}: {} vs {}", r.n, g[2], reference[r.n]);
        // the ℏ² rule is good to O(ℏ⁴)
        assert!((g[1] - g[2]).abs() < 1e-5);
    }
}

#[test]
fn second_order_beats_leading_order() {
    let sys = quartic_system();
    let (chart, corr) = quartic_built();
    let mut t = quantize(&sys.name, chart, corr, &QuantizationConfig::new(0.05, 2)).unwrap();
    let rep = compare(&mut t, &sys.oracle_levels(chart, 0.05).unwrap()).unwrap();
    assert_eq!(rep.flagged, 0);
    assert!(rep.max[1] < 1e-2 * rep.max[0], "{:?}", rep.max);
}

#[test]
fn csv_has_metadata_and_seventeen_digits() {
    let sys = quartic_system();
    let (chart, corr) = quartic_built();
    let mut t = quantize(&sys.name, chart, corr, &QuantizationConfig::new(0.2, 2)).unwrap();
    compare(&mut t, &sys.oracle_levels(chart, 0.2).unwrap()).unwrap();
    let csv = t.to_csv();
    let meta: Vec<&str> = csv.lines().take_while(|l| l.starts_with('#')).collect();
    assert!(meta.iter().any(|l| l.starts_with("# hbar=")));
    assert!(meta.iter().any(|l| l.starts_with("# chart=")));
    let body: Vec<&str> = csv.lines().skip(meta.len()).collect();
    assert_eq!(body[0], "N,s,E0,E2,oracle,err0,err2,flagged");
    for line in &body[1..] {
        let cells: Vec<&str> = line.split(',').collect();
        for c in &cells[1..cells.len() - 1] {
            let mantissa = c.trim_start_matches('-').split('e').next().unwrap();
            assert_eq!(mantissa.chars().filter(|ch| ch.is_ascii_digit()).count(), 17, "{c}");
            assert_eq!(c.parse::<f64>().unwrap().to_string().parse::<f64>().unwrap(), c.parse::<f64>().unwrap());
        }
    }
    assert!(fmt17(0.1).parse::<f64>().unwrap() == 0.1);
}

#[test]
fn quantization_rejects_bad_input() {
    let (chart, corr) = quartic_built();
    assert!(matches!(quantize("q", chart, corr, &QuantizationConfig::new(0.1, 3)), Err(Error::Config(_))));
    assert!(matches!(quantize("q", chart, corr, &QuantizationConfig::new(0.1, 4)), Err(Error::Config(_))));
    assert!(quantize("q", chart, corr, &QuantizationConfig::new(-0.1, 2)).is_err());
    let far = QuantizationConfig { n_range: Some((0, 1000)), ..QuantizationConfig::new(0.1, 2) };
    assert!(matches!(quantize("q", chart, corr, &far), Err(Error::Window(_))));
}

#[test]
fn convergence_study_validates_hbar_list() {
    let sys = quartic_system();
    assert!(convergence_study(&sys, &[0.1, 0.2, 0.3], 2).is_err());
    assert!(convergence_study(&sys, &[0.1, 0.12, 0.14, 0.16, 0.18], 2).is_err());
}

#[test]
fn reference_levels_need_m_of_q() {
    let mut sys = quartic_system();
    sys.m = Some(parse("p^2").unwrap());
    let chart = &quartic_built().0;
    assert!(matches!(sys.oracle_levels(chart, 0.1), Err(Error::Config(_))));
}

#[test]
fn calibrated_mu_reproduces_the_ground_level() {
    let sys = quartic_system();
    let (chart, corr) = quartic_built();
    let reference = sys.oracle_levels(chart, 0.1).unwrap();
    let mu = calibrate_mu(chart, corr, 2, 0.1, reference[0]).unwrap();
    let cfg = QuantizationConfig { mu, ..QuantizationConfig::new(0.1, 2) };
    let t = quantize(&sys.name, chart, corr, &cfg).unwrap();
    assert!((t.rows[0].implicit - reference[0]).abs() < 1e-10);
}

#[test]
fn chart_hash_is_stable() {
    let sys = quartic_system();
    let opts = ChartOptions { n_tau: 32, n_levels: 8, ..ChartOptions::default() };
    let a = build_chart(&sys.h0, &sys.env, sys.window, &opts).unwrap();
    let b = build_chart(&sys.h0, &sys.env, sys.window, &opts).unwrap();
    assert_eq!(chart_hash(&a), chart_hash(&b));
    assert_eq!(chart_hash(&a).len(), 16);
    assert_ne!(chart_hash(&a), chart_hash(&quartic_built().0));
}
