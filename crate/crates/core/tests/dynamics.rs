use std::sync::OnceLock;

use num_complex::Complex64;
use qtorus::chart::{build_chart, AAChart, ChartOptions};
use qtorus::dynamics::*;
use qtorus::expr::{parse, ParamEnv};
use qtorus::qgeom::{corrections, Corrections};
use qtorus::spectra::System;

const HBAR: f64 = 0.1;

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

fn quartic() -> &'static (AAChart, Corrections, Vec<f64>) {
    static BUILT: OnceLock<(AAChart, Corrections, Vec<f64>)> = OnceLock::new();
    BUILT.get_or_init(|| {
        let sys = quartic_system();
        let (chart, corr) = sys.build(2).unwrap();
        let reference = sys.oracle_levels(&chart, HBAR).unwrap();
        (chart, corr, reference)
    })
}

fn sample_state(n: usize, s: f64, kmax: usize) -> TorusState {
    TorusState::from_fn(n, s, kmax, |k| Complex64::new(1.0 / (1.0 + (k * k) as f64), 0.2 * k as f64))
}

fn max_gap(a: &TorusState, b: &TorusState) -> f64 {
    a.coeffs.iter().zip(&b.coeffs).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max)
}

#[test]
fn harmonic_modes_rotate_at_unit_frequency() {
    let opts = ChartOptions { n_tau: 64, n_levels: 16, ..ChartOptions::default() };
    let chart = build_chart(&parse("p^2/2 + q^2/2").unwrap(), &ParamEnv::new(), (0.0, 3.0), &opts).unwrap();
    let corr = corrections(&chart, None, &ParamEnv::new(), 0.0, false).unwrap();
    let qe = QuantumEnergy::new(&chart, &corr, 2, HBAR).unwrap();
    let s = reference_action(&qe, 10);
    let freqs = ModeFrequencies::new(&qe, s, 4).unwrap();
    let st = sample_state(10, s, 4);
    let t = 7.3;
    let ev = evolve(&st, t, &freqs).unwrap();
    for k in st.modes() {
        let want = st.mode(k) * Complex64::from_polar(1.0, k as f64 * t);
        assert!((ev.state.mode(k) - want).norm() < 1e-9, "mode {k}");
    }
    let dd = qe.diffusion_data(s).unwrap();
    assert!((dd.omega - 1.0).abs() < 1e-10 && dd.diffusion.abs() < 1e-8);
}

#[test]
fn zero_time_is_the_identity() {
    let (chart, corr, _) = quartic();
    let qe = QuantumEnergy::new(chart, corr, 2, HBAR).unwrap();
    let s = reference_action(&qe, 8);
    let freqs = ModeFrequencies::new(&qe, s, 4).unwrap();
    let st = sample_state(8, s, 4);
    assert_eq!(max_gap(&evolve(&st, 0.0, &freqs).unwrap().state, &st), 0.0);
}

#[test]
fn diffusion_data_matches_finite_differences() {
    let (chart, corr, _) = quartic();
    let qe = QuantumEnergy::new(chart, corr, 2, HBAR).unwrap();
    let s = reference_action(&qe, 8);
    let dd = qe.diffusion_data(s).unwrap();
    let h = 1e-3;
    let (a, b, c) = (qe.at(s - h).unwrap(), qe.at(s).unwrap(), qe.at(s + h).unwrap());
    assert!((dd.omega - (c - a) / (2.0 * h)).abs() < 1e-6);
    assert!((dd.diffusion - (c - 2.0 * b + a) / (h * h)).abs() < 1e-4);
    assert!(dd.diffusion > 0.0);
}

#[test]
fn theta_kernel_matches_mode_multipliers() {
    let (chart, corr, _) = quartic();
    let qe = QuantumEnergy::new(chart, corr, 2, HBAR).unwrap();
    let s = reference_action(&qe, 8);
    let dd = qe.diffusion_data(s).unwrap();
    let st = sample_state(8, s, 12);
    for t in [0.5, 13.0, 120.0] {
        let a = leading_diffusion(&st, t, &dd, HBAR);
        let b = leading_diffusion_kernel(&st, t, &dd, HBAR, 256).unwrap();
        assert!(max_gap(&a, &b) < 1e-10, "t = {t}: {}", max_gap(&a, &b));
    }
    assert!(leading_diffusion_kernel(&st, 1.0, &dd, HBAR, 100).is_err());
    assert!(leading_diffusion_kernel(&st, 1.0, &dd, HBAR, 16).is_err());
}

#[test]
fn theta_partial_sum_at_zero_nome_phase() {
    // q = 1: every term is e^{2inz}; at z = 0 the sum counts terms
    let v = theta3_partial(0.0, Complex64::new(1.0, 0.0), -5, 5);
    assert!((v - Complex64::new(11.0, 0.0)).norm() < 1e-12);
}

#[test]
fn quadratic_truncation_gap_grows_like_k_cubed() {
    let (chart, corr, _) = quartic();
    let qe = QuantumEnergy::new(chart, corr, 2, HBAR).unwrap();
    let s = reference_action(&qe, 8);
    let freqs = ModeFrequencies::new(&qe, s, 4).unwrap();
    let dd = qe.diffusion_data(s).unwrap();
    let gap = |k: i64| {
        let kf = k as f64;
        (freqs.freq(k).unwrap() - dd.omega * kf - 0.5 * HBAR * dd.diffusion * kf * kf).abs()
    };
    for k in [2i64, 3] {
        let r = gap(k) / gap(1) / (k * k * k) as f64;
        assert!((0.7..1.3).contains(&r), "k = {k}: ratio {r}");
    }
}

#[test]
fn second_order_phase_error_is_linear_in_time() {
    let (chart, corr, reference) = quartic();
    let times: Vec<f64> = (0..8).map(|i| 100f64.powf(i as f64 / 7.0)).collect();
    let mut cs = Vec::new();
    for order in [0, 2] {
        let qe = QuantumEnergy::new(chart, corr, order, HBAR).unwrap();
        let freqs = ModeFrequencies::new(&qe, reference_action(&qe, 8), 4).unwrap();
        let acc = phase_accuracy(&freqs, reference, 8, 4, &times).unwrap();
        cs.push(acc.c);
        if order == 2 {
            assert!(acc.stable, "{acc:?}");
        }
    }
    assert!(cs[1] < 1e-2 * cs[0], "{cs:?}");
}

#[test]
fn frontier_scales_inversely_with_diffusion() {
    let (chart, corr, reference) = quartic();
    let qe = QuantumEnergy::new(chart, corr, 2, HBAR).unwrap();
    let rep = frontier_report(&qe, reference, 8, 4, 200.0, 9).unwrap();
    assert!((rep.frontier * HBAR * rep.diffusion.diffusion.abs() - 2.0).abs() < 1e-12);
    assert_eq!(rep.rows.len(), 9);
    assert!((rep.rows[0].t - 1.0).abs() < 1e-12 && (rep.rows[8].t - 200.0).abs() < 1e-9);
    for r in &rep.rows {
        assert!((r.diffusion_phase - r.t / rep.frontier).abs() < 1e-12);
    }
}

#[test]
fn modes_leaving_the_chart_are_dropped() {
    let (chart, corr, _) = quartic();
    let qe = QuantumEnergy::new(chart, corr, 2, HBAR).unwrap();
    let n = 2;
    let s = reference_action(&qe, n);
    let freqs = ModeFrequencies::new(&qe, s, 6).unwrap();
    let st = sample_state(n, s, 6);
    let missing: f64 = st.modes().filter(|&k| freqs.freq(k).is_none()).map(|k| st.mode(k).norm_sqr()).sum();
    assert!(missing > 0.0);
    let ev = evolve(&st, 2.0, &freqs).unwrap();
    assert!((ev.truncated_mass - missing).abs() < 1e-15);
    assert!((ev.state.norm_sqr() + ev.truncated_mass - st.norm_sqr()).abs() < 1e-12);
}

#[test]
fn bad_inputs_are_rejected() {
    let (chart, corr, _) = quartic();
    assert!(QuantumEnergy::new(chart, corr, 3, HBAR).is_err());
    assert!(QuantumEnergy::new(chart, corr, 4, HBAR).is_err());
    assert!(TorusState::new(0, 0.5, vec![Complex64::new(1.0, 0.0); 4]).is_err());
    let qe = QuantumEnergy::new(chart, corr, 2, HBAR).unwrap();
    let s = reference_action(&qe, 8);
    let freqs = ModeFrequencies::new(&qe, s, 2).unwrap();
    assert!(evolve(&sample_state(8, s, 4), 1.0, &freqs).is_err());
    assert!(qe.at(100.0).is_err());
}

#[test]
fn trace_csv_lists_every_mode() {
    let (chart, corr, reference) = quartic();
    let qe = QuantumEnergy::new(chart, corr, 2, HBAR).unwrap();
    let s = reference_action(&qe, 8);
    let freqs = ModeFrequencies::new(&qe, s, 2).unwrap();
    let rows = trace(&sample_state(8, s, 2), &freqs, Some(reference), &[1.0, 2.0]).unwrap();
    assert_eq!(rows.len(), 10);
    assert!(rows.iter().all(|r| r.error.unwrap() < 1e-3));
    let csv = trace_csv(&rows, &[("hbar", "0.1".into())]);
    let lines: Vec<&str> = csv.lines().collect();
    assert_eq!(lines[0], "# hbar = 0.1");
    assert_eq!(lines[1], "t,mode,phase,modulus,oracle_phase,error");
    assert_eq!(lines.len(), 12);
}
