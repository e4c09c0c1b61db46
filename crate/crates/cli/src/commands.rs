use std::path::Path;

use anyhow::{bail, Context, Result};
use num_complex::Complex64;
use qtorus::chart::{build_chart, product_chart, AAChart, ChartOptions};
use qtorus::dynamics::{evolve, frontier_report, leading_diffusion, leading_diffusion_kernel, phase_accuracy, reference_action, trace, trace_csv, ModeFrequencies, QuantumEnergy, TorusState};
use qtorus::expr::{parse, ParamEnv};
use qtorus::moyal::{oracle_agreement, DiffusionCoeffs};
use qtorus::qgeom::{closedness, corrections, involution_residual, Corrections, KappaOrder};
use qtorus::spectra::{calibrate_mu, chart_hash, compare, convergence_study, quantize, MuPolicy, QuantizationConfig, SpectrumTable, System};
use rayon::prelude::*;
use serde::Serialize;
use serde_json::json;

use crate::config::{MuChoice, RunConfig};
use crate::output::{hbar_tag, write_atomic, write_json};

#[derive(Serialize)]
struct SpectrumSummary {
    hbar: f64,
    mu: f64,
    levels: usize,
    file: String,
    /// per order 0, 2, 4
    max_error: Option<Vec<f64>>,
    median_error: Option<Vec<f64>>,
    flagged: Option<usize>,
}

type Stats = (Vec<f64>, Vec<f64>, usize);

fn table_for(cfg: &RunConfig, system: &System, chart: &AAChart, corr: &Corrections, h: f64) -> Result<(SpectrumTable, Option<Stats>)> {
    let reference = if cfg.oracle || cfg.mu == MuChoice::Calibrated { Some(system.oracle_levels(chart, h)?) } else { None };
    let mut q = QuantizationConfig::new(h, cfg.order);
    q.n_range = cfg.n_range.map(|[a, b]| (a, b));
    if cfg.mu == MuChoice::Calibrated {
        let ground = reference.as_ref().and_then(|r| r.first().copied()).context("no reference ground level for calibration")?;
        q.mu = calibrate_mu(chart, corr, cfg.order, h, ground)?;
    }
    let mut t = quantize(&system.name, chart, corr, &q)?;
    let stats = match (&reference, cfg.oracle) {
        (Some(r), true) => {
            let c = compare(&mut t, r)?;
            Some((c.max, c.median, c.flagged))
        }
        _ => None,
    };
    Ok((t, stats))
}

pub fn spectrum(cfg: &RunConfig, out: &Path) -> Result<()> {
    let system = cfg.system()?;
    let (chart, corr) = system.build(cfg.order)?;
    let runs: Vec<(SpectrumTable, Option<Stats>)> = cfg.hbar.par_iter().map(|&h| table_for(cfg, &system, &chart, &corr, h)).collect::<Result<_>>()?;
    let mut summary = Vec::new();
    for (t, stats) in &runs {
        let file = format!("spectrum_{}_hbar{}.csv", cfg.name, hbar_tag(t.hbar));
        write_atomic(&out.join(&file), t.to_csv().as_bytes())?;
        summary.push(SpectrumSummary {
            hbar: t.hbar,
            mu: t.mu,
            levels: t.rows.len(),
            file,
            max_error: stats.as_ref().map(|s| s.0.clone()),
            median_error: stats.as_ref().map(|s| s.1.clone()),
            flagged: stats.as_ref().map(|s| s.2),
        });
    }
    let mu_policy = match cfg.mu {
        MuChoice::Maslov => "maslov",
        MuChoice::Calibrated => "calibrated (fitted to the lowest reference level)",
    };
    write_json(
        &out.join("summary.json"),
        &json!({
            "system": cfg.name,
            "hamiltonian": cfg.hamiltonian_text(),
            "order": cfg.order,
            "mu": mu_policy,
            "maslov": chart.maslov,
            "chart_hash": chart_hash(&chart),
            "chart": chart_json(&chart.options),
            "runs": summary,
        }),
    )
}

fn chart_json(o: &ChartOptions) -> serde_json::Value {
    json!({"n_tau": o.n_tau, "n_levels": o.n_levels, "jet_order": o.jet_order, "substeps": o.substeps, "q_center": o.q_center, "contour_points": o.contour_points})
}

pub fn converge(cfg: &RunConfig, out: &Path) -> Result<()> {
    let system = cfg.system()?;
    let rep = convergence_study(&system, &cfg.hbar, cfg.order)?;
    let mut csv = format!("# system = {}\n# order = {}\n# band_s = {:.17e} {:.17e}\n", cfg.name, cfg.order, rep.band.0, rep.band.1);
    csv.push_str("hbar");
    for f in &rep.fits {
        csv.push_str(&format!(",err{}", f.order));
    }
    csv.push('\n');
    for (i, t) in rep.tables.iter().enumerate() {
        csv.push_str(&qtorus::spectra::fmt17(t.hbar));
        for f in &rep.fits {
            csv.push(',');
            if let Some(p) = f.points.iter().find(|p| p.0 == t.hbar) {
                csv.push_str(&qtorus::spectra::fmt17(p.1));
            }
        }
        csv.push('\n');
        let file = format!("spectrum_{}_hbar{}.csv", cfg.name, hbar_tag(t.hbar));
        write_atomic(&out.join(file), rep.tables[i].to_csv().as_bytes())?;
    }
    write_atomic(&out.join("convergence.csv"), csv.as_bytes())?;
    write_json(
        &out.join("slopes.json"),
        &json!({
            "system": rep.system,
            "order": cfg.order,
            "band_s": [rep.band.0, rep.band.1],
            "hbar": cfg.hbar,
            "fits": rep.fits,
        }),
    )
}

fn schedule(cfg: &RunConfig, h: f64) -> Vec<f64> {
    if let Some(t) = &cfg.dynamics.times {
        return t.clone();
    }
    let horizon = cfg.dynamics.horizon.unwrap_or(10.0 / h);
    let n = cfg.dynamics.samples.max(2);
    (0..n).map(|i| horizon.powf(i as f64 / (n - 1) as f64)).collect()
}

pub fn dynamics(cfg: &RunConfig, out: &Path) -> Result<()> {
    let system = cfg.system()?;
    let (chart, corr) = system.build(cfg.order)?;
    let d = &cfg.dynamics;
    let mut reports = Vec::new();
    for &h in &cfg.hbar {
        let qe = QuantumEnergy::new(&chart, &corr, cfg.order, h)?;
        let s = reference_action(&qe, d.n);
        let freqs = ModeFrequencies::new(&qe, s, d.modes)?;
        let reference = if cfg.oracle { Some(system.oracle_levels(&chart, h)?) } else { None };
        let state = TorusState::from_fn(d.n, s, d.modes, |k| {
            let k = k as f64;
            Complex64::from_polar((-k * k / 8.0).exp(), 0.0)
        });
        let times = schedule(cfg, h);
        let rows = trace(&state, &freqs, reference.as_deref(), &times)?;
        let file = format!("trace_{}_hbar{}.csv", cfg.name, hbar_tag(h));
        let meta = [("system", cfg.name.clone()), ("hbar", format!("{h}")), ("order", cfg.order.to_string()), ("N", d.n.to_string()), ("s", format!("{s:.17e}"))];
        write_atomic(&out.join(&file), trace_csv(&rows, &meta).as_bytes())?;
        let dd = qe.diffusion_data(s)?;
        let t_last = *times.last().unwrap_or(&1.0);
        let ev = evolve(&state, t_last, &freqs)?;
        let unitarity = (ev.state.norm_sqr() + ev.truncated_mass - state.norm_sqr()).abs();
        let half = evolve(&evolve(&state, 0.5 * t_last, &freqs)?.state, 0.5 * t_last, &freqs)?.state;
        let group_law = half.coeffs.iter().zip(&ev.state.coeffs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let direct = leading_diffusion(&state, t_last, &dd, h);
        let kernel = leading_diffusion_kernel(&state, t_last, &dd, h, d.theta_points)?;
        let theta_gap = direct.coeffs.iter().zip(&kernel.coeffs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        let (accuracy, frontier) = match &reference {
            Some(r) => (Some(phase_accuracy(&freqs, r, d.n, d.kmax, &times)?), Some(frontier_report(&qe, r, d.n, d.kmax, t_last.max(1.0 / (h * h * h * h)), d.samples)?)),
            None => (None, None),
        };
        reports.push(json!({
            "hbar": h,
            "trace": file,
            "diffusion": dd,
            "frontier_time": if dd.diffusion == 0.0 { None } else { Some(2.0 / (h * dd.diffusion.abs())) },
            "truncated_mass": ev.truncated_mass,
            "unitarity_defect": unitarity,
            "group_law_defect": group_law,
            "theta_kernel_gap": theta_gap,
            "phase_accuracy": accuracy,
            "frontier": frontier,
        }));
    }
    write_json(&out.join("dynamics.json"), &json!({"system": cfg.name, "order": cfg.order, "N": d.n, "runs": reports}))
}

#[derive(Serialize)]
struct Check {
    name: String,
    residual: f64,
    tolerance: f64,
    pass: bool,
}

fn check(name: &str, residual: f64, tolerance: f64) -> Check {
    Check { name: name.to_string(), residual, tolerance, pass: residual.is_finite() && residual < tolerance }
}

/// Invariant suites; returns whether all passed.
pub fn verify(cfg: &RunConfig, out: &Path) -> Result<bool> {
    let mut checks = Vec::new();

    let conv = oracle_agreement(8, &[(0.7, -0.4), (-1.3, 0.9), (0.2, 1.1)])?;
    checks.push(check("bracket conventions vs exact Weyl products (degree <= 8)", if conv.exact { conv.worst() } else { f64::INFINITY }, 1e-12));

    let small = ChartOptions { n_tau: 64, n_levels: 16, ..ChartOptions::default() };
    let ho = build_chart(&parse("p^2/2 + q^2/2")?, &ParamEnv::new(), (0.0, 12.0), &small)?;
    let ho_corr = corrections(&ho, None, &ParamEnv::new(), 0.0, false)?;
    let t = quantize("harmonic", &ho, &ho_corr, &QuantizationConfig { hbar: 0.5, n_range: Some((0, 20)), mu: MuPolicy::Maslov, order: 2 })?;
    let ho_err = t.rows.iter().map(|r| (r.energies[1] - 0.5 * (r.n as f64 + 0.5)).abs()).fold(0.0, f64::max);
    checks.push(check("harmonic levels hbar(N+1/2), hbar = 0.5", ho_err, 1e-9));

    let system = cfg.system()?;
    let (chart, corr) = system.build(cfg.order)?;
    checks.push(check(&format!("{}: angle periodicity", cfg.name), corr.angle.periodicity, 1e-5));
    if let Some(st) = &corr.step1 {
        checks.push(check(&format!("{}: order-4 commutation residual", cfg.name), st.commutation, 1e-5));
    }

    let quart = build_chart(&parse("p^2/2 + q^2/2 + lambda*q^4")?, &ParamEnv::from_pairs(&[("lambda", 0.1)]), (0.0, 1.5), &ChartOptions { n_tau: 32, n_levels: 12, ..ChartOptions::default() })?;
    let ho_small = build_chart(&parse("p^2/2 + q^2/2")?, &ParamEnv::new(), (0.0, 2.0), &ChartOptions { n_tau: 32, n_levels: 12, ..ChartOptions::default() })?;
    let sc = product_chart(ho_small, quart);
    checks.push(check("closedness of the leading bracket form (harmonic x quartic)", closedness(&sc, KappaOrder::Leading)?, 1e-6));
    let fam = [parse("e1 + e2")?, parse("e1*e2 + e2^2/2")?];
    let inv = involution_residual(&sc, [&fam[0], &fam[1]], &ParamEnv::new(), DiffusionCoeffs::default(), 3, 5)?;
    checks.push(check("involution identity (harmonic x quartic)", inv.max_residual, 1e-5));

    let h = cfg.hbar[0];
    let qe = QuantumEnergy::new(&chart, &corr, cfg.order, h)?;
    let s = reference_action(&qe, cfg.dynamics.n);
    let freqs = ModeFrequencies::new(&qe, s, cfg.dynamics.kmax)?;
    let st = TorusState::from_fn(cfg.dynamics.n, s, cfg.dynamics.kmax, |k| Complex64::new(1.0 / (1.0 + (k * k) as f64), 0.1 * k as f64));
    let a = evolve(&st, 3.7, &freqs)?;
    checks.push(check("mode evolution unitarity", (a.state.norm_sqr() + a.truncated_mass - st.norm_sqr()).abs(), 1e-12));
    let b = evolve(&evolve(&st, 1.2, &freqs)?.state, 2.5, &freqs)?.state;
    checks.push(check("mode evolution group law", b.coeffs.iter().zip(&a.state.coeffs).map(|(x, y)| (x - y).norm()).fold(0.0, f64::max), 1e-12));

    let passed = checks.iter().all(|c| c.pass);
    for c in &checks {
        println!("{} {:<62} residual {:.3e} (tol {:.0e})", if c.pass { "PASS" } else { "FAIL" }, c.name, c.residual, c.tolerance);
    }
    write_json(&out.join("verify.json"), &json!({"system": cfg.name, "passed": passed, "checks": checks}))?;
    if !passed {
        bail!("{} of {} checks failed", checks.iter().filter(|c| !c.pass).count(), checks.len());
    }
    Ok(passed)
}
