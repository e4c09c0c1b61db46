//! Evolution of torus Fourier modes under `f^ℏ`, the quadratic (theta-kernel) truncation,
//! and phase comparisons against reference eigenvalues.

use std::f64::consts::PI;
use std::fmt::Write;

use num_complex::Complex64;
use rayon::prelude::*;
use rustfft::FftPlanner;
use serde::Serialize;

use crate::chart::AAChart;
use crate::error::{Error, Result};
use crate::qgeom::Corrections;
use crate::spectra::fmt17;

/// `f^ℏ(s) = f(s) + ℏ²g(s) + ℏ⁴g¹(s)`, truncated at `order`.
#[derive(Clone, Copy)]
pub struct QuantumEnergy<'a> {
    pub chart: &'a AAChart,
    pub corr: &'a Corrections,
    pub order: usize,
    pub hbar: f64,
}

impl<'a> QuantumEnergy<'a> {
    pub fn new(chart: &'a AAChart, corr: &'a Corrections, order: usize, hbar: f64) -> Result<Self> {
        match order {
            0 | 2 => {}
            4 if corr.step1.is_some() => {}
            _ => return Err(Error::Config(format!("order {order} not available"))),
        }
        Ok(QuantumEnergy { chart, corr, order, hbar })
    }

    pub fn contains(&self, s: f64) -> bool {
        s >= self.chart.s_window.0 && s <= self.chart.s_window.1
    }

    pub fn at(&self, s: f64) -> Result<f64> {
        if !self.contains(s) {
            return Err(Error::Window(format!("s = {s} outside {:?}", self.chart.s_window)));
        }
        let h2 = self.hbar * self.hbar;
        let mut e = self.chart.energy(s)?;
        if self.order >= 2 {
            e += h2 * self.corr.action.g_at(s);
        }
        if let (4, Some(st)) = (self.order, &self.corr.step1) {
            e += h2 * h2 * st.g1_at(s);
        }
        Ok(e)
    }

    /// Frequency and diffusion coefficient at `s`.
    pub fn diffusion_data(&self, s: f64) -> Result<DiffusionData> {
        if !self.contains(s) {
            return Err(Error::Window(format!("s = {s} outside {:?}", self.chart.s_window)));
        }
        let fd = self.chart.f_derivs_at(s, 2)?;
        let h2 = self.hbar * self.hbar;
        let (mut omega, mut diffusion) = (fd[1], fd[2]);
        if self.order >= 2 {
            let d1 = self.corr.action.g_fit.derivative();
            omega += h2 * d1.eval(s);
            diffusion += h2 * d1.derivative().eval(s);
        }
        if let (4, Some(st)) = (self.order, &self.corr.step1) {
            let d1 = st.g1_fit.derivative();
            omega += h2 * h2 * d1.eval(s);
            diffusion += h2 * h2 * d1.derivative().eval(s);
        }
        Ok(DiffusionData { s, omega, diffusion })
    }
}

/// `ω = ∂f^ℏ/∂s` and `𝒟 = ∂²f^ℏ/∂s²` at one torus.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub struct DiffusionData {
    pub s: f64,
    pub omega: f64,
    pub diffusion: f64,
}

/// Fourier coefficients `g_k`, `k = −K..=K`, of an observable on the torus `s = μ + ℏN`.
#[derive(Clone, Debug, PartialEq)]
pub struct TorusState {
    pub n: usize,
    pub s: f64,
    pub coeffs: Vec<Complex64>,
    pub t: f64,
}

impl TorusState {
    pub fn new(n: usize, s: f64, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len().is_multiple_of(2) {
            return Err(Error::Config(format!("need 2K+1 mode coefficients, got {}", coeffs.len())));
        }
        Ok(TorusState { n, s, coeffs, t: 0.0 })
    }

    pub fn from_fn(n: usize, s: f64, kmax: usize, f: impl Fn(i64) -> Complex64) -> Self {
        let k = kmax as i64;
        TorusState { n, s, coeffs: (-k..=k).map(f).collect(), t: 0.0 }
    }

    pub fn kmax(&self) -> usize {
        self.coeffs.len() / 2
    }

    pub fn modes(&self) -> impl Iterator<Item = i64> {
        let k = self.kmax() as i64;
        -k..=k
    }

    pub fn mode(&self, k: i64) -> Complex64 {
        let kk = self.kmax() as i64;
        if k.abs() > kk {
            Complex64::new(0.0, 0.0)
        } else {
            self.coeffs[(k + kk) as usize]
        }
    }

    pub fn norm_sqr(&self) -> f64 {
        self.coeffs.iter().map(|c| c.norm_sqr()).sum()
    }

    fn with_multipliers(&self, t: f64, m: impl Fn(i64) -> Complex64 + Sync) -> TorusState {
        let kk = self.kmax() as i64;
        let coeffs = self.coeffs.par_iter().enumerate().map(|(i, c)| c * m(i as i64 - kk)).collect();
        TorusState { n: self.n, s: self.s, coeffs, t: self.t + t }
    }
}

/// Mode frequencies `(f^ℏ(s + ℏk) − f^ℏ(s))/ℏ`; `None` where `s + ℏk` leaves the chart.
#[derive(Clone, Debug)]
pub struct ModeFrequencies {
    pub s: f64,
    pub hbar: f64,
    pub freqs: Vec<Option<f64>>,
}

impl ModeFrequencies {
    pub fn new(qe: &QuantumEnergy, s: f64, kmax: usize) -> Result<Self> {
        let e0 = qe.at(s)?;
        let k = kmax as i64;
        let freqs = (-k..=k)
            .collect::<Vec<_>>()
            .par_iter()
            .map(|&k| {
                let sk = s + qe.hbar * k as f64;
                if qe.contains(sk) {
                    qe.at(sk).map(|e| Some((e - e0) / qe.hbar))
                } else {
                    Ok(None)
                }
            })
            .collect::<Result<_>>()?;
        Ok(ModeFrequencies { s, hbar: qe.hbar, freqs })
    }

    pub fn kmax(&self) -> usize {
        self.freqs.len() / 2
    }

    pub fn freq(&self, k: i64) -> Option<f64> {
        let kk = self.kmax() as i64;
        if k.abs() > kk {
            None
        } else {
            self.freqs[(k + kk) as usize]
        }
    }
}

#[derive(Clone, Debug)]
pub struct Evolved {
    pub state: TorusState,
    /// `Σ|g_k|²` over modes that left the chart and were dropped.
    pub truncated_mass: f64,
}

/// `g_k(t) = exp{(it/ℏ)(f^ℏ(s + ℏk) − f^ℏ(s))} g_k(0)`.
pub fn evolve(state: &TorusState, t: f64, freqs: &ModeFrequencies) -> Result<Evolved> {
    if freqs.kmax() < state.kmax() {
        return Err(Error::Config(format!("frequencies cover |k| ≤ {}, state has {}", freqs.kmax(), state.kmax())));
    }
    let truncated_mass = state.modes().filter(|&k| freqs.freq(k).is_none()).map(|k| state.mode(k).norm_sqr()).fold(0.0, |a, b| a + b);
    let state = state.with_multipliers(t, |k| freqs.freq(k).map_or(Complex64::new(0.0, 0.0), |w| Complex64::from_polar(1.0, w * t)));
    Ok(Evolved { state, truncated_mass })
}

/// Quadratic truncation: multiplier `exp{it(ωk + ℏ𝒟k²/2)}`.
pub fn leading_diffusion(state: &TorusState, t: f64, dd: &DiffusionData, hbar: f64) -> TorusState {
    state.with_multipliers(t, |k| {
        let k = k as f64;
        Complex64::from_polar(1.0, t * (dd.omega * k + 0.5 * hbar * dd.diffusion * k * k))
    })
}

/// `Σ_{n=lo}^{hi} q^{n²} e^{2inz}`, a partial sum of Jacobi's θ₃.
pub fn theta3_partial(z: f64, q: Complex64, lo: i64, hi: i64) -> Complex64 {
    let lq = q.ln();
    (lo..=hi).map(|n| (lq * (n * n) as f64 + Complex64::new(0.0, 2.0 * n as f64 * z)).exp()).sum()
}

/// Same evolution as `leading_diffusion`, as a circular convolution on `m` angle points with the
/// θ₃ kernel `K(τ) = θ₃((τ + ωt)/2, e^{itℏ𝒟/2})/m`.
pub fn leading_diffusion_kernel(state: &TorusState, t: f64, dd: &DiffusionData, hbar: f64, m: usize) -> Result<TorusState> {
    let kk = state.kmax();
    if !m.is_power_of_two() || m < 2 * kk + 2 {
        return Err(Error::Config(format!("{m} angle points cannot carry |k| ≤ {kk}")));
    }
    let half = (m / 2) as i64;
    let mut planner = FftPlanner::new();
    // sample g(τ_j) = Σ g_k e^{ikτ_j}
    let mut buf = vec![Complex64::new(0.0, 0.0); m];
    for k in state.modes() {
        buf[k.rem_euclid(m as i64) as usize] = state.mode(k);
    }
    planner.plan_fft_inverse(m).process(&mut buf);
    let q = Complex64::from_polar(1.0, 0.5 * t * hbar * dd.diffusion);
    let dtau = 2.0 * PI / m as f64;
    let kernel: Vec<Complex64> = (0..m).map(|j| theta3_partial(0.5 * (j as f64 * dtau + dd.omega * t), q, -half + 1, half - 1) / m as f64).collect();
    let conv: Vec<Complex64> = (0..m)
        .into_par_iter()
        .map(|i| (0..m).map(|j| kernel[(i + m - j) % m] * buf[j]).sum())
        .collect();
    let mut out = conv;
    planner.plan_fft_forward(m).process(&mut out);
    let coeffs = state.modes().map(|k| out[k.rem_euclid(m as i64) as usize] / m as f64).collect();
    Ok(TorusState { n: state.n, s: state.s, coeffs, t: state.t + t })
}

fn wrap(x: f64) -> f64 {
    (x + PI).rem_euclid(2.0 * PI) - PI
}

/// Per-mode phase error `|t(Δ_k − (E_{N+k} − E_N)/ℏ)|` (wrapped), over `k = −kmax..=kmax`, `k ≠ 0`.
pub fn phase_errors(freqs: &ModeFrequencies, reference: &[f64], n: usize, kmax: usize, t: f64) -> Result<Vec<(i64, f64)>> {
    let k = kmax as i64;
    (-k..=k)
        .filter(|&k| k != 0)
        .map(|k| {
            let nk = n as i64 + k;
            let (Some(w), true) = (freqs.freq(k), nk >= 0 && (nk as usize) < reference.len()) else {
                return Err(Error::Window(format!("mode {k} of torus {n} has no reference level or leaves the chart")));
            };
            let exact = (reference[nk as usize] - reference[n]) / freqs.hbar;
            Ok((k, wrap(t * (w - exact)).abs()))
        })
        .collect()
}

#[derive(Clone, Debug, Serialize)]
pub struct PhaseAccuracy {
    pub hbar: f64,
    pub n: usize,
    /// Least-squares `C` in `error ≈ C t ℏ⁴`, errors maximized over modes.
    pub c: f64,
    /// `(t, max error / (t ℏ⁴))`
    pub ratios: Vec<(f64, f64)>,
    pub stable: bool,
}

/// Fit `C` once over all times and check that every `C(t)` stays within ±50%.
pub fn phase_accuracy(freqs: &ModeFrequencies, reference: &[f64], n: usize, kmax: usize, times: &[f64]) -> Result<PhaseAccuracy> {
    let h4 = freqs.hbar.powi(4);
    let mut pts = Vec::with_capacity(times.len());
    for &t in times {
        let e = phase_errors(freqs, reference, n, kmax, t)?.iter().map(|p| p.1).fold(0.0, f64::max);
        pts.push((t * h4, e));
    }
    let c = pts.iter().map(|(x, y)| x * y).sum::<f64>() / pts.iter().map(|(x, _)| x * x).sum::<f64>();
    let ratios: Vec<(f64, f64)> = times.iter().zip(&pts).map(|(&t, (x, y))| (t, y / x)).collect();
    let stable = c > 0.0 && ratios.iter().all(|(_, r)| (r / c - 1.0).abs() <= 0.5);
    Ok(PhaseAccuracy { hbar: freqs.hbar, n, c, ratios, stable })
}

#[derive(Clone, Debug, Serialize)]
pub struct FrontierRow {
    pub t: f64,
    /// Max wrapped phase error against the reference levels.
    pub phase_error: f64,
    /// Max wrapped phase gap between the full multiplier and its quadratic truncation.
    pub truncation_gap: f64,
    /// `ℏ|𝒟|t/2`, the accumulated `k = 1` diffusion phase.
    pub diffusion_phase: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct FrontierReport {
    pub hbar: f64,
    pub n: usize,
    pub diffusion: DiffusionData,
    /// `2/(ℏ|𝒟|)`; infinite when `𝒟 = 0`.
    pub frontier: f64,
    pub rows: Vec<FrontierRow>,
}

/// Phase error and diffusion phase on log-spaced times from 1 to `horizon`.
pub fn frontier_report(qe: &QuantumEnergy, reference: &[f64], n: usize, kmax: usize, horizon: f64, samples: usize) -> Result<FrontierReport> {
    let s = reference_action(qe, n);
    let freqs = ModeFrequencies::new(qe, s, kmax)?;
    let dd = qe.diffusion_data(s)?;
    let frontier = if dd.diffusion == 0.0 { f64::INFINITY } else { 2.0 / (qe.hbar * dd.diffusion.abs()) };
    let samples = samples.max(2);
    let rows = (0..samples)
        .map(|i| {
            let t = horizon.powf(i as f64 / (samples - 1) as f64);
            let phase_error = phase_errors(&freqs, reference, n, kmax, t)?.iter().map(|p| p.1).fold(0.0, f64::max);
            let k = kmax as i64;
            let truncation_gap = (-k..=k)
                .filter_map(|k| {
                    let w = freqs.freq(k)?;
                    let kf = k as f64;
                    Some(wrap(t * (w - dd.omega * kf - 0.5 * qe.hbar * dd.diffusion * kf * kf)).abs())
                })
                .fold(0.0, f64::max);
            Ok(FrontierRow { t, phase_error, truncation_gap, diffusion_phase: 0.5 * qe.hbar * dd.diffusion.abs() * t })
        })
        .collect::<Result<_>>()?;
    Ok(FrontierReport { hbar: qe.hbar, n, diffusion: dd, frontier, rows })
}

/// `s = μ + ℏN` with `μ = ℏm/4`.
pub fn reference_action(qe: &QuantumEnergy, n: usize) -> f64 {
    qe.hbar * (n as f64 + qe.chart.maslov as f64 / 4.0)
}

#[derive(Clone, Debug, Serialize)]
pub struct TraceRow {
    pub t: f64,
    pub mode: i64,
    pub phase: f64,
    pub modulus: f64,
    pub oracle_phase: Option<f64>,
    pub error: Option<f64>,
}

/// Trace of every nonzero mode of `state` at the given times.
pub fn trace(state: &TorusState, freqs: &ModeFrequencies, reference: Option<&[f64]>, times: &[f64]) -> Result<Vec<TraceRow>> {
    let mut rows = Vec::new();
    for &t in times {
        let ev = evolve(state, t, freqs)?;
        for k in state.modes() {
            let g0 = state.mode(k);
            if g0.norm_sqr() == 0.0 {
                continue;
            }
            let g = ev.state.mode(k);
            let phase = wrap(g.arg() - g0.arg());
            let nk = state.n as i64 + k;
            let oracle_phase = reference
                .filter(|r| nk >= 0 && (nk as usize) < r.len() && state.n < r.len())
                .map(|r| wrap(t * (r[nk as usize] - r[state.n]) / freqs.hbar));
            let error = oracle_phase.map(|o| wrap(phase - o).abs());
            rows.push(TraceRow { t, mode: k, phase, modulus: g.norm(), oracle_phase, error });
        }
    }
    Ok(rows)
}

pub fn trace_csv(rows: &[TraceRow], meta: &[(&str, String)]) -> String {
    let mut out = String::new();
    for (k, v) in meta {
        let _ = writeln!(out, "# {k} = {v}");
    }
    out.push_str("t,mode,phase,modulus,oracle_phase,error\n");
    let opt = |x: Option<f64>| x.map_or(String::new(), fmt17);
    for r in rows {
        let _ = writeln!(out, "{},{},{},{},{},{}", fmt17(r.t), r.mode, fmt17(r.phase), fmt17(r.modulus), opt(r.oracle_phase), opt(r.error));
    }
    out
}
