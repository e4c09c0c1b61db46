//! Quantum corrections on an action-angle chart: the deformed form ϰ, energy
//! functions, action and angle corrections, the involution identity and the
//! next order of the induction.

use std::f64::consts::PI;

use nalgebra::DMatrix;
use rayon::prelude::*;

use crate::chart::{AAChart, PointJets, SeparableChart};
use crate::error::{Error, Result};
use crate::expr::{Expr, JetPlan, ParamEnv, Var};
use crate::jets::{compose, factorial, Jet};
use crate::moyal::{contract2, dd_bracket, dd_bracket_jet, diffusion0_jet, diffusion0_with, diffusion1, poisson, poisson_jet, DiffusionCoeffs};
use crate::numerics::{Chebyshev, Fourier};

/// Values on the chart grid, indexed `[level][angle]`.
pub type GridFn = Vec<Vec<f64>>;

/// Truncated series `Σ_k terms[k] ℏ^{2k}`.
#[derive(Clone, Debug, PartialEq)]
pub struct HSeries<T> {
    pub terms: Vec<T>,
}

impl<T> HSeries<T> {
    pub fn new(terms: Vec<T>) -> Self {
        HSeries { terms }
    }

    /// Highest power of ℏ² carried.
    pub fn order(&self) -> usize {
        self.terms.len().saturating_sub(1)
    }

    pub fn term(&self, k: usize) -> Option<&T> {
        self.terms.get(k)
    }
}

impl HSeries<f64> {
    pub fn eval(&self, hbar: f64) -> f64 {
        let h2 = hbar * hbar;
        self.terms.iter().rev().fold(0.0, |acc, c| acc * h2 + c)
    }
}

/// Spectral calculus on the (level, angle) grid: Fourier in τ, Chebyshev in s.
pub struct GridCalculus {
    fourier: Fourier,
    n_levels: usize,
    n_tau: usize,
    /// differentiation matrix on the Chebyshev nodes
    ds: DMatrix<f64>,
}

impl GridCalculus {
    pub fn new(chart: &AAChart) -> GridCalculus {
        let n = chart.n_levels();
        let (a, b) = chart.s_window;
        let mut ds = DMatrix::zeros(n, n);
        let nodes = chart.s_values();
        for k in 0..n {
            let mut e = vec![0.0; n];
            e[k] = 1.0;
            let d = Chebyshev::fit(a, b, &e).derivative();
            for (i, &s) in nodes.iter().enumerate() {
                ds[(i, k)] = d.eval(s);
            }
        }
        GridCalculus { fourier: Fourier::new(chart.n_tau()), n_levels: n, n_tau: chart.n_tau(), ds }
    }

    pub fn tau_derivative(&self, f: &GridFn, m: u32) -> GridFn {
        if m == 0 {
            return f.clone();
        }
        f.iter().map(|row| self.fourier.derivative(row, m)).collect()
    }

    pub fn s_derivative(&self, f: &GridFn, n: usize) -> GridFn {
        let mut m = DMatrix::from_fn(self.n_levels, self.n_tau, |i, j| f[i][j]);
        for _ in 0..n {
            m = &self.ds * m;
        }
        (0..self.n_levels).map(|i| (0..self.n_tau).map(|j| m[(i, j)]).collect()).collect()
    }

    /// First s-derivative column by column, with each column's Chebyshev tail chopped at its noise plateau.
    pub fn s_derivative_filtered(&self, chart: &AAChart, f: &GridFn) -> GridFn {
        let nodes = chart.s_values();
        let mut out = vec![vec![0.0; self.n_tau]; self.n_levels];
        for j in 0..self.n_tau {
            let col: Vec<f64> = f.iter().map(|r| r[j]).collect();
            let d = chart.fit_levels(&col).chop().derivative();
            for (i, &s) in nodes.iter().enumerate() {
                out[i][j] = d.eval(s);
            }
        }
        out
    }

    /// τ-average per level.
    pub fn mean(&self, f: &GridFn) -> Vec<f64> {
        f.iter().map(|row| self.fourier.mean(row)).collect()
    }

    /// `∫_0^τ f dτ'` per level (the mean contributes `mean·τ`).
    pub fn tau_integral(&self, f: &GridFn) -> GridFn {
        f.iter().map(|row| self.fourier.antiderivative(row)).collect()
    }

    /// All mixed partials `∂τ^m ∂s^n f` with `m + n ≤ order`.
    pub fn partials(&self, f: &GridFn, order: usize) -> Partials {
        let mut d = Vec::with_capacity(order + 1);
        for m in 0..=order {
            let ft = self.tau_derivative(f, m as u32);
            let mut row = vec![ft.clone()];
            let mut cur = ft;
            for _ in 1..=(order - m) {
                cur = self.s_derivative(&cur, 1);
                row.push(cur.clone());
            }
            d.push(row);
        }
        Partials { order, d }
    }
}

/// Mixed (τ, s) partials of a grid function; `d[m][n] = ∂τ^m ∂s^n f`.
pub struct Partials {
    pub order: usize,
    pub d: Vec<Vec<GridFn>>,
}

impl Partials {
    /// Jet in (τ, s) at grid point (i, j).
    pub fn local_jet(&self, i: usize, j: usize, tau: f64, s: f64, order: usize) -> Jet {
        let mut jet = Jet::zero(&[tau, s], order);
        let lay = jet.layout().indices.clone();
        for (k, ix) in lay.iter().enumerate() {
            let (m, n) = (ix[0] as usize, ix[1] as usize);
            jet.coeffs_mut()[k] = self.d[m][n][i][j] / (factorial(m) * factorial(n));
        }
        jet
    }

    /// Jet in (q, p) via the chart coordinates at the point.
    pub fn phase_jet(&self, pj: &PointJets, i: usize, j: usize, order: usize) -> Result<Jet> {
        let tau = pj.tau.truncate(order);
        let s = pj.s.truncate(order);
        let local = self.local_jet(i, j, tau.value(), s.value(), order);
        compose(&local, &[tau, s])
    }

    pub fn at(&self, m: usize, n: usize) -> &GridFn {
        &self.d[m][n]
    }
}

fn grid_map<F>(chart: &AAChart, f: F) -> Result<GridFn>
where
    F: Fn(usize, usize, &PointJets) -> Result<f64> + Sync,
{
    chart
        .points
        .par_iter()
        .enumerate()
        .map(|(i, row)| row.iter().enumerate().map(|(j, pj)| f(i, j, pj)).collect::<Result<Vec<_>>>())
        .collect()
}

/// Fill non-finite entries of each level by trigonometric interpolation from the finite ones.
fn fill_gaps(f: &mut GridFn) -> Vec<(usize, usize)> {
    let mut flagged = Vec::new();
    for (i, row) in f.iter_mut().enumerate() {
        let bad: Vec<usize> = (0..row.len()).filter(|&j| !row[j].is_finite()).collect();
        if bad.is_empty() {
            continue;
        }
        let n = row.len();
        let good: Vec<usize> = (0..n).filter(|&j| row[j].is_finite()).collect();
        for &j in &bad {
            // periodic Lagrange interpolation through the nearest good neighbours
            let t = 2.0 * PI * j as f64 / n as f64;
            let mut near = good.clone();
            near.sort_by_key(|&g| {
                let d = (g as i64 - j as i64).rem_euclid(n as i64);
                d.min(n as i64 - d)
            });
            near.truncate(6);
            let mut v = 0.0;
            for &a in &near {
                let ta = 2.0 * PI * a as f64 / n as f64;
                let mut w = 1.0;
                for &b in &near {
                    if a != b {
                        let tb = 2.0 * PI * b as f64 / n as f64;
                        w *= (0.5 * (t - tb)).sin() / (0.5 * (ta - tb)).sin();
                    }
                }
                v += w * row[a];
            }
            row[j] = v;
            flagged.push((i, j));
        }
    }
    flagged
}

/// Coefficients of ϰ on a 1D chart. Only `⟨⟨s,τ⟩⟩` survives in one degree of freedom.
#[derive(Clone, Debug)]
pub struct KappaTable {
    pub tau: Vec<f64>,
    pub s: Vec<f64>,
    pub cross: GridFn,
    /// max |⟨⟨s,s⟩⟩| and |⟨⟨τ,τ⟩⟩| seen (antisymmetry check)
    pub diagonal: f64,
    pub flagged: Vec<(usize, usize)>,
}

pub fn kappa0(chart: &AAChart) -> Result<KappaTable> {
    let pairs: Vec<Vec<(f64, f64)>> = chart
        .points
        .par_iter()
        .map(|row| {
            row.iter()
                .map(|pj| {
                    let v = if pj.condition.is_finite() { dd_bracket(&pj.s, &pj.tau, 0)? } else { f64::NAN };
                    let d = dd_bracket(&pj.s, &pj.s, 0)?.abs().max(dd_bracket(&pj.tau, &pj.tau, 0)?.abs());
                    Ok((v, d))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut cross: GridFn = pairs.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
    let diagonal = pairs.iter().flatten().fold(0.0f64, |m, x| m.max(x.1));
    let flagged = fill_gaps(&mut cross);
    Ok(KappaTable { tau: chart.tau_grid(), s: chart.s_values(), cross, diagonal, flagged })
}

/// `H^ℏ = f(s) + ℏ² L` on the grid.
#[derive(Clone, Debug)]
pub struct EnergyFunction {
    /// `f(s)` per level
    pub h0: Vec<f64>,
    pub l: GridFn,
    pub l_mean: Vec<f64>,
    pub coeffs: DiffusionCoeffs,
    pub m: Option<Expr>,
    pub env: ParamEnv,
}

impl EnergyFunction {
    pub fn series(&self, i: usize, j: usize) -> HSeries<f64> {
        HSeries::new(vec![self.h0[i], self.l[i][j]])
    }
}

/// `h.terms[0]` must be the chart Hamiltonian; `h.terms[1]` (optional) is M.
pub fn energy_function(h: &HSeries<Expr>, env: &ParamEnv, chart: &AAChart) -> Result<EnergyFunction> {
    energy_function_with(h, env, chart, DiffusionCoeffs::default())
}

pub fn energy_function_with(h: &HSeries<Expr>, env: &ParamEnv, chart: &AAChart, coeffs: DiffusionCoeffs) -> Result<EnergyFunction> {
    let h0 = h.term(0).ok_or_else(|| Error::Config("empty Hamiltonian series".into()))?;
    if h.order() > 1 {
        return Err(Error::Config("only H⁰ + ℏ²M is supported".into()));
    }
    let mut full = chart.potential.env.clone();
    for (k, v) in env.iter() {
        full.set(k, *v);
    }
    let env = full;
    let vars = Var::phase_vars(1);
    let at = |e: &Expr, q: f64, p: f64| e.eval_with(&|v| if v == vars[0] { Some(q) } else if v == vars[1] { Some(p) } else { None }, &env);
    // H⁰ must be the Hamiltonian the chart was built from
    for lv in &chart.levels {
        let (q, p) = (lv.q[0].value(), lv.p[0].value());
        let e = at(h0, q, p)?;
        if (e - lv.energy).abs() > 1e-8 * (1.0 + lv.energy.abs()) {
            return Err(Error::Config(format!("H⁰ = {e} at a chart point of energy {}", lv.energy)));
        }
    }
    let m = h.term(1);
    let l = grid_map(chart, |i, _, pj| {
        let fd = &chart.levels[i].f_derivs;
        let mut v = diffusion0_with(std::slice::from_ref(&pj.s), &[vec![fd[2]]], &[vec![vec![fd[3]]]], coeffs)?;
        if let Some(m) = m {
            v += at(m, pj.q(), pj.p())?;
        }
        Ok(v)
    })?;
    let calc = Fourier::new(chart.n_tau());
    let l_mean = l.iter().map(|r| calc.mean(r)).collect();
    Ok(EnergyFunction { h0: chart.levels.iter().map(|l| l.energy).collect(), l, l_mean, coeffs, m: m.cloned(), env })
}

/// `h(s(q,p))` as a phase jet, from `derivs[k] = h^(k)(s₀)`.
fn along_s(derivs: &[f64], s: &Jet) -> Result<Jet> {
    let c: Vec<f64> = derivs.iter().enumerate().map(|(k, d)| d / factorial(k)).collect();
    compose(&Jet::univariate(s.value(), &c), std::slice::from_ref(s))
}

/// First quantum correction to the action, `s^ℏ = s + ℏ² a`.
#[derive(Clone, Debug)]
pub struct ActionCorrection {
    pub a: GridFn,
    /// phase-space jets of `a` at the grid points, order = chart order − 2
    pub jets: Vec<Vec<Jet>>,
    pub l_mean: Vec<f64>,
    /// `dⁿ⟨L⟩/dsⁿ` per level
    pub l_mean_derivs: Vec<Vec<f64>>,
    /// membrane integral Φ(s) per level
    pub membrane: Vec<f64>,
    /// `dⁿΦ/dsⁿ` per level
    pub membrane_derivs: Vec<Vec<f64>>,
    pub a0: f64,
    /// `g = ⟨L⟩ − f′(Φ + a⁰)` per level
    pub g: Vec<f64>,
    pub g_fit: Chebyshev,
    pub membrane_fit: Chebyshev,
    /// max over levels of the τ-spread of `L − f′a`
    pub consistency: f64,
}

impl ActionCorrection {
    /// ℏ² coefficient of `f^ℏ` at any action in the window.
    pub fn g_at(&self, s: f64) -> f64 {
        self.g_fit.eval(s)
    }
}

pub fn action_correction(ef: &EnergyFunction, kt: &KappaTable, chart: &AAChart, a0: f64) -> Result<ActionCorrection> {
    let fourier = Fourier::new(chart.n_tau());
    let kmean: Vec<f64> = kt.cross.iter().map(|r| fourier.mean(r)).collect();
    // Φ(s) = ∫_0^s ⟨⟨⟨s,τ⟩⟩⟩ ds′, continued below the innermost level by the interpolant
    let membrane_fit = chart.fit_levels(&kmean).chop().integral(0.0);
    let membrane: Vec<f64> = chart.s_values().iter().map(|&s| membrane_fit.eval(s)).collect();
    let mut a = Vec::with_capacity(chart.n_levels());
    let mut g = Vec::with_capacity(chart.n_levels());
    let mut consistency = 0.0f64;
    for (i, lv) in chart.levels.iter().enumerate() {
        let fp = lv.f_derivs[1];
        if !(fp.abs() > 1e-12) {
            return Err(Error::Window(format!("f'(s) vanishes at s = {}", lv.s)));
        }
        let gi = ef.l_mean[i] - fp * (membrane[i] + a0);
        let row: Vec<f64> = ef.l[i].iter().map(|l| (l - ef.l_mean[i]) / fp + membrane[i] + a0).collect();
        let spread = row.iter().zip(&ef.l[i]).map(|(ai, l)| l - fp * ai);
        let (lo, hi) = spread.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), v| (lo.min(v), hi.max(v)));
        consistency = consistency.max((hi - lo) / (1.0 + gi.abs()));
        a.push(row);
        g.push(gi);
    }
    let g_fit = chart.fit_levels(&g).chop();
    let per_level = action_jets(ef, chart, &membrane_fit, a0)?;
    let mut jets = Vec::with_capacity(per_level.len());
    let mut l_mean_derivs = Vec::with_capacity(per_level.len());
    let mut membrane_derivs = Vec::with_capacity(per_level.len());
    for (j, lm, ph) in per_level {
        jets.push(j);
        l_mean_derivs.push(lm);
        membrane_derivs.push(ph);
    }
    Ok(ActionCorrection { a, jets, l_mean: ef.l_mean.clone(), l_mean_derivs, membrane, membrane_derivs, a0, g, g_fit, membrane_fit, consistency })
}

/// s-derivatives `0..=n` of τ-averages, from local (τ, s) jets of the integrand along one level.
fn local_mean_derivs(loc: &[Jet], n: usize) -> Vec<f64> {
    (0..=n).map(|k| loc.iter().map(|j| j.partial(&[0, k as u8])).sum::<f64>() / loc.len() as f64).collect()
}

/// Phase jets of `a` per level together with the derivatives of `⟨L⟩` and Φ used to build them.
type LevelJets = (Vec<Jet>, Vec<f64>, Vec<f64>);

/// `a = (L − ⟨L⟩)/f′ + Φ + a⁰` as phase jets, with L from the jet-valued diffusion operator.
/// Derivatives of `⟨L⟩` and `Φ′ = ⟨⟨⟨s,τ⟩⟩⟩` come from τ-averages of local jets, not from differentiating fits.
fn action_jets(ef: &EnergyFunction, chart: &AAChart, membrane_fit: &Chebyshev, a0: f64) -> Result<Vec<LevelJets>> {
    let ord = chart.options.jet_order;
    if ord < 3 {
        return Err(Error::JetOrder { needed: 3, have: ord });
    }
    let lo = ord - 2;
    let mplan = ef.m.as_ref().map(|m| JetPlan::phase(m, 1, lo));
    chart
        .points
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let lv = &chart.levels[i];
            let fd = &lv.f_derivs;
            let mut ls = Vec::with_capacity(row.len());
            let mut l_loc = Vec::with_capacity(row.len());
            let mut k_loc = Vec::with_capacity(row.len());
            for pj in row {
                let s = pj.s.truncate(lo);
                let d2 = along_s(&fd[2..=2 + lo], &s)?;
                let d3 = along_s(&fd[3..=3 + lo], &s)?;
                let mut l = diffusion0_jet(std::slice::from_ref(&pj.s), &[vec![d2]], &[vec![vec![d3]]], ef.coeffs)?;
                if let Some(plan) = &mplan {
                    l = &l + &plan.eval(&[pj.q(), pj.p()], &ef.env)?;
                }
                let fwd: Vec<Jet> = pj.forward.comps.iter().map(|c| c.truncate(lo)).collect();
                l_loc.push(compose(&l, &fwd)?);
                let kappa = dd_bracket_jet(&pj.s, &pj.tau, 0)?;
                let fwd: Vec<Jet> = fwd.iter().map(|c| c.truncate(kappa.order())).collect();
                k_loc.push(compose(&kappa, &fwd)?);
                ls.push(l);
            }
            let lm = local_mean_derivs(&l_loc, lo);
            let mut ph = vec![membrane_fit.eval(lv.s)];
            ph.extend(local_mean_derivs(&k_loc, lo - 1));
            let jets = row
                .iter()
                .zip(ls)
                .map(|(pj, l)| {
                    let s = pj.s.truncate(lo);
                    let inv_fp = along_s(&fd[1..=1 + lo], &s)?.recip();
                    let osc = &l - &along_s(&lm, &s)?;
                    Ok(&(&osc * &inv_fp) + &along_s(&ph, &s)?.add_const(a0))
                })
                .collect::<Result<Vec<_>>>()?;
            Ok((jets, lm, ph))
        })
        .collect()
}

/// First quantum correction to the angle, `τ^ℏ = τ + ℏ² φ`.
#[derive(Clone, Debug)]
pub struct AngleCorrection {
    pub phi: GridFn,
    /// `∂ⁿφ/∂sⁿ` on the grid, n = 0..
    pub s_tables: Vec<GridFn>,
    /// local (τ, s) jets of the integrand `⟨⟨s,τ⟩⟩ − ∂a/∂s`
    pub integrand: Vec<Vec<Jet>>,
    /// per-level means of `∂ⁿ/∂sⁿ` of the integrand
    pub integrand_means: Vec<Vec<f64>>,
    /// base point of the gauge integral (irrelevant in one degree of freedom)
    pub s0: f64,
    /// max over interior levels of `|⟨⟨⟨s,τ⟩⟩⟩ − ∂⟨a⟩/∂s|`
    pub periodicity: f64,
    /// max over levels of `|φ(2π) − φ(0)|` before the secular part is removed
    pub jump: f64,
}

impl AngleCorrection {
    /// Phase jet of φ at grid point (i, j) of the given order (≤ integrand order + 1).
    pub fn phase_jet(&self, pj: &PointJets, i: usize, j: usize, order: usize) -> Result<Jet> {
        let tau = pj.tau.truncate(order);
        let s = pj.s.truncate(order);
        let loc = &self.integrand[i][j];
        if loc.order() + 1 < order || self.s_tables.len() <= order {
            return Err(Error::JetOrder { needed: order, have: loc.order() + 1 });
        }
        let mut jet = Jet::zero(&[tau.value(), s.value()], order);
        let lay = jet.layout().indices.clone();
        for (k, ix) in lay.iter().enumerate() {
            let (m, n) = (ix[0] as usize, ix[1] as usize);
            let d = if m == 0 {
                self.s_tables[n][i][j]
            } else {
                let mut v = loc.partial(&[ix[0] - 1, ix[1]]);
                if m == 1 {
                    v -= self.integrand_means[n][i];
                }
                v
            };
            jet.coeffs_mut()[k] = d / (factorial(m) * factorial(n));
        }
        compose(&jet, &[tau, s])
    }
}

pub fn angle_correction(ac: &ActionCorrection, kt: &KappaTable, chart: &AAChart) -> Result<AngleCorrection> {
    angle_correction_gauged(ac, kt, chart, &|_| [0.0; 4])
}

/// As [`angle_correction`] with a gauge term: `dpsi(s)` returns `ψ′, ψ″, ψ‴, ψ⁗`.
pub fn angle_correction_gauged(ac: &ActionCorrection, kt: &KappaTable, chart: &AAChart, dpsi: &dyn Fn(f64) -> [f64; 4]) -> Result<AngleCorrection> {
    let calc = GridCalculus::new(chart);
    // integrand ⟨⟨s,τ⟩⟩ − ∂a/∂s with ∂_s F = {F, τ}, re-expanded in (τ, s)
    let integrand: Vec<Vec<Jet>> = chart
        .points
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            row.iter()
                .enumerate()
                .map(|(j, pj)| {
                    let kappa = dd_bracket_jet(&pj.s, &pj.tau, 0)?;
                    let a_s = poisson_jet(&ac.jets[i][j], &pj.tau)?;
                    let k = kappa.order().min(a_s.order());
                    let f = &kappa.truncate(k) - &a_s.truncate(k);
                    let fwd: Vec<Jet> = pj.forward.comps.iter().map(|c| c.truncate(k)).collect();
                    compose(&f, &fwd)
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let k = integrand[0][0].order();
    let taus = chart.tau_grid();
    let mut s_tables = Vec::with_capacity(k + 1);
    let mut integrand_means = Vec::with_capacity(k + 1);
    let mut jump = 0.0f64;
    for n in 0..=k {
        let t: GridFn = integrand.iter().map(|r| r.iter().map(|j| j.partial(&[0, n as u8])).collect()).collect();
        let means = calc.mean(&t);
        let mut phi = calc.tau_integral(&t);
        for (i, row) in phi.iter_mut().enumerate() {
            let shift = if n < 4 { dpsi(chart.levels[i].s)[n] } else { 0.0 };
            for (v, tau) in row.iter_mut().zip(&taus) {
                *v += shift - means[i] * tau;
            }
        }
        if n == 0 {
            jump = means.iter().fold(0.0f64, |m, v| m.max(2.0 * PI * v.abs()));
        }
        s_tables.push(phi);
        integrand_means.push(means);
    }
    let kmean = calc.mean(&kt.cross);
    let amean = calc.mean(&ac.a);
    let damean = chart.fit_levels(&amean).chop().derivative();
    let (lo, hi) = chart.s_window;
    let periodicity = chart
        .levels
        .iter()
        .enumerate()
        .filter(|(_, l)| l.s > lo + 0.05 * (hi - lo) && l.s < hi - 0.05 * (hi - lo))
        .map(|(i, l)| (kmean[i] - damean.eval(l.s)).abs())
        .fold(0.0, f64::max);
    Ok(AngleCorrection { phi: s_tables[0].clone(), s_tables, integrand, integrand_means, s0: 0.5 * (lo + hi), periodicity, jump })
}

/// Order ℏ⁴ coefficients produced by the induction step.
#[derive(Clone, Debug)]
pub struct InductionStep {
    pub l1: GridFn,
    pub kappa1: GridFn,
    pub a1: GridFn,
    pub phi1: GridFn,
    pub g1: Vec<f64>,
    pub g1_fit: Chebyshev,
    /// max |a¹_s + φ¹_τ + {a,φ} − κ¹| over interior points
    pub commutation: f64,
    /// max over levels of the τ-spread of the ℏ⁴ energy balance
    pub consistency: f64,
}

impl InductionStep {
    pub fn g1_at(&self, s: f64) -> f64 {
        self.g1_fit.eval(s)
    }
}

/// Variation of `Δ_S f` in the direction `a` at a point.
fn diffusion_variation(s: &Jet, a: &Jet, fd: &[f64], c: DiffusionCoeffs) -> f64 {
    let h = s.hessian();
    let g = s.gradient();
    let ha = a.hessian();
    let ga = a.gradient();
    let av = a.value();
    let n = g.len();
    let gg = DMatrix::from_fn(n, n, |i, j| g[i] * g[j]);
    let gga = DMatrix::from_fn(n, n, |i, j| g[i] * ga[j] + ga[i] * g[j]);
    c.c2 * (2.0 * contract2(&h, &ha) * fd[2] + contract2(&h, &h) * fd[3] * av)
        + c.c3 * ((contract2(&ha, &gg) + contract2(&h, &gga)) * fd[3] + contract2(&h, &gg) * fd[4] * av)
}

/// The k = 1 step: ℏ⁴ energy correction `g¹` and the order-ℏ⁴ coordinate corrections.
/// Needs chart jets of order 6 (third derivatives of φ).
pub fn induction_step(chart: &AAChart, ef: &EnergyFunction, ac: &ActionCorrection, ang: &AngleCorrection, tolerance: f64) -> Result<InductionStep> {
    if chart.options.jet_order < 6 {
        return Err(Error::JetOrder { needed: 6, have: chart.options.jet_order });
    }
    let calc = GridCalculus::new(chart);
    // g = ⟨L⟩ − f′(Φ + a⁰), differentiated with the product rule
    let dg: Vec<[f64; 3]> = chart
        .levels
        .iter()
        .enumerate()
        .map(|(i, lv)| {
            let fd = &lv.f_derivs;
            let lm = &ac.l_mean_derivs[i];
            let mut ph = ac.membrane_derivs[i].clone();
            ph[0] += ac.a0;
            let mut out = [0.0; 3];
            for (n, o) in out.iter_mut().enumerate() {
                let n = n + 1;
                let mut acc = lm[n];
                let mut binom = 1.0;
                for k in 0..=n {
                    acc -= binom * fd[k + 1] * ph[n - k];
                    binom = binom * (n - k) as f64 / (k + 1) as f64;
                }
                *o = acc;
            }
            out
        })
        .collect();
    let c = ef.coeffs;
    let rows: Vec<Vec<(f64, f64)>> = chart
        .points
        .par_iter()
        .enumerate()
        .map(|(i, row)| {
            let lv = &chart.levels[i];
            let fd = &lv.f_derivs;
            let [g1d, g2d, g3d] = dg[i];
            row.iter()
                .enumerate()
                .map(|(j, pj)| {
                    let aj = ac.jets[i][j].truncate(3);
                    let phij = ang.phase_jet(pj, i, j, 3)?;
                    let s3 = pj.s.truncate(3);
                    let t3 = pj.tau.truncate(3);
                    let dg0 = diffusion0_with(std::slice::from_ref(&s3), &[vec![g2d]], &[vec![vec![g3d]]], c)?;
                    let var = diffusion_variation(&s3, &aj, fd, c);
                    let d1 = diffusion1(&pj.s.truncate(4), &fd[..7])?;
                    let l1 = dg0 + var + d1;
                    let av = aj.value();
                    let r = l1 - 0.5 * fd[2] * av * av - g1d * av;
                    let kappa1 = dd_bracket(&pj.s.truncate(5), &pj.tau.truncate(5), 1)? + dd_bracket(&s3, &phij, 0)? + dd_bracket(&aj, &t3, 0)?;
                    let pb = poisson(&aj, &phij)?;
                    Ok((r, kappa1 - pb))
                })
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let rgrid: GridFn = rows.iter().map(|r| r.iter().map(|x| x.0).collect()).collect();
    let source: GridFn = rows.iter().map(|r| r.iter().map(|x| x.1).collect()).collect();
    let rmean = calc.mean(&rgrid);
    let smean = calc.mean(&source);
    let a1_mean_fit = chart.fit_levels(&smean).chop().integral(0.0);
    let mut g1 = Vec::with_capacity(chart.n_levels());
    let mut a1 = Vec::with_capacity(chart.n_levels());
    let mut consistency = 0.0f64;
    for (i, lv) in chart.levels.iter().enumerate() {
        let fp = lv.f_derivs[1];
        let gi = rmean[i] - fp * a1_mean_fit.eval(lv.s);
        let row: Vec<f64> = rgrid[i].iter().map(|r| (r - gi) / fp).collect();
        let bal = row.iter().zip(&rgrid[i]).map(|(x, r)| r - fp * x - gi);
        consistency = consistency.max(bal.fold(0.0f64, |m, v| m.max(v.abs())));
        g1.push(gi);
        a1.push(row);
    }
    let a1_s = calc.s_derivative_filtered(chart, &a1);
    let integrand: GridFn = source.iter().zip(&a1_s).map(|(k, d)| k.iter().zip(d).map(|(x, y)| x - y).collect()).collect();
    let means = calc.mean(&integrand);
    let taus = chart.tau_grid();
    let mut phi1 = calc.tau_integral(&integrand);
    for (i, row) in phi1.iter_mut().enumerate() {
        for (v, t) in row.iter_mut().zip(&taus) {
            *v -= means[i] * t;
        }
    }
    // commutation relation at order ℏ⁴, with a¹ differentiated independently of its construction
    let phi1_t = calc.tau_derivative(&phi1, 1);
    let (lo, hi) = chart.s_window;
    let mut commutation = 0.0f64;
    for (i, lv) in chart.levels.iter().enumerate() {
        if lv.s < lo + 0.05 * (hi - lo) || lv.s > hi - 0.05 * (hi - lo) {
            continue;
        }
        for j in 0..chart.n_tau() {
            let r = a1_s[i][j] + phi1_t[i][j] - source[i][j];
            commutation = commutation.max(r.abs());
        }
    }
    if commutation > tolerance {
        return Err(Error::Check(format!("order-ℏ⁴ commutation residual {commutation:e} exceeds {tolerance:e}")));
    }
    let g1_fit = chart.fit_levels(&g1).chop();
    Ok(InductionStep { l1: rgrid, kappa1: source, a1, phi1, g1, g1_fit, commutation, consistency })
}

/// Everything order ℏ² on one chart.
#[derive(Clone, Debug)]
pub struct Corrections {
    pub kappa: KappaTable,
    pub energy: EnergyFunction,
    pub action: ActionCorrection,
    pub angle: AngleCorrection,
    pub step1: Option<InductionStep>,
}

/// Run kappa0 → energy_function → action_correction → angle_correction (→ induction_step).
pub fn corrections(chart: &AAChart, m: Option<&Expr>, env: &ParamEnv, a0: f64, with_step1: bool) -> Result<Corrections> {
    let kappa = kappa0(chart)?;
    let mut terms = vec![chart.potential.h0.clone()];
    if let Some(m) = m {
        terms.push(m.clone());
    }
    let energy = energy_function(&HSeries::new(terms), env, chart)?;
    let action = action_correction(&energy, &kappa, chart, a0)?;
    let angle = angle_correction(&action, &kappa, chart)?;
    let step1 = if with_step1 { Some(induction_step(chart, &energy, &action, &angle, 1e-5)?) } else { None };
    Ok(Corrections { kappa, energy, action, angle, step1 })
}

/// Per-factor action jets `E_i(s_i)` at grid level `i`, as univariate jets in δs.
fn energy_jet(chart: &AAChart, i: usize, order: usize) -> Jet {
    let lv = &chart.levels[i];
    let c: Vec<f64> = (0..=order).map(|k| if k == 0 { lv.energy } else { lv.f_derivs[k] / factorial(k) }).collect();
    Jet::univariate(lv.s, &c)
}

/// Sample of product grid points `(i1, j1, i2, j2)` with the given strides.
fn product_points(sc: &SeparableChart, level_stride: usize, tau_stride: usize) -> Vec<(usize, usize, usize, usize)> {
    let (a, b) = (&sc.first, &sc.second);
    let mut out = Vec::new();
    for i1 in (0..a.n_levels()).step_by(level_stride.max(1)) {
        for i2 in (0..b.n_levels()).step_by(level_stride.max(1)) {
            for j1 in (0..a.n_tau()).step_by(tau_stride.max(1)) {
                for j2 in (0..b.n_tau()).step_by(tau_stride.max(1)) {
                    out.push((i1, j1, i2, j2));
                }
            }
        }
    }
    out
}

/// Result of the involution identity check on a product chart.
#[derive(Clone, Debug)]
pub struct InvolutionReport {
    pub max_residual: f64,
    /// largest single term entering the identity (scale reference)
    pub scale: f64,
    pub points: usize,
}

/// Left side of the involution identity for `H_j = F_j(e1, e2)`, with `e_i` the factor energies,
/// maximized over a strided sample of the product grid.
pub fn involution_residual(
    sc: &SeparableChart,
    family: [&Expr; 2],
    env: &ParamEnv,
    coeffs: DiffusionCoeffs,
    level_stride: usize,
    tau_stride: usize,
) -> Result<InvolutionReport> {
    let order = 5usize.min(sc.first.options.jet_order).min(sc.second.options.jet_order);
    if order < 4 {
        return Err(Error::JetOrder { needed: 4, have: order });
    }
    let evars = [Var::E(0), Var::E(1)];
    let plans: Vec<JetPlan> = family.iter().map(|f| JetPlan::new(f, &evars, order)).collect();
    let pts = product_points(sc, level_stride, tau_stride);
    let results: Vec<(f64, f64)> = pts
        .par_iter()
        .map(|&(i1, j1, i2, j2)| -> Result<(f64, f64)> {
            let pj = sc.jets(i1, j1, i2, j2, 4)?;
            let e1 = energy_jet(&sc.first, i1, order);
            let e2 = energy_jet(&sc.second, i2, order);
            let sbase = [e1.base()[0], e2.base()[0]];
            let ej = [e1.embed(&sbase, &[0]), e2.embed(&sbase, &[1])];
            // G_j(s1, s2) = F_j(E1(s1), E2(s2))
            let g: Vec<Jet> = plans
                .iter()
                .map(|p| compose(&p.eval(&[e1.value(), e2.value()], env)?, &ej))
                .collect::<Result<_>>()?;
            let s = [pj.s[0].clone(), pj.s[1].clone()];
            let h: Vec<Jet> = g.iter().map(|gj| compose(&gj.truncate(4), &s)).collect::<Result<_>>()?;
            let along = |j: &Jet| compose(j, &s);
            let mut delta = Vec::with_capacity(2);
            for gj in &g {
                let mut d2 = vec![vec![]; 2];
                let mut d3 = vec![vec![vec![]; 2]; 2];
                for l in 0..2 {
                    for m in 0..2 {
                        let mut ix = [0u8; 2];
                        ix[l] += 1;
                        ix[m] += 1;
                        d2[l].push(along(&gj.derivative_multi(&ix).truncate(2))?);
                        for r in 0..2 {
                            let mut iy = ix;
                            iy[r] += 1;
                            d3[l][m].push(along(&gj.derivative_multi(&iy).truncate(2))?);
                        }
                    }
                }
                delta.push(diffusion0_jet(&s, &d2, &d3, coeffs)?);
            }
            let grad: Vec<[f64; 2]> = g.iter().map(|gj| [gj.partial(&[1, 0]), gj.partial(&[0, 1])]).collect();
            let t1 = dd_bracket(&h[0], &h[1], 0)?;
            let mut t2 = 0.0;
            for l in 0..2 {
                for m in 0..2 {
                    t2 += grad[0][l] * dd_bracket(&s[l], &s[m], 0)? * grad[1][m];
                }
            }
            let t3 = poisson(&h[0].truncate(2), &delta[1])?;
            let t4 = poisson(&h[1].truncate(2), &delta[0])?;
            let r = t1 - t2 + t3 - t4;
            Ok((r.abs(), t1.abs().max(t2.abs()).max(t3.abs()).max(t4.abs())))
        })
        .collect::<Result<_>>()?;
    Ok(InvolutionReport {
        max_residual: results.iter().fold(0.0f64, |m, r| m.max(r.0)),
        scale: results.iter().fold(0.0f64, |m, r| m.max(r.1)),
        points: results.len(),
    })
}

/// Components of a 2-form in coordinates (τ1, s1, τ2, s2), indexed by pairs (a<b).
const PAIRS: [(usize, usize); 6] = [(0, 1), (0, 2), (0, 3), (1, 2), (1, 3), (2, 3)];

fn pair_index(a: usize, b: usize) -> (usize, f64) {
    let (lo, hi, sign) = if a < b { (a, b, 1.0) } else { (b, a, -1.0) };
    (PAIRS.iter().position(|&p| p == (lo, hi)).unwrap(), sign)
}

/// Which ϰ to test for closedness.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum KappaOrder {
    /// ϰ⁽⁰⁾
    Leading,
    /// the bracket part of ϰ⁽¹⁾: `⟨⟨·,·⟩⟩⁽¹⁾` of the chart coordinates
    Next,
}

/// Largest component of the discrete exterior derivative of ϰ on a product chart.
///
/// Components are evaluated from jets on the full product grid; derivatives are spectral in
/// τ and Chebyshev in s.
pub fn closedness(sc: &SeparableChart, which: KappaOrder) -> Result<f64> {
    let (a, b) = (&sc.first, &sc.second);
    let alpha = match which {
        KappaOrder::Leading => 0,
        KappaOrder::Next => 1,
    };
    let order = if alpha == 0 { 3 } else { 5 };
    let (n1, m1, n2, m2) = (a.n_tau(), a.n_levels(), b.n_tau(), b.n_levels());
    // w[c][i1][j1][i2][j2] flattened, c over PAIRS in (τ1, s1, τ2, s2)
    let idx = |i1: usize, j1: usize, i2: usize, j2: usize| ((i1 * n1 + j1) * m2 + i2) * n2 + j2;
    let total = m1 * n1 * m2 * n2;
    let comps: Vec<[f64; 6]> = (0..total)
        .into_par_iter()
        .map(|k| -> Result<[f64; 6]> {
            let j2 = k % n2;
            let i2 = (k / n2) % m2;
            let j1 = (k / (n2 * m2)) % n1;
            let i1 = k / (n2 * m2 * n1);
            let pj = sc.jets(i1, j1, i2, j2, order)?;
            let x = [&pj.tau[0], &pj.s[0], &pj.tau[1], &pj.s[1]];
            // ϰ = ½⟨⟨s,s⟩⟩dτ∧dτ + ½⟨⟨τ,τ⟩⟩ds∧ds + ⟨⟨s_j,τ^l⟩⟩ds_l∧dτ^j
            let mut w = [0.0; 6];
            // coordinate slots: τ1=0, s1=1, τ2=2, s2=3; conjugates: s ↔ τ
            let conj = |c: usize| if c.is_multiple_of(2) { c + 1 } else { c - 1 };
            for (n, &(p, q)) in PAIRS.iter().enumerate() {
                // the dx^p∧dx^q coefficient pairs the conjugates of p and q, with sign from ω = ds∧dτ
                let sp = if p % 2 == 0 { -1.0 } else { 1.0 };
                let sq = if q % 2 == 0 { -1.0 } else { 1.0 };
                w[n] = sp * sq * dd_bracket(x[conj(p)], x[conj(q)], alpha)?;
            }
            Ok(w)
        })
        .collect::<Result<_>>()?;
    let f1 = Fourier::new(n1);
    let f2 = Fourier::new(n2);
    let cheb_diff = |chart: &AAChart, vals: &[f64]| -> Vec<f64> {
        let d = chart.fit_levels(vals).derivative();
        chart.s_values().iter().map(|&s| d.eval(s)).collect()
    };
    // ∂_axis of component c, on the whole grid
    let deriv = |c: usize, axis: usize| -> Vec<f64> {
        let mut out = vec![0.0; total];
        match axis {
            0 => {
                for i1 in 0..m1 {
                    for i2 in 0..m2 {
                        for j2 in 0..n2 {
                            let line: Vec<f64> = (0..n1).map(|j1| comps[idx(i1, j1, i2, j2)][c]).collect();
                            for (j1, v) in f1.derivative(&line, 1).into_iter().enumerate() {
                                out[idx(i1, j1, i2, j2)] = v;
                            }
                        }
                    }
                }
            }
            1 => {
                for j1 in 0..n1 {
                    for i2 in 0..m2 {
                        for j2 in 0..n2 {
                            let line: Vec<f64> = (0..m1).map(|i1| comps[idx(i1, j1, i2, j2)][c]).collect();
                            for (i1, v) in cheb_diff(a, &line).into_iter().enumerate() {
                                out[idx(i1, j1, i2, j2)] = v;
                            }
                        }
                    }
                }
            }
            2 => {
                for i1 in 0..m1 {
                    for j1 in 0..n1 {
                        for i2 in 0..m2 {
                            let line: Vec<f64> = (0..n2).map(|j2| comps[idx(i1, j1, i2, j2)][c]).collect();
                            for (j2, v) in f2.derivative(&line, 1).into_iter().enumerate() {
                                out[idx(i1, j1, i2, j2)] = v;
                            }
                        }
                    }
                }
            }
            _ => {
                for i1 in 0..m1 {
                    for j1 in 0..n1 {
                        for j2 in 0..n2 {
                            let line: Vec<f64> = (0..m2).map(|i2| comps[idx(i1, j1, i2, j2)][c]).collect();
                            for (i2, v) in cheb_diff(b, &line).into_iter().enumerate() {
                                out[idx(i1, j1, i2, j2)] = v;
                            }
                        }
                    }
                }
            }
        }
        out
    };
    let mut worst = 0.0f64;
    for (x, y, z) in [(0, 1, 2), (0, 1, 3), (0, 2, 3), (1, 2, 3)] {
        let mut sum = vec![0.0; total];
        for (p, q, r) in [(x, y, z), (y, z, x), (z, x, y)] {
            let (c, sign) = pair_index(q, r);
            for (o, v) in sum.iter_mut().zip(deriv(c, p)) {
                *o += sign * v;
            }
        }
        worst = sum.iter().fold(worst, |m, v| m.max(v.abs()));
    }
    Ok(worst)
}

/// CSV block for a grid table, same layout as chart dumps.
pub fn grid_block(name: &str, chart: &AAChart, values: &GridFn) -> String {
    use std::fmt::Write;
    let mut out = String::new();
    let _ = writeln!(out, "[{name}]");
    let _ = writeln!(out, "level,s,tau,value");
    let taus = chart.tau_grid();
    for (i, row) in values.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            let _ = writeln!(out, "{i},{:.16e},{:.16e},{:.16e}", chart.levels[i].s, taus[j], v);
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn hseries_horner() {
        let h = HSeries::new(vec![1.0, 2.0, 3.0]);
        assert_eq!(h.order(), 2);
        assert!((h.eval(0.5) - (1.0 + 2.0 * 0.25 + 3.0 * 0.0625)).abs() < 1e-15);
    }

    #[test]
    fn pair_signs() {
        assert_eq!(pair_index(1, 0), (0, -1.0));
        assert_eq!(pair_index(2, 3), (5, 1.0));
    }
}
