//! ℏ-equidistant quantization of the quantum actions, comparison with reference
//! levels, and log-log convergence fits.

use rayon::prelude::*;
use serde::Serialize;
use sha2::{Digest, Sha256};

use crate::chart::{build_chart, AAChart, ChartOptions};
use crate::error::{Error, Result};
use crate::expr::{Expr, ParamEnv, Var};
use crate::numerics::{linear_fit, newton_bisect, t_quantile_975};
use crate::oracle::levels_below;
use crate::qgeom::{corrections, Corrections};

/// How the offset μ in `s = μ + ℏN` is chosen.
#[derive(Clone, Copy, Debug, PartialEq, Serialize)]
pub enum MuPolicy {
    /// `μ = ℏm/4` from the Maslov index.
    Maslov,
    /// `μ = ℏm/4 + c2 ℏ²`, with `c2` fitted to a reference ground state. Not part of the theory.
    Calibrated { c2: f64 },
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuantizationConfig {
    pub hbar: f64,
    /// Inclusive range of N; `None` takes every N whose action lies in the chart.
    pub n_range: Option<(usize, usize)>,
    pub mu: MuPolicy,
    /// 0, 2 or 4: highest power of ℏ kept in `f^ℏ`.
    pub order: usize,
}

impl QuantizationConfig {
    pub fn new(hbar: f64, order: usize) -> Self {
        QuantizationConfig { hbar, n_range: None, mu: MuPolicy::Maslov, order }
    }

    pub fn mu(&self, maslov: i32) -> f64 {
        let base = self.hbar * maslov as f64 / 4.0;
        match self.mu {
            MuPolicy::Maslov => base,
            MuPolicy::Calibrated { c2 } => base + c2 * self.hbar * self.hbar,
        }
    }
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumRow {
    pub n: usize,
    pub s: f64,
    /// `energies[k]` keeps terms through ℏ^{2k}.
    pub energies: Vec<f64>,
    /// Root of `s^ℏ(E) = μ + ℏN` at the highest order.
    pub implicit: f64,
    pub oracle: Option<f64>,
    pub errors: Vec<f64>,
    pub flagged: bool,
}

#[derive(Clone, Debug, Serialize)]
pub struct SpectrumTable {
    pub system: String,
    pub hbar: f64,
    pub mu: f64,
    pub order: usize,
    pub chart_hash: String,
    pub rows: Vec<SpectrumRow>,
}

/// Short digest identifying a chart's grid and level data.
pub fn chart_hash(chart: &AAChart) -> String {
    let mut h = Sha256::new();
    h.update(format!("{:?}", chart.options).as_bytes());
    h.update(chart.potential.h0.render().as_bytes());
    for lv in &chart.levels {
        h.update(lv.s.to_le_bytes());
        h.update(lv.energy.to_le_bytes());
    }
    h.finalize().iter().take(8).map(|b| format!("{b:02x}")).collect()
}

fn check_order(order: usize, corr: &Corrections) -> Result<()> {
    match order {
        0 | 2 => Ok(()),
        4 if corr.step1.is_some() => Ok(()),
        4 => Err(Error::Config("order 4 needs the induction step".into())),
        _ => Err(Error::Config(format!("order must be 0, 2 or 4, got {order}"))),
    }
}

/// Coefficients of `f^ℏ(s) = f(s) + ℏ² g(s) + ℏ⁴ g¹(s)` up to the requested order.
fn corrections_at(corr: &Corrections, order: usize, s: f64) -> Vec<f64> {
    let mut c = Vec::new();
    if order >= 2 {
        c.push(corr.action.g_at(s));
    }
    if order >= 4 {
        c.push(corr.step1.as_ref().map_or(0.0, |st| st.g1_at(s)));
    }
    c
}

/// Quantum action `s^ℏ(E)`: the root of `f(s) + ℏ²g(s) + … = E`, computed from the
/// quadrature action `S(E)` as the fixed point `s = S(E − ℏ²g(s) − …)`.
pub fn quantum_action(chart: &AAChart, corr: &Corrections, order: usize, hbar: f64, e: f64) -> Result<f64> {
    let pot = &chart.potential;
    let h2 = hbar * hbar;
    let shift = |s: f64| corrections_at(corr, order, s).iter().rev().fold(0.0, |acc, c| acc * h2 + c) * h2;
    let mut s = pot.action(e)?;
    for _ in 0..100 {
        let next = pot.action(e - shift(s))?;
        if (next - s).abs() <= 1e-15 * (1.0 + s.abs()) {
            return Ok(next);
        }
        s = next;
    }
    Err(Error::RootFinding(format!("quantum action at E = {e} did not settle")))
}

/// Quantization rule `E[N] = f^ℏ(μ + ℏN)`, with the implicit form solved independently.
pub fn quantize(system: &str, chart: &AAChart, corr: &Corrections, cfg: &QuantizationConfig) -> Result<SpectrumTable> {
    check_order(cfg.order, corr)?;
    if !(cfg.hbar > 0.0) {
        return Err(Error::Config(format!("ℏ must be positive, got {}", cfg.hbar)));
    }
    let mu = cfg.mu(chart.maslov);
    let (s_lo, s_hi) = chart.s_window;
    let ns: Vec<usize> = match cfg.n_range {
        Some((a, b)) => {
            for n in [a, b] {
                let s = mu + cfg.hbar * n as f64;
                if s < s_lo || s > s_hi {
                    return Err(Error::Window(format!("N = {n} gives s = {s}, outside [{s_lo}, {s_hi}]")));
                }
            }
            (a..=b).collect()
        }
        None => (0..).take_while(|&n| mu + cfg.hbar * n as f64 <= s_hi).filter(|&n| mu + cfg.hbar * n as f64 >= s_lo).collect(),
    };
    if ns.is_empty() {
        return Err(Error::Window("no quantized action inside the chart".into()));
    }
    let h2 = cfg.hbar * cfg.hbar;
    let rows: Vec<SpectrumRow> = ns
        .par_iter()
        .map(|&n| {
            let s = mu + cfg.hbar * n as f64;
            let e0 = chart.energy(s)?;
            let mut energies = vec![e0];
            let mut pw = 1.0;
            for c in corrections_at(corr, cfg.order, s) {
                pw *= h2;
                energies.push(energies.last().unwrap() + pw * c);
            }
            let top = *energies.last().unwrap();
            let implicit = solve_implicit(chart, corr, cfg, s, top)?;
            if (implicit - top).abs() > 1e-9 * top.abs().max(1e-3) {
                return Err(Error::Check(format!("N = {n}: closed form {top} and implicit rule {implicit} disagree")));
            }
            Ok(SpectrumRow { n, s, energies, implicit, oracle: None, errors: Vec::new(), flagged: false })
        })
        .collect::<Result<_>>()?;
    for w in rows.windows(2) {
        if w[1].energies.last() <= w[0].energies.last() {
            return Err(Error::Check(format!("E[N] not increasing at N = {}", w[1].n)));
        }
    }
    Ok(SpectrumTable { system: system.to_string(), hbar: cfg.hbar, mu, order: cfg.order, chart_hash: chart_hash(chart), rows })
}

fn solve_implicit(chart: &AAChart, corr: &Corrections, cfg: &QuantizationConfig, target: f64, guess: f64) -> Result<f64> {
    let pot = &chart.potential;
    let g = |e: f64| -> (f64, f64) {
        match (quantum_action(chart, corr, cfg.order, cfg.hbar, e), pot.period(e)) {
            (Ok(s), Ok(t)) => (s - target, t / (2.0 * std::f64::consts::PI)),
            _ => (f64::NAN, f64::NAN),
        }
    };
    let mut width = 1e-6 + 1e-6 * guess.abs();
    for _ in 0..30 {
        let lo = (guess - width).max(pot.v_min + 1e-300);
        let hi = guess + width;
        if let Some(e) = newton_bisect(&g, lo, hi, 1e-15) {
            return Ok(e);
        }
        width *= 4.0;
    }
    Err(Error::RootFinding(format!("implicit rule for s = {target} not bracketed")))
}

/// Per-order error summary against reference levels.
#[derive(Clone, Debug, Serialize)]
pub struct CompareReport {
    pub max: Vec<f64>,
    pub median: Vec<f64>,
    pub flagged: usize,
}

/// Distance to the reference spectrum by nearest-level matching; fills the table's oracle columns.
pub fn compare(st: &mut SpectrumTable, oracle_levels: &[f64]) -> Result<CompareReport> {
    if oracle_levels.is_empty() {
        return Err(Error::Config("no reference levels".into()));
    }
    let mut sorted = oracle_levels.to_vec();
    sorted.sort_by(f64::total_cmp);
    let norders = st.rows.first().map_or(0, |r| r.energies.len());
    let mut flagged = 0;
    for row in &mut st.rows {
        let nearest = |e: f64| -> (usize, f64) {
            let k = sorted.partition_point(|&x| x < e);
            let cands = [k.checked_sub(1), (k < sorted.len()).then_some(k)];
            cands.iter().flatten().map(|&i| (i, (sorted[i] - e).abs())).min_by(|a, b| a.1.total_cmp(&b.1)).unwrap()
        };
        row.errors = row.energies.iter().map(|&e| nearest(e).1).collect();
        let top = *row.energies.last().unwrap();
        let (k, err) = nearest(top);
        row.oracle = Some(sorted[k]);
        let spacing = [k.checked_sub(1).map(|i| sorted[k] - sorted[i]), sorted.get(k + 1).map(|x| x - sorted[k])]
            .iter()
            .flatten()
            .copied()
            .fold(f64::INFINITY, f64::min);
        // ambiguous when the neighbours are closer than twice the worst error of any order
        let worst = row.errors.iter().copied().fold(err, f64::max);
        row.flagged = spacing < 2.0 * worst;
        if row.flagged {
            flagged += 1;
        }
    }
    let mut max = Vec::new();
    let mut median = Vec::new();
    for k in 0..norders {
        let mut e: Vec<f64> = st.rows.iter().map(|r| r.errors[k]).collect();
        e.sort_by(f64::total_cmp);
        max.push(*e.last().unwrap_or(&f64::NAN));
        median.push(e.get(e.len() / 2).copied().unwrap_or(f64::NAN));
    }
    Ok(CompareReport { max, median, flagged })
}

/// Rows of one table used for slope fits when the band follows the level index:
/// drop the lowest 2 and the top 20%.
pub fn central_band(rows: &[SpectrumRow]) -> &[SpectrumRow] {
    let n = rows.len();
    let top = n - (n as f64 * 0.2).ceil() as usize;
    if top <= 2 {
        &rows[0..0]
    } else {
        &rows[2..top]
    }
}

/// Action band shared by all tables: from the third level of the coarsest table
/// up to 80% of the chart window.
pub fn fixed_band(tables: &[SpectrumTable], s_window: (f64, f64)) -> (f64, f64) {
    let lo = tables.iter().filter_map(|t| t.rows.get(2).map(|r| r.s)).fold(s_window.0, f64::max);
    (lo, s_window.0 + 0.8 * (s_window.1 - s_window.0))
}

impl SpectrumTable {
    /// CSV with '#' metadata lines; floats carry 17 significant digits.
    pub fn to_csv(&self) -> String {
        use std::fmt::Write;
        let mut out = String::new();
        let _ = writeln!(out, "# system={}", self.system);
        let _ = writeln!(out, "# hbar={:.16e}", self.hbar);
        let _ = writeln!(out, "# mu={:.16e}", self.mu);
        let _ = writeln!(out, "# order={}", self.order);
        let _ = writeln!(out, "# chart={}", self.chart_hash);
        let k = self.rows.first().map_or(0, |r| r.energies.len());
        let mut head = vec!["N".to_string(), "s".to_string()];
        head.extend((0..k).map(|i| format!("E{}", 2 * i)));
        head.push("oracle".into());
        head.extend((0..k).map(|i| format!("err{}", 2 * i)));
        head.push("flagged".into());
        let _ = writeln!(out, "{}", head.join(","));
        for r in &self.rows {
            let mut cells = vec![r.n.to_string(), fmt17(r.s)];
            cells.extend(r.energies.iter().map(|&e| fmt17(e)));
            cells.push(r.oracle.map_or(String::new(), fmt17));
            if r.errors.is_empty() {
                cells.extend((0..k).map(|_| String::new()));
            } else {
                cells.extend(r.errors.iter().map(|&e| fmt17(e)));
            }
            cells.push((r.flagged as u8).to_string());
            let _ = writeln!(out, "{}", cells.join(","));
        }
        out
    }
}

/// Seventeen significant digits.
pub fn fmt17(x: f64) -> String {
    format!("{x:.16e}")
}

/// A one-degree-of-freedom system `H = p²/2 + V(q) + ℏ²M`.
#[derive(Clone, Debug)]
pub struct System {
    pub name: String,
    pub h0: Expr,
    pub m: Option<Expr>,
    pub env: ParamEnv,
    pub window: (f64, f64),
    pub chart: ChartOptions,
    /// Period of `V`, if any; reference levels are then computed on the circle.
    pub period: Option<f64>,
}

impl System {
    pub fn build(&self, order: usize) -> Result<(AAChart, Corrections)> {
        let mut opts = self.chart.clone();
        if order >= 4 {
            opts.jet_order = opts.jet_order.max(6);
        }
        let chart = build_chart(&self.h0, &self.env, self.window, &opts)?;
        let corr = corrections(&chart, self.m.as_ref(), &self.env, 0.0, order >= 4)?;
        Ok((chart, corr))
    }

    /// Reference levels below the top of the window; `M` must depend on q only.
    pub fn oracle_levels(&self, chart: &AAChart, hbar: f64) -> Result<Vec<f64>> {
        let pot = &chart.potential;
        let e_max = chart.energy_window.1;
        if let Some(period) = self.period {
            let m = self.m.clone();
            if m.as_ref().is_some_and(|m| m.variables().iter().any(|v| !matches!(v, Var::Q(0)))) {
                return Err(Error::Config("reference levels need M = M(q)".into()));
            }
            let v = |q: f64| pot.v(q).unwrap_or(f64::NAN) + m.as_ref().map_or(0.0, |m| hbar * hbar * m.eval(&[q, 0.0], &self.env).unwrap_or(f64::NAN));
            return crate::oracle::periodic_levels(&v, hbar, period, e_max);
        }
        match &self.m {
            None => Ok(levels_below(pot, hbar, e_max)?.levels),
            Some(m) => {
                if m.variables().iter().any(|v| !matches!(v, Var::Q(0))) {
                    return Err(Error::Config("reference levels need M = M(q)".into()));
                }
                let v = |q: f64| pot.v(q).unwrap_or(f64::NAN) + hbar * hbar * m.eval(&[q, 0.0], &self.env).unwrap_or(f64::NAN);
                let grid = crate::oracle::Grid1D::for_energy(pot, e_max + hbar * hbar * 10.0, hbar)?;
                let count = ((pot.action(e_max)? / hbar) as usize + 3).min(grid.n / 2);
                let mut lv = crate::oracle::eigenlevels(&v, hbar, grid, count)?.levels;
                lv.retain(|&e| e <= e_max + 1.0 * hbar);
                Ok(lv)
            }
        }
    }
}

/// Slope fit for one order.
#[derive(Clone, Debug, Serialize)]
pub struct SlopeFit {
    pub order: usize,
    pub slope: f64,
    pub stderr: f64,
    /// Half-width of the 95% interval.
    pub half_width: f64,
    /// (ℏ, max error over the fixed action band)
    pub points: Vec<(f64, f64)>,
    /// Same fit with the band following the level index (lowest 2 and top 20% dropped per ℏ).
    pub index_band_slope: f64,
}

#[derive(Clone, Debug, Serialize)]
pub struct SlopeReport {
    pub system: String,
    /// Action band used for the main fit.
    pub band: (f64, f64),
    pub fits: Vec<SlopeFit>,
    pub tables: Vec<SpectrumTable>,
}

fn fit_points(points: &[(f64, f64)]) -> (f64, f64) {
    let x: Vec<f64> = points.iter().map(|p| p.0.ln()).collect();
    let y: Vec<f64> = points.iter().map(|p| p.1.max(1e-300).ln()).collect();
    let (_, slope, se) = linear_fit(&x, &y);
    (slope, se)
}

/// Error-vs-ℏ slopes per order over a central band of levels.
pub fn convergence_study(system: &System, hbars: &[f64], order: usize) -> Result<SlopeReport> {
    if hbars.len() < 5 {
        return Err(Error::Config(format!("need at least 5 values of ℏ, got {}", hbars.len())));
    }
    let lo = hbars.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = hbars.iter().copied().fold(0.0, f64::max);
    if hi < 10.0 * lo {
        return Err(Error::Config(format!("ℏ values span {:.2} decades, need at least 1", (hi / lo).log10())));
    }
    let (chart, corr) = system.build(order)?;
    let tables: Vec<SpectrumTable> = hbars
        .par_iter()
        .map(|&h| {
            let mut t = quantize(&system.name, &chart, &corr, &QuantizationConfig::new(h, order))?;
            let reference = system.oracle_levels(&chart, h)?;
            compare(&mut t, &reference)?;
            Ok(t)
        })
        .collect::<Result<_>>()?;
    let band = fixed_band(&tables, chart.s_window);
    let mut fits = Vec::new();
    for k in 0..=order / 2 {
        let max_err = |rows: &mut dyn Iterator<Item = &SpectrumRow>| rows.map(|r| r.errors[k]).fold(f64::NAN, f64::max);
        let points: Vec<(f64, f64)> = tables
            .iter()
            .map(|t| (t.hbar, max_err(&mut t.rows.iter().filter(|r| r.s >= band.0 && r.s <= band.1))))
            .filter(|p| p.1.is_finite())
            .collect();
        let moving: Vec<(f64, f64)> = tables
            .iter()
            .map(|t| (t.hbar, max_err(&mut central_band(&t.rows).iter())))
            .filter(|p| p.1.is_finite())
            .collect();
        if points.len() < 3 {
            return Err(Error::Config("too few ℏ values leave levels in the central band".into()));
        }
        let (slope, se) = fit_points(&points);
        let index_band_slope = if moving.len() >= 3 { fit_points(&moving).0 } else { f64::NAN };
        fits.push(SlopeFit { order: 2 * k, slope, stderr: se, half_width: t_quantile_975(points.len() - 2) * se, points, index_band_slope });
    }
    Ok(SlopeReport { system: system.name.clone(), band, fits, tables })
}

/// Calibrated μ (not part of the theory): `c2` such that `E[0]` reproduces a given ground level.
pub fn calibrate_mu(chart: &AAChart, corr: &Corrections, order: usize, hbar: f64, ground: f64) -> Result<MuPolicy> {
    let s0 = quantum_action(chart, corr, order, hbar, ground)?;
    Ok(MuPolicy::Calibrated { c2: (s0 - hbar * chart.maslov as f64 / 4.0) / (hbar * hbar) })
}
