//! Classical action-angle charts for one degree of freedom and their separable products.
//!
//! A chart is a set of action levels (Chebyshev nodes in s) with a uniform angle grid.
//! Along each level the trajectory is carried as a truncated Taylor series in δs, so
//! s-derivatives come out of the integration instead of finite differences.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::expr::{parse, Expr, JetPlan, ParamEnv, Var};
use crate::jets::{compose, factorial, Jet, MapJet};
use crate::moyal::poisson;
use crate::numerics::{chebyshev_nodes, gauss_legendre, newton_bisect, rk8_step, Chebyshev, Fourier};

#[derive(Clone, Debug, PartialEq)]
pub struct ChartOptions {
    pub n_tau: usize,
    pub n_levels: usize,
    /// Order of the (τ,s) ↔ (q,p) jets.
    pub jet_order: usize,
    /// RK8 substeps per τ grid step.
    pub substeps: usize,
    /// Seed for locating the bottom of the well.
    pub q_center: f64,
    pub contour_points: usize,
}

impl Default for ChartOptions {
    fn default() -> Self {
        ChartOptions { n_tau: 256, n_levels: 64, jet_order: 5, substeps: 4, q_center: 0.0, contour_points: 512 }
    }
}

/// `H = p²/2 + V(q)` with the bottom of the well located.
#[derive(Clone, Debug)]
pub struct Potential {
    pub h0: Expr,
    pub env: ParamEnv,
    v: Expr,
    dv: Expr,
    d2v: Expr,
    pub q_min: f64,
    pub v_min: f64,
}

fn q_only(q: f64) -> impl Fn(Var) -> Option<f64> {
    move |v| if v == Var::Q(0) { Some(q) } else { None }
}

impl Potential {
    pub fn new(h0: &Expr, env: &ParamEnv, q_center: f64) -> Result<Potential> {
        if h0.dof() != 1 || h0.variables().iter().any(|v| matches!(v, Var::E(_))) {
            return Err(Error::Config("chart Hamiltonian must depend on q1, p1 only".into()));
        }
        let h = h0.bind(env);
        if let Some(p) = h.params().first() {
            return Err(Error::UnboundParameter(p.clone()));
        }
        let mut subs = BTreeMap::new();
        subs.insert(Var::P(0), Expr::constant(0.0));
        let v = h.substitute(&subs);
        // must be p²/2 + V(q)
        for &(q, p) in &[(0.3, 0.7), (-0.4, -1.1), (0.05, 2.0)] {
            let lhs = h.eval(&[q, p], &ParamEnv::new())?;
            let rhs = 0.5 * p * p + v.eval_with(&q_only(q), &ParamEnv::new())?;
            if (lhs - rhs).abs() > 1e-12 * (1.0 + lhs.abs()) {
                return Err(Error::Config(format!("`{}` is not of the form p1^2/2 + V(q1)", h0.render())));
            }
        }
        let dv = v.diff(Var::Q(0));
        let d2v = dv.diff(Var::Q(0));
        let mut pot = Potential { h0: h0.clone(), env: env.clone(), v, dv, d2v, q_min: q_center, v_min: 0.0 };
        let mut q = q_center;
        for _ in 0..100 {
            let step = pot.dv(q)? / pot.d2v(q)?;
            q -= step;
            if step.abs() < 1e-15 * (1.0 + q.abs()) {
                break;
            }
        }
        if !(pot.d2v(q)? > 0.0) || pot.dv(q)?.abs() > 1e-10 {
            return Err(Error::Config("no nondegenerate minimum of V near q_center".into()));
        }
        pot.q_min = q;
        pot.v_min = pot.v(q)?;
        Ok(pot)
    }

    pub fn v(&self, q: f64) -> Result<f64> {
        self.v.eval_with(&q_only(q), &ParamEnv::new())
    }

    pub fn dv(&self, q: f64) -> Result<f64> {
        self.dv.eval_with(&q_only(q), &ParamEnv::new())
    }

    pub fn d2v(&self, q: f64) -> Result<f64> {
        self.d2v.eval_with(&q_only(q), &ParamEnv::new())
    }

    pub fn v_expr(&self) -> &Expr {
        &self.v
    }

    fn v_complex(&self, z: Complex64) -> Result<Complex64> {
        self.v.eval_complex(&|v| if v == Var::Q(0) { Some(z) } else { None }, &ParamEnv::new())
    }

    /// Classical turning points `q₋ < q₊` at energy `e`; rejects non-librational levels.
    pub fn turning_points(&self, e: f64) -> Result<(f64, f64)> {
        let de = e - self.v_min;
        if de <= 0.0 {
            return Err(Error::TurningPoints { energy: e, found: 0 });
        }
        let a0 = (2.0 * de / self.d2v(self.q_min)?).sqrt();
        let mut found = 0;
        let mut out = [0.0; 2];
        for (side, dir) in [-1.0f64, 1.0].iter().enumerate() {
            let mut h = a0 / 16.0;
            let mut lo = self.q_min;
            let mut hit = None;
            for _ in 0..4000 {
                let hi = lo + dir * h;
                let vh = self.v(hi)?;
                if vh >= e {
                    hit = Some(hi);
                    break;
                }
                // V must keep rising while still below the level
                if dir * self.dv(hi)? <= 0.0 {
                    break;
                }
                lo = hi;
                h *= 1.05;
                if (hi - self.q_min).abs() > 1e4 * (1.0 + a0) {
                    break;
                }
            }
            let Some(mut hi) = hit else { continue };
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if mid == lo || mid == hi {
                    break;
                }
                if self.v(mid)? >= e {
                    hi = mid;
                } else {
                    lo = mid;
                }
            }
            // one Newton polish from the bracket
            let mut q = 0.5 * (lo + hi);
            let d = self.dv(q)?;
            if d != 0.0 {
                let next = q - (self.v(q)? - e) / d;
                if (next - q).abs() <= (hi - lo).abs() + 1e-15 {
                    q = next;
                }
            }
            out[side] = q;
            found += 1;
        }
        if found != 2 {
            return Err(Error::TurningPoints { energy: e, found });
        }
        Ok((out[0], out[1]))
    }

    /// Relative rounding floor of `E − V` at energy `e`.
    fn noise(&self, e: f64) -> f64 {
        (1e-14f64).max(20.0 * f64::EPSILON * (e.abs() + self.v_min.abs()) / (e - self.v_min))
    }

    fn gl_adaptive(&self, f: &dyn Fn(f64) -> Result<f64>, tol: f64, what: &str) -> Result<f64> {
        let mut prev: Option<f64> = None;
        for n in [32usize, 64, 128, 256, 512] {
            let (x, w) = gauss_legendre(n);
            let mut s = 0.0;
            for (xi, wi) in x.iter().zip(&w) {
                s += wi * f(0.5 * PI * xi)?;
            }
            let s = 0.5 * PI * s;
            if let Some(p) = prev {
                if (s - p).abs() <= tol * s.abs().max(1e-300) + 1e-300 {
                    return Ok(s);
                }
            }
            prev = Some(s);
        }
        Err(Error::Quadrature(what.into()))
    }

    /// `2(E − V(c + w sinθ))` without cancellation near the turning points.
    ///
    /// The float turning points miss the true ones by a sub-ulp `ε`; near the ends the
    /// substitution is taken over the true interval so the integrand stays analytic.
    fn kinetic(&self, e: f64) -> Result<(f64, f64, impl Fn(f64) -> Result<f64> + '_)> {
        let (qm, qp) = self.turning_points(e)?;
        let (c, w) = (0.5 * (qm + qp), 0.5 * (qp - qm));
        let plan = JetPlan::new(&self.v, &[Var::Q(0)], 8);
        let ends = [plan.eval(&[qm], &ParamEnv::new())?, plan.eval(&[qp], &ParamEnv::new())?];
        let eps = [(e - ends[0].coeffs()[0]) / ends[0].coeffs()[1], (e - ends[1].coeffs()[0]) / ends[1].coeffs()[1]];
        let wcorr = 0.5 * (eps[1] - eps[0]);
        let f = move |th: f64| -> Result<f64> {
            let (sn, cs) = th.sin_cos();
            let frac = cs * cs / (1.0 + sn.abs());
            if frac < 0.02 {
                // distance to the nearer true turning point
                let d = w * frac + wcorr * frac;
                let (jet, delta) = if sn < 0.0 { (&ends[0], eps[0] + d) } else { (&ends[1], eps[1] - d) };
                let c = jet.coeffs();
                let mut tail = 0.0;
                for k in (1..c.len()).rev() {
                    tail = (tail + c[k]) * delta;
                }
                return Ok(2.0 * ((e - c[0]) - tail));
            }
            Ok(2.0 * (e - self.v(c + w * sn)?))
        };
        Ok((c, w, f))
    }

    /// `S(E) = (1/π)∫ √(2(E−V)) dq` between the turning points.
    pub fn action(&self, e: f64) -> Result<f64> {
        if e <= self.v_min {
            return Ok(0.0);
        }
        let (_, w, k) = self.kinetic(e)?;
        let f = |th: f64| -> Result<f64> { Ok(k(th)?.max(0.0).sqrt() * w * th.cos()) };
        Ok(self.gl_adaptive(&f, self.noise(e), "action integral")? / PI)
    }

    /// Period of the orbit at energy `e`.
    pub fn period(&self, e: f64) -> Result<f64> {
        let (_, w, k) = self.kinetic(e)?;
        let f = |th: f64| -> Result<f64> {
            let kv = k(th)?;
            if kv <= 0.0 {
                return Err(Error::Quadrature("period integrand at a turning point".into()));
            }
            Ok(w * th.cos() / kv.sqrt())
        };
        Ok(2.0 * self.gl_adaptive(&f, self.noise(e), "period integral")?)
    }

    /// `d^k S/dE^k` for `k = 0..=kmax` by a contour integral around the classical cut.
    pub fn action_derivs(&self, e: f64, kmax: usize, npts: usize) -> Result<Vec<f64>> {
        let s_ref = self.action(e)?;
        let (qm, qp) = self.turning_points(e)?;
        let (c, w) = (0.5 * (qm + qp), 0.5 * (qp - qm));
        let coef: Vec<f64> = (0..=kmax)
            .map(|k| (1..k).fold(1.0, |acc, j| acc * -((2 * j - 1) as f64)))
            .collect();
        let integrate = |eta: f64, n: usize| -> Result<(Vec<Complex64>, Vec<f64>, bool)> {
            let mut first: Option<Complex64> = None;
            let mut sums = vec![Complex64::new(0.0, 0.0); kmax + 1];
            let mut mags = vec![0.0; kmax + 1];
            let mut prev: Option<Complex64> = None;
            for i in 0..n {
                let th = 2.0 * PI * i as f64 / n as f64;
                let zeta = Complex64::new(eta, th);
                let z = c + w * zeta.cosh();
                let dz = w * zeta.sinh() * Complex64::new(0.0, 1.0);
                let u = 2.0 * (e - self.v_complex(z)?);
                let mut r = u.sqrt();
            if let Some(p) = prev {
                    if (r - p).norm() > (r + p).norm() {
                        r = -r;
                    }
                }
                prev = Some(r);
                first.get_or_insert(r);
                let mut pw = r;
                // pw = u^{1/2 - k}
                for k in 0..=kmax {
                    let t = coef[k] * pw * dz;
                    sums[k] += t;
                    mags[k] += t.norm();
                    pw /= u;
                }
            }
            let h = 2.0 * PI / n as f64;
            // the branch must close up after one turn
            let closes = match (first, prev) {
                (Some(a), Some(b)) => (a - b).norm() < (a + b).norm(),
                _ => false,
            };
            Ok((sums.into_iter().map(|s| s * h).collect(), mags.into_iter().map(|m| m * h).collect(), closes))
        };
        // Largest ellipse that still encloses only the classical cut: far from the
        // cut the integrand is tame, which matters for small E and high k.
        let mut radius = 4.0 * w.max(1.0);
        while radius > w * 1.05 {
            let eta = (radius / w).acosh();
            radius /= std::f64::consts::SQRT_2;
            let mut n = npts.max(64);
            while n <= 8192 {
                let (full, mags, closes) = integrate(eta, n)?;
                if !closes {
                    break;
                }
                let (half, _, _) = integrate(eta, n / 2)?;
                let ok = full.iter().zip(&half).zip(&mags).all(|((a, b), m)| (a - b).norm() <= 1e-13 * m);
                if ok {
                    let ratio = full[0].re / (2.0 * PI * s_ref);
                    if (ratio.abs() - 1.0).abs() < 1e-10 && full[0].im.abs() < 1e-10 * full[0].norm() {
                        let sign = ratio.signum();
                        let mut out: Vec<f64> = full.iter().map(|z| z.re / (2.0 * PI * sign)).collect();
                        out[0] = s_ref;
                        return Ok(out);
                    }
                    break;
                }
                n *= 2;
            }
        }
        Err(Error::Quadrature(format!("contour derivatives of S at E = {e}")))
    }

    /// Solve `S(E) = s`.
    pub fn energy_of_action(&self, s: f64) -> Result<f64> {
        if s <= 0.0 {
            return Ok(self.v_min);
        }
        let omega0 = self.d2v(self.q_min)?.sqrt();
        let mut lo = self.v_min;
        let mut hi = self.v_min + 0.5 * s * omega0;
        let mut grow = 1.5;
        for _ in 0..200 {
            match self.action(hi) {
                Ok(a) if a > s => break,
                Ok(_) => {
                    lo = hi;
                    hi = self.v_min + grow * (hi - self.v_min);
                }
                // overshot the librational range: back off
                Err(_) => {
                    hi = 0.5 * (lo + hi);
                    grow = 1.0 + 0.5 * (grow - 1.0);
                }
            }
        }
        let g = |e: f64| -> (f64, f64) {
            if e <= self.v_min {
                return (-s, f64::NAN);
            }
            match (self.action(e), self.period(e)) {
                (Ok(a), Ok(t)) => (a - s, t / (2.0 * PI)),
                _ => (f64::NAN, f64::NAN),
            }
        };
        newton_bisect(&g, lo, hi, 1e-15).ok_or_else(|| Error::RootFinding(format!("S(E) = {s} not bracketed")))
    }

    /// Derivatives `f^(k)(s)`, `k = 0..=kmax`, of the inverse function `E = f(s)`.
    pub fn f_derivs(&self, s: f64, kmax: usize, npts: usize) -> Result<(f64, Vec<f64>, Vec<f64>)> {
        let e = self.energy_of_action(s)?;
        let sd = self.action_derivs(e, kmax, npts)?;
        let fd = invert_taylor(&sd)?;
        Ok((e, sd, fd))
    }
}

/// Given derivatives `S^(k)(E₀)`, return derivatives of the inverse function at `S(E₀)`.
pub fn invert_taylor(d: &[f64]) -> Result<Vec<f64>> {
    let order = d.len() - 1;
    if order == 0 {
        return Ok(vec![0.0]);
    }
    let coeffs: Vec<f64> = d.iter().enumerate().map(|(k, v)| v / factorial(k)).collect();
    let j = Jet::univariate(0.0, &coeffs);
    // the base of `j` is 0 in δE; its value is S(E₀)
    let inv = MapJet::new(vec![j])?.invert()?;
    Ok(inv.map.comps[0].coeffs().iter().enumerate().map(|(k, c)| c * factorial(k)).collect())
}

/// One action level: trajectory jets in δs on the τ grid.
#[derive(Clone, Debug)]
pub struct Level {
    pub s: f64,
    pub energy: f64,
    /// `d^k S/dE^k` at the level energy.
    pub action_derivs: Vec<f64>,
    /// `f^(k)(s)` with `f = S^{-1}`.
    pub f_derivs: Vec<f64>,
    /// `q(τ_j, s+δs)`, `p(τ_j, s+δs)` as jets in δs.
    pub q: Vec<Jet>,
    pub p: Vec<Jet>,
    /// Mismatch of the jets after one full period.
    pub closure: f64,
}

/// Jets of the chart coordinates at one grid point, as functions of (q,p).
#[derive(Clone, Debug)]
pub struct PointJets {
    pub tau: Jet,
    /// Route (b): inversion of the forward map.
    pub s: Jet,
    /// Route (a): `S ∘ H⁰`.
    pub s_chain: Jet,
    /// Forward map (τ,s) ↦ (q,p).
    pub forward: MapJet,
    pub condition: f64,
}

impl PointJets {
    pub fn q(&self) -> f64 {
        self.s.base()[0]
    }

    pub fn p(&self) -> f64 {
        self.s.base()[1]
    }

    /// Relative coefficient discrepancy between the two s routes.
    pub fn discrepancy(&self) -> f64 {
        let scale = self.s.coeffs().iter().skip(1).fold(0.0f64, |m, c| m.max(c.abs())).max(1e-300);
        self.s.coeffs().iter().zip(self.s_chain.coeffs()).skip(1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max) / scale
    }

    pub fn truncate(&self, order: usize) -> PointJets {
        PointJets {
            tau: self.tau.truncate(order),
            s: self.s.truncate(order),
            s_chain: self.s_chain.truncate(order),
            forward: self.forward.truncate(order),
            condition: self.condition,
        }
    }
}

struct Dynamics {
    dv: JetPlan,
    order: usize,
}

impl Dynamics {
    fn force(&self, q: &Jet) -> Result<Jet> {
        let outer = self.dv.eval(&[q.value()], &ParamEnv::new())?;
        compose(&outer, std::slice::from_ref(q))
    }

    /// Taylor expansion in δτ (variable 0) of the flow through `(q0, p0)` (jets in δs, variable 1).
    fn picard(&self, q0: &Jet, p0: &Jet, inv_omega: &Jet) -> Result<(Jet, Jet)> {
        let mut q = q0.clone();
        let mut p = p0.clone();
        for _ in 0..=self.order {
            let dq = &p * inv_omega;
            let dp = -&(&self.force(&q)? * inv_omega);
            q = q0 + &dq.antiderivative(0);
            p = p0 + &dp.antiderivative(0);
        }
        Ok((q, p))
    }
}

fn trajectory(
    pot: &Potential,
    s: f64,
    order: usize,
    n_tau: usize,
    substeps: usize,
    npts: usize,
    stop: Option<f64>,
) -> Result<Level> {
    let (e0, sd, fd) = pot.f_derivs(s, order + 1, npts)?;
    let e_jet = Jet::univariate(s, &fd.iter().enumerate().map(|(k, v)| v / factorial(k)).collect::<Vec<_>>());
    let e_jet = {
        let mut j = e_jet;
        j.set_value(e0);
        j
    };
    let omega = e_jet.derivative(0);
    let inv_omega = omega.recip();
    let (_, qp) = pot.turning_points(e0)?;
    let vplan = JetPlan::new(pot.v_expr(), &[Var::Q(0)], order);
    let vjet = vplan.eval(&[qp], &ParamEnv::new())?;
    let qinv = MapJet::new(vec![vjet])?.invert()?;
    let q0 = compose(&qinv.map.comps[0], &[e_jet.truncate(order)])?;
    let p0 = Jet::zero(&[s], order);
    let dyn_ = Dynamics { dv: JetPlan::new(&pot.dv, &[Var::Q(0)], order), order };
    let rhs = |y: &(Jet, Jet)| -> (Jet, Jet) {
        let f = dyn_.force(&y.0).expect("force evaluation");
        (&y.1 * &inv_omega, -&(&f * &inv_omega))
    };
    let axpy = |a: &(Jet, Jet), h: f64, b: &(Jet, Jet)| -> (Jet, Jet) { (&a.0 + &b.0.scale(h), &a.1 + &b.1.scale(h)) };
    // make sure the force is evaluable before running the unchecked loop
    dyn_.force(&q0)?;
    let h = 2.0 * PI / (n_tau * substeps) as f64;
    let mut y = (q0.clone(), p0.clone());
    let mut qs = Vec::with_capacity(n_tau);
    let mut ps = Vec::with_capacity(n_tau);
    if let Some(t) = stop {
        let nfull = (t / h).floor() as usize;
        for _ in 0..nfull {
            y = rk8_step(&y, h, &rhs, &axpy);
        }
        let rest = t - nfull as f64 * h;
        if rest > 0.0 {
            y = rk8_step(&y, rest, &rhs, &axpy);
        }
        qs.push(y.0);
        ps.push(y.1);
        return Ok(Level { s, energy: e0, action_derivs: sd, f_derivs: fd, q: qs, p: ps, closure: f64::NAN });
    }
    for _ in 0..n_tau {
        qs.push(y.0.clone());
        ps.push(y.1.clone());
        for _ in 0..substeps {
            y = rk8_step(&y, h, &rhs, &axpy);
        }
    }
    // coefficients of δs^k scale like s^(1/2-k) near the bottom, so compare relative to q0
    let closure = (0..q0.coeffs().len())
        .map(|k| {
            let scale = q0.coeffs()[k].abs().max(1.0);
            ((y.0.coeffs()[k] - q0.coeffs()[k]).abs().max((y.1.coeffs()[k] - p0.coeffs()[k]).abs())) / scale
        })
        .fold(0.0, f64::max);
    Ok(Level { s, energy: e0, action_derivs: sd, f_derivs: fd, q: qs, p: ps, closure })
}

fn point_jets(pot: &Potential, level: &Level, q0: &Jet, p0: &Jet, tau: f64, order: usize) -> Result<PointJets> {
    let base = [tau, level.s];
    let fd = &level.f_derivs;
    let omega = Jet::univariate(level.s, &(1..=order + 1).map(|k| fd[k] / factorial(k - 1)).collect::<Vec<_>>());
    let inv_omega = omega.recip().embed(&base, &[1]);
    let dyn_ = Dynamics { dv: JetPlan::new(&pot.dv, &[Var::Q(0)], order), order };
    let (q, p) = dyn_.picard(&q0.embed(&base, &[1]), &p0.embed(&base, &[1]), &inv_omega)?;
    let forward = MapJet::new(vec![q, p])?;
    let inv = forward.invert()?;
    let tau_jet = inv.map.comps[0].clone();
    let s_jet = inv.map.comps[1].clone();
    // route (a): S(H(q,p))
    let pt = s_jet.base().to_vec();
    let h = JetPlan::phase(&pot.h0.bind(&pot.env), 1, order).eval(&pt, &ParamEnv::new())?;
    let sd = &level.action_derivs;
    let mut sc: Vec<f64> = (0..=order).map(|k| sd[k] / factorial(k)).collect();
    sc[0] = level.s;
    let s_outer = Jet::univariate(level.energy, &sc);
    let s_chain = compose(&s_outer, &[h])?;
    Ok(PointJets { tau: tau_jet, s: s_jet, s_chain, forward, condition: inv.condition })
}

/// Summary of the chart self-checks.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ChartChecks {
    /// max |{s,τ} − 1|
    pub canonicity: f64,
    /// max |(1/2π)∮p dq − s|
    pub area: f64,
    /// max |f′(s) − 2π/T(E)|
    pub frequency: f64,
    /// max relative discrepancy between the two s-jet routes
    pub jet_routes: f64,
    /// max period-closure mismatch of the trajectory jets, relative per coefficient
    pub closure: f64,
    /// max condition number of the forward linear part
    pub condition: f64,
}

/// Tabulated action-angle chart.
#[derive(Clone, Debug)]
pub struct AAChart {
    pub potential: Arc<Potential>,
    pub options: ChartOptions,
    pub energy_window: (f64, f64),
    pub s_window: (f64, f64),
    pub levels: Vec<Level>,
    pub points: Vec<Vec<PointJets>>,
    pub maslov: i32,
    pub checks: ChartChecks,
}

/// Highest chart jet order; the ℏ⁴ step needs one order beyond the expression cap.
pub const CHART_ORDER_CAP: usize = 6;

/// Build a chart for `h0 = p²/2 + V(q)` on the energy window.
pub fn build_chart(h0: &Expr, env: &ParamEnv, window: (f64, f64), opts: &ChartOptions) -> Result<AAChart> {
    if opts.jet_order == 0 || opts.jet_order > CHART_ORDER_CAP {
        return Err(Error::JetOrder { needed: opts.jet_order, have: CHART_ORDER_CAP });
    }
    if opts.n_tau < 8 || opts.n_levels < 2 || opts.substeps == 0 {
        return Err(Error::Config("chart grid too small".into()));
    }
    let pot = Potential::new(h0, env, opts.q_center)?;
    let (e_lo, e_hi) = window;
    if !(e_hi > e_lo) {
        return Err(Error::Window(format!("[{e_lo}, {e_hi}] is empty")));
    }
    if e_hi <= pot.v_min {
        return Err(Error::Window(format!("E_max = {e_hi} is below the well bottom {}", pot.v_min)));
    }
    pot.turning_points(e_hi)?;
    let s_lo = if e_lo <= pot.v_min { 0.0 } else { pot.action(e_lo)? };
    let s_hi = pot.action(e_hi)?;
    let pot = Arc::new(pot);
    let nodes = chebyshev_nodes(opts.n_levels, s_lo, s_hi);
    let levels: Vec<Level> = nodes
        .par_iter()
        .map(|&s| trajectory(&pot, s, opts.jet_order, opts.n_tau, opts.substeps, opts.contour_points, None))
        .collect::<Result<_>>()?;
    assemble(pot, opts.clone(), window, (s_lo, s_hi), levels)
}

fn assemble(pot: Arc<Potential>, opts: ChartOptions, window: (f64, f64), s_window: (f64, f64), levels: Vec<Level>) -> Result<AAChart> {
    let taus = tau_grid(opts.n_tau);
    let points: Vec<Vec<PointJets>> = levels
        .par_iter()
        .map(|lv| {
            (0..opts.n_tau)
                .map(|j| point_jets(&pot, lv, &lv.q[j], &lv.p[j], taus[j], opts.jet_order))
                .collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut chart = AAChart {
        potential: pot,
        options: opts,
        energy_window: window,
        s_window,
        levels,
        points,
        maslov: 0,
        checks: ChartChecks::default(),
    };
    chart.maslov = maslov_index(&chart)?;
    chart.checks = chart.run_checks()?;
    Ok(chart)
}

pub fn tau_grid(n: usize) -> Vec<f64> {
    (0..n).map(|j| 2.0 * PI * j as f64 / n as f64).collect()
}

impl AAChart {
    pub fn n_levels(&self) -> usize {
        self.levels.len()
    }

    pub fn n_tau(&self) -> usize {
        self.options.n_tau
    }

    pub fn tau_grid(&self) -> Vec<f64> {
        tau_grid(self.options.n_tau)
    }

    pub fn s_values(&self) -> Vec<f64> {
        self.levels.iter().map(|l| l.s).collect()
    }

    /// Chebyshev interpolant of per-level values.
    pub fn fit_levels(&self, values: &[f64]) -> Chebyshev {
        Chebyshev::fit(self.s_window.0, self.s_window.1, values)
    }

    /// (q, p) at grid point (level i, angle j).
    pub fn point(&self, i: usize, j: usize) -> (f64, f64) {
        (self.levels[i].q[j].value(), self.levels[i].p[j].value())
    }

    /// Jets of (τ,s) at a grid point.
    pub fn chart_jets(&self, i: usize, j: usize, order: usize) -> Result<PointJets> {
        if order > self.options.jet_order {
            return Err(Error::JetOrder { needed: order, have: self.options.jet_order });
        }
        Ok(self.points[i][j].truncate(order))
    }

    /// Jets of (τ,s) at an arbitrary interior point of the chart.
    pub fn chart_jets_at(&self, tau: f64, s: f64, order: usize) -> Result<PointJets> {
        if order > CHART_ORDER_CAP {
            return Err(Error::JetOrder { needed: order, have: CHART_ORDER_CAP });
        }
        if s <= 0.0 || s > self.s_window.1 {
            return Err(Error::Window(format!("s = {s} outside the chart")));
        }
        let t = tau.rem_euclid(2.0 * PI);
        let lv = trajectory(&self.potential, s, order, self.options.n_tau, self.options.substeps, self.options.contour_points, Some(t))?;
        point_jets(&self.potential, &lv, &lv.q[0], &lv.p[0], t, order)
    }

    /// `E = f(s)` at any action in the chart.
    pub fn energy(&self, s: f64) -> Result<f64> {
        self.potential.energy_of_action(s)
    }

    /// `f^(k)(s)` for k = 0..=kmax at any action.
    pub fn f_derivs_at(&self, s: f64, kmax: usize) -> Result<Vec<f64>> {
        Ok(self.potential.f_derivs(s, kmax, self.options.contour_points)?.2)
    }

    fn run_checks(&self) -> Result<ChartChecks> {
        let mut c = ChartChecks::default();
        for (lv, pts) in self.levels.iter().zip(&self.points) {
            let omega = lv.f_derivs[1];
            let area = lv.p.iter().map(|p| p.value() * p.value()).sum::<f64>() / (omega * lv.p.len() as f64);
            c.area = c.area.max((area - lv.s).abs());
            if lv.s > 0.0 {
                let t = self.potential.period(lv.energy)?;
                c.frequency = c.frequency.max((omega - 2.0 * PI / t).abs());
            }
            c.closure = c.closure.max(lv.closure);
            for pj in pts {
                c.canonicity = c.canonicity.max((poisson(&pj.s, &pj.tau)? - 1.0).abs());
                c.jet_routes = c.jet_routes.max(pj.discrepancy());
                c.condition = c.condition.max(pj.condition);
            }
        }
        Ok(c)
    }

    /// Text dump: '#' metadata lines followed by CSV blocks.
    pub fn dump(&self) -> String {
        let o = &self.options;
        let mut out = String::new();
        let _ = writeln!(out, "# qtorus chart v1");
        let _ = writeln!(out, "# h0={}", self.potential.h0.render());
        for (k, v) in self.potential.env.iter() {
            let _ = writeln!(out, "# param {k}={v:.16e}");
        }
        let _ = writeln!(out, "# window={:.16e},{:.16e}", self.energy_window.0, self.energy_window.1);
        let _ = writeln!(out, "# s_window={:.16e},{:.16e}", self.s_window.0, self.s_window.1);
        let _ = writeln!(
            out,
            "# options={},{},{},{},{:.16e},{}",
            o.n_tau, o.n_levels, o.jet_order, o.substeps, o.q_center, o.contour_points
        );
        let _ = writeln!(out, "# maslov={}", self.maslov);
        let _ = writeln!(out, "[levels]");
        let _ = writeln!(out, "level,s,energy,closure,action_derivs...,f_derivs...");
        for (i, lv) in self.levels.iter().enumerate() {
            let mut row = format!("{i},{:.16e},{:.16e},{:.16e}", lv.s, lv.energy, lv.closure);
            for v in lv.action_derivs.iter().chain(&lv.f_derivs) {
                let _ = write!(row, ",{v:.16e}");
            }
            let _ = writeln!(out, "{row}");
        }
        let _ = writeln!(out, "[trajectory]");
        let _ = writeln!(out, "level,j,q_coeffs...,p_coeffs...");
        for (i, lv) in self.levels.iter().enumerate() {
            for j in 0..lv.q.len() {
                let mut row = format!("{i},{j}");
                for v in lv.q[j].coeffs().iter().chain(lv.p[j].coeffs()) {
                    let _ = write!(row, ",{v:.16e}");
                }
                let _ = writeln!(out, "{row}");
            }
        }
        out
    }

    /// Rebuild a chart from [`AAChart::dump`] output.
    pub fn restore(text: &str) -> Result<AAChart> {
        let bad = |m: &str| Error::Format { context: "chart dump".into(), message: m.into() };
        let num = |s: &str| s.trim().parse::<f64>().map_err(|_| bad(&format!("bad number `{s}`")));
        let mut h0 = None;
        let mut env = ParamEnv::new();
        let mut window = None;
        let mut s_window = None;
        let mut opts = None;
        let mut block = "";
        let mut level_rows: Vec<Vec<f64>> = Vec::new();
        let mut traj_rows: Vec<Vec<f64>> = Vec::new();
        let mut header_skip = false;
        for line in text.lines() {
            if let Some(meta) = line.strip_prefix("# ") {
                if let Some(v) = meta.strip_prefix("h0=") {
                    h0 = Some(v.to_string());
                } else if let Some(v) = meta.strip_prefix("param ") {
                    let (k, x) = v.split_once('=').ok_or_else(|| bad("param line"))?;
                    env.set(k, num(x)?);
                } else if let Some(v) = meta.strip_prefix("window=") {
                    let (a, b) = v.split_once(',').ok_or_else(|| bad("window"))?;
                    window = Some((num(a)?, num(b)?));
                } else if let Some(v) = meta.strip_prefix("s_window=") {
                    let (a, b) = v.split_once(',').ok_or_else(|| bad("s_window"))?;
                    s_window = Some((num(a)?, num(b)?));
                } else if let Some(v) = meta.strip_prefix("options=") {
                    let f: Vec<&str> = v.split(',').collect();
                    if f.len() != 6 {
                        return Err(bad("options"));
                    }
                    let u = |s: &str| s.parse::<usize>().map_err(|_| bad("options"));
                    opts = Some(ChartOptions {
                        n_tau: u(f[0])?,
                        n_levels: u(f[1])?,
                        jet_order: u(f[2])?,
                        substeps: u(f[3])?,
                        q_center: num(f[4])?,
                        contour_points: u(f[5])?,
                    });
                }
                continue;
            }
            if line.starts_with('[') {
                block = if line == "[levels]" {
                    "levels"
                } else if line == "[trajectory]" {
                    "trajectory"
                } else {
                    return Err(bad(&format!("unknown block {line}")));
                };
                header_skip = true;
                continue;
            }
            if header_skip {
                header_skip = false;
                continue;
            }
            if line.trim().is_empty() {
                continue;
            }
            let row = line.split(',').map(num).collect::<Result<Vec<f64>>>()?;
            match block {
                "levels" => level_rows.push(row),
                "trajectory" => traj_rows.push(row),
                _ => return Err(bad("data outside a block")),
            }
        }
        let h0 = parse(&h0.ok_or_else(|| bad("missing h0"))?)?;
        let opts = opts.ok_or_else(|| bad("missing options"))?;
        let window = window.ok_or_else(|| bad("missing window"))?;
        let s_window = s_window.ok_or_else(|| bad("missing s_window"))?;
        let pot = Arc::new(Potential::new(&h0, &env, opts.q_center)?);
        let k = opts.jet_order;
        let nd = k + 2;
        let ncoef = k + 1;
        let mut levels = Vec::with_capacity(level_rows.len());
        for row in &level_rows {
            if row.len() != 4 + 2 * nd {
                return Err(bad("level row width"));
            }
            levels.push(Level {
                s: row[1],
                energy: row[2],
                closure: row[3],
                action_derivs: row[4..4 + nd].to_vec(),
                f_derivs: row[4 + nd..].to_vec(),
                q: Vec::new(),
                p: Vec::new(),
            });
        }
        for row in &traj_rows {
            if row.len() != 2 + 2 * ncoef {
                return Err(bad("trajectory row width"));
            }
            let i = row[0] as usize;
            let lv = levels.get_mut(i).ok_or_else(|| bad("level index"))?;
            lv.q.push(Jet::univariate(lv.s, &row[2..2 + ncoef]));
            lv.p.push(Jet::univariate(lv.s, &row[2 + ncoef..]));
        }
        if levels.len() != opts.n_levels || levels.iter().any(|l| l.q.len() != opts.n_tau) {
            return Err(bad("grid size mismatch"));
        }
        assemble(pot, opts, window, s_window, levels)
    }
}

/// Caustic count along one period: sign changes of ∂q/∂τ (equivalently p), sampled off-grid.
pub fn maslov_index(chart: &AAChart) -> Result<i32> {
    let mut result = None;
    for lv in &chart.levels {
        if lv.s <= 0.0 {
            continue;
        }
        let n = lv.p.len();
        let fr = Fourier::new(n);
        let vals: Vec<f64> = lv.p.iter().map(|p| p.value()).collect();
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let coeffs = fr.coefficients(&vals);
        let mut samples: Vec<f64> = (0..n).map(|j| fr.interpolate(&coeffs, 2.0 * PI * (j as f64 + 0.5) / n as f64)).collect();
        if samples.iter().any(|v| v.abs() < 1e-12 * scale) {
            // retry on a shifted sampling
            samples = (0..n).map(|j| fr.interpolate(&coeffs, 2.0 * PI * (j as f64 + 0.25) / n as f64)).collect();
            if samples.iter().any(|v| v.abs() < 1e-12 * scale) {
                return Err(Error::DegenerateTangency);
            }
        }
        let mut count = 0;
        for j in 0..n {
            if samples[j].signum() != samples[(j + 1) % n].signum() {
                count += 1;
            }
        }
        match result {
            None => result = Some(count),
            Some(c) if c != count => return Err(Error::Check(format!("Maslov index varies across levels ({c} vs {count})"))),
            _ => {}
        }
    }
    result.ok_or_else(|| Error::Window("no nondegenerate level".into()))
}

/// Product of two 1D charts; variables ordered (q1, q2, p1, p2).
#[derive(Clone, Debug)]
pub struct SeparableChart {
    pub first: AAChart,
    pub second: AAChart,
}

/// Jets of (s1, s2, τ1, τ2) at a product grid point.
#[derive(Clone, Debug)]
pub struct ProductJets {
    pub s: [Jet; 2],
    pub tau: [Jet; 2],
    pub point: [f64; 4],
}

pub fn product_chart(a: AAChart, b: AAChart) -> SeparableChart {
    SeparableChart { first: a, second: b }
}

impl SeparableChart {
    pub fn maslov(&self) -> (i32, i32) {
        (self.first.maslov, self.second.maslov)
    }

    /// Jets at grid point `(i1, j1)` of the first factor and `(i2, j2)` of the second.
    pub fn jets(&self, i1: usize, j1: usize, i2: usize, j2: usize, order: usize) -> Result<ProductJets> {
        let a = self.first.chart_jets(i1, j1, order)?;
        let b = self.second.chart_jets(i2, j2, order)?;
        let base = [a.q(), b.q(), a.p(), b.p()];
        Ok(ProductJets {
            s: [a.s.embed(&base, &[0, 2]), b.s.embed(&base, &[1, 3])],
            tau: [a.tau.embed(&base, &[0, 2]), b.tau.embed(&base, &[1, 3])],
            point: base,
        })
    }

    /// Largest |cross Poisson bracket| between the two factors' coordinates at a point.
    pub fn cross_brackets(&self, pj: &ProductJets) -> Result<f64> {
        let mut m = 0.0f64;
        for x in [&pj.s[0], &pj.tau[0]] {
            for y in [&pj.s[1], &pj.tau[1]] {
                m = m.max(poisson(x, y)?.abs());
            }
        }
        Ok(m)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn taylor_inversion_of_exp() {
        // S(E) = e^E at 0; inverse is log, derivatives 1, -1, 2
        let d = invert_taylor(&[1.0, 1.0, 1.0, 1.0]).unwrap();
        assert!((d[1] - 1.0).abs() < 1e-14);
        assert!((d[2] + 1.0).abs() < 1e-14);
        assert!((d[3] - 2.0).abs() < 1e-13);
    }

    #[test]
    fn harmonic_potential_basics() {
        let pot = Potential::new(&parse("p1^2/2 + q1^2/2").unwrap(), &ParamEnv::new(), 0.3).unwrap();
        assert!(pot.q_min.abs() < 1e-14);
        let (a, b) = pot.turning_points(0.5).unwrap();
        assert!((a + 1.0).abs() < 1e-14 && (b - 1.0).abs() < 1e-14);
        assert!((pot.action(0.7).unwrap() - 0.7).abs() < 1e-14);
        assert!((pot.period(0.7).unwrap() - 2.0 * PI).abs() < 1e-12);
        let d = pot.action_derivs(0.7, 4, 256).unwrap();
        assert!((d[1] - 1.0).abs() < 1e-12 && d[2].abs() < 1e-12 && d[4].abs() < 1e-11, "{d:?}");
    }

    #[test]
    fn rejects_non_separated_form() {
        assert!(Potential::new(&parse("p1^4 + q1^2").unwrap(), &ParamEnv::new(), 0.0).is_err());
    }
}
