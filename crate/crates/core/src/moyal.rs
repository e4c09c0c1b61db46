//! Bidifferential calculus on flat phase space: Poisson bracket, J-contractions,
//! the skew and symmetric corrections of the Weyl product, and the diffusion operator.

use nalgebra::DMatrix;
use num_complex::Complex64;
use once_cell::sync::Lazy;

use crate::error::{Error, Result};
use crate::jets::{factorial, layout, Jet, Layout, MultiIndex, MAX_VARS};

/// The frozen constants of the contraction conventions.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Conventions {
    pub poisson: f64,
    pub bracket0: f64,
    pub bracket1: f64,
    pub symprod0: f64,
    pub symprod1: f64,
    pub diffusion_c2: f64,
    pub diffusion_c3: f64,
}

pub const CONVENTIONS_TEXT: &str = include_str!("../data/conventions.txt");

/// Parse `name=value` lines (values may be `a/b`).
pub fn parse_conventions(text: &str) -> Result<Conventions> {
    let mut get = std::collections::HashMap::new();
    for line in text.lines() {
        let line = line.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| Error::Format { context: "conventions".into(), message: line.into() })?;
        let val = match v.trim().split_once('/') {
            Some((a, b)) => {
                let a: f64 = a.trim().parse().map_err(|_| Error::Format { context: "conventions".into(), message: line.into() })?;
                let b: f64 = b.trim().parse().map_err(|_| Error::Format { context: "conventions".into(), message: line.into() })?;
                a / b
            }
            None => v.trim().parse().map_err(|_| Error::Format { context: "conventions".into(), message: line.into() })?,
        };
        get.insert(k.trim().to_string(), val);
    }
    let f = |k: &str| get.get(k).copied().ok_or_else(|| Error::Format { context: "conventions".into(), message: format!("missing {k}") });
    Ok(Conventions {
        poisson: f("poisson_coeff")?,
        bracket0: f("bracket0_coeff")?,
        bracket1: f("bracket1_coeff")?,
        symprod0: f("symprod0_coeff")?,
        symprod1: f("symprod1_coeff")?,
        diffusion_c2: f("diffusion_c2")?,
        diffusion_c3: f("diffusion_c3")?,
    })
}

pub static CONV: Lazy<Conventions> = Lazy::new(|| parse_conventions(CONVENTIONS_TEXT).expect("embedded conventions file is valid"));

/// The symplectic matrix `[[0, I], [-I, 0]]` for `n` degrees of freedom.
pub fn symplectic_matrix(n: usize) -> DMatrix<f64> {
    DMatrix::from_fn(2 * n, 2 * n, |i, j| {
        if j == i + n {
            1.0
        } else if i == j + n {
            -1.0
        } else {
            0.0
        }
    })
}

/// Swap q- and p-counts of a multi-index, returning the sign (-1)^(p-count).
fn partner(ix: &MultiIndex, n: usize) -> (MultiIndex, f64) {
    let mut out = [0u8; MAX_VARS];
    let mut pcount = 0u32;
    for i in 0..n {
        out[i] = ix[n + i];
        out[n + i] = ix[i];
        pcount += ix[n + i] as u32;
    }
    (out, if pcount.is_multiple_of(2) { 1.0 } else { -1.0 })
}

fn check_pair(a: &Jet, b: &Jet, k: usize) -> Result<usize> {
    if a.nvars() != b.nvars() || !a.nvars().is_multiple_of(2) {
        return Err(Error::JetMismatch("bidifferential operations need jets in the same 2n variables".into()));
    }
    let have = a.order().min(b.order());
    if have < k {
        return Err(Error::JetOrder { needed: k, have });
    }
    Ok(a.nvars() / 2)
}

/// `D^kA · J^{⊗k} · D^kB` at the base point.
pub fn lambda_power(a: &Jet, b: &Jet, k: usize) -> Result<f64> {
    let n = check_pair(a, b, k)?;
    let lay = a.layout();
    let mut sum = 0.0;
    for (idx, ix) in lay.indices.iter().enumerate() {
        if lay.degree_of(idx) != k {
            continue;
        }
        let (bar, sign) = partner(ix, n);
        let mf: f64 = ix.iter().map(|&v| factorial(v as usize)).product();
        // k! Σ μ! a_μ b_μ̄ (-1)^{|μ_p|}
        sum += sign * mf * a.coeffs()[idx] * b.coeff(&bar[..2 * n]);
    }
    Ok(sum * factorial(k))
}

/// Jet-valued contraction `D^kA · J^{⊗k} · D^kB`, of order `min(order) - k`.
pub fn lambda_power_jet(a: &Jet, b: &Jet, k: usize) -> Result<Jet> {
    let n = check_pair(a, b, k)?;
    let order = a.order().min(b.order());
    let a = if a.order() > order { a.truncate(order) } else { a.clone() };
    let b = if b.order() > order { b.truncate(order) } else { b.clone() };
    let lay = layout(2 * n, k);
    let mut acc = Jet::zero(a.base(), order - k);
    for ix in lay.indices.iter().filter(|ix| ix.iter().map(|&v| v as usize).sum::<usize>() == k) {
        let (bar, sign) = partner(ix, n);
        let mf: f64 = ix.iter().map(|&v| factorial(v as usize)).product();
        let da = a.derivative_multi(&ix[..2 * n]);
        let db = b.derivative_multi(&bar[..2 * n]);
        acc = &acc + &(&da * &db).scale(sign * factorial(k) / mf);
    }
    Ok(acc)
}

/// Poisson bracket `{A,B}`, normalized so that `{p,q} = 1`.
pub fn poisson(a: &Jet, b: &Jet) -> Result<f64> {
    Ok(CONV.poisson * lambda_power(a, b, 1)?)
}

pub fn poisson_jet(a: &Jet, b: &Jet) -> Result<Jet> {
    Ok(lambda_power_jet(a, b, 1)?.scale(CONV.poisson))
}

/// Skew correction `⟨⟨A,B⟩⟩^{(α)}`: the ℏ^{2+2α} term of `(i/ℏ)[Â,B̂]` carries `-⟨⟨A,B⟩⟩^{(α)}`.
pub fn dd_bracket(a: &Jet, b: &Jet, alpha: usize) -> Result<f64> {
    match alpha {
        0 => Ok(CONV.bracket0 * lambda_power(a, b, 3)?),
        1 => Ok(CONV.bracket1 * lambda_power(a, b, 5)?),
        _ => Err(Error::Config(format!("dd_bracket order {alpha} not supported"))),
    }
}

pub fn dd_bracket_jet(a: &Jet, b: &Jet, alpha: usize) -> Result<Jet> {
    match alpha {
        0 => Ok(lambda_power_jet(a, b, 3)?.scale(CONV.bracket0)),
        1 => Ok(lambda_power_jet(a, b, 5)?.scale(CONV.bracket1)),
        _ => Err(Error::Config(format!("dd_bracket order {alpha} not supported"))),
    }
}

/// Symmetric correction `A ⊙^{(α)} B`: the ℏ^{2+2α} term of the symbol of `(ÂB̂ + B̂Â)/2`.
pub fn sym_prod(a: &Jet, b: &Jet, alpha: usize) -> Result<f64> {
    match alpha {
        0 => Ok(CONV.symprod0 * lambda_power(a, b, 2)?),
        1 => Ok(CONV.symprod1 * lambda_power(a, b, 4)?),
        _ => Err(Error::Config(format!("sym_prod order {alpha} not supported"))),
    }
}

/// `Σ D²A_{αβ} J^{αα'} J^{ββ'} T_{α'β'}` for a 2-tensor `T`.
pub fn contract2(d2a: &DMatrix<f64>, t: &DMatrix<f64>) -> f64 {
    let n = d2a.nrows() / 2;
    let j = symplectic_matrix(n);
    (j.transpose() * d2a * &j).component_mul(t).sum()
}

/// Coefficients of the leading diffusion operator (exposed for mutation tests).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DiffusionCoeffs {
    pub c2: f64,
    pub c3: f64,
}

impl Default for DiffusionCoeffs {
    fn default() -> Self {
        DiffusionCoeffs { c2: CONV.diffusion_c2, c3: CONV.diffusion_c3 }
    }
}

/// `Δ_S^{(0)} k` at a point from jets of `S_1..S_n` and the partials of `k` in the S-values.
/// `d2[l][m] = ∂²k/∂S_l∂S_m`, `d3[l][m][r] = ∂³k/∂S_l∂S_m∂S_r`.
pub fn diffusion0(s: &[Jet], d2: &[Vec<f64>], d3: &[Vec<Vec<f64>>]) -> Result<f64> {
    diffusion0_with(s, d2, d3, DiffusionCoeffs::default())
}

pub fn diffusion0_with(s: &[Jet], d2: &[Vec<f64>], d3: &[Vec<Vec<f64>>], c: DiffusionCoeffs) -> Result<f64> {
    for sj in s {
        if sj.order() < 2 {
            return Err(Error::JetOrder { needed: 2, have: sj.order() });
        }
    }
    let hess: Vec<DMatrix<f64>> = s.iter().map(|j| j.hessian()).collect();
    let grad: Vec<DMatrix<f64>> = s.iter().map(|j| DMatrix::from_column_slice(j.nvars(), 1, &j.gradient())).collect();
    let mut total = 0.0;
    for l in 0..s.len() {
        for k in 0..s.len() {
            if d2[l][k] != 0.0 {
                total += c.c2 * contract2(&hess[l], &hess[k]) * d2[l][k];
            }
            for m in 0..s.len() {
                if d3[l][k][m] != 0.0 {
                    let t = &grad[k] * grad[m].transpose();
                    total += c.c3 * contract2(&hess[l], &t) * d3[l][k][m];
                }
            }
        }
    }
    Ok(total)
}

/// Jet-valued `Δ_S^{(0)} k`: `d2`, `d3` are jets (in phase variables) of the partials of k evaluated along S.
pub fn diffusion0_jet(s: &[Jet], d2: &[Vec<Jet>], d3: &[Vec<Vec<Jet>>], c: DiffusionCoeffs) -> Result<Jet> {
    let order = s.iter().map(|j| j.order()).min().unwrap();
    if order < 2 {
        return Err(Error::JetOrder { needed: 2, have: order });
    }
    let out_order = order - 2;
    let nv = s[0].nvars();
    let n = nv / 2;
    let jm = symplectic_matrix(n);
    // Hessian and gradient entries as jets
    let hess: Vec<Vec<Vec<Jet>>> = s
        .iter()
        .map(|sj| {
            (0..nv)
                .map(|a| {
                    (0..nv)
                        .map(|b| {
                            let mut ix = [0u8; MAX_VARS];
                            ix[a] += 1;
                            ix[b] += 1;
                            sj.derivative_multi(&ix[..nv]).truncate(out_order)
                        })
                        .collect()
                })
                .collect()
        })
        .collect();
    let grad: Vec<Vec<Jet>> = s.iter().map(|sj| (0..nv).map(|a| sj.derivative(a).truncate(out_order)).collect()).collect();
    // (Jᵀ H J)_{a'b'} as jets
    let conj = |h: &Vec<Vec<Jet>>| -> Vec<Vec<Jet>> {
        (0..nv)
            .map(|ap| {
                (0..nv)
                    .map(|bp| {
                        let mut acc = Jet::zero(s[0].base(), out_order);
                        for a in 0..nv {
                            for b in 0..nv {
                                let w = jm[(a, ap)] * jm[(b, bp)];
                                if w != 0.0 {
                                    acc = &acc + &h[a][b].scale(w);
                                }
                            }
                        }
                        acc
                    })
                    .collect()
            })
            .collect()
    };
    let conj_h: Vec<Vec<Vec<Jet>>> = hess.iter().map(conj).collect();
    let mut total = Jet::zero(s[0].base(), out_order);
    let cut = |j: &Jet| if j.order() > out_order { j.truncate(out_order) } else { j.clone() };
    for l in 0..s.len() {
        for k in 0..s.len() {
            let mut q = Jet::zero(s[0].base(), out_order);
            for a in 0..nv {
                for b in 0..nv {
                    q = &q + &(&conj_h[l][a][b] * &hess[k][a][b]);
                }
            }
            total = &total + &(&q * &cut(&d2[l][k])).scale(c.c2);
            for m in 0..s.len() {
                let mut r = Jet::zero(s[0].base(), out_order);
                for a in 0..nv {
                    for b in 0..nv {
                        r = &r + &(&conj_h[l][a][b] * &(&grad[k][a] * &grad[m][b]));
                    }
                }
                total = &total + &(&r * &cut(&d3[l][k][m])).scale(c.c3);
            }
        }
    }
    Ok(total)
}

/// Polynomial in `nv` variables (about the origin) with complex coefficients graded by powers of ℏ.
#[derive(Clone, Debug)]
struct HPoly {
    levels: Vec<Vec<Complex64>>,
}

/// Weyl-product machinery for the composite-function expansion `k(Ŝ)` about one point.
struct StarAlgebra {
    nv: usize,
    lay: std::sync::Arc<Layout>,
    max_h: usize,
    // products of monomials: (i, j, k) with deg_i + deg_j <= order
    table: Vec<(u16, u16, u16)>,
}

impl StarAlgebra {
    fn new(nv: usize, max_h: usize) -> Self {
        let order = 2 * max_h;
        let lay = layout(nv, order);
        let mut table = Vec::new();
        for (i, a) in lay.indices.iter().enumerate() {
            for (j, b) in lay.indices.iter().enumerate() {
                if lay.degree_of(i) + lay.degree_of(j) <= order {
                    let mut c = [0u8; MAX_VARS];
                    for v in 0..nv {
                        c[v] = a[v] + b[v];
                    }
                    table.push((i as u16, j as u16, lay.position(&c).unwrap() as u16));
                }
            }
        }
        StarAlgebra { nv, lay, max_h, table }
    }

    fn zero(&self) -> HPoly {
        HPoly { levels: vec![vec![Complex64::new(0.0, 0.0); self.lay.len()]; self.max_h + 1] }
    }

    /// Degree budget: a level-m term can only reach the constant ℏ^max term if its degree is ≤ 2(max-m).
    fn prune(&self, p: &mut HPoly) {
        for (m, lev) in p.levels.iter_mut().enumerate() {
            let cap = 2 * (self.max_h - m);
            for (k, c) in lev.iter_mut().enumerate() {
                if self.lay.degree_of(k) > cap {
                    *c = Complex64::new(0.0, 0.0);
                }
            }
        }
    }

    fn deriv(&self, coeffs: &[Complex64], mu: &MultiIndex) -> Vec<Complex64> {
        let mut out = vec![Complex64::new(0.0, 0.0); coeffs.len()];
        for (k, ix) in self.lay.indices.iter().enumerate() {
            let mut up = *ix;
            let mut w = 1.0;
            for v in 0..self.nv {
                up[v] += mu[v];
                for t in 0..mu[v] {
                    w *= (ix[v] + mu[v] - t) as f64;
                }
            }
            if let Some(p) = self.lay.position(&up) {
                out[k] = coeffs[p] * w;
            }
        }
        out
    }

    fn star(&self, a: &HPoly, b: &HPoly) -> HPoly {
        let n = self.nv / 2;
        let mut out = self.zero();
        let ihalf = Complex64::new(0.0, 0.5);
        for k in 0..=self.max_h {
            let pref = ihalf.powi(k as i32);
            let lay_k = layout(self.nv, k);
            for mu in lay_k.indices.iter().filter(|ix| ix.iter().map(|&v| v as usize).sum::<usize>() == k) {
                let (bar, sign) = partner(mu, n);
                let mf: f64 = mu.iter().map(|&v| factorial(v as usize)).product();
                let w = pref * (sign / mf);
                for (ma, la) in a.levels.iter().enumerate() {
                    if la.iter().all(|c| c.norm_sqr() == 0.0) {
                        continue;
                    }
                    let da = self.deriv(la, mu);
                    for (mb, lb) in b.levels.iter().enumerate() {
                        let m = ma + mb + k;
                        if m > self.max_h || lb.iter().all(|c| c.norm_sqr() == 0.0) {
                            continue;
                        }
                        let db = self.deriv(lb, &bar);
                        let target = &mut out.levels[m];
                        for &(i, j, t) in &self.table {
                            let x = da[i as usize];
                            if x.norm_sqr() == 0.0 {
                                continue;
                            }
                            target[t as usize] += w * x * db[j as usize];
                        }
                    }
                }
            }
        }
        self.prune(&mut out);
        out
    }
}

/// Expansion coefficients of the Weyl-symmetrized composite function at one point.
///
/// For a single function S with Taylor jet of order ≥ 2·max_h at x₀, returns
/// `c[m][j]` such that the ℏ^{2m}-coefficient of the symbol of `k(Ŝ)` at x₀ equals
/// `Σ_j c[m][j]·k^{(j)}(S(x₀))`. Level 1 reproduces `-Δ_S^{(0)}`, level 2 gives `-Δ_S^{(1)}`.
pub fn composite_coefficients(s: &Jet, max_h: usize) -> Result<Vec<Vec<f64>>> {
    let nv = s.nvars();
    let alg = StarAlgebra::new(nv, 2 * max_h);
    let need = 2 * max_h;
    if s.order() < need {
        return Err(Error::JetOrder { needed: need, have: s.order() });
    }
    let s = s.truncate(need);
    // Q = S - S(x₀) as a polynomial about x₀
    let mut q = alg.zero();
    for (k, ix) in s.layout().indices.iter().enumerate().skip(1) {
        let p = alg.lay.position(ix).unwrap();
        q.levels[0][p] = Complex64::new(s.coeffs()[k], 0.0);
    }
    let jmax = 3 * max_h;
    let mut out = vec![vec![0.0; jmax + 1]; max_h + 1];
    let mut power = alg.zero();
    power.levels[0][0] = Complex64::new(1.0, 0.0);
    for j in 0..=jmax {
        if j > 0 {
            power = alg.star(&q, &power);
        }
        for (m, row) in out.iter_mut().enumerate() {
            // ℏ^{2m} level, constant term
            row[j] = power.levels[2 * m][0].re / factorial(j);
        }
    }
    Ok(out)
}

/// `Δ_S^{(1)} k` at a point, given `k^{(j)}(S(x₀))` for j = 0..=6.
pub fn diffusion1(s: &Jet, kder: &[f64]) -> Result<f64> {
    let c = composite_coefficients(s, 2)?;
    Ok(-(2..=6).map(|j| c[2][j] * kder[j]).sum::<f64>())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::expr::{parse, ParamEnv};
    use approx::assert_relative_eq;

    fn jet(s: &str, pt: &[f64], order: usize) -> Jet {
        parse(s).unwrap().jet_of(pt, order, &ParamEnv::new()).unwrap()
    }

    #[test]
    fn symplectic_matrix_properties() {
        let j = symplectic_matrix(2);
        assert_eq!(&j * &j, -DMatrix::<f64>::identity(4, 4));
        assert_eq!(j.transpose(), -j.clone());
    }

    #[test]
    fn poisson_normalization() {
        let q = jet("q1", &[0.3, 0.2], 1);
        let p = jet("p1", &[0.3, 0.2], 1);
        assert_eq!(lambda_power(&q, &p, 1).unwrap(), 1.0);
        assert_eq!(poisson(&p, &q).unwrap(), 1.0);
        let s = jet("p1^2/2 + q1^4", &[0.3, 0.2], 1);
        assert_eq!(lambda_power(&s, &s, 1).unwrap(), 0.0);
    }

    #[test]
    fn cubic_contraction() {
        let a = jet("q1^3", &[0.4, -0.7], 3);
        let b = jet("p1^3", &[0.4, -0.7], 3);
        assert_relative_eq!(lambda_power(&a, &b, 3).unwrap(), 36.0);
        assert_relative_eq!(dd_bracket(&a, &b, 0).unwrap(), -1.5);
        assert_eq!(dd_bracket(&a, &a, 0).unwrap(), 0.0);
    }

    #[test]
    fn quadratics_have_no_corrections() {
        let a = jet("q1^2 + q1*p1", &[0.4, -0.7], 3);
        let b = jet("p1^2 - 3*q1", &[0.4, -0.7], 3);
        assert_eq!(dd_bracket(&a, &b, 0).unwrap(), 0.0);
        let l = jet("q1 + 2*p1", &[0.1, 0.1], 2);
        assert_eq!(sym_prod(&l, &b, 0).unwrap(), 0.0);
    }

    #[test]
    fn jet_contraction_matches_scalar() {
        let pt = [0.3, 0.5];
        let a = jet("sin(q1)*p1^2 + q1^3*p1", &pt, 5);
        let b = jet("exp(p1)*q1^2", &pt, 5);
        for k in 1..=3 {
            let j = lambda_power_jet(&a, &b, k).unwrap();
            assert_relative_eq!(j.value(), lambda_power(&a, &b, k).unwrap(), epsilon = 1e-13);
        }
    }

    #[test]
    fn harmonic_has_no_diffusion() {
        let s = jet("(q1^2 + p1^2)/2", &[0.3, 0.8], 3);
        let v = diffusion0(std::slice::from_ref(&s), &[vec![0.0]], &[vec![vec![0.0]]]).unwrap();
        assert_eq!(v, 0.0);
        // k(S) = S^2: Λ²(s,s)=2 → (1/16)*2*2, plus (1/24)*(2*|∇s|²... ) term
        let v = diffusion0(&[s], &[vec![2.0]], &[vec![vec![0.0]]]).unwrap();
        assert_relative_eq!(v, 0.25);
    }

    #[test]
    fn composite_level_one_is_leading_diffusion() {
        let pt = [0.3, -0.4];
        let s = jet("q1^2/2 + p1^2/2 + 0.3*q1^4 + q1^3*p1", &pt, 4);
        let c = composite_coefficients(&s, 1).unwrap();
        let h = s.hessian();
        let g = s.gradient();
        let gg = DMatrix::from_fn(2, 2, |a, b| g[a] * g[b]);
        assert_relative_eq!(-c[1][2], contract2(&h, &h) / 16.0, epsilon = 1e-12);
        assert_relative_eq!(-c[1][3], contract2(&h, &gg) / 24.0, epsilon = 1e-12);
        assert_eq!(c[0][0], 1.0);
        assert_eq!(c[0][1], 0.0);
    }
}

/// Agreement between the bracket formulas here and exact Weyl-product expansions.
#[derive(Clone, Debug, Default)]
pub struct ConventionReport {
    pub pairs: usize,
    /// Largest relative mismatch per ℏ-power (0, 2, 4, higher) of the commutator.
    pub commutator: [f64; 4],
    /// Same for the anticommutator.
    pub anticommutator: [f64; 4],
    /// Pairs with a nonzero ℏ⁴ commutator term.
    pub exercising_bracket1: usize,
    /// All oracle fits exact and real.
    pub exact: bool,
}

impl ConventionReport {
    pub fn worst(&self) -> f64 {
        self.commutator.iter().chain(&self.anticommutator).fold(0.0, |m: f64, &x| m.max(x))
    }
}

fn monomial_jet(a: u32, b: u32, at: (f64, f64), order: usize) -> Jet {
    let base = [at.0, at.1];
    &Jet::variable(&base, order, 0).powi(a) * &Jet::variable(&base, order, 1).powi(b)
}

/// Compare `{A,B}`, `⟨⟨A,B⟩⟩^{(0,1)}` and the symmetric corrections with the exact oracle for
/// every pair of monomials `q^a p^b` of total degree at most `max_degree`, at the given points.
pub fn oracle_agreement(max_degree: u32, points: &[(f64, f64)]) -> Result<ConventionReport> {
    use crate::oracle::{star_anticommutator, star_commutator, Poly};
    use num_traits::Zero;
    let monos: Vec<(u32, u32)> = (0..=max_degree).flat_map(|d| (0..=d).map(move |a| (a, d - a))).filter(|&(a, b)| a + b > 0).collect();
    let mut rep = ConventionReport { exact: true, ..Default::default() };
    for (i, &x) in monos.iter().enumerate() {
        for &y in &monos[i..] {
            if x.0 + x.1 + y.0 + y.1 > max_degree {
                continue;
            }
            rep.pairs += 1;
            let (pa, pb) = (Poly::monomial(x.0, x.1), Poly::monomial(y.0, y.1));
            let com = star_commutator(&pa, &pb);
            let anti = star_anticommutator(&pa, &pb);
            rep.exact &= com.residual.is_zero() && com.imaginary.is_zero() && anti.residual.is_zero() && anti.imaginary.is_zero();
            if !com.coeff(2).is_zero() {
                rep.exercising_bracket1 += 1;
            }
            for &pt in points {
                let (ja, jb) = (monomial_jet(x.0, x.1, pt, 5), monomial_jet(y.0, y.1, pt, 5));
                let model_c = [poisson(&ja, &jb)?, -dd_bracket(&ja, &jb, 0)?, -dd_bracket(&ja, &jb, 1)?, 0.0];
                let model_a = [ja.value() * jb.value(), -sym_prod(&ja, &jb, 0)?, -sym_prod(&ja, &jb, 1)?, 0.0];
                for k in 0..4 {
                    let exact_c = if k < 3 { com.coeff(k).eval(pt.0, pt.1) } else { (3..com.coeffs.len()).map(|j| com.coeff(j).eval(pt.0, pt.1).abs()).sum() };
                    let exact_a = if k < 3 { anti.coeff(k).eval(pt.0, pt.1) } else { (3..anti.coeffs.len()).map(|j| anti.coeff(j).eval(pt.0, pt.1).abs()).sum() };
                    let rel = |m: f64, e: f64| (m - e).abs() / e.abs().max(1.0);
                    rep.commutator[k] = rep.commutator[k].max(rel(model_c[k], exact_c));
                    rep.anticommutator[k] = rep.anticommutator[k].max(rel(model_a[k], exact_a));
                }
            }
        }
    }
    Ok(rep)
}
