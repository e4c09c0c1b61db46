//! Exact Weyl-ordered operator algebra in one degree of freedom.
//!
//! Operators are kept in standard order `Σ c_ab Q^a P^b` with `[Q,P] = iℏ` and Gaussian-rational
//! coefficients, at a fixed rational ℏ. Nothing here uses the bidifferential formulas of `moyal`.

use std::collections::BTreeMap;

use nalgebra::DMatrix;
use num_bigint::BigInt;
use num_complex::{Complex, Complex64};
use num_rational::BigRational;
use num_traits::{One, Signed, ToPrimitive, Zero};

use crate::error::{Error, Result};
use crate::expr::{Expr, Node, ParamEnv, Var};
use crate::expr::Exponent;

pub type Rat = BigRational;
type Cx = Complex<BigRational>;

pub fn rat(n: i64, d: i64) -> Rat {
    Rat::new(BigInt::from(n), BigInt::from(d))
}

fn rat_f64(x: f64) -> Result<Rat> {
    Rat::from_float(x).ok_or_else(|| Error::NotPolynomial(format!("non-finite constant {x}")))
}

fn binom(n: u32, k: u32) -> BigInt {
    let mut r = BigInt::one();
    for i in 0..k {
        r = r * BigInt::from(n - i) / BigInt::from(i + 1);
    }
    r
}

fn fact(n: u32) -> BigInt {
    (1..=n).fold(BigInt::one(), |a, k| a * BigInt::from(k))
}

/// Polynomial symbol in `(q, p)` with exact rational coefficients; key `(a, b)` is `q^a p^b`.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct Poly {
    pub terms: BTreeMap<(u32, u32), Rat>,
}

impl Poly {
    pub fn zero() -> Poly {
        Poly::default()
    }

    pub fn constant(c: Rat) -> Poly {
        let mut p = Poly::zero();
        p.add_term((0, 0), c);
        p
    }

    pub fn monomial(a: u32, b: u32) -> Poly {
        Poly::constant(Rat::one()).times_monomial(a, b)
    }

    fn times_monomial(&self, a: u32, b: u32) -> Poly {
        Poly { terms: self.terms.iter().map(|(&(x, y), c)| ((x + a, y + b), c.clone())).collect() }
    }

    fn add_term(&mut self, k: (u32, u32), c: Rat) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(k).or_insert_with(Rat::zero);
        *e += c;
        if e.is_zero() {
            self.terms.remove(&k);
        }
    }

    /// Convert an expression in `q1, p1` (parameters bound from `env`) to an exact polynomial.
    pub fn from_expr(e: &Expr, env: &ParamEnv) -> Result<Poly> {
        let bad = || Error::NotPolynomial(e.render());
        Ok(match e.node() {
            Node::Const(c) => Poly::constant(rat_f64(*c)?),
            Node::Param(name) => Poly::constant(rat_f64(env.get(name).ok_or_else(|| Error::UnboundParameter(name.to_string()))?)?),
            Node::Var(Var::Q(0)) => Poly::monomial(1, 0),
            Node::Var(Var::P(0)) => Poly::monomial(0, 1),
            Node::Var(_) | Node::Call(..) => return Err(bad()),
            Node::Neg(a) => Poly::from_expr(a, env)?.scale(&-Rat::one()),
            Node::Add(a, b) => Poly::from_expr(a, env)?.add(&Poly::from_expr(b, env)?),
            Node::Sub(a, b) => Poly::from_expr(a, env)?.sub(&Poly::from_expr(b, env)?),
            Node::Mul(a, b) => Poly::from_expr(a, env)?.mul(&Poly::from_expr(b, env)?),
            Node::Div(a, b) => {
                let d = Poly::from_expr(b, env)?;
                match d.as_constant() {
                    Some(c) if !c.is_zero() => Poly::from_expr(a, env)?.scale(&c.recip()),
                    _ => return Err(bad()),
                }
            }
            Node::Pow(a, Exponent::Int(n)) if *n >= 0 => Poly::from_expr(a, env)?.pow(*n as u32),
            Node::Pow(..) => return Err(bad()),
        })
    }

    pub fn as_constant(&self) -> Option<Rat> {
        match self.terms.len() {
            0 => Some(Rat::zero()),
            1 => self.terms.get(&(0, 0)).cloned(),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn degree(&self) -> u32 {
        self.terms.keys().map(|(a, b)| a + b).max().unwrap_or(0)
    }

    pub fn add(&self, o: &Poly) -> Poly {
        let mut r = self.clone();
        for (k, c) in &o.terms {
            r.add_term(*k, c.clone());
        }
        r
    }

    pub fn sub(&self, o: &Poly) -> Poly {
        self.add(&o.scale(&-Rat::one()))
    }

    pub fn scale(&self, s: &Rat) -> Poly {
        let mut r = Poly::zero();
        for (k, c) in &self.terms {
            r.add_term(*k, c * s);
        }
        r
    }

    pub fn mul(&self, o: &Poly) -> Poly {
        let mut r = Poly::zero();
        for (&(a, b), c) in &self.terms {
            for (&(x, y), d) in &o.terms {
                r.add_term((a + x, b + y), c * d);
            }
        }
        r
    }

    pub fn pow(&self, n: u32) -> Poly {
        (0..n).fold(Poly::constant(Rat::one()), |acc, _| acc.mul(self))
    }

    pub fn dq(&self) -> Poly {
        let mut r = Poly::zero();
        for (&(a, b), c) in &self.terms {
            if a > 0 {
                r.add_term((a - 1, b), c * Rat::from_integer(BigInt::from(a)));
            }
        }
        r
    }

    pub fn dp(&self) -> Poly {
        let mut r = Poly::zero();
        for (&(a, b), c) in &self.terms {
            if b > 0 {
                r.add_term((a, b - 1), c * Rat::from_integer(BigInt::from(b)));
            }
        }
        r
    }

    /// `k(self)` for a polynomial `k` given by its coefficients in ascending powers.
    pub fn compose(&self, k: &[Rat]) -> Poly {
        k.iter().rev().fold(Poly::zero(), |acc, c| acc.mul(self).add(&Poly::constant(c.clone())))
    }

    pub fn eval(&self, q: f64, p: f64) -> f64 {
        self.terms.iter().map(|(&(a, b), c)| c.to_f64().unwrap_or(f64::NAN) * q.powi(a as i32) * p.powi(b as i32)).sum()
    }

    pub fn render(&self) -> String {
        if self.terms.is_empty() {
            return "0".into();
        }
        self.terms
            .iter()
            .map(|(&(a, b), c)| format!("({c})*q1^{a}*p1^{b}"))
            .collect::<Vec<_>>()
            .join(" + ")
    }
}

/// Standard-ordered operator `Σ c_ab Q^a P^b` at a fixed ℏ.
#[derive(Clone, Debug, PartialEq)]
pub struct StdOp {
    pub hbar: Rat,
    pub terms: BTreeMap<(u32, u32), Cx>,
}

impl StdOp {
    pub fn zero(hbar: &Rat) -> StdOp {
        StdOp { hbar: hbar.clone(), terms: BTreeMap::new() }
    }

    pub fn identity(hbar: &Rat) -> StdOp {
        let mut r = StdOp::zero(hbar);
        r.add_term((0, 0), Cx::new(Rat::one(), Rat::zero()));
        r
    }

    fn add_term(&mut self, k: (u32, u32), c: Cx) {
        if c.is_zero() {
            return;
        }
        let e = self.terms.entry(k).or_insert_with(Cx::zero);
        *e = &*e + c;
        if e.is_zero() {
            self.terms.remove(&k);
        }
    }

    pub fn is_zero(&self) -> bool {
        self.terms.is_empty()
    }

    pub fn add(&self, o: &StdOp) -> StdOp {
        let mut r = self.clone();
        for (k, c) in &o.terms {
            r.add_term(*k, c.clone());
        }
        r
    }

    pub fn scale(&self, s: &Cx) -> StdOp {
        let mut r = StdOp::zero(&self.hbar);
        for (k, c) in &self.terms {
            r.add_term(*k, c * s);
        }
        r
    }

    pub fn sub(&self, o: &StdOp) -> StdOp {
        self.add(&o.scale(&Cx::new(-Rat::one(), Rat::zero())))
    }

    /// `P^b Q^c = Σ_j C(b,j) C(c,j) j! (-iℏ)^j Q^{c-j} P^{b-j}`.
    fn reorder(&self, b: u32, c: u32) -> Vec<((u32, u32), Cx)> {
        let mih = Cx::new(Rat::zero(), -self.hbar.clone());
        let mut pow = Cx::one();
        let mut out = Vec::new();
        for j in 0..=b.min(c) {
            let w = Rat::from_integer(binom(b, j) * binom(c, j) * fact(j));
            out.push(((c - j, b - j), pow.scale(w)));
            pow = &pow * &mih;
        }
        out
    }

    pub fn mul(&self, o: &StdOp) -> StdOp {
        let mut r = StdOp::zero(&self.hbar);
        for (&(a1, b1), x) in &self.terms {
            for (&(a2, b2), y) in &o.terms {
                let xy = x * y;
                for ((qa, pb), w) in self.reorder(b1, a2) {
                    r.add_term((a1 + qa, pb + b2), &xy * w);
                }
            }
        }
        r
    }

    pub fn q(hbar: &Rat) -> StdOp {
        let mut r = StdOp::zero(hbar);
        r.add_term((1, 0), Cx::one());
        r
    }

    pub fn p(hbar: &Rat) -> StdOp {
        let mut r = StdOp::zero(hbar);
        r.add_term((0, 1), Cx::one());
        r
    }
}

/// `W(q^a p^b) = 2^{-a} Σ_k C(a,k) Q^k P^b Q^{a-k}` in standard order.
pub fn weyl_monomial(a: u32, b: u32, hbar: &Rat) -> StdOp {
    let mut r = StdOp::zero(hbar);
    let qk = |k: u32| {
        let mut o = StdOp::zero(hbar);
        o.add_term((k, 0), Cx::one());
        o
    };
    let mut pb = StdOp::zero(hbar);
    pb.add_term((0, b), Cx::one());
    for k in 0..=a {
        let t = qk(k).mul(&pb).mul(&qk(a - k));
        r = r.add(&t.scale(&Cx::new(Rat::from_integer(binom(a, k)), Rat::zero())));
    }
    r.scale(&Cx::new(rat(1, 1 << a), Rat::zero()))
}

/// Weyl symmetrization by brute force: average of all orderings of `a` Q's and `b` P's.
pub fn weyl_by_orderings(a: u32, b: u32, hbar: &Rat) -> StdOp {
    let n = a + b;
    let mut total = StdOp::zero(hbar);
    let mut count = 0i64;
    for mask in 0u32..(1 << n) {
        if mask.count_ones() != a {
            continue;
        }
        let mut w = StdOp::identity(hbar);
        for i in 0..n {
            w = w.mul(&if mask >> i & 1 == 1 { StdOp::q(hbar) } else { StdOp::p(hbar) });
        }
        total = total.add(&w);
        count += 1;
    }
    total.scale(&Cx::new(rat(1, count), Rat::zero()))
}

/// Weyl quantization of a polynomial symbol, in standard order.
pub fn weyl_op(symbol: &Poly, hbar: &Rat) -> StdOp {
    let mut r = StdOp::zero(hbar);
    for (&(a, b), c) in &symbol.terms {
        r = r.add(&weyl_monomial(a, b, hbar).scale(&Cx::new(c.clone(), Rat::zero())));
    }
    r
}

/// Inverse of [`weyl_op`]: peel off the top-degree term repeatedly. Returns (real, imaginary) symbols.
pub fn weyl_symbol(op: &StdOp) -> (Poly, Poly) {
    let mut rest = op.clone();
    let (mut re, mut im) = (Poly::zero(), Poly::zero());
    while let Some((&(a, b), c)) = rest.terms.iter().max_by_key(|(&(a, b), _)| (a + b, a)) {
        let c = c.clone();
        re.add_term((a, b), c.re.clone());
        im.add_term((a, b), c.im.clone());
        rest = rest.sub(&weyl_monomial(a, b, &op.hbar).scale(&c));
    }
    (re, im)
}

fn solve_exact(mut m: Vec<Vec<Rat>>, mut rhs: Vec<Rat>) -> Vec<Rat> {
    let n = rhs.len();
    for col in 0..n {
        let piv = (col..n).find(|&r| !m[r][col].is_zero()).expect("Vandermonde system is nonsingular");
        m.swap(col, piv);
        rhs.swap(col, piv);
        for r in 0..n {
            if r != col && !m[r][col].is_zero() {
                let f = &m[r][col] / &m[col][col];
                for c in col..n {
                    let v = &f * &m[col][c];
                    m[r][c] -= v;
                }
                let v = &f * &rhs[col];
                rhs[r] -= v;
            }
        }
    }
    (0..n).map(|i| &rhs[i] / &m[i][i]).collect()
}

/// Coefficients of an even ℏ-expansion recovered from exact evaluations.
#[derive(Clone, Debug)]
pub struct Expansion {
    /// `coeffs[k]` is the symbol multiplying ℏ^{2k}.
    pub coeffs: Vec<Poly>,
    /// Mismatch at the extra evaluation point; exactly zero for polynomial input.
    pub residual: Rat,
    /// Largest imaginary part seen in any evaluated symbol.
    pub imaginary: Rat,
}

impl Expansion {
    pub fn coeff(&self, k: usize) -> Poly {
        self.coeffs.get(k).cloned().unwrap_or_default()
    }
}

const N_TERMS: usize = 6;

/// Evaluate a real symbol-valued function of ℏ at ℏ = 1..=7 and fit `Σ_{k<6} c_k ℏ^{2k}` exactly.
fn fit_even(f: &dyn Fn(&Rat) -> (Poly, Poly)) -> Expansion {
    let hs: Vec<Rat> = (1..=N_TERMS as i64 + 1).map(|k| rat(k, 1)).collect();
    let vals: Vec<(Poly, Poly)> = hs.iter().map(f).collect();
    let imaginary = vals.iter().flat_map(|(_, im)| im.terms.values().map(|c| c.abs())).fold(Rat::zero(), |m, c| if c > m { c } else { m });
    let mut keys: Vec<(u32, u32)> = vals.iter().flat_map(|(re, _)| re.terms.keys().copied()).collect();
    keys.sort();
    keys.dedup();
    let vand: Vec<Vec<Rat>> = hs[..N_TERMS].iter().map(|h| (0..N_TERMS).map(|k| (h * h).pow(k as i32)).collect()).collect();
    let mut coeffs = vec![Poly::zero(); N_TERMS];
    let mut residual = Rat::zero();
    for key in keys {
        let get = |i: usize| vals[i].0.terms.get(&key).cloned().unwrap_or_else(Rat::zero);
        let rhs: Vec<Rat> = (0..N_TERMS).map(get).collect();
        let c = solve_exact(vand.clone(), rhs);
        let h2 = &hs[N_TERMS] * &hs[N_TERMS];
        let pred = c.iter().enumerate().fold(Rat::zero(), |acc, (k, ck)| acc + ck * h2.pow(k as i32));
        let miss = (pred - get(N_TERMS)).abs();
        if miss > residual {
            residual = miss;
        }
        for (k, ck) in c.into_iter().enumerate() {
            coeffs[k].add_term(key, ck);
        }
    }
    while coeffs.len() > 1 && coeffs.last().is_some_and(|p| p.is_zero()) {
        coeffs.pop();
    }
    Expansion { coeffs, residual, imaginary }
}

/// ℏ-expansion of the symbol of `(i/ℏ)[Â, B̂]`.
pub fn star_commutator(a: &Poly, b: &Poly) -> Expansion {
    fit_even(&|h| {
        let (wa, wb) = (weyl_op(a, h), weyl_op(b, h));
        let c = wa.mul(&wb).sub(&wb.mul(&wa));
        weyl_symbol(&c.scale(&Cx::new(Rat::zero(), h.recip())))
    })
}

/// ℏ-expansion of the symbol of `(ÂB̂ + B̂Â)/2`.
pub fn star_anticommutator(a: &Poly, b: &Poly) -> Expansion {
    fit_even(&|h| {
        let (wa, wb) = (weyl_op(a, h), weyl_op(b, h));
        weyl_symbol(&wa.mul(&wb).add(&wb.mul(&wa)).scale(&Cx::new(rat(1, 2), Rat::zero())))
    })
}

/// ℏ-expansion of the symbol of `k(Ŝ)` for polynomial `k`.
pub fn composite_symbol(k: &[Rat], s: &Poly) -> Expansion {
    fit_even(&|h| {
        let ws = weyl_op(s, h);
        let mut acc = StdOp::zero(h);
        for c in k.iter().rev() {
            acc = acc.mul(&ws).add(&StdOp::identity(h).scale(&Cx::new(c.clone(), Rat::zero())));
        }
        weyl_symbol(&acc)
    })
}

fn poly_derivative(k: &[Rat]) -> Vec<Rat> {
    k.iter().enumerate().skip(1).map(|(i, c)| c * Rat::from_integer(BigInt::from(i))).collect()
}

/// Leading diffusion term `Δ_S k` for one degree of freedom, as an exact polynomial:
/// `(1/16) D²S·J⊗J·D²S k''(S) + (1/24) D²S·J⊗J·(DS⊗DS) k'''(S)`.
pub fn diffusion_poly(k: &[Rat], s: &Poly) -> Poly {
    let d = [s.dq(), s.dp()];
    let h = [[d[0].dq(), d[0].dp()], [d[1].dq(), d[1].dp()]];
    // J = [[0, 1], [-1, 0]]
    let jm = |a: usize, b: usize| -> i64 {
        match (a, b) {
            (0, 1) => 1,
            (1, 0) => -1,
            _ => 0,
        }
    };
    let mut t2 = Poly::zero();
    let mut t3 = Poly::zero();
    for a in 0..2 {
        for b in 0..2 {
            for a2 in 0..2 {
                for b2 in 0..2 {
                    let w = jm(a, a2) * jm(b, b2);
                    if w == 0 {
                        continue;
                    }
                    let w = Rat::from_integer(BigInt::from(w));
                    t2 = t2.add(&h[a][b].mul(&h[a2][b2]).scale(&w));
                    t3 = t3.add(&h[a][b].mul(&d[a2]).mul(&d[b2]).scale(&w));
                }
            }
        }
    }
    let k2 = poly_derivative(&poly_derivative(k));
    let k3 = poly_derivative(&k2);
    t2.mul(&s.compose(&k2)).scale(&rat(1, 16)).add(&t3.mul(&s.compose(&k3)).scale(&rat(1, 24)))
}

/// Hermitian matrix of a Weyl-quantized polynomial in the oscillator number basis.
#[derive(Clone, Debug)]
pub struct WeylMatrix {
    pub matrix: DMatrix<Complex64>,
    pub dim: usize,
    pub hbar: f64,
    pub symbol: Poly,
}

impl WeylMatrix {
    pub fn hermiticity_defect(&self) -> f64 {
        (&self.matrix - self.matrix.adjoint()).iter().fold(0.0, |m, z| m.max(z.norm()))
    }
}

fn ladder(dim: usize, hbar: f64) -> (DMatrix<Complex64>, DMatrix<Complex64>) {
    let r = (hbar / 2.0).sqrt();
    let mut a = DMatrix::<Complex64>::zeros(dim, dim);
    for n in 1..dim {
        a[(n - 1, n)] = Complex64::new((n as f64).sqrt(), 0.0);
    }
    let ad = a.adjoint();
    let q = (&a + &ad) * Complex64::new(r, 0.0);
    let p = (&ad - &a) * Complex64::new(0.0, r);
    (q, p)
}

fn mat_pow(m: &DMatrix<Complex64>, k: u32) -> DMatrix<Complex64> {
    (0..k).fold(DMatrix::identity(m.nrows(), m.ncols()), |acc, _| &acc * m)
}

/// Weyl quantization in the first `dim` oscillator states, exact within that block.
pub fn weyl_quantize(symbol: &Poly, hbar: f64, dim: usize) -> Result<WeylMatrix> {
    let deg = symbol.degree() as usize;
    if dim == 0 || deg >= dim {
        return Err(Error::DegreeTooHigh { degree: deg, dim });
    }
    // work in a padded basis so that the retained block is unaffected by truncation
    let big = dim + deg;
    let (q, p) = ladder(big, hbar);
    let mut m = DMatrix::<Complex64>::zeros(big, big);
    for (&(a, b), c) in &symbol.terms {
        let pb = mat_pow(&p, b);
        let mut w = DMatrix::<Complex64>::zeros(big, big);
        for k in 0..=a {
            let coef = binom(a, k).to_f64().unwrap() / 2f64.powi(a as i32);
            w += (mat_pow(&q, k) * &pb * mat_pow(&q, a - k)) * Complex64::new(coef, 0.0);
        }
        m += w * Complex64::new(c.to_f64().unwrap(), 0.0);
    }
    Ok(WeylMatrix { matrix: m.view((0, 0), (dim, dim)).into_owned(), dim, hbar, symbol: symbol.clone() })
}

/// Outcome of the composite-function check at one ℏ.
#[derive(Clone, Debug)]
pub struct ComposeSample {
    pub hbar: f64,
    pub residual: f64,
}

/// Matrix route to the composite expansion: `k(Ŝ)` by eigendecomposition against the
/// quantization of `k(S) - ℏ²Δ_S k(S)`, for each ℏ. Also returns the fitted log-log slope.
#[derive(Clone, Debug)]
pub struct ComposeReport {
    pub samples: Vec<ComposeSample>,
    pub slope: f64,
    /// Order of the first nonzero residual term from the exact algebra (ℏ power), or `None` if it vanishes identically.
    pub exact_order: Option<usize>,
}

pub fn weyl_compose(k: &[Rat], s: &Poly, hbars: &[f64], dim: usize) -> Result<ComposeReport> {
    let kdeg = k.len().saturating_sub(1);
    let sdeg = s.degree() as usize;
    let ks = s.compose(k);
    let delta = diffusion_poly(k, s);
    let kf: Vec<f64> = k.iter().map(|c| c.to_f64().unwrap()).collect();
    let mut samples = Vec::new();
    for &h in hbars {
        let big = dim + kdeg * sdeg;
        let sm = weyl_quantize(s, h, big)?.matrix;
        let eig = nalgebra::linalg::SymmetricEigen::new(sm);
        let vals = eig.eigenvalues.map(|x| Complex64::new(kf.iter().rev().fold(0.0, |acc, c| acc * x + c), 0.0));
        let kofs = &eig.eigenvectors * DMatrix::from_diagonal(&vals) * eig.eigenvectors.adjoint();
        let kofs = kofs.view((0, 0), (dim, dim)).into_owned();
        let pred = weyl_quantize(&ks, h, dim)?.matrix - weyl_quantize(&delta, h, dim)?.matrix * Complex64::new(h * h, 0.0);
        let residual = (kofs - pred).iter().fold(0.0f64, |m, z| m.max(z.norm()));
        samples.push(ComposeSample { hbar: h, residual });
    }
    let x: Vec<f64> = samples.iter().map(|c| c.hbar.ln()).collect();
    let y: Vec<f64> = samples.iter().map(|c| c.residual.max(1e-300).ln()).collect();
    let (_, slope, _) = crate::numerics::linear_fit(&x, &y);
    let exact = composite_symbol(k, s);
    let rest = exact.coeff(0).sub(&ks);
    let rest1 = exact.coeff(1).add(&delta);
    let exact_order = if !rest.is_zero() {
        Some(0)
    } else if !rest1.is_zero() {
        Some(2)
    } else {
        (2..exact.coeffs.len()).find(|&j| !exact.coeffs[j].is_zero()).map(|j| 2 * j)
    };
    Ok(ComposeReport { samples, slope, exact_order })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_commutator() {
        let h = rat(3, 1);
        let c = StdOp::q(&h).mul(&StdOp::p(&h)).sub(&StdOp::p(&h).mul(&StdOp::q(&h)));
        assert_eq!(c.terms.len(), 1);
        assert_eq!(c.terms[&(0, 0)], Cx::new(Rat::zero(), h));
    }

    #[test]
    fn symbol_round_trip() {
        let h = rat(2, 3);
        let s = Poly::monomial(3, 2).add(&Poly::monomial(1, 1).scale(&rat(5, 7)));
        let (re, im) = weyl_symbol(&weyl_op(&s, &h));
        assert_eq!(re, s);
        assert!(im.is_zero());
    }
}
