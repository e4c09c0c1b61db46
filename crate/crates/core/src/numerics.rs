//! Quadrature, Chebyshev and Fourier helpers, an 8th-order Runge–Kutta step, and small fits.

use std::f64::consts::PI;
use std::sync::Arc;

use num_complex::Complex64;
use rustfft::FftPlanner;

/// Gauss–Legendre nodes and weights on [-1, 1].
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    for i in 0..n.div_ceil(2) {
        let mut z = (PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (mut p0, mut p1) = (1.0, z);
            for k in 2..=n {
                let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
                p0 = p1;
                p1 = p2;
            }
            let pn = if n == 0 { 1.0 } else if n == 1 { z } else { p1 };
            let pm = if n == 1 { 1.0 } else { p0 };
            dp = n as f64 * (z * pn - pm) / (z * z - 1.0);
            let dz = pn / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        w[i] = 2.0 / ((1.0 - z * z) * dp * dp);
        w[n - 1 - i] = w[i];
    }
    (x, w)
}

/// Chebyshev points of the first kind on [a, b], increasing.
pub fn chebyshev_nodes(n: usize, a: f64, b: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            let x = -(PI * (k as f64 + 0.5) / n as f64).cos();
            0.5 * (a + b) + 0.5 * (b - a) * x
        })
        .collect()
}

/// A Chebyshev series on [a, b].
#[derive(Clone, Debug, PartialEq)]
pub struct Chebyshev {
    pub a: f64,
    pub b: f64,
    pub coeffs: Vec<f64>,
}

impl Chebyshev {
    /// Interpolant through values at `chebyshev_nodes(values.len(), a, b)`.
    pub fn fit(a: f64, b: f64, values: &[f64]) -> Chebyshev {
        let n = values.len();
        let mut coeffs = vec![0.0; n];
        for (j, c) in coeffs.iter_mut().enumerate() {
            let mut s = 0.0;
            for (k, v) in values.iter().enumerate() {
                // nodes are increasing: x_k = -cos(θ_k) = cos(π - θ_k)
                let theta = PI - PI * (k as f64 + 0.5) / n as f64;
                s += v * (j as f64 * theta).cos();
            }
            *c = s * 2.0 / n as f64;
        }
        coeffs[0] *= 0.5;
        Chebyshev { a, b, coeffs }
    }

    pub fn eval(&self, s: f64) -> f64 {
        let x = (2.0 * s - self.a - self.b) / (self.b - self.a);
        // Clenshaw
        let (mut b1, mut b2) = (0.0, 0.0);
        for &c in self.coeffs.iter().skip(1).rev() {
            let t = 2.0 * x * b1 - b2 + c;
            b2 = b1;
            b1 = t;
        }
        x * b1 - b2 + self.coeffs[0]
    }

    pub fn derivative(&self) -> Chebyshev {
        let n = self.coeffs.len();
        if n <= 1 {
            return Chebyshev { a: self.a, b: self.b, coeffs: vec![0.0] };
        }
        let mut d = vec![0.0; n + 1];
        for k in (1..n).rev() {
            d[k - 1] = d[k + 1] + 2.0 * k as f64 * self.coeffs[k];
        }
        d[0] *= 0.5;
        d.truncate(n - 1);
        let scale = 2.0 / (self.b - self.a);
        Chebyshev { a: self.a, b: self.b, coeffs: d.into_iter().map(|c| c * scale).collect() }
    }

    /// Drop the tail once the coefficients reach their noise plateau.
    pub fn chop(&self) -> Chebyshev {
        let n = self.coeffs.len();
        if n < 8 {
            return self.clone();
        }
        let scale = self.coeffs.iter().fold(0.0f64, |m, c| m.max(c.abs()));
        let floor = self.coeffs[3 * n / 4..].iter().fold(0.0f64, |m, c| m.max(c.abs())).max(1e-15 * scale);
        let keep = self.coeffs.iter().rposition(|c| c.abs() > 4.0 * floor).map_or(1, |k| k + 1);
        Chebyshev { a: self.a, b: self.b, coeffs: self.coeffs[..keep].to_vec() }
    }

    /// Antiderivative vanishing at `s0`.
    pub fn integral(&self, s0: f64) -> Chebyshev {
        let n = self.coeffs.len();
        let c = |k: usize| if k < n { self.coeffs[k] } else { 0.0 };
        let mut out = vec![0.0; n + 1];
        for k in 1..=n {
            let prev = if k == 1 { 2.0 * c(0) } else { c(k - 1) };
            out[k] = (prev - c(k + 1)) / (2.0 * k as f64);
        }
        let scale = 0.5 * (self.b - self.a);
        let mut ch = Chebyshev { a: self.a, b: self.b, coeffs: out.into_iter().map(|v| v * scale).collect() };
        let shift = ch.eval(s0);
        ch.coeffs[0] -= shift;
        ch
    }
}

/// Uniform periodic grid helpers on [0, 2π).
pub struct Fourier {
    n: usize,
    fwd: Arc<dyn rustfft::Fft<f64>>,
    inv: Arc<dyn rustfft::Fft<f64>>,
}

impl Fourier {
    pub fn new(n: usize) -> Fourier {
        let mut planner = FftPlanner::new();
        Fourier { n, fwd: planner.plan_fft_forward(n), inv: planner.plan_fft_inverse(n) }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    pub fn grid(&self) -> Vec<f64> {
        (0..self.n).map(|j| 2.0 * PI * j as f64 / self.n as f64).collect()
    }

    fn wavenumber(&self, k: usize) -> f64 {
        let n = self.n as i64;
        let k = k as i64;
        (if k <= n / 2 { k } else { k - n }) as f64
    }

    /// Coefficients `c_k` with `f(τ) = Σ c_k e^{ikτ}`.
    pub fn coefficients(&self, values: &[f64]) -> Vec<Complex64> {
        let mut buf: Vec<Complex64> = values.iter().map(|&v| Complex64::new(v, 0.0)).collect();
        self.fwd.process(&mut buf);
        let s = 1.0 / self.n as f64;
        buf.iter().map(|c| c * s).collect()
    }

    pub fn synthesize(&self, coeffs: &[Complex64]) -> Vec<Complex64> {
        let mut buf = coeffs.to_vec();
        self.inv.process(&mut buf);
        buf
    }

    /// m-th derivative on the grid (Nyquist mode dropped for odd m).
    pub fn derivative(&self, values: &[f64], m: u32) -> Vec<f64> {
        let mut c = self.coefficients(values);
        for (k, ck) in c.iter_mut().enumerate() {
            let kk = self.wavenumber(k);
            if m % 2 == 1 && self.n.is_multiple_of(2) && k == self.n / 2 {
                *ck = Complex64::new(0.0, 0.0);
                continue;
            }
            *ck *= Complex64::new(0.0, kk).powi(m as i32);
        }
        self.synthesize(&c).iter().map(|z| z.re).collect()
    }

    pub fn mean(&self, values: &[f64]) -> f64 {
        values.iter().sum::<f64>() / self.n as f64
    }

    /// `∫_0^τ f` on the grid for the oscillatory part, plus `mean·τ` for the mean.
    pub fn antiderivative(&self, values: &[f64]) -> Vec<f64> {
        let c = self.coefficients(values);
        let mut d = vec![Complex64::new(0.0, 0.0); self.n];
        let mut at_zero = Complex64::new(0.0, 0.0);
        for k in 1..self.n {
            if self.n.is_multiple_of(2) && k == self.n / 2 {
                continue;
            }
            let kk = self.wavenumber(k);
            d[k] = c[k] / Complex64::new(0.0, kk);
            at_zero += d[k];
        }
        let osc = self.synthesize(&d);
        let grid = self.grid();
        osc.iter().zip(grid).map(|(z, t)| z.re - at_zero.re + c[0].re * t).collect()
    }

    /// Trigonometric interpolation at arbitrary τ.
    pub fn interpolate(&self, coeffs: &[Complex64], tau: f64) -> f64 {
        let mut s = coeffs[0].re;
        for k in 1..self.n {
            let kk = self.wavenumber(k);
            let w = if self.n.is_multiple_of(2) && k == self.n / 2 { 0.5 } else { 1.0 };
            let e = Complex64::from_polar(1.0, kk * tau);
            s += w * (coeffs[k] * e).re;
        }
        if self.n.is_multiple_of(2) {
            let k = self.n / 2;
            s += 0.5 * (coeffs[k] * Complex64::from_polar(1.0, k as f64 * tau)).re;
        }
        s
    }
}

/// Butcher tableau of the Fehlberg 7(8) pair; the 8th-order weights are used.
pub struct Rk8;

impl Rk8 {
    pub const C: [f64; 13] = [0.0, 2.0 / 27.0, 1.0 / 9.0, 1.0 / 6.0, 5.0 / 12.0, 0.5, 5.0 / 6.0, 1.0 / 6.0, 2.0 / 3.0, 1.0 / 3.0, 1.0, 0.0, 1.0];
    pub const B: [f64; 13] = [0.0, 0.0, 0.0, 0.0, 0.0, 34.0 / 105.0, 9.0 / 35.0, 9.0 / 35.0, 9.0 / 280.0, 9.0 / 280.0, 0.0, 41.0 / 840.0, 41.0 / 840.0];

    pub fn a() -> [[f64; 12]; 13] {
        let mut a = [[0.0; 12]; 13];
        a[1][0] = 2.0 / 27.0;
        a[2][..2].copy_from_slice(&[1.0 / 36.0, 1.0 / 12.0]);
        a[3][..3].copy_from_slice(&[1.0 / 24.0, 0.0, 1.0 / 8.0]);
        a[4][..4].copy_from_slice(&[5.0 / 12.0, 0.0, -25.0 / 16.0, 25.0 / 16.0]);
        a[5][..5].copy_from_slice(&[1.0 / 20.0, 0.0, 0.0, 1.0 / 4.0, 1.0 / 5.0]);
        a[6][..6].copy_from_slice(&[-25.0 / 108.0, 0.0, 0.0, 125.0 / 108.0, -65.0 / 27.0, 125.0 / 54.0]);
        a[7][..7].copy_from_slice(&[31.0 / 300.0, 0.0, 0.0, 0.0, 61.0 / 225.0, -2.0 / 9.0, 13.0 / 900.0]);
        a[8][..8].copy_from_slice(&[2.0, 0.0, 0.0, -53.0 / 6.0, 704.0 / 45.0, -107.0 / 9.0, 67.0 / 90.0, 3.0]);
        a[9][..9].copy_from_slice(&[-91.0 / 108.0, 0.0, 0.0, 23.0 / 108.0, -976.0 / 135.0, 311.0 / 54.0, -19.0 / 60.0, 17.0 / 6.0, -1.0 / 12.0]);
        a[10][..10].copy_from_slice(&[
            2383.0 / 4100.0,
            0.0,
            0.0,
            -341.0 / 164.0,
            4496.0 / 1025.0,
            -301.0 / 82.0,
            2133.0 / 4100.0,
            45.0 / 82.0,
            45.0 / 164.0,
            18.0 / 41.0,
        ]);
        a[11][..11].copy_from_slice(&[3.0 / 205.0, 0.0, 0.0, 0.0, 0.0, -6.0 / 41.0, -3.0 / 205.0, -3.0 / 41.0, 3.0 / 41.0, 6.0 / 41.0, 0.0]);
        a[12][..12].copy_from_slice(&[
            -1777.0 / 4100.0,
            0.0,
            0.0,
            -341.0 / 164.0,
            4496.0 / 1025.0,
            -289.0 / 82.0,
            2193.0 / 4100.0,
            51.0 / 82.0,
            33.0 / 164.0,
            12.0 / 41.0,
            0.0,
            1.0,
        ]);
        a
    }
}

/// One 8th-order step for a state of generic vector type.
pub fn rk8_step<S, F>(y: &S, h: f64, f: &F, axpy: &dyn Fn(&S, f64, &S) -> S) -> S
where
    S: Clone,
    F: Fn(&S) -> S,
{
    let a = Rk8::a();
    let mut k: Vec<S> = Vec::with_capacity(13);
    for i in 0..13 {
        let mut yi = y.clone();
        for (j, kj) in k.iter().enumerate() {
            if a[i][j] != 0.0 {
                yi = axpy(&yi, h * a[i][j], kj);
            }
        }
        k.push(f(&yi));
    }
    let mut out = y.clone();
    for (i, ki) in k.iter().enumerate() {
        if Rk8::B[i] != 0.0 {
            out = axpy(&out, h * Rk8::B[i], ki);
        }
    }
    out
}

/// Ordinary least squares line `y = a + b x`; returns (a, b, standard error of b).
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxx: f64 = x.iter().map(|v| (v - mx).powi(2)).sum();
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let b = sxy / sxx;
    let a = my - b * mx;
    let resid: f64 = x.iter().zip(y).map(|(xi, yi)| (yi - a - b * xi).powi(2)).sum();
    let se = if x.len() > 2 { (resid / (n - 2.0) / sxx).sqrt() } else { 0.0 };
    (a, b, se)
}

/// Two-sided 97.5% Student-t quantile for small degrees of freedom (table plus normal tail).
pub fn t_quantile_975(dof: usize) -> f64 {
    const T: [f64; 30] = [
        12.706, 4.303, 3.182, 2.776, 2.571, 2.447, 2.365, 2.306, 2.262, 2.228, 2.201, 2.179, 2.160, 2.145, 2.131, 2.120, 2.110, 2.101, 2.093,
        2.086, 2.080, 2.074, 2.069, 2.064, 2.060, 2.056, 2.052, 2.048, 2.045, 2.042,
    ];
    if dof == 0 {
        f64::INFINITY
    } else if dof <= 30 {
        T[dof - 1]
    } else {
        1.96
    }
}

/// Solve `g(x) = 0` on a bracket by safeguarded Newton (bisection fallback).
pub fn newton_bisect(g: &dyn Fn(f64) -> (f64, f64), mut lo: f64, mut hi: f64, tol: f64) -> Option<f64> {
    let (glo, _) = g(lo);
    let (ghi, _) = g(hi);
    if glo.is_nan() || ghi.is_nan() {
        return None;
    }
    if glo == 0.0 {
        return Some(lo);
    }
    if ghi == 0.0 {
        return Some(hi);
    }
    if glo.signum() == ghi.signum() {
        return None;
    }
    let increasing = ghi > glo;
    let mut x = 0.5 * (lo + hi);
    for _ in 0..200 {
        let (gx, dgx) = g(x);
        if gx == 0.0 {
            return Some(x);
        }
        if (gx > 0.0) == increasing {
            hi = x;
        } else {
            lo = x;
        }
        let mut next = if dgx != 0.0 { x - gx / dgx } else { f64::NAN };
        if !(next > lo && next < hi) {
            next = 0.5 * (lo + hi);
        }
        if (next - x).abs() <= tol * (1.0 + x.abs()) || (hi - lo) <= tol * (1.0 + x.abs()) {
            return Some(next);
        }
        x = next;
    }
    Some(x)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn gauss_legendre_integrates_polynomials() {
        let (x, w) = gauss_legendre(8);
        let s: f64 = x.iter().zip(&w).map(|(x, w)| w * x.powi(14)).sum();
        assert_relative_eq!(s, 2.0 / 15.0, epsilon = 1e-14);
    }

    #[test]
    fn chebyshev_calculus() {
        let f = |s: f64| (1.3 * s).sin() + s * s;
        let nodes = chebyshev_nodes(30, 0.2, 1.7);
        let ch = Chebyshev::fit(0.2, 1.7, &nodes.iter().map(|&s| f(s)).collect::<Vec<_>>());
        assert_relative_eq!(ch.eval(0.9), f(0.9), epsilon = 1e-14);
        assert_relative_eq!(ch.derivative().eval(0.9), 1.3 * (1.17f64).cos() + 1.8, epsilon = 1e-12);
        let int = ch.integral(0.2).eval(1.0);
        let exact = (-(1.3f64).cos() + (0.26f64).cos()) / 1.3 + (1.0 - 0.008) / 3.0;
        assert_relative_eq!(int, exact, epsilon = 1e-14);
    }

    #[test]
    fn fourier_calculus() {
        let fr = Fourier::new(64);
        let g = fr.grid();
        let v: Vec<f64> = g.iter().map(|t| 0.3 + (2.0 * t).cos() + 0.5 * (3.0 * t).sin()).collect();
        let d = fr.derivative(&v, 1);
        for (t, dv) in g.iter().zip(&d) {
            assert_relative_eq!(*dv, -2.0 * (2.0 * t).sin() + 1.5 * (3.0 * t).cos(), epsilon = 1e-12);
        }
        let a = fr.antiderivative(&v);
        for (t, av) in g.iter().zip(&a) {
            let exact = 0.3 * t + 0.5 * (2.0 * t).sin() - (0.5 / 3.0) * ((3.0 * t).cos() - 1.0);
            assert_relative_eq!(*av, exact, epsilon = 1e-12);
        }
        let c = fr.coefficients(&v);
        assert_relative_eq!(fr.interpolate(&c, 0.77), 0.3 + (1.54f64).cos() + 0.5 * (2.31f64).sin(), epsilon = 1e-13);
    }

    #[test]
    fn rk8_tableau_is_consistent() {
        let a = Rk8::a();
        for i in 0..13 {
            assert_relative_eq!(a[i].iter().sum::<f64>(), Rk8::C[i], epsilon = 1e-14);
        }
        assert_relative_eq!(Rk8::B.iter().sum::<f64>(), 1.0, epsilon = 1e-15);
    }

    #[test]
    fn rk8_has_eighth_order() {
        let f = |y: &Vec<f64>| vec![y[1], -y[0]];
        let axpy = |a: &Vec<f64>, s: f64, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x + s * y).collect::<Vec<f64>>();
        let err = |n: usize| {
            let h = 4.0 / n as f64;
            let mut y = vec![1.0, 0.0];
            for _ in 0..n {
                y = rk8_step(&y, h, &f, &axpy);
            }
            (y[0] - 4f64.cos()).abs()
        };
        let ratio = err(16) / err(32);
        assert!(ratio > 200.0 && ratio < 320.0, "ratio {ratio}");
    }

    #[test]
    fn line_fit() {
        let x = [0.0, 1.0, 2.0, 3.0];
        let y = [1.0, 3.0, 5.0, 7.0];
        let (a, b, se) = linear_fit(&x, &y);
        assert_relative_eq!(a, 1.0, epsilon = 1e-14);
        assert_relative_eq!(b, 2.0, epsilon = 1e-14);
        assert!(se < 1e-12);
    }
}
