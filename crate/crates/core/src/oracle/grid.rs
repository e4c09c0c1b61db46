//! Sinc-DVR eigensolver for `-(ℏ²/2) d²/dq² + V(q)`.

use std::f64::consts::PI;

use nalgebra::{DMatrix, SymmetricEigen};

use crate::chart::Potential;
use crate::error::{Error, Result};

/// Uniform grid on `[lo, hi]` with `n` interior points (a power of two).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Grid1D {
    pub lo: f64,
    pub hi: f64,
    pub n: usize,
}

impl Grid1D {
    pub fn new(lo: f64, hi: f64, n: usize) -> Result<Grid1D> {
        if !(hi > lo) || !n.is_power_of_two() || n < 8 {
            return Err(Error::Config(format!("bad grid [{lo}, {hi}] with {n} points")));
        }
        Ok(Grid1D { lo, hi, n })
    }

    pub fn spacing(&self) -> f64 {
        (self.hi - self.lo) / (self.n + 1) as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n).map(|i| self.lo + (i + 1) as f64 * h).collect()
    }

    pub fn refined(&self) -> Grid1D {
        Grid1D { n: 2 * self.n, ..*self }
    }

    /// Interval wide enough that states below `e_max` have decayed by `e^{-40}` in amplitude,
    /// and a point count resolving the largest classical momentum.
    pub fn for_energy(pot: &Potential, e_max: f64, hbar: f64) -> Result<Grid1D> {
        let (a, b) = pot.turning_points(e_max)?;
        let step = 0.01 * (b - a);
        let reach = |start: f64, dir: f64| -> f64 {
            let mut q = start;
            let mut acc = 0.0;
            for _ in 0..100_000 {
                let v = pot.v(q + dir * step).unwrap_or(f64::INFINITY);
                q += dir * step;
                if !v.is_finite() {
                    break;
                }
                acc += (2.0 * (v - e_max)).max(0.0).sqrt() * step / hbar;
                if acc > 40.0 {
                    break;
                }
            }
            q
        };
        let (lo, hi) = (reach(a, -1.0), reach(b, 1.0));
        // the outer 10% on each side is the margin band; keep it outside the decay region
        let pad = 0.125 * (hi - lo);
        let (lo, hi) = (lo - pad, hi + pad);
        let vmin = pot.v_min;
        let pmax = (2.0 * (e_max - vmin)).sqrt();
        let need = 1.5 * (hi - lo) * pmax / (PI * hbar) + 32.0;
        let n = (need as usize).next_power_of_two().max(64);
        Grid1D::new(lo, hi, n)
    }
}

/// Sinc-DVR Hamiltonian matrix.
pub fn sinc_hamiltonian(v: &dyn Fn(f64) -> f64, hbar: f64, grid: &Grid1D) -> DMatrix<f64> {
    let h = grid.spacing();
    let pts = grid.points();
    let t = hbar * hbar / (2.0 * h * h);
    DMatrix::from_fn(grid.n, grid.n, |i, j| {
        if i == j {
            t * PI * PI / 3.0 + v(pts[i])
        } else {
            let d = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            t * 2.0 * sign / (d * d)
        }
    })
}

/// Converged eigenvalues with the refinement error estimate.
#[derive(Clone, Debug)]
pub struct Eigenlevels {
    pub levels: Vec<f64>,
    /// Max change of the retained levels under the last doubling.
    pub error: f64,
    pub grid: Grid1D,
    /// Largest wavefunction mass in the outer 10% bands, over retained states.
    pub edge_mass: f64,
}

fn levels_on(v: &dyn Fn(f64) -> f64, hbar: f64, grid: &Grid1D, count: usize) -> Result<Vec<f64>> {
    if count > grid.n {
        return Err(Error::Config(format!("{count} levels requested on a {}-point grid", grid.n)));
    }
    let mut e: Vec<f64> = sinc_hamiltonian(v, hbar, grid).symmetric_eigenvalues().iter().copied().collect();
    e.sort_by(f64::total_cmp);
    e.truncate(count);
    Ok(e)
}

fn edge_mass(v: &dyn Fn(f64) -> f64, hbar: f64, grid: &Grid1D, count: usize) -> f64 {
    let eig = SymmetricEigen::new(sinc_hamiltonian(v, hbar, grid));
    let mut order: Vec<usize> = (0..grid.n).collect();
    order.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let band = grid.n / 10;
    order
        .iter()
        .take(count)
        .map(|&k| {
            let col = eig.eigenvectors.column(k);
            (0..band).chain(grid.n - band..grid.n).map(|i| col[i] * col[i]).sum::<f64>()
        })
        .fold(0.0, f64::max)
}

/// Lowest `count` eigenvalues, doubling the grid until consecutive resolutions agree to `1e-10`.
pub fn eigenlevels(v: &dyn Fn(f64) -> f64, hbar: f64, grid: Grid1D, count: usize) -> Result<Eigenlevels> {
    const TOL: f64 = 1e-10;
    const MAX_N: usize = 4096;
    let mut g = grid;
    let mut prev = levels_on(v, hbar, &g, count)?;
    loop {
        let next_g = g.refined();
        if next_g.n > MAX_N {
            let est = f64::INFINITY;
            return Err(Error::OracleNotConverged { estimate: est, tolerance: TOL });
        }
        let next = levels_on(v, hbar, &next_g, count)?;
        let err = prev.iter().zip(&next).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if err < TOL {
            let edge = edge_mass(v, hbar, &g, count);
            if edge > 1e-12 {
                return Err(Error::Check(format!("eigenstates reach the grid margin (mass {edge:e}); widen the interval")));
            }
            return Ok(Eigenlevels { levels: next, error: err, grid: next_g, edge_mass: edge });
        }
        prev = next;
        g = next_g;
    }
}

/// Levels of `p²/2 + V` below `e_max` using an automatically sized grid.
pub fn levels_below(pot: &Potential, hbar: f64, e_max: f64) -> Result<Eigenlevels> {
    let grid = Grid1D::for_energy(pot, e_max, hbar)?;
    let v = |q: f64| pot.v(q).unwrap_or(f64::NAN);
    // semiclassical count with a small surplus
    let s_max = pot.action(e_max)?;
    let count = ((s_max / hbar) as usize + 3).min(grid.n / 2);
    let mut out = eigenlevels(&v, hbar, grid, count)?;
    let keep = out.levels.iter().take_while(|&&e| e <= e_max).count();
    out.levels.truncate(keep);
    Ok(out)
}

/// Fourier grid on one period `[0, period)` with an odd number of points.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct PeriodicGrid {
    pub period: f64,
    pub n: usize,
}

impl PeriodicGrid {
    pub fn new(period: f64, n: usize) -> Result<PeriodicGrid> {
        if !(period > 0.0) || n.is_multiple_of(2) || n < 9 {
            return Err(Error::Config(format!("bad periodic grid: period {period}, {n} points")));
        }
        Ok(PeriodicGrid { period, n })
    }

    pub fn points(&self) -> Vec<f64> {
        (0..self.n).map(|i| i as f64 * self.period / self.n as f64).collect()
    }

    pub fn refined(&self) -> PeriodicGrid {
        PeriodicGrid { n: 2 * self.n + 1, ..*self }
    }
}

/// Periodic Fourier-grid Hamiltonian (odd point count).
pub fn periodic_hamiltonian(v: &dyn Fn(f64) -> f64, hbar: f64, grid: &PeriodicGrid) -> DMatrix<f64> {
    let n = grid.n;
    let pts = grid.points();
    let k0 = 2.0 * PI / grid.period;
    let t = 0.5 * hbar * hbar * k0 * k0;
    DMatrix::from_fn(n, n, |i, j| {
        if i == j {
            t * ((n * n - 1) as f64) / 12.0 + v(pts[i])
        } else {
            let d = i as f64 - j as f64;
            let sign = if (i + j) % 2 == 0 { 1.0 } else { -1.0 };
            let x = PI * d / n as f64;
            t * sign * x.cos() / (2.0 * x.sin().powi(2))
        }
    })
}

/// Levels below `e_max` of `p²/2 + V` with `V` periodic, refining until they settle to `1e-10`.
pub fn periodic_levels(v: &dyn Fn(f64) -> f64, hbar: f64, period: f64, e_max: f64) -> Result<Vec<f64>> {
    const TOL: f64 = 1e-10;
    const MAX_N: usize = 4095;
    let solve = |g: &PeriodicGrid| -> Vec<f64> {
        let mut e: Vec<f64> = periodic_hamiltonian(v, hbar, g).symmetric_eigenvalues().iter().copied().collect();
        e.sort_by(f64::total_cmp);
        e
    };
    let mut g = PeriodicGrid::new(period, 63)?;
    let mut prev = solve(&g);
    loop {
        let next_g = g.refined();
        if next_g.n > MAX_N {
            return Err(Error::OracleNotConverged { estimate: f64::INFINITY, tolerance: TOL });
        }
        let next = solve(&next_g);
        let keep = next.iter().take_while(|&&e| e <= e_max).count();
        let err = prev.iter().zip(&next).take(keep + 1).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        if err < TOL && prev.len() > keep {
            return Ok(next[..keep].to_vec());
        }
        prev = next;
        g = next_g;
    }
}
