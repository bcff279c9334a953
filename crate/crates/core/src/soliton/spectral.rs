use std::f64::consts::PI;
use std::fmt;
use std::sync::Arc;

use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use serde::{Deserialize, Serialize};

use super::SolitonError;

/// Periodic grid on `[0, length)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Grid1D {
    pub n_pts: usize,
    pub length: f64,
}

impl Grid1D {
    pub fn new(n_pts: usize, length: f64) -> Result<Self, SolitonError> {
        if n_pts < 16 || !n_pts.is_power_of_two() {
            return Err(SolitonError::Grid(format!(
                "n_pts must be a power of two and at least 16, got {n_pts}"
            )));
        }
        if !(length > 0.0 && length.is_finite()) {
            return Err(SolitonError::Grid(format!("length must be positive, got {length}")));
        }
        Ok(Grid1D { n_pts, length })
    }

    pub fn spacing(&self) -> f64 {
        self.length / self.n_pts as f64
    }

    pub fn points(&self) -> Vec<f64> {
        let h = self.spacing();
        (0..self.n_pts).map(|i| i as f64 * h).collect()
    }

    /// Largest resolved angular wavenumber, `π / Δl`.
    pub fn k_max(&self) -> f64 {
        PI / self.spacing()
    }

    pub fn sample(&self, f: impl Fn(f64) -> f64) -> Vec<f64> {
        self.points().into_iter().map(f).collect()
    }
}

/// Samples of `v: [0, Λ) → ℝ^p`, one column per component.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Field {
    pub grid: Grid1D,
    pub comps: Vec<Vec<f64>>,
}

pub type VectorField1D = Field;
pub type CovectorField1D = Field;

impl Field {
    pub fn new(grid: Grid1D, comps: Vec<Vec<f64>>) -> Result<Self, SolitonError> {
        if comps.is_empty() {
            return Err(SolitonError::Shape("a field needs at least one component".into()));
        }
        if let Some(c) = comps.iter().find(|c| c.len() != grid.n_pts) {
            return Err(SolitonError::Shape(format!(
                "component has {} samples, grid has {}",
                c.len(),
                grid.n_pts
            )));
        }
        if comps.iter().flatten().any(|v| !v.is_finite()) {
            return Err(SolitonError::Shape("field samples must be finite".into()));
        }
        Ok(Field { grid, comps })
    }

    pub fn zeros(grid: Grid1D, p: usize) -> Self {
        Field {
            grid,
            comps: vec![vec![0.0; grid.n_pts]; p],
        }
    }

    pub fn from_fn(grid: Grid1D, p: usize, f: impl Fn(usize, f64) -> f64) -> Self {
        let pts = grid.points();
        Field {
            grid,
            comps: (0..p).map(|c| pts.iter().map(|&l| f(c, l)).collect()).collect(),
        }
    }

    pub fn p(&self) -> usize {
        self.comps.len()
    }

    pub fn check_compatible(&self, other: &Field) -> Result<(), SolitonError> {
        if self.grid != other.grid || self.p() != other.p() {
            return Err(SolitonError::Mismatch {
                left: (self.grid.n_pts, self.grid.length, self.p()),
                right: (other.grid.n_pts, other.grid.length, other.p()),
            });
        }
        Ok(())
    }

    pub fn map2(&self, other: &Field, f: impl Fn(f64, f64) -> f64) -> Field {
        Field {
            grid: self.grid,
            comps: self
                .comps
                .iter()
                .zip(&other.comps)
                .map(|(a, b)| a.iter().zip(b).map(|(x, y)| f(*x, *y)).collect())
                .collect(),
        }
    }

    pub fn add(&self, other: &Field) -> Field {
        self.map2(other, |a, b| a + b)
    }

    pub fn sub(&self, other: &Field) -> Field {
        self.map2(other, |a, b| a - b)
    }

    pub fn scale(&self, s: f64) -> Field {
        Field {
            grid: self.grid,
            comps: self.comps.iter().map(|c| c.iter().map(|x| s * x).collect()).collect(),
        }
    }

    /// `self + s·other`.
    pub fn axpy(&self, s: f64, other: &Field) -> Field {
        self.map2(other, |a, b| a + s * b)
    }

    /// Pointwise Euclidean dot product.
    pub fn dot(&self, other: &Field) -> Vec<f64> {
        let mut out = vec![0.0; self.grid.n_pts];
        for (a, b) in self.comps.iter().zip(&other.comps) {
            for (o, (x, y)) in out.iter_mut().zip(a.iter().zip(b)) {
                *o += x * y;
            }
        }
        out
    }

    /// Pointwise product with a scalar field.
    pub fn times(&self, s: &[f64]) -> Field {
        Field {
            grid: self.grid,
            comps: self
                .comps
                .iter()
                .map(|c| c.iter().zip(s).map(|(x, y)| x * y).collect())
                .collect(),
        }
    }

    pub fn max_abs(&self) -> f64 {
        self.comps.iter().flatten().fold(0.0, |m, v| m.max(v.abs()))
    }

    pub fn is_finite(&self) -> bool {
        self.comps.iter().flatten().all(|v| v.is_finite())
    }

    /// Discrete L² pairing `Σ_l Σ_c a_c b_c Δl`.
    pub fn pairing(&self, other: &Field) -> f64 {
        self.dot(other).iter().sum::<f64>() * self.grid.spacing()
    }
}

impl fmt::Display for Field {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "field(p={}, n={}, L={})", self.p(), self.grid.n_pts, self.grid.length)
    }
}

/// FFT plans and wavenumbers for one grid. The Nyquist mode is dropped by
/// odd-order derivatives and by the antiderivative.
#[derive(Clone)]
pub struct Spectral {
    grid: Grid1D,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
    k: Vec<f64>,
}

impl fmt::Debug for Spectral {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Spectral").field("grid", &self.grid).finish()
    }
}

impl Spectral {
    pub fn new(grid: Grid1D) -> Self {
        let n = grid.n_pts;
        let mut planner = FftPlanner::new();
        let fwd = planner.plan_fft_forward(n);
        let inv = planner.plan_fft_inverse(n);
        let k0 = 2.0 * PI / grid.length;
        let k = (0..n)
            .map(|j| {
                if j < n / 2 {
                    j as f64 * k0
                } else if j == n / 2 {
                    0.0
                } else {
                    (j as f64 - n as f64) * k0
                }
            })
            .collect();
        Spectral { grid, fwd, inv, k }
    }

    pub fn grid(&self) -> Grid1D {
        self.grid
    }

    fn forward(&self, f: &[f64]) -> Vec<Complex<f64>> {
        let mut buf: Vec<Complex<f64>> = f.iter().map(|&x| Complex::new(x, 0.0)).collect();
        self.fwd.process(&mut buf);
        buf
    }

    fn inverse(&self, mut buf: Vec<Complex<f64>>) -> Vec<f64> {
        self.inv.process(&mut buf);
        let s = 1.0 / self.grid.n_pts as f64;
        buf.iter().map(|c| c.re * s).collect()
    }

    /// `order`-th spectral derivative of one column.
    pub fn deriv(&self, f: &[f64], order: u32) -> Vec<f64> {
        if order == 0 {
            return f.to_vec();
        }
        let n = self.grid.n_pts;
        let kn = PI * n as f64 / self.grid.length;
        let mut c = self.forward(f);
        for (j, cj) in c.iter_mut().enumerate() {
            let k = if j == n / 2 {
                if order % 2 == 1 {
                    0.0
                } else {
                    kn
                }
            } else {
                self.k[j]
            };
            *cj *= Complex::new(0.0, k).powu(order);
        }
        self.inverse(c)
    }

    /// Zero-mean antiderivative of one column, with the removed mean.
    pub fn antideriv(&self, f: &[f64]) -> (Vec<f64>, f64) {
        let n = self.grid.n_pts;
        let mut c = self.forward(f);
        let mean = c[0].re / n as f64;
        for (j, cj) in c.iter_mut().enumerate() {
            if j == 0 || j == n / 2 {
                *cj = Complex::new(0.0, 0.0);
            } else {
                *cj /= Complex::new(0.0, self.k[j]);
            }
        }
        (self.inverse(c), mean)
    }

    /// Trigonometric interpolant shifted by `s`: returns `f(l + s)`.
    pub fn shift(&self, f: &[f64], s: f64) -> Vec<f64> {
        let n = self.grid.n_pts;
        let mut c = self.forward(f);
        for (j, cj) in c.iter_mut().enumerate() {
            if j == n / 2 {
                *cj *= (PI * n as f64 / self.grid.length * s).cos();
            } else {
                *cj *= Complex::from_polar(1.0, self.k[j] * s);
            }
        }
        self.inverse(c)
    }

    pub fn ddx(&self, f: &Field) -> Field {
        self.ddx_n(f, 1)
    }

    pub fn ddx_n(&self, f: &Field, order: u32) -> Field {
        Field {
            grid: f.grid,
            comps: f.comps.iter().map(|c| self.deriv(c, order)).collect(),
        }
    }

    /// Zero-mean antiderivative, columnwise. Also returns the largest
    /// absolute mean that was projected out.
    pub fn dinv(&self, f: &Field) -> (Field, f64) {
        let mut worst: f64 = 0.0;
        let comps = f
            .comps
            .iter()
            .map(|c| {
                let (a, m) = self.antideriv(c);
                worst = worst.max(m.abs());
                a
            })
            .collect();
        (Field { grid: f.grid, comps }, worst)
    }

    pub fn translate(&self, f: &Field, s: f64) -> Field {
        Field {
            grid: f.grid,
            comps: f.comps.iter().map(|c| self.shift(c, -s)).collect(),
        }
    }
}
