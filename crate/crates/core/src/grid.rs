//! Uniform 3D Dirichlet grid, scalar/spinor field storage and algebra.
//!
//! The computational domain is a cube of edge `L` holding `n` interior nodes
//! per axis. Fields vanish on the box faces (Dirichlet), which sit half a
//! spacing outside the first/last node plane: node `(i,j,k)` lives at
//! `origin + h*(i+1, j+1, k+1)` with `h = L/(n+1)`. All integrals are
//! midpoint-type quadratures `h^3 * sum`, consistent with the second-order
//! 7-point Laplacian stencil.

use crate::error::{Error, Result};
use num_complex::Complex64;
use num_traits::Zero;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// Uniform cubic grid with Dirichlet boundary.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    n: usize,
    length: f64,
    spacing: f64,
    origin: [f64; 3],
}

impl Grid {
    /// Build a grid with `n` interior nodes per axis in a box of edge `length`.
    pub fn new(n: usize, length: f64, origin: [f64; 3]) -> Result<Grid> {
        if n < 2 {
            return Err(Error::config(format!("grid needs n >= 2 nodes per axis, got {n}")));
        }
        if !(length > 0.0) || !length.is_finite() {
            return Err(Error::config(format!("box edge must be positive, got {length}")));
        }
        if origin.iter().any(|c| !c.is_finite()) {
            return Err(Error::config("grid origin must be finite".to_string()));
        }
        Ok(Grid { n, length, spacing: length / (n as f64 + 1.0), origin })
    }

    /// Grid centered so that the box midpoint lies at the coordinate origin.
    pub fn centered(n: usize, length: f64) -> Result<Grid> {
        Grid::new(n, length, [-length / 2.0, -length / 2.0, -length / 2.0])
    }

    pub fn n(&self) -> usize {
        self.n
    }
    pub fn length(&self) -> f64 {
        self.length
    }
    pub fn spacing(&self) -> f64 {
        self.spacing
    }
    pub fn origin(&self) -> [f64; 3] {
        self.origin
    }

    /// Total number of nodes, `n^3`.
    pub fn size(&self) -> usize {
        self.n * self.n * self.n
    }

    /// Quadrature weight per node.
    pub fn volume_element(&self) -> f64 {
        self.spacing * self.spacing * self.spacing
    }

    /// Coordinates of the box midpoint.
    pub fn center(&self) -> [f64; 3] {
        let half = self.length / 2.0;
        [self.origin[0] + half, self.origin[1] + half, self.origin[2] + half]
    }

    /// Row-major linear index of node `(i, j, k)`.
    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        (i * self.n + j) * self.n + k
    }

    /// Position of node `(i, j, k)`.
    #[inline]
    pub fn coord(&self, i: usize, j: usize, k: usize) -> [f64; 3] {
        let h = self.spacing;
        [
            self.origin[0] + h * (i as f64 + 1.0),
            self.origin[1] + h * (j as f64 + 1.0),
            self.origin[2] + h * (k as f64 + 1.0),
        ]
    }

    /// Iterate over `(i, j, k, linear_index)` in storage order.
    pub fn iter_nodes(&self) -> impl Iterator<Item = (usize, usize, usize, usize)> + '_ {
        let n = self.n;
        (0..n).flat_map(move |i| {
            (0..n).flat_map(move |j| (0..n).map(move |k| (i, j, k, (i * n + j) * n + k)))
        })
    }

    /// Whether `p` lies strictly inside the box.
    pub fn contains(&self, p: [f64; 3]) -> bool {
        (0..3).all(|a| p[a] > self.origin[a] && p[a] < self.origin[a] + self.length)
    }

    /// Exact eigenvalue of the discrete 1D Dirichlet `-d2/dx2` for mode `j` (0-based):
    /// `(2 - 2 cos(pi (j+1)/(n+1))) / h^2`.
    pub fn dirichlet_eigenvalue_1d(&self, j: usize) -> f64 {
        let theta = std::f64::consts::PI * (j as f64 + 1.0) / (self.n as f64 + 1.0);
        (2.0 - 2.0 * theta.cos()) / (self.spacing * self.spacing)
    }
}

/// Compensated (Neumaier) summation; deterministic regardless of build flags.
pub fn compensated_sum(values: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut comp = 0.0;
    for v in values {
        let t = sum + v;
        if sum.abs() >= v.abs() {
            comp += (sum - t) + v;
        } else {
            comp += (v - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

trait StencilScalar:
    Copy + Zero + std::ops::Add<Output = Self> + std::ops::Sub<Output = Self> + std::ops::Mul<f64, Output = Self>
{
}
impl StencilScalar for f64 {}
impl StencilScalar for Complex64 {}

/// 7-point Dirichlet Laplacian: values outside the box are zero.
fn laplacian_into<T: StencilScalar>(grid: &Grid, src: &[T], dst: &mut [T]) {
    let n = grid.n;
    let inv_h2 = 1.0 / (grid.spacing * grid.spacing);
    for i in 0..n {
        for j in 0..n {
            let row = (i * n + j) * n;
            for k in 0..n {
                let c = row + k;
                let mut acc = src[c] * (-6.0);
                if i > 0 {
                    acc = acc + src[c - n * n];
                }
                if i + 1 < n {
                    acc = acc + src[c + n * n];
                }
                if j > 0 {
                    acc = acc + src[c - n];
                }
                if j + 1 < n {
                    acc = acc + src[c + n];
                }
                if k > 0 {
                    acc = acc + src[c - 1];
                }
                if k + 1 < n {
                    acc = acc + src[c + 1];
                }
                dst[c] = acc * inv_h2;
            }
        }
    }
}

/// Real scalar field on a [`Grid`].
#[derive(Debug, Clone, PartialEq)]
pub struct RealField {
    grid: Grid,
    values: Vec<f64>,
}

impl RealField {
    pub fn zeros(grid: &Grid) -> RealField {
        RealField { grid: *grid, values: vec![0.0; grid.size()] }
    }

    pub fn constant(grid: &Grid, c: f64) -> RealField {
        RealField { grid: *grid, values: vec![c; grid.size()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<f64>) -> Result<RealField> {
        if values.len() != grid.size() {
            return Err(Error::config(format!(
                "field length {} does not match grid size {}",
                values.len(),
                grid.size()
            )));
        }
        Ok(RealField { grid: *grid, values })
    }

    /// Sample `f(x, y, z)` at every node.
    pub fn from_fn(grid: &Grid, mut f: impl FnMut([f64; 3]) -> f64) -> RealField {
        let mut values = vec![0.0; grid.size()];
        for (i, j, k, idx) in grid.iter_nodes() {
            values[idx] = f(grid.coord(i, j, k));
        }
        RealField { grid: *grid, values }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &[f64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [f64] {
        &mut self.values
    }

    /// Midpoint quadrature `h^3 * sum(f)`.
    pub fn integrate(&self) -> Result<f64> {
        if self.values.iter().any(|v| !v.is_finite()) {
            return Err(Error::numeric("integrate: field contains non-finite values".to_string()));
        }
        Ok(self.grid.volume_element() * compensated_sum(self.values.iter().copied()))
    }

    /// Discrete L2 inner product `h^3 * sum(a b)`.
    pub fn dot(&self, other: &RealField) -> f64 {
        debug_assert_eq!(self.grid, other.grid);
        self.grid.volume_element()
            * compensated_sum(self.values.iter().zip(&other.values).map(|(a, b)| a * b))
    }

    /// 7-point Dirichlet Laplacian.
    pub fn laplacian(&self) -> RealField {
        let mut out = vec![0.0; self.values.len()];
        laplacian_into(&self.grid, &self.values, &mut out);
        RealField { grid: self.grid, values: out }
    }

    /// Squared gradient magnitude per node: central differences in the
    /// interior, one-sided at the box faces.
    pub fn gradient_norm_sq(&self) -> RealField {
        let n = self.grid.n;
        let h = self.grid.spacing;
        let v = &self.values;
        let mut out = vec![0.0; v.len()];
        let stride = [n * n, n, 1];
        for (i, j, k, idx) in self.grid.iter_nodes() {
            let pos = [i, j, k];
            let mut acc = 0.0;
            for a in 0..3 {
                let s = stride[a];
                let d = if pos[a] == 0 {
                    (v[idx + s] - v[idx]) / h
                } else if pos[a] == n - 1 {
                    (v[idx] - v[idx - s]) / h
                } else {
                    (v[idx + s] - v[idx - s]) / (2.0 * h)
                };
                acc += d * d;
            }
            out[idx] = acc;
        }
        RealField { grid: self.grid, values: out }
    }

    pub fn map(&self, f: impl Fn(f64) -> f64) -> RealField {
        RealField { grid: self.grid, values: self.values.iter().map(|&v| f(v)).collect() }
    }

    pub fn zip_map(&self, other: &RealField, f: impl Fn(f64, f64) -> f64) -> RealField {
        debug_assert_eq!(self.grid, other.grid);
        RealField {
            grid: self.grid,
            values: self.values.iter().zip(&other.values).map(|(&a, &b)| f(a, b)).collect(),
        }
    }

    pub fn scaled(&self, c: f64) -> RealField {
        self.map(|v| c * v)
    }

    pub fn add(&self, other: &RealField) -> RealField {
        self.zip_map(other, |a, b| a + b)
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, v| m.max(v.abs()))
    }
}

/// Complex scalar field on a [`Grid`]; one spinor channel.
#[derive(Debug, Clone, PartialEq)]
pub struct ComplexField {
    grid: Grid,
    values: Vec<Complex64>,
}

impl ComplexField {
    pub fn zeros(grid: &Grid) -> ComplexField {
        ComplexField { grid: *grid, values: vec![Complex64::zero(); grid.size()] }
    }

    pub fn from_values(grid: &Grid, values: Vec<Complex64>) -> Result<ComplexField> {
        if values.len() != grid.size() {
            return Err(Error::config(format!(
                "field length {} does not match grid size {}",
                values.len(),
                grid.size()
            )));
        }
        Ok(ComplexField { grid: *grid, values })
    }

    pub fn from_fn(grid: &Grid, mut f: impl FnMut([f64; 3]) -> Complex64) -> ComplexField {
        let mut values = vec![Complex64::zero(); grid.size()];
        for (i, j, k, idx) in grid.iter_nodes() {
            values[idx] = f(grid.coord(i, j, k));
        }
        ComplexField { grid: *grid, values }
    }

    pub fn from_real(field: &RealField) -> ComplexField {
        ComplexField {
            grid: field.grid,
            values: field.values.iter().map(|&v| Complex64::new(v, 0.0)).collect(),
        }
    }

    pub fn grid(&self) -> &Grid {
        &self.grid
    }
    pub fn values(&self) -> &[Complex64] {
        &self.values
    }
    pub fn values_mut(&mut self) -> &mut [Complex64] {
        &mut self.values
    }

    /// Discrete L2 inner product `h^3 * sum(conj(a) b)`.
    pub fn inner(&self, other: &ComplexField) -> Complex64 {
        debug_assert_eq!(self.grid, other.grid);
        let re = compensated_sum(
            self.values.iter().zip(&other.values).map(|(a, b)| (a.conj() * b).re),
        );
        let im = compensated_sum(
            self.values.iter().zip(&other.values).map(|(a, b)| (a.conj() * b).im),
        );
        Complex64::new(re, im) * self.grid.volume_element()
    }

    pub fn norm_sq(&self) -> f64 {
        self.grid.volume_element() * compensated_sum(self.values.iter().map(|v| v.norm_sqr()))
    }

    pub fn laplacian(&self) -> ComplexField {
        let mut out = vec![Complex64::zero(); self.values.len()];
        laplacian_into(&self.grid, &self.values, &mut out);
        ComplexField { grid: self.grid, values: out }
    }

    pub fn conj(&self) -> ComplexField {
        ComplexField { grid: self.grid, values: self.values.iter().map(|v| v.conj()).collect() }
    }

    pub fn scaled(&self, c: Complex64) -> ComplexField {
        ComplexField { grid: self.grid, values: self.values.iter().map(|&v| c * v).collect() }
    }

    /// Per-node squared magnitude as a real field.
    pub fn abs_sq(&self) -> RealField {
        RealField { grid: self.grid, values: self.values.iter().map(|v| v.norm_sqr()).collect() }
    }
}

/// Two-component complex spinor field; the orbitals of the one-body
/// density matrix live here.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinorField {
    up: ComplexField,
    down: ComplexField,
}

impl SpinorField {
    pub fn new(up: ComplexField, down: ComplexField) -> Result<SpinorField> {
        if up.grid != down.grid {
            return Err(Error::config("spinor channels must share one grid".to_string()));
        }
        Ok(SpinorField { up, down })
    }

    pub fn zeros(grid: &Grid) -> SpinorField {
        SpinorField { up: ComplexField::zeros(grid), down: ComplexField::zeros(grid) }
    }

    pub fn grid(&self) -> &Grid {
        &self.up.grid
    }
    pub fn up(&self) -> &ComplexField {
        &self.up
    }
    pub fn down(&self) -> &ComplexField {
        &self.down
    }

    pub fn inner(&self, other: &SpinorField) -> Complex64 {
        self.up.inner(&other.up) + self.down.inner(&other.down)
    }

    pub fn norm_sq(&self) -> f64 {
        self.up.norm_sq() + self.down.norm_sq()
    }

    pub fn normalized(&self) -> Result<SpinorField> {
        let n = self.norm_sq().sqrt();
        if n <= 0.0 || !n.is_finite() {
            return Err(Error::numeric("cannot normalize a null spinor".to_string()));
        }
        let c = Complex64::new(1.0 / n, 0.0);
        Ok(SpinorField { up: self.up.scaled(c), down: self.down.scaled(c) })
    }

    pub fn laplacian(&self) -> SpinorField {
        SpinorField { up: self.up.laplacian(), down: self.down.laplacian() }
    }

    /// Discrete kinetic energy `1/2 <psi, -Lap psi>`; real and nonnegative
    /// for the symmetric Dirichlet stencil.
    pub fn kinetic_energy(&self) -> f64 {
        let lap = self.laplacian();
        -0.5 * (self.up.inner(&lap.up).re + self.down.inner(&lap.down).re)
    }

    pub fn axpy(&mut self, c: Complex64, other: &SpinorField) {
        for (a, b) in self.up.values.iter_mut().zip(&other.up.values) {
            *a += c * b;
        }
        for (a, b) in self.down.values.iter_mut().zip(&other.down.values) {
            *a += c * b;
        }
    }

    /// Flattened `[up; down]` layout used by the eigensolver.
    pub fn to_flat(&self) -> Vec<Complex64> {
        let mut v = Vec::with_capacity(2 * self.up.values.len());
        v.extend_from_slice(&self.up.values);
        v.extend_from_slice(&self.down.values);
        v
    }

    pub fn from_flat(grid: &Grid, flat: &[Complex64]) -> Result<SpinorField> {
        let m = grid.size();
        if flat.len() != 2 * m {
            return Err(Error::config("flat spinor length mismatch".to_string()));
        }
        Ok(SpinorField {
            up: ComplexField::from_values(grid, flat[..m].to_vec())?,
            down: ComplexField::from_values(grid, flat[m..].to_vec())?,
        })
    }
}

/// 3D type-I discrete sine transform on the interior nodes.
///
/// The DST-I basis diagonalizes the Dirichlet stencil exactly, which makes
/// an exact inverse of `(-1/2 Lap + tau)` available as a preconditioner.
/// Self-inverse up to the factor `(2/(n+1))^3`.
pub struct SineTransform {
    n: usize,
    fft: Arc<dyn Fft<f64>>,
}

impl SineTransform {
    pub fn new(n: usize) -> SineTransform {
        let mut planner = FftPlanner::new();
        let fft = planner.plan_fft_forward(2 * (n + 1));
        SineTransform { n, fft }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    /// In-place forward DST-I along every axis (no normalization).
    pub fn forward(&self, data: &mut [Complex64]) {
        let n = self.n;
        assert_eq!(data.len(), n * n * n);
        let m = 2 * (n + 1);
        let mut buf = vec![Complex64::zero(); m];
        let mut scratch = vec![Complex64::zero(); self.fft.get_inplace_scratch_len()];
        let half_i = Complex64::new(0.0, 0.5);
        for axis in 0..3 {
            let stride = match axis {
                0 => n * n,
                1 => n,
                _ => 1,
            };
            let (outer, inner) = match axis {
                0 => (n, n),
                1 => (n, n),
                _ => (n, n),
            };
            for a in 0..outer {
                for b in 0..inner {
                    let base = match axis {
                        0 => a * n + b,
                        1 => a * n * n + b,
                        _ => (a * n + b) * n,
                    };
                    buf[0] = Complex64::zero();
                    buf[n + 1] = Complex64::zero();
                    for t in 0..n {
                        let v = data[base + t * stride];
                        buf[t + 1] = v;
                        buf[m - 1 - t] = -v;
                    }
                    self.fft.process_with_scratch(&mut buf, &mut scratch);
                    for t in 0..n {
                        // X_{t+1} = -2i * DST_t, so DST_t = (i/2) X_{t+1}
                        data[base + t * stride] = half_i * buf[t + 1];
                    }
                }
            }
        }
    }

    /// Scale factor turning two forward transforms into the identity.
    pub fn inverse_scale(&self) -> f64 {
        let f = 2.0 / (self.n as f64 + 1.0);
        f * f * f
    }
}
