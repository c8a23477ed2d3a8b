//! Periodic lattice geometry, complex fields, difference calculus and the
//! discrete Fourier transform that diagonalizes translation-invariant
//! operators on the torus (Z/L)^d.
//!
//! Sites are indexed lexicographically with `x_0` the slowest-varying
//! coordinate. Forward transforms are unnormalized with kernel
//! `exp(-i xi.x)`; inverse transforms carry the `1/N`. With that choice the
//! plane wave `x -> exp(i xi.x)` transforms to `N` at its own frequency and
//! a forward difference acts on coefficients as multiplication by
//! `q_j(xi) = exp(i xi_j) - 1`.

use std::io::Write;
use std::sync::Arc;

use num_traits::Zero;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::scalar::{Complex, Real};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct TorusGrid {
    dim: usize,
    side: usize,
    sites: usize,
}

impl TorusGrid {
    pub fn new(dim: usize, side: usize) -> Result<Self> {
        if dim == 0 {
            return Err(Error::InvalidGrid("dimension must be at least 1".into()));
        }
        if side < 2 {
            return Err(Error::InvalidGrid(format!("side length {side} < 2")));
        }
        let sites = (0..dim)
            .try_fold(1usize, |acc, _| acc.checked_mul(side))
            .ok_or_else(|| Error::InvalidGrid(format!("{side}^{dim} sites overflow")))?;
        Ok(Self { dim, side, sites })
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn side(&self) -> usize {
        self.side
    }

    pub fn sites(&self) -> usize {
        self.sites
    }

    /// Index step for a unit move along `axis`.
    pub fn stride(&self, axis: usize) -> usize {
        self.side.pow((self.dim - 1 - axis) as u32)
    }

    pub fn coords(&self, index: usize) -> Vec<usize> {
        let mut out = vec![0; self.dim];
        let mut rest = index;
        for slot in out.iter_mut().rev() {
            *slot = rest % self.side;
            rest /= self.side;
        }
        out
    }

    /// Site index of `coords`, each reduced mod L.
    pub fn index(&self, coords: &[usize]) -> usize {
        debug_assert_eq!(coords.len(), self.dim);
        coords
            .iter()
            .fold(0, |acc, &c| acc * self.side + c % self.side)
    }

    /// Index of the site reached from `index` by `step` unit moves along `axis`.
    pub fn shift(&self, index: usize, axis: usize, step: isize) -> usize {
        let stride = self.stride(axis);
        let c = (index / stride) % self.side;
        let l = self.side as isize;
        let moved = (c as isize + step).rem_euclid(l) as usize;
        index - c * stride + moved * stride
    }

    /// Minimal-image displacement `b - a`, each entry in (-L/2, L/2].
    pub fn displacement(&self, a: usize, b: usize) -> Vec<isize> {
        let ca = self.coords(a);
        let cb = self.coords(b);
        let l = self.side as isize;
        ca.iter()
            .zip(&cb)
            .map(|(&x, &y)| {
                let mut d = (y as isize - x as isize).rem_euclid(l);
                if 2 * d > l {
                    d -= l;
                }
                d
            })
            .collect()
    }

    /// Euclidean torus distance between two sites.
    pub fn distance(&self, a: usize, b: usize) -> f64 {
        self.displacement(a, b)
            .iter()
            .map(|&d| (d * d) as f64)
            .sum::<f64>()
            .sqrt()
    }

    pub fn origin(&self) -> usize {
        0
    }

    pub fn freq(&self, index: usize) -> FreqVector {
        FreqVector {
            k: self.coords(index),
            side: self.side,
        }
    }

    pub fn freq_from(&self, k: &[usize]) -> Result<FreqVector> {
        if k.len() != self.dim {
            return Err(Error::LengthMismatch {
                expected: self.dim,
                actual: k.len(),
            });
        }
        Ok(FreqVector {
            k: k.iter().map(|&v| v % self.side).collect(),
            side: self.side,
        })
    }

    pub fn frequencies(&self) -> impl Iterator<Item = FreqVector> + '_ {
        (0..self.sites).map(move |i| self.freq(i))
    }

    fn check_same(&self, other: &TorusGrid) -> Result<()> {
        if self != other {
            return Err(Error::GridMismatch(format!("{self:?} vs {other:?}")));
        }
        Ok(())
    }
}

/// Lattice frequency `k`, with angles `xi_j = 2 pi k_j / L`.
#[derive(Clone, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct FreqVector {
    k: Vec<usize>,
    side: usize,
}

impl FreqVector {
    pub fn k(&self) -> &[usize] {
        &self.k
    }

    pub fn dim(&self) -> usize {
        self.k.len()
    }

    pub fn is_zero(&self) -> bool {
        self.k.iter().all(|&v| v == 0)
    }

    pub fn index(&self) -> usize {
        self.k.iter().fold(0, |acc, &c| acc * self.side + c)
    }

    /// The frequency `-k mod L`.
    pub fn negated(&self) -> FreqVector {
        FreqVector {
            k: self.k.iter().map(|&v| (self.side - v) % self.side).collect(),
            side: self.side,
        }
    }

    pub fn angle<T: Real>(&self, axis: usize) -> T {
        T::of(2.0 * std::f64::consts::PI * self.k[axis] as f64 / self.side as f64)
    }

    /// Representative of `xi` in (-pi, pi]^d.
    pub fn centered_angles<T: Real>(&self) -> Vec<T> {
        self.k
            .iter()
            .map(|&v| {
                let c = if 2 * v > self.side {
                    v as f64 - self.side as f64
                } else {
                    v as f64
                };
                T::of(2.0 * std::f64::consts::PI * c / self.side as f64)
            })
            .collect()
    }

    /// `|xi|` for the representative in (-pi, pi]^d.
    pub fn xi_norm<T: Real>(&self) -> T {
        self.centered_angles::<T>()
            .into_iter()
            .fold(T::zero(), |acc, a| acc + a * a)
            .sqrt()
    }

    /// Symbol of the forward difference, `q_j = exp(i xi_j) - 1`.
    pub fn q<T: Real>(&self) -> Vec<Complex<T>> {
        (0..self.dim())
            .map(|j| {
                let a = self.angle::<T>(j);
                Complex::new(a.cos() - T::one(), a.sin())
            })
            .collect()
    }
}

/// `|q(xi)|^2 = sum_j 2 (1 - cos xi_j)`, the symbol of `-Delta`.
pub fn laplacian_symbol<T: Real>(k: &FreqVector) -> T {
    (0..k.dim()).fold(T::zero(), |acc, j| {
        acc + T::of(2.0) * (T::one() - k.angle::<T>(j).cos())
    })
}

/// Shared behaviour of complex-valued lattice fields.
pub trait LatticeField<T: Real>: Clone {
    fn grid(&self) -> &TorusGrid;
    fn data(&self) -> &[Complex<T>];
    fn data_mut(&mut self) -> &mut [Complex<T>];
    fn components(&self) -> usize;

    /// `<self, other> = sum conj(self) * other`.
    fn inner(&self, other: &Self) -> Complex<T> {
        self.data()
            .iter()
            .zip(other.data())
            .fold(Complex::zero(), |acc, (a, b)| acc + a.conj() * b)
    }

    fn norm_sq(&self) -> T {
        self.data().iter().fold(T::zero(), |acc, v| acc + v.norm_sqr())
    }

    fn norm(&self) -> T {
        self.norm_sq().sqrt()
    }

    fn max_abs(&self) -> T {
        self.data().iter().fold(T::zero(), |acc, v| acc.max(v.norm()))
    }

    fn scale(&mut self, factor: Complex<T>) {
        for v in self.data_mut() {
            *v = *v * factor;
        }
    }

    /// `self += alpha * other`.
    fn axpy(&mut self, alpha: Complex<T>, other: &Self) {
        for (a, b) in self.data_mut().iter_mut().zip(other.data()) {
            *a = *a + alpha * b;
        }
    }

    fn distance_to(&self, other: &Self) -> T {
        self.data()
            .iter()
            .zip(other.data())
            .fold(T::zero(), |acc, (a, b)| acc + (a - b).norm_sqr())
            .sqrt()
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScalarField<T> {
    grid: TorusGrid,
    values: Vec<Complex<T>>,
}

impl<T: Real> ScalarField<T> {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![Complex::zero(); grid.sites()],
        }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<Complex<T>>) -> Result<Self> {
        if values.len() != grid.sites() {
            return Err(Error::LengthMismatch {
                expected: grid.sites(),
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_real(grid: TorusGrid, values: &[T]) -> Result<Self> {
        Self::from_values(grid, values.iter().map(|&v| Complex::new(v, T::zero())).collect())
    }

    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut(&[usize]) -> Complex<T>) -> Self {
        let values = (0..grid.sites()).map(|i| f(&grid.coords(i))).collect();
        Self { grid, values }
    }

    pub fn constant(grid: TorusGrid, c: Complex<T>) -> Self {
        Self {
            grid,
            values: vec![c; grid.sites()],
        }
    }

    pub fn delta(grid: TorusGrid, site: usize) -> Self {
        let mut f = Self::zeros(grid);
        f.values[site] = Complex::new(T::one(), T::zero());
        f
    }

    /// `x -> exp(i xi.x)`.
    pub fn plane_wave(grid: TorusGrid, k: &FreqVector) -> Self {
        let l = grid.side();
        Self::from_fn(grid, |x| {
            // reduce k.x mod L before forming the angle to keep phases exact
            let phase = x.iter().zip(k.k()).map(|(&a, &b)| a * b).sum::<usize>() % l;
            Complex::from_polar(
                T::one(),
                T::of(2.0 * std::f64::consts::PI * phase as f64 / l as f64),
            )
        })
    }

    pub fn values(&self) -> &[Complex<T>] {
        &self.values
    }

    pub fn into_values(self) -> Vec<Complex<T>> {
        self.values
    }

    pub fn mean(&self) -> Complex<T> {
        let s = self.values.iter().fold(Complex::zero(), |acc, v| acc + v);
        s / T::of_usize(self.values.len())
    }

    /// Mean is below `1e-12` relative to the largest entry.
    pub fn is_mean_zero(&self) -> bool {
        let m = self.max_abs();
        m.is_zero() || self.mean().norm() <= T::of(1e-12) * m
    }

    pub fn remove_mean(&mut self) {
        let m = self.mean();
        for v in &mut self.values {
            *v = *v - m;
        }
    }

    pub fn add_constant(&mut self, c: Complex<T>) {
        for v in &mut self.values {
            *v = *v + c;
        }
    }
}

impl<T: Real> LatticeField<T> for ScalarField<T> {
    fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    fn data(&self) -> &[Complex<T>] {
        &self.values
    }
    fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.values
    }
    fn components(&self) -> usize {
        1
    }
}

/// `d` complex components per site, stored component-major.
#[derive(Clone, Debug, PartialEq)]
pub struct VectorField<T> {
    grid: TorusGrid,
    values: Vec<Complex<T>>,
}

impl<T: Real> VectorField<T> {
    pub fn zeros(grid: TorusGrid) -> Self {
        Self {
            grid,
            values: vec![Complex::zero(); grid.sites() * grid.dim()],
        }
    }

    pub fn from_values(grid: TorusGrid, values: Vec<Complex<T>>) -> Result<Self> {
        let expected = grid.sites() * grid.dim();
        if values.len() != expected {
            return Err(Error::LengthMismatch {
                expected,
                actual: values.len(),
            });
        }
        Ok(Self { grid, values })
    }

    pub fn from_fn(grid: TorusGrid, mut f: impl FnMut(usize, &[usize]) -> Complex<T>) -> Self {
        let mut out = Self::zeros(grid);
        for c in 0..grid.dim() {
            for i in 0..grid.sites() {
                out.values[c * grid.sites() + i] = f(c, &grid.coords(i));
            }
        }
        out
    }

    /// Plane wave at `k` with a fixed polarization vector.
    pub fn plane_wave(grid: TorusGrid, k: &FreqVector, polarization: &[Complex<T>]) -> Self {
        let wave = ScalarField::<T>::plane_wave(grid, k);
        let mut out = Self::zeros(grid);
        for (c, p) in polarization.iter().enumerate().take(grid.dim()) {
            for (dst, w) in out.component_mut(c).iter_mut().zip(wave.values()) {
                *dst = *w * *p;
            }
        }
        out
    }

    /// Unit vector `e_component` at a single site.
    pub fn delta(grid: TorusGrid, site: usize, component: usize) -> Self {
        let mut out = Self::zeros(grid);
        out.values[component * grid.sites() + site] = Complex::new(T::one(), T::zero());
        out
    }

    pub fn constant(grid: TorusGrid, v: &[Complex<T>]) -> Self {
        Self::from_fn(grid, |c, _| v[c])
    }

    pub fn component(&self, c: usize) -> &[Complex<T>] {
        let n = self.grid.sites();
        &self.values[c * n..(c + 1) * n]
    }

    pub fn component_mut(&mut self, c: usize) -> &mut [Complex<T>] {
        let n = self.grid.sites();
        &mut self.values[c * n..(c + 1) * n]
    }

    pub fn at(&self, site: usize, component: usize) -> Complex<T> {
        self.values[component * self.grid.sites() + site]
    }

    /// Multiply every component at site `x` by the real factor `sigma[x]`.
    pub fn scale_sites(&mut self, sigma: &[T]) {
        let n = self.grid.sites();
        for chunk in self.values.chunks_mut(n) {
            for (v, &s) in chunk.iter_mut().zip(sigma) {
                *v = v.scale(s);
            }
        }
    }
}

impl<T: Real> LatticeField<T> for VectorField<T> {
    fn grid(&self) -> &TorusGrid {
        &self.grid
    }
    fn data(&self) -> &[Complex<T>] {
        &self.values
    }
    fn data_mut(&mut self) -> &mut [Complex<T>] {
        &mut self.values
    }
    fn components(&self) -> usize {
        self.grid.dim()
    }
}

/// Forward difference: `(grad f)_j(x) = f(x + e_j) - f(x)`.
pub fn grad<T: Real>(f: &ScalarField<T>) -> VectorField<T> {
    let grid = f.grid;
    let mut out = VectorField::zeros(grid);
    for j in 0..grid.dim() {
        let comp = out.component_mut(j);
        for (i, dst) in comp.iter_mut().enumerate() {
            *dst = f.values[grid.shift(i, j, 1)] - f.values[i];
        }
    }
    out
}

/// Exact adjoint of [`grad`]: `(grad* g)(x) = sum_j g_j(x - e_j) - g_j(x)`.
pub fn grad_adjoint<T: Real>(g: &VectorField<T>) -> ScalarField<T> {
    let grid = g.grid;
    let mut out = ScalarField::zeros(grid);
    for j in 0..grid.dim() {
        let comp = g.component(j);
        for (i, dst) in out.values.iter_mut().enumerate() {
            *dst = *dst + comp[grid.shift(i, j, -1)] - comp[i];
        }
    }
    out
}

/// `-Delta f = grad*(grad f)` by stencil.
pub fn neg_laplacian<T: Real>(f: &ScalarField<T>) -> ScalarField<T> {
    grad_adjoint(&grad(f))
}

/// Planned d-dimensional transform for one grid.
#[derive(Clone)]
pub struct Dft<T: Real> {
    grid: TorusGrid,
    forward: Arc<dyn Fft<T>>,
    inverse: Arc<dyn Fft<T>>,
}

impl<T: Real> std::fmt::Debug for Dft<T> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Dft").field("grid", &self.grid).finish()
    }
}

impl<T: Real> Dft<T> {
    pub fn new(grid: TorusGrid) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            grid,
            forward: planner.plan_fft_forward(grid.side()),
            inverse: planner.plan_fft_inverse(grid.side()),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    /// Unnormalized forward transform of one N-site block, in place.
    pub fn forward_in_place(&self, block: &mut [Complex<T>]) {
        self.along_axes(block, &self.forward);
    }

    /// Inverse transform (with the 1/N) of one N-site block, in place.
    pub fn inverse_in_place(&self, block: &mut [Complex<T>]) {
        self.along_axes(block, &self.inverse);
        let scale = T::one() / T::of_usize(self.grid.sites());
        for v in block.iter_mut() {
            *v = v.scale(scale);
        }
    }

    fn along_axes(&self, block: &mut [Complex<T>], fft: &Arc<dyn Fft<T>>) {
        let n = self.grid.sites();
        let l = self.grid.side();
        debug_assert_eq!(block.len(), n);
        let mut scratch = vec![Complex::zero(); fft.get_inplace_scratch_len()];
        if self.grid.dim() == 1 {
            fft.process_with_scratch(block, &mut scratch);
            return;
        }
        let mut line = vec![Complex::zero(); l];
        for axis in 0..self.grid.dim() {
            let stride = self.grid.stride(axis);
            for base in 0..n {
                if !(base / stride).is_multiple_of(l) {
                    continue;
                }
                for (t, slot) in line.iter_mut().enumerate() {
                    *slot = block[base + t * stride];
                }
                fft.process_with_scratch(&mut line, &mut scratch);
                for (t, v) in line.iter().enumerate() {
                    block[base + t * stride] = *v;
                }
            }
        }
    }
}

/// Frequency-indexed coefficients of a scalar or vector field.
#[derive(Clone, Debug, PartialEq)]
pub struct Spectrum<T> {
    grid: TorusGrid,
    components: usize,
    coeffs: Vec<Complex<T>>,
}

impl<T: Real> Spectrum<T> {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    pub fn at(&self, k: &FreqVector, component: usize) -> Complex<T> {
        self.coeffs[component * self.grid.sites() + k.index()]
    }

    pub fn coeffs(&self) -> &[Complex<T>] {
        &self.coeffs
    }
}

pub fn dft<T: Real, F: LatticeField<T>>(f: &F) -> Spectrum<T> {
    let grid = *f.grid();
    let plan = Dft::new(grid);
    let mut coeffs = f.data().to_vec();
    for block in coeffs.chunks_mut(grid.sites()) {
        plan.forward_in_place(block);
    }
    Spectrum {
        grid,
        components: f.components(),
        coeffs,
    }
}

pub fn idft_scalar<T: Real>(s: &Spectrum<T>) -> Result<ScalarField<T>> {
    if s.components != 1 {
        return Err(Error::LengthMismatch {
            expected: 1,
            actual: s.components,
        });
    }
    let mut values = s.coeffs.clone();
    Dft::new(s.grid).inverse_in_place(&mut values);
    ScalarField::from_values(s.grid, values)
}

pub fn idft_vector<T: Real>(s: &Spectrum<T>) -> Result<VectorField<T>> {
    if s.components != s.grid.dim() {
        return Err(Error::LengthMismatch {
            expected: s.grid.dim(),
            actual: s.components,
        });
    }
    let plan = Dft::new(s.grid);
    let mut values = s.coeffs.clone();
    for block in values.chunks_mut(s.grid.sites()) {
        plan.inverse_in_place(block);
    }
    VectorField::from_values(s.grid, values)
}

pub(crate) fn ensure_same_grid(a: &TorusGrid, b: &TorusGrid) -> Result<()> {
    a.check_same(b)
}

fn coordinate_header(prefix: &str, dim: usize) -> Vec<String> {
    (0..dim).map(|j| format!("{prefix}_{j}")).collect()
}

/// Write a scalar field as `x_0,..,x_{d-1},re,im` rows in site order.
pub fn write_scalar_field<T: Real, W: Write>(out: W, f: &ScalarField<T>) -> std::io::Result<()> {
    let grid = f.grid;
    let mut w = csv_writer(out);
    let mut header = coordinate_header("x", grid.dim());
    header.extend(["re".into(), "im".into()]);
    w.write_record(&header)?;
    for (i, v) in f.values.iter().enumerate() {
        let mut row: Vec<String> = grid.coords(i).iter().map(|c| c.to_string()).collect();
        row.push(format!("{:e}", v.re));
        row.push(format!("{:e}", v.im));
        w.write_record(&row)?;
    }
    w.flush()
}

/// Write a vector field with an extra `component` column.
pub fn write_vector_field<T: Real, W: Write>(out: W, f: &VectorField<T>) -> std::io::Result<()> {
    let grid = f.grid;
    let mut w = csv_writer(out);
    let mut header = coordinate_header("x", grid.dim());
    header.extend(["component".into(), "re".into(), "im".into()]);
    w.write_record(&header)?;
    for i in 0..grid.sites() {
        for c in 0..grid.dim() {
            let v = f.at(i, c);
            let mut row: Vec<String> = grid.coords(i).iter().map(|c| c.to_string()).collect();
            row.push(c.to_string());
            row.push(format!("{:e}", v.re));
            row.push(format!("{:e}", v.im));
            w.write_record(&row)?;
        }
    }
    w.flush()
}

/// Write a matrix-valued table indexed by site (`prefix = "x"`) or
/// frequency (`prefix = "k"`). `entries` holds `m*m` row-major values per index.
pub fn write_matrix_table<T: Real, W: Write>(
    out: W,
    grid: &TorusGrid,
    prefix: &str,
    m: usize,
    entries: &[Complex<T>],
) -> std::io::Result<()> {
    let mut w = csv_writer(out);
    let mut header = coordinate_header(prefix, grid.dim());
    header.extend([
        "component_row".into(),
        "component_col".into(),
        "re".into(),
        "im".into(),
    ]);
    w.write_record(&header)?;
    for i in 0..grid.sites() {
        for r in 0..m {
            for c in 0..m {
                let v = entries[(i * m + r) * m + c];
                let mut row: Vec<String> = grid.coords(i).iter().map(|c| c.to_string()).collect();
                row.push(r.to_string());
                row.push(c.to_string());
                row.push(format!("{:e}", v.re));
                row.push(format!("{:e}", v.im));
                w.write_record(&row)?;
            }
        }
    }
    w.flush()
}

pub(crate) fn csv_writer<W: Write>(out: W) -> csv::Writer<W> {
    csv::WriterBuilder::new()
        .terminator(csv::Terminator::Any(b'\n'))
        .from_writer(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn c(re: f64) -> Complex<f64> {
        Complex::new(re, 0.0)
    }

    fn random_scalar(grid: TorusGrid, rng: &mut impl Rng) -> ScalarField<f64> {
        ScalarField::from_fn(grid, |_| {
            Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_vector(grid: TorusGrid, rng: &mut impl Rng) -> VectorField<f64> {
        VectorField::from_fn(grid, |_, _| {
            Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    #[test]
    fn grid_rejects_degenerate_shapes() {
        assert!(TorusGrid::new(0, 4).is_err());
        assert!(TorusGrid::new(2, 1).is_err());
        let g = TorusGrid::new(3, 5).unwrap();
        assert_eq!(g.sites(), 125);
    }

    #[test]
    fn coords_roundtrip_and_wrap() {
        let g = TorusGrid::new(3, 4).unwrap();
        for i in 0..g.sites() {
            assert_eq!(g.index(&g.coords(i)), i);
        }
        assert_eq!(g.coords(1), vec![0, 0, 1]);
        assert_eq!(g.coords(16), vec![1, 0, 0]);
        let i = g.index(&[3, 0, 2]);
        assert_eq!(g.coords(g.shift(i, 0, 1)), vec![0, 0, 2]);
        assert_eq!(g.coords(g.shift(i, 2, -3)), vec![3, 0, 3]);
        assert_eq!(g.displacement(0, g.index(&[3, 2, 1])), vec![-1, 2, 1]);
    }

    #[test]
    fn grad_stencil_d1() {
        let g = TorusGrid::new(1, 4).unwrap();
        let f = ScalarField::from_real(g, &[0.0, 1.0, 0.0, 0.0]).unwrap();
        let gr = grad(&f);
        assert_eq!(gr.component(0), &[c(1.0), c(-1.0), c(0.0), c(0.0)]);
    }

    #[test]
    fn grad_of_constant_is_zero() {
        let g = TorusGrid::new(2, 5).unwrap();
        let f = ScalarField::constant(g, Complex::new(3.0, -2.0));
        assert_eq!(grad(&f).max_abs(), 0.0);
    }

    #[test]
    fn grad_adjoint_stencil_d1() {
        let g = TorusGrid::new(1, 4).unwrap();
        let v = VectorField::from_values(g, vec![c(1.0), c(0.0), c(0.0), c(0.0)]).unwrap();
        assert_eq!(grad_adjoint(&v).values(), &[c(-1.0), c(1.0), c(0.0), c(0.0)]);
        let lap = neg_laplacian(&ScalarField::delta(g, 0));
        assert_eq!(lap.values(), &[c(2.0), c(-1.0), c(0.0), c(-1.0)]);
    }

    #[test]
    fn grad_on_plane_wave_multiplies_by_q() {
        let g = TorusGrid::new(2, 6).unwrap();
        let k = g.freq_from(&[1, 4]).unwrap();
        let wave = ScalarField::<f64>::plane_wave(g, &k);
        let gr = grad(&wave);
        let q = k.q::<f64>();
        for j in 0..2 {
            for (a, w) in gr.component(j).iter().zip(wave.values()) {
                assert!((a - q[j] * w).norm() < 1e-14);
            }
        }
        let lap = neg_laplacian(&wave);
        let s = laplacian_symbol::<f64>(&k);
        for (a, w) in lap.values().iter().zip(wave.values()) {
            assert!((a - w * s).norm() < 1e-13);
        }
    }

    #[test]
    fn adjointness_on_random_pairs() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for (d, l) in [(1, 16), (2, 6), (3, 4)] {
            let g = TorusGrid::new(d, l).unwrap();
            for _ in 0..100 {
                let f = random_scalar(g, &mut rng);
                let v = random_vector(g, &mut rng);
                let lhs = grad(&f).inner(&v);
                let rhs = f.inner(&grad_adjoint(&v));
                assert!((lhs - rhs).norm() <= 1e-12 * f.norm() * v.norm());
            }
        }
    }

    #[test]
    fn laplacian_symbol_values() {
        let g1 = TorusGrid::new(1, 8).unwrap();
        assert_eq!(laplacian_symbol::<f64>(&g1.freq_from(&[4]).unwrap()), 4.0);
        assert_eq!(laplacian_symbol::<f64>(&g1.freq_from(&[0]).unwrap()), 0.0);
        let g2 = TorusGrid::new(2, 8).unwrap();
        let expected = 2.0 * (1.0 - (std::f64::consts::PI / 4.0).cos());
        assert_relative_eq!(
            laplacian_symbol::<f64>(&g2.freq_from(&[1, 0]).unwrap()),
            expected,
            max_relative = 1e-15
        );
        assert_relative_eq!(expected, 0.585_786_437_626_905, max_relative = 1e-14);
    }

    #[test]
    fn frequency_norm_comparability() {
        for (d, l) in [(1, 64), (2, 12), (3, 6)] {
            let g = TorusGrid::new(d, l).unwrap();
            for k in g.frequencies().filter(|k| !k.is_zero()) {
                let q = laplacian_symbol::<f64>(&k).sqrt();
                let xi: f64 = k.xi_norm();
                assert!(2.0 / std::f64::consts::PI * xi <= q + 1e-14);
                assert!(q <= xi + 1e-14);
            }
        }
    }

    #[test]
    fn delta_has_flat_spectrum() {
        let g = TorusGrid::new(2, 4).unwrap();
        let s = dft(&ScalarField::<f64>::delta(g, 0));
        for v in s.coeffs() {
            assert!((v - c(1.0)).norm() < 1e-15);
        }
    }

    #[test]
    fn plane_wave_transforms_to_single_peak() {
        let g = TorusGrid::new(2, 5).unwrap();
        let k = g.freq_from(&[2, 3]).unwrap();
        let s = dft(&ScalarField::<f64>::plane_wave(g, &k));
        for other in g.frequencies() {
            let expect = if other == k { 25.0 } else { 0.0 };
            assert!((s.at(&other, 0) - c(expect)).norm() < 1e-12);
        }
    }

    #[test]
    fn dft_of_grad_is_q_times_dft() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let g = TorusGrid::new(2, 6).unwrap();
        let f = random_scalar(g, &mut rng);
        let sf = dft(&f);
        let sg = dft(&grad(&f));
        for k in g.frequencies() {
            let q = k.q::<f64>();
            for j in 0..2 {
                assert!((sg.at(&k, j) - q[j] * sf.at(&k, 0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn parseval_at_unnormalized_forward() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let g = TorusGrid::new(3, 4).unwrap();
        let f = random_scalar(g, &mut rng);
        let s = dft(&f);
        let spec: f64 = s.coeffs().iter().map(|v| v.norm_sqr()).sum();
        assert_relative_eq!(spec / g.sites() as f64, f.norm_sq(), max_relative = 1e-12);
    }

    #[test]
    fn f32_fields_work() {
        let g = TorusGrid::new(2, 8).unwrap();
        let k = g.freq_from(&[1, 2]).unwrap();
        let wave = ScalarField::<f32>::plane_wave(g, &k);
        let back = idft_scalar(&dft(&wave)).unwrap();
        assert!(back.distance_to(&wave) < 1e-5);
    }

    #[test]
    fn field_csv_layout() {
        let g = TorusGrid::new(2, 2).unwrap();
        let f = ScalarField::from_real(g, &[1.0f64, 2.0, 3.0, 4.5]).unwrap();
        let mut buf = Vec::new();
        write_scalar_field(&mut buf, &f).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert_eq!(
            text,
            "x_0,x_1,re,im\n0,0,1e0,0e0\n0,1,2e0,0e0\n1,0,3e0,0e0\n1,1,4.5e0,0e0\n"
        );
    }

    proptest! {
        #[test]
        fn dft_roundtrip(seed in any::<u64>(), d in 1usize..4, l in 2usize..7) {
            let g = TorusGrid::new(d, l).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_vector(g, &mut rng);
            let back = idft_vector(&dft(&f)).unwrap();
            prop_assert!(back.distance_to(&f) <= 1e-12 * f.norm());
        }

        #[test]
        fn gauge_invariance(seed in any::<u64>(), shift in -5.0f64..5.0) {
            let g = TorusGrid::new(2, 5).unwrap();
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let f = random_scalar(g, &mut rng);
            let mut shifted = f.clone();
            shifted.add_constant(Complex::new(shift, 0.0));
            let a = grad(&f);
            let b = grad(&shifted);
            prop_assert!(a.distance_to(&b) <= 1e-12 * (1.0 + shift.abs()) * g.sites() as f64);
        }
    }
}
