//! Translation-invariant multiplier operators, disorder multiplication, the
//! random operator `L = grad* (1 + delta sigma) grad`, and a preconditioned
//! conjugate-gradient solver for `L u = f` on the mean-zero sector.

use num_traits::{Float, One, Zero};

use crate::error::{Error, Result};
use crate::lattice::{
    ensure_same_grid, grad, grad_adjoint, laplacian_symbol, Dft, LatticeField, ScalarField,
    TorusGrid, VectorField,
};
use crate::scalar::{Complex, Real};

/// Per-frequency `m x m` complex matrix (`m = 1` for scalar multipliers,
/// `m = d` for multipliers acting on vector fields).
#[derive(Clone, Debug)]
pub struct FourierMultiplier<T: Real> {
    grid: TorusGrid,
    components: usize,
    symbols: Vec<Complex<T>>,
    hermitian: bool,
    dft: Dft<T>,
}

impl<T: Real> FourierMultiplier<T> {
    /// Build from a per-frequency closure returning `m*m` row-major entries.
    pub fn from_fn(
        grid: TorusGrid,
        components: usize,
        mut symbol: impl FnMut(&crate::lattice::FreqVector) -> Vec<Complex<T>>,
    ) -> Result<Self> {
        let mut symbols = Vec::with_capacity(grid.sites() * components * components);
        for k in grid.frequencies() {
            let m = symbol(&k);
            if m.len() != components * components {
                return Err(Error::LengthMismatch {
                    expected: components * components,
                    actual: m.len(),
                });
            }
            symbols.extend(m);
        }
        Ok(Self {
            grid,
            components,
            symbols,
            hermitian: false,
            dft: Dft::new(grid),
        })
    }

    pub fn identity(grid: TorusGrid, components: usize) -> Self {
        Self::from_fn(grid, components, |_| {
            let mut m = vec![Complex::zero(); components * components];
            for i in 0..components {
                m[i * components + i] = Complex::one();
            }
            m
        })
        .expect("identity has consistent shape")
        .with_hermitian_flag()
        .expect("identity is hermitian")
    }

    /// Set the Hermitian-symbol flag after verifying `m(k) = m(k)^dagger`
    /// at every frequency (tolerance `1e-12` relative to the largest entry).
    pub fn with_hermitian_flag(mut self) -> Result<Self> {
        let scale = self
            .symbols
            .iter()
            .fold(T::zero(), |acc, v| acc.max(v.norm()))
            .max(T::one());
        let tol = T::of(1e-12) * scale;
        let m = self.components;
        for (idx, block) in self.symbols.chunks(m * m).enumerate() {
            for i in 0..m {
                for j in 0..m {
                    if (block[i * m + j] - block[j * m + i].conj()).norm() > tol {
                        return Err(Error::InconsistentProbes(format!(
                            "symbol not hermitian at frequency index {idx}"
                        )));
                    }
                }
            }
        }
        self.hermitian = true;
        Ok(self)
    }

    pub fn is_hermitian(&self) -> bool {
        self.hermitian
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn components(&self) -> usize {
        self.components
    }

    /// Row-major `m x m` block at frequency index `k`.
    pub fn matrix(&self, k: usize) -> &[Complex<T>] {
        let mm = self.components * self.components;
        &self.symbols[k * mm..(k + 1) * mm]
    }

    pub fn dft(&self) -> &Dft<T> {
        &self.dft
    }

    /// Transform, multiply per frequency, inverse transform; `data` holds
    /// `m` component blocks of `N` values.
    pub fn apply_in_place(&self, data: &mut [Complex<T>]) {
        let n = self.grid.sites();
        let m = self.components;
        debug_assert_eq!(data.len(), n * m);
        for block in data.chunks_mut(n) {
            self.dft.forward_in_place(block);
        }
        let mut tmp = vec![Complex::zero(); m];
        for k in 0..n {
            let mat = self.matrix(k);
            for (i, slot) in tmp.iter_mut().enumerate() {
                *slot = (0..m).fold(Complex::zero(), |acc, j| acc + mat[i * m + j] * data[j * n + k]);
            }
            for (i, v) in tmp.iter().enumerate() {
                data[i * n + k] = *v;
            }
        }
        for block in data.chunks_mut(n) {
            self.dft.inverse_in_place(block);
        }
    }

    pub fn apply(&self, g: &VectorField<T>) -> Result<VectorField<T>> {
        ensure_same_grid(&self.grid, g.grid())?;
        if self.components != self.grid.dim() {
            return Err(Error::LengthMismatch {
                expected: self.grid.dim(),
                actual: self.components,
            });
        }
        let mut out = g.clone();
        self.apply_in_place(out.data_mut());
        Ok(out)
    }

    pub fn apply_scalar(&self, f: &ScalarField<T>) -> Result<ScalarField<T>> {
        ensure_same_grid(&self.grid, f.grid())?;
        if self.components != 1 {
            return Err(Error::LengthMismatch {
                expected: 1,
                actual: self.components,
            });
        }
        let mut out = f.clone();
        self.apply_in_place(out.data_mut());
        Ok(out)
    }

    /// Real-space kernel `m(x)` (inverse transform of each symbol entry):
    /// `m*m` row-major entries per site, with `(M g)(x) = sum_y m(x - y) g(y)`.
    pub fn kernel(&self) -> Vec<Complex<T>> {
        let n = self.grid.sites();
        let m = self.components;
        let mut out = vec![Complex::zero(); n * m * m];
        let mut block = vec![Complex::zero(); n];
        for e in 0..m * m {
            for (k, slot) in block.iter_mut().enumerate() {
                *slot = self.symbols[k * m * m + e];
            }
            self.dft.inverse_in_place(&mut block);
            for (x, v) in block.iter().enumerate() {
                out[x * m * m + e] = *v;
            }
        }
        out
    }
}

/// `K = grad (-Delta)^+ grad*`: symbol `q q^dagger / |q|^2`, zero at `k = 0`.
pub fn make_k<T: Real>(grid: TorusGrid) -> FourierMultiplier<T> {
    let d = grid.dim();
    FourierMultiplier::from_fn(grid, d, |k| {
        let mut m = vec![Complex::zero(); d * d];
        if k.is_zero() {
            return m;
        }
        let q = k.q::<T>();
        let q2 = laplacian_symbol::<T>(k);
        for i in 0..d {
            for j in 0..d {
                m[i * d + j] = q[i] * q[j].conj() / q2;
            }
        }
        m
    })
    .expect("K has d x d blocks")
    .with_hermitian_flag()
    .expect("K symbol is hermitian")
}

/// Pseudo-inverse of `-Delta`: `1/|q|^2` off zero, `0` at `k = 0`.
pub fn laplacian_pseudo_inverse<T: Real>(grid: TorusGrid) -> FourierMultiplier<T> {
    FourierMultiplier::from_fn(grid, 1, |k| {
        if k.is_zero() {
            vec![Complex::zero()]
        } else {
            vec![Complex::new(T::one() / laplacian_symbol::<T>(k), T::zero())]
        }
    })
    .expect("scalar blocks")
    .with_hermitian_flag()
    .expect("real symbol")
}

/// One realization of the coefficient field, with its a-priori bound `C`.
#[derive(Clone, Debug, PartialEq)]
pub struct DisorderSample<T> {
    grid: TorusGrid,
    sigma: Vec<T>,
    bound: T,
}

impl<T: Real> DisorderSample<T> {
    pub fn new(grid: TorusGrid, sigma: Vec<T>, bound: T) -> Result<Self> {
        if sigma.len() != grid.sites() {
            return Err(Error::LengthMismatch {
                expected: grid.sites(),
                actual: sigma.len(),
            });
        }
        if let Some(v) = sigma.iter().find(|v| Float::abs(**v) > bound) {
            return Err(Error::BoundViolated {
                value: v.to_f64_lossy(),
                bound: bound.to_f64_lossy(),
            });
        }
        Ok(Self { grid, sigma, bound })
    }

    /// `sigma == c` everywhere; bound `|c|`.
    pub fn constant(grid: TorusGrid, c: T) -> Self {
        Self {
            grid,
            sigma: vec![c; grid.sites()],
            bound: Float::abs(c),
        }
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn sigma(&self) -> &[T] {
        &self.sigma
    }

    pub fn bound(&self) -> T {
        self.bound
    }

    fn check_delta(&self, delta: T) -> Result<()> {
        let product = Float::abs(delta) * self.bound;
        if product >= T::one() {
            return Err(Error::DeltaTooLarge {
                product: product.to_f64_lossy(),
            });
        }
        Ok(())
    }
}

/// `L f = grad*((1 + delta sigma) grad f)`.
pub fn apply_l<T: Real>(
    sample: &DisorderSample<T>,
    delta: T,
    f: &ScalarField<T>,
) -> Result<ScalarField<T>> {
    ensure_same_grid(sample.grid(), f.grid())?;
    let mut g = grad(f);
    let coeff: Vec<T> = sample.sigma.iter().map(|&s| T::one() + delta * s).collect();
    g.scale_sites(&coeff);
    Ok(grad_adjoint(&g))
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct SolveReport<T> {
    pub iterations: usize,
    pub relative_residual: T,
    pub converged: bool,
}

/// Preconditioned CG for `L u = f` on the mean-zero sector, preconditioned
/// by the Laplacian pseudo-inverse. Holds only immutable plans; every solve
/// allocates its own scratch, so one solver may be shared across threads.
#[derive(Clone, Debug)]
pub struct ResolventSolver<T: Real> {
    grid: TorusGrid,
    preconditioner: FourierMultiplier<T>,
    tol: T,
    max_iterations: usize,
}

impl<T: Real> ResolventSolver<T> {
    pub const DEFAULT_TOL: f64 = 1e-10;

    pub fn new(grid: TorusGrid, tol: T) -> Self {
        Self {
            grid,
            preconditioner: laplacian_pseudo_inverse(grid),
            tol,
            max_iterations: 50 * grid.side(),
        }
    }

    pub fn with_max_iterations(mut self, cap: usize) -> Self {
        self.max_iterations = cap;
        self
    }

    pub fn tol(&self) -> T {
        self.tol
    }

    pub fn solve(
        &self,
        sample: &DisorderSample<T>,
        delta: T,
        f: &ScalarField<T>,
    ) -> Result<(ScalarField<T>, SolveReport<T>)> {
        ensure_same_grid(&self.grid, f.grid())?;
        ensure_same_grid(&self.grid, sample.grid())?;
        sample.check_delta(delta)?;
        let fmax = f.max_abs();
        if !f.is_mean_zero() {
            return Err(Error::NotMeanZero {
                relative: (f.mean().norm() / fmax).to_f64_lossy(),
            });
        }
        let f_norm = f.norm();
        let mut u = ScalarField::zeros(self.grid);
        if f_norm.is_zero() {
            return Ok((
                u,
                SolveReport {
                    iterations: 0,
                    relative_residual: T::zero(),
                    converged: true,
                },
            ));
        }
        let mut rhs = f.clone();
        rhs.remove_mean();

        let mut r = rhs.clone();
        let mut iterations = 0;
        loop {
            let mut z = self.preconditioner.apply_scalar(&r)?;
            let mut p = z.clone();
            let mut rz = r.inner(&z).re;
            while iterations < self.max_iterations {
                iterations += 1;
                let ap = apply_l(sample, delta, &p)?;
                let pap = p.inner(&ap).re;
                if pap <= T::zero() {
                    break;
                }
                let alpha = Complex::new(rz / pap, T::zero());
                u.axpy(alpha, &p);
                r.axpy(-alpha, &ap);
                if r.norm() <= self.tol * f_norm {
                    break;
                }
                z = self.preconditioner.apply_scalar(&r)?;
                let rz_next = r.inner(&z).re;
                let beta = Complex::new(rz_next / rz, T::zero());
                rz = rz_next;
                p.scale(beta);
                p.axpy(Complex::one(), &z);
            }
            u.remove_mean();
            let mut true_r = rhs.clone();
            true_r.axpy(-Complex::one(), &apply_l(sample, delta, &u)?);
            let rel = true_r.norm() / f_norm;
            if rel <= self.tol {
                return Ok((
                    u,
                    SolveReport {
                        iterations,
                        relative_residual: rel,
                        converged: true,
                    },
                ));
            }
            if iterations >= self.max_iterations {
                return Err(Error::NoConvergence {
                    iterations,
                    residual: rel.to_f64_lossy(),
                });
            }
            // recursive residual drifted from the true one; restart from it
            r = true_r;
        }
    }
}

/// Solve `L u = f` with the default cap `50 L`.
pub fn solve_l<T: Real>(
    sample: &DisorderSample<T>,
    delta: T,
    f: &ScalarField<T>,
    tol: T,
) -> Result<(ScalarField<T>, SolveReport<T>)> {
    ResolventSolver::new(*f.grid(), tol).solve(sample, delta, f)
}

/// `T = K sigma_1 K sigma_2 ... K sigma_s`.
#[derive(Clone, Debug)]
pub struct OperatorChain<T: Real> {
    k: FourierMultiplier<T>,
    sigmas: Vec<DisorderSample<T>>,
}

pub fn compose_chain<T: Real>(
    sigmas: Vec<DisorderSample<T>>,
    grid: TorusGrid,
) -> Result<OperatorChain<T>> {
    if sigmas.is_empty() {
        return Err(Error::InvalidOrder {
            degree: 0,
            order: 0,
        });
    }
    for s in &sigmas {
        ensure_same_grid(&grid, s.grid())?;
    }
    Ok(OperatorChain {
        k: make_k(grid),
        sigmas,
    })
}

impl<T: Real> OperatorChain<T> {
    pub fn len(&self) -> usize {
        self.sigmas.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigmas.is_empty()
    }

    pub fn grid(&self) -> &TorusGrid {
        self.k.grid()
    }

    pub fn apply(&self, g: &VectorField<T>) -> Result<VectorField<T>> {
        ensure_same_grid(self.grid(), g.grid())?;
        let mut state = g.clone();
        for s in self.sigmas.iter().rev() {
            state.scale_sites(s.sigma());
            self.k.apply_in_place(state.data_mut());
        }
        Ok(state)
    }

    /// Column `T(., source)`: `d*d` row-major entries per site, entry
    /// `(i, j)` being component `i` of `T` applied to `delta_source e_j`.
    pub fn kernel_column(&self, source: usize) -> Result<Vec<Complex<T>>> {
        let grid = *self.grid();
        let d = grid.dim();
        let mut out = vec![Complex::zero(); grid.sites() * d * d];
        for j in 0..d {
            let col = self.apply(&VectorField::delta(grid, source, j))?;
            for x in 0..grid.sites() {
                for i in 0..d {
                    out[(x * d + i) * d + j] = col.at(x, i);
                }
            }
        }
        Ok(out)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::lattice::{neg_laplacian, ScalarField};
    use nalgebra::{DMatrix, DVector};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn grid(d: usize, l: usize) -> TorusGrid {
        TorusGrid::new(d, l).unwrap()
    }

    fn random_vector(g: TorusGrid, rng: &mut impl Rng) -> VectorField<f64> {
        VectorField::from_fn(g, |_, _| {
            Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        })
    }

    fn random_mean_zero(g: TorusGrid, rng: &mut impl Rng) -> ScalarField<f64> {
        let mut f = ScalarField::from_fn(g, |_| {
            Complex::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        f.remove_mean();
        f
    }

    fn signs(g: TorusGrid, rng: &mut impl Rng) -> DisorderSample<f64> {
        let s = (0..g.sites())
            .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
            .collect();
        DisorderSample::new(g, s, 1.0).unwrap()
    }

    #[test]
    fn k_symbol_and_kernel_d1() {
        let g = grid(1, 8);
        let k = make_k::<f64>(g);
        assert!(k.is_hermitian());
        assert_eq!(k.matrix(0)[0], Complex::zero());
        for idx in 1..8 {
            assert!((k.matrix(idx)[0] - Complex::one()).norm() < 1e-15);
        }
        let ker = k.kernel();
        assert!((ker[0].re - 7.0 / 8.0).abs() < 1e-15);
        for v in &ker[1..] {
            assert!((v.re + 1.0 / 8.0).abs() < 1e-15 && v.im.abs() < 1e-15);
        }
    }

    #[test]
    fn k_diagonal_at_origin_matches_trace_identity() {
        for (d, l) in [(1, 9), (2, 6), (3, 4)] {
            let g = grid(d, l);
            let ker = make_k::<f64>(g).kernel();
            let n = g.sites() as f64;
            let c = (n - 1.0) / (d as f64 * n);
            for i in 0..d {
                assert!((ker[i * d + i] - Complex::new(c, 0.0)).norm() < 1e-12);
            }
        }
    }

    #[test]
    fn k_is_idempotent_and_self_adjoint() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let g = grid(2, 8);
        let k = make_k::<f64>(g);
        for _ in 0..10 {
            let a = random_vector(g, &mut rng);
            let b = random_vector(g, &mut rng);
            let ka = k.apply(&a).unwrap();
            let kka = k.apply(&ka).unwrap();
            assert!(kka.distance_to(&ka) <= 1e-12 * a.norm());
            let lhs = ka.inner(&b);
            let rhs = a.inner(&k.apply(&b).unwrap());
            assert!((lhs - rhs).norm() <= 1e-12 * a.norm() * b.norm());
        }
    }

    #[test]
    fn k_fixes_gradients_and_kills_constants() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let g = grid(3, 4);
        let k = make_k::<f64>(g);
        let f = random_mean_zero(g, &mut rng);
        let gf = grad(&f);
        assert!(k.apply(&gf).unwrap().distance_to(&gf) <= 1e-12 * gf.norm());
        let c = VectorField::constant(g, &[Complex::new(1.0, 2.0), Complex::one(), -Complex::one()]);
        assert!(k.apply(&c).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn identity_multiplier_and_plane_wave_action() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let g = grid(2, 6);
        let a = random_vector(g, &mut rng);
        let id = FourierMultiplier::<f64>::identity(g, 2);
        assert!(id.apply(&a).unwrap().distance_to(&a) <= 1e-12 * a.norm());

        let k = make_k::<f64>(g);
        let freq = g.freq_from(&[2, 5]).unwrap();
        let pol = [Complex::new(0.3, -1.0), Complex::new(2.0, 0.5)];
        let out = k.apply(&VectorField::plane_wave(g, &freq, &pol)).unwrap();
        let m = k.matrix(freq.index());
        let expect: Vec<_> = (0..2)
            .map(|i| m[i * 2] * pol[0] + m[i * 2 + 1] * pol[1])
            .collect();
        let want = VectorField::plane_wave(g, &freq, &expect);
        assert!(out.distance_to(&want) < 1e-12);
    }

    #[test]
    fn laplacian_by_stencil_and_multiplier_agree() {
        let mut rng = ChaCha8Rng::seed_from_u64(10);
        let g = grid(2, 8);
        let lap = FourierMultiplier::<f64>::from_fn(g, 1, |k| {
            vec![Complex::new(laplacian_symbol::<f64>(k), 0.0)]
        })
        .unwrap();
        let f = random_mean_zero(g, &mut rng);
        let a = neg_laplacian(&f);
        let b = lap.apply_scalar(&f).unwrap();
        assert!(a.distance_to(&b) <= 1e-12 * a.norm());
    }

    #[test]
    fn apply_l_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        let g = grid(2, 5);
        let f = random_mean_zero(g, &mut rng);
        let s = signs(g, &mut rng);
        let zero_delta = apply_l(&s, 0.0, &f).unwrap();
        assert!(zero_delta.distance_to(&neg_laplacian(&f)) < 1e-13);

        let c = DisorderSample::constant(g, 0.7);
        let mut want = neg_laplacian(&f);
        want.scale(Complex::new(1.0 + 0.3 * 0.7, 0.0));
        assert!(apply_l(&c, 0.3, &f).unwrap().distance_to(&want) < 1e-12);

        let cst = ScalarField::constant(g, Complex::new(2.0, 1.0));
        assert!(apply_l(&s, 0.5, &cst).unwrap().max_abs() < 1e-14);
    }

    #[test]
    fn apply_l_is_self_adjoint_and_coercive() {
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let g = grid(2, 6);
        let s = signs(g, &mut rng);
        let delta = 0.4;
        for _ in 0..20 {
            let f = random_mean_zero(g, &mut rng);
            let h = random_mean_zero(g, &mut rng);
            let lhs = apply_l(&s, delta, &f).unwrap().inner(&h);
            let rhs = f.inner(&apply_l(&s, delta, &h).unwrap());
            assert!((lhs - rhs).norm() <= 1e-12 * f.norm() * h.norm());
            let form = f.inner(&apply_l(&s, delta, &f).unwrap()).re;
            let lap = f.inner(&neg_laplacian(&f)).re;
            assert!(form >= (1.0 - delta) * lap - 1e-12 * lap);
            assert!(form > 0.0);
        }
    }

    #[test]
    fn solve_diagonal_case() {
        let g = grid(2, 8);
        let k = g.freq_from(&[1, 3]).unwrap();
        let wave = ScalarField::<f64>::plane_wave(g, &k);
        let s = DisorderSample::constant(g, 0.0);
        let (u, rep) = solve_l(&s, 0.0, &wave, 1e-10).unwrap();
        assert!(rep.converged && rep.relative_residual <= 1e-10);
        let mut want = wave.clone();
        want.scale(Complex::new(1.0 / laplacian_symbol::<f64>(&k), 0.0));
        assert!(u.distance_to(&want) <= 1e-9 * want.norm());
    }

    fn dense_l(s: &DisorderSample<f64>, delta: f64) -> DMatrix<f64> {
        let g = *s.grid();
        let n = g.sites();
        let mut m = DMatrix::zeros(n, n);
        for col in 0..n {
            let e = ScalarField::delta(g, col);
            let le = apply_l(s, delta, &e).unwrap();
            for row in 0..n {
                m[(row, col)] = le.values()[row].re;
            }
        }
        m
    }

    #[test]
    fn solve_matches_dense_direct_solve() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let g = grid(1, 8);
        let s = signs(g, &mut rng);
        let delta = 0.1;
        let f = random_mean_zero(g, &mut rng);
        let (u, rep) = solve_l(&s, delta, &f, 1e-12).unwrap();
        assert!(rep.converged);
        // pin the constant mode with the rank-one fix L + 11^T/N
        let n = g.sites();
        let a = dense_l(&s, delta) + DMatrix::from_element(n, n, 1.0 / n as f64);
        let lu = a.lu();
        for part in [0, 1] {
            let rhs = DVector::from_iterator(
                n,
                f.values().iter().map(|v| if part == 0 { v.re } else { v.im }),
            );
            let x = lu.solve(&rhs).unwrap();
            for i in 0..n {
                let got = if part == 0 { u.values()[i].re } else { u.values()[i].im };
                assert!((got - x[i]).abs() < 1e-8, "site {i}: {got} vs {}", x[i]);
            }
        }
    }

    #[test]
    fn solve_errors() {
        let g = grid(1, 8);
        let s = DisorderSample::constant(g, 1.0);
        let f = ScalarField::<f64>::constant(g, Complex::one());
        assert!(matches!(solve_l(&s, 0.1, &f, 1e-10), Err(Error::NotMeanZero { .. })));
        let k = g.freq_from(&[1]).unwrap();
        let wave = ScalarField::plane_wave(g, &k);
        assert!(matches!(solve_l(&s, 1.0, &wave, 1e-10), Err(Error::DeltaTooLarge { .. })));
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let rough = signs(grid(1, 64), &mut rng);
        let w64 = ScalarField::plane_wave(grid(1, 64), &grid(1, 64).freq_from(&[3]).unwrap());
        let capped = ResolventSolver::new(grid(1, 64), 1e-14).with_max_iterations(1);
        assert!(matches!(capped.solve(&rough, 0.9, &w64), Err(Error::NoConvergence { .. })));
    }

    #[test]
    fn solve_then_apply_recovers_rhs() {
        let mut rng = ChaCha8Rng::seed_from_u64(15);
        let g = grid(2, 16);
        let s = signs(g, &mut rng);
        let f = random_mean_zero(g, &mut rng);
        let (u, rep) = solve_l(&s, 0.5, &f, 1e-10).unwrap();
        let back = apply_l(&s, 0.5, &u).unwrap();
        assert!(back.distance_to(&f) <= 1e-10 * f.norm() * 1.0001);
        assert!(rep.iterations < 50 * 16);
    }

    #[test]
    fn bound_is_enforced() {
        let g = grid(1, 4);
        assert!(matches!(
            DisorderSample::new(g, vec![0.5, -2.0, 0.0, 0.0], 1.0),
            Err(Error::BoundViolated { .. })
        ));
    }

    #[test]
    fn chain_special_cases() {
        let mut rng = ChaCha8Rng::seed_from_u64(16);
        let g = grid(2, 6);
        let a = random_vector(g, &mut rng);
        let zero = compose_chain(vec![DisorderSample::constant(g, 0.0); 3], g).unwrap();
        assert_eq!(zero.apply(&a).unwrap().max_abs(), 0.0);
        let one = compose_chain(vec![DisorderSample::constant(g, 1.0)], g).unwrap();
        let ka = make_k::<f64>(g).apply(&a).unwrap();
        assert!(one.apply(&a).unwrap().distance_to(&ka) < 1e-13);
        assert!(compose_chain::<f64>(vec![], g).is_err());
    }

    #[test]
    fn chain_kernel_matches_double_convolution() {
        let mut rng = ChaCha8Rng::seed_from_u64(17);
        let g = grid(1, 12);
        let s1 = signs(g, &mut rng);
        let s2 = DisorderSample::new(
            g,
            (0..12).map(|_| rng.random_range(-1.0..1.0)).collect(),
            1.0,
        )
        .unwrap();
        let chain = compose_chain(vec![s1.clone(), s2.clone()], g).unwrap();
        let col = chain.kernel_column(0).unwrap();
        // K(z) = delta_{z,0} - 1/L in one dimension
        let kz = |z: usize| if z == 0 { 1.0 - 1.0 / 12.0 } else { -1.0 / 12.0 };
        for x in 0..12 {
            let brute: f64 = (0..12)
                .map(|y| kz((x + 12 - y) % 12) * s1.sigma()[y] * kz(y) * s2.sigma()[0])
                .sum();
            assert!((col[x].re - brute).abs() < 1e-10 && col[x].im.abs() < 1e-10);
        }
    }
}
