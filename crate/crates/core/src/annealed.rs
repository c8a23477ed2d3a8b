//! Direct route to the effective operator: average the resolvent diagonal in
//! plane waves, invert it, and read off `k1`. Also the log-log decay fits
//! used for symbols and kernel columns.

use num_traits::Float;
use rayon::prelude::*;
use statrs::distribution::{ContinuousCDF, StudentsT};

use crate::disorder::Ensemble;
use crate::error::{Error, Result};
use crate::lattice::{laplacian_symbol, FreqVector, LatticeField, ScalarField, TorusGrid};
use crate::operators::ResolventSolver;
use crate::scalar::{Complex, Real};

/// Annealed quantities at one probe frequency.
#[derive(Clone, Debug)]
pub struct AnnealedProbe<T> {
    pub freq: FreqVector,
    pub q2: T,
    /// `E <e, L^-1 e> / N`, real part.
    pub r: T,
    /// Imaginary part of the same mean; zero up to noise.
    pub r_imag: T,
    pub r_stderr: T,
    pub a_hat: T,
    pub a_stderr: T,
    pub k1: T,
    pub k1_stderr: T,
}

#[derive(Clone, Debug)]
pub struct AnnealedSymbol<T> {
    grid: TorusGrid,
    delta: T,
    samples: usize,
    probes: Vec<AnnealedProbe<T>>,
    max_iterations: usize,
}

impl<T: Real> AnnealedSymbol<T> {
    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn probes(&self) -> &[AnnealedProbe<T>] {
        &self.probes
    }

    /// Largest CG iteration count over all solves.
    pub fn max_iterations(&self) -> usize {
        self.max_iterations
    }

    /// Every `r(k)` is positive within three standard errors.
    pub fn is_positive(&self) -> bool {
        self.probes
            .iter()
            .all(|p| p.r + T::of(3.0) * p.r_stderr > T::zero())
    }
}

/// Solve `L u = e_xi` for every sample and probe and invert the mean diagonal.
pub fn annealed_symbol<T: Real>(
    ensemble: &Ensemble<T>,
    delta: T,
    freqs: &[FreqVector],
    tol: T,
) -> Result<AnnealedSymbol<T>> {
    if ensemble.len() < 2 {
        return Err(Error::EnsembleTooSmall(ensemble.len()));
    }
    if freqs.iter().any(|k| k.is_zero()) {
        return Err(Error::ZeroFrequency);
    }
    let grid = *ensemble.grid();
    if let Some(k) = freqs.iter().find(|k| k.dim() != grid.dim()) {
        return Err(Error::LengthMismatch {
            expected: grid.dim(),
            actual: k.dim(),
        });
    }
    let product = Float::abs(delta) * ensemble.bound();
    if product >= T::one() {
        return Err(Error::DeltaTooLarge {
            product: product.to_f64_lossy(),
        });
    }
    let solver = ResolventSolver::new(grid, tol);
    let n = T::of_usize(grid.sites());
    let mut probes = Vec::with_capacity(freqs.len());
    let mut max_iterations = 0;
    for freq in freqs {
        let wave = ScalarField::plane_wave(grid, freq);
        let per_sample = ensemble
            .samples()
            .par_iter()
            .map(|s| {
                let (u, report) = solver.solve(s, delta, &wave)?;
                Ok((wave.inner(&u) / n, report.iterations))
            })
            .collect::<Result<Vec<(Complex<T>, usize)>>>()?;
        max_iterations = per_sample
            .iter()
            .map(|p| p.1)
            .fold(max_iterations, usize::max);
        let values: Vec<_> = per_sample.into_iter().map(|p| p.0).collect();
        let (mean, r_stderr) = ensemble.summarize(&values);
        let q2 = laplacian_symbol::<T>(freq);
        let a_hat = T::one() / mean.re;
        let a_stderr = r_stderr * a_hat * a_hat;
        probes.push(AnnealedProbe {
            freq: freq.clone(),
            q2,
            r: mean.re,
            r_imag: mean.im,
            r_stderr,
            a_hat,
            a_stderr,
            k1: a_hat / q2 - T::one(),
            k1_stderr: a_stderr / q2,
        });
    }
    Ok(AnnealedSymbol {
        grid,
        delta,
        samples: ensemble.len(),
        probes,
        max_iterations,
    })
}

/// Reference value subtracted in [`k1_fluctuation`].
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Reference<T> {
    /// The measured `k1` at the smallest `|xi|` among the probes.
    SmallestXi,
    Constant(T),
}

/// `|k1(xi) - k1_ref|` at one probe.
#[derive(Clone, Debug, PartialEq)]
pub struct FluctuationPoint<T> {
    pub freq: FreqVector,
    pub xi_norm: T,
    pub value: T,
    pub stderr: T,
}

/// Fluctuation table. With [`Reference::SmallestXi`] the probes at the
/// reference `|xi|` are dropped and the two standard errors add in quadrature.
pub fn k1_fluctuation<T: Real>(
    sym: &AnnealedSymbol<T>,
    reference: Reference<T>,
) -> Result<Vec<FluctuationPoint<T>>> {
    let norms: Vec<T> = sym.probes.iter().map(|p| p.freq.xi_norm::<T>()).collect();
    let same = |a: T, b: T| Float::abs(a - b) <= T::of(1e-12) * a.max(b);
    let mut distinct: Vec<T> = Vec::new();
    for &x in &norms {
        if !distinct.iter().any(|&d| same(d, x)) {
            distinct.push(x);
        }
    }
    if distinct.len() < 3 {
        return Err(Error::InsufficientProbes {
            needed: 3,
            got: distinct.len(),
        });
    }
    let (ref_value, ref_stderr, ref_norm) = match reference {
        Reference::Constant(c) => (c, T::zero(), None),
        Reference::SmallestXi => {
            let (i, _) = norms
                .iter()
                .enumerate()
                .fold((0, norms[0]), |best, (i, &x)| if x < best.1 { (i, x) } else { best });
            let p = &sym.probes[i];
            (p.k1, p.k1_stderr, Some(norms[i]))
        }
    };
    Ok(sym
        .probes
        .iter()
        .zip(&norms)
        .filter(|(_, &x)| ref_norm.is_none_or(|r| !same(r, x)))
        .map(|(p, &x)| FluctuationPoint {
            freq: p.freq.clone(),
            xi_norm: x,
            value: Float::abs(p.k1 - ref_value),
            stderr: p.k1_stderr.hypot(ref_stderr),
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum FitMode {
    /// Magnitudes against `|xi|`, one point per probe.
    Symbol,
    /// Magnitudes against distance, reduced to the maximum in each geometric bin.
    Kernel,
}

impl FitMode {
    pub fn name(self) -> &'static str {
        match self {
            FitMode::Symbol => "symbol",
            FitMode::Kernel => "kernel",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "symbol" => Some(FitMode::Symbol),
            "kernel" => Some(FitMode::Kernel),
            _ => None,
        }
    }
}

/// A magnitude `y` with standard error at abscissa `x` (distance or `|xi|`).
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct DecayPoint {
    pub x: f64,
    pub y: f64,
    pub stderr: f64,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct FitOptions {
    pub mode: FitMode,
    pub range: (f64, f64),
    /// Geometric bins per factor of two in kernel mode.
    pub bins_per_octave: usize,
    /// Weight log-points by `(y / stderr)^2`; unit weights otherwise or
    /// whenever a standard error is zero.
    pub weighted: bool,
}

impl FitOptions {
    pub fn new(mode: FitMode, range: (f64, f64)) -> Self {
        Self {
            mode,
            range,
            bins_per_octave: 2,
            weighted: true,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayFit {
    pub mode: FitMode,
    pub range: (f64, f64),
    /// `(ln x, ln y)` actually fitted.
    pub points: Vec<(f64, f64)>,
    pub weights: Vec<f64>,
    pub slope: f64,
    pub intercept: f64,
    /// Half-width of the 95% confidence interval of the slope.
    pub ci95: f64,
    /// Points inside the range dropped for being within 2 stderr of zero.
    pub excluded: Vec<DecayPoint>,
}

impl DecayFit {
    pub fn n_points(&self) -> usize {
        self.points.len()
    }

    /// Refit the stored log-points; returns `(slope, intercept, ci95)`.
    pub fn refit(&self) -> (f64, f64, f64) {
        weighted_line(&self.points, &self.weights)
    }
}

fn weighted_line(points: &[(f64, f64)], weights: &[f64]) -> (f64, f64, f64) {
    let sw: f64 = weights.iter().sum();
    let mx = points.iter().zip(weights).map(|(p, w)| w * p.0).sum::<f64>() / sw;
    let my = points.iter().zip(weights).map(|(p, w)| w * p.1).sum::<f64>() / sw;
    let sxx: f64 = points.iter().zip(weights).map(|(p, w)| w * (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * (p.0 - mx) * (p.1 - my))
        .sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let dof = points.len() - 2;
    let rss: f64 = points
        .iter()
        .zip(weights)
        .map(|(p, w)| w * (p.1 - intercept - slope * p.0).powi(2))
        .sum();
    let se = (rss / dof as f64 / sxx).sqrt();
    let t = StudentsT::new(0.0, 1.0, dof as f64)
        .expect("positive degrees of freedom")
        .inverse_cdf(0.975);
    (slope, intercept, t * se)
}

/// Weighted least squares of `ln y` on `ln x` over `options.range`.
pub fn fit_decay_with(points: &[DecayPoint], options: &FitOptions) -> Result<DecayFit> {
    let (lo, hi) = options.range;
    if !(lo > 0.0 && hi > lo) {
        return Err(Error::InvalidRange { lo, hi });
    }
    let slack = 1e-12 * hi;
    let in_range = points
        .iter()
        .filter(|p| p.x >= lo - slack && p.x <= hi + slack);
    let (kept, excluded): (Vec<DecayPoint>, Vec<DecayPoint>) =
        in_range.partition(|p| p.y > 0.0 && p.y > 2.0 * p.stderr);
    let used = match options.mode {
        FitMode::Symbol => kept,
        FitMode::Kernel => bin_maxima(&kept, lo, hi, options.bins_per_octave.max(1)),
    };
    if used.len() < 4 {
        return Err(Error::InsufficientPoints {
            needed: 4,
            got: used.len(),
        });
    }
    let logs: Vec<(f64, f64)> = used.iter().map(|p| (p.x.ln(), p.y.ln())).collect();
    let weights: Vec<f64> = if options.weighted && used.iter().all(|p| p.stderr > 0.0) {
        used.iter().map(|p| (p.y / p.stderr).powi(2)).collect()
    } else {
        vec![1.0; used.len()]
    };
    let (slope, intercept, ci95) = weighted_line(&logs, &weights);
    Ok(DecayFit {
        mode: options.mode,
        range: options.range,
        points: logs,
        weights,
        slope,
        intercept,
        ci95,
        excluded,
    })
}

pub fn fit_decay(points: &[DecayPoint], range: (f64, f64), mode: FitMode) -> Result<DecayFit> {
    fit_decay_with(points, &FitOptions::new(mode, range))
}

/// Largest point in each bin `[lo 2^(b/m), lo 2^((b+1)/m))`, the last bin closed.
fn bin_maxima(points: &[DecayPoint], lo: f64, hi: f64, per_octave: usize) -> Vec<DecayPoint> {
    let width = 2f64.powf(1.0 / per_octave as f64);
    let bins = ((hi / lo).ln() / width.ln() - 1e-9).ceil().max(1.0) as usize;
    let mut best: Vec<Option<DecayPoint>> = vec![None; bins];
    for p in points {
        let b = (((p.x / lo).ln() / width.ln()) + 1e-9).floor().max(0.0) as usize;
        let b = b.min(bins - 1);
        if best[b].is_none_or(|q| p.y > q.y) {
            best[b] = Some(*p);
        }
    }
    best.into_iter().flatten().collect()
}

/// Slopes with one fitted point removed at either end.
#[derive(Clone, Debug, PartialEq)]
pub struct FitStability {
    pub base: DecayFit,
    pub without_first: Option<f64>,
    pub without_last: Option<f64>,
    /// Largest slope change, `None` if a shrunk fit was not possible.
    pub max_shift: Option<f64>,
}

impl FitStability {
    /// Shift `>= 0.1`, or stability could not be assessed.
    pub fn range_sensitive(&self) -> bool {
        self.max_shift.is_none_or(|s| s >= 0.1)
    }
}

pub fn fit_stability(points: &[DecayPoint], options: &FitOptions) -> Result<FitStability> {
    let base = fit_decay_with(points, options)?;
    let refit_without = |skip: usize| -> Option<f64> {
        if base.points.len() < 5 {
            return None;
        }
        let pts: Vec<_> = base
            .points
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, p)| *p)
            .collect();
        let w: Vec<_> = base
            .weights
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != skip)
            .map(|(_, w)| *w)
            .collect();
        Some(weighted_line(&pts, &w).0)
    };
    let order = ordered_by_x(&base.points);
    let without_first = refit_without(order[0]);
    let without_last = refit_without(order[order.len() - 1]);
    let max_shift = match (without_first, without_last) {
        (Some(a), Some(b)) => Some((a - base.slope).abs().max((b - base.slope).abs())),
        _ => None,
    };
    Ok(FitStability {
        base,
        without_first,
        without_last,
        max_shift,
    })
}

fn ordered_by_x(points: &[(f64, f64)]) -> Vec<usize> {
    let mut idx: Vec<usize> = (0..points.len()).collect();
    idx.sort_by(|&a, &b| points[a].0.total_cmp(&points[b].0));
    idx
}

/// Default symbol-mode range: the two octaves starting at the smallest `x`.
pub fn lowest_octaves(points: &[DecayPoint]) -> Option<(f64, f64)> {
    let first = points.iter().map(|p| p.x).fold(f64::INFINITY, f64::min);
    first.is_finite().then_some((first, 4.0 * first))
}

/// Default kernel-mode range `[2, L/4]` in shifted distance.
pub fn default_kernel_range(grid: &TorusGrid) -> (f64, f64) {
    (2.0, grid.side() as f64 / 4.0)
}

/// Kernel column as decay points: abscissa `|x - source| + 1`, magnitude
/// the Frobenius norm of the `d x d` block at `x` (or the scalar entry).
/// `entry(x)` returns the block entries with their standard errors.
pub fn kernel_points<T: Real>(
    grid: &TorusGrid,
    source: usize,
    entry: impl Fn(usize) -> Vec<(Complex<T>, T)>,
) -> Vec<DecayPoint> {
    (0..grid.sites())
        .map(|x| {
            let block = entry(x);
            let norm2: f64 = block.iter().map(|(v, _)| v.norm_sqr().to_f64_lossy()).sum();
            let norm = norm2.sqrt();
            let var: f64 = if norm > 0.0 {
                block
                    .iter()
                    .map(|(v, s)| {
                        let w = v.norm().to_f64_lossy() / norm;
                        (w * s.to_f64_lossy()).powi(2)
                    })
                    .sum()
            } else {
                block.iter().map(|(_, s)| s.to_f64_lossy().powi(2)).sum()
            };
            DecayPoint {
                x: grid.distance(source, x) + 1.0,
                y: norm,
                stderr: var.sqrt(),
            }
        })
        .collect()
}

/// Symbol decay points `|k1(xi)|` from an annealed symbol.
pub fn symbol_points<T: Real>(sym: &AnnealedSymbol<T>) -> Vec<DecayPoint> {
    sym.probes
        .iter()
        .map(|p| DecayPoint {
            x: p.freq.xi_norm::<T>().to_f64_lossy(),
            y: Float::abs(p.k1).to_f64_lossy(),
            stderr: p.k1_stderr.to_f64_lossy(),
        })
        .collect()
}

pub fn fluctuation_points<T: Real>(table: &[FluctuationPoint<T>]) -> Vec<DecayPoint> {
    table
        .iter()
        .map(|p| DecayPoint {
            x: p.xi_norm.to_f64_lossy(),
            y: p.value.to_f64_lossy(),
            stderr: p.stderr.to_f64_lossy(),
        })
        .collect()
}

impl<T: Real> AnnealedSymbol<T> {
    /// The probe whose frequency is `k`, if present.
    pub fn probe(&self, k: &FreqVector) -> Option<&AnnealedProbe<T>> {
        self.probes.iter().find(|p| &p.freq == k)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::DistributionSpec;
    use crate::expansion::default_probes;
    use crate::operators::DisorderSample;

    fn grid(d: usize, l: usize) -> TorusGrid {
        TorusGrid::new(d, l).unwrap()
    }

    #[test]
    fn zero_delta_recovers_laplacian() {
        let g = grid(2, 8);
        let ens = Ensemble::<f64>::monte_carlo(g, &DistributionSpec::Rademacher, 2, 4).unwrap();
        let sym = annealed_symbol(&ens, 0.0, &default_probes(&g), 1e-13).unwrap();
        for p in sym.probes() {
            assert!((p.a_hat - p.q2).abs() <= 1e-12 * p.q2);
            assert!(p.k1.abs() < 1e-12);
        }
        let fl = k1_fluctuation(&sym, Reference::SmallestXi).unwrap();
        assert!(fl.iter().all(|p| p.value < 1e-12));
    }

    #[test]
    fn constant_coefficient_scales_symbol() {
        let g = grid(1, 16);
        let c = 0.5;
        let ens =
            Ensemble::from_samples(vec![DisorderSample::<f64>::constant(g, c); 3]).unwrap();
        let sym = annealed_symbol(&ens, 0.4, &default_probes(&g), 1e-13).unwrap();
        for p in sym.probes() {
            assert!((p.a_hat - 1.2 * p.q2).abs() < 1e-11 * p.q2);
            assert!(p.r_stderr < 1e-14);
        }
    }

    #[test]
    fn positivity_and_harmonic_mean_trend() {
        let g = grid(1, 32);
        let ens = Ensemble::<f64>::monte_carlo(g, &DistributionSpec::Rademacher, 5, 400).unwrap();
        let sym = annealed_symbol(&ens, 0.2, &default_probes(&g), 1e-10).unwrap();
        assert!(sym.is_positive());
        for p in sym.probes() {
            assert!(p.a_hat > 0.0);
            // effective coefficient sits below one, near 1 - delta^2
            assert!(p.k1 < 0.0 && p.k1 > -0.1, "{}", p.k1);
            assert!(p.r_imag.abs() < 1e-12);
        }
    }

    #[test]
    fn input_errors() {
        let g = grid(1, 8);
        let ens = Ensemble::<f64>::monte_carlo(g, &DistributionSpec::Rademacher, 5, 4).unwrap();
        let probes = default_probes(&g);
        assert!(matches!(annealed_symbol(&ens, 1.0, &probes, 1e-10), Err(Error::DeltaTooLarge { .. })));
        let zero = vec![g.freq_from(&[0]).unwrap()];
        assert!(matches!(annealed_symbol(&ens, 0.1, &zero, 1e-10), Err(Error::ZeroFrequency)));
        let sym = annealed_symbol(&ens, 0.1, &probes, 1e-10).unwrap();
        assert!(matches!(
            k1_fluctuation(&sym, Reference::SmallestXi),
            Err(Error::InsufficientProbes { needed: 3, got: 2 })
        ));
    }

    #[test]
    fn fluctuation_reference_handling() {
        let g = grid(1, 32);
        let ens = Ensemble::<f64>::monte_carlo(g, &DistributionSpec::Rademacher, 1, 20).unwrap();
        let sym = annealed_symbol(&ens, 0.1, &default_probes(&g), 1e-10).unwrap();
        let own = k1_fluctuation(&sym, Reference::SmallestXi).unwrap();
        assert_eq!(own.len(), sym.probes().len() - 1);
        let fixed = k1_fluctuation(&sym, Reference::Constant(-0.01)).unwrap();
        assert_eq!(fixed.len(), sym.probes().len());
        for (f, p) in fixed.iter().zip(sym.probes()) {
            assert_eq!(f.value, (p.k1 + 0.01).abs());
            assert_eq!(f.stderr, p.k1_stderr);
        }
    }

    fn power_law(c: f64, p: f64, xs: impl Iterator<Item = f64>) -> Vec<DecayPoint> {
        xs.map(|x| DecayPoint {
            x,
            y: c * x.powf(-p),
            stderr: 1e-3 * c * x.powf(-p),
        })
        .collect()
    }

    #[test]
    fn exact_power_law_is_recovered() {
        let pts = power_law(3.0, 1.7, (1..=200).map(f64::from));
        let kernel = fit_decay(&pts, (2.0, 64.0), FitMode::Kernel).unwrap();
        assert!((kernel.slope + 1.7).abs() < 1e-9);
        assert!((kernel.intercept - 3f64.ln()).abs() < 1e-9);
        assert_eq!(kernel.n_points(), 10);
        let symbol = fit_decay(&pts, (0.5, 10.0), FitMode::Symbol).unwrap();
        assert!((symbol.slope + 1.7).abs() < 1e-9);
        assert!(symbol.ci95 < 1e-9);
    }

    #[test]
    fn refit_reproduces_slope() {
        let mut pts = power_law(1.0, 2.0, (1..=64).map(f64::from));
        for (i, p) in pts.iter_mut().enumerate() {
            p.y *= 1.0 + 0.1 * ((i * 7 % 5) as f64 - 2.0) / 2.0;
            p.stderr = 0.05 * p.y;
        }
        let fit = fit_decay(&pts, (2.0, 32.0), FitMode::Kernel).unwrap();
        let (s, i, c) = fit.refit();
        assert!((s - fit.slope).abs() <= 1e-12 * fit.slope.abs());
        assert!((i - fit.intercept).abs() <= 1e-12 * fit.intercept.abs().max(1.0));
        assert!((c - fit.ci95).abs() <= 1e-12 * fit.ci95);
        assert!(fit.ci95 > 0.0);
    }

    #[test]
    fn noisy_points_are_excluded_and_counted() {
        let mut pts = power_law(1.0, 1.0, (1..=40).map(f64::from));
        pts[5].stderr = pts[5].y;
        pts[6].y = 0.0;
        let fit = fit_decay(&pts, (1.0, 40.0), FitMode::Symbol).unwrap();
        assert_eq!(fit.excluded.len(), 2);
        assert_eq!(fit.n_points(), 38);
        let few = power_law(1.0, 1.0, [1.0, 2.0, 3.0].into_iter());
        assert!(matches!(
            fit_decay(&few, (1.0, 3.0), FitMode::Symbol),
            Err(Error::InsufficientPoints { needed: 4, got: 3 })
        ));
    }

    #[test]
    fn kernel_mode_takes_bin_maximum() {
        let pts = vec![
            DecayPoint { x: 2.0, y: 1.0, stderr: 0.0 },
            DecayPoint { x: 2.5, y: 5.0, stderr: 0.0 },
            DecayPoint { x: 3.0, y: 0.5, stderr: 0.0 },
            DecayPoint { x: 4.0, y: 0.25, stderr: 0.0 },
            DecayPoint { x: 6.0, y: 0.1, stderr: 0.0 },
            DecayPoint { x: 8.0, y: 0.05, stderr: 0.0 },
        ];
        let binned = bin_maxima(&pts, 2.0, 8.0, 2);
        let xs: Vec<f64> = binned.iter().map(|p| p.x).collect();
        assert_eq!(xs, vec![2.5, 3.0, 4.0, 6.0]);
    }

    #[test]
    fn stability_of_a_clean_power_law() {
        let pts = power_law(2.0, 1.5, (1..=128).map(f64::from));
        let st = fit_stability(&pts, &FitOptions::new(FitMode::Kernel, (2.0, 64.0))).unwrap();
        assert!(st.max_shift.unwrap() < 1e-9);
        assert!(!st.range_sensitive());
    }

    #[test]
    fn kernel_points_use_shifted_distance() {
        let g = grid(2, 4);
        let pts = kernel_points::<f64>(&g, 0, |x| {
            vec![(Complex::new(x as f64, 0.0), 0.0), (Complex::new(0.0, 0.0), 0.0)]
        });
        assert_eq!(pts[0].x, 1.0);
        assert_eq!(pts[g.index(&[0, 3])].x, 2.0);
        assert_eq!(pts[5].y, 5.0);
    }

    proptest::proptest! {
        #[test]
        fn power_law_slopes(p in 0.2f64..3.0, c in 0.1f64..10.0) {
            let pts = power_law(c, p, (1..=64).map(f64::from));
            let fit = fit_decay(&pts, (2.0, 32.0), FitMode::Kernel).unwrap();
            proptest::prop_assert!((fit.slope + p).abs() < 1e-9);
        }
    }
}
