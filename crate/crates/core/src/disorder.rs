//! I.i.d. mean-zero bounded coefficient fields, ensembles with
//! deterministic per-sample seeds, and the empirical projections
//! `P` (ensemble mean) and `P-perp` (centering).

use num_traits::Zero;
use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::lattice::{LatticeField, TorusGrid};
use crate::operators::DisorderSample;
use crate::scalar::{compensated_sum, Complex, Real};

/// Law of a single site value.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum DistributionSpec {
    /// `+1` or `-1` with probability 1/2 each.
    Rademacher,
    /// Uniform on `[-a, a]`.
    UniformSymmetric { half_width: f64 },
    /// `plus` with probability `p`, otherwise `minus`; `p plus + (1-p) minus = 0`.
    TwoPoint { p: f64, plus: f64, minus: f64 },
}

impl DistributionSpec {
    pub fn uniform(half_width: f64) -> Result<Self> {
        let s = Self::UniformSymmetric { half_width };
        s.validate()?;
        Ok(s)
    }

    pub fn two_point(p: f64, plus: f64, minus: f64) -> Result<Self> {
        let s = Self::TwoPoint { p, plus, minus };
        s.validate()?;
        Ok(s)
    }

    /// Mean exactly zero, finite bound, nonzero variance.
    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::Rademacher => Ok(()),
            Self::UniformSymmetric { half_width } => {
                if !half_width.is_finite() || half_width <= 0.0 {
                    return Err(Error::InvalidSpec(format!(
                        "uniform half-width must be finite and positive, got {half_width}"
                    )));
                }
                Ok(())
            }
            Self::TwoPoint { p, plus, minus } => {
                if !(p > 0.0 && p < 1.0) {
                    return Err(Error::InvalidSpec(format!("probability {p} not in (0,1)")));
                }
                if !plus.is_finite() || !minus.is_finite() {
                    return Err(Error::InvalidSpec("unbounded support".into()));
                }
                let mean = p * plus + (1.0 - p) * minus;
                let scale = plus.abs().max(minus.abs());
                if scale == 0.0 || plus == minus {
                    return Err(Error::InvalidSpec("zero variance".into()));
                }
                if mean.abs() > 1e-12 * scale {
                    return Err(Error::InvalidSpec(format!("nonzero mean {mean:e}")));
                }
                Ok(())
            }
        }
    }

    /// `C = max |support|`.
    pub fn bound(&self) -> f64 {
        match *self {
            Self::Rademacher => 1.0,
            Self::UniformSymmetric { half_width } => half_width,
            Self::TwoPoint { plus, minus, .. } => plus.abs().max(minus.abs()),
        }
    }

    pub fn variance(&self) -> f64 {
        self.moment(2)
    }

    /// `E[sigma^k]`.
    pub fn moment(&self, k: u32) -> f64 {
        match *self {
            Self::Rademacher => {
                if k.is_multiple_of(2) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::UniformSymmetric { half_width } => {
                if k % 2 == 1 {
                    0.0
                } else {
                    half_width.powi(k as i32) / (k as f64 + 1.0)
                }
            }
            Self::TwoPoint { p, plus, minus } => {
                p * plus.powi(k as i32) + (1.0 - p) * minus.powi(k as i32)
            }
        }
    }

    pub fn is_symmetric(&self) -> bool {
        match *self {
            Self::Rademacher | Self::UniformSymmetric { .. } => true,
            Self::TwoPoint { p, plus, minus } => p == 0.5 && plus == -minus,
        }
    }

    /// `(value, probability)` pairs for finite-support laws.
    pub fn support(&self) -> Option<Vec<(f64, f64)>> {
        match *self {
            Self::Rademacher => Some(vec![(-1.0, 0.5), (1.0, 0.5)]),
            Self::UniformSymmetric { .. } => None,
            Self::TwoPoint { p, plus, minus } => Some(vec![(minus, 1.0 - p), (plus, p)]),
        }
    }

    pub fn draw<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Rademacher => {
                if rng.random_bool(0.5) {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::UniformSymmetric { half_width } => rng.random_range(-half_width..=half_width),
            Self::TwoPoint { p, plus, minus } => {
                if rng.random_bool(p) {
                    plus
                } else {
                    minus
                }
            }
        }
    }

    pub fn name(&self) -> String {
        match *self {
            Self::Rademacher => "rademacher".into(),
            Self::UniformSymmetric { half_width } => format!("uniform_symmetric({half_width:e})"),
            Self::TwoPoint { p, plus, minus } => {
                format!("two_point({p:e},{plus:e},{minus:e})")
            }
        }
    }
}

/// Seed of sample `index` in the stream rooted at `master`: the first word
/// of ChaCha8 stream number `index` under key `master`.
pub fn derive_seed(master: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    rng.set_stream(index);
    rng.next_u64()
}

pub fn sample_sigma<T: Real>(
    grid: TorusGrid,
    spec: &DistributionSpec,
    seed: u64,
) -> Result<DisorderSample<T>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let sigma = (0..grid.sites())
        .map(|_| T::of(spec.draw(&mut rng)))
        .collect();
    DisorderSample::new(grid, sigma, T::of(spec.bound()))
}

/// How samples are weighted in ensemble averages.
#[derive(Clone, Debug, PartialEq)]
pub enum Weighting<T> {
    /// Monte Carlo: weight `1/M`, standard errors from the cross-sample spread.
    Uniform,
    /// Exhaustive enumeration: exact probabilities, zero standard error.
    Exact(Vec<T>),
}

#[derive(Clone, Debug, PartialEq)]
pub enum Provenance {
    Sampled { spec: DistributionSpec, master_seed: u64 },
    Exhaustive { spec: DistributionSpec },
    Explicit,
}

/// A set of disorder samples plus the weights defining `E`.
#[derive(Clone, Debug)]
pub struct Ensemble<T: Real> {
    grid: TorusGrid,
    samples: Vec<DisorderSample<T>>,
    weighting: Weighting<T>,
    provenance: Provenance,
}

impl<T: Real> Ensemble<T> {
    /// `m` i.i.d. samples; sample `i` is drawn from `derive_seed(master_seed, i)`.
    pub fn monte_carlo(
        grid: TorusGrid,
        spec: &DistributionSpec,
        master_seed: u64,
        m: usize,
    ) -> Result<Self> {
        if m < 2 {
            return Err(Error::EnsembleTooSmall(m));
        }
        spec.validate()?;
        let samples = (0..m as u64)
            .into_par_iter()
            .map(|i| sample_sigma(grid, spec, derive_seed(master_seed, i)))
            .collect::<Result<Vec<_>>>()?;
        Ok(Self {
            grid,
            samples,
            weighting: Weighting::Uniform,
            provenance: Provenance::Sampled {
                spec: *spec,
                master_seed,
            },
        })
    }

    /// Every configuration of a finite-support law, weighted by its probability.
    pub fn exhaustive(grid: TorusGrid, spec: &DistributionSpec, cap: usize) -> Result<Self> {
        spec.validate()?;
        let support = spec.support().ok_or_else(|| {
            Error::InvalidSpec(format!("{} has no finite support", spec.name()))
        })?;
        let count = configuration_count(support.len(), grid.sites(), cap)?;
        let bound = T::of(spec.bound());
        let (samples, weights): (Vec<_>, Vec<_>) = (0..count)
            .into_par_iter()
            .map(|idx| {
                let mut rest = idx;
                let mut sigma = Vec::with_capacity(grid.sites());
                let mut w = 1.0;
                for _ in 0..grid.sites() {
                    let (v, p) = support[rest % support.len()];
                    rest /= support.len();
                    sigma.push(T::of(v));
                    w *= p;
                }
                (
                    DisorderSample::new(grid, sigma, bound).expect("support within bound"),
                    T::of(w),
                )
            })
            .unzip();
        Ok(Self {
            grid,
            samples,
            weighting: Weighting::Exact(weights),
            provenance: Provenance::Exhaustive { spec: *spec },
        })
    }

    /// Equal-weight ensemble from explicit samples.
    pub fn from_samples(samples: Vec<DisorderSample<T>>) -> Result<Self> {
        if samples.len() < 2 {
            return Err(Error::EnsembleTooSmall(samples.len()));
        }
        let grid = *samples[0].grid();
        for s in &samples {
            crate::lattice::ensure_same_grid(&grid, s.grid())?;
        }
        Ok(Self {
            grid,
            samples,
            weighting: Weighting::Uniform,
            provenance: Provenance::Explicit,
        })
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn samples(&self) -> &[DisorderSample<T>] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn weighting(&self) -> &Weighting<T> {
        &self.weighting
    }

    pub fn provenance(&self) -> &Provenance {
        &self.provenance
    }

    /// Largest per-sample bound `C`.
    pub fn bound(&self) -> T {
        self.samples
            .iter()
            .fold(T::zero(), |acc, s| acc.max(s.bound()))
    }

    pub fn weight(&self, i: usize) -> T {
        match &self.weighting {
            Weighting::Uniform => T::one() / T::of_usize(self.samples.len()),
            Weighting::Exact(w) => w[i],
        }
    }

    /// Ensemble mean and its standard error, reduced in sample-index order.
    pub fn summarize(&self, values: &[Complex<T>]) -> (Complex<T>, T) {
        summarize(&self.weighting, values)
    }

    pub fn summarize_real(&self, values: &[T]) -> (T, T) {
        let c: Vec<_> = values.iter().map(|&v| Complex::new(v, T::zero())).collect();
        let (m, s) = self.summarize(&c);
        (m.re, s)
    }
}

pub(crate) fn configuration_count(support: usize, sites: usize, cap: usize) -> Result<usize> {
    let mut count: usize = 1;
    for _ in 0..sites {
        count = count
            .checked_mul(support)
            .filter(|&c| c <= cap)
            .ok_or_else(|| {
                Error::TooLarge(format!("{support}^{sites} configurations exceed cap {cap}"))
            })?;
    }
    Ok(count)
}

pub(crate) fn summarize<T: Real>(weighting: &Weighting<T>, values: &[Complex<T>]) -> (Complex<T>, T) {
    match weighting {
        Weighting::Uniform => {
            let m = T::of_usize(values.len());
            let mean = Complex::new(
                compensated_sum(values.iter().map(|v| v.re)),
                compensated_sum(values.iter().map(|v| v.im)),
            ) / m;
            if values.len() < 2 {
                return (mean, T::infinity());
            }
            let var = compensated_sum(values.iter().map(|v| (v - mean).norm_sqr()))
                / (m - T::one());
            (mean, (var / m).sqrt())
        }
        Weighting::Exact(w) => {
            let mean = Complex::new(
                compensated_sum(values.iter().zip(w).map(|(v, &w)| v.re * w)),
                compensated_sum(values.iter().zip(w).map(|(v, &w)| v.im * w)),
            );
            (mean, T::zero())
        }
    }
}

/// Subtract the cross-sample mean at every site and component
/// (equal weights). Needs at least two fields.
pub fn center_stage<T: Real, F: LatticeField<T> + Send + Sync>(fields: &mut [F]) -> Result<()> {
    center_stage_weighted(fields, &Weighting::Uniform)
}

pub fn center_stage_weighted<T: Real, F: LatticeField<T> + Send + Sync>(
    fields: &mut [F],
    weighting: &Weighting<T>,
) -> Result<()> {
    let m = fields.len();
    if m < 2 {
        return Err(Error::EnsembleTooSmall(m));
    }
    let len = fields[0].data().len();
    let mut mean = vec![Complex::<T>::zero(); len];
    // per entry the sum runs over samples in index order, whatever the thread count
    let chunk = 1024;
    mean.par_chunks_mut(chunk).enumerate().for_each(|(c, out)| {
        let start = c * chunk;
        let mut comp = vec![(crate::scalar::CompensatedSum::default(), crate::scalar::CompensatedSum::default()); out.len()];
        for (s, f) in fields.iter().enumerate() {
            let w = match weighting {
                Weighting::Uniform => T::one(),
                Weighting::Exact(w) => w[s],
            };
            for (acc, v) in comp.iter_mut().zip(&f.data()[start..start + out.len()]) {
                acc.0.add(v.re * w);
                acc.1.add(v.im * w);
            }
        }
        let norm = match weighting {
            Weighting::Uniform => T::one() / T::of_usize(m),
            Weighting::Exact(_) => T::one(),
        };
        for (o, acc) in out.iter_mut().zip(&comp) {
            *o = Complex::new(acc.0.value(), acc.1.value()).scale(norm);
        }
    });
    fields.par_iter_mut().for_each(|f| {
        for (v, mu) in f.data_mut().iter_mut().zip(&mean) {
            *v = *v - mu;
        }
    });
    Ok(())
}
