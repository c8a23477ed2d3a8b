//! Terms `<b (K P-perp b)^n>` of the multilinear series for the effective
//! coefficient correction, evaluated on an ensemble by stage-wise centered
//! operator chains, and their signed sum.
//!
//! A chain is read right to left: starting from a deterministic vector field
//! each stage multiplies by the sample's `sigma`, centers across the
//! ensemble, then applies `K`. After `n` stages one more multiplication by
//! `sigma` (uncentered) gives the order-`n` integrand. All orders up to the
//! requested maximum come out of one pass. Everything is computed at
//! `delta = 1`; a term of order `n` is scaled by `delta^(n+1)` on output.
//!
//! Standard errors of Monte Carlo ensembles with at least `2 * SECTION_MIN`
//! samples come from the spread of the same estimator over up to
//! `MAX_SECTIONS` disjoint contiguous sections (stage means included); smaller
//! ensembles use the per-sample spread.

use num_traits::{Float, One, Zero};
use rayon::prelude::*;

use crate::disorder::{center_stage_weighted, summarize, Ensemble, Weighting};
use crate::error::{Error, Result};
use crate::lattice::{laplacian_symbol, FreqVector, LatticeField, ScalarField, TorusGrid, VectorField};
use crate::operators::{make_k, DisorderSample, FourierMultiplier};
use crate::scalar::{Complex, Real};

/// What a term estimate is evaluated at.
#[derive(Clone, Debug, PartialEq)]
pub enum Target {
    /// Symbol at each listed nonzero frequency.
    Symbol(Vec<FreqVector>),
    /// Kernel column `(., source)` over every site.
    Kernel { source: usize },
}

impl Target {
    fn points(&self, grid: &TorusGrid) -> usize {
        match self {
            Target::Symbol(f) => f.len(),
            Target::Kernel { .. } => grid.sites(),
        }
    }
}

/// Which sign multiplies the order-`n` term in the assembled correction.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SignConvention {
    /// `(-1)^n`.
    Alternating,
    /// `(-1)^(n+1)`.
    Printed,
}

impl SignConvention {
    pub fn sign<T: Real>(self, n: usize) -> T {
        let odd = n % 2 == 1;
        match (self, odd) {
            (SignConvention::Alternating, true) | (SignConvention::Printed, false) => -T::one(),
            _ => T::one(),
        }
    }

    pub fn signs<T: Real>(self, order: usize) -> Vec<T> {
        (1..=order).map(|n| self.sign(n)).collect()
    }

    pub fn name(self) -> &'static str {
        match self {
            SignConvention::Alternating => "alternating",
            SignConvention::Printed => "printed",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "alternating" => Some(SignConvention::Alternating),
            "printed" => Some(SignConvention::Printed),
            _ => None,
        }
    }
}

/// Estimate of one series term: a `d x d` matrix per point with standard errors.
#[derive(Clone, Debug)]
pub struct TermEstimate<T> {
    order: usize,
    grid: TorusGrid,
    target: Target,
    unit_values: Vec<Complex<T>>,
    unit_stderr: Vec<T>,
    delta: T,
    samples: usize,
}

impl<T: Real> TermEstimate<T> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.grid
    }

    pub fn target(&self) -> &Target {
        &self.target
    }

    pub fn delta(&self) -> T {
        self.delta
    }

    pub fn samples(&self) -> usize {
        self.samples
    }

    pub fn points(&self) -> usize {
        self.target.points(&self.grid)
    }

    fn scale(&self) -> T {
        self.delta.powi(self.order as i32 + 1)
    }

    fn slot(&self, point: usize, i: usize, j: usize) -> usize {
        let d = self.grid.dim();
        (point * d + i) * d + j
    }

    pub fn value(&self, point: usize, i: usize, j: usize) -> Complex<T> {
        self.unit_values[self.slot(point, i, j)].scale(self.scale())
    }

    pub fn stderr(&self, point: usize, i: usize, j: usize) -> T {
        self.unit_stderr[self.slot(point, i, j)] * Float::abs(self.scale())
    }

    /// Same estimate reported at another `delta` (exact rescaling).
    pub fn at_delta(&self, delta: T) -> Self {
        Self {
            delta,
            ..self.clone()
        }
    }

    /// `q^dagger M q / |q|^2` at a symbol point, with a first-order stderr.
    pub fn quadratic_form(&self, point: usize) -> Option<(Complex<T>, T)> {
        let Target::Symbol(freqs) = &self.target else {
            return None;
        };
        Some(quadratic_form(&freqs[point], self.grid.dim(), |i, j| {
            (self.value(point, i, j), self.stderr(point, i, j))
        }))
    }
}

fn quadratic_form<T: Real>(
    k: &FreqVector,
    d: usize,
    entry: impl Fn(usize, usize) -> (Complex<T>, T),
) -> (Complex<T>, T) {
    let q = k.q::<T>();
    let q2 = laplacian_symbol::<T>(k);
    let mut value = Complex::zero();
    let mut var = T::zero();
    for i in 0..d {
        for j in 0..d {
            let (v, s) = entry(i, j);
            value = value + q[i].conj() * v * q[j];
            var = var + q[i].norm_sqr() * q[j].norm_sqr() * s * s;
        }
    }
    (value / q2, var.sqrt() / q2)
}

const MAX_SECTIONS: usize = 32;
const SECTION_MIN: usize = 8;

/// Run the centered chain from `init` through `max_order` stages, handing the
/// per-sample order-`n` integrands `sigma (K P-perp sigma)^n init` to `emit`.
fn propagate<T: Real>(
    samples: &[DisorderSample<T>],
    weighting: &Weighting<T>,
    k: &FourierMultiplier<T>,
    init: &VectorField<T>,
    max_order: usize,
    mut emit: impl FnMut(usize, &[VectorField<T>]),
) -> Result<()> {
    let mut states = vec![init.clone(); samples.len()];
    for stage in 1..=max_order + 1 {
        states
            .par_iter_mut()
            .zip(samples.par_iter())
            .for_each(|(st, s)| st.scale_sites(s.sigma()));
        if stage >= 2 {
            emit(stage - 1, &states);
        }
        if stage <= max_order {
            center_stage_weighted(&mut states, weighting)?;
            states
                .par_iter_mut()
                .for_each(|st| k.apply_in_place(st.data_mut()));
        }
    }
    Ok(())
}

/// Per-sample values of each output entry, `[entry][sample]`.
type Extract<'a, T> = dyn Fn(&[VectorField<T>]) -> Vec<Vec<Complex<T>>> + Sync + 'a;

/// `(mean, stderr)` per order and entry.
type OrderStats<T> = Vec<Vec<(Complex<T>, T)>>;

fn chain_estimate<T: Real>(
    ensemble: &Ensemble<T>,
    k: &FourierMultiplier<T>,
    init: &VectorField<T>,
    max_order: usize,
    extract: &Extract<'_, T>,
) -> Result<OrderStats<T>> {
    let run = |samples: &[DisorderSample<T>], weighting: &Weighting<T>| -> Result<OrderStats<T>> {
        let mut out = vec![Vec::new(); max_order];
        propagate(samples, weighting, k, init, max_order, |order, ys| {
            out[order - 1] = extract(ys)
                .par_iter()
                .map(|col| summarize(weighting, col))
                .collect();
        })?;
        Ok(out)
    };
    let mut full = run(ensemble.samples(), ensemble.weighting())?;
    let m = ensemble.len();
    let sections = (m / SECTION_MIN).min(MAX_SECTIONS);
    if !matches!(ensemble.weighting(), Weighting::Uniform) || sections < 2 {
        return Ok(full);
    }
    let parts = (0..sections)
        .map(|b| run(&ensemble.samples()[b * m / sections..(b + 1) * m / sections], &Weighting::Uniform))
        .collect::<Result<Vec<_>>>()?;
    for (order, entries) in full.iter_mut().enumerate() {
        for (e, (_, se)) in entries.iter_mut().enumerate() {
            let means: Vec<Complex<T>> = parts.iter().map(|p| p[order][e].0).collect();
            *se = summarize(&Weighting::Uniform, &means).1;
        }
    }
    Ok(full)
}

fn check_inputs<T: Real>(max_order: usize, ensemble: &Ensemble<T>) -> Result<()> {
    if max_order == 0 {
        return Err(Error::InvalidOrder {
            degree: 0,
            order: 0,
        });
    }
    if ensemble.len() < 2 {
        return Err(Error::EnsembleTooSmall(ensemble.len()));
    }
    Ok(())
}

struct Accumulator<T> {
    values: Vec<Vec<Complex<T>>>,
    stderr: Vec<Vec<T>>,
}

impl<T: Real> Accumulator<T> {
    fn new(max_order: usize, len: usize) -> Self {
        Self {
            values: vec![vec![Complex::zero(); len]; max_order],
            stderr: vec![vec![T::zero(); len]; max_order],
        }
    }

    fn finish(self, grid: TorusGrid, target: Target, delta: T, samples: usize) -> Vec<TermEstimate<T>> {
        self.values
            .into_iter()
            .zip(self.stderr)
            .enumerate()
            .map(|(n, (unit_values, unit_stderr))| TermEstimate {
                order: n + 1,
                grid,
                target: target.clone(),
                unit_values,
                unit_stderr,
                delta,
                samples,
            })
            .collect()
    }
}

/// Symbol estimates of every term `n = 1..=max_order` at the given frequencies.
pub fn estimate_series_symbol<T: Real>(
    max_order: usize,
    ensemble: &Ensemble<T>,
    delta: T,
    freqs: &[FreqVector],
) -> Result<Vec<TermEstimate<T>>> {
    check_inputs(max_order, ensemble)?;
    let grid = *ensemble.grid();
    if freqs.iter().any(|k| k.is_zero()) {
        return Err(Error::ZeroFrequency);
    }
    if let Some(k) = freqs.iter().find(|k| k.dim() != grid.dim()) {
        return Err(Error::LengthMismatch {
            expected: grid.dim(),
            actual: k.dim(),
        });
    }
    let d = grid.dim();
    let n_sites = T::of_usize(grid.sites());
    let k_op = make_k::<T>(grid);
    let mut acc = Accumulator::new(max_order, freqs.len() * d * d);
    for (p, freq) in freqs.iter().enumerate() {
        let wave = ScalarField::<T>::plane_wave(grid, freq);
        // <e_xi e_i, y>/N per output component and sample
        let extract = |ys: &[VectorField<T>]| -> Vec<Vec<Complex<T>>> {
            (0..d)
                .map(|i| {
                    ys.par_iter()
                        .map(|y| {
                            y.component(i)
                                .iter()
                                .zip(wave.values())
                                .fold(Complex::zero(), |a, (v, w)| a + w.conj() * v)
                                / n_sites
                        })
                        .collect()
                })
                .collect()
        };
        for j in 0..d {
            let mut pol = vec![Complex::zero(); d];
            pol[j] = Complex::one();
            let init = VectorField::plane_wave(grid, freq, &pol);
            let stats = chain_estimate(ensemble, &k_op, &init, max_order, &extract)?;
            for (order, entries) in stats.into_iter().enumerate() {
                for (i, (mean, se)) in entries.into_iter().enumerate() {
                    let slot = (p * d + i) * d + j;
                    acc.values[order][slot] = mean;
                    acc.stderr[order][slot] = se;
                }
            }
        }
    }
    Ok(acc.finish(grid, Target::Symbol(freqs.to_vec()), delta, ensemble.len()))
}

pub fn estimate_term_symbol<T: Real>(
    n: usize,
    ensemble: &Ensemble<T>,
    delta: T,
    freqs: &[FreqVector],
) -> Result<TermEstimate<T>> {
    let mut all = estimate_series_symbol(n, ensemble, delta, freqs)?;
    Ok(all.pop().expect("n >= 1 terms"))
}

/// Kernel columns `<b (K P-perp b)^m>(., source)` for `m = 1..=max_order`.
pub fn estimate_series_kernel<T: Real>(
    max_order: usize,
    ensemble: &Ensemble<T>,
    delta: T,
    source: usize,
) -> Result<Vec<TermEstimate<T>>> {
    check_inputs(max_order, ensemble)?;
    let grid = *ensemble.grid();
    if source >= grid.sites() {
        return Err(Error::LengthMismatch {
            expected: grid.sites(),
            actual: source,
        });
    }
    let d = grid.dim();
    let n = grid.sites();
    let k_op = make_k::<T>(grid);
    let mut acc = Accumulator::new(max_order, n * d * d);
    let extract = |ys: &[VectorField<T>]| -> Vec<Vec<Complex<T>>> {
        (0..n * d)
            .into_par_iter()
            .map(|e| ys.iter().map(|y| y.data()[e]).collect())
            .collect()
    };
    for j in 0..d {
        let init = VectorField::delta(grid, source, j);
        let stats = chain_estimate(ensemble, &k_op, &init, max_order, &extract)?;
        for (order, entries) in stats.into_iter().enumerate() {
            for (e, (mean, se)) in entries.into_iter().enumerate() {
                let (i, x) = (e / n, e % n);
                let slot = (x * d + i) * d + j;
                acc.values[order][slot] = mean;
                acc.stderr[order][slot] = se;
            }
        }
    }
    Ok(acc.finish(grid, Target::Kernel { source }, delta, ensemble.len()))
}

pub fn estimate_term_kernel<T: Real>(
    n: usize,
    ensemble: &Ensemble<T>,
    delta: T,
    source: usize,
) -> Result<TermEstimate<T>> {
    let mut all = estimate_series_kernel(n, ensemble, delta, source)?;
    Ok(all.pop().expect("n >= 1 terms"))
}

/// Signed sum of the terms `n = 1..=order`, with root-sum-square errors.
#[derive(Clone, Debug)]
pub struct K1Series<T> {
    order: usize,
    signs: Vec<T>,
    terms: Vec<TermEstimate<T>>,
    values: Vec<Complex<T>>,
    stderr: Vec<T>,
}

pub fn assemble_k1<T: Real>(
    terms: &[TermEstimate<T>],
    signs: &[T],
    order: usize,
) -> Result<K1Series<T>> {
    if order == 0 || signs.len() < order {
        return Err(Error::InconsistentProbes(format!(
            "need {order} signs, got {}",
            signs.len()
        )));
    }
    let mut picked = Vec::with_capacity(order);
    for n in 1..=order {
        let t = terms
            .iter()
            .find(|t| t.order == n)
            .ok_or_else(|| Error::InconsistentProbes(format!("missing term of order {n}")))?;
        picked.push(t.clone());
    }
    let first = &picked[0];
    for t in &picked[1..] {
        if t.grid != first.grid || t.target != first.target {
            return Err(Error::InconsistentProbes(format!(
                "order {} probes differ from order 1",
                t.order
            )));
        }
        if t.delta != first.delta {
            return Err(Error::InconsistentProbes(format!(
                "order {} evaluated at a different delta",
                t.order
            )));
        }
    }
    let d = first.grid.dim();
    let len = first.points() * d * d;
    let mut values = vec![Complex::zero(); len];
    let mut var = vec![T::zero(); len];
    for (t, &s) in picked.iter().zip(signs) {
        let scale = t.scale();
        for e in 0..len {
            values[e] = values[e] + t.unit_values[e].scale(s * scale);
            let se = t.unit_stderr[e] * scale;
            var[e] = var[e] + se * se;
        }
    }
    Ok(K1Series {
        order,
        signs: signs[..order].to_vec(),
        terms: picked,
        values,
        stderr: var.into_iter().map(|v| v.sqrt()).collect(),
    })
}

impl<T: Real> K1Series<T> {
    pub fn order(&self) -> usize {
        self.order
    }

    pub fn signs(&self) -> &[T] {
        &self.signs
    }

    pub fn terms(&self) -> &[TermEstimate<T>] {
        &self.terms
    }

    pub fn target(&self) -> &Target {
        &self.terms[0].target
    }

    pub fn grid(&self) -> &TorusGrid {
        &self.terms[0].grid
    }

    pub fn delta(&self) -> T {
        self.terms[0].delta
    }

    pub fn points(&self) -> usize {
        self.terms[0].points()
    }

    /// Power of `delta` at which the first omitted term enters.
    pub fn missing_tail_order(&self) -> usize {
        self.order + 2
    }

    fn slot(&self, point: usize, i: usize, j: usize) -> usize {
        let d = self.grid().dim();
        (point * d + i) * d + j
    }

    pub fn value(&self, point: usize, i: usize, j: usize) -> Complex<T> {
        self.values[self.slot(point, i, j)]
    }

    pub fn stderr(&self, point: usize, i: usize, j: usize) -> T {
        self.stderr[self.slot(point, i, j)]
    }

    /// The sum rebuilt from the stored terms and signs.
    pub fn recompute(&self, point: usize, i: usize, j: usize) -> Complex<T> {
        self.terms
            .iter()
            .zip(&self.signs)
            .fold(Complex::zero(), |acc, (t, &s)| acc + t.value(point, i, j).scale(s))
    }

    /// `q^dagger K1 q / |q|^2` at a symbol point, the scalar comparable
    /// with the annealed-route `k1`.
    pub fn quadratic_form(&self, point: usize) -> Option<(Complex<T>, T)> {
        let Target::Symbol(freqs) = self.target() else {
            return None;
        };
        Some(quadratic_form(&freqs[point], self.grid().dim(), |i, j| {
            (self.value(point, i, j), self.stderr(point, i, j))
        }))
    }
}

/// Probe frequencies along every coordinate axis and the full diagonal,
/// `k = 1..=max(1, L/4)`.
pub fn default_probes(grid: &TorusGrid) -> Vec<FreqVector> {
    let d = grid.dim();
    let top = (grid.side() / 4).max(1);
    let mut out = Vec::new();
    for axis in 0..d {
        for k in 1..=top {
            let mut v = vec![0; d];
            v[axis] = k;
            out.push(grid.freq_from(&v).expect("dimension matches"));
        }
    }
    if d > 1 {
        for k in 1..=top {
            out.push(grid.freq_from(&vec![k; d]).expect("dimension matches"));
        }
    }
    out
}
