//! Ground truth for small systems: exact disorder averages by exhaustive
//! enumeration with dense linear algebra, the chain-kernel bound scan, the
//! path-family combinatorics behind the moment bounds, and the Markov
//! brothers inequality.

use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::annealed::{default_kernel_range, fit_decay_with, kernel_points, DecayFit, FitMode, FitOptions};
use crate::disorder::{configuration_count, derive_seed, DistributionSpec, Ensemble};
use crate::error::{Error, Result};
use crate::expansion::{estimate_series_symbol, estimate_term_kernel, SignConvention, TermEstimate};
use crate::lattice::{laplacian_symbol, FreqVector, TorusGrid};
use crate::operators::{compose_chain, make_k, DisorderSample};
use crate::scalar::{CompensatedSum, Complex};

pub const MAX_EXACT_SITES: usize = 20;
pub const MAX_CONFIGURATIONS: usize = 1 << 20;
pub const MAX_PATHS: usize = 1 << 22;

/// `(L + J/N)^-1 - J/N`: the pseudo-inverse of a symmetric matrix whose
/// kernel is exactly the constants.
fn sector_pseudo_inverse(m: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = m.nrows();
    let j = DMatrix::from_element(n, n, 1.0 / n as f64);
    let inv = (m + &j)
        .cholesky()
        .ok_or_else(|| Error::NotPositive("matrix is not positive on the mean-zero sector".into()))?
        .inverse();
    Ok(inv - j)
}

/// Dense `grad*((1 + delta sigma) grad)`, one weighted edge per site and axis.
pub fn dense_operator(grid: &TorusGrid, sigma: &[f64], delta: f64) -> DMatrix<f64> {
    let n = grid.sites();
    let mut m = DMatrix::zeros(n, n);
    for x in 0..n {
        let a = 1.0 + delta * sigma[x];
        for axis in 0..grid.dim() {
            let y = grid.shift(x, axis, 1);
            m[(x, x)] += a;
            m[(y, y)] += a;
            m[(x, y)] -= a;
            m[(y, x)] -= a;
        }
    }
    m
}

/// Dense `-Delta`.
pub fn dense_laplacian(grid: &TorusGrid) -> DMatrix<f64> {
    dense_operator(grid, &vec![0.0; grid.sites()], 0.0)
}

/// Exact annealed quantities at one nonzero frequency.
#[derive(Clone, Debug, PartialEq)]
pub struct ExactProbe {
    pub freq: FreqVector,
    pub q2: f64,
    pub a_hat: f64,
    pub k1: f64,
}

#[derive(Clone, Debug)]
pub struct ExactResult {
    pub grid: TorusGrid,
    pub spec: DistributionSpec,
    pub delta: f64,
    pub configurations: usize,
    /// `E L^+`.
    pub mean_resolvent: DMatrix<f64>,
    /// `A = (E L^+)^+`.
    pub effective: DMatrix<f64>,
    pub probes: Vec<ExactProbe>,
}

impl ExactResult {
    pub fn resolvent_asymmetry(&self) -> f64 {
        max_abs(&(&self.mean_resolvent - self.mean_resolvent.transpose()))
    }

    pub fn effective_asymmetry(&self) -> f64 {
        max_abs(&(&self.effective - self.effective.transpose()))
    }

    /// Smallest eigenvalue of `A` on the mean-zero sector.
    pub fn sector_min_eigenvalue(&self) -> f64 {
        let n = self.grid.sites();
        let shifted = &self.effective + DMatrix::from_element(n, n, 1.0 / n as f64);
        let eig = shifted.symmetric_eigen().eigenvalues;
        // the constant vector contributes eigenvalue 1; drop the one closest to it
        let mut vals: Vec<f64> = eig.iter().copied().collect();
        vals.sort_by(f64::total_cmp);
        let drop = vals
            .iter()
            .enumerate()
            .min_by(|a, b| (a.1 - 1.0).abs().total_cmp(&(b.1 - 1.0).abs()))
            .map(|(i, _)| i)
            .expect("nonempty");
        vals.remove(drop);
        vals.first().copied().unwrap_or(f64::INFINITY)
    }

    pub fn is_positive_definite(&self) -> bool {
        self.sector_min_eigenvalue() > 0.0
    }

    /// Largest entry of `A - (-Delta)`.
    pub fn laplacian_defect(&self) -> f64 {
        max_abs(&(&self.effective - dense_laplacian(&self.grid)))
    }

    pub fn probe(&self, k: &FreqVector) -> Option<&ExactProbe> {
        self.probes.iter().find(|p| &p.freq == k)
    }

    /// Probe with the smallest `|xi|` (first in frequency order on ties).
    pub fn smallest_probe(&self) -> &ExactProbe {
        self.probes
            .iter()
            .min_by(|a, b| a.freq.xi_norm::<f64>().total_cmp(&b.freq.xi_norm::<f64>()))
            .expect("a nontrivial grid has nonzero frequencies")
    }
}

fn max_abs(m: &DMatrix<f64>) -> f64 {
    m.iter().fold(0.0f64, |a, v| a.max(v.abs()))
}

/// Exact `E L^+` over every configuration of a finite-support law.
pub fn enumerate_exact(grid: TorusGrid, spec: &DistributionSpec, delta: f64) -> Result<ExactResult> {
    enumerate_exact_capped(grid, spec, delta, MAX_CONFIGURATIONS)
}

pub fn enumerate_exact_capped(
    grid: TorusGrid,
    spec: &DistributionSpec,
    delta: f64,
    cap: usize,
) -> Result<ExactResult> {
    spec.validate()?;
    let n = grid.sites();
    if n > MAX_EXACT_SITES {
        return Err(Error::TooLarge(format!("{n} sites exceed {MAX_EXACT_SITES}")));
    }
    let support = spec
        .support()
        .ok_or_else(|| Error::InvalidSpec(format!("{} has no finite support", spec.name())))?;
    let product = delta.abs() * spec.bound();
    if product >= 1.0 {
        return Err(Error::DeltaTooLarge { product });
    }
    let count = configuration_count(support.len(), n, cap)?;
    let m = support.len();

    let chunk = 256;
    let partials: Vec<Vec<CompensatedSum<f64>>> = (0..count.div_ceil(chunk))
        .into_par_iter()
        .map(|c| {
            let mut acc = vec![CompensatedSum::default(); n * n];
            let mut sigma = vec![0.0; n];
            for idx in c * chunk..((c + 1) * chunk).min(count) {
                let mut rest = idx;
                let mut w = 1.0;
                for s in sigma.iter_mut() {
                    let (v, p) = support[rest % m];
                    rest /= m;
                    *s = v;
                    w *= p;
                }
                let inv = sector_pseudo_inverse(&dense_operator(&grid, &sigma, delta))
                    .expect("coercive for |delta| C < 1");
                for (a, v) in acc.iter_mut().zip(inv.iter()) {
                    a.add(w * v);
                }
            }
            acc
        })
        .collect();
    let mut total = vec![CompensatedSum::default(); n * n];
    for part in &partials {
        for (t, p) in total.iter_mut().zip(part) {
            t.add(p.value());
        }
    }
    let mean_resolvent = DMatrix::from_iterator(n, n, total.iter().map(|s| s.value()));
    let effective = sector_pseudo_inverse(&mean_resolvent)?;
    let probes = grid
        .frequencies()
        .filter(|k| !k.is_zero())
        .map(|k| {
            let a_hat = plane_wave_form(&grid, &effective, &k);
            let q2 = laplacian_symbol::<f64>(&k);
            ExactProbe {
                q2,
                a_hat,
                k1: a_hat / q2 - 1.0,
                freq: k,
            }
        })
        .collect();
    Ok(ExactResult {
        grid,
        spec: *spec,
        delta,
        configurations: count,
        mean_resolvent,
        effective,
        probes,
    })
}

/// `e^dagger M e / N` for the plane wave `e` at `k`.
fn plane_wave_form(grid: &TorusGrid, m: &DMatrix<f64>, k: &FreqVector) -> f64 {
    let n = grid.sites();
    let wave: Vec<Complex<f64>> = (0..n)
        .map(|x| {
            let c = grid.coords(x);
            let phase: f64 = (0..grid.dim()).map(|j| k.angle::<f64>(j) * c[j] as f64).sum();
            Complex::from_polar(1.0, phase)
        })
        .collect();
    let mut acc = Complex::new(0.0, 0.0);
    for x in 0..n {
        for y in 0..n {
            acc += wave[x].conj() * m[(x, y)] * wave[y];
        }
    }
    acc.re / n as f64
}

/// Every term up to `order` evaluated on the exhaustive ensemble (zero stderr).
pub fn exact_series(
    grid: TorusGrid,
    spec: &DistributionSpec,
    delta: f64,
    order: usize,
    freqs: &[FreqVector],
) -> Result<Vec<TermEstimate<f64>>> {
    let ens = Ensemble::exhaustive(grid, spec, MAX_CONFIGURATIONS)?;
    estimate_series_symbol(order, &ens, delta, freqs)
}

/// Which sign convention reproduces the exact `k1` at leading order.
#[derive(Clone, Debug, PartialEq)]
pub struct SignReport {
    pub alternating: bool,
    pub printed: bool,
    /// Largest `|k1_exact - s T_1| / |T_1|` over the probes, per convention.
    pub alternating_defect: f64,
    pub printed_defect: f64,
}

impl SignReport {
    /// The unique matching convention, if exactly one matches.
    pub fn chosen(&self) -> Option<SignConvention> {
        match (self.alternating, self.printed) {
            (true, false) => Some(SignConvention::Alternating),
            (false, true) => Some(SignConvention::Printed),
            _ => None,
        }
    }
}

/// A convention matches when `|k1_exact - s_1 T_1| <= 0.25 |T_1|` at every probe,
/// `T_1` being the first-order term's quadratic form.
pub fn resolve_sign_convention(exact: &ExactResult) -> Result<SignReport> {
    let freqs: Vec<FreqVector> = exact.probes.iter().map(|p| p.freq.clone()).collect();
    let terms = exact_series(exact.grid, &exact.spec, exact.delta, 1, &freqs)?;
    let defect = |conv: SignConvention| {
        let s: f64 = conv.sign(1);
        exact
            .probes
            .iter()
            .enumerate()
            .map(|(p, probe)| {
                let t1 = terms[0].quadratic_form(p).expect("symbol target").0.re;
                (probe.k1 - s * t1).abs() / t1.abs()
            })
            .fold(0.0f64, f64::max)
    };
    let alternating_defect = defect(SignConvention::Alternating);
    let printed_defect = defect(SignConvention::Printed);
    Ok(SignReport {
        alternating: alternating_defect <= 0.25,
        printed: printed_defect <= 0.25,
        alternating_defect,
        printed_defect,
    })
}

#[derive(Clone, Debug, PartialEq)]
pub struct ScanSettings {
    pub s_max: usize,
    pub eps: f64,
    pub trials: usize,
    pub seed: u64,
    /// Kernel fit range in shifted distance; `[2, L/4]` when `None`.
    pub range: Option<(f64, f64)>,
    pub bins_per_octave: usize,
}

impl ScanSettings {
    pub fn new(s_max: usize, eps: f64, trials: usize, seed: u64) -> Self {
        Self {
            s_max,
            eps,
            trials,
            seed,
            range: None,
            bins_per_octave: 2,
        }
    }
}

#[derive(Clone, Debug)]
pub struct Lemma1Row {
    pub s: usize,
    /// `sup_x |T(x, x0)| |x - x0|^(d - eps)` over sites and trials.
    pub constant: f64,
    /// `c_s / c_(s-1)`, absent for `s = 1` or a vanishing predecessor.
    pub ratio: Option<f64>,
    /// Decay fit of the per-site maximum over trials.
    pub fit: Option<DecayFit>,
}

#[derive(Clone, Debug)]
pub struct Lemma1Scan {
    pub rows: Vec<Lemma1Row>,
}

impl Lemma1Scan {
    /// Largest growth ratio, the empirical per-step constant.
    pub fn growth_constant(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.ratio)
            .fold(None, |a, r| Some(a.map_or(r, |a: f64| a.max(r))))
    }
}

/// Random `+-1` fields, `s_max` per trial.
pub fn lemma1_scan(grid: TorusGrid, settings: &ScanSettings) -> Result<Lemma1Scan> {
    let fields: Vec<Vec<Vec<f64>>> = (0..settings.trials as u64)
        .map(|t| {
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(settings.seed, t));
            (0..settings.s_max)
                .map(|_| {
                    (0..grid.sites())
                        .map(|_| if rng.random_bool(0.5) { 1.0 } else { -1.0 })
                        .collect()
                })
                .collect()
        })
        .collect();
    lemma1_scan_fields(grid, &fields, settings)
}

/// Scan over explicit fields: `fields[trial][j]` is `sigma_(j+1)`.
pub fn lemma1_scan_fields(
    grid: TorusGrid,
    fields: &[Vec<Vec<f64>>],
    settings: &ScanSettings,
) -> Result<Lemma1Scan> {
    if settings.s_max == 0 || fields.is_empty() {
        return Err(Error::InvalidSetting("s_max and trials must be positive".into()));
    }
    let d = grid.dim();
    let source = grid.origin();
    let power = d as f64 - settings.eps;
    let range = settings.range.unwrap_or_else(|| default_kernel_range(&grid));
    let mut rows: Vec<Lemma1Row> = Vec::with_capacity(settings.s_max);
    for s in 1..=settings.s_max {
        let columns = fields
            .par_iter()
            .map(|trial| {
                let samples = trial[..s]
                    .iter()
                    .map(|f| {
                        let bound = f.iter().fold(0.0f64, |a, v| a.max(v.abs())).max(1.0);
                        DisorderSample::new(grid, f.clone(), bound)
                    })
                    .collect::<Result<Vec<_>>>()?;
                compose_chain(samples, grid)?.kernel_column(source)
            })
            .collect::<Result<Vec<_>>>()?;
        let mut site_max = vec![0.0f64; grid.sites()];
        for col in &columns {
            for (x, m) in site_max.iter_mut().enumerate() {
                let block = &col[x * d * d..(x + 1) * d * d];
                *m = m.max(block.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt());
            }
        }
        let constant = (0..grid.sites())
            .filter(|&x| x != source)
            .map(|x| site_max[x] * grid.distance(source, x).powf(power))
            .fold(0.0f64, f64::max);
        let ratio = rows
            .last()
            .and_then(|prev| (prev.constant > 0.0).then(|| constant / prev.constant));
        let points = kernel_points::<f64>(&grid, source, |x| {
            vec![(Complex::new(site_max[x], 0.0), 0.0)]
        });
        let mut options = FitOptions::new(FitMode::Kernel, range);
        options.bins_per_octave = settings.bins_per_octave;
        rows.push(Lemma1Row {
            s,
            constant,
            ratio,
            fit: fit_decay_with(&points, &options).ok(),
        });
    }
    Ok(Lemma1Scan { rows })
}

/// Classical Markov brothers constant
/// `D^2 (D^2 - 1) ... (D^2 - (k-1)^2) / (1 3 5 ... (2k - 1))`.
pub fn markov_bound(degree: usize, order: usize) -> Result<f64> {
    if order == 0 || order > degree {
        return Err(Error::InvalidOrder { degree, order });
    }
    let d2 = (degree * degree) as f64;
    Ok((0..order).fold(1.0, |acc, i| {
        let i = i as f64;
        acc * (d2 - i * i) / (2.0 * i + 1.0)
    }))
}

/// Coefficients (ascending powers) of the Chebyshev polynomial `T_D`.
pub fn chebyshev_coefficients(degree: usize) -> Vec<f64> {
    let mut prev = vec![1.0];
    if degree == 0 {
        return prev;
    }
    let mut cur = vec![0.0, 1.0];
    for _ in 1..degree {
        let mut next = vec![0.0; cur.len() + 1];
        for (i, c) in cur.iter().enumerate() {
            next[i + 1] += 2.0 * c;
        }
        for (i, c) in prev.iter().enumerate() {
            next[i] -= c;
        }
        prev = cur;
        cur = next;
    }
    cur
}

fn horner(coeffs: &[f64], t: f64) -> f64 {
    coeffs.iter().rev().fold(0.0, |acc, c| acc * t + c)
}

fn derivative(coeffs: &[f64]) -> Vec<f64> {
    coeffs
        .iter()
        .enumerate()
        .skip(1)
        .map(|(i, c)| i as f64 * c)
        .collect()
}

/// `max_{[-1,1]} |p|` from a dense grid refined by golden-section search
/// around every grid-local maximum.
fn sup_abs(coeffs: &[f64], points: usize) -> f64 {
    let f = |t: f64| horner(coeffs, t).abs();
    let h = 2.0 / points as f64;
    let ts: Vec<f64> = (0..=points).map(|i| (-1.0 + i as f64 * h).min(1.0)).collect();
    let vals: Vec<f64> = ts.iter().map(|&t| f(t)).collect();
    let mut best = vals.iter().copied().fold(0.0f64, f64::max);
    for i in 1..points {
        if vals[i] >= vals[i - 1] && vals[i] >= vals[i + 1] {
            best = best.max(golden_max(&f, ts[i - 1], ts[i + 1]));
        }
    }
    best
}

fn golden_max(f: &impl Fn(f64) -> f64, mut a: f64, mut b: f64) -> f64 {
    let g = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - g * (b - a);
    let mut d = a + g * (b - a);
    let (mut fc, mut fd) = (f(c), f(d));
    for _ in 0..100 {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - g * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + g * (b - a);
            fd = f(d);
        }
        if b - a < 1e-15 {
            break;
        }
    }
    fc.max(fd)
}

/// `max |P^(k)| / (markov_bound(D, k) max |P|)` on `[-1, 1]`, `D` the degree.
pub fn markov_verify(coeffs: &[f64], order: usize) -> Result<f64> {
    let degree = coeffs.iter().rposition(|&c| c != 0.0).unwrap_or(0);
    let bound = markov_bound(degree, order)?;
    let points = (50 * degree).max(1000);
    let mut dk = coeffs[..=degree].to_vec();
    for _ in 0..order {
        dk = derivative(&dk);
    }
    let top = sup_abs(&coeffs[..=degree], points);
    if top == 0.0 {
        return Ok(0.0);
    }
    Ok(sup_abs(&dk, points) / (bound * top))
}

/// One family `S_(j1,j2)` (paths with `x_j1 = x_j2`) and its disjointified part.
#[derive(Clone, Debug)]
pub struct PathFamily {
    pub j1: usize,
    pub j2: usize,
    pub members: Vec<bool>,
    pub disjoint_members: Vec<bool>,
}

impl PathFamily {
    pub fn len(&self) -> usize {
        self.members.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn disjoint_len(&self) -> usize {
        self.disjoint_members.iter().filter(|&&b| b).count()
    }
}

/// Paths `(x_0, ..., x_n)` whose head `{x_0..x_j0}` meets the tail
/// `{x_(j0+1)..x_n}`, split into the families `S_(j1,j2)`.
#[derive(Clone, Debug)]
pub struct DiagramSets {
    pub n: usize,
    pub j0: usize,
    pub grid: TorusGrid,
    /// Membership in `S`, indexed by the base-`N` path code (`x_0` most significant).
    pub s: Vec<bool>,
    pub families: Vec<PathFamily>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct DiagramChecks {
    pub pairwise_disjoint: bool,
    pub unions_agree: bool,
    pub union_is_s: bool,
    /// Every member of `S'_(j1,j2)` has `{x_0..x_(j1-1)}` disjoint from the tail.
    pub head_condition: bool,
}

impl DiagramChecks {
    pub fn all(&self) -> bool {
        self.pairwise_disjoint && self.unions_agree && self.union_is_s && self.head_condition
    }
}

fn path_count(grid: &TorusGrid, n: usize) -> Result<usize> {
    let mut count: usize = 1;
    for _ in 0..=n {
        count = count
            .checked_mul(grid.sites())
            .filter(|&c| c <= MAX_PATHS)
            .ok_or_else(|| Error::TooLarge(format!("{}^{} paths exceed {MAX_PATHS}", grid.sites(), n + 1)))?;
    }
    Ok(count)
}

fn decode_path(code: usize, sites: usize, n: usize) -> Vec<usize> {
    let mut path = vec![0; n + 1];
    let mut rest = code;
    for slot in path.iter_mut().rev() {
        *slot = rest % sites;
        rest /= sites;
    }
    path
}

fn head_meets_tail(path: &[usize], head_end: usize, tail_start: usize) -> bool {
    path[..=head_end].iter().any(|x| path[tail_start..].contains(x))
}

pub fn diagram_enumerate(n: usize, j0: usize, grid: TorusGrid) -> Result<DiagramSets> {
    if n == 0 || n > 4 || j0 >= n {
        return Err(Error::InvalidOrder { degree: n, order: j0 });
    }
    let count = path_count(&grid, n)?;
    let sites = grid.sites();
    let paths: Vec<Vec<usize>> = (0..count).map(|c| decode_path(c, sites, n)).collect();
    let s: Vec<bool> = paths.iter().map(|p| head_meets_tail(p, j0, j0 + 1)).collect();
    let raw = |j1: usize, j2: usize| -> Vec<bool> { paths.iter().map(|p| p[j1] == p[j2]).collect() };
    let mut families = Vec::new();
    for j1 in 0..=j0 {
        for j2 in j0 + 1..=n {
            let members = raw(j1, j2);
            let mut removed = vec![false; count];
            for j in 0..j1 {
                for jp in j0 + 1..=n {
                    for (r, m) in removed.iter_mut().zip(raw(j, jp)) {
                        *r |= m;
                    }
                }
            }
            for jp in j0 + 1..j2 {
                for (r, m) in removed.iter_mut().zip(raw(j1, jp)) {
                    *r |= m;
                }
            }
            let disjoint_members = members.iter().zip(&removed).map(|(&m, &r)| m && !r).collect();
            families.push(PathFamily {
                j1,
                j2,
                members,
                disjoint_members,
            });
        }
    }
    Ok(DiagramSets {
        n,
        j0,
        grid,
        s,
        families,
    })
}

impl DiagramSets {
    pub fn path(&self, code: usize) -> Vec<usize> {
        decode_path(code, self.grid.sites(), self.n)
    }

    pub fn s_len(&self) -> usize {
        self.s.iter().filter(|&&b| b).count()
    }

    pub fn checks(&self) -> DiagramChecks {
        let count = self.s.len();
        let mut pairwise_disjoint = true;
        let mut unions_agree = true;
        let mut union_is_s = true;
        let mut head_condition = true;
        for code in 0..count {
            let in_raw = self.families.iter().any(|f| f.members[code]);
            let hits = self.families.iter().filter(|f| f.disjoint_members[code]).count();
            pairwise_disjoint &= hits <= 1;
            unions_agree &= in_raw == (hits > 0);
            union_is_s &= in_raw == self.s[code];
            if hits > 0 {
                let path = self.path(code);
                for f in self.families.iter().filter(|f| f.disjoint_members[code]) {
                    head_condition &= f.j1 == 0 || !head_meets_tail(&path, f.j1 - 1, self.j0 + 1);
                }
            }
        }
        DiagramChecks {
            pairwise_disjoint,
            unions_agree,
            union_is_s,
            head_condition,
        }
    }
}

/// How the split point `j0` is chosen for each path.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum ShellRule {
    Fixed(usize),
    /// The step of greatest length (first on ties).
    LongestStep,
}

#[derive(Clone, Debug, PartialEq)]
pub struct IrreducibilityResult {
    /// Full path sum, `d x d` row-major.
    pub full: Vec<f64>,
    /// Sum restricted to paths whose head meets their tail.
    pub restricted: Vec<f64>,
    /// The same entry of the exhaustive-ensemble kernel term.
    pub series_term: Vec<f64>,
    /// Sum over paths of the contribution with every factor replaced by its
    /// absolute value, the comparison scale.
    pub scale: f64,
}

impl IrreducibilityResult {
    pub fn difference(&self) -> f64 {
        max_diff(&self.full, &self.restricted)
    }

    pub fn series_difference(&self) -> f64 {
        max_diff(&self.full, &self.series_term)
    }

    pub fn holds(&self, rel: f64) -> bool {
        self.difference() <= rel * self.scale && self.series_difference() <= rel * self.scale
    }
}

fn max_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).fold(0.0f64, |m, (x, y)| m.max((x - y).abs()))
}

/// Path-sum form of the order-`n` term at `(x0, xn)`: each interior path
/// carries the exact weight `E[b_x0 P(b_x1 P(... b_xn))]`, `P` the centering,
/// times the product of `K` blocks along it.
pub fn irreducibility_check(
    n: usize,
    grid: TorusGrid,
    spec: &DistributionSpec,
    delta: f64,
    endpoints: (usize, usize),
    rule: ShellRule,
) -> Result<IrreducibilityResult> {
    if n == 0 || n > 4 {
        return Err(Error::InvalidOrder { degree: n, order: 0 });
    }
    if let ShellRule::Fixed(j0) = rule {
        if j0 >= n {
            return Err(Error::InvalidOrder { degree: n, order: j0 });
        }
    }
    let (x0, xn) = endpoints;
    let sites = grid.sites();
    if x0 >= sites || xn >= sites {
        return Err(Error::LengthMismatch { expected: sites, actual: x0.max(xn) });
    }
    let interior = path_count(&grid, n.saturating_sub(2))?;
    let interior = if n == 1 { 1 } else { interior };
    let ens = Ensemble::<f64>::exhaustive(grid, spec, MAX_CONFIGURATIONS)?;
    let weights: Vec<f64> = (0..ens.len()).map(|i| ens.weight(i)).collect();
    let b: Vec<&[f64]> = ens.samples().iter().map(|s| s.sigma()).collect();
    let d = grid.dim();
    let kernel: Vec<f64> = make_k::<f64>(grid).kernel().iter().map(|c| c.re).collect();
    let k_block = |x: usize, y: usize| -> &[f64] {
        let disp: Vec<usize> = grid
            .coords(x)
            .iter()
            .zip(grid.coords(y))
            .map(|(a, b)| (a + grid.side() - b) % grid.side())
            .collect();
        let i = grid.index(&disp);
        &kernel[i * d * d..(i + 1) * d * d]
    };

    let contributions: Vec<(Vec<f64>, bool, f64)> = (0..interior)
        .into_par_iter()
        .map(|code| {
            let mut path = vec![x0];
            if n >= 2 {
                path.extend(decode_path(code, sites, n - 2));
            }
            path.push(xn);

            let mut v: Vec<f64> = b.iter().map(|s| delta * s[path[n]]).collect();
            for j in (0..n).rev() {
                let mean: f64 = v.iter().zip(&weights).map(|(a, w)| a * w).sum();
                for (vi, s) in v.iter_mut().zip(&b) {
                    *vi = delta * s[path[j]] * (*vi - mean);
                }
            }
            let weight: f64 = v.iter().zip(&weights).map(|(a, w)| a * w).sum();
            // same nesting on absolute values bounds every cancelling piece
            let mut va: Vec<f64> = b.iter().map(|s| (delta * s[path[n]]).abs()).collect();
            for j in (0..n).rev() {
                let mean: f64 = va.iter().zip(&weights).map(|(a, w)| a * w).sum();
                for (vi, s) in va.iter_mut().zip(&b) {
                    *vi = (delta * s[path[j]]).abs() * (*vi + mean);
                }
            }
            let magnitude: f64 = va.iter().zip(&weights).map(|(a, w)| a * w).sum();

            let mut prod = vec![0.0; d * d];
            for i in 0..d {
                prod[i * d + i] = 1.0;
            }
            for j in 0..n {
                let kb = k_block(path[j], path[j + 1]);
                let mut next = vec![0.0; d * d];
                for r in 0..d {
                    for c in 0..d {
                        next[r * d + c] = (0..d).map(|m| prod[r * d + m] * kb[m * d + c]).sum();
                    }
                }
                prod = next;
            }
            let j0 = match rule {
                ShellRule::Fixed(j0) => j0,
                ShellRule::LongestStep => (0..n)
                    .map(|j| (j, grid.distance(path[j], path[j + 1])))
                    .fold((0, -1.0), |best, (j, r)| if r > best.1 { (j, r) } else { best })
                    .0,
            };
            let restricted = head_meets_tail(&path, j0, j0 + 1);
            let size = prod.iter().map(|p| p.abs()).fold(0.0, f64::max) * magnitude;
            (prod.into_iter().map(|p| p * weight).collect(), restricted, size)
        })
        .collect();

    let mut full = vec![CompensatedSum::default(); d * d];
    let mut restricted = vec![CompensatedSum::default(); d * d];
    let mut scale = CompensatedSum::default();
    for (c, keep, size) in &contributions {
        scale.add(*size);
        for e in 0..d * d {
            full[e].add(c[e]);
            if *keep {
                restricted[e].add(c[e]);
            }
        }
    }
    let term = estimate_term_kernel(n, &ens, delta, xn)?;
    let series_term = (0..d)
        .flat_map(|i| (0..d).map(move |j| (i, j)))
        .map(|(i, j)| term.value(x0, i, j).re)
        .collect();
    Ok(IrreducibilityResult {
        full: full.iter().map(|s| s.value()).collect(),
        restricted: restricted.iter().map(|s| s.value()).collect(),
        series_term,
        scale: scale.value(),
    })
}
