//! Batch experiments: a flat TOML config, one function per subcommand, CSV
//! outputs that each carry the config fingerprint.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::annealed::{
    annealed_symbol, default_kernel_range, fit_stability, k1_fluctuation, lowest_octaves, DecayPoint,
    FitMode, FitOptions, Reference,
};
use crate::disorder::{derive_seed, DistributionSpec, Ensemble};
use crate::error::Error;
use crate::expansion::{
    assemble_k1, default_probes, estimate_series_kernel, estimate_series_symbol, SignConvention,
};
use crate::lattice::{csv_writer, FreqVector, TorusGrid};
use crate::verification::{
    chebyshev_coefficients, diagram_enumerate, enumerate_exact, irreducibility_check, lemma1_scan,
    markov_bound, markov_verify, resolve_sign_convention, ScanSettings, ShellRule, MAX_CONFIGURATIONS,
};

/// Largest lattice accepted by the config validator.
pub const MAX_SITES: usize = 1 << 22;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config: {0}")]
    Config(String),
    #[error("numerical: {0}")]
    Numerical(String),
    #[error("io: {0}")]
    Io(String),
    #[error("no overlapping probes between the two runs")]
    NoOverlap,
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Numerical(_) => 3,
            _ => 2,
        }
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::NoConvergence { .. }
            | Error::NotPositive(_)
            | Error::InsufficientPoints { .. }
            | Error::InsufficientProbes { .. } => CliError::Numerical(e.to_string()),
            _ => CliError::Config(e.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

impl From<csv::Error> for CliError {
    fn from(e: csv::Error) -> Self {
        CliError::Io(e.to_string())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dim: usize,
    pub side: usize,
    pub delta: f64,
    /// `rademacher`, `uniform` or `two_point`.
    pub distribution: String,
    pub half_width: Option<f64>,
    pub p: Option<f64>,
    pub plus: Option<f64>,
    pub minus: Option<f64>,
    /// Monte Carlo sample count `M`.
    pub samples: usize,
    /// Use every configuration of a finite-support law instead of sampling.
    pub exhaustive: bool,
    /// Truncation order `N` of the series; path length in `diagrams`.
    pub order: usize,
    pub seed: u64,
    /// Explicit probe frequencies; axes plus diagonal when absent.
    pub probes: Option<Vec<Vec<usize>>>,
    /// `symbol` or `kernel`.
    pub target: String,
    /// Source site of kernel columns.
    pub source: usize,
    /// `alternating` or `printed`.
    pub sign: String,
    pub tol: f64,
    /// Fluctuation reference; the smallest-`|xi|` value when absent.
    pub reference: Option<f64>,
    pub fit_mode: String,
    pub fit_lo: Option<f64>,
    pub fit_hi: Option<f64>,
    pub bins_per_octave: usize,
    pub fit_input: Option<String>,
    /// Series order whose kernel column is fitted.
    pub fit_order: usize,
    pub eps: f64,
    pub trials: usize,
    pub s_max: usize,
    pub degree: usize,
    pub markov_order: usize,
    pub polynomials: usize,
    pub out: Option<String>,
    pub workers: Option<usize>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            dim: 1,
            side: 16,
            delta: 0.1,
            distribution: "rademacher".into(),
            half_width: None,
            p: None,
            plus: None,
            minus: None,
            samples: 1000,
            exhaustive: false,
            order: 4,
            seed: 0,
            probes: None,
            target: "symbol".into(),
            source: 0,
            sign: "alternating".into(),
            tol: 1e-10,
            reference: None,
            fit_mode: "kernel".into(),
            fit_lo: None,
            fit_hi: None,
            bins_per_octave: 2,
            fit_input: None,
            fit_order: 2,
            eps: 0.5,
            trials: 8,
            s_max: 4,
            degree: 6,
            markov_order: 3,
            polynomials: 1000,
            out: None,
            workers: None,
        }
    }
}

fn config_err(msg: impl Into<String>) -> CliError {
    CliError::Config(msg.into())
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> CliResult<Self> {
        toml::from_str(text).map_err(|e| config_err(e.to_string().replace('\n', " ")))
    }

    pub fn load(path: &Path) -> CliResult<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| config_err(format!("{}: {e}", path.display())))?;
        Self::from_toml(&text)
    }

    fn table(&self) -> toml::Table {
        toml::Table::try_from(self).expect("config serializes to a table")
    }

    /// Sorted-key TOML serialization.
    pub fn canonical(&self) -> String {
        toml::to_string(&self.table()).expect("table serializes")
    }

    /// SHA-256 of the canonical form without `out` and `workers`.
    pub fn fingerprint(&self) -> String {
        let mut t = self.table();
        t.remove("out");
        t.remove("workers");
        let text = toml::to_string(&t).expect("table serializes");
        hex::encode(Sha256::digest(text.as_bytes()))
    }

    pub fn grid(&self) -> CliResult<TorusGrid> {
        TorusGrid::new(self.dim, self.side).map_err(CliError::from)
    }

    pub fn spec(&self) -> CliResult<DistributionSpec> {
        let need = |v: Option<f64>, name: &str| {
            v.ok_or_else(|| config_err(format!("distribution {} needs `{name}`", self.distribution)))
        };
        let spec = match self.distribution.as_str() {
            "rademacher" => DistributionSpec::Rademacher,
            "uniform" => DistributionSpec::uniform(need(self.half_width, "half_width")?)?,
            "two_point" => DistributionSpec::two_point(
                need(self.p, "p")?,
                need(self.plus, "plus")?,
                need(self.minus, "minus")?,
            )?,
            other => return Err(config_err(format!("unknown distribution `{other}`"))),
        };
        Ok(spec)
    }

    pub fn sign_convention(&self) -> CliResult<SignConvention> {
        SignConvention::parse(&self.sign).ok_or_else(|| config_err(format!("unknown sign `{}`", self.sign)))
    }

    pub fn mode(&self) -> CliResult<FitMode> {
        FitMode::parse(&self.fit_mode).ok_or_else(|| config_err(format!("unknown fit_mode `{}`", self.fit_mode)))
    }

    pub fn probe_set(&self, grid: &TorusGrid) -> CliResult<Vec<FreqVector>> {
        match &self.probes {
            None => Ok(default_probes(grid)),
            Some(list) => list
                .iter()
                .map(|k| {
                    if k.iter().any(|&c| c >= grid.side()) {
                        return Err(config_err(format!("probe {k:?} outside [0, {})", grid.side())));
                    }
                    let f = grid.freq_from(k)?;
                    if f.is_zero() {
                        return Err(Error::ZeroFrequency.into());
                    }
                    Ok(f)
                })
                .collect(),
        }
    }

    /// Check every constraint before any computation.
    pub fn validate(&self) -> CliResult<()> {
        let grid = self.grid()?;
        if grid.sites() > MAX_SITES {
            return Err(config_err(format!("{} sites exceed {MAX_SITES}", grid.sites())));
        }
        let spec = self.spec()?;
        if !self.delta.is_finite() {
            return Err(config_err("delta must be finite"));
        }
        let product = self.delta.abs() * spec.bound();
        if product >= 1.0 {
            return Err(Error::DeltaTooLarge { product }.into());
        }
        if self.samples < 2 {
            return Err(Error::EnsembleTooSmall(self.samples).into());
        }
        if self.order == 0 {
            return Err(config_err("order must be at least 1"));
        }
        if self.seed > i64::MAX as u64 {
            return Err(config_err("seed must fit in 63 bits"));
        }
        if self.tol.is_nan() || self.tol <= 0.0 {
            return Err(config_err("tol must be positive"));
        }
        if self.source >= grid.sites() {
            return Err(config_err(format!("source {} outside the lattice", self.source)));
        }
        if !matches!(self.target.as_str(), "symbol" | "kernel") {
            return Err(config_err(format!("unknown target `{}`", self.target)));
        }
        self.sign_convention()?;
        self.mode()?;
        self.probe_set(&grid)?;
        if let (Some(lo), Some(hi)) = (self.fit_lo, self.fit_hi) {
            if !(lo > 0.0 && hi > lo) {
                return Err(config_err(format!("fit range [{lo}, {hi}]")));
            }
        }
        if self.bins_per_octave == 0 {
            return Err(config_err("bins_per_octave must be positive"));
        }
        if !(self.eps > 0.0 && self.eps < self.dim as f64) {
            return Err(config_err("eps must lie in (0, d)"));
        }
        if self.trials == 0 || self.s_max == 0 {
            return Err(config_err("trials and s_max must be positive"));
        }
        if self.markov_order == 0 || self.degree == 0 {
            return Err(config_err("degree and markov_order must be positive"));
        }
        if self.exhaustive && spec.support().is_none() {
            return Err(config_err("exhaustive ensembles need a finite-support distribution"));
        }
        if matches!(self.workers, Some(0)) {
            return Err(config_err("workers must be positive"));
        }
        Ok(())
    }

    fn ensemble(&self, grid: TorusGrid, spec: &DistributionSpec) -> CliResult<Ensemble<f64>> {
        Ok(if self.exhaustive {
            Ensemble::exhaustive(grid, spec, MAX_CONFIGURATIONS)?
        } else {
            Ensemble::monte_carlo(grid, spec, self.seed, self.samples)?
        })
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Subcommand {
    Expansion,
    Annealed,
    Oracle,
    Bounds,
    Diagrams,
    Markov,
    Fit,
}

impl Subcommand {
    pub fn name(self) -> &'static str {
        match self {
            Subcommand::Expansion => "expansion",
            Subcommand::Annealed => "annealed",
            Subcommand::Oracle => "oracle",
            Subcommand::Bounds => "bounds",
            Subcommand::Diagrams => "diagrams",
            Subcommand::Markov => "markov",
            Subcommand::Fit => "fit",
        }
    }
}

fn num(x: f64) -> String {
    format!("{x:e}")
}

struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    fn new<S: Into<String>>(header: impl IntoIterator<Item = S>) -> Self {
        Self {
            header: header.into_iter().map(Into::into).collect(),
            rows: Vec::new(),
        }
    }

    fn push(&mut self, row: Vec<String>) {
        debug_assert_eq!(row.len(), self.header.len());
        self.rows.push(row);
    }

    /// Write with a trailing `fingerprint` column.
    fn write(&self, path: &Path, fingerprint: &str) -> CliResult<()> {
        let mut w = csv_writer(fs::File::create(path)?);
        let mut header = self.header.clone();
        header.push("fingerprint".into());
        w.write_record(&header)?;
        for row in &self.rows {
            let mut r = row.clone();
            r.push(fingerprint.into());
            w.write_record(&r)?;
        }
        w.flush()?;
        Ok(())
    }
}

fn axis_header(prefix: &str, d: usize) -> Vec<String> {
    (0..d).map(|j| format!("{prefix}_{j}")).collect()
}

fn coords(v: &[usize]) -> Vec<String> {
    v.iter().map(|c| c.to_string()).collect()
}

/// Outputs written by one run.
#[derive(Clone, Debug, Default)]
pub struct RunOutput {
    pub files: Vec<PathBuf>,
    /// Human-readable summary lines.
    pub notes: Vec<String>,
}

struct Ctx<'a> {
    cfg: &'a ExperimentConfig,
    out: &'a Path,
    fingerprint: String,
    output: RunOutput,
}

impl Ctx<'_> {
    fn emit(&mut self, name: &str, table: &Table) -> CliResult<()> {
        let path = self.out.join(name);
        table.write(&path, &self.fingerprint)?;
        self.output.files.push(path);
        Ok(())
    }
}

/// Validate, run one subcommand and write its tables into `out`. On a
/// numerical failure a `<subcommand>.partial` marker records the reason.
pub fn run(sub: Subcommand, cfg: &ExperimentConfig, out: &Path, input: Option<&Path>) -> CliResult<RunOutput> {
    cfg.validate()?;
    fs::create_dir_all(out)?;
    let mut ctx = Ctx {
        cfg,
        out,
        fingerprint: cfg.fingerprint(),
        output: RunOutput::default(),
    };
    let result = match sub {
        Subcommand::Expansion => run_expansion(&mut ctx),
        Subcommand::Annealed => run_annealed(&mut ctx),
        Subcommand::Oracle => run_oracle(&mut ctx),
        Subcommand::Bounds => run_bounds(&mut ctx),
        Subcommand::Diagrams => run_diagrams(&mut ctx),
        Subcommand::Markov => run_markov(&mut ctx),
        Subcommand::Fit => run_fit(&mut ctx, input),
    };
    if let Err(CliError::Numerical(reason)) = &result {
        let marker = out.join(format!("{}.partial", sub.name()));
        fs::write(
            &marker,
            format!("incomplete: {reason}\nfingerprint: {}\n", ctx.fingerprint),
        )?;
    }
    result.map(|_| ctx.output)
}

fn run_expansion(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid()?;
    let spec = cfg.spec()?;
    let ens = cfg.ensemble(grid, &spec)?;
    let d = grid.dim();
    let m = ens.len().to_string();
    let tail = |n: String| vec![n, num(cfg.delta), m.clone(), cfg.seed.to_string()];
    let signs = cfg.sign_convention()?.signs::<f64>(cfg.order);

    if cfg.target == "kernel" {
        let terms = estimate_series_kernel(cfg.order, &ens, cfg.delta, cfg.source)?;
        let series = assemble_k1(&terms, &signs, cfg.order)?;
        let mut header = axis_header("x", d);
        header.extend(["source", "row", "col", "re", "im", "stderr", "n", "delta", "M", "seed"].map(String::from));
        let mut table = Table::new(header);
        let mut push = |x: usize, i: usize, j: usize, v: crate::Complex<f64>, se: f64, n: String| {
            let mut row = coords(&grid.coords(x));
            row.extend([cfg.source.to_string(), i.to_string(), j.to_string(), num(v.re), num(v.im), num(se)]);
            row.extend(tail(n));
            table.push(row);
        };
        for t in &terms {
            for x in 0..grid.sites() {
                for i in 0..d {
                    for j in 0..d {
                        push(x, i, j, t.value(x, i, j), t.stderr(x, i, j), t.order().to_string());
                    }
                }
            }
        }
        for x in 0..grid.sites() {
            for i in 0..d {
                for j in 0..d {
                    push(x, i, j, series.value(x, i, j), series.stderr(x, i, j), "sum".into());
                }
            }
        }
        return ctx.emit("expansion_kernel.csv", &table);
    }

    let freqs = cfg.probe_set(&grid)?;
    let terms = estimate_series_symbol(cfg.order, &ens, cfg.delta, &freqs)?;
    let series = assemble_k1(&terms, &signs, cfg.order)?;
    let mut header = axis_header("k", d);
    header.extend(["row", "col", "re", "im", "stderr", "n", "delta", "M", "seed"].map(String::from));
    let mut table = Table::new(header);
    for (p, f) in freqs.iter().enumerate() {
        for i in 0..d {
            for j in 0..d {
                for t in &terms {
                    let v = t.value(p, i, j);
                    let mut row = coords(f.k());
                    row.extend([i.to_string(), j.to_string(), num(v.re), num(v.im), num(t.stderr(p, i, j))]);
                    row.extend(tail(t.order().to_string()));
                    table.push(row);
                }
                let v = series.value(p, i, j);
                let mut row = coords(f.k());
                row.extend([i.to_string(), j.to_string(), num(v.re), num(v.im), num(series.stderr(p, i, j))]);
                row.extend(tail("sum".into()));
                table.push(row);
            }
        }
    }
    ctx.emit("expansion_symbol.csv", &table)?;

    let mut k1 = Table::new(k1_header(d));
    for (p, f) in freqs.iter().enumerate() {
        let (v, se) = series.quadratic_form(p).expect("symbol target");
        k1.push(k1_row(f, v.re, se, format!("expansion_n{}", cfg.order), cfg.delta, &m, cfg.seed));
    }
    ctx.emit("expansion_k1.csv", &k1)
}

/// Shared layout of every `k1` table, the input format of `compare`.
fn k1_header(d: usize) -> Vec<String> {
    let mut h = axis_header("k", d);
    h.extend(["xi_norm", "k1", "k1_stderr", "route", "delta", "M", "seed"].map(String::from));
    h
}

fn k1_row(f: &FreqVector, k1: f64, se: f64, route: String, delta: f64, m: &str, seed: u64) -> Vec<String> {
    let mut row = coords(f.k());
    row.extend([
        num(f.xi_norm::<f64>()),
        num(k1),
        num(se),
        route,
        num(delta),
        m.to_string(),
        seed.to_string(),
    ]);
    row
}

fn run_annealed(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid()?;
    let spec = cfg.spec()?;
    let ens = cfg.ensemble(grid, &spec)?;
    let freqs = cfg.probe_set(&grid)?;
    let sym = annealed_symbol(&ens, cfg.delta, &freqs, cfg.tol)?;
    let d = grid.dim();
    let m = ens.len().to_string();

    let mut header = k1_header(d);
    header.extend(["q2", "r", "r_stderr", "a_hat", "a_stderr"].map(String::from));
    let mut table = Table::new(header);
    for p in sym.probes() {
        let mut row = k1_row(&p.freq, p.k1, p.k1_stderr, "annealed".into(), cfg.delta, &m, cfg.seed);
        row.extend([num(p.q2), num(p.r), num(p.r_stderr), num(p.a_hat), num(p.a_stderr)]);
        table.push(row);
    }
    ctx.emit("annealed_symbol.csv", &table)?;
    if !sym.is_positive() {
        return Err(Error::NotPositive("annealed resolvent diagonal".into()).into());
    }

    let reference = cfg.reference.map_or(Reference::SmallestXi, Reference::Constant);
    match k1_fluctuation(&sym, reference) {
        Ok(points) => {
            let mut header = axis_header("k", d);
            header.extend(["xi_norm", "value", "stderr", "reference", "delta", "M", "seed"].map(String::from));
            let mut fl = Table::new(header);
            let rlabel = cfg.reference.map_or("smallest_xi".to_string(), num);
            for p in points {
                let mut row = coords(p.freq.k());
                row.extend([
                    num(p.xi_norm),
                    num(p.value),
                    num(p.stderr),
                    rlabel.clone(),
                    num(cfg.delta),
                    m.clone(),
                    cfg.seed.to_string(),
                ]);
                fl.push(row);
            }
            ctx.emit("annealed_fluctuation.csv", &fl)
        }
        Err(Error::InsufficientProbes { got, .. }) => {
            ctx.output
                .notes
                .push(format!("fluctuation table skipped: only {got} distinct |xi|"));
            Ok(())
        }
        Err(e) => Err(e.into()),
    }
}

fn run_oracle(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid()?;
    let spec = cfg.spec()?;
    let exact = enumerate_exact(grid, &spec, cfg.delta)?;
    let n = grid.sites();
    let d = grid.dim();
    let meta = [d.to_string(), grid.side().to_string(), num(cfg.delta), spec.name()];

    let mut matrix = Table::new(["row", "col", "effective", "mean_resolvent", "d", "L", "delta", "spec"]);
    for r in 0..n {
        for c in 0..n {
            let mut row = vec![
                r.to_string(),
                c.to_string(),
                num(exact.effective[(r, c)]),
                num(exact.mean_resolvent[(r, c)]),
            ];
            row.extend(meta.iter().cloned());
            matrix.push(row);
        }
    }
    ctx.emit("oracle_matrix.csv", &matrix)?;

    let configs = exact.configurations.to_string();
    let mut header = k1_header(d);
    header.extend(["q2", "a_hat"].map(String::from));
    let mut symbol = Table::new(header);
    for p in &exact.probes {
        let mut row = k1_row(&p.freq, p.k1, 0.0, "oracle".into(), cfg.delta, &configs, cfg.seed);
        row.extend([num(p.q2), num(p.a_hat)]);
        symbol.push(row);
    }
    ctx.emit("oracle_symbol.csv", &symbol)?;

    let defect = exact.laplacian_defect();
    let mut report = Table::new(["key", "value"]);
    let mut kv = |k: &str, v: String| report.push(vec![k.into(), v]);
    kv("configurations", configs.clone());
    kv("laplacian_defect", num(defect));
    kv("matches_laplacian", (defect <= 1e-12).to_string());
    kv("resolvent_asymmetry", num(exact.resolvent_asymmetry()));
    kv("effective_asymmetry", num(exact.effective_asymmetry()));
    kv("sector_min_eigenvalue", num(exact.sector_min_eigenvalue()));
    kv("positive_definite", exact.is_positive_definite().to_string());
    if cfg.delta != 0.0 {
        let signs = resolve_sign_convention(&exact)?;
        kv("sign_alternating_defect", num(signs.alternating_defect));
        kv("sign_printed_defect", num(signs.printed_defect));
        kv(
            "sign_convention",
            signs.chosen().map_or("ambiguous".into(), |c| c.name().into()),
        );
    } else {
        kv("sign_convention", "undetermined".into());
    }
    if defect <= 1e-12 {
        ctx.output.notes.push("effective operator equals -Laplacian".into());
    }
    ctx.emit("oracle_report.csv", &report)
}

fn run_bounds(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid()?;
    let mut settings = ScanSettings::new(cfg.s_max, cfg.eps, cfg.trials, cfg.seed);
    settings.bins_per_octave = cfg.bins_per_octave;
    if let (Some(lo), Some(hi)) = (cfg.fit_lo, cfg.fit_hi) {
        settings.range = Some((lo, hi));
    }
    let scan = lemma1_scan(grid, &settings)?;
    let growth = scan.growth_constant().map_or(String::new(), num);
    let mut table = Table::new([
        "s", "constant", "ratio", "slope", "ci95", "n_points", "growth", "eps", "d", "L", "trials", "seed",
    ]);
    for r in &scan.rows {
        table.push(vec![
            r.s.to_string(),
            num(r.constant),
            r.ratio.map_or(String::new(), num),
            r.fit.as_ref().map_or(String::new(), |f| num(f.slope)),
            r.fit.as_ref().map_or(String::new(), |f| num(f.ci95)),
            r.fit.as_ref().map_or(0, |f| f.n_points()).to_string(),
            growth.clone(),
            num(cfg.eps),
            grid.dim().to_string(),
            grid.side().to_string(),
            cfg.trials.to_string(),
            cfg.seed.to_string(),
        ]);
    }
    ctx.emit("bounds_lemma1.csv", &table)
}

fn run_diagrams(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg;
    let grid = cfg.grid()?;
    let n = cfg.order;
    let mut table = Table::new([
        "n",
        "j0",
        "j1",
        "j2",
        "family_size",
        "disjoint_size",
        "s_size",
        "pairwise_disjoint",
        "unions_agree",
        "union_is_s",
        "head_condition",
    ]);
    for j0 in 0..n {
        let sets = diagram_enumerate(n, j0, grid)?;
        let checks = sets.checks();
        for f in &sets.families {
            table.push(vec![
                n.to_string(),
                j0.to_string(),
                f.j1.to_string(),
                f.j2.to_string(),
                f.len().to_string(),
                f.disjoint_len().to_string(),
                sets.s_len().to_string(),
                checks.pairwise_disjoint.to_string(),
                checks.unions_agree.to_string(),
                checks.union_is_s.to_string(),
                checks.head_condition.to_string(),
            ]);
        }
    }
    ctx.emit("diagrams.csv", &table)?;

    let spec = cfg.spec()?;
    if spec.support().is_none() {
        ctx.output
            .notes
            .push("irreducibility table skipped: distribution has no finite support".into());
        return Ok(());
    }
    let d = grid.dim();
    let mut irr = Table::new([
        "n", "rule", "x0", "xn", "row", "col", "full", "restricted", "series", "scale", "holds",
    ]);
    let rules: Vec<(String, ShellRule)> = (0..n)
        .map(|j| (j.to_string(), ShellRule::Fixed(j)))
        .chain(std::iter::once(("longest".to_string(), ShellRule::LongestStep)))
        .collect();
    for (label, rule) in &rules {
        for xn in 0..grid.sites() {
            let r = irreducibility_check(n, grid, &spec, cfg.delta, (cfg.source, xn), *rule)?;
            let holds = r.holds(1e-12).to_string();
            for i in 0..d {
                for j in 0..d {
                    let e = i * d + j;
                    irr.push(vec![
                        n.to_string(),
                        label.clone(),
                        cfg.source.to_string(),
                        xn.to_string(),
                        i.to_string(),
                        j.to_string(),
                        num(r.full[e]),
                        num(r.restricted[e]),
                        num(r.series_term[e]),
                        num(r.scale),
                        holds.clone(),
                    ]);
                }
            }
        }
    }
    ctx.emit("diagrams_irreducibility.csv", &irr)
}

fn run_markov(ctx: &mut Ctx) -> CliResult<()> {
    let cfg = ctx.cfg;
    let mut table = Table::new(["degree", "k", "bound", "chebyshev_ratio", "random_max_ratio", "polynomials"]);
    for degree in 1..=cfg.degree {
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, degree as u64));
        let polys: Vec<Vec<f64>> = (0..cfg.polynomials)
            .map(|_| {
                let mut c: Vec<f64> = (0..=degree).map(|_| rng.random_range(-1.0..1.0)).collect();
                if c[degree] == 0.0 {
                    c[degree] = 1.0;
                }
                c
            })
            .collect();
        for k in 1..=degree.min(cfg.markov_order) {
            let worst = polys
                .iter()
                .map(|c| markov_verify(c, k))
                .collect::<crate::Result<Vec<f64>>>()?
                .into_iter()
                .fold(0.0f64, f64::max);
            table.push(vec![
                degree.to_string(),
                k.to_string(),
                num(markov_bound(degree, k)?),
                num(markov_verify(&chebyshev_coefficients(degree), k)?),
                num(worst),
                cfg.polynomials.to_string(),
            ]);
        }
    }
    ctx.emit("markov.csv", &table)
}

/// A CSV read into header-indexed rows.
struct Csv {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Csv {
    fn read(path: &Path) -> CliResult<Self> {
        let mut r = csv::Reader::from_path(path).map_err(|e| CliError::Io(format!("{}: {e}", path.display())))?;
        let header = r.headers()?.iter().map(String::from).collect();
        let rows = r
            .records()
            .map(|rec| rec.map(|r| r.iter().map(String::from).collect()))
            .collect::<Result<Vec<Vec<String>>, _>>()?;
        Ok(Self { header, rows })
    }

    fn col(&self, name: &str) -> Option<usize> {
        self.header.iter().position(|h| h == name)
    }

    fn need(&self, name: &str) -> CliResult<usize> {
        self.col(name)
            .ok_or_else(|| config_err(format!("input has no `{name}` column")))
    }

    fn axes(&self, prefix: &str) -> Vec<usize> {
        (0..)
            .map_while(|j| self.col(&format!("{prefix}_{j}")))
            .collect()
    }
}

fn parse_f64(s: &str) -> CliResult<f64> {
    s.parse().map_err(|_| config_err(format!("not a number: `{s}`")))
}

fn parse_usize(s: &str) -> CliResult<usize> {
    s.parse().map_err(|_| config_err(format!("not an index: `{s}`")))
}

fn run_fit(ctx: &mut Ctx, input: Option<&Path>) -> CliResult<()> {
    let cfg = ctx.cfg;
    let path: PathBuf = input
        .map(Path::to_path_buf)
        .or_else(|| cfg.fit_input.as_ref().map(PathBuf::from))
        .ok_or_else(|| config_err("fit needs an input table (`--input` or `fit_input`)"))?;
    let data = Csv::read(&path)?;
    let grid = cfg.grid()?;
    let mode = cfg.mode()?;

    let points: Vec<DecayPoint> = match mode {
        FitMode::Kernel => {
            let xs = data.axes("x");
            if xs.len() != grid.dim() {
                return Err(config_err("kernel fit needs an expansion kernel table matching `dim`"));
            }
            let (n_col, re, im, se, src) =
                (data.need("n")?, data.need("re")?, data.need("im")?, data.need("stderr")?, data.need("source")?);
            let want = cfg.fit_order.to_string();
            let mut sources: BTreeMap<usize, usize> = BTreeMap::new();
            let mut blocks: BTreeMap<usize, Vec<(f64, f64)>> = BTreeMap::new();
            for row in data.rows.iter().filter(|r| r[n_col] == want) {
                let c: Vec<usize> = xs.iter().map(|&i| parse_usize(&row[i])).collect::<CliResult<_>>()?;
                if c.iter().any(|&v| v >= grid.side()) {
                    return Err(config_err("kernel table does not match `side`"));
                }
                let x = grid.index(&c);
                let v = crate::Complex::new(parse_f64(&row[re])?, parse_f64(&row[im])?);
                blocks.entry(x).or_default().push((v.norm(), parse_f64(&row[se])?));
                sources.insert(x, parse_usize(&row[src])?);
            }
            if blocks.is_empty() {
                return Err(config_err(format!("no rows with n = {want} in the input")));
            }
            blocks
                .iter()
                .map(|(&x, entries)| {
                    let source = sources[&x];
                    let norm = entries.iter().map(|(v, _)| v * v).sum::<f64>().sqrt();
                    let var: f64 = entries
                        .iter()
                        .map(|(v, s)| if norm > 0.0 { (v / norm * s).powi(2) } else { s * s })
                        .sum();
                    DecayPoint {
                        x: grid.distance(source, x) + 1.0,
                        y: norm,
                        stderr: var.sqrt(),
                    }
                })
                .collect()
        }
        FitMode::Symbol => {
            let xi = data.need("xi_norm")?;
            let (val, se, abs) = match (data.col("value"), data.col("k1")) {
                (Some(v), _) => (v, data.need("stderr")?, false),
                (None, Some(k)) => (k, data.need("k1_stderr")?, true),
                _ => return Err(config_err("symbol fit needs a `value` or `k1` column")),
            };
            data.rows
                .iter()
                .map(|r| {
                    let y = parse_f64(&r[val])?;
                    Ok(DecayPoint {
                        x: parse_f64(&r[xi])?,
                        y: if abs { y.abs() } else { y },
                        stderr: parse_f64(&r[se])?,
                    })
                })
                .collect::<CliResult<_>>()?
        }
    };

    let default_range = match mode {
        FitMode::Kernel => default_kernel_range(&grid),
        FitMode::Symbol => lowest_octaves(&points).ok_or_else(|| config_err("empty input"))?,
    };
    let range = (cfg.fit_lo.unwrap_or(default_range.0), cfg.fit_hi.unwrap_or(default_range.1));
    let mut options = FitOptions::new(mode, range);
    options.bins_per_octave = cfg.bins_per_octave;
    let st = fit_stability(&points, &options)?;
    let fit = &st.base;

    let first = |name: &str, fallback: String| {
        data.col(name)
            .and_then(|c| data.rows.first().map(|r| r[c].clone()))
            .unwrap_or(fallback)
    };
    let d = grid.dim();
    let target = match mode {
        FitMode::Kernel => format!("-{}+eps", 2 * d),
        FitMode::Symbol => format!("{d}-eps"),
    };
    let mut table = Table::new([
        "mode",
        "slope",
        "ci95",
        "intercept",
        "n_points",
        "range_lo",
        "range_hi",
        "d",
        "L",
        "delta",
        "M",
        "seed",
        "excluded",
        "stability_shift",
        "range_sensitive",
        "target",
    ]);
    table.push(vec![
        mode.name().into(),
        num(fit.slope),
        num(fit.ci95),
        num(fit.intercept),
        fit.n_points().to_string(),
        num(range.0),
        num(range.1),
        d.to_string(),
        grid.side().to_string(),
        first("delta", num(cfg.delta)),
        first("M", cfg.samples.to_string()),
        first("seed", cfg.seed.to_string()),
        fit.excluded.len().to_string(),
        st.max_shift.map_or(String::new(), num),
        st.range_sensitive().to_string(),
        target,
    ]);
    ctx.output.notes.push(format!(
        "slope {:.4} +- {:.4} over {} points{}",
        fit.slope,
        fit.ci95,
        fit.n_points(),
        if st.range_sensitive() { " (range-sensitive)" } else { "" }
    ));
    ctx.emit("fit_report.csv", &table)
}

/// One matched probe of a route comparison.
#[derive(Clone, Debug, PartialEq)]
pub struct CompareRow {
    pub k: Vec<usize>,
    pub a: f64,
    pub b: f64,
    pub stderr_a: f64,
    pub stderr_b: f64,
    pub z: f64,
}

#[derive(Clone, Debug, PartialEq)]
pub struct CompareReport {
    pub rows: Vec<CompareRow>,
    pub tolerance: f64,
}

impl CompareReport {
    pub fn max_abs_z(&self) -> f64 {
        self.rows.iter().fold(0.0f64, |m, r| m.max(r.z.abs()))
    }

    pub fn passed(&self) -> bool {
        self.max_abs_z() <= self.tolerance
    }

    /// Expected number of false alarms at this tolerance for independent
    /// Gaussian z-scores.
    pub fn expected_false_alarms(&self) -> f64 {
        let tail = statrs::function::erf::erfc(self.tolerance / std::f64::consts::SQRT_2);
        tail * self.rows.len() as f64
    }

    pub fn summary(&self) -> String {
        format!(
            "{} {} probes, max |z| = {:.3}, tolerance {}; {:.3} false alarms expected by multiplicity",
            if self.passed() { "PASS" } else { "FAIL" },
            self.rows.len(),
            self.max_abs_z(),
            self.tolerance,
            self.expected_false_alarms()
        )
    }
}

fn read_k1(path: &Path) -> CliResult<Vec<(Vec<usize>, f64, f64)>> {
    let data = Csv::read(path)?;
    let ks = data.axes("k");
    let (v, s) = (data.need("k1")?, data.need("k1_stderr")?);
    data.rows
        .iter()
        .map(|r| {
            let k = ks.iter().map(|&i| parse_usize(&r[i])).collect::<CliResult<Vec<_>>>()?;
            Ok((k, parse_f64(&r[v])?, parse_f64(&r[s])?))
        })
        .collect()
}

/// Per-probe z-scores between two `k1` tables.
pub fn compare(a: &Path, b: &Path, tolerance: f64) -> CliResult<CompareReport> {
    if tolerance.is_nan() || tolerance <= 0.0 {
        return Err(config_err("tolerance must be positive"));
    }
    let ra = read_k1(a)?;
    let rb: BTreeMap<Vec<usize>, (f64, f64)> = read_k1(b)?.into_iter().map(|(k, v, s)| (k, (v, s))).collect();
    let rows: Vec<CompareRow> = ra
        .into_iter()
        .filter_map(|(k, va, sa)| {
            rb.get(&k).map(|&(vb, sb)| {
                let se = sa.hypot(sb);
                let diff = va - vb;
                let z = if diff == 0.0 {
                    0.0
                } else if se == 0.0 {
                    f64::INFINITY.copysign(diff)
                } else {
                    diff / se
                };
                CompareRow {
                    k,
                    a: va,
                    b: vb,
                    stderr_a: sa,
                    stderr_b: sb,
                    z,
                }
            })
        })
        .collect();
    if rows.is_empty() {
        return Err(CliError::NoOverlap);
    }
    Ok(CompareReport { rows, tolerance })
}

/// Write `compare.csv`; the fingerprint column hashes both inputs and the tolerance.
pub fn write_compare(report: &CompareReport, a: &Path, b: &Path, out: &Path) -> CliResult<PathBuf> {
    fs::create_dir_all(out)?;
    let mut h = Sha256::new();
    h.update(fs::read(a)?);
    h.update(fs::read(b)?);
    h.update(num(report.tolerance).as_bytes());
    let fingerprint = hex::encode(h.finalize());
    let d = report.rows.first().map_or(0, |r| r.k.len());
    let mut header = axis_header("k", d);
    header.extend(["k1_a", "k1_b", "stderr_a", "stderr_b", "z", "pass"].map(String::from));
    let mut table = Table::new(header);
    for r in &report.rows {
        let mut row = coords(&r.k);
        row.extend([
            num(r.a),
            num(r.b),
            num(r.stderr_a),
            num(r.stderr_b),
            num(r.z),
            (r.z.abs() <= report.tolerance).to_string(),
        ]);
        table.push(row);
    }
    let path = out.join("compare.csv");
    table.write(&path, &fingerprint)?;
    Ok(path)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn canonical_form_round_trips_and_is_sorted() {
        let mut cfg = ExperimentConfig {
            delta: 0.1 + 0.2,
            probes: Some(vec![vec![1], vec![3]]),
            distribution: "two_point".into(),
            p: Some(0.25),
            plus: Some(1.5),
            minus: Some(-0.5),
            ..Default::default()
        };
        let text = cfg.canonical();
        assert_eq!(ExperimentConfig::from_toml(&text).unwrap(), cfg);
        let keys: Vec<&str> = text
            .lines()
            .filter_map(|l| l.split_once(" = ").map(|(k, _)| k))
            .collect();
        let mut sorted = keys.clone();
        sorted.sort();
        assert_eq!(keys, sorted);

        let fp = cfg.fingerprint();
        assert_eq!(fp.len(), 64);
        cfg.workers = Some(3);
        cfg.out = Some("elsewhere".into());
        assert_eq!(cfg.fingerprint(), fp);
        cfg.seed = 1;
        assert_ne!(cfg.fingerprint(), fp);
    }

    #[test]
    fn validation_rejects_bad_configs() {
        let bad = |f: fn(&mut ExperimentConfig)| {
            let mut c = ExperimentConfig::default();
            f(&mut c);
            c.validate().unwrap_err()
        };
        assert!(matches!(bad(|c| c.delta = 1.0), CliError::Config(_)));
        assert!(matches!(bad(|c| c.samples = 1), CliError::Config(_)));
        assert!(matches!(bad(|c| c.distribution = "gauss".into()), CliError::Config(_)));
        assert!(matches!(bad(|c| c.distribution = "uniform".into()), CliError::Config(_)));
        assert!(matches!(bad(|c| c.probes = Some(vec![vec![0]])), CliError::Config(_)));
        assert!(matches!(bad(|c| c.sign = "other".into()), CliError::Config(_)));
        assert!(ExperimentConfig::from_toml("bogus = 1").is_err());
        assert!(ExperimentConfig::default().validate().is_ok());
    }

    #[test]
    fn exit_codes() {
        assert_eq!(CliError::Config("x".into()).exit_code(), 2);
        assert_eq!(CliError::NoOverlap.exit_code(), 2);
        let e: CliError = Error::NoConvergence { iterations: 3, residual: 1.0 }.into();
        assert_eq!(e.exit_code(), 3);
    }
}
