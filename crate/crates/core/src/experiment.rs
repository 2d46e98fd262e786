//! Experiment orchestration: caches, CSV outputs and the run manifest.
//!
//! Outputs of a run go to `<out>/<name>/`, cache entries to `<out>/cache/`.
//! Every CSV is a pure function of the configuration; wall times only
//! appear in the manifest.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use crate::analysis::{
    deterministic_equilibria, exploitability, fraction_within, histogram_in, median, potential_scan, tail_dispersion,
    validation_error, Histogram,
};
use crate::config::{ExperimentConfig, ExperimentKind};
use crate::error::{Error, Result};
use crate::field::EnvironmentField;
use crate::fingerprint::Fingerprinter;
use crate::grid::TimeGrid;
use crate::noise::{sample_noise_bank, NoiseBank, NOISE_VERSION};
use crate::play::{run, vanishing_viscosity, IterationRecord, PlayConfig, PlayContext, PlayState, Scheme, Variant};
use crate::reference::{reference_fingerprint, solve_reference, FbsdeProblem, ReferenceSolution};
use crate::riccati::{discrete_riccati, RiccatiTable};
use crate::table::{Cell, Table};

/// Environment variable naming the default output directory.
pub const OUT_ENV: &str = "TFP_OUT";
pub const DEFAULT_OUT: &str = "tfp-out";

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub use_cache: bool,
}

impl RunOptions {
    /// `--out`, then `$TFP_OUT`, then the config's `output`, then `./tfp-out`.
    pub fn resolve(cli_out: Option<PathBuf>, config: &ExperimentConfig, use_cache: bool) -> Self {
        let out_dir = cli_out
            .or_else(|| std::env::var_os(OUT_ENV).filter(|v| !v.is_empty()).map(PathBuf::from))
            .or_else(|| config.output.clone())
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUT));
        Self { out_dir, use_cache }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verb {
    /// Dispatch on the configured kind.
    Run,
    Reference,
    Equilibria,
    Validate {
        seed2: u64,
    },
    Anneal,
}

#[derive(Debug, Clone)]
pub struct RunReport {
    pub dir: PathBuf,
    /// Written files, relative to `dir`, in write order.
    pub files: Vec<String>,
}

/// Process exit status for an outcome.
pub fn exit_code(result: &Result<RunReport>) -> i32 {
    match result {
        Ok(_) => 0,
        Err(e) => match e.root() {
            Error::Config(_) => 2,
            Error::CorruptCache(_) => 4,
            Error::Io(_) => 1,
            _ => 3,
        },
    }
}

const CACHE_MAGIC: &[u8; 8] = b"TFPCACHE";
const ENVELOPE: usize = 32;

/// `magic | key | payload length | payload hash | payload`, all little endian.
pub fn seal(key: u64, payload: &[u8]) -> Vec<u8> {
    let mut out = Vec::with_capacity(ENVELOPE + payload.len());
    out.extend_from_slice(CACHE_MAGIC);
    out.extend_from_slice(&key.to_le_bytes());
    out.extend_from_slice(&(payload.len() as u64).to_le_bytes());
    out.extend_from_slice(&payload_hash(payload).to_le_bytes());
    out.extend_from_slice(payload);
    out
}

/// Checks the envelope written by [`seal`] and returns the payload.
pub fn unseal(key: u64, bytes: &[u8]) -> Result<&[u8]> {
    let corrupt = |m: &str| Error::CorruptCache(m.to_string());
    if bytes.len() < ENVELOPE || &bytes[..8] != CACHE_MAGIC {
        return Err(corrupt("missing cache envelope"));
    }
    let word = |i: usize| u64::from_le_bytes(bytes[i..i + 8].try_into().unwrap());
    if word(8) != key {
        return Err(corrupt("cache key mismatch"));
    }
    let payload = &bytes[ENVELOPE..];
    if word(16) != payload.len() as u64 {
        return Err(corrupt("truncated cache entry"));
    }
    if word(24) != payload_hash(payload) {
        return Err(corrupt("cache payload hash mismatch"));
    }
    Ok(payload)
}

fn payload_hash(payload: &[u8]) -> u64 {
    let mut fp = Fingerprinter::new("cache-payload");
    fp.bytes(payload);
    fp.finish()
}

/// Writes `bytes` to a temporary file in the target directory and renames it into place.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let dir = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.as_file().sync_all()?;
    tmp.persist(path).map_err(|e| Error::Io(e.error))?;
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CacheStatus {
    Hit,
    Miss,
    Disabled,
}

impl CacheStatus {
    fn as_str(self) -> &'static str {
        match self {
            CacheStatus::Hit => "hit",
            CacheStatus::Miss => "miss",
            CacheStatus::Disabled => "disabled",
        }
    }
}

/// Content-addressed store of sealed entries.
pub struct Cache {
    dir: PathBuf,
    enabled: bool,
}

impl Cache {
    pub fn new(dir: PathBuf, enabled: bool) -> Self {
        Self { dir, enabled }
    }

    pub fn path(&self, kind: &str, key: u64) -> PathBuf {
        self.dir.join(format!("{kind}-{key:016x}.bin"))
    }

    /// The payload of a valid entry. Corrupt entries are logged and removed.
    pub fn load(&self, kind: &str, key: u64) -> Option<Vec<u8>> {
        if !self.enabled {
            return None;
        }
        let path = self.path(kind, key);
        let bytes = fs::read(&path).ok()?;
        match unseal(key, &bytes) {
            Ok(payload) => Some(payload.to_vec()),
            Err(e) => {
                log::warn!("discarding {}: {e}", path.display());
                let _ = fs::remove_file(&path);
                None
            }
        }
    }

    /// Stores and reads back; an entry that does not verify is an error.
    pub fn store(&self, kind: &str, key: u64, payload: &[u8]) -> Result<()> {
        if !self.enabled {
            return Ok(());
        }
        let path = self.path(kind, key);
        write_atomic(&path, &seal(key, payload))?;
        let back = fs::read(&path)?;
        unseal(key, &back)
            .map(|_| ())
            .map_err(|e| Error::CorruptCache(format!("{} does not verify after writing: {e}", path.display())))
    }

    fn status(&self, hit: bool) -> CacheStatus {
        match (self.enabled, hit) {
            (false, _) => CacheStatus::Disabled,
            (true, true) => CacheStatus::Hit,
            (true, false) => CacheStatus::Miss,
        }
    }
}

/// Cache key of the bank a configuration samples.
pub fn bank_key(seed: u64, particles: usize, realizations: usize, steps: usize, dim: usize) -> u64 {
    let mut fp = Fingerprinter::new("noise-bank");
    fp.u64(NOISE_VERSION).u64(seed);
    for v in [particles, realizations, steps, dim] {
        fp.u64(v as u64);
    }
    fp.finish()
}

struct Session<'a> {
    config: &'a ExperimentConfig,
    fingerprint: u64,
    dir: PathBuf,
    cache: Cache,
    files: Vec<String>,
    manifest: Vec<(String, String)>,
    started: Instant,
}

impl<'a> Session<'a> {
    fn new(config: &'a ExperimentConfig, opts: &RunOptions, verb: &str) -> Result<Self> {
        let dir = opts.out_dir.join(&config.name);
        fs::create_dir_all(&dir)?;
        let mut s = Self {
            config,
            fingerprint: config.fingerprint(),
            dir,
            cache: Cache::new(opts.out_dir.join("cache"), opts.use_cache),
            files: Vec::new(),
            manifest: Vec::new(),
            started: Instant::now(),
        };
        s.record("verb", verb);
        s.record("name", &config.name);
        s.record("config_fingerprint", format!("{:016x}", s.fingerprint));
        s.record("seed", config.seed);
        s.record("version", env!("CARGO_PKG_VERSION"));
        s.record("threads", rayon::current_num_threads());
        Ok(s)
    }

    fn record(&mut self, key: &str, value: impl ToString) {
        self.manifest.push((key.to_string(), value.to_string()));
    }

    fn timed<T>(&mut self, phase: &str, f: impl FnOnce(&mut Self) -> Result<T>) -> Result<T> {
        let t = Instant::now();
        let out = f(self);
        self.record(&format!("wall.{phase}"), format!("{:.3}", t.elapsed().as_secs_f64()));
        out
    }

    fn write_csv(&mut self, file: &str, table: &Table) -> Result<()> {
        write_atomic(&self.dir.join(file), &table.to_bytes(self.fingerprint))?;
        self.files.push(file.to_string());
        Ok(())
    }

    fn bank(&mut self, pc: &PlayConfig) -> Result<NoiseBank> {
        let d = pc.model.dim();
        let key = bank_key(pc.seed, pc.particles, pc.realizations, pc.steps, d);
        let cached = self.cache.load("bank", key).and_then(|bytes| match NoiseBank::decode(&bytes) {
            Ok(b) if b.seed() == pc.seed && b.shape() == pc.sample_bank_shape() => Some(b),
            Ok(_) => {
                log::warn!("stale noise bank entry {key:016x}, recomputing");
                None
            }
            Err(e) => {
                log::warn!("unreadable noise bank entry {key:016x}: {e}, recomputing");
                None
            }
        });
        let hit = cached.is_some();
        let bank = match cached {
            Some(b) => b,
            None => {
                let b = sample_noise_bank(pc.seed, pc.particles, pc.realizations, pc.steps, d)?;
                self.cache.store("bank", key, &b.encode())?;
                b
            }
        };
        let status = self.cache.status(hit);
        self.record("cache.bank", status.as_str());
        self.record("bank_fingerprint", format!("{:016x}", bank.fingerprint()));
        Ok(bank)
    }

    fn reference(
        &mut self,
        pc: &PlayConfig,
        grid: &TimeGrid,
        bank: &NoiseBank,
        eta: &RiccatiTable,
    ) -> Result<ReferenceSolution> {
        let rc = self.config.reference_config();
        let problem = FbsdeProblem { model: &pc.model, grid, bank, eta };
        let key = reference_fingerprint(&problem, &rc);
        let cached = self.cache.load("reference", key).and_then(|bytes| match ReferenceSolution::decode(&bytes) {
            Ok(r) if r.fingerprint == key && r.bank_fingerprint == bank.fingerprint() => Some(r),
            Ok(_) => {
                log::warn!("stale reference entry {key:016x}, recomputing");
                None
            }
            Err(e) => {
                log::warn!("unreadable reference entry {key:016x}: {e}, recomputing");
                None
            }
        });
        let hit = cached.is_some();
        let reference = match cached {
            Some(r) => r,
            None => {
                let r = solve_reference(&problem, &rc).map_err(|e| e.at_stage("reference solver", 0))?;
                self.cache.store("reference", key, &r.encode())?;
                r
            }
        };
        let status = self.cache.status(hit);
        self.record("cache.reference", status.as_str());
        self.record("reference_fingerprint", format!("{key:016x}"));
        Ok(reference)
    }

    fn finish(mut self) -> Result<RunReport> {
        write_atomic(&self.dir.join("config.txt"), self.config.render().as_bytes())?;
        self.files.push("config.txt".into());
        let total = format!("{:.3}", self.started.elapsed().as_secs_f64());
        self.record("wall.total", total);
        self.record("files", self.files.join(", "));
        let mut text = String::new();
        for (k, v) in &self.manifest {
            text.push_str(&format!("{k} = {v}\n"));
        }
        write_atomic(&self.dir.join("manifest.txt"), text.as_bytes())?;
        let mut files = self.files;
        files.push("manifest.txt".into());
        Ok(RunReport { dir: self.dir, files })
    }
}

impl PlayConfig {
    fn sample_bank_shape(&self) -> crate::noise::BankShape {
        crate::noise::BankShape::new(self.particles, self.realizations, self.steps, self.model.dim())
            .expect("validated configuration has a valid bank shape")
    }
}

/// The idiosyncratic-only counterpart of a common-noise run: the same noise
/// budget carried by `MN` independent particles and no tilt.
pub fn idiosyncratic_counterpart(c: &PlayConfig) -> PlayConfig {
    let mut idio = c.clone();
    idio.scheme = Scheme::IdioOnly;
    idio.particles = c.particles * c.realizations;
    idio.realizations = 1;
    idio.degree = 0;
    idio.variant = Variant::Standard;
    idio.model.sigma = (c.model.sigma.powi(2) + c.model.epsilon.powi(2)).sqrt();
    idio.model.epsilon = 0.0;
    idio
}

pub fn history_table(history: &[IterationRecord]) -> Table {
    let mut t = Table::new(&[
        "iteration",
        "raw_cost",
        "renormalized_cost",
        "centered_cost",
        "cost_stderr",
        "l2_error",
        "intercept_change",
        "effective_samples",
    ]);
    for r in history {
        t.push(vec![
            r.iteration.into(),
            r.raw_cost.into(),
            r.renormalized_cost.into(),
            r.centered_cost.into(),
            r.cost_stderr.into(),
            r.l2_error.into(),
            r.intercept_change.into(),
            r.effective_samples.into(),
        ]);
    }
    t
}

pub fn histogram_table(h: &Histogram, coordinate: usize, table: Option<Table>) -> Table {
    let mut t = table.unwrap_or_else(|| Table::new(&["coordinate", "bin", "lower", "upper", "center", "count"]));
    for (b, c) in h.counts.iter().enumerate() {
        t.push(vec![
            coordinate.into(),
            b.into(),
            h.edges[b].into(),
            h.edges[b + 1].into(),
            h.center(b).into(),
            (*c).into(),
        ]);
    }
    t
}

fn terminal_coordinate(env: &EnvironmentField, a: usize) -> Vec<f64> {
    let p = env.nodes() - 1;
    (0..env.realizations()).map(|j| env.at(j, p)[a]).collect()
}

fn terminal_histograms(config: &ExperimentConfig, env: &EnvironmentField) -> Result<Table> {
    let (lo, hi) = config.analysis.bracket;
    let mut table = None;
    for a in 0..env.dim() {
        let h = histogram_in(&terminal_coordinate(env, a), config.analysis.bins, lo, hi)?;
        table = Some(histogram_table(&h, a, table));
    }
    Ok(table.expect("dimension is at least 1"))
}

fn summary_table(rows: &[(&str, Cell)]) -> Table {
    let mut t = Table::new(&["metric", "value"]);
    for (k, v) in rows {
        t.push(vec![(*k).into(), v.clone()]);
    }
    t
}

fn prepare_play(pc: &PlayConfig) -> Result<(TimeGrid, RiccatiTable)> {
    pc.validate()?;
    let grid = pc.grid()?;
    let eta = discrete_riccati(&pc.model.q, &pc.model.r, &grid)?;
    Ok((grid, eta))
}

fn needs_reference(pc: &PlayConfig) -> bool {
    pc.scheme != Scheme::IdioOnly && pc.model.epsilon > 0.0
}

struct PlayRun {
    state: PlayState,
    reference: Option<ReferenceSolution>,
}

fn play_phase(s: &mut Session, pc: &PlayConfig, label: &str) -> Result<PlayRun> {
    let (grid, eta) = prepare_play(pc)?;
    let bank = s.timed(&format!("{label}.bank"), |s| s.bank(pc))?;
    let reference = if needs_reference(pc) {
        Some(s.timed(&format!("{label}.reference"), |s| s.reference(pc, &grid, &bank, &eta))?)
    } else {
        None
    };
    let ctx = PlayContext {
        config: pc,
        grid: &grid,
        bank: &bank,
        eta: &eta,
        reference: reference.as_ref(),
        keep_means: false,
    };
    let state = s.timed(&format!("{label}.play"), |_| run(&ctx))?;
    let expl = s.timed(&format!("{label}.exploitability"), |_| exploitability(&state, &ctx))?;
    s.write_csv(&format!("{label}_history.csv"), &history_table(&state.history))?;
    s.write_csv(&format!("{label}_histogram.csv"), &terminal_histograms(s.config, &state.env_bar)?)?;
    let last = state.history.last();
    let rows = [
        ("iterations", Cell::from(state.iteration)),
        ("final_renormalized_cost", last.map(|r| r.renormalized_cost).into()),
        ("final_centered_cost", last.map(|r| r.centered_cost).into()),
        ("final_l2_error", last.and_then(|r| r.l2_error).into()),
        ("reference_cost", reference.as_ref().map(|r| r.equilibrium_cost).into()),
        ("reference_cost_stderr", reference.as_ref().map(|r| r.cost_stderr).into()),
        ("exploitability", expl.value.into()),
        ("exploitability_stderr", expl.stderr.into()),
    ];
    s.write_csv(&format!("{label}_summary.csv"), &summary_table(&rows))?;
    Ok(PlayRun { state, reference })
}

pub fn execute(verb: Verb, config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    config.validate()?;
    let verb = match (verb, config.kind) {
        (Verb::Run, ExperimentKind::Anneal) => Verb::Anneal,
        (v, _) => v,
    };
    match verb {
        Verb::Run if config.kind == ExperimentKind::CostCompare => cost_compare(config, opts),
        Verb::Run => {
            let mut s = Session::new(config, opts, "run")?;
            play_phase(&mut s, &config.play_config()?, "play")?;
            s.finish()
        }
        Verb::Reference => reference_only(config, opts),
        Verb::Equilibria => equilibria(config, opts),
        Verb::Validate { seed2 } => validate(config, seed2, opts),
        Verb::Anneal => anneal(config, opts),
    }
}

fn reference_only(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let mut s = Session::new(config, opts, "reference")?;
    let pc = config.play_config()?;
    if !needs_reference(&pc) {
        return Err(Error::Config("the reference solver needs common noise (epsilon > 0)".into()));
    }
    let (grid, eta) = prepare_play(&pc)?;
    let bank = s.timed("bank", |s| s.bank(&pc))?;
    let r = s.timed("reference", |s| s.reference(&pc, &grid, &bank, &eta))?;
    let d = r.env.dim();
    let mut cols = vec!["k".to_string(), "t".to_string()];
    for a in 0..d {
        for q in ["m_mean", "m_sd", "h_mean", "h_sd"] {
            cols.push(format!("{q}_{a}"));
        }
    }
    let col_refs: Vec<&str> = cols.iter().map(String::as_str).collect();
    let mut t = Table::new(&col_refs);
    let n = r.env.realizations();
    for k in 0..=grid.steps() {
        let mut row: Vec<Cell> = vec![k.into(), grid.node(k).into()];
        for a in 0..d {
            let m: Vec<f64> = (0..n).map(|j| r.env.at(j, k)[a]).collect();
            row.extend(mean_sd(&m).map(Cell::from));
            if k < grid.steps() {
                let h: Vec<f64> = (0..n).map(|j| r.intercept.at(j, k)[a]).collect();
                row.extend(mean_sd(&h).map(Cell::from));
            } else {
                row.extend([Cell::Empty, Cell::Empty]);
            }
        }
        t.push(row);
    }
    s.write_csv("reference_nodes.csv", &t)?;
    let rows = [
        ("equilibrium_cost", Cell::from(r.equilibrium_cost)),
        ("cost_stderr", r.cost_stderr.into()),
        ("picard_iterations", r.iterations.into()),
        ("last_change", r.last_change.into()),
    ];
    s.write_csv("reference_summary.csv", &summary_table(&rows))?;
    s.finish()
}

fn mean_sd(v: &[f64]) -> [f64; 2] {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    [mean, var.sqrt()]
}

fn equilibria(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let mut s = Session::new(config, opts, "equilibria")?;
    let g = config.coupling()?;
    if g.dim() != 1 {
        return Err(Error::Config("equilibria need a scalar coupling (model.d = 1)".into()));
    }
    let grid = TimeGrid::new(config.model.horizon, config.numerics.steps)?;
    let set = deterministic_equilibria(&g, config.analysis.bracket, &grid).map_err(|e| match e {
        Error::InvalidArgument(m) => Error::Config(m),
        other => other,
    })?;
    let best = set.global_minimizer().map(|r| r.terminal_mean);
    let mut roots = Table::new(&["root", "terminal_mean", "residual", "potential", "ode_residual", "global_minimizer"]);
    let mut paths = Table::new(&["root", "k", "t", "mean", "intercept"]);
    for (i, r) in set.roots.iter().enumerate() {
        roots.push(vec![
            i.into(),
            r.terminal_mean.into(),
            r.residual.into(),
            r.potential.into(),
            r.ode_residual(&g, &grid).into(),
            (if best == Some(r.terminal_mean) { "yes" } else { "no" }).into(),
        ]);
        for (k, t) in grid.nodes().enumerate() {
            paths.push(vec![i.into(), k.into(), t.into(), r.mean_path[k].into(), r.intercept_path[k].into()]);
        }
    }
    s.write_csv("equilibria.csv", &roots)?;
    s.write_csv("equilibrium_paths.csv", &paths)?;
    if g.primitive(0.0).is_some() {
        let (lo, hi) = config.analysis.bracket;
        let curve = potential_scan(&g, lo, hi, config.analysis.samples)?;
        let mut t = Table::new(&["beta", "potential", "slope"]);
        for i in 0..curve.beta.len() {
            t.push(vec![curve.beta[i].into(), curve.value[i].into(), curve.slope[i].into()]);
        }
        s.write_csv("potential.csv", &t)?;
        let mut m = Table::new(&["kind", "beta"]);
        for b in &curve.minimizers {
            m.push(vec!["minimizer".into(), (*b).into()]);
        }
        for b in &curve.stationary {
            m.push(vec!["stationary".into(), (*b).into()]);
        }
        if let Some(b) = curve.global_minimizer(&g) {
            m.push(vec!["global_minimizer".into(), b.into()]);
        }
        s.write_csv("potential_points.csv", &m)?;
    }
    s.record("roots", set.roots.len());
    s.finish()
}

fn validate(config: &ExperimentConfig, seed2: u64, opts: &RunOptions) -> Result<RunReport> {
    let mut s = Session::new(config, opts, "validate")?;
    let pc = config.play_config()?;
    if !needs_reference(&pc) {
        return Err(Error::Config("validation needs common noise (epsilon > 0)".into()));
    }
    if seed2 == pc.seed {
        return Err(Error::Config("--seed2 must differ from the training seed".into()));
    }
    let trained = play_phase(&mut s, &pc, "play")?;
    let policies: Vec<_> = trained.state.history.iter().map(|r| r.policy.clone()).collect();
    let report = s.timed("validation", |s| {
        validation_error(&policies, &pc, &s.config.reference_config(), seed2).map_err(|e| e.at_stage("validation", 0))
    })?;
    s.record("validation_seed", seed2);
    s.record("validation_bank_fingerprint", format!("{:016x}", report.bank_fingerprint));
    let mut t = Table::new(&["iteration", "training_error", "validation_error"]);
    for (r, v) in trained.state.history.iter().zip(&report.per_iteration) {
        t.push(vec![r.iteration.into(), r.l2_error.into(), (*v).into()]);
    }
    s.write_csv("validation.csv", &t)?;
    s.finish()
}

fn cost_compare(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let mut s = Session::new(config, opts, "costcompare")?;
    let common = config.play_config()?;
    if !needs_reference(&common) {
        return Err(Error::Config("costcompare needs a common-noise configuration".into()));
    }
    let idio = idiosyncratic_counterpart(&common);
    let a = play_phase(&mut s, &common, "common")?;
    let b = play_phase(&mut s, &idio, "idio")?;
    let mut t = Table::new(&[
        "iteration",
        "common_renormalized",
        "common_centered",
        "common_stderr",
        "idio_renormalized",
        "idio_stderr",
    ]);
    for (x, y) in a.state.history.iter().zip(&b.state.history) {
        t.push(vec![
            x.iteration.into(),
            x.renormalized_cost.into(),
            x.centered_cost.into(),
            x.cost_stderr.into(),
            y.renormalized_cost.into(),
            y.cost_stderr.into(),
        ]);
    }
    s.write_csv("costs.csv", &t)?;
    let series = |st: &PlayState| st.history.iter().map(|r| r.renormalized_cost).collect::<Vec<_>>();
    let k = 5.min(common.iterations);
    let (ma, sa) = tail_dispersion(&series(&a.state), k).unwrap_or((f64::NAN, f64::NAN));
    let (mb, sb) = tail_dispersion(&series(&b.state), k).unwrap_or((f64::NAN, f64::NAN));
    let rows = [
        ("tail_length", Cell::from(k)),
        ("common_tail_mean", ma.into()),
        ("common_tail_sd", sa.into()),
        ("idio_tail_mean", mb.into()),
        ("idio_tail_sd", sb.into()),
        ("dispersion_ratio", (sb / sa).into()),
        ("reference_cost", a.reference.as_ref().map(|r| r.equilibrium_cost).into()),
    ];
    s.write_csv("costcompare_summary.csv", &summary_table(&rows))?;
    s.finish()
}

fn anneal(config: &ExperimentConfig, opts: &RunOptions) -> Result<RunReport> {
    let mut s = Session::new(config, opts, "anneal")?;
    let pc = config.play_config()?;
    let schedule = &config.annealing.schedule;
    let mut template = pc.clone();
    template.model.epsilon = schedule[0];
    template.validate()?;
    let bank = s.timed("bank", |s| s.bank(&template))?;
    let outcome =
        s.timed("anneal", |_| vanishing_viscosity(schedule, &template, &bank, config.annealing.warm_start_policy))?;
    let g = config.coupling()?;
    let roots = if g.dim() == 1 {
        let grid = TimeGrid::new(config.model.horizon, config.numerics.steps)?;
        deterministic_equilibria(&g, config.analysis.bracket, &grid).ok()
    } else {
        None
    };
    let target = roots.as_ref().and_then(|r| r.global_minimizer()).map(|r| r.terminal_mean);
    let mut stages = Table::new(&[
        "stage",
        "epsilon",
        "median",
        "modal_center",
        "near_zero",
        "near_global_minimizer",
        "final_renormalized_cost",
        "effective_samples",
    ]);
    let (lo, hi) = config.analysis.bracket;
    let d = config.model.dim;
    for (q, st) in outcome.stages.iter().enumerate() {
        let first: Vec<f64> = st.terminal_means.iter().step_by(d).copied().collect();
        let h = histogram_in(&first, config.analysis.bins, lo, hi)?;
        let mut table = Some(histogram_table(&h, 0, None));
        for a in 1..d {
            let coord: Vec<f64> = st.terminal_means.iter().skip(a).step_by(d).copied().collect();
            table = Some(histogram_table(&histogram_in(&coord, config.analysis.bins, lo, hi)?, a, table));
        }
        s.write_csv(&format!("histogram_stage_{:02}.csv", q + 1), &table.unwrap())?;
        let last = st.state.history.last();
        stages.push(vec![
            (q + 1).into(),
            st.epsilon.into(),
            median(&first).into(),
            h.modal_center().into(),
            fraction_within(&first, 0.0, 0.1).into(),
            target.map(|x| fraction_within(&first, x, 0.1)).into(),
            last.map(|r| r.renormalized_cost).into(),
            last.map(|r| r.effective_samples).into(),
        ]);
    }
    s.write_csv("stages.csv", &stages)?;
    s.record("stages_completed", outcome.stages.len());
    match outcome.failure {
        Some(e) => {
            s.record("failure", e.to_string().replace('\n', " "));
            s.finish()?;
            Err(e)
        }
        None => s.finish(),
    }
}
