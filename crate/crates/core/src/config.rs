//! Experiment configuration: a flat `section.key = value` text format.
//!
//! `#` starts a comment, blank lines are ignored, lists are comma
//! separated. Unknown and duplicate keys are errors. Every problem found is
//! reported, parse errors with their line number.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;

use nalgebra::DMatrix;

use crate::error::{Error, Result};
use crate::fingerprint::Fingerprinter;
use crate::hermite::ScaleMode;
use crate::model::{Coupling, LqModel};
use crate::play::{Backend, PlayConfig, Scheme, Variant};
use crate::policy::AdamConfig;
use crate::reference::ReferenceConfig;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ExperimentKind {
    /// One fictitious-play run, scored against the reference when there is common noise.
    Play,
    /// The common-noise run and its idiosyncratic counterpart, back to back.
    CostCompare,
    /// Vanishing-viscosity schedule.
    Anneal,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingKind {
    CosKappa,
    CosShifted,
    Table,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelBlock {
    pub dim: usize,
    pub coupling: CouplingKind,
    pub kappa: f64,
    /// Shift `x₀` of the shifted coupling.
    pub shift: Option<f64>,
    pub table_x: Vec<f64>,
    pub table_y: Vec<f64>,
    pub sigma: f64,
    pub epsilon: f64,
    pub horizon: f64,
    pub x0_state: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NumericsBlock {
    pub scheme: Scheme,
    pub steps: usize,
    pub particles: usize,
    pub realizations: usize,
    pub degree: usize,
    pub iterations: usize,
    pub picard_iters: usize,
    /// Reference solver clamp.
    pub clamp: f64,
    pub intercept_clamp: Option<f64>,
    pub reference_degree: usize,
    /// Riccati gain known (frozen at `-η`) or learned.
    pub riccati_known: bool,
    pub scale: ScaleMode,
    pub variant: Variant,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OptimizerBlock {
    pub backend: Backend,
    pub lr: f64,
    pub epochs: usize,
    pub beta1: f64,
    pub beta2: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnnealBlock {
    pub schedule: Vec<f64>,
    pub warm_start_policy: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AnalysisBlock {
    pub bracket: (f64, f64),
    pub samples: usize,
    pub bins: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub name: String,
    pub kind: ExperimentKind,
    pub seed: u64,
    pub output: Option<PathBuf>,
    pub model: ModelBlock,
    pub numerics: NumericsBlock,
    pub optimizer: OptimizerBlock,
    pub annealing: AnnealBlock,
    pub analysis: AnalysisBlock,
}

/// `(key, default, meaning)` for every accepted key.
pub const SCHEMA: &[(&str, &str, &str)] = &[
    ("name", "required", "experiment name, also the output subdirectory"),
    ("kind", "play", "play | costcompare | anneal"),
    ("seed", "1", "noise bank seed"),
    ("output", "unset", "output directory (CLI --out and TFP_OUT take precedence)"),
    ("model.d", "required", "state dimension"),
    ("model.coupling", "cos_kappa", "cos_kappa | cos_shifted | table"),
    ("model.kappa", "required for cos_*", "frequency of the cos coupling"),
    ("model.x0", "required for cos_shifted", "shift of cos(kappa (x - x0)) - 2 x0"),
    ("model.table_x", "required for table", "abscissae of the piecewise-linear coupling"),
    ("model.table_y", "required for table", "ordinates of the piecewise-linear coupling"),
    ("model.sigma", "0", "idiosyncratic noise intensity"),
    ("model.epsilon", "1", "common noise intensity"),
    ("model.horizon", "1", "time horizon T"),
    ("model.x0_state", "0", "initial state, one value or d values"),
    ("numerics.scheme", "common_only", "two_noise | common_only | idio_only"),
    ("numerics.p", "10", "time steps"),
    ("numerics.m", "1", "particles per realization"),
    ("numerics.n", "1000", "common-noise realizations"),
    ("numerics.degree", "4", "Hermite degree of the learned intercept"),
    ("numerics.iterations", "10", "fictitious-play iterations"),
    ("numerics.picard_iters", "10", "Picard iterations of the reference solver"),
    ("numerics.clamp", "1", "bound on the reference intercept"),
    ("numerics.intercept_clamp", "none", "bound on the learned intercept, or none"),
    ("numerics.reference_degree", "numerics.degree", "Hermite degree of the reference solver"),
    ("numerics.riccati", "known", "known (gain frozen at -eta) | learned"),
    ("numerics.scale", "diag", "diag | cholesky feature standardization"),
    ("numerics.variant", "standard", "standard | averaged_guess"),
    ("optimizer.backend", "adam", "adam | analytic"),
    ("optimizer.lr", "0.01", "ADAM learning rate"),
    ("optimizer.epochs", "15", "full-batch ADAM steps per best response"),
    ("optimizer.beta1", "0.9", "ADAM first-moment decay"),
    ("optimizer.beta2", "0.999", "ADAM second-moment decay"),
    ("annealing.schedule", "1,0.9,...,0.1", "strictly decreasing epsilon stages"),
    ("annealing.warm_start_policy", "true", "carry the policy across stages"),
    ("analysis.bracket", "-2,2", "root search interval"),
    ("analysis.samples", "2001", "potential scan resolution"),
    ("analysis.bins", "40", "histogram bins"),
];

struct Entries {
    map: BTreeMap<String, (usize, String)>,
    errors: Vec<String>,
}

impl Entries {
    fn take(&mut self, key: &str) -> Option<(usize, String)> {
        self.map.remove(key)
    }

    fn parsed<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        let (line, raw) = self.take(key)?;
        match parse(&raw) {
            Ok(v) => Some(v),
            Err(e) => {
                self.errors.push(format!("line {line}: {key}: {e}"));
                None
            }
        }
    }

    fn required<T>(&mut self, key: &str, parse: impl Fn(&str) -> std::result::Result<T, String>) -> Option<T> {
        if !self.map.contains_key(key) {
            self.errors.push(format!("missing required key {key}"));
            return None;
        }
        self.parsed(key, parse)
    }
}

fn num(s: &str) -> std::result::Result<f64, String> {
    let v: f64 = s.parse().map_err(|_| format!("'{s}' is not a number"))?;
    if v.is_finite() {
        Ok(v)
    } else {
        Err(format!("'{s}' is not finite"))
    }
}

fn count(s: &str) -> std::result::Result<usize, String> {
    s.parse().map_err(|_| format!("'{s}' is not a non-negative integer"))
}

fn list(s: &str) -> std::result::Result<Vec<f64>, String> {
    if s.trim().is_empty() {
        return Ok(Vec::new());
    }
    s.split(',').map(|v| num(v.trim())).collect()
}

fn flag(s: &str) -> std::result::Result<bool, String> {
    match s {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("'{s}' is not a boolean")),
    }
}

fn choice<T: Copy>(options: &'static [(&'static str, T)]) -> impl Fn(&str) -> std::result::Result<T, String> {
    move |s| {
        options.iter().find(|(name, _)| *name == s).map(|(_, v)| *v).ok_or_else(|| {
            let names: Vec<&str> = options.iter().map(|(n, _)| *n).collect();
            format!("'{s}' is not one of {}", names.join(", "))
        })
    }
}

const KINDS: &[(&str, ExperimentKind)] =
    &[("play", ExperimentKind::Play), ("costcompare", ExperimentKind::CostCompare), ("anneal", ExperimentKind::Anneal)];
const COUPLINGS: &[(&str, CouplingKind)] =
    &[("cos_kappa", CouplingKind::CosKappa), ("cos_shifted", CouplingKind::CosShifted), ("table", CouplingKind::Table)];
const SCHEMES: &[(&str, Scheme)] =
    &[("two_noise", Scheme::TwoNoise), ("common_only", Scheme::CommonOnly), ("idio_only", Scheme::IdioOnly)];
const RICCATI: &[(&str, bool)] = &[("known", true), ("learned", false)];
const SCALES: &[(&str, ScaleMode)] = &[("diag", ScaleMode::Diag), ("cholesky", ScaleMode::Cholesky)];
const VARIANTS: &[(&str, Variant)] = &[("standard", Variant::Standard), ("averaged_guess", Variant::AveragedGuess)];
const BACKENDS: &[(&str, Backend)] = &[("adam", Backend::Adam), ("analytic", Backend::Analytic)];

fn name_of<T: PartialEq>(options: &[(&'static str, T)], v: &T) -> &'static str {
    options.iter().find(|(_, o)| o == v).map(|(n, _)| *n).expect("every variant is named")
}

fn default_schedule() -> Vec<f64> {
    (0..10).map(|i| (10 - i) as f64 / 10.0).collect()
}

pub fn parse_config(text: &str) -> Result<ExperimentConfig> {
    let mut entries = Entries { map: BTreeMap::new(), errors: Vec::new() };
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            entries.errors.push(format!("line {line}: expected 'key = value', got '{content}'"));
            continue;
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() {
            entries.errors.push(format!("line {line}: empty key"));
        } else if let Some((first, _)) = entries.map.get(key) {
            entries.errors.push(format!("line {line}: duplicate key {key} (first set on line {first})"));
        } else {
            entries.map.insert(key.to_string(), (line, value.to_string()));
        }
    }

    let e = &mut entries;
    let name = e.required("name", |s| if s.is_empty() { Err("empty name".to_string()) } else { Ok(s.to_string()) });
    let kind = e.parsed("kind", choice(KINDS)).unwrap_or(ExperimentKind::Play);
    let seed = e.parsed("seed", |s| s.parse::<u64>().map_err(|_| format!("'{s}' is not a u64"))).unwrap_or(1);
    let output = e.parsed("output", |s| Ok(PathBuf::from(s)));

    let dim = e.required("model.d", count);
    let coupling = e.parsed("model.coupling", choice(COUPLINGS)).unwrap_or(CouplingKind::CosKappa);
    let kappa = if coupling == CouplingKind::Table {
        e.parsed("model.kappa", num).unwrap_or(0.0)
    } else {
        e.required("model.kappa", num).unwrap_or(0.0)
    };
    let shift =
        if coupling == CouplingKind::CosShifted { e.required("model.x0", num) } else { e.parsed("model.x0", num) };
    let (table_x, table_y) = if coupling == CouplingKind::Table {
        (e.required("model.table_x", list).unwrap_or_default(), e.required("model.table_y", list).unwrap_or_default())
    } else {
        (e.parsed("model.table_x", list).unwrap_or_default(), e.parsed("model.table_y", list).unwrap_or_default())
    };
    let model = ModelBlock {
        dim: dim.unwrap_or(1),
        coupling,
        kappa,
        shift,
        table_x,
        table_y,
        sigma: e.parsed("model.sigma", num).unwrap_or(0.0),
        epsilon: e.parsed("model.epsilon", num).unwrap_or(1.0),
        horizon: e.parsed("model.horizon", num).unwrap_or(1.0),
        x0_state: e.parsed("model.x0_state", list).unwrap_or_else(|| vec![0.0]),
    };

    let degree = e.parsed("numerics.degree", count).unwrap_or(4);
    let numerics = NumericsBlock {
        scheme: e.parsed("numerics.scheme", choice(SCHEMES)).unwrap_or(Scheme::CommonOnly),
        steps: e.parsed("numerics.p", count).unwrap_or(10),
        particles: e.parsed("numerics.m", count).unwrap_or(1),
        realizations: e.parsed("numerics.n", count).unwrap_or(1000),
        degree,
        iterations: e.parsed("numerics.iterations", count).unwrap_or(10),
        picard_iters: e.parsed("numerics.picard_iters", count).unwrap_or(10),
        clamp: e.parsed("numerics.clamp", num).unwrap_or(1.0),
        intercept_clamp: e
            .parsed("numerics.intercept_clamp", |s| if s == "none" { Ok(None) } else { num(s).map(Some) })
            .unwrap_or(None),
        reference_degree: e.parsed("numerics.reference_degree", count).unwrap_or(degree),
        riccati_known: e.parsed("numerics.riccati", choice(RICCATI)).unwrap_or(true),
        scale: e.parsed("numerics.scale", choice(SCALES)).unwrap_or(ScaleMode::Diag),
        variant: e.parsed("numerics.variant", choice(VARIANTS)).unwrap_or(Variant::Standard),
    };
    let defaults = AdamConfig::default();
    let optimizer = OptimizerBlock {
        backend: e.parsed("optimizer.backend", choice(BACKENDS)).unwrap_or(Backend::Adam),
        lr: e.parsed("optimizer.lr", num).unwrap_or(defaults.lr),
        epochs: e.parsed("optimizer.epochs", count).unwrap_or(defaults.epochs),
        beta1: e.parsed("optimizer.beta1", num).unwrap_or(defaults.beta1),
        beta2: e.parsed("optimizer.beta2", num).unwrap_or(defaults.beta2),
    };
    let annealing = AnnealBlock {
        schedule: e.parsed("annealing.schedule", list).unwrap_or_else(default_schedule),
        warm_start_policy: e.parsed("annealing.warm_start_policy", flag).unwrap_or(true),
    };
    let bracket = e
        .parsed("analysis.bracket", |s| match list(s)?.as_slice() {
            [lo, hi] => Ok((*lo, *hi)),
            _ => Err("expected two values 'lo, hi'".to_string()),
        })
        .unwrap_or((-2.0, 2.0));
    let analysis = AnalysisBlock {
        bracket,
        samples: e.parsed("analysis.samples", count).unwrap_or(2001),
        bins: e.parsed("analysis.bins", count).unwrap_or(40),
    };

    let unknown: Vec<(String, usize)> = e.map.iter().map(|(k, (line, _))| (k.clone(), *line)).collect();
    for (key, line) in unknown {
        e.errors.push(format!("line {line}: unknown key {key}"));
    }
    if !e.errors.is_empty() {
        e.errors.sort_by_key(|m| line_of(m));
        return Err(Error::Config(e.errors.join("\n")));
    }
    let config = ExperimentConfig {
        name: name.expect("checked above"),
        kind,
        seed,
        output,
        model,
        numerics,
        optimizer,
        annealing,
        analysis,
    };
    config.validate()?;
    Ok(config)
}

// Parse errors sort by line; errors without a line go last.
fn line_of(msg: &str) -> usize {
    msg.strip_prefix("line ").and_then(|r| r.split(':').next()).and_then(|n| n.parse().ok()).unwrap_or(usize::MAX)
}

pub fn read_config(path: &std::path::Path) -> Result<ExperimentConfig> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
    parse_config(&text)
}

impl ExperimentConfig {
    /// Lists every violated constraint.
    pub fn validate(&self) -> Result<()> {
        let mut bad = Vec::new();
        let (m, n) = (&self.model, &self.numerics);
        for (key, v) in [
            ("model.d", m.dim),
            ("numerics.p", n.steps),
            ("numerics.m", n.particles),
            ("numerics.n", n.realizations),
            ("numerics.iterations", n.iterations),
            ("numerics.picard_iters", n.picard_iters),
            ("analysis.bins", self.analysis.bins),
        ] {
            if v < 1 {
                bad.push(format!("{key} must be at least 1"));
            }
        }
        if self.analysis.samples < 2 {
            bad.push("analysis.samples must be at least 2".into());
        }
        if m.sigma < 0.0 || m.epsilon < 0.0 {
            bad.push("model.sigma and model.epsilon must be non-negative".into());
        }
        if m.horizon <= 0.0 {
            bad.push("model.horizon must be positive".into());
        }
        if !(m.x0_state.len() == 1 || m.x0_state.len() == m.dim) {
            bad.push(format!("model.x0_state needs 1 or {} values", m.dim));
        }
        match m.coupling {
            CouplingKind::CosKappa if !(m.dim == 1 || m.dim == 2) => {
                bad.push("cos_kappa coupling needs model.d = 1 or 2".into());
            }
            CouplingKind::CosShifted | CouplingKind::Table if m.dim != 1 => {
                bad.push("cos_shifted and table couplings need model.d = 1".into());
            }
            _ => {}
        }
        if m.coupling == CouplingKind::Table {
            if let Err(e) = Coupling::table(m.table_x.clone(), m.table_y.clone()) {
                bad.push(e.to_string());
            }
        }
        if n.clamp <= 0.0 {
            bad.push("numerics.clamp must be positive".into());
        }
        if n.intercept_clamp.is_some_and(|c| c <= 0.0) {
            bad.push("numerics.intercept_clamp must be positive".into());
        }
        let o = &self.optimizer;
        if o.lr <= 0.0 {
            bad.push("optimizer.lr must be positive".into());
        }
        if !(0.0..1.0).contains(&o.beta1) || !(0.0..1.0).contains(&o.beta2) {
            bad.push("optimizer.beta1 and optimizer.beta2 must lie in [0, 1)".into());
        }
        if o.backend == Backend::Adam && o.epochs == 0 {
            bad.push("optimizer.epochs must be at least 1".into());
        }
        let s = &self.annealing.schedule;
        if s.is_empty() || s.iter().any(|e| *e <= 0.0) {
            bad.push("annealing.schedule must be non-empty and positive".into());
        }
        if s.windows(2).any(|w| w[1] >= w[0]) {
            bad.push("annealing.schedule must be strictly decreasing".into());
        }
        let (lo, hi) = self.analysis.bracket;
        if lo >= hi {
            bad.push("analysis.bracket must satisfy lo < hi".into());
        }
        if bad.is_empty() {
            // Scheme and noise compatibility.
            if let Err(Error::Config(msg)) = self.play_config().and_then(|c| c.validate()) {
                bad.extend(msg.split("; ").map(str::to_string));
            }
        }
        if bad.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(bad.join("\n")))
        }
    }

    pub fn coupling(&self) -> Result<Coupling> {
        let m = &self.model;
        match m.coupling {
            CouplingKind::CosKappa => Coupling::cos_kappa(m.kappa, m.dim),
            CouplingKind::CosShifted => Ok(Coupling::CosShifted {
                kappa: m.kappa,
                shift: m.shift.ok_or_else(|| Error::Config("model.x0 is required".into()))?,
            }),
            CouplingKind::Table => Coupling::table(m.table_x.clone(), m.table_y.clone()),
        }
    }

    /// `Q = 0`, `R = I`, no running coupling.
    pub fn lq_model(&self) -> Result<LqModel> {
        let m = &self.model;
        let d = m.dim;
        let x0 = if m.x0_state.len() == 1 { vec![m.x0_state[0]; d] } else { m.x0_state.clone() };
        Ok(LqModel {
            q: DMatrix::zeros(d, d),
            r: DMatrix::identity(d, d),
            terminal: self.coupling()?,
            running: Coupling::Zero { dim: d },
            x0,
            sigma: m.sigma,
            epsilon: m.epsilon,
        })
    }

    pub fn play_config(&self) -> Result<PlayConfig> {
        let n = &self.numerics;
        let o = &self.optimizer;
        Ok(PlayConfig {
            scheme: n.scheme,
            model: self.lq_model()?,
            horizon: self.model.horizon,
            steps: n.steps,
            particles: n.particles,
            realizations: n.realizations,
            degree: n.degree,
            iterations: n.iterations,
            seed: self.seed,
            adam: AdamConfig { lr: o.lr, epochs: o.epochs, beta1: o.beta1, beta2: o.beta2, ..AdamConfig::default() },
            backend: o.backend,
            variant: n.variant,
            freeze_gain: n.riccati_known,
            scale: n.scale,
            clamp: n.intercept_clamp,
        })
    }

    pub fn reference_config(&self) -> ReferenceConfig {
        ReferenceConfig {
            picard_iters: self.numerics.picard_iters,
            degree: self.numerics.reference_degree,
            clamp: self.numerics.clamp,
            scale: self.numerics.scale,
            ..ReferenceConfig::default()
        }
    }

    /// Canonical text of every setting except the output directory; parses
    /// back to the same configuration.
    pub fn render(&self) -> String {
        let fmt_list = |v: &[f64]| v.iter().map(|x| format!("{x:?}")).collect::<Vec<_>>().join(", ");
        let (m, n, o) = (&self.model, &self.numerics, &self.optimizer);
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("kind", name_of(KINDS, &self.kind).into());
        kv("seed", self.seed.to_string());
        kv("model.d", m.dim.to_string());
        kv("model.coupling", name_of(COUPLINGS, &m.coupling).into());
        kv("model.kappa", format!("{:?}", m.kappa));
        if let Some(x) = m.shift {
            kv("model.x0", format!("{x:?}"));
        }
        if m.coupling == CouplingKind::Table {
            kv("model.table_x", fmt_list(&m.table_x));
            kv("model.table_y", fmt_list(&m.table_y));
        }
        kv("model.sigma", format!("{:?}", m.sigma));
        kv("model.epsilon", format!("{:?}", m.epsilon));
        kv("model.horizon", format!("{:?}", m.horizon));
        kv("model.x0_state", fmt_list(&m.x0_state));
        kv("numerics.scheme", name_of(SCHEMES, &n.scheme).into());
        kv("numerics.p", n.steps.to_string());
        kv("numerics.m", n.particles.to_string());
        kv("numerics.n", n.realizations.to_string());
        kv("numerics.degree", n.degree.to_string());
        kv("numerics.iterations", n.iterations.to_string());
        kv("numerics.picard_iters", n.picard_iters.to_string());
        kv("numerics.clamp", format!("{:?}", n.clamp));
        kv("numerics.intercept_clamp", n.intercept_clamp.map_or("none".into(), |c| format!("{c:?}")));
        kv("numerics.reference_degree", n.reference_degree.to_string());
        kv("numerics.riccati", name_of(RICCATI, &n.riccati_known).into());
        kv("numerics.scale", name_of(SCALES, &n.scale).into());
        kv("numerics.variant", name_of(VARIANTS, &n.variant).into());
        kv("optimizer.backend", name_of(BACKENDS, &o.backend).into());
        kv("optimizer.lr", format!("{:?}", o.lr));
        kv("optimizer.epochs", o.epochs.to_string());
        kv("optimizer.beta1", format!("{:?}", o.beta1));
        kv("optimizer.beta2", format!("{:?}", o.beta2));
        kv("annealing.schedule", fmt_list(&self.annealing.schedule));
        kv("annealing.warm_start_policy", self.annealing.warm_start_policy.to_string());
        kv("analysis.bracket", fmt_list(&[self.analysis.bracket.0, self.analysis.bracket.1]));
        kv("analysis.samples", self.analysis.samples.to_string());
        kv("analysis.bins", self.analysis.bins.to_string());
        s
    }

    pub fn fingerprint(&self) -> u64 {
        let mut fp = Fingerprinter::new("experiment-config");
        fp.str(&self.render());
        fp.finish()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn minimal_file_takes_defaults() {
        let c = parse_config("name = tiny\nmodel.d = 1\nmodel.kappa = 1\n").unwrap();
        assert_eq!(c.kind, ExperimentKind::Play);
        assert_eq!(c.seed, 1);
        assert_eq!(c.model.epsilon, 1.0);
        assert_eq!(c.numerics.steps, 10);
        assert_eq!(c.numerics.reference_degree, 4);
        assert_eq!(c.annealing.schedule.len(), 10);
        assert_eq!(c.optimizer.epochs, 15);
        assert_eq!(c.analysis.bracket, (-2.0, 2.0));
    }

    #[test]
    fn increasing_schedule_rejected() {
        let err = parse_config("name = a\nmodel.d = 1\nmodel.kappa = 1\nannealing.schedule = 0.5, 1.0\n").unwrap_err();
        assert!(err.to_string().contains("strictly decreasing"), "{err}");
    }

    #[test]
    fn errors_carry_lines_and_are_exhaustive() {
        let text = "name = a\nmodel.d = 1\nmodel.kappa = x\nbogus = 3\nno equals here\nmodel.d = 2\n";
        let msg = parse_config(text).unwrap_err().to_string();
        assert!(msg.contains("line 3: model.kappa"), "{msg}");
        assert!(msg.contains("line 4: unknown key bogus"), "{msg}");
        assert!(msg.contains("line 5: expected"), "{msg}");
        assert!(msg.contains("line 6: duplicate key model.d"), "{msg}");
        let msg = parse_config("model.d = 0\nmodel.kappa = 1\nnumerics.p = 0\n").unwrap_err().to_string();
        assert!(msg.contains("missing required key name"), "{msg}");
        let msg = parse_config("name = a\nmodel.d = 0\nmodel.kappa = 1\nnumerics.p = 0\noptimizer.lr = -1\n")
            .unwrap_err()
            .to_string();
        for needle in ["model.d must", "numerics.p must", "optimizer.lr"] {
            assert!(msg.contains(needle), "{needle} missing from {msg}");
        }
    }

    #[test]
    fn scheme_constraints_surface() {
        let msg = parse_config("name = a\nmodel.d = 1\nmodel.kappa = 1\nnumerics.m = 3\n").unwrap_err().to_string();
        assert!(msg.contains("common_only"), "{msg}");
    }

    #[test]
    fn render_round_trips() {
        let text =
            "name = r\nmodel.d = 1\nmodel.coupling = cos_shifted\nmodel.kappa = 10\nmodel.x0 = -0.38374671064990484\n\
                    numerics.intercept_clamp = 1.7\nannealing.schedule = 0.3, 0.2\nkind = anneal # comment\n";
        let c = parse_config(text).unwrap();
        let back = parse_config(&c.render()).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.fingerprint(), c.fingerprint());
        let mut other = c.clone();
        other.seed = 2;
        assert_ne!(other.fingerprint(), c.fingerprint());
        let mut moved = c.clone();
        moved.output = Some("/tmp/elsewhere".into());
        assert_eq!(moved.fingerprint(), c.fingerprint());
    }

    #[test]
    fn play_config_mirrors_blocks() {
        let c = parse_config(
            "name = a\nmodel.d = 2\nmodel.kappa = 10\nmodel.x0_state = 0.5\noptimizer.backend = analytic\n",
        )
        .unwrap();
        let p = c.play_config().unwrap();
        assert_eq!(p.model.x0, vec![0.5, 0.5]);
        assert_eq!(p.backend, Backend::Analytic);
        assert!(p.freeze_gain);
        assert_eq!(c.reference_config().degree, 4);
    }
}
