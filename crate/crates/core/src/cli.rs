// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Batch driver. Every subcommand reads a JSON config, runs one computation
//! and writes CSV curves or JSON reports under `--out`, each carrying a
//! `#`-prefixed run manifest.
//!
//! Exit codes: 0 success, 1 usage error, 2 invalid config, 3 numerical failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{Array1, Array2};
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::analysis::{alpha_scaling_study, limit_report, ScalingConfig};
use crate::cumulant::{evolve_second_order, hamiltonian_superop, markovian_generator, StochasticCoupling};
use crate::error::{Error, FieldError, Result};
use crate::generators::{
    build_breuer_generator, build_full_generator, build_momentum_generator, build_position_generator, random_states,
    BreuerStrength, FullGeneratorOptions,
};
use crate::kernels::{closed_form_for, position_rate_closed_form, position_rate_spectral, FormFactor};
use crate::linalg;
use crate::model::{validate_model, Basis, DenseState, Model, PureState};
use crate::noise_field::LambdaMode;
use crate::oracle::{run_ensemble, CouplingMode, EnsembleConfig, LevelEnsembleConfig, LevelNoise, Observable};
use crate::propagators::{propagate, Method, PropagationPlan};
use crate::{CMatrix, C64};

#[derive(Parser, Debug)]
#[command(
    name = "gravdec",
    version,
    about = "Gravitational decoherence master equations and trajectory oracle"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct Common {
    /// JSON configuration file.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Master seed; overrides the config value.
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    /// Worker threads; results do not depend on this value.
    #[arg(long)]
    threads: Option<usize>,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Tabulate Γ(Δx) by spectral quadrature and in closed form.
    Rates {
        #[command(flatten)]
        common: Common,
        /// Largest separation; half the grid extent by default.
        #[arg(long)]
        dx_max: Option<f64>,
        #[arg(long, default_value_t = 100)]
        dx_steps: usize,
    },
    /// Master-equation evolution of the configured initial state.
    Propagate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = RegimeArg::Position)]
        regime: RegimeArg,
    },
    /// Monte Carlo ensemble of stochastic trajectories.
    Oracle {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        n_traj: Option<usize>,
    },
    /// Compare the full dissipator with its position and momentum limits.
    Limits {
        #[command(flatten)]
        common: Common,
        /// Random probe states added to the configured initial state.
        #[arg(long, default_value_t = 4)]
        probes: usize,
    },
    /// Second-order cumulant and Markovian evolution of an N-level system.
    Cumulant {
        #[command(flatten)]
        common: Common,
    },
    /// Cumulant-versus-ensemble deviation as a function of α.
    Scaling {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        samples: Option<usize>,
        #[arg(long, value_delimiter = ',')]
        alphas: Option<Vec<f64>>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq)]
enum RegimeArg {
    Full,
    Position,
    Momentum,
    Breuer,
}

impl RegimeArg {
    fn name(self) -> &'static str {
        match self {
            RegimeArg::Full => "full",
            RegimeArg::Position => "position",
            RegimeArg::Momentum => "momentum",
            RegimeArg::Breuer => "breuer",
        }
    }
}

/// Parses `argv` (including the program name), runs the subcommand and
/// returns the process exit code.
pub fn run(argv: Vec<OsString>) -> i32 {
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    let common = match &cli.command {
        Command::Rates { common, .. }
        | Command::Propagate { common, .. }
        | Command::Oracle { common, .. }
        | Command::Limits { common, .. }
        | Command::Cumulant { common }
        | Command::Scaling { common, .. } => common.clone(),
    };
    let result = match common.threads {
        Some(0) => Err(Error::Validation(vec![FieldError::new("--threads", "must be >= 1")])),
        Some(n) => match rayon::ThreadPoolBuilder::new().num_threads(n).build() {
            Ok(pool) => pool.install(|| dispatch(&cli.command, &common)),
            Err(e) => Err(Error::numerical(format!("thread pool: {e}"))),
        },
        None => dispatch(&cli.command, &common),
    };
    match result {
        Ok(()) => 0,
        Err(Error::Validation(errs)) => {
            eprintln!("{}", json!({ "errors": errs }));
            2
        }
        Err(e) => {
            eprintln!("{}", json!({ "error": e.to_string() }));
            3
        }
    }
}

/// Loaded configuration with its content hash.
struct Loaded {
    raw: Value,
    sha256: String,
}

fn load(common: &Common) -> Result<Loaded> {
    let Some(path) = &common.config else {
        return Ok(Loaded {
            raw: json!({}),
            sha256: "none".into(),
        });
    };
    let bytes = fs::read(path)
        .map_err(|e| Error::Validation(vec![FieldError::new("--config", format!("{}: {e}", path.display()))]))?;
    let raw: Value = serde_json::from_slice(&bytes)
        .map_err(|e| Error::Validation(vec![FieldError::new("--config", format!("invalid JSON: {e}"))]))?;
    Ok(Loaded {
        raw,
        sha256: hex::encode(Sha256::digest(&bytes)),
    })
}

fn require_model(loaded: &Loaded, common: &Common) -> Result<Model> {
    if common.config.is_none() {
        return Err(Error::Validation(vec![FieldError::new(
            "--config",
            "required for this subcommand",
        )]));
    }
    validate_model(&loaded.raw)
}

fn unix_now() -> u64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs())
        .unwrap_or(0)
}

struct Manifest {
    sha256: String,
    seed: u64,
    subcommand: &'static str,
    start: u64,
    stop: u64,
    outputs: Vec<String>,
}

impl Manifest {
    fn header(&self) -> String {
        format!(
            "# gravdec run manifest\n# config_sha256: {}\n# seed: {}\n# version: {}\n# subcommand: {}\n# start_unix: {}\n# stop_unix: {}\n# outputs: {}\n",
            self.sha256,
            self.seed,
            env!("CARGO_PKG_VERSION"),
            self.subcommand,
            self.start,
            self.stop,
            self.outputs.join(",")
        )
    }

    fn json(&self) -> Value {
        json!({
            "config_sha256": self.sha256,
            "seed": self.seed,
            "version": env!("CARGO_PKG_VERSION"),
            "subcommand": self.subcommand,
            "start_unix": self.start,
            "stop_unix": self.stop,
            "outputs": self.outputs,
        })
    }
}

enum Output {
    Csv { name: String, body: String },
    Json { name: String, body: Value },
}

impl Output {
    fn name(&self) -> &str {
        match self {
            Output::Csv { name, .. } | Output::Json { name, .. } => name,
        }
    }
}

fn write_atomic(dir: &Path, name: &str, content: &str) -> Result<()> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, content)?;
    fs::rename(&tmp, dir.join(name))?;
    Ok(())
}

fn emit(common: &Common, mut manifest: Manifest, outputs: Vec<Output>) -> Result<()> {
    fs::create_dir_all(&common.out)?;
    manifest.outputs = outputs.iter().map(|o| o.name().to_string()).collect();
    manifest.stop = unix_now();
    for o in &outputs {
        match o {
            Output::Csv { name, body } => write_atomic(&common.out, name, &format!("{}{body}", manifest.header()))?,
            Output::Json { name, body } => {
                let mut doc = serde_json::Map::new();
                doc.insert("manifest".into(), manifest.json());
                if let Value::Object(m) = body {
                    doc.extend(m.clone());
                }
                let text = serde_json::to_string_pretty(&Value::Object(doc)).expect("serializable");
                write_atomic(&common.out, name, &format!("{text}\n"))?;
            }
        }
    }
    Ok(())
}

/// 17 significant digits.
fn f(x: f64) -> String {
    format!("{x:.16e}")
}

/// Typed access to an optional config section, collecting errors by path.
struct Section<'a> {
    value: Option<&'a Value>,
    prefix: &'static str,
    errors: Vec<FieldError>,
}

impl<'a> Section<'a> {
    fn new(raw: &'a Value, prefix: &'static str) -> Self {
        Self {
            value: raw.get(prefix),
            prefix,
            errors: Vec::new(),
        }
    }

    fn get(&self, key: &str) -> Option<&'a Value> {
        self.value.and_then(|v| v.get(key)).filter(|v| !v.is_null())
    }

    fn err(&mut self, key: &str, msg: impl Into<String>) {
        self.errors.push(FieldError::new(format!("{}.{key}", self.prefix), msg));
    }

    fn positive(&mut self, key: &str, default: f64) -> f64 {
        match self.get(key) {
            None => default,
            Some(v) => match v.as_f64() {
                Some(x) if x > 0.0 && x.is_finite() => x,
                _ => {
                    self.err(key, "must be a finite number > 0");
                    default
                }
            },
        }
    }

    fn number(&mut self, key: &str, default: f64) -> f64 {
        match self.get(key) {
            None => default,
            Some(v) => match v.as_f64() {
                Some(x) if x.is_finite() => x,
                _ => {
                    self.err(key, "must be a finite number");
                    default
                }
            },
        }
    }

    fn count(&mut self, key: &str, default: usize) -> usize {
        match self.get(key) {
            None => default,
            Some(v) => match v.as_u64() {
                Some(n) if n >= 1 => n as usize,
                _ => {
                    self.err(key, "must be an integer >= 1");
                    default
                }
            },
        }
    }

    fn flag(&mut self, key: &str, default: bool) -> bool {
        match self.get(key) {
            None => default,
            Some(Value::Bool(b)) => *b,
            Some(_) => {
                self.err(key, "must be a boolean");
                default
            }
        }
    }

    fn choice(&mut self, key: &str, options: &[&'static str], default: &'static str) -> &'static str {
        match self.get(key) {
            None => default,
            Some(Value::String(s)) => match options.iter().find(|o| **o == s.as_str()) {
                Some(o) => o,
                None => {
                    self.err(
                        key,
                        format!("unknown value {s:?}; expected one of {}", options.join(", ")),
                    );
                    default
                }
            },
            Some(_) => {
                self.err(key, "must be a string");
                default
            }
        }
    }

    fn numbers(&mut self, key: &str) -> Option<Vec<f64>> {
        let v = self.get(key)?;
        let out: Option<Vec<f64>> = v.as_array().and_then(|a| a.iter().map(|x| x.as_f64()).collect());
        if out.is_none() {
            self.err(key, "must be an array of numbers");
        }
        out
    }

    fn matrix(&mut self, key: &str, value: Option<&Value>) -> Option<CMatrix> {
        let rows: Option<Vec<Vec<f64>>> = value?.as_array().and_then(|r| {
            r.iter()
                .map(|row| row.as_array().and_then(|c| c.iter().map(|x| x.as_f64()).collect()))
                .collect()
        });
        match rows {
            Some(rows) if !rows.is_empty() && rows.iter().all(|r| r.len() == rows.len()) => {
                let n = rows.len();
                Some(Array2::from_shape_fn((n, n), |(i, j)| C64::new(rows[i][j], 0.0)))
            }
            _ => {
                self.err(key, "must be a square array of real rows");
                None
            }
        }
    }

    fn finish(self, into: &mut Vec<FieldError>) {
        into.extend(self.errors);
    }
}

fn fail_on(errors: Vec<FieldError>) -> Result<()> {
    if errors.is_empty() {
        Ok(())
    } else {
        Err(Error::Validation(errors))
    }
}

struct TimeGrid {
    dt: f64,
    steps: usize,
    stride: usize,
}

fn time_grid(raw: &Value, errors: &mut Vec<FieldError>) -> TimeGrid {
    let mut s = Section::new(raw, "time");
    let dt = s.positive("dt", 0.01);
    let steps = s.count("steps", 100);
    let stride = s.count("stride", 10);
    if !steps.is_multiple_of(stride) {
        s.err("stride", "must divide time.steps");
    }
    s.finish(errors);
    TimeGrid { dt, steps, stride }
}

/// Initial state and the coherence entries reported for it.
fn initial_state(raw: &Value, model: &Model, errors: &mut Vec<FieldError>) -> (PureState, Vec<(usize, usize)>) {
    let grid = model.grid;
    let n = grid.n();
    let index = |x: f64| (((x + 0.5 * grid.extent()) / grid.dx()).round().max(0.0) as usize).min(n - 1);
    let mut s = Section::new(raw, "initial");
    let kind = s.choice("kind", &["cat", "gaussian", "uniform"], "cat");
    let sigma = s.positive("sigma", grid.extent() / 32.0);
    let (state, default_pair) = match kind {
        "cat" => {
            let sep = s.positive("separation", grid.extent() / 4.0);
            (PureState::cat(grid, sep, sigma), (index(-0.5 * sep), index(0.5 * sep)))
        }
        "gaussian" => {
            let x0 = s.number("x0", 0.0);
            let p0 = s.number("p0", 0.0);
            let c = index(x0);
            (PureState::gaussian(grid, x0, sigma, p0), (c, (c + n / 8) % n))
        }
        _ => (Ok(PureState::uniform(grid)), (n / 2, n / 2 + n / 8)),
    };
    let mut pairs = vec![default_pair];
    if let Some(v) = raw.get("observe").and_then(|o| o.get("pairs")) {
        let parsed: Option<Vec<(usize, usize)>> = v.as_array().and_then(|a| {
            a.iter()
                .map(|p| {
                    let p = p.as_array()?;
                    let i = p.first()?.as_u64()? as usize;
                    let j = p.get(1)?.as_u64()? as usize;
                    (p.len() == 2 && i < n && j < n).then_some((i, j))
                })
                .collect()
        });
        match parsed {
            Some(p) if !p.is_empty() => pairs = p,
            _ => errors.push(FieldError::new(
                "observe.pairs",
                "must be a non-empty list of [i, j] grid indices",
            )),
        }
    }
    let state = match state {
        Ok(st) => st,
        Err(e) => {
            s.err("kind", e.to_string());
            PureState::uniform(grid)
        }
    };
    s.finish(errors);
    (state, pairs)
}

fn pair_columns(pairs: &[(usize, usize)], with_se: bool) -> String {
    let mut h = String::from("t");
    for (i, j) in pairs {
        write!(h, ",re_{i}_{j},im_{i}_{j}").unwrap();
    }
    if with_se {
        for (i, j) in pairs {
            write!(h, ",se_re_{i}_{j},se_im_{i}_{j}").unwrap();
        }
    }
    h
}

fn dispatch(command: &Command, common: &Common) -> Result<()> {
    let start = unix_now();
    let loaded = load(common)?;
    let seed = common
        .seed
        .or_else(|| loaded.raw.get("seed").and_then(|s| s.as_u64()))
        .unwrap_or(0);
    let (subcommand, outputs) = match command {
        Command::Rates { dx_max, dx_steps, .. } => ("rates", cmd_rates(&loaded, common, *dx_max, *dx_steps)?),
        Command::Propagate { regime, .. } => ("propagate", cmd_propagate(&loaded, common, *regime)?),
        Command::Oracle { n_traj, .. } => ("oracle", cmd_oracle(&loaded, common, *n_traj, seed)?),
        Command::Limits { probes, .. } => ("limits", cmd_limits(&loaded, common, *probes, seed)?),
        Command::Cumulant { .. } => ("cumulant", cmd_cumulant(&loaded)?),
        Command::Scaling { samples, alphas, .. } => ("scaling", cmd_scaling(&loaded, *samples, alphas.clone(), seed)?),
    };
    let manifest = Manifest {
        sha256: loaded.sha256.clone(),
        seed,
        subcommand,
        start,
        stop: start,
        outputs: Vec::new(),
    };
    emit(common, manifest, outputs)
}

fn cmd_rates(loaded: &Loaded, common: &Common, dx_max: Option<f64>, dx_steps: usize) -> Result<Vec<Output>> {
    let model = require_model(loaded, common)?;
    let dx_max = dx_max.unwrap_or(0.5 * model.grid.extent());
    let mut errors = Vec::new();
    if !(dx_max > 0.0 && dx_max.is_finite()) {
        errors.push(FieldError::new("--dx-max", "must be finite and > 0"));
    }
    if dx_steps == 0 {
        errors.push(FieldError::new("--dx-steps", "must be >= 1"));
    }
    fail_on(errors)?;
    let ff = FormFactor::new(model.mass);
    let form = closed_form_for(&model.noise, &model.mass);
    let mut body = String::from("dx,gamma_spectral,gamma_closed\n");
    let mut worst = 0.0f64;
    for k in 0..=dx_steps {
        let dx = dx_max * k as f64 / dx_steps as f64;
        let spectral = position_rate_spectral(&model.noise, &ff, dx)?;
        let closed = match form {
            Some(c) => position_rate_closed_form(c, &model.noise, &model.mass, dx)?,
            None => f64::NAN,
        };
        if closed > 0.0 {
            worst = worst.max((spectral - closed).abs() / closed);
        }
        writeln!(body, "{},{},{}", f(dx), f(spectral), f(closed)).unwrap();
    }
    match form {
        Some(_) => writeln!(body, "# max_relative_discrepancy: {}", f(worst)).unwrap(),
        None => body.push_str("# max_relative_discrepancy: nan (no closed form)\n"),
    }
    Ok(vec![Output::Csv {
        name: "rates.csv".into(),
        body,
    }])
}

fn cmd_propagate(loaded: &Loaded, common: &Common, regime: RegimeArg) -> Result<Vec<Output>> {
    let model = require_model(loaded, common)?;
    let mut errors = Vec::new();
    let time = time_grid(&loaded.raw, &mut errors);
    let (psi, pairs) = initial_state(&loaded.raw, &model, &mut errors);
    let mut s = Section::new(&loaded.raw, "propagate");
    let kinetic = s.flag("kinetic", true);
    let lambda = s.positive("lambda", model.noise.tau_c);
    let positivity = s.flag("check_positivity", false);
    let default_method = match regime {
        RegimeArg::Full => "rk",
        RegimeArg::Position => "split",
        RegimeArg::Momentum | RegimeArg::Breuer => "exact",
    };
    let method = match s.choice("method", &["split", "exact", "rk"], default_method) {
        "split" => Method::SplitStep,
        "exact" => Method::MomentumExact,
        _ => Method::DenseRK,
    };
    s.finish(&mut errors);
    fail_on(errors)?;

    let ff = FormFactor::new(model.mass);
    let gen = match regime {
        RegimeArg::Full => build_full_generator(
            &model.noise,
            &ff,
            &model.grid,
            FullGeneratorOptions {
                include_free: kinetic,
                lambda: Some(lambda),
                ..Default::default()
            },
        )?,
        RegimeArg::Position => build_position_generator(&model.noise, &ff, &model.grid, kinetic)?,
        RegimeArg::Momentum => build_momentum_generator(&model.noise, &ff, &model.grid, lambda, kinetic)?,
        RegimeArg::Breuer => {
            build_breuer_generator(&model.noise, &model.mass, &model.grid, BreuerStrength::Lambda(lambda))?
        }
    };
    let mut plan = PropagationPlan::new(time.dt, time.steps, time.stride, method)?;
    if positivity {
        plan = plan.with_positivity_checks();
    }
    let rho = DenseState::from_pure(&psi);
    let result = propagate(&gen, &rho, &plan)?;
    let mut body = pair_columns(&pairs, false);
    body.push_str(",trace_re,purity\n");
    for snap in &result.snapshots {
        let m = &snap.state.matrix;
        body.push_str(&f(snap.time));
        for &(i, j) in &pairs {
            write!(body, ",{},{}", f(m[(i, j)].re), f(m[(i, j)].im)).unwrap();
        }
        writeln!(body, ",{},{}", f(snap.state.trace().re), f(snap.state.purity())).unwrap();
    }
    for w in &result.warnings {
        writeln!(body, "# warning: {w}").unwrap();
    }
    Ok(vec![Output::Csv {
        name: format!("propagate_{}.csv", regime.name()),
        body,
    }])
}

fn cmd_oracle(loaded: &Loaded, common: &Common, n_traj: Option<usize>, seed: u64) -> Result<Vec<Output>> {
    let model = require_model(loaded, common)?;
    let mut errors = Vec::new();
    let time = time_grid(&loaded.raw, &mut errors);
    let (psi, pairs) = initial_state(&loaded.raw, &model, &mut errors);
    let mut s = Section::new(&loaded.raw, "oracle");
    let n = n_traj.unwrap_or_else(|| s.count("n_traj", 200));
    let mode = match s.choice("mode", &["position", "full"], "position") {
        "full" => CouplingMode::Full,
        _ => CouplingMode::PositionOnly,
    };
    let kinetic = s.flag("kinetic", false);
    let lambda_mode = match s.choice("lambda_mode", &["saturated", "transient"], "saturated") {
        "transient" => LambdaMode::Transient,
        _ => LambdaMode::Saturated,
    };
    s.finish(&mut errors);
    if n == 0 {
        errors.push(FieldError::new("--n-traj", "must be >= 1"));
    }
    fail_on(errors)?;

    let cfg = EnsembleConfig {
        noise: model.noise,
        mass: model.mass,
        grid: model.grid,
        dt: time.dt,
        steps: time.steps,
        snapshot_stride: time.stride,
        kinetic,
        mode,
        lambda_mode,
        observable: Observable::Coherences(pairs.clone()),
        initial: psi,
    };
    let r = run_ensemble(&cfg, n, seed)?;
    let mut body = pair_columns(&pairs, true);
    body.push('\n');
    for (k, t) in r.times.iter().enumerate() {
        body.push_str(&f(*t));
        for v in r.values[k].iter() {
            write!(body, ",{},{}", f(v.re), f(v.im)).unwrap();
        }
        for p in 0..pairs.len() {
            write!(body, ",{},{}", f(r.std_err_re[k][p]), f(r.std_err_im[k][p])).unwrap();
        }
        body.push('\n');
    }
    writeln!(body, "# n_traj: {n}").unwrap();
    Ok(vec![Output::Csv {
        name: "oracle.csv".into(),
        body,
    }])
}

fn to_value<T: serde::Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("serializable")
}

fn cmd_limits(loaded: &Loaded, common: &Common, probes: usize, seed: u64) -> Result<Vec<Output>> {
    let model = require_model(loaded, common)?;
    let mut errors = Vec::new();
    let (psi, _) = initial_state(&loaded.raw, &model, &mut errors);
    fail_on(errors)?;
    let mut states = vec![DenseState::from_pure(&psi)];
    states.extend(random_states(
        model.grid.n(),
        probes,
        true,
        Basis::Position(model.grid),
        seed,
    ));
    let report = limit_report(&model, &states)?;
    Ok(vec![Output::Json {
        name: "limits.json".into(),
        body: json!({ "limit_report": to_value(&report) }),
    }])
}

/// N-level model shared by `cumulant` and `scaling`. Defaults to a driven
/// two-level system with transverse Ornstein-Uhlenbeck noise.
struct LevelSetup {
    base: LevelEnsembleConfig,
    observable: CMatrix,
    stride: usize,
}

fn level_setup(raw: &Value) -> Result<LevelSetup> {
    let c = |v: f64| C64::new(v, 0.0);
    let sz = Array2::from_shape_vec((2, 2), vec![c(1.0), c(0.0), c(0.0), c(-1.0)]).expect("2x2");
    let sx = Array2::from_shape_vec((2, 2), vec![c(0.0), c(1.0), c(1.0), c(0.0)]).expect("2x2");
    let mut errors = Vec::new();
    let mut s = Section::new(raw, "levels");
    let h0 = match s.get("h0") {
        Some(v) => s.matrix("h0", Some(v)),
        None => Some(sz.mapv(|x| x * 0.5)),
    };
    let couplings = match s.get("couplings") {
        Some(Value::Array(list)) if !list.is_empty() => list.iter().map(|v| s.matrix("couplings", Some(v))).collect(),
        Some(_) => {
            s.err("couplings", "must be a non-empty list of matrices");
            None
        }
        None => Some(vec![sx.mapv(|x| x * 3.0)]),
    };
    let observable = match s.get("observable") {
        Some(v) => s.matrix("observable", Some(v)),
        None => Some(sz.clone()),
    };
    let level_noise = match s
        .get("noise")
        .and_then(|n| n.get("kind"))
        .and_then(|k| k.as_str())
        .unwrap_or("ou")
    {
        "white" => {
            let mut n = Section::new(s.value.unwrap_or(&Value::Null), "noise");
            let sigma = n.positive("sigma", 1.0);
            let tau_c = n.positive("tau_c", 1.0);
            n.errors
                .iter()
                .for_each(|e| errors.push(FieldError::new(format!("levels.{}", e.field), e.message.clone())));
            LevelNoise::White { sigma, tau_c }
        }
        "ou" => {
            let mut n = Section::new(s.value.unwrap_or(&Value::Null), "noise");
            let sigma = n.positive("sigma", 1.0);
            let tau = n.positive("tau", 1.0);
            n.errors
                .iter()
                .for_each(|e| errors.push(FieldError::new(format!("levels.{}", e.field), e.message.clone())));
            LevelNoise::OrnsteinUhlenbeck { sigma, tau }
        }
        other => {
            s.err("noise.kind", format!("unknown noise {other:?}; expected ou or white"));
            LevelNoise::OrnsteinUhlenbeck { sigma: 1.0, tau: 1.0 }
        }
    };
    let alpha = s.number("alpha", 0.08);
    if alpha < 0.0 {
        s.err("alpha", "must be >= 0");
    }
    let dt = s.positive("dt", 0.01);
    let steps = s.count("steps", 200);
    let stride = s.count("stride", 20);
    if !steps.is_multiple_of(stride) {
        s.err("stride", "must divide levels.steps");
    }
    let antithetic = s.flag("antithetic", true);
    let psi0 = s.numbers("psi0");
    s.finish(&mut errors);
    fail_on(errors.clone())?;
    let (h0, couplings, observable) = (
        h0.expect("validated"),
        couplings.expect("validated"),
        observable.expect("validated"),
    );
    let d = h0.nrows();
    let psi0 = psi0.unwrap_or_else(|| (0..d).map(|k| if k == 0 { 1.0 } else { 0.0 }).collect());
    let mut shape = Vec::new();
    if couplings.iter().any(|v: &CMatrix| v.nrows() != d) {
        shape.push(FieldError::new("levels.couplings", "dimension differs from levels.h0"));
    }
    if observable.nrows() != d {
        shape.push(FieldError::new("levels.observable", "dimension differs from levels.h0"));
    }
    if psi0.len() != d || psi0.iter().all(|x| *x == 0.0) {
        shape.push(FieldError::new(
            "levels.psi0",
            "must be a non-zero vector matching levels.h0",
        ));
    }
    fail_on(shape)?;
    Ok(LevelSetup {
        base: LevelEnsembleConfig {
            h0,
            couplings,
            alpha,
            noise: level_noise,
            dt,
            steps,
            snapshot_stride: stride,
            psi0: Array1::from_iter(psi0.into_iter().map(c)),
            antithetic,
            control_variate: None,
        },
        observable,
        stride,
    })
}

fn cmd_cumulant(loaded: &Loaded) -> Result<Vec<Output>> {
    let setup = level_setup(&loaded.raw)?;
    let base = &setup.base;
    let a = hamiltonian_superop(&base.h0);
    let k = base.couplings.len();
    let coupling = StochasticCoupling::from_hamiltonians(
        base.alpha,
        &base.couplings,
        Array2::from_diag_elem(k, base.noise.sigma()),
        base.noise.correlation(),
    )?;
    let norm = base.psi0.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let psi = base.psi0.mapv(|x| x / norm);
    let d = psi.len();
    let rho0 = Array2::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj());
    let times: Vec<f64> = (0..=base.steps)
        .step_by(setup.stride)
        .map(|s| s as f64 * base.dt)
        .collect();
    let second = evolve_second_order(&a, &coupling, &rho0, &times, 1e-10)?;
    let markov = markovian_generator(&a, &coupling)?;
    let v0 = linalg::vectorize(&rho0);
    let obs = |rho: &CMatrix| linalg::trace(&setup.observable.dot(rho)).re;
    let mut body = String::from("t,observable_second_order,observable_markovian\n");
    for (t, rho) in times.iter().zip(&second) {
        let prop = linalg::expm(&markov.generator.mapv(|v| v * *t));
        let rm = linalg::unvectorize(&prop.dot(&v0), d);
        writeln!(body, "{},{},{}", f(*t), f(obs(rho)), f(obs(&rm))).unwrap();
    }
    writeln!(body, "# regime_ratio: {}", f(markov.regime_ratio)).unwrap();
    Ok(vec![Output::Csv {
        name: "cumulant.csv".into(),
        body,
    }])
}

fn cmd_scaling(loaded: &Loaded, samples: Option<usize>, alphas: Option<Vec<f64>>, seed: u64) -> Result<Vec<Output>> {
    let setup = level_setup(&loaded.raw)?;
    let mut errors = Vec::new();
    let mut s = Section::new(&loaded.raw, "scaling");
    let alphas = alphas
        .or_else(|| s.numbers("alphas"))
        .unwrap_or_else(|| vec![0.04, 0.08, 0.16]);
    let samples = samples.unwrap_or_else(|| s.count("samples", 100_000));
    let use_cv = s.flag("control_variate", true);
    let rtol = s.positive("rtol", 1e-10);
    s.finish(&mut errors);
    if alphas.iter().any(|a| !(*a > 0.0 && a.is_finite())) {
        errors.push(FieldError::new("scaling.alphas", "every alpha must be finite and > 0"));
    }
    if samples == 0 {
        errors.push(FieldError::new("--samples", "must be >= 1"));
    }
    if use_cv && setup.base.couplings.len() != 1 {
        errors.push(FieldError::new(
            "scaling.control_variate",
            "requires exactly one coupling",
        ));
    }
    fail_on(errors)?;
    let cfg = ScalingConfig {
        base: setup.base,
        observable: setup.observable,
        samples,
        seed,
        use_control_variate: use_cv,
        rtol,
    };
    let table = alpha_scaling_study(&cfg, &alphas)?;
    Ok(vec![Output::Json {
        name: "scaling.json".into(),
        body: json!({ "scaling": to_value(&table) }),
    }])
}
