// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Monte Carlo trajectory ensembles under sampled noise Hamiltonians.
//!
//! Trajectories are grouped in fixed-size chunks; chunk statistics are
//! merged by a pairwise tree in chunk order, so results are bitwise
//! independent of the number of worker threads.

use std::time::Instant;

use ndarray::{Array1, Array2};
use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::linalg::{self, commutator, dagger, eigh};
use crate::model::{Basis, Grid1D, MassSpec, NoiseSpec, PureState};
use crate::noise_field::{FieldSampler, FieldStream, LambdaMode};
use crate::{CMatrix, C64};

/// Trajectories per reduction chunk.
pub const CHUNK: usize = 32;
/// Maximum number of batch means retained for resampling error estimates.
pub const BATCHES: usize = 16;
/// Largest grid for the dense full-coupling mode.
pub const FULL_MODE_MAX_N: usize = 128;
pub const NORM_TOL: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CouplingMode {
    /// `√(2w₀₀) M c² h⁰⁰(x̂)`; diagonal, any grid size.
    PositionOnly,
    /// Position term plus the kinetic anticommutators
    /// `√(2w₀₀){h⁰⁰, K}`, `√(2w₀ᵢ)(c/2){h⁰ⁱ, P}`, `√(2wᵢⱼ){hⁱʲ, K}`, `K = P²/4M`.
    Full,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Observable {
    DensityMatrix,
    /// Selected entries `ρ[i, j]` in the position basis.
    Coherences(Vec<(usize, usize)>),
    /// Lag sums `Σ_i ρ[i, i + d mod N]` for each lag `d`.
    LagCoherences(Vec<usize>),
}

impl Observable {
    fn len(&self, n: usize) -> usize {
        match self {
            Observable::DensityMatrix => n * n,
            Observable::Coherences(v) => v.len(),
            Observable::LagCoherences(v) => v.len(),
        }
    }

    fn eval(&self, psi: &Array1<C64>, out: &mut Vec<C64>) {
        let n = psi.len();
        match self {
            Observable::DensityMatrix => {
                for i in 0..n {
                    for j in 0..n {
                        out.push(psi[i] * psi[j].conj());
                    }
                }
            }
            Observable::Coherences(pairs) => out.extend(pairs.iter().map(|&(i, j)| psi[i] * psi[j].conj())),
            Observable::LagCoherences(lags) => {
                for &d in lags {
                    out.push((0..n).map(|i| psi[i] * psi[(i + d) % n].conj()).sum());
                }
            }
        }
    }
}

/// Running mean and centred second moments (real and imaginary parts).
#[derive(Debug, Clone)]
struct Accumulator {
    n: f64,
    mean: Vec<C64>,
    m2_re: Vec<f64>,
    m2_im: Vec<f64>,
}

impl Accumulator {
    fn new(len: usize) -> Self {
        Self {
            n: 0.0,
            mean: vec![C64::new(0.0, 0.0); len],
            m2_re: vec![0.0; len],
            m2_im: vec![0.0; len],
        }
    }

    fn push(&mut self, x: &[C64]) {
        self.n += 1.0;
        for k in 0..x.len() {
            let d = x[k] - self.mean[k];
            self.mean[k] += d / self.n;
            let d2 = x[k] - self.mean[k];
            self.m2_re[k] += d.re * d2.re;
            self.m2_im[k] += d.im * d2.im;
        }
    }

    fn merge(a: Self, b: Self) -> Self {
        if a.n == 0.0 {
            return b;
        }
        if b.n == 0.0 {
            return a;
        }
        let n = a.n + b.n;
        let mut out = Self::new(a.mean.len());
        out.n = n;
        for k in 0..a.mean.len() {
            let d = b.mean[k] - a.mean[k];
            out.mean[k] = a.mean[k] + d * (b.n / n);
            out.m2_re[k] = a.m2_re[k] + b.m2_re[k] + d.re * d.re * a.n * b.n / n;
            out.m2_im[k] = a.m2_im[k] + b.m2_im[k] + d.im * d.im * a.n * b.n / n;
        }
        out
    }

    fn tree(mut parts: Vec<Self>) -> Self {
        while parts.len() > 1 {
            let mut next = Vec::with_capacity(parts.len().div_ceil(2));
            let mut it = parts.into_iter();
            while let Some(a) = it.next() {
                match it.next() {
                    Some(b) => next.push(Self::merge(a, b)),
                    None => next.push(a),
                }
            }
            parts = next;
        }
        parts.pop().expect("at least one chunk")
    }

    fn std_errors(&self) -> (Vec<f64>, Vec<f64>) {
        if self.n < 2.0 {
            let nan = vec![f64::NAN; self.mean.len()];
            return (nan.clone(), nan);
        }
        let s = 1.0 / ((self.n - 1.0) * self.n);
        (
            self.m2_re.iter().map(|v| (v * s).sqrt()).collect(),
            self.m2_im.iter().map(|v| (v * s).sqrt()).collect(),
        )
    }
}

/// Runs `n` samples through `sample`, which writes one flat sample per call.
/// Returns the consecutive-chunk batch accumulators.
fn run_chunked<F>(n: usize, len: usize, sample: F) -> Result<Vec<Accumulator>>
where
    F: Fn(usize, &mut Vec<C64>) -> Result<()> + Sync,
{
    let chunks: Vec<usize> = (0..n.div_ceil(CHUNK)).collect();
    let parts = chunks
        .par_iter()
        .map(|&c| {
            let mut acc = Accumulator::new(len);
            let mut buf = Vec::with_capacity(len);
            for idx in c * CHUNK..((c + 1) * CHUNK).min(n) {
                buf.clear();
                sample(idx, &mut buf)?;
                acc.push(&buf);
            }
            Ok(acc)
        })
        .collect::<Result<Vec<_>>>()?;
    let per = parts.len().div_ceil(BATCHES);
    let mut batches = Vec::new();
    let mut it = parts.into_iter().peekable();
    while it.peek().is_some() {
        batches.push(Accumulator::tree(it.by_ref().take(per).collect()));
    }
    Ok(batches)
}

/// Mean of one batch of trajectories.
#[derive(Debug, Clone, PartialEq)]
pub struct BatchMean {
    pub count: usize,
    pub values: Vec<Array1<C64>>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct WallStats {
    pub total_seconds: f64,
    pub per_trajectory_seconds: f64,
}

/// Ensemble means with standard errors at each snapshot. `values[s]` holds
/// the flattened observable (row-major `ρ` for [`Observable::DensityMatrix`]).
#[derive(Debug, Clone)]
pub struct EnsembleResult {
    pub times: Vec<f64>,
    pub values: Vec<Array1<C64>>,
    pub std_err_re: Vec<Array1<f64>>,
    pub std_err_im: Vec<Array1<f64>>,
    pub n_traj: usize,
    pub master_seed: u64,
    pub wall: WallStats,
    /// Batch means in trajectory order; empty for the full density matrix.
    pub batches: Vec<BatchMean>,
}

impl EnsembleResult {
    fn from_batches(
        batches: Vec<Accumulator>,
        times: Vec<f64>,
        per: usize,
        n_traj: usize,
        seed: u64,
        t0: Instant,
        keep: bool,
    ) -> Self {
        let split = |v: &[C64]| v.chunks(per).map(|c| Array1::from_vec(c.to_vec())).collect::<Vec<_>>();
        let kept = if keep {
            batches
                .iter()
                .map(|b| BatchMean {
                    count: b.n as usize,
                    values: split(&b.mean),
                })
                .collect()
        } else {
            Vec::new()
        };
        let acc = Accumulator::tree(batches);
        let (se_re, se_im) = acc.std_errors();
        let splitf = |v: &[f64]| v.chunks(per).map(|c| Array1::from_vec(c.to_vec())).collect::<Vec<_>>();
        let total = t0.elapsed().as_secs_f64();
        Self {
            values: split(&acc.mean),
            std_err_re: splitf(&se_re),
            std_err_im: splitf(&se_im),
            times,
            n_traj,
            master_seed: seed,
            wall: WallStats {
                total_seconds: total,
                per_trajectory_seconds: total / n_traj.max(1) as f64,
            },
            batches: kept,
        }
    }

    /// `√(se_re² + se_im²)` per entry.
    pub fn std_error(&self, snapshot: usize) -> Array1<f64> {
        let a = &self.std_err_re[snapshot];
        let b = &self.std_err_im[snapshot];
        Array1::from_shape_fn(a.len(), |k| a[k].hypot(b[k]))
    }

    /// Mean density matrix, when the observable is the full matrix.
    pub fn density_matrix(&self, snapshot: usize) -> Option<CMatrix> {
        let v = &self.values[snapshot];
        let n = (v.len() as f64).sqrt().round() as usize;
        (n * n == v.len()).then(|| Array2::from_shape_vec((n, n), v.to_vec()).expect("square"))
    }
}

/// Grid ensemble configuration.
#[derive(Debug, Clone)]
pub struct EnsembleConfig {
    pub noise: NoiseSpec,
    pub mass: MassSpec,
    pub grid: Grid1D,
    pub dt: f64,
    pub steps: usize,
    pub snapshot_stride: usize,
    pub kinetic: bool,
    pub mode: CouplingMode,
    pub lambda_mode: LambdaMode,
    pub observable: Observable,
    /// Position-basis initial state.
    pub initial: PureState,
}

impl EnsembleConfig {
    pub fn snapshot_times(&self) -> Vec<f64> {
        (0..=self.steps)
            .step_by(self.snapshot_stride)
            .map(|s| s as f64 * self.dt)
            .collect()
    }
}

/// Precomputed single-trajectory stepping data.
pub struct Stepper {
    cfg: EnsembleConfig,
    samplers: Vec<(FieldSampler, Component)>,
    kinetic_phases: Option<Array1<C64>>,
    basis: crate::linalg::SpectralBasis,
    kin_h: Option<CMatrix>,
    k_op: CMatrix,
    p_op: CMatrix,
}

#[derive(Debug, Clone, Copy)]
enum Component {
    H00(f64),
    H0i(f64),
    Hij(f64),
}

impl Stepper {
    pub fn new(cfg: EnsembleConfig) -> Result<Self> {
        let n = cfg.grid.n();
        if cfg.initial.basis != Basis::Position(cfg.grid) {
            return Err(Error::BasisMismatch {
                expected: "position".into(),
                found: cfg.initial.basis.name().into(),
            });
        }
        if cfg.snapshot_stride == 0 || !cfg.steps.is_multiple_of(cfg.snapshot_stride) {
            return Err(Error::Domain("snapshot_stride must divide steps".into()));
        }
        if cfg.mode == CouplingMode::Full && n > FULL_MODE_MAX_N {
            return Err(Error::Capacity(format!(
                "full coupling mode limited to N <= {FULL_MODE_MAX_N}, got {n}"
            )));
        }
        let m = cfg.mass.m;
        let energies = cfg.grid.kinetic_energies(m);
        if cfg.kinetic && cfg.mode == CouplingMode::PositionOnly {
            let emax = energies.iter().cloned().fold(0.0, f64::max);
            let lim = 0.1 / emax;
            if cfg.dt > lim {
                return Err(Error::StabilityBound {
                    dt: cfg.dt,
                    suggested_dt: lim,
                });
            }
        }
        let w = cfg.noise.weights;
        let mut comps = vec![Component::H00(w.h00)];
        if cfg.mode == CouplingMode::Full {
            comps.push(Component::H0i(w.h0i));
            comps.push(Component::Hij(w.hij));
        }
        let samplers = comps
            .into_iter()
            .filter(|c| match c {
                Component::H00(v) | Component::H0i(v) | Component::Hij(v) => *v != 0.0,
            })
            .map(|c| FieldSampler::new(&cfg.noise, &cfg.mass, &cfg.grid, cfg.dt, cfg.lambda_mode).map(|s| (s, c)))
            .collect::<Result<Vec<_>>>()?;
        let kinetic_phases = (cfg.kinetic && cfg.mode == CouplingMode::PositionOnly)
            .then(|| energies.mapv(|e| C64::from_polar(1.0, -e * cfg.dt)));
        let kin_h =
            (cfg.kinetic && cfg.mode == CouplingMode::Full).then(|| cfg.grid.momentum_function(|p| p * p / (2.0 * m)));
        let (k_op, p_op) = if cfg.mode == CouplingMode::Full {
            (
                cfg.grid.momentum_function(|p| p * p / (4.0 * m)),
                cfg.grid.momentum_matrix(),
            )
        } else {
            (Array2::zeros((0, 0)), Array2::zeros((0, 0)))
        };
        Ok(Self {
            basis: cfg.grid.spectral(),
            cfg,
            samplers,
            kinetic_phases,
            kin_h,
            k_op,
            p_op,
        })
    }

    pub fn config(&self) -> &EnsembleConfig {
        &self.cfg
    }

    /// Number of independent field components drawn per step.
    pub fn components(&self) -> usize {
        self.samplers.len()
    }

    fn sample_fields(&self, streams: &mut [FieldStream]) -> Vec<Array1<f64>> {
        self.samplers
            .iter()
            .zip(streams.iter_mut())
            .map(|((s, _), st)| s.sample_step(st))
            .collect()
    }

    fn streams(&self, seed: u64, index: usize) -> Vec<FieldStream> {
        let k = self.samplers.len().max(1) as u64;
        (0..self.samplers.len() as u64)
            .map(|c| FieldStream::new(seed, index as u64 * k + c))
            .collect()
    }

    /// One step of `exp(-i H dt)` with `H = H_kin + V[fields]`; `fields` holds
    /// one grid field per active component, in the order h⁰⁰, h⁰ⁱ, hⁱʲ.
    pub fn trajectory_step(&self, psi: &PureState, fields: &[Array1<f64>]) -> Result<PureState> {
        let mut v = psi.vector.clone();
        self.step_in_place(&mut v, fields)?;
        Ok(PureState {
            vector: v,
            basis: psi.basis,
        })
    }

    fn step_in_place(&self, psi: &mut Array1<C64>, fields: &[Array1<f64>]) -> Result<()> {
        if fields.len() != self.samplers.len() {
            return Err(Error::Domain(format!(
                "expected {} field components, got {}",
                self.samplers.len(),
                fields.len()
            )));
        }
        let dt = self.cfg.dt;
        let m = self.cfg.mass.m;
        match self.cfg.mode {
            CouplingMode::PositionOnly => {
                let pot = match self.samplers.first() {
                    Some((_, Component::H00(w))) => {
                        let c = (2.0 * w).sqrt() * m;
                        Some(fields[0].mapv(|h| c * h))
                    }
                    _ => None,
                };
                match &self.kinetic_phases {
                    None => {
                        if let Some(pot) = &pot {
                            psi.zip_mut_with(pot, |p, &u| *p *= C64::from_polar(1.0, -u * dt));
                        }
                    }
                    Some(ph) => {
                        if let Some(pot) = &pot {
                            psi.zip_mut_with(pot, |p, &u| *p *= C64::from_polar(1.0, -u * dt * 0.5));
                        }
                        let s = psi.as_slice_mut().expect("contiguous");
                        self.basis.forward(s);
                        for (x, f) in s.iter_mut().zip(ph) {
                            *x *= f;
                        }
                        self.basis.inverse(s);
                        if let Some(pot) = &pot {
                            psi.zip_mut_with(pot, |p, &u| *p *= C64::from_polar(1.0, -u * dt * 0.5));
                        }
                    }
                }
            }
            CouplingMode::Full => {
                let n = psi.len();
                let mut h = self.kin_h.clone().unwrap_or_else(|| Array2::zeros((n, n)));
                for ((_, comp), f) in self.samplers.iter().zip(fields) {
                    let d: Array1<C64> = f.mapv(|x| C64::new(x, 0.0));
                    let anti = |op: &CMatrix| linalg::diag_left(&d, op) + linalg::diag_right(op, &d);
                    match *comp {
                        Component::H00(w) => {
                            let c = (2.0 * w).sqrt();
                            let mut t = anti(&self.k_op);
                            for i in 0..n {
                                t[(i, i)] += d[i] * m;
                            }
                            h.scaled_add(C64::new(c, 0.0), &t);
                        }
                        Component::H0i(w) => h.scaled_add(C64::new((2.0 * w).sqrt() * 0.5, 0.0), &anti(&self.p_op)),
                        Component::Hij(w) => h.scaled_add(C64::new((2.0 * w).sqrt(), 0.0), &anti(&self.k_op)),
                    }
                }
                let u = linalg::unitary(&h, dt);
                *psi = u.dot(&*psi);
            }
        }
        let norm = psi.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if (norm - 1.0).abs() > NORM_TOL {
            return Err(Error::Numerical {
                message: format!("norm drift {:e}; refine dt below {}", norm - 1.0, dt / 2.0),
                residual: (norm - 1.0).abs(),
            });
        }
        Ok(())
    }

    fn run_one(&self, seed: u64, index: usize, mut emit: impl FnMut(usize, &Array1<C64>)) -> Result<()> {
        let mut streams = self.streams(seed, index);
        let mut psi = self.cfg.initial.vector.clone();
        emit(0, &psi);
        for step in 1..=self.cfg.steps {
            let fields = self.sample_fields(&mut streams);
            self.step_in_place(&mut psi, &fields)?;
            if step % self.cfg.snapshot_stride == 0 {
                emit(step, &psi);
            }
        }
        Ok(())
    }
}

/// Ensemble average of the configured observable over `n_traj` trajectories.
pub fn run_ensemble(cfg: &EnsembleConfig, n_traj: usize, master_seed: u64) -> Result<EnsembleResult> {
    let t0 = Instant::now();
    if n_traj == 0 {
        return Err(Error::Domain("n_traj must be positive".into()));
    }
    let stepper = Stepper::new(cfg.clone())?;
    let times = cfg.snapshot_times();
    let per = cfg.observable.len(cfg.grid.n());
    let len = per * times.len();
    let batches = run_chunked(n_traj, len, |idx, buf| {
        stepper
            .run_one(master_seed, idx, |_, psi| cfg.observable.eval(psi, buf))
            .map_err(|e| Error::TrajectoryFailed {
                index: idx,
                seed: master_seed,
                reason: e.to_string(),
            })
    })?;
    let keep = cfg.observable != Observable::DensityMatrix;
    Ok(EnsembleResult::from_batches(
        batches,
        times,
        per,
        n_traj,
        master_seed,
        t0,
        keep,
    ))
}

/// Full pure-state record of one trajectory, `(step, time, ψ)` per snapshot.
pub fn replay_trajectory(cfg: &EnsembleConfig, master_seed: u64, index: usize) -> Result<Vec<(usize, f64, PureState)>> {
    let stepper = Stepper::new(cfg.clone())?;
    let mut out = Vec::new();
    stepper.run_one(master_seed, index, |step, psi| {
        out.push((
            step,
            step as f64 * cfg.dt,
            PureState {
                vector: psi.clone(),
                basis: cfg.initial.basis,
            },
        ))
    })?;
    Ok(out)
}

/// Scalar noise driving an N-level system, with `E[h(t)h(t - s)] = σ g(s)/2`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum LevelNoise {
    /// `g(s) = τ_c δ(s)`: independent steps with variance `σ τ_c / dt`.
    White { sigma: f64, tau_c: f64 },
    /// Ornstein-Uhlenbeck, `g(s) = e^{-s/τ}`, sampled exactly.
    OrnsteinUhlenbeck { sigma: f64, tau: f64 },
}

impl LevelNoise {
    pub fn correlation(&self) -> crate::cumulant::Correlation {
        match *self {
            LevelNoise::White { tau_c, .. } => crate::cumulant::Correlation::Delta { tau_c },
            LevelNoise::OrnsteinUhlenbeck { tau, .. } => crate::cumulant::Correlation::Exponential { tau_c: tau },
        }
    }

    pub fn sigma(&self) -> f64 {
        match *self {
            LevelNoise::White { sigma, .. } | LevelNoise::OrnsteinUhlenbeck { sigma, .. } => sigma,
        }
    }

    /// Covariance of step-averaged values `E[h̄_k h̄_l]` at `|k - l| = m`.
    fn step_covariance(&self, dt: f64, m: usize) -> f64 {
        match *self {
            LevelNoise::White { sigma, tau_c } => {
                if m == 0 {
                    sigma * tau_c / dt
                } else {
                    0.0
                }
            }
            LevelNoise::OrnsteinUhlenbeck { sigma, tau } => {
                let var = 0.5 * sigma;
                let a = (-dt / tau).exp();
                let c = |k: i64| var * a.powi(k.unsigned_abs() as i32);
                let m = m as i64;
                0.25 * (2.0 * c(m) + c(m + 1) + c(m - 1))
            }
        }
    }
}

/// N-level ensemble `H(t) = H₀ + α Σ_i h_i(t) V_i` with independent,
/// identically distributed noises `h_i`.
#[derive(Debug, Clone)]
pub struct LevelEnsembleConfig {
    pub h0: CMatrix,
    pub couplings: Vec<CMatrix>,
    pub alpha: f64,
    pub noise: LevelNoise,
    pub dt: f64,
    pub steps: usize,
    pub snapshot_stride: usize,
    pub psi0: Array1<C64>,
    /// Pair each noise path with its negation.
    pub antithetic: bool,
    /// Observable at the final time estimated with a second-order control
    /// variate; requires a single coupling.
    pub control_variate: Option<CMatrix>,
}

#[derive(Debug, Clone)]
pub struct LevelEnsembleResult {
    pub ensemble: EnsembleResult,
    /// `(mean, std_err)` of the control-variate estimate of the observable at the final time.
    pub cv_estimate: Option<(f64, f64)>,
    /// `(mean, std_err)` of the plain estimate of the same observable.
    pub plain_estimate: Option<(f64, f64)>,
}

struct LevelPrep {
    vt: Vec<CMatrix>,
    ot: CMatrix,
    rho0: CMatrix,
    ey: f64,
}

fn step_unitary(h: &CMatrix, dt: f64) -> CMatrix {
    if h.nrows() == 2 {
        let a0 = 0.5 * (h[(0, 0)].re + h[(1, 1)].re);
        let bz = 0.5 * (h[(0, 0)].re - h[(1, 1)].re);
        let bx = h[(0, 1)].re;
        let by = -h[(0, 1)].im;
        let b = (bx * bx + by * by + bz * bz).sqrt();
        let (c, s) = ((b * dt).cos(), if b > 0.0 { (b * dt).sin() / b } else { dt });
        let g = C64::from_polar(1.0, -a0 * dt);
        let i = C64::new(0.0, 1.0);
        let u = [
            [C64::new(c, 0.0) - i * s * bz, -i * s * C64::new(bx, -by)],
            [-i * s * C64::new(bx, by), C64::new(c, 0.0) + i * s * bz],
        ];
        return Array2::from_shape_fn((2, 2), |(r, k)| g * u[r][k]);
    }
    linalg::unitary(h, dt)
}

impl LevelEnsembleConfig {
    fn validate(&self) -> Result<()> {
        let d = self.h0.nrows();
        if self.h0.dim() != (d, d) || self.couplings.iter().any(|v| v.dim() != (d, d)) || self.psi0.len() != d {
            return Err(Error::Domain("inconsistent dimensions in level ensemble".into()));
        }
        if !(self.dt > 0.0) || self.snapshot_stride == 0 || !self.steps.is_multiple_of(self.snapshot_stride) {
            return Err(Error::Domain(
                "dt must be positive and snapshot_stride must divide steps".into(),
            ));
        }
        if self.control_variate.is_some() && self.couplings.len() != 1 {
            return Err(Error::Unsupported(
                "control variate requires exactly one coupling".into(),
            ));
        }
        Ok(())
    }

    fn prep(&self, o: &CMatrix) -> LevelPrep {
        let dt = self.dt;
        let u0 = |t: f64| linalg::unitary(&self.h0, t);
        let v = &self.couplings[0];
        let vt: Vec<CMatrix> = (0..self.steps)
            .map(|k| {
                let u = u0((k as f64 + 0.5) * dt);
                dagger(&u).dot(v).dot(&u)
            })
            .collect();
        let ut = u0(self.steps as f64 * dt);
        let ot = dagger(&ut).dot(o).dot(&ut);
        let norm = self.psi0.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let psi = self.psi0.mapv(|x| x / norm);
        let d = psi.len();
        let rho0 = Array2::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj());
        let mut ey = 0.0;
        let t2 = |a: &CMatrix, b: &CMatrix| linalg::trace(&ot.dot(&commutator(a, &commutator(b, &rho0)))).re;
        for k in 0..self.steps {
            for l in 0..=k {
                let c = self.noise.step_covariance(dt, k - l);
                if c == 0.0 {
                    continue;
                }
                let w = if l < k { 1.0 } else { 0.5 };
                ey += w * c * t2(&vt[k], &vt[l]);
            }
        }
        LevelPrep {
            vt,
            ot,
            rho0,
            ey: -dt * dt * ey,
        }
    }

    fn noise_path(&self, seed: u64, index: usize, channel: usize) -> Vec<f64> {
        let mut st = FieldStream::new(seed, (index * self.couplings.len() + channel) as u64);
        let dt = self.dt;
        match self.noise {
            LevelNoise::White { .. } => {
                let sd = self.noise.step_covariance(dt, 0).sqrt();
                (0..self.steps)
                    .map(|k| {
                        let z: f64 = st.at_step(k as u64).sample(StandardNormal);
                        sd * z
                    })
                    .collect()
            }
            LevelNoise::OrnsteinUhlenbeck { sigma, tau } => {
                let var = 0.5 * sigma;
                let a = (-dt / tau).exp();
                let b = (var * (1.0 - a * a)).sqrt();
                let z0: f64 = st.at_step(0).sample(StandardNormal);
                let mut h = var.sqrt() * z0;
                (0..self.steps)
                    .map(|k| {
                        let z: f64 = st.at_step(k as u64 + 1).sample(StandardNormal);
                        let hn = a * h + b * z;
                        let avg = 0.5 * (h + hn);
                        h = hn;
                        avg
                    })
                    .collect()
            }
        }
    }

    fn propagate(&self, paths: &[Vec<f64>], sign: f64, mut emit: impl FnMut(usize, &Array1<C64>)) -> Array1<C64> {
        let norm = self.psi0.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
        let mut psi = self.psi0.mapv(|x| x / norm);
        emit(0, &psi);
        for k in 0..self.steps {
            let mut h = self.h0.clone();
            for (v, p) in self.couplings.iter().zip(paths) {
                h.scaled_add(C64::new(sign * self.alpha * p[k], 0.0), v);
            }
            psi = step_unitary(&h, self.dt).dot(&psi);
            if (k + 1) % self.snapshot_stride == 0 {
                emit(k + 1, &psi);
            }
        }
        psi
    }
}

fn expectation(o: &CMatrix, psi: &Array1<C64>) -> f64 {
    psi.iter()
        .enumerate()
        .map(|(i, a)| a.conj() * o.row(i).dot(psi))
        .sum::<C64>()
        .re
}

/// Ensemble over `n` samples (pairs when antithetic) of the N-level model;
/// snapshot values are the row-major mean density matrices.
pub fn run_level_ensemble(cfg: &LevelEnsembleConfig, n: usize, master_seed: u64) -> Result<LevelEnsembleResult> {
    let t0 = Instant::now();
    cfg.validate()?;
    if n == 0 {
        return Err(Error::Domain("sample count must be positive".into()));
    }
    let d = cfg.h0.nrows();
    let times: Vec<f64> = (0..=cfg.steps)
        .step_by(cfg.snapshot_stride)
        .map(|s| s as f64 * cfg.dt)
        .collect();
    let per = d * d;
    let extra = if cfg.control_variate.is_some() { 2 } else { 0 };
    let len = per * times.len() + extra;
    let prep = cfg.control_variate.as_ref().map(|o| cfg.prep(o));
    let batches = run_chunked(n, len, |idx, buf| {
        let paths: Vec<Vec<f64>> = (0..cfg.couplings.len())
            .map(|c| cfg.noise_path(master_seed, idx, c))
            .collect();
        let signs: &[f64] = if cfg.antithetic { &[1.0, -1.0] } else { &[1.0] };
        let w = 1.0 / signs.len() as f64;
        buf.resize(len, C64::new(0.0, 0.0));
        let mut finals = Vec::new();
        for &sgn in signs {
            let mut snap = 0;
            let last = cfg.propagate(&paths, sgn, |_, psi| {
                let base = snap * per;
                for i in 0..d {
                    for j in 0..d {
                        buf[base + i * d + j] += psi[i] * psi[j].conj() * w;
                    }
                }
                snap += 1;
            });
            finals.push(last);
        }
        if let (Some(o), Some(p)) = (&cfg.control_variate, &prep) {
            let plain = finals.iter().map(|f| expectation(o, f)).sum::<f64>() * w;
            let hb = &paths[0];
            let mut wk = Array2::<C64>::zeros((d, d));
            let mut y = 0.0;
            for k in 0..cfg.steps {
                let mut inner = wk.clone();
                inner.scaled_add(C64::new(0.5 * hb[k], 0.0), &p.vt[k]);
                let c2 = commutator(&p.vt[k], &commutator(&inner, &p.rho0));
                y += hb[k] * linalg::trace(&p.ot.dot(&c2)).re;
                wk.scaled_add(C64::new(hb[k], 0.0), &p.vt[k]);
            }
            y *= -cfg.dt * cfg.dt;
            let est = plain - cfg.alpha * cfg.alpha * (y - p.ey);
            buf[len - 2] = C64::new(est, 0.0);
            buf[len - 1] = C64::new(plain, 0.0);
        }
        Ok(())
    })?;
    let acc = Accumulator::tree(batches.clone());
    let (se, _) = acc.std_errors();
    let (cv_estimate, plain_estimate) = if extra > 0 {
        (
            Some((acc.mean[len - 2].re, se[len - 2])),
            Some((acc.mean[len - 1].re, se[len - 1])),
        )
    } else {
        (None, None)
    };
    let trimmed = batches
        .into_iter()
        .map(|mut b| {
            b.mean.truncate(len - extra);
            b.m2_re.truncate(len - extra);
            b.m2_im.truncate(len - extra);
            b
        })
        .collect();
    let trajectories = if cfg.antithetic { 2 * n } else { n };
    Ok(LevelEnsembleResult {
        ensemble: EnsembleResult::from_batches(trimmed, times, per, trajectories, master_seed, t0, true),
        cv_estimate,
        plain_estimate,
    })
}

/// Smallest eigenvalue of the hermitian part, a positivity diagnostic for ensemble means.
pub fn mean_min_eigenvalue(rho: &CMatrix) -> f64 {
    eigh(rho).0[0]
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cumulant::{evolve_second_order, hamiltonian_superop, StochasticCoupling};
    use crate::kernels::{position_rate_closed_form, ClosedForm};
    use crate::model::{ComponentWeights, KernelKind};

    fn noise(alpha: f64) -> NoiseSpec {
        NoiseSpec::new(
            alpha,
            1.0,
            KernelKind::GaussianL { l: 1.0 },
            ComponentWeights::default(),
        )
        .unwrap()
    }

    fn cfg(grid: Grid1D, alpha: f64, kinetic: bool, mode: CouplingMode, obs: Observable) -> EnsembleConfig {
        EnsembleConfig {
            noise: noise(alpha),
            mass: MassSpec::point(1.0).unwrap(),
            grid,
            dt: 0.5,
            steps: 4,
            snapshot_stride: 1,
            kinetic,
            mode,
            lambda_mode: LambdaMode::Saturated,
            observable: obs,
            initial: PureState::cat(grid, 2.0, 0.7).unwrap(),
        }
    }

    #[test]
    fn single_trajectory_is_pure() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let c = cfg(grid, 0.5, false, CouplingMode::PositionOnly, Observable::DensityMatrix);
        let r = run_ensemble(&c, 1, 3).unwrap();
        let rho = r.density_matrix(4).unwrap();
        let purity: f64 = rho.dot(&rho).diag().iter().map(|v| v.re).sum();
        assert!((purity - 1.0).abs() < 1e-12);
        assert!(r.std_err_re[0][0].is_nan());
    }

    #[test]
    fn zero_field_is_free_and_uniform_field_is_phase() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let mut c = cfg(grid, 0.5, true, CouplingMode::PositionOnly, Observable::DensityMatrix);
        c.dt = 0.004;
        let st = Stepper::new(c.clone()).unwrap();
        let psi = c.initial.clone();
        let free = st.trajectory_step(&psi, &[Array1::zeros(16)]).unwrap();
        let u = linalg::unitary(&grid.momentum_function(|p| p * p / 2.0), 0.004);
        let expect = u.dot(&psi.vector);
        assert!((&free.vector - &expect).iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-12);
        let c2 = cfg(grid, 0.5, false, CouplingMode::PositionOnly, Observable::DensityMatrix);
        let st2 = Stepper::new(c2).unwrap();
        let out = st2.trajectory_step(&psi, &[Array1::from_elem(16, 3.0)]).unwrap();
        for (a, b) in out.vector.iter().zip(psi.vector.iter()) {
            assert!((a.norm() - b.norm()).abs() < 1e-14);
        }
    }

    #[test]
    fn frozen_field_matches_dense_exponential() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let field: Array1<f64> = grid.positions().mapv(|x| 0.3 * (0.4 * x).sin());
        let t = 0.2;
        let h = grid.momentum_function(|p| p * p / 2.0)
            + Array2::from_diag(&field.mapv(|f| C64::new(2f64.sqrt() * f, 0.0)));
        let psi0 = PureState::gaussian(grid, 0.0, 1.5, 0.3).unwrap();
        let exact = linalg::unitary(&h, t).dot(&psi0.vector);
        let steps = 2000;
        let mut c = cfg(grid, 0.5, true, CouplingMode::PositionOnly, Observable::DensityMatrix);
        c.dt = t / steps as f64;
        let st = Stepper::new(c.clone()).unwrap();
        let mut psi = psi0.clone();
        for _ in 0..steps {
            psi = st.trajectory_step(&psi, std::slice::from_ref(&field)).unwrap();
        }
        let err = (&psi.vector - &exact).iter().map(|v| v.norm()).fold(0.0, f64::max);
        assert!(err < 1e-8, "{err}");
        c.mode = CouplingMode::Full;
        c.dt = t;
        c.noise = NoiseSpec::new(0.5, 1.0, KernelKind::GaussianL { l: 1.0 }, ComponentWeights::default()).unwrap();
        let full = Stepper::new(c).unwrap();
        let one = full.trajectory_step(&psi0, std::slice::from_ref(&field)).unwrap();
        let k = grid.momentum_function(|p| p * p / 4.0);
        let d: Array1<C64> = field.mapv(|f| C64::new(f, 0.0));
        let anti = linalg::diag_left(&d, &k) + linalg::diag_right(&k, &d);
        let hf = &h + &anti.mapv(|v| v * 2f64.sqrt());
        let exact_full = linalg::unitary(&hf, t).dot(&psi0.vector);
        assert!((&one.vector - &exact_full).iter().map(|v| v.norm()).fold(0.0, f64::max) < 1e-10);
    }

    #[test]
    fn reproducible_across_thread_counts() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let c = cfg(grid, 0.3, true, CouplingMode::PositionOnly, Observable::DensityMatrix);
        let mut c = c;
        c.dt = 0.005;
        c.steps = 10;
        c.snapshot_stride = 5;
        let run = |threads: usize| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| run_ensemble(&c, 100, 42).unwrap())
        };
        let a = run(1);
        let b = run(3);
        assert_eq!(a.values, b.values);
        assert_eq!(a.std_err_re, b.std_err_re);
        let tr: C64 = a.density_matrix(2).unwrap().diag().iter().sum();
        assert!((tr - 1.0).norm() < 1e-10);
        let replay = replay_trajectory(&c, 42, 7).unwrap();
        assert_eq!(replay.len(), 3);
    }

    #[test]
    fn commuting_ensemble_decays_at_position_rate() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let lag = 8;
        let mut c = cfg(
            grid,
            0.3,
            false,
            CouplingMode::PositionOnly,
            Observable::LagCoherences(vec![lag]),
        );
        c.initial = PureState::uniform(grid);
        c.dt = 2.0;
        c.steps = 1;
        let r = run_ensemble(&c, 4000, 5).unwrap();
        let d = lag as f64 * grid.dx();
        let gamma = position_rate_closed_form(ClosedForm::GaussianKernel, &c.noise, &c.mass, d).unwrap();
        let expect = (-gamma * 2.0).exp();
        let got = r.values[1][0];
        let se = r.std_err_re[1][0];
        assert!((got.re - expect).abs() < 3.0 * se, "{} vs {expect} ± {se}", got.re);
    }

    #[test]
    fn standard_error_scales_with_count() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let mut c = cfg(
            grid,
            0.5,
            false,
            CouplingMode::PositionOnly,
            Observable::LagCoherences(vec![4]),
        );
        c.initial = PureState::uniform(grid);
        c.steps = 1;
        let a = run_ensemble(&c, 2000, 9).unwrap().std_err_re[1][0];
        let b = run_ensemble(&c, 4000, 10).unwrap().std_err_re[1][0];
        let ratio = a / b;
        assert!((ratio / 2f64.sqrt() - 1.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn kinetic_stepping_respects_stability_bound() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let c = cfg(grid, 0.5, true, CouplingMode::PositionOnly, Observable::DensityMatrix);
        assert!(matches!(Stepper::new(c), Err(Error::StabilityBound { .. })));
    }

    fn pauli_x() -> CMatrix {
        Array2::from_shape_vec(
            (2, 2),
            vec![
                C64::new(0.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(1.0, 0.0),
                C64::new(0.0, 0.0),
            ],
        )
        .unwrap()
    }

    fn pauli_z() -> CMatrix {
        Array2::from_diag(&Array1::from_vec(vec![C64::new(1.0, 0.0), C64::new(-1.0, 0.0)]))
    }

    #[test]
    fn two_level_dephasing_matches_cumulant() {
        let z = pauli_z();
        let v = z.mapv(|x| x / 2f64.sqrt());
        let psi0 = Array1::from_vec(vec![C64::new(1.0, 0.0), C64::new(1.0, 0.0)]);
        let noise = LevelNoise::White { sigma: 1.0, tau_c: 1.0 };
        let cfg = LevelEnsembleConfig {
            h0: z.mapv(|x| x * 0.5),
            couplings: vec![v.clone()],
            alpha: 0.5,
            noise,
            dt: 0.1,
            steps: 10,
            snapshot_stride: 10,
            psi0: psi0.clone(),
            antithetic: false,
            control_variate: None,
        };
        let r = run_level_ensemble(&cfg, 20000, 1).unwrap();
        let rho = r.ensemble.density_matrix(1).unwrap();
        let exact = 0.5 * (-0.25f64 * 1.0).exp();
        let se = r.ensemble.std_error(1)[1];
        assert!((rho[(0, 1)].norm() - exact).abs() < 3.0 * se + 1e-12);
    }

    #[test]
    fn control_variate_is_unbiased_and_reduces_variance() {
        let (om, g) = (1.0, 3.0);
        let noise = LevelNoise::OrnsteinUhlenbeck { sigma: 1.0, tau: 1.0 };
        let cfg = LevelEnsembleConfig {
            h0: pauli_z().mapv(|x| x * 0.5 * om),
            couplings: vec![pauli_x().mapv(|x| x * g)],
            alpha: 0.08,
            noise,
            dt: 0.01,
            steps: 200,
            snapshot_stride: 200,
            psi0: Array1::from_vec(vec![C64::new(1.0, 0.0), C64::new(0.0, 0.0)]),
            antithetic: true,
            control_variate: Some(pauli_z()),
        };
        let r = run_level_ensemble(&cfg, 3000, 2).unwrap();
        let (cv, se_cv) = r.cv_estimate.unwrap();
        let (plain, se_plain) = r.plain_estimate.unwrap();
        assert!(se_cv < 0.2 * se_plain, "{se_cv} vs {se_plain}");
        assert!((cv - plain).abs() < 3.0 * se_plain);
        // second-order cumulant agrees up to O(α⁴)
        let a = hamiltonian_superop(&cfg.h0);
        let coupling = StochasticCoupling::from_hamiltonians(
            cfg.alpha,
            &cfg.couplings,
            Array2::from_elem((1, 1), noise.sigma()),
            noise.correlation(),
        )
        .unwrap();
        let rho0 = Array2::from_shape_fn((2, 2), |(i, j)| {
            if i == 0 && j == 0 {
                C64::new(1.0, 0.0)
            } else {
                C64::new(0.0, 0.0)
            }
        });
        let out = evolve_second_order(&a, &coupling, &rho0, &[2.0], 1e-10).unwrap();
        let sz = (out[0][(0, 0)] - out[0][(1, 1)]).re;
        assert!((cv - sz).abs() < 5e-3, "{cv} vs {sz}");
    }
}
