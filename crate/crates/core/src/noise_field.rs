// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! White-in-time Gaussian field samples on the periodic grid.

use std::sync::Arc;

use ndarray::Array1;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha20Rng;
use rand_distr::StandardNormal;
use rustfft::{Fft, FftPlanner};

use crate::error::{Error, Result};
use crate::kernels::axial_kernel;
use crate::model::{Density, Grid1D, KernelKind, MassSpec, NoiseSpec};
use crate::C64;

/// How the effective correlation time enters the per-step variance.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum LambdaMode {
    /// `λ = τ_c` throughout.
    Saturated,
    /// `λ = min(τ_c, t)` at each step midpoint.
    Transient,
}

/// Independent random stream for one trajectory. Each step reseeks the
/// generator to `(trajectory, step)`, so draws never depend on scheduling.
#[derive(Debug, Clone)]
pub struct FieldStream {
    rng: ChaCha20Rng,
    step: u64,
}

impl FieldStream {
    pub fn new(master_seed: u64, trajectory: u64) -> Self {
        let mut rng = ChaCha20Rng::seed_from_u64(master_seed);
        rng.set_stream(trajectory);
        Self { rng, step: 0 }
    }

    pub fn step(&self) -> u64 {
        self.step
    }

    /// Positions the stream at `step` and returns the generator for it.
    pub fn at_step(&mut self, step: u64) -> &mut ChaCha20Rng {
        self.step = step;
        self.rng.set_word_pos((step as u128) << 32);
        &mut self.rng
    }

    /// Generator for the current step; advances the step counter.
    pub fn next_step(&mut self) -> &mut ChaCha20Rng {
        let s = self.step;
        self.at_step(s);
        self.step = s + 1;
        &mut self.rng
    }
}

#[derive(Clone)]
enum Synthesis {
    Spectral {
        amplitudes: Vec<f64>,
        fwd: Arc<dyn Fft<f64>>,
        inv: Arc<dyn Fft<f64>>,
    },
    Sites,
}

/// Precomputed synthesis data for `h⁰⁰` with
/// `E[h(x, t) h(y, s)] = α²λ ū(x - y) δ_{ts}/dt`. Shareable across threads.
#[derive(Clone)]
pub struct FieldSampler {
    pub noise: NoiseSpec,
    pub grid: Grid1D,
    pub dt: f64,
    pub lambda_mode: LambdaMode,
    /// `ū` (or `l³/dx³` for site-independent fields) at lags `0..N`.
    covariance_shape: Vec<f64>,
    /// Spectral weight lost to clipping negative circulant eigenvalues.
    pub clipped: f64,
    synthesis: Synthesis,
}

impl std::fmt::Debug for FieldSampler {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("FieldSampler")
            .field("noise", &self.noise)
            .field("grid", &self.grid)
            .field("dt", &self.dt)
            .field("lambda_mode", &self.lambda_mode)
            .finish()
    }
}

impl FieldSampler {
    pub fn new(noise: &NoiseSpec, mass: &MassSpec, grid: &Grid1D, dt: f64, lambda_mode: LambdaMode) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        let n = grid.n();
        let dx = grid.dx();
        let (shape, synthesis, clipped) = match (noise.kernel, mass.density) {
            (KernelKind::DeltaL3 { l }, Density::Point) => {
                let mut s = vec![0.0; n];
                s[0] = (l / dx).powi(3);
                (s, Synthesis::Sites, 0.0)
            }
            _ => {
                let shape = (0..n)
                    .map(|j| axial_kernel(noise, mass, j.min(n - j) as f64 * dx))
                    .collect::<Result<Vec<f64>>>()?;
                let mut planner = FftPlanner::new();
                let fwd = planner.plan_fft_forward(n);
                let inv = planner.plan_fft_inverse(n);
                let mut buf: Vec<C64> = shape.iter().map(|&v| C64::new(v, 0.0)).collect();
                fwd.process(&mut buf);
                let total: f64 = buf.iter().map(|v| v.re.abs()).sum();
                let neg: f64 = buf.iter().map(|v| (-v.re).max(0.0)).sum();
                let amplitudes = buf.iter().map(|v| v.re.max(0.0).sqrt()).collect();
                (
                    shape,
                    Synthesis::Spectral { amplitudes, fwd, inv },
                    if total > 0.0 { neg / total } else { 0.0 },
                )
            }
        };
        Ok(Self {
            noise: *noise,
            grid: *grid,
            dt,
            lambda_mode,
            covariance_shape: shape,
            clipped,
            synthesis,
        })
    }

    pub fn lambda_at(&self, step: u64) -> f64 {
        match self.lambda_mode {
            LambdaMode::Saturated => self.noise.tau_c,
            LambdaMode::Transient => self.noise.tau_c.min((step as f64 + 0.5) * self.dt),
        }
    }

    /// Target `E[h(x_i) h(x_{i+lag})]` at `step`.
    pub fn target_covariance(&self, lag: usize, step: u64) -> f64 {
        let a2 = self.noise.alpha * self.noise.alpha;
        a2 * self.lambda_at(step) * self.covariance_shape[lag % self.grid.n()] / self.dt
    }

    /// Fills `out` with the field at the stream's next step.
    pub fn sample_into(&self, stream: &mut FieldStream, out: &mut [f64]) {
        let step = stream.step();
        let scale = (self.target_covariance(0, step) / self.covariance_shape[0]).sqrt();
        let n = self.grid.n();
        let rng = stream.next_step();
        if scale == 0.0 {
            out.iter_mut().for_each(|v| *v = 0.0);
            return;
        }
        match &self.synthesis {
            Synthesis::Sites => {
                let sd = scale * self.covariance_shape[0].sqrt();
                for v in out.iter_mut() {
                    let z: f64 = rng.sample(StandardNormal);
                    *v = sd * z;
                }
            }
            Synthesis::Spectral { amplitudes, fwd, inv } => {
                let mut buf: Vec<C64> = (0..n).map(|_| C64::new(rng.sample(StandardNormal), 0.0)).collect();
                fwd.process(&mut buf);
                for (b, a) in buf.iter_mut().zip(amplitudes) {
                    *b *= *a;
                }
                inv.process(&mut buf);
                let s = scale / n as f64;
                for (o, b) in out.iter_mut().zip(&buf) {
                    *o = b.re * s;
                }
            }
        }
    }

    pub fn sample_step(&self, stream: &mut FieldStream) -> Array1<f64> {
        let mut out = Array1::zeros(self.grid.n());
        self.sample_into(stream, out.as_slice_mut().expect("contiguous"));
        out
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CovarianceTable {
    /// Lags in grid units, `0..=N/2`.
    pub lags: Vec<usize>,
    pub values: Vec<f64>,
    pub std_errors: Vec<f64>,
    pub samples: usize,
}

/// Translation-averaged zero-mean covariance estimate per periodic lag.
pub fn empirical_covariance(samples: &[Array1<f64>]) -> Result<CovarianceTable> {
    if samples.len() < 100 {
        return Err(Error::InsufficientSamples(format!(
            "empirical covariance needs >= 100 samples, got {}",
            samples.len()
        )));
    }
    let n = samples[0].len();
    if samples.iter().any(|s| s.len() != n) {
        return Err(Error::Domain("samples have differing lengths".into()));
    }
    let m = samples.len() as f64;
    let lags: Vec<usize> = (0..=n / 2).collect();
    let mut values = Vec::with_capacity(lags.len());
    let mut std_errors = Vec::with_capacity(lags.len());
    for &lag in &lags {
        let mut sum = 0.0;
        let mut sum2 = 0.0;
        for s in samples {
            let y = (0..n).map(|i| s[i] * s[(i + lag) % n]).sum::<f64>() / n as f64;
            sum += y;
            sum2 += y * y;
        }
        let mean = sum / m;
        let var = ((sum2 - m * mean * mean) / (m - 1.0)).max(0.0);
        values.push(mean);
        std_errors.push((var / m).sqrt());
    }
    Ok(CovarianceTable {
        lags,
        values,
        std_errors,
        samples: samples.len(),
    })
}
