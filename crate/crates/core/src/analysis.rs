// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Rate extraction, limit comparisons and the α-scaling study.

use ndarray::Array2;
use serde::Serialize;

use crate::cumulant::{evolve_second_order, hamiltonian_superop, StochasticCoupling};
use crate::error::{Error, Result};
use crate::generators::{
    build_full_generator, build_momentum_generator, build_position_generator, FullGeneratorOptions, Superoperator,
};
use crate::kernels::{transverse_density, FormFactor};
use crate::linalg::{self, frobenius};
use crate::model::{DenseState, Model};
use crate::oracle::{run_level_ensemble, BatchMean, LevelEnsembleConfig};
use crate::propagators::Snapshot;
use crate::{CMatrix, C64};

/// Minimum number of points for a rate fit.
pub const MIN_FIT_POINTS: usize = 10;
pub const MIN_COHERENCE: f64 = 1e-12;

/// Coherence values over time, optionally with standard errors.
#[derive(Debug, Clone, PartialEq)]
pub struct DecaySeries {
    pub times: Vec<f64>,
    pub values: Vec<C64>,
    pub std_errors: Option<Vec<f64>>,
}

impl DecaySeries {
    pub fn new(times: Vec<f64>, values: Vec<C64>, std_errors: Option<Vec<f64>>) -> Result<Self> {
        if times.len() != values.len() || std_errors.as_ref().is_some_and(|e| e.len() != times.len()) {
            return Err(Error::Domain("series lengths differ".into()));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::Domain("times must be strictly increasing".into()));
        }
        Ok(Self {
            times,
            values,
            std_errors,
        })
    }

    /// Series of `ρ[i, j]` from propagator snapshots, checking
    /// `|ρ_ij| ≤ √(ρ_ii ρ_jj)` at every point.
    pub fn from_snapshots(snapshots: &[Snapshot], i: usize, j: usize) -> Result<Self> {
        let mut times = Vec::new();
        let mut values = Vec::new();
        for s in snapshots {
            let m = &s.state.matrix;
            let c = m[(i, j)];
            let bound = (m[(i, i)].re * m[(j, j)].re).max(0.0).sqrt();
            if c.norm() > bound + 1e-8 {
                return Err(Error::numerical(format!(
                    "coherence |ρ[{i},{j}]| = {} exceeds the Cauchy-Schwarz bound {bound} at t = {}",
                    c.norm(),
                    s.time
                )));
            }
            times.push(s.time);
            values.push(c);
        }
        Self::new(times, values, None)
    }

    /// Leading points with `|c| ≥ threshold`.
    pub fn window(&self, threshold: f64) -> Self {
        let k = self.values.iter().take_while(|c| c.norm() >= threshold).count();
        Self {
            times: self.times[..k].to_vec(),
            values: self.values[..k].to_vec(),
            std_errors: self.std_errors.as_ref().map(|e| e[..k].to_vec()),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RateFit {
    pub rate: f64,
    pub std_err: f64,
    /// Fitted `log|c(0)|`.
    pub intercept: f64,
    pub points: usize,
}

fn check_fit_input(times: &[f64], values: &[C64]) -> Result<()> {
    if times.len() < MIN_FIT_POINTS {
        return Err(Error::InsufficientSamples(format!(
            "rate fit needs >= {MIN_FIT_POINTS} points, got {}",
            times.len()
        )));
    }
    if let Some(c) = values.iter().find(|c| c.norm() <= MIN_COHERENCE) {
        return Err(Error::Domain(format!(
            "coherence {} below {MIN_COHERENCE:e} inside the fit window",
            c.norm()
        )));
    }
    Ok(())
}

/// Weighted line fit `y = a + b x`; returns `(a, b, se_b)`. With `known`
/// weights the slope error is `√(S/Δ)`, otherwise it comes from residuals.
fn line_fit(x: &[f64], y: &[f64], w: &[f64], known: bool) -> (f64, f64, f64) {
    let (mut s, mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
    for k in 0..x.len() {
        s += w[k];
        sx += w[k] * x[k];
        sy += w[k] * y[k];
        sxx += w[k] * x[k] * x[k];
        sxy += w[k] * x[k] * y[k];
    }
    let det = s * sxx - sx * sx;
    let b = (s * sxy - sx * sy) / det;
    let a = (sy - b * sx) / s;
    let se = if known {
        (s / det).sqrt()
    } else {
        let rss: f64 = (0..x.len()).map(|k| w[k] * (y[k] - a - b * x[k]).powi(2)).sum();
        let dof = (x.len() as f64 - 2.0).max(1.0);
        (rss / dof * s / det).sqrt()
    };
    (a, b, se)
}

/// Least squares on `log|c(t)|`. Points are weighted by `(|c|/se)²` when
/// standard errors are present.
pub fn fit_exponential_rate(series: &DecaySeries) -> Result<RateFit> {
    check_fit_input(&series.times, &series.values)?;
    let y: Vec<f64> = series.values.iter().map(|c| c.norm().ln()).collect();
    let (w, known) = match &series.std_errors {
        Some(se) => {
            let rel: Vec<f64> = se.iter().zip(&series.values).map(|(e, c)| e / c.norm()).collect();
            let floor = rel
                .iter()
                .copied()
                .filter(|r| r.is_finite() && *r > 0.0)
                .fold(f64::INFINITY, f64::min);
            if floor.is_finite() {
                let w = rel
                    .iter()
                    .map(|&r| {
                        let r = if r.is_finite() && r > 0.0 { r } else { floor };
                        1.0 / (r * r)
                    })
                    .collect();
                (w, true)
            } else {
                (vec![1.0; y.len()], false)
            }
        }
        None => (vec![1.0; y.len()], false),
    };
    let (a, b, se) = line_fit(&series.times, &y, &w, known);
    Ok(RateFit {
        rate: -b,
        std_err: se,
        intercept: a,
        points: y.len(),
    })
}

/// Unweighted log-linear rate fit of a pooled mean, with a delete-one-batch
/// jackknife error that accounts for correlations between time points.
/// `series` selects the observable entry from each batch's snapshot values.
pub fn fit_rate_jackknife(times: &[f64], batches: &[BatchMean], entry: usize, threshold: f64) -> Result<RateFit> {
    if batches.len() < 2 {
        return Err(Error::InsufficientSamples(
            "jackknife needs at least two batches".into(),
        ));
    }
    let total: f64 = batches.iter().map(|b| b.count as f64).sum();
    let pooled = |skip: Option<usize>| -> Vec<C64> {
        let norm = total - skip.map(|k| batches[k].count as f64).unwrap_or(0.0);
        (0..times.len())
            .map(|s| {
                batches
                    .iter()
                    .enumerate()
                    .filter(|(k, _)| Some(*k) != skip)
                    .map(|(_, b)| b.values[s][entry] * b.count as f64)
                    .sum::<C64>()
                    / norm
            })
            .collect()
    };
    let full = pooled(None);
    let k = full.iter().take_while(|c| c.norm() >= threshold).count();
    let t = &times[..k];
    check_fit_input(t, &full[..k])?;
    let ones = vec![1.0; k];
    let fit = |v: &[C64]| -> Result<(f64, f64)> {
        if let Some(c) = v.iter().find(|c| c.norm() <= MIN_COHERENCE) {
            return Err(Error::Domain(format!("coherence {} too small for a log fit", c.norm())));
        }
        let y: Vec<f64> = v.iter().map(|c| c.norm().ln()).collect();
        let (a, b, _) = line_fit(t, &y, &ones, false);
        Ok((a, -b))
    };
    let (a, rate) = fit(&full[..k])?;
    let nb = batches.len() as f64;
    let loo = (0..batches.len())
        .map(|j| fit(&pooled(Some(j))[..k]).map(|r| r.1))
        .collect::<Result<Vec<f64>>>()?;
    let mean = loo.iter().sum::<f64>() / nb;
    let var = (nb - 1.0) / nb * loo.iter().map(|r| (r - mean).powi(2)).sum::<f64>();
    Ok(RateFit {
        rate,
        std_err: var.sqrt(),
        intercept: a,
        points: k,
    })
}

/// Least-squares exponent of `y ∝ x^p` with its standard error.
pub fn power_law_exponent(x: &[f64], y: &[f64]) -> Result<(f64, f64)> {
    if x.len() < 3 || x.len() != y.len() {
        return Err(Error::InsufficientSamples("power-law fit needs >= 3 points".into()));
    }
    if x.iter().chain(y).any(|v| !(*v > 0.0)) {
        return Err(Error::Domain("power-law fit needs positive values".into()));
    }
    let lx: Vec<f64> = x.iter().map(|v| v.ln()).collect();
    let ly: Vec<f64> = y.iter().map(|v| v.ln()).collect();
    let (_, b, se) = line_fit(&lx, &ly, &vec![1.0; x.len()], false);
    Ok((b, se))
}

/// `‖(𝓐 - 𝓑)ρ‖_F / ‖𝓐ρ‖_F` for each state; zero when both actions vanish.
pub fn relative_action_deviation(a: &Superoperator, b: &Superoperator, states: &[DenseState]) -> Result<Vec<f64>> {
    states
        .iter()
        .map(|s| {
            let x = a.apply(s)?;
            let y = b.apply(s)?;
            let num = frobenius(&(&x.matrix - &y.matrix));
            let den = frobenius(&x.matrix);
            Ok(if den == 0.0 {
                if num == 0.0 {
                    0.0
                } else {
                    f64::INFINITY
                }
            } else {
                num / den
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitEntry {
    pub state: usize,
    pub position_deviation: f64,
    pub momentum_deviation: f64,
    /// `s · Δx`, with `s` the transverse q-scale and `Δx` the position spread.
    pub q_dx: f64,
    /// Kinetic energy spread over `Mc²`.
    pub de_over_mc2: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub q_scale: f64,
    pub entries: Vec<LimitEntry>,
}

fn spreads(state: &DenseState, mass: f64) -> Result<(f64, f64)> {
    let pos = state.to_position()?;
    let grid = pos.basis.grid().expect("grid basis");
    let x = grid.positions();
    let d: Vec<f64> = pos.matrix.diag().iter().map(|v| v.re).collect();
    let m1: f64 = d.iter().zip(&x).map(|(p, x)| p * x).sum();
    let m2: f64 = d.iter().zip(&x).map(|(p, x)| p * x * x).sum();
    let mom = state.to_momentum()?;
    let e = grid.kinetic_energies(mass);
    let pd: Vec<f64> = mom.matrix.diag().iter().map(|v| v.re).collect();
    let e1: f64 = pd.iter().zip(&e).map(|(p, e)| p * e).sum();
    let e2: f64 = pd.iter().zip(&e).map(|(p, e)| p * e * e).sum();
    Ok(((m2 - m1 * m1).max(0.0).sqrt(), (e2 - e1 * e1).max(0.0).sqrt()))
}

/// Dissipator-only comparison of the full generator with its position and
/// momentum limits on each test state.
pub fn limit_report(model: &Model, states: &[DenseState]) -> Result<LimitReport> {
    let ff = FormFactor::new(model.mass);
    let grid = &model.grid;
    let opts = FullGeneratorOptions {
        include_free: false,
        ..Default::default()
    };
    let full = build_full_generator(&model.noise, &ff, grid, opts)?;
    let pos = build_position_generator(&model.noise, &ff, grid, false)?;
    let mom = build_momentum_generator(&model.noise, &ff, grid, model.noise.tau_c, false)?;
    let dp = relative_action_deviation(&full, &pos, states)?;
    let dm = relative_action_deviation(&full, &mom, states)?;
    let (_, s) = transverse_density(&model.noise, &model.mass)?;
    let entries = states
        .iter()
        .enumerate()
        .map(|(k, st)| {
            let (dx, de) = spreads(st, model.mass.m)?;
            Ok(LimitEntry {
                state: k,
                position_deviation: dp[k],
                momentum_deviation: dm[k],
                q_dx: s * dx,
                de_over_mc2: de / model.mass.m,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(LimitReport { q_scale: s, entries })
}

/// Base configuration for [`alpha_scaling_study`]. The deviation compared is
/// `⟨observable⟩` at the final time.
#[derive(Debug, Clone)]
pub struct ScalingConfig {
    pub base: LevelEnsembleConfig,
    pub observable: CMatrix,
    /// Samples per α (antithetic pairs when enabled).
    pub samples: usize,
    pub seed: u64,
    pub use_control_variate: bool,
    pub rtol: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingRow {
    pub alpha: f64,
    pub prediction: f64,
    pub oracle: f64,
    pub oracle_std_err: f64,
    pub deviation: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ScalingTable {
    pub rows: Vec<ScalingRow>,
    pub exponent: f64,
    pub exponent_std_err: f64,
    /// Some statistical error is at least 10% of its deviation.
    pub inconclusive: bool,
    /// Samples per α needed to bring every error below 10% of its deviation.
    pub required_samples: Option<usize>,
}

/// Deviation between the second-order cumulant prediction and the oracle
/// ensemble at each α, with the fitted power-law exponent.
pub fn alpha_scaling_study(cfg: &ScalingConfig, alphas: &[f64]) -> Result<ScalingTable> {
    if alphas.len() < 3 {
        return Err(Error::InsufficientSamples(format!(
            "scaling study needs >= 3 alpha values, got {}",
            alphas.len()
        )));
    }
    let base = &cfg.base;
    let a = hamiltonian_superop(&base.h0);
    let d = base.h0.nrows();
    let norm = base.psi0.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt();
    let psi = base.psi0.mapv(|x| x / norm);
    let rho0 = Array2::from_shape_fn((d, d), |(i, j)| psi[i] * psi[j].conj());
    let k = base.couplings.len();
    let t_final = base.dt * base.steps as f64;
    let mut rows = Vec::with_capacity(alphas.len());
    for &alpha in alphas {
        let coupling = StochasticCoupling::from_hamiltonians(
            alpha,
            &base.couplings,
            Array2::from_diag_elem(k, base.noise.sigma()),
            base.noise.correlation(),
        )?;
        let rho = evolve_second_order(&a, &coupling, &rho0, &[t_final], cfg.rtol)?;
        let prediction = linalg::trace(&cfg.observable.dot(&rho[0])).re;
        let mut run = base.clone();
        run.alpha = alpha;
        run.control_variate = Some(cfg.observable.clone());
        let r = run_level_ensemble(&run, cfg.samples, cfg.seed)?;
        let (oracle, se) = if cfg.use_control_variate {
            r.cv_estimate.expect("control variate requested")
        } else {
            r.plain_estimate.expect("control variate requested")
        };
        rows.push(ScalingRow {
            alpha,
            prediction,
            oracle,
            oracle_std_err: se,
            deviation: oracle - prediction,
        });
    }
    let inconclusive = rows.iter().any(|r| !(r.oracle_std_err < 0.1 * r.deviation.abs()));
    let required_samples = inconclusive.then(|| {
        let f = rows
            .iter()
            .map(|r| (r.oracle_std_err / (0.1 * r.deviation.abs().max(1e-300))).powi(2))
            .fold(1.0, f64::max);
        let n = cfg.samples as f64 * f;
        if n.is_finite() && n < usize::MAX as f64 {
            n.ceil() as usize
        } else {
            usize::MAX
        }
    });
    let xs: Vec<f64> = rows.iter().map(|r| r.alpha).collect();
    let ys: Vec<f64> = rows.iter().map(|r| r.deviation.abs()).collect();
    let (exponent, exponent_std_err) = if ys.iter().all(|y| *y > 0.0) {
        power_law_exponent(&xs, &ys)?
    } else {
        (f64::NAN, f64::NAN)
    };
    Ok(ScalingTable {
        rows,
        exponent,
        exponent_std_err,
        inconclusive,
        required_samples,
    })
}
