// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Second-order cumulant generators for `dρ/dt = (A + α h_i(t) F^i) ρ` with
//! Gaussian noise `E[h_i(t) h_j(t - s)] = σ_ij g(s) / 2`.

use ndarray::{s, Array1, Array2};

use crate::error::{Error, Result};
use crate::generators::{coupling_operators, quadrature_nodes, Regime, Representation, Superoperator};
use crate::kernels::TWO_PI_3_2;
use crate::linalg::{self, dagger, eigh, expm, frobenius, identity, kron};
use crate::model::{Basis, Grid1D, MassSpec, NoiseSpec};
use crate::ode::{self, OdeOptions};
use crate::quadrature::{integrate_with_breaks, Tolerance};
use crate::{CMatrix, C64};

/// Largest superoperator dimension for which interior exponentials are formed.
pub const SECOND_ORDER_MAX_DIM: usize = 64;

/// Normalized time profile `g(s)` of the noise correlation.
#[derive(Debug, Clone, PartialEq)]
pub enum Correlation {
    /// `g(s) = Θ(τ_c - s)`
    Heaviside { tau_c: f64 },
    /// `g(s) = τ_c δ(s)`
    Delta { tau_c: f64 },
    /// `g(s) = e^{-s/τ_c}` (experimental)
    Exponential { tau_c: f64 },
    /// Piecewise-linear `g` on ascending `times`, zero beyond the last point.
    Tabulated { times: Vec<f64>, values: Vec<f64> },
}

impl Correlation {
    pub fn validate(&self) -> Result<()> {
        match self {
            Correlation::Heaviside { tau_c } | Correlation::Delta { tau_c } | Correlation::Exponential { tau_c } => {
                if !(*tau_c > 0.0 && tau_c.is_finite()) {
                    return Err(Error::Domain(format!("tau_c must be positive, got {tau_c}")));
                }
            }
            Correlation::Tabulated { times, values } => {
                if times.len() < 2 || times.len() != values.len() {
                    return Err(Error::Domain("tabulated correlation needs >= 2 matching points".into()));
                }
                if times[0] != 0.0 || times.windows(2).any(|w| w[1] <= w[0]) {
                    return Err(Error::Domain("tabulated times must start at 0 and increase".into()));
                }
            }
        }
        Ok(())
    }

    /// `g(s)` for `s > 0`; the delta profile has no pointwise value and returns 0.
    pub fn eval(&self, s: f64) -> f64 {
        match self {
            Correlation::Heaviside { tau_c } => {
                if s <= *tau_c {
                    1.0
                } else {
                    0.0
                }
            }
            Correlation::Delta { .. } => 0.0,
            Correlation::Exponential { tau_c } => (-s / tau_c).exp(),
            Correlation::Tabulated { times, values } => {
                if s < 0.0 || s > *times.last().unwrap() {
                    return 0.0;
                }
                let k = times.partition_point(|&t| t <= s).clamp(1, times.len() - 1);
                let (t0, t1) = (times[k - 1], times[k]);
                let w = (s - t0) / (t1 - t0);
                values[k - 1] * (1.0 - w) + values[k] * w
            }
        }
    }

    /// `λ(t) = ∫₀ᵗ g(s) ds`
    pub fn lambda(&self, t: f64) -> f64 {
        match self {
            Correlation::Heaviside { tau_c } => t.min(*tau_c),
            Correlation::Delta { tau_c } => *tau_c,
            Correlation::Exponential { tau_c } => tau_c * (1.0 - (-t / tau_c).exp()),
            Correlation::Tabulated { times, .. } => {
                let mut acc = 0.0;
                for w in times.windows(2) {
                    if w[0] >= t {
                        break;
                    }
                    let b = w[1].min(t);
                    acc += 0.5 * (self.eval(w[0]) + self.eval(b)) * (b - w[0]);
                }
                acc
            }
        }
    }

    /// Correlation time used for regime ratios.
    pub fn tau_c(&self) -> f64 {
        match self {
            Correlation::Heaviside { tau_c } | Correlation::Delta { tau_c } | Correlation::Exponential { tau_c } => {
                *tau_c
            }
            Correlation::Tabulated { .. } => self.lambda(f64::INFINITY),
        }
    }

    fn breaks(&self) -> Vec<f64> {
        match self {
            Correlation::Heaviside { tau_c } => vec![*tau_c],
            Correlation::Tabulated { times, .. } => times.clone(),
            _ => Vec::new(),
        }
    }
}

/// Couplings `F^i` (superoperators on row-major vectorized states), their
/// strength matrix `σ_ij` and the correlation profile.
#[derive(Debug, Clone)]
pub struct StochasticCoupling {
    pub alpha: f64,
    pub couplings: Vec<CMatrix>,
    pub sigma: Array2<f64>,
    pub correlation: Correlation,
}

/// `ρ ↦ -i[H, ρ]` as a matrix on `vec(ρ)`.
pub fn hamiltonian_superop(h: &CMatrix) -> CMatrix {
    let n = h.nrows();
    let id = identity(n);
    (kron(h, &id) - kron(&id, &h.t().to_owned())).mapv(|v| v * C64::new(0.0, -1.0))
}

impl StochasticCoupling {
    pub fn new(alpha: f64, couplings: Vec<CMatrix>, sigma: Array2<f64>, correlation: Correlation) -> Result<Self> {
        correlation.validate()?;
        let k = couplings.len();
        if k == 0 || sigma.dim() != (k, k) {
            return Err(Error::Domain(format!("sigma must be {k}x{k} for {k} couplings")));
        }
        let d = couplings[0].nrows();
        let n = (d as f64).sqrt().round() as usize;
        if n * n != d {
            return Err(Error::Domain(format!("superoperator dimension {d} is not a square")));
        }
        for (i, f) in couplings.iter().enumerate() {
            if f.dim() != (d, d) {
                return Err(Error::Domain(format!("coupling {i} has shape {:?}", f.dim())));
            }
            let mut row = Array1::<C64>::zeros(d);
            for a in 0..n {
                row += &f.row(a * n + a);
            }
            let leak = row.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
            if leak > 1e-10 * frobenius(f).max(1.0) {
                return Err(Error::Domain(format!(
                    "coupling {i} does not annihilate the trace ({leak:e})"
                )));
            }
        }
        for i in 0..k {
            for j in 0..k {
                if (sigma[(i, j)] - sigma[(j, i)]).abs() > 1e-12 * sigma[(i, j)].abs().max(1.0) {
                    return Err(Error::Domain("sigma must be symmetric".into()));
                }
            }
        }
        let sc = sigma.mapv(|v| C64::new(v, 0.0));
        let (vals, _) = eigh(&sc);
        let scale = vals.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        if vals[0] < -1e-12 * scale.max(1.0) {
            return Err(Error::Domain(format!(
                "sigma is not positive semidefinite (eigenvalue {})",
                vals[0]
            )));
        }
        Ok(Self {
            alpha,
            couplings,
            sigma,
            correlation,
        })
    }

    /// Couplings `F^i = -i[V_i, ·]` for hermitian `V_i`.
    pub fn from_hamiltonians(
        alpha: f64,
        ops: &[CMatrix],
        sigma: Array2<f64>,
        correlation: Correlation,
    ) -> Result<Self> {
        Self::new(alpha, ops.iter().map(hamiltonian_superop).collect(), sigma, correlation)
    }

    pub fn dim(&self) -> usize {
        self.couplings[0].nrows()
    }

    /// `Σ_ij σ_ij F^i X F^j`
    fn contract(&self, mid: impl Fn(&CMatrix) -> CMatrix) -> CMatrix {
        let d = self.dim();
        let mut out = Array2::zeros((d, d));
        let k = self.couplings.len();
        for j in 0..k {
            let right = mid(&self.couplings[j]);
            for i in 0..k {
                let s = self.sigma[(i, j)];
                if s != 0.0 {
                    out.scaled_add(C64::new(s, 0.0), &self.couplings[i].dot(&right));
                }
            }
        }
        out
    }

    fn ff(&self) -> CMatrix {
        self.contract(|f| f.clone())
    }
}

/// Propagator `e^{As}`; anti-hermitian drifts use one eigendecomposition.
enum Drift {
    Unitary { vecs: CMatrix, freqs: Vec<f64> },
    General(CMatrix),
}

impl Drift {
    fn new(a: &CMatrix) -> Self {
        let na = frobenius(a);
        if frobenius(&(a + &dagger(a))) <= 1e-12 * na.max(1e-300) {
            let (freqs, vecs) = eigh(&a.mapv(|v| v * C64::new(0.0, 1.0)));
            Drift::Unitary { vecs, freqs }
        } else {
            Drift::General(a.clone())
        }
    }

    fn exp(&self, s: f64) -> (CMatrix, CMatrix) {
        match self {
            Drift::Unitary { vecs, freqs } => {
                let d: Array1<C64> = freqs.iter().map(|&w| C64::from_polar(1.0, -w * s)).collect();
                let dc = d.mapv(|v| v.conj());
                let vd = dagger(vecs);
                (
                    linalg::diag_right(vecs, &d).dot(&vd),
                    linalg::diag_right(vecs, &dc).dot(&vd),
                )
            }
            Drift::General(a) => (expm(&a.mapv(|v| v * s)), expm(&a.mapv(|v| v * -s))),
        }
    }
}

fn check_dims(a: &CMatrix, c: &StochasticCoupling) -> Result<()> {
    if a.dim() != (c.dim(), c.dim()) {
        return Err(Error::Domain(format!(
            "drift is {:?} but couplings are {}x{}",
            a.dim(),
            c.dim(),
            c.dim()
        )));
    }
    Ok(())
}

/// Memory integrand `Σ σ_ij g(s) F^i e^{As} F^j e^{-As}` without the `g` factor.
fn memory_term(c: &StochasticCoupling, drift: &Drift, s: f64) -> CMatrix {
    let (e, ei) = drift.exp(s);
    c.contract(|f| e.dot(f).dot(&ei))
}

/// `𝒢(t) = A + (α²/2) ∫₀ᵗ ds Σ σ_ij g(s) F^i e^{As} F^j e^{-As}`.
pub fn second_order_generator(a: &CMatrix, coupling: &StochasticCoupling, t: f64) -> Result<CMatrix> {
    check_dims(a, coupling)?;
    let d = a.nrows();
    if d > SECOND_ORDER_MAX_DIM {
        return Err(Error::Capacity(format!(
            "second-order generator limited to superoperator dimension {SECOND_ORDER_MAX_DIM}, got {d}"
        )));
    }
    let half = 0.5 * coupling.alpha * coupling.alpha;
    if half == 0.0 || t <= 0.0 {
        return Ok(a.clone());
    }
    let mem = memory_integral(a, coupling, t)?;
    Ok(a + &mem.mapv(|v| v * half))
}

fn memory_integral(a: &CMatrix, coupling: &StochasticCoupling, t: f64) -> Result<CMatrix> {
    let corr = &coupling.correlation;
    if let Correlation::Delta { tau_c } = corr {
        return Ok(coupling.ff().mapv(|v| v * *tau_c));
    }
    let drift = Drift::new(a);
    let upper = match corr {
        Correlation::Heaviside { tau_c } => t.min(*tau_c),
        Correlation::Tabulated { times, .. } => t.min(*times.last().unwrap()),
        _ => t,
    };
    let r = integrate_with_breaks(
        |s| {
            let g = corr.eval(s);
            let m = memory_term(coupling, &drift, s);
            m.mapv(|v| v * g)
        },
        0.0,
        upper,
        &corr.breaks(),
        Tolerance::new(1e-9, 1e-300),
    )?;
    let v = r.value;
    if v.iter().any(|x| !x.re.is_finite() || !x.im.is_finite()) {
        return Err(Error::numerical("memory integral overflowed; drift may be unstable"));
    }
    Ok(v)
}

/// Closed form `A + (α²λσ_ij/2) F^i F^j` with `λ = ∫₀ᵗ g`, valid when every
/// `F^i` commutes with `A`.
pub fn commuting_generator(a: &CMatrix, coupling: &StochasticCoupling, t: f64) -> Result<CMatrix> {
    check_dims(a, coupling)?;
    let na = frobenius(a);
    for (i, f) in coupling.couplings.iter().enumerate() {
        let c = frobenius(&(a.dot(f) - f.dot(a)));
        if c >= 1e-12 * na * frobenius(f) && c > 0.0 {
            return Err(Error::RegimeMismatch(format!(
                "coupling {i} does not commute with the drift (‖[A, F]‖ = {c:e})"
            )));
        }
    }
    let lambda = coupling.correlation.lambda(t);
    let k = 0.5 * coupling.alpha * coupling.alpha * lambda;
    Ok(a + &coupling.ff().mapv(|v| v * k))
}

#[derive(Debug, Clone)]
pub struct MarkovianGenerator {
    pub generator: CMatrix,
    /// `τ_c ‖A‖₂`, the ratio of correlation time to the fastest free timescale.
    pub regime_ratio: f64,
}

impl MarkovianGenerator {
    pub fn into_superoperator(self, basis: Basis) -> Superoperator {
        let fp = format!("markovian|{}", self.regime_ratio);
        Superoperator::new(
            basis,
            Representation::Dense(self.generator),
            Regime::Cumulant,
            false,
            &fp,
        )
    }
}

fn spectral_norm(a: &CMatrix) -> f64 {
    if a.nrows() > 512 {
        return frobenius(a);
    }
    let (vals, _) = eigh(&dagger(a).dot(a));
    vals.last().copied().unwrap_or(0.0).max(0.0).sqrt()
}

/// `A + (α²τ_cσ_ij/2) F^i F^j`; reports `τ_c‖A‖` without enforcing it.
pub fn markovian_generator(a: &CMatrix, coupling: &StochasticCoupling) -> Result<MarkovianGenerator> {
    check_dims(a, coupling)?;
    let tau = coupling.correlation.tau_c();
    let k = 0.5 * coupling.alpha * coupling.alpha * tau;
    Ok(MarkovianGenerator {
        generator: a + &coupling.ff().mapv(|v| v * k),
        regime_ratio: tau * spectral_norm(a),
    })
}

/// Time-local evolution `dρ/dt = 𝒢(t) ρ` with the second-order generator,
/// integrating the memory kernel alongside the state. Returns `vec(ρ)` at each
/// output time.
pub fn evolve_second_order(
    a: &CMatrix,
    coupling: &StochasticCoupling,
    rho0: &CMatrix,
    times: &[f64],
    rtol: f64,
) -> Result<Vec<CMatrix>> {
    check_dims(a, coupling)?;
    let d = a.nrows();
    let n = rho0.nrows();
    if n * n != d {
        return Err(Error::Domain(format!(
            "state is {n}x{n} but superoperators are {d}x{d}"
        )));
    }
    if d > SECOND_ORDER_MAX_DIM {
        return Err(Error::Capacity(format!(
            "second-order evolution limited to superoperator dimension {SECOND_ORDER_MAX_DIM}, got {d}"
        )));
    }
    let half = 0.5 * coupling.alpha * coupling.alpha;
    let corr = coupling.correlation.clone();
    let drift = Drift::new(a);
    let delta = matches!(corr, Correlation::Delta { .. });
    let mut y0 = Array1::zeros(d + d * d);
    y0.slice_mut(s![..d]).assign(&linalg::vectorize(rho0));
    if delta {
        y0.slice_mut(s![d..])
            .assign(&linalg::vectorize(&memory_integral(a, coupling, 0.0)?));
    }
    let mut out = Vec::with_capacity(times.len());
    let opts = OdeOptions {
        rtol,
        atol: rtol * 1e-3,
        ..Default::default()
    };
    ode::integrate(
        |t, y| {
            let rho = y.slice(s![..d]);
            let k = Array2::from_shape_vec((d, d), y.slice(s![d..]).to_vec()).expect("d*d");
            let g = a + &k.mapv(|v| v * half);
            let mut dy = Array1::zeros(d + d * d);
            dy.slice_mut(s![..d]).assign(&g.dot(&rho));
            if !delta {
                let w = corr.eval(t);
                if w != 0.0 {
                    let m = memory_term(coupling, &drift, t).mapv(|v| v * w);
                    dy.slice_mut(s![d..]).assign(&linalg::vectorize(&m));
                }
            }
            dy
        },
        0.0,
        y0,
        times,
        &corr.breaks(),
        opts,
        |_, _, y| {
            out.push(linalg::unvectorize(&y.slice(s![..d]).to_owned(), n));
            Ok(())
        },
    )?;
    Ok(out)
}

/// Cumulant-form couplings of the white-in-time gravitational noise on a
/// grid: for each positive quadrature node `q`, the hermitian parts
/// `C = (O + O†)/2` and `S = (O - O†)/(2i)` of every coupling operator `O_q`.
pub fn gravitational_coupling(
    noise: &NoiseSpec,
    mass: &MassSpec,
    grid: &Grid1D,
    nodes: Option<usize>,
) -> Result<StochasticCoupling> {
    let q_nodes = quadrature_nodes(noise, mass, grid, nodes)?;
    let w = noise.weights;
    let mut ops = Vec::new();
    let mut strengths = Vec::new();
    for &(q, wq) in q_nodes.iter().filter(|(q, _)| *q > 0.0) {
        let c = coupling_operators(grid, mass.m, q);
        for (op, weight) in [(c.h00, w.h00), (c.h0i, w.h0i), (c.hij, w.hij)] {
            if weight == 0.0 {
                continue;
            }
            let od = dagger(&op);
            let re = (&op + &od).mapv(|v| v * 0.5);
            let im = (&op - &od).mapv(|v| v * C64::new(0.0, -0.5));
            let sigma = 4.0 * wq * weight / TWO_PI_3_2;
            for h in [re, im] {
                ops.push(h);
                strengths.push(sigma);
            }
        }
    }
    if ops.is_empty() {
        return Err(Error::Domain("all component weights vanish".into()));
    }
    let sigma = Array2::from_diag(&Array1::from_vec(strengths));
    StochasticCoupling::from_hamiltonians(noise.alpha, &ops, sigma, Correlation::Delta { tau_c: noise.tau_c })
}
