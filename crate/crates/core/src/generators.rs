// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Superoperators for the free evolution and every decoherence generator:
//! the full Markovian generator, its position and momentum limits, and the
//! energy-basis (Breuer) form.

use std::collections::BTreeMap;
use std::sync::Arc;

use ndarray::{Array1, Array2, Zip};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::kernels::{self, FormFactor, TWO_PI_3_2};
use crate::linalg::{self, SpectralBasis};
use crate::model::{Basis, DenseState, Density, Grid1D, MassSpec, NoiseSpec};
use crate::quadrature;
use crate::{CMatrix, C64};

/// Largest grid accepted by the full generator.
pub const FULL_GENERATOR_MAX_N: usize = 256;
/// Largest dimension for which an explicit `N² × N²` matrix is formed.
pub const DENSE_MAX_N: usize = 32;

fn czero() -> C64 {
    C64::new(0.0, 0.0)
}

fn creal(x: f64) -> C64 {
    C64::new(x, 0.0)
}

/// Structured term `coef · l1 · (W ∘ (l2 ρ r1)) · r2`; absent factors are the
/// identity and an absent `W` is the all-ones matrix.
#[derive(Debug, Clone)]
pub struct SandwichTerm {
    pub coef: C64,
    pub weights: Option<CMatrix>,
    pub l1: Option<Arc<CMatrix>>,
    pub l2: Option<Arc<CMatrix>>,
    pub r1: Option<Arc<CMatrix>>,
    pub r2: Option<Arc<CMatrix>>,
}

impl SandwichTerm {
    /// `coef · a ρ b`
    pub fn plain(coef: C64, a: Arc<CMatrix>, b: Arc<CMatrix>) -> Self {
        Self {
            coef,
            weights: None,
            l1: None,
            l2: Some(a),
            r1: Some(b),
            r2: None,
        }
    }

    fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut m = match &self.l2 {
            Some(a) => a.dot(rho),
            None => rho.clone(),
        };
        if let Some(b) = &self.r1 {
            m = m.dot(b.as_ref());
        }
        if let Some(w) = &self.weights {
            m.zip_mut_with(w, |v, &wi| *v *= wi);
        }
        if let Some(a) = &self.l1 {
            m = a.dot(&m);
        }
        if let Some(b) = &self.r2 {
            m = m.dot(b.as_ref());
        }
        if self.coef != creal(1.0) {
            m.mapv_inplace(|v| v * self.coef);
        }
        m
    }
}

/// `ρ ↦ left ρ + ρ right + Σ sandwiches`.
#[derive(Debug, Clone)]
pub struct OperatorSum {
    pub left: CMatrix,
    pub right: CMatrix,
    pub sandwiches: Vec<SandwichTerm>,
}

impl OperatorSum {
    pub fn zeros(n: usize) -> Self {
        Self {
            left: Array2::zeros((n, n)),
            right: Array2::zeros((n, n)),
            sandwiches: Vec::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.left.nrows()
    }

    /// Adds `-i[H, ρ]`.
    pub fn add_hamiltonian(&mut self, h: &CMatrix) {
        self.left.scaled_add(C64::new(0.0, -1.0), h);
        self.right.scaled_add(C64::new(0.0, 1.0), h);
    }

    /// Adds `coef [X, [Y, ρ]]`.
    pub fn add_double_commutator(&mut self, coef: C64, x: &CMatrix, y: &CMatrix) {
        self.left.scaled_add(coef, &x.dot(y));
        self.right.scaled_add(coef, &y.dot(x));
        let xa = Arc::new(x.clone());
        let ya = Arc::new(y.clone());
        self.sandwiches.push(SandwichTerm::plain(-coef, xa.clone(), ya.clone()));
        self.sandwiches.push(SandwichTerm::plain(-coef, ya, xa));
    }

    pub fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = self.left.dot(rho) + rho.dot(&self.right);
        for s in &self.sandwiches {
            out += &s.apply(rho);
        }
        out
    }
}

/// Momentum-diagonal coefficients `C⁰⁰`, `C⁰ⁱ`, `Cⁱʲ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MomentumCoefficients {
    pub c00: f64,
    pub c0i: f64,
    pub cij: f64,
}

#[derive(Debug, Clone)]
pub struct MomentumDiagonal {
    pub grid: Grid1D,
    pub mass: f64,
    /// Kinetic energies `p²/2M` in FFT order.
    pub energies: Array1<f64>,
    /// Whether the free phase `-i(E - E′)` is part of the map.
    pub free: bool,
    pub coefficients: MomentumCoefficients,
    /// `R[k, k′]`
    pub rates: Array2<f64>,
}

impl MomentumDiagonal {
    fn new(grid: Grid1D, mass: f64, free: bool, coefficients: MomentumCoefficients) -> Self {
        let p = grid.momenta();
        let energies = grid.kinetic_energies(mass);
        let n = grid.n();
        let rates = Array2::from_shape_fn((n, n), |(k, l)| {
            let de = energies[k] - energies[l];
            let dp = p[k] - p[l];
            let dp2 = p[k] * p[k] - p[l] * p[l];
            coefficients.c00 * de * de + coefficients.c0i * dp * dp + coefficients.cij * dp2 * dp2 / (4.0 * mass * mass)
        });
        Self {
            grid,
            mass,
            energies,
            free,
            coefficients,
            rates,
        }
    }

    fn apply(&self, rho: &CMatrix) -> CMatrix {
        let mut out = rho.clone();
        let e = &self.energies;
        Zip::indexed(&mut out).for_each(|(k, l), v| {
            let phase = if self.free { e[k] - e[l] } else { 0.0 };
            *v *= C64::new(-self.rates[(k, l)], -phase);
        });
        out
    }

    /// Equivalent position-basis operator sum built from `H`, `P` directly.
    pub fn to_operator_sum(&self) -> OperatorSum {
        let g = &self.grid;
        let m = self.mass;
        let h = g.momentum_function(|p| p * p / (2.0 * m));
        let mut sum = OperatorSum::zeros(g.n());
        if self.free {
            sum.add_hamiltonian(&h);
        }
        let c = self.coefficients;
        if c.c00 != 0.0 {
            sum.add_double_commutator(creal(-c.c00), &h, &h);
        }
        if c.c0i != 0.0 {
            let p = g.momentum_matrix();
            sum.add_double_commutator(creal(-c.c0i), &p, &p);
        }
        if c.cij != 0.0 {
            sum.add_double_commutator(creal(-c.cij), &h, &h);
        }
        sum
    }
}

#[derive(Debug, Clone)]
pub struct Kinetic {
    pub mass: f64,
    pub energies: Array1<f64>,
    pub basis: SpectralBasis,
}

impl Kinetic {
    pub fn new(grid: &Grid1D, mass: f64) -> Self {
        Self {
            mass,
            energies: grid.kinetic_energies(mass),
            basis: grid.spectral(),
        }
    }

    /// `-i[H, ρ]` for position-basis `ρ`.
    pub fn commutator(&self, rho: &CMatrix) -> CMatrix {
        let mut rp = self.basis.to_momentum(rho);
        let e = &self.energies;
        Zip::indexed(&mut rp).for_each(|(k, l), v| *v *= C64::new(0.0, -(e[k] - e[l])));
        self.basis.to_position(&rp)
    }
}

#[derive(Debug, Clone)]
pub enum Representation {
    /// Explicit `N² × N²` matrix acting on the row-major vectorization.
    Dense(CMatrix),
    OperatorSum(OperatorSum),
    /// `(𝔇ρ)(x, x′) = -Γ(|x - x′|) ρ(x, x′)` plus an optional free part.
    PositionKernel {
        gamma: Vec<f64>,
        kinetic: Option<Kinetic>,
    },
    MomentumDiagonal(MomentumDiagonal),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Free,
    Position,
    Momentum,
    Breuer,
    Full,
    Cumulant,
    Generic,
}

#[derive(Debug, Clone)]
pub struct Superoperator {
    pub dim: usize,
    pub basis: Basis,
    pub repr: Representation,
    pub regime: Regime,
    pub fingerprint: String,
    /// True when the map is of Lindblad form, so positivity is guaranteed.
    pub lindblad_form: bool,
    pub warnings: Vec<String>,
}

fn fingerprint(parts: &str) -> String {
    hex::encode(Sha256::digest(parts.as_bytes()))
}

impl Superoperator {
    pub fn new(basis: Basis, repr: Representation, regime: Regime, lindblad_form: bool, params: &str) -> Self {
        let dim = match &repr {
            Representation::Dense(m) => (m.nrows() as f64).sqrt().round() as usize,
            Representation::OperatorSum(s) => s.dim(),
            Representation::PositionKernel { gamma, .. } => gamma.len(),
            Representation::MomentumDiagonal(m) => m.grid.n(),
        };
        Self {
            dim,
            basis,
            repr,
            regime,
            fingerprint: fingerprint(&format!("{regime:?}|{params}")),
            lindblad_form,
            warnings: Vec::new(),
        }
    }

    /// Action on a matrix already expressed in `self.basis`.
    pub fn apply_matrix(&self, rho: &CMatrix) -> CMatrix {
        match &self.repr {
            Representation::Dense(s) => {
                let v = s.dot(&linalg::vectorize(rho));
                linalg::unvectorize(&v, self.dim)
            }
            Representation::OperatorSum(s) => s.apply(rho),
            Representation::PositionKernel { gamma, kinetic } => {
                let mut out = match kinetic {
                    Some(k) => k.commutator(rho),
                    None => Array2::zeros(rho.raw_dim()),
                };
                Zip::indexed(&mut out).and(rho).for_each(|(i, j), o, &r| {
                    *o -= r * gamma[i.abs_diff(j)];
                });
                out
            }
            Representation::MomentumDiagonal(m) => m.apply(rho),
        }
    }

    /// Action on a state; the result is expressed in the input's basis.
    pub fn apply(&self, rho: &DenseState) -> Result<DenseState> {
        let inner = rho.in_basis(self.basis)?;
        let out = DenseState {
            matrix: self.apply_matrix(&inner.matrix),
            basis: self.basis,
        };
        out.in_basis(rho.basis)
    }

    /// Explicit `N² × N²` matrix (row-major vectorization).
    pub fn to_dense(&self) -> Result<CMatrix> {
        if let Representation::Dense(m) = &self.repr {
            return Ok(m.clone());
        }
        let n = self.dim;
        if n > DENSE_MAX_N {
            return Err(Error::Capacity(format!(
                "dense superoperator limited to N <= {DENSE_MAX_N}, got {n}; use the structured action"
            )));
        }
        let mut out = Array2::zeros((n * n, n * n));
        let mut e = Array2::zeros((n, n));
        for a in 0..n {
            for b in 0..n {
                e[(a, b)] = creal(1.0);
                let col = linalg::vectorize(&self.apply_matrix(&e));
                out.column_mut(a * n + b).assign(&col);
                e[(a, b)] = czero();
            }
        }
        Ok(out)
    }

    pub fn as_momentum_diagonal(&self) -> Option<&MomentumDiagonal> {
        match &self.repr {
            Representation::MomentumDiagonal(m) => Some(m),
            _ => None,
        }
    }

    /// Largest kinetic energy and largest decay rate, used for step-size bounds.
    pub fn rate_bounds(&self) -> (f64, f64) {
        match &self.repr {
            Representation::PositionKernel { gamma, kinetic } => {
                let e = kinetic
                    .as_ref()
                    .map(|k| k.energies.iter().cloned().fold(0.0, f64::max))
                    .unwrap_or(0.0);
                (e, gamma.iter().cloned().fold(0.0, f64::max))
            }
            Representation::MomentumDiagonal(m) => {
                let e = if m.free {
                    m.energies.iter().cloned().fold(0.0, f64::max)
                } else {
                    0.0
                };
                (e, m.rates.iter().cloned().fold(0.0, f64::max))
            }
            Representation::OperatorSum(s) => {
                let norm = linalg::frobenius(&s.left).max(linalg::frobenius(&s.right));
                (norm, norm)
            }
            Representation::Dense(m) => {
                let norm = m.iter().map(|v| v.norm()).fold(0.0, f64::max) * self.dim as f64;
                (norm, norm)
            }
        }
    }
}

/// `ρ ↦ -i[P²/2M, ρ]`, diagonal in momentum space.
pub fn build_free_liouvillian(grid: &Grid1D, mass: &MassSpec) -> Superoperator {
    let zero = MomentumCoefficients {
        c00: 0.0,
        c0i: 0.0,
        cij: 0.0,
    };
    Superoperator::new(
        Basis::Momentum(*grid),
        Representation::MomentumDiagonal(MomentumDiagonal::new(*grid, mass.m, true, zero)),
        Regime::Free,
        true,
        &format!("{grid:?}|{mass:?}"),
    )
}

/// Position-basis limit `(𝔇ρ)(x, x′) = -Γ(x - x′) ρ(x, x′)` with `λ = τ_c`;
/// the free evolution is included when `kinetic` is set.
pub fn build_position_generator(
    noise: &NoiseSpec,
    ff: &FormFactor,
    grid: &Grid1D,
    kinetic: bool,
) -> Result<Superoperator> {
    let gamma = kernels::position_rate_table(noise, ff, grid)?;
    let kin = kinetic.then(|| Kinetic::new(grid, ff.mass.m));
    let mut s = Superoperator::new(
        Basis::Position(*grid),
        Representation::PositionKernel { gamma, kinetic: kin },
        Regime::Position,
        true,
        &format!("{noise:?}|{:?}|{grid:?}|{kinetic}", ff.mass),
    );
    let w = noise.weights;
    if w.h0i > w.h00 || w.hij > w.h00 {
        s.warnings.push(format!(
            "position-dominant hierarchy not satisfied: weights h00={}, h0i={}, hij={}",
            w.h00, w.h0i, w.hij
        ));
    }
    Ok(s)
}

/// Small-q limit, diagonal in momentum space, with coefficients
/// `C^{μ} = α²λ w_μ (2π)^{-3/2} ∫d³q ũ m̃²/M²`.
pub fn build_momentum_generator(
    noise: &NoiseSpec,
    ff: &FormFactor,
    grid: &Grid1D,
    lambda: f64,
    free: bool,
) -> Result<Superoperator> {
    if !(lambda > 0.0) {
        return Err(Error::Domain(format!("lambda must be positive, got {lambda}")));
    }
    let integral = kernels::momentum_coefficient_integral(noise, ff)?;
    let base = noise.alpha * noise.alpha * lambda * integral;
    let w = noise.weights;
    let coefficients = MomentumCoefficients {
        c00: base * w.h00,
        c0i: base * w.h0i,
        cij: base * w.hij,
    };
    Ok(Superoperator::new(
        Basis::Momentum(*grid),
        Representation::MomentumDiagonal(MomentumDiagonal::new(*grid, ff.mass.m, free, coefficients)),
        Regime::Momentum,
        true,
        &format!("{noise:?}|{:?}|{grid:?}|{lambda}|{free}", ff.mass),
    ))
}

/// Strength of the energy-basis generator.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum BreuerStrength {
    /// Effective correlation time `λ`; the rate coefficient is `α²λ`.
    Lambda(f64),
    /// Spatially averaged correlation time, `α²λ = T_c / 2`.
    Tc(f64),
}

/// `∂ₜρ = -i[H, ρ] - α²λ [H, [H, ρ]]` with `H = P²/2M`.
pub fn build_breuer_generator(
    noise: &NoiseSpec,
    mass: &MassSpec,
    grid: &Grid1D,
    strength: BreuerStrength,
) -> Result<Superoperator> {
    let kappa = match strength {
        BreuerStrength::Lambda(l) if l > 0.0 => noise.alpha * noise.alpha * l,
        BreuerStrength::Tc(t) if t > 0.0 => 0.5 * t,
        other => return Err(Error::Domain(format!("invalid strength {other:?}"))),
    };
    let coefficients = MomentumCoefficients {
        c00: 0.0,
        c0i: 0.0,
        cij: kappa,
    };
    let mut s = Superoperator::new(
        Basis::Momentum(*grid),
        Representation::MomentumDiagonal(MomentumDiagonal::new(*grid, mass.m, true, coefficients)),
        Regime::Breuer,
        true,
        &format!("{noise:?}|{mass:?}|{grid:?}|{strength:?}"),
    );
    if mass.density != Density::Point {
        s.warnings.push("energy-basis form assumes a point mass".into());
    }
    let w = noise.weights;
    if w.h00 > w.hij || w.h0i > w.hij {
        s.warnings.push(format!(
            "hij-dominant hierarchy not satisfied: weights h00={}, h0i={}, hij={}",
            w.h00, w.h0i, w.hij
        ));
    }
    Ok(s)
}

/// Dissipator lines of the full generator, numbered 2 to 7.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct LineMask(pub [bool; 6]);

impl LineMask {
    pub const ALL: LineMask = LineMask([true; 6]);

    pub fn only(line: usize) -> Self {
        let mut m = [false; 6];
        m[line - 2] = true;
        LineMask(m)
    }

    pub fn with(mut self, line: usize, on: bool) -> Self {
        self.0[line - 2] = on;
        self
    }

    pub fn line(&self, line: usize) -> bool {
        self.0[line - 2]
    }
}

#[derive(Debug, Clone, Copy)]
pub struct FullGeneratorOptions {
    pub lines: LineMask,
    pub include_free: bool,
    /// Gauss-Hermite node count; chosen from the grid when absent.
    pub nodes: Option<usize>,
    /// Effective correlation time; `τ_c` when absent.
    pub lambda: Option<f64>,
    /// Add lines 2-5 separately even when all four are enabled.
    pub separate_lines: bool,
}

impl Default for FullGeneratorOptions {
    fn default() -> Self {
        Self {
            lines: LineMask::ALL,
            include_free: true,
            nodes: None,
            lambda: None,
            separate_lines: false,
        }
    }
}

/// q-quadrature for `∫dq ρ₁(q) f(q) ≈ Σ w_k f(q_k)` on symmetric nodes.
pub fn quadrature_nodes(
    noise: &NoiseSpec,
    mass: &MassSpec,
    grid: &Grid1D,
    nodes: Option<usize>,
) -> Result<Vec<(f64, f64)>> {
    let (a1, s) = kernels::transverse_density(noise, mass)?;
    let n = match nodes {
        Some(n) => n,
        None => {
            let omega = 2f64.sqrt() * s * grid.extent();
            (((omega + 11.0).powi(2) / 8.0).ceil() as usize).max(32)
        }
    };
    let n = n + n % 2;
    let (t, w) = quadrature::gauss_hermite(n)?;
    let scale = 2f64.sqrt() * s;
    Ok(t.iter().zip(&w).map(|(&t, &w)| (scale * t, a1 * scale * w)).collect())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
enum Aux {
    I,
    K,
    P,
}

/// `coef · A_left · e^{iqX} · A_right`
#[derive(Debug, Clone, Copy)]
struct PhasedTerm {
    coef: C64,
    left: Aux,
    q: f64,
    right: Aux,
}

type PhasedOp = Vec<PhasedTerm>;

fn term(coef: f64, left: Aux, q: f64, right: Aux) -> PhasedTerm {
    PhasedTerm {
        coef: creal(coef),
        left,
        q,
        right,
    }
}

fn exp_op(c: f64, q: f64) -> PhasedOp {
    vec![term(c, Aux::I, q, Aux::I)]
}

fn anti_op(c: f64, q: f64, a: Aux) -> PhasedOp {
    vec![term(c, Aux::I, q, a), term(c, a, q, Aux::I)]
}

struct Workspace {
    x: Array1<f64>,
    k: Arc<CMatrix>,
    p: Arc<CMatrix>,
}

impl Workspace {
    fn new(grid: &Grid1D, mass: f64) -> Self {
        Self {
            x: grid.positions(),
            k: Arc::new(grid.momentum_function(|p| p * p / (4.0 * mass))),
            p: Arc::new(grid.momentum_matrix()),
        }
    }

    fn aux(&self, a: Aux) -> Option<&Arc<CMatrix>> {
        match a {
            Aux::I => None,
            Aux::K => Some(&self.k),
            Aux::P => Some(&self.p),
        }
    }

    fn phases(&self, q: f64) -> Array1<C64> {
        self.x.mapv(|x| C64::from_polar(1.0, q * x))
    }

    fn dense(&self, op: &PhasedOp) -> CMatrix {
        let n = self.x.len();
        let mut out = Array2::zeros((n, n));
        for t in op {
            let d = self.phases(t.q);
            let m = match (self.aux(t.left), self.aux(t.right)) {
                (None, None) => Array2::from_diag(&d),
                (Some(a), None) => linalg::diag_right(a, &d),
                (None, Some(b)) => linalg::diag_left(&d, b),
                (Some(a), Some(b)) => a.dot(&linalg::diag_left(&d, b)),
            };
            out.scaled_add(t.coef, &m);
        }
        out
    }
}

/// Accumulates double commutators of phased operators, merging all
/// sandwiches that share the same auxiliary factors into one weight matrix.
struct DoubleCommutatorBuilder<'a> {
    ws: &'a Workspace,
    left: CMatrix,
    right: CMatrix,
    classes: BTreeMap<(Aux, Aux, Aux, Aux), CMatrix>,
}

impl<'a> DoubleCommutatorBuilder<'a> {
    fn new(ws: &'a Workspace) -> Self {
        let n = ws.x.len();
        Self {
            ws,
            left: Array2::zeros((n, n)),
            right: Array2::zeros((n, n)),
            classes: BTreeMap::new(),
        }
    }

    fn sandwich(&mut self, coef: C64, a: &PhasedOp, b: &PhasedOp) {
        let n = self.ws.x.len();
        for ta in a {
            let da = self.ws.phases(ta.q);
            for tb in b {
                let db = self.ws.phases(tb.q);
                let c = coef * ta.coef * tb.coef;
                let w = self
                    .classes
                    .entry((ta.left, ta.right, tb.left, tb.right))
                    .or_insert_with(|| Array2::zeros((n, n)));
                Zip::indexed(w).for_each(|(i, j), v| *v += c * da[i] * db[j]);
            }
        }
    }

    /// `coef [X, [Y, ρ]]`
    fn add(&mut self, coef: f64, x: &PhasedOp, y: &PhasedOp) {
        let c = creal(coef);
        let xd = self.ws.dense(x);
        let yd = self.ws.dense(y);
        self.left.scaled_add(c, &xd.dot(&yd));
        self.right.scaled_add(c, &yd.dot(&xd));
        self.sandwich(-c, x, y);
        self.sandwich(-c, y, x);
    }

    fn finish(self) -> OperatorSum {
        let ws = self.ws;
        let sandwiches = self
            .classes
            .into_iter()
            .map(|((l1, l2, r1, r2), w)| SandwichTerm {
                coef: creal(1.0),
                weights: Some(w),
                l1: ws.aux(l1).cloned(),
                l2: ws.aux(l2).cloned(),
                r1: ws.aux(r1).cloned(),
                r2: ws.aux(r2).cloned(),
            })
            .collect();
        OperatorSum {
            left: self.left,
            right: self.right,
            sandwiches,
        }
    }
}

/// Dense coupling operators at momentum transfer `q`:
/// `O_q = c²e^{iqX} + {e^{iqX}, K}/M` (h00), `Q_q = (c/2M){e^{iqX}, P}` (h0i),
/// `S_q = {e^{iqX}, K}/M` (hij), with `K = P²/4M`.
pub struct CouplingOperators {
    pub h00: CMatrix,
    pub h0i: CMatrix,
    pub hij: CMatrix,
}

pub fn coupling_operators(grid: &Grid1D, mass: f64, q: f64) -> CouplingOperators {
    let ws = Workspace::new(grid, mass);
    let c = 1.0;
    let mut o = exp_op(c * c, q);
    o.extend(anti_op(1.0 / mass, q, Aux::K));
    CouplingOperators {
        h00: ws.dense(&o),
        h0i: ws.dense(&anti_op(c / (2.0 * mass), q, Aux::P)),
        hij: ws.dense(&anti_op(1.0 / mass, q, Aux::K)),
    }
}

/// Full Markovian generator in the 1D reduction,
/// `𝔇ρ = -(α²λ/(2π)^{3/2}) ∫dq ρ₁(q) Σ_μ w_μ [X^μ_q, [X^μ_q†, ρ]]`,
/// evaluated on a Gauss-Hermite q-grid with symmetric node pairs.
pub fn build_full_generator(
    noise: &NoiseSpec,
    ff: &FormFactor,
    grid: &Grid1D,
    opts: FullGeneratorOptions,
) -> Result<Superoperator> {
    let n = grid.n();
    if n > FULL_GENERATOR_MAX_N {
        return Err(Error::Capacity(format!(
            "full generator limited to N <= {FULL_GENERATOR_MAX_N}, got {n}; use the position-kernel or momentum-diagonal limits"
        )));
    }
    let mass = ff.mass.m;
    let lambda = opts.lambda.unwrap_or(noise.tau_c);
    let nodes = quadrature_nodes(noise, &ff.mass, grid, opts.nodes)?;
    let ws = Workspace::new(grid, mass);
    let mut b = DoubleCommutatorBuilder::new(&ws);
    let pref = -noise.alpha * noise.alpha * lambda / TWO_PI_3_2;
    let w = noise.weights;
    let c = 1.0;
    let c2 = c * c;
    let lines = opts.lines;
    let square = !opts.separate_lines && (2..=5).all(|l| lines.line(l));
    if pref != 0.0 {
        for &(q, wq) in &nodes {
            let f = pref * wq;
            if w.h00 != 0.0 {
                let f0 = f * w.h00;
                if square {
                    let mut o = exp_op(c2, q);
                    o.extend(anti_op(1.0 / mass, q, Aux::K));
                    let mut od = exp_op(c2, -q);
                    od.extend(anti_op(1.0 / mass, -q, Aux::K));
                    b.add(f0, &o, &od);
                } else {
                    if lines.line(2) {
                        b.add(f0 * c2 * c2, &exp_op(1.0, q), &exp_op(1.0, -q));
                    }
                    if lines.line(3) {
                        b.add(f0 / (mass * mass), &anti_op(1.0, q, Aux::K), &anti_op(1.0, -q, Aux::K));
                    }
                    if lines.line(4) {
                        b.add(f0 * c2 / mass, &exp_op(1.0, q), &anti_op(1.0, -q, Aux::K));
                    }
                    if lines.line(5) {
                        b.add(f0 * c2 / mass, &anti_op(1.0, q, Aux::K), &exp_op(1.0, -q));
                    }
                }
            }
            if w.h0i != 0.0 && lines.line(6) {
                let a = c / (2.0 * mass);
                b.add(f * w.h0i, &anti_op(a, q, Aux::P), &anti_op(a, -q, Aux::P));
            }
            if w.hij != 0.0 && lines.line(7) {
                b.add(
                    f * w.hij,
                    &anti_op(1.0 / mass, q, Aux::K),
                    &anti_op(1.0 / mass, -q, Aux::K),
                );
            }
        }
    }
    let mut sum = b.finish();
    if opts.include_free {
        let h = grid.momentum_function(|p| p * p / (2.0 * mass));
        sum.add_hamiltonian(&h);
    }
    let lindblad = !(lines.line(4) || lines.line(5)) || (2..=5).all(|l| lines.line(l)) || w.h00 == 0.0;
    let mut s = Superoperator::new(
        Basis::Position(*grid),
        Representation::OperatorSum(sum),
        Regime::Full,
        lindblad,
        &format!(
            "{noise:?}|{:?}|{grid:?}|{:?}|{}|{lambda}|{}",
            ff.mass,
            lines,
            nodes.len(),
            opts.include_free
        ),
    );
    if !lindblad {
        s.warnings
            .push("cross-term lines enabled without the matching diagonal lines; positivity is not guaranteed".into());
    }
    Ok(s)
}

/// Energy-basis generator in the position representation, for cross-checks.
pub fn breuer_position_form(gen: &Superoperator) -> Result<Superoperator> {
    let m = gen.as_momentum_diagonal().ok_or_else(|| Error::BasisMismatch {
        expected: "momentum-diagonal generator".into(),
        found: format!("{:?}", gen.regime),
    })?;
    Ok(Superoperator::new(
        Basis::Position(m.grid),
        Representation::OperatorSum(m.to_operator_sum()),
        gen.regime,
        gen.lindblad_form,
        &format!("position-form|{}", gen.fingerprint),
    ))
}

/// Random hermitian, unit-trace matrices, optionally positive semidefinite.
pub fn random_states(n: usize, count: usize, positive: bool, basis: Basis, seed: u64) -> Vec<DenseState> {
    use rand::SeedableRng;
    use rand_distr::{Distribution, StandardNormal};
    let mut rng = rand_chacha::ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let g: CMatrix = Array2::from_shape_fn((n, n), |_| {
                let re: f64 = StandardNormal.sample(&mut rng);
                let im: f64 = StandardNormal.sample(&mut rng);
                C64::new(re, im)
            });
            let mut m = if positive {
                g.dot(&linalg::dagger(&g))
            } else {
                let h = (&g + &linalg::dagger(&g)).mapv(|v| v * 0.5);
                let shift = creal(n as f64);
                h + Array2::from_diag_elem(n, shift)
            };
            let t = linalg::trace(&m);
            m.mapv_inplace(|v| v / t);
            let sym = (&m + &linalg::dagger(&m)).mapv(|v| v * 0.5);
            DenseState { matrix: sym, basis }
        })
        .collect()
}
