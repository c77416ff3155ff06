// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Physical parameters, units, grids and density-matrix containers.

use ndarray::{Array1, Array2};
use serde_json::Value;

use crate::error::{Error, FieldError, Result};
use crate::linalg::{self, SpectralBasis};
use crate::{CMatrix, C64};

/// Reduced Planck constant in J·s.
pub const HBAR_SI: f64 = 1.054_571_817e-34;
/// Speed of light in m/s.
pub const C_SI: f64 = 299_792_458.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Units {
    Natural,
    Si,
}

/// Unit system. Internally ħ = c = 1 and lengths are measured in
/// `length_unit_m` metres.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Scales {
    pub units: Units,
    pub length_unit_m: f64,
}

impl Default for Scales {
    fn default() -> Self {
        Self {
            units: Units::Natural,
            length_unit_m: 1.0,
        }
    }
}

impl Scales {
    pub const HBAR: f64 = 1.0;
    pub const C: f64 = 1.0;

    pub fn new(units: Units, length_unit_m: f64) -> Result<Self> {
        if !(length_unit_m > 0.0 && length_unit_m.is_finite()) {
            return Err(Error::Domain("length unit must be positive".into()));
        }
        Ok(Self { units, length_unit_m })
    }

    pub fn length_to_si(&self, x: f64) -> f64 {
        x * self.length_unit_m
    }
    pub fn length_from_si(&self, x: f64) -> f64 {
        x / self.length_unit_m
    }
    pub fn time_to_si(&self, t: f64) -> f64 {
        t * self.length_unit_m / C_SI
    }
    pub fn time_from_si(&self, t: f64) -> f64 {
        t * C_SI / self.length_unit_m
    }
    pub fn mass_to_si(&self, m: f64) -> f64 {
        m * HBAR_SI / (self.length_unit_m * C_SI)
    }
    pub fn mass_from_si(&self, m: f64) -> f64 {
        m * self.length_unit_m * C_SI / HBAR_SI
    }
    pub fn energy_to_si(&self, e: f64) -> f64 {
        e * HBAR_SI * C_SI / self.length_unit_m
    }
    pub fn energy_from_si(&self, e: f64) -> f64 {
        e * self.length_unit_m / (HBAR_SI * C_SI)
    }
    pub fn rate_to_si(&self, r: f64) -> f64 {
        r * C_SI / self.length_unit_m
    }
    pub fn rate_from_si(&self, r: f64) -> f64 {
        r * self.length_unit_m / C_SI
    }
    pub fn momentum_to_si(&self, p: f64) -> f64 {
        p * HBAR_SI / self.length_unit_m
    }
    pub fn momentum_from_si(&self, p: f64) -> f64 {
        p * self.length_unit_m / HBAR_SI
    }
}

/// Spatial correlation family of the metric fluctuation.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum KernelKind {
    /// `u(Δ) = exp(-Δ²/2L²)`
    GaussianL { l: f64 },
    /// `u(Δ) = l³ δ³(Δ)`
    DeltaL3 { l: f64 },
}

/// Relative weights of the `h00`, `h0i` and `hij` blocks.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ComponentWeights {
    pub h00: f64,
    pub h0i: f64,
    pub hij: f64,
}

impl Default for ComponentWeights {
    fn default() -> Self {
        Self {
            h00: 1.0,
            h0i: 0.0,
            hij: 0.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct NoiseSpec {
    pub alpha: f64,
    pub tau_c: f64,
    pub kernel: KernelKind,
    pub weights: ComponentWeights,
}

impl NoiseSpec {
    pub fn new(alpha: f64, tau_c: f64, kernel: KernelKind, weights: ComponentWeights) -> Result<Self> {
        let s = Self {
            alpha,
            tau_c,
            kernel,
            weights,
        };
        let errs = s.violations();
        if errs.is_empty() {
            Ok(s)
        } else {
            Err(Error::Validation(errs))
        }
    }

    fn violations(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        if !(self.alpha >= 0.0 && self.alpha.is_finite()) {
            e.push(FieldError::new("noise.alpha", "must be finite and >= 0"));
        }
        if !(self.tau_c > 0.0 && self.tau_c.is_finite()) {
            e.push(FieldError::new("noise.tau_c", "must be finite and > 0"));
        }
        match self.kernel {
            KernelKind::GaussianL { l } if !(l > 0.0 && l.is_finite()) => {
                e.push(FieldError::new("noise.L", "must be finite and > 0"))
            }
            KernelKind::DeltaL3 { l } if !(l > 0.0 && l.is_finite()) => {
                e.push(FieldError::new("noise.l", "must be finite and > 0"))
            }
            _ => {}
        }
        for (name, w) in [
            ("noise.weights.h00", self.weights.h00),
            ("noise.weights.h0i", self.weights.h0i),
            ("noise.weights.hij", self.weights.hij),
        ] {
            if !(w >= 0.0 && w.is_finite()) {
                e.push(FieldError::new(name, "must be finite and >= 0"));
            }
        }
        e
    }

    pub fn with_alpha(mut self, alpha: f64) -> Self {
        self.alpha = alpha;
        self
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Density {
    Point,
    GaussianR { r: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MassSpec {
    pub m: f64,
    pub density: Density,
}

impl MassSpec {
    pub fn new(m: f64, density: Density) -> Result<Self> {
        let s = Self { m, density };
        let errs = s.violations();
        if errs.is_empty() {
            Ok(s)
        } else {
            Err(Error::Validation(errs))
        }
    }

    pub fn point(m: f64) -> Result<Self> {
        Self::new(m, Density::Point)
    }

    fn violations(&self) -> Vec<FieldError> {
        let mut e = Vec::new();
        if !(self.m > 0.0 && self.m.is_finite()) {
            e.push(FieldError::new("mass.M", "must be finite and > 0"));
        }
        if let Density::GaussianR { r } = self.density {
            if !(r > 0.0 && r.is_finite()) {
                e.push(FieldError::new("mass.R", "must be finite and > 0"));
            }
        }
        e
    }
}

/// Periodic grid `x_j = -extent/2 + j dx`, `j = 0..n`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid1D {
    n: usize,
    extent: f64,
}

impl Grid1D {
    pub fn new(n: usize, extent: f64) -> Result<Self> {
        let mut e = Vec::new();
        if n < 8 || !n.is_power_of_two() {
            e.push(FieldError::new("grid.n", "must be a power of two and >= 8"));
        }
        if !(extent > 0.0 && extent.is_finite()) {
            e.push(FieldError::new("grid.extent", "must be finite and > 0"));
        }
        if e.is_empty() {
            Ok(Self { n, extent })
        } else {
            Err(Error::Validation(e))
        }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn extent(&self) -> f64 {
        self.extent
    }

    pub fn dx(&self) -> f64 {
        self.extent / self.n as f64
    }

    pub fn x(&self, j: usize) -> f64 {
        -0.5 * self.extent + j as f64 * self.dx()
    }

    pub fn positions(&self) -> Array1<f64> {
        (0..self.n).map(|j| self.x(j)).collect()
    }

    /// Momentum of FFT bin `k`; bins `k >= n/2` carry negative momenta so the
    /// nodes span `[-π/dx, π/dx)`.
    pub fn p(&self, k: usize) -> f64 {
        let kk = if k < self.n / 2 {
            k as f64
        } else {
            k as f64 - self.n as f64
        };
        2.0 * std::f64::consts::PI * kk / self.extent
    }

    pub fn momenta(&self) -> Array1<f64> {
        (0..self.n).map(|k| self.p(k)).collect()
    }

    pub fn p_max(&self) -> f64 {
        std::f64::consts::PI / self.dx()
    }

    /// Kinetic energies `p²/2M` in FFT order.
    pub fn kinetic_energies(&self, mass: f64) -> Array1<f64> {
        self.momenta().mapv(|p| p * p / (2.0 * mass))
    }

    pub fn spectral(&self) -> SpectralBasis {
        SpectralBasis::new(self.n)
    }

    /// Position-basis matrix of `P`.
    pub fn momentum_matrix(&self) -> CMatrix {
        let d = self.momenta().mapv(|p| C64::new(p, 0.0));
        self.spectral().momentum_operator(&d)
    }

    /// Position-basis matrix of `f(P)`.
    pub fn momentum_function(&self, f: impl Fn(f64) -> f64) -> CMatrix {
        let d = self.momenta().mapv(|p| C64::new(f(p), 0.0));
        self.spectral().momentum_operator(&d)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Basis {
    Position(Grid1D),
    Momentum(Grid1D),
    Abstract,
}

impl Basis {
    pub fn name(&self) -> &'static str {
        match self {
            Basis::Position(_) => "position",
            Basis::Momentum(_) => "momentum",
            Basis::Abstract => "abstract",
        }
    }

    pub fn grid(&self) -> Option<Grid1D> {
        match self {
            Basis::Position(g) | Basis::Momentum(g) => Some(*g),
            Basis::Abstract => None,
        }
    }
}

pub const HERMITICITY_TOL: f64 = 1e-10;
pub const TRACE_TOL: f64 = 1e-10;
pub const POSITIVITY_TOL: f64 = -1e-8;

/// Density matrix on a grid or an abstract N-level system.
#[derive(Debug, Clone, PartialEq)]
pub struct DenseState {
    pub matrix: CMatrix,
    pub basis: Basis,
}

impl DenseState {
    pub fn new(matrix: CMatrix, basis: Basis) -> Result<Self> {
        let (r, c) = matrix.dim();
        if r != c {
            return Err(Error::Domain(format!("density matrix must be square, got {r}x{c}")));
        }
        if let Some(g) = basis.grid() {
            if g.n() != r {
                return Err(Error::Domain(format!(
                    "grid has {} points but matrix is {r}x{r}",
                    g.n()
                )));
            }
        }
        Ok(Self { matrix, basis })
    }

    pub fn from_pure(psi: &PureState) -> Self {
        let v = &psi.vector;
        let n = v.len();
        let matrix = Array2::from_shape_fn((n, n), |(i, j)| v[i] * v[j].conj());
        Self {
            matrix,
            basis: psi.basis,
        }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> C64 {
        linalg::trace(&self.matrix)
    }

    /// `‖ρ - ρ†‖_F / ‖ρ‖_F`
    pub fn hermiticity_error(&self) -> f64 {
        let norm = linalg::frobenius(&self.matrix);
        if norm == 0.0 {
            return 0.0;
        }
        linalg::frobenius(&(&self.matrix - &linalg::dagger(&self.matrix))) / norm
    }

    pub fn purity(&self) -> f64 {
        let m = &self.matrix;
        let n = self.dim();
        let mut s = 0.0;
        for i in 0..n {
            for j in 0..n {
                s += (m[(i, j)] * m[(j, i)]).re;
            }
        }
        s
    }

    pub fn min_eigenvalue(&self) -> f64 {
        linalg::min_eigenvalue(&self.matrix)
    }

    pub fn normalize(&mut self) -> Result<()> {
        let t = self.trace();
        if t.norm() == 0.0 || !t.re.is_finite() {
            return Err(Error::Domain("cannot normalize a traceless state".into()));
        }
        let s = C64::new(1.0, 0.0) / t;
        self.matrix.mapv_inplace(|v| v * s);
        Ok(())
    }

    /// Checks trace and hermiticity, plus positivity when requested.
    pub fn check_invariants(&self, positivity: bool) -> Result<()> {
        let t = self.trace();
        if (t - C64::new(1.0, 0.0)).norm() > TRACE_TOL {
            return Err(Error::numerical(format!("trace drift: tr ρ = {t}")));
        }
        let h = self.hermiticity_error();
        if h > HERMITICITY_TOL {
            return Err(Error::numerical(format!("hermiticity error {h:e}")));
        }
        if positivity {
            let e = self.min_eigenvalue();
            if e < POSITIVITY_TOL {
                return Err(Error::numerical(format!("negative eigenvalue {e:e}")));
            }
        }
        Ok(())
    }

    pub fn to_momentum(&self) -> Result<Self> {
        match self.basis {
            Basis::Momentum(_) => Ok(self.clone()),
            Basis::Position(g) => Ok(Self {
                matrix: g.spectral().to_momentum(&self.matrix),
                basis: Basis::Momentum(g),
            }),
            Basis::Abstract => Err(Error::BasisMismatch {
                expected: "grid basis".into(),
                found: "abstract".into(),
            }),
        }
    }

    pub fn to_position(&self) -> Result<Self> {
        match self.basis {
            Basis::Position(_) => Ok(self.clone()),
            Basis::Momentum(g) => Ok(Self {
                matrix: g.spectral().to_position(&self.matrix),
                basis: Basis::Position(g),
            }),
            Basis::Abstract => Err(Error::BasisMismatch {
                expected: "grid basis".into(),
                found: "abstract".into(),
            }),
        }
    }

    /// Same state expressed in `target`; grids must agree.
    pub fn in_basis(&self, target: Basis) -> Result<Self> {
        let mismatch = || Error::BasisMismatch {
            expected: target.name().into(),
            found: self.basis.name().into(),
        };
        match (self.basis, target) {
            (Basis::Abstract, Basis::Abstract) => Ok(self.clone()),
            (Basis::Abstract, _) | (_, Basis::Abstract) => Err(mismatch()),
            (a, b) if a.grid() != b.grid() => Err(mismatch()),
            (_, Basis::Position(_)) => self.to_position(),
            (_, Basis::Momentum(_)) => self.to_momentum(),
        }
    }

    /// Probability contained in the outer `fraction` of the grid on each side.
    pub fn boundary_mass(&self, fraction: f64) -> f64 {
        let n = self.dim();
        let k = ((n as f64 * fraction).ceil() as usize).max(1);
        let diag = self.matrix.diag();
        (0..k).map(|i| diag[i].re + diag[n - 1 - i].re).sum()
    }
}

/// Normalized pure state.
#[derive(Debug, Clone, PartialEq)]
pub struct PureState {
    pub vector: Array1<C64>,
    pub basis: Basis,
}

impl PureState {
    pub fn new(mut vector: Array1<C64>, basis: Basis) -> Result<Self> {
        let norm = vector.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt();
        if norm == 0.0 || !norm.is_finite() {
            return Err(Error::Domain("state vector has zero norm".into()));
        }
        vector.mapv_inplace(|v| v / norm);
        Ok(Self { vector, basis })
    }

    pub fn norm(&self) -> f64 {
        self.vector.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }

    /// Gaussian packet `exp(-(x-x0)²/4σ² + i p0 x)`.
    pub fn gaussian(grid: Grid1D, x0: f64, sigma: f64, p0: f64) -> Result<Self> {
        let v = grid.positions().mapv(|x| {
            let g = (-(x - x0) * (x - x0) / (4.0 * sigma * sigma)).exp();
            C64::from_polar(g, p0 * x)
        });
        Self::new(v, Basis::Position(grid))
    }

    /// Even superposition of two Gaussian packets centred at `±separation/2`.
    pub fn cat(grid: Grid1D, separation: f64, sigma: f64) -> Result<Self> {
        let a = Self::gaussian(grid, -0.5 * separation, sigma, 0.0)?;
        let b = Self::gaussian(grid, 0.5 * separation, sigma, 0.0)?;
        Self::new(&a.vector + &b.vector, Basis::Position(grid))
    }

    /// Uniform amplitude on every grid site.
    pub fn uniform(grid: Grid1D) -> Self {
        let n = grid.n();
        let v = Array1::from_elem(n, C64::new(1.0 / (n as f64).sqrt(), 0.0));
        Self {
            vector: v,
            basis: Basis::Position(grid),
        }
    }
}

/// Effective correlation time `λ = min(τ_c, t)`.
pub fn lambda_eff(tau_c: f64, t: f64) -> Result<f64> {
    if !(tau_c > 0.0) || !(t >= 0.0) {
        return Err(Error::Domain(format!(
            "lambda_eff needs tau_c > 0 and t >= 0, got ({tau_c}, {t})"
        )));
    }
    Ok(tau_c.min(t))
}

/// A validated parameter set.
#[derive(Debug, Clone, PartialEq)]
pub struct Model {
    pub scales: Scales,
    pub noise: NoiseSpec,
    pub mass: MassSpec,
    pub grid: Grid1D,
    pub seed: Option<u64>,
}

struct Reader<'a> {
    root: &'a Value,
    errors: Vec<FieldError>,
}

impl<'a> Reader<'a> {
    fn get(&self, path: &str) -> Option<&'a Value> {
        let mut v = self.root;
        for part in path.split('.') {
            v = v.get(part)?;
        }
        Some(v)
    }

    fn f64_opt(&mut self, path: &str) -> Option<f64> {
        match self.get(path) {
            None | Some(Value::Null) => None,
            Some(Value::Number(n)) => n.as_f64(),
            Some(_) => {
                self.errors.push(FieldError::new(path, "must be a number"));
                None
            }
        }
    }

    fn f64_req(&mut self, path: &str) -> Option<f64> {
        let present = matches!(self.get(path), Some(v) if !v.is_null());
        if !present {
            self.errors.push(FieldError::new(path, "missing required key"));
            return None;
        }
        self.f64_opt(path)
    }

    fn str_opt(&mut self, path: &str) -> Option<&'a str> {
        match self.get(path) {
            None | Some(Value::Null) => None,
            Some(Value::String(s)) => Some(s.as_str()),
            Some(_) => {
                self.errors.push(FieldError::new(path, "must be a string"));
                None
            }
        }
    }

    fn str_req(&mut self, path: &str) -> Option<&'a str> {
        if self.get(path).is_none() {
            self.errors.push(FieldError::new(path, "missing required key"));
            return None;
        }
        self.str_opt(path)
    }

    fn positive(&mut self, path: &str, v: Option<f64>) -> Option<f64> {
        match v {
            Some(x) if x > 0.0 && x.is_finite() => Some(x),
            Some(_) => {
                self.errors.push(FieldError::new(path, "must be finite and > 0"));
                None
            }
            None => None,
        }
    }
}

/// Validates a parsed JSON configuration, collecting every violated
/// constraint by field name.
pub fn validate_model(raw: &Value) -> Result<Model> {
    let mut r = Reader {
        root: raw,
        errors: Vec::new(),
    };
    if !raw.is_object() {
        return Err(Error::Validation(vec![FieldError::new(
            "<root>",
            "config must be a JSON object",
        )]));
    }

    let units = match r.str_opt("scales.units") {
        None | Some("natural") => Units::Natural,
        Some("si") => Units::Si,
        Some(other) => {
            r.errors.push(FieldError::new(
                "scales.units",
                format!("unknown units {other:?}; expected natural or si"),
            ));
            Units::Natural
        }
    };
    let length_unit = match units {
        Units::Natural => r.f64_opt("scales.length_unit_m").unwrap_or(1.0),
        Units::Si => {
            let v = r.f64_req("scales.length_unit_m");
            r.positive("scales.length_unit_m", v).unwrap_or(1.0)
        }
    };
    let scales = Scales {
        units,
        length_unit_m: if length_unit > 0.0 { length_unit } else { 1.0 },
    };
    let si = units == Units::Si;
    let len = |x: f64| if si { scales.length_from_si(x) } else { x };
    let time = |x: f64| if si { scales.time_from_si(x) } else { x };
    let mass_conv = |x: f64| if si { scales.mass_from_si(x) } else { x };

    let alpha = r.f64_req("noise.alpha");
    if let Some(a) = alpha {
        if !(a >= 0.0 && a.is_finite()) {
            r.errors.push(FieldError::new("noise.alpha", "must be finite and >= 0"));
        }
    }
    let tau_c = r.f64_req("noise.tau_c");
    let tau_c = r.positive("noise.tau_c", tau_c).map(time);
    let kernel = match r.str_req("noise.kernel") {
        Some("gaussian") | Some("GaussianL") => {
            let v = r.f64_req("noise.L");
            r.positive("noise.L", v).map(|l| KernelKind::GaussianL { l: len(l) })
        }
        Some("delta") | Some("DeltaL3") => {
            let v = r.f64_req("noise.l");
            r.positive("noise.l", v).map(|l| KernelKind::DeltaL3 { l: len(l) })
        }
        Some(other) => {
            r.errors.push(FieldError::new(
                "noise.kernel",
                format!("unknown kernel {other:?}; expected gaussian or delta"),
            ));
            None
        }
        None => None,
    };
    let mut weights = ComponentWeights::default();
    if r.get("noise.weights").is_some() {
        for (key, slot) in [
            ("noise.weights.h00", &mut weights.h00),
            ("noise.weights.h0i", &mut weights.h0i),
            ("noise.weights.hij", &mut weights.hij),
        ] {
            if let Some(w) = r.f64_opt(key) {
                if w >= 0.0 && w.is_finite() {
                    *slot = w;
                } else {
                    r.errors.push(FieldError::new(key, "must be finite and >= 0"));
                }
            } else if key == "noise.weights.h00" {
                *slot = 0.0;
            }
        }
    }

    let m = r.f64_req("mass.M");
    let m = r.positive("mass.M", m).map(mass_conv);
    let density = match r.str_opt("mass.kind") {
        None | Some("point") => Some(Density::Point),
        Some("gaussian") => {
            let v = r.f64_req("mass.R");
            r.positive("mass.R", v).map(|x| Density::GaussianR { r: len(x) })
        }
        Some(other) => {
            r.errors.push(FieldError::new(
                "mass.kind",
                format!("unknown mass kind {other:?}; expected point or gaussian"),
            ));
            None
        }
    };

    let n = match r.get("grid.n") {
        Some(Value::Number(v)) => match v.as_u64() {
            Some(n) if n >= 8 && n.is_power_of_two() && n <= (1 << 20) => Some(n as usize),
            _ => {
                r.errors.push(FieldError::new("grid.n", "must be a power of two >= 8"));
                None
            }
        },
        Some(_) => {
            r.errors.push(FieldError::new("grid.n", "must be an integer"));
            None
        }
        None => {
            r.errors.push(FieldError::new("grid.n", "missing required key"));
            None
        }
    };
    let extent = r.f64_req("grid.extent");
    let extent = r.positive("grid.extent", extent).map(len);

    let seed = match r.get("seed") {
        None | Some(Value::Null) => None,
        Some(Value::Number(v)) if v.as_u64().is_some() => v.as_u64(),
        Some(_) => {
            r.errors
                .push(FieldError::new("seed", "must be an unsigned 64-bit integer"));
            None
        }
    };

    if !r.errors.is_empty() {
        return Err(Error::Validation(r.errors));
    }
    let noise = NoiseSpec::new(alpha.unwrap(), tau_c.unwrap(), kernel.unwrap(), weights)?;
    let mass = MassSpec::new(m.unwrap(), density.unwrap())?;
    let grid = Grid1D::new(n.unwrap(), extent.unwrap())?;
    Ok(Model {
        scales,
        noise,
        mass,
        grid,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use serde_json::json;

    fn minimal() -> Value {
        json!({
            "scales": {"units": "natural"},
            "noise": {"alpha": 0.1, "tau_c": 1.0, "kernel": "gaussian", "L": 1.0},
            "mass": {"M": 1.0, "kind": "point"},
            "grid": {"n": 64, "extent": 16.0}
        })
    }

    fn fields(e: Error) -> Vec<String> {
        match e {
            Error::Validation(v) => v.into_iter().map(|f| f.field).collect(),
            other => panic!("expected validation error, got {other:?}"),
        }
    }

    #[test]
    fn lambda_eff_examples() {
        assert_eq!(lambda_eff(2.0, 5.0).unwrap(), 2.0);
        assert_eq!(lambda_eff(2.0, 0.5).unwrap(), 0.5);
        assert_eq!(lambda_eff(1.0, 1.0).unwrap(), 1.0);
        assert!(lambda_eff(-1.0, 1.0).is_err());
        assert!(lambda_eff(1.0, -1.0).is_err());
    }

    #[test]
    fn minimal_config_validates() {
        let m = validate_model(&minimal()).unwrap();
        assert_eq!(m.grid.n(), 64);
        assert_eq!(m.noise.kernel, KernelKind::GaussianL { l: 1.0 });
        assert_eq!(m.mass.density, Density::Point);
        assert_eq!(m.noise.weights, ComponentWeights::default());
    }

    #[test]
    fn negative_alpha_is_named() {
        let mut c = minimal();
        c["noise"]["alpha"] = json!(-1.0);
        assert_eq!(fields(validate_model(&c).unwrap_err()), vec!["noise.alpha"]);
    }

    #[test]
    fn non_power_of_two_grid_is_named() {
        let mut c = minimal();
        c["grid"]["n"] = json!(100);
        assert_eq!(fields(validate_model(&c).unwrap_err()), vec!["grid.n"]);
    }

    #[test]
    fn collects_every_violation() {
        let c = json!({"noise": {"alpha": -1.0, "tau_c": 0.0, "kernel": "gaussian", "L": 1.0},
                       "mass": {"M": -2.0}, "grid": {"n": 12}});
        let f = fields(validate_model(&c).unwrap_err());
        for name in ["noise.alpha", "noise.tau_c", "mass.M", "grid.n", "grid.extent"] {
            assert!(f.iter().any(|x| x == name), "{name} missing from {f:?}");
        }
    }

    #[test]
    fn si_round_trip() {
        let s = Scales::new(Units::Si, 1e-6).unwrap();
        for v in [1e-30, 3.7, 1e12] {
            assert_relative_eq!(s.length_from_si(s.length_to_si(v)), v, max_relative = 1e-12);
            assert_relative_eq!(s.time_from_si(s.time_to_si(v)), v, max_relative = 1e-12);
            assert_relative_eq!(s.mass_from_si(s.mass_to_si(v)), v, max_relative = 1e-12);
            assert_relative_eq!(s.energy_from_si(s.energy_to_si(v)), v, max_relative = 1e-12);
            assert_relative_eq!(s.rate_from_si(s.rate_to_si(v)), v, max_relative = 1e-12);
            assert_relative_eq!(s.momentum_from_si(s.momentum_to_si(v)), v, max_relative = 1e-12);
        }
    }

    #[test]
    fn si_config_converts_lengths() {
        let mut c = minimal();
        c["scales"] = json!({"units": "si", "length_unit_m": 1e-6});
        c["noise"]["L"] = json!(2e-6);
        c["grid"]["extent"] = json!(1.6e-5);
        let m = validate_model(&c).unwrap();
        assert_eq!(m.noise.kernel, KernelKind::GaussianL { l: 2.0 });
        assert_relative_eq!(m.grid.extent(), 16.0, max_relative = 1e-15);
    }

    #[test]
    fn grid_nodes() {
        let g = Grid1D::new(8, 4.0).unwrap();
        assert_eq!(g.x(0), -2.0);
        assert_relative_eq!(g.dx() * 8.0, 4.0);
        let p = g.momenta();
        let pmax = g.p_max();
        assert!(p.iter().all(|&v| v >= -pmax && v < pmax));
        assert_relative_eq!(p[4], -pmax);
        assert!(Grid1D::new(4, 1.0).is_err());
    }

    #[test]
    fn pure_state_invariants() {
        let g = Grid1D::new(32, 16.0).unwrap();
        let psi = PureState::cat(g, 6.0, 0.7).unwrap();
        assert_relative_eq!(psi.norm(), 1.0, epsilon = 1e-14);
        let rho = DenseState::from_pure(&psi);
        rho.check_invariants(true).unwrap();
        assert_relative_eq!(rho.purity(), 1.0, epsilon = 1e-12);
        let back = rho.to_momentum().unwrap().to_position().unwrap();
        assert!(linalg::frobenius(&(back.matrix - &rho.matrix)) < 1e-12);
    }
}
