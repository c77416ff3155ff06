// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Spatial correlation kernels, mass form factors and the position
//! decoherence rate Γ(Δx).
//!
//! Fourier convention: `f̃(q) = (2π)^{-3/2} ∫ d³x f(x) e^{-iq·x}` for the
//! correlation kernel and `m̃(q) = ∫ d³x ρ_m(x) e^{-iq·x}` for the mass
//! density, so that `m̃(0) = M`.

use std::f64::consts::PI;

use crate::error::{Error, Result};
use crate::model::{Density, Grid1D, KernelKind, MassSpec, NoiseSpec};
use crate::quadrature::{integrate, Tolerance};

/// `(2π)^{3/2}`
pub const TWO_PI_3_2: f64 = 15.749_609_945_722_419;

/// Decay exponent at which spectral integrals are truncated.
const TAIL_EXPONENT: f64 = 64.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CorrelationKernel {
    pub kind: KernelKind,
}

impl CorrelationKernel {
    pub fn new(kind: KernelKind) -> Self {
        Self { kind }
    }

    /// Real-space kernel `u(Δx)`.
    pub fn real(&self, dx: f64) -> Result<f64> {
        match self.kind {
            KernelKind::GaussianL { l } => Ok((-dx * dx / (2.0 * l * l)).exp()),
            KernelKind::DeltaL3 { .. } => Err(Error::Unsupported(
                "delta-correlated kernel has no pointwise real-space value".into(),
            )),
        }
    }

    /// Spectrum `ũ(q)`.
    pub fn spectral(&self, q: f64) -> f64 {
        match self.kind {
            KernelKind::GaussianL { l } => l * l * l * (-0.5 * q * q * l * l).exp(),
            KernelKind::DeltaL3 { l } => l * l * l / TWO_PI_3_2,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FormFactor {
    pub mass: MassSpec,
}

impl FormFactor {
    pub fn new(mass: MassSpec) -> Self {
        Self { mass }
    }

    pub fn eval(&self, q: f64) -> f64 {
        match self.mass.density {
            Density::Point => self.mass.m,
            Density::GaussianR { r } => self.mass.m * (-0.5 * q * q * r * r).exp(),
        }
    }
}

/// Correlation kernel evaluation, see [`CorrelationKernel::real`].
pub fn correlation_real(kernel: &CorrelationKernel, dx: f64) -> Result<f64> {
    kernel.real(dx)
}

/// Form factor evaluation, see [`FormFactor::eval`].
pub fn form_factor(ff: &FormFactor, q: f64) -> f64 {
    ff.eval(q)
}

/// `1 - sin(z)/z`, accurate near zero and exactly zero at the origin.
pub fn one_minus_sinc(z: f64) -> f64 {
    let z = z.abs();
    if z < 0.5 {
        let z2 = z * z;
        z2 * (1.0 / 6.0 - z2 * (1.0 / 120.0 - z2 * (1.0 / 5040.0 - z2 * (1.0 / 362_880.0 - z2 / 39_916_800.0))))
    } else {
        1.0 - z.sin() / z
    }
}

/// Width `a` of the combined spectral decay `ũ m̃² ∝ e^{-a q²}`.
fn spectral_decay(noise: &NoiseSpec, mass: &MassSpec) -> Result<f64> {
    let ker = match noise.kernel {
        KernelKind::GaussianL { l } => 0.5 * l * l,
        KernelKind::DeltaL3 { .. } => 0.0,
    };
    let m = match mass.density {
        Density::Point => 0.0,
        Density::GaussianR { r } => r * r,
    };
    let a = ker + m;
    if a <= 0.0 {
        return Err(Error::Unsupported(
            "delta-correlated kernel with a point mass has a divergent spectral integral".into(),
        ));
    }
    Ok(a)
}

fn q_cutoff(noise: &NoiseSpec, mass: &MassSpec) -> Result<f64> {
    Ok((TAIL_EXPONENT / spectral_decay(noise, mass)?).sqrt())
}

/// Γ(Δx) from radial quadrature of the spectral representation,
/// `Γ = 2α²τ_c w₀₀ (2π)^{-3/2} ∫ d³q ũ(q) m̃²(q) (1 - cos(q_x Δx))`.
pub fn position_rate_spectral(noise: &NoiseSpec, ff: &FormFactor, dx: f64) -> Result<f64> {
    position_rate_spectral_tol(noise, ff, dx, Tolerance::new(1e-9, 0.0))
}

pub fn position_rate_spectral_tol(noise: &NoiseSpec, ff: &FormFactor, dx: f64, tol: Tolerance) -> Result<f64> {
    let kernel = CorrelationKernel::new(noise.kernel);
    let qmax = q_cutoff(noise, &ff.mass)?;
    let d = dx.abs();
    let prefactor = 2.0 * noise.alpha * noise.alpha * noise.tau_c * noise.weights.h00 / TWO_PI_3_2;
    if prefactor == 0.0 || d == 0.0 {
        return Ok(0.0);
    }
    let r = integrate(
        |q: f64| {
            let m = ff.eval(q);
            4.0 * PI * q * q * kernel.spectral(q) * m * m * one_minus_sinc(q * d)
        },
        0.0,
        qmax,
        tol,
    )?;
    Ok(prefactor * r.value)
}

/// Γ tabulated by grid offset `|i - j|`, `Γ[m] = Γ(m dx)`.
pub fn position_rate_table(noise: &NoiseSpec, ff: &FormFactor, grid: &Grid1D) -> Result<Vec<f64>> {
    (0..grid.n())
        .map(|m| position_rate_spectral(noise, ff, m as f64 * grid.dx()))
        .collect()
}

/// Closed-form rate families.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ClosedForm {
    /// Point mass, Gaussian kernel, `τ_c = L/c`: `2α²M²c³L(1 - e^{-Δ²/2L²})`.
    SanchezGomez,
    /// Delta kernel, Gaussian mass: `α²M²τ_c l³/(4π^{3/2}R³)(1 - e^{-Δ²/4R²})`.
    BlencoweGaussian,
    /// Gaussian kernel with point or Gaussian mass at arbitrary `τ_c`.
    GaussianKernel,
}

/// The closed form that applies to a kernel/mass combination, if any.
pub fn closed_form_for(noise: &NoiseSpec, mass: &MassSpec) -> Option<ClosedForm> {
    match (noise.kernel, mass.density) {
        (KernelKind::GaussianL { .. }, _) => Some(ClosedForm::GaussianKernel),
        (KernelKind::DeltaL3 { .. }, Density::GaussianR { .. }) => Some(ClosedForm::BlencoweGaussian),
        (KernelKind::DeltaL3 { .. }, Density::Point) => None,
    }
}

pub fn position_rate_closed_form(form: ClosedForm, noise: &NoiseSpec, mass: &MassSpec, dx: f64) -> Result<f64> {
    let a2 = noise.alpha * noise.alpha * noise.weights.h00;
    let m2 = mass.m * mass.m;
    match (form, noise.kernel, mass.density) {
        (ClosedForm::SanchezGomez, KernelKind::GaussianL { l }, Density::Point) => {
            Ok(2.0 * a2 * m2 * l * -(-dx * dx / (2.0 * l * l)).exp_m1())
        }
        (ClosedForm::BlencoweGaussian, KernelKind::DeltaL3 { l }, Density::GaussianR { r }) => {
            let pref = a2 * m2 * noise.tau_c * l * l * l / (4.0 * PI.powf(1.5) * r * r * r);
            Ok(pref * -(-dx * dx / (4.0 * r * r)).exp_m1())
        }
        (ClosedForm::GaussianKernel, KernelKind::GaussianL { l }, density) => {
            let r2 = match density {
                Density::Point => 0.0,
                Density::GaussianR { r } => r * r,
            };
            let w = l * l + 2.0 * r2;
            let pref = 2.0 * a2 * noise.tau_c * m2 * (l * l / w).powf(1.5);
            Ok(pref * -(-dx * dx / (2.0 * w)).exp_m1())
        }
        _ => Err(Error::Unsupported(format!(
            "closed form {form:?} does not apply to kernel {:?} with mass {:?}",
            noise.kernel, mass.density
        ))),
    }
}

/// Mass-smeared axial kernel `ū(Δ)` with `Γ(Δ) = 2α²τ_c w₀₀ M² (ū(0) - ū(Δ))`.
pub fn axial_kernel(noise: &NoiseSpec, mass: &MassSpec, dx: f64) -> Result<f64> {
    match (noise.kernel, mass.density) {
        (KernelKind::GaussianL { l }, density) => {
            let r2 = match density {
                Density::Point => 0.0,
                Density::GaussianR { r } => r * r,
            };
            let w = l * l + 2.0 * r2;
            Ok((l * l / w).powf(1.5) * (-dx * dx / (2.0 * w)).exp())
        }
        (KernelKind::DeltaL3 { l }, Density::GaussianR { r }) => {
            Ok(l * l * l / (8.0 * PI.powf(1.5) * r * r * r) * (-dx * dx / (4.0 * r * r)).exp())
        }
        (KernelKind::DeltaL3 { .. }, Density::Point) => Err(Error::Unsupported(
            "delta-correlated kernel with a point mass has no pointwise axial kernel".into(),
        )),
    }
}

/// Transverse-integrated spectral density `ρ₁(q) = ∫dq_y dq_z ũ m̃² = A₁ e^{-q²/2s²}`;
/// returns `(A₁, s)`.
pub fn transverse_density(noise: &NoiseSpec, mass: &MassSpec) -> Result<(f64, f64)> {
    let m2 = mass.m * mass.m;
    let r2 = match mass.density {
        Density::Point => 0.0,
        Density::GaussianR { r } => r * r,
    };
    match noise.kernel {
        KernelKind::GaussianL { l } => {
            let s2 = 1.0 / (l * l + 2.0 * r2);
            Ok((2.0 * PI * s2 * m2 * l * l * l, s2.sqrt()))
        }
        KernelKind::DeltaL3 { l } => {
            if r2 == 0.0 {
                return Err(Error::Unsupported(
                    "delta-correlated kernel needs a Gaussian mass for a finite q-spectrum".into(),
                ));
            }
            let s2 = 1.0 / (2.0 * r2);
            Ok((l * l * l / TWO_PI_3_2 * m2 * PI / r2, s2.sqrt()))
        }
    }
}

/// `(2π)^{-3/2} ∫ d³q ũ(q) m̃²(q) / M²` by radial quadrature; multiplying by
/// `α²λ w` gives the momentum-limit coefficients.
pub fn momentum_coefficient_integral(noise: &NoiseSpec, ff: &FormFactor) -> Result<f64> {
    let kernel = CorrelationKernel::new(noise.kernel);
    let qmax = q_cutoff(noise, &ff.mass)?;
    let m2 = ff.mass.m * ff.mass.m;
    let r = integrate(
        |q: f64| {
            let m = ff.eval(q);
            4.0 * PI * q * q * kernel.spectral(q) * m * m / m2
        },
        0.0,
        qmax,
        Tolerance::new(1e-12, 0.0),
    )?;
    Ok(r.value / TWO_PI_3_2)
}

/// Γ(Δx) for a delta kernel and Gaussian mass by direct numerical integration
/// of the real-space form `α²τ_c l³ ∫ d³y (ρ_m(y) - ρ_m(y - Δ))²`.
pub fn blencowe_rate_numerical(noise: &NoiseSpec, mass: &MassSpec, dx: f64) -> Result<f64> {
    let (l, r) = match (noise.kernel, mass.density) {
        (KernelKind::DeltaL3 { l }, Density::GaussianR { r }) => (l, r),
        _ => {
            return Err(Error::Unsupported(
                "real-space delta-kernel rate needs a delta kernel and a Gaussian mass".into(),
            ))
        }
    };
    let norm = mass.m / (TWO_PI_3_2 * r * r * r);
    let density = |rho2: f64, z: f64| norm * (-(rho2 + z * z) / (2.0 * r * r)).exp();
    let d = dx.abs();
    let reach = r * (2.0 * TAIL_EXPONENT).sqrt();
    let tol = Tolerance::new(1e-12, 0.0);
    let mut failure = None;
    let outer = integrate(
        |rho: f64| {
            let inner = integrate(
                |z: f64| {
                    let diff = density(rho * rho, z) - density(rho * rho, z - d);
                    diff * diff
                },
                -reach,
                d + reach,
                tol,
            );
            match inner {
                Ok(v) => 2.0 * PI * rho * v.value,
                Err(e) => {
                    failure.get_or_insert(e);
                    0.0
                }
            }
        },
        0.0,
        reach,
        tol,
    )?;
    if let Some(e) = failure {
        return Err(e);
    }
    Ok(noise.alpha * noise.alpha * noise.tau_c * noise.weights.h00 * l * l * l * outer.value)
}
