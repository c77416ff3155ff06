// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Time evolution: Strang split-step, closed-form momentum dephasing and
//! adaptive Runge-Kutta on the structured generator action.

use ndarray::{Array2, Zip};

use crate::error::{Error, Result};
use crate::generators::{Representation, Superoperator, FULL_GENERATOR_MAX_N};
use crate::linalg;
use crate::model::{Basis, DenseState, HERMITICITY_TOL, TRACE_TOL};
use crate::ode::{self, OdeOptions};
use crate::{CMatrix, C64};

/// Boundary region monitored for wrap-around, as a fraction of the grid per side.
pub const BOUNDARY_FRACTION: f64 = 1.0 / 16.0;
pub const BOUNDARY_WARN: f64 = 1e-6;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Method {
    SplitStep,
    MomentumExact,
    DenseRK,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PropagationPlan {
    pub dt: f64,
    pub steps: usize,
    pub snapshot_stride: usize,
    pub method: Method,
    /// Also assert `λ_min ≥ -1e-8` at every snapshot (one eigendecomposition each).
    pub check_positivity: bool,
}

impl PropagationPlan {
    pub fn new(dt: f64, steps: usize, snapshot_stride: usize, method: Method) -> Result<Self> {
        if !(dt > 0.0 && dt.is_finite()) {
            return Err(Error::Domain(format!("dt must be positive, got {dt}")));
        }
        if snapshot_stride == 0 || !steps.is_multiple_of(snapshot_stride) {
            return Err(Error::Domain(format!(
                "snapshot_stride {snapshot_stride} must be positive and divide steps {steps}"
            )));
        }
        Ok(Self {
            dt,
            steps,
            snapshot_stride,
            method,
            check_positivity: false,
        })
    }

    pub fn with_positivity_checks(mut self) -> Self {
        self.check_positivity = true;
        self
    }

    pub fn final_time(&self) -> f64 {
        self.dt * self.steps as f64
    }

    /// Steps at which snapshots are emitted, starting with 0.
    pub fn snapshot_steps(&self) -> impl Iterator<Item = usize> + '_ {
        (0..=self.steps).step_by(self.snapshot_stride)
    }

    /// Largest admissible split-step `dt` for `gen`, or `None` when the split is exact.
    pub fn stability_limit(gen: &Superoperator) -> Option<f64> {
        match &gen.repr {
            Representation::PositionKernel { kinetic: Some(_), .. } => {
                let (e, g) = gen.rate_bounds();
                let inv = |x: f64| if x > 0.0 { 1.0 / x } else { f64::INFINITY };
                let lim = 0.1 * inv(e).min(inv(g));
                lim.is_finite().then_some(lim)
            }
            _ => None,
        }
    }

    pub fn check_stability(&self, gen: &Superoperator) -> Result<()> {
        if self.method != Method::SplitStep {
            return Ok(());
        }
        match Self::stability_limit(gen) {
            Some(lim) if self.dt > lim => Err(Error::StabilityBound {
                dt: self.dt,
                suggested_dt: lim,
            }),
            _ => Ok(()),
        }
    }
}

/// Deep copy of the state at one output time.
#[derive(Debug, Clone, PartialEq)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub state: DenseState,
}

#[derive(Debug, Clone, Default)]
pub struct Propagation {
    pub snapshots: Vec<Snapshot>,
    pub warnings: Vec<String>,
}

impl Propagation {
    pub fn last(&self) -> Option<&Snapshot> {
        self.snapshots.last()
    }
}

struct Monitor {
    trace0: C64,
    positivity: bool,
    warned: bool,
    warnings: Vec<String>,
}

impl Monitor {
    fn new(rho: &DenseState, positivity: bool) -> Result<Self> {
        rho.check_invariants(false)?;
        Ok(Self {
            trace0: rho.trace(),
            positivity,
            warned: false,
            warnings: Vec::new(),
        })
    }

    fn check(&mut self, step: usize, state: &DenseState) -> Result<()> {
        let slack = 1.0 + step as f64 / 1000.0;
        let drift = (state.trace() - self.trace0).norm();
        if drift > TRACE_TOL * slack {
            return Err(Error::Numerical {
                message: format!("trace drift {drift:e} at step {step}"),
                residual: drift,
            });
        }
        let herm = state.hermiticity_error();
        if herm > (HERMITICITY_TOL * 10.0) * slack {
            return Err(Error::Numerical {
                message: format!("hermiticity drift {herm:e} at step {step}"),
                residual: herm,
            });
        }
        if self.positivity {
            let e = state.min_eigenvalue();
            if e < crate::model::POSITIVITY_TOL {
                return Err(Error::Numerical {
                    message: format!("negative eigenvalue {e:e} at step {step}"),
                    residual: -e,
                });
            }
        }
        if !self.warned {
            if let Some(m) = boundary_mass(state) {
                if m > BOUNDARY_WARN {
                    self.warned = true;
                    self.warnings.push(format!(
                        "probability {m:.3e} within the outer 1/16 of the grid at step {step}; periodic wrap-around may contaminate results"
                    ));
                }
            }
        }
        Ok(())
    }
}

fn boundary_mass(state: &DenseState) -> Option<f64> {
    match state.basis {
        Basis::Position(_) => Some(state.boundary_mass(BOUNDARY_FRACTION)),
        Basis::Momentum(_) => state.to_position().ok().map(|s| s.boundary_mass(BOUNDARY_FRACTION)),
        Basis::Abstract => None,
    }
}

fn collect<F>(run: F) -> Result<Propagation>
where
    F: FnOnce(&mut dyn FnMut(usize, f64, &DenseState) -> Result<()>) -> Result<Vec<String>>,
{
    let mut snapshots = Vec::new();
    let warnings = run(&mut |step, time, s| {
        snapshots.push(Snapshot {
            step,
            time,
            state: s.clone(),
        });
        Ok(())
    })?;
    Ok(Propagation { snapshots, warnings })
}

/// Strang split-step propagation for a position-kernel generator.
pub fn propagate_split_step(rho: &DenseState, gen: &Superoperator, plan: &PropagationPlan) -> Result<Propagation> {
    collect(|cb| propagate_split_step_with(rho, gen, plan, cb))
}

/// As [`propagate_split_step`], delivering snapshots `(step, time, state)` to
/// `on_snapshot` in step order. Returns the accumulated warnings.
pub fn propagate_split_step_with(
    rho: &DenseState,
    gen: &Superoperator,
    plan: &PropagationPlan,
    on_snapshot: &mut dyn FnMut(usize, f64, &DenseState) -> Result<()>,
) -> Result<Vec<String>> {
    let Representation::PositionKernel { gamma, kinetic } = &gen.repr else {
        return Err(Error::RegimeMismatch(
            "split-step requires a position-kernel generator".into(),
        ));
    };
    plan.check_stability(gen)?;
    let mut state = rho.in_basis(gen.basis)?;
    let mut mon = Monitor::new(&state, plan.check_positivity)?;
    let n = state.dim();
    let dt = plan.dt;
    let half = if kinetic.is_some() { 0.5 } else { 1.0 };
    let decay = Array2::from_shape_fn((n, n), |(i, j)| (-gamma[i.abs_diff(j)] * dt * half).exp());
    let phases = kinetic.as_ref().map(|k| {
        let e = &k.energies;
        Array2::from_shape_fn((n, n), |(a, b)| C64::from_polar(1.0, -(e[a] - e[b]) * dt))
    });
    let emit = |step: usize,
                s: &DenseState,
                mon: &mut Monitor,
                cb: &mut dyn FnMut(usize, f64, &DenseState) -> Result<()>|
     -> Result<()> {
        mon.check(step, s)?;
        cb(step, step as f64 * dt, &s.in_basis(rho.basis)?)
    };
    emit(0, &state, &mut mon, on_snapshot)?;
    for step in 1..=plan.steps {
        let m = &mut state.matrix;
        Zip::from(&mut *m).and(&decay).for_each(|v, &d| *v *= d);
        if let (Some(k), Some(ph)) = (kinetic, &phases) {
            let mut rp = k.basis.to_momentum(m);
            Zip::from(&mut rp).and(ph).for_each(|v, &p| *v *= p);
            *m = k.basis.to_position(&rp);
            Zip::from(&mut *m).and(&decay).for_each(|v, &d| *v *= d);
        }
        if step % plan.snapshot_stride == 0 {
            emit(step, &state, &mut mon, on_snapshot)?;
        }
    }
    Ok(mon.warnings)
}

fn momentum_factor(gen: &Superoperator, t: f64) -> Result<CMatrix> {
    let md = gen.as_momentum_diagonal().ok_or_else(|| {
        Error::RegimeMismatch("closed-form propagation requires a momentum-diagonal generator".into())
    })?;
    let e = &md.energies;
    Ok(Array2::from_shape_fn(md.rates.raw_dim(), |(k, l)| {
        let phase = if md.free { -(e[k] - e[l]) * t } else { 0.0 };
        C64::from_polar((-md.rates[(k, l)] * t).exp(), phase)
    }))
}

/// `ρ(p, p′; t) = e^{-i(E - E′)t} e^{-R(p, p′)t} ρ(p, p′; 0)`; `rho` must be in the
/// generator's momentum basis.
pub fn propagate_momentum_exact(rho: &DenseState, gen: &Superoperator, t: f64) -> Result<DenseState> {
    if rho.basis != gen.basis {
        return Err(Error::BasisMismatch {
            expected: gen.basis.name().into(),
            found: rho.basis.name().into(),
        });
    }
    let f = momentum_factor(gen, t)?;
    Ok(DenseState {
        matrix: &rho.matrix * &f,
        basis: rho.basis,
    })
}

/// Snapshot sequence for a momentum-diagonal generator, each evaluated
/// directly from the initial state. Accepts any grid basis.
pub fn propagate_momentum_plan(rho: &DenseState, gen: &Superoperator, plan: &PropagationPlan) -> Result<Propagation> {
    collect(|cb| {
        let r0 = rho.in_basis(gen.basis)?;
        let mut mon = Monitor::new(&r0, plan.check_positivity)?;
        for step in plan.snapshot_steps() {
            let t = step as f64 * plan.dt;
            let s = propagate_momentum_exact(&r0, gen, t)?;
            mon.check(step, &s)?;
            cb(step, t, &s.in_basis(rho.basis)?)?;
        }
        Ok(mon.warnings)
    })
}

/// Adaptive Dormand-Prince 5(4) integration of `dρ/dt = 𝓛ρ` at relative tolerance 1e-9.
pub fn propagate_dense(gen: &Superoperator, rho: &DenseState, plan: &PropagationPlan) -> Result<Propagation> {
    propagate_dense_tol(gen, rho, plan, 1e-9, 1e-12)
}

pub fn propagate_dense_tol(
    gen: &Superoperator,
    rho: &DenseState,
    plan: &PropagationPlan,
    rtol: f64,
    atol: f64,
) -> Result<Propagation> {
    collect(|cb| propagate_dense_with(gen, rho, plan, rtol, atol, cb))
}

pub fn propagate_dense_with(
    gen: &Superoperator,
    rho: &DenseState,
    plan: &PropagationPlan,
    rtol: f64,
    atol: f64,
    on_snapshot: &mut dyn FnMut(usize, f64, &DenseState) -> Result<()>,
) -> Result<Vec<String>> {
    if gen.dim > FULL_GENERATOR_MAX_N {
        return Err(Error::Capacity(format!(
            "dense integration limited to N <= {FULL_GENERATOR_MAX_N}, got {}",
            gen.dim
        )));
    }
    let r0 = rho.in_basis(gen.basis)?;
    let mut mon = Monitor::new(&r0, plan.check_positivity)?;
    let n = r0.dim();
    let steps: Vec<usize> = plan.snapshot_steps().collect();
    let times: Vec<f64> = steps.iter().map(|&s| s as f64 * plan.dt).collect();
    let opts = OdeOptions {
        rtol,
        atol,
        ..Default::default()
    };
    let basis = gen.basis;
    ode::integrate(
        |_, y| linalg::vectorize(&gen.apply_matrix(&linalg::unvectorize(y, n))),
        0.0,
        linalg::vectorize(&r0.matrix),
        &times,
        &[],
        opts,
        |i, t, y| {
            let s = DenseState {
                matrix: linalg::unvectorize(y, n),
                basis,
            };
            mon.check(steps[i], &s)?;
            on_snapshot(steps[i], t, &s.in_basis(rho.basis)?)
        },
    )?;
    Ok(mon.warnings)
}

/// Dispatches on `plan.method`; snapshots are expressed in `rho`'s basis.
pub fn propagate(gen: &Superoperator, rho: &DenseState, plan: &PropagationPlan) -> Result<Propagation> {
    match plan.method {
        Method::SplitStep => propagate_split_step(rho, gen, plan),
        Method::MomentumExact => propagate_momentum_plan(rho, gen, plan),
        Method::DenseRK => propagate_dense(gen, rho, plan),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::generators::{build_breuer_generator, build_free_liouvillian, build_position_generator, BreuerStrength};
    use crate::kernels::FormFactor;
    use crate::model::{ComponentWeights, Grid1D, KernelKind, MassSpec, NoiseSpec, PureState};

    fn noise(alpha: f64) -> NoiseSpec {
        NoiseSpec::new(
            alpha,
            1.0,
            KernelKind::GaussianL { l: 1.0 },
            ComponentWeights::default(),
        )
        .unwrap()
    }

    fn packet(grid: Grid1D, x0: f64, sigma: f64, p0: f64) -> DenseState {
        DenseState::from_pure(&PureState::gaussian(grid, x0, sigma, p0).unwrap())
    }

    fn cat(grid: Grid1D) -> DenseState {
        DenseState::from_pure(&PureState::cat(grid, 3.0, 0.8).unwrap())
    }

    fn dist(a: &DenseState, b: &DenseState) -> f64 {
        linalg::frobenius(&(&a.matrix - &b.matrix))
    }

    #[test]
    fn plan_validation() {
        assert!(PropagationPlan::new(0.0, 10, 1, Method::SplitStep).is_err());
        assert!(PropagationPlan::new(0.1, 10, 3, Method::SplitStep).is_err());
        let p = PropagationPlan::new(0.1, 10, 5, Method::SplitStep).unwrap();
        assert_eq!(p.snapshot_steps().collect::<Vec<_>>(), vec![0, 5, 10]);
    }

    #[test]
    fn stability_bound_rejects_large_steps() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_position_generator(&noise(1.0), &FormFactor::new(mass), &grid, true).unwrap();
        let plan = PropagationPlan::new(1.0, 1, 1, Method::SplitStep).unwrap();
        let rho = packet(grid, 0.0, 1.0, 0.0);
        match propagate_split_step(&rho, &g, &plan) {
            Err(Error::StabilityBound { suggested_dt, .. }) => assert!(suggested_dt < 1.0),
            other => panic!("expected stability error, got {other:?}"),
        }
    }

    #[test]
    fn kinetic_off_is_exact() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_position_generator(&noise(0.7), &FormFactor::new(mass), &grid, false).unwrap();
        let Representation::PositionKernel { gamma, .. } = &g.repr else {
            unreachable!()
        };
        let rho = cat(grid);
        let plan = PropagationPlan::new(0.37, 20, 4, Method::SplitStep).unwrap();
        let out = propagate_split_step(&rho, &g, &plan).unwrap();
        for s in &out.snapshots {
            let exact = Array2::from_shape_fn((32, 32), |(i, j)| {
                rho.matrix[(i, j)] * (-gamma[i.abs_diff(j)] * s.time).exp()
            });
            assert!(linalg::frobenius(&(&s.state.matrix - &exact)) < 1e-12);
        }
        // monotone decoherence
        for w in out.snapshots.windows(2) {
            Zip::from(&w[0].state.matrix)
                .and(&w[1].state.matrix)
                .for_each(|a, b| assert!(b.norm() <= a.norm() + 1e-15));
        }
    }

    #[test]
    fn free_packet_spreads_analytically() {
        let grid = Grid1D::new(128, 64.0).unwrap();
        let m = 2.0;
        let mass = MassSpec::point(m).unwrap();
        let g = build_position_generator(&noise(0.0), &FormFactor::new(mass), &grid, true).unwrap();
        let sigma = 1.5;
        let rho = packet(grid, 0.0, sigma, 0.0);
        let dt = PropagationPlan::stability_limit(&g).unwrap();
        let steps = (4.0 / dt).ceil() as usize;
        let plan = PropagationPlan::new(4.0 / steps as f64, steps, steps, Method::SplitStep).unwrap();
        let out = propagate_split_step(&rho, &g, &plan).unwrap();
        let s = out.last().unwrap();
        let x = grid.positions();
        let var: f64 = (0..128).map(|j| x[j] * x[j] * s.state.matrix[(j, j)].re).sum();
        let t = s.time;
        let exact = sigma * sigma + (t / (2.0 * m * sigma)).powi(2);
        assert!((var - exact).abs() < 1e-8, "{var} vs {exact}");
    }

    #[test]
    fn strang_is_second_order() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_position_generator(&noise(0.5), &FormFactor::new(mass), &grid, true).unwrap();
        let rho = cat(grid);
        let t = 0.5;
        let run = |steps: usize| {
            let plan = PropagationPlan::new(t / steps as f64, steps, steps, Method::SplitStep).unwrap();
            propagate_split_step(&rho, &g, &plan)
                .unwrap()
                .snapshots
                .pop()
                .unwrap()
                .state
        };
        let a = run(200);
        let b = run(400);
        let c = run(800);
        let ratio = dist(&a, &b) / dist(&b, &c);
        assert!((ratio - 4.0).abs() < 0.4, "ratio {ratio}");
    }

    #[test]
    fn split_step_matches_dense_rk() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_position_generator(&noise(0.3), &FormFactor::new(mass), &grid, true).unwrap();
        let rho = cat(grid);
        let t = 0.4;
        let steps = 1600;
        let plan = PropagationPlan::new(t / steps as f64, steps, steps, Method::SplitStep).unwrap();
        let a = propagate_split_step(&rho, &g, &plan).unwrap();
        let rk = PropagationPlan::new(t, 1, 1, Method::DenseRK).unwrap();
        let b = propagate_dense_tol(&g, &rho, &rk, 1e-11, 1e-14).unwrap();
        assert!(dist(&a.last().unwrap().state, &b.last().unwrap().state) < 1e-7);
    }

    #[test]
    fn momentum_exact_properties_and_rk_agreement() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_breuer_generator(&noise(0.8), &mass, &grid, BreuerStrength::Lambda(1.0)).unwrap();
        let rho = cat(grid).to_momentum().unwrap();
        let out = propagate_momentum_exact(&rho, &g, 0.9).unwrap();
        for k in 0..16 {
            assert!((out.matrix[(k, k)] - rho.matrix[(k, k)]).norm() < 1e-15);
        }
        let plan = PropagationPlan::new(0.3, 3, 1, Method::DenseRK).unwrap();
        let rk = propagate_dense_tol(&g, &rho, &plan, 1e-12, 1e-15).unwrap();
        assert!(dist(&rk.last().unwrap().state, &out) < 1e-10);
        assert!(matches!(
            propagate_momentum_exact(&cat(grid), &g, 1.0),
            Err(Error::BasisMismatch { .. })
        ));
    }

    #[test]
    fn momentum_alpha_zero_is_phase_only() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_free_liouvillian(&grid, &mass);
        let rho = cat(grid).to_momentum().unwrap();
        let out = propagate_momentum_exact(&rho, &g, 2.0).unwrap();
        Zip::from(&out.matrix)
            .and(&rho.matrix)
            .for_each(|a, b| assert!((a.norm() - b.norm()).abs() < 1e-14));
    }

    #[test]
    fn free_dense_matches_split_step() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let free = build_free_liouvillian(&grid, &mass);
        let pos = build_position_generator(&noise(0.0), &FormFactor::new(mass), &grid, true).unwrap();
        let rho = packet(grid, 0.5, 1.0, 0.8);
        let t = 1.0;
        let steps = 1000;
        let plan = PropagationPlan::new(t / steps as f64, steps, steps, Method::SplitStep).unwrap();
        let a = propagate_split_step(&rho, &pos, &plan).unwrap();
        let rk = PropagationPlan::new(t, 1, 1, Method::DenseRK).unwrap();
        let b = propagate(&free, &rho, &rk).unwrap();
        assert_eq!(b.last().unwrap().state.basis, rho.basis);
        assert!(dist(&a.last().unwrap().state, &b.last().unwrap().state) < 1e-8);
    }

    #[test]
    fn zero_generator_is_identity() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_position_generator(&noise(0.0), &FormFactor::new(mass), &grid, false).unwrap();
        let rho = cat(grid);
        let plan = PropagationPlan::new(0.5, 4, 2, Method::DenseRK).unwrap();
        let out = propagate(&g, &rho, &plan).unwrap();
        assert_eq!(out.snapshots.len(), 3);
        for s in out.snapshots {
            assert!(dist(&s.state, &rho) < 1e-15);
        }
    }

    #[test]
    fn trace_drift_over_many_steps() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_position_generator(&noise(0.5), &FormFactor::new(mass), &grid, true).unwrap();
        let rho = cat(grid);
        let dt = PropagationPlan::stability_limit(&g).unwrap();
        let plan = PropagationPlan::new(dt, 2000, 1000, Method::SplitStep).unwrap();
        let out = propagate_split_step(&rho, &g, &plan).unwrap();
        for s in out.snapshots {
            assert!((s.state.trace().re - 1.0).abs() < 1e-10);
            assert!(s.state.hermiticity_error() < 1e-9);
        }
    }

    #[test]
    fn boundary_monitor_warns() {
        let grid = Grid1D::new(32, 16.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_position_generator(&noise(0.0), &FormFactor::new(mass), &grid, false).unwrap();
        let rho = packet(grid, 7.0, 0.5, 0.0);
        let plan = PropagationPlan::new(0.1, 1, 1, Method::SplitStep).unwrap();
        let out = propagate_split_step(&rho, &g, &plan).unwrap();
        assert_eq!(out.warnings.len(), 1);
    }

    #[test]
    fn callback_sees_steps_in_order() {
        let grid = Grid1D::new(16, 8.0).unwrap();
        let mass = MassSpec::point(1.0).unwrap();
        let g = build_position_generator(&noise(0.2), &FormFactor::new(mass), &grid, false).unwrap();
        let rho = cat(grid);
        let plan = PropagationPlan::new(0.1, 6, 2, Method::SplitStep).unwrap();
        let mut seen = Vec::new();
        propagate_split_step_with(&rho, &g, &plan, &mut |step, _, _| {
            seen.push(step);
            Ok(())
        })
        .unwrap();
        assert_eq!(seen, vec![0, 2, 4, 6]);
    }
}
