// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Acceptance suite: one pass/fail line per criterion, nonzero exit on failure.

use std::fs;
use std::path::Path;
use std::process::Command;
use std::time::Instant;

use gravdec::analysis::{
    alpha_scaling_study, fit_exponential_rate, fit_rate_jackknife, power_law_exponent, relative_action_deviation,
    DecaySeries, ScalingConfig,
};
use gravdec::cumulant::{gravitational_coupling, hamiltonian_superop, markovian_generator};
use gravdec::generators::{
    build_breuer_generator, build_full_generator, build_momentum_generator, build_position_generator, random_states,
    BreuerStrength, FullGeneratorOptions, LineMask, Superoperator,
};
use gravdec::kernels::{
    blencowe_rate_numerical, position_rate_closed_form, position_rate_spectral, ClosedForm, FormFactor,
};
use gravdec::linalg;
use gravdec::model::{
    Basis, ComponentWeights, DenseState, Density, Grid1D, KernelKind, MassSpec, NoiseSpec, PureState,
};
use gravdec::noise_field::LambdaMode;
use gravdec::oracle::{run_ensemble, CouplingMode, EnsembleConfig, LevelEnsembleConfig, LevelNoise, Observable};
use gravdec::propagators::{propagate, propagate_dense_tol, propagate_momentum_plan, Method, PropagationPlan};
use gravdec::{CMatrix, Result, C64};
use ndarray::{Array1, Array2};
use rand::SeedableRng;
use rand_chacha::ChaCha20Rng;
use rand_distr::{Distribution, StandardNormal};

type Outcome = Result<(bool, String)>;

fn sg_noise(alpha: f64) -> NoiseSpec {
    NoiseSpec::new(
        alpha,
        1.0,
        KernelKind::GaussianL { l: 1.0 },
        ComponentWeights::default(),
    )
    .unwrap()
}

const SEPARATIONS: [f64; 5] = [0.5, 1.0, 2.0, 4.0, 8.0];

fn sg_ensemble(dt: f64, steps: usize) -> (EnsembleConfig, Vec<usize>) {
    let grid = Grid1D::new(256, 64.0).unwrap();
    let lags: Vec<usize> = SEPARATIONS.iter().map(|d| (d / grid.dx()).round() as usize).collect();
    let cfg = EnsembleConfig {
        noise: sg_noise(0.1),
        mass: MassSpec::point(1.0).unwrap(),
        grid,
        dt,
        steps,
        snapshot_stride: 1,
        kinetic: false,
        mode: CouplingMode::PositionOnly,
        lambda_mode: LambdaMode::Saturated,
        observable: Observable::LagCoherences(lags.clone()),
        initial: PureState::uniform(grid),
    };
    (cfg, lags)
}

fn sg_rate(d: f64) -> f64 {
    let mass = MassSpec::point(1.0).unwrap();
    position_rate_closed_form(ClosedForm::SanchezGomez, &sg_noise(0.1), &mass, d).unwrap()
}

fn c1_sg_rates() -> Outcome {
    let (cfg, _) = sg_ensemble(5.0, 200);
    let r = run_ensemble(&cfg, 2000, 20260101)?;
    let mut ok = true;
    let mut parts = Vec::new();
    for (k, d) in SEPARATIONS.iter().enumerate() {
        let fit = fit_rate_jackknife(&r.times, &r.batches, k, 0.1)?;
        let exact = sg_rate(*d);
        let rel = (fit.rate - exact) / exact;
        let sig = (fit.rate - exact) / fit.std_err;
        ok &= rel.abs() <= 0.05 && sig.abs() <= 3.0;
        parts.push(format!("d={d}: rel {rel:+.4} ({sig:+.2}σ)"));
    }
    Ok((ok, parts.join(", ")))
}

fn c2_commuting_exactness() -> Outcome {
    let (cfg, _) = sg_ensemble(5.0, 40);
    let counts = [500usize, 2000, 8000];
    let reps = 4;
    let mut dev = Vec::new();
    let mut chi = Vec::new();
    for (ci, &n) in counts.iter().enumerate() {
        let (mut d2, mut e2, mut m) = (0.0, 0.0, 0.0);
        for rep in 0..reps {
            let r = run_ensemble(&cfg, n, 7000 + 100 * ci as u64 + rep)?;
            for (s, t) in r.times.iter().enumerate().skip(1) {
                let se = r.std_error(s);
                for (k, d) in SEPARATIONS.iter().enumerate() {
                    let exact = (-sg_rate(*d) * t).exp();
                    d2 += (r.values[s][k] - exact).norm_sqr();
                    e2 += se[k] * se[k];
                    m += 1.0;
                }
            }
        }
        dev.push((d2 / m).sqrt());
        chi.push((d2 / e2).sqrt());
    }
    let x: Vec<f64> = counts.iter().map(|&n| n as f64).collect();
    let (slope, se) = power_law_exponent(&x, &dev)?;
    let ok = (-0.65..=-0.35).contains(&slope) && chi.iter().all(|c| *c < 2.0);
    Ok((
        ok,
        format!(
            "slope {slope:.3} ± {se:.3}; rms deviation/std error {:.2}, {:.2}, {:.2}",
            chi[0], chi[1], chi[2]
        ),
    ))
}

fn c3_breuer() -> Outcome {
    let grid = Grid1D::new(64, 32.0)?;
    let mass = MassSpec::point(1.0)?;
    let noise = sg_noise(0.1);
    let lambda = 0.8;
    let gen = build_breuer_generator(&noise, &mass, &grid, BreuerStrength::Lambda(lambda))?;
    let rho = DenseState::from_pure(&PureState::cat(grid, 6.0, 1.0)?).to_momentum()?;
    let plan = PropagationPlan::new(0.05, 40, 2, Method::MomentumExact)?;
    let exact = propagate_momentum_plan(&rho, &gen, &plan)?;
    let rk = propagate_dense_tol(
        &gen,
        &rho,
        &PropagationPlan::new(0.05, 40, 2, Method::DenseRK)?,
        1e-12,
        1e-15,
    )?;
    let mut max_dev = 0.0f64;
    for (a, b) in exact.snapshots.iter().zip(&rk.snapshots) {
        max_dev = max_dev.max(
            (&a.state.matrix - &b.state.matrix)
                .iter()
                .map(|v| v.norm())
                .fold(0.0, f64::max),
        );
    }
    let e = grid.kinetic_energies(1.0);
    let kappa = noise.alpha * noise.alpha * lambda;
    let mut max_factor = 0.0f64;
    let r0 = &rho.matrix;
    for snap in &exact.snapshots {
        for i in 0..64 {
            for j in 0..64 {
                if r0[(i, j)].norm() > 1e-6 {
                    let de = e[i] - e[j];
                    let want = (-kappa * de * de * snap.time).exp();
                    let got = snap.state.matrix[(i, j)].norm() / r0[(i, j)].norm();
                    max_factor = max_factor.max((got - want).abs());
                }
            }
        }
    }
    // rate of one momentum coherence by log-linear fit
    let (i, j) = (3, 9);
    let series = DecaySeries::from_snapshots(&exact.snapshots, i, j)?;
    let fit = fit_exponential_rate(&series)?;
    let want = kappa * (e[i] - e[j]).powi(2);
    let rate_rel = (fit.rate - want).abs() / want;
    let ok = max_dev <= 1e-10 && max_factor <= 1e-10 && rate_rel <= 1e-10;
    Ok((
        ok,
        format!(
            "max |exact - RK| {max_dev:.2e}; decay-factor error {max_factor:.2e}; fitted rate rel error {rate_rel:.2e}"
        ),
    ))
}

fn c4_limits() -> Outcome {
    // (a) line-2 restriction against the position generator
    let grid = Grid1D::new(64, 16.0)?;
    let noise = sg_noise(0.1);
    let mass = MassSpec::point(1.0)?;
    let ff = FormFactor::new(mass);
    let line2 = build_full_generator(
        &noise,
        &ff,
        &grid,
        FullGeneratorOptions {
            lines: LineMask::only(2),
            include_free: false,
            ..Default::default()
        },
    )?;
    let pos = build_position_generator(&noise, &ff, &grid, false)?;
    let probes = random_states(64, 20, true, Basis::Position(grid), 44);
    let a = relative_action_deviation(&line2, &pos, &probes)?
        .into_iter()
        .fold(0.0, f64::max);

    // (b) small-q sweep against the momentum generator
    let grid = Grid1D::new(64, 32.0)?;
    let state = DenseState::from_pure(&PureState::gaussian(grid, 0.0, 1.0, 1.0)?);
    let ls = [8.0, 16.0, 32.0, 64.0];
    let mut devs = Vec::new();
    let mut qdx = Vec::new();
    for &l in &ls {
        let noise = NoiseSpec::new(0.1, 1.0, KernelKind::GaussianL { l }, ComponentWeights::default())?;
        let opts = FullGeneratorOptions {
            include_free: false,
            ..Default::default()
        };
        let full = build_full_generator(&noise, &ff, &grid, opts)?;
        let mom = build_momentum_generator(&noise, &ff, &grid, noise.tau_c, false)?;
        devs.push(relative_action_deviation(&full, &mom, std::slice::from_ref(&state))?[0]);
        qdx.push(1.0 / l);
    }
    let (p, se) = power_law_exponent(&qdx, &devs)?;
    let ok = a <= 1e-9 && (p - 2.0).abs() <= 0.3;
    let list: Vec<String> = devs.iter().map(|d| format!("{d:.3e}")).collect();
    Ok((
        ok,
        format!(
            "(a) max rel deviation {a:.2e}; (b) exponent {p:.3} ± {se:.3}, deviations [{}]",
            list.join(", ")
        ),
    ))
}

fn c5_cumulant_order() -> Outcome {
    let c = |v: f64| C64::new(v, 0.0);
    let sz: CMatrix = Array2::from_shape_vec((2, 2), vec![c(1.0), c(0.0), c(0.0), c(-1.0)]).unwrap();
    let sx: CMatrix = Array2::from_shape_vec((2, 2), vec![c(0.0), c(1.0), c(1.0), c(0.0)]).unwrap();
    let cfg = ScalingConfig {
        base: LevelEnsembleConfig {
            h0: sz.mapv(|v| v * 0.5),
            couplings: vec![sx.mapv(|v| v * 3.0)],
            alpha: 0.0,
            noise: LevelNoise::OrnsteinUhlenbeck { sigma: 1.0, tau: 1.0 },
            dt: 0.01,
            steps: 200,
            snapshot_stride: 200,
            psi0: Array1::from_vec(vec![c(1.0), c(0.0)]),
            antithetic: true,
            control_variate: None,
        },
        observable: sz,
        samples: 100_000,
        seed: 31337,
        use_control_variate: true,
        rtol: 1e-11,
    };
    let t = alpha_scaling_study(&cfg, &[0.04, 0.08, 0.16])?;
    let ok = !t.inconclusive && (t.exponent - 4.0).abs() <= 1.0;
    let rows: Vec<String> = t
        .rows
        .iter()
        .map(|r| format!("α={}: dev {:.3e} ± {:.1e}", r.alpha, r.deviation, r.oracle_std_err))
        .collect();
    Ok((
        ok,
        format!(
            "exponent {:.3} ± {:.3}; {}",
            t.exponent,
            t.exponent_std_err,
            rows.join(", ")
        ),
    ))
}

fn c6_blencowe() -> Outcome {
    let noise = NoiseSpec::new(0.1, 1.0, KernelKind::DeltaL3 { l: 1.0 }, ComponentWeights::default())?;
    let r = 0.5;
    let mass = MassSpec::new(2.0, Density::GaussianR { r })?;
    let mut worst = 0.0f64;
    for k in 1..=50 {
        let dx = 0.1 * r * k as f64;
        let num = blencowe_rate_numerical(&noise, &mass, dx)?;
        let closed = position_rate_closed_form(ClosedForm::BlencoweGaussian, &noise, &mass, dx)?;
        worst = worst.max((num - closed).abs() / closed);
    }
    Ok((
        worst <= 1e-8,
        format!("max rel deviation {worst:.2e} over 50 separations"),
    ))
}

fn random_pure(grid: Grid1D, count: usize, seed: u64) -> Vec<DenseState> {
    let mut rng = ChaCha20Rng::seed_from_u64(seed);
    (0..count)
        .map(|_| {
            let v = Array1::from_shape_fn(grid.n(), |_| {
                C64::new(StandardNormal.sample(&mut rng), StandardNormal.sample(&mut rng))
            });
            DenseState::from_pure(&PureState::new(v, Basis::Position(grid)).unwrap())
        })
        .collect()
}

fn c7_invariants() -> Outcome {
    let grid = Grid1D::new(16, 8.0)?;
    let noise = sg_noise(0.3);
    let mass = MassSpec::point(1.0)?;
    let ff = FormFactor::new(mass);
    let markov = {
        let a = hamiltonian_superop(&Array2::zeros((16, 16)));
        let coupling = gravitational_coupling(&noise, &mass, &grid, None)?;
        markovian_generator(&a, &coupling)?.into_superoperator(Basis::Position(grid))
    };
    let gens: Vec<(&str, Superoperator)> = vec![
        ("position", build_position_generator(&noise, &ff, &grid, false)?),
        ("position+kinetic", build_position_generator(&noise, &ff, &grid, true)?),
        ("momentum", build_momentum_generator(&noise, &ff, &grid, 1.0, true)?),
        (
            "breuer",
            build_breuer_generator(&noise, &mass, &grid, BreuerStrength::Lambda(1.0))?,
        ),
        (
            "full",
            build_full_generator(&noise, &ff, &grid, FullGeneratorOptions::default())?,
        ),
        ("cumulant-markov", markov),
    ];
    let states = random_states(16, 100, false, Basis::Position(grid), 77);
    let pure = random_pure(grid, 10, 78);
    let mut ok = true;
    let mut parts = Vec::new();
    for (name, g) in &gens {
        let (mut tr, mut herm) = (0.0f64, 0.0f64);
        for s in &states {
            let out = g.apply(s)?;
            tr = tr.max(out.trace().norm());
            herm = herm.max(
                (&out.matrix - &linalg::dagger(&out.matrix))
                    .iter()
                    .map(|v| v.norm())
                    .fold(0.0, f64::max),
            );
        }
        ok &= tr <= 1e-12 && herm <= 1e-10;
        let method = match name {
            &"position" | &"position+kinetic" => Method::SplitStep,
            &"momentum" | &"breuer" => Method::MomentumExact,
            _ => Method::DenseRK,
        };
        let plan = PropagationPlan::new(0.001, 200, 200, method)?;
        let mut min_eig = f64::INFINITY;
        for s in &pure {
            let p = propagate(g, s, &plan)?;
            min_eig = min_eig.min(p.last().unwrap().state.min_eigenvalue());
        }
        if g.lindblad_form && *name != "full" {
            ok &= min_eig >= -1e-8;
            parts.push(format!("{name}: tr {tr:.1e} herm {herm:.1e} min eig {min_eig:.1e}"));
        } else {
            parts.push(format!(
                "{name}: tr {tr:.1e} herm {herm:.1e} min eig {min_eig:.1e} (reported)"
            ));
        }
    }
    // kernel evenness, zero at origin and non-negativity
    let mut kernel_ok = true;
    let blen = NoiseSpec::new(0.1, 1.0, KernelKind::DeltaL3 { l: 1.0 }, ComponentWeights::default())?;
    let gmass = MassSpec::new(1.0, Density::GaussianR { r: 0.5 })?;
    for (nz, m) in [(noise, mass), (blen, gmass), (sg_noise(0.1), gmass)] {
        let ffm = FormFactor::new(m);
        kernel_ok &= position_rate_spectral(&nz, &ffm, 0.0)? == 0.0;
        for k in 1..=40 {
            let d = 0.25 * k as f64;
            let plus = position_rate_spectral(&nz, &ffm, d)?;
            kernel_ok &= plus == position_rate_spectral(&nz, &ffm, -d)? && plus >= 0.0;
        }
    }
    ok &= kernel_ok;
    parts.push(format!("kernels even/zero/non-negative: {kernel_ok}"));
    Ok((ok, parts.join("; ")))
}

fn strip_timestamps(text: &str) -> String {
    text.lines()
        .filter(|l| !l.contains("start_unix") && !l.contains("stop_unix"))
        .collect::<Vec<_>>()
        .join("\n")
}

fn cli(args: &[&str]) -> Result<()> {
    let status = Command::new(env!("CARGO_BIN_EXE_gravdec")).args(args).status()?;
    if status.success() {
        Ok(())
    } else {
        Err(gravdec::Error::numerical(format!(
            "gravdec {args:?} exited with {status}"
        )))
    }
}

fn c8_reproducibility() -> Outcome {
    let dir = tempfile::tempdir()?;
    let cfg = dir.path().join("cfg.json");
    fs::write(
        &cfg,
        r#"{"noise": {"alpha": 0.2, "tau_c": 1.0, "kernel": "gaussian", "L": 1.0},
            "mass": {"M": 1.0}, "grid": {"n": 64, "extent": 16.0},
            "time": {"dt": 0.001, "steps": 50, "stride": 10},
            "oracle": {"n_traj": 100, "kinetic": true, "mode": "full"},
            "scaling": {"samples": 2000}, "seed": 5}"#,
    )?;
    let cfg = cfg.to_string_lossy().into_owned();
    let runs: [(&str, &[&str], &[&str]); 5] = [
        ("rates", &["rates", "--dx-steps", "20"], &["rates.csv"]),
        (
            "propagate",
            &["propagate", "--regime", "position"],
            &["propagate_position.csv"],
        ),
        ("oracle", &["oracle"], &["oracle.csv"]),
        ("limits", &["limits", "--probes", "2"], &["limits.json"]),
        ("scaling", &["scaling"], &["scaling.json"]),
    ];
    let mut ok = true;
    let mut checked = Vec::new();
    for (name, args, files) in runs {
        let mut texts = Vec::new();
        for (k, threads) in ["1", "1", "3"].iter().enumerate() {
            let out = dir.path().join(format!("{name}_{k}"));
            let out_s = out.to_string_lossy().into_owned();
            let mut full: Vec<&str> = args.to_vec();
            full.extend(["--config", &cfg, "--out", &out_s, "--threads", threads]);
            cli(&full)?;
            let mut joined = String::new();
            for f in files {
                joined.push_str(&strip_timestamps(&fs::read_to_string(Path::new(&out).join(f))?));
            }
            texts.push(joined);
        }
        let same = texts.windows(2).all(|w| w[0] == w[1]);
        ok &= same;
        checked.push(format!("{name}: {}", if same { "identical" } else { "DIFFERENT" }));
    }
    Ok((ok, checked.join(", ")))
}

fn main() {
    let criteria: [(&str, fn() -> Outcome); 8] = [
        ("1 SG rate recovery", c1_sg_rates),
        ("2 commuting-case exactness", c2_commuting_exactness),
        ("3 Breuer closed form", c3_breuer),
        ("4 limit consistency", c4_limits),
        ("5 cumulant remainder order", c5_cumulant_order),
        ("6 Blencowe Gaussian-mass closed form", c6_blencowe),
        ("7 structural invariants", c7_invariants),
        ("8 CLI reproducibility", c8_reproducibility),
    ];
    let mut failures = 0;
    for (name, f) in criteria {
        let t0 = Instant::now();
        let (pass, detail) = match f() {
            Ok(r) => r,
            Err(e) => (false, format!("error: {e}")),
        };
        let secs = t0.elapsed().as_secs_f64();
        println!("[{}] {name}: {detail} ({secs:.1}s)", if pass { "PASS" } else { "FAIL" });
        if !pass {
            failures += 1;
        }
    }
    println!("acceptance: {} of 8 criteria passed", 8 - failures);
    if failures > 0 {
        std::process::exit(1);
    }
}
