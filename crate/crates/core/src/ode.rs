// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dormand-Prince 5(4) integrator on flat complex state vectors.

use ndarray::Array1;

use crate::error::{Error, Result};
use crate::C64;

#[derive(Debug, Clone, Copy)]
pub(crate) struct OdeOptions {
    pub rtol: f64,
    pub atol: f64,
    pub max_steps: usize,
}

impl Default for OdeOptions {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 1e-12,
            max_steps: 5_000_000,
        }
    }
}

const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const B1: f64 = 35.0 / 384.0;
const B3: f64 = 500.0 / 1113.0;
const B4: f64 = 125.0 / 192.0;
const B5: f64 = -2187.0 / 6784.0;
const B6: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;

fn combo(y: &Array1<C64>, h: f64, terms: &[(f64, &Array1<C64>)]) -> Array1<C64> {
    let mut out = y.clone();
    for (c, k) in terms {
        if *c != 0.0 {
            out.zip_mut_with(k, |o, v| *o += v * (h * c));
        }
    }
    out
}

/// Integrates `y' = f(t, y)` from `t0`, reporting the state at each time in
/// `t_out` (ascending, all `>= t0`) through `on_output`. Steps never cross a
/// point of `breaks`, so piecewise-smooth right-hand sides stay accurate.
pub(crate) fn integrate<F, G>(
    mut f: F,
    t0: f64,
    y0: Array1<C64>,
    t_out: &[f64],
    breaks: &[f64],
    opts: OdeOptions,
    mut on_output: G,
) -> Result<Array1<C64>>
where
    F: FnMut(f64, &Array1<C64>) -> Array1<C64>,
    G: FnMut(usize, f64, &Array1<C64>) -> Result<()>,
{
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);
    let mut h = {
        let yn = norm(&y).max(1e-300);
        let fn_ = norm(&k1);
        if fn_ > 0.0 {
            (0.01 * yn / fn_).min(1.0)
        } else {
            1.0
        }
    };
    let mut steps = 0usize;
    let mut stops: Vec<f64> = breaks.iter().copied().filter(|&b| b > t0).collect();
    stops.sort_by(|a, b| a.partial_cmp(b).unwrap());
    for (idx, &target) in t_out.iter().enumerate() {
        if target < t {
            return Err(Error::Domain("output times must be ascending".into()));
        }
        while t < target {
            let next_stop = stops.iter().copied().find(|&s| s > t && s < target).unwrap_or(target);
            let h_prop = h;
            let last = t + h >= next_stop || (next_stop - t - h) < 1e-12 * h;
            if last {
                h = next_stop - t;
            }
            let k2 = f(t + C2 * h, &combo(&y, h, &[(A21, &k1)]));
            let k3 = f(t + C3 * h, &combo(&y, h, &[(A31, &k1), (A32, &k2)]));
            let k4 = f(t + C4 * h, &combo(&y, h, &[(A41, &k1), (A42, &k2), (A43, &k3)]));
            let k5 = f(
                t + C5 * h,
                &combo(&y, h, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
            );
            let k6 = f(
                t + h,
                &combo(&y, h, &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)]),
            );
            let ynew = combo(&y, h, &[(B1, &k1), (B3, &k3), (B4, &k4), (B5, &k5), (B6, &k6)]);
            let k7 = f(t + h, &ynew);
            let mut acc = 0.0;
            let len = y.len().max(1);
            for i in 0..y.len() {
                let e = (k1[i] * E1 + k3[i] * E3 + k4[i] * E4 + k5[i] * E5 + k6[i] * E6 + k7[i] * E7) * h;
                let sc = opts.atol + opts.rtol * y[i].norm().max(ynew[i].norm());
                acc += (e.norm() / sc).powi(2);
            }
            let err = (acc / len as f64).sqrt();
            steps += 1;
            if steps > opts.max_steps {
                return Err(Error::StepSizeUnderflow {
                    t,
                    dominant_rate: 1.0 / h,
                });
            }
            if err <= 1.0 {
                t = if last { next_stop } else { t + h };
                y = ynew;
                k1 = k7;
                let fac = if err == 0.0 {
                    5.0
                } else {
                    (0.9 * err.powf(-0.2)).clamp(0.2, 5.0)
                };
                h = if last { h_prop.max(h * fac) } else { h * fac };
                if last && next_stop < target {
                    k1 = f(t, &y);
                }
            } else {
                let fac = if err.is_finite() {
                    (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
                } else {
                    0.1
                };
                h *= fac;
                if h < 1e-13 * t.abs().max(1.0) {
                    return Err(Error::StepSizeUnderflow {
                        t,
                        dominant_rate: 1.0 / h,
                    });
                }
            }
        }
        on_output(idx, t, &y)?;
    }
    Ok(y)
}

fn norm(v: &Array1<C64>) -> f64 {
    v.iter().map(|x| x.norm_sqr()).sum::<f64>().sqrt()
}
