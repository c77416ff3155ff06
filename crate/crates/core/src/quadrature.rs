// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Adaptive Gauss-Kronrod (7/15) integration over scalar, vector and matrix
//! valued integrands, plus Gauss-Hermite rules via Golub-Welsch.

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2};

use crate::error::{Error, Result};
use crate::C64;

const XGK: [f64; 8] = [
    0.991_455_371_120_812_6,
    0.949_107_912_342_758_5,
    0.864_864_423_359_769_1,
    0.741_531_185_599_394_4,
    0.586_087_235_467_691_1,
    0.405_845_151_377_397_2,
    0.207_784_955_007_898_5,
    0.0,
];
const WGK: [f64; 8] = [
    0.022_935_322_010_529_22,
    0.063_092_092_629_978_55,
    0.104_790_010_322_250_2,
    0.140_653_259_715_525_9,
    0.169_004_726_639_267_9,
    0.190_350_578_064_785_4,
    0.204_432_940_075_298_9,
    0.209_482_141_084_727_8,
];
const WG: [f64; 4] = [
    0.129_484_966_168_869_7,
    0.279_705_391_489_276_7,
    0.381_830_050_505_118_9,
    0.417_959_183_673_469_4,
];

/// Values that can be accumulated by the integrator.
pub trait QuadValue: Clone {
    fn zero_like(&self) -> Self;
    /// `self += a * x`
    fn axpy(&mut self, a: f64, x: &Self);
    fn norm(&self) -> f64;
    fn dist(&self, other: &Self) -> f64;
}

impl QuadValue for f64 {
    fn zero_like(&self) -> Self {
        0.0
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        *self += a * x;
    }
    fn norm(&self) -> f64 {
        self.abs()
    }
    fn dist(&self, other: &Self) -> f64 {
        (self - other).abs()
    }
}

impl QuadValue for Array1<C64> {
    fn zero_like(&self) -> Self {
        Array1::zeros(self.len())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        self.zip_mut_with(x, |s, v| *s += v * a);
    }
    fn norm(&self) -> f64 {
        self.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
    fn dist(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

impl QuadValue for Array2<C64> {
    fn zero_like(&self) -> Self {
        Array2::zeros(self.raw_dim())
    }
    fn axpy(&mut self, a: f64, x: &Self) {
        self.zip_mut_with(x, |s, v| *s += v * a);
    }
    fn norm(&self) -> f64 {
        self.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
    }
    fn dist(&self, other: &Self) -> f64 {
        self.iter()
            .zip(other.iter())
            .map(|(a, b)| (a - b).norm_sqr())
            .sum::<f64>()
            .sqrt()
    }
}

/// Integration tolerances.
#[derive(Debug, Clone, Copy)]
pub struct Tolerance {
    pub rtol: f64,
    pub atol: f64,
    pub max_intervals: usize,
}

impl Default for Tolerance {
    fn default() -> Self {
        Self {
            rtol: 1e-9,
            atol: 0.0,
            max_intervals: 4000,
        }
    }
}

impl Tolerance {
    pub fn new(rtol: f64, atol: f64) -> Self {
        Self {
            rtol,
            atol,
            ..Self::default()
        }
    }
}

#[derive(Debug, Clone)]
pub struct QuadResult<V> {
    pub value: V,
    pub error: f64,
    pub evaluations: usize,
}

struct Segment<V> {
    a: f64,
    b: f64,
    value: V,
    error: f64,
}

fn gk15<V: QuadValue, F: FnMut(f64) -> V>(f: &mut F, a: f64, b: f64) -> (V, f64) {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c);
    let mut kron = fc.zero_like();
    let mut gauss = fc.zero_like();
    kron.axpy(WGK[7], &fc);
    gauss.axpy(WG[3], &fc);
    for (j, &x) in XGK.iter().enumerate().take(7) {
        let f1 = f(c - h * x);
        let f2 = f(c + h * x);
        kron.axpy(WGK[j], &f1);
        kron.axpy(WGK[j], &f2);
        if j % 2 == 1 {
            gauss.axpy(WG[j / 2], &f1);
            gauss.axpy(WG[j / 2], &f2);
        }
    }
    let err = kron.dist(&gauss) * h.abs();
    let mut value = kron.zero_like();
    value.axpy(h, &kron);
    (value, err)
}

/// Adaptive integration of `f` over `[a, b]`, splitting first at `breaks`.
pub fn integrate_with_breaks<V, F>(mut f: F, a: f64, b: f64, breaks: &[f64], tol: Tolerance) -> Result<QuadResult<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    let mut points = vec![a];
    let mut inner: Vec<f64> = breaks.iter().copied().filter(|&p| p > a && p < b).collect();
    inner.sort_by(|x, y| x.partial_cmp(y).unwrap());
    inner.dedup();
    points.extend(inner);
    points.push(b);

    let mut segs: Vec<Segment<V>> = Vec::new();
    for w in points.windows(2) {
        let (value, error) = gk15(&mut f, w[0], w[1]);
        segs.push(Segment {
            a: w[0],
            b: w[1],
            value,
            error,
        });
    }
    let mut evaluations = 15 * segs.len();
    loop {
        let mut total = segs[0].value.zero_like();
        let mut err = 0.0;
        for s in &segs {
            total.axpy(1.0, &s.value);
            err += s.error;
        }
        let goal = tol.atol.max(tol.rtol * total.norm());
        if err <= goal {
            return Ok(QuadResult {
                value: total,
                error: err,
                evaluations,
            });
        }
        if segs.len() >= tol.max_intervals {
            return Err(Error::Numerical {
                message: format!("adaptive quadrature did not converge in {} intervals", segs.len()),
                residual: err,
            });
        }
        let (idx, _) = segs.iter().enumerate().fold(
            (0, -1.0),
            |acc, (i, s)| if s.error > acc.1 { (i, s.error) } else { acc },
        );
        let s = segs.swap_remove(idx);
        let m = 0.5 * (s.a + s.b);
        if m <= s.a || m >= s.b {
            return Err(Error::Numerical {
                message: "adaptive quadrature interval underflow".into(),
                residual: err,
            });
        }
        let (v1, e1) = gk15(&mut f, s.a, m);
        let (v2, e2) = gk15(&mut f, m, s.b);
        evaluations += 30;
        segs.push(Segment {
            a: s.a,
            b: m,
            value: v1,
            error: e1,
        });
        segs.push(Segment {
            a: m,
            b: s.b,
            value: v2,
            error: e2,
        });
    }
}

/// Adaptive integration of `f` over `[a, b]`.
pub fn integrate<V, F>(f: F, a: f64, b: f64, tol: Tolerance) -> Result<QuadResult<V>>
where
    V: QuadValue,
    F: FnMut(f64) -> V,
{
    integrate_with_breaks(f, a, b, &[], tol)
}

/// Physicists' Gauss-Hermite rule: `∫ e^{-t²} f(t) dt ≈ Σ w_k f(t_k)`.
///
/// Nodes are returned in ascending order and are exactly antisymmetric,
/// `t_k = -t_{n-1-k}`, with symmetric weights.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::Domain("Gauss-Hermite rule needs at least one node".into()));
    }
    let mut j = DMatrix::<f64>::zeros(n, n);
    for k in 1..n {
        let b = (k as f64 / 2.0).sqrt();
        j[(k, k - 1)] = b;
        j[(k - 1, k)] = b;
    }
    let eig = SymmetricEigen::new(j);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| {
            let v0 = eig.eigenvectors[(0, i)];
            (eig.eigenvalues[i], std::f64::consts::PI.sqrt() * v0 * v0)
        })
        .collect();
    pairs.sort_by(|a, b| a.0.partial_cmp(&b.0).unwrap());
    let mut nodes = vec![0.0; n];
    let mut weights = vec![0.0; n];
    for i in 0..n {
        let k = n - 1 - i;
        nodes[i] = 0.5 * (pairs[i].0 - pairs[k].0);
        weights[i] = 0.5 * (pairs[i].1 + pairs[k].1);
    }
    if n % 2 == 1 {
        nodes[n / 2] = 0.0;
    }
    Ok((nodes, weights))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn integrates_polynomial_exactly() {
        let r = integrate(|x: f64| x * x * x - 2.0 * x + 1.0, 0.0, 2.0, Tolerance::default()).unwrap();
        assert_relative_eq!(r.value, 4.0 - 4.0 + 2.0, epsilon = 1e-14);
    }

    #[test]
    fn integrates_oscillatory() {
        let r = integrate(|x: f64| (10.0 * x).cos(), 0.0, 3.0, Tolerance::new(1e-12, 0.0)).unwrap();
        assert_relative_eq!(r.value, (30.0f64).sin() / 10.0, max_relative = 1e-11);
    }

    #[test]
    fn integrates_gaussian_tail() {
        let r = integrate(|x: f64| (-x * x).exp(), 0.0, 12.0, Tolerance::new(1e-12, 0.0)).unwrap();
        assert_relative_eq!(r.value, std::f64::consts::PI.sqrt() / 2.0, max_relative = 1e-12);
    }

    #[test]
    fn breakpoints_handle_kinks() {
        let r = integrate_with_breaks(
            |x: f64| if x < 1.0 { 1.0 } else { 0.0 },
            0.0,
            3.0,
            &[1.0],
            Tolerance::default(),
        )
        .unwrap();
        assert_relative_eq!(r.value, 1.0, epsilon = 1e-14);
    }

    #[test]
    fn matrix_valued_integrand() {
        let r = integrate(
            |x: f64| {
                let mut m = Array2::<C64>::zeros((2, 2));
                m[(0, 0)] = C64::new(x, 0.0);
                m[(1, 1)] = C64::new(0.0, x * x);
                m
            },
            0.0,
            1.0,
            Tolerance::new(1e-13, 0.0),
        )
        .unwrap();
        assert_relative_eq!(r.value[(0, 0)].re, 0.5, epsilon = 1e-14);
        assert_relative_eq!(r.value[(1, 1)].im, 1.0 / 3.0, epsilon = 1e-14);
    }

    #[test]
    fn nonconvergence_reports_residual() {
        let tol = Tolerance {
            rtol: 1e-15,
            atol: 0.0,
            max_intervals: 3,
        };
        let err = integrate(|x: f64| (1.0 / (x + 1e-9)).sin(), 0.0, 1.0, tol).unwrap_err();
        match err {
            Error::Numerical { residual, .. } => assert!(residual > 0.0),
            e => panic!("unexpected {e:?}"),
        }
    }

    #[test]
    fn gauss_hermite_moments() {
        let (x, w) = gauss_hermite(20).unwrap();
        let m0: f64 = w.iter().sum();
        assert_relative_eq!(m0, std::f64::consts::PI.sqrt(), max_relative = 1e-13);
        let m2: f64 = x.iter().zip(&w).map(|(x, w)| w * x * x).sum();
        assert_relative_eq!(m2, std::f64::consts::PI.sqrt() / 2.0, max_relative = 1e-13);
        let m1: f64 = x.iter().zip(&w).map(|(x, w)| w * x).sum();
        assert!(m1.abs() < 1e-15);
    }

    #[test]
    fn gauss_hermite_cosine_large_rule() {
        let (x, w) = gauss_hermite(140).unwrap();
        for omega in [0.5, 5.0, 20.0] {
            let v: f64 = x.iter().zip(&w).map(|(x, w)| w * (omega * x).cos()).sum();
            let exact = std::f64::consts::PI.sqrt() * (-omega * omega / 4.0).exp();
            assert!((v - exact).abs() < 1e-12, "omega {omega}: {v} vs {exact}");
        }
    }

    #[test]
    fn gauss_hermite_symmetric() {
        let (x, w) = gauss_hermite(33).unwrap();
        for i in 0..33 {
            assert_eq!(x[i], -x[32 - i]);
            assert_eq!(w[i], w[32 - i]);
        }
    }
}
