// Copyright 2026 Gravdec Contributors
// SPDX-License-Identifier: Apache-2.0

//! Dense complex matrix helpers and the unitary FFT basis change.

use std::sync::Arc;

use nalgebra::{DMatrix, SymmetricEigen};
use ndarray::{Array1, Array2, Axis};
use rustfft::{Fft, FftPlanner};

use crate::{CMatrix, C64};

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

pub fn identity(n: usize) -> CMatrix {
    Array2::from_diag_elem(n, C64::new(1.0, 0.0))
}

pub fn dagger(a: &CMatrix) -> CMatrix {
    a.t().mapv(|v| v.conj())
}

pub fn commutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b) - b.dot(a)
}

pub fn anticommutator(a: &CMatrix, b: &CMatrix) -> CMatrix {
    a.dot(b) + b.dot(a)
}

pub fn frobenius(a: &CMatrix) -> f64 {
    a.iter().map(|v| v.norm_sqr()).sum::<f64>().sqrt()
}

pub fn trace(a: &CMatrix) -> C64 {
    a.diag().iter().sum()
}

/// Kronecker product `a ⊗ b`.
pub fn kron(a: &CMatrix, b: &CMatrix) -> CMatrix {
    let (ar, ac) = a.dim();
    let (br, bc) = b.dim();
    let mut out = Array2::zeros((ar * br, ac * bc));
    for i in 0..ar {
        for j in 0..ac {
            let s = a[(i, j)];
            if s == C64::new(0.0, 0.0) {
                continue;
            }
            let mut blk = out.slice_mut(ndarray::s![i * br..(i + 1) * br, j * bc..(j + 1) * bc]);
            blk.zip_mut_with(b, |o, v| *o = s * v);
        }
    }
    out
}

/// `diag(d) · a`
pub fn diag_left(d: &Array1<C64>, a: &CMatrix) -> CMatrix {
    let mut out = a.clone();
    for (mut row, &di) in out.axis_iter_mut(Axis(0)).zip(d.iter()) {
        row.mapv_inplace(|v| v * di);
    }
    out
}

/// `a · diag(d)`
pub fn diag_right(a: &CMatrix, d: &Array1<C64>) -> CMatrix {
    let mut out = a.clone();
    for mut row in out.axis_iter_mut(Axis(0)) {
        row.zip_mut_with(d, |v, &dj| *v *= dj);
    }
    out
}

pub fn to_nalgebra(a: &CMatrix) -> DMatrix<C64> {
    let (r, c) = a.dim();
    DMatrix::from_fn(r, c, |i, j| a[(i, j)])
}

pub fn from_nalgebra(a: &DMatrix<C64>) -> CMatrix {
    Array2::from_shape_fn((a.nrows(), a.ncols()), |(i, j)| a[(i, j)])
}

/// Eigen-decomposition of a hermitian matrix: ascending eigenvalues and the
/// matrix whose columns are the eigenvectors.
pub fn eigh(a: &CMatrix) -> (Vec<f64>, CMatrix) {
    let h = (a + &dagger(a)).mapv(|v| v * 0.5);
    let eig = SymmetricEigen::new(to_nalgebra(&h));
    let mut idx: Vec<usize> = (0..eig.eigenvalues.len()).collect();
    idx.sort_by(|&x, &y| eig.eigenvalues[x].partial_cmp(&eig.eigenvalues[y]).unwrap());
    let n = idx.len();
    let vals = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let vecs = Array2::from_shape_fn((n, n), |(i, j)| eig.eigenvectors[(i, idx[j])]);
    (vals, vecs)
}

/// Smallest eigenvalue of the hermitian part of `a`.
pub fn min_eigenvalue(a: &CMatrix) -> f64 {
    let (vals, _) = eigh(a);
    vals[0]
}

/// `exp(-i H t)` for hermitian `H`.
pub fn unitary(h: &CMatrix, t: f64) -> CMatrix {
    let (vals, v) = eigh(h);
    let phases: Array1<C64> = vals.iter().map(|&e| C64::from_polar(1.0, -e * t)).collect();
    diag_right(&v, &phases).dot(&dagger(&v))
}

/// Matrix exponential by scaling and squaring.
pub fn expm(a: &CMatrix) -> CMatrix {
    from_nalgebra(&to_nalgebra(a).exp())
}

/// Row-major vectorization: `vec(ρ)[i n + j] = ρ[i, j]`.
pub fn vectorize(a: &CMatrix) -> Array1<C64> {
    Array1::from_iter(a.iter().copied())
}

pub fn unvectorize(v: &Array1<C64>, n: usize) -> CMatrix {
    Array2::from_shape_vec((n, n), v.to_vec()).expect("length n*n")
}

/// Unitary discrete Fourier transform between the position grid and the
/// momentum grid (FFT ordering), `F[k, j] = e^{-2πi kj/N} / √N`.
#[derive(Clone)]
pub struct SpectralBasis {
    n: usize,
    scale: f64,
    fwd: Arc<dyn Fft<f64>>,
    inv: Arc<dyn Fft<f64>>,
}

impl std::fmt::Debug for SpectralBasis {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "SpectralBasis({})", self.n)
    }
}

impl SpectralBasis {
    pub fn new(n: usize) -> Self {
        let mut planner = FftPlanner::new();
        Self {
            n,
            scale: 1.0 / (n as f64).sqrt(),
            fwd: planner.plan_fft_forward(n),
            inv: planner.plan_fft_inverse(n),
        }
    }

    pub fn len(&self) -> usize {
        self.n
    }

    pub fn is_empty(&self) -> bool {
        self.n == 0
    }

    /// In-place `ψ ↦ F ψ`.
    pub fn forward(&self, v: &mut [C64]) {
        self.fwd.process(v);
        v.iter_mut().for_each(|x| *x *= self.scale);
    }

    /// In-place `ψ ↦ F† ψ`.
    pub fn inverse(&self, v: &mut [C64]) {
        self.inv.process(v);
        v.iter_mut().for_each(|x| *x *= self.scale);
    }

    fn rows(&self, a: &mut CMatrix, forward: bool) {
        let n = self.n;
        let slice = a.as_slice_mut().expect("standard layout");
        if forward {
            self.fwd.process(slice);
        } else {
            self.inv.process(slice);
        }
        debug_assert_eq!(slice.len() % n, 0);
        slice.iter_mut().for_each(|x| *x *= self.scale);
    }

    /// `F a` (transform each column).
    pub fn left(&self, a: &CMatrix, forward: bool) -> CMatrix {
        let mut t = a.t().as_standard_layout().into_owned();
        self.rows(&mut t, forward);
        t.t().as_standard_layout().into_owned()
    }

    /// `a F†` for `forward = false`, `a F` for `forward = true` (transform each row).
    pub fn right(&self, a: &CMatrix, forward: bool) -> CMatrix {
        let mut t = a.as_standard_layout().into_owned();
        self.rows(&mut t, forward);
        t
    }

    /// `F ρ F†`
    pub fn to_momentum(&self, rho: &CMatrix) -> CMatrix {
        let a = self.left(rho, true);
        self.right(&a, false)
    }

    /// `F† ρ F`
    pub fn to_position(&self, rho: &CMatrix) -> CMatrix {
        let a = self.left(rho, false);
        self.right(&a, true)
    }

    /// Position-basis matrix of an operator diagonal in momentum space.
    pub fn momentum_operator(&self, diag: &Array1<C64>) -> CMatrix {
        let f = self.left(&identity(self.n), true);
        let df = diag_left(diag, &f);
        self.left(&df, false)
    }
}
