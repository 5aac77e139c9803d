//! Spectral Galerkin discretization of `L_t` in the quasiperiodic basis
//! `e^{i(2πn+t)x} e_r`, `n ∈ [-K, K]`, `r = 1..m`.
//!
//! Basis functions satisfy the quasiperiodic boundary conditions exactly, so
//! the truncated matrix is a compression of `L_t` itself. With trigonometric
//! polynomial coefficients its entries are exact.

use std::f64::consts::PI;

use num_complex::Complex64;

use crate::error::{Error, Result};
use crate::linalg::{anti_hermitian_deviation, eigh, hermitize, inverse_iteration, lowest_eigenvalues, CMatrix};
use crate::operator::OperatorSpec;

/// Maximum anti-Hermitian deviation tolerated in the assembled matrix.
pub const SELF_ADJOINT_TOL: f64 = 1e-8;
pub const DEFAULT_REL_TOL: f64 = 1e-9;
pub const MAX_DOUBLINGS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GalerkinOptions {
    /// Truncation half-width; `None` means `max(32, 2·count)`.
    pub k: Option<usize>,
    pub refine: bool,
    pub rel_tol: f64,
}

impl Default for GalerkinOptions {
    fn default() -> Self {
        Self {
            k: None,
            refine: true,
            rel_tol: DEFAULT_REL_TOL,
        }
    }
}

impl GalerkinOptions {
    pub fn fixed(k: usize) -> Self {
        Self {
            k: Some(k),
            refine: false,
            rel_tol: DEFAULT_REL_TOL,
        }
    }

    pub fn initial_k(&self, count: usize) -> usize {
        self.k.unwrap_or_else(|| default_truncation(count))
    }
}

pub fn default_truncation(count: usize) -> usize {
    32.max(2 * count)
}

/// Quasimomentum of basis frequency `n`: `2πn + t`.
#[inline]
pub fn wavenumber(n: i64, t: f64) -> f64 {
    2.0 * PI * n as f64 + t
}

/// Index layout of the truncated basis.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Basis {
    pub k: usize,
    pub m: usize,
}

impl Basis {
    pub fn new(k: usize, m: usize) -> Self {
        Self { k, m }
    }

    pub fn len(&self) -> usize {
        self.m * (2 * self.k + 1)
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn frequencies(&self) -> impl Iterator<Item = i64> + Clone {
        let k = self.k as i64;
        -k..=k
    }

    pub fn contains(&self, n: i64) -> bool {
        n.unsigned_abs() as usize <= self.k
    }

    /// Position of `(frequency n, component r)`; `r` is 0-based.
    #[inline]
    pub fn index(&self, n: i64, r: usize) -> usize {
        debug_assert!(self.contains(n) && r < self.m);
        (n + self.k as i64) as usize * self.m + r
    }

    #[inline]
    pub fn frequency_of(&self, idx: usize) -> (i64, usize) {
        ((idx / self.m) as i64 - self.k as i64, idx % self.m)
    }
}

/// Galerkin matrix of `L_t` on `n ∈ [-K, K]`.
///
/// Entry `((n, i), (n', j))` is `s_n^{2ν} δ δ + Σ_k ĉ^{(k)}_{n-n'}[i,j] (s_{n'}^{d} + s_n^{d}) / 2`
/// with `s_n = 2πn + t` and `d = 2ν - k`.
pub fn assemble(spec: &OperatorSpec, t: f64, k: usize) -> Result<CMatrix> {
    let basis = Basis::new(k, spec.m());
    let mut a = assemble_raw(spec, t, basis);
    let deviation = anti_hermitian_deviation(&a);
    if deviation > SELF_ADJOINT_TOL {
        return Err(Error::NotSelfAdjoint {
            deviation,
            tolerance: SELF_ADJOINT_TOL,
        });
    }
    hermitize(&mut a);
    Ok(a)
}

fn assemble_raw(spec: &OperatorSpec, t: f64, basis: Basis) -> CMatrix {
    let m = spec.m();
    let order = spec.order() as i32;
    let mut a = CMatrix::zeros(basis.len(), basis.len());
    for n in basis.frequencies() {
        let lead = wavenumber(n, t).powi(order);
        for r in 0..m {
            let i = basis.index(n, r);
            a[(i, i)] += Complex64::new(lead, 0.0);
        }
    }
    for (kk, p) in spec.coefficients() {
        let power = order - kk as i32;
        for (d, c) in p.terms() {
            for col in basis.frequencies() {
                let row = col + d;
                if !basis.contains(row) {
                    continue;
                }
                let weight = 0.5 * (wavenumber(col, t).powi(power) + wavenumber(row, t).powi(power));
                for i in 0..m {
                    for j in 0..m {
                        let z = c[(i, j)];
                        if z.re == 0.0 && z.im == 0.0 {
                            continue;
                        }
                        a[(basis.index(row, i), basis.index(col, j))] += z * weight;
                    }
                }
            }
        }
    }
    a
}

/// One Bloch eigenpair `(t, n, λ_n(t))` with its Fourier coefficients.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochSample {
    pub t: f64,
    /// 1-based band index.
    pub n: usize,
    pub lambda: f64,
    /// Truncation the coefficients refer to.
    pub basis: Basis,
    /// Coefficient of `e^{i(2πn'+t)x} e_r` at `basis.index(n', r)`; unit norm.
    pub coeffs: Vec<Complex64>,
}

impl BlochSample {
    pub fn coeff(&self, freq: i64, r: usize) -> Complex64 {
        if self.basis.contains(freq) {
            self.coeffs[self.basis.index(freq, r)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

/// Lowest Bloch eigenvalues at one quasimomentum.
#[derive(Debug, Clone)]
pub struct BlochSpectrum {
    pub t: f64,
    pub k_used: usize,
    pub samples: Vec<BlochSample>,
}

impl BlochSpectrum {
    pub fn values(&self) -> Vec<f64> {
        self.samples.iter().map(|s| s.lambda).collect()
    }
}

fn check_count(count: usize) -> Result<()> {
    if count == 0 {
        return Err(Error::InvalidArgument("eigenvalue count must be ≥ 1".into()));
    }
    Ok(())
}

fn converged(coarse: &[f64], fine: &[f64], rel_tol: f64) -> bool {
    coarse
        .iter()
        .zip(fine)
        .all(|(a, b)| (a - b).abs() <= rel_tol * (1.0 + b.abs()))
}

/// Runs the truncation-doubling loop, returning the converged `K`.
fn converge_k<F>(spec: &OperatorSpec, count: usize, opts: &GalerkinOptions, mut solve: F) -> Result<usize>
where
    F: FnMut(usize) -> Result<Vec<f64>>,
{
    let mut k = opts.initial_k(count);
    while Basis::new(k, spec.m()).len() < count {
        k *= 2;
    }
    if !opts.refine {
        return Ok(k);
    }
    let mut coarse = solve(k)?;
    for _ in 0..MAX_DOUBLINGS {
        let fine = solve(2 * k)?;
        k *= 2;
        if converged(&coarse, &fine, opts.rel_tol) {
            return Ok(k);
        }
        coarse = fine;
    }
    Err(Error::NoConvergence {
        doublings: MAX_DOUBLINGS,
        k,
    })
}

/// Eigenvalues only; cheaper than [`bloch_eigenvalues`] for band sweeps.
pub fn bloch_values(
    spec: &OperatorSpec,
    t: f64,
    count: usize,
    opts: &GalerkinOptions,
) -> Result<(Vec<f64>, usize)> {
    check_count(count)?;
    let mut last: Option<(usize, Vec<f64>)> = None;
    let k = converge_k(spec, count, opts, |k| {
        let v = lowest_eigenvalues(&assemble(spec, t, k)?, count);
        last = Some((k, v.clone()));
        Ok(v)
    })?;
    match last {
        Some((lk, v)) if lk == k => Ok((v, k)),
        _ => Ok((lowest_eigenvalues(&assemble(spec, t, k)?, count), k)),
    }
}

/// The lowest `count` Bloch eigenvalues of `L_t`, ascending, with eigenvectors.
pub fn bloch_eigenvalues(
    spec: &OperatorSpec,
    t: f64,
    count: usize,
    opts: &GalerkinOptions,
) -> Result<BlochSpectrum> {
    let (values, k) = bloch_values(spec, t, count, opts)?;
    let basis = Basis::new(k, spec.m());
    let vectors = inverse_iteration(&assemble(spec, t, k)?, &values);
    let samples = values
        .iter()
        .zip(vectors)
        .enumerate()
        .map(|(idx, (&lambda, coeffs))| BlochSample {
            t,
            n: idx + 1,
            lambda,
            basis,
            coeffs,
        })
        .collect();
    Ok(BlochSpectrum {
        t,
        k_used: k,
        samples,
    })
}

/// Full eigen-decomposition at a fixed truncation (values ascending).
pub fn full_spectrum(spec: &OperatorSpec, t: f64, k: usize) -> Result<(Vec<f64>, CMatrix)> {
    Ok(eigh(assemble(spec, t, k)?))
}

/// Synthesizes `Ψ(x) = Σ_{n', r} c_{n', r} e^{i(2πn'+t)x} e_r`.
pub fn eigenfunction_values(sample: &BlochSample, xs: &[f64]) -> Vec<Vec<Complex64>> {
    synthesize(&sample.coeffs, sample.basis, sample.t, xs)
}

pub(crate) fn synthesize(coeffs: &[Complex64], basis: Basis, t: f64, xs: &[f64]) -> Vec<Vec<Complex64>> {
    let nonzero: Vec<(usize, Complex64)> = coeffs
        .iter()
        .copied()
        .enumerate()
        .filter(|(_, c)| c.re != 0.0 || c.im != 0.0)
        .collect();
    xs.iter()
        .map(|&x| {
            let mut out = vec![Complex64::new(0.0, 0.0); basis.m];
            for &(idx, c) in &nonzero {
                let (n, r) = basis.frequency_of(idx);
                out[r] += c * Complex64::cis(wavenumber(n, t) * x);
            }
            out
        })
        .collect()
}
