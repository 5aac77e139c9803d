//! Fundamental solutions, monodromy matrix and characteristic determinant.
//!
//! The operator is expanded into normal form
//! `(-1)^ν y^{(2ν)} + Σ_{l<2ν} Q_l(x) y^{(l)} = λ y`, where each symmetrized
//! term `½(P D^j + D^j P)` with `D = -i d/dx` contributes
//! `½(-i)^j [P y^{(j)} + Σ_l C(j,l) P^{(j-l)} y^{(l)}]`. No term reaches
//! order `2ν - 1`, so the companion system is trace-free and `det M = 1`.

use std::io::Write;

use nalgebra::DMatrix;
use num_complex::Complex64;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use crate::error::{Error, Result};
use crate::linalg::{CMatrix, ONE, ZERO};
use crate::operator::{CoefficientMatrix, OperatorSpec};
use crate::report::fmt_f64;

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
/// Largest admissible `|λ|^{1/2ν}`.
pub const DEFAULT_CUTOFF: f64 = 20.0;
pub const GROWTH_LIMIT: f64 = 1e10;
/// Bound on [`MonodromyMatrix::normalized_residual`] at a Galerkin eigenvalue.
pub const RESIDUAL_BOUND: f64 = 1e-5;
const MAX_STEPS: usize = 2_000_000;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FloquetOptions {
    pub tolerance: f64,
    pub cutoff: f64,
    pub growth_limit: f64,
}

impl Default for FloquetOptions {
    fn default() -> Self {
        Self {
            tolerance: DEFAULT_TOLERANCE,
            cutoff: DEFAULT_CUTOFF,
            growth_limit: GROWTH_LIMIT,
        }
    }
}

impl FloquetOptions {
    pub fn admits(&self, nu: usize, lambda: Complex64) -> bool {
        lambda.norm().powf(1.0 / (2 * nu) as f64) <= self.cutoff
    }
}

/// First-order system `Y' = A(x, λ) Y` for the state `(y, y', …, y^{(2ν-1)})`.
#[derive(Debug, Clone)]
pub struct CompanionSystem {
    nu: usize,
    m: usize,
    lambda: Complex64,
    /// `(l, Q_l)` for the nonzero lower-order normal-form coefficients.
    lower: Vec<(usize, CoefficientMatrix)>,
}

fn binomial(n: usize, k: usize) -> f64 {
    (0..k).fold(1.0, |acc, i| acc * (n - i) as f64 / (i + 1) as f64)
}

pub fn companion_system(spec: &OperatorSpec, lambda: Complex64) -> CompanionSystem {
    let nu = spec.nu();
    let m = spec.m();
    let order = spec.order();
    let mut q: Vec<CoefficientMatrix> = (0..order).map(|_| CoefficientMatrix::zero(m)).collect();
    for (k, p) in spec.coefficients() {
        let j = order - k;
        let phase = Complex64::new(0.0, -1.0).powu(j as u32) * 0.5;
        q[j].add_scaled(p, phase);
        for (l, slot) in q.iter_mut().enumerate().take(j + 1) {
            let deriv = p.derivative((j - l) as u32);
            slot.add_scaled(&deriv, phase * binomial(j, l));
        }
    }
    let lower = q
        .into_iter()
        .enumerate()
        .filter(|(_, c)| !c.is_zero())
        .collect();
    CompanionSystem {
        nu,
        m,
        lambda,
        lower,
    }
}

impl CompanionSystem {
    pub fn dim(&self) -> usize {
        2 * self.nu * self.m
    }

    fn sign(&self) -> f64 {
        if self.nu.is_multiple_of(2) {
            1.0
        } else {
            -1.0
        }
    }

    /// The system matrix `A(x, λ)`.
    pub fn matrix_at(&self, x: f64) -> CMatrix {
        let n = self.dim();
        let m = self.m;
        let order = 2 * self.nu;
        let mut a = CMatrix::zeros(n, n);
        for p in 0..order - 1 {
            for r in 0..m {
                a[(p * m + r, (p + 1) * m + r)] = ONE;
            }
        }
        let top = (order - 1) * m;
        let sign = self.sign();
        for r in 0..m {
            a[(top + r, r)] += self.lambda * sign;
        }
        for (l, q) in &self.lower {
            let v = q.value_at(x);
            for r in 0..m {
                for c in 0..m {
                    a[(top + r, l * m + c)] -= v[(r, c)] * sign;
                }
            }
        }
        a
    }

    /// Writes `A(x) Y` into `out`; `y` is row-major `dim × dim`.
    fn apply(&self, x: f64, y: &[Complex64], out: &mut [Complex64], qs: &mut [CMatrix]) {
        let n = self.dim();
        let m = self.m;
        let order = 2 * self.nu;
        out[..(order - 1) * m * n].copy_from_slice(&y[m * n..order * m * n]);
        for ((_, q), slot) in self.lower.iter().zip(qs.iter_mut()) {
            *slot = q.value_at(x);
        }
        let sign = self.sign();
        let top = (order - 1) * m;
        for r in 0..m {
            let row = &mut out[(top + r) * n..(top + r + 1) * n];
            for (col, o) in row.iter_mut().enumerate() {
                *o = self.lambda * y[r * n + col];
            }
            for ((l, _), v) in self.lower.iter().zip(qs.iter()) {
                for c in 0..m {
                    let coef = v[(r, c)];
                    if coef == ZERO {
                        continue;
                    }
                    let src = &y[(l * m + c) * n..(l * m + c + 1) * n];
                    for (o, s) in row.iter_mut().zip(src) {
                        *o -= coef * s;
                    }
                }
            }
            for o in row.iter_mut() {
                *o *= sign;
            }
        }
    }
}

/// `M(λ)`: block `(p, j)` is `Y_j^{(p-1)}(1, λ)`.
#[derive(Debug, Clone)]
pub struct MonodromyMatrix {
    pub lambda: Complex64,
    pub m: CMatrix,
    /// `det M` as the product of the segment propagator determinants.
    pub det: Complex64,
    /// Largest entry of the fundamental matrix over `[0, 1]`.
    pub cond_estimate: f64,
    pub steps: usize,
}

// Dormand–Prince 5(4) tableau.
const C: [f64; 7] = [0.0, 0.2, 0.3, 0.8, 8.0 / 9.0, 1.0, 1.0];
const A: [[f64; 6]; 7] = [
    [0.0; 6],
    [0.2, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [19372.0 / 6561.0, -25360.0 / 2187.0, 64448.0 / 6561.0, -212.0 / 729.0, 0.0, 0.0],
    [9017.0 / 3168.0, -355.0 / 33.0, 46732.0 / 5247.0, 49.0 / 176.0, -5103.0 / 18656.0, 0.0],
    [35.0 / 384.0, 0.0, 500.0 / 1113.0, 125.0 / 192.0, -2187.0 / 6784.0, 11.0 / 84.0],
];
const E: [f64; 7] = [
    35.0 / 384.0 - 5179.0 / 57600.0,
    0.0,
    500.0 / 1113.0 - 7571.0 / 16695.0,
    125.0 / 192.0 - 393.0 / 640.0,
    -2187.0 / 6784.0 + 92097.0 / 339200.0,
    11.0 / 84.0 - 187.0 / 2100.0,
    -1.0 / 40.0,
];

pub fn monodromy(spec: &OperatorSpec, lambda: Complex64) -> Result<MonodromyMatrix> {
    monodromy_with(spec, lambda, &FloquetOptions::default())
}

pub fn monodromy_with(spec: &OperatorSpec, lambda: Complex64, opts: &FloquetOptions) -> Result<MonodromyMatrix> {
    let root = lambda.norm().powf(1.0 / spec.order() as f64);
    if root > opts.cutoff {
        return Err(Error::ConditioningExceeded {
            growth: root.exp(),
            limit: opts.cutoff.exp(),
        });
    }
    let sys = companion_system(spec, lambda);
    let n = sys.dim();
    // Each segment grows by about e^1, so its propagator stays well conditioned.
    let segments = root.ceil().max(1.0) as usize;
    let mut total = CMatrix::identity(n, n);
    let mut det = ONE;
    let mut growth: f64 = 1.0;
    let mut steps = 0;
    for seg in 0..segments {
        let x0 = seg as f64 / segments as f64;
        let x1 = (seg + 1) as f64 / segments as f64;
        let (phi, used) = propagate(&sys, x0, x1, root, opts.tolerance)?;
        steps += used;
        det *= phi.clone().lu().determinant();
        total = phi * total;
        growth = growth.max(total.iter().map(|z| z.norm()).fold(0.0, f64::max));
        if growth > opts.growth_limit {
            return Err(Error::ConditioningExceeded {
                growth,
                limit: opts.growth_limit,
            });
        }
    }
    Ok(MonodromyMatrix {
        lambda,
        m: total,
        det,
        cond_estimate: growth,
        steps,
    })
}

/// Propagator of the companion system from `x0` to `x1` (identity at `x0`).
fn propagate(sys: &CompanionSystem, x0: f64, x1: f64, root: f64, tol: f64) -> Result<(CMatrix, usize)> {
    let n = sys.dim();
    let len = n * n;
    let mut y = vec![ZERO; len];
    for i in 0..n {
        y[i * n + i] = ONE;
    }
    let mut qs = vec![CMatrix::zeros(0, 0); sys.lower.len()];
    let mut k: Vec<Vec<Complex64>> = (0..7).map(|_| vec![ZERO; len]).collect();
    let mut stage = vec![ZERO; len];
    let mut x = x0;
    let mut h = (0.05 / (1.0 + root)).min(x1 - x0);
    let mut steps = 0;
    sys.apply(x, &y, &mut k[0], &mut qs);
    while x < x1 {
        if steps >= MAX_STEPS {
            return Err(Error::Integration(format!("step budget exhausted at x = {x}")));
        }
        let last = x + h >= x1;
        if last {
            h = x1 - x;
        }
        for s in 1..7 {
            for (idx, v) in stage.iter_mut().enumerate() {
                let mut acc = y[idx];
                for (r, kr) in k.iter().enumerate().take(s) {
                    let coef = A[s][r];
                    if coef != 0.0 {
                        acc += kr[idx] * (h * coef);
                    }
                }
                *v = acc;
            }
            let (_, tail) = k.split_at_mut(s);
            sys.apply(x + C[s] * h, &stage, &mut tail[0], &mut qs);
        }
        // Stage 7 is evaluated at the fifth-order solution (FSAL).
        let mut err: f64 = 0.0;
        for idx in 0..len {
            let mut e = ZERO;
            for (r, kr) in k.iter().enumerate() {
                if E[r] != 0.0 {
                    e += kr[idx] * E[r];
                }
            }
            let scale = tol * (1.0 + y[idx].norm().max(stage[idx].norm()));
            err = err.max((e * h).norm() / scale);
        }
        if !err.is_finite() {
            return Err(Error::Integration(format!("non-finite state at x = {x}")));
        }
        if err <= 1.0 {
            x = if last { x1 } else { x + h };
            y.copy_from_slice(&stage);
            let (first, rest) = k.split_at_mut(1);
            first[0].copy_from_slice(&rest[5]);
            steps += 1;
        }
        let factor = if err == 0.0 { 5.0 } else { (0.9 * err.powf(-0.2)).clamp(0.2, 5.0) };
        h *= factor;
    }
    Ok((DMatrix::from_row_slice(n, n, &y), steps))
}

impl MonodromyMatrix {
    /// `det(M - z I)`.
    pub fn char_poly(&self, z: Complex64) -> Complex64 {
        let n = self.m.nrows();
        let shifted = &self.m - CMatrix::identity(n, n) * z;
        shifted.lu().determinant()
    }

    /// `Δ(λ, t) = det(M - e^{it} I)`.
    pub fn char_det(&self, t: f64) -> Complex64 {
        self.char_poly(Complex64::cis(t))
    }

    pub fn determinant(&self) -> Complex64 {
        self.det
    }

    /// `det M` by LU of the assembled matrix; loses accuracy as `M` grows.
    pub fn determinant_direct(&self) -> Complex64 {
        self.m.clone().lu().determinant()
    }

    /// Scale used to normalize `Δ`: `‖M - e^{it}I‖_∞^{2νm - 1}`.
    pub fn residual_scale(&self, t: f64) -> f64 {
        let n = self.m.nrows();
        let shifted = &self.m - CMatrix::identity(n, n) * Complex64::cis(t);
        let row_norm = (0..n)
            .map(|i| shifted.row(i).iter().map(|z| z.norm()).sum::<f64>())
            .fold(0.0, f64::max);
        row_norm.powi(n as i32 - 1)
    }

    /// `|Δ(λ, t)|` divided by [`Self::residual_scale`].
    pub fn normalized_residual(&self, t: f64) -> f64 {
        self.char_det(t).norm() / self.residual_scale(t)
    }
}

/// `|det M(λ) - 1|` at `count` pseudo-random admissible `λ`.
///
/// `|λ|^{1/2ν}` is drawn uniformly below the cutoff and `arg λ` uniformly;
/// draws rejected by the growth limit are redrawn.
pub fn liouville_defects(
    spec: &OperatorSpec,
    count: usize,
    seed: u64,
    opts: &FloquetOptions,
) -> Result<Vec<(Complex64, f64)>> {
    let mut rng = StdRng::seed_from_u64(seed);
    let mut out = Vec::with_capacity(count);
    let mut attempts = 0;
    while out.len() < count {
        attempts += 1;
        if attempts > 100 * count.max(1) {
            return Err(Error::Integration("too few admissible spectral parameters".into()));
        }
        let root = rng.random_range(0.0..opts.cutoff);
        let arg = rng.random_range(0.0..2.0 * std::f64::consts::PI);
        let lambda = Complex64::from_polar(root.powi(spec.order() as i32), arg);
        match monodromy_with(spec, lambda, opts) {
            Ok(mono) => out.push((lambda, (mono.determinant() - ONE).norm())),
            Err(Error::ConditioningExceeded { .. }) => continue,
            Err(e) => return Err(e),
        }
    }
    Ok(out)
}

pub fn char_det(spec: &OperatorSpec, lambda: Complex64, t: f64) -> Result<Complex64> {
    Ok(monodromy(spec, lambda)?.char_det(t))
}

/// One diagnostic evaluation of `Δ`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DeltaRecord {
    pub lambda: Complex64,
    pub t: f64,
    pub delta: Complex64,
}

pub fn write_delta_csv<W: Write>(out: W, rows: &[DeltaRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["lambda_re", "lambda_im", "t", "delta_re", "delta_im"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.lambda.re),
            fmt_f64(r.lambda.im),
            fmt_f64(r.t),
            fmt_f64(r.delta.re),
            fmt_f64(r.delta.im),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}
