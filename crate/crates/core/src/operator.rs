//! Operator definition: order `2ν`, matrix size `m`, and 1-periodic matrix
//! coefficients stored as finite Fourier series.
//!
//! The coefficient `P_k` (k = 2..=2ν) multiplies the `(2ν - k)`-th derivative.
//! Derivatives are taken in momentum form `D = -i d/dx`, and each lower-order
//! term is the symmetric product `(P_k D^j + D^j P_k) / 2` with `j = 2ν - k`,
//! so the operator is formally self-adjoint whenever every `P_k(x)` is
//! Hermitian. For constant coefficients this is just `P_k D^j`.

use std::collections::BTreeMap;
use std::f64::consts::PI;

use log::warn;
use nalgebra::DMatrix;
use num_complex::Complex64;
use serde::Deserialize;

use crate::error::{Error, Result};
use crate::linalg::{anti_hermitian_deviation, eigh, hermitize, CMatrix, ZERO};

/// Default relative tolerance for grouping eigenvalues of `C` into clusters.
pub const DEFAULT_CLUSTER_TOL: f64 = 1e-9;
/// Anti-Hermitian deviation of `C` above which a warning is logged.
pub const HERMITIAN_WARN_TOL: f64 = 1e-10;

/// A 1-periodic `m×m` matrix function given by finitely many Fourier terms.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientMatrix {
    m: usize,
    fourier: BTreeMap<i64, CMatrix>,
    real: bool,
}

impl CoefficientMatrix {
    pub fn zero(m: usize) -> Self {
        Self {
            m,
            fourier: BTreeMap::new(),
            real: false,
        }
    }

    /// A constant coefficient.
    pub fn constant(c: CMatrix) -> Result<Self> {
        let mut out = Self::zero(c.nrows());
        out.set_term(0, c)?;
        Ok(out)
    }

    /// `c0 + cos(2πx)·c1` with real symmetric parts, the common test shape.
    pub fn cosine(c0: CMatrix, c1: CMatrix) -> Result<Self> {
        let mut out = Self::constant(c0)?;
        out.set_term(1, c1.map(|z| z * 0.5))?;
        out.set_term(-1, c1.map(|z| z.conj() * 0.5))?;
        Ok(out)
    }

    pub fn dim(&self) -> usize {
        self.m
    }

    pub fn is_real_flagged(&self) -> bool {
        self.real
    }

    /// Marks the coefficient as real-valued, checking `ĉ_{-n} = conj(ĉ_n)`.
    pub fn mark_real(&mut self, k: usize) -> Result<()> {
        let deviation = self.real_deviation();
        if deviation > 1e-12 {
            return Err(Error::NotRealValued { k, deviation });
        }
        self.real = true;
        Ok(())
    }

    fn real_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for (&n, c) in &self.fourier {
            let zero = CMatrix::zeros(self.m, self.m);
            let partner = self.fourier.get(&-n).unwrap_or(&zero);
            for (a, b) in c.iter().zip(partner.iter()) {
                dev = dev.max((a - b.conj()).norm());
            }
        }
        dev
    }

    /// Replaces the Fourier coefficient at frequency `n`.
    pub fn set_term(&mut self, n: i64, c: CMatrix) -> Result<()> {
        if c.nrows() != self.m || c.ncols() != self.m {
            return Err(Error::NonSquare {
                rows: c.nrows(),
                cols: c.ncols(),
                m: self.m,
            });
        }
        if c.iter().all(|z| *z == ZERO) {
            self.fourier.remove(&n);
        } else {
            self.fourier.insert(n, c);
        }
        Ok(())
    }

    /// Fourier coefficient `ĉ_n` (zero matrix when absent).
    pub fn term(&self, n: i64) -> CMatrix {
        self.fourier
            .get(&n)
            .cloned()
            .unwrap_or_else(|| CMatrix::zeros(self.m, self.m))
    }

    pub fn term_ref(&self, n: i64) -> Option<&CMatrix> {
        self.fourier.get(&n)
    }

    pub fn terms(&self) -> impl Iterator<Item = (i64, &CMatrix)> {
        self.fourier.iter().map(|(&n, c)| (n, c))
    }

    pub fn is_zero(&self) -> bool {
        self.fourier.is_empty()
    }

    /// Largest `|n|` with a nonzero coefficient (0 for an empty series).
    pub fn max_frequency(&self) -> i64 {
        self.fourier.keys().map(|n| n.abs()).max().unwrap_or(0)
    }

    /// `r`-th derivative in `x`, again a trigonometric polynomial.
    pub fn derivative(&self, r: u32) -> Self {
        let mut out = Self::zero(self.m);
        for (&n, c) in &self.fourier {
            if n == 0 && r > 0 {
                continue;
            }
            let factor = Complex64::new(0.0, 2.0 * PI * n as f64).powu(r);
            out.fourier.insert(n, c.map(|z| z * factor));
        }
        out.real = self.real;
        out
    }

    /// Evaluates `Σ_n ĉ_n e^{2πinx}`.
    pub fn value_at(&self, x: f64) -> CMatrix {
        let mut out = CMatrix::zeros(self.m, self.m);
        for (&n, c) in &self.fourier {
            let phase = Complex64::cis(2.0 * PI * n as f64 * x);
            out.zip_apply(c, |acc, z| *acc += z * phase);
        }
        out
    }

    /// Anti-Hermitian deviation of the matrix function, measured on its
    /// Fourier data: `max |ĉ_n - conj(ĉ_{-n})ᵀ| / 2`.
    pub fn hermitian_valued_deviation(&self) -> f64 {
        let mut dev: f64 = 0.0;
        for (&n, c) in &self.fourier {
            let partner = self.term(-n);
            let adj = partner.adjoint();
            for (a, b) in c.iter().zip(adj.iter()) {
                dev = dev.max(((a - b) * 0.5).norm());
            }
        }
        dev
    }

    /// Adds `scale · other` in place.
    pub fn add_scaled(&mut self, other: &CoefficientMatrix, scale: Complex64) {
        for (&n, c) in &other.fourier {
            let entry = self
                .fourier
                .entry(n)
                .or_insert_with(|| CMatrix::zeros(other.m, other.m));
            entry.zip_apply(c, |acc, z| *acc += z * scale);
        }
        self.fourier.retain(|_, c| c.iter().any(|z| *z != ZERO));
        self.real = self.real && other.real;
    }

    pub fn scaled(&self, scale: f64) -> Self {
        let mut out = Self::zero(self.m);
        out.add_scaled(self, Complex64::new(scale, 0.0));
        out.real = self.real;
        out
    }
}

/// Evaluates `P(x) = Σ_n ĉ_n e^{2πinx}`.
pub fn coefficient_value(p: &CoefficientMatrix, x: f64) -> CMatrix {
    p.value_at(x)
}

/// A differential operator of order `2ν` acting on `C^m`-valued functions.
#[derive(Debug, Clone, PartialEq)]
pub struct OperatorSpec {
    nu: usize,
    m: usize,
    /// `coeffs[k - 2]` holds `P_k`.
    coeffs: Vec<CoefficientMatrix>,
}

impl OperatorSpec {
    /// The free operator `(-i d/dx)^{2ν}` on `C^m`.
    pub fn free(nu: usize, m: usize) -> Result<Self> {
        if nu < 2 {
            return Err(Error::InvalidOrder(nu as i64));
        }
        if m < 1 {
            return Err(Error::InvalidDimension(m as i64));
        }
        Ok(Self {
            nu,
            m,
            coeffs: (2..=2 * nu).map(|_| CoefficientMatrix::zero(m)).collect(),
        })
    }

    pub fn with_coefficient(mut self, k: usize, p: CoefficientMatrix) -> Result<Self> {
        self.set_coefficient(k, p)?;
        Ok(self)
    }

    pub fn set_coefficient(&mut self, k: usize, p: CoefficientMatrix) -> Result<()> {
        if k < 2 || k > 2 * self.nu {
            return Err(Error::CoefficientIndex {
                k: k as i64,
                max: 2 * self.nu,
            });
        }
        if p.dim() != self.m {
            return Err(Error::NonSquare {
                rows: p.dim(),
                cols: p.dim(),
                m: self.m,
            });
        }
        self.coeffs[k - 2] = p;
        Ok(())
    }

    pub fn nu(&self) -> usize {
        self.nu
    }

    pub fn m(&self) -> usize {
        self.m
    }

    /// Operator order `2ν`.
    pub fn order(&self) -> usize {
        2 * self.nu
    }

    /// `P_k` for `k` in `2..=2ν`.
    pub fn coefficient(&self, k: usize) -> &CoefficientMatrix {
        &self.coeffs[k - 2]
    }

    /// Iterates `(k, P_k)` over nonzero coefficients.
    pub fn coefficients(&self) -> impl Iterator<Item = (usize, &CoefficientMatrix)> {
        self.coeffs
            .iter()
            .enumerate()
            .map(|(i, c)| (i + 2, c))
            .filter(|(_, c)| !c.is_zero())
    }

    /// Largest Fourier frequency over all coefficients.
    pub fn max_frequency(&self) -> i64 {
        self.coeffs
            .iter()
            .map(CoefficientMatrix::max_frequency)
            .max()
            .unwrap_or(0)
    }

    /// True when every coefficient has `ĉ_{-n} = conj(ĉ_n)`.
    pub fn has_real_coefficients(&self) -> bool {
        self.coeffs.iter().all(|c| c.real_deviation() <= 1e-14)
    }

    /// The homotopy member `L_t(ε, C)`: `P_2 → C + ε(P_2 - C)`, `P_l → ε P_l`.
    pub fn homotopy(&self, eps: f64, c: &CMatrix) -> Result<Self> {
        let mut out = Self::free(self.nu, self.m)?;
        let mut p2 = CoefficientMatrix::constant(c.clone())?;
        let mut delta = self.coeffs[0].clone();
        delta.add_scaled(
            &CoefficientMatrix::constant(c.clone())?,
            Complex64::new(-1.0, 0.0),
        );
        p2.add_scaled(&delta, Complex64::new(eps, 0.0));
        out.coeffs[0] = p2;
        for k in 3..=2 * self.nu {
            out.coeffs[k - 2] = self.coeffs[k - 2].scaled(eps);
        }
        Ok(out)
    }

    /// The unperturbed operator with `P_2 = C` and no other coefficients.
    pub fn constant_part(&self, c: &CMatrix) -> Result<Self> {
        Self::free(self.nu, self.m)?.with_coefficient(2, CoefficientMatrix::constant(c.clone())?)
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigDoc {
    nu: i64,
    m: i64,
    #[serde(default)]
    coefficients: Vec<CoefficientDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct CoefficientDoc {
    k: i64,
    #[serde(default)]
    real: bool,
    #[serde(default)]
    entries: Vec<EntryDoc>,
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct EntryDoc {
    i: i64,
    j: i64,
    n: i64,
    re: toml::Value,
    #[serde(default)]
    im: Option<toml::Value>,
}

fn decimal(v: &toml::Value, what: &str) -> Result<f64> {
    let x = match v {
        toml::Value::Float(f) => *f,
        toml::Value::Integer(i) => *i as f64,
        toml::Value::String(s) => s
            .trim()
            .parse::<f64>()
            .map_err(|_| Error::MalformedComplex(format!("{what} = {s:?}")))?,
        other => return Err(Error::MalformedComplex(format!("{what} = {other}"))),
    };
    if !x.is_finite() {
        return Err(Error::MalformedComplex(format!("{what} = {x} is not finite")));
    }
    Ok(x)
}

/// Parses an operator config.
///
/// The document is TOML, or JSON when the text starts with `{`:
///
/// ```toml
/// nu = 2
/// m = 2
/// [[coefficients]]
/// k = 2
/// entries = [ { i = 1, j = 2, n = 0, re = 1.0, im = 0.0 },
///             { i = 2, j = 1, n = 0, re = 1.0, im = 0.0 } ]
/// ```
///
/// Matrix indices `i`, `j` are 1-based; `n` is the Fourier frequency.
pub fn parse_operator_spec(text: &str) -> Result<OperatorSpec> {
    let doc: ConfigDoc = if text.trim_start().starts_with('{') {
        let json: serde_json::Value =
            serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))?;
        let as_toml = toml::Value::try_from(json).map_err(|e| Error::Config(e.to_string()))?;
        as_toml
            .try_into()
            .map_err(|e: toml::de::Error| Error::Config(e.to_string()))?
    } else {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))?
    };
    if doc.nu < 2 {
        return Err(Error::InvalidOrder(doc.nu));
    }
    if doc.m < 1 {
        return Err(Error::InvalidDimension(doc.m));
    }
    let nu = doc.nu as usize;
    let m = doc.m as usize;
    let mut spec = OperatorSpec::free(nu, m)?;
    let mut seen = std::collections::BTreeSet::new();
    for coeff in &doc.coefficients {
        if coeff.k < 2 || coeff.k > 2 * doc.nu {
            return Err(Error::CoefficientIndex {
                k: coeff.k,
                max: 2 * nu,
            });
        }
        let k = coeff.k as usize;
        let mut p = spec.coefficient(k).clone();
        for e in &coeff.entries {
            if e.i < 1 || e.j < 1 || e.i > doc.m || e.j > doc.m {
                return Err(Error::EntryIndex { i: e.i, j: e.j, m });
            }
            let (i, j) = (e.i as usize - 1, e.j as usize - 1);
            if !seen.insert((k, i, j, e.n)) {
                return Err(Error::DuplicateEntry {
                    k,
                    i: i + 1,
                    j: j + 1,
                    n: e.n,
                });
            }
            let re = decimal(&e.re, "re")?;
            let im = match &e.im {
                Some(v) => decimal(v, "im")?,
                None => 0.0,
            };
            let mut c = p.term(e.n);
            c[(i, j)] = Complex64::new(re, im);
            p.set_term(e.n, c)?;
        }
        if coeff.real {
            p.mark_real(k)?;
        }
        spec.set_coefficient(k, p)?;
    }
    Ok(spec)
}

/// Hermitized mean of `P_2` together with the removed anti-Hermitian part.
#[derive(Debug, Clone)]
pub struct MeanMatrix {
    pub matrix: CMatrix,
    pub deviation: f64,
}

/// `C = ∫₀¹ P_2(x) dx`, which is the zeroth Fourier coefficient of `P_2`.
pub fn mean_matrix(spec: &OperatorSpec) -> MeanMatrix {
    let mut c = spec.coefficient(2).term(0);
    let deviation = anti_hermitian_deviation(&c);
    if deviation > HERMITIAN_WARN_TOL {
        warn!("mean matrix C has anti-Hermitian part {deviation:.3e}; hermitizing");
    }
    hermitize(&mut c);
    MeanMatrix {
        matrix: c,
        deviation,
    }
}

/// Distinct eigenvalues of `C` with multiplicities and orthonormal eigenvectors.
#[derive(Debug, Clone)]
pub struct MeanMatrixSpectrum {
    pub c: CMatrix,
    /// Distinct eigenvalues `μ_1 < … < μ_p`.
    pub mus: Vec<f64>,
    pub mults: Vec<usize>,
    /// `vecs[j][s]` is `u_{j,s}`.
    pub vecs: Vec<Vec<Vec<Complex64>>>,
}

impl MeanMatrixSpectrum {
    pub fn p(&self) -> usize {
        self.mus.len()
    }

    pub fn mu_min(&self) -> f64 {
        self.mus[0]
    }

    pub fn mu_max(&self) -> f64 {
        *self.mus.last().expect("nonempty spectrum")
    }

    /// `Σ_j μ_j Σ_s u_{j,s} u_{j,s}*`.
    pub fn reconstruct(&self) -> CMatrix {
        let m = self.c.nrows();
        let mut out = CMatrix::zeros(m, m);
        for (mu, group) in self.mus.iter().zip(&self.vecs) {
            for u in group {
                for r in 0..m {
                    for c in 0..m {
                        out[(r, c)] += u[r] * u[c].conj() * *mu;
                    }
                }
            }
        }
        out
    }
}

#[derive(Debug, Clone, Copy)]
pub struct DecomposeOptions {
    pub cluster_tol: f64,
    /// Fail instead of warning when `C` is not Hermitian.
    pub strict_hermitian: bool,
}

impl Default for DecomposeOptions {
    fn default() -> Self {
        Self {
            cluster_tol: DEFAULT_CLUSTER_TOL,
            strict_hermitian: false,
        }
    }
}

pub fn spectral_decompose(c: &CMatrix, opts: DecomposeOptions) -> Result<MeanMatrixSpectrum> {
    let m = c.nrows();
    if c.ncols() != m {
        return Err(Error::NonSquare {
            rows: c.nrows(),
            cols: c.ncols(),
            m,
        });
    }
    let deviation = anti_hermitian_deviation(c);
    if deviation > HERMITIAN_WARN_TOL {
        if opts.strict_hermitian {
            return Err(Error::NotHermitian {
                deviation,
                tolerance: HERMITIAN_WARN_TOL,
            });
        }
        warn!("C has anti-Hermitian part {deviation:.3e}; hermitizing before decomposition");
    }
    let mut h = c.clone();
    hermitize(&mut h);
    let (values, vectors) = eigh(h.clone());

    let mut mus: Vec<f64> = Vec::new();
    let mut members: Vec<Vec<usize>> = Vec::new();
    for (idx, &v) in values.iter().enumerate() {
        let starts_new = match members.last() {
            None => true,
            Some(group) => {
                let prev = values[*group.last().expect("nonempty group")];
                v - prev > opts.cluster_tol * (1.0 + prev.abs().max(v.abs()))
            }
        };
        if starts_new {
            members.push(vec![idx]);
        } else {
            members.last_mut().expect("nonempty").push(idx);
        }
    }
    let mut vecs = Vec::with_capacity(members.len());
    let mut mults = Vec::with_capacity(members.len());
    for group in &members {
        mus.push(group.iter().map(|&i| values[i]).sum::<f64>() / group.len() as f64);
        mults.push(group.len());
        vecs.push(
            group
                .iter()
                .map(|&i| vectors.column(i).iter().copied().collect())
                .collect(),
        );
    }
    Ok(MeanMatrixSpectrum {
        c: h,
        mus,
        mults,
        vecs,
    })
}

/// Builds a complex matrix from real row-major data.
pub fn real_matrix(m: usize, data: &[f64]) -> CMatrix {
    DMatrix::from_row_iterator(m, m, data.iter().map(|&x| Complex64::new(x, 0.0)))
}
