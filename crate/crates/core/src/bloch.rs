//! Spectral projections onto eigenvalue clusters, phase-normalized Bloch
//! eigenfunctions and their continuity in the quasimomentum.

use std::f64::consts::PI;
use std::io::Write;

use num_complex::Complex64;
use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::galerkin::{assemble, bloch_eigenvalues, bloch_values, synthesize, wavenumber, Basis, GalerkinOptions};
use crate::linalg::inverse_iteration;
use crate::operator::OperatorSpec;
use crate::report::fmt_f64;

/// Relative distance of an eigenvalue to the contour that is rejected.
pub const CONTOUR_TOL: f64 = 1e-8;
/// Relative nearest-neighbour distance below which an eigenvalue is not simple.
pub const SIMPLE_TOL: f64 = 1e-6;
/// Interior points of the sup-norm grid on `[0, 1]`.
pub const SUP_POINTS: usize = 1024;

/// `1024` uniform interior points of `[0, 1]` plus both endpoints.
pub fn sup_grid() -> Vec<f64> {
    let n = SUP_POINTS + 1;
    (0..=n).map(|i| if i == n { 1.0 } else { i as f64 / n as f64 }).collect()
}

/// A quasi-periodic function `Σ c_{n,r} e^{i(2πn+t)x} e_r` on `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct BlochFunction {
    pub t: f64,
    pub basis: Basis,
    pub coeffs: Vec<Complex64>,
}

/// `∫_0^1 e^{iθx} dx`.
fn exp_integral(theta: f64) -> Complex64 {
    if theta.abs() < 1e-8 {
        Complex64::new(1.0 - theta * theta / 6.0, theta / 2.0)
    } else {
        (Complex64::cis(theta) - 1.0) / Complex64::new(0.0, theta)
    }
}

impl BlochFunction {
    pub fn new(t: f64, basis: Basis, coeffs: Vec<Complex64>) -> Result<Self> {
        if coeffs.len() != basis.len() {
            return Err(Error::InvalidArgument(format!(
                "{} coefficients for a basis of size {}",
                coeffs.len(),
                basis.len()
            )));
        }
        Ok(Self { t, basis, coeffs })
    }

    /// `(self, other)` in `L²(0, 1; ℂ^m)`, antilinear in `self`.
    pub fn inner(&self, other: &BlochFunction) -> Complex64 {
        if self.t == other.t && self.basis == other.basis {
            return self.coeffs.iter().zip(&other.coeffs).map(|(a, b)| a.conj() * b).sum();
        }
        let m = self.basis.m;
        let mut acc = Complex64::new(0.0, 0.0);
        for (i, a) in self.coeffs.iter().enumerate() {
            if a.re == 0.0 && a.im == 0.0 {
                continue;
            }
            let (n, r) = self.basis.frequency_of(i);
            for (j, b) in other.coeffs.iter().enumerate().skip(r).step_by(m) {
                if b.re == 0.0 && b.im == 0.0 {
                    continue;
                }
                let (n2, _) = other.basis.frequency_of(j);
                acc += a.conj() * b * exp_integral(wavenumber(n2, other.t) - wavenumber(n, self.t));
            }
        }
        acc
    }

    pub fn values(&self, xs: &[f64]) -> Vec<Vec<Complex64>> {
        synthesize(&self.coeffs, self.basis, self.t, xs)
    }
}

/// `max_x |f(x) - g(x)|` over `xs`, Euclidean in the components.
pub fn sup_distance(f: &BlochFunction, g: &BlochFunction, xs: &[f64]) -> f64 {
    let (fv, gv) = (f.values(xs), g.values(xs));
    fv.iter()
        .zip(&gv)
        .map(|(a, b)| a.iter().zip(b).map(|(p, q)| (p - q).norm_sqr()).sum::<f64>().sqrt())
        .fold(0.0, f64::max)
}

/// The circle `|z - center| = radius` around the cluster `Λ_j(a)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProjectionDisk {
    pub center: f64,
    pub radius: f64,
    pub a: f64,
}

impl ProjectionDisk {
    /// Disk around the cluster of `λ_n(a)` with a quarter of the distance to
    /// the neighbouring clusters as radius. Also returns the cluster's band indices.
    pub fn around(spec: &OperatorSpec, a: f64, n: usize, opts: &GalerkinOptions) -> Result<(Self, Vec<usize>)> {
        if n == 0 {
            return Err(Error::InvalidArgument("band index is 1-based".into()));
        }
        let mut count = n + 2;
        let tol = |x: f64| SIMPLE_TOL * (1.0 + x.abs());
        loop {
            let (v, _) = bloch_values(spec, a, count, opts)?;
            let lam = v[n - 1];
            let mut lo = n - 1;
            while lo > 0 && (v[lo - 1] - lam).abs() <= tol(lam) {
                lo -= 1;
            }
            let mut hi = n - 1;
            while hi + 1 < v.len() && (v[hi + 1] - lam).abs() <= tol(lam) {
                hi += 1;
            }
            if hi + 1 == v.len() {
                count *= 2;
                continue;
            }
            let center = v[lo..=hi].iter().sum::<f64>() / (hi - lo + 1) as f64;
            let below = if lo > 0 { center - v[lo - 1] } else { f64::INFINITY };
            let above = v[hi + 1] - center;
            let disk = ProjectionDisk {
                center,
                radius: 0.25 * below.min(above),
                a,
            };
            return Ok((disk, (lo + 1..=hi + 1).collect()));
        }
    }
}

/// Orthonormal basis of the spectral subspace of `L_t` inside a disk.
#[derive(Debug, Clone)]
pub struct SpectralProjection {
    pub t: f64,
    pub basis: Basis,
    /// 1-based band indices inside the disk.
    pub indices: Vec<usize>,
    pub eigenvalues: Vec<f64>,
    pub vectors: Vec<Vec<Complex64>>,
}

impl SpectralProjection {
    pub fn rank(&self) -> usize {
        self.vectors.len()
    }

    pub fn functions(&self) -> impl Iterator<Item = BlochFunction> + '_ {
        self.vectors.iter().map(|v| BlochFunction {
            t: self.t,
            basis: self.basis,
            coeffs: v.clone(),
        })
    }

    /// `P_t f = Σ ψ_i (ψ_i, f)`.
    pub fn apply(&self, f: &BlochFunction) -> BlochFunction {
        let mut out = vec![Complex64::new(0.0, 0.0); self.basis.len()];
        for psi in self.functions() {
            let c = psi.inner(f);
            for (o, p) in out.iter_mut().zip(&psi.coeffs) {
                *o += p * c;
            }
        }
        BlochFunction {
            t: self.t,
            basis: self.basis,
            coeffs: out,
        }
    }

    /// Largest deviation of the Gram matrix of the returned basis from the identity.
    pub fn gram_deviation(&self) -> f64 {
        let mut worst: f64 = 0.0;
        for (i, u) in self.vectors.iter().enumerate() {
            for (j, v) in self.vectors.iter().enumerate() {
                let g: Complex64 = u.iter().zip(v).map(|(a, b)| a.conj() * b).sum();
                let expect = if i == j { 1.0 } else { 0.0 };
                worst = worst.max((g - expect).norm());
            }
        }
        worst
    }
}

/// Spectral realization of the Riesz projection of `L_t` onto the disk.
pub fn riesz_projection(spec: &OperatorSpec, t: f64, disk: &ProjectionDisk, opts: &GalerkinOptions) -> Result<SpectralProjection> {
    let (lo_edge, hi_edge) = (disk.center - disk.radius, disk.center + disk.radius);
    let mut count = 4;
    let (values, k) = loop {
        let (v, k) = bloch_values(spec, t, count, opts)?;
        if *v.last().expect("count ≥ 1") > hi_edge {
            break (v, k);
        }
        count *= 2;
    };
    let on = CONTOUR_TOL * (1.0 + disk.center.abs());
    for &lam in &values {
        if ((lam - disk.center).abs() - disk.radius).abs() <= on {
            return Err(Error::EigenvalueOnContour {
                eigenvalue: lam,
                center: disk.center,
                radius: disk.radius,
            }
            .at(t));
        }
    }
    let (indices, inside): (Vec<usize>, Vec<f64>) = values
        .iter()
        .enumerate()
        .filter(|(_, &lam)| lam > lo_edge && lam < hi_edge)
        .map(|(i, &lam)| (i + 1, lam))
        .unzip();
    let vectors = if inside.is_empty() {
        Vec::new()
    } else {
        inverse_iteration(&assemble(spec, t, k)?, &inside)
    };
    Ok(SpectralProjection {
        t,
        basis: Basis::new(k, spec.m()),
        indices,
        eigenvalues: inside,
        vectors,
    })
}

/// `‖P_t f - P_a f‖_∞` over `xs`.
pub fn projection_apply_uniform(
    spec: &OperatorSpec,
    a: f64,
    t: f64,
    disk: &ProjectionDisk,
    f: &BlochFunction,
    xs: &[f64],
    opts: &GalerkinOptions,
) -> Result<f64> {
    let pa = riesz_projection(spec, a, disk, opts)?;
    let pt = riesz_projection(spec, t, disk, opts)?;
    Ok(sup_distance(&pt.apply(f), &pa.apply(f), xs))
}

/// Basis element `e^{i(2πk+t)x} e_r` used to fix the eigenfunction phase.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PhaseAnchor {
    pub frequency: i64,
    /// 1-based component.
    pub component: usize,
    pub modulus: f64,
    pub threshold: f64,
}

impl PhaseAnchor {
    fn coeff(&self, basis: Basis, coeffs: &[Complex64]) -> Complex64 {
        if basis.contains(self.frequency) && self.component >= 1 && self.component <= basis.m {
            coeffs[basis.index(self.frequency, self.component - 1)]
        } else {
            Complex64::new(0.0, 0.0)
        }
    }
}

fn check_simple(values: &[f64], n: usize) -> Result<()> {
    let lam = values[n - 1];
    let mut distance = f64::INFINITY;
    if n >= 2 {
        distance = distance.min(lam - values[n - 2]);
    }
    if n < values.len() {
        distance = distance.min(values[n] - lam);
    }
    if distance <= SIMPLE_TOL * (1.0 + lam.abs()) {
        return Err(Error::DegenerateEigenvalue { index: n, distance });
    }
    Ok(())
}

fn anchor_of(coeffs: &[Complex64], basis: Basis) -> PhaseAnchor {
    let (idx, modulus) = coeffs
        .iter()
        .map(|c| c.norm())
        .enumerate()
        .fold((0, -1.0), |best, (i, v)| if v > best.1 { (i, v) } else { best });
    let (frequency, r) = basis.frequency_of(idx);
    PhaseAnchor {
        frequency,
        component: r + 1,
        modulus,
        threshold: 0.5 * modulus,
    }
}

/// Anchor at the largest Fourier coefficient of `Ψ_{n,a}`.
pub fn select_anchor(spec: &OperatorSpec, a: f64, n: usize, opts: &GalerkinOptions) -> Result<PhaseAnchor> {
    if n == 0 {
        return Err(Error::InvalidArgument("band index is 1-based".into()));
    }
    let spectrum = bloch_eigenvalues(spec, a, n + 1, opts)?;
    check_simple(&spectrum.values(), n)?;
    let sample = &spectrum.samples[n - 1];
    Ok(anchor_of(&sample.coeffs, sample.basis))
}

/// Rotates `coeffs` so the anchor coefficient is real and positive.
pub fn phase_normalize(coeffs: &[Complex64], basis: Basis, anchor: &PhaseAnchor) -> Result<Vec<Complex64>> {
    let c = anchor.coeff(basis, coeffs);
    let modulus = c.norm();
    if modulus == 0.0 {
        return Err(Error::ZeroAnchorCoefficient);
    }
    let rot = c.conj() / modulus;
    Ok(coeffs.iter().map(|z| z * rot).collect())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContinuityRecord {
    pub t: f64,
    pub sup_diff_projection: f64,
    pub sup_diff_eigenfunction: f64,
    pub anchor_modulus: f64,
}

#[derive(Debug, Clone)]
pub struct ContinuityScan {
    pub n: usize,
    pub a: f64,
    pub anchor: PhaseAnchor,
    pub disk: ProjectionDisk,
    /// Truncation shared by every point of the scan.
    pub k: usize,
    pub records: Vec<ContinuityRecord>,
}

/// Unit phase applied to the eigenvector of band `n` at quasimomentum `t`.
pub type Gauge = dyn Fn(f64, usize) -> Complex64 + Sync;

fn apply_gauge(gauge: Option<&Gauge>, t: f64, n: usize, v: &mut [Complex64]) {
    if let Some(g) = gauge {
        let phase = g(t, n);
        v.iter_mut().for_each(|z| *z *= phase);
    }
}

fn gauged_projection(spec: &OperatorSpec, t: f64, disk: &ProjectionDisk, opts: &GalerkinOptions, gauge: Option<&Gauge>) -> Result<SpectralProjection> {
    let mut p = riesz_projection(spec, t, disk, opts)?;
    for (v, &n) in p.vectors.iter_mut().zip(&p.indices) {
        apply_gauge(gauge, t, n, v);
    }
    Ok(p)
}

/// `‖Ψ_{n,t} - Ψ_{n,a}‖_∞` and `‖P_t Ψ_{n,a} - Ψ_{n,a}‖_∞` along `ts`.
///
/// All points use the truncation that converged at `a`, so the functions
/// compared live in the same finite basis.
pub fn bloch_continuity_scan(
    spec: &OperatorSpec,
    n: usize,
    a: f64,
    ts: &[f64],
    xs: &[f64],
    opts: &GalerkinOptions,
) -> Result<ContinuityScan> {
    bloch_continuity_scan_gauged(spec, n, a, ts, xs, opts, None)
}

/// As [`bloch_continuity_scan`], with eigenvectors multiplied by `gauge`
/// straight out of the solver.
pub fn bloch_continuity_scan_gauged(
    spec: &OperatorSpec,
    n: usize,
    a: f64,
    ts: &[f64],
    xs: &[f64],
    opts: &GalerkinOptions,
    gauge: Option<&Gauge>,
) -> Result<ContinuityScan> {
    if n == 0 {
        return Err(Error::InvalidArgument("band index is 1-based".into()));
    }
    let at_a = bloch_eigenvalues(spec, a, n + 1, opts)?;
    check_simple(&at_a.values(), n)?;
    let fixed = GalerkinOptions {
        k: Some(at_a.k_used),
        refine: false,
        ..*opts
    };
    let sample = &at_a.samples[n - 1];
    let mut coeffs_a = sample.coeffs.clone();
    apply_gauge(gauge, a, n, &mut coeffs_a);
    let anchor = anchor_of(&coeffs_a, sample.basis);
    let psi_a = BlochFunction::new(a, sample.basis, phase_normalize(&coeffs_a, sample.basis, &anchor)?)?;
    let (disk, _) = ProjectionDisk::around(spec, a, n, &fixed)?;
    let pa = gauged_projection(spec, a, &disk, &fixed, gauge)?;
    let projected_a = pa.apply(&psi_a);

    let records: Vec<Result<ContinuityRecord>> = ts
        .par_iter()
        .map(|&t| {
            let spectrum = bloch_eigenvalues(spec, t, n, &fixed).map_err(|e| e.at(t))?;
            let s = &spectrum.samples[n - 1];
            let mut coeffs = s.coeffs.clone();
            apply_gauge(gauge, t, n, &mut coeffs);
            let modulus = anchor.coeff(s.basis, &coeffs).norm();
            if modulus <= anchor.threshold {
                return Err(Error::AnchorLost {
                    t,
                    modulus,
                    threshold: anchor.threshold,
                });
            }
            let psi_t = BlochFunction::new(t, s.basis, phase_normalize(&coeffs, s.basis, &anchor)?)?;
            let pt = gauged_projection(spec, t, &disk, &fixed, gauge)?;
            Ok(ContinuityRecord {
                t,
                sup_diff_projection: sup_distance(&pt.apply(&psi_a), &projected_a, xs),
                sup_diff_eigenfunction: sup_distance(&psi_t, &psi_a, xs),
                anchor_modulus: modulus,
            })
        })
        .collect();
    Ok(ContinuityScan {
        n,
        a,
        anchor,
        disk,
        k: at_a.k_used,
        records: records.into_iter().collect::<Result<_>>()?,
    })
}

/// `a + (π/8)·2^{-i}` for `i = 0..len`, approaching `a` from above.
pub fn geometric_approach(a: f64, len: usize) -> Vec<f64> {
    (0..len).map(|i| a + PI / 8.0 * 0.5f64.powi(i as i32)).collect()
}

/// True when the sequence falls in trend: each value at most `slack` times the
/// running minimum of its predecessors and the last below the first.
pub fn decreasing_in_trend(values: &[f64], slack: f64) -> bool {
    let mut best = f64::INFINITY;
    for &v in values {
        if v > slack * best {
            return false;
        }
        best = best.min(v);
    }
    values.len() < 2 || values[values.len() - 1] < values[0]
}

pub fn write_continuity_csv<W: Write>(out: W, rows: &[ContinuityRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["t", "sup_diff_projection", "sup_diff_eigenfunction", "anchor_modulus"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.t),
            fmt_f64(r.sup_diff_projection),
            fmt_f64(r.sup_diff_eigenfunction),
            fmt_f64(r.anchor_modulus),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::linalg::CMatrix;
    use crate::operator::{real_matrix, CoefficientMatrix};
    use proptest::prelude::*;

    fn free() -> OperatorSpec {
        OperatorSpec::free(2, 1).unwrap()
    }

    fn perturbed() -> OperatorSpec {
        let p2 = CoefficientMatrix::cosine(
            real_matrix(2, &[2.0, 0.0, 0.0, 5.0]),
            real_matrix(2, &[0.0, 1.0, 1.0, 0.0]),
        )
        .unwrap();
        let mut p3 = CoefficientMatrix::zero(2);
        p3.set_term(1, CMatrix::identity(2, 2) * Complex64::new(0.0, -0.15)).unwrap();
        p3.set_term(-1, CMatrix::identity(2, 2) * Complex64::new(0.0, 0.15)).unwrap();
        OperatorSpec::free(2, 2)
            .unwrap()
            .with_coefficient(2, p2)
            .unwrap()
            .with_coefficient(3, p3)
            .unwrap()
    }

    #[test]
    fn sup_grid_has_endpoints() {
        let xs = sup_grid();
        assert_eq!(xs.len(), SUP_POINTS + 2);
        assert_eq!((xs[0], xs[xs.len() - 1]), (0.0, 1.0));
    }

    #[test]
    fn cross_inner_product_matches_quadrature() {
        let basis = Basis::new(2, 1);
        let f = BlochFunction::new(0.3, basis, vec![0.1, 0.2, 1.0, -0.4, 0.0].into_iter().map(|x| Complex64::new(x, 0.5 * x)).collect()).unwrap();
        let g = BlochFunction::new(-0.7, basis, vec![0.0, 1.0, 0.3, 0.0, 0.2].into_iter().map(|x| Complex64::new(x, -x)).collect()).unwrap();
        let n = 20000;
        let xs: Vec<f64> = (0..n).map(|i| (i as f64 + 0.5) / n as f64).collect();
        let (fv, gv) = (f.values(&xs), g.values(&xs));
        let quad: Complex64 = fv.iter().zip(&gv).map(|(a, b)| a[0].conj() * b[0]).sum::<Complex64>() / n as f64;
        assert!((f.inner(&g) - quad).norm() < 1e-7);
    }

    #[test]
    fn projection_fixes_inside_and_kills_outside() {
        let spec = perturbed();
        let opts = GalerkinOptions::default();
        let (disk, idx) = ProjectionDisk::around(&spec, 0.4, 3, &opts).unwrap();
        let p = riesz_projection(&spec, 0.4, &disk, &opts).unwrap();
        assert_eq!(p.indices, idx);
        assert!(p.gram_deviation() < 1e-10);
        let sp = bloch_eigenvalues(&spec, 0.4, 6, &GalerkinOptions::fixed(p.basis.k)).unwrap();
        for s in &sp.samples {
            let f = BlochFunction::new(0.4, s.basis, s.coeffs.clone()).unwrap();
            let pf = p.apply(&f);
            let expect = if idx.contains(&s.n) { f.clone() } else { BlochFunction { coeffs: vec![Complex64::new(0.0, 0.0); f.coeffs.len()], ..f.clone() } };
            let err: f64 = pf.coeffs.iter().zip(&expect.coeffs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(err < 1e-9, "band {} err {err}", s.n);
            let twice = p.apply(&pf);
            let idem: f64 = twice.coeffs.iter().zip(&pf.coeffs).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
            assert!(idem < 1e-10);
        }
    }

    #[test]
    fn degenerate_cluster_gives_full_rank() {
        // Free scalar spectrum at t = 0 is double except for the ground state.
        let opts = GalerkinOptions::default();
        let (disk, idx) = ProjectionDisk::around(&free(), 0.0, 2, &opts).unwrap();
        assert_eq!(idx, vec![2, 3]);
        let p = riesz_projection(&free(), 0.0, &disk, &opts).unwrap();
        assert_eq!(p.rank(), 2);
        assert!(p.gram_deviation() < 1e-10);
        let near = riesz_projection(&free(), 1e-3, &disk, &opts).unwrap();
        assert_eq!(near.indices, vec![2, 3]);
    }

    #[test]
    fn contour_hit_is_rejected() {
        let opts = GalerkinOptions::default();
        let lam = 1.0f64.powi(4);
        let disk = ProjectionDisk { center: lam + 0.5, radius: 0.5, a: 1.0 };
        let err = riesz_projection(&free(), 1.0, &disk, &opts).unwrap_err();
        assert!(matches!(err.root(), Error::EigenvalueOnContour { .. }));
    }

    #[test]
    fn free_anchor_is_pure_exponential() {
        let a = 0.5;
        let opts = GalerkinOptions::default();
        // λ_2(0.5) = (2π·(-1) + 0.5)⁴.
        let anchor = select_anchor(&free(), a, 2, &opts).unwrap();
        assert_eq!((anchor.frequency, anchor.component), (-1, 1));
        assert!((anchor.modulus - 1.0).abs() < 1e-12);
        assert!(matches!(select_anchor(&free(), 0.0, 2, &opts), Err(Error::DegenerateEigenvalue { index: 2, .. })));
    }

    #[test]
    fn constant_c_anchor_follows_branch() {
        let spec = OperatorSpec::free(2, 2)
            .unwrap()
            .with_coefficient(2, CoefficientMatrix::constant(real_matrix(2, &[2.0, 0.0, 0.0, 5.0])).unwrap())
            .unwrap();
        // λ_1(0.7) is the k = 0, μ = 2 branch; λ_2(0.7) the μ = 5 branch.
        let opts = GalerkinOptions::default();
        let first = select_anchor(&spec, 0.7, 1, &opts).unwrap();
        let second = select_anchor(&spec, 0.7, 2, &opts).unwrap();
        assert_eq!((first.frequency, first.component), (0, 1));
        assert_eq!((second.frequency, second.component), (0, 2));
    }

    #[test]
    fn phase_normalize_examples() {
        let basis = Basis::new(1, 1);
        let anchor = PhaseAnchor { frequency: 0, component: 1, modulus: 0.6, threshold: 0.3 };
        let v = vec![Complex64::new(0.0, 0.8), Complex64::new(-0.6, 0.0), Complex64::new(0.0, 0.0)];
        let out = phase_normalize(&v, basis, &anchor).unwrap();
        assert_eq!(out[1], Complex64::new(0.6, 0.0));
        assert!((out[0] - Complex64::new(0.0, -0.8)).norm() < 1e-15);
        assert_eq!(phase_normalize(&out, basis, &anchor).unwrap(), out);
        let zero = vec![Complex64::new(1.0, 0.0), Complex64::new(0.0, 0.0), Complex64::new(0.0, 0.0)];
        assert!(matches!(phase_normalize(&zero, basis, &anchor), Err(Error::ZeroAnchorCoefficient)));
    }

    proptest! {
        #[test]
        fn phase_normalize_is_gauge_invariant(theta in -10.0f64..10.0, re in proptest::collection::vec(-1.0f64..1.0, 6), im in proptest::collection::vec(-1.0f64..1.0, 6)) {
            let basis = Basis::new(1, 2);
            let v: Vec<Complex64> = re.iter().zip(&im).map(|(&a, &b)| Complex64::new(a, b)).collect();
            let anchor = anchor_of(&v, basis);
            let rotated: Vec<Complex64> = v.iter().map(|z| z * Complex64::cis(theta)).collect();
            let (p, q) = (phase_normalize(&v, basis, &anchor).unwrap(), phase_normalize(&rotated, basis, &anchor).unwrap());
            for (x, y) in p.iter().zip(&q) {
                prop_assert!((x - y).norm() < 1e-14);
            }
            let n0: f64 = v.iter().map(|z| z.norm_sqr()).sum();
            let n1: f64 = p.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((n0 - n1).abs() < 1e-14 * (1.0 + n0));
        }
    }

    #[test]
    fn free_scan_matches_closed_form() {
        let a = 0.5;
        let ts = geometric_approach(a, 8);
        let scan = bloch_continuity_scan(&free(), 2, a, &ts, &sup_grid(), &GalerkinOptions::default()).unwrap();
        for r in &scan.records {
            let exact = 2.0 * ((r.t - a) / 2.0).sin().abs();
            assert!((r.sup_diff_eigenfunction - exact).abs() <= 1e-10, "{r:?} vs {exact}");
        }
        let diffs: Vec<f64> = scan.records.iter().map(|r| r.sup_diff_projection).collect();
        assert!(decreasing_in_trend(&diffs, 1.0));
        let same = bloch_continuity_scan(&free(), 2, a, &[a], &sup_grid(), &GalerkinOptions::default()).unwrap();
        assert!(same.records[0].sup_diff_eigenfunction < 1e-14);
        assert!(same.records[0].sup_diff_projection < 1e-14);
    }

    #[test]
    fn perturbed_scan_converges() {
        let a = 0.4;
        let ts: Vec<f64> = (0..6).map(|i| a + 1e-1 * 0.1f64.powi(i)).collect();
        let scan = bloch_continuity_scan(&perturbed(), 3, a, &ts, &sup_grid(), &GalerkinOptions::default()).unwrap();
        let eig: Vec<f64> = scan.records.iter().map(|r| r.sup_diff_eigenfunction).collect();
        let proj: Vec<f64> = scan.records.iter().map(|r| r.sup_diff_projection).collect();
        assert!(decreasing_in_trend(&eig, 1.0), "{eig:?}");
        assert!(decreasing_in_trend(&proj, 1.0), "{proj:?}");
        assert!(eig[3] < 1e-3 && proj[3] < 1e-3);
        for r in &scan.records {
            assert!(r.anchor_modulus > scan.anchor.threshold);
        }
    }

    #[test]
    fn orthogonal_input_projects_to_nothing() {
        let spec = perturbed();
        let opts = GalerkinOptions::default();
        let (a, t) = (0.4, 0.4 + 1e-6);
        let (disk, _) = ProjectionDisk::around(&spec, a, 1, &opts).unwrap();
        let pa = riesz_projection(&spec, a, &disk, &opts).unwrap();
        // A distant eigenfunction at a.
        let far = bloch_eigenvalues(&spec, a, 12, &GalerkinOptions::fixed(pa.basis.k)).unwrap();
        let s = &far.samples[11];
        let f = BlochFunction::new(a, s.basis, s.coeffs.clone()).unwrap();
        let dev = projection_apply_uniform(&spec, a, t, &disk, &f, &sup_grid(), &GalerkinOptions::fixed(pa.basis.k)).unwrap();
        assert!(dev < 1e-6, "{dev}");
        assert_eq!(projection_apply_uniform(&spec, a, a, &disk, &f, &sup_grid(), &opts).unwrap(), 0.0);
    }

    #[test]
    fn gauge_changes_scan_only_at_rounding_level() {
        let a = 0.4;
        let ts = geometric_approach(a, 4);
        let xs = sup_grid();
        let opts = GalerkinOptions::default();
        let plain = bloch_continuity_scan(&perturbed(), 2, a, &ts, &xs, &opts).unwrap();
        let gauge = |t: f64, n: usize| Complex64::cis(1.7 * n as f64 + 13.0 * t);
        let rotated = bloch_continuity_scan_gauged(&perturbed(), 2, a, &ts, &xs, &opts, Some(&gauge)).unwrap();
        assert_eq!(plain.anchor.frequency, rotated.anchor.frequency);
        for (p, q) in plain.records.iter().zip(&rotated.records) {
            assert!((p.sup_diff_eigenfunction - q.sup_diff_eigenfunction).abs() < 1e-12);
            assert!((p.sup_diff_projection - q.sup_diff_projection).abs() < 1e-12);
            assert!((p.anchor_modulus - q.anchor_modulus).abs() < 1e-14);
        }
    }

    #[test]
    fn continuity_csv_header() {
        let mut buf = Vec::new();
        write_continuity_csv(&mut buf, &[ContinuityRecord { t: 0.5, sup_diff_projection: 0.0, sup_diff_eigenfunction: 0.0, anchor_modulus: 1.0 }]).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,sup_diff_projection,sup_diff_eigenfunction,anchor_modulus\n"));
    }
}
