//! Closed-form asymptotic objects for large Bloch eigenvalues: the spectrum
//! of the constant-coefficient operator `L_t(C)`, neighbourhood radii `ε_k`,
//! band-overlap endpoints, gap localization sets and resonance intervals,
//! and the homotopy `L_t(ε, C)` that connects `L_t(C)` to `L_t`.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use rayon::prelude::*;

use crate::error::{Error, Result};
use crate::galerkin::{bloch_values, wavenumber, GalerkinOptions};
use crate::operator::{mean_matrix, spectral_decompose, CoefficientMatrix, DecomposeOptions, MeanMatrixSpectrum, OperatorSpec};

/// Tolerance for treating two floating sums as equal in the finite-gap condition.
pub const CONDITION30_TOL: f64 = 1e-12;

/// `μ_{k,j}(t) = (2πk+t)^{2ν} + μ_j (2πk+t)^{2ν-2}`.
pub fn mu_kj(nu: usize, mu_j: f64, k: i64, t: f64) -> f64 {
    let s = wavenumber(k, t);
    let s2 = s * s;
    let low = s2.powi(nu as i32 - 1);
    low * s2 + mu_j * low
}

/// Largest modulus of `ĉ_n` of `P_2` over `n ∈ {±2k, ±(2k+1)}`.
pub fn q_k(p2: &CoefficientMatrix, k: i64) -> f64 {
    let k = k.abs();
    [2 * k, -2 * k, 2 * k + 1, -2 * k - 1]
        .iter()
        .filter_map(|&n| p2.term_ref(n))
        .flat_map(|c| c.iter().map(|z| z.norm()))
        .fold(0.0, f64::max)
}

/// `ε_k = c₁(|ln|k| / k| + q_k)(2πk)^{2ν-2}` for `|k| ≥ 1`.
pub fn epsilon_k(nu: usize, k: i64, qk: f64, c1: f64) -> f64 {
    if c1 == 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    c1 * ((kf.abs().ln() / kf).abs() + qk) * (2.0 * PI * kf).powi(2 * nu as i32 - 2)
}

/// Normalizing scale `(|ln|k| / k| + q_k)(2πk)^{2ν-2}`, so `ε_k = c₁·scale`.
pub fn epsilon_scale(nu: usize, k: i64, qk: f64) -> f64 {
    epsilon_k(nu, k, qk, 1.0)
}

/// `ε(s) = ε_k` for `s ∈ {2k, 2k+1}`. For `s < 2` the radius is 0 when
/// `c₁ = 0` and unbounded otherwise.
pub fn epsilon_s(nu: usize, p2: &CoefficientMatrix, s: i64, c1: f64) -> f64 {
    let k = s.div_euclid(2);
    if c1 == 0.0 {
        0.0
    } else if k < 1 {
        f64::INFINITY
    } else {
        epsilon_k(nu, k, q_k(p2, k), c1)
    }
}

/// Overlap interval `[a(s), b(s)]` on which bands `sm+1, …, sm+m` overlap.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OverlapInterval {
    pub s: i64,
    pub a: f64,
    pub b: f64,
    pub eps: f64,
}

impl OverlapInterval {
    pub fn is_empty(&self) -> bool {
        !(self.a < self.b)
    }
}

/// `a(s) = (sπ)^{2ν} + μ_p(sπ)^{2ν-2} + ε(s)`,
/// `b(s) = (sπ+π)^{2ν} + μ_1(sπ+π)^{2ν-2} - ε(s)`.
pub fn overlap_interval(nu: usize, mus: &[f64], p2: &CoefficientMatrix, s: i64, c1: f64) -> OverlapInterval {
    let eps = epsilon_s(nu, p2, s, c1);
    let mu_1 = mus.first().copied().unwrap_or(0.0);
    let mu_p = mus.last().copied().unwrap_or(0.0);
    let edge = |x: f64, mu: f64| {
        let x2 = x * x;
        let low = x2.powi(nu as i32 - 1);
        low * x2 + mu * low
    };
    let lo = s as f64 * PI;
    let hi = lo + PI;
    OverlapInterval {
        s,
        a: edge(lo, mu_p) + eps,
        b: edge(hi, mu_1) - eps,
        eps,
    }
}

/// `U(s) = (b(s), a(s+1))`.
pub fn u_interval(nu: usize, mus: &[f64], p2: &CoefficientMatrix, s: i64, c1: f64) -> (f64, f64) {
    let lo = overlap_interval(nu, mus, p2, s, c1).b;
    let hi = overlap_interval(nu, mus, p2, s + 1, c1).a;
    (lo, hi)
}

/// Verdict of the finite-gap condition.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Condition30 {
    pub holds: bool,
    /// 1-based `(j₁, j₂, j₃)` for which the three sum-sets share no value.
    pub witness: Option<(usize, usize, usize)>,
}

fn close(a: f64, b: f64) -> bool {
    (a - b).abs() <= CONDITION30_TOL * (1.0 + a.abs().max(b.abs()))
}

/// The finite-gap condition: some triple `(j₁, j₂, j₃)` has
/// `min_{i₁,i₂,i₃} diam{μ_{j₁}+μ_{i₁}, μ_{j₂}+μ_{i₂}, μ_{j₃}+μ_{i₃}} ≠ 0`.
///
/// The minimum vanishes exactly when some `x` has `x - μ_{j_s} ∈ {μ_i}` for
/// all three `s`, which is tested by membership instead of enumeration.
pub fn condition30(mus: &[f64]) -> Condition30 {
    let p = mus.len();
    let member = |v: f64| {
        let idx = mus.partition_point(|&m| m < v);
        [idx.wrapping_sub(1), idx, idx + 1]
            .iter()
            .any(|&i| i < p && close(mus[i], v))
    };
    for j1 in 0..p {
        for j2 in 0..p {
            for j3 in 0..p {
                let shared = mus.iter().any(|&mi| {
                    let x = mus[j1] + mi;
                    member(x - mus[j2]) && member(x - mus[j3])
                });
                if !shared {
                    return Condition30 {
                        holds: true,
                        witness: Some((j1 + 1, j2 + 1, j3 + 1)),
                    };
                }
            }
        }
    }
    Condition30 {
        holds: false,
        witness: None,
    }
}

/// Merges overlapping open intervals; drops empty ones.
pub fn merge_intervals(mut v: Vec<(f64, f64)>) -> Vec<(f64, f64)> {
    v.retain(|(a, b)| a < b);
    v.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut out: Vec<(f64, f64)> = Vec::with_capacity(v.len());
    for (a, b) in v {
        match out.last_mut() {
            Some(last) if a <= last.1 => last.1 = last.1.max(b),
            _ => out.push((a, b)),
        }
    }
    out
}

/// `S(j, k)`: union over `i` of the `γ_k`-neighbourhoods of
/// `(πk)^{2ν} + (μ_i+μ_j)/2·(πk)^{2ν-2}`, merged. `j` is 1-based.
pub fn gap_localization(nu: usize, mus: &[f64], j: usize, k: i64, gamma_k: f64) -> Vec<(f64, f64)> {
    let x = PI * k as f64;
    let x2 = x * x;
    let low = x2.powi(nu as i32 - 1);
    let lead = low * x2;
    let mu_j = mus[j - 1];
    merge_intervals(
        mus.iter()
            .map(|&mi| {
                let c = lead + 0.5 * (mi + mu_j) * low;
                (c - gamma_k, c + gamma_k)
            })
            .collect(),
    )
}

/// True when `(lo, hi)` lies in `S(j, k)` for every `j`.
pub fn in_all_localization_sets(nu: usize, mus: &[f64], k: i64, gamma_k: f64, lo: f64, hi: f64) -> bool {
    (1..=mus.len()).all(|j| {
        gap_localization(nu, mus, j, k, gamma_k)
            .iter()
            .any(|&(a, b)| a <= lo && hi <= b)
    })
}

/// Excluded quasimomenta around the resonances of `μ_{k,j}` with
/// `μ_{-k,i}` and `μ_{-k-1,i}`.
#[derive(Debug, Clone, PartialEq)]
pub struct ResonanceSet {
    pub intervals: Vec<(f64, f64)>,
    /// The intervals cover all of `[-π/2, 3π/2)`.
    pub full_coverage: bool,
}

pub fn resonance_intervals(nu: usize, mus: &[f64], k: i64, delta_k: f64) -> Result<ResonanceSet> {
    if k < 1 || delta_k <= 0.0 {
        return Err(Error::InvalidArgument(format!(
            "resonance intervals need k ≥ 1 and δ_k > 0, got k = {k}, δ_k = {delta_k}"
        )));
    }
    let nu_f = nu as f64;
    let kf = k as f64;
    let (lo, hi) = (-PI / 2.0, 1.5 * PI);
    let mut raw = Vec::new();
    for &mi in mus {
        for &mj in mus {
            let d = mi - mj;
            let c1 = d / (8.0 * nu_f * kf * PI);
            let c2 = PI + d / (4.0 * PI * nu_f * (2.0 * kf + 2.0 * nu_f - 1.0));
            raw.push((c1 - delta_k, c1 + delta_k));
            raw.push((c2 - delta_k, c2 + delta_k));
        }
    }
    let intervals: Vec<(f64, f64)> = merge_intervals(raw)
        .into_iter()
        .filter_map(|(a, b)| {
            let (a, b) = (a.max(lo), b.min(hi));
            (a < b).then_some((a, b))
        })
        .collect();
    let full_coverage = intervals.len() == 1 && intervals[0].0 <= lo && intervals[0].1 >= hi;
    Ok(ResonanceSet {
        intervals,
        full_coverage,
    })
}

/// Explicit stand-ins for the non-constructive constants.
#[derive(Debug, Clone, PartialEq)]
pub struct CalibrationConfig {
    pub c1: f64,
    /// `γ_k = gamma_c · k^{2ν-2} / ln k`.
    pub gamma_c: f64,
    /// `δ_k = delta_c / (k ln k)`.
    pub delta_c: f64,
    pub fitted_n: Option<i64>,
    pub fitted_n1: Option<i64>,
    pub fitted_n2: Option<i64>,
}

impl Default for CalibrationConfig {
    fn default() -> Self {
        Self {
            c1: 1.0,
            gamma_c: 1.0,
            delta_c: 1.0,
            fitted_n: None,
            fitted_n1: None,
            fitted_n2: None,
        }
    }
}

impl CalibrationConfig {
    /// `γ_k`; unbounded for `k < 2` where `ln k ≤ 0`.
    pub fn gamma_k(&self, nu: usize, k: i64) -> f64 {
        if k < 2 {
            return f64::INFINITY;
        }
        let kf = k as f64;
        self.gamma_c * kf.powi(2 * nu as i32 - 2) / kf.ln()
    }

    /// `δ_k`; unbounded for `k < 2`.
    pub fn delta_k(&self, k: i64) -> f64 {
        if k < 2 {
            return f64::INFINITY;
        }
        let kf = k as f64;
        self.delta_c / (kf * kf.ln())
    }
}

/// Mean matrix of `P_2` and its clustered spectrum.
pub fn mean_spectrum(spec: &OperatorSpec) -> Result<MeanMatrixSpectrum> {
    let mean = mean_matrix(spec);
    spectral_decompose(&mean.matrix, DecomposeOptions::default())
}

/// Eigenvalues of `L_t(C)` below `ceiling`, with multiplicity, ascending.
pub fn unperturbed_values(nu: usize, spectrum: &MeanMatrixSpectrum, t: f64, ceiling: f64) -> Vec<f64> {
    let mut out = Vec::new();
    let reach = ceiling.abs().max(1.0).powf(1.0 / (2 * nu) as f64) / (2.0 * PI) + 2.0;
    let kmax = reach.ceil() as i64 + 1;
    for k in -kmax..=kmax {
        for (mu, &mult) in spectrum.mus.iter().zip(&spectrum.mults) {
            let v = mu_kj(nu, *mu, k, t);
            if v <= ceiling {
                out.extend(std::iter::repeat_n(v, mult));
            }
        }
    }
    out.sort_by(f64::total_cmp);
    out
}

/// One row of the homotopy migration table.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct MigrationRow {
    pub eps: f64,
    pub t: f64,
    pub k: i64,
    /// 1-based index of `μ_j`.
    pub j: usize,
    pub mu_kj: f64,
    pub nearest_lambda: f64,
    pub dist: f64,
    /// Largest deviation of an eigenvalue whose closest unperturbed value is `μ_{k,j}(t)`.
    pub cluster_dev: f64,
    pub eps_k: f64,
    pub within: bool,
}

impl MigrationRow {
    /// `dist / scale_k`, the quantity bounded by `c₁`.
    pub fn normalized(&self, nu: usize, qk: f64) -> f64 {
        self.dist / epsilon_scale(nu, self.k, qk)
    }
}

/// Eigenvalues of `L_t(ε, C)` tracked against `μ_{k,j}(t)` for `k` in the window.
pub fn homotopy_sweep(
    spec: &OperatorSpec,
    t: f64,
    eps_grid: &[f64],
    k_window: RangeInclusive<i64>,
    calib: &CalibrationConfig,
    opts: &GalerkinOptions,
) -> Result<Vec<MigrationRow>> {
    if eps_grid.is_empty() || eps_grid[0] != 0.0 {
        return Err(Error::InvalidArgument("eps grid must start at 0".into()));
    }
    if eps_grid.windows(2).any(|w| w[0] >= w[1]) || eps_grid.iter().any(|e| !(0.0..=1.0).contains(e)) {
        return Err(Error::InvalidArgument("eps grid must be ascending in [0, 1]".into()));
    }
    if k_window.is_empty() {
        return Err(Error::InvalidArgument("empty k window".into()));
    }
    let nu = spec.nu();
    let spectrum = mean_spectrum(spec)?;
    let p2 = spec.coefficient(2).clone();
    let targets: Vec<(i64, usize, f64)> = k_window
        .clone()
        .flat_map(|k| (0..spectrum.p()).map(move |j| (k, j)))
        .map(|(k, j)| (k, j + 1, mu_kj(nu, spectrum.mus[j], k, t)))
        .collect();
    let top = targets.iter().map(|x| x.2).fold(f64::NEG_INFINITY, f64::max);
    // Cover every target plus the next cluster above it.
    let kmax = k_window.start().abs().max(k_window.end().abs()) + 1;
    let ceiling = (0..spectrum.p())
        .map(|j| mu_kj(nu, spectrum.mus[j], kmax, t.abs()))
        .fold(top, f64::max);
    let count = unperturbed_values(nu, &spectrum, t, ceiling).len() + 2 * spec.m();
    let all_unperturbed = unperturbed_values(nu, &spectrum, t, 4.0 * ceiling.abs() + 1.0);

    let per_eps: Vec<Result<Vec<MigrationRow>>> = eps_grid
        .par_iter()
        .map(|&eps| {
            let member = spec.homotopy(eps, &spectrum.c)?;
            let (values, _) = bloch_values(&member, t, count, opts).map_err(|e| e.at(t))?;
            Ok(targets
                .iter()
                .map(|&(k, j, mu)| {
                    let (nearest, dist) = values
                        .iter()
                        .map(|&v| (v, (v - mu).abs()))
                        .fold((f64::NAN, f64::INFINITY), |acc, x| if x.1 < acc.1 { x } else { acc });
                    let cluster_dev = values
                        .iter()
                        .filter(|&&v| closest(&all_unperturbed, v).map(|c| c == mu).unwrap_or(false))
                        .map(|&v| (v - mu).abs())
                        .fold(0.0, f64::max);
                    let eps_k = epsilon_k(nu, k, q_k(&p2, k), calib.c1);
                    MigrationRow {
                        eps,
                        t,
                        k,
                        j,
                        mu_kj: mu,
                        nearest_lambda: nearest,
                        dist,
                        cluster_dev,
                        eps_k,
                        within: dist <= eps_k,
                    }
                })
                .collect())
        })
        .collect();
    let mut rows = Vec::new();
    for r in per_eps {
        rows.extend(r?);
    }
    Ok(rows)
}

fn closest(sorted: &[f64], v: f64) -> Option<f64> {
    let idx = sorted.partition_point(|&x| x < v);
    [idx.checked_sub(1), Some(idx)]
        .into_iter()
        .flatten()
        .filter(|&i| i < sorted.len())
        .map(|i| sorted[i])
        .min_by(|a, b| (a - v).abs().total_cmp(&(b - v).abs()))
}

/// Smallest `c₁` with every eigenvalue of the full operator (`ε = 1` rows)
/// inside `ε_k` of its closest `μ_{k,j}(t)`.
pub fn fit_c1(nu: usize, p2: &CoefficientMatrix, rows: &[MigrationRow]) -> f64 {
    rows.iter()
        .filter(|r| r.eps == 1.0)
        .map(|r| {
            let scale = epsilon_scale(nu, r.k, q_k(p2, r.k));
            r.dist.max(r.cluster_dev) / scale
        })
        .fold(0.0, f64::max)
}

/// Separation ratios `|μ_{k,j} - μ_{k,i}| / k^{2ν-2}` (min, max over `j ≠ i`)
/// and `min |μ_{k,j} - μ_{n,i}| / k^{2ν-1}` over `n ∉ {k, -k, -k-1}`.
pub fn separation_scales(nu: usize, mus: &[f64], k: i64, t: f64) -> (Option<(f64, f64)>, f64) {
    let kf = (k as f64).abs();
    let mut within: Option<(f64, f64)> = None;
    for (a, &mj) in mus.iter().enumerate() {
        for &mi in &mus[a + 1..] {
            let r = (mu_kj(nu, mj, k, t) - mu_kj(nu, mi, k, t)).abs() / kf.powi(2 * nu as i32 - 2);
            within = Some(match within {
                None => (r, r),
                Some((lo, hi)) => (lo.min(r), hi.max(r)),
            });
        }
    }
    let mut across = f64::INFINITY;
    for &mj in mus {
        for &mi in mus {
            for n in (-3 * k.abs() - 3)..=(3 * k.abs() + 3) {
                if n == k || n == -k || n == -k - 1 {
                    continue;
                }
                let d = (mu_kj(nu, mj, k, t) - mu_kj(nu, mi, n, t)).abs();
                across = across.min(d / kf.powi(2 * nu as i32 - 1));
            }
        }
    }
    (within, across)
}

/// Max-norm of `A Φ - μ_{k,j}(t) Φ` relative to `|μ_{k,j}(t)|` for the
/// Galerkin coefficient vector of `Φ_{k,j,s,t} = u_{j,s} e^{i(2πk+t)x}`.
pub fn unperturbed_residual(spec_c: &OperatorSpec, spectrum: &MeanMatrixSpectrum, t: f64, kk: usize, k: i64, j: usize, s: usize) -> Result<f64> {
    use crate::galerkin::{assemble, Basis};
    let a = assemble(spec_c, t, kk)?;
    let basis = Basis::new(kk, spec_c.m());
    let u = &spectrum.vecs[j][s];
    let mut phi = nalgebra::DVector::zeros(basis.len());
    for r in 0..spec_c.m() {
        phi[basis.index(k, r)] = u[r];
    }
    let mu = mu_kj(spec_c.nu(), spectrum.mus[j], k, t);
    let res = &a * &phi - phi.scale(mu);
    Ok(res.camax() / (1.0 + mu.abs()))
}

/// Recomputes `ε_k` and the `within` flag for a new `c₁`.
pub fn recalibrate(nu: usize, p2: &CoefficientMatrix, rows: &mut [MigrationRow], c1: f64) {
    for r in rows {
        r.eps_k = epsilon_k(nu, r.k, q_k(p2, r.k), c1);
        r.within = r.dist <= r.eps_k;
    }
}

pub fn write_migration_csv<W: std::io::Write>(out: W, rows: &[MigrationRow]) -> Result<()> {
    use crate::report::fmt_f64;
    let mut w = csv::Writer::from_writer(out);
    let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
    w.write_record(["eps", "k", "j", "mu_kj", "nearest_lambda", "dist", "eps_k", "within", "t", "cluster_dev"])
        .map_err(io)?;
    for r in rows {
        w.write_record([
            fmt_f64(r.eps),
            r.k.to_string(),
            r.j.to_string(),
            fmt_f64(r.mu_kj),
            fmt_f64(r.nearest_lambda),
            fmt_f64(r.dist),
            fmt_f64(r.eps_k),
            r.within.to_string(),
            fmt_f64(r.t),
            fmt_f64(r.cluster_dev),
        ])
        .map_err(io)?;
    }
    w.flush()?;
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::operator::real_matrix;
    use proptest::prelude::*;

    #[test]
    fn mu_kj_examples() {
        assert_eq!(mu_kj(2, 0.0, 0, 0.0), 0.0);
        assert!((mu_kj(2, 0.0, 1, 0.0) - 1558.5454565440389).abs() < 1e-9);
        assert!((mu_kj(2, 2.0, 0, PI / 2.0) - 11.022870390169832).abs() < 1e-12);
    }

    #[test]
    fn q_k_examples() {
        let constant = CoefficientMatrix::constant(real_matrix(2, &[1.0, 2.0, 2.0, 3.0])).unwrap();
        assert_eq!(q_k(&constant, 1), 0.0);
        let cos2 = CoefficientMatrix::cosine(real_matrix(1, &[0.0]), real_matrix(1, &[2.0])).unwrap();
        assert_eq!(q_k(&cos2, 1), 0.0);
        let mut cos4 = CoefficientMatrix::zero(1);
        cos4.set_term(2, real_matrix(1, &[0.5])).unwrap();
        cos4.set_term(-2, real_matrix(1, &[0.5])).unwrap();
        assert_eq!(q_k(&cos4, 1), 0.5);
    }

    #[test]
    fn epsilon_examples() {
        assert_eq!(epsilon_k(2, 5, 0.3, 0.0), 0.0);
        assert_eq!(epsilon_k(2, 1, 0.0, 1.0), 0.0);
        assert!((epsilon_k(2, 2, 0.0, 1.0) - 54.72870771085693).abs() < 1e-10);
    }

    #[test]
    fn condition30_examples() {
        assert!(!condition30(&[3.0]).holds);
        let c = condition30(&[0.0, 1.0, 5.0]);
        assert!(c.holds);
        assert_eq!(c.witness, Some((1, 2, 3)));
        assert!(!condition30(&[0.0, 1.0, 2.0]).holds);
    }

    /// Literal evaluation of (30): all `p³ × p³` index combinations.
    fn brute_force(mus: &[f64]) -> bool {
        let p = mus.len();
        let mut holds = false;
        for j1 in 0..p {
            for j2 in 0..p {
                for j3 in 0..p {
                    let mut min_diam = f64::INFINITY;
                    for i1 in 0..p {
                        for i2 in 0..p {
                            for i3 in 0..p {
                                let e = [mus[j1] + mus[i1], mus[j2] + mus[i2], mus[j3] + mus[i3]];
                                let hi = e.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                                let lo = e.iter().copied().fold(f64::INFINITY, f64::min);
                                min_diam = min_diam.min(hi - lo);
                            }
                        }
                    }
                    if min_diam > 0.0 {
                        holds = true;
                    }
                }
            }
        }
        holds
    }

    fn distinct_sorted(mut v: Vec<i32>) -> Vec<f64> {
        v.sort();
        v.dedup();
        v.into_iter().map(f64::from).collect()
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(200))]

        #[test]
        fn condition30_matches_brute_force(raw in prop::collection::vec(-6i32..=6, 1..=4)) {
            let mus = distinct_sorted(raw);
            prop_assert_eq!(condition30(&mus).holds, brute_force(&mus));
            if mus.len() <= 2 {
                prop_assert!(!condition30(&mus).holds);
            }
        }

        #[test]
        fn arithmetic_progressions_fail_condition30(a in -5.0f64..5.0, d in 0.01f64..3.0, p in 1usize..=6) {
            let mus: Vec<f64> = (0..p).map(|i| a + d * i as f64).collect();
            prop_assert!(!condition30(&mus).holds);
        }

        #[test]
        fn merged_intervals_are_disjoint(raw in prop::collection::vec((-10.0f64..10.0, 0.0f64..3.0), 0..12)) {
            let merged = merge_intervals(raw.iter().map(|&(c, w)| (c - w, c + w)).collect());
            for w in merged.windows(2) {
                prop_assert!(w[0].1 < w[1].0);
            }
        }
    }

    #[test]
    fn gap_localization_examples() {
        let v = gap_localization(2, &[0.0], 1, 2, 1.0);
        let c = 16.0 * PI.powi(4);
        assert_eq!(v.len(), 1);
        assert!((v[0].0 - (c - 1.0)).abs() < 1e-9 && (v[0].1 - (c + 1.0)).abs() < 1e-9);
        let v = gap_localization(2, &[0.0, 2.0], 1, 2, 1.0);
        assert_eq!(v.len(), 2);
        assert!((v[0].0 + 1.0 - 1558.5454565440389).abs() < 1e-9);
        assert!((v[1].0 + 1.0 - 1598.0238741483964).abs() < 1e-9);
        assert!(gap_localization(2, &[0.0, 2.0], 2, 3, 0.0).is_empty());
    }

    #[test]
    fn resonance_examples() {
        let r = resonance_intervals(2, &[1.0], 3, 0.1).unwrap();
        assert_eq!(r.intervals.len(), 2);
        assert!((r.intervals[0].0 + 0.1).abs() < 1e-15 && (r.intervals[0].1 - 0.1).abs() < 1e-15);
        assert!((r.intervals[1].0 - (PI - 0.1)).abs() < 1e-15);
        let r = resonance_intervals(2, &[0.0, 16.0 * PI], 1, 0.01).unwrap();
        assert!(r.intervals.iter().any(|&(a, b)| a < 1.0 && 1.0 < b));
        let r = resonance_intervals(2, &[0.0], 1, 4.0).unwrap();
        assert!(r.full_coverage);
        assert!(resonance_intervals(2, &[0.0], 1, 0.0).is_err());
    }

    #[test]
    fn overlap_interval_free() {
        let zero = CoefficientMatrix::zero(1);
        let o = overlap_interval(2, &[0.0], &zero, 1, 0.0);
        assert!((o.a - PI.powi(4)).abs() < 1e-12 && (o.b - 16.0 * PI.powi(4)).abs() < 1e-9);
        assert!(overlap_interval(2, &[0.0], &zero, 4, 1e9).is_empty());
    }

    #[test]
    fn calibration_rules_decay() {
        let c = CalibrationConfig::default();
        for nu in [2usize, 3] {
            let r = |k: i64| c.gamma_k(nu, k) / (k as f64).powi(2 * nu as i32 - 2);
            assert!(r(1000) < r(10));
        }
        assert!(c.delta_k(1000) * 1000.0 < c.delta_k(10) * 10.0);
    }

    #[test]
    fn separation_scales_are_positive() {
        let mus = [2.0, 5.0];
        for k in 3..12 {
            let (within, across) = separation_scales(2, &mus, k, 0.7);
            let (lo, hi) = within.unwrap();
            assert!(lo > 0.0 && hi < 1e3 && across > 1.0);
        }
    }
}
