//! Dense and banded complex linear algebra shared by the spectral modules.
//!
//! Galerkin matrices of `L_t` are banded (coupling only through the finitely
//! many Fourier modes of the coefficients) and strongly graded: the diagonal
//! grows like `(2πn)^{2ν}` while couplings grow like `(2πn)^{2ν-2}`. Dense
//! Householder/QR solvers only resolve the low eigenvalues to `ε·‖A‖`, so the
//! low end of the spectrum is computed here by Sturm-count bisection with an
//! inertia count that stays accurate relative to the local scale, and the
//! eigenvectors by banded inverse iteration.

use nalgebra::DMatrix;
use num_complex::Complex64;

pub type CMatrix = DMatrix<Complex64>;

pub(crate) const ZERO: Complex64 = Complex64::new(0.0, 0.0);
pub(crate) const ONE: Complex64 = Complex64::new(1.0, 0.0);

/// Max-norm of the anti-Hermitian part `(A - A*) / 2`.
pub fn anti_hermitian_deviation(a: &CMatrix) -> f64 {
    let n = a.nrows();
    let mut dev: f64 = 0.0;
    for i in 0..n {
        for j in i..n {
            let d = (a[(i, j)] - a[(j, i)].conj()) * 0.5;
            dev = dev.max(d.norm());
        }
    }
    dev
}

/// Replaces `a` by `(A + A*) / 2`.
pub fn hermitize(a: &mut CMatrix) {
    let n = a.nrows();
    for i in 0..n {
        a[(i, i)] = Complex64::new(a[(i, i)].re, 0.0);
        for j in (i + 1)..n {
            let avg = (a[(i, j)] + a[(j, i)].conj()) * 0.5;
            a[(i, j)] = avg;
            a[(j, i)] = avg.conj();
        }
    }
}

/// Dense eigen-decomposition of a small Hermitian matrix, eigenvalues ascending.
///
/// Column `c` of the returned matrix is a unit eigenvector for `values[c]`.
pub fn eigh(a: CMatrix) -> (Vec<f64>, CMatrix) {
    let n = a.nrows();
    if n == 0 {
        return (Vec::new(), a);
    }
    let eig = a.symmetric_eigen();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&x, &y| eig.eigenvalues[x].total_cmp(&eig.eigenvalues[y]));
    let values = order.iter().map(|&c| eig.eigenvalues[c]).collect();
    let mut vectors = CMatrix::zeros(n, n);
    for (dst, &src) in order.iter().enumerate() {
        vectors.set_column(dst, &eig.eigenvectors.column(src));
    }
    (values, vectors)
}

/// Dense eigenvalues, ascending. Accurate to `ε·‖A‖` only.
pub fn eigvalsh_dense(a: CMatrix) -> Vec<f64> {
    if a.nrows() == 0 {
        return Vec::new();
    }
    let mut values: Vec<f64> = a.symmetric_eigenvalues().iter().copied().collect();
    values.sort_by(f64::total_cmp);
    values
}

/// Half-bandwidth: the largest `|i - j|` with a nonzero entry.
pub fn half_bandwidth(a: &CMatrix) -> usize {
    let n = a.nrows();
    let mut b = 0;
    for j in 0..n {
        for i in (j + b + 1)..n {
            if a[(i, j)] != ZERO || a[(j, i)] != ZERO {
                b = i - j;
            }
        }
    }
    b
}

/// Counts eigenvalues of a banded Hermitian matrix below a shift.
///
/// For `H = A - σI`, rows whose shifted diagonal dominates their off-diagonal
/// row sum by a factor `κ` form a scaled diagonally dominant block `H_NN`,
/// which is factored `LDL*` without pivoting. The remaining near-resonant rows
/// `R` are handled through the dense Schur complement
/// `S = H_RR - H_RN H_NN^{-1} H_NR`, and by Haynsworth inertia additivity
/// `#neg(H) = #neg(D) + #neg(S)`.
pub struct SturmCounter<'a> {
    a: &'a CMatrix,
    band: usize,
    diag: Vec<f64>,
    offsum: Vec<f64>,
    kappa: f64,
}

impl<'a> SturmCounter<'a> {
    pub fn new(a: &'a CMatrix) -> Self {
        let n = a.nrows();
        let band = half_bandwidth(a);
        let diag = (0..n).map(|i| a[(i, i)].re).collect();
        let offsum = (0..n)
            .map(|i| {
                let lo = i.saturating_sub(band);
                let hi = (i + band).min(n.saturating_sub(1));
                (lo..=hi).filter(|&j| j != i).map(|j| a[(i, j)].norm()).sum()
            })
            .collect();
        // Scaled off-diagonal row sums of H_NN stay below 1/4.
        let kappa = 4.0 * (2.0 * band.max(1) as f64).sqrt();
        Self {
            a,
            band,
            diag,
            offsum,
            kappa,
        }
    }

    pub fn dim(&self) -> usize {
        self.diag.len()
    }

    /// Gershgorin enclosure of the spectrum.
    pub fn gershgorin(&self) -> (f64, f64) {
        let lo = self
            .diag
            .iter()
            .zip(&self.offsum)
            .map(|(d, r)| d - r)
            .fold(f64::INFINITY, f64::min);
        let hi = self
            .diag
            .iter()
            .zip(&self.offsum)
            .map(|(d, r)| d + r)
            .fold(f64::NEG_INFINITY, f64::max);
        (lo, hi)
    }

    /// Smallest local scale `|a_ii| + r_i`, the natural absolute resolution.
    fn min_scale(&self) -> f64 {
        self.diag
            .iter()
            .zip(&self.offsum)
            .map(|(d, r)| d.abs() + r)
            .fold(f64::INFINITY, f64::min)
    }

    /// Number of eigenvalues strictly below `sigma`.
    pub fn count_below(&self, sigma: f64) -> usize {
        let n = self.dim();
        let b = self.band;
        let mut resonant = Vec::new();
        let mut regular = Vec::with_capacity(n);
        for i in 0..n {
            let d = self.diag[i] - sigma;
            if d.abs() > self.kappa * self.offsum[i] && d != 0.0 {
                regular.push(i);
            } else {
                resonant.push(i);
            }
        }

        // LDL* of H_NN in compressed coordinates; entries with original index
        // distance > b vanish, so the compressed bandwidth is at most b.
        let nn = regular.len();
        let mut l = vec![ZERO; nn * b.max(1)];
        let mut d = vec![0.0f64; nn];
        let lidx = |p: usize, q: usize| p * b.max(1) + (p - q - 1);
        let mut negatives = 0;
        for p in 0..nn {
            let gp = regular[p];
            let start = p.saturating_sub(b);
            for q in start..p {
                let gq = regular[q];
                if gp - gq > b {
                    l[lidx(p, q)] = ZERO;
                    continue;
                }
                let mut v = self.a[(gp, gq)];
                for r in start.max(q.saturating_sub(b))..q {
                    v -= l[lidx(p, r)] * l[lidx(q, r)].conj() * d[r];
                }
                l[lidx(p, q)] = v / d[q];
            }
            let mut dp = self.diag[gp] - sigma;
            for r in start..p {
                dp -= l[lidx(p, r)].norm_sqr() * d[r];
            }
            d[p] = dp;
            if dp < 0.0 {
                negatives += 1;
            }
        }
        if resonant.is_empty() {
            return negatives;
        }

        // Schur complement onto the resonant rows.
        let nr = resonant.len();
        let mut s = CMatrix::zeros(nr, nr);
        for (x, &gi) in resonant.iter().enumerate() {
            for (y, &gj) in resonant.iter().enumerate() {
                s[(x, y)] = self.a[(gi, gj)];
            }
            s[(x, x)] -= Complex64::new(sigma, 0.0);
        }
        if nn > 0 {
            // S -= Wᴴ D⁻¹ W with W = L⁻¹ H_NR, one sparse column at a time.
            // W decays geometrically past its support; the sweep stops once
            // the trailing band window drops below 1e-40 of the column peak.
            let mut cols: Vec<(usize, Vec<Complex64>)> = Vec::with_capacity(nr);
            for &gj in &resonant {
                let first = regular.partition_point(|&g| g + b < gj);
                let mut w: Vec<Complex64> = Vec::new();
                let mut peak: f64 = 0.0;
                let mut quiet = 0;
                for p in first..nn {
                    let g = regular[p];
                    let mut v = if g <= gj + b { self.a[(g, gj)] } else { ZERO };
                    let lo = p.saturating_sub(b).max(first);
                    for q in lo..p {
                        v -= l[lidx(p, q)] * w[q - first];
                    }
                    w.push(v);
                    let mag = v.norm();
                    peak = peak.max(mag);
                    if g > gj + b {
                        if mag <= 1e-40 * peak {
                            quiet += 1;
                            if quiet > b {
                                break;
                            }
                        } else {
                            quiet = 0;
                        }
                    }
                }
                cols.push((first, w));
            }
            for x in 0..nr {
                for y in x..nr {
                    let (fx, wx) = &cols[x];
                    let (fy, wy) = &cols[y];
                    let lo = (*fx).max(*fy);
                    let hi = (fx + wx.len()).min(fy + wy.len());
                    let mut acc = ZERO;
                    for p in lo..hi {
                        acc += wx[p - fx].conj() * wy[p - fy] / d[p];
                    }
                    s[(x, y)] -= acc;
                    if x != y {
                        s[(y, x)] -= acc.conj();
                    }
                }
            }
        }
        hermitize(&mut s);
        negatives
            + eigvalsh_dense(s)
                .into_iter()
                .filter(|&v| v < 0.0)
                .count()
    }
}

/// The `count` lowest eigenvalues of a banded Hermitian matrix, ascending,
/// each resolved to a few ulps of its local scale.
pub fn lowest_eigenvalues(a: &CMatrix, count: usize) -> Vec<f64> {
    let counter = SturmCounter::new(a);
    let count = count.min(counter.dim());
    if count == 0 {
        return Vec::new();
    }
    let (mut lo, glob_hi) = counter.gershgorin();
    let width = (glob_hi - lo).abs().max(1.0);
    lo -= 1e-3 * width;
    // Bracket the count-th eigenvalue from above.
    let mut diag_sorted = counter.diag.clone();
    diag_sorted.sort_by(f64::total_cmp);
    let rmax = counter.offsum.iter().copied().fold(0.0, f64::max);
    let mut hi = (diag_sorted[count - 1] + rmax + 1.0).min(glob_hi + 1e-3 * width);
    let mut evals: Vec<(f64, usize)> = vec![(lo, 0)];
    loop {
        let c = counter.count_below(hi);
        evals.push((hi, c));
        if c >= count {
            break;
        }
        hi += (hi - lo).max(1.0);
    }
    let floor = (f64::EPSILON * counter.min_scale()).max(f64::MIN_POSITIVE);

    let mut out = Vec::with_capacity(count);
    for k in 1..=count {
        let mut a_lo = evals
            .iter()
            .filter(|(_, c)| *c < k)
            .map(|(s, _)| *s)
            .fold(f64::NEG_INFINITY, f64::max);
        let mut a_hi = evals
            .iter()
            .filter(|(_, c)| *c >= k)
            .map(|(s, _)| *s)
            .fold(f64::INFINITY, f64::min);
        loop {
            if a_hi - a_lo <= floor {
                break;
            }
            let mid = a_lo + 0.5 * (a_hi - a_lo);
            if mid <= a_lo || mid >= a_hi {
                break;
            }
            let c = counter.count_below(mid);
            evals.push((mid, c));
            if c >= k {
                a_hi = mid;
            } else {
                a_lo = mid;
            }
        }
        out.push(a_lo);
    }
    out
}

/// Banded LU factorization with partial pivoting of a square matrix.
struct BandedLu {
    n: usize,
    bl: usize,
    /// Upper-triangular rows, `u[i][c - i]` for `c in i..=i+2bl`.
    u: Vec<Complex64>,
    /// Multipliers, `l[i][r - i - 1]` for `r in i+1..=i+bl`.
    l: Vec<Complex64>,
    piv: Vec<usize>,
}

impl BandedLu {
    /// Factors `A - shift·I`; tiny pivots are replaced by `tiny`.
    fn new(a: &CMatrix, bl: usize, shift: f64, tiny: f64) -> Self {
        let n = a.nrows();
        let w = 2 * bl + 1;
        // Row r is a dense window over columns row_lo[r] ..; rows move on swaps.
        let mut row_lo: Vec<usize> = (0..n).map(|r| r.saturating_sub(bl)).collect();
        let mut rows: Vec<Vec<Complex64>> = (0..n)
            .map(|r| {
                let hi = (r + bl).min(n - 1);
                (row_lo[r]..=hi)
                    .map(|c| {
                        if c == r {
                            a[(r, c)] - Complex64::new(shift, 0.0)
                        } else {
                            a[(r, c)]
                        }
                    })
                    .collect()
            })
            .collect();
        let at = |rows: &[Vec<Complex64>], row_lo: &[usize], r: usize, c: usize| -> Complex64 {
            let lo = row_lo[r];
            if c < lo || c - lo >= rows[r].len() {
                ZERO
            } else {
                rows[r][c - lo]
            }
        };
        let mut u = vec![ZERO; n * w];
        let mut l = vec![ZERO; n * bl.max(1)];
        let mut piv = vec![0; n];
        for k in 0..n {
            let last = (k + bl).min(n - 1);
            let mut p = k;
            let mut best = at(&rows, &row_lo, k, k).norm();
            for r in (k + 1)..=last {
                let v = at(&rows, &row_lo, r, k).norm();
                if v > best {
                    best = v;
                    p = r;
                }
            }
            piv[k] = p;
            if p != k {
                rows.swap(p, k);
                row_lo.swap(p, k);
            }
            let mut pivot = at(&rows, &row_lo, k, k);
            if pivot.norm() < tiny {
                pivot = Complex64::new(tiny, 0.0);
            }
            let cmax = (k + 2 * bl).min(n - 1);
            u[k * w] = pivot;
            for c in (k + 1)..=cmax {
                u[k * w + (c - k)] = at(&rows, &row_lo, k, c);
            }
            for r in (k + 1)..=last {
                let factor = at(&rows, &row_lo, r, k) / pivot;
                l[k * bl.max(1) + (r - k - 1)] = factor;
                if factor == ZERO {
                    continue;
                }
                let lo = row_lo[r];
                if cmax + 1 > lo + rows[r].len() {
                    rows[r].resize(cmax + 1 - lo, ZERO);
                }
                for c in (k + 1)..=cmax {
                    rows[r][c - lo] -= factor * u[k * w + (c - k)];
                }
            }
        }
        Self { n, bl, u, l, piv }
    }

    fn solve(&self, rhs: &mut [Complex64]) {
        let n = self.n;
        let bl = self.bl;
        let w = 2 * bl + 1;
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                rhs.swap(k, p);
            }
            let last = (k + bl).min(n - 1);
            let xk = rhs[k];
            for r in (k + 1)..=last {
                rhs[r] -= self.l[k * bl.max(1) + (r - k - 1)] * xk;
            }
        }
        for k in (0..n).rev() {
            let cmax = (k + 2 * bl).min(n - 1);
            let mut v = rhs[k];
            for c in (k + 1)..=cmax {
                v -= self.u[k * w + (c - k)] * rhs[c];
            }
            rhs[k] = v / self.u[k * w];
        }
    }
}

/// Deterministic start vector for inverse iteration.
fn start_vector(n: usize, seed: u64) -> Vec<Complex64> {
    let mut state = seed.wrapping_mul(0x9E37_79B9_7F4A_7C15) ^ 0xD1B5_4A32_D192_ED03;
    let mut next = move || {
        state ^= state << 13;
        state ^= state >> 7;
        state ^= state << 17;
        (state >> 11) as f64 / (1u64 << 53) as f64 - 0.5
    };
    (0..n).map(|_| Complex64::new(next(), next())).collect()
}

/// Relative separation below which eigenvalues are treated as one cluster
/// and their eigenvectors orthogonalized against each other.
pub const CLUSTER_REL_GAP: f64 = 1e-7;

/// Eigenvectors for given (accurate) eigenvalues by banded inverse iteration.
///
/// Vectors belonging to one cluster are kept mutually orthonormal.
pub fn inverse_iteration(a: &CMatrix, values: &[f64]) -> Vec<Vec<Complex64>> {
    let n = a.nrows();
    let band = half_bandwidth(a);
    let scale = (0..n).map(|i| a[(i, i)].norm()).fold(1.0, f64::max);
    let mut out: Vec<Vec<Complex64>> = Vec::with_capacity(values.len());
    let mut cluster_start = 0;
    for (idx, &lambda) in values.iter().enumerate() {
        if idx > 0 {
            let prev = values[idx - 1];
            if (lambda - prev).abs() > CLUSTER_REL_GAP * (1.0 + lambda.abs()) {
                cluster_start = idx;
            }
        }
        let local = (lambda.abs() + 1.0).max(1.0);
        let tiny = f64::EPSILON * local.min(scale);
        let lu = BandedLu::new(a, band, lambda, tiny);
        let mut x = start_vector(n, idx as u64 + 1);
        for _ in 0..4 {
            lu.solve(&mut x);
            for prev in &out[cluster_start..idx] {
                let proj = inner(prev, &x);
                for (xi, pi) in x.iter_mut().zip(prev) {
                    *xi -= proj * pi;
                }
            }
            let nrm = norm2(&x);
            for xi in x.iter_mut() {
                *xi /= nrm;
            }
        }
        out.push(x);
    }
    out
}

pub(crate) fn inner(x: &[Complex64], y: &[Complex64]) -> Complex64 {
    x.iter().zip(y).map(|(a, b)| a.conj() * b).sum()
}

pub(crate) fn norm2(x: &[Complex64]) -> f64 {
    x.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}
