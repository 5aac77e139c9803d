//! Band functions `t ↦ λ_n(t)`, spectral bands, gaps and the band-overlap
//! intervals of the asymptotic theory.

use std::f64::consts::PI;
use std::ops::RangeInclusive;

use std::io::Write;

use rayon::prelude::*;

use crate::asymptotics::{
    condition30, in_all_localization_sets, mean_spectrum, overlap_interval, u_interval, unperturbed_values, CalibrationConfig, Condition30,
    OverlapInterval,
};
use crate::error::{Error, Result};
use crate::galerkin::{bloch_values, GalerkinOptions};
use crate::operator::OperatorSpec;
use crate::report::fmt_f64;

pub const DEFAULT_GRID: usize = 257;
pub const CONFIRM_GRID: usize = 1025;
/// Relative length below which an interval between bands is not a gap.
pub const GAP_THRESHOLD: f64 = 1e-6;
/// Relative slack for interval containment against computed band edges.
pub const CONTAINMENT_SLACK: f64 = 1e-12;

/// Uniform right-closed grid `t_i = -π + 2πi/size`, `i = 1..=size`.
pub fn t_grid(size: usize) -> Vec<f64> {
    (1..=size)
        .map(|i| if i == size { PI } else { -PI + 2.0 * PI * i as f64 / size as f64 })
        .collect()
}

/// Lowest `count` eigenvalues and converged truncation at each `t`, in input order.
pub fn sweep(spec: &OperatorSpec, count: usize, ts: &[f64], opts: &GalerkinOptions) -> Result<Vec<(Vec<f64>, usize)>> {
    let results: Vec<Result<(Vec<f64>, usize)>> = ts
        .par_iter()
        .map(|&t| bloch_values(spec, t, count, opts).map_err(|e| e.at(t)))
        .collect();
    results.into_iter().collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandFunction {
    /// 1-based band index.
    pub n: usize,
    pub grid: Vec<f64>,
    pub values: Vec<f64>,
    pub k_used: Vec<usize>,
}

impl BandFunction {
    /// Largest `|λ_n(t_{i+1}) - λ_n(t_i)|` over consecutive grid points.
    pub fn max_jump(&self) -> f64 {
        self.values
            .windows(2)
            .map(|w| (w[1] - w[0]).abs())
            .fold(0.0, f64::max)
    }

    pub fn min(&self) -> f64 {
        self.values.iter().copied().fold(f64::INFINITY, f64::min)
    }

    pub fn max(&self) -> f64 {
        self.values.iter().copied().fold(f64::NEG_INFINITY, f64::max)
    }
}

fn check_grid(grid_size: usize) -> Result<()> {
    if grid_size < 8 {
        return Err(Error::InvalidArgument(format!("grid size must be ≥ 8, got {grid_size}")));
    }
    Ok(())
}

/// Band functions `λ_1, …, λ_{n_max}` on the uniform grid.
pub fn band_functions(spec: &OperatorSpec, n_max: usize, grid_size: usize, opts: &GalerkinOptions) -> Result<Vec<BandFunction>> {
    check_grid(grid_size)?;
    let grid = t_grid(grid_size);
    let points = sweep(spec, n_max, &grid, opts)?;
    Ok((0..n_max)
        .map(|b| BandFunction {
            n: b + 1,
            grid: grid.clone(),
            values: points.iter().map(|(v, _)| v[b]).collect(),
            k_used: points.iter().map(|(_, k)| *k).collect(),
        })
        .collect())
}

pub fn band_function(spec: &OperatorSpec, n: usize, grid_size: usize) -> Result<BandFunction> {
    if n == 0 {
        return Err(Error::InvalidArgument("band index is 1-based".into()));
    }
    let mut all = band_functions(spec, n, grid_size, &GalerkinOptions::default())?;
    Ok(all.pop().expect("n ≥ 1 bands"))
}

/// `I_n = [lo, hi]` with the quasimomenta where the edges are attained.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Band {
    pub n: usize,
    pub lo: f64,
    pub hi: f64,
    pub t_lo: f64,
    pub t_hi: f64,
}

impl Band {
    fn absorb(&mut self, t: f64, v: f64) {
        if v < self.lo {
            self.lo = v;
            self.t_lo = t;
        }
        if v > self.hi {
            self.hi = v;
            self.t_hi = t;
        }
    }

    pub fn contains(&self, a: f64, b: f64) -> bool {
        let slack = |x: f64| CONTAINMENT_SLACK * (1.0 + x.abs());
        a >= self.lo - slack(self.lo) && b <= self.hi + slack(self.hi)
    }
}

/// Open spectral gap `(lo, hi)` lying above `I_below`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Gap {
    pub lo: f64,
    pub hi: f64,
    pub below_band: usize,
}

impl Gap {
    pub fn len(&self) -> f64 {
        self.hi - self.lo
    }

    pub fn is_empty(&self) -> bool {
        self.hi <= self.lo
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct BandReport {
    pub bands: Vec<Band>,
    pub gaps: Vec<Gap>,
    pub ceiling: f64,
    /// `b` with `λ_1(t) > b` for all `t`.
    pub lower_bound: f64,
    pub grid_size: usize,
    /// Grid samples of `λ_1, …, λ_{n_max}` before edge refinement.
    pub functions: Vec<BandFunction>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct BandOptions {
    pub galerkin: GalerkinOptions,
    pub gap_threshold: f64,
    /// Refine every local grid extremum by its parabolic vertex.
    pub refine_edges: bool,
}

impl Default for BandOptions {
    fn default() -> Self {
        Self {
            galerkin: GalerkinOptions::default(),
            gap_threshold: GAP_THRESHOLD,
            refine_edges: true,
        }
    }
}

pub fn bands_and_gaps(spec: &OperatorSpec, n_max: usize, grid_size: usize, ceiling: f64) -> Result<BandReport> {
    bands_and_gaps_with(spec, n_max, grid_size, ceiling, &BandOptions::default())
}

pub fn bands_and_gaps_with(
    spec: &OperatorSpec,
    n_max: usize,
    grid_size: usize,
    ceiling: f64,
    opts: &BandOptions,
) -> Result<BandReport> {
    check_grid(grid_size)?;
    if n_max == 0 {
        return Err(Error::InvalidArgument("n_max must be ≥ 1".into()));
    }
    let grid = t_grid(grid_size);
    // One extra eigenvalue shows where λ_{n_max} meets its upper neighbour.
    let points = sweep(spec, n_max + 1, &grid, &opts.galerkin)?;
    // The zone centre is a candidate edge; π is already the last grid point.
    let centre = match grid.contains(&0.0) {
        true => None,
        false => Some(bloch_values(spec, 0.0, n_max, &opts.galerkin).map_err(|e| e.at(0.0))?.0),
    };

    let mut bands: Vec<Band> = (0..n_max)
        .map(|b| {
            let mut band = Band {
                n: b + 1,
                lo: f64::INFINITY,
                hi: f64::NEG_INFINITY,
                t_lo: 0.0,
                t_hi: 0.0,
            };
            let samples = grid.iter().zip(&points).map(|(t, (v, _))| (*t, v[b]));
            for (t, v) in samples.chain(centre.as_ref().map(|v| (0.0, v[b]))) {
                band.absorb(t, v);
            }
            band
        })
        .collect();

    if opts.refine_edges {
        let h = 2.0 * PI / grid_size as f64;
        let len = grid.len();
        let mut probes: Vec<Probe> = Vec::new();
        for b in 0..n_max {
            let cell = |b: usize, i: usize| {
                let v = |i: usize| points[i % len].0[b];
                [v(i + len - 1), v(i), v(i + 1)]
            };
            for i in 0..len {
                let [ym, y0, yp] = cell(b, i);
                let variation = (y0 - ym).abs().max((yp - y0).abs());
                // Between neighbours the extremum moves by at most twice the local variation.
                let reach = 2.0 * variation;
                let band = &bands[b];
                for is_max in [false, true] {
                    let (extremal, useful, other) = match is_max {
                        true => (y0 >= ym && y0 >= yp, y0 + reach > band.hi, Some(b + 1)),
                        false => (y0 <= ym && y0 <= yp, y0 - reach < band.lo, b.checked_sub(1)),
                    };
                    if !(extremal && useful) {
                        continue;
                    }
                    // A kink needs the neighbouring band within reach; secants across a branch
                    // switch understate the branch slopes, hence the wide margin.
                    let crossing = other.is_some_and(|o| {
                        let w = cell(o, i);
                        let other_var = (w[1] - w[0]).abs().max((w[2] - w[1]).abs());
                        let gap = (0..3).map(|q| (w[q] - [ym, y0, yp][q]).abs()).fold(f64::INFINITY, f64::min);
                        gap <= 4.0 * (variation + other_var)
                    });
                    let k = (0..3).map(|q| points[(i + len - 1 + q) % len].1).max().unwrap_or(0);
                    probes.push(Probe {
                        b,
                        is_max,
                        t0: grid[i],
                        k,
                        vertex: vertex(ym, y0, yp, grid[i], h),
                        crossing,
                    });
                }
            }
        }
        log::debug!("edge probes {probes:?}");
        let evals: Vec<Result<(f64, f64)>> = probes
            .par_iter()
            .map(|p| refine_extremum(spec, p, h, &opts.galerkin))
            .collect();
        for (p, found) in probes.iter().zip(evals) {
            let (t, val) = found?;
            bands[p.b].absorb(t, val);
        }
    }

    let functions = (0..n_max)
        .map(|b| BandFunction {
            n: b + 1,
            grid: grid.clone(),
            values: points.iter().map(|(v, _)| v[b]).collect(),
            k_used: points.iter().map(|(_, k)| *k).collect(),
        })
        .collect();
    let top = bands[n_max - 1].hi;
    if top < ceiling {
        return Err(Error::CeilingUnreachable { n_max, top, ceiling });
    }
    let gaps = gaps_from_bands(&bands, ceiling, opts.gap_threshold);
    let lowest = bands[0].lo;
    Ok(BandReport {
        bands,
        gaps,
        ceiling,
        lower_bound: lowest - opts.gap_threshold * (1.0 + lowest.abs()),
        grid_size,
        functions,
    })
}

fn wrap(t: f64) -> f64 {
    if t <= -PI + 1e-12 {
        t + 2.0 * PI
    } else if t > PI + 1e-12 {
        t - 2.0 * PI
    } else {
        t
    }
}

#[derive(Debug, Clone, Copy)]
struct Parabola {
    t: f64,
}

/// Vertex of the parabola through `(t0 - h, ym), (t0, y0), (t0 + h, yp)`.
fn vertex(ym: f64, y0: f64, yp: f64, t0: f64, h: f64) -> Option<Parabola> {
    let denom = ym - 2.0 * y0 + yp;
    if denom == 0.0 {
        return None;
    }
    let offset = 0.5 * h * (ym - yp) / denom;
    (offset.abs() < h).then(|| Parabola { t: wrap(t0 + offset) })
}

#[derive(Debug, Clone, Copy)]
struct Probe {
    b: usize,
    is_max: bool,
    t0: f64,
    /// Converged truncation over the grid cell.
    k: usize,
    vertex: Option<Parabola>,
    crossing: bool,
}

/// Evaluates the parabolic vertex; near a crossing with the adjacent band,
/// where the band function has a kink, golden-section search on `[t0 - h, t0 + h]`.
fn refine_extremum(spec: &OperatorSpec, probe: &Probe, h: f64, opts: &GalerkinOptions) -> Result<(f64, f64)> {
    let Probe { b, is_max, t0, k, .. } = *probe;
    let fixed = GalerkinOptions {
        k: Some(k),
        refine: false,
        ..*opts
    };
    let eval = |t: f64| -> Result<f64> {
        let t = wrap(t);
        bloch_values(spec, t, b + 1, &fixed).map(|(v, _)| v[b]).map_err(|e| e.at(t))
    };
    let vertex = match probe.vertex {
        Some(p) => {
            let v = eval(p.t)?;
            if !probe.crossing {
                return Ok((p.t, v));
            }
            Some((p.t, v))
        }
        None => None,
    };
    let sign = if is_max { -1.0 } else { 1.0 };
    let f = |t: f64| eval(t).map(|v| sign * v);
    let ratio = 0.5 * (5f64.sqrt() - 1.0);
    let (mut lo, mut hi) = (t0 - h, t0 + h);
    let mut x1 = hi - ratio * (hi - lo);
    let mut x2 = lo + ratio * (hi - lo);
    let (mut f1, mut f2) = (f(x1)?, f(x2)?);
    while hi - lo > 1e-6 * h {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - ratio * (hi - lo);
            f1 = f(x1)?;
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + ratio * (hi - lo);
            f2 = f(x2)?;
        }
    }
    let (t, v) = if f1 <= f2 { (x1, f1) } else { (x2, f2) };
    let found = (wrap(t), sign * v);
    Ok(match vertex {
        Some((tv, vv)) if sign * vv < v => (tv, vv),
        _ => found,
    })
}

/// Maximal intervals between consecutive bands longer than the threshold.
pub fn gaps_from_bands(bands: &[Band], ceiling: f64, threshold: f64) -> Vec<Gap> {
    let mut gaps = Vec::new();
    let mut cover = f64::NEG_INFINITY;
    for w in 0..bands.len() {
        cover = cover.max(bands[w].hi);
        if w + 1 == bands.len() || cover >= ceiling {
            break;
        }
        let next = bands[w + 1].lo;
        if next - cover > threshold * (1.0 + cover.abs()) {
            gaps.push(Gap {
                lo: cover,
                hi: next,
                below_band: w + 1,
            });
        }
    }
    gaps
}

/// The `s` with `gap ⊆ U(s)`, searched over `s_range`.
pub fn gap_u_index(spec: &OperatorSpec, mus: &[f64], gap: &Gap, c1: f64, s_range: RangeInclusive<i64>) -> Option<i64> {
    let p2 = spec.coefficient(2);
    s_range.into_iter().find(|&s| {
        let (lo, hi) = u_interval(spec.nu(), mus, p2, s, c1);
        lo <= gap.lo && gap.hi <= hi
    })
}

/// Largest `s` worth testing: `U(s)` must start below the ceiling.
pub fn s_limit(nu: usize, ceiling: f64) -> i64 {
    (ceiling.abs().max(1.0).powf(1.0 / (2 * nu) as f64) / PI).ceil() as i64 + 1
}

#[derive(Debug, Clone, PartialEq)]
pub struct OverlapRecord {
    pub interval: OverlapInterval,
    /// `(n, contained)` for `n = sm + 1, …, sm + m`.
    pub containment: Vec<(usize, bool)>,
}

impl OverlapRecord {
    pub fn empty(&self) -> bool {
        self.interval.is_empty()
    }

    pub fn all_contained(&self) -> bool {
        !self.empty() && self.containment.iter().all(|(_, c)| *c)
    }

    pub fn contained_in(&self) -> Vec<usize> {
        self.containment.iter().filter(|(_, c)| *c).map(|(n, _)| *n).collect()
    }
}

/// Number of bands needed for an overlap report up to `s_max`.
pub fn overlap_bands_needed(m: usize, s_max: i64) -> usize {
    (s_max.max(0) as usize) * m + m
}

/// Tests `[a(s), b(s)] ⊆ I_{sm+j}` for `j = 1..m`.
pub fn overlap_report(spec: &OperatorSpec, s_range: RangeInclusive<i64>, c1: f64, report: &BandReport) -> Result<Vec<OverlapRecord>> {
    if c1 < 0.0 {
        return Err(Error::InvalidArgument(format!("c1 must be ≥ 0, got {c1}")));
    }
    let m = spec.m();
    let needed = overlap_bands_needed(m, *s_range.end());
    if report.bands.len() < needed {
        return Err(Error::InvalidArgument(format!(
            "overlap up to s = {} needs {needed} bands, report has {}",
            s_range.end(),
            report.bands.len()
        )));
    }
    let spectrum = mean_spectrum(spec)?;
    let p2 = spec.coefficient(2);
    let mut out = Vec::new();
    for s in s_range {
        if s < 0 {
            return Err(Error::InvalidArgument(format!("s must be ≥ 0, got {s}")));
        }
        let interval = overlap_interval(spec.nu(), &spectrum.mus, p2, s, c1);
        if interval.is_empty() {
            log::info!("overlap interval for s = {s} is empty");
        }
        let containment = (1..=m)
            .map(|j| {
                let n = s as usize * m + j;
                let band = &report.bands[n - 1];
                (n, !interval.is_empty() && band.contains(interval.a, interval.b))
            })
            .collect();
        out.push(OverlapRecord { interval, containment });
    }
    Ok(out)
}

/// Bands needed to pass `ceiling`, estimated from the unperturbed operator.
pub fn estimated_band_count(spec: &OperatorSpec, ceiling: f64) -> Result<usize> {
    let spectrum = mean_spectrum(spec)?;
    let below = [0.0, PI]
        .into_iter()
        .map(|t| unperturbed_values(spec.nu(), &spectrum, t, ceiling).len())
        .max()
        .unwrap_or(0);
    Ok(below + 2 * spec.m())
}

/// [`bands_and_gaps_with`] with the band count grown until the ceiling is reached.
pub fn bands_to_ceiling(spec: &OperatorSpec, grid_size: usize, ceiling: f64, opts: &BandOptions) -> Result<BandReport> {
    let mut n_max = estimated_band_count(spec, ceiling)?;
    for _ in 0..4 {
        match bands_and_gaps_with(spec, n_max, grid_size, ceiling, opts) {
            Err(Error::CeilingUnreachable { .. }) => n_max += 4 * spec.m(),
            other => return other,
        }
    }
    bands_and_gaps_with(spec, n_max, grid_size, ceiling, opts)
}

/// A gap with the window `U(s)` containing it and the localization verdict
/// against `∩_j S(j, s + 1)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalizedGap {
    pub gap: Gap,
    pub u_index: Option<i64>,
    pub in_all_s: Option<bool>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FiniteGapReport {
    pub condition30: Condition30,
    pub mus: Vec<f64>,
    /// Lowest energy above which no gap was detected up to the ceiling.
    pub fitted_h: Option<f64>,
    pub gaps_above_h: usize,
    pub gaps: Vec<LocalizedGap>,
}

/// Condition check on the mean spectrum, plus localization of every computed gap.
pub fn finite_gap_report(spec: &OperatorSpec, report: &BandReport, c1: f64, calib: &CalibrationConfig) -> Result<FiniteGapReport> {
    let spectrum = mean_spectrum(spec)?;
    let nu = spec.nu();
    let s_max = s_limit(nu, report.ceiling);
    let gaps: Vec<LocalizedGap> = report
        .gaps
        .iter()
        .map(|g| {
            let u_index = gap_u_index(spec, &spectrum.mus, g, c1, 0..=s_max);
            // U(s) lies between the edges a(s) and a(s+1), near (π(s+1))^{2ν}.
            let in_all_s = u_index.map(|s| {
                let k = s + 1;
                in_all_localization_sets(nu, &spectrum.mus, k, calib.gamma_k(nu, k), g.lo, g.hi)
            });
            LocalizedGap { gap: *g, u_index, in_all_s }
        })
        .collect();
    let fitted_h = match report.gaps.last() {
        Some(g) => Some(g.hi),
        None => report.bands.first().map(|b| b.lo),
    };
    let gaps_above_h = fitted_h.map_or(0, |h| report.gaps.iter().filter(|g| g.lo >= h).count());
    Ok(FiniteGapReport {
        condition30: condition30(&spectrum.mus),
        mus: spectrum.mus.clone(),
        fitted_h,
        gaps_above_h,
        gaps,
    })
}

fn csv_io(e: csv::Error) -> Error {
    Error::Io(std::io::Error::other(e))
}

/// Band intervals with the quasimomenta attaining their edges.
pub fn write_band_edges_csv<W: Write>(out: W, report: &BandReport) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "lo", "hi", "t_lo", "t_hi"]).map_err(csv_io)?;
    for b in &report.bands {
        w.write_record([b.n.to_string(), fmt_f64(b.lo), fmt_f64(b.hi), fmt_f64(b.t_lo), fmt_f64(b.t_hi)])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// One `(n, t, λ_n(t))` row per grid sample, band by band.
pub fn write_bands_csv<W: Write>(out: W, functions: &[BandFunction]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["n", "t", "lambda"]).map_err(csv_io)?;
    for f in functions {
        for (t, v) in f.grid.iter().zip(&f.values) {
            w.write_record([f.n.to_string(), fmt_f64(*t), fmt_f64(*v)]).map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}

/// `within_U_s` holds the smallest `s` with the gap inside `U(s)`, empty if none.
pub fn write_gaps_csv<W: Write>(out: W, gaps: &[Gap], u_index: &[Option<i64>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["gap_lo", "gap_hi", "between_band", "within_U_s"]).map_err(csv_io)?;
    for (i, g) in gaps.iter().enumerate() {
        let s = u_index.get(i).copied().flatten().map_or(String::new(), |s| s.to_string());
        w.write_record([fmt_f64(g.lo), fmt_f64(g.hi), g.below_band.to_string(), s])
            .map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

/// Polyline of a single band function, for external plotting.
pub fn write_polyline_csv<W: Write>(out: W, f: &BandFunction) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["t", "lambda", "k_used"]).map_err(csv_io)?;
    for ((t, v), k) in f.grid.iter().zip(&f.values).zip(&f.k_used) {
        w.write_record([fmt_f64(*t), fmt_f64(*v), k.to_string()]).map_err(csv_io)?;
    }
    w.flush()?;
    Ok(())
}

pub fn write_overlap_csv<W: Write>(out: W, rows: &[OverlapRecord]) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(["s", "a", "b", "eps", "empty", "n", "contained"]).map_err(csv_io)?;
    for r in rows {
        let i = &r.interval;
        for &(n, c) in &r.containment {
            w.write_record([
                i.s.to_string(),
                fmt_f64(i.a),
                fmt_f64(i.b),
                fmt_f64(i.eps),
                r.empty().to_string(),
                n.to_string(),
                c.to_string(),
            ])
            .map_err(csv_io)?;
        }
    }
    w.flush()?;
    Ok(())
}
