use std::f64::consts::PI;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::ops::RangeInclusive;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use num_complex::Complex64;
use serde::Serialize;
use serde_json::value::RawValue;

use bandspec::asymptotics::{fit_c1, mean_spectrum, homotopy_sweep, recalibrate, write_migration_csv, CalibrationConfig};
use bandspec::bands::{
    bands_to_ceiling, finite_gap_report, gap_u_index, overlap_bands_needed, overlap_report, s_limit,
    write_band_edges_csv, write_bands_csv, write_gaps_csv, write_overlap_csv, write_polyline_csv, BandOptions,
    BandReport, Gap, CONFIRM_GRID, DEFAULT_GRID,
};
use bandspec::bloch::{bloch_continuity_scan, geometric_approach, sup_grid, write_continuity_csv};
use bandspec::floquet::{liouville_defects, monodromy, write_delta_csv, DeltaRecord, FloquetOptions};
use bandspec::galerkin::{bloch_values, GalerkinOptions};
use bandspec::operator::{parse_operator_spec, OperatorSpec};
use bandspec::report::{fmt_f64, json_f64, RunManifest};
use bandspec::{Error, Result};

#[derive(Parser)]
#[command(name = "bandspec", version, about = "Bloch spectra, bands and gaps of periodic even-order operators")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Operator configuration (TOML, or JSON starting with `{`).
    config: PathBuf,
    /// Output directory.
    #[arg(long, default_value = ".")]
    out: PathBuf,
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Worker threads; output bytes do not depend on it.
    #[arg(long, env = "BANDSPEC_WORKERS")]
    workers: Option<usize>,
}

#[derive(Subcommand)]
enum Command {
    /// Lowest Bloch eigenvalues at given quasimomenta.
    Spectrum {
        #[command(flatten)]
        common: Common,
        /// Quasimomenta, comma separated; `pi`, `-pi/2`, `3*pi/4` accepted.
        #[arg(long, value_parser = parse_real, value_delimiter = ',', default_value = "0")]
        t: Vec<f64>,
        #[arg(long, default_value_t = 10)]
        count: usize,
    },
    /// Bands, gaps and band-function polylines.
    Bands {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: Sweep,
        /// Also test `[a(s), b(s)] ⊆ I_{sm+j}` for `s` in this range, e.g. `s=4..12`.
        #[arg(long, value_parser = parse_range)]
        overlap: Option<RangeInclusive<i64>>,
        #[arg(long, default_value_t = 0.0)]
        c1: f64,
    },
    /// Gaps below the ceiling, confirmed on the fine grid.
    Gaps {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: Sweep,
        #[arg(long, default_value_t = 0.0)]
        c1: f64,
    },
    /// Band-overlap containment table.
    Overlap {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = DEFAULT_GRID)]
        grid: usize,
        #[arg(long, value_parser = parse_range, default_value = "1..12")]
        overlap: RangeInclusive<i64>,
        #[arg(long, default_value_t = 0.0)]
        c1: f64,
    },
    /// Finite-gap criterion on the mean matrix and gap localization.
    FiniteGap {
        #[command(flatten)]
        common: Common,
        #[command(flatten)]
        sweep: Sweep,
        #[arg(long, default_value_t = 0.0)]
        c1: f64,
        /// `γ_k = gamma_c · k^{2ν-2} / ln k`.
        #[arg(long, default_value_t = 1.0)]
        gamma_c: f64,
    },
    /// Eigenvalue migration along `L_t(ε, C)`.
    Homotopy {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_real, value_delimiter = ',', default_value = "0,pi/2,pi")]
        t: Vec<f64>,
        #[arg(long, value_parser = parse_real, value_delimiter = ',', default_value = "0,0.25,0.5,0.75,1")]
        eps_grid: Vec<f64>,
        #[arg(long, value_parser = parse_range, default_value = "3..10")]
        k_window: RangeInclusive<i64>,
        /// Neighbourhood constant; fitted from the data when absent.
        #[arg(long)]
        c1: Option<f64>,
    },
    /// Continuity of projections and phase-normalized eigenfunctions as `t → a`.
    Continuity {
        #[command(flatten)]
        common: Common,
        /// Anchor quasimomentum `a`.
        #[arg(long, value_parser = parse_real, default_value = "0.4")]
        t: f64,
        /// Band index.
        #[arg(long, default_value_t = 1)]
        count: usize,
        /// Length of the sequence `a + (π/8)·2^{-i}`.
        #[arg(long, default_value_t = 16)]
        grid: usize,
    },
    /// Cross-checks Galerkin eigenvalues against the characteristic determinant.
    Validate {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_parser = parse_real, value_delimiter = ',', default_value = "0.3,2.0")]
        t: Vec<f64>,
        #[arg(long, default_value_t = 8)]
        count: usize,
        /// Random spectral parameters for the determinant identity.
        #[arg(long, default_value_t = 50)]
        samples: usize,
    },
}

#[derive(Args, Clone, Copy)]
struct Sweep {
    /// Number of bands; grown automatically to reach the ceiling when absent.
    #[arg(long)]
    count: Option<usize>,
    #[arg(long, default_value_t = DEFAULT_GRID)]
    grid: usize,
    #[arg(long, default_value_t = 1e4)]
    ceiling: f64,
}

fn parse_real(s: &str) -> std::result::Result<f64, String> {
    let s = s.trim();
    if let Ok(x) = s.parse::<f64>() {
        return Ok(x);
    }
    let (sign, body) = match s.strip_prefix('-') {
        Some(rest) => (-1.0, rest),
        None => (1.0, s),
    };
    let (num, den) = match body.split_once('/') {
        Some((n, d)) => (n, d.parse::<f64>().map_err(|e| format!("{s}: {e}"))?),
        None => (body, 1.0),
    };
    let factor = match num.strip_suffix("pi") {
        Some("") => 1.0,
        Some(f) => f
            .trim_end_matches('*')
            .parse::<f64>()
            .map_err(|e| format!("{s}: {e}"))?,
        None => return Err(format!("not a number: {s}")),
    };
    Ok(sign * factor * PI / den)
}

fn parse_range(s: &str) -> std::result::Result<RangeInclusive<i64>, String> {
    let body = s.split_once('=').map_or(s, |(_, r)| r);
    let (a, b) = body
        .split_once("..")
        .ok_or_else(|| format!("expected `lo..hi`, got {s}"))?;
    let parse = |x: &str| x.trim_start_matches('=').trim().parse::<i64>().map_err(|e| format!("{s}: {e}"));
    let (a, b) = (parse(a)?, parse(b)?);
    if a > b {
        return Err(format!("empty range {s}"));
    }
    Ok(a..=b)
}

fn exit_code(e: &Error) -> u8 {
    match e.root() {
        Error::InvalidOrder(_)
        | Error::InvalidDimension(_)
        | Error::CoefficientIndex { .. }
        | Error::EntryIndex { .. }
        | Error::NonSquare { .. }
        | Error::MalformedComplex(_)
        | Error::DuplicateEntry { .. }
        | Error::NotRealValued { .. }
        | Error::Config(_)
        | Error::NotHermitian { .. }
        | Error::InvalidArgument(_)
        | Error::CeilingUnreachable { .. } => 2,
        Error::NoConvergence { .. } => 3,
        Error::NotSelfAdjoint { .. } => 4,
        _ => 5,
    }
}

struct Run<'a> {
    common: &'a Common,
    spec: OperatorSpec,
}

impl Run<'_> {
    fn manifest(&self, command: &str) -> RunManifest {
        RunManifest::new(
            command,
            &self.common.config.display().to_string(),
            &self.common.out.display().to_string(),
            self.common.seed,
        )
    }

    fn path(&self, name: &str) -> PathBuf {
        self.common.out.join(name)
    }

    /// Writes the manifest as `#` lines, then the body.
    fn write_csv(&self, name: &str, manifest: &RunManifest, extra: &[(&str, String)], body: impl FnOnce(&mut dyn Write) -> Result<()>) -> Result<PathBuf> {
        let path = self.path(name);
        let mut w = BufWriter::new(File::create(&path)?);
        manifest.write_comments(&mut w)?;
        for (k, v) in extra {
            writeln!(w, "# {k}: {v}")?;
        }
        body(&mut w)?;
        w.flush()?;
        Ok(path)
    }
}

fn load(common: &Common) -> Result<OperatorSpec> {
    let text = std::fs::read_to_string(&common.config)
        .map_err(|e| Error::Config(format!("{}: {e}", common.config.display())))?;
    parse_operator_spec(&text)
}

fn band_report(run: &Run, sweep: &Sweep, grid: usize) -> Result<BandReport> {
    let opts = BandOptions::default();
    match sweep.count {
        Some(n) => bandspec::bands::bands_and_gaps_with(&run.spec, n, grid, sweep.ceiling, &opts),
        None => bands_to_ceiling(&run.spec, grid, sweep.ceiling, &opts),
    }
}

fn sweep_params(m: RunManifest, sweep: &Sweep) -> RunManifest {
    let m = m.param("grid", sweep.grid).param("ceiling", fmt_f64(sweep.ceiling));
    match sweep.count {
        Some(n) => m.param("count", n),
        None => m,
    }
}

fn join(xs: &[f64]) -> String {
    xs.iter().map(|&x| fmt_f64(x)).collect::<Vec<_>>().join(",")
}

fn spectrum(run: &Run, ts: &[f64], count: usize) -> Result<()> {
    let manifest = run.manifest("spectrum").param("t", join(ts)).param("count", count);
    let mut rows = Vec::new();
    for &t in ts {
        let (values, k) = bloch_values(&run.spec, t, count, &GalerkinOptions::default()).map_err(|e| e.at(t))?;
        for (i, v) in values.iter().enumerate() {
            println!("t = {t:.6}  n = {:>3}  λ = {v:.10}  K = {k}", i + 1);
            rows.push((t, i + 1, *v, k));
        }
    }
    run.write_csv("spectrum.csv", &manifest, &[], |w| {
        let mut c = csv::Writer::from_writer(w);
        let io = |e: csv::Error| Error::Io(std::io::Error::other(e));
        c.write_record(["t", "n", "lambda", "k_used"]).map_err(io)?;
        for (t, n, v, k) in &rows {
            c.write_record([fmt_f64(*t), n.to_string(), fmt_f64(*v), k.to_string()]).map_err(io)?;
        }
        c.flush()?;
        Ok(())
    })?;
    Ok(())
}

fn bands(run: &Run, sweep: &Sweep, overlap: Option<RangeInclusive<i64>>, c1: f64) -> Result<()> {
    let mut manifest = sweep_params(run.manifest("bands"), sweep).param("c1", fmt_f64(c1));
    let mut sweep = *sweep;
    if let Some(range) = &overlap {
        manifest = manifest.param("overlap", format!("{}..{}", range.start(), range.end()));
        let needed = overlap_bands_needed(run.spec.m(), *range.end());
        sweep.count = sweep.count.map(|n| n.max(needed));
        if sweep.count.is_none() {
            sweep.count = Some(needed.max(bandspec::bands::estimated_band_count(&run.spec, sweep.ceiling)?));
        }
    }
    let report = band_report(run, &sweep, sweep.grid)?;
    run.write_csv("bands.csv", &manifest, &[], |w| write_bands_csv(w, &report.functions))?;
    run.write_csv("band_edges.csv", &manifest, &[], |w| write_band_edges_csv(w, &report))?;
    write_gaps(run, &manifest, &report.gaps, report.ceiling, c1)?;
    std::fs::create_dir_all(run.path("polylines"))?;
    for f in &report.functions {
        let name = format!("polylines/band_{:03}.csv", f.n);
        run.write_csv(&name, &manifest, &[], |w| write_polyline_csv(w, f))?;
    }
    println!("{} bands, {} gaps below {}", report.bands.len(), report.gaps.len(), report.ceiling);
    for g in &report.gaps {
        println!("gap above I_{}: ({:.10}, {:.10})", g.below_band, g.lo, g.hi);
    }
    if let Some(range) = overlap {
        let rows = overlap_report(&run.spec, range, c1, &report)?;
        print_overlap(&rows);
        run.write_csv("overlap.csv", &manifest, &[], |w| write_overlap_csv(w, &rows))?;
    }
    Ok(())
}

fn print_overlap(rows: &[bandspec::bands::OverlapRecord]) {
    for r in rows {
        println!(
            "s = {:>3}  [{:.6}, {:.6}]  contained in {:?}  all = {}",
            r.interval.s,
            r.interval.a,
            r.interval.b,
            r.contained_in(),
            r.all_contained()
        );
    }
}

fn write_gaps(run: &Run, manifest: &RunManifest, gaps: &[Gap], ceiling: f64, c1: f64) -> Result<()> {
    let mus = mean_spectrum(&run.spec)?.mus;
    let s_max = s_limit(run.spec.nu(), ceiling);
    let u: Vec<_> = gaps.iter().map(|g| gap_u_index(&run.spec, &mus, g, c1, 0..=s_max)).collect();
    run.write_csv("gaps.csv", manifest, &[], |w| write_gaps_csv(w, gaps, &u))?;
    Ok(())
}

fn gaps(run: &Run, sweep: &Sweep, c1: f64) -> Result<()> {
    let grid = sweep.grid.max(CONFIRM_GRID);
    let manifest = sweep_params(run.manifest("gaps"), sweep)
        .param("confirm_grid", grid)
        .param("c1", fmt_f64(c1));
    let coarse = band_report(run, sweep, sweep.grid)?;
    let fine = if grid == sweep.grid {
        coarse.clone()
    } else {
        band_report(run, &Sweep { count: Some(coarse.bands.len()), ..*sweep }, grid)?
    };
    if coarse.gaps.len() != fine.gaps.len() {
        log::warn!("{} gaps on the coarse grid, {} on the fine grid", coarse.gaps.len(), fine.gaps.len());
    }
    for g in &fine.gaps {
        println!("gap above I_{}: ({:.10}, {:.10})", g.below_band, g.lo, g.hi);
    }
    write_gaps(run, &manifest, &fine.gaps, fine.ceiling, c1)?;
    Ok(())
}

fn overlap(run: &Run, grid: usize, range: RangeInclusive<i64>, c1: f64) -> Result<()> {
    let manifest = run
        .manifest("overlap")
        .param("grid", grid)
        .param("overlap", format!("{}..{}", range.start(), range.end()))
        .param("c1", fmt_f64(c1));
    let needed = overlap_bands_needed(run.spec.m(), *range.end());
    let report = bandspec::bands::bands_and_gaps_with(&run.spec, needed, grid, f64::NEG_INFINITY, &BandOptions::default())?;
    let rows = overlap_report(&run.spec, range, c1, &report)?;
    print_overlap(&rows);
    run.write_csv("overlap.csv", &manifest, &[], |w| write_overlap_csv(w, &rows))?;
    Ok(())
}

#[derive(Serialize)]
struct GapJson {
    lo: Box<RawValue>,
    hi: Box<RawValue>,
    below_band: usize,
    u_index: Option<i64>,
    in_all_localization_sets: Option<bool>,
}

#[derive(Serialize)]
struct FiniteGapJson {
    manifest: RunManifest,
    mus: Vec<Box<RawValue>>,
    condition30: bool,
    witness: Option<[usize; 3]>,
    ceiling: Box<RawValue>,
    gamma_c: Box<RawValue>,
    gap_count: usize,
    #[serde(rename = "fitted_H")]
    fitted_h: Option<Box<RawValue>>,
    #[serde(rename = "gaps_above_H")]
    gaps_above_h: usize,
    gaps: Vec<GapJson>,
}

fn finite_gap(run: &Run, sweep: &Sweep, c1: f64, gamma_c: f64) -> Result<()> {
    let manifest = sweep_params(run.manifest("finite-gap"), sweep)
        .param("c1", fmt_f64(c1))
        .param("gamma_c", fmt_f64(gamma_c));
    let report = band_report(run, sweep, sweep.grid)?;
    let calib = CalibrationConfig {
        c1,
        gamma_c,
        ..CalibrationConfig::default()
    };
    let fg = finite_gap_report(&run.spec, &report, c1, &calib)?;
    let doc = FiniteGapJson {
        manifest,
        mus: fg.mus.iter().map(|&m| json_f64(m)).collect(),
        condition30: fg.condition30.holds,
        witness: fg.condition30.witness.map(|(a, b, c)| [a, b, c]),
        ceiling: json_f64(sweep.ceiling),
        gamma_c: json_f64(gamma_c),
        gap_count: fg.gaps.len(),
        fitted_h: fg.fitted_h.map(json_f64),
        gaps_above_h: fg.gaps_above_h,
        gaps: fg
            .gaps
            .iter()
            .map(|g| GapJson {
                lo: json_f64(g.gap.lo),
                hi: json_f64(g.gap.hi),
                below_band: g.gap.below_band,
                u_index: g.u_index,
                in_all_localization_sets: g.in_all_s,
            })
            .collect(),
    };
    let path = run.path("finite_gap.json");
    let mut w = BufWriter::new(File::create(&path)?);
    serde_json::to_writer_pretty(&mut w, &doc).map_err(|e| Error::Io(e.into()))?;
    writeln!(w)?;
    w.flush()?;
    println!(
        "condition holds: {} witness {:?}; {} gaps; fitted H = {:?}",
        fg.condition30.holds,
        fg.condition30.witness,
        fg.gaps.len(),
        fg.fitted_h
    );
    Ok(())
}

fn homotopy(run: &Run, ts: &[f64], eps_grid: &[f64], k_window: RangeInclusive<i64>, c1: Option<f64>) -> Result<()> {
    let mut manifest = run
        .manifest("homotopy")
        .param("t", join(ts))
        .param("eps_grid", join(eps_grid))
        .param("k_window", format!("{}..{}", k_window.start(), k_window.end()));
    if let Some(c) = c1 {
        manifest = manifest.param("c1", fmt_f64(c));
    }
    let calib = CalibrationConfig::default();
    let mut rows = Vec::new();
    for &t in ts {
        rows.extend(homotopy_sweep(&run.spec, t, eps_grid, k_window.clone(), &calib, &GalerkinOptions::default())?);
    }
    let p2 = run.spec.coefficient(2);
    let fitted = fit_c1(run.spec.nu(), p2, &rows);
    recalibrate(run.spec.nu(), p2, &mut rows, c1.unwrap_or(fitted));
    println!("fitted c1 = {fitted:.6e}; {} of {} rows within ε_k", rows.iter().filter(|r| r.within).count(), rows.len());
    run.write_csv("migration.csv", &manifest, &[("fitted_c1", fmt_f64(fitted))], |w| write_migration_csv(w, &rows))?;
    Ok(())
}

fn continuity(run: &Run, a: f64, n: usize, len: usize) -> Result<()> {
    let manifest = run.manifest("continuity").param("t", fmt_f64(a)).param("count", n).param("grid", len);
    let ts = geometric_approach(a, len);
    let scan = bloch_continuity_scan(&run.spec, n, a, &ts, &sup_grid(), &GalerkinOptions::default())?;
    for r in &scan.records {
        println!(
            "t - a = {:.3e}  projection {:.3e}  eigenfunction {:.3e}",
            r.t - a,
            r.sup_diff_projection,
            r.sup_diff_eigenfunction
        );
    }
    let anchor = [
        ("anchor_frequency", scan.anchor.frequency.to_string()),
        ("anchor_component", scan.anchor.component.to_string()),
        ("anchor_threshold", fmt_f64(scan.anchor.threshold)),
        ("truncation", scan.k.to_string()),
    ];
    run.write_csv("continuity.csv", &manifest, &anchor, |w| write_continuity_csv(w, &scan.records))?;
    Ok(())
}

fn validate(run: &Run, ts: &[f64], count: usize, samples: usize) -> Result<()> {
    let manifest = run
        .manifest("validate")
        .param("t", join(ts))
        .param("count", count)
        .param("samples", samples);
    let opts = FloquetOptions::default();
    let mut records = Vec::new();
    let mut worst: f64 = 0.0;
    for &t in ts {
        let (values, _) = bloch_values(&run.spec, t, count, &GalerkinOptions::default()).map_err(|e| e.at(t))?;
        for lam in values {
            let z = Complex64::new(lam, 0.0);
            if !opts.admits(run.spec.nu(), z) {
                continue;
            }
            let mono = monodromy(&run.spec, z)?;
            let res = mono.normalized_residual(t);
            worst = worst.max(res);
            println!("t = {t:.6}  λ = {lam:.10}  normalized residual {res:.3e}");
            records.push(DeltaRecord { lambda: z, t, delta: mono.char_det(t) });
        }
    }
    let defects = liouville_defects(&run.spec, samples, run.common.seed, &opts)?;
    let det_worst = defects.iter().map(|d| d.1).fold(0.0, f64::max);
    println!("max normalized residual {worst:.3e}; max |det M - 1| {det_worst:.3e} over {samples} samples");
    run.write_csv(
        "validate.csv",
        &manifest,
        &[("max_normalized_residual", fmt_f64(worst)), ("max_det_defect", fmt_f64(det_worst))],
        |w| write_delta_csv(w, &records),
    )?;
    Ok(())
}

fn dispatch(cmd: &Command) -> Result<()> {
    let common = match cmd {
        Command::Spectrum { common, .. }
        | Command::Bands { common, .. }
        | Command::Gaps { common, .. }
        | Command::Overlap { common, .. }
        | Command::FiniteGap { common, .. }
        | Command::Homotopy { common, .. }
        | Command::Continuity { common, .. }
        | Command::Validate { common, .. } => common,
    };
    let spec = load(common)?;
    std::fs::create_dir_all(&common.out)?;
    let run = Run { common, spec };
    match cmd {
        Command::Spectrum { t, count, .. } => spectrum(&run, t, *count),
        Command::Bands { sweep, overlap, c1, .. } => bands(&run, sweep, overlap.clone(), *c1),
        Command::Gaps { sweep, c1, .. } => gaps(&run, sweep, *c1),
        Command::Overlap { grid, overlap: range, c1, .. } => overlap(&run, *grid, range.clone(), *c1),
        Command::FiniteGap { sweep, c1, gamma_c, .. } => finite_gap(&run, sweep, *c1, *gamma_c),
        Command::Homotopy { t, eps_grid, k_window, c1, .. } => homotopy(&run, t, eps_grid, k_window.clone(), *c1),
        Command::Continuity { t, count, grid, .. } => continuity(&run, *t, *count, *grid),
        Command::Validate { t, count, samples, .. } => validate(&run, t, *count, *samples),
    }
}

fn workers(cmd: &Command) -> Option<usize> {
    match cmd {
        Command::Spectrum { common, .. }
        | Command::Bands { common, .. }
        | Command::Gaps { common, .. }
        | Command::Overlap { common, .. }
        | Command::FiniteGap { common, .. }
        | Command::Homotopy { common, .. }
        | Command::Continuity { common, .. }
        | Command::Validate { common, .. } => common.workers,
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let mut pool = rayon::ThreadPoolBuilder::new();
    if let Some(n) = workers(&cli.command) {
        pool = pool.num_threads(n.max(1));
    }
    let result = match pool.build() {
        Ok(pool) => pool.install(|| dispatch(&cli.command)),
        Err(e) => Err(Error::InvalidArgument(e.to_string())),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(exit_code(&e))
        }
    }
}
