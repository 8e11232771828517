//! Convergence studies: mesh sequences, errors, rate fits, CSV and SVG output.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use num_complex::Complex64;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::analytic::{make_exact, AnalyticError, ExactProblem, ExactSolution};
use crate::assembly::{
    assemble_system, dg_plus_seminorm_terms, AssembledSystem, AssemblyContext, AssemblyError, DgParameters,
    DiscreteField, ExactData, ExactField, FieldDifference,
};
use crate::geometry::{
    build_structured_mesh, read_mesh, refine_uniform, EdgeKind, GeometryError, Mesh, Rectangle, TriangulationPattern,
};
use crate::gpw::{build_basis_set, least_squares_slope, GpwBasisSet, GpwError, MAX_ORDER};
use crate::quadrature::{QuadratureError, QuadratureOrders};
use crate::solver::{solve_direct, SolverError};

/// Levels whose condition estimate exceeds this are left out of rate fits.
pub const CONDITION_LIMIT: f64 = 1e14;
/// Environment variable capping the worker threads; `1` is deterministic mode.
pub const THREADS_ENV: &str = "GPWTDG_THREADS";

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error(transparent)]
    Gpw(#[from] GpwError),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Assembly(#[from] AssemblyError),
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error("solver failed at level {level}: {source}")]
    Solver {
        level: usize,
        source: SolverError,
        /// Records of the levels completed before the failure.
        partial: Vec<ConvergenceRecord>,
    },
    #[error("exact solution has zero L2 norm")]
    ZeroNorm,
    #[error(transparent)]
    Io(#[from] std::io::Error),
    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl HarnessError {
    /// Process exit code: 2 for solver failures, 3 for configuration errors.
    pub fn exit_code(&self) -> i32 {
        match self {
            HarnessError::Solver { .. } => 2,
            HarnessError::Io(_) | HarnessError::Csv(_) => 1,
            _ => 3,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum ProblemKind {
    /// `u = Ai(kappa^{2/3} y)`, `eps = -y`.
    Airy,
    /// `u = P_o(sqrt(kappa) x, a)`, `eps = x^2/4 - a/kappa`.
    Weber,
    /// Plane wave with `eps = 1`.
    Constant,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "lowercase")]
pub enum BoundaryMode {
    Robin,
    Dirichlet,
}

#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub label: String,
    pub problem: ProblemKind,
    pub kappa: f64,
    pub n: usize,
    pub q: usize,
    pub gamma0: f64,
    pub gamma_exp: f64,
    pub levels: usize,
    /// Fixed number of Gauss points per direction.
    pub quad_order: Option<usize>,
    /// Initial mesh file; the default is `[-1, 1]^2` split into 2 x 2 cells.
    pub mesh: Option<PathBuf>,
    pub boundary: BoundaryMode,
    /// Weber parameter `a`.
    pub weber_a: f64,
    /// Plane-wave direction for the constant problem.
    pub theta: f64,
    /// Number of trailing levels in the rate fit; default `max(3, levels - 1)`.
    pub rate_window: Option<usize>,
    pub dg_error: bool,
    /// Zero the timing columns so that outputs are reproducible.
    pub deterministic: bool,
    /// Directory receiving a coordinate dump of each level's system.
    pub dump_dir: Option<PathBuf>,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            label: "run".into(),
            problem: ProblemKind::Airy,
            kappa: 15.0,
            n: 2,
            q: 3,
            gamma0: 1.0,
            gamma_exp: 3.0,
            levels: 5,
            quad_order: None,
            mesh: None,
            boundary: BoundaryMode::Robin,
            weber_a: 5.0,
            theta: 0.0,
            rate_window: None,
            dg_error: true,
            deterministic: false,
            dump_dir: None,
        }
    }
}

impl RunConfig {
    pub fn validate(&self) -> Result<(), HarnessError> {
        let fail = |msg: String| Err(HarnessError::Config(msg));
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return fail(format!("kappa must be positive, got {}", self.kappa));
        }
        if self.n == 0 {
            return fail("n must be at least 1".into());
        }
        if self.q == 0 || self.q > MAX_ORDER {
            return fail(format!("q must be in 1..={MAX_ORDER}, got {}", self.q));
        }
        if self.levels == 0 {
            return fail("levels must be at least 1".into());
        }
        if self.quad_order == Some(0) {
            return fail("quadrature order must be positive".into());
        }
        if !self.weber_a.is_finite() || !self.theta.is_finite() {
            return fail("weber_a and theta must be finite".into());
        }
        if self.rate_window.is_some_and(|w| w < 2) {
            return fail("rate window needs at least two levels".into());
        }
        self.params().validate()?;
        Ok(())
    }

    pub fn params(&self) -> DgParameters {
        DgParameters::with_gamma(self.gamma0, self.gamma_exp)
    }

    pub fn p(&self) -> usize {
        2 * self.n + 1
    }

    pub fn exact_problem(&self) -> ExactProblem {
        match self.problem {
            ProblemKind::Airy => ExactProblem::Airy { kappa: self.kappa },
            ProblemKind::Weber => ExactProblem::Weber { kappa: self.kappa, a: self.weber_a },
            ProblemKind::Constant => ExactProblem::PlaneWave { kappa: self.kappa, theta: self.theta },
        }
    }

    fn orders(&self) -> QuadratureOrders {
        QuadratureOrders::with_override(self.quad_order)
    }

    fn initial_mesh(&self) -> Result<Mesh, HarnessError> {
        let mut mesh = match &self.mesh {
            Some(path) => read_mesh(path)?,
            None => {
                build_structured_mesh(Rectangle::symmetric_unit(), TriangulationPattern::Diagonal { nx: 2, ny: 2 })?
            }
        };
        let kind = match self.boundary {
            BoundaryMode::Robin => EdgeKind::Robin,
            BoundaryMode::Dirichlet => EdgeKind::Dirichlet,
        };
        mesh.classify_boundary(|_, _| kind);
        Ok(mesh)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ConvergenceRecord {
    pub level: usize,
    pub h: f64,
    pub ndof: usize,
    /// `sqrt(ndof / p)`.
    pub c_over_h: f64,
    pub rel_l2: f64,
    pub dg_err: Option<f64>,
    pub cond: f64,
    pub assemble_s: f64,
    pub solve_s: f64,
}

#[derive(Debug, Clone)]
pub struct ConvergenceResult {
    pub config: RunConfig,
    pub records: Vec<ConvergenceRecord>,
    /// Fitted order of `rel_l2` in `h`.
    pub rate: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct L2Error {
    pub abs: f64,
    pub rel: f64,
}

/// GPW bases for every element of `mesh`.
pub fn build_bases(mesh: &Mesh, config: &RunConfig, exact: &ExactSolution) -> Result<Vec<GpwBasisSet>, HarnessError> {
    (0..mesh.num_elements())
        .into_par_iter()
        .map(|t| build_basis_set(exact.field(), t, mesh.centroid(t), config.kappa, config.n, config.q))
        .collect::<Result<Vec<_>, _>>()
        .map_err(HarnessError::from)
}

fn bounding_box(mesh: &Mesh) -> Rectangle {
    let inf = f64::INFINITY;
    mesh.vertices().iter().fold(Rectangle { x_min: inf, x_max: -inf, y_min: inf, y_max: -inf }, |r, p| Rectangle {
        x_min: r.x_min.min(p[0]),
        x_max: r.x_max.max(p[0]),
        y_min: r.y_min.min(p[1]),
        y_max: r.y_max.max(p[1]),
    })
}

/// Relative and absolute L2 error of the GPW expansion `coeffs` against `exact`,
/// with one Gauss point per direction more than `orders` prescribes.
pub fn compute_l2_error(
    mesh: &Mesh,
    coeffs: &[Complex64],
    bases: &[GpwBasisSet],
    exact: &ExactSolution,
    orders: QuadratureOrders,
) -> Result<L2Error, HarnessError> {
    let field = exact.field();
    let ctx = AssemblyContext::new(mesh, bases, field, exact.kappa(), DgParameters::default())?
        .with_orders(orders.boosted(1));
    let rules = ctx.rules()?;
    let discrete = DiscreteField { bases, coeffs };
    let parts: Vec<(f64, f64)> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|t| {
            let (mut err, mut norm) = (0.0, 0.0);
            for (x, w) in rules.element(t).map(mesh.triangle_points(t)) {
                let u = exact.value(x);
                let uh = crate::assembly::PiecewiseField::eval(&discrete, t, x).value;
                err += w * (u - uh).norm_sqr();
                norm += w * u.norm_sqr();
            }
            (err, norm)
        })
        .collect();
    let (err, norm) = parts.iter().fold((0.0, 0.0), |a, b| (a.0 + b.0, a.1 + b.1));
    if !(norm > 0.0) {
        return Err(HarnessError::ZeroNorm);
    }
    Ok(L2Error { abs: err.sqrt(), rel: (err / norm).sqrt() })
}

/// DG norm of `u_exact - u_h`.
pub fn compute_dg_error(
    ctx: &AssemblyContext,
    coeffs: &[Complex64],
    exact: &ExactSolution,
) -> Result<f64, HarnessError> {
    let ctx = ctx.with_orders(ctx.orders.boosted(1));
    let exact_field = ExactField(exact);
    let discrete = DiscreteField { bases: ctx.bases, coeffs };
    let diff = FieldDifference(&exact_field, &discrete);
    Ok(dg_plus_seminorm_terms(&ctx, &diff)?.dg())
}

/// Least-squares order of `rel_l2` in `h` over the last `window` levels
/// (default `max(3, levels - 1)`), skipping levels whose condition estimate
/// exceeds [`CONDITION_LIMIT`]. Falls back to all unflagged levels when fewer
/// than two remain in the window.
pub fn fit_rate(records: &[ConvergenceRecord], window: Option<usize>) -> Option<f64> {
    let usable = |r: &&ConvergenceRecord| r.cond <= CONDITION_LIMIT && r.rel_l2 > 0.0 && r.rel_l2.is_finite();
    let window = window.unwrap_or_else(|| 3.max(records.len().saturating_sub(1)));
    let start = records.len().saturating_sub(window);
    let mut points: Vec<(f64, f64)> =
        records[start..].iter().filter(usable).map(|r| (r.h.ln(), r.rel_l2.ln())).collect();
    if points.len() < 2 {
        points = records.iter().filter(usable).map(|r| (r.h.ln(), r.rel_l2.ln())).collect();
    }
    (points.len() >= 2).then(|| least_squares_slope(&points))
}

fn system_is_finite(system: &AssembledSystem) -> bool {
    system.rhs.iter().all(|v| v.is_finite()) && system.matrix.triplets().all(|(_, _, v)| v.is_finite())
}

/// Runs every refinement level of `config`. A level whose assembled system is
/// not finite is recorded with `cond = inf` and a NaN error. A solver failure
/// aborts with the completed records attached to the error.
pub fn run_convergence(config: &RunConfig) -> Result<ConvergenceResult, HarnessError> {
    config.validate()?;
    let exact = make_exact(config.exact_problem())?;
    let mut mesh = config.initial_mesh()?;
    exact.check_domain(&bounding_box(&mesh))?;
    let orders = config.orders();
    let mut records = Vec::with_capacity(config.levels);
    for level in 1..=config.levels {
        if level > 1 {
            mesh = refine_uniform(&mesh);
        }
        let start = Instant::now();
        let bases = build_bases(&mesh, config, &exact)?;
        let ctx =
            AssemblyContext::new(&mesh, &bases, exact.field(), config.kappa, config.params())?.with_orders(orders);
        let system = assemble_system(&ctx, &ExactData(&exact))?;
        let assemble_s = start.elapsed().as_secs_f64();
        if let Some(dir) = &config.dump_dir {
            fs::create_dir_all(dir)?;
            system.write_dump(&dir.join(format!("{}-level{level}.txt", config.label)))?;
        }
        let ndof = system.dim();
        if !system_is_finite(&system) {
            // GPWs overflow on elements far too coarse for their degree; such a
            // level carries no information but later levels may.
            log::warn!("{} level {level}: assembled system overflows, level flagged", config.label);
            records.push(ConvergenceRecord {
                level,
                h: mesh.h(),
                ndof,
                c_over_h: (ndof as f64 / config.p() as f64).sqrt(),
                rel_l2: f64::NAN,
                dg_err: None,
                cond: f64::INFINITY,
                assemble_s,
                solve_s: 0.0,
            });
            continue;
        }
        let report = match solve_direct(&system) {
            Ok(r) => r,
            Err(source) => return Err(HarnessError::Solver { level, source, partial: records }),
        };
        let l2 = compute_l2_error(&mesh, &report.solution, &bases, &exact, orders)?;
        let dg_err = if config.dg_error { Some(compute_dg_error(&ctx, &report.solution, &exact)?) } else { None };
        let record = ConvergenceRecord {
            level,
            h: mesh.h(),
            ndof,
            c_over_h: (ndof as f64 / config.p() as f64).sqrt(),
            rel_l2: l2.rel,
            dg_err,
            cond: report.condition,
            assemble_s,
            solve_s: report.factor_seconds + report.solve_seconds,
        };
        log::info!(
            "{} level {level}: h = {:.4e}, ndof = {ndof}, rel L2 = {:.3e}, cond = {:.2e}, residual = {:.1e}",
            config.label,
            record.h,
            record.rel_l2,
            record.cond,
            report.relative_residual
        );
        records.push(record);
    }
    let rate = fit_rate(&records, config.rate_window);
    Ok(ConvergenceResult { config: config.clone(), records, rate })
}

/// CSV text with columns `level,h,ndof,c_over_h,rel_l2,dg_err,cond,assemble_s,solve_s`.
pub fn records_to_csv(records: &[ConvergenceRecord], zero_timings: bool) -> Result<String, HarnessError> {
    let mut writer = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    writer.write_record(["level", "h", "ndof", "c_over_h", "rel_l2", "dg_err", "cond", "assemble_s", "solve_s"])?;
    for r in records {
        let mut r = r.clone();
        if zero_timings {
            r.assemble_s = 0.0;
            r.solve_s = 0.0;
        }
        writer.serialize(r)?;
    }
    let bytes = writer.into_inner().map_err(|e| HarnessError::Io(e.into_error()))?;
    Ok(String::from_utf8(bytes).expect("csv output is UTF-8"))
}

pub fn parse_csv(text: &str) -> Result<Vec<ConvergenceRecord>, HarnessError> {
    let mut reader = csv::Reader::from_reader(text.as_bytes());
    reader.deserialize().collect::<Result<Vec<_>, _>>().map_err(HarnessError::from)
}

/// One curve of the log-log plot: `(C/h, relative L2 error)` pairs.
#[derive(Debug, Clone, PartialEq)]
pub struct PlotSeries {
    pub label: String,
    pub points: Vec<(f64, f64)>,
}

impl PlotSeries {
    pub fn from_records(label: impl Into<String>, records: &[ConvergenceRecord]) -> Self {
        let points =
            records.iter().filter(|r| r.rel_l2 > 0.0 && r.rel_l2.is_finite()).map(|r| (r.c_over_h, r.rel_l2)).collect();
        Self { label: label.into(), points }
    }
}

const PALETTE: [&str; 8] = ["#1f77b4", "#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#8c564b", "#e377c2", "#17becf"];

/// Log-log SVG of error against `C/h` with dotted reference slopes of order 2 to 5.
pub fn render_svg(title: &str, series: &[PlotSeries]) -> String {
    let (width, height) = (720.0, 520.0);
    let (left, right, top, bottom) = (80.0, 190.0, 40.0, 60.0);
    let all: Vec<(f64, f64)> = series.iter().flat_map(|s| s.points.iter().copied()).collect();
    let decade = |v: f64, up: bool| if up { v.log10().ceil() } else { v.log10().floor() };
    let (x0, x1, y0, y1) = if all.is_empty() {
        (0.0, 1.0, -1.0, 0.0)
    } else {
        let xmin = all.iter().map(|p| p.0).fold(f64::INFINITY, f64::min);
        let xmax = all.iter().map(|p| p.0).fold(0.0, f64::max);
        let ymin = all.iter().map(|p| p.1).fold(f64::INFINITY, f64::min);
        let ymax = all.iter().map(|p| p.1).fold(0.0, f64::max);
        let (x0, mut x1) = (decade(xmin, false), decade(xmax, true));
        let (y0, mut y1) = (decade(ymin, false), decade(ymax, true));
        if x1 <= x0 {
            x1 = x0 + 1.0;
        }
        if y1 <= y0 {
            y1 = y0 + 1.0;
        }
        (x0, x1, y0, y1)
    };
    let plot_w = width - left - right;
    let plot_h = height - top - bottom;
    let sx = |x: f64| left + (x.log10() - x0) / (x1 - x0) * plot_w;
    let sy = |y: f64| top + (y1 - y.log10()) / (y1 - y0) * plot_h;

    let mut svg = String::new();
    let _ = writeln!(
        svg,
        r#"<svg xmlns="http://www.w3.org/2000/svg" width="{width}" height="{height}" viewBox="0 0 {width} {height}" font-family="sans-serif" font-size="12">"#
    );
    let _ = writeln!(svg, r#"<rect width="100%" height="100%" fill="white"/>"#);
    let _ = writeln!(
        svg,
        r#"<text x="{}" y="24" text-anchor="middle" font-size="14">{}</text>"#,
        left + plot_w / 2.0,
        escape(title)
    );
    let _ =
        writeln!(svg, r##"<rect x="{left}" y="{top}" width="{plot_w}" height="{plot_h}" fill="none" stroke="#333"/>"##);
    for k in (x0 as i32)..=(x1 as i32) {
        let x = sx(10f64.powi(k));
        let _ = writeln!(svg, r##"<line x1="{x:.2}" y1="{top}" x2="{x:.2}" y2="{:.2}" stroke="#ddd"/>"##, top + plot_h);
        let _ = writeln!(svg, r#"<text x="{x:.2}" y="{:.2}" text-anchor="middle">1e{k}</text>"#, top + plot_h + 18.0);
    }
    for k in (y0 as i32)..=(y1 as i32) {
        let y = sy(10f64.powi(k));
        let _ =
            writeln!(svg, r##"<line x1="{left}" y1="{y:.2}" x2="{:.2}" y2="{y:.2}" stroke="#ddd"/>"##, left + plot_w);
        let _ = writeln!(svg, r#"<text x="{:.2}" y="{:.2}" text-anchor="end">1e{k}</text>"#, left - 6.0, y + 4.0);
    }
    let _ = writeln!(svg, r#"<text x="{}" y="{}" text-anchor="middle">C/h</text>"#, left + plot_w / 2.0, height - 16.0);
    let _ = writeln!(
        svg,
        r#"<text x="20" y="{}" text-anchor="middle" transform="rotate(-90 20 {})">relative L2 error</text>"#,
        top + plot_h / 2.0,
        top + plot_h / 2.0
    );
    // Reference slopes anchored at the first point of the first series.
    if let Some(&(ax, ay)) = series.iter().find_map(|s| s.points.first()) {
        let xe = 10f64.powf(x1);
        for order in 2..=5 {
            let ye = ay * (ax / xe).powi(order);
            let (px0, py0, px1, py1) = (sx(ax), sy(ay), sx(xe), sy(ye.max(10f64.powf(y0))));
            let xe_clip = if ye < 10f64.powf(y0) { ax * (ay / 10f64.powf(y0)).powf(1.0 / order as f64) } else { xe };
            let px1 = if ye < 10f64.powf(y0) { sx(xe_clip) } else { px1 };
            let _ = writeln!(
                svg,
                r##"<line x1="{px0:.2}" y1="{py0:.2}" x2="{px1:.2}" y2="{py1:.2}" stroke="#999" stroke-dasharray="2,4"/>"##
            );
            let _ = writeln!(svg, r##"<text x="{:.2}" y="{:.2}" fill="#666">O(h^{order})</text>"##, px1 + 3.0, py1);
        }
    }
    for (k, s) in series.iter().enumerate() {
        let color = PALETTE[k % PALETTE.len()];
        let pts: Vec<String> = s.points.iter().map(|&(x, y)| format!("{:.2},{:.2}", sx(x), sy(y))).collect();
        let _ =
            writeln!(svg, r#"<polyline fill="none" stroke="{color}" stroke-width="1.5" points="{}"/>"#, pts.join(" "));
        for &(x, y) in &s.points {
            let _ = writeln!(svg, r#"<circle cx="{:.2}" cy="{:.2}" r="3" fill="{color}"/>"#, sx(x), sy(y));
        }
        let ly = top + 10.0 + 18.0 * k as f64;
        let lx = width - right + 12.0;
        let _ = writeln!(
            svg,
            r#"<line x1="{lx}" y1="{ly}" x2="{}" y2="{ly}" stroke="{color}" stroke-width="2"/>"#,
            lx + 20.0
        );
        let _ = writeln!(svg, r#"<text x="{}" y="{}">{}</text>"#, lx + 26.0, ly + 4.0, escape(&s.label));
    }
    svg.push_str("</svg>\n");
    svg
}

fn escape(s: &str) -> String {
    s.replace('&', "&amp;").replace('<', "&lt;").replace('>', "&gt;")
}

/// Writes `<dir>/<label>.csv` and `<dir>/<label>.svg`; returns both paths.
pub fn emit_outputs(result: &ConvergenceResult, dir: &Path) -> Result<(PathBuf, PathBuf), HarnessError> {
    fs::create_dir_all(dir)?;
    let label = &result.config.label;
    let csv_path = dir.join(format!("{label}.csv"));
    fs::write(&csv_path, records_to_csv(&result.records, result.config.deterministic)?)?;
    let svg_path = dir.join(format!("{label}.svg"));
    let series = [PlotSeries::from_records(label.clone(), &result.records)];
    fs::write(&svg_path, render_svg(label, &series))?;
    Ok((csv_path, svg_path))
}

/// A named group of runs reproducing one experiment.
#[derive(Debug, Clone)]
pub struct Preset {
    pub name: String,
    pub runs: Vec<RunConfig>,
}

pub const PRESET_NAMES: [&str; 6] = ["airy-gh3", "airy-gh1", "airy-g0", "weber-gh3", "airy-quick", "smoke"];

fn grid(name: &str, base: RunConfig, grid: &[(usize, usize)]) -> Preset {
    let runs =
        grid.iter().map(|&(n, q)| RunConfig { label: format!("{name}-n{n}-q{q}"), n, q, ..base.clone() }).collect();
    Preset { name: name.into(), runs }
}

/// Experiment presets. The full grids use `n in 1..=4`, `q in {1, 3, 4, 5}`.
pub fn preset(name: &str) -> Option<Preset> {
    let full_grid: Vec<(usize, usize)> =
        (1..=4).flat_map(|n| [1usize, 3, 4, 5].into_iter().map(move |q| (n, q))).collect();
    let airy = RunConfig { problem: ProblemKind::Airy, kappa: 15.0, levels: 5, ..RunConfig::default() };
    Some(match name {
        "airy-gh3" => grid(name, RunConfig { gamma0: 1.0, gamma_exp: 3.0, ..airy }, &full_grid),
        "airy-gh1" => grid(name, RunConfig { gamma0: 1.0, gamma_exp: 1.0, ..airy }, &full_grid),
        "airy-g0" => grid(name, RunConfig { gamma0: 0.0, gamma_exp: 0.0, ..airy }, &full_grid),
        "weber-gh3" => grid(
            name,
            RunConfig { problem: ProblemKind::Weber, kappa: 50.0, weber_a: 5.0, levels: 6, ..RunConfig::default() },
            &full_grid,
        ),
        "airy-quick" => grid(name, RunConfig { levels: 3, ..airy }, &[(2, 3)]),
        "smoke" => grid(name, RunConfig { kappa: 5.0, levels: 2, ..airy }, &[(1, 1), (2, 3)]),
        _ => return None,
    })
}

/// Runs every configuration of a preset, writing per-run CSV/SVG files, a
/// combined plot `<name>.svg` and `<name>-rates.csv`. Runs that fail are
/// logged and reported after the remaining runs finish.
pub fn run_sweep(preset: &Preset, dir: &Path, deterministic: bool) -> Result<Vec<ConvergenceResult>, HarnessError> {
    fs::create_dir_all(dir)?;
    let mut results = Vec::new();
    let mut first_error = None;
    for config in &preset.runs {
        let config = RunConfig { deterministic, ..config.clone() };
        match run_convergence(&config) {
            Ok(result) => {
                emit_outputs(&result, dir)?;
                results.push(result);
            }
            Err(HarnessError::Solver { level, source, partial }) => {
                log::error!("{}: solver failed at level {level}: {source}", config.label);
                fs::write(dir.join(format!("{}.csv", config.label)), records_to_csv(&partial, deterministic)?)?;
                first_error.get_or_insert(HarnessError::Solver { level, source, partial });
            }
            Err(e) => return Err(e),
        }
    }
    let series: Vec<PlotSeries> =
        results.iter().map(|r| PlotSeries::from_records(r.config.label.clone(), &r.records)).collect();
    fs::write(dir.join(format!("{}.svg", preset.name)), render_svg(&preset.name, &series))?;
    let mut rates = String::from("label,n,q,gamma0,gamma_exp,rate\n");
    for r in &results {
        let c = &r.config;
        let rate = r.rate.map_or(String::new(), |v| format!("{v}"));
        let _ = writeln!(rates, "{},{},{},{},{},{rate}", c.label, c.n, c.q, c.gamma0, c.gamma_exp);
    }
    fs::write(dir.join(format!("{}-rates.csv", preset.name)), rates)?;
    match first_error {
        Some(e) => Err(e),
        None => Ok(results),
    }
}

/// Thread configuration read from [`THREADS_ENV`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ThreadMode {
    /// `None` uses every available core.
    pub threads: Option<usize>,
}

impl ThreadMode {
    pub fn from_env() -> Result<Self, HarnessError> {
        match std::env::var(THREADS_ENV) {
            Ok(v) => match v.trim().parse::<usize>() {
                Ok(0) | Err(_) => {
                    Err(HarnessError::Config(format!("{THREADS_ENV} must be a positive integer, got `{v}`")))
                }
                Ok(n) => Ok(Self { threads: Some(n) }),
            },
            Err(_) => Ok(Self { threads: None }),
        }
    }

    pub fn deterministic(&self) -> bool {
        self.threads == Some(1)
    }

    /// Sizes the global rayon pool and the factorization parallelism. Only the
    /// first call in a process can size the pool.
    pub fn install(&self) {
        if let Some(n) = self.threads {
            if rayon::ThreadPoolBuilder::new().num_threads(n).build_global().is_err() {
                log::debug!("global thread pool already initialised");
            }
        }
        faer::set_global_parallelism(if self.deterministic() { faer::Par::Seq } else { faer::Par::rayon(0) });
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn record(level: usize, h: f64, err: f64, cond: f64) -> ConvergenceRecord {
        ConvergenceRecord {
            level,
            h,
            ndof: 40 * 4usize.pow(level as u32 - 1),
            c_over_h: (8.0 * 4f64.powi(level as i32 - 1)).sqrt(),
            rel_l2: err,
            dg_err: Some(2.0 * err),
            cond,
            assemble_s: 0.5,
            solve_s: 0.25,
        }
    }

    #[test]
    fn config_validation() {
        assert!(RunConfig::default().validate().is_ok());
        assert!(RunConfig { n: 0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { q: 0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { levels: 0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { kappa: -1.0, ..Default::default() }.validate().is_err());
        assert!(RunConfig { gamma0: -1.0, ..Default::default() }.validate().is_err());
        assert_eq!(HarnessError::Config("x".into()).exit_code(), 3);
    }

    #[test]
    fn rate_fit() {
        let recs: Vec<_> =
            (1..=5).map(|l| record(l, 2f64.powi(-(l as i32)), 3.0 * 2f64.powi(-3 * l as i32), 1e3)).collect();
        assert!((fit_rate(&recs, None).unwrap() - 3.0).abs() < 1e-12);
        let mut flagged = recs.clone();
        flagged[4].rel_l2 = 1.0;
        flagged[4].cond = 1e16;
        assert!((fit_rate(&flagged, Some(3)).unwrap() - 3.0).abs() < 1e-12);
        assert_eq!(fit_rate(&recs[..1], None), None);
    }

    #[test]
    fn csv_round_trip() {
        assert_eq!(
            records_to_csv(&[], false).unwrap(),
            "level,h,ndof,c_over_h,rel_l2,dg_err,cond,assemble_s,solve_s\n"
        );
        let mut recs = vec![record(1, 1.41, 0.3, 12.5), record(2, 0.705, 0.0375, 1e9)];
        recs[1].dg_err = None;
        let text = records_to_csv(&recs, false).unwrap();
        assert_eq!(parse_csv(&text).unwrap(), recs);
        let zeroed = parse_csv(&records_to_csv(&recs, true).unwrap()).unwrap();
        assert!(zeroed.iter().all(|r| r.assemble_s == 0.0 && r.solve_s == 0.0));
    }

    #[test]
    fn plotted_slope() {
        let recs = vec![record(1, 1.0, 0.8, 1.0), record(2, 0.5, 0.1, 1.0)];
        let s = PlotSeries::from_records("a", &recs);
        let slope = (s.points[1].1.ln() - s.points[0].1.ln()) / (s.points[1].0.ln() - s.points[0].0.ln());
        assert!((slope + 3.0).abs() < 1e-12);
        let svg = render_svg("t", &[s]);
        assert!(svg.starts_with("<svg") && svg.trim_end().ends_with("</svg>"));
        assert_eq!(svg.matches("<polyline").count(), 1);
        assert_eq!(svg.matches("stroke-dasharray").count(), 4);
        assert!(render_svg("empty", &[]).contains("</svg>"));
    }

    #[test]
    fn presets_exist() {
        for name in PRESET_NAMES {
            let p = preset(name).unwrap();
            assert!(!p.runs.is_empty());
            assert!(p.runs.iter().all(|r| r.validate().is_ok()));
        }
        assert_eq!(preset("airy-gh3").unwrap().runs.len(), 16);
        assert_eq!(preset("weber-gh3").unwrap().runs[0].levels, 6);
        assert!(preset("nope").is_none());
    }

    #[test]
    fn plane_wave_is_reproduced() {
        let config = RunConfig {
            label: "pw".into(),
            problem: ProblemKind::Constant,
            kappa: 10.0,
            n: 1,
            q: 1,
            levels: 2,
            ..Default::default()
        };
        let result = run_convergence(&config).unwrap();
        for r in &result.records {
            assert!(r.rel_l2 <= 1e-8, "{r:?}");
            assert!((r.c_over_h - (r.ndof as f64 / 3.0).sqrt()).abs() < 1e-12);
        }
    }

    #[test]
    fn zero_coefficients_give_unit_error() {
        let config = RunConfig { levels: 1, ..Default::default() };
        let exact = make_exact(config.exact_problem()).unwrap();
        let mesh = config.initial_mesh().unwrap();
        let bases = build_bases(&mesh, &config, &exact).unwrap();
        let zeros = vec![Complex64::new(0.0, 0.0); mesh.num_elements() * config.p()];
        let e = compute_l2_error(&mesh, &zeros, &bases, &exact, QuadratureOrders::default()).unwrap();
        assert!((e.rel - 1.0).abs() < 1e-14);
    }

    #[test]
    fn emits_files() {
        let dir = tempfile::tempdir().unwrap();
        let result = ConvergenceResult {
            config: RunConfig { label: "demo".into(), deterministic: true, ..Default::default() },
            records: vec![record(1, 1.0, 0.5, 10.0)],
            rate: None,
        };
        let (csv_path, svg_path) = emit_outputs(&result, dir.path()).unwrap();
        let text = fs::read_to_string(csv_path).unwrap();
        assert!(text.lines().nth(1).unwrap().ends_with(",0.0,0.0"));
        assert!(fs::read_to_string(svg_path).unwrap().contains("demo"));
    }
}
