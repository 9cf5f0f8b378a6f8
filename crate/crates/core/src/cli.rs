//! Batch driver behind the `implab` binary.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use anyhow::Context;
use clap::{Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::Deserialize;

use crate::cplx_core::{c, dist2, from_exact, Point, C64};
use crate::error::Error;
use crate::family::{estimate_q_beta, fixed_points, validate_family, Cx, FamilyJson, GermFamily};
use crate::fatou::{BasinOutcome, EngineConfig, FatouEngine, Orientation};
use crate::implosion::{default_compact, lavaurs_targets, convergence_error_with, orbit_trace, Implosion};
use crate::lavaurs::LavaursMap;
use crate::normal_form::{characteristic_directions, straighten, RawFamily, RawFamilyJson};

#[derive(Parser, Debug)]
#[command(name = "implab", version, about = "Parabolic implosion experiments")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// Experiment configuration (JSON).
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    pub out: PathBuf,
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Subcommand, Debug, Clone, Copy, PartialEq, Eq)]
pub enum Command {
    Validate,
    FixedPoints,
    Fatou,
    Lavaurs,
    Implode,
    Trace,
    Curve,
    Render {
        #[arg(value_enum)]
        mode: Option<RenderMode>,
    },
}

#[derive(ValueEnum, Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum RenderMode {
    Basin,
    Convergence,
    FatouPhase,
}

fn default_domain() -> f64 {
    0.5
}

fn default_seed() -> u64 {
    7
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub family: FamilyJson,
    #[serde(default = "default_domain")]
    pub domain_radius: f64,
    #[serde(default = "default_seed")]
    pub seed: u64,
    #[serde(default)]
    pub fixed_points: FixedPointsCfg,
    #[serde(default)]
    pub fatou: FatouCfg,
    #[serde(default)]
    pub lavaurs: LavaursCfg,
    #[serde(default)]
    pub implode: ImplodeCfg,
    #[serde(default)]
    pub trace: TraceCfg,
    #[serde(default)]
    pub curve: CurveCfg,
    #[serde(default)]
    pub render: RenderCfg,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FixedPointsCfg {
    pub eps: Vec<f64>,
    pub grid: Vec<f64>,
}

impl Default for FixedPointsCfg {
    fn default() -> Self {
        FixedPointsCfg { eps: vec![0.1, 0.05, 0.01], grid: crate::implosion::SIGMA0_GRID.to_vec() }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct FatouCfg {
    pub samples: usize,
    pub level: f64,
}

impl Default for FatouCfg {
    fn default() -> Self {
        FatouCfg { samples: 100, level: 2.0 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LavaursCfg {
    pub sigma: Cx,
    pub samples: usize,
    pub y_max: f64,
}

impl Default for LavaursCfg {
    fn default() -> Self {
        LavaursCfg { sigma: Cx { re: 0.0, im: 0.0 }, samples: 50, y_max: 1e-6 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImplodeCfg {
    pub sigma: Cx,
    pub ladder: Vec<u64>,
    pub shift: u64,
    pub samples: usize,
    pub y_max: f64,
}

impl Default for ImplodeCfg {
    fn default() -> Self {
        ImplodeCfg { sigma: Cx { re: 0.0, im: 0.0 }, ladder: vec![50, 100, 200, 400, 800], shift: 0, samples: 20, y_max: 1e-6 }
    }
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TraceCfg {
    pub sigma: Cx,
    pub n: u64,
    pub shift: u64,
    pub x: Cx,
    pub y: Cx,
}

impl Default for TraceCfg {
    fn default() -> Self {
        TraceCfg {
            sigma: Cx { re: 0.0, im: 0.0 },
            n: 400,
            shift: 0,
            x: Cx { re: -0.04, im: 0.03 },
            y: Cx { re: 1e-7, im: 0.0 },
        }
    }
}

#[derive(Debug, Clone, Default, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct CurveCfg {
    /// Germ increments; defaults to the family at `ε = 0`.
    pub germ: Option<RawFamilyJson>,
}

#[derive(Debug, Clone, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RenderCfg {
    pub mode: RenderMode,
    /// `[x_re_min, x_re_max, x_im_min, x_im_max]`.
    pub window: [f64; 4],
    pub width: usize,
    pub height: usize,
    pub slice_y: Cx,
    pub budget: usize,
    pub n: u64,
    pub sigma: Cx,
    pub shift: u64,
}

impl Default for RenderCfg {
    fn default() -> Self {
        RenderCfg {
            mode: RenderMode::Basin,
            window: [-0.3, 0.1, -0.2, 0.2],
            width: 128,
            height: 128,
            slice_y: Cx { re: 1e-6, im: 0.0 },
            budget: 5000,
            n: 200,
            sigma: Cx { re: 0.0, im: 0.0 },
            shift: 0,
        }
    }
}

/// Failure classes mapped to exit codes.
#[derive(Debug)]
pub enum CliError {
    Parse(anyhow::Error),
    Hypothesis(String),
    Numerical(String),
    Io(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Parse(_) => 2,
            CliError::Hypothesis(_) => 3,
            CliError::Numerical(_) => 4,
            CliError::Io(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Parse(e) => write!(f, "config error: {e:#}"),
            CliError::Hypothesis(s) => write!(f, "hypothesis violated: {s}"),
            CliError::Numerical(s) => write!(f, "numerical failure: {s}"),
            CliError::Io(e) => write!(f, "i/o error: {e:#}"),
        }
    }
}

fn classify(e: Error) -> CliError {
    match e {
        Error::Invalid(_) | Error::NotCharacteristic(_) | Error::DegenerateSplitting(_) | Error::ResonanceObstruction { .. } => {
            CliError::Hypothesis(e.to_string())
        }
        _ => CliError::Numerical(e.to_string()),
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

pub fn load_config(path: &Path) -> CliResult<ExperimentConfig> {
    let text = fs::read_to_string(path).with_context(|| format!("reading {}", path.display())).map_err(CliError::Parse)?;
    parse_config(&text)
}

pub fn parse_config(text: &str) -> CliResult<ExperimentConfig> {
    let cfg: ExperimentConfig = serde_json::from_str(text).context("parsing config").map_err(CliError::Parse)?;
    if !(cfg.domain_radius > 0.0 && cfg.domain_radius.is_finite()) {
        return Err(CliError::Parse(anyhow::anyhow!("domain_radius must be positive")));
    }
    Ok(cfg)
}

/// `17` significant digits.
pub fn fmt_f(v: f64) -> String {
    format!("{v:.16e}")
}

/// Writes a file via a temporary sibling and rename.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    fs::create_dir_all(dir)?;
    let mut tmp = tempfile::NamedTempFile::new_in(dir)?;
    tmp.write_all(bytes)?;
    tmp.flush()?;
    tmp.persist(path)?;
    Ok(())
}

/// Buffered CSV table written atomically.
pub struct Table {
    header: Vec<String>,
    rows: Vec<Vec<String>>,
}

impl Table {
    pub fn new(header: &[&str]) -> Self {
        Table { header: header.iter().map(|s| s.to_string()).collect(), rows: Vec::new() }
    }

    pub fn push(&mut self, row: Vec<String>) {
        self.rows.push(row);
    }

    pub fn to_bytes(&self) -> anyhow::Result<Vec<u8>> {
        let mut w = csv::WriterBuilder::new().terminator(csv::Terminator::Any(b'\n')).from_writer(Vec::new());
        w.write_record(&self.header)?;
        for r in &self.rows {
            w.write_record(r)?;
        }
        Ok(w.into_inner()?)
    }

    pub fn write(&self, path: &Path) -> CliResult<()> {
        let bytes = self.to_bytes().map_err(CliError::Io)?;
        write_atomic(path, &bytes).map_err(CliError::Io)
    }
}

fn cx(v: C64) -> [String; 2] {
    [fmt_f(v.re), fmt_f(v.im)]
}

fn point_cols(z: &Point) -> Vec<String> {
    let mut out = Vec::with_capacity(4);
    out.extend(cx(z[0]));
    out.extend(cx(z[1]));
    out
}

fn log(stage: &str, msg: &str) {
    eprintln!("[{stage}] {msg}");
}

struct Ctx {
    cfg: ExperimentConfig,
    family: GermFamily,
    out: PathBuf,
}

impl Ctx {
    fn engine_config(&self) -> EngineConfig {
        EngineConfig { domain: self.cfg.domain_radius, ..EngineConfig::default() }
    }

    fn path(&self, name: &str) -> PathBuf {
        self.out.join(name)
    }
}

/// Runs one subcommand; returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    if let Some(n) = cli.threads {
        // A second initialisation in the same process is harmless.
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n.max(1)).build_global();
    }
    match run_inner(cli) {
        Ok(()) => 0,
        Err(e) => {
            eprintln!("implab: {e}");
            e.exit_code()
        }
    }
}

fn run_inner(cli: &Cli) -> CliResult<()> {
    let path = cli.config.as_ref().ok_or_else(|| CliError::Parse(anyhow::anyhow!("--config is required")))?;
    let cfg = load_config(path)?;
    let family = GermFamily::from_spec(&cfg.family).map_err(|e| CliError::Parse(e.into()))?;
    let ctx = Ctx { cfg, family, out: cli.out.clone() };
    fs::create_dir_all(&ctx.out).context("creating output directory").map_err(CliError::Io)?;
    let report = validate_family(&ctx.family);
    if cli.command == Command::Validate {
        return cmd_validate(&ctx, &report);
    }
    if !report.passed() {
        let failed: Vec<&str> = report.rows.iter().filter(|r| !r.pass).map(|r| r.name).collect();
        return Err(CliError::Hypothesis(failed.join(", ")));
    }
    match cli.command {
        Command::Validate => unreachable!(),
        Command::FixedPoints => cmd_fixed_points(&ctx),
        Command::Fatou => cmd_fatou(&ctx),
        Command::Lavaurs => cmd_lavaurs(&ctx),
        Command::Implode => cmd_implode(&ctx),
        Command::Trace => cmd_trace(&ctx),
        Command::Curve => cmd_curve(&ctx),
        Command::Render { mode } => cmd_render(&ctx, mode.unwrap_or(ctx.cfg.render.mode)),
    }
}

fn cmd_validate(ctx: &Ctx, report: &crate::family::ValidationReport) -> CliResult<()> {
    let mut t = Table::new(&["check", "status", "detail"]);
    for r in &report.rows {
        t.push(vec![r.name.to_string(), if r.pass { "PASS" } else { "FAIL" }.to_string(), r.detail.clone()]);
    }
    for w in &report.warnings {
        t.push(vec!["warning".into(), "WARN".into(), w.clone()]);
    }
    t.write(&ctx.path("validate.csv"))?;
    log("validate", &format!("{} checks, passed: {}", report.rows.len(), report.passed()));
    if report.passed() {
        Ok(())
    } else {
        Err(CliError::Hypothesis("validation failed".into()))
    }
}

fn cmd_fixed_points(ctx: &Ctx) -> CliResult<()> {
    let mut t = Table::new(&["eps", "x_re", "x_im", "y_re", "y_im", "rho_t_re", "rho_t_im", "rho_n_re", "rho_n_im"]);
    for &e in &ctx.cfg.fixed_points.eps {
        let recs = fixed_points(&ctx.family, c(e, 0.0), ctx.cfg.domain_radius).map_err(classify)?;
        for r in recs {
            let mut row = vec![fmt_f(e)];
            row.extend(point_cols(&r.location));
            row.extend(cx(r.rho_t));
            row.extend(cx(r.rho_n));
            t.push(row);
        }
    }
    t.write(&ctx.path("fixed_points.csv"))?;
    let est = estimate_q_beta(&ctx.family, &ctx.cfg.fixed_points.grid).map_err(classify)?;
    let mut s = Table::new(&["quantity", "re", "im"]);
    for (name, v) in [("q", est.q), ("beta", est.beta), ("sigma0", est.sigma0)] {
        let [re, im] = cx(v);
        s.push(vec![name.into(), re, im]);
    }
    s.write(&ctx.path("q_beta.csv"))?;
    log("fixed-points", &format!("q = {}, sigma0 = {}", est.q, est.sigma0));
    Ok(())
}

fn cmd_fatou(ctx: &Ctx) -> CliResult<()> {
    let e = FatouEngine::new(&ctx.family, ctx.engine_config()).map_err(classify)?;
    log("fatou", &format!("r_in = {}, r_out = {}", e.r_in, e.r_out));
    let fc = &ctx.cfg.fatou;
    let mut t = Table::new(&[
        "index", "orientation", "x_re", "x_im", "y_re", "y_im", "X_re", "X_im", "Y_re", "Y_im", "abel_residual", "error",
    ]);
    let mut failures = 0;
    for (orientation, label, seed) in [(Orientation::Incoming, "incoming", ctx.cfg.seed), (Orientation::Outgoing, "outgoing", ctx.cfg.seed + 1)] {
        let pts = e.petal_samples(orientation, fc.level, fc.samples, seed);
        let rows: Vec<_> = pts
            .par_iter()
            .map(|&z| -> crate::Result<(Point, f64)> {
                let a = e.fatou(orientation, z)?;
                let b = e.fatou(orientation, e.step(z))?;
                Ok((a, dist2(&b, &[a[0] + 1.0, a[1]])))
            })
            .collect();
        for (i, (z, r)) in pts.iter().zip(rows).enumerate() {
            let mut row = vec![i.to_string(), label.to_string()];
            row.extend(point_cols(z));
            match r {
                Ok((xy, res)) => {
                    row.extend(point_cols(&xy));
                    row.push(fmt_f(res));
                    row.push(String::new());
                }
                Err(err) => {
                    failures += 1;
                    row.extend(std::iter::repeat(String::new()).take(5));
                    row.push(err.to_string());
                }
            }
            t.push(row);
        }
    }
    t.write(&ctx.path("fatou.csv"))?;
    if failures > 0 {
        return Err(CliError::Numerical(format!("{failures} Fatou evaluations failed")));
    }
    Ok(())
}

fn cmd_lavaurs(ctx: &Ctx) -> CliResult<()> {
    let im = Implosion::new(&ctx.family, ctx.engine_config()).map_err(classify)?;
    let lc = &ctx.cfg.lavaurs;
    let sigma: C64 = lc.sigma.into();
    let l = LavaursMap::new(&im.engine, sigma, im.q);
    let next = l.with_sigma(sigma + 1.0);
    let pts = default_compact(lc.samples, lc.y_max, ctx.cfg.seed);
    let rows: Vec<_> = pts
        .par_iter()
        .map(|&z| -> crate::Result<(Point, f64, f64)> {
            let lz = l.eval(z)?;
            let glz = im.engine.step(lz);
            let lgz = l.eval(im.engine.step(z))?;
            let l1 = next.eval(z)?;
            Ok((lz, dist2(&glz, &lgz), dist2(&glz, &l1)))
        })
        .collect();
    let mut t = Table::new(&["index", "x_re", "x_im", "y_re", "y_im", "Lx_re", "Lx_im", "Ly_re", "Ly_im", "commute", "shift", "error"]);
    let mut failures = 0;
    for (i, (z, r)) in pts.iter().zip(rows).enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(point_cols(z));
        match r {
            Ok((lz, a, b)) => {
                row.extend(point_cols(&lz));
                row.extend([fmt_f(a), fmt_f(b), String::new()]);
            }
            Err(e) => {
                failures += 1;
                row.extend(std::iter::repeat(String::new()).take(6));
                row.push(e.to_string());
            }
        }
        t.push(row);
    }
    t.write(&ctx.path("lavaurs.csv"))?;
    if failures > 0 {
        return Err(CliError::Numerical(format!("{failures} Lavaurs evaluations failed")));
    }
    Ok(())
}

fn samples_table(pts: &[Point]) -> Table {
    let mut t = Table::new(&["index", "x_re", "x_im", "y_re", "y_im"]);
    for (i, z) in pts.iter().enumerate() {
        let mut row = vec![i.to_string()];
        row.extend(point_cols(z));
        t.push(row);
    }
    t
}

fn cmd_implode(ctx: &Ctx) -> CliResult<()> {
    let im = Implosion::new(&ctx.family, ctx.engine_config()).map_err(classify)?;
    let ic = &ctx.cfg.implode;
    let k = default_compact(ic.samples, ic.y_max, ctx.cfg.seed);
    samples_table(&k).write(&ctx.path("implode_samples.csv"))?;
    let targets = lavaurs_targets(&im, ic.sigma.into(), &k, ic.shift);
    let bad = targets.values.iter().filter(|v| v.is_err()).count();
    let mut t = Table::new(&["n", "eps_re", "eps_im", "error", "failures"]);
    let mut total_fail = bad;
    for &n in &ic.ladder {
        let r = convergence_error_with(&im, &targets, n);
        log("implode", &format!("n = {n}: E = {:e} ({} failures)", r.error, r.failures.len()));
        let mut row = vec![n.to_string()];
        row.extend(cx(r.eps));
        row.push(fmt_f(r.error));
        row.push(r.failures.len().to_string());
        t.push(row);
        total_fail = total_fail.max(r.failures.len());
    }
    t.write(&ctx.path("implode.csv"))?;
    if total_fail == k.len() && !k.is_empty() {
        return Err(CliError::Numerical("every sample point failed".into()));
    }
    Ok(())
}

fn cmd_trace(ctx: &Ctx) -> CliResult<()> {
    let im = Implosion::new(&ctx.family, ctx.engine_config()).map_err(classify)?;
    let tc = &ctx.cfg.trace;
    let z = [tc.x.into(), tc.y.into()];
    let tr = orbit_trace(&im, tc.sigma.into(), tc.n, z, tc.shift).map_err(classify)?;
    let mut t = Table::new(&["step", "x_re", "x_im", "y_re", "y_im", "phase", "residual_channel", "residual_value"]);
    for r in tr.rows() {
        let phase = match r.phase {
            crate::implosion::Phase::Approach => "approach",
            crate::implosion::Phase::Transit => "transit",
            crate::implosion::Phase::Exit => "exit",
        };
        t.push(vec![
            r.step.to_string(),
            fmt_f(r.x_re),
            fmt_f(r.x_im),
            fmt_f(r.y_re),
            fmt_f(r.y_im),
            phase.into(),
            r.residual_channel,
            r.residual_value.map(fmt_f).unwrap_or_default(),
        ]);
    }
    t.write(&ctx.path("trace.csv"))?;
    log("trace", &format!("k_n = {}, region at k_n: {}", tr.k_n, tr.in_region_kn));
    Ok(())
}

fn cmd_curve(ctx: &Ctx) -> CliResult<()> {
    let germ = match &ctx.cfg.curve.germ {
        Some(spec) => RawFamily::from_spec(spec).map_err(|e| CliError::Parse(e.into()))?.at_zero(),
        None => RawFamily::from(&ctx.family).at_zero(),
    };
    let q2 = germ.quadratic().map_err(classify)?;
    let set = characteristic_directions(&q2);
    let mut dt = Table::new(&["v0_re", "v0_im", "v1_re", "v1_im", "lambda_re", "lambda_im", "nondegenerate", "alpha_re", "alpha_im"]);
    for d in &set.directions {
        let mut row = point_cols(&d.v);
        row.extend(cx(d.lambda));
        row.push(d.nondegenerate.to_string());
        match d.alpha {
            Some(a) => row.extend(cx(a)),
            None => row.extend([String::new(), String::new()]),
        }
        dt.push(row);
    }
    dt.write(&ctx.path("directions.csv"))?;
    let dir = set
        .directions
        .iter()
        .filter(|d| d.nondegenerate)
        .max_by(|a, b| a.alpha.unwrap().re.partial_cmp(&b.alpha.unwrap().re).unwrap())
        .ok_or_else(|| CliError::Hypothesis("no nondegenerate characteristic direction".into()))?;
    let st = straighten(&germ, dir).map_err(classify)?;
    let curve = &st.curve;
    let order = curve.order;
    let mut t = Table::new(&["k", "zeta_re", "zeta_im", "h_re", "h_im", "zeta_exact"]);
    for k in 0..=order + 1 {
        let z = from_exact(&curve.zeta.coeff(k));
        let h = from_exact(&curve.h.coeff(k));
        let mut row = vec![k.to_string()];
        row.extend(cx(z));
        row.extend(cx(h));
        let q = curve.zeta.coeff(k);
        row.push(format!("{} + ({})i", q.re, q.im));
        t.push(row);
    }
    t.write(&ctx.path("curve.csv"))?;
    log("curve", &format!("eta = {}, m = {}, {} transform steps", st.eta, st.m_eta, st.record.steps.len()));
    Ok(())
}

/// PPM image with a comment line describing the colour map.
pub fn ppm(width: usize, height: usize, comment: &str, pixels: &[[u8; 3]]) -> Vec<u8> {
    let mut out = format!("P6\n# {comment}\n{width} {height}\n255\n").into_bytes();
    for p in pixels {
        out.extend_from_slice(p);
    }
    out
}

fn ramp(t: f64) -> [u8; 3] {
    let t = t.clamp(0.0, 1.0);
    [(255.0 * t) as u8, (255.0 * (1.0 - (2.0 * t - 1.0).abs())) as u8, (255.0 * (1.0 - t)) as u8]
}

fn hue(arg: f64) -> [u8; 3] {
    let h = (arg / std::f64::consts::TAU).rem_euclid(1.0) * 6.0;
    let x = 1.0 - (h % 2.0 - 1.0).abs();
    let (r, g, b) = match h as u32 {
        0 => (1.0, x, 0.0),
        1 => (x, 1.0, 0.0),
        2 => (0.0, 1.0, x),
        3 => (0.0, x, 1.0),
        4 => (x, 0.0, 1.0),
        _ => (1.0, 0.0, x),
    };
    [(255.0 * r) as u8, (255.0 * g) as u8, (255.0 * b) as u8]
}

/// Pixel centres, row-major from the top-left corner.
pub fn grid_points(window: [f64; 4], width: usize, height: usize, y: C64) -> Vec<Point> {
    let [x0, x1, i0, i1] = window;
    (0..height)
        .flat_map(|r| {
            (0..width).map(move |col| {
                let re = x0 + (x1 - x0) * (col as f64 + 0.5) / width as f64;
                let im = i1 - (i1 - i0) * (r as f64 + 0.5) / height as f64;
                [c(re, im), y]
            })
        })
        .collect()
}

pub const UNKNOWN_COLOR: [u8; 3] = [255, 0, 0];
pub const ESCAPED_COLOR: [u8; 3] = [0, 0, 0];

/// Basin classification colours: inside shades blue→white with the entry
/// index, escaped is black, unknown is red.
pub fn basin_color(o: &BasinOutcome, budget: usize) -> [u8; 3] {
    match o {
        BasinOutcome::Inside { n0, .. } => {
            let t = ((*n0 as f64 + 1.0).ln() / (budget as f64 + 1.0).ln()).clamp(0.0, 1.0);
            let v = (255.0 * t) as u8;
            [v, v, 255]
        }
        BasinOutcome::Escaped { .. } => ESCAPED_COLOR,
        BasinOutcome::Unknown => UNKNOWN_COLOR,
    }
}

fn cmd_render(ctx: &Ctx, mode: RenderMode) -> CliResult<()> {
    let rc = &ctx.cfg.render;
    if rc.width == 0 || rc.height == 0 || rc.width * rc.height > 8192 * 8192 {
        return Err(CliError::Parse(anyhow::anyhow!("resolution must be between 1x1 and 8192x8192")));
    }
    if !(rc.window[1] > rc.window[0] && rc.window[3] > rc.window[2]) {
        return Err(CliError::Parse(anyhow::anyhow!("render window is degenerate")));
    }
    let pts = grid_points(rc.window, rc.width, rc.height, rc.slice_y.into());
    let (pixels, unknown, comment, name) = match mode {
        RenderMode::Basin => {
            let e = FatouEngine::new(&ctx.family, ctx.engine_config()).map_err(classify)?;
            let out: Vec<BasinOutcome> = pts.par_iter().map(|&z| e.basin_membership(z, rc.budget)).collect();
            let unknown = out.iter().filter(|o| matches!(o, BasinOutcome::Unknown)).count();
            let px = out.iter().map(|o| basin_color(o, rc.budget)).collect::<Vec<_>>();
            (px, unknown, "basin: inside blue->white by log entry index, escaped black, unknown red".to_string(), "render_basin.ppm")
        }
        RenderMode::FatouPhase => {
            let e = FatouEngine::new(&ctx.family, ctx.engine_config()).map_err(classify)?;
            let out: Vec<Option<C64>> = pts.par_iter().map(|&z| e.incoming_fatou(z).ok().map(|v| v[0])).collect();
            let unknown = out.iter().filter(|o| o.is_none()).count();
            let px = out.iter().map(|o| o.map(|w| hue(std::f64::consts::TAU * w.re)).unwrap_or(ESCAPED_COLOR)).collect();
            (px, unknown, "fatou-phase: hue = 2*pi*Re w_in mod 2*pi, black where undefined".to_string(), "render_fatou_phase.ppm")
        }
        RenderMode::Convergence => {
            let im = Implosion::new(&ctx.family, ctx.engine_config()).map_err(classify)?;
            let targets = lavaurs_targets(&im, rc.sigma.into(), &pts, rc.shift);
            let r = convergence_error_with(&im, &targets, rc.n);
            let unknown = r.failures.len();
            let px = r
                .per_point
                .iter()
                .map(|v| match v {
                    Some(err) => ramp((err.max(1e-16).log10() + 12.0) / 12.0),
                    None => ESCAPED_COLOR,
                })
                .collect();
            (px, unknown, "convergence: log10 error on [-12, 0] blue->green->red, black where undefined".to_string(), "render_convergence.ppm")
        }
    };
    let bytes = ppm(rc.width, rc.height, &comment, &pixels);
    write_atomic(&ctx.path(name), &bytes).map_err(CliError::Io)?;
    log("render", &format!("{}x{} pixels, {unknown} unresolved", rc.width, rc.height));
    if mode == RenderMode::Basin && unknown * 5 > pts.len() {
        return Err(CliError::Numerical(format!("{unknown} of {} pixels exhausted the budget", pts.len())));
    }
    Ok(())
}

/// Entry point for the binary.
pub fn main_from_args() -> i32 {
    match Cli::try_parse() {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
