//! Command-line driver: configuration, experiment execution and artifacts.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::{Deserialize, Serialize};
use serde_json::json;

use crate::error::Error;
use crate::estimator::{
    avalanche_tails, first_wave_vs_tree, fit_exponent, lerw_exponents, past_tails, zero_tree_tails, ExponentFit,
    FitWindows, SurvivalCurve, TailGrids, DEFAULT_MIN_EXCEED, DEFAULT_WALK_FACTOR, MAX_CENSORING,
};
use crate::greens::dhar_check;
use crate::lattice::{Domain, Point};
use crate::oracle::{shipped_instances, verify_all, verify_bijection};

pub const ENV_OUTPUT_DIR: &str = "USTPILE_OUTPUT_DIR";
pub const DEFAULT_OUTPUT_DIR: &str = "ustpile-out";
pub const MANIFEST_VERSION: u32 = 1;

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_VALIDATION: i32 = 3;
pub const EXIT_RESOURCE: i32 = 4;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize, ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum Experiment {
    VerifyOracle,
    VerifyBijection,
    DharCheck,
    Alpha,
    Beta,
    PastTails,
    ZeroTreeTails,
    AvalancheTails,
    FirstWaveRatio,
}

impl Experiment {
    pub fn name(&self) -> &'static str {
        match self {
            Experiment::VerifyOracle => "verify-oracle",
            Experiment::VerifyBijection => "verify-bijection",
            Experiment::DharCheck => "dhar-check",
            Experiment::Alpha => "alpha",
            Experiment::Beta => "beta",
            Experiment::PastTails => "past-tails",
            Experiment::ZeroTreeTails => "zero-tree-tails",
            Experiment::AvalancheTails => "avalanche-tails",
            Experiment::FirstWaveRatio => "first-wave-ratio",
        }
    }
}

fn default_dimension() -> usize {
    3
}
fn default_box_radius() -> u32 {
    32
}
fn default_reps() -> u64 {
    10_000
}
fn default_workers() -> usize {
    1
}
fn default_walk_factor() -> u32 {
    DEFAULT_WALK_FACTOR
}
fn default_memory_limit() -> u64 {
    4096
}

/// Everything needed to rerun an experiment bit-identically.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub experiment: Experiment,
    #[serde(default = "default_dimension")]
    pub dimension: usize,
    #[serde(default = "default_box_radius")]
    pub box_radius: u32,
    /// Empty means the experiment's default grid.
    #[serde(default)]
    pub thresholds: Vec<u64>,
    #[serde(default = "default_reps")]
    pub reps: u64,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_workers")]
    pub workers: usize,
    /// Unset means `$USTPILE_OUTPUT_DIR`, then `ustpile-out`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    /// Loop-erased walks run to `∂B_{walk_factor · R}` (alpha, beta).
    #[serde(default = "default_walk_factor")]
    pub walk_factor: u32,
    #[serde(default = "default_memory_limit")]
    pub memory_limit_mb: u64,
}

impl RunConfig {
    pub fn defaults(experiment: Experiment) -> Self {
        RunConfig {
            experiment,
            dimension: default_dimension(),
            box_radius: default_box_radius(),
            thresholds: Vec::new(),
            reps: default_reps(),
            seed: 0,
            workers: default_workers(),
            output_dir: None,
            walk_factor: default_walk_factor(),
            memory_limit_mb: default_memory_limit(),
        }
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn from_toml(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn validate(&self) -> Result<(), CliError> {
        let bad = |m: String| Err(CliError::Config(m));
        if self.reps == 0 {
            return bad("reps must be positive".into());
        }
        if self.workers == 0 {
            return bad("workers must be positive".into());
        }
        if self.thresholds.windows(2).any(|w| w[0] >= w[1]) {
            return bad("thresholds must be strictly ascending".into());
        }
        match self.experiment {
            Experiment::DharCheck => {
                if !(1..=4).contains(&self.dimension) {
                    return bad(format!("dimension {} not in 1..=4", self.dimension));
                }
            }
            _ if self.dimension != 3 => return bad(format!("{} runs in dimension 3 only", self.experiment.name())),
            _ => {}
        }
        if matches!(self.experiment, Experiment::Alpha | Experiment::Beta) {
            if self.walk_factor < 4 {
                return bad("walk_factor must be at least 4".into());
            }
            if self.thresholds.first() == Some(&0) {
                return bad("radii must be positive".into());
            }
        }
        if self.box_radius == 0 && !matches!(self.experiment, Experiment::VerifyOracle | Experiment::VerifyBijection) {
            return bad("box_radius must be positive".into());
        }
        Ok(())
    }

    /// Output directory after applying the environment default.
    pub fn resolved_output_dir(&self) -> PathBuf {
        self.output_dir
            .clone()
            .or_else(|| std::env::var_os(ENV_OUTPUT_DIR).map(PathBuf::from))
            .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
    }

    /// Rough peak memory in MiB.
    pub fn memory_estimate_mb(&self) -> u64 {
        let side = 2 * self.box_radius as u64 + 3;
        let slots = side.pow(3);
        let w = self.workers as u64;
        let bytes = match self.experiment {
            Experiment::PastTails | Experiment::ZeroTreeTails => 16 * slots * w,
            Experiment::AvalancheTails | Experiment::DharCheck => 24 * slots * w,
            Experiment::FirstWaveRatio => 24 * slots * w,
            Experiment::Alpha | Experiment::Beta => {
                let r = self.radii().last().copied().unwrap_or(0);
                4 * (2 * r + 1).pow(3) * w
            }
            Experiment::VerifyOracle | Experiment::VerifyBijection => 1 << 28,
        };
        bytes >> 20
    }

    fn radii(&self) -> Vec<u64> {
        if self.thresholds.is_empty() {
            vec![8, 16, 32, 64]
        } else {
            self.thresholds.clone()
        }
    }
}

/// Reads a TOML run configuration. Unknown keys are errors.
pub fn config_from_file(path: &Path) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(path).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
    RunConfig::from_toml(&text)
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("validation failure: {0}")]
    Validation(String),
    #[error("resource limit: {0}")]
    Resource(String),
    #[error("{0}")]
    Other(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => EXIT_CONFIG,
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Resource(_) => EXIT_RESOURCE,
            CliError::Other(_) => EXIT_FAILURE,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Config(_) => "config",
            CliError::Validation(_) => "validation",
            CliError::Resource(_) => "resource",
            CliError::Other(_) => "error",
        }
    }

    pub fn report(&self) -> serde_json::Value {
        json!({"status": "failed", "kind": self.kind(), "exit_code": self.exit_code(), "message": self.to_string()})
    }
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        match e {
            Error::ResourceLimit(m) | Error::InstanceTooLarge(m) => CliError::Resource(m),
            Error::Validation(m) => CliError::Validation(m),
            Error::Precondition(m) => CliError::Config(m),
            other => CliError::Other(other.to_string()),
        }
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.to_string())
    }
}

/// Files produced by one experiment, before they are written.
#[derive(Default)]
struct Artifacts {
    curves: Vec<(String, SurvivalCurve)>,
    tables: Vec<(String, String)>,
    fits: serde_json::Map<String, serde_json::Value>,
    report: serde_json::Value,
    censoring: serde_json::Map<String, serde_json::Value>,
    failure: Option<CliError>,
}

impl Artifacts {
    fn fit(&mut self, name: &str, fit: crate::Result<ExponentFit>) {
        let v = match fit {
            Ok(f) => serde_json::to_value(f).expect("fit serializes"),
            Err(e) => json!({"error": e.to_string()}),
        };
        self.fits.insert(name.to_string(), v);
    }

    fn censor_check(&mut self, name: &str, c: &SurvivalCurve, window: (u64, u64)) {
        let f = c.censoring_fraction(window.0, window.1);
        self.censoring.insert(name.to_string(), json!({"window": [window.0, window.1], "fraction": f}));
        if let Err(e) = c.check_censoring(name, window.0, window.1, MAX_CENSORING) {
            self.failure.get_or_insert(e.into());
        }
    }
}

fn manifest(cfg: &RunConfig, status: &str, art: Option<&Artifacts>, files: &[String]) -> serde_json::Value {
    let mut m = json!({
        "manifest_version": MANIFEST_VERSION,
        "tool": "ustpile",
        "code_version": env!("CARGO_PKG_VERSION"),
        "status": status,
        "config": cfg,
        "files": files,
    });
    if let Some(a) = art {
        m["censoring"] = serde_json::Value::Object(a.censoring.clone());
        if let Some(f) = &a.failure {
            m["failure"] = f.report();
        }
    }
    m
}

fn write_json(path: &Path, v: &serde_json::Value) -> Result<(), CliError> {
    fs::write(path, serde_json::to_string_pretty(v).expect("json") + "\n")?;
    Ok(())
}

fn plot_script(curves: &[(String, SurvivalCurve)]) -> String {
    let mut s = String::from("# gnuplot script; run from the artifact directory\n");
    s.push_str("set datafile separator ','\nset logscale xy\nset xlabel 'threshold'\nset ylabel 'exceedance frequency'\n");
    s.push_str("set terminal svg\nset output 'curves.svg'\n");
    let plots: Vec<String> = curves
        .iter()
        .map(|(name, _)| format!("'{name}.csv' skip 2 using 1:($2/($3-$4)) with linespoints title '{name}'"))
        .collect();
    let _ = writeln!(s, "plot {}", plots.join(", \\\n     "));
    s
}

/// Runs one experiment and writes its artifacts. Returns the final manifest.
pub fn run(cfg: &RunConfig) -> Result<serde_json::Value, CliError> {
    cfg.validate()?;
    let need = cfg.memory_estimate_mb();
    if need > cfg.memory_limit_mb {
        return Err(CliError::Resource(format!(
            "needs about {need} MiB, limit is {} MiB",
            cfg.memory_limit_mb
        )));
    }
    let dir = cfg.resolved_output_dir();
    fs::create_dir_all(&dir)?;
    let mut resolved = cfg.clone();
    resolved.output_dir = Some(dir.clone());
    write_json(&dir.join("manifest.json"), &manifest(&resolved, "incomplete", None, &[]))?;

    let art = match execute(cfg) {
        Ok(a) => a,
        Err(e) => {
            let mut m = manifest(&resolved, "failed", None, &[]);
            m["failure"] = e.report();
            write_json(&dir.join("manifest.json"), &m)?;
            return Err(e);
        }
    };

    let mut files = Vec::new();
    for (name, c) in &art.curves {
        let f = format!("{name}.csv");
        fs::write(dir.join(&f), c.to_csv(name))?;
        files.push(f);
    }
    for (name, body) in &art.tables {
        let f = format!("{name}.csv");
        fs::write(dir.join(&f), body)?;
        files.push(f);
    }
    write_json(&dir.join("fits.json"), &serde_json::Value::Object(art.fits.clone()))?;
    files.push("fits.json".into());
    write_json(&dir.join("report.json"), &art.report)?;
    files.push("report.json".into());
    if !art.curves.is_empty() {
        fs::write(dir.join("plot.gp"), plot_script(&art.curves))?;
        files.push("plot.gp".into());
    }
    let status = if art.failure.is_some() { "failed" } else { "complete" };
    let m = manifest(&resolved, status, Some(&art), &files);
    write_json(&dir.join("manifest.json"), &m)?;
    match art.failure {
        Some(e) => Err(e),
        None => Ok(m),
    }
}

/// Space-separated coordinates, safe inside a CSV field.
fn coords(p: &Point) -> String {
    p.coords().iter().map(|c| c.to_string()).collect::<Vec<_>>().join(" ")
}

fn execute(cfg: &RunConfig) -> Result<Artifacts, CliError> {
    let mut a = Artifacts::default();
    let (reps, seed, workers, r) = (cfg.reps, cfg.seed, cfg.workers, cfg.box_radius);
    match cfg.experiment {
        Experiment::VerifyOracle => {
            let rep = verify_all()?;
            if !rep.passed {
                a.failure = Some(CliError::Validation("an exact check failed".into()));
            }
            a.report = serde_json::to_value(rep).expect("report");
        }
        Experiment::VerifyBijection => {
            let mut rows = Vec::new();
            for inst in shipped_instances()? {
                let b = verify_bijection(&inst)?;
                if !b.passed {
                    a.failure = Some(CliError::Validation(format!("{}: bijection check failed", b.instance)));
                }
                rows.push(b);
            }
            a.report = serde_json::to_value(rows).expect("report");
        }
        Experiment::DharCheck => {
            let domain = Domain::centered_box(cfg.dimension, r)?;
            let o = Point::origin(cfg.dimension);
            let mut table = String::from("v,x,reps,mean,stderr,green,z\n");
            let mut reports = Vec::new();
            for x in [o, Point::unit(cfg.dimension, 0, 1)] {
                let d = dhar_check(&domain, &o, &x, reps, seed, workers)?;
                let _ = writeln!(
                    table,
                    "{},{},{},{:.9},{:.9},{:.9},{:.4}",
                    coords(&d.v),
                    coords(&d.x),
                    d.reps,
                    d.mean,
                    d.stderr,
                    d.green,
                    d.z
                );
                if d.z.abs() > 3.0 {
                    a.failure = Some(CliError::Validation(format!("|z| = {:.2} at x = {:?}", d.z.abs(), d.x)));
                }
                reports.push(d);
            }
            a.tables.push(("dhar".into(), table));
            a.report = serde_json::to_value(reports).expect("report");
        }
        Experiment::Alpha | Experiment::Beta => {
            let radii = cfg.radii();
            let e = lerw_exponents(&radii, cfg.walk_factor, reps, seed, workers)?;
            let mut table = String::from("radius,mean_length,stderr\n");
            for i in 0..radii.len() {
                let _ = writeln!(table, "{},{:.6},{:.6}", radii[i], e.mean_length[i], e.length_stderr[i]);
            }
            a.curves.push(("escape".into(), e.escape.clone()));
            a.tables.push(("lengths".into(), table));
            let alpha = -e.alpha.slope;
            a.fit("escape", Ok(e.alpha.clone()));
            a.fit("length", Ok(e.beta.clone()));
            a.report = json!({
                "alpha": alpha,
                "alpha_stderr": e.alpha.stderr,
                "beta": e.beta.slope,
                "beta_stderr": e.beta.stderr,
                "alpha_plus_beta": alpha + e.beta.slope,
                "walk_radius": e.walk_radius,
            });
        }
        Experiment::PastTails | Experiment::ZeroTreeTails => {
            let mut grids = TailGrids::for_box(r);
            if !cfg.thresholds.is_empty() {
                grids.diam_ext = cfg.thresholds.clone();
            }
            let w = FitWindows::for_box(r);
            let t = if cfg.experiment == Experiment::PastTails {
                past_tails(r, &grids, reps, seed, workers)?
            } else {
                zero_tree_tails(r, &grids, None, reps, seed, workers)?
            };
            let names = [("diam_ext", &t.diam_ext, w.diam_ext), ("diam_int", &t.diam_int, w.diam_int), ("volume", &t.volume, w.volume)];
            for (name, c, win) in names {
                a.curves.push((name.into(), c.clone()));
                a.fit(name, fit_exponent(c, win, DEFAULT_MIN_EXCEED));
                a.censor_check(name, c, win);
            }
            a.report = json!({"kind": t.kind, "box_radius": r, "censored_samples": t.censored_samples, "reps": reps});
        }
        Experiment::AvalancheTails => {
            let mut grids = TailGrids::for_box(r);
            if !cfg.thresholds.is_empty() {
                grids.diam_ext = cfg.thresholds.clone();
            }
            let w = FitWindows::for_box(r);
            let t = avalanche_tails(r, &grids.diam_ext, &grids.volume, &grids.volume, reps, seed, workers)?;
            let names = [("diam_ext", &t.diam_ext, w.diam_ext, -1.0), ("cluster_size", &t.cluster_size, w.volume, -1.0 / 3.0), ("total", &t.total, w.total, -1.0 / 3.0)];
            for (name, c, win, target) in names {
                a.curves.push((name.into(), c.clone()));
                a.fit(name, fit_exponent(c, win, DEFAULT_MIN_EXCEED).map(|f| f.with_target(&format!("{target:.4}"), target)));
                a.censor_check(name, c, win);
            }
            a.report = json!({"box_radius": r, "truncated": t.truncated, "reps": reps});
        }
        Experiment::FirstWaveRatio => {
            let th = if cfg.thresholds.is_empty() { vec![1, 2, 4, 8, 16] } else { cfg.thresholds.clone() };
            let c = first_wave_vs_tree(&th, r, reps, seed, workers)?;
            a.curves.push(("first_wave".into(), c.wave.clone()));
            a.curves.push(("zero_tree".into(), c.tree.clone()));
            let mut table = String::from("threshold,p_wave,p_tree,ratio,sigma,z,usable\n");
            for row in &c.rows {
                let _ = writeln!(
                    table,
                    "{},{:.9},{:.9},{:.9},{:.9},{:.4},{}",
                    row.threshold, row.p_wave, row.p_tree, row.ratio, row.sigma, row.z, row.usable
                );
            }
            a.tables.push(("ratio".into(), table));
            if c.max_abs_z() > 3.0 {
                a.failure = Some(CliError::Validation(format!("ratio off by {:.2} sigma", c.max_abs_z())));
            }
            a.report = serde_json::to_value(&c).expect("report");
        }
    }
    Ok(a)
}

#[derive(Parser, Debug)]
#[command(name = "ustpile", version, about = "Spanning forests and sandpiles on Z^3")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand, Debug)]
pub enum Command {
    /// Run the experiment named in a config file.
    Run(Overrides),
    /// Rerun from an existing manifest.
    Rerun {
        manifest: PathBuf,
        #[arg(long)]
        output_dir: Option<PathBuf>,
    },
    /// Print the default config of an experiment as TOML.
    Defaults { experiment: Experiment },
    VerifyOracle(Overrides),
    VerifyBijection(Overrides),
    DharCheck(Overrides),
    Alpha(Overrides),
    Beta(Overrides),
    PastTails(Overrides),
    ZeroTreeTails(Overrides),
    AvalancheTails(Overrides),
    FirstWaveRatio(Overrides),
}

/// Flags take precedence over the config file.
#[derive(Args, Debug, Default, Clone)]
pub struct Overrides {
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long)]
    pub dimension: Option<usize>,
    #[arg(long)]
    pub box_radius: Option<u32>,
    #[arg(long, value_delimiter = ',')]
    pub thresholds: Option<Vec<u64>>,
    #[arg(long)]
    pub reps: Option<u64>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub workers: Option<usize>,
    #[arg(long)]
    pub output_dir: Option<PathBuf>,
    #[arg(long)]
    pub walk_factor: Option<u32>,
    #[arg(long)]
    pub memory_limit_mb: Option<u64>,
}

impl Overrides {
    pub fn resolve(&self, experiment: Option<Experiment>) -> Result<RunConfig, CliError> {
        let mut cfg = match (&self.config, experiment) {
            (Some(p), _) => {
                let mut c = config_from_file(p)?;
                if let Some(e) = experiment {
                    c.experiment = e;
                }
                c
            }
            (None, Some(e)) => RunConfig::defaults(e),
            (None, None) => return Err(CliError::Config("run needs --config".into())),
        };
        macro_rules! set {
            ($($f:ident),*) => {$(if let Some(v) = &self.$f { cfg.$f = v.clone(); })*};
        }
        set!(dimension, box_radius, thresholds, reps, seed, workers, walk_factor, memory_limit_mb);
        if let Some(d) = &self.output_dir {
            cfg.output_dir = Some(d.clone());
        }
        Ok(cfg)
    }
}

fn rerun_config(manifest: &Path, output_dir: Option<PathBuf>) -> Result<RunConfig, CliError> {
    let text = fs::read_to_string(manifest).map_err(|e| CliError::Config(format!("{}: {e}", manifest.display())))?;
    let v: serde_json::Value = serde_json::from_str(&text).map_err(|e| CliError::Config(e.to_string()))?;
    let mut cfg: RunConfig =
        serde_json::from_value(v["config"].clone()).map_err(|e| CliError::Config(format!("manifest config: {e}")))?;
    if output_dir.is_some() {
        cfg.output_dir = output_dir;
    }
    Ok(cfg)
}

/// Parses arguments, runs, prints a JSON summary and returns the exit code.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_CONFIG } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let cfg = match cli.command {
        Command::Defaults { experiment } => {
            print!("{}", RunConfig::defaults(experiment).to_toml());
            return EXIT_OK;
        }
        Command::Run(o) => o.resolve(None),
        Command::Rerun { manifest, output_dir } => rerun_config(&manifest, output_dir),
        Command::VerifyOracle(o) => o.resolve(Some(Experiment::VerifyOracle)),
        Command::VerifyBijection(o) => o.resolve(Some(Experiment::VerifyBijection)),
        Command::DharCheck(o) => o.resolve(Some(Experiment::DharCheck)),
        Command::Alpha(o) => o.resolve(Some(Experiment::Alpha)),
        Command::Beta(o) => o.resolve(Some(Experiment::Beta)),
        Command::PastTails(o) => o.resolve(Some(Experiment::PastTails)),
        Command::ZeroTreeTails(o) => o.resolve(Some(Experiment::ZeroTreeTails)),
        Command::AvalancheTails(o) => o.resolve(Some(Experiment::AvalancheTails)),
        Command::FirstWaveRatio(o) => o.resolve(Some(Experiment::FirstWaveRatio)),
    };
    let result = cfg.and_then(|c| run(&c));
    match result {
        Ok(m) => {
            println!("{}", serde_json::to_string_pretty(&m).expect("json"));
            EXIT_OK
        }
        Err(e) => {
            eprintln!("{}", serde_json::to_string_pretty(&e.report()).expect("json"));
            e.exit_code()
        }
    }
}
