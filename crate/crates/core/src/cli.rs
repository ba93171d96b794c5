//! Command-line front end: degrade, super-resolve, evaluate, gradient-check
//! and benchmark.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::time::Instant;

use clap::{Args, Parser, Subcommand, ValueEnum};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::degradation::{synthesize_pair, test_kernel_specs, DegradationSpec, KernelSpec};
use crate::diagnostics::{run_suite, CheckOutcome, CHECK_NAMES, CORRUPT_NAME, TOLERANCE};
use crate::em::{EmSolver, SolverConfig};
use crate::error::{Error, Result};
use crate::io;
use crate::metrics::{evaluate, MetricReport};
use crate::noise::PatchSize;
use crate::tensor::Tensor;

/// JSON schemas of the documents the CLI writes.
pub mod schemas {
    pub const RUN_CONFIG: &str = include_str!("../schemas/run_config.json");
    pub const SIDECAR: &str = include_str!("../schemas/sidecar.json");
    pub const TRACE: &str = include_str!("../schemas/trace.json");
    pub const METRIC_REPORT: &str = include_str!("../schemas/metric_report.json");
    pub const GRADCHECK: &str = include_str!("../schemas/gradcheck.json");
    pub const BENCH_SUMMARY: &str = include_str!("../schemas/bench_summary.json");
}

/// Environment variable capping worker threads of `bench`.
pub const THREADS_ENV: &str = "BSRDM_THREADS";

/// Everything a command needs. Missing keys take their defaults; unknown
/// keys are rejected.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct RunConfig {
    pub solver: SolverConfig,
    pub degradation: DegradationSpec,
    pub input: Option<PathBuf>,
    pub out: Option<PathBuf>,
    /// Border excluded by `eval`; defaults to the scale.
    pub crop_border: Option<usize>,
}

impl RunConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        Ok(serde_json::from_str(text)?)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_json(&io::read_text(path)?)
    }

    pub fn crop_border(&self) -> usize {
        self.crop_border.unwrap_or(self.solver.scale)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    /// Isotropic σ=1.2 blur, AWGN 2.55/255, whole-image noise variance.
    Case1,
    /// Isotropic σ=1.2 blur, signal-dependent noise, 15×15 variance patches.
    Case2,
}

impl Preset {
    pub fn apply(self, cfg: &mut RunConfig) {
        let scale = cfg.degradation.scale;
        let seed = cfg.degradation.seed;
        let (spec, patch) = match self {
            Preset::Case1 => (DegradationSpec::case1(scale), PatchSize::WholeImage),
            Preset::Case2 => (DegradationSpec::case2(scale), PatchSize::Square(15)),
        };
        cfg.degradation = DegradationSpec { seed, clip: cfg.degradation.clip, ..spec };
        cfg.solver.patch = patch;
    }
}

/// Flags shared by every command. Applied after the config file and preset.
#[derive(Clone, Debug, Default, Args)]
pub struct CommonArgs {
    /// JSON run config; flags given on the command line override it.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, value_parser = parse_scale)]
    pub scale: Option<usize>,
    /// EM iterations.
    #[arg(long)]
    pub iters: Option<usize>,
    /// Weight of the gradient prior.
    #[arg(long)]
    pub rho: Option<f64>,
    /// Exponent of the gradient prior.
    #[arg(long)]
    pub gamma: Option<f64>,
    /// Noise-variance patch: an odd side length or "full".
    #[arg(long, value_parser = parse_patch)]
    pub patch: Option<PatchSize>,
    #[arg(long)]
    pub lr_net: Option<f64>,
    #[arg(long)]
    pub lr_kernel: Option<f64>,
    #[arg(long)]
    pub langevin_steps: Option<usize>,
    #[arg(long)]
    pub langevin_delta: Option<f64>,
    /// Seeds both the degradation and the solver.
    #[arg(long)]
    pub seed: Option<u64>,
    /// One shared noise variance for the whole image (same as --patch full).
    #[arg(long)]
    pub iid_noise: bool,
    #[arg(long, value_enum)]
    pub preset: Option<Preset>,
    /// Progress line every N iterations on stderr (0 is silent).
    #[arg(long)]
    pub log_every: Option<usize>,
}

fn parse_scale(s: &str) -> std::result::Result<usize, String> {
    match s {
        "2" | "3" | "4" => Ok(s.parse().expect("digit")),
        _ => Err(format!("scale must be 2, 3 or 4, got {s:?}")),
    }
}

fn parse_patch(s: &str) -> std::result::Result<PatchSize, String> {
    s.parse().map_err(|e: Error| e.to_string())
}

impl CommonArgs {
    /// Defaults, then the config file, then the preset, then flags.
    pub fn resolve(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => RunConfig::load(p)?,
            None => RunConfig::default(),
        };
        if let Some(p) = self.preset {
            p.apply(&mut cfg);
        }
        if let Some(s) = self.scale {
            cfg.solver.scale = s;
            cfg.degradation.scale = s;
        }
        if let Some(s) = self.seed {
            cfg.solver.seed = s;
            cfg.degradation.seed = s;
        }
        macro_rules! set {
            ($($flag:ident => $field:ident),*) => { $(if let Some(v) = self.$flag { cfg.solver.$field = v; })* };
        }
        set!(iters => iterations, rho => rho, gamma => gamma, patch => patch, lr_net => lr_net,
             lr_kernel => lr_kernel, langevin_steps => langevin_steps, langevin_delta => langevin_delta,
             log_every => log_every);
        if self.iid_noise {
            cfg.solver.patch = PatchSize::WholeImage;
        }
        if let Some(o) = &self.out {
            cfg.out = Some(o.clone());
        }
        cfg.solver.validate()?;
        Ok(cfg)
    }
}

#[derive(Debug, Parser)]
#[command(name = "bsrdm", version, about = "Blind super-resolution with kernel and noise estimation")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Blur, downsample and add noise to an HR PNG.
    Degrade {
        /// HR PNG; the run config's `input` is used when omitted.
        input: Option<PathBuf>,
        /// Degrade with each of the six test kernels into kernel_1..kernel_6.
        #[arg(long)]
        kernel_bank: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Super-resolve an LR PNG, estimating kernel and noise.
    ///
    /// Inputs whose HR size is not a multiple of 16 (or below 32) are
    /// replicate-padded for the generator and cropped back afterwards.
    Sr {
        input: Option<PathBuf>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Print PSNR and SSIM on luminance as JSON.
    Eval {
        result: PathBuf,
        reference: PathBuf,
        /// Pixels excluded per side; defaults to the scale.
        #[arg(long)]
        crop: Option<usize>,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Compare analytic gradients against finite differences.
    Gradcheck {
        /// Restrict to these checks (repeatable).
        #[arg(long)]
        op: Vec<String>,
        /// Also run an operation with a deliberately wrong adjoint.
        #[arg(long)]
        corrupt_adjoint: bool,
        #[command(flatten)]
        common: CommonArgs,
    },
    /// Degrade, solve and evaluate every HR PNG in a directory over a grid of
    /// test kernels and noise cases.
    Bench {
        hr_dir: PathBuf,
        /// Test-kernel indices (1..=6).
        #[arg(long, value_delimiter = ',', default_values_t = [1usize, 2, 3, 4, 5, 6])]
        kernels: Vec<usize>,
        #[arg(long, value_delimiter = ',', value_enum, default_values_t = [Preset::Case1, Preset::Case2])]
        noise: Vec<Preset>,
        #[command(flatten)]
        common: CommonArgs,
    },
}

fn out_dir(cfg: &RunConfig) -> Result<PathBuf> {
    let dir = cfg.out.clone().ok_or_else(|| Error::invalid("an output directory is required (--out)"))?;
    io::create_dir(&dir)?;
    Ok(dir)
}

fn input_path(arg: &Option<PathBuf>, cfg: &mut RunConfig) -> Result<PathBuf> {
    if let Some(p) = arg {
        cfg.input = Some(p.clone());
    }
    cfg.input.clone().ok_or_else(|| Error::invalid("an input image is required"))
}

/// Writes lr.png, hr.png, sidecar.json, kernel.txt and kernel.png.
fn write_degraded(dir: &Path, hr: &Tensor, spec: &DegradationSpec) -> Result<()> {
    io::create_dir(dir)?;
    let pair = synthesize_pair(hr, spec)?;
    io::write_png(&dir.join("lr.png"), &pair.lr)?;
    io::write_png(&dir.join("hr.png"), &pair.hr)?;
    io::write_json(&dir.join("sidecar.json"), &pair.sidecar)?;
    io::write_text(&dir.join(&pair.sidecar.kernel_path), &pair.kernel.to_text())?;
    io::write_kernel_png(&dir.join("kernel.png"), &pair.kernel)
}

pub fn cmd_degrade(input: &Path, cfg: &RunConfig, out: &Path, kernel_bank: bool) -> Result<()> {
    let hr = io::read_png(input)?;
    io::create_dir(out)?;
    io::write_json(&out.join("config.json"), cfg)?;
    if kernel_bank {
        for index in 1..=test_kernel_specs().len() {
            let spec = DegradationSpec { kernel: KernelSpec::Bank { index }, ..cfg.degradation.clone() };
            write_degraded(&out.join(format!("kernel_{index}")), &hr, &spec)?;
        }
        Ok(())
    } else {
        write_degraded(out, &hr, &cfg.degradation)
    }
}

/// Runs the solver and writes hr.png, kernel_est.txt/png, lambda.png,
/// lambda.txt and trace.json. On divergence the trace up to the last good
/// iteration is still written.
pub fn cmd_sr(input: &Path, cfg: &RunConfig, out: &Path) -> Result<()> {
    let y = io::read_png(input)?;
    io::create_dir(out)?;
    io::write_json(&out.join("config.json"), cfg)?;
    let mut solver = EmSolver::new(&y, cfg.solver.clone())?;
    if let Err(err) = solver.run() {
        io::write_json(&out.join("trace.json"), solver.trace())?;
        return Err(err);
    }
    let result = solver.output()?;
    io::write_png(&out.join("hr.png"), &result.hr)?;
    io::write_text(&out.join("kernel_est.txt"), &result.kernel.to_text())?;
    io::write_kernel_png(&out.join("kernel_est.png"), &result.kernel)?;
    io::write_variance_png(&out.join("lambda.png"), &result.lambda)?;
    io::write_text(&out.join("lambda.txt"), &io::variance_to_text(&result.lambda))?;
    io::write_json(&out.join("trace.json"), &result.trace)
}

pub fn cmd_eval(result: &Path, reference: &Path, crop_border: usize) -> Result<MetricReport> {
    let a = io::read_png(result)?;
    let b = io::read_png(reference)?;
    if a.shape() != b.shape() {
        return Err(Error::invalid(format!(
            "{} is {:?} but {} is {:?}",
            result.display(),
            a.shape(),
            reference.display(),
            b.shape()
        )));
    }
    evaluate(&a, &b, crop_border)
}

#[derive(Clone, Debug, Serialize)]
pub struct GradcheckSummary {
    pub tolerance: f64,
    pub passed: bool,
    pub checks: Vec<CheckOutcome>,
}

pub fn cmd_gradcheck(ops: &[String], corrupt_adjoint: bool, seed: u64) -> Result<GradcheckSummary> {
    for op in ops {
        if !CHECK_NAMES.contains(&op.as_str()) && op != CORRUPT_NAME {
            return Err(Error::invalid(format!("unknown check {op:?}; known: {}", CHECK_NAMES.join(", "))));
        }
    }
    let mut names: Vec<String> =
        if ops.is_empty() { CHECK_NAMES.iter().map(|s| s.to_string()).collect() } else { ops.to_vec() };
    if corrupt_adjoint && !names.iter().any(|n| n == CORRUPT_NAME) {
        names.push(CORRUPT_NAME.to_string());
    }
    let checks = run_suite(&names, seed)?;
    Ok(GradcheckSummary { tolerance: TOLERANCE, passed: checks.iter().all(|c| c.passed), checks })
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct BenchRow {
    pub image: String,
    pub kernel: usize,
    pub noise: Preset,
    pub psnr_y: Option<f64>,
    pub ssim_y: Option<f64>,
    pub wall_time_s: f64,
    pub error: Option<String>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BenchSummary {
    pub runs: usize,
    pub failures: usize,
    pub psnr_mean: Option<f64>,
    pub psnr_std: Option<f64>,
    pub ssim_mean: Option<f64>,
    pub ssim_std: Option<f64>,
}

fn mean_std(v: &[f64]) -> (Option<f64>, Option<f64>) {
    if v.is_empty() {
        return (None, None);
    }
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / n;
    (Some(mean), Some(var.sqrt()))
}

impl BenchSummary {
    pub fn from_rows(rows: &[BenchRow]) -> Self {
        let psnr: Vec<f64> = rows.iter().filter_map(|r| r.psnr_y).collect();
        let ssim: Vec<f64> = rows.iter().filter_map(|r| r.ssim_y).collect();
        let (psnr_mean, psnr_std) = mean_std(&psnr);
        let (ssim_mean, ssim_std) = mean_std(&ssim);
        BenchSummary {
            runs: rows.len(),
            failures: rows.iter().filter(|r| r.error.is_some()).count(),
            psnr_mean,
            psnr_std,
            ssim_mean,
            ssim_std,
        }
    }
}

/// Seed of one benchmark cell, independent of scheduling.
fn cell_seed(seed: u64, index: usize) -> u64 {
    let mut x = seed ^ (index as u64).wrapping_mul(0x9e37_79b9_7f4a_7c15);
    x = (x ^ (x >> 30)).wrapping_mul(0xbf58_476d_1ce4_e5b9);
    x = (x ^ (x >> 27)).wrapping_mul(0x94d0_49bb_1331_11eb);
    x ^ (x >> 31)
}

fn bench_cell(hr_path: &Path, kernel: usize, noise: Preset, seed: u64, cfg: &RunConfig) -> Result<MetricReport> {
    let hr = io::read_png(hr_path)?;
    let mut cell = cfg.clone();
    noise.apply(&mut cell);
    cell.degradation.kernel = KernelSpec::Bank { index: kernel };
    cell.degradation.seed = seed;
    cell.solver.seed = seed;
    let pair = synthesize_pair(&hr, &cell.degradation)?;
    let mut solver = EmSolver::new(&pair.lr, cell.solver.clone())?;
    solver.run()?;
    evaluate(&solver.current_image()?, &pair.hr, cfg.crop_border())
}

fn thread_cap() -> Result<Option<usize>> {
    match std::env::var(THREADS_ENV) {
        Ok(v) => match v.trim().parse::<usize>() {
            Ok(n) if n > 0 => Ok(Some(n)),
            _ => Err(Error::invalid(format!("{THREADS_ENV} must be a positive integer, got {v:?}"))),
        },
        Err(_) => Ok(None),
    }
}

/// Writes results.csv (one row per image × kernel × noise cell) and
/// summary.json. Failed cells are recorded and the sweep continues.
pub fn cmd_bench(hr_dir: &Path, kernels: &[usize], noise: &[Preset], cfg: &RunConfig, out: &Path) -> Result<Vec<BenchRow>> {
    for &k in kernels {
        if k == 0 || k > test_kernel_specs().len() {
            return Err(Error::invalid(format!("kernel index must be 1..=6, got {k}")));
        }
    }
    let mut images: Vec<PathBuf> = std::fs::read_dir(hr_dir)
        .map_err(|e| Error::io(hr_dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.extension().is_some_and(|x| x.eq_ignore_ascii_case("png")))
        .collect();
    images.sort();
    if images.is_empty() {
        return Err(Error::invalid(format!("no PNG files in {}", hr_dir.display())));
    }
    io::write_json(&out.join("config.json"), cfg)?;

    let cells: Vec<(PathBuf, usize, Preset)> = images
        .iter()
        .flat_map(|img| kernels.iter().flat_map(move |&k| noise.iter().map(move |&n| (img.clone(), k, n))))
        .collect();
    let run_cell = |(index, (path, kernel, noise)): (usize, &(PathBuf, usize, Preset))| {
        let start = Instant::now();
        let result = bench_cell(path, *kernel, *noise, cell_seed(cfg.solver.seed, index), cfg);
        let image = path.file_name().map(|n| n.to_string_lossy().into_owned()).unwrap_or_default();
        let wall_time_s = start.elapsed().as_secs_f64();
        match result {
            Ok(r) => BenchRow {
                image,
                kernel: *kernel,
                noise: *noise,
                psnr_y: Some(r.psnr_y),
                ssim_y: Some(r.ssim_y),
                wall_time_s,
                error: None,
            },
            Err(e) => BenchRow {
                image,
                kernel: *kernel,
                noise: *noise,
                psnr_y: None,
                ssim_y: None,
                wall_time_s,
                error: Some(e.to_string()),
            },
        }
    };
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = thread_cap()? {
        builder = builder.num_threads(n);
    }
    let pool = builder.build().map_err(|e| Error::invalid(format!("thread pool: {e}")))?;
    let rows: Vec<BenchRow> = pool.install(|| cells.par_iter().enumerate().map(run_cell).collect());

    let csv_path = out.join("results.csv");
    let mut w = csv::Writer::from_path(&csv_path).map_err(|e| csv_error(&csv_path, e))?;
    for row in &rows {
        w.serialize(row).map_err(|e| csv_error(&csv_path, e))?;
    }
    w.flush().map_err(|e| Error::io(&csv_path, e))?;
    io::write_json(&out.join("summary.json"), &BenchSummary::from_rows(&rows))?;
    Ok(rows)
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    Error::io(path, std::io::Error::other(e))
}

/// Parses `args`, runs the command and returns the process exit code.
pub fn run<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 1 } else { 0 };
        }
    };
    match dispatch(cli.command) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            e.exit_code()
        }
    }
}

fn dispatch(command: Command) -> Result<i32> {
    match command {
        Command::Degrade { input, kernel_bank, common } => {
            let mut cfg = common.resolve()?;
            let input = input_path(&input, &mut cfg)?;
            let out = out_dir(&cfg)?;
            cmd_degrade(&input, &cfg, &out, kernel_bank)?;
        }
        Command::Sr { input, common } => {
            let mut cfg = common.resolve()?;
            let input = input_path(&input, &mut cfg)?;
            let out = out_dir(&cfg)?;
            cmd_sr(&input, &cfg, &out)?;
        }
        Command::Eval { result, reference, crop, common } => {
            let mut cfg = common.resolve()?;
            if crop.is_some() {
                cfg.crop_border = crop;
            }
            let report = cmd_eval(&result, &reference, cfg.crop_border())?;
            if cfg.out.is_some() {
                let out = out_dir(&cfg)?;
                io::write_json(&out.join("config.json"), &cfg)?;
                io::write_json(&out.join("metrics.json"), &report)?;
            }
            println!("{}", serde_json::to_string(&report)?);
        }
        Command::Gradcheck { op, corrupt_adjoint, common } => {
            let cfg = common.resolve()?;
            let summary = cmd_gradcheck(&op, corrupt_adjoint, cfg.solver.seed)?;
            for c in &summary.checks {
                let status = if c.passed { "PASS" } else { "FAIL" };
                eprintln!("{status} {:<20} max_rel_error {:.3e} ({} coords)", c.name, c.max_rel_error, c.checked);
            }
            if cfg.out.is_some() {
                let out = out_dir(&cfg)?;
                io::write_json(&out.join("config.json"), &cfg)?;
                io::write_json(&out.join("gradcheck.json"), &summary)?;
            }
            println!("{}", serde_json::to_string(&summary)?);
            return Ok(if summary.passed { 0 } else { 1 });
        }
        Command::Bench { hr_dir, kernels, noise, common } => {
            let cfg = common.resolve()?;
            let out = out_dir(&cfg)?;
            let rows = cmd_bench(&hr_dir, &kernels, &noise, &cfg, &out)?;
            println!("{}", serde_json::to_string(&BenchSummary::from_rows(&rows))?);
        }
    }
    Ok(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::degradation::NoiseSpec;

    fn parse(args: &[&str]) -> Command {
        Cli::try_parse_from(std::iter::once("bsrdm").chain(args.iter().copied())).unwrap().command
    }

    fn common(cmd: Command) -> CommonArgs {
        match cmd {
            Command::Sr { common, .. } | Command::Degrade { common, .. } => common,
            _ => unreachable!(),
        }
    }

    #[test]
    fn flags_override_defaults() {
        let c = common(parse(&["sr", "x.png", "--scale", "3", "--iters", "7", "--patch", "full", "--seed", "9"]));
        let cfg = c.resolve().unwrap();
        assert_eq!(cfg.solver.scale, 3);
        assert_eq!(cfg.solver.kernel_radius().unwrap(), 7);
        assert_eq!(cfg.solver.iterations, 7);
        assert_eq!(cfg.solver.patch, PatchSize::WholeImage);
        assert_eq!((cfg.solver.seed, cfg.degradation.seed), (9, 9));
    }

    #[test]
    fn iid_flag_selects_whole_image() {
        let cfg = common(parse(&["sr", "x.png", "--iid-noise"])).resolve().unwrap();
        assert_eq!(cfg.solver.patch, PatchSize::WholeImage);
    }

    #[test]
    fn presets_expand() {
        let cfg = common(parse(&["degrade", "x.png", "--preset", "case1"])).resolve().unwrap();
        assert_eq!(cfg.degradation.kernel, KernelSpec::Isotropic { sigma: 1.2 });
        assert_eq!(cfg.degradation.noise, NoiseSpec::Awgn { level: 2.55 / 255.0 });
        let cfg = common(parse(&["degrade", "x.png", "--preset", "case2", "--patch", "7"])).resolve().unwrap();
        assert!(matches!(cfg.degradation.noise, NoiseSpec::SignalDependent { .. }));
        assert_eq!(cfg.solver.patch, PatchSize::Square(7));
    }

    #[test]
    fn config_file_sits_between_defaults_and_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("c.json");
        std::fs::write(&path, r#"{"solver": {"rho": 0.5, "iterations": 11}, "crop_border": 0}"#).unwrap();
        let p = path.to_str().unwrap();
        let cfg = common(parse(&["sr", "--config", p, "--iters", "4"])).resolve().unwrap();
        assert_eq!((cfg.solver.rho, cfg.solver.iterations, cfg.crop_border()), (0.5, 4, 0));
        assert_eq!(cfg.solver.gamma, 2.0 / 3.0);
    }

    #[test]
    fn unknown_config_keys_rejected() {
        assert!(RunConfig::from_json(r#"{"solver": {"rhoo": 1}}"#).is_err());
        assert!(RunConfig::from_json(r#"{"extra": 1}"#).is_err());
        assert_eq!(RunConfig::from_json("{}").unwrap(), RunConfig::default());
    }

    #[test]
    fn bad_scale_rejected() {
        assert!(Cli::try_parse_from(["bsrdm", "sr", "x.png", "--scale", "5"]).is_err());
    }

    #[test]
    fn cell_seeds_differ() {
        let s: Vec<u64> = (0..100).map(|i| cell_seed(7, i)).collect();
        let mut d = s.clone();
        d.sort();
        d.dedup();
        assert_eq!(d.len(), 100);
        assert_eq!(cell_seed(7, 3), s[3]);
    }

    #[test]
    fn summary_is_mean_of_rows() {
        let row = |p: Option<f64>| BenchRow {
            image: "a.png".into(),
            kernel: 1,
            noise: Preset::Case1,
            psnr_y: p,
            ssim_y: p.map(|v| v / 100.0),
            wall_time_s: 1.0,
            error: p.is_none().then(|| "boom".into()),
        };
        let s = BenchSummary::from_rows(&[row(Some(20.0)), row(Some(30.0)), row(None)]);
        assert_eq!((s.runs, s.failures), (3, 1));
        assert_eq!(s.psnr_mean, Some(25.0));
        assert_eq!(s.psnr_std, Some(5.0));
    }
}
