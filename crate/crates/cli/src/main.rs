use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use topoinfer::dataset::{Dataset, DatasetError, META_FILE};
use topoinfer::domain::{Connectivity, Mesh, SearchSpace};
use topoinfer::glm::{contrast_from_csv, DesignMatrix};
use topoinfer::lkc::NormMode;
use topoinfer::pipeline::{analyze, AnalyzeOptions, PipelineError, Window};
use topoinfer::preproc::{band_average, gaussian_smooth, laplacian_smooth, morlet_tf, wavelet_half_width, DEFAULT_CYCLES};
use topoinfer::report::{axis_headers, render_report};
use topoinfer::simulate::{calibrate, SimConfig, SimField, DEFAULT_MAX_CELLS};

#[derive(Debug, Error)]
enum CliError {
    #[error("{0}")]
    Input(String),
    #[error("internal error: {0}")]
    Internal(String),
}

impl CliError {
    fn exit_code(&self) -> u8 {
        match self {
            Self::Input(_) => 2,
            Self::Internal(_) => 3,
        }
    }
}

impl From<PipelineError> for CliError {
    fn from(e: PipelineError) -> Self {
        if e.is_internal() {
            Self::Internal(e.to_string())
        } else {
            Self::Input(e.to_string())
        }
    }
}

fn input<E: std::fmt::Display>(context: impl std::fmt::Display) -> impl FnOnce(E) -> CliError {
    move |e| CliError::Input(format!("{context}: {e}"))
}

#[derive(Parser)]
#[command(name = "topoinfer", version, about = "Topological inference on statistic maps over lattices and meshes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a GLM to a dataset and write the FWE/FDR peak table.
    Analyze(AnalyzeArgs),
    /// Run a Monte Carlo calibration of expected EC and FWE control.
    Simulate(SimulateArgs),
    /// Morlet time-frequency power averaged over a frequency band.
    Tf(TfArgs),
    /// Gaussian (lattice) or graph-Laplacian (mesh or lattice) smoothing of every observation.
    Smooth(SmoothArgs),
    /// Describe a dataset and its search space.
    Info(InfoArgs),
}

#[derive(Clone, Copy, ValueEnum)]
enum NormArg {
    Source,
    Exact,
    Mean,
}

impl From<NormArg> for NormMode {
    fn from(n: NormArg) -> Self {
        match n {
            NormArg::Source => NormMode::Source,
            NormArg::Exact => NormMode::Exact,
            NormArg::Mean => NormMode::Mean,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum ConnectivityArg {
    Full,
    Face,
}

#[derive(Args)]
struct AnalyzeArgs {
    /// Dataset directory containing meta.json.
    dataset: PathBuf,
    /// Design matrix CSV with a header row (default: one-sample design).
    #[arg(long)]
    design: Option<PathBuf>,
    /// Contrast CSV holding one row vector (default: 1).
    #[arg(long)]
    contrast: Option<PathBuf>,
    /// Output directory for results.json and report.txt.
    #[arg(long, short)]
    out: PathBuf,
    /// Uncorrected p-value defining the height threshold.
    #[arg(long, default_value_t = 0.001)]
    height_p: f64,
    /// FWE level for the corrected threshold.
    #[arg(long, default_value_t = 0.05)]
    alpha: f64,
    /// Gaussian FWHM per axis in bins, comma separated.
    #[arg(long, value_delimiter = ',')]
    smooth: Option<Vec<f64>>,
    /// Small-volume restriction lo:hi in axis units.
    #[arg(long, allow_hyphen_values = true)]
    window: Option<String>,
    /// Axis the window applies to (default: last axis).
    #[arg(long)]
    window_axis: Option<usize>,
    /// Test both signs of the contrast.
    #[arg(long)]
    two_sided: bool,
    /// Mesh file (`D nV nS` header, vertex lines, simplex lines) whose vertices carry the data.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Residual differencing used for smoothness estimation.
    #[arg(long, value_enum, default_value = "source")]
    norm: NormArg,
    /// Neighbourhood for maxima and clusters on lattices.
    #[arg(long, value_enum, default_value = "full")]
    connectivity: ConnectivityArg,
}

#[derive(Args)]
struct SimulateArgs {
    /// Configuration JSON (default: 64x64 lattice, FWHM 6, 2000 realizations).
    config: Option<PathBuf>,
    /// Report path (default: standard output).
    #[arg(long, short)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TfArgs {
    /// Dataset whose last axis is time.
    dataset: PathBuf,
    /// Output dataset directory holding band power per observation.
    #[arg(long, short)]
    out: PathBuf,
    /// Frequency band lo:hi in Hz.
    #[arg(long, default_value = "15:30")]
    band: String,
    /// Analysis frequencies lo:hi[:step] in Hz.
    #[arg(long, default_value = "1:45")]
    freqs: String,
    /// Samples per second (default: derived from the time axis step in ms or s).
    #[arg(long)]
    sample_rate: Option<f64>,
    /// Wavelet cycles.
    #[arg(long, default_value_t = DEFAULT_CYCLES)]
    cycles: f64,
    /// Drop time points where the lowest band wavelet extends past the signal.
    #[arg(long)]
    mask_edges: bool,
}

#[derive(Args)]
struct SmoothArgs {
    dataset: PathBuf,
    /// Output dataset directory.
    #[arg(long, short)]
    out: PathBuf,
    /// Gaussian FWHM per axis in bins, comma separated.
    #[arg(long, value_delimiter = ',', conflicts_with_all = ["steps", "mesh"])]
    fwhm: Option<Vec<f64>>,
    /// Graph-Laplacian iterations.
    #[arg(long, requires = "tau")]
    steps: Option<usize>,
    /// Graph-Laplacian rate, at most 1 / max degree.
    #[arg(long, requires = "steps")]
    tau: Option<f64>,
    /// Mesh file (`D nV nS` header, vertex lines, simplex lines) whose vertices carry the data.
    #[arg(long, requires = "steps")]
    mesh: Option<PathBuf>,
}

#[derive(Args)]
struct InfoArgs {
    dataset: PathBuf,
    /// Mesh file whose vertices carry the data.
    #[arg(long)]
    mesh: Option<PathBuf>,
}

fn parse_range(text: &str, what: &str) -> Result<Vec<f64>, CliError> {
    let parts: Result<Vec<f64>, _> = text.split(':').map(|p| p.trim().parse::<f64>()).collect();
    let parts = parts.map_err(|_| CliError::Input(format!("{what} {text:?} is not of the form lo:hi")))?;
    if parts.iter().any(|x| !x.is_finite()) {
        return Err(CliError::Input(format!("{what} {text:?} has a non-finite bound")));
    }
    Ok(parts)
}

fn parse_interval(text: &str, what: &str) -> Result<(f64, f64), CliError> {
    match parse_range(text, what)?[..] {
        [lo, hi] if lo <= hi => Ok((lo, hi)),
        _ => Err(CliError::Input(format!("{what} {text:?} must be lo:hi with lo <= hi"))),
    }
}

fn parse_freqs(text: &str) -> Result<Vec<f64>, CliError> {
    let (lo, hi, step) = match parse_range(text, "--freqs")?[..] {
        [lo, hi] => (lo, hi, 1.0),
        [lo, hi, step] => (lo, hi, step),
        _ => return Err(CliError::Input(format!("--freqs {text:?} must be lo:hi or lo:hi:step"))),
    };
    if !(lo > 0.0 && lo <= hi && step > 0.0) || (hi - lo) / step > 1e5 {
        return Err(CliError::Input(format!("--freqs {text:?} must satisfy 0 < lo <= hi with a positive step")));
    }
    let count = ((hi - lo) / step + 1e-9).floor() as usize + 1;
    Ok((0..count).map(|k| lo + k as f64 * step).collect())
}

fn read_dataset(path: &Path) -> Result<Dataset, CliError> {
    Dataset::read(path).map_err(|e| CliError::Input(e.to_string()))
}

fn read_mesh(path: &Path) -> Result<Mesh, CliError> {
    let text = fs::read_to_string(path).map_err(input(path.display()))?;
    Mesh::from_off_str(&text).map_err(input(path.display()))
}

/// Writes `bytes` next to `path` and renames it into place.
fn stage_file(path: &Path, bytes: &[u8]) -> Result<PathBuf, CliError> {
    let staged = path.with_extension("partial");
    fs::write(&staged, bytes).map_err(input(staged.display()))?;
    Ok(staged)
}

fn commit_files(files: &[(PathBuf, Vec<u8>)]) -> Result<(), CliError> {
    let mut staged = Vec::new();
    for (path, bytes) in files {
        match stage_file(path, bytes) {
            Ok(s) => staged.push((s, path)),
            Err(e) => {
                for (s, _) in staged {
                    let _ = fs::remove_file(s);
                }
                return Err(e);
            }
        }
    }
    for (s, path) in staged {
        fs::rename(&s, path).map_err(input(path.display()))?;
    }
    Ok(())
}

/// Writes a dataset into a fresh directory next to `out` and moves it into
/// place, so a failed run leaves nothing behind.
fn write_dataset(dataset: &Dataset, out: &Path) -> Result<(), CliError> {
    if out.exists() {
        let empty = fs::read_dir(out).map_err(input(out.display()))?.next().is_none();
        if !empty {
            return Err(CliError::Input(format!("{}: output directory exists and is not empty", out.display())));
        }
    }
    let parent = match out.parent() {
        Some(p) if !p.as_os_str().is_empty() => p.to_path_buf(),
        _ => PathBuf::from("."),
    };
    fs::create_dir_all(&parent).map_err(input(parent.display()))?;
    let staging = tempfile::Builder::new().prefix(".topoinfer-").tempdir_in(&parent).map_err(input(parent.display()))?;
    dataset.write(staging.path()).map_err(|e: DatasetError| CliError::Input(e.to_string()))?;
    if out.exists() {
        fs::remove_dir(out).map_err(input(out.display()))?;
    }
    let staged = staging.keep();
    fs::rename(&staged, out).map_err(input(out.display()))?;
    Ok(())
}

fn to_json<T: Serialize>(value: &T) -> Result<Vec<u8>, CliError> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| CliError::Internal(e.to_string()))?;
    text.push('\n');
    Ok(text.into_bytes())
}

fn cmd_analyze(args: AnalyzeArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.dataset)?;
    let design = match &args.design {
        Some(p) => DesignMatrix::from_csv(fs::File::open(p).map_err(input(p.display()))?).map_err(input(p.display()))?,
        None => DesignMatrix::one_sample(dataset.meta.n_obs),
    };
    let contrast = match &args.contrast {
        Some(p) => contrast_from_csv(fs::File::open(p).map_err(input(p.display()))?).map_err(input(p.display()))?,
        None => {
            let mut c = vec![0.0; design.n_reg()];
            c[0] = 1.0;
            c
        }
    };
    let mesh = args.mesh.as_deref().map(read_mesh).transpose()?;
    let window = match &args.window {
        None => None,
        Some(text) => {
            let (lo, hi) = parse_interval(text, "--window")?;
            let axis = args.window_axis.unwrap_or(dataset.dims().len() - 1);
            Some(Window { axis, lo, hi })
        }
    };
    let options = AnalyzeOptions {
        height_p: args.height_p,
        alpha: args.alpha,
        smooth: args.smooth.clone(),
        window,
        two_sided: args.two_sided,
        norm_mode: args.norm.into(),
        connectivity: match args.connectivity {
            ConnectivityArg::Full => Connectivity::Full,
            ConnectivityArg::Face => Connectivity::Face,
        },
    };
    info!("analyzing {} observations over dims {:?}", dataset.meta.n_obs, dataset.dims());
    let analysis = analyze(&dataset, mesh, &design, &contrast, &options)?;
    info!("{} peaks, {} clusters", analysis.table.peaks.len(), analysis.table.clusters.len());
    let report = render_report(&analysis.table, &axis_headers(&dataset.meta, &analysis.space));
    let json = to_json(&analysis.table)?;
    fs::create_dir_all(&args.out).map_err(input(args.out.display()))?;
    commit_files(&[(args.out.join("results.json"), json), (args.out.join("report.txt"), report.into_bytes())])
}

fn default_thresholds() -> Vec<f64> {
    vec![2.0, 2.5, 3.0, 3.5]
}

fn default_alpha() -> f64 {
    0.05
}

fn default_max_cells() -> usize {
    DEFAULT_MAX_CELLS
}

/// Simulation config file: a generator description plus the thresholds and
/// FWE level to evaluate.
#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
struct SimulateConfig {
    dims: Vec<usize>,
    fwhm: Vec<f64>,
    n_realizations: usize,
    seed: u64,
    #[serde(default)]
    field: SimField,
    #[serde(default = "default_max_cells")]
    max_cells: usize,
    #[serde(default = "default_thresholds")]
    thresholds: Vec<f64>,
    #[serde(default = "default_alpha")]
    alpha: f64,
}

impl Default for SimulateConfig {
    fn default() -> Self {
        Self {
            dims: vec![64, 64],
            fwhm: vec![6.0, 6.0],
            n_realizations: 2000,
            seed: 2010,
            field: SimField::Gaussian,
            max_cells: DEFAULT_MAX_CELLS,
            thresholds: default_thresholds(),
            alpha: default_alpha(),
        }
    }
}

fn cmd_simulate(args: SimulateArgs) -> Result<(), CliError> {
    let cfg = match &args.config {
        Some(p) => {
            let text = fs::read_to_string(p).map_err(input(p.display()))?;
            serde_json::from_str::<SimulateConfig>(&text).map_err(input(p.display()))?
        }
        None => SimulateConfig::default(),
    };
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::Input(format!("alpha must lie in (0, 1), got {}", cfg.alpha)));
    }
    if cfg.thresholds.iter().any(|t| !t.is_finite()) {
        return Err(CliError::Input("thresholds must be finite".into()));
    }
    let sim = SimConfig { dims: cfg.dims, fwhm: cfg.fwhm, n_realizations: cfg.n_realizations, seed: cfg.seed, field: cfg.field, max_cells: cfg.max_cells };
    sim.validate().map_err(input("config"))?;
    info!("simulating {} realizations on {:?}", sim.n_realizations, sim.dims);
    let report = calibrate(&sim, &cfg.thresholds, cfg.alpha).map_err(input("simulation"))?;
    let json = to_json(&report)?;
    match &args.out {
        Some(path) => commit_files(&[(path.clone(), json)]),
        None => {
            use std::io::Write;
            std::io::stdout().write_all(&json).map_err(|e| CliError::Internal(e.to_string()))
        }
    }
}

fn sample_rate(dataset: &Dataset, flag: Option<f64>) -> Result<f64, CliError> {
    if let Some(fs) = flag {
        return if fs > 0.0 && fs.is_finite() { Ok(fs) } else { Err(CliError::Input(format!("--sample-rate must be positive, got {fs}"))) };
    }
    let last = dataset.dims().len() - 1;
    let unit = dataset.meta.units[last].as_str();
    let step = dataset.meta.step.as_ref().map(|s| s[last].abs());
    match (unit, step) {
        ("ms", Some(step)) => Ok(1000.0 / step),
        ("s", Some(step)) => Ok(1.0 / step),
        _ => Err(CliError::Input("cannot derive the sample rate: give --sample-rate or a time axis step in ms or s".into())),
    }
}

fn cmd_tf(args: TfArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.dataset)?;
    let freqs = parse_freqs(&args.freqs)?;
    let (lo, hi) = parse_interval(&args.band, "--band")?;
    let (fmin, fmax) = (freqs[0], freqs[freqs.len() - 1]);
    if lo < fmin || hi > fmax || !freqs.iter().any(|&f| f >= lo && f <= hi) {
        return Err(CliError::Input(format!("band {lo}:{hi} Hz lies outside the analysed frequencies {fmin}:{fmax} Hz")));
    }
    let fs = sample_rate(&dataset, args.sample_rate)?;
    let nt = *dataset.dims().last().expect("validated dims");
    let n_series = dataset.n_values() / nt;
    info!("{} series of {nt} samples at {fs} Hz", n_series * dataset.meta.n_obs);
    let mut observations = Vec::with_capacity(dataset.meta.n_obs);
    for obs in &dataset.observations {
        let mut out = vec![0.0; obs.len()];
        for s in 0..n_series {
            let series = &obs[s * nt..(s + 1) * nt];
            let tf = morlet_tf(series, fs, &freqs, args.cycles).map_err(input("tf"))?;
            let band = band_average(&tf, lo, hi).map_err(input("tf"))?;
            out[s * nt..(s + 1) * nt].copy_from_slice(&band);
        }
        observations.push(out);
    }
    let mut mask = dataset.mask.clone();
    if args.mask_edges {
        let lowest = freqs.iter().copied().find(|&f| f >= lo).expect("band holds a frequency");
        let half = wavelet_half_width(lowest, fs, args.cycles);
        let mut m = dataset.mask_or_full();
        for (v, slot) in m.iter_mut().enumerate() {
            let t = v % nt;
            if t < half || t + half >= nt {
                *slot = false;
            }
        }
        mask = Some(m);
    }
    let derived = Dataset { meta: dataset.meta.clone(), observations, mask };
    write_dataset(&derived, &args.out)
}

fn cmd_smooth(args: SmoothArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.dataset)?;
    let observations: Vec<Vec<f64>> = match (&args.fwhm, args.steps, args.tau) {
        (Some(fwhm), None, None) => {
            let mask = dataset.mask_or_full();
            dataset.observations.iter().map(|o| gaussian_smooth(o, dataset.dims(), Some(&mask), fwhm)).collect::<Result<_, _>>().map_err(input("smooth"))?
        }
        (None, Some(steps), Some(tau)) => {
            let mesh = args.mesh.as_deref().map(read_mesh).transpose()?;
            let space = topoinfer::pipeline::search_space(&dataset, mesh)?;
            dataset.observations.iter().map(|o| laplacian_smooth(&space, o, steps, tau)).collect::<Result<_, _>>().map_err(input("smooth"))?
        }
        _ => return Err(CliError::Input("give either --fwhm or --steps with --tau".into())),
    };
    let smoothed = Dataset { observations, ..dataset };
    write_dataset(&smoothed, &args.out)
}

fn cmd_info(args: InfoArgs) -> Result<(), CliError> {
    let dataset = read_dataset(&args.dataset)?;
    let mesh = args.mesh.as_deref().map(read_mesh).transpose()?;
    let space = topoinfer::pipeline::search_space(&dataset, mesh)?;
    let meta = &dataset.meta;
    println!("dataset      {}", args.dataset.join(META_FILE).display());
    println!("observations {}", meta.n_obs);
    for (a, ((name, unit), n)) in meta.axes.iter().zip(&meta.units).zip(&meta.dims).enumerate() {
        let (origin, step) = meta.axis_scale()[a];
        let label = if unit.is_empty() { name.clone() } else { format!("{name} [{unit}]") };
        println!("axis {a}       {label}: {n} samples, origin {origin}, step {step}");
    }
    let (lo, hi) = dataset.observations.iter().flatten().fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), &x| (lo.min(x), hi.max(x)));
    println!("value range  {lo} .. {hi}");
    println!("search vol.  {} of {} bins", space.volume(), space.len());
    match &space {
        SearchSpace::Lattice(l) => println!("euler char.  {}", l.counts().euler_characteristic()),
        SearchSpace::Mesh(m) => println!("mesh         {}-simplices: {}, vertices: {}", m.dim(), m.simplices().len(), m.len()),
    }
    let mu: Vec<String> = space.intrinsic_volumes().mu.iter().map(|x| format!("{x}")).collect();
    println!("intrinsic volumes {}", mu.join(" "));
    Ok(())
}

fn run(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Analyze(a) => cmd_analyze(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Tf(a) => cmd_tf(a),
        Command::Smooth(a) => cmd_smooth(a),
        Command::Info(a) => cmd_info(a),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
