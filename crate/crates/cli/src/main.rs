use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use kpyp::config::RunConfig;
use kpyp::io::{self, ImageFeatures, TabularSpec};
use kpyp::metrics::{adjusted_rand_index, normalized_mutual_info};
use kpyp::prior::{mean_urn_path, UrnPath};
use kpyp::report::RunReport;
use kpyp::{fit, Dataset, FitResult};

const SEED_ENV: &str = "KPYP_SEED";

#[derive(Parser)]
#[command(name = "kpyp", version, about = "Kernel Pitman-Yor mixtures with truncated variational Bayes")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Cluster a CSV table of features and locations.
    Fit(FitArgs),
    /// Segment a PGM/PPM image.
    Segment(SegmentArgs),
    /// Simulate urn trajectories of the number of clusters.
    SamplePrior(SamplePriorArgs),
    /// Compare two label files.
    Metrics(MetricsArgs),
}

#[derive(Args)]
struct FitArgs {
    /// Input CSV file.
    input: PathBuf,
    /// Output directory (created if missing).
    #[arg(short, long, default_value = "kpyp-out")]
    out: PathBuf,
    #[command(flatten)]
    settings: Settings,
}

#[derive(Args)]
struct SegmentArgs {
    /// Input PGM or PPM image.
    input: PathBuf,
    #[arg(short, long, default_value = "kpyp-out")]
    out: PathBuf,
    #[command(flatten)]
    settings: Settings,
}

/// Every configuration key as a flag; flags win over the config file.
#[derive(Args, Default)]
struct Settings {
    /// Flat key=value configuration file.
    #[arg(short, long)]
    config: Option<PathBuf>,
    #[arg(long)]
    truncation: Option<String>,
    #[arg(long)]
    alpha_shape: Option<String>,
    #[arg(long)]
    alpha_rate: Option<String>,
    #[arg(long)]
    max_iters: Option<String>,
    /// Relative free-energy tolerance.
    #[arg(long)]
    tol: Option<String>,
    /// Random seed (the KPYP_SEED variable overrides the config file value).
    #[arg(long)]
    seed: Option<String>,
    /// random | optimized
    #[arg(long)]
    location_mode: Option<String>,
    #[arg(long)]
    shared_width: Option<String>,
    /// rbf | unit
    #[arg(long)]
    kernel: Option<String>,
    #[arg(long)]
    kernel_floor: Option<String>,
    #[arg(long)]
    initial_width: Option<String>,
    #[arg(long)]
    location_every: Option<String>,
    #[arg(long)]
    location_budget: Option<String>,
    /// full | diagonal
    #[arg(long)]
    covariance: Option<String>,
    #[arg(long)]
    init_clusters: Option<String>,
    /// Feature columns (names or 0-based indices, comma separated).
    #[arg(long)]
    features: Option<String>,
    /// Location columns.
    #[arg(long)]
    locations: Option<String>,
    /// Ground-truth label column; enables ARI/NMI in the report.
    #[arg(long)]
    label: Option<String>,
    /// Whether the CSV has a header row.
    #[arg(long)]
    header: Option<String>,
    /// rgb | gray
    #[arg(long)]
    color: Option<String>,
    /// raw | window-mean-std
    #[arg(long)]
    feature: Option<String>,
    /// Also write per-observation responsibilities.
    #[arg(long)]
    responsibilities: Option<String>,
    /// Worker threads (0 = all cores, 1 = sequential).
    #[arg(long)]
    jobs: Option<String>,
    /// Require bitwise-reproducible reductions.
    #[arg(long, num_args = 0..=1, default_missing_value = "true")]
    deterministic: Option<String>,
}

impl Settings {
    fn flags(&self) -> Vec<(&'static str, &String)> {
        let all = [
            ("truncation", &self.truncation),
            ("alpha_shape", &self.alpha_shape),
            ("alpha_rate", &self.alpha_rate),
            ("max_iters", &self.max_iters),
            ("tol", &self.tol),
            ("seed", &self.seed),
            ("location_mode", &self.location_mode),
            ("shared_width", &self.shared_width),
            ("kernel", &self.kernel),
            ("kernel_floor", &self.kernel_floor),
            ("initial_width", &self.initial_width),
            ("location_every", &self.location_every),
            ("location_budget", &self.location_budget),
            ("covariance", &self.covariance),
            ("init_clusters", &self.init_clusters),
            ("features", &self.features),
            ("locations", &self.locations),
            ("label", &self.label),
            ("header", &self.header),
            ("color", &self.color),
            ("feature", &self.feature),
            ("responsibilities", &self.responsibilities),
            ("jobs", &self.jobs),
            ("deterministic", &self.deterministic),
        ];
        all.into_iter().filter_map(|(k, v)| v.as_ref().map(|v| (k, v))).collect()
    }

    /// Config file, then the seed variable, then flags.
    fn resolve(&self) -> Result<RunConfig> {
        let mut config = RunConfig::default();
        if let Some(path) = &self.config {
            config.apply_file(path)?;
        }
        if let Ok(seed) = std::env::var(SEED_ENV) {
            config.set("seed", &seed).context(SEED_ENV)?;
        }
        for (key, value) in self.flags() {
            config.set(key, value).with_context(|| format!("--{}", key.replace('_', "-")))?;
        }
        config.vb.parallel = config.jobs != 1;
        Ok(config)
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum PriorKind {
    Dp,
    Pyp,
    Kpyp,
}

#[derive(Args)]
struct SamplePriorArgs {
    #[arg(long, value_enum, default_value = "pyp")]
    prior: PriorKind,
    #[arg(long, default_value_t = 1.0)]
    alpha: f64,
    /// Discount for the Pitman-Yor urn.
    #[arg(long, default_value_t = 0.5)]
    discount: f64,
    /// Kernel width for the kernel urn.
    #[arg(long, default_value_t = 0.2)]
    width: f64,
    /// Location dimension for the kernel urn.
    #[arg(long, default_value_t = 2)]
    dim: usize,
    #[arg(long, default_value_t = 1e-6)]
    floor: f64,
    #[arg(long, default_value_t = 1000)]
    draws: usize,
    /// Independent paths to average.
    #[arg(long, default_value_t = 1)]
    paths: usize,
    #[arg(long)]
    seed: Option<u64>,
    /// Trajectory file (`draw,clusters` CSV); stdout when omitted.
    #[arg(short, long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct MetricsArgs {
    /// Reference labels, one integer per line.
    truth: PathBuf,
    /// Predicted labels, one integer per line.
    predicted: PathBuf,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let outcome = match cli.command {
        Command::Fit(args) => run_fit(&args.input, &args.out, &args.settings),
        Command::Segment(args) => run_segment(&args.input, &args.out, &args.settings),
        Command::SamplePrior(args) => sample_prior(&args).map(|()| true),
        Command::Metrics(args) => metrics(&args).map(|()| true),
    };
    match outcome {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(2),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn thread_pool(jobs: usize) -> Result<rayon::ThreadPool> {
    rayon::ThreadPoolBuilder::new().num_threads(jobs).build().context("building thread pool")
}

fn fit_in_pool(data: &Dataset, config: &RunConfig) -> Result<(FitResult, f64)> {
    let start = Instant::now();
    let result = thread_pool(config.jobs)?.install(|| fit(data, &config.vb))?;
    Ok((result, start.elapsed().as_secs_f64()))
}

fn write_outputs(out: &Path, config: &RunConfig, result: &FitResult, report: &RunReport) -> Result<()> {
    let create = |name: &str| -> Result<BufWriter<fs::File>> {
        let path = out.join(name);
        Ok(BufWriter::new(fs::File::create(&path).with_context(|| format!("creating {}", path.display()))?))
    };
    io::write_labels(create("labels.txt")?, &report.hard_labels)?;
    io::write_trace(create("trace.csv")?, &result.state.free_energy_trace)?;
    if config.write_responsibilities {
        io::write_responsibilities(create("responsibilities.csv")?, &result.state.responsibilities)?;
    }
    serde_json::to_writer_pretty(create("report.json")?, report)?;
    Ok(())
}

fn summarize(report: &RunReport) {
    for w in &report.warnings {
        eprintln!("warning: {w}");
    }
    let status = if report.converged { "converged" } else { "stopped at max-iters" };
    eprint!(
        "{status} after {} sweeps: free energy {:.6}, <alpha> {:.4}, {} active clusters",
        report.iterations, report.free_energy, report.alpha_mean, report.active_clusters
    );
    match &report.metrics {
        Some(m) => eprintln!(", ARI {:.4}, NMI {:.4}", m.ari, m.nmi),
        None => eprintln!(),
    }
}

fn run_fit(input: &Path, out: &Path, settings: &Settings) -> Result<bool> {
    let config = settings.resolve()?;
    if config.features.is_empty() || config.locations.is_empty() {
        bail!("both feature and location columns are required (--features, --locations)");
    }
    let spec = TabularSpec {
        features: config.features.clone(),
        locations: config.locations.clone(),
        label: config.label.clone(),
        has_header: config.header,
    };
    let data = io::load_tabular(input, &spec)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (result, secs) = fit_in_pool(&data, &config)?;
    let report = RunReport::new(&result, data.labels(), secs)?;
    write_outputs(out, &config, &result, &report)?;
    summarize(&report);
    Ok(report.converged)
}

fn run_segment(input: &Path, out: &Path, settings: &Settings) -> Result<bool> {
    let config = settings.resolve()?;
    let features = ImageFeatures { color: config.color, window_stats: config.window_stats };
    let (image, data) = io::load_image(input, features)?;
    fs::create_dir_all(out).with_context(|| format!("creating {}", out.display()))?;
    let (result, secs) = fit_in_pool(&data, &config)?;
    let report = RunReport::new(&result, None, secs)?;
    write_outputs(out, &config, &result, &report)?;
    let map = io::label_map(&result.state.hard_labels(), image.width, image.height)?;
    io::write_image(&out.join("labels.ppm"), &map)?;
    summarize(&report);
    Ok(report.converged)
}

fn sample_prior(args: &SamplePriorArgs) -> Result<()> {
    let seed = match (args.seed, std::env::var(SEED_ENV)) {
        (Some(s), _) => s,
        (None, Ok(s)) => s.trim().parse().with_context(|| format!("{SEED_ENV}={s} is not an integer"))?,
        (None, Err(_)) => 0,
    };
    let path = match args.prior {
        PriorKind::Dp => UrnPath::Dp,
        PriorKind::Pyp => UrnPath::Pyp { discount: args.discount },
        PriorKind::Kpyp => UrnPath::Kpyp { width: args.width, dim: args.dim, floor: args.floor },
    };
    if args.paths == 0 {
        bail!("--paths must be at least 1");
    }
    let mean = mean_urn_path(&path, args.alpha, args.draws, args.paths, seed)?;
    let mut text = String::from("draw,clusters\n");
    for (i, m) in mean.iter().enumerate() {
        text.push_str(&format!("{},{}\n", i + 1, m));
    }
    match &args.out {
        Some(p) => fs::write(p, text).with_context(|| format!("writing {}", p.display()))?,
        None => print!("{text}"),
    }
    Ok(())
}

fn metrics(args: &MetricsArgs) -> Result<()> {
    let truth = io::read_labels_file(&args.truth)?;
    let predicted = io::read_labels_file(&args.predicted)?;
    let ari = adjusted_rand_index(&truth, &predicted)?;
    let nmi = normalized_mutual_info(&truth, &predicted)?;
    println!("{}", serde_json::json!({ "ari": ari, "nmi": nmi }));
    Ok(())
}
