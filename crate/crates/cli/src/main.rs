//! `kneeassist`: simulation, dataset, fitting, training and benchmark
//! pipelines.
//!
//! Exit codes: 0 success, 1 other failure, 2 configuration error, 3 the
//! simulation diverged, 4 schema or checkpoint mismatch.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use clap::{Parser, Subcommand};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use kneeassist::config::RunConfig;
use kneeassist::grf_net::{self, build_windows, GrfNet, NetParams, Standardizer};
use kneeassist::io::{self, write_atomic};
use kneeassist::sim::benchmark::compare_groups;
use kneeassist::sim::dataset::{calibrate_stiffness, generate_synthetic_dataset};
use kneeassist::sim::trial::{run_trial, GrfSource, Group};
use kneeassist::stiffness::{fit_stiffness, FitOptions};
use kneeassist::{Error, Terrain};

const EFFECTIVE_CONFIG: &str = "effective_config.txt";

#[derive(Parser)]
#[command(name = "kneeassist", version, about = "Knee exoskeleton assistance simulator")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one closed-loop trial.
    Simulate {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        group: Group,
        #[arg(long)]
        terrain: Terrain,
        #[arg(long)]
        seed: Option<u64>,
        /// Fit the stiffness model to an unassisted calibration trial first.
        #[arg(long)]
        calibrate: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Generate a synthetic IMU / ground force / gait dataset.
    GenDataset {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit the stiffness model to a gait CSV or a dataset directory.
    FitStiffness {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Train the ground force network on a dataset directory.
    TrainGrf {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Evaluate a trained checkpoint on a dataset directory.
    EvalGrf {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run groups A-D on both terrains over several seeds.
    Benchmark {
        #[arg(long)]
        config: Option<PathBuf>,
        /// Number of seeds, starting at the configured seed.
        #[arg(long)]
        seeds: Option<usize>,
        #[arg(long)]
        out: PathBuf,
    },
}

struct Failure {
    code: u8,
    message: String,
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        let code = match &e {
            Error::Config(_) | Error::InvalidParam(_) => 2,
            e if e.is_divergence() => 3,
            Error::Schema(_) | Error::Checkpoint(_) | Error::Csv(_) | Error::Empty(_) | Error::Shape(_) => 4,
            _ => 1,
        };
        Failure { code, message: e.to_string() }
    }
}

type CmdResult<T = ()> = std::result::Result<T, Failure>;

fn load_config(path: Option<&Path>) -> CmdResult<RunConfig> {
    let Some(path) = path else {
        return Ok(RunConfig::default());
    };
    let text = fs::read_to_string(path).map_err(|e| Failure {
        code: 2,
        message: format!("cannot read config {}: {e}", path.display()),
    })?;
    Ok(RunConfig::parse(&text)?)
}

/// Files are assembled in memory first; nothing is written unless every
/// output was produced.
struct Outputs {
    dir: PathBuf,
    files: Vec<(String, Vec<u8>)>,
}

impl Outputs {
    fn new(dir: &Path) -> Self {
        Self { dir: dir.to_path_buf(), files: Vec::new() }
    }

    fn add(&mut self, name: &str, contents: impl Into<Vec<u8>>) {
        self.files.push((name.to_string(), contents.into()));
    }

    fn commit(self) -> CmdResult {
        fs::create_dir_all(&self.dir).map_err(Error::from)?;
        for (name, bytes) in &self.files {
            write_atomic(&self.dir.join(name), bytes)?;
        }
        Ok(())
    }
}

fn attach_network(cfg: &RunConfig, trial: &mut kneeassist::sim::trial::TrialConfig) -> CmdResult {
    if let Some(path) = cfg.checkpoint_path() {
        let net = GrfNet::load(&path)?;
        trial.grf_source = GrfSource::Network(Arc::new(net));
    }
    Ok(())
}

fn simulate(
    config: Option<&Path>,
    group: Group,
    terrain: Terrain,
    seed: Option<u64>,
    calibrate: bool,
    out: &Path,
) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    if calibrate {
        let fit = calibrate_stiffness(&cfg.trial(), cfg.benchmark.calibration_seed)?;
        cfg.sim.stiffness = fit.params;
    }
    let mut trial = cfg.trial();
    attach_network(&cfg, &mut trial)?;
    let result = run_trial(group, terrain, &trial, cfg.seed)?;
    let m = &result.metrics;
    println!(
        "group {group} {} seed {}: tracking_rmse {:.4} rad/s, human_rms {:.3} N·m, exo_rms {:.3} N·m, peak_exo {:.3} N·m, strides {}",
        terrain.as_str(),
        cfg.seed,
        m.tracking_rmse,
        m.human_rms,
        m.exo_rms,
        m.peak_exo,
        m.strides
    );
    let mut o = Outputs::new(out);
    o.add("timeseries.csv", io::timeseries_csv(&result, trial.subject.body_weight())?);
    o.add("metrics.csv", io::metrics_csv(&result)?);
    o.add(EFFECTIVE_CONFIG, cfg.to_text());
    o.commit()
}

fn gen_dataset(config: Option<&Path>, seed: Option<u64>, out: &Path) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let data = generate_synthetic_dataset(&cfg.dataset(), cfg.seed)?;
    let files = io::dataset_files(&data)?;
    println!(
        "{} rows at {} Hz over {} terrain(s), {} gait samples",
        files.manifest.rows,
        files.manifest.rate_hz,
        files.manifest.terrains.len(),
        data.gait.len()
    );
    let mut o = Outputs::new(out);
    o.add(io::IMU_FILE, files.imu);
    o.add(io::LABEL_FILE, files.labels);
    o.add(io::GAIT_FILE, files.gait);
    o.add(io::MANIFEST_FILE, files.manifest.to_text());
    o.add(EFFECTIVE_CONFIG, cfg.to_text());
    o.commit()
}

fn fit(dataset: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let samples = if dataset.is_dir() {
        io::read_dataset(dataset)?.1.gait
    } else {
        io::parse_gait(&fs::read_to_string(dataset).map_err(Error::from)?)?
    };
    let report = fit_stiffness(&samples, &FitOptions { seed: cfg.seed, ..Default::default() })?;
    let p = report.params;
    let mut text = String::from("# kneeassist stiffness fit v1\n");
    writeln!(text, "# samples = {}", samples.len()).unwrap();
    writeln!(text, "# sse = {}", report.sse).unwrap();
    writeln!(text, "# best_start = {}", report.best_start).unwrap();
    for (k, v) in [
        ("stiffness.k_st", p.k_st),
        ("stiffness.k_sw", p.k_sw),
        ("stiffness.theta0_st", p.theta0_st),
        ("stiffness.theta0_sw", p.theta0_sw),
        ("stiffness.a", p.a),
        ("stiffness.b", p.b),
    ] {
        writeln!(text, "{k} = {v}").unwrap();
    }
    print!("{text}");
    cfg.sim.stiffness = p;
    let mut o = Outputs::new(out);
    o.add("stiffness.txt", text);
    o.add(EFFECTIVE_CONFIG, cfg.to_text());
    o.commit()
}

fn train_grf(dataset: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    let (_, data) = io::read_dataset(dataset)?;
    let standardizer = Standardizer::fit(data.rows.iter().map(|r| &r.channels))?;
    let set = build_windows(&data.segments(), cfg.net.window, cfg.net.stride, &standardizer)?;
    let init = NetParams::init(cfg.net.shape, &mut ChaCha8Rng::seed_from_u64(cfg.seed))?;
    let (params, report) = grf_net::train(init, &set, &cfg.train_config())?;
    let net = GrfNet::new(params, standardizer, cfg.net.window)?;
    let eval = net.evaluate(&set)?;
    println!(
        "trained on {} windows ({} validation), {} epochs, best epoch {} (validation loss {:.5}, initial training loss {:.5})",
        report.train_windows,
        report.val_windows,
        report.epochs.len(),
        report.best_epoch,
        report.best_val_loss,
        report.initial_train_loss
    );
    print!("{}", eval_table(&eval));

    let mut log = String::from("# schema: kneeassist.train_log v1\nepoch,train_loss,val_loss,lr\n");
    for e in &report.epochs {
        writeln!(log, "{},{},{},{}", e.epoch, e.train_loss, e.val_loss, e.lr).unwrap();
    }
    let mut o = Outputs::new(out);
    o.add("grf_net.ckpt", grf_net::checkpoint::to_string(&net));
    o.add("train_log.csv", log);
    o.add(EFFECTIVE_CONFIG, cfg.to_text());
    o.commit()
}

fn eval_table(r: &grf_net::EvalReport) -> String {
    let mut s = format!("{:<8} {:>10} {:>10} {:>8} {:>9}\n", "terrain", "F_x RMSE", "F_z RMSE", "stance", "accuracy");
    for t in &r.per_terrain {
        writeln!(
            s,
            "{:<8} {:>10.4} {:>10.4} {:>8} {:>9.3}",
            t.terrain.as_str(),
            t.fx_rmse,
            t.fz_rmse,
            t.stance_windows,
            t.accuracy
        )
        .unwrap();
    }
    writeln!(s, "{:<8} {:>10} {:>10} {:>8} {:>9.3}", "all", "", "", "", r.accuracy).unwrap();
    s
}

fn eval_grf(dataset: &Path, checkpoint: &Path, config: Option<&Path>, out: &Path) -> CmdResult {
    let mut cfg = load_config(config)?;
    let net = GrfNet::load(checkpoint)?;
    let (_, data) = io::read_dataset(dataset)?;
    let set = build_windows(&data.segments(), net.window_len, cfg.net.stride, &net.standardizer)?;
    let report = net.evaluate(&set)?;
    print!("{}", eval_table(&report));
    cfg.checkpoint = checkpoint.display().to_string();
    cfg.net.window = net.window_len;
    let mut o = Outputs::new(out);
    o.add("grf_eval.csv", io::grf_eval_csv(&report)?);
    o.add(EFFECTIVE_CONFIG, cfg.to_text());
    o.commit()
}

fn benchmark(config: Option<&Path>, seeds: Option<usize>, out: &Path) -> CmdResult {
    let mut cfg = load_config(config)?;
    if let Some(n) = seeds {
        if n == 0 {
            return Err(Error::Config("--seeds must be >= 1".into()).into());
        }
        cfg.benchmark.seeds = n;
    }
    let mut bench = cfg.benchmark();
    attach_network(&cfg, &mut bench.trial)?;
    let seed_list: Vec<u64> = (0..cfg.benchmark.seeds as u64).map(|k| cfg.seed + k).collect();
    let report = compare_groups(&bench, &seed_list)?;
    let summary = report.summary_text();
    print!("{summary}");
    let mut o = Outputs::new(out);
    o.add("report.csv", io::benchmark_csv(&report)?);
    o.add("curves.csv", io::curves_csv(&report)?);
    o.add("summary.txt", summary);
    o.add(EFFECTIVE_CONFIG, cfg.to_text());
    o.commit()
}

fn run(cli: Cli) -> CmdResult {
    match cli.command {
        Command::Simulate { config, group, terrain, seed, calibrate, out } => {
            simulate(config.as_deref(), group, terrain, seed, calibrate, &out)
        }
        Command::GenDataset { config, seed, out } => gen_dataset(config.as_deref(), seed, &out),
        Command::FitStiffness { dataset, config, seed, out } => fit(&dataset, config.as_deref(), seed, &out),
        Command::TrainGrf { dataset, config, seed, out } => train_grf(&dataset, config.as_deref(), seed, &out),
        Command::EvalGrf { dataset, checkpoint, config, out } => {
            eval_grf(&dataset, &checkpoint, config.as_deref(), &out)
        }
        Command::Benchmark { config, seeds, out } => benchmark(config.as_deref(), seeds, &out),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("error: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}
