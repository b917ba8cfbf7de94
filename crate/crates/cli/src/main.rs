//! `lfm`: simulate datasets, run latent-force inference, score posteriors and
//! run the COVID-19 pipeline.

mod config;

use std::fs;
use std::io::Write;
use std::ops::Range;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use lfm_core::covid_ingest::{
    load_events, parse_jhu_csv, run_covid, to_sird, CovidOptions, CONFIRMED_FILE, DEATHS_FILE,
    DEFAULT_HOLDOUT_DAYS, DEFAULT_HORIZON_DAYS, RECOVERED_FILE,
};
use lfm_core::filter_smoother::FilterMode;
use lfm_core::metrics::{score, ScoreReport};
use lfm_core::pipeline::{check_same_grid, read_latent_marginals, run_inference, InferenceOptions, RunReport};
use lfm_core::problems::{ProblemConfig, GERMANY_POPULATION};
use lfm_core::simulate::{config_hash, simulate, Dataset, FileHeader, GroundTruth};
use lfm_core::{Error, Result};
use serde::Serialize;

use config::{parse_seeds, ProblemSource, RunConfig};

const JHU_BASE_URL: &str =
    "https://raw.githubusercontent.com/CSSEGISandData/COVID-19/master/csse_covid_19_data/csse_covid_19_time_series";

#[derive(Debug, Parser)]
#[command(name = "lfm", version, about = "Latent force inference with probabilistic ODE filtering")]
struct Cli {
    /// Repeat for more log output (-v info, -vv debug).
    #[arg(short, long, global = true, action = clap::ArgAction::Count)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Draw a latent force, solve the ODE and write a noisy dataset plus ground truth.
    Simulate(SimulateArgs),
    /// Filter and smooth a dataset in one forward-backward pass.
    Infer(InferArgs),
    /// Score a posterior CSV against a ground-truth CSV.
    Eval(EvalArgs),
    /// Run the SIRD contact-rate model on a JHU CSSE snapshot.
    Covid(CovidArgs),
    /// Download the JHU CSSE global time-series files.
    Fetch(FetchArgs),
}

#[derive(Debug, Args)]
struct CommonArgs {
    /// JSON run configuration; flags override its fields.
    #[arg(long)]
    config: Option<PathBuf>,
    /// van-der-pol, lotka-volterra or sird.
    #[arg(long)]
    problem: Option<String>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Sweep `a..b` (end exclusive) on worker threads, one subdirectory per seed.
    #[arg(long, conflicts_with = "seed")]
    seeds: Option<String>,
}

#[derive(Debug, Args)]
struct SimulateArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Keep every n-th grid point as an observation.
    #[arg(long)]
    stride: Option<usize>,
    /// Observation noise std as a fraction of each coordinate's std.
    #[arg(long)]
    noise_scale: Option<f64>,
}

#[derive(Debug, Args)]
struct InferArgs {
    #[command(flatten)]
    common: CommonArgs,
    /// Dataset CSV written by `simulate` (its JSON metadata must sit next to it).
    #[arg(long, conflicts_with = "simulate")]
    data: Option<PathBuf>,
    /// Simulate the dataset from the problem's simulation settings.
    #[arg(long)]
    simulate: bool,
    /// Use the dense-covariance filter instead of the square-root one.
    #[arg(long)]
    dense: bool,
    /// ODE pseudo-observation variance λ².
    #[arg(long)]
    ode_noise: Option<f64>,
    /// Extend the grid this far past the last datum.
    #[arg(long)]
    extrapolate: Option<f64>,
}

#[derive(Debug, Args)]
struct EvalArgs {
    #[arg(long)]
    posterior: PathBuf,
    #[arg(long)]
    truth: PathBuf,
    #[arg(long)]
    problem: Option<String>,
    #[arg(long)]
    config: Option<PathBuf>,
    /// Write the score here instead of standard output.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct CovidArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Directory holding the three JHU CSSE time-series files.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long, default_value = "Germany")]
    country: String,
    /// Persons; defaults to Germany's population for Germany.
    #[arg(long)]
    population: Option<f64>,
    /// Model the compartments on the log scale.
    #[arg(long)]
    log_space: bool,
    #[arg(long, default_value_t = DEFAULT_HOLDOUT_DAYS)]
    holdout: usize,
    /// Days past the last training day.
    #[arg(long)]
    horizon: Option<usize>,
    /// Event marks, one `YYYY-MM-DD,label` per line.
    #[arg(long)]
    events: Option<PathBuf>,
    #[arg(long)]
    dense: bool,
    #[arg(long)]
    ode_noise: Option<f64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct FetchArgs {
    #[arg(long, default_value = "data/jhu_live")]
    out: PathBuf,
    #[arg(long, default_value = JHU_BASE_URL)]
    base_url: String,
}

fn exit_code(e: &Error) -> u8 {
    match e {
        Error::Argument(_) => 1,
        Error::Parse { .. } | Error::Data(_) | Error::Io(_) | Error::Json(_) | Error::Csv(_) => 2,
        Error::Numerical { .. } | Error::Evaluation(_) => 3,
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let level = match cli.verbose {
        0 => "warn",
        1 => "info",
        _ => "debug",
    };
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let result = match cli.command {
        Command::Simulate(a) => cmd_simulate(a),
        Command::Infer(a) => cmd_infer(a),
        Command::Eval(a) => cmd_eval(a),
        Command::Covid(a) => cmd_covid(a),
        Command::Fetch(a) => cmd_fetch(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            if matches!(e, Error::Numerical { .. }) {
                eprintln!("hint: keep the square-root filter, or add a small --ode-noise such as 1e-8");
            }
            ExitCode::from(exit_code(&e))
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

fn merge_common(common: &CommonArgs) -> Result<(RunConfig, Option<Range<u64>>)> {
    let mut rc = RunConfig::load(common.config.as_deref())?;
    if let Some(p) = &common.problem {
        rc.problem = Some(ProblemSource::Name(p.clone()));
    }
    if let Some(o) = &common.out {
        rc.output = Some(o.clone());
    }
    if let Some(s) = common.seed {
        rc.seed = Some(s);
    }
    let seeds = common.seeds.as_deref().map(parse_seeds).transpose()?;
    Ok((rc, seeds))
}

/// Runs `f` for every seed on a pool of scoped threads; results come back in
/// seed order and the first failure (by seed) is returned.
fn sweep<T: Send>(seeds: Range<u64>, f: impl Fn(u64) -> Result<T> + Sync) -> Result<Vec<(u64, T)>> {
    let all: Vec<u64> = seeds.collect();
    let results: Mutex<Vec<Option<Result<T>>>> = Mutex::new((0..all.len()).map(|_| None).collect());
    let next = AtomicUsize::new(0);
    let workers = std::thread::available_parallelism().map_or(1, |n| n.get()).min(all.len());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= all.len() {
                    break;
                }
                let r = f(all[i]);
                results.lock().expect("no worker panics while holding the lock")[i] = Some(r);
            });
        }
    });
    let results = results.into_inner().expect("workers joined");
    all.into_iter()
        .zip(results)
        .map(|(seed, r)| r.expect("every seed ran").map(|v| (seed, v)))
        .collect()
}

fn seed_dir(out: &Path, seed: u64, sweeping: bool) -> PathBuf {
    if sweeping {
        out.join(format!("seed-{seed}"))
    } else {
        out.to_path_buf()
    }
}

fn write_simulation(cfg: &ProblemConfig, seed: u64, dir: &Path) -> Result<(Dataset, GroundTruth)> {
    let sim = simulate(cfg, seed)?;
    let field = cfg.vector_field()?;
    sim.dataset.write(&dir.join("dataset.csv"))?;
    sim.truth
        .write_csv(&dir.join("truth.csv"), &sim.dataset.header(), &field.state_names(), &field.latent_names())?;
    log::info!(
        "seed {seed}: {} observations, {} grid points, {} latent draw(s)",
        sim.dataset.times.len(),
        sim.truth.grid.len(),
        sim.truth.attempts
    );
    Ok((sim.dataset, sim.truth))
}

fn cmd_simulate(args: SimulateArgs) -> Result<()> {
    let (mut rc, seeds) = merge_common(&args.common)?;
    if rc.dataset.is_some() {
        return Err(Error::argument("simulate produces a dataset; remove the \"dataset\" field"));
    }
    let mut cfg = rc.problem_config()?;
    let mut sim = cfg
        .simulation
        .clone()
        .ok_or_else(|| Error::argument(format!("problem '{}' has no simulation settings", cfg.name())))?;
    if let Some(s) = args.stride {
        sim.obs_stride = s;
    }
    if let Some(n) = args.noise_scale {
        sim.noise_scale = n;
    }
    cfg.simulation = Some(sim.clone());
    rc.simulation = Some(sim);
    cfg.validate()?;
    let out = rc.output_dir();
    match seeds {
        Some(range) => {
            sweep(range, |seed| write_simulation(&cfg, seed, &seed_dir(&out, seed, true)))?;
        }
        None => {
            write_simulation(&cfg, rc.seed.unwrap_or(0), &out)?;
        }
    }
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalReport {
    problem: String,
    config_hash: String,
    seed: u64,
    #[serde(flatten)]
    score: ScoreReport,
}

#[derive(Debug, Serialize)]
struct Timings {
    config_hash: String,
    seed: u64,
    forward_seconds: f64,
    backward_seconds: f64,
    total_seconds: f64,
}

struct InferOutcome {
    score: Option<ScoreReport>,
}

fn infer_one(
    cfg: &ProblemConfig,
    rc: &RunConfig,
    seed: u64,
    ode_noise: Option<f64>,
    dir: &Path,
) -> Result<InferOutcome> {
    let start = Instant::now();
    let (dataset, truth) = match &rc.dataset {
        Some(path) => (Dataset::read(path)?, None),
        None => {
            let (d, t) = write_simulation(cfg, seed, dir)?;
            (d, Some(t))
        }
    };
    let last = *dataset
        .times
        .last()
        .ok_or_else(|| Error::Data("dataset has no observations".into()))?;
    let opts = InferenceOptions {
        mode: rc.mode(),
        ode_noise,
        data_noise: None,
        t_end: rc.extrapolate.map(|h| last + h),
    };
    let hash = config_hash(&(cfg, &opts))?;
    let run = run_inference(cfg, &dataset, &opts, &hash)?;
    let header = FileHeader {
        config_hash: hash.clone(),
        seed: dataset.meta.seed,
    };
    run.summary.write_csv(&dir.join("posterior.csv"), &header)?;
    write_json(&dir.join("report.json"), &run.report)?;
    let stats = &run.trajectory.stats;
    write_json(
        &dir.join("timings.json"),
        &Timings {
            config_hash: hash.clone(),
            seed: header.seed,
            forward_seconds: stats.forward_seconds,
            backward_seconds: stats.backward_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    log::info!(
        "seed {}: {} grid points, {} data and {} ODE updates, {:.3}s forward, {:.3}s backward",
        header.seed,
        run.report.grid_points,
        run.report.data_events,
        run.report.ode_events,
        stats.forward_seconds,
        stats.backward_seconds
    );
    let score = match truth {
        Some(truth) => {
            let s = lfm_core::pipeline::score_against_truth(cfg, &run.summary, &truth)?;
            write_json(
                &dir.join("score.json"),
                &EvalReport {
                    problem: cfg.name().to_string(),
                    config_hash: hash,
                    seed: header.seed,
                    score: s.clone(),
                },
            )?;
            Some(s)
        }
        None => None,
    };
    Ok(InferOutcome { score })
}

#[derive(Debug, Serialize)]
struct SweepRow {
    seed: u64,
    chi2: f64,
    chi2_in_ci90: bool,
    rmse_native: f64,
    rmse_linked: f64,
}

#[derive(Debug, Serialize)]
struct SweepSummary {
    problem: String,
    config_hash: String,
    seeds: (u64, u64),
    chi2_ci90: (f64, f64),
    median_chi2: f64,
    median_chi2_in_ci90: bool,
    median_rmse_native: f64,
    median_rmse_linked: f64,
    runs: Vec<SweepRow>,
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

fn cmd_infer(args: InferArgs) -> Result<()> {
    let (mut rc, seeds) = merge_common(&args.common)?;
    if let Some(d) = &args.data {
        rc.dataset = Some(d.clone());
        rc.simulation = None;
    }
    if args.dense {
        rc.filter.square_root = Some(false);
    }
    if let Some(l) = args.ode_noise {
        rc.filter.ode_noise = Some(l);
    }
    if let Some(h) = args.extrapolate {
        rc.extrapolate = Some(h);
    }
    let mut cfg = rc.problem_config()?;
    if args.simulate && rc.simulation.is_none() {
        rc.simulation = Some(
            cfg.simulation
                .clone()
                .ok_or_else(|| Error::argument(format!("problem '{}' has no simulation settings", cfg.name())))?,
        );
    }
    rc.check_single_source()?;
    if let Some(sim) = &rc.simulation {
        cfg.simulation = Some(sim.clone());
    }
    if let Some(h) = rc.extrapolate {
        if !(h >= 0.0) {
            return Err(Error::argument(format!("extrapolation horizon must be non-negative, got {h}")));
        }
    }
    let out = rc.output_dir();
    let ode_noise = rc.filter.ode_noise;
    match seeds {
        None => {
            infer_one(&cfg, &rc, rc.seed.unwrap_or(0), ode_noise, &out)?;
        }
        Some(range) => {
            if rc.dataset.is_some() {
                return Err(Error::argument("--seeds needs a simulated dataset (--simulate), not --data"));
            }
            let bounds = (range.start, range.end);
            let results = sweep(range, |seed| infer_one(&cfg, &rc, seed, ode_noise, &seed_dir(&out, seed, true)))?;
            let runs: Vec<SweepRow> = results
                .iter()
                .map(|(seed, o)| {
                    let s = o.score.as_ref().expect("simulated runs are scored");
                    SweepRow {
                        seed: *seed,
                        chi2: s.chi2,
                        chi2_in_ci90: s.chi2_in_ci90,
                        rmse_native: s.rmse_native,
                        rmse_linked: s.rmse_linked,
                    }
                })
                .collect();
            let ci = results[0].1.score.as_ref().expect("scored").chi2_ci90;
            let median_chi2 = median(runs.iter().map(|r| r.chi2).collect());
            let summary = SweepSummary {
                problem: cfg.name().to_string(),
                config_hash: config_hash(&cfg)?,
                seeds: bounds,
                chi2_ci90: ci,
                median_chi2,
                median_chi2_in_ci90: ci.0 < median_chi2 && median_chi2 < ci.1,
                median_rmse_native: median(runs.iter().map(|r| r.rmse_native).collect()),
                median_rmse_linked: median(runs.iter().map(|r| r.rmse_linked).collect()),
                runs,
            };
            write_json(&out.join("sweep.json"), &summary)?;
            println!(
                "{}: median chi2 {:.4} (90% interval {:.4}..{:.4}), median rmse {:.4}",
                summary.problem, summary.median_chi2, ci.0, ci.1, summary.median_rmse_native
            );
        }
    }
    Ok(())
}

fn cmd_eval(args: EvalArgs) -> Result<()> {
    let mut rc = RunConfig::load(args.config.as_deref())?;
    if let Some(p) = &args.problem {
        rc.problem = Some(ProblemSource::Name(p.clone()));
    }
    let cfg = rc.problem_config()?;
    let field = cfg.vector_field()?;
    let latent_names = field.latent_names();
    let est = read_latent_marginals(&args.posterior, &latent_names)?;
    let truth = GroundTruth::read_csv(&args.truth, latent_names.len())?;
    check_same_grid(&est.times, &truth.grid)?;
    let s = score(&est.times, &est.mean, &est.cov, &truth.u_native, &cfg.links)?;
    let report = EvalReport {
        problem: cfg.name().to_string(),
        config_hash: est.header.config_hash,
        seed: est.header.seed,
        score: s,
    };
    match &args.out {
        Some(p) => write_json(p, &report),
        None => {
            // Ignore a closed pipe, as in `lfm eval ... | head`.
            let _ = writeln!(std::io::stdout(), "{}", serde_json::to_string_pretty(&report)?);
            Ok(())
        }
    }
}

fn cmd_covid(args: CovidArgs) -> Result<()> {
    let rc = RunConfig::load(args.config.as_deref())?;
    match &rc.problem {
        None => {}
        Some(ProblemSource::Name(n)) if n == "sird" => {}
        Some(_) => return Err(Error::argument("covid runs the built-in SIRD model; drop the \"problem\" field")),
    }
    if rc.simulation.is_some() {
        return Err(Error::argument("covid reads a data snapshot; drop the \"simulation\" field"));
    }
    let data_dir = args
        .data
        .clone()
        .or(rc.dataset.clone())
        .unwrap_or_else(|| PathBuf::from("data/jhu_snapshot"));
    let out = args.out.clone().or(rc.output.clone()).unwrap_or_else(|| PathBuf::from("out/covid"));
    let population = match args.population {
        Some(p) => p,
        None if args.country == "Germany" => GERMANY_POPULATION,
        None => return Err(Error::argument(format!("--population is required for {}", args.country))),
    };
    let horizon = match (args.horizon, rc.extrapolate) {
        (Some(h), _) => h,
        (None, Some(h)) if h >= 0.0 && h.fract() == 0.0 => h as usize,
        (None, Some(h)) => return Err(Error::argument(format!("covid horizon must be whole days, got {h}"))),
        (None, None) => DEFAULT_HORIZON_DAYS,
    };
    let mode = if args.dense || rc.filter.square_root == Some(false) {
        FilterMode::Dense
    } else {
        FilterMode::SquareRoot
    };
    let raw = parse_jhu_csv(
        &data_dir.join(CONFIRMED_FILE),
        &data_dir.join(RECOVERED_FILE),
        &data_dir.join(DEATHS_FILE),
        &args.country,
    )?;
    let mut series = to_sird(&raw, population)?;
    if let Some(ev) = &args.events {
        series.events = load_events(ev)?;
    }
    let opts = CovidOptions {
        log_space: args.log_space,
        holdout_days: args.holdout,
        horizon_days: horizon,
        inference: InferenceOptions {
            mode,
            ode_noise: args.ode_noise.or(rc.filter.ode_noise),
            data_noise: None,
            t_end: None,
        },
    };
    let start = Instant::now();
    let run = run_covid(&series, &opts)?;
    let header = run.header();
    series.write_csv(&out.join("cases.csv"), &header)?;
    run.train.to_dataset("jhu", &run.config_hash).write(&out.join("dataset.csv"))?;
    run.run.summary.write_csv(&out.join("posterior.csv"), &header)?;
    run.write_validation_csv(&out.join("validation.csv"))?;
    run.write_events_csv(&out.join("events.csv"))?;
    write_json(&out.join("report.json"), &run.run.report)?;
    let stats = &run.run.trajectory.stats;
    write_json(
        &out.join("timings.json"),
        &Timings {
            config_hash: run.config_hash.clone(),
            seed: header.seed,
            forward_seconds: stats.forward_seconds,
            backward_seconds: stats.backward_seconds,
            total_seconds: start.elapsed().as_secs_f64(),
        },
    )?;
    report_covid(&run.run.report, run.run.summary.latent_linked_mean.iter().map(|b| b[0]));
    Ok(())
}

fn report_covid(report: &RunReport, beta: impl Iterator<Item = f64>) {
    let (lo, hi) = beta.fold((f64::INFINITY, f64::NEG_INFINITY), |(lo, hi), b| (lo.min(b), hi.max(b)));
    log::info!(
        "{} grid points, {} data and {} ODE updates; contact rate in [{lo:.4}, {hi:.4}]",
        report.grid_points,
        report.data_events,
        report.ode_events
    );
}

fn cmd_fetch(args: FetchArgs) -> Result<()> {
    fs::create_dir_all(&args.out)?;
    for file in [CONFIRMED_FILE, RECOVERED_FILE, DEATHS_FILE] {
        let url = format!("{}/{file}", args.base_url.trim_end_matches('/'));
        log::info!("fetching {url}");
        let body = ureq::get(&url)
            .call()
            .and_then(|mut r| r.body_mut().with_config().limit(512 << 20).read_to_string())
            .map_err(|e| Error::Data(format!("cannot fetch {url}: {e}")))?;
        let dest = args.out.join(file);
        let tmp = dest.with_extension("csv.part");
        fs::write(&tmp, body)?;
        fs::rename(&tmp, &dest)?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exit_codes_by_error_kind() {
        assert_eq!(exit_code(&Error::argument("x")), 1);
        assert_eq!(exit_code(&Error::Data("x".into())), 2);
        assert_eq!(
            exit_code(&Error::Parse {
                source_name: "f".into(),
                line: 1,
                message: "m".into()
            }),
            2
        );
        assert_eq!(exit_code(&Error::Io(std::io::Error::other("x"))), 2);
        assert_eq!(exit_code(&Error::numerical(1.0, "x")), 3);
        assert_eq!(exit_code(&Error::Evaluation("x".into())), 3);
    }

    #[test]
    fn sweep_keeps_seed_order_and_reports_first_failure() {
        let r = sweep(0..16, |s| Ok(s * 2)).unwrap();
        assert_eq!(r, (0..16).map(|s| (s, s * 2)).collect::<Vec<_>>());
        let e = sweep(0..8, |s| if s >= 3 { Err(Error::argument(format!("{s}"))) } else { Ok(s) });
        assert!(matches!(e, Err(Error::Argument(m)) if m == "3"));
    }

    #[test]
    fn median_of_even_and_odd() {
        assert_eq!(median(vec![3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(vec![4.0, 1.0, 2.0, 3.0]), 2.5);
    }
}
