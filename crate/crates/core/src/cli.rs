//! Command-line entry point: subcommand dispatch, seed handling, and
//! artifact emission.
//!
//! Every run writes into one deterministic directory (no timestamps in
//! names or contents), so re-running a command reproduces its artifacts
//! byte for byte. CSV files use a mandatory header row, `.` decimals, and
//! LF line endings; each run directory carries a `meta.json` with the tool
//! version, seed, command, and the effective config.

use std::fs;
use std::path::{Path, PathBuf};

use clap::{Parser, Subcommand};
use serde::Serialize;

use crate::channel::{generate_deployment, sample_channel, ChannelMatrix, ScenarioSpec};
use crate::config::CliConfig;
use crate::error::{Error, Result};
use crate::experiments::{
    metrics, rate_vs_iterations, run_experiment, sensitivity_sweep, ExperimentReport, SweepAxis,
};
use crate::pgd::run_pgd;
use crate::rng::substream;
use crate::unfolded::{train_offline, TrainedParamsDoc};

/// Environment variable that overrides the output root (flag still wins).
const OUT_ENV: &str = "DUPGD_OUT";

#[derive(Parser)]
#[command(name = "dupgd", version, about = "Power allocation by unfolded projected gradient descent")]
pub struct Cli {
    /// Config file of `key = value` lines with dotted sections.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Inline override, repeatable: --set pgd.step_size=0.2
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
    /// Seed override; wins over the config file.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output root directory (default `runs`, or $DUPGD_OUT).
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Worker threads; 0 = all available.
    #[arg(long, global = true)]
    workers: Option<usize>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the finite-difference suites and print the worst relative error.
    Gradcheck,
    /// Solve one channel (from a fixture file or freshly sampled).
    Pgd {
        /// JSON channel fixture; omitted = sample from the config.
        #[arg(long)]
        channel: Option<PathBuf>,
    },
    /// Pretrain the unfolded network offline.
    Train,
    /// Run a Monte-Carlo comparison campaign.
    Evaluate,
    /// Sweep one axis, retraining per point.
    Sweep {
        #[arg(long)]
        axis: String,
        /// Comma-separated axis values.
        #[arg(long)]
        values: String,
    },
    /// Re-run a committed figure recipe (fig2 .. fig8).
    Reproduce { figure: String },
}

#[derive(Serialize)]
struct RunMeta<'a> {
    version: &'a str,
    seed: u64,
    command: String,
    config: &'a CliConfig,
}

pub fn run() -> Result<()> {
    let cli = Cli::parse();

    let recipe = match &cli.command {
        Command::Reproduce { figure } => Some(recipe_text(figure)?),
        _ => None,
    };

    let mut cfg = CliConfig::default();
    if let Some(text) = recipe {
        cfg.apply_file_text(text)?;
    }
    if let Some(path) = &cli.config {
        cfg.apply_file_text(&fs::read_to_string(path)?)?;
    }
    for pair in &cli.sets {
        let (key, value) = pair.split_once('=').ok_or_else(|| {
            Error::InvalidConfig(format!("--set expects KEY=VALUE, got `{pair}`"))
        })?;
        cfg.apply(key.trim(), value)?;
    }
    if let Some(seed) = cli.seed {
        cfg.apply("seed", &seed.to_string())?;
    }
    if let Some(workers) = cli.workers {
        cfg.workers = workers;
    }
    let cfg = cfg.finalize()?;

    if cfg.workers > 0 {
        // Best effort; a pool may already exist in-process.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.workers)
            .build_global();
    }

    let out_root = cli
        .out
        .clone()
        .or_else(|| std::env::var_os(OUT_ENV).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("runs"));

    match &cli.command {
        Command::Gradcheck => cmd_gradcheck(),
        Command::Pgd { channel } => cmd_pgd(&cfg, channel.as_deref(), &out_root),
        Command::Train => cmd_train(&cfg, &out_root),
        Command::Evaluate => cmd_evaluate(&cfg, &out_root),
        Command::Sweep { axis, values } => cmd_sweep(&cfg, axis, values, &out_root),
        Command::Reproduce { figure } => cmd_reproduce(&cfg, figure, &out_root),
    }
}

fn recipe_text(figure: &str) -> Result<&'static str> {
    Ok(match figure {
        "fig2" => include_str!("../recipes/fig2.cfg"),
        "fig3" => include_str!("../recipes/fig3.cfg"),
        "fig4" => include_str!("../recipes/fig4.cfg"),
        "fig5" => include_str!("../recipes/fig5.cfg"),
        "fig6" => include_str!("../recipes/fig6.cfg"),
        "fig7" => include_str!("../recipes/fig7.cfg"),
        "fig8" => include_str!("../recipes/fig8.cfg"),
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown figure `{other}` (expected fig2 .. fig8)"
            )))
        }
    })
}

fn cmd_gradcheck() -> Result<()> {
    let grad = crate::gradcheck::grad_rho_suite(&[1, 2, 5, 10], 20, 1000)?;
    println!(
        "grad_rho vs central differences: {} cases, max relative error {:.3e}",
        grad.cases, grad.max_rel_err
    );
    let back = crate::gradcheck::backward_suite(&[1, 3, 5], &[2, 4], 1, 2000)?;
    println!(
        "backward vs central differences: {} cases, max relative error {:.3e}",
        back.cases, back.max_rel_err
    );
    if grad.max_rel_err > 1e-5 {
        return Err(Error::CheckFailed(format!(
            "grad_rho error {:.3e} exceeds 1e-5",
            grad.max_rel_err
        )));
    }
    if back.max_rel_err > 1e-4 {
        return Err(Error::CheckFailed(format!(
            "backward error {:.3e} exceeds 1e-4",
            back.max_rel_err
        )));
    }
    println!("gradcheck passed");
    Ok(())
}

fn cmd_pgd(cfg: &CliConfig, channel: Option<&Path>, out_root: &Path) -> Result<()> {
    let h: ChannelMatrix = match channel {
        Some(path) => serde_json::from_str(&fs::read_to_string(path)?)?,
        None => {
            let mut rng = substream(cfg.seed, 0);
            let dep = generate_deployment(&cfg.scenario, &mut rng)?;
            sample_channel(&dep, &cfg.propagation, &mut rng)?
        }
    };
    let mut rng = substream(cfg.seed, 1);
    let result = run_pgd(&h, &cfg.pgd, cfg.p_max_w, &mut rng)?;

    let dir = out_root.join("pgd");
    write_meta(&dir, cfg, "pgd")?;
    write_json(&dir.join("solve.json"), &result)?;
    if let Some(trajectory) = &result.trajectory {
        let mut csv = Csv::new("iteration,sum_rate");
        for (i, rate) in trajectory.iter().enumerate() {
            csv.row(format!("{},{}", i + 1, rate));
        }
        csv.write(&dir.join("trajectory.csv"))?;
    }
    println!(
        "pgd: {} iterations, final sum rate {:.4} bps/Hz -> {}",
        result.iterations_run,
        result.sum_rate_final,
        dir.display()
    );
    Ok(())
}

fn cmd_train(cfg: &CliConfig, out_root: &Path) -> Result<()> {
    let (params, history) = train_offline(
        &cfg.train,
        &cfg.dupgd_arch,
        &cfg.scenario,
        &cfg.propagation,
        cfg.p_max_w,
    )?;
    let dir = out_root.join("train");
    write_meta(&dir, cfg, "train")?;
    write_json(
        &dir.join("params.json"),
        &TrainedParamsDoc::new(params, cfg.train.clone()),
    )?;
    let mut csv = Csv::new("step,loss");
    for (i, loss) in history.losses.iter().enumerate() {
        csv.row(format!("{},{}", i + 1, loss));
    }
    csv.write(&dir.join("history.csv"))?;
    let last = history.losses.last().copied().unwrap_or(f64::NAN);
    println!(
        "train: {} steps, final loss {:.4} -> {}",
        history.losses.len(),
        last,
        dir.display()
    );
    Ok(())
}

fn cmd_evaluate(cfg: &CliConfig, out_root: &Path) -> Result<()> {
    let report = run_experiment(&cfg.to_experiment_config())?;
    let dir = out_root.join("evaluate");
    write_meta(&dir, cfg, "evaluate")?;
    write_json(&dir.join("report.json"), &report)?;
    write_rate_cdfs(&dir, &report, None)?;
    write_increase_and_power(&dir, &report, None)?;
    println!("evaluate: {} realizations -> {}", cfg.n_realizations, dir.display());
    Ok(())
}

fn cmd_sweep(cfg: &CliConfig, axis: &str, values: &str, out_root: &Path) -> Result<()> {
    let axis: SweepAxis = axis.parse()?;
    let values: Vec<f64> = values
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(|s| {
            s.parse::<f64>()
                .map_err(|_| Error::InvalidConfig(format!("sweep value `{s}` is not a number")))
        })
        .collect::<Result<_>>()?;
    let table = sensitivity_sweep(&cfg.to_experiment_config(), axis, &values)?;

    let dir = out_root.join("sweep");
    write_meta(&dir, cfg, &format!("sweep --axis {} --values {values:?}", axis.as_str()))?;
    let mut csv = Csv::new("axis,value,method,mean_per_link_rate,seed,train_seed");
    for row in &table.rows {
        csv.row(format!(
            "{},{},{},{},{},{}",
            row.axis.as_str(),
            row.value,
            row.method,
            row.mean_per_link_rate,
            row.seed,
            row.train_seed
        ));
    }
    csv.write(&dir.join("sweep.csv"))?;
    println!("sweep: {} rows -> {}", table.rows.len(), dir.display());
    Ok(())
}

/// The two deployment flavors every figure compares: unconstrained pairing
/// and the 3 m bounded pairing.
fn scenario_pair(base: &ScenarioSpec) -> [(&'static str, ScenarioSpec); 2] {
    let mut scen1 = base.clone();
    scen1.max_pair_distance_m = None;
    let mut scen2 = base.clone();
    scen2.max_pair_distance_m = Some(3.0);
    [("scen1", scen1), ("scen2", scen2)]
}

fn cmd_reproduce(cfg: &CliConfig, figure: &str, out_root: &Path) -> Result<()> {
    let dir = out_root.join(figure);
    write_meta(&dir, cfg, &format!("reproduce {figure}"))?;
    match figure {
        "fig2" => {
            let mut csv = Csv::new("scenario,method,iterations,mean_per_link_rate,train_seed");
            for (label, scenario) in scenario_pair(&cfg.scenario) {
                let mut ecfg = cfg.to_experiment_config();
                ecfg.scenario = scenario;
                let table = rate_vs_iterations(&ecfg, &cfg.figure.iteration_grid)?;
                for row in &table.rows {
                    csv.row(format!(
                        "{},{},{},{},{}",
                        label,
                        row.method,
                        row.iterations,
                        row.mean_per_link_rate,
                        row.train_seed.map_or(String::new(), |s| s.to_string())
                    ));
                }
            }
            csv.write(&dir.join("fig2.csv"))?;
        }
        "fig3" | "fig4" => {
            let mut csv = Csv::new("scenario,method,value,cdf");
            for (label, scenario) in scenario_pair(&cfg.scenario) {
                let mut ecfg = cfg.to_experiment_config();
                ecfg.scenario = scenario;
                let report = run_experiment(&ecfg)?;
                for (method, samples) in &report.samples {
                    let source = if figure == "fig3" {
                        &samples.sum_rates
                    } else {
                        &samples.per_link_rates
                    };
                    for (value, p) in metrics::empirical_cdf(source)? {
                        csv.row(format!("{label},{method},{value},{p}"));
                    }
                }
            }
            csv.write(&dir.join(format!("{figure}.csv")))?;
        }
        "fig5" => {
            let mut csv = Csv::new("scenario,method,mean_rate_increase_bps_hz");
            for (label, scenario) in scenario_pair(&cfg.scenario) {
                let mut ecfg = cfg.to_experiment_config();
                ecfg.scenario = scenario;
                let report = run_experiment(&ecfg)?;
                for (method, delta) in metrics::mean_rate_increase(&report)? {
                    csv.row(format!("{label},{method},{delta}"));
                }
            }
            csv.write(&dir.join("fig5.csv"))?;
        }
        "fig6" => {
            let mut cdf_csv = Csv::new("scenario,method,power_w,cdf");
            let mut mean_csv = Csv::new("scenario,method,mean_power_w,mean_power_dbw");
            for (label, scenario) in scenario_pair(&cfg.scenario) {
                let mut ecfg = cfg.to_experiment_config();
                ecfg.scenario = scenario;
                let report = run_experiment(&ecfg)?;
                for (method, dist) in metrics::power_distribution(&report)? {
                    for (value, p) in &dist.cdf {
                        cdf_csv.row(format!("{label},{method},{value},{p}"));
                    }
                    mean_csv.row(format!(
                        "{label},{method},{},{}",
                        dist.mean_power_w,
                        dist.mean_power_dbw
                            .map_or("zero_power".to_string(), |v| v.to_string())
                    ));
                }
            }
            cdf_csv.write(&dir.join("fig6.csv"))?;
            mean_csv.write(&dir.join("fig6_mean.csv"))?;
        }
        "fig7" => {
            let table = sensitivity_sweep(
                &cfg.to_experiment_config(),
                SweepAxis::NLinks,
                &cfg.figure.sweep_n_links,
            )?;
            write_sweep_csv(&dir.join("fig7.csv"), &table.rows)?;
        }
        "fig8" => {
            let base = cfg.to_experiment_config();
            let mut rows = sensitivity_sweep(
                &base,
                SweepAxis::PathlossExponent,
                &cfg.figure.sweep_pathloss_exponent,
            )?
            .rows;
            rows.extend(
                sensitivity_sweep(&base, SweepAxis::ShadowingStd, &cfg.figure.sweep_shadowing_std)?
                    .rows,
            );
            write_sweep_csv(&dir.join("fig8.csv"), &rows)?;
        }
        other => {
            return Err(Error::InvalidConfig(format!(
                "unknown figure `{other}` (expected fig2 .. fig8)"
            )))
        }
    }
    println!("reproduce {figure} -> {}", dir.display());
    Ok(())
}

fn write_sweep_csv(path: &Path, rows: &[crate::experiments::SweepRow]) -> Result<()> {
    let mut csv = Csv::new("axis,value,method,mean_per_link_rate,seed,train_seed");
    for row in rows {
        csv.row(format!(
            "{},{},{},{},{},{}",
            row.axis.as_str(),
            row.value,
            row.method,
            row.mean_per_link_rate,
            row.seed,
            row.train_seed
        ));
    }
    csv.write(path)
}

fn write_rate_cdfs(dir: &Path, report: &ExperimentReport, label: Option<&str>) -> Result<()> {
    let prefix = label.map_or(String::new(), |l| format!("{l},"));
    let head = label.map_or("method,value,cdf", |_| "scenario,method,value,cdf");
    let mut sum_csv = Csv::new(head);
    let mut link_csv = Csv::new(head);
    for (method, samples) in &report.samples {
        for (value, p) in metrics::empirical_cdf(&samples.sum_rates)? {
            sum_csv.row(format!("{prefix}{method},{value},{p}"));
        }
        for (value, p) in metrics::empirical_cdf(&samples.per_link_rates)? {
            link_csv.row(format!("{prefix}{method},{value},{p}"));
        }
    }
    sum_csv.write(&dir.join("sum_rate_cdf.csv"))?;
    link_csv.write(&dir.join("per_link_rate_cdf.csv"))
}

fn write_increase_and_power(dir: &Path, report: &ExperimentReport, label: Option<&str>) -> Result<()> {
    let prefix = label.map_or(String::new(), |l| format!("{l},"));
    if report.samples.contains_key(&crate::experiments::MethodId::MaxPower) {
        let head = label.map_or(
            "method,mean_rate_increase_bps_hz",
            |_| "scenario,method,mean_rate_increase_bps_hz",
        );
        let mut csv = Csv::new(head);
        for (method, delta) in metrics::mean_rate_increase(report)? {
            csv.row(format!("{prefix}{method},{delta}"));
        }
        csv.write(&dir.join("mean_rate_increase.csv"))?;
    }
    let head = label.map_or(
        "method,mean_power_w,mean_power_dbw",
        |_| "scenario,method,mean_power_w,mean_power_dbw",
    );
    let mut csv = Csv::new(head);
    for (method, dist) in metrics::power_distribution(report)? {
        csv.row(format!(
            "{prefix}{method},{},{}",
            dist.mean_power_w,
            dist.mean_power_dbw
                .map_or("zero_power".to_string(), |v| v.to_string())
        ));
    }
    csv.write(&dir.join("power_mean.csv"))
}

fn write_meta(dir: &Path, cfg: &CliConfig, command: &str) -> Result<()> {
    fs::create_dir_all(dir)?;
    write_json(
        &dir.join("meta.json"),
        &RunMeta {
            version: env!("CARGO_PKG_VERSION"),
            seed: cfg.seed,
            command: command.to_string(),
            config: cfg,
        },
    )
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    fs::write(path, text)?;
    Ok(())
}

/// CSV with a mandatory header, LF endings, `.` decimal separator.
struct Csv {
    content: String,
}

impl Csv {
    fn new(header: &str) -> Self {
        let mut content = String::from(header);
        content.push('\n');
        Self { content }
    }

    fn row(&mut self, line: String) {
        self.content.push_str(&line);
        self.content.push('\n');
    }

    fn write(&self, path: &Path) -> Result<()> {
        if let Some(parent) = path.parent() {
            fs::create_dir_all(parent)?;
        }
        fs::write(path, &self.content)?;
        Ok(())
    }
}
