use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde::Serialize;

use rtsa_core::evaluation::{
    self, calibrate_wind, evaluate_policy, run_batch, run_episode, sweep_baseline, sweep_learned, SeedRange,
    TrainingPlan, DEFAULT_ALERT_PENALTIES, DEFAULT_BASELINE_DELTAS,
};
use rtsa_core::learning::{train, warm_start, LearnConfig};
use rtsa_core::{load_scenario, MetaPolicy, Scenario, WeightMatrix, World};

/// Runtime safety assurance testbed: simulate, train and evaluate switching policies.
#[derive(Parser, Debug)]
#[command(name = "rtsa", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Debug, Clone)]
struct ScenarioArg {
    /// Scenario JSON file; the bundled demo when omitted.
    #[arg(long)]
    scenario: Option<PathBuf>,
}

impl ScenarioArg {
    fn load(&self) -> Result<Scenario> {
        match &self.scenario {
            Some(p) => load_scenario(p).with_context(|| format!("loading scenario {}", p.display())),
            None => Ok(Scenario::demo()),
        }
    }
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Bisect the wind sigma until the nominal exit rate hits a target.
    Calibrate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, default_value_t = 0.25)]
        target: f64,
        #[arg(long, default_value_t = 1000)]
        episodes: u64,
        #[arg(long)]
        seed: u64,
        /// Write the calibrated scenario here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Fly one episode.
    Run {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// nominal | baseline:<delta> | weights:<path>
        #[arg(long)]
        policy: String,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        trace: Option<PathBuf>,
    },
    /// Baseline batch followed by a warm start from zero weights.
    Warmstart {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        delta: f64,
        #[arg(long, default_value_t = 200)]
        episodes: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[command(flatten)]
        learn: LearnArgs,
    },
    /// Online linear Q-learning.
    Train {
        #[command(flatten)]
        scenario: ScenarioArg,
        /// Initial weights; zeros when omitted.
        #[arg(long)]
        init: Option<PathBuf>,
        #[arg(long)]
        alert_penalty: Option<f64>,
        #[arg(long, default_value_t = LearnConfig::default().episodes as u64)]
        episodes: u64,
        #[arg(long)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        learn: LearnArgs,
    },
    /// Confusion matrix and SOC point of one policy over a seed range.
    Evaluate {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long)]
        policy: String,
        /// A..B (exclusive end)
        #[arg(long)]
        seeds: SeedRange,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Baseline and learned sweeps on matched evaluation seeds.
    Soc {
        #[command(flatten)]
        scenario: ScenarioArg,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_BASELINE_DELTAS)]
        baseline_deltas: Vec<f64>,
        #[arg(long, value_delimiter = ',', default_values_t = DEFAULT_ALERT_PENALTIES)]
        alert_penalties: Vec<f64>,
        /// A..B, or a start seed A for the default episode count.
        #[arg(long)]
        train_seeds: SeedRange,
        /// A..B, or a start seed A for 1000 episodes.
        #[arg(long)]
        eval_seeds: SeedRange,
        #[arg(long, default_value_t = TrainingPlan::default().warm_start_delta)]
        warm_start_delta: f64,
        #[arg(long, default_value_t = TrainingPlan::default().warm_start_episodes as u64)]
        warm_start_episodes: u64,
        #[command(flatten)]
        learn: LearnArgs,
        #[arg(long)]
        out: PathBuf,
        /// Save each learned weight matrix into this directory.
        #[arg(long)]
        weights_dir: Option<PathBuf>,
    },
}

#[derive(Args, Debug, Clone)]
struct LearnArgs {
    #[arg(long, default_value_t = LearnConfig::default().learning_rate)]
    learning_rate: f64,
    #[arg(long, default_value_t = LearnConfig::default().epsilon0)]
    epsilon0: f64,
    #[arg(long, default_value_t = LearnConfig::default().epsilon_decay)]
    epsilon_decay: f64,
    #[arg(long, default_value_t = LearnConfig::default().warm_start_passes as u64)]
    passes: u64,
}

impl LearnArgs {
    fn config(&self, episodes: u64, seed: u64) -> LearnConfig {
        LearnConfig {
            learning_rate: self.learning_rate,
            epsilon0: self.epsilon0,
            epsilon_decay: self.epsilon_decay,
            episodes: episodes as usize,
            warm_start_passes: self.passes as usize,
            seed,
        }
    }
}

const DEFAULT_EVAL_EPISODES: u64 = 1000;

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    match dispatch(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", error_line(&e));
            ExitCode::FAILURE
        }
    }
}

fn error_line(e: &anyhow::Error) -> String {
    let kind = e
        .chain()
        .find_map(|c| c.downcast_ref::<rtsa_core::Error>())
        .map(error_kind)
        .unwrap_or("runtime");
    let msg = format!("{e:#}").replace(['\n', '\t'], " ");
    format!("error\tkind={kind}\t{msg}")
}

fn error_kind(e: &rtsa_core::Error) -> &'static str {
    use rtsa_core::Error::*;
    match e {
        InvalidEnvelope(_) | InvalidMission(_) | DuplicateWaypoint { .. } | Validation(_) => "invalid_scenario",
        InvalidConfig(_) => "invalid_config",
        EmptyBatch => "empty_batch",
        Calibration(_) => "calibration",
        InvalidWeights(_) => "invalid_weights",
        Json(_) => "json",
        Io(_) => "io",
    }
}

fn dispatch(cmd: Command) -> Result<()> {
    match cmd {
        Command::Calibrate { scenario, target, episodes, seed, out } => calibrate(scenario, target, episodes, seed, out),
        Command::Run { scenario, policy, seed, trace } => run(scenario, &policy, seed, trace),
        Command::Warmstart { scenario, delta, episodes, seed, out, learn } => {
            warmstart(scenario, delta, episodes, seed, &out, &learn)
        }
        Command::Train { scenario, init, alert_penalty, episodes, seed, out, log, learn } => {
            train_cmd(scenario, init, alert_penalty, episodes, seed, &out, log, &learn)
        }
        Command::Evaluate { scenario, policy, seeds, out } => evaluate(scenario, &policy, seeds, out),
        Command::Soc {
            scenario,
            baseline_deltas,
            alert_penalties,
            train_seeds,
            eval_seeds,
            warm_start_delta,
            warm_start_episodes,
            learn,
            out,
            weights_dir,
        } => {
            let plan_base = TrainingPlan {
                warm_start_delta,
                warm_start_episodes: warm_start_episodes as usize,
                learn: learn.config(0, 0),
            };
            soc(scenario, &baseline_deltas, &alert_penalties, train_seeds, eval_seeds, plan_base, &out, weights_dir)
        }
    }
}

/// Opens `path` for CSV output, writing the provenance comment row first.
fn csv_writer(path: &Path, scenario: &Scenario, seeds: &str) -> Result<csv::Writer<BufWriter<File>>> {
    let mut f = BufWriter::new(File::create(path).with_context(|| format!("creating {}", path.display()))?);
    writeln!(f, "# scenario_hash={} seeds={}", scenario.hash(), seeds)?;
    Ok(csv::Writer::from_writer(f))
}

fn calibrate(scenario: ScenarioArg, target: f64, episodes: u64, seed: u64, out: Option<PathBuf>) -> Result<()> {
    let sc = scenario.load()?;
    let world = World::new(sc.clone())?;
    let seeds = SeedRange::new(seed, episodes);
    let cal = calibrate_wind(&world, target, &seeds.seeds())?;
    println!(
        "wind_sigma={} gust_sigma={} exit_rate={} evaluations={} seeds={}",
        cal.wind_sigma,
        sc.with_wind_sigma(cal.wind_sigma).sim.gust_sigma,
        cal.exit_rate,
        cal.evaluations,
        seeds
    );
    if let Some(out) = out {
        let calibrated = sc.with_wind_sigma(cal.wind_sigma);
        std::fs::write(&out, calibrated.to_json()).with_context(|| format!("writing {}", out.display()))?;
    }
    Ok(())
}

#[derive(Serialize)]
struct TraceRow {
    step: usize,
    time: f64,
    x: f64,
    y: f64,
    z: f64,
    vx: f64,
    vy: f64,
    vz: f64,
    wind_x: f64,
    wind_y: f64,
    wind_z: f64,
    deployed: bool,
    action: &'static str,
    reward: f64,
}

fn run(scenario: ScenarioArg, policy: &str, seed: u64, trace: Option<PathBuf>) -> Result<()> {
    let sc = scenario.load()?;
    let policy = MetaPolicy::parse(policy)?;
    let world = World::new(sc.clone())?;
    let rec = run_episode(&policy, &world, seed, trace.is_some());
    if let Some(path) = trace {
        let mut w = csv_writer(&path, &sc, &seed.to_string())?;
        for (i, p) in rec.trajectory.iter().enumerate() {
            let (s, wind) = (&p.state, &p.wind);
            w.serialize(TraceRow {
                step: i,
                time: s.time,
                x: s.position.x,
                y: s.position.y,
                z: s.position.z,
                vx: s.velocity.x,
                vy: s.velocity.y,
                vz: s.velocity.z,
                wind_x: wind.x,
                wind_y: wind.y,
                wind_z: wind.z,
                deployed: s.deployed,
                action: p.action.as_str(),
                reward: p.reward,
            })?;
        }
        w.flush()?;
    }
    let deploy = rec.deploy_step.map(|k| k.to_string()).unwrap_or_else(|| "none".into());
    println!(
        "policy={} seed={} outcome={} return={} steps={} deploy_step={} exited={}",
        rec.policy_id, seed, rec.outcome, rec.episode_return, rec.steps, deploy, rec.ever_exited
    );
    Ok(())
}

fn warmstart(scenario: ScenarioArg, delta: f64, episodes: u64, seed: u64, out: &Path, learn: &LearnArgs) -> Result<()> {
    let sc = scenario.load()?;
    let world = World::new(sc.clone())?;
    let seeds = SeedRange::new(seed, episodes);
    let baseline = MetaPolicy::parse(&format!("baseline:{delta}"))?;
    let records = run_batch(&baseline, &world, &seeds.seeds());
    let theta = warm_start(&records, &WeightMatrix::zeros(), &learn.config(0, seed), &world)?;
    theta.save(out, Some(&sc.hash()))?;
    println!("warm start on {} baseline episodes (seeds {seeds}) -> {}", records.len(), out.display());
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn train_cmd(
    scenario: ScenarioArg,
    init: Option<PathBuf>,
    alert_penalty: Option<f64>,
    episodes: u64,
    seed: u64,
    out: &Path,
    log: Option<PathBuf>,
    learn: &LearnArgs,
) -> Result<()> {
    let mut sc = scenario.load()?;
    if let Some(a) = alert_penalty {
        sc = sc.with_alert_penalty(a);
    }
    let world = World::new(sc.clone())?;
    let theta0 = match &init {
        Some(p) => WeightMatrix::load(p).map_err(|e| rtsa_core::Error::InvalidWeights(format!("{}: {e}", p.display())))?,
        None => WeightMatrix::zeros(),
    };
    let cfg = learn.config(episodes, seed);
    let (theta, tlog) = train(&world, &cfg, &theta0)?;
    theta.save(out, Some(&sc.hash()))?;
    if let Some(path) = log {
        let mut w = csv_writer(&path, &sc, &SeedRange::new(seed, episodes).to_string())?;
        for row in &tlog.rows {
            w.serialize(row)?;
        }
        w.flush()?;
    }
    println!(
        "trained {} episodes (alert_penalty={}) early_deploy_10={} -> {}",
        tlog.len(),
        sc.reward.alert_penalty,
        tlog.early_deploy_fraction(10),
        out.display()
    );
    Ok(())
}

#[derive(Serialize)]
struct ConfusionRow<'a> {
    family: &'a str,
    policy: &'a str,
    parameter: f64,
    episodes: usize,
    safe_not_deployed: usize,
    unsafe_not_deployed: usize,
    safe_deployed: usize,
    unsafe_deployed: usize,
    alert_rate: f64,
    safe_rate: f64,
}

impl<'a> ConfusionRow<'a> {
    fn new(family: &'a str, policy: &'a str, p: &evaluation::SweepPoint) -> Self {
        ConfusionRow {
            family,
            policy,
            parameter: p.soc.parameter,
            episodes: p.soc.episodes,
            safe_not_deployed: p.confusion.safe_not_deployed,
            unsafe_not_deployed: p.confusion.unsafe_not_deployed,
            safe_deployed: p.confusion.safe_deployed,
            unsafe_deployed: p.confusion.unsafe_deployed,
            alert_rate: p.soc.alert_rate,
            safe_rate: p.soc.safe_rate,
        }
    }
}

fn evaluate(scenario: ScenarioArg, policy: &str, seeds: SeedRange, out: Option<PathBuf>) -> Result<()> {
    let sc = scenario.load()?;
    let policy = MetaPolicy::parse(policy)?;
    let world = World::new(sc.clone())?;
    let parameter = match &policy {
        MetaPolicy::Baseline { delta } => *delta,
        MetaPolicy::Learned { .. } => sc.reward.alert_penalty,
        MetaPolicy::Nominal => 0.0,
    };
    let point = evaluate_policy(&policy, &world, &seeds.seeds(), parameter)?;
    let id = policy.id();
    if let Some(path) = out {
        let mut w = csv_writer(&path, &sc, &seeds.to_string())?;
        w.serialize(ConfusionRow::new(&point.family, &id, &point))?;
        w.flush()?;
    }
    let c = &point.confusion;
    println!(
        "policy={id} seeds={seeds} safe_not_deployed={} unsafe_not_deployed={} safe_deployed={} unsafe_deployed={} alert_rate={} safe_rate={}",
        c.safe_not_deployed, c.unsafe_not_deployed, c.safe_deployed, c.unsafe_deployed, point.soc.alert_rate, point.soc.safe_rate
    );
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn soc(
    scenario: ScenarioArg,
    deltas: &[f64],
    alert_penalties: &[f64],
    train_seeds: SeedRange,
    eval_seeds: SeedRange,
    mut plan: TrainingPlan,
    out: &Path,
    weights_dir: Option<PathBuf>,
) -> Result<()> {
    let sc = scenario.load()?;
    let world = World::new(sc.clone())?;
    let train_seeds = if train_seeds.len() == 1 {
        SeedRange::new(train_seeds.start, LearnConfig::default().episodes as u64)
    } else {
        train_seeds
    };
    let eval_seeds =
        if eval_seeds.len() == 1 { SeedRange::new(eval_seeds.start, DEFAULT_EVAL_EPISODES) } else { eval_seeds };
    if train_seeds.len() < plan.warm_start_episodes {
        bail!(rtsa_core::Error::InvalidConfig(format!(
            "training range {train_seeds} is shorter than the {} warm-start episodes",
            plan.warm_start_episodes
        )));
    }
    plan.learn.episodes = train_seeds.len();
    plan.learn.seed = train_seeds.start;
    let eval = eval_seeds.seeds();

    let nominal = evaluate_policy(&MetaPolicy::Nominal, &world, &eval, 0.0)?;
    let baseline = sweep_baseline(&world, deltas, &eval)?;
    let learned = sweep_learned(&world, alert_penalties, &plan, train_seeds, eval_seeds)?;

    let mut w = csv_writer(out, &sc, &format!("train:{train_seeds},eval:{eval_seeds}"))?;
    w.serialize(ConfusionRow::new("nominal", "nominal", &nominal))?;
    for p in &baseline {
        let id = format!("baseline:{}", p.soc.parameter);
        w.serialize(ConfusionRow::new("baseline", &id, p))?;
    }
    for (alpha, l) in alert_penalties.iter().zip(&learned) {
        let id = format!("alert_penalty={alpha}");
        w.serialize(ConfusionRow::new("learned", &id, &l.point))?;
    }
    w.flush()?;
    if let Some(dir) = weights_dir {
        std::fs::create_dir_all(&dir)?;
        for (alpha, l) in alert_penalties.iter().zip(&learned) {
            let path = dir.join(format!("weights_alert_penalty_{alpha}.json"));
            l.weights.save(&path, Some(&sc.with_alert_penalty(*alpha).hash()))?;
        }
    }
    println!(
        "soc: {} rows (1 nominal, {} baseline, {} learned) -> {}",
        1 + baseline.len() + learned.len(),
        baseline.len(),
        learned.len(),
        out.display()
    );
    Ok(())
}
