use std::fs::{self, File};
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Args, Parser, Subcommand};
use serde_json::json;

use pumpsurge::environment::{write_trace_csv, EnvConfig, Environment};
use pumpsurge::harness::{
    self, baseline_sweep, build_scenarios_parallel, default_workers, final_test, load_checkpoint, load_network,
    load_scenarios, report, run_training, save_scenarios, write_sweep_csv, write_test_csv, Baseline, Preset,
    RunConfig, RunDir,
};
use pumpsurge::neural::{OptimizerKind, QNetwork};
use pumpsurge::rng::{self, Purpose};
use pumpsurge::scenario::{Guide, ScenarioContext};
use pumpsurge::{Network, Solver};

#[derive(Parser)]
#[command(name = "pumpsurge", version, about = "Variable-speed pump control with dueling deep Q-networks")]
struct Cli {
    /// Print machine-readable JSON instead of text.
    #[arg(long, global = true)]
    json: bool,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Draw random demand scenarios, optionally with reference solutions.
    Scenarios(ScenariosArgs),
    /// Solve the hydraulics at given speeds and print junction heads.
    Solve(SolveArgs),
    /// Run the classical optimizers over a scenario set.
    Optimize(OptimizeArgs),
    /// Train an agent into a run directory.
    Train(TrainArgs),
    /// Run the trained agent greedily on the held-out scenarios.
    Evaluate(EvaluateArgs),
    /// Regenerate tables and plots of a run directory from its CSV files.
    Report(ReportArgs),
}

#[derive(Args)]
struct NetArg {
    /// Bundled network name (anytown-mod, dtown-mod) or INP file.
    #[arg(long, default_value = "anytown-mod")]
    net: String,
}

#[derive(Args)]
struct ScenariosArgs {
    #[command(flatten)]
    net: NetArg,
    #[arg(long, default_value_t = 10)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Stream family: training, validation or test.
    #[arg(long, default_value = "test")]
    purpose: String,
    /// Reference optimizer: nm or osrt.
    #[arg(long, default_value = "nm")]
    guide: Guide,
    /// Skip the reference solutions.
    #[arg(long)]
    no_reference: bool,
    /// JSONL output file; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct SolveArgs {
    #[command(flatten)]
    net: NetArg,
    /// Speed ratio per pump group, comma separated.
    #[arg(long, value_delimiter = ',', required = true)]
    speeds: Vec<f64>,
    /// Multiplier on all base demands.
    #[arg(long, default_value_t = 1.0)]
    demand_scale: f64,
}

#[derive(Args)]
struct OptimizeArgs {
    #[command(flatten)]
    net: NetArg,
    /// Use the test scenarios of this run directory and write report/sweep.csv.
    #[arg(long)]
    run: Option<PathBuf>,
    /// Comma-separated methods: nm, de, pso, fssrs, osrt, grid.
    #[arg(long, value_delimiter = ',', default_value = "nm,de,pso,fssrs,osrt")]
    methods: Vec<Baseline>,
    #[arg(long, default_value_t = 50)]
    count: usize,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// CSV output when no run directory is given; standard output when omitted.
    #[arg(long)]
    out: Option<PathBuf>,
}

#[derive(Args)]
struct TrainArgs {
    #[command(flatten)]
    net: NetArg,
    /// Hyperparameter preset: desk or paper.
    #[arg(long, default_value = "desk")]
    preset: Preset,
    /// Reference optimizer guiding the rewards: nm or osrt.
    #[arg(long, default_value = "nm")]
    guide: Guide,
    #[arg(long, default_value_t = 42)]
    seed: u64,
    /// Start from a TOML run configuration instead of the preset.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Override the number of training steps.
    #[arg(long)]
    steps: Option<usize>,
    /// Override the optimizer: adam or sgd.
    #[arg(long)]
    optimizer: Option<OptimizerKind>,
    /// Number of independent runs; seeds are seed, seed+1, ...
    #[arg(long, default_value_t = 1)]
    runs: usize,
    /// Run name; defaults to <network>-s<seed>.
    #[arg(long)]
    name: Option<String>,
    #[arg(long, default_value = "runs")]
    runs_dir: PathBuf,
}

#[derive(Args)]
struct EvaluateArgs {
    /// Run directory.
    #[arg(long)]
    run: PathBuf,
    /// Checkpoint file; defaults to checkpoints/final.json.
    #[arg(long)]
    checkpoint: Option<PathBuf>,
    /// Evaluate freshly initialised weights instead of a checkpoint.
    #[arg(long, conflicts_with = "checkpoint")]
    untrained: bool,
    /// Write one episode trace CSV per scenario into report/traces/.
    #[arg(long)]
    traces: bool,
}

#[derive(Args)]
struct ReportArgs {
    /// Run directory.
    #[arg(long)]
    from: PathBuf,
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            if cli.json {
                println!("{}", json!({ "error": format!("{e:#}") }));
            } else {
                eprintln!("error: {e:#}");
            }
            ExitCode::from(1)
        }
    }
}

fn run(cli: &Cli) -> Result<()> {
    match &cli.command {
        Command::Scenarios(a) => scenarios(a, cli.json),
        Command::Solve(a) => solve(a, cli.json),
        Command::Optimize(a) => optimize(a, cli.json),
        Command::Train(a) => train(a, cli.json),
        Command::Evaluate(a) => evaluate(a, cli.json),
        Command::Report(a) => report_cmd(a, cli.json),
    }
}

fn purpose(name: &str) -> Result<Purpose> {
    Ok(match name {
        "training" => Purpose::Training,
        "validation" => Purpose::Validation,
        "test" => Purpose::Test,
        other => bail!("unknown purpose `{other}` (expected training, validation or test)"),
    })
}

fn env_for(net: &Network) -> EnvConfig {
    EnvConfig::for_network(net, if net.n_groups() > 1 { 200 } else { 40 })
}

fn scenarios(a: &ScenariosArgs, as_json: bool) -> Result<()> {
    let net = load_network(&a.net.net)?;
    let solver = Solver::new(&net);
    let env = env_for(&net);
    let ctx = ScenarioContext::new(&solver, &env, a.guide);
    let set = build_scenarios_parallel(&ctx, a.count, a.seed, purpose(&a.purpose)?, !a.no_reference, default_workers())?;
    match &a.out {
        Some(p) => {
            save_scenarios(p, &set)?;
            if as_json {
                println!("{}", json!({ "scenarios": set.len(), "out": p }));
            } else {
                println!("wrote {} scenarios to {}", set.len(), p.display());
            }
        }
        None => {
            let out = io::stdout();
            pumpsurge::scenario::write_scenarios(out.lock(), &set)?;
        }
    }
    Ok(())
}

fn solve(a: &SolveArgs, as_json: bool) -> Result<()> {
    let net = load_network(&a.net.net)?;
    if a.speeds.len() != net.n_groups() {
        bail!("network has {} pump groups, got {} speeds", net.n_groups(), a.speeds.len());
    }
    let demands: Vec<f64> = net.base_demands().iter().map(|d| d * a.demand_scale).collect();
    let env = env_for(&net);
    let st = Solver::new(&net).solve(&demands, &a.speeds, &env.solver)?;
    let value = pumpsurge::environment::value_breakdown(&st, &env.objective).ok();
    if as_json {
        let nodes: Vec<_> = net
            .junctions
            .iter()
            .zip(&st.heads)
            .zip(&st.pressures)
            .map(|((j, h), p)| json!({ "node": j.id, "head": h, "pressure": p }))
            .collect();
        println!(
            "{}",
            json!({
                "converged": st.converged,
                "iterations": st.iterations,
                "nodes": nodes,
                "pumps": st.pump_ops,
                "tank_flows": st.tank_flows,
                "value": value,
            })
        );
    } else {
        let out = io::stdout();
        let mut w = out.lock();
        writeln!(w, "node,head,pressure")?;
        for ((j, h), p) in net.junctions.iter().zip(&st.heads).zip(&st.pressures) {
            writeln!(w, "{},{h},{p}", j.id)?;
        }
        if let Some(v) = value {
            eprintln!(
                "value {:.6} (satisfaction {:.4}, efficiency {:.4}, feed {:.4}), {} iterations",
                v.value, v.satisfaction, v.efficiency, v.feed, st.iterations
            );
        }
    }
    Ok(())
}

fn optimize(a: &OptimizeArgs, as_json: bool) -> Result<()> {
    let (net_name, seed, set) = match &a.run {
        Some(dir) => {
            let dir = RunDir::new(dir);
            let cfg = dir.read_config()?;
            (cfg.network.clone(), cfg.seed, Some(load_scenarios(&dir.scenarios())?))
        }
        None => (a.net.net.clone(), a.seed, None),
    };
    let net = load_network(&net_name)?;
    let solver = Solver::new(&net);
    let env = env_for(&net);
    let ctx = ScenarioContext::new(&solver, &env, Guide::Nm);
    let set = match set {
        Some(s) => s,
        None => build_scenarios_parallel(&ctx, a.count, seed, Purpose::Test, false, default_workers())?,
    };
    let rows = baseline_sweep(&ctx, &set, &a.methods, seed, default_workers())?;
    let out_path = match (&a.run, &a.out) {
        (Some(dir), _) => {
            let d = RunDir::new(dir);
            fs::create_dir_all(d.report())?;
            Some(d.report().join("sweep.csv"))
        }
        (None, p) => p.clone(),
    };
    match &out_path {
        Some(p) => {
            let mut w = BufWriter::new(File::create(p).with_context(|| p.display().to_string())?);
            write_sweep_csv(&mut w, &rows)?;
            w.flush()?;
        }
        None if !as_json => write_sweep_csv(io::stdout().lock(), &rows)?,
        None => {}
    }
    let mut summary = Vec::new();
    for b in &a.methods {
        let v: Vec<f64> = rows.iter().filter(|r| r.method == b.name()).filter_map(|r| r.value).collect();
        let e: Vec<f64> = rows.iter().filter(|r| r.method == b.name()).map(|r| r.evaluations as f64).collect();
        if let Ok(s) = harness::BoxStats::of(&v) {
            let mean_e = e.iter().sum::<f64>() / e.len().max(1) as f64;
            summary.push((b.name(), s, mean_e));
        }
    }
    if as_json {
        let m: Vec<_> = summary
            .iter()
            .map(|(n, s, e)| json!({ "method": n, "stats": s, "mean_evaluations": e }))
            .collect();
        println!("{}", json!({ "scenarios": set.len(), "methods": m, "out": out_path }));
    } else {
        for (n, s, e) in &summary {
            eprintln!("{n:>6}: mean {:.4} median {:.4} min {:.4} | {:.1} evaluations", s.mean, s.median, s.min, e);
        }
    }
    Ok(())
}

fn train(a: &TrainArgs, as_json: bool) -> Result<()> {
    let mut cfg = match &a.config {
        Some(p) => RunConfig::from_toml(&fs::read_to_string(p).with_context(|| p.display().to_string())?)?,
        None => {
            let net = load_network(&a.net.net)?;
            let mut c = RunConfig::for_network(&a.net.net, &net, a.preset);
            c.seed = a.seed;
            c.guide = a.guide;
            c
        }
    };
    if let Some(s) = a.steps {
        cfg.train.total_steps = s;
        cfg.train.init_steps = cfg.train.init_steps.min(s);
    }
    if let Some(o) = a.optimizer {
        cfg.train.optimizer = o;
    }
    if a.runs == 0 {
        bail!("--runs must be at least 1");
    }
    let stem = cfg.network.rsplit('/').next().unwrap_or("run").trim_end_matches(".inp").to_string();
    let base = a.name.clone().unwrap_or_else(|| format!("{stem}-s{}", cfg.seed));
    let master = cfg.seed;
    let mut results = Vec::new();
    for k in 0..a.runs {
        let mut c = cfg.clone();
        c.seed = harness::run_seed(master, k);
        let name = if a.runs == 1 { base.clone() } else { format!("{base}-r{k}") };
        let dir = RunDir::new(a.runs_dir.join(&name));
        let out = run_training(&dir, &c, |p| {
            if !as_json {
                eprintln!("[{name}] step {:>8}  ratio {:.4}  length {:.2}", p.step, p.mean_value_ratio, p.mean_length);
            }
        })?;
        let last = out.validations.last().map(|p| (p.mean_value_ratio, p.mean_length));
        if !as_json {
            println!(
                "{}: {} steps, {} episodes, {} updates, final validation ratio {}",
                dir.root.display(),
                c.train.total_steps,
                out.episodes,
                out.updates,
                last.map_or("n/a".into(), |l| format!("{:.4}", l.0))
            );
        }
        results.push(json!({
            "run": dir.root,
            "seed": c.seed,
            "episodes": out.episodes,
            "updates": out.updates,
            "validation_ratio": last.map(|l| l.0),
            "validation_length": last.map(|l| l.1),
        }));
    }
    if as_json {
        println!("{}", json!({ "runs": results }));
    }
    Ok(())
}

fn evaluate(a: &EvaluateArgs, as_json: bool) -> Result<()> {
    let dir = RunDir::new(&a.run);
    let cfg = dir.read_config()?;
    let net = load_network(&cfg.network)?;
    let env_cfg = cfg.env_config(&net);
    let test = load_scenarios(&dir.scenarios())?;
    let theta = if a.untrained {
        let probe = Environment::new(&net, env_cfg)?;
        let mut r = rng::stream(cfg.seed, Purpose::Initialization, 0);
        QNetwork::init(probe.observation_len(), &cfg.train.hidden, probe.n_actions(), &mut r)
    } else {
        load_checkpoint(&a.checkpoint.clone().unwrap_or_else(|| dir.final_checkpoint()))?
    };
    let (row, episodes) = final_test(&theta, &net, env_cfg, &test)?;
    fs::create_dir_all(dir.report())?;
    let name = if a.untrained { "test_untrained.csv" } else { "test.csv" };
    let path = dir.report().join(name);
    let mut w = BufWriter::new(File::create(&path)?);
    write_test_csv(&mut w, &test, &episodes)?;
    w.flush()?;
    if a.traces {
        let tdir = dir.report().join("traces");
        fs::create_dir_all(&tdir)?;
        let mut env = Environment::new(&net, env_cfg)?;
        env.record_trace(true);
        for (i, sc) in test.iter().enumerate() {
            pumpsurge::agent::run_greedy_episode(&theta, &mut env, sc)?;
            let p = tdir.join(format!("episode_{i:03}.csv"));
            let mut w = BufWriter::new(File::create(&p)?);
            write_trace_csv(&mut w, env.trace().unwrap_or(&[]))?;
            w.flush()?;
        }
    }
    if as_json {
        println!("{}", json!({ "test": row, "out": path }));
    } else {
        println!(
            "{} episodes: value ratio {:.4}, length {:.2}, evaluations {:.1}, value {:.4} (reference {:.4})",
            row.episodes,
            row.mean_value_ratio,
            row.mean_length,
            row.mean_evaluations,
            row.mean_value,
            row.mean_reference_value
        );
    }
    Ok(())
}

fn report_cmd(a: &ReportArgs, as_json: bool) -> Result<()> {
    let dir = RunDir::new(&a.from);
    if !dir.root.is_dir() {
        bail!("{} is not a directory", dir.root.display());
    }
    let s = report(&dir)?;
    if as_json {
        println!("{}", serde_json::to_string(&s)?);
    } else {
        for f in &s.files {
            println!("{}", dir.root.join(f).display());
        }
        if let Some(t) = s.test {
            eprintln!("test: ratio {:.4}, length {:.2}, evaluations {:.1}", t.mean_value_ratio, t.mean_length, t.mean_evaluations);
        }
    }
    Ok(())
}
