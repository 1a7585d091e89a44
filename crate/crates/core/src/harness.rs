//! Experiment orchestration: presets, run directories, baseline sweeps,
//! smoothed training curves and the final test table.
//!
//! A run directory looks like
//!
//! ```text
//! runs/<name>/
//!   config.toml        RunConfig
//!   scenarios.jsonl    held-out test scenarios with references
//!   validation.jsonl   validation scenarios with references
//!   trainlog.csv       one row per environment step
//!   checkpoints/       step00002000.json, ..., final.json
//!   report/            test.csv, sweep.csv and everything derived from them
//! ```
//!
//! Everything under `report/` except `test.csv` and `sweep.csv` is produced by
//! [`report`], a pure function of the raw CSV files.

use std::fmt::Write as _;
use std::fs::{self, File};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agent::{
    evaluate_policy, read_trainlog, train, write_trainlog, AgentError, EpisodeMetrics, TrainConfig, TrainLogRow,
    TrainOutcome, ValidationPoint,
};
use crate::bundled;
use crate::environment::{EnvConfig, EnvError, Environment};
use crate::hydraulics::Solver;
use crate::network::{parse_network, Network, NetworkError};
use crate::neural::QNetwork;
use crate::optimizers::{run_method, Method, OptimizeResult, Status};
use crate::rng::{self, Purpose};
use crate::scenario::{read_scenarios, write_scenarios, Guide, Scenario, ScenarioContext, ScenarioError};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("series is empty")]
    EmptySeries,
    #[error("unknown network `{0}` (not a bundled name and not a readable file)")]
    UnknownNetwork(String),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("{file}:{line}: {reason}")]
    Csv { file: String, line: usize, reason: String },
    #[error("{path}: {source}")]
    File { path: String, source: std::io::Error },
    #[error("config: {0}")]
    ConfigParse(#[from] toml::de::Error),
    #[error("config: {0}")]
    ConfigWrite(#[from] toml::ser::Error),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Agent(#[from] AgentError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn file_err(path: &Path) -> impl FnOnce(std::io::Error) -> HarnessError + '_ {
    move |source| HarnessError::File { path: path.display().to_string(), source }
}

/// Exponential moving average: `y0 = x0`, `yt = a*xt + (1-a)*y(t-1)`.
pub fn ema_smooth(series: &[f64], alpha: f64) -> Result<Vec<f64>, HarnessError> {
    let (&first, rest) = series.split_first().ok_or(HarnessError::EmptySeries)?;
    let mut out = Vec::with_capacity(series.len());
    out.push(first);
    let mut y = first;
    for &x in rest {
        y = alpha * x + (1.0 - alpha) * y;
        out.push(y);
    }
    Ok(out)
}

/// Smoothing factor used for all reported curves.
pub const EMA_ALPHA: f64 = 0.3;

/// Quartiles by linear interpolation between order statistics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxStats {
    pub n: usize,
    pub min: f64,
    pub q1: f64,
    pub median: f64,
    pub q3: f64,
    pub max: f64,
    pub mean: f64,
}

impl BoxStats {
    pub fn of(values: &[f64]) -> Result<Self, HarnessError> {
        if values.is_empty() {
            return Err(HarnessError::EmptySeries);
        }
        let mut v = values.to_vec();
        v.sort_by(f64::total_cmp);
        let q = |p: f64| {
            let pos = p * (v.len() - 1) as f64;
            let lo = pos.floor() as usize;
            let hi = pos.ceil() as usize;
            v[lo] + (pos - lo as f64) * (v[hi] - v[lo])
        };
        Ok(Self {
            n: v.len(),
            min: v[0],
            q1: q(0.25),
            median: q(0.5),
            q3: q(0.75),
            max: v[v.len() - 1],
            mean: v.iter().sum::<f64>() / v.len() as f64,
        })
    }
}

/// Maps `f` over `0..n` on up to `workers` threads; results keep index order.
pub fn par_map<T, F>(n: usize, workers: usize, f: F) -> Vec<T>
where
    T: Send,
    F: Fn(usize) -> T + Sync,
{
    let workers = workers.clamp(1, n.max(1));
    if workers == 1 {
        return (0..n).map(f).collect();
    }
    let next = AtomicUsize::new(0);
    let slots: Mutex<Vec<Option<T>>> = Mutex::new((0..n).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..workers {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::Relaxed);
                if i >= n {
                    break;
                }
                let r = f(i);
                slots.lock().expect("worker panicked")[i] = Some(r);
            });
        }
    });
    slots.into_inner().expect("worker panicked").into_iter().map(|r| r.expect("every slot filled")).collect()
}

/// Worker count for parallel jobs.
pub fn default_workers() -> usize {
    std::thread::available_parallelism().map_or(1, |n| n.get())
}

/// Scenario set drawn in parallel; identical to [`crate::scenario::build_scenario_set`].
pub fn build_scenarios_parallel(
    ctx: &ScenarioContext<'_>,
    n: usize,
    master_seed: u64,
    purpose: Purpose,
    with_reference: bool,
    workers: usize,
) -> Result<Vec<Scenario>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::EmptySet);
    }
    par_map(n, workers, |i| ctx.draw(master_seed, purpose, i, with_reference))
        .into_iter()
        .collect()
}

/// Bundled network by name, or an INP file path.
pub fn load_network(name_or_path: &str) -> Result<Network, HarnessError> {
    if let Some(src) = bundled::source(name_or_path) {
        return Ok(parse_network(src)?);
    }
    let path = Path::new(name_or_path);
    if !path.is_file() {
        return Err(HarnessError::UnknownNetwork(name_or_path.into()));
    }
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    Ok(parse_network(&text)?)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Preset {
    /// Shrinks multi-station training to 100k steps and 20 test scenarios.
    #[default]
    Desk,
    /// Published hyperparameters verbatim.
    Paper,
}

impl std::str::FromStr for Preset {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "desk" => Ok(Preset::Desk),
            "paper" => Ok(Preset::Paper),
            _ => Err(format!("unknown preset `{s}` (expected desk or paper)")),
        }
    }
}

/// Everything that determines a training run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    /// Bundled network name or INP path.
    pub network: String,
    pub preset: Preset,
    pub seed: u64,
    pub guide: Guide,
    pub max_episode_len: usize,
    pub n_validation: usize,
    pub n_test: usize,
    pub train: TrainConfig,
}

impl RunConfig {
    /// Defaults for `network`: the small configuration for single-station
    /// networks, the large one otherwise.
    pub fn for_network(name: &str, net: &Network, preset: Preset) -> Self {
        let large = net.n_groups() > 1;
        let mut train = if large { TrainConfig::dtown() } else { TrainConfig::anytown() };
        let mut n_test = 50;
        if large && preset == Preset::Desk {
            train.total_steps = 100_000;
            n_test = 20;
        }
        Self {
            network: name.into(),
            preset,
            seed: 42,
            guide: Guide::Nm,
            max_episode_len: if large { 200 } else { 40 },
            n_validation: 100,
            n_test,
            train,
        }
    }

    pub fn env_config(&self, net: &Network) -> EnvConfig {
        EnvConfig::for_network(net, self.max_episode_len)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        if self.max_episode_len == 0 || self.n_validation == 0 || self.n_test == 0 {
            return Err(HarnessError::InvalidConfig(
                "episode length and scenario counts must be positive".into(),
            ));
        }
        self.train.validate()?;
        Ok(())
    }

    pub fn to_toml(&self) -> Result<String, HarnessError> {
        Ok(toml::to_string(self)?)
    }

    pub fn from_toml(text: &str) -> Result<Self, HarnessError> {
        Ok(toml::from_str(text)?)
    }
}

/// Seed of the `k`-th independent run under a master seed.
pub fn run_seed(master: u64, k: usize) -> u64 {
    master.wrapping_add(k as u64)
}

/// Paths inside a run directory.
#[derive(Debug, Clone)]
pub struct RunDir {
    pub root: PathBuf,
}

impl RunDir {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        Self { root: root.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.root.join("config.toml")
    }

    pub fn scenarios(&self) -> PathBuf {
        self.root.join("scenarios.jsonl")
    }

    pub fn validation(&self) -> PathBuf {
        self.root.join("validation.jsonl")
    }

    pub fn trainlog(&self) -> PathBuf {
        self.root.join("trainlog.csv")
    }

    pub fn checkpoints(&self) -> PathBuf {
        self.root.join("checkpoints")
    }

    pub fn checkpoint(&self, step: usize) -> PathBuf {
        self.checkpoints().join(format!("step{step:08}.json"))
    }

    pub fn final_checkpoint(&self) -> PathBuf {
        self.checkpoints().join("final.json")
    }

    pub fn report(&self) -> PathBuf {
        self.root.join("report")
    }

    pub fn create(&self) -> Result<(), HarnessError> {
        for d in [self.root.clone(), self.checkpoints(), self.report()] {
            fs::create_dir_all(&d).map_err(file_err(&d))?;
        }
        Ok(())
    }

    pub fn read_config(&self) -> Result<RunConfig, HarnessError> {
        let p = self.config();
        RunConfig::from_toml(&fs::read_to_string(&p).map_err(file_err(&p))?)
    }

    pub fn write_config(&self, cfg: &RunConfig) -> Result<(), HarnessError> {
        let p = self.config();
        fs::write(&p, cfg.to_toml()?).map_err(file_err(&p))
    }
}

pub fn save_scenarios(path: &Path, scenarios: &[Scenario]) -> Result<(), HarnessError> {
    let f = File::create(path).map_err(file_err(path))?;
    let mut w = BufWriter::new(f);
    write_scenarios(&mut w, scenarios)?;
    w.flush().map_err(file_err(path))?;
    Ok(())
}

pub fn load_scenarios(path: &Path) -> Result<Vec<Scenario>, HarnessError> {
    let f = File::open(path).map_err(file_err(path))?;
    Ok(read_scenarios(BufReader::new(f))?)
}

pub fn save_checkpoint(path: &Path, net: &QNetwork) -> Result<(), HarnessError> {
    fs::write(path, net.save_json()).map_err(file_err(path))
}

pub fn load_checkpoint(path: &Path) -> Result<QNetwork, HarnessError> {
    let text = fs::read_to_string(path).map_err(file_err(path))?;
    QNetwork::load_json(&text).map_err(|e| HarnessError::Agent(e.into()))
}

/// Validation and test scenario sets of a run configuration.
pub fn scenario_sets(
    ctx: &ScenarioContext<'_>,
    cfg: &RunConfig,
    workers: usize,
) -> Result<(Vec<Scenario>, Vec<Scenario>), HarnessError> {
    let val = build_scenarios_parallel(ctx, cfg.n_validation, cfg.seed, Purpose::Validation, true, workers)?;
    let test = build_scenarios_parallel(ctx, cfg.n_test, cfg.seed, Purpose::Test, true, workers)?;
    Ok((val, test))
}

/// Trains one session into `dir`: writes the config, scenario sets,
/// trainlog, a checkpoint at every validation point and the final weights.
pub fn run_training(
    dir: &RunDir,
    cfg: &RunConfig,
    mut progress: impl FnMut(&ValidationPoint),
) -> Result<TrainOutcome, HarnessError> {
    cfg.validate()?;
    let net = load_network(&cfg.network)?;
    let solver = Solver::new(&net);
    let env_cfg = cfg.env_config(&net);
    let ctx = ScenarioContext::new(&solver, &env_cfg, cfg.guide);
    dir.create()?;
    dir.write_config(cfg)?;
    let (val, test) = scenario_sets(&ctx, cfg, default_workers())?;
    save_scenarios(&dir.validation(), &val)?;
    save_scenarios(&dir.scenarios(), &test)?;

    let mut hook = |p: &ValidationPoint, theta: &QNetwork| -> Result<(), AgentError> {
        progress(p);
        save_checkpoint(&dir.checkpoint(p.step), theta).map_err(|e| match e {
            HarnessError::File { source, .. } => AgentError::Io(source),
            other => AgentError::InvalidConfig(other.to_string()),
        })
    };
    let outcome = train(&ctx, &env_cfg, &val, &cfg.train, cfg.seed, Some(&mut hook))?;
    let p = dir.trainlog();
    let f = File::create(&p).map_err(file_err(&p))?;
    let mut w = BufWriter::new(f);
    write_trainlog(&mut w, &outcome.log).map_err(file_err(&p))?;
    w.flush().map_err(file_err(&p))?;
    save_checkpoint(&dir.final_checkpoint(), &outcome.network)?;
    Ok(outcome)
}

/// Aggregate of greedy episodes over a test set.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TestRow {
    pub episodes: usize,
    pub mean_value: f64,
    pub mean_reference_value: f64,
    pub mean_value_ratio: f64,
    pub mean_length: f64,
    pub mean_evaluations: f64,
}

impl TestRow {
    pub fn of(episodes: &[EpisodeMetrics]) -> Result<Self, HarnessError> {
        if episodes.is_empty() {
            return Err(HarnessError::EmptySeries);
        }
        let n = episodes.len() as f64;
        let mean = |f: &dyn Fn(&EpisodeMetrics) -> f64| episodes.iter().map(f).sum::<f64>() / n;
        Ok(Self {
            episodes: episodes.len(),
            mean_value: mean(&|e| e.value),
            mean_reference_value: mean(&|e| e.reference_value),
            mean_value_ratio: mean(&|e| e.value_ratio),
            mean_length: mean(&|e| e.length as f64),
            mean_evaluations: mean(&|e| e.evaluations as f64),
        })
    }
}

/// Greedy episodes of `theta` on held-out scenarios.
pub fn final_test(
    theta: &QNetwork,
    net: &Network,
    env_cfg: EnvConfig,
    test: &[Scenario],
) -> Result<(TestRow, Vec<EpisodeMetrics>), HarnessError> {
    let mut env = Environment::new(net, env_cfg)?;
    let summary = evaluate_policy(theta, &mut env, test)?;
    Ok((TestRow::of(&summary.episodes)?, summary.episodes))
}

pub const TEST_HEADER: &str = "scenario,seed,value,reference_value,value_ratio,length,evaluations,actions";

pub fn write_test_csv<W: Write>(mut w: W, scenarios: &[Scenario], episodes: &[EpisodeMetrics]) -> std::io::Result<()> {
    writeln!(w, "{TEST_HEADER}")?;
    for (i, (s, e)) in scenarios.iter().zip(episodes).enumerate() {
        let actions: Vec<String> = e.actions.iter().map(|a| a.to_string()).collect();
        writeln!(
            w,
            "{i},{},{},{},{},{},{},{}",
            s.seed,
            e.value,
            e.reference_value,
            e.value_ratio,
            e.length,
            e.evaluations,
            actions.join(" ")
        )?;
    }
    Ok(())
}

/// A baseline in the optimizer sweep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Baseline {
    Method(Method),
    /// Every point of the speed grid.
    Grid,
}

impl Baseline {
    pub fn name(self) -> &'static str {
        match self {
            Baseline::Method(m) => m.name(),
            Baseline::Grid => "grid",
        }
    }

    fn index(self) -> u64 {
        match self {
            Baseline::Method(m) => Method::ALL.iter().position(|x| *x == m).expect("listed") as u64,
            Baseline::Grid => Method::ALL.len() as u64,
        }
    }
}

impl std::str::FromStr for Baseline {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        if s == "grid" {
            Ok(Baseline::Grid)
        } else {
            s.parse::<Method>().map(Baseline::Method).map_err(|e| format!("{e}, or grid"))
        }
    }
}

/// Exhaustive search over all grid points, row-major in the groups.
pub fn grid_sweep(ctx: &ScenarioContext<'_>, demands: &[f64]) -> OptimizeResult {
    let n = ctx.solver.network().n_groups();
    let levels = ctx.grid.n_levels();
    let total = levels.pow(n as u32);
    let mut best: Option<(Vec<f64>, f64)> = None;
    for k in 0..total {
        let mut rem = k;
        let speeds: Vec<f64> = (0..n)
            .map(|_| {
                let l = rem % levels;
                rem /= levels;
                ctx.grid.speed(l as i64)
            })
            .collect();
        let v = ctx.evaluate(demands, &speeds);
        if best.as_ref().is_none_or(|(_, b)| v > *b) {
            best = Some((speeds, v));
        }
    }
    let (best_speeds, best_value) = best.expect("grid is non-empty");
    OptimizeResult {
        best_speeds,
        best_value,
        evaluations: total,
        status: Status::Converged,
        trace: None,
    }
}

/// One cell of the sweep. `value` is `None` when the method failed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub scenario: usize,
    pub method: String,
    pub value: Option<f64>,
    pub evaluations: usize,
    pub status: String,
    /// Value divided by the DE value of the same scenario.
    pub ratio_to_de: Option<f64>,
}

/// Runs every baseline on every scenario. Failed cells are kept and marked.
pub fn baseline_sweep(
    ctx: &ScenarioContext<'_>,
    scenarios: &[Scenario],
    baselines: &[Baseline],
    seed: u64,
    workers: usize,
) -> Result<Vec<SweepRow>, HarnessError> {
    if scenarios.is_empty() || baselines.is_empty() {
        return Err(HarnessError::EmptySeries);
    }
    let bounds = ctx.search_box();
    let cells = scenarios.len() * baselines.len();
    let mut rows = par_map(cells, workers, |c| {
        let (i, b) = (c / baselines.len(), baselines[c % baselines.len()]);
        let demands = &scenarios[i].demands;
        let result = match b {
            Baseline::Grid => Ok(grid_sweep(ctx, demands)),
            Baseline::Method(m) => {
                let mut r = rng::keyed_stream(seed, Purpose::Sweep, (b.index() << 40) | i as u64);
                run_method(m, |x: &[f64]| ctx.evaluate(demands, x), &bounds, None, &mut r)
            }
        };
        match result {
            Ok(r) => SweepRow {
                scenario: i,
                method: b.name().into(),
                value: Some(r.best_value),
                evaluations: r.evaluations,
                status: match r.status {
                    Status::Converged => "converged".into(),
                    Status::BudgetExhausted => "budget".into(),
                },
                ratio_to_de: None,
            },
            Err(e) => SweepRow {
                scenario: i,
                method: b.name().into(),
                value: None,
                evaluations: 0,
                status: format!("failed: {e}"),
                ratio_to_de: None,
            },
        }
    });
    fill_de_ratios(&mut rows);
    Ok(rows)
}

fn fill_de_ratios(rows: &mut [SweepRow]) {
    let de: Vec<(usize, f64)> = rows
        .iter()
        .filter(|r| r.method == "de")
        .filter_map(|r| r.value.map(|v| (r.scenario, v)))
        .collect();
    for r in rows.iter_mut() {
        let base = de.iter().find(|(s, _)| *s == r.scenario).map(|(_, v)| *v);
        r.ratio_to_de = match (r.value, base) {
            (Some(v), Some(b)) if b > 0.0 => Some(v / b),
            _ => None,
        };
    }
}

pub const SWEEP_HEADER: &str = "scenario,method,value,evaluations,status,ratio_to_de";

fn opt(x: Option<f64>) -> String {
    x.map(|v| v.to_string()).unwrap_or_default()
}

pub fn write_sweep_csv<W: Write>(mut w: W, rows: &[SweepRow]) -> std::io::Result<()> {
    writeln!(w, "{SWEEP_HEADER}")?;
    for r in rows {
        let status = r.status.replace(',', ";");
        writeln!(
            w,
            "{},{},{},{},{},{}",
            r.scenario,
            r.method,
            opt(r.value),
            r.evaluations,
            status,
            opt(r.ratio_to_de)
        )?;
    }
    Ok(())
}

struct Csv {
    file: String,
    header: Vec<String>,
    rows: Vec<(usize, Vec<String>)>,
}

impl Csv {
    fn read(path: &Path) -> Result<Self, HarnessError> {
        let f = File::open(path).map_err(file_err(path))?;
        let file = path.display().to_string();
        let mut lines = BufReader::new(f).lines();
        let header = match lines.next() {
            Some(h) => h?.split(',').map(str::to_string).collect(),
            None => return Err(HarnessError::Csv { file, line: 1, reason: "missing header".into() }),
        };
        let mut rows = Vec::new();
        for (i, l) in lines.enumerate() {
            let l = l?;
            if !l.is_empty() {
                rows.push((i + 2, l.split(',').map(str::to_string).collect()));
            }
        }
        Ok(Self { file, header, rows })
    }

    fn column(&self, name: &str) -> Result<usize, HarnessError> {
        self.header.iter().position(|h| h == name).ok_or_else(|| HarnessError::Csv {
            file: self.file.clone(),
            line: 1,
            reason: format!("missing column `{name}`"),
        })
    }

    fn floats(&self, name: &str) -> Result<Vec<Option<f64>>, HarnessError> {
        let c = self.column(name)?;
        self.rows
            .iter()
            .map(|(line, r)| {
                let cell = r.get(c).map(String::as_str).unwrap_or("");
                if cell.is_empty() {
                    return Ok(None);
                }
                cell.parse().map(Some).map_err(|_| HarnessError::Csv {
                    file: self.file.clone(),
                    line: *line,
                    reason: format!("`{cell}` in column `{name}` is not a number"),
                })
            })
            .collect()
    }

    fn strings(&self, name: &str) -> Result<Vec<String>, HarnessError> {
        let c = self.column(name)?;
        Ok(self.rows.iter().map(|(_, r)| r.get(c).cloned().unwrap_or_default()).collect())
    }
}

/// Validation curve of a trainlog, raw and smoothed.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ValidationCurve {
    pub steps: Vec<usize>,
    pub value_ratio: Vec<f64>,
    pub episode_len: Vec<f64>,
    pub ema_value_ratio: Vec<f64>,
    pub ema_episode_len: Vec<f64>,
}

pub fn validation_curve(log: &[TrainLogRow]) -> Result<ValidationCurve, HarnessError> {
    let pts: Vec<_> = log
        .iter()
        .filter_map(|r| Some((r.step, r.val_value_ratio?, r.val_episode_len?)))
        .collect();
    let value_ratio: Vec<f64> = pts.iter().map(|p| p.1).collect();
    let episode_len: Vec<f64> = pts.iter().map(|p| p.2).collect();
    Ok(ValidationCurve {
        steps: pts.iter().map(|p| p.0).collect(),
        ema_value_ratio: ema_smooth(&value_ratio, EMA_ALPHA)?,
        ema_episode_len: ema_smooth(&episode_len, EMA_ALPHA)?,
        value_ratio,
        episode_len,
    })
}

/// Per-episode return of a trainlog: `(episode, steps, return)`.
pub fn episode_returns(log: &[TrainLogRow]) -> Vec<(usize, usize, f64)> {
    let mut out: Vec<(usize, usize, f64)> = Vec::new();
    for r in log {
        match out.last_mut() {
            Some(last) if last.0 == r.episode => {
                last.1 += 1;
                last.2 = r.episode_reward;
            }
            _ => out.push((r.episode, 1, r.episode_reward)),
        }
    }
    out
}

/// What [`report`] found and wrote.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReportSummary {
    pub files: Vec<String>,
    pub test: Option<TestRow>,
    pub sweep: Vec<(String, BoxStats, f64)>,
    pub final_validation_ratio: Option<f64>,
}

/// Regenerates `report/` from `trainlog.csv`, `report/test.csv` and
/// `report/sweep.csv`, whichever exist.
pub fn report(dir: &RunDir) -> Result<ReportSummary, HarnessError> {
    let out = dir.report();
    fs::create_dir_all(&out).map_err(file_err(&out))?;
    let mut summary = ReportSummary { files: vec![], test: None, sweep: vec![], final_validation_ratio: None };
    let write = |name: &str, text: String, summary: &mut ReportSummary| -> Result<(), HarnessError> {
        let p = out.join(name);
        fs::write(&p, text).map_err(file_err(&p))?;
        summary.files.push(format!("report/{name}"));
        Ok(())
    };

    if dir.trainlog().is_file() {
        let p = dir.trainlog();
        let f = File::open(&p).map_err(file_err(&p))?;
        let log = read_trainlog(BufReader::new(f))?;
        if log.iter().any(|r| r.val_value_ratio.is_some()) {
            let c = validation_curve(&log)?;
            summary.final_validation_ratio = c.value_ratio.last().copied();
            let mut s = String::from("step,val_value_ratio,val_episode_len,ema_value_ratio,ema_episode_len\n");
            for i in 0..c.steps.len() {
                let _ = writeln!(
                    s,
                    "{},{},{},{},{}",
                    c.steps[i], c.value_ratio[i], c.episode_len[i], c.ema_value_ratio[i], c.ema_episode_len[i]
                );
            }
            write("curves.csv", s, &mut summary)?;
            let x: Vec<f64> = c.steps.iter().map(|&s| s as f64).collect();
            let svg = line_svg(
                "Validation value ratio",
                "step",
                &[("raw", &x, &c.value_ratio), ("EMA 0.3", &x, &c.ema_value_ratio)],
            );
            write("value_ratio.svg", svg, &mut summary)?;
            let svg = line_svg(
                "Validation episode length",
                "step",
                &[("raw", &x, &c.episode_len), ("EMA 0.3", &x, &c.ema_episode_len)],
            );
            write("episode_len.svg", svg, &mut summary)?;
        }
        let ep = episode_returns(&log);
        if !ep.is_empty() {
            let returns: Vec<f64> = ep.iter().map(|e| e.2).collect();
            let ema = ema_smooth(&returns, EMA_ALPHA)?;
            let mut s = String::from("episode,steps,return,ema_return\n");
            for (e, m) in ep.iter().zip(&ema) {
                let _ = writeln!(s, "{},{},{},{}", e.0, e.1, e.2, m);
            }
            write("episodes.csv", s, &mut summary)?;
        }
    }

    let test_path = out.join("test.csv");
    if test_path.is_file() {
        let csv = Csv::read(&test_path)?;
        let col = |n: &str| -> Result<Vec<f64>, HarnessError> {
            Ok(csv.floats(n)?.into_iter().map(|v| v.unwrap_or(f64::NAN)).collect())
        };
        let (value, reference, ratio, len, evals) =
            (col("value")?, col("reference_value")?, col("value_ratio")?, col("length")?, col("evaluations")?);
        if !value.is_empty() {
            let mean = |v: &[f64]| v.iter().sum::<f64>() / v.len() as f64;
            let row = TestRow {
                episodes: value.len(),
                mean_value: mean(&value),
                mean_reference_value: mean(&reference),
                mean_value_ratio: mean(&ratio),
                mean_length: mean(&len),
                mean_evaluations: mean(&evals),
            };
            let s = format!(
                "episodes,mean_value,mean_reference_value,mean_value_ratio,mean_length,mean_evaluations\n{},{},{},{},{},{}\n",
                row.episodes,
                row.mean_value,
                row.mean_reference_value,
                row.mean_value_ratio,
                row.mean_length,
                row.mean_evaluations
            );
            write("table.csv", s, &mut summary)?;
            summary.test = Some(row);
        }
    }

    let sweep_path = out.join("sweep.csv");
    if sweep_path.is_file() {
        let csv = Csv::read(&sweep_path)?;
        let methods = csv.strings("method")?;
        let values = csv.floats("value")?;
        let evals = csv.floats("evaluations")?;
        let mut order: Vec<String> = Vec::new();
        for m in &methods {
            if !order.contains(m) {
                order.push(m.clone());
            }
        }
        let mut s = String::from("method,n,min,q1,median,q3,max,mean,mean_evaluations\n");
        let mut boxes = Vec::new();
        for m in &order {
            let idx: Vec<usize> = (0..methods.len()).filter(|&i| &methods[i] == m).collect();
            let v: Vec<f64> = idx.iter().filter_map(|&i| values[i]).collect();
            if v.is_empty() {
                continue;
            }
            let b = BoxStats::of(&v)?;
            let e = idx.iter().filter_map(|&i| evals[i]).sum::<f64>() / idx.len() as f64;
            let _ = writeln!(s, "{m},{},{},{},{},{},{},{},{e}", b.n, b.min, b.q1, b.median, b.q3, b.max, b.mean);
            boxes.push((m.clone(), b, e));
        }
        write("sweep_summary.csv", s, &mut summary)?;
        write("sweep.svg", box_svg("State value by method", &boxes), &mut summary)?;
        summary.sweep = boxes;
    }
    Ok(summary)
}

const SVG_W: f64 = 640.0;
const SVG_H: f64 = 400.0;
const MARGIN: f64 = 56.0;
const COLORS: [&str; 4] = ["#9aa5b1", "#1f77b4", "#d62728", "#2ca02c"];

fn span(values: impl Iterator<Item = f64>) -> (f64, f64) {
    let (lo, hi) = values
        .filter(|v| v.is_finite())
        .fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), v| (l.min(v), h.max(v)));
    if !lo.is_finite() {
        return (0.0, 1.0);
    }
    if hi - lo < 1e-12 {
        (lo - 0.5, hi + 0.5)
    } else {
        let pad = 0.05 * (hi - lo);
        (lo - pad, hi + pad)
    }
}

fn svg_frame(title: &str, ylo: f64, yhi: f64) -> String {
    let mut s = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{SVG_W}\" height=\"{SVG_H}\" font-family=\"sans-serif\" font-size=\"12\">\n\
         <rect width=\"100%\" height=\"100%\" fill=\"white\"/>\n\
         <text x=\"{}\" y=\"20\" text-anchor=\"middle\" font-size=\"14\">{title}</text>\n\
         <rect x=\"{MARGIN}\" y=\"{MARGIN}\" width=\"{}\" height=\"{}\" fill=\"none\" stroke=\"black\"/>\n",
        SVG_W / 2.0,
        SVG_W - 2.0 * MARGIN,
        SVG_H - 2.0 * MARGIN
    );
    for k in 0..=4 {
        let v = ylo + (yhi - ylo) * k as f64 / 4.0;
        let y = SVG_H - MARGIN - (SVG_H - 2.0 * MARGIN) * k as f64 / 4.0;
        let _ = writeln!(s, "<text x=\"{}\" y=\"{y:.1}\" text-anchor=\"end\">{v:.3}</text>", MARGIN - 4.0);
    }
    s
}

/// Line plot of `(label, x, y)` series.
pub fn line_svg(title: &str, xlabel: &str, series: &[(&str, &[f64], &[f64])]) -> String {
    let (xlo, xhi) = span(series.iter().flat_map(|s| s.1.iter().copied()));
    let (ylo, yhi) = span(series.iter().flat_map(|s| s.2.iter().copied()));
    let px = |x: f64| MARGIN + (x - xlo) / (xhi - xlo) * (SVG_W - 2.0 * MARGIN);
    let py = |y: f64| SVG_H - MARGIN - (y - ylo) / (yhi - ylo) * (SVG_H - 2.0 * MARGIN);
    let mut s = svg_frame(title, ylo, yhi);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"middle\">{xlabel}</text>",
        SVG_W / 2.0,
        SVG_H - 16.0
    );
    let _ = writeln!(s, "<text x=\"{MARGIN}\" y=\"{}\" text-anchor=\"start\">{xlo:.0}</text>", SVG_H - MARGIN + 16.0);
    let _ = writeln!(
        s,
        "<text x=\"{}\" y=\"{}\" text-anchor=\"end\">{xhi:.0}</text>",
        SVG_W - MARGIN,
        SVG_H - MARGIN + 16.0
    );
    for (k, (label, x, y)) in series.iter().enumerate() {
        let color = COLORS[k % COLORS.len()];
        let pts: Vec<String> = x.iter().zip(y.iter()).map(|(a, b)| format!("{:.1},{:.1}", px(*a), py(*b))).collect();
        let _ = writeln!(
            s,
            "<polyline fill=\"none\" stroke=\"{color}\" stroke-width=\"1.5\" points=\"{}\"/>",
            pts.join(" ")
        );
        let _ = writeln!(
            s,
            "<text x=\"{}\" y=\"{}\" fill=\"{color}\">{label}</text>",
            SVG_W - MARGIN - 80.0,
            MARGIN + 16.0 * (k as f64 + 1.0)
        );
    }
    s.push_str("</svg>\n");
    s
}

/// Box plot, one box per labelled [`BoxStats`].
pub fn box_svg(title: &str, boxes: &[(String, BoxStats, f64)]) -> String {
    let (ylo, yhi) = span(boxes.iter().flat_map(|b| [b.1.min, b.1.max]));
    let py = |y: f64| SVG_H - MARGIN - (y - ylo) / (yhi - ylo) * (SVG_H - 2.0 * MARGIN);
    let mut s = svg_frame(title, ylo, yhi);
    let slot = (SVG_W - 2.0 * MARGIN) / boxes.len().max(1) as f64;
    for (k, (label, b, _)) in boxes.iter().enumerate() {
        let cx = MARGIN + slot * (k as f64 + 0.5);
        let w = slot * 0.25;
        let _ = writeln!(
            s,
            "<line x1=\"{cx:.1}\" x2=\"{cx:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"black\"/>",
            py(b.min),
            py(b.max)
        );
        let _ = writeln!(
            s,
            "<rect x=\"{:.1}\" y=\"{:.1}\" width=\"{:.1}\" height=\"{:.1}\" fill=\"#c6dbef\" stroke=\"black\"/>",
            cx - w,
            py(b.q3),
            2.0 * w,
            (py(b.q1) - py(b.q3)).max(0.5)
        );
        let _ = writeln!(
            s,
            "<line x1=\"{:.1}\" x2=\"{:.1}\" y1=\"{:.1}\" y2=\"{:.1}\" stroke=\"#d62728\" stroke-width=\"2\"/>",
            cx - w,
            cx + w,
            py(b.median),
            py(b.median)
        );
        let _ = writeln!(
            s,
            "<text x=\"{cx:.1}\" y=\"{}\" text-anchor=\"middle\">{label}</text>",
            SVG_H - MARGIN + 16.0
        );
    }
    s.push_str("</svg>\n");
    s
}
