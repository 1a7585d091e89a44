//! The pump-speed decision process.
//!
//! Observations are junction pressure heads divided by the highest shut-off
//! head, followed by the group speed ratios. Actions raise or lower one
//! group's speed ratio by a fixed increment, or do nothing (a *siesta*).
//! Three consecutive siestas end an episode, as does the step limit.
//!
//! During training every scenario carries a reference speed setting and its
//! state value. Active moves are rewarded when they shrink the best distance
//! to the reference so far; siestas are rewarded when the current state value
//! is within the siesta tolerance of the reference value. In inference mode
//! the reference is never read and every reward is zero.

use std::io::Write;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydraulics::{HydraulicState, HydraulicsError, Solver, SolverConfig};
use crate::network::{Network, NetworkError};
use crate::scenario::{ReferenceSolution, Scenario};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum EnvError {
    #[error("hydraulic state is not converged")]
    NotConverged,
    #[error(transparent)]
    Hydraulics(#[from] HydraulicsError),
    #[error(transparent)]
    Network(#[from] NetworkError),
    #[error("training mode requires a scenario with a reference solution")]
    MissingReference,
    #[error("episode already finished")]
    EpisodeFinished,
    #[error("episode not finished yet")]
    EpisodeNotFinished,
    #[error("environment has not been reset")]
    NotReset,
    #[error("action {0} out of range")]
    InvalidAction(usize),
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
}

/// Weights and limits of the state value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ObjectiveConfig {
    /// Lower pressure-head limit above junction elevation [m].
    pub h_min: f64,
    /// Upper pressure-head limit above junction elevation [m].
    pub h_max: f64,
    pub w_satisfaction: f64,
    pub w_eff: f64,
    pub w_feed: f64,
    /// Product of group peak efficiencies.
    pub eta_limit: f64,
}

impl ObjectiveConfig {
    pub fn for_network(net: &Network) -> Self {
        Self {
            h_min: 15.0,
            h_max: 100.0,
            w_satisfaction: 8.0 / 16.0,
            w_eff: 5.0 / 16.0,
            w_feed: 3.0 / 16.0,
            eta_limit: net.efficiency_limit(),
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        let w = [self.w_satisfaction, self.w_eff, self.w_feed];
        if w.iter().any(|&x| x < 0.0) || (w.iter().sum::<f64>() - 1.0).abs() > 1e-12 {
            return Err(EnvError::InvalidConfig("weights must be non-negative and sum to 1".into()));
        }
        if !(self.h_min < self.h_max) {
            return Err(EnvError::InvalidConfig("h_min must be below h_max".into()));
        }
        if !(self.eta_limit > 0.0 && self.eta_limit <= 1.0) {
            return Err(EnvError::InvalidConfig("eta_limit must lie in (0, 1]".into()));
        }
        Ok(())
    }
}

/// The three ratios that make up the state value.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ValueBreakdown {
    pub satisfaction: f64,
    pub efficiency: f64,
    pub feed: f64,
    pub value: f64,
}

pub fn value_breakdown(state: &HydraulicState, obj: &ObjectiveConfig) -> Result<ValueBreakdown, EnvError> {
    if !state.converged {
        return Err(EnvError::NotConverged);
    }
    let n_wrong = state
        .pressures
        .iter()
        .filter(|&&p| p < obj.h_min || p > obj.h_max)
        .count();
    let satisfaction = 1.0 - n_wrong as f64 / state.pressures.len() as f64;
    let efficiency = state.pump_ops.iter().map(|p| p.efficiency).product::<f64>() / obj.eta_limit;
    let c_tot = state.pump_ops.iter().map(|p| p.flow).sum::<f64>() + state.tank_flows.iter().sum::<f64>();
    let flux: f64 = state.tank_flows.iter().map(|f| f.abs()).sum();
    let feed = c_tot / (c_tot + flux);
    let value = obj.w_satisfaction * satisfaction + obj.w_eff * efficiency + obj.w_feed * feed;
    Ok(ValueBreakdown {
        satisfaction,
        efficiency,
        feed,
        value,
    })
}

/// Weighted satisfaction, efficiency and feed ratio of a converged state.
pub fn state_value(state: &HydraulicState, obj: &ObjectiveConfig) -> Result<f64, EnvError> {
    value_breakdown(state, obj).map(|b| b.value)
}

/// Equally spaced speed ratios between `lo` and `hi`. Speeds are addressed by
/// integer level so repeated moves never accumulate rounding error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedGrid {
    pub lo: f64,
    pub hi: f64,
    pub increment: f64,
}

impl SpeedGrid {
    pub fn new(lo: f64, hi: f64, increment: f64) -> Result<Self, EnvError> {
        let g = Self { lo, hi, increment };
        g.validate()?;
        Ok(g)
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        if !(self.lo.is_finite() && self.hi.is_finite() && self.lo > 0.0 && self.lo <= self.hi) {
            return Err(EnvError::InvalidConfig("speed limits need 0 < lo <= hi".into()));
        }
        if !(self.increment > 0.0) {
            return Err(EnvError::InvalidConfig("speed increment must be positive".into()));
        }
        let steps = (self.hi - self.lo) / self.increment;
        if (steps - steps.round()).abs() > 1e-9 {
            return Err(EnvError::InvalidConfig("speed range is not a whole number of increments".into()));
        }
        Ok(())
    }

    pub fn top_level(&self) -> i64 {
        ((self.hi - self.lo) / self.increment).round() as i64
    }

    pub fn n_levels(&self) -> usize {
        self.top_level() as usize + 1
    }

    pub fn speed(&self, level: i64) -> f64 {
        if level == self.top_level() {
            self.hi
        } else {
            self.lo + level as f64 * self.increment
        }
    }

    /// Nearest level to `speed`, clamped to the grid.
    pub fn level_of(&self, speed: f64) -> i64 {
        (((speed - self.lo) / self.increment).round() as i64).clamp(0, self.top_level())
    }

    pub fn snap(&self, speed: f64) -> f64 {
        self.speed(self.level_of(speed))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RewardConfig {
    pub penalty: f64,
    /// Multiplies the distance to the reference after an approaching move.
    pub progress: f64,
    /// The n-th consecutive qualifying siesta earns n times this.
    pub siesta: f64,
    pub bonus: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        Self {
            penalty: -1.0,
            progress: 0.5,
            siesta: 1.0,
            bonus: 10.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Mode {
    #[default]
    Training,
    Inference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnvConfig {
    pub grid: SpeedGrid,
    pub max_steps: usize,
    /// A siesta qualifies when `1 - v / v_ref` is below this.
    pub siesta_tolerance: f64,
    pub siesta_limit: usize,
    pub rewards: RewardConfig,
    pub objective: ObjectiveConfig,
    pub solver: SolverConfig,
    pub mode: Mode,
}

impl EnvConfig {
    pub fn for_network(net: &Network, max_steps: usize) -> Self {
        Self {
            grid: SpeedGrid {
                lo: 0.7,
                hi: 1.1,
                increment: 0.05,
            },
            max_steps,
            siesta_tolerance: 0.02,
            siesta_limit: 3,
            rewards: RewardConfig::default(),
            objective: ObjectiveConfig::for_network(net),
            solver: SolverConfig::default(),
            mode: Mode::Training,
        }
    }

    pub fn validate(&self) -> Result<(), EnvError> {
        self.grid.validate()?;
        if !(self.grid.lo < self.grid.hi) {
            return Err(EnvError::InvalidConfig("speed limits need lo < hi".into()));
        }
        if self.max_steps == 0 || self.siesta_limit == 0 {
            return Err(EnvError::InvalidConfig("max_steps and siesta_limit must be at least 1".into()));
        }
        if !(self.siesta_tolerance >= 0.0) {
            return Err(EnvError::InvalidConfig("siesta tolerance must be non-negative".into()));
        }
        self.objective.validate()
    }
}

/// Dense action encoding: `0..G` raise group `g`, `G..2G` lower group
/// `g - G`, `2G` is the siesta.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Action {
    Increase(usize),
    Decrease(usize),
    Siesta,
}

impl Action {
    pub fn count(n_groups: usize) -> usize {
        2 * n_groups + 1
    }

    pub fn decode(index: usize, n_groups: usize) -> Result<Self, EnvError> {
        match index {
            i if i < n_groups => Ok(Action::Increase(i)),
            i if i < 2 * n_groups => Ok(Action::Decrease(i - n_groups)),
            i if i == 2 * n_groups => Ok(Action::Siesta),
            i => Err(EnvError::InvalidAction(i)),
        }
    }

    pub fn encode(self, n_groups: usize) -> usize {
        match self {
            Action::Increase(g) => g,
            Action::Decrease(g) => n_groups + g,
            Action::Siesta => 2 * n_groups,
        }
    }

    pub fn label(self) -> String {
        match self {
            Action::Increase(g) => format!("up{g}"),
            Action::Decrease(g) => format!("down{g}"),
            Action::Siesta => "siesta".into(),
        }
    }
}

/// Junction pressure heads over `shutoff`, then the speed ratios.
pub fn observe(state: &HydraulicState, speeds: &[f64], shutoff: f64) -> Vec<f64> {
    let mut obs = Vec::with_capacity(state.pressures.len() + speeds.len());
    obs.extend(state.pressures.iter().map(|p| p / shutoff));
    obs.extend_from_slice(speeds);
    obs
}

pub fn distance(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt()
}

/// Mutable state of the running episode.
#[derive(Debug, Clone)]
pub struct EnvState {
    pub levels: Vec<i64>,
    pub speeds: Vec<f64>,
    pub observation: Vec<f64>,
    pub n_steps: usize,
    pub n_siesta: usize,
    /// Best distance to the reference speeds so far; `None` in inference mode.
    pub best_distance: Option<f64>,
    pub value: f64,
    pub terminal: bool,
    /// Hydraulic solves spent in this episode, including the reset.
    pub evaluations: usize,
    demands: Vec<f64>,
    reference: Option<ReferenceSolution>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct StepResult {
    pub reward: f64,
    pub observation: Vec<f64>,
    pub terminal: bool,
    /// False when the move was reverted.
    pub accepted: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FinalMetrics {
    pub value: f64,
    /// Reference value, when the scenario carries one.
    pub reference_value: Option<f64>,
    pub value_ratio: Option<f64>,
    pub episode_length: usize,
    pub evaluations: usize,
}

/// One row of an exported episode trace.
#[derive(Debug, Clone, PartialEq)]
pub struct TraceRow {
    pub step: usize,
    pub action: Action,
    pub reward: f64,
    pub value: f64,
    pub distance: Option<f64>,
    pub speeds: Vec<f64>,
}

pub struct Environment<'a> {
    solver: Solver<'a>,
    cfg: EnvConfig,
    shutoff: f64,
    state: Option<EnvState>,
    trace: Option<Vec<TraceRow>>,
}

impl<'a> Environment<'a> {
    pub fn new(net: &'a Network, cfg: EnvConfig) -> Result<Self, EnvError> {
        cfg.validate()?;
        let shutoff = net.shutoff_head_max(cfg.grid.hi)?;
        Ok(Self {
            solver: Solver::new(net),
            cfg,
            shutoff,
            state: None,
            trace: None,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }

    pub fn set_mode(&mut self, mode: Mode) {
        self.cfg.mode = mode;
    }

    pub fn solver(&self) -> &Solver<'a> {
        &self.solver
    }

    pub fn network(&self) -> &Network {
        self.solver.network()
    }

    pub fn n_groups(&self) -> usize {
        self.network().n_groups()
    }

    pub fn n_actions(&self) -> usize {
        Action::count(self.n_groups())
    }

    pub fn observation_len(&self) -> usize {
        self.network().n_junctions() + self.n_groups()
    }

    pub fn shutoff_head(&self) -> f64 {
        self.shutoff
    }

    pub fn state(&self) -> Option<&EnvState> {
        self.state.as_ref()
    }

    /// Start recording a trace for subsequent episodes.
    pub fn record_trace(&mut self, on: bool) {
        self.trace = on.then(Vec::new);
    }

    pub fn trace(&self) -> Option<&[TraceRow]> {
        self.trace.as_deref()
    }

    fn solve(&self, demands: &[f64], speeds: &[f64]) -> Result<(HydraulicState, f64), EnvError> {
        let st = self.solver.solve(demands, speeds, &self.cfg.solver)?;
        let v = state_value(&st, &self.cfg.objective)?;
        Ok((st, v))
    }

    pub fn reset(&mut self, scenario: &Scenario) -> Result<Vec<f64>, EnvError> {
        let training = self.cfg.mode == Mode::Training;
        if training && scenario.reference.is_none() {
            return Err(EnvError::MissingReference);
        }
        let n = self.n_groups();
        if scenario.initial_speeds.len() != n {
            return Err(HydraulicsError::ShapeMismatch {
                expected: n,
                got: scenario.initial_speeds.len(),
            }
            .into());
        }
        let levels: Vec<i64> = scenario.initial_speeds.iter().map(|&s| self.cfg.grid.level_of(s)).collect();
        let speeds: Vec<f64> = levels.iter().map(|&l| self.cfg.grid.speed(l)).collect();
        let (hs, value) = self.solve(&scenario.demands, &speeds)?;
        let observation = observe(&hs, &speeds, self.shutoff);
        let reference = if training { scenario.reference.clone() } else { None };
        let best_distance = reference.as_ref().map(|r| distance(&speeds, &r.speeds));
        if let Some(t) = self.trace.as_mut() {
            t.clear();
        }
        self.state = Some(EnvState {
            levels,
            speeds,
            observation: observation.clone(),
            n_steps: 0,
            n_siesta: 0,
            best_distance,
            value,
            terminal: false,
            evaluations: 1,
            demands: scenario.demands.clone(),
            reference,
        });
        Ok(observation)
    }

    pub fn step_index(&mut self, action: usize) -> Result<StepResult, EnvError> {
        let a = Action::decode(action, self.n_groups())?;
        self.step(a)
    }

    pub fn step(&mut self, action: Action) -> Result<StepResult, EnvError> {
        let mut st = self.state.take().ok_or(EnvError::NotReset)?;
        let out = self.advance(&mut st, action);
        if let (Ok((r, dist)), Some(t)) = (&out, self.trace.as_mut()) {
            t.push(TraceRow {
                step: st.n_steps,
                action,
                reward: r.reward,
                value: st.value,
                distance: dist.or(st.best_distance),
                speeds: st.speeds.clone(),
            });
        }
        self.state = Some(st);
        out.map(|(r, _)| r)
    }

    fn advance(&self, st: &mut EnvState, action: Action) -> Result<(StepResult, Option<f64>), EnvError> {
        if st.terminal {
            return Err(EnvError::EpisodeFinished);
        }
        let n = self.n_groups();
        if let Action::Increase(g) | Action::Decrease(g) = action {
            if g >= n {
                return Err(EnvError::InvalidAction(action.encode(n)));
            }
        }
        let rw = self.cfg.rewards;
        st.n_steps += 1;
        let mut terminal = st.n_steps >= self.cfg.max_steps;
        let mut reward = rw.penalty;
        let mut accepted = true;
        let mut dist = None;

        match action {
            Action::Increase(g) | Action::Decrease(g) => {
                st.n_siesta = 0;
                let level = st.levels[g] + if matches!(action, Action::Increase(_)) { 1 } else { -1 };
                if level < 0 || level > self.cfg.grid.top_level() {
                    accepted = false;
                } else {
                    let mut speeds = st.speeds.clone();
                    speeds[g] = self.cfg.grid.speed(level);
                    st.evaluations += 1;
                    match self.solve(&st.demands, &speeds) {
                        Ok((hs, v)) => {
                            st.levels[g] = level;
                            st.observation = observe(&hs, &speeds, self.shutoff);
                            st.speeds = speeds;
                            st.value = v;
                            if let (Some(r), Some(best)) = (st.reference.as_ref(), st.best_distance) {
                                let d = distance(&st.speeds, &r.speeds);
                                dist = Some(d);
                                if d < best {
                                    reward = d * rw.progress;
                                    st.best_distance = Some(d);
                                }
                            }
                        }
                        Err(_) => accepted = false,
                    }
                }
            }
            Action::Siesta => {
                st.n_siesta += 1;
                let qualifies = st
                    .reference
                    .as_ref()
                    .is_some_and(|r| 1.0 - st.value / r.value < self.cfg.siesta_tolerance);
                if st.n_siesta < self.cfg.siesta_limit {
                    if qualifies {
                        reward = st.n_siesta as f64 * rw.siesta;
                    }
                } else {
                    if qualifies {
                        reward = rw.bonus;
                    }
                    terminal = true;
                }
            }
        }
        if self.cfg.mode == Mode::Inference {
            reward = 0.0;
        }
        st.terminal = terminal;
        Ok((
            StepResult {
                reward,
                observation: st.observation.clone(),
                terminal,
                accepted,
            },
            dist,
        ))
    }

    /// Terminal metrics of the finished episode.
    pub fn evaluate_final(&self) -> Result<FinalMetrics, EnvError> {
        let st = self.state.as_ref().ok_or(EnvError::NotReset)?;
        if !st.terminal {
            return Err(EnvError::EpisodeNotFinished);
        }
        let reference_value = st.reference.as_ref().map(|r| r.value);
        Ok(FinalMetrics {
            value: st.value,
            reference_value,
            value_ratio: reference_value.map(|r| st.value / r),
            episode_length: st.n_steps,
            evaluations: st.evaluations,
        })
    }
}

/// Writes a trace as CSV: `step,action,reward,value,distance,speed_0,...`.
pub fn write_trace_csv<W: Write>(mut w: W, rows: &[TraceRow]) -> std::io::Result<()> {
    let n = rows.first().map_or(0, |r| r.speeds.len());
    write!(w, "step,action,reward,value,distance")?;
    for g in 0..n {
        write!(w, ",speed_{g}")?;
    }
    writeln!(w)?;
    for r in rows {
        let d = r.distance.map(|d| d.to_string()).unwrap_or_default();
        write!(w, "{},{},{},{},{}", r.step, r.action.label(), r.reward, r.value, d)?;
        for s in &r.speeds {
            write!(w, ",{s}")?;
        }
        writeln!(w)?;
    }
    Ok(())
}
