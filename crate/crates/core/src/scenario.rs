//! Randomised demand scenarios and their persisted form.
//!
//! Nodal demands are drawn in three stages: each junction's base demand is
//! scaled by a truncated-normal multiplier, a new total is drawn as a
//! uniform fraction of the base total, and the scaled demands are rescaled to
//! sum to that total. Initial speeds are drawn uniformly from the speed grid.
//!
//! Scenario files are JSON lines, one [`Scenario`] per line:
//!
//! ```text
//! {"seed":144115188075855872,"demands":[...],"initial_speeds":[0.85],
//!  "reference":{"speeds":[0.93],"value":0.97,"evaluations":14}}
//! ```
//!
//! `seed` is the random stream id the scenario was drawn from; `reference` is
//! omitted when no reference solution was computed.

use std::io::{BufRead, Write};

use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::environment::{state_value, ObjectiveConfig, SpeedGrid};
use crate::hydraulics::{HydraulicsError, Solver, SolverConfig};
use crate::optimizers::{nelder_mead, one_shot_random_trial, NelderMeadConfig, SearchBox};
use crate::rng::{self, Purpose};

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error("base demands are all zero")]
    DegenerateBase,
    #[error("scenario count must be at least 1")]
    EmptySet,
    #[error("scenario {index}: hydraulics failed after {attempts} draws: {source}")]
    Unsolvable {
        index: usize,
        attempts: usize,
        source: HydraulicsError,
    },
    #[error("invalid randomizer configuration: {0}")]
    InvalidConfig(String),
    #[error("scenario file line {line}: {source}")]
    Parse { line: usize, source: serde_json::Error },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DemandRandomizerConfig {
    pub uniform_lo: f64,
    pub uniform_hi: f64,
    pub truncnorm_mean: f64,
    pub truncnorm_stddev: f64,
    pub truncnorm_lo: f64,
    pub truncnorm_hi: f64,
}

impl Default for DemandRandomizerConfig {
    fn default() -> Self {
        Self {
            uniform_lo: 0.3,
            uniform_hi: 1.1,
            truncnorm_mean: 1.0,
            truncnorm_stddev: 1.0,
            truncnorm_lo: 0.7,
            truncnorm_hi: 1.3,
        }
    }
}

impl DemandRandomizerConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.uniform_lo < self.uniform_hi) || !(self.truncnorm_lo < self.truncnorm_hi) {
            return Err(ScenarioError::InvalidConfig("lo must be below hi".into()));
        }
        if !(self.truncnorm_stddev > 0.0) {
            return Err(ScenarioError::InvalidConfig("stddev must be positive".into()));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ReferenceSolution {
    pub speeds: Vec<f64>,
    pub value: f64,
    pub evaluations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Scenario {
    pub seed: u64,
    pub demands: Vec<f64>,
    pub initial_speeds: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub reference: Option<ReferenceSolution>,
}

/// Per-junction multipliers before rescaling, plus the drawn total.
#[derive(Debug, Clone, PartialEq)]
pub struct DemandDraw {
    pub demands: Vec<f64>,
    pub multipliers: Vec<f64>,
    pub total: f64,
}

fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, cfg: &DemandRandomizerConfig) -> f64 {
    let normal = Normal::new(cfg.truncnorm_mean, cfg.truncnorm_stddev).expect("validated stddev");
    loop {
        let x = normal.sample(rng);
        if x >= cfg.truncnorm_lo && x <= cfg.truncnorm_hi {
            return x;
        }
    }
}

/// Three-stage demand randomisation, returning the intermediate draws too.
pub fn randomize_demands_detailed<R: Rng + ?Sized>(
    base: &[f64],
    cfg: &DemandRandomizerConfig,
    rng: &mut R,
) -> Result<DemandDraw, ScenarioError> {
    cfg.validate()?;
    let base_total: f64 = base.iter().sum();
    if !(base_total > 0.0) {
        return Err(ScenarioError::DegenerateBase);
    }
    let total = rng.random_range(cfg.uniform_lo..cfg.uniform_hi) * base_total;
    let multipliers: Vec<f64> = base.iter().map(|_| truncated_normal(rng, cfg)).collect();
    let scaled: Vec<f64> = base.iter().zip(&multipliers).map(|(c, m)| c * m).collect();
    let scaled_total: f64 = scaled.iter().sum();
    let demands = scaled.iter().map(|c| c * (total / scaled_total)).collect();
    Ok(DemandDraw {
        demands,
        multipliers,
        total,
    })
}

pub fn randomize_demands<R: Rng + ?Sized>(
    base: &[f64],
    cfg: &DemandRandomizerConfig,
    rng: &mut R,
) -> Result<Vec<f64>, ScenarioError> {
    randomize_demands_detailed(base, cfg, rng).map(|d| d.demands)
}

/// Uniform draw over the speed grid for every group.
pub fn randomize_initial_speeds<R: Rng + ?Sized>(n_groups: usize, grid: &SpeedGrid, rng: &mut R) -> Vec<f64> {
    (0..n_groups)
        .map(|_| grid.speed(rng.random_range(0..=grid.top_level())))
        .collect()
}

/// Which optimiser supplies reference solutions.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Guide {
    #[default]
    Nm,
    Osrt,
}

impl std::str::FromStr for Guide {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "nm" => Ok(Guide::Nm),
            "osrt" => Ok(Guide::Osrt),
            _ => Err(format!("unknown guide `{s}` (expected nm or osrt)")),
        }
    }
}

/// Everything needed to draw scenarios and their references for one network.
#[derive(Debug, Clone)]
pub struct ScenarioContext<'a> {
    pub solver: &'a Solver<'a>,
    pub solver_cfg: SolverConfig,
    pub objective: ObjectiveConfig,
    pub randomizer: DemandRandomizerConfig,
    pub grid: SpeedGrid,
    pub nelder_mead: NelderMeadConfig,
    pub guide: Guide,
}

const MAX_DRAWS: usize = 16;

impl<'a> ScenarioContext<'a> {
    /// Context sharing the objective, solver settings and speed grid of an
    /// environment configuration.
    pub fn new(solver: &'a Solver<'a>, env: &crate::environment::EnvConfig, guide: Guide) -> Self {
        Self {
            solver,
            solver_cfg: env.solver,
            objective: env.objective,
            randomizer: DemandRandomizerConfig::default(),
            grid: env.grid,
            nelder_mead: NelderMeadConfig::default(),
            guide,
        }
    }

    pub fn search_box(&self) -> SearchBox {
        SearchBox::uniform(self.solver.network().n_groups(), self.grid.lo, self.grid.hi)
            .expect("validated speed grid")
    }

    /// State value of `speeds` under `demands`; non-converged solves score 0.
    pub fn evaluate(&self, demands: &[f64], speeds: &[f64]) -> f64 {
        match self.solver.solve(demands, speeds, &self.solver_cfg) {
            Ok(st) => state_value(&st, &self.objective).unwrap_or(0.0),
            Err(_) => 0.0,
        }
    }

    /// Reference solution for a demand map. The one-shot guide draws its
    /// trial point from `rng`.
    pub fn reference<R: Rng + ?Sized>(&self, demands: &[f64], rng: &mut R) -> ReferenceSolution {
        let bounds = self.search_box();
        let f = |x: &[f64]| self.evaluate(demands, x);
        let r = match self.guide {
            Guide::Nm => nelder_mead(f, &bounds, None, &self.nelder_mead).expect("budget exceeds simplex size"),
            Guide::Osrt => one_shot_random_trial(f, &bounds, rng),
        };
        ReferenceSolution {
            speeds: r.best_speeds,
            value: r.best_value,
            evaluations: r.evaluations,
        }
    }

    /// Reference for a scenario, reproducible from its stream id.
    pub fn reference_for(&self, scenario: &Scenario, master_seed: u64) -> ReferenceSolution {
        let mut rng = rng::keyed_stream(master_seed, Purpose::Optimizer, scenario.seed);
        self.reference(&scenario.demands, &mut rng)
    }

    /// Draws one scenario from stream `(purpose, index)`, redrawing on solver
    /// failure at the initial speeds.
    pub fn draw(
        &self,
        master_seed: u64,
        purpose: Purpose,
        index: usize,
        with_reference: bool,
    ) -> Result<Scenario, ScenarioError> {
        let net = self.solver.network();
        let base = net.base_demands();
        let mut last_err = None;
        for attempt in 0..MAX_DRAWS {
            let id = rng::stream_id(purpose, ((attempt as u64) << 40) | index as u64);
            let mut r = rng::from_stream_id(master_seed, id);
            let demands = randomize_demands(&base, &self.randomizer, &mut r)?;
            let initial_speeds = randomize_initial_speeds(net.n_groups(), &self.grid, &mut r);
            if let Err(e) = self.solver.solve(&demands, &initial_speeds, &self.solver_cfg) {
                last_err = Some(e);
                continue;
            }
            let mut sc = Scenario {
                seed: id,
                demands,
                initial_speeds,
                reference: None,
            };
            if with_reference {
                sc.reference = Some(self.reference_for(&sc, master_seed));
            }
            return Ok(sc);
        }
        Err(ScenarioError::Unsolvable {
            index,
            attempts: MAX_DRAWS,
            source: last_err.expect("at least one failed draw"),
        })
    }
}

/// `n` scenarios from independent streams of `purpose` under `master_seed`.
pub fn build_scenario_set(
    ctx: &ScenarioContext<'_>,
    n: usize,
    master_seed: u64,
    purpose: Purpose,
    with_reference: bool,
) -> Result<Vec<Scenario>, ScenarioError> {
    if n == 0 {
        return Err(ScenarioError::EmptySet);
    }
    (0..n).map(|i| ctx.draw(master_seed, purpose, i, with_reference)).collect()
}

pub fn write_scenarios<W: Write>(mut w: W, scenarios: &[Scenario]) -> Result<(), ScenarioError> {
    for s in scenarios {
        serde_json::to_writer(&mut w, s).map_err(|e| ScenarioError::Io(e.into()))?;
        w.write_all(b"\n")?;
    }
    Ok(())
}

pub fn read_scenarios<R: BufRead>(r: R) -> Result<Vec<Scenario>, ScenarioError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(|source| ScenarioError::Parse { line: i + 1, source })?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::stream;

    #[test]
    fn rescale_hits_drawn_total() {
        let base = [1.0, 2.0, 0.0, 4.5, 3.3];
        let mut r = stream(11, Purpose::Scratch, 0);
        for _ in 0..1000 {
            let d = randomize_demands_detailed(&base, &DemandRandomizerConfig::default(), &mut r).unwrap();
            let sum: f64 = d.demands.iter().sum();
            assert!(((sum - d.total) / d.total).abs() < 1e-12);
            let ratio = sum / base.iter().sum::<f64>();
            assert!((0.3..=1.1).contains(&ratio));
            for m in &d.multipliers {
                assert!((0.7..=1.3).contains(m));
            }
            assert_eq!(d.demands[2], 0.0);
        }
    }

    #[test]
    fn degenerate_base() {
        let mut r = stream(1, Purpose::Scratch, 0);
        assert!(matches!(
            randomize_demands(&[0.0, 0.0], &DemandRandomizerConfig::default(), &mut r),
            Err(ScenarioError::DegenerateBase)
        ));
    }

    #[test]
    fn seeded_draws_repeat() {
        let base = [1.0, 2.0, 3.0];
        let cfg = DemandRandomizerConfig::default();
        let a = randomize_demands(&base, &cfg, &mut stream(5, Purpose::Training, 9)).unwrap();
        let b = randomize_demands(&base, &cfg, &mut stream(5, Purpose::Training, 9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn initial_speeds_on_grid() {
        let grid = SpeedGrid::new(0.7, 1.1, 0.05).unwrap();
        let mut r = stream(3, Purpose::Scratch, 0);
        for _ in 0..200 {
            for s in randomize_initial_speeds(3, &grid, &mut r) {
                let k = ((s - 0.7) / 0.05).round();
                assert!((0.0..=8.0).contains(&k));
                assert!((s - grid.speed(k as i64)).abs() == 0.0);
            }
        }
        let flat = SpeedGrid::new(1.0, 1.0, 0.05).unwrap();
        assert_eq!(randomize_initial_speeds(2, &flat, &mut r), vec![1.0, 1.0]);
    }

    #[test]
    fn scenario_jsonl_round_trip() {
        let s = vec![
            Scenario {
                seed: 42,
                demands: vec![0.1, 1.0 / 3.0, 7.25e-3],
                initial_speeds: vec![0.85],
                reference: Some(ReferenceSolution {
                    speeds: vec![0.9312345678901234],
                    value: 0.987654321,
                    evaluations: 17,
                }),
            },
            Scenario {
                seed: 43,
                demands: vec![2.0],
                initial_speeds: vec![1.1],
                reference: None,
            },
        ];
        let mut buf = Vec::new();
        write_scenarios(&mut buf, &s).unwrap();
        let back = read_scenarios(buf.as_slice()).unwrap();
        assert_eq!(back, s);
    }
}
