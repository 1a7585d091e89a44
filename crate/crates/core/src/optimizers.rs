//! Derivative-free maximisers over a box of speed ratios.
//!
//! All methods maximise an objective `f: &[f64] -> f64`, never evaluate a
//! point outside the box, and count every objective call. When the budget
//! runs out the best point found so far is returned with
//! [`Status::BudgetExhausted`].

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum OptimizeError {
    #[error("box bounds are inconsistent")]
    InvalidBox,
    #[error("evaluation budget must be at least {0}")]
    BudgetTooSmall(usize),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SearchBox {
    pub lo: Vec<f64>,
    pub hi: Vec<f64>,
}

impl SearchBox {
    pub fn new(lo: Vec<f64>, hi: Vec<f64>) -> Result<Self, OptimizeError> {
        if lo.len() != hi.len() || lo.is_empty() || lo.iter().zip(&hi).any(|(l, h)| !(l <= h)) {
            return Err(OptimizeError::InvalidBox);
        }
        Ok(Self { lo, hi })
    }

    pub fn uniform(dim: usize, lo: f64, hi: f64) -> Result<Self, OptimizeError> {
        Self::new(vec![lo; dim], vec![hi; dim])
    }

    pub fn dim(&self) -> usize {
        self.lo.len()
    }

    pub fn center(&self) -> Vec<f64> {
        self.lo.iter().zip(&self.hi).map(|(l, h)| 0.5 * (l + h)).collect()
    }

    pub fn clip(&self, x: &mut [f64]) {
        for ((v, l), h) in x.iter_mut().zip(&self.lo).zip(&self.hi) {
            *v = v.clamp(*l, *h);
        }
    }

    pub fn contains(&self, x: &[f64]) -> bool {
        x.iter().zip(&self.lo).zip(&self.hi).all(|((v, l), h)| v >= l && v <= h)
    }

    fn width(&self, i: usize) -> f64 {
        self.hi[i] - self.lo[i]
    }

    fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> Vec<f64> {
        (0..self.dim())
            .map(|i| if self.width(i) > 0.0 { rng.random_range(self.lo[i]..=self.hi[i]) } else { self.lo[i] })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Status {
    Converged,
    BudgetExhausted,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimizeResult {
    pub best_speeds: Vec<f64>,
    pub best_value: f64,
    pub evaluations: usize,
    pub status: Status,
    pub trace: Option<Vec<(Vec<f64>, f64)>>,
}

/// Counts calls and tracks the first-found best point.
struct Tracker<'f, F> {
    f: &'f mut F,
    evaluations: usize,
    budget: usize,
    best: Option<(Vec<f64>, f64)>,
    trace: Option<Vec<(Vec<f64>, f64)>>,
}

impl<'f, F: FnMut(&[f64]) -> f64> Tracker<'f, F> {
    fn new(f: &'f mut F, budget: usize, record: bool) -> Self {
        Self {
            f,
            evaluations: 0,
            budget,
            best: None,
            trace: record.then(Vec::new),
        }
    }

    fn exhausted(&self) -> bool {
        self.evaluations >= self.budget
    }

    fn eval(&mut self, x: &[f64]) -> f64 {
        self.evaluations += 1;
        let v = (self.f)(x);
        if let Some(t) = self.trace.as_mut() {
            t.push((x.to_vec(), v));
        }
        if self.best.as_ref().is_none_or(|(_, b)| v > *b) {
            self.best = Some((x.to_vec(), v));
        }
        v
    }

    fn finish(self, status: Status) -> OptimizeResult {
        let (best_speeds, best_value) = self.best.expect("at least one evaluation");
        OptimizeResult {
            best_speeds,
            best_value,
            evaluations: self.evaluations,
            status,
            trace: self.trace,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NelderMeadConfig {
    pub max_evaluations: usize,
    /// Initial simplex edge as a fraction of each box width.
    pub initial_step: f64,
    /// Stop when every vertex is within this distance of the best one.
    pub x_tol: f64,
    /// Stop when the spread of vertex values falls below this.
    pub f_tol: f64,
    pub record_trace: bool,
}

impl Default for NelderMeadConfig {
    fn default() -> Self {
        Self {
            max_evaluations: 100,
            initial_step: 0.25,
            x_tol: 1e-3,
            f_tol: 1e-6,
            record_trace: false,
        }
    }
}

/// Nelder–Mead simplex search started from `start` (the box centre if `None`).
pub fn nelder_mead<F>(
    mut f: F,
    bounds: &SearchBox,
    start: Option<&[f64]>,
    cfg: &NelderMeadConfig,
) -> Result<OptimizeResult, OptimizeError>
where
    F: FnMut(&[f64]) -> f64,
{
    let dim = bounds.dim();
    if cfg.max_evaluations < dim + 1 {
        return Err(OptimizeError::BudgetTooSmall(dim + 1));
    }
    let mut t = Tracker::new(&mut f, cfg.max_evaluations, cfg.record_trace);
    let mut x0 = start.map(<[f64]>::to_vec).unwrap_or_else(|| bounds.center());
    bounds.clip(&mut x0);

    // Vertices sorted best-first after each iteration; values are maximised.
    let mut simplex: Vec<(Vec<f64>, f64)> = Vec::with_capacity(dim + 1);
    let v0 = t.eval(&x0);
    simplex.push((x0.clone(), v0));
    for i in 0..dim {
        let mut x = x0.clone();
        let step = cfg.initial_step * bounds.width(i);
        x[i] = if x[i] + step <= bounds.hi[i] { x[i] + step } else { x[i] - step };
        let v = t.eval(&x);
        simplex.push((x, v));
    }

    let candidate = |c: &[f64], w: &[f64], k: f64| -> Vec<f64> {
        let mut x: Vec<f64> = c.iter().zip(w).map(|(ci, wi)| ci + k * (wi - ci)).collect();
        bounds.clip(&mut x);
        x
    };

    loop {
        simplex.sort_by(|a, b| b.1.total_cmp(&a.1));
        let best = &simplex[0];
        let size = simplex[1..]
            .iter()
            .map(|(x, _)| x.iter().zip(&best.0).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .fold(0.0, f64::max);
        let spread = best.1 - simplex[dim].1;
        if size <= cfg.x_tol || spread.abs() <= cfg.f_tol {
            return Ok(t.finish(Status::Converged));
        }
        if t.exhausted() {
            return Ok(t.finish(Status::BudgetExhausted));
        }

        let mut centroid = vec![0.0; dim];
        for (x, _) in &simplex[..dim] {
            for (c, v) in centroid.iter_mut().zip(x) {
                *c += v / dim as f64;
            }
        }
        let worst = simplex[dim].clone();
        let second_worst = simplex[dim - 1].1;

        let xr = candidate(&centroid, &worst.0, -1.0);
        // A reflection clipped back onto a vertex needs no new solve.
        let known = simplex.iter().find(|(x, _)| *x == xr).map(|(_, v)| *v);
        let vr = known.unwrap_or_else(|| t.eval(&xr));
        if vr > simplex[0].1 {
            if t.exhausted() {
                simplex[dim] = (xr, vr);
                continue;
            }
            let xe = candidate(&centroid, &worst.0, -2.0);
            let ve = t.eval(&xe);
            simplex[dim] = if ve > vr { (xe, ve) } else { (xr, vr) };
            continue;
        }
        if vr > second_worst && known.is_none() {
            simplex[dim] = (xr, vr);
            continue;
        }
        if t.exhausted() {
            continue;
        }
        // Outside contraction, unless clipping maps it onto the reflection
        // point; then contract inside instead.
        let outside = vr > worst.1 && known.is_none();
        let xo = candidate(&centroid, &worst.0, -0.5);
        if outside && xo != xr {
            let vc = t.eval(&xo);
            if vc >= vr {
                simplex[dim] = (xo, vc);
                continue;
            }
        } else {
            let xc = candidate(&centroid, &worst.0, 0.5);
            let vc = t.eval(&xc);
            if vc > worst.1 {
                simplex[dim] = (xc, vc);
                continue;
            }
        }
        // Shrink towards the best vertex.
        let best_x = simplex[0].0.clone();
        for vtx in simplex.iter_mut().skip(1) {
            if t.exhausted() {
                break;
            }
            let x = candidate(&best_x, &vtx.0, 0.5);
            let v = t.eval(&x);
            *vtx = (x, v);
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DifferentialEvolutionConfig {
    pub population: usize,
    pub mutation: f64,
    pub crossover: f64,
    pub max_evaluations: usize,
    pub record_trace: bool,
}

impl Default for DifferentialEvolutionConfig {
    fn default() -> Self {
        Self {
            population: 15,
            mutation: 0.8,
            crossover: 0.9,
            max_evaluations: 500,
            record_trace: false,
        }
    }
}

fn reflect(v: f64, lo: f64, hi: f64) -> f64 {
    if hi <= lo {
        return lo;
    }
    let w = hi - lo;
    let mut u = (v - lo).rem_euclid(2.0 * w);
    if u > w {
        u = 2.0 * w - u;
    }
    lo + u
}

/// DE/rand/1/bin with reflection at the bounds.
pub fn differential_evolution<F, R>(
    mut f: F,
    bounds: &SearchBox,
    cfg: &DifferentialEvolutionConfig,
    rng: &mut R,
) -> Result<OptimizeResult, OptimizeError>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let np = cfg.population.max(4);
    if cfg.max_evaluations < np {
        return Err(OptimizeError::BudgetTooSmall(np));
    }
    let dim = bounds.dim();
    let mut t = Tracker::new(&mut f, cfg.max_evaluations, cfg.record_trace);
    let mut pop: Vec<(Vec<f64>, f64)> = (0..np)
        .map(|_| {
            let x = bounds.sample(rng);
            let v = t.eval(&x);
            (x, v)
        })
        .collect();
    while !t.exhausted() {
        for i in 0..np {
            if t.exhausted() {
                break;
            }
            let mut pick = || loop {
                let k = rng.random_range(0..np);
                if k != i {
                    break k;
                }
            };
            let (a, mut b, mut c) = (pick(), pick(), pick());
            while b == a {
                b = pick();
            }
            while c == a || c == b {
                c = pick();
            }
            let forced = rng.random_range(0..dim);
            let trial: Vec<f64> = (0..dim)
                .map(|j| {
                    if j == forced || rng.random::<f64>() < cfg.crossover {
                        let v = pop[a].0[j] + cfg.mutation * (pop[b].0[j] - pop[c].0[j]);
                        reflect(v, bounds.lo[j], bounds.hi[j])
                    } else {
                        pop[i].0[j]
                    }
                })
                .collect();
            let v = t.eval(&trial);
            if v >= pop[i].1 {
                pop[i] = (trial, v);
            }
        }
    }
    Ok(t.finish(Status::BudgetExhausted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ParticleSwarmConfig {
    pub particles: usize,
    pub inertia: f64,
    pub cognitive: f64,
    pub social: f64,
    /// Velocity limit as a fraction of each box width.
    pub max_velocity: f64,
    pub max_evaluations: usize,
    pub record_trace: bool,
}

impl Default for ParticleSwarmConfig {
    fn default() -> Self {
        Self {
            particles: 20,
            inertia: 0.7298,
            cognitive: 1.49618,
            social: 1.49618,
            max_velocity: 0.2,
            max_evaluations: 500,
            record_trace: false,
        }
    }
}

/// Global-best particle swarm with velocity clamping.
pub fn particle_swarm<F, R>(
    mut f: F,
    bounds: &SearchBox,
    cfg: &ParticleSwarmConfig,
    rng: &mut R,
) -> Result<OptimizeResult, OptimizeError>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let n = cfg.particles.max(1);
    if cfg.max_evaluations < n {
        return Err(OptimizeError::BudgetTooSmall(n));
    }
    let dim = bounds.dim();
    let vmax: Vec<f64> = (0..dim).map(|i| cfg.max_velocity * bounds.width(i)).collect();
    let mut t = Tracker::new(&mut f, cfg.max_evaluations, cfg.record_trace);
    let mut pos: Vec<Vec<f64>> = (0..n).map(|_| bounds.sample(rng)).collect();
    let mut vel: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..dim).map(|i| if vmax[i] > 0.0 { rng.random_range(-vmax[i]..=vmax[i]) } else { 0.0 }).collect())
        .collect();
    let mut personal: Vec<(Vec<f64>, f64)> = pos.iter().map(|x| (x.clone(), t.eval(x))).collect();
    let mut global = personal
        .iter()
        .fold(None::<&(Vec<f64>, f64)>, |acc, p| match acc {
            Some(a) if a.1 >= p.1 => Some(a),
            _ => Some(p),
        })
        .cloned()
        .expect("non-empty swarm");
    while !t.exhausted() {
        for k in 0..n {
            if t.exhausted() {
                break;
            }
            for i in 0..dim {
                let r1: f64 = rng.random();
                let r2: f64 = rng.random();
                let v = cfg.inertia * vel[k][i]
                    + cfg.cognitive * r1 * (personal[k].0[i] - pos[k][i])
                    + cfg.social * r2 * (global.0[i] - pos[k][i]);
                vel[k][i] = v.clamp(-vmax[i], vmax[i]);
                let x = pos[k][i] + vel[k][i];
                if x < bounds.lo[i] || x > bounds.hi[i] {
                    vel[k][i] = 0.0;
                }
                pos[k][i] = x.clamp(bounds.lo[i], bounds.hi[i]);
            }
            let v = t.eval(&pos[k]);
            if v > personal[k].1 {
                personal[k] = (pos[k].clone(), v);
                if v > global.1 {
                    global = personal[k].clone();
                }
            }
        }
    }
    Ok(t.finish(Status::BudgetExhausted))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FssrsConfig {
    /// Step length as a fraction of the narrowest box width.
    pub step: f64,
    pub max_evaluations: usize,
    pub record_trace: bool,
}

impl Default for FssrsConfig {
    fn default() -> Self {
        Self {
            step: 0.125,
            max_evaluations: 200,
            record_trace: false,
        }
    }
}

/// Fixed step-size random search: from the incumbent, step a fixed length in
/// a uniformly random direction and keep the point if it improves.
pub fn fssrs<F, R>(
    mut f: F,
    bounds: &SearchBox,
    start: Option<&[f64]>,
    cfg: &FssrsConfig,
    rng: &mut R,
) -> Result<OptimizeResult, OptimizeError>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let dim = bounds.dim();
    let width = (0..dim).map(|i| bounds.width(i)).fold(f64::INFINITY, f64::min);
    let step = cfg.step * width;
    let mut t = Tracker::new(&mut f, cfg.max_evaluations.max(1), cfg.record_trace);
    let mut x = start.map(<[f64]>::to_vec).unwrap_or_else(|| bounds.center());
    bounds.clip(&mut x);
    let mut v = t.eval(&x);
    let normal = rand_distr::StandardNormal;
    while !t.exhausted() {
        let dir: Vec<f64> = loop {
            let d: Vec<f64> = (0..dim).map(|_| rng.sample::<f64, _>(normal)).collect();
            let norm = d.iter().map(|a| a * a).sum::<f64>().sqrt();
            if norm > 1e-12 {
                break d.into_iter().map(|a| a / norm).collect();
            }
        };
        let mut y: Vec<f64> = x.iter().zip(&dir).map(|(a, d)| a + step * d).collect();
        bounds.clip(&mut y);
        let vy = t.eval(&y);
        if vy > v {
            x = y;
            v = vy;
        }
    }
    Ok(t.finish(Status::BudgetExhausted))
}

/// One uniform draw inside the box, evaluated once.
pub fn one_shot_random_trial<F, R>(mut f: F, bounds: &SearchBox, rng: &mut R) -> OptimizeResult
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    let mut t = Tracker::new(&mut f, 1, false);
    let x = bounds.sample(rng);
    t.eval(&x);
    t.finish(Status::Converged)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Nm,
    De,
    Pso,
    Fssrs,
    Osrt,
}

impl Method {
    pub const ALL: [Method; 5] = [Method::Nm, Method::De, Method::Pso, Method::Fssrs, Method::Osrt];

    pub fn name(self) -> &'static str {
        match self {
            Method::Nm => "nm",
            Method::De => "de",
            Method::Pso => "pso",
            Method::Fssrs => "fssrs",
            Method::Osrt => "osrt",
        }
    }
}

impl std::str::FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        Method::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| format!("unknown method `{s}` (expected nm, de, pso, fssrs or osrt)"))
    }
}

/// Runs `method` with default settings, optionally overriding the budget.
pub fn run_method<F, R>(
    method: Method,
    f: F,
    bounds: &SearchBox,
    budget: Option<usize>,
    rng: &mut R,
) -> Result<OptimizeResult, OptimizeError>
where
    F: FnMut(&[f64]) -> f64,
    R: Rng + ?Sized,
{
    match method {
        Method::Nm => {
            let mut c = NelderMeadConfig::default();
            if let Some(b) = budget {
                c.max_evaluations = b;
            }
            nelder_mead(f, bounds, None, &c)
        }
        Method::De => {
            let mut c = DifferentialEvolutionConfig::default();
            if let Some(b) = budget {
                c.max_evaluations = b;
            }
            differential_evolution(f, bounds, &c, rng)
        }
        Method::Pso => {
            let mut c = ParticleSwarmConfig::default();
            if let Some(b) = budget {
                c.max_evaluations = b;
            }
            particle_swarm(f, bounds, &c, rng)
        }
        Method::Fssrs => {
            let mut c = FssrsConfig::default();
            if let Some(b) = budget {
                c.max_evaluations = b;
            }
            fssrs(f, bounds, None, &c, rng)
        }
        Method::Osrt => Ok(one_shot_random_trial(f, bounds, rng)),
    }
}
