//! Steady-state hydraulic solver.
//!
//! Heads at junctions and flows in links are found with the global gradient
//! (Todini–Pilati) Newton scheme: every iteration linearises each link's
//! head-flow relation, eliminates the flows and solves a symmetric positive
//! definite system for the junction heads. Pipes use Hazen–Williams losses,
//! pump groups use quadratic curves scaled by the affinity laws. Tanks and
//! reservoirs are fixed-head boundaries.
//!
//! Units: flow in L/s, head and length in m, diameter in m.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::network::{Network, NodeRef, PumpGroup};

/// Hazen–Williams flow exponent.
pub const HW_EXPONENT: f64 = 1.852;
/// Floor applied to evaluated pump efficiencies so products stay positive.
pub const MIN_EFFICIENCY: f64 = 1e-3;
/// Smallest head-gain slope [m per L/s] a pump contributes to the Jacobian.
const PUMP_SLOPE_FLOOR: f64 = 1e-6;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum HydraulicsError {
    #[error("no convergence after {iterations} iterations (residual {residual:e})")]
    NoConvergence { iterations: usize, residual: f64 },
    #[error("infeasible speed ratio {value} for pump group {group}")]
    InfeasibleSpeeds { group: usize, value: f64 },
    #[error("expected {expected} values, got {got}")]
    ShapeMismatch { expected: usize, got: usize },
    #[error("invalid demand {value} at junction {junction}")]
    InvalidDemand { junction: usize, value: f64 },
}

/// Quadratic nominal head curve `H0(x) = c0 + c1 x + c2 x^2` of one pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
    /// Largest flow of the defining points; beyond it the curve is extrapolated.
    pub q_max: f64,
}

impl HeadFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.c0 + x * (self.c1 + x * self.c2)
    }

    pub fn slope(&self, x: f64) -> f64 {
        self.c1 + 2.0 * self.c2 * x
    }
}

/// Concave quadratic nominal efficiency curve of one pump.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EfficiencyFit {
    pub c0: f64,
    pub c1: f64,
    pub c2: f64,
}

impl EfficiencyFit {
    pub fn eval(&self, x: f64) -> f64 {
        self.c0 + x * (self.c1 + x * self.c2)
    }

    /// Flow of a single pump at nominal speed where efficiency peaks.
    pub fn peak_flow(&self) -> f64 {
        -self.c1 / (2.0 * self.c2)
    }

    pub fn peak_value(&self) -> f64 {
        self.eval(self.peak_flow()).min(1.0)
    }
}

/// Least-squares quadratic through `pts`; exact for three points.
fn least_squares_quadratic(pts: &[(f64, f64)]) -> Option<[f64; 3]> {
    // Scale x to keep the normal equations well conditioned.
    let scale = pts.iter().map(|p| p.0.abs()).fold(0.0, f64::max).max(1.0);
    let mut m = [[0.0f64; 4]; 3];
    for &(x, y) in pts {
        let t = x / scale;
        let pow = [1.0, t, t * t];
        for r in 0..3 {
            for c in 0..3 {
                m[r][c] += pow[r] * pow[c];
            }
            m[r][3] += pow[r] * y;
        }
    }
    for col in 0..3 {
        let piv = (col..3).max_by(|&a, &b| m[a][col].abs().total_cmp(&m[b][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        for r in 0..3 {
            if r != col {
                let f = m[r][col] / m[col][col];
                for c in col..4 {
                    m[r][c] -= f * m[col][c];
                }
            }
        }
    }
    let c = [m[0][3] / m[0][0], m[1][3] / m[1][1], m[2][3] / m[2][2]];
    Some([c[0], c[1] / scale, c[2] / (scale * scale)])
}

/// Fits the nominal head curve. Two points give `a - b Q^2` through the
/// shut-off head; three or more give a least-squares quadratic.
pub fn fit_head_curve(pts: &[(f64, f64)]) -> Result<HeadFit, String> {
    let q_max = pts.last().map(|p| p.0).unwrap_or(0.0);
    let fit = match pts {
        [(0.0, h0), (q1, h1)] => HeadFit {
            c0: *h0,
            c1: 0.0,
            c2: (h1 - h0) / (q1 * q1),
            q_max,
        },
        _ if pts.len() >= 3 => {
            let [c0, c1, c2] =
                least_squares_quadratic(pts).ok_or_else(|| "degenerate head curve".to_string())?;
            HeadFit { c0, c1, c2, q_max }
        }
        _ => return Err("head curve needs a shut-off point and at least one more".into()),
    };
    let tol = 1e-9 * fit.c0.abs().max(1.0);
    if fit.slope(0.0) > tol || fit.slope(q_max) > tol {
        return Err("fitted head curve is not decreasing over its flow range".into());
    }
    if fit.c0 <= 0.0 {
        return Err("shut-off head must be positive".into());
    }
    Ok(fit)
}

pub fn fit_efficiency_curve(pts: &[(f64, f64)]) -> Result<EfficiencyFit, String> {
    let [c0, c1, c2] =
        least_squares_quadratic(pts).ok_or_else(|| "degenerate efficiency curve".to_string())?;
    if c2 >= 0.0 {
        return Err("fitted efficiency curve must be concave".into());
    }
    let fit = EfficiencyFit { c0, c1, c2 };
    if fit.peak_value() <= 0.0 {
        return Err("fitted efficiency curve has no positive peak".into());
    }
    Ok(fit)
}

/// Head gain of a pump group, its derivative with respect to the group flow,
/// and whether the nominal curve had to be extrapolated.
pub fn pump_head_eval(group: &PumpGroup, q: f64, s: f64) -> (f64, f64, bool) {
    let n = f64::from(group.n_identical);
    let x = q / (n * s);
    let fit = &group.head_fit;
    let head = s * s * fit.eval(x);
    let slope = s * fit.slope(x) / n;
    let extrapolated = x < 0.0 || x > fit.q_max;
    (head, slope, extrapolated)
}

/// Affinity-scaled head `s^2 H0(q / (n s))` of a group delivering `q`.
pub fn pump_head(group: &PumpGroup, q: f64, s: f64) -> f64 {
    pump_head_eval(group, q, s).0
}

/// Efficiency of each pump in the group, read off the nominal curve at the
/// affinity-equivalent flow and clamped to `[MIN_EFFICIENCY, 1]`.
pub fn pump_efficiency(group: &PumpGroup, q: f64, s: f64) -> f64 {
    let n = f64::from(group.n_identical);
    group
        .efficiency_fit
        .eval(q / (n * s))
        .clamp(MIN_EFFICIENCY, 1.0)
}

/// Hazen–Williams resistance for flow in L/s: `loss = r |Q|^0.852 Q`.
pub fn hw_resistance(length: f64, diameter: f64, roughness: f64) -> f64 {
    10.67 * length / (roughness.powf(HW_EXPONENT) * diameter.powf(4.87)) / 1000f64.powf(HW_EXPONENT)
}

pub fn hw_headloss(r: f64, q: f64) -> f64 {
    r * q.abs().powf(HW_EXPONENT - 1.0) * q
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    /// Junction mass-balance tolerance [L/s]; also bounds the last Newton flow correction.
    pub mass_tol: f64,
    pub energy_tol: f64,
    pub max_iterations: usize,
    pub flow_floor: f64,
}

impl Default for SolverConfig {
    fn default() -> Self {
        Self {
            mass_tol: 1e-6,
            energy_tol: 1e-6,
            max_iterations: 200,
            flow_floor: 1e-4,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PumpOperatingPoint {
    pub flow: f64,
    pub head: f64,
    pub efficiency: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct IterationRecord {
    pub iteration: usize,
    pub energy_residual: f64,
    pub mass_residual: f64,
    pub max_flow_change: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HydraulicState {
    /// Total head per junction, in network junction order.
    pub heads: Vec<f64>,
    /// Head above elevation per junction.
    pub pressures: Vec<f64>,
    /// Pipe flows followed by pump group flows.
    pub flows: Vec<f64>,
    pub pump_ops: Vec<PumpOperatingPoint>,
    /// Signed tank flows, positive when the tank feeds the network.
    pub tank_flows: Vec<f64>,
    pub converged: bool,
    pub iterations: usize,
    /// Count of pump curve evaluations outside the defining flow range.
    pub extrapolations: usize,
    pub history: Vec<IterationRecord>,
}

#[derive(Debug, Clone, Copy)]
enum End {
    Free(usize),
    Fixed(f64),
}

#[derive(Debug, Clone, Copy)]
enum LinkKind {
    Pipe { r: f64 },
    Pump { group: usize },
}

#[derive(Debug, Clone)]
struct Link {
    from: End,
    to: End,
    kind: LinkKind,
    q0: f64,
}

/// Precomputed topology and sparse factorisation pattern for one network.
///
/// Holds no per-solve state; [`Solver::solve`] may be called concurrently.
#[derive(Debug, Clone)]
pub struct Solver<'a> {
    net: &'a Network,
    links: Vec<Link>,
    /// `perm[j]` is the elimination position of junction `j`.
    perm: Vec<usize>,
    /// First stored column of each permuted row of the envelope.
    first: Vec<usize>,
    /// Offset of each row's envelope in the packed storage.
    offset: Vec<usize>,
    elevations: Vec<f64>,
}

pub fn solve(
    net: &Network,
    demands: &[f64],
    speeds: &[f64],
    cfg: &SolverConfig,
) -> Result<HydraulicState, HydraulicsError> {
    Solver::new(net).solve(demands, speeds, cfg)
}

impl<'a> Solver<'a> {
    pub fn new(net: &'a Network) -> Self {
        let end = |r: NodeRef| match r {
            NodeRef::Junction(i) => End::Free(i),
            NodeRef::Reservoir(i) => End::Fixed(net.reservoirs[i].head),
            NodeRef::Tank(i) => End::Fixed(net.tanks[i].head),
        };
        let mut links = Vec::with_capacity(net.pipes.len() + net.pump_groups.len());
        for (p, &(a, b)) in net.pipes.iter().zip(net.pipe_ends()) {
            links.push(Link {
                from: end(a),
                to: end(b),
                kind: LinkKind::Pipe {
                    r: hw_resistance(p.length, p.diameter, p.roughness),
                },
                // 1 m/s
                q0: 250.0 * std::f64::consts::PI * p.diameter * p.diameter,
            });
        }
        for (g, (grp, &(a, b))) in net.pump_groups.iter().zip(net.pump_ends()).enumerate() {
            let design = 0.5 * grp.head_fit.q_max * f64::from(grp.n_identical);
            links.push(Link {
                from: end(a),
                to: end(b),
                kind: LinkKind::Pump { group: g },
                q0: design,
            });
        }

        let n = net.n_junctions();
        let mut adj = vec![Vec::new(); n];
        for l in &links {
            if let (End::Free(a), End::Free(b)) = (l.from, l.to) {
                if a != b {
                    adj[a].push(b);
                    adj[b].push(a);
                }
            }
        }
        for a in adj.iter_mut() {
            a.sort_unstable();
            a.dedup();
        }
        let order = reverse_cuthill_mckee(&adj);
        let mut perm = vec![0; n];
        for (pos, &j) in order.iter().enumerate() {
            perm[j] = pos;
        }
        let mut first: Vec<usize> = (0..n).collect();
        for (j, nb) in adj.iter().enumerate() {
            for &k in nb {
                let (r, c) = (perm[j], perm[k]);
                if c < r {
                    first[r] = first[r].min(c);
                }
            }
        }
        let mut offset = Vec::with_capacity(n + 1);
        let mut acc = 0;
        for r in 0..n {
            offset.push(acc);
            acc += r - first[r] + 1;
        }
        offset.push(acc);

        Self {
            net,
            links,
            perm,
            first,
            offset,
            elevations: net.elevations(),
        }
    }

    pub fn network(&self) -> &Network {
        self.net
    }

    /// Number of stored entries in the envelope factor.
    pub fn envelope_size(&self) -> usize {
        *self.offset.last().unwrap_or(&0)
    }

    fn link_eval(&self, link: &Link, q: f64, speeds: &[f64], floor: f64) -> (f64, f64, bool) {
        match link.kind {
            LinkKind::Pipe { r } => {
                if q.abs() < floor {
                    let g = r * floor.powf(HW_EXPONENT - 1.0);
                    (g * q, g, false)
                } else {
                    (hw_headloss(r, q), HW_EXPONENT * r * q.abs().powf(HW_EXPONENT - 1.0), false)
                }
            }
            LinkKind::Pump { group } => {
                let (h, dh, ex) = pump_head_eval(&self.net.pump_groups[group], q, speeds[group]);
                (-h, (-dh).max(PUMP_SLOPE_FLOOR), ex)
            }
        }
    }

    fn idx(&self, r: usize, c: usize) -> usize {
        debug_assert!(c >= self.first[r] && c <= r);
        self.offset[r] + c - self.first[r]
    }

    pub fn solve(
        &self,
        demands: &[f64],
        speeds: &[f64],
        cfg: &SolverConfig,
    ) -> Result<HydraulicState, HydraulicsError> {
        let n = self.net.n_junctions();
        if demands.len() != n {
            return Err(HydraulicsError::ShapeMismatch { expected: n, got: demands.len() });
        }
        let n_groups = self.net.n_groups();
        if speeds.len() != n_groups {
            return Err(HydraulicsError::ShapeMismatch { expected: n_groups, got: speeds.len() });
        }
        if let Some((g, &s)) = speeds.iter().enumerate().find(|(_, s)| !(s.is_finite() && **s > 0.0)) {
            return Err(HydraulicsError::InfeasibleSpeeds { group: g, value: s });
        }
        if let Some((j, &d)) = demands.iter().enumerate().find(|(_, d)| !(d.is_finite() && **d >= 0.0)) {
            return Err(HydraulicsError::InvalidDemand { junction: j, value: d });
        }

        let m = self.links.len();
        let mut q: Vec<f64> = self.links.iter().map(|l| l.q0).collect();
        let mut heads = vec![0.0; n];
        let mut env = vec![0.0; self.envelope_size()];
        let mut rhs = vec![0.0; n];
        let mut p = vec![0.0; m];
        let mut z = vec![0.0; m];
        let mut history = Vec::new();

        for iter in 1..=cfg.max_iterations {
            env.iter_mut().for_each(|v| *v = 0.0);
            for (j, r) in rhs.iter_mut().enumerate() {
                *r = -demands[j];
            }
            for (k, link) in self.links.iter().enumerate() {
                let (f, df, _) = self.link_eval(link, q[k], speeds, cfg.flow_floor);
                p[k] = 1.0 / df;
                z[k] = q[k] - p[k] * f;
                match (link.from, link.to) {
                    (End::Free(a), End::Free(b)) => {
                        let (pa, pb) = (self.perm[a], self.perm[b]);
                        env[self.idx(pa, pa)] += p[k];
                        env[self.idx(pb, pb)] += p[k];
                        if pa != pb {
                            let (r, c) = if pa > pb { (pa, pb) } else { (pb, pa) };
                            env[self.idx(r, c)] -= p[k];
                        }
                        rhs[a] -= z[k];
                        rhs[b] += z[k];
                    }
                    (End::Free(a), End::Fixed(hb)) => {
                        let pa = self.perm[a];
                        env[self.idx(pa, pa)] += p[k];
                        rhs[a] += p[k] * hb - z[k];
                    }
                    (End::Fixed(ha), End::Free(b)) => {
                        let pb = self.perm[b];
                        env[self.idx(pb, pb)] += p[k];
                        rhs[b] += p[k] * ha + z[k];
                    }
                    (End::Fixed(_), End::Fixed(_)) => {}
                }
            }

            let mut x = vec![0.0; n];
            for j in 0..n {
                x[self.perm[j]] = rhs[j];
            }
            self.factor_and_solve(&mut env, &mut x)?;
            for j in 0..n {
                heads[j] = x[self.perm[j]];
            }

            let mut max_dq = 0.0f64;
            for (k, link) in self.links.iter().enumerate() {
                let dh = head_of(link.from, &heads) - head_of(link.to, &heads);
                let qn = z[k] + p[k] * dh;
                max_dq = max_dq.max((qn - q[k]).abs());
                q[k] = qn;
            }
            if !q.iter().all(|v| v.is_finite()) {
                return Err(HydraulicsError::NoConvergence { iterations: iter, residual: f64::INFINITY });
            }

            let energy = self.energy_residual(&q, &heads, speeds, cfg.flow_floor);
            let mass = self.mass_residual(&q, demands);
            history.push(IterationRecord {
                iteration: iter,
                energy_residual: energy,
                mass_residual: mass,
                max_flow_change: max_dq,
            });
            if energy <= cfg.energy_tol && mass <= cfg.mass_tol && max_dq <= cfg.mass_tol {
                return Ok(self.finish(heads, q, speeds, iter, history));
            }
        }
        let last = history.last().map(|h| h.energy_residual.max(h.mass_residual)).unwrap_or(f64::NAN);
        Err(HydraulicsError::NoConvergence {
            iterations: cfg.max_iterations,
            residual: last,
        })
    }

    fn energy_residual(&self, q: &[f64], heads: &[f64], speeds: &[f64], floor: f64) -> f64 {
        self.links
            .iter()
            .zip(q)
            .map(|(l, &qk)| {
                let dh = head_of(l.from, heads) - head_of(l.to, heads);
                (dh - self.link_eval(l, qk, speeds, floor).0).abs()
            })
            .fold(0.0, f64::max)
    }

    fn mass_residual(&self, q: &[f64], demands: &[f64]) -> f64 {
        let mut bal: Vec<f64> = demands.iter().map(|d| -d).collect();
        for (l, &qk) in self.links.iter().zip(q) {
            if let End::Free(a) = l.from {
                bal[a] -= qk;
            }
            if let End::Free(b) = l.to {
                bal[b] += qk;
            }
        }
        bal.iter().fold(0.0, |m, v| m.max(v.abs()))
    }

    /// In-place envelope Cholesky of the permuted matrix, then two triangular solves.
    fn factor_and_solve(&self, env: &mut [f64], x: &mut [f64]) -> Result<(), HydraulicsError> {
        let n = x.len();
        for i in 0..n {
            let fi = self.first[i];
            for j in fi..i {
                let fj = self.first[j];
                let k0 = fi.max(fj);
                let mut s = env[self.idx(i, j)];
                let ri = self.offset[i] - fi;
                let rj = self.offset[j] - fj;
                for k in k0..j {
                    s -= env[ri + k] * env[rj + k];
                }
                env[self.idx(i, j)] = s / env[self.idx(j, j)];
            }
            let ri = self.offset[i] - fi;
            let mut d = env[ri + i];
            for k in fi..i {
                d -= env[ri + k] * env[ri + k];
            }
            if !(d > 0.0) || !d.is_finite() {
                return Err(HydraulicsError::NoConvergence { iterations: 0, residual: f64::NAN });
            }
            env[ri + i] = d.sqrt();
        }
        // L y = b
        for i in 0..n {
            let fi = self.first[i];
            let ri = self.offset[i] - fi;
            let mut s = x[i];
            for k in fi..i {
                s -= env[ri + k] * x[k];
            }
            x[i] = s / env[ri + i];
        }
        // L^T x = y
        for i in (0..n).rev() {
            let fi = self.first[i];
            let ri = self.offset[i] - fi;
            x[i] /= env[ri + i];
            let xi = x[i];
            for k in fi..i {
                x[k] -= env[ri + k] * xi;
            }
        }
        Ok(())
    }

    fn finish(
        &self,
        heads: Vec<f64>,
        flows: Vec<f64>,
        speeds: &[f64],
        iterations: usize,
        history: Vec<IterationRecord>,
    ) -> HydraulicState {
        let net = self.net;
        let n_pipes = net.pipes.len();
        let mut extrapolations = 0;
        let pump_ops = net
            .pump_groups
            .iter()
            .enumerate()
            .map(|(g, grp)| {
                let qg = flows[n_pipes + g];
                let (h, _, ex) = pump_head_eval(grp, qg, speeds[g]);
                extrapolations += usize::from(ex);
                PumpOperatingPoint {
                    flow: qg,
                    head: h,
                    efficiency: pump_efficiency(grp, qg, speeds[g]),
                }
            })
            .collect();
        let mut tank_flows = vec![0.0; net.tanks.len()];
        let ends = net.pipe_ends().iter().chain(net.pump_ends());
        for (&(a, b), &qk) in ends.zip(&flows) {
            if let NodeRef::Tank(t) = a {
                tank_flows[t] += qk;
            }
            if let NodeRef::Tank(t) = b {
                tank_flows[t] -= qk;
            }
        }
        let pressures = heads.iter().zip(&self.elevations).map(|(h, z)| h - z).collect();
        HydraulicState {
            heads,
            pressures,
            flows,
            pump_ops,
            tank_flows,
            converged: true,
            iterations,
            extrapolations,
            history,
        }
    }
}

fn head_of(e: End, heads: &[f64]) -> f64 {
    match e {
        End::Free(i) => heads[i],
        End::Fixed(h) => h,
    }
}

/// Reverse Cuthill–McKee ordering of an undirected graph given as sorted
/// adjacency lists. Components are started from a minimum-degree vertex.
fn reverse_cuthill_mckee(adj: &[Vec<usize>]) -> Vec<usize> {
    let n = adj.len();
    let mut visited = vec![false; n];
    let mut order = Vec::with_capacity(n);
    let mut by_degree: Vec<usize> = (0..n).collect();
    by_degree.sort_by_key(|&v| (adj[v].len(), v));
    for &start in &by_degree {
        if visited[start] {
            continue;
        }
        visited[start] = true;
        let mut head = order.len();
        order.push(start);
        while head < order.len() {
            let v = order[head];
            head += 1;
            let mut nb: Vec<usize> = adj[v].iter().copied().filter(|&u| !visited[u]).collect();
            nb.sort_by_key(|&u| (adj[u].len(), u));
            for u in nb {
                visited[u] = true;
                order.push(u);
            }
        }
    }
    order.reverse();
    order
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::network::parse_network;

    fn group(head: &[(f64, f64)], eff: &[(f64, f64)], n: u32) -> PumpGroup {
        let head_fit = fit_head_curve(head).unwrap();
        let efficiency_fit = fit_efficiency_curve(eff).unwrap();
        PumpGroup {
            id: "G".into(),
            from: "A".into(),
            to: "B".into(),
            n_identical: n,
            head_curve_id: "H".into(),
            efficiency_curve_id: "E".into(),
            head_curve: head.to_vec(),
            efficiency_curve: eff.to_vec(),
            head_fit,
            efficiency_fit,
            peak_efficiency: efficiency_fit.peak_value(),
        }
    }

    const HEAD: [(f64, f64); 3] = [(0.0, 91.4), (40.0, 80.0), (80.0, 50.0)];
    const EFF: [(f64, f64); 3] = [(10.0, 0.5), (40.0, 0.8), (70.0, 0.5)];

    #[test]
    fn three_point_fit_is_exact() {
        let fit = fit_head_curve(&HEAD).unwrap();
        for (q, h) in HEAD {
            assert!((fit.eval(q) - h).abs() < 1e-9, "{q}: {} vs {h}", fit.eval(q));
        }
    }

    #[test]
    fn two_point_fit_has_zero_slope_at_shutoff() {
        let fit = fit_head_curve(&[(0.0, 50.0), (10.0, 40.0)]).unwrap();
        assert_eq!(fit.c1, 0.0);
        assert!((fit.eval(10.0) - 40.0).abs() < 1e-12);
    }

    #[test]
    fn pump_head_affinity() {
        let g = group(&HEAD, &EFF, 1);
        assert!((pump_head(&g, 40.0, 1.0) - 80.0).abs() < 1e-9);
        assert!((pump_head(&g, 0.0, 0.5) - 0.25 * 91.4).abs() < 1e-12);
        // Two identical pumps deliver twice the flow at the same head.
        let g2 = group(&HEAD, &EFF, 2);
        assert!((pump_head(&g2, 80.0, 1.0) - 80.0).abs() < 1e-9);
    }

    #[test]
    fn pump_head_derivative_matches_finite_difference() {
        let g = group(&HEAD, &EFF, 2);
        for &(q, s) in &[(30.0, 0.8), (100.0, 1.1), (5.0, 0.6)] {
            let (_, d, _) = pump_head_eval(&g, q, s);
            let h = 1e-5;
            let fd = (pump_head(&g, q + h, s) - pump_head(&g, q - h, s)) / (2.0 * h);
            assert!((d - fd).abs() < 1e-6);
        }
    }

    #[test]
    fn pump_efficiency_cases() {
        let g = group(&HEAD, &EFF, 1);
        let qp = g.efficiency_fit.peak_flow();
        assert!((qp - 40.0).abs() < 1e-9);
        assert!((pump_efficiency(&g, qp, 1.0) - g.peak_efficiency).abs() < 1e-12);
        assert!((pump_efficiency(&g, 0.8 * qp, 0.8) - g.peak_efficiency).abs() < 1e-12);
        let steep = group(&HEAD, &[(20.0, 0.6), (40.0, 0.8), (60.0, 0.6)], 1);
        assert_eq!(pump_efficiency(&steep, 0.0, 1.0), MIN_EFFICIENCY);
    }

    #[test]
    fn extrapolation_is_flagged() {
        let g = group(&HEAD, &EFF, 1);
        assert!(!pump_head_eval(&g, 50.0, 1.0).2);
        assert!(pump_head_eval(&g, 90.0, 1.0).2);
        assert!(pump_head_eval(&g, -1.0, 1.0).2);
    }

    #[test]
    fn rcm_is_a_permutation() {
        let adj = vec![vec![1, 3], vec![0, 2], vec![1], vec![0], vec![]];
        let mut o = reverse_cuthill_mckee(&adj);
        o.sort();
        assert_eq!(o, vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn gravity_main_matches_hazen_williams() {
        let net = parse_network(
            "[JUNCTIONS]\nJ 10 0\n[RESERVOIRS]\nR 50\n[PIPES]\nP R J 1000 0.2 100\n",
        )
        .unwrap();
        let st = solve(&net, &[10.0], &[], &SolverConfig::default()).unwrap();
        let loss = 10.67 * 1000.0 * 0.01f64.powf(1.852) / (100f64.powf(1.852) * 0.2f64.powf(4.87));
        assert!((st.heads[0] - (50.0 - loss)).abs() < 1e-6);
        assert!((st.flows[0] - 10.0).abs() < 1e-6);
        assert!((st.pressures[0] - (40.0 - loss)).abs() < 1e-6);
    }

    #[test]
    fn zero_demand_is_static() {
        let net = parse_network(
            "[JUNCTIONS]\nA 0 0\nB 3 0\nC 1 0\n[RESERVOIRS]\nR 42\n[PIPES]\n\
             P1 R A 100 0.3 100\nP2 A B 100 0.2 100\nP3 B C 100 0.2 100\nP4 C A 50 0.1 100\n",
        )
        .unwrap();
        let st = solve(&net, &[0.0; 3], &[], &SolverConfig::default()).unwrap();
        for h in &st.heads {
            assert!((h - 42.0).abs() < 1e-6);
        }
        for q in &st.flows {
            assert!(q.abs() < 1e-6);
        }
    }

    #[test]
    fn rejects_bad_inputs() {
        let net = parse_network(
            "[JUNCTIONS]\nJ 10 0\n[RESERVOIRS]\nR 50\n[PIPES]\nP R J 1000 0.2 100\n",
        )
        .unwrap();
        let cfg = SolverConfig::default();
        assert!(matches!(
            solve(&net, &[1.0, 2.0], &[], &cfg),
            Err(HydraulicsError::ShapeMismatch { .. })
        ));
        assert!(matches!(
            solve(&net, &[-1.0], &[], &cfg),
            Err(HydraulicsError::InvalidDemand { .. })
        ));
        let tight = SolverConfig { max_iterations: 1, ..cfg };
        assert!(matches!(
            solve(&net, &[10.0], &[], &tight),
            Err(HydraulicsError::NoConvergence { .. })
        ));
    }
}
