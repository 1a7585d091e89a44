//! Water network description and the INP-subset reader/writer.
//!
//! The accepted text format is a strict subset of EPANET's `.inp` layout.
//! Sections are introduced by a bracketed header and hold whitespace-separated
//! columns; everything after a `;` is a comment.
//!
//! | section        | columns                                               |
//! |----------------|-------------------------------------------------------|
//! | `[JUNCTIONS]`  | `id elevation[m] base_demand[L/s]`                    |
//! | `[RESERVOIRS]` | `id head[m]`                                          |
//! | `[TANKS]`      | `id head[m]`                                          |
//! | `[PIPES]`      | `id from to length[m] diameter[m] hazen_williams_c`   |
//! | `[PUMPS]`      | `id from to head_curve eff_curve n_identical`         |
//! | `[CURVES]`     | `curve_id flow[L/s] value` (one point per row)        |
//! | `[DEMANDS]`    | `junction_id demand[L/s]` (overrides the base demand) |
//!
//! Head curve values are metres of a single pump, efficiency curve values are
//! fractions in `(0, 1]`, both against the flow of a single pump. `[TITLE]`,
//! `[OPTIONS]` and any other section are skipped and reported in
//! [`Network::warnings`]. `[END]` stops reading.

use std::collections::{HashMap, VecDeque};
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::hydraulics::{fit_efficiency_curve, fit_head_curve, EfficiencyFit, HeadFit};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum NetworkError {
    #[error("malformed line {line}: {reason}")]
    MalformedLine { line: usize, reason: String },
    #[error("reference to unknown node or curve `{0}`")]
    DanglingReference(String),
    #[error("network graph is not connected (node `{0}` unreachable)")]
    DisconnectedGraph(String),
    #[error("curve `{0}` is referenced but never defined")]
    MissingCurve(String),
    #[error("invalid curve `{id}`: {reason}")]
    InvalidCurve { id: String, reason: String },
    #[error("invalid element `{id}`: {reason}")]
    InvalidElement { id: String, reason: String },
    #[error("duplicate id `{0}`")]
    DuplicateId(String),
    #[error("network has no reservoir or tank to fix the head")]
    NoHeadReference,
    #[error("no pump group defines a shut-off head")]
    MissingShutoffPoint,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Junction {
    pub id: String,
    pub elevation: f64,
    pub base_demand: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reservoir {
    pub id: String,
    pub head: f64,
}

/// Tanks are fixed-head boundaries for a single snapshot.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Tank {
    pub id: String,
    pub head: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Pipe {
    pub id: String,
    pub from: String,
    pub to: String,
    pub length: f64,
    pub diameter: f64,
    pub roughness: f64,
}

/// A pump station of `n_identical` parallel pumps sharing one speed ratio.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PumpGroup {
    pub id: String,
    pub from: String,
    pub to: String,
    pub n_identical: u32,
    pub head_curve_id: String,
    pub efficiency_curve_id: String,
    pub head_curve: Vec<(f64, f64)>,
    pub efficiency_curve: Vec<(f64, f64)>,
    pub head_fit: HeadFit,
    pub efficiency_fit: EfficiencyFit,
    /// Highest efficiency of the fitted curve.
    pub peak_efficiency: f64,
}

impl PumpGroup {
    /// Head of a single pump at zero flow and nominal speed.
    pub fn shutoff_head(&self) -> Option<f64> {
        self.head_curve.iter().find(|(q, _)| *q == 0.0).map(|(_, h)| *h)
    }
}

/// Position of a named node in the network tables.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum NodeRef {
    Junction(usize),
    Reservoir(usize),
    Tank(usize),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Network {
    pub junctions: Vec<Junction>,
    pub reservoirs: Vec<Reservoir>,
    pub tanks: Vec<Tank>,
    pub pipes: Vec<Pipe>,
    pub pump_groups: Vec<PumpGroup>,
    /// Section-ordered list of curve ids, kept for faithful re-serialization.
    curve_order: Vec<String>,
    curves: HashMap<String, Vec<(f64, f64)>>,
    lookup: HashMap<String, NodeRef>,
    pipe_ends: Vec<(NodeRef, NodeRef)>,
    pump_ends: Vec<(NodeRef, NodeRef)>,
    pub warnings: Vec<String>,
}

impl Network {
    pub fn n_junctions(&self) -> usize {
        self.junctions.len()
    }

    pub fn n_groups(&self) -> usize {
        self.pump_groups.len()
    }

    /// Junction ids in observation order.
    pub fn node_index(&self) -> impl Iterator<Item = &str> {
        self.junctions.iter().map(|j| j.id.as_str())
    }

    pub fn node(&self, id: &str) -> Option<NodeRef> {
        self.lookup.get(id).copied()
    }

    pub fn pipe_ends(&self) -> &[(NodeRef, NodeRef)] {
        &self.pipe_ends
    }

    pub fn pump_ends(&self) -> &[(NodeRef, NodeRef)] {
        &self.pump_ends
    }

    pub fn base_demands(&self) -> Vec<f64> {
        self.junctions.iter().map(|j| j.base_demand).collect()
    }

    pub fn elevations(&self) -> Vec<f64> {
        self.junctions.iter().map(|j| j.elevation).collect()
    }

    /// Product of group peak efficiencies, the normaliser of the efficiency ratio.
    pub fn efficiency_limit(&self) -> f64 {
        self.pump_groups.iter().map(|g| g.peak_efficiency).product()
    }

    /// Largest shut-off head over all groups at the top speed ratio.
    pub fn shutoff_head_max(&self, speed_hi: f64) -> Result<f64, NetworkError> {
        self.pump_groups
            .iter()
            .filter_map(|g| g.shutoff_head())
            .map(|h| h * speed_hi * speed_hi)
            .fold(None, |acc: Option<f64>, h| Some(acc.map_or(h, |a| a.max(h))))
            .ok_or(NetworkError::MissingShutoffPoint)
    }

    pub fn to_inp(&self) -> String {
        let mut out = String::new();
        out.push_str("[JUNCTIONS]\n");
        for j in &self.junctions {
            let _ = writeln!(out, "{} {} {}", j.id, j.elevation, j.base_demand);
        }
        out.push_str("\n[RESERVOIRS]\n");
        for r in &self.reservoirs {
            let _ = writeln!(out, "{} {}", r.id, r.head);
        }
        out.push_str("\n[TANKS]\n");
        for t in &self.tanks {
            let _ = writeln!(out, "{} {}", t.id, t.head);
        }
        out.push_str("\n[PIPES]\n");
        for p in &self.pipes {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                p.id, p.from, p.to, p.length, p.diameter, p.roughness
            );
        }
        out.push_str("\n[PUMPS]\n");
        for g in &self.pump_groups {
            let _ = writeln!(
                out,
                "{} {} {} {} {} {}",
                g.id, g.from, g.to, g.head_curve_id, g.efficiency_curve_id, g.n_identical
            );
        }
        out.push_str("\n[CURVES]\n");
        for id in &self.curve_order {
            for (x, y) in &self.curves[id] {
                let _ = writeln!(out, "{id} {x} {y}");
            }
        }
        out.push_str("\n[END]\n");
        out
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    Junctions,
    Reservoirs,
    Tanks,
    Pipes,
    Pumps,
    Curves,
    Demands,
    Skipped,
}

struct RawPump {
    id: String,
    from: String,
    to: String,
    head_curve: String,
    eff_curve: String,
    n: u32,
}

fn number(tok: &str, line: usize, what: &str) -> Result<f64, NetworkError> {
    let v: f64 = tok.parse().map_err(|_| NetworkError::MalformedLine {
        line,
        reason: format!("{what}: `{tok}` is not a number"),
    })?;
    if !v.is_finite() {
        return Err(NetworkError::MalformedLine {
            line,
            reason: format!("{what} is not finite"),
        });
    }
    Ok(v)
}

fn expect_cols(cols: &[&str], n: usize, line: usize, section: &str) -> Result<(), NetworkError> {
    if cols.len() != n {
        return Err(NetworkError::MalformedLine {
            line,
            reason: format!("{section} rows need {n} columns, found {}", cols.len()),
        });
    }
    Ok(())
}

/// Parses and validates an INP-subset document.
pub fn parse_network(text: &str) -> Result<Network, NetworkError> {
    let mut section = Section::Skipped;
    let mut junctions: Vec<Junction> = Vec::new();
    let mut reservoirs = Vec::new();
    let mut tanks = Vec::new();
    let mut pipes = Vec::new();
    let mut raw_pumps: Vec<RawPump> = Vec::new();
    let mut curve_order: Vec<String> = Vec::new();
    let mut curves: HashMap<String, Vec<(f64, f64)>> = HashMap::new();
    let mut demand_overrides: Vec<(usize, String, f64)> = Vec::new();
    let mut warnings = Vec::new();

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split(';').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if content.starts_with('[') {
            let name = content.trim_matches(|c| c == '[' || c == ']').to_ascii_uppercase();
            section = match name.as_str() {
                "JUNCTIONS" => Section::Junctions,
                "RESERVOIRS" => Section::Reservoirs,
                "TANKS" => Section::Tanks,
                "PIPES" => Section::Pipes,
                "PUMPS" => Section::Pumps,
                "CURVES" => Section::Curves,
                "DEMANDS" => Section::Demands,
                "END" => break,
                "TITLE" | "OPTIONS" => Section::Skipped,
                other => {
                    warnings.push(format!("line {line}: section [{other}] ignored"));
                    Section::Skipped
                }
            };
            continue;
        }
        let cols: Vec<&str> = content.split_whitespace().collect();
        match section {
            Section::Skipped => {}
            Section::Junctions => {
                expect_cols(&cols, 3, line, "JUNCTIONS")?;
                junctions.push(Junction {
                    id: cols[0].to_string(),
                    elevation: number(cols[1], line, "elevation")?,
                    base_demand: number(cols[2], line, "demand")?,
                });
            }
            Section::Reservoirs => {
                expect_cols(&cols, 2, line, "RESERVOIRS")?;
                reservoirs.push(Reservoir {
                    id: cols[0].to_string(),
                    head: number(cols[1], line, "head")?,
                });
            }
            Section::Tanks => {
                expect_cols(&cols, 2, line, "TANKS")?;
                tanks.push(Tank {
                    id: cols[0].to_string(),
                    head: number(cols[1], line, "head")?,
                });
            }
            Section::Pipes => {
                expect_cols(&cols, 6, line, "PIPES")?;
                pipes.push(Pipe {
                    id: cols[0].to_string(),
                    from: cols[1].to_string(),
                    to: cols[2].to_string(),
                    length: number(cols[3], line, "length")?,
                    diameter: number(cols[4], line, "diameter")?,
                    roughness: number(cols[5], line, "roughness")?,
                });
            }
            Section::Pumps => {
                expect_cols(&cols, 6, line, "PUMPS")?;
                let n = cols[5].parse::<u32>().map_err(|_| NetworkError::MalformedLine {
                    line,
                    reason: format!("pump count `{}` is not a positive integer", cols[5]),
                })?;
                raw_pumps.push(RawPump {
                    id: cols[0].to_string(),
                    from: cols[1].to_string(),
                    to: cols[2].to_string(),
                    head_curve: cols[3].to_string(),
                    eff_curve: cols[4].to_string(),
                    n,
                });
            }
            Section::Curves => {
                expect_cols(&cols, 3, line, "CURVES")?;
                let x = number(cols[1], line, "curve flow")?;
                let y = number(cols[2], line, "curve value")?;
                let id = cols[0].to_string();
                if !curves.contains_key(&id) {
                    curve_order.push(id.clone());
                }
                curves.entry(id).or_default().push((x, y));
            }
            Section::Demands => {
                expect_cols(&cols, 2, line, "DEMANDS")?;
                demand_overrides.push((line, cols[0].to_string(), number(cols[1], line, "demand")?));
            }
        }
    }

    let mut lookup = HashMap::new();
    let mut insert = |id: &str, r: NodeRef| -> Result<(), NetworkError> {
        if lookup.insert(id.to_string(), r).is_some() {
            return Err(NetworkError::DuplicateId(id.to_string()));
        }
        Ok(())
    };
    for (i, j) in junctions.iter().enumerate() {
        insert(&j.id, NodeRef::Junction(i))?;
    }
    for (i, r) in reservoirs.iter().enumerate() {
        insert(&r.id, NodeRef::Reservoir(i))?;
    }
    for (i, t) in tanks.iter().enumerate() {
        insert(&t.id, NodeRef::Tank(i))?;
    }

    for (_, id, d) in &demand_overrides {
        match lookup.get(id) {
            Some(NodeRef::Junction(i)) => junctions[*i].base_demand = *d,
            _ => return Err(NetworkError::DanglingReference(id.clone())),
        }
    }
    for j in &junctions {
        if j.base_demand < 0.0 {
            return Err(NetworkError::InvalidElement {
                id: j.id.clone(),
                reason: "negative demand".into(),
            });
        }
    }
    if reservoirs.is_empty() && tanks.is_empty() {
        return Err(NetworkError::NoHeadReference);
    }

    let resolve = |id: &str| lookup.get(id).copied().ok_or_else(|| NetworkError::DanglingReference(id.to_string()));

    let mut pipe_ends = Vec::with_capacity(pipes.len());
    for p in &pipes {
        if !(p.length > 0.0 && p.diameter > 0.0 && p.roughness > 0.0) {
            return Err(NetworkError::InvalidElement {
                id: p.id.clone(),
                reason: "length, diameter and roughness must be positive".into(),
            });
        }
        pipe_ends.push((resolve(&p.from)?, resolve(&p.to)?));
    }

    let mut pump_groups = Vec::with_capacity(raw_pumps.len());
    let mut pump_ends = Vec::with_capacity(raw_pumps.len());
    for rp in raw_pumps {
        pump_ends.push((resolve(&rp.from)?, resolve(&rp.to)?));
        if rp.n == 0 {
            return Err(NetworkError::InvalidElement {
                id: rp.id,
                reason: "a pump group needs at least one pump".into(),
            });
        }
        let head_curve = curves
            .get(&rp.head_curve)
            .cloned()
            .ok_or_else(|| NetworkError::MissingCurve(rp.head_curve.clone()))?;
        let efficiency_curve = curves
            .get(&rp.eff_curve)
            .cloned()
            .ok_or_else(|| NetworkError::MissingCurve(rp.eff_curve.clone()))?;
        validate_head_points(&rp.head_curve, &head_curve)?;
        validate_efficiency_points(&rp.eff_curve, &efficiency_curve)?;
        let head_fit = fit_head_curve(&head_curve).map_err(|reason| NetworkError::InvalidCurve {
            id: rp.head_curve.clone(),
            reason,
        })?;
        let efficiency_fit =
            fit_efficiency_curve(&efficiency_curve).map_err(|reason| NetworkError::InvalidCurve {
                id: rp.eff_curve.clone(),
                reason,
            })?;
        let peak_efficiency = efficiency_fit.peak_value();
        pump_groups.push(PumpGroup {
            id: rp.id,
            from: rp.from,
            to: rp.to,
            n_identical: rp.n,
            head_curve_id: rp.head_curve,
            efficiency_curve_id: rp.eff_curve,
            head_curve,
            efficiency_curve,
            head_fit,
            efficiency_fit,
            peak_efficiency,
        });
    }

    let net = Network {
        junctions,
        reservoirs,
        tanks,
        pipes,
        pump_groups,
        curve_order,
        curves,
        lookup,
        pipe_ends,
        pump_ends,
        warnings,
    };
    check_connected(&net)?;
    Ok(net)
}

fn validate_head_points(id: &str, pts: &[(f64, f64)]) -> Result<(), NetworkError> {
    let bad = |reason: &str| NetworkError::InvalidCurve {
        id: id.to_string(),
        reason: reason.to_string(),
    };
    if pts.len() < 2 {
        return Err(bad("head curve needs at least two points"));
    }
    if pts[0].0 != 0.0 {
        return Err(bad("head curve must start with the shut-off point at zero flow"));
    }
    for w in pts.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(bad("flows must be strictly increasing"));
        }
        if w[1].1 >= w[0].1 {
            return Err(bad("head must be strictly decreasing in flow"));
        }
    }
    Ok(())
}

fn validate_efficiency_points(id: &str, pts: &[(f64, f64)]) -> Result<(), NetworkError> {
    let bad = |reason: &str| NetworkError::InvalidCurve {
        id: id.to_string(),
        reason: reason.to_string(),
    };
    if pts.len() < 3 {
        return Err(bad("efficiency curve needs at least three points"));
    }
    for w in pts.windows(2) {
        if w[1].0 <= w[0].0 {
            return Err(bad("flows must be strictly increasing"));
        }
    }
    if pts.iter().any(|&(_, e)| !(e > 0.0 && e <= 1.0)) {
        return Err(bad("efficiencies must lie in (0, 1]"));
    }
    Ok(())
}

fn check_connected(net: &Network) -> Result<(), NetworkError> {
    let all: Vec<NodeRef> = (0..net.junctions.len())
        .map(NodeRef::Junction)
        .chain((0..net.reservoirs.len()).map(NodeRef::Reservoir))
        .chain((0..net.tanks.len()).map(NodeRef::Tank))
        .collect();
    let mut adj: HashMap<NodeRef, Vec<NodeRef>> = HashMap::new();
    for &(a, b) in net.pipe_ends.iter().chain(net.pump_ends.iter()) {
        adj.entry(a).or_default().push(b);
        adj.entry(b).or_default().push(a);
    }
    let mut seen: HashMap<NodeRef, bool> = all.iter().map(|&n| (n, false)).collect();
    let mut queue = VecDeque::from([all[0]]);
    seen.insert(all[0], true);
    while let Some(n) = queue.pop_front() {
        for &m in adj.get(&n).map(Vec::as_slice).unwrap_or(&[]) {
            if !seen[&m] {
                seen.insert(m, true);
                queue.push_back(m);
            }
        }
    }
    for n in &all {
        if !seen[n] {
            let id = match *n {
                NodeRef::Junction(i) => net.junctions[i].id.clone(),
                NodeRef::Reservoir(i) => net.reservoirs[i].id.clone(),
                NodeRef::Tank(i) => net.tanks[i].id.clone(),
            };
            return Err(NetworkError::DisconnectedGraph(id));
        }
    }
    Ok(())
}
