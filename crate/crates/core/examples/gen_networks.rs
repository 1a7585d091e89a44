//! Regenerates the bundled networks in `assets/`.
//!
//! ```text
//! cargo run --example gen_networks -- crates/core/assets
//! ```

use std::collections::VecDeque;
use std::fmt::Write as _;
use std::path::PathBuf;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[derive(Default)]
struct Inp {
    title: String,
    junctions: Vec<(String, f64, f64)>,
    reservoirs: Vec<(String, f64)>,
    tanks: Vec<(String, f64)>,
    pipes: Vec<(String, String, String, f64, f64, f64)>,
    pumps: Vec<(String, String, String, String, String, u32)>,
    curves: Vec<(String, Vec<(f64, f64)>)>,
}

impl Inp {
    fn pipe(&mut self, from: &str, to: &str, length: f64, diameter: f64, c: f64) {
        let id = format!("P{}", self.pipes.len() + 1);
        self.pipes.push((id, from.into(), to.into(), length.round(), diameter, c));
    }

    fn render(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "[TITLE]\n{}\n", self.title);
        s.push_str("[JUNCTIONS]\n;id elevation demand\n");
        for (id, e, d) in &self.junctions {
            let _ = writeln!(s, "{id} {e:.2} {d:.3}");
        }
        s.push_str("\n[RESERVOIRS]\n;id head\n");
        for (id, h) in &self.reservoirs {
            let _ = writeln!(s, "{id} {h:.2}");
        }
        s.push_str("\n[TANKS]\n;id head\n");
        for (id, h) in &self.tanks {
            let _ = writeln!(s, "{id} {h:.2}");
        }
        s.push_str("\n[PIPES]\n;id from to length diameter C\n");
        for (id, a, b, l, d, c) in &self.pipes {
            let _ = writeln!(s, "{id} {a} {b} {l} {d} {c}");
        }
        s.push_str("\n[PUMPS]\n;id from to head_curve eff_curve n\n");
        for (id, a, b, h, e, n) in &self.pumps {
            let _ = writeln!(s, "{id} {a} {b} {h} {e} {n}");
        }
        s.push_str("\n[CURVES]\n;id flow value\n");
        for (id, pts) in &self.curves {
            for (x, y) in pts {
                let _ = writeln!(s, "{id} {x:.2} {y:.4}");
            }
        }
        s.push_str("\n[END]\n");
        s
    }
}

/// Quadratic head curve `h0 - b q^2` sampled at three points.
fn head_curve(h0: f64, q_design: f64, h_design: f64) -> Vec<(f64, f64)> {
    let b = (h0 - h_design) / (q_design * q_design);
    [0.0, q_design, 1.4 * q_design]
        .iter()
        .map(|&q| (q, h0 - b * q * q))
        .collect()
}

/// Parabolic efficiency curve peaking at `(q_peak, eta_peak)` and reaching
/// zero `half_width` away from the peak.
fn efficiency_curve(q_peak: f64, eta_peak: f64, half_width: f64) -> Vec<(f64, f64)> {
    [-0.8, -0.4, 0.0, 0.4, 0.8]
        .iter()
        .map(|&x| (q_peak + x * half_width, eta_peak * (1.0 - x * x)))
        .collect()
}

const TANK_HEAD: f64 = 45.0;
const EFF_WIDTH: f64 = 0.4;

fn anytown() -> Inp {
    let mut inp = Inp {
        title: "Anytown-mod: 22 junctions, 2 tanks, one station of two identical pumps".into(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xa7);
    let missing = [(0, 4), (4, 0), (4, 4)];
    let mut id = vec![vec![None; 5]; 5];
    let spacing = 400.0;
    for r in 0..5 {
        for c in 0..5 {
            if missing.contains(&(r, c)) {
                continue;
            }
            let name = format!("J{}", inp.junctions.len() + 1);
            let elevation = 2.0 * (r + c) as f64 / 2.0 + rng.random_range(0.0..2.0);
            let demand = 11.4 * rng.random_range(0.6..1.4);
            inp.junctions.push((name.clone(), elevation, demand));
            id[r][c] = Some(name);
        }
    }
    let total: f64 = inp.junctions.iter().map(|j| j.2).sum();
    for j in &mut inp.junctions {
        j.2 *= 250.0 / total;
    }
    let node = |r: usize, c: usize| id[r][c].clone().unwrap();
    let exists = |r: usize, c: usize| id[r][c].is_some();
    for r in 0..5 {
        for c in 0..5 {
            if !exists(r, c) {
                continue;
            }
            let trunk = r == 0 || c == 0;
            if c + 1 < 5 && exists(r, c + 1) {
                let d = if trunk { 0.40 } else { 0.25 };
                inp.pipe(&node(r, c), &node(r, c + 1), spacing, d, 120.0);
            }
            if r + 1 < 5 && exists(r + 1, c) {
                let d = if c == 0 { 0.40 } else { 0.25 };
                inp.pipe(&node(r, c), &node(r + 1, c), spacing, d, 120.0);
            }
        }
    }
    for &(r, c) in &[(0, 0), (1, 2), (2, 1), (2, 2), (1, 1)] {
        inp.pipe(&node(r, c), &node(r + 1, c + 1), spacing * 2f64.sqrt(), 0.20, 110.0);
    }
    inp.reservoirs.push(("R1".into(), 12.0));
    inp.tanks.push(("T1".into(), TANK_HEAD));
    inp.tanks.push(("T2".into(), TANK_HEAD));
    inp.pipe("T1", &node(4, 3), 1000.0, 0.15, 120.0);
    inp.pipe("T2", &node(3, 4), 1000.0, 0.15, 120.0);
    inp.curves.push(("H1".into(), head_curve(91.4, 97.0, 50.0)));
    inp.curves.push(("E1".into(), efficiency_curve(97.0, 0.8, EFF_WIDTH * 97.0)));
    inp.pumps.push(("PS1".into(), "R1".into(), node(0, 0), "H1".into(), "E1".into(), 2));
    inp
}

struct ZoneSpec {
    prefix: &'static str,
    nodes: usize,
    cols: usize,
    loops: usize,
    elevation: (f64, f64),
    demand_per_node: f64,
}

struct Zone {
    names: Vec<String>,
    /// Far node for a tank connection.
    far: String,
}

/// A rectangular street mesh: every row is a main, column 0 a spine, and
/// `loops` extra cross streets close rings. Pipes are sized for 0.8 m/s at
/// base demand plus `offtake` flows leaving at given nodes.
fn build_zone(inp: &mut Inp, spec: &ZoneSpec, offtake: &[(usize, f64)], rng: &mut ChaCha8Rng) -> Zone {
    let first = inp.junctions.len();
    let n = spec.nodes;
    let mut names = Vec::with_capacity(n);
    for i in 0..n {
        let name = format!("{}{}", spec.prefix, i + 1);
        let (r, c) = (i / spec.cols, i % spec.cols);
        let slope = (r + c) as f64 / ((n / spec.cols) + spec.cols) as f64;
        let (lo, hi) = spec.elevation;
        let elevation = lo + (hi - lo) * (0.7 * slope + 0.3 * rng.random_range(0.0..1.0));
        let demand = spec.demand_per_node * rng.random_range(0.5..1.5);
        inp.junctions.push((name.clone(), elevation, demand));
        names.push(name);
    }
    let mut tree = Vec::new();
    for i in 0..n {
        let (r, c) = (i / spec.cols, i % spec.cols);
        if c + 1 < spec.cols && i + 1 < n {
            tree.push((i, i + 1));
        }
        if c == 0 && i + spec.cols < n {
            tree.push((i, i + spec.cols));
        }
        let _ = r;
    }
    let mut candidates: Vec<(usize, usize)> = (0..n)
        .filter(|i| i % spec.cols != 0 && i + spec.cols < n)
        .map(|i| (i, i + spec.cols))
        .collect();
    let mut extra = Vec::new();
    for k in 0..spec.loops {
        let idx = (k * candidates.len()) / spec.loops;
        extra.push(candidates[idx]);
    }
    candidates.clear();

    // Downstream demand of every tree edge, rooted at node 0.
    let mut adj = vec![Vec::new(); n];
    for (e, &(a, b)) in tree.iter().enumerate() {
        adj[a].push((b, e));
        adj[b].push((a, e));
    }
    let mut parent_edge = vec![usize::MAX; n];
    let mut order = Vec::with_capacity(n);
    let mut seen = vec![false; n];
    let mut queue = VecDeque::from([0]);
    seen[0] = true;
    while let Some(u) = queue.pop_front() {
        order.push(u);
        for &(v, e) in &adj[u] {
            if !seen[v] {
                seen[v] = true;
                parent_edge[v] = e;
                queue.push_back(v);
            }
        }
    }
    let mut load: Vec<f64> = (0..n).map(|i| inp.junctions[first + i].2).collect();
    for &(i, q) in offtake {
        load[i] += q;
    }
    let mut edge_flow = vec![0.0; tree.len()];
    for &u in order.iter().rev() {
        let e = parent_edge[u];
        if e != usize::MAX {
            edge_flow[e] = load[u];
            let (a, b) = tree[e];
            let p = if a == u { b } else { a };
            load[p] += load[u];
        }
    }
    let size = |q: f64| -> f64 {
        let d = (4.0 * q / 1000.0 / (std::f64::consts::PI * 0.8)).sqrt();
        ((d / 0.05).ceil() * 0.05).max(0.10)
    };
    for (e, &(a, b)) in tree.iter().enumerate() {
        let len = rng.random_range(150.0..300.0);
        inp.pipe(&names[a], &names[b], len, size(edge_flow[e]), 110.0);
    }
    for &(a, b) in &extra {
        let len = rng.random_range(150.0..300.0);
        inp.pipe(&names[a], &names[b], len, 0.15, 100.0);
    }
    Zone {
        far: names[n - 1].clone(),
        names,
    }
}

fn dtown() -> Inp {
    let mut inp = Inp {
        title: "D-Town-mod: 399 junctions in five pressure zones, five pump stations".into(),
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(0xd7);
    let specs = [
        ZoneSpec { prefix: "A", nodes: 110, cols: 11, loops: 12, elevation: (0.0, 12.0), demand_per_node: 1.2 },
        ZoneSpec { prefix: "B", nodes: 80, cols: 10, loops: 9, elevation: (28.0, 40.0), demand_per_node: 1.0 },
        ZoneSpec { prefix: "C", nodes: 75, cols: 15, loops: 9, elevation: (40.0, 100.0), demand_per_node: 0.8 },
        ZoneSpec { prefix: "D", nodes: 70, cols: 10, loops: 8, elevation: (65.0, 120.0), demand_per_node: 0.6 },
        ZoneSpec { prefix: "E", nodes: 64, cols: 8, loops: 8, elevation: (22.0, 34.0), demand_per_node: 0.9 },
    ];
    let base = |s: &ZoneSpec| s.nodes as f64 * s.demand_per_node;
    let (qa, qb, qc, qd, qe) = (base(&specs[0]), base(&specs[1]), base(&specs[2]), base(&specs[3]), base(&specs[4]));
    // Booster suction points inside zone A and B.
    let (take_b, take_c, take_e, take_d) = (54, 10, 104, 79);
    let a = build_zone(&mut inp, &specs[0], &[(take_b, qb + qd), (take_c, qc), (take_e, qe)], &mut rng);
    let b = build_zone(&mut inp, &specs[1], &[(take_d, qd)], &mut rng);
    let c = build_zone(&mut inp, &specs[2], &[], &mut rng);
    let d = build_zone(&mut inp, &specs[3], &[], &mut rng);
    let e = build_zone(&mut inp, &specs[4], &[], &mut rng);
    let _ = qa;

    inp.reservoirs.push(("R1".into(), 10.0));
    inp.tanks.push(("TA".into(), 42.0));
    inp.tanks.push(("TB".into(), 72.0));
    inp.tanks.push(("TE".into(), 64.0));
    inp.pipe("TA", &a.far, 100.0, 0.35, 120.0);
    inp.pipe("TB", &b.far, 100.0, 0.25, 120.0);
    inp.pipe("TE", &e.far, 100.0, 0.25, 120.0);

    // Each station: (id, suction, discharge, pumps, shut-off head, design
    // flow per pump, design head, efficiency peak flow, half width).
    let stations = [
        ("PA", "R1".to_string(), a.names[0].clone(), 3, 95.0, 110.0, 52.0, 100.0, 90.0),
        ("PB", a.names[take_b].clone(), b.names[0].clone(), 2, 85.0, 60.0, 45.0, 52.0, 40.0),
        ("PC", a.names[take_c].clone(), c.names[0].clone(), 2, 140.0, 30.0, 110.0, 24.0, 18.0),
        ("PD", b.names[take_d].clone(), d.names[0].clone(), 1, 120.0, 40.0, 95.0, 32.0, 24.0),
        ("PE", a.names[take_e].clone(), e.names[0].clone(), 2, 70.0, 40.0, 40.0, 35.0, 26.0),
    ];
    for (id, from, to, n, h0, qd_, hd, qp, w) in stations {
        let hc = format!("H{id}");
        let ec = format!("E{id}");
        inp.curves.push((hc.clone(), head_curve(h0, qd_, hd)));
        inp.curves.push((ec.clone(), efficiency_curve(qp, 0.8, w)));
        inp.pumps.push((id.into(), from, to, hc, ec, n));
    }
    inp
}

fn main() {
    let dir = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "crates/core/assets".into()));
    std::fs::create_dir_all(&dir).expect("create asset dir");
    let a = anytown();
    assert_eq!(a.junctions.len(), 22);
    assert_eq!(a.pipes.len(), 41);
    std::fs::write(dir.join("anytown_mod.inp"), a.render()).expect("write anytown");
    let d = dtown();
    assert_eq!(d.junctions.len(), 399);
    assert_eq!(d.pipes.len(), 443);
    std::fs::write(dir.join("dtown_mod.inp"), d.render()).expect("write dtown");
}
