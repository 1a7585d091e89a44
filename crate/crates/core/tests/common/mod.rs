//! Independent oracles shared by the integration tests.

#![allow(dead_code)]

use std::collections::HashMap;

use pumpsurge::{HydraulicState, Network};

/// Hazen–Williams head loss [m] for a flow in L/s, from the SI formula
/// `10.67 L Q^1.852 / (C^1.852 D^4.87)` with Q in m3/s.
pub fn hw_loss(length: f64, diameter: f64, c: f64, q_lps: f64) -> f64 {
    let q = q_lps / 1000.0;
    10.67 * length * q.abs().powf(1.852) * q.signum() / (c.powf(1.852) * diameter.powf(4.87))
}

/// Inverse of [`hw_loss`]: flow in L/s for a head drop.
pub fn hw_flow(length: f64, diameter: f64, c: f64, dh: f64) -> f64 {
    let k = 10.67 * length / (c.powf(1.852) * diameter.powf(4.87));
    1000.0 * (dh.abs() / k).powf(1.0 / 1.852) * dh.signum()
}

pub fn node_heads(net: &Network, st: &HydraulicState) -> HashMap<String, f64> {
    let mut h = HashMap::new();
    for (j, v) in net.junctions.iter().zip(&st.heads) {
        h.insert(j.id.clone(), *v);
    }
    for r in &net.reservoirs {
        h.insert(r.id.clone(), r.head);
    }
    for t in &net.tanks {
        h.insert(t.id.clone(), t.head);
    }
    h
}

/// Largest junction mass imbalance [L/s] and pipe energy imbalance [m].
pub fn residuals(net: &Network, st: &HydraulicState, demands: &[f64]) -> (f64, f64) {
    let heads = node_heads(net, st);
    let mut balance: HashMap<&str, f64> = HashMap::new();
    for (j, d) in net.junctions.iter().zip(demands) {
        balance.insert(&j.id, -d);
    }
    let mut energy: f64 = 0.0;
    for (p, q) in net.pipes.iter().zip(&st.flows) {
        let dh = heads[&p.from] - heads[&p.to];
        energy = energy.max((dh - hw_loss(p.length, p.diameter, p.roughness, *q)).abs());
        if let Some(b) = balance.get_mut(p.from.as_str()) {
            *b -= q;
        }
        if let Some(b) = balance.get_mut(p.to.as_str()) {
            *b += q;
        }
    }
    for (g, q) in net.pump_groups.iter().zip(&st.flows[net.pipes.len()..]) {
        if let Some(b) = balance.get_mut(g.from.as_str()) {
            *b -= q;
        }
        if let Some(b) = balance.get_mut(g.to.as_str()) {
            *b += q;
        }
    }
    let mass = balance.values().fold(0.0f64, |m, v| m.max(v.abs()));
    (mass, energy)
}

/// Pipe-only network heads by nonlinear Gauss–Seidel: each junction head is
/// found by bisection on its own mass balance with the neighbours fixed.
/// Junction balance is strictly decreasing in its own head, so the sweep
/// converges for any connected network with a fixed-head node.
pub fn brute_force_heads(net: &Network, demands: &[f64]) -> Vec<f64> {
    let mut fixed: HashMap<String, f64> = HashMap::new();
    for r in &net.reservoirs {
        fixed.insert(r.id.clone(), r.head);
    }
    for t in &net.tanks {
        fixed.insert(t.id.clone(), t.head);
    }
    let idx: HashMap<String, usize> = net.junctions.iter().enumerate().map(|(i, j)| (j.id.clone(), i)).collect();
    let top = fixed.values().fold(f64::NEG_INFINITY, |a, &b| a.max(b));
    let mut h = vec![top; net.junctions.len()];
    let head_of = |id: &str, h: &[f64]| fixed.get(id).copied().unwrap_or_else(|| h[idx[id]]);
    for _sweep in 0..100_000 {
        let mut change: f64 = 0.0;
        for i in 0..h.len() {
            let id = net.junctions[i].id.clone();
            let inflow = |hi: f64, h: &[f64]| -> f64 {
                let mut s = -demands[i];
                for p in &net.pipes {
                    if p.to == id {
                        s += hw_flow(p.length, p.diameter, p.roughness, head_of(&p.from, h) - hi);
                    } else if p.from == id {
                        s -= hw_flow(p.length, p.diameter, p.roughness, hi - head_of(&p.to, h));
                    }
                }
                s
            };
            let (mut lo, mut hi) = (top - 1000.0, top + 1000.0);
            for _ in 0..200 {
                let mid = 0.5 * (lo + hi);
                if inflow(mid, &h) > 0.0 {
                    lo = mid;
                } else {
                    hi = mid;
                }
            }
            let new = 0.5 * (lo + hi);
            change = change.max((new - h[i]).abs());
            h[i] = new;
        }
        if change < 1e-11 {
            break;
        }
    }
    h
}

/// Toy pipe networks with at most four junctions.
pub const TOY_NETWORKS: [&str; 3] = [
    "[JUNCTIONS]\nA 0 5\nB 2 3\n[RESERVOIRS]\nR 40\n[PIPES]\nP1 R A 500 0.2 110\nP2 A B 300 0.15 100\n[END]\n",
    "[JUNCTIONS]\nA 0 4\nB 1 6\nC 3 2\n[RESERVOIRS]\nR 50\n[PIPES]\nP1 R A 400 0.25 120\nP2 A B 350 0.15 100\nP3 B C 250 0.1 90\nP4 A C 600 0.12 130\n[END]\n",
    "[JUNCTIONS]\nA 0 8\nB 0 3\nC 5 4\nD 2 6\n[RESERVOIRS]\nR 45\n[TANKS]\nT 38\n[PIPES]\nP1 R A 300 0.3 120\nP2 A B 200 0.2 110\nP3 B C 450 0.15 100\nP4 C D 300 0.15 100\nP5 A D 500 0.2 120\nP6 T C 700 0.1 100\nP7 B D 250 0.1 90\n[END]\n",
];
