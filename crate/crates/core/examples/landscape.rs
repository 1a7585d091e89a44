//! Prints how the state value behaves over the speed box for random demand
//! scenarios of a network.
//!
//! ```text
//! cargo run --release --example landscape -- crates/core/assets/anytown_mod.inp 50
//! ```

use pumpsurge::environment::{value_breakdown, EnvConfig};
use pumpsurge::optimizers::NelderMeadConfig;
use pumpsurge::rng::{stream, Purpose};
use pumpsurge::scenario::{DemandRandomizerConfig, Guide, ScenarioContext};
use pumpsurge::{parse_network, Solver};
use rand::Rng;

fn main() {
    let mut args = std::env::args().skip(1);
    let path = args.next().expect("usage: landscape <inp> [n]");
    let n: usize = args.next().map_or(30, |s| s.parse().expect("count"));
    let net = parse_network(&std::fs::read_to_string(&path).expect("read")).expect("parse");
    let solver = Solver::new(&net);
    let env = EnvConfig::for_network(&net, 40);
    let ctx = ScenarioContext {
        solver: &solver,
        solver_cfg: env.solver,
        objective: env.objective,
        randomizer: DemandRandomizerConfig::default(),
        grid: env.grid,
        nelder_mead: NelderMeadConfig::default(),
        guide: Guide::Nm,
    };
    let g = net.n_groups();
    let mut rng = stream(99, Purpose::Scratch, 0);
    let (mut worst_snap, mut sum_snap, mut sum_rand, mut sum_evals) = (f64::INFINITY, 0.0, 0.0, 0.0);
    let mut sum_grid = 0.0;
    for i in 0..n {
        let sc = ctx.draw(1, Purpose::Test, i, true).expect("scenario");
        let r = sc.reference.clone().unwrap();
        let snapped: Vec<f64> = r.speeds.iter().map(|&s| env.grid.snap(s)).collect();
        let v_snap = ctx.evaluate(&sc.demands, &snapped);
        let mut v_rand = 0.0;
        for _ in 0..20 {
            let x: Vec<f64> = (0..g).map(|_| env.grid.speed(rng.random_range(0..=env.grid.top_level()))).collect();
            v_rand += ctx.evaluate(&sc.demands, &x) / 20.0;
        }
        let grid_best = if g == 1 {
            (0..=env.grid.top_level())
                .map(|l| ctx.evaluate(&sc.demands, &[env.grid.speed(l)]))
                .fold(f64::MIN, f64::max)
        } else {
            f64::NAN
        };
        if i < 4 && std::env::var("PROFILE").is_ok() {
            for l in 0..=env.grid.top_level() {
                let x = vec![env.grid.speed(l); g];
                let st = solver.solve(&sc.demands, &x, &env.solver).unwrap();
                let b = value_breakdown(&st, &env.objective).unwrap();
                println!(
                    "    s {:.2} v {:.4} sat {:.3} eff {:.3} feed {:.3} pumps {:?} tanks {:?}",
                    x[0],
                    b.value,
                    b.satisfaction,
                    b.efficiency,
                    b.feed,
                    st.pump_ops.iter().map(|p| p.flow.round()).collect::<Vec<_>>(),
                    st.tank_flows.iter().map(|f| f.round()).collect::<Vec<_>>()
                );
            }
        }
        let st = solver.solve(&sc.demands, &r.speeds, &env.solver).unwrap();
        let b = value_breakdown(&st, &env.objective).unwrap();
        let pmin = st.pressures.iter().cloned().fold(f64::MAX, f64::min);
        let pmax = st.pressures.iter().cloned().fold(f64::MIN, f64::max);
        let dem: f64 = sc.demands.iter().sum();
        println!(
            "{i:3} dem {dem:7.1} ref {:?} v {:.4} (sat {:.3} eff {:.3} feed {:.3}) snap {:.4} rand {:.4} grid {:.4} evals {} p [{pmin:.1},{pmax:.1}] it {}",
            r.speeds.iter().map(|s| (s * 1000.0).round() / 1000.0).collect::<Vec<_>>(),
            r.value,
            b.satisfaction,
            b.efficiency,
            b.feed,
            v_snap / r.value,
            v_rand / r.value,
            grid_best / r.value,
            r.evaluations,
            st.iterations
        );
        worst_snap = worst_snap.min(v_snap / r.value);
        sum_snap += v_snap / r.value;
        sum_rand += v_rand / r.value;
        sum_grid += grid_best / r.value;
        sum_evals += r.evaluations as f64;
    }
    let n = n as f64;
    println!(
        "snap mean {:.4} worst {:.4} | random mean {:.4} | grid/ref mean {:.4} | nm evals {:.1}",
        sum_snap / n,
        worst_snap,
        sum_rand / n,
        sum_grid / n,
        sum_evals / n
    );
}
