//! Trains on a bundled network and prints the validation curve.
//!
//! ```text
//! cargo run --release --example train_bundled -- anytown-mod 42 [steps] [n_validation]
//! ```

use std::time::Instant;

use pumpsurge::agent::{evaluate_policy, train, TrainConfig};
use pumpsurge::environment::{EnvConfig, Environment};
use pumpsurge::rng::Purpose;
use pumpsurge::scenario::{build_scenario_set, Guide, ScenarioContext};
use pumpsurge::{bundled, parse_network, Solver};

fn main() {
    let mut args = std::env::args().skip(1);
    let name = args.next().unwrap_or_else(|| "anytown-mod".into());
    let seed: u64 = args.next().map_or(42, |s| s.parse().expect("seed"));
    let dtown = name.starts_with("dtown");
    let mut cfg = if dtown { TrainConfig::dtown() } else { TrainConfig::anytown() };
    if let Some(steps) = args.next() {
        cfg.total_steps = steps.parse().expect("steps");
    }
    let n_val: usize = args.next().map_or(100, |s| s.parse().expect("count"));
    let guide = if std::env::var("GUIDE").as_deref() == Ok("osrt") { Guide::Osrt } else { Guide::Nm };
    if let Ok(lr) = std::env::var("LR") {
        cfg.learning_rate = lr.parse().expect("lr");
    }

    let net = parse_network(bundled::source(&name).expect("bundled name")).expect("parse");
    let solver = Solver::new(&net);
    let env_cfg = EnvConfig::for_network(&net, if dtown { 200 } else { 40 });
    let ctx = ScenarioContext::new(&solver, &env_cfg, guide);
    let t0 = Instant::now();
    let val = build_scenario_set(&ctx, n_val, seed, Purpose::Validation, true).expect("validation");
    let test = build_scenario_set(&ctx, 50, seed, Purpose::Test, true).expect("test");
    eprintln!("scenarios in {:.1}s", t0.elapsed().as_secs_f64());

    let mut hook = |p: &pumpsurge::agent::ValidationPoint, _: &pumpsurge::neural::QNetwork| {
        eprintln!(
            "[{:7.1}s] step {:7} ratio {:.4} len {:.2}",
            t0.elapsed().as_secs_f64(),
            p.step,
            p.mean_value_ratio,
            p.mean_length
        );
        Ok(())
    };
    let out = train(&ctx, &env_cfg, &val, &cfg, seed, Some(&mut hook)).expect("train");
    let mut env = Environment::new(&net, env_cfg).expect("env");
    let s = evaluate_policy(&out.network, &mut env, &test).expect("test");
    println!(
        "test ratio {:.4} len {:.2} evals {:.1} value {:.4} | episodes {} updates {} | {:.1}s",
        s.mean_value_ratio,
        s.mean_length,
        s.mean_evaluations,
        s.mean_value,
        out.episodes,
        out.updates,
        t0.elapsed().as_secs_f64()
    );
}
