//! Long runs against exact answers on small instances.

use std::collections::HashMap;

use tiltlab::experiments::{self, Schedule};
use tiltlab::io;
use tiltlab::rng::StreamRng;
use tiltlab::{EnsembleConfig, IncrementModel, OracleTable};

fn pair() -> EnsembleConfig {
    EnsembleConfig::builder(IncrementModel::lazy_srw(), 2, (0, 10))
        .tilt(1.0, 2.0, 10.0)
        .boundaries(vec![3, 1], vec![2, 0])
        .floor_const(0)
        .build()
        .unwrap()
}

fn midpoint_tv(config: &EnsembleConfig, samples: &tiltlab::sampler::SampleSet) -> f64 {
    let table = OracleTable::build(config, None).unwrap();
    let mid = config.width() / 2;
    let mut worst: f64 = 0.0;
    for i in 0..config.n() {
        let mut counts: HashMap<i32, f64> = HashMap::new();
        for k in 0..samples.len() {
            *counts.entry(samples.height(k, i, mid)).or_default() += 1.0 / samples.len() as f64;
        }
        let exact = table.marginal(i, config.left() + mid as i64).unwrap();
        let mut tv: f64 = exact.heights.iter().zip(&exact.probs).map(|(h, p)| (counts.get(h).unwrap_or(&0.0) - p).abs()).sum();
        tv += counts.iter().filter(|(h, _)| exact.prob_of(**h) == 0.0).map(|(_, p)| p).sum::<f64>();
        worst = worst.max(tv / 2.0);
    }
    worst
}

#[test]
fn heat_bath_alone_matches_exact_midpoint_law() {
    let config = pair();
    // one sweep between rounds, so the heat-bath moves dominate
    let schedule = Schedule { sweeps: 20_000, burnin: 100, thin: 1, warm_rounds: 2, heat_bath_every: 1 };
    let run = experiments::long_run(&config, 5, 2, schedule).unwrap();
    assert_eq!(run.samples.len(), 2 * 19_900);
    let tv = midpoint_tv(&config, &run.samples);
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn glauber_only_long_run_matches_exact_midpoint_law() {
    let config = pair();
    let schedule = Schedule { sweeps: 40_000, burnin: 400, thin: 1, warm_rounds: 0, heat_bath_every: 0 };
    let run = experiments::long_run(&config, 6, 2, schedule).unwrap();
    let tv = midpoint_tv(&config, &run.samples);
    assert!(tv < 0.02, "tv {tv}");
}

#[test]
fn heat_bath_round_keeps_state_admissible_and_is_reproducible() {
    let config = experiments::scaling_config(3, 4.0, 256).unwrap();
    let draw = |seed| {
        let mut rng = StreamRng::new(seed, 0);
        let start = experiments::warm_start(&config, 3, &mut rng).unwrap();
        experiments::heat_bath_round(&config, &start, &mut rng).unwrap()
    };
    let state = draw(9);
    config.check_state(&state).unwrap();
    assert_eq!(state, draw(9));
    assert_ne!(state, draw(10));
}

#[test]
fn long_run_samples_survive_csv_round_trip() {
    let config = pair();
    let schedule = Schedule { sweeps: 50, burnin: 10, thin: 5, warm_rounds: 1, heat_bath_every: 3 };
    let run = experiments::long_run(&config, 1, 2, schedule).unwrap();
    let text = io::samples_csv(&run.samples);
    let back = io::parse_samples_csv(&text, config.n(), config.left(), config.width(), config.grid_step()).unwrap();
    assert_eq!(io::samples_csv(&back), text);
    assert_eq!(back.len(), 16);
}
