use tiltlab::experiments;
use tiltlab::oracle::partition;
use tiltlab::rng::StreamRng;
use tiltlab::Chain;
use tiltlab_bench::{heat_bath_workload, oracle_workloads, sweep_workloads};

#[test]
fn sweep_workloads_run() {
    let w = sweep_workloads().unwrap();
    assert_eq!(w.len(), 3);
    for (_, config) in &w {
        let mut chain = Chain::new(config, 1, 0).unwrap();
        chain.sweep();
        assert_eq!(chain.steps(), chain.sweep_len());
        assert!(chain.log_weight().is_finite());
    }
}

#[test]
fn oracle_workloads_have_finite_partition_functions() {
    for (label, config) in oracle_workloads().unwrap() {
        let z = partition(&config, None).unwrap();
        assert!(z.log_z.is_finite(), "{label}");
    }
}

#[test]
fn heat_bath_workload_draws() {
    let config = heat_bath_workload().unwrap();
    let mut rng = StreamRng::new(1, 0);
    let state = experiments::warm_start(&config, 1, &mut rng).unwrap();
    config.check_state(&state).unwrap();
}
