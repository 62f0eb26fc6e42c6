mod common;

use bltqr::chain::SamplerConfig;
use bltqr::inference::{mdev_bands, pointwise_bands, predict_quantile};
use bltqr::io;
use bltqr::metrics::{correlation, rmse};
use bltqr::model::{Hyperparams, Variant};
use bltqr::sampler::{run_chain, run_chain_stream};
use bltqr::simulate::{generate, ScenarioSpec};
use bltqr::tensor::DenseTensor;

fn small_problem(seed: u64) -> (bltqr::simulate::Simulated, Hyperparams) {
    let spec = ScenarioSpec::new(1, vec![8, 8], 30, 10, 0.5, seed);
    (generate(&spec).unwrap(), Hyperparams::defaults(0.5, 2, 2, 2))
}

#[test]
fn one_iteration_past_burn_in_stores_one_draw() {
    let (sim, hyper) = small_problem(1);
    let config = SamplerConfig::new(11, 10, 4, Variant::Bltqr, 2, 2);
    let chain = run_chain(&config, &sim.train, &hyper).unwrap();
    assert_eq!(chain.n_draws, 1);
    chain.validate().unwrap();
    assert_eq!(chain.flags.as_ref().unwrap().len(), 3);
}

#[test]
fn thinning_sets_the_number_of_draws() {
    let (sim, hyper) = small_problem(1);
    let mut config = SamplerConfig::new(50, 10, 4, Variant::Csb1, 2, 2);
    config.thin = 3;
    let chain = run_chain(&config, &sim.train, &hyper).unwrap();
    assert_eq!(chain.n_draws, 13);
    assert_eq!(config.stored_draws(), 13);
}

#[test]
fn same_seed_same_chain_and_streams_differ() {
    let (sim, hyper) = small_problem(2);
    let config = SamplerConfig::new(40, 10, 9, Variant::Bltqr, 2, 2);
    let a = run_chain(&config, &sim.train, &hyper).unwrap();
    let b = run_chain(&config, &sim.train, &hyper).unwrap();
    assert_eq!(a, b);
    let c = run_chain_stream(&config, &sim.train, &hyper, 1).unwrap();
    assert_ne!(a.scalars, c.scalars);
}

#[test]
fn archived_chain_reproduces_selection_and_predictions() {
    let (sim, hyper) = small_problem(3);
    let config = SamplerConfig::new(80, 30, 5, Variant::Bltqr, 2, 2);
    let mut chain = run_chain(&config, &sim.train, &hyper).unwrap();
    chain.mask = Some(DenseTensor::from_fn(&[8, 8], |i| if i[0] < 6 { 1.0 } else { 0.0 }).unwrap());
    let dir = tempfile::tempdir().unwrap();
    io::write_chain(dir.path(), &chain).unwrap();
    let back = io::read_chain(dir.path()).unwrap();
    assert_eq!(back, chain);
    for t in 0..3 {
        assert_eq!(mdev_bands(&back, t, 0.1).unwrap(), mdev_bands(&chain, t, 0.1).unwrap());
        assert_eq!(pointwise_bands(&back, t, 0.1).unwrap(), pointwise_bands(&chain, t, 0.1).unwrap());
    }
    assert_eq!(predict_quantile(&back, &sim.test).unwrap(), predict_quantile(&chain, &sim.test).unwrap());
}

#[test]
fn dataset_directory_round_trip_feeds_identical_chain() {
    let (sim, hyper) = small_problem(4);
    let dir = tempfile::tempdir().unwrap();
    io::write_dataset(dir.path(), &sim.train).unwrap();
    let back = io::read_dataset(dir.path()).unwrap();
    assert_eq!(back, sim.train);
    let config = SamplerConfig::new(20, 5, 1, Variant::Csb2, 2, 2);
    assert_eq!(run_chain(&config, &back, &hyper).unwrap(), run_chain(&config, &sim.train, &hyper).unwrap());
}

#[test]
fn null_data_gives_near_zero_coefficients() {
    let spec = ScenarioSpec::new(0, vec![8, 8], 200, 0, 0.5, 11);
    let sim = generate(&spec).unwrap();
    let hyper = Hyperparams::defaults(0.5, 2, 2, 2);
    let config = SamplerConfig::new(1500, 500, 11, Variant::Bltqr, 2, 2);
    let chain = run_chain(&config, &sim.train, &hyper).unwrap();
    for t in 0..3 {
        let est = chain.posterior_mean(t).unwrap();
        let err = rmse(&est, &sim.truth[t]).unwrap();
        assert!(err < 0.05, "visit {t}: rmse {err}");
    }
}

#[test]
fn rank_one_signal_is_recovered() {
    let dims = [16, 16];
    let truth = vec![common::block(&dims, 4..10, 5..12, 1.0)];
    let data = common::linear_dataset(&truth, 300, 0, 1.0, 0.5, 21);
    let hyper = Hyperparams::defaults(0.5, 1, 1, 2);
    let config = SamplerConfig::new(3000, 1000, 21, Variant::Bltqr, 1, 1);
    let chain = run_chain(&config, &data, &hyper).unwrap();
    let est = chain.posterior_mean(0).unwrap();
    let corr = correlation(&est, &truth[0]).unwrap();
    assert!(corr > 0.9, "correlation {corr}");
}
