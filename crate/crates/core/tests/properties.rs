mod common;

use bltqr::dist::RngStream;
use bltqr::inference::{mdev_bands, pointwise_bands};
use bltqr::model::{theta_rho, Hyperparams, McmcState, Variant};
use bltqr::sampler::Sampler;
use bltqr::simulate::{true_signal, ScenarioSpec};
use bltqr::tensor::DenseTensor;
use proptest::prelude::*;
use rand::Rng;

fn variant_strategy() -> impl Strategy<Value = Variant> {
    prop_oneof![Just(Variant::Bltqr), Just(Variant::Csb1), Just(Variant::Csb2)]
}

proptest! {
    #[test]
    fn theta_flips_sign_under_reflection(q in 0.001f64..0.999) {
        let (t1, r1) = theta_rho(q).unwrap();
        let (t2, r2) = theta_rho(1.0 - q).unwrap();
        prop_assert!((t1 + t2).abs() <= 1e-9 * (1.0 + t1.abs()));
        prop_assert!((r1 - r2).abs() <= 1e-9 * r1);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    /// f(x + h e) - f(x) = h (f(x + e) - f(x)) for every scalar and margin entry.
    #[test]
    fn linear_predictor_is_linear_in_each_parameter(seed in any::<u64>(), variant in variant_strategy()) {
        let truth = vec![DenseTensor::zeros(&[3, 4]).unwrap(); 2];
        let data = common::linear_dataset(&truth, 3, 2, 1.0, 0.5, seed);
        let hyper = Hyperparams::defaults(0.5, 2, 2, 2);
        let mut rng = RngStream::new(seed);
        let base = McmcState::initialize(&data, &hyper, variant, 2, 2, &mut rng).unwrap();
        let (subject, visit) = (rng.random_range(0..3), rng.random_range(0..2));
        let f = |s: &McmcState| s.linear_predictor(&data, subject, visit, false).unwrap();
        let h = 1e-6;
        let perturbations: Vec<Box<dyn Fn(&mut McmcState, f64)>> = vec![
            Box::new(|s, d| s.b0 += d),
            Box::new(|s, d| s.b1 += d),
            Box::new(move |s, d| s.b0i[subject] += d),
            Box::new(|s, d| s.eta[1] += d),
            Box::new(|s, d| {
                if let Some(b) = &mut s.b0_block {
                    b.coef.margin_mut(1, 0)[2] += d;
                }
            }),
            Box::new(move |s, d| {
                if let Some(b) = s.bt_blocks.get_mut(visit) {
                    b.coef.margin_mut(0, 1)[3] += d;
                }
            }),
        ];
        let f0 = f(&base);
        for perturb in &perturbations {
            let mut small = base.clone();
            perturb(&mut small, h);
            let mut unit = base.clone();
            perturb(&mut unit, 1.0);
            let slope = f(&unit) - f0;
            let diff = (f(&small) - f0) / h;
            prop_assert!((diff - slope).abs() <= 1e-6 * (1.0 + slope.abs()), "{} vs {}", diff, slope);
        }
    }

    #[test]
    fn sweeps_keep_scales_positive_and_weights_normalized(seed in any::<u64>(), variant in variant_strategy()) {
        let dims = [4, 4];
        let truth = vec![common::block(&dims, 1..3, 0..2, 1.0), common::block(&dims, 2..4, 1..3, 1.0)];
        let data = common::linear_dataset(&truth, 12, 1, 1.0, 0.3, seed);
        let hyper = Hyperparams::defaults(0.3, 2, 2, 2);
        let mut rng = RngStream::new(seed);
        let state = McmcState::initialize(&data, &hyper, variant, 2, 2, &mut rng).unwrap();
        let mut s = Sampler::new(&data, hyper.clone(), variant, state, rng).unwrap();
        for _ in 0..15 {
            s.sweep().unwrap();
            let st = s.state();
            st.check_invariants(hyper.spike).unwrap();
            for b in st.b0_block.iter().chain(&st.bt_blocks) {
                prop_assert!((b.weights.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
                if let Some(sel) = &b.selection {
                    for (r, per_r) in sel.flags.iter().enumerate() {
                        for (j, per_j) in per_r.iter().enumerate() {
                            for (k, &on) in per_j.iter().enumerate() {
                                prop_assert_eq!(!on, b.scales[r][j][k] == hyper.spike);
                            }
                        }
                    }
                }
            }
        }
    }

    #[test]
    fn mdev_selection_is_subset_of_pointwise(seed in any::<u64>(), cells in 2usize..12, alpha in 0.02f64..0.5) {
        let mut rng = RngStream::new(seed);
        let centres: Vec<f64> = (0..cells).map(|_| rng.random_range(-2.0..2.0)).collect();
        let spreads: Vec<f64> = (0..cells).map(|_| rng.random_range(0.05..1.5)).collect();
        let draws: Vec<Vec<f64>> = (0..40)
            .map(|_| (0..cells).map(|c| centres[c] + spreads[c] * bltqr::dist::standard_normal(&mut rng)).collect())
            .collect();
        let chain = common::chain_from_draws(&[1, cells], &draws);
        let md = mdev_bands(&chain, 0, alpha).unwrap();
        let pw = pointwise_bands(&chain, 0, alpha).unwrap();
        for c in 0..cells {
            prop_assert!(md.lower.data()[c] <= pw.lower.data()[c] + 1e-12);
            prop_assert!(md.upper.data()[c] >= pw.upper.data()[c] - 1e-12);
            prop_assert!(!md.selected[c] || pw.selected[c]);
        }
    }

    #[test]
    fn simulated_signals_are_sparse(scenario in 1u8..=5, side in 8usize..40, visit in 0usize..3) {
        let dims = if scenario == 5 { vec![side.min(20); 3] } else { vec![side; 2] };
        let spec = ScenarioSpec::new(scenario, dims, 10, 0, 0.5, 1);
        let beta = true_signal(&spec, visit).unwrap();
        let nonzero = beta.data().iter().filter(|&&v| v != 0.0).count();
        prop_assert!(nonzero > 0);
        prop_assert!((nonzero as f64) < 0.25 * beta.data().len() as f64);
    }
}

/// At reference resolution the second-visit support is the first-visit support shifted
/// by a whole number of cells along every axis.
#[test]
fn shape_translates_between_first_two_visits() {
    for scenario in 1u8..=5 {
        let (dims, shift) = if scenario == 5 { (vec![30; 3], 2) } else { (vec![48; 2], 3) };
        let spec = ScenarioSpec::new(scenario, dims.clone(), 10, 0, 0.5, 1);
        let support = |t: usize| -> Vec<Vec<usize>> {
            let beta = true_signal(&spec, t).unwrap();
            let mut cells = Vec::new();
            let mut idx = vec![0usize; dims.len()];
            for &v in beta.data() {
                if v != 0.0 {
                    cells.push(idx.clone());
                }
                for a in (0..idx.len()).rev() {
                    idx[a] += 1;
                    if idx[a] < dims[a] {
                        break;
                    }
                    idx[a] = 0;
                }
            }
            cells
        };
        let first: Vec<Vec<usize>> = support(0).into_iter().map(|c| c.iter().map(|i| i + shift).collect()).collect();
        assert_eq!(first, support(1), "scenario {scenario}");
    }
}
