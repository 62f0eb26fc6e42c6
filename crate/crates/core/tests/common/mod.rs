#![allow(dead_code)]

use bltqr::chain::{ChainOutput, Manifest, SamplerConfig};
use bltqr::dist::{self, RngStream};
use bltqr::model::{Dataset, Hyperparams, Record, Variant};
use bltqr::tensor::DenseTensor;

/// Single-visit chain whose coefficient draws are given row by row.
pub fn chain_from_draws(dims: &[usize], draws: &[Vec<f64>]) -> ChainOutput {
    let k = draws.len();
    ChainOutput {
        manifest: Manifest {
            config: SamplerConfig::new(k + 1, 1, 0, Variant::Csb2, 1, 1),
            hyper: Hyperparams::defaults(0.5, 1, 1, dims.len()),
            chain: 0,
            version: "test".into(),
            data_path: None,
            timing_seconds: None,
        },
        dims: dims.to_vec(),
        n_draws: k,
        coefficients: vec![draws.concat()],
        scalar_names: vec!["sigma".into(), "b0".into(), "b1".into()],
        scalars: (0..k).flat_map(|_| [1.0, 0.0, 0.0]).collect(),
        b0i: vec![0.0; k],
        eta: Vec::new(),
        flags: None,
        train_subjects: vec![true],
        mask: None,
    }
}

/// Gaussian images, `y = <X, truth[t]> + ALD(0, noise, q)`, every subject at every visit,
/// and `p` standard-normal covariates with zero effect.
pub fn linear_dataset(truth: &[DenseTensor], n: usize, p: usize, noise: f64, q: f64, seed: u64) -> Dataset {
    let mut rng = RngStream::new(seed);
    let dims = truth[0].dims().to_vec();
    let covariates: Vec<Vec<f64>> = (0..n)
        .map(|_| (0..p).map(|_| dist::standard_normal(&mut rng)).collect())
        .collect();
    let mut records = Vec::new();
    for (t, beta) in truth.iter().enumerate() {
        for subject in 0..n {
            let image = DenseTensor::from_fn(&dims, |_| dist::standard_normal(&mut rng)).unwrap();
            let signal: f64 = image.data().iter().zip(beta.data()).map(|(a, b)| a * b).sum();
            let eps = if noise > 0.0 { dist::sample_ald(0.0, noise, q, &mut rng).unwrap() } else { 0.0 };
            records.push(Record {
                subject,
                visit: t,
                time: 0.5 * t as f64,
                y: signal + eps,
                image,
            });
        }
    }
    let covariates = if p == 0 { Vec::new() } else { covariates };
    Dataset::new(n, truth.len(), records, covariates).unwrap()
}

/// Axis-aligned block of `value` on rows `r0..r1`, columns `c0..c1`.
pub fn block(dims: &[usize], rows: std::ops::Range<usize>, cols: std::ops::Range<usize>, value: f64) -> DenseTensor {
    DenseTensor::from_fn(dims, |idx| {
        if rows.contains(&idx[0]) && cols.contains(&idx[1]) {
            value
        } else {
            0.0
        }
    })
    .unwrap()
}
