//! Synthetic longitudinal datasets with known coefficient tensors.
//!
//! Shapes are defined on a reference grid (48 x 48 for images, 30^3 for volumes)
//! and rasterized by cell centre, so any `dims` gives the same picture at a
//! different resolution. Each visit moves the shape by a fixed step and changes
//! its magnitude; the last visit adds ten isolated cells on a 2 x 5 lattice.

use serde::{Deserialize, Serialize};

use crate::dist::{self, RngStream};
use crate::error::{Error, Result};
use crate::model::{Dataset, Record};
use crate::tensor::{inner_product, DenseTensor};

const REF_2D: f64 = 48.0;
const REF_3D: f64 = 30.0;
/// Shape centre moves this many reference units per visit along each axis.
const STEP: f64 = 3.0;
const LATTICE_ROWS_2D: [f64; 2] = [36.0, 42.0];
const LATTICE_COLS_2D: [f64; 5] = [6.0, 15.0, 24.0, 33.0, 42.0];
const LATTICE_SLICE_3D: f64 = 24.0;
const LATTICE_ROWS_3D: [f64; 2] = [22.0, 26.0];
const LATTICE_COLS_3D: [f64; 5] = [3.0, 9.0, 15.0, 21.0, 27.0];

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Noise {
    Ald,
    Normal,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ScenarioSpec {
    /// 1 rectangle, 2 cross, 3 triangle, 4 circle, 5 cube; 0 is the all-zero null signal.
    pub scenario: u8,
    pub dims: Vec<usize>,
    pub n_train: usize,
    pub n_test: usize,
    pub n_visits: usize,
    pub q: f64,
    pub noise: Noise,
    pub noise_scale: f64,
    pub sparse_range: (f64, f64),
    pub seed: u64,
}

impl ScenarioSpec {
    /// Three visits, ALD(0, 1, q) noise, sparse values in [1.2, 2.0].
    pub fn new(scenario: u8, dims: Vec<usize>, n_train: usize, n_test: usize, q: f64, seed: u64) -> Self {
        Self {
            scenario,
            dims,
            n_train,
            n_test,
            n_visits: 3,
            q,
            noise: Noise::Ald,
            noise_scale: 1.0,
            sparse_range: (1.2, 2.0),
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.scenario > 5 {
            return Err(Error::invalid(format!("unsupported scenario {}", self.scenario)));
        }
        let want = if self.scenario == 5 { 3 } else { self.dims.len() };
        if self.dims.len() != want || !(2..=3).contains(&self.dims.len()) {
            return Err(Error::invalid(format!(
                "scenario {} needs a {}-way image, got dims {:?}",
                self.scenario,
                if self.scenario == 5 { 3 } else { 2 },
                self.dims
            )));
        }
        if (1..=4).contains(&self.scenario) && self.dims.len() != 2 {
            return Err(Error::invalid("scenarios 1-4 are two-dimensional"));
        }
        if self.n_train == 0 || self.n_visits == 0 {
            return Err(Error::invalid("need at least one training subject and one visit"));
        }
        if !(self.noise_scale >= 0.0) || !self.noise_scale.is_finite() {
            return Err(Error::invalid("noise scale must be nonnegative"));
        }
        let (lo, hi) = self.sparse_range;
        if !(lo <= hi) {
            return Err(Error::invalid("sparse range must satisfy lo <= hi"));
        }
        crate::model::theta_rho(self.q)?;
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Simulated {
    pub train: Dataset,
    /// New subjects, numbered after the training subjects.
    pub test: Dataset,
    pub truth: Vec<DenseTensor>,
}

fn magnitude(scenario: u8, visit: usize) -> f64 {
    let table: [f64; 3] = match scenario {
        1 => [1.0, 1.2, 1.5],
        2 => [1.0, 0.8, 1.2],
        3 => [1.2, 1.0, 1.5],
        4 => [0.8, 1.0, 1.3],
        5 => [1.0, 1.0, 1.5],
        _ => [0.0; 3],
    };
    table[visit.min(2)]
}

/// Membership of a reference-grid point in the scenario's shape at a visit.
fn in_shape(scenario: u8, visit: usize, p: &[f64]) -> bool {
    let shift = STEP * visit as f64;
    match scenario {
        1 => {
            let (dr, dc) = (p[0] - (18.0 + shift), p[1] - (20.0 + shift));
            dr.abs() <= 6.0 && dc.abs() <= 5.0
        }
        2 => {
            let (dr, dc) = (p[0] - (18.0 + shift), p[1] - (20.0 + shift));
            (dr.abs() <= 2.5 && dc.abs() <= 8.0) || (dc.abs() <= 2.5 && dr.abs() <= 8.0)
        }
        3 => {
            // apex up, base 16 wide, height 14
            let (dr, dc) = (p[0] - (18.0 + shift), p[1] - (20.0 + shift));
            (-7.0..=7.0).contains(&dr) && dc.abs() <= 8.0 * (dr + 7.0) / 14.0
        }
        4 => {
            let (dr, dc) = (p[0] - (18.0 + shift), p[1] - (20.0 + shift));
            dr * dr + dc * dc <= 49.0
        }
        5 => {
            let c = 11.0 + 2.0 * visit as f64;
            p.iter().all(|&x| (x - c).abs() <= 4.0)
        }
        _ => false,
    }
}

/// Cells of the last-visit lattice, as reference-grid points.
fn lattice_points(order: usize) -> Vec<Vec<f64>> {
    let mut pts = Vec::with_capacity(10);
    if order == 2 {
        for &r in &LATTICE_ROWS_2D {
            for &c in &LATTICE_COLS_2D {
                pts.push(vec![r, c]);
            }
        }
    } else {
        for &r in &LATTICE_ROWS_3D {
            for &c in &LATTICE_COLS_3D {
                pts.push(vec![LATTICE_SLICE_3D, r, c]);
            }
        }
    }
    pts
}

/// Ground-truth coefficient at a 0-based visit. Depends only on `(scenario, dims, seed)`.
pub fn true_signal(spec: &ScenarioSpec, visit: usize) -> Result<DenseTensor> {
    spec.validate()?;
    if visit >= spec.n_visits {
        return Err(Error::IndexOutOfRange {
            what: "visit",
            index: visit,
            limit: spec.n_visits,
        });
    }
    let reference = if spec.dims.len() == 3 { REF_3D } else { REF_2D };
    let dims = spec.dims.clone();
    let mag = magnitude(spec.scenario, visit);
    let mut out = DenseTensor::from_fn(&dims, |idx| {
        let p: Vec<f64> = idx
            .iter()
            .zip(&dims)
            .map(|(&c, &n)| (c as f64 + 0.5) * reference / n as f64)
            .collect();
        if in_shape(spec.scenario, visit, &p) {
            mag
        } else {
            0.0
        }
    })?;
    if spec.scenario != 0 && visit + 1 == spec.n_visits && spec.n_visits > 1 {
        let mut rng = RngStream::with_stream(spec.seed, 1);
        let (lo, hi) = spec.sparse_range;
        for pt in lattice_points(dims.len()) {
            let idx: Vec<usize> = pt
                .iter()
                .zip(&dims)
                .map(|(&x, &n)| ((x * n as f64 / reference).floor() as usize).min(n - 1))
                .collect();
            let value = lo + (hi - lo) * dist::uniform_unit(&mut rng);
            let flat = out.flat_index(&idx)?;
            if out.data()[flat] == 0.0 {
                out.data_mut()[flat] = value;
            }
        }
    }
    Ok(out)
}

pub fn generate(spec: &ScenarioSpec) -> Result<Simulated> {
    spec.validate()?;
    let truth = (0..spec.n_visits)
        .map(|t| true_signal(spec, t))
        .collect::<Result<Vec<_>>>()?;
    let mut rng = RngStream::with_stream(spec.seed, 2);
    let mut train = Vec::with_capacity(spec.n_train * spec.n_visits);
    let mut test = Vec::with_capacity(spec.n_test * spec.n_visits);
    for (t, beta) in truth.iter().enumerate() {
        let time = 0.5 * t as f64;
        for subject in 0..spec.n_train + spec.n_test {
            let image = DenseTensor::from_fn(&spec.dims, |_| dist::standard_normal(&mut rng))?;
            let noise = draw_noise(spec, &mut rng)?;
            let y = inner_product(&image, beta)? + noise;
            let rec = Record {
                subject,
                visit: t,
                time,
                y,
                image,
            };
            if subject < spec.n_train {
                train.push(rec);
            } else {
                test.push(rec);
            }
        }
    }
    let train = Dataset::new(spec.n_train, spec.n_visits, train, Vec::new())?;
    let test = if spec.n_test > 0 {
        Dataset::new(spec.n_train + spec.n_test, spec.n_visits, test, Vec::new())?
    } else {
        train.clone()
    };
    Ok(Simulated { train, test, truth })
}

/// Same design with `N(0, noise_scale^2)` errors instead of ALD.
pub fn generate_misspecified(spec: &ScenarioSpec) -> Result<Simulated> {
    let mut spec = spec.clone();
    spec.noise = Noise::Normal;
    generate(&spec)
}

fn draw_noise(spec: &ScenarioSpec, rng: &mut RngStream) -> Result<f64> {
    if spec.noise_scale == 0.0 {
        return Ok(0.0);
    }
    match spec.noise {
        Noise::Ald => dist::sample_ald(0.0, spec.noise_scale, spec.q, rng),
        Noise::Normal => dist::normal(0.0, spec.noise_scale, rng),
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn support(t: &DenseTensor) -> Vec<bool> {
        t.data().iter().map(|&v| v != 0.0).collect()
    }

    #[test]
    fn rectangle_first_visit_is_axis_aligned_block() {
        let spec = ScenarioSpec::new(1, vec![48, 48], 10, 0, 0.5, 3);
        let s = true_signal(&spec, 0).unwrap();
        let on: Vec<(usize, usize)> = (0..48 * 48).filter(|&f| s.data()[f] != 0.0).map(|f| (f / 48, f % 48)).collect();
        let (r0, r1) = (on.iter().map(|p| p.0).min().unwrap(), on.iter().map(|p| p.0).max().unwrap());
        let (c0, c1) = (on.iter().map(|p| p.1).min().unwrap(), on.iter().map(|p| p.1).max().unwrap());
        assert_eq!(on.len(), (r1 - r0 + 1) * (c1 - c0 + 1));
        assert!(on.iter().all(|&(r, c)| s.data()[r * 48 + c] == 1.0));
    }

    #[test]
    fn last_visit_has_isolated_cells_outside_shape() {
        for scenario in 1..=5u8 {
            let dims = if scenario == 5 { vec![12, 12, 12] } else { vec![16, 16] };
            let spec = ScenarioSpec::new(scenario, dims.clone(), 5, 0, 0.5, 11);
            let last = true_signal(&spec, 2).unwrap();
            let mut bare = spec.clone();
            bare.sparse_range = (0.0, 0.0);
            let shape = true_signal(&bare, 2).unwrap();
            let extra: Vec<f64> = last
                .data()
                .iter()
                .zip(shape.data())
                .filter(|(a, b)| **a != 0.0 && **b == 0.0)
                .map(|(a, _)| *a)
                .collect();
            assert_eq!(extra.len(), 10, "scenario {scenario}");
            assert!(extra.iter().all(|&v| (1.2..=2.0).contains(&v)));
            // earlier visits carry no lattice cells
            let first = true_signal(&spec, 0).unwrap();
            let shape0 = true_signal(&bare, 0).unwrap();
            assert_eq!(first, shape0);
        }
    }

    #[test]
    fn cube_magnitudes() {
        let spec = ScenarioSpec::new(5, vec![12, 12, 12], 5, 0, 0.5, 1);
        let mags: Vec<f64> = (0..3)
            .map(|t| {
                let mut bare = spec.clone();
                bare.sparse_range = (0.0, 0.0);
                true_signal(&bare, t).unwrap().data().iter().cloned().fold(0.0, f64::max)
            })
            .collect();
        assert_eq!(mags, vec![1.0, 1.0, 1.5]);
    }

    #[test]
    fn sparse_and_translated_support() {
        for scenario in 1..=4u8 {
            let spec = ScenarioSpec::new(scenario, vec![16, 16], 5, 0, 0.5, 2);
            let s0 = true_signal(&spec, 0).unwrap();
            let s1 = true_signal(&spec, 1).unwrap();
            for t in 0..3 {
                let s = true_signal(&spec, t).unwrap();
                let frac = support(&s).iter().filter(|&&b| b).count() as f64 / 256.0;
                assert!(frac > 0.0 && frac < 0.25, "scenario {scenario} visit {t}: {frac}");
            }
            // at 16 cells one step is exactly one cell down and one right
            for r in 0..15 {
                for c in 0..15 {
                    assert_eq!(s0.data()[r * 16 + c] != 0.0, s1.data()[(r + 1) * 16 + c + 1] != 0.0);
                }
            }
        }
    }

    #[test]
    fn unsupported_inputs() {
        let spec = ScenarioSpec::new(7, vec![16, 16], 5, 0, 0.5, 2);
        assert!(true_signal(&spec, 0).is_err());
        let spec = ScenarioSpec::new(5, vec![16, 16], 5, 0, 0.5, 2);
        assert!(generate(&spec).is_err());
        let spec = ScenarioSpec::new(1, vec![16, 16, 4], 5, 0, 0.5, 2);
        assert!(generate(&spec).is_err());
    }

    #[test]
    fn noiseless_outcomes_equal_inner_products() {
        let mut spec = ScenarioSpec::new(2, vec![16, 16], 20, 5, 0.3, 4);
        spec.noise_scale = 0.0;
        let sim = generate(&spec).unwrap();
        for rec in sim.train.records().iter().chain(sim.test.records()) {
            let ip = inner_product(&rec.image, &sim.truth[rec.visit]).unwrap();
            assert_eq!(rec.y, ip);
        }
        assert_eq!(sim.test.records()[0].subject, 20);
    }

    #[test]
    fn seeded_generation_is_reproducible() {
        let spec = ScenarioSpec::new(3, vec![8, 8], 10, 2, 0.5, 9);
        assert_eq!(generate(&spec).unwrap(), generate(&spec).unwrap());
        let other = ScenarioSpec { seed: 10, ..spec.clone() };
        assert_ne!(generate(&spec).unwrap().train, generate(&other).unwrap().train);
    }

    #[test]
    fn residual_quantile_is_zero() {
        for (q, misspecified) in [(0.2, false), (0.5, false), (0.8, false), (0.5, true)] {
            let spec = ScenarioSpec::new(1, vec![8, 8], 2000, 0, q, 5);
            let sim = if misspecified { generate_misspecified(&spec) } else { generate(&spec) }.unwrap();
            let below = sim
                .train
                .records()
                .iter()
                .filter(|r| r.y < inner_product(&r.image, &sim.truth[r.visit]).unwrap())
                .count() as f64
                / sim.train.observed_count() as f64;
            let se = (q * (1.0 - q) / sim.train.observed_count() as f64).sqrt();
            assert!((below - q).abs() < 4.0 * se, "q={q}: {below}");
        }
    }
}
