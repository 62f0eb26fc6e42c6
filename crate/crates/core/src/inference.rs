//! Posterior summaries: simultaneous and pointwise bands, quantile prediction, DIC, Geweke.

use serde::{Deserialize, Serialize};

use crate::chain::ChainOutput;
use crate::dist::ald_log_density;
use crate::error::{Error, Result};
use crate::model::Dataset;
use crate::tensor::{dot, DenseTensor};

/// Mdev bands need at least this many draws.
pub const MIN_MDEV_DRAWS: usize = 20;

/// Per-cell bands and the cells whose band excludes zero.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SelectionMap {
    pub visit: usize,
    pub estimate: DenseTensor,
    pub lower: DenseTensor,
    pub upper: DenseTensor,
    pub selected: Vec<bool>,
}

impl SelectionMap {
    pub fn selected_count(&self) -> usize {
        self.selected.iter().filter(|&&s| s).count()
    }

    pub fn selected_tensor(&self) -> DenseTensor {
        let data = self.selected.iter().map(|&s| if s { 1.0 } else { 0.0 }).collect();
        DenseTensor::new(self.estimate.dims().to_vec(), data).expect("dims already validated")
    }
}

/// Type-7 sample quantile of sorted data.
pub fn quantile_sorted(sorted: &[f64], p: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return sorted[0];
    }
    let h = (n - 1) as f64 * p;
    let lo = h.floor() as usize;
    let hi = (lo + 1).min(n - 1);
    sorted[lo] + (h - lo as f64) * (sorted[hi] - sorted[lo])
}

struct CellSummary {
    mean: Vec<f64>,
    lo: Vec<f64>,
    hi: Vec<f64>,
}

fn summarize_cells(chain: &ChainOutput, visit: usize, alpha: f64) -> Result<CellSummary> {
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::invalid(format!("alpha must lie in (0, 1), got {alpha}")));
    }
    if visit >= chain.n_visits() {
        return Err(Error::IndexOutOfRange {
            what: "visit",
            index: visit,
            limit: chain.n_visits(),
        });
    }
    let (k, j) = (chain.n_draws, chain.n_cells());
    if k == 0 {
        return Err(Error::TooFewDraws { needed: 1, have: 0 });
    }
    let draws = &chain.coefficients[visit];
    let mut col = vec![0.0; k];
    let mut s = CellSummary {
        mean: vec![0.0; j],
        lo: vec![0.0; j],
        hi: vec![0.0; j],
    };
    for cell in 0..j {
        for (d, c) in col.iter_mut().enumerate() {
            *c = draws[d * j + cell];
        }
        s.mean[cell] = col.iter().sum::<f64>() / k as f64;
        col.sort_by(f64::total_cmp);
        s.lo[cell] = quantile_sorted(&col, alpha / 2.0);
        s.hi[cell] = quantile_sorted(&col, 1.0 - alpha / 2.0);
    }
    Ok(s)
}

fn in_mask(chain: &ChainOutput, cell: usize) -> bool {
    chain.mask.as_ref().is_none_or(|m| m.data()[cell] != 0.0)
}

fn build_map(chain: &ChainOutput, visit: usize, mean: Vec<f64>, lower: Vec<f64>, upper: Vec<f64>) -> Result<SelectionMap> {
    let selected = (0..mean.len())
        .map(|c| in_mask(chain, c) && (lower[c] > 0.0 || upper[c] < 0.0))
        .collect();
    Ok(SelectionMap {
        visit,
        estimate: DenseTensor::new(chain.dims.clone(), mean)?,
        lower: DenseTensor::new(chain.dims.clone(), lower)?,
        upper: DenseTensor::new(chain.dims.clone(), upper)?,
        selected,
    })
}

/// Simultaneous bands from the maximal deviation of pointwise quantiles around the posterior mean.
pub fn mdev_bands(chain: &ChainOutput, visit: usize, alpha: f64) -> Result<SelectionMap> {
    if chain.n_draws < MIN_MDEV_DRAWS {
        return Err(Error::TooFewDraws {
            needed: MIN_MDEV_DRAWS,
            have: chain.n_draws,
        });
    }
    let s = summarize_cells(chain, visit, alpha)?;
    let (mut dev_lo, mut dev_hi) = (0.0f64, 0.0f64);
    for cell in 0..s.mean.len() {
        if in_mask(chain, cell) {
            dev_lo = dev_lo.max(s.mean[cell] - s.lo[cell]);
            dev_hi = dev_hi.max(s.hi[cell] - s.mean[cell]);
        }
    }
    let lower = s.mean.iter().map(|m| m - dev_lo).collect();
    let upper = s.mean.iter().map(|m| m + dev_hi).collect();
    build_map(chain, visit, s.mean, lower, upper)
}

/// Equal-tailed per-cell intervals.
pub fn pointwise_bands(chain: &ChainOutput, visit: usize, alpha: f64) -> Result<SelectionMap> {
    let s = summarize_cells(chain, visit, alpha)?;
    build_map(chain, visit, s.mean, s.lo, s.hi)
}

struct PosteriorMeans {
    b0: f64,
    b1: f64,
    sigma: f64,
    b0i: Vec<f64>,
    eta: Vec<f64>,
    coef: Vec<Vec<f64>>,
}

fn posterior_means(chain: &ChainOutput) -> Result<PosteriorMeans> {
    let k = chain.n_draws;
    if k == 0 {
        return Err(Error::TooFewDraws { needed: 1, have: 0 });
    }
    let mean = |v: Vec<f64>| v.iter().sum::<f64>() / k as f64;
    let column_means = |block: &[f64], width: usize| {
        let mut acc = vec![0.0; width];
        for d in 0..k {
            for (a, v) in acc.iter_mut().zip(&block[d * width..(d + 1) * width]) {
                *a += v;
            }
        }
        acc.into_iter().map(|a| a / k as f64).collect::<Vec<_>>()
    };
    Ok(PosteriorMeans {
        b0: mean(chain.scalar("b0")?),
        b1: mean(chain.scalar("b1")?),
        sigma: mean(chain.scalar("sigma")?),
        b0i: column_means(&chain.b0i, chain.n_subjects()),
        eta: column_means(&chain.eta, chain.covariate_count()),
        coef: chain.coefficients.iter().map(|c| column_means(c, chain.n_cells())).collect(),
    })
}

fn check_compatible(chain: &ChainOutput, data: &Dataset) -> Result<()> {
    if data.dims() != chain.dims.as_slice() {
        return Err(Error::ShapeMismatch {
            expected: chain.dims.clone(),
            actual: data.dims().to_vec(),
        });
    }
    if data.n_visits() > chain.n_visits() {
        return Err(Error::invalid(format!(
            "data has {} visits but the chain has {}",
            data.n_visits(),
            chain.n_visits()
        )));
    }
    if data.covariate_count() != chain.covariate_count() {
        return Err(Error::invalid(format!(
            "data has {} covariates but the chain has {}",
            data.covariate_count(),
            chain.covariate_count()
        )));
    }
    Ok(())
}

fn subject_effect(chain: &ChainOutput, b0i: &[f64], subject: usize) -> f64 {
    if chain.train_subjects.get(subject).copied().unwrap_or(false) {
        b0i[subject]
    } else {
        0.0
    }
}

/// Posterior-mean q-quantile of each record (in dataset order), without the `theta nu` term.
/// Subjects unseen in training get `b0_i = 0`.
pub fn predict_quantile(chain: &ChainOutput, data: &Dataset) -> Result<Vec<f64>> {
    check_compatible(chain, data)?;
    let pm = posterior_means(chain)?;
    Ok(data
        .records()
        .iter()
        .map(|rec| {
            let z = &data.covariates()[rec.subject];
            pm.b0
                + subject_effect(chain, &pm.b0i, rec.subject)
                + pm.b1 * rec.time
                + dot(z, &pm.eta)
                + dot(rec.image.data(), &pm.coef[rec.visit])
        })
        .collect())
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Dic {
    pub dic: f64,
    pub mean_deviance: f64,
    pub deviance_at_mean: f64,
    pub p_d: f64,
}

/// DIC with the ALD deviance `-2 sum ln f(y | mu, sigma, q)`, the augmentation integrated out.
pub fn dic(chain: &ChainOutput, data: &Dataset) -> Result<Dic> {
    check_compatible(chain, data)?;
    let q = chain.manifest.hyper.q;
    let sigma = chain.scalar("sigma")?;
    let b0 = chain.scalar("b0")?;
    let b1 = chain.scalar("b1")?;
    let mut total = 0.0;
    for k in 0..chain.n_draws {
        let b0i = chain.b0i_draw(k);
        let eta = chain.eta_draw(k);
        let mut ll = 0.0;
        for rec in data.records() {
            let z = &data.covariates()[rec.subject];
            let mu = b0[k]
                + subject_effect(chain, b0i, rec.subject)
                + b1[k] * rec.time
                + dot(z, eta)
                + dot(rec.image.data(), chain.coefficient_draw(rec.visit, k)?);
            ll += ald_log_density(rec.y, mu, sigma[k], q);
        }
        total += -2.0 * ll;
    }
    let mean_deviance = total / chain.n_draws as f64;
    let pm = posterior_means(chain)?;
    let mu_bar = predict_quantile(chain, data)?;
    let deviance_at_mean = -2.0
        * data
            .records()
            .iter()
            .zip(&mu_bar)
            .map(|(rec, &mu)| ald_log_density(rec.y, mu, pm.sigma, q))
            .sum::<f64>();
    let p_d = mean_deviance - deviance_at_mean;
    Ok(Dic {
        dic: mean_deviance + p_d,
        mean_deviance,
        deviance_at_mean,
        p_d,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GewekeReport {
    pub names: Vec<String>,
    /// `None` where both segments have zero variance or are too short.
    pub z: Vec<Option<f64>>,
    pub pass_fraction: f64,
}

/// Batch-means variance of the segment mean, with `ceil(sqrt(n))` batches.
fn batch_mean_variance(x: &[f64]) -> Option<f64> {
    let n = x.len();
    let batches = (n as f64).sqrt().ceil() as usize;
    let size = n / batches.max(1);
    if batches < 2 || size == 0 {
        return None;
    }
    let means: Vec<f64> = (0..batches)
        .map(|b| x[b * size..(b + 1) * size].iter().sum::<f64>() / size as f64)
        .collect();
    let m = means.iter().sum::<f64>() / batches as f64;
    let var = means.iter().map(|v| (v - m) * (v - m)).sum::<f64>() / (batches - 1) as f64;
    Some(var / batches as f64)
}

/// Geweke z-score comparing the first 10% with the last 50% of a trace.
pub fn geweke_z(trace: &[f64]) -> Option<f64> {
    let n = trace.len();
    let (na, nb) = (n / 10, n / 2);
    let (a, b) = (&trace[..na], &trace[n - nb..]);
    if na < 4 || nb < 4 {
        return None;
    }
    let va = batch_mean_variance(a)?;
    let vb = batch_mean_variance(b)?;
    let denom = (va + vb).sqrt();
    if !(denom > 0.0) {
        return None;
    }
    let ma = a.iter().sum::<f64>() / na as f64;
    let mb = b.iter().sum::<f64>() / nb as f64;
    Some((ma - mb) / denom)
}

pub fn geweke_series(names: Vec<String>, traces: &[Vec<f64>]) -> GewekeReport {
    let z: Vec<Option<f64>> = traces.iter().map(|t| geweke_z(t)).collect();
    let defined: Vec<f64> = z.iter().flatten().copied().collect();
    let pass = defined.iter().filter(|v| v.abs() < 1.96).count();
    GewekeReport {
        names,
        z,
        pass_fraction: if defined.is_empty() {
            f64::NAN
        } else {
            pass as f64 / defined.len() as f64
        },
    }
}

/// Geweke scores for every stored scalar, `eta` entry, and coefficient cell.
pub fn geweke(chain: &ChainOutput) -> Result<GewekeReport> {
    let k = chain.n_draws;
    let mut names = Vec::new();
    let mut traces = Vec::new();
    for name in &chain.scalar_names {
        names.push(name.clone());
        traces.push(chain.scalar(name)?);
    }
    let p = chain.covariate_count();
    for a in 0..p {
        names.push(format!("eta{}", a + 1));
        traces.push((0..k).map(|d| chain.eta[d * p + a]).collect());
    }
    let j = chain.n_cells();
    for (t, block) in chain.coefficients.iter().enumerate() {
        for cell in 0..j {
            if !in_mask(chain, cell) {
                continue;
            }
            names.push(format!("gamma_v{}_c{cell}", t + 1));
            traces.push((0..k).map(|d| block[d * j + cell]).collect());
        }
    }
    Ok(geweke_series(names, &traces))
}
