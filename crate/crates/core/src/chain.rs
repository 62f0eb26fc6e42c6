//! Stored posterior draws of one MCMC chain.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{Hyperparams, Variant};
use crate::tensor::DenseTensor;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SamplerConfig {
    pub iterations: usize,
    pub burn_in: usize,
    pub thin: usize,
    pub seed: u64,
    pub variant: Variant,
    pub rank_b0: usize,
    pub rank_bt: usize,
}

impl SamplerConfig {
    pub fn new(iterations: usize, burn_in: usize, seed: u64, variant: Variant, rank_b0: usize, rank_bt: usize) -> Self {
        Self {
            iterations,
            burn_in,
            thin: 1,
            seed,
            variant,
            rank_b0,
            rank_bt,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.burn_in >= self.iterations {
            return Err(Error::invalid(format!(
                "burn-in ({}) must be smaller than iterations ({})",
                self.burn_in, self.iterations
            )));
        }
        if self.thin == 0 {
            return Err(Error::invalid("thin must be at least 1"));
        }
        if self.stored_draws() == 0 {
            return Err(Error::invalid("thinning leaves no stored draws"));
        }
        if self.rank_b0 == 0 || self.rank_bt == 0 {
            return Err(Error::invalid("ranks must be at least 1"));
        }
        Ok(())
    }

    /// Number of stored draws, `(iterations - burn_in) / thin`.
    pub fn stored_draws(&self) -> usize {
        (self.iterations - self.burn_in) / self.thin
    }
}

/// Everything needed to re-run the chain given the dataset.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Manifest {
    pub config: SamplerConfig,
    pub hyper: Hyperparams,
    /// Substream index; chain `c` of a multi-chain run uses stream `c`.
    pub chain: u64,
    pub version: String,
    pub data_path: Option<String>,
    /// Wall-clock seconds; left empty unless explicitly recorded so archives stay reproducible.
    pub timing_seconds: Option<f64>,
}

/// Post-burn-in draws. Per-draw blocks are stored row-major: draw `k` of a
/// block with `n` values per draw occupies `[k * n, (k + 1) * n)`.
#[derive(Clone, Debug, PartialEq)]
pub struct ChainOutput {
    pub manifest: Manifest,
    pub dims: Vec<usize>,
    pub n_draws: usize,
    /// `coefficients[t]`: materialized `B0 + B_t` at every draw.
    pub coefficients: Vec<Vec<f64>>,
    pub scalar_names: Vec<String>,
    pub scalars: Vec<f64>,
    pub b0i: Vec<f64>,
    pub eta: Vec<f64>,
    /// Inclusion flags of `B_t` per visit, ordered `[r][j][k]`; absent without spike-and-slab.
    pub flags: Option<Vec<Vec<u8>>>,
    /// Subjects with at least one training record.
    pub train_subjects: Vec<bool>,
    pub mask: Option<DenseTensor>,
}

impl ChainOutput {
    pub fn n_visits(&self) -> usize {
        self.coefficients.len()
    }

    pub fn n_cells(&self) -> usize {
        self.dims.iter().product()
    }

    pub fn n_subjects(&self) -> usize {
        self.train_subjects.len()
    }

    pub fn covariate_count(&self) -> usize {
        if self.n_draws == 0 {
            0
        } else {
            self.eta.len() / self.n_draws
        }
    }

    pub fn coefficient_draw(&self, visit: usize, k: usize) -> Result<&[f64]> {
        let j = self.n_cells();
        let block = self.coefficients.get(visit).ok_or(Error::IndexOutOfRange {
            what: "visit",
            index: visit,
            limit: self.n_visits(),
        })?;
        if k >= self.n_draws {
            return Err(Error::IndexOutOfRange {
                what: "draw",
                index: k,
                limit: self.n_draws,
            });
        }
        Ok(&block[k * j..(k + 1) * j])
    }

    /// Trace of one named scalar column.
    pub fn scalar(&self, name: &str) -> Result<Vec<f64>> {
        let col = self
            .scalar_names
            .iter()
            .position(|n| n == name)
            .ok_or_else(|| Error::invalid(format!("no scalar column named {name:?}")))?;
        let width = self.scalar_names.len();
        Ok((0..self.n_draws).map(|k| self.scalars[k * width + col]).collect())
    }

    pub fn b0i_draw(&self, k: usize) -> &[f64] {
        let n = self.n_subjects();
        &self.b0i[k * n..(k + 1) * n]
    }

    pub fn eta_draw(&self, k: usize) -> &[f64] {
        let p = self.covariate_count();
        &self.eta[k * p..(k + 1) * p]
    }

    /// Posterior mean of `B0 + B_t` over all draws.
    pub fn posterior_mean(&self, visit: usize) -> Result<DenseTensor> {
        if self.n_draws == 0 {
            return Err(Error::TooFewDraws { needed: 1, have: 0 });
        }
        let mut acc = vec![0.0; self.n_cells()];
        for k in 0..self.n_draws {
            for (a, v) in acc.iter_mut().zip(self.coefficient_draw(visit, k)?) {
                *a += v;
            }
        }
        let n = self.n_draws as f64;
        DenseTensor::new(self.dims.clone(), acc.into_iter().map(|a| a / n).collect())
    }

    /// Posterior inclusion frequency of each `B_t` flag at visit `t`.
    pub fn inclusion_rates(&self, visit: usize) -> Option<Vec<f64>> {
        let flags = self.flags.as_ref()?.get(visit)?;
        if self.n_draws == 0 {
            return None;
        }
        let width = flags.len() / self.n_draws;
        let mut rates = vec![0.0; width];
        for k in 0..self.n_draws {
            for (r, &f) in rates.iter_mut().zip(&flags[k * width..(k + 1) * width]) {
                *r += f as f64;
            }
        }
        Some(rates.into_iter().map(|r| r / self.n_draws as f64).collect())
    }

    /// Checks that every stored block has a length consistent with `n_draws`.
    pub fn validate(&self) -> Result<()> {
        let bad = |what: &str| Err(Error::invalid(format!("chain output is inconsistent: {what}")));
        let k = self.n_draws;
        if self.coefficients.iter().any(|c| c.len() != k * self.n_cells()) {
            return bad("coefficient block length");
        }
        if self.scalars.len() != k * self.scalar_names.len() {
            return bad("scalar table length");
        }
        if self.b0i.len() != k * self.n_subjects() {
            return bad("b0i block length");
        }
        if k > 0 && self.eta.len() % k != 0 {
            return bad("eta block length");
        }
        if let Some(flags) = &self.flags {
            if flags.len() != self.n_visits() || flags.iter().any(|f| k > 0 && f.len() % k != 0) {
                return bad("flag blocks");
            }
        }
        if let Some(mask) = &self.mask {
            if mask.dims() != self.dims.as_slice() {
                return bad("mask dims");
            }
        }
        Ok(())
    }
}
