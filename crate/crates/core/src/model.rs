//! Data, hyperparameters, and the full latent state of the sampler.
//!
//! The quantile model for subject `i` at visit `t` is
//!
//! ```text
//! Q_q(y_it) = b0 + b0_i + b1 * T_it + z_i' eta + <X_it, B0> + <X_it, B_t>
//! ```
//!
//! with asymmetric-Laplace errors written as the mixture
//! `theta * nu_it + rho * sqrt(sigma * nu_it) * u_it`, `nu_it = sigma * m_it`,
//! `m_it ~ Exp(1)`, `u_it ~ N(0, 1)`.
//!
//! Visits are 0-based in this API (`0..n_visits`); files and the CLI use 1-based labels.

use serde::{Deserialize, Serialize};

use crate::dist::{self, RngStream};
use crate::error::{Error, Result};
use crate::tensor::{inner_product, materialize, DenseTensor, ParafacCoef};

/// `(theta, rho)` of the exponential–normal mixture at quantile level `q`.
pub fn theta_rho(q: f64) -> Result<(f64, f64)> {
    if !(q > 0.0 && q < 1.0) {
        return Err(Error::invalid(format!("quantile level must lie in (0, 1), got {q}")));
    }
    let theta = (1.0 - 2.0 * q) / (q * (1.0 - q));
    let rho = (2.0 / (q * (1.0 - q))).sqrt();
    Ok((theta, rho))
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Record {
    pub subject: usize,
    pub visit: usize,
    /// Time from baseline.
    pub time: f64,
    pub y: f64,
    pub image: DenseTensor,
}

/// Longitudinal records, sorted by `(subject, visit)`. A missing visit simply has no record.
#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    n_subjects: usize,
    n_visits: usize,
    dims: Vec<usize>,
    records: Vec<Record>,
    covariates: Vec<Vec<f64>>,
    index: Vec<Option<usize>>,
}

impl Dataset {
    /// `covariates` is either empty (no `z`) or has one row per subject, all of equal length.
    pub fn new(n_subjects: usize, n_visits: usize, mut records: Vec<Record>, covariates: Vec<Vec<f64>>) -> Result<Self> {
        if n_subjects == 0 || n_visits == 0 {
            return Err(Error::invalid("dataset needs at least one subject and one visit"));
        }
        let dims = records
            .first()
            .map(|r| r.image.dims().to_vec())
            .ok_or_else(|| Error::invalid("dataset has no records"))?;
        let covariates = if covariates.is_empty() {
            vec![Vec::new(); n_subjects]
        } else {
            covariates
        };
        if covariates.len() != n_subjects {
            return Err(Error::invalid(format!(
                "covariate rows {} != subject count {n_subjects}",
                covariates.len()
            )));
        }
        let p = covariates[0].len();
        if covariates.iter().any(|z| z.len() != p) {
            return Err(Error::invalid("covariate rows have unequal lengths"));
        }
        records.sort_by_key(|r| (r.subject, r.visit));
        let mut index = vec![None; n_subjects * n_visits];
        for (k, r) in records.iter().enumerate() {
            if r.subject >= n_subjects {
                return Err(Error::IndexOutOfRange {
                    what: "subject",
                    index: r.subject,
                    limit: n_subjects,
                });
            }
            if r.visit >= n_visits {
                return Err(Error::IndexOutOfRange {
                    what: "visit",
                    index: r.visit,
                    limit: n_visits,
                });
            }
            if r.image.dims() != dims.as_slice() {
                return Err(Error::ShapeMismatch {
                    expected: dims.clone(),
                    actual: r.image.dims().to_vec(),
                });
            }
            if !r.y.is_finite() || !r.time.is_finite() {
                return Err(Error::invalid(format!(
                    "non-finite outcome or time for subject {}, visit {}",
                    r.subject, r.visit
                )));
            }
            let slot = &mut index[r.subject * n_visits + r.visit];
            if slot.is_some() {
                return Err(Error::invalid(format!(
                    "duplicate record for subject {}, visit {}",
                    r.subject, r.visit
                )));
            }
            *slot = Some(k);
        }
        Ok(Self {
            n_subjects,
            n_visits,
            dims,
            records,
            covariates,
            index,
        })
    }

    pub fn n_subjects(&self) -> usize {
        self.n_subjects
    }

    pub fn n_visits(&self) -> usize {
        self.n_visits
    }

    pub fn dims(&self) -> &[usize] {
        &self.dims
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn covariates(&self) -> &[Vec<f64>] {
        &self.covariates
    }

    pub fn covariate_count(&self) -> usize {
        self.covariates.first().map_or(0, Vec::len)
    }

    pub fn is_observed(&self, subject: usize, visit: usize) -> bool {
        self.record_index(subject, visit).is_some()
    }

    pub fn record_index(&self, subject: usize, visit: usize) -> Option<usize> {
        if subject >= self.n_subjects || visit >= self.n_visits {
            return None;
        }
        self.index[subject * self.n_visits + visit]
    }

    pub fn observed_count(&self) -> usize {
        self.records.len()
    }

    /// Zeroes every image cell where `mask` is zero.
    pub fn apply_mask(&mut self, mask: &DenseTensor) -> Result<()> {
        if mask.dims() != self.dims.as_slice() {
            return Err(Error::ShapeMismatch {
                expected: self.dims.clone(),
                actual: mask.dims().to_vec(),
            });
        }
        for r in &mut self.records {
            for (x, &m) in r.image.data_mut().iter_mut().zip(mask.data()) {
                if m == 0.0 {
                    *x = 0.0;
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Hyperparams {
    pub q: f64,
    /// Symmetric Dirichlet concentration on the B0 rank weights (`alpha_r = alpha`).
    pub alpha_b0: f64,
    /// Symmetric Dirichlet concentration on each visit's B_t rank weights.
    pub alpha_bt: f64,
    /// Draw alpha by griddy Gibbs each sweep; when false alpha stays fixed.
    pub griddy_alpha: bool,
    pub a_lambda: f64,
    pub b_lambda: f64,
    pub a_zeta: f64,
    pub b_zeta: f64,
    /// Spike location for the visit-specific local scales.
    pub spike: f64,
    pub n0: f64,
    pub s0: f64,
    pub prior_var_b0: f64,
    pub prior_var_b1: f64,
    pub prior_var_b0i: f64,
    pub prior_var_eta: f64,
}

impl Hyperparams {
    /// Defaults for a `order`-way image at quantile `q` with the given ranks.
    pub fn defaults(q: f64, rank_b0: usize, rank_bt: usize, order: usize) -> Self {
        let a_lambda = 3.0;
        Self {
            q,
            alpha_b0: 1.0 / rank_b0.max(1) as f64,
            alpha_bt: 1.0 / rank_bt.max(1) as f64,
            griddy_alpha: true,
            a_lambda,
            b_lambda: a_lambda.powf(1.0 / (2.0 * order as f64)),
            a_zeta: 1.0,
            b_zeta: 1.0,
            spike: 1e-4,
            n0: 1.0,
            s0: 1.0,
            prior_var_b0: 1.0,
            prior_var_b1: 1.0,
            prior_var_b0i: 1.0,
            prior_var_eta: 1.0,
        }
    }

    pub fn validate(&self) -> Result<()> {
        theta_rho(self.q)?;
        let positive = [
            ("alpha_b0", self.alpha_b0),
            ("alpha_bt", self.alpha_bt),
            ("a_lambda", self.a_lambda),
            ("b_lambda", self.b_lambda),
            ("a_zeta", self.a_zeta),
            ("b_zeta", self.b_zeta),
            ("spike", self.spike),
            ("n0", self.n0),
            ("s0", self.s0),
            ("prior_var_b0", self.prior_var_b0),
            ("prior_var_b1", self.prior_var_b1),
            ("prior_var_b0i", self.prior_var_b0i),
            ("prior_var_eta", self.prior_var_eta),
        ];
        for (name, v) in positive {
            if !(v > 0.0) || !v.is_finite() {
                return Err(Error::invalid(format!("{name} must be positive and finite, got {v}")));
            }
        }
        Ok(())
    }

    /// Gamma prior `(a_tau, b_tau)` on the global scale, linked to the Dirichlet
    /// concentration as `a_tau = R alpha`, `b_tau = alpha R^(1/D)`.
    pub fn tau_prior(rank: usize, alpha: f64, order: usize) -> (f64, f64) {
        let r = rank as f64;
        (r * alpha, alpha * r.powf(1.0 / order as f64))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Variant {
    /// Shared B0 with shrinkage prior plus per-visit B_t with spike-and-slab scales.
    Bltqr,
    /// B0 fixed at zero; per-visit B_t under the shrinkage prior.
    Csb1,
    /// B_t fixed at zero; a single pooled B0.
    Csb2,
}

impl Variant {
    pub fn has_b0(self) -> bool {
        !matches!(self, Variant::Csb1)
    }

    pub fn has_bt(self) -> bool {
        !matches!(self, Variant::Csb2)
    }

    pub fn bt_uses_selection(self) -> bool {
        matches!(self, Variant::Bltqr)
    }

    pub fn name(self) -> &'static str {
        match self {
            Variant::Bltqr => "bltqr",
            Variant::Csb1 => "csb1",
            Variant::Csb2 => "csb2",
        }
    }
}

impl std::str::FromStr for Variant {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "bltqr" => Ok(Variant::Bltqr),
            "csb1" => Ok(Variant::Csb1),
            "csb2" => Ok(Variant::Csb2),
            other => Err(Error::invalid(format!("unknown variant {other:?}"))),
        }
    }
}

/// Inclusion flags `pi[r][j][k]` and their probabilities `zeta[r][j]`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SpikeSlab {
    pub flags: Vec<Vec<Vec<bool>>>,
    pub probs: Vec<Vec<f64>>,
}

/// One PARAFAC coefficient with its multiway shrinkage hierarchy.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CoefBlock {
    pub coef: ParafacCoef,
    /// Local scales `w[r][j][k]`.
    pub scales: Vec<Vec<Vec<f64>>>,
    /// Margin rates `lambda[r][j]`.
    pub rates: Vec<Vec<f64>>,
    /// Rank weights `phi`, summing to one.
    pub weights: Vec<f64>,
    pub tau: f64,
    pub alpha: f64,
    pub selection: Option<SpikeSlab>,
}

impl CoefBlock {
    fn initial(dims: &[usize], rank: usize, alpha: f64, hyper: &Hyperparams, selection: bool, rng: &mut RngStream) -> Result<Self> {
        let margins = (0..rank)
            .map(|_| {
                dims.iter()
                    .map(|&p| (0..p).map(|_| dist::normal(0.0, 0.1, rng)).collect::<Result<Vec<_>>>())
                    .collect::<Result<Vec<_>>>()
            })
            .collect::<Result<Vec<_>>>()?;
        let coef = ParafacCoef::new(dims.to_vec(), margins)?;
        let start_scale = if selection { hyper.spike } else { 1.0 };
        let scales = (0..rank).map(|_| dims.iter().map(|&p| vec![start_scale; p]).collect()).collect();
        let rates = vec![vec![hyper.a_lambda / hyper.b_lambda; dims.len()]; rank];
        let selection = selection.then(|| SpikeSlab {
            flags: (0..rank).map(|_| dims.iter().map(|&p| vec![false; p]).collect()).collect(),
            probs: vec![vec![hyper.a_zeta / (hyper.a_zeta + hyper.b_zeta); dims.len()]; rank],
        });
        Ok(Self {
            coef,
            scales,
            rates,
            weights: vec![1.0 / rank as f64; rank],
            tau: 1.0,
            alpha,
            selection,
        })
    }

    pub fn rank(&self) -> usize {
        self.coef.rank()
    }

    /// Checks positivity, weight normalization, and the spike coupling.
    pub fn check_invariants(&self, spike: f64) -> Result<()> {
        let fail = |m: String| Err(Error::Numerical(m));
        if !(self.tau > 0.0 && self.tau.is_finite()) {
            return fail(format!("tau = {}", self.tau));
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 || self.weights.iter().any(|&w| !(w >= 0.0)) {
            return fail(format!("rank weights {:?} do not form a probability vector", self.weights));
        }
        for (r, per_r) in self.scales.iter().enumerate() {
            for (j, per_j) in per_r.iter().enumerate() {
                let rate = self.rates[r][j];
                if !(rate > 0.0 && rate.is_finite()) {
                    return fail(format!("rate[{r}][{j}] = {rate}"));
                }
                for (k, &w) in per_j.iter().enumerate() {
                    if !(w > 0.0 && w.is_finite()) {
                        return fail(format!("scale[{r}][{j}][{k}] = {w}"));
                    }
                    if let Some(sel) = &self.selection {
                        if sel.flags[r][j][k] != (w != spike) {
                            return fail(format!("spike coupling broken at [{r}][{j}][{k}]: w = {w}"));
                        }
                    }
                }
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct McmcState {
    pub q: f64,
    pub theta: f64,
    pub rho: f64,
    pub sigma: f64,
    /// Mixing variables, indexed like `Dataset::records`.
    pub nu: Vec<f64>,
    pub b0: f64,
    pub b0i: Vec<f64>,
    pub b1: f64,
    pub eta: Vec<f64>,
    pub b0_block: Option<CoefBlock>,
    /// One block per visit; empty when B_t is fixed at zero.
    pub bt_blocks: Vec<CoefBlock>,
}

impl McmcState {
    /// Starting point: margins N(0, 0.01), sigma = nu = 1, all inclusion flags off, scalar effects 0.
    pub fn initialize(
        data: &Dataset,
        hyper: &Hyperparams,
        variant: Variant,
        rank_b0: usize,
        rank_bt: usize,
        rng: &mut RngStream,
    ) -> Result<Self> {
        hyper.validate()?;
        if rank_b0 == 0 || rank_bt == 0 {
            return Err(Error::invalid("ranks must be at least 1"));
        }
        let (theta, rho) = theta_rho(hyper.q)?;
        let dims = data.dims();
        let b0_block = if variant.has_b0() {
            Some(CoefBlock::initial(dims, rank_b0, hyper.alpha_b0, hyper, false, rng)?)
        } else {
            None
        };
        let bt_blocks = if variant.has_bt() {
            (0..data.n_visits())
                .map(|_| CoefBlock::initial(dims, rank_bt, hyper.alpha_bt, hyper, variant.bt_uses_selection(), rng))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        Ok(Self {
            q: hyper.q,
            theta,
            rho,
            sigma: 1.0,
            nu: vec![1.0; data.observed_count()],
            b0: 0.0,
            b0i: vec![0.0; data.n_subjects()],
            b1: 0.0,
            eta: vec![0.0; data.covariate_count()],
            b0_block,
            bt_blocks,
        })
    }

    /// `b0 + b0_i + b1 T_it + z_i' eta + <X_it, B0> + <X_it, B_t>`, plus `theta nu_it`
    /// when `include_theta_nu` is set. Computed from scratch via dense materialization.
    pub fn linear_predictor(&self, data: &Dataset, subject: usize, visit: usize, include_theta_nu: bool) -> Result<f64> {
        let k = data
            .record_index(subject, visit)
            .ok_or(Error::Unobserved { subject, visit })?;
        let rec = &data.records()[k];
        let z = &data.covariates()[subject];
        let mut mu = self.b0 + self.b0i[subject] + self.b1 * rec.time;
        mu += z.iter().zip(&self.eta).map(|(a, b)| a * b).sum::<f64>();
        if let Some(block) = &self.b0_block {
            mu += inner_product(&rec.image, &materialize(&block.coef)?)?;
        }
        if let Some(block) = self.bt_blocks.get(visit) {
            mu += inner_product(&rec.image, &materialize(&block.coef)?)?;
        }
        if include_theta_nu {
            mu += self.theta * self.nu[k];
        }
        Ok(mu)
    }

    /// Dense visit coefficient `B0 + B_t`.
    pub fn visit_coefficient(&self, dims: &[usize], visit: usize) -> Result<DenseTensor> {
        let mut out = DenseTensor::zeros(dims)?;
        if let Some(block) = &self.b0_block {
            out = out.add(&materialize(&block.coef)?)?;
        }
        if let Some(block) = self.bt_blocks.get(visit) {
            out = out.add(&materialize(&block.coef)?)?;
        }
        Ok(out)
    }

    pub fn check_invariants(&self, spike: f64) -> Result<()> {
        if !(self.sigma > 0.0 && self.sigma.is_finite()) {
            return Err(Error::Numerical(format!("sigma = {}", self.sigma)));
        }
        if let Some((k, v)) = self.nu.iter().enumerate().find(|(_, &v)| !(v > 0.0 && v.is_finite())) {
            return Err(Error::Numerical(format!("nu[{k}] = {v}")));
        }
        if let Some(b) = &self.b0_block {
            b.check_invariants(spike)?;
        }
        for b in &self.bt_blocks {
            b.check_invariants(spike)?;
        }
        Ok(())
    }
}
