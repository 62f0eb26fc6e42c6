use nalgebra::{DMatrix, DVector};

use crate::dist::{self, sample_gig, GigParams, RngStream};
use crate::error::{Error, Result};
use crate::model::{CoefBlock, Dataset, Hyperparams, McmcState, Variant};
use crate::special::{ln_gamma, log_bessel_k};
use crate::tensor::{design_vector_into, dot};

/// Smallest value the rank-weight intermediates may take; keeps `phi * tau` strictly positive.
const PSI_FLOOR: f64 = 1e-200;
/// Number of alpha values in the griddy-Gibbs grid.
const ALPHA_GRID: usize = 10;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Which {
    B0,
    Bt(usize),
}

/// Gibbs kernel over a fixed dataset, holding the current state and the
/// per-observation component contributions `<X_it, component_r>`.
pub struct Sampler<'a> {
    data: &'a Dataset,
    hyper: Hyperparams,
    variant: Variant,
    state: McmcState,
    rng: RngStream,
    /// `b0_parts[r][k]` for record `k`.
    b0_parts: Vec<Vec<f64>>,
    /// `bt_parts[r][k]`, taken from the block of record `k`'s own visit.
    bt_parts: Vec<Vec<f64>>,
    /// `z_i' eta` per subject.
    z_eta: Vec<f64>,
    visit_obs: Vec<Vec<usize>>,
    subject_obs: Vec<Vec<usize>>,
    scratch: Vec<f64>,
}

impl<'a> Sampler<'a> {
    pub fn new(data: &'a Dataset, hyper: Hyperparams, variant: Variant, state: McmcState, rng: RngStream) -> Result<Self> {
        hyper.validate()?;
        check_state_shape(data, variant, &state)?;
        let mut visit_obs = vec![Vec::new(); data.n_visits()];
        let mut subject_obs = vec![Vec::new(); data.n_subjects()];
        for (k, rec) in data.records().iter().enumerate() {
            visit_obs[rec.visit].push(k);
            subject_obs[rec.subject].push(k);
        }
        let mut s = Self {
            data,
            hyper,
            variant,
            state,
            rng,
            b0_parts: Vec::new(),
            bt_parts: Vec::new(),
            z_eta: Vec::new(),
            visit_obs,
            subject_obs,
            scratch: Vec::new(),
        };
        s.refresh_caches();
        Ok(s)
    }

    pub fn state(&self) -> &McmcState {
        &self.state
    }

    pub fn into_state(self) -> McmcState {
        self.state
    }

    pub fn variant(&self) -> Variant {
        self.variant
    }

    pub fn hyper(&self) -> &Hyperparams {
        &self.hyper
    }

    /// Replace the state (e.g. to freeze a configuration in tests) and rebuild caches.
    pub fn set_state(&mut self, state: McmcState) -> Result<()> {
        check_state_shape(self.data, self.variant, &state)?;
        self.state = state;
        self.refresh_caches();
        Ok(())
    }

    /// Recomputes every cached contribution from the margins.
    pub fn refresh_caches(&mut self) {
        let data = self.data;
        let dims = data.dims();
        let mut buf = vec![0.0; dims[0]];
        let contrib = |block: &CoefBlock, r: usize, x: &[f64], buf: &mut Vec<f64>| {
            let m = &block.coef.margins()[r];
            design_vector_into(x, dims, m, 0, buf);
            dot(buf, &m[0])
        };
        self.b0_parts = match &self.state.b0_block {
            Some(block) => (0..block.rank())
                .map(|r| data.records().iter().map(|rec| contrib(block, r, rec.image.data(), &mut buf)).collect())
                .collect(),
            None => Vec::new(),
        };
        let rank_bt = self.state.bt_blocks.first().map_or(0, CoefBlock::rank);
        self.bt_parts = (0..rank_bt)
            .map(|r| {
                data.records()
                    .iter()
                    .map(|rec| contrib(&self.state.bt_blocks[rec.visit], r, rec.image.data(), &mut buf))
                    .collect()
            })
            .collect();
        self.z_eta = data.covariates().iter().map(|z| dot(z, &self.state.eta)).collect();
    }

    /// Linear predictor of record `k` without the `theta nu` term.
    fn mean_of(&self, k: usize) -> f64 {
        let rec = &self.data.records()[k];
        let s = &self.state;
        let mut mu = s.b0 + s.b0i[rec.subject] + s.b1 * rec.time + self.z_eta[rec.subject];
        for part in &self.b0_parts {
            mu += part[k];
        }
        for part in &self.bt_parts {
            mu += part[k];
        }
        mu
    }

    /// `y - theta nu - mu` for record `k`.
    fn residual(&self, k: usize) -> f64 {
        self.data.records()[k].y - self.state.theta * self.state.nu[k] - self.mean_of(k)
    }

    /// Likelihood precision `1 / (rho^2 sigma nu)` of record `k`.
    fn weight(&self, k: usize) -> f64 {
        1.0 / (self.state.rho * self.state.rho * self.state.sigma * self.state.nu[k])
    }

    /// One full sweep in the fixed block order.
    pub fn sweep(&mut self) -> Result<()> {
        self.update_sigma()?;
        self.update_nu()?;
        self.update_b0()?;
        self.update_b0i()?;
        self.update_b1()?;
        if self.state.b0_block.is_some() {
            self.update_b0_global()?;
            self.update_b0_margins()?;
        }
        if !self.state.bt_blocks.is_empty() {
            for t in 0..self.state.bt_blocks.len() {
                self.update_bt_global(t)?;
            }
            for t in 0..self.state.bt_blocks.len() {
                if self.variant.bt_uses_selection() {
                    self.update_bt_inclusion_and_margins(t)?;
                } else {
                    self.update_bt_margins(t)?;
                }
            }
            if self.variant.bt_uses_selection() {
                for t in 0..self.state.bt_blocks.len() {
                    self.update_zeta(t)?;
                }
            }
        }
        self.update_eta()?;
        if cfg!(debug_assertions) {
            self.state.check_invariants(self.hyper.spike)?;
        }
        Ok(())
    }

    pub fn update_sigma(&mut self) -> Result<()> {
        let n = self.data.observed_count() as f64;
        let rho2 = self.state.rho * self.state.rho;
        let mut b = self.hyper.s0;
        for k in 0..self.data.observed_count() {
            let r = self.residual(k);
            let nu = self.state.nu[k];
            b += r * r / (rho2 * nu) + 2.0 * nu;
        }
        assert!(b > 0.0, "sigma rate must be positive");
        self.state.sigma = dist::inverse_gamma((self.hyper.n0 + 3.0 * n) / 2.0, b / 2.0, &mut self.rng)?;
        Ok(())
    }

    pub fn update_nu(&mut self) -> Result<()> {
        let (theta, rho, sigma) = (self.state.theta, self.state.rho, self.state.sigma);
        let rho2s = rho * rho * sigma;
        let psi = theta * theta / rho2s + 2.0 / sigma;
        for k in 0..self.data.observed_count() {
            let e = self.data.records()[k].y - self.mean_of(k);
            let p = GigParams::new(0.5, e * e / rho2s, psi)?;
            self.state.nu[k] = sample_gig(p, &mut self.rng)?;
        }
        Ok(())
    }

    /// Draws `b0`, every `b0_i`, `b1`, and `eta` in turn.
    pub fn update_scalars(&mut self) -> Result<()> {
        self.update_b0()?;
        self.update_b0i()?;
        self.update_b1()?;
        self.update_eta()
    }

    pub fn update_b0(&mut self) -> Result<()> {
        let mut prec = 1.0 / self.hyper.prior_var_b0;
        let mut lin = 0.0;
        for k in 0..self.data.observed_count() {
            let w = self.weight(k);
            prec += w;
            lin += w * (self.residual(k) + self.state.b0);
        }
        self.state.b0 = dist::normal(lin / prec, prec.sqrt().recip(), &mut self.rng)?;
        Ok(())
    }

    pub fn update_b0i(&mut self) -> Result<()> {
        for i in 0..self.data.n_subjects() {
            let mut prec = 1.0 / self.hyper.prior_var_b0i;
            let mut lin = 0.0;
            for &k in &self.subject_obs[i] {
                let w = self.weight(k);
                prec += w;
                lin += w * (self.residual(k) + self.state.b0i[i]);
            }
            self.state.b0i[i] = dist::normal(lin / prec, prec.sqrt().recip(), &mut self.rng)?;
        }
        Ok(())
    }

    pub fn update_b1(&mut self) -> Result<()> {
        let mut prec = 1.0 / self.hyper.prior_var_b1;
        let mut lin = 0.0;
        for k in 0..self.data.observed_count() {
            let time = self.data.records()[k].time;
            let w = self.weight(k);
            prec += w * time * time;
            lin += w * time * (self.residual(k) + self.state.b1 * time);
        }
        self.state.b1 = dist::normal(lin / prec, prec.sqrt().recip(), &mut self.rng)?;
        Ok(())
    }

    pub fn update_eta(&mut self) -> Result<()> {
        let p = self.data.covariate_count();
        if p == 0 {
            return Ok(());
        }
        let mut prec = DMatrix::<f64>::identity(p, p) / self.hyper.prior_var_eta;
        let mut lin = DVector::<f64>::zeros(p);
        for k in 0..self.data.observed_count() {
            let subject = self.data.records()[k].subject;
            let z = &self.data.covariates()[subject];
            let w = self.weight(k);
            let target = self.residual(k) + self.z_eta[subject];
            for a in 0..p {
                lin[a] += w * z[a] * target;
                for b in 0..=a {
                    prec[(a, b)] += w * z[a] * z[b];
                }
            }
        }
        symmetrize(&mut prec);
        let draw = draw_gaussian(prec, lin, &mut self.rng)?;
        self.state.eta = draw.iter().copied().collect();
        self.z_eta = self.data.covariates().iter().map(|z| dot(z, &self.state.eta)).collect();
        Ok(())
    }

    /// Local rates, local scales, then margins of B0, for `r` ascending then `j` ascending.
    pub fn update_b0_margins(&mut self) -> Result<()> {
        let Some(block) = &self.state.b0_block else {
            return Ok(());
        };
        let (rank, order) = (block.rank(), block.coef.order());
        let all: Vec<usize> = (0..self.data.observed_count()).collect();
        for r in 0..rank {
            for j in 0..order {
                self.update_rate_and_scales(Which::B0, r, j)?;
                self.draw_margin(Which::B0, r, j, &all)?;
            }
        }
        Ok(())
    }

    pub fn update_b0_global(&mut self) -> Result<()> {
        self.update_global(Which::B0)
    }

    pub fn update_bt_global(&mut self, t: usize) -> Result<()> {
        self.update_global(Which::Bt(t))
    }

    /// Shrinkage-prior margin updates for visit `t` (no inclusion flags).
    pub fn update_bt_margins(&mut self, t: usize) -> Result<()> {
        let block = self.bt_block(t)?;
        let (rank, order) = (block.rank(), block.coef.order());
        let obs = self.visit_obs[t].clone();
        for r in 0..rank {
            for j in 0..order {
                if block_has_selection(&self.state.bt_blocks[t]) {
                    self.update_slab_rate_and_scales(t, r, j)?;
                } else {
                    self.update_rate_and_scales(Which::Bt(t), r, j)?;
                }
                self.draw_margin(Which::Bt(t), r, j, &obs)?;
            }
        }
        Ok(())
    }

    /// For each `(r, j)` of visit `t`: inclusion move, rate and slab scales, then the margin.
    pub fn update_bt_inclusion_and_margins(&mut self, t: usize) -> Result<()> {
        let block = self.bt_block(t)?;
        let (rank, order) = (block.rank(), block.coef.order());
        let obs = self.visit_obs[t].clone();
        for r in 0..rank {
            for j in 0..order {
                self.inclusion_move(t, r, j)?;
                self.update_slab_rate_and_scales(t, r, j)?;
                self.draw_margin(Which::Bt(t), r, j, &obs)?;
            }
        }
        Ok(())
    }

    /// One add/delete/swap proposal for every `(r, j)` block of visit `t`.
    pub fn update_bt_inclusion(&mut self, t: usize) -> Result<()> {
        let block = self.bt_block(t)?;
        let (rank, order) = (block.rank(), block.coef.order());
        for r in 0..rank {
            for j in 0..order {
                self.inclusion_move(t, r, j)?;
            }
        }
        Ok(())
    }

    /// Rates and slab scales of visit `t` given the flags, without touching margins.
    pub fn update_bt_scales(&mut self, t: usize) -> Result<()> {
        let block = self.bt_block(t)?;
        let (rank, order) = (block.rank(), block.coef.order());
        for r in 0..rank {
            for j in 0..order {
                self.update_slab_rate_and_scales(t, r, j)?;
            }
        }
        Ok(())
    }

    /// Conjugate draw of B0 margin `(r, j)` alone, scales held fixed.
    pub fn draw_b0_margin(&mut self, r: usize, j: usize) -> Result<()> {
        if self.state.b0_block.is_none() {
            return Err(Error::invalid("variant has no B0 block"));
        }
        let all: Vec<usize> = (0..self.data.observed_count()).collect();
        self.draw_margin(Which::B0, r, j, &all)
    }

    /// Conjugate draw of margin `(r, j)` of visit `t` alone, scales held fixed.
    pub fn draw_bt_margin(&mut self, t: usize, r: usize, j: usize) -> Result<()> {
        self.bt_block(t)?;
        let obs = self.visit_obs[t].clone();
        self.draw_margin(Which::Bt(t), r, j, &obs)
    }

    /// Redraws only the slab scales of visit `t`; rates and flags stay fixed.
    pub fn refresh_slab_scales(&mut self, t: usize) -> Result<()> {
        let block = &mut self.state.bt_blocks[t];
        let Some(sel) = &block.selection else {
            return Ok(());
        };
        for r in 0..block.coef.rank() {
            let scale = block.weights[r] * block.tau;
            for j in 0..block.coef.order() {
                let rate = block.rates[r][j];
                for (k, &b) in block.coef.margin(r, j).iter().enumerate() {
                    if sel.flags[r][j][k] {
                        block.scales[r][j][k] = sample_gig(GigParams::new(0.5, b * b / scale, rate * rate)?, &mut self.rng)?;
                    }
                }
            }
        }
        Ok(())
    }

    pub fn update_zeta(&mut self, t: usize) -> Result<()> {
        let (a, b) = (self.hyper.a_zeta, self.hyper.b_zeta);
        let block = self
            .state
            .bt_blocks
            .get_mut(t)
            .ok_or(Error::IndexOutOfRange {
                what: "visit",
                index: t,
                limit: self.data.n_visits(),
            })?;
        let Some(sel) = block.selection.as_mut() else {
            return Ok(());
        };
        for (flags_r, probs_r) in sel.flags.iter().zip(sel.probs.iter_mut()) {
            for (flags, prob) in flags_r.iter().zip(probs_r.iter_mut()) {
                let on = flags.iter().filter(|&&f| f).count() as f64;
                let off = flags.len() as f64 - on;
                *prob = dist::beta(a + on, b + off, &mut self.rng)?;
            }
        }
        Ok(())
    }

    fn bt_block(&self, t: usize) -> Result<&CoefBlock> {
        self.state.bt_blocks.get(t).ok_or(Error::IndexOutOfRange {
            what: "visit",
            index: t,
            limit: self.state.bt_blocks.len(),
        })
    }

    fn block(&self, which: Which) -> &CoefBlock {
        match which {
            Which::B0 => self.state.b0_block.as_ref().expect("B0 block present"),
            Which::Bt(t) => &self.state.bt_blocks[t],
        }
    }

    fn block_mut(&mut self, which: Which) -> &mut CoefBlock {
        match which {
            Which::B0 => self.state.b0_block.as_mut().expect("B0 block present"),
            Which::Bt(t) => &mut self.state.bt_blocks[t],
        }
    }

    /// `lambda_jr ~ Ga(a + p_j, b + |beta|_1 / sqrt(phi tau))`, then every `w_jr,k ~ GIG(1/2, beta^2/(phi tau), lambda^2)`.
    fn update_rate_and_scales(&mut self, which: Which, r: usize, j: usize) -> Result<()> {
        let (a_l, b_l) = (self.hyper.a_lambda, self.hyper.b_lambda);
        let mut rng = std::mem::replace(&mut self.rng, RngStream::new(0));
        let out = (|| {
            let block = self.block_mut(which);
            let scale = block.weights[r] * block.tau;
            let margin = block.coef.margin(r, j);
            let l1: f64 = margin.iter().map(|b| b.abs()).sum();
            let rate = dist::gamma(a_l + margin.len() as f64, b_l + l1 / scale.sqrt(), &mut rng)?;
            block.rates[r][j] = rate;
            let draws = margin
                .iter()
                .map(|b| sample_gig(GigParams::new(0.5, b * b / scale, rate * rate)?, &mut rng))
                .collect::<Result<Vec<_>>>()?;
            block.scales[r][j] = draws;
            Ok(())
        })();
        self.rng = rng;
        out
    }

    /// Rate from its conditional given the flags (scales integrated out over slab
    /// entries), then slab scales from their GIG conditionals. Spike scales stay put.
    fn update_slab_rate_and_scales(&mut self, t: usize, r: usize, j: usize) -> Result<()> {
        let (a_l, b_l) = (self.hyper.a_lambda, self.hyper.b_lambda);
        let block = &mut self.state.bt_blocks[t];
        let Some(sel) = &block.selection else {
            return self.update_rate_and_scales(Which::Bt(t), r, j);
        };
        let scale = block.weights[r] * block.tau;
        let margin = block.coef.margin(r, j);
        let flags = &sel.flags[r][j];
        let (mut n_on, mut l1) = (0.0, 0.0);
        for (b, &on) in margin.iter().zip(flags) {
            if on {
                n_on += 1.0;
                l1 += b.abs();
            }
        }
        let rate = dist::gamma(a_l + n_on, b_l + l1 / scale.sqrt(), &mut self.rng)?;
        block.rates[r][j] = rate;
        for k in 0..margin.len() {
            if flags[k] {
                let b = margin[k];
                block.scales[r][j][k] = sample_gig(GigParams::new(0.5, b * b / scale, rate * rate)?, &mut self.rng)?;
            }
        }
        Ok(())
    }

    /// Joint Metropolis–Hastings move on `(pi, w)` for block `(t, r, j)`.
    fn inclusion_move(&mut self, t: usize, r: usize, j: usize) -> Result<()> {
        let spike = self.hyper.spike;
        let block = &mut self.state.bt_blocks[t];
        let scale = block.weights[r] * block.tau;
        let rate = block.rates[r][j];
        let Some(sel) = block.selection.as_mut() else {
            return Ok(());
        };
        let zeta = sel.probs[r][j];
        let margin = block.coef.margin(r, j);
        let flags = &mut sel.flags[r][j];
        let scales = &mut block.scales[r][j];
        let p = flags.len();
        let n_on = flags.iter().filter(|&&f| f).count();
        let n_off = p - n_on;
        let moves = feasible_moves(n_on, p);
        if moves.is_empty() {
            return Ok(());
        }
        let log_zeta_odds = zeta.ln() - (1.0 - zeta).ln();
        let log_normal = |x: f64, var: f64| -0.5 * (x * x / var + var.ln());
        let pick = |rng: &mut RngStream, want: bool, count: usize, flags: &[bool]| {
            let target = rng.random_range_usize(count);
            flags.iter().enumerate().filter(|(_, &f)| f == want).nth(target).map(|(k, _)| k).expect("count matches")
        };
        let mv = moves[self.rng.random_range_usize(moves.len())];
        match mv {
            Move::Add => {
                let k = pick(&mut self.rng, false, n_off, flags);
                let w_new = dist::exponential(rate * rate / 2.0, &mut self.rng)?;
                let x = margin[k];
                let mut log_ratio = log_normal(x, scale * w_new) - log_normal(x, scale * spike) + log_zeta_odds;
                let moves_after = feasible_moves(n_on + 1, p).len() as f64;
                log_ratio += (moves.len() as f64).ln() + (n_off as f64).ln() - moves_after.ln() - ((n_on + 1) as f64).ln();
                if self.rng.random_unit().ln() < log_ratio {
                    flags[k] = true;
                    scales[k] = slab_scale(w_new, spike);
                }
            }
            Move::Delete => {
                let k = pick(&mut self.rng, true, n_on, flags);
                let x = margin[k];
                let mut log_ratio = log_normal(x, scale * spike) - log_normal(x, scale * scales[k]) - log_zeta_odds;
                let moves_after = feasible_moves(n_on - 1, p).len() as f64;
                log_ratio += (moves.len() as f64).ln() + (n_on as f64).ln() - moves_after.ln() - ((n_off + 1) as f64).ln();
                if self.rng.random_unit().ln() < log_ratio {
                    flags[k] = false;
                    scales[k] = spike;
                }
            }
            Move::Swap => {
                let add = pick(&mut self.rng, false, n_off, flags);
                let del = pick(&mut self.rng, true, n_on, flags);
                let w_new = dist::exponential(rate * rate / 2.0, &mut self.rng)?;
                let (xa, xd) = (margin[add], margin[del]);
                let log_ratio = log_normal(xa, scale * w_new) - log_normal(xa, scale * spike) + log_normal(xd, scale * spike)
                    - log_normal(xd, scale * scales[del]);
                if self.rng.random_unit().ln() < log_ratio {
                    flags[add] = true;
                    scales[add] = slab_scale(w_new, spike);
                    flags[del] = false;
                    scales[del] = spike;
                }
            }
        }
        Ok(())
    }

    /// Griddy-Gibbs alpha, then `psi_r = phi_r tau ~ GIG(alpha - p0/2, 2 C_r, 2 b_tau)`.
    fn update_global(&mut self, which: Which) -> Result<()> {
        let griddy = self.hyper.griddy_alpha;
        let block = self.block(which);
        let rank = block.rank();
        let order = block.coef.order();
        let p0: usize = block.coef.dims().iter().sum();
        let p0 = p0 as f64;
        let c: Vec<f64> = (0..rank)
            .map(|r| {
                let mut acc = 0.0;
                for j in 0..order {
                    for (b, w) in block.coef.margin(r, j).iter().zip(&block.scales[r][j]) {
                        acc += b * b / w;
                    }
                }
                (0.5 * acc).max(1e-300)
            })
            .collect();
        let alpha = if griddy {
            let grid = alpha_grid(rank, order);
            let logw: Vec<f64> = grid
                .iter()
                .map(|&alpha| {
                    let (_, b) = Hyperparams::tau_prior(rank, alpha, order);
                    let lam = alpha - p0 / 2.0;
                    c.iter()
                        .map(|&cr| {
                            alpha * b.ln() - ln_gamma(alpha) + 0.5 * lam * (cr / b).ln() + log_bessel_k(lam, 2.0 * (b * cr).sqrt())
                        })
                        .sum()
                })
                .collect();
            grid[sample_log_weights(&logw, &mut self.rng)]
        } else {
            block.alpha
        };
        let (_, b_tau) = Hyperparams::tau_prior(rank, alpha, order);
        let psi = c
            .iter()
            .map(|&cr| Ok(sample_gig(GigParams::new(alpha - p0 / 2.0, 2.0 * cr, 2.0 * b_tau)?, &mut self.rng)?.max(PSI_FLOOR)))
            .collect::<Result<Vec<f64>>>()?;
        let tau: f64 = psi.iter().sum();
        let block = self.block_mut(which);
        block.alpha = alpha;
        block.tau = tau;
        block.weights = psi.iter().map(|p| p / tau).collect();
        Ok(())
    }

    /// Conjugate Gaussian draw of margin `(r, j)` of `which` against records `obs`.
    fn draw_margin(&mut self, which: Which, r: usize, j: usize, obs: &[usize]) -> Result<()> {
        let data = self.data;
        let dims = data.dims();
        let p = dims[j];
        let mut scratch = std::mem::take(&mut self.scratch);
        scratch.clear();
        scratch.resize(obs.len() * p, 0.0);
        let block = self.block(which);
        let margins = &block.coef.margins()[r];
        let scale = block.weights[r] * block.tau;
        let mut prec = DMatrix::<f64>::zeros(p, p);
        for (a, w) in block.scales[r][j].iter().enumerate() {
            prec[(a, a)] = (1.0 / (scale * w)).min(1e300);
        }
        let mut lin = DVector::<f64>::zeros(p);
        for (row, &k) in obs.iter().enumerate() {
            let v = &mut scratch[row * p..(row + 1) * p];
            design_vector_into(data.records()[k].image.data(), dims, margins, j, v);
            let own = self.part(which, r, k);
            let target = self.residual(k) + own;
            let w = self.weight(k);
            for a in 0..p {
                let wa = w * v[a];
                if wa == 0.0 {
                    continue;
                }
                lin[a] += wa * target;
                for b in 0..=a {
                    prec[(a, b)] += wa * v[b];
                }
            }
        }
        symmetrize(&mut prec);
        let draw = draw_gaussian(prec, lin, &mut self.rng).map_err(|e| {
            Error::Numerical(format!("margin ({r}, {j}) of {which:?}: {e}"))
        })?;
        let draw: Vec<f64> = draw.iter().copied().collect();
        for (row, &k) in obs.iter().enumerate() {
            let value = dot(&scratch[row * p..(row + 1) * p], &draw);
            match which {
                Which::B0 => self.b0_parts[r][k] = value,
                Which::Bt(_) => self.bt_parts[r][k] = value,
            }
        }
        self.block_mut(which).coef.margin_mut(r, j).copy_from_slice(&draw);
        self.scratch = scratch;
        Ok(())
    }

    fn part(&self, which: Which, r: usize, k: usize) -> f64 {
        match which {
            Which::B0 => self.b0_parts[r][k],
            Which::Bt(_) => self.bt_parts[r][k],
        }
    }
}

/// A slab draw that happens to equal the spike exactly is nudged one ulp so the
/// flag can always be read back from the scale.
fn slab_scale(w: f64, spike: f64) -> f64 {
    let w = w.max(f64::MIN_POSITIVE);
    if w == spike {
        f64::from_bits(spike.to_bits() + 1)
    } else {
        w
    }
}

fn block_has_selection(block: &CoefBlock) -> bool {
    block.selection.is_some()
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
enum Move {
    Add,
    Delete,
    Swap,
}

fn feasible_moves(n_on: usize, p: usize) -> Vec<Move> {
    let mut moves = Vec::with_capacity(3);
    if n_on < p {
        moves.push(Move::Add);
    }
    if n_on > 0 {
        moves.push(Move::Delete);
    }
    if n_on > 0 && n_on < p {
        moves.push(Move::Swap);
    }
    moves
}

/// `alpha_g = R^(-e_g)` with exponents spaced evenly from `D` down to 0.1.
pub fn alpha_grid(rank: usize, order: usize) -> Vec<f64> {
    let r = rank as f64;
    let hi = order as f64;
    (0..ALPHA_GRID)
        .map(|g| {
            let e = hi + (0.1 - hi) * g as f64 / (ALPHA_GRID - 1) as f64;
            r.powf(-e)
        })
        .collect()
}

fn sample_log_weights(logw: &[f64], rng: &mut RngStream) -> usize {
    let top = logw.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let total: f64 = w.iter().sum();
    let mut u = rng.random_unit() * total;
    for (g, &wg) in w.iter().enumerate() {
        if u < wg {
            return g;
        }
        u -= wg;
    }
    w.len() - 1
}

fn symmetrize(m: &mut DMatrix<f64>) {
    let n = m.nrows();
    for a in 0..n {
        for b in 0..a {
            m[(b, a)] = m[(a, b)];
        }
    }
}

/// Draw from `N(P^-1 h, P^-1)` via the Cholesky factor of `P`.
pub(crate) fn draw_gaussian(prec: DMatrix<f64>, lin: DVector<f64>, rng: &mut RngStream) -> Result<DVector<f64>> {
    let n = prec.nrows();
    let chol = prec
        .cholesky()
        .ok_or_else(|| Error::Numerical("precision matrix is not positive definite".into()))?;
    let mean = chol.solve(&lin);
    let z = DVector::from_iterator(n, (0..n).map(|_| dist::standard_normal(rng)));
    let l = chol.l();
    let noise = l
        .transpose()
        .solve_upper_triangular(&z)
        .ok_or_else(|| Error::Numerical("singular Cholesky factor".into()))?;
    Ok(mean + noise)
}

fn check_state_shape(data: &Dataset, variant: Variant, state: &McmcState) -> Result<()> {
    let bad = |m: &str| Err(Error::invalid(format!("state does not match dataset: {m}")));
    if state.nu.len() != data.observed_count() {
        return bad("nu length");
    }
    if state.b0i.len() != data.n_subjects() {
        return bad("b0i length");
    }
    if state.eta.len() != data.covariate_count() {
        return bad("eta length");
    }
    if state.b0_block.is_some() != variant.has_b0() {
        return bad("B0 block presence");
    }
    let expected_bt = if variant.has_bt() { data.n_visits() } else { 0 };
    if state.bt_blocks.len() != expected_bt {
        return bad("number of B_t blocks");
    }
    for block in state.b0_block.iter().chain(&state.bt_blocks) {
        if block.coef.dims() != data.dims() {
            return bad("coefficient dims");
        }
    }
    if let Some(first) = state.bt_blocks.first() {
        if state.bt_blocks.iter().any(|b| b.rank() != first.rank()) {
            return bad("B_t ranks differ across visits");
        }
        if state.bt_blocks.iter().any(|b| b.selection.is_some() != variant.bt_uses_selection()) {
            return bad("inclusion flags present for the wrong variant");
        }
    }
    Ok(())
}

trait UnitDraws {
    fn random_unit(&mut self) -> f64;
    fn random_range_usize(&mut self, n: usize) -> usize;
}

impl UnitDraws for RngStream {
    fn random_unit(&mut self) -> f64 {
        use rand::Rng;
        self.random::<f64>()
    }

    fn random_range_usize(&mut self, n: usize) -> usize {
        use rand::Rng;
        self.random_range(0..n)
    }
}
