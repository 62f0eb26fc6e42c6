//! Gibbs sampler for the longitudinal tensor quantile model and chain orchestration.
//!
//! One sweep updates, in order: `sigma`, `nu`, `b0`, `b0_i`, `b1`, the B0 global
//! scales, the B0 margins (components ascending, then modes ascending), the B_t
//! global scales, per visit the inclusion move, local scales and margins of each
//! `(r, j)`, the inclusion probabilities, and finally `eta`.

mod kernel;

pub use kernel::{alpha_grid, Sampler};

use crate::chain::{ChainOutput, Manifest, SamplerConfig};
use crate::dist::RngStream;
use crate::error::{Error, Result};
use crate::model::{Dataset, Hyperparams, McmcState};
use crate::tensor::materialize;

/// Cached contributions are rebuilt from the margins this often to bound drift.
const REFRESH_EVERY: usize = 100;

pub fn run_chain(config: &SamplerConfig, data: &Dataset, hyper: &Hyperparams) -> Result<ChainOutput> {
    run_chain_stream(config, data, hyper, 0)
}

/// Runs `n_chains` chains, at most `threads` at a time; chain `c` draws from substream `c`
/// of the seed, so results do not depend on `threads`.
pub fn run_chains(
    config: &SamplerConfig,
    data: &Dataset,
    hyper: &Hyperparams,
    n_chains: usize,
    threads: usize,
) -> Result<Vec<ChainOutput>> {
    if n_chains == 0 {
        return Err(Error::invalid("need at least one chain"));
    }
    let ids: Vec<u64> = (0..n_chains as u64).collect();
    let mut out = Vec::with_capacity(n_chains);
    for batch in ids.chunks(threads.max(1)) {
        let results: Vec<Result<ChainOutput>> = std::thread::scope(|scope| {
            let handles: Vec<_> = batch
                .iter()
                .map(|&c| scope.spawn(move || run_chain_stream(config, data, hyper, c)))
                .collect();
            handles.into_iter().map(|h| h.join().expect("chain thread panicked")).collect()
        });
        for r in results {
            out.push(r?);
        }
    }
    Ok(out)
}

pub fn run_chain_stream(config: &SamplerConfig, data: &Dataset, hyper: &Hyperparams, chain: u64) -> Result<ChainOutput> {
    config.validate()?;
    hyper.validate()?;
    let mut rng = RngStream::with_stream(config.seed, chain);
    let state = McmcState::initialize(data, hyper, config.variant, config.rank_b0, config.rank_bt, &mut rng)?;
    let mut sampler = Sampler::new(data, hyper.clone(), config.variant, state, rng)?;
    let mut out = Recorder::new(config, data, hyper, chain);
    for it in 0..config.iterations {
        sampler.sweep().map_err(|e| Error::Sampler {
            iteration: it,
            source: Box::new(e),
        })?;
        if (it + 1) % REFRESH_EVERY == 0 {
            sampler.refresh_caches();
        }
        if it >= config.burn_in && (it + 1 - config.burn_in) % config.thin == 0 {
            out.record(sampler.state()).map_err(|e| Error::Sampler {
                iteration: it,
                source: Box::new(e),
            })?;
        }
    }
    Ok(out.finish())
}

struct Recorder {
    output: ChainOutput,
}

impl Recorder {
    fn new(config: &SamplerConfig, data: &Dataset, hyper: &Hyperparams, chain: u64) -> Self {
        let n_visits = data.n_visits();
        let mut names: Vec<String> = ["sigma", "b0", "b1"].iter().map(|s| s.to_string()).collect();
        if config.variant.has_b0() {
            names.push("tau_b0".into());
            names.push("alpha_b0".into());
        }
        if config.variant.has_bt() {
            for t in 1..=n_visits {
                names.push(format!("tau_bt{t}"));
                names.push(format!("alpha_bt{t}"));
            }
        }
        let mut train_subjects = vec![false; data.n_subjects()];
        for rec in data.records() {
            train_subjects[rec.subject] = true;
        }
        let k = config.stored_draws();
        let cells: usize = data.dims().iter().product();
        Self {
            output: ChainOutput {
                manifest: Manifest {
                    config: config.clone(),
                    hyper: hyper.clone(),
                    chain,
                    version: crate::VERSION.to_string(),
                    data_path: None,
                    timing_seconds: None,
                },
                dims: data.dims().to_vec(),
                n_draws: 0,
                coefficients: vec![Vec::with_capacity(k * cells); n_visits],
                scalar_names: names,
                scalars: Vec::new(),
                b0i: Vec::new(),
                eta: Vec::new(),
                flags: config.variant.bt_uses_selection().then(|| vec![Vec::new(); n_visits]),
                train_subjects,
                mask: None,
            },
        }
    }

    fn record(&mut self, state: &McmcState) -> Result<()> {
        let out = &mut self.output;
        let b0 = state.b0_block.as_ref().map(|b| materialize(&b.coef)).transpose()?;
        for (t, block) in out.coefficients.iter_mut().enumerate() {
            let mut cell = match &b0 {
                Some(b) => b.data().to_vec(),
                None => vec![0.0; out.dims.iter().product()],
            };
            if let Some(bt) = state.bt_blocks.get(t) {
                for (c, v) in cell.iter_mut().zip(materialize(&bt.coef)?.data()) {
                    *c += v;
                }
            }
            block.extend_from_slice(&cell);
        }
        out.scalars.extend([state.sigma, state.b0, state.b1]);
        if let Some(b) = &state.b0_block {
            out.scalars.extend([b.tau, b.alpha]);
        }
        for b in &state.bt_blocks {
            out.scalars.extend([b.tau, b.alpha]);
        }
        out.b0i.extend_from_slice(&state.b0i);
        out.eta.extend_from_slice(&state.eta);
        if let Some(flags) = &mut out.flags {
            for (t, f) in flags.iter_mut().enumerate() {
                let sel = state.bt_blocks[t].selection.as_ref().expect("selection present");
                f.extend(sel.flags.iter().flatten().flatten().map(|&b| b as u8));
            }
        }
        out.n_draws += 1;
        Ok(())
    }

    fn finish(self) -> ChainOutput {
        self.output
    }
}
