use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use bltqr::chain::SamplerConfig;
use bltqr::inference::{self, SelectionMap};
use bltqr::metrics;
use bltqr::model::{Hyperparams, Variant};
use bltqr::simulate::{self, Noise, ScenarioSpec};
use bltqr::tensor::DenseTensor;
use bltqr::{io, sampler, Error, Result};
use clap::{Parser, Subcommand, ValueEnum};
use serde_json::{json, Value};

/// Caps how many chains run concurrently.
const THREADS_ENV: &str = "BLTQR_THREADS";

#[derive(Parser)]
#[command(name = "bltqr", version, about = "Bayesian longitudinal tensor quantile regression")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic train/test dataset with known coefficients.
    Simulate {
        #[arg(long, value_parser = clap::value_parser!(u8).range(0..=5))]
        scenario: u8,
        /// Grid size, e.g. 16x16 or 12x12x12.
        #[arg(long, default_value = "48x48", value_parser = parse_dims)]
        dims: Dims,
        #[arg(long, default_value_t = 250)]
        n_train: usize,
        #[arg(long, default_value_t = 250)]
        n_test: usize,
        #[arg(long, default_value_t = 3)]
        visits: usize,
        #[arg(long, default_value_t = 0.5)]
        q: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Gaussian noise instead of ALD.
        #[arg(long)]
        misspecified: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Run the Gibbs sampler and write a chain archive.
    Fit {
        #[arg(long)]
        data: PathBuf,
        #[arg(long, default_value_t = 0.5)]
        q: f64,
        #[arg(long, default_value_t = 2)]
        rank_b0: usize,
        #[arg(long, default_value_t = 2)]
        rank_bt: usize,
        #[arg(long, default_value_t = 7000)]
        iters: usize,
        #[arg(long, default_value_t = 2500)]
        burnin: usize,
        #[arg(long, default_value_t = 1)]
        thin: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long, value_enum, default_value_t = VariantArg::Bltqr)]
        variant: VariantArg,
        /// Tensor file; cells where it is zero are dropped from the images.
        #[arg(long)]
        mask: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        chains: usize,
        /// Store wall-clock time in the manifest (makes output non-reproducible).
        #[arg(long)]
        record_timing: bool,
        #[arg(long)]
        out: PathBuf,
    },
    /// Point estimates and selection maps for every visit.
    Summarize {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long, default_value_t = 0.1)]
        alpha: f64,
        #[arg(long, value_enum, default_value_t = Method::Mdev)]
        method: Method,
        /// Integer label tensor for per-region selected counts.
        #[arg(long)]
        labels: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Quantile predictions and check loss on a dataset.
    Predict {
        #[arg(long)]
        chain: PathBuf,
        #[arg(long)]
        data: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Geweke pass fraction and DIC.
    Diagnose {
        #[arg(long)]
        chain: PathBuf,
        /// Dataset for DIC; defaults to the one recorded in the chain.
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Compare a summarize output against true coefficients.
    Evaluate {
        #[arg(long)]
        est: PathBuf,
        #[arg(long)]
        truth: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
}

#[derive(Clone, Debug)]
struct Dims(Vec<usize>);

fn parse_dims(s: &str) -> std::result::Result<Dims, String> {
    let dims = s
        .split(['x', 'X', ','])
        .map(|p| p.trim().parse::<usize>().map_err(|e| format!("bad dimension {p:?}: {e}")))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    if !(2..=3).contains(&dims.len()) || dims.contains(&0) {
        return Err(format!("expected 2 or 3 positive sizes, got {s:?}"));
    }
    Ok(Dims(dims))
}

#[derive(Clone, Copy, ValueEnum)]
enum VariantArg {
    Bltqr,
    Csb1,
    Csb2,
}

impl From<VariantArg> for Variant {
    fn from(v: VariantArg) -> Self {
        match v {
            VariantArg::Bltqr => Variant::Bltqr,
            VariantArg::Csb1 => Variant::Csb1,
            VariantArg::Csb2 => Variant::Csb2,
        }
    }
}

#[derive(Clone, Copy, ValueEnum)]
enum Method {
    Mdev,
    Pointwise,
}

impl Method {
    fn name(self) -> &'static str {
        match self {
            Method::Mdev => "mdev",
            Method::Pointwise => "pointwise",
        }
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if !e.use_stderr() => {
            let _ = e.print();
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("").trim_start_matches("error: ");
            eprintln!("error[usage]: {first}");
            return ExitCode::from(2);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let msg = e.to_string().replace(['\n', '\r'], " ");
            eprintln!("error[{}]: {msg}", e.kind());
            ExitCode::FAILURE
        }
    }
}

fn run(command: Command) -> Result<()> {
    match command {
        Command::Simulate {
            scenario,
            dims,
            n_train,
            n_test,
            visits,
            q,
            seed,
            misspecified,
            out,
        } => {
            let mut spec = ScenarioSpec::new(scenario, dims.0, n_train, n_test, q, seed);
            spec.n_visits = visits;
            if misspecified {
                spec.noise = Noise::Normal;
            }
            let sim = if misspecified {
                simulate::generate_misspecified(&spec)?
            } else {
                simulate::generate(&spec)?
            };
            io::write_dataset(&out.join("train"), &sim.train)?;
            io::write_dataset(&out.join("test"), &sim.test)?;
            io::write_truth(&out, &sim.truth)?;
            echo(&out, "simulate", json!({ "spec": spec }))?;
            println!(
                "wrote {} training and {} test records to {}",
                sim.train.observed_count(),
                sim.test.observed_count(),
                out.display()
            );
            Ok(())
        }
        Command::Fit {
            data,
            q,
            rank_b0,
            rank_bt,
            iters,
            burnin,
            thin,
            seed,
            variant,
            mask,
            chains,
            record_timing,
            out,
        } => {
            let mut dataset = io::read_dataset(&data)?;
            let mask = mask.map(|p| io::read_tensor(&p)).transpose()?;
            if let Some(m) = &mask {
                dataset.apply_mask(m)?;
            }
            let mut config = SamplerConfig::new(iters, burnin, seed, variant.into(), rank_b0, rank_bt);
            config.thin = thin;
            let hyper = Hyperparams::defaults(q, rank_b0, rank_bt, dataset.dims().len());
            let start = Instant::now();
            let outputs = sampler::run_chains(&config, &dataset, &hyper, chains, thread_count())?;
            let elapsed = start.elapsed().as_secs_f64();
            for (c, mut chain) in outputs.into_iter().enumerate() {
                chain.manifest.data_path = Some(data.display().to_string());
                chain.mask = mask.clone();
                if record_timing {
                    chain.manifest.timing_seconds = Some(elapsed);
                }
                let dir = if chains == 1 { out.clone() } else { out.join(format!("chain{}", c + 1)) };
                io::write_chain(&dir, &chain)?;
            }
            echo(
                &out,
                "fit",
                json!({
                    "data": data.display().to_string(),
                    "mask": mask.is_some(),
                    "chains": chains,
                    "record_timing": record_timing,
                    "sampler": config,
                    "hyper": hyper,
                }),
            )?;
            println!("stored {} draws per chain in {}", config.stored_draws(), out.display());
            Ok(())
        }
        Command::Summarize {
            chain,
            alpha,
            method,
            labels,
            out,
        } => {
            let ch = io::read_chain(&chain)?;
            let labels = labels.map(|p| io::read_tensor(&p)).transpose()?;
            if let Some(l) = &labels {
                if l.dims() != ch.dims.as_slice() {
                    return Err(Error::ShapeMismatch {
                        expected: ch.dims.clone(),
                        actual: l.dims().to_vec(),
                    });
                }
            }
            let mut counts = Vec::new();
            let mut regions = Vec::new();
            for t in 0..ch.n_visits() {
                let map = match method {
                    Method::Mdev => inference::mdev_bands(&ch, t, alpha)?,
                    Method::Pointwise => inference::pointwise_bands(&ch, t, alpha)?,
                };
                write_map(&out, &map)?;
                counts.push(vec![(t + 1).to_string(), map.selected_count().to_string(), ch.n_cells().to_string()]);
                if let Some(l) = &labels {
                    regions.extend(region_counts(l, &map, t));
                }
            }
            io::write_table(&out.join("selection.csv"), &["visit", "n_selected", "n_cells"], &counts)?;
            if labels.is_some() {
                io::write_table(&out.join("regions.csv"), &["visit", "label", "n_voxels", "n_selected"], &regions)?;
            }
            echo(
                &out,
                "summarize",
                json!({
                    "chain": chain.display().to_string(),
                    "alpha": alpha,
                    "method": method.name(),
                    "labels": labels.is_some(),
                }),
            )?;
            for row in &counts {
                println!("visit {}: {} of {} cells selected", row[0], row[1], row[2]);
            }
            Ok(())
        }
        Command::Predict { chain, data, out } => {
            let ch = io::read_chain(&chain)?;
            let ds = io::read_dataset(&data)?;
            let pred = inference::predict_quantile(&ch, &ds)?;
            let q = ch.manifest.hyper.q;
            let rows: Vec<Vec<String>> = ds
                .records()
                .iter()
                .zip(&pred)
                .map(|(r, p)| vec![r.subject.to_string(), (r.visit + 1).to_string(), num(r.y), num(*p)])
                .collect();
            io::write_table(&out.join("predictions.csv"), &["subject", "visit", "y", "prediction"], &rows)?;
            let mut loss_rows = Vec::new();
            for t in 0..ds.n_visits() {
                let (y, p): (Vec<f64>, Vec<f64>) = ds
                    .records()
                    .iter()
                    .zip(&pred)
                    .filter(|(r, _)| r.visit == t)
                    .map(|(r, p)| (r.y, *p))
                    .unzip();
                if !y.is_empty() {
                    loss_rows.push(vec![(t + 1).to_string(), y.len().to_string(), num(metrics::mean_check_loss(&y, &p, q)?)]);
                }
            }
            let y: Vec<f64> = ds.records().iter().map(|r| r.y).collect();
            let overall = metrics::mean_check_loss(&y, &pred, q)?;
            loss_rows.push(vec!["all".into(), y.len().to_string(), num(overall)]);
            io::write_table(&out.join("check_loss.csv"), &["visit", "n", "check_loss"], &loss_rows)?;
            echo(
                &out,
                "predict",
                json!({ "chain": chain.display().to_string(), "data": data.display().to_string(), "q": q }),
            )?;
            println!("mean check loss {overall} over {} records", y.len());
            Ok(())
        }
        Command::Diagnose { chain, data, out } => {
            let ch = io::read_chain(&chain)?;
            let data = match data {
                Some(d) => d,
                None => ch
                    .manifest
                    .data_path
                    .as_ref()
                    .map(PathBuf::from)
                    .ok_or_else(|| Error::InvalidParameter("chain records no dataset; pass --data".into()))?,
            };
            let ds = io::read_dataset(&data)?;
            let gw = inference::geweke(&ch)?;
            let d = inference::dic(&ch, &ds)?;
            let rows = vec![
                vec!["geweke_pass_fraction".into(), num(gw.pass_fraction)],
                vec!["geweke_parameters".into(), gw.z.iter().flatten().count().to_string()],
                vec!["dic".into(), num(d.dic)],
                vec!["mean_deviance".into(), num(d.mean_deviance)],
                vec!["deviance_at_mean".into(), num(d.deviance_at_mean)],
                vec!["p_d".into(), num(d.p_d)],
            ];
            io::write_table(&out.join("diagnostics.csv"), &["metric", "value"], &rows)?;
            let z_rows: Vec<Vec<String>> = gw
                .names
                .iter()
                .zip(&gw.z)
                .map(|(n, z)| vec![n.clone(), z.map_or_else(|| "NA".into(), num)])
                .collect();
            io::write_table(&out.join("geweke.csv"), &["parameter", "z"], &z_rows)?;
            echo(
                &out,
                "diagnose",
                json!({ "chain": chain.display().to_string(), "data": data.display().to_string() }),
            )?;
            println!("geweke pass fraction {} ; DIC {} (pD {})", gw.pass_fraction, d.dic, d.p_d);
            Ok(())
        }
        Command::Evaluate { est, truth, out } => {
            let truth_t = io::read_truth(&truth)?;
            let mut rows = Vec::new();
            for (t, beta) in truth_t.iter().enumerate() {
                let est_path = io::visit_path(&est, "estimate", t, "btq");
                if !est_path.exists() {
                    break;
                }
                let e = io::read_tensor(&est_path)?;
                let mut row = vec![
                    (t + 1).to_string(),
                    opt(metrics::relative_error(&e, beta)),
                    num(metrics::rmse(&e, beta)?),
                    opt(metrics::correlation(&e, beta)),
                ];
                let sel_path = io::visit_path(&est, "selected", t, "btq");
                if sel_path.exists() {
                    let sel = io::read_tensor(&sel_path)?;
                    let selected: Vec<bool> = sel.data().iter().map(|&v| v != 0.0).collect();
                    let support: Vec<bool> = beta.data().iter().map(|&v| v != 0.0).collect();
                    let m = metrics::selection_metrics(&selected, &support)?;
                    row.extend([
                        m.tp.to_string(),
                        m.fp.to_string(),
                        m.tn.to_string(),
                        m.fn_.to_string(),
                        m.sensitivity.map_or_else(|| "NA".into(), num),
                        m.specificity.map_or_else(|| "NA".into(), num),
                        m.f1.map_or_else(|| "NA".into(), num),
                        m.mcc.map_or_else(|| "NA".into(), num),
                    ]);
                } else {
                    row.extend(std::iter::repeat_n("NA".to_string(), 8));
                }
                rows.push(row);
            }
            if rows.is_empty() {
                return Err(Error::Format {
                    path: est.clone(),
                    message: "no estimate_v1.btq found".into(),
                });
            }
            let header = [
                "visit", "re", "rmse", "correlation", "tp", "fp", "tn", "fn", "sensitivity", "specificity", "f1", "mcc",
            ];
            io::write_table(&out.join("metrics.csv"), &header, &rows)?;
            echo(
                &out,
                "evaluate",
                json!({ "est": est.display().to_string(), "truth": truth.display().to_string() }),
            )?;
            for row in &rows {
                println!("visit {}: re {} rmse {} corr {}", row[0], row[1], row[2], row[3]);
            }
            Ok(())
        }
    }
}

fn thread_count() -> usize {
    std::env::var(THREADS_ENV)
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
        .filter(|&n| n > 0)
        .unwrap_or_else(|| std::thread::available_parallelism().map_or(1, |n| n.get()))
}

/// Shortest round-trip text.
fn num(x: f64) -> String {
    format!("{x}")
}

fn opt(v: Result<f64>) -> String {
    v.map_or_else(|_| "NA".into(), num)
}

fn echo(dir: &Path, command: &str, args: Value) -> Result<()> {
    let config = json!({ "command": command, "version": bltqr::VERSION, "args": args });
    io::write_json(&dir.join("config.json"), &config)
}

fn write_map(dir: &Path, map: &SelectionMap) -> Result<()> {
    let t = map.visit;
    io::write_tensor(&io::visit_path(dir, "estimate", t, "btq"), &map.estimate)?;
    io::write_tensor(&io::visit_path(dir, "lower", t, "btq"), &map.lower)?;
    io::write_tensor(&io::visit_path(dir, "upper", t, "btq"), &map.upper)?;
    io::write_tensor(&io::visit_path(dir, "selected", t, "btq"), &map.selected_tensor())
}

fn region_counts(labels: &DenseTensor, map: &SelectionMap, visit: usize) -> Vec<Vec<String>> {
    let mut by_label: std::collections::BTreeMap<i64, (usize, usize)> = Default::default();
    for (&l, &s) in labels.data().iter().zip(&map.selected) {
        let e = by_label.entry(l.round() as i64).or_default();
        e.0 += 1;
        e.1 += s as usize;
    }
    by_label
        .into_iter()
        .filter(|(l, _)| *l != 0)
        .map(|(l, (n, s))| vec![(visit + 1).to_string(), l.to_string(), n.to_string(), s.to_string()])
        .collect()
}
