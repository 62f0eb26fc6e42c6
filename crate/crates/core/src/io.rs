//! On-disk formats.
//!
//! # Tensor files (`.btq`)
//!
//! A short ASCII header followed by the raw payload:
//!
//! ```text
//! BTQ1
//! dims 250 16 16
//! dtype f64
//! endian little
//! count 64000
//!
//! <count * 8 bytes: IEEE-754 binary64, little-endian, row-major>
//! ```
//!
//! The header ends at the first empty line. A file may hold a single tensor or
//! a stack of them (leading dimension = stack size).
//!
//! # Dataset directories
//!
//! * `meta.json`: subject count, visit count, image dims.
//! * `records.csv`: `subject,visit,time,y,image_index` with 0-based subjects and
//!   1-based visits; `image_index` addresses the stack in `images.btq`.
//! * `covariates.csv` (only when covariates exist): `subject,z1,...,zp`.
//! * `images.btq`: all images stacked in record order.
//!
//! Numbers in the CSV files use shortest round-trip formatting, so text round trips are exact.
//!
//! # Chain archives
//!
//! * `manifest.json`: sampler config, seed, hyperparameters, version, data path, layout.
//! * `coefficients_v{t}.btq`: `K x dims` draws of `B0 + B_t` for 1-based visit `t`.
//! * `scalars.btq`: `K x C` table whose column names are listed in the manifest.
//! * `b0i.btq`, `eta.btq` (if any covariates), `flags_v{t}.btq` (spike-and-slab only), `mask.btq` (optional).

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::chain::{ChainOutput, Manifest};
use crate::error::{Error, Result};
use crate::model::{Dataset, Record};
use crate::tensor::DenseTensor;

const MAGIC: &str = "BTQ1";

/// Writes `bytes` to a sibling temporary file, then renames it into place.
/// Missing parent directories are created.
fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    let tmp = path.with_extension(format!(
        "{}.tmp",
        path.extension().and_then(|e| e.to_str()).unwrap_or("")
    ));
    let mut f = fs::File::create(&tmp).map_err(|e| Error::io(&tmp, e))?;
    f.write_all(bytes).map_err(|e| Error::io(&tmp, e))?;
    f.sync_all().map_err(|e| Error::io(&tmp, e))?;
    drop(f);
    fs::rename(&tmp, path).map_err(|e| Error::io(path, e))
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Serializes a (possibly stacked) array.
pub fn encode_array(dims: &[usize], data: &[f64]) -> Result<Vec<u8>> {
    let count: usize = dims.iter().product();
    if count != data.len() || dims.is_empty() {
        return Err(Error::DataLength {
            dims: dims.to_vec(),
            len: data.len(),
        });
    }
    let dims_text: Vec<String> = dims.iter().map(|d| d.to_string()).collect();
    let header = format!(
        "{MAGIC}\ndims {}\ndtype f64\nendian little\ncount {count}\n\n",
        dims_text.join(" ")
    );
    let mut out = Vec::with_capacity(header.len() + 8 * count);
    out.extend_from_slice(header.as_bytes());
    for v in data {
        out.extend_from_slice(&v.to_le_bytes());
    }
    Ok(out)
}

pub fn decode_array(path: &Path, bytes: &[u8]) -> Result<(Vec<usize>, Vec<f64>)> {
    let bad = |m: String| Error::format(path, m);
    let end = bytes
        .windows(2)
        .position(|w| w == b"\n\n")
        .ok_or_else(|| bad("header is not terminated by an empty line".into()))?;
    let header = std::str::from_utf8(&bytes[..end]).map_err(|_| bad("header is not ASCII text".into()))?;
    let mut lines = header.lines();
    if lines.next() != Some(MAGIC) {
        return Err(bad(format!("missing magic string {MAGIC:?} at byte 0")));
    }
    let (mut dims, mut count, mut dtype, mut endian) = (None, None, None, None);
    for line in lines {
        let (key, value) = line.split_once(' ').unwrap_or((line, ""));
        match key {
            "dims" => {
                let d = value
                    .split_whitespace()
                    .map(|t| t.parse::<usize>())
                    .collect::<std::result::Result<Vec<_>, _>>()
                    .map_err(|_| bad(format!("unparsable dims line {line:?}")))?;
                dims = Some(d);
            }
            "count" => count = Some(value.parse::<usize>().map_err(|_| bad(format!("unparsable count {value:?}")))?),
            "dtype" => dtype = Some(value.to_string()),
            "endian" => endian = Some(value.to_string()),
            other => return Err(bad(format!("unknown header key {other:?}"))),
        }
    }
    let dims = dims.ok_or_else(|| bad("header has no dims line".into()))?;
    if dtype.as_deref() != Some("f64") {
        return Err(bad(format!("unsupported dtype {dtype:?}; only f64 is written")));
    }
    if endian.as_deref() != Some("little") {
        return Err(bad(format!("unsupported endianness {endian:?}")));
    }
    let expected: usize = dims.iter().product();
    if dims.is_empty() || count != Some(expected) {
        return Err(bad(format!("count {count:?} does not match dims {dims:?}")));
    }
    let offset = end + 2;
    let payload = &bytes[offset..];
    if payload.len() != 8 * expected {
        return Err(bad(format!(
            "payload at byte offset {offset} has {} bytes, expected {} ({} values)",
            payload.len(),
            8 * expected,
            expected
        )));
    }
    let data = payload
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("chunk of 8")))
        .collect();
    Ok((dims, data))
}

pub fn write_array(path: &Path, dims: &[usize], data: &[f64]) -> Result<()> {
    write_atomic(path, &encode_array(dims, data)?)
}

pub fn read_array(path: &Path) -> Result<(Vec<usize>, Vec<f64>)> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    decode_array(path, &bytes)
}

pub fn write_tensor(path: &Path, t: &DenseTensor) -> Result<()> {
    write_array(path, t.dims(), t.data())
}

pub fn read_tensor(path: &Path) -> Result<DenseTensor> {
    let (dims, data) = read_array(path)?;
    DenseTensor::new(dims, data)
}

/// Splits a `[n, dims...]` stack into `n` tensors of shape `dims`.
pub fn read_tensor_stack(path: &Path) -> Result<Vec<DenseTensor>> {
    let (dims, data) = read_array(path)?;
    if dims.len() < 3 {
        return Err(Error::format(path, format!("expected a stack of tensors, got dims {dims:?}")));
    }
    let inner = dims[1..].to_vec();
    let size: usize = inner.iter().product();
    data.chunks(size.max(1))
        .take(dims[0])
        .map(|c| DenseTensor::new(inner.clone(), c.to_vec()))
        .collect()
}

/// Pretty-printed JSON with a trailing newline.
pub fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut text = serde_json::to_string_pretty(value).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })?;
    text.push('\n');
    write_atomic(path, text.as_bytes())
}

pub fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    serde_json::from_str(&text).map_err(|e| Error::Json {
        path: path.to_path_buf(),
        source: e,
    })
}

/// Writes a delimited text table.
pub fn write_table(path: &Path, header: &[&str], rows: &[Vec<String>]) -> Result<()> {
    let mut w = csv::Writer::from_writer(Vec::new());
    let wrap = |e: csv::Error| Error::format(path, e.to_string());
    w.write_record(header).map_err(wrap)?;
    for row in rows {
        w.write_record(row).map_err(wrap)?;
    }
    let bytes = w.into_inner().map_err(|e| Error::format(path, e.to_string()))?;
    write_atomic(path, &bytes)
}

/// Reads a delimited text table as `(header, rows)`.
pub fn read_table(path: &Path) -> Result<(Vec<String>, Vec<Vec<String>>)> {
    let mut r = csv::Reader::from_path(path).map_err(|e| Error::format(path, e.to_string()))?;
    let header = r
        .headers()
        .map_err(|e| Error::format(path, e.to_string()))?
        .iter()
        .map(String::from)
        .collect();
    let rows = r
        .records()
        .map(|rec| {
            rec.map(|rec| rec.iter().map(String::from).collect())
                .map_err(|e| Error::format(path, e.to_string()))
        })
        .collect::<Result<Vec<Vec<String>>>>()?;
    Ok((header, rows))
}

fn parse<T: std::str::FromStr>(path: &Path, row: usize, field: &str, text: &str) -> Result<T> {
    text.parse()
        .map_err(|_| Error::format(path, format!("row {row}: cannot parse {field} from {text:?}")))
}

#[derive(Serialize, Deserialize)]
struct DatasetMeta {
    n_subjects: usize,
    n_visits: usize,
    dims: Vec<usize>,
}

pub fn write_dataset(dir: &Path, data: &Dataset) -> Result<()> {
    create_dir(dir)?;
    write_json(
        &dir.join("meta.json"),
        &DatasetMeta {
            n_subjects: data.n_subjects(),
            n_visits: data.n_visits(),
            dims: data.dims().to_vec(),
        },
    )?;
    let rows: Vec<Vec<String>> = data
        .records()
        .iter()
        .enumerate()
        .map(|(k, r)| {
            vec![
                r.subject.to_string(),
                (r.visit + 1).to_string(),
                r.time.to_string(),
                r.y.to_string(),
                k.to_string(),
            ]
        })
        .collect();
    write_table(&dir.join("records.csv"), &["subject", "visit", "time", "y", "image_index"], &rows)?;
    let p = data.covariate_count();
    let cov_path = dir.join("covariates.csv");
    if p > 0 {
        let mut header = vec!["subject".to_string()];
        header.extend((1..=p).map(|a| format!("z{a}")));
        let header_ref: Vec<&str> = header.iter().map(String::as_str).collect();
        let rows: Vec<Vec<String>> = data
            .covariates()
            .iter()
            .enumerate()
            .map(|(i, z)| std::iter::once(i.to_string()).chain(z.iter().map(|v| v.to_string())).collect())
            .collect();
        write_table(&cov_path, &header_ref, &rows)?;
    } else if cov_path.exists() {
        fs::remove_file(&cov_path).map_err(|e| Error::io(&cov_path, e))?;
    }
    let mut stack_dims = vec![data.observed_count()];
    stack_dims.extend_from_slice(data.dims());
    let stack: Vec<f64> = data.records().iter().flat_map(|r| r.image.data().iter().copied()).collect();
    write_array(&dir.join("images.btq"), &stack_dims, &stack)
}

pub fn read_dataset(dir: &Path) -> Result<Dataset> {
    let meta: DatasetMeta = read_json(&dir.join("meta.json"))?;
    let images_path = dir.join("images.btq");
    let images = read_tensor_stack(&images_path)?;
    let records_path = dir.join("records.csv");
    let (header, rows) = read_table(&records_path)?;
    if header != ["subject", "visit", "time", "y", "image_index"] {
        return Err(Error::format(&records_path, format!("unexpected header {header:?}")));
    }
    let mut records = Vec::with_capacity(rows.len());
    for (n, row) in rows.iter().enumerate() {
        let visit: usize = parse(&records_path, n + 1, "visit", &row[1])?;
        if visit == 0 {
            return Err(Error::format(&records_path, format!("row {}: visits are 1-based", n + 1)));
        }
        let index: usize = parse(&records_path, n + 1, "image_index", &row[4])?;
        let image = images
            .get(index)
            .cloned()
            .ok_or_else(|| Error::format(&images_path, format!("image index {index} out of range ({} images)", images.len())))?;
        if image.dims() != meta.dims.as_slice() {
            return Err(Error::format(&images_path, "image dims differ from meta.json"));
        }
        records.push(Record {
            subject: parse(&records_path, n + 1, "subject", &row[0])?,
            visit: visit - 1,
            time: parse(&records_path, n + 1, "time", &row[2])?,
            y: parse(&records_path, n + 1, "y", &row[3])?,
            image,
        });
    }
    let cov_path = dir.join("covariates.csv");
    let covariates = if cov_path.exists() {
        let (_, rows) = read_table(&cov_path)?;
        let mut z = vec![Vec::new(); meta.n_subjects];
        for (n, row) in rows.iter().enumerate() {
            let i: usize = parse(&cov_path, n + 1, "subject", &row[0])?;
            let values = row[1..]
                .iter()
                .map(|v| parse(&cov_path, n + 1, "covariate", v))
                .collect::<Result<Vec<f64>>>()?;
            *z.get_mut(i)
                .ok_or_else(|| Error::format(&cov_path, format!("row {}: subject {i} out of range", n + 1)))? = values;
        }
        z
    } else {
        Vec::new()
    };
    Dataset::new(meta.n_subjects, meta.n_visits, records, covariates)
}

/// Writes per-visit truth tensors as `truth_v{t}.btq`.
pub fn write_truth(dir: &Path, truth: &[DenseTensor]) -> Result<()> {
    create_dir(dir)?;
    for (t, beta) in truth.iter().enumerate() {
        write_tensor(&dir.join(format!("truth_v{}.btq", t + 1)), beta)?;
    }
    Ok(())
}

pub fn read_truth(dir: &Path) -> Result<Vec<DenseTensor>> {
    let mut out = Vec::new();
    loop {
        let path = dir.join(format!("truth_v{}.btq", out.len() + 1));
        if !path.exists() {
            break;
        }
        out.push(read_tensor(&path)?);
    }
    if out.is_empty() {
        return Err(Error::format(dir, "no truth_v1.btq found"));
    }
    Ok(out)
}

#[derive(Serialize, Deserialize)]
struct ArchiveManifest {
    #[serde(flatten)]
    run: Manifest,
    layout: Layout,
}

#[derive(Serialize, Deserialize)]
struct Layout {
    dims: Vec<usize>,
    n_draws: usize,
    n_visits: usize,
    scalar_names: Vec<String>,
    train_subjects: Vec<bool>,
    covariates: usize,
    has_flags: bool,
    has_mask: bool,
}

fn stack_dims(k: usize, inner: &[usize]) -> Vec<usize> {
    let mut d = vec![k];
    d.extend_from_slice(inner);
    d
}

pub fn write_chain(dir: &Path, chain: &ChainOutput) -> Result<()> {
    chain.validate()?;
    create_dir(dir)?;
    let k = chain.n_draws;
    let layout = Layout {
        dims: chain.dims.clone(),
        n_draws: k,
        n_visits: chain.n_visits(),
        scalar_names: chain.scalar_names.clone(),
        train_subjects: chain.train_subjects.clone(),
        covariates: chain.covariate_count(),
        has_flags: chain.flags.is_some(),
        has_mask: chain.mask.is_some(),
    };
    write_json(
        &dir.join("manifest.json"),
        &ArchiveManifest {
            run: chain.manifest.clone(),
            layout,
        },
    )?;
    for (t, block) in chain.coefficients.iter().enumerate() {
        write_array(&dir.join(format!("coefficients_v{}.btq", t + 1)), &stack_dims(k, &chain.dims), block)?;
    }
    write_array(&dir.join("scalars.btq"), &[k, chain.scalar_names.len()], &chain.scalars)?;
    write_array(&dir.join("b0i.btq"), &[k, chain.n_subjects()], &chain.b0i)?;
    if chain.covariate_count() > 0 {
        write_array(&dir.join("eta.btq"), &[k, chain.covariate_count()], &chain.eta)?;
    }
    if let Some(flags) = &chain.flags {
        for (t, f) in flags.iter().enumerate() {
            let width = if k == 0 { 0 } else { f.len() / k };
            let values: Vec<f64> = f.iter().map(|&b| b as f64).collect();
            write_array(&dir.join(format!("flags_v{}.btq", t + 1)), &[k, width], &values)?;
        }
    }
    if let Some(mask) = &chain.mask {
        write_tensor(&dir.join("mask.btq"), mask)?;
    }
    Ok(())
}

fn read_block(path: &Path, expect: &[usize]) -> Result<Vec<f64>> {
    let (dims, data) = read_array(path)?;
    if dims != expect {
        return Err(Error::format(path, format!("dims {dims:?} differ from manifest layout {expect:?}")));
    }
    Ok(data)
}

pub fn read_chain(dir: &Path) -> Result<ChainOutput> {
    let m: ArchiveManifest = read_json(&dir.join("manifest.json"))?;
    let l = m.layout;
    let k = l.n_draws;
    let coefficients = (1..=l.n_visits)
        .map(|t| read_block(&dir.join(format!("coefficients_v{t}.btq")), &stack_dims(k, &l.dims)))
        .collect::<Result<Vec<_>>>()?;
    let scalars = read_block(&dir.join("scalars.btq"), &[k, l.scalar_names.len()])?;
    let b0i = read_block(&dir.join("b0i.btq"), &[k, l.train_subjects.len()])?;
    let eta = if l.covariates > 0 {
        read_block(&dir.join("eta.btq"), &[k, l.covariates])?
    } else {
        Vec::new()
    };
    let flags = if l.has_flags {
        Some(
            (1..=l.n_visits)
                .map(|t| {
                    let path = dir.join(format!("flags_v{t}.btq"));
                    let (dims, data) = read_array(&path)?;
                    if dims.len() != 2 || dims[0] != k {
                        return Err(Error::format(&path, format!("unexpected flag dims {dims:?}")));
                    }
                    Ok(data.into_iter().map(|v| (v != 0.0) as u8).collect())
                })
                .collect::<Result<Vec<_>>>()?,
        )
    } else {
        None
    };
    let mask = if l.has_mask {
        Some(read_tensor(&dir.join("mask.btq"))?)
    } else {
        None
    };
    let chain = ChainOutput {
        manifest: m.run,
        dims: l.dims,
        n_draws: k,
        coefficients,
        scalar_names: l.scalar_names,
        scalars,
        b0i,
        eta,
        flags,
        train_subjects: l.train_subjects,
        mask,
    };
    chain.validate()?;
    Ok(chain)
}

/// Path helper for per-visit output files: `{stem}_v{t}.{ext}` with 1-based `t`.
pub fn visit_path(dir: &Path, stem: &str, visit: usize, ext: &str) -> PathBuf {
    dir.join(format!("{stem}_v{}.{ext}", visit + 1))
}
