use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

fn bltqr(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_bltqr")).args(args).output().expect("spawn bltqr")
}

fn ok(args: &[&str]) {
    ok_in(Path::new("."), args);
}

fn ok_in(dir: &Path, args: &[&str]) {
    let out = Command::new(env!("CARGO_BIN_EXE_bltqr"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("spawn bltqr");
    assert!(
        out.status.success(),
        "bltqr {args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
}

fn p(path: &Path) -> &str {
    path.to_str().unwrap()
}

/// Relative path -> contents for every file below `dir`.
fn snapshot(dir: &Path) -> BTreeMap<PathBuf, Vec<u8>> {
    let mut out = BTreeMap::new();
    let mut stack = vec![dir.to_path_buf()];
    while let Some(d) = stack.pop() {
        for entry in fs::read_dir(&d).unwrap() {
            let path = entry.unwrap().path();
            if path.is_dir() {
                stack.push(path);
            } else {
                out.insert(path.strip_prefix(dir).unwrap().to_path_buf(), fs::read(&path).unwrap());
            }
        }
    }
    out
}

fn simulate_small(out: &Path, seed: &str) {
    ok(&[
        "simulate", "--scenario", "1", "--dims", "8x8", "--n-train", "40", "--n-test", "10", "--seed", seed, "--out", p(out),
    ]);
}

fn fit_small(data: &Path, out: &Path, variant: &str, extra: &[&str]) {
    let mut args = vec![
        "fit", "--data", p(data), "--iters", "60", "--burnin", "20", "--seed", "3", "--variant", variant, "--out", p(out),
    ];
    args.extend_from_slice(extra);
    ok(&args);
}

#[test]
fn simulate_twice_is_byte_identical() {
    let tmp = tempfile::tempdir().unwrap();
    let (a, b) = (tmp.path().join("a"), tmp.path().join("b"));
    simulate_small(&a, "7");
    simulate_small(&b, "7");
    let (sa, sb) = (snapshot(&a), snapshot(&b));
    assert!(sa.contains_key(Path::new("train/records.csv")));
    assert!(sa.contains_key(Path::new("truth_v3.btq")));
    assert!(sa.contains_key(Path::new("config.json")));
    assert_eq!(sa, sb);
}

#[test]
fn csb2_archive_has_no_visit_specific_draws() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let chain = tmp.path().join("chain");
    simulate_small(&sim, "1");
    fit_small(&sim.join("train"), &chain, "csb2", &[]);
    let files = snapshot(&chain);
    assert!(files.keys().all(|k| !k.to_str().unwrap().starts_with("flags")));
    let manifest = String::from_utf8(files[Path::new("manifest.json")].clone()).unwrap();
    assert!(!manifest.contains("tau_bt"));
    // Without B_t every visit stores the same coefficient draws.
    let v1 = &files[Path::new("coefficients_v1.btq")];
    assert_eq!(v1, &files[Path::new("coefficients_v2.btq")]);
    assert_eq!(v1, &files[Path::new("coefficients_v3.btq")]);
}

#[test]
fn fit_and_downstream_tables_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "2");
    // Paths are relative so the echoed configs match too.
    let run = |name: &str| {
        let root = tmp.path().join(name);
        fs::create_dir_all(&root).unwrap();
        let train = sim.join("train");
        let test = sim.join("test");
        ok_in(&root, &["fit", "--data", p(&train), "--iters", "60", "--burnin", "20", "--seed", "3", "--out", "chain"]);
        ok_in(&root, &["summarize", "--chain", "chain", "--method", "pointwise", "--out", "sum"]);
        ok_in(&root, &["evaluate", "--est", "sum", "--truth", p(&sim), "--out", "eval"]);
        ok_in(&root, &["predict", "--chain", "chain", "--data", p(&test), "--out", "pred"]);
        ok_in(&root, &["diagnose", "--chain", "chain", "--out", "diag"]);
        snapshot(&root)
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["chain/flags_v1.btq", "sum/selected_v3.btq", "eval/metrics.csv", "pred/check_loss.csv", "diag/diagnostics.csv"] {
        assert!(a.contains_key(Path::new(f)), "missing {f}");
    }
    assert_eq!(a, b);
}

#[test]
fn chain_outputs_do_not_depend_on_thread_count() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    simulate_small(&sim, "4");
    let mut snaps = Vec::new();
    for threads in ["1", "2"] {
        let out = tmp.path().join(format!("t{threads}"));
        let run = Command::new(env!("CARGO_BIN_EXE_bltqr"))
            .env("BLTQR_THREADS", threads)
            .args(["fit", "--data", p(&sim.join("train")), "--iters", "40", "--burnin", "10", "--chains", "2"])
            .args(["--variant", "csb1", "--out", p(&out)])
            .output()
            .unwrap();
        assert!(run.status.success());
        snaps.push(snapshot(&out));
    }
    assert!(snaps[0].contains_key(Path::new("chain2/manifest.json")));
    assert_ne!(snaps[0][Path::new("chain1/scalars.btq")], snaps[0][Path::new("chain2/scalars.btq")]);
    assert_eq!(snaps[0], snaps[1]);
}

#[test]
fn labels_give_per_region_counts() {
    let tmp = tempfile::tempdir().unwrap();
    let sim = tmp.path().join("sim");
    let chain = tmp.path().join("chain");
    simulate_small(&sim, "5");
    fit_small(&sim.join("train"), &chain, "csb1", &[]);
    // Two regions split by row, written as a BTQ1 tensor.
    let labels: Vec<f64> = (0..64).map(|i| if i < 32 { 1.0 } else { 2.0 }).collect();
    let mut bytes = b"BTQ1\ndims 8 8\ndtype f64\nendian little\ncount 64\n\n".to_vec();
    for v in &labels {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    let label_path = tmp.path().join("labels.btq");
    fs::write(&label_path, bytes).unwrap();
    let out = tmp.path().join("sum");
    ok(&["summarize", "--chain", p(&chain), "--method", "pointwise", "--labels", p(&label_path), "--out", p(&out)]);
    let regions = fs::read_to_string(out.join("regions.csv")).unwrap();
    let rows: Vec<&str> = regions.lines().collect();
    assert_eq!(rows[0], "visit,label,n_voxels,n_selected");
    assert_eq!(rows.len(), 1 + 3 * 2);
    assert!(rows[1].starts_with("1,1,32,"));
}

#[test]
fn errors_are_one_line_with_nonzero_exit() {
    let tmp = tempfile::tempdir().unwrap();
    let cases: Vec<Vec<String>> = vec![
        vec!["fit".into(), "--data".into(), p(&tmp.path().join("missing")).into(), "--out".into(), p(tmp.path()).into()],
        vec!["simulate".into(), "--scenario".into(), "9".into(), "--out".into(), p(tmp.path()).into()],
        vec!["simulate".into(), "--scenario".into(), "1".into(), "--q".into(), "1.5".into(), "--out".into(), p(tmp.path()).into()],
        vec!["bogus".into()],
    ];
    for args in cases {
        let refs: Vec<&str> = args.iter().map(String::as_str).collect();
        let out = bltqr(&refs);
        assert!(!out.status.success(), "{args:?} should fail");
        let err = String::from_utf8(out.stderr).unwrap();
        assert_eq!(err.trim_end().lines().count(), 1, "{err}");
        assert!(err.starts_with("error["), "{err}");
    }
}

#[test]
fn desk_scale_pipeline_recovers_scenario_one() {
    let tmp = tempfile::tempdir().unwrap();
    let root = tmp.path();
    ok_in(root, &["simulate", "--scenario", "1", "--dims", "16x16", "--n-train", "250", "--n-test", "50", "--seed", "1", "--out", "sim"]);
    ok_in(root, &["fit", "--data", "sim/train", "--rank-b0", "2", "--rank-bt", "4", "--iters", "3000", "--burnin", "1000", "--seed", "1", "--out", "chain"]);
    ok_in(root, &["summarize", "--chain", "chain", "--out", "sum"]);
    ok_in(root, &["evaluate", "--est", "sum", "--truth", "sim", "--out", "eval"]);
    let table = fs::read_to_string(root.join("eval/metrics.csv")).unwrap();
    let rows: Vec<Vec<&str>> = table.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for row in &rows[..2] {
        let corr: f64 = row[3].parse().unwrap();
        assert!(corr > 0.9, "visit {}: correlation {corr}", row[0]);
    }
}
