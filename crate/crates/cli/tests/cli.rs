use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use entrodrop_core::trace::{Snapshot, SnapshotLabel};
use entrodrop_core::{read_trace, write_trace, ActivationTrace, Matrix, Rng};
use tempfile::TempDir;

const SMALL_MODEL: &[&str] = &[
    "--layers", "3", "--hidden-dim", "16", "--heads", "2", "--ffn-dim", "32", "--vocab", "32",
];
const SMALL_CORPUS: &[&str] = &["--sequences", "8", "--seq-len", "16"];

fn entrodrop(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_entrodrop"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn ok(args: &[&str]) -> Output {
    let out = entrodrop(args);
    assert!(
        out.status.success(),
        "{args:?} failed: {}",
        String::from_utf8_lossy(&out.stderr)
    );
    out
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn small_trace(dir: &TempDir, name: &str, seed: &str) -> PathBuf {
    let path = dir.path().join(name);
    let mut args = vec!["trace", "--seed", seed, "--out", s(&path)];
    args.extend_from_slice(SMALL_MODEL);
    args.extend_from_slice(SMALL_CORPUS);
    ok(&args);
    path
}

fn small_plan(dir: &TempDir, trace: &Path, extra: &[&str]) -> PathBuf {
    let path = dir.path().join("plan.json");
    let mut args = vec!["plan", "--trace", s(trace), "--out", s(&path)];
    args.extend_from_slice(extra);
    ok(&args);
    path
}

fn plan_json(path: &Path) -> serde_json::Value {
    serde_json::from_str(&std::fs::read_to_string(path).unwrap()).unwrap()
}

#[test]
fn trace_is_deterministic_and_readable() {
    let dir = TempDir::new().unwrap();
    let a = small_trace(&dir, "a.etrc", "42");
    let b = small_trace(&dir, "b.etrc", "42");
    let bytes = std::fs::read(&a).unwrap();
    assert_eq!(bytes, std::fs::read(&b).unwrap());
    let trace = read_trace(&bytes[..]).unwrap();
    assert_eq!(trace.snapshots().len(), 7);
    assert_eq!(trace.token_count(), 8 * 16);
    let c = small_trace(&dir, "c.etrc", "43");
    assert_ne!(bytes, std::fs::read(c).unwrap());
}

#[test]
fn manifest_names_outputs_by_checksum() {
    let dir = TempDir::new().unwrap();
    let trace = small_trace(&dir, "t.etrc", "7");
    let manifest: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(dir.path().join("t.etrc.manifest.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(manifest["subcommand"], "trace");
    assert_eq!(manifest["seed"], 7);
    assert_eq!(manifest["parameters"]["model"]["layers"], 3);
    let outputs = manifest["outputs"].as_array().unwrap();
    assert_eq!(outputs.len(), 1);
    use sha2::Digest;
    let digest: String = sha2::Sha256::digest(std::fs::read(&trace).unwrap())
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect();
    assert_eq!(outputs[0]["sha256"], digest.as_str());
}

#[test]
fn zero_layers_is_a_flag_error() {
    let dir = TempDir::new().unwrap();
    let out = entrodrop(&["trace", "--layers", "0", "--out", s(&dir.path().join("x"))]);
    assert_eq!(out.status.code(), Some(2));
    assert!(!String::from_utf8_lossy(&out.stderr).is_empty());
    let out = entrodrop(&["plan", "--k", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}

#[test]
fn unreadable_trace_exits_with_io_code() {
    let dir = TempDir::new().unwrap();
    let missing = dir.path().join("missing.etrc");
    let out = entrodrop(&["analyze", "--trace", s(&missing), "--out", s(&dir.path().join("p"))]);
    assert_eq!(out.status.code(), Some(3));
    let garbage = dir.path().join("garbage.etrc");
    std::fs::write(&garbage, b"not a trace at all").unwrap();
    let out = entrodrop(&["analyze", "--trace", s(&garbage), "--out", s(&dir.path().join("p"))]);
    assert_eq!(out.status.code(), Some(3));
}

fn constant_trace(path: &Path) {
    let mut rng = Rng::new(5);
    let data = Matrix::from_fn(50, 6, |_, _| rng.normal() as f32);
    let snapshots = SnapshotLabel::sequence(2)
        .into_iter()
        .map(|label| Snapshot {
            label,
            data: data.clone(),
        })
        .collect();
    let trace = ActivationTrace::new(snapshots, "constant", 0).unwrap();
    write_trace(&trace, std::fs::File::create(path).unwrap()).unwrap();
}

#[test]
fn analyze_constant_trace_gives_zero_increase() {
    let dir = TempDir::new().unwrap();
    let trace = dir.path().join("const.etrc");
    constant_trace(&trace);
    let prefix = dir.path().join("profile");
    ok(&[
        "analyze", "--trace", s(&trace), "--estimator", "bucket", "--bins", "40", "--out",
        s(&prefix),
    ]);
    let csv = std::fs::read_to_string(dir.path().join("profile.csv")).unwrap();
    assert!(csv.contains(r#""bins":40"#), "{csv}");
    let header = csv.lines().find(|l| l.starts_with("block_index")).unwrap();
    let col = header.split(',').position(|c| c == "delta_h_nats").unwrap();
    let deltas: Vec<f64> = csv
        .lines()
        .skip_while(|l| !l.starts_with("block_index"))
        .skip(2)
        .map(|l| l.split(',').nth(col).unwrap().parse().unwrap())
        .collect();
    assert_eq!(deltas, vec![0.0, 0.0]);
    assert!(dir.path().join("profile.manifest.json").exists());
}

#[test]
fn analyze_chart_is_well_formed_svg() {
    let dir = TempDir::new().unwrap();
    let trace = small_trace(&dir, "t.etrc", "1");
    let prefix = dir.path().join("profile");
    ok(&["analyze", "--trace", s(&trace), "--estimator", "knn", "--neighbors", "5", "--out", s(&prefix)]);
    let svg = std::fs::read_to_string(dir.path().join("profile.svg")).unwrap();
    let doc = roxmltree::Document::parse(&svg).unwrap();
    let root = doc.root_element();
    assert_eq!(root.tag_name().name(), "svg");
    assert_eq!(root.tag_name().namespace(), Some("http://www.w3.org/2000/svg"));
    let polylines = root.children().filter(|n| n.has_tag_name("polyline")).count();
    assert_eq!(polylines, 2);
}

#[test]
fn plan_k_zero_and_protection_override() {
    let dir = TempDir::new().unwrap();
    let trace = small_trace(&dir, "t.etrc", "3");
    let plan = plan_json(&small_plan(&dir, &trace, &["--k", "0"]));
    assert_eq!(plan["prune_set"].as_array().unwrap().len(), 0);
    let plan = plan_json(&small_plan(&dir, &trace, &["--k", "3", "--s-start", "0"]));
    assert_eq!(plan["ranked"].as_array().unwrap().len(), 3);
    assert_eq!(plan["prune_set"].as_array().unwrap().len(), 3);
}

#[test]
fn plan_capacity_error_reports_eligible_count() {
    let dir = TempDir::new().unwrap();
    let trace = small_trace(&dir, "t.etrc", "3");
    let out = entrodrop(&[
        "plan", "--trace", s(&trace), "--k", "9", "--s-start", "2", "--out",
        s(&dir.path().join("p.json")),
    ]);
    assert_eq!(out.status.code(), Some(4));
    assert!(String::from_utf8_lossy(&out.stderr).contains("only 2 are eligible"));
}

fn cosine_distance(x: &Matrix, y: &Matrix) -> f64 {
    let mut total = 0.0;
    for t in 0..x.rows() {
        let (a, b) = (x.row(t), y.row(t));
        let dot: f64 = a.iter().zip(b).map(|(p, q)| *p as f64 * *q as f64).sum();
        let na: f64 = a.iter().map(|p| (*p as f64).powi(2)).sum::<f64>().sqrt();
        let nb: f64 = b.iter().map(|q| (*q as f64).powi(2)).sum::<f64>().sqrt();
        total += 1.0 - dot / (na * nb);
    }
    total / x.rows() as f64
}

#[test]
fn cosine_plan_matches_direct_ordering() {
    let dir = TempDir::new().unwrap();
    let trace_path = small_trace(&dir, "t.etrc", "11");
    let trace = read_trace(std::fs::File::open(&trace_path).unwrap()).unwrap();
    let snaps = trace.snapshots();
    for (flag, input, output) in [
        ("layer", [0, 2, 4], [2, 4, 6]),
        ("attention", [0, 2, 4], [1, 3, 5]),
        ("mlp", [1, 3, 5], [2, 4, 6]),
    ] {
        let mut order: Vec<(f64, usize)> = (0..3)
            .map(|b| (cosine_distance(&snaps[input[b]].data, &snaps[output[b]].data), b + 1))
            .collect();
        order.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));
        let plan = plan_json(&small_plan(
            &dir,
            &trace_path,
            &["--criterion", "cosine", "--granularity", flag, "--k", "1"],
        ));
        let ranked: Vec<usize> = plan["ranked"]
            .as_array()
            .unwrap()
            .iter()
            .map(|v| v.as_u64().unwrap() as usize)
            .collect();
        assert_eq!(ranked, order.iter().map(|o| o.1).collect::<Vec<_>>(), "{flag}");
    }
}

#[test]
fn evaluate_rows_per_prefix_and_k_zero_unchanged() {
    let dir = TempDir::new().unwrap();
    let trace = small_trace(&dir, "t.etrc", "42");
    let plan = small_plan(&dir, &trace, &["--k", "2", "--s-start", "0"]);
    let report = dir.path().join("eval.csv");
    let mut args = vec![
        "evaluate", "--seed", "42", "--plan", s(&plan), "--random-seeds", "3", "--out",
        s(&report),
    ];
    args.extend_from_slice(SMALL_MODEL);
    args.extend_from_slice(SMALL_CORPUS);
    ok(&args);
    let csv = std::fs::read_to_string(&report).unwrap();
    let rows: Vec<Vec<&str>> = csv.lines().skip(1).map(|l| l.split(',').collect()).collect();
    assert_eq!(rows.len(), 3);
    for (k, row) in rows.iter().enumerate() {
        assert_eq!(row[0], k.to_string());
    }
    assert_eq!(rows[0][2], rows[0][3]);
    assert_eq!(rows[0][4].parse::<f64>().unwrap(), 0.0);
}

#[test]
fn evaluate_rejects_plan_for_other_depth() {
    let dir = TempDir::new().unwrap();
    let trace = small_trace(&dir, "t.etrc", "42");
    let plan = small_plan(&dir, &trace, &["--k", "1", "--s-start", "0"]);
    let out = entrodrop(&[
        "evaluate", "--plan", s(&plan), "--layers", "4", "--hidden-dim", "16", "--heads", "2",
        "--ffn-dim", "32", "--vocab", "32", "--sequences", "4", "--seq-len", "8", "--out",
        s(&dir.path().join("e.csv")),
    ]);
    assert_eq!(out.status.code(), Some(4), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn bench_table_has_one_row_per_prefix() {
    let dir = TempDir::new().unwrap();
    let trace = small_trace(&dir, "t.etrc", "42");
    let plan = small_plan(&dir, &trace, &["--s-start", "0"]);
    let prefix = dir.path().join("bench");
    let mut args = vec![
        "bench", "--plan", s(&plan), "--seq-len", "16", "--gen-len", "16", "--repeats", "2",
        "--out", s(&prefix),
    ];
    args.extend_from_slice(SMALL_MODEL);
    ok(&args);
    let csv = std::fs::read_to_string(dir.path().join("bench.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next(), Some("k,mean_ms,std_ms"));
    let ks: Vec<usize> = lines.map(|l| l.split(',').next().unwrap().parse().unwrap()).collect();
    assert_eq!(ks, vec![0, 1, 2, 3]);
    let svg = std::fs::read_to_string(dir.path().join("bench.svg")).unwrap();
    roxmltree::Document::parse(&svg).unwrap();
}
