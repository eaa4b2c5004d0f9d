use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use atp_core::attention::AttentionConfig;
use atp_core::io::{read_matx, write_matx};
use atp_core::linalg::RankPolicy;
use atp_core::model::{save_layer, EncoderLayer, PeMode, PositionalEncoding};
use atp_core::{Dtype, Matrix};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde_json::Value;

fn atp(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atp")).args(args).current_dir(cwd).output().unwrap()
}

fn atp_env(args: &[&str], cwd: &Path, key: &str, value: &str) -> Output {
    Command::new(env!("CARGO_BIN_EXE_atp")).args(args).current_dir(cwd).env(key, value).output().unwrap()
}

fn code(o: &Output) -> i32 {
    o.status.code().unwrap()
}

fn json(o: &Output) -> Value {
    serde_json::from_slice(&o.stdout).unwrap_or_else(|e| panic!("{e}: {}", String::from_utf8_lossy(&o.stdout)))
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn write(dir: &Path, name: &str, m: &Matrix) {
    write_matx(m, dir.join(name), Dtype::F64).unwrap();
}

fn rank_one(l: usize, d: usize) -> Matrix {
    Matrix::from_fn(l, d, |i, j| (i as f64 + 1.0) * (0.5 - j as f64 * 0.25))
}

fn layer(dir: &Path, d: usize, heads: usize, pe: PeMode) {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let layer =
        EncoderLayer::random(d, d, 2 * d, heads, RankPolicy::Fraction(1.0), AttentionConfig::default(), &mut rng)
            .unwrap();
    save_layer(dir, &layer, &PositionalEncoding::new(pe)).unwrap();
}

#[test]
fn help_and_version_exit_zero() {
    let dir = tempfile::tempdir().unwrap();
    assert_eq!(code(&atp(&["--help"], dir.path())), 0);
    assert_eq!(code(&atp(&["--version"], dir.path())), 0);
    assert_eq!(code(&atp(&["frobnicate"], dir.path())), 1);
    assert_eq!(code(&atp(&[], dir.path())), 1);
}

#[test]
fn profile_rank_one_corpus_and_partial_failure() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    for i in 0..3 {
        write(p, &format!("s{i}.matx"), &rank_one(10 + i, 6));
    }
    let manifest = r#"{"entries": [
        {"path": "s0.matx", "length": 10}, {"path": "s1.matx", "length": 11}, {"path": "s2.matx", "length": 12}
    ]}"#;
    fs::write(p.join("m.json"), manifest).unwrap();
    let out = atp(&["profile", "m.json", "--bins", "4"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let report = json(&out);
    for rec in report["records"].as_array().unwrap() {
        let l = rec["length"].as_f64().unwrap();
        assert!((rec["ratio"].as_f64().unwrap() - 1.0 / l).abs() < 1e-12);
    }

    let csv = atp(&["profile", "m.json", "--bins", "4", "--format", "csv"], p);
    assert_eq!(code(&csv), 0);
    let text = String::from_utf8(csv.stdout).unwrap();
    assert!(text.starts_with("bucket_lo,bucket_hi,bin_lo,bin_hi,density\n"));
    assert_eq!(text.lines().count(), 5);

    fs::write(p.join("bad.matx"), b"not a matrix").unwrap();
    let manifest = r#"{"entries": [{"path": "s0.matx", "length": 10}, {"path": "bad.matx", "length": 4}]}"#;
    fs::write(p.join("partial.json"), manifest).unwrap();
    let out = atp(&["profile", "partial.json", "-o", "report.json"], p);
    assert_eq!(code(&out), 2);
    let report: Value = serde_json::from_slice(&fs::read(p.join("report.json")).unwrap()).unwrap();
    assert_eq!(report["records"].as_array().unwrap().len(), 1);
    assert_eq!(report["errors"].as_array().unwrap().len(), 1);

    let missing = atp(&["profile", "nope.json"], p);
    assert_eq!(code(&missing), 1);
    assert!(stderr(&missing).contains("nope.json"));
}

#[test]
fn decompose_reports_and_round_trips() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    write(p, "r1.matx", &rank_one(12, 5));
    let out = atp(&["decompose", "r1.matx", "--rank", "1", "-o", "r1"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(json(&out)["residual"].as_f64().unwrap() <= 1e-10);

    // Decaying spectrum: exact is optimal.
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    let g: Matrix = Matrix::random_normal(30, 20, &mut rng);
    let x = g.matmul(&Matrix::diag(&(0..20).map(|i| 0.7f64.powi(i)).collect::<Vec<_>>())).unwrap();
    write(p, "x.matx", &x);
    let exact = json(&atp(&["decompose", "x.matx", "--rank", "4", "--method", "exact", "-o", "ex"], p));
    let alt = json(&atp(&["decompose", "x.matx", "--rank", "4", "-o", "alt"], p));
    assert!(exact["residual"].as_f64().unwrap() <= alt["residual"].as_f64().unwrap());

    let u: Matrix = read_matx(p.join("alt/U.matx")).unwrap();
    let xp: Matrix = read_matx(p.join("alt/Xp.matx")).unwrap();
    let residual = u.matmul(&xp).unwrap().relative_frobenius_error(&x).unwrap();
    assert!((residual - alt["residual"].as_f64().unwrap()).abs() <= 1e-12);
    let file: Value = serde_json::from_slice(&fs::read(p.join("alt/factors.json")).unwrap()).unwrap();
    assert_eq!(file, alt);
    assert_eq!(alt["orthonormal"], true);

    let no_reorth = json(&atp(&["decompose", "x.matx", "--rank", "4", "--reorthogonalize", "false", "-o", "n"], p));
    assert_eq!(no_reorth["orthonormal"], false);

    for bad in [&["--fraction", "0"][..], &["--rank", "0"], &["--entropy-scale=-1"], &["--rank", "21"]] {
        let mut args = vec!["decompose", "x.matx"];
        args.extend_from_slice(bad);
        let out = atp(&args, p);
        assert_eq!(code(&out), 1, "{bad:?}");
        assert!(stderr(&out).contains("--rank"), "usage text for {bad:?}");
    }
    assert_eq!(code(&atp(&["decompose", "x.matx", "--rank", "2", "--fraction", "0.5"], p)), 1);
}

fn discrepancy(v: &Value, pair: &str) -> f64 {
    v[pair]["max_abs"].as_f64().unwrap()
}

#[test]
fn attend_modes_and_comparisons() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let d = 8;
    layer(&p.join("layer"), d, 2, PeMode::None);
    let mut rng = ChaCha8Rng::seed_from_u64(4);

    // Exact rank 3 and a full-rank policy.
    let a: Matrix = Matrix::random_normal(16, 3, &mut rng);
    write(p, "x.matx", &a.matmul(&Matrix::random_normal(3, d, &mut rng)).unwrap());
    let out = atp(&["attend", "x.matx", "layer", "--compare", "--rank", "3"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(discrepancy(&json(&out), "lowrank_vs_oracle") <= 1e-8);
    let out = atp(&["attend", "x.matx", "layer", "--compare", "--fraction", "1"], p);
    assert!(discrepancy(&json(&out), "lowrank_vs_oracle") <= 1e-8);

    // A single token: every mode returns that token's value row.
    write(p, "one.matx", &Matrix::random_normal(1, d, &mut rng));
    let cmp = json(&atp(&["attend", "one.matx", "layer", "--compare"], p));
    for pair in ["lowrank_vs_oracle", "lowrank_vs_standard", "oracle_vs_standard"] {
        assert!(discrepancy(&cmp, pair) <= 1e-8, "{pair}");
    }

    for mode in ["standard", "lowrank", "oracle"] {
        let file = format!("{mode}.matx");
        let out = atp(&["attend", "x.matx", "layer", "--mode", mode, "-o", &file], p);
        assert_eq!(code(&out), 0);
        let y: Matrix = read_matx(p.join(&file)).unwrap();
        assert_eq!(y.shape(), (16, d));
    }
    let csv = atp(&["attend", "x.matx", "layer", "--mode", "standard"], p);
    assert_eq!(String::from_utf8(csv.stdout).unwrap().lines().count(), 16);

    write(p, "wide.matx", &Matrix::zeros(4, d + 1));
    let out = atp(&["attend", "wide.matx", "layer"], p);
    assert_eq!(code(&out), 1);
    assert!(stderr(&out).contains("X (4x9) vs Wq (8x8)"), "{}", stderr(&out));
}

#[test]
fn attend_with_position_encodings() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    layer(&p.join("abs"), 6, 1, PeMode::AbsoluteSinusoidal);
    layer(&p.join("rot"), 6, 1, PeMode::Rotary);
    write(p, "x.matx", &Matrix::random_normal(5, 6, &mut ChaCha8Rng::seed_from_u64(2)));
    for bundle in ["abs", "rot"] {
        let out = atp(&["attend", "x.matx", bundle, "--compare", "--fraction", "1"], p);
        assert_eq!(code(&out), 0, "{}", stderr(&out));
        assert!(discrepancy(&json(&out), "lowrank_vs_oracle") <= 1e-8, "{bundle}");
    }
}

#[test]
fn bench_reports_and_refusal() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let args = ["bench", "--lengths", "64", "--rank", "8", "--dims", "16,8", "--repeats", "1"];
    let out = atp(&args, p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let rep = json(&out);
    assert!(rep.get("op_slopes").is_none());
    assert_eq!(rep["runs"].as_array().unwrap().len(), 2);
    assert!(rep["timing"]["runs"][1]["wall_ns"].is_u64());
    assert_eq!(
        rep["runs"][0]["multiplies"],
        rep["runs"][0]["predicted"]["attention"]["multiplies"].as_u64().unwrap() + 3 * 64 * 16 * 8
    );

    let two = json(&atp(&["bench", "--lengths", "32,64", "--rank", "8", "--dims", "16,8", "--repeats", "1"], p));
    assert!((two["op_slopes"]["standard"].as_f64().unwrap() - 2.0).abs() < 1e-9);
    assert!((two["op_slopes"]["lowrank"].as_f64().unwrap() - 1.0).abs() < 1e-9);

    let csv =
        atp(&["bench", "--lengths", "32,64", "--rank", "8", "--dims", "16,8", "--repeats", "1", "--format", "csv"], p);
    assert_eq!(String::from_utf8(csv.stdout).unwrap().lines().count(), 5);

    let refused = atp_env(&args, p, "ATP_MEMORY_BUDGET_BYTES", "1024");
    assert_eq!(code(&refused), 3);
    assert!(stderr(&refused).contains("predicted"));
    assert_eq!(code(&atp_env(&args, p, "ATP_MEMORY_BUDGET_BYTES", "lots")), 1);
    assert_eq!(code(&atp(&["bench", "--lengths", "64,32", "--rank", "8", "--dims", "16,8"], p)), 1);
    assert_eq!(code(&atp(&["bench", "--lengths", "64", "--dims", "16"], p)), 1);
}

#[test]
fn gradcheck_exit_codes() {
    let dir = tempfile::tempdir().unwrap();
    let out = atp(&["gradcheck"], dir.path());
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(json(&out)["worst_relative_error"].as_f64().unwrap() <= 1e-4);
    assert_eq!(code(&atp(&["gradcheck", "--trials", "0"], dir.path())), 1);
    assert_eq!(code(&atp(&["gradcheck", "--sizes", "4x8x2"], dir.path())), 1);
    assert_eq!(code(&atp(&["gradcheck", "--sizes", "banana"], dir.path())), 1);
}

#[test]
fn synth_writes_corpus_and_layer() {
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path();
    let out = atp(
        &[
            "synth",
            "--count",
            "3",
            "--length",
            "10",
            "--dim",
            "4",
            "--intrinsic-rank",
            "2",
            "--layer",
            "l",
            "--heads",
            "2",
            "-o",
            "c",
        ],
        p,
    );
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    assert!(p.join("c/manifest.json").exists() && p.join("c/seq_00002.matx").exists());
    assert!(p.join("l/layer.json").exists());
    let out = atp(&["attend", "c/seq_00000.matx", "l", "--compare"], p);
    assert_eq!(code(&out), 0, "{}", stderr(&out));
    let bad = atp(&["synth", "--count", "1", "--length", "4", "--dim", "4", "--intrinsic-rank", "5"], p);
    assert_eq!(code(&bad), 1);
}
