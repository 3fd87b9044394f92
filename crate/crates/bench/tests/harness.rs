use std::fs;
use std::path::Path;
use std::process::Command;

use delta_bench::analysis::{calibrate_delta_layers, layer_overlap};
use delta_bench::{execute, gen_model, read_weights, run_benchmark, RunConfig, RunOverrides, CSV_COLUMNS};
use delta_core::{ModelConfig, Observation, WeightSet32};
use proptest::prelude::*;

fn small(layers: usize, hidden: usize) -> ModelConfig {
    ModelConfig {
        num_layers: layers,
        hidden_dim: hidden,
        num_query_heads: 4,
        num_kv_groups: 2,
        ffn_dim: 2 * hidden,
        vocab_size: 64,
        rope_base: 10_000.0,
    }
}

fn overrides(model: &Path, out: &Path) -> RunOverrides {
    RunOverrides {
        model: Some(model.to_path_buf()),
        out: Some(out.to_path_buf()),
        full_layers: Some(vec![0]),
        delta_layers: Some(vec![1, 3]),
        budget_k: Some(32),
        recency_l: Some(8),
        page_size: Some(8),
        prompt_len: Some(40),
        max_new: Some(24),
        ..Default::default()
    }
}

#[test]
fn gen_model_is_deterministic_and_loads() {
    let dir = tempfile::tempdir().unwrap();
    let (a, b, c) = (dir.path().join("a"), dir.path().join("b"), dir.path().join("c"));
    gen_model(small(4, 64), 7, &a).unwrap();
    gen_model(small(4, 64), 7, &b).unwrap();
    gen_model(small(4, 64), 8, &c).unwrap();
    assert_eq!(fs::read(&a).unwrap(), fs::read(&b).unwrap());
    assert_ne!(fs::read(&a).unwrap(), fs::read(&c).unwrap());
    let w = read_weights(&a).unwrap();
    assert_eq!(w.config, small(4, 64));
    assert_eq!(w.layers.len(), 4);
    assert_eq!(w.layers[0].w_k.shape(), (64, 32));
    assert_eq!(w.unembedding.shape(), (64, 64));
}

#[test]
fn weight_magnitudes_match_uniform_moment() {
    // |U(-a, a)| has mean a / 2.
    let h = 64;
    let w = WeightSet32::random(small(4, h), 1).unwrap();
    let mut all: Vec<f32> = w.embedding.as_slice().to_vec();
    for l in &w.layers {
        for m in [&l.w_q, &l.w_k, &l.w_v, &l.w_o, &l.w_1, &l.w_2] {
            all.extend_from_slice(m.as_slice());
        }
    }
    all.extend_from_slice(w.unembedding.as_slice());
    let bound = 1.0 / (h as f64).sqrt();
    assert!(all.iter().all(|&v| (v as f64).abs() <= bound + 1e-7));
    let mean = all.iter().map(|v| v.abs() as f64).sum::<f64>() / all.len() as f64;
    let want = bound / 2.0;
    assert!((mean - want).abs() / want < 0.05, "mean |w| {mean} vs {want}");
}

#[test]
fn run_writes_one_row_per_token() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.dltw");
    gen_model(small(5, 32), 2, &model).unwrap();
    let out = dir.path().join("runs/delta.csv");
    let cfg = RunConfig::resolve(RunOverrides { record_recall: Some(true), ..overrides(&model, &out) }).unwrap();
    let report = run_benchmark(&cfg).unwrap();

    let mut rd = csv::Reader::from_path(&out).unwrap();
    assert_eq!(rd.headers().unwrap().iter().collect::<Vec<_>>(), CSV_COLUMNS);
    let rows: Vec<csv::StringRecord> = rd.records().map(|r| r.unwrap()).collect();
    assert_eq!(rows.len(), 24);
    let b = 32 / 8;
    for r in &rows {
        let seq_len: usize = r[1].parse().unwrap();
        assert_eq!(&r[2], "delta");
        let attended: f64 = r[5].parse().unwrap();
        if seq_len > 32 {
            assert!(attended <= (b * 8) as f64);
        }
        let (mean, min): (f64, f64) = (r[6].parse().unwrap(), r[7].parse().unwrap());
        assert!((0.0..=1.0).contains(&min) && min <= mean && mean <= 1.0 + 1e-12);
    }
    let summary: serde_json::Value = serde_json::from_str(&fs::read_to_string(cfg.summary_path()).unwrap()).unwrap();
    assert_eq!(summary["final_seq_len"], 64);
    assert_eq!(summary["generated_tokens"], 24);
    assert_eq!(summary["tokens"][0].as_array().unwrap().len(), 24);
    assert_eq!(report.sequences[0].tokens.len(), 24);
    assert!(!cfg.trace_path().exists());
}

#[test]
fn full_and_large_budget_delta_agree() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.dltw");
    gen_model(small(5, 32), 3, &model).unwrap();
    let w = read_weights(&model).unwrap();
    let tokens = |policy: &str| {
        let o = RunOverrides {
            policy: Some(policy.into()),
            budget_k: Some(128),
            batch: Some(3),
            ..overrides(&model, &dir.path().join("x.csv"))
        };
        let report = execute(&RunConfig::resolve(o).unwrap(), w.clone()).unwrap();
        report.sequences.iter().map(|s| s.tokens.clone()).collect::<Vec<_>>()
    };
    let full = tokens("full");
    assert_eq!(full.len(), 3);
    assert_eq!(tokens("delta"), full);
    assert_eq!(tokens("quest"), full);
}

#[test]
fn invalid_tiers_are_configuration_errors() {
    let dir = tempfile::tempdir().unwrap();
    let model = dir.path().join("m.dltw");
    gen_model(small(5, 32), 3, &model).unwrap();
    let o = RunOverrides { delta_layers: Some(vec![2]), ..overrides(&model, &dir.path().join("x.csv")) };
    let err = run_benchmark(&RunConfig::resolve(o).unwrap()).unwrap_err();
    assert!(matches!(err.downcast_ref::<delta_core::Error>(), Some(delta_core::Error::Config(_))));
}

fn bin(args: &[&str]) -> std::process::Output {
    Command::new(env!("CARGO_BIN_EXE_delta-bench")).args(args).output().unwrap()
}

#[test]
fn cli_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let model = p("m.dltw");
    let out = bin(&[
        "gen-model", "--out", &model, "--layers", "5", "--hidden", "32", "--heads", "4", "--groups", "2", "--ffn",
        "64", "--vocab", "64", "--seed", "1",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));

    let config = serde_json::json!({
        "model": model, "policy": "delta", "full_layers": [0], "delta_layers": [1, 3],
        "budget_k": 32, "recency_l": 8, "page_size": 8, "prompt_len": 40, "max_new": 12,
        "batch": 1, "seed": 5, "record_recall": false, "record_overlap_every": 1, "out": p("file.csv")
    });
    fs::write(p("run.json"), config.to_string()).unwrap();
    let out = bin(&["run", "--config", &p("run.json"), "--policy", "full", "--out", &p("flag.csv")]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(!dir.path().join("file.csv").exists());
    let csv = fs::read_to_string(p("flag.csv")).unwrap();
    assert_eq!(csv.lines().count(), 13);
    assert!(csv.lines().nth(1).unwrap().contains(",full,"));

    let out = bin(&["analyze", "--trace", &p("flag.trace.json")]);
    assert!(out.status.success());
    let a: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    assert_eq!(a["sequences"][0]["mean_drift"].as_array().unwrap().len(), 5);

    let out = bin(&["calibrate", "--trace", &p("flag.trace.json"), "--n-delta", "2", "--full-prefix", "1"]);
    assert!(out.status.success());
    let c: serde_json::Value = serde_json::from_slice(&out.stdout).unwrap();
    let layers: Vec<usize> = serde_json::from_value(c["delta_layers"].clone()).unwrap();
    assert_eq!(layers.len(), 2);
    assert!(layers[0] >= 1 && layers[0] < layers[1] && layers[1] < 5);

    let out = bin(&["run", "--config", &p("run.json"), "--recency-l", "64"]);
    assert!(!out.status.success());
    let out = bin(&["run", "--model", &p("missing.dltw"), "--out", &p("y.csv")]);
    assert!(!out.status.success());
}

#[test]
fn sweep_cli_reports_requested_grid() {
    let dir = tempfile::tempdir().unwrap();
    let p = |s: &str| dir.path().join(s).to_string_lossy().into_owned();
    let model = p("m.dltw");
    gen_model(small(5, 32), 4, Path::new(&model)).unwrap();
    let out = bin(&[
        "sweep", "--model", &model, "--out", &p("grid.csv"), "--full-layers", "0", "--delta-layers", "1,3",
        "--page-size", "8", "--prompt-len", "70", "--max-new", "4", "--k-values", "32,64", "--l-values", "1,8,64",
    ]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(String::from_utf8_lossy(&out.stderr).contains("skipping K=32 L=64"));
    let grid = fs::read_to_string(p("grid.csv")).unwrap();
    assert_eq!(grid.lines().count(), 1 + 5);
}

proptest! {
    #[test]
    fn self_overlap_is_one(alpha in prop::collection::vec(0.0f64..1.0, 1..50), k in 1usize..50) {
        prop_assume!(k <= alpha.len());
        prop_assert_eq!(layer_overlap(&[alpha.clone(), alpha], k).unwrap(), vec![1.0]);
    }

    #[test]
    fn calibration_stays_in_range(
        sets in prop::collection::vec(prop::collection::vec(prop::collection::vec(0usize..20, 0..6), 8), 1..6),
        n in 1usize..6,
        f in 0usize..4,
    ) {
        let trace: Vec<Observation> =
            sets.into_iter().enumerate().map(|(i, layers)| Observation { step: i as u64, seq_len: 20, layers }).collect();
        let got = calibrate_delta_layers(&trace, n, f).unwrap();
        prop_assert_eq!(got.len(), n);
        prop_assert!(got.windows(2).all(|w| w[0] < w[1]));
        prop_assert!(got.iter().all(|&l| l >= f && l < 8));
    }
}
