//! Command-level tests against the compiled binary: exit-code classes,
//! output files, and manifest replays.

use std::path::Path;
use std::process::{Command, Output};

fn figmtl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_figmtl"))
        .args(args)
        .output()
        .expect("binary runs")
}

fn stdout(output: &Output) -> String {
    String::from_utf8_lossy(&output.stdout).into_owned()
}

fn stderr(output: &Output) -> String {
    String::from_utf8_lossy(&output.stderr).into_owned()
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("reading {}: {e}", path.display()))
}

/// Tiny-but-real settings shared by the training-based tests.
fn tiny_train_args<'a>(out: &'a str, extra: &[&'a str]) -> Vec<&'a str> {
    let mut args = vec![
        "train",
        "--data",
        "synth",
        "--regime",
        "mtl-f",
        "--out",
        out,
        "--seed",
        "5",
        "--set",
        "synth.size=24",
        "--set",
        "encoder.d_model=16",
        "--set",
        "encoder.n_heads=2",
        "--set",
        "encoder.n_layers=1",
        "--set",
        "encoder.ffn_dim=32",
        "--set",
        "encoder.max_len=16",
        "--set",
        "train.epochs=2",
    ];
    args.extend_from_slice(extra);
    args
}

#[test]
fn missing_dataset_flag_exits_2_naming_the_flag() {
    let output = figmtl(&["train", "--regime", "mtl-f", "--out", "/tmp/figmtl-none"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("--data"), "{}", stderr(&output));
}

#[test]
fn unknown_config_key_exits_2() {
    let output = figmtl(&["stats", "--data", "synth", "--set", "bogus.key=1"]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("bogus.key"));
}

#[test]
fn missing_file_exits_3() {
    let output = figmtl(&["stats", "--data", "/no/such/file.jsonl", "--out", "/tmp/figmtl-none"]);
    assert_eq!(output.status.code(), Some(3));
}

#[test]
fn numeric_blowup_exits_4() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let out = out.to_str().unwrap();
    let args = tiny_train_args(out, &["--set", "train.lr=1e100", "--set", "train.epochs=3"]);
    let output = figmtl(&args);
    assert_eq!(output.status.code(), Some(4), "stderr: {}", stderr(&output));
}

#[test]
fn lambda_without_mtle_exits_2() {
    let output = figmtl(&[
        "train", "--data", "synth", "--regime", "mtl-f", "--set", "train.lambda=0.3",
    ]);
    assert_eq!(output.status.code(), Some(2));
    assert!(stderr(&output).contains("lambda"));
}

#[test]
fn stats_on_four_quadrant_fixture() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("fixture.jsonl");
    std::fs::write(
        &data,
        concat!(
            r#"{"id":"a","text":"both","hyperbole":1,"metaphor":1,"source":"other"}"#,
            "\n",
            r#"{"id":"b","text":"hyp","hyperbole":1,"metaphor":0,"source":"other"}"#,
            "\n",
            r#"{"id":"c","text":"met","hyperbole":0,"metaphor":1,"source":"other"}"#,
            "\n",
            r#"{"id":"d","text":"none","hyperbole":0,"metaphor":0,"source":"other"}"#,
            "\n",
        ),
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = figmtl(&[
        "stats",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let payload: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    assert_eq!(payload["quadrants"]["both"], 1);
    assert_eq!(payload["quadrants"]["hyperbole_only"], 1);
    assert_eq!(payload["quadrants"]["metaphor_only"], 1);
    assert_eq!(payload["quadrants"]["neither"], 1);
    assert_eq!(payload["quadrants"]["total"], 4);
    assert!(out.join("stats.json").exists());
    assert!(out.join("manifest.cfg").exists());
}

#[test]
fn kappa_on_identical_annotators_prints_unit_matrix() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("annotations.csv");
    std::fs::write(
        &data,
        "item_id,annotator_id,label\n\
         s1,A,1\ns1,B,1\ns2,A,0\ns2,B,0\ns3,A,1\ns3,B,1\n",
    )
    .unwrap();
    let out = dir.path().join("out");
    let output = figmtl(&[
        "kappa",
        "--data",
        data.to_str().unwrap(),
        "--out",
        out.to_str().unwrap(),
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    assert!(text.contains("A vs B: 1.000"), "{text}");
    assert!(text.contains("Fleiss' kappa: 1.000"));
    assert!(out.join("agreement.json").exists());
}

#[test]
fn balance_writes_downsampled_jsonl() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("unbalanced.jsonl");
    let mut lines = String::new();
    for i in 0..40 {
        let h = u8::from(i < 8);
        lines.push_str(&format!(
            "{{\"id\":\"r{i}\",\"text\":\"sentence {i}\",\"hyperbole\":{h},\"metaphor\":0,\"source\":\"other\"}}\n"
        ));
    }
    std::fs::write(&data, &lines).unwrap();
    let out = dir.path().join("out");
    let output = figmtl(&[
        "balance",
        "--data",
        data.to_str().unwrap(),
        "--label",
        "hyperbole",
        "--ratio",
        "2.0",
        "--out",
        out.to_str().unwrap(),
        "--seed",
        "9",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let balanced = String::from_utf8(read(&out.join("balanced.jsonl"))).unwrap();
    let rows: Vec<serde_json::Value> =
        balanced.lines().map(|l| serde_json::from_str(l).unwrap()).collect();
    let positives = rows.iter().filter(|r| r["hyperbole"] == 1).count();
    assert_eq!(positives, 8);
    assert_eq!(rows.len() - positives, 16);
    // Inputs are never mutated.
    assert_eq!(std::fs::read_to_string(&data).unwrap(), lines);
}

#[test]
fn attend_on_a_zeroed_attention_checkpoint_is_near_uniform() {
    use figmtl::corpus::Vocabulary;
    use figmtl::model::{save_checkpoint, Checkpoint, EncoderConfig, ModelParams, Regime};

    let dir = tempfile::tempdir().unwrap();
    let vocab = Vocabulary::build(["a million stars fell over the quiet town"], 64);
    let config = EncoderConfig {
        vocab_size: vocab.len(),
        d_model: 16,
        n_heads: 2,
        n_layers: 1,
        max_len: 16,
        ffn_dim: 32,
        dropout_rate: 0.0,
    };
    let mut params = ModelParams::init(config, Regime::MtlF, 3).unwrap();
    for layer in &mut params.encoder.layers {
        for t in [&mut layer.wq, &mut layer.bq, &mut layer.wk, &mut layer.bk] {
            t.data.iter_mut().for_each(|x| *x = 0.0);
        }
    }
    let checkpoint_path = dir.path().join("checkpoint.json");
    save_checkpoint(&checkpoint_path, &Checkpoint::new(params, vocab)).unwrap();

    let out = dir.path().join("out");
    let output = figmtl(&[
        "attend",
        "--checkpoint",
        checkpoint_path.to_str().unwrap(),
        "--sentence",
        "a million stars fell",
        "--out",
        out.to_str().unwrap(),
        "--format",
        "json",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let map: serde_json::Value = serde_json::from_str(&stdout(&output)).unwrap();
    let weights: Vec<f64> =
        map["weights"].as_array().unwrap().iter().map(|w| w.as_f64().unwrap()).collect();
    let uniform = 1.0 / weights.len() as f64;
    for w in &weights {
        assert!((w - uniform).abs() < 1e-9, "weight {w} vs uniform {uniform}");
    }
    assert!(out.join("salience.html").exists());
}

#[test]
fn train_manifest_replays_byte_identically() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("run1");
    let out1_str = out1.to_str().unwrap();
    let args = tiny_train_args(out1_str, &[]);
    let first = figmtl(&args);
    assert_eq!(first.status.code(), Some(0), "stderr: {}", stderr(&first));

    let out2 = dir.path().join("run2");
    let replay = figmtl(&[
        "train",
        "--config",
        out1.join("manifest.cfg").to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
    ]);
    assert_eq!(replay.status.code(), Some(0), "stderr: {}", stderr(&replay));

    for name in ["checkpoint.json", "loss_trace.json", "manifest.cfg"] {
        assert_eq!(
            read(&out1.join(name)),
            read(&out2.join(name)),
            "{name} differs between run and replay"
        );
    }
}

#[test]
fn compare_manifest_replays_byte_identically_across_job_counts() {
    let dir = tempfile::tempdir().unwrap();
    let out1 = dir.path().join("cmp1");
    let output = figmtl(&[
        "compare",
        "--data",
        "synth",
        "--regimes",
        "stl-hyperbole,mtl-f",
        "--k",
        "2",
        "--out",
        out1.to_str().unwrap(),
        "--seed",
        "7",
        "--jobs",
        "1",
        "--set",
        "synth.size=30",
        "--set",
        "eval.run_seeds=11,12",
        "--set",
        "encoder.d_model=16",
        "--set",
        "encoder.n_heads=2",
        "--set",
        "encoder.n_layers=1",
        "--set",
        "encoder.ffn_dim=32",
        "--set",
        "encoder.max_len=16",
        "--set",
        "train.epochs=1",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));

    let out2 = dir.path().join("cmp2");
    let replay = figmtl(&[
        "compare",
        "--config",
        out1.join("manifest.cfg").to_str().unwrap(),
        "--out",
        out2.to_str().unwrap(),
        "--jobs",
        "2",
    ]);
    assert_eq!(replay.status.code(), Some(0), "stderr: {}", stderr(&replay));

    for name in ["report.json", "report.txt", "report_folds.csv", "manifest.cfg"] {
        assert_eq!(
            read(&out1.join(name)),
            read(&out2.join(name)),
            "{name} differs between jobs=1 run and jobs=2 replay"
        );
    }
}

#[test]
fn corpus_hash_mismatch_on_replay_is_a_data_error() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("run");
    let args = tiny_train_args(out.to_str().unwrap(), &[]);
    assert_eq!(figmtl(&args).status.code(), Some(0));

    // Change the data the manifest points at; the recorded hash must catch it.
    let manifest = out.join("manifest.cfg");
    let patched = std::fs::read_to_string(&manifest)
        .unwrap()
        .replace("synth.size = 24", "synth.size = 25");
    std::fs::write(&manifest, patched).unwrap();
    let replay = figmtl(&[
        "train",
        "--config",
        manifest.to_str().unwrap(),
        "--out",
        dir.path().join("run2").to_str().unwrap(),
    ]);
    assert_eq!(replay.status.code(), Some(3), "stderr: {}", stderr(&replay));
    assert!(stderr(&replay).contains("hash"));
}

#[test]
fn compare_emits_three_block_table_for_all_regimes() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("out");
    let output = figmtl(&[
        "compare",
        "--data",
        "synth",
        "--regimes",
        "stl,mtl-e,mtl-f",
        "--k",
        "2",
        "--out",
        out.to_str().unwrap(),
        "--set",
        "synth.size=40",
        "--set",
        "eval.run_seeds=3",
        "--set",
        "encoder.d_model=16",
        "--set",
        "encoder.n_heads=2",
        "--set",
        "encoder.n_layers=1",
        "--set",
        "encoder.ffn_dim=32",
        "--set",
        "encoder.max_len=16",
        "--set",
        "train.epochs=1",
    ]);
    assert_eq!(output.status.code(), Some(0), "stderr: {}", stderr(&output));
    let text = stdout(&output);
    // Task blocks cover all four regime rows and both tasks.
    for needle in ["stl-hyperbole", "stl-metaphor", "mtl-e", "mtl-f"] {
        assert!(text.contains(needle), "missing {needle} in:\n{text}");
    }
    // Four significance lines: 2 tasks × 2 multi-task contenders.
    assert_eq!(text.matches("significance [").count(), 4);
    let csv = std::fs::read_to_string(out.join("report_folds.csv")).unwrap();
    // 1 run × 2 folds × (1+1+2+2 task-cells) = 12 records + header.
    assert_eq!(csv.lines().count(), 13);
}
