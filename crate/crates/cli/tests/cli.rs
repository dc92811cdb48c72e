use std::fs;
use std::path::Path;
use std::process::{Command, Output};

fn kgeisd(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_kgeisd"))
        .args(args)
        .current_dir(cwd)
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\n{}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn write_config(dir: &Path, name: &str, isd: &str, out: &str) -> String {
    let text = format!(
        r#"{{
  "dataset_dir": "data",
  "output_dir": "{out}",
  "model": {{ "kind": "distmult", "d_e": 8 }},
  "train": {{ "batch_size": 16, "epochs": 10, "eval_every": 5, "seed": 3 }},
  "isd": {isd}
}}"#
    );
    fs::write(dir.join(name), text).unwrap();
    name.to_string()
}

/// Synthetic dataset in `dir/data` plus a finished 10-epoch run in `dir/out`.
fn trained(dir: &Path) {
    ok(&kgeisd(&["prepare", "data", "--synthetic"], dir));
    let cfg = write_config(dir, "run.json", r#"{ "enabled": true }"#, "out");
    ok(&kgeisd(&["train", "--config", &cfg, "--quiet"], dir));
}

#[test]
fn prepare_prints_statistics() {
    let dir = tempfile::tempdir().unwrap();
    let stdout = ok(&kgeisd(
        &["prepare", "data", "--synthetic", "--entities", "20"],
        dir.path(),
    ));
    let stats: serde_json::Value = serde_json::from_str(&stdout).unwrap();
    assert!(stats["entities"].as_u64().unwrap() <= 20);
    assert_eq!(stats["relations"], 3);
    assert_eq!(stats["test"], 6);
    for f in ["train.txt", "valid.txt", "test.txt"] {
        assert!(dir.path().join("data").join(f).exists());
    }
    // a second prepare only reads
    let again = ok(&kgeisd(&["prepare", "data"], dir.path()));
    assert_eq!(again, stdout);
}

#[test]
fn train_writes_one_metrics_line_per_epoch() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let out = dir.path().join("out");
    let text = fs::read_to_string(out.join("metrics.jsonl")).unwrap();
    let lines: Vec<serde_json::Value> = text
        .lines()
        .map(|l| serde_json::from_str(l).unwrap())
        .collect();
    assert_eq!(lines.len(), 10);
    for (i, l) in lines.iter().enumerate() {
        assert_eq!(l["epoch"], i);
        for key in ["loss_bce", "loss_kl", "beta", "lr"] {
            assert!(l[key].is_number(), "{key}");
        }
        assert_eq!(l.get("valid_mrr").is_some(), (i + 1) % 5 == 0);
    }
    assert!(out.join("checkpoint").join("manifest.json").exists());
    assert!(out.join("test_metrics.json").exists());
    assert!(out.join("config.json").exists());
}

#[test]
fn misspelled_key_exits_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    ok(&kgeisd(&["prepare", "data", "--synthetic"], dir.path()));
    let cfg = write_config(dir.path(), "bad.json", r#"{ "temprature": 5 }"#, "out");
    let out = kgeisd(&["train", "--config", &cfg], dir.path());
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("temprature"));
    assert!(!dir.path().join("out").exists());
}

#[test]
fn zero_beta_matches_disabled_distillation() {
    let dir = tempfile::tempdir().unwrap();
    ok(&kgeisd(&["prepare", "data", "--synthetic"], dir.path()));
    let a = write_config(
        dir.path(),
        "a.json",
        r#"{ "enabled": true, "beta_init": 0.0 }"#,
        "a",
    );
    let b = write_config(dir.path(), "b.json", r#"{ "enabled": false }"#, "b");
    ok(&kgeisd(&["train", "--config", &a, "--quiet"], dir.path()));
    ok(&kgeisd(&["train", "--config", &b, "--quiet"], dir.path()));
    for f in ["metrics.jsonl", "test_metrics.json"] {
        let x = fs::read(dir.path().join("a").join(f)).unwrap();
        let y = fs::read(dir.path().join("b").join(f)).unwrap();
        assert_eq!(x, y, "{f}");
    }
}

#[test]
fn resume_continues_from_the_checkpoint() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let first = fs::read(dir.path().join("out").join("metrics.jsonl")).unwrap();
    // the budget is spent, so resuming trains nothing and keeps the history
    ok(&kgeisd(
        &["train", "--config", "run.json", "--resume", "--quiet"],
        dir.path(),
    ));
    assert_eq!(
        fs::read(dir.path().join("out").join("metrics.jsonl")).unwrap(),
        first
    );
}

#[test]
fn evaluate_is_repeatable() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let args = ["evaluate", "out/checkpoint", "data", "test"];
    let a = ok(&kgeisd(&args, dir.path()));
    let b = ok(&kgeisd(&args, dir.path()));
    assert_eq!(a, b);
    let report: serde_json::Value = serde_json::from_str(&a).unwrap();
    let stored: serde_json::Value = serde_json::from_str(
        &fs::read_to_string(dir.path().join("out").join("test_metrics.json")).unwrap(),
    )
    .unwrap();
    assert_eq!(report, stored);
    for key in ["mrr", "h1", "h3", "h10"] {
        let v = report[key].as_f64().unwrap();
        assert!((0.0..=1.0).contains(&v));
    }
    let pess = ok(&kgeisd(
        &[
            "evaluate",
            "out/checkpoint",
            "data",
            "valid",
            "--ties",
            "pessimistic",
        ],
        dir.path(),
    ));
    assert!(serde_json::from_str::<serde_json::Value>(&pess).is_ok());
}

#[test]
fn evaluate_rejects_bad_inputs() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    let out = kgeisd(&["evaluate", "out/checkpoint", "data", "train"], dir.path());
    assert_eq!(out.status.code(), Some(2));

    ok(&kgeisd(
        &[
            "prepare",
            "other",
            "--synthetic",
            "--seed",
            "9",
            "--entities",
            "25",
        ],
        dir.path(),
    ));
    let out = kgeisd(&["evaluate", "out/checkpoint", "other", "test"], dir.path());
    assert_eq!(
        out.status.code(),
        Some(2),
        "{}",
        String::from_utf8_lossy(&out.stderr)
    );

    let out = kgeisd(&["evaluate", "missing", "data", "test"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}

#[test]
fn exported_embeddings_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    trained(dir.path());
    ok(&kgeisd(
        &["export-embeddings", "out/checkpoint", "emb.tsv"],
        dir.path(),
    ));
    let text = fs::read_to_string(dir.path().join("emb.tsv")).unwrap();
    let entities = fs::read_to_string(dir.path().join("out/checkpoint/entities.txt")).unwrap();
    let names: Vec<&str> = entities.lines().collect();
    let rows: Vec<Vec<&str>> = text.lines().map(|l| l.split('\t').collect()).collect();
    assert_eq!(rows.len(), names.len());

    let bytes = fs::read(dir.path().join("out/checkpoint/entity.bin")).unwrap();
    let rank = u32::from_le_bytes(bytes[4..8].try_into().unwrap()) as usize;
    let dims: Vec<usize> = (0..rank)
        .map(|i| u64::from_le_bytes(bytes[8 + 8 * i..16 + 8 * i].try_into().unwrap()) as usize)
        .collect();
    let body = &bytes[8 + 8 * rank..];
    assert_eq!(dims, vec![names.len(), 8]);
    for (i, row) in rows.iter().enumerate() {
        assert_eq!(row[0], names[i]);
        assert_eq!(row.len(), 9);
        for j in 0..8 {
            let k = 8 * (i * 8 + j);
            let want = f64::from_le_bytes(body[k..k + 8].try_into().unwrap());
            let got: f64 = row[j + 1].parse().unwrap();
            assert!((got - want).abs() <= 1e-15 * want.abs().max(1.0));
        }
    }

    let out = kgeisd(
        &["export-embeddings", "out/checkpoint", "no/such/dir/emb.tsv"],
        dir.path(),
    );
    assert!(!out.status.success());
}

#[test]
fn count_params_reads_the_config() {
    let dir = tempfile::tempdir().unwrap();
    ok(&kgeisd(&["prepare", "data", "--synthetic"], dir.path()));
    let off = write_config(dir.path(), "off.json", r#"{ "enabled": false }"#, "out");
    let on = write_config(dir.path(), "on.json", r#"{ "enabled": true }"#, "out");
    let n_off: usize = ok(&kgeisd(&["count-params", "--config", &off], dir.path()))
        .trim()
        .parse()
        .unwrap();
    let n_on: usize = ok(&kgeisd(&["count-params", "--config", &on], dir.path()))
        .trim()
        .parse()
        .unwrap();
    let stats: serde_json::Value =
        serde_json::from_str(&ok(&kgeisd(&["prepare", "data"], dir.path()))).unwrap();
    let (ne, nr) = (
        stats["entities"].as_u64().unwrap() as usize,
        stats["relations"].as_u64().unwrap() as usize,
    );
    assert_eq!(n_off, ne * 8 + 2 * nr * 8);
    // block: W_C and W_K are d × k_b, W_P is bs × N_e
    assert_eq!(n_on - n_off, 2 * 8 * 8 + 16 * ne);
}

#[test]
fn usage_errors_exit_with_config_code() {
    let dir = tempfile::tempdir().unwrap();
    let out = kgeisd(&["train"], dir.path());
    assert_eq!(out.status.code(), Some(2));
    let out = kgeisd(&["train", "--config", "absent.json"], dir.path());
    assert_eq!(out.status.code(), Some(1));
}
