//! End-to-end checks of the `mgf` binary.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SUBCOMMANDS: [&str; 8] = [
    "synth", "pretrain", "probe", "sweep", "ablate", "features", "maskplan", "gradcheck",
];

const TINY_CONFIG: &str = r#"{
  "encoder": {"stem_channels": 8, "d_model": 16, "d_ff": 64, "heads": 2,
              "encoder_blocks": 1, "decoder_blocks": 1, "proj_dim": 16},
  "train": {"epochs": 1, "warmup_steps": 4,
            "objective": {"crop_samples": 16000, "negatives": 4}},
  "probe": {"epochs": 10},
  "finetune": {"epochs": 1}
}"#;

fn mgf(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_mgf"))
        .args(args)
        .env("MGF_THREADS", "1")
        .output()
        .expect("binary runs")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn s(p: &Path) -> &str {
    p.to_str().unwrap()
}

fn golden_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("tests/golden")
}

#[test]
fn help_matches_golden_files() {
    let update = std::env::var_os("UPDATE_GOLDEN").is_some();
    let mut cases = vec![("mgf".to_string(), mgf(&["--help"]))];
    for sub in SUBCOMMANDS {
        cases.push((format!("mgf-{sub}"), mgf(&[sub, "--help"])));
    }
    for (name, out) in cases {
        assert_eq!(out.status.code(), Some(0), "{name}");
        let text = stdout(&out);
        let path = golden_dir().join(format!("{name}.help.txt"));
        if update {
            fs::create_dir_all(golden_dir()).unwrap();
            fs::write(&path, &text).unwrap();
        } else {
            let want = fs::read_to_string(&path)
                .unwrap_or_else(|_| panic!("missing {}; rerun with UPDATE_GOLDEN=1", path.display()));
            assert_eq!(text, want, "{name} help changed; rerun with UPDATE_GOLDEN=1");
        }
    }
}

#[test]
fn exit_codes_separate_usage_validation_and_success() {
    assert_eq!(mgf(&[]).status.code(), Some(1));
    assert_eq!(mgf(&["frobnicate"]).status.code(), Some(1));
    assert_eq!(mgf(&["maskplan", "--frames", "ten"]).status.code(), Some(1));
    assert_eq!(mgf(&["--version"]).status.code(), Some(0));
    let bad_task = mgf(&["probe", "--task", "phones", "--out", "/nonexistent/mgf"]);
    assert_eq!(bad_task.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&bad_task.stderr).contains("phones"));
    let bad_fraction = mgf(&["probe", "--label-fraction", "0", "--out", "/nonexistent/mgf"]);
    assert_eq!(bad_fraction.status.code(), Some(1));
    let missing = mgf(&["pretrain", "--config", "/nonexistent/config.json"]);
    assert_eq!(missing.status.code(), Some(2));
}

#[test]
fn maskplan_reports_segments_and_coverage() {
    let dir = tempfile::tempdir().unwrap();
    let out = mgf(&["maskplan", "--frames", "200", "--seed", "3", "--out", s(dir.path())]);
    assert_eq!(out.status.code(), Some(0));
    let text = stdout(&out);
    assert_eq!(text.lines().filter(|l| l.starts_with("segment ")).count(), 2);
    assert!(text.contains("coverage 14.0%"), "{text}");
    let json: serde_json::Value =
        serde_json::from_str(&fs::read_to_string(dir.path().join("maskplan.json")).unwrap())
            .unwrap();
    assert_eq!(json["segments"].as_array().unwrap().len(), 2);
    assert_eq!(text, stdout(&mgf(&["maskplan", "--frames", "200", "--seed", "3"])));
}

#[test]
fn synth_then_features_writes_one_csv_per_target() {
    let dir = tempfile::tempdir().unwrap();
    let data = dir.path().join("data");
    let out = mgf(&[
        "synth", "--classes", "2", "--speakers", "2", "--utt", "1", "--seconds", "0.5", "--out",
        s(&data),
    ]);
    assert_eq!(out.status.code(), Some(0));
    assert!(data.join("manifest.jsonl").exists());
    let feats = dir.path().join("feats");
    let out = mgf(&["features", "--data", s(&data), "--kind", "LPS-25,mfcc-400", "--out", s(&feats)]);
    assert_eq!(out.status.code(), Some(0), "{}", String::from_utf8_lossy(&out.stderr));
    let files = fs::read_dir(feats.join("features")).unwrap().count();
    assert_eq!(files, 4);
    let csv = fs::read_to_string(feats.join("features/spk000_utt000.LPS-25.csv")).unwrap();
    let mut lines = csv.lines();
    assert_eq!(lines.next().unwrap().split(',').count(), 1 + 257);
    assert_eq!(lines.count(), 50);
}

#[test]
fn pretrain_probe_pipeline_is_byte_reproducible() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("tiny.json");
    fs::write(&cfg, TINY_CONFIG).unwrap();
    let data = dir.path().join("data");
    assert_eq!(
        mgf(&[
            "synth", "--classes", "3", "--speakers", "3", "--utt", "2", "--seconds", "1.1",
            "--out", s(&data),
        ])
        .status
        .code(),
        Some(0)
    );
    let run = |name: &str| -> PathBuf {
        let out_dir = dir.path().join(name);
        let o = mgf(&[
            "pretrain", "--config", s(&cfg), "--data", s(&data), "--seed", "5", "--out",
            s(&out_dir),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        out_dir
    };
    let (a, b) = (run("a"), run("b"));
    for f in ["checkpoint.mgf", "train_log.csv", "run_config.json", "train_loss.svg"] {
        assert_eq!(fs::read(a.join(f)).unwrap(), fs::read(b.join(f)).unwrap(), "{f}");
    }

    let probe = |name: &str| -> String {
        let out_dir = dir.path().join(name);
        let o = mgf(&[
            "probe", "--config", s(&cfg), "--data", s(&data), "--checkpoint",
            s(&a.join("checkpoint.mgf")), "--out", s(&out_dir),
        ]);
        assert_eq!(o.status.code(), Some(0), "{}", String::from_utf8_lossy(&o.stderr));
        fs::read_to_string(out_dir.join("probe_results.csv")).unwrap()
    };
    let csv = probe("p1");
    assert_eq!(csv, probe("p2"));
    let mut lines = csv.lines();
    assert_eq!(
        lines.next().unwrap(),
        "task,accuracy,train_size,test_size,label_fraction,seed,checkpoint_id,dataset"
    );
    let rows: Vec<&str> = lines.collect();
    assert_eq!(rows.len(), 3);
    for row in rows {
        let cols: Vec<&str> = row.split(',').collect();
        let acc: f64 = cols[1].parse().unwrap();
        assert!((0.0..=1.0).contains(&acc));
        assert_eq!(cols[6].len(), 64);
        assert!(cols[7].ends_with("manifest.jsonl"));
    }
}

#[test]
fn lambda_needs_four_weights() {
    let o = mgf(&["pretrain", "--lambda", "1,1,1", "--out", "/nonexistent/mgf"]);
    assert_eq!(o.status.code(), Some(1));
    assert!(String::from_utf8_lossy(&o.stderr).contains("4 weights"));
    let o = mgf(&["pretrain", "--lambda", "0,0,0,0", "--out", "/nonexistent/mgf"]);
    assert_eq!(o.status.code(), Some(1));
}
