use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use dsrl::checkpoint::Checkpoint;
use dsrl::data::{average_precision, roc_auc, Split};
use dsrl::pipeline::{evaluate, EvalReport, VideoResult};
use dsrl_cli::{load_split, write_eval_outputs, Overrides, RunConfig};
use serde_json::Value;
use tempfile::TempDir;

const SMALL: &str = r#"{
  "synth": {"num_videos": 20, "t_min": 16, "t_max": 24},
  "model": {"dim": 8, "epochs": 2, "batch_size": 4}
}"#;

fn dsrl(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_dsrl"))
        .args(args)
        .env("DSRL_THREADS", "2")
        .output()
        .expect("binary runs")
}

fn code(o: &Output) -> i32 {
    o.status.code().expect("exit code")
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

struct Run {
    _dir: TempDir,
    config: PathBuf,
    out: PathBuf,
}

impl Run {
    fn new() -> Self {
        let dir = tempfile::tempdir().unwrap();
        let config = dir.path().join("config.json");
        std::fs::write(&config, SMALL).unwrap();
        let out = dir.path().join("out");
        Self { _dir: dir, config, out }
    }

    fn args<'a>(&'a self, cmd: &'a [&'a str]) -> Vec<&'a str> {
        let mut v = cmd.to_vec();
        v.extend(["--config", self.config.to_str().unwrap(), "--out", self.out.to_str().unwrap()]);
        v
    }

    fn run(&self, cmd: &[&str]) -> Output {
        dsrl(&self.args(cmd))
    }

    fn resolved(&self) -> RunConfig {
        RunConfig::resolve(
            Some(&self.config),
            &Overrides {
                out: Some(self.out.clone()),
                ..Overrides::default()
            },
        )
        .unwrap()
    }
}

fn read(path: &Path) -> Vec<u8> {
    std::fs::read(path).unwrap_or_else(|e| panic!("{}: {e}", path.display()))
}

#[test]
fn gen_is_deterministic_and_reports_splits() {
    let a = Run::new();
    let b = Run::new();
    for r in [&a, &b] {
        let o = r.run(&["gen", "--seed", "7"]);
        assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
        let text = stdout(&o);
        assert!(text.contains("generated 20 videos"), "{text}");
        assert!(text.contains("splits: train 14, val 3, test 3"), "{text}");
    }
    let manifest = |r: &Run| read(&r.out.join("data/manifest.json"));
    assert_eq!(manifest(&a), manifest(&b));
    let m: Value = serde_json::from_slice(&manifest(&a)).unwrap();
    for entry in m.as_array().unwrap() {
        let file = entry["path"].as_str().unwrap();
        assert_eq!(read(&a.out.join("data").join(file)), read(&b.out.join("data").join(file)));
    }
}

#[test]
fn zero_videos_is_a_validation_error() {
    let r = Run::new();
    let o = r.run(&["gen", "--videos", "0"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("num_videos"));
    assert!(!r.out.join("data/manifest.json").exists());
}

#[test]
fn usage_and_config_errors_exit_1() {
    let r = Run::new();
    assert_eq!(code(&dsrl(&["train", "--ablate", "bogus"])), 1);
    assert_eq!(code(&dsrl(&["frobnicate"])), 1);
    assert_eq!(code(&dsrl(&["--help"])), 0);

    std::fs::write(&r.config, r#"{"model": {"epoch": 3}}"#).unwrap();
    let o = r.run(&["gen"]);
    assert_eq!(code(&o), 1);
    assert!(String::from_utf8_lossy(&o.stderr).contains("unknown field"));

    let o = Command::new(env!("CARGO_BIN_EXE_dsrl"))
        .args(["selftest", "--draws", "10"])
        .env("DSRL_THREADS", "zero")
        .output()
        .unwrap();
    assert_eq!(code(&o), 1);
}

#[test]
fn missing_data_is_a_runtime_error() {
    let r = Run::new();
    assert_eq!(code(&r.run(&["train"])), 2);
    assert_eq!(code(&r.run(&["eval"])), 2);
}

#[test]
fn one_epoch_gives_a_one_entry_log() {
    let r = Run::new();
    assert_eq!(code(&r.run(&["gen", "--seed", "3"])), 0);
    let o = r.run(&["train", "--seed", "3", "--epochs", "1", "--batch", "8"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));
    let log: Value = serde_json::from_slice(&read(&r.out.join("train_log.json"))).unwrap();
    assert_eq!(log["epochs"].as_array().unwrap().len(), 1);
    assert_eq!(log["best_epoch"], 0);
    assert_eq!(log["config"]["epochs"], 1);
    assert_eq!(log["config"]["batch_size"], 8);
    assert_eq!(log["config"]["seed"], 3);
    assert!(r.out.join("model.ckpt").exists());
}

#[test]
fn eval_matches_in_process_evaluation() {
    let r = Run::new();
    assert_eq!(code(&r.run(&["gen"])), 0);
    assert_eq!(code(&r.run(&["train", "--ablate", "no-dsi"])), 0);
    let o = r.run(&["eval"]);
    assert_eq!(code(&o), 0, "{}", String::from_utf8_lossy(&o.stderr));

    let cfg = r.resolved();
    let test = load_split(&cfg, Split::Test).unwrap();
    let ckpt = Checkpoint::read(&cfg.checkpoint_path()).unwrap();
    assert_eq!(ckpt.config.ablation.name(), "no-dsi");
    let (model, store) = ckpt.into_model(&cfg.checkpoint_path()).unwrap();
    let expected = evaluate(&model, &store, &test).unwrap();

    let metrics: Value = serde_json::from_slice(&read(&r.out.join("eval/metrics.json"))).unwrap();
    assert_eq!(metrics.as_object().unwrap().len(), 2);
    assert_eq!(metrics["AP"].as_f64().unwrap(), expected.ap);
    assert_eq!(metrics["AUC"].as_f64().unwrap(), expected.auc);

    for (video, seq) in expected.videos.iter().zip({
        let mut t = test.clone();
        t.sort_by(|a, b| a.id.cmp(&b.id));
        t
    }) {
        let csv = String::from_utf8(read(&r.out.join(format!("eval/scores/{}.csv", video.id)))).unwrap();
        let mut lines = csv.lines();
        assert_eq!(lines.next(), Some("snippet,score,label"));
        let rows: Vec<&str> = lines.collect();
        assert_eq!(rows.len(), seq.len());
        for (i, row) in rows.iter().enumerate() {
            let f: Vec<&str> = row.split(',').collect();
            assert_eq!(f[0].parse::<usize>().unwrap(), i);
            assert_eq!(f[1].parse::<f64>().unwrap(), video.scores[i]);
            assert_eq!(f[2].parse::<u8>().unwrap(), video.labels[i]);
        }
    }
}

#[test]
fn eval_rejects_a_checkpoint_with_other_feature_dims() {
    let r = Run::new();
    assert_eq!(code(&r.run(&["gen"])), 0);
    assert_eq!(code(&r.run(&["train", "--epochs", "1"])), 0);
    std::fs::write(
        &r.config,
        r#"{"synth": {"num_videos": 20, "t_min": 16, "t_max": 24, "visual_dim": 12}, "model": {"dim": 8}}"#,
    )
    .unwrap();
    assert_eq!(code(&r.run(&["gen"])), 0);
    let o = r.run(&["eval"]);
    assert_eq!(code(&o), 2);
    assert!(String::from_utf8_lossy(&o.stderr).contains("trained on 24+16 input dims, data has 12+16"));
}

#[test]
fn perfect_oracle_scores_ap_one() {
    let dir = tempfile::tempdir().unwrap();
    let videos: Vec<VideoResult> = [(4, 1), (6, 3), (5, 0)]
        .iter()
        .enumerate()
        .map(|(i, &(t, positives))| {
            let labels: Vec<u8> = (0..t).map(|s| u8::from(s < positives)).collect();
            VideoResult {
                id: format!("v{i}"),
                scores: labels.iter().map(|&l| f64::from(l)).collect(),
                labels,
            }
        })
        .collect();
    let scores: Vec<f64> = videos.iter().flat_map(|v| v.scores.clone()).collect();
    let labels: Vec<u8> = videos.iter().flat_map(|v| v.labels.clone()).collect();
    let report = EvalReport {
        ap: average_precision(&scores, &labels).unwrap(),
        auc: roc_auc(&scores, &labels).unwrap(),
        videos: videos.clone(),
    };
    let (metrics, csv_dir) = write_eval_outputs(dir.path(), &report).unwrap();
    let m: Value = serde_json::from_slice(&read(&metrics)).unwrap();
    assert_eq!(m["AP"].as_f64(), Some(1.0));
    assert_eq!(m["AUC"].as_f64(), Some(1.0));
    for v in &videos {
        let csv = String::from_utf8(read(&csv_dir.join(format!("{}.csv", v.id)))).unwrap();
        assert_eq!(csv.lines().count(), v.scores.len() + 1);
    }
}

#[test]
fn training_twice_is_byte_identical() {
    let a = Run::new();
    let b = Run::new();
    for r in [&a, &b] {
        assert_eq!(code(&r.run(&["gen", "--seed", "11"])), 0);
        assert_eq!(code(&r.run(&["train", "--seed", "11"])), 0);
    }
    assert_eq!(read(&a.out.join("model.ckpt")), read(&b.out.join("model.ckpt")));
    assert_eq!(read(&a.out.join("train_log.json")), read(&b.out.join("train_log.json")));
}

#[test]
fn selftest_passes_and_catches_an_injected_fault() {
    let o = dsrl(&["selftest", "--draws", "500"]);
    assert_eq!(code(&o), 0, "{}", stdout(&o));
    assert!(stdout(&o).contains("suites passed"));

    let o = dsrl(&["selftest", "--draws", "500", "--inject-fault", "perturb-exp-map"]);
    assert_eq!(code(&o), 3);
    assert!(stdout(&o).contains("exp_map"));
    assert!(String::from_utf8_lossy(&o.stderr).contains("membership/exp_map"));
}
