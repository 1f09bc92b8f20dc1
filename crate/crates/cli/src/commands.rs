//! The four subcommands. Each returns a summary the binary prints; all
//! file output goes under the configured directories.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use dsrl::checkpoint::Checkpoint;
use dsrl::data::{
    assign_splits, read_feature_file, read_manifest, synth_generate, write_feature_file, write_manifest,
    FeatureSequence, ManifestEntry, Split,
};
use dsrl::pipeline::{evaluate, train, EpochLog, EvalReport, ModelConfig, TrainingLog};
use dsrl::selftest::{run_selftest, SelftestOptions, SelftestReport};
use rayon::prelude::*;
use serde::Serialize;

use crate::{CliError, RunConfig};

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::Runtime(format!("{}: {e}", path.display()))
}

fn create_dir(path: &Path) -> Result<(), CliError> {
    fs::create_dir_all(path).map_err(|e| io_error(path, e))
}

fn write_json(path: &Path, value: &impl Serialize) -> Result<(), CliError> {
    let mut text = serde_json::to_string_pretty(value).expect("serializable value");
    text.push('\n');
    fs::write(path, text).map_err(|e| io_error(path, e))
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GenSummary {
    pub manifest: PathBuf,
    pub videos: usize,
    pub violent: usize,
    pub snippets: usize,
    pub train: usize,
    pub val: usize,
    pub test: usize,
}

impl std::fmt::Display for GenSummary {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        writeln!(
            f,
            "generated {} videos ({} violent, {} normal), {} snippets",
            self.videos,
            self.violent,
            self.videos - self.violent,
            self.snippets
        )?;
        writeln!(f, "splits: train {}, val {}, test {}", self.train, self.val, self.test)?;
        write!(f, "manifest: {}", self.manifest.display())
    }
}

/// Generates the synthetic dataset, one feature file per video, and a
/// manifest split 70/15/15 by count.
pub fn cmd_gen(cfg: &RunConfig) -> Result<GenSummary, CliError> {
    let videos = synth_generate(&cfg.synth)?;
    let dir = cfg.data_dir();
    create_dir(&dir)?;
    let splits = assign_splits(videos.len());
    videos
        .par_iter()
        .try_for_each(|v| write_feature_file(v, &dir.join(format!("{}.dsrf", v.id))))
        .map_err(|e| CliError::Runtime(e.to_string()))?;
    let entries: Vec<ManifestEntry> = videos
        .iter()
        .zip(&splits)
        .map(|(v, &split)| ManifestEntry {
            id: v.id.clone(),
            path: format!("{}.dsrf", v.id),
            split,
        })
        .collect();
    let manifest = cfg.manifest_path();
    write_manifest(&entries, &manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    let count = |s: Split| splits.iter().filter(|&&x| x == s).count();
    Ok(GenSummary {
        manifest,
        videos: videos.len(),
        violent: videos.iter().filter(|v| v.video_label == 1).count(),
        snippets: videos.iter().map(FeatureSequence::len).sum(),
        train: count(Split::Train),
        val: count(Split::Val),
        test: count(Split::Test),
    })
}

/// Reads every video of `split` listed in the manifest, in manifest order.
pub fn load_split(cfg: &RunConfig, split: Split) -> Result<Vec<FeatureSequence>, CliError> {
    let manifest = cfg.manifest_path();
    let entries = read_manifest(&manifest).map_err(|e| CliError::Runtime(e.to_string()))?;
    let base = manifest.parent().unwrap_or(Path::new("."));
    entries
        .par_iter()
        .filter(|e| e.split == split)
        .map(|e| {
            let f = read_feature_file(&base.join(&e.path)).map_err(|err| CliError::Runtime(err.to_string()))?;
            if f.id != e.id {
                return Err(CliError::Runtime(format!("{}: file holds video {}", e.path, f.id)));
            }
            Ok(f)
        })
        .collect()
}

/// Input dimensions shared by every video.
fn common_dims(videos: &[FeatureSequence]) -> Result<(usize, usize), CliError> {
    let first = videos
        .first()
        .ok_or_else(|| CliError::Runtime("split is empty".into()))?;
    let dims = (first.visual_dim(), first.audio_dim());
    if let Some(v) = videos.iter().find(|v| (v.visual_dim(), v.audio_dim()) != dims) {
        return Err(CliError::Runtime(format!(
            "{} has input dims {}+{}, expected {}+{}",
            v.id,
            v.visual_dim(),
            v.audio_dim(),
            dims.0,
            dims.1
        )));
    }
    Ok(dims)
}

/// Contents of the training log file.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TrainLogFile {
    pub config: ModelConfig,
    pub train_videos: usize,
    pub val_videos: usize,
    #[serde(flatten)]
    pub log: TrainingLog,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainSummary {
    pub checkpoint: PathBuf,
    pub log_path: PathBuf,
    pub log: TrainingLog,
}

/// Trains on the train split, selecting the epoch with the best validation
/// AP, and writes the checkpoint and the training log.
pub fn cmd_train(cfg: &RunConfig, on_epoch: impl FnMut(&EpochLog)) -> Result<TrainSummary, CliError> {
    let train_set = load_split(cfg, Split::Train)?;
    let val_set = load_split(cfg, Split::Val)?;
    let (dv, da) = common_dims(&train_set)?;
    if !val_set.is_empty() && common_dims(&val_set)? != (dv, da) {
        return Err(CliError::Runtime("train and val splits have different input dims".into()));
    }
    let (model, mut store) = dsrl::pipeline::Model::new(cfg.model.clone(), dv, da)?;
    let log = train(&model, &mut store, &train_set, &val_set, on_epoch)?;
    create_dir(&cfg.out)?;
    let checkpoint = cfg.checkpoint_path();
    if let Some(parent) = checkpoint.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    Checkpoint::from_model(&model, &store)
        .write(&checkpoint)
        .map_err(dsrl::Error::from)?;
    let log_path = cfg.train_log_path();
    write_json(
        &log_path,
        &TrainLogFile {
            config: model.config.clone(),
            train_videos: train_set.len(),
            val_videos: val_set.len(),
            log: log.clone(),
        },
    )?;
    Ok(TrainSummary {
        checkpoint,
        log_path,
        log,
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalSummary {
    pub report: EvalReport,
    pub metrics_path: PathBuf,
    pub csv_dir: PathBuf,
}

/// Writes `metrics.json` with `{AP, AUC}` and one `<id>.csv` of
/// `snippet,score,label` rows per video into `dir`.
pub fn write_eval_outputs(dir: &Path, report: &EvalReport) -> Result<(PathBuf, PathBuf), CliError> {
    let csv_dir = dir.join("scores");
    create_dir(&csv_dir)?;
    let metrics = dir.join("metrics.json");
    write_json(&metrics, report)?;
    for v in &report.videos {
        let path = csv_dir.join(format!("{}.csv", v.id));
        let mut text = String::from("snippet,score,label\n");
        for (i, (s, l)) in v.scores.iter().zip(&v.labels).enumerate() {
            text.push_str(&format!("{i},{s},{l}\n"));
        }
        let mut file = fs::File::create(&path).map_err(|e| io_error(&path, e))?;
        file.write_all(text.as_bytes()).map_err(|e| io_error(&path, e))?;
    }
    Ok((metrics, csv_dir))
}

/// Scores the test split with the checkpoint and writes metrics and
/// per-video score files.
pub fn cmd_eval(cfg: &RunConfig) -> Result<EvalSummary, CliError> {
    let path = cfg.checkpoint_path();
    let ckpt = Checkpoint::read(&path).map_err(dsrl::Error::from)?;
    let test_set = load_split(cfg, Split::Test)?;
    let (dv, da) = common_dims(&test_set)?;
    ckpt.check_features(&path, dv, da).map_err(dsrl::Error::from)?;
    let (model, store) = ckpt.into_model(&path)?;
    let report = evaluate(&model, &store, &test_set)?;
    let (metrics_path, csv_dir) = write_eval_outputs(&cfg.eval_dir(), &report)?;
    Ok(EvalSummary {
        report,
        metrics_path,
        csv_dir,
    })
}

/// Runs every suite; a failing suite becomes [`CliError::Selftest`].
pub fn cmd_selftest(opts: &SelftestOptions) -> Result<SelftestReport, (SelftestReport, CliError)> {
    let report = run_selftest(opts);
    if report.passed() {
        Ok(report)
    } else {
        let failures = report.failures().join(", ");
        Err((report, CliError::Selftest(failures)))
    }
}
