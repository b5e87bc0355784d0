//! The ablation sweep, dataset loading and the run-manifest log.

use std::fs::{self, OpenOptions};
use std::io::Write;
use std::path::{Path, PathBuf};
use std::time::Instant;

use log::info;
use serde::{Deserialize, Serialize};

use super::config::{AblationConfig, RunConfig, ABLATION_GRID};
use super::cv::{cross_validate, score_rows, write_score_table, CvPlan};
use super::pretrain::{pretrain_with, Model};
use crate::data::dataset::{load_dataset_with, Split};
use crate::data::synth::synth_generate_with;
use crate::data::EcgRecord;
use crate::error::{Error, Result};
use crate::exec::Exec;

pub const CHECKPOINT_FILE: &str = "checkpoint.bssl";
pub const SCORES_FILE: &str = "scores.csv";
pub const CONFIG_FILE: &str = "config.toml";
pub const MANIFEST_LOG: &str = "run_manifest.jsonl";

/// Every record of the configured dataset: loaded from `data.root`, or
/// generated from `data.synthetic` when no root is set.
pub fn load_records(cfg: &RunConfig, exec: Exec) -> Result<Vec<EcgRecord>> {
    match &cfg.data.root {
        Some(root) => load_dataset_with(root, &Split::All, exec),
        None => synth_generate_with(&cfg.data.synthetic, exec),
    }
}

/// Records whose fold is listed in `data.pretrain_folds`.
pub fn pretrain_records(records: &[EcgRecord], cfg: &RunConfig) -> Vec<EcgRecord> {
    records.iter().filter(|r| r.fold.is_some_and(|f| cfg.data.pretrain_folds.contains(&f))).cloned().collect()
}

/// Output directory of one experiment.
pub fn run_dir(out: &Path, cfg: &RunConfig) -> PathBuf {
    out.join(format!("{}_s{}", cfg.hash(), cfg.train.seed))
}

/// Rows to sweep: the full grid, or an explicit selection checked against it.
pub fn ablation_plan(rows: Option<&[AblationConfig]>, strict: bool) -> Result<Vec<AblationConfig>> {
    match rows {
        None => Ok(ABLATION_GRID.to_vec()),
        Some([]) => Err(Error::Config("empty ablation row selection".into())),
        Some(rows) => {
            for r in rows {
                r.validate(strict)?;
            }
            Ok(rows.to_vec())
        }
    }
}

/// One completed stage.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StageEntry {
    pub stage: String,
    pub config_hash: String,
    pub seed: u64,
    pub ablation: String,
    pub wall_time_s: f64,
    pub output: PathBuf,
}

/// Append-only JSON-lines log.
#[derive(Debug, Clone)]
pub struct RunLog {
    path: PathBuf,
}

impl RunLog {
    pub fn new(out_dir: &Path) -> Self {
        Self { path: out_dir.join(MANIFEST_LOG) }
    }

    pub fn path(&self) -> &Path {
        &self.path
    }

    pub fn record(&self, stage: &str, cfg: &RunConfig, started: Instant, output: &Path) -> Result<()> {
        let entry = StageEntry {
            stage: stage.to_string(),
            config_hash: cfg.hash(),
            seed: cfg.train.seed,
            ablation: cfg.ablation().to_string(),
            wall_time_s: started.elapsed().as_secs_f64(),
            output: output.to_path_buf(),
        };
        if let Some(dir) = self.path.parent() {
            fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        }
        let mut f = OpenOptions::new().create(true).append(true).open(&self.path).map_err(|e| Error::io(&self.path, e))?;
        writeln!(f, "{}", serde_json::to_string(&entry)?).map_err(|e| Error::io(&self.path, e))
    }

    pub fn read(&self) -> Result<Vec<StageEntry>> {
        let text = fs::read_to_string(&self.path).map_err(|e| Error::io(&self.path, e))?;
        text.lines().filter(|l| !l.trim().is_empty()).map(|l| Ok(serde_json::from_str(l)?)).collect()
    }
}

/// Artifacts of one swept configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct AblationOutput {
    pub ablation: AblationConfig,
    pub config_hash: String,
    pub dir: PathBuf,
    pub checkpoint: PathBuf,
    pub scores: PathBuf,
}

/// Pretrains and evaluates every row of the plan, writing
/// `<out>/<hash>_s<seed>/{config.toml, checkpoint.bssl, scores.csv}`.
pub fn run_ablation(
    base: &RunConfig,
    rows: &[AblationConfig],
    records: &[EcgRecord],
    strict: bool,
    out: &Path,
    exec: Exec,
) -> Result<Vec<AblationOutput>> {
    let pre = pretrain_records(records, base);
    let log = RunLog::new(out);
    let mut outputs = Vec::with_capacity(rows.len());
    for (i, &row) in rows.iter().enumerate() {
        let cfg = base.with_ablation(row);
        cfg.validate(strict)?;
        let hash = cfg.hash();
        let dir = run_dir(out, &cfg);
        fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
        let cfg_path = dir.join(CONFIG_FILE);
        fs::write(&cfg_path, cfg.to_toml()?).map_err(|e| Error::io(&cfg_path, e))?;
        info!("ablation {}/{}: [{row}] -> {}", i + 1, rows.len(), dir.display());

        let t = Instant::now();
        let (ck, _) = pretrain_with(&pre, &cfg, strict, exec)?;
        let ck_path = dir.join(CHECKPOINT_FILE);
        ck.save(&ck_path)?;
        log.record("pretrain", &cfg, t, &ck_path)?;

        let encoder = Model::from_checkpoint(&ck)?.encoder;
        let mut reports = Vec::new();
        for &task in &cfg.eval.tasks {
            let t = Instant::now();
            reports.extend(cross_validate(&encoder, records, &cfg, CvPlan::from_config(task, &cfg), &hash, exec)?);
            log.record(task.name(), &cfg, t, &dir)?;
        }
        let scores = dir.join(SCORES_FILE);
        write_score_table(&scores, &score_rows(&reports))?;
        outputs.push(AblationOutput { ablation: row, config_hash: hash, dir, checkpoint: ck_path, scores });
    }
    Ok(outputs)
}
