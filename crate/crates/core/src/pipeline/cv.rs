//! Repeated k-fold evaluation and the CSV score table.

use std::fs;
use std::path::Path;

use log::info;
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::config::RunConfig;
use super::probe::{multi_hot, probe_classes, probe_features, score_probe, train_probe, ProbeSplit};
use super::segment::segmentation_finetune;
use crate::data::EcgRecord;
use crate::error::{Error, Result};
use crate::exec::Exec;
use crate::nn::Encoder;
use crate::seeds::{derive_seed, rng_for};
use crate::stats::{MetricReport, Task};

/// Folds reserved for probe testing.
pub const PROBE_TEST_FOLDS: [u8; 2] = [9, 10];
/// Folds the probe is trained on.
pub const PROBE_TRAIN_FOLDS: std::ops::RangeInclusive<u8> = 1..=8;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CvPlan {
    pub task: Task,
    pub k: usize,
    pub runs: usize,
    pub seed: u64,
}

impl CvPlan {
    pub fn from_config(task: Task, cfg: &RunConfig) -> Self {
        let k = match task {
            Task::Probe => cfg.eval.probe_folds,
            Task::Segment => cfg.eval.segment_folds,
        };
        Self { task, k, runs: cfg.eval.runs, seed: cfg.train.seed }
    }
}

/// Fails if any probe test record belongs to a training fold.
pub fn check_probe_test_split(test: &[EcgRecord]) -> Result<()> {
    for r in test {
        match r.fold {
            Some(f) if PROBE_TRAIN_FOLDS.contains(&f) => {
                return Err(Error::Leakage(format!("test record {} is in training fold {f}", r.record_id)))
            }
            None => return Err(Error::Leakage(format!("test record {} has no fold", r.record_id))),
            _ => {}
        }
    }
    Ok(())
}

/// `k` near-equal chunks of `0..n` after a seeded shuffle.
fn chunks(n: usize, k: usize, seed: u64, run: usize) -> Vec<Vec<usize>> {
    let mut idx: Vec<usize> = (0..n).collect();
    idx.shuffle(&mut rng_for(seed, &[run as u64]));
    let mut out = vec![Vec::new(); k];
    for (i, v) in idx.into_iter().enumerate() {
        out[i % k].push(v);
    }
    for c in &mut out {
        c.sort_unstable();
    }
    out
}

fn check_k(k: usize, runs: usize, pool: usize, what: &str) -> Result<()> {
    if runs == 0 {
        return Err(Error::Config("cross-validation needs at least one run".into()));
    }
    if k < 2 || k > pool {
        return Err(Error::Config(format!("k = {k} folds is incompatible with {pool} {what} records")));
    }
    Ok(())
}

fn subset(split: &ProbeSplit, idx: &[usize]) -> ProbeSplit {
    ProbeSplit {
        features: idx.iter().map(|&i| split.features[i].clone()).collect(),
        labels: idx.iter().map(|&i| split.labels[i].clone()).collect(),
    }
}

/// Runs `plan.runs` × `plan.k` evaluation cells.
///
/// Probe: trained on folds 1-8, tested on one of `k` chunks of folds 9-10.
/// Segment: plain k-fold over all records carrying wave masks.
pub fn cross_validate(
    encoder: &Encoder,
    records: &[EcgRecord],
    cfg: &RunConfig,
    plan: CvPlan,
    config_hash: &str,
    exec: Exec,
) -> Result<Vec<MetricReport>> {
    let mut reports = match plan.task {
        Task::Probe => cv_probe(encoder, records, cfg, plan, exec)?,
        Task::Segment => cv_segment(encoder, records, cfg, plan, exec)?,
    };
    for r in &mut reports {
        r.config_hash = config_hash.to_string();
    }
    Ok(reports)
}

fn cv_probe(encoder: &Encoder, records: &[EcgRecord], cfg: &RunConfig, plan: CvPlan, exec: Exec) -> Result<Vec<MetricReport>> {
    let pc = &cfg.eval.probe;
    let in_folds = |folds: &[u8]| -> Vec<EcgRecord> {
        records.iter().filter(|r| r.fold.is_some_and(|f| folds.contains(&f))).cloned().collect()
    };
    let train = in_folds(&PROBE_TRAIN_FOLDS.collect::<Vec<_>>());
    let test = in_folds(&PROBE_TEST_FOLDS);
    if train.is_empty() {
        return Err(Error::Config("no probe training records in folds 1-8".into()));
    }
    check_probe_test_split(&test)?;
    check_k(plan.k, plan.runs, test.len(), "probe test")?;

    let classes = probe_classes(&train, pc)?;
    let strict_labels = pc.classes.is_empty();
    let train_split =
        ProbeSplit { features: probe_features(encoder, &train, pc.pool_kernel, exec)?, labels: multi_hot(&train, &classes, strict_labels)? };
    let test_split =
        ProbeSplit { features: probe_features(encoder, &test, pc.pool_kernel, exec)?, labels: multi_hot(&test, &classes, strict_labels)? };

    let mut out = Vec::with_capacity(plan.runs * plan.k);
    for run in 0..plan.runs {
        let run_seed = derive_seed(plan.seed, &[Task::Probe as u64, run as u64]);
        let probe = train_probe(&train_split, None, pc, run_seed, exec)?;
        for (fold, idx) in chunks(test.len(), plan.k, plan.seed, run).iter().enumerate() {
            let mut rep = score_probe(&probe, &subset(&test_split, idx), &classes, pc.threshold, run_seed)?;
            rep.run = run;
            rep.fold = fold;
            out.push(rep);
        }
        info!("probe cv run {} done", run + 1);
    }
    Ok(out)
}

fn cv_segment(encoder: &Encoder, records: &[EcgRecord], cfg: &RunConfig, plan: CvPlan, exec: Exec) -> Result<Vec<MetricReport>> {
    check_k(plan.k, plan.runs, records.len(), "segmentation")?;
    let mut out = Vec::with_capacity(plan.runs * plan.k);
    for run in 0..plan.runs {
        let parts = chunks(records.len(), plan.k, plan.seed, run);
        for (fold, test_idx) in parts.iter().enumerate() {
            let test: Vec<EcgRecord> = test_idx.iter().map(|&i| records[i].clone()).collect();
            let train: Vec<EcgRecord> = parts
                .iter()
                .enumerate()
                .filter(|&(j, _)| j != fold)
                .flat_map(|(_, c)| c.iter().map(|&i| records[i].clone()))
                .collect();
            let seed = derive_seed(plan.seed, &[Task::Segment as u64, run as u64, fold as u64]);
            let mut rep = segmentation_finetune(encoder, &train, &test, &cfg.eval.segment, seed, exec)?;
            rep.run = run;
            rep.fold = fold;
            out.push(rep);
        }
        info!("segment cv run {} done", run + 1);
    }
    Ok(out)
}

/// One line of a score table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScoreRow {
    pub task: Task,
    pub config_hash: String,
    pub run: usize,
    pub fold: usize,
    pub metric: String,
    pub class: String,
    pub value: f64,
}

pub fn score_rows(reports: &[MetricReport]) -> Vec<ScoreRow> {
    reports
        .iter()
        .flat_map(|r| {
            r.values.iter().map(move |(metric, class, value)| ScoreRow {
                task: r.task,
                config_hash: r.config_hash.clone(),
                run: r.run,
                fold: r.fold,
                metric: metric.clone(),
                class: class.clone(),
                value: *value,
            })
        })
        .collect()
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    Error::Integrity(format!("{}: {e}", path.display()))
}

pub fn write_score_table(path: &Path, rows: &[ScoreRow]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let mut w = csv::Writer::from_path(path).map_err(|e| csv_err(path, e))?;
    for row in rows {
        w.serialize(row).map_err(|e| csv_err(path, e))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

pub fn read_score_table(path: &Path) -> Result<Vec<ScoreRow>> {
    let mut r = csv::Reader::from_path(path).map_err(|e| csv_err(path, e))?;
    let header = r.headers().map_err(|e| csv_err(path, e))?.clone();
    if header.iter().collect::<Vec<_>>() != ["task", "config_hash", "run", "fold", "metric", "class", "value"] {
        return Err(Error::Integrity(format!("{}: unexpected header {:?}", path.display(), header)));
    }
    r.deserialize().map(|row| row.map_err(|e| csv_err(path, e))).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::synth::{synth_generate, SynthConfig};
    use crate::nn::EncoderConfig;

    fn tiny_encoder() -> Encoder {
        let cfg = EncoderConfig { channels: vec![4, 4], ..EncoderConfig::default() };
        Encoder::new(cfg, &mut rng_for(0, &[])).unwrap()
    }

    fn records(n: usize) -> Vec<EcgRecord> {
        synth_generate(&SynthConfig { n_records: n, seed: 3, duration_s: 2.0, ..SynthConfig::default() }).unwrap()
    }

    fn quick() -> RunConfig {
        let mut cfg = RunConfig::default();
        cfg.eval.probe.epochs = 2;
        cfg.eval.segment.epochs = 1;
        cfg
    }

    #[test]
    fn chunks_partition_indices() {
        let c = chunks(11, 3, 5, 0);
        let mut all: Vec<usize> = c.concat();
        all.sort_unstable();
        assert_eq!(all, (0..11).collect::<Vec<_>>());
        assert!(c.iter().all(|p| (3..=4).contains(&p.len())));
        assert_ne!(chunks(11, 3, 5, 0), chunks(11, 3, 5, 1));
    }

    #[test]
    fn probe_cv_shape_and_determinism() {
        let recs = records(40);
        let enc = tiny_encoder();
        let plan = CvPlan { task: Task::Probe, k: 2, runs: 2, seed: 9 };
        let a = cross_validate(&enc, &recs, &quick(), plan, "h", Exec::default()).unwrap();
        let b = cross_validate(&enc, &recs, &quick(), plan, "h", Exec::default()).unwrap();
        assert_eq!(a.len(), 4);
        assert_eq!(a, b);
        assert!(a.iter().all(|r| r.config_hash == "h"));
    }

    #[test]
    fn segment_cv_arity() {
        let recs = records(5);
        let plan = CvPlan { task: Task::Segment, k: 5, runs: 1, seed: 1 };
        let reps = cross_validate(&tiny_encoder(), &recs, &quick(), plan, "h", Exec::default()).unwrap();
        assert_eq!(reps.len(), 5);
        assert_eq!(reps.iter().map(|r| r.fold).collect::<Vec<_>>(), vec![0, 1, 2, 3, 4]);
    }

    #[test]
    fn k_larger_than_pool_is_config_error() {
        let recs = records(5);
        let plan = CvPlan { task: Task::Segment, k: 6, runs: 1, seed: 1 };
        assert!(matches!(cross_validate(&tiny_encoder(), &recs, &quick(), plan, "", Exec::default()), Err(Error::Config(_))));
    }

    #[test]
    fn leakage_guard_rejects_training_folds() {
        let mut recs = records(3);
        recs[0].fold = Some(9);
        recs[1].fold = Some(10);
        recs[2].fold = Some(9);
        check_probe_test_split(&recs).unwrap();
        recs[2].fold = Some(4);
        assert!(matches!(check_probe_test_split(&recs), Err(Error::Leakage(_))));
        recs[2].fold = None;
        assert!(matches!(check_probe_test_split(&recs), Err(Error::Leakage(_))));
    }

    #[test]
    fn csv_round_trip() {
        let mut rep = MetricReport::new(Task::Segment, 1);
        rep.config_hash = "abc".into();
        rep.run = 2;
        rep.fold = 3;
        rep.push("dice", "P", 0.25);
        rep.push("dice", "macro", 0.125);
        let rows = score_rows(&[rep]);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("scores.csv");
        write_score_table(&path, &rows).unwrap();
        let text = fs::read_to_string(&path).unwrap();
        assert!(text.starts_with("task,config_hash,run,fold,metric,class,value\nsegment,abc,2,3,dice,P,0.25\n"));
        assert_eq!(read_score_table(&path).unwrap(), rows);
    }

    #[test]
    fn csv_with_wrong_header_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.csv");
        fs::write(&path, "a,b\n1,2\n").unwrap();
        assert!(matches!(read_score_table(&path), Err(Error::Integrity(_))));
    }
}
