//! Dual-context pretraining: rhythm-level and beat-level contrasting off a
//! single encoder pass per augmented view.

use log::{debug, info};
use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use super::checkpoint::Checkpoint;
use super::config::{BeatMode, LabelerKind, ModelSection, RhythmMode, RunConfig};
use crate::beats::{beat_features, beat_windows, pseudo_label_beats, roi_pool, OracleLabeler, PoolReducer, PseudoLabeler};
use crate::data::features::{extract_features, r_peaks_of, FeatureScaler};
use crate::data::{BeatClass, EcgRecord};
use crate::error::{Error, Result};
use crate::exec::{add_assign, Exec};
use crate::loss::{ntxent_with_grad, total_pretrain_loss, Context, ProjectionBatch};
use crate::nn::{Adam, Encoder, FeatureMap, Mlp};
use crate::seeds::{derive_seed, rng_for};
use crate::targets::{beat_hard_targets, hard_targets, soft1_targets, soft2_targets, TargetMatrix};
use crate::vcg::KorsTransform;

const STREAM_INIT: u64 = 1;
const STREAM_SHUFFLE: u64 = 2;
const STREAM_AUGMENT: u64 = 3;

/// Encoder plus both projection heads.
#[derive(Debug, Clone)]
pub struct Model {
    pub encoder: Encoder,
    pub rhythm_head: Mlp,
    pub beat_head: Mlp,
}

impl Model {
    pub fn new(model: &ModelSection, seed: u64) -> Result<Self> {
        let encoder = Encoder::new(model.encoder.clone(), &mut rng_for(seed, &[STREAM_INIT, 0]))?;
        let c = encoder.out_channels();
        Ok(Self {
            rhythm_head: Mlp::projection(c, &mut rng_for(seed, &[STREAM_INIT, 1])),
            beat_head: Mlp::projection(c, &mut rng_for(seed, &[STREAM_INIT, 2])),
            encoder,
        })
    }

    pub fn to_checkpoint(&self, config: &RunConfig, epochs: usize) -> Checkpoint {
        Checkpoint {
            config_hash: config.hash(),
            ablation: config.ablation(),
            config: config.clone(),
            epochs,
            seed: config.train.seed,
            blobs: vec![
                ("encoder".into(), self.encoder.params.values.clone()),
                ("rhythm_head".into(), self.rhythm_head.params.values.clone()),
                ("beat_head".into(), self.beat_head.params.values.clone()),
            ],
        }
    }

    pub fn from_checkpoint(ck: &Checkpoint) -> Result<Self> {
        let blob = |n: &str| {
            ck.blob(n).map(<[f32]>::to_vec).ok_or_else(|| Error::Checkpoint(format!("missing blob {n}")))
        };
        let encoder = Encoder::from_values(ck.config.model.encoder.clone(), blob("encoder")?)?;
        let c = encoder.out_channels();
        Ok(Self {
            rhythm_head: Mlp::projection_from_values(c, blob("rhythm_head")?)?,
            beat_head: Mlp::projection_from_values(c, blob("beat_head")?)?,
            encoder,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepStats {
    pub epoch: usize,
    pub step: usize,
    pub batch_records: usize,
    pub rhythm_loss: f64,
    pub beat_loss: Option<f64>,
    pub total_loss: f64,
    /// Beats per view that entered the beat loss.
    pub beats_per_view: usize,
    /// Encoder forward passes during the step.
    pub encoder_invocations: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
pub struct PretrainReport {
    pub steps: Vec<StepStats>,
    pub epoch_losses: Vec<f64>,
}

impl PretrainReport {
    pub fn initial_loss(&self) -> Option<f64> {
        self.epoch_losses.first().copied()
    }

    pub fn final_loss(&self) -> Option<f64> {
        self.epoch_losses.last().copied()
    }
}

/// Per-record inputs that do not depend on augmentation.
struct Prepared {
    features: Vec<f64>,
    /// R-peaks whose beat window is usable.
    peaks: Vec<usize>,
    classes: Vec<BeatClass>,
    beat_features: Vec<Vec<f64>>,
}

fn prepare(records: &[EcgRecord], config: &RunConfig, exec: Exec) -> Result<Vec<Prepared>> {
    let n = config.model.beat_window;
    let labeler: Box<dyn PseudoLabeler> = match config.targets.labeler {
        LabelerKind::Oracle => Box::new(OracleLabeler::from_records(records)),
        LabelerKind::Rule => Box::new(config.targets.rule.clone()),
    };
    let labeler = labeler.as_ref();
    let needs_beats = config.targets.beat_mode.enabled();
    let raw: Vec<Result<(Vec<f64>, Vec<usize>, Vec<BeatClass>, Vec<Vec<f64>>)>> = exec.map(records, |r| {
        let f = extract_features(r)?.values;
        if !needs_beats {
            return Ok((f, vec![], vec![], vec![]));
        }
        let all = r_peaks_of(r)?;
        let classes = pseudo_label_beats(r, labeler, n)?;
        let windows = beat_windows(&r.record_id, &all, n, r.n_samples(), 1, r.n_samples());
        let keep: Vec<usize> =
            (0..all.len()).filter(|&i| windows[i].padding_fraction <= config.model.max_padding_fraction).collect();
        let peaks: Vec<usize> = keep.iter().map(|&i| all[i]).collect();
        let all_feats = beat_features(r, &all, n)?;
        Ok((
            f,
            peaks,
            keep.iter().map(|&i| classes[i]).collect(),
            keep.iter().map(|&i| all_feats[i].clone()).collect(),
        ))
    });
    let raw: Vec<_> = raw.into_iter().collect::<Result<_>>()?;
    let scaler = FeatureScaler::fit(&raw.iter().map(|r| r.0.clone()).collect::<Vec<_>>())?;
    Ok(raw
        .into_iter()
        .map(|(f, peaks, classes, beat_features)| Prepared { features: scaler.transform(&f), peaks, classes, beat_features })
        .collect())
}

fn pool(map: &FeatureMap, reducer: PoolReducer) -> Vec<f32> {
    match reducer {
        PoolReducer::Mean => map.mean_pool(),
        PoolReducer::Max => map.max_pool(),
    }
}

/// Adds the gradient of `roi_pool(map, span)` into `dmap`.
fn roi_pool_backward(map: &FeatureMap, span: (usize, usize), reducer: PoolReducer, dp: &[f32], dmap: &mut FeatureMap) {
    let (f0, f1) = span;
    for (c, &d) in dp.iter().enumerate() {
        let row = &map.channel(c)[f0..f1];
        let drow = &mut dmap.channel_mut(c)[f0..f1];
        match reducer {
            PoolReducer::Mean => {
                let g = d / row.len() as f32;
                for v in drow {
                    *v += g;
                }
            }
            PoolReducer::Max => {
                let mut best = 0;
                for (t, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = t;
                    }
                }
                drow[best] += d;
            }
        }
    }
}

fn rhythm_targets(config: &RunConfig, batch: &[&Prepared]) -> Result<TargetMatrix> {
    let feats: Vec<Vec<f64>> = batch.iter().map(|p| p.features.clone()).collect();
    match config.targets.rhythm_mode {
        RhythmMode::Hard => hard_targets(batch.len()),
        RhythmMode::Soft1 => soft1_targets(&feats, config.targets.exponent),
        RhythmMode::Soft2 => soft2_targets(&feats, config.targets.k.min(batch.len() - 1), config.targets.p_norm),
    }
}

fn beat_targets(config: &RunConfig, classes: &[BeatClass], feats: &[Vec<f64>]) -> Result<TargetMatrix> {
    let m = classes.len();
    match config.targets.beat_mode {
        BeatMode::None => unreachable!("beat targets requested with beat contrasting disabled"),
        BeatMode::Hard => {
            let tiled: Vec<BeatClass> = classes.iter().chain(classes).copied().collect();
            beat_hard_targets(&tiled)
        }
        BeatMode::Soft1 | BeatMode::Soft2 => {
            let z = FeatureScaler::fit(feats)?.transform_all(feats);
            if config.targets.beat_mode == BeatMode::Soft1 {
                soft1_targets(&z, config.targets.exponent)
            } else {
                soft2_targets(&z, config.targets.k.min(m - 1), config.targets.p_norm)
            }
        }
    }
}

struct Trainer<'a> {
    config: &'a RunConfig,
    records: &'a [EcgRecord],
    prepared: Vec<Prepared>,
    model: Model,
    kors: KorsTransform,
    opt_encoder: Adam,
    opt_rhythm: Adam,
    opt_beat: Adam,
    exec: Exec,
}

impl Trainer<'_> {
    fn step(&mut self, epoch: usize, step: usize, idx: &[usize]) -> Result<StepStats> {
        let cfg = self.config;
        let nb = idx.len();
        let seed = cfg.train.seed;
        let kors = &self.kors;
        let records = self.records;
        let views = self.exec.map_range(2 * nb, |j| {
            let (v, b) = (j / nb, idx[j % nb]);
            let mut rng = rng_for(seed, &[STREAM_AUGMENT, epoch as u64, b as u64, v as u64]);
            kors.augment(&records[b].signal, &cfg.augment, &mut rng)
        });
        let views: Vec<_> = views.into_iter().collect::<Result<_>>()?;

        let encoder = &self.model.encoder;
        encoder.reset_invocations();
        let encoded: Vec<_> = self.exec.map(&views, |s| encoder.forward_signal(s)).into_iter().collect::<Result<_>>()?;
        drop(views);
        let invocations = encoder.invocations();
        let (maps, caches): (Vec<FeatureMap>, Vec<_>) = encoded.into_iter().unzip();
        let mut dmaps: Vec<FeatureMap> = maps.iter().map(|m| FeatureMap::zeros(m.channels, m.frames)).collect();

        // rhythm context
        let batch: Vec<&Prepared> = idx.iter().map(|&i| &self.prepared[i]).collect();
        let rpool = cfg.model.rhythm_pool;
        let pooled: Vec<Vec<f32>> = maps.iter().map(|m| pool(m, rpool)).collect();
        let (z, head_cache) = self.model.rhythm_head.forward(&pooled);
        let targets = rhythm_targets(cfg, &batch)?;
        let (rhythm_loss, dz) = ntxent_with_grad(&ProjectionBatch::from_f32(&z, Context::Rhythm)?, &targets, cfg.loss.tau)?;
        let dz: Vec<Vec<f32>> = dz.iter().map(|r| r.iter().map(|&x| x as f32).collect()).collect();
        let (g_rhythm, dpooled) = self.model.rhythm_head.backward(&head_cache, &dz);
        for (j, dp) in dpooled.iter().enumerate() {
            let frames = maps[j].frames;
            roi_pool_backward(&maps[j], (0, frames), rpool, dp, &mut dmaps[j]);
        }

        // beat context, reusing the same feature maps
        let mut g_beat = self.model.beat_head.params.zeros_like();
        let mut beat_loss = None;
        let mut beats_per_view = 0;
        if cfg.targets.beat_mode.enabled() {
            let stride = encoder.stride();
            let mut slots: Vec<(usize, (usize, usize))> = Vec::new();
            let mut classes = Vec::new();
            let mut feats = Vec::new();
            for (b, p) in batch.iter().enumerate() {
                let frames = maps[b].frames;
                let n_samples = records[idx[b]].n_samples();
                for w in beat_windows("", &p.peaks, cfg.model.beat_window, n_samples, stride, frames) {
                    slots.push((b, w.frame_span));
                }
                classes.extend_from_slice(&p.classes);
                feats.extend(p.beat_features.iter().cloned());
            }
            let m = slots.len();
            beats_per_view = m;
            if m >= 2 {
                let reducer = cfg.model.roi_pool;
                let mut rois = Vec::with_capacity(2 * m);
                for v in 0..2 {
                    for &(b, span) in &slots {
                        rois.push(roi_pool(&maps[v * nb + b], span, reducer)?);
                    }
                }
                let (zb, bcache) = self.model.beat_head.forward(&rois);
                let bt = beat_targets(cfg, &classes, &feats)?;
                let (l, dzb) = ntxent_with_grad(&ProjectionBatch::from_f32(&zb, Context::Beat)?, &bt, cfg.loss.tau)?;
                let scale = cfg.loss.lambda_beat as f32;
                let dzb: Vec<Vec<f32>> = dzb.iter().map(|r| r.iter().map(|&x| x as f32 * scale).collect()).collect();
                let (gb, drois) = self.model.beat_head.backward(&bcache, &dzb);
                g_beat = gb;
                for v in 0..2 {
                    for (s, &(b, span)) in slots.iter().enumerate() {
                        let j = v * nb + b;
                        roi_pool_backward(&maps[j], span, reducer, &drois[v * m + s], &mut dmaps[j]);
                    }
                }
                beat_loss = Some(l);
            } else {
                beat_loss = Some(0.0);
            }
        }

        let grads: Vec<Vec<f32>> = {
            let pairs: Vec<(usize, FeatureMap)> = dmaps.into_iter().enumerate().collect();
            self.exec.map(&pairs, |(j, d)| encoder.backward(&caches[*j], d.clone()))
        };
        let mut g_enc = self.model.encoder.params.zeros_like();
        for g in &grads {
            add_assign(&mut g_enc, g);
        }
        self.opt_encoder.step(&mut self.model.encoder.params.values, &g_enc);
        self.opt_rhythm.step(&mut self.model.rhythm_head.params.values, &g_rhythm);
        if cfg.targets.beat_mode.enabled() {
            self.opt_beat.step(&mut self.model.beat_head.params.values, &g_beat);
        }

        let total = total_pretrain_loss(rhythm_loss, beat_loss, &cfg.loss);
        if !total.is_finite() {
            return Err(Error::Validation(format!("non-finite loss at epoch {epoch} step {step}")));
        }
        Ok(StepStats {
            epoch,
            step,
            batch_records: nb,
            rhythm_loss,
            beat_loss,
            total_loss: total,
            beats_per_view,
            encoder_invocations: invocations,
        })
    }
}

/// Batches of one epoch: a seeded shuffle cut into `batch_size` chunks; a
/// trailing chunk with fewer than two records is dropped.
pub fn epoch_batches(n_records: usize, batch_size: usize, seed: u64, epoch: usize) -> Vec<Vec<usize>> {
    let mut order: Vec<usize> = (0..n_records).collect();
    order.shuffle(&mut rng_for(seed, &[STREAM_SHUFFLE, epoch as u64]));
    order.chunks(batch_size).filter(|c| c.len() >= 2).map(<[usize]>::to_vec).collect()
}

pub fn pretrain(records: &[EcgRecord], config: &RunConfig, strict: bool) -> Result<(Checkpoint, PretrainReport)> {
    pretrain_with(records, config, strict, Exec::default())
}

pub fn pretrain_with(
    records: &[EcgRecord],
    config: &RunConfig,
    strict: bool,
    exec: Exec,
) -> Result<(Checkpoint, PretrainReport)> {
    config.validate(strict)?;
    if records.len() < 2 {
        return Err(Error::Config(format!("pretraining needs at least 2 records, got {}", records.len())));
    }
    let d = records[0].n_samples();
    if config.model.beat_window > d {
        return Err(Error::Config(format!("beat_window {} exceeds record length {d}", config.model.beat_window)));
    }
    let prepared = prepare(records, config, exec)?;
    let model = Model::new(&config.model, config.train.seed)?;
    let adam = config.train.adam;
    let mut t = Trainer {
        config,
        records,
        prepared,
        opt_encoder: Adam::new(adam, model.encoder.params.len()),
        opt_rhythm: Adam::new(adam, model.rhythm_head.params.len()),
        opt_beat: Adam::new(adam, model.beat_head.params.len()),
        model,
        kors: KorsTransform::new(),
        exec,
    };
    let mut report = PretrainReport::default();
    let batch_seed = derive_seed(config.train.seed, &[STREAM_SHUFFLE]);
    for epoch in 0..config.train.epochs {
        let mut sum = 0.0;
        let batches = epoch_batches(records.len(), config.train.batch_size, batch_seed, epoch);
        for (step, idx) in batches.iter().enumerate() {
            let s = t.step(epoch, step, idx)?;
            debug!("epoch {epoch} step {step}: loss {:.4} (rhythm {:.4}, beat {:?})", s.total_loss, s.rhythm_loss, s.beat_loss);
            sum += s.total_loss;
            report.steps.push(s);
        }
        let mean = sum / batches.len().max(1) as f64;
        info!("epoch {} mean loss {mean:.4}", epoch + 1);
        report.epoch_losses.push(mean);
    }
    Ok((t.model.to_checkpoint(config, config.train.epochs), report))
}
