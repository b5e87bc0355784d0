//! Wave segmentation with a frozen encoder and a trained mirrored decoder.

use log::info;
use rand::seq::SliceRandom;

use super::config::SegmentSection;
use crate::data::{EcgRecord, WaveClass};
use crate::error::{Error, Result};
use crate::exec::{add_assign, Exec};
use crate::nn::{argmax_labels, softmax_cross_entropy, Adam, Decoder, Encoder, FeatureMap};
use crate::seeds::rng_for;
use crate::stats::{dice, segment_f1, MetricReport, Task, MACRO};

fn masks(records: &[EcgRecord]) -> Result<Vec<&[u8]>> {
    records
        .iter()
        .map(|r| {
            r.wave_mask
                .as_ref()
                .map(|m| m.labels.as_slice())
                .ok_or_else(|| Error::Config(format!("record {} has no wave mask", r.record_id)))
        })
        .collect()
}

/// Per-class `(f1, dice)` over P, QRS and T, scored on samples
/// `window.0..=window.1` of every record (clipped to its length).
pub fn score_segmentation(preds: &[Vec<u8>], truths: &[&[u8]], window: (usize, usize)) -> Result<Vec<(f64, f64)>> {
    let mut p_all = Vec::new();
    let mut t_all = Vec::new();
    for (p, t) in preds.iter().zip(truths) {
        if p.len() != t.len() {
            return Err(Error::shape(format!("{} samples", t.len()), p.len().to_string()));
        }
        if t.is_empty() || window.0 >= t.len() {
            continue;
        }
        let hi = window.1.min(t.len() - 1);
        p_all.extend_from_slice(&p[window.0..=hi]);
        t_all.extend_from_slice(&t[window.0..=hi]);
    }
    WaveClass::WAVES
        .iter()
        .map(|&c| Ok((segment_f1(&p_all, &t_all, c as u8)?, dice(&p_all, &t_all, c as u8)?)))
        .collect()
}

pub fn segmentation_report(scores: &[(f64, f64)], seed: u64) -> MetricReport {
    let mut r = MetricReport::new(Task::Segment, seed);
    for (c, &(f1, d)) in WaveClass::WAVES.iter().zip(scores) {
        r.push("f1", c.name(), f1);
        r.push("dice", c.name(), d);
    }
    let n = scores.len() as f64;
    r.push("f1", MACRO, scores.iter().map(|s| s.0).sum::<f64>() / n);
    r.push("dice", MACRO, scores.iter().map(|s| s.1).sum::<f64>() / n);
    r
}

/// Trains a decoder on frozen encoder features of `train`.
pub fn train_decoder(
    encoder: &Encoder,
    train: &[EcgRecord],
    cfg: &SegmentSection,
    seed: u64,
    exec: Exec,
) -> Result<Decoder> {
    let truth = masks(train)?;
    if train.is_empty() {
        return Err(Error::Config("empty segmentation training split".into()));
    }
    let maps: Vec<FeatureMap> =
        exec.map(train, |r| encoder.encode(&r.signal)).into_iter().collect::<Result<_>>()?;
    let mut decoder = Decoder::new(encoder.config(), &mut rng_for(seed, &[0]))?;
    let mut adam = Adam::new(cfg.adam, decoder.params.len());
    let mut order: Vec<usize> = (0..train.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(seed, &[1, epoch as u64]));
        let mut epoch_loss = 0.0;
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let dec = &decoder;
            let out: Vec<Result<(f64, Vec<f32>)>> = exec.map(chunk, |&i| {
                let (logits, cache) = dec.forward(&maps[i], truth[i].len())?;
                let (l, dl) = softmax_cross_entropy(&logits, truth[i]);
                Ok((l, dec.backward(&cache, &dl)))
            });
            let mut g = decoder.params.zeros_like();
            for o in out {
                let (l, gi) = o?;
                epoch_loss += l;
                add_assign(&mut g, &gi);
            }
            let inv = 1.0 / chunk.len() as f32;
            g.iter_mut().for_each(|v| *v *= inv);
            adam.step(&mut decoder.params.values, &g);
        }
        info!("segment epoch {}: mean CE {:.4}", epoch + 1, epoch_loss / train.len() as f64);
    }
    Ok(decoder)
}

pub fn predict_masks(encoder: &Encoder, decoder: &Decoder, records: &[EcgRecord], exec: Exec) -> Result<Vec<Vec<u8>>> {
    exec.map(records, |r| {
        let z = encoder.encode(&r.signal)?;
        let (logits, _) = decoder.forward(&z, r.n_samples())?;
        Ok(argmax_labels(&logits))
    })
    .into_iter()
    .collect()
}

pub fn segmentation_finetune(
    encoder: &Encoder,
    train: &[EcgRecord],
    test: &[EcgRecord],
    cfg: &SegmentSection,
    seed: u64,
    exec: Exec,
) -> Result<MetricReport> {
    let truth = masks(test)?;
    let decoder = train_decoder(encoder, train, cfg, seed, exec)?;
    let preds = predict_masks(encoder, &decoder, test, exec)?;
    let scores = score_segmentation(&preds, &truth, cfg.eval_window)?;
    let report = segmentation_report(&scores, seed);
    info!("segment: macro Dice {:.4}", report.macro_value("dice").unwrap_or(f64::NAN));
    Ok(report)
}
