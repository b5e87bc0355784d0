//! Linear probing on a frozen encoder.

use std::collections::BTreeSet;

use log::{info, warn};
use rand::seq::SliceRandom;

use super::config::ProbeSection;
use crate::data::EcgRecord;
use crate::error::{Error, Result};
use crate::exec::{add_assign, Exec};
use crate::nn::{Adam, Encoder, Linear, ParamStore};
use crate::seeds::rng_for;
use crate::stats::{macro_auroc, per_class_auroc, per_class_f1, MetricReport, Task, MACRO};

/// Inputs to the probe: frozen features and multi-hot labels.
#[derive(Debug, Clone)]
pub struct ProbeSplit {
    pub features: Vec<Vec<f32>>,
    pub labels: Vec<Vec<bool>>,
}

/// Class list: the configured subset, or every label seen in `train`.
pub fn probe_classes(train: &[EcgRecord], cfg: &ProbeSection) -> Result<Vec<String>> {
    if !cfg.classes.is_empty() {
        return Ok(cfg.classes.iter().cloned().collect::<BTreeSet<_>>().into_iter().collect());
    }
    let mut set = BTreeSet::new();
    for r in train {
        let labels = r
            .rhythm_labels
            .as_ref()
            .ok_or_else(|| Error::Config(format!("record {} has no rhythm labels", r.record_id)))?;
        set.extend(labels.iter().cloned());
    }
    if set.is_empty() {
        return Err(Error::Config("training split carries no labels".into()));
    }
    Ok(set.into_iter().collect())
}

pub(crate) fn multi_hot(records: &[EcgRecord], classes: &[String], strict_labels: bool) -> Result<Vec<Vec<bool>>> {
    records
        .iter()
        .map(|r| {
            let labels = r
                .rhythm_labels
                .as_ref()
                .ok_or_else(|| Error::Config(format!("record {} has no rhythm labels", r.record_id)))?;
            if strict_labels {
                if let Some(l) = labels.iter().find(|l| !classes.contains(l)) {
                    return Err(Error::Config(format!(
                        "label {l} of record {} does not occur in the training split",
                        r.record_id
                    )));
                }
            }
            Ok(classes.iter().map(|c| labels.contains(c)).collect())
        })
        .collect()
}

/// Frozen encoder output, max-pooled along time with kernel `k` and flattened.
pub fn probe_features(encoder: &Encoder, records: &[EcgRecord], k: usize, exec: Exec) -> Result<Vec<Vec<f32>>> {
    let feats: Vec<Vec<f32>> = exec
        .map(records, |r| encoder.encode(&r.signal).map(|m| m.max_pool_1d(k).data))
        .into_iter()
        .collect::<Result<_>>()?;
    if let Some(first) = feats.first() {
        if feats.iter().any(|f| f.len() != first.len()) {
            return Err(Error::Config("probe records must share one length".into()));
        }
    }
    Ok(feats)
}

pub fn build_split(
    encoder: &Encoder,
    records: &[EcgRecord],
    classes: &[String],
    cfg: &ProbeSection,
    exec: Exec,
) -> Result<ProbeSplit> {
    let labels = multi_hot(records, classes, cfg.classes.is_empty())?;
    Ok(ProbeSplit { features: probe_features(encoder, records, cfg.pool_kernel, exec)?, labels })
}

fn sigmoid(x: f32) -> f32 {
    1.0 / (1.0 + (-x).exp())
}

/// Per-feature standardisation fitted on the training split.
struct Standardizer {
    mean: Vec<f32>,
    inv_std: Vec<f32>,
}

impl Standardizer {
    fn fit(x: &[Vec<f32>]) -> Self {
        let d = x[0].len();
        let n = x.len() as f64;
        let mut mean = vec![0.0f64; d];
        for r in x {
            for (m, &v) in mean.iter_mut().zip(r) {
                *m += v as f64 / n;
            }
        }
        let mut var = vec![0.0f64; d];
        for r in x {
            for ((s, &v), m) in var.iter_mut().zip(r).zip(&mean) {
                *s += (v as f64 - m).powi(2) / n;
            }
        }
        Self {
            mean: mean.iter().map(|&m| m as f32).collect(),
            inv_std: var.iter().map(|&v| if v > 1e-12 { (1.0 / v.sqrt()) as f32 } else { 1.0 }).collect(),
        }
    }

    fn apply(&self, x: &[f32]) -> Vec<f32> {
        x.iter().zip(&self.mean).zip(&self.inv_std).map(|((v, m), s)| (v - m) * s).collect()
    }
}

/// Trained probe: standardisation plus one linear layer.
pub struct Probe {
    scaler: Standardizer,
    layer: Linear,
    params: ParamStore,
}

impl Probe {
    pub fn predict(&self, x: &[f32]) -> Vec<f64> {
        self.layer.forward(&self.params.values, &self.scaler.apply(x)).into_iter().map(|z| sigmoid(z) as f64).collect()
    }
}

/// Trains the linear layer with binary cross-entropy; when `val` is given the
/// epoch with the best validation macro AUROC is kept.
pub fn train_probe(train: &ProbeSplit, val: Option<&ProbeSplit>, cfg: &ProbeSection, seed: u64, exec: Exec) -> Result<Probe> {
    if train.features.is_empty() {
        return Err(Error::Config("empty probe training split".into()));
    }
    let k = train.labels[0].len();
    let d = train.features[0].len();
    let scaler = Standardizer::fit(&train.features);
    let x: Vec<Vec<f32>> = train.features.iter().map(|f| scaler.apply(f)).collect();
    let mut params = ParamStore::new();
    let layer = Linear::new_zeroed(&mut params, "probe", d, k);
    let mut adam = Adam::new(cfg.adam, params.len());
    let mut probe = Probe { scaler, layer, params: params.clone() };
    let mut best: Option<(f64, Vec<f32>)> = None;
    let mut order: Vec<usize> = (0..x.len()).collect();
    for epoch in 0..cfg.epochs {
        order.shuffle(&mut rng_for(seed, &[1, epoch as u64]));
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let p = &params.values;
            let grads = exec.map(chunk, |&i| {
                let z = layer.forward(p, &x[i]);
                let dz: Vec<f32> = z
                    .iter()
                    .zip(&train.labels[i])
                    .map(|(&zz, &y)| (sigmoid(zz) - if y { 1.0 } else { 0.0 }) / (chunk.len() * k) as f32)
                    .collect();
                let mut g = vec![0.0f32; p.len()];
                layer.backward(p, &x[i], &dz, &mut g, false);
                g
            });
            let mut g = params.zeros_like();
            for gi in &grads {
                add_assign(&mut g, gi);
            }
            adam.step(&mut params.values, &g);
        }
        if let Some(val) = val {
            probe.params = params.clone();
            let scores: Vec<Vec<f64>> = val.features.iter().map(|f| probe.predict(f)).collect();
            let auc = macro_auroc(&scores, &val.labels)?.value;
            if best.as_ref().is_none_or(|(b, _)| auc > *b) {
                best = Some((auc, params.values.clone()));
            }
        }
    }
    probe.params = params;
    if let Some((_, v)) = best {
        probe.params.values = v;
    }
    Ok(probe)
}

/// Macro/per-class AUROC and F1 of `probe` on `test`.
pub fn score_probe(probe: &Probe, test: &ProbeSplit, classes: &[String], threshold: f64, seed: u64) -> Result<MetricReport> {
    let scores: Vec<Vec<f64>> = test.features.iter().map(|f| probe.predict(f)).collect();
    let aucs = per_class_auroc(&scores, &test.labels)?;
    let f1s = per_class_f1(&scores, &test.labels, threshold)?;
    let mut report = MetricReport::new(Task::Probe, seed);
    for (c, name) in classes.iter().enumerate() {
        report.push("auroc", name, aucs[c].value);
        report.push("f1", name, f1s[c]);
    }
    let degenerate = aucs.iter().any(|m| m.degenerate);
    if degenerate {
        warn!("some probe classes have a single label value in the test split; their AUROC is reported as 0.5");
    }
    report.push("auroc", MACRO, aucs.iter().map(|m| m.value).sum::<f64>() / aucs.len() as f64);
    report.push("f1", MACRO, f1s.iter().sum::<f64>() / f1s.len() as f64);
    report.degenerate = degenerate;
    Ok(report)
}

/// Full probe run: frozen features, training, test scoring.
pub fn linear_probe(
    encoder: &Encoder,
    train: &[EcgRecord],
    val: Option<&[EcgRecord]>,
    test: &[EcgRecord],
    cfg: &ProbeSection,
    seed: u64,
    exec: Exec,
) -> Result<MetricReport> {
    let before = encoder.params.fingerprint();
    let classes = probe_classes(train, cfg)?;
    let tr = build_split(encoder, train, &classes, cfg, exec)?;
    let va = val.map(|v| build_split(encoder, v, &classes, cfg, exec)).transpose()?;
    let te = build_split(encoder, test, &classes, cfg, exec)?;
    let probe = train_probe(&tr, va.as_ref(), cfg, seed, exec)?;
    let report = score_probe(&probe, &te, &classes, cfg.threshold, seed)?;
    debug_assert_eq!(before, encoder.params.fingerprint());
    info!(
        "probe: macro AUROC {:.4}, macro F1 {:.4}",
        report.macro_value("auroc").unwrap_or(f64::NAN),
        report.macro_value("f1").unwrap_or(f64::NAN)
    );
    Ok(report)
}
