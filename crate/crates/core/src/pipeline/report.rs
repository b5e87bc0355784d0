//! Summaries, pairwise significance and box plots over score tables.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use plotters::prelude::*;
use serde::Serialize;

use super::ablation::CONFIG_FILE;
use super::config::{AblationConfig, RunConfig};
use super::cv::{read_score_table, ScoreRow};
use crate::error::{Error, Result};
use crate::stats::{bonferroni, wilcoxon_signed_rank, Task, MACRO};

/// Macro-level cells of one configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigScores {
    pub label: String,
    pub config_hash: String,
    pub ablation: Option<AblationConfig>,
    pub rows: Vec<ScoreRow>,
}

impl ConfigScores {
    pub fn is_baseline(&self) -> bool {
        self.ablation.is_some_and(|a| a.is_baseline())
    }

    /// `(run, fold) -> value` for one task/metric.
    fn cells(&self, task: Task, metric: &str) -> BTreeMap<(usize, usize), f64> {
        self.rows
            .iter()
            .filter(|r| r.task == task && r.metric == metric && r.class == MACRO)
            .map(|r| ((r.run, r.fold), r.value))
            .collect()
    }
}

/// Reads score tables and groups their rows by config hash. Each group is
/// labelled from a `config.toml` stored beside one of its tables, if any.
pub fn load_config_scores(paths: &[PathBuf]) -> Result<Vec<ConfigScores>> {
    let mut groups: BTreeMap<String, ConfigScores> = BTreeMap::new();
    for path in paths {
        let rows = read_score_table(path)?;
        let cfg_path = path.with_file_name(CONFIG_FILE);
        let ablation = if cfg_path.exists() {
            let text = fs::read_to_string(&cfg_path).map_err(|e| Error::io(&cfg_path, e))?;
            Some(RunConfig::from_toml(&text)?.ablation())
        } else {
            None
        };
        for row in rows {
            let g = groups.entry(row.config_hash.clone()).or_insert_with(|| ConfigScores {
                label: row.config_hash.clone(),
                config_hash: row.config_hash.clone(),
                ablation: None,
                rows: Vec::new(),
            });
            if g.ablation.is_none() {
                g.ablation = ablation;
            }
            g.rows.push(row);
        }
    }
    let mut out: Vec<ConfigScores> = groups.into_values().collect();
    for c in &mut out {
        if let Some(a) = c.ablation {
            c.label = a.slug();
        }
    }
    let mut seen = BTreeMap::new();
    for c in &out {
        *seen.entry(c.label.clone()).or_insert(0) += 1;
    }
    for c in &mut out {
        if seen[&c.label] > 1 {
            c.label = format!("{}@{}", c.label, c.config_hash);
        }
    }
    Ok(out)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryCell {
    pub task: Task,
    pub metric: String,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SummaryRow {
    pub label: String,
    pub config_hash: String,
    pub baseline: bool,
    pub cells: Vec<SummaryCell>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct PairwiseRow {
    pub task: Task,
    pub metric: String,
    pub config_a: String,
    pub config_b: String,
    pub n_pairs: usize,
    pub w_plus: f64,
    pub p_value: f64,
    pub p_adjusted: f64,
    pub degenerate: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Report {
    pub summary: Vec<SummaryRow>,
    pub pairwise: Vec<PairwiseRow>,
}

fn mean_std(v: &[f64]) -> (f64, f64) {
    let n = v.len() as f64;
    let mean = v.iter().sum::<f64>() / n;
    let var = if v.len() > 1 { v.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0) } else { 0.0 };
    (mean, var.sqrt())
}

/// `(task, metric)` keys present in any configuration, macro class only.
fn metric_keys(configs: &[ConfigScores]) -> Vec<(Task, String)> {
    let set: BTreeSet<(Task, String)> = configs
        .iter()
        .flat_map(|c| c.rows.iter().filter(|r| r.class == MACRO).map(|r| (r.task, r.metric.clone())))
        .collect();
    set.into_iter().collect()
}

/// Orders configurations by grid position, unknown ones last by hash.
pub fn sort_configs(configs: &mut [ConfigScores]) {
    configs.sort_by_key(|c| (c.ablation.and_then(|a| a.table_index()).unwrap_or(usize::MAX), c.config_hash.clone()));
}

/// One summary row per configuration plus Bonferroni-adjusted pairwise
/// Wilcoxon tests over matched `(run, fold)` cells.
pub fn build_report(configs: &[ConfigScores]) -> Result<Report> {
    let keys = metric_keys(configs);
    let summary = configs
        .iter()
        .map(|c| SummaryRow {
            label: c.label.clone(),
            config_hash: c.config_hash.clone(),
            baseline: c.is_baseline(),
            cells: keys
                .iter()
                .filter_map(|(task, metric)| {
                    let v: Vec<f64> = c.cells(*task, metric).into_values().collect();
                    (!v.is_empty()).then(|| {
                        let (mean, std) = mean_std(&v);
                        SummaryCell { task: *task, metric: metric.clone(), mean, std, n: v.len() }
                    })
                })
                .collect(),
        })
        .collect();

    let mut pairwise = Vec::new();
    for (task, metric) in &keys {
        let cells: Vec<_> = configs.iter().map(|c| c.cells(*task, metric)).collect();
        let mut rows = Vec::new();
        for i in 0..configs.len() {
            for j in i + 1..configs.len() {
                let common: Vec<&(usize, usize)> = cells[i].keys().filter(|k| cells[j].contains_key(k)).collect();
                if common.is_empty() {
                    continue;
                }
                let a: Vec<f64> = common.iter().map(|k| cells[i][k]).collect();
                let b: Vec<f64> = common.iter().map(|k| cells[j][k]).collect();
                let w = wilcoxon_signed_rank(&a, &b)?;
                rows.push(PairwiseRow {
                    task: *task,
                    metric: metric.clone(),
                    config_a: configs[i].label.clone(),
                    config_b: configs[j].label.clone(),
                    n_pairs: common.len(),
                    w_plus: w.w_plus,
                    p_value: w.p_value,
                    p_adjusted: w.p_value,
                    degenerate: w.degenerate,
                });
            }
        }
        let adjusted = bonferroni(&rows.iter().map(|r| r.p_value).collect::<Vec<_>>(), rows.len())?;
        for (r, p) in rows.iter_mut().zip(adjusted) {
            r.p_adjusted = p;
        }
        pairwise.extend(rows);
    }
    Ok(Report { summary, pairwise })
}

impl Report {
    /// Markdown table: one row per configuration, `mean ± std` per metric.
    pub fn summary_markdown(&self) -> String {
        let keys: Vec<(Task, String)> = {
            let set: BTreeSet<_> =
                self.summary.iter().flat_map(|r| r.cells.iter().map(|c| (c.task, c.metric.clone()))).collect();
            set.into_iter().collect()
        };
        let mut s = String::from("| config | hash | tag |");
        for (t, m) in &keys {
            let _ = write!(s, " {t} {m} |");
        }
        s.push_str("\n|---|---|---|");
        s.push_str(&"---|".repeat(keys.len()));
        s.push('\n');
        for row in &self.summary {
            let _ = write!(s, "| {} | {} | {} |", row.label, row.config_hash, if row.baseline { "baseline" } else { "" });
            for (t, m) in &keys {
                match row.cells.iter().find(|c| c.task == *t && &c.metric == m) {
                    Some(c) => {
                        let _ = write!(s, " {:.4} ± {:.4} |", c.mean, c.std);
                    }
                    None => s.push_str(" - |"),
                }
            }
            s.push('\n');
        }
        s
    }

    pub fn summary_csv(&self) -> String {
        let mut s = String::from("config,config_hash,tag,task,metric,mean,std,n\n");
        for row in &self.summary {
            for c in &row.cells {
                let tag = if row.baseline { "baseline" } else { "" };
                let _ = writeln!(s, "{},{},{tag},{},{},{},{},{}", row.label, row.config_hash, c.task, c.metric, c.mean, c.std, c.n);
            }
        }
        s
    }

    pub fn pairwise_csv(&self) -> String {
        let mut s = String::from("task,metric,config_a,config_b,n_pairs,w_plus,p_value,p_adjusted,degenerate\n");
        for r in &self.pairwise {
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                r.task, r.metric, r.config_a, r.config_b, r.n_pairs, r.w_plus, r.p_value, r.p_adjusted, r.degenerate
            );
        }
        s
    }
}

fn plot_err(e: impl std::fmt::Display) -> Error {
    Error::Validation(format!("plot rendering failed: {e}"))
}

/// Box plot of one task/metric across configurations.
pub fn box_plot_svg(configs: &[ConfigScores], task: Task, metric: &str) -> Result<String> {
    let data: Vec<(String, Vec<f64>)> = configs
        .iter()
        .map(|c| (c.label.clone(), c.cells(task, metric).into_values().collect::<Vec<_>>()))
        .filter(|(_, v)| !v.is_empty())
        .collect();
    let labels: Vec<String> = data.iter().map(|(l, _)| l.clone()).collect();
    let mut svg = String::new();
    {
        let width = 120 + 70 * labels.len().max(1) as u32;
        let root = SVGBackend::with_string(&mut svg, (width, 420)).into_drawing_area();
        root.fill(&WHITE).map_err(plot_err)?;
        let mut chart = ChartBuilder::on(&root)
            .caption(format!("{task} {metric}"), ("sans-serif", 18))
            .margin(10)
            .x_label_area_size(90)
            .y_label_area_size(50)
            .build_cartesian_2d(labels.as_slice().into_segmented(), 0.0f32..1.0f32)
            .map_err(plot_err)?;
        chart
            .configure_mesh()
            .disable_x_mesh()
            .x_label_style(("sans-serif", 11).into_font().transform(FontTransform::Rotate90))
            .y_desc(metric)
            .draw()
            .map_err(plot_err)?;
        chart
            .draw_series(data.iter().map(|(label, v)| {
                Boxplot::new_vertical(SegmentValue::CenterOf(label), &Quartiles::new(v)).width(24).style(BLUE)
            }))
            .map_err(plot_err)?;
        root.present().map_err(plot_err)?;
    }
    Ok(svg)
}

/// Writes `summary.md`, `summary.csv`, `pairwise.csv` and one SVG per metric.
pub fn write_report(configs: &[ConfigScores], report: &Report, out: &Path) -> Result<Vec<PathBuf>> {
    let plots = out.join("plots");
    fs::create_dir_all(&plots).map_err(|e| Error::io(&plots, e))?;
    let mut written = Vec::new();
    let mut put = |path: PathBuf, text: &str| -> Result<()> {
        fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        written.push(path);
        Ok(())
    };
    put(out.join("summary.md"), &report.summary_markdown())?;
    put(out.join("summary.csv"), &report.summary_csv())?;
    put(out.join("pairwise.csv"), &report.pairwise_csv())?;
    for (task, metric) in metric_keys(configs) {
        put(plots.join(format!("{task}_{metric}.svg")), &box_plot_svg(configs, task, &metric)?)?;
    }
    Ok(written)
}
