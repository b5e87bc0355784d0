use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::time::Instant;

use anyhow::{bail, Context, Result};
use beatssl_core::data::dataset::write_dataset;
use beatssl_core::data::synth::synth_generate;
use beatssl_core::pipeline::ablation::{pretrain_records, run_dir, CHECKPOINT_FILE, CONFIG_FILE, SCORES_FILE};
use beatssl_core::pipeline::cv::score_rows;
use beatssl_core::pipeline::report::{build_report, load_config_scores, sort_configs, write_report};
use beatssl_core::pipeline::{
    ablation_plan, cross_validate, load_records, pretrain_with, run_ablation, write_score_table, AblationConfig,
    Checkpoint, CvPlan, Model, RunConfig, RunLog,
};
use beatssl_core::selftest::run_selftest;
use beatssl_core::stats::Task;
use beatssl_core::Exec;
use clap::{Args, Parser, Subcommand, ValueEnum};
use log::info;

mod convert;

const DATA_ROOT_ENV: &str = "BEATSSL_DATA_ROOT";

#[derive(Parser)]
#[command(name = "beatssl", version, about = "Rhythm + heartbeat contrastive pretraining for 12-lead ECG")]
struct Cli {
    #[command(flatten)]
    global: Global,
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Global {
    /// TOML run configuration; built-in defaults when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Overrides `train.seed`.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Accept only rows of the ablation grid (default).
    #[arg(long, global = true, overrides_with = "no_strict")]
    strict: bool,
    /// Allow any well-formed target combination.
    #[arg(long, global = true, overrides_with = "strict")]
    no_strict: bool,
    /// Output directory.
    #[arg(long, global = true, default_value = "out")]
    out: PathBuf,
    /// Manifest-format dataset root; overrides the config and BEATSSL_DATA_ROOT.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    /// Run on the calling thread only.
    #[arg(long, global = true)]
    sequential: bool,
}

impl Global {
    fn strict(&self) -> bool {
        !self.no_strict
    }

    fn exec(&self) -> Exec {
        if self.sequential {
            Exec::Sequential
        } else {
            Exec::Parallel
        }
    }

    fn run_config(&self) -> Result<RunConfig> {
        let mut cfg = match &self.config {
            Some(p) => {
                let text = std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?;
                RunConfig::from_toml(&text).with_context(|| format!("parsing {}", p.display()))?
            }
            None => RunConfig::default(),
        };
        self.apply_overrides(&mut cfg);
        cfg.validate(self.strict())?;
        Ok(cfg)
    }

    fn apply_overrides(&self, cfg: &mut RunConfig) {
        if let Some(s) = self.seed {
            cfg.train.seed = s;
        }
        if let Some(root) = std::env::var_os(DATA_ROOT_ENV).filter(|v| !v.is_empty()) {
            cfg.data.root = Some(root.into());
        }
        if let Some(d) = &self.data {
            cfg.data.root = Some(d.clone());
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Pretrain one configuration and save its checkpoint.
    Pretrain,
    /// Pretrain and evaluate every row of the ablation grid.
    Ablate {
        /// Subset of rows as `rhythm,beat,exponent`, separated by `;`.
        #[arg(long)]
        rows: Option<String>,
    },
    /// Cross-validated linear probe of a checkpoint's frozen encoder.
    Probe(Downstream),
    /// Cross-validated segmentation with a frozen encoder and trained decoder.
    Segment(Downstream),
    /// Summary table, pairwise tests and box plots over score tables.
    Report {
        /// Score-table files, or directories searched for `scores.csv`.
        #[arg(required = true)]
        inputs: Vec<PathBuf>,
    },
    /// Write a dataset in manifest format.
    Convert {
        #[arg(long, value_enum)]
        from: Source,
        /// Input directory (for `csv-dir`).
        #[arg(long)]
        input: Option<PathBuf>,
    },
    /// Run the built-in invariant checks.
    Selftest,
}

#[derive(Args)]
struct Downstream {
    #[arg(long)]
    checkpoint: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Source {
    /// `records.csv` plus one CSV per record.
    CsvDir,
    /// Records from the configured synthetic generator.
    Synthetic,
}

fn cmd_pretrain(g: &Global) -> Result<PathBuf> {
    let cfg = g.run_config()?;
    let records = load_records(&cfg, g.exec())?;
    let pre = pretrain_records(&records, &cfg);
    let dir = run_dir(&g.out, &cfg);
    std::fs::create_dir_all(&dir).with_context(|| format!("creating {}", dir.display()))?;
    std::fs::write(dir.join(CONFIG_FILE), cfg.to_toml()?)?;
    let t = Instant::now();
    let (ck, report) = pretrain_with(&pre, &cfg, g.strict(), g.exec())?;
    let path = dir.join(CHECKPOINT_FILE);
    ck.save(&path)?;
    RunLog::new(&g.out).record("pretrain", &cfg, t, &path)?;
    if let (Some(a), Some(b)) = (report.initial_loss(), report.final_loss()) {
        info!("epoch-mean loss {a:.4} -> {b:.4}");
    }
    Ok(path)
}

fn cmd_ablate(g: &Global, rows: Option<&str>) -> Result<Vec<PathBuf>> {
    let cfg = g.run_config()?;
    let selection: Option<Vec<AblationConfig>> =
        rows.map(|s| s.split(';').filter(|r| !r.trim().is_empty()).map(str::parse).collect()).transpose()?;
    let plan = ablation_plan(selection.as_deref(), g.strict())?;
    let records = load_records(&cfg, g.exec())?;
    let outputs = run_ablation(&cfg, &plan, &records, g.strict(), &g.out, g.exec())?;
    Ok(outputs.into_iter().map(|o| o.dir).collect())
}

fn cmd_downstream(g: &Global, task: Task, checkpoint: &Path) -> Result<PathBuf> {
    let ck = Checkpoint::load(checkpoint)?;
    let mut cfg = match &g.config {
        Some(_) => g.run_config()?,
        None => {
            let mut c = ck.config.clone();
            g.apply_overrides(&mut c);
            c
        }
    };
    // Scores belong to the checkpoint's pretraining run.
    cfg.targets = ck.config.targets.clone();
    cfg.model = ck.config.model.clone();
    let encoder = Model::from_checkpoint(&ck)?.encoder;
    let records = load_records(&cfg, g.exec())?;
    let t = Instant::now();
    let reports = cross_validate(&encoder, &records, &cfg, CvPlan::from_config(task, &cfg), &ck.config_hash, g.exec())?;
    let path = run_dir(&g.out, &ck.config).join(format!("{}_{SCORES_FILE}", task.name()));
    write_score_table(&path, &score_rows(&reports))?;
    RunLog::new(&g.out).record(task.name(), &ck.config, t, &path)?;
    Ok(path)
}

fn find_score_tables(inputs: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut found = Vec::new();
    for p in inputs {
        if p.is_dir() {
            let mut stack = vec![p.clone()];
            while let Some(dir) = stack.pop() {
                for entry in std::fs::read_dir(&dir).with_context(|| format!("listing {}", dir.display()))? {
                    let path = entry?.path();
                    if path.is_dir() {
                        stack.push(path);
                    } else if path.file_name().is_some_and(|n| n.to_string_lossy().ends_with(SCORES_FILE)) {
                        found.push(path);
                    }
                }
            }
        } else if p.is_file() {
            found.push(p.clone());
        } else {
            bail!("{} does not exist", p.display());
        }
    }
    found.sort();
    found.dedup();
    if found.is_empty() {
        bail!("no score tables found");
    }
    Ok(found)
}

fn cmd_report(g: &Global, inputs: &[PathBuf]) -> Result<PathBuf> {
    let mut configs = load_config_scores(&find_score_tables(inputs)?)?;
    sort_configs(&mut configs);
    let report = build_report(&configs)?;
    std::fs::create_dir_all(&g.out)?;
    write_report(&configs, &report, &g.out)?;
    print!("{}", report.summary_markdown());
    println!("{} pairwise comparisons written to {}", report.pairwise.len(), g.out.join("pairwise.csv").display());
    Ok(g.out.join("summary.md"))
}

fn cmd_convert(g: &Global, from: Source, input: Option<&Path>) -> Result<PathBuf> {
    let records = match from {
        Source::CsvDir => {
            let Some(dir) = input else { bail!("--input is required for csv-dir") };
            convert::read_csv_dir(dir)?
        }
        Source::Synthetic => {
            let mut cfg = g.run_config()?;
            if let Some(s) = g.seed {
                cfg.data.synthetic.seed = s;
            }
            synth_generate(&cfg.data.synthetic)?
        }
    };
    let manifest = write_dataset(&g.out, &records)?;
    info!("wrote {} records", records.len());
    Ok(manifest)
}

fn cmd_selftest() -> bool {
    let mut ok = true;
    for c in run_selftest() {
        println!("{} {}: {}", if c.passed { "PASS" } else { "FAIL" }, c.name, c.detail);
        ok &= c.passed;
    }
    ok
}

fn run(cli: &Cli) -> Result<bool> {
    let g = &cli.global;
    match &cli.command {
        Command::Pretrain => println!("{}", cmd_pretrain(g)?.display()),
        Command::Ablate { rows } => {
            for dir in cmd_ablate(g, rows.as_deref())? {
                println!("{}", dir.display());
            }
        }
        Command::Probe(d) => println!("{}", cmd_downstream(g, Task::Probe, &d.checkpoint)?.display()),
        Command::Segment(d) => println!("{}", cmd_downstream(g, Task::Segment, &d.checkpoint)?.display()),
        Command::Report { inputs } => {
            cmd_report(g, inputs)?;
        }
        Command::Convert { from, input } => println!("{}", cmd_convert(g, *from, input.as_deref())?.display()),
        Command::Selftest => return Ok(cmd_selftest()),
    }
    Ok(true)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = Cli::parse();
    match run(&cli) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
