use std::fmt;
use std::path::PathBuf;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::beats::{PoolReducer, RuleLabeler, DEFAULT_BEAT_WINDOW};
use crate::data::synth::SynthConfig;
use crate::error::{Error, Result};
use crate::loss::LossConfig;
use crate::nn::{AdamConfig, EncoderConfig};
use crate::stats::Task;
use crate::vcg::AugmentParams;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum RhythmMode {
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "soft_1")]
    Soft1,
    #[serde(rename = "soft_2")]
    Soft2,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BeatMode {
    #[serde(rename = "none", alias = "-")]
    None,
    #[serde(rename = "hard")]
    Hard,
    #[serde(rename = "soft_1")]
    Soft1,
    #[serde(rename = "soft_2")]
    Soft2,
}

impl RhythmMode {
    pub fn name(self) -> &'static str {
        match self {
            RhythmMode::Hard => "hard",
            RhythmMode::Soft1 => "soft_1",
            RhythmMode::Soft2 => "soft_2",
        }
    }
}

impl BeatMode {
    pub fn name(self) -> &'static str {
        match self {
            BeatMode::None => "-",
            BeatMode::Hard => "hard",
            BeatMode::Soft1 => "soft_1",
            BeatMode::Soft2 => "soft_2",
        }
    }

    pub fn enabled(self) -> bool {
        self != BeatMode::None
    }
}

/// Rhythm-level target, beat-level target and soft_1 exponent.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AblationConfig {
    pub rhythm_mode: RhythmMode,
    pub beat_mode: BeatMode,
    pub exponent: f64,
}

const fn row(rhythm_mode: RhythmMode, beat_mode: BeatMode, exponent: f64) -> AblationConfig {
    AblationConfig { rhythm_mode, beat_mode, exponent }
}

/// The ablation grid, in reporting order. The first row is the baseline.
pub const ABLATION_GRID: [AblationConfig; 14] = {
    use BeatMode as B;
    use RhythmMode as R;
    [
        row(R::Hard, B::None, 1.0),
        row(R::Hard, B::Hard, 1.0),
        row(R::Hard, B::Soft1, 1.0),
        row(R::Hard, B::Soft1, 50.0),
        row(R::Hard, B::Soft2, 1.0),
        row(R::Soft1, B::None, 1.0),
        row(R::Soft1, B::None, 50.0),
        row(R::Soft1, B::Hard, 1.0),
        row(R::Soft1, B::Hard, 50.0),
        row(R::Soft1, B::Soft1, 1.0),
        row(R::Soft1, B::Soft1, 50.0),
        row(R::Soft2, B::None, 1.0),
        row(R::Soft2, B::Hard, 1.0),
        row(R::Soft2, B::Soft2, 1.0),
    ]
};

impl AblationConfig {
    pub const BASELINE: AblationConfig = ABLATION_GRID[0];
    pub const BEST: AblationConfig = ABLATION_GRID[8];

    pub fn table_index(&self) -> Option<usize> {
        ABLATION_GRID.iter().position(|r| r == self)
    }

    pub fn is_baseline(&self) -> bool {
        *self == Self::BASELINE
    }

    pub fn uses_soft1(&self) -> bool {
        self.rhythm_mode == RhythmMode::Soft1 || self.beat_mode == BeatMode::Soft1
    }

    /// Strict mode accepts only grid rows; otherwise any well-formed triple.
    pub fn validate(&self, strict: bool) -> Result<()> {
        if !(self.exponent >= 1.0 && self.exponent.is_finite()) {
            return Err(Error::Config(format!("exponent must be >= 1, got {}", self.exponent)));
        }
        if strict && self.table_index().is_none() {
            return Err(Error::Config(format!(
                "({self}) is not one of the 14 ablation grid rows; pass --no-strict to allow free combinations"
            )));
        }
        Ok(())
    }

    /// Short filesystem-safe tag, e.g. `soft_1-hard-50`.
    pub fn slug(&self) -> String {
        let beat = if self.beat_mode == BeatMode::None { "none" } else { self.beat_mode.name() };
        format!("{}-{}-{}", self.rhythm_mode.name(), beat, self.exponent)
    }
}

impl std::str::FromStr for AblationConfig {
    type Err = Error;

    /// Parses `rhythm,beat,exponent`, e.g. `soft_1,hard,50` or `hard,-,1`.
    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.split(',').map(str::trim).collect();
        let [r, b, e] = parts.as_slice() else {
            return Err(Error::Config(format!("expected `rhythm,beat,exponent`, got `{s}`")));
        };
        let rhythm_mode = match *r {
            "hard" => RhythmMode::Hard,
            "soft_1" => RhythmMode::Soft1,
            "soft_2" => RhythmMode::Soft2,
            other => return Err(Error::Config(format!("unknown rhythm mode `{other}`"))),
        };
        let beat_mode = match *b {
            "-" | "none" => BeatMode::None,
            "hard" => BeatMode::Hard,
            "soft_1" => BeatMode::Soft1,
            "soft_2" => BeatMode::Soft2,
            other => return Err(Error::Config(format!("unknown beat mode `{other}`"))),
        };
        let exponent = e.parse().map_err(|_| Error::Config(format!("bad exponent `{e}`")))?;
        Ok(Self { rhythm_mode, beat_mode, exponent })
    }
}

impl fmt::Display for AblationConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}, {}, {}", self.rhythm_mode.name(), self.beat_mode.name(), self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DataSection {
    /// Manifest-format dataset root; synthetic data is generated when absent.
    pub root: Option<PathBuf>,
    pub synthetic: SynthConfig,
    /// Records with these folds are used for pretraining.
    pub pretrain_folds: Vec<u8>,
}

impl Default for DataSection {
    fn default() -> Self {
        Self { root: None, synthetic: SynthConfig::default(), pretrain_folds: (1..=8).collect() }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LabelerKind {
    /// Reference beat annotations.
    Oracle,
    /// Width/prematurity heuristic.
    Rule,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TargetsSection {
    pub rhythm_mode: RhythmMode,
    pub beat_mode: BeatMode,
    pub exponent: f64,
    /// Neighbour count for soft_2.
    pub k: usize,
    pub p_norm: f64,
    pub labeler: LabelerKind,
    pub rule: RuleLabeler,
}

impl Default for TargetsSection {
    fn default() -> Self {
        let best = AblationConfig::BEST;
        Self {
            rhythm_mode: best.rhythm_mode,
            beat_mode: best.beat_mode,
            exponent: best.exponent,
            k: 3,
            p_norm: 2.0,
            labeler: LabelerKind::Oracle,
            rule: RuleLabeler::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ModelSection {
    pub encoder: EncoderConfig,
    /// Temporal pooling ahead of the rhythm head.
    pub rhythm_pool: PoolReducer,
    pub roi_pool: PoolReducer,
    /// Beat window length in samples (even).
    pub beat_window: usize,
    /// Beats whose window is more than this fraction padding are skipped.
    pub max_padding_fraction: f64,
}

impl Default for ModelSection {
    fn default() -> Self {
        Self {
            encoder: EncoderConfig::default(),
            rhythm_pool: PoolReducer::Mean,
            roi_pool: PoolReducer::Mean,
            beat_window: DEFAULT_BEAT_WINDOW,
            max_padding_fraction: crate::beats::MAX_PADDING_FRACTION,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    pub seed: u64,
}

impl Default for TrainSection {
    fn default() -> Self {
        Self { epochs: 5, batch_size: 32, adam: AdamConfig::default(), seed: 0 }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProbeSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Max-pool kernel over encoder frames before the linear layer.
    pub pool_kernel: usize,
    pub threshold: f64,
    /// Restrict the label set to these classes (all labels when empty).
    pub classes: Vec<String>,
}

impl Default for ProbeSection {
    fn default() -> Self {
        Self { epochs: 30, batch_size: 16, adam: AdamConfig::default(), pool_kernel: 4, threshold: 0.5, classes: vec![] }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SegmentSection {
    pub epochs: usize,
    pub batch_size: usize,
    pub adam: AdamConfig,
    /// Inclusive sample range scored at evaluation.
    pub eval_window: (usize, usize),
}

impl Default for SegmentSection {
    fn default() -> Self {
        Self { epochs: 20, batch_size: 8, adam: AdamConfig::default(), eval_window: (500, 4500) }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSection {
    pub probe: ProbeSection,
    pub segment: SegmentSection,
    /// Repetitions of cross-validation.
    pub runs: usize,
    pub probe_folds: usize,
    pub segment_folds: usize,
    /// Downstream tasks scored by the ablation sweep.
    pub tasks: Vec<Task>,
}

impl Default for EvalSection {
    fn default() -> Self {
        Self {
            probe: ProbeSection::default(),
            segment: SegmentSection::default(),
            runs: 5,
            probe_folds: 10,
            segment_folds: 5,
            tasks: vec![Task::Probe, Task::Segment],
        }
    }
}

/// Everything a run needs; one TOML file with these sections.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize, Default)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub data: DataSection,
    pub augment: AugmentParams,
    pub targets: TargetsSection,
    pub loss: LossConfig,
    pub model: ModelSection,
    pub train: TrainSection,
    pub eval: EvalSection,
}

impl RunConfig {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Config(e.to_string()))
    }

    /// Small model and short schedules for quick CPU runs.
    pub fn desk() -> Self {
        let mut c = Self::default();
        c.model.encoder = EncoderConfig::small();
        c.train.batch_size = 8;
        c
    }

    pub fn ablation(&self) -> AblationConfig {
        AblationConfig {
            rhythm_mode: self.targets.rhythm_mode,
            beat_mode: self.targets.beat_mode,
            exponent: self.targets.exponent,
        }
    }

    pub fn with_ablation(&self, a: AblationConfig) -> Self {
        let mut c = self.clone();
        c.targets.rhythm_mode = a.rhythm_mode;
        c.targets.beat_mode = a.beat_mode;
        c.targets.exponent = a.exponent;
        c
    }

    pub fn validate(&self, strict: bool) -> Result<()> {
        self.ablation().validate(strict)?;
        self.augment.validate()?;
        self.loss.validate()?;
        self.model.encoder.validate()?;
        self.data.synthetic.validate()?;
        if self.model.beat_window == 0 || !self.model.beat_window.is_multiple_of(2) {
            return Err(Error::Config(format!("beat_window must be even and positive, got {}", self.model.beat_window)));
        }
        if self.train.batch_size < 2 {
            return Err(Error::Config("batch_size must be at least 2".into()));
        }
        if self.targets.k == 0 {
            return Err(Error::Config("soft_2 k must be at least 1".into()));
        }
        if self.eval.probe.pool_kernel == 0 {
            return Err(Error::Config("probe pool_kernel must be at least 1".into()));
        }
        let (lo, hi) = self.eval.segment.eval_window;
        if lo > hi {
            return Err(Error::Config(format!("eval_window [{lo}, {hi}] is empty")));
        }
        Ok(())
    }

    /// Stable short hash of the full configuration.
    pub fn hash(&self) -> String {
        let json = serde_json::to_string(self).expect("config serialises");
        hex::encode(Sha256::digest(json.as_bytes()))[..12].to_string()
    }
}
