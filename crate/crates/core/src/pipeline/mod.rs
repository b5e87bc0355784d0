//! Pretraining, downstream evaluation and the experiment harness.

pub mod ablation;
pub mod checkpoint;
pub mod config;
pub mod cv;
pub mod probe;
pub mod pretrain;
pub mod report;
pub mod segment;

pub use checkpoint::Checkpoint;
pub use config::{AblationConfig, BeatMode, RhythmMode, RunConfig, ABLATION_GRID};
pub use pretrain::{pretrain, pretrain_with, Model, PretrainReport};
pub use ablation::{ablation_plan, load_records, run_ablation, RunLog};
pub use cv::{cross_validate, read_score_table, write_score_table, CvPlan, ScoreRow};
