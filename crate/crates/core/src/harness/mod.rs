//! Synthetic corpora, temporal splits, the end-to-end pipeline, sliding-window
//! backtests and the team-feature ablation.

pub mod ablation;
pub mod backtest;
pub mod pipeline;
pub mod split;
pub mod synth;

pub use ablation::{ablation_run, AblationReport, ArmReport};
pub use backtest::{sliding_window_run, windows_csv, windows_svg, BacktestConfig, BacktestRun, StabilitySummary, WindowPlan, WindowResult};
pub use pipeline::{prepare, run_pipeline, PipelineConfig, PipelineRun, Prepared};
pub use split::{temporal_split, DateRange, SplitConfig, TemporalSplit};
pub use synth::{synth_generate, FreezePeriod, SynthConfig};
