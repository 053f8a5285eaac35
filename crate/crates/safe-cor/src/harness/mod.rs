//! Experiment harness: run configuration, checkpoint evaluation, the expert
//! pipeline, the shaping-ablation grid, and SVG training curves.

pub mod config;
pub mod eval;
pub mod pipeline;
pub mod plot;

pub use config::{parse_override, DemoPaths, RunConfig};
pub use eval::{
    evaluate, roll_episodes, score, write_eval_csv, EvalRow, Evaluation, ScoreParams,
    EVAL_FIELDS_HEADER,
};
pub use pipeline::{
    ablation_grid, generate_demos, read_comparison_csv, run_pipeline, write_comparison_csv,
    ComparisonRow, ABLATION_VARIANTS, COMPARISON_HEADER,
};
pub use plot::{emit_plots, line_chart_svg, map_linear, Series};
