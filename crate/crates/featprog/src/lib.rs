//! Programmable feature engineering for multivariate time series.
//!
//! The crate has three parts:
//!
//! * a feature-programming engine — panels, the Difference/Window/Shift
//!   operator kernels, an expression DSL for feature templates, and an
//!   order-by-order generation engine producing hierarchical (0th/1st/2nd
//!   order) feature matrices with exact warmup and lineage metadata;
//! * a spin-gas Glauber dynamics simulator — a dynamical Ising model whose
//!   local field couples to discrete momentum and acceleration, used both to
//!   synthesize panels and to validate the model numerically by exhaustive
//!   enumeration at small N;
//! * an evaluation harness — chronological train/test split, a closed-form
//!   ridge baseline, R^2/Pearson metrics, a seeded synthetic dataset, and
//!   resemblance scoring against hand-crafted features.

pub mod engine;
pub mod error;
pub mod eval;
pub mod expr;
pub mod ops;
pub mod program;
pub mod series;
pub mod spingas;

pub use engine::{evaluate_expr, export_features, export_features_string, generate, GenerationReport};
pub use error::{Error, Result};
pub use eval::{
    build_table, build_table_with, compare, evaluate_table, hand_crafted, make_synthetic, pearson,
    r2, resemble_report, ridge_fit, ridge_predict, run_comparison, CompareReport, EvalOutcome,
    ResembleReport, RidgeModel, SupervisedTable, SyntheticDataset, SyntheticTarget, TableRow,
};
pub use expr::{parse_expr, Expr};
pub use ops::{difference, ratio, shift, square, window, WindowStat};
pub use program::{
    default_program, parse_program, resemblance_program, FeatureProgram, Flow, OrderBlock,
    Resemblance,
};
pub use series::{FeatureMatrix, FeatureSeries, Panel};
pub use spingas::{
    build_joint, check_node_conditionals, cond_prob, local_field, one_step_prob, path_probability,
    prob_up, simulate_panel, step_sample, ConditionalReport, HistoryInit, JointModel, ParamsFile,
    ScheduleEntry, SpinGasParams, SpinHistory,
};
