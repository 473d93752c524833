//! Reduced optimal power flow toolkit.
//!
//! Pipeline: parse a grid case ([`grid`]), solve DC-OPF variants as linear
//! programs ([`opf`] on top of [`lp`]), expand the grid into a node-split
//! graph ([`graph`]), train a two-stage hierarchical GNN to screen
//! constraints ([`gnn`]), generate labeled datasets ([`datagen`]), and
//! benchmark the four methods FOPF / ROPFL / ROPFG / ROPFLG ([`bench`]).

pub mod bench;
pub mod datagen;
pub mod gnn;
pub mod graph;
pub mod grid;
pub mod lp;
pub mod opf;

pub use bench::{
    build_spec_from_predictions, compute_error_metrics, errors_csv, log_csv, report_csv,
    run_benchmark, BenchConfig, BenchError, BenchOutput, ErrorReport, FamilyErrors, LogRow,
    MethodRow, Screening,
};
pub use datagen::{
    generate, read_dataset, write_dataset, Dataset, DatasetError, DatasetHeader, GenConfig,
    GenError, Sample, Split,
};
pub use gnn::{
    classify, grad_check, predict_lines, predict_max_gens, train, GnnModel, LossKind, ModelError,
    PredictError, Stage, TrainConfig, TrainError, TrainHistory,
};
pub use graph::{build_features, expand, normalize_adjacency, ExpandedGraph, FeatureError};
pub use grid::{parse_case, serialize_case, validate, Bus, Generator, Line, Network};
pub use lp::{solve_lp, LpOutcome, LpProblem, LpStatus};
pub use opf::{
    build_opf, recover_flows, solve_opf, solve_with_fallback, verify_solution, LoadVector, Method,
    OpfError, OpfSolution, OpfVars, RopfSpec, VerificationReport,
};
