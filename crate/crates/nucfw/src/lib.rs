//! MovieLens loading, experiment orchestration and the `nucfw` command line
//! on top of [`nucfw_core`].

#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod cli;
pub mod config;
pub mod experiment;
pub mod movielens;
pub mod output;

pub use config::{DataSource, Radius, RunSpec};
pub use experiment::{run_experiment, tune_delta, RunOutcome, SummaryRow, TuneOutcome, TuningRow};
pub use movielens::{parse_movielens, Format, ParseError};
