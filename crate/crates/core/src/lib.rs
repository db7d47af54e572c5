// Negated float comparisons are used on purpose so NaN fails validation.
#![allow(clippy::neg_cmp_op_on_partial_ord)]

pub mod association;
pub mod birthgrid;
pub mod cli;
pub mod evaluation;
pub mod geometry;
pub mod io;
pub mod moupdate;
pub mod persistence;
pub mod pipeline;
pub mod simulator;
pub mod sofilter;
