//! Configuration, run persistence and subcommands of the `kinklab` tool.

#![allow(clippy::neg_cmp_op_on_partial_ord, clippy::needless_range_loop)]

pub mod commands;
pub mod config;
pub mod exit;
pub mod persist;
pub mod pipeline;
