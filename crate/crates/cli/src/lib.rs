//! Config parsing, artifact layout, manifests and subcommands of the
//! `sde-opinf` binary.

pub mod commands;
pub mod config;
pub mod error;
pub mod manifest;
