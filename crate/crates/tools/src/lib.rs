// SPDX-License-Identifier: MIT OR Apache-2.0

//! File formats and the `rivalry` command line for [`rivalry_core`].
//!
//! - [`dump`]: the manifest + raw f32 + JSON-lines dump format.
//! - [`artifacts`]: SAE dumps, steering plan directories, record files.
//! - [`config`]: JSON run configuration with flag overrides.
//! - [`cli`]: the subcommands.

pub mod artifacts;
pub mod cli;
pub mod config;
pub mod dump;
pub mod error;

pub use error::ToolError;
