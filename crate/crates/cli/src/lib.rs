//! Command-line front end: config parsing, subcommand dispatch and
//! hashed report output.

pub mod config;
pub mod output;
pub mod run;

pub use config::{RunConfig, Stage, PRESETS};
pub use output::{FileEntry, PlotEntry, RunReport};
pub use run::{run_command, run_stages, Command, RunOptions};
