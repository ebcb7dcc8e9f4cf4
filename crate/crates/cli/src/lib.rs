//! Library side of the `mll` binary: argument types, configuration files,
//! the verbs and the SVG writer.

/// `println!` that ignores a closed stdout pipe.
macro_rules! say {
    ($($t:tt)*) => {{
        use std::io::Write as _;
        let _ = writeln!(std::io::stdout().lock(), $($t)*);
    }};
}

pub mod args;
pub mod commands;
pub mod config;
pub mod error;
pub mod svg;

use args::{Cli, Command};
use error::CliResult;

pub fn run(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Toy(a) => commands::toy::execute(cli, a).map(drop),
        Command::Eval(a) => commands::eval::execute(cli, a).map(drop),
        Command::Sweep(a) => commands::sweep::execute(cli, a).map(drop),
        Command::Gradcheck(a) => commands::gradcheck::execute(cli, a).map(drop),
        Command::SampleMargins(a) => commands::margins::execute(cli, a).map(drop),
    }
}

