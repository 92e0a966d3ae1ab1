mod commands;
mod config;

use std::process::ExitCode;

use clap::Parser;

use config::{Cli, Command, RunConfig};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags, config or inputs the user can fix; exit status 1.
    Usage(String),
    /// Failure while running; exit status 2.
    Runtime(memdec_core::Error),
    /// A check that ran to completion but did not pass; exit status 2.
    Failed(String),
}

impl From<memdec_core::Error> for CliError {
    fn from(e: memdec_core::Error) -> Self {
        match e {
            memdec_core::Error::Config(msg) => CliError::Usage(msg),
            other => CliError::Runtime(other),
        }
    }
}

fn run(command: Command) -> Result<(), CliError> {
    let args = command.args();
    let cfg = RunConfig::resolve(args)?;
    let explicit_len = args.max_len.is_some();
    match &command {
        Command::Train(_) => commands::train(&cfg),
        Command::Generate(_) => commands::generate(&cfg, explicit_len),
        Command::Evaluate(_) => commands::evaluate(&cfg, explicit_len),
        Command::CountParams(_) => commands::count(&cfg),
        Command::InspectAttention(_) => commands::inspect(&cfg, explicit_len),
        Command::GradCheck(_) => commands::grad_check(&cfg),
        Command::MakeToyData(_) => commands::make_toy(&cfg),
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli.command) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(1)
        }
        Err(CliError::Runtime(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(2)
        }
        Err(CliError::Failed(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}
