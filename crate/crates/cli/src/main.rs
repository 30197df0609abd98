mod args;
mod commands;
mod manifest;
mod output;

use std::process::ExitCode;

use clap::Parser;
use sigan::SiganError;

use args::{Cli, Command};

fn error_line(err: &anyhow::Error) -> String {
    let kind = err.chain().find_map(|c| c.downcast_ref::<SiganError>()).map_or("error", SiganError::kind);
    serde_json::json!({ "error": kind, "message": format!("{err:#}") }).to_string()
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let result = match &cli.command {
        Command::Train(a) => commands::run_train(a),
        Command::Segment(a) => commands::run_segment(a),
        Command::Augment(a) => commands::run_augment(a),
        Command::EvaluateFid(a) => commands::run_evaluate_fid(a),
        Command::EvaluateSeg(a) => commands::run_evaluate_seg(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("{}", error_line(&err));
            ExitCode::from(1)
        }
    }
}
