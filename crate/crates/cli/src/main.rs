mod args;
mod commands;

use std::process::ExitCode;

use clap::Parser;

use args::{Cli, Command};

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::train(a).map(|_| true),
        Command::Evaluate(a) => commands::evaluate(a).map(|_| true),
        Command::Benchmark(a) => commands::benchmark(a),
    };
    match result {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::FAILURE,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}

#[cfg(test)]
mod tests {
    use super::commands::{parse_rates, parse_strategies, run_stem};
    use clap::CommandFactory;
    use vigp::trainers::Strategy;

    #[test]
    fn cli_definition_is_consistent() {
        super::Cli::command().debug_assert();
    }

    #[test]
    fn trace_names() {
        assert_eq!(run_stem("german", Strategy::ViJj, None), "german_vi_jj");
        assert_eq!(run_stem("german", Strategy::SviAdadelta, Some(0.5)), "german_svi_adadelta_lr0.5");
        assert_eq!(run_stem("a", Strategy::SviAdadelta, Some(1.0)), "a_svi_adadelta_lr1");
    }

    #[test]
    fn list_parsing() {
        assert_eq!(parse_strategies("vi_jj, vi-taylor").unwrap(), vec![Strategy::ViJj, Strategy::ViTaylor]);
        assert!(parse_strategies("vi_jj,nope").is_err());
        assert_eq!(parse_rates("0.1,1").unwrap(), vec![0.1, 1.0]);
        assert!(parse_rates("0.1,-1").is_err());
        assert!(parse_rates("").is_err());
    }
}
