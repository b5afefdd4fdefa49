//! `gradlens <experiment> --config <path> [--full] [--seed N] [--out DIR]`
//!
//! Every failure prints a single machine-readable JSON line to stderr and
//! exits nonzero; successful runs list the written artifacts on stdout and
//! finish with a JSON status line.

use clap::{Arg, ArgAction, Command};
use gradlens_cli::config::Config;
use gradlens_cli::experiments;
use std::path::PathBuf;
use std::process::ExitCode;

fn cli() -> Command {
    let mut cmd = Command::new("gradlens")
        .about("Small-scale study of how adversarial training changes loss-gradient explanations")
        .subcommand_required(true)
        .arg_required_else_help(true)
        // Unknown experiment names fall through to our registry lookup so the
        // error lists what is available.
        .allow_external_subcommands(true);
    for exp in experiments::registry() {
        cmd = cmd.subcommand(
            Command::new(exp.name())
                .about(exp.about())
                .arg(
                    Arg::new("config")
                        .long("config")
                        .value_name("PATH")
                        .value_parser(clap::value_parser!(PathBuf))
                        .required(true)
                        .help("TOML run configuration"),
                )
                .arg(
                    Arg::new("full")
                        .long("full")
                        .action(ArgAction::SetTrue)
                        .help("use the full published-scale ε grid instead of the config's"),
                )
                .arg(
                    Arg::new("seed")
                        .long("seed")
                        .value_name("N")
                        .value_parser(clap::value_parser!(u64))
                        .help("replace the config's seed list with this single seed"),
                )
                .arg(
                    Arg::new("out")
                        .long("out")
                        .value_name("DIR")
                        .value_parser(clap::value_parser!(PathBuf))
                        .help("artifact directory (default: runs/<experiment>)"),
                ),
        );
    }
    cmd
}

fn error_line(experiment: &str, message: &str) -> String {
    serde_json::json!({
        "status": "error",
        "experiment": experiment,
        "message": message,
    })
    .to_string()
}

fn run() -> Result<(), (String, String)> {
    let matches = cli().get_matches();
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let exp = experiments::lookup(name).map_err(|e| (name.to_string(), e.to_string()))?;
    let fail = |e: gradlens_core::Error| (name.to_string(), e.to_string());

    let config_path: &PathBuf = sub.get_one("config").expect("--config is required");
    let cfg = Config::load(config_path).map_err(fail)?.with_overrides(
        sub.get_one::<u64>("seed").copied(),
        sub.get_one::<PathBuf>("out").cloned(),
        sub.get_flag("full"),
    );
    let out_dir = cfg
        .out_dir
        .clone()
        .unwrap_or_else(|| PathBuf::from("runs").join(exp.name()));

    let paths = exp.run(&cfg, &out_dir).map_err(fail)?;
    for p in &paths {
        println!("{}", p.display());
    }
    println!(
        "{}",
        serde_json::json!({
            "status": "ok",
            "experiment": exp.name(),
            "artifacts": paths.len(),
            "out_dir": out_dir.display().to_string(),
        })
    );
    Ok(())
}

fn main() -> ExitCode {
    match run() {
        Ok(()) => ExitCode::SUCCESS,
        Err((experiment, message)) => {
            eprintln!("{}", error_line(&experiment, &message));
            ExitCode::FAILURE
        }
    }
}
