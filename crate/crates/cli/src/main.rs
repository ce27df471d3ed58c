//! `deepembed` command-line tool.

mod commands;
mod config;

use std::process::ExitCode;

use clap::{Arg, ArgAction, ArgMatches, Command};

use config::{flag, RunConfig, KEYS};

#[derive(Debug)]
pub enum CliError {
    /// Bad flags or configuration; exit status 2.
    Usage(String),
    /// Failure while processing data; exit status 1.
    Data(deepembed::Error),
}

impl From<deepembed::Error> for CliError {
    fn from(e: deepembed::Error) -> Self {
        Self::Data(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        Self::Data(e.into())
    }
}

const COMMANDS: &[(&str, &str)] = &[
    ("gen-synthetic", "Generate a synthetic near-duplicate dataset and its ground truth"),
    ("build-vocab", "Train the visual vocabulary, Hamming embedding and LSH bank"),
    ("build-index", "Index a dataset"),
    ("query", "Rank indexed images for query images"),
    ("evaluate", "Run every ground-truth query and report mAP or N-S"),
    ("fit-curves", "Fit a similarity curve to labeled distances"),
    ("memstats", "Print the index memory accounting"),
    ("sample-distances", "Dump labeled distances for curve fitting"),
];

fn cli() -> Command {
    let mut root = Command::new("deepembed")
        .about("Image retrieval fusing local, regional and global evidence")
        .version(env!("CARGO_PKG_VERSION"))
        .subcommand_required(true)
        .arg_required_else_help(true);
    for &(name, about) in COMMANDS {
        let mut sub = Command::new(name).about(about).arg(
            Arg::new("config").short('c').long("config").value_name("FILE").help("key = value configuration file"),
        );
        for k in KEYS.iter().filter(|k| k.commands.contains(&name)) {
            let mut help = k.help.to_string();
            if !k.default.is_empty() {
                help.push_str(&format!(" [default: {}]", k.default));
            }
            sub = sub.arg(Arg::new(k.name).long(flag(k.name)).value_name("VALUE").action(ArgAction::Set).help(help));
        }
        root = root.subcommand(sub);
    }
    root
}

fn resolve(matches: &ArgMatches) -> Result<RunConfig, CliError> {
    let mut cfg = RunConfig::defaults();
    if let Some(path) = matches.get_one::<String>("config") {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Usage(format!("cannot read config file {path}: {e}")))?;
        cfg.apply_file(&text)?;
    }
    cfg.apply_env(std::env::vars())?;
    for id in matches.ids() {
        let name = id.as_str();
        if name == "config" {
            continue;
        }
        if let Some(v) = matches.get_one::<String>(name) {
            cfg.set(name, v, "flag")?;
        }
    }
    Ok(cfg)
}

fn run(matches: &ArgMatches) -> Result<(), CliError> {
    let (name, sub) = matches.subcommand().expect("subcommand required");
    let cfg = resolve(sub)?;
    for k in KEYS.iter().filter(|k| cfg.source(k.name) != "default") {
        log::info!("{} = {} ({})", k.name, cfg.raw(k.name), cfg.source(k.name));
    }
    let threads: usize = cfg.get("threads")?;
    if threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build_global()
            .map_err(|e| CliError::Usage(format!("thread pool: {e}")))?;
    }
    commands::dispatch(name, &cfg)
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).format_timestamp(None).init();
    let matches = match cli().try_get_matches() {
        Ok(m) => m,
        Err(e) => {
            let _ = e.print();
            return ExitCode::from(if e.use_stderr() { 2 } else { 0 });
        }
    };
    match run(&matches) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("usage error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {}: {e}", e.name());
            ExitCode::from(1)
        }
    }
}
