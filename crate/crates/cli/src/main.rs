//! `terraseg` command-line entry point.

mod commands;
mod fail;
mod params;
mod svg;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::parser::ValueSource;
use clap::{Arg, ArgAction, Command};

use crate::commands::{Spec, COMMANDS};
use crate::fail::Failure;
use crate::params::{env_name, flag_name, Params, ENV_PREFIX};

const CONFIG_FILE: &str = "config.txt";

fn subcommand(spec: &Spec) -> Command {
    let mut cmd = Command::new(spec.name).about(spec.about).arg(
        Arg::new("config")
            .long("config")
            .value_name("FILE")
            .help("key = value file; flags and environment override it"),
    );
    for key in spec.keys {
        let mut help = key.help.to_string();
        if let Some(d) = key.default {
            help.push_str(&format!(" [default: {d}]"));
        }
        help.push_str(&format!(" [env: {}]", env_name(key.name)));
        cmd = cmd.arg(
            Arg::new(key.name)
                .long(flag_name(key.name))
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(help),
        );
    }
    for &name in spec.train {
        cmd = cmd.arg(
            Arg::new(name)
                .long(flag_name(name))
                .value_name("VALUE")
                .action(ArgAction::Set)
                .help(format!("training parameter [env: {}]", env_name(name))),
        );
    }
    cmd
}

fn cli() -> Command {
    let mut cmd = Command::new("terraseg")
        .version(env!("CARGO_PKG_VERSION"))
        .about("Texture-aware pre-training and pseudo-labeled fine-tuning for sparse terrain segmentation")
        .after_help(format!(
            "Every key can also be set with the environment variable {ENV_PREFIX}<KEY>.\n\
             Precedence: defaults < --config file < environment < flags.\n\
             Exit codes: 0 ok, 1 internal, 2 usage, 3 io, 4 config, 5 data, 6 divergence."
        ))
        .subcommand_required(true);
    for spec in COMMANDS {
        cmd = cmd.subcommand(subcommand(spec));
    }
    cmd
}

fn run(args: Vec<String>) -> Result<(), Failure> {
    let matches = match cli().try_get_matches_from(args) {
        Ok(m) => m,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion | ErrorKind::DisplayHelpOnMissingArgumentOrSubcommand) {
                print!("{e}");
                return Ok(());
            }
            let text = e.to_string();
            let first = text.lines().next().unwrap_or("invalid arguments");
            return Err(Failure::usage(first.trim_start_matches("error: ")));
        }
    };
    let (name, sub) = matches.subcommand().expect("subcommand is required");
    let spec = COMMANDS.iter().find(|s| s.name == name).expect("registered subcommand");
    let mut flags = Vec::new();
    for id in spec.keys.iter().map(|k| k.name).chain(spec.train.iter().copied()) {
        if sub.value_source(id) == Some(ValueSource::CommandLine) {
            flags.push((id.to_string(), sub.get_one::<String>(id).unwrap().clone()));
        }
    }
    let config = sub.get_one::<String>("config").map(PathBuf::from);
    let params = Params::resolve(name, spec.keys, spec.train, config.as_deref(), &flags)?;
    let out = params.path("out")?;
    std::fs::create_dir_all(&out).map_err(|e| Failure::io(format!("cannot create {}: {e}", out.display())))?;
    write(&out.join(CONFIG_FILE), params.to_text().as_bytes())?;
    (spec.run)(&params, &out)
}

pub fn write(path: &Path, bytes: &[u8]) -> Result<(), Failure> {
    terraseg::io::write_atomic(path, bytes).map_err(Failure::from)
}

fn main() -> ExitCode {
    std::panic::set_hook(Box::new(|info| {
        eprintln!("error: code=internal message={}", info.to_string().replace(['\n', '\r'], " "));
    }));
    match std::panic::catch_unwind(|| run(std::env::args().collect())) {
        Ok(Ok(())) => ExitCode::SUCCESS,
        Ok(Err(f)) => {
            eprintln!("{f}");
            ExitCode::from(f.kind.code() as u8)
        }
        Err(_) => ExitCode::from(1),
    }
}
