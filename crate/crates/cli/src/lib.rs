//! `convfill` command-line tools: corpus forging, evaluation, single turns
//! and the HTTP gateway.

pub mod args;
pub mod eval;
pub mod forge;
pub mod server;
pub mod turn;

use std::fs::File;
use std::io::{BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};

use anyhow::Context;
use convfill::config::{env_overrides, parse_override, RuntimeConfig};

pub use args::{Cli, Command};

pub fn run(cli: Cli) -> anyhow::Result<()> {
    match cli.command {
        Command::Forge(cmd) => forge::run(cmd),
        Command::Eval(cmd) => eval::run(cmd),
        Command::Turn(cmd) => turn::run(cmd),
        Command::Serve(cmd) => server::run(cmd),
    }
}

/// Config file (or defaults), then `CONVFILL_*` environment overrides, then
/// `--set key=value` flags.
pub fn load_config(path: Option<&Path>, sets: &[String]) -> anyhow::Result<RuntimeConfig> {
    let base = match path {
        Some(p) => RuntimeConfig::load(p)?,
        None => RuntimeConfig::default(),
    };
    let mut overrides = env_overrides(std::env::vars());
    for s in sets {
        overrides.push(parse_override(s)?);
    }
    Ok(base.with_overrides(&overrides)?)
}

pub(crate) fn open(path: &Path) -> anyhow::Result<BufReader<File>> {
    let f = File::open(path).with_context(|| format!("opening {}", path.display()))?;
    Ok(BufReader::new(f))
}

/// A file writer, or stdout when `path` is `None` or `-`.
pub(crate) fn output(path: Option<&PathBuf>) -> anyhow::Result<Box<dyn Write>> {
    match path {
        Some(p) if p.as_os_str() != "-" => {
            let f = File::create(p).with_context(|| format!("creating {}", p.display()))?;
            Ok(Box::new(BufWriter::new(f)))
        }
        _ => Ok(Box::new(BufWriter::new(std::io::stdout()))),
    }
}
