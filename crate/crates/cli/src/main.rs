//! `prism` command-line interface.
//!
//! Commands: gen-data, train, score, eval, grad-check, ablate.
//! Exit codes: 0 success, 1 missing file / runtime failure, 2 parse or
//! config error, 3 dimension mismatch between artifacts.

mod commands;
mod config;

use commands::Sweep;
use config::{Overrides, RunConfig};
use prism_core::error::{Error, Result};
use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

const USAGE: &str = "\
usage: prism <command> [flags]

commands:
  gen-data   --config FILE --out DIR
  train      --config FILE --data DIR --out CHECKPOINT
  score      --config FILE --checkpoint FILE --train-data FILE --data FILE --out FILE
  eval       --id FILE --ood FILE [--ood FILE ...] [--tpr X] [--out FILE]
  grad-check --config FILE
  ablate     --config FILE --sweep lambda|m --values V1,V2,... --out FILE

common flags (override config keys):
  --seed N  --k N  --tpr X  --lambda X  --m N
";

fn main() -> ExitCode {
    match run() {
        Ok(code) => code,
        Err(err) => {
            eprintln!("error[{}]: {}", error_kind(&err), err);
            ExitCode::from(exit_code(&err))
        }
    }
}

fn error_kind(err: &Error) -> &'static str {
    match err {
        Error::Io(_) => "io",
        Error::Config(_) => "config",
        Error::Format(_) | Error::Truncated { .. } | Error::Version { .. } => "format",
        Error::Dimension { .. } | Error::NotSquare { .. } => "dimension",
        _ => "runtime",
    }
}

fn exit_code(err: &Error) -> u8 {
    match err {
        Error::Io(_) => 1,
        Error::Config(_) | Error::Format(_) | Error::Truncated { .. } | Error::Version { .. } => 2,
        Error::Dimension { .. } | Error::NotSquare { .. } => 3,
        _ => 1,
    }
}

struct Flags {
    single: BTreeMap<String, String>,
    ood: Vec<PathBuf>,
}

impl Flags {
    fn parse(args: &[String]) -> Result<Self> {
        let mut single = BTreeMap::new();
        let mut ood = Vec::new();
        let mut i = 0;
        while i < args.len() {
            let flag = &args[i];
            if !flag.starts_with("--") {
                return Err(Error::Config(format!("unexpected argument '{flag}'")));
            }
            let value = args
                .get(i + 1)
                .ok_or_else(|| Error::Config(format!("flag {flag} needs a value")))?
                .clone();
            let name = flag.trim_start_matches("--").to_string();
            if name == "ood" {
                ood.push(PathBuf::from(value));
            } else if single.insert(name.clone(), value).is_some() {
                return Err(Error::Config(format!("flag --{name} given twice")));
            }
            i += 2;
        }
        Ok(Self { single, ood })
    }

    fn path(&self, name: &str) -> Option<PathBuf> {
        self.single.get(name).map(PathBuf::from)
    }

    fn required_path(&self, name: &str) -> Result<PathBuf> {
        self.path(name)
            .ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
    }

    fn parsed<T: std::str::FromStr>(&self, name: &str) -> Result<Option<T>> {
        match self.single.get(name) {
            None => Ok(None),
            Some(raw) => raw
                .parse::<T>()
                .map(Some)
                .map_err(|_| Error::Config(format!("bad value for --{name}: {raw}"))),
        }
    }

    fn overrides(&self) -> Result<Overrides> {
        Ok(Overrides {
            seed: self.parsed("seed")?,
            k: self.parsed("k")?,
            tpr: self.parsed("tpr")?,
            lambda: self.parsed("lambda")?,
            m: self.parsed("m")?,
        })
    }
}

fn load_config(flags: &Flags) -> Result<RunConfig> {
    let path = flags.required_path("config")?;
    let text = fs::read_to_string(&path)?;
    let mut notices = Vec::new();
    let config = RunConfig::parse(&text, &flags.overrides()?, &mut notices)?;
    for notice in &notices {
        eprintln!("{notice}");
    }
    // Every run logs the fully resolved configuration and seed.
    eprint!("{}", config.render());
    Ok(config)
}

fn run() -> Result<ExitCode> {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let Some(command) = args.first() else {
        eprint!("{USAGE}");
        return Ok(ExitCode::from(2));
    };
    let flags = Flags::parse(&args[1..])?;

    match command.as_str() {
        "gen-data" => {
            let config = load_config(&flags)?;
            let out = flag_or_config_dir(&flags, "out", config.out_dir.as_deref())?;
            commands::cmd_gen_data(&config, &out)?;
        }
        "train" => {
            let config = load_config(&flags)?;
            let data = flag_or_config_dir(&flags, "data", config.data_dir.as_deref())?;
            let out = flags.required_path("out")?;
            commands::cmd_train(&config, &data, &out)?;
        }
        "score" => {
            let config = load_config(&flags)?;
            let checkpoint = flags.required_path("checkpoint")?;
            let train_data = flags.required_path("train-data")?;
            let data = flags.required_path("data")?;
            let out = flags.required_path("out")?;
            commands::cmd_score(&config, &checkpoint, &train_data, &data, &out)?;
        }
        "eval" => {
            let id = flags.required_path("id")?;
            if flags.ood.is_empty() {
                return Err(Error::Config("eval needs at least one --ood file".to_string()));
            }
            let tpr = flags.parsed::<f64>("tpr")?.unwrap_or(0.95);
            let out = flags.path("out");
            commands::cmd_eval(&id, &flags.ood, tpr, out.as_deref())?;
        }
        "grad-check" => {
            let config = load_config(&flags)?;
            if !commands::cmd_gradcheck(&config)? {
                return Ok(ExitCode::from(1));
            }
        }
        "ablate" => {
            let config = load_config(&flags)?;
            let sweep_raw = flags
                .single
                .get("sweep")
                .ok_or_else(|| Error::Config("missing required flag --sweep".to_string()))?;
            let sweep = Sweep::from_str(sweep_raw)
                .ok_or_else(|| Error::Config(format!("unknown sweep '{sweep_raw}'")))?;
            let values_raw = flags
                .single
                .get("values")
                .ok_or_else(|| Error::Config("missing required flag --values".to_string()))?;
            let values: Vec<f64> = values_raw
                .split(',')
                .map(|v| {
                    v.trim()
                        .parse::<f64>()
                        .map_err(|_| Error::Config(format!("bad sweep value '{v}'")))
                })
                .collect::<Result<_>>()?;
            let out = flags.required_path("out")?;
            commands::cmd_ablate(&config, sweep, &values, &out)?;
        }
        "help" | "--help" | "-h" => {
            print!("{USAGE}");
        }
        other => {
            return Err(Error::Config(format!("unknown command '{other}'")));
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn flag_or_config_dir(flags: &Flags, name: &str, fallback: Option<&Path>) -> Result<PathBuf> {
    if let Some(path) = flags.path(name) {
        return Ok(path);
    }
    fallback
        .map(Path::to_path_buf)
        .ok_or_else(|| Error::Config(format!("missing required flag --{name}")))
}
