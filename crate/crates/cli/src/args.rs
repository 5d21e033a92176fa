//! Command-line definitions and config-file merging.
//!
//! A config file holds `key = value` lines (`#` starts a comment). Each line
//! becomes `--key value` placed right after the subcommand, so flags given on
//! the command line override it. A `command` key selects the subcommand when
//! none is given.

use std::path::PathBuf;

use clap::{ArgAction, Args, CommandFactory, Parser, Subcommand, ValueEnum};

use crate::report::Format;

pub const COMMANDS: [&str; 4] = ["capacity", "verify", "simulate", "rate"];

#[derive(Debug, Parser)]
#[command(
    name = "cohdec",
    version,
    about = "Gaussian channel capacity, coherent-decoding checks, heterodyne simulation and spectral rates"
)]
pub struct Cli {
    /// Read `key = value` defaults from this file.
    #[arg(long, global = true, value_name = "FILE")]
    pub config: Option<PathBuf>,

    /// Report format.
    #[arg(long, global = true, value_enum, default_value_t = Format::Human)]
    pub format: Format,

    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Analytic mutual information of the channel with coherent decoding.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Capacity(CapacityArgs),
    /// Numerical checks that coherent decoding is stationary and complete.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Verify(VerifyArgs),
    /// Simulate heterodyne outcomes and estimate the mutual information.
    #[command(args_override_self = true, allow_negative_numbers = true)]
    Simulate(SimulateArgs),
    /// Integrate the single-mode rate over a spectral profile.
    #[command(args_override_self = true)]
    Rate(RateArgs),
}

#[derive(Debug, Args, Clone, Default)]
pub struct ModelArgs {
    /// Signal covariance: a scalar, or comma-separated diagonal entries.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, conflicts_with = "s_file")]
    pub s: Option<Vec<f64>>,
    /// Noise covariance: a scalar, or comma-separated diagonal entries.
    #[arg(long, value_delimiter = ',', action = ArgAction::Set, conflicts_with = "n_file")]
    pub n: Option<Vec<f64>>,
    /// Signal covariance matrix file.
    #[arg(long, value_name = "FILE")]
    pub s_file: Option<PathBuf>,
    /// Noise covariance matrix file.
    #[arg(long, value_name = "FILE")]
    pub n_file: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct CapacityArgs {
    #[command(flatten)]
    pub model: ModelArgs,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Perturbation {
    Squeeze(f64),
    Offset(f64),
    Rescale(f64),
}

impl std::fmt::Display for Perturbation {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Perturbation::Squeeze(x) => write!(f, "squeeze:{x}"),
            Perturbation::Offset(x) => write!(f, "offset:{x}"),
            Perturbation::Rescale(x) => write!(f, "rescale:{x}"),
        }
    }
}

pub fn parse_perturbation(s: &str) -> Result<Perturbation, String> {
    let (kind, value) = s.split_once(':').ok_or("expected KIND:VALUE, e.g. squeeze:1.5")?;
    let x: f64 = value.parse().map_err(|_| format!("bad number `{value}`"))?;
    if !x.is_finite() {
        return Err(format!("bad number `{value}`"));
    }
    match kind {
        "squeeze" if x > 0.0 => Ok(Perturbation::Squeeze(x)),
        "squeeze" => Err("squeeze ratio must be positive".into()),
        "offset" => Ok(Perturbation::Offset(x)),
        "rescale" => Ok(Perturbation::Rescale(x)),
        _ => Err(format!("unknown perturbation `{kind}` (squeeze, offset, rescale)")),
    }
}

fn positive(s: &str) -> Result<f64, String> {
    match s.parse::<f64>() {
        Ok(x) if x > 0.0 && x.is_finite() => Ok(x),
        _ => Err(format!("`{s}` is not a positive number")),
    }
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Model; defaults to s = 1, n = 0.5.
    #[command(flatten)]
    pub model: ModelArgs,
    /// Per-mode Fock cutoff of the stationarity problem (default: from s + n).
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub cutoff: Option<u64>,
    /// Radius of the completeness-check grid.
    #[arg(long, default_value_t = 6.0, value_parser = positive)]
    pub povm_radius: f64,
    /// Spacing of the completeness-check grid.
    #[arg(long, default_value_t = 0.2, value_parser = positive)]
    pub povm_spacing: f64,
    /// Fock cutoff of the completeness check.
    #[arg(long, default_value_t = 30, value_parser = clap::value_parser!(u64).range(1..))]
    pub povm_cutoff: u64,
    /// Spacing of the identity-check grids (default: 0.4·min(1, √s_min)).
    #[arg(long, value_parser = positive)]
    pub identity_spacing: Option<f64>,
    /// Check a perturbed decoding family instead of only the coherent one:
    /// squeeze:RATIO, offset:DELTA or rescale:FACTOR.
    #[arg(long, value_parser = parse_perturbation)]
    pub perturb: Option<Perturbation>,
}

#[derive(Debug, Args)]
pub struct SimulateArgs {
    #[command(flatten)]
    pub model: ModelArgs,
    /// Number of (ϑ, β) samples.
    #[arg(long, value_parser = clap::value_parser!(u64).range(1..))]
    pub count: u64,
    #[arg(long)]
    pub seed: u64,
    /// Write the samples to this CSV file.
    #[arg(long, value_name = "FILE")]
    pub output: Option<PathBuf>,
    /// Bootstrap resamples for the confidence interval.
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u64).range(1..))]
    pub bootstrap: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Default)]
pub enum UnitsArg {
    /// h = 1; ν and θ share units.
    #[default]
    Dimensionless,
    /// ν in Hz, θ in joules.
    Physical,
}

#[derive(Debug, Args)]
pub struct RateArgs {
    /// CSV with header `nu,s_nu`.
    #[arg(long, value_name = "FILE")]
    pub profile: PathBuf,
    /// Noise temperature θ.
    #[arg(long, value_parser = positive)]
    pub theta: f64,
    #[arg(long, value_enum, default_value_t = UnitsArg::Dimensionless)]
    pub units: UnitsArg,
}

#[derive(Debug, PartialEq)]
pub enum ConfigError {
    Io(String),
    Parse { line: usize, message: String },
    Usage(String),
}

/// One `key = value` pair with its line number.
#[derive(Debug, Clone, PartialEq)]
pub struct ConfigEntry {
    pub line: usize,
    pub key: String,
    pub value: String,
}

pub fn parse_config(text: &str) -> Result<Vec<ConfigEntry>, ConfigError> {
    let mut entries = Vec::new();
    for (k, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let Some((key, value)) = line.split_once('=') else {
            return Err(ConfigError::Parse {
                line: k + 1,
                message: format!("expected key = value, got `{line}`"),
            });
        };
        let key = key.trim().replace('_', "-");
        if key.is_empty() || key.contains(char::is_whitespace) {
            return Err(ConfigError::Parse {
                line: k + 1,
                message: format!("bad key `{}`", key.trim()),
            });
        }
        entries.push(ConfigEntry {
            line: k + 1,
            key,
            value: value.trim().to_string(),
        });
    }
    Ok(entries)
}

/// Index of the subcommand in `argv`, skipping values of global options.
fn subcommand_position(argv: &[String]) -> Option<usize> {
    let mut k = 1;
    while k < argv.len() {
        let a = &argv[k];
        if COMMANDS.contains(&a.as_str()) {
            return Some(k);
        }
        if a == "--config" || a == "--format" {
            k += 1;
        }
        k += 1;
    }
    None
}

fn config_path(argv: &[String]) -> Option<String> {
    let mut it = argv.iter().skip(1);
    while let Some(a) = it.next() {
        if a == "--config" {
            return it.next().cloned();
        }
        if let Some(p) = a.strip_prefix("--config=") {
            return Some(p.to_string());
        }
    }
    None
}

/// Long names accepted by `command`, global options included.
fn known_keys(command: &str) -> Vec<String> {
    let cli = Cli::command();
    let sub = cli.find_subcommand(command).expect("known subcommand");
    sub.get_arguments()
        .chain(cli.get_arguments())
        .filter_map(|a| a.get_long().map(str::to_string))
        .filter(|k| k != "config" && k != "help" && k != "version")
        .collect()
}

/// Expands a `--config` file into explicit arguments.
pub fn expand_config(argv: Vec<String>) -> Result<Vec<String>, ConfigError> {
    let Some(path) = config_path(&argv) else {
        return Ok(argv);
    };
    let text = std::fs::read_to_string(&path).map_err(|e| ConfigError::Io(format!("{path}: {e}")))?;
    let mut entries = parse_config(&text)?;

    let mut argv = argv;
    let pos = match subcommand_position(&argv) {
        Some(p) => p,
        None => {
            let Some(k) = entries.iter().position(|e| e.key == "command") else {
                return Ok(argv);
            };
            let cmd = entries.remove(k);
            if !COMMANDS.contains(&cmd.value.as_str()) {
                return Err(ConfigError::Usage(format!(
                    "{path}:{}: unknown command `{}`",
                    cmd.line, cmd.value
                )));
            }
            argv.insert(1, cmd.value);
            1
        }
    };
    let command = argv[pos].clone();
    let known = known_keys(&command);
    let mut inserted = Vec::with_capacity(2 * entries.len());
    for e in entries {
        if e.key == "command" {
            if e.value != command {
                return Err(ConfigError::Usage(format!(
                    "{path}:{}: config is for `{}`, running `{command}`",
                    e.line, e.value
                )));
            }
            continue;
        }
        if !known.contains(&e.key) {
            return Err(ConfigError::Usage(format!(
                "{path}:{}: unknown key `{}` for `{command}`",
                e.line, e.key
            )));
        }
        inserted.push(format!("--{}", e.key));
        inserted.push(e.value);
    }
    argv.splice(pos + 1..pos + 1, inserted);
    Ok(argv)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn argv(s: &str) -> Vec<String> {
        s.split_whitespace().map(str::to_string).collect()
    }

    #[test]
    fn cli_definition_is_consistent() {
        Cli::command().debug_assert();
    }

    #[test]
    fn config_lines() {
        let e = parse_config("# model\ns = 3\npovm_spacing=0.4 # finer\n\n").unwrap();
        assert_eq!(e.len(), 2);
        assert_eq!(
            e[1],
            ConfigEntry {
                line: 3,
                key: "povm-spacing".into(),
                value: "0.4".into()
            }
        );
        assert_eq!(
            parse_config("s 3").unwrap_err(),
            ConfigError::Parse {
                line: 1,
                message: "expected key = value, got `s 3`".into()
            }
        );
    }

    #[test]
    fn config_is_overridden_by_flags() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "command = capacity\ns = 3\nn = 1\n").unwrap();
        let p = path.to_str().unwrap();
        let args = expand_config(argv(&format!("cohdec --config {p} --n 0"))).unwrap();
        assert_eq!(args[1..6], argv("capacity --s 3 --n 1")[..]);
        let cli = Cli::try_parse_from(&args).unwrap();
        let Command::Capacity(c) = cli.command else {
            panic!("wrong command")
        };
        assert_eq!(c.model.s, Some(vec![3.0]));
        assert_eq!(c.model.n, Some(vec![0.0]));
    }

    #[test]
    fn unknown_config_key_is_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("run.cfg");
        std::fs::write(&path, "s = 1\nseed = 4\n").unwrap();
        let err = expand_config(argv(&format!("cohdec capacity --config {}", path.display()))).unwrap_err();
        assert!(matches!(err, ConfigError::Usage(m) if m.contains(":2: unknown key `seed`")));
    }

    #[test]
    fn perturbations() {
        assert_eq!(parse_perturbation("squeeze:1.5"), Ok(Perturbation::Squeeze(1.5)));
        assert_eq!(parse_perturbation("offset:-0.3"), Ok(Perturbation::Offset(-0.3)));
        assert!(parse_perturbation("squeeze:0").is_err());
        assert!(parse_perturbation("twist:1").is_err());
        assert!(parse_perturbation("rescale").is_err());
    }
}
