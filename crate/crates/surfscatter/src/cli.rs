//! Argument parsing and the top-level `run`.

use std::ffi::OsString;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};

use crate::commands::dispatch;
use crate::config::{ExperimentSpec, Overrides};
use crate::output::{commit, RunManifest};

pub const EXIT_OK: i32 = 0;
pub const EXIT_CRITERION: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;

#[derive(Debug, Clone, Args)]
pub struct Common {
    /// INI-style config file; flags override its values.
    #[arg(long, global = true)]
    pub config: Option<PathBuf>,
    /// Output directory.
    #[arg(long, global = true)]
    pub out: Option<PathBuf>,
    /// `a:b:step`, a single value or a comma list.
    #[arg(long = "nuI0", global = true, allow_hyphen_values = true)]
    pub nu_i0: Option<String>,
    /// Comma-separated list.
    #[arg(long, global = true, allow_hyphen_values = true)]
    pub epsilon: Option<String>,
    #[arg(long, global = true)]
    pub kmax: Option<usize>,
    #[arg(long, global = true)]
    pub modes: Option<usize>,
    #[arg(long, global = true)]
    pub tol: Option<f64>,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Melnikov coefficients, closed form against quadrature.
    Melnikov,
    /// Measured splitting of the invariant manifolds.
    Splitting,
    /// Splitting amplitude over νI₀ and the exponential-law fit.
    Sweep,
    /// Constants f_k of the inner equation.
    Inner,
    /// Operating point, strips, cones and a shadowed itinerary.
    Horseshoe,
    /// An orbit with growing excursions and returns.
    Oscillate {
        /// Number of excursions.
        #[arg(long)]
        k: Option<usize>,
        /// Height every excursion must come back below.
        #[arg(long)]
        zret: Option<f64>,
    },
    /// Runs all acceptance criteria.
    VerifyAll,
}

#[derive(Debug, Parser)]
#[command(name = "surfscatter", version, about = "Scattering of atoms off a corrugated Morse surface: splitting, inner constants and horseshoes")]
struct Full {
    #[command(flatten)]
    common: Common,
    #[command(subcommand)]
    command: Command,
}

impl Command {
    pub fn name(&self) -> &'static str {
        match self {
            Command::Melnikov => "melnikov",
            Command::Splitting => "splitting",
            Command::Sweep => "sweep",
            Command::Inner => "inner",
            Command::Horseshoe => "horseshoe",
            Command::Oscillate { .. } => "oscillate",
            Command::VerifyAll => "verify-all",
        }
    }
}

/// Parses `argv` (program name first) into a resolved spec.
pub fn parse<I, T>(argv: I) -> Result<ExperimentSpec, String>
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let full = Full::try_parse_from(argv).map_err(|e| e.render().to_string())?;
    let c = full.common;
    let (k, z_return) = match full.command {
        Command::Oscillate { k, zret } => (k, zret),
        _ => (None, None),
    };
    let flags = Overrides { nu_i0: c.nu_i0, epsilon: c.epsilon, kmax: c.kmax, modes: c.modes, tol: c.tol, k, z_return, out: c.out };
    ExperimentSpec::resolve(full.command.name(), c.config.as_deref(), &flags).map_err(|e| format!("error: {e}\n\n{}", usage()))
}

pub fn usage() -> String {
    use clap::CommandFactory;
    Full::command().render_usage().to_string()
}

/// Runs one subcommand; returns the process exit status.
pub fn run<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let argv: Vec<OsString> = argv.into_iter().map(Into::into).collect();
    // Help and version go to stdout with status 0.
    if let Err(e) = Full::try_parse_from(&argv) {
        if matches!(e.kind(), clap::error::ErrorKind::DisplayHelp | clap::error::ErrorKind::DisplayVersion) {
            print!("{e}");
            return EXIT_OK;
        }
    }
    let spec = match parse(&argv) {
        Ok(s) => s,
        Err(msg) => {
            eprintln!("{}", msg.trim_end());
            return EXIT_CONFIG;
        }
    };
    let start = Instant::now();
    let out = match dispatch(&spec) {
        Ok(o) => o,
        Err(e) => {
            eprintln!("{} failed: {e}", spec.command);
            return EXIT_CRITERION;
        }
    };
    for line in &out.log {
        println!("{line}");
    }
    let manifest = RunManifest::new(spec.echo(), &out.artifacts, start.elapsed().as_secs_f64());
    match commit(&spec.out, &out.artifacts, &manifest) {
        Ok(files) => {
            for f in files {
                println!("wrote {}", f.display());
            }
        }
        Err(e) => {
            eprintln!("cannot write {}: {e}", spec.out.display());
            return EXIT_CONFIG;
        }
    }
    if out.pass {
        EXIT_OK
    } else {
        EXIT_CRITERION
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_global_flags_after_subcommand() {
        let s = parse(["surfscatter", "melnikov", "--nuI0", "5", "--kmax", "2"]).unwrap();
        assert_eq!(s.command, "melnikov");
        assert_eq!(s.nu_i0, vec![5.0]);
        assert_eq!(s.kmax, 2);
    }

    #[test]
    fn oscillate_flags() {
        let s = parse(["surfscatter", "oscillate", "--k", "3", "--zret", "8.0"]).unwrap();
        assert_eq!((s.k, s.z_return), (3, 8.0));
    }

    #[test]
    fn bad_input_is_a_config_error() {
        assert!(parse(["surfscatter", "melnikov", "--bogus"]).is_err());
        assert!(parse(["surfscatter", "frobnicate"]).is_err());
        assert!(parse(["surfscatter", "sweep", "--nuI0", "8:4:1"]).is_err());
        assert_eq!(run(["surfscatter", "melnikov", "--tol", "abc"]), EXIT_CONFIG);
    }
}
