use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use varode::classifier::ClassifyOptions;
use varode::jet::{GridSpec, Lagrangian, OrdODE};
use varode::ode::Tolerances;

use crate::error::CliError;

#[derive(Debug, Parser)]
#[command(name = "varode", version, about = "Higher-order Lagrangians, Euler-Lagrange equations and their invariants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Subcmd {
    El,
    Classify,
    Invariants,
    Geometry,
    Syzygy,
    Selfdual,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Euler-Lagrange equation of a Lagrangian, solved for the top derivative.
    El(Flags),
    /// Decide equivalence to the flat model.
    Classify(Flags),
    /// Wilczynski invariants of the linearization along solutions.
    Invariants(Flags),
    /// Growth vector, class, 2-form and Jacobi curve of a Lagrangian.
    Geometry(Flags),
    /// Closed forms and syzygy among the invariants (n = 3 or 4).
    Syzygy(Flags),
    /// Compatible skew form on the linearization curves.
    Selfdual(Flags),
}

impl Command {
    pub fn split(self) -> (Subcmd, Flags) {
        match self {
            Command::El(f) => (Subcmd::El, f),
            Command::Classify(f) => (Subcmd::Classify, f),
            Command::Invariants(f) => (Subcmd::Invariants, f),
            Command::Geometry(f) => (Subcmd::Geometry, f),
            Command::Syzygy(f) => (Subcmd::Syzygy, f),
            Command::Selfdual(f) => (Subcmd::Selfdual, f),
        }
    }
}

#[derive(Debug, Clone, Args)]
pub struct Flags {
    /// Density f(x, y0, ..., yn).
    #[arg(long, conflicts_with = "ode", required_unless_present = "ode")]
    pub lagrangian: Option<String>,
    /// Right-hand side F of y_N = F, with N given by --order.
    #[arg(long)]
    pub ode: Option<String>,
    /// Order n of the Lagrangian (inferred when omitted).
    #[arg(long)]
    pub n: Option<u32>,
    /// Order N of the equation; defaults to 2n.
    #[arg(long)]
    pub order: Option<u32>,
    #[arg(long, env = "VARODE_SEED", default_value_t = 0)]
    pub seed: u64,
    /// Numeric vanishing tolerance.
    #[arg(long, default_value_t = 1e-6)]
    pub tol: f64,
    /// Sample grid as start:end:count.
    #[arg(long, default_value = "0:1:64")]
    pub grid: GridSpec,
    #[arg(long, default_value_t = 3)]
    pub solutions: usize,
    /// Initial jet y0,...,y_(N-1) at the grid start, replacing random solutions.
    #[arg(long, value_delimiter = ',', allow_hyphen_values = true)]
    pub init: Option<Vec<f64>>,
    /// Also write the JSON report here.
    #[arg(long)]
    pub json: Option<PathBuf>,
    /// Write CSV series here (one file per solution when there are several).
    #[arg(long)]
    pub csv: Option<PathBuf>,
}

#[derive(Debug, Clone)]
pub enum Input {
    Lagrangian(Lagrangian),
    Ode(OrdODE),
}

/// Validated settings for one run.
#[derive(Debug, Clone)]
pub struct RunConfig {
    pub subcommand: Subcmd,
    pub text: String,
    pub input: Input,
    pub seed: u64,
    pub tol: f64,
    pub grid: GridSpec,
    pub solutions: usize,
    pub init: Option<Vec<f64>>,
    pub json: Option<PathBuf>,
    pub csv: Option<PathBuf>,
}

impl RunConfig {
    pub fn from_command(cmd: Command) -> Result<RunConfig, CliError> {
        let (subcommand, f) = cmd.split();
        if !(f.tol > 0.0) {
            return Err(CliError::Input("tolerance must be positive".into()));
        }
        if f.grid.count < 16 {
            return Err(CliError::Input(format!("grid needs at least 16 samples, got {}", f.grid.count)));
        }
        if f.solutions == 0 {
            return Err(CliError::Input("need at least one solution".into()));
        }
        let (text, input) = match (&f.lagrangian, &f.ode) {
            (Some(t), None) => (t.clone(), Input::Lagrangian(Lagrangian::parse(t, f.n)?)),
            (None, Some(t)) => {
                let order = f
                    .order
                    .or(f.n.map(|n| 2 * n))
                    .ok_or_else(|| CliError::Input("--ode needs --order or --n".into()))?;
                (t.clone(), Input::Ode(OrdODE::parse(t, order)?))
            }
            _ => return Err(CliError::Input("give exactly one of --lagrangian and --ode".into())),
        };
        Ok(RunConfig {
            subcommand,
            text,
            input,
            seed: f.seed,
            tol: f.tol,
            grid: f.grid,
            solutions: f.solutions,
            init: f.init,
            json: f.json,
            csv: f.csv,
        })
    }

    pub fn lagrangian(&self) -> Result<&Lagrangian, CliError> {
        match &self.input {
            Input::Lagrangian(l) => Ok(l),
            Input::Ode(_) => Err(CliError::Input("this command needs --lagrangian".into())),
        }
    }

    pub fn tolerances(&self) -> Tolerances {
        Tolerances::default()
    }

    pub fn classify_options(&self) -> ClassifyOptions {
        ClassifyOptions {
            seed: self.seed,
            solutions: self.solutions,
            grid: self.grid,
            tol: self.tol,
            tolerances: self.tolerances(),
            ..ClassifyOptions::default()
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn config(args: &[&str]) -> Result<RunConfig, CliError> {
        let cli = Cli::try_parse_from(std::iter::once("varode").chain(args.iter().copied()))
            .map_err(|e| CliError::Input(e.to_string()))?;
        RunConfig::from_command(cli.command)
    }

    #[test]
    fn parses_flags() {
        let c = config(&["invariants", "--ode", "y0", "--order", "6", "--grid", "0:2:20", "--seed", "7"]).unwrap();
        assert_eq!(c.subcommand, Subcmd::Invariants);
        assert_eq!(c.grid.count, 20);
        assert_eq!(c.seed, 7);
        assert!(matches!(c.input, Input::Ode(ref e) if e.order() == 6));
        let c = config(&["el", "--lagrangian", "y3^2", "--init", "-1,0.5"]).unwrap();
        assert_eq!(c.init, Some(vec![-1.0, 0.5]));
    }

    #[test]
    fn rejects_bad_settings() {
        assert_eq!(config(&["el", "--lagrangian", "y3^2", "--tol", "0"]).unwrap_err().exit_code(), 2);
        assert_eq!(config(&["el", "--lagrangian", "y3^2", "--grid", "0:1:8"]).unwrap_err().exit_code(), 2);
        assert_eq!(config(&["el", "--lagrangian", "y3^2", "--solutions", "0"]).unwrap_err().exit_code(), 2);
        assert_eq!(config(&["classify", "--ode", "y0"]).unwrap_err().exit_code(), 2);
        assert_eq!(config(&["el", "--lagrangian", "y3 +* 2"]).unwrap_err().exit_code(), 2);
    }
}
