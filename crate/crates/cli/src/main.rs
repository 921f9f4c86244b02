use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use sandwich_core::scenario::{run, Command, PayoffRef, RunOptions, Scenario, Suite};

/// Validation, maximal extension and time-consistent pricing of convex
/// operators described by a scenario file.
#[derive(Parser, Debug)]
#[command(name = "sandwich", version)]
struct Cli {
    #[command(subcommand)]
    command: Cmd,
}

#[derive(Args, Debug)]
struct Common {
    /// Scenario file (JSON).
    #[arg(long)]
    input: PathBuf,
    /// JSON report path; defaults to `<input>.report.json`.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Tolerance for price identities and expected values.
    #[arg(long, default_value_t = 1e-6)]
    tol: f64,
}

#[derive(Subcommand, Debug)]
enum Cmd {
    /// Operator axioms, sandwich and mM1 conditions, time-consistency.
    Validate(Common),
    /// Build the maximal one-step extensions and summarise them.
    Extend(Common),
    /// Price a payoff between two grid levels.
    Price {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        from: usize,
        #[arg(long)]
        to: usize,
        /// Payoff name from the scenario, or inline values such as `1,0,0,0`.
        #[arg(long)]
        payoff: String,
    },
    /// Run one invariant suite.
    Check {
        #[command(flatten)]
        common: Common,
        /// representation | sandwich | cocycle | refine
        #[arg(long, value_parser = parse_suite)]
        suite: Suite,
    },
    /// Everything above in one document.
    Report(Common),
}

fn parse_suite(s: &str) -> Result<Suite, String> {
    s.parse()
}

fn parse_payoff(s: &str) -> PayoffRef {
    let t = s.trim();
    if let Ok(v) = serde_json_array(t) {
        return PayoffRef::Inline(v);
    }
    let parts: Result<Vec<f64>, _> = t.split(',').map(|p| p.trim().parse::<f64>()).collect();
    match parts {
        Ok(v) if !t.is_empty() => PayoffRef::Inline(v),
        _ => PayoffRef::Named(t.to_string()),
    }
}

fn serde_json_array(s: &str) -> Result<Vec<f64>, ()> {
    let inner = s.strip_prefix('[').and_then(|r| r.strip_suffix(']')).ok_or(())?;
    inner.split(',').map(|p| p.trim().parse::<f64>().map_err(|_| ())).collect()
}

fn seed() -> Result<u64, String> {
    match std::env::var("SANDWICH_SEED") {
        Ok(v) => v.trim().parse().map_err(|_| format!("SANDWICH_SEED must be a non-negative integer, got {v:?}")),
        Err(_) => Ok(0),
    }
}

fn default_output(input: &Path) -> PathBuf {
    let mut name = input.as_os_str().to_owned();
    name.push(".report.json");
    PathBuf::from(name)
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let (common, command) = match cli.command {
        Cmd::Validate(c) => (c, Command::Validate),
        Cmd::Extend(c) => (c, Command::Extend),
        Cmd::Price { common, from, to, payoff } => (
            common,
            Command::Price {
                from,
                to,
                payoff: parse_payoff(&payoff),
            },
        ),
        Cmd::Check { common, suite } => (common, Command::Check(suite)),
        Cmd::Report(c) => (c, Command::Report),
    };
    match execute(&common, &command) {
        Ok(true) => ExitCode::SUCCESS,
        Ok(false) => ExitCode::from(1),
        Err(msg) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
    }
}

fn execute(common: &Common, command: &Command) -> Result<bool, String> {
    let text = std::fs::read_to_string(&common.input).map_err(|e| format!("cannot read {}: {e}", common.input.display()))?;
    if !(common.tol.is_finite() && common.tol > 0.0) {
        return Err(format!("--tol must be positive, got {}", common.tol));
    }
    let opts = RunOptions {
        seed: seed()?,
        tol: common.tol,
    };
    let scenario = Scenario::from_json(&text).map_err(|e| e.to_string())?;
    let out = run(&scenario, command, &opts).map_err(|e| e.to_string())?;
    let path = common.output.clone().unwrap_or_else(|| default_output(&common.input));
    std::fs::write(&path, &out.json).map_err(|e| format!("cannot write {}: {e}", path.display()))?;
    print!("{}", out.text);
    println!("report written to {}", path.display());
    Ok(out.passed)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn payoff_forms() {
        assert_eq!(parse_payoff("1,0,0,0"), PayoffRef::Inline(vec![1.0, 0.0, 0.0, 0.0]));
        assert_eq!(parse_payoff("[1, 0.5]"), PayoffRef::Inline(vec![1.0, 0.5]));
        assert_eq!(parse_payoff("uu"), PayoffRef::Named("uu".into()));
        assert_eq!(parse_payoff("2"), PayoffRef::Inline(vec![2.0]));
    }

    #[test]
    fn cli_shape() {
        use clap::CommandFactory;
        Cli::command().debug_assert();
    }
}
