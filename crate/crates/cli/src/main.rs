//! `splitkit`: inspect, verify and optimize splitting schemes, and run the
//! Burgers experiments.
//!
//! The last line on stdout is always a JSON summary. Exit code 0 means every
//! requested check passed, 1 a failed check, 2 an error.

mod commands;
mod run;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde_json::{json, Value};

use run::Run;

#[derive(Debug, Parser)]
#[command(name = "splitkit", version, about = "Multi-operator splitting schemes and adaptive integration")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Inspect built-in or file-based schemes.
    Schemes {
        #[command(subcommand)]
        action: SchemesCmd,
    },
    /// Measure the local order of a scheme or pair on a random matrix problem.
    Verify(VerifyArgs),
    /// Search for a low-LEM scheme or a Milne partner.
    Optimize(OptimizeArgs),
    /// Viscous Burgers experiments.
    Burgers {
        #[command(subcommand)]
        action: BurgersCmd,
    },
}

#[derive(Debug, Subcommand)]
enum SchemesCmd {
    /// List the registry.
    List,
    /// Print all coefficients at full precision.
    Show { name: String },
    /// Consistency, order residuals per degree, verified order and LEM.
    Check { name: String },
}

#[derive(Debug, Args)]
pub struct VerifyArgs {
    /// Registry name or scheme file.
    #[arg(long, conflicts_with = "pair", required_unless_present = "pair")]
    pub scheme: Option<String>,
    /// Pair file, registry pair, or `derived`.
    #[arg(long)]
    pub pair: Option<String>,
    /// Expected order, overriding the declared one.
    #[arg(long)]
    pub order: Option<usize>,
    /// Matrix problem as `dim,seed`.
    #[arg(long, default_value = "6,1", value_parser = parse_oracle)]
    pub oracle: (usize, u64),
    #[arg(long, default_value_t = 1.0 / 1024.0)]
    pub hmin: f64,
    #[arg(long, default_value_t = 1.0 / 16.0)]
    pub hmax: f64,
    /// Compare the algebraic and the empirical γ of a pair.
    #[arg(long, requires = "pair")]
    pub gamma: bool,
    /// Use the coefficients exactly as stored, without restoring trailing digits.
    #[arg(long)]
    pub raw: bool,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct OptimizeArgs {
    #[arg(long, default_value_t = 2)]
    pub ops: usize,
    #[arg(long)]
    pub stages: usize,
    #[arg(long)]
    pub nonneg: bool,
    /// Search a Milne partner of this scheme instead of a standalone scheme.
    #[arg(long)]
    pub milne_of: Option<String>,
    /// Number of multistarts.
    #[arg(long, default_value_t = 32)]
    pub budget: usize,
    /// Simplex iterations per start.
    #[arg(long, default_value_t = 600)]
    pub iters: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct BurgersArgs {
    #[arg(long, default_value_t = 1024)]
    pub n: usize,
    /// Domain length L of [−L/2, L/2).
    #[arg(long, default_value_t = 4.0)]
    pub domain: f64,
    /// `derived` or a pair file.
    #[arg(long, default_value = "derived")]
    pub pair: String,
    #[arg(long)]
    pub viscosity: Option<f64>,
    #[arg(long)]
    pub kappa: Option<f64>,
    #[arg(long)]
    pub out_dir: Option<PathBuf>,
}

#[derive(Debug, Subcommand)]
enum BurgersCmd {
    /// One-step order study from the bump datum.
    Converge {
        #[command(flatten)]
        common: BurgersArgs,
        #[arg(long, default_value_t = 0.0625)]
        h0: f64,
        #[arg(long, default_value_t = 9)]
        rows: usize,
    },
    /// Adaptive run from the hat datum.
    Adaptive {
        #[command(flatten)]
        common: BurgersArgs,
        #[arg(long, default_value_t = 1e-5)]
        tol: f64,
        #[arg(long, default_value_t = splitkit::burgers::SHOCK_T_END)]
        tend: f64,
        #[arg(long, default_value_t = 1.0)]
        half_width: f64,
        #[arg(long, default_value_t = 1e-6)]
        hmin: f64,
        #[arg(long, default_value_t = 0.1)]
        hmax: f64,
    },
}

fn parse_oracle(s: &str) -> Result<(usize, u64), String> {
    let (d, seed) = s
        .split_once(',')
        .ok_or_else(|| format!("expected `dim,seed`, got `{s}`"))?;
    let d = d.trim().parse().map_err(|e| format!("bad dimension: {e}"))?;
    let seed = seed.trim().parse().map_err(|e| format!("bad seed: {e}"))?;
    Ok((d, seed))
}

/// Result of a command that ran to completion.
pub struct Outcome {
    pub ok: bool,
    pub summary: Value,
}

fn command_name(c: &Command) -> &'static str {
    match c {
        Command::Schemes { action } => match action {
            SchemesCmd::List => "schemes list",
            SchemesCmd::Show { .. } => "schemes show",
            SchemesCmd::Check { .. } => "schemes check",
        },
        Command::Verify(_) => "verify",
        Command::Optimize(_) => "optimize",
        Command::Burgers { action } => match action {
            BurgersCmd::Converge { .. } => "burgers converge",
            BurgersCmd::Adaptive { .. } => "burgers adaptive",
        },
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let name = command_name(&cli.command);
    let mut run = Run::new(std::env::args().collect());
    let result = match cli.command {
        Command::Schemes { action } => match action {
            SchemesCmd::List => commands::schemes_list(),
            SchemesCmd::Show { name } => commands::schemes_show(&name),
            SchemesCmd::Check { name } => commands::schemes_check(&name),
        },
        Command::Verify(a) => commands::verify(&a, &mut run),
        Command::Optimize(a) => commands::optimize(&a, &mut run),
        Command::Burgers { action } => match action {
            BurgersCmd::Converge { common, h0, rows } => {
                commands::burgers_converge(&common, h0, rows, &mut run)
            }
            BurgersCmd::Adaptive {
                common,
                tol,
                tend,
                half_width,
                hmin,
                hmax,
            } => commands::burgers_adaptive(
                &common,
                &commands::AdaptiveSettings {
                    tol,
                    tend,
                    half_width,
                    hmin,
                    hmax,
                },
                &mut run,
            ),
        },
    };
    let (code, mut summary, error) = match result {
        Ok(o) => (if o.ok { 0 } else { 1 }, o.summary, None),
        Err(e) => {
            let msg = format!("{e:#}");
            eprintln!("error: {msg}");
            (2, json!({ "ok": false, "error": msg }), Some(msg))
        }
    };
    if let Err(e) = run.finish(code == 0, error) {
        eprintln!("error: manifest not written: {e:#}");
    }
    if let Value::Object(m) = &mut summary {
        m.insert("command".into(), json!(name));
        m.entry("ok").or_insert(json!(code == 0));
    }
    println!("{summary}");
    ExitCode::from(code)
}
