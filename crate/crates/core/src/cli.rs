//! Command-line front end. Exit codes: 0 success, 2 invalid input,
//! 3 numerical failure (diagnostic JSON on stderr).

use std::fs::File;
use std::io::{self, BufWriter, Write};
use std::path::PathBuf;

use clap::{Parser, Subcommand, ValueEnum};
use serde::de::DeserializeOwned;
use serde::Serialize;
use serde_json::{json, Value};

use crate::catalog::{black_scholes_constants, solve_correlated, SteinSteinParams};
use crate::config::*;
use crate::error::{Error, Result};
use crate::expansion::{expand, implied_vol_wing, short_time_expansion, tail_curve, tail_expansion, wing_curve};
use crate::mc::{simulate_stein_stein, simulate_terminal, tail_slope, write_samples_binary, write_samples_csv};
use crate::nonfocal::{csv_err, sweep_nonfocality, write_sweep_csv};
use crate::shooting::BvpProblem;

#[derive(Debug, Parser)]
#[command(name = "hamexpand", version, about = "Small-noise, tail and short-time density expansion constants")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
    /// JSON config file ("-" for stdin).
    #[arg(long, short, global = true)]
    pub config: Option<PathBuf>,
    /// Override a scalar config entry, e.g. --set model.sigma=2.
    #[arg(long = "set", value_name = "KEY=VALUE", global = true)]
    pub set: Vec<String>,
    /// Output file (stdout if omitted).
    #[arg(long, short, global = true)]
    pub output: Option<PathBuf>,
    #[arg(long, value_enum, global = true)]
    pub format: Option<Format>,
    /// Worker threads (falls back to HAMEXPAND_THREADS).
    #[arg(long, global = true)]
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Subcommand)]
pub enum Command {
    /// Small-noise constants c1, c2 for a model and target.
    Expand,
    /// Tail constants for a model with declared theta-scaling.
    Tail,
    /// Short-time distance and exponent.
    Shorttime,
    /// Closed-form Stein-Stein constants.
    Steinstein,
    /// Closed-form Black-Scholes constants.
    Blackscholes,
    /// Monte Carlo samples and tail slope.
    Mc,
    /// Implied volatility wing (beta1, beta2).
    Smile,
    /// Non-focality sweep over a Stein-Stein grid.
    Sweep,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Format {
    Json,
    Csv,
}

/// Writes floats with 17 significant digits.
struct RoundTrip;

impl serde_json::ser::Formatter for RoundTrip {
    fn write_f64<W: ?Sized + Write>(&mut self, w: &mut W, value: f64) -> io::Result<()> {
        write!(w, "{value:.16e}")
    }
}

pub fn to_json<T: Serialize>(value: &T) -> Result<String> {
    let mut buf = Vec::new();
    let mut ser = serde_json::Serializer::with_formatter(&mut buf, RoundTrip);
    value.serialize(&mut ser)?;
    Ok(String::from_utf8(buf).expect("json is utf-8"))
}

enum Failure {
    Invalid(String, String),
    Numerical(String, String),
}

fn kind(e: &Error) -> &'static str {
    match e {
        Error::Dimension(_) => "dimension",
        Error::InvalidCorrelation(_) => "invalid_correlation",
        Error::InvalidModel(_) => "invalid_model",
        Error::Integration { .. } => "integration",
        Error::NoConvergence { .. } => "no_convergence",
        Error::SingularJacobian { .. } => "singular_jacobian",
        Error::Domain(_) => "domain",
        Error::GradientMismatch { .. } => "gradient_mismatch",
        Error::ScalingViolation { .. } => "scaling_violation",
        Error::MomentExplosion(_) => "moment_explosion",
        Error::Unsupported(_) => "unsupported",
        Error::InsufficientData(_) => "insufficient_data",
        Error::Config(_) => "config",
        Error::Io(_) => "io",
        Error::Json(_) => "json",
    }
}

impl From<Error> for Failure {
    fn from(e: Error) -> Self {
        if e.is_validation() {
            Failure::Invalid(kind(&e).into(), e.to_string())
        } else {
            Failure::Numerical(kind(&e).into(), e.to_string())
        }
    }
}

fn invalid(e: Error) -> Failure {
    Failure::Invalid(kind(&e).into(), e.to_string())
}

fn load<T: DeserializeOwned>(cli: &Cli) -> std::result::Result<T, Failure> {
    let path = cli
        .config
        .as_ref()
        .ok_or_else(|| invalid(Error::Config("--config is required".into())))?;
    let text = if path.as_os_str() == "-" {
        io::read_to_string(io::stdin()).map_err(|e| invalid(e.into()))?
    } else {
        std::fs::read_to_string(path).map_err(|e| invalid(Error::Config(format!("{}: {e}", path.display()))))?
    };
    let mut value: Value = serde_json::from_str(&text).map_err(|e| invalid(e.into()))?;
    apply_overrides(&mut value, &cli.set).map_err(invalid)?;
    serde_json::from_value(value).map_err(|e| invalid(e.into()))
}

fn sink(cli: &Cli) -> Result<Box<dyn Write>> {
    Ok(match &cli.output {
        Some(p) => Box::new(BufWriter::new(File::create(p)?)),
        None => Box::new(io::stdout().lock()),
    })
}

fn emit_json<T: Serialize>(cli: &Cli, value: &T) -> Result<()> {
    let mut out = sink(cli)?;
    writeln!(out, "{}", to_json(value)?)?;
    out.flush()?;
    Ok(())
}

fn emit_curve(cli: &Cli, header: [&str; 2], rows: &[(f64, f64)]) -> Result<()> {
    let mut w = csv::Writer::from_writer(sink(cli)?);
    w.write_record(header).map_err(csv_err)?;
    for (a, b) in rows {
        w.write_record([format!("{a:.16e}"), format!("{b:.16e}")]).map_err(csv_err)?;
    }
    w.flush()?;
    Ok(())
}

fn no_csv(command: Command) -> Failure {
    invalid(Error::Config(format!("{command:?} has no CSV output; use --format json").to_lowercase()))
}

const DEFAULT_TAIL_CURVE: CurveRange = CurveRange { from: 0.5, to: 10.0, points: 96 };
const DEFAULT_WING_CURVE: CurveRange = CurveRange { from: 0.5, to: 20.0, points: 96 };

fn execute(cli: &Cli) -> std::result::Result<(), Failure> {
    let format = cli.format.unwrap_or(if cli.command == Command::Sweep { Format::Csv } else { Format::Json });
    match cli.command {
        Command::Steinstein => {
            let p: SteinSteinParams = load(cli)?;
            p.validate().map_err(invalid)?;
            if format == Format::Csv {
                return Err(no_csv(cli.command));
            }
            let s = solve_correlated(&p)?;
            let mut v = serde_json::to_value(&s).map_err(Error::from)?;
            v["theta"] = json!(2);
            emit_json(cli, &v)?;
        }
        Command::Blackscholes => {
            let c: BlackScholesConfig = load(cli)?;
            let k = black_scholes_constants(c.sigma, c.t, c.y0).map_err(invalid)?;
            if format == Format::Csv {
                return Err(no_csv(cli.command));
            }
            emit_json(cli, &k)?;
        }
        Command::Expand => {
            let c: ExpandConfig = load(cli)?;
            if format == Format::Csv {
                return Err(no_csv(cli.command));
            }
            let problem = BvpProblem::new(c.model.spec().map_err(invalid)?, c.target.clone(), c.model.maturity())
                .map_err(invalid)?;
            let r = expand(&problem, &c.options)?;
            emit_json(cli, &r)?;
        }
        Command::Tail => {
            let c: TailConfig = load(cli)?;
            let spec = c.model.spec().map_err(invalid)?;
            let problem = BvpProblem::new(spec, vec![1.0], c.model.maturity()).map_err(invalid)?;
            let r = tail_expansion(&problem, c.theta, &c.options)?;
            let ys = c.curve.unwrap_or(DEFAULT_TAIL_CURVE).values().map_err(invalid)?;
            let curve = tail_curve(&r, &ys)?;
            match format {
                Format::Csv => emit_curve(cli, ["y", "log_f_leading"], &curve)?,
                Format::Json => {
                    let mut v = serde_json::to_value(&r).map_err(Error::from)?;
                    if c.curve.is_some() {
                        v["curve"] = json!(curve.iter().map(|(y, f)| json!({"y": y, "log_f_leading": f})).collect::<Vec<_>>());
                    }
                    emit_json(cli, &v)?;
                }
            }
        }
        Command::Shorttime => {
            let c: ShortTimeConfig = load(cli)?;
            if format == Format::Csv {
                return Err(no_csv(cli.command));
            }
            let r = short_time_expansion(&c.model.spec().map_err(invalid)?, &c.target, &c.options)?;
            emit_json(cli, &r)?;
        }
        Command::Smile => {
            let c: SmileConfig = load(cli)?;
            let (b1, b2, source) = match (c.b1, c.b2, &c.model) {
                (Some(b1), b2, None) => (b1, b2.unwrap_or(0.0), json!("direct")),
                (None, None, Some(model)) => {
                    let problem =
                        BvpProblem::new(model.spec().map_err(invalid)?, vec![1.0], model.maturity()).map_err(invalid)?;
                    let r = tail_expansion(&problem, 2, &c.options)?;
                    (r.c1 + 1.0, r.c2, json!({"c1": r.c1, "c2": r.c2}))
                }
                _ => {
                    return Err(invalid(Error::Config("smile needs either B1 (and optionally B2) or a model".into())));
                }
            };
            let (beta1, beta2) = match implied_vol_wing(b1, b2) {
                Ok(b) => b,
                Err(e) if c.model.is_none() => return Err(invalid(e)),
                Err(e) => return Err(e.into()),
            };
            let ks = c.curve.unwrap_or(DEFAULT_WING_CURVE).values().map_err(invalid)?;
            let curve = wing_curve(beta1, beta2, &ks);
            match format {
                Format::Csv => emit_curve(cli, ["k", "sigma2T_leading"], &curve)?,
                Format::Json => {
                    let mut v = json!({"beta1": beta1, "beta2": beta2, "B1": b1, "B2": b2, "source": source});
                    if c.curve.is_some() {
                        v["curve"] = json!(curve.iter().map(|(k, s)| json!({"k": k, "sigma2T_leading": s})).collect::<Vec<_>>());
                    }
                    emit_json(cli, &v)?;
                }
            }
        }
        Command::Mc => {
            let c: McRunConfig = load(cli)?;
            c.mc.validate().map_err(invalid)?;
            let samples = match &c.model {
                ModelConfig::SteinStein(p) => simulate_stein_stein(p, &c.mc).map_err(invalid)?,
                other => simulate_terminal(&other.spec().map_err(invalid)?, other.maturity(), &c.mc)?,
            };
            if let Some(s) = &c.samples {
                let f = BufWriter::new(File::create(&s.path).map_err(Error::from)?);
                match s.format {
                    SampleFormat::Binary => write_samples_binary(&samples, f)?,
                    SampleFormat::Csv => write_samples_csv(&samples, f)?,
                }
            }
            match format {
                Format::Csv => write_samples_csv(&samples, sink(cli)?)?,
                Format::Json => {
                    let report = tail_slope(&samples, &c.tail)?;
                    emit_json(cli, &json!({"n_paths": c.mc.n_paths, "n_steps": c.mc.n_steps, "seed": c.mc.seed, "tail_slope": report}))?;
                }
            }
        }
        Command::Sweep => {
            let c: SweepConfig = load(cli)?;
            let cells = c.grid.cells();
            for p in &cells {
                p.validate().map_err(invalid)?;
            }
            let rows = sweep_nonfocality(&cells, &c.options);
            match format {
                Format::Csv => write_sweep_csv(&rows, sink(cli)?)?,
                Format::Json => emit_json(cli, &rows)?,
            }
        }
    }
    Ok(())
}

fn configure_threads(cli: &Cli) -> std::result::Result<(), Failure> {
    let n = match cli.threads {
        Some(n) => Some(n),
        None => match std::env::var("HAMEXPAND_THREADS") {
            Ok(s) if !s.trim().is_empty() => Some(
                s.trim()
                    .parse::<usize>()
                    .map_err(|_| invalid(Error::Config(format!("HAMEXPAND_THREADS={s:?} is not a count"))))?,
            ),
            _ => None,
        },
    };
    if let Some(n) = n {
        if n == 0 {
            return Err(invalid(Error::Config("thread count must be at least 1".into())));
        }
        // a second call in the same process keeps the first pool
        let _ = rayon::ThreadPoolBuilder::new().num_threads(n).build_global();
    }
    Ok(())
}

/// Runs one command and returns the process exit code.
pub fn run(cli: &Cli) -> i32 {
    let result = configure_threads(cli).and_then(|_| execute(cli));
    match result {
        Ok(()) => 0,
        Err(f) => {
            let (code, kind, message) = match f {
                Failure::Invalid(k, m) => (2, k, m),
                Failure::Numerical(k, m) => (3, k, m),
            };
            let diag = json!({"error": kind, "message": message, "exit_code": code});
            eprintln!("{diag}");
            code
        }
    }
}

/// Parses `args` (program name first) and runs; clap usage errors exit 2.
pub fn main_with_args<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    match Cli::try_parse_from(args) {
        Ok(cli) => run(&cli),
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            code
        }
    }
}
