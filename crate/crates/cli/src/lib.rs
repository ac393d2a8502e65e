//! Command-line front end: configuration, the `check`, `map` and `metrics`
//! commands, and the exit-code contract.

#![allow(clippy::neg_cmp_op_on_partial_ord)]

use std::ffi::OsString;
use std::io::Write;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand};
use thiserror::Error;

pub mod check;
pub mod config;
mod grid_out;

pub use check::{cmd_check, CheckOutcome, CheckReport, Status};
pub use config::{Format, Height, RunConfig};
pub use grid_out::{cmd_map, cmd_metrics, MAP_COLUMNS, METRIC_COLUMNS};

pub const EXIT_OK: i32 = 0;
pub const EXIT_USAGE: i32 = 1;
pub const EXIT_HYPOTHESIS: i32 = 2;
pub const EXIT_VERIFICATION: i32 = 3;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Verification(String),
    #[error("{0}")]
    Io(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) | CliError::Io(_) => EXIT_USAGE,
            CliError::Verification(_) => EXIT_VERIFICATION,
        }
    }

    fn kind(&self) -> &'static str {
        match self {
            CliError::Usage(_) => "usage",
            CliError::Verification(_) => "verification_failed",
            CliError::Io(_) => "io",
        }
    }
}

/// Single-line JSON error record.
fn record(kind: &str, fields: serde_json::Value) -> String {
    let mut obj = serde_json::Map::new();
    obj.insert("error".into(), kind.into());
    if let serde_json::Value::Object(m) = fields {
        obj.extend(m);
    }
    serde_json::Value::Object(obj).to_string()
}

#[derive(Debug, Parser)]
#[command(
    name = "hillmap",
    version,
    about = "Liouville maps of nearly-free Hill's operators on strips"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Verify the hypothesis, embedding, identities, displacement bound and gauge.
    Check(Flags),
    /// Dump y and y' on the grid.
    Map(Flags),
    /// Dump edge distance, Thurston factor and tract factor on the grid.
    Metrics(Flags),
}

#[derive(Debug, Args)]
#[command(allow_negative_numbers = true)]
struct Flags {
    /// Flat key=value file with the same keys as the flags.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Potential p(z), e.g. "0.05*sech(z - i*pi/2)^2".
    #[arg(long, allow_hyphen_values = true)]
    potential: Option<String>,
    /// Strip height, at least pi, or "inf".
    #[arg(long)]
    height: Option<String>,
    /// Hypothesis constant M in (0, 1).
    #[arg(long)]
    m: Option<String>,
    /// nx,ny,xmin,xmax,margin
    #[arg(long, allow_hyphen_values = true)]
    grid: Option<String>,
    /// Anchor distance L.
    #[arg(long)]
    anchor: Option<String>,
    #[arg(long)]
    rtol: Option<String>,
    #[arg(long)]
    atol: Option<String>,
    /// Number of random displacement pairs.
    #[arg(long)]
    pairs: Option<String>,
    #[arg(long)]
    seed: Option<String>,
    /// Finite-difference step of the residual sweep.
    #[arg(long)]
    fd_step: Option<String>,
    /// Output file; standard output when absent.
    #[arg(long)]
    out: Option<String>,
    /// json or csv.
    #[arg(long)]
    format: Option<String>,
    /// Build maps for potentials that do not decay at the anchors.
    #[arg(long)]
    allow_no_decay: bool,
}

impl Flags {
    fn resolve(&self) -> Result<RunConfig, CliError> {
        let mut cfg = RunConfig::default();
        if let Some(path) = &self.config {
            cfg.apply_file(path).map_err(CliError::Usage)?;
        }
        let pairs = [
            ("potential", &self.potential),
            ("height", &self.height),
            ("m", &self.m),
            ("grid", &self.grid),
            ("anchor", &self.anchor),
            ("rtol", &self.rtol),
            ("atol", &self.atol),
            ("pairs", &self.pairs),
            ("seed", &self.seed),
            ("fd_step", &self.fd_step),
            ("out", &self.out),
            ("format", &self.format),
        ];
        for (k, v) in pairs {
            if let Some(v) = v {
                cfg.set(k, v).map_err(CliError::Usage)?;
            }
        }
        if self.allow_no_decay {
            cfg.allow_no_decay = true;
        }
        Ok(cfg)
    }
}

fn emit(cfg: &RunConfig, bytes: &[u8], stdout: &mut dyn Write) -> Result<(), CliError> {
    match &cfg.out {
        Some(path) => std::fs::write(path, bytes)
            .map_err(|e| CliError::Io(format!("cannot write {}: {e}", path.display()))),
        None => stdout
            .write_all(bytes)
            .map_err(|e| CliError::Io(e.to_string())),
    }
}

fn fail(err: &CliError, stderr: &mut dyn Write) -> i32 {
    let line = record(
        err.kind(),
        serde_json::json!({ "message": err.to_string() }),
    );
    let _ = writeln!(stderr, "{line}");
    err.exit_code()
}

/// Serialises a check report in the requested format.
pub fn render_report(report: &CheckReport, format: Format) -> Result<Vec<u8>, CliError> {
    match format {
        Format::Json => {
            let mut out =
                serde_json::to_vec_pretty(report).map_err(|e| CliError::Io(e.to_string()))?;
            out.push(b'\n');
            Ok(out)
        }
        Format::Csv => {
            let value = serde_json::to_value(report).map_err(|e| CliError::Io(e.to_string()))?;
            let mut rows = Vec::new();
            flatten("", &value, &mut rows);
            let mut w = csv::Writer::from_writer(Vec::new());
            let err = |e: csv::Error| CliError::Io(e.to_string());
            w.write_record(["key", "value"]).map_err(err)?;
            for (k, v) in rows {
                w.write_record([k, v]).map_err(err)?;
            }
            w.into_inner().map_err(|e| CliError::Io(e.to_string()))
        }
    }
}

fn flatten(prefix: &str, v: &serde_json::Value, out: &mut Vec<(String, String)>) {
    let key = |k: &str| {
        if prefix.is_empty() {
            k.to_owned()
        } else {
            format!("{prefix}.{k}")
        }
    };
    match v {
        serde_json::Value::Object(m) => {
            for (k, x) in m {
                flatten(&key(k), x, out);
            }
        }
        serde_json::Value::Array(a) => {
            for (i, x) in a.iter().enumerate() {
                flatten(&key(&i.to_string()), x, out);
            }
        }
        serde_json::Value::String(s) => out.push((prefix.to_owned(), s.clone())),
        other => out.push((prefix.to_owned(), other.to_string())),
    }
}

/// Parses `args` (program name first), runs the command and returns the
/// exit code.
pub fn run<I, T>(args: I, stdout: &mut dyn Write, stderr: &mut dyn Write) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            use clap::error::ErrorKind;
            if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) {
                let _ = write!(stdout, "{e}");
                return EXIT_OK;
            }
            let msg = e.to_string();
            let first = msg
                .lines()
                .next()
                .unwrap_or("")
                .trim_start_matches("error: ");
            return fail(&CliError::Usage(first.to_owned()), stderr);
        }
    };
    let (flags, which) = match &cli.command {
        Command::Check(f) => (f, "check"),
        Command::Map(f) => (f, "map"),
        Command::Metrics(f) => (f, "metrics"),
    };
    let cfg = match flags.resolve() {
        Ok(c) => c,
        Err(e) => return fail(&e, stderr),
    };
    let result = match which {
        "check" => run_check(&cfg, stdout, stderr),
        "map" => cmd_map(&cfg).and_then(|b| emit(&cfg, &b, stdout).map(|_| EXIT_OK)),
        _ => cmd_metrics(&cfg).and_then(|b| emit(&cfg, &b, stdout).map(|_| EXIT_OK)),
    };
    result.unwrap_or_else(|e| fail(&e, stderr))
}

fn run_check(
    cfg: &RunConfig,
    stdout: &mut dyn Write,
    stderr: &mut dyn Write,
) -> Result<i32, CliError> {
    let outcome = cmd_check(cfg)?;
    let bytes = render_report(&outcome.report, cfg.format.unwrap_or(Format::Json))?;
    emit(cfg, &bytes, stdout)?;
    let r = &outcome.report;
    match outcome.exit_code {
        EXIT_HYPOTHESIS => {
            let line = record(
                "hypothesis_failed",
                serde_json::json!({
                    "worst_ratio": r.hypothesis.worst_ratio,
                    "worst_point": r.hypothesis.worst_point,
                    "m": r.hypothesis.m,
                }),
            );
            let _ = writeln!(stderr, "{line}");
        }
        EXIT_VERIFICATION => {
            let line = record(
                "verification_failed",
                serde_json::json!({ "failed": r.failed_suites() }),
            );
            let _ = writeln!(stderr, "{line}");
        }
        _ => {}
    }
    Ok(outcome.exit_code)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn run_str(args: &[&str]) -> (i32, String, String) {
        let mut out = Vec::new();
        let mut err = Vec::new();
        let code = run(args.iter().copied(), &mut out, &mut err);
        (
            code,
            String::from_utf8(out).unwrap(),
            String::from_utf8(err).unwrap(),
        )
    }

    #[test]
    fn usage_errors_are_single_line_records() {
        for args in [
            vec!["hillmap"],
            vec!["hillmap", "frobnicate"],
            vec!["hillmap", "check", "--m", "2"],
            vec!["hillmap", "check", "--potential", "log(z)"],
            vec!["hillmap", "map", "--grid", "1,2"],
            vec!["hillmap", "metrics", "--height", "1"],
        ] {
            let (code, out, err) = run_str(&args);
            assert_eq!(code, EXIT_USAGE, "{args:?}");
            assert!(out.is_empty());
            assert_eq!(err.lines().count(), 1, "{err}");
            let v: serde_json::Value = serde_json::from_str(err.trim()).unwrap();
            assert_eq!(v["error"], "usage");
        }
    }

    #[test]
    fn help_exits_cleanly() {
        let (code, out, _) = run_str(&["hillmap", "--help"]);
        assert_eq!(code, EXIT_OK);
        assert!(out.contains("check"));
    }

    #[test]
    fn negative_grid_and_potential_values_parse() {
        let (code, out, err) = run_str(&[
            "hillmap",
            "metrics",
            "--grid",
            "-2,2,-1,1,0.5",
            "--potential",
            "-0.01*sech(z)^2",
        ]);
        assert_eq!(code, EXIT_USAGE, "{err}");
        assert!(out.is_empty());
        let (code, out, err) = run_str(&[
            "hillmap",
            "metrics",
            "--grid",
            "2,2,-1,1,0.5",
            "--potential",
            "-0.01*sech(z - i*pi/2)^2",
        ]);
        assert_eq!(code, EXIT_OK, "{err}");
        assert_eq!(out.lines().count(), 5);
    }

    #[test]
    fn csv_report_flattens_keys() {
        let cfg = RunConfig {
            grid: hillmap_core::GridSpec {
                nx: 5,
                ny: 3,
                x_min: -1.0,
                x_max: 1.0,
                edge_margin: 0.1,
            },
            pairs: 3,
            ..Default::default()
        };
        let out = cmd_check(&cfg).unwrap();
        let text = String::from_utf8(render_report(&out.report, Format::Csv).unwrap()).unwrap();
        assert!(text.starts_with("key,value\n"));
        assert!(text.contains("\nschema,1\n"));
        assert!(text.contains("\nstatus,pass\n"));
        assert!(text.contains("\nhypothesis.worst_point.0,"));
    }
}
