//! The `liftbp` command-line driver.
//!
//! Exit status: 0 success, 1 a checked residual over its threshold, 2 usage
//! error (bad flags or an unreadable network), 3 numeric or domain failure.

use std::ffi::OsString;
use std::fmt::Write as _;
use std::io::Write as _;
use std::path::PathBuf;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::adjoint::{
    cross_method_report, extract_adjoint_smoothed, extract_adjoints_delta, ReportOptions,
    Thresholds,
};
use crate::autodiff::{backprop, evaluate, finite_diff_gradient};
use crate::bp::{compute_posterior, run_bp, BpConfig, MessageValue, Mode, Schedule};
use crate::lift::{lift_network_with, BoltzmannPlacement};
use crate::netir::random::{random_network, Profile};
use crate::netir::{parse_network, FunctionNetwork};
use crate::num::{sig17, Num};

#[derive(Debug, Parser)]
#[command(
    name = "liftbp",
    version,
    about = "Gradients of function networks by backprop and by belief propagation"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Print the forward value of every variable.
    Eval(Common),
    /// Print adjoints by the chosen method.
    Grad {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = Method::Backprop)]
        method: Method,
    },
    /// Reconcile every method and exit 0 only if all residuals pass.
    Check {
        #[command(flatten)]
        common: Common,
        /// Threshold for exact comparisons (absolute).
        #[arg(long, default_value_t = 1e-9, value_parser = positive)]
        tol_exact: f64,
        /// Threshold for approximate methods (relative, floored at one).
        #[arg(long, default_value_t = 2e-2, value_parser = positive)]
        tol_grid: f64,
    },
    /// Write the full cross-method report.
    Report {
        #[command(flatten)]
        common: Common,
        /// Emit figure data as CSV instead of the report.
        #[arg(long, value_enum)]
        emit_figure: Option<Figure>,
        /// Variable whose grid posterior the figure shows (default: objective).
        #[arg(long)]
        figure_var: Option<String>,
    },
    /// Write internal structures.
    Dump {
        #[command(flatten)]
        common: Common,
        #[arg(long, value_enum, default_value_t = What::Messages)]
        what: What,
        /// Message representation for `--what messages`.
        #[arg(long, value_enum, default_value_t = Method::BpDelta)]
        method: Method,
    },
}

#[derive(Debug, Args)]
struct Common {
    /// Network file in the DSL.
    #[arg(required_unless_present = "random", conflicts_with = "random")]
    network: Option<PathBuf>,
    /// Generate a random network with this many function nodes instead.
    #[arg(long, value_name = "N")]
    random: Option<usize>,
    /// Seed for `--random` and for Monte-Carlo fallbacks.
    #[arg(long, default_value_t = 0)]
    seed: u64,
    #[arg(long = "kT", default_value_t = 1.0, value_parser = positive)]
    kt: f64,
    #[arg(long, default_value_t = 1e-3, value_parser = positive)]
    sigma: f64,
    #[arg(long, default_value_t = 129, value_parser = grid_points)]
    grid_points: usize,
    #[arg(long, default_value_t = 8.0, value_parser = positive)]
    grid_span: f64,
    #[arg(long, default_value_t = 3, value_parser = clap::value_parser!(u8).range(1..=9))]
    quad_nodes: u8,
    #[arg(long, value_enum, default_value_t = ScheduleArg::TwoPass)]
    schedule: ScheduleArg,
    #[arg(long, default_value_t = 200, value_parser = clap::value_parser!(u32).range(1..))]
    max_iters: u32,
    #[arg(long, default_value_t = 1e-10, value_parser = positive)]
    tol: f64,
    /// Finite-difference step.
    #[arg(long, default_value_t = 1e-6, value_parser = positive)]
    h: f64,
    /// Put the Boltzmann factor on this variable instead of the objective.
    /// Exploratory: no property of the resulting messages is claimed.
    #[arg(long, value_name = "VAR")]
    experimental_prior_on: Option<String>,
    #[arg(short, long)]
    output: Option<PathBuf>,
    #[arg(long, value_enum, default_value_t = Format::Text)]
    format: Format,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Method {
    Backprop,
    BpDelta,
    BpGrid,
    Fd,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScheduleArg {
    TwoPass,
    Flooding,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Format {
    Text,
    Json,
    Csv,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Figure {
    GaussShift,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum What {
    Messages,
    Graph,
    Network,
}

fn positive(s: &str) -> Result<f64, String> {
    let x: f64 = s.parse().map_err(|e| format!("{e}"))?;
    if x > 0.0 && x.is_finite() {
        Ok(x)
    } else {
        Err(format!("must be positive and finite, got {x}"))
    }
}

fn grid_points(s: &str) -> Result<usize, String> {
    let n: usize = s.parse().map_err(|e| format!("{e}"))?;
    if n >= 33 && n % 2 == 1 {
        Ok(n)
    } else {
        Err(format!("must be odd and at least 33, got {n}"))
    }
}

/// A failure with the exit status it maps to.
struct Failure {
    code: i32,
    message: String,
}

fn usage(e: impl ToString) -> Failure {
    Failure {
        code: 2,
        message: e.to_string(),
    }
}

fn numeric(e: impl ToString) -> Failure {
    Failure {
        code: 3,
        message: e.to_string(),
    }
}

impl Common {
    fn config(&self, mode: Mode) -> BpConfig {
        BpConfig {
            kt: self.kt,
            sigma: self.sigma,
            grid_points: self.grid_points,
            grid_span: self.grid_span,
            quad_nodes: self.quad_nodes as usize,
            schedule: match self.schedule {
                ScheduleArg::TwoPass => Schedule::TwoPass,
                ScheduleArg::Flooding => Schedule::Flooding {
                    max_iters: self.max_iters as usize,
                    tol: self.tol,
                },
            },
            mode,
            seed: self.seed,
        }
    }

    fn placement(&self) -> BoltzmannPlacement {
        match &self.experimental_prior_on {
            Some(v) => BoltzmannPlacement::Experimental(v.clone()),
            None => BoltzmannPlacement::Objective,
        }
    }

    fn network(&self) -> Result<FunctionNetwork, Failure> {
        match (&self.network, self.random) {
            (_, Some(n)) => Ok(random_network(n, self.seed, Profile::General)),
            (Some(path), None) => {
                let text = std::fs::read_to_string(path)
                    .map_err(|e| usage(format!("cannot read {}: {e}", path.display())))?;
                parse_network(&text).map_err(|e| usage(format!("{}: {e}", path.display())))
            }
            (None, None) => Err(usage("no network given")),
        }
    }

    fn emit(&self, text: &str) -> Result<(), Failure> {
        match &self.output {
            Some(path) => std::fs::write(path, text)
                .map_err(|e| numeric(format!("cannot write {}: {e}", path.display()))),
            None => {
                let mut out = std::io::stdout().lock();
                out.write_all(text.as_bytes())
                    .and_then(|_| out.flush())
                    .map_err(|e| numeric(format!("stdout: {e}")))
            }
        }
    }
}

/// Renders `(name, value)` pairs as text lines, a JSON object or CSV.
fn render_pairs(pairs: &[(&str, f64)], format: Format, header: &str) -> String {
    match format {
        Format::Text => pairs.iter().fold(String::new(), |mut s, (n, v)| {
            let _ = writeln!(s, "{n} {v}");
            s
        }),
        Format::Json => {
            struct Pairs<'a>(&'a [(&'a str, f64)]);
            impl Serialize for Pairs<'_> {
                fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
                    s.collect_map(self.0.iter().map(|(n, v)| (n, Num(*v))))
                }
            }
            let mut s = serde_json::to_string_pretty(&Pairs(pairs)).expect("pairs serialize");
            s.push('\n');
            s
        }
        Format::Csv => {
            let mut s = format!("name,{header}\n");
            for (n, v) in pairs {
                let _ = writeln!(s, "{n},{}", sig17(*v));
            }
            s
        }
    }
}

fn cmd_eval(common: &Common) -> Result<i32, Failure> {
    let net = common.network()?;
    let vals = evaluate(&net).map_err(numeric)?;
    let pairs: Vec<(&str, f64)> = net.vars().map(|v| (net.name(v), vals.get(v))).collect();
    common.emit(&render_pairs(&pairs, common.format, "value"))?;
    Ok(0)
}

fn cmd_grad(common: &Common, method: Method) -> Result<i32, Failure> {
    let net = common.network()?;
    let vals = evaluate(&net).map_err(numeric)?;
    let values: Vec<(usize, f64)> = match method {
        Method::Backprop => {
            let adj = backprop(&net, &vals);
            net.vars().map(|v| (v.0, adj.get(v))).collect()
        }
        Method::Fd => finite_diff_gradient(&net, common.h)
            .map_err(numeric)?
            .into_iter()
            .map(|(v, g)| (v.0, g))
            .collect(),
        Method::BpDelta => {
            let cfg = common.config(Mode::ExactDelta);
            let fg = lift_network_with(&net, &cfg, &common.placement()).map_err(usage)?;
            let run = run_bp(&fg, &cfg).map_err(numeric)?;
            let adj = extract_adjoints_delta(&fg, &run, &cfg).map_err(numeric)?;
            net.vars().map(|v| (v.0, adj.get(v))).collect()
        }
        Method::BpGrid => {
            let cfg = common.config(Mode::GridNumeric);
            let fg = lift_network_with(&net, &cfg, &common.placement()).map_err(usage)?;
            let run = run_bp(&fg, &cfg).map_err(numeric)?;
            if !run.converged {
                return Err(numeric("grid message passing did not converge"));
            }
            net.vars()
                .map(|v| extract_adjoint_smoothed(&fg, &run.store, &cfg, v).map(|g| (v.0, g)))
                .collect::<Result<_, _>>()
                .map_err(numeric)?
        }
    };
    let pairs: Vec<(&str, f64)> = values
        .iter()
        .map(|&(v, g)| (net.names()[v].as_str(), g))
        .collect();
    common.emit(&render_pairs(&pairs, common.format, "adjoint"))?;
    Ok(0)
}

fn report_for(common: &Common) -> Result<crate::adjoint::AdjointReport, Failure> {
    let net = common.network()?;
    let options = ReportOptions {
        fd_step: common.h,
        placement: common.placement(),
        grid: true,
    };
    cross_method_report(&net, &common.config(Mode::ExactDelta), &options).map_err(|e| match e {
        crate::adjoint::ReportError::Lift(e) => usage(e),
        e => numeric(e),
    })
}

fn cmd_check(common: &Common, tol_exact: f64, tol_grid: f64) -> Result<i32, Failure> {
    let report = report_for(common)?;
    let failures = report.failures(Thresholds {
        exact: tol_exact,
        grid: tol_grid,
    });
    let mut out = String::new();
    for (label, status) in [
        ("bp-delta", &report.exact),
        ("bp-grid", &report.grid),
        ("fd", &report.finite_diff),
    ] {
        match &status.error {
            Some(e) => {
                let _ = writeln!(out, "{label}: FAILED ({e})");
            }
            None if !status.converged => {
                let _ = writeln!(
                    out,
                    "{label}: not converged after {} iterations",
                    status.iterations
                );
            }
            None => {
                let _ = writeln!(out, "{label}: ok");
            }
        }
    }
    for r in &failures {
        let _ = writeln!(
            out,
            "residual {:?} at {}{}: {} (value {}, reference {})",
            r.kind,
            report.net.name(r.var),
            r.factor
                .map(|f| format!(" / factor {f}"))
                .unwrap_or_default(),
            r.residual,
            r.value,
            r.reference
        );
    }
    let _ = writeln!(
        out,
        "{} residuals checked, {} over threshold",
        report.residuals.len(),
        failures.len()
    );
    common.emit(&out)?;
    if !report.methods_ok() {
        return Ok(3);
    }
    Ok(if failures.is_empty() { 0 } else { 1 })
}

fn report_csv(report: &crate::adjoint::AdjointReport) -> String {
    let mut s = String::from("name,backprop,bp_delta,bp_grid,finite_diff\n");
    let cell = |x: Option<f64>| x.map(sig17).unwrap_or_default();
    for r in &report.variables {
        let _ = writeln!(
            s,
            "{},{},{},{},{}",
            report.net.name(r.var),
            sig17(r.backprop),
            cell(r.bp_delta),
            cell(r.bp_grid),
            cell(r.finite_diff)
        );
    }
    s
}

/// Grid-mode log-densities of a variable's defining Gaussian before and
/// after multiplication by every downward message, and the normalized
/// posterior density.
fn gauss_shift_csv(common: &Common, var: Option<&str>) -> Result<String, Failure> {
    let net = common.network()?;
    let cfg = common.config(Mode::GridNumeric);
    let fg = lift_network_with(&net, &cfg, &common.placement()).map_err(usage)?;
    let v = match var {
        Some(name) => net
            .var(name)
            .ok_or_else(|| usage(format!("unknown variable `{name}`")))?,
        None => fg.boltzmann_var(),
    };
    let run = run_bp(&fg, &cfg).map_err(numeric)?;
    let (mean, sd) = match run.store.to_var(fg.defining_edge(v)) {
        MessageValue::GaussianParam { mean, sd } => (*mean, *sd),
        m => {
            return Err(numeric(format!(
                "no Gaussian message at `{}` ({})",
                net.name(v),
                m.kind()
            )))
        }
    };
    let MessageValue::GridLog { grid, log } =
        compute_posterior(&fg, &cfg, &run.store, v).map_err(numeric)?
    else {
        return Err(numeric("posterior is not a grid message"));
    };
    let before: Vec<f64> = grid
        .points()
        .map(|x| -0.5 * ((x - mean) / sd).powi(2))
        .collect();
    let z: f64 = log
        .iter()
        .zip(grid.trapezoid())
        .map(|(l, w)| w * l.exp())
        .sum();
    let mut s = String::from("x,log_message_before,log_message_after,posterior_density\n");
    for ((x, b), a) in grid.points().zip(&before).zip(&log) {
        let _ = writeln!(
            s,
            "{},{},{},{}",
            sig17(x),
            sig17(*b),
            sig17(*a),
            sig17(a.exp() / z)
        );
    }
    Ok(s)
}

fn cmd_report(
    common: &Common,
    figure: Option<Figure>,
    figure_var: Option<&str>,
) -> Result<i32, Failure> {
    if let Some(Figure::GaussShift) = figure {
        let csv = gauss_shift_csv(common, figure_var)?;
        common.emit(&csv)?;
        return Ok(0);
    }
    let report = report_for(common)?;
    let text = match common.format {
        Format::Csv => report_csv(&report),
        Format::Text | Format::Json => report.to_json(),
    };
    common.emit(&text)?;
    Ok(0)
}

fn cmd_dump(common: &Common, what: What, method: Method) -> Result<i32, Failure> {
    let net = common.network()?;
    let text = match what {
        What::Network => net.to_dsl(),
        What::Graph => {
            let cfg = common.config(Mode::ExactDelta);
            let fg = lift_network_with(&net, &cfg, &common.placement()).map_err(usage)?;
            let mut s = serde_json::to_string_pretty(&fg.to_json()).expect("graph serializes");
            s.push('\n');
            s
        }
        What::Messages => {
            let mode = match method {
                Method::BpGrid => Mode::GridNumeric,
                Method::BpDelta => Mode::ExactDelta,
                other => {
                    return Err(usage(format!(
                        "{other:?} passes no messages; use bp-delta or bp-grid"
                    )))
                }
            };
            let cfg = common.config(mode);
            let fg = lift_network_with(&net, &cfg, &common.placement()).map_err(usage)?;
            let run = run_bp(&fg, &cfg).map_err(numeric)?;
            #[derive(Serialize)]
            struct Dump<'a> {
                converged: bool,
                iterations: usize,
                residual: Option<Num>,
                messages: Vec<crate::bp::MessageRecord<'a>>,
            }
            let dump = Dump {
                converged: run.converged,
                iterations: run.iterations,
                residual: run.residual.map(Num),
                messages: run.store.dump(&fg),
            };
            let mut s = serde_json::to_string_pretty(&dump).expect("messages serialize");
            s.push('\n');
            s
        }
    };
    common.emit(&text)?;
    Ok(0)
}

/// Parses `args` (program name first) and runs the command, returning the
/// exit status. Diagnostics go to standard error.
pub fn run_cli<I, T>(args: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { 2 } else { 0 };
        }
    };
    let result = match &cli.command {
        Command::Eval(common) => cmd_eval(common),
        Command::Grad { common, method } => cmd_grad(common, *method),
        Command::Check {
            common,
            tol_exact,
            tol_grid,
        } => cmd_check(common, *tol_exact, *tol_grid),
        Command::Report {
            common,
            emit_figure,
            figure_var,
        } => cmd_report(common, *emit_figure, figure_var.as_deref()),
        Command::Dump {
            common,
            what,
            method,
        } => cmd_dump(common, *what, *method),
    };
    match result {
        Ok(code) => code,
        Err(f) => {
            eprintln!("liftbp: {}", f.message);
            f.code
        }
    }
}
