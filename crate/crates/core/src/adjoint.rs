//! Reading adjoints back out of converged messages, per-edge consistency
//! checks against reverse mode, and a report reconciling every method.

use std::f64::consts::PI;

use serde::Serialize;
use thiserror::Error;

use crate::autodiff::{backprop, evaluate, finite_diff_gradient, AdjointSet, EvalError, Valuation};
use crate::bp::{run_bp, BpConfig, BpError, BpRun, MessageStore, MessageValue, Mode, Schedule};
use crate::lift::{
    lift_network_with, BoltzmannPlacement, FactorGraph, FactorKind, LiftError, Orientation,
};
use crate::netir::{FunctionNetwork, VarId};
use crate::num::Num;

/// Half-width, in prior standard deviations, that a grid must cover for the
/// smoothed extractor.
const COVERAGE: f64 = 6.0;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum AdjointError {
    #[error("message passing did not converge ({iterations} rounds, last change {residual:e})")]
    NotConverged { iterations: usize, residual: f64 },
    #[error("the store was computed in {found:?} mode, expected {expected:?}")]
    WrongMode { expected: Mode, found: Mode },
    #[error("no {what} message at `{var}`")]
    MissingMessage { var: String, what: &'static str },
    #[error("grid for `{var}` spans [{lo}, {hi}], which does not cover the prior's ±6 sd [{need_lo}, {need_hi}]")]
    Coverage {
        var: String,
        lo: f64,
        hi: f64,
        need_lo: f64,
        need_hi: f64,
    },
    #[error("unexpected {found} message at `{var}`")]
    Representation { var: String, found: &'static str },
}

fn check_run(run: &BpRun, cfg: &BpConfig, mode: Mode) -> Result<(), AdjointError> {
    if cfg.mode != mode {
        return Err(AdjointError::WrongMode {
            expected: mode,
            found: cfg.mode,
        });
    }
    if !run.converged {
        return Err(AdjointError::NotConverged {
            iterations: run.iterations,
            residual: run.residual.unwrap_or(f64::NAN),
        });
    }
    Ok(())
}

/// Adjoint of every variable from the slope of its downward message, times kT.
/// The objective's adjoint is 1; variables with no path to it get 0.
pub fn extract_adjoints_delta(
    fg: &FactorGraph,
    run: &BpRun,
    cfg: &BpConfig,
) -> Result<AdjointSet, AdjointError> {
    check_run(run, cfg, Mode::ExactDelta)?;
    let net = fg.network();
    net.vars()
        .map(|v| {
            if v == net.objective() && !fg.is_experimental() {
                return Ok(1.0);
            }
            match run.store.to_factor(fg.defining_edge(v)) {
                MessageValue::Unit => Ok(0.0),
                MessageValue::AnchorSlope { slope, .. } => Ok(slope * cfg.kt),
                m => Err(AdjointError::Representation {
                    var: net.name(v).to_string(),
                    found: m.kind(),
                }),
            }
        })
        .collect::<Result<Vec<_>, _>>()
        .map(AdjointSet::new)
}

/// Smoothed derivative of the downward message into `var`'s defining factor:
/// `-kT ∫ ∂N(x; m, s²)/∂x · log msg(x) dx`, where `N(m, s²)` is the
/// variable's upward (prior) message, by trapezoid quadrature on the
/// message grid. Equals `kT · E_N[d log msg / dx]`.
pub fn extract_adjoint_smoothed(
    fg: &FactorGraph,
    store: &MessageStore,
    cfg: &BpConfig,
    var: VarId,
) -> Result<f64, AdjointError> {
    let name = || fg.network().name(var).to_string();
    if cfg.mode != Mode::GridNumeric {
        return Err(AdjointError::WrongMode {
            expected: Mode::GridNumeric,
            found: cfg.mode,
        });
    }
    let def = fg.defining_edge(var);
    let (mean, sd) = match store.to_var(def) {
        MessageValue::GaussianParam { mean, sd } => (*mean, *sd),
        MessageValue::Unit => {
            return Err(AdjointError::MissingMessage {
                var: name(),
                what: "prior",
            })
        }
        m => {
            return Err(AdjointError::Representation {
                var: name(),
                found: m.kind(),
            })
        }
    };
    let (grid, log) = match store.to_factor(def) {
        MessageValue::Unit => return Ok(0.0),
        MessageValue::GridLog { grid, log } => (grid, log),
        m => {
            return Err(AdjointError::Representation {
                var: name(),
                found: m.kind(),
            })
        }
    };
    let (need_lo, need_hi) = (mean - COVERAGE * sd, mean + COVERAGE * sd);
    if grid.lo > need_lo || grid.hi() < need_hi {
        return Err(AdjointError::Coverage {
            var: name(),
            lo: grid.lo,
            hi: grid.hi(),
            need_lo,
            need_hi,
        });
    }
    let norm = 1.0 / (sd * (2.0 * PI).sqrt());
    let integral: f64 = grid
        .points()
        .zip(log)
        .zip(grid.trapezoid())
        .map(|((x, l), w)| {
            let d = (x - mean) / sd;
            let dn = -norm * (-0.5 * d * d).exp() * d / sd;
            w * dn * l
        })
        .sum();
    Ok(-integral * cfg.kt)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum InvariantKind {
    /// Downward variable-to-factor slope equals the variable's adjoint.
    InvariantA,
    /// Downward factor-to-variable slope equals the output adjoint times the
    /// factor's partial with respect to the variable.
    InvariantB,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EdgeInvariantResidual {
    pub var: VarId,
    pub factor: usize,
    pub kind: InvariantKind,
    pub bp_slope: f64,
    pub autodiff_value: f64,
    /// `|bp_slope · kT - autodiff_value|`.
    pub residual: f64,
}

/// Compares every downward message in an exact-mode store against reverse
/// mode. Partials come from the primitive table at the forward values.
pub fn check_edge_invariants(
    fg: &FactorGraph,
    store: &MessageStore,
    cfg: &BpConfig,
    vals: &Valuation,
    adjoints: &AdjointSet,
) -> Vec<EdgeInvariantResidual> {
    let slope = |m: &MessageValue| match m {
        MessageValue::AnchorSlope { slope, .. } => *slope,
        MessageValue::Unit => 0.0,
        _ => f64::NAN,
    };
    let mut out = Vec::new();
    for (e, edge) in fg.edges().iter().enumerate() {
        let mut push = |kind, bp_slope: f64, autodiff_value: f64| {
            let residual = (bp_slope * cfg.kt - autodiff_value).abs();
            out.push(EdgeInvariantResidual {
                var: edge.var,
                factor: edge.factor,
                kind,
                bp_slope,
                autodiff_value,
                residual: if residual.is_nan() {
                    f64::INFINITY
                } else {
                    residual
                },
            });
        };
        if fg.var_to_factor_orientation(e) == Orientation::Down {
            push(
                InvariantKind::InvariantA,
                slope(store.to_factor(e)),
                adjoints.get(edge.var),
            );
        }
        if fg.factor_to_var_orientation(e) == Orientation::Down {
            let expected = match &fg.factors()[edge.factor].kind {
                FactorKind::Function { func, .. } => {
                    adjoints.get(func.output) * func.partial_wrt(edge.var, &vals.args(&func.inputs))
                }
                FactorKind::Boltzmann { .. } => 1.0,
                FactorKind::DeltaPrior { .. } => unreachable!("priors only send upward"),
            };
            push(InvariantKind::InvariantB, slope(store.to_var(e)), expected);
        }
    }
    out
}

/// Knobs for [`cross_method_report`] beyond the BP configuration.
#[derive(Debug, Clone, PartialEq)]
pub struct ReportOptions {
    /// Central-difference step.
    pub fd_step: f64,
    pub placement: BoltzmannPlacement,
    /// Run the grid pipeline as well.
    pub grid: bool,
}

impl Default for ReportOptions {
    fn default() -> Self {
        ReportOptions {
            fd_step: 1e-6,
            placement: BoltzmannPlacement::Objective,
            grid: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum ResidualKind {
    InvariantA,
    InvariantB,
    /// bp-delta against backprop, absolute.
    BpDelta,
    /// bp-grid against backprop, relative with a unit floor.
    BpGrid,
    /// Finite differences against backprop, relative with a unit floor.
    FiniteDiff,
}

impl ResidualKind {
    /// Exact comparisons are held to the exact tolerance, approximations to
    /// the grid tolerance.
    pub fn is_exact(self) -> bool {
        matches!(
            self,
            ResidualKind::InvariantA | ResidualKind::InvariantB | ResidualKind::BpDelta
        )
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Residual {
    pub kind: ResidualKind,
    pub var: VarId,
    pub factor: Option<usize>,
    pub value: f64,
    pub reference: f64,
    pub residual: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct VariableRecord {
    pub var: VarId,
    pub backprop: f64,
    pub bp_delta: Option<f64>,
    pub bp_grid: Option<f64>,
    pub finite_diff: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct MethodStatus {
    pub ran: bool,
    pub converged: bool,
    pub iterations: usize,
    pub residual: Option<f64>,
    pub error: Option<String>,
}

impl MethodStatus {
    fn from_run(run: &BpRun) -> Self {
        MethodStatus {
            ran: true,
            converged: run.converged,
            iterations: run.iterations,
            residual: run.residual,
            error: None,
        }
    }

    fn failed(err: impl ToString) -> Self {
        MethodStatus {
            ran: true,
            error: Some(err.to_string()),
            ..MethodStatus::default()
        }
    }

    pub fn ok(&self) -> bool {
        !self.ran || (self.error.is_none() && self.converged)
    }
}

#[derive(Debug, Clone)]
pub struct AdjointReport {
    pub net: FunctionNetwork,
    pub cfg: BpConfig,
    pub options: ReportOptions,
    pub variables: Vec<VariableRecord>,
    pub residuals: Vec<Residual>,
    pub exact: MethodStatus,
    pub grid: MethodStatus,
    pub finite_diff: MethodStatus,
}

#[derive(Debug, Error)]
pub enum ReportError {
    #[error(transparent)]
    Eval(#[from] EvalError),
    #[error(transparent)]
    Lift(#[from] LiftError),
}

fn exact_pipeline(fg: &FactorGraph, cfg: &BpConfig) -> Result<(BpRun, AdjointSet), String> {
    let run = run_bp(fg, cfg).map_err(|e: BpError| e.to_string())?;
    let adj = extract_adjoints_delta(fg, &run, cfg).map_err(|e| e.to_string())?;
    Ok((run, adj))
}

fn grid_pipeline(fg: &FactorGraph, cfg: &BpConfig) -> Result<(BpRun, Vec<Option<f64>>), String> {
    let run = run_bp(fg, cfg).map_err(|e| e.to_string())?;
    check_run(&run, cfg, Mode::GridNumeric).map_err(|e| e.to_string())?;
    let adj = fg
        .network()
        .vars()
        .map(|v| extract_adjoint_smoothed(fg, &run.store, cfg, v).ok())
        .collect();
    Ok((run, adj))
}

/// Runs every gradient method on `net` and reconciles them. A failing BP or
/// finite-difference method is recorded in its status rather than aborting
/// the report; only forward evaluation and lifting errors are fatal.
pub fn cross_method_report(
    net: &FunctionNetwork,
    cfg: &BpConfig,
    options: &ReportOptions,
) -> Result<AdjointReport, ReportError> {
    let vals = evaluate(net)?;
    let reference = backprop(net, &vals);
    let exact_cfg = cfg.with_mode(Mode::ExactDelta);
    let grid_cfg = cfg.with_mode(Mode::GridNumeric);
    let fg = lift_network_with(net, &exact_cfg, &options.placement)?;

    let (exact, grid) = std::thread::scope(|s| {
        let grid = options
            .grid
            .then(|| s.spawn(|| grid_pipeline(&fg, &grid_cfg)));
        let exact = exact_pipeline(&fg, &exact_cfg);
        (
            exact,
            grid.map(|h| h.join().expect("grid pipeline panicked")),
        )
    });
    let fd = finite_diff_gradient(net, options.fd_step);

    let mut variables: Vec<VariableRecord> = net
        .vars()
        .map(|v| VariableRecord {
            var: v,
            backprop: reference.get(v),
            bp_delta: None,
            bp_grid: None,
            finite_diff: None,
        })
        .collect();
    let mut residuals = Vec::new();

    let exact_status = match &exact {
        Ok((run, adj)) => {
            for r in check_edge_invariants(&fg, &run.store, &exact_cfg, &vals, &reference) {
                residuals.push(Residual {
                    kind: match r.kind {
                        InvariantKind::InvariantA => ResidualKind::InvariantA,
                        InvariantKind::InvariantB => ResidualKind::InvariantB,
                    },
                    var: r.var,
                    factor: Some(r.factor),
                    value: r.bp_slope * exact_cfg.kt,
                    reference: r.autodiff_value,
                    residual: r.residual,
                });
            }
            for (record, &value) in variables.iter_mut().zip(adj.as_slice()) {
                record.bp_delta = Some(value);
                residuals.push(Residual {
                    kind: ResidualKind::BpDelta,
                    var: record.var,
                    factor: None,
                    value,
                    reference: record.backprop,
                    residual: (value - record.backprop).abs(),
                });
            }
            MethodStatus::from_run(run)
        }
        Err(e) => MethodStatus::failed(e),
    };

    let relative = |a: f64, b: f64| (a - b).abs() / b.abs().max(1.0);
    let grid_status = match &grid {
        None => MethodStatus::default(),
        Some(Ok((run, adj))) => {
            for (v, g) in adj.iter().enumerate() {
                variables[v].bp_grid = *g;
                let b = variables[v].backprop;
                residuals.push(Residual {
                    kind: ResidualKind::BpGrid,
                    var: VarId(v),
                    factor: None,
                    value: g.unwrap_or(f64::NAN),
                    reference: b,
                    residual: g.map_or(f64::INFINITY, |g| relative(g, b)),
                });
            }
            MethodStatus::from_run(run)
        }
        Some(Err(e)) => MethodStatus::failed(e),
    };

    let fd_status = match &fd {
        Ok(grad) => {
            for &(v, g) in grad {
                variables[v.0].finite_diff = Some(g);
                let b = variables[v.0].backprop;
                residuals.push(Residual {
                    kind: ResidualKind::FiniteDiff,
                    var: v,
                    factor: None,
                    value: g,
                    reference: b,
                    residual: relative(g, b),
                });
            }
            MethodStatus {
                ran: true,
                converged: true,
                ..MethodStatus::default()
            }
        }
        Err(e) => MethodStatus::failed(e),
    };

    Ok(AdjointReport {
        net: net.clone(),
        cfg: cfg.clone(),
        options: options.clone(),
        variables,
        residuals,
        exact: exact_status,
        grid: grid_status,
        finite_diff: fd_status,
    })
}

/// Pass/fail thresholds for [`AdjointReport::failures`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Thresholds {
    pub exact: f64,
    pub grid: f64,
}

impl Default for Thresholds {
    fn default() -> Self {
        Thresholds {
            exact: 1e-9,
            grid: 2e-2,
        }
    }
}

impl AdjointReport {
    /// Residuals at or above their threshold.
    pub fn failures(&self, t: Thresholds) -> Vec<&Residual> {
        self.residuals
            .iter()
            .filter(|r| {
                let limit = if r.kind.is_exact() { t.exact } else { t.grid };
                r.residual >= limit || r.residual.is_nan()
            })
            .collect()
    }

    /// True when every method that ran finished and converged.
    pub fn methods_ok(&self) -> bool {
        self.exact.ok() && self.grid.ok() && self.finite_diff.ok()
    }

    pub fn to_json(&self) -> String {
        let name = |v: VarId| self.net.name(v);
        let view = ReportView {
            variables: self
                .variables
                .iter()
                .map(|r| VariableView {
                    name: name(r.var),
                    backprop: Num(r.backprop),
                    bp_delta: r.bp_delta.map(Num),
                    bp_grid: r.bp_grid.map(Num),
                    finite_diff: r.finite_diff.map(Num),
                })
                .collect(),
            residuals: self
                .residuals
                .iter()
                .map(|r| ResidualView {
                    kind: r.kind,
                    var: name(r.var),
                    factor: r.factor,
                    value: Num(r.value),
                    reference: Num(r.reference),
                    residual: Num(r.residual),
                })
                .collect(),
            convergence: ConvergenceView {
                schedule: self.cfg.schedule.into(),
                bp_delta: (&self.exact).into(),
                bp_grid: (&self.grid).into(),
                finite_diff: (&self.finite_diff).into(),
            },
            config: ConfigView {
                kt: Num(self.cfg.kt),
                sigma: Num(self.cfg.sigma),
                grid_points: self.cfg.grid_points,
                grid_span: Num(self.cfg.grid_span),
                quad_nodes: self.cfg.quad_nodes,
                seed: self.cfg.seed,
                fd_step: Num(self.options.fd_step),
                boltzmann_on: match &self.options.placement {
                    BoltzmannPlacement::Objective => name(self.net.objective()),
                    BoltzmannPlacement::Experimental(v) => v.as_str(),
                },
            },
        };
        let mut s = serde_json::to_string_pretty(&view).expect("report serializes");
        s.push('\n');
        s
    }
}

#[derive(Serialize)]
struct ReportView<'a> {
    variables: Vec<VariableView<'a>>,
    residuals: Vec<ResidualView<'a>>,
    convergence: ConvergenceView,
    config: ConfigView<'a>,
}

#[derive(Serialize)]
struct VariableView<'a> {
    name: &'a str,
    backprop: Num,
    bp_delta: Option<Num>,
    bp_grid: Option<Num>,
    finite_diff: Option<Num>,
}

#[derive(Serialize)]
struct ResidualView<'a> {
    kind: ResidualKind,
    var: &'a str,
    factor: Option<usize>,
    value: Num,
    reference: Num,
    residual: Num,
}

#[derive(Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
enum ScheduleView {
    TwoPass,
    Flooding { max_iters: usize, tol: Num },
}

impl From<Schedule> for ScheduleView {
    fn from(s: Schedule) -> Self {
        match s {
            Schedule::TwoPass => ScheduleView::TwoPass,
            Schedule::Flooding { max_iters, tol } => ScheduleView::Flooding {
                max_iters,
                tol: Num(tol),
            },
        }
    }
}

#[derive(Serialize)]
struct StatusView {
    ran: bool,
    converged: bool,
    iterations: usize,
    residual: Option<Num>,
    error: Option<String>,
}

impl From<&MethodStatus> for StatusView {
    fn from(m: &MethodStatus) -> Self {
        StatusView {
            ran: m.ran,
            converged: m.converged,
            iterations: m.iterations,
            residual: m.residual.map(Num),
            error: m.error.clone(),
        }
    }
}

#[derive(Serialize)]
struct ConvergenceView {
    schedule: ScheduleView,
    bp_delta: StatusView,
    bp_grid: StatusView,
    finite_diff: StatusView,
}

#[derive(Serialize)]
struct ConfigView<'a> {
    #[serde(rename = "kT")]
    kt: Num,
    sigma: Num,
    grid_points: usize,
    grid_span: Num,
    quad_nodes: usize,
    seed: u64,
    fd_step: Num,
    boltzmann_on: &'a str,
}
