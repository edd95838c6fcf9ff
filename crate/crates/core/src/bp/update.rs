use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use super::message::{gaussian_log, interpolate, moments, Grid, MessageValue};
use super::quadrature::GaussHermite;
use super::store::MessageStore;
use super::{BpConfig, BpError, Mode};
use crate::lift::{FactorGraph, FactorKind, Orientation};
use crate::netir::{FuncNode, VarId};

const ANCHOR_RTOL: f64 = 1e-9;
const MC_SAMPLES: usize = 10_000;

fn same_anchor(a: f64, b: f64) -> bool {
    (a - b).abs() <= ANCHOR_RTOL * a.abs().max(1.0)
}

/// Computes single messages from the current store. Holds the per-run
/// quadrature rule.
pub struct Engine<'a> {
    fg: &'a FactorGraph,
    cfg: &'a BpConfig,
    quad: GaussHermite,
    strict: bool,
}

impl<'a> Engine<'a> {
    pub fn new(fg: &'a FactorGraph, cfg: &'a BpConfig) -> Self {
        Engine {
            fg,
            cfg,
            quad: GaussHermite::new(cfg.quad_nodes.max(1)),
            strict: true,
        }
    }

    /// In strict mode a missing anchor is an error; otherwise the message
    /// stays pending (unit). Scheduled sweeps are strict, flooding is not.
    pub fn strict(mut self, strict: bool) -> Self {
        self.strict = strict;
        self
    }

    fn name(&self, v: VarId) -> String {
        self.fg.network().name(v).to_string()
    }

    fn pending(&self, var: VarId, factor: usize) -> Result<MessageValue, BpError> {
        if self.strict {
            Err(BpError::MissingAnchor {
                var: self.name(var),
                factor,
            })
        } else {
            Ok(MessageValue::Unit)
        }
    }

    fn unexpected(&self, edge: usize, m: &MessageValue) -> BpError {
        BpError::Representation {
            edge,
            found: m.kind(),
        }
    }

    /// Grid of `v`, centred on the mean of its defining message. `None` until
    /// that message has arrived.
    pub fn grid_of(&self, store: &MessageStore, v: VarId) -> Option<Grid> {
        match store.to_var(self.fg.defining_edge(v)) {
            MessageValue::GaussianParam { mean, sd } => Some(Grid::centered(
                *mean,
                self.cfg.grid_span * sd.max(self.cfg.sigma),
                self.cfg.grid_points,
            )),
            _ => None,
        }
    }

    /// Incoming factor-to-variable messages at `v` other than on `skip`, in
    /// factor order, units dropped.
    fn incoming<'s>(
        &self,
        store: &'s MessageStore,
        v: VarId,
        skip: &[usize],
    ) -> impl Iterator<Item = (usize, &'s MessageValue)> + 's {
        let edges: Vec<usize> = self
            .fg
            .var_edges(v)
            .iter()
            .copied()
            .filter(|e| !skip.contains(e))
            .collect();
        edges
            .into_iter()
            .map(move |e| (e, store.to_var(e)))
            .filter(|(_, m)| !m.is_unit())
    }

    /// Sum of the grid messages in `msgs` tabulated on `grid`.
    fn accumulate<'m>(
        &self,
        v: VarId,
        grid: &Grid,
        init: Vec<f64>,
        msgs: impl Iterator<Item = (usize, &'m MessageValue)>,
    ) -> Result<Vec<f64>, BpError> {
        let mut acc = init;
        for (e, m) in msgs {
            let MessageValue::GridLog { grid: g, log } = m else {
                return Err(self.unexpected(e, m));
            };
            if !g.overlaps(grid) {
                return Err(BpError::IncompatibleGrid { var: self.name(v) });
            }
            if g == grid {
                acc.iter_mut().zip(log).for_each(|(a, l)| *a += l);
            } else {
                acc.iter_mut()
                    .zip(grid.points())
                    .for_each(|(a, x)| *a += interpolate(g, log, x));
            }
        }
        Ok(acc)
    }

    pub fn var_to_factor(
        &self,
        store: &MessageStore,
        edge: usize,
    ) -> Result<MessageValue, BpError> {
        let v = self.fg.edges()[edge].var;
        let def = self.fg.defining_edge(v);
        match (self.fg.var_to_factor_orientation(edge), self.cfg.mode) {
            (Orientation::Up, Mode::ExactDelta) => match store.to_var(def) {
                m @ (MessageValue::Unit | MessageValue::PointMass { .. }) => Ok(m.clone()),
                m => Err(self.unexpected(def, m)),
            },
            (Orientation::Up, Mode::GridNumeric) => {
                let (mean, sd) = match store.to_var(def) {
                    MessageValue::Unit => return Ok(MessageValue::Unit),
                    MessageValue::GaussianParam { mean, sd } => (*mean, *sd),
                    m => return Err(self.unexpected(def, m)),
                };
                let mut others = self.incoming(store, v, &[edge, def]).peekable();
                if others.peek().is_none() {
                    return Ok(MessageValue::GaussianParam { mean, sd });
                }
                let grid = self
                    .grid_of(store, v)
                    .expect("defining message is Gaussian");
                let init = grid.points().map(|x| gaussian_log(x, mean, sd)).collect();
                let log = self.accumulate(v, &grid, init, others)?;
                let m = MessageValue::grid_log(grid, log)
                    .ok_or_else(|| BpError::GridUnderflow { var: self.name(v) })?;
                let MessageValue::GridLog { grid, log } = &m else {
                    unreachable!()
                };
                let (mean, sd) = moments(grid, log);
                Ok(MessageValue::GaussianParam { mean, sd })
            }
            (Orientation::Down, Mode::ExactDelta) => {
                let mut anchor: Option<f64> = None;
                let mut slope = 0.0;
                for (e, m) in self.incoming(store, v, &[edge]) {
                    let MessageValue::AnchorSlope {
                        anchor: a,
                        slope: s,
                    } = m
                    else {
                        return Err(self.unexpected(e, m));
                    };
                    match anchor {
                        Some(b) if !same_anchor(b, *a) => {
                            return Err(BpError::AnchorMismatch {
                                var: self.name(v),
                                a: b,
                                b: *a,
                            })
                        }
                        Some(_) => {}
                        None => anchor = Some(*a),
                    }
                    slope += s;
                }
                Ok(match anchor {
                    Some(anchor) => MessageValue::AnchorSlope { anchor, slope },
                    None => MessageValue::Unit,
                })
            }
            (Orientation::Down, Mode::GridNumeric) => {
                let mut others = self.incoming(store, v, &[edge]).peekable();
                if others.peek().is_none() {
                    return Ok(MessageValue::Unit);
                }
                let Some(grid) = self.grid_of(store, v) else {
                    return self.pending(v, self.fg.edges()[edge].factor);
                };
                let log = self.accumulate(v, &grid, vec![0.0; grid.n], others)?;
                MessageValue::grid_log(grid, log)
                    .ok_or_else(|| BpError::GridUnderflow { var: self.name(v) })
            }
        }
    }

    pub fn factor_to_var(
        &self,
        store: &MessageStore,
        edge: usize,
    ) -> Result<MessageValue, BpError> {
        let e = self.fg.edges()[edge];
        let grid_mode = self.cfg.mode == Mode::GridNumeric;
        match &self.fg.factors()[e.factor].kind {
            FactorKind::DeltaPrior { center, .. } => Ok(if grid_mode {
                MessageValue::GaussianParam {
                    mean: *center,
                    sd: self.cfg.sigma,
                }
            } else {
                MessageValue::PointMass { value: *center }
            }),
            FactorKind::Boltzmann { kt, .. } => self.boltzmann(store, edge, *kt),
            FactorKind::Function { func, .. } => {
                if e.var == func.output {
                    self.function_up(store, e.factor, func)
                } else {
                    self.function_down(store, e.factor, func, e.var)
                }
            }
        }
    }

    fn boltzmann(
        &self,
        store: &MessageStore,
        edge: usize,
        kt: f64,
    ) -> Result<MessageValue, BpError> {
        let v = self.fg.edges()[edge].var;
        match store.to_factor(edge) {
            MessageValue::Unit => Ok(MessageValue::Unit),
            MessageValue::PointMass { value } => Ok(MessageValue::AnchorSlope {
                anchor: *value,
                slope: 1.0 / kt,
            }),
            MessageValue::GaussianParam { .. } => {
                let Some(grid) = self.grid_of(store, v) else {
                    return self.pending(v, self.fg.edges()[edge].factor);
                };
                let log = grid.points().map(|x| x / kt).collect();
                Ok(MessageValue::grid_log(grid, log).expect("finite grid"))
            }
            m => Err(self.unexpected(edge, m)),
        }
    }

    /// Upward messages into `factor` from each distinct input, or `None` if
    /// any is still pending.
    fn input_messages<'s>(
        &self,
        store: &'s MessageStore,
        factor: usize,
        func: &FuncNode,
    ) -> Option<Vec<(VarId, usize, &'s MessageValue)>> {
        let mut out = Vec::new();
        for u in func.distinct_inputs() {
            let e = self.fg.edge_between(u, factor).expect("input edge");
            let m = store.to_factor(e);
            if m.is_unit() {
                return None;
            }
            out.push((u, e, m));
        }
        Some(out)
    }

    fn missing_input(
        &self,
        store: &MessageStore,
        factor: usize,
        func: &FuncNode,
    ) -> Result<MessageValue, BpError> {
        let var = func
            .distinct_inputs()
            .into_iter()
            .find(|&u| {
                store
                    .to_factor(self.fg.edge_between(u, factor).expect("input edge"))
                    .is_unit()
            })
            .expect("some input is pending");
        self.pending(var, factor)
    }

    fn slot_values(func: &FuncNode, value: impl Fn(VarId) -> f64) -> Vec<f64> {
        func.inputs.iter().map(|&u| value(u)).collect()
    }

    fn eval(&self, factor: usize, func: &FuncNode, args: &[f64]) -> Result<f64, BpError> {
        func.op
            .eval(args)
            .map_err(|source| BpError::Domain { factor, source })
    }

    fn function_up(
        &self,
        store: &MessageStore,
        factor: usize,
        func: &FuncNode,
    ) -> Result<MessageValue, BpError> {
        let Some(ins) = self.input_messages(store, factor, func) else {
            return self.missing_input(store, factor, func);
        };
        match self.cfg.mode {
            Mode::ExactDelta => {
                let mut anchors = Vec::with_capacity(ins.len());
                for (u, e, m) in ins {
                    match m {
                        MessageValue::PointMass { value } => anchors.push((u, *value)),
                        m => return Err(self.unexpected(e, m)),
                    }
                }
                let args = Self::slot_values(func, |u| lookup(&anchors, u));
                let value = self.eval(factor, func, &args)?;
                Ok(MessageValue::PointMass { value })
            }
            Mode::GridNumeric => {
                let mut params = Vec::with_capacity(ins.len());
                for (u, e, m) in ins {
                    match m {
                        MessageValue::GaussianParam { mean, sd } => params.push((u, *mean, *sd)),
                        m => return Err(self.unexpected(e, m)),
                    }
                }
                let args = Self::slot_values(func, |u| lookup2(&params, u).0);
                let mean = self.eval(factor, func, &args)?;
                let var: f64 = params
                    .iter()
                    .map(|&(u, _, sd)| (func.partial_wrt(u, &args) * sd).powi(2))
                    .sum();
                let sd = if var > 0.0 && var.is_finite() {
                    var.sqrt()
                } else {
                    self.monte_carlo_sd(factor, func, &params)
                };
                Ok(MessageValue::GaussianParam { mean, sd })
            }
        }
    }

    /// Spread of `f(inputs)` under independent Gaussian inputs, by sampling.
    /// Used when every first-order sensitivity vanishes. Falls back to
    /// `sigma` if the samples are degenerate too.
    fn monte_carlo_sd(&self, factor: usize, func: &FuncNode, params: &[(VarId, f64, f64)]) -> f64 {
        let seed = self.cfg.seed ^ (factor as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15);
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let (mut n, mut mean, mut m2) = (0.0, 0.0, 0.0);
        let mut draw = vec![0.0; params.len()];
        for _ in 0..MC_SAMPLES {
            for (d, &(_, mu, sd)) in draw.iter_mut().zip(params) {
                let z: f64 = StandardNormal.sample(&mut rng);
                *d = mu + sd * z;
            }
            let args = Self::slot_values(func, |u| {
                let i = params.iter().position(|p| p.0 == u).expect("input");
                draw[i]
            });
            let y = func.op.eval_unchecked(&args);
            if y.is_finite() {
                n += 1.0;
                let d = y - mean;
                mean += d / n;
                m2 += d * (y - mean);
            }
        }
        let sd = if n > 1.0 {
            (m2 / (n - 1.0)).sqrt()
        } else {
            0.0
        };
        if sd > 0.0 && sd.is_finite() {
            sd
        } else {
            self.cfg.sigma
        }
    }

    fn function_down(
        &self,
        store: &MessageStore,
        factor: usize,
        func: &FuncNode,
        x: VarId,
    ) -> Result<MessageValue, BpError> {
        let out_edge = self
            .fg
            .edge_between(func.output, factor)
            .expect("output edge");
        let down = store.to_factor(out_edge);
        if down.is_unit() {
            return Ok(MessageValue::Unit);
        }
        let Some(ins) = self.input_messages(store, factor, func) else {
            return self.missing_input(store, factor, func);
        };
        match (self.cfg.mode, down) {
            (Mode::ExactDelta, MessageValue::AnchorSlope { anchor, slope }) => {
                let mut anchors = Vec::with_capacity(ins.len());
                for (u, e, m) in ins {
                    match m {
                        MessageValue::PointMass { value } => anchors.push((u, *value)),
                        m => return Err(self.unexpected(e, m)),
                    }
                }
                let args = Self::slot_values(func, |u| lookup(&anchors, u));
                let y = self.eval(factor, func, &args)?;
                if !same_anchor(y, *anchor) {
                    return Err(BpError::AnchorMismatch {
                        var: self.name(func.output),
                        a: y,
                        b: *anchor,
                    });
                }
                Ok(MessageValue::AnchorSlope {
                    anchor: lookup(&anchors, x),
                    slope: slope * func.partial_wrt(x, &args),
                })
            }
            (Mode::GridNumeric, MessageValue::GridLog { grid: gy, log: ly }) => {
                let Some(grid) = self.grid_of(store, x) else {
                    return self.pending(x, factor);
                };
                let mut others = Vec::new();
                for (u, e, m) in ins {
                    if u == x {
                        continue;
                    }
                    match m {
                        MessageValue::GaussianParam { mean, sd } => others.push((u, *mean, *sd)),
                        m => return Err(self.unexpected(e, m)),
                    }
                }
                let log = self.tabulate(func, x, &grid, &others, gy, ly);
                MessageValue::grid_log(grid, log)
                    .ok_or_else(|| BpError::GridUnderflow { var: self.name(x) })
            }
            (_, m) => Err(self.unexpected(out_edge, m)),
        }
    }

    /// `log ∫ m_y(f(x, others)) Π N(others) d(others)` at each point of
    /// `grid`, with the integral over the other inputs done by a tensor
    /// Gauss-Hermite rule.
    fn tabulate(
        &self,
        func: &FuncNode,
        x: VarId,
        grid: &Grid,
        others: &[(VarId, f64, f64)],
        gy: &Grid,
        ly: &[f64],
    ) -> Vec<f64> {
        let q = self.quad.len();
        let combos = q.pow(others.len() as u32);
        let mut node_values = vec![0.0; others.len()];
        let mut terms = Vec::with_capacity(combos);
        grid.points()
            .map(|xv| {
                terms.clear();
                for c in 0..combos {
                    let mut k = c;
                    let mut logw = 0.0;
                    for (slot, &(_, mu, sd)) in node_values.iter_mut().zip(others) {
                        let i = k % q;
                        k /= q;
                        *slot = mu + sd * self.quad.nodes()[i];
                        logw += self.quad.weights()[i].ln();
                    }
                    let args = Self::slot_values(func, |u| {
                        if u == x {
                            xv
                        } else {
                            let i = others.iter().position(|o| o.0 == u).expect("input");
                            node_values[i]
                        }
                    });
                    let y = func.op.eval_unchecked(&args);
                    if y.is_finite() {
                        terms.push(logw + interpolate(gy, ly, y));
                    }
                }
                log_sum_exp(&terms)
            })
            .collect()
    }
}

fn lookup(pairs: &[(VarId, f64)], v: VarId) -> f64 {
    pairs.iter().find(|p| p.0 == v).expect("known input").1
}

fn lookup2(params: &[(VarId, f64, f64)], v: VarId) -> (f64, f64) {
    let p = params.iter().find(|p| p.0 == v).expect("known input");
    (p.1, p.2)
}

fn log_sum_exp(terms: &[f64]) -> f64 {
    let max = terms.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !max.is_finite() {
        return f64::NEG_INFINITY;
    }
    max + terms.iter().map(|t| (t - max).exp()).sum::<f64>().ln()
}

/// Belief at `v`: the product of every incoming message. In exact mode this
/// is the point mass at the forward value; in grid mode a normalized
/// log-density on the variable's grid.
pub fn compute_posterior(
    fg: &FactorGraph,
    cfg: &BpConfig,
    store: &MessageStore,
    v: VarId,
) -> Result<MessageValue, BpError> {
    let def = fg.defining_edge(v);
    match (cfg.mode, store.to_var(def)) {
        (_, MessageValue::Unit) => Ok(MessageValue::Unit),
        (Mode::ExactDelta, m @ MessageValue::PointMass { .. }) => Ok(m.clone()),
        (Mode::GridNumeric, MessageValue::GaussianParam { mean, sd }) => {
            let engine = Engine::new(fg, cfg);
            let grid = engine
                .grid_of(store, v)
                .expect("defining message is Gaussian");
            let init = grid.points().map(|x| gaussian_log(x, *mean, *sd)).collect();
            let others = engine.incoming(store, v, &[def]);
            let log = engine.accumulate(v, &grid, init, others)?;
            MessageValue::grid_log(grid, log).ok_or_else(|| BpError::GridUnderflow {
                var: fg.network().name(v).to_string(),
            })
        }
        (_, m) => Err(BpError::Representation {
            edge: def,
            found: m.kind(),
        }),
    }
}
