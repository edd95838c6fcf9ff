use super::message::MessageValue;
use super::store::{Direction, MessageStore};
use super::update::Engine;
use super::{BpConfig, BpError, Schedule};
use crate::lift::FactorGraph;

/// Outcome of [`run_bp`].
#[derive(Debug, Clone)]
pub struct BpRun {
    pub store: MessageStore,
    /// Two-pass always converges; flooding converges when a round changes no
    /// message by more than its tolerance.
    pub converged: bool,
    /// Sweeps for two-pass (always 2), rounds for flooding.
    pub iterations: usize,
    /// Largest message change in the last flooding round. `None` for two-pass.
    pub residual: Option<f64>,
}

/// Every message set to unit, except that prior factors already send their
/// point mass (or Gaussian) to their input.
pub fn initialize_messages(fg: &FactorGraph, cfg: &BpConfig) -> MessageStore {
    let mut store = MessageStore::new(fg.edges().len());
    let engine = Engine::new(fg, cfg);
    for p in fg.prior_factors() {
        for &e in fg.factor_edges(p) {
            let m = engine
                .factor_to_var(&store, e)
                .expect("prior messages need no input");
            store.set(e, Direction::FactorToVar, m);
        }
    }
    store
}

fn update(
    engine: &Engine,
    store: &mut MessageStore,
    edge: usize,
    dir: Direction,
    change: &mut f64,
) -> Result<(), BpError> {
    let m = match dir {
        Direction::VarToFactor => engine.var_to_factor(store, edge)?,
        Direction::FactorToVar => engine.factor_to_var(store, edge)?,
    };
    *change = change.max(m.change(store.get(edge, dir)));
    store.set(edge, dir, m);
    Ok(())
}

/// Priors, then function factors in topological order, then the message
/// into the Boltzmann factor. Returns the largest change made.
pub fn upward_sweep(
    fg: &FactorGraph,
    cfg: &BpConfig,
    store: &mut MessageStore,
) -> Result<f64, BpError> {
    let engine = Engine::new(fg, cfg);
    let mut change = 0.0;
    for p in fg.prior_factors() {
        for &e in fg.factor_edges(p) {
            update(&engine, store, e, Direction::FactorToVar, &mut change)?;
        }
    }
    for &fi in fg.topo() {
        let edges = fg.factor_edges(fi);
        let (out, ins) = edges.split_last().expect("function factor has an output");
        for &e in ins {
            update(&engine, store, e, Direction::VarToFactor, &mut change)?;
        }
        update(&engine, store, *out, Direction::FactorToVar, &mut change)?;
    }
    for &e in fg.factor_edges(fg.boltzmann_factor()) {
        update(&engine, store, e, Direction::VarToFactor, &mut change)?;
    }
    Ok(change)
}

/// The Boltzmann message, then function factors in reverse topological
/// order, then the messages into the priors.
pub fn downward_sweep(
    fg: &FactorGraph,
    cfg: &BpConfig,
    store: &mut MessageStore,
) -> Result<f64, BpError> {
    let engine = Engine::new(fg, cfg);
    let mut change = 0.0;
    for &e in fg.factor_edges(fg.boltzmann_factor()) {
        update(&engine, store, e, Direction::FactorToVar, &mut change)?;
    }
    for &fi in fg.topo().iter().rev() {
        let edges = fg.factor_edges(fi);
        let (out, ins) = edges.split_last().expect("function factor has an output");
        update(&engine, store, *out, Direction::VarToFactor, &mut change)?;
        for &e in ins {
            update(&engine, store, e, Direction::FactorToVar, &mut change)?;
        }
    }
    for p in fg.prior_factors() {
        for &e in fg.factor_edges(p) {
            update(&engine, store, e, Direction::VarToFactor, &mut change)?;
        }
    }
    Ok(change)
}

/// One synchronous round: all variable-to-factor messages from the current
/// store, then all factor-to-variable messages from the result. Messages
/// whose inputs are not available yet stay unit. Returns the largest change.
pub fn flooding_round(
    fg: &FactorGraph,
    cfg: &BpConfig,
    store: &mut MessageStore,
) -> Result<f64, BpError> {
    let engine = Engine::new(fg, cfg).strict(false);
    let n = store.len();
    let to_factor: Vec<MessageValue> = (0..n)
        .map(|e| engine.var_to_factor(store, e))
        .collect::<Result<_, _>>()?;
    let before = store.clone();
    for (e, m) in to_factor.into_iter().enumerate() {
        store.set(e, Direction::VarToFactor, m);
    }
    let to_var: Vec<MessageValue> = (0..n)
        .map(|e| engine.factor_to_var(store, e))
        .collect::<Result<_, _>>()?;
    for (e, m) in to_var.into_iter().enumerate() {
        store.set(e, Direction::FactorToVar, m);
    }
    Ok(store.max_change(&before))
}

pub fn run_bp(fg: &FactorGraph, cfg: &BpConfig) -> Result<BpRun, BpError> {
    cfg.validate()?;
    let mut store = initialize_messages(fg, cfg);
    match cfg.schedule {
        Schedule::TwoPass => {
            upward_sweep(fg, cfg, &mut store)?;
            downward_sweep(fg, cfg, &mut store)?;
            Ok(BpRun {
                store,
                converged: true,
                iterations: 2,
                residual: None,
            })
        }
        Schedule::Flooding { max_iters, tol } => {
            let mut residual = f64::INFINITY;
            for round in 1..=max_iters {
                residual = flooding_round(fg, cfg, &mut store)?;
                if residual < tol {
                    return Ok(BpRun {
                        store,
                        converged: true,
                        iterations: round,
                        residual: Some(residual),
                    });
                }
            }
            Ok(BpRun {
                store,
                converged: false,
                iterations: max_iters,
                residual: Some(residual),
            })
        }
    }
}
