//! Forward evaluation, reverse-mode adjoints and a central-difference oracle.

use thiserror::Error;

use crate::netir::{topo_order, DomainError, FunctionNetwork, NetError, VarId};

#[derive(Debug, Clone, PartialEq, Error)]
pub enum EvalError {
    #[error(transparent)]
    Network(#[from] NetError),
    #[error("domain error at `{node}`: {source}")]
    Domain {
        node: String,
        #[source]
        source: DomainError,
    },
    #[error("non-finite value {value} at `{node}`")]
    NonFinite { node: String, value: f64 },
    #[error("finite-difference step must be positive, got {0}")]
    BadStep(f64),
}

/// Value of every variable after a forward pass.
#[derive(Debug, Clone, PartialEq)]
pub struct Valuation {
    values: Vec<f64>,
}

impl Valuation {
    pub fn get(&self, v: VarId) -> f64 {
        self.values[v.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.values
    }

    /// Argument values of a node's input slots.
    pub fn args(&self, inputs: &[VarId]) -> Vec<f64> {
        inputs.iter().map(|v| self.values[v.0]).collect()
    }
}

/// `dz/dx` for each variable `x`, indexed by [`VarId`].
#[derive(Debug, Clone, PartialEq)]
pub struct AdjointSet {
    adjoints: Vec<f64>,
}

impl AdjointSet {
    pub fn new(adjoints: Vec<f64>) -> Self {
        AdjointSet { adjoints }
    }

    pub fn get(&self, v: VarId) -> f64 {
        self.adjoints[v.0]
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.adjoints
    }
}

pub fn evaluate(net: &FunctionNetwork) -> Result<Valuation, EvalError> {
    let order = topo_order(net)?;
    let mut values = vec![f64::NAN; net.num_vars()];
    for (&v, &x) in net.input_values() {
        values[v.0] = x;
    }
    for f in order {
        let args: Vec<f64> = f.inputs.iter().map(|v| values[v.0]).collect();
        let node = || net.name(f.output).to_string();
        let y = f.op.eval(&args).map_err(|source| EvalError::Domain {
            node: node(),
            source,
        })?;
        if !y.is_finite() {
            return Err(EvalError::NonFinite {
                node: node(),
                value: y,
            });
        }
        values[f.output.0] = y;
    }
    Ok(Valuation { values })
}

/// Reverse-mode sweep. Each adjoint is the sum, over the functions consuming
/// the variable in declaration order, of the consumer's adjoint times the
/// consumer's total partial; the objective additionally gets its seed of 1.
pub fn backprop(net: &FunctionNetwork, vals: &Valuation) -> AdjointSet {
    let order = topo_order(net).expect("valuation implies a valid network");
    let n = net.num_vars();
    let mut consumers: Vec<Vec<usize>> = vec![Vec::new(); n];
    for (i, f) in net.functions().iter().enumerate() {
        for v in f.distinct_inputs() {
            consumers[v.0].push(i);
        }
    }
    let mut adjoint = vec![0.0; n];
    let finish = |v: VarId, adjoint: &mut Vec<f64>| {
        let mut acc = 0.0;
        for &k in &consumers[v.0] {
            let f = &net.functions()[k];
            acc += adjoint[f.output.0] * f.partial_wrt(v, &vals.args(&f.inputs));
        }
        if v == net.objective() {
            acc += 1.0;
        }
        adjoint[v.0] = acc;
    };
    // A function output is final once all of its consumers (which come later in
    // topological order) are final.
    for f in order.iter().rev() {
        finish(f.output, &mut adjoint);
    }
    for v in net.vars() {
        if !net.functions().iter().any(|f| f.output == v) {
            finish(v, &mut adjoint);
        }
    }
    AdjointSet::new(adjoint)
}

/// Central differences `(z(x+h) - z(x-h)) / 2h` for each input, in
/// [`FunctionNetwork::inputs`] order.
pub fn finite_diff_gradient(net: &FunctionNetwork, h: f64) -> Result<Vec<(VarId, f64)>, EvalError> {
    if h <= 0.0 || !h.is_finite() {
        return Err(EvalError::BadStep(h));
    }
    let z = net.objective();
    net.inputs()
        .iter()
        .map(|&v| {
            let x = net.input_value(v).expect("validated input");
            let plus = evaluate(&net.with_input_value(v, x + h))?.get(z);
            let minus = evaluate(&net.with_input_value(v, x - h))?.get(z);
            Ok((v, (plus - minus) / (2.0 * h)))
        })
        .collect()
}
