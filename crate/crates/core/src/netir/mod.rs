//! Function-network IR: a DAG of scalar primitives with designated inputs and
//! one objective variable.
//!
//! Networks come from the line-oriented DSL ([`parse_network`]), from
//! [`random::random_network`], or from [`FunctionNetwork::from_parts`]. Only
//! the first two guarantee validity; `from_parts` is unchecked and must be
//! followed by [`validate_network`].

mod parse;
mod primitive;
pub mod random;

use std::collections::{BTreeMap, BTreeSet, HashMap};
use std::fmt::Write as _;

use thiserror::Error;

pub use parse::parse_network;
pub use primitive::{DomainError, Primitive};

/// Index of a variable within its [`FunctionNetwork`]. Names live in the network.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct VarId(pub usize);

/// `output = op(inputs...)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FuncNode {
    pub output: VarId,
    pub op: Primitive,
    pub inputs: Vec<VarId>,
}

impl FuncNode {
    /// Distinct input variables in first-slot order. A variable used in two
    /// slots (e.g. `mul(x, x)`) appears once.
    pub fn distinct_inputs(&self) -> Vec<VarId> {
        let mut out: Vec<VarId> = Vec::with_capacity(self.inputs.len());
        for v in &self.inputs {
            if !out.contains(v) {
                out.push(*v);
            }
        }
        out
    }

    /// Total partial derivative of the node with respect to `var`, summing
    /// over every slot that `var` occupies. `args` are the slot values.
    pub fn partial_wrt(&self, var: VarId, args: &[f64]) -> f64 {
        let mut acc = 0.0;
        for (slot, v) in self.inputs.iter().enumerate() {
            if *v == var {
                acc += self.op.partial(slot, args);
            }
        }
        acc
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum NetError {
    #[error("line {line}, column {column}: {message}")]
    Syntax {
        line: usize,
        column: usize,
        message: String,
    },
    #[error("line {line}, column {column}: unknown primitive `{name}`")]
    UnknownPrimitive {
        line: usize,
        column: usize,
        name: String,
    },
    #[error("line {line}: `{op}` takes {expected} argument(s), got {found}")]
    Arity {
        line: usize,
        op: String,
        expected: usize,
        found: usize,
    },
    #[error("variable `{name}` is defined more than once (line {line})")]
    DuplicateDefinition { line: usize, name: String },
    #[error("variable `{name}` is defined in terms of itself (line {line})")]
    SelfReference { line: usize, name: String },
    #[error("no `objective` declaration")]
    MissingObjective,
    #[error("`objective` declared more than once (line {line})")]
    DuplicateObjective { line: usize },
    #[error("objective `{0}` is not a variable of the network")]
    UnknownObjective(String),
    #[error("input `{name}` has no value (line {line})")]
    InputWithoutValue { line: usize, name: String },
    #[error("input `{0}` has a non-finite value")]
    NonFiniteInput(String),
    #[error("invalid variable name `{0}`")]
    InvalidName(String),
    #[error("cycle through {}", .0.join(" -> "))]
    Cycle(Vec<String>),
    #[error("variable `{0}` is used but never defined")]
    Undefined(String),
}

/// A validated (or, via `from_parts`, not yet validated) function network.
///
/// Variables are indexed: inputs first in declaration order, then function
/// outputs in declaration order, then anything left over.
#[derive(Debug, Clone, PartialEq)]
pub struct FunctionNetwork {
    names: Vec<String>,
    lookup: HashMap<String, VarId>,
    functions: Vec<FuncNode>,
    inputs: Vec<VarId>,
    input_values: BTreeMap<VarId, f64>,
    objective: VarId,
}

impl FunctionNetwork {
    /// Assembles a network without checking any invariant.
    pub fn from_parts(
        names: Vec<String>,
        functions: Vec<FuncNode>,
        inputs: Vec<VarId>,
        input_values: BTreeMap<VarId, f64>,
        objective: VarId,
    ) -> Self {
        let lookup = names
            .iter()
            .enumerate()
            .map(|(i, n)| (n.clone(), VarId(i)))
            .collect();
        FunctionNetwork {
            names,
            lookup,
            functions,
            inputs,
            input_values,
            objective,
        }
    }

    pub fn num_vars(&self) -> usize {
        self.names.len()
    }

    pub fn vars(&self) -> impl Iterator<Item = VarId> + '_ {
        (0..self.names.len()).map(VarId)
    }

    pub fn name(&self, v: VarId) -> &str {
        &self.names[v.0]
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    pub fn var(&self, name: &str) -> Option<VarId> {
        self.lookup.get(name).copied()
    }

    pub fn functions(&self) -> &[FuncNode] {
        &self.functions
    }

    pub fn inputs(&self) -> &[VarId] {
        &self.inputs
    }

    pub fn is_input(&self, v: VarId) -> bool {
        self.inputs.contains(&v)
    }

    pub fn input_value(&self, v: VarId) -> Option<f64> {
        self.input_values.get(&v).copied()
    }

    pub fn input_values(&self) -> &BTreeMap<VarId, f64> {
        &self.input_values
    }

    /// Replaces input values, keeping structure. Used by finite differences.
    pub fn with_input_value(&self, v: VarId, value: f64) -> FunctionNetwork {
        let mut out = self.clone();
        out.input_values.insert(v, value);
        out
    }

    pub fn objective(&self) -> VarId {
        self.objective
    }

    /// Index of the function whose output is `v`, if any.
    pub fn defining_function(&self, v: VarId) -> Option<usize> {
        self.functions.iter().position(|f| f.output == v)
    }

    /// Indices of functions that read `v`, in declaration order.
    pub fn consumers(&self, v: VarId) -> Vec<usize> {
        self.functions
            .iter()
            .enumerate()
            .filter(|(_, f)| f.inputs.contains(&v))
            .map(|(i, _)| i)
            .collect()
    }

    /// Renders the network in the DSL. Parsing the result yields an equal network.
    pub fn to_dsl(&self) -> String {
        let mut out = String::new();
        for v in &self.inputs {
            let value = self.input_values.get(v).copied().unwrap_or(f64::NAN);
            let _ = writeln!(out, "input {} = {:?}", self.name(*v), value);
        }
        for f in &self.functions {
            let args: Vec<&str> = f.inputs.iter().map(|v| self.name(*v)).collect();
            let _ = writeln!(
                out,
                "{} = {}({})",
                self.name(f.output),
                f.op.name(),
                args.join(", ")
            );
        }
        let _ = writeln!(out, "objective {}", self.name(self.objective));
        out
    }
}

/// Outcome of a successful [`validate_network`].
#[derive(Debug, Clone, PartialEq)]
pub struct ValidationReport {
    /// Function indices in deterministic topological order.
    pub topo: Vec<usize>,
    /// Variables with no directed path to the objective, in index order.
    /// Legal; their adjoints are zero.
    pub unreachable: Vec<VarId>,
}

pub(crate) fn is_identifier(s: &str) -> bool {
    let mut chars = s.chars();
    match chars.next() {
        Some(c) if c.is_ascii_alphabetic() || c == '_' => {}
        _ => return false,
    }
    chars.all(|c| c.is_ascii_alphanumeric() || c == '_')
}

/// Checks every structural invariant of a function network.
pub fn validate_network(net: &FunctionNetwork) -> Result<ValidationReport, NetError> {
    let n = net.num_vars();
    let mut seen = BTreeSet::new();
    for name in &net.names {
        if !is_identifier(name) {
            return Err(NetError::InvalidName(name.clone()));
        }
        if !seen.insert(name.as_str()) {
            return Err(NetError::DuplicateDefinition {
                line: 0,
                name: name.clone(),
            });
        }
    }
    if net.objective.0 >= n {
        return Err(NetError::UnknownObjective(format!("#{}", net.objective.0)));
    }

    let mut defined_by: Vec<Option<usize>> = vec![None; n];
    for &v in &net.inputs {
        if defined_by[v.0].is_some() || net.inputs.iter().filter(|&&u| u == v).count() > 1 {
            return Err(NetError::DuplicateDefinition {
                line: 0,
                name: net.name(v).to_string(),
            });
        }
        match net.input_values.get(&v) {
            None => {
                return Err(NetError::InputWithoutValue {
                    line: 0,
                    name: net.name(v).to_string(),
                })
            }
            Some(x) if !x.is_finite() => return Err(NetError::NonFiniteInput(net.name(v).into())),
            Some(_) => {}
        }
        defined_by[v.0] = Some(usize::MAX);
    }
    if let Some((v, _)) = net
        .input_values
        .iter()
        .find(|(v, _)| !net.inputs.contains(v))
    {
        let name = net.names.get(v.0).cloned().unwrap_or_default();
        return Err(NetError::DuplicateDefinition { line: 0, name });
    }
    for (i, f) in net.functions.iter().enumerate() {
        if f.inputs.len() != f.op.arity() {
            return Err(NetError::Arity {
                line: 0,
                op: f.op.name(),
                expected: f.op.arity(),
                found: f.inputs.len(),
            });
        }
        if f.inputs.contains(&f.output) {
            return Err(NetError::SelfReference {
                line: 0,
                name: net.name(f.output).to_string(),
            });
        }
        if defined_by[f.output.0].is_some() {
            return Err(NetError::DuplicateDefinition {
                line: 0,
                name: net.name(f.output).to_string(),
            });
        }
        defined_by[f.output.0] = Some(i);
    }

    if let Some(cycle) = find_cycle(net, &defined_by) {
        return Err(NetError::Cycle(
            cycle.into_iter().map(|v| net.name(v).to_string()).collect(),
        ));
    }
    if let Some(v) = (0..n).find(|&v| defined_by[v].is_none()) {
        return Err(NetError::Undefined(net.names[v].clone()));
    }

    let topo = topo_order_indices(net);
    let reaches = reaches_objective(net);
    let unreachable = (0..n).filter(|&v| !reaches[v]).map(VarId).collect();
    Ok(ValidationReport { topo, unreachable })
}

/// Depth-first search over the "input -> output" edges, returning the variables
/// of the first cycle found (in dependency order), if any.
fn find_cycle(net: &FunctionNetwork, defined_by: &[Option<usize>]) -> Option<Vec<VarId>> {
    #[derive(Clone, Copy, PartialEq)]
    enum Mark {
        New,
        Active,
        Done,
    }
    let n = net.num_vars();
    let mut mark = vec![Mark::New; n];
    // Walk from each variable to the variables it depends on.
    for start in 0..n {
        if mark[start] != Mark::New {
            continue;
        }
        let mut stack: Vec<(usize, usize)> = vec![(start, 0)];
        let mut path: Vec<usize> = vec![start];
        mark[start] = Mark::Active;
        while let Some(&mut (v, ref mut next)) = stack.last_mut() {
            let deps: &[VarId] = match defined_by[v] {
                Some(i) if i != usize::MAX => &net.functions[i].inputs,
                _ => &[],
            };
            if *next < deps.len() {
                let d = deps[*next].0;
                *next += 1;
                match mark[d] {
                    Mark::New => {
                        mark[d] = Mark::Active;
                        stack.push((d, 0));
                        path.push(d);
                    }
                    Mark::Active => {
                        let pos = path.iter().position(|&p| p == d).unwrap();
                        let mut cycle: Vec<VarId> = path[pos..].iter().map(|&p| VarId(p)).collect();
                        cycle.reverse();
                        // Rotate so the cycle starts at its smallest declared variable.
                        let min = cycle
                            .iter()
                            .enumerate()
                            .min_by_key(|(_, v)| net.defining_function(**v))
                            .map(|(i, _)| i)
                            .unwrap_or(0);
                        cycle.rotate_left(min);
                        return Some(cycle);
                    }
                    Mark::Done => {}
                }
            } else {
                mark[v] = Mark::Done;
                stack.pop();
                path.pop();
            }
        }
    }
    None
}

/// Kahn's algorithm; among ready functions the earliest declared goes first.
fn topo_order_indices(net: &FunctionNetwork) -> Vec<usize> {
    let n = net.num_vars();
    let mut defined_by: Vec<Option<usize>> = vec![None; n];
    for (i, f) in net.functions.iter().enumerate() {
        defined_by[f.output.0] = Some(i);
    }
    let mut pending: Vec<usize> = net
        .functions
        .iter()
        .map(|f| {
            f.distinct_inputs()
                .iter()
                .filter(|v| defined_by[v.0].is_some())
                .count()
        })
        .collect();
    let mut ready: BTreeSet<usize> = (0..net.functions.len())
        .filter(|&i| pending[i] == 0)
        .collect();
    let mut order = Vec::with_capacity(net.functions.len());
    while let Some(i) = ready.pop_first() {
        order.push(i);
        let out = net.functions[i].output;
        for c in net.consumers(out) {
            pending[c] -= 1;
            if pending[c] == 0 {
                ready.insert(c);
            }
        }
    }
    order
}

/// `reaches[v]` is true when a directed path leads from `v` to the objective.
fn reaches_objective(net: &FunctionNetwork) -> Vec<bool> {
    let mut reaches = vec![false; net.num_vars()];
    reaches[net.objective.0] = true;
    let mut stack = vec![net.objective];
    while let Some(v) = stack.pop() {
        if let Some(i) = net.defining_function(v) {
            for u in &net.functions[i].inputs {
                if !reaches[u.0] {
                    reaches[u.0] = true;
                    stack.push(*u);
                }
            }
        }
    }
    reaches
}

/// Function nodes in evaluation order: every node after the nodes defining its
/// inputs, ties broken by declaration order.
pub fn topo_order(net: &FunctionNetwork) -> Result<Vec<&FuncNode>, NetError> {
    let report = validate_network(net)?;
    Ok(report.topo.iter().map(|&i| &net.functions[i]).collect())
}
