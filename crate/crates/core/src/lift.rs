//! Lifting a function network into a factor graph: each function becomes a
//! delta factor `δ(f(inputs) - output)`, each input gets a delta prior at its
//! value, and one Boltzmann factor `exp(z / kT)` sits on the objective.

use std::collections::VecDeque;

use serde_json::{json, Value};
use thiserror::Error;

use crate::bp::BpConfig;
use crate::netir::{validate_network, FuncNode, FunctionNetwork, NetError, VarId};

#[derive(Debug, Clone, PartialEq)]
pub enum FactorKind {
    /// `δ(f(inputs) - output)`; `index` is the position in the network's function list.
    Function { func: FuncNode, index: usize },
    /// `δ(var - center)`.
    DeltaPrior { var: VarId, center: f64 },
    /// `exp(var / kT)`.
    Boltzmann { var: VarId, kt: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct FactorNode {
    pub kind: FactorKind,
    /// Distinct neighbouring variables. For function factors the inputs come
    /// first (first-slot order) and the output last.
    pub neighbors: Vec<VarId>,
}

impl FactorNode {
    pub fn label(&self) -> &'static str {
        match self.kind {
            FactorKind::Function { .. } => "function",
            FactorKind::DeltaPrior { .. } => "delta_prior",
            FactorKind::Boltzmann { .. } => "boltzmann",
        }
    }
}

/// A variable/factor adjacency.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Edge {
    pub var: VarId,
    pub factor: usize,
}

/// Direction of a message relative to the network's input-to-output flow.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Orientation {
    Up,
    Down,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum LiftError {
    #[error(transparent)]
    Network(#[from] NetError),
    #[error("temperature kT must be positive and finite, got {0}")]
    BadTemperature(f64),
    #[error("unknown variable `{0}` for the experimental Boltzmann placement")]
    UnknownVariable(String),
}

/// Where the Boltzmann factor goes.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum BoltzmannPlacement {
    /// On the objective: the standard configuration.
    #[default]
    Objective,
    /// On an arbitrary variable. Exploratory; nothing is claimed about the
    /// resulting messages.
    Experimental(String),
}

#[derive(Debug, Clone)]
pub struct FactorGraph {
    net: FunctionNetwork,
    factors: Vec<FactorNode>,
    edges: Vec<Edge>,
    var_edges: Vec<Vec<usize>>,
    factor_edges: Vec<Vec<usize>>,
    defining_edge: Vec<usize>,
    topo: Vec<usize>,
    boltzmann_factor: usize,
    boltzmann_var: VarId,
}

/// Lifts a valid network with the Boltzmann factor on its objective.
pub fn lift_network(net: &FunctionNetwork, cfg: &BpConfig) -> Result<FactorGraph, LiftError> {
    lift_network_with(net, cfg, &BoltzmannPlacement::Objective)
}

pub fn lift_network_with(
    net: &FunctionNetwork,
    cfg: &BpConfig,
    placement: &BoltzmannPlacement,
) -> Result<FactorGraph, LiftError> {
    let report = validate_network(net)?;
    if !(cfg.kt > 0.0 && cfg.kt.is_finite()) {
        return Err(LiftError::BadTemperature(cfg.kt));
    }
    let boltzmann_var = match placement {
        BoltzmannPlacement::Objective => net.objective(),
        BoltzmannPlacement::Experimental(name) => net
            .var(name)
            .ok_or_else(|| LiftError::UnknownVariable(name.clone()))?,
    };

    let mut factors = Vec::with_capacity(net.functions().len() + net.inputs().len() + 1);
    for (index, f) in net.functions().iter().enumerate() {
        let mut neighbors = f.distinct_inputs();
        neighbors.push(f.output);
        factors.push(FactorNode {
            kind: FactorKind::Function {
                func: f.clone(),
                index,
            },
            neighbors,
        });
    }
    for &v in net.inputs() {
        let center = net.input_value(v).expect("validated input has a value");
        factors.push(FactorNode {
            kind: FactorKind::DeltaPrior { var: v, center },
            neighbors: vec![v],
        });
    }
    let boltzmann_factor = factors.len();
    factors.push(FactorNode {
        kind: FactorKind::Boltzmann {
            var: boltzmann_var,
            kt: cfg.kt,
        },
        neighbors: vec![boltzmann_var],
    });

    let mut edges = Vec::new();
    let mut var_edges = vec![Vec::new(); net.num_vars()];
    let mut factor_edges = vec![Vec::new(); factors.len()];
    for (fi, f) in factors.iter().enumerate() {
        for &v in &f.neighbors {
            let e = edges.len();
            edges.push(Edge { var: v, factor: fi });
            var_edges[v.0].push(e);
            factor_edges[fi].push(e);
        }
    }
    let defining_edge = net
        .vars()
        .map(|v| {
            var_edges[v.0]
                .iter()
                .copied()
                .find(|&e| match &factors[edges[e].factor].kind {
                    FactorKind::Function { func, .. } => func.output == v,
                    FactorKind::DeltaPrior { .. } => true,
                    FactorKind::Boltzmann { .. } => false,
                })
                .expect("validated variable has a definition")
        })
        .collect();

    Ok(FactorGraph {
        net: net.clone(),
        factors,
        edges,
        var_edges,
        factor_edges,
        defining_edge,
        topo: report.topo,
        boltzmann_factor,
        boltzmann_var,
    })
}

impl FactorGraph {
    pub fn network(&self) -> &FunctionNetwork {
        &self.net
    }

    pub fn num_vars(&self) -> usize {
        self.net.num_vars()
    }

    pub fn factors(&self) -> &[FactorNode] {
        &self.factors
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    /// Edge ids incident to `v`, ordered by factor index.
    pub fn var_edges(&self, v: VarId) -> &[usize] {
        &self.var_edges[v.0]
    }

    pub fn factor_edges(&self, factor: usize) -> &[usize] {
        &self.factor_edges[factor]
    }

    pub fn edge_between(&self, v: VarId, factor: usize) -> Option<usize> {
        self.var_edges[v.0]
            .iter()
            .copied()
            .find(|&e| self.edges[e].factor == factor)
    }

    /// The edge from `v` to the factor that produces it (its function or prior).
    pub fn defining_edge(&self, v: VarId) -> usize {
        self.defining_edge[v.0]
    }

    /// Function factor indices in topological order.
    pub fn topo(&self) -> &[usize] {
        &self.topo
    }

    pub fn objective(&self) -> VarId {
        self.net.objective()
    }

    pub fn boltzmann_factor(&self) -> usize {
        self.boltzmann_factor
    }

    pub fn boltzmann_var(&self) -> VarId {
        self.boltzmann_var
    }

    /// True when the Boltzmann factor was moved off the objective.
    pub fn is_experimental(&self) -> bool {
        self.boltzmann_var != self.net.objective()
    }

    pub fn prior_factors(&self) -> impl Iterator<Item = usize> + '_ {
        self.factors
            .iter()
            .enumerate()
            .filter(|(_, f)| matches!(f.kind, FactorKind::DeltaPrior { .. }))
            .map(|(i, _)| i)
    }

    /// Orientation of the variable-to-factor message on `edge`. The message
    /// toward a variable's own defining factor flows down; every other one up.
    pub fn var_to_factor_orientation(&self, edge: usize) -> Orientation {
        if self.defining_edge[self.edges[edge].var.0] == edge {
            Orientation::Down
        } else {
            Orientation::Up
        }
    }

    pub fn factor_to_var_orientation(&self, edge: usize) -> Orientation {
        match self.var_to_factor_orientation(edge) {
            Orientation::Up => Orientation::Down,
            Orientation::Down => Orientation::Up,
        }
    }

    /// Node ids for graph algorithms: variables `0..V`, factors `V..V+F`.
    fn adjacency(&self) -> Vec<Vec<usize>> {
        let nv = self.num_vars();
        let mut adj = vec![Vec::new(); nv + self.factors.len()];
        for e in &self.edges {
            adj[e.var.0].push(nv + e.factor);
            adj[nv + e.factor].push(e.var.0);
        }
        adj
    }

    /// Number of independent cycles of the bipartite graph (`E - N + components`).
    pub fn cycle_rank(&self) -> usize {
        let adj = self.adjacency();
        let mut seen = vec![false; adj.len()];
        let mut components = 0;
        for s in 0..adj.len() {
            if seen[s] {
                continue;
            }
            components += 1;
            seen[s] = true;
            let mut stack = vec![s];
            while let Some(u) = stack.pop() {
                for &w in &adj[u] {
                    if !seen[w] {
                        seen[w] = true;
                        stack.push(w);
                    }
                }
            }
        }
        self.edges.len() + components - adj.len()
    }

    /// Variables and factors lying on some cycle: what remains after repeatedly
    /// pruning nodes of degree at most one.
    pub fn loop_members(&self) -> (Vec<VarId>, Vec<usize>) {
        let adj = self.adjacency();
        let mut degree: Vec<usize> = adj.iter().map(|a| a.len()).collect();
        let mut removed = vec![false; adj.len()];
        let mut queue: VecDeque<usize> = (0..adj.len()).filter(|&u| degree[u] <= 1).collect();
        while let Some(u) = queue.pop_front() {
            if removed[u] {
                continue;
            }
            removed[u] = true;
            for &w in &adj[u] {
                if !removed[w] {
                    degree[w] -= 1;
                    if degree[w] <= 1 {
                        queue.push_back(w);
                    }
                }
            }
        }
        let nv = self.num_vars();
        let vars = (0..nv).filter(|&u| !removed[u]).map(VarId).collect();
        let factors = (nv..adj.len())
            .filter(|&u| !removed[u])
            .map(|u| u - nv)
            .collect();
        (vars, factors)
    }

    /// Longest undirected shortest-path distance, in edges.
    pub fn diameter(&self) -> usize {
        let adj = self.adjacency();
        let mut best = 0;
        for s in 0..adj.len() {
            let mut dist = vec![usize::MAX; adj.len()];
            dist[s] = 0;
            let mut queue = VecDeque::from([s]);
            while let Some(u) = queue.pop_front() {
                for &w in &adj[u] {
                    if dist[w] == usize::MAX {
                        dist[w] = dist[u] + 1;
                        queue.push_back(w);
                    }
                }
            }
            best = best.max(
                dist.into_iter()
                    .filter(|&d| d != usize::MAX)
                    .max()
                    .unwrap_or(0),
            );
        }
        best
    }

    /// Longest directed path, in edges, along the upward orientation: from a
    /// prior factor through function factors to the Boltzmann factor.
    pub fn upward_depth(&self) -> usize {
        // depth[v]: edges from the farthest prior factor to variable v.
        let mut depth = vec![0usize; self.num_vars()];
        for &v in self.net.inputs() {
            depth[v.0] = 1;
        }
        for &fi in &self.topo {
            if let FactorKind::Function { func, .. } = &self.factors[fi].kind {
                let d = func.inputs.iter().map(|v| depth[v.0]).max().unwrap_or(0);
                depth[func.output.0] = d + 2;
            }
        }
        depth[self.boltzmann_var.0] + 1
    }

    /// Debug rendering of the graph structure.
    pub fn to_json(&self) -> Value {
        let name = |v: &VarId| self.net.name(*v).to_string();
        let factors: Vec<Value> = self
            .factors
            .iter()
            .enumerate()
            .map(|(i, f)| {
                let mut obj = json!({
                    "index": i,
                    "kind": f.label(),
                    "neighbors": f.neighbors.iter().map(name).collect::<Vec<_>>(),
                });
                match &f.kind {
                    FactorKind::Function { func, .. } => {
                        obj["op"] = json!(func.op.name());
                        obj["output"] = json!(name(&func.output));
                    }
                    FactorKind::DeltaPrior { center, .. } => obj["center"] = json!(center),
                    FactorKind::Boltzmann { kt, .. } => obj["kT"] = json!(kt),
                }
                obj
            })
            .collect();
        json!({
            "variables": self.net.names(),
            "objective": name(&self.net.objective()),
            "boltzmann_on": name(&self.boltzmann_var),
            "factors": factors,
            "edges": self.edges.iter().map(|e| json!([name(&e.var), e.factor])).collect::<Vec<_>>(),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::netir::parse_network;

    const FIXTURE: &str = "input w = 2\ninput t = 1\ninput y = 3\nx = pow2(t)\nu = add(w, x)\nv = mul(x, y)\nz = mul(u, v)\nobjective z\n";

    fn lift(src: &str) -> FactorGraph {
        lift_network(&parse_network(src).unwrap(), &BpConfig::default()).unwrap()
    }

    #[test]
    fn fixture_counts() {
        let fg = lift(FIXTURE);
        assert_eq!(fg.num_vars(), 7);
        assert_eq!(fg.factors().len(), 8);
        let priors = fg.prior_factors().count();
        assert_eq!(priors, 3);
        assert!(matches!(fg.factors()[7].kind, FactorKind::Boltzmann { .. }));
        assert!(!fg.is_experimental());
    }

    #[test]
    fn fixture_has_exactly_one_loop_through_the_shared_variable() {
        let fg = lift(FIXTURE);
        assert_eq!(fg.cycle_rank(), 1);
        let (vars, factors) = fg.loop_members();
        let net = fg.network();
        let mut names: Vec<&str> = vars.iter().map(|v| net.name(*v)).collect();
        names.sort();
        assert_eq!(names, vec!["u", "v", "x"]);
        // Factors G (u = g(w, x)), H (v = h(x, y)) and F (z = f(u, v)).
        assert_eq!(factors, vec![1, 2, 3]);
    }

    #[test]
    fn identity_and_chain_counts() {
        let fg = lift("input a = 1\nobjective a");
        assert_eq!((fg.num_vars(), fg.factors().len()), (1, 2));
        for n in 1..6 {
            let mut src = String::from("input a0 = 0.5\n");
            for i in 1..=n {
                src.push_str(&format!("a{i} = sin(a{})\n", i - 1));
            }
            src.push_str(&format!("objective a{n}\n"));
            let fg = lift(&src);
            assert_eq!(fg.factors().len(), n + 2);
            assert_eq!(fg.cycle_rank(), 0);
        }
    }

    #[test]
    fn variable_degree_matches_structure() {
        let fg = lift(FIXTURE);
        let net = fg.network();
        for v in net.vars() {
            let consumers = net.consumers(v).len();
            let defined = usize::from(net.defining_function(v).is_some());
            let prior = usize::from(net.is_input(v));
            let boltz = usize::from(v == net.objective());
            assert_eq!(
                fg.var_edges(v).len(),
                consumers + defined + prior + boltz,
                "{}",
                net.name(v)
            );
        }
    }

    #[test]
    fn orientations() {
        let fg = lift(FIXTURE);
        let net = fg.network();
        let x = net.var("x").unwrap();
        // x is the output of J (factor 0) and an input of G (1) and H (2).
        assert_eq!(
            fg.var_to_factor_orientation(fg.edge_between(x, 0).unwrap()),
            Orientation::Down
        );
        assert_eq!(
            fg.var_to_factor_orientation(fg.edge_between(x, 1).unwrap()),
            Orientation::Up
        );
        let z = net.objective();
        let zb = fg.edge_between(z, fg.boltzmann_factor()).unwrap();
        assert_eq!(fg.var_to_factor_orientation(zb), Orientation::Up);
        assert_eq!(fg.factor_to_var_orientation(zb), Orientation::Down);
    }

    #[test]
    fn rejects_bad_temperature_and_unknown_placement() {
        let net = parse_network(FIXTURE).unwrap();
        let cfg = BpConfig {
            kt: 0.0,
            ..BpConfig::default()
        };
        assert!(matches!(
            lift_network(&net, &cfg),
            Err(LiftError::BadTemperature(_))
        ));
        let err = lift_network_with(
            &net,
            &BpConfig::default(),
            &BoltzmannPlacement::Experimental("nope".into()),
        );
        assert!(matches!(err, Err(LiftError::UnknownVariable(_))));
        let fg = lift_network_with(
            &net,
            &BpConfig::default(),
            &BoltzmannPlacement::Experimental("x".into()),
        )
        .unwrap();
        assert!(fg.is_experimental());
    }

    #[test]
    fn depth_and_diameter() {
        let fg = lift("input a0 = 0.5\na1 = sin(a0)\na2 = cos(a1)\nobjective a2\n");
        // P - a0 - F1 - a1 - F2 - a2 - B
        assert_eq!(fg.upward_depth(), 6);
        assert_eq!(fg.diameter(), 6);
    }
}
