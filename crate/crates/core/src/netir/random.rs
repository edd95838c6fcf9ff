//! Seeded generator of valid, domain-safe random networks.
//!
//! Inputs are drawn from [0.5, 2.0]. Every candidate node is evaluated as it is
//! drawn and rejected unless its value and partials stay moderate and its
//! argument keeps a margin from any singularity, so finite differences and
//! narrow-Gaussian perturbations of the inputs stay inside the domain.

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::{FuncNode, FunctionNetwork, Primitive, VarId};

/// Which primitives the generator may draw.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    /// The full primitive set, with log/div/fractional powers kept away from
    /// their singularities.
    General,
    /// Only primitives that are smooth on the whole real line.
    Smooth,
}

const GENERAL_OPS: &[Primitive] = &[
    Primitive::Add,
    Primitive::Sub,
    Primitive::Mul,
    Primitive::Div,
    Primitive::Neg,
    Primitive::PowConst(2.0),
    Primitive::PowConst(3.0),
    Primitive::PowConst(0.5),
    Primitive::PowConst(-1.0),
    Primitive::Scale(-2.0),
    Primitive::Scale(0.5),
    Primitive::Exp,
    Primitive::Log,
    Primitive::Sin,
    Primitive::Cos,
    Primitive::Tanh,
];

const SMOOTH_OPS: &[Primitive] = &[
    Primitive::Add,
    Primitive::Sub,
    Primitive::Mul,
    Primitive::Neg,
    Primitive::PowConst(2.0),
    Primitive::Scale(1.5),
    Primitive::Exp,
    Primitive::Sin,
    Primitive::Cos,
    Primitive::Tanh,
];

const MAX_VALUE: f64 = 8.0;
const MAX_PARTIAL: f64 = 4.0;
const ATTEMPTS: usize = 64;

fn acceptable(op: Primitive, args: &[f64]) -> bool {
    let Ok(v) = op.eval(args) else {
        return false;
    };
    if !v.is_finite() || v.abs() > MAX_VALUE {
        return false;
    }
    let margin_ok = match op {
        Primitive::Log => args[0] >= 0.4,
        Primitive::Div => args[1].abs() >= 0.5,
        Primitive::PowConst(c) if c.fract() != 0.0 || c < 0.0 => args[0] >= 0.4,
        Primitive::Exp => args[0] <= 1.5,
        _ => true,
    };
    margin_ok
        && (0..op.arity()).all(|s| {
            let p = op.partial(s, args);
            p.is_finite() && p.abs() <= MAX_PARTIAL
        })
}

/// Generates a valid network with exactly `functions` function nodes.
/// Identical `(functions, seed, profile)` always give the identical network.
pub fn random_network(functions: usize, seed: u64, profile: Profile) -> FunctionNetwork {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let ops = match profile {
        Profile::General => GENERAL_OPS,
        Profile::Smooth => SMOOTH_OPS,
    };
    let n_inputs = rng.random_range(1..=4usize);
    let mut names = Vec::new();
    let mut values = Vec::new();
    let mut inputs = Vec::new();
    let mut input_values = BTreeMap::new();
    for i in 0..n_inputs {
        let v = VarId(i);
        let x: f64 = rng.random_range(0.5..=2.0);
        names.push(format!("x{i}"));
        values.push(x);
        inputs.push(v);
        input_values.insert(v, x);
    }

    let mut nodes = Vec::with_capacity(functions);
    for k in 0..functions {
        let avail = values.len();
        let mut chosen = None;
        for _ in 0..ATTEMPTS {
            let op = ops[rng.random_range(0..ops.len())];
            let args: Vec<usize> = (0..op.arity())
                .map(|_| {
                    // Favour recent variables so networks grow deep, but keep
                    // every earlier variable reachable to create fan-out.
                    if rng.random_bool(0.6) {
                        avail - 1 - rng.random_range(0..avail.min(3))
                    } else {
                        rng.random_range(0..avail)
                    }
                })
                .collect();
            let arg_vals: Vec<f64> = args.iter().map(|&a| values[a]).collect();
            if acceptable(op, &arg_vals) {
                chosen = Some((op, args, arg_vals));
                break;
            }
        }
        let (op, args, arg_vals) =
            chosen.unwrap_or_else(|| (Primitive::Sin, vec![avail - 1], vec![values[avail - 1]]));
        let out = VarId(avail);
        names.push(format!("v{k}"));
        values.push(op.eval(&arg_vals).expect("accepted node evaluates"));
        nodes.push(FuncNode {
            output: out,
            op,
            inputs: args.into_iter().map(VarId).collect(),
        });
    }
    let objective = VarId(names.len() - 1);
    FunctionNetwork::from_parts(names, nodes, inputs, input_values, objective)
}
