#![allow(dead_code)]

use lifted_bp::netir::random::{random_network, Profile};
use lifted_bp::netir::{parse_network, FunctionNetwork, VarId};

pub const FIXTURE: &str = "\
input w = 2
input t = 1
input y = 3
x = pow2(t)
u = add(w, x)
v = mul(x, y)
z = mul(u, v)
objective z
";

pub const LINEAR: &str = "input x = 1.5\nz = scale3(x)\nobjective z\n";

pub fn fixture() -> FunctionNetwork {
    parse_network(FIXTURE).unwrap()
}

pub fn linear() -> FunctionNetwork {
    parse_network(LINEAR).unwrap()
}

/// The fixture plus 500 random domain-safe networks with 0..=20 function nodes.
pub fn corpus() -> Vec<(String, FunctionNetwork)> {
    let mut out = vec![("fixture".to_string(), fixture())];
    for seed in 0..500u64 {
        let n = (seed % 21) as usize;
        out.push((
            format!("random(n={n}, seed={seed})"),
            random_network(n, seed, Profile::General),
        ));
    }
    out
}

/// Twenty random networks built only from primitives smooth on all of R.
/// Each has an input whose own gradient is curved (non-zero third
/// derivative). Without one, Gaussian smoothing of the gradient is exact at
/// every width and an error ladder over widths measures only rounding.
pub fn smooth_corpus() -> Vec<(String, FunctionNetwork)> {
    let mut out = Vec::new();
    let mut seed = 1000u64;
    while out.len() < 20 {
        let n = 2 + (seed % 7) as usize;
        let net = random_network(n, seed, Profile::Smooth);
        if has_curved_gradient(&net) {
            out.push((format!("smooth(n={n}, seed={seed})"), net));
        }
        seed += 1;
    }
    out
}

fn has_curved_gradient(net: &FunctionNetwork) -> bool {
    let g0 = forward_mode_adjoints(net);
    net.inputs().iter().any(|&v| {
        let x = net.input_value(v).unwrap();
        let gp = forward_mode_adjoints(&net.with_input_value(v, x + 0.05))[v.0];
        let gm = forward_mode_adjoints(&net.with_input_value(v, x - 0.05))[v.0];
        (gp - 2.0 * g0[v.0] + gm).abs() > 1e-6 * g0[v.0].abs().max(1.0)
    })
}

fn forward_values(net: &FunctionNetwork) -> Vec<f64> {
    let mut vals = vec![f64::NAN; net.num_vars()];
    for (&v, &x) in net.input_values() {
        vals[v.0] = x;
    }
    let mut done = vec![false; net.functions().len()];
    while done.iter().any(|d| !d) {
        for (i, f) in net.functions().iter().enumerate() {
            if !done[i] && f.inputs.iter().all(|v| !vals[v.0].is_nan()) {
                let a: Vec<f64> = f.inputs.iter().map(|v| vals[v.0]).collect();
                vals[f.output.0] = f.op.eval(&a).unwrap();
                done[i] = true;
            }
        }
    }
    vals
}

/// `dz/dv` for every variable `v` by forward-mode tangents: `v` is treated
/// as a free variable with tangent one, its own definition ignored, and the
/// tangent is pushed to the objective through every downstream node. Shares
/// nothing with the reverse sweep except the primitive partial table.
pub fn forward_mode_adjoints(net: &FunctionNetwork) -> Vec<f64> {
    let vals = forward_values(net);
    let z = net.objective();
    net.vars()
        .map(|seed| {
            let affected = downstream(net, seed);
            let mut tan: Vec<Option<f64>> = vec![None; net.num_vars()];
            tan[seed.0] = Some(1.0);
            loop {
                let mut progress = false;
                for f in net.functions() {
                    if f.output == seed || tan[f.output.0].is_some() {
                        continue;
                    }
                    let touched = f.inputs.iter().any(|v| tan[v.0].is_some());
                    let ready = f
                        .inputs
                        .iter()
                        .all(|v| tan[v.0].is_some() || !affected[v.0]);
                    if touched && ready {
                        let a: Vec<f64> = f.inputs.iter().map(|v| vals[v.0]).collect();
                        let t = f
                            .inputs
                            .iter()
                            .enumerate()
                            .map(|(slot, v)| tan[v.0].unwrap_or(0.0) * f.op.partial(slot, &a))
                            .sum();
                        tan[f.output.0] = Some(t);
                        progress = true;
                    }
                }
                if !progress {
                    break;
                }
            }
            tan[z.0].unwrap_or(0.0)
        })
        .collect()
}

/// Variables reachable from `seed` along input-to-output edges, `seed` included.
fn downstream(net: &FunctionNetwork, seed: VarId) -> Vec<bool> {
    let mut hit = vec![false; net.num_vars()];
    hit[seed.0] = true;
    loop {
        let mut progress = false;
        for f in net.functions() {
            if !hit[f.output.0] && f.inputs.iter().any(|v| hit[v.0]) {
                hit[f.output.0] = true;
                progress = true;
            }
        }
        if !progress {
            return hit;
        }
    }
}

pub fn relative(a: f64, b: f64) -> f64 {
    (a - b).abs() / b.abs().max(1.0)
}
