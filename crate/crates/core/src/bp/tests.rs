use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use super::message::Grid;
use super::*;
use crate::lift::{lift_network, FactorGraph};
use crate::netir::{parse_network, VarId};

const FIXTURE: &str = "input w = 2\ninput t = 1\ninput y = 3\nx = pow2(t)\nu = add(w, x)\nv = mul(x, y)\nz = mul(u, v)\nobjective z\n";

// Factor indices on the fixture: J (x = pow2(t)) 0, G (u) 1, H (v) 2, F (z) 3,
// priors on w, t, y 4..=6, Boltzmann 7.
const J: usize = 0;
const G: usize = 1;
const H: usize = 2;
const F: usize = 3;
const B: usize = 7;

fn graph(src: &str, cfg: &BpConfig) -> FactorGraph {
    lift_network(&parse_network(src).unwrap(), cfg).unwrap()
}

fn var(fg: &FactorGraph, name: &str) -> VarId {
    fg.network().var(name).unwrap()
}

fn edge(fg: &FactorGraph, name: &str, factor: usize) -> usize {
    fg.edge_between(var(fg, name), factor).unwrap()
}

fn slope(m: &MessageValue) -> f64 {
    match m {
        MessageValue::AnchorSlope { slope, .. } => *slope,
        other => panic!("expected an anchor-slope message, got {other:?}"),
    }
}

fn flooding(cfg: BpConfig) -> BpConfig {
    BpConfig {
        schedule: Schedule::Flooding {
            max_iters: 100,
            tol: 1e-12,
        },
        ..cfg
    }
}

#[test]
fn config_validation() {
    assert!(BpConfig::default().validate().is_ok());
    assert!(BpConfig::grid(1e-2).validate().is_ok());
    let bad = [
        BpConfig {
            kt: -1.0,
            ..BpConfig::default()
        },
        BpConfig {
            sigma: 0.0,
            ..BpConfig::default()
        },
        BpConfig {
            grid_points: 32,
            ..BpConfig::default()
        },
        BpConfig {
            grid_points: 34,
            ..BpConfig::default()
        },
        BpConfig {
            grid_span: f64::NAN,
            ..BpConfig::default()
        },
        BpConfig {
            quad_nodes: 0,
            ..BpConfig::default()
        },
        BpConfig {
            quad_nodes: 10,
            ..BpConfig::default()
        },
        BpConfig {
            schedule: Schedule::Flooding {
                max_iters: 0,
                tol: 1e-9,
            },
            ..BpConfig::default()
        },
        BpConfig {
            schedule: Schedule::Flooding {
                max_iters: 5,
                tol: 0.0,
            },
            ..BpConfig::default()
        },
    ];
    for cfg in bad {
        assert!(cfg.validate().is_err(), "{cfg:?}");
    }
}

#[test]
fn initialization_seeds_only_the_priors() {
    let cfg = BpConfig::exact();
    let fg = graph(FIXTURE, &cfg);
    let store = initialize_messages(&fg, &cfg);
    let mut seeds = Vec::new();
    for e in 0..store.len() {
        assert!(store.to_factor(e).is_unit());
        if let MessageValue::PointMass { value } = store.to_var(e) {
            seeds.push((fg.network().name(fg.edges()[e].var).to_string(), *value));
        } else {
            assert!(store.to_var(e).is_unit());
        }
    }
    assert_eq!(
        seeds,
        vec![("w".into(), 2.0), ("t".into(), 1.0), ("y".into(), 3.0)]
    );

    let grid = BpConfig::grid(1e-3);
    let fg = graph(FIXTURE, &grid);
    let store = initialize_messages(&fg, &grid);
    assert_eq!(
        store.to_var(edge(&fg, "w", 4)),
        &MessageValue::GaussianParam {
            mean: 2.0,
            sd: 1e-3
        }
    );
}

#[test]
fn identity_network_starts_with_a_pending_boltzmann_edge() {
    let cfg = BpConfig::exact();
    let fg = graph("input a = 1\nobjective a", &cfg);
    let store = initialize_messages(&fg, &cfg);
    let b = fg
        .edge_between(var(&fg, "a"), fg.boltzmann_factor())
        .unwrap();
    assert!(store.to_var(b).is_unit() && store.to_factor(b).is_unit());
    let p = fg.defining_edge(var(&fg, "a"));
    assert_eq!(store.to_var(p), &MessageValue::PointMass { value: 1.0 });
}

#[test]
fn boltzmann_message_has_slope_one_over_kt() {
    for (kt, want) in [(1.0, 1.0), (2.0, 0.5), (0.1, 10.0)] {
        let cfg = BpConfig {
            kt,
            ..BpConfig::exact()
        };
        let fg = graph(FIXTURE, &cfg);
        let run = run_bp(&fg, &cfg).unwrap();
        assert_eq!(
            run.store.to_var(edge(&fg, "z", B)),
            &MessageValue::AnchorSlope {
                anchor: 9.0,
                slope: want
            }
        );
        // z has no other downward neighbours, so m_(z,F) is the Boltzmann message.
        assert_eq!(slope(run.store.to_factor(edge(&fg, "z", F))), want);
    }
}

#[test]
fn fixture_messages() {
    let cfg = BpConfig::exact();
    let fg = graph(FIXTURE, &cfg);
    let run = run_bp(&fg, &cfg).unwrap();
    let s = &run.store;
    // Upward through x = pow2(t) at t* = 1.
    assert_eq!(
        s.to_var(edge(&fg, "x", J)),
        &MessageValue::PointMass { value: 1.0 }
    );
    // m_(F,u): slope 1 into z times v* = 3.
    assert_eq!(
        s.to_var(edge(&fg, "u", F)),
        &MessageValue::AnchorSlope {
            anchor: 3.0,
            slope: 3.0
        }
    );
    // x collects 3 from G and 9 from H.
    assert_eq!(slope(s.to_var(edge(&fg, "x", G))), 3.0);
    assert_eq!(slope(s.to_var(edge(&fg, "x", H))), 9.0);
    assert_eq!(
        s.to_factor(edge(&fg, "x", J)),
        &MessageValue::AnchorSlope {
            anchor: 1.0,
            slope: 12.0
        }
    );
    assert_eq!(slope(s.to_factor(edge(&fg, "t", 5))), 24.0);
    assert!(s.directions_consistent(&fg));
}

#[test]
fn single_neighbour_variables_pass_messages_through() {
    for cfg in [BpConfig::exact(), BpConfig::grid(1e-2)] {
        let fg = graph("input a = 0.5\nb = sin(a)\nobjective b", &cfg);
        let run = run_bp(&fg, &cfg).unwrap();
        let a = var(&fg, "a");
        let prior = run.store.to_var(fg.defining_edge(a));
        let up = run.store.to_factor(fg.edge_between(a, 0).unwrap());
        assert_eq!(prior, up);
    }
}

#[test]
fn disagreeing_anchors_are_rejected() {
    let cfg = BpConfig::exact();
    let fg = graph(FIXTURE, &cfg);
    let mut store = run_bp(&fg, &cfg).unwrap().store;
    store.set(
        edge(&fg, "x", H),
        Direction::FactorToVar,
        MessageValue::AnchorSlope {
            anchor: 1.5,
            slope: 9.0,
        },
    );
    let err = Engine::new(&fg, &cfg)
        .var_to_factor(&store, edge(&fg, "x", J))
        .unwrap_err();
    assert!(matches!(err, BpError::AnchorMismatch { .. }), "{err:?}");
}

#[test]
fn grids_without_overlap_are_rejected() {
    let cfg = BpConfig::grid(1e-2);
    let fg = graph(FIXTURE, &cfg);
    let mut store = run_bp(&fg, &cfg).unwrap().store;
    let far = MessageValue::grid_log(Grid::centered(50.0, 1.0, 33), vec![0.0; 33]).unwrap();
    store.set(edge(&fg, "x", H), Direction::FactorToVar, far);
    let err = Engine::new(&fg, &cfg)
        .var_to_factor(&store, edge(&fg, "x", J))
        .unwrap_err();
    assert!(matches!(err, BpError::IncompatibleGrid { .. }), "{err:?}");
}

#[test]
fn missing_anchor_is_an_error_only_when_strict() {
    let cfg = BpConfig::exact();
    let fg = graph(FIXTURE, &cfg);
    let store = initialize_messages(&fg, &cfg);
    let out = edge(&fg, "x", J);
    let err = Engine::new(&fg, &cfg)
        .factor_to_var(&store, out)
        .unwrap_err();
    assert!(
        matches!(err, BpError::MissingAnchor { ref var, factor: J } if var == "t"),
        "{err:?}"
    );
    let lenient = Engine::new(&fg, &cfg).strict(false);
    assert!(lenient.factor_to_var(&store, out).unwrap().is_unit());
}

#[test]
fn grid_underflow_when_every_contribution_vanishes() {
    let cfg = BpConfig::grid(1e-2);
    let fg = graph("input a = 1\nz = log(a)\nobjective z", &cfg);
    let mut store = run_bp(&fg, &cfg).unwrap().store;
    // Move a's belief entirely onto the negative axis, where log is undefined.
    let neg = MessageValue::GaussianParam {
        mean: -5.0,
        sd: 0.1,
    };
    let a_def = fg.defining_edge(var(&fg, "a"));
    let a_f = edge(&fg, "a", 0);
    store.set(a_def, Direction::FactorToVar, neg.clone());
    store.set(a_f, Direction::VarToFactor, neg);
    let err = Engine::new(&fg, &cfg)
        .factor_to_var(&store, a_f)
        .unwrap_err();
    assert!(matches!(err, BpError::GridUnderflow { .. }), "{err:?}");
}

#[test]
fn domain_error_in_a_factor_is_reported() {
    let cfg = BpConfig::exact();
    let fg = graph("input a = 1\nz = log(a)\nobjective z", &cfg);
    let mut store = initialize_messages(&fg, &cfg);
    store.set(
        edge(&fg, "a", 0),
        Direction::VarToFactor,
        MessageValue::PointMass { value: -1.0 },
    );
    let err = Engine::new(&fg, &cfg)
        .factor_to_var(&store, edge(&fg, "z", 0))
        .unwrap_err();
    assert!(matches!(err, BpError::Domain { factor: 0, .. }), "{err:?}");
}

/// Sample standard deviation of `f(N(mean, sd²))`.
fn monte_carlo_sd(f: impl Fn(f64) -> f64, mean: f64, sd: f64, n: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let normal = Normal::new(mean, sd).unwrap();
    let ys: Vec<f64> = (0..n).map(|_| f(normal.sample(&mut rng))).collect();
    let m = ys.iter().sum::<f64>() / n as f64;
    (ys.iter().map(|y| (y - m).powi(2)).sum::<f64>() / (n - 1) as f64).sqrt()
}

#[test]
fn gaussian_pushforward_matches_sampling() {
    let cfg = BpConfig::grid(1e-3);
    let fg = graph(FIXTURE, &cfg);
    let run = run_bp(&fg, &cfg).unwrap();
    let MessageValue::GaussianParam { mean, sd } = run.store.to_var(edge(&fg, "x", J)) else {
        panic!("upward grid message should be Gaussian");
    };
    assert_eq!(*mean, 1.0);
    let mc = monte_carlo_sd(|t| t * t, 1.0, 1e-3, 100_000, 11);
    assert!((sd - mc).abs() <= 0.1 * mc, "{sd} vs {mc}");
    assert!((sd - 2e-3).abs() < 1e-12);
}

#[test]
fn zero_slope_pushforward_falls_back_to_sampling() {
    let cfg = BpConfig::grid(1e-2);
    let fg = graph("input t = 0\nx = pow2(t)\nobjective x", &cfg);
    let run = run_bp(&fg, &cfg).unwrap();
    let MessageValue::GaussianParam { sd, .. } = run.store.to_var(edge(&fg, "x", 0)) else {
        panic!("upward grid message should be Gaussian");
    };
    // t² with t ~ N(0, σ²) has standard deviation √2 σ².
    let want = 2f64.sqrt() * 1e-4;
    assert!((sd - want).abs() < 0.05 * want, "{sd} vs {want}");
    let again = run_bp(&fg, &cfg).unwrap();
    assert_eq!(run.store, again.store);
}

#[test]
fn two_pass_is_a_fixed_point() {
    let cfg = BpConfig::exact();
    let fg = graph(FIXTURE, &cfg);
    let run = run_bp(&fg, &cfg).unwrap();
    assert!(run.converged);
    assert_eq!(run.iterations, 2);
    let mut store = run.store.clone();
    assert_eq!(upward_sweep(&fg, &cfg, &mut store).unwrap(), 0.0);
    assert_eq!(downward_sweep(&fg, &cfg, &mut store).unwrap(), 0.0);
    assert_eq!(store, run.store);
}

#[test]
fn flooding_reaches_the_two_pass_messages() {
    let cfg = BpConfig::exact();
    let fg = graph(FIXTURE, &cfg);
    let two = run_bp(&fg, &cfg).unwrap();
    let flood = run_bp(&fg, &flooding(cfg)).unwrap();
    assert!(flood.converged);
    assert_eq!(flood.residual, Some(0.0));
    assert_eq!(flood.store.max_change(&two.store), 0.0);
}

#[test]
fn identity_network_round_counts() {
    let cfg = BpConfig::exact();
    let fg = graph("input a = 1\nobjective a", &cfg);
    let two = run_bp(&fg, &cfg).unwrap();
    assert_eq!(two.iterations, 2);
    let flood = run_bp(&fg, &flooding(cfg)).unwrap();
    // Boltzmann to a, then a to its prior, then a round that changes nothing.
    assert_eq!(flood.iterations, 3);
    assert_eq!(flood.store, two.store);
}

#[test]
fn flooding_reports_non_convergence() {
    let cfg = BpConfig {
        schedule: Schedule::Flooding {
            max_iters: 1,
            tol: 1e-12,
        },
        ..BpConfig::exact()
    };
    let fg = graph(FIXTURE, &cfg);
    let run = run_bp(&fg, &cfg).unwrap();
    assert!(!run.converged);
    assert_eq!(run.iterations, 1);
    assert!(run.residual.unwrap() >= 1e-12);
}

#[test]
fn every_flooding_round_respects_message_directions() {
    for cfg in [BpConfig::exact(), BpConfig::grid(1e-2)] {
        let fg = graph(FIXTURE, &cfg);
        let mut store = initialize_messages(&fg, &cfg);
        assert!(store.directions_consistent(&fg));
        for _ in 0..12 {
            flooding_round(&fg, &cfg, &mut store).unwrap();
            assert!(store.directions_consistent(&fg));
        }
    }
}

#[test]
fn exact_posteriors_are_the_forward_values() {
    let cfg = BpConfig::exact();
    let fg = graph(FIXTURE, &cfg);
    let run = run_bp(&fg, &cfg).unwrap();
    for (name, value) in [("x", 1.0), ("z", 9.0), ("u", 3.0), ("t", 1.0)] {
        let post = compute_posterior(&fg, &cfg, &run.store, var(&fg, name)).unwrap();
        assert_eq!(post, MessageValue::PointMass { value }, "{name}");
    }
}

fn grid_mean(m: &MessageValue) -> f64 {
    let MessageValue::GridLog { grid, log } = m else {
        panic!("expected a grid message");
    };
    let (mean, _) = super::message::moments(grid, log);
    mean
}

#[test]
fn grid_posterior_is_shifted_by_sigma_squared_times_adjoint() {
    let cfg = BpConfig::grid(1e-2);
    let fg = graph("input x = 1.5\nz = scale3(x)\nobjective z", &cfg);
    let run = run_bp(&fg, &cfg).unwrap();
    let post = compute_posterior(&fg, &cfg, &run.store, var(&fg, "x")).unwrap();
    let shift = grid_mean(&post) - 1.5;
    let want = 3.0 * 1e-4;
    assert!((shift - want).abs() <= 0.05 * want, "{shift}");
    // z itself: N(4.5, (3σ)²) times exp(z) shifts by (3σ)².
    let post = compute_posterior(&fg, &cfg, &run.store, var(&fg, "z")).unwrap();
    assert!((grid_mean(&post) - 4.5 - 9e-4).abs() < 0.05 * 9e-4);
}

#[test]
fn message_dump_lists_both_directions_of_every_edge() {
    let cfg = BpConfig::exact();
    let fg = graph(FIXTURE, &cfg);
    let run = run_bp(&fg, &cfg).unwrap();
    let dump = run.store.dump(&fg);
    assert_eq!(dump.len(), 2 * fg.edges().len());
    let json = serde_json::to_string(&dump).unwrap();
    let parsed: serde_json::Value = serde_json::from_str(&json).unwrap();
    assert_eq!(parsed.as_array().unwrap().len(), dump.len());
    assert!(json.contains("\"slope\":2.4000000000000000e1"), "{json}");
}
