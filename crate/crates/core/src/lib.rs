//! Gradients as messages: reverse-mode adjoints of scalar function networks
//! recovered by belief propagation on a lifted factor graph.
//!
//! A [`netir::FunctionNetwork`] is lifted ([`lift::lift_network`]) into a
//! factor graph with delta factors for each function, delta priors on the
//! inputs and a Boltzmann factor `exp(z / kT)` on the objective. Running
//! [`bp::run_bp`] and reading the downward messages ([`adjoint`]) yields the
//! same gradient as [`autodiff::backprop`].

pub mod adjoint;
pub mod autodiff;
pub mod bp;
pub mod cli;
pub mod lift;
pub mod netir;
pub mod num;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Network(#[from] netir::NetError),
    #[error(transparent)]
    Eval(#[from] autodiff::EvalError),
    #[error(transparent)]
    Lift(#[from] lift::LiftError),
    #[error(transparent)]
    Bp(#[from] bp::BpError),
    #[error(transparent)]
    Adjoint(#[from] adjoint::AdjointError),
    #[error("{0}")]
    Io(#[from] std::io::Error),
}
