//! The fixed primitive operator set and its evaluation / partial-derivative table.

use std::fmt;

use thiserror::Error;

/// A primitive scalar operation usable as a function node.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Primitive {
    Add,
    Sub,
    Mul,
    Div,
    Neg,
    /// `x^c` for a fixed real exponent `c`.
    PowConst(f64),
    /// `c * x` for a fixed real constant `c`.
    Scale(f64),
    Exp,
    Log,
    Sin,
    Cos,
    Tanh,
}

/// Raised when a primitive is applied outside of its domain.
#[derive(Debug, Clone, PartialEq, Error)]
#[error("{op}: {reason}")]
pub struct DomainError {
    pub op: Primitive,
    pub reason: &'static str,
}

impl Primitive {
    /// Every primitive name accepted by the DSL, for diagnostics.
    pub const NAMES: &'static [&'static str] = &[
        "add", "sub", "mul", "div", "neg", "pow<c>", "scale<c>", "exp", "log", "sin", "cos", "tanh",
    ];

    /// Looks up a primitive by its DSL spelling. Parameterized primitives carry
    /// their constant in the name: `pow2`, `pow0.5`, `scale-3`.
    pub fn from_name(name: &str) -> Option<Primitive> {
        let p = match name {
            "add" => Primitive::Add,
            "sub" => Primitive::Sub,
            "mul" => Primitive::Mul,
            "div" => Primitive::Div,
            "neg" => Primitive::Neg,
            "exp" => Primitive::Exp,
            "log" => Primitive::Log,
            "sin" => Primitive::Sin,
            "cos" => Primitive::Cos,
            "tanh" => Primitive::Tanh,
            _ => {
                if let Some(c) = name.strip_prefix("pow") {
                    return parse_constant(c).map(Primitive::PowConst);
                }
                if let Some(c) = name.strip_prefix("scale") {
                    return parse_constant(c).map(Primitive::Scale);
                }
                return None;
            }
        };
        Some(p)
    }

    pub fn arity(&self) -> usize {
        match self {
            Primitive::Add | Primitive::Sub | Primitive::Mul | Primitive::Div => 2,
            _ => 1,
        }
    }

    /// Applies the primitive. `args.len()` must equal [`Primitive::arity`].
    pub fn eval(&self, args: &[f64]) -> Result<f64, DomainError> {
        debug_assert_eq!(args.len(), self.arity());
        let err = |reason| DomainError { op: *self, reason };
        let x = args[0];
        let v = match *self {
            Primitive::Add => x + args[1],
            Primitive::Sub => x - args[1],
            Primitive::Mul => x * args[1],
            Primitive::Div => {
                if args[1] == 0.0 {
                    return Err(err("division by zero"));
                }
                x / args[1]
            }
            Primitive::Neg => -x,
            Primitive::PowConst(c) => {
                if x < 0.0 && c.fract() != 0.0 {
                    return Err(err("negative base with non-integer exponent"));
                }
                if x == 0.0 && c < 1.0 && c != 0.0 {
                    return Err(err("zero base with exponent below one"));
                }
                x.powf(c)
            }
            Primitive::Scale(c) => c * x,
            Primitive::Exp => x.exp(),
            Primitive::Log => {
                if x <= 0.0 {
                    return Err(err("logarithm of a non-positive value"));
                }
                x.ln()
            }
            Primitive::Sin => x.sin(),
            Primitive::Cos => x.cos(),
            Primitive::Tanh => x.tanh(),
        };
        Ok(v)
    }

    /// Evaluates without domain checks; out-of-domain points give NaN or infinities.
    /// Used where a vanishing contribution is the right answer (grid tabulation).
    pub fn eval_unchecked(&self, args: &[f64]) -> f64 {
        self.eval(args).unwrap_or(f64::NAN)
    }

    /// Partial derivative with respect to input slot `slot`, at `args`.
    pub fn partial(&self, slot: usize, args: &[f64]) -> f64 {
        debug_assert!(slot < self.arity());
        let x = args[0];
        match *self {
            Primitive::Add => 1.0,
            Primitive::Sub => {
                if slot == 0 {
                    1.0
                } else {
                    -1.0
                }
            }
            Primitive::Mul => args[1 - slot],
            Primitive::Div => {
                let y = args[1];
                if slot == 0 {
                    1.0 / y
                } else {
                    -x / (y * y)
                }
            }
            Primitive::Neg => -1.0,
            Primitive::PowConst(c) => {
                if c == 0.0 {
                    0.0
                } else {
                    c * x.powf(c - 1.0)
                }
            }
            Primitive::Scale(c) => c,
            Primitive::Exp => x.exp(),
            Primitive::Log => 1.0 / x,
            Primitive::Sin => x.cos(),
            Primitive::Cos => -x.sin(),
            Primitive::Tanh => {
                let t = x.tanh();
                1.0 - t * t
            }
        }
    }

    /// DSL spelling, inverse of [`Primitive::from_name`].
    pub fn name(&self) -> String {
        match self {
            Primitive::Add => "add".into(),
            Primitive::Sub => "sub".into(),
            Primitive::Mul => "mul".into(),
            Primitive::Div => "div".into(),
            Primitive::Neg => "neg".into(),
            Primitive::PowConst(c) => format!("pow{c}"),
            Primitive::Scale(c) => format!("scale{c}"),
            Primitive::Exp => "exp".into(),
            Primitive::Log => "log".into(),
            Primitive::Sin => "sin".into(),
            Primitive::Cos => "cos".into(),
            Primitive::Tanh => "tanh".into(),
        }
    }
}

fn parse_constant(s: &str) -> Option<f64> {
    if s.is_empty() {
        return None;
    }
    s.parse::<f64>().ok().filter(|c| c.is_finite())
}

impl fmt::Display for Primitive {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.name())
    }
}
