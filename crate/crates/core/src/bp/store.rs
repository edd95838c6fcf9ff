use serde::Serialize;

use super::message::MessageValue;
use crate::lift::{FactorGraph, FactorKind, Orientation};
use crate::num::Num;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    VarToFactor,
    FactorToVar,
}

/// The current message in each direction on every edge of a factor graph.
#[derive(Debug, Clone, PartialEq)]
pub struct MessageStore {
    to_factor: Vec<MessageValue>,
    to_var: Vec<MessageValue>,
}

impl MessageStore {
    /// Every message set to [`MessageValue::Unit`].
    pub fn new(edges: usize) -> Self {
        MessageStore {
            to_factor: vec![MessageValue::Unit; edges],
            to_var: vec![MessageValue::Unit; edges],
        }
    }

    pub fn len(&self) -> usize {
        self.to_var.len()
    }

    pub fn is_empty(&self) -> bool {
        self.to_var.is_empty()
    }

    pub fn get(&self, edge: usize, dir: Direction) -> &MessageValue {
        match dir {
            Direction::VarToFactor => &self.to_factor[edge],
            Direction::FactorToVar => &self.to_var[edge],
        }
    }

    pub fn set(&mut self, edge: usize, dir: Direction, m: MessageValue) {
        match dir {
            Direction::VarToFactor => self.to_factor[edge] = m,
            Direction::FactorToVar => self.to_var[edge] = m,
        }
    }

    pub fn to_factor(&self, edge: usize) -> &MessageValue {
        &self.to_factor[edge]
    }

    pub fn to_var(&self, edge: usize) -> &MessageValue {
        &self.to_var[edge]
    }

    /// Largest [`MessageValue::change`] over all messages.
    pub fn max_change(&self, other: &MessageStore) -> f64 {
        let pairs = self.to_factor.iter().zip(&other.to_factor);
        pairs
            .chain(self.to_var.iter().zip(&other.to_var))
            .map(|(a, b)| a.change(b))
            .fold(0.0, f64::max)
    }

    /// True when every upward message is a unit, point mass or Gaussian and
    /// every downward message a unit, anchor-slope or grid message.
    pub fn directions_consistent(&self, fg: &FactorGraph) -> bool {
        (0..self.len()).all(|e| {
            let ok = |m: &MessageValue, o: Orientation| match o {
                Orientation::Up => m.is_upward_kind(),
                Orientation::Down => m.is_downward_kind(),
            };
            ok(&self.to_factor[e], fg.var_to_factor_orientation(e))
                && ok(&self.to_var[e], fg.factor_to_var_orientation(e))
        })
    }

    /// Serializable dump of every message, in edge order.
    pub fn dump<'a>(&'a self, fg: &'a FactorGraph) -> Vec<MessageRecord<'a>> {
        let mut out = Vec::with_capacity(2 * self.len());
        for (e, edge) in fg.edges().iter().enumerate() {
            let factor = &fg.factors()[edge.factor];
            let name = |v| fg.network().name(v);
            let factor_label = match &factor.kind {
                FactorKind::Function { func, .. } => {
                    format!("{}:{}", func.op.name(), name(func.output))
                }
                FactorKind::DeltaPrior { var, .. } | FactorKind::Boltzmann { var, .. } => {
                    format!("{}:{}", factor.label(), name(*var))
                }
            };
            for (dir, m, o) in [
                (
                    Direction::VarToFactor,
                    &self.to_factor[e],
                    fg.var_to_factor_orientation(e),
                ),
                (
                    Direction::FactorToVar,
                    &self.to_var[e],
                    fg.factor_to_var_orientation(e),
                ),
            ] {
                out.push(MessageRecord {
                    edge: e,
                    var: fg.network().name(edge.var),
                    factor: edge.factor,
                    factor_label: factor_label.clone(),
                    direction: dir,
                    orientation: o,
                    message: MessageView::from(m),
                });
            }
        }
        out
    }
}

#[derive(Debug, Serialize)]
pub struct MessageRecord<'a> {
    pub edge: usize,
    pub var: &'a str,
    pub factor: usize,
    pub factor_label: String,
    pub direction: Direction,
    pub orientation: Orientation,
    pub message: MessageView,
}

#[derive(Debug, Serialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum MessageView {
    Unit,
    PointMass {
        value: Num,
    },
    AnchorSlope {
        anchor: Num,
        slope: Num,
    },
    Gaussian {
        mean: Num,
        sd: Num,
    },
    GridLog {
        lo: Num,
        step: Num,
        n: usize,
        log: Vec<Num>,
    },
}

impl From<&MessageValue> for MessageView {
    fn from(m: &MessageValue) -> Self {
        match m {
            MessageValue::Unit => MessageView::Unit,
            MessageValue::PointMass { value } => MessageView::PointMass { value: Num(*value) },
            MessageValue::AnchorSlope { anchor, slope } => MessageView::AnchorSlope {
                anchor: Num(*anchor),
                slope: Num(*slope),
            },
            MessageValue::GaussianParam { mean, sd } => MessageView::Gaussian {
                mean: Num(*mean),
                sd: Num(*sd),
            },
            MessageValue::GridLog { grid, log } => MessageView::GridLog {
                lo: Num(grid.lo),
                step: Num(grid.step),
                n: grid.n,
                log: log.iter().map(|&x| Num(x)).collect(),
            },
        }
    }
}
