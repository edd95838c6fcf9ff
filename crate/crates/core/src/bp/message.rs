/// Log-density value standing in for zero. Close to the smallest exponent an
/// `f64` can represent, so `exp(LOG_FLOOR)` is still a positive subnormal.
pub const LOG_FLOOR: f64 = -745.0;

/// Uniform grid `lo, lo + step, ..., lo + (n - 1) step`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Grid {
    pub lo: f64,
    pub step: f64,
    pub n: usize,
}

impl Grid {
    /// `n` points spanning `center ± half_width`.
    pub fn centered(center: f64, half_width: f64, n: usize) -> Self {
        debug_assert!(n >= 2 && half_width > 0.0);
        Grid {
            lo: center - half_width,
            step: 2.0 * half_width / (n - 1) as f64,
            n,
        }
    }

    pub fn hi(&self) -> f64 {
        self.lo + self.step * (self.n - 1) as f64
    }

    pub fn point(&self, i: usize) -> f64 {
        self.lo + self.step * i as f64
    }

    pub fn points(&self) -> impl Iterator<Item = f64> + '_ {
        (0..self.n).map(|i| self.point(i))
    }

    pub fn overlaps(&self, other: &Grid) -> bool {
        self.lo <= other.hi() && other.lo <= self.hi()
    }

    /// Trapezoid weights.
    pub fn trapezoid(&self) -> Vec<f64> {
        let mut w = vec![self.step; self.n];
        w[0] *= 0.5;
        w[self.n - 1] *= 0.5;
        w
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum MessageValue {
    /// The constant function one: nothing has been sent yet, or the sender
    /// carries no information.
    Unit,
    /// Upward, exact mode: `δ(x - value)`.
    PointMass { value: f64 },
    /// Downward, exact mode: the message known only through its log-slope at
    /// the anchor point.
    AnchorSlope { anchor: f64, slope: f64 },
    /// Upward, grid mode.
    GaussianParam { mean: f64, sd: f64 },
    /// Downward, grid mode: log-density on a grid, normalized to maximum zero.
    GridLog { grid: Grid, log: Vec<f64> },
}

impl MessageValue {
    pub fn kind(&self) -> &'static str {
        match self {
            MessageValue::Unit => "unit",
            MessageValue::PointMass { .. } => "point_mass",
            MessageValue::AnchorSlope { .. } => "anchor_slope",
            MessageValue::GaussianParam { .. } => "gaussian",
            MessageValue::GridLog { .. } => "grid_log",
        }
    }

    pub fn is_unit(&self) -> bool {
        matches!(self, MessageValue::Unit)
    }

    /// Representations allowed on upward messages.
    pub fn is_upward_kind(&self) -> bool {
        matches!(
            self,
            MessageValue::Unit
                | MessageValue::PointMass { .. }
                | MessageValue::GaussianParam { .. }
        )
    }

    /// Representations allowed on downward messages.
    pub fn is_downward_kind(&self) -> bool {
        matches!(
            self,
            MessageValue::Unit | MessageValue::AnchorSlope { .. } | MessageValue::GridLog { .. }
        )
    }

    /// Builds a grid message from raw log values: non-finite entries are
    /// floored and the maximum shifted to zero. `None` when nothing is finite.
    pub fn grid_log(grid: Grid, mut log: Vec<f64>) -> Option<Self> {
        let max = log
            .iter()
            .copied()
            .filter(|x| x.is_finite())
            .fold(f64::NEG_INFINITY, f64::max);
        if !max.is_finite() {
            return None;
        }
        for x in &mut log {
            *x = if x.is_finite() {
                (*x - max).max(LOG_FLOOR)
            } else {
                LOG_FLOOR
            };
        }
        Some(MessageValue::GridLog { grid, log })
    }

    /// Largest component-wise difference. Different representations, or
    /// grid messages on non-overlapping grids, are infinitely far apart.
    pub fn change(&self, other: &MessageValue) -> f64 {
        use MessageValue::*;
        match (self, other) {
            (Unit, Unit) => 0.0,
            (PointMass { value: a }, PointMass { value: b }) => (a - b).abs(),
            (
                AnchorSlope {
                    anchor: a,
                    slope: s,
                },
                AnchorSlope {
                    anchor: b,
                    slope: t,
                },
            ) => (a - b).abs().max((s - t).abs()),
            (GaussianParam { mean: a, sd: s }, GaussianParam { mean: b, sd: t }) => {
                (a - b).abs().max((s - t).abs())
            }
            (GridLog { grid: ga, log: la }, GridLog { grid: gb, log: lb }) => {
                if ga == gb {
                    la.iter()
                        .zip(lb)
                        .map(|(a, b)| (a - b).abs())
                        .fold(0.0, f64::max)
                } else if ga.overlaps(gb) {
                    let moved = (ga.lo - gb.lo).abs().max((ga.step - gb.step).abs());
                    let diff = ga
                        .points()
                        .zip(la)
                        .map(|(x, a)| (a - interpolate(gb, lb, x)).abs())
                        .fold(0.0, f64::max);
                    moved.max(diff)
                } else {
                    f64::INFINITY
                }
            }
            _ => f64::INFINITY,
        }
    }
}

/// Linear interpolation of tabulated values; outside the grid the end
/// segment's slope is continued.
pub fn interpolate(grid: &Grid, values: &[f64], x: f64) -> f64 {
    let t = (x - grid.lo) / grid.step;
    let i = (t.floor().max(0.0) as usize).min(grid.n - 2);
    let frac = t - i as f64;
    values[i] + frac * (values[i + 1] - values[i])
}

/// Mean and standard deviation of the density `exp(log)` on `grid`.
pub fn moments(grid: &Grid, log: &[f64]) -> (f64, f64) {
    let w = grid.trapezoid();
    let (mut z, mut m1) = (0.0, 0.0);
    for ((x, l), w) in grid.points().zip(log).zip(&w) {
        let p = w * l.exp();
        z += p;
        m1 += p * x;
    }
    let mean = m1 / z;
    let var: f64 = grid
        .points()
        .zip(log)
        .zip(&w)
        .map(|((x, l), w)| w * l.exp() * (x - mean).powi(2))
        .sum::<f64>()
        / z;
    (mean, var.sqrt())
}

/// `log N(x; mean, sd²)` without the normalizing constant.
pub fn gaussian_log(x: f64, mean: f64, sd: f64) -> f64 {
    let d = (x - mean) / sd;
    -0.5 * d * d
}
