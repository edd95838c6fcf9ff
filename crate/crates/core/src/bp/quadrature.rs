use std::f64::consts::PI;

/// Gauss-Hermite rule rescaled for expectations under a standard normal:
/// `E[f(Z)] ≈ Σ weights[i] · f(nodes[i])`, weights summing to one.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussHermite {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl GaussHermite {
    /// `n` nodes, `n >= 1`. A single node is the mean with weight one.
    pub fn new(n: usize) -> Self {
        assert!(n >= 1, "at least one quadrature node");
        if n == 1 {
            return GaussHermite {
                nodes: vec![0.0],
                weights: vec![1.0],
            };
        }
        let rule = gauss_quad::hermite::GaussHermite::new(n).expect("n >= 2");
        let mut pairs: Vec<(f64, f64)> = rule
            .as_node_weight_pairs()
            .iter()
            .map(|&(x, w)| (x * 2f64.sqrt(), w / PI.sqrt()))
            .collect();
        pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
        let (nodes, weights) = pairs.into_iter().unzip();
        GaussHermite { nodes, weights }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// `E[f(X)]` for `X ~ N(mean, sd²)`.
    pub fn expect(&self, mean: f64, sd: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(|(z, w)| w * f(mean + sd * z))
            .sum()
    }
}
