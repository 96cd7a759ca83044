//! Gauss–Legendre rules on `[0, 1]` for the θ-integrals that appear in
//! Taylor remainders.

use gauss_quad::GaussLegendre;

use crate::error::{Error, Result};

/// Default order for θ-integrals.
pub const DEFAULT_ORDER: usize = 16;

/// Nodes and weights of an `order`-point Gauss–Legendre rule on `[0, 1]`.
#[derive(Debug, Clone)]
pub struct UnitRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

impl UnitRule {
    pub fn new(order: usize) -> Result<Self> {
        match order {
            0 => Err(Error::domain("quadrature order must be at least 1")),
            // the one-point rule is the midpoint rule
            1 => Ok(Self {
                nodes: vec![0.5],
                weights: vec![1.0],
            }),
            _ => {
                let rule = GaussLegendre::new(order)
                    .map_err(|_| Error::domain(format!("invalid quadrature order {order}")))?;
                let (nodes, weights) = rule.iter().map(|(x, w)| (0.5 * (x + 1.0), 0.5 * w)).unzip();
                Ok(Self { nodes, weights })
            }
        }
    }

    pub fn order(&self) -> usize {
        self.nodes.len()
    }

    pub fn iter(&self) -> impl Iterator<Item = (f64, f64)> + '_ {
        self.nodes.iter().copied().zip(self.weights.iter().copied())
    }

    pub fn integrate(&self, mut f: impl FnMut(f64) -> f64) -> f64 {
        self.iter().map(|(t, w)| w * f(t)).sum()
    }
}
