//! Gauss-Legendre rules on [-1, 1], cached per order.

use std::collections::HashMap;
use std::num::NonZeroUsize;
use std::sync::{Mutex, OnceLock};

use gauss_quad::GaussLegendre;

#[derive(Debug, Clone)]
pub struct Rule {
    pub nodes: Vec<f64>,
    pub weights: Vec<f64>,
}

impl Rule {
    /// Maps the reference rule onto [a, b] and calls `f(x, w)` per node.
    #[inline]
    pub fn for_each_on(&self, a: f64, b: f64, mut f: impl FnMut(f64, f64)) {
        let half = 0.5 * (b - a);
        let mid = 0.5 * (a + b);
        for (x, w) in self.nodes.iter().zip(&self.weights) {
            f(mid + half * x, half * w);
        }
    }

    pub fn integrate(&self, a: f64, b: f64, mut f: impl FnMut(f64) -> f64) -> f64 {
        let mut acc = 0.0;
        self.for_each_on(a, b, |x, w| acc += w * f(x));
        acc
    }
}

/// Returns the Gauss-Legendre rule of the given order.
pub fn gauss_legendre(order: usize) -> std::sync::Arc<Rule> {
    static CACHE: OnceLock<Mutex<HashMap<usize, std::sync::Arc<Rule>>>> = OnceLock::new();
    let order = order.max(1);
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().expect("quadrature cache poisoned");
    guard
        .entry(order)
        .or_insert_with(|| {
            let gl = GaussLegendre::new(NonZeroUsize::new(order).unwrap());
            let mut pairs: Vec<(f64, f64)> = gl.as_node_weight_pairs().to_vec();
            pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
            std::sync::Arc::new(Rule {
                nodes: pairs.iter().map(|p| p.0).collect(),
                weights: pairs.iter().map(|p| p.1).collect(),
            })
        })
        .clone()
}
