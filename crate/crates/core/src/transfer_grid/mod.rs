//! Finite measures on (0, inf) stored as tail functions G(t) = nu((t, inf))
//! on log-spaced grids, the transfer operators acting on them, the weighted
//! tail norm and the Lyapunov functional.

mod fixed_point;
mod norm;
mod operators;
pub mod suites;

pub use fixed_point::{
    fixed_point_nu, fixed_point_omega0, omega_y_range, FixedPoint, OperatorConfig, NU0_T_MAX,
    OMEGA0_FLOOR,
};
pub use norm::{l_functional, triple_norm, triple_norm_diff};
pub use operators::{apply_s, apply_s_on, apply_t, apply_t_on, support_bound, Operator};

use serde::{Deserialize, Serialize};

use crate::error::{invalid, Result};

const MODULE: &str = "transfer_grid";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RoleTag {
    NuEps,
    Nu0,
    Omega0,
    GammaHat,
    Generic,
}

impl RoleTag {
    pub fn as_str(&self) -> &'static str {
        match self {
            RoleTag::NuEps => "nu_eps",
            RoleTag::Nu0 => "nu0",
            RoleTag::Omega0 => "omega0",
            RoleTag::GammaHat => "gamma_hat",
            RoleTag::Generic => "generic",
        }
    }
}

/// Extension of G below the first node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum HeadExtension {
    /// G = lower_limit on (0, nodes[0]).
    Constant,
    /// G(x) = values[0] (x / nodes[0])^(-exponent).
    PowerLaw { exponent: f64 },
}

/// Extension of G beyond the last node.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum TailExtension {
    Zero,
    /// G(x) = values[last] (x / nodes[last])^(-exponent).
    PowerLaw { exponent: f64 },
}

/// Tail function on a grid, linear in (log t, G) between nodes.
#[derive(Debug, Clone, PartialEq)]
pub struct TailGrid {
    nodes: Vec<f64>,
    values: Vec<f64>,
    lower_limit: f64,
    head: HeadExtension,
    tail: TailExtension,
    role: RoleTag,
    epsilon: Option<f64>,
    ln_nodes: Vec<f64>,
    uniform: Option<(f64, f64)>,
}

/// `n` log-spaced points from `a` to `b`, endpoints exact.
pub fn geomspace(a: f64, b: f64, n: usize) -> Vec<f64> {
    let (la, lb) = (a.ln(), b.ln());
    (0..n)
        .map(|k| {
            if k == 0 {
                a
            } else if k == n - 1 {
                b
            } else {
                (la + (lb - la) * k as f64 / (n - 1) as f64).exp()
            }
        })
        .collect()
}

impl TailGrid {
    /// For a power-law head `lower_limit` is ignored and set to values[0].
    pub fn new(
        nodes: Vec<f64>,
        values: Vec<f64>,
        lower_limit: f64,
        head: HeadExtension,
        tail: TailExtension,
        role: RoleTag,
    ) -> Result<Self> {
        if nodes.len() < 2 || nodes.len() != values.len() {
            return Err(invalid(MODULE, "a grid needs at least two nodes and one value per node"));
        }
        if !(nodes[0] > 0.0) || nodes.iter().any(|x| !x.is_finite()) {
            return Err(invalid(MODULE, "nodes must be positive and finite"));
        }
        if nodes.windows(2).any(|w| w[1] <= w[0]) {
            return Err(invalid(MODULE, "nodes must be strictly increasing"));
        }
        if values.iter().any(|v| !v.is_finite()) || !lower_limit.is_finite() {
            return Err(invalid(MODULE, "values must be finite"));
        }
        if let HeadExtension::PowerLaw { exponent } = head {
            if !(exponent.is_finite() && exponent >= 0.0) {
                return Err(invalid(MODULE, "head exponent must be non-negative"));
            }
        }
        if let TailExtension::PowerLaw { exponent } = tail {
            if !(exponent.is_finite() && exponent > 0.0) {
                return Err(invalid(MODULE, "tail exponent must be positive"));
            }
        }
        let lower_limit = match head {
            HeadExtension::Constant => lower_limit,
            HeadExtension::PowerLaw { .. } => values[0],
        };
        let ln_nodes: Vec<f64> = nodes.iter().map(|x| x.ln()).collect();
        let n = nodes.len();
        let h = (ln_nodes[n - 1] - ln_nodes[0]) / (n - 1) as f64;
        let uniform = ln_nodes
            .iter()
            .enumerate()
            .all(|(k, l)| (l - (ln_nodes[0] + h * k as f64)).abs() <= 1e-9 * h)
            .then_some((ln_nodes[0], h));
        Ok(TailGrid {
            nodes,
            values,
            lower_limit,
            head,
            tail,
            role,
            epsilon: None,
            ln_nodes,
            uniform,
        })
    }

    /// Probability-type grid: constant head, zero tail.
    pub fn probability(nodes: Vec<f64>, values: Vec<f64>, lower_limit: f64) -> Result<Self> {
        Self::new(
            nodes,
            values,
            lower_limit,
            HeadExtension::Constant,
            TailExtension::Zero,
            RoleTag::Generic,
        )
    }

    /// Unit point mass at `s0`: G = 1 on (0, s0), 0 from s0 on.
    pub fn point_mass(s0: f64, upper: f64, n: usize) -> Result<Self> {
        let nodes = geomspace(s0, upper.max(s0 * 2.0), n.max(2));
        let values = vec![0.0; nodes.len()];
        Self::probability(nodes, values, 1.0)
    }

    pub fn with_role(mut self, role: RoleTag) -> Self {
        self.role = role;
        self
    }

    pub fn with_epsilon(mut self, eps: Option<f64>) -> Self {
        self.epsilon = eps;
        self
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn lower_limit(&self) -> f64 {
        self.lower_limit
    }

    pub fn head(&self) -> HeadExtension {
        self.head
    }

    pub fn tail(&self) -> TailExtension {
        self.tail
    }

    pub fn role(&self) -> RoleTag {
        self.role
    }

    pub fn epsilon(&self) -> Option<f64> {
        self.epsilon
    }

    pub fn first_node(&self) -> f64 {
        self.nodes[0]
    }

    pub fn last_node(&self) -> f64 {
        self.nodes[self.nodes.len() - 1]
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    /// G(0+): the total mass, infinite for a power-law head.
    pub fn at_zero(&self) -> f64 {
        match self.head {
            HeadExtension::Constant => self.lower_limit,
            HeadExtension::PowerLaw { exponent } if exponent > 0.0 => f64::INFINITY,
            HeadExtension::PowerLaw { .. } => self.values[0],
        }
    }

    #[inline]
    pub fn eval(&self, x: f64) -> f64 {
        let n = self.nodes.len();
        if !(x > 0.0) {
            return self.at_zero();
        }
        if x < self.nodes[0] {
            return match self.head {
                HeadExtension::Constant => self.lower_limit,
                HeadExtension::PowerLaw { exponent } => {
                    self.values[0] * (x / self.nodes[0]).powf(-exponent)
                }
            };
        }
        if x >= self.nodes[n - 1] {
            if x == self.nodes[n - 1] {
                return self.values[n - 1];
            }
            return match self.tail {
                TailExtension::Zero => 0.0,
                TailExtension::PowerLaw { exponent } => {
                    self.values[n - 1] * (x / self.nodes[n - 1]).powf(-exponent)
                }
            };
        }
        let lx = x.ln();
        let k = match self.uniform {
            Some((l0, h)) => {
                let k = (((lx - l0) / h) as usize).min(n - 2);
                // Guard against rounding at cell edges.
                if lx < self.ln_nodes[k] {
                    k.saturating_sub(1)
                } else if lx >= self.ln_nodes[k + 1] && k + 2 < n {
                    k + 1
                } else {
                    k
                }
            }
            None => self.nodes.partition_point(|&t| t <= x) - 1,
        };
        let (l0, l1) = (self.ln_nodes[k], self.ln_nodes[k + 1]);
        let s = ((lx - l0) / (l1 - l0)).clamp(0.0, 1.0);
        self.values[k] + s * (self.values[k + 1] - self.values[k])
    }

    /// Same grid with values (and lower limit) multiplied by `c`.
    pub fn scaled(&self, c: f64) -> TailGrid {
        let mut g = self.clone();
        g.values.iter_mut().for_each(|v| *v *= c);
        g.lower_limit *= c;
        g
    }

    /// Pointwise a*self + b*other on self's nodes (same extensions).
    pub fn combine(&self, a: f64, other: &TailGrid, b: f64) -> TailGrid {
        let mut g = self.clone();
        for (v, x) in g.values.iter_mut().zip(&self.nodes) {
            *v = a * *v + b * other.eval(*x);
        }
        g.lower_limit = a * self.lower_limit + b * other.lower_limit;
        g
    }

    /// Replaces the values, keeping nodes and extensions.
    pub fn with_values(&self, values: Vec<f64>, lower_limit: f64) -> TailGrid {
        assert_eq!(values.len(), self.nodes.len());
        let mut g = self.clone();
        g.values = values;
        g.lower_limit = match g.head {
            HeadExtension::Constant => lower_limit,
            HeadExtension::PowerLaw { .. } => g.values[0],
        };
        g
    }

    /// Same grid re-evaluated on new nodes.
    pub fn resample(&self, nodes: Vec<f64>) -> Result<TailGrid> {
        let values = nodes.iter().map(|&x| self.eval(x)).collect();
        let mut g = TailGrid::new(nodes, values, self.lower_limit, self.head, self.tail, self.role)?;
        g.epsilon = self.epsilon;
        Ok(g)
    }

    pub fn is_non_increasing(&self, rel_tol: f64) -> bool {
        let scale = self
            .values
            .iter()
            .fold(self.lower_limit.abs(), |a, v| a.max(v.abs()))
            .max(f64::MIN_POSITIVE);
        let tol = rel_tol * scale;
        let head_ok = match self.head {
            HeadExtension::Constant => self.lower_limit >= self.values[0] - tol,
            HeadExtension::PowerLaw { .. } => true,
        };
        head_ok && self.values.windows(2).all(|w| w[1] <= w[0] + tol)
    }

    pub fn meta(&self, config_hash: &str) -> GridMeta {
        GridMeta {
            role_tag: self.role,
            epsilon: self.epsilon,
            lower_limit: self.lower_limit,
            head: self.head,
            tail: self.tail,
            n_nodes: self.nodes.len(),
            config_hash: config_hash.to_string(),
        }
    }

    /// `node,value` rows with 17 significant digits.
    pub fn to_csv(&self) -> String {
        let mut s = String::with_capacity(48 * self.nodes.len() + 16);
        s.push_str("node,value\n");
        for (x, v) in self.nodes.iter().zip(&self.values) {
            s.push_str(&format!("{x:.16e},{v:.16e}\n"));
        }
        s
    }

    pub fn from_csv(csv: &str, meta: &GridMeta) -> Result<TailGrid> {
        let mut nodes = Vec::new();
        let mut values = Vec::new();
        for (i, line) in csv.lines().enumerate() {
            if i == 0 || line.trim().is_empty() {
                continue;
            }
            let mut it = line.split(',');
            let parse = |s: Option<&str>| -> Result<f64> {
                s.and_then(|v| v.trim().parse().ok())
                    .ok_or_else(|| invalid(MODULE, format!("malformed grid row {}", i + 1)))
            };
            nodes.push(parse(it.next())?);
            values.push(parse(it.next())?);
        }
        let mut g = TailGrid::new(nodes, values, meta.lower_limit, meta.head, meta.tail, meta.role_tag)?;
        g.epsilon = meta.epsilon;
        Ok(g)
    }
}

/// Sidecar describing a serialized grid.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub role_tag: RoleTag,
    pub epsilon: Option<f64>,
    pub lower_limit: f64,
    pub head: HeadExtension,
    pub tail: TailExtension,
    pub n_nodes: usize,
    pub config_hash: String,
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn interpolation_is_linear_in_log() {
        let g = TailGrid::probability(vec![1.0, 10.0, 100.0], vec![1.0, 0.5, 0.0], 1.0).unwrap();
        assert!((g.eval(10f64.sqrt()) - 0.75).abs() < 1e-14);
        assert_eq!(g.eval(0.5), 1.0);
        assert_eq!(g.eval(1000.0), 0.0);
        assert_eq!(g.eval(10.0), 0.5);
    }

    #[test]
    fn uniform_and_searched_lookup_agree() {
        let nodes = geomspace(0.2, 300.0, 257);
        let values: Vec<f64> = nodes.iter().map(|x| 1.0 / (1.0 + x)).collect();
        let g = TailGrid::probability(nodes.clone(), values.clone(), 1.0).unwrap();
        assert!(g.uniform.is_some());
        let mut nodes2 = nodes.clone();
        nodes2[5] *= 1.0001;
        let vals2: Vec<f64> = nodes2.iter().map(|x| 1.0 / (1.0 + x)).collect();
        let g2 = TailGrid::probability(nodes2, vals2, 1.0).unwrap();
        assert!(g2.uniform.is_none());
        for &node in &nodes[10..250] {
            let x = node * 1.37;
            assert!((g.eval(x) - g2.eval(x)).abs() < 1e-12);
        }
        for &x in &nodes {
            assert_eq!(g.eval(x), 1.0 / (1.0 + x));
        }
    }

    #[test]
    fn csv_round_trip_is_lossless() {
        let nodes = geomspace(0.3, 7.0, 33);
        let values: Vec<f64> = nodes.iter().map(|x| (-x).exp() / 3.0).collect();
        let g = TailGrid::probability(nodes, values, 0.9).unwrap().with_epsilon(Some(0.05));
        let back = TailGrid::from_csv(&g.to_csv(), &g.meta("abc")).unwrap();
        assert_eq!(back, g);
    }
}
