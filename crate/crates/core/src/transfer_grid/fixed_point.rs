use serde::{Deserialize, Serialize};

use super::operators::{support_bound_c, Operator};
use super::{geomspace, triple_norm_diff, HeadExtension, RoleTag, TailExtension, TailGrid, MODULE};
use crate::dist_models::{DistributionModel, OPERATOR_QUAD_ORDER};
use crate::error::{invalid, Error, Result};

/// Upper end of the truncated domain of nu_0.
pub const NU0_T_MAX: f64 = 1e10;
/// Lower end of the truncated domain of omega_0.
pub const OMEGA0_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OperatorConfig {
    pub epsilon: f64,
    pub grid_size: usize,
    /// (t_min, t_max); chosen from the target measure when absent.
    pub domain: Option<(f64, f64)>,
    pub quad_order: usize,
    pub tol: f64,
    pub max_iter: usize,
}

impl OperatorConfig {
    pub fn new(epsilon: f64) -> Self {
        OperatorConfig {
            epsilon,
            grid_size: 2048,
            domain: None,
            quad_order: OPERATOR_QUAD_ORDER,
            tol: 1e-9,
            max_iter: 20_000,
        }
    }

    pub fn with_grid(mut self, n: usize) -> Self {
        self.grid_size = n;
        self
    }

    pub fn with_tol(mut self, tol: f64) -> Self {
        self.tol = tol;
        self
    }

    fn validate(&self) -> Result<()> {
        if self.grid_size < 16 {
            return Err(invalid(MODULE, "grid_size must be at least 16"));
        }
        if !(self.tol > 0.0) || self.max_iter == 0 || self.quad_order < 2 {
            return Err(invalid(MODULE, "tol, max_iter and quad_order must be positive"));
        }
        if let Some((a, b)) = self.domain {
            if !(a > 0.0 && b > a && b.is_finite()) {
                return Err(invalid(MODULE, "domain must satisfy 0 < t_min < t_max < inf"));
            }
        }
        if !(self.epsilon >= 0.0 && self.epsilon < 1.0) {
            return Err(invalid(MODULE, "epsilon must lie in [0, 1)"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone)]
pub struct FixedPoint {
    pub grid: TailGrid,
    pub iterations: usize,
    /// |||T G - G|||_beta_ref of the previous iterate.
    pub residual: f64,
    pub beta_ref: f64,
    pub residual_history: Vec<f64>,
    /// Mass carried by the tail extension beyond the truncated domain.
    pub truncation_mass: f64,
}

/// Stationary law of the s-chain: nu_eps for eps > 0, nu_0 for eps = 0.
pub fn fixed_point_nu(model: &DistributionModel, alpha: f64, cfg: &OperatorConfig) -> Result<FixedPoint> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(MODULE, "alpha must lie in (0, 1)"));
    }
    let eps = cfg.epsilon;
    let c_minus = model.c_minus();
    let bound = if eps > 0.0 {
        Some(support_bound_c(model.c_plus(), eps)?)
    } else {
        None
    };
    let (t_min, t_max) = cfg.domain.unwrap_or((c_minus, bound.unwrap_or(NU0_T_MAX)));
    if let Some(b) = bound {
        if t_max < b * (1.0 - 1e-12) {
            return Err(invalid(MODULE, format!("t_max = {t_max} below the support bound {b}")));
        }
    } else if t_max <= 10.0 * model.c_plus() {
        return Err(invalid(MODULE, "t_max too small for the power-law tail of nu_0"));
    }
    let nodes = geomspace(t_min, t_max, cfg.grid_size);
    let tail = if eps > 0.0 {
        TailExtension::Zero
    } else {
        TailExtension::PowerLaw { exponent: alpha }
    };
    let init: Vec<f64> = nodes
        .iter()
        .map(|&t| match bound {
            Some(b) if t >= b => 0.0,
            _ => (t / c_minus).powf(-alpha).min(1.0),
        })
        .collect();
    let role = if eps > 0.0 { RoleTag::NuEps } else { RoleTag::Nu0 };
    let mut g = TailGrid::new(nodes.clone(), init, 1.0, HeadExtension::Constant, tail, role)?
        .with_epsilon(Some(eps));
    let op = Operator::new(model, eps, cfg.quad_order);
    let beta = 0.5 * alpha;
    let mut history = Vec::new();
    for it in 1..=cfg.max_iter {
        let next = op.apply_t_on(&g, &nodes)?;
        let mut values = next.values().to_vec();
        if let Some(b) = bound {
            for (v, &t) in values.iter_mut().zip(&nodes) {
                if t >= b {
                    *v = 0.0;
                }
            }
        }
        let next = next.with_values(values, 1.0);
        let r = triple_norm_diff(&next, &g, beta)?;
        history.push(r);
        g = next;
        if r <= cfg.tol {
            let truncation_mass = match tail {
                TailExtension::Zero => 0.0,
                TailExtension::PowerLaw { .. } => g.values()[g.len() - 1],
            };
            return Ok(FixedPoint {
                grid: g,
                iterations: it,
                residual: r,
                beta_ref: beta,
                residual_history: history,
                truncation_mass,
            });
        }
    }
    Err(Error::NoConvergence {
        module: MODULE,
        iterations: cfg.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Admissible interval (0, min(c_plus - 1, c_plus / 2)) for the anchor y.
pub fn omega_y_range(model: &DistributionModel) -> (f64, f64) {
    let c = model.c_plus();
    (0.0, (c - 1.0).min(0.5 * c))
}

/// Infinite S_0-invariant measure omega_0, normalized by G(y) = 1.
pub fn fixed_point_omega0(
    model: &DistributionModel,
    alpha: f64,
    y: f64,
    cfg: &OperatorConfig,
) -> Result<FixedPoint> {
    cfg.validate()?;
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(invalid(MODULE, "alpha must lie in (0, 1)"));
    }
    let (_, y_hi) = omega_y_range(model);
    if !(y > 0.0 && y < y_hi) {
        return Err(invalid(MODULE, format!("y = {y} outside (0, {y_hi})")));
    }
    let c_plus = model.c_plus();
    let (floor, top) = cfg.domain.unwrap_or((OMEGA0_FLOOR, c_plus));
    if !(floor < y && top >= c_plus) {
        return Err(invalid(MODULE, "omega_0 domain must contain y and reach c_plus"));
    }
    let nodes = anchored_nodes(floor, top, y, cfg.grid_size);
    let init: Vec<f64> = nodes
        .iter()
        .map(|&s| if s >= c_plus { 0.0 } else { (s / y).powf(-alpha) })
        .collect();
    let mut g = TailGrid::new(
        nodes.clone(),
        init,
        0.0,
        HeadExtension::PowerLaw { exponent: alpha },
        TailExtension::Zero,
        RoleTag::Omega0,
    )?
    .with_epsilon(Some(0.0));
    let k_y = nodes.iter().position(|&s| s == y).expect("anchor node present");
    let op = Operator::new(model, 0.0, cfg.quad_order);
    let beta = 0.5 * (1.0 + alpha);
    let mut history = Vec::new();
    for it in 1..=cfg.max_iter {
        let next = op.apply_s_on(&g, &nodes)?;
        let scale = next.values()[k_y];
        if !(scale > 0.0 && scale.is_finite()) {
            return Err(Error::NoConvergence {
                module: MODULE,
                iterations: it,
                residual: f64::NAN,
            });
        }
        let values: Vec<f64> = next
            .values()
            .iter()
            .zip(&nodes)
            .map(|(v, &s)| if s >= c_plus { 0.0 } else { v / scale })
            .collect();
        let next = next.with_values(values, 0.0);
        let r = triple_norm_diff(&next, &g, beta)?;
        history.push(r);
        g = next;
        if r <= cfg.tol {
            return Ok(FixedPoint {
                grid: g,
                iterations: it,
                residual: r,
                beta_ref: beta,
                residual_history: history,
                truncation_mass: 0.0,
            });
        }
    }
    Err(Error::NoConvergence {
        module: MODULE,
        iterations: cfg.max_iter,
        residual: history.last().copied().unwrap_or(f64::NAN),
    })
}

/// Log-uniform nodes with `y` as an exact node, covering [floor, top].
fn anchored_nodes(floor: f64, top: f64, y: f64, n: usize) -> Vec<f64> {
    let h = (top / floor).ln() / (n - 1) as f64;
    let k_y = ((y / floor).ln() / h).floor() as i64;
    (0..n as i64)
        .map(|k| if k == k_y { y } else { y * (h * (k - k_y) as f64).exp() })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn anchored_nodes_cover_the_domain() {
        let n = anchored_nodes(1e-8, 3.0, 0.75, 512);
        assert!(n[0] >= 1e-8 && n[511] >= 3.0);
        assert!(n.contains(&0.75));
        assert!(n.windows(2).all(|w| w[1] > w[0]));
    }
}
