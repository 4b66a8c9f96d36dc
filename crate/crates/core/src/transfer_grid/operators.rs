use std::sync::Arc;

use rayon::prelude::*;

use super::{HeadExtension, TailExtension, TailGrid, MODULE};
use crate::chain_sim::{g_map, h_map};
use crate::dist_models::{DistributionModel, OPERATOR_QUAD_ORDER};
use crate::error::{invalid, Result};
use crate::quad::{gauss_legendre, Rule};

/// Upper edge b_eps of the support of nu_eps: the positive root of
/// b = c_plus g_eps(b).
pub fn support_bound(model: &DistributionModel, eps: f64) -> Result<f64> {
    support_bound_c(model.c_plus(), eps)
}

pub(crate) fn support_bound_c(c_plus: f64, eps: f64) -> Result<f64> {
    if eps == 0.0 || !(eps.abs() < 1.0) {
        return Err(invalid(MODULE, "support bound needs 0 < |eps| < 1"));
    }
    let e2 = eps * eps;
    let k = c_plus - 1.0;
    let disc = (k * k + 4.0 * e2 * c_plus).sqrt();
    Ok(if k >= 0.0 {
        (k + disc) / (2.0 * e2)
    } else {
        2.0 * c_plus / (disc - k)
    })
}

/// T_eps and S_eps in tail form, with a cached Gauss-Legendre rule against mu.
#[derive(Debug, Clone)]
pub struct Operator<'a> {
    model: &'a DistributionModel,
    eps: f64,
    gl: Arc<Rule>,
    t: Vec<f64>,
    w: Vec<f64>,
    pieces: Vec<(f64, f64)>,
    mass: f64,
}

impl<'a> Operator<'a> {
    pub fn new(model: &'a DistributionModel, eps: f64, order: usize) -> Self {
        let (t, w) = model.rule(order, f64::INFINITY);
        let mass = w.iter().sum();
        Operator {
            model,
            eps,
            gl: gauss_legendre(order),
            t,
            w,
            pieces: model.piece_bounds(),
            mass,
        }
    }

    pub fn epsilon(&self) -> f64 {
        self.eps
    }

    pub fn model(&self) -> &DistributionModel {
        self.model
    }

    /// Integral of f against mu, with the rule split at `cuts` where the
    /// integrand jumps.
    fn integrate(&self, cuts: &[f64], f: impl Fn(f64) -> f64) -> f64 {
        let order = self.gl.nodes.len();
        let mut acc = 0.0;
        for (k, &(lo, hi)) in self.pieces.iter().enumerate() {
            let mut inner: Vec<f64> = cuts.iter().copied().filter(|&c| c > lo && c < hi).collect();
            if inner.is_empty() {
                let r = k * order..(k + 1) * order;
                for (t, w) in self.t[r.clone()].iter().zip(&self.w[r]) {
                    acc += w * f(*t);
                }
                continue;
            }
            inner.sort_by(f64::total_cmp);
            let mut a = lo;
            for b in inner.into_iter().chain(std::iter::once(hi)) {
                self.gl.for_each_on(a, b, |t, w| acc += w * self.model.density(t) * f(t));
                a = b;
            }
        }
        acc
    }

    fn cuts(g: &TailGrid, map: impl Fn(f64) -> f64, x: f64) -> Vec<f64> {
        let mut cuts = Vec::new();
        if g.head() == HeadExtension::Constant && g.lower_limit() != g.values()[0] {
            cuts.push(x / map(g.first_node()));
        }
        let last = g.values()[g.len() - 1];
        if g.tail() == TailExtension::Zero && last != 0.0 {
            cuts.push(x / map(g.last_node()));
        }
        cuts
    }

    /// G_{T nu}(tau) = int G_nu(g^{-1}(tau / t)) mu(dt), the integrand being
    /// the total mass where tau / t <= 1 and zero where tau / t >= 1/eps^2.
    pub fn t_value(&self, g: &TailGrid, tau: f64) -> f64 {
        let e2 = self.eps * self.eps;
        let mass = g.at_zero();
        let cuts = Self::cuts(g, |s| g_map(self.eps, s), tau);
        self.integrate(&cuts, |t| {
            let y = tau / t;
            if y <= 1.0 {
                mass
            } else if e2 * y >= 1.0 {
                0.0
            } else {
                g.eval((y - 1.0) / (1.0 - e2 * y))
            }
        })
    }

    /// G_{S omega}(sigma) = int G_omega(h^{-1}(sigma / t)) mu(dt), zero where
    /// sigma / t >= 1.
    pub fn s_value(&self, g: &TailGrid, sigma: f64) -> f64 {
        let e2 = self.eps * self.eps;
        let mass = g.at_zero();
        let cuts = Self::cuts(g, |s| h_map(self.eps, s), sigma);
        self.integrate(&cuts, |t| {
            let y = sigma / t;
            if y >= 1.0 {
                0.0
            } else if y <= e2 {
                mass
            } else {
                g.eval((y - e2) / (1.0 - y))
            }
        })
    }

    fn finish(&self, g: &TailGrid, nodes: Vec<f64>, values: Vec<f64>) -> Result<TailGrid> {
        let lower = match g.head() {
            HeadExtension::Constant => g.lower_limit() * self.mass,
            HeadExtension::PowerLaw { .. } => values[0],
        };
        let out = TailGrid::new(nodes, values, lower, g.head(), g.tail(), g.role())?
            .with_epsilon(Some(self.eps));
        if cfg!(debug_assertions) && g.is_non_increasing(0.0) {
            debug_assert!(out.is_non_increasing(1e-10), "operator broke monotonicity");
        }
        Ok(out)
    }

    pub fn apply_t_on(&self, g: &TailGrid, nodes: &[f64]) -> Result<TailGrid> {
        let values = nodes.par_iter().map(|&x| self.t_value(g, x)).collect();
        self.finish(g, nodes.to_vec(), values)
    }

    pub fn apply_s_on(&self, g: &TailGrid, nodes: &[f64]) -> Result<TailGrid> {
        let values = nodes.par_iter().map(|&x| self.s_value(g, x)).collect();
        self.finish(g, nodes.to_vec(), values)
    }

    /// T applied on g's nodes, extended so the image support is covered.
    pub fn apply_t(&self, g: &TailGrid) -> Result<TailGrid> {
        let upper = match g.tail() {
            TailExtension::Zero => self.model.c_plus() * g_map(self.eps, g.last_node()),
            TailExtension::PowerLaw { .. } => g.last_node(),
        };
        let lower = match g.head() {
            HeadExtension::Constant => self.model.c_minus(),
            HeadExtension::PowerLaw { .. } => g.first_node(),
        };
        self.apply_t_on(g, &extended_nodes(g, lower, upper))
    }

    /// S applied on g's nodes, extended so the image support is covered.
    pub fn apply_s(&self, g: &TailGrid) -> Result<TailGrid> {
        let upper = match g.tail() {
            TailExtension::Zero => self.model.c_plus() * h_map(self.eps, g.last_node()),
            TailExtension::PowerLaw { .. } => g.last_node(),
        };
        let lower = match g.head() {
            HeadExtension::Constant if self.eps != 0.0 => self.model.c_minus() * self.eps * self.eps,
            _ => g.first_node(),
        };
        self.apply_s_on(g, &extended_nodes(g, lower, upper))
    }
}

/// g's nodes, continued with the same mean log spacing down to `lower`
/// and up to `upper`.
fn extended_nodes(g: &TailGrid, lower: f64, upper: f64) -> Vec<f64> {
    let nodes = g.nodes();
    let n = nodes.len();
    let h = (nodes[n - 1] / nodes[0]).ln() / (n - 1) as f64;
    let mut below = Vec::new();
    let mut x = nodes[0];
    while x > lower * (1.0 + 1e-12) {
        x = (x.ln() - h).exp().max(lower);
        below.push(x);
    }
    below.reverse();
    let mut out = below;
    out.extend_from_slice(nodes);
    let mut x = nodes[n - 1];
    while x < upper * (1.0 - 1e-12) {
        x = (x.ln() + h).exp().min(upper);
        out.push(x);
    }
    out
}

pub fn apply_t(g: &TailGrid, model: &DistributionModel, eps: f64) -> Result<TailGrid> {
    Operator::new(model, eps, OPERATOR_QUAD_ORDER).apply_t(g)
}

pub fn apply_s(g: &TailGrid, model: &DistributionModel, eps: f64) -> Result<TailGrid> {
    Operator::new(model, eps, OPERATOR_QUAD_ORDER).apply_s(g)
}

pub fn apply_t_on(g: &TailGrid, model: &DistributionModel, eps: f64, nodes: &[f64]) -> Result<TailGrid> {
    Operator::new(model, eps, OPERATOR_QUAD_ORDER).apply_t_on(g, nodes)
}

pub fn apply_s_on(g: &TailGrid, model: &DistributionModel, eps: f64, nodes: &[f64]) -> Result<TailGrid> {
    Operator::new(model, eps, OPERATOR_QUAD_ORDER).apply_s_on(g, nodes)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn support_bound_closed_form() {
        let b = support_bound_c(3.0, 0.1).unwrap();
        assert!((b - (2.0 + 4.12f64.sqrt()) / 0.02).abs() < 1e-10);
        assert!((3.0 * g_map(0.1, b) - b).abs() < 1e-10 * b);
    }

    #[test]
    fn extension_reaches_bounds() {
        let g = TailGrid::probability(vec![1.0, 2.0, 4.0], vec![1.0, 0.5, 0.0], 1.0).unwrap();
        let n = extended_nodes(&g, 0.3, 20.0);
        assert_eq!(*n.first().unwrap(), 0.3);
        assert_eq!(*n.last().unwrap(), 20.0);
        assert!(n.windows(2).all(|w| w[1] > w[0]));
    }
}
