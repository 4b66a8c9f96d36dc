//! Tail constants of nu_0 and omega_0, the pasted approximate stationary
//! measure gamma_hat_eps, the amplitude C_mu, and the scaling sweep that
//! checks L(eps) ~ C_mu eps^(2 alpha).

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::alpha_delta::{c_beta, AlphaReport};
use crate::chain_sim::{default_burn_in, lyapunov_mc, ChainConfig};
use crate::dist_models::DistributionModel;
use crate::error::{invalid, Error, Result};
use crate::quad::gauss_legendre;
use crate::transfer_grid::{
    fixed_point_nu, fixed_point_omega0, geomspace, l_functional, omega_y_range, triple_norm,
    triple_norm_diff, FixedPoint, HeadExtension, Operator, OperatorConfig, RoleTag, TailExtension,
    TailGrid,
};

const MODULE: &str = "dh_asymptotics";

/// Log-space rms above which a fit is rejected.
pub const FIT_RMS_THRESHOLD: f64 = 0.05;
/// Pointwise relative noise assumed for converged grids.
pub const GRID_NOISE: f64 = 1e-8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FitSide {
    /// t -> inf, basis {t^-a, t^-(a+1)}.
    Tail,
    /// sigma -> 0, basis {sigma^-a, 1}.
    Head,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub side: FitSide,
    /// Leading amplitude at exponent `alpha_used`.
    pub c: f64,
    /// Coefficient of the second basis function at `alpha_used`.
    pub subleading: f64,
    pub alpha_fit: f64,
    pub alpha_used: f64,
    pub window: (f64, f64),
    pub n_points: usize,
    pub rms_residual: f64,
    pub remainder_exponent: Option<f64>,
    /// Head fits: sigma G(sigma) decreases toward 0 on the window.
    pub origin_decreasing: Option<bool>,
    pub warnings: Vec<String>,
}

fn tail_basis(a: f64, x: f64) -> [f64; 2] {
    let p = x.powf(-a);
    [p, p / x]
}

fn tail_basis_da(a: f64, x: f64) -> [f64; 2] {
    let l = -x.ln();
    tail_basis(a, x).map(|b| l * b)
}

fn head_basis(a: f64, x: f64) -> [f64; 3] {
    let p = x.powf(-a);
    [p, 1.0, p * x]
}

fn head_basis_da(a: f64, x: f64) -> [f64; 3] {
    let l = -x.ln();
    let p = x.powf(-a);
    [l * p, 0.0, l * p * x]
}

/// Solves the small dense system `m x = r` by Gaussian elimination with
/// partial pivoting.
fn solve_small<const N: usize>(mut m: [[f64; N]; N], mut r: [f64; N]) -> Option<[f64; N]> {
    for col in 0..N {
        let piv = (col..N).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col] == 0.0 || !m[piv][col].is_finite() {
            return None;
        }
        m.swap(col, piv);
        r.swap(col, piv);
        for row in col + 1..N {
            let f = m[row][col] / m[col][col];
            let pivot_row = m[col];
            for (a, b) in m[row][col..].iter_mut().zip(&pivot_row[col..]) {
                *a -= f * b;
            }
            r[row] -= f * r[col];
        }
    }
    let mut x = [0.0; N];
    for i in (0..N).rev() {
        let s: f64 = (i + 1..N).map(|k| m[i][k] * x[k]).sum();
        x[i] = (r[i] - s) / m[i][i];
    }
    Some(x)
}

/// Relative least squares for y ~ sum c_k f_k(x); returns (c, ssr).
fn linear_fit<const K: usize>(xs: &[f64], ys: &[f64], f: impl Fn(f64) -> [f64; K]) -> Option<([f64; K], f64)> {
    let mut m = [[0.0; K]; K];
    let mut r = [0.0; K];
    for (&x, &y) in xs.iter().zip(ys) {
        let u = f(x).map(|b| b / y);
        for i in 0..K {
            for k in 0..K {
                m[i][k] += u[i] * u[k];
            }
            r[i] += u[i];
        }
    }
    // column scaling keeps the normal equations well conditioned
    let d: [f64; K] = std::array::from_fn(|i| m[i][i].sqrt().max(f64::MIN_POSITIVE));
    for i in 0..K {
        for k in 0..K {
            m[i][k] /= d[i] * d[k];
        }
        r[i] /= d[i];
    }
    let c = solve_small(m, r)?;
    let c: [f64; K] = std::array::from_fn(|i| c[i] / d[i]);
    let ssr = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let b = f(x);
            let m: f64 = (0..K).map(|k| c[k] * b[k]).sum();
            (1.0 - m / y).powi(2)
        })
        .sum();
    Some((c, ssr))
}

/// Separable fit y ~ sum c_k f_k(x; a) over `a` in [lo, hi]: grid scan,
/// golden section, then Gauss-Newton on (c, a).
fn separable_fit<const K: usize>(
    xs: &[f64],
    ys: &[f64],
    lo: f64,
    hi: f64,
    f: impl Fn(f64, f64) -> [f64; K] + Copy,
    df: impl Fn(f64, f64) -> [f64; K] + Copy,
) -> Option<(f64, [f64; K])> {
    let obj = |a: f64| linear_fit(xs, ys, |x| f(a, x)).map(|r| r.1).unwrap_or(f64::INFINITY);
    let steps = 200;
    let h = (hi - lo) / steps as f64;
    let best = (0..=steps)
        .map(|k| lo + h * k as f64)
        .min_by(|a, b| obj(*a).total_cmp(&obj(*b)))?;
    let (mut a, mut b) = ((best - h).max(lo), (best + h).min(hi));
    let g = 0.5 * (5f64.sqrt() - 1.0);
    let mut x1 = b - g * (b - a);
    let mut x2 = a + g * (b - a);
    let (mut f1, mut f2) = (obj(x1), obj(x2));
    for _ in 0..80 {
        if f1 < f2 {
            b = x2;
            x2 = x1;
            f2 = f1;
            x1 = b - g * (b - a);
            f1 = obj(x1);
        } else {
            a = x1;
            x1 = x2;
            f1 = f2;
            x2 = a + g * (b - a);
            f2 = obj(x2);
        }
    }
    let mut p = 0.5 * (a + b);
    let (mut c, mut ssr) = linear_fit(xs, ys, |x| f(p, x))?;
    // Gauss-Newton on the exponent with the amplitudes re-projected
    for _ in 0..30 {
        let (mut jj, mut jr) = (0.0, 0.0);
        for (&x, &y) in xs.iter().zip(ys) {
            let bv = f(p, x);
            let dv = df(p, x);
            let res = 1.0 - (0..K).map(|k| c[k] * bv[k]).sum::<f64>() / y;
            let j = (0..K).map(|k| c[k] * dv[k]).sum::<f64>() / y;
            jj += j * j;
            jr += j * res;
        }
        if !(jj > 0.0) {
            break;
        }
        let np = (p + jr / jj).clamp(lo, hi);
        let Some((nc, nssr)) = linear_fit(xs, ys, |x| f(np, x)) else { break };
        if !(nssr <= ssr) {
            break;
        }
        let done = (np - p).abs() <= 1e-15 * p.abs().max(1.0);
        p = np;
        c = nc;
        ssr = nssr;
        if done {
            break;
        }
    }
    Some((p, c))
}

fn window_points(g: &TailGrid, window: (f64, f64)) -> Result<(Vec<f64>, Vec<f64>)> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(invalid(MODULE, "fit window must satisfy 0 < lo < hi"));
    }
    if lo < g.first_node() || hi > g.last_node() {
        return Err(invalid(
            MODULE,
            format!(
                "fit window [{lo}, {hi}] leaves the grid [{}, {}]",
                g.first_node(),
                g.last_node()
            ),
        ));
    }
    let (xs, ys): (Vec<f64>, Vec<f64>) = g
        .nodes()
        .iter()
        .zip(g.values())
        .filter(|(x, y)| **x >= lo && **x <= hi && **y > 0.0)
        .map(|(x, y)| (*x, *y))
        .unzip();
    if xs.len() < 8 {
        return Err(invalid(MODULE, "fewer than 8 grid points with positive values in the fit window"));
    }
    Ok((xs, ys))
}

/// Free exponent and amplitudes, plus amplitudes at a pinned exponent.
struct RawFit {
    alpha_fit: f64,
    rms: f64,
    pinned: (f64, f64),
}

fn raw_fit<const K: usize>(
    xs: &[f64],
    ys: &[f64],
    anchor: Option<f64>,
    f: impl Fn(f64, f64) -> [f64; K] + Copy,
    df: impl Fn(f64, f64) -> [f64; K] + Copy,
) -> Result<RawFit> {
    let degenerate = || invalid(MODULE, "degenerate fit");
    let (alpha_fit, c) = separable_fit(xs, ys, 0.01, 1.5, f, df).ok_or_else(degenerate)?;
    let s: f64 = xs
        .iter()
        .zip(ys)
        .map(|(&x, &y)| {
            let b = f(alpha_fit, x);
            let m: f64 = (0..K).map(|k| c[k] * b[k]).sum();
            if m > 0.0 {
                (y.ln() - m.ln()).powi(2)
            } else {
                f64::INFINITY
            }
        })
        .sum();
    let rms = (s / xs.len() as f64).sqrt();
    let pinned = match anchor {
        Some(a) => linear_fit(xs, ys, |x| f(a, x)).ok_or_else(degenerate)?.0,
        None => c,
    };
    Ok(RawFit {
        alpha_fit,
        rms,
        pinned: (pinned[0], pinned[1]),
    })
}

fn fit_impl(g: &TailGrid, window: (f64, f64), anchor_alpha: Option<f64>, side: FitSide) -> Result<TailFit> {
    let (xs, ys) = window_points(g, window)?;
    let raw = match side {
        FitSide::Tail => raw_fit(&xs, &ys, anchor_alpha, tail_basis, tail_basis_da)?,
        FitSide::Head => raw_fit(&xs, &ys, anchor_alpha, head_basis, head_basis_da)?,
    };
    let (rms, alpha_fit) = (raw.rms, raw.alpha_fit);
    if !(rms <= FIT_RMS_THRESHOLD) {
        return Err(Error::FitRejected {
            rms,
            threshold: FIT_RMS_THRESHOLD,
        });
    }
    let alpha_used = anchor_alpha.unwrap_or(alpha_fit);
    let (c, subleading) = raw.pinned;
    let mut warnings = Vec::new();
    if let Some(a) = anchor_alpha {
        if (alpha_fit - a).abs() > 0.05 {
            warnings.push(format!(
                "fitted exponent {alpha_fit:.4} differs from alpha = {a:.4} by more than 0.05"
            ));
        }
    }
    let origin_decreasing = match side {
        FitSide::Head => {
            let ok = xs
                .iter()
                .zip(&ys)
                .map(|(x, y)| x * y)
                .collect::<Vec<_>>()
                .windows(2)
                .all(|w| w[0] <= w[1]);
            if !ok {
                warnings.push("sigma G(sigma) is not monotone toward the origin on the window".into());
            }
            Some(ok)
        }
        FitSide::Tail => None,
    };
    if !(c > 0.0) {
        return Err(Error::FitRejected {
            rms,
            threshold: FIT_RMS_THRESHOLD,
        });
    }
    Ok(TailFit {
        side,
        c,
        subleading,
        alpha_fit,
        alpha_used,
        window,
        n_points: xs.len(),
        rms_residual: rms,
        remainder_exponent: None,
        origin_decreasing,
        warnings,
    })
}

/// Default window [10 c_plus, t_max / 10].
pub fn default_nu0_window(g: &TailGrid, c_plus: f64) -> (f64, f64) {
    (10.0 * c_plus, g.last_node() / 10.0)
}

/// Default window [10 floor, y / 10].
pub fn default_omega0_window(g: &TailGrid, y: f64) -> (f64, f64) {
    (10.0 * g.first_node(), y / 10.0)
}

/// G_nu0(t) ~ C_nu t^-alpha as t -> inf. With `anchor_alpha` the amplitude
/// is fitted at that exponent; `alpha_fit` is always the free estimate.
pub fn fit_tail_nu0(g: &TailGrid, window: (f64, f64), anchor_alpha: Option<f64>) -> Result<TailFit> {
    fit_impl(g, window, anchor_alpha, FitSide::Tail)
}

/// G_omega0(sigma) ~ C_omega sigma^-alpha as sigma -> 0.
pub fn fit_head_omega0(g: &TailGrid, window: (f64, f64), anchor_alpha: Option<f64>) -> Result<TailFit> {
    fit_impl(g, window, anchor_alpha, FitSide::Head)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Direction {
    /// Remainder decays as x -> inf.
    Infinity,
    /// Remainder decays as x -> 0.
    Origin,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RemainderFit {
    /// delta' with relative remainder ~ x^-delta' (or x^delta' at the origin).
    pub exponent: f64,
    /// Relative remainder amplitude A in G x^alpha = C (1 + A x^-+delta').
    pub amplitude: f64,
    /// Largest relative remainder on the window.
    pub max_relative: f64,
}

/// Fits G x^alpha = C (1 + A x^-+d) on the fit window.
pub fn remainder_exponent(g: &TailGrid, fit: &TailFit, direction: Direction) -> Result<RemainderFit> {
    remainder_exponent_with_noise(g, fit, direction, GRID_NOISE)
}

pub fn remainder_exponent_with_noise(
    g: &TailGrid,
    fit: &TailFit,
    direction: Direction,
    noise: f64,
) -> Result<RemainderFit> {
    let (xs, ys) = window_points(g, fit.window)?;
    let a = fit.alpha_used;
    let zs: Vec<f64> = xs.iter().zip(&ys).map(|(x, y)| y * x.powf(a)).collect();
    let sgn = match direction {
        Direction::Infinity => -1.0,
        Direction::Origin => 1.0,
    };
    let f = move |d: f64, x: f64| [1.0, x.powf(sgn * d)];
    let df = move |d: f64, x: f64| [0.0, sgn * x.ln() * x.powf(sgn * d)];
    let (d, [c0, c1]) =
        separable_fit(&xs, &zs, 0.02, 2.0, f, df).ok_or_else(|| invalid(MODULE, "degenerate remainder fit"))?;
    let amp = c1 / c0;
    let max_rel = xs
        .iter()
        .map(|x| (amp * x.powf(sgn * d)).abs())
        .fold(0.0, f64::max);
    if !(max_rel >= 10.0 * noise) {
        return Err(Error::DegenerateRemainder(format!(
            "relative remainder {max_rel:e} below 10x grid noise {noise:e}"
        )));
    }
    Ok(RemainderFit {
        exponent: d,
        amplitude: amp,
        max_relative: max_rel,
    })
}

#[derive(Debug, Clone)]
pub struct GammaHat {
    /// Unnormalized pasted grid, lower limit mass0.
    pub grid: TailGrid,
    pub a_eps: f64,
    pub mass0: f64,
    pub epsilon: f64,
    /// (mass0 - 1) / eps^alpha.
    pub mass_defect_coefficient: f64,
    /// a(eps) G_omega0(eps) / G_nu0(1/eps).
    pub paste_ratio: f64,
}

impl GammaHat {
    /// Probability version, divided by mass0.
    pub fn normalized(&self) -> TailGrid {
        self.grid.scaled(1.0 / self.mass0)
    }
}

/// gamma_hat_eps(x) tail: a G_omega0(eps^2 x) for x >= 1/eps and
/// a G_omega0(eps) + G_nu0(x) - G_nu0(1/eps) below.
pub fn build_gamma_hat(
    model: &DistributionModel,
    eps: f64,
    fits: (&TailFit, &TailFit),
    nu0: &TailGrid,
    omega0: &TailGrid,
    grid_size: usize,
) -> Result<GammaHat> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(invalid(MODULE, "gamma_hat needs 0 < eps < 1"));
    }
    let (fit_nu, fit_om) = fits;
    let x_paste = 1.0 / eps;
    if x_paste < nu0.first_node() || x_paste > nu0.last_node() {
        return Err(Error::DomainTooNarrow(format!(
            "1/eps = {x_paste} outside the nu_0 grid [{}, {}]",
            nu0.first_node(),
            nu0.last_node()
        )));
    }
    if eps < omega0.first_node() || eps > omega0.last_node() {
        return Err(Error::DomainTooNarrow(format!(
            "eps = {eps} outside the omega_0 grid [{}, {}]",
            omega0.first_node(),
            omega0.last_node()
        )));
    }
    let alpha = fit_nu.alpha_used;
    let e2 = eps * eps;
    let a = fit_nu.c / fit_om.c * eps.powf(2.0 * alpha);
    let top = model.c_plus() / e2;
    let mut nodes = geomspace(model.c_minus(), top, grid_size.max(16));
    if !nodes.contains(&x_paste) {
        let k = nodes.partition_point(|&x| x < x_paste);
        nodes.insert(k, x_paste);
    }
    let g_om_eps = omega0.eval(eps);
    let g_nu_paste = nu0.eval(x_paste);
    let left = a * g_om_eps;
    let values: Vec<f64> = nodes
        .iter()
        .map(|&x| {
            if x >= x_paste {
                a * omega0.eval(e2 * x)
            } else {
                left + nu0.eval(x) - g_nu_paste
            }
        })
        .collect();
    let mass0 = left + nu0.at_zero() - g_nu_paste;
    let grid = TailGrid::new(
        nodes,
        values,
        mass0,
        HeadExtension::Constant,
        TailExtension::Zero,
        RoleTag::GammaHat,
    )?
    .with_epsilon(Some(eps));
    Ok(GammaHat {
        grid,
        a_eps: a,
        mass0,
        epsilon: eps,
        mass_defect_coefficient: (mass0 - 1.0) / eps.powf(alpha),
        paste_ratio: left / g_nu_paste,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CMu {
    pub c_mu: f64,
    /// int_0^inf G_omega0(sigma) / (1 + sigma) d sigma.
    pub integral: f64,
    /// Part of the integral below the grid floor, from the head fit.
    pub head_part: f64,
}

/// C_mu = (C_nu / C_omega) int log(1 + sigma) omega_0(d sigma), integrated
/// by parts.
pub fn compute_c_mu(omega0: &TailGrid, fits: (&TailFit, &TailFit)) -> Result<CMu> {
    let (fit_nu, fit_om) = fits;
    let x0 = omega0.first_node();
    if !(x0 < 1.0) {
        return Err(invalid(MODULE, "omega_0 grid floor must lie below 1"));
    }
    let (c, k, a) = (fit_om.c, fit_om.subleading, fit_om.alpha_used);
    let mut head = 0.0;
    let mut pw = x0;
    for n in 0..200 {
        let sign = if n % 2 == 0 { 1.0 } else { -1.0 };
        let nf = n as f64;
        let term = sign * (c * pw * x0.powf(-a) / (nf + 1.0 - a) + k * pw / (nf + 1.0));
        head += term;
        if term.abs() < 1e-18 * head.abs() {
            break;
        }
        pw *= x0;
    }
    let gl = gauss_legendre(8);
    let mut body = 0.0;
    for (w, v) in omega0.nodes().windows(2).zip(omega0.values().windows(2)) {
        let (u0, u1) = (w[0].ln(), w[1].ln());
        body += gl.integrate(0.0, 1.0, |s| {
            let x = (u0 + s * (u1 - u0)).exp();
            (u1 - u0) * (v[0] + (v[1] - v[0]) * s) * x / (1.0 + x)
        });
    }
    if let TailExtension::PowerLaw { .. } = omega0.tail() {
        return Err(invalid(MODULE, "omega_0 grid must have bounded support"));
    }
    let integral = head + body;
    Ok(CMu {
        c_mu: fit_nu.c / fit_om.c * integral,
        integral,
        head_part: head,
    })
}

/// |||T_eps g - g|||_beta on g's nodes.
pub fn defect_norm(g: &TailGrid, model: &DistributionModel, eps: f64, beta: f64) -> Result<f64> {
    if !(beta > 0.0 && beta < 1.0) {
        return Err(invalid(MODULE, "beta must lie in (0, 1)"));
    }
    let op = Operator::new(model, eps, crate::dist_models::OPERATOR_QUAD_ORDER);
    let tg = op.apply_t_on(g, g.nodes())?;
    triple_norm_diff(&tg, g, beta)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerGrowthReport {
    pub y: f64,
    pub k: f64,
    pub m: f64,
    pub a: f64,
    /// log m / log a.
    pub exponent: f64,
    pub nodes_checked: usize,
    /// max over nodes x < y of G(x) / (m (x/y)^-exponent).
    pub max_violation_ratio: f64,
    pub holds: bool,
}

/// Checks G(x) <= m (x/y)^(-log m / log a) at grid nodes x < y.
pub fn powergrowth_diagnostic(omega0: &TailGrid, model: &DistributionModel, y: f64, k: f64) -> Result<PowerGrowthReport> {
    let (_, y_hi) = omega_y_range(model);
    if !(y > 0.0 && y < y_hi) {
        return Err(invalid(MODULE, format!("y = {y} outside (0, {y_hi})")));
    }
    let c_plus = model.c_plus();
    let k_lo = (y + 1.0).max(0.5 * y);
    if !(k > k_lo && k < c_plus) {
        return Err(invalid(MODULE, format!("k = {k} outside ({k_lo}, {c_plus})")));
    }
    let m = 1.0 / model.tail(k);
    let a = k - y;
    let exponent = m.ln() / a.ln();
    let mut worst: f64 = 0.0;
    let mut n = 0;
    for (&x, &v) in omega0.nodes().iter().zip(omega0.values()) {
        if x >= y {
            break;
        }
        n += 1;
        let bound = m * (x / y).powf(-exponent);
        worst = worst.max(v / bound);
    }
    Ok(PowerGrowthReport {
        y,
        k,
        m,
        a,
        exponent,
        nodes_checked: n,
        max_violation_ratio: worst,
        holds: worst <= 1.0,
    })
}

/// Midpoint of the admissible k interval for a given y.
pub fn default_powergrowth_k(model: &DistributionModel, y: f64) -> f64 {
    0.5 * ((y + 1.0).max(0.5 * y) + model.c_plus())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MomentBound {
    /// Infimum of certified U: the fitted head exponent.
    pub u_min: f64,
    pub u_eval: f64,
    /// int_0^inf x^(U-1) G(x) dx at `u_eval`, head extension included.
    pub value: f64,
    /// Same integral restricted to the grid.
    pub grid_part: f64,
}

/// int_floor^inf x^(u-1) G(x) dx over the grid only.
pub fn grid_moment(g: &TailGrid, u: f64) -> Result<f64> {
    let trimmed = TailGrid::new(
        g.nodes().to_vec(),
        g.values().to_vec(),
        0.0,
        HeadExtension::Constant,
        g.tail(),
        g.role(),
    )?;
    triple_norm(&trimmed, u)
}

pub fn moment_bound_u(omega0: &TailGrid, fit: &TailFit) -> Result<MomentBound> {
    let u = fit.alpha_fit + 0.1;
    Ok(MomentBound {
        u_min: fit.alpha_fit,
        u_eval: u,
        value: triple_norm(omega0, u)?,
        grid_part: grid_moment(omega0, u)?,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DhConfig {
    pub grid_size: usize,
    pub nu_tol: f64,
    pub nu0_tol: f64,
    pub omega_tol: f64,
    /// Anchor of omega_0; default min(c_plus - 1, c_plus / 2) / 2.
    pub y: Option<f64>,
    pub max_iter: usize,
}

impl Default for DhConfig {
    fn default() -> Self {
        DhConfig {
            grid_size: 2048,
            nu_tol: 1e-9,
            nu0_tol: 1e-10,
            omega_tol: 1e-10,
            y: None,
            max_iter: 20_000,
        }
    }
}

impl DhConfig {
    pub fn y_for(&self, model: &DistributionModel) -> f64 {
        self.y.unwrap_or_else(|| 0.5 * omega_y_range(model).1)
    }

    fn op(&self, eps: f64, tol: f64) -> OperatorConfig {
        OperatorConfig {
            max_iter: self.max_iter,
            ..OperatorConfig::new(eps).with_grid(self.grid_size).with_tol(tol)
        }
    }

    pub fn nu_config(&self, eps: f64) -> OperatorConfig {
        self.op(eps, if eps > 0.0 { self.nu_tol } else { self.nu0_tol })
    }

    pub fn omega_config(&self) -> OperatorConfig {
        self.op(0.0, self.omega_tol)
    }
}

/// The eps-independent ingredients: nu_0, omega_0, their fits and C_mu.
#[derive(Debug, Clone)]
pub struct DhInputs {
    pub alpha: f64,
    pub delta: f64,
    pub y: f64,
    pub nu0: TailGrid,
    pub omega0: TailGrid,
    pub fit_nu: TailFit,
    pub fit_omega: TailFit,
    pub c_mu: CMu,
    pub warnings: Vec<String>,
}

pub fn compute_nu0(model: &DistributionModel, alpha: f64, cfg: &DhConfig) -> Result<FixedPoint> {
    fixed_point_nu(model, alpha, &cfg.nu_config(0.0))
}

pub fn compute_omega0(model: &DistributionModel, alpha: f64, cfg: &DhConfig) -> Result<FixedPoint> {
    fixed_point_omega0(model, alpha, cfg.y_for(model), &cfg.omega_config())
}

/// Fits and C_mu from already computed fixed points.
pub fn assemble_inputs(
    model: &DistributionModel,
    report: &AlphaReport,
    y: f64,
    nu0: TailGrid,
    omega0: TailGrid,
) -> Result<DhInputs> {
    let alpha = report.alpha;
    let mut fit_nu = fit_tail_nu0(&nu0, default_nu0_window(&nu0, model.c_plus()), Some(alpha))?;
    let fit_omega = fit_head_omega0(&omega0, default_omega0_window(&omega0, y), Some(alpha))?;
    let mut warnings: Vec<String> = fit_nu
        .warnings
        .iter()
        .chain(&fit_omega.warnings)
        .cloned()
        .collect();
    match remainder_exponent(&nu0, &fit_nu, Direction::Infinity) {
        Ok(r) => {
            fit_nu.remainder_exponent = Some(r.exponent);
            if r.exponent < report.delta - 0.05 {
                warnings.push(format!(
                    "remainder exponent {:.3} of nu_0 below delta - 0.05 = {:.3}",
                    r.exponent,
                    report.delta - 0.05
                ));
            }
        }
        Err(Error::DegenerateRemainder(m)) => warnings.push(format!("nu_0 remainder unresolved: {m}")),
        Err(e) => return Err(e),
    }
    let c_mu = compute_c_mu(&omega0, (&fit_nu, &fit_omega))?;
    Ok(DhInputs {
        alpha,
        delta: report.delta,
        y,
        nu0,
        omega0,
        fit_nu,
        fit_omega,
        c_mu,
        warnings,
    })
}

pub fn prepare_inputs(model: &DistributionModel, report: &AlphaReport, cfg: &DhConfig) -> Result<DhInputs> {
    let nu0 = compute_nu0(model, report.alpha, cfg)?;
    let omega0 = compute_omega0(model, report.alpha, cfg)?;
    assemble_inputs(model, report, cfg.y_for(model), nu0.grid, omega0.grid)
}

/// Monte Carlo settings of a sweep.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ChainSettings {
    /// Post-burn-in steps; 0 disables the Monte Carlo column.
    pub n_samples: u64,
    pub burn_in: Option<u64>,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case", tag = "state", content = "reason")]
pub enum RowStatus {
    Ok,
    Failed(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRow {
    pub epsilon: f64,
    pub l_mc: Option<f64>,
    pub l_mc_err: Option<f64>,
    pub l_transfer: f64,
    /// |L_N - L_{N/2}| between grid sizes N and N/2.
    pub l_transfer_err: f64,
    pub prediction: f64,
    /// L_transfer / eps^(2 alpha).
    pub amplitude: f64,
    pub relative_deviation: f64,
    pub nu_iterations: usize,
    pub nu_residual: f64,
    pub defect_norm: f64,
    /// |||nu_eps - gamma_hat|||_beta.
    pub distance_to_fixed_point: f64,
    /// c_beta * defect.
    pub distance_bound: f64,
    /// c_beta eps^(2 beta) defect.
    pub budget: f64,
    pub budget_ok: bool,
    pub a_eps: f64,
    pub mass0: f64,
    pub mass_defect_coefficient: f64,
    pub paste_ratio: f64,
    pub mc_agrees: Option<bool>,
    pub status: RowStatus,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionReport {
    pub alpha: f64,
    pub delta: f64,
    pub beta_used: f64,
    pub kappa: f64,
    pub c_beta: f64,
    pub c_nu: f64,
    pub c_omega: f64,
    pub c_mu: f64,
    pub alpha_fit_nu: f64,
    pub alpha_fit_omega: f64,
    pub remainder_exponent_nu: Option<f64>,
    pub rows: Vec<PredictionRow>,
    /// Slope of log L_transfer against log eps.
    pub fitted_global_exponent: f64,
    /// Slope of log defect against log eps.
    pub defect_exponent: f64,
    pub warnings: Vec<String>,
}

/// max(alpha / 2, alpha - delta / 2).
pub fn default_beta(alpha: f64, delta: f64) -> f64 {
    (0.5 * alpha).max(alpha - 0.5 * delta)
}

/// min(beta, beta + delta - alpha, 1 - alpha).
pub fn kappa(alpha: f64, delta: f64, beta: f64) -> f64 {
    beta.min(beta + delta - alpha).min(1.0 - alpha)
}

pub fn ols_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my = ys.iter().sum::<f64>() / n;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - mx) * (y - my)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - mx).powi(2)).sum();
    sxy / sxx
}

/// Runs every eps of the sweep and fills the prediction table.
pub fn scaling_sweep(
    model: &DistributionModel,
    inputs: &DhInputs,
    eps_list: &[f64],
    beta: Option<f64>,
    chain: &ChainSettings,
    cfg: &DhConfig,
) -> Result<PredictionReport> {
    let (alpha, delta) = (inputs.alpha, inputs.delta);
    if eps_list.is_empty() || eps_list.windows(2).any(|w| w[1] >= w[0]) {
        return Err(invalid(MODULE, "eps_list must be non-empty and strictly decreasing"));
    }
    if eps_list.iter().any(|e| !(*e > 0.0 && *e < 1.0)) {
        return Err(invalid(MODULE, "each eps must lie in (0, 1)"));
    }
    let beta = beta.unwrap_or_else(|| default_beta(alpha, delta));
    let beta_lo = (alpha - delta).max(0.0);
    if !(beta > beta_lo && beta < alpha) {
        return Err(invalid(MODULE, format!("beta = {beta} outside ({beta_lo}, {alpha})")));
    }
    let cb = c_beta(model, alpha, beta)?;
    let c_mu = inputs.c_mu.c_mu;
    let burn_in = chain.burn_in.unwrap_or_else(|| default_burn_in(model));
    let rows: Vec<PredictionRow> = eps_list
        .par_iter()
        .map(|&eps| {
            sweep_row(model, inputs, eps, beta, cb, c_mu, chain, burn_in, cfg).unwrap_or_else(|e| {
                PredictionRow::failed(eps, c_mu * eps.powf(2.0 * alpha), e.to_string())
            })
        })
        .collect();
    let ok: Vec<&PredictionRow> = rows
        .iter()
        .filter(|r| r.status == RowStatus::Ok)
        .collect();
    let lx: Vec<f64> = ok.iter().map(|r| r.epsilon.ln()).collect();
    let slope = |f: &dyn Fn(&PredictionRow) -> f64| {
        if ok.len() >= 2 {
            ols_slope(&lx, &ok.iter().map(|r| f(r).ln()).collect::<Vec<_>>())
        } else {
            f64::NAN
        }
    };
    let mut warnings = inputs.warnings.clone();
    for r in &rows {
        if let RowStatus::Failed(m) = &r.status {
            warnings.push(format!("eps = {}: {m}", r.epsilon));
        }
    }
    Ok(PredictionReport {
        alpha,
        delta,
        beta_used: beta,
        kappa: kappa(alpha, delta, beta),
        c_beta: cb,
        c_nu: inputs.fit_nu.c,
        c_omega: inputs.fit_omega.c,
        c_mu,
        alpha_fit_nu: inputs.fit_nu.alpha_fit,
        alpha_fit_omega: inputs.fit_omega.alpha_fit,
        remainder_exponent_nu: inputs.fit_nu.remainder_exponent,
        fitted_global_exponent: slope(&|r| r.l_transfer),
        defect_exponent: slope(&|r| r.defect_norm),
        rows,
        warnings,
    })
}

impl PredictionRow {
    fn failed(epsilon: f64, prediction: f64, reason: String) -> Self {
        PredictionRow {
            epsilon,
            l_mc: None,
            l_mc_err: None,
            l_transfer: f64::NAN,
            l_transfer_err: f64::NAN,
            prediction,
            amplitude: f64::NAN,
            relative_deviation: f64::NAN,
            nu_iterations: 0,
            nu_residual: f64::NAN,
            defect_norm: f64::NAN,
            distance_to_fixed_point: f64::NAN,
            distance_bound: f64::NAN,
            budget: f64::NAN,
            budget_ok: false,
            a_eps: f64::NAN,
            mass0: f64::NAN,
            mass_defect_coefficient: f64::NAN,
            paste_ratio: f64::NAN,
            mc_agrees: None,
            status: RowStatus::Failed(reason),
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep_row(
    model: &DistributionModel,
    inputs: &DhInputs,
    eps: f64,
    beta: f64,
    cb: f64,
    c_mu: f64,
    chain: &ChainSettings,
    burn_in: u64,
    cfg: &DhConfig,
) -> Result<PredictionRow> {
    let alpha = inputs.alpha;
    let nu = fixed_point_nu(model, alpha, &cfg.nu_config(eps))?;
    let coarse_cfg = cfg.nu_config(eps).with_grid(cfg.grid_size / 2);
    let nu_coarse = fixed_point_nu(model, alpha, &coarse_cfg)?;
    let l = l_functional(&nu.grid, eps);
    let l_err = (l - l_functional(&nu_coarse.grid, eps)).abs();
    let (l_mc, l_mc_err) = if chain.n_samples > 0 {
        let est = lyapunov_mc(model, &ChainConfig::with_samples(eps, burn_in, chain.n_samples, chain.seed))?;
        (Some(est.mean), Some(est.std_error))
    } else {
        (None, None)
    };
    let gh = build_gamma_hat(
        model,
        eps,
        (&inputs.fit_nu, &inputs.fit_omega),
        &inputs.nu0,
        &inputs.omega0,
        cfg.grid_size,
    )?;
    let gamma = gh.normalized();
    let defect = defect_norm(&gamma, model, eps, beta)?;
    let dist = triple_norm_diff(&nu.grid, &gamma, beta)?;
    let prediction = c_mu * eps.powf(2.0 * alpha);
    let budget = cb * eps.powf(2.0 * beta) * defect;
    let slack = l_err + 1e-12;
    let amplitude = l / eps.powf(2.0 * alpha);
    let mc_agrees = l_mc.map(|m| {
        let se = (l_mc_err.unwrap().powi(2) + l_err.powi(2)).sqrt();
        (m - l).abs() <= 4.0 * se
    });
    Ok(PredictionRow {
        epsilon: eps,
        l_mc,
        l_mc_err,
        l_transfer: l,
        l_transfer_err: l_err,
        prediction,
        amplitude,
        relative_deviation: (amplitude - c_mu).abs() / c_mu,
        nu_iterations: nu.iterations,
        nu_residual: nu.residual,
        defect_norm: defect,
        distance_to_fixed_point: dist,
        distance_bound: cb * defect,
        budget,
        budget_ok: (l - prediction).abs() <= budget + slack,
        a_eps: gh.a_eps,
        mass0: gh.mass0,
        mass_defect_coefficient: gh.mass_defect_coefficient,
        paste_ratio: gh.paste_ratio,
        mc_agrees,
        status: RowStatus::Ok,
    })
}
