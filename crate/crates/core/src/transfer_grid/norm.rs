use super::{HeadExtension, TailExtension, TailGrid};
use crate::error::{Error, Result};
use crate::quad::gauss_legendre;

/// G on one segment between consecutive breakpoints.
#[derive(Debug, Clone, Copy)]
enum Form {
    /// Linear in log x, with the values at the segment ends.
    Lin(f64, f64),
    /// c x^(-p).
    Pow(f64, f64),
}

impl Form {
    fn at(&self, x: f64, s: f64) -> f64 {
        match *self {
            Form::Lin(a, b) => a + (b - a) * s,
            Form::Pow(c, p) => c * x.powf(-p),
        }
    }
}

fn form_on(g: &TailGrid, x0: f64, x1: f64) -> Form {
    if x1 <= g.first_node() {
        return match g.head() {
            HeadExtension::Constant => Form::Lin(g.lower_limit(), g.lower_limit()),
            HeadExtension::PowerLaw { exponent } => {
                Form::Pow(g.values()[0] * g.first_node().powf(exponent), exponent)
            }
        };
    }
    if x0 >= g.last_node() {
        return match g.tail() {
            TailExtension::Zero => Form::Lin(0.0, 0.0),
            TailExtension::PowerLaw { exponent } => {
                Form::Pow(g.values()[g.len() - 1] * g.last_node().powf(exponent), exponent)
            }
        };
    }
    Form::Lin(g.eval(x0), g.eval(x1))
}

fn head_terms(g: &TailGrid) -> (f64, f64) {
    match g.head() {
        HeadExtension::Constant => (g.lower_limit(), 0.0),
        HeadExtension::PowerLaw { exponent } => {
            (g.values()[0] * g.first_node().powf(exponent), exponent)
        }
    }
}

fn tail_terms(g: &TailGrid) -> (f64, f64) {
    match g.tail() {
        TailExtension::Zero => (0.0, 1.0),
        TailExtension::PowerLaw { exponent } => {
            (g.values()[g.len() - 1] * g.last_node().powf(exponent), exponent)
        }
    }
}

/// int_0^1 e^{z s} ds
fn phi1(z: f64) -> f64 {
    if z.abs() < 0.1 {
        // sum z^k / (k + 1)!
        let (mut term, mut sum) = (1.0, 1.0);
        for k in 1..14 {
            term *= z / (k + 1) as f64;
            sum += term;
        }
        sum
    } else {
        z.exp_m1() / z
    }
}

/// int_0^1 s e^{z s} ds
fn phi2(z: f64) -> f64 {
    if z.abs() < 0.1 {
        // sum z^k / (k! (k + 2))
        let (mut fact, mut sum) = (1.0, 0.5);
        for k in 1..14 {
            fact *= z / k as f64;
            sum += fact / (k + 2) as f64;
        }
        sum
    } else {
        (z.exp() * (z - 1.0) + 1.0) / (z * z)
    }
}

/// int_{u0}^{u1} e^{beta u} |d0 + (d1 - d0)(u - u0)/(u1 - u0)| du.
fn lin_abs(u0: f64, u1: f64, d0: f64, d1: f64, beta: f64) -> f64 {
    let signed = |ua: f64, ub: f64, da: f64, db: f64| {
        let h = ub - ua;
        let z = beta * h;
        h * (beta * ua).exp() * (da * phi1(z) + (db - da) * phi2(z))
    };
    if d0 == 0.0 && d1 == 0.0 {
        return 0.0;
    }
    if (d0 > 0.0 && d1 < 0.0) || (d0 < 0.0 && d1 > 0.0) {
        let s = d0 / (d0 - d1);
        let um = u0 + s * (u1 - u0);
        signed(u0, um, d0, 0.0).abs() + signed(um, u1, 0.0, d1).abs()
    } else {
        signed(u0, u1, d0, d1).abs()
    }
}

/// int_a^b x^{beta-1} |sum c_i x^{-p_i}| dx for at most two terms; `a` may
/// be 0 and `b` infinite.
fn power_abs(terms: &[(f64, f64)], a: f64, b: f64, beta: f64) -> Result<f64> {
    let mut t: Vec<(f64, f64)> = Vec::new();
    for &(c, p) in terms {
        if c == 0.0 {
            continue;
        }
        match t.iter_mut().find(|(_, q)| *q == p) {
            Some(e) => e.0 += c,
            None => t.push((c, p)),
        }
    }
    t.retain(|(c, _)| *c != 0.0);
    for &(_, p) in &t {
        let ok = (a > 0.0 || beta > p) && (b.is_finite() || beta < p) && beta != p;
        if !ok {
            return Err(Error::Divergent(format!(
                "int x^(beta-1) x^(-{p}) dx over ({a}, {b}) diverges at beta = {beta}"
            )));
        }
    }
    let prim = |x: f64| -> f64 {
        t.iter()
            .map(|&(c, p)| {
                let e = beta - p;
                if x == 0.0 || x.is_infinite() {
                    0.0
                } else {
                    c * x.powf(e) / e
                }
            })
            .sum()
    };
    let mut cuts = vec![a];
    if let [(c1, p1), (c2, p2)] = t[..] {
        let r = -c2 / c1;
        if r > 0.0 {
            let xs = r.powf(1.0 / (p2 - p1));
            if xs > a && xs < b {
                cuts.push(xs);
            }
        }
    }
    cuts.push(b);
    Ok(cuts.windows(2).map(|w| (prim(w[1]) - prim(w[0])).abs()).sum())
}

fn merged_breakpoints(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut out = Vec::with_capacity(a.len() + b.len());
    let (mut i, mut j) = (0, 0);
    while i < a.len() || j < b.len() {
        let next = if j >= b.len() || (i < a.len() && a[i] <= b[j]) {
            i += 1;
            a[i - 1]
        } else {
            j += 1;
            b[j - 1]
        };
        if out.last() != Some(&next) {
            out.push(next);
        }
    }
    out
}

/// |||a - b|||_beta = int_0^inf tau^(beta-1) |G_a - G_b| d tau, exact for
/// grids linear in log tau and closed-form on the extensions.
pub fn triple_norm_diff(a: &TailGrid, b: &TailGrid, beta: f64) -> Result<f64> {
    norm_impl(a, Some(b), beta)
}

/// |||G|||_beta of a single grid.
pub fn triple_norm(g: &TailGrid, beta: f64) -> Result<f64> {
    norm_impl(g, None, beta)
}

fn norm_impl(a: &TailGrid, b: Option<&TailGrid>, beta: f64) -> Result<f64> {
    if !(beta < 1.0) || !beta.is_finite() {
        return Err(crate::error::invalid(super::MODULE, "beta must be below 1"));
    }
    let bp = match b {
        Some(b) => merged_breakpoints(a.nodes(), b.nodes()),
        None => a.nodes().to_vec(),
    };
    let (ha, hb) = (head_terms(a), b.map(head_terms).unwrap_or((0.0, 0.0)));
    let (ta, tb) = (tail_terms(a), b.map(tail_terms).unwrap_or((0.0, 1.0)));
    let x_lo = bp[0];
    let x_hi = bp[bp.len() - 1];
    let mut total = power_abs(&[ha, (-hb.0, hb.1)], 0.0, x_lo, beta)?;
    total += power_abs(&[ta, (-tb.0, tb.1)], x_hi, f64::INFINITY, beta)?;
    let gl = gauss_legendre(32);
    for w in bp.windows(2) {
        let (x0, x1) = (w[0], w[1]);
        let fa = form_on(a, x0, x1);
        let fb = b.map(|b| form_on(b, x0, x1)).unwrap_or(Form::Lin(0.0, 0.0));
        let (u0, u1) = (x0.ln(), x1.ln());
        total += match (fa, fb) {
            (Form::Lin(a0, a1), Form::Lin(b0, b1)) => lin_abs(u0, u1, a0 - b0, a1 - b1, beta),
            _ => gl.integrate(0.0, 1.0, |s| {
                let u = u0 + s * (u1 - u0);
                let x = u.exp();
                (u1 - u0) * (beta * u).exp() * (fa.at(x, s) - fb.at(x, s)).abs()
            }),
        };
    }
    Ok(total)
}

/// L_eps[nu] = eps^2 int_0^inf G(x) / (1 + eps^2 x) dx.
pub fn l_functional(g: &TailGrid, eps: f64) -> f64 {
    let e2 = eps * eps;
    if e2 == 0.0 {
        return 0.0;
    }
    let kernel = |x: f64| e2 * x / (1.0 + e2 * x);
    let x0 = g.first_node();
    let mut total = match g.head() {
        HeadExtension::Constant => g.lower_limit() * (e2 * x0).ln_1p(),
        HeadExtension::PowerLaw { exponent } => {
            let (c, p) = (g.values()[0] * x0.powf(exponent), exponent);
            let gl = gauss_legendre(16);
            let u0 = x0.ln();
            let span = (40.0 / (1.0 - p).max(1e-3)).ceil();
            let mut acc = 0.0;
            let mut k = 0.0;
            while k < span {
                acc += gl.integrate(u0 - k - 1.0, u0 - k, |u| {
                    let x = u.exp();
                    c * x.powf(-p) * kernel(x)
                });
                k += 1.0;
            }
            acc
        }
    };
    let gl8 = gauss_legendre(8);
    for (w, v) in g.nodes().windows(2).zip(g.values().windows(2)) {
        let (u0, u1) = (w[0].ln(), w[1].ln());
        total += gl8.integrate(0.0, 1.0, |s| {
            let x = (u0 + s * (u1 - u0)).exp();
            (u1 - u0) * (v[0] + (v[1] - v[0]) * s) * kernel(x)
        });
    }
    if let TailExtension::PowerLaw { exponent: p } = g.tail() {
        let xl = g.last_node();
        let c = g.values()[g.len() - 1] * xl.powf(p);
        let ul = xl.ln();
        let end = ul.max(-e2.ln()) + (40.0 / p).ceil();
        let gl = gauss_legendre(16);
        let mut u = ul;
        while u < end {
            total += gl.integrate(u, u + 1.0, |v| {
                let x = v.exp();
                c * x.powf(-p) * kernel(x)
            });
            u += 1.0;
        }
    }
    total
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn phi_series_match_quadrature() {
        let gl = gauss_legendre(16);
        for z in [1e-5f64, -1e-5, 2e-4, -8e-4, 3e-3, 0.099, -0.1, -0.5, 2.0] {
            let p1 = gl.integrate(0.0, 1.0, |s| (z * s).exp());
            let p2 = gl.integrate(0.0, 1.0, |s| s * (z * s).exp());
            assert!((phi1(z) - p1).abs() < 1e-14, "z = {z}");
            assert!((phi2(z) - p2).abs() < 1e-14, "z = {z}");
        }
    }

    #[test]
    fn lin_abs_matches_quadrature_across_sign_change() {
        let gl = gauss_legendre(64);
        let (u0, u1, d0, d1, b) = (0.1, 0.9, 0.7, -0.3, 0.37);
        let s = d0 / (d0 - d1);
        let um = u0 + s * (u1 - u0);
        let f = |u: f64| (b * u).exp() * (d0 + (d1 - d0) * (u - u0) / (u1 - u0)).abs();
        let q = gl.integrate(u0, um, f) + gl.integrate(um, u1, f);
        assert!((lin_abs(u0, u1, d0, d1, b) - q).abs() < 1e-13);
    }

    #[test]
    fn merged_breakpoints_dedups() {
        assert_eq!(
            merged_breakpoints(&[1.0, 2.0, 4.0], &[2.0, 3.0]),
            vec![1.0, 2.0, 3.0, 4.0]
        );
    }
}
