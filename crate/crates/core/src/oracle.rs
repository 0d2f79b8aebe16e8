//! Independent numerical references used to verify the analytic code paths:
//! adaptive Gauss-Kronrod quadrature of the defining divergence integrals, a plain
//! Monte-Carlo Jensen-Shannon estimate, a straight-line forward pass, and
//! central finite differences.
//!
//! Nothing here calls into the closed forms it is meant to check.

use rand::Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::divergence::{DivGrad, DivergenceKind};
use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::policy::{DistributionLoss, PolicyNet, StochasticPolicy};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;

const PANELS: usize = 16;
const MAX_DEPTH: u32 = 30;

fn normal_pdf(x: f64, mean: f64, std: f64) -> f64 {
    let u = (x - mean) / std;
    (-0.5 * u * u).exp() / (std * (2.0 * std::f64::consts::PI).sqrt())
}

fn density(d: &DiagGaussian<f64>, a: &[f64]) -> f64 {
    a.iter()
        .enumerate()
        .map(|(i, x)| normal_pdf(*x, d.mean[i], d.std[i]))
        .product()
}

/// Log density, kept separate so far tails do not underflow to `ln 0`.
fn log_density(d: &DiagGaussian<f64>, a: &[f64]) -> f64 {
    a.iter()
        .enumerate()
        .map(|(i, x)| {
            let u = (*x - d.mean[i]) / d.std[i];
            -0.5 * u * u - d.std[i].ln() - 0.5 * (2.0 * std::f64::consts::PI).ln()
        })
        .sum()
}

// 7-point Gauss / 15-point Kronrod nodes and weights on [-1, 1].
const KRONROD_NODES: [f64; 8] = [
    0.991455371120812639206854697526329,
    0.949107912342758524526189684047851,
    0.864864423359769072789712788640926,
    0.741531185599394439863864773280788,
    0.586087235467691130294144845693013,
    0.405845151377397166906606412076961,
    0.207784955007898467600689403773245,
    0.0,
];
const KRONROD_WEIGHTS: [f64; 8] = [
    0.022935322010529224963732008058970,
    0.063092092629978553290700663189204,
    0.104790010322250183839876322541518,
    0.140653259715525918745189590510238,
    0.169004726639267902826583426598550,
    0.190350578064785409913256402421014,
    0.204432940075298892414161999234649,
    0.209482141084727828012999174891714,
];
// Gauss weights for the odd-indexed Kronrod nodes (1, 3, 5, 7).
const GAUSS_WEIGHTS: [f64; 4] = [
    0.129484966168869693270611432679082,
    0.279705391489276667901467771423780,
    0.381830050505118944950369775488975,
    0.417959183673469387755102040816327,
];

/// Kronrod estimate and its distance from the embedded Gauss estimate.
fn gauss_kronrod(f: &mut impl FnMut(f64) -> Result<f64>, a: f64, b: f64) -> Result<(f64, f64)> {
    let c = 0.5 * (a + b);
    let h = 0.5 * (b - a);
    let fc = f(c)?;
    let mut kronrod = KRONROD_WEIGHTS[7] * fc;
    let mut gauss = GAUSS_WEIGHTS[3] * fc;
    for i in 0..7 {
        let dx = h * KRONROD_NODES[i];
        let pair = f(c - dx)? + f(c + dx)?;
        kronrod += KRONROD_WEIGHTS[i] * pair;
        if i % 2 == 1 {
            gauss += GAUSS_WEIGHTS[i / 2] * pair;
        }
    }
    Ok((h * kronrod, h * (kronrod - gauss).abs()))
}

fn adaptive(f: &mut impl FnMut(f64) -> Result<f64>, a: f64, b: f64, tol: f64, depth: u32) -> Result<f64> {
    let (value, err) = gauss_kronrod(f, a, b)?;
    if err <= tol.max(1e-18) {
        return Ok(value);
    }
    if depth == 0 {
        return Err(Error::Quadrature(format!("no convergence on [{a}, {b}] (error estimate {err})")));
    }
    let m = 0.5 * (a + b);
    Ok(adaptive(f, a, m, 0.5 * tol, depth - 1)? + adaptive(f, m, b, 0.5 * tol, depth - 1)?)
}

/// Adaptive Gauss-Kronrod integration of `f` over `[lo, hi]` with absolute
/// error target `tol`, started from a uniform panel split.
pub fn integrate(mut f: impl FnMut(f64) -> Result<f64>, lo: f64, hi: f64, tol: f64) -> Result<f64> {
    let width = (hi - lo) / PANELS as f64;
    let mut total = 0.0;
    for k in 0..PANELS {
        let a = lo + k as f64 * width;
        let b = if k + 1 == PANELS { hi } else { a + width };
        total += adaptive(&mut f, a, b, tol / PANELS as f64, MAX_DEPTH)?;
    }
    Ok(total)
}

fn support(p: &DiagGaussian<f64>, q: &DiagGaussian<f64>, i: usize) -> (f64, f64) {
    let lo = (p.mean[i] - 10.0 * p.std[i]).min(q.mean[i] - 10.0 * q.std[i]);
    let hi = (p.mean[i] + 10.0 * p.std[i]).max(q.mean[i] + 10.0 * q.std[i]);
    (lo, hi)
}

/// Integral of `f(a)` over the union of the ±10σ boxes, for `dim ≤ 2`.
fn integrate_actions(
    p: &DiagGaussian<f64>,
    q: &DiagGaussian<f64>,
    f: impl Fn(&[f64]) -> f64,
    tol: f64,
) -> Result<f64> {
    match p.dim() {
        1 => {
            let (lo, hi) = support(p, q, 0);
            integrate(|x| Ok(f(&[x])), lo, hi, tol)
        }
        2 => {
            let (lo0, hi0) = support(p, q, 0);
            let (lo1, hi1) = support(p, q, 1);
            let inner_tol = tol / (hi0 - lo0);
            integrate(
                |x| integrate(|y| Ok(f(&[x, y])), lo1, hi1, inner_tol),
                lo0,
                hi0,
                tol,
            )
        }
        d => Err(Error::Quadrature(format!("quadrature supports dim ≤ 2, got {d}"))),
    }
}

/// Numerically integrates the defining integral of `kind` between `p` and `q`.
pub fn quadrature(p: &DiagGaussian<f64>, q: &DiagGaussian<f64>, kind: DivergenceKind) -> Result<f64> {
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch {
            context: "quadrature",
            expected: p.dim(),
            got: q.dim(),
        });
    }
    const TOL: f64 = 1e-10;
    match kind {
        DivergenceKind::Bhattacharyya => {
            let overlap = integrate_actions(p, q, |a| (density(p, a) * density(q, a)).sqrt(), TOL)?;
            Ok(-overlap.ln())
        }
        DivergenceKind::Kl => integrate_actions(
            p,
            q,
            |a| {
                let pa = density(p, a);
                if pa == 0.0 {
                    0.0
                } else {
                    pa * (log_density(p, a) - log_density(q, a))
                }
            },
            TOL,
        ),
        DivergenceKind::Js => integrate_actions(
            p,
            q,
            |a| {
                let (pa, qa) = (density(p, a), density(q, a));
                let m = 0.5 * (pa + qa);
                let t = |x: f64| if x == 0.0 { 0.0 } else { x * (x / m).ln() };
                0.5 * t(pa) + 0.5 * t(qa)
            },
            TOL,
        ),
        DivergenceKind::W2 => {
            // Monotone (quantile) coupling, coordinate by coordinate.
            let mut total = 0.0;
            for i in 0..p.dim() {
                let (mp, sp, mq, sq) = (p.mean[i], p.std[i], q.mean[i], q.std[i]);
                total += integrate(
                    |z| {
                        let gap = (mp + sp * z) - (mq + sq * z);
                        Ok(gap * gap * normal_pdf(z, 0.0, 1.0))
                    },
                    -10.0,
                    10.0,
                    TOL,
                )?;
            }
            Ok(total)
        }
    }
}

/// Plain Monte-Carlo Jensen-Shannon estimate with its standard error.
pub fn js_reference<R: Rng + ?Sized>(
    p: &DiagGaussian<f64>,
    q: &DiagGaussian<f64>,
    samples: usize,
    rng: &mut R,
) -> (f64, f64) {
    let d = p.dim();
    let mut sum = 0.0;
    let mut sum_sq = 0.0;
    let mut a = vec![0.0; d];
    let mut b = vec![0.0; d];
    for _ in 0..samples {
        for i in 0..d {
            let z1: f64 = StandardNormal.sample(rng);
            let z2: f64 = StandardNormal.sample(rng);
            a[i] = p.mean[i] + p.std[i] * z1;
            b[i] = q.mean[i] + q.std[i] * z2;
        }
        let (pa, qa) = (density(p, &a), density(q, &a));
        let (pb, qb) = (density(p, &b), density(q, &b));
        let x = 0.5 * (2.0 * pa / (pa + qa)).ln() + 0.5 * (2.0 * qb / (pb + qb)).ln();
        sum += x;
        sum_sq += x * x;
    }
    let n = samples as f64;
    let mean = sum / n;
    let var = (sum_sq / n - mean * mean).max(0.0) * n / (n - 1.0);
    (mean, (var / n).sqrt())
}

/// Straight-line forward pass (nested loops over row copies of the weights).
pub fn reference_mean(net: &PolicyNet<f64>, obs: &[f64]) -> Vec<f64> {
    fn layer(w: &[Vec<f64>], b: &[f64], x: &[f64], act: bool) -> Vec<f64> {
        let mut out = Vec::with_capacity(w.len());
        for (row, bias) in w.iter().zip(b) {
            let mut acc = 0.0;
            for j in 0..x.len() {
                acc += row[j] * x[j];
            }
            acc += bias;
            out.push(if act { acc.tanh() } else { acc });
        }
        out
    }
    let b = &net.body;
    let h1 = layer(&b.w1.to_rows(), &b.b1, obs, true);
    let h2 = layer(&b.w2.to_rows(), &b.b2, &h1, true);
    layer(&b.w_out.to_rows(), &b.b_out, &h2, false)
}

/// Central differences of a scalar function.
pub fn central_difference(mut f: impl FnMut(&[f64]) -> f64, x: &[f64], h: f64) -> Vec<f64> {
    let mut probe = x.to_vec();
    (0..x.len())
        .map(|i| {
            probe[i] = x[i] + h;
            let up = f(&probe);
            probe[i] = x[i] - h;
            let down = f(&probe);
            probe[i] = x[i];
            (up - down) / (2.0 * h)
        })
        .collect()
}

/// `max_i |a_i − b_i| / max(‖a‖∞, ‖b‖∞)`, with a tiny floor so that two
/// zero vectors compare equal.
pub fn relative_error(analytic: &[f64], numeric: &[f64]) -> f64 {
    let scale = analytic
        .iter()
        .chain(numeric)
        .fold(1e-12f64, |m, v| m.max(v.abs()));
    analytic
        .iter()
        .zip(numeric)
        .map(|(a, b)| (a - b).abs())
        .fold(0.0, f64::max)
        / scale
}

/// Relative error of a divergence's analytic `(d_mean, d_std)` against
/// central differences in the first distribution's parameters.
pub fn divergence_grad_error(
    p: &DiagGaussian<f64>,
    q: &DiagGaussian<f64>,
    f: impl Fn(&DiagGaussian<f64>, &DiagGaussian<f64>) -> Result<DivGrad<f64>>,
) -> f64 {
    let Ok(analytic) = f(p, q) else {
        return f64::INFINITY;
    };
    let n = p.dim();
    let params: Vec<f64> = p.mean.iter().chain(&p.std).copied().collect();
    let raw = |x: &[f64]| {
        let d = DiagGaussian {
            mean: x[..n].to_vec(),
            std: x[n..].to_vec(),
        };
        f(&d, q).map(|g| g.value).unwrap_or(f64::NAN)
    };
    let numeric = central_difference(raw, &params, FD_STEP);
    let grads: Vec<f64> = analytic.d_mean.iter().chain(&analytic.d_std).copied().collect();
    relative_error(&grads, &numeric)
}

/// Relative error of `policy`'s input gradient for `loss` against central
/// differences in the observation.
pub fn input_grad_error<P: StochasticPolicy<f64> + ?Sized>(
    policy: &P,
    obs: &[f64],
    loss: &dyn DistributionLoss<f64>,
) -> Result<f64> {
    let (_, analytic) = policy.loss_and_input_gradient(obs, loss)?;
    let numeric = central_difference(
        |x| {
            policy
                .distribution(x)
                .and_then(|d| loss.evaluate(&d))
                .map(|o| o.value)
                .unwrap_or(f64::NAN)
        },
        obs,
        FD_STEP,
    );
    Ok(relative_error(&analytic, &numeric))
}
