//! Divergences between diagonal Gaussians with exact gradients with respect
//! to the parameters of the first argument.
//!
//! Closed forms are used for Bhattacharyya, KL and squared 2-Wasserstein.
//! Jensen-Shannon has no closed form for Gaussians and is estimated by
//! reparameterized Monte-Carlo over a caller-supplied noise matrix, which
//! keeps the estimate deterministic and differentiable for fixed noise.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::scalar::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum DivergenceKind {
    #[serde(rename = "BD")]
    Bhattacharyya,
    #[serde(rename = "KL")]
    Kl,
    #[serde(rename = "JS")]
    Js,
    #[serde(rename = "WD", alias = "W2")]
    W2,
}

impl DivergenceKind {
    pub const ALL: [DivergenceKind; 4] = [Self::Bhattacharyya, Self::Kl, Self::Js, Self::W2];

    pub fn label(self) -> &'static str {
        match self {
            Self::Bhattacharyya => "BD",
            Self::Kl => "KL",
            Self::Js => "JS",
            Self::W2 => "WD",
        }
    }
}

impl fmt::Display for DivergenceKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for DivergenceKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_uppercase().as_str() {
            "BD" | "BHATTACHARYYA" => Ok(Self::Bhattacharyya),
            "KL" => Ok(Self::Kl),
            "JS" => Ok(Self::Js),
            "WD" | "W2" => Ok(Self::W2),
            other => Err(Error::InvalidConfig(format!("unknown divergence {other:?}"))),
        }
    }
}

/// Divergence value with partials with respect to the first distribution.
#[derive(Debug, Clone, PartialEq)]
pub struct DivGrad<T> {
    pub value: T,
    pub d_mean: Vec<T>,
    pub d_std: Vec<T>,
}

const NEG_FLOOR: f64 = -1e-12;

fn floor_at_zero<T: Scalar>(v: T) -> T {
    if v < T::zero() && v > T::lit(NEG_FLOOR) {
        T::zero()
    } else {
        v
    }
}

fn validate<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<()> {
    for d in [p, q] {
        if d.std.len() != d.mean.len() {
            return Err(Error::DimMismatch {
                context: "divergence std",
                expected: d.mean.len(),
                got: d.std.len(),
            });
        }
        if let Some((index, s)) = d
            .std
            .iter()
            .enumerate()
            .find(|(_, s)| !(s.is_finite() && **s > T::zero()))
        {
            return Err(Error::InvalidStd {
                index,
                value: s.as_f64(),
            });
        }
    }
    if p.dim() != q.dim() {
        return Err(Error::DimMismatch {
            context: "divergence",
            expected: p.dim(),
            got: q.dim(),
        });
    }
    Ok(())
}

/// Per-dimension closed form `(value, d/dμp, d/dσp)` summed over dimensions.
fn closed_form<T: Scalar>(
    p: &DiagGaussian<T>,
    q: &DiagGaussian<T>,
    term: impl Fn(T, T, T, T) -> (T, T, T),
) -> Result<DivGrad<T>> {
    validate(p, q)?;
    let n = p.dim();
    let mut value = T::zero();
    let mut d_mean = Vec::with_capacity(n);
    let mut d_std = Vec::with_capacity(n);
    for i in 0..n {
        let (v, dm, ds) = term(p.mean[i], p.std[i], q.mean[i], q.std[i]);
        value += v;
        d_mean.push(dm);
        d_std.push(ds);
    }
    Ok(DivGrad {
        value: floor_at_zero(value),
        d_mean,
        d_std,
    })
}

/// Bhattacharyya distance `-ln ∫ √(p q)`.
///
/// Per dimension: `Δ²/(8σ̄²) + ½ ln(σ̄²/(σp σq))` with `σ̄² = (σp² + σq²)/2`.
pub fn bhattacharyya<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<DivGrad<T>> {
    let half = T::lit(0.5);
    let (four, eight) = (T::lit(4.0), T::lit(8.0));
    closed_form(p, q, |mp, sp, mq, sq| {
        let delta = mp - mq;
        let var = (sp * sp + sq * sq) * half;
        let value = delta * delta / (eight * var) + half * (var / (sp * sq)).ln();
        let d_mean = delta / (four * var);
        let d_std = -delta * delta * sp / (eight * var * var) + half * sp / var - half / sp;
        (value, d_mean, d_std)
    })
}

/// `KL(p ‖ q)`.
pub fn kl<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<DivGrad<T>> {
    let half = T::lit(0.5);
    closed_form(p, q, |mp, sp, mq, sq| {
        let delta = mp - mq;
        let vq = sq * sq;
        let value = (sq / sp).ln() + (sp * sp + delta * delta) / (T::lit(2.0) * vq) - half;
        (value, delta / vq, -T::one() / sp + sp / vq)
    })
}

/// `KL(q ‖ p)`, differentiated with respect to `p`.
pub fn kl_reversed<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<DivGrad<T>> {
    let half = T::lit(0.5);
    closed_form(p, q, |mp, sp, mq, sq| {
        let delta = mq - mp;
        let vp = sp * sp;
        let spread = sq * sq + delta * delta;
        let value = (sp / sq).ln() + spread / (T::lit(2.0) * vp) - half;
        (value, -delta / vp, T::one() / sp - spread / (vp * sp))
    })
}

/// Squared 2-Wasserstein distance `‖μp − μq‖² + ‖σp − σq‖²`.
pub fn w2<T: Scalar>(p: &DiagGaussian<T>, q: &DiagGaussian<T>) -> Result<DivGrad<T>> {
    let two = T::lit(2.0);
    closed_form(p, q, |mp, sp, mq, sq| {
        let (dm, ds) = (mp - mq, sp - sq);
        (dm * dm + ds * ds, two * dm, two * ds)
    })
}

struct Density<T> {
    log_p: T,
    log_q: T,
}

impl<T: Scalar> Density<T> {
    fn at(p: &DiagGaussian<T>, q: &DiagGaussian<T>, a: &[T]) -> Self {
        Self {
            log_p: p.log_prob_unchecked(a),
            log_q: q.log_prob_unchecked(a),
        }
    }

    /// `ln m` for `m = (p + q)/2`, exact when `p = q`.
    fn log_mix(&self) -> T {
        let (hi, lo) = if self.log_p >= self.log_q {
            (self.log_p, self.log_q)
        } else {
            (self.log_q, self.log_p)
        };
        hi + (T::lit(0.5) * (T::one() + (lo - hi).exp())).ln()
    }

    /// Posterior weight of `p` in the mixture.
    fn weight_p(&self) -> T {
        T::one() / (T::one() + (self.log_q - self.log_p).exp())
    }
}

/// Monte-Carlo Jensen-Shannon divergence.
///
/// `½ E_p[ln p/m] + ½ E_q[ln q/m]` with `m = (p+q)/2`, where row `z` of
/// `noise` yields the paired samples `μp + σp z` and `μq + σq z`. Negative
/// estimates are reported as zero; gradients are those of the raw estimator.
pub fn js_mc<T: Scalar>(
    p: &DiagGaussian<T>,
    q: &DiagGaussian<T>,
    noise: &[Vec<T>],
) -> Result<DivGrad<T>> {
    validate(p, q)?;
    if noise.is_empty() {
        return Err(Error::EmptyNoise);
    }
    let n = p.dim();
    if let Some(row) = noise.iter().find(|r| r.len() != n) {
        return Err(Error::DimMismatch {
            context: "js noise row",
            expected: n,
            got: row.len(),
        });
    }
    let scale = T::lit(0.5) / T::lit(noise.len() as f64);
    let mut value = T::zero();
    let mut d_mean = vec![T::zero(); n];
    let mut d_std = vec![T::zero(); n];
    let mut a = vec![T::zero(); n];

    for z in noise {
        // Samples from p: a = μp + σp z moves with p's parameters.
        for i in 0..n {
            a[i] = p.mean[i] + p.std[i] * z[i];
        }
        let dens = Density::at(p, q, &a);
        value += scale * (dens.log_p - dens.log_mix());
        let wp = dens.weight_p();
        let wq = T::one() - wp;
        for i in 0..n {
            let (sp, sq) = (p.std[i], q.std[i]);
            let up = (a[i] - p.mean[i]) / (sp * sp);
            let uq = (a[i] - q.mean[i]) / (sq * sq);
            // d ln m / da = -(wp up + wq uq); explicit d ln m / dθp = wp d ln p / dθp.
            let dlogm_da = -(wp * up + wq * uq);
            let dm = -(wp * up + dlogm_da);
            let dlogp_dsp = (a[i] - p.mean[i]) * up / sp - T::one() / sp;
            let ds = -T::one() / sp - (wp * dlogp_dsp + dlogm_da * z[i]);
            d_mean[i] += scale * dm;
            d_std[i] += scale * ds;
        }

        // Samples from q: only the density of p inside m depends on p.
        for i in 0..n {
            a[i] = q.mean[i] + q.std[i] * z[i];
        }
        let dens = Density::at(p, q, &a);
        value += scale * (dens.log_q - dens.log_mix());
        let wp = dens.weight_p();
        for i in 0..n {
            let sp = p.std[i];
            let up = (a[i] - p.mean[i]) / (sp * sp);
            let dlogp_dsp = (a[i] - p.mean[i]) * up / sp - T::one() / sp;
            d_mean[i] -= scale * wp * up;
            d_std[i] -= scale * wp * dlogp_dsp;
        }
    }
    Ok(DivGrad {
        value: value.max(T::zero()),
        d_mean,
        d_std,
    })
}

/// Dispatches on `kind`; `noise` is only read by the JS estimator.
pub fn divergence<T: Scalar>(
    kind: DivergenceKind,
    p: &DiagGaussian<T>,
    q: &DiagGaussian<T>,
    noise: &[Vec<T>],
) -> Result<DivGrad<T>> {
    match kind {
        DivergenceKind::Bhattacharyya => bhattacharyya(p, q),
        DivergenceKind::Kl => kl(p, q),
        DivergenceKind::Js => js_mc(p, q, noise),
        DivergenceKind::W2 => w2(p, q),
    }
}
