use crate::divergence::{self, DivGrad, DivergenceKind};
use crate::error::Result;
use crate::gaussian::DiagGaussian;
use crate::policy::{DistributionLoss, HeadOutput};
use crate::scalar::Scalar;

/// Loss heads maximised by the attacks. Reference quantities are computed
/// once from the clean observation.
#[derive(Debug, Clone)]
pub enum LossHead<T> {
    /// Mean over noise rows `z` of `‖μ + σ⊙z − a‖²` for a fixed reference
    /// action `a`. One row is the plain sampled-action loss; several rows
    /// give the expectation-over-transformation average.
    SampledActionMse { reference: Vec<T>, noise: Vec<Vec<T>> },
    /// `‖μ − a‖²`, for attacks that use the clean mean action as reference.
    MeanActionMse { reference: Vec<T> },
    /// Bhattacharyya distance to the clean distribution.
    Bhattacharyya { reference: DiagGaussian<T> },
    /// `KL(π[s*] ‖ π[s])`, or `KL(π[s] ‖ π[s*])` when `reversed`.
    Kl { reference: DiagGaussian<T>, reversed: bool },
    /// Monte-Carlo Jensen-Shannon divergence with fixed noise rows.
    Js { reference: DiagGaussian<T>, noise: Vec<Vec<T>> },
    /// Squared 2-Wasserstein distance.
    W2 { reference: DiagGaussian<T> },
}

impl<T: Scalar> LossHead<T> {
    /// Distribution-similarity head for `kind`.
    pub fn divergence(kind: DivergenceKind, reference: DiagGaussian<T>, noise: Vec<Vec<T>>) -> Self {
        match kind {
            DivergenceKind::Bhattacharyya => Self::Bhattacharyya { reference },
            DivergenceKind::Kl => Self::Kl {
                reference,
                reversed: false,
            },
            DivergenceKind::Js => Self::Js { reference, noise },
            DivergenceKind::W2 => Self::W2 { reference },
        }
    }
}

fn from_div<T>(d: DivGrad<T>) -> HeadOutput<T> {
    HeadOutput {
        value: d.value,
        d_mean: d.d_mean,
        d_std: d.d_std,
    }
}

impl<T: Scalar> DistributionLoss<T> for LossHead<T> {
    fn name(&self) -> &'static str {
        match self {
            Self::SampledActionMse { .. } => "SampledActionMSE",
            Self::MeanActionMse { .. } => "MeanActionMSE",
            Self::Bhattacharyya { .. } => "BD",
            Self::Kl { reversed: false, .. } => "KL",
            Self::Kl { reversed: true, .. } => "KL-reversed",
            Self::Js { .. } => "JS",
            Self::W2 { .. } => "W2",
        }
    }

    fn evaluate(&self, dist: &DiagGaussian<T>) -> Result<HeadOutput<T>> {
        match self {
            Self::SampledActionMse { reference, noise } => {
                let n = dist.dim();
                let rows = T::lit(noise.len().max(1) as f64);
                let two = T::lit(2.0);
                let mut out = HeadOutput {
                    value: T::zero(),
                    d_mean: vec![T::zero(); n],
                    d_std: vec![T::zero(); n],
                };
                for z in noise {
                    let action = dist.sample(z)?;
                    for i in 0..n {
                        let r = action[i] - reference[i];
                        out.value += r * r / rows;
                        out.d_mean[i] += two * r / rows;
                        out.d_std[i] += two * r * z[i] / rows;
                    }
                }
                Ok(out)
            }
            Self::MeanActionMse { reference } => {
                let two = T::lit(2.0);
                let r: Vec<T> = dist.mean.iter().zip(reference).map(|(m, a)| *m - *a).collect();
                Ok(HeadOutput {
                    value: r.iter().map(|v| *v * *v).sum(),
                    d_mean: r.iter().map(|v| two * *v).collect(),
                    d_std: vec![T::zero(); r.len()],
                })
            }
            Self::Bhattacharyya { reference } => divergence::bhattacharyya(dist, reference).map(from_div),
            Self::Kl {
                reference,
                reversed: false,
            } => divergence::kl(dist, reference).map(from_div),
            Self::Kl {
                reference,
                reversed: true,
            } => divergence::kl_reversed(dist, reference).map(from_div),
            Self::Js { reference, noise } => divergence::js_mc(dist, reference, noise).map(from_div),
            Self::W2 { reference } => divergence::w2(dist, reference).map(from_div),
        }
    }
}
