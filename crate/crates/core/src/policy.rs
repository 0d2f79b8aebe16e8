//! Fixed-architecture Gaussian policy: forward pass, input gradients for
//! attacks, and parameter gradients for training.

use rand::Rng;

use crate::error::{Error, Result};
use crate::gaussian::DiagGaussian;
use crate::linalg::Matrix;
use crate::mlp::{Mlp, MlpTrace};
use crate::scalar::{all_finite, Scalar};

pub const LOG_STD_MIN: f64 = -10.0;
pub const LOG_STD_MAX: f64 = 2.0;

/// Cached intermediates of [`PolicyNet::forward`].
pub type ForwardTrace<T> = MlpTrace<T>;

/// Scalar loss of a policy distribution, with its partial derivatives.
#[derive(Debug, Clone)]
pub struct HeadOutput<T> {
    pub value: T,
    pub d_mean: Vec<T>,
    pub d_std: Vec<T>,
}

/// A scalar objective evaluated on the action distribution at one observation.
pub trait DistributionLoss<T: Scalar> {
    fn name(&self) -> &'static str;
    fn evaluate(&self, dist: &DiagGaussian<T>) -> Result<HeadOutput<T>>;
}

/// Anything that maps observations to diagonal Gaussians and can
/// differentiate a distribution loss back to its input.
pub trait StochasticPolicy<T: Scalar> {
    fn obs_dim(&self) -> usize;
    fn act_dim(&self) -> usize;
    fn distribution(&self, obs: &[T]) -> Result<DiagGaussian<T>>;
    /// Loss value and its gradient with respect to `obs`.
    fn loss_and_input_gradient(
        &self,
        obs: &[T],
        loss: &dyn DistributionLoss<T>,
    ) -> Result<(T, Vec<T>)>;
}

fn check_obs_len(expected: usize, got: usize) -> Result<()> {
    if expected != got {
        return Err(Error::DimMismatch {
            context: "observation",
            expected,
            got,
        });
    }
    Ok(())
}

fn clamp_log_std<T: Scalar>(v: T) -> T {
    v.max(T::lit(LOG_STD_MIN)).min(T::lit(LOG_STD_MAX))
}

/// Stochastic policy with a tanh MLP mean and a state-independent `log_std`.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyNet<T> {
    pub body: Mlp<T>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> PolicyNet<T> {
    /// Validates shapes and finiteness; clamps `log_std` into range.
    pub fn new(body: Mlp<T>, log_std: Vec<T>) -> Result<Self> {
        if log_std.len() != body.out_dim() {
            return Err(Error::DimMismatch {
                context: "log_std",
                expected: body.out_dim(),
                got: log_std.len(),
            });
        }
        if !body.is_finite() || !all_finite(&log_std) {
            return Err(Error::NonFinite("policy weights".into()));
        }
        let mut net = Self { body, log_std };
        net.clamp_log_std();
        Ok(net)
    }

    pub fn random<R: Rng + ?Sized>(
        obs_dim: usize,
        act_dim: usize,
        init_log_std: f64,
        rng: &mut R,
    ) -> Self {
        let body = Mlp::random(obs_dim, act_dim, 0.01, rng);
        let mut net = Self {
            body,
            log_std: vec![T::lit(init_log_std); act_dim],
        };
        net.clamp_log_std();
        net
    }

    pub fn obs_dim(&self) -> usize {
        self.body.in_dim()
    }

    pub fn act_dim(&self) -> usize {
        self.body.out_dim()
    }

    pub fn clamp_log_std(&mut self) {
        self.log_std.iter_mut().for_each(|v| *v = clamp_log_std(*v));
    }

    pub fn std(&self) -> Vec<T> {
        self.log_std.iter().map(|v| v.exp()).collect()
    }

    pub fn forward(&self, obs: &[T]) -> Result<(DiagGaussian<T>, ForwardTrace<T>)> {
        check_obs_len(self.obs_dim(), obs.len())?;
        let trace = self.body.forward(obs);
        let dist = DiagGaussian::new(trace.output.clone(), self.std())?;
        Ok((dist, trace))
    }

    pub fn is_finite(&self) -> bool {
        self.body.is_finite() && all_finite(&self.log_std)
    }
}

impl<T: Scalar> StochasticPolicy<T> for PolicyNet<T> {
    fn obs_dim(&self) -> usize {
        PolicyNet::obs_dim(self)
    }

    fn act_dim(&self) -> usize {
        PolicyNet::act_dim(self)
    }

    fn distribution(&self, obs: &[T]) -> Result<DiagGaussian<T>> {
        self.forward(obs).map(|(d, _)| d)
    }

    fn loss_and_input_gradient(
        &self,
        obs: &[T],
        loss: &dyn DistributionLoss<T>,
    ) -> Result<(T, Vec<T>)> {
        let (dist, trace) = self.forward(obs)?;
        let out = loss.evaluate(&dist)?;
        // std does not depend on the observation, so only d_mean flows back.
        let grad = self.body.backprop_input(&trace, &out.d_mean);
        if !out.value.is_finite() || !all_finite(&grad) {
            return Err(Error::NonFiniteGradient {
                head: loss.name().to_string(),
            });
        }
        Ok((out.value, grad))
    }
}

/// Free-function form of [`PolicyNet::forward`].
pub fn forward<T: Scalar>(
    net: &PolicyNet<T>,
    obs: &[T],
) -> Result<(DiagGaussian<T>, ForwardTrace<T>)> {
    net.forward(obs)
}

/// Exact gradient of `loss(π[obs])` with respect to `obs`.
pub fn input_gradient<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    net: &P,
    obs: &[T],
    loss: &dyn DistributionLoss<T>,
) -> Result<Vec<T>> {
    net.loss_and_input_gradient(obs, loss).map(|(_, g)| g)
}

/// Per-sample training objective over a batch of observations.
pub trait PolicyObjective<T: Scalar> {
    /// Loss contribution of sample `index` and its partials with respect to
    /// the distribution mean and `log_std`.
    fn sample_loss(&self, index: usize, dist: &DiagGaussian<T>) -> (T, Vec<T>, Vec<T>);
}

/// Gradient record shaped like [`PolicyNet`].
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyGrad<T> {
    pub body: Mlp<T>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> PolicyGrad<T> {
    pub fn zeros_like(net: &PolicyNet<T>) -> Self {
        Self {
            body: net.body.zeros_like(),
            log_std: vec![T::zero(); net.act_dim()],
        }
    }

    pub fn is_finite(&self) -> bool {
        self.body.is_finite() && all_finite(&self.log_std)
    }
}

/// Sum of `objective` over `observations` and its gradient with respect to
/// every weight, bias and `log_std` entry.
pub fn param_gradient<T: Scalar, O: AsRef<[T]>>(
    net: &PolicyNet<T>,
    observations: &[O],
    objective: &impl PolicyObjective<T>,
) -> Result<(T, PolicyGrad<T>)> {
    let mut grad = PolicyGrad::zeros_like(net);
    let mut total = T::zero();
    for (i, obs) in observations.iter().enumerate() {
        let (dist, trace) = net.forward(obs.as_ref())?;
        let (loss, d_mean, d_log_std) = objective.sample_loss(i, &dist);
        total += loss;
        net.body.backprop_params(&trace, &d_mean, &mut grad.body);
        grad.log_std
            .iter_mut()
            .zip(&d_log_std)
            .for_each(|(g, d)| *g += *d);
    }
    if !total.is_finite() || !grad.is_finite() {
        return Err(Error::NonFinite("policy parameter gradient".into()));
    }
    Ok((total, grad))
}

/// Scalar-output network with the same hidden architecture, used as critic.
#[derive(Debug, Clone, PartialEq)]
pub struct ValueNet<T> {
    pub body: Mlp<T>,
}

impl<T: Scalar> ValueNet<T> {
    pub fn random<R: Rng + ?Sized>(obs_dim: usize, rng: &mut R) -> Self {
        Self {
            body: Mlp::random(obs_dim, 1, 1.0, rng),
        }
    }

    pub fn obs_dim(&self) -> usize {
        self.body.in_dim()
    }

    pub fn value(&self, obs: &[T]) -> Result<T> {
        check_obs_len(self.obs_dim(), obs.len())?;
        Ok(self.body.forward(obs).output[0])
    }

    /// `coef · mean((V(s) - target)²)` and its parameter gradient.
    pub fn squared_error_gradient<O: AsRef<[T]>>(
        &self,
        observations: &[O],
        targets: &[T],
        coef: T,
    ) -> Result<(T, Mlp<T>)> {
        let n = T::lit(observations.len().max(1) as f64);
        let mut grad = self.body.zeros_like();
        let mut loss = T::zero();
        for (obs, target) in observations.iter().zip(targets) {
            let obs = obs.as_ref();
            check_obs_len(self.obs_dim(), obs.len())?;
            let trace = self.body.forward(obs);
            let err = trace.output[0] - *target;
            loss += coef * err * err / n;
            let d = T::lit(2.0) * coef * err / n;
            self.body.backprop_params(&trace, &[d], &mut grad);
        }
        if !loss.is_finite() || !grad.is_finite() {
            return Err(Error::NonFinite("value gradient".into()));
        }
        Ok((loss, grad))
    }
}

/// Gaussian policy with an affine mean `W·s + b`; useful for closed-form
/// checks of the attack loops.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearGaussianPolicy<T> {
    pub weight: Matrix<T>,
    pub bias: Vec<T>,
    pub log_std: Vec<T>,
}

impl<T: Scalar> StochasticPolicy<T> for LinearGaussianPolicy<T> {
    fn obs_dim(&self) -> usize {
        self.weight.cols()
    }

    fn act_dim(&self) -> usize {
        self.weight.rows()
    }

    fn distribution(&self, obs: &[T]) -> Result<DiagGaussian<T>> {
        check_obs_len(self.weight.cols(), obs.len())?;
        let mut mean = vec![T::zero(); self.weight.rows()];
        self.weight.affine_into(obs, &self.bias, &mut mean);
        DiagGaussian::new(mean, self.log_std.iter().map(|v| v.exp()).collect())
    }

    fn loss_and_input_gradient(
        &self,
        obs: &[T],
        loss: &dyn DistributionLoss<T>,
    ) -> Result<(T, Vec<T>)> {
        let dist = self.distribution(obs)?;
        let out = loss.evaluate(&dist)?;
        let mut grad = vec![T::zero(); self.weight.cols()];
        self.weight.transpose_mul_into(&out.d_mean, &mut grad);
        if !out.value.is_finite() || !all_finite(&grad) {
            return Err(Error::NonFiniteGradient {
                head: loss.name().to_string(),
            });
        }
        Ok((out.value, grad))
    }
}
