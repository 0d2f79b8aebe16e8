//! Gradient-based observation attacks under an L∞ budget.
//!
//! Every attack is a pure function of `(policy, clean observation, config)`:
//! all randomness comes from generators seeded with `config.seed`. The main
//! stream draws, in order, the initial perturbation, the reference action
//! noise, fixed Monte-Carlo noise, and per-iteration action noise. Input
//! diversity decisions use a separate stream so that a zero diversity
//! probability leaves the main stream untouched.

mod heads;

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

pub use heads::LossHead;

use crate::divergence::DivergenceKind;
use crate::error::{Error, Result};
use crate::gaussian::Observation;
use crate::policy::StochasticPolicy;
use crate::scalar::{all_finite, Scalar};

/// How the baselines pick the reference action `a` at the clean state.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum ReferenceAction {
    /// `a ~ π[s]`, drawn once per attack; the perturbed action is re-drawn
    /// every iteration.
    #[default]
    Sampled,
    /// `a = mean(π[s])` compared against `mean(π[s*])`.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AttackConfig {
    /// Sign-step size.
    pub alpha: f64,
    /// Number of iterations `N`.
    pub iters: usize,
    /// L∞ radius.
    pub epsilon: f64,
    /// Scale of the Gaussian initial perturbation.
    pub init_scale: f64,
    pub momentum_decay: f64,
    pub diversity_prob: f64,
    pub diversity_scale_range: (f64, f64),
    pub eot_samples: usize,
    pub js_samples: usize,
    pub seed: u64,
    /// Optional box the adversarial observation is clamped into.
    pub obs_clamp: Option<(f64, f64)>,
    pub reference: ReferenceAction,
}

impl Default for AttackConfig {
    fn default() -> Self {
        Self {
            alpha: 2.0 / 255.0,
            iters: 50,
            epsilon: 0.1,
            init_scale: 0.001,
            momentum_decay: 1.0,
            diversity_prob: 0.5,
            diversity_scale_range: (0.9, 1.1),
            eot_samples: 10,
            js_samples: 128,
            seed: 0,
            obs_clamp: None,
            reference: ReferenceAction::Sampled,
        }
    }
}

impl AttackConfig {
    /// `epsilon = 0` is accepted and yields the identity attack.
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::InvalidConfig(m.to_string()));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha must be positive");
        }
        if !(self.epsilon >= 0.0 && self.epsilon.is_finite()) {
            return bad("epsilon must be non-negative");
        }
        if !(self.init_scale >= 0.0 && self.init_scale.is_finite()) {
            return bad("init_scale must be non-negative");
        }
        if !(0.0..=1.0).contains(&self.diversity_prob) {
            return bad("diversity_prob must lie in [0, 1]");
        }
        let (lo, hi) = self.diversity_scale_range;
        if !(lo > 0.0 && lo <= hi && hi.is_finite()) {
            return bad("diversity_scale_range must satisfy 0 < lo <= hi");
        }
        if !self.momentum_decay.is_finite() || self.momentum_decay < 0.0 {
            return bad("momentum_decay must be non-negative");
        }
        if self.eot_samples < 1 {
            return bad("eot_samples must be at least 1");
        }
        if self.js_samples < 1 {
            return bad("js_samples must be at least 1");
        }
        if let Some((lo, hi)) = self.obs_clamp {
            if !(lo <= hi) {
                return bad("obs_clamp must satisfy lo <= hi");
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AttackKind {
    #[serde(rename = "FGSM")]
    Fgsm,
    #[serde(rename = "PGD")]
    Pgd,
    #[serde(rename = "TPGD")]
    Tpgd,
    #[serde(rename = "EOTPGD")]
    EotPgd,
    #[serde(rename = "MI-FGSM")]
    MiFgsm,
    #[serde(rename = "NI-FGSM")]
    NiFgsm,
    #[serde(rename = "DI2-FGSM")]
    Di2Fgsm,
    #[serde(rename = "DAPGD")]
    Dapgd,
}

impl AttackKind {
    pub const ALL: [AttackKind; 8] = [
        Self::Fgsm,
        Self::Di2Fgsm,
        Self::MiFgsm,
        Self::NiFgsm,
        Self::Pgd,
        Self::Tpgd,
        Self::EotPgd,
        Self::Dapgd,
    ];

    pub fn label(self) -> &'static str {
        match self {
            Self::Fgsm => "FGSM",
            Self::Pgd => "PGD",
            Self::Tpgd => "TPGD",
            Self::EotPgd => "EOTPGD",
            Self::MiFgsm => "MI-FGSM",
            Self::NiFgsm => "NI-FGSM",
            Self::Di2Fgsm => "DI2-FGSM",
            Self::Dapgd => "DAPGD",
        }
    }

    pub fn is_iterative(self) -> bool {
        self != Self::Fgsm
    }

    /// Stable numeric id used in seed derivation.
    pub fn id(self) -> u64 {
        match self {
            Self::Fgsm => 1,
            Self::Pgd => 2,
            Self::Tpgd => 3,
            Self::EotPgd => 4,
            Self::MiFgsm => 5,
            Self::NiFgsm => 6,
            Self::Di2Fgsm => 7,
            Self::Dapgd => 8,
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.label())
    }
}

impl FromStr for AttackKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        let norm: String = s
            .chars()
            .filter(|c| c.is_ascii_alphanumeric())
            .collect::<String>()
            .to_ascii_uppercase();
        Ok(match norm.as_str() {
            "FGSM" => Self::Fgsm,
            "PGD" => Self::Pgd,
            "TPGD" => Self::Tpgd,
            "EOTPGD" => Self::EotPgd,
            "MIFGSM" => Self::MiFgsm,
            "NIFGSM" => Self::NiFgsm,
            "DI2FGSM" | "DIFGSM" => Self::Di2Fgsm,
            "DAPGD" => Self::Dapgd,
            _ => return Err(Error::InvalidConfig(format!("unknown attack {s:?}"))),
        })
    }
}

/// `s + clip(s_adv − s, −ε, ε)` componentwise.
pub fn project_linf<T: Scalar>(s: &[T], s_adv: &[T], epsilon: T) -> Vec<T> {
    s.iter()
        .zip(s_adv)
        .map(|(c, a)| *c + (*a - *c).max(-epsilon).min(epsilon))
        .collect()
}

struct Streams {
    main: ChaCha8Rng,
    aux: ChaCha8Rng,
}

impl Streams {
    fn new(seed: u64) -> Self {
        let main = ChaCha8Rng::seed_from_u64(seed);
        let mut aux = main.clone();
        aux.set_stream(1);
        Self { main, aux }
    }
}

fn gaussian_vec<T: Scalar, R: Rng + ?Sized>(rng: &mut R, n: usize) -> Vec<T> {
    (0..n)
        .map(|_| {
            let z: f64 = StandardNormal.sample(rng);
            T::lit(z)
        })
        .collect()
}

fn gaussian_rows<T: Scalar, R: Rng + ?Sized>(rng: &mut R, rows: usize, n: usize) -> Vec<Vec<T>> {
    (0..rows).map(|_| gaussian_vec(rng, n)).collect()
}

/// Projection onto the budget followed by the optional clamp box.
fn constrain<T: Scalar>(s: &[T], adv: &[T], cfg: &AttackConfig) -> Vec<T> {
    let eps = T::lit(cfg.epsilon);
    let mut out = project_linf(s, adv, eps);
    if let Some((lo, hi)) = cfg.obs_clamp {
        for (o, c) in out.iter_mut().zip(s) {
            let lo = T::lit(lo).max(*c - eps);
            let hi = T::lit(hi).min(*c + eps);
            if lo <= hi {
                *o = o.max(lo).min(hi);
            }
        }
    }
    out
}

fn check_input<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<()> {
    cfg.validate()?;
    if s.len() != policy.obs_dim() {
        return Err(Error::DimMismatch {
            context: "attack observation",
            expected: policy.obs_dim(),
            got: s.len(),
        });
    }
    if !all_finite(s) {
        return Err(Error::NonFinite("attack observation".into()));
    }
    Ok(())
}

/// Where the per-iteration loss head comes from.
enum Objective<T> {
    /// Same head every iteration.
    Fixed(LossHead<T>),
    /// Sampled-action loss with `rows` fresh noise rows per iteration.
    Sampled { reference: Vec<T>, rows: usize },
}

impl<T: Scalar> Objective<T> {
    fn head(&self, rng: &mut ChaCha8Rng, act_dim: usize) -> LossHead<T> {
        match self {
            Self::Fixed(h) => h.clone(),
            Self::Sampled { reference, rows } => LossHead::SampledActionMse {
                reference: reference.clone(),
                noise: gaussian_rows(rng, *rows, act_dim),
            },
        }
    }
}

/// Baseline objective at the clean state: sampled or mean reference action.
fn action_objective<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
    rows: usize,
    rng: &mut ChaCha8Rng,
) -> Result<Objective<T>> {
    let clean = policy.distribution(s)?;
    Ok(match cfg.reference {
        ReferenceAction::Sampled => {
            let z = gaussian_vec(rng, policy.act_dim());
            Objective::Sampled {
                reference: clean.sample(&z)?,
                rows,
            }
        }
        ReferenceAction::Mean => Objective::Fixed(LossHead::MeanActionMse { reference: clean.mean }),
    })
}

#[derive(Clone, Copy, PartialEq)]
enum Momentum {
    Off,
    Heavy,
    Nesterov,
}

struct LoopSpec {
    name: &'static str,
    momentum: Momentum,
    diverse: bool,
}

/// Final adversarial observation plus bookkeeping.
#[derive(Debug, Clone)]
pub struct AttackOutcome<T> {
    pub observation: Observation<T>,
    /// Number of iterations whose gradient was taken at a transformed input.
    pub transforms_applied: usize,
}

fn initial_point<T: Scalar>(s: &[T], cfg: &AttackConfig, rng: &mut ChaCha8Rng) -> Vec<T> {
    let scale = T::lit(cfg.init_scale);
    let z: Vec<T> = gaussian_vec(rng, s.len());
    let start: Vec<T> = s.iter().zip(&z).map(|(c, n)| *c + scale * *n).collect();
    constrain(s, &start, cfg)
}

fn iterate<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
    streams: &mut Streams,
    mut adv: Vec<T>,
    objective: &Objective<T>,
    spec: LoopSpec,
) -> Result<AttackOutcome<T>> {
    let alpha = T::lit(cfg.alpha);
    let decay = T::lit(cfg.momentum_decay);
    let (lo, hi) = cfg.diversity_scale_range;
    let jitter = T::lit(cfg.init_scale);
    let mut velocity = vec![T::zero(); s.len()];
    let mut transforms_applied = 0;
    let diverged = |iteration: usize, reason: String| Error::AttackDiverged {
        attack: spec.name,
        iteration,
        reason,
    };

    for k in 0..cfg.iters {
        let head = objective.head(&mut streams.main, policy.act_dim());
        let mut point = if spec.momentum == Momentum::Nesterov {
            adv.iter()
                .zip(&velocity)
                .map(|(x, g)| *x + alpha * decay * *g)
                .collect()
        } else {
            adv.clone()
        };
        if spec.diverse {
            let u: f64 = streams.aux.random();
            if u < cfg.diversity_prob {
                let factor = T::lit(streams.aux.random_range(lo..=hi));
                let noise: Vec<T> = gaussian_vec(&mut streams.aux, s.len());
                for (x, n) in point.iter_mut().zip(&noise) {
                    *x = *x * factor + jitter * *n;
                }
                transforms_applied += 1;
            }
        }
        let (value, grad) = policy
            .loss_and_input_gradient(&point, &head)
            .map_err(|e| diverged(k, e.to_string()))?;
        if !value.is_finite() || !all_finite(&grad) {
            return Err(diverged(k, "non-finite loss or gradient".into()));
        }
        let direction = match spec.momentum {
            Momentum::Off => grad,
            Momentum::Heavy | Momentum::Nesterov => {
                let l1: T = grad.iter().map(|g| g.abs()).sum();
                for (v, g) in velocity.iter_mut().zip(&grad) {
                    let normed = if l1 > T::zero() { *g / l1 } else { *g };
                    *v = decay * *v + normed;
                }
                velocity.clone()
            }
        };
        for (x, d) in adv.iter_mut().zip(&direction) {
            *x += alpha * d.sgn();
        }
        adv = constrain(s, &adv, cfg);
    }
    Ok(AttackOutcome {
        observation: Observation::new(adv)?,
        transforms_applied,
    })
}

fn sampled_loop<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
    rows: usize,
    spec: LoopSpec,
) -> Result<AttackOutcome<T>> {
    check_input(policy, s, cfg)?;
    let mut streams = Streams::new(cfg.seed);
    let start = initial_point(s, cfg, &mut streams.main);
    let objective = action_objective(policy, s, cfg, rows, &mut streams.main)?;
    iterate(policy, s, cfg, &mut streams, start, &objective, spec)
}

/// Distribution-similarity PGD with an arbitrary divergence head.
pub fn distribution_pgd<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
    kind: DivergenceKind,
) -> Result<Observation<T>> {
    check_input(policy, s, cfg)?;
    let mut streams = Streams::new(cfg.seed);
    let start = initial_point(s, cfg, &mut streams.main);
    let reference = policy.distribution(s)?;
    let noise = if kind == DivergenceKind::Js {
        gaussian_rows(&mut streams.main, cfg.js_samples, policy.act_dim())
    } else {
        Vec::new()
    };
    let objective = Objective::Fixed(LossHead::divergence(kind, reference, noise));
    let spec = LoopSpec {
        name: "DAPGD",
        momentum: Momentum::Off,
        diverse: false,
    };
    iterate(policy, s, cfg, &mut streams, start, &objective, spec).map(|o| o.observation)
}

/// Distribution-aware PGD: sign ascent on the Bhattacharyya distance between
/// `π[s*]` and `π[s]`, projected onto the L∞ ball after every step.
pub fn dapgd<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    distribution_pgd(policy, s, cfg, DivergenceKind::Bhattacharyya)
}

/// PGD on the sampled-action squared error.
pub fn pgd<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    let spec = LoopSpec {
        name: "PGD",
        momentum: Momentum::Off,
        diverse: false,
    };
    sampled_loop(policy, s, cfg, 1, spec).map(|o| o.observation)
}

/// PGD whose step direction averages `eot_samples` sampled-action gradients.
///
/// All samples share one forward pass at `s*` (the std is state
/// independent), so averaging the upstream action gradients equals
/// averaging the per-sample input gradients.
pub fn eotpgd<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    let spec = LoopSpec {
        name: "EOTPGD",
        momentum: Momentum::Off,
        diverse: false,
    };
    sampled_loop(policy, s, cfg, cfg.eot_samples, spec).map(|o| o.observation)
}

/// TRADES-style PGD maximising `KL(π[s] ‖ π[s*])`.
pub fn tpgd<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    check_input(policy, s, cfg)?;
    let mut streams = Streams::new(cfg.seed);
    let start = initial_point(s, cfg, &mut streams.main);
    let objective = Objective::Fixed(LossHead::Kl {
        reference: policy.distribution(s)?,
        reversed: true,
    });
    let spec = LoopSpec {
        name: "TPGD",
        momentum: Momentum::Off,
        diverse: false,
    };
    iterate(policy, s, cfg, &mut streams, start, &objective, spec).map(|o| o.observation)
}

/// Momentum iterative FGSM with L1-normalised gradient accumulation.
pub fn mi_fgsm<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    let spec = LoopSpec {
        name: "MI-FGSM",
        momentum: Momentum::Heavy,
        diverse: false,
    };
    sampled_loop(policy, s, cfg, 1, spec).map(|o| o.observation)
}

/// MI-FGSM with the gradient taken at the look-ahead point `s* + α·μ·g`.
pub fn ni_fgsm<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    let spec = LoopSpec {
        name: "NI-FGSM",
        momentum: Momentum::Nesterov,
        diverse: false,
    };
    sampled_loop(policy, s, cfg, 1, spec).map(|o| o.observation)
}

/// DI²-FGSM with the full outcome, including how often the input
/// transformation fired.
pub fn di2_fgsm_outcome<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<AttackOutcome<T>> {
    let spec = LoopSpec {
        name: "DI2-FGSM",
        momentum: Momentum::Off,
        diverse: true,
    };
    sampled_loop(policy, s, cfg, 1, spec)
}

/// PGD whose gradient is, with probability `diversity_prob`, taken at a
/// randomly rescaled and jittered copy of `s*`.
pub fn di2_fgsm<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    di2_fgsm_outcome(policy, s, cfg).map(|o| o.observation)
}

/// Single sign step of size `epsilon` from the clean observation.
pub fn fgsm<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    check_input(policy, s, cfg)?;
    let mut streams = Streams::new(cfg.seed);
    let objective = action_objective(policy, s, cfg, 1, &mut streams.main)?;
    let head = objective.head(&mut streams.main, policy.act_dim());
    let (value, grad) = policy
        .loss_and_input_gradient(s, &head)
        .map_err(|e| Error::AttackDiverged {
            attack: "FGSM",
            iteration: 0,
            reason: e.to_string(),
        })?;
    if !value.is_finite() {
        return Err(Error::AttackDiverged {
            attack: "FGSM",
            iteration: 0,
            reason: "non-finite loss".into(),
        });
    }
    let eps = T::lit(cfg.epsilon);
    let stepped: Vec<T> = s.iter().zip(&grad).map(|(x, g)| *x + eps * g.sgn()).collect();
    Observation::new(constrain(s, &stepped, cfg))
}

/// Dispatches to the attack for `kind`. A divergence override swaps
/// DAPGD's Bhattacharyya head and is rejected for every other kind.
pub fn run_attack<T: Scalar, P: StochasticPolicy<T> + ?Sized>(
    kind: AttackKind,
    loss_override: Option<DivergenceKind>,
    policy: &P,
    s: &[T],
    cfg: &AttackConfig,
) -> Result<Observation<T>> {
    if loss_override.is_some() && kind != AttackKind::Dapgd {
        return Err(Error::InvalidConfig(format!(
            "loss override is only valid for DAPGD, not {kind}"
        )));
    }
    match kind {
        AttackKind::Fgsm => fgsm(policy, s, cfg),
        AttackKind::Pgd => pgd(policy, s, cfg),
        AttackKind::Tpgd => tpgd(policy, s, cfg),
        AttackKind::EotPgd => eotpgd(policy, s, cfg),
        AttackKind::MiFgsm => mi_fgsm(policy, s, cfg),
        AttackKind::NiFgsm => ni_fgsm(policy, s, cfg),
        AttackKind::Di2Fgsm => di2_fgsm(policy, s, cfg),
        AttackKind::Dapgd => distribution_pgd(
            policy,
            s,
            cfg,
            loss_override.unwrap_or(DivergenceKind::Bhattacharyya),
        ),
    }
}
