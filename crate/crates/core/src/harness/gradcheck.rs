use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

use crate::attacks::LossHead;
use crate::divergence::{self, DivGrad, DivergenceKind};
use crate::error::Result;
use crate::gaussian::DiagGaussian;
use crate::oracle;
use crate::policy::{DistributionLoss, PolicyNet, StochasticPolicy};

pub type DivergenceFn = fn(&DiagGaussian<f64>, &DiagGaussian<f64>) -> Result<DivGrad<f64>>;

pub const QUADRATURE_TOL: f64 = 1e-6;
pub const CLOSED_FORM_GRAD_TOL: f64 = 1e-5;
pub const MONTE_CARLO_GRAD_TOL: f64 = 1e-3;
/// Number of named checks in the suite.
pub const SUITE_SIZE: usize = 15;

#[derive(Debug, Clone, Copy)]
pub struct GradcheckOptions {
    /// Random Gaussian pairs for the quadrature and parameter-gradient checks.
    pub pairs: usize,
    /// Random (network, state) draws for the input-gradient checks.
    pub nets: usize,
    pub js_samples: usize,
    pub seed: u64,
}

impl Default for GradcheckOptions {
    fn default() -> Self {
        Self {
            pairs: 200,
            nets: 100,
            js_samples: 128,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Worst error seen and the tolerance it was held to.
    pub worst: f64,
    pub tolerance: f64,
}

#[derive(Debug, Clone, Default)]
pub struct GradcheckSummary {
    pub checks: Vec<CheckResult>,
}

impl GradcheckSummary {
    pub fn total(&self) -> usize {
        self.checks.len()
    }

    pub fn passed(&self) -> usize {
        self.checks.iter().filter(|c| c.passed).count()
    }

    pub fn all_passed(&self) -> bool {
        self.passed() == self.total()
    }

    pub fn failures(&self) -> Vec<&CheckResult> {
        self.checks.iter().filter(|c| !c.passed).collect()
    }

    pub fn render(&self) -> String {
        let mut out = String::new();
        for c in &self.checks {
            out.push_str(&format!(
                "{} {:<32} worst {:.3e} (tol {:.0e})\n",
                if c.passed { "PASS" } else { "FAIL" },
                c.name,
                c.worst,
                c.tolerance
            ));
        }
        out.push_str(&format!("{}/{} checks passed\n", self.passed(), self.total()));
        out
    }

    fn push(&mut self, name: impl Into<String>, errors: impl IntoIterator<Item = f64>, tolerance: f64) {
        // NaN counts as a failure
        let worst = errors
            .into_iter()
            .fold(0.0f64, |w, e| if e.is_nan() || w.is_nan() { f64::NAN } else { w.max(e) });
        self.checks.push(CheckResult {
            name: name.into(),
            passed: worst <= tolerance,
            worst,
            tolerance,
        });
    }
}

fn random_gaussian(rng: &mut ChaCha8Rng, dim: usize) -> DiagGaussian<f64> {
    DiagGaussian {
        mean: (0..dim).map(|_| rng.random_range(-1.0..1.0)).collect(),
        std: (0..dim).map(|_| rng.random_range(0.3..2.0)).collect(),
    }
}

fn noise_rows(rng: &mut ChaCha8Rng, rows: usize, dim: usize) -> Vec<Vec<f64>> {
    (0..rows)
        .map(|_| (0..dim).map(|_| StandardNormal.sample(rng)).collect())
        .collect()
}

/// Full suite with the library's Bhattacharyya implementation.
pub fn gradcheck(opts: &GradcheckOptions) -> GradcheckSummary {
    gradcheck_with(opts, divergence::bhattacharyya)
}

/// Runs the suite with `bd` standing in for the Bhattacharyya closed form
/// in the quadrature, reference-value and parameter-gradient checks.
pub fn gradcheck_with(opts: &GradcheckOptions, bd: DivergenceFn) -> GradcheckSummary {
    let mut summary = GradcheckSummary::default();
    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let pairs: Vec<(DiagGaussian<f64>, DiagGaussian<f64>)> = (0..opts.pairs)
        .map(|i| {
            let dim = 1 + i % 2;
            (random_gaussian(&mut rng, dim), random_gaussian(&mut rng, dim))
        })
        .collect();

    let closed: [(DivergenceKind, DivergenceFn); 3] = [
        (DivergenceKind::Bhattacharyya, bd),
        (DivergenceKind::Kl, divergence::kl),
        (DivergenceKind::W2, divergence::w2),
    ];
    for (kind, f) in closed {
        let errs = pairs.iter().map(|(p, q)| {
            match (f(p, q), oracle::quadrature(p, q, kind)) {
                (Ok(c), Ok(n)) => (c.value - n).abs(),
                _ => f64::NAN,
            }
        });
        summary.push(format!("quadrature/{kind}"), errs.collect::<Vec<_>>(), QUADRATURE_TOL);
    }

    let unit = DiagGaussian {
        mean: vec![0.0],
        std: vec![1.0],
    };
    let shifted = DiagGaussian {
        mean: vec![1.0],
        std: vec![1.0],
    };
    for ((kind, f), expected) in closed.into_iter().zip([0.125, 0.5, 1.0]) {
        let err = f(&unit, &shifted).map_or(f64::NAN, |d| (d.value - expected).abs());
        summary.push(format!("reference/{kind}"), [err], 1e-12);
    }

    for (kind, f) in closed {
        let errs: Vec<f64> = pairs
            .iter()
            .map(|(p, q)| oracle::divergence_grad_error(p, q, f))
            .collect();
        summary.push(format!("param-grad/{kind}"), errs, CLOSED_FORM_GRAD_TOL);
    }
    let js_errs: Vec<f64> = pairs
        .iter()
        .take(opts.pairs.min(50))
        .map(|(p, q)| {
            let noise = noise_rows(&mut rng, opts.js_samples, p.dim());
            oracle::divergence_grad_error(p, q, |a, b| divergence::js_mc(a, b, &noise))
        })
        .collect();
    summary.push("param-grad/JS", js_errs, MONTE_CARLO_GRAD_TOL);

    input_gradient_checks(&mut summary, opts, &mut rng);
    summary
}

fn input_gradient_checks(summary: &mut GradcheckSummary, opts: &GradcheckOptions, rng: &mut ChaCha8Rng) {
    const OBS: usize = 6;
    const ACT: usize = 2;
    let names = ["SampledActionMSE", "BD", "KL", "JS", "W2"];
    let mut errs: Vec<Vec<f64>> = vec![Vec::new(); names.len()];
    for _ in 0..opts.nets {
        let mut net = PolicyNet::random(OBS, ACT, rng.random_range(-1.0..0.5), rng);
        // a larger output layer keeps the mean far from constant
        net.body.w_out.as_mut_slice().iter_mut().for_each(|w| *w *= 50.0);
        let s: Vec<f64> = (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let s0: Vec<f64> = (0..OBS).map(|_| rng.random_range(-1.0..1.0)).collect();
        let Ok(reference) = net.distribution(&s0) else {
            errs.iter_mut().for_each(|e| e.push(f64::NAN));
            continue;
        };
        let action: Vec<f64> = (0..ACT).map(|_| rng.random_range(-1.0..1.0)).collect();
        let heads: [LossHead<f64>; 5] = [
            LossHead::SampledActionMse {
                reference: action,
                noise: noise_rows(rng, 1, ACT),
            },
            LossHead::Bhattacharyya {
                reference: reference.clone(),
            },
            LossHead::Kl {
                reference: reference.clone(),
                reversed: false,
            },
            LossHead::Js {
                reference: reference.clone(),
                noise: noise_rows(rng, opts.js_samples, ACT),
            },
            LossHead::W2 { reference },
        ];
        for (i, head) in heads.iter().enumerate() {
            let e = oracle::input_grad_error(&net, &s, head as &dyn DistributionLoss<f64>).unwrap_or(f64::NAN);
            errs[i].push(e);
        }
    }
    for (name, e) in names.iter().zip(errs) {
        let tol = if *name == "JS" {
            MONTE_CARLO_GRAD_TOL
        } else {
            CLOSED_FORM_GRAD_TOL
        };
        summary.push(format!("input-grad/{name}"), e, tol);
    }
}
