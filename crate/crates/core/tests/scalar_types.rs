use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use polattack::attacks::{run_attack, AttackConfig, AttackKind};
use polattack::divergence::{bhattacharyya, kl, w2};
use polattack::{DiagGaussianF32, DiagGaussianF64, PolicyNetF32, PolicyNetF64, StochasticPolicy};

fn to_f32(v: &[f64]) -> Vec<f32> {
    v.iter().map(|x| *x as f32).collect()
}

#[test]
fn divergences_agree_across_precisions() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    for _ in 0..100 {
        let dim = rng.random_range(1..=4);
        let mut draw = |lo: f64, hi: f64| -> Vec<f64> { (0..dim).map(|_| rng.random_range(lo..hi)).collect() };
        let (pm, ps, qm, qs) = (draw(-1.0, 1.0), draw(0.3, 2.0), draw(-1.0, 1.0), draw(0.3, 2.0));
        let p64 = DiagGaussianF64::new(pm.clone(), ps.clone()).unwrap();
        let q64 = DiagGaussianF64::new(qm.clone(), qs.clone()).unwrap();
        let p32 = DiagGaussianF32::new(to_f32(&pm), to_f32(&ps)).unwrap();
        let q32 = DiagGaussianF32::new(to_f32(&qm), to_f32(&qs)).unwrap();
        let pairs = [
            (bhattacharyya(&p64, &q64).unwrap().value, bhattacharyya(&p32, &q32).unwrap().value),
            (kl(&p64, &q64).unwrap().value, kl(&p32, &q32).unwrap().value),
            (w2(&p64, &q64).unwrap().value, w2(&p32, &q32).unwrap().value),
        ];
        for (a, b) in pairs {
            assert!((a - b as f64).abs() <= 1e-4 * a.abs().max(1.0), "{a} vs {b}");
        }
    }
}

#[test]
fn f32_attacks_stay_in_ball() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut net = PolicyNetF32::random(8, 2, -0.5, &mut rng);
    net.body.w_out.as_mut_slice().iter_mut().for_each(|w| *w *= 50.0);
    let s: Vec<f32> = (0..8).map(|_| rng.random_range(-1.0..1.0)).collect();
    let cfg = AttackConfig {
        iters: 20,
        ..AttackConfig::default()
    };
    for kind in AttackKind::ALL {
        let adv = run_attack(kind, None, &net, &s, &cfg).unwrap();
        // f32 rounding of s + δ can land one ulp outside the f64 budget
        assert!(adv.linf_distance(&s) as f64 <= cfg.epsilon + 1e-6, "{kind}");
    }
}

#[test]
fn f32_and_f64_policies_give_close_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let net64 = PolicyNetF64::random(5, 3, -0.5, &mut rng);
    let text = polattack::weights::policy_to_json(&net64).unwrap();
    let net32: PolicyNetF32 = polattack::weights::policy_from_json(&text).unwrap();
    let s: Vec<f64> = (0..5).map(|_| rng.random_range(-1.0..1.0)).collect();
    let d64 = net64.distribution(&s).unwrap();
    let d32 = net32.distribution(&to_f32(&s)).unwrap();
    for (a, b) in d64.mean.iter().zip(&d32.mean) {
        assert!((a - *b as f64).abs() < 1e-5);
    }
}
