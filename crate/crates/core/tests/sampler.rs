use proptest::prelude::*;
use splatsr::denoiser::{Denoiser, DenoiserSpec};
use splatsr::diffusion::{
    estimate_x0, forward_diffuse, guided_denoise_step, posterior_mean, sample_noise, NoiseSchedule,
};
use splatsr::rng;
use splatsr::Image;

/// Textbook deterministic DDIM written from the betas alone.
fn textbook_ddim(betas: &[f64], x_t: &[f64], t: usize, eps: &[f64]) -> Vec<f64> {
    let prod = |k: usize| betas[..k].iter().fold(1.0, |acc, b| acc * (1.0 - b));
    let (ab, ab_prev) = (prod(t), prod(t - 1));
    x_t.iter()
        .zip(eps)
        .map(|(x, e)| {
            let x0 = (x - (1.0 - ab).sqrt() * e) / ab.sqrt();
            ab_prev.sqrt() * x0 + (1.0 - ab_prev).sqrt() * e
        })
        .collect()
}

fn max_rel(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y).abs() / y.abs().max(1.0))
        .fold(0.0, f64::max)
}

#[test]
fn guided_step_reproduces_textbook_ddim_trajectory() {
    for schedule in [
        NoiseSchedule::strided(4, 0.0).unwrap(),
        NoiseSchedule::linear(4, 0.1, 0.4, 0.0).unwrap(),
    ] {
        let truth = Image::from_fn(12, 10, 3, |x, y, c| ((x * 7 + y * 3 + c) % 11) as f64 / 10.0);
        let d = Denoiser::from_spec(&DenoiserSpec::oracle(0.3, 5), Some(vec![truth])).unwrap();
        let cond = Image::new(6, 5, 3);
        let mut r = rng::seeded(9, &[]);
        let mut x = sample_noise((12, 10, 3), &mut r);
        let mut reference = x.data().to_vec();
        for t in (1..=4).rev() {
            let eps = d.predict_noise(&x, t, &cond, 0, &schedule).unwrap();
            let x0 = estimate_x0(&x, &eps, t, &schedule).unwrap();
            let eps_ref = d
                .predict_noise(&Image::from_vec(12, 10, 3, reference.clone()).unwrap(), t, &cond, 0, &schedule)
                .unwrap();
            x = guided_denoise_step(&x, &x0, &eps, t, &schedule, &mut r).unwrap();
            reference = textbook_ddim(schedule.betas(), &reference, t, eps_ref.data());
            let err = max_rel(x.data(), &reference);
            assert!(err < 1e-6, "t={t} err={err}");
        }
    }
}

#[test]
fn terminal_step_returns_reference() {
    let s = NoiseSchedule::linear(4, 0.1, 0.4, 1.0).unwrap();
    let mut r = rng::seeded(1, &[]);
    let x = sample_noise((4, 4, 3), &mut r);
    let eps = sample_noise((4, 4, 3), &mut r);
    let x0 = sample_noise((4, 4, 3), &mut r);
    assert_eq!(guided_denoise_step(&x, &x0, &eps, 1, &s, &mut r).unwrap(), x0);
}

#[test]
fn forward_diffuse_spot_value() {
    // one step with beta 0.75 gives abar = 0.25
    let s = NoiseSchedule::from_betas(vec![0.75], 0.0).unwrap();
    let ones = Image::filled(2, 2, 1, 1.0);
    let xt = forward_diffuse(&ones, 1, &ones, &s).unwrap();
    assert!(xt.data().iter().all(|v| (v - (0.5 + 0.75f64.sqrt())).abs() < 1e-12));
}

#[test]
fn posterior_mean_spot_value() {
    let s = NoiseSchedule::linear(4, 0.1, 0.4, 0.0).unwrap();
    // betas 0.1, 0.2, 0.3, 0.4; alpha_2 = 0.8
    let x = Image::filled(1, 1, 1, 1.0);
    let e = Image::filled(1, 1, 1, 0.5);
    let m = posterior_mean(&x, &e, 2, &s).unwrap();
    assert!((m.data()[0] - (1.0 - 0.2 * 0.5) / 0.8f64.sqrt()).abs() < 1e-12);
}

proptest! {
    #[test]
    fn round_trip_recovers_x0(seed in 0u64..1000, t in 1usize..=4, lo in 0.01f64..0.2, span in 0.0f64..0.3) {
        let s = NoiseSchedule::linear(4, lo, lo + span, 0.0).unwrap();
        let mut r = rng::seeded(seed, &[]);
        let x0 = sample_noise((5, 4, 3), &mut r);
        let eps = sample_noise((5, 4, 3), &mut r);
        let back = estimate_x0(&forward_diffuse(&x0, t, &eps, &s).unwrap(), &eps, t, &s).unwrap();
        prop_assert!(max_rel(back.data(), x0.data()) < 1e-6);
    }

    #[test]
    fn schedule_invariants(steps in 1usize..12, lo in 1e-4f64..0.3, span in 0.0f64..0.4, eta in 0.0f64..=1.0) {
        let s = NoiseSchedule::linear(steps, lo, (lo + span).min(0.99), eta).unwrap();
        for t in 1..=steps {
            prop_assert!((s.alpha_bar(t) / s.alpha_bar(t - 1) - s.alpha(t)).abs() < 1e-12);
            prop_assert!(s.alpha_bar(t) < s.alpha_bar(t - 1));
            prop_assert!(s.sigma(t) >= 0.0);
            prop_assert!(1.0 - s.alpha_bar(t - 1) - s.sigma(t).powi(2) >= -1e-12);
        }
    }

    #[test]
    fn substituted_update_matches(seed in 0u64..1000, t in 1usize..=4) {
        let s = NoiseSchedule::strided(4, 0.0).unwrap();
        let mut r = rng::seeded(seed, &[]);
        let xt = sample_noise((4, 3, 3), &mut r);
        let eps = sample_noise((4, 3, 3), &mut r);
        let x0 = estimate_x0(&xt, &eps, t, &s).unwrap();
        let got = guided_denoise_step(&xt, &x0, &eps, t, &s, &mut r).unwrap();
        let (ab, abp) = (s.alpha_bar(t), s.alpha_bar(t - 1));
        let direct: Vec<f64> = xt.data().iter().zip(eps.data()).map(|(x, e)| {
            (abp / ab).sqrt() * x + ((1.0 - abp).sqrt() - (abp * (1.0 - ab) / ab).sqrt()) * e
        }).collect();
        prop_assert!(max_rel(got.data(), &direct) < 1e-6);
    }

    #[test]
    fn stochastic_step_is_seed_deterministic(seed in 0u64..1000) {
        let s = NoiseSchedule::strided(4, 1.0).unwrap();
        let mut r = rng::seeded(seed, &[1]);
        let xt = sample_noise((4, 3, 3), &mut r);
        let eps = sample_noise((4, 3, 3), &mut r);
        let a = guided_denoise_step(&xt, &xt, &eps, 3, &s, &mut rng::seeded(seed, &[2])).unwrap();
        let b = guided_denoise_step(&xt, &xt, &eps, 3, &s, &mut rng::seeded(seed, &[2])).unwrap();
        prop_assert_eq!(a, b);
    }
}
