use std::hint::black_box;

use criterion::{criterion_group, criterion_main, Criterion};
use splatsr::data::{orbit_cameras, patch_sphere_scene};
use splatsr::diffusion::{estimate_x0, guided_denoise_step, sample_noise, NoiseSchedule};
use splatsr::metrics::{ssim, ssim_with_grad};
use splatsr::rng;
use splatsr::scene::render::{backward, forward};
use splatsr::scene::RenderSettings;
use splatsr::Image;

fn render_kernels(c: &mut Criterion) {
    let scene = patch_sphere_scene(300, 0).unwrap();
    for size in [32usize, 64] {
        let cam = orbit_cameras(1, 3.0, 25.0, 0.5 * size as f64 * 3.0 / 0.75, size).unwrap().remove(0);
        let settings = RenderSettings::default();
        c.bench_function(&format!("render_forward_{size}px_300g"), |b| {
            b.iter(|| forward(black_box(&scene), &cam, &settings))
        });
        let fwd = forward(&scene, &cam, &settings);
        let d_image = Image::filled(size, size, 3, 1e-2);
        c.bench_function(&format!("render_backward_{size}px_300g"), |b| {
            b.iter(|| backward(black_box(&scene), &cam, &fwd, &d_image))
        });
    }
}

fn ssim_kernels(c: &mut Criterion) {
    let a = Image::from_fn(64, 64, 3, |x, y, ch| ((x * 7 + y * 3 + ch) % 11) as f64 / 10.0);
    let b = a.map(|v| (v * 0.9 + 0.05).min(1.0));
    c.bench_function("ssim_64px", |bench| bench.iter(|| ssim(black_box(&a), &b).unwrap()));
    c.bench_function("ssim_with_grad_64px", |bench| bench.iter(|| ssim_with_grad(black_box(&a), &b).unwrap()));
}

fn sampler_kernels(c: &mut Criterion) {
    let schedule = NoiseSchedule::strided(4, 0.0).unwrap();
    let mut r = rng::seeded(0, &[]);
    let x_t = sample_noise((64, 64, 3), &mut r);
    let eps = sample_noise((64, 64, 3), &mut r);
    let x0 = estimate_x0(&x_t, &eps, 3, &schedule).unwrap();
    c.bench_function("guided_denoise_step_64px", |b| {
        b.iter(|| guided_denoise_step(black_box(&x_t), &x0, &eps, 3, &schedule, &mut r).unwrap())
    });
}

criterion_group!(kernels, render_kernels, ssim_kernels, sampler_kernels);
criterion_main!(kernels);
