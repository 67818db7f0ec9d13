//! Structural similarity with an 11x11 Gaussian window (sigma 1.5) and the
//! usual stability constants, evaluated over the valid region (every window
//! fully inside the image) and averaged over channels.

use crate::error::Result;
use crate::image::Image;

pub const WINDOW: usize = 11;
pub const WINDOW_SIGMA: f64 = 1.5;
const C1: f64 = 0.01 * 0.01;
const C2: f64 = 0.03 * 0.03;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SsimValue {
    pub value: f64,
    /// The image was smaller than the window, which was shrunk to fit.
    pub cropped: bool,
}

fn kernel(size: usize) -> Vec<f64> {
    let r = (size / 2) as f64;
    let k: Vec<f64> = (0..size)
        .map(|i| {
            let d = i as f64 - r;
            (-d * d / (2.0 * WINDOW_SIGMA * WINDOW_SIGMA)).exp()
        })
        .collect();
    let s: f64 = k.iter().sum();
    k.into_iter().map(|v| v / s).collect()
}

fn window_for(w: usize, h: usize) -> (usize, bool) {
    let m = w.min(h);
    if m >= WINDOW {
        (WINDOW, false)
    } else {
        let s = if m % 2 == 1 { m } else { m - 1 };
        (s.max(1), true)
    }
}

/// Valid-mode separable correlation of one plane.
fn filter_valid(plane: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..h {
        let row = &plane[y * w..(y + 1) * w];
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * row[x + j];
            }
            tmp[y * ow + x] = acc;
        }
    }
    let mut out = vec![0.0; ow * oh];
    for y in 0..oh {
        for x in 0..ow {
            let mut acc = 0.0;
            for (j, kj) in k.iter().enumerate() {
                acc += kj * tmp[(y + j) * ow + x];
            }
            out[y * ow + x] = acc;
        }
    }
    out
}

/// Adjoint of [`filter_valid`]: scatters valid-region values back to full size.
fn filter_valid_adjoint(g: &[f64], w: usize, h: usize, k: &[f64]) -> Vec<f64> {
    let n = k.len();
    let (ow, oh) = (w - n + 1, h - n + 1);
    let mut tmp = vec![0.0; ow * h];
    for y in 0..oh {
        for x in 0..ow {
            let v = g[y * ow + x];
            for (j, kj) in k.iter().enumerate() {
                tmp[(y + j) * ow + x] += kj * v;
            }
        }
    }
    let mut out = vec![0.0; w * h];
    for y in 0..h {
        for x in 0..ow {
            let v = tmp[y * ow + x];
            for (j, kj) in k.iter().enumerate() {
                out[y * w + x + j] += kj * v;
            }
        }
    }
    out
}

fn plane(img: &Image, c: usize) -> Vec<f64> {
    img.data()
        .iter()
        .skip(c)
        .step_by(img.channels())
        .copied()
        .collect()
}

struct Stats {
    mx: Vec<f64>,
    my: Vec<f64>,
    vx: Vec<f64>,
    vy: Vec<f64>,
    cxy: Vec<f64>,
}

fn local_stats(x: &[f64], y: &[f64], w: usize, h: usize, k: &[f64]) -> Stats {
    let xx: Vec<f64> = x.iter().map(|v| v * v).collect();
    let yy: Vec<f64> = y.iter().map(|v| v * v).collect();
    let xy: Vec<f64> = x.iter().zip(y).map(|(a, b)| a * b).collect();
    let mx = filter_valid(x, w, h, k);
    let my = filter_valid(y, w, h, k);
    let exx = filter_valid(&xx, w, h, k);
    let eyy = filter_valid(&yy, w, h, k);
    let exy = filter_valid(&xy, w, h, k);
    let n = mx.len();
    let mut vx = vec![0.0; n];
    let mut vy = vec![0.0; n];
    let mut cxy = vec![0.0; n];
    for i in 0..n {
        vx[i] = exx[i] - mx[i] * mx[i];
        vy[i] = eyy[i] - my[i] * my[i];
        cxy[i] = exy[i] - mx[i] * my[i];
    }
    Stats { mx, my, vx, vy, cxy }
}

pub fn ssim(a: &Image, b: &Image) -> Result<SsimValue> {
    a.ensure_same_shape(b, "ssim")?;
    let (w, h, ch) = a.shape();
    let (size, cropped) = window_for(w, h);
    let k = kernel(size);
    let mut total = 0.0;
    for c in 0..ch {
        let st = local_stats(&plane(a, c), &plane(b, c), w, h, &k);
        let n = st.mx.len();
        let mut acc = 0.0;
        for i in 0..n {
            let (mx, my) = (st.mx[i], st.my[i]);
            acc += ((2.0 * mx * my + C1) * (2.0 * st.cxy[i] + C2))
                / ((mx * mx + my * my + C1) * (st.vx[i] + st.vy[i] + C2));
        }
        total += acc / n as f64;
    }
    Ok(SsimValue {
        value: total / ch as f64,
        cropped,
    })
}

/// SSIM of `x` against the fixed reference `y`, with its gradient in `x`.
pub fn ssim_with_grad(x: &Image, y: &Image) -> Result<(f64, Image)> {
    x.ensure_same_shape(y, "ssim")?;
    let (w, h, ch) = x.shape();
    let (size, _) = window_for(w, h);
    let k = kernel(size);
    let mut grad = Image::new(w, h, ch);
    let mut total = 0.0;
    for c in 0..ch {
        let xp = plane(x, c);
        let yp = plane(y, c);
        let st = local_stats(&xp, &yp, w, h, &k);
        let n = st.mx.len();
        let norm = 1.0 / (n * ch) as f64;
        let mut g_m = vec![0.0; n];
        let mut g_xx = vec![0.0; n];
        let mut g_xy = vec![0.0; n];
        for i in 0..n {
            let (mx, my) = (st.mx[i], st.my[i]);
            let a1 = 2.0 * mx * my + C1;
            let a2 = 2.0 * st.cxy[i] + C2;
            let b1 = mx * mx + my * my + C1;
            let b2 = st.vx[i] + st.vy[i] + C2;
            let s = a1 * a2 / (b1 * b2);
            total += s * norm;
            let d_mx = 2.0 * my * a2 / (b1 * b2) - s * 2.0 * mx / b1;
            let d_vx = -s / b2;
            let d_cxy = 2.0 * a1 / (b1 * b2);
            // vx = E[x^2] - mx^2, cxy = E[xy] - mx my
            g_m[i] = norm * (d_mx - 2.0 * mx * d_vx - my * d_cxy);
            g_xx[i] = norm * d_vx;
            g_xy[i] = norm * d_cxy;
        }
        let am = filter_valid_adjoint(&g_m, w, h, &k);
        let axx = filter_valid_adjoint(&g_xx, w, h, &k);
        let axy = filter_valid_adjoint(&g_xy, w, h, &k);
        for i in 0..w * h {
            grad.data_mut()[i * ch + c] = am[i] + 2.0 * xp[i] * axx[i] + yp[i] * axy[i];
        }
    }
    Ok((total, grad))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(w: usize, h: usize, cell: usize) -> Image {
        Image::from_fn(w, h, 1, |x, y, _| ((x / cell + y / cell) % 2) as f64)
    }

    /// Direct 2D-window SSIM, written independently of the separable path.
    fn brute_ssim(a: &Image, b: &Image) -> f64 {
        let (w, h, ch) = a.shape();
        let r = WINDOW / 2;
        let mut wts = [[0.0; WINDOW]; WINDOW];
        let mut s = 0.0;
        for (i, row) in wts.iter_mut().enumerate() {
            for (j, v) in row.iter_mut().enumerate() {
                let (di, dj) = (i as f64 - r as f64, j as f64 - r as f64);
                *v = (-(di * di + dj * dj) / (2.0 * 1.5 * 1.5)).exp();
                s += *v;
            }
        }
        let mut total = 0.0;
        let mut count = 0usize;
        for c in 0..ch {
            for cy in r..h - r {
                for cx in r..w - r {
                    let (mut mx, mut my, mut sxx, mut syy, mut sxy) = (0.0, 0.0, 0.0, 0.0, 0.0);
                    for i in 0..WINDOW {
                        for j in 0..WINDOW {
                            let wt = wts[i][j] / s;
                            let p = a.get(cx + j - r, cy + i - r, c);
                            let q = b.get(cx + j - r, cy + i - r, c);
                            mx += wt * p;
                            my += wt * q;
                            sxx += wt * p * p;
                            syy += wt * q * q;
                            sxy += wt * p * q;
                        }
                    }
                    let vx = sxx - mx * mx;
                    let vy = syy - my * my;
                    let cxy = sxy - mx * my;
                    total += ((2.0 * mx * my + C1) * (2.0 * cxy + C2))
                        / ((mx * mx + my * my + C1) * (vx + vy + C2));
                    count += 1;
                }
            }
        }
        total / count as f64
    }

    fn blur3(img: &Image) -> Image {
        let (w, h, _) = img.shape();
        Image::from_fn(w, h, 1, |x, y, _| {
            let mut acc = 0.0;
            let mut n = 0.0;
            for dy in -1i64..=1 {
                for dx in -1i64..=1 {
                    let (xx, yy) = (x as i64 + dx, y as i64 + dy);
                    if xx >= 0 && yy >= 0 && (xx as usize) < w && (yy as usize) < h {
                        acc += img.get(xx as usize, yy as usize, 0);
                        n += 1.0;
                    }
                }
            }
            acc / n
        })
    }

    #[test]
    fn identical_images_score_one() {
        let a = Image::from_fn(20, 16, 3, |x, y, c| ((x * 3 + y * 5 + c) % 7) as f64 / 7.0);
        let v = ssim(&a, &a).unwrap();
        assert!((v.value - 1.0).abs() < 1e-12);
        assert!(!v.cropped);
    }

    #[test]
    fn negative_image_scores_below_one() {
        let a = checker(16, 16, 3);
        let neg = a.map(|v| 1.0 - v);
        assert!(ssim(&a, &neg).unwrap().value < 1.0);
    }

    #[test]
    fn checkerboard_vs_blur_matches_references() {
        let a = checker(32, 32, 4);
        let b = blur3(&a);
        let v = ssim(&a, &b).unwrap().value;
        assert!((v - brute_ssim(&a, &b)).abs() < 1e-12);
        // frozen from skimage.metrics.structural_similarity(a, b, data_range=1,
        // gaussian_weights=True, sigma=1.5, use_sample_covariance=False)
        assert!((v - SKIMAGE_CHECKER_BLUR).abs() < 1e-4, "ssim={v}");
    }

    const SKIMAGE_CHECKER_BLUR: f64 = 0.6665156499945344;

    #[test]
    fn small_images_are_flagged() {
        let a = checker(8, 8, 2);
        let v = ssim(&a, &a.map(|x| 0.5 * x)).unwrap();
        assert!(v.cropped);
        assert!(v.value.is_finite());
    }

    #[test]
    fn gradient_matches_finite_differences() {
        let x = Image::from_fn(14, 13, 2, |x, y, c| 0.3 + 0.2 * ((x * 7 + y * 3 + c) as f64).sin());
        let y = Image::from_fn(14, 13, 2, |x, y, c| 0.5 + 0.3 * ((x + 2 * y + 5 * c) as f64).cos());
        let (v, g) = ssim_with_grad(&x, &y).unwrap();
        assert!((v - ssim(&x, &y).unwrap().value).abs() < 1e-12);
        let h = 1e-6;
        for idx in [0, 17, 100, 211, 363] {
            let mut xp = x.clone();
            xp.data_mut()[idx] += h;
            let mut xm = x.clone();
            xm.data_mut()[idx] -= h;
            let fd = (ssim(&xp, &y).unwrap().value - ssim(&xm, &y).unwrap().value) / (2.0 * h);
            assert!((fd - g.data()[idx]).abs() < 1e-7, "idx {idx}: fd {fd} vs {}", g.data()[idx]);
        }
    }
}
