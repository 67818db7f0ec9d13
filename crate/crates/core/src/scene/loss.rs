//! Photometric objective: an L1 / D-SSIM mix on the full-resolution render
//! plus the same mix between the subsampled render and the LR observation.

use crate::error::Result;
use crate::image::Image;
use crate::metrics::ssim_with_grad;

/// Area-average pooling; the same operator that derives LR images from HR.
pub fn subsample(image: &Image, factor: usize) -> Result<Image> {
    image.area_downsample(factor)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LossValue {
    pub total: f64,
    pub hr: f64,
    pub lr: f64,
}

/// Gradients of [`loss_all`] with respect to its two rendered inputs.
#[derive(Debug, Clone)]
pub struct LossGrad {
    pub render: Image,
    pub render_lr: Image,
}

pub fn l1(x: &Image, y: &Image) -> Result<f64> {
    x.mean_abs_diff(y)
}

/// `(1 - delta) * L1 + delta * (1 - SSIM) / 2` and its gradient in `x`.
pub fn photometric(x: &Image, y: &Image, delta: f64) -> Result<(f64, Image)> {
    x.ensure_same_shape(y, "photometric loss")?;
    let n = x.len() as f64;
    let l1 = x.mean_abs_diff(y)?;
    let w1 = (1.0 - delta) / n;
    let mut grad = x.zip_map(y, |a, b| {
        if a > b {
            w1
        } else if a < b {
            -w1
        } else {
            0.0
        }
    });
    let mut value = (1.0 - delta) * l1;
    if delta > 0.0 {
        let (s, gs) = ssim_with_grad(x, y)?;
        value += delta * (1.0 - s) / 2.0;
        for (g, d) in grad.data_mut().iter_mut().zip(gs.data()) {
            *g -= 0.5 * delta * d;
        }
    }
    Ok((value, grad))
}

/// Full objective for one view. `render_lr` is normally the subsampled render.
pub fn loss_all(
    render: &Image,
    hr_target: &Image,
    render_lr: &Image,
    lr_target: &Image,
    lambda: f64,
    delta: f64,
) -> Result<(LossValue, LossGrad)> {
    let (hr, g_hr) = photometric(render, hr_target, delta)?;
    let (lr, mut g_lr) = if lambda > 0.0 {
        photometric(render_lr, lr_target, delta)?
    } else {
        render_lr.ensure_same_shape(lr_target, "photometric loss")?;
        (0.0, Image::new(render_lr.width(), render_lr.height(), render_lr.channels()))
    };
    for g in g_lr.data_mut() {
        *g *= lambda;
    }
    Ok((
        LossValue {
            total: hr + lambda * lr,
            hr,
            lr,
        },
        LossGrad {
            render: g_hr,
            render_lr: g_lr,
        },
    ))
}

/// [`loss_all`] with the LR render taken as `subsample(render, factor)`; the
/// returned gradient folds the LR term back through the pooling adjoint.
pub fn loss_with_subsampling(
    render: &Image,
    hr_target: &Image,
    lr_target: Option<&Image>,
    factor: usize,
    lambda: f64,
    delta: f64,
) -> Result<(LossValue, Image)> {
    match lr_target {
        Some(lr) if lambda > 0.0 => {
            let render_lr = subsample(render, factor)?;
            let (v, g) = loss_all(render, hr_target, &render_lr, lr, lambda, delta)?;
            let mut grad = g.render;
            let back = g.render_lr.area_downsample_adjoint(factor);
            for (a, b) in grad.data_mut().iter_mut().zip(back.data()) {
                *a += b;
            }
            Ok((v, grad))
        }
        _ => {
            let (hr, grad) = photometric(render, hr_target, delta)?;
            Ok((
                LossValue {
                    total: hr,
                    hr,
                    lr: 0.0,
                },
                grad,
            ))
        }
    }
}
