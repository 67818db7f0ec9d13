//! Image/latent codecs. The decoder blends the clean latent estimate with the
//! upsampled LR conditioning so outputs stay faithful to the observations.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::image::{Image, Latent};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CodecKind {
    /// Pixel-space latents.
    #[default]
    Identity,
    /// Area-pooled latents, bilinear decoding.
    Decimate,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CodecSpec {
    pub kind: CodecKind,
    pub factor: usize,
    pub latent_channels: usize,
}

impl Default for CodecSpec {
    fn default() -> Self {
        Self::identity()
    }
}

impl CodecSpec {
    pub fn identity() -> Self {
        Self {
            kind: CodecKind::Identity,
            factor: 1,
            latent_channels: 3,
        }
    }

    pub fn decimate(factor: usize) -> Result<Self> {
        if factor == 0 {
            return Err(Error::param("factor", "must be at least 1"));
        }
        Ok(Self {
            kind: CodecKind::Decimate,
            factor,
            latent_channels: 3,
        })
    }

    fn pool(&self) -> usize {
        match self.kind {
            CodecKind::Identity => 1,
            CodecKind::Decimate => self.factor,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.kind == CodecKind::Decimate && self.factor == 0 {
            return Err(Error::param("factor", "must be at least 1"));
        }
        if self.latent_channels != 3 {
            return Err(Error::param("latent_channels", "only RGB latents are supported"));
        }
        Ok(())
    }

    /// Latent shape for an image of the given size.
    pub fn latent_shape(&self, width: usize, height: usize) -> Result<(usize, usize, usize)> {
        let f = self.pool();
        if !width.is_multiple_of(f) || !height.is_multiple_of(f) {
            return Err(Error::Shape(format!(
                "{width}x{height} is not divisible by codec factor {f}"
            )));
        }
        Ok((width / f, height / f, self.latent_channels))
    }

    /// Image shape decoded from a latent of the given size.
    pub fn image_shape(&self, latent: &Latent) -> (usize, usize) {
        let f = self.pool();
        (latent.width() * f, latent.height() * f)
    }
}

pub fn encode(image: &Image, spec: &CodecSpec) -> Result<Latent> {
    spec.validate()?;
    match spec.kind {
        CodecKind::Identity => Ok(image.clone()),
        CodecKind::Decimate => image.area_downsample(spec.factor),
    }
}

/// `clamp((1 - w) * up(x0_hat) + w * up(condition))`, where `up` resizes to
/// the decoded image size (bilinear).
pub fn decode(x0_hat: &Latent, condition: &Latent, spec: &CodecSpec, faithfulness: f64) -> Result<Image> {
    spec.validate()?;
    if !(0.0..=1.0).contains(&faithfulness) {
        return Err(Error::param("faithfulness", format!("{faithfulness} is outside [0, 1]")));
    }
    if x0_hat.channels() != condition.channels() {
        return Err(Error::Shape(format!(
            "latent has {} channels, condition has {}",
            x0_hat.channels(),
            condition.channels()
        )));
    }
    let (w, h) = spec.image_shape(x0_hat);
    let base = match spec.kind {
        CodecKind::Identity => x0_hat.clone(),
        CodecKind::Decimate => x0_hat.resize_bilinear(w, h),
    };
    if faithfulness == 0.0 {
        return Ok(base.clamp01());
    }
    let cond = if (condition.width(), condition.height()) == (w, h) {
        condition.clone()
    } else {
        condition.resize_bilinear(w, h)
    };
    Ok(base
        .zip_map(&cond, |a, b| (1.0 - faithfulness) * a + faithfulness * b)
        .clamp01())
}

/// Mean absolute error of an encode/decode round trip without conditioning.
pub fn round_trip_error(image: &Image, spec: &CodecSpec) -> Result<f64> {
    let z = encode(image, spec)?;
    decode(&z, &z, spec, 0.0)?.mean_abs_diff(image)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn checker(n: usize) -> Image {
        Image::from_fn(n, n, 3, |x, y, _| ((x + y) % 2) as f64)
    }

    #[test]
    fn encode_examples() {
        let c = checker(6);
        assert_eq!(encode(&c, &CodecSpec::identity()).unwrap(), c);
        let d2 = CodecSpec::decimate(2).unwrap();
        let k = Image::filled(8, 6, 3, 0.3);
        assert_eq!(encode(&k, &d2).unwrap(), Image::filled(4, 3, 3, 0.3));
        let b = Image::from_fn(2, 2, 3, |x, y, _| ((x + y) % 2) as f64);
        assert_eq!(encode(&b, &d2).unwrap().data(), &[0.5; 3]);
        assert!(encode(&Image::new(5, 4, 3), &d2).is_err());
    }

    #[test]
    fn decode_examples() {
        let id = CodecSpec::identity();
        let x = checker(8).map(|v| 1.2 * v - 0.1);
        assert_eq!(decode(&x, &Image::new(4, 4, 3), &id, 0.0).unwrap(), x.clamp01());
        let e = Image::from_fn(4, 4, 3, |x, y, c| (x + 2 * y + c) as f64 / 12.0);
        assert_eq!(decode(&x, &e, &id, 1.0).unwrap(), e.resize_bilinear(8, 8).clamp01());
        let x0 = Image::filled(8, 8, 3, 0.8);
        let e = Image::filled(4, 4, 3, 0.4);
        let out = decode(&x0, &e, &id, 0.25).unwrap();
        assert!(out.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
        let d2 = CodecSpec::decimate(2).unwrap();
        let out = decode(&Image::filled(4, 4, 3, 0.8), &e, &d2, 0.25).unwrap();
        assert_eq!(out.shape(), (8, 8, 3));
        assert!(out.data().iter().all(|v| (v - 0.7).abs() < 1e-12));
    }

    #[test]
    fn round_trip_examples() {
        assert_eq!(round_trip_error(&checker(8), &CodecSpec::identity()).unwrap(), 0.0);
        let d2 = CodecSpec::decimate(2).unwrap();
        assert!(round_trip_error(&Image::filled(8, 8, 3, 0.6), &d2).unwrap() < 1e-12);
        assert!(round_trip_error(&checker(8), &d2).unwrap() > 0.0);
    }
}
