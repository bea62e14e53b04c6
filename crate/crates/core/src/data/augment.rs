use rand::Rng;
use serde::{Deserialize, Serialize};

use super::imageops::{crop, flip_horizontal, resize_bilinear, warp};
use super::Sample;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// Random photometric and geometric perturbations. Every range is symmetric
/// around the identity, and a policy whose ranges are all zero (and
/// `flip_h = false`) leaves images untouched.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AugmentPolicy {
    pub rotate_max_deg: f64,
    pub flip_h: bool,
    /// Maximum shift as a fraction of the image side.
    pub translate_max_frac: f64,
    /// Zoom factor drawn from `[1 − scale_range, 1 + scale_range]`.
    pub scale_range: f64,
    /// Additive brightness offset drawn from `[−delta, delta]`.
    pub brightness_delta: f64,
    /// Up to this fraction of the side is cropped away, then resized back.
    pub crop_frac: f64,
    /// Contrast factor drawn from `[1 − jitter, 1 + jitter]` around the image mean.
    pub color_jitter: f64,
    /// Leave label-0 samples unchanged.
    pub positives_only: bool,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        Self {
            rotate_max_deg: 10.0,
            flip_h: true,
            translate_max_frac: 0.05,
            scale_range: 0.05,
            brightness_delta: 0.05,
            crop_frac: 0.1,
            color_jitter: 0.1,
            positives_only: false,
        }
    }
}

impl AugmentPolicy {
    pub fn identity() -> Self {
        Self {
            rotate_max_deg: 0.0,
            flip_h: false,
            translate_max_frac: 0.0,
            scale_range: 0.0,
            brightness_delta: 0.0,
            crop_frac: 0.0,
            color_jitter: 0.0,
            positives_only: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ranges = [
            ("rotate_max_deg", self.rotate_max_deg),
            ("translate_max_frac", self.translate_max_frac),
            ("scale_range", self.scale_range),
            ("brightness_delta", self.brightness_delta),
            ("crop_frac", self.crop_frac),
            ("color_jitter", self.color_jitter),
        ];
        for (name, v) in ranges {
            if !v.is_finite() || v < 0.0 {
                return Err(Error::Config(format!("augment.{name} must be a finite non-negative number, got {v}")));
            }
        }
        if self.crop_frac >= 1.0 {
            return Err(Error::Config(format!(
                "augment.crop_frac = {} would crop the whole image away",
                self.crop_frac
            )));
        }
        if self.scale_range >= 1.0 {
            return Err(Error::Config("augment.scale_range must be below 1".into()));
        }
        Ok(())
    }
}

fn symmetric<R: Rng>(rng: &mut R, max: f64) -> f64 {
    if max > 0.0 {
        rng.gen_range(-max..=max)
    } else {
        0.0
    }
}

/// Applies rotate → flip → translate → scale → brightness → colour jitter →
/// crop, then clamps to [0, 1]. Label and patient id are carried over.
pub fn augment<R: Rng>(sample: &Sample, policy: &AugmentPolicy, rng: &mut R) -> Result<Sample> {
    policy.validate()?;
    if policy.positives_only && !sample.is_positive() {
        return Ok(sample.clone());
    }
    let (h, w) = (sample.height(), sample.width());
    let (cy, cx) = ((h as f64 - 1.0) / 2.0, (w as f64 - 1.0) / 2.0);
    let mut img = sample.image.detached();

    let angle = symmetric(rng, policy.rotate_max_deg).to_radians();
    if angle != 0.0 {
        let (s, c) = angle.sin_cos();
        img = warp(&img, h, w, |y, x| {
            let (dy, dx) = (y - cy, x - cx);
            (c * dy - s * dx + cy, s * dy + c * dx + cx)
        });
    }

    if policy.flip_h && rng.gen_bool(0.5) {
        img = flip_horizontal(&img);
    }

    let ty = symmetric(rng, policy.translate_max_frac) * h as f64;
    let tx = symmetric(rng, policy.translate_max_frac) * w as f64;
    if ty != 0.0 || tx != 0.0 {
        img = warp(&img, h, w, |y, x| (y - ty, x - tx));
    }

    let zoom = 1.0 + symmetric(rng, policy.scale_range);
    if zoom != 1.0 {
        img = warp(&img, h, w, |y, x| ((y - cy) / zoom + cy, (x - cx) / zoom + cx));
    }

    let delta = symmetric(rng, policy.brightness_delta);
    if delta != 0.0 {
        img.data_mut().iter_mut().for_each(|v| *v += delta);
    }

    let contrast = 1.0 + symmetric(rng, policy.color_jitter);
    if contrast != 1.0 {
        let mean = img.data().iter().sum::<f64>() / img.len() as f64;
        img.data_mut().iter_mut().for_each(|v| *v = (*v - mean) * contrast + mean);
    }

    let cut = if policy.crop_frac > 0.0 { rng.gen_range(0.0..=policy.crop_frac) } else { 0.0 };
    let (ch, cw) = (
        ((h as f64 * (1.0 - cut)).round() as usize).max(1),
        ((w as f64 * (1.0 - cut)).round() as usize).max(1),
    );
    if ch < h || cw < w {
        let top = rng.gen_range(0..=h - ch);
        let left = rng.gen_range(0..=w - cw);
        img = resize_bilinear(&crop(&img, top, left, ch, cw), h, w);
    }

    img.data_mut().iter_mut().for_each(|v| *v = v.clamp(0.0, 1.0));
    Ok(Sample {
        image: img,
        label: sample.label,
        patient_id: sample.patient_id.clone(),
        source: sample.source,
    })
}

/// Offline positive-class expansion: appends `copies` augmented variants of
/// every positive sample, each drawn from its own counter-addressed stream.
pub fn expand_positives(samples: &[Sample], policy: &AugmentPolicy, copies: usize, seed: u64) -> Result<Vec<Sample>> {
    let mut out = samples.to_vec();
    for (i, s) in samples.iter().enumerate().filter(|(_, s)| s.is_positive()) {
        for k in 0..copies {
            let mut r = rng::substream(seed, streams::AUGMENT, ((i as u64) << 16) | k as u64 | (1 << 62));
            out.push(augment(s, policy, &mut r)?);
        }
    }
    Ok(out)
}
