//! Annotation-driven patch extraction from full frames.
//!
//! Positives are centred on each annotation. Negatives are drawn from an
//! annulus around each annotation (inner radius one patch side, outer radius
//! two) and rejected if their box intersects any positive box. Boxes are
//! clipped to the image; a clipped box shorter than `min_in_bounds · side` in
//! either direction is dropped, the rest are resampled to `side × side`.

use std::f64::consts::TAU;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::imageops::{crop, resize_bilinear};
use super::{Sample, Source};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PatchConfig {
    pub patch_size: usize,
    pub negatives_per_annotation: usize,
    pub min_in_bounds: f64,
    pub max_attempts: usize,
}

impl Default for PatchConfig {
    fn default() -> Self {
        Self {
            patch_size: 64,
            negatives_per_annotation: 2,
            min_in_bounds: 0.75,
            max_attempts: 64,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Patch {
    pub sample: Sample,
    /// Box centre in the source frame, `(row, col)`.
    pub center: (f64, f64),
}

/// Axis-aligned box of side `size` centred at `c`, as half-open `[top, bottom) × [left, right)`.
fn bounds(c: (f64, f64), size: usize) -> (f64, f64, f64, f64) {
    let half = size as f64 / 2.0;
    (c.0 - half, c.0 + half, c.1 - half, c.1 + half)
}

fn boxes_overlap(a: (f64, f64), b: (f64, f64), size: usize) -> bool {
    let s = size as f64;
    (a.0 - b.0).abs() < s && (a.1 - b.1).abs() < s
}

fn cut(image: &Tensor, center: (f64, f64), cfg: &PatchConfig) -> Option<Tensor> {
    let (h, w) = (image.shape()[1] as f64, image.shape()[2] as f64);
    let (top, bottom, left, right) = bounds(center, cfg.patch_size);
    let (t, b) = (top.round().max(0.0), bottom.round().min(h));
    let (l, r) = (left.round().max(0.0), right.round().min(w));
    let min_side = cfg.min_in_bounds * cfg.patch_size as f64;
    if b - t < min_side || r - l < min_side || b <= t || r <= l {
        return None;
    }
    let region = crop(image, t as usize, l as usize, (b - t) as usize, (r - l) as usize);
    Some(resize_bilinear(&region, cfg.patch_size, cfg.patch_size))
}

pub fn extract_patches<R: Rng>(
    image: &Tensor,
    annotations: &[(f64, f64)],
    patient_id: &str,
    cfg: &PatchConfig,
    rng: &mut R,
) -> Result<Vec<Patch>> {
    if image.shape().len() != 3 {
        return Err(Error::Data(format!("expected a [C,H,W] frame, got {:?}", image.shape())));
    }
    if cfg.patch_size == 0 {
        return Err(Error::Config("patch_size must be positive".into()));
    }
    let (h, w) = (image.shape()[1] as f64, image.shape()[2] as f64);
    if let Some(a) = annotations.iter().find(|(y, x)| !(0.0..h).contains(y) || !(0.0..w).contains(x)) {
        return Err(Error::Data(format!("annotation {a:?} lies outside the {h}x{w} frame")));
    }
    if annotations.is_empty() {
        log::warn!("no annotations for patient {patient_id}: no positive patches extracted");
    }
    let make = |img: Tensor, label: u8, center: (f64, f64)| Patch {
        sample: Sample {
            image: img,
            label,
            patient_id: patient_id.to_string(),
            source: Source::Directory,
        },
        center,
    };
    let mut out = Vec::new();
    for &a in annotations {
        if let Some(img) = cut(image, a, cfg) {
            out.push(make(img, 1, a));
        }
    }
    let p = cfg.patch_size as f64;
    for &a in annotations {
        let mut found = 0;
        for _ in 0..cfg.max_attempts {
            if found == cfg.negatives_per_annotation {
                break;
            }
            let r = rng.gen_range(p..=2.0 * p);
            let phi = rng.gen_range(0.0..TAU);
            let c = (a.0 + r * phi.sin(), a.1 + r * phi.cos());
            if annotations.iter().any(|&pos| boxes_overlap(c, pos, cfg.patch_size)) {
                continue;
            }
            if let Some(img) = cut(image, c, cfg) {
                out.push(make(img, 0, c));
                found += 1;
            }
        }
    }
    Ok(out)
}
