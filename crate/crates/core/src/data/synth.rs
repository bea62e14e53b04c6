//! Synthetic vessel patches.
//!
//! Every sample is a dark, smoothly curving band on a bright, slightly shaded
//! and noisy background. The band's vertical half-width is constant along
//! the image for negatives; positives carry a Gaussian-shaped constriction
//! that narrows the band by 40–70% at one point. Both classes draw from the
//! same distributions for everything else.

use std::f64::consts::TAU;

use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Sample, Source};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};
use crate::rng::{self, streams};

/// A sample whose width-profile ratio falls below this is a constriction.
pub const WIDTH_RATIO_THRESHOLD: f64 = 0.7;

const NOISE_SIGMA: f64 = 0.03;
pub(crate) const SAMPLES_PER_PATIENT: usize = 10;

struct Band {
    center: Box<dyn Fn(f64) -> f64>,
    half_width: Box<dyn Fn(f64) -> f64>,
    intensity: f64,
}

fn draw_band<R: Rng>(rng: &mut R, size: f64, positive: bool) -> Band {
    let amp = size * rng.gen_range(0.0..0.12);
    let period = size * rng.gen_range(1.0..2.0);
    let phase = rng.gen_range(0.0..TAU);
    let slope = rng.gen_range(-0.15..0.15);
    let mid = (size - 1.0) / 2.0;
    let offset = size * rng.gen_range(-0.05..0.05);
    let h0 = size * rng.gen_range(0.10..0.12);
    let intensity = rng.gen_range(0.25..0.35);
    // drawn for both classes so the remaining draws stay aligned
    let depth = rng.gen_range(0.4..0.7);
    let sigma = size * rng.gen_range(0.04..0.07);
    let x0 = size * rng.gen_range(0.3..0.7);
    let center = move |x: f64| mid + offset + amp * (TAU * x / period + phase).sin() + slope * (x - mid);
    let half_width: Box<dyn Fn(f64) -> f64> = if positive {
        Box::new(move |x: f64| h0 * (1.0 - depth * (-(x - x0).powi(2) / (2.0 * sigma * sigma)).exp()))
    } else {
        Box::new(move |_| h0)
    };
    Band {
        center: Box::new(center),
        half_width,
        intensity,
    }
}

fn render<R: Rng>(rng: &mut R, size: usize, positive: bool) -> Tensor {
    let s = size as f64;
    let band = draw_band(rng, s, positive);
    let background = rng.gen_range(0.75..0.85);
    let (gy, gx) = (rng.gen_range(-0.05..0.05), rng.gen_range(-0.05..0.05));
    let noise = Normal::new(0.0, NOISE_SIGMA).expect("valid sigma");
    let mut data = Vec::with_capacity(size * size);
    for y in 0..size {
        for x in 0..size {
            let (yf, xf) = (y as f64, x as f64);
            let shade = background + gy * (yf / s - 0.5) + gx * (xf / s - 0.5);
            let dist = (yf - (band.center)(xf)).abs();
            // one-pixel linear ramp at the band edge
            let coverage = ((band.half_width)(xf) - dist + 0.5).clamp(0.0, 1.0);
            let v = shade + coverage * (band.intensity - shade) + noise.sample(rng);
            data.push(v.clamp(0.0, 1.0));
        }
    }
    Tensor::new(vec![1, size, size], data).expect("synthetic shape")
}

/// `2 · n_per_class` single-channel `patch_size²` samples, alternating
/// negative / positive, with patient ids assigned in blocks of ten.
pub fn synthesize_dataset(n_per_class: usize, patch_size: usize, seed: u64) -> Result<Vec<Sample>> {
    if n_per_class == 0 {
        return Err(Error::Config("synthetic n_per_class must be at least 1".into()));
    }
    if patch_size < 16 {
        return Err(Error::Config(format!("synthetic patch_size must be at least 16, got {patch_size}")));
    }
    let samples = (0..2 * n_per_class)
        .map(|i| {
            let label = (i % 2) as u8;
            let mut r = rng::substream(seed, streams::DATA, i as u64);
            Sample {
                image: render(&mut r, patch_size, label == 1),
                label,
                patient_id: format!("synth{:04}", i / SAMPLES_PER_PATIENT),
                source: Source::Synthetic,
            }
        })
        .collect();
    Ok(samples)
}

/// `|mean(positives) − mean(negatives)|` of per-image mean brightness.
pub fn class_mean_gap(samples: &[Sample]) -> f64 {
    let mut sums = [0.0; 2];
    let mut counts = [0usize; 2];
    for s in samples {
        let k = usize::from(s.is_positive());
        sums[k] += s.image.data().iter().sum::<f64>() / s.image.len() as f64;
        counts[k] += 1;
    }
    (sums[1] / counts[1].max(1) as f64 - sums[0] / counts[0].max(1) as f64).abs()
}

fn percentile(sorted: &[f64], q: f64) -> f64 {
    sorted[((sorted.len() - 1) as f64 * q).round() as usize]
}

/// Minimum over median of the per-column dark-pixel count, after a 3-column
/// running median. Dark means below the midpoint of the image's 5th
/// percentile and median intensity. Only the first channel is read.
pub fn width_profile_ratio(image: &Tensor) -> f64 {
    let (h, w) = (image.shape()[1], image.shape()[2]);
    let plane = &image.data()[..h * w];
    let mut sorted = plane.to_vec();
    sorted.sort_by(f64::total_cmp);
    let threshold = (percentile(&sorted, 0.05) + percentile(&sorted, 0.5)) / 2.0;
    let counts: Vec<usize> = (0..w)
        .map(|x| (0..h).filter(|&y| plane[y * w + x] < threshold).count())
        .collect();
    let smoothed: Vec<usize> = (0..w)
        .map(|x| {
            let mut win = [counts[x.saturating_sub(1)], counts[x], counts[(x + 1).min(w - 1)]];
            win.sort_unstable();
            win[1]
        })
        .collect();
    let mut ordered = smoothed.clone();
    ordered.sort_unstable();
    let median = ordered[w / 2].max(1) as f64;
    ordered[0] as f64 / median
}
