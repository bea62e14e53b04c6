//! Samples, preprocessing and dataset plumbing.

mod augment;
mod imageops;
mod io;
mod patches;
mod split;
mod synth;

pub use augment::{augment, expand_positives, AugmentPolicy};
pub use imageops::{crop, flip_horizontal, resize_bilinear, sample_bilinear};
pub use io::{export_dataset, load_directory, load_image, write_manifest, LoadOptions, LoadReport, ManifestRow};
pub use patches::{extract_patches, Patch, PatchConfig};
pub use split::{split, split_indices, SplitSpec};
pub use synth::{class_mean_gap, synthesize_dataset, width_profile_ratio, WIDTH_RATIO_THRESHOLD};

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::error::{structural, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Source {
    Synthetic,
    Directory,
}

/// One labelled image. `image` is `[C,H,W]` with values in [0, 1].
#[derive(Clone, Debug, PartialEq)]
pub struct Sample {
    pub image: Tensor,
    /// 0 negative, 1 positive.
    pub label: u8,
    pub patient_id: String,
    pub source: Source,
}

impl Sample {
    pub fn channels(&self) -> usize {
        self.image.shape()[0]
    }

    pub fn height(&self) -> usize {
        self.image.shape()[1]
    }

    pub fn width(&self) -> usize {
        self.image.shape()[2]
    }

    pub fn is_positive(&self) -> bool {
        self.label == 1
    }
}

/// Per-channel zero-mean, unit-variance standardisation of a `[C,H,W]` image.
pub fn standardize(image: &Tensor) -> Tensor {
    let s = image.shape();
    let hw = s[1] * s[2];
    let mut out = image.detached();
    for plane in out.data_mut().chunks_mut(hw.max(1)) {
        let mean = plane.iter().sum::<f64>() / hw as f64;
        let var = plane.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / hw as f64;
        let inv = 1.0 / (var + 1e-8).sqrt();
        plane.iter_mut().for_each(|v| *v = (*v - mean) * inv);
    }
    out
}

/// Resizes (if needed) and standardises each image, stacking them into `[N,C,S,S]`.
pub fn to_batch<'a>(images: impl IntoIterator<Item = &'a Tensor>, size: usize) -> Result<Tensor> {
    let mut data = Vec::new();
    let mut count = 0;
    let mut channels = None;
    for img in images {
        let c = img.shape()[0];
        if *channels.get_or_insert(c) != c {
            return Err(structural!("mixed channel counts in one batch"));
        }
        let img = if img.shape()[1] != size || img.shape()[2] != size {
            resize_bilinear(img, size, size)
        } else {
            img.detached()
        };
        data.extend_from_slice(standardize(&img).data());
        count += 1;
    }
    let c = channels.ok_or_else(|| structural!("empty batch"))?;
    Tensor::new(vec![count, c, size, size], data)
}
