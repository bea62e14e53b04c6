//! PNG directory ingestion and export.
//!
//! Layout: `root/{positive,negative}/patient_<id>/*.png`, 8-bit grayscale or RGB.

use std::fs;
use std::path::{Path, PathBuf};

use image::{DynamicImage, GrayImage, RgbImage};
use serde::{Deserialize, Serialize};

use super::imageops::resize_bilinear;
use super::{Sample, Source};
use crate::autodiff::Tensor;
use crate::error::{Error, Result};

const CLASS_DIRS: [(&str, u8); 2] = [("negative", 0), ("positive", 1)];
const PATIENT_PREFIX: &str = "patient_";

#[derive(Clone, Debug, PartialEq)]
pub struct LoadOptions {
    /// 1 (grayscale) or 3 (RGB). Grayscale files are replicated up, RGB
    /// files are reduced with Rec. 601 luma.
    pub channels: usize,
    /// Square side to resample every image to, if set.
    pub resize: Option<usize>,
}

impl Default for LoadOptions {
    fn default() -> Self {
        Self {
            channels: 1,
            resize: None,
        }
    }
}

#[derive(Clone, Debug, Default, PartialEq)]
pub struct LoadReport {
    pub negatives: usize,
    pub positives: usize,
    pub patients: usize,
    /// Files that could not be decoded and were skipped.
    pub warnings: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestRow {
    pub path: String,
    pub label: u8,
    pub patient_id: String,
    pub split: String,
}

/// Decodes one 8-bit PNG into `[channels, H, W]` with values in [0, 1].
pub fn load_image(path: &Path, channels: usize) -> Result<Tensor> {
    let img = image::open(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    Ok(image_to_tensor(&img, channels))
}

fn image_to_tensor(img: &DynamicImage, channels: usize) -> Tensor {
    let (w, h) = (img.width() as usize, img.height() as usize);
    let has_color = img.color().has_color();
    let mut data = Vec::with_capacity(channels * h * w);
    if channels == 1 {
        let luma = img.to_luma8();
        data.extend(luma.as_raw().iter().map(|&v| f64::from(v) / 255.0));
    } else if has_color {
        let rgb = img.to_rgb8();
        for c in 0..3 {
            data.extend(rgb.as_raw().chunks(3).map(|px| f64::from(px[c]) / 255.0));
        }
    } else {
        let luma = img.to_luma8();
        for _ in 0..3 {
            data.extend(luma.as_raw().iter().map(|&v| f64::from(v) / 255.0));
        }
    }
    Tensor::new(vec![channels, h, w], data).expect("decoded image shape")
}

fn sorted_entries(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut entries = fs::read_dir(dir)
        .map_err(|e| Error::io(dir, e))?
        .map(|e| e.map(|e| e.path()).map_err(|err| Error::io(dir, err)))
        .collect::<Result<Vec<_>>>()?;
    entries.sort();
    Ok(entries)
}

fn is_png(p: &Path) -> bool {
    p.extension().and_then(|e| e.to_str()).is_some_and(|e| e.eq_ignore_ascii_case("png"))
}

/// Loads every PNG under the class/patient layout. Unreadable files are
/// skipped and counted in [`LoadReport::warnings`].
pub fn load_directory(root: &Path, opts: &LoadOptions) -> Result<(Vec<Sample>, LoadReport)> {
    if opts.channels != 1 && opts.channels != 3 {
        return Err(Error::Config(format!("channels must be 1 or 3, got {}", opts.channels)));
    }
    let mut samples = Vec::new();
    let mut report = LoadReport::default();
    let mut patients = std::collections::BTreeSet::new();
    for (class, label) in CLASS_DIRS {
        let class_dir = root.join(class);
        if !class_dir.is_dir() {
            return Err(Error::Data(format!("missing class directory {}", class_dir.display())));
        }
        let mut count = 0;
        for patient_dir in sorted_entries(&class_dir)?.into_iter().filter(|p| p.is_dir()) {
            let name = patient_dir.file_name().and_then(|n| n.to_str()).unwrap_or_default();
            let patient_id = name.strip_prefix(PATIENT_PREFIX).unwrap_or(name).to_string();
            for file in sorted_entries(&patient_dir)?.into_iter().filter(|p| is_png(p)) {
                let image = match load_image(&file, opts.channels) {
                    Ok(t) => t,
                    Err(e) => {
                        log::warn!("skipping unreadable image: {e}");
                        report.warnings += 1;
                        continue;
                    }
                };
                let image = match opts.resize {
                    Some(s) => resize_bilinear(&image, s, s),
                    None => image,
                };
                patients.insert(patient_id.clone());
                samples.push(Sample {
                    image,
                    label,
                    patient_id: patient_id.clone(),
                    source: Source::Directory,
                });
                count += 1;
            }
        }
        if count == 0 {
            return Err(Error::Data(format!("class directory {} holds no readable images", class_dir.display())));
        }
        if label == 1 {
            report.positives = count;
        } else {
            report.negatives = count;
        }
    }
    report.patients = patients.len();
    log::info!(
        "loaded {} negatives and {} positives from {} patients ({} skipped)",
        report.negatives,
        report.positives,
        report.patients,
        report.warnings
    );
    Ok((samples, report))
}

fn to_u8(v: f64) -> u8 {
    (v.clamp(0.0, 1.0) * 255.0).round() as u8
}

fn save_png(image: &Tensor, path: &Path) -> Result<()> {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let d = image.data();
    let result = match c {
        1 => GrayImage::from_raw(w as u32, h as u32, d.iter().map(|&v| to_u8(v)).collect())
            .expect("gray buffer size")
            .save(path),
        3 => {
            let hw = h * w;
            let buf = (0..hw).flat_map(|i| (0..3).map(move |k| to_u8(d[k * hw + i]))).collect();
            RgbImage::from_raw(w as u32, h as u32, buf).expect("rgb buffer size").save(path)
        }
        _ => return Err(Error::Data(format!("cannot export a {c}-channel image as PNG"))),
    };
    result.map_err(|e| Error::Data(format!("{}: {e}", path.display())))
}

/// Writes samples into the class/patient layout under `root`. `splits`, if
/// given, names the split of each sample for the returned manifest rows;
/// paths in the rows are relative to `root`.
pub fn export_dataset(samples: &[Sample], root: &Path, splits: Option<&[&str]>) -> Result<Vec<ManifestRow>> {
    if let Some(s) = splits {
        if s.len() != samples.len() {
            return Err(Error::Usage(format!("{} split labels for {} samples", s.len(), samples.len())));
        }
    }
    let mut rows = Vec::with_capacity(samples.len());
    for (i, s) in samples.iter().enumerate() {
        let class = if s.is_positive() { "positive" } else { "negative" };
        let rel = PathBuf::from(class).join(format!("{PATIENT_PREFIX}{}", s.patient_id)).join(format!("{i:06}.png"));
        let path = root.join(&rel);
        let parent = path.parent().expect("joined path has a parent");
        fs::create_dir_all(parent).map_err(|e| Error::io(parent, e))?;
        save_png(&s.image, &path)?;
        rows.push(ManifestRow {
            path: rel.to_string_lossy().replace('\\', "/"),
            label: s.label,
            patient_id: s.patient_id.clone(),
            split: splits.map_or("unassigned", |v| v[i]).to_string(),
        });
    }
    Ok(rows)
}

/// CSV with header `path,label,patient_id,split`.
pub fn write_manifest(path: &Path, rows: &[ManifestRow]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Data(format!("{}: {e}", path.display())))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}
