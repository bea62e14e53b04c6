//! Geometric resampling on `[C,H,W]` tensors. Bilinear everywhere, with edge
//! replication outside the image; pixel centres sit at integer + 0.5.

use crate::autodiff::Tensor;

/// Bilinear read of one plane at continuous pixel coordinates (`y`, `x`)
/// measured in pixel-index units (centre of pixel `i` is at `i`).
pub fn sample_bilinear(plane: &[f64], h: usize, w: usize, y: f64, x: f64) -> f64 {
    let y = y.clamp(0.0, (h - 1) as f64);
    let x = x.clamp(0.0, (w - 1) as f64);
    let (y0, x0) = (y.floor() as usize, x.floor() as usize);
    let (y1, x1) = ((y0 + 1).min(h - 1), (x0 + 1).min(w - 1));
    let (fy, fx) = (y - y0 as f64, x - x0 as f64);
    let top = plane[y0 * w + x0] * (1.0 - fx) + plane[y0 * w + x1] * fx;
    let bottom = plane[y1 * w + x0] * (1.0 - fx) + plane[y1 * w + x1] * fx;
    top * (1.0 - fy) + bottom * fy
}

/// Resamples every output pixel from `map(out_y, out_x) -> (src_y, src_x)`.
pub(crate) fn warp(image: &Tensor, out_h: usize, out_w: usize, map: impl Fn(f64, f64) -> (f64, f64)) -> Tensor {
    let s = image.shape();
    let (c, h, w) = (s[0], s[1], s[2]);
    let mut data = Vec::with_capacity(c * out_h * out_w);
    for plane in image.data().chunks(h * w) {
        for oy in 0..out_h {
            for ox in 0..out_w {
                let (sy, sx) = map(oy as f64, ox as f64);
                data.push(sample_bilinear(plane, h, w, sy, sx));
            }
        }
    }
    Tensor::new(vec![c, out_h, out_w], data).expect("warp shape")
}

/// Half-pixel-centred bilinear resize.
pub fn resize_bilinear(image: &Tensor, out_h: usize, out_w: usize) -> Tensor {
    let s = image.shape();
    if s[1] == out_h && s[2] == out_w {
        return image.detached();
    }
    let (sy, sx) = (s[1] as f64 / out_h as f64, s[2] as f64 / out_w as f64);
    warp(image, out_h, out_w, |y, x| ((y + 0.5) * sy - 0.5, (x + 0.5) * sx - 0.5))
}

/// Integer crop; the region must lie inside the image.
pub fn crop(image: &Tensor, top: usize, left: usize, h: usize, w: usize) -> Tensor {
    let s = image.shape();
    assert!(top + h <= s[1] && left + w <= s[2], "crop outside image");
    let mut data = Vec::with_capacity(s[0] * h * w);
    for plane in image.data().chunks(s[1] * s[2]) {
        for y in top..top + h {
            data.extend_from_slice(&plane[y * s[2] + left..y * s[2] + left + w]);
        }
    }
    Tensor::new(vec![s[0], h, w], data).expect("crop shape")
}

pub fn flip_horizontal(image: &Tensor) -> Tensor {
    let s = image.shape();
    let w = s[2];
    let mut out = image.detached();
    for row in out.data_mut().chunks_mut(w) {
        row.reverse();
    }
    out
}
