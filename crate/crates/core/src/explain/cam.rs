use serde::{Deserialize, Serialize};

use crate::nn::Model;
use crate::preprocess::{self, Image, NormStats};
use crate::taxonomy::ClassId;

use super::ExplainError;

/// Heat values aligned to an image, one per pixel in row-major order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ActivationMap {
    pub class: ClassId,
    pub width: usize,
    pub height: usize,
    /// ReLU-clamped, upsampled weighted sum before normalisation.
    pub raw: Vec<f64>,
    /// `raw` min-max scaled to `[0, 1]`; all zeros when `raw` is constant.
    pub values: Vec<f64>,
}

/// `Σ_c weights[c] · features[c]` over a `[C, h·w]` feature block.
pub fn weighted_sum(features: &[f64], weights: &[f64], hw: usize) -> Result<Vec<f64>, ExplainError> {
    if hw == 0 || features.len() != weights.len() * hw {
        return Err(ExplainError::Shape(format!(
            "{} feature values for {} channels of {hw}",
            features.len(),
            weights.len()
        )));
    }
    let mut out = vec![0.0; hw];
    for (plane, &w) in features.chunks(hw).zip(weights) {
        for (o, f) in out.iter_mut().zip(plane) {
            *o += w * f;
        }
    }
    Ok(out)
}

/// Bilinear resampling with half-pixel centres and edge clamping.
pub fn upsample_bilinear(src: &[f64], sw: usize, sh: usize, dw: usize, dh: usize) -> Vec<f64> {
    let coord = |d: usize, s: usize, n: usize| {
        let x = ((d as f64 + 0.5) * s as f64 / n as f64 - 0.5).clamp(0.0, (s - 1) as f64);
        let i0 = x.floor() as usize;
        (i0, (i0 + 1).min(s - 1), x - i0 as f64)
    };
    let mut out = Vec::with_capacity(dw * dh);
    for y in 0..dh {
        let (y0, y1, fy) = coord(y, sh, dh);
        for x in 0..dw {
            let (x0, x1, fx) = coord(x, sw, dw);
            let top = src[y0 * sw + x0] * (1.0 - fx) + src[y0 * sw + x1] * fx;
            let bottom = src[y1 * sw + x0] * (1.0 - fx) + src[y1 * sw + x1] * fx;
            out.push(top * (1.0 - fy) + bottom * fy);
        }
    }
    out
}

pub fn min_max(values: &[f64]) -> Vec<f64> {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if !(hi > lo) {
        return vec![0.0; values.len()];
    }
    values.iter().map(|v| (v - lo) / (hi - lo)).collect()
}

/// CAM from a `[C, fh, fw]` feature block and per-channel class weights,
/// upsampled to `width × height`.
pub fn cam_from_features(
    class: ClassId,
    features: &[f64],
    weights: &[f64],
    (fw, fh): (usize, usize),
    (width, height): (usize, usize),
) -> Result<ActivationMap, ExplainError> {
    let mut sum = weighted_sum(features, weights, fw * fh)?;
    for v in &mut sum {
        *v = v.max(0.0);
    }
    let raw = upsample_bilinear(&sum, fw, fh, width, height);
    if raw.iter().any(|v| !v.is_finite()) {
        return Err(ExplainError::NonFinite);
    }
    let values = min_max(&raw);
    Ok(ActivationMap {
        class,
        width,
        height,
        raw,
        values,
    })
}

/// Class activation map of `image` for `class`, at the image's own size.
pub fn cam(model: &Model, norm: &NormStats, image: &Image, class: ClassId) -> Result<ActivationMap, ExplainError> {
    let a = model.arch;
    if image.width == 0 || image.height == 0 {
        return Err(ExplainError::Shape("empty image".into()));
    }
    let resized = preprocess::resize_to_model(image, a.input_size);
    let f = model.forward_eval(&norm.normalize_chw(&resized), 1)?;
    let (weights, _) = model.class_map_weights(class.index())?;
    let side = a.feature_size();
    cam_from_features(class, &f.features, &weights, (side, side), (image.width, image.height))
}

/// Blue→cyan→yellow→red ramp.
pub fn colormap(t: f64) -> [f32; 3] {
    const STOPS: [[f64; 3]; 5] = [
        [0.0, 0.0, 0.5],
        [0.0, 0.4, 1.0],
        [0.0, 1.0, 1.0],
        [1.0, 1.0, 0.0],
        [1.0, 0.0, 0.0],
    ];
    let t = t.clamp(0.0, 1.0) * (STOPS.len() - 1) as f64;
    let i = (t.floor() as usize).min(STOPS.len() - 2);
    let f = t - i as f64;
    [0, 1, 2].map(|c| (STOPS[i][c] * (1.0 - f) + STOPS[i + 1][c] * f) as f32)
}

/// Alpha-blends the colour-mapped heat over `image`.
pub fn overlay(image: &Image, map: &ActivationMap, alpha: f32) -> Result<Image, ExplainError> {
    if (image.width, image.height) != (map.width, map.height) {
        return Err(ExplainError::Shape(format!(
            "map is {}x{}, image is {}x{}",
            map.width, map.height, image.width, image.height
        )));
    }
    Ok(Image::from_fn(image.width, image.height, |x, y| {
        let heat = colormap(map.values[y * map.width + x]);
        let px = image.get(x, y);
        [0, 1, 2].map(|c| (1.0 - alpha) * px[c] + alpha * heat[c])
    }))
}

/// Grayscale PNG of the normalised map.
pub fn map_png(map: &ActivationMap) -> Vec<u8> {
    Image::from_fn(map.width, map.height, |x, y| {
        let v = map.values[y * map.width + x] as f32;
        [v, v, v]
    })
    .encode_png()
}
