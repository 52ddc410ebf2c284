//! Image preparation: decoding, the ego-vehicle crop, bilinear resize,
//! normalisation statistics and training-time augmentation.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error)]
pub enum PreprocessError {
    #[error("image does not decode: {0}")]
    Decode(String),
    #[error("degenerate dimensions {width}x{height} for crop (need at least 8x4)")]
    Degenerate { width: usize, height: usize },
    #[error("no training images")]
    EmptySplit,
    #[error("zero-variance: channel {0} has zero standard deviation")]
    ZeroVariance(usize),
    #[error("image size mismatch")]
    SizeMismatch,
}

/// RGB image, row-major, interleaved channels, intensities in [0, 1].
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Image {
    pub fn new(width: usize, height: usize) -> Self {
        Image {
            width,
            height,
            data: vec![0.0; width * height * 3],
        }
    }

    pub fn filled(width: usize, height: usize, rgb: [f32; 3]) -> Self {
        let mut img = Image::new(width, height);
        for px in img.data.chunks_exact_mut(3) {
            px.copy_from_slice(&rgb);
        }
        img
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> [f32; 3]) -> Self {
        let mut img = Image::new(width, height);
        for y in 0..height {
            for x in 0..width {
                img.set(x, y, f(x, y));
            }
        }
        img
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> [f32; 3] {
        let i = (y * self.width + x) * 3;
        [self.data[i], self.data[i + 1], self.data[i + 2]]
    }

    #[inline]
    pub fn set(&mut self, x: usize, y: usize, rgb: [f32; 3]) {
        let i = (y * self.width + x) * 3;
        self.data[i..i + 3].copy_from_slice(&rgb);
    }

    pub fn decode(bytes: &[u8]) -> Result<Image, PreprocessError> {
        let rgb = image::load_from_memory(bytes)
            .map_err(|e| PreprocessError::Decode(e.to_string()))?
            .to_rgb8();
        Ok(Self::from_rgb8(&rgb))
    }

    pub fn from_rgb8(rgb: &image::RgbImage) -> Image {
        Image {
            width: rgb.width() as usize,
            height: rgb.height() as usize,
            data: rgb.as_raw().iter().map(|&v| f32::from(v) / 255.0).collect(),
        }
    }

    pub fn to_rgb8(&self) -> image::RgbImage {
        let raw = self
            .data
            .iter()
            .map(|v| (v.clamp(0.0, 1.0) * 255.0).round() as u8)
            .collect();
        image::RgbImage::from_raw(self.width as u32, self.height as u32, raw)
            .expect("buffer matches dimensions")
    }

    pub fn encode_png(&self) -> Vec<u8> {
        let mut out = std::io::Cursor::new(Vec::new());
        self.to_rgb8()
            .write_to(&mut out, image::ImageFormat::Png)
            .expect("png encoding to memory");
        out.into_inner()
    }

    pub fn crop(&self, x0: usize, y0: usize, width: usize, height: usize) -> Image {
        let mut out = Image::new(width, height);
        for y in 0..height {
            let src = ((y0 + y) * self.width + x0) * 3;
            let dst = y * width * 3;
            out.data[dst..dst + width * 3].copy_from_slice(&self.data[src..src + width * 3]);
        }
        out
    }

    /// Bilinear sample with edge clamping; `x`, `y` in pixel-centre
    /// coordinates.
    fn sample_clamped(&self, x: f32, y: f32) -> [f32; 3] {
        let x = x.clamp(0.0, (self.width - 1) as f32);
        let y = y.clamp(0.0, (self.height - 1) as f32);
        self.bilinear(x, y)
    }

    fn bilinear(&self, x: f32, y: f32) -> [f32; 3] {
        let x0 = x.floor() as usize;
        let y0 = y.floor() as usize;
        let x1 = (x0 + 1).min(self.width - 1);
        let y1 = (y0 + 1).min(self.height - 1);
        let fx = x - x0 as f32;
        let fy = y - y0 as f32;
        let (a, b, c, d) = (self.get(x0, y0), self.get(x1, y0), self.get(x0, y1), self.get(x1, y1));
        let mut out = [0.0; 3];
        for k in 0..3 {
            let top = a[k] + (b[k] - a[k]) * fx;
            let bottom = c[k] + (d[k] - c[k]) * fx;
            out[k] = top + (bottom - top) * fy;
        }
        out
    }
}

/// Fractions removed by the ego-vehicle crop.
///
/// Kept width and height are floored separately, as is the left offset,
/// so a 100×100 input becomes 75×75 starting at column 12.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CropRule {
    pub bottom_fraction: f64,
    pub side_fraction: f64,
}

impl Default for CropRule {
    fn default() -> Self {
        CropRule {
            bottom_fraction: 0.25,
            side_fraction: 0.125,
        }
    }
}

impl CropRule {
    /// Output rectangle `(x0, y0, width, height)` for a `width`×`height`
    /// input.
    pub fn window(&self, width: usize, height: usize) -> Result<(usize, usize, usize, usize), PreprocessError> {
        if width < 8 || height < 4 {
            return Err(PreprocessError::Degenerate { width, height });
        }
        let keep_h = ((1.0 - self.bottom_fraction) * height as f64).floor() as usize;
        let keep_w = ((1.0 - 2.0 * self.side_fraction) * width as f64).floor() as usize;
        let left = (self.side_fraction * width as f64).floor() as usize;
        Ok((left, 0, keep_w, keep_h))
    }
}

pub fn crop_ego(image: &Image) -> Result<Image, PreprocessError> {
    let (x0, y0, w, h) = CropRule::default().window(image.width, image.height)?;
    Ok(image.crop(x0, y0, w, h))
}

/// Bilinear resize with half-pixel centres. Same-size input is returned
/// unchanged.
pub fn resize(image: &Image, width: usize, height: usize) -> Image {
    if image.width == width && image.height == height {
        return image.clone();
    }
    let sx = image.width as f32 / width as f32;
    let sy = image.height as f32 / height as f32;
    let mut out = Image::new(width, height);
    for y in 0..height {
        let src_y = (y as f32 + 0.5) * sy - 0.5;
        for x in 0..width {
            let src_x = (x as f32 + 0.5) * sx - 0.5;
            out.set(x, y, image.sample_clamped(src_x, src_y));
        }
    }
    out
}

pub const MODEL_INPUT: usize = 224;

pub fn resize_to_model(image: &Image, size: usize) -> Image {
    resize(image, size, size)
}

/// Per-channel mean and standard deviation in [0, 1] intensity units.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

impl NormStats {
    pub fn identity() -> Self {
        NormStats {
            mean: [0.0; 3],
            std: [1.0; 3],
        }
    }

    /// Channel-planar (CHW) normalised values.
    pub fn normalize_chw(&self, image: &Image) -> Vec<f64> {
        let plane = image.width * image.height;
        let mut out = vec![0.0; plane * 3];
        for (p, px) in image.data.chunks_exact(3).enumerate() {
            for c in 0..3 {
                out[c * plane + p] = (f64::from(px[c]) - self.mean[c]) / self.std[c];
            }
        }
        out
    }
}

/// Population mean/std over every pixel of every image. Accumulates in
/// f64.
pub fn compute_norm_stats<'a, I>(images: I) -> Result<NormStats, PreprocessError>
where
    I: IntoIterator<Item = &'a Image>,
{
    let mut n = 0u64;
    let mut sum = [0.0f64; 3];
    let mut sum_sq = [0.0f64; 3];
    // Two-pass would need the images twice; shift by the first pixel
    // instead to keep the single pass numerically stable.
    let mut shift: Option<[f64; 3]> = None;
    for img in images {
        for px in img.data.chunks_exact(3) {
            let k = *shift.get_or_insert([f64::from(px[0]), f64::from(px[1]), f64::from(px[2])]);
            for c in 0..3 {
                let d = f64::from(px[c]) - k[c];
                sum[c] += d;
                sum_sq[c] += d * d;
            }
            n += 1;
        }
    }
    let Some(k) = shift else {
        return Err(PreprocessError::EmptySplit);
    };
    let nf = n as f64;
    let mut stats = NormStats::identity();
    for c in 0..3 {
        let mean_d = sum[c] / nf;
        stats.mean[c] = k[c] + mean_d;
        let var = (sum_sq[c] / nf - mean_d * mean_d).max(0.0);
        stats.std[c] = var.sqrt();
        if stats.std[c] <= 1e-12 {
            return Err(PreprocessError::ZeroVariance(c));
        }
    }
    Ok(stats)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AugmentPolicy {
    pub flip_p: f64,
    pub grayscale_p: f64,
    pub rotation_p: f64,
    pub rotation_max_deg: f64,
    pub jitter_p: f64,
    pub jitter_factor: f64,
}

impl Default for AugmentPolicy {
    fn default() -> Self {
        AugmentPolicy {
            flip_p: 0.5,
            grayscale_p: 0.5,
            rotation_p: 0.5,
            rotation_max_deg: 5.0,
            jitter_p: 0.5,
            jitter_factor: 0.05,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Jitter {
    pub brightness: f32,
    pub contrast: f32,
    pub saturation: f32,
    /// Fraction of the hue circle.
    pub hue: f32,
}

/// The random choices of one augmentation call.
#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct AugmentDraws {
    pub flip: bool,
    pub grayscale: bool,
    pub rotation_deg: Option<f32>,
    pub jitter: Option<Jitter>,
}

impl AugmentDraws {
    pub fn sample<R: Rng + ?Sized>(policy: &AugmentPolicy, rng: &mut R) -> Self {
        let flip = rng.random_bool(policy.flip_p);
        let grayscale = rng.random_bool(policy.grayscale_p);
        let rotation_deg = rng.random_bool(policy.rotation_p).then(|| {
            let m = policy.rotation_max_deg as f32;
            rng.random_range(-m..=m)
        });
        let jitter = rng.random_bool(policy.jitter_p).then(|| {
            let f = policy.jitter_factor as f32;
            Jitter {
                brightness: rng.random_range(1.0 - f..=1.0 + f),
                contrast: rng.random_range(1.0 - f..=1.0 + f),
                saturation: rng.random_range(1.0 - f..=1.0 + f),
                hue: rng.random_range(-f..=f),
            }
        });
        AugmentDraws {
            flip,
            grayscale,
            rotation_deg,
            jitter,
        }
    }

    pub fn apply(&self, image: &Image) -> Image {
        let mut img = image.clone();
        if let Some(j) = self.jitter {
            img = color_jitter(&img, j);
        }
        if self.grayscale {
            img = grayscale(&img);
        }
        if let Some(deg) = self.rotation_deg {
            img = rotate(&img, deg);
        }
        if self.flip {
            img = flip_horizontal(&img);
        }
        img
    }
}

pub fn augment<R: Rng + ?Sized>(image: &Image, policy: &AugmentPolicy, rng: &mut R) -> Image {
    AugmentDraws::sample(policy, rng).apply(image)
}

pub fn flip_horizontal(image: &Image) -> Image {
    let mut out = Image::new(image.width, image.height);
    for y in 0..image.height {
        for x in 0..image.width {
            out.set(image.width - 1 - x, y, image.get(x, y));
        }
    }
    out
}

fn luma(px: [f32; 3]) -> f32 {
    0.299 * px[0] + 0.587 * px[1] + 0.114 * px[2]
}

pub fn grayscale(image: &Image) -> Image {
    let mut out = image.clone();
    for px in out.data.chunks_exact_mut(3) {
        let l = luma([px[0], px[1], px[2]]);
        px.fill(l);
    }
    out
}

/// Rotates about the image centre; uncovered corners become black.
pub fn rotate(image: &Image, degrees: f32) -> Image {
    let (s, c) = degrees.to_radians().sin_cos();
    let cx = (image.width as f32 - 1.0) / 2.0;
    let cy = (image.height as f32 - 1.0) / 2.0;
    let mut out = Image::new(image.width, image.height);
    let max_x = (image.width - 1) as f32;
    let max_y = (image.height - 1) as f32;
    for y in 0..image.height {
        for x in 0..image.width {
            let dx = x as f32 - cx;
            let dy = y as f32 - cy;
            // Inverse mapping: output pixel looks up the source position.
            let sx = c * dx + s * dy + cx;
            let sy = -s * dx + c * dy + cy;
            if sx < -0.5 || sy < -0.5 || sx > max_x + 0.5 || sy > max_y + 0.5 {
                continue;
            }
            out.set(x, y, image.sample_clamped(sx, sy));
        }
    }
    out
}

fn rgb_to_hsv([r, g, b]: [f32; 3]) -> [f32; 3] {
    let max = r.max(g).max(b);
    let min = r.min(g).min(b);
    let d = max - min;
    let h = if d <= 0.0 {
        0.0
    } else if max == r {
        ((g - b) / d).rem_euclid(6.0) / 6.0
    } else if max == g {
        ((b - r) / d + 2.0) / 6.0
    } else {
        ((r - g) / d + 4.0) / 6.0
    };
    let s = if max <= 0.0 { 0.0 } else { d / max };
    [h, s, max]
}

fn hsv_to_rgb([h, s, v]: [f32; 3]) -> [f32; 3] {
    let h6 = h.rem_euclid(1.0) * 6.0;
    let i = h6.floor();
    let f = h6 - i;
    let p = v * (1.0 - s);
    let q = v * (1.0 - s * f);
    let t = v * (1.0 - s * (1.0 - f));
    match i as i32 % 6 {
        0 => [v, t, p],
        1 => [q, v, p],
        2 => [p, v, t],
        3 => [p, q, v],
        4 => [t, p, v],
        _ => [v, p, q],
    }
}

/// Brightness, contrast and saturation scale multiplicatively; hue shifts
/// additively around the colour circle. Results are clamped to [0, 1].
pub fn color_jitter(image: &Image, j: Jitter) -> Image {
    let mut out = image.clone();
    for v in out.data.iter_mut() {
        *v = (*v * j.brightness).clamp(0.0, 1.0);
    }
    let pixels = (out.width * out.height).max(1) as f32;
    let mean_luma: f32 = out.data.chunks_exact(3).map(|p| luma([p[0], p[1], p[2]])).sum::<f32>() / pixels;
    for px in out.data.chunks_exact_mut(3) {
        let mut p = [px[0], px[1], px[2]];
        for v in p.iter_mut() {
            *v = ((*v - mean_luma) * j.contrast + mean_luma).clamp(0.0, 1.0);
        }
        let l = luma(p);
        for v in p.iter_mut() {
            *v = ((*v - l) * j.saturation + l).clamp(0.0, 1.0);
        }
        if j.hue != 0.0 {
            let mut hsv = rgb_to_hsv(p);
            hsv[0] += j.hue;
            p = hsv_to_rgb(hsv);
        }
        px.copy_from_slice(&p);
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn gradient(w: usize, h: usize) -> Image {
        Image::from_fn(w, h, |x, y| {
            [
                x as f32 / w as f32,
                y as f32 / h as f32,
                ((x * 7 + y * 3) % 11) as f32 / 10.0,
            ]
        })
    }

    #[test]
    fn crop_hd_frame() {
        let rule = CropRule::default();
        assert_eq!(rule.window(1280, 720).unwrap(), (160, 0, 960, 540));
        let out = crop_ego(&gradient(1280, 720)).unwrap();
        assert_eq!((out.width, out.height), (960, 540));
        assert_eq!(960 * 720, 1280 * 540);
    }

    #[test]
    fn crop_smallest_and_square() {
        assert_eq!(CropRule::default().window(8, 4).unwrap(), (1, 0, 6, 3));
        assert_eq!(CropRule::default().window(100, 100).unwrap(), (12, 0, 75, 75));
        let out = crop_ego(&gradient(100, 100)).unwrap();
        assert_eq!((out.width, out.height), (75, 75));
    }

    #[test]
    fn crop_keeps_top_rows_and_central_columns() {
        let img = gradient(16, 8);
        let out = crop_ego(&img).unwrap();
        assert_eq!(out.get(0, 0), img.get(2, 0));
        assert_eq!(out.get(11, 5), img.get(13, 5));
    }

    #[test]
    fn crop_rejects_degenerate() {
        assert!(matches!(
            crop_ego(&Image::new(7, 10)),
            Err(PreprocessError::Degenerate { .. })
        ));
        assert!(crop_ego(&Image::new(10, 3)).is_err());
    }

    #[test]
    fn resize_shapes_and_identity() {
        let img = gradient(960, 540);
        let out = resize_to_model(&img, MODEL_INPUT);
        assert_eq!((out.width, out.height), (224, 224));
        let sq = gradient(224, 224);
        assert_eq!(resize_to_model(&sq, 224), sq);
    }

    #[test]
    fn resize_preserves_constants() {
        let img = Image::filled(37, 91, [0.25, 0.5, 0.75]);
        let out = resize(&img, 224, 224);
        for px in out.data.chunks_exact(3) {
            assert!((px[0] - 0.25).abs() < 1e-6);
            assert!((px[1] - 0.5).abs() < 1e-6);
            assert!((px[2] - 0.75).abs() < 1e-6);
        }
    }

    #[test]
    fn norm_stats_guards() {
        let black = Image::new(4, 4);
        assert!(matches!(
            compute_norm_stats([&black]),
            Err(PreprocessError::ZeroVariance(0))
        ));
        assert!(matches!(
            compute_norm_stats(std::iter::empty::<&Image>()),
            Err(PreprocessError::EmptySplit)
        ));
    }

    #[test]
    fn uniform_gray_mean() {
        let gray = Image::filled(5, 5, [0.5; 3]);
        let mut other = Image::filled(5, 5, [0.5; 3]);
        other.set(0, 0, [0.5, 0.5, 0.5]);
        // Zero variance is an error, but the mean is still well defined:
        // check through a two-level set that averages to 0.5.
        let lo = Image::filled(2, 1, [0.25; 3]);
        let hi = Image::filled(2, 1, [0.75; 3]);
        let s = compute_norm_stats([&lo, &hi]).unwrap();
        for c in 0..3 {
            assert!((s.mean[c] - 0.5).abs() < 1e-12);
        }
        assert!(compute_norm_stats([&gray, &other]).is_err());
    }

    #[test]
    fn two_image_hand_computed_stats() {
        // Pixels (R,G,B): img a = (0.2,0.4,0.6),(0.4,0.4,0.2); img b = (0.6,0.0,1.0)
        let mut a = Image::new(2, 1);
        a.set(0, 0, [0.2, 0.4, 0.6]);
        a.set(1, 0, [0.4, 0.4, 0.2]);
        let b = Image::filled(1, 1, [0.6, 0.0, 1.0]);
        let s = compute_norm_stats([&a, &b]).unwrap();
        // R: mean 0.4, var ((0.04)+(0)+(0.04))/3
        // G: mean 0.8/3, var ((0.4-m)^2*2 + m^2)/3
        // B: mean 0.6, var ((0)+(0.16)+(0.16))/3
        let f = |x: f32| f64::from(x);
        let mean_g = (f(0.4) + f(0.4) + f(0.0)) / 3.0;
        let var_g = ((f(0.4) - mean_g).powi(2) * 2.0 + mean_g.powi(2)) / 3.0;
        let mean_r = (f(0.2) + f(0.4) + f(0.6)) / 3.0;
        let var_r = ((f(0.2) - mean_r).powi(2) + (f(0.4) - mean_r).powi(2) + (f(0.6) - mean_r).powi(2)) / 3.0;
        assert!((s.mean[0] - 0.4).abs() < 1e-6);
        assert!((s.mean[0] - mean_r).abs() < 1e-12);
        assert!((s.std[0] - var_r.sqrt()).abs() < 1e-12);
        assert!((s.std[0] - (0.08f64 / 3.0).sqrt()).abs() < 1e-6);
        assert!((s.mean[1] - mean_g).abs() < 1e-12);
        assert!((s.std[1] - var_g.sqrt()).abs() < 1e-12);
        assert!((s.mean[2] - 0.6).abs() < 1e-6);
        assert!((s.std[2] - (0.32f64 / 3.0).sqrt()).abs() < 1e-6);
    }

    #[test]
    fn normalized_set_has_zero_mean_unit_std() {
        let imgs = [gradient(13, 9), gradient(20, 7)];
        let s = compute_norm_stats(imgs.iter()).unwrap();
        let mut sums = [0.0f64; 3];
        let mut sq = [0.0f64; 3];
        let mut n = 0.0;
        for img in &imgs {
            let chw = s.normalize_chw(img);
            let plane = img.width * img.height;
            for c in 0..3 {
                for v in &chw[c * plane..(c + 1) * plane] {
                    sums[c] += v;
                    sq[c] += v * v;
                }
            }
            n += plane as f64;
        }
        for c in 0..3 {
            let mean = sums[c] / n;
            let std = (sq[c] / n - mean * mean).sqrt();
            assert!(mean.abs() < 1e-6, "mean {mean}");
            assert!((std - 1.0).abs() < 1e-6, "std {std}");
        }
    }

    #[test]
    fn all_off_draws_are_identity() {
        let img = gradient(17, 11);
        assert_eq!(AugmentDraws::default().apply(&img), img);
        let never = AugmentPolicy {
            flip_p: 0.0,
            grayscale_p: 0.0,
            rotation_p: 0.0,
            jitter_p: 0.0,
            ..AugmentPolicy::default()
        };
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        assert_eq!(augment(&img, &never, &mut rng), img);
    }

    #[test]
    fn flip_is_an_involution() {
        let img = gradient(17, 11);
        let draws = AugmentDraws {
            flip: true,
            ..Default::default()
        };
        let once = draws.apply(&img);
        assert_eq!(once.get(0, 3), img.get(16, 3));
        assert_eq!(draws.apply(&once), img);
    }

    #[test]
    fn grayscale_equalizes_channels() {
        let draws = AugmentDraws {
            grayscale: true,
            ..Default::default()
        };
        let out = draws.apply(&gradient(9, 9));
        for px in out.data.chunks_exact(3) {
            assert_eq!(px[0], px[1]);
            assert_eq!(px[1], px[2]);
        }
    }

    #[test]
    fn augment_is_seed_reproducible() {
        let img = gradient(32, 24);
        let policy = AugmentPolicy::default();
        let a = augment(&img, &policy, &mut ChaCha8Rng::seed_from_u64(42));
        let b = augment(&img, &policy, &mut ChaCha8Rng::seed_from_u64(42));
        assert_eq!(a, b);
    }

    #[test]
    fn sampled_draws_respect_policy_bounds() {
        let policy = AugmentPolicy::default();
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut flips = 0;
        for _ in 0..2000 {
            let d = AugmentDraws::sample(&policy, &mut rng);
            flips += usize::from(d.flip);
            if let Some(r) = d.rotation_deg {
                assert!((-5.0..=5.0).contains(&r));
            }
            if let Some(j) = d.jitter {
                assert!((0.95..=1.05).contains(&j.brightness));
                assert!((-0.05..=0.05).contains(&j.hue));
            }
        }
        assert!((800..1200).contains(&flips));
    }

    #[test]
    fn zero_rotation_and_neutral_jitter_are_identity() {
        let img = gradient(15, 10);
        let out = rotate(&img, 0.0);
        for (a, b) in out.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-5);
        }
        let neutral = Jitter {
            brightness: 1.0,
            contrast: 1.0,
            saturation: 1.0,
            hue: 0.0,
        };
        let j = color_jitter(&img, neutral);
        for (a, b) in j.data.iter().zip(&img.data) {
            assert!((a - b).abs() < 1e-5);
        }
    }

    #[test]
    fn hsv_round_trip() {
        for px in [[0.1, 0.5, 0.9], [0.9, 0.2, 0.2], [0.3, 0.3, 0.3], [0.0, 1.0, 0.5]] {
            let back = hsv_to_rgb(rgb_to_hsv(px));
            for k in 0..3 {
                assert!((back[k] - px[k]).abs() < 1e-5);
            }
        }
    }

    #[test]
    fn png_round_trip_through_decode() {
        let img = Image::from_fn(6, 4, |x, y| [x as f32 / 5.0, y as f32 / 3.0, 0.0]);
        let decoded = Image::decode(&img.encode_png()).unwrap();
        assert_eq!((decoded.width, decoded.height), (6, 4));
        assert_eq!(decoded.to_rgb8(), img.to_rgb8());
    }
}
