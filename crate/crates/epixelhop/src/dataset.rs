//! CIFAR-10 binary ingestion, eightfold augmentation, and Lanczos resizing.

use std::path::Path;

use ndarray::{Array2, Array3};

use crate::error::{Error, Result};
use crate::rng::DetRng;

pub const IMAGE_SIDE: usize = 32;
pub const CIFAR10_CLASSES: usize = 10;
/// 1 label byte + 3 channel planes of 32x32 bytes.
pub const RECORD_BYTES: usize = 1 + 3 * IMAGE_SIDE * IMAGE_SIDE;

pub const CIFAR10_LABEL_NAMES: [&str; 10] = [
    "airplane",
    "automobile",
    "bird",
    "cat",
    "deer",
    "dog",
    "frog",
    "horse",
    "ship",
    "truck",
];

/// One 32x32 RGB image with intensities normalized to `[0, 1]`.
#[derive(Debug, Clone, PartialEq)]
pub struct LabeledImage {
    /// (row, col, channel), channels ordered R, G, B.
    pub pixels: Array3<f64>,
    pub label: Option<usize>,
    /// Unique within a split; keys the augmentation streams.
    pub id: u64,
}

impl LabeledImage {
    pub fn new(pixels: Array3<f64>, label: Option<usize>, id: u64) -> Self {
        LabeledImage { pixels, label, id }
    }

    pub fn height(&self) -> usize {
        self.pixels.shape()[0]
    }

    pub fn width(&self) -> usize {
        self.pixels.shape()[1]
    }

    /// Check the type invariants: 32x32x3 shape, intensities in `[0, 1]`,
    /// label (when present) below `class_count`.
    pub fn validate(&self, class_count: usize) -> bool {
        self.pixels.shape() == [IMAGE_SIDE, IMAGE_SIDE, 3]
            && self.pixels.iter().all(|&v| (0.0..=1.0).contains(&v))
            && self.label.is_none_or(|l| l < class_count)
    }
}

/// Parse one CIFAR-10 binary batch (the public distribution format: records
/// of 3073 bytes, label first, then planar R/G/B, row-major).
pub fn parse_cifar10_batch(bytes: &[u8]) -> Result<Vec<LabeledImage>> {
    if bytes.is_empty() || !bytes.len().is_multiple_of(RECORD_BYTES) {
        return Err(Error::MalformedBatch {
            len: bytes.len(),
            offset: bytes.len() - bytes.len() % RECORD_BYTES,
        });
    }
    let count = bytes.len() / RECORD_BYTES;
    let mut images = Vec::with_capacity(count);
    for rec in 0..count {
        let base = rec * RECORD_BYTES;
        let label = bytes[base];
        if label as usize >= CIFAR10_CLASSES {
            return Err(Error::InvalidLabel {
                record: rec,
                label,
                class_count: CIFAR10_CLASSES,
            });
        }
        let mut pixels = Array3::<f64>::zeros((IMAGE_SIDE, IMAGE_SIDE, 3));
        for c in 0..3 {
            for r in 0..IMAGE_SIDE {
                for col in 0..IMAGE_SIDE {
                    let byte = bytes[base + 1 + c * IMAGE_SIDE * IMAGE_SIDE + r * IMAGE_SIDE + col];
                    pixels[[r, col, c]] = byte as f64 / 255.0;
                }
            }
        }
        images.push(LabeledImage::new(pixels, Some(label as usize), rec as u64));
    }
    Ok(images)
}

/// Serialize images back to the batch format. Exact inverse of
/// `parse_cifar10_batch` for images that came from it.
pub fn write_cifar10_batch(images: &[LabeledImage]) -> Vec<u8> {
    let mut out = Vec::with_capacity(images.len() * RECORD_BYTES);
    for img in images {
        out.push(img.label.unwrap_or(0) as u8);
        for c in 0..3 {
            for r in 0..IMAGE_SIDE {
                for col in 0..IMAGE_SIDE {
                    out.push((img.pixels[[r, col, c]] * 255.0).round() as u8);
                }
            }
        }
    }
    out
}

fn read_batch_file(path: &Path, id_base: u64) -> Result<Vec<LabeledImage>> {
    let bytes = std::fs::read(path).map_err(|source| Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut images = parse_cifar10_batch(&bytes)?;
    for img in &mut images {
        img.id += id_base;
    }
    Ok(images)
}

/// Load `data_batch_{1..5}.bin` from a CIFAR-10 directory, ids globally unique.
pub fn load_cifar10_train(dir: &Path) -> Result<Vec<LabeledImage>> {
    let mut all = Vec::new();
    for i in 1..=5 {
        let path = dir.join(format!("data_batch_{i}.bin"));
        let batch = read_batch_file(&path, all.len() as u64)?;
        all.extend(batch);
    }
    Ok(all)
}

/// Load `test_batch.bin` from a CIFAR-10 directory.
pub fn load_cifar10_test(dir: &Path) -> Result<Vec<LabeledImage>> {
    read_batch_file(&dir.join("test_batch.bin"), 0)
}

/// The eight augmentation variants, identity first.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VariantKind {
    Original,
    HFlip,
    CropSquare,
    CropRectWide,
    CropRectTall,
    ContrastUp,
    ContrastDown,
    HFlipCrop,
}

pub const VARIANT_COUNT: usize = 8;

const VARIANTS: [VariantKind; VARIANT_COUNT] = [
    VariantKind::Original,
    VariantKind::HFlip,
    VariantKind::CropSquare,
    VariantKind::CropRectWide,
    VariantKind::CropRectTall,
    VariantKind::ContrastUp,
    VariantKind::ContrastDown,
    VariantKind::HFlipCrop,
];

/// Fully resolved recipe for one variant.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentSpec {
    pub variant_kind: VariantKind,
    pub crop_origin: (usize, usize),
    pub crop_size: (usize, usize),
    pub contrast_gain: f64,
    pub rng_seed: u64,
}

impl AugmentSpec {
    fn crop_size_of(kind: VariantKind) -> Option<(usize, usize)> {
        match kind {
            VariantKind::CropSquare | VariantKind::HFlipCrop => Some((28, 28)),
            VariantKind::CropRectWide => Some((24, 28)),
            VariantKind::CropRectTall => Some((28, 24)),
            _ => None,
        }
    }

    fn contrast_gain_of(kind: VariantKind) -> f64 {
        match kind {
            VariantKind::ContrastUp => 1.25,
            VariantKind::ContrastDown => 0.8,
            _ => 1.0,
        }
    }
}

/// Resolve the eight variant recipes for an image. Crop origins come from a
/// counter-based stream keyed by `(seed, image id, variant index)`, so the
/// result is independent of evaluation order and thread count.
pub fn augment_specs(image_id: u64, seed: u64) -> [AugmentSpec; VARIANT_COUNT] {
    std::array::from_fn(|idx| {
        let kind = VARIANTS[idx];
        let stream = image_id
            .wrapping_mul(VARIANT_COUNT as u64)
            .wrapping_add(idx as u64);
        let mut rng = DetRng::new(seed, stream);
        let (crop_origin, crop_size) = match AugmentSpec::crop_size_of(kind) {
            Some((ch, cw)) => {
                let r = rng.next_below((IMAGE_SIDE - ch + 1) as u64) as usize;
                let c = rng.next_below((IMAGE_SIDE - cw + 1) as u64) as usize;
                ((r, c), (ch, cw))
            }
            None => ((0, 0), (IMAGE_SIDE, IMAGE_SIDE)),
        };
        AugmentSpec {
            variant_kind: kind,
            crop_origin,
            crop_size,
            contrast_gain: AugmentSpec::contrast_gain_of(kind),
            rng_seed: seed,
        }
    })
}

fn hflip(pixels: &Array3<f64>) -> Array3<f64> {
    let (h, w, c) = pixels.dim();
    Array3::from_shape_fn((h, w, c), |(r, col, ch)| pixels[[r, w - 1 - col, ch]])
}

fn crop(pixels: &Array3<f64>, origin: (usize, usize), size: (usize, usize)) -> Array3<f64> {
    let (r0, c0) = origin;
    let (ch, cw) = size;
    pixels
        .slice(ndarray::s![r0..r0 + ch, c0..c0 + cw, ..])
        .to_owned()
}

fn contrast(pixels: &Array3<f64>, gain: f64) -> Array3<f64> {
    pixels.mapv(|v| (0.5 + gain * (v - 0.5)).clamp(0.0, 1.0))
}

/// Apply one resolved variant recipe. Crops are resized back to 32x32.
pub fn apply_augment(img: &LabeledImage, spec: &AugmentSpec) -> Result<LabeledImage> {
    let px = &img.pixels;
    let out = match spec.variant_kind {
        VariantKind::Original => px.clone(),
        VariantKind::HFlip => hflip(px),
        VariantKind::CropSquare | VariantKind::CropRectWide | VariantKind::CropRectTall => {
            let cropped = crop(px, spec.crop_origin, spec.crop_size);
            lanczos_resize(&cropped, IMAGE_SIDE, IMAGE_SIDE)?
        }
        VariantKind::ContrastUp | VariantKind::ContrastDown => contrast(px, spec.contrast_gain),
        VariantKind::HFlipCrop => {
            let cropped = crop(px, spec.crop_origin, spec.crop_size);
            lanczos_resize(&hflip(&cropped), IMAGE_SIDE, IMAGE_SIDE)?
        }
    };
    Ok(LabeledImage::new(out, img.label, img.id))
}

/// Produce the eight variants of an image, the first being the image itself.
pub fn augment_eightfold(img: &LabeledImage, seed: u64) -> Result<Vec<LabeledImage>> {
    augment_specs(img.id, seed)
        .iter()
        .map(|spec| apply_augment(img, spec))
        .collect()
}

const LANCZOS_RADIUS: f64 = 3.0;

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

fn lanczos3(x: f64) -> f64 {
    if x.abs() < LANCZOS_RADIUS {
        sinc(x) * sinc(x / LANCZOS_RADIUS)
    } else {
        0.0
    }
}

/// Normalized tap weights for one resampled axis. Out-of-range taps are
/// clamped to the edge, so constant inputs stay constant. When downscaling,
/// the kernel is widened by the scale factor for antialiasing.
fn axis_weights(src: usize, dst: usize) -> Vec<Vec<(usize, f64)>> {
    let ratio = src as f64 / dst as f64;
    let filter_scale = ratio.max(1.0);
    let support = LANCZOS_RADIUS * filter_scale;
    let mut all = Vec::with_capacity(dst);
    for i in 0..dst {
        let center = (i as f64 + 0.5) * ratio - 0.5;
        let left = (center - support).ceil() as isize;
        let right = (center + support).floor() as isize;
        let mut taps: Vec<(usize, f64)> = Vec::with_capacity((right - left + 1) as usize);
        let mut sum = 0.0;
        for j in left..=right {
            let w = lanczos3((center - j as f64) / filter_scale);
            if w != 0.0 {
                let idx = j.clamp(0, src as isize - 1) as usize;
                taps.push((idx, w));
                sum += w;
            }
        }
        for t in &mut taps {
            t.1 /= sum;
        }
        all.push(taps);
    }
    all
}

/// Separable Lanczos-3 resampling of an H x W x C image, output clamped to
/// `[0, 1]`. Resizing to the source size returns the input unchanged.
pub fn lanczos_resize(img: &Array3<f64>, target_h: usize, target_w: usize) -> Result<Array3<f64>> {
    let (h, w, ch) = img.dim();
    if h < 3 || w < 3 || target_h < 3 || target_w < 3 {
        let (bad_h, bad_w) = if target_h < 3 || target_w < 3 {
            (target_h, target_w)
        } else {
            (h, w)
        };
        return Err(Error::DegenerateResize { h: bad_h, w: bad_w });
    }
    if target_h == h && target_w == w {
        return Ok(img.clone());
    }
    let col_weights = axis_weights(w, target_w);
    let row_weights = axis_weights(h, target_h);

    // Horizontal pass, then vertical.
    let mut mid = Array3::<f64>::zeros((h, target_w, ch));
    for r in 0..h {
        for (oc, taps) in col_weights.iter().enumerate() {
            for k in 0..ch {
                let mut acc = 0.0;
                for &(sc, wt) in taps {
                    acc += wt * img[[r, sc, k]];
                }
                mid[[r, oc, k]] = acc;
            }
        }
    }
    let mut out = Array3::<f64>::zeros((target_h, target_w, ch));
    for (or, taps) in row_weights.iter().enumerate() {
        for c in 0..target_w {
            for k in 0..ch {
                let mut acc = 0.0;
                for &(sr, wt) in taps {
                    acc += wt * mid[[sr, c, k]];
                }
                out[[or, c, k]] = acc.clamp(0.0, 1.0);
            }
        }
    }
    Ok(out)
}

/// Single-channel convenience wrapper over [`lanczos_resize`].
pub fn lanczos_resize_plane(
    plane: &Array2<f64>,
    target_h: usize,
    target_w: usize,
) -> Result<Array2<f64>> {
    let (h, w) = plane.dim();
    let cube = Array3::from_shape_fn((h, w, 1), |(r, c, _)| plane[[r, c]]);
    let resized = lanczos_resize(&cube, target_h, target_w)?;
    Ok(Array2::from_shape_fn((target_h, target_w), |(r, c)| {
        resized[[r, c, 0]]
    }))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn ramp_image(h: usize, w: usize) -> Array3<f64> {
        Array3::from_shape_fn((h, w, 3), |(r, c, k)| {
            ((r + c) as f64 / ((h + w - 2) as f64) + k as f64 * 0.01).min(1.0)
        })
    }

    fn test_image(seed: u64) -> LabeledImage {
        let mut rng = DetRng::new(seed, 0);
        let pixels = Array3::from_shape_fn((IMAGE_SIDE, IMAGE_SIDE, 3), |_| rng.next_f64());
        LabeledImage::new(pixels, Some(3), seed)
    }

    #[test]
    fn parse_ten_records() {
        let bytes = vec![0u8; 10 * RECORD_BYTES];
        let images = parse_cifar10_batch(&bytes).unwrap();
        assert_eq!(images.len(), 10);
    }

    #[test]
    fn parse_all_ones_record() {
        let mut bytes = vec![255u8; RECORD_BYTES];
        bytes[0] = 7;
        let images = parse_cifar10_batch(&bytes).unwrap();
        assert_eq!(images.len(), 1);
        assert_eq!(images[0].label, Some(7));
        assert!(images[0].pixels.iter().all(|&v| v == 1.0));
    }

    #[test]
    fn parse_rejects_partial_record() {
        let bytes = vec![0u8; 3074];
        match parse_cifar10_batch(&bytes) {
            Err(Error::MalformedBatch { len, offset }) => {
                assert_eq!(len, 3074);
                assert_eq!(offset, 3073);
            }
            other => panic!("expected MalformedBatch, got {other:?}"),
        }
    }

    #[test]
    fn parse_rejects_bad_label() {
        let mut bytes = vec![0u8; 2 * RECORD_BYTES];
        bytes[RECORD_BYTES] = 10;
        match parse_cifar10_batch(&bytes) {
            Err(Error::InvalidLabel { record, label, .. }) => {
                assert_eq!(record, 1);
                assert_eq!(label, 10);
            }
            other => panic!("expected InvalidLabel, got {other:?}"),
        }
    }

    #[test]
    fn parse_byte_layout() {
        // pixel (c, r, col) comes from byte 1 + c*1024 + r*32 + col
        let mut bytes = vec![0u8; RECORD_BYTES];
        bytes[0] = 2;
        bytes[1 + 2 * 1024 + 5 * 32 + 9] = 51; // B channel, row 5, col 9
        let img = &parse_cifar10_batch(&bytes).unwrap()[0];
        assert_eq!(img.pixels[[5, 9, 2]], 51.0 / 255.0);
        assert_eq!(img.pixels[[5, 9, 0]], 0.0);
    }

    #[test]
    fn roundtrip_reproduces_bytes() {
        let mut rng = DetRng::new(5, 1);
        let mut bytes = Vec::with_capacity(3 * RECORD_BYTES);
        for _ in 0..3 {
            bytes.push(rng.next_below(10) as u8);
            for _ in 0..RECORD_BYTES - 1 {
                bytes.push(rng.next_below(256) as u8);
            }
        }
        let images = parse_cifar10_batch(&bytes).unwrap();
        assert_eq!(write_cifar10_batch(&images), bytes);
    }

    #[test]
    fn augment_identity_first() {
        let img = test_image(1);
        let variants = augment_eightfold(&img, 42).unwrap();
        assert_eq!(variants.len(), 8);
        assert_eq!(variants[0].pixels, img.pixels);
    }

    #[test]
    fn augment_deterministic() {
        let img = test_image(2);
        let a = augment_eightfold(&img, 42).unwrap();
        let b = augment_eightfold(&img, 42).unwrap();
        for (x, y) in a.iter().zip(&b) {
            assert_eq!(x.pixels, y.pixels);
        }
        let c = augment_eightfold(&img, 43).unwrap();
        assert!(a.iter().zip(&c).any(|(x, y)| x.pixels != y.pixels));
    }

    #[test]
    fn augment_outputs_valid() {
        let img = test_image(3);
        for v in augment_eightfold(&img, 0).unwrap() {
            assert!(v.validate(CIFAR10_CLASSES));
        }
    }

    #[test]
    fn hflip_constant_fixed_point() {
        let pixels = Array3::from_elem((IMAGE_SIDE, IMAGE_SIDE, 3), 0.25);
        let img = LabeledImage::new(pixels.clone(), None, 0);
        let variants = augment_eightfold(&img, 7).unwrap();
        assert_eq!(variants[1].pixels, pixels);
    }

    #[test]
    fn hflip_is_involution() {
        let img = test_image(4);
        assert_eq!(hflip(&hflip(&img.pixels)), img.pixels);
    }

    #[test]
    fn resize_identity_is_exact() {
        let img = ramp_image(32, 32);
        let out = lanczos_resize(&img, 32, 32).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn resize_constant_stays_constant() {
        for (h, w, th, tw) in [(28, 28, 32, 32), (32, 32, 15, 15), (24, 28, 32, 32)] {
            let img = Array3::from_elem((h, w, 3), 0.4);
            let out = lanczos_resize(&img, th, tw).unwrap();
            for &v in out.iter() {
                assert!((v - 0.4).abs() < 1e-12, "constant drifted: {v}");
            }
        }
    }

    #[test]
    fn resize_rejects_degenerate() {
        let img = ramp_image(8, 8);
        assert!(lanczos_resize(&img, 2, 8).is_err());
        assert!(lanczos_resize(&img, 8, 1).is_err());
    }

    /// Independent oracle: direct evaluation of the normalized Lanczos-3
    /// convolution sum at each output coordinate (2D, non-separated order:
    /// vertical inner, horizontal outer), edge-clamped like the implementation.
    fn reference_resample(img: &Array3<f64>, th: usize, tw: usize) -> Array3<f64> {
        let (h, w, ch) = img.dim();
        let rr = h as f64 / th as f64;
        let rc = w as f64 / tw as f64;
        let fs_r = rr.max(1.0);
        let fs_c = rc.max(1.0);
        let mut out = Array3::<f64>::zeros((th, tw, ch));
        for or in 0..th {
            for oc in 0..tw {
                let cy = (or as f64 + 0.5) * rr - 0.5;
                let cx = (oc as f64 + 0.5) * rc - 0.5;
                for k in 0..ch {
                    let mut num = 0.0;
                    let mut den = 0.0;
                    let y0 = (cy - 3.0 * fs_r).ceil() as isize;
                    let y1 = (cy + 3.0 * fs_r).floor() as isize;
                    let x0 = (cx - 3.0 * fs_c).ceil() as isize;
                    let x1 = (cx + 3.0 * fs_c).floor() as isize;
                    for y in y0..=y1 {
                        let wy = lanczos3((cy - y as f64) / fs_r);
                        if wy == 0.0 {
                            continue;
                        }
                        let sy = y.clamp(0, h as isize - 1) as usize;
                        for x in x0..=x1 {
                            let wx = lanczos3((cx - x as f64) / fs_c);
                            if wx == 0.0 {
                                continue;
                            }
                            let sx = x.clamp(0, w as isize - 1) as usize;
                            num += wy * wx * img[[sy, sx, k]];
                            den += wy * wx;
                        }
                    }
                    out[[or, oc, k]] = (num / den).clamp(0.0, 1.0);
                }
            }
        }
        out
    }

    #[test]
    fn resize_matches_direct_convolution_oracle() {
        let img = ramp_image(28, 28);
        let got = lanczos_resize(&img, 32, 32).unwrap();
        let want = reference_resample(&img, 32, 32);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-4, "{g} vs {w}");
        }
    }

    #[test]
    fn resize_downscale_matches_oracle() {
        let img = ramp_image(32, 32);
        let got = lanczos_resize(&img, 15, 15).unwrap();
        let want = reference_resample(&img, 15, 15);
        for (g, w) in got.iter().zip(want.iter()) {
            assert!((g - w).abs() < 1e-4, "{g} vs {w}");
        }
    }
}
