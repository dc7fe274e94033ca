//! Synthetic salient-object data: random filled shapes on a noisy
//! background, plus small image helpers used to build test predictions.

use std::path::Path;

use log::warn;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::decouple::list_pngs;
use crate::error::{Error, Result};
use crate::gray::{load_gray, load_mask, save_gray, BinaryMask, BitDepth, GrayMap, DEFAULT_THRESHOLD};
use crate::scalar::Scalar;

/// One synthetic image with its ground-truth mask.
#[derive(Clone, Debug, PartialEq)]
pub struct Sample<T> {
    pub image: GrayMap<T>,
    pub mask: BinaryMask,
}

#[derive(Clone, Copy, Debug)]
enum Shape {
    Ellipse { cx: f64, cy: f64, rx: f64, ry: f64, angle: f64 },
    Rect { x0: f64, y0: f64, x1: f64, y1: f64 },
}

impl Shape {
    fn random(rng: &mut impl Rng, side: f64) -> Self {
        let cx = rng.random_range(0.2 * side..0.8 * side);
        let cy = rng.random_range(0.2 * side..0.8 * side);
        let a = rng.random_range(0.1 * side..0.3 * side);
        let b = rng.random_range(0.1 * side..0.3 * side);
        if rng.random_bool(0.5) {
            Shape::Ellipse {
                cx,
                cy,
                rx: a,
                ry: b,
                angle: rng.random_range(0.0..std::f64::consts::PI),
            }
        } else {
            Shape::Rect {
                x0: cx - a,
                y0: cy - b,
                x1: cx + a,
                y1: cy + b,
            }
        }
    }

    fn contains(&self, x: f64, y: f64) -> bool {
        match *self {
            Shape::Ellipse { cx, cy, rx, ry, angle } => {
                let (s, c) = angle.sin_cos();
                let (dx, dy) = (x - cx, y - cy);
                let u = (c * dx + s * dy) / rx;
                let v = (-s * dx + c * dy) / ry;
                u * u + v * v <= 1.0
            }
            Shape::Rect { x0, y0, x1, y1 } => x >= x0 && x <= x1 && y >= y0 && y <= y1,
        }
    }
}

/// `n` samples of `side × side` pixels. Each mask holds 1–3 ellipses or
/// rectangles; the image has foreground intensity 0.7±0.2, background
/// 0.3±0.2 and additive Gaussian noise (σ = 0.1), clamped to `[0, 1]`.
/// Every mask has both foreground and background.
pub fn synth_generate<T: Scalar>(n: usize, side: usize, seed: u64) -> Result<Vec<Sample<T>>> {
    if side == 0 || !side.is_multiple_of(16) {
        return Err(Error::Config(format!("side {side} must be a positive multiple of 16")));
    }
    if n == 0 {
        return Err(Error::Config("sample count must be at least 1".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let noise = Normal::new(0.0, 0.1).expect("valid sigma");
    let mut out = Vec::with_capacity(n);
    while out.len() < n {
        let shapes: Vec<Shape> = (0..rng.random_range(1..=3))
            .map(|_| Shape::random(&mut rng, side as f64))
            .collect();
        let mask = BinaryMask::from_fn(side, side, |x, y| {
            let (px, py) = (x as f64 + 0.5, y as f64 + 0.5);
            shapes.iter().any(|s| s.contains(px, py))
        })?;
        if mask.is_constant() {
            continue;
        }
        let fg: f64 = 0.7 + rng.random_range(-0.2..=0.2);
        let bg: f64 = 0.3 + rng.random_range(-0.2..=0.2);
        let data: Vec<T> = mask
            .data()
            .iter()
            .map(|&m| {
                let base = if m == 1 { fg } else { bg };
                T::c((base + noise.sample(&mut rng)).clamp(0.0, 1.0))
            })
            .collect();
        out.push(Sample {
            image: GrayMap::new(side, side, data)?,
            mask,
        });
    }
    Ok(out)
}

/// Writes `images/sample_NNNN.png` and `masks/sample_NNNN.png` (8-bit).
pub fn write_dataset<T: Scalar>(samples: &[Sample<T>], out_dir: &Path) -> Result<()> {
    let images = out_dir.join("images");
    let masks = out_dir.join("masks");
    std::fs::create_dir_all(&images)?;
    std::fs::create_dir_all(&masks)?;
    for (i, s) in samples.iter().enumerate() {
        let name = format!("sample_{i:04}.png");
        save_gray(&s.image, images.join(&name), BitDepth::Eight)?;
        save_gray(&s.mask.to_gray::<T>(), masks.join(&name), BitDepth::Eight)?;
    }
    Ok(())
}

/// Reads a dataset laid out like [`write_dataset`]: every PNG in `images/`
/// paired with the same-named mask in `masks/` (binarized at 128/255).
pub fn load_dataset<T: Scalar>(dir: &Path) -> Result<Vec<Sample<T>>> {
    let masks_dir = dir.join("masks");
    let mut out = Vec::new();
    for image_path in list_pngs(&dir.join("images"))? {
        let Some(name) = image_path.file_name() else { continue };
        let mask_path = masks_dir.join(name);
        if !mask_path.is_file() {
            warn!("skipping {}: no mask", image_path.display());
            continue;
        }
        let image = load_gray::<T>(&image_path)?;
        let mask = load_mask(&mask_path, DEFAULT_THRESHOLD)?;
        if image.dims() != mask.dims() {
            return Err(Error::PairSizeMismatch(vec![name.to_string_lossy().into_owned()]));
        }
        out.push(Sample { image, mask });
    }
    if out.is_empty() {
        return Err(Error::NoMasks(masks_dir));
    }
    Ok(out)
}

/// Filled disk of radius `r` centered at `(cx, cy)` (pixel centers).
pub fn disk_mask(width: usize, height: usize, cx: f64, cy: f64, r: f64) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| {
        let (dx, dy) = (x as f64 + 0.5 - cx, y as f64 + 0.5 - cy);
        dx * dx + dy * dy <= r * r
    })
    .expect("non-zero dimensions")
}

/// Filled axis-aligned rectangle `[x0, x1) × [y0, y1)`.
pub fn rect_mask(width: usize, height: usize, x0: usize, y0: usize, x1: usize, y1: usize) -> BinaryMask {
    BinaryMask::from_fn(width, height, |x, y| x >= x0 && x < x1 && y >= y0 && y < y1)
        .expect("non-zero dimensions")
}

/// Separable Gaussian blur with clamp-to-edge borders.
pub fn gaussian_blur<T: Scalar>(map: &GrayMap<T>, sigma: f64) -> GrayMap<T> {
    let radius = (3.0 * sigma).ceil().max(1.0) as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|i| (-(i * i) as f64 / (2.0 * sigma * sigma)).exp())
        .collect();
    let norm: f64 = kernel.iter().sum();

    let (w, h) = map.dims();
    let src: Vec<f64> = map.data().iter().map(|v| v.to_f64_lossy()).collect();
    let pass = |src: &[f64], horizontal: bool| -> Vec<f64> {
        let mut out = vec![0.0; w * h];
        for y in 0..h {
            for x in 0..w {
                let mut acc = 0.0;
                for (k, &kv) in kernel.iter().enumerate() {
                    let off = k as isize - radius;
                    let (sx, sy) = if horizontal {
                        ((x as isize + off).clamp(0, w as isize - 1) as usize, y)
                    } else {
                        (x, (y as isize + off).clamp(0, h as isize - 1) as usize)
                    };
                    acc += kv * src[sy * w + sx];
                }
                out[y * w + x] = acc / norm;
            }
        }
        out
    };
    let blurred = pass(&pass(&src, true), false);
    GrayMap::from_clamped(w, h, blurred.into_iter().map(T::c).collect()).expect("same dimensions")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::decouple::decouple;

    #[test]
    fn deterministic_per_seed() {
        let a = synth_generate::<f64>(6, 32, 7).unwrap();
        let b = synth_generate::<f64>(6, 32, 7).unwrap();
        assert_eq!(a, b);
        let c = synth_generate::<f64>(6, 32, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn masks_are_never_constant_and_decouple_exactly() {
        for s in synth_generate::<f64>(40, 16, 3).unwrap() {
            assert!(!s.mask.is_constant());
            let l = decouple::<f64>(&s.mask);
            for i in 0..s.mask.len() {
                assert_eq!(l.body.data()[i] + l.detail.data()[i], s.mask.data()[i] as f64);
            }
        }
    }

    #[test]
    fn foreground_is_brighter_on_average() {
        for s in synth_generate::<f32>(10, 32, 11).unwrap() {
            let (mut fg, mut nf, mut bg, mut nb) = (0.0, 0, 0.0, 0);
            for (&v, &m) in s.image.data().iter().zip(s.mask.data()) {
                if m == 1 {
                    fg += v;
                    nf += 1;
                } else {
                    bg += v;
                    nb += 1;
                }
            }
            assert!(fg / nf as f32 > bg / nb as f32);
        }
    }

    #[test]
    fn rejects_bad_side() {
        assert!(synth_generate::<f64>(1, 20, 0).is_err());
        assert!(synth_generate::<f64>(0, 16, 0).is_err());
    }

    #[test]
    fn blur_preserves_constants() {
        let m = GrayMap::filled(9, 7, 0.25f64).unwrap();
        let b = gaussian_blur(&m, 1.5);
        assert!(b.data().iter().all(|&v| (v - 0.25).abs() < 1e-12));
        for c in [0.0, 1.0] {
            let b = gaussian_blur(&GrayMap::filled(9, 7, c).unwrap(), 2.3);
            assert!(b.data().iter().all(|&v| v == c));
        }
    }

    #[test]
    fn writes_pairs() {
        let dir = tempfile::tempdir().unwrap();
        write_dataset(&synth_generate::<f64>(3, 16, 1).unwrap(), dir.path()).unwrap();
        assert_eq!(std::fs::read_dir(dir.path().join("images")).unwrap().count(), 3);
        assert_eq!(std::fs::read_dir(dir.path().join("masks")).unwrap().count(), 3);
    }

    #[test]
    fn load_round_trips_masks() {
        let dir = tempfile::tempdir().unwrap();
        let samples = synth_generate::<f64>(4, 16, 5).unwrap();
        write_dataset(&samples, dir.path()).unwrap();
        let back = load_dataset::<f64>(dir.path()).unwrap();
        assert_eq!(back.len(), 4);
        for (a, b) in samples.iter().zip(&back) {
            assert_eq!(a.mask, b.mask);
            for (x, y) in a.image.data().iter().zip(b.image.data()) {
                assert!((x - y).abs() <= 0.5 / 255.0 + 1e-12);
            }
        }
        assert!(load_dataset::<f64>(&dir.path().join("missing")).is_err());
    }
}
