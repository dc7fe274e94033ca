//! Grayscale maps, binary masks and PNG I/O.

use std::path::Path;

use image::{DynamicImage, ImageFormat, ImageReader};

use crate::error::{Error, Result};
use crate::io::write_atomic;
use crate::scalar::Scalar;

/// Default ground-truth binarization threshold (128/255).
pub const DEFAULT_THRESHOLD: f64 = 128.0 / 255.0;

/// Row-major image of intensities in `[0, 1]`.
#[derive(Clone, Debug, PartialEq)]
pub struct GrayMap<T> {
    width: usize,
    height: usize,
    data: Vec<T>,
}

/// Row-major `{0, 1}` mask. Foreground pixels are `1`.
#[derive(Clone, Debug, PartialEq, Eq, Hash)]
pub struct BinaryMask {
    width: usize,
    height: usize,
    data: Vec<u8>,
}

fn check_dims(width: usize, height: usize, len: usize) -> Result<()> {
    if width == 0 || height == 0 {
        return Err(Error::InvalidDimensions { width, height });
    }
    if width * height != len {
        return Err(Error::DataLength { width, height, len });
    }
    Ok(())
}

pub(crate) fn ensure_same_dims(a: (usize, usize), b: (usize, usize)) -> Result<()> {
    if a != b {
        return Err(Error::DimensionMismatch { left: a, right: b });
    }
    Ok(())
}

impl<T: Scalar> GrayMap<T> {
    /// Builds a map, rejecting values outside `[0, 1]` (and NaN).
    pub fn new(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if let Some((index, v)) = data
            .iter()
            .enumerate()
            .find(|(_, v)| !(**v >= T::zero() && **v <= T::one()))
        {
            return Err(Error::OutOfRange {
                index,
                value: v.to_f64_lossy(),
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    /// Builds a map by clamping every value into `[0, 1]`. NaN becomes 0.
    pub fn from_clamped(width: usize, height: usize, data: Vec<T>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        let data = data
            .into_iter()
            .map(|v| if v.is_nan() { T::zero() } else { v.max(T::zero()).min(T::one()) })
            .collect();
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn filled(width: usize, height: usize, value: T) -> Result<Self> {
        Self::new(width, height, vec![value; width * height])
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> T) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(f(x, y));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    pub fn get(&self, x: usize, y: usize) -> T {
        self.data[y * self.width + x]
    }

    /// Pixel-wise `1 - v`.
    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| T::one() - v).collect(),
        }
    }

    pub fn flip_horizontal(&self) -> Self {
        let mut data = Vec::with_capacity(self.data.len());
        for row in self.data.chunks(self.width) {
            data.extend(row.iter().rev());
        }
        Self {
            width: self.width,
            height: self.height,
            data,
        }
    }

    pub fn mean(&self) -> T {
        self.data.iter().copied().sum::<T>() / T::c(self.data.len() as f64)
    }

    pub fn cast<U: Scalar>(&self) -> GrayMap<U> {
        GrayMap {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|v| U::c(v.to_f64_lossy())).collect(),
        }
    }
}

impl BinaryMask {
    /// Builds a mask; every value must be exactly 0 or 1.
    pub fn new(width: usize, height: usize, data: Vec<u8>) -> Result<Self> {
        check_dims(width, height, data.len())?;
        if let Some((index, &v)) = data.iter().enumerate().find(|(_, v)| **v > 1) {
            return Err(Error::OutOfRange {
                index,
                value: v as f64,
            });
        }
        Ok(Self {
            width,
            height,
            data,
        })
    }

    pub fn from_fn(width: usize, height: usize, f: impl Fn(usize, usize) -> bool) -> Result<Self> {
        let mut data = Vec::with_capacity(width * height);
        for y in 0..height {
            for x in 0..width {
                data.push(u8::from(f(x, y)));
            }
        }
        Self::new(width, height, data)
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn dims(&self) -> (usize, usize) {
        (self.width, self.height)
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[u8] {
        &self.data
    }

    pub fn get(&self, x: usize, y: usize) -> bool {
        self.data[y * self.width + x] == 1
    }

    pub fn foreground_count(&self) -> usize {
        self.data.iter().filter(|&&v| v == 1).count()
    }

    /// True when the mask is entirely foreground or entirely background.
    pub fn is_constant(&self) -> bool {
        let fg = self.foreground_count();
        fg == 0 || fg == self.data.len()
    }

    pub fn complement(&self) -> Self {
        Self {
            width: self.width,
            height: self.height,
            data: self.data.iter().map(|&v| 1 - v).collect(),
        }
    }

    pub fn to_gray<T: Scalar>(&self) -> GrayMap<T> {
        GrayMap {
            width: self.width,
            height: self.height,
            data: self
                .data
                .iter()
                .map(|&v| if v == 1 { T::one() } else { T::zero() })
                .collect(),
        }
    }

    /// Foreground pixels with at least one in-image 4-neighbor in the
    /// background. The image frame does not count as background.
    pub fn edge_pixels(&self) -> BinaryMask {
        let (w, h) = (self.width, self.height);
        let mut out = vec![0u8; w * h];
        for y in 0..h {
            for x in 0..w {
                let i = y * w + x;
                if self.data[i] == 0 {
                    continue;
                }
                let bg_left = x > 0 && self.data[i - 1] == 0;
                let bg_right = x + 1 < w && self.data[i + 1] == 0;
                let bg_up = y > 0 && self.data[i - w] == 0;
                let bg_down = y + 1 < h && self.data[i + w] == 0;
                if bg_left || bg_right || bg_up || bg_down {
                    out[i] = 1;
                }
            }
        }
        BinaryMask {
            width: w,
            height: h,
            data: out,
        }
    }
}

/// Pixel is foreground iff `value >= threshold`.
pub fn binarize<T: Scalar>(map: &GrayMap<T>, threshold: T) -> BinaryMask {
    BinaryMask {
        width: map.width,
        height: map.height,
        data: map.data.iter().map(|&v| u8::from(v >= threshold)).collect(),
    }
}

fn unsupported(path: &Path, reason: impl Into<String>) -> Error {
    Error::UnsupportedImage {
        path: path.to_path_buf(),
        reason: reason.into(),
    }
}

fn luma601(r: f64, g: f64, b: f64) -> f64 {
    0.299 * r + 0.587 * g + 0.114 * b
}

/// Loads an 8/16-bit grayscale or RGB PNG as intensities in `[0, 1]`.
pub fn load_gray<T: Scalar>(path: impl AsRef<Path>) -> Result<GrayMap<T>> {
    let path = path.as_ref();
    let reader = ImageReader::open(path)?.with_guessed_format()?;
    if reader.format() != Some(ImageFormat::Png) {
        return Err(unsupported(path, "not a PNG file"));
    }
    let img = reader.decode()?;
    let (w, h) = (img.width() as usize, img.height() as usize);
    if w == 0 || h == 0 {
        return Err(unsupported(path, "zero-sized image"));
    }
    let data: Vec<f64> = match &img {
        DynamicImage::ImageLuma8(b) => b.as_raw().iter().map(|&v| v as f64 / 255.0).collect(),
        DynamicImage::ImageLuma16(b) => b.as_raw().iter().map(|&v| v as f64 / 65535.0).collect(),
        DynamicImage::ImageRgb8(b) => b
            .as_raw()
            .chunks_exact(3)
            .map(|p| luma601(p[0] as f64, p[1] as f64, p[2] as f64) / 255.0)
            .collect(),
        DynamicImage::ImageRgb16(b) => b
            .as_raw()
            .chunks_exact(3)
            .map(|p| luma601(p[0] as f64, p[1] as f64, p[2] as f64) / 65535.0)
            .collect(),
        other => {
            return Err(unsupported(
                path,
                format!("pixel layout {:?}", other.color()),
            ))
        }
    };
    GrayMap::from_clamped(w, h, data.into_iter().map(T::c).collect())
}

/// Loads a PNG and binarizes it at `threshold`.
pub fn load_mask(path: impl AsRef<Path>, threshold: f64) -> Result<BinaryMask> {
    let map: GrayMap<f64> = load_gray(path)?;
    Ok(binarize(&map, threshold))
}

/// PNG bit depth for [`save_gray`].
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum BitDepth {
    Eight,
    Sixteen,
}

impl BitDepth {
    pub fn max_value(self) -> f64 {
        match self {
            BitDepth::Eight => 255.0,
            BitDepth::Sixteen => 65535.0,
        }
    }
}

/// Quantizes `v` to `round_half_up(v * max)`.
pub fn quantize<T: Scalar>(v: T, depth: BitDepth) -> u16 {
    let max = depth.max_value();
    (v.to_f64_lossy() * max + 0.5).floor().clamp(0.0, max) as u16
}

/// Encodes a map as a grayscale PNG.
pub fn encode_png<T: Scalar>(map: &GrayMap<T>, depth: BitDepth) -> Result<Vec<u8>> {
    let (w, h) = (map.width as u32, map.height as u32);
    let img = match depth {
        BitDepth::Eight => {
            let raw: Vec<u8> = map.data.iter().map(|&v| quantize(v, depth) as u8).collect();
            DynamicImage::ImageLuma8(
                image::GrayImage::from_raw(w, h, raw).expect("buffer matches dimensions"),
            )
        }
        BitDepth::Sixteen => {
            let raw: Vec<u16> = map.data.iter().map(|&v| quantize(v, depth)).collect();
            DynamicImage::ImageLuma16(
                image::ImageBuffer::from_raw(w, h, raw).expect("buffer matches dimensions"),
            )
        }
    };
    let mut bytes = Vec::new();
    img.write_to(&mut std::io::Cursor::new(&mut bytes), ImageFormat::Png)?;
    Ok(bytes)
}

/// Writes a map as a grayscale PNG (atomically).
pub fn save_gray<T: Scalar>(map: &GrayMap<T>, path: impl AsRef<Path>, depth: BitDepth) -> Result<()> {
    write_atomic(path.as_ref(), &encode_png(map, depth)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn write_raw_png(path: &Path, img: DynamicImage) {
        img.save_with_format(path, ImageFormat::Png).unwrap();
    }

    #[test]
    fn load_8bit_scaling() {
        let dir = tempfile::tempdir().unwrap();
        for (value, want) in [(255u8, 1.0), (0, 0.0), (128, 128.0 / 255.0)] {
            let p = dir.path().join(format!("v{value}.png"));
            let buf = image::GrayImage::from_pixel(3, 2, image::Luma([value]));
            write_raw_png(&p, DynamicImage::ImageLuma8(buf));
            let m: GrayMap<f64> = load_gray(&p).unwrap();
            assert_eq!(m.dims(), (3, 2));
            assert!(m.data().iter().all(|&v| v == want));
        }
        let m: GrayMap<f64> = load_gray(dir.path().join("v128.png")).unwrap();
        assert!((m.get(0, 0) - 0.50196).abs() < 1e-5);
    }

    #[test]
    fn load_rgb_uses_rec601_luma() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("rgb.png");
        let buf = image::RgbImage::from_pixel(2, 2, image::Rgb([255, 0, 0]));
        write_raw_png(&p, DynamicImage::ImageRgb8(buf));
        let m: GrayMap<f64> = load_gray(&p).unwrap();
        assert!((m.get(1, 1) - 0.299).abs() < 1e-12);
    }

    #[test]
    fn load_errors() {
        let dir = tempfile::tempdir().unwrap();
        assert!(load_gray::<f64>(dir.path().join("missing.png")).is_err());
        let junk = dir.path().join("junk.png");
        std::fs::write(&junk, b"definitely not an image").unwrap();
        assert!(load_gray::<f64>(&junk).is_err());
        let rgba = dir.path().join("rgba.png");
        write_raw_png(
            &rgba,
            DynamicImage::ImageRgba8(image::RgbaImage::from_pixel(1, 1, image::Rgba([1, 2, 3, 4]))),
        );
        assert!(matches!(
            load_gray::<f64>(&rgba),
            Err(Error::UnsupportedImage { .. })
        ));
    }

    #[test]
    fn quantization_rules() {
        assert_eq!(quantize(1.0f64, BitDepth::Sixteen), 65535);
        assert_eq!(quantize(0.5f64, BitDepth::Eight), 128);
        assert_eq!(quantize(0.0f64, BitDepth::Eight), 0);
    }

    #[test]
    fn save_8bit_stores_rounded_value() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("half.png");
        save_gray(&GrayMap::filled(2, 2, 0.5f64).unwrap(), &p, BitDepth::Eight).unwrap();
        let img = image::open(&p).unwrap().into_luma8();
        assert!(img.pixels().all(|p| p.0[0] == 128));
    }

    #[test]
    fn save_16bit_stores_full_scale() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("one.png");
        save_gray(&GrayMap::filled(1, 1, 1.0f64).unwrap(), &p, BitDepth::Sixteen).unwrap();
        let img = image::open(&p).unwrap().into_luma16();
        assert_eq!(img.get_pixel(0, 0).0[0], 65535);
    }

    #[test]
    fn binarize_examples() {
        let m = GrayMap::filled(2, 2, 0.6f64).unwrap();
        assert!(binarize(&m, 0.5).data().iter().all(|&v| v == 1));
        let m = GrayMap::filled(2, 2, 0.4f64).unwrap();
        assert!(binarize(&m, 0.5).data().iter().all(|&v| v == 0));
        let m = GrayMap::new(3, 1, vec![0.2f64, 0.5, 0.9]).unwrap();
        assert_eq!(binarize(&m, 0.5).data(), &[0, 1, 1]);
    }

    #[test]
    fn constructors_validate() {
        assert!(GrayMap::new(0, 1, Vec::<f64>::new()).is_err());
        assert!(GrayMap::new(2, 1, vec![0.0f64]).is_err());
        assert!(GrayMap::new(1, 1, vec![1.5f64]).is_err());
        assert!(GrayMap::new(1, 1, vec![f64::NAN]).is_err());
        assert!(BinaryMask::new(1, 1, vec![2]).is_err());
    }

    #[test]
    fn edge_pixels_ignore_image_frame() {
        let m = BinaryMask::new(5, 1, vec![0, 1, 1, 1, 0]).unwrap();
        assert_eq!(m.edge_pixels().data(), &[0, 1, 0, 1, 0]);
        let full = BinaryMask::new(3, 3, vec![1; 9]).unwrap();
        assert_eq!(full.edge_pixels().foreground_count(), 0);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn roundtrip_16bit_within_half_step(
            (w, h, data) in (1usize..8, 1usize..8)
                .prop_flat_map(|(w, h)| (Just(w), Just(h), prop::collection::vec(0.0f64..=1.0, w * h)))
        ) {
            let dir = tempfile::tempdir().unwrap();
            let p = dir.path().join("rt.png");
            let m = GrayMap::new(w, h, data).unwrap();
            save_gray(&m, &p, BitDepth::Sixteen).unwrap();
            let back: GrayMap<f64> = load_gray(&p).unwrap();
            let bound = 1.0 / (2.0 * 65535.0) + 1e-15;
            for (a, b) in m.data().iter().zip(back.data()) {
                prop_assert!((a - b).abs() <= bound);
            }
        }

        #[test]
        fn binarize_is_idempotent_on_binary_maps(
            bits in prop::collection::vec(0u8..=1, 1..40),
            t in 0.001f64..=1.0,
        ) {
            let n = bits.len();
            let m = GrayMap::new(n, 1, bits.iter().map(|&b| b as f64).collect()).unwrap();
            let once = binarize(&m, t);
            let twice = binarize(&once.to_gray::<f64>(), t);
            prop_assert_eq!(&once, &twice);
            prop_assert_eq!(once.data(), &bits[..]);
        }
    }
}
