//! Decomposition of a binary saliency mask into a body label and a detail
//! label.
//!
//! The distance field of the mask is min-max normalized to `I'`; the body
//! label is `I * I'` and the detail label `I * (1 - I')`, so the two always
//! sum back to the mask.

use std::ffi::OsStr;
use std::path::{Path, PathBuf};

use log::{info, warn};
use rayon::prelude::*;

use crate::distance::{edt, DistanceField};
use crate::error::{Error, Result};
use crate::gray::{load_mask, save_gray, BinaryMask, BitDepth, GrayMap, DEFAULT_THRESHOLD};
use crate::scalar::Scalar;

#[derive(Clone, Debug, PartialEq)]
pub struct DecoupledLabels<T> {
    pub body: GrayMap<T>,
    pub detail: GrayMap<T>,
}

/// Linear map of the field onto `[0, 1]`. A constant field maps to zeros.
pub fn normalize_field<T: Scalar>(field: &DistanceField) -> GrayMap<T> {
    let values = field.values();
    let min = values.iter().copied().fold(f64::INFINITY, f64::min);
    let max = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let span = max - min;
    let data = if span > 0.0 {
        values.iter().map(|&v| T::c((v - min) / span)).collect()
    } else {
        vec![T::zero(); values.len()]
    };
    GrayMap::from_clamped(field.width(), field.height(), data).expect("field dimensions are valid")
}

pub fn decouple<T: Scalar>(mask: &BinaryMask) -> DecoupledLabels<T> {
    let (w, h) = mask.dims();
    let normalized: GrayMap<T> = match edt(mask) {
        Ok(field) => normalize_field(&field),
        // No background: there is no boundary, the whole object is body.
        Err(_) => {
            return DecoupledLabels {
                body: mask.to_gray(),
                detail: GrayMap::from_clamped(w, h, vec![T::zero(); w * h]).expect("valid dims"),
            }
        }
    };
    let mut body = Vec::with_capacity(mask.len());
    let mut detail = Vec::with_capacity(mask.len());
    for (&i, &n) in mask.data().iter().zip(normalized.data()) {
        let i = if i == 1 { T::one() } else { T::zero() };
        body.push(i * n);
        detail.push(i * (T::one() - n));
    }
    DecoupledLabels {
        body: GrayMap::new(w, h, body).expect("products of [0,1] values"),
        detail: GrayMap::new(w, h, detail).expect("products of [0,1] values"),
    }
}

/// Output path `<out_dir>/<stem>.<suffix>.png`.
pub fn label_path(out_dir: &Path, input: &Path, suffix: &str) -> PathBuf {
    let stem = input.file_stem().and_then(OsStr::to_str).unwrap_or("mask");
    out_dir.join(format!("{stem}.{suffix}.png"))
}

/// PNG files directly inside `dir`, sorted by name.
pub fn list_pngs(dir: &Path) -> Result<Vec<PathBuf>> {
    let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| {
            p.is_file()
                && p.extension()
                    .and_then(OsStr::to_str)
                    .is_some_and(|e| e.eq_ignore_ascii_case("png"))
        })
        .collect();
    files.sort();
    Ok(files)
}

/// Decouples every PNG mask in `gt_dir`, writing `<name>.body.png` and
/// `<name>.detail.png` (16-bit) into `out_dir`. Unreadable masks are logged
/// and skipped. Runs on the current rayon pool.
pub fn decouple_dataset(gt_dir: &Path, out_dir: &Path) -> Result<usize> {
    let files = list_pngs(gt_dir)?;
    if files.is_empty() {
        return Err(Error::NoMasks(gt_dir.to_path_buf()));
    }
    if !out_dir.is_dir() {
        std::fs::create_dir_all(out_dir)?;
    }
    let outcomes: Vec<Result<bool>> = files
        .par_iter()
        .map(|path| {
            let mask = match load_mask(path, DEFAULT_THRESHOLD) {
                Ok(m) => m,
                Err(e) => {
                    warn!("skipping {}: {e}", path.display());
                    return Ok(false);
                }
            };
            let labels = decouple::<f64>(&mask);
            save_gray(&labels.body, label_path(out_dir, path, "body"), BitDepth::Sixteen)?;
            save_gray(&labels.detail, label_path(out_dir, path, "detail"), BitDepth::Sixteen)?;
            Ok(true)
        })
        .collect();
    let mut done = 0;
    for o in outcomes {
        if o? {
            done += 1;
        }
    }
    info!("decoupled {done} of {} masks", files.len());
    Ok(done)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::distance::edt_bruteforce;
    use proptest::prelude::*;

    #[test]
    fn normalize_examples() {
        let m = BinaryMask::new(5, 1, vec![0, 1, 1, 1, 0]).unwrap();
        let n: GrayMap<f64> = normalize_field(&edt_bruteforce(&m).unwrap());
        assert_eq!(n.data(), &[0.0, 0.5, 1.0, 0.5, 0.0]);

        let zeros = BinaryMask::new(3, 1, vec![0, 0, 0]).unwrap();
        let n: GrayMap<f64> = normalize_field(&edt(&zeros).unwrap());
        assert!(n.data().iter().all(|&v| v == 0.0));

        // min 0, max 1 already: identity.
        let m = BinaryMask::new(3, 1, vec![0, 1, 0]).unwrap();
        let field = edt(&m).unwrap();
        let n: GrayMap<f64> = normalize_field(&field);
        assert_eq!(n.data(), field.values().as_slice());
    }

    #[test]
    fn line_decoupling() {
        let m = BinaryMask::new(5, 1, vec![0, 1, 1, 1, 0]).unwrap();
        let l = decouple::<f64>(&m);
        assert_eq!(l.body.data(), &[0.0, 0.5, 1.0, 0.5, 0.0]);
        assert_eq!(l.detail.data(), &[0.0, 0.5, 0.0, 0.5, 0.0]);
    }

    #[test]
    fn degenerate_masks() {
        let empty = BinaryMask::new(2, 2, vec![0; 4]).unwrap();
        let l = decouple::<f64>(&empty);
        assert!(l.body.data().iter().chain(l.detail.data()).all(|&v| v == 0.0));

        let full = BinaryMask::new(2, 2, vec![1; 4]).unwrap();
        let l = decouple::<f32>(&full);
        assert!(l.body.data().iter().all(|&v| v == 1.0));
        assert!(l.detail.data().iter().all(|&v| v == 0.0));
    }

    fn arb_mask() -> impl Strategy<Value = BinaryMask> {
        (1usize..24, 1usize..24, 0.1f64..0.9).prop_flat_map(|(w, h, p)| {
            prop::collection::vec(prop::bool::weighted(p), w * h)
                .prop_map(move |b| BinaryMask::new(w, h, b.into_iter().map(u8::from).collect()).unwrap())
        })
    }

    proptest! {
        #[test]
        fn body_plus_detail_is_mask(m in arb_mask()) {
            let l64 = decouple::<f64>(&m);
            let l32 = decouple::<f32>(&m);
            for i in 0..m.len() {
                prop_assert_eq!(l64.body.data()[i] + l64.detail.data()[i], m.data()[i] as f64);
                prop_assert_eq!(l32.body.data()[i] + l32.detail.data()[i], m.data()[i] as f32);
            }
        }

        #[test]
        fn body_peaks_at_deepest_pixels(m in arb_mask()) {
            let l = decouple::<f64>(&m);
            if let Ok(d) = edt(&m) {
                let peak = l.body.data().iter().copied().fold(0.0, f64::max);
                let deepest = d.squared().iter().copied().max().unwrap();
                for i in 0..m.len() {
                    if peak > 0.0 && l.body.data()[i] == peak {
                        prop_assert_eq!(m.data()[i], 1);
                        prop_assert_eq!(d.squared()[i], deepest);
                    }
                }
            }
        }

        #[test]
        fn detail_support_is_shallow_foreground(m in arb_mask()) {
            let l = decouple::<f64>(&m);
            if let Ok(d) = edt(&m) {
                let deepest = d.squared().iter().copied().max().unwrap();
                for i in 0..m.len() {
                    if l.detail.data()[i] > 0.0 {
                        prop_assert_eq!(m.data()[i], 1);
                        prop_assert!(d.squared()[i] < deepest);
                    }
                    if m.data()[i] == 0 {
                        prop_assert_eq!(l.body.data()[i], 0.0);
                        prop_assert_eq!(l.detail.data()[i], 0.0);
                    }
                }
                // Foreground pixels touching the background carry the most detail.
                let max_detail = l.detail.data().iter().copied().fold(0.0, f64::max);
                for i in 0..m.len() {
                    if d.squared()[i] == 1 {
                        prop_assert_eq!(l.detail.data()[i], max_detail);
                    }
                }
            }
        }
    }
}
