//! Prediction error as a function of distance to the ground-truth contour,
//! and the global-versus-edge-band MAE split.

use std::path::Path;

use log::info;
use rayon::prelude::*;

use crate::distance::distance_to_edge;
use crate::error::{Error, Result};
use crate::gray::{ensure_same_dims, BinaryMask, GrayMap};
use crate::metrics::{load_pairs, mae};
use crate::scalar::Scalar;

pub const DEFAULT_BINS: usize = 20;
pub const DEFAULT_BAND_RADIUS: u32 = 2;

/// Absolute error accumulated over equal-width bins of normalized distance.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorDistanceHistogram<T> {
    pub sums: Vec<T>,
    pub counts: Vec<u64>,
}

impl<T: Scalar> ErrorDistanceHistogram<T> {
    pub fn empty(bins: usize) -> Self {
        Self {
            sums: vec![T::zero(); bins],
            counts: vec![0; bins],
        }
    }

    pub fn bins(&self) -> usize {
        self.counts.len()
    }

    /// `[lo, hi)` of bin `i` (the last bin also contains 1).
    pub fn bin_range(&self, i: usize) -> (f64, f64) {
        let b = self.bins() as f64;
        (i as f64 / b, (i + 1) as f64 / b)
    }

    /// Mean error per bin; `None` for empty bins.
    pub fn means(&self) -> Vec<Option<T>> {
        self.sums
            .iter()
            .zip(&self.counts)
            .map(|(&s, &c)| (c > 0).then(|| s / T::c(c as f64)))
            .collect()
    }

    pub fn total_count(&self) -> u64 {
        self.counts.iter().sum()
    }

    /// `bin_lo,bin_hi,count,mean_error` rows; empty bins leave the mean blank.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("bin_lo,bin_hi,count,mean_error\n");
        for (i, m) in self.means().into_iter().enumerate() {
            let (lo, hi) = self.bin_range(i);
            let mean = m.map(|v| v.to_string()).unwrap_or_default();
            s.push_str(&format!("{lo},{hi},{},{mean}\n", self.counts[i]));
        }
        s
    }
}

fn bin_index(normalized: f64, bins: usize) -> usize {
    ((normalized * bins as f64).floor() as usize).min(bins - 1)
}

/// Bins every pixel's `|P - G|` by its distance to the nearest ground-truth
/// edge, normalized by the largest such distance in the image.
pub fn error_distance_hist<T: Scalar>(
    pred: &GrayMap<T>,
    gt: &BinaryMask,
    bins: usize,
) -> Result<ErrorDistanceHistogram<T>> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    if bins == 0 {
        return Err(Error::Config("bin count must be positive".into()));
    }
    let field = distance_to_edge(gt)?;
    let max = field.max();
    let mut hist = ErrorDistanceHistogram::empty(bins);
    for (i, (&p, &g)) in pred.data().iter().zip(gt.data()).enumerate() {
        let g = if g == 1 { T::one() } else { T::zero() };
        let normalized = if max > 0.0 { field.value(i) / max } else { 0.0 };
        let b = bin_index(normalized, bins);
        hist.sums[b] += (p - g).abs();
        hist.counts[b] += 1;
    }
    Ok(hist)
}

/// Pixel-weighted sum of histograms with the same bin count.
pub fn aggregate_hists<T: Scalar>(hists: &[ErrorDistanceHistogram<T>]) -> Result<ErrorDistanceHistogram<T>> {
    let bins = hists.first().map(|h| h.bins()).ok_or(Error::LengthMismatch { expected: 1, got: 0 })?;
    let mut out = ErrorDistanceHistogram::empty(bins);
    for h in hists {
        if h.bins() != bins {
            return Err(Error::BinMismatch(bins, h.bins()));
        }
        for i in 0..bins {
            out.sums[i] += h.sums[i];
            out.counts[i] += h.counts[i];
        }
    }
    Ok(out)
}

#[derive(Clone, Debug, PartialEq)]
pub struct EdgeBandReport<T> {
    pub mae_global: T,
    pub mae_edge: T,
    pub band_radius: u32,
}

/// MAE over all pixels and over the band of pixels within `band_radius`
/// of the ground-truth edge.
pub fn mae_edge_split<T: Scalar>(pred: &GrayMap<T>, gt: &BinaryMask, band_radius: u32) -> Result<EdgeBandReport<T>> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    let field = distance_to_edge(gt)?;
    let gt_map: GrayMap<T> = gt.to_gray();
    let r2 = (band_radius as u64).pow(2);
    let mut sum = T::zero();
    let mut count = 0u64;
    for ((&p, &g), &d2) in pred.data().iter().zip(gt_map.data()).zip(field.squared()) {
        if d2 <= r2 {
            sum += (p - g).abs();
            count += 1;
        }
    }
    Ok(EdgeBandReport {
        mae_global: mae(pred, &gt_map)?,
        mae_edge: sum / T::c(count as f64),
        band_radius,
    })
}

/// Dataset-level error-distance analysis.
#[derive(Clone, Debug, PartialEq)]
pub struct ErrorDistanceReport<T> {
    pub histogram: ErrorDistanceHistogram<T>,
    pub bands: Vec<(String, EdgeBandReport<T>)>,
    /// Images with a constant ground truth.
    pub skipped: Vec<String>,
}

impl<T: Scalar> ErrorDistanceReport<T> {
    /// `image,mae_global,mae_edge` rows.
    pub fn bands_csv(&self) -> String {
        let mut s = String::from("image,mae_global,mae_edge\n");
        for (name, b) in &self.bands {
            s.push_str(&format!("{name},{},{}\n", b.mae_global, b.mae_edge));
        }
        s
    }
}

pub fn analyze_pairs<T: Scalar>(
    pairs: &[(String, GrayMap<T>, BinaryMask)],
    bins: usize,
    band_radius: u32,
) -> Result<ErrorDistanceReport<T>> {
    type PerImage<T> = Option<(ErrorDistanceHistogram<T>, EdgeBandReport<T>)>;
    let results: Vec<Result<PerImage<T>>> = pairs
        .par_iter()
        .map(|(_, pred, gt)| match error_distance_hist(pred, gt, bins) {
            Ok(h) => Ok(Some((h, mae_edge_split(pred, gt, band_radius)?))),
            Err(Error::NoEdge) => Ok(None),
            Err(e) => Err(e),
        })
        .collect();
    let mut hists = Vec::new();
    let mut bands = Vec::new();
    let mut skipped = Vec::new();
    for ((name, _, _), r) in pairs.iter().zip(results) {
        match r? {
            Some((h, b)) => {
                hists.push(h);
                bands.push((name.clone(), b));
            }
            None => {
                info!("skipping {name}: ground truth has no edge");
                skipped.push(name.clone());
            }
        }
    }
    let histogram = if hists.is_empty() {
        ErrorDistanceHistogram::empty(bins)
    } else {
        aggregate_hists(&hists)?
    };
    Ok(ErrorDistanceReport {
        histogram,
        bands,
        skipped,
    })
}

pub fn analyze_dataset<T: Scalar>(
    pred_dir: &Path,
    gt_dir: &Path,
    bins: usize,
    band_radius: u32,
) -> Result<ErrorDistanceReport<T>> {
    let pairs = load_pairs::<T>(pred_dir, gt_dir)?;
    analyze_pairs(&pairs, bins, band_radius)
}
