//! Saliency evaluation: MAE, precision/recall and F-measure curves, mean
//! F-measure, and the enhanced-alignment measure (E-measure).
//!
//! Curves use 256 thresholds `t_i = (i + 1) / 256`, all in `(0, 1]`. A pixel
//! is predicted salient at `t` when `value >= t`. Because every threshold is
//! a dyadic fraction, the level a pixel reaches is computed exactly as
//! `floor(256 · value)`.

use std::collections::BTreeMap;
use std::ffi::OsStr;
use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::Serialize;

use crate::decouple::list_pngs;
use crate::error::{Error, Result};
use crate::gray::{binarize, ensure_same_dims, load_gray, BinaryMask, GrayMap, DEFAULT_THRESHOLD};
use crate::scalar::Scalar;

pub const NUM_THRESHOLDS: usize = 256;

/// F-measure weight β².
pub const BETA_SQUARED: f64 = 0.3;

/// Regularizer in the alignment term of the E-measure.
pub const E_MEASURE_DELTA: f64 = f64::EPSILON;

pub fn thresholds<T: Scalar>() -> Vec<T> {
    (1..=NUM_THRESHOLDS)
        .map(|i| T::c(i as f64 / NUM_THRESHOLDS as f64))
        .collect()
}

/// `(1/N) Σ |P - G|`.
pub fn mae<T: Scalar>(pred: &GrayMap<T>, gt: &GrayMap<T>) -> Result<T> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    let sum: T = pred
        .data()
        .iter()
        .zip(gt.data())
        .map(|(&p, &g)| (p - g).abs())
        .sum();
    Ok(sum / T::c(pred.len() as f64))
}

/// Binary confusion counts.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    pub fn_: u64,
    pub tn: u64,
}

impl Confusion {
    pub fn from_masks(pred: &BinaryMask, gt: &BinaryMask) -> Result<Self> {
        ensure_same_dims(pred.dims(), gt.dims())?;
        let mut c = Confusion::default();
        for (&p, &g) in pred.data().iter().zip(gt.data()) {
            match (p, g) {
                (1, 1) => c.tp += 1,
                (1, _) => c.fp += 1,
                (_, 1) => c.fn_ += 1,
                _ => c.tn += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    /// `TP / (TP + FP)`, or 1 when nothing is predicted.
    pub fn precision<T: Scalar>(&self) -> T {
        let predicted = self.tp + self.fp;
        if predicted == 0 {
            T::one()
        } else {
            T::c(self.tp as f64) / T::c(predicted as f64)
        }
    }

    /// `TP / (TP + FN)`, or 1 when the ground truth is empty.
    pub fn recall<T: Scalar>(&self) -> T {
        let actual = self.tp + self.fn_;
        if actual == 0 {
            T::one()
        } else {
            T::c(self.tp as f64) / T::c(actual as f64)
        }
    }

    pub fn f_measure<T: Scalar>(&self) -> T {
        f_beta(self.precision(), self.recall())
    }

    /// E-measure of the binary prediction that produced these counts.
    ///
    /// Each pixel's alignment term only depends on its (pred, gt) pair, so
    /// the mean over pixels collapses to a count-weighted sum of four terms.
    pub fn e_measure<T: Scalar>(&self) -> T {
        let n = self.total();
        let pred_fg = self.tp + self.fp;
        let gt_fg = self.tp + self.fn_;
        if self.fp == 0 && self.fn_ == 0 {
            return T::one();
        }
        if pred_fg == 0 || pred_fg == n || gt_fg == 0 || gt_fg == n {
            return T::zero();
        }
        let nf = T::c(n as f64);
        let mean_p = T::c(pred_fg as f64) / nf;
        let mean_g = T::c(gt_fg as f64) / nf;
        let (one, zero) = (T::one(), T::zero());
        let sum = T::c(self.tp as f64) * enhanced_term(one - mean_p, one - mean_g)
            + T::c(self.fp as f64) * enhanced_term(one - mean_p, zero - mean_g)
            + T::c(self.fn_ as f64) * enhanced_term(zero - mean_p, one - mean_g)
            + T::c(self.tn as f64) * enhanced_term(zero - mean_p, zero - mean_g);
        sum / nf
    }
}

/// `(1 + β²)·P·R / (β²·P + R)`, 0 when `P + R = 0`.
pub fn f_beta<T: Scalar>(precision: T, recall: T) -> T {
    if precision + recall == T::zero() {
        return T::zero();
    }
    let b2 = T::c(BETA_SQUARED);
    (T::one() + b2) * precision * recall / (b2 * precision + recall)
}

/// `(ξ + 1)² / 4` with `ξ = 2·φp·φg / (φp² + φg² + δ)`.
fn enhanced_term<T: Scalar>(phi_p: T, phi_g: T) -> T {
    let two = T::c(2.0);
    let xi = two * phi_p * phi_g / (phi_p * phi_p + phi_g * phi_g + T::c(E_MEASURE_DELTA));
    (xi + T::one()) * (xi + T::one()) / T::c(4.0)
}

/// E-measure between a binary prediction and the ground truth, evaluated
/// pixel by pixel. Identical maps score 1; otherwise a constant map on
/// either side scores 0.
pub fn e_measure<T: Scalar>(pred: &BinaryMask, gt: &BinaryMask) -> Result<T> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    if pred == gt {
        return Ok(T::one());
    }
    if pred.is_constant() || gt.is_constant() {
        return Ok(T::zero());
    }
    let p: GrayMap<T> = pred.to_gray();
    let g: GrayMap<T> = gt.to_gray();
    let (mp, mg) = (p.mean(), g.mean());
    let sum: T = p
        .data()
        .iter()
        .zip(g.data())
        .map(|(&a, &b)| enhanced_term(a - mp, b - mg))
        .sum();
    Ok(sum / T::c(p.len() as f64))
}

/// Precision, recall and F-measure at every threshold.
#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct CurvePoints<T> {
    pub thresholds: Vec<T>,
    pub precision: Vec<T>,
    pub recall: Vec<T>,
    pub f_measure: Vec<T>,
}

impl<T: Scalar> CurvePoints<T> {
    /// Pointwise mean of several curves.
    pub fn average(curves: &[CurvePoints<T>]) -> Option<Self> {
        let first = curves.first()?;
        let n = T::c(curves.len() as f64);
        let mean_of = |pick: fn(&CurvePoints<T>) -> &Vec<T>| -> Vec<T> {
            (0..pick(first).len())
                .map(|i| curves.iter().map(|c| pick(c)[i]).sum::<T>() / n)
                .collect()
        };
        Some(Self {
            thresholds: first.thresholds.clone(),
            precision: mean_of(|c| &c.precision),
            recall: mean_of(|c| &c.recall),
            f_measure: mean_of(|c| &c.f_measure),
        })
    }
}

/// Confusion counts at each of the 256 thresholds, from one pass over the
/// pixels.
pub fn threshold_confusions<T: Scalar>(pred: &GrayMap<T>, gt: &BinaryMask) -> Result<Vec<Confusion>> {
    ensure_same_dims(pred.dims(), gt.dims())?;
    // level(v) = number of thresholds v reaches = floor(256·v), capped.
    let mut fg_hist = [0u64; NUM_THRESHOLDS + 1];
    let mut bg_hist = [0u64; NUM_THRESHOLDS + 1];
    let scale = T::c(NUM_THRESHOLDS as f64);
    for (&v, &g) in pred.data().iter().zip(gt.data()) {
        let level = (v * scale).floor().to_usize().unwrap_or(0).min(NUM_THRESHOLDS);
        if g == 1 {
            fg_hist[level] += 1;
        } else {
            bg_hist[level] += 1;
        }
    }
    let total_fg: u64 = fg_hist.iter().sum();
    let total_bg: u64 = bg_hist.iter().sum();
    // Threshold index i is reached by levels >= i + 1.
    let mut out = vec![Confusion::default(); NUM_THRESHOLDS];
    let (mut tp, mut fp) = (0u64, 0u64);
    for i in (0..NUM_THRESHOLDS).rev() {
        tp += fg_hist[i + 1];
        fp += bg_hist[i + 1];
        out[i] = Confusion {
            tp,
            fp,
            fn_: total_fg - tp,
            tn: total_bg - fp,
        };
    }
    Ok(out)
}

pub fn pr_curve<T: Scalar>(pred: &GrayMap<T>, gt: &BinaryMask) -> Result<CurvePoints<T>> {
    let counts = threshold_confusions(pred, gt)?;
    Ok(CurvePoints {
        thresholds: thresholds(),
        precision: counts.iter().map(Confusion::precision).collect(),
        recall: counts.iter().map(Confusion::recall).collect(),
        f_measure: counts.iter().map(Confusion::f_measure).collect(),
    })
}

/// Mean of the F-measure over the curve's thresholds.
pub fn mean_f<T: Scalar>(curve: &CurvePoints<T>) -> T {
    mean(&curve.f_measure)
}

/// E-measure at each of the 256 thresholds.
pub fn e_curve<T: Scalar>(pred: &GrayMap<T>, gt: &BinaryMask) -> Result<Vec<T>> {
    Ok(threshold_confusions(pred, gt)?
        .iter()
        .map(Confusion::e_measure)
        .collect())
}

fn mean<T: Scalar>(xs: &[T]) -> T {
    xs.iter().copied().sum::<T>() / T::c(xs.len() as f64)
}

/// `min(2 · mean(pred), 1)`.
pub fn adaptive_threshold<T: Scalar>(pred: &GrayMap<T>) -> T {
    (T::c(2.0) * pred.mean()).min(T::one())
}

/// F-measure and E-measure of the prediction binarized at the adaptive
/// threshold.
pub fn adaptive_scores<T: Scalar>(pred: &GrayMap<T>, gt: &BinaryMask) -> Result<(T, T)> {
    let bin = binarize(pred, adaptive_threshold(pred));
    let c = Confusion::from_masks(&bin, gt)?;
    Ok((c.f_measure(), c.e_measure()))
}

/// Which binarization feeds the reported mF and E values.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum ThresholdMode {
    /// Average over the 256 fixed thresholds.
    #[default]
    ThresholdMean,
    /// Single adaptive threshold `2 · mean(pred)`.
    Adaptive,
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct ImageMetrics<T> {
    pub name: String,
    pub mae: T,
    pub mean_f: T,
    pub e_measure: T,
    #[serde(skip)]
    pub curve: CurvePoints<T>,
}

/// All metrics for one prediction/ground-truth pair.
pub fn evaluate_pair<T: Scalar>(
    name: &str,
    pred: &GrayMap<T>,
    gt: &BinaryMask,
    mode: ThresholdMode,
) -> Result<ImageMetrics<T>> {
    let curve = pr_curve(pred, gt)?;
    let (mean_f, e) = match mode {
        ThresholdMode::ThresholdMean => (mean_f(&curve), mean(&e_curve(pred, gt)?)),
        ThresholdMode::Adaptive => adaptive_scores(pred, gt)?,
    };
    Ok(ImageMetrics {
        name: name.to_string(),
        mae: mae(pred, &gt.to_gray())?,
        mean_f,
        e_measure: e,
        curve,
    })
}

#[derive(Clone, Debug, PartialEq, Serialize)]
pub struct MetricReport<T> {
    pub mode: ThresholdMode,
    pub images: Vec<ImageMetrics<T>>,
    pub mae: T,
    pub mean_f: T,
    pub e_measure: T,
    #[serde(skip)]
    pub curve: CurvePoints<T>,
}

impl<T: Scalar> MetricReport<T> {
    pub fn from_images(images: Vec<ImageMetrics<T>>, mode: ThresholdMode) -> Result<Self> {
        if images.is_empty() {
            return Err(Error::NoPairs);
        }
        let col = |f: fn(&ImageMetrics<T>) -> T| mean(&images.iter().map(f).collect::<Vec<_>>());
        let curves: Vec<CurvePoints<T>> = images.iter().map(|m| m.curve.clone()).collect();
        Ok(Self {
            mode,
            mae: col(|m| m.mae),
            mean_f: col(|m| m.mean_f),
            e_measure: col(|m| m.e_measure),
            curve: CurvePoints::average(&curves).expect("non-empty"),
            images,
        })
    }

    /// `name,mae,mF,E` rows followed by a `mean` aggregate row.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("name,mae,mF,E\n");
        for m in &self.images {
            s.push_str(&format!("{},{},{},{}\n", m.name, m.mae, m.mean_f, m.e_measure));
        }
        s.push_str(&format!("mean,{},{},{}\n", self.mae, self.mean_f, self.e_measure));
        s
    }

    pub fn to_json(&self) -> String
    where
        T: Serialize,
    {
        serde_json::to_string_pretty(self).expect("report serializes") + "\n"
    }
}

impl<T: Scalar> CurvePoints<T> {
    /// `t,precision,recall,F` rows, one per threshold.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("t,precision,recall,F\n");
        for i in 0..self.thresholds.len() {
            s.push_str(&format!(
                "{},{},{},{}\n",
                self.thresholds[i], self.precision[i], self.recall[i], self.f_measure[i]
            ));
        }
        s
    }
}

/// Same-named PNG files present in both directories, in name order.
pub fn matching_pairs(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<(String, PathBuf, PathBuf)>> {
    let by_name = |dir: &Path| -> Result<BTreeMap<String, PathBuf>> {
        Ok(list_pngs(dir)?
            .into_iter()
            .filter_map(|p| {
                let name = p.file_name().and_then(OsStr::to_str)?.to_string();
                Some((name, p))
            })
            .collect())
    };
    let preds = by_name(pred_dir)?;
    let gts = by_name(gt_dir)?;
    let pairs: Vec<_> = preds
        .into_iter()
        .filter_map(|(name, p)| gts.get(&name).map(|g| (name, p, g.clone())))
        .collect();
    if pairs.is_empty() {
        return Err(Error::NoPairs);
    }
    Ok(pairs)
}

/// A loaded prediction and its binarized ground truth.
pub type LoadedPair<T> = (String, GrayMap<T>, BinaryMask);

/// Loads every matching pair; size mismatches are collected and reported
/// together.
pub fn load_pairs<T: Scalar>(pred_dir: &Path, gt_dir: &Path) -> Result<Vec<LoadedPair<T>>> {
    let pairs = matching_pairs(pred_dir, gt_dir)?;
    let loaded: Vec<Result<LoadedPair<T>>> = pairs
        .par_iter()
        .map(|(name, p, g)| {
            let pred = load_gray::<T>(p)?;
            let gt = binarize(&load_gray::<T>(g)?, T::c(DEFAULT_THRESHOLD));
            Ok((name.clone(), pred, gt))
        })
        .collect();
    let loaded: Vec<LoadedPair<T>> = loaded.into_iter().collect::<Result<_>>()?;
    let offenders: Vec<String> = loaded
        .iter()
        .filter(|(_, p, g)| p.dims() != g.dims())
        .map(|(n, p, g)| format!("{n} ({}x{} vs {}x{})", p.width(), p.height(), g.width(), g.height()))
        .collect();
    if !offenders.is_empty() {
        return Err(Error::PairSizeMismatch(offenders));
    }
    Ok(loaded)
}

/// Evaluates every same-named pair of PNGs.
pub fn evaluate_dataset<T: Scalar>(pred_dir: &Path, gt_dir: &Path, mode: ThresholdMode) -> Result<MetricReport<T>> {
    let pairs = load_pairs::<T>(pred_dir, gt_dir)?;
    let images: Vec<ImageMetrics<T>> = pairs
        .par_iter()
        .map(|(name, pred, gt)| evaluate_pair(name, pred, gt, mode))
        .collect::<Result<_>>()?;
    MetricReport::from_images(images, mode)
}
