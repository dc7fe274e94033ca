//! SGD training of [`ToyFinModel`] under the five supervision modes.

use std::fmt;
use std::str::FromStr;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::decouple::decouple;
use crate::error::{Error, Result};
use crate::error_distance::{mae_edge_split, DEFAULT_BAND_RADIUS};
use crate::gray::GrayMap;
use crate::losses::{bce_slice, iou_slice, Reduction};
use crate::metrics::mae;
use crate::net::graph::{Graph, Seeds};
use crate::net::model::{ModelConfig, PassNodes, ToyFinModel};
use crate::net::tensor::Tensor4;
use crate::scalar::Scalar;
use crate::synth::Sample;

/// Which labels supervise the body and detail heads. The saliency head is
/// always supervised by the ground-truth mask with the IoU loss.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, clap::ValueEnum)]
pub enum SupervisionMode {
    /// Body label + detail label.
    #[default]
    #[value(name = "body+detail")]
    BodyDetail,
    /// Body label + edge map.
    #[value(name = "body+edge")]
    BodyEdge,
    /// Mask + detail label.
    #[value(name = "sal+detail")]
    SalDetail,
    /// Mask + edge map.
    #[value(name = "sal+edge")]
    SalEdge,
    /// Mask on both heads.
    #[value(name = "sal-only")]
    SalOnly,
}

impl SupervisionMode {
    pub const ALL: [SupervisionMode; 5] = [
        SupervisionMode::BodyDetail,
        SupervisionMode::BodyEdge,
        SupervisionMode::SalDetail,
        SupervisionMode::SalEdge,
        SupervisionMode::SalOnly,
    ];

    pub fn name(self) -> &'static str {
        match self {
            SupervisionMode::BodyDetail => "body+detail",
            SupervisionMode::BodyEdge => "body+edge",
            SupervisionMode::SalDetail => "sal+detail",
            SupervisionMode::SalEdge => "sal+edge",
            SupervisionMode::SalOnly => "sal-only",
        }
    }
}

impl fmt::Display for SupervisionMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for SupervisionMode {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.name() == s)
            .ok_or_else(|| Error::Config(format!("unknown supervision mode {s:?}")))
    }
}

/// Per-sample training targets, flattened row-major.
#[derive(Clone, Debug, PartialEq)]
pub struct Targets<T> {
    pub body: Vec<T>,
    pub detail: Vec<T>,
    /// Binary ground truth for the saliency head.
    pub sal: Vec<T>,
}

impl<T: Scalar> Targets<T> {
    pub fn new(sample: &Sample<T>, mode: SupervisionMode) -> Self {
        let mask = &sample.mask;
        let sal: Vec<T> = mask.to_gray::<T>().into_data();
        let labels = decouple::<T>(mask);
        let edge = || mask.edge_pixels().to_gray::<T>().into_data();
        let (body, detail) = match mode {
            SupervisionMode::BodyDetail => (labels.body.into_data(), labels.detail.into_data()),
            SupervisionMode::BodyEdge => (labels.body.into_data(), edge()),
            SupervisionMode::SalDetail => (sal.clone(), labels.detail.into_data()),
            SupervisionMode::SalEdge => (sal.clone(), edge()),
            SupervisionMode::SalOnly => (sal.clone(), sal.clone()),
        };
        Self { body, detail, sal }
    }
}

/// Batch-averaged loss terms of one step.
#[derive(Clone, Debug, PartialEq)]
pub struct StepLoss<T> {
    /// `[body, detail, segm]` per pass.
    pub per_pass: Vec<[T; 3]>,
    pub total: T,
}

/// Evaluates the weighted multi-pass objective, averaged over the batch,
/// and returns the gradient seeds for every head node.
pub fn batch_objective<T: Scalar>(
    graph: &Graph<T>,
    nodes: &[PassNodes],
    targets: &[&Targets<T>],
    reduction: Reduction,
) -> Result<(StepLoss<T>, Seeds<T>)> {
    let n = targets.len();
    let inv_n = T::one() / T::c(n as f64);
    let mut per_pass = Vec::with_capacity(nodes.len());
    let mut seeds = Vec::with_capacity(3 * nodes.len());
    let mut total = T::zero();
    for pass in nodes {
        let mut terms = [T::zero(); 3];
        for (k, node) in [pass.body, pass.detail, pass.sal].into_iter().enumerate() {
            let pred = graph.value(node);
            if pred.batch() != n || pred.item_len() != targets[0].sal.len() {
                return Err(Error::Shape(format!(
                    "head output {:?} does not match {n} targets",
                    pred.shape()
                )));
            }
            let mut grad = Tensor4::zeros(pred.shape());
            for (i, t) in targets.iter().enumerate() {
                let target = match k {
                    0 => &t.body,
                    1 => &t.detail,
                    _ => &t.sal,
                };
                let g = grad.item_mut(i);
                let v = if k == 2 {
                    iou_slice(pred.item(i), target, g)
                } else {
                    bce_slice(pred.item(i), target, reduction, g)
                };
                g.iter_mut().for_each(|d| *d *= inv_n);
                terms[k] += v * inv_n;
            }
            seeds.push((node, grad));
        }
        total += terms[0] + terms[1] + terms[2];
        per_pass.push(terms);
    }
    Ok((StepLoss { per_pass, total }, seeds))
}

#[derive(Clone, Debug, PartialEq)]
pub struct TrainConfig {
    pub steps: usize,
    pub batch_size: usize,
    pub learning_rate: f64,
    pub momentum: f64,
    pub weight_decay: f64,
    pub seed: u64,
    pub mode: SupervisionMode,
    pub model: ModelConfig,
    pub reduction: Reduction,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            steps: 2000,
            batch_size: 8,
            learning_rate: 0.05,
            momentum: 0.9,
            weight_decay: 5e-4,
            seed: 0,
            mode: SupervisionMode::BodyDetail,
            model: ModelConfig::default(),
            reduction: Reduction::Mean,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps == 0 || self.batch_size == 0 {
            return Err(Error::Config("steps and batch size must be positive".into()));
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return Err(Error::Config(format!("learning rate {} must be positive", self.learning_rate)));
        }
        if !(0.0..1.0).contains(&self.momentum) || self.weight_decay.is_nan() || self.weight_decay < 0.0 {
            return Err(Error::Config("momentum must lie in [0, 1) and weight decay be non-negative".into()));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct StepRecord<T> {
    pub step: usize,
    pub loss: StepLoss<T>,
}

#[derive(Clone, Debug)]
pub struct TrainOutcome<T> {
    pub model: ToyFinModel<T>,
    pub log: Vec<StepRecord<T>>,
    pub steps_per_epoch: usize,
}

impl<T: Scalar> TrainOutcome<T> {
    pub fn epoch_means(&self) -> Vec<f64> {
        epoch_means(&self.log, self.steps_per_epoch)
    }
}

/// Mean total loss over consecutive windows of `steps_per_epoch` steps. A
/// trailing partial window is averaged over the steps it has.
pub fn epoch_means<T: Scalar>(log: &[StepRecord<T>], steps_per_epoch: usize) -> Vec<f64> {
    log.chunks(steps_per_epoch.max(1))
        .map(|c| c.iter().map(|r| r.loss.total.to_f64_lossy()).sum::<f64>() / c.len() as f64)
        .collect()
}

/// `step,pass,body_loss,detail_loss,segm_loss,total`, one row per pass;
/// `total` is that pass's sum.
pub fn training_log_csv<T: Scalar>(log: &[StepRecord<T>]) -> String {
    let mut s = String::from("step,pass,body_loss,detail_loss,segm_loss,total\n");
    for r in log {
        for (k, [b, d, g]) in r.loss.per_pass.iter().enumerate() {
            s.push_str(&format!("{},{},{},{},{},{}\n", r.step, k + 1, b, d, g, *b + *d + *g));
        }
    }
    s
}

pub(crate) fn stack_images<T: Scalar>(images: &[&GrayMap<T>]) -> Result<Tensor4<T>> {
    let first = images
        .first()
        .ok_or_else(|| Error::Config("empty batch".into()))?;
    let (w, h) = first.dims();
    let mut data = Vec::with_capacity(images.len() * w * h);
    for im in images {
        if im.dims() != (w, h) {
            return Err(Error::DimensionMismatch {
                left: (w, h),
                right: im.dims(),
            });
        }
        data.extend_from_slice(im.data());
    }
    Tensor4::new([images.len(), 1, h, w], data)
}

/// Trains a freshly initialized model (seeded by `config.seed`).
pub fn train<T: Scalar>(config: &TrainConfig, data: &[Sample<T>]) -> Result<TrainOutcome<T>> {
    let model = ToyFinModel::new(config.model, config.seed)?;
    train_from(model, config, data)
}

/// Momentum SGD: `v ← μv + g + λθ`, `θ ← θ − ηv`. Batches are drawn from a
/// per-epoch shuffle seeded by `config.seed`.
pub fn train_from<T: Scalar>(
    mut model: ToyFinModel<T>,
    config: &TrainConfig,
    data: &[Sample<T>],
) -> Result<TrainOutcome<T>> {
    config.validate()?;
    if data.is_empty() {
        return Err(Error::Config("training set is empty".into()));
    }
    let targets: Vec<Targets<T>> = data.iter().map(|s| Targets::new(s, config.mode)).collect();
    let batch = config.batch_size.min(data.len());
    let steps_per_epoch = data.len().div_ceil(batch);
    let lr = T::c(config.learning_rate);
    let mu = T::c(config.momentum);
    let wd = T::c(config.weight_decay);

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(0x5eed));
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut velocity: Vec<Vec<T>> = model.params().iter().map(|p| vec![T::zero(); p.len()]).collect();
    let mut log = Vec::with_capacity(config.steps);

    for step in 0..config.steps {
        let slot = step % steps_per_epoch;
        if slot == 0 {
            order.shuffle(&mut rng);
        }
        let idx = &order[slot * batch..((slot + 1) * batch).min(order.len())];
        let images: Vec<&GrayMap<T>> = idx.iter().map(|&i| &data[i].image).collect();
        let batch_targets: Vec<&Targets<T>> = idx.iter().map(|&i| &targets[i]).collect();

        let (graph, nodes) = model.forward_graph(&stack_images(&images)?)?;
        let (loss, seeds) = batch_objective(&graph, &nodes, &batch_targets, config.reduction)?;
        if !loss.total.is_finite() {
            return Err(Error::Diverged { step });
        }
        let grads = graph.backward(seeds);
        drop(graph);
        for (p, g) in grads {
            let theta = model.params_mut()[p].data_mut();
            for ((t, v), &d) in theta.iter_mut().zip(velocity[p].iter_mut()).zip(g.data()) {
                *v = mu * *v + d + wd * *t;
                *t -= lr * *v;
            }
        }
        if !model.params().iter().all(Tensor4::is_finite) {
            return Err(Error::Diverged { step });
        }
        log.push(StepRecord { step, loss });
    }
    Ok(TrainOutcome {
        model,
        log,
        steps_per_epoch,
    })
}

/// Final-pass saliency maps for a set of images, evaluated in chunks.
pub fn predict<T: Scalar>(model: &ToyFinModel<T>, images: &[&GrayMap<T>]) -> Result<Vec<GrayMap<T>>> {
    let mut out = Vec::with_capacity(images.len());
    for chunk in images.chunks(16) {
        let x = stack_images(chunk)?;
        let (w, h) = chunk[0].dims();
        let fwd = model.forward(&x)?;
        let sal = &fwd.passes.last().expect("at least one pass").sal;
        for i in 0..chunk.len() {
            out.push(GrayMap::from_clamped(w, h, sal.item(i).to_vec())?);
        }
    }
    Ok(out)
}

/// Held-out scores of the final saliency output, averaged over images.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct HoldoutScores {
    pub mae: f64,
    /// MAE restricted to pixels within the band radius of the mask edge.
    pub edge_mae: f64,
}

pub fn evaluate_holdout<T: Scalar>(model: &ToyFinModel<T>, samples: &[Sample<T>]) -> Result<HoldoutScores> {
    evaluate_holdout_with_band(model, samples, DEFAULT_BAND_RADIUS)
}

pub fn evaluate_holdout_with_band<T: Scalar>(
    model: &ToyFinModel<T>,
    samples: &[Sample<T>],
    band_radius: u32,
) -> Result<HoldoutScores> {
    if samples.is_empty() {
        return Err(Error::Config("held-out set is empty".into()));
    }
    let images: Vec<&GrayMap<T>> = samples.iter().map(|s| &s.image).collect();
    let preds = predict(model, &images)?;
    let (mut m, mut e) = (0.0, 0.0);
    for (p, s) in preds.iter().zip(samples) {
        m += mae(p, &s.mask.to_gray())?.to_f64_lossy();
        e += mae_edge_split(p, &s.mask, band_radius)?.mae_edge.to_f64_lossy();
    }
    let n = samples.len() as f64;
    Ok(HoldoutScores {
        mae: m / n,
        edge_mae: e / n,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::synth_generate;

    fn small_config(steps: usize) -> TrainConfig {
        TrainConfig {
            steps,
            batch_size: 4,
            model: ModelConfig::micro(1),
            ..TrainConfig::default()
        }
    }

    #[test]
    fn mode_names_round_trip() {
        for m in SupervisionMode::ALL {
            assert_eq!(m.name().parse::<SupervisionMode>().unwrap(), m);
        }
        assert!("body".parse::<SupervisionMode>().is_err());
    }

    #[test]
    fn sal_only_targets_are_the_mask() {
        let s = &synth_generate::<f64>(1, 16, 0).unwrap()[0];
        let t = Targets::new(s, SupervisionMode::SalOnly);
        assert_eq!(t.body, t.sal);
        assert_eq!(t.detail, t.sal);
        let t = Targets::new(s, SupervisionMode::BodyDetail);
        for i in 0..t.sal.len() {
            assert_eq!(t.body[i] + t.detail[i], t.sal[i]);
        }
        let t = Targets::new(s, SupervisionMode::SalEdge);
        assert!(t.detail.iter().zip(&t.sal).all(|(e, m)| e <= m));
    }

    #[test]
    fn deterministic_logs() {
        let data = synth_generate::<f32>(8, 16, 1).unwrap();
        let a = train(&small_config(6), &data).unwrap();
        let b = train(&small_config(6), &data).unwrap();
        assert_eq!(a.log, b.log);
        assert_eq!(a.model, b.model);
        assert_eq!(training_log_csv(&a.log), training_log_csv(&b.log));
    }

    #[test]
    fn log_has_one_row_per_pass() {
        let data = synth_generate::<f32>(4, 16, 2).unwrap();
        let out = train(&small_config(3), &data).unwrap();
        let csv = training_log_csv(&out.log);
        assert_eq!(csv.lines().count(), 1 + 3 * 2);
        assert!(csv.starts_with("step,pass,body_loss,detail_loss,segm_loss,total\n"));
    }

    #[test]
    fn diverges_with_absurd_learning_rate() {
        let data = synth_generate::<f32>(4, 16, 3).unwrap();
        let cfg = TrainConfig {
            learning_rate: 1e30,
            ..small_config(50)
        };
        assert!(matches!(train(&cfg, &data), Err(Error::Diverged { .. })));
    }

    #[test]
    fn rejects_bad_configs() {
        let data = synth_generate::<f32>(2, 16, 3).unwrap();
        for cfg in [
            TrainConfig { steps: 0, ..small_config(1) },
            TrainConfig { learning_rate: -1.0, ..small_config(1) },
            TrainConfig { momentum: 1.0, ..small_config(1) },
        ] {
            assert!(train(&cfg, &data).is_err());
        }
        assert!(train::<f32>(&small_config(1), &[]).is_err());
    }

    #[test]
    fn epoch_means_average_windows() {
        let rec = |step, total: f64| StepRecord {
            step,
            loss: StepLoss { per_pass: vec![], total },
        };
        let log = vec![rec(0, 1.0), rec(1, 3.0), rec(2, 5.0)];
        assert_eq!(epoch_means(&log, 2), vec![2.0, 5.0]);
    }
}
