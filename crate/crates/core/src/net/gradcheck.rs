//! End-to-end finite-difference check of the training gradients.

use rand::seq::index::sample;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::gray::GrayMap;
use crate::losses::Reduction;
use crate::net::model::{ModelConfig, ToyFinModel};
use crate::net::tensor::Tensor4;
use crate::net::train::{batch_objective, stack_images, SupervisionMode, Targets};
use crate::synth::synth_generate;

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckConfig {
    pub mode: SupervisionMode,
    pub n_interactions: usize,
    pub reduction: Reduction,
    /// Parameters compared (drawn without replacement).
    pub samples: usize,
    pub step: f64,
    pub batch_size: usize,
    pub side: usize,
    pub seed: u64,
}

impl Default for GradCheckConfig {
    fn default() -> Self {
        Self {
            mode: SupervisionMode::BodyDetail,
            n_interactions: 1,
            reduction: Reduction::Mean,
            samples: 120,
            step: 1e-5,
            batch_size: 2,
            side: 16,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Parameter name and flat index of the worst entry.
    pub worst: (String, usize),
    pub checked: usize,
    /// Draws replaced because a ReLU input changed sign between `+h` and `-h`.
    pub skipped_kinks: usize,
    pub param_count: usize,
}

/// Denominator floor per unit of loss. Central differences carry rounding
/// noise proportional to the loss magnitude, so gradients far below this
/// are compared in absolute terms.
pub const GRAD_FLOOR: f64 = 1e-6;

/// `|a - b| / max(|a|, |b|, floor)`.
pub fn relative_error(a: f64, b: f64, floor: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(floor)
}

struct Evaluation {
    loss: f64,
    grads: Vec<Option<Tensor4<f64>>>,
    relu_pattern: Vec<bool>,
}

/// Objective value, ReLU sign pattern and (optionally) analytic gradients.
fn objective(
    model: &ToyFinModel<f64>,
    x: &Tensor4<f64>,
    targets: &[&Targets<f64>],
    reduction: Reduction,
    want_grads: bool,
) -> Result<Evaluation> {
    let (graph, nodes) = model.forward_graph(x)?;
    let (loss, seeds) = batch_objective(&graph, &nodes, targets, reduction)?;
    let relu_pattern = graph.relu_pattern();
    let mut grads: Vec<Option<Tensor4<f64>>> = vec![None; model.params().len()];
    if want_grads {
        for (p, g) in graph.backward(seeds) {
            grads[p] = Some(g);
        }
    }
    Ok(Evaluation {
        loss: loss.total,
        grads,
        relu_pattern,
    })
}

/// Compares analytic parameter gradients of the multi-pass objective with
/// central differences on the micro model in double precision. A draw whose
/// `±h` evaluations straddle a ReLU kink is replaced by the next parameter.
pub fn grad_check(config: &GradCheckConfig) -> Result<GradCheckReport> {
    if config.samples == 0 || config.batch_size == 0 || config.step.is_nan() || config.step <= 0.0 {
        return Err(Error::Config("samples, batch size and step must be positive".into()));
    }
    let mut model = ToyFinModel::<f64>::new(ModelConfig::micro(config.n_interactions), config.seed)?;
    let data = synth_generate::<f64>(config.batch_size, config.side, config.seed.wrapping_add(1))?;
    let targets: Vec<Targets<f64>> = data.iter().map(|s| Targets::new(s, config.mode)).collect();
    let target_refs: Vec<&Targets<f64>> = targets.iter().collect();
    let images: Vec<&GrayMap<f64>> = data.iter().map(|s| &s.image).collect();
    let x = stack_images(&images)?;

    let base = objective(&model, &x, &target_refs, config.reduction, true)?;

    let offsets: Vec<usize> = model
        .params()
        .iter()
        .scan(0, |acc, p| {
            let start = *acc;
            *acc += p.len();
            Some(start)
        })
        .collect();
    let param_count = model.param_count();
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed.wrapping_add(2));
    let order = sample(&mut rng, param_count, param_count);

    let h = config.step;
    let floor = GRAD_FLOOR * base.loss.abs().max(1.0);
    let mut worst = (0.0, String::new(), 0);
    let (mut checked, mut skipped_kinks) = (0, 0);
    for flat in order.iter() {
        if checked == config.samples {
            break;
        }
        let p = offsets.partition_point(|&o| o <= flat) - 1;
        let i = flat - offsets[p];
        let original = model.params()[p].data()[i];
        model.params_mut()[p].data_mut()[i] = original + h;
        let plus = objective(&model, &x, &target_refs, config.reduction, false)?;
        model.params_mut()[p].data_mut()[i] = original - h;
        let minus = objective(&model, &x, &target_refs, config.reduction, false)?;
        model.params_mut()[p].data_mut()[i] = original;
        if plus.relu_pattern != minus.relu_pattern {
            skipped_kinks += 1;
            continue;
        }

        let numeric = (plus.loss - minus.loss) / (2.0 * h);
        let analytic = base.grads[p].as_ref().map_or(0.0, |g| g.data()[i]);
        let err = relative_error(analytic, numeric, floor);
        if err > worst.0 || worst.1.is_empty() {
            worst = (err, model.param_names()[p].clone(), i);
        }
        checked += 1;
    }
    Ok(GradCheckReport {
        max_rel_error: worst.0,
        worst: (worst.1, worst.2),
        checked,
        skipped_kinks,
        param_count,
    })
}
