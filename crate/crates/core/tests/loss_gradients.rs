use ldf::decouple::decouple;
use ldf::gray::{BinaryMask, GrayMap};
use ldf::losses::{bce, iou_loss, total_loss, PassPredictions, Reduction};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-6;

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-8)
}

fn random_pred(rng: &mut ChaCha8Rng, w: usize, h: usize) -> GrayMap<f64> {
    GrayMap::new(w, h, (0..w * h).map(|_| rng.random_range(0.05..0.95)).collect()).unwrap()
}

fn random_mask(rng: &mut ChaCha8Rng, w: usize, h: usize) -> BinaryMask {
    loop {
        let m = BinaryMask::new(w, h, (0..w * h).map(|_| rng.random_bool(0.4) as u8).collect()).unwrap();
        if !m.is_constant() {
            return m;
        }
    }
}

fn nudged(p: &GrayMap<f64>, i: usize, d: f64) -> GrayMap<f64> {
    let mut data = p.data().to_vec();
    data[i] += d;
    GrayMap::new(p.width(), p.height(), data).unwrap()
}

#[test]
fn bce_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut worst: f64 = 0.0;
    for instance in 0..24 {
        let (w, h) = (rng.random_range(2..7), rng.random_range(2..7));
        let pred = random_pred(&mut rng, w, h);
        let target = GrayMap::new(w, h, (0..w * h).map(|_| rng.random_range(0.0..=1.0)).collect()).unwrap();
        let reduction = if instance % 2 == 0 { Reduction::Sum } else { Reduction::Mean };
        let analytic = bce(&pred, &target, reduction).unwrap();
        for i in 0..pred.len() {
            let f = |d| bce(&nudged(&pred, i, d), &target, reduction).unwrap().value;
            worst = worst.max(rel(analytic.grad[i], (f(H) - f(-H)) / (2.0 * H)));
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn iou_matches_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let mut worst: f64 = 0.0;
    for _ in 0..24 {
        let (w, h) = (rng.random_range(2..7), rng.random_range(2..7));
        let pred = random_pred(&mut rng, w, h);
        let mask = random_mask(&mut rng, w, h);
        let analytic = iou_loss(&pred, &mask).unwrap();
        for i in 0..pred.len() {
            let f = |d| iou_loss(&nudged(&pred, i, d), &mask).unwrap().value;
            worst = worst.max(rel(analytic.grad[i], (f(H) - f(-H)) / (2.0 * H)));
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn total_loss_gradients_match_central_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(13);
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let (w, h) = (rng.random_range(3..7), rng.random_range(3..7));
        let mask = random_mask(&mut rng, w, h);
        let labels = decouple::<f64>(&mask);
        let k = rng.random_range(1..4);
        let passes: Vec<PassPredictions<f64>> = (0..k)
            .map(|_| PassPredictions {
                body: random_pred(&mut rng, w, h),
                detail: random_pred(&mut rng, w, h),
                sal: random_pred(&mut rng, w, h),
            })
            .collect();
        let weights: Vec<f64> = (0..k).map(|_| rng.random_range(0.5..2.0)).collect();
        let analytic = total_loss(&passes, &labels, &mask, Some(&weights), Reduction::Sum).unwrap();
        let eval = |passes: &[PassPredictions<f64>]| {
            total_loss(passes, &labels, &mask, Some(&weights), Reduction::Sum).unwrap().total
        };
        for pass in 0..k {
            for head in 0..3 {
                for i in 0..w * h {
                    let bump = |d: f64| {
                        let mut ps = passes.clone();
                        let p = &mut ps[pass];
                        let target = match head {
                            0 => &mut p.body,
                            1 => &mut p.detail,
                            _ => &mut p.sal,
                        };
                        *target = nudged(target, i, d);
                        eval(&ps)
                    };
                    let numeric = (bump(H) - bump(-H)) / (2.0 * H);
                    let g = &analytic.grads[pass];
                    let a = [&g.body, &g.detail, &g.sal][head][i];
                    worst = worst.max(rel(a, numeric));
                }
            }
        }
    }
    assert!(worst < 1e-5, "worst relative error {worst:e}");
}

#[test]
fn perfect_logits_give_vanishing_gradients() {
    // Heads that emit the labels through saturated sigmoids: the gradient
    // reaching the logits is the loss gradient times p(1-p).
    let mut rng = ChaCha8Rng::seed_from_u64(14);
    let mask = random_mask(&mut rng, 8, 8);
    let g = mask.to_gray::<f64>();
    let sat = |v: f64| if v > 0.5 { 1.0 - 1e-12 } else { 1e-12 };
    let pred = GrayMap::new(8, 8, g.data().iter().map(|&v| sat(v)).collect()).unwrap();
    let iou = iou_loss(&pred, &mask).unwrap();
    assert!(iou.value < 1e-9);
    let bce_grad = bce(&pred, &g, Reduction::Mean).unwrap();
    for (i, &p) in pred.data().iter().enumerate() {
        let s = p * (1.0 - p);
        assert!((iou.grad[i] * s).abs() < 1e-9);
        assert!((bce_grad.grad[i] * s).abs() < 1e-6);
    }
}
