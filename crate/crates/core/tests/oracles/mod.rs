//! Reference implementations used as test oracles.
//!
//! These are written independently of the library: the AP oracle walks every
//! cutoff of the ranked list and integrates the interpolated PR curve by
//! recall increments, and the gradient oracle perturbs each parameter in turn.
#![allow(dead_code)]

use alspot::dataset::{Clip, ClipRef, Spot};
use alspot::model::{HeadMode, ModelParams, ModelShape};
use ndarray::{Array1, Array2};
use rand::Rng;

/// A prediction as `(class, time, confidence)`.
pub type Pred = (usize, f64, f64);
/// A ground truth as `(class, time)`.
pub type Gt = (usize, f64);

/// Greedy matching for one class: predictions by descending confidence, each
/// taking the nearest free ground truth within `delta` (earliest index on
/// equal distance). Returns hit flags in ranked order.
fn ranked_hits(preds: &[Pred], gts: &[Gt], class: usize, delta: f64) -> Vec<bool> {
    let mut ranked: Vec<Pred> = preds.iter().copied().filter(|p| p.0 == class).collect();
    ranked.sort_by(|a, b| b.2.partial_cmp(&a.2).unwrap());
    let targets: Vec<f64> = gts.iter().filter(|g| g.0 == class).map(|g| g.1).collect();
    let mut taken = vec![false; targets.len()];
    ranked
        .iter()
        .map(|p| {
            let candidate = (0..targets.len())
                .filter(|&i| !taken[i] && (targets[i] - p.1).abs() <= delta)
                .min_by(|&a, &b| {
                    (targets[a] - p.1)
                        .abs()
                        .partial_cmp(&(targets[b] - p.1).abs())
                        .unwrap()
                        .then(a.cmp(&b))
                });
            match candidate {
                Some(i) => {
                    taken[i] = true;
                    true
                }
                None => false,
            }
        })
        .collect()
}

/// AP from the full precision/recall table: for every recall step, the best
/// precision at any cutoff with recall at least that high.
pub fn brute_force_ap(preds: &[Pred], gts: &[Gt], class: usize, delta: f64) -> Option<f64> {
    let n_gt = gts.iter().filter(|g| g.0 == class).count();
    if n_gt == 0 {
        return None;
    }
    let hits = ranked_hits(preds, gts, class, delta);
    let mut table: Vec<(f64, f64)> = Vec::new(); // (recall, precision) per cutoff
    for cutoff in 1..=hits.len() {
        let tp = hits[..cutoff].iter().filter(|&&h| h).count();
        table.push((tp as f64 / n_gt as f64, tp as f64 / cutoff as f64));
    }
    let mut recalls: Vec<f64> = table.iter().map(|r| r.0).collect();
    recalls.dedup();
    let mut ap = 0.0;
    let mut previous = 0.0;
    for r in recalls {
        if r <= previous {
            continue;
        }
        let best = table
            .iter()
            .filter(|row| row.0 >= r)
            .map(|row| row.1)
            .fold(0.0, f64::max);
        ap += (r - previous) * best;
        previous = r;
    }
    Some(ap)
}

/// Mean of [`brute_force_ap`] over classes `0..k` with ground truth.
pub fn brute_force_map(preds: &[Pred], gts: &[Gt], k: usize, delta: f64) -> Option<f64> {
    let aps: Vec<f64> = (0..k).filter_map(|c| brute_force_ap(preds, gts, c, delta)).collect();
    (!aps.is_empty()).then(|| aps.iter().sum::<f64>() / aps.len() as f64)
}

/// Random small spotting instance: up to 6 predictions and 6 ground truths
/// over at most 3 classes on a 60 s timeline, with distinct confidences.
pub fn random_instance(rng: &mut impl Rng) -> (Vec<Pred>, Vec<Gt>, usize, f64) {
    let k = rng.random_range(1..=3);
    let n_pred = rng.random_range(0..=6);
    let n_gt = rng.random_range(1..=6);
    let preds = (0..n_pred)
        .map(|_| {
            (
                rng.random_range(0..k),
                rng.random_range(0.0..60.0),
                rng.random_range(0.0..1.0),
            )
        })
        .collect();
    let gts = (0..n_gt)
        .map(|_| (rng.random_range(0..k), rng.random_range(0.0..60.0)))
        .collect();
    let delta = rng.random_range(0.5..20.0);
    (preds, gts, k, delta)
}

/// Weighted cross-entropy written out per sample, for finite differences.
fn reference_loss(params: &ModelParams, x: &Array2<f64>, targets: &Array2<f64>, weights: &[f64]) -> f64 {
    let total: f64 = weights.iter().sum();
    let mut loss = 0.0;
    for (n, row) in x.rows().into_iter().enumerate() {
        let hidden: Vec<f64> = (0..params.shape.hidden)
            .map(|h| {
                let z: f64 = row.iter().enumerate().map(|(i, v)| v * params.w1[[i, h]]).sum();
                (z + params.b1[h]).tanh()
            })
            .collect();
        let logits: Vec<f64> = (0..params.shape.outputs())
            .map(|c| hidden.iter().enumerate().map(|(h, a)| a * params.w2[[h, c]]).sum::<f64>() + params.b2[c])
            .collect();
        let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
        let log_norm = max + logits.iter().map(|l| (l - max).exp()).sum::<f64>().ln();
        for c in 0..logits.len() {
            loss -= weights[n] * targets[[n, c]] * (logits[c] - log_norm);
        }
    }
    loss / total
}

/// Central-difference gradient of the reference loss, flattened as w1, b1, w2, b2.
pub fn numeric_gradient(
    params: &ModelParams,
    x: &Array2<f64>,
    targets: &Array2<f64>,
    weights: &[f64],
    step: f64,
) -> Vec<f64> {
    let mut grads = Vec::with_capacity(params.shape.param_count());
    let mut probe = params.clone();
    let diff = |probe: &mut ModelParams, get: &dyn Fn(&mut ModelParams) -> &mut f64| {
        let original = *get(probe);
        *get(probe) = original + step;
        let up = reference_loss(probe, x, targets, weights);
        *get(probe) = original - step;
        let down = reference_loss(probe, x, targets, weights);
        *get(probe) = original;
        (up - down) / (2.0 * step)
    };
    let shape = params.shape;
    for i in 0..shape.input_dim() {
        for h in 0..shape.hidden {
            grads.push(diff(&mut probe, &|p| &mut p.w1[[i, h]]));
        }
    }
    for h in 0..shape.hidden {
        grads.push(diff(&mut probe, &|p| &mut p.b1[h]));
    }
    for h in 0..shape.hidden {
        for c in 0..shape.outputs() {
            grads.push(diff(&mut probe, &|p| &mut p.w2[[h, c]]));
        }
    }
    for c in 0..shape.outputs() {
        grads.push(diff(&mut probe, &|p| &mut p.b2[c]));
    }
    grads
}

/// Random model, inputs, soft targets and positive weights of a small size.
pub fn random_gradient_instance(
    rng: &mut impl Rng,
) -> (ModelParams, Array2<f64>, Array2<f64>, Vec<f64>) {
    let shape = ModelShape {
        dim: rng.random_range(1..=3),
        context: rng.random_range(0..=1),
        num_classes: rng.random_range(1..=3),
        hidden: rng.random_range(2..=6),
        head_mode: HeadMode::Frame,
    };
    let mut params = ModelParams::zeros(shape);
    params.w1.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    params.b1.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    params.w2.mapv_inplace(|_| rng.random_range(-1.0..1.0));
    params.b2.mapv_inplace(|_| rng.random_range(-0.5..0.5));
    let n = rng.random_range(1..=5);
    let x = Array2::from_shape_fn((n, shape.input_dim()), |_| rng.random_range(-2.0..2.0));
    let mut targets = Array2::from_shape_fn((n, shape.outputs()), |_| rng.random_range(0.0..1.0));
    for mut row in targets.rows_mut() {
        let s = row.sum();
        row /= s;
    }
    let weights = (0..n).map(|_| rng.random_range(0.1..2.0)).collect();
    (params, x, targets, weights)
}

/// Flattens gradients as w1, b1, w2, b2.
pub fn flatten(w1: &Array2<f64>, b1: &Array1<f64>, w2: &Array2<f64>, b2: &Array1<f64>) -> Vec<f64> {
    w1.iter().chain(b1).chain(w2.iter()).chain(b2).copied().collect()
}

/// `‖a − b‖ / max(‖a‖ + ‖b‖, 1e-12)`.
pub fn relative_error(a: &[f64], b: &[f64]) -> f64 {
    let diff = a.iter().zip(b).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
    let norm = a.iter().map(|x| x * x).sum::<f64>().sqrt() + b.iter().map(|x| x * x).sum::<f64>().sqrt();
    diff / norm.max(1e-12)
}

/// Noiseless toy set: two orthogonal class signatures in D = 4, each clip two
/// frames at 2 fps with one spot at its midpoint (both frames positive), plus
/// all-zero background clips. 100 clips per class gives 200 frames per class.
pub fn toy_clips() -> Vec<Clip> {
    let mut clips = Vec::new();
    let signatures = [[1.0f32, 0.0, 0.0, 0.0], [0.0, 1.0, 0.0, 0.0]];
    for n in 0..300usize {
        let kind = n % 3;
        let frame: [f32; 4] = match kind {
            0 | 1 => signatures[kind].map(|v| v * 3.0),
            _ => [0.0; 4],
        };
        let frames: Vec<f32> = frame.iter().chain(frame.iter()).copied().collect();
        let clip = Clip::new(ClipRef::new("toy", n), n as f64, 2.0, 4, frames).unwrap();
        let labels = match kind {
            0 | 1 => vec![Spot::new(kind, 0.5)],
            _ => vec![],
        };
        clips.push(clip.with_labels(alspot::dataset::ClipLabels::Full(labels)));
    }
    clips
}

/// Frame accuracy of a frame-head model on the toy set.
pub fn toy_accuracy(params: &ModelParams, clips: &[Clip]) -> f64 {
    let mut correct = 0usize;
    let mut total = 0usize;
    for clip in clips {
        let expected = match &clip.labels {
            alspot::dataset::ClipLabels::Full(s) if !s.is_empty() => s[0].class_id + 1,
            _ => 0,
        };
        let scores = params.predict_frames(clip).unwrap();
        for f in 0..scores.frames() {
            let row = scores.row(f);
            let argmax = (0..row.len()).max_by(|&a, &b| row[a].total_cmp(&row[b])).unwrap();
            correct += usize::from(argmax == expected);
            total += 1;
        }
    }
    correct as f64 / total as f64
}
