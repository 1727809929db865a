//! Desk-scale spotting head: a two-layer perceptron over a frame's context
//! window (the frame plus `w` neighbours on each side, clamped at clip edges)
//! producing `K + 1` logits, background at index 0.
//!
//! The same network serves both head modes. In frame mode it is applied per
//! frame; in clip mode the context features are mean-pooled over the clip
//! first and classified once.

mod checkpoint;
mod train;

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::dataset::Clip;
use crate::error::{Error, Result};

pub use checkpoint::{read_checkpoint, write_checkpoint, CHECKPOINT_SCHEMA};
pub use train::{
    build_samples, plateau_update, train, EpochRecord, Paradigm, PlateauDecision,
    PlateauScheduler, SampleSet, SchedulerKind, TrainConfig, TrainingLog,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadMode {
    /// One score vector per frame.
    Frame,
    /// One score vector per clip from mean-pooled features.
    Clip,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelShape {
    pub dim: usize,
    pub context: usize,
    pub num_classes: usize,
    pub hidden: usize,
    pub head_mode: HeadMode,
}

impl ModelShape {
    pub fn new(dim: usize, num_classes: usize, head_mode: HeadMode) -> Self {
        Self {
            dim,
            context: 2,
            num_classes,
            hidden: 64,
            head_mode,
        }
    }

    pub fn input_dim(&self) -> usize {
        (2 * self.context + 1) * self.dim
    }

    /// Number of outputs, background included.
    pub fn outputs(&self) -> usize {
        self.num_classes + 1
    }

    pub fn param_count(&self) -> usize {
        let (i, h, o) = (self.input_dim(), self.hidden, self.outputs());
        i * h + h + h * o + o
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub shape: ModelShape,
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

/// Probabilities per frame, `J × (K+1)`.
#[derive(Debug, Clone, PartialEq)]
pub struct FrameScores(pub Array2<f64>);

/// Probabilities for a whole clip, `K+1` entries.
#[derive(Debug, Clone, PartialEq)]
pub struct ClipScores(pub Array1<f64>);

impl FrameScores {
    pub fn frames(&self) -> usize {
        self.0.nrows()
    }

    pub fn row(&self, frame: usize) -> &[f64] {
        self.0
            .row(frame)
            .to_slice()
            .expect("scores are stored in standard layout")
    }
}

impl ClipScores {
    pub fn as_slice(&self) -> &[f64] {
        self.0.as_slice().expect("contiguous")
    }
}

/// Gradients with the same layout as [`ModelParams`].
#[derive(Debug, Clone)]
pub struct Gradients {
    pub w1: Array2<f64>,
    pub b1: Array1<f64>,
    pub w2: Array2<f64>,
    pub b2: Array1<f64>,
}

impl ModelParams {
    pub fn zeros(shape: ModelShape) -> Self {
        Self {
            shape,
            w1: Array2::zeros((shape.input_dim(), shape.hidden)),
            b1: Array1::zeros(shape.hidden),
            w2: Array2::zeros((shape.hidden, shape.outputs())),
            b2: Array1::zeros(shape.outputs()),
        }
    }

    /// Glorot-uniform weights, zero biases.
    pub fn init(shape: ModelShape, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut glorot = |rows: usize, cols: usize| {
            let limit = (6.0 / (rows + cols) as f64).sqrt();
            Array2::from_shape_simple_fn((rows, cols), || rng.random_range(-limit..limit))
        };
        let w1 = glorot(shape.input_dim(), shape.hidden);
        let w2 = glorot(shape.hidden, shape.outputs());
        Self {
            shape,
            w1,
            b1: Array1::zeros(shape.hidden),
            w2,
            b2: Array1::zeros(shape.outputs()),
        }
    }

    pub fn is_finite(&self) -> bool {
        self.tensors().iter().all(|t| t.iter().all(|x| x.is_finite()))
    }

    /// Flat views in checkpoint order: w1, b1, w2, b2.
    pub(crate) fn tensors(&self) -> [&[f64]; 4] {
        [
            self.w1.as_slice().expect("standard layout"),
            self.b1.as_slice().expect("standard layout"),
            self.w2.as_slice().expect("standard layout"),
            self.b2.as_slice().expect("standard layout"),
        ]
    }

    fn check_clip(&self, clip: &Clip) -> Result<()> {
        if clip.dim() != self.shape.dim {
            return Err(Error::Dimension(format!(
                "clip {} has feature dim {}, model expects {}",
                clip.id,
                clip.dim(),
                self.shape.dim
            )));
        }
        Ok(())
    }

    fn check_head(&self, expected: HeadMode) -> Result<()> {
        if self.shape.head_mode != expected {
            return Err(Error::config(format!(
                "model head is {:?}, operation needs {:?}",
                self.shape.head_mode, expected
            )));
        }
        Ok(())
    }

    /// Hidden activations and output probabilities for a batch of inputs.
    pub fn forward(&self, x: ArrayView2<f64>) -> (Array2<f64>, Array2<f64>) {
        let mut hidden = x.dot(&self.w1);
        hidden += &self.b1;
        hidden.mapv_inplace(f64::tanh);
        let mut logits = hidden.dot(&self.w2);
        logits += &self.b2;
        softmax_rows(&mut logits);
        (hidden, logits)
    }

    pub fn predict_inputs(&self, x: ArrayView2<f64>) -> Array2<f64> {
        self.forward(x).1
    }

    /// Per-frame class probabilities for a clip. Needs a frame-mode model.
    pub fn predict_frames(&self, clip: &Clip) -> Result<FrameScores> {
        self.check_head(HeadMode::Frame)?;
        self.check_clip(clip)?;
        Ok(self.frame_probabilities(clip))
    }

    /// Probabilities of the mean-pooled clip features. Needs a clip-mode model.
    pub fn predict_clip(&self, clip: &Clip) -> Result<ClipScores> {
        self.check_head(HeadMode::Clip)?;
        self.check_clip(clip)?;
        Ok(self.clip_probabilities(clip))
    }

    pub(crate) fn frame_probabilities(&self, clip: &Clip) -> FrameScores {
        let x = context_features(clip, self.shape.context);
        FrameScores(self.predict_inputs(x.view()))
    }

    pub(crate) fn clip_probabilities(&self, clip: &Clip) -> ClipScores {
        let pooled = pooled_features(clip, self.shape.context).insert_axis(Axis(0));
        ClipScores(self.predict_inputs(pooled.view()).row(0).to_owned())
    }

    /// Weighted cross-entropy `Σ wᵢ·(−Σ_c y_ic ln p_ic) / Σ wᵢ` and its gradient.
    ///
    /// The log is taken of the softmax probabilities themselves, so a sample
    /// whose target probability underflows to zero yields an infinite loss.
    pub fn loss_and_grad(
        &self,
        x: ArrayView2<f64>,
        targets: ArrayView2<f64>,
        weights: &[f64],
    ) -> (f64, Gradients) {
        let (hidden, probs) = self.forward(x);
        let total_weight: f64 = weights.iter().sum();
        let loss = weighted_cross_entropy(&probs, targets, weights);

        // dL/dlogits = wᵢ (p − y) / Σw, valid because each target row sums to 1.
        let mut delta = &probs - &targets;
        for (mut row, &w) in delta.rows_mut().into_iter().zip(weights) {
            row *= w / total_weight;
        }
        let grad_w2 = hidden.t().dot(&delta);
        let grad_b2 = delta.sum_axis(Axis(0));
        let mut back = delta.dot(&self.w2.t());
        back.zip_mut_with(&hidden, |g, &h| *g *= 1.0 - h * h);
        let grad_w1 = x.t().dot(&back);
        let grad_b1 = back.sum_axis(Axis(0));
        (
            loss,
            Gradients {
                w1: grad_w1,
                b1: grad_b1,
                w2: grad_w2,
                b2: grad_b2,
            },
        )
    }

    /// Loss only; used for validation and finite differences.
    pub fn loss(&self, x: ArrayView2<f64>, targets: ArrayView2<f64>, weights: &[f64]) -> f64 {
        let (_, probs) = self.forward(x);
        weighted_cross_entropy(&probs, targets, weights)
    }
}

fn weighted_cross_entropy(probs: &Array2<f64>, targets: ArrayView2<f64>, weights: &[f64]) -> f64 {
    let total_weight: f64 = weights.iter().sum();
    let mut loss = 0.0;
    for ((p, y), &w) in probs.rows().into_iter().zip(targets.rows()).zip(weights) {
        if w == 0.0 {
            continue;
        }
        let sample: f64 = p
            .iter()
            .zip(y.iter())
            .filter(|(_, &t)| t > 0.0)
            .map(|(&pc, &t)| -t * pc.ln())
            .sum();
        loss += w * sample;
    }
    loss / total_weight
}

pub(crate) fn softmax_rows(logits: &mut Array2<f64>) {
    for mut row in logits.rows_mut() {
        let max = row.fold(f64::NEG_INFINITY, |m, &v| m.max(v));
        row.mapv_inplace(|v| (v - max).exp());
        let sum = row.sum();
        row /= sum;
    }
}

/// `J × (2w+1)·D` matrix: row `j` concatenates frames `j−w ..= j+w`, indices
/// clamped to the clip.
pub fn context_features(clip: &Clip, context: usize) -> Array2<f64> {
    let frames = clip.frame_count();
    let dim = clip.dim();
    let width = (2 * context + 1) * dim;
    let mut out = Array2::zeros((frames, width));
    for (j, mut row) in out.rows_mut().into_iter().enumerate() {
        let row = row.as_slice_mut().expect("standard layout");
        for (slot, offset) in (-(context as isize)..=context as isize).enumerate() {
            let src = (j as isize + offset).clamp(0, frames as isize - 1) as usize;
            let dst = &mut row[slot * dim..(slot + 1) * dim];
            for (d, s) in dst.iter_mut().zip(clip.frame(src)) {
                *d = f64::from(*s);
            }
        }
    }
    out
}

/// Mean of the context-feature rows of a clip.
pub fn pooled_features(clip: &Clip, context: usize) -> Array1<f64> {
    context_features(clip, context)
        .mean_axis(Axis(0))
        .expect("clips have at least one frame")
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::ClipRef;
    use approx::assert_abs_diff_eq;

    fn clip_from(rows: &[Vec<f32>]) -> Clip {
        let dim = rows[0].len();
        Clip::new(ClipRef::new("v", 0), 0.0, 2.0, dim, rows.concat()).unwrap()
    }

    fn random_clip(frames: usize, dim: usize, seed: u64) -> Clip {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let rows: Vec<Vec<f32>> = (0..frames)
            .map(|_| (0..dim).map(|_| rng.random_range(-2.0..2.0)).collect())
            .collect();
        clip_from(&rows)
    }

    #[test]
    fn zero_model_is_uniform() {
        let shape = ModelShape::new(3, 4, HeadMode::Frame);
        let scores = ModelParams::zeros(shape)
            .predict_frames(&random_clip(7, 3, 1))
            .unwrap();
        for p in scores.0.iter() {
            assert_abs_diff_eq!(*p, 0.2, epsilon = 1e-15);
        }
        let clip_model = ModelParams::zeros(ModelShape::new(3, 4, HeadMode::Clip));
        let scores = clip_model.predict_clip(&random_clip(7, 3, 1)).unwrap();
        for p in scores.0.iter() {
            assert_abs_diff_eq!(*p, 0.2, epsilon = 1e-15);
        }
    }

    #[test]
    fn rows_are_normalized() {
        for seed in 0..10 {
            let model = ModelParams::init(ModelShape::new(5, 3, HeadMode::Frame), seed);
            let scores = model.predict_frames(&random_clip(11, 5, seed + 100)).unwrap();
            for row in scores.0.rows() {
                assert_abs_diff_eq!(row.sum(), 1.0, epsilon = 1e-6);
                assert!(row.iter().all(|p| (0.0..=1.0).contains(p)));
            }
        }
    }

    #[test]
    fn equal_context_gives_equal_rows() {
        let frame = vec![0.3f32, -1.2, 0.7];
        let clip = clip_from(&vec![frame; 9]);
        let model = ModelParams::init(ModelShape::new(3, 2, HeadMode::Frame), 3);
        let scores = model.predict_frames(&clip).unwrap();
        for j in 1..9 {
            assert_eq!(scores.row(j), scores.row(0));
        }
    }

    #[test]
    fn clip_head_of_constant_clip_matches_frame_row() {
        let frame = vec![0.3f32, -1.2, 0.7];
        let clip = clip_from(&vec![frame; 6]);
        let frame_model = ModelParams::init(ModelShape::new(3, 2, HeadMode::Frame), 5);
        let mut clip_model = frame_model.clone();
        clip_model.shape.head_mode = HeadMode::Clip;
        let pooled = clip_model.predict_clip(&clip).unwrap();
        let rows = frame_model.predict_frames(&clip).unwrap();
        for (a, b) in pooled.as_slice().iter().zip(rows.row(0)) {
            assert_abs_diff_eq!(*a, *b, epsilon = 1e-12);
        }
    }

    #[test]
    fn clip_head_ignores_frame_order() {
        let clip = random_clip(8, 4, 9);
        let mut rows: Vec<Vec<f32>> = (0..8).map(|j| clip.frame(j).to_vec()).collect();
        rows.reverse();
        rows.swap(2, 5);
        let shuffled = clip_from(&rows);
        // Context clamping at the edges duplicates boundary frames, so order
        // invariance holds for context width 0.
        let mut shape = ModelShape::new(4, 3, HeadMode::Clip);
        shape.context = 0;
        let model = ModelParams::init(shape, 2);
        let a = model.predict_clip(&clip).unwrap();
        let b = model.predict_clip(&shuffled).unwrap();
        for (x, y) in a.as_slice().iter().zip(b.as_slice()) {
            assert_abs_diff_eq!(*x, *y, epsilon = 1e-12);
        }
    }

    #[test]
    fn dimension_and_head_mismatch_are_errors() {
        let model = ModelParams::zeros(ModelShape::new(3, 2, HeadMode::Frame));
        assert!(matches!(
            model.predict_frames(&random_clip(4, 5, 0)),
            Err(Error::Dimension(_))
        ));
        assert!(model.predict_clip(&random_clip(4, 3, 0)).is_err());
    }

    #[test]
    fn context_features_clamp_at_edges() {
        let rows: Vec<Vec<f32>> = (0..4).map(|j| vec![j as f32]).collect();
        let x = context_features(&clip_from(&rows), 2);
        assert_eq!(x.row(0).to_vec(), vec![0.0, 0.0, 0.0, 1.0, 2.0]);
        assert_eq!(x.row(3).to_vec(), vec![1.0, 2.0, 3.0, 3.0, 3.0]);
    }
}
