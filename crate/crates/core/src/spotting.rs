//! Turning per-frame class scores into discrete spots.

use std::io::{BufRead, Write};

use ndarray::{s, Array2};
use serde::{Deserialize, Serialize};

use crate::dataset::{frame_time, segment_video, Clip, Video};
use crate::error::{Error, Result};
use crate::model::{HeadMode, ModelParams};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PredictedSpot {
    pub class_id: usize,
    pub time: f64,
    pub confidence: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct NmsConfig {
    /// Suppression half-width in seconds.
    pub window: f64,
    /// Only scores strictly above this are emitted.
    pub threshold: f64,
    /// Cap on spots per class per video.
    pub top_n: usize,
}

impl Default for NmsConfig {
    fn default() -> Self {
        Self {
            window: 20.0,
            threshold: 0.0,
            top_n: 200,
        }
    }
}

/// Greedy 1-D NMS over one class's frame scores.
///
/// Repeatedly takes the highest remaining score above `threshold`, emits a
/// spot at that frame's time, and suppresses every frame within `±window`
/// seconds. Equal scores resolve to the earlier frame. Output is sorted by
/// descending confidence.
pub fn nms_1d(
    class_id: usize,
    scores: &[f64],
    frame_rate: f64,
    config: &NmsConfig,
) -> Vec<PredictedSpot> {
    let mut order: Vec<usize> = (0..scores.len())
        .filter(|&i| scores[i] > config.threshold)
        .collect();
    order.sort_by(|&a, &b| scores[b].total_cmp(&scores[a]).then(a.cmp(&b)));

    let mut kept: Vec<PredictedSpot> = Vec::new();
    for i in order {
        if kept.len() >= config.top_n {
            break;
        }
        let t = frame_time(i, frame_rate);
        if kept.iter().all(|p| (p.time - t).abs() > config.window) {
            kept.push(PredictedSpot {
                class_id,
                time: t,
                confidence: scores[i],
            });
        }
    }
    kept
}

/// Frame-level probabilities over a whole video, `frames × (K+1)`, built
/// clip by clip over non-overlapping clips. A clip-mode model's scores are
/// broadcast to every frame of their clip.
pub fn video_scores(model: &ModelParams, video: &Video, frames_per_clip: usize) -> Result<Array2<f64>> {
    if video.dim() != model.shape.dim {
        return Err(Error::Dimension(format!(
            "video {} has feature dim {}, model expects {}",
            video.video_id(),
            video.dim(),
            model.shape.dim
        )));
    }
    let outputs = model.shape.outputs();
    let mut scores = Array2::zeros((video.frame_count(), outputs));
    for clip in segment_video(video, frames_per_clip)? {
        let start = clip.id.clip_index * frames_per_clip;
        scores
            .slice_mut(s![start..start + frames_per_clip, ..])
            .assign(&clip_scores(model, &clip)?);
    }
    Ok(scores)
}

/// Frame-level probabilities for one clip, `J × (K+1)`, broadcasting a
/// clip-mode model's single row.
pub fn clip_scores(model: &ModelParams, clip: &Clip) -> Result<Array2<f64>> {
    match model.shape.head_mode {
        HeadMode::Frame => Ok(model.predict_frames(clip)?.0),
        HeadMode::Clip => {
            let row = model.predict_clip(clip)?;
            let mut scores = Array2::zeros((clip.frame_count(), model.shape.outputs()));
            for mut r in scores.rows_mut() {
                r.assign(&row.0);
            }
            Ok(scores)
        }
    }
}

/// Predicted spots inside one clip, with clip-relative times.
pub fn infer_clip(model: &ModelParams, clip: &Clip, nms: &NmsConfig) -> Result<Vec<PredictedSpot>> {
    let scores = clip_scores(model, clip)?;
    let mut spots = Vec::new();
    for class_id in 0..model.shape.num_classes {
        let column = scores.column(class_id + 1).to_vec();
        spots.extend(nms_1d(class_id, &column, clip.frame_rate, nms));
    }
    Ok(spots)
}

/// Predicted spots for every non-background class of a video.
pub fn infer_video(
    model: &ModelParams,
    video: &Video,
    frames_per_clip: usize,
    nms: &NmsConfig,
) -> Result<Vec<PredictedSpot>> {
    let scores = video_scores(model, video, frames_per_clip)?;
    let mut spots = Vec::new();
    for class_id in 0..model.shape.num_classes {
        let column = scores.column(class_id + 1).to_vec();
        spots.extend(nms_1d(class_id, &column, video.frame_rate(), nms));
    }
    Ok(spots)
}

/// One exported prediction.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PredictionRecord {
    pub video_id: String,
    pub class_id: usize,
    pub time: f64,
    pub confidence: f64,
}

pub fn write_predictions<W: Write>(records: &[PredictionRecord], mut out: W) -> Result<()> {
    for r in records {
        serde_json::to_writer(&mut out, r)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

pub fn read_predictions<R: BufRead>(input: R) -> Result<Vec<PredictionRecord>> {
    let mut records = Vec::new();
    for (i, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: PredictionRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(i + 1, e.to_string()))?;
        if !(0.0..=1.0).contains(&record.confidence) {
            return Err(Error::parse(i + 1, "confidence outside [0, 1]"));
        }
        records.push(record);
    }
    Ok(records)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelShape;

    fn cfg(window: f64, threshold: f64) -> NmsConfig {
        NmsConfig {
            window,
            threshold,
            top_n: 200,
        }
    }

    #[test]
    fn single_peak() {
        let scores: Vec<f64> = (0..21)
            .map(|i| 1.0 - (i as f64 - 10.0).abs() / 10.0)
            .collect();
        let spots = nms_1d(0, &scores, 1.0, &cfg(5.0, 0.5));
        assert_eq!(spots[0].time, frame_time(10, 1.0));
        assert_eq!(spots[0].confidence, 1.0);
        assert_eq!(spots.len(), 1);
    }

    #[test]
    fn distant_equal_peaks_both_kept() {
        let mut scores = vec![0.0; 40];
        scores[5] = 0.7;
        scores[5 + 9] = 0.7;
        let spots = nms_1d(1, &scores, 3.0, &cfg(1.0, 0.1));
        assert_eq!(spots.len(), 2);
        assert!(spots[0].time < spots[1].time);
    }

    #[test]
    fn close_peak_is_suppressed() {
        // Peaks half a second apart with a 1 s window.
        let mut scores = vec![0.0; 20];
        scores[8] = 0.9; // 4.25 s
        scores[9] = 0.8; // 4.75 s
        let spots = nms_1d(0, &scores, 2.0, &cfg(1.0, 0.0));
        assert_eq!(spots.len(), 1);
        assert_eq!(spots[0].confidence, 0.9);
    }

    #[test]
    fn zero_model_emits_nothing_above_half() {
        let shape = ModelShape::new(2, 3, HeadMode::Frame);
        let video = Video::new("v", 2.0, 2, vec![0.5; 2 * 60], vec![]).unwrap();
        let spots = infer_video(&ModelParams::zeros(shape), &video, 30, &cfg(1.0, 0.5)).unwrap();
        assert!(spots.is_empty());
    }

    #[test]
    fn clip_head_broadcast_gives_one_spot_per_window() {
        let shape = ModelShape::new(2, 2, HeadMode::Clip);
        let model = ModelParams::init(shape, 4);
        let data: Vec<f32> = (0..2 * 90).map(|i| (i as f32 * 0.37).sin()).collect();
        let video = Video::new("v", 2.0, 2, data, vec![]).unwrap();
        let window = 5.0;
        let spots = infer_video(&model, &video, 30, &cfg(window, 0.0)).unwrap();
        for class in 0..2 {
            let mut times: Vec<f64> = spots
                .iter()
                .filter(|s| s.class_id == class)
                .map(|s| s.time)
                .collect();
            times.sort_by(f64::total_cmp);
            assert!(times.windows(2).all(|w| w[1] - w[0] > window));
        }
    }

    #[test]
    fn dimension_mismatch() {
        let model = ModelParams::zeros(ModelShape::new(3, 2, HeadMode::Frame));
        let video = Video::new("v", 2.0, 2, vec![0.0; 60], vec![]).unwrap();
        assert!(matches!(
            infer_video(&model, &video, 30, &NmsConfig::default()),
            Err(Error::Dimension(_))
        ));
    }

    #[test]
    fn prediction_records_round_trip() {
        let records = vec![PredictionRecord {
            video_id: "video_001".into(),
            class_id: 2,
            time: 12.25,
            confidence: 0.125,
        }];
        let mut buf = Vec::new();
        write_predictions(&records, &mut buf).unwrap();
        assert_eq!(read_predictions(buf.as_slice()).unwrap(), records);
    }
}
