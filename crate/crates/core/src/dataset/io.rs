//! Newline-delimited dataset container.
//!
//! Line 1 is a header `{schema, config, split, num_videos}`; each following
//! line is one video `{video_id, fps, D, num_frames, frames, spots}` where
//! `frames` is base64 over little-endian `f32` values, row-major.

use std::io::{BufRead, Write};

use base64::engine::general_purpose::STANDARD as B64;
use base64::Engine;
use serde::{Deserialize, Serialize};

use super::{Dataset, DatasetSplit, Spot, SyntheticConfig, Video};
use crate::error::{Error, Result};

pub const SCHEMA_VERSION: u32 = 1;

#[derive(Serialize, Deserialize)]
struct Header {
    schema: u32,
    config: SyntheticConfig,
    split: DatasetSplit,
    num_videos: usize,
}

#[derive(Serialize, Deserialize)]
struct VideoRecord {
    video_id: String,
    fps: f64,
    #[serde(rename = "D")]
    dim: usize,
    num_frames: usize,
    frames: String,
    spots: Vec<Spot>,
}

pub(crate) fn pack_f32(values: &[f32]) -> String {
    let bytes: Vec<u8> = values.iter().flat_map(|v| v.to_le_bytes()).collect();
    B64.encode(bytes)
}

pub(crate) fn unpack_f32(encoded: &str) -> std::result::Result<Vec<f32>, String> {
    let bytes = B64.decode(encoded).map_err(|e| e.to_string())?;
    if bytes.len() % 4 != 0 {
        return Err(format!("{} bytes is not a whole number of f32", bytes.len()));
    }
    Ok(bytes
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
        .collect())
}

pub fn write_dataset<W: Write>(dataset: &Dataset, mut out: W) -> Result<()> {
    let header = Header {
        schema: SCHEMA_VERSION,
        config: dataset.config.clone(),
        split: dataset.split.clone(),
        num_videos: dataset.videos.len(),
    };
    serde_json::to_writer(&mut out, &header)?;
    out.write_all(b"\n")?;
    for video in &dataset.videos {
        let record = VideoRecord {
            video_id: video.video_id().to_string(),
            fps: video.frame_rate(),
            dim: video.dim(),
            num_frames: video.frame_count(),
            frames: pack_f32(video.frames()),
            spots: video.spots().to_vec(),
        };
        serde_json::to_writer(&mut out, &record)?;
        out.write_all(b"\n")?;
    }
    out.flush()?;
    Ok(())
}

/// Reads a dataset written by [`write_dataset`]. Fails on the first malformed
/// record; never returns a partially read dataset.
pub fn read_dataset<R: BufRead>(input: R) -> Result<Dataset> {
    let mut lines = input.lines().enumerate();
    let (_, first) = lines.next().ok_or_else(|| Error::parse(1, "missing header"))?;
    let first = first?;
    let raw: serde_json::Value =
        serde_json::from_str(&first).map_err(|e| Error::parse(1, e.to_string()))?;
    let schema = raw
        .get("schema")
        .and_then(|s| s.as_u64())
        .ok_or_else(|| Error::parse(1, "header has no schema version"))?;
    if schema != u64::from(SCHEMA_VERSION) {
        return Err(Error::Schema {
            found: schema as u32,
            expected: SCHEMA_VERSION,
        });
    }
    let header: Header = serde_json::from_value(raw).map_err(|e| Error::parse(1, e.to_string()))?;
    header
        .config
        .validate()
        .map_err(|e| Error::parse(1, e.to_string()))?;

    let mut videos = Vec::with_capacity(header.num_videos);
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let record: VideoRecord =
            serde_json::from_str(&line).map_err(|e| Error::parse(line_no, e.to_string()))?;
        let frames = unpack_f32(&record.frames).map_err(|e| Error::parse(line_no, e))?;
        if frames.len() != record.num_frames * record.dim {
            return Err(Error::parse(
                line_no,
                format!(
                    "expected {}×{} feature values, found {}",
                    record.num_frames,
                    record.dim,
                    frames.len()
                ),
            ));
        }
        let video = Video::new(record.video_id, record.fps, record.dim, frames, record.spots)
            .map_err(|e| Error::parse(line_no, e.to_string()))?;
        videos.push(video);
    }
    if videos.len() != header.num_videos {
        return Err(Error::parse(
            videos.len() + 2,
            format!(
                "truncated: expected {} video records, found {}",
                header.num_videos,
                videos.len()
            ),
        ));
    }
    let dataset = Dataset {
        config: header.config,
        videos,
        split: header.split,
    };
    for id in dataset
        .split
        .train
        .iter()
        .chain(&dataset.split.valid)
        .chain(&dataset.split.test)
    {
        if dataset.video(id).is_none() {
            return Err(Error::parse(1, format!("split references unknown video {id}")));
        }
    }
    Ok(dataset)
}
