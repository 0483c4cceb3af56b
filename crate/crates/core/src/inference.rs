//! Video-level recognition: non-overlapping 16-frame windows, centre crop
//! at full scale, softmax averaged over clips.

use std::fmt::Write as _;

use crate::data::{clip_indices, extract_clip, CropPosition, Dataset, Video, CLIP_LEN, CROP_SIZE};
use crate::error::{Error, Result};
use crate::layers::softmax;
use crate::resnet::Network;
use crate::scalar::Scalar;
use crate::tensor::Tensor;

pub const TOP_K: usize = 5;

/// Window starts `0, L, 2L, …` with `start + L ≤ frame_count`; trailing
/// frames are dropped. Videos shorter than `L` give the single start 0 and
/// loop.
pub fn split_windows(frame_count: usize, clip_len: usize) -> Vec<usize> {
    assert!(clip_len > 0, "clip length must be positive");
    if frame_count < clip_len {
        return vec![0];
    }
    (0..=frame_count - clip_len).step_by(clip_len).collect()
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ClipGeometry {
    pub clip_len: usize,
    pub crop_size: usize,
    pub mean: [f32; 3],
}

impl ClipGeometry {
    pub fn new(mean: [f32; 3]) -> Self {
        ClipGeometry {
            clip_len: CLIP_LEN,
            crop_size: CROP_SIZE,
            mean,
        }
    }
}

/// Deterministic clip from `start`: full-short-side centre square resized
/// to `crop_size`, mean-subtracted, never flipped.
pub fn center_clip(video: &dyn Video, start: usize, geom: &ClipGeometry) -> Result<Tensor<f32>> {
    let indices = clip_indices(start, video.frame_count(), geom.clip_len);
    extract_clip(
        video,
        &indices,
        CropPosition::Center,
        1.0,
        false,
        geom.crop_size,
        geom.mean,
    )
}

/// Every window of a video as centre clips.
pub fn video_clips(video: &dyn Video, geom: &ClipGeometry) -> Result<Vec<Tensor<f32>>> {
    split_windows(video.frame_count(), geom.clip_len)
        .into_iter()
        .map(|s| center_clip(video, s, geom))
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoPrediction {
    pub probs: Vec<f64>,
    /// `(class, probability)`, descending; ties go to the lower class.
    pub top_k: Vec<(usize, f64)>,
    pub clip_count: usize,
}

pub fn top_k(probs: &[f64], k: usize) -> Vec<(usize, f64)> {
    let mut order: Vec<usize> = (0..probs.len()).collect();
    order.sort_by(|&a, &b| probs[b].total_cmp(&probs[a]).then(a.cmp(&b)));
    order.into_iter().take(k).map(|i| (i, probs[i])).collect()
}

/// Arithmetic mean of per-clip probability vectors, summed in clip order.
pub fn average_probs(clip_probs: &[Vec<f64>]) -> Result<Vec<f64>> {
    let first = clip_probs
        .first()
        .ok_or_else(|| Error::invalid("no clips to average"))?;
    let mut acc = vec![0.0; first.len()];
    for p in clip_probs {
        if p.len() != acc.len() {
            return Err(Error::shape("average_probs", &[p.len()], &[acc.len()]));
        }
        acc.iter_mut().zip(p).for_each(|(a, v)| *a += v);
    }
    let n = clip_probs.len() as f64;
    Ok(acc.into_iter().map(|a| a / n).collect())
}

pub fn prediction_from_clip_probs(clip_probs: &[Vec<f64>]) -> Result<VideoPrediction> {
    let probs = average_probs(clip_probs)?;
    Ok(VideoPrediction {
        top_k: top_k(&probs, TOP_K.min(probs.len())),
        probs,
        clip_count: clip_probs.len(),
    })
}

/// Per-clip softmax probabilities (in `f64`) for a stack of clips.
pub fn clip_probabilities<T: Scalar>(
    net: &Network<T>,
    clips: &[Tensor<f32>],
    batch_size: usize,
) -> Result<Vec<Vec<f64>>> {
    let mut out = Vec::with_capacity(clips.len());
    for chunk in clips.chunks(batch_size.max(1)) {
        let shape = chunk[0].shape();
        let mut data = Vec::with_capacity(chunk.len() * chunk[0].len());
        for c in chunk {
            if c.shape() != shape {
                return Err(Error::shape("clip batch", c.shape(), shape));
            }
            data.extend(c.data().iter().map(|&v| T::of(v as f64)));
        }
        let mut full = vec![chunk.len()];
        full.extend_from_slice(shape);
        let logits = net.forward_eval(&Tensor::new(full, data)?)?;
        let probs = softmax(&logits.cast::<f64>())?;
        let k = probs.shape()[1];
        out.extend(probs.data().chunks(k).map(<[f64]>::to_vec));
    }
    Ok(out)
}

pub fn predict_video<T: Scalar>(
    net: &Network<T>,
    video: &dyn Video,
    geom: &ClipGeometry,
    batch_size: usize,
) -> Result<VideoPrediction> {
    let clips = video_clips(video, geom)?;
    prediction_from_clip_probs(&clip_probabilities(net, &clips, batch_size)?)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SplitMetrics {
    /// Percentages.
    pub top1: f64,
    pub top5: f64,
    pub average: f64,
    pub videos: usize,
    /// Effective k for the top-5 column: `min(5, classes)`.
    pub k: usize,
}

/// Mean of top-1 and top-5 accuracy.
pub fn average_metric(top1: f64, top5: f64) -> f64 {
    (top1 + top5) / 2.0
}

/// Half-up rounding at `decimals` places, guarding against values such as
/// 69.65 being stored as 69.6499….
pub fn round_display(x: f64, decimals: i32) -> f64 {
    let p = 10f64.powi(decimals);
    let scaled = x * p;
    (scaled + scaled.abs() * 1e-9).round() / p
}

/// Video-level top-1/top-k accuracy from `(prediction, label)` pairs.
pub fn split_metrics(results: &[(VideoPrediction, usize)]) -> Result<SplitMetrics> {
    if results.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let classes = results[0].0.probs.len();
    let k = TOP_K.min(classes);
    let (mut hit1, mut hitk) = (0usize, 0usize);
    for (pred, label) in results {
        let ranked = top_k(&pred.probs, k);
        hit1 += (ranked[0].0 == *label) as usize;
        hitk += ranked.iter().any(|(c, _)| c == label) as usize;
    }
    let n = results.len() as f64;
    let top1 = 100.0 * hit1 as f64 / n;
    let top5 = 100.0 * hitk as f64 / n;
    Ok(SplitMetrics {
        top1,
        top5,
        average: average_metric(top1, top5),
        videos: results.len(),
        k,
    })
}

pub fn predict_dataset<T: Scalar>(
    net: &Network<T>,
    dataset: &Dataset,
    geom: &ClipGeometry,
    batch_size: usize,
) -> Result<Vec<VideoPrediction>> {
    dataset
        .items
        .iter()
        .map(|item| {
            predict_video(net, item.video.as_ref(), geom, batch_size).map_err(|e| Error::Batch {
                batch: 0,
                videos: vec![item.id.clone()],
                source: Box::new(e),
            })
        })
        .collect()
}

pub fn evaluate_split<T: Scalar>(
    net: &Network<T>,
    dataset: &Dataset,
    geom: &ClipGeometry,
    batch_size: usize,
) -> Result<SplitMetrics> {
    if dataset.is_empty() {
        return Err(Error::invalid("cannot evaluate an empty split"));
    }
    let preds = predict_dataset(net, dataset, geom, batch_size)?;
    let labelled: Vec<(VideoPrediction, usize)> =
        preds.into_iter().zip(dataset.items.iter().map(|i| i.label)).collect();
    split_metrics(&labelled)
}

/// One line per video: id, top-k `class:probability` pairs, clip count.
pub fn format_prediction(id: &str, pred: &VideoPrediction, classes: &[String]) -> String {
    let mut line = id.to_string();
    for (c, p) in &pred.top_k {
        let _ = write!(line, "\t{}:{p:.6}", classes.get(*c).map(String::as_str).unwrap_or("?"));
    }
    let _ = write!(line, "\tclips={}", pred.clip_count);
    line
}
