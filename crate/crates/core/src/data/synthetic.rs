//! Procedural video classes for tests and smoke runs.
//!
//! Class `k` is a drifting stripe pattern tinted with palette colour `k`;
//! odd classes use horizontal stripes, even classes concentric rings. Both
//! cues survive corner crops and horizontal flips. Each video draws its own
//! phase, period, drift, brightness and pixel noise.

use std::path::Path;
use std::sync::Arc;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::augment::{clip_indices, extract_clip, ClipSample, CropPosition, Provenance};
use super::frames::{write_frame, Dataset, DatasetItem, MemoryVideo, Video};
use super::manifest::{Manifest, Split, VideoEntry};

const PALETTE: [[f32; 3]; 8] = [
    [220.0, 60.0, 60.0],
    [60.0, 200.0, 60.0],
    [60.0, 80.0, 220.0],
    [220.0, 200.0, 50.0],
    [200.0, 60.0, 200.0],
    [50.0, 200.0, 200.0],
    [240.0, 140.0, 40.0],
    [150.0, 150.0, 150.0],
];

pub const MAX_SYNTHETIC_CLASSES: usize = PALETTE.len();

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SyntheticSpec {
    pub classes: usize,
    pub videos_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl SyntheticSpec {
    fn validate(&self) -> Result<()> {
        if self.classes == 0 || self.classes > MAX_SYNTHETIC_CLASSES {
            return Err(Error::invalid(format!(
                "synthetic class count must be in 1..={MAX_SYNTHETIC_CLASSES}"
            )));
        }
        if self.videos_per_class == 0 || self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::invalid("synthetic extents must be positive"));
        }
        Ok(())
    }
}

pub fn class_name(k: usize) -> String {
    format!("class{k}")
}

pub fn synthetic_frames(class: usize, spec: &SyntheticSpec, rng: &mut Rng) -> Vec<Tensor<f32>> {
    let (h, w) = (spec.height, spec.width);
    let colour = PALETTE[class % PALETTE.len()];
    let phase = rng.uniform();
    let period = 0.25 + 0.15 * rng.uniform();
    let drift = (0.05 + 0.1 * rng.uniform()) * if rng.uniform() < 0.5 { 1.0 } else { -1.0 };
    let gain = 0.8 + 0.4 * rng.uniform();
    let (cy, cx) = (rng.uniform() * h as f64, rng.uniform() * w as f64);
    let short = h.min(w) as f64;
    (0..spec.frames)
        .map(|t| {
            let mut f = Tensor::zeros(&[3, h, w]);
            let plane = h * w;
            for y in 0..h {
                for x in 0..w {
                    let u = if class % 2 == 1 {
                        y as f64 / short
                    } else {
                        ((y as f64 - cy).powi(2) + (x as f64 - cx).powi(2)).sqrt() / short
                    };
                    let wave = 0.55 + 0.35 * (std::f64::consts::TAU * (u / period + drift * t as f64 + phase)).sin();
                    for c in 0..3 {
                        let v = colour[c] as f64 * wave * gain + 6.0 * rng.normal();
                        f.data_mut()[c * plane + y * w + x] = v.round().clamp(0.0, 255.0) as f32;
                    }
                }
            }
            f
        })
        .collect()
}

fn generate(spec: &SyntheticSpec) -> Result<Vec<(String, usize, Vec<Tensor<f32>>)>> {
    spec.validate()?;
    let mut rng = Rng::new(spec.seed);
    let mut out = Vec::new();
    for v in 0..spec.videos_per_class {
        for k in 0..spec.classes {
            let frames = synthetic_frames(k, spec, &mut rng);
            out.push((format!("{}/v{v:04}", class_name(k)), k, frames));
        }
    }
    Ok(out)
}

fn channel_mean(videos: &[(String, usize, Vec<Tensor<f32>>)]) -> [f32; 3] {
    let mut sum = [0f64; 3];
    let mut count = 0usize;
    for (_, _, frames) in videos {
        for f in frames {
            let plane = f.len() / 3;
            for (c, s) in sum.iter_mut().enumerate() {
                *s += f.data()[c * plane..(c + 1) * plane]
                    .iter()
                    .map(|&v| v as f64)
                    .sum::<f64>();
            }
            count += plane;
        }
    }
    sum.map(|s| (s / count as f64) as f32)
}

/// In-memory dataset whose mean is the dataset's own channel mean.
pub fn synthetic_dataset(spec: &SyntheticSpec) -> Result<Dataset> {
    let videos = generate(spec)?;
    let mean = channel_mean(&videos);
    let items = videos
        .into_iter()
        .map(|(id, label, frames)| {
            Ok(DatasetItem {
                id,
                label,
                video: Arc::new(MemoryVideo::new(frames)?) as Arc<dyn Video>,
            })
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset {
        classes: (0..spec.classes).map(class_name).collect(),
        mean,
        items,
    })
}

/// Writes PPM frames under `root` and returns the matching manifest
/// (not saved).
pub fn write_synthetic(spec: &SyntheticSpec, root: &Path, split: Split) -> Result<Manifest> {
    let videos = generate(spec)?;
    let mean = channel_mean(&videos);
    let mut entries = Vec::new();
    for (id, label, frames) in &videos {
        let dir = root.join(id);
        std::fs::create_dir_all(&dir)?;
        for (i, f) in frames.iter().enumerate() {
            write_frame(&dir.join(super::frame_file_name(i)), f)?;
        }
        entries.push(VideoEntry {
            path: id.clone(),
            class: *label,
            frame_count: frames.len(),
        });
    }
    Ok(Manifest {
        root: root.to_path_buf(),
        split,
        classes: (0..spec.classes).map(class_name).collect(),
        mean,
        height: Some(spec.height as u32),
        videos: entries,
    })
}

/// The first `clip_len` frames of every video, full-frame centre crop at
/// `crop_size`, no flip: a fixed clip per video.
pub fn center_clips(dataset: &Dataset, clip_len: usize, crop_size: usize) -> Result<Vec<ClipSample>> {
    dataset
        .items
        .iter()
        .map(|item| {
            let indices = clip_indices(0, item.video.frame_count(), clip_len);
            let tensor = extract_clip(
                item.video.as_ref(),
                &indices,
                CropPosition::Center,
                1.0,
                false,
                crop_size,
                dataset.mean,
            )?;
            Ok(ClipSample {
                tensor,
                label: item.label,
                provenance: Provenance {
                    video: item.id.clone(),
                    start: 0,
                    position: CropPosition::Center,
                    scale: 1.0,
                    flipped: false,
                },
            })
        })
        .collect()
}
