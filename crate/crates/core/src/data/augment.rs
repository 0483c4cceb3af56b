//! Clip sampling and the training-time augmentation pipeline.

use std::fmt;

use crate::error::{Error, Result};
use crate::rng::Rng;
use crate::tensor::Tensor;

use super::frames::{DatasetItem, Video};

pub const CLIP_LEN: usize = 16;
pub const CROP_SIZE: usize = 112;
pub const FLIP_PROB: f64 = 0.5;

/// Crop scales relative to the short side: `2^(-i/4)` for `i = 0..=4`.
pub fn default_scales() -> Vec<f64> {
    (0..5).map(|i| 2f64.powf(-(i as f64) / 4.0)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct AugmentConfig {
    pub clip_len: usize,
    pub crop_size: usize,
    pub scales: Vec<f64>,
    pub flip_prob: f64,
    pub mean: [f32; 3],
}

impl AugmentConfig {
    pub fn new(mean: [f32; 3]) -> Self {
        AugmentConfig {
            clip_len: CLIP_LEN,
            crop_size: CROP_SIZE,
            scales: default_scales(),
            flip_prob: FLIP_PROB,
            mean,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.clip_len == 0 || self.crop_size == 0 {
            return Err(Error::invalid("clip_len and crop_size must be positive"));
        }
        if self.scales.is_empty() {
            return Err(Error::invalid("scale set is empty"));
        }
        if let Some(s) = self.scales.iter().find(|s| !(**s > 0.0 && **s <= 1.0)) {
            return Err(Error::invalid(format!("scale {s} outside (0, 1]")));
        }
        if self.scales.windows(2).any(|w| w[1] >= w[0]) {
            return Err(Error::invalid("scales must be strictly decreasing"));
        }
        if !(0.0..=1.0).contains(&self.flip_prob) {
            return Err(Error::invalid(format!(
                "flip probability {} outside [0, 1]",
                self.flip_prob
            )));
        }
        if self.mean.iter().any(|m| !m.is_finite()) {
            return Err(Error::invalid("channel mean must be finite"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum CropPosition {
    TopLeft,
    TopRight,
    BottomLeft,
    BottomRight,
    Center,
}

impl CropPosition {
    pub const ALL: [CropPosition; 5] = [
        CropPosition::TopLeft,
        CropPosition::TopRight,
        CropPosition::BottomLeft,
        CropPosition::BottomRight,
        CropPosition::Center,
    ];
}

impl fmt::Display for CropPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            CropPosition::TopLeft => "top-left",
            CropPosition::TopRight => "top-right",
            CropPosition::BottomLeft => "bottom-left",
            CropPosition::BottomRight => "bottom-right",
            CropPosition::Center => "center",
        })
    }
}

/// Square region `rows top..top+side`, `cols left..left+side`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CropWindow {
    pub top: usize,
    pub left: usize,
    pub side: usize,
}

pub fn crop_window(height: usize, width: usize, position: CropPosition, scale: f64) -> Result<CropWindow> {
    let short = height.min(width);
    let side = (scale * short as f64).round();
    if !(side >= 1.0 && side <= short as f64) {
        return Err(Error::invalid(format!(
            "scale {scale} on a {height}x{width} frame gives crop side {side}"
        )));
    }
    let side = side as usize;
    let (top, left) = match position {
        CropPosition::TopLeft => (0, 0),
        CropPosition::TopRight => (0, width - side),
        CropPosition::BottomLeft => (height - side, 0),
        CropPosition::BottomRight => (height - side, width - side),
        CropPosition::Center => ((height - side) / 2, (width - side) / 2),
    };
    Ok(CropWindow { top, left, side })
}

fn frame_hw(frame: &Tensor<f32>) -> Result<(usize, usize)> {
    match frame.shape() {
        [3, h, w] => Ok((*h, *w)),
        s => Err(Error::shape("frame", s, &[3, 0, 0])),
    }
}

/// Source taps for half-pixel-centre bilinear sampling of `n_out` points
/// from `n_in`: `(i0, i1, weight of i1)`.
fn taps(n_in: usize, n_out: usize) -> Vec<(usize, usize, f32)> {
    let ratio = n_in as f64 / n_out as f64;
    (0..n_out)
        .map(|o| {
            let src = ((o as f64 + 0.5) * ratio - 0.5).clamp(0.0, (n_in - 1) as f64);
            let i0 = src.floor() as usize;
            let i1 = (i0 + 1).min(n_in - 1);
            (i0, i1, (src - i0 as f64) as f32)
        })
        .collect()
}

/// Bilinearly resamples `window` of a `[3, H, W]` frame to `size × size`,
/// writing channel planes into `out` (length `3 · size²`). Corners are not
/// aligned; sample points never leave the window.
fn resize_window(frame: &Tensor<f32>, window: CropWindow, size: usize, out: &mut [f32]) {
    let (h, w) = (frame.shape()[1], frame.shape()[2]);
    let rows = taps(window.side, size);
    let cols = taps(window.side, size);
    for c in 0..3 {
        let plane = &frame.data()[c * h * w..(c + 1) * h * w];
        let dst = &mut out[c * size * size..(c + 1) * size * size];
        for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
            let r0 = &plane[(window.top + y0) * w + window.left..];
            let r1 = &plane[(window.top + y1) * w + window.left..];
            for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                let top = r0[x0] + (r0[x1] - r0[x0]) * wx;
                let bottom = r1[x0] + (r1[x1] - r1[x0]) * wx;
                dst[oy * size + ox] = top + (bottom - top) * wy;
            }
        }
    }
}

pub fn resize_bilinear(frame: &Tensor<f32>, out_h: usize, out_w: usize) -> Result<Tensor<f32>> {
    let (h, w) = frame_hw(frame)?;
    if out_h == 0 || out_w == 0 {
        return Err(Error::invalid("resize target must be non-empty"));
    }
    let rows = taps(h, out_h);
    let cols = taps(w, out_w);
    let mut out = Tensor::zeros(&[3, out_h, out_w]);
    for c in 0..3 {
        let plane = &frame.data()[c * h * w..(c + 1) * h * w];
        let dst = &mut out.data_mut()[c * out_h * out_w..(c + 1) * out_h * out_w];
        for (oy, &(y0, y1, wy)) in rows.iter().enumerate() {
            for (ox, &(x0, x1, wx)) in cols.iter().enumerate() {
                let top = plane[y0 * w + x0] + (plane[y0 * w + x1] - plane[y0 * w + x0]) * wx;
                let bottom = plane[y1 * w + x0] + (plane[y1 * w + x1] - plane[y1 * w + x0]) * wx;
                dst[oy * out_w + ox] = top + (bottom - top) * wy;
            }
        }
    }
    Ok(out)
}

/// Square crop at `position` with side `round(scale · short side)`, resized
/// to `crop_size × crop_size`.
pub fn crop_multiscale(
    frame: &Tensor<f32>,
    position: CropPosition,
    scale: f64,
    crop_size: usize,
) -> Result<Tensor<f32>> {
    let (h, w) = frame_hw(frame)?;
    let window = crop_window(h, w, position, scale)?;
    let mut out = Tensor::zeros(&[3, crop_size, crop_size]);
    resize_window(frame, window, crop_size, out.data_mut());
    Ok(out)
}

/// Frame indices `(start + i) mod frame_count` for `i < clip_len`.
pub fn clip_indices(start: usize, frame_count: usize, clip_len: usize) -> Vec<usize> {
    assert!(frame_count >= 1, "video has no frames");
    (0..clip_len).map(|i| (start + i) % frame_count).collect()
}

/// Uniform start in `[0, frame_count − 1]`, looping past the end.
pub fn sample_temporal(frame_count: usize, clip_len: usize, rng: &mut Rng) -> Vec<usize> {
    clip_indices(rng.below(frame_count.max(1)), frame_count, clip_len)
}

/// Reverses the last axis.
pub fn flip_horizontal(t: &Tensor<f32>) -> Tensor<f32> {
    let w = *t.shape().last().expect("rank >= 1");
    let mut out = t.clone();
    out.data_mut().chunks_mut(w).for_each(|row| row.reverse());
    out
}

/// Subtracts `mean[c]` from channel `c` of a `[3, ...]` tensor.
pub fn subtract_mean(t: &mut Tensor<f32>, mean: [f32; 3]) {
    let plane = t.len() / 3;
    for (c, chunk) in t.data_mut().chunks_mut(plane).enumerate() {
        chunk.iter_mut().for_each(|v| *v -= mean[c]);
    }
}

/// Builds a `[3, T, S, S]` clip from `indices`, cropping every frame with
/// the same window and flipping all of them or none.
pub fn extract_clip(
    video: &dyn Video,
    indices: &[usize],
    position: CropPosition,
    scale: f64,
    flip: bool,
    crop_size: usize,
    mean: [f32; 3],
) -> Result<Tensor<f32>> {
    let t_len = indices.len();
    let plane = crop_size * crop_size;
    let mut data = vec![0f32; 3 * t_len * plane];
    let mut scratch = vec![0f32; 3 * plane];
    let mut window = None;
    for (t, &idx) in indices.iter().enumerate() {
        let frame = video.frame(idx)?;
        let (h, w) = frame_hw(&frame)?;
        let win = match window {
            Some(win) => win,
            None => *window.insert(crop_window(h, w, position, scale)?),
        };
        if win.top + win.side > h || win.left + win.side > w {
            return Err(Error::invalid(format!("frame {idx} is smaller than earlier frames")));
        }
        resize_window(&frame, win, crop_size, &mut scratch);
        for c in 0..3 {
            let dst = &mut data[(c * t_len + t) * plane..(c * t_len + t + 1) * plane];
            dst.copy_from_slice(&scratch[c * plane..(c + 1) * plane]);
            if flip {
                dst.chunks_mut(crop_size).for_each(|row| row.reverse());
            }
            dst.iter_mut().for_each(|v| *v -= mean[c]);
        }
    }
    Tensor::new(vec![3, t_len, crop_size, crop_size], data)
}

/// Random choices for one training clip.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AugmentDraw {
    pub start: usize,
    pub position: CropPosition,
    pub scale_index: usize,
    pub flip: bool,
}

impl AugmentDraw {
    /// Draws start, position, scale and flip, in that order.
    pub fn sample(frame_count: usize, config: &AugmentConfig, rng: &mut Rng) -> Self {
        let start = rng.below(frame_count.max(1));
        let position = CropPosition::ALL[rng.below(CropPosition::ALL.len())];
        let scale_index = rng.below(config.scales.len());
        let flip = rng.uniform() < config.flip_prob;
        AugmentDraw {
            start,
            position,
            scale_index,
            flip,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Provenance {
    pub video: String,
    pub start: usize,
    pub position: CropPosition,
    pub scale: f64,
    pub flipped: bool,
}

#[derive(Debug, Clone)]
pub struct ClipSample {
    /// `[3, T, S, S]`, mean-subtracted.
    pub tensor: Tensor<f32>,
    pub label: usize,
    pub provenance: Provenance,
}

pub fn apply_augment(item: &DatasetItem, draw: AugmentDraw, config: &AugmentConfig) -> Result<ClipSample> {
    let video = item.video.as_ref();
    let indices = clip_indices(draw.start, video.frame_count(), config.clip_len);
    let scale = config.scales[draw.scale_index];
    let tensor = extract_clip(
        video,
        &indices,
        draw.position,
        scale,
        draw.flip,
        config.crop_size,
        config.mean,
    )?;
    Ok(ClipSample {
        tensor,
        label: item.label,
        provenance: Provenance {
            video: item.id.clone(),
            start: draw.start,
            position: draw.position,
            scale,
            flipped: draw.flip,
        },
    })
}

pub fn augment_clip(item: &DatasetItem, config: &AugmentConfig, rng: &mut Rng) -> Result<ClipSample> {
    let draw = AugmentDraw::sample(item.video.frame_count(), config, rng);
    apply_augment(item, draw, config)
}

#[cfg(test)]
mod tests {
    use std::sync::Arc;

    use super::*;
    use crate::data::MemoryVideo;

    fn ramp(h: usize, w: usize) -> Tensor<f32> {
        Tensor::from_fn(&[3, h, w], |i| (i % 251) as f32)
    }

    #[test]
    fn scale_set() {
        let s = default_scales();
        let want = [
            1.0,
            2f64.powf(-0.25),
            std::f64::consts::FRAC_1_SQRT_2,
            2f64.powf(-0.75),
            0.5,
        ];
        for (a, b) in s.iter().zip(want) {
            assert!((a - b).abs() < 1e-12);
        }
        AugmentConfig::new([0.0; 3]).validate().unwrap();
    }

    #[test]
    fn config_validation() {
        let mut c = AugmentConfig::new([0.0; 3]);
        c.scales = vec![1.0, 1.0];
        assert!(c.validate().is_err());
        c.scales = vec![1.5];
        assert!(c.validate().is_err());
        c.scales = vec![1.0];
        c.clip_len = 0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn windows() {
        let w = crop_window(180, 240, CropPosition::TopLeft, 0.5).unwrap();
        assert_eq!(
            w,
            CropWindow {
                top: 0,
                left: 0,
                side: 90
            }
        );
        let w = crop_window(180, 240, CropPosition::Center, 1.0).unwrap();
        assert_eq!(
            w,
            CropWindow {
                top: 0,
                left: 30,
                side: 180
            }
        );
        let w = crop_window(360, 480, CropPosition::Center, 1.0).unwrap();
        assert_eq!(
            w,
            CropWindow {
                top: 0,
                left: 60,
                side: 360
            }
        );
        let w = crop_window(180, 240, CropPosition::BottomRight, 0.5).unwrap();
        assert_eq!(
            w,
            CropWindow {
                top: 90,
                left: 150,
                side: 90
            }
        );
        assert!(crop_window(1, 1, CropPosition::Center, 0.4).is_err());
    }

    #[test]
    fn identity_crop() {
        let f = ramp(112, 112);
        for p in CropPosition::ALL {
            assert_eq!(crop_multiscale(&f, p, 1.0, 112).unwrap(), f);
        }
    }

    #[test]
    fn crop_takes_the_window() {
        // 2x downsample of a 4x4 window: half-pixel centres fall midway
        let f = Tensor::from_fn(&[3, 6, 8], |i| i as f32);
        let out = crop_multiscale(&f, CropPosition::TopLeft, 4.0 / 6.0, 2).unwrap();
        let at = |c: usize, y: f32, x: f32| (c * 48) as f32 + y * 8.0 + x;
        assert_eq!(out.data()[0], at(0, 0.5, 0.5));
        assert_eq!(out.data()[3], at(0, 2.5, 2.5));
        assert_eq!(out.data()[4], at(1, 0.5, 0.5));
    }

    #[test]
    fn resize_constant_and_identity() {
        let f = Tensor::full(&[3, 7, 9], 5.0f32);
        assert!(resize_bilinear(&f, 4, 13).unwrap().data().iter().all(|&v| v == 5.0));
        let g = ramp(5, 6);
        assert_eq!(resize_bilinear(&g, 5, 6).unwrap(), g);
    }

    #[test]
    fn temporal() {
        assert_eq!(clip_indices(0, 16, 16), (0..16).collect::<Vec<_>>());
        let want: Vec<usize> = (0..10).chain(0..6).collect();
        assert_eq!(clip_indices(0, 10, 16), want);
        assert_eq!(clip_indices(0, 1, 16), vec![0; 16]);
        let mut rng = Rng::new(3);
        for n in 1..40 {
            assert!(sample_temporal(n, 16, &mut rng).iter().all(|&i| i < n));
        }
    }

    fn item(frames: usize, h: usize, w: usize) -> DatasetItem {
        let vid = MemoryVideo::new(
            (0..frames)
                .map(|k| Tensor::from_fn(&[3, h, w], |i| ((i * 7 + k * 13) % 256) as f32))
                .collect(),
        )
        .unwrap();
        DatasetItem {
            id: "v".into(),
            label: 4,
            video: Arc::new(vid),
        }
    }

    #[test]
    fn flip_is_an_involution() {
        let it = item(5, 20, 30);
        let cfg = AugmentConfig {
            crop_size: 16,
            ..AugmentConfig::new([1.0, 2.0, 3.0])
        };
        let draw = AugmentDraw {
            start: 2,
            position: CropPosition::TopRight,
            scale_index: 2,
            flip: true,
        };
        let flipped = apply_augment(&it, draw, &cfg).unwrap();
        let plain = apply_augment(&it, AugmentDraw { flip: false, ..draw }, &cfg).unwrap();
        assert_eq!(flip_horizontal(&flipped.tensor), plain.tensor);
        assert_eq!(flipped.label, 4);
        assert_eq!(flipped.tensor.shape(), &[3, 16, 16, 16]);
    }

    #[test]
    fn self_mean_zeroes_channels() {
        let it = item(16, 20, 20);
        let mut cfg = AugmentConfig {
            crop_size: 20,
            ..AugmentConfig::new([0.0; 3])
        };
        let draw = AugmentDraw {
            start: 0,
            position: CropPosition::Center,
            scale_index: 0,
            flip: false,
        };
        let raw = apply_augment(&it, draw, &cfg).unwrap().tensor;
        let plane = raw.len() / 3;
        for c in 0..3 {
            cfg.mean[c] = (raw.data()[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>()
                / plane as f64) as f32;
        }
        let out = apply_augment(&it, draw, &cfg).unwrap().tensor;
        for c in 0..3 {
            let m: f64 = out.data()[c * plane..(c + 1) * plane]
                .iter()
                .map(|&v| v as f64)
                .sum::<f64>()
                / plane as f64;
            assert!(m.abs() < 1e-5, "channel {c}: {m}");
        }
    }

    #[test]
    fn one_window_for_the_whole_clip() {
        let it = item(3, 40, 60);
        let cfg = AugmentConfig {
            crop_size: 10,
            clip_len: 4,
            ..AugmentConfig::new([0.0; 3])
        };
        let mut rng = Rng::new(9);
        let s = augment_clip(&it, &cfg, &mut rng).unwrap();
        let indices = clip_indices(s.provenance.start, 3, 4);
        for (t, &idx) in indices.iter().enumerate() {
            let frame = it.video.frame(idx).unwrap();
            let mut want = crop_multiscale(&frame, s.provenance.position, s.provenance.scale, 10).unwrap();
            if s.provenance.flipped {
                want = flip_horizontal(&want);
            }
            for c in 0..3 {
                let got = &s.tensor.data()[(c * 4 + t) * 100..(c * 4 + t + 1) * 100];
                assert_eq!(got, &want.data()[c * 100..(c + 1) * 100]);
            }
        }
    }
}
