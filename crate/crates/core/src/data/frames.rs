//! Frame storage: 8-bit binary PPM files decoded to planar `[3, H, W]`
//! tensors in pixel units.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use image::codecs::pnm::{PnmEncoder, PnmSubtype, SampleEncoding};
use image::{ExtendedColorType, ImageEncoder, RgbImage};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub fn read_frame(path: &Path) -> Result<Tensor<f32>> {
    if !path.is_file() {
        return Err(Error::MissingFrame(path.to_path_buf()));
    }
    let bad = |reason: String| Error::BadFrame {
        path: path.to_path_buf(),
        reason,
    };
    let img = image::ImageReader::open(path)?
        .with_guessed_format()?
        .decode()
        .map_err(|e| bad(e.to_string()))?;
    let rgb = img.to_rgb8();
    let (w, h) = (rgb.width() as usize, rgb.height() as usize);
    let mut data = vec![0f32; 3 * h * w];
    for (i, px) in rgb.pixels().enumerate() {
        for c in 0..3 {
            data[c * h * w + i] = px.0[c] as f32;
        }
    }
    Tensor::new(vec![3, h, w], data)
}

/// Writes a `[3, H, W]` tensor as binary PPM, rounding and clamping to 0..=255.
pub fn write_frame(path: &Path, frame: &Tensor<f32>) -> Result<()> {
    let (h, w) = match frame.shape() {
        [3, h, w] => (*h, *w),
        s => return Err(Error::shape("write frame", s, &[3, 0, 0])),
    };
    let plane = h * w;
    let img = RgbImage::from_fn(w as u32, h as u32, |x, y| {
        let i = y as usize * w + x as usize;
        let px = |c: usize| frame.data()[c * plane + i].round().clamp(0.0, 255.0) as u8;
        image::Rgb([px(0), px(1), px(2)])
    });
    let mut file = std::io::BufWriter::new(std::fs::File::create(path)?);
    PnmEncoder::new(&mut file)
        .with_subtype(PnmSubtype::Pixmap(SampleEncoding::Binary))
        .write_image(img.as_raw(), w as u32, h as u32, ExtendedColorType::Rgb8)
        .map_err(|e| Error::BadFrame {
            path: path.to_path_buf(),
            reason: e.to_string(),
        })?;
    std::io::Write::flush(&mut file)?;
    Ok(())
}

/// Random access to the frames of one video.
pub trait Video: Send + Sync {
    fn frame_count(&self) -> usize;
    /// Frame `index` (0-based) as `[3, H, W]` in pixel units.
    fn frame(&self, index: usize) -> Result<Tensor<f32>>;
}

/// Frames read lazily from `dir/frame_%05d.ppm`.
#[derive(Debug, Clone)]
pub struct FrameDir {
    pub dir: PathBuf,
    pub count: usize,
}

impl Video for FrameDir {
    fn frame_count(&self) -> usize {
        self.count
    }

    fn frame(&self, index: usize) -> Result<Tensor<f32>> {
        if index >= self.count {
            return Err(Error::invalid(format!(
                "frame {index} out of range for {} frames",
                self.count
            )));
        }
        read_frame(&self.dir.join(super::frame_file_name(index)))
    }
}

#[derive(Debug, Clone)]
pub struct MemoryVideo {
    frames: Vec<Tensor<f32>>,
}

impl MemoryVideo {
    pub fn new(frames: Vec<Tensor<f32>>) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::invalid("video needs at least one frame"))?;
        if first.rank() != 3 || first.shape()[0] != 3 {
            return Err(Error::shape("video frame", first.shape(), &[3, 0, 0]));
        }
        if let Some(f) = frames.iter().find(|f| f.shape() != first.shape()) {
            return Err(Error::shape("video frame", f.shape(), first.shape()));
        }
        Ok(MemoryVideo { frames })
    }

    pub fn frames(&self) -> &[Tensor<f32>] {
        &self.frames
    }
}

impl Video for MemoryVideo {
    fn frame_count(&self) -> usize {
        self.frames.len()
    }

    fn frame(&self, index: usize) -> Result<Tensor<f32>> {
        self.frames
            .get(index)
            .cloned()
            .ok_or_else(|| Error::invalid(format!("frame {index} out of range for {} frames", self.frames.len())))
    }
}

#[derive(Clone)]
pub struct DatasetItem {
    pub id: String,
    pub label: usize,
    pub video: Arc<dyn Video>,
}

/// A labelled collection of videos plus the per-channel mean.
#[derive(Clone)]
pub struct Dataset {
    pub classes: Vec<String>,
    pub mean: [f32; 3],
    pub items: Vec<DatasetItem>,
}

impl Dataset {
    /// Opens a manifest-described dataset after checking every frame file.
    pub fn open(manifest: &super::Manifest) -> Result<Self> {
        manifest.verify_frames()?;
        let items = manifest
            .videos
            .iter()
            .enumerate()
            .map(|(i, v)| DatasetItem {
                id: v.path.clone(),
                label: v.class,
                video: Arc::new(FrameDir {
                    dir: manifest.video_dir(i),
                    count: v.frame_count,
                }) as Arc<dyn Video>,
            })
            .collect();
        Ok(Dataset {
            classes: manifest.classes.clone(),
            mean: manifest.mean,
            items,
        })
    }

    pub fn len(&self) -> usize {
        self.items.len()
    }

    pub fn is_empty(&self) -> bool {
        self.items.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }
}
