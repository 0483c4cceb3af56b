//! Dataset manifest: a line-oriented, tab-separated text file.
//!
//! ```text
//! # comments start with '#'
//! split   train
//! mean    114.8   107.7   99.5
//! height  360
//! class   abseiling
//! class   archery
//! video   abseiling/v_0001    abseiling   48
//! ```
//!
//! `height` is optional; when present every frame must have that height.
//! Video paths are relative to the dataset root and name a directory
//! holding `frame_00001.ppm` … `frame_{count}.ppm`.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::path::{Path, PathBuf};
use std::str::FromStr;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl FromStr for Split {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "train" => Ok(Split::Train),
            "val" => Ok(Split::Val),
            "test" => Ok(Split::Test),
            other => Err(Error::invalid(format!("unknown split {other:?}"))),
        }
    }
}

impl fmt::Display for Split {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct VideoEntry {
    pub path: String,
    pub class: usize,
    pub frame_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Manifest {
    pub root: PathBuf,
    pub split: Split,
    pub classes: Vec<String>,
    pub mean: [f32; 3],
    pub height: Option<u32>,
    pub videos: Vec<VideoEntry>,
}

/// File name of the 0-based frame `index`.
pub fn frame_file_name(index: usize) -> String {
    format!("frame_{:05}.ppm", index + 1)
}

fn manifest_err(line: usize, reason: impl Into<String>) -> Error {
    Error::Manifest {
        line,
        reason: reason.into(),
    }
}

impl Manifest {
    pub fn parse(text: &str, root: impl Into<PathBuf>) -> Result<Self> {
        let mut split = None;
        let mut mean = None;
        let mut height = None;
        let mut classes: Vec<String> = Vec::new();
        let mut index: HashMap<String, usize> = HashMap::new();
        let mut pending: Vec<(usize, String, String, String)> = Vec::new();

        for (i, raw) in text.lines().enumerate() {
            let line_no = i + 1;
            let line = raw.trim_end_matches('\r');
            if line.trim().is_empty() || line.trim_start().starts_with('#') {
                continue;
            }
            let fields: Vec<&str> = line.split('\t').collect();
            let want = |n: usize| -> Result<()> {
                if fields.len() != n {
                    return Err(manifest_err(
                        line_no,
                        format!("{:?} record needs {} fields, found {}", fields[0], n, fields.len()),
                    ));
                }
                Ok(())
            };
            match fields[0] {
                "split" => {
                    want(2)?;
                    split = Some(
                        fields[1]
                            .parse()
                            .map_err(|e: Error| manifest_err(line_no, e.to_string()))?,
                    );
                }
                "mean" => {
                    want(4)?;
                    let mut m = [0f32; 3];
                    for (c, f) in fields[1..].iter().enumerate() {
                        m[c] = f
                            .parse::<f32>()
                            .ok()
                            .filter(|v| v.is_finite())
                            .ok_or_else(|| manifest_err(line_no, format!("bad mean value {f:?}")))?;
                    }
                    mean = Some(m);
                }
                "height" => {
                    want(2)?;
                    let h = fields[1]
                        .parse::<u32>()
                        .ok()
                        .filter(|&h| h > 0)
                        .ok_or_else(|| manifest_err(line_no, format!("bad height {:?}", fields[1])))?;
                    height = Some(h);
                }
                "class" => {
                    want(2)?;
                    let name = fields[1].to_string();
                    if name.is_empty() {
                        return Err(manifest_err(line_no, "empty class name"));
                    }
                    if index.insert(name.clone(), classes.len()).is_some() {
                        return Err(manifest_err(line_no, format!("duplicate class {name:?}")));
                    }
                    classes.push(name);
                }
                "video" => {
                    want(4)?;
                    pending.push((line_no, fields[1].into(), fields[2].into(), fields[3].into()));
                }
                other => return Err(manifest_err(line_no, format!("unknown record {other:?}"))),
            }
        }

        let split = split.ok_or_else(|| manifest_err(0, "missing split record"))?;
        let mean = mean.ok_or_else(|| manifest_err(0, "missing mean record"))?;
        if classes.is_empty() {
            return Err(manifest_err(0, "no classes declared"));
        }
        let mut videos = Vec::with_capacity(pending.len());
        for (line_no, path, class, count) in pending {
            if path.is_empty() || Path::new(&path).is_absolute() {
                return Err(manifest_err(line_no, format!("video path {path:?} must be relative")));
            }
            let class = *index
                .get(&class)
                .ok_or_else(|| manifest_err(line_no, format!("undeclared class {class:?}")))?;
            let frame_count = count.parse::<usize>().ok().filter(|&c| c >= 1).ok_or_else(|| {
                manifest_err(
                    line_no,
                    format!("frame count must be a positive integer, got {count:?}"),
                )
            })?;
            videos.push(VideoEntry {
                path,
                class,
                frame_count,
            });
        }
        Ok(Manifest {
            root: root.into(),
            split,
            classes,
            mean,
            height,
            videos,
        })
    }

    /// Reads a manifest; the dataset root defaults to the manifest's directory.
    pub fn load(path: &Path, root: Option<&Path>) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let root = match root {
            Some(r) => r.to_path_buf(),
            None => path.parent().map(Path::to_path_buf).unwrap_or_default(),
        };
        Self::parse(&text, root)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "split\t{}", self.split);
        let _ = writeln!(out, "mean\t{}\t{}\t{}", self.mean[0], self.mean[1], self.mean[2]);
        if let Some(h) = self.height {
            let _ = writeln!(out, "height\t{h}");
        }
        for c in &self.classes {
            let _ = writeln!(out, "class\t{c}");
        }
        for v in &self.videos {
            let _ = writeln!(out, "video\t{}\t{}\t{}", v.path, self.classes[v.class], v.frame_count);
        }
        out
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }

    pub fn num_classes(&self) -> usize {
        self.classes.len()
    }

    pub fn video_dir(&self, video: usize) -> PathBuf {
        self.root.join(&self.videos[video].path)
    }

    pub fn frame_path(&self, video: usize, index: usize) -> PathBuf {
        self.video_dir(video).join(frame_file_name(index))
    }

    /// Checks that every frame file exists and that its header declares the
    /// manifest height (when given) and the same size as the video's first
    /// frame. Pixel data is not decoded.
    pub fn verify_frames(&self) -> Result<()> {
        for (v, entry) in self.videos.iter().enumerate() {
            let mut first = None;
            for i in 0..entry.frame_count {
                let path = self.frame_path(v, i);
                if !path.is_file() {
                    return Err(Error::MissingFrame(path));
                }
                let dims = image::image_dimensions(&path).map_err(|e| Error::BadFrame {
                    path: path.clone(),
                    reason: e.to_string(),
                })?;
                if let Some(h) = self.height {
                    if dims.1 != h {
                        return Err(Error::BadFrame {
                            path,
                            reason: format!("height {} differs from manifest height {h}", dims.1),
                        });
                    }
                }
                match first {
                    None => first = Some(dims),
                    Some(d) if d != dims => {
                        return Err(Error::BadFrame {
                            path,
                            reason: format!("size {}x{} differs from first frame {}x{}", dims.0, dims.1, d.0, d.1),
                        })
                    }
                    Some(_) => {}
                }
            }
        }
        Ok(())
    }
}
