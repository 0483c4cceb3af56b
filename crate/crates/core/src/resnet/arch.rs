use std::fmt;

use crate::error::{Error, Result};
use crate::layers::conv_output_extent;

pub const STEM_KERNEL: [usize; 3] = [7, 7, 7];
/// Temporal stride 1, spatial stride 2.
pub const STEM_STRIDE: [usize; 3] = [1, 2, 2];
pub const STEM_PADDING: [usize; 3] = [3, 3, 3];
pub const POOL_KERNEL: [usize; 3] = [3, 3, 3];
pub const POOL_STRIDE: [usize; 3] = [2, 2, 2];
pub const POOL_PADDING: [usize; 3] = [1, 1, 1];
pub const BLOCK_KERNEL: [usize; 3] = [3, 3, 3];
pub const BLOCK_PADDING: [usize; 3] = [1, 1, 1];

pub const DEFAULT_STAGE_CHANNELS: [usize; 4] = [64, 128, 256, 512];
/// `(channels, frames, height, width)` of one input clip.
pub const DEFAULT_INPUT: [usize; 4] = [3, 16, 112, 112];
pub const KINETICS_CLASSES: usize = 400;

/// Declarative description of an 18- or 34-layer network.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ArchSpec {
    pub depth: usize,
    pub block_counts: [usize; 4],
    pub stage_channels: [usize; 4],
    pub num_classes: usize,
    pub input_shape: [usize; 4],
}

/// Residual blocks per stage for a supported depth.
pub fn block_counts_for(depth: usize) -> Option<[usize; 4]> {
    match depth {
        18 => Some([2, 2, 2, 2]),
        34 => Some([3, 4, 6, 3]),
        _ => None,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ShortcutKind {
    Identity,
    /// Stride-sampled along T, H, W, then zero-padded in channels.
    ZeroPad,
}

/// One row of the architecture table: a stem layer, a residual block or the
/// classifier head. `output` excludes the batch axis.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LayerRow {
    pub name: String,
    pub description: String,
    /// Index into the four residual stages, for block rows.
    pub stage: Option<usize>,
    pub stride: [usize; 3],
    pub shortcut: Option<ShortcutKind>,
    pub output: Vec<usize>,
    pub params: usize,
}

impl ArchSpec {
    /// Standard network with the default channel widths and input size.
    pub fn new(depth: usize, num_classes: usize) -> Result<Self> {
        let block_counts = block_counts_for(depth)
            .ok_or_else(|| Error::invalid(format!("unsupported depth {depth}; expected 18 or 34")))?;
        let spec = ArchSpec {
            depth,
            block_counts,
            stage_channels: DEFAULT_STAGE_CHANNELS,
            num_classes,
            input_shape: DEFAULT_INPUT,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn resnet18(num_classes: usize) -> Self {
        ArchSpec::new(18, num_classes).expect("valid")
    }

    pub fn resnet34(num_classes: usize) -> Self {
        ArchSpec::new(34, num_classes).expect("valid")
    }

    pub fn with_stage_channels(mut self, channels: [usize; 4]) -> Self {
        self.stage_channels = channels;
        self
    }

    pub fn with_input(mut self, input_shape: [usize; 4]) -> Self {
        self.input_shape = input_shape;
        self
    }

    pub fn validate(&self) -> Result<()> {
        match block_counts_for(self.depth) {
            None => return Err(Error::invalid(format!("unsupported depth {}", self.depth))),
            Some(counts) if counts != self.block_counts => {
                return Err(Error::invalid(format!(
                    "depth {} requires block counts {counts:?}, got {:?}",
                    self.depth, self.block_counts
                )))
            }
            _ => {}
        }
        if self.stage_channels.contains(&0) || self.num_classes == 0 || self.input_shape.contains(&0) {
            return Err(Error::invalid("channels, classes and input extents must be positive"));
        }
        if self.stage_channels.windows(2).any(|w| w[1] < w[0]) {
            return Err(Error::invalid(format!(
                "stage channels must be non-decreasing for zero-padded shortcuts, got {:?}",
                self.stage_channels
            )));
        }
        self.layer_table().map(|_| ())
    }

    /// First-conv stride of block `block` in stage `stage`.
    pub fn block_stride(stage: usize, block: usize) -> usize {
        if stage > 0 && block == 0 {
            2
        } else {
            1
        }
    }

    /// Conventional name of a residual block, e.g. `conv3_1`.
    pub fn block_name(stage: usize, block: usize) -> String {
        format!("conv{}_{}", stage + 2, block + 1)
    }

    pub fn num_blocks(&self) -> usize {
        self.block_counts.iter().sum()
    }

    /// Output shapes and parameter counts by the extent formula, without
    /// allocating the network.
    pub fn layer_table(&self) -> Result<Vec<LayerRow>> {
        let extent = |input: [usize; 3], k: [usize; 3], s: [usize; 3], p: [usize; 3], what: &str| {
            let mut out = [0; 3];
            for a in 0..3 {
                out[a] = conv_output_extent(input[a], k[a], s[a], p[a])
                    .ok_or_else(|| Error::invalid(format!("{what}: input extents {input:?} too small")))?;
            }
            Ok::<_, Error>(out)
        };
        let [in_ch, t, h, w] = self.input_shape;
        let stem_ch = self.stage_channels[0];
        let mut rows = Vec::new();

        let mut size = extent([t, h, w], STEM_KERNEL, STEM_STRIDE, STEM_PADDING, "conv1")?;
        rows.push(LayerRow {
            name: "conv1".into(),
            description: format!("7x7x7, {stem_ch}, stride 1 (T), 2 (XY)"),
            stage: None,
            stride: STEM_STRIDE,
            shortcut: None,
            output: vec![stem_ch, size[0], size[1], size[2]],
            params: stem_ch * in_ch * 343 + 2 * stem_ch,
        });
        size = extent(size, POOL_KERNEL, POOL_STRIDE, POOL_PADDING, "pool")?;
        rows.push(LayerRow {
            name: "pool".into(),
            description: "3x3x3 max pool, stride 2".into(),
            stage: None,
            stride: POOL_STRIDE,
            shortcut: None,
            output: vec![stem_ch, size[0], size[1], size[2]],
            params: 0,
        });

        let mut ch = stem_ch;
        for (stage, (&count, &out_ch)) in self.block_counts.iter().zip(&self.stage_channels).enumerate() {
            for block in 0..count {
                let s = Self::block_stride(stage, block);
                size = extent(size, BLOCK_KERNEL, [s; 3], BLOCK_PADDING, "residual block")?;
                let shortcut = if s != 1 || ch != out_ch {
                    ShortcutKind::ZeroPad
                } else {
                    ShortcutKind::Identity
                };
                rows.push(LayerRow {
                    name: Self::block_name(stage, block),
                    description: format!("[3x3x3, {out_ch}] x2"),
                    stage: Some(stage),
                    stride: [s; 3],
                    shortcut: Some(shortcut),
                    output: vec![out_ch, size[0], size[1], size[2]],
                    params: ch * out_ch * 27 + out_ch * out_ch * 27 + 4 * out_ch,
                });
                ch = out_ch;
            }
        }
        rows.push(LayerRow {
            name: "avgpool".into(),
            description: "average pool".into(),
            stage: None,
            stride: [1; 3],
            shortcut: None,
            output: vec![ch],
            params: 0,
        });
        rows.push(LayerRow {
            name: "fc".into(),
            description: format!("{}-d fc, softmax", self.num_classes),
            stage: None,
            stride: [1; 3],
            shortcut: None,
            output: vec![self.num_classes],
            params: ch * self.num_classes + self.num_classes,
        });
        Ok(rows)
    }

    pub fn param_count(&self) -> usize {
        self.layer_table()
            .map(|rows| rows.iter().map(|r| r.params).sum())
            .unwrap_or(0)
    }
}

impl fmt::Display for ArchSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "ResNet-{} blocks {:?} channels {:?} classes {} input {:?}",
            self.depth, self.block_counts, self.stage_channels, self.num_classes, self.input_shape
        )
    }
}

/// Renders the layer table as aligned text with a totals line.
pub fn render_layer_table(spec: &ArchSpec) -> Result<String> {
    use std::fmt::Write;
    let rows = spec.layer_table()?;
    let mut out = String::new();
    let _ = writeln!(out, "{spec}");
    let _ = writeln!(
        out,
        "{:<9} {:<34} {:<9} {:<9} {:<20} {:>12}",
        "layer", "spec", "stride", "shortcut", "output", "params"
    );
    for r in &rows {
        let shape = format!(
            "(N,{})",
            r.output.iter().map(|e| e.to_string()).collect::<Vec<_>>().join(",")
        );
        let stride = format!("{},{},{}", r.stride[0], r.stride[1], r.stride[2]);
        let shortcut = match r.shortcut {
            Some(ShortcutKind::Identity) => "identity",
            Some(ShortcutKind::ZeroPad) => "zero-pad",
            None => "-",
        };
        let _ = writeln!(
            out,
            "{:<9} {:<34} {:<9} {:<9} {:<20} {:>12}",
            r.name, r.description, stride, shortcut, shape, r.params
        );
    }
    let _ = writeln!(
        out,
        "stage blocks: {}",
        spec.block_counts
            .iter()
            .map(|c| c.to_string())
            .collect::<Vec<_>>()
            .join(",")
    );
    let _ = writeln!(out, "total params: {}", rows.iter().map(|r| r.params).sum::<usize>());
    Ok(out)
}
