//! Video ingestion, clip sampling, augmentation and batching.

mod augment;
mod frames;
mod loader;
mod manifest;
mod synthetic;

pub use augment::{
    apply_augment, augment_clip, clip_indices, crop_multiscale, crop_window, default_scales, extract_clip,
    flip_horizontal, resize_bilinear, sample_temporal, subtract_mean, AugmentConfig, AugmentDraw, ClipSample,
    CropPosition, CropWindow, Provenance, CLIP_LEN, CROP_SIZE, FLIP_PROB,
};
pub use frames::{read_frame, write_frame, Dataset, DatasetItem, FrameDir, MemoryVideo, Video};
pub use loader::{
    batch_ranges, epoch_jobs, make_batch, AugmentedData, Batch, ClipQueue, FixedClips, Job, TrainingData,
};
pub use manifest::{frame_file_name, Manifest, Split, VideoEntry};
pub use synthetic::{
    center_clips, class_name, synthetic_dataset, synthetic_frames, write_synthetic, SyntheticSpec,
    MAX_SYNTHETIC_CLASSES,
};
