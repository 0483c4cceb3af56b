//! Writes a small procedurally generated dataset (PPM frames plus train and
//! val manifests) for trying the CLI without real video data.
//!
//! cargo run --release -p st3d --example synthetic_dataset -- data/synthetic

use std::path::PathBuf;

use st3d::data::{write_synthetic, Split, SyntheticSpec};

fn main() -> st3d::Result<()> {
    let out = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "data/synthetic".into()));
    for (split, seed, videos) in [(Split::Train, 1, 16), (Split::Val, 2, 4)] {
        let spec = SyntheticSpec {
            classes: 4,
            videos_per_class: videos,
            frames: 24,
            height: 48,
            width: 64,
            seed,
        };
        let root = out.join(split.to_string());
        let manifest = write_synthetic(&spec, &root, split)?;
        let path = root.join("manifest.tsv");
        manifest.save(&path)?;
        println!("{}: {} videos", path.display(), manifest.videos.len());
    }
    Ok(())
}
