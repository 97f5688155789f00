//! Dataset enumeration, 7:2:1 splitting, PNG decoding, augmentation and
//! batching.
//!
//! The expected layout is `root/<class>/<file>.png`; class indices follow
//! the sorted directory names.

mod augment;
mod image;
mod loader;
mod manifest;
pub mod synth;

pub use augment::{augment, hflip, normalize, preprocess, resize_bilinear, rotate, vflip, AugmentPolicy};
pub use image::{decode_png, encode_png_rgb};
pub use loader::{batch_plan, channel_stats, Batch, Loader};
pub use manifest::{build_manifest, split_counts, DatasetManifest, Record, Split};
