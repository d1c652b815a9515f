//! Training data: multitrack loading, chunk sampling, augmentation and the
//! pattern-overlay mixture constructors.

pub mod augment;
pub mod manifest;
pub mod mixing;
pub mod patterns;
pub mod trackset;

pub use augment::{augment, AugmentSpec};
pub use manifest::{Manifest, MixtureRecord};
pub use mixing::{
    build_eval_mixture, mix_train_pattern, overlay_all, overlay_pattern, EvalOverlay, OverlayConfig, Placement,
    TargetMode, TrainMix,
};
pub use patterns::{is_vocal_chops, split_patterns, PatternBank, PatternSplit, Segment, Splits};
pub use trackset::{ChunkPair, Split, Track, TrackSet};
