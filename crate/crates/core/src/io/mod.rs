//! Reading, writing, windowing and synthesizing motion data.

pub mod bvh;
pub mod csv;
pub mod dataset;
pub mod synth;

pub use bvh::{parse_bvh, BvhDocument, Channel, JointChannels};
pub use csv::{parse_positions_csv, positions_csv_string};
pub use dataset::{compute_norm_stats, slice_windows, NormStats, WindowSpec};
pub use synth::{synth_corpus, synth_motion, synth_skeleton};
