//! F0 tracking, DFT vibrato analysis with F1 / Perf-MAE metrics, and Fréchet
//! distances over clip embeddings with all / performer / piece groupings.
//!
//! The tracker and embedder are lightweight stand-ins: a YIN-style
//! autocorrelation tracker and log-mel summary statistics.

mod f0;
mod fad;
mod vibrato;

pub use f0::{extract_f0, extract_f0_with, F0Track, YinConfig, F0_MAX_HZ, F0_MIN_HZ};
pub use fad::{
    embed_clip, fad_suite, frechet_distance, FadReport, GaussianStats, GroupDistance, Grouping, TaggedEmbedding,
    COV_REGULARIZER,
};
pub use vibrato::{perf_mae, vibrato_f1, vibrato_value, LabelPair, SharedNote, VibratoConfig, VibratoLabel};
