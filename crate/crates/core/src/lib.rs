//! Two-stage expressive violin synthesis: a masked diffusion model samples a
//! polyphonic bend roll from note rolls, and a second diffusion model renders a
//! mel spectrogram conditioned on all rolls and a performer embedding.

pub mod config;
pub mod diffusion;
pub mod dsp;
pub mod error;
pub mod evaluation;
pub mod midi_io;
pub mod neural;
pub mod roll_codec;
pub mod synth_data;
pub mod tensor_file;
pub mod training;

pub use error::{Error, Result};
