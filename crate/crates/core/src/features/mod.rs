//! WORLD feature types, the WFEAT file format and mono WAV I/O.

mod types;
mod wav;
pub mod wfeat;

pub use types::{frame_count, CompressedFeatures, Features, FrameMeta, Waveform, WorldFeatures};
pub use wav::{read_wav, write_wav, WavEncoding};
pub use wfeat::{read_features, write_features};
