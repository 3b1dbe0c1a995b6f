//! Audio loading, 3-second clipping and the constant-Q input representation.

mod audio;
mod cache;
mod clips;
mod cqt;

pub use audio::{load_audio, resample, write_wav};
pub use cache::FeatureCache;
pub use clips::{clip_3s, clip_windows, AudioClip, ClipWindow, LabeledClip};
pub use cqt::{reference_cqt, Cqt, CqtParams, CqtSpectrogram};

/// Working sample rate.
pub const SAMPLE_RATE: u32 = 44100;
/// Samples per feature/label frame.
pub const HOP: usize = 512;
pub const CLIP_SAMPLES: usize = 3 * SAMPLE_RATE as usize;
/// CQT frames of a full 3-second clip.
pub const CLIP_FRAMES: usize = 1 + CLIP_SAMPLES / HOP;

/// Frames produced for `n_samples` of audio under centered framing.
pub fn frame_count(n_samples: usize) -> usize {
    1 + n_samples / HOP
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn clip_frame_count() {
        assert_eq!(CLIP_SAMPLES, 132300);
        assert_eq!(CLIP_FRAMES, 259);
    }
}
