use super::{frame_count, CLIP_FRAMES, CLIP_SAMPLES, HOP, SAMPLE_RATE};
use crate::dataset::FrameLabelMatrix;
use crate::error::{Error, Result};

/// A mono 44.1 kHz excerpt of a track.
#[derive(Clone, Debug, PartialEq)]
pub struct AudioClip {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
    pub source_id: String,
    /// Seconds from the start of the track.
    pub start_offset: f64,
}

/// A zero-padded 3 s clip, its 259-frame label matrix and the mask of frames
/// that belong to the track (padding frames are invalid).
#[derive(Clone, Debug)]
pub struct LabeledClip {
    pub clip: AudioClip,
    pub labels: FrameLabelMatrix,
    pub valid: Vec<bool>,
}

impl LabeledClip {
    pub fn valid_frames(&self) -> usize {
        self.valid.iter().filter(|v| **v).count()
    }
}

/// Sample and track-frame extent of one clip.
///
/// Track frame `f` (centered at sample `f * HOP`) belongs to the clip whose
/// window contains that sample; the last clip also takes the frame centered
/// exactly at the end of the track.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct ClipWindow {
    pub start_sample: usize,
    pub frame_start: usize,
    pub frame_end: usize,
}

impl ClipWindow {
    pub fn n_frames(&self) -> usize {
        self.frame_end - self.frame_start
    }
}

pub fn clip_windows(n_samples: usize) -> Vec<ClipWindow> {
    if n_samples == 0 {
        return Vec::new();
    }
    let total_frames = frame_count(n_samples);
    let n_clips = n_samples.div_ceil(CLIP_SAMPLES);
    (0..n_clips)
        .map(|i| {
            let start = i * CLIP_SAMPLES;
            let frame_start = start.div_ceil(HOP).min(total_frames);
            let frame_end = if i + 1 == n_clips {
                total_frames
            } else {
                ((i + 1) * CLIP_SAMPLES).div_ceil(HOP).min(total_frames)
            };
            ClipWindow {
                start_sample: start,
                frame_start,
                frame_end,
            }
        })
        .collect()
}

/// Cuts a track into consecutive 3 s clips. The final remainder is kept and
/// zero-padded; its padding frames carry zero labels and are marked invalid.
pub fn clip_3s(waveform: &[f32], labels: &FrameLabelMatrix, source_id: &str) -> Result<Vec<LabeledClip>> {
    if waveform.is_empty() {
        return Err(Error::Validation(format!("{source_id}: empty waveform")));
    }
    if labels.hop != HOP || labels.sample_rate != SAMPLE_RATE {
        return Err(Error::Validation(format!(
            "{source_id}: labels rasterized at hop {} / {} Hz, expected {HOP} / {SAMPLE_RATE}",
            labels.hop, labels.sample_rate
        )));
    }
    let expected = frame_count(waveform.len());
    if labels.n_frames().abs_diff(expected) > 1 {
        return Err(Error::Validation(format!(
            "{source_id}: {} label frames for {} samples ({expected} frames expected)",
            labels.n_frames(),
            waveform.len()
        )));
    }
    let labels = labels.resized(expected);

    Ok(clip_windows(waveform.len())
        .into_iter()
        .map(|w| {
            let end = (w.start_sample + CLIP_SAMPLES).min(waveform.len());
            let mut samples = waveform[w.start_sample..end].to_vec();
            samples.resize(CLIP_SAMPLES, 0.0);
            let n = w.n_frames();
            let clip_labels = labels.slice_frames(w.frame_start, w.frame_end).resized(CLIP_FRAMES);
            let valid = (0..CLIP_FRAMES).map(|t| t < n).collect();
            LabeledClip {
                clip: AudioClip {
                    samples,
                    sample_rate: SAMPLE_RATE,
                    source_id: source_id.to_string(),
                    start_offset: w.start_sample as f64 / SAMPLE_RATE as f64,
                },
                labels: clip_labels,
                valid,
            }
        })
        .collect())
}
