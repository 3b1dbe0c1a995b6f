//! Corpus layout on disk and the path from a track to model inputs and
//! back to track-level predictions.
//!
//! ```text
//! <root>/metadata.csv
//! <root>/annotations/<audio_id>.tsv
//! <root>/audio/<audio_id>.wav
//! ```

use std::path::{Path, PathBuf};

use ndarray::{concatenate, s, Array2, Axis};

use crate::dataset::{
    rasterize_labels, read_annotations, read_metadata, FrameLabelMatrix, NoteAnnotation, TrackMetadata,
};
use crate::error::{Error, Result};
use crate::features::{clip_3s, clip_windows, frame_count, load_audio, Cqt, FeatureCache, CLIP_SAMPLES, HOP, SAMPLE_RATE};
use crate::model::{input_batch, MultiScaleNet, Prediction};

#[derive(Clone, Debug)]
pub struct CorpusLayout {
    pub root: PathBuf,
}

impl CorpusLayout {
    pub fn new(root: impl Into<PathBuf>) -> Self {
        CorpusLayout { root: root.into() }
    }

    pub fn metadata_path(&self) -> PathBuf {
        self.root.join("metadata.csv")
    }

    pub fn annotation_path(&self, audio_id: &str) -> PathBuf {
        self.root.join("annotations").join(format!("{audio_id}.tsv"))
    }

    pub fn audio_path(&self, audio_id: &str) -> PathBuf {
        self.root.join("audio").join(format!("{audio_id}.wav"))
    }

    pub fn metadata(&self) -> Result<Vec<TrackMetadata>> {
        read_metadata(&self.metadata_path())
    }

    /// Metadata and notes of every track, without audio.
    pub fn annotated_tracks(&self) -> Result<Vec<(TrackMetadata, Vec<NoteAnnotation>)>> {
        self.metadata()?
            .into_iter()
            .map(|m| {
                let notes = read_annotations(&self.annotation_path(&m.audio_id))?;
                Ok((m, notes))
            })
            .collect()
    }

    pub fn load_track(&self, meta: &TrackMetadata) -> Result<Track> {
        let notes = read_annotations(&self.annotation_path(&meta.audio_id))?;
        let samples = load_audio(&self.audio_path(&meta.audio_id))?;
        Track::new(meta.clone(), notes, samples)
    }
}

/// A loaded track with labels on the full frame grid.
#[derive(Clone, Debug)]
pub struct Track {
    pub meta: TrackMetadata,
    pub notes: Vec<NoteAnnotation>,
    pub samples: Vec<f32>,
    pub labels: FrameLabelMatrix,
}

impl Track {
    pub fn new(meta: TrackMetadata, notes: Vec<NoteAnnotation>, samples: Vec<f32>) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Validation(format!("{}: empty audio", meta.audio_id)));
        }
        let raster = rasterize_labels(&notes, frame_count(samples.len()), HOP, SAMPLE_RATE)?;
        Ok(Track {
            meta,
            notes,
            samples,
            labels: raster.labels,
        })
    }

    pub fn id(&self) -> &str {
        &self.meta.audio_id
    }
}

/// One 3 s training/evaluation example.
#[derive(Clone, Debug)]
pub struct ClipExample {
    pub source_id: String,
    pub start_offset: f64,
    /// CQT magnitudes, 88 x 259.
    pub features: Array2<f32>,
    pub labels: FrameLabelMatrix,
    /// False on zero-padding frames past the end of the track.
    pub valid: Vec<bool>,
}

impl ClipExample {
    pub fn n_frames(&self) -> usize {
        self.labels.n_frames()
    }
}

pub fn track_examples(track: &Track, cqt: &Cqt, cache: Option<&FeatureCache>) -> Result<Vec<ClipExample>> {
    clip_3s(&track.samples, &track.labels, track.id())?
        .into_iter()
        .map(|c| {
            let spec = match cache {
                Some(cache) => cache.get_or_compute(&c.clip, cqt)?,
                None => cqt.compute(&c.clip.samples)?,
            };
            Ok(ClipExample {
                source_id: c.clip.source_id,
                start_offset: c.clip.start_offset,
                features: spec.magnitudes,
                labels: c.labels,
                valid: c.valid,
            })
        })
        .collect()
}

/// Eval-mode predictions for examples, `batch_size` at a time.
pub fn predict_examples(net: &MultiScaleNet, examples: &[&ClipExample], batch_size: usize) -> Result<Vec<Prediction>> {
    let mut out = Vec::with_capacity(examples.len());
    for chunk in examples.chunks(batch_size.max(1)) {
        let views: Vec<_> = chunk.iter().map(|e| e.features.view()).collect();
        out.extend(net.predict_batch(input_batch(&views)?)?);
    }
    Ok(out)
}

/// Likelihoods for every frame of a waveform: the signal is cut into 3 s
/// clips, each clip is predicted independently and the valid columns are
/// joined back together.
pub fn predict_waveform(net: &MultiScaleNet, samples: &[f32], cqt: &Cqt, batch_size: usize) -> Result<Prediction> {
    let min_len = cqt.params().max_window();
    if samples.len() < min_len {
        return Err(Error::Validation(format!(
            "audio has {} samples; at least {min_len} ({:.3} s) are needed for the lowest CQT bin",
            samples.len(),
            min_len as f64 / SAMPLE_RATE as f64
        )));
    }
    let windows = clip_windows(samples.len());
    let mut parts = Vec::with_capacity(windows.len());
    for chunk in windows.chunks(batch_size.max(1)) {
        let specs = chunk
            .iter()
            .map(|w| {
                let end = (w.start_sample + CLIP_SAMPLES).min(samples.len());
                let mut clip = samples[w.start_sample..end].to_vec();
                clip.resize(CLIP_SAMPLES, 0.0);
                cqt.compute(&clip).map(|s| s.magnitudes)
            })
            .collect::<Result<Vec<_>>>()?;
        let views: Vec<_> = specs.iter().map(|s| s.view()).collect();
        for (w, p) in chunk.iter().zip(net.predict_batch(input_batch(&views)?)?) {
            parts.push(p.likelihoods.slice(s![.., ..w.n_frames()]).to_owned());
        }
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let joined = concatenate(Axis(1), &views).map_err(|e| Error::Shape(e.to_string()))?;
    debug_assert_eq!(joined.ncols(), frame_count(samples.len()));
    Prediction::new(joined)
}

/// Loads every listed track, returning the ones that failed separately.
pub fn load_tracks(layout: &CorpusLayout, metas: &[TrackMetadata]) -> (Vec<Track>, Vec<(String, Error)>) {
    let mut tracks = Vec::new();
    let mut failed = Vec::new();
    for m in metas {
        match layout.load_track(m) {
            Ok(t) => tracks.push(t),
            Err(e) => failed.push((m.audio_id.clone(), e)),
        }
    }
    (tracks, failed)
}

/// Metadata entries for `ids`, in the order given.
pub fn select_tracks(metas: &[TrackMetadata], ids: &[String]) -> Result<Vec<TrackMetadata>> {
    ids.iter()
        .map(|id| {
            metas
                .iter()
                .find(|m| &m.audio_id == id)
                .cloned()
                .ok_or_else(|| Error::Validation(format!("track {id:?} is not in the corpus metadata")))
        })
        .collect()
}

pub fn is_corpus(root: &Path) -> bool {
    CorpusLayout::new(root).metadata_path().is_file()
}
