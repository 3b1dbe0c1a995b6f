use std::path::Path;

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use super::{frame_counts, normalize_rows, Counts, FrameCounts, FrameMetrics, MlcmMatrix, Scores};
use crate::dataset::{FrameLabelMatrix, IptClass};
use crate::error::{Error, Result};
use crate::features::Cqt;
use crate::model::{binarize, MultiScaleNet};
use crate::pipeline::{predict_waveform, Track};

/// Predictions and ground truth of one track, on the full frame grid.
#[derive(Clone, Debug)]
pub struct TrackEvaluation {
    pub audio_id: String,
    /// Absent when only binary activations were supplied.
    pub likelihoods: Option<Array2<f64>>,
    pub predicted: FrameLabelMatrix,
    pub truth: FrameLabelMatrix,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ClassReport {
    pub class: IptClass,
    #[serde(flatten)]
    pub scores: Scores,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackReport {
    pub audio_id: String,
    pub n_frames: usize,
    #[serde(flatten)]
    pub scores: Scores,
    #[serde(flatten)]
    pub counts: Counts,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlcmReport {
    pub rows: Vec<String>,
    pub columns: Vec<String>,
    pub counts: Vec<Vec<u64>>,
    pub row_proportions: Vec<Vec<f64>>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SkippedTrack {
    pub audio_id: String,
    pub reason: String,
}

/// Everything an evaluation run reports. Per-track entries are sorted by id.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvaluationReport {
    pub config_hash: Option<String>,
    pub split: String,
    pub threshold: f64,
    /// Averaging used for `overall`.
    pub averaging: String,
    pub overall: Scores,
    pub macro_average: Scores,
    pub counts: Counts,
    pub per_class: Vec<ClassReport>,
    pub mlcm: MlcmReport,
    pub per_track: Vec<TrackReport>,
    pub skipped: Vec<SkippedTrack>,
}

impl EvaluationReport {
    pub fn from_tracks(evals: &[TrackEvaluation], split: &str, threshold: f64, config_hash: Option<String>) -> Result<Self> {
        let mut sorted: Vec<&TrackEvaluation> = evals.iter().collect();
        sorted.sort_by(|a, b| a.audio_id.cmp(&b.audio_id));
        let mut total = FrameCounts::default();
        let mut matrix = MlcmMatrix::default();
        let mut per_track = Vec::with_capacity(sorted.len());
        for e in sorted {
            let c = frame_counts(&e.predicted, &e.truth, None)?;
            matrix.accumulate(&e.predicted, &e.truth, None)?;
            total.add(&c);
            per_track.push(TrackReport {
                audio_id: e.audio_id.clone(),
                n_frames: e.truth.n_frames(),
                scores: c.total.scores(),
                counts: c.total,
            });
        }
        let metrics: FrameMetrics = total.metrics();
        let mut rows: Vec<String> = IptClass::ALL.iter().map(|c| c.name().to_string()).collect();
        let mut columns = rows.clone();
        rows.push("NTL".into());
        columns.push("NPL".into());
        let to_rows = |a: &Array2<f64>| a.rows().into_iter().map(|r| r.to_vec()).collect();
        Ok(EvaluationReport {
            config_hash,
            split: split.to_string(),
            threshold,
            averaging: "micro".into(),
            overall: metrics.micro,
            macro_average: metrics.macro_avg,
            counts: total.total,
            per_class: IptClass::ALL
                .iter()
                .map(|&c| ClassReport {
                    class: c,
                    scores: metrics.per_class[c.index()],
                    counts: total.per_class[c.index()],
                })
                .collect(),
            mlcm: MlcmReport {
                rows,
                columns,
                counts: matrix.counts.rows().into_iter().map(|r| r.to_vec()).collect(),
                row_proportions: to_rows(&normalize_rows(&matrix)),
            },
            per_track,
            skipped: Vec::new(),
        })
    }

    pub fn mlcm_matrix(&self) -> Result<MlcmMatrix> {
        let n = self.mlcm.counts.len();
        let flat: Vec<u64> = self.mlcm.counts.iter().flatten().copied().collect();
        let counts = Array2::from_shape_vec((n, n), flat).map_err(|e| Error::Shape(e.to_string()))?;
        Ok(MlcmMatrix { counts })
    }

    pub fn to_json(&self) -> Result<String> {
        serde_json::to_string_pretty(self).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }
}

/// Predicts every track with `net` and scores it at `threshold`.
pub fn evaluate_tracks(
    net: &MultiScaleNet,
    tracks: &[Track],
    cqt: &Cqt,
    threshold: f64,
    batch_size: usize,
) -> Result<Vec<TrackEvaluation>> {
    tracks
        .iter()
        .map(|t| {
            let p = predict_waveform(net, &t.samples, cqt, batch_size)?;
            Ok(TrackEvaluation {
                audio_id: t.id().to_string(),
                predicted: binarize(&p, threshold)?,
                likelihoods: Some(p.likelihoods),
                truth: t.labels.clone(),
            })
        })
        .collect()
}
