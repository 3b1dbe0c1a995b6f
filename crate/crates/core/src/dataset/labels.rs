use ndarray::{s, Array2, ArrayView1};
use serde::{Deserialize, Serialize};

use super::{IptClass, NoteAnnotation, N_CLASSES};
use crate::error::{Error, Result};

/// Multi-hot class-by-frame grid. Row order follows [`IptClass`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FrameLabelMatrix {
    values: Array2<u8>,
    pub hop: usize,
    pub sample_rate: u32,
}

impl FrameLabelMatrix {
    pub fn zeros(n_frames: usize, hop: usize, sample_rate: u32) -> Self {
        FrameLabelMatrix {
            values: Array2::zeros((N_CLASSES, n_frames)),
            hop,
            sample_rate,
        }
    }

    /// Wraps a 7-row 0/1 matrix.
    pub fn from_values(values: Array2<u8>, hop: usize, sample_rate: u32) -> Result<Self> {
        if values.nrows() != N_CLASSES {
            return Err(Error::Shape(format!(
                "label matrix needs {N_CLASSES} rows, got {}",
                values.nrows()
            )));
        }
        if values.iter().any(|&v| v > 1) {
            return Err(Error::Validation("label entries must be 0 or 1".into()));
        }
        Ok(FrameLabelMatrix {
            values,
            hop,
            sample_rate,
        })
    }

    pub fn values(&self) -> &Array2<u8> {
        &self.values
    }

    pub fn n_frames(&self) -> usize {
        self.values.ncols()
    }

    pub fn get(&self, class: IptClass, frame: usize) -> bool {
        self.values[[class.index(), frame]] == 1
    }

    pub fn set(&mut self, class: IptClass, frame: usize, on: bool) {
        self.values[[class.index(), frame]] = on as u8;
    }

    pub fn row(&self, class: IptClass) -> ArrayView1<'_, u8> {
        self.values.row(class.index())
    }

    /// Classes active in one frame.
    pub fn active(&self, frame: usize) -> Vec<IptClass> {
        IptClass::ALL
            .into_iter()
            .filter(|c| self.get(*c, frame))
            .collect()
    }

    /// Start time of frame `t` in seconds.
    pub fn frame_time(&self, t: usize) -> f64 {
        frame_time(t, self.hop, self.sample_rate)
    }

    /// Columns `start..end`, copied.
    pub fn slice_frames(&self, start: usize, end: usize) -> FrameLabelMatrix {
        FrameLabelMatrix {
            values: self.values.slice(s![.., start..end]).to_owned(),
            hop: self.hop,
            sample_rate: self.sample_rate,
        }
    }

    /// Copies into a matrix of `n_frames` columns, zero-filling or truncating at the end.
    pub fn resized(&self, n_frames: usize) -> FrameLabelMatrix {
        let mut out = FrameLabelMatrix::zeros(n_frames, self.hop, self.sample_rate);
        let keep = n_frames.min(self.n_frames());
        out.values
            .slice_mut(s![.., ..keep])
            .assign(&self.values.slice(s![.., ..keep]));
        out
    }

    /// Concatenates matrices along time.
    pub fn concat(parts: &[FrameLabelMatrix]) -> Result<FrameLabelMatrix> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Validation("nothing to concatenate".into()))?;
        let views: Vec<_> = parts.iter().map(|p| p.values.view()).collect();
        let values = ndarray::concatenate(ndarray::Axis(1), &views)
            .map_err(|e| Error::Shape(e.to_string()))?;
        Ok(FrameLabelMatrix {
            values,
            hop: first.hop,
            sample_rate: first.sample_rate,
        })
    }

    pub fn positive_count(&self) -> usize {
        self.values.iter().filter(|&&v| v == 1).count()
    }
}

fn frame_time(t: usize, hop: usize, sample_rate: u32) -> f64 {
    (t * hop) as f64 / sample_rate as f64
}

/// Rasterized labels plus the number of notes that had to be clipped.
#[derive(Clone, Debug)]
pub struct Rasterized {
    pub labels: FrameLabelMatrix,
    pub clipped_notes: usize,
}

/// Frame `t` of class `c` is on iff some note of class `c` has
/// `onset <= t * hop / sample_rate < offset`.
pub fn rasterize_labels(
    notes: &[NoteAnnotation],
    n_frames: usize,
    hop: usize,
    sample_rate: u32,
) -> Result<Rasterized> {
    if n_frames == 0 {
        return Err(Error::Validation("n_frames must be positive".into()));
    }
    if hop == 0 || sample_rate == 0 {
        return Err(Error::Validation("hop and sample rate must be positive".into()));
    }
    let mut labels = FrameLabelMatrix::zeros(n_frames, hop, sample_rate);
    let mut clipped = 0;
    for note in notes {
        let start = first_frame_at_or_after(note.onset, hop, sample_rate);
        let end = first_frame_at_or_after(note.offset, hop, sample_rate);
        if end > n_frames {
            clipped += 1;
        }
        let row = note.ipt.index();
        for t in start.min(n_frames)..end.min(n_frames) {
            labels.values[[row, t]] = 1;
        }
    }
    if clipped > 0 {
        log::warn!(
            "{clipped} note(s) extend past {:.3} s and were clipped to the label grid",
            frame_time(n_frames, hop, sample_rate)
        );
    }
    Ok(Rasterized {
        labels,
        clipped_notes: clipped,
    })
}

// Smallest t with frame_time(t) >= time, using the same float expression as
// the membership rule so boundary frames are decided identically.
fn first_frame_at_or_after(time: f64, hop: usize, sample_rate: u32) -> usize {
    if time <= 0.0 {
        return 0;
    }
    let mut t = (time * sample_rate as f64 / hop as f64).ceil() as usize;
    while t > 0 && frame_time(t - 1, hop, sample_rate) >= time {
        t -= 1;
    }
    while frame_time(t, hop, sample_rate) < time {
        t += 1;
    }
    t
}

/// Maximal runs of 1s in a row as half-open `(start, end)` frame ranges.
pub fn active_runs(row: ArrayView1<'_, u8>) -> Vec<(usize, usize)> {
    let mut runs = Vec::new();
    let mut start = None;
    for (t, &v) in row.iter().enumerate() {
        match (v == 1, start) {
            (true, None) => start = Some(t),
            (false, Some(s0)) => {
                runs.push((s0, t));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s0) = start {
        runs.push((s0, row.len()));
    }
    runs
}
