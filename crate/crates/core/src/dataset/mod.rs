//! Annotations, track metadata and frame-level label matrices.
//!
//! Notes are rasterized onto the CQT frame grid so that every feature column
//! has a matching multi-hot label column.

mod annotations;
pub mod fixture;
mod labels;
mod metadata;
mod split;
mod stats;

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

pub use annotations::{parse_annotations, read_annotations, serialize_annotations, write_annotations};
pub use labels::{active_runs, rasterize_labels, FrameLabelMatrix, Rasterized};
pub use metadata::{read_metadata, write_metadata, TrackMetadata};
pub use split::{split_corpus, split_deviation, CorpusSplit, SplitSizes};
pub use stats::{corpus_stats, format_stats_table, ClassStats};

/// Number of playing-technique classes.
pub const N_CLASSES: usize = 7;

/// Lowest and highest MIDI pitch of the 88-key range.
pub const MIDI_MIN: u8 = 21;
pub const MIDI_MAX: u8 = 108;

/// Playing-technique classes in their fixed row order.
///
/// The discriminant is the row index used by label matrices, predictions,
/// confusion matrices and reports.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IptClass {
    Vibrato = 0,
    UpwardPortamento = 1,
    DownwardPortamento = 2,
    PointNote = 3,
    Glissando = 4,
    Tremolo = 5,
    Plucks = 6,
}

impl IptClass {
    pub const ALL: [IptClass; N_CLASSES] = [
        IptClass::Vibrato,
        IptClass::UpwardPortamento,
        IptClass::DownwardPortamento,
        IptClass::PointNote,
        IptClass::Glissando,
        IptClass::Tremolo,
        IptClass::Plucks,
    ];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn from_index(index: usize) -> Option<IptClass> {
        Self::ALL.get(index).copied()
    }

    /// Canonical snake-case label.
    pub fn name(self) -> &'static str {
        match self {
            IptClass::Vibrato => "vibrato",
            IptClass::UpwardPortamento => "upward_portamento",
            IptClass::DownwardPortamento => "downward_portamento",
            IptClass::PointNote => "point_note",
            IptClass::Glissando => "glissando",
            IptClass::Tremolo => "tremolo",
            IptClass::Plucks => "plucks",
        }
    }

    /// Abbreviation used in tables and figures.
    pub fn short_name(self) -> &'static str {
        match self {
            IptClass::Vibrato => "vibrato",
            IptClass::UpwardPortamento => "UP",
            IptClass::DownwardPortamento => "DP",
            IptClass::PointNote => "PN",
            IptClass::Glissando => "glissando",
            IptClass::Tremolo => "tremolo",
            IptClass::Plucks => "plucks",
        }
    }

    fn aliases(self) -> &'static [&'static str] {
        match self {
            IptClass::Vibrato => &["颤音", "chanyin"],
            IptClass::UpwardPortamento => &["上滑音", "shanghuayin", "UP"],
            IptClass::DownwardPortamento => &["下滑音", "xiahuayin", "DP"],
            IptClass::PointNote => &["点音", "dianyin", "PN"],
            IptClass::Glissando => &["刮奏", "花指", "guazou", "huazhi"],
            IptClass::Tremolo => &["摇指", "yaozhi"],
            IptClass::Plucks => &["勾", "打", "抹", "托", "撮", "gou", "da", "mo", "tuo", "cuo"],
        }
    }

    pub fn legal_labels() -> String {
        Self::ALL.iter().map(|c| c.name()).collect::<Vec<_>>().join(", ")
    }
}

impl fmt::Display for IptClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for IptClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        Self::ALL
            .into_iter()
            .find(|c| c.name() == s || c.aliases().contains(&s))
            .ok_or_else(|| Error::UnknownLabel {
                label: s.to_string(),
                expected: Self::legal_labels(),
            })
    }
}

/// One annotated note.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct NoteAnnotation {
    pub onset: f64,
    pub offset: f64,
    pub pitch: u8,
    pub ipt: IptClass,
}

impl NoteAnnotation {
    pub fn new(onset: f64, offset: f64, pitch: u8, ipt: IptClass) -> Result<Self> {
        let note = NoteAnnotation {
            onset,
            offset,
            pitch,
            ipt,
        };
        note.validate()?;
        Ok(note)
    }

    pub fn validate(&self) -> Result<()> {
        if !self.onset.is_finite() || !self.offset.is_finite() {
            return Err(Error::Validation("note times must be finite".into()));
        }
        if self.onset < 0.0 {
            return Err(Error::Validation(format!("negative onset {}", self.onset)));
        }
        if self.offset <= self.onset {
            return Err(Error::Validation(format!(
                "offset {} is not after onset {}",
                self.offset, self.onset
            )));
        }
        if !(MIDI_MIN..=MIDI_MAX).contains(&self.pitch) {
            return Err(Error::Validation(format!(
                "pitch {} outside MIDI range {MIDI_MIN}..={MIDI_MAX}",
                self.pitch
            )));
        }
        Ok(())
    }

    pub fn duration(&self) -> f64 {
        self.offset - self.onset
    }
}

/// MIDI note number nearest to `freq`, clamped to the piano range.
pub fn midi_from_hz(freq: f64) -> u8 {
    let midi = (69.0 + 12.0 * (freq / 440.0).log2()).round();
    midi.clamp(MIDI_MIN as f64, MIDI_MAX as f64) as u8
}

pub fn hz_from_midi(midi: f64) -> f64 {
    440.0 * 2f64.powf((midi - 69.0) / 12.0)
}
