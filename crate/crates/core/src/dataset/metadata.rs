//! Track-level metadata, one comma-separated file per corpus.

use std::collections::HashSet;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrackMetadata {
    pub audio_id: String,
    pub audio_name: String,
    pub mode: String,
    pub time_signature: String,
    pub performer: String,
    pub genre: String,
    /// Seconds.
    pub audio_length: f64,
}

pub fn read_metadata(path: &Path) -> Result<Vec<TrackMetadata>> {
    let mut reader = csv::ReaderBuilder::new()
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_error(path, e))?;
    let mut tracks = Vec::new();
    let mut seen = HashSet::new();
    for (i, row) in reader.deserialize::<TrackMetadata>().enumerate() {
        let track = row.map_err(|e| Error::Parse {
            path: path.display().to_string(),
            line: i + 2,
            message: e.to_string(),
        })?;
        if !seen.insert(track.audio_id.clone()) {
            return Err(Error::Parse {
                path: path.display().to_string(),
                line: i + 2,
                message: format!("duplicate audio_id {:?}", track.audio_id),
            });
        }
        tracks.push(track);
    }
    Ok(tracks)
}

pub fn write_metadata(path: &Path, tracks: &[TrackMetadata]) -> Result<()> {
    let mut writer = csv::Writer::from_path(path).map_err(|e| csv_error(path, e))?;
    for t in tracks {
        writer.serialize(t).map_err(|e| csv_error(path, e))?;
    }
    writer.flush().map_err(|e| Error::io(path, e))
}

fn csv_error(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Serde(format!("{}: {other:?}", path.display())),
    }
}
