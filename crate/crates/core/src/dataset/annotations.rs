//! Tab-separated note annotations: `onset_s  offset_s  midi_pitch  ipt_label`,
//! one note per row, optional header row.

use std::fmt::Write as _;
use std::path::Path;

use super::{IptClass, NoteAnnotation};
use crate::error::{Error, Result};

const HEADER: &str = "onset_s\toffset_s\tmidi_pitch\tipt_label";

/// Parses annotation text; `source` names the input in error messages.
///
/// The result is sorted by onset (ties broken by offset, class, pitch).
pub fn parse_annotations(text: &str, source: &str) -> Result<Vec<NoteAnnotation>> {
    let mut notes = Vec::new();
    let parse_err = |line: usize, message: String| Error::Parse {
        path: source.to_string(),
        line,
        message,
    };

    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        if line.trim().is_empty() || line.trim_start().starts_with('#') {
            continue;
        }
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if notes.is_empty() && fields[0].parse::<f64>().is_err() && looks_like_header(&fields) {
            continue;
        }
        if fields.len() != 4 {
            return Err(parse_err(
                line_no,
                format!("expected 4 tab-separated columns, found {}", fields.len()),
            ));
        }
        let onset: f64 = fields[0]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad onset {:?}", fields[0])))?;
        let offset: f64 = fields[1]
            .parse()
            .map_err(|_| parse_err(line_no, format!("bad offset {:?}", fields[1])))?;
        let pitch = parse_pitch(fields[2])
            .ok_or_else(|| parse_err(line_no, format!("bad pitch {:?}", fields[2])))?;
        let ipt: IptClass = fields[3].parse().map_err(|e| match e {
            Error::UnknownLabel { label, expected } => parse_err(
                line_no,
                format!("unknown label {label:?}; legal labels: {expected}"),
            ),
            other => other,
        })?;
        let note = NoteAnnotation {
            onset,
            offset,
            pitch,
            ipt,
        };
        note.validate()
            .map_err(|e| parse_err(line_no, e.to_string()))?;
        notes.push(note);
    }

    notes.sort_by(|a, b| {
        a.onset
            .total_cmp(&b.onset)
            .then(a.offset.total_cmp(&b.offset))
            .then(a.ipt.cmp(&b.ipt))
            .then(a.pitch.cmp(&b.pitch))
    });
    Ok(notes)
}

fn looks_like_header(fields: &[&str]) -> bool {
    fields.iter().all(|f| f.parse::<f64>().is_err() || f.is_empty())
        || fields[0].to_ascii_lowercase().contains("onset")
}

// Pitches are integers, but exporters sometimes write "69.0".
fn parse_pitch(field: &str) -> Option<u8> {
    if let Ok(p) = field.parse::<u8>() {
        return Some(p);
    }
    let f: f64 = field.parse().ok()?;
    (f.fract() == 0.0 && (0.0..=255.0).contains(&f)).then_some(f as u8)
}

pub fn read_annotations(path: &Path) -> Result<Vec<NoteAnnotation>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations(&text, &path.display().to_string())
}

/// Writes notes with a header row. Times use the shortest exact decimal form,
/// so parsing the output reproduces the input bit for bit.
pub fn serialize_annotations(notes: &[NoteAnnotation]) -> String {
    let mut out = String::with_capacity(32 * (notes.len() + 1));
    out.push_str(HEADER);
    out.push('\n');
    for n in notes {
        let _ = writeln!(out, "{}\t{}\t{}\t{}", n.onset, n.offset, n.pitch, n.ipt.name());
    }
    out
}

pub fn write_annotations(path: &Path, notes: &[NoteAnnotation]) -> Result<()> {
    std::fs::write(path, serialize_annotations(notes)).map_err(|e| Error::io(path, e))
}
