use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{IptClass, NoteAnnotation, N_CLASSES};

/// Duration statistics (seconds) of one class.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ClassStats {
    pub count: usize,
    pub sum: f64,
    pub mean: Option<f64>,
    pub max: Option<f64>,
    pub min: Option<f64>,
}

pub fn corpus_stats(notes: &[NoteAnnotation]) -> [ClassStats; N_CLASSES] {
    let mut stats = [ClassStats::default(); N_CLASSES];
    for note in notes {
        let d = note.duration();
        let s = &mut stats[note.ipt.index()];
        s.count += 1;
        s.sum += d;
        s.max = Some(s.max.map_or(d, |m| m.max(d)));
        s.min = Some(s.min.map_or(d, |m| m.min(d)));
    }
    for s in &mut stats {
        if s.count > 0 {
            s.mean = Some(s.sum / s.count as f64);
        }
    }
    stats
}

/// Plain-text table: `IPT  num  sum  mean  max  min`, two decimals, `-` for absent values.
pub fn format_stats_table(stats: &[ClassStats; N_CLASSES]) -> String {
    let cell = |v: Option<f64>| v.map_or_else(|| "-".to_string(), |x| format!("{x:.2}"));
    let mut out = String::new();
    let _ = writeln!(
        out,
        "{:<10} {:>7} {:>10} {:>6} {:>6} {:>6}",
        "IPT", "num", "sum", "mean", "max", "min"
    );
    for class in IptClass::ALL {
        let s = &stats[class.index()];
        let _ = writeln!(
            out,
            "{:<10} {:>7} {:>10.2} {:>6} {:>6} {:>6}",
            class.short_name(),
            s.count,
            s.sum,
            cell(s.mean),
            cell(s.max),
            cell(s.min)
        );
    }
    out
}
