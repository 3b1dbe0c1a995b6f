//! Frame activation files written by `predict` and read by `eval --predictions`.
//!
//! Tab-separated with a header: `frame_time_s`, one `p_<class>` likelihood
//! column per class, then one `<class>` 0/1 column per class, classes in the
//! fixed order.

use std::fmt::Write as _;
use std::path::Path;

use anyhow::{bail, Context};
use ipt_core::dataset::{FrameLabelMatrix, IptClass, N_CLASSES};
use ipt_core::features::{HOP, SAMPLE_RATE};
use ndarray::Array2;

pub fn header() -> String {
    let mut cols = vec!["frame_time_s".to_string()];
    cols.extend(IptClass::ALL.iter().map(|c| format!("p_{}", c.short_name())));
    cols.extend(IptClass::ALL.iter().map(|c| c.short_name().to_string()));
    cols.join("\t")
}

pub fn format_activations(likelihoods: &Array2<f64>, active: &FrameLabelMatrix) -> String {
    let mut out = header();
    out.push('\n');
    for t in 0..active.n_frames() {
        let _ = write!(out, "{:.6}", active.frame_time(t));
        for c in 0..N_CLASSES {
            let _ = write!(out, "\t{:.6}", likelihoods[[c, t]]);
        }
        for c in 0..N_CLASSES {
            let _ = write!(out, "\t{}", active.values()[[c, t]]);
        }
        out.push('\n');
    }
    out
}

/// Writes through a temporary sibling so a failure never leaves a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> anyhow::Result<()> {
    let name = path
        .file_name()
        .with_context(|| format!("{} is not a file path", path.display()))?;
    let tmp = path.with_file_name(format!(".{}.tmp", name.to_string_lossy()));
    std::fs::write(&tmp, bytes).map_err(|e| ipt_core::Error::io(&tmp, e))?;
    if let Err(e) = std::fs::rename(&tmp, path) {
        let _ = std::fs::remove_file(&tmp);
        return Err(ipt_core::Error::io(path, e).into());
    }
    Ok(())
}

/// Reads an activation file: binary activations plus likelihoods when every
/// likelihood column is present.
pub fn read_activations(path: &Path) -> anyhow::Result<(FrameLabelMatrix, Option<Array2<f64>>)> {
    let text = std::fs::read_to_string(path).map_err(|e| ipt_core::Error::io(path, e))?;
    let mut lines = text.lines().enumerate().filter(|(_, l)| !l.trim().is_empty());
    let Some((_, head)) = lines.next() else {
        bail!(parse(path, 1, "empty file"));
    };
    let names: Vec<&str> = head.split('\t').map(str::trim).collect();
    let find = |name: &str| names.iter().position(|n| *n == name);
    let binary: Vec<usize> = IptClass::ALL
        .iter()
        .map(|c| find(c.short_name()).ok_or_else(|| parse(path, 1, &format!("missing column {:?}", c.short_name()))))
        .collect::<Result<_, _>>()?;
    let prob: Option<Vec<usize>> = IptClass::ALL.iter().map(|c| find(&format!("p_{}", c.short_name()))).collect();

    let mut active: Vec<[u8; N_CLASSES]> = Vec::new();
    let mut likelihoods: Vec<[f64; N_CLASSES]> = Vec::new();
    for (i, line) in lines {
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != names.len() {
            bail!(parse(path, i + 1, &format!("{} fields, header has {}", fields.len(), names.len())));
        }
        let mut row = [0u8; N_CLASSES];
        for (c, &col) in binary.iter().enumerate() {
            row[c] = match fields[col] {
                "0" => 0,
                "1" => 1,
                other => bail!(parse(path, i + 1, &format!("activation {other:?} is not 0 or 1"))),
            };
        }
        active.push(row);
        if let Some(cols) = &prob {
            let mut p = [0.0; N_CLASSES];
            for (c, &col) in cols.iter().enumerate() {
                p[c] = fields[col]
                    .parse()
                    .map_err(|_| parse(path, i + 1, &format!("likelihood {:?} is not a number", fields[col])))?;
            }
            likelihoods.push(p);
        }
    }
    let n = active.len();
    let values = Array2::from_shape_fn((N_CLASSES, n), |(c, t)| active[t][c]);
    let labels = FrameLabelMatrix::from_values(values, HOP, SAMPLE_RATE)?;
    let probs = prob.map(|_| Array2::from_shape_fn((N_CLASSES, n), |(c, t)| likelihoods[t][c]));
    Ok((labels, probs))
}

fn parse(path: &Path, line: usize, message: &str) -> ipt_core::Error {
    ipt_core::Error::Parse {
        path: path.display().to_string(),
        line,
        message: message.to_string(),
    }
}
