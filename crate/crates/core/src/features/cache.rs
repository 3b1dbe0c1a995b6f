//! On-disk CQT cache: one little-endian `f32` array per clip plus a
//! `manifest.csv` listing `file,source_id,start_offset,rows,cols`.

use std::fs::OpenOptions;
use std::io::Write;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use super::{AudioClip, Cqt, CqtSpectrogram};
use crate::error::{Error, Result};

#[derive(Clone, Debug)]
pub struct FeatureCache {
    dir: PathBuf,
}

impl FeatureCache {
    pub fn open(dir: &Path) -> Result<Self> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        Ok(FeatureCache {
            dir: dir.to_path_buf(),
        })
    }

    fn file_name(clip: &AudioClip) -> String {
        let id: String = clip
            .source_id
            .chars()
            .map(|c| if c.is_ascii_alphanumeric() || c == '-' || c == '_' { c } else { '_' })
            .collect();
        let start = (clip.start_offset * clip.sample_rate as f64).round() as u64;
        format!("{id}_{start}.f32")
    }

    pub fn get_or_compute(&self, clip: &AudioClip, cqt: &Cqt) -> Result<CqtSpectrogram> {
        let name = Self::file_name(clip);
        let path = self.dir.join(&name);
        let rows = cqt.params().n_bins;
        if let Ok(bytes) = std::fs::read(&path) {
            if bytes.len() % (4 * rows) == 0 && !bytes.is_empty() {
                let values: Vec<f32> = bytes
                    .chunks_exact(4)
                    .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
                    .collect();
                let cols = values.len() / rows;
                let magnitudes = Array2::from_shape_vec((rows, cols), values)
                    .map_err(|e| Error::Shape(e.to_string()))?;
                return Ok(CqtSpectrogram {
                    magnitudes,
                    hop: cqt.params().hop,
                    fmin: cqt.params().fmin,
                    bins_per_octave: cqt.params().bins_per_octave,
                });
            }
        }
        let spec = cqt.compute(&clip.samples)?;
        let bytes: Vec<u8> = spec.magnitudes.iter().flat_map(|v| v.to_le_bytes()).collect();
        std::fs::write(&path, bytes).map_err(|e| Error::io(&path, e))?;
        let manifest = self.dir.join("manifest.csv");
        let fresh = !manifest.exists();
        let mut f = OpenOptions::new()
            .create(true)
            .append(true)
            .open(&manifest)
            .map_err(|e| Error::io(&manifest, e))?;
        let mut line = String::new();
        if fresh {
            line.push_str("file,source_id,start_offset,rows,cols\n");
        }
        line.push_str(&format!(
            "{name},{},{},{},{}\n",
            clip.source_id,
            clip.start_offset,
            spec.n_bins(),
            spec.n_frames()
        ));
        f.write_all(line.as_bytes()).map_err(|e| Error::io(&manifest, e))?;
        Ok(spec)
    }
}
