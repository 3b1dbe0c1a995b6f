//! Raster figures: confusion-matrix heatmap and prediction piano roll.

use std::path::Path;

use image::{Rgb, RgbImage};
use ndarray::Array2;

use super::{normalize_rows, MlcmMatrix};
use crate::dataset::{FrameLabelMatrix, N_CLASSES};
use crate::error::{Error, Result};

const CELL: u32 = 48;
const LANE: u32 = 10;
const GAP: u32 = 4;

fn save(img: &RgbImage, path: &Path) -> Result<()> {
    img.save_with_format(path, image::ImageFormat::Png)
        .map_err(|e| Error::io(path, std::io::Error::other(e)))
}

/// White at 0, dark blue at 1.
fn shade(v: f64) -> Rgb<u8> {
    let v = v.clamp(0.0, 1.0);
    let mix = |lo: f64, hi: f64| (lo + (hi - lo) * v).round() as u8;
    Rgb([mix(255.0, 8.0), mix(255.0, 48.0), mix(255.0, 107.0)])
}

/// Row-normalized MLCM, one square per cell; rows are true classes then NTL,
/// columns predicted classes then NPL. Grid lines separate the NTL/NPL slots.
pub fn mlcm_heatmap(m: &MlcmMatrix, path: &Path) -> Result<()> {
    let props = normalize_rows(m);
    let n = props.nrows() as u32;
    let mut img = RgbImage::from_pixel(n * CELL, n * CELL, Rgb([255, 255, 255]));
    for ((r, c), &v) in props.indexed_iter() {
        let color = shade(v);
        for y in 0..CELL {
            for x in 0..CELL {
                let border = x == 0 || y == 0 || (r + 1 == n as usize && y == CELL - 1) || (c + 1 == n as usize && x == CELL - 1);
                let px = if border { Rgb([160, 160, 160]) } else { color };
                img.put_pixel(c as u32 * CELL + x, r as u32 * CELL + y, px);
            }
        }
    }
    save(&img, path)
}

/// One band per class, top to bottom in class order. Each band has the
/// ground truth (black when active) above the likelihood (blue intensity,
/// or binary activations when no likelihoods are given). One pixel column
/// per frame.
pub fn piano_roll(truth: &FrameLabelMatrix, likelihoods: Option<&Array2<f64>>, predicted: &FrameLabelMatrix, path: &Path) -> Result<()> {
    let t = truth.n_frames() as u32;
    if t == 0 {
        return Err(Error::Validation("cannot draw an empty piano roll".into()));
    }
    if predicted.n_frames() != truth.n_frames() || likelihoods.is_some_and(|l| l.dim() != (N_CLASSES, truth.n_frames())) {
        return Err(Error::Shape("piano roll inputs differ in length".into()));
    }
    let band = 2 * LANE + GAP;
    let mut img = RgbImage::from_pixel(t, N_CLASSES as u32 * band, Rgb([255, 255, 255]));
    for c in 0..N_CLASSES {
        let top = c as u32 * band;
        for f in 0..t {
            let on = truth.values()[[c, f as usize]] == 1;
            let p = match likelihoods {
                Some(l) => l[[c, f as usize]],
                None => f64::from(predicted.values()[[c, f as usize]]),
            };
            for y in 0..LANE {
                if on {
                    img.put_pixel(f, top + y, Rgb([0, 0, 0]));
                }
                img.put_pixel(f, top + LANE + y, shade(p));
            }
        }
    }
    save(&img, path)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::IptClass;
    use crate::features::{HOP, SAMPLE_RATE};

    #[test]
    fn figures_are_written() {
        let dir = tempfile::tempdir().unwrap();
        let mut truth = FrameLabelMatrix::zeros(30, HOP, SAMPLE_RATE);
        truth.set(IptClass::Vibrato, 3, true);
        let mut m = MlcmMatrix::default();
        m.accumulate(&truth, &truth, None).unwrap();
        let heat = dir.path().join("mlcm.png");
        mlcm_heatmap(&m, &heat).unwrap();
        let img = image::open(&heat).unwrap().to_rgb8();
        assert_eq!(img.dimensions(), (8 * CELL, 8 * CELL));
        // The vibrato diagonal cell is fully saturated.
        assert_eq!(*img.get_pixel(CELL / 2, CELL / 2), shade(1.0));

        let roll = dir.path().join("roll.png");
        let l = Array2::from_elem((N_CLASSES, 30), 0.25);
        piano_roll(&truth, Some(&l), &truth, &roll).unwrap();
        let img = image::open(&roll).unwrap().to_rgb8();
        assert_eq!(img.width(), 30);
        assert_eq!(*img.get_pixel(3, 0), Rgb([0, 0, 0]));
        assert_eq!(*img.get_pixel(4, 0), Rgb([255, 255, 255]));
        assert!(piano_roll(&truth, None, &FrameLabelMatrix::zeros(3, HOP, SAMPLE_RATE), &roll).is_err());
    }
}
