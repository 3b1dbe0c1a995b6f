//! Constant-Q transform with 12 bins per octave from A0.
//!
//! Bin `k` analyses `fmin * 2^(k/12)` with a Hann-windowed complex sinusoid
//! of `ceil(Q * sr / f_k)` samples, `Q = 1 / (2^(1/12) - 1)`. Kernels are
//! L1-normalized and responses are scaled by the square root of the kernel
//! length, so a unit sinusoid gives a magnitude of about `sqrt(N_k) / 2`.
//! Frames are centered on `t * hop` of the reflect-padded signal.
//!
//! [`Cqt`] evaluates the kernels in the frequency domain (one real FFT per
//! frame against sparse kernel spectra); [`reference_cqt`] evaluates the same
//! kernels directly in the time domain.

use std::f64::consts::PI;
use std::sync::{Arc, OnceLock};

use ndarray::Array2;
use realfft::num_complex::Complex64;
use realfft::{RealFftPlanner, RealToComplex};

use super::{frame_count, HOP, SAMPLE_RATE};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct CqtParams {
    pub sample_rate: u32,
    pub hop: usize,
    pub fmin: f64,
    pub n_bins: usize,
    pub bins_per_octave: usize,
}

impl Default for CqtParams {
    fn default() -> Self {
        CqtParams {
            sample_rate: SAMPLE_RATE,
            hop: HOP,
            fmin: 27.5,
            n_bins: 88,
            bins_per_octave: 12,
        }
    }
}

impl CqtParams {
    pub fn frequency(&self, bin: usize) -> f64 {
        self.fmin * 2f64.powf(bin as f64 / self.bins_per_octave as f64)
    }

    fn quality(&self) -> f64 {
        1.0 / (2f64.powf(1.0 / self.bins_per_octave as f64) - 1.0)
    }

    pub fn kernel_length(&self, bin: usize) -> usize {
        (self.quality() * self.sample_rate as f64 / self.frequency(bin)).ceil() as usize
    }

    /// Longest analysis window, at the lowest bin.
    pub fn max_window(&self) -> usize {
        self.kernel_length(0)
    }

    fn validate(&self) -> Result<()> {
        if self.n_bins == 0 || self.bins_per_octave == 0 || self.hop == 0 || self.fmin <= 0.0 {
            return Err(Error::Validation(format!("invalid CQT parameters {self:?}")));
        }
        let top = self.frequency(self.n_bins - 1);
        if top >= self.sample_rate as f64 / 2.0 {
            return Err(Error::Validation(format!("top CQT bin {top:.1} Hz exceeds Nyquist")));
        }
        Ok(())
    }
}

/// Magnitudes with shape `(n_bins, frames)`.
#[derive(Clone, Debug, PartialEq)]
pub struct CqtSpectrogram {
    pub magnitudes: Array2<f32>,
    pub hop: usize,
    pub fmin: f64,
    pub bins_per_octave: usize,
}

impl CqtSpectrogram {
    pub fn n_bins(&self) -> usize {
        self.magnitudes.nrows()
    }

    pub fn n_frames(&self) -> usize {
        self.magnitudes.ncols()
    }

    /// Bin with the largest magnitude in frame `t` (lowest bin on ties).
    pub fn argmax_bin(&self, t: usize) -> usize {
        let col = self.magnitudes.column(t);
        let mut best = 0;
        for (k, &v) in col.iter().enumerate() {
            if v > col[best] {
                best = k;
            }
        }
        best
    }
}

/// Complex analysis kernel of one bin, before the `sqrt(N)` output scaling.
fn time_kernel(params: &CqtParams, bin: usize) -> Vec<Complex64> {
    let n = params.kernel_length(bin);
    let f = params.frequency(bin);
    let sr = params.sample_rate as f64;
    let window: Vec<f64> = (0..n)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / n as f64).cos())
        .collect();
    let norm: f64 = window.iter().sum();
    let half = (n / 2) as f64;
    window
        .iter()
        .enumerate()
        .map(|(i, w)| Complex64::from_polar(w / norm, 2.0 * PI * f * (i as f64 - half) / sr))
        .collect()
}

fn check_input(samples: &[f32], params: &CqtParams, pad: usize) -> Result<()> {
    let needed = params.max_window().max(pad + 1);
    if samples.len() < needed {
        return Err(Error::Validation(format!(
            "{} samples is shorter than the longest CQT window ({needed} samples); \
             zero-pad the clip to at least that length",
            samples.len()
        )));
    }
    Ok(())
}

/// numpy-style `reflect` padding (edge sample not repeated).
fn reflect_pad(samples: &[f32], pad: usize) -> Vec<f64> {
    let n = samples.len();
    let mut out = Vec::with_capacity(n + 2 * pad);
    out.extend((1..=pad).rev().map(|i| samples[i] as f64));
    out.extend(samples.iter().map(|&v| v as f64));
    out.extend((0..pad).map(|i| samples[n - 2 - i] as f64));
    out
}

struct SparseSpectrum {
    first_bin: usize,
    /// conj(kernel spectrum) * sqrt(N) / n_fft over a contiguous FFT-bin range.
    values: Vec<Complex64>,
}

/// Frequency-domain CQT with precomputed sparse kernels; shareable across threads.
pub struct Cqt {
    params: CqtParams,
    n_fft: usize,
    kernels: Vec<SparseSpectrum>,
    fft: Arc<dyn RealToComplex<f64>>,
}

impl std::fmt::Debug for Cqt {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Cqt")
            .field("params", &self.params)
            .field("n_fft", &self.n_fft)
            .finish()
    }
}

/// Kernel spectrum entries below this fraction of the bin's peak are dropped.
const SPARSITY: f64 = 1e-4;

impl Cqt {
    pub fn new(params: CqtParams) -> Result<Self> {
        params.validate()?;
        let n_fft = params.max_window().next_power_of_two();
        let mut planner = RealFftPlanner::<f64>::new();
        let fft = planner.plan_fft_forward(n_fft);

        let mut kernels = Vec::with_capacity(params.n_bins);
        for bin in 0..params.n_bins {
            let kernel = time_kernel(&params, bin);
            let n = kernel.len();
            let offset = n_fft / 2 - n / 2;
            // The kernel is complex; transform real and imaginary parts separately.
            let mut re = vec![0.0; n_fft];
            let mut im = vec![0.0; n_fft];
            for (i, k) in kernel.iter().enumerate() {
                re[offset + i] = k.re;
                im[offset + i] = k.im;
            }
            let mut re_spec = fft.make_output_vec();
            let mut im_spec = fft.make_output_vec();
            fft.process(&mut re, &mut re_spec)
                .map_err(|e| Error::Numeric(e.to_string()))?;
            fft.process(&mut im, &mut im_spec)
                .map_err(|e| Error::Numeric(e.to_string()))?;
            // Positive-frequency half of the complex kernel's spectrum: K = R + iI.
            let spectrum: Vec<Complex64> = re_spec
                .iter()
                .zip(&im_spec)
                .map(|(r, i)| r + Complex64::i() * i)
                .collect();
            let peak = spectrum.iter().fold(0.0f64, |m, v| m.max(v.norm()));
            let keep: Vec<usize> = (0..spectrum.len())
                .filter(|&f| spectrum[f].norm() >= SPARSITY * peak)
                .collect();
            let (lo, hi) = (keep[0], *keep.last().unwrap());
            let scale = (n as f64).sqrt() / n_fft as f64;
            kernels.push(SparseSpectrum {
                first_bin: lo,
                values: spectrum[lo..=hi].iter().map(|v| v.conj() * scale).collect(),
            });
        }
        Ok(Cqt {
            params,
            n_fft,
            kernels,
            fft,
        })
    }

    /// Shared instance with the standard 88-bin parameters.
    pub fn standard() -> &'static Cqt {
        static INSTANCE: OnceLock<Cqt> = OnceLock::new();
        INSTANCE.get_or_init(|| Cqt::new(CqtParams::default()).expect("standard CQT parameters are valid"))
    }

    pub fn params(&self) -> &CqtParams {
        &self.params
    }

    /// Magnitude CQT of a 44.1 kHz signal: `n_bins x (1 + len / hop)`.
    pub fn compute(&self, samples: &[f32]) -> Result<CqtSpectrogram> {
        let pad = self.n_fft / 2;
        check_input(samples, &self.params, pad)?;
        let padded = reflect_pad(samples, pad);
        let n_frames = frame_count_for(samples.len(), self.params.hop);
        let mut mags = Array2::<f32>::zeros((self.params.n_bins, n_frames));
        let mut frame = self.fft.make_input_vec();
        let mut spectrum = self.fft.make_output_vec();
        let mut scratch = self.fft.make_scratch_vec();
        for t in 0..n_frames {
            let start = t * self.params.hop;
            frame.copy_from_slice(&padded[start..start + self.n_fft]);
            self.fft
                .process_with_scratch(&mut frame, &mut spectrum, &mut scratch)
                .map_err(|e| Error::Numeric(e.to_string()))?;
            for (k, kernel) in self.kernels.iter().enumerate() {
                let seg = &spectrum[kernel.first_bin..kernel.first_bin + kernel.values.len()];
                let acc: Complex64 = seg.iter().zip(&kernel.values).map(|(s, w)| s * w).sum();
                mags[[k, t]] = acc.norm() as f32;
            }
        }
        Ok(self.spectrogram(mags))
    }

    fn spectrogram(&self, magnitudes: Array2<f32>) -> CqtSpectrogram {
        CqtSpectrogram {
            magnitudes,
            hop: self.params.hop,
            fmin: self.params.fmin,
            bins_per_octave: self.params.bins_per_octave,
        }
    }
}

fn frame_count_for(n_samples: usize, hop: usize) -> usize {
    if hop == HOP {
        frame_count(n_samples)
    } else {
        1 + n_samples / hop
    }
}

/// Direct time-domain evaluation of the same transform. Slow; used to check [`Cqt`].
pub fn reference_cqt(samples: &[f32], params: &CqtParams) -> Result<CqtSpectrogram> {
    params.validate()?;
    let pad = params.max_window().next_power_of_two() / 2;
    check_input(samples, params, pad)?;
    let padded = reflect_pad(samples, pad);
    let n_frames = frame_count_for(samples.len(), params.hop);
    let mut mags = Array2::<f32>::zeros((params.n_bins, n_frames));
    for bin in 0..params.n_bins {
        let kernel = time_kernel(params, bin);
        let n = kernel.len();
        let scale = (n as f64).sqrt();
        for t in 0..n_frames {
            let start = pad + t * params.hop - n / 2;
            let acc: Complex64 = padded[start..start + n]
                .iter()
                .zip(&kernel)
                .map(|(x, k)| k.conj() * *x)
                .sum();
            mags[[bin, t]] = (acc.norm() * scale) as f32;
        }
    }
    Ok(CqtSpectrogram {
        magnitudes: mags,
        hop: params.hop,
        fmin: params.fmin,
        bins_per_octave: params.bins_per_octave,
    })
}
