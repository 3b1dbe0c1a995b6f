use std::path::Path;

use rubato::{FftFixedInOut, Resampler};

use super::SAMPLE_RATE;
use crate::error::{Error, Result};

/// Reads a WAV file as mono (channel average) at 44.1 kHz with samples in [-1, 1].
pub fn load_audio(path: &Path) -> Result<Vec<f32>> {
    let audio_err = |message: String| Error::Audio {
        path: path.to_path_buf(),
        message,
    };
    let mut reader = hound::WavReader::open(path).map_err(|e| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => audio_err(other.to_string()),
    })?;
    let spec = reader.spec();
    let channels = spec.channels as usize;
    if channels == 0 {
        return Err(audio_err("zero channels".into()));
    }
    let interleaved: Vec<f32> = match spec.sample_format {
        hound::SampleFormat::Float => reader
            .samples::<f32>()
            .collect::<std::result::Result<_, _>>()
            .map_err(|e| audio_err(e.to_string()))?,
        hound::SampleFormat::Int => {
            let scale = 1.0 / (1u64 << (spec.bits_per_sample - 1)) as f32;
            reader
                .samples::<i32>()
                .map(|s| s.map(|v| v as f32 * scale))
                .collect::<std::result::Result<_, _>>()
                .map_err(|e| audio_err(e.to_string()))?
        }
    };
    if interleaved.is_empty() {
        return Err(Error::Validation(format!("{} contains no audio", path.display())));
    }
    let mono: Vec<f32> = interleaved
        .chunks_exact(channels)
        .map(|frame| frame.iter().sum::<f32>() / channels as f32)
        .collect();
    let resampled = resample(&mono, spec.sample_rate, SAMPLE_RATE)?;
    Ok(resampled.into_iter().map(|v| v.clamp(-1.0, 1.0)).collect())
}

/// Band-limited rational resampling. The output holds exactly
/// `round(len * to / from)` samples, aligned with the input.
pub fn resample(samples: &[f32], from: u32, to: u32) -> Result<Vec<f32>> {
    if from == 0 || to == 0 {
        return Err(Error::Validation("sample rates must be positive".into()));
    }
    if from == to || samples.is_empty() {
        return Ok(samples.to_vec());
    }
    let expected = (samples.len() as f64 * to as f64 / from as f64).round() as usize;
    let mut resampler = FftFixedInOut::<f64>::new(from as usize, to as usize, 1024, 1)
        .map_err(|e| Error::Validation(e.to_string()))?;
    let input: Vec<f64> = samples.iter().map(|&v| v as f64).collect();
    let delay = resampler.output_delay();
    let mut out: Vec<f64> = Vec::with_capacity(expected + delay + 4096);

    let mut pos = 0;
    while pos < input.len() || out.len() < expected + delay {
        let need = resampler.input_frames_next();
        let chunk = if pos + need <= input.len() {
            let c = resampler.process(&[&input[pos..pos + need]], None);
            pos += need;
            c
        } else if pos < input.len() {
            let c = resampler.process_partial(Some(&[&input[pos..]]), None);
            pos = input.len();
            c
        } else {
            resampler.process_partial::<&[f64]>(None, None)
        }
        .map_err(|e| Error::Validation(e.to_string()))?;
        out.extend_from_slice(&chunk[0]);
    }
    Ok(out[delay..delay + expected].iter().map(|&v| v as f32).collect())
}

/// Writes mono 16-bit PCM at 44.1 kHz.
pub fn write_wav(path: &Path, samples: &[f32]) -> Result<()> {
    let spec = hound::WavSpec {
        channels: 1,
        sample_rate: SAMPLE_RATE,
        bits_per_sample: 16,
        sample_format: hound::SampleFormat::Int,
    };
    let map = |e: hound::Error| match e {
        hound::Error::IoError(io) => Error::io(path, io),
        other => Error::Audio {
            path: path.to_path_buf(),
            message: other.to_string(),
        },
    };
    let mut writer = hound::WavWriter::create(path, spec).map_err(map)?;
    for &s in samples {
        writer
            .write_sample((s.clamp(-1.0, 1.0) * 32767.0).round() as i16)
            .map_err(map)?;
    }
    writer.finalize().map_err(map)
}
