//! Synthetic tracks with exact annotations.
//!
//! Each class is rendered as a signal with the characteristic the technique
//! has on a spectrogram:
//!
//! | class               | signal                                   |
//! |---------------------|------------------------------------------|
//! | plucks              | stationary harmonic tone                 |
//! | vibrato             | sinusoidal frequency modulation          |
//! | upward_portamento   | exponential chirp upward                 |
//! | downward_portamento | exponential chirp downward               |
//! | point_note          | brief pitch bump right after the onset   |
//! | glissando           | fast run of discrete pentatonic tones    |
//! | tremolo             | amplitude-pulsed stationary tone         |
//!
//! A fixture spec is TOML:
//!
//! ```toml
//! duration = 4.0          # seconds of audio to render
//!
//! [[events]]
//! class = "vibrato"       # any canonical label
//! onset = 0.5             # seconds
//! duration = 1.0          # seconds
//! freq = 440.0            # base frequency in Hz
//! # end_freq = 523.25     # portamento / glissando target (optional)
//! # amplitude = 0.3       # peak amplitude of the fundamental (optional)
//! ```

use std::f64::consts::PI;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::{annotations::write_annotations, hz_from_midi, midi_from_hz, write_metadata};
use super::{IptClass, NoteAnnotation, TrackMetadata};
use crate::error::{Error, Result};
use crate::features::{write_wav, SAMPLE_RATE};

/// Length of one glissando tone.
pub const GLISSANDO_STEP: f64 = 0.06;
const PENTATONIC: [f64; 5] = [0.0, 2.0, 4.0, 7.0, 9.0];
const HARMONICS: [f64; 3] = [1.0, 0.4, 0.15];
const ATTACK: f64 = 0.005;
const RELEASE: f64 = 0.01;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureSpec {
    pub duration: f64,
    #[serde(default)]
    pub events: Vec<FixtureEvent>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureEvent {
    pub class: IptClass,
    pub onset: f64,
    pub duration: f64,
    pub freq: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub end_freq: Option<f64>,
    #[serde(default = "default_amplitude")]
    pub amplitude: f64,
}

fn default_amplitude() -> f64 {
    0.3
}

impl FixtureEvent {
    pub fn new(class: IptClass, onset: f64, duration: f64, freq: f64) -> Self {
        FixtureEvent {
            class,
            onset,
            duration,
            freq,
            end_freq: None,
            amplitude: default_amplitude(),
        }
    }
}

impl FixtureSpec {
    pub fn from_toml(text: &str) -> Result<Self> {
        toml::from_str(text).map_err(|e| Error::Serde(e.to_string()))
    }

    pub fn to_toml(&self) -> Result<String> {
        toml::to_string(self).map_err(|e| Error::Serde(e.to_string()))
    }

    fn validate(&self) -> Result<()> {
        if !(self.duration >= 0.0 && self.duration.is_finite()) {
            return Err(Error::Validation(format!("bad fixture duration {}", self.duration)));
        }
        for (i, e) in self.events.iter().enumerate() {
            if !(e.duration > 0.0) {
                return Err(Error::Validation(format!(
                    "event {i} ({}) has non-positive duration {}",
                    e.class, e.duration
                )));
            }
            if e.onset < 0.0 || e.onset + e.duration > self.duration + 1e-9 {
                return Err(Error::Validation(format!(
                    "event {i} ({}) [{}, {}] does not fit in {} s",
                    e.class,
                    e.onset,
                    e.onset + e.duration,
                    self.duration
                )));
            }
            if !(e.freq > 0.0) || e.end_freq.is_some_and(|f| !(f > 0.0)) {
                return Err(Error::Validation(format!("event {i} has a non-positive frequency")));
            }
        }
        Ok(())
    }
}

/// Rendered audio (mono, 44.1 kHz) and its annotations sorted by onset.
#[derive(Clone, Debug)]
pub struct Fixture {
    pub samples: Vec<f32>,
    pub notes: Vec<NoteAnnotation>,
}

pub fn synth_fixture(spec: &FixtureSpec, seed: u64) -> Result<Fixture> {
    spec.validate()?;
    let sr = SAMPLE_RATE as f64;
    let n = (spec.duration * sr).round() as usize;
    let mut buf = vec![0.0f64; n];
    let mut notes = Vec::new();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);

    for event in &spec.events {
        let phase0 = rng.random::<f64>() * 2.0 * PI;
        if event.class == IptClass::Glissando {
            for (onset, dur, freq) in glissando_tones(event) {
                render(&mut buf, onset, dur, event.amplitude, phase0, |_| freq, pluck_envelope);
                notes.push(note(onset, onset + dur, freq, IptClass::Glissando));
            }
            continue;
        }
        let f0 = event.freq;
        let d = event.duration;
        match event.class {
            IptClass::Plucks => render(&mut buf, event.onset, d, event.amplitude, phase0, |_| f0, flat),
            IptClass::Vibrato => {
                let rate = 6.0;
                let depth = 0.75;
                render(&mut buf, event.onset, d, event.amplitude, phase0, |t| {
                    f0 * semitones(depth * (2.0 * PI * rate * t).sin())
                }, flat)
            }
            IptClass::UpwardPortamento | IptClass::DownwardPortamento => {
                let default_span = if event.class == IptClass::UpwardPortamento { 4.0 } else { -4.0 };
                let f1 = event.end_freq.unwrap_or(f0 * semitones(default_span));
                render(&mut buf, event.onset, d, event.amplitude, phase0, |t| {
                    f0 * (f1 / f0).powf((t / d).clamp(0.0, 1.0))
                }, flat)
            }
            IptClass::PointNote => {
                let bump = (0.4 * d).min(0.2);
                render(&mut buf, event.onset, d, event.amplitude, phase0, |t| {
                    if t < bump {
                        f0 * semitones(2.0 * (PI * t / bump).sin())
                    } else {
                        f0
                    }
                }, flat)
            }
            IptClass::Tremolo => render(&mut buf, event.onset, d, event.amplitude, phase0, |_| f0, |t, dur| {
                flat(t, dur) * (0.1 + 0.9 * (0.5 - 0.5 * (2.0 * PI * 12.0 * t).cos()))
            }),
            IptClass::Glissando => unreachable!(),
        }
        notes.push(note(event.onset, event.onset + d, f0, event.class));
    }

    let peak = buf.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let gain = if peak > 0.99 { 0.99 / peak } else { 1.0 };
    notes.sort_by(|a, b| a.onset.total_cmp(&b.onset).then(a.ipt.cmp(&b.ipt)));
    Ok(Fixture {
        samples: buf.into_iter().map(|v| (v * gain) as f32).collect(),
        notes,
    })
}

fn note(onset: f64, offset: f64, freq: f64, ipt: IptClass) -> NoteAnnotation {
    NoteAnnotation {
        onset,
        offset,
        pitch: midi_from_hz(freq),
        ipt,
    }
}

fn semitones(s: f64) -> f64 {
    2f64.powf(s / 12.0)
}

fn glissando_tones(event: &FixtureEvent) -> Vec<(f64, f64, f64)> {
    let count = ((event.duration / GLISSANDO_STEP).floor() as usize).max(1);
    let step = event.duration / count as f64;
    let descending = event.end_freq.is_some_and(|f| f < event.freq);
    (0..count)
        .map(|k| {
            let offset = 12.0 * (k / 5) as f64 + PENTATONIC[k % 5];
            let s = if descending { -offset } else { offset };
            (event.onset + k as f64 * step, step, event.freq * semitones(s))
        })
        .collect()
}

fn flat(t: f64, dur: f64) -> f64 {
    let attack = (t / ATTACK).min(1.0);
    let release = ((dur - t) / RELEASE).min(1.0);
    attack.min(release).max(0.0)
}

fn pluck_envelope(t: f64, dur: f64) -> f64 {
    flat(t, dur) * (-t / 0.15).exp()
}

/// Adds one harmonic tone with instantaneous frequency `freq(t)` and
/// envelope `env(t, dur)`, `t` local to the event.
fn render(
    buf: &mut [f64],
    onset: f64,
    dur: f64,
    amplitude: f64,
    phase0: f64,
    freq: impl Fn(f64) -> f64,
    env: impl Fn(f64, f64) -> f64,
) {
    let sr = SAMPLE_RATE as f64;
    let start = (onset * sr).round() as usize;
    let end = (((onset + dur) * sr).round() as usize).min(buf.len());
    let mut phase = phase0;
    for (i, slot) in buf[start.min(end)..end].iter_mut().enumerate() {
        let t = i as f64 / sr;
        let f = freq(t);
        let mut v = 0.0;
        for (h, weight) in HARMONICS.iter().enumerate() {
            let fh = f * (h + 1) as f64;
            if fh < 0.45 * sr {
                v += weight * ((h + 1) as f64 * phase).sin();
            }
        }
        *slot += amplitude * env(t, dur) * v;
        phase += 2.0 * PI * f / sr;
    }
}

/// Parameters of a randomly generated fixture corpus.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct FixtureCorpusConfig {
    pub n_tracks: usize,
    pub track_duration: f64,
    pub n_performers: usize,
    /// Chance that a left-hand technique gets a simultaneous plucked note.
    pub overlap_probability: f64,
}

impl Default for FixtureCorpusConfig {
    fn default() -> Self {
        FixtureCorpusConfig {
            n_tracks: 20,
            track_duration: 180.0,
            n_performers: 2,
            overlap_probability: 0.2,
        }
    }
}

/// Random event schedule filling `duration` seconds.
pub fn random_fixture_spec(duration: f64, overlap_probability: f64, rng: &mut impl Rng) -> FixtureSpec {
    const CLASS_WEIGHTS: [f64; 7] = [1.0, 1.0, 1.0, 1.0, 1.0, 1.0, 2.0];
    let total: f64 = CLASS_WEIGHTS.iter().sum();
    let mut events = Vec::new();
    let mut cursor = rng.random_range(0.05..0.3);
    loop {
        let mut pick = rng.random::<f64>() * total;
        let mut class = IptClass::Plucks;
        for (i, w) in CLASS_WEIGHTS.iter().enumerate() {
            if pick < *w {
                class = IptClass::from_index(i).unwrap();
                break;
            }
            pick -= w;
        }
        let dur = match class {
            IptClass::Vibrato => rng.random_range(0.5..1.5),
            IptClass::UpwardPortamento | IptClass::DownwardPortamento => rng.random_range(0.4..1.0),
            IptClass::PointNote => rng.random_range(0.4..0.9),
            IptClass::Glissando => rng.random_range(0.25..0.5),
            IptClass::Tremolo => rng.random_range(0.8..2.0),
            IptClass::Plucks => rng.random_range(0.2..1.0),
        };
        if cursor + dur > duration - 0.05 {
            break;
        }
        let midi = rng.random_range(50..=80) as f64;
        let mut event = FixtureEvent::new(class, cursor, dur, hz_from_midi(midi));
        if class == IptClass::Glissando && rng.random_bool(0.5) {
            event.end_freq = Some(event.freq / 2.0);
        }
        let left_hand = matches!(
            class,
            IptClass::Vibrato | IptClass::UpwardPortamento | IptClass::DownwardPortamento | IptClass::PointNote
        );
        if left_hand && rng.random_bool(overlap_probability) {
            let shift = if midi > 65.0 { -12.0 } else { 12.0 };
            let mut pluck = FixtureEvent::new(IptClass::Plucks, cursor, dur * 0.8, hz_from_midi(midi + shift));
            pluck.amplitude = 0.2;
            events.push(pluck);
        }
        events.push(event);
        cursor += dur + rng.random_range(0.1..0.4);
    }
    FixtureSpec { duration, events }
}

/// Metadata plus event schedule for every track of a random corpus.
pub fn fixture_corpus(config: &FixtureCorpusConfig, seed: u64) -> Vec<(TrackMetadata, FixtureSpec)> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    (0..config.n_tracks)
        .map(|i| {
            let spec = random_fixture_spec(config.track_duration, config.overlap_probability, &mut rng);
            let meta = TrackMetadata {
                audio_id: format!("fx{i:03}"),
                audio_name: format!("fixture track {i}"),
                mode: "pentatonic".into(),
                time_signature: "4/4".into(),
                performer: format!("performer_{}", i % config.n_performers.max(1)),
                genre: "synthetic".into(),
                audio_length: config.track_duration,
            };
            (meta, spec)
        })
        .collect()
}

/// Writes a corpus directory: `metadata.csv`, `annotations/<id>.tsv`,
/// `audio/<id>.wav` and the generating `fixtures/<id>.toml`.
pub fn write_fixture_corpus(root: &Path, config: &FixtureCorpusConfig, seed: u64) -> Result<Vec<TrackMetadata>> {
    for sub in ["annotations", "audio", "fixtures"] {
        let dir = root.join(sub);
        std::fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    }
    let corpus = fixture_corpus(config, seed);
    let mut metas = Vec::with_capacity(corpus.len());
    for (i, (meta, spec)) in corpus.into_iter().enumerate() {
        let fixture = synth_fixture(&spec, seed.wrapping_add(i as u64))?;
        write_wav(&root.join("audio").join(format!("{}.wav", meta.audio_id)), &fixture.samples)?;
        write_annotations(&root.join("annotations").join(format!("{}.tsv", meta.audio_id)), &fixture.notes)?;
        let spec_path = root.join("fixtures").join(format!("{}.toml", meta.audio_id));
        std::fs::write(&spec_path, spec.to_toml()?).map_err(|e| Error::io(&spec_path, e))?;
        metas.push(meta);
    }
    write_metadata(&root.join("metadata.csv"), &metas)?;
    Ok(metas)
}
