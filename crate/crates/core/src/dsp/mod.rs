//! Waveforms, event clip extraction, fixed-length windows and mel spectrograms.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

mod mel;
mod resample;
mod wav;
mod window;

pub use mel::{hz_to_mel, mel_filterbank, mel_spectrogram, mel_to_hz, power_spectrogram, MelSpectrogram};
pub use resample::resample;
pub use wav::{read_wav, write_wav};
pub use window::{extract_event_clip, standardize_window, EventClip};

/// Sample rate of every clip fed to an encoder.
pub const CLIP_RATE: u32 = 16_000;
/// Default clip duration in seconds.
pub const CLIP_SECONDS: f64 = 2.0;
/// Samples in a default clip.
pub const CLIP_SAMPLES: usize = 32_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Waveform {
    pub samples: Vec<f32>,
    pub sample_rate: u32,
}

impl Waveform {
    pub fn new(samples: Vec<f32>, sample_rate: u32) -> Result<Self> {
        if samples.is_empty() {
            return Err(Error::Empty("waveform has no samples".into()));
        }
        if sample_rate == 0 {
            return Err(Error::InvalidInput("sample rate must be positive".into()));
        }
        if let Some(i) = samples.iter().position(|s| !s.is_finite()) {
            return Err(Error::InvalidInput(format!("non-finite sample at index {i}")));
        }
        Ok(Waveform {
            samples,
            sample_rate,
        })
    }

    /// Averages interleaved channels to mono.
    pub fn from_interleaved(interleaved: &[f32], channels: usize, sample_rate: u32) -> Result<Self> {
        if channels == 0 {
            return Err(Error::InvalidInput("zero channels".into()));
        }
        let mono = interleaved
            .chunks_exact(channels)
            .map(|frame| frame.iter().sum::<f32>() / channels as f32)
            .collect();
        Self::new(mono, sample_rate)
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn duration_ms(&self) -> f64 {
        self.samples.len() as f64 * 1000.0 / self.sample_rate as f64
    }
}

/// Provenance of a clip; doubles as the embedding cache key.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ClipSource {
    pub record_id: String,
    pub start_ms: u32,
    pub end_ms: u32,
    /// Margin fraction in parts per million.
    pub margin_ppm: u32,
    pub window_ms: u32,
}

impl ClipSource {
    pub fn new(record_id: &str, start_ms: u32, end_ms: u32, margin: f64, window_s: f64) -> Self {
        ClipSource {
            record_id: record_id.to_string(),
            start_ms,
            end_ms,
            margin_ppm: (margin * 1e6).round() as u32,
            window_ms: (window_s * 1000.0).round() as u32,
        }
    }

    /// Canonical text form used for cache digests.
    pub fn key(&self) -> String {
        format!(
            "{}@{}-{}/m{}/w{}",
            self.record_id, self.start_ms, self.end_ms, self.margin_ppm, self.window_ms
        )
    }
}

/// A fixed-length mono 16 kHz window.
#[derive(Debug, Clone, PartialEq)]
pub struct Clip {
    samples: Vec<f32>,
    pub source: Option<ClipSource>,
}

impl Clip {
    /// Wraps samples assumed to be at 16 kHz.
    pub fn from_samples(samples: Vec<f32>) -> Self {
        Clip {
            samples,
            source: None,
        }
    }

    pub fn with_source(mut self, source: ClipSource) -> Self {
        self.source = Some(source);
        self
    }

    pub fn samples(&self) -> &[f32] {
        &self.samples
    }

    pub fn sample_rate(&self) -> u32 {
        CLIP_RATE
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Checks the default 2 s / 32,000-sample contract.
    pub fn check_contract(&self) -> Result<()> {
        if self.samples.len() != CLIP_SAMPLES {
            return Err(Error::ClipContract {
                expected: CLIP_SAMPLES,
                actual: self.samples.len(),
            });
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn stereo_is_averaged() {
        let w = Waveform::from_interleaved(&[1.0, 0.0, 0.5, 0.5, -1.0, 1.0], 2, 8000).unwrap();
        assert_eq!(w.samples, vec![0.5, 0.5, 0.0]);
    }

    #[test]
    fn invalid_waveforms_rejected() {
        assert!(Waveform::new(vec![], 8000).is_err());
        assert!(Waveform::new(vec![f32::NAN], 8000).is_err());
        assert!(Waveform::new(vec![0.0], 0).is_err());
    }
}
