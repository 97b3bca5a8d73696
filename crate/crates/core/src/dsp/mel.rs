use std::f64::consts::PI;

use ndarray::Array2;
use rustfft::num_complex::Complex;
use rustfft::FftPlanner;
use serde::{Deserialize, Serialize};

use super::Clip;
use crate::error::{Error, Result};

pub fn hz_to_mel(hz: f64) -> f64 {
    2595.0 * (1.0 + hz / 700.0).log10()
}

pub fn mel_to_hz(mel: f64) -> f64 {
    700.0 * (10f64.powf(mel / 2595.0) - 1.0)
}

/// Power spectra of Hann-windowed frames; shape `frames x (n_fft/2 + 1)`.
/// Frames start at multiples of `hop` with no edge padding.
pub fn power_spectrogram(samples: &[f32], win: usize, hop: usize, n_fft: usize) -> Array2<f64> {
    assert!(win >= 1 && hop >= 1 && n_fft >= win);
    let n_frames = if samples.len() >= win {
        1 + (samples.len() - win) / hop
    } else {
        0
    };
    let n_bins = n_fft / 2 + 1;
    let window: Vec<f64> = (0..win)
        .map(|i| 0.5 - 0.5 * (2.0 * PI * i as f64 / win as f64).cos())
        .collect();
    let fft = FftPlanner::<f64>::new().plan_fft_forward(n_fft);
    let mut out = Array2::zeros((n_frames, n_bins));
    let mut buf = vec![Complex::new(0.0, 0.0); n_fft];
    for f in 0..n_frames {
        let start = f * hop;
        for (i, b) in buf.iter_mut().enumerate() {
            *b = if i < win {
                Complex::new(samples[start + i] as f64 * window[i], 0.0)
            } else {
                Complex::new(0.0, 0.0)
            };
        }
        fft.process(&mut buf);
        for k in 0..n_bins {
            out[[f, k]] = buf[k].norm_sqr();
        }
    }
    out
}

/// Triangular filters on the HTK mel scale; shape `n_mels x (n_fft/2 + 1)`.
/// Returns the filters and their centre frequencies in Hz.
pub fn mel_filterbank(
    n_mels: usize,
    n_fft: usize,
    sample_rate: u32,
    fmin: f64,
    fmax: f64,
) -> (Array2<f64>, Vec<f64>) {
    let n_bins = n_fft / 2 + 1;
    let (mlo, mhi) = (hz_to_mel(fmin), hz_to_mel(fmax));
    let edges: Vec<f64> = (0..n_mels + 2)
        .map(|i| mel_to_hz(mlo + (mhi - mlo) * i as f64 / (n_mels + 1) as f64))
        .collect();
    let bin_hz: Vec<f64> = (0..n_bins)
        .map(|k| k as f64 * sample_rate as f64 / n_fft as f64)
        .collect();
    let mut fb = Array2::zeros((n_mels, n_bins));
    for m in 0..n_mels {
        let (lo, c, hi) = (edges[m], edges[m + 1], edges[m + 2]);
        for (k, &f) in bin_hz.iter().enumerate() {
            let w = if f > lo && f <= c {
                (f - lo) / (c - lo)
            } else if f > c && f < hi {
                (hi - f) / (hi - c)
            } else {
                0.0
            };
            fb[[m, k]] = w;
        }
    }
    (fb, edges[1..=n_mels].to_vec())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MelSpectrogram {
    /// `n_mels x frames`, non-negative.
    pub energies: Array2<f64>,
    pub mel_centers_hz: Vec<f64>,
    pub frame_times_s: Vec<f64>,
    pub window_ms: f64,
    pub hop_ms: f64,
}

pub fn mel_spectrogram(c: &Clip, n_mels: usize, window_ms: f64, hop_ms: f64) -> Result<MelSpectrogram> {
    if n_mels == 0 {
        return Err(Error::InvalidInput("n_mels must be >= 1".into()));
    }
    let rate = c.sample_rate() as f64;
    let win = (window_ms * rate / 1000.0).round() as usize;
    let hop = (hop_ms * rate / 1000.0).round() as usize;
    if win < 1 {
        return Err(Error::InvalidInput(format!("window of {window_ms} ms is shorter than one sample")));
    }
    if hop < 1 {
        return Err(Error::InvalidInput(format!("hop of {hop_ms} ms is shorter than one sample")));
    }
    let n_fft = win.next_power_of_two();
    let power = power_spectrogram(c.samples(), win, hop, n_fft);
    let (fb, centers) = mel_filterbank(n_mels, n_fft, c.sample_rate(), 0.0, rate / 2.0);
    let energies = fb.dot(&power.t()).mapv(|v: f64| v.max(0.0));
    let frame_times_s = (0..power.nrows())
        .map(|f| (f * hop) as f64 / rate + win as f64 / (2.0 * rate))
        .collect();
    Ok(MelSpectrogram {
        energies,
        mel_centers_hz: centers,
        frame_times_s,
        window_ms,
        hop_ms,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tone(freq: f64, amp: f32) -> Clip {
        Clip::from_samples(
            (0..32_000)
                .map(|i| amp * (2.0 * PI * freq * i as f64 / 16_000.0).sin() as f32)
                .collect(),
        )
    }

    #[test]
    fn silent_clip_gives_all_zero_matrix() {
        let m = mel_spectrogram(&Clip::from_samples(vec![0.0; 32_000]), 40, 25.0, 10.0).unwrap();
        assert!(m.energies.iter().all(|&v| v == 0.0));
        assert_eq!(m.energies.ncols(), 1 + (32_000 - 400) / 160);
    }

    #[test]
    fn tone_peaks_in_bin_nearest_its_frequency() {
        let m = mel_spectrogram(&tone(1000.0, 0.5), 40, 25.0, 10.0).unwrap();
        // Independent bin-centre computation: 40 centres evenly spaced in mel
        // between 0 and 8 kHz.
        let top = 2595.0 * (1.0 + 8000.0 / 700.0f64).log10();
        let expected = (1..=40)
            .map(|i| 700.0 * (10f64.powf(top * i as f64 / 41.0 / 2595.0) - 1.0))
            .enumerate()
            .min_by(|a, b| (a.1 - 1000.0).abs().partial_cmp(&(b.1 - 1000.0).abs()).unwrap())
            .unwrap()
            .0;
        for col in m.energies.columns() {
            let argmax = col
                .iter()
                .enumerate()
                .max_by(|a, b| a.1.partial_cmp(b.1).unwrap())
                .unwrap()
                .0;
            assert_eq!(argmax, expected);
        }
    }

    #[test]
    fn doubling_amplitude_quadruples_energy() {
        let a = mel_spectrogram(&tone(700.0, 0.2), 32, 25.0, 10.0).unwrap();
        let b = mel_spectrogram(&tone(700.0, 0.4), 32, 25.0, 10.0).unwrap();
        for (x, y) in a.energies.iter().zip(b.energies.iter()) {
            assert!((y - 4.0 * x).abs() <= 1e-6 * (1.0 + y.abs()));
        }
    }

    #[test]
    fn sub_sample_window_rejected() {
        let c = Clip::from_samples(vec![0.0; 100]);
        assert!(mel_spectrogram(&c, 10, 0.01, 10.0).is_err());
        assert!(mel_spectrogram(&c, 0, 25.0, 10.0).is_err());
    }
}
