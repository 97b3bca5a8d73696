use super::Waveform;
use crate::error::{Error, Result};

const ZERO_CROSSINGS: f64 = 32.0;
const ROLLOFF: f64 = 0.945;
const KAISER_BETA: f64 = 8.6;

fn gcd(a: u64, b: u64) -> u64 {
    if b == 0 {
        a
    } else {
        gcd(b, a % b)
    }
}

/// Zeroth-order modified Bessel function of the first kind.
fn bessel_i0(x: f64) -> f64 {
    let mut sum = 1.0;
    let mut term = 1.0;
    let half = x / 2.0;
    for k in 1..64 {
        term *= half / k as f64;
        let t2 = term * term;
        sum += t2;
        if t2 < sum * 1e-17 {
            break;
        }
    }
    sum
}

fn sinc(x: f64) -> f64 {
    if x == 0.0 {
        1.0
    } else {
        let px = std::f64::consts::PI * x;
        px.sin() / px
    }
}

/// Polyphase table: `phases[p][j]` weights input sample `base - half + 1 + j`
/// for output positions whose fractional input offset is `p / up`.
struct PolyphaseBank {
    half: usize,
    phases: Vec<Vec<f64>>,
}

impl PolyphaseBank {
    fn new(up: u64, down: u64) -> Self {
        let fc = 0.5 * (up as f64 / down as f64).min(1.0) * ROLLOFF;
        let width = ZERO_CROSSINGS / (2.0 * fc);
        let half = width.ceil() as usize;
        let i0_beta = bessel_i0(KAISER_BETA);
        let phases = (0..up)
            .map(|p| {
                let frac = p as f64 / up as f64;
                let mut taps: Vec<f64> = (0..2 * half)
                    .map(|j| {
                        let tau = frac + half as f64 - 1.0 - j as f64;
                        let r = tau / width;
                        if r.abs() >= 1.0 {
                            0.0
                        } else {
                            let win = bessel_i0(KAISER_BETA * (1.0 - r * r).sqrt()) / i0_beta;
                            2.0 * fc * sinc(2.0 * fc * tau) * win
                        }
                    })
                    .collect();
                let sum: f64 = taps.iter().sum();
                taps.iter_mut().for_each(|t| *t /= sum);
                taps
            })
            .collect();
        PolyphaseBank { half, phases }
    }
}

/// Band-limited rational resampling with a Kaiser-windowed sinc low-pass.
/// Output length is `round(len * target / source)`; equal rates return the
/// input unchanged.
pub fn resample(w: &Waveform, target_rate: u32) -> Result<Waveform> {
    if target_rate == 0 {
        return Err(Error::InvalidInput("target rate must be positive".into()));
    }
    if w.samples.is_empty() {
        return Err(Error::Empty("cannot resample an empty waveform".into()));
    }
    if w.sample_rate == target_rate {
        return Ok(w.clone());
    }
    let src = w.sample_rate as u64;
    let dst = target_rate as u64;
    let g = gcd(src, dst);
    let (up, down) = (dst / g, src / g);
    let n_in = w.samples.len() as u64;
    let n_out = ((n_in as u128 * dst as u128 + src as u128 / 2) / src as u128) as usize;

    let bank = PolyphaseBank::new(up, down);
    let half = bank.half as i64;
    let x = &w.samples;
    let out = (0..n_out as u64)
        .map(|n| {
            let pos = n * down;
            let base = (pos / up) as i64;
            let taps = &bank.phases[(pos % up) as usize];
            let first = base - half + 1;
            let mut acc = 0.0f64;
            for (j, &t) in taps.iter().enumerate() {
                let k = first + j as i64;
                if k >= 0 && (k as u64) < n_in {
                    acc += t * x[k as usize] as f64;
                }
            }
            acc as f32
        })
        .collect();
    Ok(Waveform {
        samples: out,
        sample_rate: target_rate,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::PI;

    fn sine(freq: f64, rate: u32, n: usize) -> Vec<f32> {
        (0..n)
            .map(|i| (0.5 * (2.0 * PI * freq * i as f64 / rate as f64).sin()) as f32)
            .collect()
    }

    fn correlation(a: &[f32], b: &[f32]) -> f64 {
        let n = a.len() as f64;
        let ma = a.iter().map(|&x| x as f64).sum::<f64>() / n;
        let mb = b.iter().map(|&x| x as f64).sum::<f64>() / n;
        let (mut sab, mut saa, mut sbb) = (0.0, 0.0, 0.0);
        for (&x, &y) in a.iter().zip(b) {
            let (dx, dy) = (x as f64 - ma, y as f64 - mb);
            sab += dx * dy;
            saa += dx * dx;
            sbb += dy * dy;
        }
        sab / (saa * sbb).sqrt()
    }

    #[test]
    fn one_second_8k_becomes_16000_samples() {
        let w = Waveform::new(sine(440.0, 8000, 8000), 8000).unwrap();
        assert_eq!(resample(&w, 16_000).unwrap().len(), 16_000);
    }

    #[test]
    fn same_rate_is_identity() {
        let w = Waveform::new(sine(440.0, 16_000, 1000), 16_000).unwrap();
        assert_eq!(resample(&w, 16_000).unwrap(), w);
    }

    #[test]
    fn upsampled_sine_matches_analytic_sine() {
        let w = Waveform::new(sine(440.0, 8000, 8000), 8000).unwrap();
        let out = resample(&w, 16_000).unwrap();
        let oracle = sine(440.0, 16_000, 16_000);
        let edge = 1600;
        let r = correlation(&out.samples[edge..16_000 - edge], &oracle[edge..16_000 - edge]);
        assert!(r > 0.999, "correlation {r}");
    }

    #[test]
    fn downsampled_sine_matches_and_alias_is_suppressed() {
        let w = Waveform::new(sine(1000.0, 44_100, 44_100), 44_100).unwrap();
        let out = resample(&w, 16_000).unwrap();
        assert_eq!(out.len(), 16_000);
        let oracle = sine(1000.0, 16_000, 16_000);
        let r = correlation(&out.samples[2000..14_000], &oracle[2000..14_000]);
        assert!(r > 0.999, "correlation {r}");

        // 12 kHz is above the 8 kHz output Nyquist and must be removed.
        let hi = Waveform::new(sine(12_000.0, 44_100, 44_100), 44_100).unwrap();
        let out = resample(&hi, 16_000).unwrap();
        let rms = (out.samples[2000..14_000].iter().map(|&x| (x as f64).powi(2)).sum::<f64>()
            / 12_000.0)
            .sqrt();
        assert!(rms < 1e-3, "alias rms {rms}");
    }

    #[test]
    fn zero_target_rate_errors() {
        let w = Waveform::new(vec![0.0; 10], 8000).unwrap();
        assert!(resample(&w, 0).is_err());
    }

    #[test]
    fn bessel_matches_reference() {
        // I0(1) = 1.2660658777520082
        assert!((bessel_i0(1.0) - 1.2660658777520082).abs() < 1e-14);
    }
}
