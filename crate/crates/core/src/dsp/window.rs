use super::{Clip, Waveform, CLIP_RATE};
use crate::corpus::EventAnnotation;
use crate::error::{Error, Result};

/// An event segment cut from its record, with the span actually taken.
#[derive(Debug, Clone, PartialEq)]
pub struct EventClip {
    pub waveform: Waveform,
    pub start_ms: f64,
    pub end_ms: f64,
}

fn ms_to_sample(ms: f64, rate: u32) -> usize {
    (ms * rate as f64 / 1000.0).round() as usize
}

/// Cuts `[start - m, end + m]` with `m = margin_fraction * (end - start)`,
/// clipped to the record.
pub fn extract_event_clip(
    record: &Waveform,
    event: &EventAnnotation,
    margin_fraction: f64,
) -> Result<EventClip> {
    if !(margin_fraction >= 0.0 && margin_fraction.is_finite()) {
        return Err(Error::InvalidInput(format!("margin {margin_fraction} must be >= 0")));
    }
    let duration = record.duration_ms();
    if event.start_ms >= event.end_ms || event.end_ms as f64 > duration + 0.5 {
        return Err(Error::Bounds(format!(
            "event {}..{} ms outside record of {duration:.1} ms",
            event.start_ms, event.end_ms
        )));
    }
    let margin = margin_fraction * (event.end_ms - event.start_ms) as f64;
    let start_ms = (event.start_ms as f64 - margin).max(0.0);
    let end_ms = (event.end_ms as f64 + margin).min(duration);
    let a = ms_to_sample(start_ms, record.sample_rate);
    let b = ms_to_sample(end_ms, record.sample_rate).min(record.len());
    if b <= a {
        return Err(Error::Bounds(format!("event {}..{} ms maps to no samples", event.start_ms, event.end_ms)));
    }
    Ok(EventClip {
        waveform: Waveform {
            samples: record.samples[a..b].to_vec(),
            sample_rate: record.sample_rate,
        },
        start_ms,
        end_ms,
    })
}

/// Fixes the length to `round(duration_s * 16000)`: symmetric zero padding
/// (odd sample on the right) or a centre crop.
pub fn standardize_window(w: &Waveform, duration_s: f64) -> Result<Clip> {
    if w.sample_rate != CLIP_RATE {
        return Err(Error::InvalidInput(format!(
            "standardize_window expects {CLIP_RATE} Hz, got {}",
            w.sample_rate
        )));
    }
    let target = (duration_s * CLIP_RATE as f64).round() as usize;
    let n = w.samples.len();
    let samples = if n == target {
        w.samples.clone()
    } else if n < target {
        let left = (target - n) / 2;
        let mut out = vec![0.0f32; target];
        out[left..left + n].copy_from_slice(&w.samples);
        out
    } else {
        let start = (n - target) / 2;
        w.samples[start..start + target].to_vec()
    };
    Ok(Clip::from_samples(samples))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::corpus::{EventLabel, Location};

    fn event(start_ms: u32, end_ms: u32) -> EventAnnotation {
        EventAnnotation {
            record_id: "r".into(),
            start_ms,
            end_ms,
            label: EventLabel::Normal,
            location: Location::P1,
        }
    }

    fn ramp(n: usize, rate: u32) -> Waveform {
        Waveform::new((0..n).map(|i| i as f32 / n as f32).collect(), rate).unwrap()
    }

    #[test]
    fn margin_is_ten_percent_of_event_duration_per_side() {
        let rec = ramp(16_000 * 5, 16_000);
        let c = extract_event_clip(&rec, &event(1000, 2000), 0.10).unwrap();
        assert_eq!((c.start_ms, c.end_ms), (900.0, 2100.0));
        assert_eq!(c.waveform.len(), 1200 * 16);
        assert_eq!(c.waveform.samples[0], rec.samples[900 * 16]);
    }

    #[test]
    fn margin_is_clipped_at_record_start() {
        let rec = ramp(8000 * 3, 8000);
        let c = extract_event_clip(&rec, &event(0, 500), 0.10).unwrap();
        assert_eq!((c.start_ms, c.end_ms), (0.0, 550.0));
        assert_eq!(c.waveform.len(), 4400);
    }

    #[test]
    fn zero_margin_gives_exact_bounds() {
        let rec = ramp(8000 * 3, 8000);
        let c = extract_event_clip(&rec, &event(250, 750), 0.0).unwrap();
        assert_eq!(c.waveform.samples, rec.samples[2000..6000].to_vec());
    }

    #[test]
    fn event_past_record_end_is_a_bounds_error() {
        let rec = ramp(8000, 8000);
        assert!(matches!(
            extract_event_clip(&rec, &event(500, 1500), 0.1),
            Err(Error::Bounds(_))
        ));
    }

    #[test]
    fn short_input_is_zero_padded_symmetrically() {
        let w = Waveform::new(vec![1.0; 16_000], 16_000).unwrap();
        let c = standardize_window(&w, 2.0).unwrap();
        assert_eq!(c.len(), 32_000);
        assert!(c.samples()[..8000].iter().all(|&s| s == 0.0));
        assert!(c.samples()[24_000..].iter().all(|&s| s == 0.0));
        assert!(c.samples()[8000..24_000].iter().all(|&s| s == 1.0));
    }

    #[test]
    fn odd_padding_puts_extra_zero_on_the_right() {
        let w = Waveform::new(vec![1.0; 31_999], 16_000).unwrap();
        let c = standardize_window(&w, 2.0).unwrap();
        assert_eq!(c.samples()[0], 1.0);
        assert_eq!(c.samples()[31_999], 0.0);
    }

    #[test]
    fn conforming_input_is_bit_identical() {
        let w = ramp(32_000, 16_000);
        let c = standardize_window(&w, 2.0).unwrap();
        assert_eq!(c.samples(), &w.samples[..]);
    }

    #[test]
    fn long_input_is_centre_cropped() {
        let w = ramp(64_000, 16_000);
        let c = standardize_window(&w, 2.0).unwrap();
        assert_eq!(c.samples(), &w.samples[16_000..48_000]);
    }

    #[test]
    fn wrong_rate_rejected() {
        assert!(standardize_window(&ramp(100, 8000), 2.0).is_err());
    }
}
