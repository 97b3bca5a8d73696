//! Deterministic synthetic cohorts with planted, class-dependent acoustics.
//!
//! Breath sounds are band-limited noise. Crackles add exponentially damped
//! transient bursts; wheeze, rhonchi and stridor add sustained tones in
//! distinct frequency bands. Disease groups differ in their event-type mix
//! and age range, so every downstream stage has signal to learn.

use std::f64::consts::PI;
use std::sync::Arc;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::corpus::{AudioRef, Corpus, Diagnosis, EventAnnotation, EventLabel, Location, PatientMeta, Record, Sex};
use crate::dsp::Waveform;
use crate::error::{Error, Result};

pub const DISEASE_GROUPS: [&str; 4] = ["Pneumonia", "Bronchial diseases", "Normal", "Others"];

/// Event-label probabilities in `EventLabel::ALL` order.
pub type EventMix = [f64; 8];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthSpec {
    pub n_patients: usize,
    /// Target shares of Pneumonia, Bronchial diseases, Normal, Others.
    pub group_mix: [f64; 4],
    pub events_per_patient: (usize, usize),
    /// Per-group event-label distribution.
    pub event_mix: [EventMix; 4],
    /// Per-group age range in years.
    pub age_range: [(f64, f64); 4],
    pub event_ms: (u32, u32),
    pub sample_rate: u32,
    pub seed: u64,
}

impl Default for SynthSpec {
    fn default() -> Self {
        //            Normal Fine  Coarse Wheeze W+C   Rhonchi Stridor NoEvent
        let pneumonia = [0.45, 0.24, 0.12, 0.06, 0.03, 0.05, 0.01, 0.04];
        let bronchial = [0.45, 0.06, 0.06, 0.24, 0.04, 0.11, 0.01, 0.03];
        let control = [0.94, 0.01, 0.00, 0.01, 0.00, 0.01, 0.00, 0.03];
        let others = [0.74, 0.06, 0.04, 0.06, 0.01, 0.04, 0.02, 0.03];
        SynthSpec {
            n_patients: 200,
            group_mix: [0.55, 0.22, 0.10, 0.13],
            events_per_patient: (6, 14),
            event_mix: [pneumonia, bronchial, control, others],
            age_range: [(0.5, 6.0), (3.0, 12.0), (2.0, 16.0), (1.0, 16.0)],
            event_ms: (400, 1600),
            sample_rate: 8000,
            seed: 0,
        }
    }
}

impl SynthSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidInput(m));
        if self.n_patients == 0 {
            return bad("synthetic cohort needs at least one patient".into());
        }
        if self.group_mix.iter().any(|p| !(*p >= 0.0)) || (self.group_mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
            return bad(format!("group mix {:?} must be non-negative and sum to 1", self.group_mix));
        }
        for (g, mix) in self.event_mix.iter().enumerate() {
            if mix.iter().any(|p| !(*p >= 0.0)) || (mix.iter().sum::<f64>() - 1.0).abs() > 1e-9 {
                return bad(format!("event mix of group {g} must be non-negative and sum to 1"));
            }
        }
        let (lo, hi) = self.events_per_patient;
        if lo == 0 || lo > hi {
            return bad(format!("events per patient range {lo}..={hi} invalid"));
        }
        if self.event_ms.0 < 100 || self.event_ms.0 > self.event_ms.1 {
            return bad(format!("event duration range {:?} invalid (minimum 100 ms)", self.event_ms));
        }
        if self.age_range.iter().any(|(a, b)| !(*a >= 0.0 && a <= b)) {
            return bad("age ranges must satisfy 0 <= lo <= hi".into());
        }
        if self.sample_rate < 4000 {
            return bad("sample rate must be at least 4 kHz".into());
        }
        Ok(())
    }
}

/// Largest-remainder allocation of `n` items over shares.
pub fn allocate(n: usize, shares: &[f64]) -> Vec<usize> {
    let exact: Vec<f64> = shares.iter().map(|s| s * n as f64).collect();
    let mut counts: Vec<usize> = exact.iter().map(|e| e.floor() as usize).collect();
    let mut order: Vec<usize> = (0..shares.len()).collect();
    order.sort_by(|&a, &b| {
        let (fa, fb) = (exact[a] - exact[a].floor(), exact[b] - exact[b].floor());
        fb.partial_cmp(&fa).unwrap().then(a.cmp(&b))
    });
    let mut left = n - counts.iter().sum::<usize>();
    for i in order {
        if left == 0 {
            break;
        }
        counts[i] += 1;
        left -= 1;
    }
    counts
}

fn breath_noise(n: usize, rate: u32, amp: f64, rng: &mut ChaCha8Rng) -> Vec<f64> {
    // White noise through a one-pole high-pass (~100 Hz) and two one-pole
    // low-passes (~700 Hz).
    let normal = Normal::new(0.0, 1.0).unwrap();
    let r = rate as f64;
    let a_hp = (-2.0 * PI * 100.0 / r).exp();
    let a_lp = (-2.0 * PI * 700.0 / r).exp();
    let (mut x_prev, mut hp, mut lp1, mut lp2) = (0.0, 0.0, 0.0, 0.0);
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let x: f64 = normal.sample(rng);
        hp = a_hp * (hp + x - x_prev);
        x_prev = x;
        lp1 = a_lp * lp1 + (1.0 - a_lp) * hp;
        lp2 = a_lp * lp2 + (1.0 - a_lp) * lp1;
        // Slow breathing envelope.
        let env = 0.75 + 0.25 * (2.0 * PI * 0.4 * i as f64 / r).sin();
        out.push(lp2 * env);
    }
    let rms = (out.iter().map(|v| v * v).sum::<f64>() / n.max(1) as f64).sqrt();
    if rms > 0.0 {
        out.iter_mut().for_each(|v| *v *= amp / rms);
    }
    out
}

fn add_crackles(buf: &mut [f64], rate: u32, coarse: bool, rng: &mut ChaCha8Rng) {
    let n_bursts = rng.gen_range(5..=20);
    let r = rate as f64;
    for _ in 0..n_bursts {
        let (f, tau) = if coarse {
            (rng.gen_range(200.0..450.0), rng.gen_range(0.006..0.012))
        } else {
            (rng.gen_range(800.0..1500.0), rng.gen_range(0.0015..0.004))
        };
        let amp = rng.gen_range(0.4..0.8);
        let start = rng.gen_range(0..buf.len());
        let len = ((5.0 * tau * r) as usize).min(buf.len() - start);
        for j in 0..len {
            let t = j as f64 / r;
            buf[start + j] += amp * (-t / tau).exp() * (2.0 * PI * f * t).sin();
        }
    }
}

fn add_tone(buf: &mut [f64], rate: u32, band: (f64, f64), amp: f64, rng: &mut ChaCha8Rng) {
    let f0 = rng.gen_range(band.0..band.1);
    let vib = rng.gen_range(2.0..6.0);
    let r = rate as f64;
    let n = buf.len() as f64;
    let mut phase = 0.0;
    for (i, v) in buf.iter_mut().enumerate() {
        let f = f0 * (1.0 + 0.02 * (2.0 * PI * vib * i as f64 / r).sin());
        phase += 2.0 * PI * f / r;
        // Short fades avoid clicks at the event edges.
        let edge = (i as f64 / (0.02 * r)).min((n - i as f64) / (0.02 * r)).min(1.0);
        *v += amp * edge * (phase.sin() + 0.3 * (2.0 * phase).sin());
    }
}

/// Synthetic waveform of one event type. Deterministic in `(kind, duration_ms, rate, seed)`.
pub fn synth_event_waveform(kind: EventLabel, duration_ms: u32, rate: u32, seed: u64) -> Result<Waveform> {
    if duration_ms < 100 {
        return Err(Error::InvalidInput(format!("event duration {duration_ms} ms below 100 ms")));
    }
    if rate < 4000 {
        return Err(Error::InvalidInput(format!("sample rate {rate} below 4 kHz")));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = (duration_ms as u64 * rate as u64 / 1000) as usize;
    let noise_amp = if kind == EventLabel::NoEvent { 0.03 } else { 0.05 };
    let mut buf = breath_noise(n, rate, noise_amp, &mut rng);
    use EventLabel::*;
    match kind {
        Normal | NoEvent => {}
        FineCrackle => add_crackles(&mut buf, rate, false, &mut rng),
        CoarseCrackle => add_crackles(&mut buf, rate, true, &mut rng),
        Wheeze => add_tone(&mut buf, rate, (400.0, 800.0), 0.2, &mut rng),
        Rhonchi => add_tone(&mut buf, rate, (100.0, 300.0), 0.25, &mut rng),
        Stridor => add_tone(&mut buf, rate, (800.0, 1500.0), 0.2, &mut rng),
        WheezeCrackle => {
            add_tone(&mut buf, rate, (400.0, 800.0), 0.15, &mut rng);
            let coarse = rng.gen_bool(0.5);
            add_crackles(&mut buf, rate, coarse, &mut rng);
        }
    }
    Waveform::new(buf.into_iter().map(|v| v.clamp(-1.0, 1.0) as f32).collect(), rate)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthPatient {
    pub patient_id: String,
    pub disease_group: String,
    pub diagnosis: Diagnosis,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TruthEvent {
    pub event_id: String,
    pub patient_id: String,
    pub label: EventLabel,
    pub seed: u64,
}

/// Ground truth for test assertions.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthManifest {
    pub spec: SynthSpec,
    pub group_counts: [usize; 4],
    pub patients: Vec<TruthPatient>,
    pub events: Vec<TruthEvent>,
}

pub struct SynthCohort {
    pub corpus: Corpus,
    pub manifest: SynthManifest,
}

fn diagnoses(group: usize) -> &'static [Diagnosis] {
    use Diagnosis::*;
    match group {
        0 => &[PneumoniaNonSevere, PneumoniaSevere],
        1 => &[Asthma, Bronchitis, Bronchiolitis, Bronchiectasis, ProtractedBacterialBronchitis],
        2 => &[ControlGroup],
        _ => &[
            AcuteUpperRespiratoryInfection,
            AirwayForeignBody,
            ChronicCough,
            Hemoptysis,
            OtherRespiratoryDiseases,
            PulmonaryHemosiderosis,
            Unknown,
        ],
    }
}

fn sample_mix(mix: &EventMix, rng: &mut ChaCha8Rng) -> EventLabel {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, p) in mix.iter().enumerate() {
        acc += p;
        if u < acc {
            return EventLabel::ALL[i];
        }
    }
    EventLabel::Normal
}

struct PatientDraw {
    meta: PatientMeta,
    truth: TruthPatient,
    records: Vec<Record>,
    events: Vec<EventAnnotation>,
    truth_events: Vec<TruthEvent>,
}

fn draw_patient(spec: &SynthSpec, idx: usize, group: usize, sex: Sex) -> Result<PatientDraw> {
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rng.set_stream(idx as u64 + 1);
    let patient_seed: u64 = rng.gen();
    let pid = format!("S{idx:04}");
    let (a0, a1) = spec.age_range[group];
    let age = if a1 > a0 { rng.gen_range(a0..a1) } else { a0 };
    let age = (age * 10.0).round() / 10.0;
    let dx = diagnoses(group);
    let diagnosis = dx[rng.gen_range(0..dx.len())];

    let n_events = rng.gen_range(spec.events_per_patient.0..=spec.events_per_patient.1);
    let n_records = rng.gen_range(1..=n_events.min(4));
    let mut locs = Location::ALL.to_vec();
    rand::seq::SliceRandom::shuffle(locs.as_mut_slice(), &mut rng);

    let rate = spec.sample_rate;
    let mut records = Vec::new();
    let mut events = Vec::new();
    let mut truth_events = Vec::new();
    for r in 0..n_records {
        let rid = format!("{pid}_r{r}");
        // Spread events over records as evenly as possible.
        let count = n_events / n_records + usize::from(r < n_events % n_records);
        let gain = rng.gen_range(0.8..1.25);
        let mut samples: Vec<f64> = Vec::new();
        let mut cursor_ms = 0u32;
        let gap = |ms: u32, rng: &mut ChaCha8Rng| breath_noise((ms * rate / 1000) as usize, rate, 0.05, rng);
        for _ in 0..count {
            let lead = rng.gen_range(150..400);
            samples.extend(gap(lead, &mut rng));
            cursor_ms += lead;
            let label = sample_mix(&spec.event_mix[group], &mut rng);
            let dur = rng.gen_range(spec.event_ms.0..=spec.event_ms.1);
            let ev_seed: u64 = rng.gen();
            let w = synth_event_waveform(label, dur, rate, ev_seed)?;
            samples.extend(w.samples.iter().map(|&s| s as f64));
            let ev = EventAnnotation {
                record_id: rid.clone(),
                start_ms: cursor_ms,
                end_ms: cursor_ms + dur,
                label,
                location: locs[r],
            };
            cursor_ms += dur;
            truth_events.push(TruthEvent {
                event_id: ev.event_id(),
                patient_id: pid.clone(),
                label,
                seed: ev_seed,
            });
            events.push(ev);
        }
        let tail = rng.gen_range(150..400);
        samples.extend(gap(tail, &mut rng));
        let wave = Waveform::new(
            samples.into_iter().map(|v| (v * gain).clamp(-1.0, 1.0) as f32).collect(),
            rate,
        )?;
        records.push(Record {
            record_id: rid,
            patient_id: pid.clone(),
            location: locs[r],
            audio: AudioRef::Memory(Arc::new(wave)),
            poor_quality: false,
        });
    }
    Ok(PatientDraw {
        meta: PatientMeta {
            patient_id: pid.clone(),
            age,
            sex,
            diagnosis,
        },
        truth: TruthPatient {
            patient_id: pid,
            disease_group: DISEASE_GROUPS[group].to_string(),
            diagnosis,
            seed: patient_seed,
        },
        records,
        events,
        truth_events,
    })
}

/// Generates a cohort with in-memory audio; see `corpus::write_layout` to
/// persist it in the adapter layout.
pub fn synth_cohort(spec: &SynthSpec) -> Result<SynthCohort> {
    spec.validate()?;
    let counts = allocate(spec.n_patients, &spec.group_mix);
    let mut groups: Vec<usize> = counts.iter().enumerate().flat_map(|(g, &c)| vec![g; c]).collect();
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    rand::seq::SliceRandom::shuffle(groups.as_mut_slice(), &mut rng);
    // Balanced sexes: alternate, then shuffle.
    let mut sexes: Vec<Sex> = (0..spec.n_patients)
        .map(|i| if i % 2 == 0 { Sex::Male } else { Sex::Female })
        .collect();
    rand::seq::SliceRandom::shuffle(sexes.as_mut_slice(), &mut rng);

    let draws: Vec<PatientDraw> = (0..spec.n_patients)
        .into_par_iter()
        .map(|i| draw_patient(spec, i, groups[i], sexes[i]))
        .collect::<Result<_>>()?;

    let mut patients = Vec::new();
    let mut records = Vec::new();
    let mut events = Vec::new();
    let mut truth_p = Vec::new();
    let mut truth_e = Vec::new();
    for d in draws {
        patients.push(d.meta);
        truth_p.push(d.truth);
        records.extend(d.records);
        events.extend(d.events);
        truth_e.extend(d.truth_events);
    }
    Ok(SynthCohort {
        corpus: Corpus::new(patients, records, events)?,
        manifest: SynthManifest {
            spec: spec.clone(),
            group_counts: [counts[0], counts[1], counts[2], counts[3]],
            patients: truth_p,
            events: truth_e,
        },
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dsp::power_spectrogram;

    fn flatness(w: &Waveform) -> f64 {
        let spec = power_spectrogram(&w.samples, 256, 128, 256);
        let mean = spec.mean_axis(ndarray::Axis(0)).unwrap();
        let n = mean.len() as f64;
        let g = (mean.iter().map(|p| (p + 1e-12).ln()).sum::<f64>() / n).exp();
        g / (mean.sum() / n)
    }

    fn peak_to_rms(w: &Waveform) -> f64 {
        let peak = w.samples.iter().fold(0.0f32, |m, s| m.max(s.abs())) as f64;
        let rms = (w.samples.iter().map(|s| (*s as f64).powi(2)).sum::<f64>() / w.len() as f64).sqrt();
        peak / rms
    }

    #[test]
    fn waveforms_are_deterministic() {
        let a = synth_event_waveform(EventLabel::FineCrackle, 800, 8000, 11).unwrap();
        let b = synth_event_waveform(EventLabel::FineCrackle, 800, 8000, 11).unwrap();
        assert_eq!(a.samples, b.samples);
        assert_eq!(a.len(), 6400);
    }

    #[test]
    fn wheeze_is_less_flat_than_normal() {
        for seed in 0..5 {
            let n = synth_event_waveform(EventLabel::Normal, 1000, 8000, seed).unwrap();
            let w = synth_event_waveform(EventLabel::Wheeze, 1000, 8000, seed).unwrap();
            assert!(flatness(&w) < flatness(&n));
        }
    }

    #[test]
    fn crackle_is_peakier_than_normal() {
        for seed in 0..5 {
            let n = synth_event_waveform(EventLabel::Normal, 1000, 8000, seed).unwrap();
            let c = synth_event_waveform(EventLabel::CoarseCrackle, 1000, 8000, seed).unwrap();
            assert!(peak_to_rms(&c) > peak_to_rms(&n));
        }
    }

    #[test]
    fn too_short_rejected() {
        assert!(synth_event_waveform(EventLabel::Normal, 99, 8000, 0).is_err());
    }

    #[test]
    fn allocation_within_one() {
        let c = allocate(200, &[0.55, 0.22, 0.10, 0.13]);
        assert_eq!(c, vec![110, 44, 20, 26]);
        let c = allocate(7, &[0.5, 0.5]);
        assert_eq!(c.iter().sum::<usize>(), 7);
    }

    #[test]
    fn small_cohort_is_deterministic_and_valid() {
        let spec = SynthSpec {
            n_patients: 12,
            seed: 4,
            ..Default::default()
        };
        let a = synth_cohort(&spec).unwrap();
        let b = synth_cohort(&spec).unwrap();
        assert_eq!(a.manifest, b.manifest);
        assert_eq!(a.corpus.patients().len(), 12);
        assert_eq!(a.corpus.events().len(), a.manifest.events.len());
        for r in a.corpus.records() {
            let w = r.audio.load().unwrap();
            assert_eq!(w.sample_rate, 8000);
            let evs: Vec<_> = a.corpus.events().iter().filter(|e| e.record_id == r.record_id).collect();
            assert!(!evs.is_empty());
            assert!(evs.iter().all(|e| (e.end_ms as f64) <= w.duration_ms()));
        }
    }

    #[test]
    fn infeasible_mix_rejected() {
        let spec = SynthSpec {
            group_mix: [0.5, 0.5, 0.5, 0.0],
            ..Default::default()
        };
        assert!(synth_cohort(&spec).is_err());
    }
}
