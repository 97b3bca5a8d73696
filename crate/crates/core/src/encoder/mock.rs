//! Deterministic stand-in for the foundation encoder: a fixed bank of
//! interpretable spectral features followed by a seeded linear projection
//! to 512 dimensions.

use ndarray::{Array1, Array2, ArrayView2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use super::{clip_key, hex, Embedding, EncoderBackend, EMBEDDING_DIM};
use crate::dsp::{mel_filterbank, power_spectrogram, Clip, CLIP_RATE};
use crate::error::Result;

pub const N_BANDS: usize = 32;
/// 32 log band energies, zero-crossing rate, spectral centroid, spectral
/// flatness, log RMS.
pub const FEATURE_DIM: usize = N_BANDS + 4;

const WIN: usize = 400;
const HOP: usize = 160;
const N_FFT: usize = 512;
const FLOOR: f64 = 1e-8;

#[derive(Debug, Clone)]
pub struct FeatureFrontEnd {
    filterbank: Array2<f64>,
    bin_hz: Array1<f64>,
}

impl Default for FeatureFrontEnd {
    fn default() -> Self {
        let (filterbank, _) = mel_filterbank(N_BANDS, N_FFT, CLIP_RATE, 50.0, CLIP_RATE as f64 / 2.0);
        let bin_hz = Array1::from_iter(
            (0..N_FFT / 2 + 1).map(|k| k as f64 * CLIP_RATE as f64 / N_FFT as f64),
        );
        FeatureFrontEnd { filterbank, bin_hz }
    }
}

impl FeatureFrontEnd {
    /// Unscaled feature bank.
    pub fn raw_features(&self, clip: &Clip) -> Vec<f64> {
        let samples = clip.samples();
        let spec = power_spectrogram(samples, WIN, HOP, N_FFT);
        let mean_power = spec
            .mean_axis(Axis(0))
            .unwrap_or_else(|| Array1::zeros(N_FFT / 2 + 1));
        let bands = self.filterbank.dot(&mean_power);

        let mut out: Vec<f64> = bands.iter().map(|e| (e + FLOOR).ln()).collect();

        let crossings = samples
            .windows(2)
            .filter(|w| (w[0] > 0.0 && w[1] < 0.0) || (w[0] < 0.0 && w[1] > 0.0))
            .count();
        out.push(crossings as f64 / (samples.len().max(2) - 1) as f64);

        let total: f64 = mean_power.sum();
        let centroid = if total > 0.0 {
            mean_power.dot(&self.bin_hz) / total
        } else {
            0.0
        };
        out.push(centroid);

        let n = mean_power.len() as f64;
        let log_mean = mean_power.iter().map(|p| (p + FLOOR).ln()).sum::<f64>() / n;
        out.push(log_mean.exp() / (total / n + FLOOR));

        let rms = (samples.iter().map(|&s| (s as f64).powi(2)).sum::<f64>()
            / samples.len().max(1) as f64)
            .sqrt();
        out.push((rms + FLOOR).ln());
        out
    }

    /// Feature bank mapped to roughly unit scale with fixed affine constants.
    pub fn features(&self, clip: &Clip) -> Vec<f64> {
        let mut f = self.raw_features(clip);
        for v in &mut f[..N_BANDS] {
            *v = (*v + 8.0) / 4.0;
        }
        f[N_BANDS] *= 4.0;
        f[N_BANDS + 1] /= 2000.0;
        f[N_BANDS + 2] *= 4.0;
        f[N_BANDS + 3] = (f[N_BANDS + 3] + 4.0) / 2.0;
        f
    }
}

/// Linear map from the feature bank to the embedding space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Projection {
    /// `EMBEDDING_DIM x FEATURE_DIM`
    pub weights: Array2<f64>,
}

impl Projection {
    pub fn seeded(seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let normal = Normal::new(0.0, 1.0 / (FEATURE_DIM as f64).sqrt()).unwrap();
        let weights = Array2::from_shape_fn((EMBEDDING_DIM, FEATURE_DIM), |_| normal.sample(&mut rng));
        Projection { weights }
    }

    /// Rows of `features` (n x FEATURE_DIM) to embeddings (n x 512).
    pub fn forward(&self, features: ArrayView2<f64>) -> Array2<f64> {
        features.dot(&self.weights.t())
    }

    pub fn checksum(&self) -> String {
        let mut h = Sha256::new();
        for w in self.weights.iter() {
            h.update(w.to_bits().to_le_bytes());
        }
        hex(&h.finalize())
    }
}

#[derive(Debug, Clone)]
pub struct MockEncoder {
    pub seed: u64,
    /// `mock-s<seed>`: the seed selects the projection, so it is part of the
    /// cache identity.
    id: String,
    front_end: FeatureFrontEnd,
    projection: Projection,
    trainable: bool,
}

impl MockEncoder {
    /// Non-trainable mock (the default).
    pub fn new(seed: u64) -> Self {
        MockEncoder {
            seed,
            id: format!("mock-s{seed}"),
            front_end: FeatureFrontEnd::default(),
            projection: Projection::seeded(seed),
            trainable: false,
        }
    }

    /// Mock whose projection may be updated by end-to-end fine-tuning.
    pub fn trainable(seed: u64) -> Self {
        MockEncoder {
            trainable: true,
            ..Self::new(seed)
        }
    }

    pub fn front_end(&self) -> &FeatureFrontEnd {
        &self.front_end
    }

    pub fn projection(&self) -> &Projection {
        &self.projection
    }

    pub fn features(&self, clip: &Clip) -> Result<Vec<f64>> {
        clip.check_contract()?;
        Ok(self.front_end.features(clip))
    }
}

/// Embeds a clip with a freshly seeded mock encoder.
pub fn mock_encode(clip: &Clip, seed: u64) -> Result<Embedding> {
    MockEncoder::new(seed).embed(clip)
}

impl EncoderBackend for MockEncoder {
    fn backend_id(&self) -> &str {
        &self.id
    }

    fn version(&self) -> u32 {
        1
    }

    fn trainable(&self) -> bool {
        self.trainable
    }

    fn deterministic(&self) -> bool {
        true
    }

    fn embed(&self, clip: &Clip) -> Result<Embedding> {
        let f = self.features(clip)?;
        let v: Vec<f32> = self
            .projection
            .weights
            .rows()
            .into_iter()
            .map(|row| row.iter().zip(&f).map(|(w, x)| w * x).sum::<f64>() as f32)
            .collect();
        Embedding::new(v, self.backend_id(), clip_key(clip))
    }

    fn parameter_checksum(&self) -> String {
        self.projection.checksum()
    }

    fn tunable_projection(&self) -> Option<&Projection> {
        self.trainable.then_some(&self.projection)
    }

    fn tunable_features(&self, clip: &Clip) -> Option<Result<Vec<f64>>> {
        self.trainable.then(|| self.features(clip))
    }
}

#[cfg(test)]
mod tests {
    use std::f64::consts::PI;

    use super::*;
    use crate::encoder::cosine_similarity;

    fn tone(freq: f64) -> Clip {
        Clip::from_samples(
            (0..32_000)
                .map(|i| 0.3 * (2.0 * PI * freq * i as f64 / 16_000.0).sin() as f32)
                .collect(),
        )
    }

    #[test]
    fn output_has_512_finite_entries_and_is_deterministic() {
        let e = MockEncoder::new(7);
        let a = e.embed(&tone(440.0)).unwrap();
        let b = e.embed(&tone(440.0)).unwrap();
        assert_eq!(a.vector.len(), 512);
        assert!(a.vector.iter().all(|v| v.is_finite()));
        assert_eq!(a.vector, b.vector);
    }

    #[test]
    fn distinct_tones_are_distinguishable() {
        let e = MockEncoder::new(7);
        let a = e.embed(&tone(200.0)).unwrap();
        let b = e.embed(&tone(2000.0)).unwrap();
        assert!(cosine_similarity(&a.vector, &b.vector) < 0.99);
    }

    #[test]
    fn silent_clip_gives_floor_features_and_finite_embedding() {
        let clip = Clip::from_samples(vec![0.0; 32_000]);
        let fe = FeatureFrontEnd::default();
        let raw = fe.raw_features(&clip);
        assert!(raw[..N_BANDS].iter().all(|&v| v == FLOOR.ln()));
        assert_eq!(raw[N_BANDS], 0.0);
        assert_eq!(raw[N_BANDS + 1], 0.0);
        let emb = mock_encode(&clip, 1).unwrap();
        assert!(emb.vector.iter().all(|v| v.is_finite()));
    }

    #[test]
    fn doubling_gain_shifts_band_energies_by_ln4() {
        let fe = FeatureFrontEnd::default();
        let a = tone(700.0);
        let b = Clip::from_samples(a.samples().iter().map(|s| 2.0 * s).collect());
        let fa = fe.raw_features(&a);
        let fb = fe.raw_features(&b);
        for k in 0..N_BANDS {
            // Bands far from the tone sit near the floor, where the offset is
            // diluted; check only bands with real energy.
            if fa[k] > -3.0 {
                assert!((fb[k] - fa[k] - 4f64.ln()).abs() < 1e-5, "band {k}");
            }
        }
    }

    #[test]
    fn seed_changes_projection() {
        let a = mock_encode(&tone(300.0), 1).unwrap();
        let b = mock_encode(&tone(300.0), 2).unwrap();
        assert_ne!(a.vector, b.vector);
    }

    #[test]
    fn non_conforming_clip_rejected() {
        let err = MockEncoder::new(1).embed(&Clip::from_samples(vec![0.0; 100])).unwrap_err();
        assert!(matches!(err, crate::Error::ClipContract { .. }));
    }
}
