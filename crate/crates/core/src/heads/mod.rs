//! Task-specific classification heads and two-phase training.
//!
//! Phase 1 trains only the head on fixed embeddings. Phase 2 continues at a
//! lower learning rate and, when the backend exposes a tunable projection,
//! updates that projection jointly with the head. Each phase stops early
//! once validation macro-F1 has not improved for `early_stop_patience`
//! epochs; the best-scoring state over both phases is returned.

use std::path::Path;

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::encoder::{EncoderBackend, Projection};
use crate::error::{Error, Result};
use crate::metrics::{argmax_rows, macro_f1};
use crate::tasks::TaskId;

mod mlp;

pub use mlp::{softmax_rows, Adam, Mlp, MlpGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadConfig {
    pub input_dim: usize,
    pub hidden_dim: usize,
    pub dropout_p: f64,
    pub n_classes: usize,
    pub activation: Activation,
    /// L2-normalize embeddings before the head. Disables encoder fine-tuning.
    pub l2_normalize: bool,
}

impl HeadConfig {
    pub fn new(n_classes: usize) -> Self {
        HeadConfig {
            input_dim: crate::encoder::EMBEDDING_DIM,
            hidden_dim: 256,
            dropout_p: 0.3,
            n_classes,
            activation: Activation::Relu,
            l2_normalize: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden_dim == 0 || self.n_classes < 2 {
            return Err(Error::InvalidInput(format!("invalid head dimensions {self:?}")));
        }
        if !(0.0..1.0).contains(&self.dropout_p) {
            return Err(Error::InvalidInput(format!("dropout {} outside [0, 1)", self.dropout_p)));
        }
        Ok(())
    }

    /// SHA-256 over the canonical JSON form.
    pub fn hash(&self) -> String {
        let bytes = serde_json::to_vec(self).expect("config serializes");
        crate::encoder::hex(&Sha256::digest(bytes))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainingSchedule {
    pub phase1_epochs: usize,
    pub phase1_lr: f64,
    pub phase2_epochs: usize,
    pub phase2_lr: f64,
    pub batch_size: usize,
    pub early_stop_patience: usize,
    /// Explicit per-class loss weights; computed from the labels when absent.
    pub class_weights: Option<Vec<f64>>,
    pub seed: u64,
}

impl Default for TrainingSchedule {
    fn default() -> Self {
        TrainingSchedule {
            phase1_epochs: 10,
            phase1_lr: 1e-4,
            phase2_epochs: 40,
            phase2_lr: 5e-7,
            batch_size: 32,
            early_stop_patience: 5,
            class_weights: None,
            seed: 0,
        }
    }
}

impl TrainingSchedule {
    /// Short schedule with larger steps for synthetic and test runs.
    pub fn fast() -> Self {
        TrainingSchedule {
            phase1_epochs: 25,
            phase1_lr: 1e-3,
            phase2_epochs: 5,
            phase2_lr: 1e-5,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.phase1_lr > 0.0 && self.phase2_lr > 0.0) {
            return Err(Error::InvalidInput("learning rates must be positive".into()));
        }
        if self.batch_size == 0 {
            return Err(Error::InvalidInput("batch size must be positive".into()));
        }
        if let Some(w) = &self.class_weights {
            if w.iter().any(|v| !(*v > 0.0 && v.is_finite())) {
                return Err(Error::InvalidInput("class weights must be positive".into()));
            }
        }
        Ok(())
    }
}

/// `N / (K * count_c)` per class.
pub fn compute_class_weights(labels: &[usize], k: usize) -> Result<Vec<f64>> {
    let mut counts = vec![0usize; k];
    for &l in labels {
        if l >= k {
            return Err(Error::InvalidInput(format!("label {l} out of range for {k} classes")));
        }
        counts[l] += 1;
    }
    if let Some(c) = counts.iter().position(|&n| n == 0) {
        return Err(Error::AbsentClass(c.to_string()));
    }
    let n = labels.len() as f64;
    Ok(counts.iter().map(|&c| n / (k as f64 * c as f64)).collect())
}

/// Model inputs: embeddings, plus the encoder's pre-projection features when
/// the encoder can be fine-tuned.
#[derive(Debug, Clone, PartialEq)]
pub struct TaskInputs {
    pub embeddings: Array2<f64>,
    pub features: Option<Array2<f64>>,
}

impl TaskInputs {
    pub fn from_embeddings(embeddings: Array2<f64>) -> Self {
        TaskInputs {
            embeddings,
            features: None,
        }
    }

    pub fn len(&self) -> usize {
        self.embeddings.nrows()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn select(&self, rows: &[usize]) -> TaskInputs {
        TaskInputs {
            embeddings: self.embeddings.select(Axis(0), rows),
            features: self.features.as_ref().map(|f| f.select(Axis(0), rows)),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub phase: u8,
    pub epoch: usize,
    /// Class-weighted loss over the full training set, dropout off.
    pub train_loss: f64,
    pub val_macro_f1: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainedTaskModel {
    pub task_id: TaskId,
    pub config: HeadConfig,
    pub schedule: TrainingSchedule,
    pub head: Mlp,
    /// Fine-tuned projection; `None` when the encoder stayed frozen.
    pub encoder_state: Option<Projection>,
    pub class_weights: Vec<f64>,
    pub initial_train_loss: f64,
    pub history: Vec<EpochRecord>,
    pub best_epoch: Option<(u8, usize)>,
    /// Encoder checksum before training and after phase 1.
    pub encoder_checksum_before: String,
    pub encoder_checksum_after_phase1: String,
}

fn normalize_rows(x: &mut Array2<f64>) {
    for mut r in x.rows_mut() {
        let n = r.dot(&r).sqrt();
        if n > 0.0 {
            r /= n;
        }
    }
}

impl TrainedTaskModel {
    fn head_inputs(&self, inputs: &TaskInputs) -> Result<Array2<f64>> {
        let mut x = match (&self.encoder_state, &inputs.features) {
            (Some(p), Some(f)) => p.forward(f.view()),
            (Some(_), None) => {
                return Err(Error::InvalidInput(
                    "model has a fine-tuned encoder; encoder features are required".into(),
                ))
            }
            (None, _) => inputs.embeddings.clone(),
        };
        if x.ncols() != self.config.input_dim {
            return Err(Error::Dimension {
                expected: self.config.input_dim,
                actual: x.ncols(),
            });
        }
        if self.config.l2_normalize {
            normalize_rows(&mut x);
        }
        Ok(x)
    }

    /// Class probabilities, dropout disabled.
    pub fn predict(&self, inputs: &TaskInputs) -> Result<Array2<f64>> {
        Ok(self.head.predict_proba(self.head_inputs(inputs)?.view()))
    }

    /// Class probabilities straight from embeddings.
    pub fn predict_proba(&self, embeddings: ArrayView2<f64>) -> Result<Array2<f64>> {
        self.predict(&TaskInputs::from_embeddings(embeddings.to_owned()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let ck = Checkpoint {
            format: CHECKPOINT_FORMAT.into(),
            config_hash: self.config.hash(),
            model: self.clone(),
        };
        let tmp = path.with_extension("tmp");
        serde_json::to_writer(std::io::BufWriter::new(std::fs::File::create(&tmp)?), &ck)?;
        std::fs::rename(tmp, path)?;
        Ok(())
    }

    /// Loads a checkpoint, refusing one trained under a different config.
    pub fn load(path: &Path, expected: &HeadConfig) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_reader(std::io::BufReader::new(std::fs::File::open(path)?))?;
        if ck.format != CHECKPOINT_FORMAT {
            return Err(Error::InvalidInput(format!("unsupported checkpoint format {}", ck.format)));
        }
        let want = expected.hash();
        if ck.config_hash != want || ck.model.config.hash() != want {
            return Err(Error::ConfigMismatch {
                expected: want,
                found: ck.config_hash,
            });
        }
        Ok(ck.model)
    }
}

const CHECKPOINT_FORMAT: &str = "lungstack-head/1";

#[derive(Serialize, Deserialize)]
struct Checkpoint {
    format: String,
    config_hash: String,
    model: TrainedTaskModel,
}

/// Trains with validation macro-F1 on `val` as the early-stopping signal.
/// An empty `val` falls back to training-set macro-F1.
pub fn train_two_stage(
    task_id: TaskId,
    config: &HeadConfig,
    schedule: &TrainingSchedule,
    backend: &dyn EncoderBackend,
    train: &TaskInputs,
    train_labels: &[usize],
    val: &TaskInputs,
    val_labels: &[usize],
) -> Result<TrainedTaskModel> {
    let k = config.n_classes;
    if val.is_empty() {
        log::warn!("{task_id}: empty validation set; early stopping on training macro-F1");
    }
    let (vx, vy) = if val.is_empty() { (train, train_labels) } else { (val, val_labels) };
    let mut scorer = |m: &TrainedTaskModel| -> Result<f64> {
        let pred = argmax_rows(&m.predict(vx)?);
        macro_f1(vy, &pred, k)
    };
    train_two_stage_with(task_id, config, schedule, backend, train, train_labels, &mut scorer)
}

/// Mutable training state: head, optional projection, optimizers.
struct State {
    head: Mlp,
    proj: Option<Projection>,
}

/// Like [`train_two_stage`] with a caller-supplied validation score
/// (higher is better).
pub fn train_two_stage_with(
    task_id: TaskId,
    config: &HeadConfig,
    schedule: &TrainingSchedule,
    backend: &dyn EncoderBackend,
    train: &TaskInputs,
    labels: &[usize],
    val_score: &mut dyn FnMut(&TrainedTaskModel) -> Result<f64>,
) -> Result<TrainedTaskModel> {
    config.validate()?;
    schedule.validate()?;
    if train.is_empty() {
        return Err(Error::Empty(format!("{task_id}: empty training set")));
    }
    if labels.len() != train.len() {
        return Err(Error::Dimension {
            expected: train.len(),
            actual: labels.len(),
        });
    }
    if train.embeddings.ncols() != config.input_dim {
        return Err(Error::Dimension {
            expected: config.input_dim,
            actual: train.embeddings.ncols(),
        });
    }
    let class_weights = match &schedule.class_weights {
        Some(w) if w.len() == config.n_classes => w.clone(),
        Some(w) => {
            return Err(Error::Dimension {
                expected: config.n_classes,
                actual: w.len(),
            })
        }
        None => compute_class_weights(labels, config.n_classes)?,
    };

    let checksum_before = backend.parameter_checksum();
    let tunable = if config.l2_normalize {
        None
    } else {
        backend.tunable_projection().filter(|_| train.features.is_some()).cloned()
    };
    if backend.trainable() && tunable.is_none() {
        log::info!("{task_id}: encoder not tunable in-process; phase 2 trains the head only");
    }

    let mut fixed = train.embeddings.clone();
    if config.l2_normalize {
        normalize_rows(&mut fixed);
    }

    let mut model = TrainedTaskModel {
        task_id,
        config: config.clone(),
        schedule: schedule.clone(),
        head: Mlp::init(config.input_dim, config.hidden_dim, config.n_classes, schedule.seed),
        encoder_state: None,
        class_weights: class_weights.clone(),
        initial_train_loss: f64::NAN,
        history: Vec::new(),
        best_epoch: None,
        encoder_checksum_before: checksum_before.clone(),
        encoder_checksum_after_phase1: String::new(),
    };
    let full_loss = |st: &State| -> f64 {
        let x = match (&st.proj, &train.features) {
            (Some(p), Some(f)) => p.forward(f.view()),
            _ => fixed.clone(),
        };
        st.head.loss_and_grad(x.view(), labels, &class_weights, None).0
    };
    let mut state = State {
        head: model.head.clone(),
        proj: None,
    };
    model.initial_train_loss = full_loss(&state);

    let mut best: Option<(f64, Mlp, Option<Projection>)> = None;
    for phase in [1u8, 2] {
        let (epochs, lr) = if phase == 1 {
            (schedule.phase1_epochs, schedule.phase1_lr)
        } else {
            (schedule.phase2_epochs, schedule.phase2_lr)
        };
        if phase == 2 {
            state.proj = tunable.clone();
        }
        let mut head_opt = Adam::new(state.head.w1.len() + state.head.b1.len() + state.head.w2.len() + state.head.b2.len());
        let mut proj_opt = state.proj.as_ref().map(|p| Adam::new(p.weights.len()));
        let mut rng = ChaCha8Rng::seed_from_u64(schedule.seed);
        rng.set_stream(phase as u64);
        let mut order: Vec<usize> = (0..train.len()).collect();
        let mut since_best = 0;

        for epoch in 1..=epochs {
            order.shuffle(&mut rng);
            for (b, batch) in order.chunks(schedule.batch_size).enumerate() {
                let y: Vec<usize> = batch.iter().map(|&i| labels[i]).collect();
                let feats = match (&state.proj, &train.features) {
                    (Some(_), Some(f)) => Some(f.select(Axis(0), batch)),
                    _ => None,
                };
                let x = match (&state.proj, &feats) {
                    (Some(p), Some(f)) => p.forward(f.view()),
                    _ => fixed.select(Axis(0), batch),
                };
                let mask = (config.dropout_p > 0.0)
                    .then(|| Mlp::dropout_mask(batch.len(), config.hidden_dim, config.dropout_p, &mut rng));
                let (loss, g) = state.head.loss_and_grad(x.view(), &y, &class_weights, mask.as_ref());
                if !loss.is_finite() {
                    return Err(Error::NonFiniteLoss {
                        phase: if phase == 1 { "phase1" } else { "phase2" },
                        epoch,
                        batch: b,
                    });
                }
                let h = &mut state.head;
                head_opt.step(
                    &mut [
                        h.w1.as_slice_mut().unwrap(),
                        h.b1.as_slice_mut().unwrap(),
                        h.w2.as_slice_mut().unwrap(),
                        h.b2.as_slice_mut().unwrap(),
                    ],
                    &[
                        g.w1.as_slice().unwrap(),
                        g.b1.as_slice().unwrap(),
                        g.w2.as_slice().unwrap(),
                        g.b2.as_slice().unwrap(),
                    ],
                    lr,
                );
                if let (Some(p), Some(opt), Some(f)) = (state.proj.as_mut(), proj_opt.as_mut(), feats.as_ref()) {
                    // embeddings = F W^T  =>  dL/dW = (dL/dE)^T F
                    let gp = g.x.t().dot(f);
                    opt.step(&mut [p.weights.as_slice_mut().unwrap()], &[gp.as_slice().unwrap()], lr);
                }
            }

            let train_loss = full_loss(&state);
            model.head = state.head.clone();
            model.encoder_state = state.proj.clone();
            let score = val_score(&model)?;
            model.history.push(EpochRecord {
                phase,
                epoch,
                train_loss,
                val_macro_f1: score,
            });
            if best.as_ref().map_or(true, |(s, _, _)| score > *s) {
                best = Some((score, state.head.clone(), state.proj.clone()));
                model.best_epoch = Some((phase, epoch));
                since_best = 0;
            } else {
                since_best += 1;
                if since_best >= schedule.early_stop_patience {
                    log::debug!("{task_id}: phase {phase} stopped early at epoch {epoch}");
                    break;
                }
            }
        }
        // The next phase, and the returned model, start from the best state.
        if let Some((_, h, p)) = &best {
            state.head = h.clone();
            state.proj = p.clone();
        }
        if phase == 1 {
            model.encoder_checksum_after_phase1 = backend.parameter_checksum();
            if model.encoder_checksum_after_phase1 != checksum_before {
                return Err(Error::Integrity("encoder parameters changed during phase 1".into()));
            }
        }
    }
    model.head = state.head;
    model.encoder_state = state.proj;
    Ok(model)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoder::MockEncoder;

    #[test]
    fn class_weight_examples() {
        let mut l = vec![0; 100];
        l.extend(vec![1; 100]);
        assert_eq!(compute_class_weights(&l, 2).unwrap(), vec![1.0, 1.0]);
        let mut l = vec![0; 300];
        l.extend(vec![1; 100]);
        let w = compute_class_weights(&l, 2).unwrap();
        assert!((w[0] - 2.0 / 3.0).abs() < 1e-12 && w[1] == 2.0);
        let mut l = vec![0; 10];
        l.extend(vec![1; 10]);
        l.extend(vec![2; 10]);
        l.extend(vec![3; 70]);
        let w = compute_class_weights(&l, 4).unwrap();
        assert_eq!(&w[..3], &[2.5, 2.5, 2.5]);
        assert!((w[3] - 100.0 / 280.0).abs() < 1e-12);
        assert!(matches!(compute_class_weights(&[0, 0], 2), Err(Error::AbsentClass(c)) if c == "1"));
    }

    fn separable(n: usize, dim: usize) -> (TaskInputs, Vec<usize>) {
        let x = Array2::from_shape_fn((n, dim), |(i, j)| {
            let sign = if i % 2 == 0 { 1.0 } else { -1.0 };
            if j < 4 {
                3.0 * sign + 0.1 * ((i * 7 + j * 3) % 11) as f64 / 11.0
            } else {
                ((i * 31 + j * 17) % 13) as f64 / 13.0 - 0.5
            }
        });
        let y = (0..n).map(|i| i % 2).collect();
        (TaskInputs::from_embeddings(x), y)
    }

    #[test]
    fn learns_separable_data() {
        let cfg = HeadConfig {
            input_dim: 16,
            hidden_dim: 8,
            ..HeadConfig::new(2)
        };
        let (x, y) = separable(320, 16);
        let (vx, vy) = separable(40, 16);
        let enc = MockEncoder::new(0);
        let m = train_two_stage(TaskId::Screening, &cfg, &TrainingSchedule::fast(), &enc, &x, &y, &vx, &vy).unwrap();
        assert!(m.history.last().unwrap().train_loss < m.initial_train_loss);
        let p = m.predict(&vx).unwrap();
        let acc = argmax_rows(&p).iter().zip(&vy).filter(|(a, b)| a == b).count() as f64 / vy.len() as f64;
        assert!(acc >= 0.95, "{acc} {:?}", m.history);
        for r in p.rows() {
            assert!((r.sum() - 1.0).abs() < 1e-6);
        }
        assert_eq!(m.predict(&vx).unwrap(), p);
    }

    #[test]
    fn frozen_metric_stops_early() {
        let cfg = HeadConfig {
            input_dim: 16,
            hidden_dim: 8,
            ..HeadConfig::new(2)
        };
        let (x, y) = separable(40, 16);
        let sched = TrainingSchedule {
            phase1_epochs: 50,
            phase2_epochs: 50,
            early_stop_patience: 3,
            ..TrainingSchedule::fast()
        };
        let m = train_two_stage_with(TaskId::Screening, &cfg, &sched, &MockEncoder::new(0), &x, &y, &mut |_| Ok(0.5))
            .unwrap();
        let p1 = m.history.iter().filter(|h| h.phase == 1).count();
        assert!(p1 <= 4, "phase 1 ran {p1} epochs");
        assert_eq!(m.best_epoch, Some((1, 1)));
    }

    #[test]
    fn empty_training_set_errors() {
        let cfg = HeadConfig::new(2);
        let x = TaskInputs::from_embeddings(Array2::zeros((0, 512)));
        let err = train_two_stage(TaskId::Screening, &cfg, &TrainingSchedule::fast(), &MockEncoder::new(0), &x, &[], &x, &[]);
        assert!(matches!(err, Err(Error::Empty(_))));
    }

    #[test]
    fn checkpoint_round_trip_and_hash_check() {
        let cfg = HeadConfig {
            input_dim: 16,
            hidden_dim: 8,
            ..HeadConfig::new(2)
        };
        let (x, y) = separable(20, 16);
        let sched = TrainingSchedule {
            phase1_epochs: 2,
            phase2_epochs: 1,
            ..TrainingSchedule::fast()
        };
        let m = train_two_stage(TaskId::Screening, &cfg, &sched, &MockEncoder::new(0), &x, &y, &x, &y).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("head.json");
        m.save(&path).unwrap();
        let back = TrainedTaskModel::load(&path, &cfg).unwrap();
        assert_eq!(back, m);
        let other = HeadConfig { dropout_p: 0.1, ..cfg };
        assert!(matches!(TrainedTaskModel::load(&path, &other), Err(Error::ConfigMismatch { .. })));
    }
}
