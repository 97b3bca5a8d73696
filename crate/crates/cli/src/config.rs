//! Run configuration: one TOML file per experiment.

use std::path::{Path, PathBuf};

use lungstack_core::aggregator::VotingConfig;
use lungstack_core::corpus::{Adapter, Stratum};
use lungstack_core::encoder::{BackendKind, EncoderBackend, FoundationEncoder, MockEncoder, FOUNDATION_ENV};
use lungstack_core::heads::TrainingSchedule;
use lungstack_core::metrics::BootstrapConfig;
use lungstack_core::pipeline::ClipConfig;
use lungstack_core::stacker::{HyperparameterSpace, MetaLearnerKind, MetaOptions, MetaWidth};
use lungstack_core::tasks::TaskId;
use lungstack_core::workflow::StackingConfig;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{CliError, CliResult};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    /// Mandatory: every stochastic stage derives its seed from this.
    pub seed: u64,
    pub data_root: PathBuf,
    #[serde(default = "default_adapter")]
    pub adapter: Adapter,
    #[serde(default = "default_backend")]
    pub backend: BackendKind,
    #[serde(default = "default_tasks")]
    pub tasks: Vec<TaskId>,
    #[serde(default = "default_targets")]
    pub targets: Vec<TaskId>,
    #[serde(default = "default_output")]
    pub output_dir: PathBuf,
    #[serde(default)]
    pub split: SplitSection,
    #[serde(default)]
    pub clips: ClipConfig,
    #[serde(default)]
    pub schedule: ScheduleSection,
    #[serde(default)]
    pub stacking: StackingSection,
    #[serde(default)]
    pub voting: VotingConfig,
    #[serde(default)]
    pub bootstrap: BootstrapConfig,
    #[serde(default)]
    pub report: ReportSection,
}

fn default_adapter() -> Adapter {
    Adapter::Layout
}

fn default_backend() -> BackendKind {
    BackendKind::Mock
}

fn default_tasks() -> Vec<TaskId> {
    TaskId::BASE.to_vec()
}

fn default_targets() -> Vec<TaskId> {
    vec![TaskId::Screening, TaskId::SoundPattern, TaskId::DiseaseGroup]
}

fn default_output() -> PathBuf {
    PathBuf::from("runs")
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SplitSection {
    pub test_fraction: f64,
    pub strata: Vec<Stratum>,
}

impl Default for SplitSection {
    fn default() -> Self {
        SplitSection {
            test_fraction: 0.2,
            strata: vec![Stratum::DiseaseGroup],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Preset {
    Full,
    Fast,
}

/// Training schedule: a preset with optional per-field overrides.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScheduleSection {
    pub preset: Preset,
    pub phase1_epochs: Option<usize>,
    pub phase1_lr: Option<f64>,
    pub phase2_epochs: Option<usize>,
    pub phase2_lr: Option<f64>,
    pub batch_size: Option<usize>,
    pub early_stop_patience: Option<usize>,
}

impl Default for ScheduleSection {
    fn default() -> Self {
        ScheduleSection {
            preset: Preset::Full,
            phase1_epochs: None,
            phase1_lr: None,
            phase2_epochs: None,
            phase2_lr: None,
            batch_size: None,
            early_stop_patience: None,
        }
    }
}

impl ScheduleSection {
    pub fn resolve(&self, seed: u64) -> TrainingSchedule {
        let base = match self.preset {
            Preset::Full => TrainingSchedule::default(),
            Preset::Fast => TrainingSchedule::fast(),
        };
        TrainingSchedule {
            phase1_epochs: self.phase1_epochs.unwrap_or(base.phase1_epochs),
            phase1_lr: self.phase1_lr.unwrap_or(base.phase1_lr),
            phase2_epochs: self.phase2_epochs.unwrap_or(base.phase2_epochs),
            phase2_lr: self.phase2_lr.unwrap_or(base.phase2_lr),
            batch_size: self.batch_size.unwrap_or(base.batch_size),
            early_stop_patience: self.early_stop_patience.unwrap_or(base.early_stop_patience),
            class_weights: None,
            seed,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct StackingSection {
    pub k_folds: usize,
    pub val_fraction: f64,
    pub trials: usize,
    pub learner: MetaLearnerKind,
    pub cv_folds: usize,
    pub width: MetaWidth,
}

impl Default for StackingSection {
    fn default() -> Self {
        StackingSection {
            k_folds: 5,
            val_fraction: 0.1,
            trials: 100,
            learner: MetaLearnerKind::Boosted,
            cv_folds: 5,
            width: MetaWidth::Eleven,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ReportSection {
    /// Test clips exported with waveform, mel and probability data.
    pub clips: usize,
    pub n_mels: usize,
}

impl Default for ReportSection {
    fn default() -> Self {
        ReportSection { clips: 4, n_mels: 64 }
    }
}

impl RunConfig {
    /// Parses and validates a config file. Relative paths are resolved
    /// against the file's directory.
    pub fn load(path: &Path) -> CliResult<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Config(format!("cannot read {}: {e}", path.display())))?;
        let mut cfg: RunConfig =
            toml::from_str(&text).map_err(|e| CliError::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().filter(|p| !p.as_os_str().is_empty()).unwrap_or(Path::new("."));
        let base = std::fs::canonicalize(base)?;
        for p in [&mut cfg.data_root, &mut cfg.output_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> CliResult<()> {
        let bad = |m: String| Err(CliError::Config(m));
        if !self.data_root.is_dir() {
            return bad(format!("data_root {} does not exist", self.data_root.display()));
        }
        if self.backend == BackendKind::Foundation {
            match std::env::var_os(FOUNDATION_ENV) {
                Some(p) if Path::new(&p).is_dir() => {}
                Some(p) => return bad(format!("{FOUNDATION_ENV}={} is not a directory", Path::new(&p).display())),
                None => return bad(format!("backend `foundation` needs {FOUNDATION_ENV} set to the weight directory")),
            }
        }
        if self.tasks.is_empty() || self.tasks.iter().any(|t| !TaskId::BASE.contains(t)) {
            return bad(format!("tasks must be drawn from {:?}", TaskId::BASE.map(|t| t.as_str())));
        }
        if has_duplicates(&self.tasks) || has_duplicates(&self.targets) {
            return bad("tasks and targets must not repeat".into());
        }
        if !(self.split.test_fraction > 0.0 && self.split.test_fraction < 1.0) {
            return bad(format!("split.test_fraction {} outside (0, 1)", self.split.test_fraction));
        }
        if self.split.strata.is_empty() {
            return bad("split.strata needs at least one attribute".into());
        }
        if self.stacking.k_folds < 2 || self.stacking.cv_folds < 2 {
            return bad("stacking needs at least 2 folds".into());
        }
        if !(0.0..0.5).contains(&self.stacking.val_fraction) {
            return bad(format!("stacking.val_fraction {} outside [0, 0.5)", self.stacking.val_fraction));
        }
        if self.bootstrap.replicates == 0 {
            return bad("bootstrap.replicates must be positive".into());
        }
        if self.report.n_mels == 0 {
            return bad("report.n_mels must be positive".into());
        }
        self.voting.validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.schedule.resolve(self.seed).validate().map_err(|e| CliError::Config(e.to_string()))?;
        self.stacking_config().space.validate().map_err(|e| CliError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 of the canonical JSON form of the resolved config.
    pub fn hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("config serializes");
        format!("{:x}", Sha256::digest(&json))
    }

    pub fn default_run_dir(&self) -> PathBuf {
        self.output_dir.join(format!("run-{}", &self.hash()[..12]))
    }

    /// Embedding cache shared by every run under the output directory.
    pub fn cache_dir(&self) -> PathBuf {
        self.output_dir.join("cache")
    }

    pub fn backend(&self) -> CliResult<Box<dyn EncoderBackend>> {
        Ok(match self.backend {
            BackendKind::Mock => Box::new(MockEncoder::new(self.seed)),
            BackendKind::Foundation => Box::new(FoundationEncoder::from_env()?),
        })
    }

    pub fn stacking_config(&self) -> StackingConfig {
        StackingConfig {
            k_folds: self.stacking.k_folds,
            val_fraction: self.stacking.val_fraction,
            schedule: self.schedule.resolve(self.seed),
            width: self.stacking.width,
            space: HyperparameterSpace::default().with_trials(self.stacking.trials),
            meta: MetaOptions {
                learner: self.stacking.learner,
                cv_folds: self.stacking.cv_folds,
                ..MetaOptions::default()
            },
            seed: self.seed,
        }
    }
}

fn has_duplicates(v: &[TaskId]) -> bool {
    let set: std::collections::BTreeSet<_> = v.iter().collect();
    set.len() != v.len()
}
