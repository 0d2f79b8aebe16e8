use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::attacks::{AttackConfig, AttackKind};
use crate::divergence::DivergenceKind;
use crate::envs::{EnvConfig, Task};
use crate::error::{Error, Result};
use crate::training::TrainerConfig;

/// One attack row of the matrix. `iters` falls back to the manifest's
/// attack config and is ignored for FGSM.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct MethodSpec {
    pub attack: AttackKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub iters: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub loss_override: Option<DivergenceKind>,
}

impl MethodSpec {
    pub fn new(attack: AttackKind, iters: usize) -> Self {
        Self {
            attack,
            iters: attack.is_iterative().then_some(iters),
            loss_override: None,
        }
    }

    /// Iteration count as reported in tables; `None` for FGSM.
    pub fn effective_iters(&self, default: usize) -> Option<usize> {
        self.attack.is_iterative().then(|| self.iters.unwrap_or(default))
    }

    pub fn label(&self) -> String {
        match self.loss_override {
            Some(d) if d != DivergenceKind::Bhattacharyya => format!("{}-{}", self.attack, d),
            _ => self.attack.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyPaths {
    pub benign: PathBuf,
    pub defended: PathBuf,
}

/// Value-net weights live next to the policy weights.
pub fn value_path(policy_path: &Path) -> PathBuf {
    let stem = policy_path
        .file_stem()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    policy_path.with_file_name(format!("{stem}.value.json"))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DefenseConfig {
    /// PGD iterations used while collecting adversarial rollouts.
    pub iters: usize,
    pub total_steps: usize,
}

impl Default for DefenseConfig {
    fn default() -> Self {
        Self {
            iters: 10,
            total_steps: 50_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationConfig {
    pub task: Task,
    pub divergences: Vec<DivergenceKind>,
    pub iters: Vec<usize>,
    /// Overrides of the manifest-wide evaluation sizes.
    pub episodes_per_seed: Option<usize>,
    pub seeds: Option<usize>,
}

impl Default for AblationConfig {
    fn default() -> Self {
        Self {
            task: Task::Button,
            divergences: DivergenceKind::ALL.to_vec(),
            iters: vec![10, 50, 100],
            episodes_per_seed: None,
            seeds: None,
        }
    }
}

/// Everything one experiment run needs. Relative paths are resolved
/// against the working directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentManifest {
    pub tasks: Vec<Task>,
    pub methods: Vec<MethodSpec>,
    pub episodes_per_seed: usize,
    pub seeds: usize,
    pub master_seed: u64,
    /// Weight files per task; missing tasks use `<output_dir>/policies/`.
    pub policies: BTreeMap<Task, PolicyPaths>,
    pub attack: AttackConfig,
    /// Template environment; `task` is replaced per row.
    pub env: EnvConfig,
    pub trainer: TrainerConfig,
    pub defense: DefenseConfig,
    pub ablation: AblationConfig,
    /// Full-scale sizes the desk-scale defaults are measured against; only
    /// used to record scale factors in the run metadata.
    pub reference_episodes: usize,
    pub reference_train_steps: usize,
    pub reference_defense_steps: usize,
    pub output_dir: PathBuf,
}

impl Default for ExperimentManifest {
    fn default() -> Self {
        Self {
            tasks: Task::ALL.to_vec(),
            methods: AttackKind::ALL.iter().map(|k| MethodSpec::new(*k, 50)).collect(),
            episodes_per_seed: 100,
            seeds: 3,
            master_seed: 0,
            policies: BTreeMap::new(),
            attack: AttackConfig::default(),
            env: EnvConfig::default(),
            trainer: TrainerConfig::default(),
            defense: DefenseConfig::default(),
            ablation: AblationConfig::default(),
            reference_episodes: 1000,
            reference_train_steps: 10_000_000,
            reference_defense_steps: 5_000_000,
            output_dir: PathBuf::from("results"),
        }
    }
}

impl ExperimentManifest {
    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let m: Self = serde_json::from_str(&text)?;
        m.validate()?;
        Ok(m)
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    pub fn validate(&self) -> Result<()> {
        if self.episodes_per_seed < 1 {
            return Err(Error::InvalidConfig("episodes_per_seed must be at least 1".into()));
        }
        if self.seeds < 1 {
            return Err(Error::InvalidConfig("seeds must be at least 1".into()));
        }
        if self.tasks.is_empty() {
            return Err(Error::InvalidConfig("tasks must not be empty".into()));
        }
        if self.ablation.episodes_per_seed == Some(0) || self.ablation.seeds == Some(0) {
            return Err(Error::InvalidConfig("ablation sizes must be at least 1".into()));
        }
        for m in &self.methods {
            if m.loss_override.is_some() && m.attack != AttackKind::Dapgd {
                return Err(Error::InvalidConfig(format!(
                    "loss_override is only valid for DAPGD, not {}",
                    m.attack
                )));
            }
        }
        self.attack.validate()?;
        self.trainer.validate()?;
        self.env.validate()?;
        Ok(())
    }

    pub fn env_for(&self, task: Task) -> EnvConfig {
        EnvConfig {
            task,
            ..self.env.clone()
        }
    }

    pub fn policy_paths(&self, task: Task) -> PolicyPaths {
        self.policies.get(&task).cloned().unwrap_or_else(|| {
            let dir = self.output_dir.join("policies");
            PolicyPaths {
                benign: dir.join(format!("{}_benign.json", task.label().to_lowercase())),
                defended: dir.join(format!("{}_defended.json", task.label().to_lowercase())),
            }
        })
    }

    /// Fails unless every weight file the evaluation will read exists.
    pub fn check_weights(&self, tasks: &[Task], defended: bool) -> Result<()> {
        for task in tasks {
            let paths = self.policy_paths(*task);
            let p = if defended { &paths.defended } else { &paths.benign };
            if !p.is_file() {
                return Err(Error::InvalidConfig(format!(
                    "weights file for {task} not found: {}",
                    p.display()
                )));
            }
        }
        Ok(())
    }

    /// Run metadata including the desk-scale factors.
    pub fn metadata(&self) -> serde_json::Value {
        let ratio = |full: usize, desk: usize| full as f64 / desk.max(1) as f64;
        serde_json::json!({
            "episodes_per_seed": self.episodes_per_seed,
            "seeds": self.seeds,
            "master_seed": self.master_seed,
            "episode_scale_factor": ratio(self.reference_episodes, self.episodes_per_seed),
            "train_steps": self.trainer.total_steps,
            "train_step_scale_factor": ratio(self.reference_train_steps, self.trainer.total_steps),
            "defense_steps": self.defense.total_steps,
            "defense_step_scale_factor": ratio(self.reference_defense_steps, self.defense.total_steps),
            "std_definition": "sample standard deviation (n-1) of per-seed mean rewards",
        })
    }
}
