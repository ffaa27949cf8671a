use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TaskKind {
    Classification,
    Regression,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Phase {
    /// Continual masked-LM pre-training.
    Cp,
    /// User-anchored contrastive pre-training.
    Ua,
    /// Fine-tuning with contextual regularization.
    Cr,
    /// Fine-tuning with the task loss only.
    Plain,
}

impl Phase {
    pub fn name(self) -> &'static str {
        match self {
            Phase::Cp => "cp",
            Phase::Ua => "ua",
            Phase::Cr => "cr",
            Phase::Plain => "plain",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum OptimizerKind {
    Adam,
    Sgd,
}

/// Every hyperparameter of a run. `Default` mirrors the full-size setup
/// (768-d encoder, batch 48, learning rates 3e-6 / 2e-5);
/// [`TrainConfig::desk`] is the toy profile used in tests.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub phases: Vec<Phase>,
    pub task: TaskKind,
    pub num_classes: usize,
    /// Cluster count for regression proxy labels.
    pub proxy_clusters: usize,
    pub robust_ua: bool,
    pub ua_lambda: f64,
    pub cr_lambda: f64,
    pub k_negatives: usize,
    pub n_thread_context: usize,
    pub n_user_context: usize,
    pub temperature: f64,
    pub mask_prob: f64,
    pub batch_size: usize,
    pub max_seq_len: usize,
    pub lr_encoder: f64,
    pub lr_head: f64,
    pub optimizer: OptimizerKind,
    pub adam_beta1: f64,
    pub adam_beta2: f64,
    pub adam_eps: f64,
    pub epochs_cp: usize,
    pub epochs_ua: usize,
    pub epochs_cr: usize,
    /// Early stopping on held-out UA loss; `None` disables it.
    pub ua_patience: Option<usize>,
    pub ua_val_fraction: f64,
    pub seed: u64,
    pub dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub vocab_size: usize,
    /// Classifier/regressor hidden width; defaults to `max(8, dim / 6)`.
    pub head_hidden: Option<usize>,
    pub max_posts_per_user: Option<usize>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            phases: vec![Phase::Cp, Phase::Ua, Phase::Cr],
            task: TaskKind::Classification,
            num_classes: 3,
            proxy_clusters: 3,
            robust_ua: false,
            ua_lambda: 0.5,
            cr_lambda: 0.5,
            k_negatives: 4,
            n_thread_context: 4,
            n_user_context: 4,
            temperature: 1.0,
            mask_prob: 0.15,
            batch_size: 48,
            max_seq_len: 128,
            lr_encoder: 3e-6,
            lr_head: 2e-5,
            optimizer: OptimizerKind::Adam,
            adam_beta1: 0.9,
            adam_beta2: 0.999,
            adam_eps: 1e-8,
            epochs_cp: 3,
            epochs_ua: 3,
            epochs_cr: 10,
            ua_patience: None,
            ua_val_fraction: 0.1,
            seed: 2021,
            dim: 768,
            layers: 2,
            heads: 4,
            vocab_size: 30522,
            head_hidden: None,
            max_posts_per_user: None,
        }
    }
}

impl TrainConfig {
    /// Small encoder and larger learning rates for CPU-scale runs.
    pub fn desk() -> Self {
        Self {
            batch_size: 16,
            max_seq_len: 32,
            lr_encoder: 1e-3,
            lr_head: 5e-3,
            dim: 16,
            vocab_size: 1024,
            ..Self::default()
        }
    }

    pub fn head_hidden(&self) -> usize {
        self.head_hidden.unwrap_or_else(|| (self.dim / 6).max(8))
    }

    /// Output width of the task head.
    pub fn head_outputs(&self) -> usize {
        match self.task {
            TaskKind::Classification => self.num_classes,
            TaskKind::Regression => 1,
        }
    }

    pub fn epochs(&self, phase: Phase) -> usize {
        match phase {
            Phase::Cp => self.epochs_cp,
            Phase::Ua => self.epochs_ua,
            Phase::Cr | Phase::Plain => self.epochs_cr,
        }
    }

    /// Field-level problems, empty when the config is usable.
    pub fn problems(&self) -> Vec<String> {
        let mut p = Vec::new();
        let mut check = |ok: bool, msg: String| {
            if !ok {
                p.push(msg)
            }
        };
        let open_unit = |x: f64| x > 0.0 && x < 1.0;
        check(!self.phases.is_empty(), "phases: must list at least one phase".into());
        check(self.num_classes >= 2, format!("num_classes: need >= 2, got {}", self.num_classes));
        check(self.proxy_clusters >= 1, "proxy_clusters: need >= 1".into());
        check(open_unit(self.ua_lambda), format!("ua_lambda: must be in (0, 1), got {}", self.ua_lambda));
        check(open_unit(self.cr_lambda), format!("cr_lambda: must be in (0, 1), got {}", self.cr_lambda));
        check(open_unit(self.mask_prob), format!("mask_prob: must be in (0, 1), got {}", self.mask_prob));
        check(
            self.temperature.is_finite() && self.temperature > 0.0,
            format!("temperature: must be positive, got {}", self.temperature),
        );
        check(self.batch_size >= 1, "batch_size: need >= 1".into());
        check(self.max_seq_len >= 1, "max_seq_len: need >= 1".into());
        for (name, lr) in [("lr_encoder", self.lr_encoder), ("lr_head", self.lr_head)] {
            check(lr.is_finite() && lr >= 0.0, format!("{name}: must be finite and >= 0, got {lr}"));
        }
        check((0.0..1.0).contains(&self.adam_beta1), "adam_beta1: must be in [0, 1)".into());
        check((0.0..1.0).contains(&self.adam_beta2), "adam_beta2: must be in [0, 1)".into());
        check(self.adam_eps > 0.0, "adam_eps: must be positive".into());
        check(self.dim >= 8, format!("dim: need >= 8, got {}", self.dim));
        check(self.layers >= 1, "layers: need >= 1".into());
        check(
            self.heads >= 1 && self.dim.is_multiple_of(self.heads.max(1)),
            format!("heads: {} must divide dim {}", self.heads, self.dim),
        );
        check(
            self.vocab_size > crate::text::NUM_SPECIAL_TOKENS + 1,
            format!("vocab_size: too small ({})", self.vocab_size),
        );
        check(self.head_hidden != Some(0), "head_hidden: must be positive".into());
        check(open_unit(self.ua_val_fraction), "ua_val_fraction: must be in (0, 1)".into());
        check(self.max_posts_per_user != Some(0), "max_posts_per_user: must be positive".into());
        p
    }

    pub fn validate(&self) -> Result<()> {
        let problems = self.problems();
        if problems.is_empty() {
            Ok(())
        } else {
            Err(Error::Config(problems))
        }
    }
}
