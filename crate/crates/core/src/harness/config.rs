//! The single JSON document driving every command.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::assignment::ClassThresholds;
use crate::error::{ensure, Error, Result};
use crate::eval::EvalConfig;
use crate::losses::{ImitationLayer, ImitationSpec, LossWeights};
use crate::scene::{SceneConfig, SceneGeometry};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub steps: usize,
    pub learning_rate: f64,
    pub batch_size: usize,
    /// Per-group gradient-norm clip; 0 disables clipping.
    pub clip_norm: f64,
    pub seed: u64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: 400,
            learning_rate: 0.5,
            batch_size: 1,
            clip_norm: 1.0,
            seed: 0,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DecodeConfig {
    pub score_threshold: f64,
    pub nms_iou: f64,
    pub pre_nms_top_k: usize,
}

impl Default for DecodeConfig {
    fn default() -> Self {
        DecodeConfig {
            score_threshold: 0.1,
            nms_iou: 0.1,
            pre_nms_top_k: 500,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckConfig {
    pub points: usize,
    pub seed: u64,
    pub eps: f64,
    pub tolerance: f64,
    /// Deliberately broken ops, for checking that the suite catches them.
    pub faults: Vec<Fault>,
}

impl Default for GradcheckConfig {
    fn default() -> Self {
        GradcheckConfig {
            points: 100,
            seed: 0,
            eps: 1e-6,
            tolerance: 1e-4,
            faults: Vec::new(),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Fault {
    /// ReLU whose backward passes the gradient through unmasked.
    ReluBackward,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    pub geometry: SceneGeometry,
    /// Training scene set.
    pub scenes: SceneConfig,
    /// Validation scenes, generated with a seed derived from the training seed.
    pub val_scenes: usize,
    /// Root holding `train/` and `val/` scene sets.
    pub scene_dir: PathBuf,
    pub out_dir: PathBuf,
    pub loss_weights: LossWeights,
    /// Imitated layers and whether each adapter ends in a ReLU.
    pub imitation_layers: BTreeMap<ImitationLayer, bool>,
    pub match_thresholds: ClassThresholds,
    pub train: TrainConfig,
    pub decode: DecodeConfig,
    pub eval: EvalConfig,
    pub gradcheck: GradcheckConfig,
}

impl Default for RunConfig {
    fn default() -> Self {
        RunConfig {
            geometry: SceneGeometry::desk(),
            scenes: SceneConfig::default(),
            val_scenes: 20,
            scene_dir: PathBuf::from("scenes"),
            out_dir: PathBuf::from("out"),
            loss_weights: LossWeights::default(),
            imitation_layers: ImitationSpec::default().layers,
            match_thresholds: ClassThresholds::default(),
            train: TrainConfig::default(),
            decode: DecodeConfig::default(),
            eval: EvalConfig::default(),
            gradcheck: GradcheckConfig::default(),
        }
    }
}

impl RunConfig {
    /// Reads a config; relative paths are taken from the config's directory.
    pub fn load(path: &Path) -> Result<Self> {
        let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
        let mut cfg: RunConfig = serde_json::from_slice(&bytes)
            .map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [&mut cfg.scene_dir, &mut cfg.out_dir] {
            if p.is_relative() {
                *p = base.join(&*p);
            }
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.geometry.validate()?;
        self.scenes.validate()?;
        self.loss_weights.validate()?;
        self.imitation().validate()?;
        self.eval.validate()?;
        for m in self.match_thresholds.0.values() {
            crate::assignment::MatchThresholds::new(m.pos, m.neg)
                .map_err(|e| Error::Config(e.to_string()))?;
        }
        let t = &self.train;
        ensure!(t.batch_size >= 1, Config, "batch_size must be at least 1");
        ensure!(
            t.learning_rate.is_finite() && t.learning_rate > 0.0,
            Config,
            "learning_rate must be positive"
        );
        ensure!(
            t.clip_norm.is_finite() && t.clip_norm >= 0.0,
            Config,
            "clip_norm must be non-negative"
        );
        let d = &self.decode;
        ensure!(
            (0.0..1.0).contains(&d.score_threshold) && d.nms_iou > 0.0 && d.nms_iou <= 1.0,
            Config,
            "decode thresholds out of range"
        );
        let g = &self.gradcheck;
        ensure!(
            g.eps > 0.0 && g.tolerance > 0.0,
            Config,
            "gradcheck eps and tolerance must be positive"
        );
        Ok(())
    }

    pub fn imitation(&self) -> ImitationSpec {
        ImitationSpec {
            layers: self.imitation_layers.clone(),
            lambda_im: self.loss_weights.lambda_im,
        }
    }

    pub fn train_dir(&self) -> PathBuf {
        self.scene_dir.join("train")
    }

    pub fn val_dir(&self) -> PathBuf {
        self.scene_dir.join("val")
    }

    /// Scene parameters of the validation set.
    pub fn val_scene_config(&self) -> SceneConfig {
        SceneConfig {
            count: self.val_scenes,
            seed: self.scenes.seed ^ 0x5ca1_ab1e_0000_0001,
            ..self.scenes.clone()
        }
    }
}
