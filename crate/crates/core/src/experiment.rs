//! Experiment settings read from `key=value` files, the checkpoint sidecar,
//! and the synthetic train/test sets the sweeps run on.

use std::fs;
use std::path::{Path, PathBuf};

use serde_json::{Map, Value};

use crate::backbone::{Backbone, BackboneConfig};
use crate::dataio::{generate_scene, split_blocks, BlockSpec, Scene, SceneSpec, NUM_CLASSES};
use crate::error::{Error, Result};
use crate::nn::{load_params, save_params, ModelParams};
use crate::training::{scene_eval_blocks, EvalBlock, LossConfig, LossKind, TrainBlock};
use crate::types::{DropoutConfig, RunConfig};
use crate::uncertainty::Acquisition;

/// Scene seeds of held-out rooms start here, away from training rooms.
const TEST_SCENE_OFFSET: u64 = 1 << 32;

#[derive(Debug, Clone, PartialEq)]
pub struct ExperimentConfig {
    pub run: RunConfig,
    pub encoder: Vec<usize>,
    /// Decoder hidden sizes; the class count is appended.
    pub decoder_hidden: Vec<usize>,
    pub loss: LossKind,
    pub acquisition: Acquisition,
    pub blocks: BlockSpec,
    /// Template for generated rooms; its seed is the base scene seed.
    pub scene: SceneSpec,
    pub train_scenes: usize,
    pub test_scenes: usize,
    pub voxel_size: f64,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            run: RunConfig::default(),
            encoder: vec![64, 128, 256],
            decoder_hidden: vec![512, 256, 256, 128],
            loss: LossKind::Ugce,
            acquisition: Acquisition::Std,
            blocks: BlockSpec::default(),
            scene: SceneSpec::default(),
            train_scenes: 2,
            test_scenes: 1,
            voxel_size: 0.5,
        }
    }
}

fn parse_list<T: std::str::FromStr>(value: &str) -> Option<Vec<T>> {
    value.split(',').map(|v| v.trim().parse().ok()).collect()
}

impl ExperimentConfig {
    pub fn backbone_config(&self, num_classes: usize) -> BackboneConfig {
        let mut decoder = self.decoder_hidden.clone();
        decoder.push(num_classes);
        BackboneConfig {
            encoder: self.encoder.clone(),
            decoder,
            dropout_config: self.run.dropout_config,
            dropout_rate: self.run.dropout_rate,
        }
    }

    pub fn loss_config(&self) -> LossConfig {
        LossConfig {
            kind: self.loss,
            alpha: self.run.alpha,
            acquisition: self.acquisition,
        }
    }

    /// Applies one `key=value` setting.
    pub fn set(&mut self, key: &str, value: &str) -> Result<()> {
        let bad = || Error::InvalidConfig(format!("bad value {value:?} for {key}"));
        macro_rules! parse {
            () => {
                value.parse().map_err(|_| bad())?
            };
        }
        match key {
            "seed" => self.run.seed = parse!(),
            "neighbor_count" | "samples" => self.run.neighbor_count = parse!(),
            "dropout_rate" => self.run.dropout_rate = parse!(),
            "dropout_config" => self.run.dropout_config = value.parse()?,
            "alpha" => self.run.alpha = parse!(),
            "learning_rate" => self.run.learning_rate = parse!(),
            "batch_size" => self.run.batch_size = parse!(),
            "epochs" => self.run.epochs = parse!(),
            "encoder" => self.encoder = parse_list(value).ok_or_else(bad)?,
            "decoder_hidden" => self.decoder_hidden = parse_list(value).ok_or_else(bad)?,
            "loss" => self.loss = value.parse()?,
            "acquisition" => self.acquisition = value.parse()?,
            "block_edge" => self.blocks.edge = parse!(),
            "block_samples" => self.blocks.samples = parse!(),
            "scene_seed" => self.scene.seed = parse!(),
            "scene_points" => self.scene.points = parse!(),
            "scene_extent" => {
                let v: Vec<f64> = parse_list(value).ok_or_else(bad)?;
                self.scene.extent = v.try_into().map_err(|_| bad())?;
            }
            "noise_rate" => self.scene.boundary_noise_rate = parse!(),
            "noise_band" => self.scene.boundary_band = parse!(),
            "clutter_boxes" => self.scene.clutter_boxes = parse!(),
            "train_scenes" => self.train_scenes = parse!(),
            "test_scenes" => self.test_scenes = parse!(),
            "voxel_size" => self.voxel_size = parse!(),
            _ => return Err(Error::InvalidConfig(format!("unknown config key {key:?}"))),
        }
        Ok(())
    }

    /// Reads `key=value` lines; `#` starts a comment.
    pub fn parse(text: &str) -> Result<Self> {
        let mut cfg = Self::default();
        for line in text.lines() {
            let line = line.split('#').next().unwrap_or("").trim();
            if line.is_empty() {
                continue;
            }
            let (k, v) = line
                .split_once('=')
                .ok_or_else(|| Error::InvalidConfig(format!("expected key=value, got {line:?}")))?;
            cfg.set(k.trim(), v.trim())?;
        }
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        Self::parse(&fs::read_to_string(path)?)
    }

    pub fn validate(&self) -> Result<()> {
        self.run.validate()?;
        self.backbone_config(NUM_CLASSES).validate(NUM_CLASSES)?;
        self.scene.validate()?;
        if !(self.blocks.edge > 0.0) || self.blocks.samples == 0 {
            return Err(Error::InvalidConfig("block edge and samples must be positive".into()));
        }
        if !(self.voxel_size > 0.0) {
            return Err(Error::NonPositiveVoxelSize(self.voxel_size));
        }
        Ok(())
    }

    pub fn train_scene_specs(&self) -> Vec<SceneSpec> {
        (0..self.train_scenes as u64)
            .map(|k| SceneSpec {
                seed: self.scene.seed + k,
                ..self.scene.clone()
            })
            .collect()
    }

    /// Held-out rooms are noise free.
    pub fn test_scene_specs(&self) -> Vec<SceneSpec> {
        (0..self.test_scenes as u64)
            .map(|k| SceneSpec {
                seed: self.scene.seed + TEST_SCENE_OFFSET + k,
                boundary_noise_rate: 0.0,
                ..self.scene.clone()
            })
            .collect()
    }
}

/// Generated rooms cut into blocks.
#[derive(Debug, Clone)]
pub struct SyntheticData {
    pub train_scenes: Vec<Scene>,
    pub train: Vec<TrainBlock>,
    /// Per training block, whether each point's label was flipped.
    pub train_flipped: Vec<Vec<bool>>,
    pub test: Vec<EvalBlock>,
}

impl SyntheticData {
    pub fn generate(cfg: &ExperimentConfig) -> Result<Self> {
        let mut train_scenes = Vec::new();
        let mut train = Vec::new();
        let mut train_flipped = Vec::new();
        for spec in cfg.train_scene_specs() {
            let scene = generate_scene(&spec)?;
            let flipped = scene.flipped();
            for b in split_blocks(&scene.cloud, &cfg.blocks, spec.seed)? {
                train_flipped.push(b.source.iter().map(|&i| flipped[i]).collect());
                train.push(TrainBlock::new(b.cloud, cfg.run.neighbor_count)?);
            }
            train_scenes.push(scene);
        }
        let mut test = Vec::new();
        for spec in cfg.test_scene_specs() {
            let scene = generate_scene(&spec)?;
            test.extend(scene_eval_blocks(&scene, &cfg.blocks, spec.seed)?);
        }
        Ok(SyntheticData {
            train_scenes,
            train,
            train_flipped,
            test,
        })
    }

    pub fn backbone(&self, cfg: &ExperimentConfig) -> Result<Backbone> {
        let first = self
            .train
            .first()
            .ok_or_else(|| Error::InvalidConfig("no training blocks".into()))?;
        Backbone::for_cloud(cfg.backbone_config(NUM_CLASSES), &first.cloud)
    }
}

/// Path of the JSON sidecar next to a parameter file.
pub fn model_sidecar_path(params: impl AsRef<Path>) -> PathBuf {
    let mut s = params.as_ref().as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

/// Everything needed to rebuild a trained backbone.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelMeta {
    pub backbone: BackboneConfig,
    pub input_dim: usize,
    pub blocks: BlockSpec,
    pub neighbor_count: usize,
    pub seed: u64,
    pub loss: LossConfig,
    pub voxel_size: f64,
}

impl ModelMeta {
    pub fn to_json(&self) -> String {
        let join = |v: &[usize]| v.iter().map(|d| d.to_string()).collect::<Vec<_>>().join(",");
        let mut m = Map::new();
        let mut put = |k: &str, v: String| {
            m.insert(k.to_string(), Value::String(v));
        };
        put("encoder", join(&self.backbone.encoder));
        put("decoder", join(&self.backbone.decoder));
        put("dropout_config", self.backbone.dropout_config.to_string());
        put("dropout_rate", self.backbone.dropout_rate.to_string());
        put("input_dim", self.input_dim.to_string());
        put("block_edge", self.blocks.edge.to_string());
        put("block_samples", self.blocks.samples.to_string());
        put("neighbor_count", self.neighbor_count.to_string());
        put("seed", self.seed.to_string());
        put("loss", self.loss.kind.to_string());
        put("alpha", self.loss.alpha.to_string());
        put("acquisition", self.loss.acquisition.to_string());
        put("voxel_size", self.voxel_size.to_string());
        serde_json::to_string_pretty(&Value::Object(m)).expect("string map serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let v: Value = serde_json::from_str(text).map_err(|e| Error::Format(format!("model sidecar: {e}")))?;
        let get = |k: &str| -> Result<&str> {
            v.get(k)
                .and_then(Value::as_str)
                .ok_or_else(|| Error::Format(format!("model sidecar lacks {k:?}")))
        };
        let num = |k: &str| -> Result<f64> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
        let int = |k: &str| -> Result<usize> { get(k)?.parse().map_err(|_| Error::Format(format!("bad {k}"))) };
        let list = |k: &str| -> Result<Vec<usize>> { parse_list(get(k)?).ok_or_else(|| Error::Format(format!("bad {k}"))) };
        let dropout_config: DropoutConfig = get("dropout_config")?.parse()?;
        Ok(ModelMeta {
            backbone: BackboneConfig {
                encoder: list("encoder")?,
                decoder: list("decoder")?,
                dropout_config,
                dropout_rate: num("dropout_rate")?,
            },
            input_dim: int("input_dim")?,
            blocks: BlockSpec {
                edge: num("block_edge")?,
                samples: int("block_samples")?,
            },
            neighbor_count: int("neighbor_count")?,
            seed: get("seed")?.parse().map_err(|_| Error::Format("bad seed".into()))?,
            loss: LossConfig {
                kind: get("loss")?.parse()?,
                alpha: num("alpha")?,
                acquisition: get("acquisition")?.parse()?,
            },
            voxel_size: num("voxel_size")?,
        })
    }
}

/// Writes the parameters and their sidecar.
pub fn save_model(path: impl AsRef<Path>, params: &ModelParams, meta: &ModelMeta) -> Result<()> {
    save_params(params, &path)?;
    fs::write(model_sidecar_path(&path), meta.to_json())?;
    Ok(())
}

pub fn load_model(path: impl AsRef<Path>) -> Result<(Backbone, ModelParams, ModelMeta)> {
    let meta = ModelMeta::from_json(&fs::read_to_string(model_sidecar_path(&path))?)?;
    let params = load_params(&path)?;
    let backbone = Backbone::new(meta.backbone.clone(), meta.input_dim)?;
    backbone.check_params(&params)?;
    Ok((backbone, params, meta))
}
