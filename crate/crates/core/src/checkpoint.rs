//! Persistence for trained models: a directory with `config.json`
//! (training configuration plus robot layout) and `model.safetensors`
//! (weights). Reloading reproduces the network bit for bit.

use std::path::Path;

use candle_core::{DType, Device};
use candle_nn::{VarBuilder, VarMap};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kinematics::RobotModel;
use crate::network::DirigentModel;
use crate::normalize::Normalizer;
use crate::schedule::{build_cosine_schedule, NoiseSchedule};
use crate::training::TrainConfig;

pub const CONFIG_FILE: &str = "config.json";
pub const WEIGHTS_FILE: &str = "model.safetensors";

/// A trained network together with everything needed to run it: the noise
/// schedule, the joint normalizer and the robot layout.
pub struct TrainedModel {
    pub varmap: VarMap,
    pub model: DirigentModel,
    pub config: TrainConfig,
    pub schedule: NoiseSchedule,
    pub normalizer: Normalizer,
    pub robot: RobotModel,
}

#[derive(Serialize, Deserialize)]
struct CheckpointConfig {
    train: TrainConfig,
    layout_id: String,
}

impl TrainedModel {
    pub fn save(&self, dir: &Path) -> Result<()> {
        std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let config = CheckpointConfig {
            train: self.config.clone(),
            layout_id: self.robot.layout_id.clone(),
        };
        let text = serde_json::to_string_pretty(&config).map_err(Error::Json)?;
        std::fs::write(dir.join(CONFIG_FILE), text)
            .map_err(|e| Error::io(dir.join(CONFIG_FILE), e))?;
        self.varmap.save(dir.join(WEIGHTS_FILE))?;
        Ok(())
    }

    pub fn load(dir: &Path, device: &Device) -> Result<Self> {
        let config_path = dir.join(CONFIG_FILE);
        let text = std::fs::read_to_string(&config_path).map_err(|e| Error::io(&config_path, e))?;
        let config: CheckpointConfig = serde_json::from_str(&text)
            .map_err(|e| Error::parse(config_path.display().to_string(), e.to_string()))?;
        config.train.validate()?;

        let robot = RobotModel::for_layout(&config.layout_id)?;
        let mut varmap = VarMap::new();
        let vb = VarBuilder::from_varmap(&varmap, DType::F32, device);
        let model = DirigentModel::new(config.train.network.clone(), robot.chains.len(), vb)?;
        varmap.load(dir.join(WEIGHTS_FILE))?;

        let schedule = build_cosine_schedule(config.train.t_max, config.train.schedule_offset)?;
        let normalizer = Normalizer::for_robot(&robot);
        Ok(Self {
            varmap,
            model,
            config: config.train,
            schedule,
            normalizer,
            robot,
        })
    }
}
