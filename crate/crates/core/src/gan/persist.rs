use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{GanModel, TrainingConfig, TrainingHistory};
use crate::conditioning::PairFrequencyTable;
use crate::nn::codec::{Container, TensorMap};
use crate::nn::{Discriminator, DiscriminatorConfig, Generator, GeneratorConfig};
use crate::privacy::{AccountantState, PrivacySpec};
use crate::transform::TransformModel;
use crate::{Error, Result};

const KIND: &str = "dpcgans-model";

#[derive(Serialize, Deserialize)]
struct ModelMeta {
    kind: String,
    config: TrainingConfig,
    privacy: PrivacySpec,
    accountant: AccountantState,
    history: TrainingHistory,
    transform: TransformModel,
    conditions: Option<PairFrequencyTable>,
    generator: GeneratorConfig,
    discriminator: DiscriminatorConfig,
}

impl GanModel {
    pub fn to_bytes(&self) -> Vec<u8> {
        let meta = ModelMeta {
            kind: KIND.into(),
            config: self.config.clone(),
            privacy: self.privacy,
            accountant: self.accountant.clone(),
            history: self.history.clone(),
            transform: self.transform.clone(),
            conditions: self.conditions.clone(),
            generator: self.generator.config.clone(),
            discriminator: self.discriminator.config.clone(),
        };
        let mut tensors = self.generator.export_tensors("generator");
        tensors.extend(self.discriminator.export_tensors("discriminator"));
        Container { meta: serde_json::to_value(meta).expect("model metadata serializes"), tensors }.to_bytes()
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let c = Container::from_bytes(bytes)?;
        if c.meta.get("kind").and_then(|k| k.as_str()) != Some(KIND) {
            return Err(Error::ModelFormat("corrupt payload: not a model file".into()));
        }
        let meta: ModelMeta =
            serde_json::from_value(c.meta).map_err(|e| Error::ModelFormat(format!("corrupt payload: {e}")))?;
        let mut map = TensorMap::new(c.tensors);
        let generator = Generator::import_tensors(meta.generator, &mut map, "generator")?;
        let discriminator = Discriminator::import_tensors(meta.discriminator, &mut map, "discriminator")?;
        let model = GanModel {
            generator,
            discriminator,
            transform: meta.transform,
            conditions: meta.conditions,
            config: meta.config,
            privacy: meta.privacy,
            accountant: meta.accountant,
            history: meta.history,
        };
        model.validate()?;
        Ok(model)
    }
}

pub fn save_model(model: &GanModel, path: impl AsRef<Path>) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, model.to_bytes()).map_err(|e| Error::io(path, e))
}

pub fn load_model(path: impl AsRef<Path>) -> Result<GanModel> {
    let path = path.as_ref();
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    GanModel::from_bytes(&bytes)
}
