use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::network::ModelState;
use crate::autodiff::Parameter;
use crate::error::{Error, Result};

pub const CHECKPOINT_FORMAT: &str = "wormgraph-checkpoint";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk model: versioned header, full configuration, and every
/// parameter and buffer as row-major values, sorted by name.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub config: ModelConfig,
    pub parameters: Vec<Parameter>,
    pub buffers: Vec<Parameter>,
}

impl Checkpoint {
    pub fn from_model(model: &ModelState) -> Self {
        Self {
            format: CHECKPOINT_FORMAT.into(),
            version: CHECKPOINT_VERSION,
            config: model.config.clone(),
            parameters: model.params.to_parameters(),
            buffers: model.params.buffers_as_parameters(),
        }
    }

    /// Rebuilds the model, checking every stored array against the layout
    /// implied by the stored configuration.
    pub fn into_model(self) -> Result<ModelState> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::config(format!(
                "not a checkpoint: format `{}`, expected `{CHECKPOINT_FORMAT}`",
                self.format
            )));
        }
        if self.version != CHECKPOINT_VERSION {
            return Err(Error::config(format!(
                "unsupported checkpoint version {} (supported: {CHECKPOINT_VERSION})",
                self.version
            )));
        }
        let mut model = ModelState::new(self.config, 0)?;
        let expected = model.params.len();
        if self.parameters.len() != expected {
            return Err(Error::Shape(format!(
                "checkpoint has {} parameters, configuration implies {expected}",
                self.parameters.len()
            )));
        }
        for p in &self.parameters {
            let slot = model
                .params
                .get_mut(&p.name)
                .ok_or_else(|| Error::Shape(format!("unexpected parameter `{}` in checkpoint", p.name)))?;
            fill(slot, p)?;
        }
        for b in &self.buffers {
            let slot = model
                .params
                .buffer_mut(&b.name)
                .ok_or_else(|| Error::Shape(format!("unexpected buffer `{}` in checkpoint", b.name)))?;
            fill(slot, b)?;
        }
        Ok(model)
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("checkpoint serializes");
        s.push('\n');
        s
    }

    pub fn from_json(text: &str) -> std::result::Result<Self, String> {
        serde_json::from_str(text).map_err(|e| e.to_string())
    }
}

fn fill(slot: &mut ndarray::ArrayD<f64>, p: &Parameter) -> Result<()> {
    if slot.shape() != p.shape.as_slice() {
        return Err(Error::Shape(format!(
            "`{}`: checkpoint shape {:?} does not match model shape {:?}",
            p.name,
            p.shape,
            slot.shape()
        )));
    }
    if p.values.len() != slot.len() {
        return Err(Error::Shape(format!(
            "`{}`: {} values for shape {:?}",
            p.name,
            p.values.len(),
            p.shape
        )));
    }
    *slot = p.to_array();
    Ok(())
}

pub fn save_checkpoint(model: &ModelState, path: &Path) -> Result<()> {
    fs::write(path, Checkpoint::from_model(model).to_json()).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<ModelState> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Checkpoint::from_json(&text)
        .map_err(|message| Error::Parse {
            path: path.to_path_buf(),
            message,
        })?
        .into_model()
}

/// Rejects data whose neuron count differs from the model's.
pub fn check_neuron_count(model: &ModelState, data_neurons: usize) -> Result<()> {
    let n = model.config.n_neurons;
    if n != data_neurons {
        return Err(Error::Shape(format!(
            "model expects {n} neurons but the data has {data_neurons}"
        )));
    }
    Ok(())
}
