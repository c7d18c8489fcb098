//! Network checkpoints: `ModelSpec`, preset and history in the container header,
//! one named tensor per parameter in the payload.

use serde::{Deserialize, Serialize};

use super::model::{ModelSpec, Network};
use super::train::{History, Trained};
use crate::container::Container;
use crate::error::{Error, Result};
use crate::types::TrainPreset;

pub const MODEL_KIND: &str = "model";

#[derive(Serialize, Deserialize)]
struct Header {
    spec: ModelSpec,
    preset: TrainPreset,
    history: History,
}

pub fn to_container(trained: &Trained) -> Result<Container> {
    let header = Header {
        spec: trained.network.spec.clone(),
        preset: trained.preset.clone(),
        history: trained.history.clone(),
    };
    let meta = serde_json::to_value(&header).map_err(|e| Error::Container(e.to_string()))?;
    let mut c = Container::new(MODEL_KIND, meta);
    for (name, t) in trained.network.named_params() {
        c.push(name, t.shape.clone(), t.data.clone())?;
    }
    Ok(c)
}

pub fn from_container(c: &Container) -> Result<Trained> {
    let h: Header = c.meta_as(MODEL_KIND)?;
    let mut network = Network::new(h.spec, 0)?;
    let names: Vec<(String, Vec<usize>)> = network
        .named_params()
        .into_iter()
        .map(|(n, t)| (n, t.shape.clone()))
        .collect();
    if names.len() != c.tensors.len() {
        return Err(Error::Container(format!(
            "checkpoint holds {} tensors, the architecture has {}",
            c.tensors.len(),
            names.len()
        )));
    }
    for ((name, shape), param) in names.iter().zip(network.params_mut()) {
        let t = c.tensor(name)?;
        if &t.shape != shape {
            return Err(Error::Container(format!(
                "tensor `{name}` has shape {:?}, expected {shape:?}",
                t.shape
            )));
        }
        param.data.copy_from_slice(&t.data);
    }
    Ok(Trained {
        network,
        preset: h.preset,
        history: h.history,
    })
}
