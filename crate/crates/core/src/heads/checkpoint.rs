//! Head checkpoints: a `head.json` descriptor next to one `.mlt` file per tensor.

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{EmbeddingBank, Head, HeadKind, Polarity, ProjectorHead, SideMode};
use crate::data::{read_tensor_file, write_tensor_file};
use crate::error::{Error, Result};
use crate::numerics::Tensor;

pub const DESCRIPTOR_FILE: &str = "head.json";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeadDescriptor {
    pub kind: HeadKind,
    pub num_classes: usize,
    pub dim: usize,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub temperature: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub use_bias: Option<bool>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub positive_mode: Option<SideMode>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub negative_mode: Option<SideMode>,
    /// Tensor role → file name relative to the checkpoint directory.
    pub tensors: BTreeMap<String, String>,
}

pub fn save_checkpoint(head: &Head, dir: impl AsRef<Path>) -> Result<HeadDescriptor> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = BTreeMap::new();
    let mut put = |role: &str, t: &Tensor| -> Result<()> {
        let file = format!("{role}.mlt");
        write_tensor_file(t, dir.join(&file))?;
        tensors.insert(role.to_owned(), file);
        Ok(())
    };
    let descriptor = match head {
        Head::Projector(h) => {
            put("weight", h.weight())?;
            if let Some(b) = h.bias() {
                put("bias", &Tensor::new(vec![b.len()], b.to_vec())?)?;
            }
            HeadDescriptor {
                kind: HeadKind::Baseline,
                num_classes: h.num_classes(),
                dim: h.dim(),
                temperature: None,
                use_bias: Some(h.bias().is_some()),
                positive_mode: None,
                negative_mode: None,
                tensors: BTreeMap::new(),
            }
        }
        Head::Embedding(b) => {
            put("positive", b.side(Polarity::Positive))?;
            put("negative", b.side(Polarity::Negative))?;
            if let Some(a) = b.anchor(Polarity::Positive) {
                put("positive_anchor", a)?;
            }
            if let Some(a) = b.anchor(Polarity::Negative) {
                put("negative_anchor", a)?;
            }
            HeadDescriptor {
                kind: head.kind(),
                num_classes: b.num_classes(),
                dim: b.dim(),
                temperature: Some(b.temperature()),
                use_bias: None,
                positive_mode: Some(b.mode(Polarity::Positive)),
                negative_mode: Some(b.mode(Polarity::Negative)),
                tensors: BTreeMap::new(),
            }
        }
    };
    let descriptor = HeadDescriptor {
        tensors,
        ..descriptor
    };
    let path = dir.join(DESCRIPTOR_FILE);
    let json = serde_json::to_string_pretty(&descriptor).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    fs::write(&path, json + "\n").map_err(|e| Error::io(&path, e))?;
    Ok(descriptor)
}

pub fn load_checkpoint(dir: impl AsRef<Path>) -> Result<Head> {
    let dir = dir.as_ref();
    let path = dir.join(DESCRIPTOR_FILE);
    let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let desc: HeadDescriptor = serde_json::from_str(&text).map_err(|source| Error::Json {
        path: path.clone(),
        source,
    })?;
    let load = |role: &str| -> Result<Option<Tensor>> {
        desc.tensors
            .get(role)
            .map(|file| read_tensor_file(dir.join(file)))
            .transpose()
    };
    let require = |role: &str| -> Result<Tensor> {
        load(role)?.ok_or_else(|| Error::Config(format!("{}: missing tensor {role:?}", path.display())))
    };
    let head = match desc.kind {
        HeadKind::Baseline => {
            let bias = load("bias")?.map(Tensor::into_values);
            Head::Projector(ProjectorHead::new(require("weight")?, bias)?)
        }
        _ => {
            let modes = (
                desc.positive_mode
                    .ok_or_else(|| Error::Config("embedding head without positive_mode".into()))?,
                desc.negative_mode
                    .ok_or_else(|| Error::Config("embedding head without negative_mode".into()))?,
            );
            Head::Embedding(EmbeddingBank::from_parts(
                require("positive")?,
                require("negative")?,
                modes,
                (load("positive_anchor")?, load("negative_anchor")?),
                desc.temperature.unwrap_or(super::DEFAULT_TEMPERATURE),
            )?)
        }
    };
    if head.num_classes() != desc.num_classes || head.dim() != desc.dim || head.kind() != desc.kind {
        return Err(Error::Shape(format!(
            "{}: descriptor does not match stored tensors",
            path.display()
        )));
    }
    Ok(head)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::heads::{make_negativecoop, ProjectorHead};
    use crate::numerics::Rng;

    #[test]
    fn checkpoints_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let projector = Head::Projector(ProjectorHead::init(3, 4, true, 5).unwrap());
        save_checkpoint(&projector, dir.path().join("a")).unwrap();
        assert_eq!(load_checkpoint(dir.path().join("a")).unwrap(), projector);

        let mut rng = Rng::new(2);
        let anchors = Tensor::new(vec![3, 4], (0..12).map(|_| rng.normal()).collect()).unwrap();
        let bank = Head::Embedding(make_negativecoop(&anchors, 4, 8).unwrap().with_frozen_anchors());
        let desc = save_checkpoint(&bank, dir.path().join("b")).unwrap();
        assert_eq!(desc.kind, HeadKind::NegativeCoop);
        assert_eq!(desc.negative_mode, Some(SideMode::AnchorFrozen));
        assert_eq!(load_checkpoint(dir.path().join("b")).unwrap(), bank);
    }
}
