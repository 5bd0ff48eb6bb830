//! On-disk formats, partial-label masking and synthetic datasets.

mod labels;
mod mlt;
mod synthetic;

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

pub use labels::{mask_labels, Label, LabelMatrix, MaskSpec};
pub use mlt::{
    bank_names_path, decode, encode, read_bank, read_tensor_file, write_bank, write_tensor_file,
    write_tensor_file_as, Dtype, MAGIC,
};
pub use synthetic::{generate_synthetic, SynthConfig, Synthesizer};

use crate::error::{Error, Result};
use crate::heads::FeatureMap;
use crate::numerics::Tensor;

/// Feature maps, their labels and class names.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    features: Vec<FeatureMap>,
    labels: LabelMatrix,
    class_names: Vec<String>,
}

impl DatasetBundle {
    pub fn new(features: Vec<FeatureMap>, labels: LabelMatrix, class_names: Vec<String>) -> Result<Self> {
        if features.len() != labels.num_images() {
            return Err(Error::Shape(format!(
                "{} feature maps but {} label rows",
                features.len(),
                labels.num_images()
            )));
        }
        if class_names.len() != labels.num_classes() {
            return Err(Error::Shape(format!(
                "{} class names but {} label columns",
                class_names.len(),
                labels.num_classes()
            )));
        }
        if let Some(first) = features.first() {
            let dims = (first.height(), first.width(), first.dim());
            if let Some(i) = features
                .iter()
                .position(|f| (f.height(), f.width(), f.dim()) != dims)
            {
                return Err(Error::Shape(format!(
                    "feature map {i} differs in shape from feature map 0 ({dims:?})"
                )));
            }
        }
        Ok(Self {
            features,
            labels,
            class_names,
        })
    }

    /// Loads features (see [`load_features`]) and a label CSV.
    pub fn load(features: impl AsRef<Path>, labels: impl AsRef<Path>) -> Result<Self> {
        let features = load_features(features)?;
        let (labels, names) = LabelMatrix::read_csv(labels)?;
        Self::new(features, labels, names)
    }

    pub fn features(&self) -> &[FeatureMap] {
        &self.features
    }

    pub fn labels(&self) -> &LabelMatrix {
        &self.labels
    }

    pub fn class_names(&self) -> &[String] {
        &self.class_names
    }

    pub fn len(&self) -> usize {
        self.features.len()
    }

    pub fn is_empty(&self) -> bool {
        self.features.is_empty()
    }

    pub fn num_classes(&self) -> usize {
        self.labels.num_classes()
    }

    /// `(H, W, d)` shared by every feature map.
    pub fn feature_dims(&self) -> Option<(usize, usize, usize)> {
        self.features.first().map(|f| (f.height(), f.width(), f.dim()))
    }

    pub fn with_labels(self, labels: LabelMatrix) -> Result<Self> {
        Self::new(self.features, labels, self.class_names)
    }
}

/// Per-image feature index written by the encoder export script.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndex {
    /// Identifier of the encoder weights used for export.
    #[serde(default)]
    pub weights: Option<String>,
    pub files: Vec<FeatureIndexEntry>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FeatureIndexEntry {
    /// Relative to the index file's directory.
    pub path: PathBuf,
    pub shape: Vec<usize>,
}

/// Loads feature maps from a `.json` per-image index, a rank-4 `M×H×W×d`
/// `.mlt` stack, or a single rank-3 `.mlt` map.
pub fn load_features(path: impl AsRef<Path>) -> Result<Vec<FeatureMap>> {
    let path = path.as_ref();
    if path.extension().is_some_and(|e| e == "json") {
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let index: FeatureIndex = serde_json::from_str(&text).map_err(|source| Error::Json {
            path: path.to_path_buf(),
            source,
        })?;
        let base = path.parent().unwrap_or(Path::new("."));
        return index
            .files
            .iter()
            .map(|entry| {
                let t = read_tensor_file(base.join(&entry.path))?;
                if t.shape() != entry.shape.as_slice() {
                    return Err(Error::Shape(format!(
                        "{}: index says {:?}, file holds {:?}",
                        entry.path.display(),
                        entry.shape,
                        t.shape()
                    )));
                }
                FeatureMap::new(t)
            })
            .collect();
    }
    let t = read_tensor_file(path)?;
    match *t.shape() {
        [m, h, w, d] => {
            let per = h * w * d;
            let values = t.into_values();
            (0..m)
                .map(|i| FeatureMap::from_cells(h, w, d, values[i * per..(i + 1) * per].to_vec()))
                .collect()
        }
        [_, _, _] => Ok(vec![FeatureMap::new(t)?]),
        ref other => Err(Error::Shape(format!(
            "{}: expected an H×W×d map or M×H×W×d stack, got {other:?}",
            path.display()
        ))),
    }
}

/// Writes feature maps as one `M×H×W×d` stack.
pub fn write_features(path: impl AsRef<Path>, features: &[FeatureMap]) -> Result<()> {
    let first = features
        .first()
        .ok_or_else(|| Error::Shape("no feature maps to write".into()))?;
    let (h, w, d) = (first.height(), first.width(), first.dim());
    let mut values = Vec::with_capacity(features.len() * h * w * d);
    for f in features {
        if (f.height(), f.width(), f.dim()) != (h, w, d) {
            return Err(Error::Shape("feature maps differ in shape".into()));
        }
        values.extend_from_slice(f.tensor().values());
    }
    write_tensor_file(&Tensor::new(vec![features.len(), h, w, d], values)?, path)
}
