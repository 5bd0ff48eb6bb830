//! Synthetic feature maps with planted class concepts.
//!
//! Each class owns a random unit "concept" vector. An image picks a label
//! subset, plants each present class's concept (plus isotropic noise) at its
//! own distinct cell, and fills every other cell with background: either a
//! random unit vector or a jittered copy of one of a few shared prototypes. At low noise the bundle is separable by a per-cell linear head.

use serde::{Deserialize, Serialize};

use super::{DatasetBundle, Label, LabelMatrix};
use crate::error::{Error, Result};
use crate::heads::FeatureMap;
use crate::numerics::{l2_normalize, streams, Rng, Tensor};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SynthConfig {
    pub num_classes: usize,
    pub height: usize,
    pub width: usize,
    pub dim: usize,
    pub seed: u64,
    /// Norm of the noise added to a planted concept.
    #[serde(default = "default_noise")]
    pub noise: f64,
    /// Probability that a class is present in an image.
    #[serde(default = "default_presence")]
    pub presence: f64,
    /// Shared background directions. With 0, background cells are isotropic
    /// random unit vectors; otherwise each is a prototype plus jitter.
    #[serde(default = "default_background_prototypes")]
    pub background_prototypes: usize,
    /// Norm of the jitter added to a background prototype.
    #[serde(default = "default_background_noise")]
    pub background_noise: f64,
}

fn default_background_prototypes() -> usize {
    4
}

fn default_background_noise() -> f64 {
    0.5
}

fn default_noise() -> f64 {
    0.1
}

fn default_presence() -> f64 {
    0.25
}

impl SynthConfig {
    pub fn new(num_classes: usize, height: usize, width: usize, dim: usize, seed: u64) -> Self {
        Self {
            num_classes,
            height,
            width,
            dim,
            seed,
            noise: default_noise(),
            presence: default_presence(),
            background_prototypes: default_background_prototypes(),
            background_noise: default_background_noise(),
        }
    }

    fn validate(&self) -> Result<()> {
        if self.num_classes < 2 {
            return Err(Error::Config("synthetic data needs at least 2 classes".into()));
        }
        if self.height == 0 || self.width == 0 || self.dim == 0 {
            return Err(Error::Config("synthetic dims must be ≥ 1".into()));
        }
        if !(0.0..=1.0).contains(&self.presence) || self.noise.is_nan() || self.noise < 0.0 || self.background_noise.is_nan() || self.background_noise < 0.0 {
            return Err(Error::Config("presence must be in [0, 1] and noise levels ≥ 0".into()));
        }
        Ok(())
    }
}

/// Draws images from a fixed set of class concepts.
///
/// Successive [`Synthesizer::sample`] calls continue the same stream, so a
/// train split and a test split drawn one after the other share concepts but
/// not images.
#[derive(Debug, Clone)]
pub struct Synthesizer {
    config: SynthConfig,
    concepts: Tensor,
    backgrounds: Vec<Vec<f64>>,
    rng: Rng,
}

impl Synthesizer {
    pub fn new(config: SynthConfig) -> Result<Self> {
        config.validate()?;
        let mut concept_rng = Rng::with_stream(config.seed, streams::SYNTH_CONCEPTS);
        let values: Vec<f64> = (0..config.num_classes)
            .flat_map(|_| concept_rng.unit_vector(config.dim))
            .collect();
        let concepts = Tensor::new(vec![config.num_classes, config.dim], values)?;
        let backgrounds = (0..config.background_prototypes)
            .map(|_| concept_rng.unit_vector(config.dim))
            .collect();
        let rng = Rng::with_stream(config.seed, streams::SYNTH_IMAGES);
        Ok(Self {
            config,
            concepts,
            backgrounds,
            rng,
        })
    }

    pub fn config(&self) -> &SynthConfig {
        &self.config
    }

    /// `N × d` unit concept vectors.
    pub fn concepts(&self) -> &Tensor {
        &self.concepts
    }

    pub fn class_names(&self) -> Vec<String> {
        (0..self.config.num_classes).map(|j| format!("class_{j:02}")).collect()
    }

    pub fn sample(&mut self, num_images: usize) -> Result<DatasetBundle> {
        let SynthConfig {
            num_classes: n,
            height,
            width,
            dim: d,
            noise,
            presence,
            background_noise,
            ..
        } = self.config;
        let cells = height * width;
        let mut features = Vec::with_capacity(num_images);
        let mut entries = Vec::with_capacity(num_images * n);
        for _ in 0..num_images {
            let mut present: Vec<usize> = (0..n).filter(|_| self.rng.bernoulli(presence)).collect();
            // one concept per cell
            if present.len() > cells {
                self.rng.shuffle(&mut present);
                present.truncate(cells);
                present.sort_unstable();
            }
            let mut slots: Vec<usize> = (0..cells).collect();
            self.rng.shuffle(&mut slots);
            let mut values = vec![0.0; cells * d];
            let mut planted = vec![None; cells];
            for (&class, &slot) in present.iter().zip(&slots) {
                planted[slot] = Some(class);
            }
            for (c, chunk) in values.chunks_exact_mut(d).enumerate() {
                match planted[c] {
                    Some(class) => {
                        let dir = self.rng.unit_vector(d);
                        for ((v, m), e) in chunk.iter_mut().zip(self.concepts.row(class)).zip(&dir) {
                            *v = m + noise * e;
                        }
                    }
                    None if self.backgrounds.is_empty() => chunk.copy_from_slice(&self.rng.unit_vector(d)),
                    None => {
                        let proto = &self.backgrounds[self.rng.below(self.backgrounds.len())];
                        let dir = self.rng.unit_vector(d);
                        for ((v, b), e) in chunk.iter_mut().zip(proto).zip(&dir) {
                            *v = b + background_noise * e;
                        }
                    }
                }
            }
            features.push(FeatureMap::from_cells(height, width, d, values)?);
            entries.extend((0..n).map(|j| {
                if present.contains(&j) {
                    Label::Present
                } else {
                    Label::Absent
                }
            }));
        }
        let labels = LabelMatrix::new(num_images, n, entries)?;
        DatasetBundle::new(features, labels, self.class_names())
    }

    /// Stand-ins for text-derived class embeddings: unit vectors whose cosine
    /// with the class concept is `fidelity` (in `[0, 1]`).
    pub fn text_anchors(&self, fidelity: f64, seed: u64) -> Result<Tensor> {
        if !(0.0..=1.0).contains(&fidelity) {
            return Err(Error::Config(format!("anchor fidelity {fidelity} outside [0, 1]")));
        }
        let mut rng = Rng::with_stream(seed, streams::SYNTH_ANCHORS);
        let n = self.config.num_classes;
        let d = self.config.dim;
        let mut values = Vec::with_capacity(n * d);
        for j in 0..n {
            let concept = self.concepts.row(j);
            // random direction orthogonal to the concept
            let orth = loop {
                let u = rng.unit_vector(d);
                let proj: f64 = u.iter().zip(concept).map(|(a, b)| a * b).sum();
                let r: Vec<f64> = u.iter().zip(concept).map(|(a, b)| a - proj * b).collect();
                if let Ok(r) = l2_normalize(&r) {
                    break r;
                }
                if d == 1 {
                    break vec![0.0];
                }
            };
            let s = (1.0 - fidelity * fidelity).sqrt();
            let row: Vec<f64> = concept.iter().zip(&orth).map(|(c, o)| fidelity * c + s * o).collect();
            values.extend(l2_normalize(&row)?);
        }
        Tensor::new(vec![n, d], values)
    }
}

/// A fully annotated synthetic bundle with default noise and presence.
pub fn generate_synthetic(
    num_images: usize,
    num_classes: usize,
    height: usize,
    width: usize,
    dim: usize,
    seed: u64,
) -> Result<DatasetBundle> {
    Synthesizer::new(SynthConfig::new(num_classes, height, width, dim, seed))?.sample(num_images)
}
