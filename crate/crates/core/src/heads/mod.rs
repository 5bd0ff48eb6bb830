//! Scoring heads that map a feature map to per-class positive and negative
//! spatial logits.
//!
//! * [`ProjectorHead`]: a per-cell linear layer producing two logits per class
//!   from visual features alone.
//! * [`EmbeddingBank`]: one positive and one negative vector per class, scored
//!   against every cell by temperature-scaled cosine similarity. Each side is
//!   either anchored to a text-derived embedding (frozen or learnable) or a
//!   free vector learned directly in feature space. PositiveCoOp anchors the
//!   positive side, NegativeCoOp anchors the negative side.

mod checkpoint;

pub use checkpoint::{load_checkpoint, save_checkpoint, HeadDescriptor};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{dot, l2_normalize, norm, streams, Rng, Tensor};

/// Default divisor applied to cosine logits (a ×50 logit scale).
pub const DEFAULT_TEMPERATURE: f64 = 0.02;

/// Row norm of freshly initialised free-learnable embeddings.
pub const FREE_INIT_NORM: f64 = 0.1;

/// `H × W × d` spatial features of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct FeatureMap {
    height: usize,
    width: usize,
    dim: usize,
    values: Tensor,
}

impl FeatureMap {
    pub fn new(values: Tensor) -> Result<Self> {
        match *values.shape() {
            [height, width, dim] => Ok(Self {
                height,
                width,
                dim,
                values,
            }),
            ref other => Err(Error::Shape(format!(
                "feature map must be H×W×d, got shape {other:?}"
            ))),
        }
    }

    pub fn from_cells(height: usize, width: usize, dim: usize, values: Vec<f64>) -> Result<Self> {
        Self::new(Tensor::new(vec![height, width, dim], values)?)
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    /// Feature vector of flat cell index `h * W + w`.
    pub fn cell(&self, index: usize) -> &[f64] {
        &self.values.values()[index * self.dim..(index + 1) * self.dim]
    }

    pub fn cells(&self) -> impl Iterator<Item = &[f64]> {
        self.values.values().chunks_exact(self.dim)
    }

    pub fn tensor(&self) -> &Tensor {
        &self.values
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Polarity {
    Positive,
    Negative,
}

/// Positive and negative local logits, each `H × W × N`.
#[derive(Debug, Clone, PartialEq)]
pub struct SpatialLogits {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl SpatialLogits {
    pub fn zeros(height: usize, width: usize, num_classes: usize) -> Self {
        let n = height * width * num_classes;
        Self {
            height,
            width,
            num_classes,
            positive: vec![0.0; n],
            negative: vec![0.0; n],
        }
    }

    pub fn from_planes(
        height: usize,
        width: usize,
        num_classes: usize,
        positive: Vec<f64>,
        negative: Vec<f64>,
    ) -> Result<Self> {
        let n = height * width * num_classes;
        if positive.len() != n || negative.len() != n || n == 0 {
            return Err(Error::Shape(format!(
                "logit planes of length {}/{} for {height}×{width}×{num_classes}",
                positive.len(),
                negative.len()
            )));
        }
        Ok(Self {
            height,
            width,
            num_classes,
            positive,
            negative,
        })
    }

    pub fn num_cells(&self) -> usize {
        self.height * self.width
    }

    pub fn side(&self, polarity: Polarity) -> &[f64] {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }

    /// The `H × W` logit slice of one class, in row-major cell order.
    pub fn plane(&self, polarity: Polarity, class: usize) -> Vec<f64> {
        self.side(polarity)
            .iter()
            .skip(class)
            .step_by(self.num_classes)
            .copied()
            .collect()
    }

    pub fn as_tensor(&self, polarity: Polarity) -> Result<Tensor> {
        Tensor::new(
            vec![self.height, self.width, self.num_classes],
            self.side(polarity).to_vec(),
        )
    }
}

/// Linear projector from `d` features to `2N` logits per cell.
///
/// Weight row `2j` produces the positive logit of class `j`, row `2j + 1` the
/// negative one.
#[derive(Debug, Clone, PartialEq)]
pub struct ProjectorHead {
    num_classes: usize,
    dim: usize,
    weight: Tensor,
    bias: Vec<f64>,
    use_bias: bool,
}

impl ProjectorHead {
    pub fn new(weight: Tensor, bias: Option<Vec<f64>>) -> Result<Self> {
        let (rows, dim) = weight.matrix_dims()?;
        if rows % 2 != 0 {
            return Err(Error::Shape(format!("projector weight has odd row count {rows}")));
        }
        let use_bias = bias.is_some();
        let bias = bias.unwrap_or_else(|| vec![0.0; rows]);
        if bias.len() != rows {
            return Err(Error::Shape(format!("bias length {} for {rows} rows", bias.len())));
        }
        Ok(Self {
            num_classes: rows / 2,
            dim,
            weight,
            bias,
            use_bias,
        })
    }

    pub fn zeros(num_classes: usize, dim: usize, use_bias: bool) -> Result<Self> {
        let weight = Tensor::zeros(vec![2 * num_classes, dim])?;
        Self::new(weight, use_bias.then(|| vec![0.0; 2 * num_classes]))
    }

    /// Weights uniform in `±1/√d`, zero bias.
    pub fn init(num_classes: usize, dim: usize, use_bias: bool, seed: u64) -> Result<Self> {
        let mut rng = Rng::with_stream(seed, streams::HEAD_INIT);
        let bound = 1.0 / (dim as f64).sqrt();
        let values = (0..2 * num_classes * dim)
            .map(|_| (2.0 * rng.next_f64() - 1.0) * bound)
            .collect();
        let weight = Tensor::new(vec![2 * num_classes, dim], values)?;
        Self::new(weight, use_bias.then(|| vec![0.0; 2 * num_classes]))
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn weight(&self) -> &Tensor {
        &self.weight
    }

    pub fn bias(&self) -> Option<&[f64]> {
        self.use_bias.then_some(self.bias.as_slice())
    }

    pub fn forward(&self, z: &FeatureMap) -> Result<SpatialLogits> {
        projector_forward(self, z)
    }

    /// Gradients of weight and (when enabled) bias given upstream logit gradients.
    pub fn backward(&self, z: &FeatureMap, grad: &SpatialLogits) -> (Vec<f64>, Option<Vec<f64>>) {
        let n = self.num_classes;
        let d = self.dim;
        let mut gw = vec![0.0; 2 * n * d];
        let mut gb = vec![0.0; 2 * n];
        for (c, cell) in z.cells().enumerate() {
            for j in 0..n {
                for (row, g) in [
                    (2 * j, grad.positive[c * n + j]),
                    (2 * j + 1, grad.negative[c * n + j]),
                ] {
                    if g == 0.0 {
                        continue;
                    }
                    gb[row] += g;
                    let dst = &mut gw[row * d..(row + 1) * d];
                    for (w, x) in dst.iter_mut().zip(cell) {
                        *w += g * x;
                    }
                }
            }
        }
        (gw, self.use_bias.then_some(gb))
    }
}

pub fn projector_forward(head: &ProjectorHead, z: &FeatureMap) -> Result<SpatialLogits> {
    if z.dim() != head.dim {
        return Err(Error::Shape(format!(
            "feature dim {} but projector expects {}",
            z.dim(),
            head.dim
        )));
    }
    let n = head.num_classes;
    let mut out = SpatialLogits::zeros(z.height(), z.width(), n);
    for (c, cell) in z.cells().enumerate() {
        for j in 0..n {
            let (p, q) = (2 * j, 2 * j + 1);
            out.positive[c * n + j] = dot(head.weight.row(p), cell) + head.bias[p];
            out.negative[c * n + j] = dot(head.weight.row(q), cell) + head.bias[q];
        }
    }
    Ok(out)
}

/// How one side of an [`EmbeddingBank`] is initialised and trained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SideMode {
    /// Fixed at its text-derived anchor; never updated.
    AnchorFrozen,
    /// Initialised at the anchor, then trained.
    AnchorLearnable,
    /// Small random initialisation, trained with no text guidance.
    FreeLearnable,
}

impl SideMode {
    pub fn is_anchored(self) -> bool {
        !matches!(self, SideMode::FreeLearnable)
    }

    pub fn is_trainable(self) -> bool {
        !matches!(self, SideMode::AnchorFrozen)
    }
}

/// Per-class positive and negative embeddings scored by cosine similarity.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddingBank {
    positive: Tensor,
    negative: Tensor,
    positive_mode: SideMode,
    negative_mode: SideMode,
    positive_anchor: Option<Tensor>,
    negative_anchor: Option<Tensor>,
    temperature: f64,
}

/// One side of a bank before assembly: either an anchor matrix or a free init.
#[derive(Debug, Clone)]
pub enum SideInit {
    Anchor { anchor: Tensor, frozen: bool },
    Free { seed: u64, stream: u64 },
}

impl EmbeddingBank {
    pub fn new(
        num_classes: usize,
        dim: usize,
        positive: SideInit,
        negative: SideInit,
        temperature: f64,
    ) -> Result<Self> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {temperature} must be positive")));
        }
        let (positive, positive_mode, positive_anchor) = build_side(num_classes, dim, positive)?;
        let (negative, negative_mode, negative_anchor) = build_side(num_classes, dim, negative)?;
        Ok(Self {
            positive,
            negative,
            positive_mode,
            negative_mode,
            positive_anchor,
            negative_anchor,
            temperature,
        })
    }

    /// Reassembles a bank from stored parts, checking mode/anchor consistency.
    pub fn from_parts(
        positive: Tensor,
        negative: Tensor,
        modes: (SideMode, SideMode),
        anchors: (Option<Tensor>, Option<Tensor>),
        temperature: f64,
    ) -> Result<Self> {
        let (n, d) = positive.matrix_dims()?;
        if negative.matrix_dims()? != (n, d) {
            return Err(Error::Shape("positive and negative banks differ in shape".into()));
        }
        for (mode, anchor, side) in [
            (modes.0, &anchors.0, "positive"),
            (modes.1, &anchors.1, "negative"),
        ] {
            match (mode.is_anchored(), anchor) {
                (true, None) => {
                    return Err(Error::Config(format!("{side} side is anchored but has no anchor")))
                }
                (_, Some(a)) if a.matrix_dims()? != (n, d) => {
                    return Err(Error::Shape(format!("{side} anchor shape differs from bank")))
                }
                _ => {}
            }
        }
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {temperature} must be positive")));
        }
        Ok(Self {
            positive,
            negative,
            positive_mode: modes.0,
            negative_mode: modes.1,
            positive_anchor: anchors.0,
            negative_anchor: anchors.1,
            temperature,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.positive.shape()[0]
    }

    pub fn dim(&self) -> usize {
        self.positive.shape()[1]
    }

    pub fn temperature(&self) -> f64 {
        self.temperature
    }

    pub fn set_temperature(&mut self, temperature: f64) -> Result<()> {
        if !(temperature > 0.0 && temperature.is_finite()) {
            return Err(Error::Config(format!("temperature {temperature} must be positive")));
        }
        self.temperature = temperature;
        Ok(())
    }

    pub fn side(&self, polarity: Polarity) -> &Tensor {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }

    pub fn mode(&self, polarity: Polarity) -> SideMode {
        match polarity {
            Polarity::Positive => self.positive_mode,
            Polarity::Negative => self.negative_mode,
        }
    }

    pub fn anchor(&self, polarity: Polarity) -> Option<&Tensor> {
        match polarity {
            Polarity::Positive => self.positive_anchor.as_ref(),
            Polarity::Negative => self.negative_anchor.as_ref(),
        }
    }

    /// Turns every anchor-learnable side into an anchor-frozen one.
    pub fn with_frozen_anchors(mut self) -> Self {
        for mode in [&mut self.positive_mode, &mut self.negative_mode] {
            if *mode == SideMode::AnchorLearnable {
                *mode = SideMode::AnchorFrozen;
            }
        }
        self
    }

    pub fn forward(&self, z: &FeatureMap) -> Result<SpatialLogits> {
        embedding_forward(self, z, self.temperature)
    }

    /// Gradient of each side's raw (unnormalised) embeddings given upstream
    /// logit gradients. Frozen sides still get a gradient; the optimiser skips them.
    pub fn backward(&self, z: &FeatureMap, grad: &SpatialLogits) -> Result<(Vec<f64>, Vec<f64>)> {
        let cells = normalized_cells(z)?;
        Ok((
            side_backward(&self.positive, &cells, &grad.positive, self.temperature)?,
            side_backward(&self.negative, &cells, &grad.negative, self.temperature)?,
        ))
    }
}

fn build_side(n: usize, d: usize, init: SideInit) -> Result<(Tensor, SideMode, Option<Tensor>)> {
    match init {
        SideInit::Anchor { anchor, frozen } => {
            let dims = anchor.matrix_dims()?;
            if dims != (n, d) {
                return Err(Error::Shape(format!(
                    "anchor matrix is {}×{}, expected {n}×{d}",
                    dims.0, dims.1
                )));
            }
            let mode = if frozen {
                SideMode::AnchorFrozen
            } else {
                SideMode::AnchorLearnable
            };
            Ok((anchor.clone(), mode, Some(anchor)))
        }
        SideInit::Free { seed, stream } => {
            let mut rng = Rng::with_stream(seed, streams::HEAD_INIT + stream);
            let values: Vec<f64> = (0..n)
                .flat_map(|_| {
                    rng.unit_vector(d)
                        .into_iter()
                        .map(|v| v * FREE_INIT_NORM)
                        .collect::<Vec<_>>()
                })
                .collect();
            Ok((Tensor::new(vec![n, d], values)?, SideMode::FreeLearnable, None))
        }
    }
}

fn check_anchor_dim(anchors: &Tensor, dim: usize) -> Result<usize> {
    let (n, d) = anchors.matrix_dims()?;
    if d != dim {
        return Err(Error::Shape(format!("anchors have dim {d}, expected {dim}")));
    }
    Ok(n)
}

/// Positive side anchored (learnable), negative side free.
pub fn make_positivecoop(anchors_pos: &Tensor, dim: usize, init_seed: u64) -> Result<EmbeddingBank> {
    let n = check_anchor_dim(anchors_pos, dim)?;
    EmbeddingBank::new(
        n,
        dim,
        SideInit::Anchor {
            anchor: anchors_pos.clone(),
            frozen: false,
        },
        SideInit::Free {
            seed: init_seed,
            stream: 0,
        },
        DEFAULT_TEMPERATURE,
    )
}

/// Negative side anchored (learnable), positive side free.
pub fn make_negativecoop(anchors_neg: &Tensor, dim: usize, init_seed: u64) -> Result<EmbeddingBank> {
    let n = check_anchor_dim(anchors_neg, dim)?;
    EmbeddingBank::new(
        n,
        dim,
        SideInit::Free {
            seed: init_seed,
            stream: 0,
        },
        SideInit::Anchor {
            anchor: anchors_neg.clone(),
            frozen: false,
        },
        DEFAULT_TEMPERATURE,
    )
}

/// Both sides free.
pub fn make_freedual(num_classes: usize, dim: usize, init_seed: u64) -> Result<EmbeddingBank> {
    EmbeddingBank::new(
        num_classes,
        dim,
        SideInit::Free {
            seed: init_seed,
            stream: 0,
        },
        SideInit::Free {
            seed: init_seed,
            stream: 1,
        },
        DEFAULT_TEMPERATURE,
    )
}

fn normalized_cells(z: &FeatureMap) -> Result<Vec<Vec<f64>>> {
    z.cells()
        .enumerate()
        .map(|(c, cell)| {
            l2_normalize(cell).map_err(|_| Error::Degenerate(format!("feature cell {c} has zero norm")))
        })
        .collect()
}

fn normalized_rows(bank: &Tensor, side: &str) -> Result<Vec<Vec<f64>>> {
    let (n, _) = bank.matrix_dims()?;
    (0..n)
        .map(|j| {
            l2_normalize(bank.row(j))
                .map_err(|_| Error::Degenerate(format!("{side} embedding of class {j} has zero norm")))
        })
        .collect()
}

/// Cosine logits of every cell against every class embedding, divided by `temperature`.
pub fn embedding_forward(bank: &EmbeddingBank, z: &FeatureMap, temperature: f64) -> Result<SpatialLogits> {
    if z.dim() != bank.dim() {
        return Err(Error::Shape(format!(
            "feature dim {} but bank dim {}",
            z.dim(),
            bank.dim()
        )));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::Config(format!("temperature {temperature} must be positive")));
    }
    let cells = normalized_cells(z)?;
    let pos = normalized_rows(&bank.positive, "positive")?;
    let neg = normalized_rows(&bank.negative, "negative")?;
    let n = bank.num_classes();
    let mut out = SpatialLogits::zeros(z.height(), z.width(), n);
    for (c, cell) in cells.iter().enumerate() {
        for j in 0..n {
            out.positive[c * n + j] = dot(cell, &pos[j]) / temperature;
            out.negative[c * n + j] = dot(cell, &neg[j]) / temperature;
        }
    }
    Ok(out)
}

/// d(loss)/d(r_j) for `logit[c, j] = <ẑ_c, r_j/‖r_j‖> / τ`.
fn side_backward(bank: &Tensor, cells: &[Vec<f64>], grad: &[f64], temperature: f64) -> Result<Vec<f64>> {
    let (n, d) = bank.matrix_dims()?;
    let mut out = vec![0.0; n * d];
    for j in 0..n {
        let r = bank.row(j);
        let r_norm = norm(r);
        if r_norm == 0.0 {
            return Err(Error::Degenerate(format!("embedding of class {j} has zero norm")));
        }
        let mut s = vec![0.0; d];
        for (c, cell) in cells.iter().enumerate() {
            let g = grad[c * n + j];
            if g != 0.0 {
                for (acc, x) in s.iter_mut().zip(cell) {
                    *acc += g * x;
                }
            }
        }
        let s_dot_r: f64 = dot(&s, r) / r_norm;
        let dst = &mut out[j * d..(j + 1) * d];
        for ((o, sv), rv) in dst.iter_mut().zip(&s).zip(r) {
            *o = (sv - s_dot_r * rv / r_norm) / (r_norm * temperature);
        }
    }
    Ok(out)
}

/// Which learning rate a parameter group trains with.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LrKey {
    Projector,
    PromptAnchor,
    FreeEmbedding,
}

/// A trainable parameter group of a head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GroupSpec {
    pub name: &'static str,
    pub lr_key: LrKey,
    pub len: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum HeadKind {
    Baseline,
    PositiveCoop,
    NegativeCoop,
    FreeDual,
    /// Both sides anchored.
    AnchoredDual,
}

impl std::str::FromStr for HeadKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "baseline" => Ok(HeadKind::Baseline),
            "positivecoop" => Ok(HeadKind::PositiveCoop),
            "negativecoop" => Ok(HeadKind::NegativeCoop),
            "freedual" => Ok(HeadKind::FreeDual),
            "anchoreddual" => Ok(HeadKind::AnchoredDual),
            other => Err(Error::Config(format!("unknown head kind {other:?}"))),
        }
    }
}

/// Any of the scoring heads.
#[derive(Debug, Clone, PartialEq)]
pub enum Head {
    Projector(ProjectorHead),
    Embedding(EmbeddingBank),
}

impl Head {
    pub fn kind(&self) -> HeadKind {
        match self {
            Head::Projector(_) => HeadKind::Baseline,
            Head::Embedding(bank) => match (
                bank.positive_mode.is_anchored(),
                bank.negative_mode.is_anchored(),
            ) {
                (true, false) => HeadKind::PositiveCoop,
                (false, true) => HeadKind::NegativeCoop,
                (false, false) => HeadKind::FreeDual,
                (true, true) => HeadKind::AnchoredDual,
            },
        }
    }

    pub fn num_classes(&self) -> usize {
        match self {
            Head::Projector(h) => h.num_classes(),
            Head::Embedding(b) => b.num_classes(),
        }
    }

    pub fn dim(&self) -> usize {
        match self {
            Head::Projector(h) => h.dim(),
            Head::Embedding(b) => b.dim(),
        }
    }

    pub fn forward(&self, z: &FeatureMap) -> Result<SpatialLogits> {
        match self {
            Head::Projector(h) => h.forward(z),
            Head::Embedding(b) => b.forward(z),
        }
    }

    /// Trainable groups in a fixed order. Anchor-frozen sides never appear.
    pub fn trainable_groups(&self) -> Vec<GroupSpec> {
        match self {
            Head::Projector(h) => {
                let mut groups = vec![GroupSpec {
                    name: "projector.weight",
                    lr_key: LrKey::Projector,
                    len: h.weight.len(),
                }];
                if h.use_bias {
                    groups.push(GroupSpec {
                        name: "projector.bias",
                        lr_key: LrKey::Projector,
                        len: h.bias.len(),
                    });
                }
                groups
            }
            Head::Embedding(b) => [
                (Polarity::Positive, "embedding.positive"),
                (Polarity::Negative, "embedding.negative"),
            ]
            .into_iter()
            .filter(|(p, _)| b.mode(*p).is_trainable())
            .map(|(p, name)| GroupSpec {
                name,
                lr_key: if b.mode(p).is_anchored() {
                    LrKey::PromptAnchor
                } else {
                    LrKey::FreeEmbedding
                },
                len: b.side(p).len(),
            })
            .collect(),
        }
    }

    /// Mutable parameter slices, aligned with [`Head::trainable_groups`].
    pub(crate) fn trainable_values_mut(&mut self) -> Vec<&mut [f64]> {
        match self {
            Head::Projector(h) => {
                let mut out = vec![h.weight.values_mut()];
                if h.use_bias {
                    out.push(h.bias.as_mut_slice());
                }
                out
            }
            Head::Embedding(b) => {
                let (pos_mode, neg_mode) = (b.positive_mode, b.negative_mode);
                let mut out = Vec::new();
                if pos_mode.is_trainable() {
                    out.push(b.positive.values_mut());
                }
                if neg_mode.is_trainable() {
                    out.push(b.negative.values_mut());
                }
                out
            }
        }
    }

    /// Parameter gradients aligned with [`Head::trainable_groups`].
    pub fn backward(&self, z: &FeatureMap, grad: &SpatialLogits) -> Result<Vec<Vec<f64>>> {
        match self {
            Head::Projector(h) => {
                let (gw, gb) = h.backward(z, grad);
                Ok(std::iter::once(gw).chain(gb).collect())
            }
            Head::Embedding(b) => {
                let (gp, gn) = b.backward(z, grad)?;
                let mut out = Vec::new();
                if b.positive_mode.is_trainable() {
                    out.push(gp);
                }
                if b.negative_mode.is_trainable() {
                    out.push(gn);
                }
                Ok(out)
            }
        }
    }

    /// Flat copy of every trainable value, for comparisons and finite differences.
    pub fn trainable_snapshot(&self) -> Vec<f64> {
        let mut copy = self.clone();
        copy.trainable_values_mut()
            .into_iter()
            .flat_map(|s| s.to_vec())
            .collect()
    }

    /// Sets the `index`-th trainable scalar (in [`Head::trainable_snapshot`] order).
    pub fn set_trainable(&mut self, index: usize, value: f64) {
        let mut offset = index;
        for slice in self.trainable_values_mut() {
            if offset < slice.len() {
                slice[offset] = value;
                return;
            }
            offset -= slice.len();
        }
        panic!("trainable index {index} out of range");
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn random_map(h: usize, w: usize, d: usize, rng: &mut Rng) -> FeatureMap {
        FeatureMap::from_cells(h, w, d, (0..h * w * d).map(|_| rng.normal()).collect()).unwrap()
    }

    fn random_matrix(n: usize, d: usize, rng: &mut Rng) -> Tensor {
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn projector_zero_head_gives_zero_logits() {
        let head = ProjectorHead::zeros(3, 4, true).unwrap();
        let z = random_map(2, 2, 4, &mut Rng::new(1));
        let out = head.forward(&z).unwrap();
        assert!(out.positive.iter().chain(&out.negative).all(|&v| v == 0.0));
    }

    #[test]
    fn projector_identity_rows() {
        let w = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 1.0]]).unwrap();
        let head = ProjectorHead::new(w, Some(vec![0.0, 0.0])).unwrap();
        let z = FeatureMap::from_cells(1, 1, 2, vec![3.0, 5.0]).unwrap();
        let out = head.forward(&z).unwrap();
        assert_eq!(out.positive, vec![3.0]);
        assert_eq!(out.negative, vec![5.0]);
    }

    #[test]
    fn projector_matches_per_cell_matmul_oracle() {
        let mut rng = Rng::new(9);
        let (n, d, h, w) = (3, 5, 2, 3);
        let weight = random_matrix(2 * n, d, &mut rng);
        let bias: Vec<f64> = (0..2 * n).map(|_| rng.normal()).collect();
        let head = ProjectorHead::new(weight.clone(), Some(bias.clone())).unwrap();
        let z = random_map(h, w, d, &mut rng);
        let out = head.forward(&z).unwrap();
        let wv = weight.values();
        for hh in 0..h {
            for ww in 0..w {
                let base = (hh * w + ww) * d;
                for k in 0..2 * n {
                    let mut acc = bias[k];
                    for i in 0..d {
                        acc += wv[k * d + i] * z.tensor().values()[base + i];
                    }
                    let got = if k % 2 == 0 {
                        out.positive[(hh * w + ww) * n + k / 2]
                    } else {
                        out.negative[(hh * w + ww) * n + k / 2]
                    };
                    assert!((got - acc).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn projector_dim_mismatch() {
        let head = ProjectorHead::zeros(2, 3, true).unwrap();
        let z = random_map(1, 1, 4, &mut Rng::new(0));
        assert!(matches!(head.forward(&z), Err(Error::Shape(_))));
    }

    #[test]
    fn embedding_self_similarity_and_orthogonality() {
        let pos = Tensor::from_rows(&[vec![0.0, 2.0, 0.0]]).unwrap();
        let neg = Tensor::from_rows(&[vec![0.0, 0.0, 1.0]]).unwrap();
        let bank = EmbeddingBank::from_parts(
            pos,
            neg,
            (SideMode::AnchorLearnable, SideMode::FreeLearnable),
            (Some(Tensor::from_rows(&[vec![0.0, 2.0, 0.0]]).unwrap()), None),
            1.0,
        )
        .unwrap();
        let z = FeatureMap::from_cells(1, 2, 3, vec![0.0, 2.0, 0.0, 5.0, 0.0, 0.0]).unwrap();
        let out = bank.forward(&z).unwrap();
        assert!((out.positive[0] - 1.0).abs() < 1e-15);
        assert_eq!(out.positive[1], 0.0);
        assert_eq!(out.negative[1], 0.0);
    }

    #[test]
    fn embedding_matches_normalize_then_dot_oracle() {
        let mut rng = Rng::new(4);
        let (n, d) = (4, 6);
        let pos = random_matrix(n, d, &mut rng);
        let neg = random_matrix(n, d, &mut rng);
        let bank = EmbeddingBank::from_parts(
            pos.clone(),
            neg.clone(),
            (SideMode::FreeLearnable, SideMode::FreeLearnable),
            (None, None),
            0.3,
        )
        .unwrap();
        let z = random_map(2, 2, d, &mut rng);
        let out = bank.forward(&z).unwrap();
        for c in 0..4 {
            let cell = z.cell(c);
            let cn = cell.iter().map(|v| v * v).sum::<f64>().sqrt();
            for j in 0..n {
                for (bankm, got) in [(&pos, out.positive[c * n + j]), (&neg, out.negative[c * n + j])] {
                    let r = bankm.row(j);
                    let rn = r.iter().map(|v| v * v).sum::<f64>().sqrt();
                    let mut acc = 0.0;
                    for i in 0..d {
                        acc += (cell[i] / cn) * (r[i] / rn);
                    }
                    assert!((got - acc / 0.3).abs() < 1e-12);
                }
            }
        }
    }

    #[test]
    fn embedding_rejects_zero_cell() {
        let bank = make_freedual(2, 3, 1).unwrap();
        let z = FeatureMap::from_cells(1, 1, 3, vec![0.0; 3]).unwrap();
        assert!(matches!(bank.forward(&z), Err(Error::Degenerate(_))));
    }

    #[test]
    fn coop_constructors() {
        let mut rng = Rng::new(3);
        let anchors = random_matrix(5, 8, &mut rng);
        let pc = make_positivecoop(&anchors, 8, 77).unwrap();
        assert_eq!(pc.side(Polarity::Positive), &anchors);
        assert_eq!(pc.mode(Polarity::Positive), SideMode::AnchorLearnable);
        assert_eq!(pc.mode(Polarity::Negative), SideMode::FreeLearnable);
        for j in 0..5 {
            let r = norm(pc.side(Polarity::Negative).row(j));
            assert!(r > 0.0 && r <= 0.2, "row norm {r}");
        }
        let again = make_positivecoop(&anchors, 8, 77).unwrap();
        assert_eq!(pc.side(Polarity::Negative), again.side(Polarity::Negative));

        let nc = make_negativecoop(&anchors, 8, 77).unwrap();
        assert_eq!(nc.side(Polarity::Negative), &anchors);
        assert_eq!(nc.mode(Polarity::Positive), SideMode::FreeLearnable);
        // mirror image of the PositiveCoOp bank
        assert_eq!(nc.side(Polarity::Positive), pc.side(Polarity::Negative));
        assert_eq!(nc.mode(Polarity::Negative), pc.mode(Polarity::Positive));
        assert_eq!(Head::Embedding(nc).kind(), HeadKind::NegativeCoop);
        assert_eq!(Head::Embedding(pc).kind(), HeadKind::PositiveCoop);

        assert!(make_positivecoop(&anchors, 7, 0).is_err());
    }

    #[test]
    fn frozen_sides_are_not_trainable() {
        let anchors = random_matrix(3, 4, &mut Rng::new(1));
        let head = Head::Embedding(make_positivecoop(&anchors, 4, 0).unwrap().with_frozen_anchors());
        let groups = head.trainable_groups();
        assert_eq!(groups.len(), 1);
        assert_eq!(groups[0].lr_key, LrKey::FreeEmbedding);
        let head = Head::Embedding(make_positivecoop(&anchors, 4, 0).unwrap());
        let keys: Vec<LrKey> = head.trainable_groups().iter().map(|g| g.lr_key).collect();
        assert_eq!(keys, vec![LrKey::PromptAnchor, LrKey::FreeEmbedding]);
    }

    proptest! {
        #[test]
        fn cosine_logits_bounded_and_scale_invariant(seed in any::<u64>(), lambda in 0.01f64..100.0, tau in 0.01f64..2.0) {
            let mut rng = Rng::new(seed);
            let mut bank = make_freedual(3, 5, seed).unwrap();
            bank.set_temperature(tau).unwrap();
            let z = random_map(2, 2, 5, &mut rng);
            let scaled = FeatureMap::new(Tensor::new(vec![2, 2, 5], z.tensor().values().iter().map(|v| v * lambda).collect()).unwrap()).unwrap();
            let a = bank.forward(&z).unwrap();
            let b = bank.forward(&scaled).unwrap();
            for (x, y) in a.positive.iter().chain(&a.negative).zip(b.positive.iter().chain(&b.negative)) {
                prop_assert!(x.abs() <= 1.0 / tau + 1e-12);
                prop_assert!((x - y).abs() < 1e-10);
            }
        }

        #[test]
        fn projector_is_linear_without_bias(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let head = ProjectorHead::init(2, 4, false, seed).unwrap();
            let z1 = random_map(2, 1, 4, &mut rng);
            let z2 = random_map(2, 1, 4, &mut rng);
            let sum: Vec<f64> = z1.tensor().values().iter().zip(z2.tensor().values()).map(|(a, b)| a + b).collect();
            let zs = FeatureMap::from_cells(2, 1, 4, sum).unwrap();
            let (a, b, s) = (head.forward(&z1).unwrap(), head.forward(&z2).unwrap(), head.forward(&zs).unwrap());
            for i in 0..a.positive.len() {
                prop_assert!((a.positive[i] + b.positive[i] - s.positive[i]).abs() < 1e-12);
                prop_assert!((a.negative[i] + b.negative[i] - s.negative[i]).abs() < 1e-12);
            }
        }
    }
}
