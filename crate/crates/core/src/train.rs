//! Mini-batch SGD with momentum, per-group learning rates and a per-epoch
//! cosine schedule.

use std::fmt::Write as _;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::data::DatasetBundle;
use crate::error::{Error, Result};
use crate::heads::{GroupSpec, Head, LrKey};
use crate::loss::LossConfig;
use crate::model::{batch_loss_and_grad, evaluate};
use crate::numerics::{streams, Rng};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    /// Anchor-initialised embedding sides.
    pub lr_prompt_anchor: f64,
    /// Free embedding sides.
    pub lr_free_embedding: f64,
    pub lr_projector: f64,
    pub momentum: f64,
    pub seed: u64,
    /// Threads for per-image forward/backward work. Does not affect results.
    pub workers: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            epochs: 50,
            batch_size: 32,
            lr_prompt_anchor: 0.002,
            lr_free_embedding: 1.0,
            lr_projector: 0.01,
            momentum: 0.9,
            seed: 0,
            workers: 1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 || self.workers == 0 {
            return Err(Error::Config("epochs, batch_size and workers must be ≥ 1".into()));
        }
        for (name, lr) in [
            ("lr_prompt_anchor", self.lr_prompt_anchor),
            ("lr_free_embedding", self.lr_free_embedding),
            ("lr_projector", self.lr_projector),
        ] {
            if !(lr > 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("{name} = {lr} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.momentum) {
            return Err(Error::Config(format!("momentum {} outside [0, 1)", self.momentum)));
        }
        Ok(())
    }

    pub fn base_lr(&self, key: LrKey) -> f64 {
        match key {
            LrKey::Projector => self.lr_projector,
            LrKey::PromptAnchor => self.lr_prompt_anchor,
            LrKey::FreeEmbedding => self.lr_free_embedding,
        }
    }
}

/// `lr0 · ½ · (1 + cos(π t / T))`.
pub fn cosine_lr(lr0: f64, step: usize, total_steps: usize) -> Result<f64> {
    if total_steps == 0 || step > total_steps {
        return Err(Error::Range(format!("step {step} of {total_steps}")));
    }
    let progress = step as f64 / total_steps as f64;
    Ok(lr0 * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos()))
}

/// `v ← momentum·v + g; θ ← θ − lr·v`.
pub fn sgd_step(params: &mut [f64], velocity: &mut [f64], grads: &[f64], lr: f64, momentum: f64) -> Result<()> {
    if params.len() != grads.len() || params.len() != velocity.len() {
        return Err(Error::Shape(format!(
            "{} parameters, {} velocities, {} gradients",
            params.len(),
            velocity.len(),
            grads.len()
        )));
    }
    for ((p, v), g) in params.iter_mut().zip(velocity.iter_mut()).zip(grads) {
        *v = momentum * *v + g;
        *p -= lr * *v;
    }
    Ok(())
}

/// Optimiser state for one trainable group of a head.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamGroup {
    pub spec: GroupSpec,
    pub velocity: Vec<f64>,
}

impl ParamGroup {
    pub fn new(spec: GroupSpec) -> Self {
        let velocity = vec![0.0; spec.len];
        Self { spec, velocity }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct EpochRecord {
    pub epoch: usize,
    /// Learning rate used by each group this epoch, in group order.
    pub lrs: Vec<(String, f64)>,
    pub train_loss: f64,
    pub val_map: Option<f64>,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub head: Head,
    pub log: Vec<EpochRecord>,
}

impl TrainOutcome {
    /// `epoch,lr_<group>...,train_loss,val_map`; empty `val_map` when not evaluated.
    pub fn metrics_csv(&self) -> String {
        let mut out = String::from("epoch");
        if let Some(first) = self.log.first() {
            for (name, _) in &first.lrs {
                let _ = write!(out, ",lr_{name}");
            }
        }
        out.push_str(",train_loss,val_map\n");
        for rec in &self.log {
            let _ = write!(out, "{}", rec.epoch);
            for (_, lr) in &rec.lrs {
                let _ = write!(out, ",{lr:e}");
            }
            let _ = write!(out, ",{:e},", rec.train_loss);
            if let Some(m) = rec.val_map {
                let _ = write!(out, "{m:e}");
            }
            out.push('\n');
        }
        out
    }

    pub fn write_metrics_csv(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        std::fs::write(path, self.metrics_csv()).map_err(|e| Error::io(path, e))
    }
}

/// Summed loss of `head` over the whole bundle.
pub fn dataset_loss(head: &Head, bundle: &DatasetBundle, loss_cfg: &LossConfig) -> Result<f64> {
    let all: Vec<usize> = (0..bundle.len()).collect();
    Ok(batch_loss_and_grad(head, bundle, &all, loss_cfg)?.0)
}

/// Trains `head` on `bundle`, whose labels may contain unknowns.
///
/// Batches are drawn by a seeded shuffle each epoch; the learning rate of each
/// group follows the cosine schedule with `T = epochs`, stepped per epoch.
/// When `validation` is given, its mAP is logged after every epoch.
pub fn train_run(
    bundle: &DatasetBundle,
    head: Head,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    validation: Option<&DatasetBundle>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    loss_cfg.validate()?;
    if let Some((_, _, d)) = bundle.feature_dims() {
        if d != head.dim() {
            return Err(Error::Shape(format!("features have dim {d}, head expects {}", head.dim())));
        }
    }
    if bundle.num_classes() != head.num_classes() {
        return Err(Error::Shape(format!(
            "labels have {} classes, head has {}",
            bundle.num_classes(),
            head.num_classes()
        )));
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(cfg.workers)
        .build()
        .map_err(|e| Error::Config(format!("thread pool: {e}")))?;
    pool.install(|| run_epochs(bundle, head, cfg, loss_cfg, validation))
}

fn run_epochs(
    bundle: &DatasetBundle,
    mut head: Head,
    cfg: &TrainConfig,
    loss_cfg: &LossConfig,
    validation: Option<&DatasetBundle>,
) -> Result<TrainOutcome> {
    let mut groups: Vec<ParamGroup> = head.trainable_groups().into_iter().map(ParamGroup::new).collect();
    let mut rng = Rng::with_stream(cfg.seed, streams::SHUFFLE);
    let mut order: Vec<usize> = (0..bundle.len()).collect();
    let mut log = Vec::with_capacity(cfg.epochs);
    for epoch in 0..cfg.epochs {
        let lrs: Vec<f64> = groups
            .iter()
            .map(|g| cosine_lr(cfg.base_lr(g.spec.lr_key), epoch, cfg.epochs))
            .collect::<Result<_>>()?;
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for (batch, indices) in order.chunks(cfg.batch_size).enumerate() {
            let (loss, grads) = batch_loss_and_grad(&head, bundle, indices, loss_cfg)?;
            if !loss.is_finite() || grads.iter().flatten().any(|g| !g.is_finite()) {
                return Err(Error::NumericalAbort {
                    epoch,
                    batch,
                    first_image: indices[0],
                });
            }
            epoch_loss += loss;
            for (((group, params), g), lr) in groups
                .iter_mut()
                .zip(head.trainable_values_mut())
                .zip(&grads)
                .zip(&lrs)
            {
                sgd_step(params, &mut group.velocity, g, *lr, cfg.momentum)?;
            }
        }
        let val_map = validation.map(|v| evaluate(&head, v).map(|r| r.map)).transpose()?;
        log::debug!("epoch {epoch}: loss {epoch_loss:.6} val_map {val_map:?}");
        log.push(EpochRecord {
            epoch,
            lrs: groups
                .iter()
                .zip(&lrs)
                .map(|(g, &lr)| (g.spec.name.to_owned(), lr))
                .collect(),
            train_loss: epoch_loss,
            val_map,
        });
    }
    Ok(TrainOutcome { head, log })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, LabelMatrix};
    use crate::heads::{make_positivecoop, Polarity, ProjectorHead};

    #[test]
    fn cosine_schedule_points() {
        assert_eq!(cosine_lr(0.5, 0, 10).unwrap(), 0.5);
        assert!(cosine_lr(0.5, 10, 10).unwrap().abs() < 1e-17);
        assert!((cosine_lr(0.5, 5, 10).unwrap() - 0.25).abs() < 1e-15);
        assert!(matches!(cosine_lr(0.5, 11, 10), Err(Error::Range(_))));
        let mut prev = f64::INFINITY;
        for t in 0..=37 {
            let lr = cosine_lr(1.0, t, 37).unwrap();
            assert!(lr <= prev);
            prev = lr;
        }
    }

    #[test]
    fn sgd_examples() {
        let mut p = [1.0];
        let mut v = [0.0];
        sgd_step(&mut p, &mut v, &[0.5], 0.1, 0.0).unwrap();
        assert!((p[0] - 0.95).abs() < 1e-15);

        let mut p = [0.3, -2.0];
        let mut v = [0.0; 2];
        sgd_step(&mut p, &mut v, &[0.0, 0.0], 0.7, 0.0).unwrap();
        assert_eq!(p, [0.3, -2.0]);

        let mut p = [0.0];
        let mut v = [0.0];
        sgd_step(&mut p, &mut v, &[1.0], 1.0, 0.9).unwrap();
        sgd_step(&mut p, &mut v, &[1.0], 1.0, 0.9).unwrap();
        assert!((p[0] + 2.9).abs() < 1e-15);

        assert!(matches!(sgd_step(&mut p, &mut v, &[1.0, 2.0], 1.0, 0.9), Err(Error::Shape(_))));
    }

    #[test]
    fn all_unknown_labels_leave_parameters_unchanged() {
        let bundle = generate_synthetic(10, 3, 2, 2, 5, 1).unwrap();
        let unknown = LabelMatrix::from_rows(&vec![vec![0, 0, 0]; 10]).unwrap();
        let bundle = bundle.with_labels(unknown).unwrap();
        let head = Head::Projector(ProjectorHead::init(3, 5, true, 4).unwrap());
        let cfg = TrainConfig {
            epochs: 3,
            batch_size: 4,
            ..TrainConfig::default()
        };
        let out = train_run(&bundle, head.clone(), &cfg, &LossConfig::default(), None).unwrap();
        assert_eq!(out.head, head);
    }

    #[test]
    fn training_reduces_loss() {
        let bundle = generate_synthetic(64, 4, 3, 3, 16, 3).unwrap();
        let head = Head::Projector(ProjectorHead::init(4, 16, true, 1).unwrap());
        let loss_cfg = LossConfig::default();
        let before = dataset_loss(&head, &bundle, &loss_cfg).unwrap();
        let cfg = TrainConfig {
            epochs: 10,
            ..TrainConfig::default()
        };
        let out = train_run(&bundle, head, &cfg, &loss_cfg, None).unwrap();
        let after = dataset_loss(&out.head, &bundle, &loss_cfg).unwrap();
        assert!(after < before, "{after} !< {before}");
        assert_eq!(out.log.len(), 10);
    }

    #[test]
    fn lr_routing_and_frozen_anchors() {
        let bundle = generate_synthetic(16, 3, 2, 2, 6, 2).unwrap();
        let anchors = crate::data::Synthesizer::new(crate::data::SynthConfig::new(3, 2, 2, 6, 2))
            .unwrap()
            .text_anchors(0.5, 0)
            .unwrap();
        let bank = make_positivecoop(&anchors, 6, 1).unwrap();
        let cfg = TrainConfig {
            epochs: 2,
            batch_size: 8,
            ..TrainConfig::default()
        };
        let out = train_run(&bundle, Head::Embedding(bank.clone()), &cfg, &LossConfig::default(), None).unwrap();
        let lrs = &out.log[0].lrs;
        assert_eq!(lrs[0], ("embedding.positive".to_string(), 0.002));
        assert_eq!(lrs[1], ("embedding.negative".to_string(), 1.0));

        let frozen = bank.with_frozen_anchors();
        let out = train_run(&bundle, Head::Embedding(frozen.clone()), &cfg, &LossConfig::default(), None).unwrap();
        let Head::Embedding(trained) = &out.head else { unreachable!() };
        assert_eq!(trained.side(Polarity::Positive), frozen.side(Polarity::Positive));
        assert_ne!(trained.side(Polarity::Negative), frozen.side(Polarity::Negative));
    }

    #[test]
    fn metrics_csv_layout() {
        let bundle = generate_synthetic(8, 2, 1, 2, 4, 0).unwrap();
        let head = Head::Projector(ProjectorHead::init(2, 4, false, 0).unwrap());
        let cfg = TrainConfig {
            epochs: 2,
            ..TrainConfig::default()
        };
        let out = train_run(&bundle, head, &cfg, &LossConfig::default(), Some(&bundle)).unwrap();
        let csv = out.metrics_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], "epoch,lr_projector.weight,train_loss,val_map");
        assert_eq!(lines.len(), 3);
        assert!(lines[1].starts_with("0,1e-2,"));
    }

    #[test]
    fn rejects_bad_config() {
        let bundle = generate_synthetic(4, 2, 1, 1, 3, 0).unwrap();
        let head = Head::Projector(ProjectorHead::init(2, 3, true, 0).unwrap());
        let cfg = TrainConfig {
            epochs: 0,
            ..TrainConfig::default()
        };
        assert!(matches!(
            train_run(&bundle, head.clone(), &cfg, &LossConfig::default(), None),
            Err(Error::Config(_))
        ));
        let wrong = Head::Projector(ProjectorHead::init(2, 4, true, 0).unwrap());
        assert!(matches!(
            train_run(&bundle, wrong, &TrainConfig::default(), &LossConfig::default(), None),
            Err(Error::Shape(_))
        ));
    }
}
