//! The full per-image chain: head → attention maps → aggregation → loss, and
//! its reverse pass down to the head's trainable parameters.

use rayon::prelude::*;

use crate::aggregation::{aggregate_backward, pair_probability, pool, AttentionMaps, PredictionPair};
use crate::data::{DatasetBundle, Label};
use crate::error::{Error, Result};
use crate::heads::{FeatureMap, Head, SpatialLogits};
use crate::loss::{image_loss, LossConfig};
use crate::metrics::{mean_average_precision, ranked_by_class, MapReport};

/// Intermediate values of one forward pass.
#[derive(Debug, Clone)]
pub struct ImageForward {
    pub logits: SpatialLogits,
    pub maps: AttentionMaps,
    pub pair: PredictionPair,
}

pub fn forward_image(head: &Head, z: &FeatureMap) -> Result<ImageForward> {
    let logits = head.forward(z)?;
    let (maps, pair) = pool(&logits);
    Ok(ImageForward { logits, maps, pair })
}

/// Presence probabilities for one image.
pub fn predict(head: &Head, z: &FeatureMap) -> Result<Vec<f64>> {
    Ok(pair_probability(&forward_image(head, z)?.pair))
}

/// Loss of one image and the gradient of that loss for every trainable group.
pub fn image_loss_and_grad(
    head: &Head,
    z: &FeatureMap,
    labels: &[Label],
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let fwd = forward_image(head, z)?;
    let (loss, pair_grad) = image_loss(&fwd.pair, labels, cfg)?;
    if labels.iter().all(|l| !l.is_known()) {
        let groups = head.trainable_groups();
        return Ok((loss, groups.iter().map(|g| vec![0.0; g.len]).collect()));
    }
    let logit_grad = aggregate_backward(
        &fwd.logits,
        &fwd.maps,
        &fwd.pair,
        &pair_grad.positive,
        &pair_grad.negative,
    );
    Ok((loss, head.backward(z, &logit_grad)?))
}

/// Summed loss and gradients over `indices` of `bundle`.
///
/// Per-image work fans out over the current rayon pool; the reduction always
/// runs in `indices` order so the result does not depend on the thread count.
pub fn batch_loss_and_grad(
    head: &Head,
    bundle: &DatasetBundle,
    indices: &[usize],
    cfg: &LossConfig,
) -> Result<(f64, Vec<Vec<f64>>)> {
    let per_image: Vec<(f64, Vec<Vec<f64>>)> = indices
        .par_iter()
        .map(|&i| image_loss_and_grad(head, &bundle.features()[i], bundle.labels().row(i), cfg))
        .collect::<Result<_>>()?;
    let mut total = 0.0;
    let mut grads: Vec<Vec<f64>> = head.trainable_groups().iter().map(|g| vec![0.0; g.len]).collect();
    for (loss, g) in per_image {
        total += loss;
        for (acc, part) in grads.iter_mut().zip(g) {
            for (a, p) in acc.iter_mut().zip(part) {
                *a += p;
            }
        }
    }
    Ok((total, grads))
}

/// Presence probabilities for every image, in dataset order.
pub fn predict_all(head: &Head, features: &[FeatureMap]) -> Result<Vec<Vec<f64>>> {
    features.par_iter().map(|z| predict(head, z)).collect()
}

/// Logit margins `p⁺ − p⁻` for every image. Ranking by the margin is
/// equivalent to ranking by `σ(p⁺ − p⁻)`, but margins above ~37 do not round
/// to a tied 1.0.
pub fn margins_all(head: &Head, features: &[FeatureMap]) -> Result<Vec<Vec<f64>>> {
    features
        .par_iter()
        .map(|z| {
            let pair = forward_image(head, z)?.pair;
            Ok(pair.positive.iter().zip(&pair.negative).map(|(p, n)| p - n).collect())
        })
        .collect()
}

/// mAP of `head` on a fully annotated bundle, ranking by logit margin.
pub fn evaluate(head: &Head, bundle: &DatasetBundle) -> Result<MapReport> {
    if head.num_classes() != bundle.num_classes() {
        return Err(Error::Shape(format!(
            "head predicts {} classes, bundle has {}",
            head.num_classes(),
            bundle.num_classes()
        )));
    }
    let scores = margins_all(head, bundle.features())?;
    mean_average_precision(&ranked_by_class(&scores, bundle.labels())?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_synthetic, LabelMatrix};
    use crate::heads::{make_positivecoop, ProjectorHead};
    use crate::numerics::{Rng, Tensor};

    fn total_loss(head: &Head, bundle: &DatasetBundle, cfg: &LossConfig) -> f64 {
        let idx: Vec<usize> = (0..bundle.len()).collect();
        batch_loss_and_grad(head, bundle, &idx, cfg).unwrap().0
    }

    fn check_fd(head: &Head, bundle: &DatasetBundle) {
        let cfg = LossConfig::default();
        let idx: Vec<usize> = (0..bundle.len()).collect();
        let (_, grads) = batch_loss_and_grad(head, bundle, &idx, &cfg).unwrap();
        let flat: Vec<f64> = grads.concat();
        let theta = head.trainable_snapshot();
        let h = 1e-6;
        for (k, &an) in flat.iter().enumerate() {
            let mut up = head.clone();
            up.set_trainable(k, theta[k] + h);
            let mut down = head.clone();
            down.set_trainable(k, theta[k] - h);
            let fd = (total_loss(&up, bundle, &cfg) - total_loss(&down, bundle, &cfg)) / (2.0 * h);
            let scale = fd.abs().max(an.abs()).max(1e-6);
            assert!((fd - an).abs() / scale < 1e-4, "param {k}: fd {fd} vs analytic {an}");
        }
    }

    #[test]
    fn projector_chain_gradient() {
        let bundle = generate_synthetic(3, 3, 2, 2, 4, 1).unwrap();
        let head = Head::Projector(ProjectorHead::init(3, 4, true, 2).unwrap());
        check_fd(&head, &bundle);
    }

    #[test]
    fn embedding_chain_gradient() {
        let bundle = generate_synthetic(3, 3, 2, 2, 4, 1).unwrap();
        let mut rng = Rng::new(8);
        let anchors = Tensor::new(vec![3, 4], (0..12).map(|_| rng.normal()).collect()).unwrap();
        let mut bank = make_positivecoop(&anchors, 4, 3).unwrap();
        bank.set_temperature(0.5).unwrap();
        check_fd(&Head::Embedding(bank), &bundle);
    }

    #[test]
    fn evaluation_ranks_by_margin() {
        let bundle = generate_synthetic(64, 4, 3, 3, 16, 5).unwrap();
        let map_of = |scores: &[Vec<f64>]| mean_average_precision(&ranked_by_class(scores, bundle.labels()).unwrap()).unwrap().map;
        let head = Head::Projector(ProjectorHead::init(4, 16, true, 0).unwrap());
        // unsaturated: probability and margin rankings agree
        let probs = predict_all(&head, bundle.features()).unwrap();
        assert!((evaluate(&head, &bundle).unwrap().map - map_of(&probs)).abs() < 1e-12);

        let Head::Projector(p) = &head else { unreachable!() };
        let big = Head::Projector(
            ProjectorHead::new(
                Tensor::new(p.weight().shape().to_vec(), p.weight().values().iter().map(|w| w * 1e3).collect()).unwrap(),
                p.bias().map(|b| b.to_vec()),
            )
            .unwrap(),
        );
        let probs = predict_all(&big, bundle.features()).unwrap();
        assert!(probs.iter().flatten().any(|&y| y == 1.0));
        let margins = margins_all(&big, bundle.features()).unwrap();
        assert_eq!(evaluate(&big, &bundle).unwrap().map, map_of(&margins));
    }

    #[test]
    fn fully_unknown_batch_has_zero_gradient() {
        let bundle = generate_synthetic(4, 2, 2, 2, 3, 0).unwrap();
        let unknown = LabelMatrix::from_rows(&vec![vec![0, 0]; 4]).unwrap();
        let bundle = bundle.with_labels(unknown).unwrap();
        let head = Head::Projector(ProjectorHead::init(2, 3, true, 0).unwrap());
        let (loss, grads) = batch_loss_and_grad(&head, &bundle, &[0, 1, 2, 3], &LossConfig::default()).unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.iter().flatten().all(|&g| g == 0.0));
    }
}
