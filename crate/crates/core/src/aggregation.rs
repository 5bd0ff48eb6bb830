//! Class-specific spatial softmax aggregation.
//!
//! For each class and polarity the `H × W` logit plane is turned into an
//! attention map by a softmax over all cells, and the class score is the
//! attention-weighted sum of the same plane. The positive/negative score pair
//! is mapped to a presence probability by a two-way softmax.

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use crate::data::write_tensor_file;
use crate::error::{Error, Result};
use crate::heads::{Polarity, SpatialLogits};
use crate::numerics::{sigmoid, Tensor};

/// Softmax weights over cells, laid out like [`SpatialLogits`] (`H × W × N`).
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionMaps {
    pub height: usize,
    pub width: usize,
    pub num_classes: usize,
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl AttentionMaps {
    pub fn side(&self, polarity: Polarity) -> &[f64] {
        match polarity {
            Polarity::Positive => &self.positive,
            Polarity::Negative => &self.negative,
        }
    }
}

/// Aggregated per-class logits of one image.
#[derive(Debug, Clone, PartialEq)]
pub struct PredictionPair {
    pub positive: Vec<f64>,
    pub negative: Vec<f64>,
}

impl PredictionPair {
    pub fn num_classes(&self) -> usize {
        self.positive.len()
    }
}

fn plane_softmax(side: &[f64], cells: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; side.len()];
    for j in 0..n {
        let max = (0..cells).map(|c| side[c * n + j]).fold(f64::NEG_INFINITY, f64::max);
        let mut total = 0.0;
        for c in 0..cells {
            let e = (side[c * n + j] - max).exp();
            out[c * n + j] = e;
            total += e;
        }
        for c in 0..cells {
            out[c * n + j] /= total;
        }
    }
    out
}

pub fn attention_maps(a: &SpatialLogits) -> AttentionMaps {
    let cells = a.num_cells();
    let n = a.num_classes;
    AttentionMaps {
        height: a.height,
        width: a.width,
        num_classes: n,
        positive: plane_softmax(&a.positive, cells, n),
        negative: plane_softmax(&a.negative, cells, n),
    }
}

pub fn aggregate(a: &SpatialLogits, maps: &AttentionMaps) -> Result<PredictionPair> {
    if (a.height, a.width, a.num_classes) != (maps.height, maps.width, maps.num_classes) {
        return Err(Error::Shape(format!(
            "logits {}×{}×{} vs maps {}×{}×{}",
            a.height, a.width, a.num_classes, maps.height, maps.width, maps.num_classes
        )));
    }
    let n = a.num_classes;
    let weighted = |logits: &[f64], weights: &[f64]| -> Vec<f64> {
        let mut out = vec![0.0; n];
        for (i, (l, w)) in logits.iter().zip(weights).enumerate() {
            out[i % n] += l * w;
        }
        out
    };
    Ok(PredictionPair {
        positive: weighted(&a.positive, &maps.positive),
        negative: weighted(&a.negative, &maps.negative),
    })
}

/// Attention maps and aggregated pair in one call.
pub fn pool(a: &SpatialLogits) -> (AttentionMaps, PredictionPair) {
    let maps = attention_maps(a);
    let pair = aggregate(a, &maps).expect("maps built from the same logits");
    (maps, pair)
}

/// Gradient of the aggregated pair with respect to the local logits.
///
/// With `p = Σ_c A_c a_c` and `A = softmax(a)`, `∂p/∂a_c = A_c (1 + a_c − p)`.
pub fn aggregate_backward(
    a: &SpatialLogits,
    maps: &AttentionMaps,
    pair: &PredictionPair,
    grad_positive: &[f64],
    grad_negative: &[f64],
) -> SpatialLogits {
    let n = a.num_classes;
    let side = |logits: &[f64], weights: &[f64], p: &[f64], g: &[f64]| -> Vec<f64> {
        logits
            .iter()
            .zip(weights)
            .enumerate()
            .map(|(i, (l, w))| {
                let j = i % n;
                g[j] * w * (1.0 + l - p[j])
            })
            .collect()
    };
    SpatialLogits {
        height: a.height,
        width: a.width,
        num_classes: n,
        positive: side(&a.positive, &maps.positive, &pair.positive, grad_positive),
        negative: side(&a.negative, &maps.negative, &pair.negative, grad_negative),
    }
}

/// Presence probability per class: `1 / (1 + exp(p⁻ − p⁺))`.
pub fn pair_probability(p: &PredictionPair) -> Vec<f64> {
    p.positive
        .iter()
        .zip(&p.negative)
        .map(|(pos, neg)| sigmoid(pos - neg))
        .collect()
}

/// Writes one class's `H × W` logit plane as `<stem>.mlt` and a min-max
/// normalised ASCII graymap `<stem>.pgm`. Returns both paths.
pub fn export_similarity_map(
    a: &SpatialLogits,
    class_index: usize,
    polarity: Polarity,
    stem: impl AsRef<Path>,
) -> Result<(PathBuf, PathBuf)> {
    if class_index >= a.num_classes {
        return Err(Error::Range(format!(
            "class index {class_index} with {} classes",
            a.num_classes
        )));
    }
    let stem = stem.as_ref();
    let plane = a.plane(polarity, class_index);
    let tensor = Tensor::new(vec![a.height, a.width], plane.clone())?;
    let mlt = stem.with_extension("mlt");
    write_tensor_file(&tensor, &mlt)?;
    let pgm = stem.with_extension("pgm");
    let text = render_pgm(&plane, a.height, a.width);
    fs::write(&pgm, text).map_err(|e| Error::io(&pgm, e))?;
    Ok((mlt, pgm))
}

/// Plain ("P2") graymap, maximum 255. A constant plane renders as mid-gray.
pub fn render_pgm(plane: &[f64], height: usize, width: usize) -> String {
    let min = plane.iter().copied().fold(f64::INFINITY, f64::min);
    let max = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let range = max - min;
    let mut out = format!("P2\n{width} {height}\n255\n");
    for row in plane.chunks(width) {
        let pixels: Vec<String> = row
            .iter()
            .map(|&v| {
                let level = if range > 0.0 {
                    ((v - min) / range * 255.0).round() as u8
                } else {
                    128
                };
                level.to_string()
            })
            .collect();
        let _ = writeln!(out, "{}", pixels.join(" "));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::read_tensor_file;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn logits(h: usize, w: usize, n: usize, rng: &mut Rng, scale: f64) -> SpatialLogits {
        let len = h * w * n;
        SpatialLogits::from_planes(
            h,
            w,
            n,
            (0..len).map(|_| rng.normal() * scale).collect(),
            (0..len).map(|_| rng.normal() * scale).collect(),
        )
        .unwrap()
    }

    #[test]
    fn single_cell_weight_is_one() {
        let a = SpatialLogits::from_planes(1, 1, 2, vec![3.0, -7.0], vec![0.5, 9.0]).unwrap();
        let (maps, pair) = pool(&a);
        assert!(maps.positive.iter().chain(&maps.negative).all(|&w| w == 1.0));
        assert_eq!(pair.positive, vec![3.0, -7.0]);
    }

    #[test]
    fn uniform_plane_gives_uniform_weights() {
        let a = SpatialLogits::from_planes(2, 3, 1, vec![0.7; 6], vec![-2.0; 6]).unwrap();
        let maps = attention_maps(&a);
        for w in maps.positive.iter().chain(&maps.negative) {
            assert!((w - 1.0 / 6.0).abs() < 1e-15);
        }
    }

    #[test]
    fn two_cell_hand_values() {
        let a = SpatialLogits::from_planes(2, 1, 1, vec![2f64.ln(), 0.0], vec![0.0, 0.0]).unwrap();
        let (maps, pair) = pool(&a);
        assert!((maps.positive[0] - 2.0 / 3.0).abs() < 1e-15);
        assert!((maps.positive[1] - 1.0 / 3.0).abs() < 1e-15);
        assert!((pair.positive[0] - 0.462_098_12).abs() < 1e-8);
    }

    #[test]
    fn aggregate_shape_mismatch() {
        let a = SpatialLogits::zeros(2, 2, 3);
        let b = SpatialLogits::zeros(2, 1, 3);
        assert!(matches!(aggregate(&a, &attention_maps(&b)), Err(Error::Shape(_))));
    }

    #[test]
    fn aggregate_at_least_plane_mean() {
        let mut rng = Rng::new(21);
        for _ in 0..200 {
            let a = logits(3, 3, 2, &mut rng, 3.0);
            let (_, pair) = pool(&a);
            for j in 0..2 {
                let plane = a.plane(Polarity::Positive, j);
                let mean = plane.iter().sum::<f64>() / plane.len() as f64;
                assert!(pair.positive[j] >= mean - 1e-12);
            }
        }
    }

    #[test]
    fn pair_probability_values() {
        let p = |pos: f64, neg: f64| {
            pair_probability(&PredictionPair {
                positive: vec![pos],
                negative: vec![neg],
            })[0]
        };
        assert_eq!(p(0.3, 0.3), 0.5);
        assert!((p(1.0, 0.0) - 0.731_058_58).abs() < 1e-8);
        assert!((p(1.0 + 4.2, 4.2) - p(1.0, 0.0)).abs() < 1e-15);
    }

    #[test]
    fn backward_matches_finite_differences() {
        let mut rng = Rng::new(5);
        let a = logits(2, 3, 2, &mut rng, 1.5);
        let (maps, pair) = pool(&a);
        let gp = [0.7, -1.3];
        let gn = [0.2, 0.9];
        let grad = aggregate_backward(&a, &maps, &pair, &gp, &gn);
        let objective = |a: &SpatialLogits| {
            let (_, p) = pool(a);
            (0..2).map(|j| gp[j] * p.positive[j] + gn[j] * p.negative[j]).sum::<f64>()
        };
        let h = 1e-6;
        for i in 0..a.positive.len() {
            for pol in [Polarity::Positive, Polarity::Negative] {
                let mut up = a.clone();
                let mut down = a.clone();
                match pol {
                    Polarity::Positive => {
                        up.positive[i] += h;
                        down.positive[i] -= h;
                    }
                    Polarity::Negative => {
                        up.negative[i] += h;
                        down.negative[i] -= h;
                    }
                }
                let fd = (objective(&up) - objective(&down)) / (2.0 * h);
                let an = grad.side(pol)[i];
                assert!((fd - an).abs() < 1e-7, "{fd} vs {an}");
            }
        }
    }

    #[test]
    fn similarity_map_export() {
        let dir = tempfile::tempdir().unwrap();
        let a = SpatialLogits::from_planes(2, 2, 2, vec![0.0, 1.0, 0.0, 1.0, 5.0, 1.0, 0.0, 1.0], vec![0.0; 8]).unwrap();
        let (mlt, pgm) = export_similarity_map(&a, 0, Polarity::Positive, dir.path().join("c0")).unwrap();
        assert_eq!(read_tensor_file(&mlt).unwrap().values(), &[0.0, 0.0, 5.0, 0.0]);
        assert_eq!(fs::read_to_string(&pgm).unwrap(), "P2\n2 2\n255\n0 0\n255 0\n");
        let (_, pgm) = export_similarity_map(&a, 1, Polarity::Positive, dir.path().join("c1")).unwrap();
        assert_eq!(fs::read_to_string(&pgm).unwrap(), "P2\n2 2\n255\n128 128\n128 128\n");
        assert!(matches!(
            export_similarity_map(&a, 2, Polarity::Negative, dir.path().join("x")),
            Err(Error::Range(_))
        ));
    }

    proptest! {
        #[test]
        fn maps_normalised_and_pair_bounded(seed in any::<u64>(), h in 1usize..4, w in 1usize..4, n in 1usize..4) {
            let mut rng = Rng::new(seed);
            let a = logits(h, w, n, &mut rng, 10.0);
            let (maps, pair) = pool(&a);
            for pol in [Polarity::Positive, Polarity::Negative] {
                for j in 0..n {
                    let weights: Vec<f64> = maps.side(pol).iter().skip(j).step_by(n).copied().collect();
                    prop_assert!((weights.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                    prop_assert!(weights.iter().all(|&x| x >= 0.0));
                    let plane = a.plane(pol, j);
                    let lo = plane.iter().copied().fold(f64::INFINITY, f64::min);
                    let hi = plane.iter().copied().fold(f64::NEG_INFINITY, f64::max);
                    let p = match pol { Polarity::Positive => pair.positive[j], Polarity::Negative => pair.negative[j] };
                    prop_assert!(p >= lo - 1e-12 && p <= hi + 1e-12);
                }
            }
        }

        #[test]
        fn constant_shift_moves_prediction(seed in any::<u64>(), c in -20.0f64..20.0) {
            let mut rng = Rng::new(seed);
            let a = logits(2, 2, 3, &mut rng, 2.0);
            let mut shifted = a.clone();
            shifted.positive.iter_mut().for_each(|v| *v += c);
            let (_, p0) = pool(&a);
            let (_, p1) = pool(&shifted);
            for j in 0..3 {
                prop_assert!((p1.positive[j] - p0.positive[j] - c).abs() < 1e-9);
            }
            let y0 = pair_probability(&p0);
            prop_assert!(y0.iter().all(|&y| y > 0.0 && y < 1.0));
        }
    }
}
