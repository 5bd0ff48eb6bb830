//! Cosine-similarity statistics between class-embedding banks, e.g. how close
//! "photo of a {}" embeddings sit to "not a photo of a {}" embeddings.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{cosine_similarity, Tensor};

/// Descriptive statistics over per-class cosines. `std` is the population
/// standard deviation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SimilarityStats {
    pub mean: f64,
    pub std: f64,
    pub min: f64,
    pub max: f64,
    pub count: usize,
}

impl SimilarityStats {
    pub fn from_values(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Shape("no similarities to summarise".into()));
        }
        let n = values.len() as f64;
        let mean = values.iter().sum::<f64>() / n;
        let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
        Ok(Self {
            mean,
            std: var.sqrt(),
            min: values.iter().copied().fold(f64::INFINITY, f64::min),
            max: values.iter().copied().fold(f64::NEG_INFINITY, f64::max),
            count: values.len(),
        })
    }

    pub fn table_row(&self) -> String {
        format!(
            "{:.2} ± {:.2}  ({:.2}, {:.2})",
            self.mean, self.std, self.min, self.max
        )
    }
}

/// Cosine of row `j` of `a` with row `j` of `b`, for every class `j`.
pub fn per_class_cosines(a: &Tensor, b: &Tensor) -> Result<Vec<f64>> {
    let (n, d) = a.matrix_dims()?;
    if b.matrix_dims()? != (n, d) {
        return Err(Error::Shape(format!(
            "banks of shape {:?} and {:?}",
            a.shape(),
            b.shape()
        )));
    }
    (0..n)
        .map(|j| {
            cosine_similarity(a.row(j), b.row(j))
                .map_err(|_| Error::Degenerate(format!("zero-norm embedding for class {j}")))
        })
        .collect()
}

pub fn pairwise_stats(bank_a: &Tensor, bank_b: &Tensor) -> Result<SimilarityStats> {
    SimilarityStats::from_values(&per_class_cosines(bank_a, bank_b)?)
}

/// How per-template cosines are combined across a template sweep.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SweepPooling {
    /// Statistics over all class × template cosines together.
    #[default]
    Pooled,
    /// Statistics over the per-template mean cosines.
    TemplateMeans,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SweepStats {
    pub p1_n1: SimilarityStats,
    pub p1_p2: SimilarityStats,
}

fn sweep_side(a: &[Tensor], b: &[Tensor], pooling: SweepPooling) -> Result<SimilarityStats> {
    let per_template: Vec<Vec<f64>> = a
        .iter()
        .zip(b)
        .map(|(x, y)| per_class_cosines(x, y))
        .collect::<Result<_>>()?;
    match pooling {
        SweepPooling::Pooled => SimilarityStats::from_values(&per_template.concat()),
        SweepPooling::TemplateMeans => SimilarityStats::from_values(
            &per_template
                .iter()
                .map(|v| v.iter().sum::<f64>() / v.len() as f64)
                .collect::<Vec<_>>(),
        ),
    }
}

/// Statistics over a sweep of prompt templates. Entry `t` of each list is the
/// bank produced by template `t`.
pub fn template_sweep_stats(
    banks_p1: &[Tensor],
    banks_n1: &[Tensor],
    banks_p2: &[Tensor],
    pooling: SweepPooling,
) -> Result<SweepStats> {
    if banks_p1.is_empty() || banks_p1.len() != banks_n1.len() || banks_p1.len() != banks_p2.len() {
        return Err(Error::Shape(format!(
            "template lists of lengths {}, {}, {}",
            banks_p1.len(),
            banks_n1.len(),
            banks_p2.len()
        )));
    }
    let shape = banks_p1[0].shape();
    if banks_p1.iter().chain(banks_n1).chain(banks_p2).any(|b| b.shape() != shape) {
        return Err(Error::Shape("sweep banks differ in shape".into()));
    }
    Ok(SweepStats {
        p1_n1: sweep_side(banks_p1, banks_n1, pooling)?,
        p1_p2: sweep_side(banks_p1, banks_p2, pooling)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::Rng;
    use proptest::prelude::*;

    fn random_bank(n: usize, d: usize, rng: &mut Rng) -> Tensor {
        Tensor::new(vec![n, d], (0..n * d).map(|_| rng.normal()).collect()).unwrap()
    }

    #[test]
    fn self_similarity() {
        let mut rng = Rng::new(1);
        let bank = random_bank(6, 5, &mut rng);
        let s = pairwise_stats(&bank, &bank).unwrap();
        assert!((s.mean - 1.0).abs() < 1e-10 && s.std.abs() < 1e-10);
        assert!((s.min - 1.0).abs() < 1e-10 && (s.max - 1.0).abs() < 1e-10);
    }

    #[test]
    fn hand_constructed_pair() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0], vec![0.0, 3.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![0.0, 2.0], vec![0.0, 1.0]]).unwrap();
        let s = pairwise_stats(&a, &b).unwrap();
        assert_eq!((s.mean, s.std, s.min, s.max), (0.5, 0.5, 0.0, 1.0));
    }

    #[test]
    fn errors() {
        let a = Tensor::from_rows(&[vec![1.0, 0.0]]).unwrap();
        let b = Tensor::from_rows(&[vec![1.0, 0.0, 0.0]]).unwrap();
        assert!(matches!(pairwise_stats(&a, &b), Err(Error::Shape(_))));
        let z = Tensor::from_rows(&[vec![0.0, 0.0]]).unwrap();
        assert!(matches!(pairwise_stats(&a, &z), Err(Error::Degenerate(_))));
        assert!(template_sweep_stats(std::slice::from_ref(&a), &[], std::slice::from_ref(&a), SweepPooling::Pooled).is_err());
    }

    #[test]
    fn sweep_reductions() {
        let mut rng = Rng::new(2);
        let bank = random_bank(4, 3, &mut rng);
        let same = vec![bank.clone(); 3];
        let s = template_sweep_stats(&same, &same, &same, SweepPooling::Pooled).unwrap();
        assert!((s.p1_n1.mean - 1.0).abs() < 1e-12 && (s.p1_p2.mean - 1.0).abs() < 1e-12);

        let p1 = random_bank(4, 3, &mut rng);
        let n1 = random_bank(4, 3, &mut rng);
        let p2 = random_bank(4, 3, &mut rng);
        let single = template_sweep_stats(
            std::slice::from_ref(&p1),
            std::slice::from_ref(&n1),
            std::slice::from_ref(&p2),
            SweepPooling::Pooled,
        )
        .unwrap();
        assert_eq!(single.p1_n1, pairwise_stats(&p1, &n1).unwrap());
        assert_eq!(single.p1_p2, pairwise_stats(&p1, &p2).unwrap());

        let means = template_sweep_stats(
            &[p1.clone(), p2.clone()],
            &[n1.clone(), n1.clone()],
            &[p2.clone(), p1.clone()],
            SweepPooling::TemplateMeans,
        )
        .unwrap();
        assert_eq!(means.p1_n1.count, 2);
    }

    proptest! {
        #[test]
        fn invariant_under_row_scaling_and_reordering(seed in any::<u64>()) {
            let mut rng = Rng::new(seed);
            let a = random_bank(5, 4, &mut rng);
            let b = random_bank(5, 4, &mut rng);
            let base = pairwise_stats(&a, &b).unwrap();

            let scales: Vec<f64> = (0..5).map(|_| 0.1 + 10.0 * rng.next_f64()).collect();
            let scaled = Tensor::new(vec![5, 4], a.values().iter().enumerate().map(|(i, v)| v * scales[i / 4]).collect()).unwrap();
            let s = pairwise_stats(&scaled, &b).unwrap();
            prop_assert!((s.mean - base.mean).abs() < 1e-12 && (s.std - base.std).abs() < 1e-12);

            let mut perm: Vec<usize> = (0..5).collect();
            rng.shuffle(&mut perm);
            let reorder = |t: &Tensor| Tensor::from_rows(&perm.iter().map(|&j| t.row(j).to_vec()).collect::<Vec<_>>()).unwrap();
            let r = pairwise_stats(&reorder(&a), &reorder(&b)).unwrap();
            prop_assert!((r.mean - base.mean).abs() < 1e-12);
            prop_assert_eq!((r.min, r.max), (base.min, base.max));
            prop_assert!(base.min <= base.mean && base.mean <= base.max && base.std >= 0.0);
        }
    }
}
