//! Average precision and mean average precision.
//!
//! AP is the mean of precision@k over the ranks k of the positive items,
//! after sorting by score (descending, ties kept in original order).

use std::io::Write as _;
use std::path::Path;

use crate::data::{Label, LabelMatrix};
use crate::error::{Error, Result};

/// Scores and fully annotated labels of one class over an evaluation set.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassScores {
    pub scores: Vec<f64>,
    pub labels: Vec<Label>,
}

impl ClassScores {
    pub fn new(scores: Vec<f64>, labels: Vec<Label>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores for {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if labels.iter().any(|l| !l.is_known()) {
            return Err(Error::Label("evaluation labels must be fully annotated".into()));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Domain("non-finite score".into()));
        }
        Ok(Self { scores, labels })
    }
}

/// Splits an `M × N` score matrix (row-major by image) into per-class rankings.
pub fn ranked_by_class(scores: &[Vec<f64>], labels: &LabelMatrix) -> Result<Vec<ClassScores>> {
    if scores.len() != labels.num_images() {
        return Err(Error::Shape(format!(
            "{} score rows for {} label rows",
            scores.len(),
            labels.num_images()
        )));
    }
    let n = labels.num_classes();
    if let Some(bad) = scores.iter().position(|r| r.len() != n) {
        return Err(Error::Shape(format!("score row {bad} has wrong length")));
    }
    (0..n)
        .map(|j| {
            ClassScores::new(
                scores.iter().map(|r| r[j]).collect(),
                (0..labels.num_images()).map(|i| labels.get(i, j)).collect(),
            )
        })
        .collect()
}

/// AP of one class. `class` only labels the error.
pub fn average_precision(items: &ClassScores, class: usize) -> Result<f64> {
    let positives = items.labels.iter().filter(|&&l| l == Label::Present).count();
    if positives == 0 {
        return Err(Error::UndefinedAp { class });
    }
    let mut order: Vec<usize> = (0..items.scores.len()).collect();
    // stable: equal scores keep index order
    order.sort_by(|&a, &b| items.scores[b].total_cmp(&items.scores[a]));
    let mut hits = 0usize;
    let mut sum = 0.0;
    for (rank, &i) in order.iter().enumerate() {
        if items.labels[i] == Label::Present {
            hits += 1;
            sum += hits as f64 / (rank + 1) as f64;
        }
    }
    Ok(sum / positives as f64)
}

#[derive(Debug, Clone, PartialEq)]
pub struct MapReport {
    /// `None` for classes without positives, which are left out of the mean.
    pub per_class: Vec<Option<f64>>,
    pub map: f64,
}

impl MapReport {
    pub fn excluded(&self) -> Vec<usize> {
        self.per_class
            .iter()
            .enumerate()
            .filter_map(|(j, ap)| ap.is_none().then_some(j))
            .collect()
    }

    /// CSV with a `class,ap` header, one row per class and a final `mAP` row.
    /// Classes without positives get an empty AP field.
    pub fn write_csv(&self, path: impl AsRef<Path>, class_names: &[String]) -> Result<()> {
        let path = path.as_ref();
        let mut out = String::from("class,ap\n");
        for (j, ap) in self.per_class.iter().enumerate() {
            let name = class_names.get(j).cloned().unwrap_or_else(|| j.to_string());
            match ap {
                Some(v) => out.push_str(&format!("{name},{v:.10}\n")),
                None => out.push_str(&format!("{name},\n")),
            }
        }
        out.push_str(&format!("mAP,{:.10}\n", self.map));
        let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
        f.write_all(out.as_bytes()).map_err(|e| Error::io(path, e))
    }
}

pub fn mean_average_precision(classes: &[ClassScores]) -> Result<MapReport> {
    let mut per_class = Vec::with_capacity(classes.len());
    for (j, c) in classes.iter().enumerate() {
        match average_precision(c, j) {
            Ok(ap) => per_class.push(Some(ap)),
            Err(Error::UndefinedAp { class }) => {
                log::warn!("class {class} has no positive labels; excluded from mAP");
                per_class.push(None);
            }
            Err(e) => return Err(e),
        }
    }
    let defined: Vec<f64> = per_class.iter().flatten().copied().collect();
    if defined.is_empty() {
        return Err(Error::NoValidClass);
    }
    let map = defined.iter().sum::<f64>() / defined.len() as f64;
    Ok(MapReport { per_class, map })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn cs(scores: &[f64], labels: &[i8]) -> ClassScores {
        ClassScores::new(
            scores.to_vec(),
            labels.iter().map(|&l| Label::from_i8(l).unwrap()).collect(),
        )
        .unwrap()
    }

    #[test]
    fn hand_example() {
        let ap = average_precision(&cs(&[0.9, 0.8, 0.7], &[1, -1, 1]), 0).unwrap();
        assert!((ap - 0.833_333_33).abs() < 1e-8);
    }

    #[test]
    fn perfect_ranking_and_errors() {
        assert_eq!(average_precision(&cs(&[0.1, 0.9, 0.8, 0.2], &[-1, 1, 1, -1]), 0).unwrap(), 1.0);
        assert!(matches!(
            average_precision(&cs(&[0.1, 0.2], &[-1, -1]), 3),
            Err(Error::UndefinedAp { class: 3 })
        ));
        assert!(ClassScores::new(vec![0.1], vec![Label::Unknown]).is_err());
    }

    #[test]
    fn ties_break_by_index() {
        // positive first in index order → rank 1
        assert_eq!(average_precision(&cs(&[0.5, 0.5], &[1, -1]), 0).unwrap(), 1.0);
        assert_eq!(average_precision(&cs(&[0.5, 0.5], &[-1, 1]), 0).unwrap(), 0.5);
    }

    #[test]
    fn map_examples() {
        let perfect = mean_average_precision(&[cs(&[0.9, 0.1], &[1, -1]), cs(&[0.2, 0.8], &[-1, 1])]).unwrap();
        assert_eq!(perfect.map, 1.0);
        let mixed = mean_average_precision(&[cs(&[0.9, 0.1], &[1, -1]), cs(&[0.9, 0.1], &[-1, 1])]).unwrap();
        assert_eq!(mixed.per_class, vec![Some(1.0), Some(0.5)]);
        assert_eq!(mixed.map, 0.75);
        let partial = mean_average_precision(&[cs(&[0.9, 0.1], &[1, -1]), cs(&[0.9, 0.1], &[-1, -1])]).unwrap();
        assert_eq!(partial.map, 1.0);
        assert_eq!(partial.excluded(), vec![1]);
        assert!(matches!(
            mean_average_precision(&[cs(&[0.9], &[-1])]),
            Err(Error::NoValidClass)
        ));
    }

    #[test]
    fn report_csv() {
        let dir = tempfile::tempdir().unwrap();
        let report = MapReport {
            per_class: vec![Some(1.0), None, Some(0.5)],
            map: 0.75,
        };
        let path = dir.path().join("r.csv");
        report
            .write_csv(&path, &["a".into(), "b".into(), "c".into()])
            .unwrap();
        assert_eq!(
            std::fs::read_to_string(path).unwrap(),
            "class,ap\na,1.0000000000\nb,\nc,0.5000000000\nmAP,0.7500000000\n"
        );
    }

    proptest! {
        #[test]
        fn monotone_transform_invariance(seed in any::<u64>(), len in 2usize..30) {
            let mut rng = crate::numerics::Rng::new(seed);
            let scores: Vec<f64> = (0..len).map(|_| rng.normal()).collect();
            let mut labels: Vec<i8> = (0..len).map(|_| if rng.bernoulli(0.4) { 1 } else { -1 }).collect();
            labels[0] = 1;
            let base = average_precision(&cs(&scores, &labels), 0).unwrap();
            let transformed: Vec<f64> = scores.iter().map(|s| (3.0 * s).exp() + 7.0).collect();
            prop_assert!((average_precision(&cs(&transformed, &labels), 0).unwrap() - base).abs() < 1e-12);

            // permuting items with distinct scores
            let mut idx: Vec<usize> = (0..len).collect();
            rng.shuffle(&mut idx);
            let ps: Vec<f64> = idx.iter().map(|&i| scores[i]).collect();
            let pl: Vec<i8> = idx.iter().map(|&i| labels[i]).collect();
            prop_assert!((average_precision(&cs(&ps, &pl), 0).unwrap() - base).abs() < 1e-12);

            // reversed ranking is no better
            let neg: Vec<f64> = scores.iter().map(|s| -s).collect();
            let best: Vec<f64> = labels.iter().map(|&l| l as f64).collect();
            prop_assert!(average_precision(&cs(&neg, &labels), 0).unwrap() <= average_precision(&cs(&best, &labels), 0).unwrap());
        }
    }
}
