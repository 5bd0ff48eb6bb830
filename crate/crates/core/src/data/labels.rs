use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::numerics::{streams, Rng};

/// Ternary annotation of one (image, class) cell.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Label {
    Absent,
    Unknown,
    Present,
}

impl Label {
    pub fn from_i8(v: i8) -> Result<Self> {
        match v {
            1 => Ok(Label::Present),
            -1 => Ok(Label::Absent),
            0 => Ok(Label::Unknown),
            other => Err(Error::Label(format!("label value {other} not in {{1, -1, 0}}"))),
        }
    }

    pub fn as_i8(self) -> i8 {
        match self {
            Label::Present => 1,
            Label::Absent => -1,
            Label::Unknown => 0,
        }
    }

    pub fn is_known(self) -> bool {
        self != Label::Unknown
    }
}

/// `M × N` matrix of ternary labels, row-major by image.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LabelMatrix {
    num_images: usize,
    num_classes: usize,
    entries: Vec<Label>,
}

impl LabelMatrix {
    pub fn new(num_images: usize, num_classes: usize, entries: Vec<Label>) -> Result<Self> {
        if num_images * num_classes != entries.len() {
            return Err(Error::Shape(format!(
                "{num_images}×{num_classes} label matrix with {} entries",
                entries.len()
            )));
        }
        if num_classes == 0 {
            return Err(Error::Shape("label matrix with zero classes".into()));
        }
        Ok(Self {
            num_images,
            num_classes,
            entries,
        })
    }

    pub fn from_rows(rows: &[Vec<i8>]) -> Result<Self> {
        let n = rows.first().map(Vec::len).unwrap_or(0);
        let mut entries = Vec::with_capacity(rows.len() * n);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != n {
                return Err(Error::Shape(format!("row {i} has {} labels, expected {n}", row.len())));
            }
            for &v in row {
                entries.push(Label::from_i8(v)?);
            }
        }
        Self::new(rows.len(), n, entries)
    }

    pub fn num_images(&self) -> usize {
        self.num_images
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn get(&self, image: usize, class: usize) -> Label {
        self.entries[image * self.num_classes + class]
    }

    pub fn row(&self, image: usize) -> &[Label] {
        &self.entries[image * self.num_classes..(image + 1) * self.num_classes]
    }

    pub fn entries(&self) -> &[Label] {
        &self.entries
    }

    pub fn known_count(&self) -> usize {
        self.entries.iter().filter(|l| l.is_known()).count()
    }

    pub fn is_fully_annotated(&self) -> bool {
        self.entries.iter().all(|l| l.is_known())
    }

    /// Rows `indices`, in that order.
    pub fn select(&self, indices: &[usize]) -> LabelMatrix {
        let entries = indices.iter().flat_map(|&i| self.row(i).iter().copied()).collect();
        LabelMatrix {
            num_images: indices.len(),
            num_classes: self.num_classes,
            entries,
        }
    }

    /// Reads a label CSV: a header row of class names, then one row of
    /// integers in `{1, -1, 0}` per image.
    pub fn read_csv(path: impl AsRef<Path>) -> Result<(LabelMatrix, Vec<String>)> {
        let path = path.as_ref();
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut reader = csv::Reader::from_path(path).map_err(csv_err)?;
        let names: Vec<String> = reader
            .headers()
            .map_err(csv_err)?
            .iter()
            .map(|s| s.trim().to_owned())
            .collect();
        let mut entries = Vec::new();
        let mut rows = 0;
        for (i, record) in reader.records().enumerate() {
            let record = record.map_err(csv_err)?;
            if record.len() != names.len() {
                return Err(Error::Label(format!(
                    "{}: row {} has {} fields, header has {}",
                    path.display(),
                    i + 1,
                    record.len(),
                    names.len()
                )));
            }
            for field in record.iter() {
                let v: i8 = field.trim().parse().map_err(|_| {
                    Error::Label(format!("{}: row {}: bad label {field:?}", path.display(), i + 1))
                })?;
                entries.push(Label::from_i8(v)?);
            }
            rows += 1;
        }
        Ok((LabelMatrix::new(rows, names.len(), entries)?, names))
    }

    pub fn write_csv(&self, path: impl AsRef<Path>, class_names: &[String]) -> Result<()> {
        let path = path.as_ref();
        if class_names.len() != self.num_classes {
            return Err(Error::Shape(format!(
                "{} class names for {} classes",
                class_names.len(),
                self.num_classes
            )));
        }
        let csv_err = |source| Error::Csv {
            path: path.to_path_buf(),
            source,
        };
        let mut writer = csv::Writer::from_path(path).map_err(csv_err)?;
        writer.write_record(class_names).map_err(csv_err)?;
        for i in 0..self.num_images {
            writer
                .write_record(self.row(i).iter().map(|l| l.as_i8().to_string()))
                .map_err(csv_err)?;
        }
        writer.flush().map_err(|e| Error::io(path, e))
    }
}

/// Partial-annotation protocol: keep each label with probability `known_fraction`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MaskSpec {
    pub known_fraction: f64,
    pub seed: u64,
}

impl MaskSpec {
    pub fn new(known_fraction: f64, seed: u64) -> Result<Self> {
        let spec = Self {
            known_fraction,
            seed,
        };
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.known_fraction > 0.0 && self.known_fraction <= 1.0) {
            return Err(Error::Config(format!(
                "known fraction {} outside (0, 1]",
                self.known_fraction
            )));
        }
        Ok(())
    }
}

/// Hides labels of a fully annotated matrix.
///
/// Each cell is kept independently with probability `known_fraction` and
/// otherwise set to [`Label::Unknown`]. Cells are visited in row-major order
/// with one uniform draw each, so the result depends only on the seed and the
/// matrix shape. The mask is drawn once; training reuses it every epoch.
pub fn mask_labels(full: &LabelMatrix, spec: &MaskSpec) -> Result<LabelMatrix> {
    spec.validate()?;
    if !full.is_fully_annotated() {
        return Err(Error::Label(
            "masking requires a fully annotated label matrix (found unknown entries)".into(),
        ));
    }
    let mut rng = Rng::with_stream(spec.seed, streams::MASK);
    let entries = full
        .entries
        .iter()
        .map(|&l| {
            if rng.next_f64() < spec.known_fraction {
                l
            } else {
                Label::Unknown
            }
        })
        .collect();
    LabelMatrix::new(full.num_images, full.num_classes, entries)
}
