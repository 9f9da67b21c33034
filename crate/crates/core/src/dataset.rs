//! In-memory zero-shot dataset: per-class attributes plus labelled image
//! features split into training (seen classes only) and test instances.

use std::collections::BTreeMap;

use crate::autodiff::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassInfo {
    pub id: usize,
    pub name: String,
    pub seen: bool,
    pub attributes: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GzslDataset {
    classes: Vec<ClassInfo>,
    by_id: BTreeMap<usize, usize>,
    pub train_features: Tensor,
    pub train_labels: Vec<usize>,
    pub test_features: Tensor,
    pub test_labels: Vec<usize>,
}

impl GzslDataset {
    pub fn new(
        mut classes: Vec<ClassInfo>,
        train_features: Tensor,
        train_labels: Vec<usize>,
        test_features: Tensor,
        test_labels: Vec<usize>,
    ) -> Result<Self> {
        classes.sort_by_key(|c| c.id);
        let mut by_id = BTreeMap::new();
        for (i, c) in classes.iter().enumerate() {
            if by_id.insert(c.id, i).is_some() {
                return Err(Error::Dataset(format!("duplicate class id {}", c.id)));
            }
        }
        let attr_dim = classes.first().map_or(0, |c| c.attributes.len());
        if attr_dim == 0 || classes.iter().any(|c| c.attributes.len() != attr_dim) {
            return Err(Error::Dataset("inconsistent or empty attribute vectors".into()));
        }
        if train_features.rows() != train_labels.len() || test_features.rows() != test_labels.len() {
            return Err(Error::Dataset("feature rows and label counts differ".into()));
        }
        if train_features.cols() != test_features.cols() {
            return Err(Error::Dataset("train and test feature dims differ".into()));
        }
        for &l in &train_labels {
            match by_id.get(&l) {
                Some(&i) if classes[i].seen => {}
                Some(_) => {
                    return Err(Error::Dataset(format!(
                        "training instance labelled with unseen class {l}"
                    )))
                }
                None => return Err(Error::Dataset(format!("unknown class id {l}"))),
            }
        }
        if let Some(l) = test_labels.iter().find(|l| !by_id.contains_key(l)) {
            return Err(Error::Dataset(format!("unknown class id {l}")));
        }
        Ok(Self {
            classes,
            by_id,
            train_features,
            train_labels,
            test_features,
            test_labels,
        })
    }

    /// All classes ordered by id.
    pub fn classes(&self) -> &[ClassInfo] {
        &self.classes
    }

    pub fn class(&self, id: usize) -> Option<&ClassInfo> {
        self.by_id.get(&id).map(|&i| &self.classes[i])
    }

    /// Position of a class in [`GzslDataset::classes`]; doubles as the
    /// classifier output index.
    pub fn class_index(&self, id: usize) -> Option<usize> {
        self.by_id.get(&id).copied()
    }

    pub fn seen_ids(&self) -> Vec<usize> {
        self.classes.iter().filter(|c| c.seen).map(|c| c.id).collect()
    }

    pub fn unseen_ids(&self) -> Vec<usize> {
        self.classes.iter().filter(|c| !c.seen).map(|c| c.id).collect()
    }

    pub fn feature_dim(&self) -> usize {
        self.train_features.cols()
    }

    pub fn attribute_dim(&self) -> usize {
        self.classes[0].attributes.len()
    }

    pub fn num_train(&self) -> usize {
        self.train_labels.len()
    }

    /// Attribute rows for a list of class ids.
    pub fn attribute_rows(&self, ids: &[usize]) -> Result<Tensor> {
        let d = self.attribute_dim();
        let mut values = Vec::with_capacity(ids.len() * d);
        for id in ids {
            let c = self
                .class(*id)
                .ok_or_else(|| Error::Dataset(format!("unknown class id {id}")))?;
            values.extend_from_slice(&c.attributes);
        }
        Tensor::from_vec(vec![ids.len(), d], values)
    }

    /// Training row indices grouped by class id.
    pub fn train_indices_by_class(&self) -> BTreeMap<usize, Vec<usize>> {
        let mut out: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
        for (i, &l) in self.train_labels.iter().enumerate() {
            out.entry(l).or_default().push(i);
        }
        out
    }
}
