//! Synthetic hierarchical benchmark.
//!
//! A balanced `is-a` tree whose leaves are classes. Attributes drift down the
//! tree (child = parent + noise), so related classes have related attribute
//! vectors. Image features are a fixed random linear map of the class
//! attributes plus a class offset, with per-instance noise on top. In every
//! leaf group a fraction of the leaves is held out as unseen. Internal nodes
//! carry no attributes.
//!
//! The tree's top node is not written: the fixed root added at training time
//! plays that role, so `depth` counts the levels below it.

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::bundle::{DatasetBundle, Manifest, NodeRecord, Splits};
use crate::error::{Error, Result};
use crate::graph::NodeKind;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthParams {
    pub branching: usize,
    pub depth: usize,
    pub feature_dim: usize,
    pub attribute_dim: usize,
    pub unseen_fraction: f64,
    pub train_per_class: usize,
    pub test_per_class: usize,
    /// Std of the per-level attribute perturbation.
    pub attribute_noise: f64,
    /// Std of the class-specific prototype offset.
    pub class_offset: f64,
    /// Std of the per-instance feature noise.
    pub feature_noise: f64,
    pub seed: u64,
}

impl Default for SynthParams {
    fn default() -> Self {
        Self {
            branching: 5,
            depth: 2,
            feature_dim: 64,
            attribute_dim: 16,
            unseen_fraction: 0.2,
            train_per_class: 100,
            test_per_class: 30,
            attribute_noise: 1.0,
            class_offset: 0.5,
            feature_noise: 1.0,
            seed: 0,
        }
    }
}

impl SynthParams {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("branching", self.branching),
            ("depth", self.depth),
            ("feature_dim", self.feature_dim),
            ("attribute_dim", self.attribute_dim),
            ("train_per_class", self.train_per_class),
            ("test_per_class", self.test_per_class),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidArgument(format!("{name} must be positive")));
            }
        }
        if !(self.unseen_fraction > 0.0 && self.unseen_fraction < 1.0) {
            return Err(Error::InvalidArgument("unseen_fraction must lie in (0, 1)".into()));
        }
        for (name, v) in [
            ("attribute_noise", self.attribute_noise),
            ("class_offset", self.class_offset),
            ("feature_noise", self.feature_noise),
        ] {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(Error::InvalidArgument(format!("{name} must be nonnegative")));
            }
        }
        let leaves = self.branching.checked_pow(self.depth as u32);
        if leaves.is_none_or(|l| l > 1_000_000) {
            return Err(Error::InvalidArgument("tree too large".into()));
        }
        Ok(())
    }

    fn unseen_per_group(&self) -> usize {
        (self.unseen_fraction * self.branching as f64).round() as usize
    }
}

struct TreeNode {
    name: String,
    parent: Option<usize>,
    attributes: Vec<f64>,
    leaf: bool,
}

fn normal_vec<R: Rng>(rng: &mut R, n: usize, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Generates a bundle deterministically from `params.seed`.
pub fn gen_synth(params: &SynthParams) -> Result<DatasetBundle> {
    params.validate()?;
    let per_group = params.unseen_per_group();
    let seen_leaves = params.branching.saturating_sub(per_group) * params.branching.pow(params.depth as u32 - 1);
    let unseen_leaves = per_group * params.branching.pow(params.depth as u32 - 1);
    if seen_leaves < 2 || unseen_leaves < 1 {
        return Err(Error::InvalidArgument(format!(
            "parameters give {seen_leaves} seen and {unseen_leaves} unseen leaves; need at least 2 and 1"
        )));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(params.seed);
    let a = params.attribute_dim;
    let f = params.feature_dim;

    // Breadth-first tree below the implicit top node.
    let top = normal_vec(&mut rng, a, 1.0);
    let mut nodes: Vec<TreeNode> = Vec::new();
    let mut frontier: Vec<(Option<usize>, String, Vec<f64>)> = vec![(None, "node".to_string(), top)];
    for level in 1..=params.depth {
        let mut next = Vec::new();
        for (parent, prefix, attrs) in frontier {
            for k in 0..params.branching {
                let noise = normal_vec(&mut rng, a, params.attribute_noise);
                let child: Vec<f64> = attrs.iter().zip(&noise).map(|(p, n)| p + n).collect();
                let name = format!("{prefix}_{k}");
                nodes.push(TreeNode {
                    name: name.clone(),
                    parent,
                    attributes: child.clone(),
                    leaf: level == params.depth,
                });
                next.push((Some(nodes.len() - 1), name, child));
            }
        }
        frontier = next;
    }

    // Unseen hold-out per leaf group.
    let mut kinds: Vec<NodeKind> = nodes
        .iter()
        .map(|n| if n.leaf { NodeKind::Seen } else { NodeKind::Internal })
        .collect();
    let leaf_ids: Vec<usize> = (0..nodes.len()).filter(|&i| nodes[i].leaf).collect();
    for group in leaf_ids.chunks(params.branching) {
        let mut group = group.to_vec();
        group.shuffle(&mut rng);
        for &i in group.iter().take(per_group) {
            kinds[i] = NodeKind::Unseen;
        }
    }

    // Feature prototypes.
    let map_scale = 1.0 / (a as f64).sqrt();
    let map = normal_vec(&mut rng, f * a, map_scale);
    let mut features: Vec<f32> = Vec::new();
    let mut labels = Vec::new();
    let mut train_indices = Vec::new();
    let mut test_indices = Vec::new();
    for &leaf in &leaf_ids {
        let attrs = &nodes[leaf].attributes;
        let offset = normal_vec(&mut rng, f, params.class_offset);
        let prototype: Vec<f64> = (0..f)
            .map(|r| {
                let row = &map[r * a..(r + 1) * a];
                row.iter().zip(attrs).map(|(m, x)| m * x).sum::<f64>() + offset[r]
            })
            .collect();
        let n_train = if kinds[leaf] == NodeKind::Seen { params.train_per_class } else { 0 };
        for k in 0..n_train + params.test_per_class {
            let noise = normal_vec(&mut rng, f, params.feature_noise);
            features.extend(prototype.iter().zip(&noise).map(|(p, n)| (p + n) as f32));
            if k < n_train {
                train_indices.push(labels.len());
            } else {
                test_indices.push(labels.len());
            }
            labels.push(leaf);
        }
    }

    let records: Vec<NodeRecord> = nodes
        .iter()
        .enumerate()
        .map(|(id, n)| NodeRecord {
            id,
            name: n.name.clone(),
            kind: kinds[id],
        })
        .collect();
    let edges = nodes
        .iter()
        .filter_map(|n| n.parent.map(|p| (nodes[p].name.clone(), n.name.clone())))
        .collect();
    let attributes = leaf_ids
        .iter()
        .map(|&i| (nodes[i].name.clone(), nodes[i].attributes.clone()))
        .collect();
    let ids_of = |k: NodeKind| leaf_ids.iter().copied().filter(|&i| kinds[i] == k).collect::<Vec<_>>();
    let seen_class_ids = ids_of(NodeKind::Seen);
    let unseen_class_ids = ids_of(NodeKind::Unseen);
    let num_test_seen = seen_class_ids.len() * params.test_per_class;
    let num_test_unseen = unseen_class_ids.len() * params.test_per_class;

    let manifest = Manifest {
        name: "synth".into(),
        feature_dim: f,
        attribute_dim: a,
        num_instances: labels.len(),
        num_train: train_indices.len(),
        num_test_unseen,
        num_test_seen,
        num_seen_classes: seen_class_ids.len(),
        num_unseen_classes: unseen_class_ids.len(),
        num_graph_nodes_with_images: leaf_ids.len(),
        num_graph_nodes_without_images: nodes.len() - leaf_ids.len(),
        profile: None,
    };
    let bundle = DatasetBundle {
        manifest,
        features,
        labels,
        attributes,
        nodes: records,
        edges,
        splits: Splits {
            seen_class_ids,
            unseen_class_ids,
            train_indices,
            test_indices,
        },
    };
    bundle.validate()?;
    Ok(bundle)
}
