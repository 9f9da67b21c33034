//! On-disk dataset bundle.
//!
//! A bundle is a directory holding:
//!
//! | file            | content                                                   |
//! |-----------------|-----------------------------------------------------------|
//! | `manifest.json` | dimensions and counts (see [`Manifest`])                  |
//! | `features.f32`  | little-endian `f32`, row-major `[num_instances, feature_dim]` |
//! | `labels.txt`    | one class id per instance                                 |
//! | `attributes.csv`| `name,v1,...,vA`, one row per class                       |
//! | `graph.edges`   | `parent<TAB>child` node names, one edge per line          |
//! | `nodes.tsv`     | `id<TAB>name<TAB>kind`, kind ∈ {seen, unseen, internal}   |
//! | `splits.json`   | seen / unseen class ids and train / test instance indices |
//!
//! Writing is canonical: loading a bundle and saving it again reproduces
//! the same bytes for any bundle this crate wrote.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::autodiff::Tensor;
use crate::dataset::{ClassInfo, GzslDataset};
use crate::error::{Error, Result};
use crate::graph::{LabelGraph, LabelNode, NodeKind};

pub const MANIFEST_FILE: &str = "manifest.json";
pub const FEATURES_FILE: &str = "features.f32";
pub const LABELS_FILE: &str = "labels.txt";
pub const ATTRIBUTES_FILE: &str = "attributes.csv";
pub const EDGES_FILE: &str = "graph.edges";
pub const NODES_FILE: &str = "nodes.tsv";
pub const SPLITS_FILE: &str = "splits.json";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub name: String,
    pub feature_dim: usize,
    pub attribute_dim: usize,
    pub num_instances: usize,
    pub num_train: usize,
    pub num_test_unseen: usize,
    pub num_test_seen: usize,
    pub num_seen_classes: usize,
    pub num_unseen_classes: usize,
    pub num_graph_nodes_with_images: usize,
    pub num_graph_nodes_without_images: usize,
    /// Optional published-benchmark profile (`"cub"` or `"sun"`) whose
    /// statistics the counts must match.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub profile: Option<String>,
}

/// Published statistics of a benchmark.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DatasetProfile {
    pub name: &'static str,
    pub attribute_dim: usize,
    pub seen_classes: usize,
    pub unseen_classes: usize,
    pub nodes_with_images: usize,
    pub nodes_without_images: usize,
    pub train_instances: usize,
    pub test_unseen: usize,
    pub test_seen: usize,
}

pub const CUB_PROFILE: DatasetProfile = DatasetProfile {
    name: "cub",
    attribute_dim: 312,
    seen_classes: 150,
    unseen_classes: 50,
    nodes_with_images: 200,
    nodes_without_images: 182,
    train_instances: 7057,
    test_unseen: 2967,
    test_seen: 1764,
};

pub const SUN_PROFILE: DatasetProfile = DatasetProfile {
    name: "sun",
    attribute_dim: 102,
    seen_classes: 645,
    unseen_classes: 72,
    nodes_with_images: 717,
    nodes_without_images: 16,
    train_instances: 10320,
    test_unseen: 1440,
    test_seen: 2580,
};

impl DatasetProfile {
    pub fn by_name(name: &str) -> Option<Self> {
        match name {
            "cub" => Some(CUB_PROFILE),
            "sun" => Some(SUN_PROFILE),
            _ => None,
        }
    }

    /// Checks a manifest's declared counts against these statistics.
    pub fn check(&self, m: &Manifest) -> Result<()> {
        let pairs = [
            ("attribute_dim", self.attribute_dim, m.attribute_dim),
            ("num_seen_classes", self.seen_classes, m.num_seen_classes),
            ("num_unseen_classes", self.unseen_classes, m.num_unseen_classes),
            ("num_graph_nodes_with_images", self.nodes_with_images, m.num_graph_nodes_with_images),
            ("num_graph_nodes_without_images", self.nodes_without_images, m.num_graph_nodes_without_images),
            ("num_train", self.train_instances, m.num_train),
            ("num_test_unseen", self.test_unseen, m.num_test_unseen),
            ("num_test_seen", self.test_seen, m.num_test_seen),
        ];
        for (field, expected, declared) in pairs {
            if expected != declared {
                return Err(Error::ManifestMismatch {
                    field,
                    declared,
                    actual: expected,
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Splits {
    pub seen_class_ids: Vec<usize>,
    pub unseen_class_ids: Vec<usize>,
    pub train_indices: Vec<usize>,
    pub test_indices: Vec<usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct NodeRecord {
    pub id: usize,
    pub name: String,
    pub kind: NodeKind,
}

/// Raw contents of a bundle directory.
#[derive(Debug, Clone, PartialEq)]
pub struct DatasetBundle {
    pub manifest: Manifest,
    /// Row-major `[num_instances, feature_dim]`.
    pub features: Vec<f32>,
    pub labels: Vec<usize>,
    /// `(class name, attribute vector)` in file order.
    pub attributes: Vec<(String, Vec<f64>)>,
    pub nodes: Vec<NodeRecord>,
    /// `(parent name, child name)` in file order.
    pub edges: Vec<(String, String)>,
    pub splits: Splits,
}

fn read_text(dir: &Path, file: &'static str) -> Result<String> {
    let path = dir.join(file);
    fs::read_to_string(&path).map_err(|e| {
        if e.kind() == std::io::ErrorKind::NotFound {
            Error::Malformed {
                file,
                message: "file missing".into(),
            }
        } else {
            Error::io(path, e)
        }
    })
}

fn malformed(file: &'static str, line: usize, message: impl std::fmt::Display) -> Error {
    Error::Malformed {
        file,
        message: format!("line {line}: {message}"),
    }
}

fn parse_nodes(text: &str) -> Result<Vec<NodeRecord>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let parts: Vec<&str> = line.split('\t').collect();
        if parts.len() != 3 {
            return Err(malformed(NODES_FILE, i + 1, "expected id<TAB>name<TAB>kind"));
        }
        let id = parts[0]
            .parse()
            .map_err(|e| malformed(NODES_FILE, i + 1, e))?;
        let kind = NodeKind::parse_file_kind(parts[2])
            .ok_or_else(|| malformed(NODES_FILE, i + 1, format!("unknown kind {:?}", parts[2])))?;
        out.push(NodeRecord {
            id,
            name: parts[1].to_string(),
            kind,
        });
    }
    Ok(out)
}

fn parse_edges(text: &str) -> Result<Vec<(String, String)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let (p, c) = line
            .split_once('\t')
            .ok_or_else(|| malformed(EDGES_FILE, i + 1, "expected parent<TAB>child"))?;
        if c.contains('\t') {
            return Err(malformed(EDGES_FILE, i + 1, "expected exactly two fields"));
        }
        out.push((p.to_string(), c.to_string()));
    }
    Ok(out)
}

fn parse_attributes(text: &str) -> Result<Vec<(String, Vec<f64>)>> {
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.is_empty() {
            continue;
        }
        let mut fields = line.split(',');
        let name = fields.next().unwrap_or_default().to_string();
        let values = fields
            .map(|f| f.trim().parse::<f64>())
            .collect::<std::result::Result<Vec<_>, _>>()
            .map_err(|e| malformed(ATTRIBUTES_FILE, i + 1, e))?;
        if values.iter().any(|v| !v.is_finite()) {
            return Err(malformed(ATTRIBUTES_FILE, i + 1, "non-finite attribute"));
        }
        out.push((name, values));
    }
    Ok(out)
}

fn parse_labels(text: &str) -> Result<Vec<usize>> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.is_empty())
        .map(|(i, l)| l.trim().parse().map_err(|e| malformed(LABELS_FILE, i + 1, e)))
        .collect()
}

fn check_count(field: &'static str, declared: usize, actual: usize) -> Result<()> {
    if declared != actual {
        return Err(Error::ManifestMismatch {
            field,
            declared,
            actual,
        });
    }
    Ok(())
}

impl DatasetBundle {
    /// Reads and validates a bundle directory.
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest_path = dir.join(MANIFEST_FILE);
        if !manifest_path.is_file() {
            return Err(Error::ManifestMissing(dir.to_path_buf()));
        }
        let manifest: Manifest = serde_json::from_str(&read_text(dir, MANIFEST_FILE)?)
            .map_err(|e| Error::Malformed {
                file: MANIFEST_FILE,
                message: e.to_string(),
            })?;

        let feat_path = dir.join(FEATURES_FILE);
        let raw = fs::read(&feat_path).map_err(|e| {
            if e.kind() == std::io::ErrorKind::NotFound {
                Error::Malformed {
                    file: FEATURES_FILE,
                    message: "file missing".into(),
                }
            } else {
                Error::io(&feat_path, e)
            }
        })?;
        let expected = manifest.num_instances * manifest.feature_dim * 4;
        if raw.len() != expected {
            return Err(Error::Truncated {
                file: FEATURES_FILE,
                expected,
                found: raw.len(),
            });
        }
        let features: Vec<f32> = raw
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        if features.iter().any(|v| !v.is_finite()) {
            return Err(Error::Malformed {
                file: FEATURES_FILE,
                message: "non-finite feature value".into(),
            });
        }

        let labels = parse_labels(&read_text(dir, LABELS_FILE)?)?;
        let attributes = parse_attributes(&read_text(dir, ATTRIBUTES_FILE)?)?;
        let nodes = parse_nodes(&read_text(dir, NODES_FILE)?)?;
        let edges = parse_edges(&read_text(dir, EDGES_FILE)?)?;
        let splits: Splits = serde_json::from_str(&read_text(dir, SPLITS_FILE)?).map_err(|e| {
            Error::Malformed {
                file: SPLITS_FILE,
                message: e.to_string(),
            }
        })?;

        let bundle = Self {
            manifest,
            features,
            labels,
            attributes,
            nodes,
            edges,
            splits,
        };
        bundle.validate()?;
        Ok(bundle)
    }

    /// Cross-checks every manifest count and cross-reference.
    pub fn validate(&self) -> Result<()> {
        let m = &self.manifest;
        if m.feature_dim == 0 || m.attribute_dim == 0 {
            return Err(Error::Malformed {
                file: MANIFEST_FILE,
                message: "dimensions must be positive".into(),
            });
        }
        check_count("num_instances", m.num_instances, self.labels.len())?;
        check_count(
            "feature_dim",
            m.feature_dim,
            self.features.len().checked_div(m.num_instances).unwrap_or(m.feature_dim),
        )?;

        let count_kind = |k: NodeKind| self.nodes.iter().filter(|n| n.kind == k).count();
        let seen = count_kind(NodeKind::Seen);
        let unseen = count_kind(NodeKind::Unseen);
        check_count("num_seen_classes", m.num_seen_classes, seen)?;
        check_count("num_unseen_classes", m.num_unseen_classes, unseen)?;
        check_count("num_graph_nodes_with_images", m.num_graph_nodes_with_images, seen + unseen)?;
        check_count(
            "num_graph_nodes_without_images",
            m.num_graph_nodes_without_images,
            count_kind(NodeKind::Internal),
        )?;

        let mut ids = BTreeSet::new();
        let mut names = BTreeSet::new();
        for n in &self.nodes {
            if !ids.insert(n.id) {
                return Err(Error::Malformed {
                    file: NODES_FILE,
                    message: format!("duplicate id {}", n.id),
                });
            }
            if !names.insert(n.name.as_str()) {
                return Err(Error::Malformed {
                    file: NODES_FILE,
                    message: format!("duplicate name {:?}", n.name),
                });
            }
        }
        for (p, c) in &self.edges {
            for name in [p, c] {
                if !names.contains(name.as_str()) {
                    return Err(Error::Malformed {
                        file: EDGES_FILE,
                        message: format!("unknown node name {name:?}"),
                    });
                }
            }
        }

        let attr_names: BTreeMap<&str, &Vec<f64>> =
            self.attributes.iter().map(|(n, v)| (n.as_str(), v)).collect();
        if attr_names.len() != self.attributes.len() {
            return Err(Error::Malformed {
                file: ATTRIBUTES_FILE,
                message: "duplicate class name".into(),
            });
        }
        for (name, v) in &self.attributes {
            if !names.contains(name.as_str()) {
                return Err(Error::Malformed {
                    file: ATTRIBUTES_FILE,
                    message: format!("unknown node name {name:?}"),
                });
            }
            check_count("attribute_dim", m.attribute_dim, v.len())?;
        }
        for n in &self.nodes {
            if matches!(n.kind, NodeKind::Seen | NodeKind::Unseen) && !attr_names.contains_key(n.name.as_str()) {
                return Err(Error::Malformed {
                    file: ATTRIBUTES_FILE,
                    message: format!("class {:?} has no attribute row", n.name),
                });
            }
        }

        let kind_of: BTreeMap<usize, NodeKind> = self.nodes.iter().map(|n| (n.id, n.kind)).collect();
        let s = &self.splits;
        check_count("num_seen_classes", m.num_seen_classes, s.seen_class_ids.len())?;
        check_count("num_unseen_classes", m.num_unseen_classes, s.unseen_class_ids.len())?;
        for (list, kind) in [(&s.seen_class_ids, NodeKind::Seen), (&s.unseen_class_ids, NodeKind::Unseen)] {
            for id in list {
                if kind_of.get(id) != Some(&kind) {
                    return Err(Error::Malformed {
                        file: SPLITS_FILE,
                        message: format!("class id {id} is not a {kind} node"),
                    });
                }
            }
        }
        check_count("num_train", m.num_train, s.train_indices.len())?;
        let mut test_seen = 0;
        let mut test_unseen = 0;
        let mut used = vec![false; self.labels.len()];
        for (list, is_train) in [(&s.train_indices, true), (&s.test_indices, false)] {
            for &i in list {
                let label = *self.labels.get(i).ok_or_else(|| Error::Malformed {
                    file: SPLITS_FILE,
                    message: format!("instance index {i} out of range"),
                })?;
                if std::mem::replace(&mut used[i], true) {
                    return Err(Error::Malformed {
                        file: SPLITS_FILE,
                        message: format!("instance index {i} listed twice"),
                    });
                }
                match (kind_of.get(&label), is_train) {
                    (Some(NodeKind::Seen), true) => {}
                    (Some(NodeKind::Seen), false) => test_seen += 1,
                    (Some(NodeKind::Unseen), false) => test_unseen += 1,
                    (Some(NodeKind::Unseen), true) => {
                        return Err(Error::Malformed {
                            file: SPLITS_FILE,
                            message: format!("training instance {i} belongs to unseen class {label}"),
                        })
                    }
                    _ => {
                        return Err(Error::Malformed {
                            file: LABELS_FILE,
                            message: format!("instance {i} has non-class label {label}"),
                        })
                    }
                }
            }
        }
        check_count("num_test_seen", m.num_test_seen, test_seen)?;
        check_count("num_test_unseen", m.num_test_unseen, test_unseen)?;

        if let Some(p) = &m.profile {
            DatasetProfile::by_name(p)
                .ok_or_else(|| Error::Malformed {
                    file: MANIFEST_FILE,
                    message: format!("unknown profile {p:?}"),
                })?
                .check(m)?;
        }
        Ok(())
    }

    /// Writes the bundle in canonical form.
    pub fn save(&self, dir: &Path) -> Result<()> {
        self.validate()?;
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        let write = |file: &str, bytes: &[u8]| -> Result<()> {
            let p = dir.join(file);
            fs::write(&p, bytes).map_err(|e| Error::io(p, e))
        };
        let mut manifest = serde_json::to_string_pretty(&self.manifest).expect("manifest serializes");
        manifest.push('\n');
        write(MANIFEST_FILE, manifest.as_bytes())?;

        let mut raw = Vec::with_capacity(self.features.len() * 4);
        for v in &self.features {
            raw.extend_from_slice(&v.to_le_bytes());
        }
        write(FEATURES_FILE, &raw)?;

        let mut labels = String::new();
        for l in &self.labels {
            writeln!(labels, "{l}").unwrap();
        }
        write(LABELS_FILE, labels.as_bytes())?;

        let mut attrs = String::new();
        for (name, v) in &self.attributes {
            attrs.push_str(name);
            for x in v {
                write!(attrs, ",{x}").unwrap();
            }
            attrs.push('\n');
        }
        write(ATTRIBUTES_FILE, attrs.as_bytes())?;

        let mut nodes = String::new();
        for n in &self.nodes {
            writeln!(nodes, "{}\t{}\t{}", n.id, n.name, n.kind).unwrap();
        }
        write(NODES_FILE, nodes.as_bytes())?;

        let mut edges = String::new();
        for (p, c) in &self.edges {
            writeln!(edges, "{p}\t{c}").unwrap();
        }
        write(EDGES_FILE, edges.as_bytes())?;

        let mut splits = serde_json::to_string(&self.splits).expect("splits serialize");
        splits.push('\n');
        write(SPLITS_FILE, splits.as_bytes())
    }

    fn feature_rows(&self, indices: &[usize]) -> Tensor {
        let d = self.manifest.feature_dim;
        let mut values = Vec::with_capacity(indices.len() * d);
        for &i in indices {
            values.extend(self.features[i * d..(i + 1) * d].iter().map(|&v| v as f64));
        }
        Tensor::from_vec(vec![indices.len(), d], values).expect("validated shape")
    }

    pub fn to_dataset(&self) -> Result<GzslDataset> {
        let attrs: BTreeMap<&str, &Vec<f64>> =
            self.attributes.iter().map(|(n, v)| (n.as_str(), v)).collect();
        let classes = self
            .nodes
            .iter()
            .filter(|n| matches!(n.kind, NodeKind::Seen | NodeKind::Unseen))
            .map(|n| ClassInfo {
                id: n.id,
                name: n.name.clone(),
                seen: n.kind == NodeKind::Seen,
                attributes: attrs[n.name.as_str()].clone(),
            })
            .collect();
        let s = &self.splits;
        GzslDataset::new(
            classes,
            self.feature_rows(&s.train_indices),
            s.train_indices.iter().map(|&i| self.labels[i]).collect(),
            self.feature_rows(&s.test_indices),
            s.test_indices.iter().map(|&i| self.labels[i]).collect(),
        )
    }

    /// The relation graph as stored (no root, internal nodes possibly unattributed).
    pub fn to_graph(&self) -> Result<LabelGraph> {
        let attrs: BTreeMap<&str, &Vec<f64>> =
            self.attributes.iter().map(|(n, v)| (n.as_str(), v)).collect();
        let id_of: BTreeMap<&str, usize> = self.nodes.iter().map(|n| (n.name.as_str(), n.id)).collect();
        let nodes = self
            .nodes
            .iter()
            .map(|n| LabelNode::new(n.id, n.name.clone(), n.kind, attrs.get(n.name.as_str()).map(|v| (*v).clone())))
            .collect();
        let edges = self
            .edges
            .iter()
            .map(|(p, c)| (id_of[p.as_str()], id_of[c.as_str()]))
            .collect();
        LabelGraph::new(nodes, edges)
    }
}

/// Loads a bundle and returns its dataset and relation graph.
pub fn load_bundle(dir: &Path) -> Result<(GzslDataset, LabelGraph)> {
    let b = DatasetBundle::load(dir)?;
    Ok((b.to_dataset()?, b.to_graph()?))
}
