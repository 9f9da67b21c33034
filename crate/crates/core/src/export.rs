//! Tab-separated dump of the attribute-encoder means of every graph node,
//! for external projection (t-SNE and the like).

use std::fmt::Write as _;
use std::path::Path;

use crate::autodiff::{MlpEncoder, Tensor};
use crate::error::{Error, Result};
use crate::graph::{impute_attributes, LabelGraph, NodeKind};

/// One exported node.
#[derive(Debug, Clone, PartialEq)]
pub struct LatentRecord {
    pub name: String,
    pub kind: NodeKind,
    pub mean: Vec<f64>,
}

/// Encodes every node of `graph` (imputing unattributed ones). A root with the
/// zero mean is added when the graph has none.
pub fn latent_records(encoder: &MlpEncoder, graph: &LabelGraph) -> Result<Vec<LatentRecord>> {
    let mut g = impute_attributes(graph)?;
    if g.root().is_none() {
        g = g.with_root()?;
    }
    let attributed: Vec<_> = g.nodes().iter().filter(|n| n.kind != NodeKind::Root).collect();
    let rows = attributed
        .iter()
        .map(|n| n.attributes.clone().ok_or(Error::MissingAttributes(n.id)))
        .collect::<Result<Vec<_>>>()?;
    let means = if rows.is_empty() {
        Tensor::zeros(&[0, encoder.latent_dim()])
    } else {
        encoder.encode_tensors(&Tensor::from_rows(&rows)?)?.0
    };
    let mut out: Vec<LatentRecord> = attributed
        .iter()
        .enumerate()
        .map(|(r, n)| LatentRecord {
            name: n.name.clone(),
            kind: n.kind,
            mean: means.row(r).to_vec(),
        })
        .collect();
    let root = g.node(g.root().expect("root added")).expect("root exists");
    out.push(LatentRecord {
        name: root.name.clone(),
        kind: NodeKind::Root,
        mean: vec![0.0; encoder.latent_dim()],
    });
    Ok(out)
}

pub fn format_records(records: &[LatentRecord]) -> String {
    let mut s = String::new();
    for r in records {
        write!(s, "{}\t{}", r.name, r.kind).unwrap();
        for v in &r.mean {
            write!(s, "\t{v}").unwrap();
        }
        s.push('\n');
    }
    s
}

pub fn export_latents(encoder: &MlpEncoder, graph: &LabelGraph, path: &Path) -> Result<usize> {
    let records = latent_records(encoder, graph)?;
    std::fs::write(path, format_records(&records)).map_err(|e| Error::io(path, e))?;
    Ok(records.len())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::Activation;
    use crate::graph::{flat_graph, LabelNode};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn class(id: usize, kind: NodeKind, a: Vec<f64>) -> LabelNode {
        LabelNode::new(id, format!("c{id}"), kind, Some(a))
    }

    #[test]
    fn flat_graph_of_three_classes_gives_four_records() {
        let g = flat_graph(
            &[class(0, NodeKind::Seen, vec![1.0, 0.0]), class(1, NodeKind::Seen, vec![0.0, 1.0])],
            &[class(2, NodeKind::Unseen, vec![1.0, 0.0])],
        )
        .unwrap();
        let enc = MlpEncoder::new(2, 8, 3, Activation::Relu, &mut ChaCha8Rng::seed_from_u64(0));
        let recs = latent_records(&enc, &g).unwrap();
        assert_eq!(recs.len(), 4);
        assert_eq!(recs[3].kind, NodeKind::Root);
        assert_eq!(recs[3].mean, vec![0.0; 3]);
        assert_eq!(recs[0].mean, recs[2].mean);
        let text = format_records(&recs);
        assert_eq!(text.lines().count(), 4);
        assert_eq!(text.lines().next().unwrap().split('\t').count(), 5);
    }
}
