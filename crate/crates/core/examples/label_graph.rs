//! Builds a small hierarchy, imputes internal-node attributes and samples
//! positive / negative contexts.

use gpvae::graph::{flat_graph_of, impute_attributes, transitive_closure, LabelGraph, LabelNode, NodeKind};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn main() -> gpvae::Result<()> {
    use NodeKind::*;
    let node = |id, name: &str, kind, a: Option<Vec<f64>>| LabelNode::new(id, name, kind, a);
    let graph = LabelGraph::new(
        vec![
            node(0, "animal", Root, None),
            node(1, "bird", Internal, None),
            node(2, "fish", Internal, None),
            node(3, "sparrow", Seen, Some(vec![1.0, 0.0, 1.0])),
            node(4, "finch", Unseen, Some(vec![1.0, 0.2, 0.8])),
            node(5, "trout", Seen, Some(vec![0.0, 1.0, 0.0])),
            node(6, "salmon", Unseen, Some(vec![0.1, 1.0, 0.2])),
        ],
        vec![(0, 1), (0, 2), (1, 3), (1, 4), (2, 5), (2, 6)],
    )?;

    let imputed = impute_attributes(&graph)?;
    for n in imputed.nodes().iter().filter(|n| n.kind == Internal) {
        println!("{} <- {:?}", n.name, n.attributes.as_ref().unwrap());
    }

    let closure = transitive_closure(&graph)?;
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let name = |id| graph.node(id).unwrap().name.clone();
    for id in [3, 4, 5] {
        let pos: Vec<_> = closure.positive_pool(id).into_iter().map(name).collect();
        let neg: Vec<_> = closure.negative_pool(id).into_iter().map(name).collect();
        let (p, n) = closure.sample_context(id, &mut rng)?;
        println!("{:>8}: positives {pos:?} negatives {neg:?} -> drew ({}, {})", name(id), name(p), name(n));
    }

    let flat = flat_graph_of(&graph)?;
    println!("flat baseline: {} nodes, {} edges", flat.len(), flat.edges().len());
    Ok(())
}
