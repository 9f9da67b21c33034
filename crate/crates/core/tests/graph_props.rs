use std::collections::BTreeSet;

use gpvae::graph::{impute_attributes, transitive_closure, validate_dag, LabelGraph, LabelNode, NodeKind};
use gpvae::Error;
use proptest::prelude::*;

/// Random DAG: nodes in a random order, edges only forward along it.
fn dag() -> impl Strategy<Value = (usize, Vec<(usize, usize)>)> {
    (2usize..=20)
        .prop_flat_map(|n| {
            let m = n * (n - 1) / 2;
            (
                Just(n),
                prop::collection::vec(prop::bool::weighted(0.2), m),
                Just((0..n).collect::<Vec<_>>()).prop_shuffle(),
            )
        })
        .prop_map(|(n, keep, perm)| {
            let pairs = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j)));
            let edges = pairs
                .zip(keep)
                .filter(|(_, k)| *k)
                .map(|((i, j), _)| (perm[i], perm[j]))
                .collect();
            (n, edges)
        })
}

fn internal_graph(n: usize, edges: Vec<(usize, usize)>) -> LabelGraph {
    let nodes = (0..n).map(|i| LabelNode::new(i, format!("n{i}"), NodeKind::Internal, None)).collect();
    LabelGraph::new(nodes, edges).unwrap()
}

proptest! {
    #[test]
    fn closure_is_symmetric_and_irreflexive((n, edges) in dag()) {
        let g = internal_graph(n, edges.clone());
        let c = transitive_closure(&g).unwrap();
        for a in 0..n {
            prop_assert!(!c.is_related(a, a));
            for b in 0..n {
                prop_assert_eq!(c.is_related(a, b), c.is_related(b, a));
            }
        }
        for (p, ch) in edges {
            prop_assert!(c.is_related(p, ch));
        }
    }

    #[test]
    fn adding_a_back_edge_along_a_path_makes_a_cycle((n, edges) in dag()) {
        let g = internal_graph(n, edges.clone());
        prop_assert!(validate_dag(&g).is_ok());
        if let Some(&(p, ch)) = edges.first() {
            let mut cyc = edges.clone();
            cyc.push((ch, p));
            let g2 = LabelGraph::new(g.nodes().to_vec(), cyc).unwrap();
            prop_assert!(matches!(validate_dag(&g2), Err(Error::Cycle(_))));
        }
    }

    #[test]
    fn imputation_ignores_node_and_edge_order(
        (n, edges) in dag(),
        attrs in prop::collection::vec(prop::collection::vec(-5.0f64..5.0, 3), 20),
        rev in any::<bool>(),
    ) {
        // Sinks are seen classes with attributes; everything else is internal.
        let has_child: BTreeSet<usize> = edges.iter().map(|e| e.0).collect();
        let make = |order: &mut dyn Iterator<Item = usize>| -> Vec<LabelNode> {
            order
                .map(|i| {
                    if has_child.contains(&i) {
                        LabelNode::new(i, format!("n{i}"), NodeKind::Internal, None)
                    } else {
                        LabelNode::new(i, format!("n{i}"), NodeKind::Seen, Some(attrs[i].clone()))
                    }
                })
                .collect()
        };
        let a = LabelGraph::new(make(&mut (0..n)), edges.clone()).unwrap();
        let mut e2 = edges.clone();
        if rev { e2.reverse(); }
        let b = LabelGraph::new(make(&mut (0..n).rev()), e2).unwrap();
        let ia = impute_attributes(&a).unwrap();
        let ib = impute_attributes(&b).unwrap();
        for i in 0..n {
            let x = ia.node(i).unwrap().attributes.clone().unwrap();
            let y = ib.node(i).unwrap().attributes.clone().unwrap();
            for (u, v) in x.iter().zip(&y) {
                prop_assert!((u - v).abs() < 1e-12);
            }
        }
    }
}

#[test]
fn positive_and_negative_pools_partition_the_prior_set() {
    // root r(4) -> a(0) -> {s1(1), u1(2)}, r -> u2(3)
    let nodes = vec![
        LabelNode::new(0, "a", NodeKind::Internal, None),
        LabelNode::new(1, "s1", NodeKind::Seen, Some(vec![1.0])),
        LabelNode::new(2, "u1", NodeKind::Unseen, Some(vec![2.0])),
        LabelNode::new(3, "u2", NodeKind::Unseen, Some(vec![3.0])),
    ];
    let g = LabelGraph::new(nodes, vec![(0, 1), (0, 2)]).unwrap().with_root().unwrap();
    let root = g.root().unwrap();
    let c = transitive_closure(&g).unwrap();
    assert_eq!(c.positive_pool(1), vec![0, root]);
    assert_eq!(c.negative_pool(1), vec![2, 3]);
    assert_eq!(c.positive_pool(2), vec![0, root]);
    assert_eq!(c.negative_pool(2), vec![3]);
    assert_eq!(c.positive_pool(0), vec![2, root]);
    assert_eq!(c.negative_pool(0), vec![3]);
}
