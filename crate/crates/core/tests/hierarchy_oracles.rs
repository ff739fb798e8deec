mod common;

use common::{bfs_distances, bfs_path, RawTree};
use htla::hierarchy::LabelTaxonomy;
use proptest::prelude::*;

fn tree_strategy() -> impl Strategy<Value = RawTree> {
    prop::collection::vec(any::<usize>(), 1..=60).prop_map(|c| RawTree::from_choices(&c))
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(100))]

    #[test]
    fn distances_match_bfs(raw in tree_strategy()) {
        let tax = LabelTaxonomy::parse(&raw.to_text()).unwrap();
        let map = raw.node_map(&tax);
        let oracle = bfs_distances(&raw.adjacency());
        let dt = tax.compute_distances();
        let n = raw.len() + 1;
        for i in 0..n {
            for j in 0..n {
                prop_assert_eq!(dt.get(map[i], map[j]), oracle[i][j]);
            }
        }
        prop_assert!(dt.max_dist() <= 2 * tax.depth());
    }

    #[test]
    fn paths_match_bfs_parent_trace(raw in tree_strategy()) {
        let tax = LabelTaxonomy::parse(&raw.to_text()).unwrap();
        let map = raw.node_map(&tax);
        let adj = raw.adjacency();
        let dt = tax.compute_distances();
        let n = raw.len() + 1;
        for i in 0..n {
            for j in 0..n {
                let nodes = bfs_path(&adj, i, j);
                // The edge between consecutive nodes belongs to whichever is the child.
                let expected: Vec<usize> = nodes
                    .windows(2)
                    .map(|w| if raw.parent_node(w[0]) == Some(w[1]) { map[w[0]] } else { map[w[1]] })
                    .collect();
                let got = tax.path_edges(map[i], map[j]);
                prop_assert_eq!(got.len(), dt.get(map[i], map[j]));
                prop_assert_eq!(&got, &expected);
                let mut rev = tax.path_edges(map[j], map[i]);
                rev.reverse();
                prop_assert_eq!(rev, got);
            }
        }
    }

    #[test]
    fn every_edge_lies_on_a_root_to_leaf_path(raw in tree_strategy()) {
        let tax = LabelTaxonomy::parse(&raw.to_text()).unwrap();
        prop_assert_eq!(tax.num_edges(), tax.num_labels());
        for e in 0..tax.num_edges() {
            for leaf in tax.leaves() {
                let below = leaf == e || tax.ancestors(leaf).contains(&e);
                if below {
                    prop_assert!(tax.path_edges(tax.root(), leaf).contains(&e));
                }
            }
        }
    }

    #[test]
    fn levels_are_root_distances(raw in tree_strategy()) {
        let tax = LabelTaxonomy::parse(&raw.to_text()).unwrap();
        let dt = tax.compute_distances();
        for l in 0..tax.num_labels() {
            prop_assert_eq!(tax.label_level(l), dt.get(tax.root(), l));
        }
    }

    #[test]
    fn text_round_trip_keeps_structure(raw in tree_strategy()) {
        let tax = LabelTaxonomy::parse(&raw.to_text()).unwrap();
        let back = LabelTaxonomy::parse(&tax.to_text()).unwrap();
        prop_assert_eq!(back.num_labels(), tax.num_labels());
        let parent_name = |t: &LabelTaxonomy, l: usize| t.parent(l).filter(|&p| p != t.root()).map(|p| t.name(p).to_string());
        for l in 0..tax.num_labels() {
            let m = back.id_of(tax.name(l)).unwrap();
            prop_assert_eq!(parent_name(&back, m), parent_name(&tax, l));
        }
        // Breadth-first output is a fixed point.
        prop_assert_eq!(LabelTaxonomy::parse(&back.to_text()).unwrap(), back);
    }
}

#[test]
fn small_examples() {
    let t = LabelTaxonomy::parse("Root\tA\tB\nA\tA1\tA2").unwrap();
    assert_eq!(t.num_labels(), 4);
    let id = |n: &str| t.id_of(n).unwrap();
    let d = t.compute_distances();
    assert_eq!(d.get(id("A"), id("A1")), 1);
    assert_eq!(d.get(id("A1"), id("A2")), 2);
    assert!(t.path_edges(id("A1"), id("A1")).is_empty());
    assert_eq!(t.path_edges(id("A1"), id("A")), vec![id("A1")]);
    assert_eq!(t.path_edges(id("A1"), id("A2")), vec![id("A1"), id("A2")]);
    assert_eq!(t.label_level(id("A")), 1);
    assert!(LabelTaxonomy::parse("Root\tA\nA\tA").is_err());
}

#[test]
fn grandchild_level_and_cross_branch_leaves() {
    let t = LabelTaxonomy::parse("Root\tA\tB\nA\tA1\nA1\tA11\nB\tB1").unwrap();
    let id = |n: &str| t.id_of(n).unwrap();
    assert_eq!(t.label_level(id("A11")), 3);
    assert_eq!(t.compute_distances().get(id("A1"), id("B1")), 4);
}

/// Web of Science layout: 7 domains over 134 areas.
#[test]
fn wos_shaped_taxonomy() {
    let areas = [17, 16, 19, 9, 53, 11, 9];
    assert_eq!(areas.iter().sum::<usize>(), 134);
    let mut text = String::from("Root");
    for d in 0..areas.len() {
        text.push_str(&format!("\tdomain{d}"));
    }
    text.push('\n');
    for (d, &n) in areas.iter().enumerate() {
        text.push_str(&format!("domain{d}"));
        for a in 0..n {
            text.push_str(&format!("\tarea{d}_{a}"));
        }
        text.push('\n');
    }
    let t = LabelTaxonomy::parse(&text).unwrap();
    assert_eq!(t.num_labels(), 141);
    assert_eq!(t.depth(), 2);
    assert!((0..141).all(|l| matches!(t.label_level(l), 1 | 2)));
}
