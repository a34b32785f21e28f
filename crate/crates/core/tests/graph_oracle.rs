mod common;

use causalbias::graph::{bit, dsep_by_paths, members, CausalGraph, NodeSet};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

#[test]
fn bayes_ball_agrees_with_path_enumeration_on_random_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(61);
    for _ in 0..40 {
        let n = 6;
        let p = common::random_dag(n, 0.4, &mut rng);
        let g = CausalGraph::from_parent_masks(&p).unwrap();
        let total = g.len();
        for _ in 0..30 {
            let a = rng.random_range(0..total);
            let b = rng.random_range(0..total);
            if a == b {
                continue;
            }
            let z: NodeSet = (0..total)
                .filter(|&v| v != a && v != b && rng.random_bool(0.3))
                .fold(0, |m, v| m | bit(v));
            assert_eq!(g.dsep(a, b, z), dsep_by_paths(&g, a, b, z), "{p:?} {a} {b} {z:#b}");
        }
    }
}

/// Relabels nodes with a permutation: node `i` becomes `perm[i]`.
fn relabel(p: &[NodeSet], perm: &[usize]) -> Vec<NodeSet> {
    let mut q = vec![0; p.len()];
    for (i, &m) in p.iter().enumerate() {
        q[perm[i]] = members(m).fold(0, |acc, v| acc | bit(perm[v]));
    }
    q
}

#[test]
fn verdicts_are_invariant_under_relabelling() {
    let mut rng = ChaCha8Rng::seed_from_u64(62);
    for _ in 0..60 {
        let n = 6;
        let p = common::random_dag(n, 0.45, &mut rng);
        let mut perm: Vec<usize> = (0..n).collect();
        for i in (1..n).rev() {
            perm.swap(i, rng.random_range(0..=i));
        }
        let q = relabel(&p, &perm);
        let (g, h) = (CausalGraph::from_parent_masks(&p).unwrap(), CausalGraph::from_parent_masks(&q).unwrap());
        let x = rng.random_range(0..n);
        let y = (x + 1 + rng.random_range(0..n - 1)) % n;
        for o in common::subsets(n, x, y) {
            let o2 = members(o).fold(0, |acc, v| acc | bit(perm[v]));
            assert_eq!(
                g.violations_mask(x, y, o) == 0,
                h.violations_mask(perm[x], perm[y], o2) == 0
            );
            let uc: Vec<usize> = members(g.causal_exogenous_mask(x, y, o)).map(|u| perm[u - n] + n).collect();
            let mut uc2: Vec<usize> = members(h.causal_exogenous_mask(perm[x], perm[y], o2)).collect();
            let mut uc = uc;
            uc.sort();
            uc2.sort();
            assert_eq!(uc, uc2);
        }
    }
}

#[test]
fn criterion_matches_adjustment_on_random_larger_dags() {
    let mut rng = ChaCha8Rng::seed_from_u64(63);
    for _ in 0..30 {
        let n = 7;
        let p = common::random_dag(n, 0.35, &mut rng);
        let g = CausalGraph::from_parent_masks(&p).unwrap();
        for x in 0..n {
            let y = rng.random_range(0..n);
            if y == x {
                continue;
            }
            for o in common::subsets(n, x, y) {
                assert_eq!(g.violations_mask(x, y, o) == 0, g.adjustment_criterion_mask(x, y, o));
            }
        }
    }
}

#[test]
fn named_verdict_serialises() {
    let g = CausalGraph::from_parents(&["V1", "X", "Y"], &[vec![], vec![0], vec![0, 1]]).unwrap();
    let v = g.identifiable_by_adjustment("X", "Y", &[]).unwrap();
    assert!(!v.identifiable);
    let json = serde_json::to_value(&v).unwrap();
    assert_eq!(json["violations"][0]["noise"], "U_V1");
    assert_eq!(json["violations"][0]["witness_path"], "U_V1 -> V1 -> X");
    let ok = g.identifiable_by_adjustment("X", "Y", &["V1".into()]).unwrap();
    assert!(ok.identifiable && ok.adjustment_criterion_agrees);
}
