#![allow(dead_code)]

use causalbias::graph::{bit, members, NodeSet};
use causalbias::{build_scm, EndogenousDef, ExogenousDecl, Expression, NoiseDistribution, Roles, Scm};
use rand::Rng;

/// Every labelled DAG on `n` nodes as parent masks.
pub fn dags(n: usize) -> Vec<Vec<NodeSet>> {
    let pairs: Vec<(usize, usize)> = (0..n).flat_map(|i| (i + 1..n).map(move |j| (i, j))).collect();
    let total = 3usize.pow(pairs.len() as u32);
    (0..total)
        .filter_map(|mut code| {
            let mut parents = vec![0u128; n];
            for &(i, j) in &pairs {
                match code % 3 {
                    1 => parents[j] |= bit(i),
                    2 => parents[i] |= bit(j),
                    _ => {}
                }
                code /= 3;
            }
            let mut left: NodeSet = bit(n) - 1;
            while let Some(v) = (0..n).find(|&v| left & bit(v) != 0 && parents[v] & left == 0) {
                left &= !bit(v);
            }
            (left == 0).then_some(parents)
        })
        .collect()
}

/// Random DAG: each forward pair of a random order is an edge with probability `p`.
pub fn random_dag<R: Rng>(n: usize, p: f64, rng: &mut R) -> Vec<NodeSet> {
    let mut order: Vec<usize> = (0..n).collect();
    for i in (1..n).rev() {
        order.swap(i, rng.random_range(0..=i));
    }
    let mut parents = vec![0u128; n];
    for a in 0..n {
        for b in a + 1..n {
            if rng.random_bool(p) {
                parents[order[b]] |= bit(order[a]);
            }
        }
    }
    parents
}

/// Linear-Gaussian SCM on a DAG, `V_j = Σ c_pj V_p + U_Vj`, with coefficients
/// of magnitude in [0.5, 1.5] and random sign.
pub fn linear_scm<R: Rng>(parents: &[NodeSet], x: usize, y: usize, rng: &mut R) -> Scm {
    let n = parents.len();
    let exo = (0..n)
        .map(|j| ExogenousDecl {
            name: format!("U_V{j}").into(),
            dist: NoiseDistribution::StandardGaussian,
        })
        .collect();
    let endo = (0..n)
        .map(|j| {
            let mut e = Expression::var(format!("U_V{j}"));
            for p in members(parents[j]) {
                let c = rng.random_range(0.5..1.5) * if rng.random_bool(0.5) { 1.0 } else { -1.0 };
                e = c * Expression::var(format!("V{p}")) + e;
            }
            EndogenousDef {
                name: format!("V{j}").into(),
                expr: e,
            }
        })
        .collect();
    build_scm(exo, endo, Roles::new(&format!("V{x}"), &format!("V{y}"))).unwrap()
}

/// Observation sets as masks over the nodes other than `x` and `y`.
pub fn subsets(n: usize, x: usize, y: usize) -> Vec<NodeSet> {
    let rest: Vec<usize> = (0..n).filter(|&v| v != x && v != y).collect();
    (0..1u32 << rest.len())
        .map(|m| {
            rest.iter()
                .enumerate()
                .filter(|(k, _)| m & (1 << k) != 0)
                .fold(0u128, |a, (_, &v)| a | bit(v))
        })
        .collect()
}

/// Random smooth expression over `vars`, finite on all of R^n.
pub fn random_expr<R: Rng>(vars: &[&str], depth: usize, rng: &mut R) -> Expression {
    if depth == 0 || rng.random_bool(0.2) {
        return if rng.random_bool(0.75) {
            Expression::var(vars[rng.random_range(0..vars.len())])
        } else {
            Expression::constant(rng.random_range(-2.0..2.0))
        };
    }
    let sub = |rng: &mut R| random_expr(vars, depth - 1, rng);
    let positive = |e: Expression| 1.0 + e.clone() * e;
    match rng.random_range(0..11) {
        0 => sub(rng) + sub(rng),
        1 => sub(rng) - sub(rng),
        2 => sub(rng) * sub(rng),
        3 => sub(rng) / positive(sub(rng)),
        4 => -sub(rng),
        5 => sub(rng).sigmoid().exp(),
        6 => positive(sub(rng)).ln(),
        7 => positive(sub(rng)).sqrt(),
        8 => sub(rng).sigmoid(),
        9 => sub(rng).sigmoid().powf(rng.random_range(1..4) as f64),
        _ => positive(sub(rng)).pow(sub(rng).sigmoid()),
    }
}
