//! The causal graph `G` and its extension `G+` with one noise node per
//! endogenous variable.
//!
//! Node sets are `u128` bit masks, so graphs are limited to 128 nodes.

use std::collections::{BTreeSet, HashMap};

use serde::Serialize;

use crate::error::{Error, Result};
use crate::expr::VariableId;
use crate::scm::Scm;

pub type NodeSet = u128;

#[inline]
pub fn bit(i: usize) -> NodeSet {
    1u128 << i
}

/// Indices of the set bits, ascending.
pub fn members(mut s: NodeSet) -> impl Iterator<Item = usize> {
    std::iter::from_fn(move || {
        if s == 0 {
            None
        } else {
            let i = s.trailing_zeros() as usize;
            s &= s - 1;
            Some(i)
        }
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum NodeKind {
    Endogenous,
    Exogenous,
}

#[derive(Debug, Clone)]
pub struct CausalGraph {
    names: Vec<VariableId>,
    kinds: Vec<NodeKind>,
    parents: Vec<NodeSet>,
    children: Vec<NodeSet>,
    ancestors: Vec<NodeSet>,
    descendants: Vec<NodeSet>,
    endo: NodeSet,
    index: HashMap<String, usize>,
    /// Names sorted, as node indices; drives deterministic path search.
    lex_rank: Vec<usize>,
}

impl CausalGraph {
    /// `G+` of a model: endogenous nodes in topological order, then noise nodes.
    pub fn from_scm(scm: &Scm) -> Result<Self> {
        let nv = scm.n_endogenous();
        let mut names: Vec<VariableId> = scm.endogenous().iter().map(|d| d.name.clone()).collect();
        let mut kinds = vec![NodeKind::Endogenous; nv];
        let mut edges = Vec::new();
        for j in 0..nv {
            for &p in scm.parents(j) {
                edges.push((p, j));
            }
        }
        for (i, e) in scm.exogenous().iter().enumerate() {
            names.push(e.name.clone());
            kinds.push(NodeKind::Exogenous);
            edges.push((nv + i, scm.owner_of(i)));
        }
        Self::new(names, kinds, &edges)
    }

    /// Endogenous DAG given by parent lists; a noise node `U_<name>` is added
    /// for every endogenous node.
    pub fn from_parents(names: &[&str], parents: &[Vec<usize>]) -> Result<Self> {
        let n = names.len();
        let mut all: Vec<VariableId> = names.iter().map(|s| VariableId::new(*s)).collect();
        let mut kinds = vec![NodeKind::Endogenous; n];
        let mut edges = Vec::new();
        for (j, ps) in parents.iter().enumerate() {
            for &p in ps {
                edges.push((p, j));
            }
        }
        for (j, name) in names.iter().enumerate() {
            all.push(VariableId::new(format!("U_{name}")));
            kinds.push(NodeKind::Exogenous);
            edges.push((n + j, j));
        }
        Self::new(all, kinds, &edges)
    }

    /// Like [`from_parents`](Self::from_parents) with an adjacency bit mask
    /// per node, naming nodes `V0, V1, ...`.
    pub fn from_parent_masks(parents: &[NodeSet]) -> Result<Self> {
        let names: Vec<String> = (0..parents.len()).map(|i| format!("V{i}")).collect();
        let refs: Vec<&str> = names.iter().map(String::as_str).collect();
        let lists: Vec<Vec<usize>> = parents.iter().map(|&m| members(m).collect()).collect();
        Self::from_parents(&refs, &lists)
    }

    fn new(names: Vec<VariableId>, kinds: Vec<NodeKind>, edges: &[(usize, usize)]) -> Result<Self> {
        let n = names.len();
        if n > 128 {
            return Err(Error::GraphTooLarge(n));
        }
        let mut index = HashMap::new();
        for (i, v) in names.iter().enumerate() {
            if index.insert(v.0.clone(), i).is_some() {
                return Err(Error::DuplicateVariable(v.0.clone()));
            }
        }
        let mut parents = vec![0; n];
        let mut children = vec![0; n];
        for &(a, b) in edges {
            parents[b] |= bit(a);
            children[a] |= bit(b);
        }
        // ancestors by fixed point; graphs are small
        let mut ancestors = parents.clone();
        loop {
            let mut changed = false;
            for v in 0..n {
                let mut acc = ancestors[v];
                for p in members(ancestors[v]) {
                    acc |= ancestors[p];
                }
                if acc != ancestors[v] {
                    ancestors[v] = acc;
                    changed = true;
                }
            }
            if !changed {
                break;
            }
        }
        if let Some(v) = (0..n).find(|&v| ancestors[v] & bit(v) != 0) {
            // nodes that are both ancestors and descendants of v
            let cycle = (0..n)
                .filter(|&w| ancestors[v] & bit(w) != 0 && ancestors[w] & bit(v) != 0)
                .map(|w| names[w].0.clone())
                .collect();
            return Err(Error::CycleDetected(cycle));
        }
        let mut descendants = vec![0; n];
        for v in 0..n {
            for a in members(ancestors[v]) {
                descendants[a] |= bit(v);
            }
        }
        let endo = kinds
            .iter()
            .enumerate()
            .filter(|(_, k)| **k == NodeKind::Endogenous)
            .fold(0, |m, (i, _)| m | bit(i));
        let mut order: Vec<usize> = (0..n).collect();
        order.sort_by(|&a, &b| names[a].cmp(&names[b]));
        let mut lex_rank = vec![0; n];
        for (r, &i) in order.iter().enumerate() {
            lex_rank[i] = r;
        }
        Ok(CausalGraph {
            names,
            kinds,
            parents,
            children,
            ancestors,
            descendants,
            endo,
            index,
            lex_rank,
        })
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn name(&self, i: usize) -> &VariableId {
        &self.names[i]
    }

    pub fn kind(&self, i: usize) -> NodeKind {
        self.kinds[i]
    }

    pub fn node(&self, name: &str) -> Result<usize> {
        self.index
            .get(name)
            .copied()
            .ok_or_else(|| Error::UnknownVariable(name.to_string()))
    }

    pub fn node_set<'a, I: IntoIterator<Item = &'a VariableId>>(&self, names: I) -> Result<NodeSet> {
        names
            .into_iter()
            .try_fold(0, |m, v| Ok(m | bit(self.node(v.as_str())?)))
    }

    pub fn names_of(&self, s: NodeSet) -> Vec<VariableId> {
        let mut v: Vec<VariableId> = members(s).map(|i| self.names[i].clone()).collect();
        v.sort();
        v
    }

    pub fn endogenous(&self) -> NodeSet {
        self.endo
    }

    pub fn exogenous(&self) -> NodeSet {
        let all = if self.len() == 128 { u128::MAX } else { bit(self.len()) - 1 };
        all & !self.endo
    }

    /// `Pa+`; intersect with [`endogenous`](Self::endogenous) for `Pa`.
    pub fn parents(&self, v: usize) -> NodeSet {
        self.parents[v]
    }

    pub fn children(&self, v: usize) -> NodeSet {
        self.children[v]
    }

    /// `An+` (excluding `v`).
    pub fn ancestors(&self, v: usize) -> NodeSet {
        self.ancestors[v]
    }

    /// `De+` (excluding `v`).
    pub fn descendants(&self, v: usize) -> NodeSet {
        self.descendants[v]
    }

    fn ancestors_of_set(&self, s: NodeSet) -> NodeSet {
        members(s).fold(s, |m, v| m | self.ancestors[v])
    }

    /// Nodes reachable from `a` along trails that are active given `z`
    /// (Bayes-ball). `a` itself is excluded.
    pub fn reachable(&self, a: usize, z: NodeSet) -> NodeSet {
        let anz = self.ancestors_of_set(z);
        // visited with direction: `up` = arrived from a child
        let (mut seen_up, mut seen_down, mut reach): (NodeSet, NodeSet, NodeSet) = (0, 0, 0);
        let mut stack = vec![(a, true)];
        while let Some((y, up)) = stack.pop() {
            let seen = if up { &mut seen_up } else { &mut seen_down };
            if *seen & bit(y) != 0 {
                continue;
            }
            *seen |= bit(y);
            let in_z = z & bit(y) != 0;
            if !in_z {
                reach |= bit(y);
            }
            if up {
                if !in_z {
                    stack.extend(members(self.parents[y]).map(|p| (p, true)));
                    stack.extend(members(self.children[y]).map(|c| (c, false)));
                }
            } else {
                if !in_z {
                    stack.extend(members(self.children[y]).map(|c| (c, false)));
                }
                if anz & bit(y) != 0 {
                    stack.extend(members(self.parents[y]).map(|p| (p, true)));
                }
            }
        }
        reach & !bit(a)
    }

    /// Index form of [`d_separated`](Self::d_separated).
    pub fn dsep(&self, a: usize, b: usize, z: NodeSet) -> bool {
        self.reachable(a, z) & bit(b) == 0
    }

    pub fn d_separated(&self, a: &str, b: &str, given: &[VariableId]) -> Result<bool> {
        let (ia, ib) = (self.node(a)?, self.node(b)?);
        let z = self.node_set(given)?;
        if ia == ib {
            return Err(Error::InvalidArgument("d-separation needs two distinct nodes".into()));
        }
        if z & (bit(ia) | bit(ib)) != 0 {
            return Err(Error::InvalidArgument(
                "conditioning set must not contain the queried nodes".into(),
            ));
        }
        Ok(self.dsep(ia, ib, z))
    }

    /// First path from `a` to `b` that is active given `z`, searching
    /// neighbours in lexicographic order of their names.
    pub fn witness_path(&self, a: usize, b: usize, z: NodeSet) -> Option<Vec<usize>> {
        let mut path = vec![a];
        if self.witness_dfs(b, z, &mut path, bit(a)) {
            Some(path)
        } else {
            None
        }
    }

    fn witness_dfs(&self, b: usize, z: NodeSet, path: &mut Vec<usize>, on_path: NodeSet) -> bool {
        let last = *path.last().unwrap();
        let mut next: Vec<usize> = members((self.parents[last] | self.children[last]) & !on_path).collect();
        next.sort_by_key(|&i| self.lex_rank[i]);
        for n in next {
            if path.len() >= 2 && !self.interior_active(path[path.len() - 2], last, n, z) {
                continue;
            }
            path.push(n);
            if n == b || self.witness_dfs(b, z, path, on_path | bit(n)) {
                return true;
            }
            path.pop();
        }
        false
    }

    /// Is `mid` passable on the segment `prev - mid - next` given `z`?
    fn interior_active(&self, prev: usize, mid: usize, next: usize, z: NodeSet) -> bool {
        let collider = self.parents[mid] & bit(prev) != 0 && self.parents[mid] & bit(next) != 0;
        if collider {
            (bit(mid) | self.descendants[mid]) & z != 0
        } else {
            z & bit(mid) == 0
        }
    }

    /// `"U_V1 -> V1 -> X <- V2"`.
    pub fn format_path(&self, path: &[usize]) -> String {
        let mut s = self.names[path[0]].0.clone();
        for w in path.windows(2) {
            let arrow = if self.children[w[0]] & bit(w[1]) != 0 { " -> " } else { " <- " };
            s.push_str(arrow);
            s.push_str(self.names[w[1]].as_str());
        }
        s
    }

    /// Noise nodes of `U^C`, as a mask. `O̲ = O \ De(X)`.
    ///
    /// The noise of the treatment itself is never part of the set: it is
    /// d-connected to `Y` only through the conditioned collider `X`, and
    /// it can carry no information about `Y` beyond `X` and its parents.
    pub fn causal_exogenous_mask(&self, x: usize, y: usize, o: NodeSet) -> NodeSet {
        let o_nd = o & !self.descendants[x];
        let cond = bit(x) | o_nd;
        let reach_y = self.reachable(y, cond);
        let ux = self.exogenous() & self.parents[x];
        self.exogenous() & self.ancestors[y] & reach_y & !ux
    }

    pub fn causal_exogenous_set(&self, x: &str, y: &str, o: &[VariableId]) -> Result<Vec<VariableId>> {
        let (x, y, o) = self.roles(x, y, o)?;
        Ok(self.names_of(self.causal_exogenous_mask(x, y, o)))
    }

    fn roles(&self, x: &str, y: &str, o: &[VariableId]) -> Result<(usize, usize, NodeSet)> {
        let (ix, iy) = (self.node(x)?, self.node(y)?);
        let om = self.node_set(o)?;
        if ix == iy || om & (bit(ix) | bit(iy)) != 0 {
            return Err(Error::RoleConflict(
                "treatment, outcome and observed set must be disjoint".into(),
            ));
        }
        if (bit(ix) | bit(iy) | om) & !self.endo != 0 {
            return Err(Error::RoleConflict("roles apply to endogenous variables only".into()));
        }
        Ok((ix, iy, om))
    }

    /// Mask form of the identifiability condition: the violating noise nodes.
    pub fn violations_mask(&self, x: usize, y: usize, o: NodeSet) -> NodeSet {
        let uc = self.causal_exogenous_mask(x, y, o);
        let reach_x = self.reachable(x, o);
        uc & reach_x
    }

    pub fn identifiable_by_adjustment(&self, x: &str, y: &str, o: &[VariableId]) -> Result<IdentifiabilityVerdict> {
        let (ix, iy, om) = self.roles(x, y, o)?;
        let uc = self.causal_exogenous_mask(ix, iy, om);
        let bad = self.violations_mask(ix, iy, om);
        let mut violating_noise: Vec<Violation> = members(bad)
            .map(|u| {
                let path = self
                    .witness_path(u, ix, om)
                    .expect("a d-connected pair has an active path");
                Violation {
                    noise: self.names[u].clone(),
                    witness_path: self.format_path(&path),
                }
            })
            .collect();
        violating_noise.sort_by(|a, b| a.noise.cmp(&b.noise));
        let identifiable = violating_noise.is_empty();
        let criterion = self.adjustment_criterion_mask(ix, iy, om);
        Ok(IdentifiabilityVerdict {
            identifiable,
            causal_exogenous_set: self.names_of(uc),
            violating_noise,
            adjustment_criterion_agrees: criterion == identifiable,
        })
    }

    /// Adjustment criterion on `G`, by explicit path enumeration.
    ///
    /// (i) `O` contains no node on a causal path from `X` to `Y` (other than
    /// `X`) and no descendant of one; (ii) every non-causal path from `X` to
    /// `Y` is blocked by `O`.
    pub fn adjustment_criterion_mask(&self, x: usize, y: usize, o: NodeSet) -> bool {
        let endo = self.endo;
        let de = |v: usize| self.descendants[v] & endo;
        let an_y = (self.ancestors[y] & endo) | bit(y);
        let on_causal = de(x) & an_y;
        let forbidden = members(on_causal).fold(on_causal, |m, v| m | de(v));
        if forbidden & o != 0 {
            return false;
        }
        let mut path = vec![x];
        !self.find_open_noncausal(y, o, &mut path, bit(x))
    }

    pub fn adjustment_criterion(&self, x: &str, y: &str, o: &[VariableId]) -> Result<bool> {
        let (ix, iy, om) = self.roles(x, y, o)?;
        Ok(self.adjustment_criterion_mask(ix, iy, om))
    }

    fn find_open_noncausal(&self, y: usize, o: NodeSet, path: &mut Vec<usize>, on_path: NodeSet) -> bool {
        let last = *path.last().unwrap();
        let nbrs = (self.parents[last] | self.children[last]) & self.endo & !on_path;
        for n in members(nbrs) {
            path.push(n);
            let found = if n == y {
                !self.path_is_causal(path) && !self.path_blocked(path, o)
            } else {
                self.find_open_noncausal(y, o, path, on_path | bit(n))
            };
            path.pop();
            if found {
                return true;
            }
        }
        false
    }

    fn path_is_causal(&self, path: &[usize]) -> bool {
        path.windows(2).all(|w| self.children[w[0]] & bit(w[1]) != 0)
    }

    /// Path-wise blocking rule, written out independently of Bayes-ball.
    fn path_blocked(&self, path: &[usize], o: NodeSet) -> bool {
        for k in 1..path.len() - 1 {
            let (p, m, n) = (path[k - 1], path[k], path[k + 1]);
            let into_m_from_p = self.children[p] & bit(m) != 0;
            let into_m_from_n = self.children[n] & bit(m) != 0;
            let observed = o & bit(m) != 0;
            if into_m_from_p && into_m_from_n {
                let desc_observed = self.descendants[m] & self.endo & o != 0;
                if !observed && !desc_observed {
                    return true;
                }
            } else if observed {
                return true;
            }
        }
        false
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Violation {
    pub noise: VariableId,
    /// First active path from the noise to the treatment given `O`.
    pub witness_path: String,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentifiabilityVerdict {
    pub identifiable: bool,
    pub causal_exogenous_set: Vec<VariableId>,
    #[serde(rename = "violations")]
    pub violating_noise: Vec<Violation>,
    pub adjustment_criterion_agrees: bool,
}

/// d-separation on an explicit graph: every simple path between `a` and `b`
/// is enumerated and tested.
pub fn dsep_by_paths(g: &CausalGraph, a: usize, b: usize, z: NodeSet) -> bool {
    fn go(g: &CausalGraph, b: usize, z: NodeSet, path: &mut Vec<usize>, on: NodeSet) -> bool {
        let last = *path.last().unwrap();
        for n in members((g.parents(last) | g.children(last)) & !on) {
            path.push(n);
            let open = if n == b {
                !g.path_blocked_any(path, z)
            } else {
                go(g, b, z, path, on | bit(n))
            };
            path.pop();
            if open {
                return true;
            }
        }
        false
    }
    let mut path = vec![a];
    !go(g, b, z, &mut path, bit(a))
}

impl CausalGraph {
    /// Blocking rule over `G+` (all node kinds).
    fn path_blocked_any(&self, path: &[usize], z: NodeSet) -> bool {
        (1..path.len() - 1).any(|k| {
            let (p, m, n) = (path[k - 1], path[k], path[k + 1]);
            let collider = self.children[p] & bit(m) != 0 && self.children[n] & bit(m) != 0;
            if collider {
                (bit(m) | self.descendants[m]) & z == 0
            } else {
                z & bit(m) != 0
            }
        })
    }

    /// Nodes as a sorted set of names, for display.
    pub fn endogenous_names(&self) -> BTreeSet<VariableId> {
        members(self.endo).map(|i| self.names[i].clone()).collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// V1→V2, V1→V4, V2→V3, V2→V5, V2→V4, V3→V4, V4→V5.
    pub(crate) fn example_one() -> CausalGraph {
        CausalGraph::from_parents(
            &["V1", "V2", "V3", "V4", "V5"],
            &[vec![], vec![0], vec![1], vec![0, 1, 2], vec![1, 3]],
        )
        .unwrap()
    }

    fn ids(v: &[&str]) -> Vec<VariableId> {
        v.iter().map(|s| VariableId::new(*s)).collect()
    }

    #[test]
    fn example_one_dsep() {
        let g = example_one();
        assert!(!g.d_separated("U_V4", "V2", &ids(&["V5"])).unwrap());
        assert!(g.d_separated("U_V4", "V2", &[]).unwrap());
    }

    #[test]
    fn example_one_causal_set_and_verdict() {
        let g = example_one();
        let o = ids(&["V3", "V5"]);
        assert_eq!(g.causal_exogenous_set("V2", "V4", &o).unwrap(), ids(&["U_V1", "U_V3", "U_V4"]));
        let v = g.identifiable_by_adjustment("V2", "V4", &o).unwrap();
        assert!(!v.identifiable);
        assert!(v.adjustment_criterion_agrees);
        let noise: Vec<_> = v.violating_noise.iter().map(|x| x.noise.0.as_str()).collect();
        assert_eq!(noise, ["U_V1", "U_V3", "U_V4"]);
        assert_eq!(v.violating_noise[0].witness_path, "U_V1 -> V1 -> V2");
        assert!(!g.adjustment_criterion("V2", "V4", &o).unwrap());
    }

    #[test]
    fn chain_and_isolated() {
        let g = CausalGraph::from_parents(&["X", "Y"], &[vec![], vec![0]]).unwrap();
        assert_eq!(g.causal_exogenous_set("X", "Y", &[]).unwrap(), ids(&["U_Y"]));
        assert!(g.identifiable_by_adjustment("X", "Y", &[]).unwrap().identifiable);
        let g = CausalGraph::from_parents(&["A", "B", "C"], &[vec![], vec![], vec![]]).unwrap();
        assert!(g.d_separated("A", "B", &ids(&["C"])).unwrap());
        assert!(g.d_separated("A", "B", &[]).unwrap());
    }

    #[test]
    fn backdoor_adjustment() {
        let g = CausalGraph::from_parents(&["V1", "X", "Y"], &[vec![], vec![0], vec![0, 1]]).unwrap();
        assert!(g.adjustment_criterion("X", "Y", &ids(&["V1"])).unwrap());
        assert!(g.identifiable_by_adjustment("X", "Y", &ids(&["V1"])).unwrap().identifiable);
        let v = g.identifiable_by_adjustment("X", "Y", &[]).unwrap();
        assert!(!v.identifiable);
        assert_eq!(v.violating_noise[0].noise.as_str(), "U_V1");
    }

    #[test]
    fn bayes_ball_matches_paths_on_example() {
        let g = example_one();
        let n = g.len();
        for a in 0..n {
            for b in 0..n {
                if a == b {
                    continue;
                }
                for zmask in 0u32..(1 << 5) {
                    let z = (zmask as u128) & !(bit(a) | bit(b));
                    assert_eq!(g.dsep(a, b, z), dsep_by_paths(&g, a, b, z), "{a} {b} {z:b}");
                }
            }
        }
    }

    #[test]
    fn rejects_cycles_and_unknown_nodes() {
        assert!(matches!(
            CausalGraph::from_parents(&["A", "B"], &[vec![1], vec![0]]),
            Err(Error::CycleDetected(_))
        ));
        let g = example_one();
        assert_eq!(g.d_separated("Q", "V1", &[]).unwrap_err(), Error::UnknownVariable("Q".into()));
    }
}
