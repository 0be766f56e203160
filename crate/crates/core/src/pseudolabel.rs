//! Jump-number pseudo-labels over collapsed metapath graphs.
//!
//! For a pair (i, j) the rules are tried in ascending order and the first one
//! that holds gives the label:
//!
//! | ŷ | rule (walk-neighbor sets `N_k` taken in the collapsed graph) |
//! |---|---------------------------------------------------------------|
//! | 1 | `N₁(i) ∩ N₁(j) ≠ ∅` |
//! | 2 | `N₂(i) ∩ N₁(j) ≠ ∅  or  N₂(j) ∩ N₁(i) ≠ ∅` |
//! | 3 | `N₂(i) ∩ N₂(j) ≠ ∅` |
//! | 4 | `N₄(i) ∩ N₁(j) ≠ ∅  or  N₄(j) ∩ N₁(i) ≠ ∅` |
//! | k ≥ 5 | same shape with radii `(⌈(k+1)/2⌉, ⌊(k+1)/2⌋)` |
//!
//! Rule `k` joins a walk of `a` steps out of i with a walk of `b` steps out
//! of j where `a + b = k + 1`. Evaluated in priority order this labels a
//! pair with its shortest-path distance minus one. Directly linked pairs get
//! no label.

use alloc::vec;
use alloc::vec::Vec;
use fixedbitset::FixedBitSet;
use rand::seq::index;
use rand::SeedableRng;

use crate::error::arg_err;
use crate::graph::CollapsedAdj;
use crate::rng::{derive_seed, stream, Rng};
use crate::sparse::BoolCsr;
use crate::Result;

pub const DEFAULT_J_MAX: u8 = 4;
pub const MAX_J_MAX: u8 = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct JumpLabel {
    pub metapath: u32,
    pub i: usize,
    pub j: usize,
    pub y: u8,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct JumpLabelSet {
    pub entries: Vec<JumpLabel>,
    pub j_max: u8,
    /// Metapaths that produced no labeled pair.
    pub empty_metapaths: Vec<u32>,
}

impl JumpLabelSet {
    pub fn new(mut entries: Vec<JumpLabel>, j_max: u8) -> Result<Self> {
        check_j_max(j_max)?;
        entries.sort_unstable();
        for w in entries.windows(2) {
            if (w[0].metapath, w[0].i, w[0].j) == (w[1].metapath, w[1].i, w[1].j) {
                return Err(arg_err!("duplicate label for pair ({}, {}) in metapath {}", w[0].i, w[0].j, w[0].metapath));
            }
        }
        for e in &entries {
            if e.i == e.j {
                return Err(arg_err!("self pair ({}, {}) cannot carry a jump label", e.i, e.j));
            }
            if e.y == 0 || e.y > j_max {
                return Err(arg_err!("label {} outside 1..={j_max}", e.y));
            }
        }
        Ok(JumpLabelSet { entries, j_max, empty_metapaths: Vec::new() })
    }

    pub fn for_metapath(&self, metapath: u32) -> impl Iterator<Item = &JumpLabel> + '_ {
        self.entries.iter().filter(move |e| e.metapath == metapath)
    }

    pub fn count_for(&self, metapath: u32) -> usize {
        self.for_metapath(metapath).count()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct PairSamplerConfig {
    pub target_nodes_per_metapath: usize,
    pub neighbors_per_target: usize,
    pub seed: u64,
}

impl Default for PairSamplerConfig {
    fn default() -> Self {
        PairSamplerConfig { target_nodes_per_metapath: 256, neighbors_per_target: 8, seed: 0 }
    }
}

fn check_j_max(j_max: u8) -> Result<()> {
    if j_max == 0 || j_max > MAX_J_MAX {
        return Err(arg_err!("j_max {j_max} outside 1..={MAX_J_MAX}"));
    }
    Ok(())
}

/// Walk radii `(a, b)` joined by the rule for label `k`.
pub fn rule_radii(k: u8) -> (usize, usize) {
    match k {
        1 => (1, 1),
        2 => (2, 1),
        3 => (2, 2),
        4 => (4, 1),
        _ => {
            let s = k as usize + 1;
            (s - s / 2, s / 2)
        }
    }
}

fn max_radius(j_max: u8) -> usize {
    (1..=j_max).map(|k| rule_radii(k).0).max().unwrap_or(1)
}

/// `walks[r]` = nodes reached from `start` by walks of exactly `r` steps.
fn walk_sets(a: &BoolCsr, start: usize, radius: usize) -> Vec<FixedBitSet> {
    let mut out = Vec::with_capacity(radius + 1);
    let mut cur = FixedBitSet::with_capacity(a.cols());
    cur.insert(start);
    out.push(cur.clone());
    for _ in 0..radius {
        cur = a.step(&cur);
        out.push(cur.clone());
    }
    out
}

fn directly_linked(a: &BoolCsr, i: usize, j: usize) -> bool {
    a.get(i, j) || a.get(j, i)
}

/// Jump-number label of the pair (i, j), or `None` when the pair is directly
/// linked or no rule up to `j_max` holds.
pub fn jump_label(a: &CollapsedAdj, i: usize, j: usize, j_max: u8) -> Result<Option<u8>> {
    check_j_max(j_max)?;
    let n = a.n();
    if i >= n || j >= n {
        return Err(arg_err!("pair ({i}, {j}) outside a {n}-node graph"));
    }
    if i == j {
        return Err(arg_err!("jump label of a node with itself is undefined"));
    }
    let m = &a.matrix;
    if directly_linked(m, i, j) {
        return Ok(None);
    }
    let r = max_radius(j_max);
    let wi = walk_sets(m, i, r);
    let wj = walk_sets(m, j, r);
    for k in 1..=j_max {
        let (ra, rb) = rule_radii(k);
        if !wi[ra].is_disjoint(&wj[rb]) || !wj[ra].is_disjoint(&wi[rb]) {
            return Ok(Some(k));
        }
    }
    Ok(None)
}

/// Unweighted shortest-path length from `i` to `j`.
pub fn bfs_distance(a: &CollapsedAdj, i: usize, j: usize) -> Option<usize> {
    let m = &a.matrix;
    let n = m.rows();
    if i >= n || j >= n {
        return None;
    }
    let mut dist = vec![usize::MAX; n];
    let mut queue = alloc::collections::VecDeque::new();
    dist[i] = 0;
    queue.push_back(i);
    while let Some(u) = queue.pop_front() {
        if u == j {
            return Some(dist[u]);
        }
        for &v in m.row(u) {
            if dist[v] == usize::MAX {
                dist[v] = dist[u] + 1;
                queue.push_back(v);
            }
        }
    }
    None
}

/// Per-label partner quotas: `total` split evenly over `1..=j_max`, the
/// remainder going to the smallest labels.
pub fn level_quotas(total: usize, j_max: u8) -> Vec<usize> {
    let levels = j_max as usize;
    let (base, rem) = (total / levels, total % levels);
    (0..levels).map(|l| base + usize::from(l < rem)).collect()
}

/// Candidate partners of `i` satisfying rule `k`, as a bitset over nodes.
fn rule_candidates(backward: &BoolCsr, walks_i: &[FixedBitSet], k: u8) -> FixedBitSet {
    let (ra, rb) = rule_radii(k);
    // j with W_rb(j) ∩ W_ra(i) ≠ ∅: step W_ra(i) backwards rb times.
    let mut c1 = walks_i[ra].clone();
    for _ in 0..rb {
        c1 = backward.step(&c1);
    }
    let mut c2 = walks_i[rb].clone();
    for _ in 0..ra {
        c2 = backward.step(&c2);
    }
    c1.union_with(&c2);
    c1
}

/// Labels sampled pairs for every collapsed graph.
///
/// Per metapath, `min(target_nodes_per_metapath, n)` targets are drawn
/// without replacement; each target then collects up to
/// `neighbors_per_target` partners level by level in ascending label order.
/// Unused quota of a level rolls over to the next one.
pub fn build_label_set(adjs: &[CollapsedAdj], cfg: &PairSamplerConfig, j_max: u8) -> Result<JumpLabelSet> {
    check_j_max(j_max)?;
    if adjs.is_empty() {
        return Err(arg_err!("no collapsed adjacency to label"));
    }
    if cfg.target_nodes_per_metapath == 0 || cfg.neighbors_per_target == 0 {
        return Err(arg_err!("pair sampler counts must be positive"));
    }
    let mut entries = Vec::new();
    let mut empty = Vec::new();
    for adj in adjs {
        let before = entries.len();
        label_one(adj, cfg, j_max, &mut entries);
        if entries.len() == before {
            empty.push(adj.metapath_id);
        }
    }
    let mut set = JumpLabelSet::new(entries, j_max)?;
    set.empty_metapaths = empty;
    Ok(set)
}

fn label_one(adj: &CollapsedAdj, cfg: &PairSamplerConfig, j_max: u8, out: &mut Vec<JumpLabel>) {
    let n = adj.n();
    if n < 2 {
        return;
    }
    let forward = &adj.matrix;
    let backward_owned;
    let backward = if forward.is_symmetric() {
        forward
    } else {
        backward_owned = forward.transpose();
        &backward_owned
    };
    let mut rng = Rng::seed_from_u64(derive_seed(
        cfg.seed ^ u64::from(adj.metapath_id),
        stream::PAIR_SAMPLER,
        0,
    ));
    let mut targets = index::sample(&mut rng, n, cfg.target_nodes_per_metapath.min(n)).into_vec();
    targets.sort_unstable();
    let quotas = level_quotas(cfg.neighbors_per_target, j_max);
    let radius = max_radius(j_max);

    for i in targets {
        let walks = walk_sets(forward, i, radius);
        let mut taken = FixedBitSet::with_capacity(n);
        taken.insert(i);
        for &c in forward.row(i) {
            taken.insert(c);
        }
        for &c in backward.row(i) {
            taken.insert(c);
        }
        let mut carry = 0;
        for k in 1..=j_max {
            let mut cand = rule_candidates(backward, &walks, k);
            cand.difference_with(&taken);
            taken.union_with(&cand);
            let pool: Vec<usize> = cand.ones().collect();
            let quota = quotas[k as usize - 1] + carry;
            let pick = quota.min(pool.len());
            carry = quota - pick;
            let mut chosen: Vec<usize> = if pick == pool.len() {
                pool
            } else {
                index::sample(&mut rng, pool.len(), pick).into_iter().map(|p| pool[p]).collect()
            };
            chosen.sort_unstable();
            out.extend(chosen.into_iter().map(|j| JumpLabel { metapath: adj.metapath_id, i, j, y: k }));
        }
    }
}
