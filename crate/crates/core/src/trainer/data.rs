//! Train/validation splits, negative sampling and minibatch samplers.

use alloc::collections::BTreeSet;
use alloc::vec;
use alloc::vec::Vec;
use rand::seq::SliceRandom;
use rand::Rng as _;

use super::TrainConfig;
use crate::error::arg_err;
use crate::graph::{compose_metapath, normalize_adj, union_adjacency, CollapsedAdj, HetGraph, MetapathSpec};
use crate::model::{GraphInputs, Task};
use crate::pseudolabel::{build_label_set, JumpLabel, JumpLabelSet};
use crate::rng::{derive_seed, rng_for, stream, Rng};
use crate::sparse::BoolCsr;
use crate::{Error, Result};

pub type Pair = (usize, usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Which {
    Train,
    Val,
}

/// Minibatches drawn without replacement from a per-epoch permutation.
///
/// Step `s` falls in epoch `s / steps_per_epoch`; the permutation of that
/// epoch depends only on `(seed, epoch)`, so a batch is a pure function of
/// `(seed, step)`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MinibatchSampler {
    pub population: usize,
    pub batch_size: usize,
    pub seed: u64,
}

impl MinibatchSampler {
    pub fn new(population: usize, batch_size: usize, seed: u64) -> Result<Self> {
        if population == 0 {
            return Err(Error::Config("minibatch sampler over an empty split".into()));
        }
        if batch_size == 0 {
            return Err(arg_err!("batch size must be at least 1"));
        }
        Ok(MinibatchSampler { population, batch_size, seed })
    }

    pub fn steps_per_epoch(&self) -> u64 {
        self.population.div_ceil(self.batch_size) as u64
    }

    pub fn permutation(&self, epoch: u64) -> Vec<usize> {
        let mut perm: Vec<usize> = (0..self.population).collect();
        perm.shuffle(&mut rng_for(self.seed, stream::PRIMARY_BATCH, epoch));
        perm
    }

    pub fn batch(&self, step: u64) -> Vec<usize> {
        let spe = self.steps_per_epoch();
        let (epoch, k) = (step / spe, (step % spe) as usize);
        let perm = self.permutation(epoch);
        let start = k * self.batch_size;
        perm[start..(start + self.batch_size).min(self.population)].to_vec()
    }
}

/// Held-out structure of the link-prediction task. Positives are unordered
/// target pairs `(i, j)` with `i < j`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct LinkSplit {
    pub train: Vec<Pair>,
    pub val: Vec<Pair>,
    pub test: Vec<Pair>,
    pub val_negatives: Vec<Pair>,
    pub test_negatives: Vec<Pair>,
}

impl LinkSplit {
    pub fn held_out(&self) -> impl Iterator<Item = &Pair> + '_ {
        self.val.iter().chain(&self.test)
    }

    /// Held-out positives as a symmetric boolean matrix.
    pub fn held_out_matrix(&self, n: usize) -> Result<BoolCsr> {
        let mut e = Vec::new();
        for &(i, j) in self.held_out() {
            e.push((i, j));
            e.push((j, i));
        }
        BoolCsr::from_pairs(n, n, &e)
    }
}

fn split_counts(total: usize, train_frac: f64, val_frac: f64) -> (usize, usize) {
    let train = libm::round(total as f64 * train_frac) as usize;
    let val = (libm::round(total as f64 * val_frac) as usize).min(total - train.min(total));
    (train.min(total), val)
}

/// One uniformly random unordered pair not linked in `known`; `None` when
/// rejection sampling keeps failing (near-complete graphs).
pub fn sample_negative(known: &BoolCsr, rng: &mut Rng) -> Option<Pair> {
    let n = known.rows();
    if n < 2 {
        return None;
    }
    for _ in 0..1000 {
        let i = rng.random_range(0..n);
        let j = rng.random_range(0..n);
        if i != j && !known.get(i, j) && !known.get(j, i) {
            return Some((i.min(j), i.max(j)));
        }
    }
    None
}

fn sample_negatives(known: &BoolCsr, count: usize, rng: &mut Rng) -> Vec<Pair> {
    (0..count).filter_map(|_| sample_negative(known, rng)).collect()
}

/// Splits the positive pairs of `union` into train / validation / test and
/// draws fixed validation and test negatives.
pub fn link_split(union: &BoolCsr, train_frac: f64, val_frac: f64, seed: u64) -> LinkSplit {
    let mut pos: Vec<Pair> = union.iter().filter(|&(i, j)| i < j || (i > j && !union.get(j, i))).map(|(i, j)| (i.min(j), i.max(j))).collect();
    pos.sort_unstable();
    pos.dedup();
    let mut rng = rng_for(seed, stream::SPLIT, 0);
    pos.shuffle(&mut rng);
    let (nt, nv) = split_counts(pos.len(), train_frac, val_frac);
    let test = pos.split_off(nt + nv);
    let val = pos.split_off(nt);
    let mut neg_rng = rng_for(seed, stream::NEGATIVES, u64::MAX);
    let val_negatives = sample_negatives(union, val.len(), &mut neg_rng);
    let test_negatives = sample_negatives(union, test.len(), &mut neg_rng);
    LinkSplit { train: pos, val, test, val_negatives, test_negatives }
}

/// Labeled-node split for node classification.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeSplit {
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Class of every target node (`None` when unlabeled).
    pub classes: Vec<Option<usize>>,
    pub num_classes: usize,
}

pub fn node_split(labels: &[Option<u32>], train_frac: f64, val_frac: f64, seed: u64) -> NodeSplit {
    let mut nodes: Vec<usize> = labels.iter().enumerate().filter(|(_, l)| l.is_some()).map(|(i, _)| i).collect();
    nodes.shuffle(&mut rng_for(seed, stream::SPLIT, 1));
    let (nt, nv) = split_counts(nodes.len(), train_frac, val_frac);
    let test = nodes.split_off(nt + nv);
    let val = nodes.split_off(nt);
    let classes: Vec<Option<usize>> = labels.iter().map(|l| l.map(|c| c as usize)).collect();
    let num_classes = classes.iter().flatten().max().map_or(0, |m| m + 1);
    NodeSplit { train: nodes, val, test, classes, num_classes }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum PrimarySplit {
    Link { split: LinkSplit, known: BoolCsr },
    Node(NodeSplit),
}

/// Primary-task samples split into S_train / S_val (plus a test remainder),
/// and the pretext labels usable for training.
#[derive(Debug, Clone, PartialEq)]
pub struct SplitData {
    pub primary: PrimarySplit,
    pub pretext: JumpLabelSet,
}

impl SplitData {
    /// Validation samples as (pair or node, target) lists.
    pub fn val_link_samples(&self) -> Vec<(Pair, f64)> {
        match &self.primary {
            PrimarySplit::Link { split, .. } => split
                .val
                .iter()
                .map(|&p| (p, 1.0))
                .chain(split.val_negatives.iter().map(|&p| (p, 0.0)))
                .collect(),
            PrimarySplit::Node(_) => Vec::new(),
        }
    }

    pub fn test_link_samples(&self) -> Vec<(Pair, f64)> {
        match &self.primary {
            PrimarySplit::Link { split, .. } => split
                .test
                .iter()
                .map(|&p| (p, 1.0))
                .chain(split.test_negatives.iter().map(|&p| (p, 0.0)))
                .collect(),
            PrimarySplit::Node(_) => Vec::new(),
        }
    }

    /// Training link samples of one epoch: every training positive plus one
    /// freshly drawn negative per positive.
    pub fn train_link_samples(&self, seed: u64, epoch: u64) -> Vec<(Pair, f64)> {
        match &self.primary {
            PrimarySplit::Link { split, known } => {
                let mut rng = rng_for(seed, stream::NEGATIVES, epoch);
                let mut out: Vec<(Pair, f64)> = split.train.iter().map(|&p| (p, 1.0)).collect();
                for _ in 0..split.train.len() {
                    if let Some(p) = sample_negative(known, &mut rng) {
                        out.push((p, 0.0));
                    }
                }
                out
            }
            PrimarySplit::Node(_) => Vec::new(),
        }
    }

    pub fn population(&self, which: Which) -> usize {
        match (&self.primary, which) {
            (PrimarySplit::Link { split, .. }, Which::Train) => 2 * split.train.len(),
            (PrimarySplit::Link { split, .. }, Which::Val) => split.val.len() + split.val_negatives.len(),
            (PrimarySplit::Node(s), Which::Train) => s.train.len(),
            (PrimarySplit::Node(s), Which::Val) => s.val.len(),
        }
    }
}

/// Samples `size` indices of the chosen split at global step `step`.
pub fn minibatch_sampler(split: &SplitData, which: Which, size: usize, seed: u64, step: u64) -> Result<Vec<usize>> {
    let tag = match which {
        Which::Train => stream::PRIMARY_BATCH,
        Which::Val => stream::VAL_BATCH,
    };
    MinibatchSampler::new(split.population(which), size, derive_seed(seed, tag, 0)).map(|s| s.batch(step))
}

/// Everything the training loop consumes.
#[derive(Debug, Clone)]
pub struct TrainingData {
    pub inputs: GraphInputs,
    pub split: SplitData,
    /// Ids of the metapaths in use, ascending.
    pub metapaths: Vec<u32>,
    pub task: Task,
    /// Collapsed adjacencies visible during training (held-out links removed).
    pub train_adjs: Vec<CollapsedAdj>,
    /// Aggregation graph of the encoder.
    pub message_graph: BoolCsr,
}

/// The metapaths selected by `cfg.metapath_count`, in the given order.
pub fn select_metapaths<'a>(metapaths: &'a [MetapathSpec], cfg: &TrainConfig) -> Result<&'a [MetapathSpec]> {
    let k = cfg.metapath_count.unwrap_or(metapaths.len());
    if k == 0 || k > metapaths.len() {
        return Err(Error::Config(alloc::format!(
            "metapath count {k} with {} metapaths available",
            metapaths.len()
        )));
    }
    Ok(&metapaths[..k])
}

/// Composed adjacencies of the selected metapaths, their union, and the
/// task split computed on that union.
pub fn prepare_structure(
    g: &HetGraph,
    metapaths: &[MetapathSpec],
    cfg: &TrainConfig,
) -> Result<(Vec<CollapsedAdj>, BoolCsr, PrimarySplit)> {
    let chosen = select_metapaths(metapaths, cfg)?;
    let adjs = chosen.iter().map(|m| compose_metapath(g, m)).collect::<Result<Vec<_>>>()?;
    let union = union_adjacency(&adjs)?;
    let primary = match cfg.task {
        super::TaskKind::Link => {
            PrimarySplit::Link { split: link_split(&union, cfg.train_frac, cfg.val_frac, cfg.seed), known: union.clone() }
        }
        super::TaskKind::Node => {
            let labels = g.labels().ok_or_else(|| Error::Config("node classification needs node labels".into()))?;
            PrimarySplit::Node(node_split(labels, cfg.train_frac, cfg.val_frac, cfg.seed))
        }
    };
    Ok((adjs, union, primary))
}

/// Removes held-out link positives from every collapsed adjacency.
pub fn training_adjacencies(adjs: &[CollapsedAdj], primary: &PrimarySplit) -> Result<Vec<CollapsedAdj>> {
    match primary {
        PrimarySplit::Link { split, .. } => {
            let n = adjs.first().map_or(0, CollapsedAdj::n);
            let held = split.held_out_matrix(n)?;
            adjs.iter()
                .map(|a| CollapsedAdj::new(a.metapath_id, a.matrix.and_not(&held)?))
                .collect()
        }
        PrimarySplit::Node(_) => Ok(adjs.to_vec()),
    }
}

/// Pseudo-labels computed on the training-visible collapsed graphs.
pub fn prepare_labels(g: &HetGraph, metapaths: &[MetapathSpec], cfg: &TrainConfig) -> Result<JumpLabelSet> {
    let (adjs, _, primary) = prepare_structure(g, metapaths, cfg)?;
    let visible = training_adjacencies(&adjs, &primary)?;
    build_label_set(&visible, &cfg.pair_sampler, cfg.j_max)
}

fn restrict_labels(labels: &JumpLabelSet, metapaths: &[u32], primary: &PrimarySplit) -> JumpLabelSet {
    let keep_mp: BTreeSet<u32> = metapaths.iter().copied().collect();
    let entries: Vec<JumpLabel> = match primary {
        PrimarySplit::Link { split, .. } => {
            let held: BTreeSet<Pair> = split.held_out().copied().collect();
            labels
                .entries
                .iter()
                .filter(|e| keep_mp.contains(&e.metapath) && !held.contains(&(e.i.min(e.j), e.i.max(e.j))))
                .copied()
                .collect()
        }
        PrimarySplit::Node(s) => {
            let val: BTreeSet<usize> = s.val.iter().copied().collect();
            labels
                .entries
                .iter()
                .filter(|e| keep_mp.contains(&e.metapath) && !val.contains(&e.i) && !val.contains(&e.j))
                .copied()
                .collect()
        }
    };
    let empty = metapaths.iter().copied().filter(|m| !entries.iter().any(|e| e.metapath == *m)).collect();
    JumpLabelSet { entries, j_max: labels.j_max, empty_metapaths: empty }
}

impl TrainingData {
    /// Builds the aggregation graph, splits and pretext labels. When
    /// `labels` is `None` they are computed with [`prepare_labels`].
    pub fn prepare(
        g: &HetGraph,
        metapaths: &[MetapathSpec],
        labels: Option<&JumpLabelSet>,
        cfg: &TrainConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        let n = g.n();
        if n > cfg.dense_cap {
            return Err(Error::Config(alloc::format!(
                "{n} target nodes exceed the dense adjacency cap of {}",
                cfg.dense_cap
            )));
        }
        let (adjs, union, primary) = prepare_structure(g, metapaths, cfg)?;
        let train_adjs = training_adjacencies(&adjs, &primary)?;
        let message_graph = match &primary {
            PrimarySplit::Link { split, .. } => union.and_not(&split.held_out_matrix(n)?)?,
            PrimarySplit::Node(_) => union,
        };
        let mut ids: Vec<u32> = adjs.iter().map(|a| a.metapath_id).collect();
        ids.sort_unstable();
        let computed;
        let labels = match labels {
            Some(l) => l,
            None => {
                computed = build_label_set(&train_adjs, &cfg.pair_sampler, cfg.j_max)?;
                &computed
            }
        };
        if labels.j_max > cfg.j_max {
            return Err(Error::Config(alloc::format!(
                "label set uses j_max {} but the configuration allows {}",
                labels.j_max,
                cfg.j_max
            )));
        }
        let pretext = restrict_labels(labels, &ids, &primary);
        if let Some(e) = pretext.entries.iter().find(|e| e.i >= n || e.j >= n) {
            return Err(arg_err!("label pair ({}, {}) outside {n} target nodes", e.i, e.j));
        }
        let task = match &primary {
            PrimarySplit::Link { .. } => Task::Link,
            PrimarySplit::Node(s) => Task::Node { classes: s.num_classes },
        };
        let inputs = GraphInputs::new(g.features().clone(), &normalize_adj(&message_graph)?)?;
        Ok(TrainingData { inputs, split: SplitData { primary, pretext }, metapaths: ids, task, train_adjs, message_graph })
    }
}

/// Splits `total` draws across buckets proportionally to `counts` (largest
/// remainder, ties to the lower index).
pub fn proportional_sizes(total: usize, counts: &[usize]) -> Vec<usize> {
    let sum: usize = counts.iter().sum();
    if sum == 0 {
        return vec![0; counts.len()];
    }
    let total = total.min(sum);
    let mut sizes: Vec<usize> = counts.iter().map(|&c| total * c / sum).collect();
    let mut rem: Vec<(usize, usize)> = counts.iter().enumerate().map(|(i, &c)| (total * c % sum, i)).collect();
    rem.sort_by(|a, b| b.0.cmp(&a.0).then(a.1.cmp(&b.1)));
    let mut left = total - sizes.iter().sum::<usize>();
    for &(_, i) in &rem {
        if left == 0 {
            break;
        }
        if sizes[i] < counts[i] {
            sizes[i] += 1;
            left -= 1;
        }
    }
    sizes
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn sampler_full_permutation_and_determinism() {
        let s = MinibatchSampler::new(7, 10, 3).unwrap();
        let mut b = s.batch(0);
        b.sort_unstable();
        assert_eq!(b, (0..7).collect::<Vec<_>>());
        let s = MinibatchSampler::new(100, 16, 9).unwrap();
        assert_eq!(s.batch(5), s.batch(5));
        assert_eq!(s.steps_per_epoch(), 7);
        let mut epoch: Vec<usize> = (0..7).flat_map(|k| s.batch(k)).collect();
        epoch.sort_unstable();
        assert_eq!(epoch, (0..100).collect::<Vec<_>>());
        assert!(MinibatchSampler::new(0, 4, 0).is_err());
    }

    #[test]
    fn proportional_split() {
        assert_eq!(proportional_sizes(10, &[20, 20]), vec![5, 5]);
        assert_eq!(proportional_sizes(10, &[1, 1]), vec![1, 1]);
        assert_eq!(proportional_sizes(10, &[30, 10]), vec![8, 2]);
        assert_eq!(proportional_sizes(3, &[1, 1, 1, 1]), vec![1, 1, 1, 0]);
        assert_eq!(proportional_sizes(5, &[2, 0]), vec![2, 0]);
        assert_eq!(proportional_sizes(3, &[0, 0]), vec![0, 0]);
        assert_eq!(proportional_sizes(7, &[10, 10, 10]).iter().sum::<usize>(), 7);
    }

    #[test]
    fn link_split_is_disjoint() {
        let mut e = Vec::new();
        for i in 0..20 {
            for j in (i + 1)..20 {
                if (i * 7 + j * 3) % 5 == 0 {
                    e.push((i, j));
                    e.push((j, i));
                }
            }
        }
        let u = BoolCsr::from_pairs(20, 20, &e).unwrap();
        let s = link_split(&u, 0.4, 0.2, 1);
        let all: BTreeSet<Pair> = s.train.iter().chain(&s.val).chain(&s.test).copied().collect();
        assert_eq!(all.len(), s.train.len() + s.val.len() + s.test.len());
        assert_eq!(all.len(), e.len() / 2);
        for &(i, j) in s.val_negatives.iter().chain(&s.test_negatives) {
            assert!(i != j && !u.get(i, j));
        }
    }
}
