#![allow(dead_code)]

use std::collections::BTreeMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sesim_core::graph::NodeType;
use sesim_core::trainer::{TaskKind, TrainConfig, TrainingData};
use sesim_core::{BoolCsr, CollapsedAdj, HetGraph, Hop, Matrix, MetapathSpec, Relation};

pub fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub fn random_matrix(rows: usize, cols: usize, rng: &mut ChaCha8Rng) -> Matrix {
    Matrix::from_vec(rows, cols, (0..rows * cols).map(|_| rng.random_range(-1.0..1.0)).collect()).unwrap()
}

/// Symmetric random graph with edge probability `p`.
pub fn random_undirected(n: usize, p: f64, rng: &mut ChaCha8Rng) -> CollapsedAdj {
    let mut e = Vec::new();
    for i in 0..n {
        for j in (i + 1)..n {
            if rng.random_bool(p) {
                e.push((i, j));
                e.push((j, i));
            }
        }
    }
    CollapsedAdj::new(0, BoolCsr::from_pairs(n, n, &e).unwrap()).unwrap()
}

/// All-pairs shortest path lengths by Floyd–Warshall; `usize::MAX` when
/// unreachable.
pub fn floyd_warshall(a: &BoolCsr) -> Vec<Vec<usize>> {
    let n = a.rows();
    let inf = usize::MAX / 4;
    let mut d = vec![vec![inf; n]; n];
    for i in 0..n {
        d[i][i] = 0;
    }
    for (i, j) in a.iter() {
        d[i][j] = 1;
    }
    for k in 0..n {
        for i in 0..n {
            for j in 0..n {
                if d[i][k] + d[k][j] < d[i][j] {
                    d[i][j] = d[i][k] + d[k][j];
                }
            }
        }
    }
    d.into_iter().map(|r| r.into_iter().map(|v| if v >= inf { usize::MAX } else { v }).collect()).collect()
}

pub fn dense(a: &BoolCsr) -> Vec<Vec<bool>> {
    let mut m = vec![vec![false; a.cols()]; a.rows()];
    for (i, j) in a.iter() {
        m[i][j] = true;
    }
    m
}

fn random_biadjacency(rows: usize, cols: usize, p: f64, rng: &mut ChaCha8Rng) -> BoolCsr {
    let mut e = Vec::new();
    for i in 0..rows {
        for j in 0..cols {
            if rng.random_bool(p) {
                e.push((i, j));
            }
        }
    }
    BoolCsr::from_pairs(rows, cols, &e).unwrap()
}

/// Three node types U (target, 0), B (1), C (2) with relations U–B (0),
/// U–C (1), B–C (2), and metapaths UBU, UCU, UBCBU.
pub fn random_three_type(counts: [usize; 3], p: f64, feat_dim: usize, classes: usize, seed: u64) -> (HetGraph, Vec<MetapathSpec>) {
    let mut r = rng(seed);
    let types: BTreeMap<u32, NodeType> = ["U", "B", "C"]
        .iter()
        .zip(counts)
        .enumerate()
        .map(|(t, (name, count))| (t as u32, NodeType { name: name.to_string(), count }))
        .collect();
    let rel = |edge_type, src_type: u32, dst_type: u32, r: &mut ChaCha8Rng| Relation {
        edge_type,
        src_type,
        dst_type,
        directed: false,
        matrix: random_biadjacency(counts[src_type as usize], counts[dst_type as usize], p, r),
    };
    let relations = vec![rel(0, 0, 1, &mut r), rel(1, 0, 2, &mut r), rel(2, 1, 2, &mut r)];
    let x = random_matrix(counts[0], feat_dim, &mut r);
    let labels = (classes > 0).then(|| (0..counts[0]).map(|i| Some((i % classes) as u32)).collect());
    let g = HetGraph::new(types, relations, 0, x, labels).unwrap();
    (g, standard_metapaths())
}

pub fn hop(edge_type: u32, reverse: bool) -> Hop {
    Hop { edge_type, reverse }
}

pub fn standard_metapaths() -> Vec<MetapathSpec> {
    vec![
        MetapathSpec { id: 0, hops: vec![hop(0, false), hop(0, true)] },
        MetapathSpec { id: 1, hops: vec![hop(1, false), hop(1, true)] },
        MetapathSpec { id: 2, hops: vec![hop(0, false), hop(2, false), hop(2, true), hop(0, true)] },
    ]
}

/// A small training problem with desk-sized layers.
pub fn small_problem(task: TaskKind, seed: u64) -> (TrainingData, TrainConfig) {
    let classes = if task == TaskKind::Node { 3 } else { 0 };
    let (g, mps) = random_three_type([24, 12, 12], 0.12, 5, classes, seed);
    let mut cfg = TrainConfig { task, seed, metapath_count: Some(2), ..TrainConfig::default() };
    cfg.dims.hidden = 8;
    cfg.dims.embed = 6;
    cfg.dims.primary_hidden = 7;
    cfg.dims.contribution_hidden = 9;
    cfg.batch_size = 16;
    cfg.val_batch_size = 16;
    cfg.pretext_batch_size = 20;
    cfg.pair_sampler.target_nodes_per_metapath = 12;
    cfg.pair_sampler.neighbors_per_target = 4;
    let data = TrainingData::prepare(&g, &mps, None, &cfg).unwrap();
    (data, cfg)
}

/// `‖a − b‖ / max(‖a‖, ‖b‖)`, zero when both vanish.
pub fn rel_err(a: &[f64], b: &[f64]) -> f64 {
    let diff: f64 = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>().sqrt();
    let na: f64 = a.iter().map(|x| x * x).sum::<f64>().sqrt();
    let nb: f64 = b.iter().map(|x| x * x).sum::<f64>().sqrt();
    let den = na.max(nb);
    if den == 0.0 {
        0.0
    } else {
        diff / den
    }
}

use sesim_core::trainer::{PretextBatch, PrimaryBatch, PrimarySplit, StepBatch};

/// Deterministic batch from the training split: a few primary samples and
/// up to `per_metapath` labeled pairs of every metapath.
pub fn sample_batch(data: &TrainingData, per_metapath: usize, offset: usize) -> StepBatch {
    let primary = match &data.split.primary {
        PrimarySplit::Link { .. } => {
            let s = data.split.train_link_samples(7, offset as u64);
            let half = s.len() / 2;
            let pick: Vec<_> = s[offset % half..][..6.min(half - offset % half)]
                .iter()
                .chain(&s[half..][..6.min(s.len() - half)])
                .copied()
                .collect();
            PrimaryBatch::Link { pairs: pick.iter().map(|p| p.0).collect(), targets: pick.iter().map(|p| p.1).collect() }
        }
        PrimarySplit::Node(s) => {
            let nodes: Vec<usize> = s.train.iter().copied().skip(offset).take(8).collect();
            let classes = nodes.iter().map(|&v| s.classes[v].unwrap()).collect();
            PrimaryBatch::Node { nodes, classes }
        }
    };
    let pretext = data
        .metapaths
        .iter()
        .map(|&m| {
            let e: Vec<_> = data.split.pretext.for_metapath(m).skip(offset).take(per_metapath).collect();
            PretextBatch { metapath: m, pairs: e.iter().map(|l| (l.i, l.j)).collect(), y: e.iter().map(|l| l.y).collect() }
        })
        .collect();
    StepBatch { primary, pretext }
}

pub fn val_batch(data: &TrainingData) -> PrimaryBatch {
    match &data.split.primary {
        PrimarySplit::Link { .. } => {
            let s = data.split.val_link_samples();
            PrimaryBatch::Link { pairs: s.iter().map(|p| p.0).collect(), targets: s.iter().map(|p| p.1).collect() }
        }
        PrimarySplit::Node(s) => PrimaryBatch::Node {
            nodes: s.val.clone(),
            classes: s.val.iter().map(|&v| s.classes[v].unwrap()).collect(),
        },
    }
}

/// Zero biases put relu inputs exactly on the kink for all-zero rows.
pub fn randomize_biases(state: &mut sesim_core::model::ModelState, seed: u64) {
    let mut r = rng(seed ^ 0xb1a5);
    for p in state.all_tensors_mut() {
        if p.rows() == 1 {
            *p = random_matrix(1, p.cols(), &mut r).map(|v| 0.1 * v);
        }
    }
}
