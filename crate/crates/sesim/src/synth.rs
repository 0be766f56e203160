//! Planted-community heterogeneous graphs for desk-scale experiments.
//!
//! Three node types: U (target), B and C, joined by undirected relations
//! U–B, U–C and B–C. Every node belongs to one of `communities` groups;
//! an edge between two nodes is drawn with a probability proportional to
//! `intra` when they share a group and to `inter` otherwise, scaled so that
//! a source node has `mean_degree` partners per relation on average.
//! Metapaths are UBU, UCU and UBCBU, of which the first `metapaths` are kept.

use std::collections::BTreeMap;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sesim_core::graph::NodeType;
use sesim_core::{BoolCsr, HetGraph, Hop, Matrix, MetapathSpec, Relation};

use crate::bundle::Bundle;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    /// Node counts of U, B and C.
    pub counts: [usize; 3],
    pub communities: usize,
    pub intra: f64,
    pub inter: f64,
    /// Standard deviation of the gaussian feature noise.
    pub noise: f64,
    /// Pure-noise feature columns appended after the community one-hot.
    pub extra_dims: usize,
    pub mean_degree: f64,
    pub metapaths: usize,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        SynthConfig {
            counts: [300, 300, 300],
            communities: 3,
            intra: 0.9,
            inter: 0.05,
            noise: 1.0,
            extra_dims: 8,
            mean_degree: 3.0,
            metapaths: 2,
            seed: 0,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        for (name, p) in [("intra", self.intra), ("inter", self.inter)] {
            if !(0.0..=1.0).contains(&p) {
                return bad(format!("{name} probability {p} outside [0, 1]"));
            }
        }
        if self.intra + self.inter == 0.0 {
            return bad("intra and inter probabilities are both zero".into());
        }
        if self.counts.contains(&0) {
            return bad(format!("node counts must be positive, got {:?}", self.counts));
        }
        if self.communities == 0 || self.counts.iter().any(|&c| c < self.communities) {
            return bad(format!("{} communities for node counts {:?}", self.communities, self.counts));
        }
        if !(self.noise >= 0.0 && self.noise.is_finite()) {
            return bad(format!("noise {} must be a finite non-negative number", self.noise));
        }
        if !(self.mean_degree > 0.0 && self.mean_degree.is_finite()) {
            return bad(format!("mean degree {} must be positive", self.mean_degree));
        }
        if !(1..=3).contains(&self.metapaths) {
            return bad(format!("metapath count {} outside 1..=3", self.metapaths));
        }
        Ok(())
    }
}

fn hop(edge_type: u32, reverse: bool) -> Hop {
    Hop { edge_type, reverse }
}

/// UBU, UCU, UBCBU with ids 0, 1, 2.
pub fn synthetic_metapaths() -> Vec<MetapathSpec> {
    vec![
        MetapathSpec { id: 0, hops: vec![hop(0, false), hop(0, true)] },
        MetapathSpec { id: 1, hops: vec![hop(1, false), hop(1, true)] },
        MetapathSpec { id: 2, hops: vec![hop(0, false), hop(2, false), hop(2, true), hop(0, true)] },
    ]
}

fn assign(n: usize, k: usize, rng: &mut ChaCha8Rng) -> Vec<usize> {
    let mut c: Vec<usize> = (0..n).map(|i| i % k).collect();
    c.shuffle(rng);
    c
}

fn relation(
    edge_type: u32,
    (src, dst): (u32, u32),
    comm: &[Vec<usize>],
    cfg: &SynthConfig,
    rng: &mut ChaCha8Rng,
) -> Result<Relation> {
    let (cs, cd) = (&comm[src as usize], &comm[dst as usize]);
    let k = cfg.communities as f64;
    let nd = cd.len() as f64;
    let expected = nd / k * cfg.intra + nd * (k - 1.0) / k * cfg.inter;
    let scale = cfg.mean_degree / expected;
    let (p_in, p_out) = ((cfg.intra * scale).min(1.0), (cfg.inter * scale).min(1.0));
    let mut pairs = Vec::new();
    for (i, &a) in cs.iter().enumerate() {
        for (j, &b) in cd.iter().enumerate() {
            if rng.random_bool(if a == b { p_in } else { p_out }) {
                pairs.push((i, j));
            }
        }
    }
    let matrix = BoolCsr::from_pairs(cs.len(), cd.len(), &pairs)?;
    Ok(Relation { edge_type, src_type: src, dst_type: dst, directed: false, matrix })
}

/// The bundle and the community of every target node.
pub fn generate_synthetic(cfg: &SynthConfig) -> Result<(Bundle, Vec<usize>)> {
    cfg.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let comm: Vec<Vec<usize>> = cfg.counts.iter().map(|&n| assign(n, cfg.communities, &mut rng)).collect();
    let types: BTreeMap<u32, NodeType> = ["U", "B", "C"]
        .iter()
        .zip(cfg.counts)
        .enumerate()
        .map(|(t, (name, count))| (t as u32, NodeType { name: (*name).into(), count }))
        .collect();
    let relations = vec![
        relation(0, (0, 1), &comm, cfg, &mut rng)?,
        relation(1, (0, 2), &comm, cfg, &mut rng)?,
        relation(2, (1, 2), &comm, cfg, &mut rng)?,
    ];
    let n = cfg.counts[0];
    let dim = cfg.communities + cfg.extra_dims;
    let normal = Normal::new(0.0, cfg.noise).map_err(|e| Error::Config(e.to_string()))?;
    let mut x = Matrix::zeros(n, dim);
    for (i, &c) in comm[0].iter().enumerate() {
        let row = x.row_mut(i);
        row[c] = 1.0;
        for v in row.iter_mut() {
            *v += normal.sample(&mut rng);
        }
    }
    let labels = comm[0].iter().map(|&c| Some(c as u32)).collect();
    let graph = HetGraph::new(types, relations, 0, x, Some(labels))?;
    let mut metapaths = synthetic_metapaths();
    metapaths.truncate(cfg.metapaths);
    Ok((Bundle { graph, metapaths }, comm[0].clone()))
}
