//! Heterogeneous graph model and metapath composition.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;

use crate::error::arg_err;
use crate::matrix::Matrix;
use crate::sparse::BoolCsr;
use crate::{Error, Result};

pub type NodeTypeId = u32;
pub type EdgeTypeId = u32;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct NodeType {
    pub name: String,
    pub count: usize,
}

/// One typed edge relation, stored as a `count(src) × count(dst)` biadjacency.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Relation {
    pub edge_type: EdgeTypeId,
    pub src_type: NodeTypeId,
    pub dst_type: NodeTypeId,
    pub directed: bool,
    pub matrix: BoolCsr,
}

#[derive(Debug, Clone, PartialEq)]
pub struct HetGraph {
    node_types: BTreeMap<NodeTypeId, NodeType>,
    relations: Vec<Relation>,
    target_type: NodeTypeId,
    features: Matrix,
    labels: Option<Vec<Option<u32>>>,
}

impl HetGraph {
    /// Validates every structural invariant before building the graph.
    pub fn new(
        node_types: BTreeMap<NodeTypeId, NodeType>,
        relations: Vec<Relation>,
        target_type: NodeTypeId,
        features: Matrix,
        labels: Option<Vec<Option<u32>>>,
    ) -> Result<Self> {
        let invalid = |m: String| Err(Error::InvalidGraph(m));
        let Some(target) = node_types.get(&target_type) else {
            return invalid(format!("target type {target_type} is not a declared node type"));
        };
        let mut seen = BTreeMap::new();
        for rel in &relations {
            if seen.insert(rel.edge_type, ()).is_some() {
                return invalid(format!("edge type {} declared twice", rel.edge_type));
            }
            let (Some(s), Some(d)) = (node_types.get(&rel.src_type), node_types.get(&rel.dst_type)) else {
                return invalid(format!("edge type {} references an undeclared node type", rel.edge_type));
            };
            if rel.matrix.shape() != (s.count, d.count) {
                return invalid(format!(
                    "edge type {} matrix is {:?}, node counts require {:?}",
                    rel.edge_type,
                    rel.matrix.shape(),
                    (s.count, d.count)
                ));
            }
        }
        if node_types.len() + relations.len() <= 2 {
            return invalid(format!(
                "{} node types and {} edge types do not form a heterogeneous graph",
                node_types.len(),
                relations.len()
            ));
        }
        if features.rows() != target.count {
            return invalid(format!(
                "features have {} rows but target type has {} nodes",
                features.rows(),
                target.count
            ));
        }
        if !features.is_finite() {
            return invalid("features contain non-finite values".into());
        }
        if let Some(l) = &labels {
            if l.len() != target.count {
                return invalid(format!("{} labels for {} target nodes", l.len(), target.count));
            }
        }
        Ok(HetGraph { node_types, relations, target_type, features, labels })
    }

    pub fn node_types(&self) -> &BTreeMap<NodeTypeId, NodeType> {
        &self.node_types
    }

    pub fn node_count(&self, t: NodeTypeId) -> Option<usize> {
        self.node_types.get(&t).map(|n| n.count)
    }

    pub fn relations(&self) -> &[Relation] {
        &self.relations
    }

    pub fn relation(&self, edge_type: EdgeTypeId) -> Option<&Relation> {
        self.relations.iter().find(|r| r.edge_type == edge_type)
    }

    pub fn target_type(&self) -> NodeTypeId {
        self.target_type
    }

    /// Number of target-type nodes.
    pub fn n(&self) -> usize {
        self.features.rows()
    }

    pub fn features(&self) -> &Matrix {
        &self.features
    }

    pub fn labels(&self) -> Option<&[Option<u32>]> {
        self.labels.as_deref()
    }

    /// Number of classes implied by the labels (max label + 1).
    pub fn num_classes(&self) -> usize {
        self.labels
            .as_ref()
            .and_then(|l| l.iter().flatten().max())
            .map_or(0, |&m| m as usize + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Hop {
    pub edge_type: EdgeTypeId,
    /// Traverse the relation from its destination type to its source type.
    pub reverse: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MetapathSpec {
    pub id: u32,
    pub hops: Vec<Hop>,
}

impl MetapathSpec {
    /// Checks that the hops chain and start/end at the target type.
    pub fn validate(&self, g: &HetGraph) -> Result<()> {
        if self.hops.is_empty() {
            return Err(Error::Composition { hop: 0, reason: "metapath has no hops".into() });
        }
        let mut at = g.target_type();
        for (i, hop) in self.hops.iter().enumerate() {
            let rel = g.relation(hop.edge_type).ok_or_else(|| Error::Composition {
                hop: i,
                reason: format!("unknown edge type {}", hop.edge_type),
            })?;
            let (from, to) = hop_endpoints(rel, hop.reverse);
            if from != at {
                return Err(Error::Composition {
                    hop: i,
                    reason: format!(
                        "edge type {} starts at node type {from} but the path is at node type {at}",
                        hop.edge_type
                    ),
                });
            }
            at = to;
        }
        if at != g.target_type() {
            return Err(Error::Composition {
                hop: self.hops.len() - 1,
                reason: format!("metapath ends at node type {at}, not the target type {}", g.target_type()),
            });
        }
        Ok(())
    }

    /// A metapath reads the same backwards when hop `i` and hop `len-1-i`
    /// share an edge type with opposite directions.
    pub fn is_palindromic(&self) -> bool {
        let n = self.hops.len();
        (0..n).all(|i| {
            let (a, b) = (self.hops[i], self.hops[n - 1 - i]);
            a.edge_type == b.edge_type && (a.reverse != b.reverse || i == n - 1 - i)
        })
    }
}

fn hop_endpoints(rel: &Relation, reverse: bool) -> (NodeTypeId, NodeTypeId) {
    if reverse {
        (rel.dst_type, rel.src_type)
    } else {
        (rel.src_type, rel.dst_type)
    }
}

fn hop_matrix(rel: &Relation, reverse: bool) -> Result<BoolCsr> {
    // Undirected same-type relations are traversable both ways.
    if !rel.directed && rel.src_type == rel.dst_type {
        return rel.matrix.or(&rel.matrix.transpose());
    }
    Ok(if reverse { rel.matrix.transpose() } else { rel.matrix.clone() })
}

/// Homogeneous boolean adjacency over target-type nodes induced by one
/// metapath. The diagonal is always clear.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CollapsedAdj {
    pub metapath_id: u32,
    pub matrix: BoolCsr,
}

impl CollapsedAdj {
    pub fn new(metapath_id: u32, matrix: BoolCsr) -> Result<Self> {
        if matrix.rows() != matrix.cols() {
            return Err(arg_err!("collapsed adjacency must be square, got {:?}", matrix.shape()));
        }
        Ok(CollapsedAdj { metapath_id, matrix: matrix.without_diagonal() })
    }

    pub fn n(&self) -> usize {
        self.matrix.rows()
    }
}

/// Composes the hop biadjacencies of `spec` (reverse hops transposed) into a
/// boolean target×target matrix with a cleared diagonal.
pub fn compose_metapath(g: &HetGraph, spec: &MetapathSpec) -> Result<CollapsedAdj> {
    spec.validate(g)?;
    let mut acc: Option<BoolCsr> = None;
    for hop in &spec.hops {
        // validate() guarantees the relation exists
        let rel = g.relation(hop.edge_type).expect("validated hop");
        let m = hop_matrix(rel, hop.reverse)?;
        acc = Some(match acc {
            None => m,
            Some(a) => a.matmul(&m)?,
        });
    }
    CollapsedAdj::new(spec.id, acc.expect("non-empty metapath"))
}

/// Boolean `k`-th power of the collapsed adjacency: entry (i, j) is set when
/// a walk of exactly `k` edges joins i to j. The diagonal is kept.
pub fn khop_reach(a: &CollapsedAdj, k: usize) -> Result<BoolCsr> {
    if k == 0 {
        return Err(arg_err!("hop count must be at least 1"));
    }
    let mut p = a.matrix.clone();
    for _ in 1..k {
        p = p.matmul(&a.matrix)?;
    }
    Ok(p)
}

/// Symmetrically normalized adjacency with self-loops,
/// `D̂^{-1/2} (A + I) D̂^{-1/2}`, stored densely.
#[derive(Debug, Clone, PartialEq)]
pub struct NormAdj {
    pub matrix: Matrix,
}

pub fn normalize_adj(a: &BoolCsr) -> Result<NormAdj> {
    if a.rows() != a.cols() {
        return Err(arg_err!("adjacency must be square, got {:?}", a.shape()));
    }
    let n = a.rows();
    let with_loops = a.or(&BoolCsr::identity(n))?;
    let inv_sqrt: Vec<f64> = with_loops
        .row_counts()
        .into_iter()
        .map(|d| 1.0 / libm::sqrt(d as f64))
        .collect();
    let mut m = Matrix::zeros(n, n);
    for (i, j) in with_loops.iter() {
        m[(i, j)] = inv_sqrt[i] * inv_sqrt[j];
    }
    Ok(NormAdj { matrix: m })
}

/// Elementwise OR of collapsed adjacencies; the encoder aggregates over it.
pub fn union_adjacency(adjs: &[CollapsedAdj]) -> Result<BoolCsr> {
    let (first, rest) = adjs
        .split_first()
        .ok_or_else(|| arg_err!("union of an empty adjacency list"))?;
    let mut acc = first.matrix.clone();
    for a in rest {
        acc = acc.or(&a.matrix)?;
    }
    Ok(acc)
}

#[cfg(test)]
mod tests {
    use super::*;
    use alloc::vec;

    /// Fig. 2-style toy: users 0..3, books 0..2; U0,U1 rate B0; U2 rates B1.
    fn toy() -> (HetGraph, MetapathSpec) {
        let mut types = BTreeMap::new();
        types.insert(0, NodeType { name: "user".into(), count: 3 });
        types.insert(1, NodeType { name: "book".into(), count: 2 });
        let rates = BoolCsr::from_pairs(3, 2, &[(0, 0), (1, 0), (2, 1)]).unwrap();
        let rels = vec![
            Relation { edge_type: 0, src_type: 0, dst_type: 1, directed: false, matrix: rates },
        ];
        let g = HetGraph::new(types, rels, 0, Matrix::zeros(3, 2), None).unwrap();
        let ubu = MetapathSpec {
            id: 0,
            hops: vec![Hop { edge_type: 0, reverse: false }, Hop { edge_type: 0, reverse: true }],
        };
        (g, ubu)
    }

    #[test]
    fn user_book_user_links_co_raters() {
        let (g, ubu) = toy();
        assert!(ubu.is_palindromic());
        let c = compose_metapath(&g, &ubu).unwrap();
        assert!(c.matrix.get(0, 1) && c.matrix.get(1, 0));
        assert!(!c.matrix.get(0, 2));
        assert!(!c.matrix.get(0, 0), "diagonal cleared");
        assert!(c.matrix.is_symmetric());
    }

    #[test]
    fn broken_chain_names_the_hop() {
        let (g, _) = toy();
        let bad = MetapathSpec {
            id: 1,
            hops: vec![Hop { edge_type: 0, reverse: false }, Hop { edge_type: 0, reverse: false }],
        };
        match compose_metapath(&g, &bad) {
            Err(Error::Composition { hop, .. }) => assert_eq!(hop, 1),
            other => panic!("unexpected {other:?}"),
        }
    }

    #[test]
    fn heterogeneity_condition_enforced() {
        let mut types = BTreeMap::new();
        types.insert(0, NodeType { name: "a".into(), count: 2 });
        let rels = vec![Relation {
            edge_type: 0,
            src_type: 0,
            dst_type: 0,
            directed: false,
            matrix: BoolCsr::zeros(2, 2),
        }];
        assert!(HetGraph::new(types, rels, 0, Matrix::zeros(2, 1), None).is_err());
    }

    #[test]
    fn khop_rejects_zero() {
        let (g, ubu) = toy();
        let c = compose_metapath(&g, &ubu).unwrap();
        assert!(khop_reach(&c, 0).is_err());
        assert_eq!(khop_reach(&c, 1).unwrap(), c.matrix);
    }

    #[test]
    fn normalize_small_cases() {
        let z = normalize_adj(&BoolCsr::zeros(1, 1)).unwrap();
        assert_eq!(z.matrix.as_slice(), &[1.0]);
        let e = normalize_adj(&BoolCsr::from_pairs(2, 2, &[(0, 1), (1, 0)]).unwrap()).unwrap();
        for &v in e.matrix.as_slice() {
            assert!((v - 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn union_errors() {
        assert!(union_adjacency(&[]).is_err());
        let a = CollapsedAdj::new(0, BoolCsr::zeros(2, 2)).unwrap();
        let b = CollapsedAdj::new(1, BoolCsr::zeros(3, 3)).unwrap();
        assert!(union_adjacency(&[a, b]).is_err());
    }
}
