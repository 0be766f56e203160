//! Graph bundles: a directory of plain-text files describing one
//! heterogeneous graph.
//!
//! | file | columns |
//! |------|---------|
//! | `node_types.tsv` | `type_id  name  count` |
//! | `edges.tsv` | `edge_type  src_type  dst_type  src_index  dst_index` |
//! | `features.tsv` | one row of reals per target node |
//! | `labels.tsv` (optional) | `node_index  class` |
//! | `metapaths.json` | target type, relation declarations, metapaths |
//!
//! Lines starting with `#` and blank lines are ignored.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sesim_core::graph::NodeType;
use sesim_core::{BoolCsr, HetGraph, Hop, Matrix, MetapathSpec, Relation};

use crate::error::{Error, Result};

pub const NODE_TYPES: &str = "node_types.tsv";
pub const EDGES: &str = "edges.tsv";
pub const FEATURES: &str = "features.tsv";
pub const LABELS: &str = "labels.tsv";
pub const METAPATHS: &str = "metapaths.json";

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
struct RelationDecl {
    edge_type: u32,
    src_type: u32,
    dst_type: u32,
    #[serde(default)]
    directed: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
struct HopDecl {
    edge_type: u32,
    #[serde(default)]
    reverse: bool,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
struct MetapathDecl {
    id: u32,
    hops: Vec<HopDecl>,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq, Eq)]
#[serde(deny_unknown_fields)]
struct MetapathFile {
    target_type: u32,
    relations: Vec<RelationDecl>,
    metapaths: Vec<MetapathDecl>,
}

/// What the loader had to fix up.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct LoadReport {
    pub duplicate_edges: usize,
    pub edges_per_type: BTreeMap<u32, usize>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Bundle {
    pub graph: HetGraph,
    pub metapaths: Vec<MetapathSpec>,
}

fn read(path: &Path) -> Result<String> {
    fs::read_to_string(path).map_err(|e| Error::io(path, e))
}

fn write(path: &Path, text: &str) -> Result<()> {
    fs::write(path, text).map_err(|e| Error::io(path, e))
}

/// Non-comment lines with their 1-based line numbers, split on tabs.
fn rows(text: &str) -> impl Iterator<Item = (usize, Vec<&str>)> {
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty() && !l.starts_with('#'))
        .map(|(i, l)| (i + 1, l.split('\t').map(str::trim).collect()))
}

fn field<T: std::str::FromStr>(path: &Path, line: usize, cols: &[&str], k: usize, what: &str) -> Result<T> {
    let raw = cols.get(k).ok_or_else(|| Error::format(path, line, format!("missing column {what}")))?;
    raw.parse().map_err(|_| Error::format(path, line, format!("cannot parse {what} from {raw:?}")))
}

fn expect_cols(path: &Path, line: usize, cols: &[&str], n: usize) -> Result<()> {
    if cols.len() != n {
        return Err(Error::format(path, line, format!("expected {n} columns, found {}", cols.len())));
    }
    Ok(())
}

pub fn load_bundle(dir: &Path) -> Result<(Bundle, LoadReport)> {
    let mut report = LoadReport::default();

    let p = dir.join(NODE_TYPES);
    let mut types = BTreeMap::new();
    for (line, cols) in rows(&read(&p)?) {
        expect_cols(&p, line, &cols, 3)?;
        let id: u32 = field(&p, line, &cols, 0, "type_id")?;
        let count: usize = field(&p, line, &cols, 2, "count")?;
        if count == 0 {
            return Err(Error::format(&p, line, "node count must be positive"));
        }
        if types.insert(id, NodeType { name: cols[1].to_string(), count }).is_some() {
            return Err(Error::format(&p, line, format!("node type {id} declared twice")));
        }
    }

    let p = dir.join(METAPATHS);
    let spec: MetapathFile = serde_json::from_str(&read(&p)?).map_err(|e| Error::format(&p, e.line(), e.to_string()))?;
    let mut decls = BTreeMap::new();
    for r in &spec.relations {
        for t in [r.src_type, r.dst_type] {
            if !types.contains_key(&t) {
                return Err(Error::format(&p, 0, format!("relation {} uses undeclared node type {t}", r.edge_type)));
            }
        }
        if decls.insert(r.edge_type, r.clone()).is_some() {
            return Err(Error::format(&p, 0, format!("relation {} declared twice", r.edge_type)));
        }
    }

    let p = dir.join(EDGES);
    let mut pairs: BTreeMap<u32, Vec<(usize, usize)>> = decls.keys().map(|&k| (k, Vec::new())).collect();
    for (line, cols) in rows(&read(&p)?) {
        expect_cols(&p, line, &cols, 5)?;
        let et: u32 = field(&p, line, &cols, 0, "edge_type")?;
        let st: u32 = field(&p, line, &cols, 1, "src_type")?;
        let dt: u32 = field(&p, line, &cols, 2, "dst_type")?;
        let si: usize = field(&p, line, &cols, 3, "src_index")?;
        let di: usize = field(&p, line, &cols, 4, "dst_index")?;
        let d = decls.get(&et).ok_or_else(|| Error::format(&p, line, format!("undeclared edge type {et}")))?;
        if (d.src_type, d.dst_type) != (st, dt) {
            return Err(Error::format(
                &p,
                line,
                format!("edge type {et} joins types {} -> {}, line says {st} -> {dt}", d.src_type, d.dst_type),
            ));
        }
        for (idx, t, what) in [(si, st, "src_index"), (di, dt, "dst_index")] {
            let count = types[&t].count;
            if idx >= count {
                return Err(Error::format(&p, line, format!("{what} {idx} out of range for type {t} with {count} nodes")));
            }
        }
        pairs.get_mut(&et).expect("declared").push((si, di));
    }
    let mut relations = Vec::new();
    for (et, mut list) in pairs {
        let before = list.len();
        list.sort_unstable();
        list.dedup();
        report.duplicate_edges += before - list.len();
        report.edges_per_type.insert(et, list.len());
        let d = &decls[&et];
        let matrix = BoolCsr::from_pairs(types[&d.src_type].count, types[&d.dst_type].count, &list)?;
        relations.push(Relation { edge_type: et, src_type: d.src_type, dst_type: d.dst_type, directed: d.directed, matrix });
    }

    let target = types
        .get(&spec.target_type)
        .ok_or_else(|| Error::format(&dir.join(METAPATHS), 0, format!("target type {} is not declared", spec.target_type)))?;
    let n = target.count;

    let p = dir.join(FEATURES);
    let mut data = Vec::new();
    let mut width = None;
    let mut nrows = 0;
    for (line, cols) in rows(&read(&p)?) {
        if *width.get_or_insert(cols.len()) != cols.len() {
            return Err(Error::format(&p, line, format!("ragged row: {} values, expected {}", cols.len(), width.unwrap())));
        }
        for k in 0..cols.len() {
            data.push(field::<f64>(&p, line, &cols, k, "feature")?);
        }
        nrows += 1;
    }
    if nrows != n {
        return Err(Error::format(&p, 0, format!("{nrows} feature rows for {n} target nodes")));
    }
    let features = Matrix::from_vec(n, width.unwrap_or(0), data)?;

    let p = dir.join(LABELS);
    let labels = if p.exists() {
        let mut l = vec![None; n];
        for (line, cols) in rows(&read(&p)?) {
            expect_cols(&p, line, &cols, 2)?;
            let node: usize = field(&p, line, &cols, 0, "node_index")?;
            let class: u32 = field(&p, line, &cols, 1, "class")?;
            if node >= n {
                return Err(Error::format(&p, line, format!("node {node} out of range for {n} target nodes")));
            }
            l[node] = Some(class);
        }
        Some(l)
    } else {
        None
    };

    let graph = HetGraph::new(types, relations, spec.target_type, features, labels)?;
    let mp_path = dir.join(METAPATHS);
    let mut metapaths = Vec::new();
    for m in &spec.metapaths {
        let mp = MetapathSpec {
            id: m.id,
            hops: m.hops.iter().map(|h| Hop { edge_type: h.edge_type, reverse: h.reverse }).collect(),
        };
        mp.validate(&graph).map_err(|e| Error::format(&mp_path, 0, format!("metapath {}: {e}", m.id)))?;
        if metapaths.iter().any(|o: &MetapathSpec| o.id == m.id) {
            return Err(Error::format(&mp_path, 0, format!("metapath id {} used twice", m.id)));
        }
        metapaths.push(mp);
    }
    Ok((Bundle { graph, metapaths }, report))
}

/// Writes the bundle files into `dir` (created if missing). Relations are
/// written in the graph's order, edges sorted within each relation.
pub fn save_bundle(b: &Bundle, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let g = &b.graph;

    let mut s = String::from("# type_id\tname\tcount\n");
    for (id, t) in g.node_types() {
        writeln!(s, "{id}\t{}\t{}", t.name, t.count).unwrap();
    }
    write(&dir.join(NODE_TYPES), &s)?;

    let mut s = String::from("# edge_type\tsrc_type\tdst_type\tsrc_index\tdst_index\n");
    for r in g.relations() {
        for (i, j) in r.matrix.iter() {
            writeln!(s, "{}\t{}\t{}\t{i}\t{j}", r.edge_type, r.src_type, r.dst_type).unwrap();
        }
    }
    write(&dir.join(EDGES), &s)?;

    let mut s = String::new();
    let x = g.features();
    for r in 0..x.rows() {
        let row: Vec<String> = x.row(r).iter().map(|v| format!("{v:.16e}")).collect();
        s.push_str(&row.join("\t"));
        s.push('\n');
    }
    write(&dir.join(FEATURES), &s)?;

    let lp = dir.join(LABELS);
    match g.labels() {
        Some(labels) => {
            let mut s = String::from("# node_index\tclass\n");
            for (i, l) in labels.iter().enumerate() {
                if let Some(c) = l {
                    writeln!(s, "{i}\t{c}").unwrap();
                }
            }
            write(&lp, &s)?;
        }
        None if lp.exists() => fs::remove_file(&lp).map_err(|e| Error::io(&lp, e))?,
        None => {}
    }

    let spec = MetapathFile {
        target_type: g.target_type(),
        relations: g
            .relations()
            .iter()
            .map(|r| RelationDecl { edge_type: r.edge_type, src_type: r.src_type, dst_type: r.dst_type, directed: r.directed })
            .collect(),
        metapaths: b
            .metapaths
            .iter()
            .map(|m| MetapathDecl {
                id: m.id,
                hops: m.hops.iter().map(|h| HopDecl { edge_type: h.edge_type, reverse: h.reverse }).collect(),
            })
            .collect(),
    };
    let mut json = serde_json::to_string_pretty(&spec).expect("plain data");
    json.push('\n');
    write(&dir.join(METAPATHS), &json)
}
