//! Pseudo-label TSV, training history CSV, binary checkpoints and JSON
//! reports.

use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use sesim_core::model::ModelState;
use sesim_core::trainer::{EpochRecord, History};
use sesim_core::{JumpLabel, JumpLabelSet, Matrix};

use crate::error::{Error, Result};

pub const LABEL_HEADER: &str = "i\tj\tmetapath\ty";
pub const CHECKPOINT_MAGIC: &[u8; 6] = b"SESIM1";

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(dir) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Entries sorted by (metapath, i, j).
pub fn labels_to_tsv(set: &JumpLabelSet) -> String {
    let mut entries = set.entries.clone();
    entries.sort_unstable();
    let mut s = format!("{LABEL_HEADER}\n");
    for e in &entries {
        writeln!(s, "{}\t{}\t{}\t{}", e.i, e.j, e.metapath, e.y).unwrap();
    }
    s
}

pub fn write_labels(path: &Path, set: &JumpLabelSet) -> Result<()> {
    write(path, labels_to_tsv(set).as_bytes())
}

/// Reads a label TSV; `j_max` bounds the accepted labels.
pub fn read_labels(path: &Path, j_max: u8) -> Result<JumpLabelSet> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines().enumerate();
    match lines.next() {
        Some((_, h)) if h.trim_end() == LABEL_HEADER => {}
        _ => return Err(Error::format(path, 1, format!("expected header {LABEL_HEADER:?}"))),
    }
    let mut entries = Vec::new();
    for (k, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split('\t').collect();
        if cols.len() != 4 {
            return Err(Error::format(path, k + 1, format!("expected 4 columns, found {}", cols.len())));
        }
        let num = |c: usize, what: &str| -> Result<u64> {
            cols[c].trim().parse().map_err(|_| Error::format(path, k + 1, format!("cannot parse {what} from {:?}", cols[c])))
        };
        let y = num(3, "y")?;
        if y == 0 || y > u64::from(j_max) {
            return Err(Error::format(path, k + 1, format!("label {y} outside 1..={j_max}")));
        }
        entries.push(JumpLabel {
            i: num(0, "i")? as usize,
            j: num(1, "j")? as usize,
            metapath: u32::try_from(num(2, "metapath")?).map_err(|_| Error::format(path, k + 1, "metapath id too large"))?,
            y: y as u8,
        });
    }
    JumpLabelSet::new(entries, j_max).map_err(|e| Error::format(path, 0, e.to_string()))
}

pub fn history_header(metapaths: &[u32]) -> String {
    let mut s = String::from("epoch,loss_pri,loss_pre_total,val_metric");
    for m in metapaths {
        write!(s, ",mean_con_m{m}").unwrap();
    }
    s
}

pub fn history_row(r: &EpochRecord) -> String {
    let mut s = format!("{},{:.17e},{:.17e},{:.17e}", r.epoch, r.loss_pri, r.loss_pre_total, r.val_metric);
    for c in &r.mean_con {
        write!(s, ",{c:.17e}").unwrap();
    }
    s
}

pub fn history_to_csv(h: &History) -> String {
    let mut s = history_header(&h.metapaths);
    s.push('\n');
    for r in &h.records {
        s.push_str(&history_row(r));
        s.push('\n');
    }
    s
}

pub fn write_history(path: &Path, h: &History) -> Result<()> {
    write(path, history_to_csv(h).as_bytes())
}

pub fn read_history(path: &Path) -> Result<History> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    let mut lines = text.lines();
    let header = lines.next().ok_or_else(|| Error::format(path, 1, "empty history file"))?;
    let cols: Vec<&str> = header.split(',').collect();
    if cols.len() < 4 || cols[..4] != ["epoch", "loss_pri", "loss_pre_total", "val_metric"] {
        return Err(Error::format(path, 1, "unexpected history header"));
    }
    let metapaths = cols[4..]
        .iter()
        .map(|c| c.strip_prefix("mean_con_m").and_then(|m| m.parse().ok()))
        .collect::<Option<Vec<u32>>>()
        .ok_or_else(|| Error::format(path, 1, "unexpected history header"))?;
    let mut records = Vec::new();
    for (k, line) in lines.enumerate() {
        let v: Vec<&str> = line.split(',').collect();
        if v.len() != cols.len() {
            return Err(Error::format(path, k + 2, format!("expected {} fields, found {}", cols.len(), v.len())));
        }
        let f = |c: usize| -> Result<f64> {
            v[c].parse().map_err(|_| Error::format(path, k + 2, format!("cannot parse {:?}", v[c])))
        };
        records.push(EpochRecord {
            epoch: v[0].parse().map_err(|_| Error::format(path, k + 2, "cannot parse epoch"))?,
            loss_pri: f(1)?,
            loss_pre_total: f(2)?,
            val_metric: f(3)?,
            mean_con: (4..v.len()).map(f).collect::<Result<_>>()?,
        });
    }
    Ok(History { metapaths, records })
}

/// `SESIM1`, then for every tensor in checkpoint order its row and column
/// counts as little-endian u64 and its values as little-endian f64.
pub fn checkpoint_bytes(state: &ModelState) -> Vec<u8> {
    let mut out = CHECKPOINT_MAGIC.to_vec();
    for m in state.all_tensors() {
        out.extend((m.rows() as u64).to_le_bytes());
        out.extend((m.cols() as u64).to_le_bytes());
        for v in m.as_slice() {
            out.extend(v.to_le_bytes());
        }
    }
    out
}

pub fn write_checkpoint(path: &Path, state: &ModelState) -> Result<()> {
    write(path, &checkpoint_bytes(state))
}

/// Tensors stored in a checkpoint, in file order.
pub fn parse_checkpoint(bytes: &[u8]) -> std::result::Result<Vec<Matrix>, String> {
    let rest = bytes.strip_prefix(CHECKPOINT_MAGIC.as_slice()).ok_or("missing SESIM1 magic")?;
    let mut cur = rest;
    let mut out = Vec::new();
    while !cur.is_empty() {
        let rows = take_u64(&mut cur)? as usize;
        let cols = take_u64(&mut cur)? as usize;
        let len = rows.checked_mul(cols).filter(|l| *l <= cur.len() / 8).ok_or("truncated checkpoint")?;
        let (raw, tail) = cur.split_at(len * 8);
        cur = tail;
        let data = raw.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap())).collect();
        out.push(Matrix::from_vec(rows, cols, data).map_err(|e| e.to_string())?);
    }
    Ok(out)
}

fn take_u64(cur: &mut &[u8]) -> std::result::Result<u64, String> {
    if cur.len() < 8 {
        return Err("truncated checkpoint".into());
    }
    let (head, tail) = cur.split_at(8);
    *cur = tail;
    Ok(u64::from_le_bytes(head.try_into().unwrap()))
}

/// Loads checkpoint tensors into `state`, which fixes the expected shapes.
pub fn read_checkpoint(path: &Path, state: &mut ModelState) -> Result<()> {
    let bytes = fs::read(path).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    let tensors = parse_checkpoint(&bytes).map_err(|e| Error::Artifact(format!("{}: {e}", path.display())))?;
    let mut slots = state.all_tensors_mut();
    if tensors.len() != slots.len() {
        return Err(Error::Artifact(format!(
            "{}: {} tensors, the model needs {}",
            path.display(),
            tensors.len(),
            slots.len()
        )));
    }
    for (k, (slot, t)) in slots.iter_mut().zip(tensors).enumerate() {
        if slot.shape() != t.shape() {
            return Err(Error::Artifact(format!(
                "{}: tensor {k} is {:?}, the model needs {:?}",
                path.display(),
                t.shape(),
                slot.shape()
            )));
        }
        **slot = t;
    }
    Ok(())
}

/// JSON object with values printed to 6 decimals, keys in the given order.
pub fn report_json(fields: &[(&str, f64)]) -> String {
    let body: Vec<String> = fields.iter().map(|(k, v)| format!("  \"{k}\": {v:.6}")).collect();
    format!("{{\n{}\n}}\n", body.join(",\n"))
}

pub fn write_report(path: &Path, fields: &[(&str, f64)]) -> Result<()> {
    write(path, report_json(fields).as_bytes())
}
