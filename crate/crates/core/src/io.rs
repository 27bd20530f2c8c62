//! fvecs/bvecs/ivecs readers and writers, exact ground truth, and `.deti`
//! index persistence. Everything is little-endian.
//!
//! Index file layout:
//!
//! ```text
//! "DETI" | version u32 | seed u64 | d n K L N_r max_size sample_size: u64
//! hash family: L*K*d f64, [space][dim][coord]
//! breakpoints: L*K*(N_r+1) f64, [space][dim][z]
//! per tree: subtree count u64, then per subtree: key u64, node count u64,
//!   nodes in preorder: kind u8 (0 internal, 1 leaf), K x (prefix u8, bits u8),
//!   internal: split_dim u32, child0 u64, child1 u64
//!   leaf: entry count u64, entries of (id u64, K symbol bytes)
//! crc32 of everything above: u32
//! ```

use std::fs;
use std::path::Path;
use std::thread;

use crate::dataset::{distance_unchecked, select_top_k, Dataset, Neighbor, PointId};
use crate::detree::{DeTree, Node, NodeCode, Segment, Subtree};
use crate::encoding::Breakpoints;
use crate::error::{Error, IndexFileError, Result};
use crate::index::{DetIndex, IndexConfig};
use crate::projection::HashFamily;

pub const INDEX_MAGIC: &[u8; 4] = b"DETI";
pub const INDEX_VERSION: u32 = 1;
pub const INDEX_EXTENSION: &str = "deti";

fn format_err(offset: usize, message: impl Into<String>) -> Error {
    Error::Format {
        offset: offset as u64,
        message: message.into(),
    }
}

/// Splits a `*vecs` buffer into records of `elem_size`-byte components.
fn parse_vecs<T>(
    bytes: &[u8],
    elem_size: usize,
    mut convert: impl FnMut(&[u8]) -> T,
) -> Result<(usize, Vec<T>)> {
    if bytes.is_empty() {
        return Err(Error::EmptyResult("vector file contains no records"));
    }
    let mut pos = 0;
    let mut dim: Option<usize> = None;
    let mut out = Vec::new();
    while pos < bytes.len() {
        let header = bytes
            .get(pos..pos + 4)
            .ok_or_else(|| format_err(pos, "truncated dimension header"))?;
        let d = i32::from_le_bytes(header.try_into().unwrap());
        if d <= 0 {
            return Err(format_err(pos, format!("non-positive dimension {d}")));
        }
        let d = d as usize;
        match dim {
            None => dim = Some(d),
            Some(expected) if expected != d => {
                return Err(format_err(
                    pos,
                    format!("dimension {d} differs from first record's {expected}"),
                ));
            }
            _ => {}
        }
        let body = bytes
            .get(pos + 4..pos + 4 + d * elem_size)
            .ok_or_else(|| format_err(pos, format!("truncated record of dimension {d}")))?;
        out.extend(body.chunks_exact(elem_size).map(&mut convert));
        pos += 4 + d * elem_size;
    }
    Ok((dim.expect("at least one record"), out))
}

pub fn decode_fvecs(bytes: &[u8]) -> Result<Dataset> {
    let (dim, data) = parse_vecs(bytes, 4, |b| f32::from_le_bytes(b.try_into().unwrap()))?;
    Dataset::new(dim, data)
}

pub fn decode_bvecs(bytes: &[u8]) -> Result<Dataset> {
    let (dim, data) = parse_vecs(bytes, 1, |b| b[0] as f32)?;
    Dataset::new(dim, data)
}

pub fn decode_ivecs(bytes: &[u8]) -> Result<Vec<Vec<i32>>> {
    let (dim, flat) = parse_vecs(bytes, 4, |b| i32::from_le_bytes(b.try_into().unwrap()))?;
    Ok(flat.chunks_exact(dim).map(<[i32]>::to_vec).collect())
}

pub fn load_fvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_fvecs(&fs::read(path)?)
}

pub fn load_bvecs(path: impl AsRef<Path>) -> Result<Dataset> {
    decode_bvecs(&fs::read(path)?)
}

pub fn load_ivecs(path: impl AsRef<Path>) -> Result<Vec<Vec<i32>>> {
    decode_ivecs(&fs::read(path)?)
}

/// Loads `.fvecs` or `.bvecs` by extension.
pub fn load_vectors(path: impl AsRef<Path>) -> Result<Dataset> {
    let path = path.as_ref();
    match path.extension().and_then(|e| e.to_str()) {
        Some("bvecs") => load_bvecs(path),
        Some("fvecs") => load_fvecs(path),
        other => Err(Error::param(format!(
            "unsupported vector file extension {other:?} (expected fvecs or bvecs)"
        ))),
    }
}

pub fn encode_fvecs(dataset: &Dataset) -> Vec<u8> {
    let d = dataset.dim();
    let mut out = Vec::with_capacity(dataset.len() * (4 + 4 * d));
    for row in dataset.rows() {
        out.extend_from_slice(&(d as i32).to_le_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Narrows every component to a byte; fails if any is not an integer in `0..=255`.
pub fn encode_bvecs(dataset: &Dataset) -> Result<Vec<u8>> {
    let d = dataset.dim();
    let mut out = Vec::with_capacity(dataset.len() * (4 + d));
    for (i, row) in dataset.rows().enumerate() {
        out.extend_from_slice(&(d as i32).to_le_bytes());
        for &v in row {
            if !(0.0..=255.0).contains(&v) || v.fract() != 0.0 {
                return Err(Error::param(format!(
                    "point {i} has component {v} not representable as a byte"
                )));
            }
            out.push(v as u8);
        }
    }
    Ok(out)
}

pub fn encode_ivecs(rows: &[Vec<i32>]) -> Vec<u8> {
    let mut out = Vec::new();
    for row in rows {
        out.extend_from_slice(&(row.len() as i32).to_le_bytes());
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

pub fn write_fvecs(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    Ok(fs::write(path, encode_fvecs(dataset))?)
}

pub fn write_bvecs(path: impl AsRef<Path>, dataset: &Dataset) -> Result<()> {
    Ok(fs::write(path, encode_bvecs(dataset)?)?)
}

pub fn write_ivecs(path: impl AsRef<Path>, rows: &[Vec<i32>]) -> Result<()> {
    Ok(fs::write(path, encode_ivecs(rows))?)
}

/// Exact k nearest neighbors per query: ascending distance, ties by id.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub k: usize,
    pub neighbors: Vec<Vec<Neighbor>>,
}

impl GroundTruth {
    pub fn ids(&self, query: usize) -> Vec<PointId> {
        self.neighbors[query].iter().map(|n| n.id).collect()
    }

    pub fn to_ivecs_rows(&self) -> Vec<Vec<i32>> {
        self.neighbors
            .iter()
            .map(|row| row.iter().map(|n| n.id as i32).collect())
            .collect()
    }

    pub fn write_ivecs(&self, path: impl AsRef<Path>) -> Result<()> {
        write_ivecs(path, &self.to_ivecs_rows())
    }

    /// Rebuilds ground truth from stored ids, recomputing distances.
    pub fn from_ids(rows: &[Vec<i32>], dataset: &Dataset, queries: &Dataset) -> Result<Self> {
        if rows.len() != queries.len() {
            return Err(Error::param(format!(
                "ground truth has {} rows for {} queries",
                rows.len(),
                queries.len()
            )));
        }
        dataset.check_dim(queries.point(0))?;
        let k = rows.first().map_or(0, Vec::len);
        let neighbors = rows
            .iter()
            .enumerate()
            .map(|(qi, row)| {
                row.iter()
                    .map(|&id| {
                        if id < 0 || id as usize >= dataset.len() {
                            return Err(Error::param(format!("ground truth id {id} out of range")));
                        }
                        let d = distance_unchecked(
                            queries.point(qi as PointId),
                            dataset.point(id as PointId),
                        );
                        Ok(Neighbor::new(id as PointId, d))
                    })
                    .collect()
            })
            .collect::<Result<_>>()?;
        Ok(Self { k, neighbors })
    }
}

/// Exhaustive scan; queries are partitioned across `workers` threads.
pub fn compute_ground_truth(
    dataset: &Dataset,
    queries: &Dataset,
    k: usize,
    workers: usize,
) -> Result<GroundTruth> {
    let n = dataset.len();
    if k == 0 || k > n {
        return Err(Error::param(format!("k must lie in 1..={n}, got {k}")));
    }
    dataset.check_dim(queries.point(0))?;
    let scan = |q: &[f32]| {
        let all: Vec<Neighbor> = dataset
            .rows()
            .enumerate()
            .map(|(id, p)| Neighbor::new(id as PointId, distance_unchecked(q, p)))
            .collect();
        select_top_k(all, k)
    };
    let workers = workers.max(1);
    let chunk = queries.len().div_ceil(workers);
    let neighbors = thread::scope(|scope| {
        let handles: Vec<_> = (0..queries.len())
            .step_by(chunk)
            .map(|start| {
                let end = (start + chunk).min(queries.len());
                let scan = &scan;
                scope.spawn(move || {
                    (start..end)
                        .map(|qi| scan(queries.point(qi as PointId)))
                        .collect::<Vec<_>>()
                })
            })
            .collect();
        handles
            .into_iter()
            .flat_map(|h| h.join().expect("ground truth worker panicked"))
            .collect()
    });
    Ok(GroundTruth { k, neighbors })
}

struct Writer {
    buf: Vec<u8>,
}

impl Writer {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64s(&mut self, vs: &[f64]) {
        for v in vs {
            self.buf.extend_from_slice(&v.to_le_bytes());
        }
    }
}

pub fn encode_index(index: &DetIndex) -> Vec<u8> {
    let cfg = &index.config;
    let mut w = Writer { buf: Vec::new() };
    w.buf.extend_from_slice(INDEX_MAGIC);
    w.u32(INDEX_VERSION);
    w.u64(cfg.seed);
    for v in [
        index.dataset.dim(),
        index.len(),
        cfg.proj_dim,
        cfg.spaces,
        cfg.regions,
        cfg.max_leaf,
        cfg.sample_size.unwrap_or(0),
    ] {
        w.u64(v as u64);
    }
    w.f64s(index.family.raw());
    w.f64s(index.breakpoints.raw());
    for tree in &index.trees {
        w.u64(tree.subtrees.len() as u64);
        for sub in &tree.subtrees {
            w.u64(sub.key);
            w.u64(sub.nodes.len() as u64);
            for node in &sub.nodes {
                let code = node.code();
                match node {
                    Node::Internal { .. } => w.u8(0),
                    Node::Leaf { .. } => w.u8(1),
                }
                for seg in &code.0 {
                    w.u8(seg.prefix);
                    w.u8(seg.bits);
                }
                match node {
                    Node::Internal {
                        split_dim,
                        children,
                        ..
                    } => {
                        w.u32(*split_dim);
                        w.u64(children[0] as u64);
                        w.u64(children[1] as u64);
                    }
                    Node::Leaf { ids, symbols, .. } => {
                        w.u64(ids.len() as u64);
                        for (&id, sym) in ids.iter().zip(symbols.chunks_exact(cfg.proj_dim)) {
                            w.u64(id as u64);
                            w.buf.extend_from_slice(sym);
                        }
                    }
                }
            }
        }
    }
    let crc = crc32fast::hash(&w.buf);
    w.u32(crc);
    w.buf
}

pub fn save_index(index: &DetIndex, path: impl AsRef<Path>) -> Result<()> {
    Ok(fs::write(path, encode_index(index))?)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, len: usize, field: &'static str) -> Result<&'a [u8], IndexFileError> {
        let end = self.pos.checked_add(len).filter(|&e| e <= self.buf.len());
        match end {
            Some(end) => {
                let s = &self.buf[self.pos..end];
                self.pos = end;
                Ok(s)
            }
            None => Err(IndexFileError::Truncated {
                field,
                offset: self.pos as u64,
            }),
        }
    }
    fn u8(&mut self, field: &'static str) -> Result<u8, IndexFileError> {
        Ok(self.take(1, field)?[0])
    }
    fn u32(&mut self, field: &'static str) -> Result<u32, IndexFileError> {
        Ok(u32::from_le_bytes(self.take(4, field)?.try_into().unwrap()))
    }
    fn u64(&mut self, field: &'static str) -> Result<u64, IndexFileError> {
        Ok(u64::from_le_bytes(self.take(8, field)?.try_into().unwrap()))
    }
    fn usize(&mut self, field: &'static str, max: u64) -> Result<usize, IndexFileError> {
        let v = self.u64(field)?;
        if v > max {
            return Err(IndexFileError::InvalidField {
                field,
                message: format!("{v} exceeds {max}"),
            });
        }
        Ok(v as usize)
    }
    fn f64s(&mut self, count: usize, field: &'static str) -> Result<Vec<f64>, IndexFileError> {
        let bytes = self.take(
            count.checked_mul(8).ok_or(IndexFileError::InvalidField {
                field,
                message: "length overflow".into(),
            })?,
            field,
        )?;
        Ok(bytes
            .chunks_exact(8)
            .map(|b| f64::from_le_bytes(b.try_into().unwrap()))
            .collect())
    }
}

fn invalid(field: &'static str, message: impl Into<String>) -> IndexFileError {
    IndexFileError::InvalidField {
        field,
        message: message.into(),
    }
}

/// Parses an index produced by [`encode_index`] and attaches `dataset`,
/// which must be the dataset the index was built from.
pub fn decode_index(bytes: &[u8], dataset: Dataset) -> Result<DetIndex> {
    if bytes.len() < 8 || &bytes[..4] != INDEX_MAGIC {
        return Err(IndexFileError::BadMagic.into());
    }
    let version = u32::from_le_bytes(bytes[4..8].try_into().unwrap());
    if version != INDEX_VERSION {
        return Err(IndexFileError::UnsupportedVersion {
            found: version,
            expected: INDEX_VERSION,
        }
        .into());
    }
    if bytes.len() < 12 {
        return Err(IndexFileError::Truncated {
            field: "checksum",
            offset: bytes.len() as u64,
        }
        .into());
    }
    let (body, trailer) = bytes.split_at(bytes.len() - 4);
    let stored = u32::from_le_bytes(trailer.try_into().unwrap());
    let computed = crc32fast::hash(body);
    if stored != computed {
        return Err(IndexFileError::Checksum { stored, computed }.into());
    }

    let mut r = Reader { buf: body, pos: 8 };
    let seed = r.u64("seed")?;
    let dim = r.usize("d", u32::MAX as u64)?;
    let n = r.usize("n", u32::MAX as u64)?;
    let proj_dim = r.usize("K", 64)?;
    let spaces = r.usize("L", u16::MAX as u64)?;
    let regions = r.usize("N_r", 256)?;
    let max_leaf = r.usize("max_size", u32::MAX as u64)?;
    let sample_size = r.usize("sample_size", u32::MAX as u64)?;
    if dim != dataset.dim() {
        return Err(IndexFileError::DatasetMismatch {
            field: "d",
            index: dim as u64,
            dataset: dataset.dim() as u64,
        }
        .into());
    }
    if n != dataset.len() {
        return Err(IndexFileError::DatasetMismatch {
            field: "n",
            index: n as u64,
            dataset: dataset.len() as u64,
        }
        .into());
    }
    if proj_dim == 0 || spaces == 0 || max_leaf == 0 {
        return Err(invalid("header", "K, L and max_size must be positive").into());
    }
    let config = IndexConfig {
        proj_dim,
        spaces,
        regions,
        max_leaf,
        seed,
        sample_size: (sample_size > 0).then_some(sample_size),
    };

    let family_raw = r.f64s(spaces * proj_dim * dim, "hash family")?;
    let family = HashFamily::from_raw(dim, proj_dim, spaces, seed, family_raw)
        .map_err(|e| invalid("hash family", e.to_string()))?;
    let bps_raw = r.f64s(spaces * proj_dim * (regions + 1), "breakpoints")?;
    let breakpoints = Breakpoints::from_raw(spaces, proj_dim, regions, bps_raw)
        .map_err(|e| invalid("N_r", e.to_string()))?;
    let symbol_bits = breakpoints.symbol_bits();

    let mut trees = Vec::with_capacity(spaces);
    for space in 0..spaces {
        let count = r.usize("subtree count", 1 << proj_dim.min(40))?;
        let mut subtrees = Vec::with_capacity(count.min(n));
        for _ in 0..count {
            let key = r.u64("subtree key")?;
            let node_count = r.usize("node count", 4 * n as u64 + 1)?;
            let mut nodes = Vec::with_capacity(node_count);
            for _ in 0..node_count {
                let kind = r.u8("node kind")?;
                let code = NodeCode(
                    (0..proj_dim)
                        .map(|_| {
                            let prefix = r.u8("node code")?;
                            let bits = r.u8("node code")?;
                            if bits == 0 || bits > symbol_bits || (bits < 8 && prefix >> bits != 0)
                            {
                                return Err(invalid(
                                    "node code",
                                    format!("prefix {prefix} with {bits} bits"),
                                ));
                            }
                            Ok(Segment { prefix, bits })
                        })
                        .collect::<Result<_, IndexFileError>>()?,
                );
                nodes.push(match kind {
                    0 => {
                        let split_dim = r.u32("split_dim")?;
                        let a = r.usize("child offset", node_count as u64 - 1)?;
                        let b = r.usize("child offset", node_count as u64 - 1)?;
                        if split_dim as usize >= proj_dim {
                            return Err(invalid("split_dim", format!("{split_dim} >= K")).into());
                        }
                        Node::Internal {
                            code,
                            split_dim,
                            children: [a as u32, b as u32],
                        }
                    }
                    1 => {
                        let entries = r.usize("leaf entry count", n as u64)?;
                        let mut ids = Vec::with_capacity(entries);
                        let mut symbols = Vec::with_capacity(entries * proj_dim);
                        for _ in 0..entries {
                            let id = r.usize("leaf entry id", n as u64 - 1)?;
                            ids.push(id as PointId);
                            symbols.extend_from_slice(r.take(proj_dim, "leaf entry symbols")?);
                        }
                        Node::Leaf { code, ids, symbols }
                    }
                    other => {
                        return Err(invalid("node kind", format!("unknown kind {other}")).into())
                    }
                });
            }
            if nodes.is_empty() {
                return Err(invalid("node count", "subtree without nodes").into());
            }
            subtrees.push(Subtree { key, nodes });
        }
        if !subtrees.windows(2).all(|w| w[0].key < w[1].key) {
            return Err(invalid("subtree key", "keys not strictly ascending").into());
        }
        trees.push(DeTree::from_subtrees(
            space,
            proj_dim,
            symbol_bits,
            max_leaf,
            subtrees,
        ));
    }
    if r.pos != body.len() {
        return Err(invalid(
            "trailer",
            format!("{} unexpected bytes before checksum", body.len() - r.pos),
        )
        .into());
    }
    DetIndex::from_parts(config, family, breakpoints, trees, dataset)
}

pub fn load_index(path: impl AsRef<Path>, dataset: Dataset) -> Result<DetIndex> {
    decode_index(&fs::read(path)?, dataset)
}
