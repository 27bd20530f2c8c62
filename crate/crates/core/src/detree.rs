//! The dynamic encoding tree (DE-Tree).
//!
//! One tree per projected space. The root has up to `2^K` first-layer
//! children, one per combination of leading symbol bits; each first-layer node
//! roots an independent binary subtree whose internal nodes refine one
//! dimension's symbol prefix by one bit. Leaves hold `(symbols, id)` entries.

use std::collections::BTreeMap;

use crate::dataset::PointId;
use crate::encoding::{Breakpoints, Encoded};
use crate::projection::{projected_distance, Projections};

pub const DEFAULT_MAX_LEAF: usize = 128;

/// One dimension's iSAX prefix: the leading `bits` bits of the symbol.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct Segment {
    pub prefix: u8,
    pub bits: u8,
}

/// Per-dimension prefixes identifying a node's box in projected space.
#[derive(Debug, Clone, PartialEq, Eq, Hash)]
pub struct NodeCode(pub Vec<Segment>);

impl NodeCode {
    /// Code of the first-layer node holding `symbols`.
    pub fn first_layer(symbols: &[u8], symbol_bits: u8) -> Self {
        NodeCode(
            symbols
                .iter()
                .map(|&s| Segment {
                    prefix: s >> (symbol_bits - 1),
                    bits: 1,
                })
                .collect(),
        )
    }

    /// Breakpoint indices (0-based) bounding dimension `j`.
    #[inline]
    pub fn region_span(&self, j: usize, symbol_bits: u8) -> (usize, usize) {
        let seg = self.0[j];
        let width = 1usize << (symbol_bits - seg.bits);
        (
            seg.prefix as usize * width,
            (seg.prefix as usize + 1) * width,
        )
    }

    pub fn contains(&self, symbols: &[u8], symbol_bits: u8) -> bool {
        self.0
            .iter()
            .zip(symbols)
            .all(|(seg, &s)| s >> (symbol_bits - seg.bits) == seg.prefix)
    }

    fn child(&self, dim: usize, bit: u8) -> Self {
        let mut code = self.clone();
        let seg = &mut code.0[dim];
        seg.prefix = (seg.prefix << 1) | bit;
        seg.bits += 1;
        code
    }
}

/// Lower and upper bound distances from `query` to every point inside `code`'s box.
///
/// Per dimension with interval `[lo, hi]` and query coordinate `x`, the lower
/// contribution is `0` inside the interval and the distance to the nearer edge
/// outside; the upper contribution is the distance to the farther edge.
pub fn node_bounds(
    code: &NodeCode,
    query: &[f32],
    breakpoints: &Breakpoints,
    space: usize,
) -> (f64, f64) {
    let bits = breakpoints.symbol_bits();
    let mut lower = 0.0;
    let mut upper = 0.0;
    for (j, &x) in query.iter().enumerate() {
        let (a, b) = code.region_span(j, bits);
        let bps = breakpoints.get(space, j);
        let (lo, hi) = (bps[a], bps[b]);
        let x = x as f64;
        let to_lo = (x - lo).abs();
        let to_hi = (x - hi).abs();
        if x < lo || x > hi {
            let d = to_lo.min(to_hi);
            lower += d * d;
        }
        let d = to_lo.max(to_hi);
        upper += d * d;
    }
    (lower.sqrt(), upper.sqrt())
}

#[derive(Debug, Clone, PartialEq)]
pub enum Node {
    Internal {
        code: NodeCode,
        split_dim: u32,
        children: [u32; 2],
    },
    Leaf {
        code: NodeCode,
        ids: Vec<PointId>,
        /// `K` symbols per entry, parallel to `ids`.
        symbols: Vec<u8>,
    },
}

impl Node {
    pub fn code(&self) -> &NodeCode {
        match self {
            Node::Internal { code, .. } | Node::Leaf { code, .. } => code,
        }
    }
}

/// Outcome of trying to split a leaf.
#[derive(Debug, Clone, PartialEq, Eq)]
pub enum Split {
    Dim(usize),
    /// Every dimension's prefix already uses all symbol bits.
    Unsplittable,
}

/// Picks the dimension whose next bit divides the entries most evenly,
/// lowest index on ties.
pub fn choose_split(code: &NodeCode, symbols: &[u8], proj_dim: usize, symbol_bits: u8) -> Split {
    let count = symbols.len() / proj_dim.max(1);
    let mut best: Option<(usize, usize)> = None;
    for (j, seg) in code.0.iter().enumerate() {
        if seg.bits >= symbol_bits {
            continue;
        }
        let shift = symbol_bits - seg.bits - 1;
        let ones = symbols
            .chunks_exact(proj_dim)
            .filter(|s| (s[j] >> shift) & 1 == 1)
            .count();
        let imbalance = count.abs_diff(2 * ones);
        if best.is_none_or(|(_, b)| imbalance < b) {
            best = Some((j, imbalance));
        }
    }
    match best {
        Some((j, _)) => Split::Dim(j),
        None => Split::Unsplittable,
    }
}

/// Position of a leaf: subtree index within its tree and node index within the subtree.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub struct LeafRef {
    pub subtree: u32,
    pub node: u32,
}

/// A leaf reached by a relaxed range query with its lower bound distance.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LeafHit {
    pub leaf: LeafRef,
    pub lower: f64,
}

impl LeafHit {
    pub(crate) fn cmp_order(&self, other: &Self) -> std::cmp::Ordering {
        self.lower
            .total_cmp(&other.lower)
            .then(self.leaf.cmp(&other.leaf))
    }
}

/// A first-layer node and its binary subtree, stored as a preorder arena.
#[derive(Debug, Clone, PartialEq)]
pub struct Subtree {
    pub key: u64,
    pub nodes: Vec<Node>,
}

impl Subtree {
    /// Inserts entries in the given order, splitting full leaves on the way.
    pub fn build<'a, I>(
        key: u64,
        entries: I,
        proj_dim: usize,
        symbol_bits: u8,
        max_size: usize,
    ) -> Self
    where
        I: IntoIterator<Item = (PointId, &'a [u8])>,
    {
        let mut entries = entries.into_iter().peekable();
        let code = match entries.peek() {
            Some((_, s)) => NodeCode::first_layer(s, symbol_bits),
            None => NodeCode(vec![Segment { prefix: 0, bits: 1 }; proj_dim]),
        };
        let mut nodes = vec![Node::Leaf {
            code,
            ids: Vec::new(),
            symbols: Vec::new(),
        }];
        for (id, sym) in entries {
            let mut target = descend(&nodes, 0, sym, symbol_bits);
            while leaf_len(&nodes[target]) >= max_size {
                if !split_leaf(&mut nodes, target, proj_dim, symbol_bits) {
                    break;
                }
                target = descend(&nodes, target, sym, symbol_bits);
            }
            if let Node::Leaf { ids, symbols, .. } = &mut nodes[target] {
                ids.push(id);
                symbols.extend_from_slice(sym);
            }
        }
        let mut tree = Subtree { key, nodes };
        tree.renumber_preorder();
        tree
    }

    fn renumber_preorder(&mut self) {
        let mut order = Vec::with_capacity(self.nodes.len());
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            order.push(i);
            if let Node::Internal { children, .. } = &self.nodes[i as usize] {
                stack.push(children[1]);
                stack.push(children[0]);
            }
        }
        let mut new_index = vec![0u32; self.nodes.len()];
        for (new, &old) in order.iter().enumerate() {
            new_index[old as usize] = new as u32;
        }
        let mut old_nodes: Vec<Option<Node>> = std::mem::take(&mut self.nodes)
            .into_iter()
            .map(Some)
            .collect();
        self.nodes = order
            .iter()
            .map(|&old| {
                let mut node = old_nodes[old as usize].take().expect("node visited once");
                if let Node::Internal { children, .. } = &mut node {
                    *children = [
                        new_index[children[0] as usize],
                        new_index[children[1] as usize],
                    ];
                }
                node
            })
            .collect();
    }

    pub fn len(&self) -> usize {
        self.nodes
            .iter()
            .map(|n| match n {
                Node::Leaf { ids, .. } => ids.len(),
                Node::Internal { .. } => 0,
            })
            .sum()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

fn leaf_len(node: &Node) -> usize {
    match node {
        Node::Leaf { ids, .. } => ids.len(),
        Node::Internal { .. } => 0,
    }
}

fn descend(nodes: &[Node], mut at: usize, symbols: &[u8], symbol_bits: u8) -> usize {
    while let Node::Internal {
        code,
        split_dim,
        children,
    } = &nodes[at]
    {
        let j = *split_dim as usize;
        // the parent holds `bits` bits of dim j; the child decides on the next one
        let shift = symbol_bits - code.0[j].bits - 1;
        at = children[((symbols[j] >> shift) & 1) as usize] as usize;
    }
    at
}

fn split_leaf(nodes: &mut Vec<Node>, at: usize, proj_dim: usize, symbol_bits: u8) -> bool {
    let Node::Leaf { code, ids, symbols } = &nodes[at] else {
        return false;
    };
    let dim = match choose_split(code, symbols, proj_dim, symbol_bits) {
        Split::Dim(j) => j,
        Split::Unsplittable => return false,
    };
    let shift = symbol_bits - code.0[dim].bits - 1;
    let mut halves: [(Vec<PointId>, Vec<u8>); 2] = Default::default();
    for (&id, sym) in ids.iter().zip(symbols.chunks_exact(proj_dim)) {
        let half = &mut halves[((sym[dim] >> shift) & 1) as usize];
        half.0.push(id);
        half.1.extend_from_slice(sym);
    }
    let code = code.clone();
    let base = nodes.len() as u32;
    let [(ids0, sym0), (ids1, sym1)] = halves;
    nodes.push(Node::Leaf {
        code: code.child(dim, 0),
        ids: ids0,
        symbols: sym0,
    });
    nodes.push(Node::Leaf {
        code: code.child(dim, 1),
        ids: ids1,
        symbols: sym1,
    });
    nodes[at] = Node::Internal {
        code,
        split_dim: dim as u32,
        children: [base, base + 1],
    };
    true
}

/// Index of the first-layer node for `symbols`: leading bits, dimension 0 most significant.
pub fn first_layer_key(symbols: &[u8], symbol_bits: u8) -> u64 {
    symbols
        .iter()
        .fold(0u64, |acc, &s| (acc << 1) | (s >> (symbol_bits - 1)) as u64)
}

/// A DE-Tree over one projected space. Only occupied first-layer nodes are stored.
#[derive(Debug, Clone, PartialEq)]
pub struct DeTree {
    pub(crate) space: usize,
    pub(crate) proj_dim: usize,
    pub(crate) symbol_bits: u8,
    pub(crate) max_size: usize,
    /// Sorted by key.
    pub(crate) subtrees: Vec<Subtree>,
}

/// Groups the ids of `space` by first-layer key, ascending id within each group.
pub(crate) fn group_by_first_layer(
    encoded: &Encoded,
    space: usize,
    symbol_bits: u8,
) -> BTreeMap<u64, Vec<PointId>> {
    let mut groups: BTreeMap<u64, Vec<PointId>> = BTreeMap::new();
    for id in 0..encoded.len() as PointId {
        let key = first_layer_key(encoded.symbols(space, id), symbol_bits);
        groups.entry(key).or_default().push(id);
    }
    groups
}

impl DeTree {
    /// Builds the tree for `space`, inserting points in ascending id order.
    pub fn build(encoded: &Encoded, space: usize, symbol_bits: u8, max_size: usize) -> Self {
        let k = encoded.proj_dim();
        let subtrees = group_by_first_layer(encoded, space, symbol_bits)
            .into_iter()
            .map(|(key, ids)| {
                Subtree::build(
                    key,
                    ids.iter().map(|&id| (id, encoded.symbols(space, id))),
                    k,
                    symbol_bits,
                    max_size,
                )
            })
            .collect();
        Self::from_subtrees(space, k, symbol_bits, max_size, subtrees)
    }

    pub(crate) fn from_subtrees(
        space: usize,
        proj_dim: usize,
        symbol_bits: u8,
        max_size: usize,
        subtrees: Vec<Subtree>,
    ) -> Self {
        debug_assert!(subtrees.windows(2).all(|w| w[0].key < w[1].key));
        Self {
            space,
            proj_dim,
            symbol_bits,
            max_size: max_size.max(1),
            subtrees,
        }
    }

    pub fn space(&self) -> usize {
        self.space
    }

    pub fn max_size(&self) -> usize {
        self.max_size
    }

    pub fn subtrees(&self) -> &[Subtree] {
        &self.subtrees
    }

    pub fn len(&self) -> usize {
        self.subtrees.iter().map(Subtree::len).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.subtrees.is_empty()
    }

    pub fn leaf_ids(&self, leaf: LeafRef) -> &[PointId] {
        match &self.subtrees[leaf.subtree as usize].nodes[leaf.node as usize] {
            Node::Leaf { ids, .. } => ids,
            Node::Internal { .. } => &[],
        }
    }

    /// All ids whose projected distance to `query` is at most `radius`.
    pub fn range_query(
        &self,
        query: &[f32],
        radius: f64,
        breakpoints: &Breakpoints,
        projections: &Projections,
    ) -> Vec<PointId> {
        let mut out = Vec::new();
        let mut stack = Vec::new();
        for sub in &self.subtrees {
            stack.push(0u32);
            while let Some(i) = stack.pop() {
                let node = &sub.nodes[i as usize];
                let (lower, upper) = node_bounds(node.code(), query, breakpoints, self.space);
                if lower > radius {
                    continue;
                }
                match node {
                    Node::Internal { children, .. } => {
                        stack.push(children[1]);
                        stack.push(children[0]);
                    }
                    Node::Leaf { ids, .. } if upper <= radius => out.extend_from_slice(ids),
                    Node::Leaf { ids, .. } => out.extend(ids.iter().copied().filter(|&id| {
                        projected_distance(query, projections.point(self.space, id)) <= radius
                    })),
                }
            }
        }
        out
    }

    /// Appends every leaf of subtree `index` whose lower bound is at most `radius`.
    pub(crate) fn collect_leaves(
        &self,
        index: usize,
        query: &[f32],
        radius: f64,
        breakpoints: &Breakpoints,
        out: &mut Vec<LeafHit>,
    ) {
        let sub = &self.subtrees[index];
        let mut stack = vec![0u32];
        while let Some(i) = stack.pop() {
            let node = &sub.nodes[i as usize];
            let (lower, _) = node_bounds(node.code(), query, breakpoints, self.space);
            if lower > radius {
                continue;
            }
            match node {
                Node::Internal { children, .. } => {
                    stack.push(children[1]);
                    stack.push(children[0]);
                }
                Node::Leaf { ids, .. } if !ids.is_empty() => out.push(LeafHit {
                    leaf: LeafRef {
                        subtree: index as u32,
                        node: i,
                    },
                    lower,
                }),
                Node::Leaf { .. } => {}
            }
        }
    }

    /// Leaves whose lower bound is at most `radius`, ordered by `(lower bound, leaf)`.
    ///
    /// Every entry of a returned leaf counts as a candidate, so the ids form a
    /// superset of [`DeTree::range_query`].
    pub fn range_query_relaxed(
        &self,
        query: &[f32],
        radius: f64,
        breakpoints: &Breakpoints,
    ) -> Vec<LeafHit> {
        let mut hits = Vec::new();
        for index in 0..self.subtrees.len() {
            self.collect_leaves(index, query, radius, breakpoints, &mut hits);
        }
        hits.sort_by(LeafHit::cmp_order);
        hits
    }

    /// Checks the structural invariants against the encoded points, returning
    /// a description of the first violation.
    pub fn audit(&self, encoded: &Encoded) -> Result<(), String> {
        let n = encoded.len();
        let mut seen = vec![false; n];
        let mut prev_key = None;
        for sub in &self.subtrees {
            if prev_key.is_some_and(|p| p >= sub.key) {
                return Err(format!("subtree keys out of order at {}", sub.key));
            }
            prev_key = Some(sub.key);
            if sub.nodes[0].code().0.iter().any(|s| s.bits != 1) {
                return Err(format!(
                    "first-layer node {} has a multi-bit prefix",
                    sub.key
                ));
            }
            for (i, node) in sub.nodes.iter().enumerate() {
                match node {
                    Node::Internal {
                        code,
                        split_dim,
                        children,
                    } => {
                        for (bit, &c) in children.iter().enumerate() {
                            let child = sub.nodes.get(c as usize).ok_or("dangling child")?;
                            if *child.code() != code.child(*split_dim as usize, bit as u8) {
                                return Err(format!(
                                    "node {i} child {bit} has an inconsistent code"
                                ));
                            }
                        }
                    }
                    Node::Leaf { code, ids, symbols } => {
                        if symbols.len() != ids.len() * self.proj_dim {
                            return Err(format!("leaf {i} has mismatched symbol storage"));
                        }
                        for (&id, sym) in ids.iter().zip(symbols.chunks_exact(self.proj_dim)) {
                            let idx = id as usize;
                            if idx >= n || seen[idx] {
                                return Err(format!("id {id} missing range or stored twice"));
                            }
                            seen[idx] = true;
                            if sym != encoded.symbols(self.space, id) {
                                return Err(format!("id {id} stored with stale symbols"));
                            }
                            if !code.contains(sym, self.symbol_bits) {
                                return Err(format!("id {id} lies outside leaf {i}"));
                            }
                            if first_layer_key(sym, self.symbol_bits) != sub.key {
                                return Err(format!(
                                    "id {id} filed under the wrong first-layer node"
                                ));
                            }
                        }
                        if ids.len() >= self.max_size
                            && code.0.iter().any(|s| s.bits < self.symbol_bits)
                            && choose_split(code, symbols, self.proj_dim, self.symbol_bits)
                                != Split::Unsplittable
                        {
                            return Err(format!(
                                "leaf {i} holds {} entries but is splittable",
                                ids.len()
                            ));
                        }
                    }
                }
            }
        }
        if let Some(missing) = seen.iter().position(|s| !s) {
            return Err(format!("id {missing} not stored"));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::encoding::{encode_dataset, sample_for_breakpoints};
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha20Rng;

    fn random_setup(n: usize, k: usize, seed: u64) -> (Projections, Breakpoints, Encoded) {
        let mut rng = ChaCha20Rng::seed_from_u64(seed);
        let data: Vec<f32> = (0..n * k).map(|_| rng.gen_range(-3.0..3.0)).collect();
        let proj = Projections::from_raw(n, k, 1, data).unwrap();
        let ids = sample_for_breakpoints(n, n, 0).unwrap();
        let (bps, enc) = encode_dataset(&proj, 256, &ids).unwrap();
        (proj, bps, enc)
    }

    fn linear_scan(proj: &Projections, q: &[f32], r: f64) -> Vec<PointId> {
        (0..proj.len() as PointId)
            .filter(|&id| projected_distance(q, proj.point(0, id)) <= r)
            .collect()
    }

    #[test]
    fn bounds_worked_example() {
        // node box [1,2] x [5,6], query (0,7)
        let bps = Breakpoints::from_raw(1, 2, 2, vec![1.0, 1.5, 2.0, 5.0, 5.5, 6.0]).unwrap();
        let code = NodeCode(vec![Segment { prefix: 0, bits: 0 }; 2]);
        let (lo, hi) = node_bounds(&code, &[0.0, 7.0], &bps, 0);
        assert!((lo - 2f64.sqrt()).abs() < 1e-12);
        assert!((hi - 8f64.sqrt()).abs() < 1e-12);
        let (lo, _) = node_bounds(&code, &[1.5, 5.2], &bps, 0);
        assert_eq!(lo, 0.0);
    }

    #[test]
    fn bounds_point_sized_box() {
        let bps = Breakpoints::from_raw(1, 2, 2, vec![1.0, 1.0, 1.0, 4.0, 4.0, 4.0]).unwrap();
        let code = NodeCode(vec![Segment { prefix: 0, bits: 1 }; 2]);
        let (lo, hi) = node_bounds(&code, &[4.0, 0.0], &bps, 0);
        assert_eq!(lo, 5.0);
        assert_eq!(hi, 5.0);
    }

    #[test]
    fn split_prefers_even_dimension() {
        // symbol bits = 2; dim 1 splits 2/2, dims 0 and 2 split 4/0
        let code = NodeCode(vec![Segment { prefix: 0, bits: 1 }; 3]);
        let syms = [0u8, 0, 0, 0, 1, 0, 0, 0, 0, 0, 1, 0];
        assert_eq!(choose_split(&code, &syms, 3, 2), Split::Dim(1));
    }

    #[test]
    fn split_tie_takes_lowest_dimension() {
        let code = NodeCode(vec![Segment { prefix: 0, bits: 1 }; 3]);
        // dims 0 and 2 both split 1/1, dim 1 is 2/0
        let syms = [0u8, 0, 0, 1, 0, 1];
        assert_eq!(choose_split(&code, &syms, 3, 2), Split::Dim(0));
        let code = NodeCode(vec![
            Segment { prefix: 0, bits: 2 },
            Segment { prefix: 0, bits: 1 },
            Segment { prefix: 0, bits: 1 },
        ]);
        let syms = [0u8, 0, 0, 0, 0, 1];
        assert_eq!(choose_split(&code, &syms, 3, 2), Split::Dim(2));
    }

    #[test]
    fn identical_codes_are_unsplittable() {
        let code = NodeCode(vec![Segment { prefix: 3, bits: 2 }; 2]);
        assert_eq!(
            choose_split(&code, &[3, 3, 3, 3], 2, 2),
            Split::Unsplittable
        );
        // oversized leaves of duplicates stay intact
        let sym = [200u8, 17];
        let sub = Subtree::build(0, (0..50).map(|id| (id, &sym[..])), 2, 8, 4);
        let leaves: Vec<_> = sub
            .nodes
            .iter()
            .filter(|n| matches!(n, Node::Leaf { .. }))
            .collect();
        assert!(leaves.iter().any(|n| leaf_len(n) == 50));
    }

    #[test]
    fn single_point_tree() {
        let (_, _, enc) = random_setup(1, 4, 1);
        let t = DeTree::build(&enc, 0, 8, 128);
        assert_eq!(t.subtrees.len(), 1);
        assert_eq!(t.subtrees[0].nodes.len(), 1);
        t.audit(&enc).unwrap();
    }

    #[test]
    fn no_splits_when_leaves_never_fill() {
        let (_, _, enc) = random_setup(500, 3, 2);
        let t = DeTree::build(&enc, 0, 8, 501);
        assert!(t.subtrees.iter().all(|s| s.nodes.len() == 1));
        assert!(t.subtrees.len() <= 8);
        t.audit(&enc).unwrap();
    }

    #[test]
    fn structural_audit_10k() {
        let (_, _, enc) = random_setup(10_000, 8, 3);
        let t = DeTree::build(&enc, 0, 8, 128);
        t.audit(&enc).unwrap();
        assert_eq!(t.len(), 10_000);
        for sub in &t.subtrees {
            for node in &sub.nodes {
                if let Node::Leaf { code, .. } = node {
                    assert!(leaf_len(node) < 128 || code.0.iter().all(|s| s.bits == 8));
                }
            }
        }
        assert_eq!(DeTree::build(&enc, 0, 8, 128), t);
    }

    #[test]
    fn non_root_internal_nodes_are_binary_and_preordered() {
        let (_, _, enc) = random_setup(3000, 4, 4);
        let t = DeTree::build(&enc, 0, 8, 16);
        for sub in &t.subtrees {
            for (i, node) in sub.nodes.iter().enumerate() {
                if let Node::Internal { children, .. } = node {
                    assert_eq!(children[0] as usize, i + 1);
                    assert!(children[1] > children[0]);
                }
            }
        }
    }

    #[test]
    fn range_query_self_at_zero_radius() {
        let (proj, bps, enc) = random_setup(1000, 4, 5);
        let t = DeTree::build(&enc, 0, 8, 32);
        let q = proj.point(0, 123).to_vec();
        let got = t.range_query(&q, 0.0, &bps, &proj);
        assert_eq!(got, vec![123]);
    }

    #[test]
    fn range_query_huge_radius_returns_everything() {
        let (proj, bps, enc) = random_setup(1000, 4, 6);
        let t = DeTree::build(&enc, 0, 8, 32);
        let mut got = t.range_query(&[0.0; 4], 1e9, &bps, &proj);
        got.sort_unstable();
        assert_eq!(got, (0..1000).collect::<Vec<_>>());
    }

    #[test]
    fn range_query_matches_linear_scan() {
        let (proj, bps, enc) = random_setup(1000, 4, 7);
        let t = DeTree::build(&enc, 0, 8, 24);
        let mut rng = ChaCha20Rng::seed_from_u64(70);
        for _ in 0..200 {
            let q: Vec<f32> = (0..4).map(|_| rng.gen_range(-4.0..4.0)).collect();
            let r = rng.gen_range(0.0..4.0);
            let mut got = t.range_query(&q, r, &bps, &proj);
            got.sort_unstable();
            assert_eq!(got, linear_scan(&proj, &q, r));

            let hits = t.range_query_relaxed(&q, r, &bps);
            assert!(hits.windows(2).all(|w| w[0].lower <= w[1].lower));
            let mut relaxed: Vec<PointId> = hits
                .iter()
                .flat_map(|h| t.leaf_ids(h.leaf).iter().copied())
                .collect();
            relaxed.sort_unstable();
            assert!(got.iter().all(|id| relaxed.binary_search(id).is_ok()));
        }
    }

    #[test]
    fn relaxed_zero_radius_inside_leaf_returns_whole_leaf() {
        let (proj, bps, enc) = random_setup(1000, 4, 8);
        let t = DeTree::build(&enc, 0, 8, 32);
        let q = proj.point(0, 42).to_vec();
        let hits = t.range_query_relaxed(&q, 0.0, &bps);
        let leaf = hits
            .iter()
            .find(|h| t.leaf_ids(h.leaf).contains(&42))
            .expect("leaf containing the query point");
        assert_eq!(leaf.lower, 0.0);
    }

    #[test]
    fn bound_sandwich() {
        let (proj, bps, enc) = random_setup(4000, 6, 9);
        let t = DeTree::build(&enc, 0, 8, 16);
        let mut rng = ChaCha20Rng::seed_from_u64(90);
        let mut checked = 0;
        while checked < 10_000 {
            let sub = &t.subtrees[rng.gen_range(0..t.subtrees.len())];
            let node = &sub.nodes[rng.gen_range(0..sub.nodes.len())];
            let q: Vec<f32> = (0..6).map(|_| rng.gen_range(-5.0..5.0)).collect();
            let (lower, upper) = node_bounds(node.code(), &q, &bps, 0);
            let mut stack = vec![node];
            while let Some(n) = stack.pop() {
                match n {
                    Node::Internal { children, .. } => {
                        stack.extend(children.iter().map(|&c| &sub.nodes[c as usize]))
                    }
                    Node::Leaf { ids, .. } => {
                        for &id in ids {
                            let d = projected_distance(&q, proj.point(0, id));
                            assert!(lower <= d + 1e-9 && d <= upper + 1e-9);
                        }
                    }
                }
            }
            checked += 1;
        }
    }
}
