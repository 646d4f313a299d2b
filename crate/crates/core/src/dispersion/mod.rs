//! Nearest neighbours in history-chunk space and the target spreads they
//! induce over the following chunks.
//!
//! For sample `i` with neighbour set `M(i)` the target spread in action
//! dimension `d` is
//!
//! ```text
//! s_next[i][d] = mean_{j in M(i)} mean_h |next_i[h, d] - next_j[h, d]|
//! ```
//!
//! The index is exact: the ball tree only prunes subtrees that provably cannot
//! hold a closer point, and ties are broken by the lower sample id.

mod balltree;

use std::path::Path;

use balltree::{sq_dist, BallTree, Candidate, KBest};

use crate::codec::{Reader, Writer};
use crate::error::{Error, Result};

pub const DEFAULT_LEAF_SIZE: usize = 16;
/// Below this many points queries scan every point.
pub const BRUTE_FORCE_BELOW: usize = 64;

/// Exact k-nearest-neighbour index over flattened history chunks.
pub struct NeighborIndex {
    points: Vec<f64>,
    dim: usize,
    leaf_size: usize,
    tree: Option<BallTree>,
}

impl NeighborIndex {
    /// `points` is row-major `N x dim`.
    pub fn build(points: Vec<f64>, dim: usize, leaf_size: usize) -> Result<Self> {
        if dim == 0 || !points.len().is_multiple_of(dim) {
            return Err(Error::Config(format!(
                "{} coordinates do not split into points of dimension {dim}",
                points.len()
            )));
        }
        let n = points.len() / dim;
        if n < 2 {
            return Err(Error::Config(format!(
                "neighbour index needs at least 2 points, got {n}"
            )));
        }
        if leaf_size == 0 {
            return Err(Error::Config("leaf size must be positive".into()));
        }
        let tree = (n >= BRUTE_FORCE_BELOW).then(|| BallTree::build(&points, dim, leaf_size));
        Ok(Self {
            points,
            dim,
            leaf_size,
            tree,
        })
    }

    pub fn len(&self) -> usize {
        self.points.len() / self.dim
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn leaf_size(&self) -> usize {
        self.leaf_size
    }

    pub fn uses_tree(&self) -> bool {
        self.tree.is_some()
    }

    pub fn point(&self, i: usize) -> &[f64] {
        &self.points[i * self.dim..(i + 1) * self.dim]
    }

    /// The `min(m, N - 1)` nearest other samples of sample `i`, nearest first.
    pub fn query(&self, i: usize, m: usize) -> Result<Vec<usize>> {
        let n = self.len();
        if i >= n {
            return Err(Error::OutOfRange { index: i, len: n });
        }
        let k = m.min(n - 1);
        let q = self.point(i);
        let found = match &self.tree {
            Some(tree) => tree.knn(&self.points, self.dim, q, k, Some(i)),
            None => self.scan(q, k, Some(i)),
        };
        Ok(found.into_iter().map(|c| c.index).collect())
    }

    fn scan(&self, q: &[f64], k: usize, exclude: Option<usize>) -> Vec<Candidate> {
        let mut best = KBest::new(k);
        for j in 0..self.len() {
            if Some(j) != exclude {
                best.offer(Candidate {
                    d2: sq_dist(q, self.point(j)),
                    index: j,
                });
            }
        }
        best.into_sorted()
    }
}

/// Per-sample neighbour lists and target spreads.
#[derive(Clone, Debug, PartialEq)]
pub struct DispersionTable {
    m: usize,
    per_sample: usize,
    action_dim: usize,
    neighbors: Vec<u32>,
    s_next: Vec<f64>,
}

impl DispersionTable {
    pub fn len(&self) -> usize {
        self.s_next.len() / self.action_dim
    }

    pub fn is_empty(&self) -> bool {
        self.s_next.is_empty()
    }

    /// Requested neighbour count.
    pub fn m(&self) -> usize {
        self.m
    }

    /// Neighbours actually stored per sample, `min(m, N - 1)`.
    pub fn neighbors_per_sample(&self) -> usize {
        self.per_sample
    }

    pub fn action_dim(&self) -> usize {
        self.action_dim
    }

    pub fn neighbors(&self, i: usize) -> impl ExactSizeIterator<Item = usize> + '_ {
        self.neighbors[i * self.per_sample..(i + 1) * self.per_sample]
            .iter()
            .map(|&j| j as usize)
    }

    pub fn s_next(&self, i: usize) -> &[f64] {
        &self.s_next[i * self.action_dim..(i + 1) * self.action_dim]
    }

    /// Binary cache layout: `"MARSDISP"`, version `u32`, dataset hash
    /// `[u8; 32]`, N `u64`, D `u32`, m `u32`, neighbours per sample `u32`,
    /// neighbour ids `u32 x N*k`, spreads `f64 x N*D`.
    pub fn encode(&self, dataset_hash: &[u8; 32]) -> Vec<u8> {
        let mut w = Writer::new();
        w.bytes(CACHE_MAGIC);
        w.u32(CACHE_VERSION);
        w.bytes(dataset_hash);
        w.u64(self.len() as u64);
        w.u32(self.action_dim as u32);
        w.u32(self.m as u32);
        w.u32(self.per_sample as u32);
        for &j in &self.neighbors {
            w.u32(j);
        }
        w.f64s(&self.s_next);
        w.into_inner()
    }

    /// Decodes a cache, failing with [`Error::HashMismatch`] when it was built
    /// for a different dataset.
    pub fn decode(bytes: &[u8], dataset_hash: &[u8; 32]) -> Result<Self> {
        let mut r = Reader::new(bytes, "dispersion cache");
        r.expect_magic(CACHE_MAGIC)?;
        r.expect_version(CACHE_VERSION)?;
        if r.take(32)? != dataset_hash {
            return Err(Error::HashMismatch);
        }
        let n = r.u64()? as usize;
        let action_dim = r.u32()? as usize;
        let m = r.u32()? as usize;
        let per_sample = r.u32()? as usize;
        let count = n.checked_mul(per_sample).ok_or(Error::Truncated("dispersion cache"))?;
        if count.saturating_mul(4) > r.remaining() {
            return Err(Error::Truncated("dispersion cache"));
        }
        let neighbors = (0..count).map(|_| r.u32()).collect::<Result<Vec<_>>>()?;
        let s_next = r.f64s(n * action_dim)?;
        r.finish()?;
        if neighbors.iter().any(|&j| j as usize >= n) {
            return Err(Error::Malformed {
                what: "dispersion cache",
                detail: "neighbour id out of range".into(),
            });
        }
        Ok(Self {
            m,
            per_sample,
            action_dim,
            neighbors,
            s_next,
        })
    }

    pub fn save(&self, path: &Path, dataset_hash: &[u8; 32]) -> Result<()> {
        std::fs::write(path, self.encode(dataset_hash)).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path, dataset_hash: &[u8; 32]) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::decode(&bytes, dataset_hash)
    }
}

const CACHE_MAGIC: &[u8; 8] = b"MARSDISP";
const CACHE_VERSION: u32 = 1;

/// Builds the index over `histories` (row-major `N x history_len`).
pub fn build_index(histories: &[f64], history_len: usize, leaf_size: usize) -> Result<NeighborIndex> {
    NeighborIndex::build(histories.to_vec(), history_len, leaf_size)
}

/// Neighbour lists from `index` and spreads of the `next` chunks
/// (row-major `N x (horizon * action_dim)`).
pub fn precompute_s_next(
    next: &[f64],
    horizon: usize,
    action_dim: usize,
    index: &NeighborIndex,
    m: usize,
) -> Result<DispersionTable> {
    let n = index.len();
    let width = horizon * action_dim;
    if next.len() != n * width {
        return Err(Error::Shape {
            op: "precompute_s_next",
            lhs: vec![next.len()],
            rhs: vec![n, width],
        });
    }
    if m == 0 {
        return Err(Error::Config("neighbour count m must be positive".into()));
    }
    let per_sample = m.min(n - 1);
    let mut neighbors = Vec::with_capacity(n * per_sample);
    let mut s_next = vec![0.0; n * action_dim];
    let norm = (per_sample * horizon) as f64;
    for i in 0..n {
        let ids = index.query(i, m)?;
        debug_assert_eq!(ids.len(), per_sample);
        let row_i = &next[i * width..(i + 1) * width];
        let out = &mut s_next[i * action_dim..(i + 1) * action_dim];
        for &j in &ids {
            let row_j = &next[j * width..(j + 1) * width];
            for (k, (a, b)) in row_i.iter().zip(row_j).enumerate() {
                out[k % action_dim] += (a - b).abs();
            }
            neighbors.push(j as u32);
        }
        out.iter_mut().for_each(|v| *v /= norm);
    }
    Ok(DispersionTable {
        m,
        per_sample,
        action_dim,
        neighbors,
        s_next,
    })
}

/// Loads the cached table at `path` when it matches `dataset_hash` and `m`,
/// otherwise rebuilds it and rewrites the cache.
pub fn load_or_build(
    path: &Path,
    dataset_hash: &[u8; 32],
    histories: &[f64],
    next: &[f64],
    horizon: usize,
    action_dim: usize,
    m: usize,
) -> Result<DispersionTable> {
    if path.exists() {
        match DispersionTable::load(path, dataset_hash) {
            Ok(t) if t.m == m && t.action_dim == action_dim => return Ok(t),
            Ok(_) => log::info!("dispersion cache {} has other parameters; rebuilding", path.display()),
            Err(e) => log::info!("dispersion cache {} unusable ({e}); rebuilding", path.display()),
        }
    }
    let index = build_index(histories, horizon * action_dim, DEFAULT_LEAF_SIZE)?;
    let table = precompute_s_next(next, horizon, action_dim, &index, m)?;
    table.save(path, dataset_hash)?;
    Ok(table)
}
