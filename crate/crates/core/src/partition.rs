//! Finite-set partitions.
//!
//! A [`Partition`] of `{0, .., n-1}` is stored as one cell label per element.
//! Labels are kept canonical: cells are numbered in order of first occurrence,
//! so two partitions are equal exactly when their label vectors are equal.

use std::collections::HashMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default cap on the ground-set size accepted by [`enumerate_partitions`].
pub const DEFAULT_ENUMERATION_CAP: usize = 10;

#[derive(Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(try_from = "PartitionRepr", into = "PartitionRepr")]
pub struct Partition {
    labels: Vec<usize>,
    n_cells: usize,
}

#[derive(Serialize, Deserialize)]
struct PartitionRepr {
    size: usize,
    labels: Vec<usize>,
}

impl TryFrom<PartitionRepr> for Partition {
    type Error = Error;

    fn try_from(repr: PartitionRepr) -> Result<Self> {
        if repr.size != repr.labels.len() {
            return Err(Error::invalid(format!(
                "partition size {} does not match {} labels",
                repr.size,
                repr.labels.len()
            )));
        }
        Ok(Partition::from_labels(&repr.labels))
    }
}

impl From<Partition> for PartitionRepr {
    fn from(p: Partition) -> Self {
        PartitionRepr {
            size: p.size(),
            labels: p.labels,
        }
    }
}

impl Partition {
    /// Builds a partition from arbitrary labels; elements sharing a label share a cell.
    pub fn from_labels<L: Copy + Eq + std::hash::Hash>(labels: &[L]) -> Self {
        let mut map: HashMap<L, usize> = HashMap::new();
        let mut canon = Vec::with_capacity(labels.len());
        for &l in labels {
            let next = map.len();
            canon.push(*map.entry(l).or_insert(next));
        }
        Partition {
            n_cells: map.len(),
            labels: canon,
        }
    }

    /// Builds a partition from explicit cells, which must cover `0..n` exactly once.
    pub fn from_cells(n: usize, cells: &[Vec<usize>]) -> Result<Self> {
        let mut labels = vec![usize::MAX; n];
        for (c, cell) in cells.iter().enumerate() {
            if cell.is_empty() {
                return Err(Error::invalid(format!("cell {c} is empty")));
            }
            for &x in cell {
                if x >= n {
                    return Err(Error::invalid(format!("element {x} out of range 0..{n}")));
                }
                if labels[x] != usize::MAX {
                    return Err(Error::invalid(format!("element {x} appears in two cells")));
                }
                labels[x] = c;
            }
        }
        if let Some(x) = labels.iter().position(|&l| l == usize::MAX) {
            return Err(Error::invalid(format!("element {x} is in no cell")));
        }
        Ok(Partition::from_labels(&labels))
    }

    /// The one-cell partition.
    pub fn trivial(n: usize) -> Self {
        Partition {
            labels: vec![0; n],
            n_cells: usize::from(n > 0),
        }
    }

    /// The partition into singletons.
    pub fn discrete(n: usize) -> Self {
        Partition {
            labels: (0..n).collect(),
            n_cells: n,
        }
    }

    pub fn size(&self) -> usize {
        self.labels.len()
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    pub fn label(&self, x: usize) -> usize {
        self.labels[x]
    }

    /// Cells as sorted element lists, in canonical cell order.
    pub fn cells(&self) -> Vec<Vec<usize>> {
        let mut cells = vec![Vec::new(); self.n_cells];
        for (x, &l) in self.labels.iter().enumerate() {
            cells[l].push(x);
        }
        cells
    }

    pub fn cell_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.n_cells];
        for &l in &self.labels {
            sizes[l] += 1;
        }
        sizes
    }

    pub fn same_cell(&self, a: usize, b: usize) -> bool {
        self.labels[a] == self.labels[b]
    }

    /// Coarsest common refinement of `self` and `other`.
    pub fn product(&self, other: &Partition) -> Result<Partition> {
        product(self, other)
    }

    /// True iff `self` is a coarsening of `fine`.
    pub fn coarsens(&self, fine: &Partition) -> Result<bool> {
        is_coarsening(self, fine)
    }

    /// Applies a cell-level map: element `x` lands in cell `map[label(x)]`.
    pub fn merge_cells(&self, map: &[usize]) -> Result<Partition> {
        if map.len() != self.n_cells {
            return Err(Error::DimensionMismatch {
                expected: self.n_cells,
                got: map.len(),
            });
        }
        let merged: Vec<usize> = self.labels.iter().map(|&l| map[l]).collect();
        Ok(Partition::from_labels(&merged))
    }
}

impl fmt::Debug for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{self}")
    }
}

impl fmt::Display for Partition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{{")?;
        for (c, cell) in self.cells().iter().enumerate() {
            if c > 0 {
                write!(f, ",")?;
            }
            write!(f, "{{")?;
            for (k, x) in cell.iter().enumerate() {
                if k > 0 {
                    write!(f, ",")?;
                }
                write!(f, "{x}")?;
            }
            write!(f, "}}")?;
        }
        write!(f, "}}")
    }
}

fn check_sizes(a: &Partition, b: &Partition) -> Result<()> {
    if a.size() != b.size() {
        return Err(Error::invalid(format!(
            "partition sizes differ: {} vs {}",
            a.size(),
            b.size()
        )));
    }
    Ok(())
}

/// Coarsest partition refining both inputs: its cells are the non-empty
/// pairwise intersections of their cells.
pub fn product(p1: &Partition, p2: &Partition) -> Result<Partition> {
    check_sizes(p1, p2)?;
    let pairs: Vec<(usize, usize)> = p1
        .labels
        .iter()
        .zip(&p2.labels)
        .map(|(&a, &b)| (a, b))
        .collect();
    Ok(Partition::from_labels(&pairs))
}

/// True iff every cell of `fine` lies inside some cell of `coarse`.
pub fn is_coarsening(coarse: &Partition, fine: &Partition) -> Result<bool> {
    check_sizes(coarse, fine)?;
    let mut image = vec![usize::MAX; fine.n_cells];
    for (&f, &c) in fine.labels.iter().zip(&coarse.labels) {
        if image[f] == usize::MAX {
            image[f] = c;
        } else if image[f] != c {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Disjoint-set forest with path halving and union by size.
#[derive(Debug, Clone)]
pub struct UnionFind {
    parent: Vec<usize>,
    size: Vec<usize>,
}

impl UnionFind {
    pub fn new(n: usize) -> Self {
        UnionFind {
            parent: (0..n).collect(),
            size: vec![1; n],
        }
    }

    pub fn find(&mut self, mut x: usize) -> usize {
        while self.parent[x] != x {
            self.parent[x] = self.parent[self.parent[x]];
            x = self.parent[x];
        }
        x
    }

    /// Returns true when `a` and `b` were in different sets.
    pub fn union(&mut self, a: usize, b: usize) -> bool {
        let (mut ra, mut rb) = (self.find(a), self.find(b));
        if ra == rb {
            return false;
        }
        if self.size[ra] < self.size[rb] {
            std::mem::swap(&mut ra, &mut rb);
        }
        self.parent[rb] = ra;
        self.size[ra] += self.size[rb];
        true
    }

    pub fn into_partition(mut self) -> Partition {
        let roots: Vec<usize> = (0..self.parent.len()).map(|x| self.find(x)).collect();
        Partition::from_labels(&roots)
    }
}

/// Partition of `0..n` generated by the transitive closure of `eq`.
///
/// `eq` is only queried for `a < b`.
pub fn partition_from_equivalence<F>(n: usize, eq: F) -> Partition
where
    F: Fn(usize, usize) -> bool,
{
    let mut uf = UnionFind::new(n);
    for a in 0..n {
        for b in (a + 1)..n {
            if uf.find(a) != uf.find(b) && eq(a, b) {
                uf.union(a, b);
            }
        }
    }
    uf.into_partition()
}

/// Bell number B(n), the count of set partitions of an n-element set.
pub fn bell_number(n: usize) -> u128 {
    // Bell triangle.
    let mut row = vec![1u128];
    for _ in 0..n {
        let mut next = Vec::with_capacity(row.len() + 1);
        next.push(*row.last().unwrap());
        for &x in &row {
            let prev = *next.last().unwrap();
            next.push(prev + x);
        }
        row = next;
    }
    row[0]
}

/// Lazily enumerates every partition of `0..n` in restricted-growth-string order.
pub fn enumerate_partitions(n: usize) -> Result<PartitionIter> {
    enumerate_partitions_capped(n, DEFAULT_ENUMERATION_CAP)
}

pub fn enumerate_partitions_capped(n: usize, cap: usize) -> Result<PartitionIter> {
    if n > cap {
        return Err(Error::ResourceLimit {
            what: format!("enumerating partitions of a {n}-element set"),
            cap,
        });
    }
    Ok(PartitionIter {
        rgs: vec![0; n],
        prefix_max: vec![0; n],
        done: false,
    })
}

/// Iterator over restricted growth strings `a` with `a[0] = 0` and
/// `a[i] <= 1 + max(a[..i])`.
#[derive(Debug, Clone)]
pub struct PartitionIter {
    rgs: Vec<usize>,
    // prefix_max[i] = max(rgs[..=i])
    prefix_max: Vec<usize>,
    done: bool,
}

impl PartitionIter {
    fn advance(&mut self) {
        let n = self.rgs.len();
        for i in (1..n).rev() {
            if self.rgs[i] <= self.prefix_max[i - 1] {
                self.rgs[i] += 1;
                self.prefix_max[i] = self.prefix_max[i - 1].max(self.rgs[i]);
                for k in (i + 1)..n {
                    self.rgs[k] = 0;
                    self.prefix_max[k] = self.prefix_max[i];
                }
                return;
            }
        }
        self.done = true;
    }
}

impl Iterator for PartitionIter {
    type Item = Partition;

    fn next(&mut self) -> Option<Partition> {
        if self.done {
            return None;
        }
        let n_cells = self.prefix_max.last().map_or(0, |&m| m + 1);
        let out = Partition {
            labels: self.rgs.clone(),
            n_cells,
        };
        self.advance();
        Some(out)
    }
}
