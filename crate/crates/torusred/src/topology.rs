//! Logical 2D grid over ranks and the chunk partitioning used by
//! reduce-scatter / all-gather.
//!
//! Ranks are laid out row-major: `rank = row * x + col`. The horizontal ring
//! of a rank is its row ordered by column (wrapping); the vertical ring is
//! its column ordered by row.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("grid {x}x{y} does not cover {n_ranks} ranks (x*y = {})", x * y)]
    DimensionMismatch { n_ranks: u32, x: u32, y: u32 },
    #[error("grid dimensions must be positive (got n={n_ranks}, x={x}, y={y})")]
    ZeroDimension { n_ranks: u32, x: u32, y: u32 },
    #[error("rank {rank} out of range for {n_ranks} ranks")]
    RankOutOfRange { rank: u32, n_ranks: u32 },
    #[error("bad grid spec {0:?} (expected \"XxY\", e.g. \"32x32\")")]
    BadGridSpec(String),
}

/// Ring orientation within the grid.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Orientation {
    Horizontal,
    Vertical,
}

/// An X-by-Y logical arrangement of `n_ranks` ranks.
/// `x` is the horizontal extent (ranks per row), `y` the vertical extent.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GridTopology {
    n_ranks: u32,
    x: u32,
    y: u32,
}

impl GridTopology {
    pub fn new(n_ranks: u32, x: u32, y: u32) -> Result<Self, TopologyError> {
        if n_ranks == 0 || x == 0 || y == 0 {
            return Err(TopologyError::ZeroDimension { n_ranks, x, y });
        }
        if x.checked_mul(y) != Some(n_ranks) {
            return Err(TopologyError::DimensionMismatch { n_ranks, x, y });
        }
        Ok(GridTopology { n_ranks, x, y })
    }

    pub fn from_extents(x: u32, y: u32) -> Result<Self, TopologyError> {
        if x == 0 || y == 0 {
            return Err(TopologyError::ZeroDimension {
                n_ranks: x * y,
                x,
                y,
            });
        }
        Ok(GridTopology {
            n_ranks: x * y,
            x,
            y,
        })
    }

    /// The squarest factorization n = x*y with x >= y. Used when only a rank
    /// count is given.
    pub fn squarest(n_ranks: u32) -> Result<Self, TopologyError> {
        if n_ranks == 0 {
            return Err(TopologyError::ZeroDimension {
                n_ranks,
                x: 0,
                y: 0,
            });
        }
        let mut y = (n_ranks as f64).sqrt() as u32;
        while y > 1 && !n_ranks.is_multiple_of(y) {
            y -= 1;
        }
        Ok(GridTopology {
            n_ranks,
            x: n_ranks / y,
            y,
        })
    }

    pub fn n_ranks(&self) -> u32 {
        self.n_ranks
    }

    pub fn x(&self) -> u32 {
        self.x
    }

    pub fn y(&self) -> u32 {
        self.y
    }

    fn check_rank(&self, rank: u32) -> Result<(), TopologyError> {
        if rank >= self.n_ranks {
            return Err(TopologyError::RankOutOfRange {
                rank,
                n_ranks: self.n_ranks,
            });
        }
        Ok(())
    }

    /// (row, col) of a rank under the row-major layout.
    pub fn coords_of(&self, rank: u32) -> Result<(u32, u32), TopologyError> {
        self.check_rank(rank)?;
        Ok((rank / self.x, rank % self.x))
    }

    pub fn rank_at(&self, row: u32, col: u32) -> u32 {
        debug_assert!(row < self.y && col < self.x);
        row * self.x + col
    }

    /// Previous and next neighbor of `rank` on its ring in the given
    /// orientation, with wrap-around.
    pub fn ring_neighbors(
        &self,
        rank: u32,
        orientation: Orientation,
    ) -> Result<(u32, u32), TopologyError> {
        let (row, col) = self.coords_of(rank)?;
        let (prev, next) = match orientation {
            Orientation::Horizontal => {
                let prev = self.rank_at(row, (col + self.x - 1) % self.x);
                let next = self.rank_at(row, (col + 1) % self.x);
                (prev, next)
            }
            Orientation::Vertical => {
                let prev = self.rank_at((row + self.y - 1) % self.y, col);
                let next = self.rank_at((row + 1) % self.y, col);
                (prev, next)
            }
        };
        Ok((prev, next))
    }

    /// All ranks in `rank`'s row, ordered by column. `rank` sits at position
    /// `col` in the returned ring.
    pub fn row_ring(&self, rank: u32) -> Result<Vec<u32>, TopologyError> {
        let (row, _) = self.coords_of(rank)?;
        Ok((0..self.x).map(|c| self.rank_at(row, c)).collect())
    }

    /// All ranks in `rank`'s column, ordered by row. `rank` sits at position
    /// `row` in the returned ring.
    pub fn col_ring(&self, rank: u32) -> Result<Vec<u32>, TopologyError> {
        let (_, col) = self.coords_of(rank)?;
        Ok((0..self.y).map(|r| self.rank_at(r, col)).collect())
    }
}

impl fmt::Display for GridTopology {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}x{}", self.x, self.y)
    }
}

/// Parses the "XxY" grid spec (lowercase 'x', no whitespace) into the
/// horizontal and vertical extents.
pub fn parse_grid_spec(spec: &str) -> Result<(u32, u32), TopologyError> {
    let bad = || TopologyError::BadGridSpec(spec.to_string());
    let (xs, ys) = spec.split_once('x').ok_or_else(bad)?;
    let x: u32 = xs.parse().map_err(|_| bad())?;
    let y: u32 = ys.parse().map_err(|_| bad())?;
    if x == 0 || y == 0 {
        return Err(bad());
    }
    Ok((x, y))
}

impl FromStr for GridTopology {
    type Err = TopologyError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (x, y) = parse_grid_spec(s)?;
        GridTopology::from_extents(x, y)
    }
}

/// A contiguous element range within a flat buffer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChunkRange {
    pub offset: usize,
    pub length: usize,
}

impl ChunkRange {
    pub fn end(&self) -> usize {
        self.offset + self.length
    }

    pub fn as_range(&self) -> std::ops::Range<usize> {
        self.offset..self.end()
    }
}

/// Balanced partition of `[0, total_length)` into exactly `parts` contiguous
/// ranges. Sizes differ by at most one; the first `total_length % parts`
/// ranges are the larger ones.
pub fn partition_chunks(total_length: usize, parts: usize) -> Vec<ChunkRange> {
    assert!(parts >= 1, "partition requires at least one part");
    let base = total_length / parts;
    let remainder = total_length % parts;
    let mut chunks = Vec::with_capacity(parts);
    let mut offset = 0;
    for i in 0..parts {
        let length = base + usize::from(i < remainder);
        chunks.push(ChunkRange { offset, length });
        offset += length;
    }
    chunks
}

/// Partition a sub-range of a buffer, keeping absolute offsets.
pub fn partition_range(range: ChunkRange, parts: usize) -> Vec<ChunkRange> {
    partition_chunks(range.length, parts)
        .into_iter()
        .map(|c| ChunkRange {
            offset: range.offset + c.offset,
            length: c.length,
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn grid_validation() {
        assert!(GridTopology::new(1024, 32, 32).is_ok());
        assert!(GridTopology::new(4, 2, 2).is_ok());
        assert_eq!(
            GridTopology::new(6, 2, 2),
            Err(TopologyError::DimensionMismatch {
                n_ranks: 6,
                x: 2,
                y: 2
            })
        );
        assert!(GridTopology::new(0, 0, 0).is_err());
    }

    #[test]
    fn coords_examples() {
        let t = GridTopology::new(4, 2, 2).unwrap();
        assert_eq!(t.coords_of(3).unwrap(), (1, 1));
        assert_eq!(t.coords_of(0).unwrap(), (0, 0));
        assert!(t.coords_of(4).is_err());

        let big = GridTopology::new(1024, 32, 32).unwrap();
        assert_eq!(big.coords_of(33).unwrap(), (1, 1));
    }

    #[test]
    fn coords_are_bijective() {
        for (n, x, y) in [(4, 2, 2), (9, 3, 3), (12, 4, 3), (6, 6, 1), (6, 1, 6)] {
            let t = GridTopology::new(n, x, y).unwrap();
            for rank in 0..n {
                let (row, col) = t.coords_of(rank).unwrap();
                assert_eq!(t.rank_at(row, col), rank);
            }
        }
    }

    #[test]
    fn ring_neighbor_examples() {
        let t = GridTopology::new(4, 2, 2).unwrap();
        assert_eq!(
            t.ring_neighbors(0, Orientation::Horizontal).unwrap(),
            (1, 1)
        );

        let t = GridTopology::new(9, 3, 3).unwrap();
        assert_eq!(
            t.ring_neighbors(4, Orientation::Horizontal).unwrap(),
            (3, 5)
        );
        assert_eq!(t.ring_neighbors(4, Orientation::Vertical).unwrap(), (1, 7));
    }

    #[test]
    fn neighbor_round_trips() {
        let t = GridTopology::new(12, 4, 3).unwrap();
        for rank in 0..12 {
            for o in [Orientation::Horizontal, Orientation::Vertical] {
                let (prev, next) = t.ring_neighbors(rank, o).unwrap();
                let (_, next_of_prev) = t.ring_neighbors(prev, o).unwrap();
                assert_eq!(next_of_prev, rank);
                // Walking `next` around the ring returns to the start.
                let steps = match o {
                    Orientation::Horizontal => t.x(),
                    Orientation::Vertical => t.y(),
                };
                let mut r = rank;
                for _ in 0..steps {
                    r = t.ring_neighbors(r, o).unwrap().1;
                }
                assert_eq!(r, rank);
                let _ = next;
            }
        }
    }

    #[test]
    fn partition_examples() {
        let lens = |v: Vec<ChunkRange>| v.into_iter().map(|c| c.length).collect::<Vec<_>>();
        assert_eq!(lens(partition_chunks(8, 4)), vec![2, 2, 2, 2]);
        assert_eq!(lens(partition_chunks(10, 4)), vec![3, 3, 2, 2]);
        assert_eq!(lens(partition_chunks(3, 4)), vec![1, 1, 1, 0]);
        assert_eq!(lens(partition_chunks(0, 3)), vec![0, 0, 0]);
    }

    #[test]
    fn grid_spec_parsing() {
        assert_eq!(parse_grid_spec("32x32").unwrap(), (32, 32));
        assert_eq!(parse_grid_spec("2x3").unwrap(), (2, 3));
        assert!(parse_grid_spec("2X3").is_err());
        assert!(parse_grid_spec("2 x 3").is_err());
        assert!(parse_grid_spec("0x3").is_err());
        let t: GridTopology = "4x2".parse().unwrap();
        assert_eq!((t.n_ranks(), t.x(), t.y()), (8, 4, 2));
    }

    #[test]
    fn squarest_factorization() {
        assert_eq!(GridTopology::squarest(16).unwrap().to_string(), "4x4");
        assert_eq!(GridTopology::squarest(12).unwrap().to_string(), "4x3");
        assert_eq!(GridTopology::squarest(7).unwrap().to_string(), "7x1");
        assert_eq!(GridTopology::squarest(1).unwrap().to_string(), "1x1");
    }

    proptest! {
        #[test]
        fn partition_covers_and_balances(total in 0usize..5000, parts in 1usize..65) {
            let chunks = partition_chunks(total, parts);
            prop_assert_eq!(chunks.len(), parts);
            prop_assert_eq!(chunks.iter().map(|c| c.length).sum::<usize>(), total);
            let max = chunks.iter().map(|c| c.length).max().unwrap();
            let min = chunks.iter().map(|c| c.length).min().unwrap();
            prop_assert!(max - min <= 1);
            let mut offset = 0;
            for c in &chunks {
                prop_assert_eq!(c.offset, offset);
                offset += c.length;
            }
            prop_assert_eq!(offset, total);
        }

        #[test]
        fn rank_coord_bijection(x in 1u32..20, y in 1u32..20) {
            let t = GridTopology::new(x * y, x, y).unwrap();
            for rank in 0..x * y {
                let (row, col) = t.coords_of(rank).unwrap();
                prop_assert!(row < y && col < x);
                prop_assert_eq!(t.rank_at(row, col), rank);
            }
        }
    }
}
