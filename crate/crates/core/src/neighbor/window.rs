use crate::error::{Error, Result};
use crate::voxel::VoxelGrid;

/// The `K = k^3` integer offsets of a cubic window, lexicographic in
/// `(dx, dy, dz)`. The zero offset sits at position `(K - 1) / 2`.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct WindowOffsets {
    pub k: usize,
    pub offsets: Vec<[i32; 3]>,
}

impl WindowOffsets {
    pub fn new(k: usize) -> Result<Self> {
        if k == 0 || k % 2 == 0 {
            return Err(Error::Domain(format!("window size must be odd and positive, got {k}")));
        }
        let r = (k / 2) as i32;
        let mut offsets = Vec::with_capacity(k * k * k);
        for dx in -r..=r {
            for dy in -r..=r {
                for dz in -r..=r {
                    offsets.push([dx, dy, dz]);
                }
            }
        }
        Ok(Self { k, offsets })
    }

    pub fn len(&self) -> usize {
        self.offsets.len()
    }

    pub fn is_empty(&self) -> bool {
        self.offsets.is_empty()
    }

    pub fn center(&self) -> usize {
        (self.len() - 1) / 2
    }

    /// Position of `offset` in the window, if it lies inside.
    pub fn slot_of(&self, offset: [i32; 3]) -> Option<usize> {
        let r = (self.k / 2) as i32;
        if offset.iter().any(|&d| d < -r || d > r) {
            return None;
        }
        let k = self.k as i32;
        Some((((offset[0] + r) * k + (offset[1] + r)) * k + (offset[2] + r)) as usize)
    }
}

/// Occupied voxels `j` with `coords[j] = coords[i] + offset` for some window
/// offset, found with `K` hash lookups and returned in offset order.
pub fn window_neighbors(grid: &VoxelGrid, i: usize, win: &WindowOffsets) -> Result<Vec<usize>> {
    Ok(window_neighbors_with_slots(grid, i, win)?.into_iter().map(|(_, j)| j).collect())
}

/// As [`window_neighbors`], paired with the window slot of each neighbor.
pub fn window_neighbors_with_slots(grid: &VoxelGrid, i: usize, win: &WindowOffsets) -> Result<Vec<(usize, usize)>> {
    if i >= grid.len() {
        return Err(Error::Index { index: i, len: grid.len() });
    }
    let origin = grid.coords[i];
    Ok(win
        .offsets
        .iter()
        .enumerate()
        .filter_map(|(slot, &d)| origin.offset(d).and_then(|c| grid.table.lookup(c)).map(|j| (slot, j)))
        .collect())
}

/// Window neighbors of every voxel, stored compactly.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborTable {
    /// `start[i]..start[i + 1]` indexes `slots` / `neighbors` for voxel `i`.
    pub start: Vec<usize>,
    pub slots: Vec<usize>,
    pub neighbors: Vec<usize>,
}

impl NeighborTable {
    pub fn build(grid: &VoxelGrid, win: &WindowOffsets) -> Self {
        let mut start = Vec::with_capacity(grid.len() + 1);
        let mut slots = Vec::new();
        let mut neighbors = Vec::new();
        start.push(0);
        for i in 0..grid.len() {
            for (slot, j) in window_neighbors_with_slots(grid, i, win).expect("index in range") {
                slots.push(slot);
                neighbors.push(j);
            }
            start.push(neighbors.len());
        }
        Self { start, slots, neighbors }
    }

    pub fn range(&self, i: usize) -> std::ops::Range<usize> {
        self.start[i]..self.start[i + 1]
    }

    pub fn count(&self, i: usize) -> usize {
        self.start[i + 1] - self.start[i]
    }

    pub fn counts(&self) -> Vec<usize> {
        (0..self.start.len() - 1).map(|i| self.count(i)).collect()
    }

    pub fn total(&self) -> usize {
        self.neighbors.len()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::PointCloud;
    use crate::rng::Stream;

    fn grid_from_cells(cells: &[[i32; 3]]) -> VoxelGrid {
        let points = cells.iter().map(|c| [c[0] as f64 + 0.5, c[1] as f64 + 0.5, c[2] as f64 + 0.5]).collect();
        let cloud = PointCloud::new(points, vec![], 0, None).unwrap();
        VoxelGrid::from_cloud(&cloud, 1.0).unwrap()
    }

    #[test]
    fn offsets_layout() {
        let w = WindowOffsets::new(3).unwrap();
        assert_eq!(w.len(), 27);
        assert_eq!(w.offsets[w.center()], [0, 0, 0]);
        assert_eq!(w.offsets[0], [-1, -1, -1]);
        for (s, &o) in w.offsets.iter().enumerate() {
            assert_eq!(w.slot_of(o), Some(s));
        }
        assert_eq!(w.slot_of([2, 0, 0]), None);
        assert!(WindowOffsets::new(4).is_err());
        assert!(WindowOffsets::new(0).is_err());
        assert_eq!(WindowOffsets::new(1).unwrap().offsets, vec![[0, 0, 0]]);
    }

    #[test]
    fn isolated_voxel_sees_only_itself() {
        let g = grid_from_cells(&[[0, 0, 0], [5, 5, 5]]);
        let w = WindowOffsets::new(3).unwrap();
        assert_eq!(window_neighbors(&g, 0, &w).unwrap(), vec![0]);
    }

    #[test]
    fn dense_block_center_sees_all() {
        let mut cells = Vec::new();
        for x in 0..3 {
            for y in 0..3 {
                for z in 0..3 {
                    cells.push([x, y, z]);
                }
            }
        }
        let g = grid_from_cells(&cells);
        let w = WindowOffsets::new(3).unwrap();
        let center = g.table.lookup(crate::hash::VoxelCoord([1, 1, 1])).unwrap();
        assert_eq!(window_neighbors(&g, center, &w).unwrap().len(), 27);
    }

    #[test]
    fn index_error() {
        let g = grid_from_cells(&[[0, 0, 0]]);
        let w = WindowOffsets::new(3).unwrap();
        assert!(matches!(window_neighbors(&g, 1, &w), Err(Error::Index { .. })));
    }

    /// Linear scan over all voxels testing Chebyshev-window membership.
    #[test]
    fn matches_linear_scan() {
        let mut s = Stream::new(61, 0);
        for k in [1usize, 3, 5] {
            let w = WindowOffsets::new(k).unwrap();
            let mut cells = Vec::new();
            for _ in 0..300 {
                cells.push([s.below(12) as i32 - 6, s.below(12) as i32 - 6, s.below(6) as i32]);
            }
            cells.sort();
            cells.dedup();
            let g = grid_from_cells(&cells);
            let r = (k / 2) as i32;
            for i in 0..g.len() {
                let ci = g.coords[i].0;
                let mut want: Vec<(usize, usize)> = (0..g.len())
                    .filter_map(|j| {
                        let cj = g.coords[j].0;
                        let d = [cj[0] - ci[0], cj[1] - ci[1], cj[2] - ci[2]];
                        let inside = d.iter().all(|v| v.abs() <= r);
                        inside.then(|| (w.slot_of(d).unwrap(), j))
                    })
                    .collect();
                want.sort();
                let got = window_neighbors_with_slots(&g, i, &w).unwrap();
                assert_eq!(got, want);
                assert!(got.iter().any(|&(_, j)| j == i));
                assert!(!got.is_empty() && got.len() <= w.len());
            }
        }
    }
}
