//! Spatial grid indexing. Arrays are flat with x varying fastest, then y, z
//! and (for 4D arrays) t.

use serde::{Deserialize, Serialize};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Grid {
    pub nx: usize,
    pub ny: usize,
    pub nz: usize,
}

impl Grid {
    pub const fn new(nx: usize, ny: usize, nz: usize) -> Self {
        Grid { nx, ny, nz }
    }

    #[inline]
    pub const fn len(&self) -> usize {
        self.nx * self.ny * self.nz
    }

    #[inline]
    pub const fn is_empty(&self) -> bool {
        self.len() == 0
    }

    #[inline]
    pub const fn shape(&self) -> [usize; 3] {
        [self.nx, self.ny, self.nz]
    }

    #[inline]
    pub const fn index(&self, x: usize, y: usize, z: usize) -> usize {
        x + self.nx * (y + self.ny * z)
    }

    #[inline]
    pub const fn coords(&self, i: usize) -> (usize, usize, usize) {
        let x = i % self.nx;
        let y = (i / self.nx) % self.ny;
        let z = i / (self.nx * self.ny);
        (x, y, z)
    }

    /// Linear stride of one step along `axis` (0 = x, 1 = y, 2 = z).
    #[inline]
    pub const fn stride(&self, axis: usize) -> usize {
        match axis {
            0 => 1,
            1 => self.nx,
            _ => self.nx * self.ny,
        }
    }

    #[inline]
    pub const fn extent(&self, axis: usize) -> usize {
        match axis {
            0 => self.nx,
            1 => self.ny,
            _ => self.nz,
        }
    }

    #[inline]
    pub fn coord(&self, i: usize, axis: usize) -> usize {
        let (x, y, z) = self.coords(i);
        [x, y, z][axis]
    }

    /// Index of the forward neighbour along `axis`, if inside the grid.
    #[inline]
    pub fn forward(&self, i: usize, axis: usize) -> Option<usize> {
        if self.coord(i, axis) + 1 < self.extent(axis) {
            Some(i + self.stride(axis))
        } else {
            None
        }
    }

    #[inline]
    pub fn backward(&self, i: usize, axis: usize) -> Option<usize> {
        if self.coord(i, axis) > 0 {
            Some(i - self.stride(axis))
        } else {
            None
        }
    }

    /// Calls `f` with each of the (up to six) face neighbours of voxel `i`.
    #[inline]
    pub fn for_each_face_neighbor(&self, i: usize, mut f: impl FnMut(usize)) {
        for axis in 0..3 {
            if let Some(j) = self.backward(i, axis) {
                f(j);
            }
            if let Some(j) = self.forward(i, axis) {
                f(j);
            }
        }
    }

    /// True when voxel `i` lies on the outer face of the grid.
    #[inline]
    pub fn on_border(&self, i: usize) -> bool {
        let (x, y, z) = self.coords(i);
        x == 0 || y == 0 || z == 0 || x + 1 == self.nx || y + 1 == self.ny || z + 1 == self.nz
    }

    /// Calls `f` with every voxel in the cube of half-width `r` centred at `i`,
    /// clipped at the grid edges. The centre voxel is included.
    #[inline]
    pub fn for_each_in_cube(&self, i: usize, r: usize, mut f: impl FnMut(usize)) {
        let (x, y, z) = self.coords(i);
        let (x0, x1) = (x.saturating_sub(r), (x + r).min(self.nx - 1));
        let (y0, y1) = (y.saturating_sub(r), (y + r).min(self.ny - 1));
        let (z0, z1) = (z.saturating_sub(r), (z + r).min(self.nz - 1));
        for zz in z0..=z1 {
            for yy in y0..=y1 {
                let base = self.index(0, yy, zz);
                for xx in x0..=x1 {
                    f(base + xx);
                }
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn index_roundtrip() {
        let g = Grid::new(3, 4, 5);
        for i in 0..g.len() {
            let (x, y, z) = g.coords(i);
            assert_eq!(g.index(x, y, z), i);
        }
    }

    #[test]
    fn neighbours_clip_at_edges() {
        let g = Grid::new(2, 2, 2);
        let mut n = 0;
        g.for_each_face_neighbor(0, |_| n += 1);
        assert_eq!(n, 3);
        let mut m = 0;
        g.for_each_in_cube(0, 1, |_| m += 1);
        assert_eq!(m, 8);
    }
}
