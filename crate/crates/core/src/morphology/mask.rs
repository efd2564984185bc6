use std::collections::VecDeque;

use crate::error::{Error, Result};
use crate::grid::Grid;

/// Binary voxel set on a lattice.
#[derive(Debug, Clone, PartialEq)]
pub struct Mask {
    grid: Grid,
    data: Vec<bool>,
}

impl Mask {
    pub fn empty(grid: Grid) -> Self {
        Mask {
            data: vec![false; grid.len()],
            grid,
        }
    }

    pub fn full(grid: Grid) -> Self {
        Mask {
            data: vec![true; grid.len()],
            grid,
        }
    }

    pub fn from_vec(grid: Grid, data: Vec<bool>) -> Result<Self> {
        if data.len() != grid.len() {
            return Err(Error::Geometry(format!(
                "mask length {} does not match dims {:?}",
                data.len(),
                grid.dims
            )));
        }
        Ok(Mask { grid, data })
    }

    pub fn from_fn(grid: Grid, f: impl FnMut(usize) -> bool) -> Self {
        Mask {
            data: (0..grid.len()).map(f).collect(),
            grid,
        }
    }

    /// Copy of the voxels `lo..=hi` (inclusive).
    pub fn crop(&self, lo: [usize; 3], hi: [usize; 3]) -> Result<Mask> {
        let grid = self.grid.crop(lo, hi)?;
        Ok(Mask::from_fn(grid, |idx| {
            let [i, j, k] = grid.coords(idx);
            self.at([lo[0] + i, lo[1] + j, lo[2] + k])
        }))
    }

    /// Places this mask into an empty mask on `parent` at voxel offset `lo`.
    pub fn embed(&self, parent: &Grid, lo: [usize; 3]) -> Mask {
        let mut out = Mask::empty(*parent);
        for idx in self.indices() {
            let [i, j, k] = self.grid.coords(idx);
            out.set(parent.index(lo[0] + i, lo[1] + j, lo[2] + k), true);
        }
        out
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn data(&self) -> &[bool] {
        &self.data
    }

    #[inline]
    pub fn get(&self, idx: usize) -> bool {
        self.data[idx]
    }

    #[inline]
    pub fn at(&self, c: [usize; 3]) -> bool {
        self.data[self.grid.index(c[0], c[1], c[2])]
    }

    #[inline]
    pub fn set(&mut self, idx: usize, v: bool) {
        self.data[idx] = v;
    }

    pub fn count(&self) -> usize {
        self.data.iter().filter(|&&b| b).count()
    }

    pub fn is_empty(&self) -> bool {
        !self.data.iter().any(|&b| b)
    }

    pub fn indices(&self) -> impl Iterator<Item = usize> + '_ {
        self.data.iter().enumerate().filter_map(|(i, &b)| b.then_some(i))
    }

    pub fn complement(&self) -> Mask {
        Mask {
            grid: self.grid,
            data: self.data.iter().map(|b| !b).collect(),
        }
    }

    pub fn and(&self, other: &Mask) -> Mask {
        Mask {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && *b).collect(),
        }
    }

    pub fn or(&self, other: &Mask) -> Mask {
        Mask {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a || *b).collect(),
        }
    }

    pub fn and_not(&self, other: &Mask) -> Mask {
        Mask {
            grid: self.grid,
            data: self.data.iter().zip(&other.data).map(|(a, b)| *a && !*b).collect(),
        }
    }

    pub fn is_subset_of(&self, other: &Mask) -> bool {
        self.data.iter().zip(&other.data).all(|(a, b)| !*a || *b)
    }

    /// True when the voxel is set and has a 6-neighbour outside the set
    /// (lattice exterior counts as outside).
    pub fn is_surface(&self, idx: usize) -> bool {
        if !self.data[idx] {
            return false;
        }
        let c = self.grid.coords(idx);
        Grid::N6.iter().any(|&d| match self.grid.offset(c, d) {
            Some(n) => !self.at(n),
            None => true,
        })
    }

    /// Connected components; returns per-voxel component id (0 = not set,
    /// components numbered from 1 in order of their lowest voxel index).
    pub fn components(&self, connectivity: Connectivity) -> (Vec<u32>, u32) {
        let mut comp = vec![0u32; self.data.len()];
        let mut next = 0u32;
        let mut queue = VecDeque::new();
        let offsets = connectivity.offsets();
        for start in 0..self.data.len() {
            if !self.data[start] || comp[start] != 0 {
                continue;
            }
            next += 1;
            comp[start] = next;
            queue.push_back(start);
            while let Some(v) = queue.pop_front() {
                let c = self.grid.coords(v);
                for &d in &offsets {
                    if let Some(n) = self.grid.offset(c, d) {
                        let ni = self.grid.index(n[0], n[1], n[2]);
                        if self.data[ni] && comp[ni] == 0 {
                            comp[ni] = next;
                            queue.push_back(ni);
                        }
                    }
                }
            }
        }
        (comp, next)
    }

    /// Keeps only the voxels connected to any of `seeds`.
    pub fn reconstruct_from(&self, seeds: &[usize], connectivity: Connectivity) -> Mask {
        let mut out = Mask::empty(self.grid);
        let mut queue: VecDeque<usize> = VecDeque::new();
        for &s in seeds {
            if self.data[s] && !out.data[s] {
                out.data[s] = true;
                queue.push_back(s);
            }
        }
        let offsets = connectivity.offsets();
        while let Some(v) = queue.pop_front() {
            let c = self.grid.coords(v);
            for &d in &offsets {
                if let Some(n) = self.grid.offset(c, d) {
                    let ni = self.grid.index(n[0], n[1], n[2]);
                    if self.data[ni] && !out.data[ni] {
                        out.data[ni] = true;
                        queue.push_back(ni);
                    }
                }
            }
        }
        out
    }

    /// Largest connected component (ties go to the one with the lowest voxel index).
    pub fn largest_component(&self, connectivity: Connectivity) -> Mask {
        let (comp, n) = self.components(connectivity);
        if n <= 1 {
            return self.clone();
        }
        let mut sizes = vec![0usize; n as usize + 1];
        for &c in &comp {
            sizes[c as usize] += 1;
        }
        let best = (1..=n as usize)
            .max_by(|&a, &b| sizes[a].cmp(&sizes[b]).then(b.cmp(&a)))
            .unwrap_or(1) as u32;
        Mask {
            grid: self.grid,
            data: comp.iter().map(|&c| c == best).collect(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Connectivity {
    Six,
    TwentySix,
}

impl Connectivity {
    pub fn offsets(self) -> Vec<[isize; 3]> {
        match self {
            Connectivity::Six => Grid::N6.to_vec(),
            Connectivity::TwentySix => Grid::n26().collect(),
        }
    }
}

/// Segmentation labels.
pub mod label {
    pub const BACKGROUND: u8 = 0;
    pub const BODY: u8 = 1;
    pub const PROCESS: u8 = 2;
    pub const TRABECULAR: u8 = 3;
    pub const TRABECULAR_PEELED: u8 = 4;
    pub const CUT_SURFACE: u8 = 5;
    pub const MAX: u8 = CUT_SURFACE;
}

/// One label per voxel from the enumeration in [`label`].
#[derive(Debug, Clone, PartialEq)]
pub struct LabelMask {
    grid: Grid,
    labels: Vec<u8>,
}

impl LabelMask {
    pub fn new(grid: Grid) -> Self {
        LabelMask {
            labels: vec![label::BACKGROUND; grid.len()],
            grid,
        }
    }

    pub fn from_labels(grid: Grid, labels: Vec<u8>) -> Result<Self> {
        if labels.len() != grid.len() {
            return Err(Error::Geometry(format!(
                "label count {} does not match dims {:?}",
                labels.len(),
                grid.dims
            )));
        }
        if let Some(bad) = labels.iter().find(|&&l| l > label::MAX) {
            return Err(Error::Geometry(format!("label {bad} outside enumeration")));
        }
        Ok(LabelMask { grid, labels })
    }

    #[inline]
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    #[inline]
    pub fn labels(&self) -> &[u8] {
        &self.labels
    }

    #[inline]
    pub fn get(&self, idx: usize) -> u8 {
        self.labels[idx]
    }

    /// Writes `value` on every voxel of `mask`.
    pub fn paint(&mut self, mask: &Mask, value: u8) {
        assert!(value <= label::MAX);
        for i in mask.indices() {
            self.labels[i] = value;
        }
    }

    pub fn select(&self, value: u8) -> Mask {
        Mask::from_fn(self.grid, |i| self.labels[i] == value)
    }

    pub fn select_any(&self, values: &[u8]) -> Mask {
        Mask::from_fn(self.grid, |i| values.contains(&self.labels[i]))
    }

    pub fn count(&self, value: u8) -> usize {
        self.labels.iter().filter(|&&l| l == value).count()
    }
}
