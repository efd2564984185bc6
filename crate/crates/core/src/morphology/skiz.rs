//! Geodesic influence zones by simultaneous breadth-first dilation.

use super::{Connectivity, Mask};
use crate::error::{Error, Result};
use crate::grid::Grid;

/// Result of partitioning a domain among labelled seeds.
#[derive(Debug, Clone, PartialEq)]
pub struct Zones {
    grid: Grid,
    /// Seed label owning each voxel; 0 outside the domain or unreachable.
    labels: Vec<u32>,
    /// Rounds of dilation needed to reach each voxel (`u32::MAX` when unreached).
    rounds: Vec<u32>,
    /// Domain voxels with a 6-neighbour owned by a different label.
    cut: Mask,
}

impl Zones {
    pub fn grid(&self) -> &Grid {
        &self.grid
    }

    pub fn labels(&self) -> &[u32] {
        &self.labels
    }

    pub fn label(&self, idx: usize) -> u32 {
        self.labels[idx]
    }

    pub fn rounds(&self) -> &[u32] {
        &self.rounds
    }

    pub fn cut(&self) -> &Mask {
        &self.cut
    }

    pub fn zone(&self, label: u32) -> Mask {
        Mask::from_fn(self.grid, |i| self.labels[i] == label)
    }
}

/// Partitions `domain` among the seeds in `seeds` (per-voxel label, 0 = no seed).
///
/// Every round dilates all fronts by one 26-neighbour ring inside the domain;
/// a voxel reached by several labels in the same round goes to the lowest.
pub fn skiz_partition(seeds: &[u32], domain: &Mask) -> Result<Zones> {
    let grid = *domain.grid();
    if seeds.len() != grid.len() {
        return Err(Error::Geometry("seed volume does not match domain".into()));
    }
    let n = grid.len();
    let mut labels = vec![0u32; n];
    let mut rounds = vec![u32::MAX; n];
    let mut front = Vec::new();
    for (i, &s) in seeds.iter().enumerate() {
        if s == 0 {
            continue;
        }
        if !domain.get(i) {
            return Err(Error::ResidualOutsideDomain(s as usize));
        }
        labels[i] = s;
        rounds[i] = 0;
        front.push(i);
    }

    let offsets = Connectivity::TwentySix.offsets();
    let mut candidate = vec![0u32; n];
    let mut round = 0u32;
    while !front.is_empty() {
        round += 1;
        let mut next = Vec::new();
        for &v in &front {
            let lv = labels[v];
            let c = grid.coords(v);
            for &d in &offsets {
                let Some(nc) = grid.offset(c, d) else { continue };
                let ni = grid.index(nc[0], nc[1], nc[2]);
                if !domain.get(ni) || labels[ni] != 0 {
                    continue;
                }
                if candidate[ni] == 0 {
                    candidate[ni] = lv;
                    next.push(ni);
                } else if lv < candidate[ni] {
                    candidate[ni] = lv;
                }
            }
        }
        for &v in &next {
            labels[v] = candidate[v];
            rounds[v] = round;
            candidate[v] = 0;
        }
        next.sort_unstable();
        front = next;
    }

    let mut cut = Mask::empty(grid);
    for i in 0..n {
        if labels[i] == 0 {
            continue;
        }
        let c = grid.coords(i);
        let touches = Grid::N6.iter().any(|&d| {
            grid.offset(c, d)
                .map(|nc| {
                    let l = labels[grid.index(nc[0], nc[1], nc[2])];
                    l != 0 && l != labels[i]
                })
                .unwrap_or(false)
        });
        if touches {
            cut.set(i, true);
        }
    }
    Ok(Zones {
        grid,
        labels,
        rounds,
        cut,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn line_midpoint_tie_goes_low() {
        let g = Grid::new([11, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let domain = Mask::full(g);
        let mut seeds = vec![0u32; 11];
        seeds[0] = 1;
        seeds[10] = 2;
        let z = skiz_partition(&seeds, &domain).unwrap();
        assert_eq!(&z.labels()[..6], &[1; 6]);
        assert_eq!(&z.labels()[6..], &[2; 5]);
        assert!(z.cut().get(5) && z.cut().get(6));
        assert_eq!(z.cut().count(), 2);
    }

    #[test]
    fn single_seed_owns_domain() {
        let g = Grid::new([4, 4, 4], [1.0; 3], [0.0; 3]).unwrap();
        let domain = Mask::from_fn(g, |i| i % 3 != 0);
        let mut seeds = vec![0u32; g.len()];
        seeds[1] = 7;
        let z = skiz_partition(&seeds, &domain).unwrap();
        let reach = domain.reconstruct_from(&[1], Connectivity::TwentySix);
        for i in 0..g.len() {
            assert_eq!(z.label(i) == 7, reach.get(i));
        }
        assert!(z.cut().is_empty());
    }

    #[test]
    fn seed_outside_domain() {
        let g = Grid::new([3, 1, 1], [1.0; 3], [0.0; 3]).unwrap();
        let domain = Mask::from_vec(g, vec![true, false, true]).unwrap();
        assert!(matches!(
            skiz_partition(&[0, 4, 0], &domain),
            Err(Error::ResidualOutsideDomain(4))
        ));
    }
}
