use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{PointCloud, Vec3};
use crate::error::{CpdError, Result};
use crate::geometry::EffectiveVolumes;

/// Relative slack on the horizon test so that points sitting exactly on the
/// horizon sphere are included regardless of rounding in their coordinates.
const HORIZON_SLACK: f64 = 1e-12;

/// Which interaction families contribute to the stored energy.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Interactions {
    pub one: bool,
    #[serde(default)]
    pub two: bool,
    #[serde(default)]
    pub three: bool,
}

impl Interactions {
    pub const ONE: Self = Self { one: true, two: false, three: false };
    pub const ONE_TWO: Self = Self { one: true, two: true, three: false };
    pub const ONE_THREE: Self = Self { one: true, two: false, three: true };
    pub const ALL: Self = Self { one: true, two: true, three: true };
}

impl Default for Interactions {
    fn default() -> Self {
        Self::ONE
    }
}

/// Relative tolerances of the non-collinearity and non-coplanarity filters.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeometryTolerances {
    pub collinear: f64,
    pub coplanar: f64,
}

impl Default for GeometryTolerances {
    fn default() -> Self {
        Self { collinear: 1e-8, coplanar: 1e-8 }
    }
}

/// Per-point neighbour lists and contributing pairs/triplets.
///
/// Pairs and triplets are stored once per unordered set with ascending ids;
/// every ordering of a stored set is a contributing set, so the ordered counts
/// are twice and six times the stored lengths.
#[derive(Debug, Clone)]
pub struct NeighborTable {
    horizon: f64,
    interactions: Interactions,
    neighbors: Vec<Vec<u32>>,
    pairs: Vec<Vec<[u32; 2]>>,
    triplets: Vec<Vec<[u32; 3]>>,
    pub(crate) volumes: Option<Vec<EffectiveVolumes>>,
}

impl NeighborTable {
    pub fn horizon(&self) -> f64 {
        self.horizon
    }

    pub fn interactions(&self) -> Interactions {
        self.interactions
    }

    pub fn len(&self) -> usize {
        self.neighbors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.neighbors.is_empty()
    }

    /// One-neighbour set of `a`, ascending.
    pub fn neighbors(&self, a: usize) -> &[u32] {
        &self.neighbors[a]
    }

    /// Contributing pairs of `a` as unordered sets `i < j`.
    pub fn pairs(&self, a: usize) -> &[[u32; 2]] {
        &self.pairs[a]
    }

    /// Contributing triplets of `a` as unordered sets `i < j < k`.
    pub fn triplets(&self, a: usize) -> &[[u32; 3]] {
        &self.triplets[a]
    }

    /// Every ordered contributing pair of `a`.
    pub fn ordered_pairs(&self, a: usize) -> impl Iterator<Item = [u32; 2]> + '_ {
        self.pairs[a].iter().flat_map(|&[i, j]| [[i, j], [j, i]])
    }

    /// Every ordered contributing triplet of `a`.
    pub fn ordered_triplets(&self, a: usize) -> impl Iterator<Item = [u32; 3]> + '_ {
        self.triplets[a]
            .iter()
            .flat_map(|&[i, j, k]| [[i, j, k], [i, k, j], [j, i, k], [j, k, i], [k, i, j], [k, j, i]])
    }

    pub fn count_one(&self, a: usize) -> usize {
        self.neighbors[a].len()
    }

    pub fn count_two(&self, a: usize) -> usize {
        2 * self.pairs[a].len()
    }

    pub fn count_three(&self, a: usize) -> usize {
        6 * self.triplets[a].len()
    }

    pub fn volumes(&self) -> Option<&[EffectiveVolumes]> {
        self.volumes.as_deref()
    }

    pub(crate) fn require_volumes(&self) -> Result<&[EffectiveVolumes]> {
        self.volumes
            .as_deref()
            .ok_or_else(|| CpdError::InvalidInput("effective volumes have not been computed".into()))
    }

    /// Removes one stored pair from the list of `a`, leaving volumes untouched.
    /// Only meant for building corrupted fixtures.
    #[doc(hidden)]
    pub fn remove_pair(&mut self, a: usize, index: usize) -> [u32; 2] {
        self.pairs[a].remove(index)
    }

    /// Removes one stored triplet from the list of `a`, leaving volumes untouched.
    #[doc(hidden)]
    pub fn remove_triplet(&mut self, a: usize, index: usize) -> [u32; 3] {
        self.triplets[a].remove(index)
    }

    pub fn total_pairs(&self) -> usize {
        self.pairs.iter().map(Vec::len).sum()
    }

    pub fn total_triplets(&self) -> usize {
        self.triplets.iter().map(Vec::len).sum()
    }
}

#[inline]
pub(crate) fn within_horizon(p: &Vec3, q: &Vec3, horizon: f64) -> bool {
    (q - p).norm() <= horizon * (1.0 + HORIZON_SLACK)
}

/// Uniform bucket grid with cell edge equal to the horizon.
struct CellList {
    origin: Vec3,
    cell: f64,
    dims: [usize; 3],
    starts: Vec<usize>,
    items: Vec<u32>,
}

impl CellList {
    fn new(positions: &[Vec3], cell: f64) -> Self {
        let mut lo = Vec3::repeat(f64::INFINITY);
        let mut hi = Vec3::repeat(f64::NEG_INFINITY);
        for p in positions {
            lo = lo.inf(p);
            hi = hi.sup(p);
        }
        let dims: [usize; 3] = std::array::from_fn(|d| (((hi[d] - lo[d]) / cell).floor() as usize) + 1);
        let ncells = dims[0] * dims[1] * dims[2];
        let mut counts = vec![0usize; ncells + 1];
        let keys: Vec<usize> = positions
            .iter()
            .map(|p| {
                let c = Self::coords(&lo, cell, &dims, p);
                Self::flat(&dims, c)
            })
            .collect();
        for &k in &keys {
            counts[k + 1] += 1;
        }
        for c in 1..counts.len() {
            counts[c] += counts[c - 1];
        }
        let mut fill = counts.clone();
        let mut items = vec![0u32; positions.len()];
        for (a, &k) in keys.iter().enumerate() {
            items[fill[k]] = a as u32;
            fill[k] += 1;
        }
        Self { origin: lo, cell, dims, starts: counts, items }
    }

    fn coords(origin: &Vec3, cell: f64, dims: &[usize; 3], p: &Vec3) -> [usize; 3] {
        std::array::from_fn(|d| (((p[d] - origin[d]) / cell).floor().max(0.0) as usize).min(dims[d] - 1))
    }

    fn flat(dims: &[usize; 3], c: [usize; 3]) -> usize {
        (c[2] * dims[1] + c[1]) * dims[0] + c[0]
    }

    /// Candidates in the 3x3x3 block of cells around `p`.
    fn candidates<'a>(&'a self, p: &Vec3) -> impl Iterator<Item = u32> + 'a {
        let c = Self::coords(&self.origin, self.cell, &self.dims, p);
        let range = |d: usize| c[d].saturating_sub(1)..=(c[d] + 1).min(self.dims[d] - 1);
        let (rx, ry, rz) = (range(0), range(1), range(2));
        rz.flat_map(move |z| {
            let rx = rx.clone();
            ry.clone().flat_map(move |y| rx.clone().map(move |x| [x, y, z]))
        })
        .flat_map(move |cc| {
            let k = Self::flat(&self.dims, cc);
            self.items[self.starts[k]..self.starts[k + 1]].iter().copied()
        })
    }
}

/// Brute-force O(n²) one-neighbour sets, used to cross-check the cell list.
pub fn brute_force_neighbors(cloud: &PointCloud, horizon: f64) -> Vec<Vec<u32>> {
    let pos = cloud.positions();
    (0..pos.len())
        .map(|a| {
            (0..pos.len())
                .filter(|&i| i != a && within_horizon(&pos[a], &pos[i], horizon))
                .map(|i| i as u32)
                .collect()
        })
        .collect()
}

/// Builds the neighbour table with the default collinearity/coplanarity tolerances.
pub fn build_neighbor_table(cloud: &PointCloud, horizon: f64, interactions: Interactions) -> Result<NeighborTable> {
    build_neighbor_table_with(cloud, horizon, GeometryTolerances::default(), interactions)
}

pub fn build_neighbor_table_with(
    cloud: &PointCloud,
    horizon: f64,
    tol: GeometryTolerances,
    interactions: Interactions,
) -> Result<NeighborTable> {
    if !(horizon > 0.0) || !horizon.is_finite() {
        return Err(CpdError::InvalidInput(format!("horizon must be positive, got {horizon}")));
    }
    if !interactions.one {
        return Err(CpdError::InvalidInput("one-neighbour interactions are mandatory".into()));
    }
    if cloud.dim() == 2 && interactions.three {
        return Err(CpdError::InvalidInput("three-neighbour interactions are not defined in 2D".into()));
    }
    let pos = cloud.positions();
    let cells = CellList::new(pos, horizon);

    let neighbors: Vec<Vec<u32>> = (0..pos.len())
        .into_par_iter()
        .map(|a| {
            let mut list: Vec<u32> = cells
                .candidates(&pos[a])
                .filter(|&i| i as usize != a && within_horizon(&pos[a], &pos[i as usize], horizon))
                .collect();
            list.sort_unstable();
            list
        })
        .collect();
    if let Some(a) = neighbors.iter().position(Vec::is_empty) {
        return Err(CpdError::IsolatedPoint { point: a });
    }

    let sets: Vec<(Vec<[u32; 2]>, Vec<[u32; 3]>)> = (0..pos.len())
        .into_par_iter()
        .map(|a| contributing_sets(pos, a, &neighbors[a], horizon, tol, interactions))
        .collect();
    let (pairs, triplets): (Vec<_>, Vec<_>) = sets.into_iter().unzip();

    if interactions.two {
        if let Some(a) = pairs.iter().position(Vec::is_empty) {
            return Err(CpdError::DegenerateNeighborhood { point: a, kind: "pairs" });
        }
    }
    if interactions.three {
        if let Some(a) = triplets.iter().position(Vec::is_empty) {
            return Err(CpdError::DegenerateNeighborhood { point: a, kind: "triplets" });
        }
    }

    Ok(NeighborTable { horizon, interactions, neighbors, pairs, triplets, volumes: None })
}

fn contributing_sets(
    pos: &[Vec3],
    a: usize,
    neighbors: &[u32],
    horizon: f64,
    tol: GeometryTolerances,
    interactions: Interactions,
) -> (Vec<[u32; 2]>, Vec<[u32; 3]>) {
    let mut pairs = Vec::new();
    let mut triplets = Vec::new();
    if !interactions.two && !interactions.three {
        return (pairs, triplets);
    }
    let m = neighbors.len();
    let bonds: Vec<Vec3> = neighbors.iter().map(|&i| pos[i as usize] - pos[a]).collect();
    let lengths: Vec<f64> = bonds.iter().map(|b| b.norm()).collect();
    // close[p * m + q]: neighbours p and q are within the horizon of each other
    let mut close = vec![false; m * m];
    for p in 0..m {
        for q in p + 1..m {
            let c = within_horizon(&pos[neighbors[p] as usize], &pos[neighbors[q] as usize], horizon);
            close[p * m + q] = c;
            close[q * m + p] = c;
        }
    }

    for p in 0..m {
        for q in p + 1..m {
            if !close[p * m + q] {
                continue;
            }
            if interactions.two {
                let area = bonds[p].cross(&bonds[q]).norm();
                if area > tol.collinear * lengths[p] * lengths[q] {
                    pairs.push([neighbors[p], neighbors[q]]);
                }
            }
            if interactions.three {
                let n = bonds[p].cross(&bonds[q]);
                for r in q + 1..m {
                    if !close[p * m + r] || !close[q * m + r] {
                        continue;
                    }
                    let vol = n.dot(&bonds[r]).abs();
                    if vol > tol.coplanar * lengths[p] * lengths[q] * lengths[r] {
                        triplets.push([neighbors[p], neighbors[q], neighbors[r]]);
                    }
                }
            }
        }
    }
    (pairs, triplets)
}
