//! Point-cloud discretisation of the reference body.
//!
//! Every point doubles as a collocation point and a quadrature point. Uniform
//! grids are cell-centred so that the point volumes tile the domain exactly;
//! external clouds are ingested from CSV together with their volumes.

mod neighbors;
mod volumes;

use std::fs::File;
use std::io::{BufReader, Write};
use std::path::Path;

use nalgebra::Vector3;
use serde::{Deserialize, Serialize};

use crate::error::{CpdError, Result};

pub use neighbors::{
    build_neighbor_table, build_neighbor_table_with, brute_force_neighbors, GeometryTolerances,
    Interactions, NeighborTable,
};
pub use volumes::{
    compute_effective_volumes, quadrature_fidelity_report, write_fidelity_csv, EffectiveVolumes,
    FidelityCheck, FidelityRow,
};

pub type Vec3 = Vector3<f64>;

/// Relative tolerance used when checking that a domain edge is a multiple of the spacing.
const CONFORMITY_TOL: f64 = 1e-9;

/// Axis-aligned box. In 2D only the first two axes are meaningful.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AxisBox {
    pub min: [f64; 3],
    pub max: [f64; 3],
}

impl AxisBox {
    pub fn new(min: [f64; 3], max: [f64; 3]) -> Self {
        Self { min, max }
    }

    pub fn unit(dim: usize) -> Self {
        let mut max = [1.0; 3];
        if dim == 2 {
            max[2] = 0.0;
        }
        Self { min: [0.0; 3], max }
    }

    pub fn extent(&self, axis: usize) -> f64 {
        self.max[axis] - self.min[axis]
    }

    pub fn measure(&self, dim: usize) -> f64 {
        (0..dim).map(|d| self.extent(d)).product()
    }

    pub fn center(&self) -> [f64; 3] {
        std::array::from_fn(|d| 0.5 * (self.min[d] + self.max[d]))
    }

    /// Strict interior test over the first `dim` axes.
    pub fn strictly_contains(&self, p: &Vec3, dim: usize) -> bool {
        (0..dim).all(|d| p[d] > self.min[d] && p[d] < self.max[d])
    }
}

/// Which Dirichlet layer, if any, a point belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum BoundaryTag {
    #[default]
    Interior,
    LayerLeft,
    LayerRight,
    LayerOther,
}

impl BoundaryTag {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::Interior => "interior",
            Self::LayerLeft => "layer_left",
            Self::LayerRight => "layer_right",
            Self::LayerOther => "layer_other",
        }
    }
}

#[derive(Debug, Clone)]
pub struct PointCloud {
    dim: usize,
    positions: Vec<Vec3>,
    volumes: Vec<f64>,
    tags: Vec<BoundaryTag>,
    spacing: Option<f64>,
}

impl PointCloud {
    /// Builds a cloud from raw data, checking positivity of the volumes and
    /// distinctness of the positions.
    pub fn new(dim: usize, positions: Vec<Vec3>, volumes: Vec<f64>, spacing: Option<f64>) -> Result<Self> {
        if dim != 2 && dim != 3 {
            return Err(CpdError::InvalidInput(format!("dimension must be 2 or 3, got {dim}")));
        }
        if positions.is_empty() {
            return Err(CpdError::EmptyCloud);
        }
        if positions.len() != volumes.len() {
            return Err(CpdError::InvalidInput(format!(
                "{} positions but {} volumes",
                positions.len(),
                volumes.len()
            )));
        }
        if let Some(a) = volumes.iter().position(|&v| !(v > 0.0) || !v.is_finite()) {
            return Err(CpdError::InvalidInput(format!("point {a} has non-positive volume")));
        }
        if dim == 2 {
            if let Some(a) = positions.iter().position(|p| p.z != 0.0) {
                return Err(CpdError::InvalidInput(format!("2D point {a} has non-zero X3")));
            }
        }
        let n = positions.len();
        let cloud = Self { dim, positions, volumes, tags: vec![BoundaryTag::Interior; n], spacing };
        if let Some((a, b)) = cloud.find_duplicate() {
            return Err(CpdError::InvalidInput(format!("points {a} and {b} coincide")));
        }
        Ok(cloud)
    }

    fn find_duplicate(&self) -> Option<(usize, usize)> {
        let mut order: Vec<usize> = (0..self.len()).collect();
        let key = |p: &Vec3| (p.x, p.y, p.z);
        order.sort_by(|&a, &b| key(&self.positions[a]).partial_cmp(&key(&self.positions[b])).unwrap());
        order
            .windows(2)
            .find(|w| self.positions[w[0]] == self.positions[w[1]])
            .map(|w| (w[0].min(w[1]), w[0].max(w[1])))
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, a: usize) -> &Vec3 {
        &self.positions[a]
    }

    pub fn volumes(&self) -> &[f64] {
        &self.volumes
    }

    pub fn volume(&self, a: usize) -> f64 {
        self.volumes[a]
    }

    pub fn total_volume(&self) -> f64 {
        self.volumes.iter().sum()
    }

    pub fn tags(&self) -> &[BoundaryTag] {
        &self.tags
    }

    pub fn tag(&self, a: usize) -> BoundaryTag {
        self.tags[a]
    }

    pub fn spacing(&self) -> Option<f64> {
        self.spacing
    }

    pub fn set_tags(&mut self, tags: Vec<BoundaryTag>) {
        assert_eq!(tags.len(), self.len());
        self.tags = tags;
    }

    /// Axis-aligned bounding box of the positions.
    pub fn bounds(&self) -> AxisBox {
        let mut min = [f64::INFINITY; 3];
        let mut max = [f64::NEG_INFINITY; 3];
        for p in &self.positions {
            for d in 0..3 {
                min[d] = min[d].min(p[d]);
                max[d] = max[d].max(p[d]);
            }
        }
        AxisBox { min, max }
    }

    /// Index of the point closest to `target`; ties resolve to the lowest id.
    pub fn nearest(&self, target: &Vec3) -> usize {
        let mut best = (f64::INFINITY, 0);
        for (a, p) in self.positions.iter().enumerate() {
            let d = (p - target).norm_squared();
            if d < best.0 {
                best = (d, a);
            }
        }
        best.1
    }

    /// Reads a cloud from a CSV file with header `id,X1,X2,X3,V`.
    pub fn read_csv(path: impl AsRef<Path>, dim: usize) -> Result<Self> {
        let path = path.as_ref();
        let file = File::open(path).map_err(|e| CpdError::io(path, e))?;
        Self::from_csv_reader(BufReader::new(file), dim)
    }

    pub fn from_csv_reader<R: std::io::Read>(reader: R, dim: usize) -> Result<Self> {
        #[derive(Deserialize)]
        struct Row {
            id: usize,
            #[serde(rename = "X1")]
            x1: f64,
            #[serde(rename = "X2")]
            x2: f64,
            #[serde(rename = "X3")]
            x3: f64,
            #[serde(rename = "V")]
            v: f64,
        }
        let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(reader);
        let headers = rdr.headers()?.clone();
        let expected = ["id", "X1", "X2", "X3", "V"];
        if headers.iter().collect::<Vec<_>>() != expected {
            return Err(CpdError::InvalidInput(format!(
                "expected header {}, got {}",
                expected.join(","),
                headers.iter().collect::<Vec<_>>().join(",")
            )));
        }
        let mut rows: Vec<Row> = Vec::new();
        for rec in rdr.deserialize() {
            rows.push(rec?);
        }
        rows.sort_by_key(|r| r.id);
        if let Some(bad) = rows.iter().enumerate().find(|(k, r)| r.id != *k) {
            return Err(CpdError::InvalidInput(format!("point ids must be 0..n-1, found {}", bad.1.id)));
        }
        let positions = rows.iter().map(|r| Vec3::new(r.x1, r.x2, r.x3)).collect();
        let volumes = rows.iter().map(|r| r.v).collect();
        Self::new(dim, positions, volumes, None)
    }

    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["id", "X1", "X2", "X3", "V"])?;
        for (a, (p, v)) in self.positions.iter().zip(&self.volumes).enumerate() {
            w.write_record(&[a.to_string(), p.x.to_string(), p.y.to_string(), p.z.to_string(), v.to_string()])?;
        }
        w.flush().map_err(|e| CpdError::io("<cloud csv>", e))?;
        Ok(())
    }
}

/// Cell-centred uniform grid over `domain` with the cells whose centres lie
/// strictly inside a hole removed. Each point carries the volume `spacing^dim`.
pub fn generate_uniform_grid(domain: &AxisBox, holes: &[AxisBox], spacing: f64, dim: usize) -> Result<PointCloud> {
    if dim != 2 && dim != 3 {
        return Err(CpdError::InvalidInput(format!("dimension must be 2 or 3, got {dim}")));
    }
    if !(spacing > 0.0) || !spacing.is_finite() {
        return Err(CpdError::InvalidInput(format!("spacing must be positive, got {spacing}")));
    }
    let mut counts = [1usize; 3];
    for (axis, count) in counts.iter_mut().enumerate().take(dim) {
        let extent = domain.extent(axis);
        let cells = extent / spacing;
        let rounded = cells.round();
        if !(extent > 0.0) || rounded < 1.0 || (cells - rounded).abs() > CONFORMITY_TOL * cells.max(1.0) {
            return Err(CpdError::NonConformingDomain { axis, extent, spacing });
        }
        *count = rounded as usize;
    }
    for hole in holes {
        for d in 0..dim {
            if hole.min[d] < domain.min[d] || hole.max[d] > domain.max[d] || hole.min[d] >= hole.max[d] {
                return Err(CpdError::InvalidInput(format!("hole {hole:?} does not lie inside the domain")));
            }
        }
    }

    let cell_volume = spacing.powi(dim as i32);
    let mut positions = Vec::with_capacity(counts.iter().product());
    // x varies fastest
    for k in 0..counts[2] {
        for j in 0..counts[1] {
            for i in 0..counts[0] {
                let idx = [i, j, k];
                let mut p = Vec3::zeros();
                for d in 0..dim {
                    p[d] = domain.min[d] + (idx[d] as f64 + 0.5) * spacing;
                }
                if holes.iter().any(|h| h.strictly_contains(&p, dim)) {
                    continue;
                }
                positions.push(p);
            }
        }
    }
    if positions.is_empty() {
        return Err(CpdError::EmptyCloud);
    }
    let volumes = vec![cell_volume; positions.len()];
    let n = positions.len();
    Ok(PointCloud { dim, positions, volumes, tags: vec![BoundaryTag::Interior; n], spacing: Some(spacing) })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn unit_square_four_points() {
        let cloud = generate_uniform_grid(&AxisBox::unit(2), &[], 0.5, 2).unwrap();
        assert_eq!(cloud.len(), 4);
        let expected = [(0.25, 0.25), (0.75, 0.25), (0.25, 0.75), (0.75, 0.75)];
        for (p, (x, y)) in cloud.positions().iter().zip(expected) {
            assert_eq!((p.x, p.y, p.z), (x, y, 0.0));
        }
        assert!(cloud.volumes().iter().all(|&v| v == 0.25));
        assert_eq!(cloud.total_volume(), 1.0);
    }

    #[test]
    fn square_with_central_hole() {
        let hole = AxisBox::new([0.3, 0.3, 0.0], [0.7, 0.7, 0.0]);
        let cloud = generate_uniform_grid(&AxisBox::unit(2), &[hole], 0.1, 2).unwrap();
        // brute-force count of cell centres strictly inside the hole
        let removed = (0..10)
            .flat_map(|i| (0..10).map(move |j| (i, j)))
            .filter(|&(i, j)| {
                let (x, y) = ((i as f64 + 0.5) * 0.1, (j as f64 + 0.5) * 0.1);
                x > 0.3 && x < 0.7 && y > 0.3 && y < 0.7
            })
            .count();
        assert_eq!(removed, 16);
        assert_eq!(cloud.len(), 100 - removed);
        assert_relative_eq!(cloud.total_volume(), 0.84, max_relative = 1e-12);
    }

    #[test]
    fn unit_cube() {
        let cloud = generate_uniform_grid(&AxisBox::unit(3), &[], 0.25, 3).unwrap();
        assert_eq!(cloud.len(), 64);
        assert!(cloud.volumes().iter().all(|&v| v == 0.015625));
        assert_relative_eq!(cloud.total_volume(), 1.0, max_relative = 1e-12);
    }

    #[test]
    fn non_conforming_spacing() {
        let err = generate_uniform_grid(&AxisBox::unit(2), &[], 0.3, 2).unwrap_err();
        assert!(matches!(err, CpdError::NonConformingDomain { axis: 0, .. }));
    }

    #[test]
    fn everything_removed() {
        let hole = AxisBox::new([0.0, 0.0, 0.0], [1.0, 1.0, 0.0]);
        let err = generate_uniform_grid(&AxisBox::unit(2), &[hole], 0.5, 2).unwrap_err();
        assert!(matches!(err, CpdError::EmptyCloud));
    }

    #[test]
    fn csv_round_trip_and_header_check() {
        let cloud = generate_uniform_grid(&AxisBox::unit(3), &[], 0.5, 3).unwrap();
        let mut buf = Vec::new();
        cloud.write_csv(&mut buf).unwrap();
        let back = PointCloud::from_csv_reader(buf.as_slice(), 3).unwrap();
        assert_eq!(back.positions(), cloud.positions());
        assert_eq!(back.volumes(), cloud.volumes());
        assert_eq!(back.spacing(), None);

        let bad = "id,x,y,z,V\n0,0,0,0,1\n";
        assert!(PointCloud::from_csv_reader(bad.as_bytes(), 3).is_err());
    }

    #[test]
    fn rejects_duplicates_and_bad_volumes() {
        let p = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(0.0, 0.0, 0.0)];
        assert!(PointCloud::new(3, p, vec![1.0, 1.0], None).is_err());
        let p = vec![Vec3::new(0.0, 0.0, 0.0), Vec3::new(1.0, 0.0, 0.0)];
        assert!(PointCloud::new(3, p, vec![1.0, 0.0], None).is_err());
    }
}
