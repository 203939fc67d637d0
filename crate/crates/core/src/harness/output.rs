use std::io::Write;

use super::config::{ProbeLine, ProbePoint};
use crate::assembly::State;
use crate::error::{CpdError, Result};
use crate::geometry::{PointCloud, Vec3};

/// Points of the grid row through the point nearest `line.at`, sorted along `line.along`.
pub fn line_members(cloud: &PointCloud, line: &ProbeLine) -> Vec<usize> {
    let anchor = *cloud.position(cloud.nearest(&Vec3::from(line.at)));
    let mut ids: Vec<usize> = (0..cloud.len())
        .filter(|&a| {
            let p = cloud.position(a);
            (0..3).all(|c| c == line.along || p[c] == anchor[c])
        })
        .collect();
    ids.sort_by(|&a, &b| cloud.position(a)[line.along].total_cmp(&cloud.position(b)[line.along]));
    ids
}

fn displacement_record(cloud: &PointCloud, state: &State, a: usize) -> Vec<String> {
    let big = cloud.position(a);
    let u = state.displacement(cloud, a);
    let mut rec = vec![a.to_string()];
    rec.extend(big.iter().chain(u.iter()).map(|v| format!("{v:e}")));
    rec
}

/// CSV `point_id,X1,X2,X3,u1,u2,u3` along a probe line.
pub fn write_probe_line_csv<W: Write>(cloud: &PointCloud, state: &State, line: &ProbeLine, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["point_id", "X1", "X2", "X3", "u1", "u2", "u3"])?;
    for a in line_members(cloud, line) {
        w.write_record(&displacement_record(cloud, state, a))?;
    }
    w.flush().map_err(|e| CpdError::io("<probe csv>", e))?;
    Ok(())
}

/// CSV `name,point_id,X1,X2,X3,u1,u2,u3` for point probes.
pub(crate) fn write_probe_points_csv<W: Write>(
    cloud: &PointCloud,
    state: &State,
    points: &[ProbePoint],
    writer: W,
) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["name", "point_id", "X1", "X2", "X3", "u1", "u2", "u3"])?;
    for p in points {
        let a = cloud.nearest(&Vec3::from(p.at));
        let mut rec = vec![p.name.clone()];
        rec.extend(displacement_record(cloud, state, a));
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CpdError::io("<probe csv>", e))?;
    Ok(())
}

/// Legacy ASCII VTK polydata: reference positions as vertices with the
/// displacement as point data.
pub fn write_vtk<W: Write>(cloud: &PointCloud, state: &State, mut w: W) -> Result<()> {
    let io = |e| CpdError::io("<vtk>", e);
    let n = cloud.len();
    writeln!(w, "# vtk DataFile Version 3.0").map_err(io)?;
    writeln!(w, "cpd displacement").map_err(io)?;
    writeln!(w, "ASCII").map_err(io)?;
    writeln!(w, "DATASET POLYDATA").map_err(io)?;
    writeln!(w, "POINTS {n} double").map_err(io)?;
    for p in cloud.positions() {
        writeln!(w, "{:e} {:e} {:e}", p.x, p.y, p.z).map_err(io)?;
    }
    writeln!(w, "VERTICES {n} {}", 2 * n).map_err(io)?;
    for a in 0..n {
        writeln!(w, "1 {a}").map_err(io)?;
    }
    writeln!(w, "POINT_DATA {n}").map_err(io)?;
    writeln!(w, "VECTORS displacement double").map_err(io)?;
    for a in 0..n {
        let u = state.displacement(cloud, a);
        writeln!(w, "{:e} {:e} {:e}", u.x, u.y, u.z).map_err(io)?;
    }
    w.flush().map_err(io)?;
    Ok(())
}
