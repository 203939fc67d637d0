use std::io::Write;

use serde::Serialize;

use super::{NeighborTable, PointCloud};
use crate::error::{CpdError, Result};

/// Quadrature weights of one collocation point.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EffectiveVolumes {
    /// Discrete neighbourhood volume: sum of the neighbour volumes.
    pub neighborhood: f64,
    pub one: f64,
    pub two: Option<f64>,
    pub three: Option<f64>,
}

/// Fills in the neighbourhood volume and the effective volumes
/// `V_H / #N1`, `V_H^2 / #N2`, `V_H^3 / #N3` of every point.
pub fn compute_effective_volumes(cloud: &PointCloud, mut table: NeighborTable) -> Result<NeighborTable> {
    if cloud.len() != table.len() {
        return Err(CpdError::InvalidInput("neighbour table does not match the cloud".into()));
    }
    let flags = table.interactions();
    let mut out = Vec::with_capacity(table.len());
    for a in 0..table.len() {
        let n1 = table.count_one(a);
        if n1 == 0 {
            return Err(CpdError::IsolatedPoint { point: a });
        }
        let vh: f64 = table.neighbors(a).iter().map(|&i| cloud.volume(i as usize)).sum();
        let two = if flags.two {
            let n2 = table.count_two(a);
            if n2 == 0 {
                return Err(CpdError::DegenerateNeighborhood { point: a, kind: "pairs" });
            }
            Some(vh * vh / n2 as f64)
        } else {
            None
        };
        let three = if flags.three {
            let n3 = table.count_three(a);
            if n3 == 0 {
                return Err(CpdError::DegenerateNeighborhood { point: a, kind: "triplets" });
            }
            Some(vh * vh * vh / n3 as f64)
        } else {
            None
        };
        out.push(EffectiveVolumes { neighborhood: vh, one: vh / n1 as f64, two, three });
    }
    table.volumes = Some(out);
    Ok(table)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FidelityCheck {
    One,
    Two,
    Three,
}

impl FidelityCheck {
    pub fn as_str(self) -> &'static str {
        match self {
            Self::One => "one",
            Self::Two => "two",
            Self::Three => "three",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct FidelityRow {
    pub point_id: usize,
    pub check: FidelityCheck,
    pub lhs: f64,
    pub rhs: f64,
    pub rel_err: f64,
}

/// Neumaier-compensated sum of `count` copies of `value`, accumulated one term
/// at a time as the quadrature would.
fn compensated_repeat(value: f64, count: usize) -> f64 {
    let (mut sum, mut comp) = (0.0f64, 0.0f64);
    for _ in 0..count {
        let t = sum + value;
        if sum.abs() >= value.abs() {
            comp += (sum - t) + value;
        } else {
            comp += (value - t) + sum;
        }
        sum = t;
    }
    sum + comp
}

/// Evaluates the discrete horizon integrals of unity against `V_H`, `V_H^2`
/// and `V_H^3` for every point and every enabled interaction.
pub fn quadrature_fidelity_report(table: &NeighborTable) -> Result<Vec<FidelityRow>> {
    let vols = table.require_volumes()?;
    let mut rows = Vec::new();
    let push = |rows: &mut Vec<FidelityRow>, point_id, check, lhs: f64, rhs: f64| {
        let rel_err = (lhs - rhs).abs() / rhs.abs();
        rows.push(FidelityRow { point_id, check, lhs, rhs, rel_err });
    };
    for (a, v) in vols.iter().enumerate() {
        let vh = v.neighborhood;
        push(&mut rows, a, FidelityCheck::One, compensated_repeat(v.one, table.count_one(a)), vh);
        if let Some(v2) = v.two {
            push(&mut rows, a, FidelityCheck::Two, compensated_repeat(v2, table.count_two(a)), vh * vh);
        }
        if let Some(v3) = v.three {
            push(&mut rows, a, FidelityCheck::Three, compensated_repeat(v3, table.count_three(a)), vh * vh * vh);
        }
    }
    Ok(rows)
}

pub fn write_fidelity_csv<W: Write>(rows: &[FidelityRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["point_id", "check", "lhs", "rhs", "rel_err"])?;
    for r in rows {
        w.write_record(&[
            r.point_id.to_string(),
            r.check.as_str().to_string(),
            format!("{:e}", r.lhs),
            format!("{:e}", r.rhs),
            format!("{:e}", r.rel_err),
        ])?;
    }
    w.flush().map_err(|e| CpdError::io("<fidelity csv>", e))?;
    Ok(())
}
