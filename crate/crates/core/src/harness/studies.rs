use std::io::Write;

use rayon::prelude::*;
use serde::Serialize;

use super::config::ScenarioConfig;
use super::{run_scenario, RunOutput};
use crate::assembly::State;
use crate::error::{CpdError, Result};
use crate::geometry::{AxisBox, PointCloud, Vec3};

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PoissonRow {
    pub ratio: f64,
    pub nu: f64,
}

/// Effective Poisson ratio of a uniaxially loaded block.
///
/// The lateral strain is taken between the points nearest the centres of
/// the two lateral faces normal to the first non-loaded axis. The axial
/// strain is taken between the points nearest `centre -/+ extent/4` on the
/// loading axis, inside the unconstrained region.
pub fn measure_poisson(cloud: &PointCloud, state: &State, domain: &AxisBox, axis: usize) -> f64 {
    let lateral = if axis == 0 { 1 } else { 0 };
    let centre = Vec3::from(domain.center());
    let probe = |at: Vec3| {
        let a = cloud.nearest(&at);
        (*cloud.position(a), state.displacement(cloud, a))
    };
    let strain = |c: usize, lo: Vec3, hi: Vec3| {
        let ((xl, ul), (xh, uh)) = (probe(lo), probe(hi));
        (uh[c] - ul[c]) / (xh[c] - xl[c])
    };
    let mut lo = centre;
    let mut hi = centre;
    lo[lateral] = domain.min[lateral];
    hi[lateral] = domain.max[lateral];
    let lat = strain(lateral, lo, hi);
    let (mut lo, mut hi) = (centre, centre);
    lo[axis] -= 0.25 * domain.extent(axis);
    hi[axis] += 0.25 * domain.extent(axis);
    let ax = strain(axis, lo, hi);
    -lat / ax
}

/// Effective Poisson ratio for each stiffness ratio `C2/C1` (2D) or `C3/C1` (3D).
pub fn poisson_study(cfg: &ScenarioConfig, ratios: &[f64]) -> Result<Vec<PoissonRow>> {
    cfg.validate()?;
    ratios
        .par_iter()
        .map(|&ratio| {
            let mut c = cfg.clone();
            let enabled = if c.dim == 2 { c.interactions.two } else { c.interactions.three };
            if ratio != 0.0 && !enabled {
                return Err(CpdError::InvalidConfig(format!(
                    "ratio {ratio} needs the {} interaction enabled",
                    if c.dim == 2 { "two-neighbour" } else { "three-neighbour" }
                )));
            }
            if c.dim == 2 {
                c.c2 = ratio * c.c1;
            } else {
                c.c3 = ratio * c.c1;
            }
            let out = run_scenario(&c, None)?;
            Ok(PoissonRow { ratio, nu: measure_poisson(&out.cloud, &out.state, &c.domain(), c.load.axis) })
        })
        .collect()
}

pub fn write_poisson_csv<W: Write>(rows: &[PoissonRow], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["ratio", "nu"])?;
    for r in rows {
        w.write_record(&[format!("{}", r.ratio), format!("{:e}", r.nu)])?;
    }
    w.flush().map_err(|e| CpdError::io("<poisson csv>", e))?;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyRow {
    pub spacing: f64,
    pub horizon: f64,
    /// Probe displacement components, in the order of the configured point probes.
    pub values: Vec<f64>,
}

/// Probe displacements across a sequence of discretisations.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StudyTable {
    pub probe_names: Vec<String>,
    pub rows: Vec<StudyRow>,
}

impl StudyTable {
    /// `max_p |v_p(k+1) - v_p(k)|` for consecutive rows.
    pub fn successive_differences(&self) -> Vec<f64> {
        self.rows
            .windows(2)
            .map(|w| w[0].values.iter().zip(&w[1].values).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max))
            .collect()
    }

    /// True if the successive differences strictly decrease; tables with
    /// fewer than three rows carry no trend and pass.
    pub fn differences_decrease(&self) -> bool {
        self.successive_differences().windows(2).all(|w| w[1] < w[0])
    }

    /// CSV `spacing,horizon,<probe names...>,difference`.
    pub fn write_csv<W: Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        let mut header = vec!["spacing".to_string(), "horizon".to_string()];
        header.extend(self.probe_names.iter().cloned());
        header.push("difference".into());
        w.write_record(&header)?;
        let diffs = self.successive_differences();
        for (k, row) in self.rows.iter().enumerate() {
            let mut rec = vec![format!("{}", row.spacing), format!("{}", row.horizon)];
            rec.extend(row.values.iter().map(|v| format!("{v:e}")));
            rec.push(if k == 0 { String::new() } else { format!("{:e}", diffs[k - 1]) });
            w.write_record(&rec)?;
        }
        w.flush().map_err(|e| CpdError::io("<study csv>", e))?;
        Ok(())
    }
}

fn probe_values(cfg: &ScenarioConfig, out: &RunOutput) -> Vec<f64> {
    cfg.outputs.points.iter().map(|p| out.displacement_near(p.at)[p.component]).collect()
}

fn study(cfg: &ScenarioConfig, runs: Vec<ScenarioConfig>) -> Result<StudyTable> {
    if cfg.outputs.points.is_empty() {
        return Err(CpdError::InvalidConfig("studies need at least one entry in outputs.points".into()));
    }
    let rows = runs
        .par_iter()
        .map(|c| {
            let out = run_scenario(c, None)?;
            Ok(StudyRow { spacing: c.spacing, horizon: c.horizon(), values: probe_values(c, &out) })
        })
        .collect::<Result<_>>()?;
    Ok(StudyTable { probe_names: cfg.outputs.points.iter().map(|p| p.name.clone()).collect(), rows })
}

/// Grid refinement at the fixed horizon of `cfg`.
pub fn convergence_study(cfg: &ScenarioConfig, spacings: &[f64]) -> Result<StudyTable> {
    cfg.validate()?;
    let horizon = cfg.horizon();
    let runs = spacings
        .iter()
        .map(|&dx| ScenarioConfig { spacing: dx, horizon: Some(horizon), horizon_ratio: None, ..cfg.clone() })
        .collect();
    study(cfg, runs)
}

/// Horizon reduction at the fixed horizon-to-spacing ratio of `cfg`; the
/// spacing of each run is `horizon / ratio`.
pub fn nonlocality_study(cfg: &ScenarioConfig, horizons: &[f64]) -> Result<StudyTable> {
    cfg.validate()?;
    let ratio = cfg.horizon() / cfg.spacing;
    let runs = horizons
        .iter()
        .map(|&h| ScenarioConfig { spacing: h / ratio, horizon: Some(h), horizon_ratio: None, ..cfg.clone() })
        .collect();
    study(cfg, runs)
}
