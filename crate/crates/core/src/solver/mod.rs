//! Dirichlet boundary layers, incremental loading and Newton-Raphson.

mod newton;

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::assembly::{Assembler, State};
use crate::error::{CpdError, Result};
use crate::geometry::{AxisBox, BoundaryTag, PointCloud, Vec3};

pub use newton::{newton_solve, reaction_forces, solve_reduced, IncrementLog, IterationRecord, NewtonLog};

pub const DEFAULT_TOLERANCE: f64 = 1e-12;
pub const DEFAULT_MAX_ITERATIONS: usize = 20;

/// Maximum number of halvings of one increment when bisection is enabled.
const MAX_BISECTIONS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Min,
    Max,
}

/// A face of the domain box.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Face {
    pub axis: usize,
    pub side: Side,
}

impl Face {
    pub const fn new(axis: usize, side: Side) -> Self {
        Self { axis, side }
    }

    fn distance(&self, domain: &AxisBox, p: &Vec3) -> f64 {
        match self.side {
            Side::Min => p[self.axis] - domain.min[self.axis],
            Side::Max => domain.max[self.axis] - p[self.axis],
        }
    }

    fn tag(&self) -> BoundaryTag {
        match (self.axis, self.side) {
            (0, Side::Min) => BoundaryTag::LayerLeft,
            (0, Side::Max) => BoundaryTag::LayerRight,
            _ => BoundaryTag::LayerOther,
        }
    }
}

/// Points whose distance to `face` is strictly below `width`.
pub fn layer_members(cloud: &PointCloud, domain: &AxisBox, width: f64, face: Face) -> Vec<usize> {
    (0..cloud.len()).filter(|&a| face.distance(domain, cloud.position(a)) < width).collect()
}

/// Tags the points within `width` of each face as that face's layer.
///
/// Faces normal to the first axis become [`BoundaryTag::LayerLeft`] and
/// [`BoundaryTag::LayerRight`]; any other face is [`BoundaryTag::LayerOther`].
pub fn tag_boundary_layers(cloud: &PointCloud, domain: &AxisBox, width: f64, faces: &[Face]) -> Result<PointCloud> {
    if !(width > 0.0) {
        return Err(CpdError::InvalidInput(format!("layer width must be positive, got {width}")));
    }
    for f in faces {
        if f.axis >= cloud.dim() {
            return Err(CpdError::InvalidInput(format!("face axis {} outside a {}D domain", f.axis, cloud.dim())));
        }
        let opposite = Face { axis: f.axis, side: if f.side == Side::Min { Side::Max } else { Side::Min } };
        if faces.contains(&opposite) && 2.0 * width > domain.extent(f.axis) {
            return Err(CpdError::LayerOverlap(format!(
                "two layers of width {width} do not fit in extent {} along axis {}",
                domain.extent(f.axis),
                f.axis
            )));
        }
    }
    let mut tags = cloud.tags().to_vec();
    let mut owner: Vec<Option<Face>> = vec![None; cloud.len()];
    for &f in faces {
        for a in layer_members(cloud, domain, width, f) {
            if let Some(prev) = owner[a] {
                if prev.axis == f.axis && prev.side != f.side {
                    return Err(CpdError::LayerOverlap(format!("point {a} lies in both layers normal to axis {}", f.axis)));
                }
            }
            owner[a] = Some(f);
            tags[a] = f.tag();
        }
    }
    let mut out = cloud.clone();
    out.set_tags(tags);
    Ok(out)
}

/// Final displacement of one boundary layer; `None` leaves a component free.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LayerLoad {
    pub face: Face,
    pub displacement: [Option<f64>; 3],
}

/// Zero-displacement constraint on selected components of the point nearest `at`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Pin {
    pub at: [f64; 3],
    pub components: [bool; 3],
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadProgram {
    pub n_increments: usize,
    pub layers: Vec<LayerLoad>,
    #[serde(default)]
    pub pins: Vec<Pin>,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    /// Halve an increment that fails to converge instead of aborting.
    #[serde(default)]
    pub bisection: bool,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

impl LoadProgram {
    /// Uniaxial extension of `fraction` times the domain length along `axis`,
    /// split evenly between the two layers normal to it. With `free_lateral`
    /// only the axial component of the layers is prescribed and pins remove
    /// the remaining rigid-body modes; otherwise the layers are clamped.
    pub fn uniaxial(domain: &AxisBox, dim: usize, axis: usize, fraction: f64, n_increments: usize, free_lateral: bool) -> Self {
        let half = 0.5 * fraction * domain.extent(axis);
        let mut layers = Vec::new();
        for (side, u) in [(Side::Min, -half), (Side::Max, half)] {
            let mut d = [None; 3];
            for c in 0..dim {
                d[c] = if c == axis { Some(u) } else if free_lateral { None } else { Some(0.0) };
            }
            layers.push(LayerLoad { face: Face::new(axis, side), displacement: d });
        }
        let mut pins = Vec::new();
        if free_lateral {
            let centre = domain.center();
            let lateral: Vec<usize> = (0..dim).filter(|&c| c != axis).collect();
            let mut comps = [false; 3];
            lateral.iter().for_each(|&c| comps[c] = true);
            pins.push(Pin { at: centre, components: comps });
            if dim == 3 {
                // second pin stops the rotation about the loading axis
                let mut at = centre;
                at[lateral[0]] += 0.25 * domain.extent(lateral[0]);
                let mut comps = [false; 3];
                comps[lateral[1]] = true;
                pins.push(Pin { at, components: comps });
            }
        }
        Self {
            n_increments,
            layers,
            pins,
            tolerance: DEFAULT_TOLERANCE,
            max_iterations: DEFAULT_MAX_ITERATIONS,
            bisection: false,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_increments == 0 {
            return Err(CpdError::InvalidInput("at least one increment is required".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(CpdError::InvalidInput(format!("tolerance must be positive, got {}", self.tolerance)));
        }
        if self.max_iterations == 0 {
            return Err(CpdError::InvalidInput("max_iterations must be at least 1".into()));
        }
        Ok(())
    }

    pub fn faces(&self) -> Vec<Face> {
        self.layers.iter().map(|l| l.face).collect()
    }

    /// Resolves layers and pins into `(dof, final displacement)` pairs.
    pub fn prescription(&self, cloud: &PointCloud, domain: &AxisBox, width: f64) -> Result<Prescription> {
        self.validate()?;
        tag_boundary_layers(cloud, domain, width, &self.faces())?;
        let mut target: Vec<Option<f64>> = vec![None; 3 * cloud.len()];
        for layer in &self.layers {
            for a in layer_members(cloud, domain, width, layer.face) {
                for c in 0..cloud.dim() {
                    if let Some(u) = layer.displacement[c] {
                        target[3 * a + c] = Some(u);
                    }
                }
            }
        }
        for pin in &self.pins {
            let a = cloud.nearest(&Vec3::from(pin.at));
            for c in 0..cloud.dim() {
                if pin.components[c] && target[3 * a + c].is_none() {
                    target[3 * a + c] = Some(0.0);
                }
            }
        }
        let dofs = target.iter().enumerate().filter_map(|(d, u)| u.map(|u| (d, u))).collect();
        Ok(Prescription { dofs })
    }
}

/// Prescribed DOFs with their final displacements.
#[derive(Debug, Clone, PartialEq)]
pub struct Prescription {
    pub dofs: Vec<(usize, f64)>,
}

impl Prescription {
    /// Sets every prescribed DOF to `X + lambda u`.
    pub fn apply(&self, cloud: &PointCloud, state: &mut State, lambda: f64) {
        for &(d, u) in &self.dofs {
            state.prescribe(d, cloud.position(d / 3)[d % 3] + lambda * u);
        }
    }
}

#[derive(Debug, Clone)]
pub struct IncrementalResult {
    pub state: State,
    pub log: NewtonLog,
    /// Converged state after each increment, when requested.
    pub snapshots: Vec<State>,
}

/// Ramps the prescription linearly over `program.n_increments` increments,
/// starting each Newton solve from the previous converged state.
///
/// `on_increment` sees every converged increment as it completes, so callers
/// can flush outputs before a later failure.
pub fn run_incremental(
    asm: &Assembler,
    prescription: &Prescription,
    program: &LoadProgram,
    keep_snapshots: bool,
    mut on_increment: impl FnMut(usize, &State, &IncrementLog) -> Result<()>,
) -> Result<IncrementalResult> {
    program.validate()?;
    let cloud = asm.cloud();
    let mut state = State::reference(cloud);
    prescription.apply(cloud, &mut state, 0.0);
    let mut log = NewtonLog::default();
    let mut snapshots = Vec::new();
    let n = program.n_increments as f64;
    for inc in 1..=program.n_increments {
        let (start, end) = ((inc - 1) as f64 / n, inc as f64 / n);
        let logs = solve_span(asm, prescription, program, &mut state, start, end, 0)
            .map_err(|e| CpdError::Increment { increment: inc, source: Box::new(e) })?;
        for mut l in logs {
            l.increment = inc;
            on_increment(inc, &state, &l)?;
            log.increments.push(l);
        }
        if keep_snapshots {
            snapshots.push(state.clone());
        }
    }
    Ok(IncrementalResult { state, log, snapshots })
}

/// Advances the load parameter from `start` to `end`, bisecting on failure if enabled.
fn solve_span(
    asm: &Assembler,
    prescription: &Prescription,
    program: &LoadProgram,
    state: &mut State,
    start: f64,
    end: f64,
    depth: usize,
) -> Result<Vec<IncrementLog>> {
    let mut trial = state.clone();
    prescription.apply(asm.cloud(), &mut trial, end);
    match newton_solve(asm, trial, program.tolerance, program.max_iterations) {
        Ok((s, mut l)) => {
            *state = s;
            l.load_factor = end;
            Ok(vec![l])
        }
        Err(e) if program.bisection && depth < MAX_BISECTIONS && bisectable(&e) => {
            log::warn!("bisecting load step [{start}, {end}] after: {e}");
            let mid = 0.5 * (start + end);
            let mut logs = solve_span(asm, prescription, program, state, start, mid, depth + 1)?;
            logs.extend(solve_span(asm, prescription, program, state, mid, end, depth + 1)?);
            Ok(logs)
        }
        Err(e) => Err(e),
    }
}

fn bisectable(e: &CpdError) -> bool {
    e.is_step_degeneracy() || matches!(e, CpdError::NonConvergence { .. } | CpdError::SingularTangent(_))
}

/// Snapshot CSV `point_id,X1,X2,X3,x1,x2,x3,u1,u2,u3,tag`.
pub fn write_snapshot_csv<W: Write>(cloud: &PointCloud, state: &State, writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["point_id", "X1", "X2", "X3", "x1", "x2", "x3", "u1", "u2", "u3", "tag"])?;
    for a in 0..cloud.len() {
        let big = cloud.position(a);
        let x = state.position(a);
        let u = x - big;
        let mut rec = vec![a.to_string()];
        rec.extend(big.iter().chain(x.iter()).chain(u.iter()).map(|v| format!("{v:e}")));
        rec.push(cloud.tag(a).as_str().to_string());
        w.write_record(&rec)?;
    }
    w.flush().map_err(|e| CpdError::io("<snapshot csv>", e))?;
    Ok(())
}

#[cfg(test)]
mod tests;
