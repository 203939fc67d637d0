use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::assembly::AssemblyMode;
use crate::constitutive::Material;
use crate::error::{CpdError, Result};
use crate::geometry::{AxisBox, Interactions};
use crate::solver::{LoadProgram, DEFAULT_MAX_ITERATIONS, DEFAULT_TOLERANCE};

/// Below this horizon-to-spacing ratio a point has very few neighbours.
pub const SPARSE_HORIZON_RATIO: f64 = 2.0;

/// Lateral behaviour of the loaded layers.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Lateral {
    /// Layers are fully prescribed: axial displacement plus zero lateral displacement.
    #[default]
    Clamped,
    /// Only the axial displacement of the layers is prescribed; two pins remove
    /// the rigid-body modes.
    Free,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LoadConfig {
    /// Axis normal to the two loaded faces.
    #[serde(default)]
    pub axis: usize,
    /// Total extension as a fraction of the domain length along `axis`.
    pub extension: f64,
    pub increments: usize,
    #[serde(default)]
    pub lateral: Lateral,
    /// Layer thickness; defaults to the horizon.
    #[serde(default)]
    pub layer_width: Option<f64>,
    #[serde(default)]
    pub bisection: bool,
}

/// A point probe: displacement of the point nearest `at`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbePoint {
    pub name: String,
    pub at: [f64; 3],
    /// Displacement component reported by the studies.
    #[serde(default)]
    pub component: usize,
}

/// A probe line: the grid row through the point nearest `at`, running along `along`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ProbeLine {
    pub name: String,
    pub at: [f64; 3],
    pub along: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputConfig {
    /// One snapshot CSV per increment.
    #[serde(default)]
    pub snapshots: bool,
    #[serde(default)]
    pub points: Vec<ProbePoint>,
    #[serde(default)]
    pub lines: Vec<ProbeLine>,
    /// Sparsity CSV of the tangent at the final state.
    #[serde(default)]
    pub sparsity: bool,
    #[serde(default = "yes")]
    pub newton_log: bool,
    #[serde(default)]
    pub vtk: bool,
    #[serde(default)]
    pub fidelity: bool,
}

fn yes() -> bool {
    true
}

impl Default for OutputConfig {
    fn default() -> Self {
        Self { snapshots: false, points: vec![], lines: vec![], sparsity: false, newton_log: true, vtk: false, fidelity: false }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioConfig {
    pub dim: usize,
    /// Defaults to the unit square or cube.
    #[serde(default)]
    pub domain: Option<AxisBox>,
    #[serde(default)]
    pub holes: Vec<AxisBox>,
    pub spacing: f64,
    /// Horizon; exactly one of `horizon` and `horizon_ratio` must be given.
    #[serde(default)]
    pub horizon: Option<f64>,
    /// Horizon as a multiple of the spacing.
    #[serde(default)]
    pub horizon_ratio: Option<f64>,
    pub c1: f64,
    #[serde(default)]
    pub c2: f64,
    #[serde(default)]
    pub c3: f64,
    pub interactions: Interactions,
    #[serde(default)]
    pub mode: AssemblyMode,
    pub load: LoadConfig,
    #[serde(default = "default_tolerance")]
    pub tolerance: f64,
    #[serde(default = "default_max_iterations")]
    pub max_iterations: usize,
    #[serde(default)]
    pub outputs: OutputConfig,
    #[serde(default)]
    pub seed: u64,
}

fn default_tolerance() -> f64 {
    DEFAULT_TOLERANCE
}

fn default_max_iterations() -> usize {
    DEFAULT_MAX_ITERATIONS
}

impl ScenarioConfig {
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg: Self = serde_json::from_str(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| CpdError::io(path, e))?;
        Self::from_json(&text)
    }

    pub fn domain(&self) -> AxisBox {
        self.domain.unwrap_or_else(|| AxisBox::unit(self.dim))
    }

    pub fn horizon(&self) -> f64 {
        self.horizon.unwrap_or_else(|| self.horizon_ratio.unwrap_or(f64::NAN) * self.spacing)
    }

    pub fn layer_width(&self) -> f64 {
        self.load.layer_width.unwrap_or_else(|| self.horizon())
    }

    pub fn material(&self) -> Result<Material> {
        Material::new(self.c1, self.c2, self.c3, self.horizon(), self.interactions)
    }

    pub fn load_program(&self) -> LoadProgram {
        let mut p = LoadProgram::uniaxial(
            &self.domain(),
            self.dim,
            self.load.axis,
            self.load.extension,
            self.load.increments,
            self.load.lateral == Lateral::Free,
        );
        p.tolerance = self.tolerance;
        p.max_iterations = self.max_iterations;
        p.bisection = self.load.bisection;
        p
    }

    /// Schema checks that do not need the point cloud. Returns warnings.
    pub fn validate(&self) -> Result<Vec<String>> {
        let bad = |m: String| Err(CpdError::InvalidConfig(m));
        if self.dim != 2 && self.dim != 3 {
            return bad(format!("dim must be 2 or 3, got {}", self.dim));
        }
        if self.dim == 2 && self.interactions.three {
            return bad("three-neighbour interactions are not defined in 2D".into());
        }
        if !(self.spacing > 0.0) {
            return bad(format!("spacing must be positive, got {}", self.spacing));
        }
        match (self.horizon, self.horizon_ratio) {
            (Some(h), None) if h > 0.0 => {}
            (None, Some(r)) if r > 0.0 => {}
            (Some(_), Some(_)) => return bad("give either horizon or horizon_ratio, not both".into()),
            _ => return bad("a positive horizon or horizon_ratio is required".into()),
        }
        if self.load.axis >= self.dim {
            return bad(format!("load axis {} outside a {}D domain", self.load.axis, self.dim));
        }
        if self.load.increments == 0 {
            return bad("load.increments must be at least 1".into());
        }
        if !self.load.extension.is_finite() || self.load.extension <= -1.0 {
            return bad(format!("load.extension must be finite and above -1, got {}", self.load.extension));
        }
        if !(self.tolerance > 0.0) {
            return bad(format!("tolerance must be positive, got {}", self.tolerance));
        }
        for p in &self.outputs.points {
            if p.component >= self.dim {
                return bad(format!("probe '{}' component {} outside a {}D domain", p.name, p.component, self.dim));
            }
        }
        for l in &self.outputs.lines {
            if l.along >= self.dim {
                return bad(format!("probe line '{}' axis {} outside a {}D domain", l.name, l.along, self.dim));
            }
        }
        self.material().map_err(|e| CpdError::InvalidConfig(e.to_string()))?;
        let mut warnings = Vec::new();
        let ratio = self.horizon() / self.spacing;
        if ratio < SPARSE_HORIZON_RATIO {
            warnings.push(format!(
                "horizon/spacing = {ratio:.3} is below {SPARSE_HORIZON_RATIO}; points have very few neighbours"
            ));
        }
        Ok(warnings)
    }
}
