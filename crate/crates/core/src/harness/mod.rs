//! Scenario definitions, the parameter studies and their file outputs.

mod config;
mod output;
mod studies;

use std::fs::File;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use crate::assembly::{Assembler, State};
use crate::error::{CpdError, Result};
use crate::geometry::{
    build_neighbor_table, compute_effective_volumes, generate_uniform_grid, quadrature_fidelity_report,
    write_fidelity_csv, NeighborTable, PointCloud, Vec3,
};
use crate::solver::{run_incremental, tag_boundary_layers, write_snapshot_csv, NewtonLog};

pub use config::{LoadConfig, Lateral, OutputConfig, ProbeLine, ProbePoint, ScenarioConfig, SPARSE_HORIZON_RATIO};
pub use output::{line_members, write_probe_line_csv, write_vtk};
pub use studies::{
    convergence_study, measure_poisson, nonlocality_study, poisson_study, write_poisson_csv, PoissonRow, StudyRow,
    StudyTable,
};

/// Discretised problem: tagged cloud and neighbour table with volumes.
pub struct Discretisation {
    pub cloud: PointCloud,
    pub table: NeighborTable,
}

pub fn discretise(cfg: &ScenarioConfig) -> Result<Discretisation> {
    let domain = cfg.domain();
    let cloud = generate_uniform_grid(&domain, &cfg.holes, cfg.spacing, cfg.dim)?;
    let program = cfg.load_program();
    let cloud = tag_boundary_layers(&cloud, &domain, cfg.layer_width(), &program.faces())?;
    let table = build_neighbor_table(&cloud, cfg.horizon(), cfg.interactions)?;
    let table = compute_effective_volumes(&cloud, table)?;
    Ok(Discretisation { cloud, table })
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub cloud: PointCloud,
    pub state: State,
    pub log: NewtonLog,
    pub warnings: Vec<String>,
    /// Files written, in order.
    pub files: Vec<PathBuf>,
}

impl RunOutput {
    /// Displacement of the point nearest `at`.
    pub fn displacement_near(&self, at: [f64; 3]) -> Vec3 {
        let a = self.cloud.nearest(&Vec3::from(at));
        self.state.displacement(&self.cloud, a)
    }
}

fn create(dir: &Path, name: &str, files: &mut Vec<PathBuf>) -> Result<BufWriter<File>> {
    let path = dir.join(name);
    let f = File::create(&path).map_err(|e| CpdError::io(&path, e))?;
    files.push(path);
    Ok(BufWriter::new(f))
}

/// Grid, neighbourhoods, volumes and the incremental solve for one scenario.
///
/// With `output_dir` set, the Newton log, snapshots, probes and optional
/// sparsity, fidelity and VTK files are written there. The Newton log and
/// the snapshots of completed increments are flushed even when a later
/// increment fails.
pub fn run_scenario(cfg: &ScenarioConfig, output_dir: Option<&Path>) -> Result<RunOutput> {
    let warnings = cfg.validate()?;
    for w in &warnings {
        log::warn!("{w}");
    }
    let disc = discretise(cfg)?;
    let (cloud, table) = (&disc.cloud, &disc.table);
    let mat = cfg.material()?;
    let asm = Assembler::new(cloud, table, &mat, cfg.mode)?;
    let program = cfg.load_program();
    let prescription = program.prescription(cloud, &cfg.domain(), cfg.layer_width())?;

    let mut files = Vec::new();
    if let Some(dir) = output_dir {
        std::fs::create_dir_all(dir).map_err(|e| CpdError::io(dir, e))?;
        cloud.write_csv(create(dir, "cloud.csv", &mut files)?)?;
        if cfg.outputs.fidelity {
            write_fidelity_csv(&quadrature_fidelity_report(table)?, create(dir, "fidelity.csv", &mut files)?)?;
        }
    }

    let mut partial = NewtonLog::default();
    let result = run_incremental(&asm, &prescription, &program, false, |inc, state, l| {
        partial.increments.push(l.clone());
        if let (Some(dir), true) = (output_dir, cfg.outputs.snapshots) {
            write_snapshot_csv(cloud, state, create(dir, &format!("snapshot_{inc:04}.csv"), &mut files)?)?;
        }
        Ok(())
    });
    let result = match result {
        Ok(r) => r,
        Err(e) => {
            if let (Some(dir), true) = (output_dir, cfg.outputs.newton_log) {
                partial.write_csv(create(dir, "newton_log.csv", &mut files)?)?;
            }
            return Err(e);
        }
    };

    if let Some(dir) = output_dir {
        if cfg.outputs.newton_log {
            result.log.write_csv(create(dir, "newton_log.csv", &mut files)?)?;
        }
        write_snapshot_csv(cloud, &result.state, create(dir, "snapshot_final.csv", &mut files)?)?;
        for line in &cfg.outputs.lines {
            let name = format!("probe_{}.csv", line.name);
            write_probe_line_csv(cloud, &result.state, line, create(dir, &name, &mut files)?)?;
        }
        if !cfg.outputs.points.is_empty() {
            output::write_probe_points_csv(cloud, &result.state, &cfg.outputs.points, create(dir, "probe_points.csv", &mut files)?)?;
        }
        if cfg.outputs.sparsity {
            asm.tangent(&result.state)?.write_sparsity_csv(create(dir, "sparsity.csv", &mut files)?)?;
        }
        if cfg.outputs.vtk {
            write_vtk(cloud, &result.state, create(dir, "displacement.vtk", &mut files)?)?;
        }
    }
    Ok(RunOutput { cloud: disc.cloud, state: result.state, log: result.log, warnings, files })
}
