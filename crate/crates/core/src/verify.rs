//! Independent oracles for the assembled residual, tangent and energy.
//!
//! Finite differences of `Pi` and `R`, discrete angular momentum sums and
//! rigid-motion invariance are evaluated on randomly perturbed states.

use std::io::Write;

use nalgebra::{Rotation3, Unit};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::Serialize;

use crate::assembly::{Assembler, AssemblyMode, State};
use crate::error::{CpdError, Result};
use crate::geometry::{PointCloud, Vec3};

pub const FD_TOLERANCE: f64 = 1e-6;
pub const MOMENT_TOLERANCE: f64 = 1e-12;
pub const ROTATION_TOLERANCE: f64 = 1e-12;

/// Relative FD step with respect to the grid spacing.
pub const FD_STEP: f64 = 1e-6;
/// Largest random perturbation relative to the grid spacing.
pub const PERTURBATION: f64 = 0.1;

const MAX_RESAMPLES: usize = 20;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct VerificationReport {
    pub check: String,
    pub max_rel_error: f64,
    pub tolerance: f64,
    pub passed: bool,
    /// DOFs, columns or points whose error exceeds the tolerance.
    pub offending: Vec<usize>,
}

impl VerificationReport {
    fn new(check: impl Into<String>, max_rel_error: f64, tolerance: f64, offending: Vec<usize>) -> Self {
        Self { check: check.into(), max_rel_error, tolerance, passed: max_rel_error <= tolerance, offending }
    }
}

/// Writes reports as CSV `check,max_rel_error,tolerance,passed,offending`.
pub fn write_reports_csv<W: Write>(reports: &[VerificationReport], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    w.write_record(["check", "max_rel_error", "tolerance", "passed", "offending"])?;
    for r in reports {
        let offending: Vec<String> = r.offending.iter().map(|i| i.to_string()).collect();
        w.write_record(&[
            r.check.clone(),
            format!("{:e}", r.max_rel_error),
            format!("{:e}", r.tolerance),
            r.passed.to_string(),
            offending.join(" "),
        ])?;
    }
    w.flush().map_err(|e| CpdError::io("<verification csv>", e))?;
    Ok(())
}

/// Characteristic spacing of a cloud: the grid spacing if known, otherwise
/// the edge of a cube (or square) of the mean point volume.
pub fn characteristic_spacing(cloud: &PointCloud) -> f64 {
    cloud.spacing().unwrap_or_else(|| {
        let mean = cloud.total_volume() / cloud.len() as f64;
        mean.powf(1.0 / cloud.dim() as f64)
    })
}

/// Reference state with every free DOF perturbed uniformly in
/// `[-0.1, 0.1] * spacing`. Perturbations that collapse a bond, triangle or
/// tetrahedron are redrawn.
pub fn random_state(asm: &Assembler, rng: &mut ChaCha8Rng) -> Result<State> {
    let cloud = asm.cloud();
    let amp = PERTURBATION * characteristic_spacing(cloud);
    let mut last = None;
    for _ in 0..MAX_RESAMPLES {
        let mut s = State::reference(cloud);
        let free = s.free_dofs();
        let delta: Vec<f64> = free.iter().map(|_| rng.random_range(-amp..=amp)).collect();
        s.update_free(&free, &delta);
        match asm.energy(&s) {
            Ok(_) => return Ok(s),
            Err(e) if e.is_step_degeneracy() => last = Some(e),
            Err(e) => return Err(e),
        }
    }
    Err(last.expect("at least one sample"))
}

fn shifted(state: &State, dof: usize, h: f64) -> State {
    let mut s = state.clone();
    s.update_free(&[dof], &[h]);
    s
}

fn max_abs(v: &[f64]) -> f64 {
    v.iter().fold(0.0f64, |m, x| m.max(x.abs()))
}

/// Variational `R` against central differences of `Pi`, DOF by DOF.
pub fn fd_gradient_check(asm: &Assembler, state: &State) -> Result<VerificationReport> {
    let name = "fd_gradient";
    let mut var = Assembler::new(asm.cloud(), asm.table(), asm.material(), AssemblyMode::Variational)?;
    if let Some(f) = asm.fault() {
        var = var.with_fault(f);
    }
    // the reference configuration has R = 0 up to round-off, nothing to compare
    if state.positions() == asm.cloud().positions() {
        return Ok(VerificationReport::new(name, 0.0, FD_TOLERANCE, vec![]));
    }
    let r = var.residual(state)?;
    let free = state.free_dofs();
    let scale = free.iter().map(|&d| r[d].abs()).fold(0.0, f64::max);
    if scale == 0.0 {
        return Ok(VerificationReport::new(name, 0.0, FD_TOLERANCE, vec![]));
    }
    let h = FD_STEP * characteristic_spacing(asm.cloud());
    let errors: Vec<f64> = free
        .par_iter()
        .map(|&d| {
            let fd = (var.energy(&shifted(state, d, h))? - var.energy(&shifted(state, d, -h))?) / (2.0 * h);
            Ok((fd - r[d]).abs() / scale)
        })
        .collect::<Result<_>>()?;
    let offending = free.iter().zip(&errors).filter(|(_, &e)| e > FD_TOLERANCE).map(|(&d, _)| d).collect();
    Ok(VerificationReport::new(name, errors.iter().cloned().fold(0.0, f64::max), FD_TOLERANCE, offending))
}

/// `K` against central differences of `R`, column by column, in the mode of `asm`.
pub fn fd_tangent_check(asm: &Assembler, state: &State) -> Result<VerificationReport> {
    let name = match asm.mode() {
        AssemblyMode::Collocation => "fd_tangent_collocation",
        AssemblyMode::Variational => "fd_tangent_variational",
    };
    let k = asm.tangent(state)?;
    let scale = k.max_abs();
    if scale == 0.0 {
        return Ok(VerificationReport::new(name, 0.0, FD_TOLERANCE, vec![]));
    }
    let h = FD_STEP * characteristic_spacing(asm.cloud());
    let free = state.free_dofs();
    let errors: Vec<f64> = free
        .par_iter()
        .map(|&d| {
            let rp = asm.residual(&shifted(state, d, h))?;
            let rm = asm.residual(&shifted(state, d, -h))?;
            let worst = (0..rp.len())
                .map(|i| ((rp[i] - rm[i]) / (2.0 * h) - k.entry(i, d)).abs())
                .fold(0.0, f64::max);
            Ok(worst / scale)
        })
        .collect::<Result<_>>()?;
    let offending = free.iter().zip(&errors).filter(|(_, &e)| e > FD_TOLERANCE).map(|(&d, _)| d).collect();
    Ok(VerificationReport::new(name, errors.iter().cloned().fold(0.0, f64::max), FD_TOLERANCE, offending))
}

/// Per-point moment sums of the point-wise force terms, per interaction kind.
///
/// One-neighbour sums must vanish exactly; pair and triplet sums must stay
/// below `1e-12` times the matching magnitude scale.
pub fn angular_momentum_check(asm: &Assembler, state: &State) -> Result<VerificationReport> {
    let sums = asm.moment_sums(state)?;
    let mut worst = 0.0f64;
    let mut offending = Vec::new();
    for (a, m) in sums.iter().enumerate() {
        let mut bad = m.moment[0] != Vec3::zeros();
        if bad {
            worst = f64::INFINITY;
        }
        for k in 1..3 {
            if m.scale[k] > 0.0 {
                let rel = m.moment[k].norm() / m.scale[k];
                worst = worst.max(rel);
                bad |= rel > MOMENT_TOLERANCE;
            }
        }
        if bad {
            offending.push(a);
        }
    }
    Ok(VerificationReport::new("angular_momentum", worst, MOMENT_TOLERANCE, offending))
}

/// Random proper rotation; about the `z` axis only for planar clouds.
pub fn random_rotation(rng: &mut ChaCha8Rng, dim: usize) -> Rotation3<f64> {
    let angle = rng.random_range(-std::f64::consts::PI..std::f64::consts::PI);
    let axis = if dim == 2 {
        Vec3::z_axis()
    } else {
        loop {
            let v = Vec3::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0));
            if v.norm() > 1e-3 {
                break Unit::new_normalize(v);
            }
        }
    };
    Rotation3::from_axis_angle(&axis, angle)
}

/// `Pi(Q x)` against `Pi(x)` for `count` random rotations about the centroid.
pub fn rotation_check(asm: &Assembler, state: &State, count: usize, rng: &mut ChaCha8Rng) -> Result<VerificationReport> {
    let base = asm.energy(state)?;
    let n = state.len() as f64;
    let centroid = state.positions().iter().fold(Vec3::zeros(), |acc, p| acc + p) / n;
    let mut worst = 0.0f64;
    let mut offending = Vec::new();
    for q in 0..count {
        let rot = random_rotation(rng, asm.cloud().dim());
        let mut s = state.clone();
        s.map_positions(|_, p| centroid + rot * (p - centroid));
        let e = asm.energy(&s)?;
        let rel = if base == 0.0 { e.abs() } else { (e - base).abs() / base.abs() };
        if rel > ROTATION_TOLERANCE {
            offending.push(q);
        }
        worst = worst.max(rel);
    }
    Ok(VerificationReport::new("rotation_invariance", worst, ROTATION_TOLERANCE, offending))
}

/// Bitwise comparison of `Pi` and `R` before and after a rigid translation.
///
/// The state is first rounded to multiples of `2^-30` and shifted by a
/// power-of-two vector so that the translated coordinates are exact.
pub fn translation_check(asm: &Assembler, state: &State) -> Result<VerificationReport> {
    let q = 2f64.powi(30);
    let mut s = state.clone();
    s.map_positions(|_, p| p.map(|v| (v * q).round() / q));
    let mut moved = s.clone();
    let shift = if asm.cloud().dim() == 2 { Vec3::new(4.0, -2.0, 0.0) } else { Vec3::new(4.0, -2.0, 8.0) };
    moved.map_positions(|_, p| p + shift);
    let (a, b) = (asm.system(&s)?, asm.system(&moved)?);
    let mut offending: Vec<usize> = (0..a.residual.len()).filter(|&i| a.residual[i] != b.residual[i]).collect();
    let energy_equal = a.energy == b.energy;
    if !energy_equal {
        offending.insert(0, usize::MAX);
    }
    let worst = if offending.is_empty() {
        0.0
    } else {
        let dr: Vec<f64> = a.residual.iter().zip(&b.residual).map(|(x, y)| x - y).collect();
        (max_abs(&dr) / max_abs(&a.residual).max(f64::MIN_POSITIVE)).max((a.energy - b.energy).abs() / a.energy.abs())
    };
    Ok(VerificationReport::new("translation_invariance", worst, 0.0, offending))
}

/// Runs every oracle on `samples` random states drawn from `seed`, in both
/// assembly modes where the check depends on the mode.
pub fn verification_suite(asm: &Assembler, samples: usize, seed: u64) -> Result<Vec<VerificationReport>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let col = Assembler::new(asm.cloud(), asm.table(), asm.material(), AssemblyMode::Collocation)?;
    let var = Assembler::new(asm.cloud(), asm.table(), asm.material(), AssemblyMode::Variational)?;
    let mut reports = Vec::new();
    for _ in 0..samples {
        let s = random_state(asm, &mut rng)?;
        reports.push(fd_gradient_check(&var, &s)?);
        reports.push(fd_tangent_check(&col, &s)?);
        reports.push(fd_tangent_check(&var, &s)?);
        reports.push(angular_momentum_check(&col, &s)?);
        reports.push(rotation_check(&var, &s, 20, &mut rng)?);
        reports.push(translation_check(asm, &s)?);
    }
    Ok(reports)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::assembly::Fault;
    use crate::constitutive::Material;
    use crate::geometry::{build_neighbor_table, compute_effective_volumes, Interactions, NeighborTable};

    fn random_cloud(seed: u64, n: usize, dim: usize) -> PointCloud {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let pos = (0..n)
            .map(|_| {
                let z = if dim == 3 { rng.random::<f64>() } else { 0.0 };
                Vec3::new(rng.random(), rng.random(), z)
            })
            .collect();
        PointCloud::new(dim, pos, vec![1.0 / n as f64; n], None).unwrap()
    }

    fn setup(c: &PointCloud, horizon: f64, inter: Interactions) -> (NeighborTable, Material) {
        let t = compute_effective_volumes(c, build_neighbor_table(c, horizon, inter).unwrap()).unwrap();
        (t, Material::new(1.0, 2.0, 1.5, horizon, inter).unwrap())
    }

    #[test]
    fn twenty_point_cloud_passes_every_check() {
        let c = random_cloud(1, 20, 3);
        let (t, m) = setup(&c, 0.8, Interactions::ALL);
        let asm = Assembler::new(&c, &t, &m, AssemblyMode::Variational).unwrap();
        let reports = verification_suite(&asm, 1, 42).unwrap();
        for r in &reports {
            assert!(r.passed, "{r:?}");
        }
    }

    #[test]
    fn undeformed_state_is_skipped_as_pass() {
        let c = random_cloud(2, 20, 3);
        let (t, m) = setup(&c, 0.8, Interactions::ALL);
        let asm = Assembler::new(&c, &t, &m, AssemblyMode::Variational).unwrap();
        let r = fd_gradient_check(&asm, &State::reference(&c)).unwrap();
        assert!(r.passed);
        assert_eq!(r.max_rel_error, 0.0);
    }

    #[test]
    fn flipped_pair_gradient_is_caught() {
        let c = random_cloud(3, 30, 2);
        let (t, m) = setup(&c, 0.5, Interactions::ONE_TWO);
        let asm = Assembler::new(&c, &t, &m, AssemblyMode::Variational).unwrap();
        let s = random_state(&asm, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        let broken = Assembler::new(&c, &t, &m, AssemblyMode::Variational).unwrap().with_fault(Fault::FlipPairGradient);
        let r = fd_gradient_check(&broken, &s).unwrap();
        assert!(!r.passed);
        assert!(r.max_rel_error > 0.1, "{r:?}");
    }

    #[test]
    fn dropped_pair_coupling_is_caught() {
        let c = random_cloud(4, 30, 2);
        let (t, m) = setup(&c, 0.5, Interactions::ONE_TWO);
        let asm = Assembler::new(&c, &t, &m, AssemblyMode::Collocation).unwrap();
        let s = random_state(&asm, &mut ChaCha8Rng::seed_from_u64(0)).unwrap();
        assert!(fd_tangent_check(&asm, &s).unwrap().passed);
        let broken = Assembler::new(&c, &t, &m, AssemblyMode::Collocation).unwrap().with_fault(Fault::DropPairCoupling);
        let r = fd_tangent_check(&broken, &s).unwrap();
        assert!(!r.passed);
        assert!(!r.offending.is_empty());
        // with pairs disabled the same defect has nothing to act on
        let bonds = Material { c2: 0.0, interactions: Interactions::ONE, ..m };
        let t1 = compute_effective_volumes(&c, build_neighbor_table(&c, 0.5, Interactions::ONE).unwrap()).unwrap();
        let clean = Assembler::new(&c, &t1, &bonds, AssemblyMode::Collocation).unwrap().with_fault(Fault::DropPairCoupling);
        assert!(fd_tangent_check(&clean, &s).unwrap().passed);
    }

    #[test]
    fn report_csv_round_trip() {
        let r = VerificationReport::new("x", 1e-9, 1e-6, vec![3, 4]);
        let mut buf = Vec::new();
        write_reports_csv(&[r], &mut buf).unwrap();
        assert_eq!(String::from_utf8(buf).unwrap(), "check,max_rel_error,tolerance,passed,offending\nx,1e-9,1e-6,true,3 4\n");
    }
}
