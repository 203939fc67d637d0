use super::*;
use crate::assembly::AssemblyMode;
use crate::constitutive::Material;
use crate::geometry::{build_neighbor_table, compute_effective_volumes, generate_uniform_grid, Interactions, NeighborTable};

fn problem(dim: usize, spacing: f64, horizon: f64, inter: Interactions) -> (PointCloud, NeighborTable, Material) {
    let c = generate_uniform_grid(&AxisBox::unit(dim), &[], spacing, dim).unwrap();
    let t = compute_effective_volumes(&c, build_neighbor_table(&c, horizon, inter).unwrap()).unwrap();
    let m = Material::new(1.0, if inter.two { 0.5 } else { 0.0 }, if inter.three { 0.5 } else { 0.0 }, horizon, inter)
        .unwrap();
    (c, t, m)
}

fn solve(
    c: &PointCloud,
    t: &NeighborTable,
    m: &Material,
    mode: AssemblyMode,
    program: &LoadProgram,
) -> Result<IncrementalResult> {
    let asm = Assembler::new(c, t, m, mode).unwrap();
    let p = program.prescription(c, &AxisBox::unit(c.dim()), t.horizon().min(0.3)).unwrap();
    run_incremental(&asm, &p, program, true, |_, _, _| Ok(()))
}

#[test]
fn left_layer_has_three_columns() {
    let c = generate_uniform_grid(&AxisBox::unit(2), &[], 0.05, 2).unwrap();
    let tagged = tag_boundary_layers(&c, &AxisBox::unit(2), 0.15, &[Face::new(0, Side::Min)]).unwrap();
    let left: Vec<usize> = (0..c.len()).filter(|&a| tagged.tag(a) == BoundaryTag::LayerLeft).collect();
    assert_eq!(left.len(), 3 * 20);
    assert!(left.iter().all(|&a| c.position(a).x < 0.15));
}

#[test]
fn wide_layers_overlap() {
    let c = generate_uniform_grid(&AxisBox::unit(2), &[], 0.05, 2).unwrap();
    let faces = [Face::new(0, Side::Min), Face::new(0, Side::Max)];
    let err = tag_boundary_layers(&c, &AxisBox::unit(2), 0.6, &faces).unwrap_err();
    assert!(matches!(err, CpdError::LayerOverlap(_)));
}

#[test]
fn lateral_faces_stay_free() {
    let c = generate_uniform_grid(&AxisBox::unit(3), &[], 0.1, 3).unwrap();
    let faces = [Face::new(0, Side::Min), Face::new(0, Side::Max)];
    let tagged = tag_boundary_layers(&c, &AxisBox::unit(3), 0.3, &faces).unwrap();
    let a = c.nearest(&Vec3::new(0.55, 0.05, 0.05));
    assert_eq!(tagged.tag(a), BoundaryTag::Interior);
    let counts = |tag| tagged.tags().iter().filter(|&&t| t == tag).count();
    assert_eq!(counts(BoundaryTag::LayerLeft), 300);
    assert_eq!(counts(BoundaryTag::LayerRight), 300);
}

#[test]
fn zero_load_converges_immediately() {
    let (c, t, m) = problem(2, 0.1, 0.25, Interactions::ONE_TWO);
    let program = LoadProgram::uniaxial(&AxisBox::unit(2), 2, 0, 0.0, 1, false);
    for mode in [AssemblyMode::Collocation, AssemblyMode::Variational] {
        let r = solve(&c, &t, &m, mode, &program).unwrap();
        let inc = &r.log.increments[0];
        assert!(inc.converged);
        assert_eq!(inc.iterations.len(), 1);
        assert_eq!(inc.iterations[0].residual_norm, 0.0);
    }
}

#[test]
fn increment_count_does_not_change_small_strain_solution() {
    let (c, t, m) = problem(2, 0.1, 0.25, Interactions::ONE_TWO);
    let one = LoadProgram::uniaxial(&AxisBox::unit(2), 2, 0, 1e-3, 1, true);
    let two = LoadProgram { n_increments: 2, ..one.clone() };
    let a = solve(&c, &t, &m, AssemblyMode::Variational, &one).unwrap();
    let b = solve(&c, &t, &m, AssemblyMode::Variational, &two).unwrap();
    assert_eq!(b.snapshots.len(), 2);
    let diff = a.state.positions().iter().zip(b.state.positions()).map(|(p, q)| (p - q).amax()).fold(0.0, f64::max);
    assert!(diff <= 1e-10, "{diff:e}");
}

#[test]
fn newton_converges_quadratically() {
    let (c, t, m) = problem(3, 0.25, 0.6, Interactions::ONE_THREE);
    let program = LoadProgram::uniaxial(&AxisBox::unit(3), 3, 0, 0.2, 2, false);
    for mode in [AssemblyMode::Collocation, AssemblyMode::Variational] {
        let r = solve(&c, &t, &m, mode, &program).unwrap();
        for inc in &r.log.increments {
            assert!(inc.converged);
            assert!(inc.iterations.len() <= 6, "{mode:?}: {:?}", inc.iterations);
            assert!(inc.final_normalized() <= 1e-12);
            let res: Vec<f64> = inc.iterations.iter().map(|i| i.residual_norm).collect();
            // the last ratio |R_k+1| / |R_k|^2 stays bounded once in the quadratic regime
            let n = res.len();
            assert!(res[n - 1] <= 10.0 * res[n - 2] * res[n - 2] / res[0] + 1e-14 * res[0], "{mode:?}: {res:?}");
        }
    }
}

#[test]
fn collapsed_step_reports_the_increment() {
    let pos = vec![Vec3::zeros(), Vec3::new(1.0, 0.0, 0.0)];
    let c = PointCloud::new(3, pos, vec![1.0; 2], None).unwrap();
    let t = compute_effective_volumes(&c, build_neighbor_table(&c, 1.5, Interactions::ONE).unwrap()).unwrap();
    let m = Material::new(1.0, 0.0, 0.0, 1.5, Interactions::ONE).unwrap();
    let asm = Assembler::new(&c, &t, &m, AssemblyMode::Variational).unwrap();
    let p = Prescription { dofs: vec![(0, 0.0), (1, 0.0), (2, 0.0), (3, -1.0), (4, 0.0), (5, 0.0)] };
    let program = LoadProgram { n_increments: 2, layers: vec![], pins: vec![], tolerance: 1e-12, max_iterations: 20, bisection: false };
    let err = run_incremental(&asm, &p, &program, false, |_, _, _| Ok(())).unwrap_err();
    match err {
        CpdError::Increment { increment, source } => {
            assert_eq!(increment, 2);
            assert!(source.is_step_degeneracy(), "{source}");
        }
        other => panic!("{other}"),
    }
}

#[test]
fn csv_outputs_have_headers() {
    let (c, t, m) = problem(2, 0.25, 0.6, Interactions::ONE);
    let program = LoadProgram::uniaxial(&AxisBox::unit(2), 2, 0, 1e-3, 1, false);
    let r = solve(&c, &t, &m, AssemblyMode::Variational, &program).unwrap();
    let mut buf = Vec::new();
    r.log.write_csv(&mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("increment,iteration,residual_norm,normalized_residual\n1,1,"));
    let mut buf = Vec::new();
    write_snapshot_csv(&c, &r.state, &mut buf).unwrap();
    let text = String::from_utf8(buf).unwrap();
    assert!(text.starts_with("point_id,X1,X2,X3,x1,x2,x3,u1,u2,u3,tag\n0,"));
    assert_eq!(text.lines().count(), c.len() + 1);
}
