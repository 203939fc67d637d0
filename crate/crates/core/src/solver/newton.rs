use faer::linalg::solvers::Solve;
use faer::sparse::{SparseColMat, Triplet};
use faer::{Col, Side};
use serde::Serialize;

use crate::assembly::{Assembler, AssemblyMode, BlockCsr, State};
use crate::error::{CpdError, Result};

/// One logged Newton iterate.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IterationRecord {
    pub iteration: usize,
    /// Euclidean norm of the residual over the free DOFs.
    pub residual_norm: f64,
    /// `residual_norm / |R_1|`, zero when `|R_1| = 0`.
    pub normalized: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IncrementLog {
    pub increment: usize,
    /// Load parameter reached by this increment, in `(0, 1]`.
    pub load_factor: f64,
    pub iterations: Vec<IterationRecord>,
    pub converged: bool,
}

impl IncrementLog {
    pub fn final_normalized(&self) -> f64 {
        self.iterations.last().map_or(f64::NAN, |r| r.normalized)
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct NewtonLog {
    pub increments: Vec<IncrementLog>,
}

impl NewtonLog {
    pub fn all_converged(&self) -> bool {
        self.increments.iter().all(|i| i.converged)
    }

    pub fn max_iterations(&self) -> usize {
        self.increments.iter().map(|i| i.iterations.len()).max().unwrap_or(0)
    }

    /// CSV `increment,iteration,residual_norm,normalized_residual`.
    pub fn write_csv<W: std::io::Write>(&self, writer: W) -> Result<()> {
        let mut w = csv::Writer::from_writer(writer);
        w.write_record(["increment", "iteration", "residual_norm", "normalized_residual"])?;
        for inc in &self.increments {
            for r in &inc.iterations {
                w.write_record(&[
                    inc.increment.to_string(),
                    r.iteration.to_string(),
                    format!("{:e}", r.residual_norm),
                    format!("{:e}", r.normalized),
                ])?;
            }
        }
        w.flush().map_err(|e| CpdError::io("<newton log>", e))?;
        Ok(())
    }
}

fn free_norm(residual: &[f64], free: &[usize]) -> f64 {
    free.iter().map(|&d| residual[d] * residual[d]).sum::<f64>().sqrt()
}

/// Solves `K_ff dx = rhs` on the free block of `k`.
///
/// Prescribed rows and columns are removed, which keeps a symmetric tangent
/// symmetric. Symmetric systems try a sparse Cholesky factorization first and
/// fall back to LU with partial pivoting when the reduced tangent is not
/// positive definite.
pub fn solve_reduced(k: &BlockCsr, free: &[usize], rhs: &[f64], symmetric: bool) -> Result<Vec<f64>> {
    let n_dofs = 3 * k.n_block_rows();
    let mut map = vec![usize::MAX; n_dofs];
    for (i, &d) in free.iter().enumerate() {
        map[d] = i;
    }
    let mut triplets = Vec::new();
    k.for_each_nonzero(|r, c, v| {
        let (ri, ci) = (map[r], map[c]);
        if ri != usize::MAX && ci != usize::MAX {
            triplets.push(Triplet::new(ri, ci, v));
        }
    });
    let n = free.len();
    let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
        .map_err(|e| CpdError::SingularTangent(format!("could not build the reduced tangent: {e:?}")))?;
    let b = Col::from_fn(n, |i| rhs[i]);

    let mut x = None;
    if symmetric {
        if let Ok(llt) = mat.sp_cholesky(Side::Lower) {
            x = Some(llt.solve(&b));
        } else {
            log::debug!("reduced tangent is not positive definite, falling back to LU");
        }
    }
    let x = match x {
        Some(x) => x,
        None => {
            let lu = mat
                .sp_lu()
                .map_err(|e| CpdError::SingularTangent(format!("LU factorization of {n} free DOFs failed: {e:?}")))?;
            lu.solve(&b)
        }
    };
    let out: Vec<f64> = (0..n).map(|i| x[i]).collect();
    if let Some(i) = out.iter().position(|v| !v.is_finite()) {
        return Err(CpdError::SingularTangent(format!("non-finite update at free DOF {} (global DOF {})", i, free[i])));
    }
    Ok(out)
}

/// Newton-Raphson iteration for one increment.
///
/// Prescribed DOFs must already hold the increment's target values. Iterate
/// `k` logs `|R_k|` over the free DOFs; the loop stops once
/// `|R_k| / |R_1| <= tolerance` or when `|R_1| = 0`.
pub fn newton_solve(
    asm: &Assembler,
    mut state: State,
    tolerance: f64,
    max_iterations: usize,
) -> Result<(State, IncrementLog)> {
    let free = state.free_dofs();
    let symmetric = asm.mode() == AssemblyMode::Variational;
    let mut log = IncrementLog { increment: 0, load_factor: 1.0, iterations: Vec::new(), converged: false };
    let mut r1 = 0.0;
    for k in 1..=max_iterations {
        let sys = asm.system(&state)?;
        let norm = free_norm(&sys.residual, &free);
        if k == 1 {
            r1 = norm;
        }
        let normalized = if r1 > 0.0 { norm / r1 } else { 0.0 };
        log.iterations.push(IterationRecord { iteration: k, residual_norm: norm, normalized });
        if r1 == 0.0 || normalized <= tolerance {
            log.converged = true;
            return Ok((state, log));
        }
        if k == max_iterations {
            break;
        }
        let rhs: Vec<f64> = free.iter().map(|&d| -sys.residual[d]).collect();
        let dx = solve_reduced(&sys.tangent, &free, &rhs, symmetric)
            .map_err(|e| match e {
                CpdError::SingularTangent(m) => CpdError::SingularTangent(format!("iteration {k}: {m}")),
                other => other,
            })?;
        state.update_free(&free, &dx);
    }
    Err(CpdError::NonConvergence {
        iterations: max_iterations,
        normalized: log.final_normalized(),
    })
}

/// Residual entries at the prescribed DOFs, as `(dof, value)`.
pub fn reaction_forces(asm: &Assembler, state: &State) -> Result<Vec<(usize, f64)>> {
    let r = asm.residual(state)?;
    Ok((0..state.n_dofs()).filter(|&d| state.is_prescribed(d)).map(|d| (d, r[d])).collect())
}
