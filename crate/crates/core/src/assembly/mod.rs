//! Global residual, tangent and stored energy.
//!
//! Two assembly modes are provided:
//!
//! * [`AssemblyMode::Collocation`] evaluates the point-wise residual
//!   `R^a = R1^a + R2^a + R3^a` exactly as the discretised balance of linear
//!   momentum at each collocation point, with `K^ab = dR^a/dx^b`.
//! * [`AssemblyMode::Variational`] assembles `R = dPi/dx` and
//!   `K = d^2 Pi/dx^2` of the discrete total energy, which gives an exactly
//!   symmetric tangent even where effective volumes vary near boundaries.
//!
//! On a grid with uniform volumes the two are related row by row through
//! `R_var^a = -V^a R_col^a`.

mod sparse;
mod state;

use nalgebra::Matrix3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::constitutive::{bond_kernel, pair_kernel, triplet_kernel, triplet_volume, KernelError, LocalKernel, Material};
use crate::error::{CpdError, Result};
use crate::geometry::{EffectiveVolumes, NeighborTable, PointCloud, Vec3};

pub use sparse::{Block, BlockCsr};
pub use state::State;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum AssemblyMode {
    Collocation,
    #[default]
    Variational,
}

impl std::str::FromStr for AssemblyMode {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "collocation" => Ok(Self::Collocation),
            "variational" => Ok(Self::Variational),
            other => Err(format!("unknown assembly mode '{other}'")),
        }
    }
}

/// How pairs and triplets are visited.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Enumeration {
    /// Every ordering is evaluated separately, as in the full ordered sums.
    Ordered,
    /// Each unordered set is evaluated once and its orderings are folded in by symmetry.
    #[default]
    Symmetric,
}

#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub residual: Vec<f64>,
    pub tangent: BlockCsr,
    pub energy: f64,
}

/// Expanded contribution of one neighbour set: node 0 is the owner.
#[derive(Clone, Copy)]
struct Element {
    len: usize,
    nodes: [usize; 4],
    energy: f64,
    grad: [Vec3; 4],
    hess: [[Matrix3<f64>; 4]; 4],
}

impl Element {
    fn expand<const N: usize>(owner: usize, members: [usize; N], k: &LocalKernel<N>) -> Self {
        let mut e = Element {
            len: N + 1,
            nodes: [owner; 4],
            energy: k.energy,
            grad: [Vec3::zeros(); 4],
            hess: [[Matrix3::zeros(); 4]; 4],
        };
        for p in 0..N {
            e.nodes[p + 1] = members[p];
            e.grad[p + 1] = k.grad[p];
            e.grad[0] -= k.grad[p];
            for q in 0..N {
                let h = k.hess[p][q];
                e.hess[p + 1][q + 1] = h;
                e.hess[0][q + 1] -= h;
                e.hess[p + 1][0] -= h;
                e.hess[0][0] += h;
            }
        }
        e
    }
}

/// One visited set together with its quadrature weights.
struct Visit {
    element: Element,
    /// Weight of the set in the total energy.
    energy_weight: f64,
    /// Weight of the first-slot gradient in the collocation residual.
    colloc_weight: f64,
    /// Slots (1-based within the element) whose gradients enter the collocation residual.
    first_slots: std::ops::Range<usize>,
}

pub struct Assembler<'a> {
    cloud: &'a PointCloud,
    table: &'a NeighborTable,
    mat: Material,
    mode: AssemblyMode,
    enumeration: Enumeration,
    vols: &'a [EffectiveVolumes],
    fault: Option<Fault>,
}

/// Deliberate defects injected into the pair kernel, used to show that the
/// verification oracles catch broken derivatives.
#[doc(hidden)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Fault {
    /// Flips the sign of the pair gradient while leaving the pair energy intact.
    FlipPairGradient,
    /// Zeroes the coupling blocks between the two bonds of a pair in the tangent.
    DropPairCoupling,
}

impl<'a> Assembler<'a> {
    pub fn new(cloud: &'a PointCloud, table: &'a NeighborTable, mat: &Material, mode: AssemblyMode) -> Result<Self> {
        mat.validate()?;
        if cloud.len() != table.len() {
            return Err(CpdError::InvalidInput("neighbour table does not match the cloud".into()));
        }
        let have = table.interactions();
        let want = mat.interactions;
        if (want.two && !have.two) || (want.three && !have.three) {
            return Err(CpdError::InvalidInput(
                "material enables interactions that the neighbour table was not built for".into(),
            ));
        }
        let vols = table.require_volumes()?;
        Ok(Self { cloud, table, mat: *mat, mode, enumeration: Enumeration::default(), vols, fault: None })
    }

    pub fn with_enumeration(mut self, enumeration: Enumeration) -> Self {
        self.enumeration = enumeration;
        self
    }

    #[doc(hidden)]
    pub fn with_fault(mut self, fault: Fault) -> Self {
        self.fault = Some(fault);
        self
    }

    #[doc(hidden)]
    pub fn fault(&self) -> Option<Fault> {
        self.fault
    }

    pub fn mode(&self) -> AssemblyMode {
        self.mode
    }

    pub fn cloud(&self) -> &PointCloud {
        self.cloud
    }

    pub fn table(&self) -> &NeighborTable {
        self.table
    }

    pub fn material(&self) -> &Material {
        &self.mat
    }

    pub fn pattern(&self) -> BlockCsr {
        BlockCsr::from_table(self.table)
    }

    /// Visits every contributing set owned by `a`.
    fn visit_owner(&self, a: usize, x: &[Vec3], mut sink: impl FnMut(Visit)) -> Result<()> {
        let pos = self.cloud.positions();
        let va = self.cloud.volume(a);
        let vol = &self.vols[a];
        let ordered = self.enumeration == Enumeration::Ordered;

        for &i in self.table.neighbors(a) {
            let i = i as usize;
            let k = bond_kernel(&(x[i] - x[a]), (pos[i] - pos[a]).norm(), self.mat.c1)
                .map_err(|_| CpdError::CollapsedBond { point: a, neighbor: i })?;
            sink(Visit {
                element: Element::expand(a, [i], &k),
                energy_weight: 0.5 * va * vol.one,
                colloc_weight: vol.one,
                first_slots: 1..2,
            });
        }

        // a vanishing coefficient contributes nothing, skip the set loops
        if self.mat.interactions.two && self.mat.c2 != 0.0 {
            let v2 = vol.two.expect("pair volumes");
            let pair = |[i, j]: [usize; 2]| -> Result<Element> {
                let ref_area = (pos[i] - pos[a]).cross(&(pos[j] - pos[a])).norm();
                pair_kernel(&(x[i] - x[a]), &(x[j] - x[a]), ref_area, self.mat.c2)
                    .map(|mut k| {
                        match self.fault {
                            Some(Fault::FlipPairGradient) => k.grad.iter_mut().for_each(|g| *g = -*g),
                            Some(Fault::DropPairCoupling) => {
                                k.hess[0][1] = Matrix3::zeros();
                                k.hess[1][0] = Matrix3::zeros();
                            }
                            None => {}
                        }
                        Element::expand(a, [i, j], &k)
                    })
                    .map_err(|e| degenerate(e, a, &[i, j]))
            };
            for &[i, j] in self.table.pairs(a) {
                let (i, j) = (i as usize, j as usize);
                if ordered {
                    for set in [[i, j], [j, i]] {
                        sink(Visit {
                            element: pair(set)?,
                            energy_weight: va * v2 / 3.0,
                            colloc_weight: 2.0 * v2,
                            first_slots: 1..2,
                        });
                    }
                } else {
                    // both orderings: each member is the first slot once
                    sink(Visit {
                        element: pair([i, j])?,
                        energy_weight: 2.0 * va * v2 / 3.0,
                        colloc_weight: 2.0 * v2,
                        first_slots: 1..3,
                    });
                }
            }
        }

        if self.mat.interactions.three && self.mat.c3 != 0.0 {
            let v3 = vol.three.expect("triplet volumes");
            let triplet = |[i, j, k]: [usize; 3]| -> Result<Element> {
                let ref_vol = triplet_volume(&(pos[i] - pos[a]), &(pos[j] - pos[a]), &(pos[k] - pos[a]));
                triplet_kernel(&(x[i] - x[a]), &(x[j] - x[a]), &(x[k] - x[a]), ref_vol, self.mat.c3)
                    .map(|kern| Element::expand(a, [i, j, k], &kern))
                    .map_err(|e| degenerate(e, a, &[i, j, k]))
            };
            for &[i, j, k] in self.table.triplets(a) {
                let (i, j, k) = (i as usize, j as usize, k as usize);
                if ordered {
                    for set in [[i, j, k], [i, k, j], [j, i, k], [j, k, i], [k, i, j], [k, j, i]] {
                        sink(Visit {
                            element: triplet(set)?,
                            energy_weight: 0.25 * va * v3,
                            colloc_weight: 3.0 * v3,
                            first_slots: 1..2,
                        });
                    }
                } else {
                    // six orderings: each member is the first slot twice
                    sink(Visit {
                        element: triplet([i, j, k])?,
                        energy_weight: 1.5 * va * v3,
                        colloc_weight: 6.0 * v3,
                        first_slots: 1..4,
                    });
                }
            }
        }
        Ok(())
    }

    fn check_state(&self, state: &State) -> Result<()> {
        if state.len() != self.cloud.len() {
            return Err(CpdError::InvalidInput("state does not match the cloud".into()));
        }
        Ok(())
    }

    /// Total stored energy of the discrete body.
    pub fn energy(&self, state: &State) -> Result<f64> {
        self.check_state(state)?;
        let x = state.positions();
        let per_point: Vec<f64> = (0..x.len())
            .into_par_iter()
            .map(|a| {
                let mut e = 0.0;
                self.visit_owner(a, x, |v| e += v.energy_weight * v.element.energy)?;
                Ok(e)
            })
            .collect::<Result<_>>()?;
        Ok(per_point.iter().sum())
    }

    pub fn residual(&self, state: &State) -> Result<Vec<f64>> {
        self.assemble(state, false).map(|s| s.residual)
    }

    pub fn tangent(&self, state: &State) -> Result<BlockCsr> {
        self.assemble(state, true).map(|s| s.tangent)
    }

    /// Residual, tangent and energy in one pass.
    pub fn system(&self, state: &State) -> Result<AssembledSystem> {
        self.assemble(state, true)
    }

    fn assemble(&self, state: &State, with_tangent: bool) -> Result<AssembledSystem> {
        self.check_state(state)?;
        match self.mode {
            AssemblyMode::Collocation => self.assemble_collocation(state, with_tangent),
            AssemblyMode::Variational => self.assemble_variational(state, with_tangent),
        }
    }

    fn assemble_collocation(&self, state: &State, with_tangent: bool) -> Result<AssembledSystem> {
        let x = state.positions();
        let n = x.len();
        let mut tangent = self.pattern();
        let mut rows = tangent.rows_mut();
        let results: Vec<(Vec3, f64)> = rows
            .par_iter_mut()
            .enumerate()
            .map(|(a, (cols, blocks))| {
                let mut r = Vec3::zeros();
                let mut energy = 0.0;
                self.visit_owner(a, x, |v| {
                    let e = &v.element;
                    energy += v.energy_weight * e.energy;
                    for s in v.first_slots.clone() {
                        r += e.grad[s] * v.colloc_weight;
                        if with_tangent {
                            for q in 0..e.len {
                                let k = cols.binary_search(&(e.nodes[q] as u32)).expect("pattern");
                                blocks[k] += e.hess[s][q] * v.colloc_weight;
                            }
                        }
                    }
                })?;
                Ok((r, energy))
            })
            .collect::<Result<_>>()?;
        drop(rows);
        let mut residual = vec![0.0; 3 * n];
        let mut energy = 0.0;
        for (a, (r, e)) in results.into_iter().enumerate() {
            residual[3 * a..3 * a + 3].copy_from_slice(r.as_slice());
            energy += e;
        }
        Ok(AssembledSystem { residual, tangent, energy })
    }

    fn assemble_variational(&self, state: &State, with_tangent: bool) -> Result<AssembledSystem> {
        let x = state.positions();
        let n = x.len();
        let mut tangent = self.pattern();
        let mut residual = vec![Vec3::zeros(); n];
        let mut energy = 0.0;
        for a in 0..n {
            self.visit_owner(a, x, |v| {
                let e = &v.element;
                let w = v.energy_weight;
                energy += w * e.energy;
                for p in 0..e.len {
                    residual[e.nodes[p]] += e.grad[p] * w;
                    if with_tangent {
                        for q in 0..e.len {
                            tangent.add(e.nodes[p], e.nodes[q], &(e.hess[p][q] * w));
                        }
                    }
                }
            })?;
        }
        let residual = residual.iter().flat_map(|r| [r.x, r.y, r.z]).collect();
        Ok(AssembledSystem { residual, tangent, energy })
    }

    /// Per-point moment sums `sum xi' x (force term) V_k` of the collocation
    /// residual, split by interaction kind, together with the matching
    /// magnitude scales `sum |xi'| |force term| V_k`.
    pub fn moment_sums(&self, state: &State) -> Result<Vec<MomentSums>> {
        self.check_state(state)?;
        let x = state.positions();
        let pos = self.cloud.positions();
        (0..x.len())
            .into_par_iter()
            .map(|a| {
                let vol = &self.vols[a];
                let mut out = MomentSums::default();
                for &i in self.table.neighbors(a) {
                    let i = i as usize;
                    let xi = x[i] - x[a];
                    let big = pos[i] - pos[a];
                    crate::constitutive::force_density_one(&xi, &big, self.mat.c1).map_err(|e| degenerate(e, a, &[i]))?;
                    // the bond force is a scalar multiple of the bond, so its moment is xi x xi
                    let f = self.mat.c1 * (1.0 / big.norm() - 1.0 / xi.norm());
                    out.moment[0] += xi.cross(&xi) * (f * vol.one);
                    out.scale[0] += xi.norm() * (f * xi).norm() * vol.one;
                }
                if self.mat.interactions.two {
                    let v2 = vol.two.expect("pair volumes");
                    for [i, j] in self.table.ordered_pairs(a) {
                        let (i, j) = (i as usize, j as usize);
                        let (xi1, xi2) = (x[i] - x[a], x[j] - x[a]);
                        let f = crate::constitutive::force_density_two(
                            &xi1,
                            &xi2,
                            &(pos[i] - pos[a]),
                            &(pos[j] - pos[a]),
                            self.mat.c2,
                        )
                        .map_err(|e| degenerate(e, a, &[i, j]))?;
                        out.moment[1] += xi1.cross(&f.pair_term) * v2;
                        out.scale[1] += xi1.norm() * f.pair_term.norm() * v2;
                    }
                }
                if self.mat.interactions.three {
                    let v3 = vol.three.expect("triplet volumes");
                    for [i, j, k] in self.table.ordered_triplets(a) {
                        let (i, j, k) = (i as usize, j as usize, k as usize);
                        let (xi1, xi2, xi3) = (x[i] - x[a], x[j] - x[a], x[k] - x[a]);
                        let f = crate::constitutive::force_density_three(
                            &xi1,
                            &xi2,
                            &xi3,
                            &(pos[i] - pos[a]),
                            &(pos[j] - pos[a]),
                            &(pos[k] - pos[a]),
                            self.mat.c3,
                        )
                        .map_err(|e| degenerate(e, a, &[i, j, k]))?;
                        out.moment[2] += xi1.cross(&f.triplet_term) * v3;
                        out.scale[2] += xi1.norm() * f.triplet_term.norm() * v3;
                    }
                }
                Ok(out)
            })
            .collect()
    }
}

/// Moment sums of one collocation point, indexed by interaction kind.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MomentSums {
    pub moment: [Vec3; 3],
    pub scale: [f64; 3],
}

fn degenerate(e: KernelError, point: usize, members: &[usize]) -> CpdError {
    match (e, members) {
        (KernelError::CollapsedBond, &[i, ..]) => CpdError::CollapsedBond { point, neighbor: i },
        (KernelError::CollapsedArea, &[i, j, ..]) => CpdError::CollapsedArea { point, pair: [i, j] },
        (KernelError::CollapsedVolume, &[i, j, k]) => CpdError::CollapsedVolume { point, triplet: [i, j, k] },
        (KernelError::DegenerateReference, _) => CpdError::DegenerateReference { measure: 0.0 },
        _ => CpdError::CollapsedBond { point, neighbor: members[0] },
    }
}

/// Total stored energy `Pi`.
pub fn total_energy(cloud: &PointCloud, table: &NeighborTable, state: &State, mat: &Material) -> Result<f64> {
    Assembler::new(cloud, table, mat, AssemblyMode::Variational)?.energy(state)
}

pub fn assemble_residual(
    cloud: &PointCloud,
    table: &NeighborTable,
    state: &State,
    mat: &Material,
    mode: AssemblyMode,
) -> Result<Vec<f64>> {
    Assembler::new(cloud, table, mat, mode)?.residual(state)
}

pub fn assemble_tangent(
    cloud: &PointCloud,
    table: &NeighborTable,
    state: &State,
    mat: &Material,
    mode: AssemblyMode,
) -> Result<BlockCsr> {
    Assembler::new(cloud, table, mat, mode)?.tangent(state)
}
