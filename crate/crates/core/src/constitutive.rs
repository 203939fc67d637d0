//! Stored-energy densities of one-, two- and three-neighbour interactions and
//! their derivatives with respect to the spatial bond vectors.
//!
//! Each interaction energy depends on a scalar measure only (bond length,
//! triangle area, tetrahedron volume), which makes the resulting force
//! densities satisfy the angular momentum balance term by term:
//!
//! ```text
//! psi_1 = 1/2 C1 L [l/L - 1]^2
//! psi_2 = 1/2 C2 A [a/A - 1]^2
//! psi_3 = 1/2 C3 V [v/V - 1]^2
//! ```

use nalgebra::Matrix3;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::error::{CpdError, Result};
use crate::geometry::{Interactions, Vec3};

/// Spatial measures at or below this fraction of their reference value count as collapsed.
pub const COLLAPSE_RATIO: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Error)]
pub enum KernelError {
    #[error("collapsed bond")]
    CollapsedBond,
    #[error("collapsed triangle")]
    CollapsedArea,
    #[error("collapsed tetrahedron")]
    CollapsedVolume,
    #[error("degenerate reference measure")]
    DegenerateReference,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Material {
    pub c1: f64,
    pub c2: f64,
    pub c3: f64,
    pub horizon: f64,
    pub interactions: Interactions,
}

impl Material {
    pub fn new(c1: f64, c2: f64, c3: f64, horizon: f64, interactions: Interactions) -> Result<Self> {
        let m = Self { c1, c2, c3, horizon, interactions };
        m.validate()?;
        Ok(m)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |msg: String| Err(CpdError::InvalidInput(msg));
        if !self.interactions.one {
            return bad("one-neighbour interactions are required for stability".into());
        }
        if !(self.c1 > 0.0) {
            return bad(format!("C1 must be positive, got {}", self.c1));
        }
        if !(self.c2 >= 0.0) || !(self.c3 >= 0.0) {
            return bad(format!("C2 and C3 must be non-negative, got {} and {}", self.c2, self.c3));
        }
        if !(self.horizon > 0.0) {
            return bad(format!("horizon must be positive, got {}", self.horizon));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum InteractionKind {
    One,
    Two,
    Three,
}

/// Relative deformation measures of one neighbour set.
///
/// Unused bond vectors are zero; unused scalar measures are zero.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RelativeMeasures {
    pub spatial: [Vec3; 3],
    pub material: [Vec3; 3],
    pub length: f64,
    pub ref_length: f64,
    pub area: f64,
    pub ref_area: f64,
    pub volume: f64,
    pub ref_volume: f64,
}

impl RelativeMeasures {
    pub fn bond(xi: Vec3, big_xi: Vec3) -> Self {
        Self::triplet(xi, Vec3::zeros(), Vec3::zeros(), big_xi, Vec3::zeros(), Vec3::zeros())
    }

    pub fn pair(xi1: Vec3, xi2: Vec3, big1: Vec3, big2: Vec3) -> Self {
        Self::triplet(xi1, xi2, Vec3::zeros(), big1, big2, Vec3::zeros())
    }

    pub fn triplet(xi1: Vec3, xi2: Vec3, xi3: Vec3, big1: Vec3, big2: Vec3, big3: Vec3) -> Self {
        Self {
            spatial: [xi1, xi2, xi3],
            material: [big1, big2, big3],
            length: xi1.norm(),
            ref_length: big1.norm(),
            area: xi1.cross(&xi2).norm(),
            ref_area: big1.cross(&big2).norm(),
            volume: xi1.cross(&xi2).dot(&xi3).abs(),
            ref_volume: big1.cross(&big2).dot(&big3).abs(),
        }
    }

    /// `(spatial, reference)` measure of the given kind.
    pub fn measure(&self, kind: InteractionKind) -> (f64, f64) {
        match kind {
            InteractionKind::One => (self.length, self.ref_length),
            InteractionKind::Two => (self.area, self.ref_area),
            InteractionKind::Three => (self.volume, self.ref_volume),
        }
    }

    pub fn stretch(&self, kind: InteractionKind) -> f64 {
        let (s, r) = self.measure(kind);
        s / r
    }
}

#[inline]
fn quadratic_energy(coefficient: f64, spatial: f64, reference: f64) -> f64 {
    let d = spatial / reference - 1.0;
    0.5 * coefficient * reference * d * d
}

pub fn energy_density(
    kind: InteractionKind,
    measures: &RelativeMeasures,
    mat: &Material,
) -> std::result::Result<f64, KernelError> {
    let (spatial, reference) = measures.measure(kind);
    if !(reference > f64::MIN_POSITIVE) {
        return Err(KernelError::DegenerateReference);
    }
    let c = match kind {
        InteractionKind::One => mat.c1,
        InteractionKind::Two => mat.c2,
        InteractionKind::Three => mat.c3,
    };
    Ok(quadratic_energy(c, spatial, reference))
}

/// `dpsi_1/dxi' = C1 [1/L - 1/l] xi'`.
pub fn force_density_one(xi: &Vec3, big_xi: &Vec3, c1: f64) -> std::result::Result<Vec3, KernelError> {
    let ref_len = big_xi.norm();
    let len = xi.norm();
    if !(ref_len > 0.0) {
        return Err(KernelError::DegenerateReference);
    }
    if len <= COLLAPSE_RATIO * ref_len {
        return Err(KernelError::CollapsedBond);
    }
    Ok(xi * (c1 * (1.0 / ref_len - 1.0 / len)))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PairForce {
    /// `dpsi_2/da = C2 [1/A - 1/a] xi' x xi''`.
    pub area_derivative: Vec3,
    /// `2 xi'' x dpsi_2/da`, the contribution of one ordered pair to the residual kernel.
    pub pair_term: Vec3,
}

pub fn force_density_two(
    xi1: &Vec3,
    xi2: &Vec3,
    big1: &Vec3,
    big2: &Vec3,
    c2: f64,
) -> std::result::Result<PairForce, KernelError> {
    let ref_area = big1.cross(big2).norm();
    if !(ref_area > 0.0) {
        return Err(KernelError::DegenerateReference);
    }
    let a_vec = xi1.cross(xi2);
    let area = a_vec.norm();
    if area <= COLLAPSE_RATIO * ref_area {
        return Err(KernelError::CollapsedArea);
    }
    let area_derivative = a_vec * (c2 * (1.0 / ref_area - 1.0 / area));
    Ok(PairForce { area_derivative, pair_term: 2.0 * xi2.cross(&area_derivative) })
}

/// Expanded form of the pair term:
/// `2 C2 [1/A - 1/a] ([xi''.xi''] xi' - [xi''.xi'] xi'')`.
pub fn pair_term_expanded(xi1: &Vec3, xi2: &Vec3, ref_area: f64, c2: f64) -> Vec3 {
    let area = xi1.cross(xi2).norm();
    let w = xi1 * xi2.norm_squared() - xi2 * xi2.dot(xi1);
    w * (2.0 * c2 * (1.0 / ref_area - 1.0 / area))
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TripletForce {
    /// `dpsi_3/dv = C3 [1/V - 1/|v|] v` with `v` the signed volume.
    pub volume_derivative: f64,
    /// `3 (xi'' x xi''') dpsi_3/dv`.
    pub triplet_term: Vec3,
}

pub fn force_density_three(
    xi1: &Vec3,
    xi2: &Vec3,
    xi3: &Vec3,
    big1: &Vec3,
    big2: &Vec3,
    big3: &Vec3,
    c3: f64,
) -> std::result::Result<TripletForce, KernelError> {
    let ref_vol = triplet_volume(big1, big2, big3);
    if !(ref_vol > 0.0) {
        return Err(KernelError::DegenerateReference);
    }
    let n = xi2.cross(xi3);
    let v = signed_triplet_volume(xi1, xi2, xi3);
    if v.abs() <= COLLAPSE_RATIO * ref_vol {
        return Err(KernelError::CollapsedVolume);
    }
    let s = c3 * (1.0 / ref_vol - 1.0 / v.abs()) * v;
    Ok(TripletForce { volume_derivative: s, triplet_term: n * (3.0 * s) })
}

/// Energy, gradient and Hessian of one interaction energy with respect to
/// its `N` spatial bond vectors.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LocalKernel<const N: usize> {
    pub energy: f64,
    pub grad: [Vec3; N],
    pub hess: [[Matrix3<f64>; N]; N],
}

#[inline]
fn skew(u: &Vec3) -> Matrix3<f64> {
    u.cross_matrix()
}

/// Bond kernel. `ref_len` is `|Xi'|`.
pub fn bond_kernel(xi: &Vec3, ref_len: f64, c1: f64) -> std::result::Result<LocalKernel<1>, KernelError> {
    let len = xi.norm();
    if len <= COLLAPSE_RATIO * ref_len {
        return Err(KernelError::CollapsedBond);
    }
    let bracket = 1.0 / ref_len - 1.0 / len;
    let grad = xi * (c1 * bracket);
    let hess = (xi * xi.transpose()) * (c1 / (len * len * len)) + Matrix3::identity() * (c1 * bracket);
    Ok(LocalKernel { energy: quadratic_energy(c1, len, ref_len), grad: [grad], hess: [[hess]] })
}

/// Pair kernel. `ref_area` is `|Xi' x Xi''|`.
pub fn pair_kernel(xi1: &Vec3, xi2: &Vec3, ref_area: f64, c2: f64) -> std::result::Result<LocalKernel<2>, KernelError> {
    let area = xi1.cross(xi2).norm();
    if area <= COLLAPSE_RATIO * ref_area {
        return Err(KernelError::CollapsedArea);
    }
    let c = c2 * (1.0 / ref_area - 1.0 / area);
    let d12 = xi1.dot(xi2);
    let (n1, n2) = (xi1.norm_squared(), xi2.norm_squared());
    // gradients of the area: w1 / a and w2 / a
    let w1 = xi1 * n2 - xi2 * d12;
    let w2 = xi2 * n1 - xi1 * d12;
    let k = c2 / (area * area * area);
    let id = Matrix3::identity();
    let h11 = (w1 * w1.transpose()) * k + (id * n2 - xi2 * xi2.transpose()) * c;
    let h22 = (w2 * w2.transpose()) * k + (id * n1 - xi1 * xi1.transpose()) * c;
    let h12 = (w1 * w2.transpose()) * k + (xi1 * xi2.transpose() * 2.0 - xi2 * xi1.transpose() - id * d12) * c;
    Ok(LocalKernel {
        energy: quadratic_energy(c2, area, ref_area),
        grad: [w1 * c, w2 * c],
        hess: [[h11, h12], [h12.transpose(), h22]],
    })
}

/// Lexicographic order of three vectors. Evaluating in this order makes
/// triplet quantities bitwise independent of the argument order.
fn canonical_order(v: [&Vec3; 3]) -> [usize; 3] {
    let mut idx = [0, 1, 2];
    idx.sort_by(|&p, &q| {
        let (a, b) = (v[p], v[q]);
        a.x.total_cmp(&b.x).then(a.y.total_cmp(&b.y)).then(a.z.total_cmp(&b.z))
    });
    idx
}

/// `a . (b x c)`, evaluated in canonical order so that permuting the
/// arguments changes at most the sign.
pub fn signed_triplet_volume(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    let v = [a, b, c];
    let perm = canonical_order(v);
    let det = v[perm[0]].dot(&v[perm[1]].cross(v[perm[2]]));
    // cyclic orders are even permutations
    if matches!(perm, [0, 1, 2] | [1, 2, 0] | [2, 0, 1]) {
        det
    } else {
        -det
    }
}

/// `|a . (b x c)|`, identical for every ordering of the arguments.
pub fn triplet_volume(a: &Vec3, b: &Vec3, c: &Vec3) -> f64 {
    signed_triplet_volume(a, b, c).abs()
}

/// Triplet kernel. `ref_volume` is `|Xi' . (Xi'' x Xi''')|`.
///
/// The result for a permuted argument list is the permuted result, bitwise.
pub fn triplet_kernel(
    xi1: &Vec3,
    xi2: &Vec3,
    xi3: &Vec3,
    ref_volume: f64,
    c3: f64,
) -> std::result::Result<LocalKernel<3>, KernelError> {
    let v = [xi1, xi2, xi3];
    let perm = canonical_order(v);
    let k = triplet_kernel_ordered(v[perm[0]], v[perm[1]], v[perm[2]], ref_volume, c3)?;
    let mut out = LocalKernel { energy: k.energy, grad: [Vec3::zeros(); 3], hess: [[Matrix3::zeros(); 3]; 3] };
    for p in 0..3 {
        out.grad[perm[p]] = k.grad[p];
        for q in 0..3 {
            out.hess[perm[p]][perm[q]] = k.hess[p][q];
        }
    }
    Ok(out)
}

fn triplet_kernel_ordered(
    xi1: &Vec3,
    xi2: &Vec3,
    xi3: &Vec3,
    ref_volume: f64,
    c3: f64,
) -> std::result::Result<LocalKernel<3>, KernelError> {
    let n =[xi2.cross(xi3), xi3.cross(xi1), xi1.cross(xi2)];
    let v = xi1.dot(&n[0]);
    if v.abs() <= COLLAPSE_RATIO * ref_volume {
        return Err(KernelError::CollapsedVolume);
    }
    let s = c3 * (1.0 / ref_volume - 1.0 / v.abs()) * v;
    let k = c3 / ref_volume;
    let outer = |p: usize, q: usize| (n[p] * n[q].transpose()) * k;
    // d n_p / d xi_q
    let (s1, s2, s3) = (skew(xi1) * s, skew(xi2) * s, skew(xi3) * s);
    let h12 = outer(0, 1) - s3;
    let h13 = outer(0, 2) + s2;
    let h23 = outer(1, 2) - s1;
    Ok(LocalKernel {
        energy: quadratic_energy(c3, v.abs(), ref_volume),
        grad: [n[0] * s, n[1] * s, n[2] * s],
        hess: [
            [outer(0, 0), h12, h13],
            [h12.transpose(), outer(1, 1), h23],
            [h13.transpose(), h23.transpose(), outer(2, 2)],
        ],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use nalgebra::Rotation3;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn v(x: f64, y: f64, z: f64) -> Vec3 {
        Vec3::new(x, y, z)
    }

    fn mat(c1: f64, c2: f64, c3: f64) -> Material {
        Material { c1, c2, c3, horizon: 1.0, interactions: Interactions::ALL }
    }

    fn random_vec(rng: &mut ChaCha8Rng) -> Vec3 {
        v(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
    }

    /// Random admissible material triad with a perturbed spatial image.
    fn random_triad(rng: &mut ChaCha8Rng) -> ([Vec3; 3], [Vec3; 3]) {
        loop {
            let big = [random_vec(rng), random_vec(rng), random_vec(rng)];
            let vol = big[0].cross(&big[1]).dot(&big[2]).abs();
            if vol < 0.05 {
                continue;
            }
            let f = nalgebra::Matrix3::identity() + nalgebra::Matrix3::from_fn(|_, _| rng.random_range(-0.3..0.3));
            let small = [f * big[0] + random_vec(rng) * 0.05, f * big[1] + random_vec(rng) * 0.05, f * big[2]];
            if small[0].cross(&small[1]).dot(&small[2]).abs() > 0.02 {
                return (small, big);
            }
        }
    }

    /// Central finite difference of `f` along each Cartesian component of bond `slot`.
    fn fd_gradient(f: impl Fn(&[Vec3; 3]) -> f64, x: &[Vec3; 3], slot: usize, h: f64) -> Vec3 {
        let mut g = Vec3::zeros();
        for c in 0..3 {
            let (mut xp, mut xm) = (*x, *x);
            xp[slot][c] += h;
            xm[slot][c] -= h;
            g[c] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn rel_err(a: &Vec3, b: &Vec3) -> f64 {
        (a - b).norm() / b.norm().max(a.norm()).max(1e-300)
    }

    #[test]
    fn energy_examples() {
        let m = mat(2.0, 0.0, 1.0);
        let undeformed = RelativeMeasures::bond(v(0.3, 0.4, 0.0), v(0.3, 0.4, 0.0));
        assert_eq!(energy_density(InteractionKind::One, &undeformed, &m).unwrap(), 0.0);
        let stretched = RelativeMeasures::bond(v(1.5, 0.0, 0.0), v(1.0, 0.0, 0.0));
        // brute-force scalar evaluation
        let (c1, l, big_l) = (2.0, 1.5f64, 1.0f64);
        let brute = 0.5 * c1 * big_l * (l / big_l - 1.0).powi(2);
        assert_eq!(brute, 0.25);
        assert_relative_eq!(energy_density(InteractionKind::One, &stretched, &m).unwrap(), brute, max_relative = 1e-15);
        let tet = RelativeMeasures::triplet(
            v(2.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(0.0, 0.0, 1.0),
            v(1.0, 0.0, 0.0),
            v(0.0, 1.0, 0.0),
            v(0.0, 0.0, 1.0),
        );
        assert_relative_eq!(energy_density(InteractionKind::Three, &tet, &m).unwrap(), 0.5, max_relative = 1e-15);
    }

    #[test]
    fn degenerate_reference_rejected() {
        let m = mat(1.0, 1.0, 1.0);
        let flat = RelativeMeasures::pair(v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0), v(1.0, 0.0, 0.0), v(2.0, 0.0, 0.0));
        assert_eq!(energy_density(InteractionKind::Two, &flat, &m), Err(KernelError::DegenerateReference));
    }

    #[test]
    fn bond_force_examples() {
        assert_eq!(force_density_one(&v(1.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), 3.0).unwrap(), Vec3::zeros());
        let p = force_density_one(&v(2.0, 0.0, 0.0), &v(1.0, 0.0, 0.0), 1.0).unwrap();
        // finite-difference oracle of psi_1 with step 1e-6
        let psi = |x: &[Vec3; 3]| quadratic_energy(1.0, x[0].norm(), 1.0);
        let fd = fd_gradient(psi, &[v(2.0, 0.0, 0.0), Vec3::zeros(), Vec3::zeros()], 0, 1e-6);
        assert_relative_eq!(fd, v(1.0, 0.0, 0.0), epsilon = 1e-8);
        assert_relative_eq!(p, v(1.0, 0.0, 0.0), epsilon = 1e-15);
        assert_eq!(force_density_one(&Vec3::zeros(), &v(1.0, 0.0, 0.0), 1.0), Err(KernelError::CollapsedBond));
    }

    #[test]
    fn bond_force_rotates_with_spatial_bond() {
        let q = Rotation3::from_euler_angles(0.3, -1.1, 2.0);
        let (xi, big) = (v(0.7, -0.2, 1.3), v(1.0, 0.5, 0.25));
        let p = force_density_one(&xi, &big, 1.7).unwrap();
        let pq = force_density_one(&(q * xi), &big, 1.7).unwrap();
        assert_relative_eq!(pq, q * p, epsilon = 1e-14);
    }

    #[test]
    fn pair_force_examples() {
        let (b1, b2) = (v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0));
        let rest = force_density_two(&b1, &b2, &b1, &b2, 1.0).unwrap();
        assert_eq!(rest.area_derivative, Vec3::zeros());
        assert_eq!(rest.pair_term, Vec3::zeros());

        let f = force_density_two(&v(2.0, 0.0, 0.0), &b2, &b1, &b2, 1.0).unwrap();
        assert_relative_eq!(f.area_derivative, v(0.0, 0.0, 1.0), epsilon = 1e-15);
        assert_relative_eq!(f.pair_term, v(2.0, 0.0, 0.0), epsilon = 1e-15);
        // the pair term is twice the derivative of psi_2 with respect to xi'
        let psi = |x: &[Vec3; 3]| quadratic_energy(1.0, x[0].cross(&x[1]).norm(), 1.0);
        let fd = fd_gradient(psi, &[v(2.0, 0.0, 0.0), b2, Vec3::zeros()], 0, 1e-6);
        assert_relative_eq!(fd * 2.0, f.pair_term, epsilon = 1e-8);

        // swapping the roles flips the area vector but not its magnitude coefficient
        let g = force_density_two(&b2, &v(2.0, 0.0, 0.0), &b2, &b1, 1.0).unwrap();
        assert_relative_eq!(g.area_derivative, -f.area_derivative, epsilon = 1e-15);
    }

    #[test]
    fn triplet_force_examples() {
        let e = [v(1.0, 0.0, 0.0), v(0.0, 1.0, 0.0), v(0.0, 0.0, 1.0)];
        let rest = force_density_three(&e[0], &e[1], &e[2], &e[0], &e[1], &e[2], 1.0).unwrap();
        assert_eq!(rest.volume_derivative, 0.0);
        assert_eq!(rest.triplet_term, Vec3::zeros());

        let x1 = v(2.0, 0.0, 0.0);
        let f = force_density_three(&x1, &e[1], &e[2], &e[0], &e[1], &e[2], 1.0).unwrap();
        assert_relative_eq!(f.volume_derivative, 1.0, epsilon = 1e-15);
        assert_relative_eq!(f.triplet_term, v(3.0, 0.0, 0.0), epsilon = 1e-15);
        let psi = |x: &[Vec3; 3]| quadratic_energy(1.0, x[0].cross(&x[1]).dot(&x[2]).abs(), 1.0);
        let fd = fd_gradient(psi, &[x1, e[1], e[2]], 0, 1e-6);
        assert_relative_eq!(fd * 3.0, f.triplet_term, epsilon = 1e-8);

        // even permutation with matching reference permutation
        let g = force_density_three(&e[1], &e[2], &x1, &e[1], &e[2], &e[0], 1.0).unwrap();
        assert_relative_eq!(g.volume_derivative, f.volume_derivative, epsilon = 1e-15);
    }

    #[test]
    fn pair_term_expansion_identity() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..200 {
            let (x, b) = random_triad(&mut rng);
            let f = force_density_two(&x[0], &x[1], &b[0], &b[1], 1.3).unwrap();
            let e = pair_term_expanded(&x[0], &x[1], b[0].cross(&b[1]).norm(), 1.3);
            assert!(rel_err(&e, &f.pair_term) <= 1e-14 || (e - f.pair_term).norm() <= 1e-15);
        }
    }

    #[test]
    fn objectivity_of_energies() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let m = mat(1.0, 0.7, 0.4);
        for _ in 0..100 {
            let (x, b) = random_triad(&mut rng);
            let q = Rotation3::from_euler_angles(
                rng.random_range(-3.0..3.0),
                rng.random_range(-1.5..1.5),
                rng.random_range(-3.0..3.0),
            );
            let r = RelativeMeasures::triplet(x[0], x[1], x[2], b[0], b[1], b[2]);
            let rq = RelativeMeasures::triplet(q * x[0], q * x[1], q * x[2], b[0], b[1], b[2]);
            for kind in [InteractionKind::One, InteractionKind::Two, InteractionKind::Three] {
                let (e, eq) = (energy_density(kind, &r, &m).unwrap(), energy_density(kind, &rq, &m).unwrap());
                assert!((e - eq).abs() <= 1e-12 * e.abs().max(1e-300) || (e - eq).abs() < 1e-17, "{kind:?} {e} {eq}");
            }
        }
    }

    #[test]
    fn energies_nonnegative_and_zero_only_at_unit_stretch() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let m = mat(1.0, 1.0, 1.0);
        for _ in 0..100 {
            let (x, b) = random_triad(&mut rng);
            let r = RelativeMeasures::triplet(x[0], x[1], x[2], b[0], b[1], b[2]);
            for kind in [InteractionKind::One, InteractionKind::Two, InteractionKind::Three] {
                let e = energy_density(kind, &r, &m).unwrap();
                assert!(e >= 0.0);
                assert_eq!(e == 0.0, r.stretch(kind) == 1.0);
            }
        }
    }

    /// Kernels against central differences: gradients from the energy and
    /// Hessians from the gradients, on random admissible configurations.
    #[test]
    fn kernels_match_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let tol = 1e-6;
        for _ in 0..120 {
            let (x, b) = random_triad(&mut rng);
            let scale = x.iter().map(|u| u.norm()).fold(0.0, f64::max);
            let h = 1e-6 * scale;
            let (rl, ra, rv) = (b[0].norm(), b[0].cross(&b[1]).norm(), b[0].cross(&b[1]).dot(&b[2]).abs());

            let k1 = |x: &[Vec3; 3]| bond_kernel(&x[0], rl, 1.1).unwrap();
            let k2 = |x: &[Vec3; 3]| pair_kernel(&x[0], &x[1], ra, 0.9).unwrap();
            let k3 = |x: &[Vec3; 3]| triplet_kernel(&x[0], &x[1], &x[2], rv, 0.6).unwrap();

            // gradient checks
            let g1 = fd_gradient(|y| k1(y).energy, &x, 0, h);
            assert!(rel_err(&k1(&x).grad[0], &g1) <= tol);
            for s in 0..2 {
                let g = fd_gradient(|y| k2(y).energy, &x, s, h);
                assert!(rel_err(&k2(&x).grad[s], &g) <= tol, "pair grad {s}");
            }
            for s in 0..3 {
                let g = fd_gradient(|y| k3(y).energy, &x, s, h);
                assert!(rel_err(&k3(&x).grad[s], &g) <= tol, "triplet grad {s}");
            }

            // Hessian checks, column by column
            for q in 0..3 {
                for c in 0..3 {
                    let (mut xp, mut xm) = (x, x);
                    xp[q][c] += h;
                    xm[q][c] -= h;
                    let check = |p: usize, hp: Vec3, hm: Vec3, block: &Matrix3<f64>, scale: f64| {
                        let fd = (hp - hm) / (2.0 * h);
                        let an: Vec3 = block.column(c).into();
                        assert!((fd - an).norm() <= tol * scale, "block ({p},{q}) col {c}: {fd} vs {an}");
                    };
                    if q == 0 {
                        let s = k1(&x).hess[0][0].norm();
                        check(0, k1(&xp).grad[0], k1(&xm).grad[0], &k1(&x).hess[0][0], s);
                    }
                    if q < 2 {
                        let s = k2(&x).hess.iter().flatten().map(|m| m.norm()).fold(0.0, f64::max);
                        for p in 0..2 {
                            check(p, k2(&xp).grad[p], k2(&xm).grad[p], &k2(&x).hess[p][q], s);
                        }
                    }
                    let s = k3(&x).hess.iter().flatten().map(|m| m.norm()).fold(0.0, f64::max);
                    for p in 0..3 {
                        check(p, k3(&xp).grad[p], k3(&xm).grad[p], &k3(&x).hess[p][q], s);
                    }
                }
            }
        }
    }

    #[test]
    fn kernels_agree_with_force_densities() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (x, b) = random_triad(&mut rng);
            let p1 = force_density_one(&x[0], &b[0], 1.2).unwrap();
            assert!(rel_err(&bond_kernel(&x[0], b[0].norm(), 1.2).unwrap().grad[0], &p1) <= 1e-14);
            let p2 = force_density_two(&x[0], &x[1], &b[0], &b[1], 0.8).unwrap();
            let k2 = pair_kernel(&x[0], &x[1], b[0].cross(&b[1]).norm(), 0.8).unwrap();
            assert!(rel_err(&(k2.grad[0] * 2.0), &p2.pair_term) <= 1e-13);
            let p3 = force_density_three(&x[0], &x[1], &x[2], &b[0], &b[1], &b[2], 0.5).unwrap();
            let k3 = triplet_kernel(&x[0], &x[1], &x[2], triplet_volume(&b[0], &b[1], &b[2]), 0.5).unwrap();
            assert!(rel_err(&(k3.grad[0] * 3.0), &p3.triplet_term) <= 1e-13);
        }
    }

    #[test]
    fn material_validation() {
        assert!(Material::new(1.0, 0.0, 0.0, 0.1, Interactions::ONE).is_ok());
        assert!(Material::new(0.0, 0.0, 0.0, 0.1, Interactions::ONE).is_err());
        assert!(Material::new(1.0, -1.0, 0.0, 0.1, Interactions::ONE_TWO).is_err());
        let no_one = Interactions { one: false, two: true, three: false };
        assert!(Material::new(1.0, 1.0, 0.0, 0.1, no_one).is_err());
    }

    #[test]
    fn triplet_kernel_is_bitwise_permutation_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..50 {
            let (big, xi) = random_triad(&mut rng);
            let ref_vol = triplet_volume(&big[0], &big[1], &big[2]);
            let base = triplet_kernel(&xi[0], &xi[1], &xi[2], ref_vol, 1.7).unwrap();
            for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
                assert_eq!(triplet_volume(&big[perm[0]], &big[perm[1]], &big[perm[2]]), ref_vol);
                let k = triplet_kernel(&xi[perm[0]], &xi[perm[1]], &xi[perm[2]], ref_vol, 1.7).unwrap();
                assert_eq!(k.energy, base.energy);
                for p in 0..3 {
                    assert_eq!(k.grad[p], base.grad[perm[p]]);
                    for q in 0..3 {
                        assert_eq!(k.hess[p][q], base.hess[perm[p]][perm[q]]);
                    }
                }
            }
        }
    }
}
