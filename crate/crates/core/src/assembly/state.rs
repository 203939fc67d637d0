use crate::geometry::{PointCloud, Vec3};

/// Spatial configuration together with the Dirichlet data.
///
/// DOF `3a + c` is component `c` of point `a`.
#[derive(Debug, Clone, PartialEq)]
pub struct State {
    positions: Vec<Vec3>,
    prescribed: Vec<bool>,
    prescribed_value: Vec<f64>,
}

impl State {
    /// Undeformed state `x = X`. In 2D the out-of-plane components are
    /// prescribed to zero.
    pub fn reference(cloud: &PointCloud) -> Self {
        let n = cloud.len();
        let mut s = Self {
            positions: cloud.positions().to_vec(),
            prescribed: vec![false; 3 * n],
            prescribed_value: vec![0.0; 3 * n],
        };
        if cloud.dim() == 2 {
            for a in 0..n {
                s.prescribe(3 * a + 2, 0.0);
            }
        }
        s
    }

    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn n_dofs(&self) -> usize {
        3 * self.positions.len()
    }

    pub fn positions(&self) -> &[Vec3] {
        &self.positions
    }

    pub fn position(&self, a: usize) -> &Vec3 {
        &self.positions[a]
    }

    pub fn dof(&self, dof: usize) -> f64 {
        self.positions[dof / 3][dof % 3]
    }

    /// Overwrites positions; prescribed DOFs are restored afterwards.
    pub fn set_positions(&mut self, positions: Vec<Vec3>) {
        assert_eq!(positions.len(), self.positions.len());
        self.positions = positions;
        self.enforce_prescribed();
    }

    /// Marks `dof` as prescribed with target spatial coordinate `value` and applies it.
    pub fn prescribe(&mut self, dof: usize, value: f64) {
        self.prescribed[dof] = true;
        self.prescribed_value[dof] = value;
        self.positions[dof / 3][dof % 3] = value;
    }

    pub fn release(&mut self, dof: usize) {
        self.prescribed[dof] = false;
    }

    pub fn is_prescribed(&self, dof: usize) -> bool {
        self.prescribed[dof]
    }

    pub fn prescribed_value(&self, dof: usize) -> Option<f64> {
        self.prescribed[dof].then_some(self.prescribed_value[dof])
    }

    pub fn prescribed_mask(&self) -> &[bool] {
        &self.prescribed
    }

    pub fn free_dofs(&self) -> Vec<usize> {
        (0..self.n_dofs()).filter(|&d| !self.prescribed[d]).collect()
    }

    pub fn enforce_prescribed(&mut self) {
        for d in 0..self.prescribed.len() {
            if self.prescribed[d] {
                self.positions[d / 3][d % 3] = self.prescribed_value[d];
            }
        }
    }

    /// Adds `delta` to the free DOFs listed in `free` (same order).
    pub fn update_free(&mut self, free: &[usize], delta: &[f64]) {
        for (&d, &dx) in free.iter().zip(delta) {
            debug_assert!(!self.prescribed[d]);
            self.positions[d / 3][d % 3] += dx;
        }
    }

    /// Applies `f` to every position (prescribed DOFs are not re-enforced).
    pub fn map_positions(&mut self, mut f: impl FnMut(usize, &Vec3) -> Vec3) {
        for (a, p) in self.positions.iter_mut().enumerate() {
            *p = f(a, p);
        }
    }

    pub fn displacement(&self, cloud: &PointCloud, a: usize) -> Vec3 {
        self.positions[a] - cloud.position(a)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{generate_uniform_grid, AxisBox};

    #[test]
    fn two_dimensional_reference_locks_third_component() {
        let c = generate_uniform_grid(&AxisBox::unit(2), &[], 0.5, 2).unwrap();
        let mut s = State::reference(&c);
        assert_eq!(s.free_dofs(), vec![0, 1, 3, 4, 6, 7, 9, 10]);
        s.map_positions(|_, p| p + Vec3::new(0.0, 0.0, 1.0));
        s.enforce_prescribed();
        assert!(s.positions().iter().all(|p| p.z == 0.0));
    }

    #[test]
    fn prescribed_values_survive_updates() {
        let c = generate_uniform_grid(&AxisBox::unit(3), &[], 0.5, 3).unwrap();
        let mut s = State::reference(&c);
        s.prescribe(0, 2.0);
        let free = s.free_dofs();
        assert_eq!(free.len(), 23);
        s.update_free(&free, &vec![0.1; 23]);
        assert_eq!(s.dof(0), 2.0);
        assert_eq!(s.dof(1), 0.25 + 0.1);
        s.set_positions(c.positions().to_vec());
        assert_eq!(s.dof(0), 2.0);
    }
}
