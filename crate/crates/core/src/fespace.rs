//! Continuous P1 space on the background mesh. The space of one time level is
//! the restriction to the active elements; a function keeps one coefficient
//! per background vertex plus the mask of the DOFs it is defined on.

use std::sync::Arc;

use thiserror::Error;

use crate::geometry::DomainSlice;
use crate::mesh::{BackgroundMesh, Point};

#[derive(Debug, Error, PartialEq)]
pub enum FeError {
    #[error("only polynomial degree 1 is supported (got {0})")]
    UnsupportedDegree(usize),
    #[error("slice and space are built on different meshes")]
    MeshMismatch,
    #[error("element {0} is not active for this function")]
    InactiveElement(usize),
    #[error("dof {0} is not active for this function")]
    InactiveDof(usize),
    #[error("interpolated data is not finite at vertex {0}")]
    NonFinite(usize),
}

#[derive(Clone, Debug)]
pub struct FeSpace {
    mesh: Arc<BackgroundMesh>,
    degree: usize,
}

impl FeSpace {
    pub fn new(mesh: Arc<BackgroundMesh>, degree: usize) -> Result<Self, FeError> {
        if degree != 1 {
            return Err(FeError::UnsupportedDegree(degree));
        }
        Ok(FeSpace { mesh, degree })
    }

    pub fn p1(mesh: Arc<BackgroundMesh>) -> Self {
        FeSpace { mesh, degree: 1 }
    }

    pub fn mesh(&self) -> &BackgroundMesh {
        &self.mesh
    }

    pub fn mesh_arc(&self) -> &Arc<BackgroundMesh> {
        &self.mesh
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn n_dofs(&self) -> usize {
        self.mesh.n_vertices()
    }

    pub fn element_dofs(&self, element: usize) -> [usize; 3] {
        self.mesh.triangles()[element]
    }

    fn check(&self, slice: &DomainSlice) -> Result<(), FeError> {
        slice
            .check_mesh(&self.mesh)
            .map_err(|_| FeError::MeshMismatch)
    }
}

/// Numbering of the active DOFs of one slice.
#[derive(Clone, Debug, PartialEq)]
pub struct ActiveDofs {
    pub mask: Vec<bool>,
    /// Global index of each local (system) DOF, increasing.
    pub global: Vec<usize>,
    local: Vec<usize>,
}

impl ActiveDofs {
    pub fn len(&self) -> usize {
        self.global.len()
    }

    pub fn is_empty(&self) -> bool {
        self.global.is_empty()
    }

    /// System index of a global DOF, if active.
    #[inline]
    pub fn local(&self, global: usize) -> Option<usize> {
        let l = self.local[global];
        (l != usize::MAX).then_some(l)
    }
}

/// Vertices of the active elements.
pub fn active_dofs(space: &FeSpace, slice: &DomainSlice) -> Result<ActiveDofs, FeError> {
    space.check(slice)?;
    let mut mask = vec![false; space.n_dofs()];
    for e in slice.active_elements() {
        for v in space.element_dofs(e) {
            mask[v] = true;
        }
    }
    let mut local = vec![usize::MAX; mask.len()];
    let mut global = Vec::new();
    for (i, &m) in mask.iter().enumerate() {
        if m {
            local[i] = global.len();
            global.push(i);
        }
    }
    Ok(ActiveDofs {
        mask,
        global,
        local,
    })
}

/// Gradients of the three hat functions on a triangle.
pub fn hat_gradients(p: &[Point; 3]) -> [[f64; 2]; 3] {
    let twice_area =
        (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [[0.0; 2]; 3];
    for (i, gi) in g.iter_mut().enumerate() {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        *gi = [
            (p[j][1] - p[k][1]) / twice_area,
            (p[k][0] - p[j][0]) / twice_area,
        ];
    }
    g
}

/// Barycentric coordinates of `x` with respect to `p`. Outside the triangle
/// they are the affine extensions (some negative).
pub fn barycentric(p: &[Point; 3], x: Point) -> [f64; 3] {
    let twice_area =
        (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut l = [0.0; 3];
    for (i, li) in l.iter_mut().enumerate() {
        let (a, b) = (p[(i + 1) % 3], p[(i + 2) % 3]);
        *li = ((b[0] - a[0]) * (x[1] - a[1]) - (x[0] - a[0]) * (b[1] - a[1])) / twice_area;
    }
    l
}

#[derive(Clone, Debug, PartialEq)]
pub struct FeFunction {
    coefficients: Vec<f64>,
    mask: Vec<bool>,
}

impl FeFunction {
    /// Builds a function from coefficients; entries outside `mask` are zeroed.
    pub fn new(mut coefficients: Vec<f64>, mask: Vec<bool>) -> Self {
        assert_eq!(coefficients.len(), mask.len());
        for (c, &m) in coefficients.iter_mut().zip(&mask) {
            if !m {
                *c = 0.0;
            }
        }
        FeFunction { coefficients, mask }
    }

    pub fn zeros(dofs: &ActiveDofs) -> Self {
        FeFunction {
            coefficients: vec![0.0; dofs.mask.len()],
            mask: dofs.mask.clone(),
        }
    }

    /// Scatters system-ordered values onto the active DOFs.
    pub fn from_local(dofs: &ActiveDofs, local: &[f64]) -> Self {
        let mut u = Self::zeros(dofs);
        for (l, &g) in dofs.global.iter().enumerate() {
            u.coefficients[g] = local[l];
        }
        u
    }

    pub fn len(&self) -> usize {
        self.coefficients.len()
    }

    pub fn is_empty(&self) -> bool {
        self.coefficients.is_empty()
    }

    pub fn mask(&self) -> &[bool] {
        &self.mask
    }

    pub fn is_active(&self, dof: usize) -> bool {
        self.mask[dof]
    }

    /// Raw coefficient storage (inactive entries are zero).
    pub fn coefficients(&self) -> &[f64] {
        &self.coefficients
    }

    pub fn value(&self, dof: usize) -> Result<f64, FeError> {
        if self.mask[dof] {
            Ok(self.coefficients[dof])
        } else {
            Err(FeError::InactiveDof(dof))
        }
    }

    pub fn element_values(&self, space: &FeSpace, element: usize) -> Result<[f64; 3], FeError> {
        let d = space.element_dofs(element);
        if d.iter().all(|&i| self.mask[i]) {
            Ok(d.map(|i| self.coefficients[i]))
        } else {
            Err(FeError::InactiveElement(element))
        }
    }
}

pub fn evaluate(space: &FeSpace, u: &FeFunction, element: usize, x: Point) -> Result<f64, FeError> {
    let v = u.element_values(space, element)?;
    let l = barycentric(&space.mesh().triangle_points(element), x);
    Ok(l[0] * v[0] + l[1] * v[1] + l[2] * v[2])
}

pub fn evaluate_gradient(
    space: &FeSpace,
    u: &FeFunction,
    element: usize,
) -> Result<[f64; 2], FeError> {
    let v = u.element_values(space, element)?;
    let g = hat_gradients(&space.mesh().triangle_points(element));
    Ok([
        v[0] * g[0][0] + v[1] * g[1][0] + v[2] * g[2][0],
        v[0] * g[0][1] + v[1] * g[1][1] + v[2] * g[2][1],
    ])
}

/// Lagrange interpolant of `g` on the active DOFs of `slice`.
pub fn interpolate(
    space: &FeSpace,
    slice: &DomainSlice,
    g: impl Fn(Point) -> f64,
) -> Result<FeFunction, FeError> {
    let dofs = active_dofs(space, slice)?;
    let mut u = FeFunction::zeros(&dofs);
    let verts = space.mesh().vertices();
    for &i in &dofs.global {
        let v = g(verts[i]);
        if !v.is_finite() {
            return Err(FeError::NonFinite(i));
        }
        u.coefficients[i] = v;
    }
    Ok(u)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{classify, LevelSetField};
    use crate::mesh::{build_structured_mesh, Rect};
    use crate::par::Exec;

    fn setup(values: impl Fn(Point) -> f64) -> (FeSpace, DomainSlice) {
        let mesh = Arc::new(build_structured_mesh(Rect::unit(), 4, 4, None).unwrap());
        let ls = LevelSetField {
            t: 0.0,
            values: mesh.vertices().iter().map(|&p| values(p)).collect(),
        };
        let slice = classify(&mesh, &ls, 0.0, Exec::Sequential);
        (FeSpace::p1(mesh), slice)
    }

    #[test]
    fn degree_must_be_one() {
        let mesh = Arc::new(build_structured_mesh(Rect::unit(), 1, 1, None).unwrap());
        assert_eq!(
            FeSpace::new(mesh.clone(), 2).unwrap_err(),
            FeError::UnsupportedDegree(2)
        );
        assert_eq!(FeSpace::new(mesh, 1).unwrap().n_dofs(), 4);
    }

    #[test]
    fn active_dof_sets() {
        let (space, all) = setup(|_| -1.0);
        assert_eq!(active_dofs(&space, &all).unwrap().len(), space.n_dofs());
        let (space, none) = setup(|_| 1.0);
        assert!(active_dofs(&space, &none).unwrap().is_empty());
        // Only the corner vertex (0,0) negative: both triangles of the first
        // cell share it, so their four vertices are active.
        let (space, corner) = setup(|p| if p == [0.0, 0.0] { -1.0 } else { 1.0 });
        let act: Vec<_> = corner.active_elements().collect();
        assert_eq!(act, vec![0, 1]);
        let dofs = active_dofs(&space, &corner).unwrap();
        assert_eq!(dofs.global, vec![0, 1, 5, 6]);
    }

    #[test]
    fn mesh_mismatch_detected() {
        let (space, _) = setup(|_| -1.0);
        let other = build_structured_mesh(Rect::unit(), 2, 2, None).unwrap();
        let ls = LevelSetField {
            t: 0.0,
            values: vec![-1.0; other.n_vertices()],
        };
        let slice = classify(&other, &ls, 0.0, Exec::Sequential);
        assert_eq!(
            active_dofs(&space, &slice).unwrap_err(),
            FeError::MeshMismatch
        );
    }

    #[test]
    fn evaluation_reproduces_linears_and_constants() {
        let (space, slice) = setup(|_| -1.0);
        let c = interpolate(&space, &slice, |_| 2.5).unwrap();
        let lin = interpolate(&space, &slice, |p| p[0]).unwrap();
        for e in 0..space.mesh().n_triangles() {
            let p = space.mesh().triangle_points(e);
            let x = [
                (p[0][0] + p[1][0] + 2.0 * p[2][0]) / 4.0,
                (p[0][1] + p[1][1] + 2.0 * p[2][1]) / 4.0,
            ];
            assert!((evaluate(&space, &c, e, x).unwrap() - 2.5).abs() < 1e-14);
            assert_eq!(
                evaluate_gradient(&space, &c, e)
                    .unwrap()
                    .map(|g| g.abs() < 1e-12),
                [true, true]
            );
            assert!((evaluate(&space, &lin, e, x).unwrap() - x[0]).abs() < 1e-14);
            let g = evaluate_gradient(&space, &lin, e).unwrap();
            assert!((g[0] - 1.0).abs() < 1e-12 && g[1].abs() < 1e-12);
        }
    }

    #[test]
    fn hat_functions_are_lagrange() {
        let (space, slice) = setup(|_| -1.0);
        let dofs = active_dofs(&space, &slice).unwrap();
        let e = 5;
        let tri = space.element_dofs(e);
        let pts = space.mesh().triangle_points(e);
        for (k, &i) in tri.iter().enumerate() {
            let mut c = vec![0.0; space.n_dofs()];
            c[i] = 1.0;
            let hat = FeFunction::new(c, dofs.mask.clone());
            for (m, p) in pts.iter().enumerate() {
                assert_eq!(
                    evaluate(&space, &hat, e, *p).unwrap(),
                    if m == k { 1.0 } else { 0.0 }
                );
            }
        }
    }

    #[test]
    fn inactive_reads_are_errors() {
        let (space, slice) = setup(|p| p[0] - 0.3);
        let u = interpolate(&space, &slice, |_| 1.0).unwrap();
        let outside = slice.active.iter().position(|a| !a).unwrap();
        assert_eq!(
            evaluate(&space, &u, outside, [0.9, 0.9]).unwrap_err(),
            FeError::InactiveElement(outside)
        );
        let far = space
            .mesh()
            .vertices()
            .iter()
            .position(|p| *p == [1.0, 1.0])
            .unwrap();
        assert_eq!(u.value(far).unwrap_err(), FeError::InactiveDof(far));
        assert_eq!(u.coefficients()[far], 0.0);
    }

    #[test]
    fn partition_of_unity() {
        let (space, _) = setup(|_| -1.0);
        for e in 0..space.mesh().n_triangles() {
            let p = space.mesh().triangle_points(e);
            for x in [[0.1, 0.2], [0.5, 0.5], p[1]] {
                let l = barycentric(&p, x);
                assert!((l.iter().sum::<f64>() - 1.0).abs() < 1e-13);
            }
            let g = hat_gradients(&p);
            assert!((g[0][0] + g[1][0] + g[2][0]).abs() < 1e-12);
            assert!((g[0][1] + g[1][1] + g[2][1]).abs() < 1e-12);
        }
    }
}
