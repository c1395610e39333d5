//! Discrete level-set geometry on a background mesh.
//!
//! The level set is interpolated at the mesh vertices; on every triangle it is
//! therefore linear and the negative part is an exact polygon (a triangle or a
//! quadrilateral). A [`DomainSlice`] stores, for one time level, the element
//! classification, the active and strip element sets, the ghost facets and
//! the cut-cell decompositions.

use thiserror::Error;

use crate::cases::ProblemCase;
use crate::mesh::{BackgroundMesh, Point};
use crate::par::Exec;
use crate::quadrature::{
    gauss_legendre_unit, gauss_points_for_degree, map_triangle_rule, triangle_rule,
};

/// Default polynomial exactness of volume and interface rules.
pub const DEFAULT_QUAD_DEGREE: usize = 4;
/// Exactness used when integrating errors against smooth exact solutions.
pub const ERROR_QUAD_DEGREE: usize = 6;

#[derive(Debug, Error, PartialEq)]
pub enum GeometryError {
    #[error("level set is not finite at vertex {vertex}")]
    NonFinite { vertex: usize },
    #[error("element {element} has no {kind} quadrature (class {class:?})")]
    EmptyRule {
        element: usize,
        kind: &'static str,
        class: ElementClass,
    },
    #[error("unsupported quadrature degree {0}")]
    UnsupportedDegree(usize),
    #[error("level set has {got} values but the mesh has {expected} vertices")]
    MeshMismatch { expected: usize, got: usize },
}

/// Vertex values of the interpolated level set at time `t`.
#[derive(Clone, Debug)]
pub struct LevelSetField {
    pub t: f64,
    pub values: Vec<f64>,
}

pub fn interpolate_levelset(
    case: &ProblemCase,
    mesh: &BackgroundMesh,
    t: f64,
) -> Result<LevelSetField, GeometryError> {
    let values: Vec<f64> = mesh.vertices().iter().map(|&p| case.phi.at(p, t)).collect();
    if let Some(vertex) = values.iter().position(|v| !v.is_finite()) {
        return Err(GeometryError::NonFinite { vertex });
    }
    Ok(LevelSetField { t, values })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum ElementClass {
    Inside,
    Cut,
    Outside,
}

impl ElementClass {
    pub fn code(self) -> u8 {
        match self {
            ElementClass::Inside => 0,
            ElementClass::Cut => 1,
            ElementClass::Outside => 2,
        }
    }
}

/// Negative part of a cut element and its piece of the interface.
#[derive(Clone, Debug, PartialEq)]
pub struct CutCell {
    /// One triangle, or two covering the quadrilateral case.
    pub sub_triangles: Vec<[Point; 3]>,
    pub interface: [Point; 2],
    /// Unit normal, pointing toward increasing level-set values.
    pub normal: [f64; 2],
}

#[derive(Clone, Debug, PartialEq)]
pub struct QuadRule {
    pub points: Vec<Point>,
    pub weights: Vec<f64>,
    pub normal: Option<[f64; 2]>,
}

impl QuadRule {
    pub fn total_weight(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn len(&self) -> usize {
        self.weights.len()
    }

    pub fn is_empty(&self) -> bool {
        self.weights.is_empty()
    }
}

/// Geometric state of one time level.
#[derive(Clone, Debug)]
pub struct DomainSlice {
    pub t: f64,
    pub delta_h: f64,
    /// Vertex values after the zero tie-break.
    pub values: Vec<f64>,
    pub class: Vec<ElementClass>,
    pub active: Vec<bool>,
    pub strip: Vec<bool>,
    pub ghost_facets: Vec<usize>,
    cuts: Vec<Option<CutCell>>,
}

impl DomainSlice {
    pub fn n_elements(&self) -> usize {
        self.class.len()
    }

    pub fn cut(&self, element: usize) -> Option<&CutCell> {
        self.cuts[element].as_ref()
    }

    /// Elements intersecting the physical domain (inside or cut).
    pub fn domain_elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.class
            .iter()
            .enumerate()
            .filter(|(_, c)| **c != ElementClass::Outside)
            .map(|(i, _)| i)
    }

    pub fn active_elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.active
            .iter()
            .enumerate()
            .filter(|(_, a)| **a)
            .map(|(i, _)| i)
    }

    pub fn cut_elements(&self) -> impl Iterator<Item = usize> + '_ {
        self.class
            .iter()
            .enumerate()
            .filter(|(_, c)| **c == ElementClass::Cut)
            .map(|(i, _)| i)
    }

    pub fn check_mesh(&self, mesh: &BackgroundMesh) -> Result<(), GeometryError> {
        if self.values.len() != mesh.n_vertices() || self.class.len() != mesh.n_triangles() {
            return Err(GeometryError::MeshMismatch {
                expected: mesh.n_vertices(),
                got: self.values.len(),
            });
        }
        Ok(())
    }
}

/// Gradient of the linear interpolant of `v` on the triangle `p`.
pub fn linear_gradient(p: &[Point; 3], v: [f64; 3]) -> [f64; 2] {
    let twice_area =
        (p[1][0] - p[0][0]) * (p[2][1] - p[0][1]) - (p[2][0] - p[0][0]) * (p[1][1] - p[0][1]);
    let mut g = [0.0; 2];
    for i in 0..3 {
        let (j, k) = ((i + 1) % 3, (i + 2) % 3);
        g[0] += v[i] * (p[j][1] - p[k][1]);
        g[1] += v[i] * (p[k][0] - p[j][0]);
    }
    [g[0] / twice_area, g[1] / twice_area]
}

fn crossing(p: Point, q: Point, vp: f64, vq: f64) -> Point {
    let s = vp / (vp - vq);
    [p[0] + s * (q[0] - p[0]), p[1] + s * (q[1] - p[1])]
}

/// Decomposes the negative part of a triangle with nonzero vertex values of
/// mixed sign.
fn cut_cell(p: &[Point; 3], v: [f64; 3]) -> CutCell {
    let neg: Vec<usize> = (0..3).filter(|&i| v[i] < 0.0).collect();
    let g = linear_gradient(p, v);
    let norm = g[0].hypot(g[1]);
    let normal = [g[0] / norm, g[1] / norm];
    match neg.len() {
        1 => {
            let a = neg[0];
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            let pab = crossing(p[a], p[b], v[a], v[b]);
            let pac = crossing(p[a], p[c], v[a], v[c]);
            CutCell {
                sub_triangles: vec![[p[a], pab, pac]],
                interface: [pab, pac],
                normal,
            }
        }
        2 => {
            let c = (0..3).find(|&i| v[i] >= 0.0).unwrap();
            let (a, b) = ((c + 1) % 3, (c + 2) % 3);
            let pbc = crossing(p[b], p[c], v[b], v[c]);
            let pac = crossing(p[a], p[c], v[a], v[c]);
            CutCell {
                sub_triangles: vec![[p[a], p[b], pbc], [p[a], pbc, pac]],
                interface: [pbc, pac],
                normal,
            }
        }
        _ => unreachable!("cut element needs mixed signs"),
    }
}

/// Applies the zero tie-break: values with `|v| < 1e-14 h` count as negative.
fn tie_break(values: &[f64], h: f64) -> Vec<f64> {
    let eps = 1e-14 * h;
    values
        .iter()
        .map(|&v| if v.abs() < eps { -eps } else { v })
        .collect()
}

/// Classifies all elements for strip half-width `delta_h` and builds the
/// cut data and the ghost-facet set.
pub fn classify(
    mesh: &BackgroundMesh,
    levelset: &LevelSetField,
    delta_h: f64,
    exec: Exec,
) -> DomainSlice {
    assert!(delta_h >= 0.0, "strip width must be non-negative");
    assert_eq!(
        levelset.values.len(),
        mesh.n_vertices(),
        "level set does not match mesh"
    );
    let values = tie_break(&levelset.values, mesh.h());
    let per_element = exec.map_range(mesh.n_triangles(), |e| {
        let tri = mesh.triangles()[e];
        let v = [values[tri[0]], values[tri[1]], values[tri[2]]];
        let vmin = v[0].min(v[1]).min(v[2]);
        let vmax = v[0].max(v[1]).max(v[2]);
        let class = if vmax < 0.0 {
            ElementClass::Inside
        } else if vmin > 0.0 {
            ElementClass::Outside
        } else {
            ElementClass::Cut
        };
        let active = vmin <= delta_h;
        let strip = active && vmax >= -delta_h;
        let cut = (class == ElementClass::Cut).then(|| cut_cell(&mesh.triangle_points(e), v));
        (class, active, strip, cut)
    });
    let mut slice = DomainSlice {
        t: levelset.t,
        delta_h,
        values,
        class: Vec::with_capacity(per_element.len()),
        active: Vec::with_capacity(per_element.len()),
        strip: Vec::with_capacity(per_element.len()),
        ghost_facets: Vec::new(),
        cuts: Vec::with_capacity(per_element.len()),
    };
    for (c, a, s, cut) in per_element {
        slice.class.push(c);
        slice.active.push(a);
        slice.strip.push(s);
        slice.cuts.push(cut);
    }
    slice.ghost_facets = ghost_facets(&slice, mesh);
    slice
}

/// Interior facets whose two neighbors are active and at least one of them
/// lies in the strip.
pub fn ghost_facets(slice: &DomainSlice, mesh: &BackgroundMesh) -> Vec<usize> {
    mesh.facets()
        .iter()
        .enumerate()
        .filter_map(|(i, f)| match f.triangles {
            [Some(a), Some(b)] if a != b => {
                (slice.active[a] && slice.active[b] && (slice.strip[a] || slice.strip[b]))
                    .then_some(i)
            }
            _ => None,
        })
        .collect()
}

/// Reusable reference rules for a fixed polynomial exactness.
#[derive(Clone, Debug)]
pub struct RuleSet {
    pub degree: usize,
    tri: Vec<([f64; 3], f64)>,
    line: Vec<(f64, f64)>,
}

impl RuleSet {
    pub fn new(degree: usize) -> Result<Self, GeometryError> {
        let tri = triangle_rule(degree).ok_or(GeometryError::UnsupportedDegree(degree))?;
        Ok(RuleSet {
            degree,
            tri,
            line: gauss_legendre_unit(gauss_points_for_degree(degree)),
        })
    }

    /// Appends the volume rule of `element` restricted to the negative part.
    /// Outside elements contribute nothing.
    pub fn push_volume(
        &self,
        mesh: &BackgroundMesh,
        slice: &DomainSlice,
        element: usize,
        points: &mut Vec<Point>,
        weights: &mut Vec<f64>,
    ) {
        match slice.class[element] {
            ElementClass::Inside => {
                map_triangle_rule(&self.tri, &mesh.triangle_points(element), points, weights)
            }
            ElementClass::Cut => {
                for sub in &slice.cuts[element]
                    .as_ref()
                    .expect("cut data")
                    .sub_triangles
                {
                    map_triangle_rule(&self.tri, sub, points, weights);
                }
            }
            ElementClass::Outside => {}
        }
    }

    /// Appends the interface rule of a cut element; returns its normal.
    pub fn push_interface(
        &self,
        slice: &DomainSlice,
        element: usize,
        points: &mut Vec<Point>,
        weights: &mut Vec<f64>,
    ) -> Option<[f64; 2]> {
        let cut = slice.cuts[element].as_ref()?;
        let [a, b] = cut.interface;
        let len = (b[0] - a[0]).hypot(b[1] - a[1]);
        for &(s, w) in &self.line {
            points.push([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])]);
            weights.push(w * len);
        }
        Some(cut.normal)
    }

    /// Volume rule over the whole triangle, ignoring the level set.
    pub fn push_full(
        &self,
        mesh: &BackgroundMesh,
        element: usize,
        points: &mut Vec<Point>,
        weights: &mut Vec<f64>,
    ) {
        map_triangle_rule(&self.tri, &mesh.triangle_points(element), points, weights);
    }
}

pub fn cut_volume_quadrature(
    mesh: &BackgroundMesh,
    slice: &DomainSlice,
    element: usize,
    degree: usize,
) -> Result<QuadRule, GeometryError> {
    let class = slice.class[element];
    if class == ElementClass::Outside {
        return Err(GeometryError::EmptyRule {
            element,
            kind: "volume",
            class,
        });
    }
    let rules = RuleSet::new(degree)?;
    let (mut points, mut weights) = (Vec::new(), Vec::new());
    rules.push_volume(mesh, slice, element, &mut points, &mut weights);
    Ok(QuadRule {
        points,
        weights,
        normal: None,
    })
}

pub fn interface_quadrature(
    slice: &DomainSlice,
    element: usize,
    degree: usize,
) -> Result<QuadRule, GeometryError> {
    let class = slice.class[element];
    if class != ElementClass::Cut {
        return Err(GeometryError::EmptyRule {
            element,
            kind: "interface",
            class,
        });
    }
    let rules = RuleSet::new(degree)?;
    let (mut points, mut weights) = (Vec::new(), Vec::new());
    let normal = rules.push_interface(slice, element, &mut points, &mut weights);
    Ok(QuadRule {
        points,
        weights,
        normal,
    })
}

/// Area of the discrete domain.
pub fn domain_measure(mesh: &BackgroundMesh, slice: &DomainSlice) -> f64 {
    slice
        .domain_elements()
        .map(|e| match slice.cut(e) {
            None => mesh.triangle_area(e),
            Some(c) => c
                .sub_triangles
                .iter()
                .map(|s| crate::mesh::signed_area(s[0], s[1], s[2]).abs())
                .sum(),
        })
        .sum()
}

/// Length of the discrete interface.
pub fn interface_length(slice: &DomainSlice) -> f64 {
    slice
        .cuts
        .iter()
        .flatten()
        .map(|c| {
            (c.interface[1][0] - c.interface[0][0]).hypot(c.interface[1][1] - c.interface[0][1])
        })
        .sum()
}
