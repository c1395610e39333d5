//! Bilinear and linear forms on one [`DomainSlice`].
//!
//! Matrices are indexed by the active DOFs of the slice (see
//! [`ActiveDofs`]); row `i` belongs to the test function, column `j` to the
//! trial function. Element and facet loops produce dense local blocks that are
//! merged in loop order, so results do not depend on the execution mode.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::cases::{Field, ProblemCase};
use crate::fespace::{
    active_dofs, barycentric, hat_gradients, ActiveDofs, FeError, FeFunction, FeSpace,
};
use crate::geometry::{DomainSlice, GeometryError, RuleSet, DEFAULT_QUAD_DEGREE};
use crate::linalg::SparseMatrix;
use crate::mesh::Point;
use crate::par::Exec;

#[derive(Debug, Error, PartialEq)]
pub enum AssemblyError {
    #[error(transparent)]
    Fe(#[from] FeError),
    #[error(transparent)]
    Geometry(#[from] GeometryError),
    #[error("{0} is not finite on the domain")]
    NonFinite(&'static str),
    #[error("the case has no Dirichlet data")]
    MissingDirichletData,
}

/// Diffusion-convection form.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum FormVariant {
    /// `alpha grad u . grad v + (w . grad u) v + div(w) u v`.
    #[default]
    Implementation,
    /// Skew-symmetric convection with the interface term
    /// `1/2 int_Gamma (w . n) u v`.
    Skew,
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash)]
pub enum GhostVariant {
    /// Difference of the affine extensions from the two patch elements.
    #[default]
    Direct,
    /// Deviation from the L2 projection onto linears on the patch.
    Lps,
    /// Jump of the normal derivative across the facet.
    DJump,
}

impl fmt::Display for FormVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            FormVariant::Implementation => "impl",
            FormVariant::Skew => "skew",
        })
    }
}

impl FromStr for FormVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "impl" | "implementation" => Ok(FormVariant::Implementation),
            "skew" => Ok(FormVariant::Skew),
            o => Err(format!("unknown form '{o}' (expected impl|skew)")),
        }
    }
}

impl fmt::Display for GhostVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            GhostVariant::Direct => "dir",
            GhostVariant::Lps => "lps",
            GhostVariant::DJump => "djump",
        })
    }
}

impl FromStr for GhostVariant {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "dir" | "direct" => Ok(GhostVariant::Direct),
            "lps" => Ok(GhostVariant::Lps),
            "djump" | "djmp" => Ok(GhostVariant::DJump),
            o => Err(format!(
                "unknown ghost penalty '{o}' (expected dir|lps|djump)"
            )),
        }
    }
}

/// Default Nitsche penalty scale: `lambda_h = 10 alpha / h`.
pub const DEFAULT_NITSCHE_LAMBDA0: f64 = 10.0;

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Four patch DOFs of a ghost facet: the vertices of the first element
/// followed by the vertex of the second element opposite the facet.
struct Patch {
    dofs: [usize; 4],
    tri: [[crate::mesh::Point; 3]; 2],
    /// Position of each patch DOF in the two elements' vertex lists.
    slot: [[Option<usize>; 4]; 2],
    facet: [Point; 2],
}

pub struct Assembler<'a> {
    space: &'a FeSpace,
    slice: &'a DomainSlice,
    dofs: ActiveDofs,
    rules: RuleSet,
    exec: Exec,
    domain: Vec<usize>,
    cut: Vec<usize>,
    h: f64,
}

impl<'a> Assembler<'a> {
    pub fn new(
        space: &'a FeSpace,
        slice: &'a DomainSlice,
        exec: Exec,
    ) -> Result<Self, AssemblyError> {
        Self::with_degree(space, slice, DEFAULT_QUAD_DEGREE, exec)
    }

    pub fn with_degree(
        space: &'a FeSpace,
        slice: &'a DomainSlice,
        degree: usize,
        exec: Exec,
    ) -> Result<Self, AssemblyError> {
        let dofs = active_dofs(space, slice)?;
        Ok(Assembler {
            space,
            slice,
            dofs,
            rules: RuleSet::new(degree)?,
            exec,
            domain: slice.domain_elements().collect(),
            cut: slice.cut_elements().collect(),
            h: space.mesh().h(),
        })
    }

    pub fn dofs(&self) -> &ActiveDofs {
        &self.dofs
    }

    pub fn n(&self) -> usize {
        self.dofs.len()
    }

    fn local(&self, global: usize) -> usize {
        self.dofs.local(global).expect("element DOF must be active")
    }

    fn blocks<const K: usize>(
        &self,
        items: &[usize],
        dofs_of: impl Fn(usize) -> [usize; K] + Sync + Send,
        block: impl Fn(usize) -> [[f64; K]; K] + Sync + Send,
    ) -> SparseMatrix {
        let local = self.exec.map_slice(items, |&it| (dofs_of(it), block(it)));
        let mut trip = Vec::with_capacity(local.len() * K * K);
        for (d, b) in local {
            for i in 0..K {
                for j in 0..K {
                    trip.push((self.local(d[i]), self.local(d[j]), b[i][j]));
                }
            }
        }
        SparseMatrix::from_triplets(self.n(), self.n(), trip)
    }

    fn vector(&self, items: &[usize], block: impl Fn(usize) -> [f64; 3] + Sync + Send) -> Vec<f64> {
        let local = self.exec.map_slice(items, |&e| block(e));
        let mut b = vec![0.0; self.n()];
        for (&e, v) in items.iter().zip(local) {
            for (k, g) in self.space.element_dofs(e).into_iter().enumerate() {
                b[self.local(g)] += v[k];
            }
        }
        b
    }

    fn volume_points(&self, e: usize) -> (Vec<Point>, Vec<f64>) {
        let (mut p, mut w) = (Vec::new(), Vec::new());
        self.rules
            .push_volume(self.space.mesh(), self.slice, e, &mut p, &mut w);
        (p, w)
    }

    fn element_dofs(&self, e: usize) -> [usize; 3] {
        self.space.element_dofs(e)
    }

    /// `M_ij = int_{Omega_h} phi_i phi_j`.
    pub fn mass(&self) -> SparseMatrix {
        let mesh = self.space.mesh();
        self.blocks(
            &self.domain,
            |e| self.element_dofs(e),
            |e| {
                let tri = mesh.triangle_points(e);
                let (pts, wts) = self.volume_points(e);
                let mut m = [[0.0; 3]; 3];
                for (x, w) in pts.iter().zip(&wts) {
                    let l = barycentric(&tri, *x);
                    for i in 0..3 {
                        for j in 0..3 {
                            m[i][j] += w * l[i] * l[j];
                        }
                    }
                }
                m
            },
        )
    }

    /// Diffusion-convection matrix at time `t`. `boundary_term` controls the
    /// interface integral of the skew form.
    pub fn diffusion_convection(
        &self,
        case: &ProblemCase,
        t: f64,
        variant: FormVariant,
        boundary_term: bool,
    ) -> SparseMatrix {
        let mesh = self.space.mesh();
        let alpha = case.alpha;
        let skew = variant == FormVariant::Skew;
        let volume = self.blocks(
            &self.domain,
            |e| self.element_dofs(e),
            |e| {
                let tri = mesh.triangle_points(e);
                let g = hat_gradients(&tri);
                let (pts, wts) = self.volume_points(e);
                let mut a = [[0.0; 3]; 3];
                for (x, w) in pts.iter().zip(&wts) {
                    let l = barycentric(&tri, *x);
                    let vel = case.w(*x, t);
                    let div = case.div_w(*x, t);
                    let wg = [dot(vel, g[0]), dot(vel, g[1]), dot(vel, g[2])];
                    for i in 0..3 {
                        for j in 0..3 {
                            let conv = if skew {
                                0.5 * (wg[j] * l[i] - wg[i] * l[j]) + 0.5 * div * l[i] * l[j]
                            } else {
                                wg[j] * l[i] + div * l[i] * l[j]
                            };
                            a[i][j] += w * (alpha * dot(g[i], g[j]) + conv);
                        }
                    }
                }
                a
            },
        );
        if !(skew && boundary_term) {
            return volume;
        }
        let gamma = self.blocks(
            &self.cut,
            |e| self.element_dofs(e),
            |e| {
                let tri = mesh.triangle_points(e);
                let (mut pts, mut wts) = (Vec::new(), Vec::new());
                let n = self
                    .rules
                    .push_interface(self.slice, e, &mut pts, &mut wts)
                    .expect("cut element");
                let mut a = [[0.0; 3]; 3];
                for (x, w) in pts.iter().zip(&wts) {
                    let l = barycentric(&tri, *x);
                    let wn = dot(case.w(*x, t), n);
                    for i in 0..3 {
                        for j in 0..3 {
                            a[i][j] += 0.5 * w * wn * l[i] * l[j];
                        }
                    }
                }
                a
            },
        );
        SparseMatrix::linear_combination(&[(&volume, 1.0), (&gamma, 1.0)])
    }

    /// Only the antisymmetric convection part of the skew form,
    /// `1/2 int (w . grad u) v - (w . grad v) u`.
    pub fn skew_convection(&self, case: &ProblemCase, t: f64) -> SparseMatrix {
        let mesh = self.space.mesh();
        self.blocks(
            &self.domain,
            |e| self.element_dofs(e),
            |e| {
                let tri = mesh.triangle_points(e);
                let g = hat_gradients(&tri);
                let (pts, wts) = self.volume_points(e);
                let mut a = [[0.0; 3]; 3];
                for (x, w) in pts.iter().zip(&wts) {
                    let l = barycentric(&tri, *x);
                    let vel = case.w(*x, t);
                    let wg = [dot(vel, g[0]), dot(vel, g[1]), dot(vel, g[2])];
                    for i in 0..3 {
                        for j in 0..3 {
                            a[i][j] += w * 0.5 * (wg[j] * l[i] - wg[i] * l[j]);
                        }
                    }
                }
                a
            },
        )
    }

    fn patch(&self, facet: usize) -> Patch {
        let mesh = self.space.mesh();
        let f = mesh.facets()[facet];
        let (t1, t2) = (
            f.triangles[0].expect("interior"),
            f.triangles[1].expect("interior"),
        );
        let (v1, v2) = (mesh.triangles()[t1], mesh.triangles()[t2]);
        let opposite = *v2
            .iter()
            .find(|v| !v1.contains(v))
            .expect("distinct elements");
        let dofs = [v1[0], v1[1], v1[2], opposite];
        let mut slot = [[None; 4]; 2];
        for (k, d) in dofs.iter().enumerate() {
            slot[0][k] = v1.iter().position(|v| v == d);
            slot[1][k] = v2.iter().position(|v| v == d);
        }
        let vs = mesh.vertices();
        Patch {
            dofs,
            tri: [mesh.triangle_points(t1), mesh.triangle_points(t2)],
            slot,
            facet: [vs[f.vertices[0]], vs[f.vertices[1]]],
        }
    }

    /// Ghost-penalty matrix summed over the ghost facets of the slice.
    pub fn ghost_penalty(&self, variant: GhostVariant) -> SparseMatrix {
        let h = self.h;
        self.blocks(
            &self.slice.ghost_facets,
            |f| self.patch(f).dofs,
            |f| {
                let p = self.patch(f);
                match variant {
                    GhostVariant::Direct => self.direct_block(&p, h),
                    GhostVariant::Lps => self.lps_block(&p, h),
                    GhostVariant::DJump => djump_block(&p, h),
                }
            },
        )
    }

    /// Quadrature over both patch elements (full triangles).
    fn patch_points(&self, p: &Patch) -> Vec<(Point, f64)> {
        let (mut pts, mut wts) = (Vec::new(), Vec::new());
        let mut out = Vec::new();
        for tri in &p.tri {
            pts.clear();
            wts.clear();
            crate::quadrature::map_triangle_rule(
                &crate::quadrature::triangle_rule(self.rules.degree.max(2)).expect("rule"),
                tri,
                &mut pts,
                &mut wts,
            );
            out.extend(pts.iter().copied().zip(wts.iter().copied()));
        }
        out
    }

    fn direct_block(&self, p: &Patch, h: f64) -> [[f64; 4]; 4] {
        let mut s = [[0.0; 4]; 4];
        for (x, w) in self.patch_points(p) {
            let l1 = barycentric(&p.tri[0], x);
            let l2 = barycentric(&p.tri[1], x);
            let d: [f64; 4] = std::array::from_fn(|k| {
                p.slot[0][k].map_or(0.0, |i| l1[i]) - p.slot[1][k].map_or(0.0, |i| l2[i])
            });
            for i in 0..4 {
                for j in 0..4 {
                    s[i][j] += w * d[i] * d[j] / (h * h);
                }
            }
        }
        s
    }

    fn lps_block(&self, p: &Patch, h: f64) -> [[f64; 4]; 4] {
        let c = [
            (p.tri[0][0][0] + p.tri[0][1][0] + p.tri[0][2][0]) / 3.0,
            (p.tri[0][0][1] + p.tri[0][1][1] + p.tri[0][2][1]) / 3.0,
        ];
        let mut m = [[0.0; 4]; 4];
        let mut b = [[0.0; 3]; 4];
        let mut g = [[0.0; 3]; 3];
        let npts = self.patch_points(p);
        let half = npts.len() / 2;
        for (q, (x, w)) in npts.into_iter().enumerate() {
            let t = usize::from(q >= half);
            let l = barycentric(&p.tri[t], x);
            let phi: [f64; 4] = std::array::from_fn(|k| p.slot[t][k].map_or(0.0, |i| l[i]));
            let basis = [1.0, (x[0] - c[0]) / h, (x[1] - c[1]) / h];
            for i in 0..4 {
                for j in 0..4 {
                    m[i][j] += w * phi[i] * phi[j];
                }
                for a in 0..3 {
                    b[i][a] += w * phi[i] * basis[a];
                }
            }
            for a in 0..3 {
                for bb in 0..3 {
                    g[a][bb] += w * basis[a] * basis[bb];
                }
            }
        }
        let ginv = invert3(g);
        let mut s = [[0.0; 4]; 4];
        for i in 0..4 {
            for j in 0..4 {
                let mut proj = 0.0;
                for a in 0..3 {
                    for bb in 0..3 {
                        proj += b[i][a] * ginv[a][bb] * b[j][bb];
                    }
                }
                s[i][j] = (m[i][j] - proj) / (h * h);
            }
        }
        s
    }

    /// `b_i = int_{Omega_h} f phi_i`.
    pub fn source(
        &self,
        f: impl Fn(Point) -> f64 + Sync + Send,
    ) -> Result<Vec<f64>, AssemblyError> {
        let mesh = self.space.mesh();
        let b = self.vector(&self.domain, |e| {
            let tri = mesh.triangle_points(e);
            let (pts, wts) = self.volume_points(e);
            let mut v = [0.0; 3];
            for (x, w) in pts.iter().zip(&wts) {
                let l = barycentric(&tri, *x);
                let fx = f(*x);
                for i in 0..3 {
                    v[i] += w * fx * l[i];
                }
            }
            v
        });
        if b.iter().all(|v| v.is_finite()) {
            Ok(b)
        } else {
            Err(AssemblyError::NonFinite("source"))
        }
    }

    /// `c_i = int_{Omega_h} phi_i`.
    pub fn constraint_vector(&self) -> Vec<f64> {
        self.source(|_| 1.0).expect("constant source is finite")
    }

    /// `b_i = int_{Omega_h} u phi_i` for a function defined on the previous
    /// active mesh. Fails if `u` is undefined on an element of `Omega_h`.
    pub fn mass_times(&self, u: &FeFunction) -> Result<Vec<f64>, AssemblyError> {
        for &e in &self.domain {
            u.element_values(self.space, e)?;
        }
        let mesh = self.space.mesh();
        Ok(self.vector(&self.domain, |e| {
            let tri = mesh.triangle_points(e);
            let uv = u.element_values(self.space, e).expect("checked above");
            let (pts, wts) = self.volume_points(e);
            let mut v = [0.0; 3];
            for (x, w) in pts.iter().zip(&wts) {
                let l = barycentric(&tri, *x);
                let ux = l[0] * uv[0] + l[1] * uv[1] + l[2] * uv[2];
                for i in 0..3 {
                    v[i] += w * ux * l[i];
                }
            }
            v
        }))
    }

    /// Nitsche terms for Dirichlet data `g` with `lambda_h = lambda0 alpha / h`.
    pub fn nitsche(
        &self,
        case: &ProblemCase,
        t: f64,
        lambda0: f64,
    ) -> Result<(SparseMatrix, Vec<f64>), AssemblyError> {
        let gd: &Field = case
            .dirichlet
            .as_ref()
            .ok_or(AssemblyError::MissingDirichletData)?;
        let lambda = lambda0 * case.alpha / self.h;
        let mesh = self.space.mesh();
        let interface = |e: usize| {
            let (mut pts, mut wts) = (Vec::new(), Vec::new());
            let n = self
                .rules
                .push_interface(self.slice, e, &mut pts, &mut wts)
                .expect("cut element");
            (mesh.triangle_points(e), pts, wts, n)
        };
        let mat = self.blocks(
            &self.cut,
            |e| self.element_dofs(e),
            |e| {
                let (tri, pts, wts, n) = interface(e);
                let g = hat_gradients(&tri);
                let gn = [dot(g[0], n), dot(g[1], n), dot(g[2], n)];
                let mut a = [[0.0; 3]; 3];
                for (x, w) in pts.iter().zip(&wts) {
                    let l = barycentric(&tri, *x);
                    for i in 0..3 {
                        for j in 0..3 {
                            a[i][j] += w * (-gn[j] * l[i] - gn[i] * l[j] + lambda * l[i] * l[j]);
                        }
                    }
                }
                a
            },
        );
        let vec = self.vector(&self.cut, |e| {
            let (tri, pts, wts, n) = interface(e);
            let g = hat_gradients(&tri);
            let mut v = [0.0; 3];
            for (x, w) in pts.iter().zip(&wts) {
                let l = barycentric(&tri, *x);
                let gx = gd.at(*x, t);
                let wn = dot(case.w(*x, t), n);
                for i in 0..3 {
                    v[i] += w * gx * (-dot(g[i], n) + lambda * l[i] + 0.5 * wn * l[i]);
                }
            }
            v
        });
        if vec.iter().all(|v| v.is_finite()) {
            Ok((mat, vec))
        } else {
            Err(AssemblyError::NonFinite("Dirichlet data"))
        }
    }

    /// Interface load `b_i = int_{Gamma_h} g(x, n) phi_i` (prescribed flux).
    pub fn interface_load(&self, g: impl Fn(Point, [f64; 2]) -> f64 + Sync + Send) -> Vec<f64> {
        let mesh = self.space.mesh();
        self.vector(&self.cut, |e| {
            let tri = mesh.triangle_points(e);
            let (mut pts, mut wts) = (Vec::new(), Vec::new());
            let n = self
                .rules
                .push_interface(self.slice, e, &mut pts, &mut wts)
                .expect("cut element");
            let mut v = [0.0; 3];
            for (x, w) in pts.iter().zip(&wts) {
                let l = barycentric(&tri, *x);
                let gx = g(*x, n);
                for i in 0..3 {
                    v[i] += w * gx * l[i];
                }
            }
            v
        })
    }
}

fn djump_block(p: &Patch, h: f64) -> [[f64; 4]; 4] {
    let g1 = hat_gradients(&p.tri[0]);
    let g2 = hat_gradients(&p.tri[1]);
    let [a, b] = p.facet;
    let len = (b[0] - a[0]).hypot(b[1] - a[1]);
    let n = [(b[1] - a[1]) / len, -(b[0] - a[0]) / len];
    let jump: [f64; 4] = std::array::from_fn(|k| {
        let d1 = p.slot[0][k].map_or(0.0, |i| dot(g1[i], n));
        let d2 = p.slot[1][k].map_or(0.0, |i| dot(g2[i], n));
        d1 - d2
    });
    let mut s = [[0.0; 4]; 4];
    for i in 0..4 {
        for j in 0..4 {
            s[i][j] = h * len * jump[i] * jump[j];
        }
    }
    s
}

fn invert3(m: [[f64; 3]; 3]) -> [[f64; 3]; 3] {
    let c = |i: usize, j: usize| {
        let (r0, r1) = ((i + 1) % 3, (i + 2) % 3);
        let (c0, c1) = ((j + 1) % 3, (j + 2) % 3);
        m[r0][c0] * m[r1][c1] - m[r0][c1] * m[r1][c0]
    };
    let det = m[0][0] * c(0, 0) + m[0][1] * c(0, 1) + m[0][2] * c(0, 2);
    // inverse = adjugate / det, adjugate = cofactor transpose
    std::array::from_fn(|i| std::array::from_fn(|j| c(j, i) / det))
}

pub fn assemble_mass(space: &FeSpace, slice: &DomainSlice) -> Result<SparseMatrix, AssemblyError> {
    Ok(Assembler::new(space, slice, Exec::default())?.mass())
}

pub fn assemble_diffusion_convection(
    space: &FeSpace,
    slice: &DomainSlice,
    case: &ProblemCase,
    t: f64,
    variant: FormVariant,
) -> Result<SparseMatrix, AssemblyError> {
    Ok(Assembler::new(space, slice, Exec::default())?.diffusion_convection(case, t, variant, true))
}

pub fn assemble_ghost_penalty(
    space: &FeSpace,
    slice: &DomainSlice,
    variant: GhostVariant,
) -> Result<SparseMatrix, AssemblyError> {
    Ok(Assembler::new(space, slice, Exec::default())?.ghost_penalty(variant))
}

pub fn assemble_source(
    space: &FeSpace,
    slice: &DomainSlice,
    f: &Field,
    t: f64,
) -> Result<Vec<f64>, AssemblyError> {
    Assembler::new(space, slice, Exec::default())?.source(|x| f.at(x, t))
}

pub fn assemble_constraint_vector(
    space: &FeSpace,
    slice: &DomainSlice,
) -> Result<Vec<f64>, AssemblyError> {
    Ok(Assembler::new(space, slice, Exec::default())?.constraint_vector())
}

pub fn assemble_nitsche(
    space: &FeSpace,
    slice: &DomainSlice,
    case: &ProblemCase,
    t: f64,
    lambda0: f64,
) -> Result<(SparseMatrix, Vec<f64>), AssemblyError> {
    Assembler::new(space, slice, Exec::default())?.nitsche(case, t, lambda0)
}
