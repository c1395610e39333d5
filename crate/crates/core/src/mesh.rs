//! Time-independent background triangulation of the bounding box, with
//! facet/neighbor topology, uniform (red) refinement and a plain-text
//! import/export format.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum MeshError {
    #[error("degenerate element {index} (signed area {area:e})")]
    DegenerateElement { index: usize, area: f64 },
    #[error("non-manifold facet ({0}, {1}) shared by more than two triangles")]
    NonManifold(usize, usize),
    #[error("invalid mesh parameter: {0}")]
    InvalidParameter(String),
    #[error("mesh file parse error at line {line}: {msg}")]
    Parse { line: usize, msg: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Axis-aligned rectangle `[x0, x1] x [y0, y1]`.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn new(x0: f64, x1: f64, y0: f64, y1: f64) -> Self {
        Rect { x0, x1, y0, y1 }
    }

    pub fn unit() -> Self {
        Rect::new(0.0, 1.0, 0.0, 1.0)
    }

    pub fn width(&self) -> f64 {
        self.x1 - self.x0
    }

    pub fn height(&self) -> f64 {
        self.y1 - self.y0
    }

    pub fn area(&self) -> f64 {
        self.width() * self.height()
    }

    pub fn contains(&self, p: Point, tol: f64) -> bool {
        p[0] >= self.x0 - tol
            && p[0] <= self.x1 + tol
            && p[1] >= self.y0 - tol
            && p[1] <= self.y1 + tol
    }
}

/// An edge of the triangulation. `triangles[1]` is `None` on the boundary.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Facet {
    pub vertices: [usize; 2],
    pub triangles: [Option<usize>; 2],
}

impl Facet {
    pub fn is_interior(&self) -> bool {
        self.triangles[1].is_some()
    }
}

/// Optional random displacement of interior vertices, as a fraction of the
/// local grid spacing.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jitter {
    pub amplitude: f64,
    pub seed: u64,
}

/// Default bound on `h / h_min`.
pub const DEFAULT_MAX_GRADING: f64 = 3.0;

#[derive(Clone, Debug)]
pub struct BackgroundMesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    facets: Vec<Facet>,
    /// Facet index of each triangle edge; edge `k` is opposite vertex `k`.
    triangle_facets: Vec<[usize; 3]>,
    bbox: Rect,
    h: f64,
    h_min: f64,
}

pub fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn diameter(a: Point, b: Point, c: Point) -> f64 {
    dist(a, b).max(dist(b, c)).max(dist(c, a))
}

impl BackgroundMesh {
    /// Builds a mesh from raw arrays. Clockwise triangles are reoriented;
    /// zero-area triangles are rejected.
    pub fn from_parts(
        vertices: Vec<Point>,
        mut triangles: Vec<[usize; 3]>,
    ) -> Result<Self, MeshError> {
        for (index, t) in triangles.iter_mut().enumerate() {
            if t.iter().any(|&v| v >= vertices.len()) {
                return Err(MeshError::InvalidParameter(format!(
                    "triangle {index} references a missing vertex"
                )));
            }
            let area = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            if area == 0.0 || !area.is_finite() {
                return Err(MeshError::DegenerateElement { index, area });
            }
            if area < 0.0 {
                t.swap(1, 2);
            }
        }
        let facets = facet_topology(&triangles)?;
        let mut lookup = HashMap::with_capacity(facets.len());
        for (i, f) in facets.iter().enumerate() {
            lookup.insert(f.vertices, i);
        }
        let triangle_facets = triangles
            .iter()
            .map(|t| {
                let key = |a: usize, b: usize| lookup[&[a.min(b), a.max(b)]];
                [key(t[1], t[2]), key(t[2], t[0]), key(t[0], t[1])]
            })
            .collect();

        let mut bbox = Rect::new(
            f64::INFINITY,
            f64::NEG_INFINITY,
            f64::INFINITY,
            f64::NEG_INFINITY,
        );
        for p in &vertices {
            bbox.x0 = bbox.x0.min(p[0]);
            bbox.x1 = bbox.x1.max(p[0]);
            bbox.y0 = bbox.y0.min(p[1]);
            bbox.y1 = bbox.y1.max(p[1]);
        }
        let (mut h, mut h_min) = (0.0f64, f64::INFINITY);
        for t in &triangles {
            let d = diameter(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            h = h.max(d);
            h_min = h_min.min(d);
        }
        if triangles.is_empty() {
            h_min = 0.0;
        }
        Ok(BackgroundMesh {
            vertices,
            triangles,
            facets,
            triangle_facets,
            bbox,
            h,
            h_min,
        })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn facets(&self) -> &[Facet] {
        &self.facets
    }

    pub fn triangle_facets(&self, t: usize) -> [usize; 3] {
        self.triangle_facets[t]
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Maximum element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    /// Minimum element diameter.
    pub fn h_min(&self) -> f64 {
        self.h_min
    }

    pub fn bounding_box(&self) -> Rect {
        self.bbox
    }

    pub fn triangle_points(&self, t: usize) -> [Point; 3] {
        let [a, b, c] = self.triangles[t];
        [self.vertices[a], self.vertices[b], self.vertices[c]]
    }

    pub fn triangle_area(&self, t: usize) -> f64 {
        let [a, b, c] = self.triangle_points(t);
        signed_area(a, b, c)
    }

    pub fn total_area(&self) -> f64 {
        (0..self.n_triangles()).map(|t| self.triangle_area(t)).sum()
    }

    /// Checks the structural invariants: positive orientation, manifold
    /// facets, Euler characteristic of a disk, grading `h / h_min <= max_grading`.
    pub fn validate(&self, max_grading: f64) -> Result<(), MeshError> {
        for t in 0..self.n_triangles() {
            let area = self.triangle_area(t);
            if area <= 0.0 {
                return Err(MeshError::DegenerateElement { index: t, area });
            }
        }
        let (v, e, t) = (
            self.n_vertices() as i64,
            self.facets.len() as i64,
            self.n_triangles() as i64,
        );
        if t > 0 && v - e + (t + 1) != 2 {
            return Err(MeshError::InvalidParameter(format!(
                "Euler characteristic violated: V={v} E={e} T={t}"
            )));
        }
        if self.h_min > 0.0 && self.h / self.h_min > max_grading {
            return Err(MeshError::InvalidParameter(format!(
                "grading h/h_min = {} exceeds {max_grading}",
                self.h / self.h_min
            )));
        }
        Ok(())
    }

    /// Writes the plain-text format: `VERTICES k`, k lines `x y`,
    /// `TRIANGLES m`, m lines `i j k` (0-based).
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "VERTICES {}", self.vertices.len());
        for p in &self.vertices {
            let _ = writeln!(s, "{:.17e} {:.17e}", p[0], p[1]);
        }
        let _ = writeln!(s, "TRIANGLES {}", self.triangles.len());
        for t in &self.triangles {
            let _ = writeln!(s, "{} {} {}", t[0], t[1], t[2]);
        }
        s
    }

    pub fn from_text(text: &str) -> Result<Self, MeshError> {
        let mut lines = text
            .lines()
            .enumerate()
            .map(|(i, l)| (i + 1, l.trim()))
            .filter(|(_, l)| !l.is_empty());
        let header = |lines: &mut dyn Iterator<Item = (usize, &str)>,
                      key: &str|
         -> Result<usize, MeshError> {
            let (line, l) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                msg: format!("missing {key}"),
            })?;
            let mut it = l.split_whitespace();
            if it.next() != Some(key) {
                return Err(MeshError::Parse {
                    line,
                    msg: format!("expected '{key} <count>'"),
                });
            }
            it.next()
                .and_then(|c| c.parse().ok())
                .ok_or(MeshError::Parse {
                    line,
                    msg: "bad count".into(),
                })
        };
        let nv = header(&mut lines, "VERTICES")?;
        let mut vertices = Vec::with_capacity(nv);
        for _ in 0..nv {
            let (line, l) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                msg: "truncated vertex list".into(),
            })?;
            let xs: Vec<f64> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| MeshError::Parse {
                    line,
                    msg: format!("{e}"),
                })?;
            if xs.len() != 2 {
                return Err(MeshError::Parse {
                    line,
                    msg: "expected 'x y'".into(),
                });
            }
            vertices.push([xs[0], xs[1]]);
        }
        let nt = header(&mut lines, "TRIANGLES")?;
        let mut triangles = Vec::with_capacity(nt);
        for _ in 0..nt {
            let (line, l) = lines.next().ok_or(MeshError::Parse {
                line: 0,
                msg: "truncated triangle list".into(),
            })?;
            let ix: Vec<usize> = l
                .split_whitespace()
                .map(str::parse)
                .collect::<Result<_, _>>()
                .map_err(|e| MeshError::Parse {
                    line,
                    msg: format!("{e}"),
                })?;
            if ix.len() != 3 {
                return Err(MeshError::Parse {
                    line,
                    msg: "expected 'i j k'".into(),
                });
            }
            triangles.push([ix[0], ix[1], ix[2]]);
        }
        BackgroundMesh::from_parts(vertices, triangles)
    }

    pub fn read(path: &Path) -> Result<Self, MeshError> {
        BackgroundMesh::from_text(&std::fs::read_to_string(path)?)
    }

    pub fn write(&self, path: &Path) -> Result<(), MeshError> {
        std::fs::write(path, self.to_text())?;
        Ok(())
    }
}

/// Enumerates the unique edges of a triangle list with their adjacent
/// triangles. Facets are sorted by their canonical (sorted) vertex pair and
/// neighbor indices ascend, so the output does not depend on the order in
/// which triangles are listed.
pub fn facet_topology(triangles: &[[usize; 3]]) -> Result<Vec<Facet>, MeshError> {
    let mut map: HashMap<[usize; 2], Vec<usize>> = HashMap::with_capacity(triangles.len() * 2);
    for (ti, t) in triangles.iter().enumerate() {
        for k in 0..3 {
            let (a, b) = (t[(k + 1) % 3], t[(k + 2) % 3]);
            map.entry([a.min(b), a.max(b)]).or_default().push(ti);
        }
    }
    let mut facets = Vec::with_capacity(map.len());
    for (key, mut tris) in map {
        if tris.len() > 2 {
            return Err(MeshError::NonManifold(key[0], key[1]));
        }
        tris.sort_unstable();
        facets.push(Facet {
            vertices: key,
            triangles: [Some(tris[0]), tris.get(1).copied()],
        });
    }
    facets.sort_unstable_by_key(|f| f.vertices);
    Ok(facets)
}

/// Structured triangulation of `rect` with `nx * ny` cells, each split along
/// its lower-left to upper-right diagonal. With `jitter`, interior vertices
/// are displaced by up to `amplitude` cell widths, reproducibly from the seed.
/// If a displacement produces an inverted triangle, the amplitude is halved
/// and the construction retried.
pub fn build_structured_mesh(
    rect: Rect,
    nx: usize,
    ny: usize,
    jitter: Option<Jitter>,
) -> Result<BackgroundMesh, MeshError> {
    if nx == 0 || ny == 0 {
        return Err(MeshError::InvalidParameter(
            "need at least one subdivision per axis".into(),
        ));
    }
    if !(rect.width() > 0.0 && rect.height() > 0.0) {
        return Err(MeshError::InvalidParameter(
            "box must have positive extent".into(),
        ));
    }
    if let Some(j) = jitter {
        if !(0.0..0.3).contains(&j.amplitude) {
            return Err(MeshError::InvalidParameter(format!(
                "jitter amplitude {} outside [0, 0.3)",
                j.amplitude
            )));
        }
    }
    let (dx, dy) = (rect.width() / nx as f64, rect.height() / ny as f64);
    let idx = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v01, v11) = (idx(i, j), idx(i + 1, j), idx(i, j + 1), idx(i + 1, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    let grid = |i: usize, j: usize| -> Point {
        // Boundary coordinates are pinned to the box exactly.
        let x = if i == nx {
            rect.x1
        } else {
            rect.x0 + i as f64 * dx
        };
        let y = if j == ny {
            rect.y1
        } else {
            rect.y0 + j as f64 * dy
        };
        [x, y]
    };

    let mut amplitude = jitter.map_or(0.0, |j| j.amplitude);
    for _attempt in 0..8 {
        let mut rng = ChaCha8Rng::seed_from_u64(jitter.map_or(0, |j| j.seed));
        let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
        for j in 0..=ny {
            for i in 0..=nx {
                let mut p = grid(i, j);
                if amplitude > 0.0 && i > 0 && i < nx && j > 0 && j < ny {
                    p[0] += amplitude * dx * rng.random_range(-1.0..1.0);
                    p[1] += amplitude * dy * rng.random_range(-1.0..1.0);
                }
                vertices.push(p);
            }
        }
        let degenerate = triangles.iter().enumerate().find_map(|(index, t)| {
            let area = signed_area(vertices[t[0]], vertices[t[1]], vertices[t[2]]);
            (area <= 0.0).then_some((index, area))
        });
        match degenerate {
            None => return BackgroundMesh::from_parts(vertices, triangles.clone()),
            Some((index, area)) if amplitude == 0.0 => {
                return Err(MeshError::DegenerateElement { index, area })
            }
            Some(_) => amplitude *= 0.5,
        }
    }
    Err(MeshError::InvalidParameter(
        "jittered mesh stayed degenerate after retries".into(),
    ))
}

/// Smallest per-axis subdivision counts for which the diagonal mesh of `rect`
/// has element diameter at most `h`.
pub fn subdivisions_for(rect: Rect, h: f64) -> (usize, usize) {
    // Diameter of a cell split is sqrt(dx^2 + dy^2); aim at dx, dy <= h / sqrt(2).
    let n = |len: f64| {
        ((len * std::f64::consts::SQRT_2 / h) - 1e-9)
            .ceil()
            .max(1.0) as usize
    };
    (n(rect.width()), n(rect.height()))
}

/// Red refinement: every triangle is split into four similar children through
/// its edge midpoints. Midpoint `i` gets vertex index `n_vertices + facet_i`.
pub fn refine_uniform(mesh: &BackgroundMesh) -> BackgroundMesh {
    let nv = mesh.n_vertices();
    let mut vertices = mesh.vertices.clone();
    vertices.extend(mesh.facets.iter().map(|f| {
        let (a, b) = (mesh.vertices[f.vertices[0]], mesh.vertices[f.vertices[1]]);
        [0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]
    }));
    let mut triangles = Vec::with_capacity(4 * mesh.n_triangles());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [a, b, c] = *tri;
        let tf = mesh.triangle_facets[t];
        // Edge k is opposite vertex k.
        let (m_bc, m_ca, m_ab) = (nv + tf[0], nv + tf[1], nv + tf[2]);
        triangles.push([a, m_ab, m_ca]);
        triangles.push([m_ab, b, m_bc]);
        triangles.push([m_ca, m_bc, c]);
        triangles.push([m_ab, m_bc, m_ca]);
    }
    BackgroundMesh::from_parts(vertices, triangles)
        .expect("red refinement of a valid mesh is valid")
}

/// Applies [`refine_uniform`] `levels` times.
pub fn refine_times(mesh: &BackgroundMesh, levels: usize) -> BackgroundMesh {
    let mut m = mesh.clone();
    for _ in 0..levels {
        m = refine_uniform(&m);
    }
    m
}
