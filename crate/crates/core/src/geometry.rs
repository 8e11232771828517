//! Triangular meshes of rectangles, uniform red refinement and the edge
//! bookkeeping (orientation, normals, boundary classification) used by the
//! DG assembly.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use thiserror::Error;

pub type Point = [f64; 2];

#[derive(Debug, Error)]
pub enum GeometryError {
    #[error("invalid domain: {0}")]
    InvalidDomain(String),
    #[error("triangle {index} has non-positive signed area {area:e}")]
    DegenerateTriangle { index: usize, area: f64 },
    #[error("triangle {index} references vertex {vertex} but the mesh has {count} vertices")]
    VertexOutOfRange { index: usize, vertex: usize, count: usize },
    #[error("edge ({0}, {1}) is shared by more than two triangles")]
    NonManifoldEdge(usize, usize),
    #[error("mesh file: {0}")]
    Parse(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Classification of a mesh edge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum EdgeKind {
    Interior,
    Dirichlet,
    Robin,
}

#[derive(Debug, Clone)]
pub struct Edge {
    /// Endpoints, ordered counterclockwise with respect to `plus`.
    pub vertices: [usize; 2],
    pub kind: EdgeKind,
    /// Triangle on the plus side (the lower triangle index for interior edges).
    pub plus: usize,
    pub minus: Option<usize>,
    /// Unit normal pointing out of `plus`.
    pub normal: Point,
    pub length: f64,
}

/// Axis-aligned rectangle `[x_min, x_max] x [y_min, y_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rectangle {
    pub x_min: f64,
    pub x_max: f64,
    pub y_min: f64,
    pub y_max: f64,
}

impl Rectangle {
    pub fn new(x_min: f64, x_max: f64, y_min: f64, y_max: f64) -> Self {
        Self { x_min, x_max, y_min, y_max }
    }

    /// The square `[-1, 1]^2` used by all built-in experiments.
    pub fn symmetric_unit() -> Self {
        Self::new(-1.0, 1.0, -1.0, 1.0)
    }

    pub fn area(&self) -> f64 {
        (self.x_max - self.x_min) * (self.y_max - self.y_min)
    }
}

/// How the cells of the structured grid are cut into triangles.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TriangulationPattern {
    /// `nx x ny` cells, each cut along its lower-left to upper-right diagonal.
    Diagonal { nx: usize, ny: usize },
}

#[derive(Debug, Clone)]
pub struct Mesh {
    vertices: Vec<Point>,
    triangles: Vec<[usize; 3]>,
    edges: Vec<Edge>,
    /// Local edge `i` of triangle `t` joins local vertices `i` and `(i + 1) % 3`.
    element_edges: Vec<[usize; 3]>,
    centroids: Vec<Point>,
    diameters: Vec<f64>,
    areas: Vec<f64>,
    h: f64,
}

/// Regularity ratios of a mesh.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegularityReport {
    /// Largest diameter ratio between two triangles sharing an edge.
    pub tau: f64,
    /// Largest `h / h_K` over triangles with a Robin edge (1 if there are none).
    pub robin_ratio: f64,
}

fn signed_area(a: Point, b: Point, c: Point) -> f64 {
    0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1]))
}

fn distance(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

fn edge_key(a: usize, b: usize) -> (usize, usize) {
    if a < b {
        (a, b)
    } else {
        (b, a)
    }
}

impl Mesh {
    /// Builds a mesh from raw vertices and counterclockwise triangles.
    ///
    /// `boundary_kind` is called with the vertex indices of every boundary
    /// edge and must return `Robin` or `Dirichlet`.
    pub fn from_parts(
        vertices: Vec<Point>,
        triangles: Vec<[usize; 3]>,
        mut boundary_kind: impl FnMut([usize; 2]) -> EdgeKind,
    ) -> Result<Self, GeometryError> {
        let nv = vertices.len();
        let mut areas = Vec::with_capacity(triangles.len());
        let mut centroids = Vec::with_capacity(triangles.len());
        let mut diameters = Vec::with_capacity(triangles.len());
        for (index, tri) in triangles.iter().enumerate() {
            for &vertex in tri {
                if vertex >= nv {
                    return Err(GeometryError::VertexOutOfRange { index, vertex, count: nv });
                }
            }
            let [a, b, c] = tri.map(|v| vertices[v]);
            let area = signed_area(a, b, c);
            if !(area > 0.0) {
                return Err(GeometryError::DegenerateTriangle { index, area });
            }
            areas.push(area);
            centroids.push([(a[0] + b[0] + c[0]) / 3.0, (a[1] + b[1] + c[1]) / 3.0]);
            diameters.push(distance(a, b).max(distance(b, c)).max(distance(c, a)));
        }

        let mut lookup: HashMap<(usize, usize), usize> = HashMap::new();
        let mut edges: Vec<Edge> = Vec::new();
        let mut element_edges = vec![[0usize; 3]; triangles.len()];
        for (t, tri) in triangles.iter().enumerate() {
            for local in 0..3 {
                let a = tri[local];
                let b = tri[(local + 1) % 3];
                let key = edge_key(a, b);
                let index = match lookup.get(&key) {
                    Some(&e) => {
                        let edge = &mut edges[e];
                        if edge.minus.is_some() {
                            return Err(GeometryError::NonManifoldEdge(key.0, key.1));
                        }
                        edge.minus = Some(t);
                        edge.kind = EdgeKind::Interior;
                        e
                    }
                    None => {
                        let (pa, pb) = (vertices[a], vertices[b]);
                        let length = distance(pa, pb);
                        let normal = [(pb[1] - pa[1]) / length, -(pb[0] - pa[0]) / length];
                        edges.push(Edge {
                            vertices: [a, b],
                            kind: EdgeKind::Robin,
                            plus: t,
                            minus: None,
                            normal,
                            length,
                        });
                        lookup.insert(key, edges.len() - 1);
                        edges.len() - 1
                    }
                };
                element_edges[t][local] = index;
            }
        }
        for edge in edges.iter_mut().filter(|e| e.minus.is_none()) {
            let kind = boundary_kind(edge.vertices);
            edge.kind = match kind {
                EdgeKind::Interior => EdgeKind::Robin,
                k => k,
            };
        }

        let h = diameters.iter().cloned().fold(0.0, f64::max);
        Ok(Self { vertices, triangles, edges, element_edges, centroids, diameters, areas, h })
    }

    pub fn vertices(&self) -> &[Point] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[usize; 3]] {
        &self.triangles
    }

    pub fn edges(&self) -> &[Edge] {
        &self.edges
    }

    pub fn num_elements(&self) -> usize {
        self.triangles.len()
    }

    pub fn element_edges(&self, element: usize) -> [usize; 3] {
        self.element_edges[element]
    }

    pub fn triangle_points(&self, element: usize) -> [Point; 3] {
        self.triangles[element].map(|v| self.vertices[v])
    }

    pub fn edge_points(&self, edge: usize) -> [Point; 2] {
        self.edges[edge].vertices.map(|v| self.vertices[v])
    }

    pub fn centroid(&self, element: usize) -> Point {
        self.centroids[element]
    }

    pub fn diameter(&self, element: usize) -> f64 {
        self.diameters[element]
    }

    pub fn area(&self, element: usize) -> f64 {
        self.areas[element]
    }

    /// Global mesh size, the largest element diameter.
    pub fn h(&self) -> f64 {
        self.h
    }

    pub fn count_edges(&self, kind: EdgeKind) -> usize {
        self.edges.iter().filter(|e| e.kind == kind).count()
    }

    /// Reclassifies boundary edges; interior edges are left untouched.
    pub fn classify_boundary(&mut self, mut kind: impl FnMut(Point, Point) -> EdgeKind) {
        for edge in self.edges.iter_mut().filter(|e| e.minus.is_none()) {
            let [a, b] = edge.vertices.map(|v| self.vertices[v]);
            edge.kind = match kind(a, b) {
                EdgeKind::Interior => EdgeKind::Robin,
                k => k,
            };
        }
    }

    /// Whether triangles `a` and `b` share an edge.
    pub fn are_neighbors(&self, a: usize, b: usize) -> bool {
        self.element_edges[a].iter().any(|&e| {
            let edge = &self.edges[e];
            (edge.plus == b && edge.minus == Some(a)) || (edge.plus == a && edge.minus == Some(b))
        })
    }

    /// Sorted element indices adjacent to `element` through an edge.
    pub fn neighbors(&self, element: usize) -> Vec<usize> {
        let mut out: Vec<usize> = self.element_edges[element]
            .iter()
            .filter_map(|&e| {
                let edge = &self.edges[e];
                match edge.minus {
                    Some(m) if edge.plus == element => Some(m),
                    Some(_) => Some(edge.plus),
                    None => None,
                }
            })
            .collect();
        out.sort_unstable();
        out
    }
}

/// Structured triangulation of a rectangle. All boundary edges are Robin.
pub fn build_structured_mesh(domain: Rectangle, pattern: TriangulationPattern) -> Result<Mesh, GeometryError> {
    let width = domain.x_max - domain.x_min;
    let height = domain.y_max - domain.y_min;
    if !(width.is_finite() && height.is_finite() && width > 0.0 && height > 0.0) {
        return Err(GeometryError::InvalidDomain(format!(
            "rectangle [{}, {}] x [{}, {}] is degenerate",
            domain.x_min, domain.x_max, domain.y_min, domain.y_max
        )));
    }
    let TriangulationPattern::Diagonal { nx, ny } = pattern;
    if nx == 0 || ny == 0 {
        return Err(GeometryError::InvalidDomain("grid needs at least one cell per direction".into()));
    }
    let mut vertices = Vec::with_capacity((nx + 1) * (ny + 1));
    for j in 0..=ny {
        let y = domain.y_min + height * j as f64 / ny as f64;
        for i in 0..=nx {
            let x = domain.x_min + width * i as f64 / nx as f64;
            vertices.push([x, y]);
        }
    }
    let id = |i: usize, j: usize| j * (nx + 1) + i;
    let mut triangles = Vec::with_capacity(2 * nx * ny);
    for j in 0..ny {
        for i in 0..nx {
            let (v00, v10, v11, v01) = (id(i, j), id(i + 1, j), id(i + 1, j + 1), id(i, j + 1));
            triangles.push([v00, v10, v11]);
            triangles.push([v00, v11, v01]);
        }
    }
    Mesh::from_parts(vertices, triangles, |_| EdgeKind::Robin)
}

/// Red refinement: every triangle is split into four congruent children
/// through its edge midpoints. Children of triangle `t` are `4t..4t+4`, the
/// last one being the central triangle. Boundary edge kinds are inherited.
pub fn refine_uniform(mesh: &Mesh) -> Mesh {
    let mut vertices = mesh.vertices.clone();
    let mut midpoint = Vec::with_capacity(mesh.edges.len());
    let mut inherited: HashMap<(usize, usize), EdgeKind> = HashMap::new();
    for edge in &mesh.edges {
        let [a, b] = edge.vertices.map(|v| mesh.vertices[v]);
        vertices.push([0.5 * (a[0] + b[0]), 0.5 * (a[1] + b[1])]);
        let m = vertices.len() - 1;
        midpoint.push(m);
        if edge.kind != EdgeKind::Interior {
            inherited.insert(edge_key(edge.vertices[0], m), edge.kind);
            inherited.insert(edge_key(m, edge.vertices[1]), edge.kind);
        }
    }
    let mut triangles = Vec::with_capacity(4 * mesh.triangles.len());
    for (t, tri) in mesh.triangles.iter().enumerate() {
        let [e0, e1, e2] = mesh.element_edges[t];
        let (m01, m12, m20) = (midpoint[e0], midpoint[e1], midpoint[e2]);
        triangles.push([tri[0], m01, m20]);
        triangles.push([m01, tri[1], m12]);
        triangles.push([m20, m12, tri[2]]);
        triangles.push([m01, m12, m20]);
    }
    Mesh::from_parts(vertices, triangles, |[a, b]| inherited.get(&edge_key(a, b)).copied().unwrap_or(EdgeKind::Robin))
        .expect("red refinement of a valid mesh is valid")
}

/// Computes the local quasi-uniformity ratio and the boundary quasi-uniformity
/// ratio of a mesh.
pub fn check_mesh_regularity(mesh: &Mesh) -> RegularityReport {
    let mut tau: f64 = 1.0;
    let mut robin_ratio: f64 = 1.0;
    for edge in &mesh.edges {
        let hp = mesh.diameters[edge.plus];
        match edge.minus {
            Some(m) => {
                let hm = mesh.diameters[m];
                tau = tau.max(hp / hm).max(hm / hp);
            }
            None if edge.kind == EdgeKind::Robin => robin_ratio = robin_ratio.max(mesh.h / hp),
            None => {}
        }
    }
    RegularityReport { tau, robin_ratio }
}

/// Reads the plain-text mesh format: a `V T` header line, `V` lines of
/// `x y`, then `T` lines of 0-based counterclockwise vertex triples. All
/// boundary edges are classified Robin.
pub fn read_mesh(path: &Path) -> Result<Mesh, GeometryError> {
    let text = std::fs::read_to_string(path)?;
    parse_mesh(&text)
}

pub fn parse_mesh(text: &str) -> Result<Mesh, GeometryError> {
    let mut lines = text.lines().map(str::trim).filter(|l| !l.is_empty() && !l.starts_with('#'));
    let header = lines.next().ok_or_else(|| GeometryError::Parse("empty file".into()))?;
    let counts: Vec<usize> = header
        .split_whitespace()
        .map(|s| s.parse().map_err(|_| GeometryError::Parse(format!("bad header `{header}`"))))
        .collect::<Result<_, _>>()?;
    let [nv, nt] = counts[..] else {
        return Err(GeometryError::Parse(format!("header must be `V T`, got `{header}`")));
    };
    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let line = lines.next().ok_or_else(|| GeometryError::Parse("missing vertex line".into()))?;
        let xy: Vec<f64> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| GeometryError::Parse(format!("bad vertex `{line}`"))))
            .collect::<Result<_, _>>()?;
        let [x, y] = xy[..] else {
            return Err(GeometryError::Parse(format!("vertex line needs two numbers: `{line}`")));
        };
        vertices.push([x, y]);
    }
    let mut triangles = Vec::with_capacity(nt);
    for _ in 0..nt {
        let line = lines.next().ok_or_else(|| GeometryError::Parse("missing triangle line".into()))?;
        let ijk: Vec<usize> = line
            .split_whitespace()
            .map(|s| s.parse().map_err(|_| GeometryError::Parse(format!("bad triangle `{line}`"))))
            .collect::<Result<_, _>>()?;
        let [i, j, k] = ijk[..] else {
            return Err(GeometryError::Parse(format!("triangle line needs three indices: `{line}`")));
        };
        triangles.push([i, j, k]);
    }
    Mesh::from_parts(vertices, triangles, |_| EdgeKind::Robin)
}

pub fn format_mesh(mesh: &Mesh) -> String {
    let mut out = String::new();
    let _ = writeln!(out, "{} {}", mesh.vertices.len(), mesh.triangles.len());
    for p in &mesh.vertices {
        let _ = writeln!(out, "{} {}", p[0], p[1]);
    }
    for t in &mesh.triangles {
        let _ = writeln!(out, "{} {} {}", t[0], t[1], t[2]);
    }
    out
}
