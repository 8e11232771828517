//! Gauss-Legendre edge rules and triangle rules (small symmetric rules plus
//! collapsed tensor Gauss rules for high degree).

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::geometry::Point;

/// Highest triangle exactness degree served.
pub const MAX_TRIANGLE_DEGREE: usize = 400;

#[derive(Debug, Error, PartialEq)]
pub enum QuadratureError {
    #[error("a Gauss rule needs at least one point")]
    ZeroPoints,
    #[error("unsupported triangle rule degree {0} (supported: 1..={MAX_TRIANGLE_DEGREE})")]
    UnsupportedDegree(usize),
}

/// Rule on `[0, 1]`; weights sum to 1.
#[derive(Debug, Clone, PartialEq)]
pub struct EdgeRule {
    nodes: Vec<f64>,
    weights: Vec<f64>,
}

/// Rule on the reference triangle in barycentric coordinates; weights sum to 1
/// and are scaled by the physical area on application.
#[derive(Debug, Clone, PartialEq)]
pub struct TriangleRule {
    points: Vec<[f64; 3]>,
    weights: Vec<f64>,
    degree: usize,
}

/// Legendre `P_m(z)` and `P_m'(z)` by the three-term recurrence.
fn legendre(m: usize, z: f64) -> (f64, f64) {
    let (mut p0, mut p1) = (1.0, z);
    for n in 2..=m {
        let p2 = ((2 * n - 1) as f64 * z * p1 - (n - 1) as f64 * p0) / n as f64;
        p0 = p1;
        p1 = p2;
    }
    if m == 1 {
        return (z, 1.0);
    }
    (p1, m as f64 * (z * p1 - p0) / (z * z - 1.0))
}

/// Gauss-Legendre nodes and weights on `[-1, 1]` by Newton iteration on `P_m`.
fn gauss_legendre(m: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; m];
    let mut w = vec![0.0; m];
    for k in 0..m.div_ceil(2) {
        let mut z = (PI * (k as f64 + 0.75) / (m as f64 + 0.5)).cos();
        for _ in 0..100 {
            let (p, dp) = legendre(m, z);
            let dz = p / dp;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, dp) = legendre(m, z);
        let weight = 2.0 / ((1.0 - z * z) * dp * dp);
        x[k] = -z;
        x[m - 1 - k] = z;
        w[k] = weight;
        w[m - 1 - k] = weight;
    }
    if m % 2 == 1 {
        x[m / 2] = 0.0;
    }
    (x, w)
}

/// `m`-point Gauss-Legendre rule on `[0, 1]`, exact to degree `2m - 1`.
pub fn gauss_edge(m: usize) -> Result<EdgeRule, QuadratureError> {
    if m == 0 {
        return Err(QuadratureError::ZeroPoints);
    }
    let (x, w) = gauss_legendre(m);
    Ok(EdgeRule { nodes: x.iter().map(|&t| 0.5 * (t + 1.0)).collect(), weights: w.iter().map(|&t| 0.5 * t).collect() })
}

impl EdgeRule {
    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn nodes(&self) -> &[f64] {
        &self.nodes
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Physical points and length-scaled weights on the segment `a -> b`.
    pub fn map(&self, a: Point, b: Point) -> impl Iterator<Item = (Point, f64)> + '_ {
        let length = (b[0] - a[0]).hypot(b[1] - a[1]);
        self.nodes
            .iter()
            .zip(&self.weights)
            .map(move |(&s, &w)| ([a[0] + s * (b[0] - a[0]), a[1] + s * (b[1] - a[1])], w * length))
    }

    pub fn integrate(&self, a: Point, b: Point, mut f: impl FnMut(Point) -> Complex64) -> Complex64 {
        self.map(a, b).map(|(p, w)| f(p) * w).sum()
    }
}

fn symmetric_rule(degree: usize) -> Option<TriangleRule> {
    let mut points = Vec::new();
    let mut weights = Vec::new();
    let mut orbit3 = |a: f64, w: f64| {
        let b = 1.0 - 2.0 * a;
        for p in [[b, a, a], [a, b, a], [a, a, b]] {
            points.push(p);
            weights.push(w);
        }
    };
    let exact = match degree {
        1 => {
            orbit3(1.0 / 3.0, 1.0 / 3.0);
            // Collapse the three identical centroid copies into one.
            points.truncate(1);
            weights = vec![1.0];
            1
        }
        2 => {
            orbit3(1.0 / 6.0, 1.0 / 3.0);
            2
        }
        3 | 4 => {
            orbit3(0.445948490915965, 0.223381589678011);
            orbit3(0.091576213509771, 0.109951743655322);
            4
        }
        5 => {
            orbit3(0.470142064105115, 0.132394152788506);
            orbit3(0.101286507323456, 0.125939180544827);
            points.push([1.0 / 3.0; 3]);
            weights.push(0.225);
            5
        }
        _ => return None,
    };
    // Tabulated weights carry 15 digits; renormalize so they sum to one.
    let total: f64 = weights.iter().sum();
    weights.iter_mut().for_each(|w| *w /= total);
    Some(TriangleRule { points, weights, degree: exact })
}

/// Collapsed (Duffy) tensor Gauss rule exact for total degree `degree`.
pub fn collapsed_rule(degree: usize) -> TriangleRule {
    // The Jacobian (1 - u) adds one degree in u.
    let m = (degree + 3) / 2;
    let (x, w) = gauss_legendre(m);
    let mut points = Vec::with_capacity(m * m);
    let mut weights = Vec::with_capacity(m * m);
    for (xu, wu) in x.iter().zip(&w) {
        let u = 0.5 * (xu + 1.0);
        for (xv, wv) in x.iter().zip(&w) {
            let v = 0.5 * (xv + 1.0);
            let (px, py) = (u, v * (1.0 - u));
            points.push([1.0 - px - py, px, py]);
            // Reference area 1/2 normalised to 1.
            weights.push(2.0 * 0.25 * wu * wv * (1.0 - u));
        }
    }
    TriangleRule { points, weights, degree: 2 * m - 2 }
}

/// Triangle rule exact for total degree `d`: a symmetric rule up to degree 5,
/// a collapsed tensor rule above.
pub fn triangle_rule(d: usize) -> Result<TriangleRule, QuadratureError> {
    if d == 0 || d > MAX_TRIANGLE_DEGREE {
        return Err(QuadratureError::UnsupportedDegree(d));
    }
    Ok(symmetric_rule(d).unwrap_or_else(|| collapsed_rule(d)))
}

impl TriangleRule {
    pub fn degree(&self) -> usize {
        self.degree
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn barycentric(&self) -> &[[f64; 3]] {
        &self.points
    }

    pub fn weights(&self) -> &[f64] {
        &self.weights
    }

    /// Physical points and area-scaled weights on triangle `t`.
    pub fn map(&self, t: [Point; 3]) -> impl Iterator<Item = (Point, f64)> + '_ {
        let area = 0.5 * ((t[1][0] - t[0][0]) * (t[2][1] - t[0][1]) - (t[2][0] - t[0][0]) * (t[1][1] - t[0][1]));
        let area = area.abs();
        self.points.iter().zip(&self.weights).map(move |(b, &w)| {
            (
                [b[0] * t[0][0] + b[1] * t[1][0] + b[2] * t[2][0], b[0] * t[0][1] + b[1] * t[1][1] + b[2] * t[2][1]],
                w * area,
            )
        })
    }

    pub fn integrate(&self, t: [Point; 3], mut f: impl FnMut(Point) -> Complex64) -> Complex64 {
        self.map(t).map(|(p, w)| f(p) * w).sum()
    }
}

/// Quadrature orders used by assembly and error evaluation.
///
/// Edges use `max(10, 2(q + 2), ceil(k h_K) + 6)` Gauss points with
/// `k = kappa sqrt(max(1, |eps(g_K)|))`; triangles use a collapsed rule of the
/// same per-direction resolution (degree `2m - 2`). An override fixes `m`.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct QuadratureOrders {
    pub edge_override: Option<usize>,
    /// Extra Gauss points added to every edge and triangle rule.
    pub boost: usize,
}

impl QuadratureOrders {
    pub fn with_override(m: Option<usize>) -> Self {
        Self { edge_override: m, boost: 0 }
    }

    pub fn boosted(self, extra: usize) -> Self {
        Self { boost: self.boost + extra, ..self }
    }

    pub fn edge_points(&self, q: usize, local_wavenumber: f64, h: f64) -> usize {
        let base = self
            .edge_override
            .unwrap_or_else(|| 10usize.max(2 * (q + 2)).max((local_wavenumber * h).ceil() as usize + 6));
        base.max(1) + self.boost
    }

    pub fn triangle_degree(&self, q: usize, local_wavenumber: f64, h: f64) -> usize {
        (2 * self.edge_points(q, local_wavenumber, h)).saturating_sub(2).max(1)
    }
}
