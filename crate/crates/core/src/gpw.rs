//! Generalized plane waves `phi = exp(P)` with `P` a complex polynomial
//! centred at an element centroid, built so that `(Delta + kappa^2 eps) phi`
//! vanishes to order `q` at the centroid.

use std::f64::consts::PI;
use std::fmt::Write as _;

use num_complex::Complex64;
use thiserror::Error;

use crate::epsilon::CoefficientField;
use crate::geometry::Point;

const I: Complex64 = Complex64::new(0.0, 1.0);

/// Below this `|eps(centroid)|` the normalization `N = i kappa sqrt(eps)`
/// degenerates and is replaced by `N = i kappa`.
pub const DEGENERATE_EPS: f64 = 1e-12;

/// Largest supported approximation order `q`.
pub const MAX_ORDER: usize = 14;

#[derive(Debug, Error, PartialEq)]
pub enum GpwError {
    #[error("field `{name}` provides derivatives up to order {available:?}, GPWs of order q = {q} need {needed}")]
    InsufficientSmoothness { name: String, available: Option<usize>, q: usize, needed: usize },
    #[error("approximation order q must be in 1..={MAX_ORDER}")]
    InvalidOrder,
    #[error("number of direction pairs n must be at least 1")]
    InvalidDirections,
    #[error("wavenumber must be positive, got {0}")]
    NonPositiveWavenumber(f64),
    #[error("normalization |N| = {0:e} is below the floor and no fallback was allowed")]
    DegenerateNormalization(f64),
}

/// Choice of the normalization constant `N` in `(lambda_10, lambda_01) = N (cos, sin)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Normalization {
    /// `N = i kappa sqrt(eps(centroid))` with the principal square root, falling
    /// back to `N = i kappa` when `|eps(centroid)| < DEGENERATE_EPS`.
    Principal,
    /// As `Principal`, but a degenerate centroid value is an error.
    PrincipalStrict,
    Explicit(Complex64),
}

/// Dense triangular table of polynomial coefficients `lambda_{i,j}`,
/// `i + j <= degree`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoefficientTable {
    degree: usize,
    data: Vec<Complex64>,
}

impl CoefficientTable {
    pub fn zeros(degree: usize) -> Self {
        Self { degree, data: vec![Complex64::new(0.0, 0.0); (degree + 1) * (degree + 2) / 2] }
    }

    pub fn degree(&self) -> usize {
        self.degree
    }

    fn offset(&self, i: usize, j: usize) -> usize {
        debug_assert!(i + j <= self.degree);
        // Row r holds degree + 1 - r entries.
        i * (self.degree + 1) - i * i.saturating_sub(1) / 2 + j
    }

    pub fn get(&self, i: usize, j: usize) -> Complex64 {
        if i + j > self.degree {
            return Complex64::new(0.0, 0.0);
        }
        self.data[self.offset(i, j)]
    }

    pub fn set(&mut self, i: usize, j: usize, value: Complex64) {
        let o = self.offset(i, j);
        self.data[o] = value;
    }

    /// Entries in `(i, j)` order, `i` outer.
    pub fn iter(&self) -> impl Iterator<Item = (usize, usize, Complex64)> + '_ {
        (0..=self.degree).flat_map(move |i| (0..=self.degree - i).map(move |j| (i, j, self.get(i, j))))
    }
}

/// Value, gradient and Laplacian of a GPW at one point.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GpwEval {
    pub value: Complex64,
    pub gradient: [Complex64; 2],
    pub laplacian: Complex64,
}

impl GpwEval {
    /// `(Delta + kappa^2 eps) phi`.
    pub fn helmholtz(&self, kappa: f64, eps: f64) -> Complex64 {
        self.laplacian + self.value * (kappa * kappa * eps)
    }

    pub fn normal_derivative(&self, n: Point) -> Complex64 {
        self.gradient[0] * n[0] + self.gradient[1] * n[1]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct GpwFunction {
    centroid: Point,
    q: usize,
    theta: f64,
    normalization: Complex64,
    coefficients: CoefficientTable,
}

fn factorial(n: usize) -> f64 {
    (1..=n).map(|k| k as f64).product()
}

/// Resolves the normalization constant for a centroid value of `eps`.
pub fn normalization_constant(eps_centroid: f64, kappa: f64, policy: Normalization) -> Result<Complex64, GpwError> {
    match policy {
        Normalization::Explicit(n) => Ok(n),
        Normalization::Principal | Normalization::PrincipalStrict => {
            if eps_centroid.abs() < DEGENERATE_EPS {
                if policy == Normalization::PrincipalStrict {
                    return Err(GpwError::DegenerateNormalization(kappa * eps_centroid.abs().sqrt()));
                }
                return Ok(I * kappa);
            }
            Ok(I * kappa * Complex64::new(eps_centroid, 0.0).sqrt())
        }
    }
}

/// Builds one GPW with direction `theta` at `centroid`.
pub fn build_gpw(
    field: &CoefficientField,
    centroid: Point,
    kappa: f64,
    q: usize,
    theta: f64,
    normalization: Normalization,
) -> Result<GpwFunction, GpwError> {
    if q == 0 || q > MAX_ORDER {
        return Err(GpwError::InvalidOrder);
    }
    if !(kappa > 0.0) {
        return Err(GpwError::NonPositiveWavenumber(kappa));
    }
    if !field.supports_order(q - 1) {
        return Err(GpwError::InsufficientSmoothness {
            name: field.name().to_string(),
            available: field.smoothness(),
            q,
            needed: q - 1,
        });
    }
    let [xk, yk] = centroid;
    let eps_c = field.value(xk, yk);
    let n = normalization_constant(eps_c, kappa, normalization)?;
    // lambda_10^2 + lambda_01^2 = N^2; the principal choice has N^2 = -kappa^2 eps
    // exactly, so lambda_20 cancels without round-off.
    let n_sq = match normalization {
        Normalization::Explicit(_) => n * n,
        _ if eps_c.abs() < DEGENERATE_EPS => Complex64::new(-kappa * kappa, 0.0),
        _ => Complex64::new(-kappa * kappa * eps_c, 0.0),
    };
    let degree = q + 1;
    let mut lam = CoefficientTable::zeros(degree);
    lam.set(1, 0, n * theta.cos());
    lam.set(0, 1, n * theta.sin());

    let k2 = kappa * kappa;
    // lambda_{i+2,j} only depends on lambda_{i,j+2} and on entries with first
    // index <= i + 1, so sweeping i upwards keeps every dependency available.
    for i in 0..q {
        for j in 0..q - i {
            let taylor = field.partial(i, j, xk, yk) / (factorial(i) * factorial(j));
            let mut acc = Complex64::new(-k2 * taylor, 0.0);
            acc -= lam.get(i, j + 2) * ((j + 2) * (j + 1)) as f64;
            if i == 0 && j == 0 {
                lam.set(2, 0, (acc - n_sq) / 2.0);
                continue;
            }
            for k in 0..=i {
                for l in 0..=j {
                    acc -= lam.get(i - k + 1, j - l) * lam.get(k + 1, l) * ((i - k + 1) * (k + 1)) as f64;
                }
            }
            for k in 0..=j {
                for l in 0..=i {
                    acc -= lam.get(i - l, j - k + 1) * lam.get(l, k + 1) * ((j - k + 1) * (k + 1)) as f64;
                }
            }
            lam.set(i + 2, j, acc / ((i + 2) * (i + 1)) as f64);
        }
    }
    Ok(GpwFunction { centroid, q, theta, normalization: n, coefficients: lam })
}

impl GpwFunction {
    pub fn centroid(&self) -> Point {
        self.centroid
    }

    pub fn order(&self) -> usize {
        self.q
    }

    pub fn degree(&self) -> usize {
        self.coefficients.degree()
    }

    pub fn theta(&self) -> f64 {
        self.theta
    }

    pub fn normalization(&self) -> Complex64 {
        self.normalization
    }

    pub fn coefficients(&self) -> &CoefficientTable {
        &self.coefficients
    }

    pub fn lambda(&self, i: usize, j: usize) -> Complex64 {
        self.coefficients.get(i, j)
    }

    /// `P`, its gradient and its Laplacian, by direct monomial accumulation in
    /// centred coordinates.
    pub fn polynomial(&self, p: Point) -> (Complex64, [Complex64; 2], Complex64) {
        let d = self.degree();
        let (dx, dy) = (p[0] - self.centroid[0], p[1] - self.centroid[1]);
        let mut xs = [1.0f64; MAX_ORDER + 2];
        let mut ys = [1.0f64; MAX_ORDER + 2];
        for k in 1..=d {
            xs[k] = xs[k - 1] * dx;
            ys[k] = ys[k - 1] * dy;
        }
        let zero = Complex64::new(0.0, 0.0);
        let (mut val, mut gx, mut gy, mut lap) = (zero, zero, zero, zero);
        for (i, j, c) in self.coefficients.iter() {
            if c == zero {
                continue;
            }
            val += c * (xs[i] * ys[j]);
            if i >= 1 {
                gx += c * (i as f64 * xs[i - 1] * ys[j]);
            }
            if j >= 1 {
                gy += c * (j as f64 * xs[i] * ys[j - 1]);
            }
            if i >= 2 {
                lap += c * ((i * (i - 1)) as f64 * xs[i - 2] * ys[j]);
            }
            if j >= 2 {
                lap += c * ((j * (j - 1)) as f64 * xs[i] * ys[j - 2]);
            }
        }
        (val, [gx, gy], lap)
    }

    pub fn evaluate(&self, p: Point) -> GpwEval {
        let (pv, [gx, gy], lap) = self.polynomial(p);
        let value = pv.exp();
        GpwEval { value, gradient: [value * gx, value * gy], laplacian: value * (lap + gx * gx + gy * gy) }
    }

    /// `(Delta + kappa^2 eps) phi` at `p`.
    pub fn helmholtz_residual(&self, field: &CoefficientField, kappa: f64, p: Point) -> Complex64 {
        self.evaluate(p).helmholtz(kappa, field.value(p[0], p[1]))
    }

    /// Writes the coefficient table as `i j re im` lines.
    pub fn format_table(&self) -> String {
        let mut out = String::new();
        for (i, j, c) in self.coefficients.iter() {
            let _ = writeln!(out, "{i} {j} {:e} {:e}", c.re, c.im);
        }
        out
    }
}

/// The `p = 2n + 1` GPWs of one element.
#[derive(Debug, Clone)]
pub struct GpwBasisSet {
    element: usize,
    n: usize,
    q: usize,
    kappa: f64,
    functions: Vec<GpwFunction>,
}

/// Equi-spaced directions `2 pi l / p`, `l = 0..p`.
pub fn directions(p: usize) -> Vec<f64> {
    (0..p).map(|l| 2.0 * PI * l as f64 / p as f64).collect()
}

pub fn build_basis_set(
    field: &CoefficientField,
    element: usize,
    centroid: Point,
    kappa: f64,
    n: usize,
    q: usize,
) -> Result<GpwBasisSet, GpwError> {
    if n == 0 {
        return Err(GpwError::InvalidDirections);
    }
    let eps = field.value(centroid[0], centroid[1]);
    if eps.abs() < DEGENERATE_EPS {
        log::debug!("element {element}: eps(centroid) = {eps:e}, using N = i kappa");
    }
    let functions = directions(2 * n + 1)
        .into_iter()
        .map(|theta| build_gpw(field, centroid, kappa, q, theta, Normalization::Principal))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(GpwBasisSet { element, n, q, kappa, functions })
}

impl GpwBasisSet {
    pub fn element(&self) -> usize {
        self.element
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn q(&self) -> usize {
        self.q
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn len(&self) -> usize {
        self.functions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.functions.is_empty()
    }

    pub fn functions(&self) -> &[GpwFunction] {
        &self.functions
    }

    pub fn centroid(&self) -> Point {
        self.functions[0].centroid()
    }

    /// Evaluates all functions at `p` into `out` (cleared first).
    pub fn evaluate_into(&self, p: Point, out: &mut Vec<GpwEval>) {
        out.clear();
        out.extend(self.functions.iter().map(|f| f.evaluate(p)));
    }

    /// `sum_l coeffs[l] phi_l` with gradient and Laplacian.
    pub fn combine(&self, coeffs: &[Complex64], p: Point) -> GpwEval {
        let zero = Complex64::new(0.0, 0.0);
        let mut acc = GpwEval { value: zero, gradient: [zero, zero], laplacian: zero };
        for (f, &c) in self.functions.iter().zip(coeffs) {
            let e = f.evaluate(p);
            acc.value += c * e.value;
            acc.gradient[0] += c * e.gradient[0];
            acc.gradient[1] += c * e.gradient[1];
            acc.laplacian += c * e.laplacian;
        }
        acc
    }

    /// Coefficient tables of every function, separated by `# direction l theta` headers.
    pub fn format_tables(&self) -> String {
        let mut out = String::new();
        for (l, f) in self.functions.iter().enumerate() {
            let _ = writeln!(out, "# element {} direction {l} theta {}", self.element, f.theta());
            out.push_str(&f.format_table());
        }
        out
    }
}

/// Result of [`residual_order`].
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ResidualFit {
    /// The residual is at round-off level at every sampled radius.
    Exact,
    /// Least-squares slope of `log max|residual|` against `log r`.
    Slope(f64),
}

/// Samples `|(Delta + kappa^2 eps) phi|` on circles around the centroid and
/// fits its decay order.
pub fn residual_order(gpw: &GpwFunction, field: &CoefficientField, kappa: f64, radii: &[f64]) -> ResidualFit {
    const ANGLES: usize = 24;
    let g = gpw.centroid();
    let samples: Vec<(f64, f64)> = radii
        .iter()
        .map(|&r| {
            let worst = (0..ANGLES)
                .map(|a| {
                    let t = 2.0 * PI * (a as f64 + 0.25) / ANGLES as f64;
                    gpw.helmholtz_residual(field, kappa, [g[0] + r * t.cos(), g[1] + r * t.sin()]).norm()
                })
                .fold(0.0, f64::max);
            (r, worst)
        })
        .collect();
    if samples.iter().all(|&(_, v)| v <= 1e-12) {
        return ResidualFit::Exact;
    }
    let pts: Vec<(f64, f64)> = samples.iter().filter(|&&(_, v)| v > 0.0).map(|&(r, v)| (r.ln(), v.ln())).collect();
    ResidualFit::Slope(least_squares_slope(&pts))
}

/// Least-squares slope of `y` against `x`.
pub fn least_squares_slope(points: &[(f64, f64)]) -> f64 {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let sxx: f64 = points.iter().map(|p| (p.0 - mx) * (p.0 - mx)).sum();
    sxy / sxx
}
