//! Special functions and exact solutions for the benchmark problems.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::fmt;
use std::sync::{Arc, Mutex, OnceLock};

use num_complex::Complex64;
use thiserror::Error;

use crate::epsilon::{CoefficientField, FieldError};
use crate::geometry::{Point, Rectangle};

/// `Ai(0) = 3^{-2/3} / Gamma(2/3)`.
pub const AIRY_AI0: f64 = 0.355_028_053_887_817_2;
/// `-Ai'(0) = 3^{-1/3} / Gamma(1/3)`.
pub const AIRY_DAI0: f64 = 0.258_819_403_792_806_8;
/// Largest `|t|` accepted by [`airy_ai`].
pub const AIRY_RANGE: f64 = 100.0;
/// Maclaurin series on `|t| <= AIRY_SERIES_LIMIT`.
pub const AIRY_SERIES_LIMIT: f64 = 2.0;
/// Asymptotic expansion for `t >= AIRY_ASYMPTOTIC_START`; the decaying branch
/// in between is integrated backwards from this anchor.
pub const AIRY_ASYMPTOTIC_START: f64 = 12.0;
/// Largest `|s|` accepted by [`weber_po`].
pub const WEBER_RANGE: f64 = 10.0;
/// Default relative truncation tolerance of the local Taylor series.
pub const TAYLOR_TOL: f64 = 1e-17;
const TAYLOR_STEP: f64 = 0.25;
const TAYLOR_MAX_TERMS: usize = 150;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AnalyticError {
    #[error("Airy argument {0} outside |t| <= {AIRY_RANGE}")]
    AiryRange(f64),
    #[error("Weber argument {0} outside |s| <= {WEBER_RANGE}")]
    WeberRange(f64),
    #[error("argument {s} outside the tabulated interval [{lo}, {hi}]")]
    TableRange { s: f64, lo: f64, hi: f64 },
    #[error("Taylor series did not reach tolerance {tol:e} at s = {s}")]
    Tolerance { s: f64, tol: f64 },
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),
    #[error(transparent)]
    Field(#[from] FieldError),
}

/// Value and derivative of a real special function.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ValueDerivative {
    pub value: f64,
    pub derivative: f64,
}

/// Piecewise Taylor solution of `w'' = (q0 + q1 s + q2 s^2) w` with dense
/// output.
#[derive(Debug, Clone)]
pub struct TaylorTable {
    start: f64,
    /// Signed step; negative tables run towards smaller `s`.
    step: f64,
    /// Taylor coefficients about `start + k * step` for each segment `k`.
    segments: Vec<Vec<f64>>,
}

impl TaylorTable {
    /// Integrates from `start` to `end` with `w(start) = w0`, `w'(start) = dw0`.
    /// Each local series is truncated once four consecutive terms fall below
    /// `tol` relative to the local solution size.
    pub fn new(q: [f64; 3], start: f64, end: f64, w0: f64, dw0: f64, tol: f64) -> Result<Self, AnalyticError> {
        if !q.iter().chain([&start, &end, &w0, &dw0]).all(|v| v.is_finite()) {
            return Err(AnalyticError::InvalidParameter("non-finite Taylor table input".into()));
        }
        let count = ((end - start).abs() / TAYLOR_STEP).ceil().max(1.0) as usize;
        let step = (end - start) / count as f64;
        let mut segments = Vec::with_capacity(count);
        let (mut w, mut dw) = (w0, dw0);
        for k in 0..count {
            let s0 = start + k as f64 * step;
            let local = [q[0] + q[1] * s0 + q[2] * s0 * s0, q[1] + 2.0 * q[2] * s0, q[2]];
            let mut c = vec![w, dw];
            let scale = w.abs() + dw.abs() * step.abs();
            let mut small = 0;
            loop {
                let n = c.len() - 2;
                let mut next = local[0] * c[n];
                if n >= 1 {
                    next += local[1] * c[n - 1];
                }
                if n >= 2 {
                    next += local[2] * c[n - 2];
                }
                next /= ((n + 2) * (n + 1)) as f64;
                c.push(next);
                let term = next.abs() * step.abs().powi(c.len() as i32 - 1);
                small = if term <= tol * scale { small + 1 } else { 0 };
                // Four in a row: at s0 = 0 the recurrence can leave three
                // consecutive coefficients exactly zero.
                if small >= 4 && c.len() >= 10 {
                    break;
                }
                if c.len() > TAYLOR_MAX_TERMS {
                    return Err(AnalyticError::Tolerance { s: s0, tol });
                }
            }
            let end = horner(&c, step);
            w = end.value;
            dw = end.derivative;
            segments.push(c);
        }
        Ok(Self { start, step, segments })
    }

    /// Interval covered by the table.
    pub fn range(&self) -> (f64, f64) {
        let end = self.start + self.step * self.segments.len() as f64;
        (self.start.min(end), self.start.max(end))
    }

    pub fn eval(&self, s: f64) -> Result<ValueDerivative, AnalyticError> {
        let (lo, hi) = self.range();
        if !(lo..=hi).contains(&s) {
            return Err(AnalyticError::TableRange { s, lo, hi });
        }
        let k = (((s - self.start) / self.step) as usize).min(self.segments.len() - 1);
        Ok(horner(&self.segments[k], s - (self.start + k as f64 * self.step)))
    }
}

fn horner(c: &[f64], h: f64) -> ValueDerivative {
    let mut value = 0.0;
    let mut derivative = 0.0;
    for (i, &ci) in c.iter().enumerate().rev() {
        value = value * h + ci;
        if i > 0 {
            derivative = derivative * h + i as f64 * ci;
        }
    }
    ValueDerivative { value, derivative }
}

fn airy_series(t: f64) -> ValueDerivative {
    let t3 = t * t * t;
    let (mut f, mut df) = (1.0, 0.0);
    let (mut g, mut dg) = (t, 1.0);
    let (mut a, mut b) = (1.0, t);
    let (mut da, mut db) = (0.5 * t * t, 1.0);
    df += da;
    for k in 1..200 {
        let k3 = 3.0 * k as f64;
        a *= t3 / ((k3 - 1.0) * k3);
        b *= t3 / (k3 * (k3 + 1.0));
        db *= t3 / ((k3 - 2.0) * k3);
        if k >= 2 {
            da *= t3 / ((k3 - 3.0) * (k3 - 1.0));
            df += da;
        }
        f += a;
        g += b;
        dg += db;
        if a.abs() + b.abs() + da.abs() + db.abs() < 1e-18 * (f.abs() + g.abs() + 1.0) {
            break;
        }
    }
    ValueDerivative { value: AIRY_AI0 * f - AIRY_DAI0 * g, derivative: AIRY_AI0 * df - AIRY_DAI0 * dg }
}

/// Coefficients `u_k`, `v_k` of the Airy asymptotic expansions.
fn airy_uv(count: usize) -> (Vec<f64>, Vec<f64>) {
    let mut u = vec![1.0; count];
    let mut v = vec![1.0; count];
    for k in 1..count {
        let kf = k as f64;
        u[k] = u[k - 1] * (6.0 * kf - 5.0) * (6.0 * kf - 3.0) * (6.0 * kf - 1.0) / ((2.0 * kf - 1.0) * 216.0 * kf);
        v[k] = -(6.0 * kf + 1.0) / (6.0 * kf - 1.0) * u[k];
    }
    (u, v)
}

/// Sums terms of an asymptotic series, stopping at the smallest term.
fn truncated_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut sum = 0.0;
    let mut last = f64::INFINITY;
    for t in terms {
        if t.abs() > last {
            break;
        }
        sum += t;
        last = t.abs();
        if last < 1e-17 * sum.abs() {
            break;
        }
    }
    sum
}

fn airy_asymptotic(t: f64) -> ValueDerivative {
    let (u, v) = airy_uv(60);
    let x = t.abs();
    let zeta = 2.0 / 3.0 * x.powf(1.5);
    let root = x.powf(0.25);
    let sqrt_pi = PI.sqrt();
    if t > 0.0 {
        let su = truncated_sum((0..u.len()).map(|k| (-1f64).powi(k as i32) * u[k] / zeta.powi(k as i32)));
        let sv = truncated_sum((0..v.len()).map(|k| (-1f64).powi(k as i32) * v[k] / zeta.powi(k as i32)));
        let e = (-zeta).exp();
        ValueDerivative { value: e / (2.0 * sqrt_pi * root) * su, derivative: -root * e / (2.0 * sqrt_pi) * sv }
    } else {
        let half = u.len() / 2;
        let even =
            |c: &[f64]| truncated_sum((0..half).map(|k| (-1f64).powi(k as i32) * c[2 * k] / zeta.powi(2 * k as i32)));
        let odd = |c: &[f64]| {
            truncated_sum((0..half - 1).map(|k| (-1f64).powi(k as i32) * c[2 * k + 1] / zeta.powi(2 * k as i32 + 1)))
        };
        let (s, c) = (zeta - 0.25 * PI).sin_cos();
        ValueDerivative {
            value: (c * even(&u) + s * odd(&u)) / (sqrt_pi * root),
            derivative: root / sqrt_pi * (s * even(&v) - c * odd(&v)),
        }
    }
}

struct AiryTables {
    /// Decaying branch on `[AIRY_SERIES_LIMIT, AIRY_ASYMPTOTIC_START]`.
    positive: TaylorTable,
    /// Oscillatory branch on `[-AIRY_RANGE, -AIRY_SERIES_LIMIT]`.
    negative: TaylorTable,
}

fn airy_tables() -> &'static AiryTables {
    static TABLES: OnceLock<AiryTables> = OnceLock::new();
    TABLES.get_or_init(|| {
        let q = [0.0, 1.0, 0.0];
        let anchor = airy_asymptotic(AIRY_ASYMPTOTIC_START);
        let start = airy_series(-AIRY_SERIES_LIMIT);
        let build = |from: f64, to: f64, init: ValueDerivative| {
            TaylorTable::new(q, from, to, init.value, init.derivative, TAYLOR_TOL)
                .expect("Airy Taylor table converges for fixed inputs")
        };
        AiryTables {
            positive: build(AIRY_ASYMPTOTIC_START, AIRY_SERIES_LIMIT, anchor),
            negative: build(-AIRY_SERIES_LIMIT, -AIRY_RANGE, start),
        }
    })
}

/// Airy function `Ai(t)` and `Ai'(t)` for real `|t| <= AIRY_RANGE`.
pub fn airy_ai(t: f64) -> Result<ValueDerivative, AnalyticError> {
    if !(t.abs() <= AIRY_RANGE) {
        return Err(AnalyticError::AiryRange(t));
    }
    if t.abs() <= AIRY_SERIES_LIMIT {
        Ok(airy_series(t))
    } else if t >= AIRY_ASYMPTOTIC_START {
        Ok(airy_asymptotic(t))
    } else if t > 0.0 {
        airy_tables().positive.eval(t)
    } else {
        airy_tables().negative.eval(t)
    }
}

/// Table of a Weber solution `w'' + (s^2/4 - a) w = 0` on `[0, WEBER_RANGE]`.
pub fn weber_table(a: f64, w0: f64, dw0: f64, tol: f64) -> Result<TaylorTable, AnalyticError> {
    if !a.is_finite() {
        return Err(AnalyticError::InvalidParameter(format!("Weber parameter a = {a}")));
    }
    TaylorTable::new([a, 0.0, -0.25], 0.0, WEBER_RANGE, w0, dw0, tol)
}

fn weber_cache() -> &'static Mutex<HashMap<u64, Arc<TaylorTable>>> {
    static CACHE: OnceLock<Mutex<HashMap<u64, Arc<TaylorTable>>>> = OnceLock::new();
    CACHE.get_or_init(|| Mutex::new(HashMap::new()))
}

fn odd_weber_table(a: f64) -> Result<Arc<TaylorTable>, AnalyticError> {
    let key = a.to_bits();
    if let Some(t) = weber_cache().lock().unwrap_or_else(|e| e.into_inner()).get(&key) {
        return Ok(t.clone());
    }
    let table = Arc::new(weber_table(a, 0.0, 1.0, TAYLOR_TOL)?);
    let mut cache = weber_cache().lock().unwrap_or_else(|e| e.into_inner());
    Ok(cache.entry(key).or_insert(table).clone())
}

/// Odd solution `P_o(s, a)` of `w'' + (s^2/4 - a) w = 0` normalised by
/// `w(0) = 0`, `w'(0) = 1`, together with its derivative.
pub fn weber_po(s: f64, a: f64) -> Result<ValueDerivative, AnalyticError> {
    if !(s.abs() <= WEBER_RANGE) {
        return Err(AnalyticError::WeberRange(s));
    }
    let r = odd_weber_table(a)?.eval(s.abs())?;
    Ok(if s < 0.0 { ValueDerivative { value: -r.value, derivative: r.derivative } } else { r })
}

type EvalFn = dyn Fn(f64, f64) -> (Complex64, [Complex64; 2]) + Send + Sync;

/// Benchmark problems with known solutions.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ExactProblem {
    /// `u = Ai(kappa^{2/3} y)` with `eps = -y`.
    Airy { kappa: f64 },
    /// `u = P_o(sqrt(kappa) x, a)` with `eps = x^2/4 - a/kappa`.
    Weber { kappa: f64, a: f64 },
    /// `u = exp(i kappa (x cos theta + y sin theta))` with `eps = 1`.
    PlaneWave { kappa: f64, theta: f64 },
}

/// Exact solution of `Delta u + kappa^2 eps u = 0`.
#[derive(Clone)]
pub struct ExactSolution {
    name: String,
    kappa: f64,
    field: CoefficientField,
    eval: Arc<EvalFn>,
    /// Axis-aligned range of validity of the underlying special function.
    valid: Rectangle,
}

impl fmt::Debug for ExactSolution {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("ExactSolution").field("name", &self.name).field("kappa", &self.kappa).finish()
    }
}

impl ExactSolution {
    pub fn new(
        name: impl Into<String>,
        kappa: f64,
        field: CoefficientField,
        valid: Rectangle,
        eval: impl Fn(f64, f64) -> (Complex64, [Complex64; 2]) + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), kappa, field, eval: Arc::new(eval), valid }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn kappa(&self) -> f64 {
        self.kappa
    }

    pub fn field(&self) -> &CoefficientField {
        &self.field
    }

    /// Checks that `domain` lies inside the range where the solution can be
    /// evaluated.
    pub fn check_domain(&self, domain: &Rectangle) -> Result<(), AnalyticError> {
        let v = &self.valid;
        if domain.x_min >= v.x_min && domain.x_max <= v.x_max && domain.y_min >= v.y_min && domain.y_max <= v.y_max {
            Ok(())
        } else {
            Err(AnalyticError::InvalidParameter(format!(
                "{} solution is only available on [{}, {}] x [{}, {}]",
                self.name, v.x_min, v.x_max, v.y_min, v.y_max
            )))
        }
    }

    /// Value and gradient; NaN outside the range of validity.
    pub fn eval(&self, p: Point) -> (Complex64, [Complex64; 2]) {
        (self.eval)(p[0], p[1])
    }

    pub fn value(&self, p: Point) -> Complex64 {
        self.eval(p).0
    }

    pub fn gradient(&self, p: Point) -> [Complex64; 2] {
        self.eval(p).1
    }

    /// `Delta u = -kappa^2 eps u`.
    pub fn laplacian(&self, p: Point) -> Complex64 {
        -self.kappa * self.kappa * self.field.value(p[0], p[1]) * self.value(p)
    }
}

fn nan_pair() -> (Complex64, [Complex64; 2]) {
    let nan = Complex64::new(f64::NAN, f64::NAN);
    (nan, [nan; 2])
}

pub fn make_exact(problem: ExactProblem) -> Result<ExactSolution, AnalyticError> {
    let check_kappa = |kappa: f64| {
        if kappa > 0.0 && kappa.is_finite() {
            Ok(())
        } else {
            Err(AnalyticError::InvalidParameter(format!("kappa = {kappa}")))
        }
    };
    match problem {
        ExactProblem::Airy { kappa } => {
            check_kappa(kappa)?;
            let scale = kappa.powf(2.0 / 3.0);
            let ylim = AIRY_RANGE / scale;
            let valid = Rectangle { x_min: f64::NEG_INFINITY, x_max: f64::INFINITY, y_min: -ylim, y_max: ylim };
            Ok(ExactSolution::new("airy", kappa, CoefficientField::airy(), valid, move |_, y| {
                match airy_ai(scale * y) {
                    Ok(r) => {
                        let zero = Complex64::new(0.0, 0.0);
                        (Complex64::new(r.value, 0.0), [zero, Complex64::new(scale * r.derivative, 0.0)])
                    }
                    Err(_) => nan_pair(),
                }
            }))
        }
        ExactProblem::Weber { kappa, a } => {
            check_kappa(kappa)?;
            let field = CoefficientField::weber(a, kappa)?;
            let scale = kappa.sqrt();
            // Build the cached table now so that evaluation cannot fail later.
            odd_weber_table(a)?;
            let xlim = WEBER_RANGE / scale;
            let valid = Rectangle { x_min: -xlim, x_max: xlim, y_min: f64::NEG_INFINITY, y_max: f64::INFINITY };
            Ok(ExactSolution::new("weber", kappa, field, valid, move |x, _| match weber_po(scale * x, a) {
                Ok(r) => {
                    let zero = Complex64::new(0.0, 0.0);
                    (Complex64::new(r.value, 0.0), [Complex64::new(scale * r.derivative, 0.0), zero])
                }
                Err(_) => nan_pair(),
            }))
        }
        ExactProblem::PlaneWave { kappa, theta } => {
            check_kappa(kappa)?;
            let d = [theta.cos(), theta.sin()];
            let inf = f64::INFINITY;
            let valid = Rectangle { x_min: -inf, x_max: inf, y_min: -inf, y_max: inf };
            Ok(ExactSolution::new("plane-wave", kappa, CoefficientField::constant(1.0), valid, move |x, y| {
                let ik = Complex64::new(0.0, kappa);
                let u = (ik * (x * d[0] + y * d[1])).exp();
                (u, [ik * d[0] * u, ik * d[1] * u])
            }))
        }
    }
}

/// Impedance data `g = u + (1/(i kappa)) du/dn`, so that `u` satisfies
/// `du/dn + i kappa u = i kappa g`.
pub fn impedance_trace(exact: &ExactSolution, p: Point, normal: [f64; 2], kappa: f64) -> Complex64 {
    let (u, grad) = exact.eval(p);
    let dn = grad[0] * normal[0] + grad[1] * normal[1];
    u + dn / Complex64::new(0.0, kappa)
}
