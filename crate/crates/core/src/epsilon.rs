//! Real coefficient fields `eps(x, y)` with closed-form mixed partial
//! derivatives.

use std::fmt;
use std::sync::Arc;

use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum FieldError {
    #[error("wavenumber must be positive, got {0}")]
    NonPositiveWavenumber(f64),
    #[error("unknown coefficient field `{0}` (expected constant:<c>, airy or weber:<a>)")]
    UnknownField(String),
    #[error("could not parse number in field spec `{0}`")]
    BadNumber(String),
}

/// `partial(i, j, x, y)` returns `d^i/dx^i d^j/dy^j eps(x, y)`.
pub type PartialFn = dyn Fn(usize, usize, f64, f64) -> f64 + Send + Sync;

/// Coefficient field with exact derivatives.
#[derive(Clone)]
pub struct CoefficientField {
    name: String,
    /// Highest total derivative order available; `None` means unbounded
    /// (polynomials and other entire fields).
    smoothness: Option<usize>,
    partial: Arc<PartialFn>,
}

impl fmt::Debug for CoefficientField {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("CoefficientField").field("name", &self.name).field("smoothness", &self.smoothness).finish()
    }
}

impl CoefficientField {
    /// User-defined field from a derivative callback.
    pub fn new(
        name: impl Into<String>,
        smoothness: Option<usize>,
        partial: impl Fn(usize, usize, f64, f64) -> f64 + Send + Sync + 'static,
    ) -> Self {
        Self { name: name.into(), smoothness, partial: Arc::new(partial) }
    }

    pub fn constant(c: f64) -> Self {
        Self::new(format!("constant:{c}"), None, move |i, j, _, _| if i + j == 0 { c } else { 0.0 })
    }

    /// `eps(x, y) = -y`.
    pub fn airy() -> Self {
        Self::new("airy", None, |i, j, _, y| match (i, j) {
            (0, 0) => -y,
            (0, 1) => -1.0,
            _ => 0.0,
        })
    }

    /// `eps(x, y) = x^2 / 4 - a / kappa`.
    pub fn weber(a: f64, kappa: f64) -> Result<Self, FieldError> {
        if !(kappa > 0.0) {
            return Err(FieldError::NonPositiveWavenumber(kappa));
        }
        let shift = a / kappa;
        Ok(Self::new(format!("weber:{a}"), None, move |i, j, x, _| match (i, j) {
            (0, 0) => 0.25 * x * x - shift,
            (1, 0) => 0.5 * x,
            (2, 0) => 0.5,
            _ => 0.0,
        }))
    }

    /// Parses `constant:<c>`, `airy` or `weber:<a>`.
    pub fn parse(spec: &str, kappa: f64) -> Result<Self, FieldError> {
        let number = |s: &str| s.trim().parse::<f64>().map_err(|_| FieldError::BadNumber(spec.to_string()));
        match spec.split_once(':') {
            Some(("constant", c)) => Ok(Self::constant(number(c)?)),
            Some(("weber", a)) => Self::weber(number(a)?, kappa),
            None if spec == "airy" => Ok(Self::airy()),
            _ => Err(FieldError::UnknownField(spec.to_string())),
        }
    }

    pub fn name(&self) -> &str {
        &self.name
    }

    pub fn smoothness(&self) -> Option<usize> {
        self.smoothness
    }

    /// Whether derivatives of total order up to `order` are available.
    pub fn supports_order(&self, order: usize) -> bool {
        self.smoothness.is_none_or(|s| s >= order)
    }

    pub fn value(&self, x: f64, y: f64) -> f64 {
        (self.partial)(0, 0, x, y)
    }

    pub fn partial(&self, i: usize, j: usize, x: f64, y: f64) -> f64 {
        (self.partial)(i, j, x, y)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_field() {
        let one = CoefficientField::constant(1.0);
        assert_eq!(one.partial(0, 0, 3.0, 4.0), 1.0);
        assert_eq!(one.partial(1, 0, 3.0, 4.0), 0.0);
        assert_eq!(CoefficientField::constant(2.0).value(0.3, -0.7), 2.0);
    }

    #[test]
    fn airy_field() {
        let f = CoefficientField::airy();
        assert_eq!(f.value(0.5, 0.25), -0.25);
        assert_eq!(f.partial(0, 1, 0.1, 0.9), -1.0);
        assert_eq!(f.partial(2, 0, 0.1, 0.9), 0.0);
        assert_eq!(f.partial(0, 2, 0.1, 0.9), 0.0);
    }

    #[test]
    fn weber_field() {
        let f = CoefficientField::weber(5.0, 50.0).unwrap();
        assert!((f.value(0.0, 0.0) + 0.1).abs() < 1e-15);
        assert!(f.value((0.4f64).sqrt(), 0.3).abs() < 1e-15);
        assert_eq!(f.partial(2, 0, 0.7, -0.2), 0.5);
        assert_eq!(f.partial(3, 0, 0.7, -0.2), 0.0);
        assert_eq!(CoefficientField::weber(5.0, 0.0).unwrap_err(), FieldError::NonPositiveWavenumber(0.0));
    }

    #[test]
    fn parse_names() {
        assert_eq!(CoefficientField::parse("constant:2.5", 1.0).unwrap().value(0.0, 0.0), 2.5);
        assert_eq!(CoefficientField::parse("airy", 1.0).unwrap().value(0.0, 0.5), -0.5);
        assert!((CoefficientField::parse("weber:5", 50.0).unwrap().value(0.0, 0.0) + 0.1).abs() < 1e-15);
        assert!(CoefficientField::parse("bessel", 1.0).is_err());
        assert!(CoefficientField::parse("constant:x", 1.0).is_err());
    }

    #[test]
    fn derivatives_match_finite_differences() {
        let fields =
            [CoefficientField::constant(1.7), CoefficientField::airy(), CoefficientField::weber(5.0, 20.0).unwrap()];
        let step = 1e-4;
        for field in &fields {
            for &(x, y) in &[(-0.8, -0.3), (0.1, 0.7), (0.55, -0.95), (0.9, 0.2)] {
                let v = |dx: f64, dy: f64| field.value(x + dx, y + dy);
                let fd = [
                    ((1, 0), (v(step, 0.0) - v(-step, 0.0)) / (2.0 * step)),
                    ((0, 1), (v(0.0, step) - v(0.0, -step)) / (2.0 * step)),
                    ((2, 0), (v(step, 0.0) - 2.0 * v(0.0, 0.0) + v(-step, 0.0)) / (step * step)),
                    ((0, 2), (v(0.0, step) - 2.0 * v(0.0, 0.0) + v(0.0, -step)) / (step * step)),
                    ((1, 1), (v(step, step) - v(step, -step) - v(-step, step) + v(-step, -step)) / (4.0 * step * step)),
                ];
                for ((i, j), approx) in fd {
                    let exact = field.partial(i, j, x, y);
                    let scale = exact.abs().max(1.0);
                    assert!((approx - exact).abs() <= 1e-6 * scale, "{} ({i},{j}) at ({x},{y})", field.name());
                }
            }
        }
    }
}
