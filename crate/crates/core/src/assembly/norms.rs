use num_complex::Complex64;
use rayon::prelude::*;

use super::{AssemblyContext, AssemblyError};
use crate::analytic::ExactSolution;
use crate::geometry::{EdgeKind, Point};
use crate::gpw::{GpwBasisSet, GpwEval};

/// Function defined element by element with value, gradient and Laplacian.
pub trait PiecewiseField: Sync {
    fn eval(&self, element: usize, p: Point) -> GpwEval;
}

/// `sum_l x[K p + l] phi_{K,l}` on element `K`.
#[derive(Debug, Clone, Copy)]
pub struct DiscreteField<'a> {
    pub bases: &'a [GpwBasisSet],
    pub coeffs: &'a [Complex64],
}

impl PiecewiseField for DiscreteField<'_> {
    fn eval(&self, element: usize, p: Point) -> GpwEval {
        let np = self.bases[element].len();
        self.bases[element].combine(&self.coeffs[element * np..(element + 1) * np], p)
    }
}

/// An exact solution, with `Delta u = -kappa^2 eps u`.
#[derive(Debug, Clone, Copy)]
pub struct ExactField<'a>(pub &'a ExactSolution);

impl PiecewiseField for ExactField<'_> {
    fn eval(&self, _: usize, p: Point) -> GpwEval {
        let (value, gradient) = self.0.eval(p);
        let eps = self.0.field().value(p[0], p[1]);
        let k2 = self.0.kappa() * self.0.kappa();
        GpwEval { value, gradient, laplacian: -k2 * eps * value }
    }
}

/// `a - b`.
#[derive(Clone, Copy)]
pub struct FieldDifference<'a>(pub &'a dyn PiecewiseField, pub &'a dyn PiecewiseField);

impl PiecewiseField for FieldDifference<'_> {
    fn eval(&self, element: usize, p: Point) -> GpwEval {
        let (a, b) = (self.0.eval(element, p), self.1.eval(element, p));
        GpwEval {
            value: a.value - b.value,
            gradient: [a.gradient[0] - b.gradient[0], a.gradient[1] - b.gradient[1]],
            laplacian: a.laplacian - b.laplacian,
        }
    }
}

/// Squared contributions to the DG and DG+ norms.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct DgNormTerms {
    /// `(1/kappa) ||beta^{1/2} [[grad u]]||^2` on interior edges.
    pub interior_normal_jump: f64,
    /// `kappa ||alpha^{1/2} [[u]]||^2` on interior edges.
    pub interior_value_jump: f64,
    /// `(1/kappa) ||delta^{1/2} du/dn||^2` on Robin edges.
    pub robin_normal: f64,
    /// `kappa ||(1 - delta)^{1/2} u||^2` on Robin edges.
    pub robin_value: f64,
    /// `kappa ||alpha^{1/2} u||^2` on Dirichlet edges.
    pub dirichlet_value: f64,
    /// `(1/kappa^2) ||gamma^{1/2} (Delta u + kappa^2 eps u)||^2`.
    pub volume_residual: f64,
    /// `kappa ||beta^{-1/2} {{u}}||^2` on interior edges.
    pub interior_value_average: f64,
    /// `(1/kappa) ||alpha^{-1/2} {{grad u}}||^2` on interior edges.
    pub interior_gradient_average: f64,
    /// `kappa ||delta^{-1/2} u||^2` on Robin edges.
    pub robin_value_plus: f64,
    /// `(1/kappa) ||alpha^{-1} du/dn||^2` on Dirichlet edges.
    pub dirichlet_normal_plus: f64,
    /// `kappa^2 ||gamma^{-1/2} u||^2`; `None` when some element has `gamma = 0`.
    pub volume_inverse_gamma: Option<f64>,
}

impl DgNormTerms {
    pub fn dg_squared(&self) -> f64 {
        self.interior_normal_jump
            + self.interior_value_jump
            + self.robin_normal
            + self.robin_value
            + self.dirichlet_value
            + self.volume_residual
    }

    pub fn dg(&self) -> f64 {
        self.dg_squared().sqrt()
    }

    /// Squared DG+ norm; the volume `gamma^{-1/2}` term is included when
    /// `with_volume` is set, which fails for `gamma = 0`.
    pub fn dg_plus_squared(&self, with_volume: bool) -> Result<f64, AssemblyError> {
        let skeleton = self.dg_squared()
            + self.interior_value_average
            + self.interior_gradient_average
            + self.robin_value_plus
            + self.dirichlet_normal_plus;
        if with_volume {
            Ok(skeleton + self.volume_inverse_gamma.ok_or(AssemblyError::ZeroGamma)?)
        } else {
            Ok(skeleton)
        }
    }

    fn add(mut self, other: &Self) -> Self {
        self.interior_normal_jump += other.interior_normal_jump;
        self.interior_value_jump += other.interior_value_jump;
        self.robin_normal += other.robin_normal;
        self.robin_value += other.robin_value;
        self.dirichlet_value += other.dirichlet_value;
        self.volume_residual += other.volume_residual;
        self.interior_value_average += other.interior_value_average;
        self.interior_gradient_average += other.interior_gradient_average;
        self.robin_value_plus += other.robin_value_plus;
        self.dirichlet_normal_plus += other.dirichlet_normal_plus;
        self.volume_inverse_gamma = match (self.volume_inverse_gamma, other.volume_inverse_gamma) {
            (Some(a), Some(b)) => Some(a + b),
            _ => None,
        };
        self
    }
}

/// Evaluates every DG and DG+ term of `u` with the context's quadrature.
pub fn dg_plus_seminorm_terms(ctx: &AssemblyContext, u: &dyn PiecewiseField) -> Result<DgNormTerms, AssemblyError> {
    let rules = ctx.rules()?;
    let mesh = ctx.mesh;
    let kappa = ctx.kappa;
    let k2 = kappa * kappa;
    let super::DgParameters { alpha, beta, delta, .. } = ctx.params;
    let zero = DgNormTerms { volume_inverse_gamma: Some(0.0), ..Default::default() };

    let volumes: Vec<DgNormTerms> = (0..mesh.num_elements())
        .into_par_iter()
        .map(|t| {
            let gamma = ctx.params.gamma(mesh.diameter(t));
            let (mut residual, mut mass) = (0.0, 0.0);
            for (x, w) in rules.element(t).map(mesh.triangle_points(t)) {
                let e = u.eval(t, x);
                residual += w * e.helmholtz(kappa, ctx.field.value(x[0], x[1])).norm_sqr();
                mass += w * e.value.norm_sqr();
            }
            DgNormTerms {
                volume_residual: gamma / k2 * residual,
                volume_inverse_gamma: (gamma > 0.0).then(|| k2 / gamma * mass),
                ..Default::default()
            }
        })
        .collect();

    let edges: Vec<DgNormTerms> = (0..mesh.edges().len())
        .into_par_iter()
        .map(|index| {
            let edge = &mesh.edges()[index];
            let n = edge.normal;
            let [a, b] = mesh.edge_points(index);
            let mut terms = zero;
            for (x, w) in rules.edge(index).map(a, b) {
                let plus = u.eval(edge.plus, x);
                match (edge.kind, edge.minus) {
                    (EdgeKind::Interior, Some(m)) => {
                        let minus = u.eval(m, x);
                        let jump_n = plus.normal_derivative(n) - minus.normal_derivative(n);
                        let jump = plus.value - minus.value;
                        let avg = 0.5 * (plus.value + minus.value);
                        let avg_grad = [
                            0.5 * (plus.gradient[0] + minus.gradient[0]),
                            0.5 * (plus.gradient[1] + minus.gradient[1]),
                        ];
                        terms.interior_normal_jump += w * beta / kappa * jump_n.norm_sqr();
                        terms.interior_value_jump += w * kappa * alpha * jump.norm_sqr();
                        terms.interior_value_average += w * kappa / beta * avg.norm_sqr();
                        terms.interior_gradient_average +=
                            w / (kappa * alpha) * (avg_grad[0].norm_sqr() + avg_grad[1].norm_sqr());
                    }
                    (EdgeKind::Robin, _) => {
                        terms.robin_normal += w * delta / kappa * plus.normal_derivative(n).norm_sqr();
                        terms.robin_value += w * kappa * (1.0 - delta) * plus.value.norm_sqr();
                        terms.robin_value_plus += w * kappa / delta * plus.value.norm_sqr();
                    }
                    (EdgeKind::Dirichlet, _) => {
                        terms.dirichlet_value += w * kappa * alpha * plus.value.norm_sqr();
                        terms.dirichlet_normal_plus +=
                            w / (kappa * alpha * alpha) * plus.normal_derivative(n).norm_sqr();
                    }
                    (EdgeKind::Interior, None) => {}
                }
            }
            terms
        })
        .collect();

    Ok(volumes.iter().chain(&edges).fold(zero, |acc, t| acc.add(t)))
}
