//! Assembly of the stabilized Trefftz DG sesquilinear form, the load vector
//! and the DG-norm Gram matrix over GPW bases.

mod matrix;
mod norms;

use std::collections::btree_map::Entry;
use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::Path;

use num_complex::Complex64;
use rayon::prelude::*;
use thiserror::Error;

use crate::analytic::{impedance_trace, ExactSolution};
use crate::epsilon::CoefficientField;
use crate::geometry::{EdgeKind, Mesh, Point};
use crate::gpw::{GpwBasisSet, GpwEval};
use crate::quadrature::{gauss_edge, triangle_rule, EdgeRule, QuadratureError, QuadratureOrders, TriangleRule};

pub use matrix::BlockSparseMatrix;
pub use norms::{dg_plus_seminorm_terms, DgNormTerms, DiscreteField, ExactField, FieldDifference, PiecewiseField};

const I: Complex64 = Complex64::new(0.0, 1.0);
const ZERO: Complex64 = Complex64::new(0.0, 0.0);

#[derive(Debug, Error)]
pub enum AssemblyError {
    #[error("expected {expected} basis sets (one per element), found {found}")]
    MissingBasis { expected: usize, found: usize },
    #[error("basis set {index} belongs to element {element}")]
    BasisOrder { index: usize, element: usize },
    #[error("basis sets must share one direction count; element {element} has {found}, expected {expected}")]
    DirectionMismatch { element: usize, expected: usize, found: usize },
    #[error("invalid DG parameter: {0}")]
    InvalidParameter(String),
    #[error("the gamma^(-1/2) term is undefined for gamma = 0")]
    ZeroGamma,
    #[error(transparent)]
    Quadrature(#[from] QuadratureError),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

/// Penalty parameters on the skeleton and the volume stabilization weight
/// `gamma = gamma0 h_K^r`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DgParameters {
    pub alpha: f64,
    pub beta: f64,
    pub delta: f64,
    pub gamma0: f64,
    pub gamma_exp: f64,
}

impl Default for DgParameters {
    fn default() -> Self {
        Self { alpha: 0.5, beta: 0.5, delta: 0.5, gamma0: 1.0, gamma_exp: 3.0 }
    }
}

impl DgParameters {
    pub fn with_gamma(gamma0: f64, gamma_exp: f64) -> Self {
        Self { gamma0, gamma_exp, ..Self::default() }
    }

    pub fn validate(&self) -> Result<(), AssemblyError> {
        let bad = |what: &str, v: f64| Err(AssemblyError::InvalidParameter(format!("{what} = {v}")));
        if !(self.alpha > 0.0 && self.alpha.is_finite()) {
            return bad("alpha", self.alpha);
        }
        if !(self.beta > 0.0 && self.beta.is_finite()) {
            return bad("beta", self.beta);
        }
        if !(self.delta > 0.0 && self.delta < 1.0) {
            return bad("delta", self.delta);
        }
        if !(self.gamma0 >= 0.0 && self.gamma0.is_finite()) {
            return bad("gamma0", self.gamma0);
        }
        if !(self.gamma_exp >= 0.0 && self.gamma_exp.is_finite()) {
            return bad("gamma exponent", self.gamma_exp);
        }
        Ok(())
    }

    /// `gamma0 h_K^r` for an element of diameter `h_k`.
    pub fn gamma(&self, h_k: f64) -> f64 {
        self.gamma0 * h_k.powf(self.gamma_exp)
    }
}

/// Integration-by-parts variant of the form.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FormVariant {
    /// Symmetric gradient form.
    Primal,
    /// Gradient term moved onto the test function.
    AdjointIbp,
    /// Gradient term moved onto the trial function.
    PrimalIbp,
}

/// Boundary data: Robin data `g` with `du/dn + i kappa u = i kappa g` and
/// Dirichlet data `g_D`.
pub trait BoundarySource: Sync {
    fn robin(&self, p: Point, normal: Point) -> Complex64;
    fn dirichlet(&self, p: Point, normal: Point) -> Complex64;
}

/// Homogeneous data.
#[derive(Debug, Clone, Copy, Default)]
pub struct ZeroData;

impl BoundarySource for ZeroData {
    fn robin(&self, _: Point, _: Point) -> Complex64 {
        ZERO
    }

    fn dirichlet(&self, _: Point, _: Point) -> Complex64 {
        ZERO
    }
}

/// Traces of an exact solution.
#[derive(Debug, Clone, Copy)]
pub struct ExactData<'a>(pub &'a ExactSolution);

impl BoundarySource for ExactData<'_> {
    fn robin(&self, p: Point, normal: Point) -> Complex64 {
        impedance_trace(self.0, p, normal, self.0.kappa())
    }

    fn dirichlet(&self, p: Point, _: Point) -> Complex64 {
        self.0.value(p)
    }
}

/// Global index `K * p + l` of direction `l` on element `K`.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DofMap {
    pub p: usize,
    pub num_elements: usize,
}

impl DofMap {
    pub fn len(&self) -> usize {
        self.p * self.num_elements
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    pub fn index(&self, element: usize, direction: usize) -> usize {
        element * self.p + direction
    }

    pub fn element_direction(&self, index: usize) -> (usize, usize) {
        (index / self.p, index % self.p)
    }
}

#[derive(Debug, Clone)]
pub struct AssembledSystem {
    pub matrix: BlockSparseMatrix,
    pub rhs: Vec<Complex64>,
    pub dofs: DofMap,
}

impl AssembledSystem {
    pub fn dim(&self) -> usize {
        self.dofs.len()
    }

    /// Writes `row col re im` lines, a `<path>.dofs` sidecar with
    /// `index element direction` lines and a `<path>.rhs` sidecar with
    /// `index re im` lines.
    pub fn write_dump(&self, path: &Path) -> Result<(), AssemblyError> {
        let mut out = BufWriter::new(File::create(path)?);
        writeln!(out, "% {} {} {}", self.dim(), self.dim(), self.matrix.stored_entries())?;
        self.matrix.write_coordinate(&mut out)?;
        out.flush()?;
        let sidecar = |ext: &str| {
            let mut name = path.as_os_str().to_owned();
            name.push(ext);
            File::create(Path::new(&name)).map(BufWriter::new)
        };
        let mut out = sidecar(".dofs")?;
        writeln!(out, "index element direction")?;
        for idx in 0..self.dim() {
            let (k, l) = self.dofs.element_direction(idx);
            writeln!(out, "{idx} {k} {l}")?;
        }
        out.flush()?;
        let mut out = sidecar(".rhs")?;
        for (idx, v) in self.rhs.iter().enumerate() {
            writeln!(out, "{idx} {:e} {:e}", v.re, v.im)?;
        }
        out.flush()?;
        Ok(())
    }
}

/// Everything the forms need besides boundary data.
#[derive(Debug, Clone, Copy)]
pub struct AssemblyContext<'a> {
    pub mesh: &'a Mesh,
    pub bases: &'a [GpwBasisSet],
    pub field: &'a CoefficientField,
    pub kappa: f64,
    pub params: DgParameters,
    pub orders: QuadratureOrders,
}

impl<'a> AssemblyContext<'a> {
    pub fn new(
        mesh: &'a Mesh,
        bases: &'a [GpwBasisSet],
        field: &'a CoefficientField,
        kappa: f64,
        params: DgParameters,
    ) -> Result<Self, AssemblyError> {
        Self { mesh, bases, field, kappa, params, orders: QuadratureOrders::default() }.validated()
    }

    pub fn with_orders(self, orders: QuadratureOrders) -> Self {
        Self { orders, ..self }
    }

    fn validated(self) -> Result<Self, AssemblyError> {
        self.params.validate()?;
        if !(self.kappa > 0.0 && self.kappa.is_finite()) {
            return Err(AssemblyError::InvalidParameter(format!("kappa = {}", self.kappa)));
        }
        let ne = self.mesh.num_elements();
        if self.bases.len() != ne {
            return Err(AssemblyError::MissingBasis { expected: ne, found: self.bases.len() });
        }
        let p = self.bases.first().map_or(0, |b| b.len());
        for (index, b) in self.bases.iter().enumerate() {
            if b.element() != index {
                return Err(AssemblyError::BasisOrder { index, element: b.element() });
            }
            if b.len() != p {
                return Err(AssemblyError::DirectionMismatch { element: index, expected: p, found: b.len() });
            }
        }
        Ok(self)
    }

    pub fn p(&self) -> usize {
        self.bases.first().map_or(0, |b| b.len())
    }

    pub fn dofs(&self) -> DofMap {
        DofMap { p: self.p(), num_elements: self.mesh.num_elements() }
    }

    /// `kappa sqrt(max(1, |eps|))` at the centroid of `element`.
    fn local_wavenumber(&self, element: usize) -> f64 {
        let c = self.mesh.centroid(element);
        self.kappa * self.field.value(c[0], c[1]).abs().max(1.0).sqrt()
    }

    fn q(&self) -> usize {
        self.bases.first().map_or(1, |b| b.q())
    }

    pub(crate) fn element_rule_degree(&self, element: usize) -> usize {
        self.orders.triangle_degree(self.q(), self.local_wavenumber(element), self.mesh.diameter(element))
    }

    pub(crate) fn edge_rule_points(&self, edge: usize) -> usize {
        let e = &self.mesh.edges()[edge];
        let sides = std::iter::once(e.plus).chain(e.minus);
        let (k, h) =
            sides.fold((0.0f64, 0.0f64), |(k, h), t| (k.max(self.local_wavenumber(t)), h.max(self.mesh.diameter(t))));
        self.orders.edge_points(self.q(), k, h)
    }

    /// Triangle and edge rules for every element and edge.
    pub(crate) fn rules(&self) -> Result<RuleCache, AssemblyError> {
        let mut cache = RuleCache::default();
        for t in 0..self.mesh.num_elements() {
            let d = self.element_rule_degree(t);
            if let Entry::Vacant(slot) = cache.triangles.entry(d) {
                slot.insert(triangle_rule(d)?);
            }
            cache.element_degree.push(d);
        }
        for e in 0..self.mesh.edges().len() {
            let m = self.edge_rule_points(e);
            if let Entry::Vacant(slot) = cache.edges.entry(m) {
                slot.insert(gauss_edge(m)?);
            }
            cache.edge_points.push(m);
        }
        Ok(cache)
    }
}

#[derive(Debug, Default)]
pub(crate) struct RuleCache {
    triangles: BTreeMap<usize, TriangleRule>,
    edges: BTreeMap<usize, EdgeRule>,
    element_degree: Vec<usize>,
    edge_points: Vec<usize>,
}

impl RuleCache {
    pub(crate) fn element(&self, t: usize) -> &TriangleRule {
        &self.triangles[&self.element_degree[t]]
    }

    pub(crate) fn edge(&self, e: usize) -> &EdgeRule {
        &self.edges[&self.edge_points[e]]
    }
}

/// Which bilinear form is being assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum Form {
    Sesquilinear(FormVariant),
    Gram,
}

/// Coefficients of `c_uv u v* + c_ud u dv*/dn + c_du du/dn v* + c_dd du/dn dv*/dn`
/// on one edge, `n` the plus-side normal.
#[derive(Debug, Clone, Copy)]
struct EdgeKernel {
    uv: Complex64,
    ud: Complex64,
    du: Complex64,
    dd: Complex64,
}

/// Kernel for trial side `su` and test side `sv` (+1 plus, -1 minus).
fn edge_kernel(form: Form, kind: EdgeKind, su: f64, sv: f64, params: &DgParameters, kappa: f64) -> EdgeKernel {
    let DgParameters { alpha, beta, delta, .. } = *params;
    let ik = I * kappa;
    let c = |x: f64| Complex64::new(x, 0.0);
    let k = |uv: Complex64, ud: Complex64, du: Complex64, dd: Complex64| EdgeKernel { uv, ud, du, dd };
    match (form, kind) {
        (Form::Gram, EdgeKind::Interior) => k(c(kappa * alpha * su * sv), ZERO, ZERO, c(beta / kappa * su * sv)),
        (Form::Gram, EdgeKind::Robin) => k(c(kappa * (1.0 - delta)), ZERO, ZERO, c(delta / kappa)),
        (Form::Gram, EdgeKind::Dirichlet) => k(c(kappa * alpha), ZERO, ZERO, ZERO),
        (Form::Sesquilinear(variant), EdgeKind::Interior) => {
            let uv = ik * alpha * su * sv;
            let dd = -beta / ik * su * sv;
            let (ud, du) = match variant {
                FormVariant::Primal => (c(-0.5 * su), c(-0.5 * sv)),
                FormVariant::AdjointIbp => (c(0.5 * sv), c(-0.5 * sv)),
                FormVariant::PrimalIbp => (c(-0.5 * su), c(0.5 * su)),
            };
            k(uv, ud, du, dd)
        }
        (Form::Sesquilinear(variant), EdgeKind::Robin) => {
            let uv = ik * (1.0 - delta);
            let dd = -delta / ik;
            let (ud, du) = match variant {
                FormVariant::Primal => (c(-delta), c(-delta)),
                FormVariant::AdjointIbp => (c(1.0 - delta), c(-delta)),
                FormVariant::PrimalIbp => (c(-delta), c(1.0 - delta)),
            };
            k(uv, ud, du, dd)
        }
        (Form::Sesquilinear(variant), EdgeKind::Dirichlet) => {
            let uv = ik * alpha;
            let (ud, du) = match variant {
                FormVariant::Primal => (c(-1.0), c(-1.0)),
                FormVariant::AdjointIbp => (ZERO, c(-1.0)),
                FormVariant::PrimalIbp => (c(-1.0), ZERO),
            };
            k(uv, ud, du, ZERO)
        }
    }
}

/// Volume integrand for trial `u` and test `v`, given `L = Delta + kappa^2 eps`
/// applied to each and the weights `gamma / kappa^2`.
#[inline]
fn volume_kernel(
    form: Form,
    u: &GpwEval,
    lu: Complex64,
    v: &GpwEval,
    lv: Complex64,
    k2eps: f64,
    stab: f64,
) -> Complex64 {
    let stab_term = lu * lv.conj() * stab;
    match form {
        Form::Gram => stab_term,
        Form::Sesquilinear(variant) => {
            let base = match variant {
                FormVariant::Primal => {
                    u.gradient[0] * v.gradient[0].conj() + u.gradient[1] * v.gradient[1].conj()
                        - u.value * v.value.conj() * k2eps
                }
                FormVariant::AdjointIbp => -u.value * lv.conj(),
                FormVariant::PrimalIbp => -lu * v.value.conj(),
            };
            base + I * stab_term
        }
    }
}

/// Diagonal block of element `t` (row-major, row = test function).
fn element_block(ctx: &AssemblyContext, rules: &RuleCache, form: Form, t: usize) -> Vec<Complex64> {
    let p = ctx.p();
    let basis = &ctx.bases[t];
    let kappa2 = ctx.kappa * ctx.kappa;
    let stab = ctx.params.gamma(ctx.mesh.diameter(t)) / kappa2;
    let mut block = vec![ZERO; p * p];
    let mut evals = Vec::with_capacity(p);
    let mut ls = vec![ZERO; p];
    for (x, w) in rules.element(t).map(ctx.mesh.triangle_points(t)) {
        let k2eps = kappa2 * ctx.field.value(x[0], x[1]);
        basis.evaluate_into(x, &mut evals);
        for (l, e) in ls.iter_mut().zip(&evals) {
            *l = e.laplacian + e.value * k2eps;
        }
        for i in 0..p {
            for j in 0..p {
                block[i * p + j] += w * volume_kernel(form, &evals[j], ls[j], &evals[i], ls[i], k2eps, stab);
            }
        }
    }
    block
}

/// Blocks `(test element, trial element, block)` and load contributions of one edge.
struct EdgeContribution {
    blocks: Vec<(usize, usize, Vec<Complex64>)>,
    rhs: Option<(usize, Vec<Complex64>)>,
}

fn edge_contribution(
    ctx: &AssemblyContext,
    rules: &RuleCache,
    form: Form,
    data: Option<&dyn BoundarySource>,
    index: usize,
) -> EdgeContribution {
    let p = ctx.p();
    let edge = &ctx.mesh.edges()[index];
    let n = edge.normal;
    let [a, b] = ctx.mesh.edge_points(index);
    let sides: Vec<(usize, f64)> = std::iter::once((edge.plus, 1.0)).chain(edge.minus.map(|m| (m, -1.0))).collect();
    let mut blocks: Vec<Vec<Complex64>> = vec![vec![ZERO; p * p]; sides.len() * sides.len()];
    let kernels: Vec<EdgeKernel> = sides
        .iter()
        .flat_map(|&(_, sv)| sides.iter().map(move |&(_, su)| (sv, su)))
        .map(|(sv, su)| edge_kernel(form, edge.kind, su, sv, &ctx.params, ctx.kappa))
        .collect();
    let mut rhs = vec![ZERO; p];
    let mut values = vec![vec![ZERO; p]; sides.len()];
    let mut normals = vec![vec![ZERO; p]; sides.len()];
    let mut evals = Vec::with_capacity(p);
    let ik = I * ctx.kappa;
    for (x, w) in rules.edge(index).map(a, b) {
        for (s, &(t, _)) in sides.iter().enumerate() {
            ctx.bases[t].evaluate_into(x, &mut evals);
            for (l, e) in evals.iter().enumerate() {
                values[s][l] = e.value;
                normals[s][l] = e.normal_derivative(n);
            }
        }
        for sv in 0..sides.len() {
            for su in 0..sides.len() {
                let kern = kernels[sv * sides.len() + su];
                let block = &mut blocks[sv * sides.len() + su];
                for i in 0..p {
                    let (vc, dvc) = (values[sv][i].conj(), normals[sv][i].conj());
                    let row_u = kern.uv * vc + kern.ud * dvc;
                    let row_d = kern.du * vc + kern.dd * dvc;
                    for j in 0..p {
                        block[i * p + j] += w * (row_u * values[su][j] + row_d * normals[su][j]);
                    }
                }
            }
        }
        if let (Some(data), Form::Sesquilinear(_)) = (data, form) {
            let delta = ctx.params.delta;
            match edge.kind {
                EdgeKind::Robin => {
                    let g = data.robin(x, n);
                    for i in 0..p {
                        rhs[i] += w * g * (ik * (1.0 - delta) * values[0][i].conj() - delta * normals[0][i].conj());
                    }
                }
                EdgeKind::Dirichlet => {
                    let g = data.dirichlet(x, n);
                    for i in 0..p {
                        rhs[i] += w * g * (ik * ctx.params.alpha * values[0][i].conj() - normals[0][i].conj());
                    }
                }
                EdgeKind::Interior => {}
            }
        }
    }
    let mut out = Vec::with_capacity(blocks.len());
    for (k, block) in blocks.into_iter().enumerate() {
        let (sv, su) = (k / sides.len(), k % sides.len());
        out.push((sides[sv].0, sides[su].0, block));
    }
    let rhs = (edge.kind != EdgeKind::Interior && data.is_some()).then_some((edge.plus, rhs));
    EdgeContribution { blocks: out, rhs }
}

fn assemble_form(
    ctx: &AssemblyContext,
    form: Form,
    data: Option<&dyn BoundarySource>,
) -> Result<(BlockSparseMatrix, Vec<Complex64>), AssemblyError> {
    let rules = ctx.rules()?;
    let p = ctx.p();
    let mut matrix = BlockSparseMatrix::from_mesh(ctx.mesh, p);
    let element_blocks: Vec<Vec<Complex64>> =
        (0..ctx.mesh.num_elements()).into_par_iter().map(|t| element_block(ctx, &rules, form, t)).collect();
    let edge_parts: Vec<EdgeContribution> =
        (0..ctx.mesh.edges().len()).into_par_iter().map(|e| edge_contribution(ctx, &rules, form, data, e)).collect();
    // Sequential merge in a fixed order keeps results independent of threading.
    for (t, block) in element_blocks.iter().enumerate() {
        matrix.add_block(t, t, block);
    }
    let mut rhs = vec![ZERO; ctx.dofs().len()];
    for part in &edge_parts {
        for (row, col, block) in &part.blocks {
            matrix.add_block(*row, *col, block);
        }
        if let Some((t, values)) = &part.rhs {
            for (r, v) in rhs[t * p..(t + 1) * p].iter_mut().zip(values) {
                *r += v;
            }
        }
    }
    Ok((matrix, rhs))
}

/// Assembles `M[(K,l),(K',l')] = B_h(phi_{K',l'}, phi_{K,l})` and the load vector
/// `F(phi_{K,l})`.
pub fn assemble_system(ctx: &AssemblyContext, data: &dyn BoundarySource) -> Result<AssembledSystem, AssemblyError> {
    assemble_alternative(ctx, data, FormVariant::Primal)
}

/// Same system through an integration-by-parts variant of the form.
pub fn assemble_alternative(
    ctx: &AssemblyContext,
    data: &dyn BoundarySource,
    variant: FormVariant,
) -> Result<AssembledSystem, AssemblyError> {
    let (matrix, rhs) = assemble_form(ctx, Form::Sesquilinear(variant), Some(data))?;
    Ok(AssembledSystem { matrix, rhs, dofs: ctx.dofs() })
}

/// Gram matrix `G` with `x* G x = ||u_x||_DG^2`.
pub fn assemble_dg_gram(ctx: &AssemblyContext) -> Result<BlockSparseMatrix, AssemblyError> {
    Ok(assemble_form(ctx, Form::Gram, None)?.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::analytic::{make_exact, ExactProblem};
    use crate::geometry::{build_structured_mesh, refine_uniform, Rectangle, TriangulationPattern};
    use crate::gpw::build_basis_set;
    use rand::rngs::StdRng;
    use rand::{Rng, SeedableRng};

    fn mesh(cells: usize) -> Mesh {
        build_structured_mesh(Rectangle::symmetric_unit(), TriangulationPattern::Diagonal { nx: cells, ny: cells })
            .unwrap()
    }

    fn bases(mesh: &Mesh, field: &CoefficientField, kappa: f64, n: usize, q: usize) -> Vec<GpwBasisSet> {
        (0..mesh.num_elements()).map(|t| build_basis_set(field, t, mesh.centroid(t), kappa, n, q).unwrap()).collect()
    }

    /// Deterministic pseudo-random complex vector.
    fn random_vector(len: usize, seed: u64) -> Vec<Complex64> {
        let mut rng = StdRng::seed_from_u64(seed);
        (0..len).map(|_| Complex64::new(rng.gen_range(-0.5..0.5), rng.gen_range(-0.5..0.5))).collect()
    }

    fn quadratic(m: &BlockSparseMatrix, x: &[Complex64]) -> Complex64 {
        let y = m.matvec(x);
        x.iter().zip(&y).map(|(a, b)| a.conj() * b).sum()
    }

    #[test]
    fn parameters_validate() {
        assert!(DgParameters::default().validate().is_ok());
        assert!(DgParameters { delta: 1.0, ..Default::default() }.validate().is_err());
        assert!(DgParameters { alpha: 0.0, ..Default::default() }.validate().is_err());
        assert!(DgParameters::with_gamma(0.0, 0.0).validate().is_ok());
        assert!(DgParameters::with_gamma(-1.0, 0.0).validate().is_err());
        assert_eq!(DgParameters::with_gamma(2.0, 3.0).gamma(0.5), 0.25);
    }

    #[test]
    fn zero_data_gives_zero_rhs() {
        let m = mesh(2);
        let field = CoefficientField::airy();
        let b = bases(&m, &field, 5.0, 2, 3);
        let ctx = AssemblyContext::new(&m, &b, &field, 5.0, DgParameters::default()).unwrap();
        let sys = assemble_system(&ctx, &ZeroData).unwrap();
        assert!(sys.rhs.iter().all(|v| *v == ZERO));
        assert_eq!(sys.dim(), 8 * 5);
    }

    #[test]
    fn plane_wave_volume_diagonal_vanishes() {
        let m = mesh(1);
        let field = CoefficientField::constant(1.0);
        let b = bases(&m, &field, 1.0, 1, 1);
        let ctx = AssemblyContext::new(&m, &b, &field, 1.0, DgParameters::default()).unwrap();
        let rules = ctx.rules().unwrap();
        let block = element_block(&ctx, &rules, Form::Sesquilinear(FormVariant::Primal), 0);
        for l in 0..3 {
            assert!(block[l * 3 + l].norm() < 1e-14);
        }
    }

    #[test]
    fn stabilization_vanishes_for_constant_eps() {
        let m = mesh(2);
        let field = CoefficientField::constant(1.0);
        let b = bases(&m, &field, 4.0, 2, 1);
        let ctx = AssemblyContext::new(&m, &b, &field, 4.0, DgParameters::with_gamma(3.0, 0.0)).unwrap();
        let ctx0 = AssemblyContext::new(&m, &b, &field, 4.0, DgParameters::with_gamma(0.0, 0.0)).unwrap();
        let a = assemble_system(&ctx, &ZeroData).unwrap().matrix;
        let a0 = assemble_system(&ctx0, &ZeroData).unwrap().matrix;
        assert!(a.frobenius_distance(&a0) <= 1e-12 * a0.frobenius_norm());
        assert!(assemble_dg_gram(&ctx).unwrap().frobenius_distance(&assemble_dg_gram(&ctx0).unwrap()) < 1e-12);
    }

    #[test]
    fn coercivity_identity() {
        let m = mesh(2);
        let field = CoefficientField::airy();
        let kappa = 6.0;
        let b = bases(&m, &field, kappa, 2, 3);
        let ctx = AssemblyContext::new(&m, &b, &field, kappa, DgParameters::with_gamma(1.0, 1.0)).unwrap();
        let sys = assemble_system(&ctx, &ZeroData).unwrap();
        let gram = assemble_dg_gram(&ctx).unwrap();
        for seed in 0..20 {
            let x = random_vector(sys.dim(), seed);
            let bxx = quadratic(&sys.matrix, &x);
            let gxx = quadratic(&gram, &x);
            assert!(gxx.re > 0.0 && gxx.im.abs() < 1e-10 * gxx.re);
            assert!(bxx.im >= (1.0 - 1e-6) * gxx.re);
            assert!((bxx.im - gxx.re).abs() < 1e-8 * gxx.re);
        }
    }

    #[test]
    fn variants_agree() {
        let m = mesh(2);
        let field = CoefficientField::airy();
        let kappa = 3.0;
        let b = bases(&m, &field, kappa, 2, 3);
        let ctx = AssemblyContext::new(&m, &b, &field, kappa, DgParameters::default())
            .unwrap()
            .with_orders(QuadratureOrders::default().boosted(10));
        let exact = make_exact(ExactProblem::Airy { kappa }).unwrap();
        let data = ExactData(&exact);
        let primal = assemble_system(&ctx, &data).unwrap();
        for variant in [FormVariant::AdjointIbp, FormVariant::PrimalIbp] {
            let other = assemble_alternative(&ctx, &data, variant).unwrap();
            let rel = primal.matrix.frobenius_distance(&other.matrix) / primal.matrix.frobenius_norm();
            assert!(rel < 1e-10, "{variant:?}: {rel}");
            assert_eq!(primal.rhs, other.rhs);
        }
    }

    #[test]
    fn sparsity_follows_adjacency() {
        let m = refine_uniform(&mesh(1));
        let field = CoefficientField::constant(1.0);
        let b = bases(&m, &field, 2.0, 1, 1);
        let ctx = AssemblyContext::new(&m, &b, &field, 2.0, DgParameters::default()).unwrap();
        let sys = assemble_system(&ctx, &ZeroData).unwrap();
        for r in 0..m.num_elements() {
            for c in 0..m.num_elements() {
                let stored = sys.matrix.block(r, c).is_some();
                assert_eq!(stored, r == c || m.are_neighbors(r, c), "({r},{c})");
                if let Some(block) = sys.matrix.block(r, c) {
                    assert!(block.iter().any(|v| v.norm() > 0.0));
                }
            }
        }
    }

    #[test]
    fn exact_solution_satisfies_discrete_equations_for_plane_waves() {
        // A plane wave in a basis direction is reproduced exactly, so the load
        // vector equals M times its coefficient vector.
        let m = mesh(2);
        let field = CoefficientField::constant(1.0);
        let kappa = 3.0;
        let b = bases(&m, &field, kappa, 1, 1);
        let ctx = AssemblyContext::new(&m, &b, &field, kappa, DgParameters::default()).unwrap();
        let exact = make_exact(ExactProblem::PlaneWave { kappa, theta: 0.0 }).unwrap();
        let sys = assemble_system(&ctx, &ExactData(&exact)).unwrap();
        let mut x = vec![ZERO; sys.dim()];
        for t in 0..m.num_elements() {
            // phi_0 on element t equals exp(i kappa (x - x_t)).
            let c = m.centroid(t);
            x[sys.dofs.index(t, 0)] = (I * kappa * c[0]).exp();
        }
        let mx = sys.matrix.matvec(&x);
        let scale: f64 = sys.rhs.iter().map(|v| v.norm()).fold(0.0, f64::max);
        for (a, b) in mx.iter().zip(&sys.rhs) {
            assert!((a - b).norm() < 1e-11 * scale);
        }
    }

    #[test]
    fn dump_writes_coordinates_and_dofs() {
        let m = mesh(1);
        let field = CoefficientField::constant(1.0);
        let b = bases(&m, &field, 1.0, 1, 1);
        let ctx = AssemblyContext::new(&m, &b, &field, 1.0, DgParameters::default()).unwrap();
        let sys = assemble_system(&ctx, &ZeroData).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.txt");
        sys.write_dump(&path).unwrap();
        let text = std::fs::read_to_string(&path).unwrap();
        assert_eq!(text.lines().count(), 1 + 4 * 9);
        let dofs = std::fs::read_to_string(dir.path().join("m.txt.dofs")).unwrap();
        assert_eq!(dofs.lines().nth(4).unwrap(), "3 1 0");
        let rhs = std::fs::read_to_string(dir.path().join("m.txt.rhs")).unwrap();
        assert_eq!(rhs.lines().count(), sys.dim());
        assert_eq!(rhs.lines().next().unwrap(), "0 0e0 0e0");
    }

    #[test]
    fn rejects_bad_bases() {
        let m = mesh(1);
        let field = CoefficientField::constant(1.0);
        let b = bases(&m, &field, 1.0, 1, 1);
        assert!(matches!(
            AssemblyContext::new(&m, &b[..1], &field, 1.0, DgParameters::default()),
            Err(AssemblyError::MissingBasis { .. })
        ));
        let swapped = vec![b[1].clone(), b[0].clone()];
        assert!(AssemblyContext::new(&m, &swapped, &field, 1.0, DgParameters::default()).is_err());
    }
}
