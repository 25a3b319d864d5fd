//! The queryable semantics-aware distance field.
//!
//! A [`Field`] bundles a tet domain of the inverted exterior, the solved
//! per-vertex values of the bounded factor V, and precomputed vertex
//! gradients. Queries run Algorithm 1: invert the point, locate its tet,
//! interpolate, and pull the gradient back through the inversion.
//!
//! Fields are immutable; semantic updates produce a new `Field` that shares
//! the domain and factorization, so in-flight queries stay valid.

use std::cell::RefCell;
use std::sync::Arc;

use nalgebra::{Matrix3, Point3, Vector3};
use thiserror::Error;

use crate::kelvin::{self, KelvinError};
use crate::mesh::{SurfaceMesh, TetDomain, NO_TET};
use crate::operators::{self, OperatorError, OperatorSet};
use crate::semantics::{SemanticState, SemanticsError};
use crate::solver::{self, FactorizationHandle, FieldSolution, SolverError};

/// Barycentric slack for point location; ties this close to a face resolve
/// into whichever tet the walk reaches first.
pub const BARY_TOL: f64 = 1e-12;

/// Boundary vertices closer to the compactification point than this cannot
/// carry Dirichlet data (V = U/G divides by |y|).
const DEGENERATE_RADIUS: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum FieldError {
    #[error("point lies outside the meshed inverted domain")]
    OutsideDomain,
    #[error("the field is undefined at the inversion origin")]
    QueryAtOrigin,
    #[error("boundary vertex {index} has inverted radius {radius:.3e}; the boundary may not touch the compactification point")]
    DegenerateBoundaryVertex { index: usize, radius: f64 },
    #[error("semantic state carries {got} values, expected {expected}")]
    StateMismatch { expected: usize, got: usize },
    #[error("field has no factorization (loaded from a bundle); call refactorize first")]
    NoFactorization,
    #[error("interpolated U = {value:.3e} in tet {tet} is not positive, log is undefined")]
    NonPositiveField { tet: usize, value: f64 },
    #[error("class-K parameter out of range: {0}")]
    BadClassK(String),
    #[error(transparent)]
    Kelvin(#[from] KelvinError),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Solver(#[from] SolverError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

/// Dirichlet data for the bounded factor: V = exp(-sigma) / |y| per
/// boundary vertex, ordered like the domain's boundary partition.
///
/// `state` is indexed by surface vertex id; the domain's boundary-to-surface
/// map supplies the permutation.
pub fn boundary_values(state: &SemanticState, domain: &TetDomain) -> Result<Vec<f64>, FieldError> {
    let ids = domain.boundary_vertex_ids();
    if state.len() != ids.len() {
        return Err(FieldError::StateMismatch {
            expected: ids.len(),
            got: state.len(),
        });
    }
    let mut values = Vec::with_capacity(ids.len());
    for (index, (&vid, &sid)) in ids
        .iter()
        .zip(domain.boundary_surface_ids())
        .enumerate()
    {
        let radius = domain.vertices()[vid as usize].coords.norm();
        if radius < DEGENERATE_RADIUS {
            return Err(FieldError::DegenerateBoundaryVertex { index, radius });
        }
        values.push((-state.sigma()[sid as usize]).exp() / radius);
    }
    Ok(values)
}

/// One exterior query: the field value, its gradient in the original
/// coordinates, and the tet to reuse as the next hint.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct QueryResult {
    /// Semantics-aware distance h = -ln(G * V).
    pub h: f64,
    /// Gradient of h with respect to the original (meter) coordinates.
    pub grad: Vector3<f64>,
    /// Enclosing tet; feed back as `hint` for nearby follow-up queries.
    pub tet_hint: u32,
    /// Always false here; inside points return [`QueryOutcome::InsideObject`]
    /// instead of a result. Kept for flat consumers of the record.
    pub inside_object: bool,
}

/// Gradient reconstruction used by a query.
///
/// The smoothed gradient is continuous across element faces, which barrier
/// conditions need; the per-tet gradient is the exact derivative of the
/// interpolated field inside one element, which finite-difference checks
/// need. Values of h are identical under both.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum GradientMode {
    /// Barycentric interpolation of the per-vertex volume-weighted
    /// gradients.
    #[default]
    Smoothed,
    /// Constant P1 gradient of the containing tet.
    PerTet,
}

/// Outcome of a query: a value in the meshed exterior, or the explicit
/// marker that the point is inside the object (where h is undefined).
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum QueryOutcome {
    Exterior(QueryResult),
    InsideObject,
}

impl QueryOutcome {
    pub fn is_inside(&self) -> bool {
        matches!(self, QueryOutcome::InsideObject)
    }

    pub fn result(&self) -> Option<&QueryResult> {
        match self {
            QueryOutcome::Exterior(r) => Some(r),
            QueryOutcome::InsideObject => None,
        }
    }
}

#[derive(Clone)]
struct SolverParts {
    ops: Arc<OperatorSet>,
    handle: Arc<FactorizationHandle>,
}

/// An immutable, queryable field. Cloning is cheap (shared internals).
#[derive(Clone)]
pub struct Field {
    pub(crate) domain: Arc<TetDomain>,
    parts: Option<SolverParts>,
    pub(crate) solution: Arc<FieldSolution>,
    pub(crate) vertex_grads: Arc<Vec<Vector3<f64>>>,
}

/// Solves the boundary-value problem for `state` and assembles gradients.
///
/// All parts must come from the same domain. `surface` pins the indexing of
/// the semantic state.
pub fn build_field(
    surface: &SurfaceMesh,
    domain: Arc<TetDomain>,
    ops: Arc<OperatorSet>,
    handle: Arc<FactorizationHandle>,
    state: SemanticState,
) -> Result<Field, FieldError> {
    if state.len() != surface.n_vertices() {
        return Err(FieldError::StateMismatch {
            expected: surface.n_vertices(),
            got: state.len(),
        });
    }
    let v_boundary = boundary_values(&state, &domain)?;
    let solution = solver::solve_boundary(&handle, &ops, &v_boundary, Some(state))?;
    let vertex_grads = operators::vertex_gradients(&domain, &solution.v_full)?;
    Ok(Field {
        domain,
        parts: Some(SolverParts { ops, handle }),
        solution: Arc::new(solution),
        vertex_grads: Arc::new(vertex_grads),
    })
}

impl Field {
    /// Reconstructs a query-only field from persisted parts; no
    /// factorization is attached until [`Field::refactorize`].
    pub(crate) fn from_loaded(
        domain: Arc<TetDomain>,
        solution: FieldSolution,
        vertex_grads: Vec<Vector3<f64>>,
    ) -> Field {
        Field {
            domain,
            parts: None,
            solution: Arc::new(solution),
            vertex_grads: Arc::new(vertex_grads),
        }
    }

    pub fn domain(&self) -> &TetDomain {
        &self.domain
    }

    pub fn solution(&self) -> &FieldSolution {
        &self.solution
    }

    /// Per-vertex gradients of V over the inverted domain.
    pub fn vertex_grads(&self) -> &[Vector3<f64>] {
        &self.vertex_grads
    }

    pub fn sigma(&self) -> Option<&SemanticState> {
        self.solution.sigma.as_ref()
    }

    /// Whether semantic updates are possible without refactorizing.
    pub fn can_update(&self) -> bool {
        self.parts.is_some()
    }

    /// Re-solves with new semantic data, reusing the factorization. The
    /// result shares the domain and factorization with `self`; queries on
    /// the old field remain valid.
    pub fn with_sigma(&self, state: SemanticState) -> Result<Field, FieldError> {
        let parts = self.parts.as_ref().ok_or(FieldError::NoFactorization)?;
        if state.len() != self.domain.boundary_vertex_ids().len() {
            return Err(FieldError::StateMismatch {
                expected: self.domain.boundary_vertex_ids().len(),
                got: state.len(),
            });
        }
        let v_boundary = boundary_values(&state, &self.domain)?;
        let solution = solver::solve_boundary(&parts.handle, &parts.ops, &v_boundary, Some(state))?;
        let vertex_grads = operators::vertex_gradients(&self.domain, &solution.v_full)?;
        Ok(Field {
            domain: self.domain.clone(),
            parts: self.parts.clone(),
            solution: Arc::new(solution),
            vertex_grads: Arc::new(vertex_grads),
        })
    }

    /// Assembles and factorizes the operators for a loaded field so that
    /// [`Field::with_sigma`] becomes available. No-op when already present.
    pub fn refactorize(&mut self) -> Result<(), FieldError> {
        if self.parts.is_some() {
            return Ok(());
        }
        let ops = Arc::new(operators::assemble_laplacian(&self.domain)?);
        let handle = Arc::new(solver::factorize(&ops)?);
        self.parts = Some(SolverParts { ops, handle });
        Ok(())
    }

    /// Algorithm-1 query at a point in the original coordinates.
    ///
    /// Far-field points need no special casing: they invert to a
    /// neighborhood of y = 0, which the origin cone always meshes.
    pub fn query(&self, x: Point3<f64>, hint: Option<u32>) -> Result<QueryOutcome, FieldError> {
        self.query_traced(x, hint).map(|(outcome, _)| outcome)
    }

    /// Like [`Field::query`], and also reports how many tets the point
    /// location examined (1 when the hint was already right).
    pub fn query_traced(
        &self,
        x: Point3<f64>,
        hint: Option<u32>,
    ) -> Result<(QueryOutcome, usize), FieldError> {
        self.query_with(x, hint, GradientMode::Smoothed)
    }

    /// [`Field::query_traced`] with an explicit gradient reconstruction.
    pub fn query_with(
        &self,
        x: Point3<f64>,
        hint: Option<u32>,
        mode: GradientMode,
    ) -> Result<(QueryOutcome, usize), FieldError> {
        let frame = self.domain.frame();
        let q = frame.normalize(x);
        let y = match kelvin::invert(q) {
            Ok(y) => y,
            Err(KelvinError::DegeneratePoint { .. }) => return Err(FieldError::QueryAtOrigin),
            Err(e) => return Err(e.into()),
        };
        let (tet, steps) = match locate_with_steps(&self.domain, y, hint) {
            Ok(t) => t,
            // The inverted mesh fills the whole region enclosed by the
            // inverted surface, so the only way out is through it: x is
            // inside the object.
            Err(FieldError::OutsideDomain) => return Ok((QueryOutcome::InsideObject, 0)),
            Err(e) => return Err(e),
        };

        let verts = self.domain.tets()[tet as usize];
        let p = self.domain.tet_points(tet as usize);
        let lambda = barycentric(&p, y);
        let mut v = 0.0f64;
        for (i, &vid) in verts.iter().enumerate() {
            v += lambda[i] * self.solution.v_full[vid as usize];
        }
        let grad_v = match mode {
            GradientMode::Smoothed => {
                let mut g = Vector3::zeros();
                for (i, &vid) in verts.iter().enumerate() {
                    g += lambda[i] * self.vertex_grads[vid as usize];
                }
                g
            }
            GradientMode::PerTet => {
                operators::tet_gradient(&self.domain, tet as usize, &self.solution.v_full)
            }
        };

        let g = y.norm();
        let u = g * v;
        if !(u > 0.0) {
            return Err(FieldError::NonPositiveField {
                tet: tet as usize,
                value: u,
            });
        }
        let h = -u.ln();

        // grad_y h = -(V y/|y| + G grad V) / U, pulled back through the
        // inversion Jacobian and the frame scale.
        let grad_y = -(v * (y / g) + g * grad_v) / u;
        let j = kelvin::invert_jacobian(q)?;
        let grad = (j.transpose() * grad_y) / frame.scale;

        Ok((
            QueryOutcome::Exterior(QueryResult {
                h,
                grad,
                tet_hint: tet,
                inside_object: false,
            }),
            steps,
        ))
    }
}

/// Barycentric coordinates of `y` with respect to tet corners `p`.
fn barycentric(p: &[Point3<f64>; 4], y: Vector3<f64>) -> [f64; 4] {
    let m = Matrix3::from_columns(&[p[1] - p[0], p[2] - p[0], p[3] - p[0]]);
    match m.try_inverse() {
        Some(mi) => {
            let l = mi * (y - p[0].coords);
            [1.0 - l.x - l.y - l.z, l.x, l.y, l.z]
        }
        // Degenerate tets cannot enter a validated domain; treat as a miss.
        None => [f64::NEG_INFINITY; 4],
    }
}

thread_local! {
    /// Epoch-stamped visited marks for the locate walk: grown once per
    /// thread, never cleared, so a hinted query stays allocation-free.
    static VISITED: RefCell<(Vec<u32>, u32)> = const { RefCell::new((Vec::new(), 0)) };
}

/// Finds a tet containing `y` (all barycentrics >= -1e-12).
///
/// Walks face-adjacencies from the hint (or from the origin tet), stepping
/// through the face of the most negative coordinate, visiting each tet at
/// most once. A walk that leaves through a boundary face or closes a loop
/// falls back to a brute-force scan: the domain is star-shaped, not convex,
/// so a boundary hit alone does not prove the point is outside.
pub fn locate(domain: &TetDomain, y: Vector3<f64>, hint: Option<u32>) -> Result<u32, FieldError> {
    locate_with_steps(domain, y, hint).map(|(t, _)| t)
}

/// [`locate`], also counting the tets examined (walk plus any brute-force
/// fallback prefix). A correct hint costs exactly one step.
pub fn locate_with_steps(
    domain: &TetDomain,
    y: Vector3<f64>,
    hint: Option<u32>,
) -> Result<(u32, usize), FieldError> {
    let n = domain.n_tets();
    let start = hint
        .filter(|&h| (h as usize) < n)
        .unwrap_or_else(|| domain.origin_tet());

    // Points beyond every surface vertex radius are outside for sure; skip
    // the walk and the scan.
    if y.norm() > domain.max_boundary_radius() * (1.0 + 1e-9) {
        return Err(FieldError::OutsideDomain);
    }

    let mut steps = 0usize;
    let walked = VISITED.with(|cell| {
        let (marks, epoch) = &mut *cell.borrow_mut();
        if marks.len() < n {
            marks.resize(n, 0);
        }
        *epoch = epoch.wrapping_add(1);
        if *epoch == 0 {
            marks.fill(0);
            *epoch = 1;
        }

        let mut t = start;
        loop {
            marks[t as usize] = *epoch;
            steps += 1;
            let p = domain.tet_points(t as usize);
            let lambda = barycentric(&p, y);
            let mut worst = 0usize;
            for k in 1..4 {
                if lambda[k] < lambda[worst] {
                    worst = k;
                }
            }
            if lambda[worst] >= -BARY_TOL {
                return Some(t);
            }
            let next = domain.neighbors()[t as usize][worst];
            if next == NO_TET || marks[next as usize] == *epoch {
                return None;
            }
            t = next;
        }
    });
    if let Some(t) = walked {
        return Ok((t, steps));
    }

    for t in 0..n as u32 {
        steps += 1;
        let p = domain.tet_points(t as usize);
        let lambda = barycentric(&p, y);
        if lambda.iter().all(|&l| l >= -BARY_TOL) {
            return Ok((t, steps));
        }
    }
    Err(FieldError::OutsideDomain)
}

/// Class-K comparison functions admitted by the CBF check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum ClassK {
    /// alpha(h) = k * h.
    Linear { k: f64 },
    /// alpha(h) = k * sign(h) * |h|^p.
    Power { k: f64, p: f64 },
}

impl ClassK {
    pub fn linear(k: f64) -> Result<Self, FieldError> {
        if !(k > 0.0) || !k.is_finite() {
            return Err(FieldError::BadClassK(format!("linear gain k = {k}, need k > 0")));
        }
        Ok(ClassK::Linear { k })
    }

    pub fn power(k: f64, p: f64) -> Result<Self, FieldError> {
        if !(k > 0.0) || !k.is_finite() || !(p > 0.0) || !p.is_finite() {
            return Err(FieldError::BadClassK(format!(
                "power law k = {k}, p = {p}, need both > 0"
            )));
        }
        Ok(ClassK::Power { k, p })
    }

    pub fn eval(&self, h: f64) -> f64 {
        match *self {
            ClassK::Linear { k } => k * h,
            ClassK::Power { k, p } => k * h.signum() * h.abs().powf(p),
        }
    }
}

/// CBF safety check at one state: margin = grad . xdot - alpha(h).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CbfReport {
    pub h: f64,
    pub hdot: f64,
    pub margin: f64,
    pub safe: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum CbfOutcome {
    Exterior(CbfReport),
    InsideObject,
}

/// Evaluates the control-barrier condition hdot >= alpha(h) at `x` moving
/// with `xdot`. The sigma-rate term is dropped (quasi-static semantics).
pub fn cbf_margin(
    field: &Field,
    x: Point3<f64>,
    xdot: Vector3<f64>,
    alpha: &ClassK,
    hint: Option<u32>,
) -> Result<CbfOutcome, FieldError> {
    match field.query(x, hint)? {
        QueryOutcome::InsideObject => Ok(CbfOutcome::InsideObject),
        QueryOutcome::Exterior(r) => {
            let hdot = r.grad.dot(&xdot);
            let margin = hdot - alpha.eval(r.h);
            Ok(CbfOutcome::Exterior(CbfReport {
                h: r.h,
                hdot,
                margin,
                safe: margin >= 0.0,
            }))
        }
    }
}
