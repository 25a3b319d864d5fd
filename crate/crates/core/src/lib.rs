//! Semantics-aware distance fields on unbounded exterior domains.
//!
//! The exterior of a closed surface is pulled through the Kelvin inversion
//! `y = q / |q|^2` into a bounded star-shaped domain, a single Laplace
//! stiffness matrix is assembled and factorized there, and per-vertex
//! semantic offsets enter only through the Dirichlet boundary vector. Each
//! semantic update is one sparse triangular re-solve; queries evaluate
//! `h = -ln(G * V)` with `G(y) = |y|` plus its gradient pulled back through
//! the inversion Jacobian.
//!
//! Module map:
//! - [`kelvin`]: the inversion map, its Jacobian, the behavior function, and
//!   the radially graded sizing field.
//! - [`mesh`]: surface ingestion and validation, tet-mesh ingestion, the
//!   star-shaped shell generator, and point containment.
//! - [`operators`]: cotangent Laplacian assembly, interior/boundary blocks,
//!   and volume-weighted vertex gradients.
//! - [`solver`]: sparse Cholesky factorization of the interior block and
//!   boundary-driven re-solves.
//! - [`semantics`]: per-vertex semantic offsets and the tanh contact profile.
//! - [`field`]: boundary lift, field construction, point location, queries,
//!   and barrier margins.
//! - [`persist`]: binary field bundles and legacy VTK grid export.
//! - [`cli`]: the `sadf` command-line front end.

pub mod cli;
pub mod field;
pub mod kelvin;
pub mod mesh;
pub mod operators;
pub mod persist;
pub mod semantics;
pub mod solver;

pub use field::{
    boundary_values, build_field, cbf_margin, CbfOutcome, CbfReport, ClassK, Field, FieldError,
    GradientMode, QueryOutcome, QueryResult,
};
pub use kelvin::{InversionFrame, KelvinError, SizingField};
pub use mesh::{
    generate_star_shaped, inversion_frame, load_surface, load_tet_mesh, min_inverted_edge,
    MeshError, MeshStats, SurfaceFormat, SurfaceMesh, TetDomain, TetMeshFormat,
};
pub use operators::{assemble_laplacian, vertex_gradients, OperatorError, OperatorSet};
pub use persist::{export_grid, load_bundle, save_bundle, GridSpec, PersistError};
pub use semantics::{
    sigma_profile, SemanticProfile, SemanticState, SemanticsError, SigmaConfig, SigmaSource,
};
pub use solver::{factorize, solve_boundary, FactorizationHandle, FieldSolution, SolverError};

pub use nalgebra as na;

/// Any error the pipeline can produce, one variant per module.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error(transparent)]
    Kelvin(#[from] kelvin::KelvinError),
    #[error(transparent)]
    Mesh(#[from] mesh::MeshError),
    #[error(transparent)]
    Operator(#[from] operators::OperatorError),
    #[error(transparent)]
    Solver(#[from] solver::SolverError),
    #[error(transparent)]
    Semantics(#[from] semantics::SemanticsError),
    #[error(transparent)]
    Field(#[from] field::FieldError),
    #[error(transparent)]
    Persist(#[from] persist::PersistError),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
}
