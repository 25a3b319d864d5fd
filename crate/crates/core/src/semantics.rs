//! Per-vertex semantic values and the descriptors that produce them.
//!
//! A [`SemanticState`] assigns one scalar sigma to each surface vertex:
//! positive where contact is allowed, non-positive where it is forbidden.
//! The state is indexed by *surface* vertex id; the mapping onto a tet
//! domain's boundary partition happens in [`crate::field::boundary_values`].

use nalgebra::{Point3, Vector3};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::mesh::SurfaceMesh;

/// Largest admissible |sigma|. Beyond this, exp(-sigma) leaves the range in
/// which boundary data remains meaningfully resolvable in f64.
pub const SIGMA_LIMIT: f64 = 20.0;

/// Unit-axis tolerance for [`SemanticProfile`].
const AXIS_TOL: f64 = 1e-12;

#[derive(Debug, Error)]
pub enum SemanticsError {
    #[error("sigma[{index}] = {value} is outside |sigma| <= {SIGMA_LIMIT} or not finite")]
    SigmaOutOfRange { index: usize, value: f64 },
    #[error("semantic table holds {got} values but the surface has {expected} vertices")]
    LengthMismatch { expected: usize, got: usize },
    #[error("longitudinal axis has norm {0}, expected a unit vector")]
    AxisNotUnit(f64),
    #[error("transition distance d0 = {0} must be non-negative")]
    NegativeTransition(f64),
}

/// How a [`SemanticState`] was produced. Stored alongside the values so
/// saved bundles and manifests can report their provenance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum SigmaSource {
    Constant(f64),
    Table,
    TanhProfile(SemanticProfile),
}

/// One sigma value per surface vertex. Immutable once built.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SemanticState {
    sigma: Vec<f64>,
    source: SigmaSource,
}

impl SemanticState {
    /// Validates every value: finite and |sigma| <= [`SIGMA_LIMIT`].
    pub fn new(sigma: Vec<f64>, source: SigmaSource) -> Result<Self, SemanticsError> {
        for (index, &value) in sigma.iter().enumerate() {
            if !value.is_finite() || value.abs() > SIGMA_LIMIT {
                return Err(SemanticsError::SigmaOutOfRange { index, value });
            }
        }
        Ok(Self { sigma, source })
    }

    pub fn constant(value: f64, n_vertices: usize) -> Result<Self, SemanticsError> {
        Self::new(vec![value; n_vertices], SigmaSource::Constant(value))
    }

    pub fn from_table(values: Vec<f64>) -> Result<Self, SemanticsError> {
        Self::new(values, SigmaSource::Table)
    }

    pub fn sigma(&self) -> &[f64] {
        &self.sigma
    }

    pub fn source(&self) -> &SigmaSource {
        &self.source
    }

    pub fn len(&self) -> usize {
        self.sigma.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sigma.is_empty()
    }
}

/// Longitudinal tanh profile: sigma(x) = tanh(|e_l . x| - d0) * sigma_nom,
/// evaluated in the original (un-inverted) coordinates.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SemanticProfile {
    /// Unit longitudinal axis.
    pub e_l: Vector3<f64>,
    /// Transition location along the axis, meters, non-negative.
    pub d0: f64,
    /// Nominal value the profile saturates to.
    pub sigma_nom: f64,
}

impl SemanticProfile {
    /// |e_l| must be 1 within 1e-12, d0 >= 0, and |sigma_nom| within
    /// [`SIGMA_LIMIT`] so every produced state is valid (tanh is bounded).
    pub fn new(e_l: Vector3<f64>, d0: f64, sigma_nom: f64) -> Result<Self, SemanticsError> {
        let norm = e_l.norm();
        if !norm.is_finite() || (norm - 1.0).abs() > AXIS_TOL {
            return Err(SemanticsError::AxisNotUnit(norm));
        }
        if !(d0 >= 0.0) {
            return Err(SemanticsError::NegativeTransition(d0));
        }
        if !sigma_nom.is_finite() || sigma_nom.abs() > SIGMA_LIMIT {
            return Err(SemanticsError::SigmaOutOfRange {
                index: 0,
                value: sigma_nom,
            });
        }
        Ok(Self { e_l, d0, sigma_nom })
    }
}

/// Evaluates a longitudinal profile at every surface vertex.
pub fn sigma_profile(surface: &SurfaceMesh, profile: &SemanticProfile) -> SemanticState {
    sigma_profile_at(surface.vertices(), profile)
}

/// [`sigma_profile`] over bare positions, for callers that carry vertex
/// coordinates without a full surface mesh (e.g. re-solving a bundle).
pub fn sigma_profile_at(positions: &[Point3<f64>], profile: &SemanticProfile) -> SemanticState {
    let sigma = positions
        .iter()
        .map(|v| (profile.e_l.dot(&v.coords).abs() - profile.d0).tanh() * profile.sigma_nom)
        .collect();
    // tanh in (-1, 1) keeps |sigma| < |sigma_nom| <= SIGMA_LIMIT.
    SemanticState::new(sigma, SigmaSource::TanhProfile(*profile))
        .expect("profile bounds keep sigma in range")
}

/// Semantic configuration file schema, a tagged union on `"mode"`:
/// `{"mode": "constant", "sigma_nom": s}`, `{"mode": "table", "values":
/// [...]}`, or `{"mode": "tanh_profile", "sigma_nom": s, "d0": d, "e_l":
/// [x,y,z]}`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "mode", rename_all = "snake_case", deny_unknown_fields)]
pub enum SigmaConfig {
    Constant {
        sigma_nom: f64,
    },
    Table {
        values: Vec<f64>,
    },
    TanhProfile {
        sigma_nom: f64,
        d0: f64,
        e_l: [f64; 3],
    },
}

impl SigmaConfig {
    /// Instantiates the state for a concrete surface.
    pub fn build(&self, surface: &SurfaceMesh) -> Result<SemanticState, SemanticsError> {
        self.build_at(surface.vertices())
    }

    /// Instantiates the state for bare vertex positions in surface order.
    pub fn build_at(&self, positions: &[Point3<f64>]) -> Result<SemanticState, SemanticsError> {
        match self {
            SigmaConfig::Constant { sigma_nom } => {
                SemanticState::constant(*sigma_nom, positions.len())
            }
            SigmaConfig::Table { values } => {
                if values.len() != positions.len() {
                    return Err(SemanticsError::LengthMismatch {
                        expected: positions.len(),
                        got: values.len(),
                    });
                }
                SemanticState::from_table(values.clone())
            }
            SigmaConfig::TanhProfile {
                sigma_nom,
                d0,
                e_l,
            } => {
                let profile =
                    SemanticProfile::new(Vector3::new(e_l[0], e_l[1], e_l[2]), *d0, *sigma_nom)?;
                Ok(sigma_profile_at(positions, &profile))
            }
        }
    }
}
