//! Kelvin inversion: the sphere map `y = q / |q|^2`, its Jacobian, the
//! behavior function `G(y) = |y|`, and the radially graded sizing field.
//!
//! All maps operate in normalized coordinates `q = (p - origin) / scale`
//! produced by an [`InversionFrame`]. The map is an involution, so the same
//! formula carries points both ways between the exterior and the inverted
//! domain.

use nalgebra::{Matrix3, Point3, Vector3};

/// Points closer to the inversion center than this are rejected.
pub const DEGENERATE_EPS: f64 = 1e-12;

#[derive(Debug, thiserror::Error)]
pub enum KelvinError {
    /// `|q| < 1e-12`: the inversion blows up at its center.
    #[error("point within {DEGENERATE_EPS:e} of the inversion center (|q| = {norm:e})")]
    DegeneratePoint { norm: f64 },
    /// Frame scale must be strictly positive and finite.
    #[error("inversion frame scale must be positive and finite, got {0}")]
    BadScale(f64),
}

/// Sphere inversion `q -> q / |q|^2` in normalized coordinates.
///
/// Involution: `invert(invert(q)) = q`. Norm reciprocity:
/// `|invert(q)| * |q| = 1`. Fixed points on the unit sphere.
pub fn invert(q: Vector3<f64>) -> Result<Vector3<f64>, KelvinError> {
    let n2 = q.norm_squared();
    if !(n2 > DEGENERATE_EPS * DEGENERATE_EPS) || !n2.is_finite() {
        return Err(KelvinError::DegeneratePoint { norm: n2.sqrt() });
    }
    Ok(q / n2)
}

/// Jacobian of [`invert`] at `q`:
/// `J = (I * |q|^2 - 2 q q^T) / |q|^4`.
///
/// Symmetric, `det J = -1 / |q|^6`, and its own inverse evaluated at the
/// image point: `J(q) = J(invert(q))^{-1}`.
pub fn invert_jacobian(q: Vector3<f64>) -> Result<Matrix3<f64>, KelvinError> {
    let n2 = q.norm_squared();
    if !(n2 > DEGENERATE_EPS * DEGENERATE_EPS) || !n2.is_finite() {
        return Err(KelvinError::DegeneratePoint { norm: n2.sqrt() });
    }
    let n4 = n2 * n2;
    let mut j = Matrix3::identity() / n2;
    j -= 2.0 * q * q.transpose() / n4;
    Ok(j)
}

/// Behavior function `G(y) = |y|` of the Kelvin transform.
///
/// The exterior solution factors as `U = G * V` with `V` the bounded
/// interior solution; `G` carries the `1/|x|` decay at infinity.
pub fn behavior(y: Vector3<f64>) -> f64 {
    y.norm()
}

/// Target edge lengths for the inverted domain.
///
/// A uniform exterior resolution `l_x` pulls back to `|y|^2 * l_x` under the
/// inversion; `l_y_min` keeps the element count finite near the origin
/// (which is the image of infinity).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SizingField {
    /// Desired edge length in the physical exterior, normalized units.
    pub l_x: f64,
    /// Floor on inverted-domain edge length near the origin.
    pub l_y_min: f64,
}

impl SizingField {
    pub fn new(l_x: f64, l_y_min: f64) -> Self {
        assert!(l_x > 0.0 && l_y_min > 0.0, "sizing lengths must be positive");
        SizingField { l_x, l_y_min }
    }

    /// Default floor: half the shortest inverted surface edge, so the inner
    /// shells never get finer than the boundary tessellation they copy.
    pub fn with_default_floor(l_x: f64, min_inverted_edge: f64) -> Self {
        Self::new(l_x, 0.5 * min_inverted_edge)
    }
}

/// Local target edge length at `y` in the inverted domain:
/// `max(|y|^2 * l_x, l_y_min)`. Monotone in `|y|`.
pub fn sizing(y: Vector3<f64>, field: &SizingField) -> f64 {
    (y.norm_squared() * field.l_x).max(field.l_y_min)
}

/// Normalization carrying physical points into the unit-scale frame the
/// inversion operates in: `q = (p - origin) / scale`.
///
/// `origin` must be strictly inside the object so that the object exterior
/// maps into a bounded neighborhood of `q`-space infinity; `scale` is the
/// bounding-sphere radius about `origin`, making `|q| <= 1` on the surface.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct InversionFrame {
    pub origin: Point3<f64>,
    pub scale: f64,
}

impl InversionFrame {
    pub fn new(origin: Point3<f64>, scale: f64) -> Result<Self, KelvinError> {
        if !(scale > 0.0) || !scale.is_finite() {
            return Err(KelvinError::BadScale(scale));
        }
        Ok(InversionFrame { origin, scale })
    }

    /// `q = (p - origin) / scale`.
    pub fn normalize(&self, p: Point3<f64>) -> Vector3<f64> {
        (p - self.origin) / self.scale
    }

    /// `p = origin + scale * q`.
    pub fn denormalize(&self, q: Vector3<f64>) -> Point3<f64> {
        self.origin + self.scale * q
    }

    /// Physical point to inverted domain: `y = invert((p - origin) / scale)`.
    pub fn to_inverted(&self, p: Point3<f64>) -> Result<Vector3<f64>, KelvinError> {
        invert(self.normalize(p))
    }

    /// Inverted point back to physical space; inverse of [`Self::to_inverted`].
    pub fn from_inverted(&self, y: Vector3<f64>) -> Result<Point3<f64>, KelvinError> {
        Ok(self.denormalize(invert(y)?))
    }
}
