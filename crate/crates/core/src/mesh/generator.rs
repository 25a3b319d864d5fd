//! Deterministic star-shaped interior mesher for the inverted exterior.
//!
//! The inverted surface is copied at radially graded scale factors
//! `1 = s0 > s1 > ... > sK`, consecutive copies are stitched prism-by-prism
//! (three tets each, diagonal rule keyed on global vertex indices so
//! adjacent prisms conform), and the innermost copy is coned to the origin
//! vertex, which compactifies infinity. No randomness anywhere: identical
//! inputs give bit-identical domains.

use nalgebra::{Point3, Vector3};

use super::{MeshError, SurfaceMesh, TetDomain};
use crate::kelvin::{sizing, InversionFrame, SizingField};

/// Derives the inversion frame for a surface: user origin or area-weighted
/// centroid, scale = bounding-sphere radius about it. The origin must be
/// strictly inside the object.
pub fn inversion_frame(
    surface: &SurfaceMesh,
    origin: Option<Point3<f64>>,
) -> Result<InversionFrame, MeshError> {
    let o = origin.unwrap_or_else(|| surface.area_weighted_centroid());
    if !surface.contains(o) {
        return Err(MeshError::OriginOutsideObject(o.x, o.y, o.z));
    }
    let scale = surface
        .vertices()
        .iter()
        .map(|v| (v - o).norm())
        .fold(0.0, f64::max);
    Ok(InversionFrame::new(o, scale)?)
}

fn inverted_vertices(
    surface: &SurfaceMesh,
    frame: &InversionFrame,
) -> Result<Vec<Point3<f64>>, MeshError> {
    surface
        .vertices()
        .iter()
        .map(|&p| Ok(Point3::from(frame.to_inverted(p)?)))
        .collect()
}

/// Shortest edge of the inverted surface; the default sizing floor is half
/// of this.
pub fn min_inverted_edge(surface: &SurfaceMesh, frame: &InversionFrame) -> Result<f64, MeshError> {
    let inv = inverted_vertices(surface, frame)?;
    let mut min = f64::INFINITY;
    for &[a, b, c] in surface.triangles() {
        let pa = inv[a as usize];
        let pb = inv[b as usize];
        let pc = inv[c as usize];
        min = min.min((pb - pa).norm()).min((pc - pb).norm()).min((pa - pc).norm());
    }
    Ok(min)
}

/// Meshes the inverted exterior of a star-shaped surface.
///
/// Preconditions: the inverted surface must be star-shaped about y = 0
/// (every triangle plane strictly separates the origin from the outside).
/// Errors with `SizingTooCoarse` when fewer than two shell copies fit.
pub fn generate_star_shaped(
    surface: &SurfaceMesh,
    frame: InversionFrame,
    sizing_field: SizingField,
) -> Result<TetDomain, MeshError> {
    let inv = inverted_vertices(surface, &frame)?;
    let n = inv.len();
    let triangles = surface.triangles();

    // Star-shape check: with the original winding, inverted triangle normals
    // point away from the origin, so the plane offset n . a must be
    // strictly positive for the kernel to contain y = 0.
    for (i, &[a, b, c]) in triangles.iter().enumerate() {
        let pa = inv[a as usize].coords;
        let pb = inv[b as usize].coords;
        let pc = inv[c as usize].coords;
        let nrm = (pb - pa).cross(&(pc - pa));
        if !(nrm.dot(&pa) > 1e-12 * nrm.norm()) {
            return Err(MeshError::NotStarShaped(i));
        }
    }

    // Greedy inward radii, stepped at the surface point of median radius:
    // s_{k+1} = s_k - sizing(s_k * y_ref) / r_ref. Stops when the remaining
    // gap is about one floor-length, which the cone absorbs.
    let mut radii: Vec<f64> = inv.iter().map(|p| p.coords.norm()).collect();
    radii.sort_by(f64::total_cmp);
    let r_ref = radii[n / 2];
    let step_at = |s: f64| sizing(Vector3::new(s * r_ref, 0.0, 0.0), &sizing_field) / r_ref;

    let mut scales = vec![1.0f64];
    let cone_stop = 1.5 * sizing_field.l_y_min;
    loop {
        let s_k = *scales.last().unwrap();
        let s_next = s_k - step_at(s_k);
        if s_next * r_ref <= cone_stop {
            break;
        }
        scales.push(s_next);
    }
    if scales.len() < 2 {
        return Err(MeshError::SizingTooCoarse(format!(
            "only {} shell(s) fit between the boundary and the origin cone; \
             decrease l_x or l_y_min",
            scales.len()
        )));
    }

    let layers = scales.len();
    let mut vertices: Vec<Point3<f64>> = Vec::with_capacity(layers * n + 1);
    for &s in &scales {
        vertices.extend(inv.iter().map(|p| Point3::from(p.coords * s)));
    }
    let origin_id = (layers * n) as u32;
    vertices.push(Point3::origin());

    let mut tets: Vec<[u32; 4]> = Vec::with_capacity(triangles.len() * (3 * layers - 2));
    for layer in 0..layers - 1 {
        let outer = (layer * n) as u32;
        let inner = ((layer + 1) * n) as u32;
        for &tri in triangles {
            let prism_tets = split_prism(tri, outer, inner);
            for t in prism_tets {
                tets.push(orient_positive(t, &vertices));
            }
        }
    }
    let innermost = ((layers - 1) * n) as u32;
    for &[a, b, c] in triangles {
        tets.push([origin_id, innermost + a, innermost + b, innermost + c]);
    }

    let boundary: Vec<(u32, u32)> = (0..n as u32).map(|j| (j, j)).collect();
    TetDomain::from_parts(vertices, tets, boundary, origin_id, frame, true)
}

/// Splits the prism over surface triangle `tri` between two shell layers
/// into three tets. `outer`/`inner` are the layers' base vertex offsets;
/// outer ids are always smaller. The diagonal of every quad face runs
/// through the quad's smallest global index, so the split of a quad is
/// decided identically from both prisms sharing it.
fn split_prism(tri: [u32; 3], outer: u32, inner: u32) -> [[u32; 4]; 3] {
    // Rotate so the triangle's smallest index leads; this puts the prism's
    // globally smallest vertex (an outer-layer one) at V1.
    let m = (0..3).min_by_key(|&i| tri[i]).unwrap();
    let (i, j, k) = (tri[m], tri[(m + 1) % 3], tri[(m + 2) % 3]);
    let (a_i, a_j, a_k) = (outer + i, outer + j, outer + k);
    let (b_i, b_j, b_k) = (inner + i, inner + j, inner + k);
    if j < k {
        [
            [a_i, a_j, a_k, b_k],
            [a_i, a_j, b_k, b_j],
            [a_i, b_j, b_k, b_i],
        ]
    } else {
        [
            [a_i, a_j, a_k, b_j],
            [a_i, b_j, a_k, b_k],
            [a_i, b_j, b_k, b_i],
        ]
    }
}

/// Vertex order within a tet is free; normalize to positive orientation.
fn orient_positive(t: [u32; 4], vertices: &[Point3<f64>]) -> [u32; 4] {
    let vol = super::signed_tet_volume(
        vertices[t[0] as usize],
        vertices[t[1] as usize],
        vertices[t[2] as usize],
        vertices[t[3] as usize],
    );
    if vol < 0.0 {
        [t[0], t[2], t[1], t[3]]
    } else {
        t
    }
}
