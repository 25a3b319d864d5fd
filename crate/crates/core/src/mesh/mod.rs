//! Surface and tetrahedral meshes: ingestion, validation, the star-shaped
//! interior generator, and boundary/interior bookkeeping.
//!
//! Two mesh sources feed the pipeline: external tet meshes (arbitrary genus)
//! ingested by [`load_tet_mesh`], and the built-in shell generator
//! [`generate_star_shaped`] that meshes the inverted exterior of star-shaped
//! surfaces with zero external tooling. Parsers and validators reject, never
//! repair.

mod generator;
mod io;
pub mod shapes;

pub use generator::{generate_star_shaped, inversion_frame, min_inverted_edge};
pub use io::{load_surface, load_tet_mesh, SurfaceFormat, TetMeshFormat};

use nalgebra::{Point3, Vector3};
use std::collections::HashMap;

use crate::kelvin::{InversionFrame, KelvinError};

/// Minimum admissible tet volume, normalized units.
pub const MIN_TET_VOLUME: f64 = 1e-16;
/// Minimum admissible triangle area, normalized units.
pub const MIN_TRIANGLE_AREA: f64 = 1e-14;
/// The compactification vertex must sit this close to y = 0.
pub const ORIGIN_VERTEX_TOL: f64 = 1e-12;
/// Coordinate tolerance when matching external boundary vertices against the
/// inverted surface (double-precision file round-trip slack).
pub const BOUNDARY_MATCH_TOL: f64 = 1e-9;

#[derive(Debug, thiserror::Error)]
pub enum MeshError {
    #[error("{path}:{line}: {msg}")]
    ParseError { path: String, line: usize, msg: String },
    #[error("edge ({0}, {1}) is shared by {2} triangles, expected 2")]
    NotWatertight(u32, u32, usize),
    #[error("inconsistent or inward orientation: {0}")]
    InvertedOrientation(String),
    #[error("triangle {0} is degenerate (area {1:e})")]
    DegenerateTriangle(usize, f64),
    #[error("vertex index {index} out of bounds ({n_vertices} vertices)")]
    BadIndex { index: u32, n_vertices: usize },
    #[error("vertex {0} is not referenced by any cell")]
    UnreferencedVertex(u32),
    #[error("inversion origin ({0}, {1}, {2}) is not strictly inside the surface")]
    OriginOutsideObject(f64, f64, f64),
    #[error("inverted surface is not star-shaped about the origin (triangle {0})")]
    NotStarShaped(usize),
    #[error("sizing too coarse: {0}")]
    SizingTooCoarse(String),
    #[error("boundary mismatch: {0}")]
    BoundaryMismatch(String),
    #[error("tet {index} has non-positive volume {volume:e}")]
    NegativeVolumeTet { index: usize, volume: f64 },
    #[error("no vertex within {ORIGIN_VERTEX_TOL:e} of y = 0")]
    MissingOriginVertex,
    #[error("face ({0}, {1}, {2}) is shared by more than two tets")]
    NonManifoldFace(u32, u32, u32),
    #[error(transparent)]
    Kelvin(#[from] KelvinError),
    #[error("{path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

/// Closed, consistently outward-oriented triangle surface in physical
/// coordinates (meters).
///
/// Validated on construction: watertight (every edge shared by exactly two
/// triangles with opposite directions), globally outward (positive signed
/// volume), no degenerate triangles.
#[derive(Debug, Clone)]
pub struct SurfaceMesh {
    vertices: Vec<Point3<f64>>,
    triangles: Vec<[u32; 3]>,
}

impl SurfaceMesh {
    pub fn new(vertices: Vec<Point3<f64>>, triangles: Vec<[u32; 3]>) -> Result<Self, MeshError> {
        let n = vertices.len();
        for tri in &triangles {
            for &v in tri {
                if v as usize >= n {
                    return Err(MeshError::BadIndex { index: v, n_vertices: n });
                }
            }
        }

        // Degeneracy threshold is relative to the object's own size so the
        // check is frame-independent.
        let center = vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / n.max(1) as f64;
        let scale = vertices
            .iter()
            .map(|p| (p.coords - center).norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);
        for (i, &[a, b, c]) in triangles.iter().enumerate() {
            if a == b || b == c || a == c {
                return Err(MeshError::DegenerateTriangle(i, 0.0));
            }
            let area = triangle_area(&vertices, [a, b, c]);
            if !(area > MIN_TRIANGLE_AREA * scale * scale) {
                return Err(MeshError::DegenerateTriangle(i, area / (scale * scale)));
            }
        }

        // Watertight and consistently wound: every directed edge appears
        // exactly once and its reverse exactly once.
        let mut directed: HashMap<(u32, u32), u32> = HashMap::with_capacity(triangles.len() * 3);
        for &[a, b, c] in &triangles {
            for (s, t) in [(a, b), (b, c), (c, a)] {
                let slot = directed.entry((s, t)).or_insert(0);
                *slot += 1;
                if *slot > 1 {
                    return Err(MeshError::InvertedOrientation(format!(
                        "directed edge ({s}, {t}) appears twice; neighboring triangles disagree on winding"
                    )));
                }
            }
        }
        for (&(s, t), _) in &directed {
            if !directed.contains_key(&(t, s)) {
                let count = directed.get(&(s, t)).copied().unwrap_or(0) as usize;
                return Err(MeshError::NotWatertight(s, t, count));
            }
        }

        let mesh = SurfaceMesh { vertices, triangles };
        let vol = mesh.signed_volume();
        if !(vol > 0.0) {
            return Err(MeshError::InvertedOrientation(format!(
                "signed volume {vol:e} is not positive; normals point inward"
            )));
        }
        Ok(mesh)
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn triangles(&self) -> &[[u32; 3]] {
        &self.triangles
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_triangles(&self) -> usize {
        self.triangles.len()
    }

    /// Enclosed volume by the divergence theorem; positive for outward
    /// orientation.
    pub fn signed_volume(&self) -> f64 {
        // Summing about the vertex mean keeps the triple products small.
        let center = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, p| acc + p.coords)
            / self.vertices.len() as f64;
        let mut six_v = 0.0;
        for &[a, b, c] in &self.triangles {
            let pa = self.vertices[a as usize].coords - center;
            let pb = self.vertices[b as usize].coords - center;
            let pc = self.vertices[c as usize].coords - center;
            six_v += pa.dot(&pb.cross(&pc));
        }
        six_v / 6.0
    }

    /// Area-weighted surface centroid; the default inversion origin.
    pub fn area_weighted_centroid(&self) -> Point3<f64> {
        let mut acc = Vector3::zeros();
        let mut total = 0.0;
        for &tri in &self.triangles {
            let [a, b, c] = tri.map(|i| self.vertices[i as usize].coords);
            let area = 0.5 * (b - a).cross(&(c - a)).norm();
            acc += area * (a + b + c) / 3.0;
            total += area;
        }
        Point3::from(acc / total)
    }

    /// Shortest triangle edge, physical units.
    pub fn min_edge_length(&self) -> f64 {
        let mut min = f64::INFINITY;
        for &[a, b, c] in &self.triangles {
            let pa = self.vertices[a as usize];
            let pb = self.vertices[b as usize];
            let pc = self.vertices[c as usize];
            min = min.min((pb - pa).norm()).min((pc - pb).norm()).min((pa - pc).norm());
        }
        min
    }

    /// Strict interior test by ray-crossing parity. Points on the surface
    /// count as outside. Degenerate hits (edge grazes, near-parallel rays)
    /// retry along the next direction of a fixed list, so the result is
    /// deterministic.
    pub fn contains(&self, p: Point3<f64>) -> bool {
        let center = self
            .vertices
            .iter()
            .fold(Vector3::zeros(), |acc, q| acc + q.coords)
            / self.vertices.len() as f64;
        let scale = self
            .vertices
            .iter()
            .map(|q| (q.coords - center).norm())
            .fold(0.0, f64::max)
            .max(f64::MIN_POSITIVE);

        for dir in RAY_DIRECTIONS {
            let d = Vector3::new(dir[0], dir[1], dir[2]);
            match self.ray_parity(p, d, scale) {
                RayOutcome::Crossings(k) => return k % 2 == 1,
                RayOutcome::OnSurface => return false,
                RayOutcome::Degenerate => continue,
            }
        }
        // Every probe direction grazed an edge: pathological input; be
        // conservative.
        false
    }

    fn ray_parity(&self, p: Point3<f64>, d: Vector3<f64>, scale: f64) -> RayOutcome {
        const BARY_EPS: f64 = 1e-10;
        let surf_eps = 1e-12 * scale;
        let mut crossings = 0usize;
        for &[ia, ib, ic] in &self.triangles {
            let a = self.vertices[ia as usize];
            let e1 = self.vertices[ib as usize] - a;
            let e2 = self.vertices[ic as usize] - a;
            let pvec = d.cross(&e2);
            let det = e1.dot(&pvec);
            let tvec = p - a;
            if det.abs() < 1e-14 * e1.norm() * e2.norm() {
                // Ray parallel to the triangle plane. Only a problem if the
                // point is essentially in that plane and over the triangle.
                let n = e1.cross(&e2);
                if tvec.dot(&n).abs() < surf_eps * n.norm().max(f64::MIN_POSITIVE) {
                    return RayOutcome::Degenerate;
                }
                continue;
            }
            let inv = 1.0 / det;
            let u = tvec.dot(&pvec) * inv;
            let qvec = tvec.cross(&e1);
            let v = d.dot(&qvec) * inv;
            let t = e2.dot(&qvec) * inv;
            let w = 1.0 - u - v;
            let inside_loose = u > -BARY_EPS && v > -BARY_EPS && w > -BARY_EPS;
            if !inside_loose {
                continue;
            }
            if t.abs() <= surf_eps {
                return RayOutcome::OnSurface;
            }
            if t < 0.0 {
                continue;
            }
            if u < BARY_EPS || v < BARY_EPS || w < BARY_EPS {
                return RayOutcome::Degenerate;
            }
            crossings += 1;
        }
        RayOutcome::Crossings(crossings)
    }
}

enum RayOutcome {
    Crossings(usize),
    OnSurface,
    Degenerate,
}

/// Fixed probe directions for `contains`; deliberately skew to every
/// coordinate plane.
const RAY_DIRECTIONS: [[f64; 3]; 8] = [
    [0.577350269189626, 0.577350269189626, 0.577350269189626],
    [-0.262265284311742, 0.534522483824849, 0.803418239620473],
    [0.801783725737273, -0.267261241912424, 0.534522483824849],
    [0.123091490979333, 0.861640436855329, -0.492365963917331],
    [-0.577350269189626, -0.577350269189626, 0.577350269189626],
    [0.904534033733291, 0.301511344577764, -0.301511344577764],
    [-0.132453235709454, -0.794719414256726, 0.592295012001713],
    [0.492365963917331, -0.123091490979333, -0.861640436855329],
];

fn triangle_area(vertices: &[Point3<f64>], [a, b, c]: [u32; 3]) -> f64 {
    let pa = vertices[a as usize];
    let e1 = vertices[b as usize] - pa;
    let e2 = vertices[c as usize] - pa;
    0.5 * e1.cross(&e2).norm()
}

/// Sentinel for "no neighbor across this face" in [`TetDomain::neighbors`].
pub const NO_TET: u32 = u32::MAX;

/// Tetrahedralization of the inverted, compactified exterior
/// `Omega_inv ∪ {0}` in normalized y coordinates.
///
/// Invariants, checked on construction: positive tet volumes
/// (> [`MIN_TET_VOLUME`]), boundary/interior ids partition the vertex set,
/// the origin vertex sits within [`ORIGIN_VERTEX_TOL`] of y = 0 and is
/// interior, faces are manifold (shared by at most two tets).
#[derive(Debug, Clone)]
pub struct TetDomain {
    vertices: Vec<Point3<f64>>,
    tets: Vec<[u32; 4]>,
    boundary_vertex_ids: Vec<u32>,
    interior_vertex_ids: Vec<u32>,
    /// Surface vertex id for each entry of `boundary_vertex_ids`.
    boundary_surface_ids: Vec<u32>,
    origin_vertex_id: u32,
    frame: InversionFrame,
    from_generator: bool,
    /// `neighbors[t][k]`: tet across the face opposite local vertex k, or
    /// [`NO_TET`] on the boundary.
    neighbors: Vec<[u32; 4]>,
    /// Tet incident to the origin vertex; default start for point location.
    origin_tet: u32,
    vertex_tet_offsets: Vec<u32>,
    vertex_tet_list: Vec<u32>,
    /// Largest boundary-vertex radius; anything beyond it is outside the
    /// inverted domain without a point-location walk.
    max_boundary_radius: f64,
}

/// Size and memory summary of a [`TetDomain`].
#[derive(Debug, Clone, Copy, serde::Serialize)]
pub struct MeshStats {
    pub n_verts: usize,
    pub n_tets: usize,
    /// Coordinates + tet indices + one solution vector:
    /// 24 bytes/vertex + 16 bytes/tet + 8 bytes/vertex.
    pub memory_bytes: u64,
}

impl TetDomain {
    /// Assembles and validates a domain from raw arrays. `boundary` pairs
    /// each boundary vertex id with the surface vertex it represents.
    ///
    /// Correspondence between complex boundary faces and inverted surface
    /// triangles is the caller's business (the generator guarantees it by
    /// construction; `load_tet_mesh` checks it against the surface); this
    /// constructor checks the structural invariants only, which is what
    /// synthetic test domains and deserialized bundles need.
    pub fn from_parts(
        vertices: Vec<Point3<f64>>,
        tets: Vec<[u32; 4]>,
        boundary: Vec<(u32, u32)>,
        origin_vertex_id: u32,
        frame: InversionFrame,
        from_generator: bool,
    ) -> Result<Self, MeshError> {
        let n = vertices.len();
        let mut referenced = vec![false; n];
        for (i, tet) in tets.iter().enumerate() {
            for &v in tet {
                if v as usize >= n {
                    return Err(MeshError::BadIndex { index: v, n_vertices: n });
                }
                referenced[v as usize] = true;
            }
            let vol = signed_tet_volume(
                vertices[tet[0] as usize],
                vertices[tet[1] as usize],
                vertices[tet[2] as usize],
                vertices[tet[3] as usize],
            );
            if !(vol > MIN_TET_VOLUME) {
                return Err(MeshError::NegativeVolumeTet { index: i, volume: vol });
            }
        }
        if let Some(v) = referenced.iter().position(|r| !r) {
            return Err(MeshError::UnreferencedVertex(v as u32));
        }

        if origin_vertex_id as usize >= n {
            return Err(MeshError::BadIndex { index: origin_vertex_id, n_vertices: n });
        }
        if vertices[origin_vertex_id as usize].coords.norm() >= ORIGIN_VERTEX_TOL {
            return Err(MeshError::MissingOriginVertex);
        }

        let mut is_boundary = vec![false; n];
        for &(dv, _) in &boundary {
            if dv as usize >= n {
                return Err(MeshError::BadIndex { index: dv, n_vertices: n });
            }
            if is_boundary[dv as usize] {
                return Err(MeshError::BoundaryMismatch(format!(
                    "vertex {dv} listed as boundary twice"
                )));
            }
            is_boundary[dv as usize] = true;
        }
        if is_boundary[origin_vertex_id as usize] {
            return Err(MeshError::BoundaryMismatch(
                "origin vertex cannot be a boundary vertex".into(),
            ));
        }

        let mut pairs = boundary;
        pairs.sort_unstable_by_key(|&(dv, _)| dv);
        let boundary_vertex_ids: Vec<u32> = pairs.iter().map(|&(dv, _)| dv).collect();
        let boundary_surface_ids: Vec<u32> = pairs.iter().map(|&(_, sv)| sv).collect();
        let interior_vertex_ids: Vec<u32> =
            (0..n as u32).filter(|&v| !is_boundary[v as usize]).collect();

        // Face incidence: manifoldness and walk adjacency in one pass.
        let mut face_map: HashMap<[u32; 3], (u32, u8)> = HashMap::with_capacity(tets.len() * 2);
        let mut neighbors = vec![[NO_TET; 4]; tets.len()];
        for (t, tet) in tets.iter().enumerate() {
            for k in 0..4u8 {
                let mut face = [0u32; 3];
                let mut w = 0;
                for (j, &v) in tet.iter().enumerate() {
                    if j != k as usize {
                        face[w] = v;
                        w += 1;
                    }
                }
                face.sort_unstable();
                match face_map.remove(&face) {
                    None => {
                        face_map.insert(face, (t as u32, k));
                    }
                    Some((other_t, other_k)) => {
                        if neighbors[other_t as usize][other_k as usize] != NO_TET {
                            return Err(MeshError::NonManifoldFace(face[0], face[1], face[2]));
                        }
                        neighbors[t][k as usize] = other_t;
                        neighbors[other_t as usize][other_k as usize] = t as u32;
                    }
                }
            }
        }

        let mut vertex_tet_offsets = vec![0u32; n + 1];
        for tet in &tets {
            for &v in tet {
                vertex_tet_offsets[v as usize + 1] += 1;
            }
        }
        for i in 0..n {
            vertex_tet_offsets[i + 1] += vertex_tet_offsets[i];
        }
        let mut cursor = vertex_tet_offsets.clone();
        let mut vertex_tet_list = vec![0u32; vertex_tet_offsets[n] as usize];
        for (t, tet) in tets.iter().enumerate() {
            for &v in tet {
                vertex_tet_list[cursor[v as usize] as usize] = t as u32;
                cursor[v as usize] += 1;
            }
        }

        let origin_tet = vertex_tet_list[vertex_tet_offsets[origin_vertex_id as usize] as usize];
        let max_boundary_radius = boundary_vertex_ids
            .iter()
            .map(|&v| vertices[v as usize].coords.norm())
            .fold(0.0f64, f64::max);

        Ok(TetDomain {
            vertices,
            tets,
            boundary_vertex_ids,
            interior_vertex_ids,
            boundary_surface_ids,
            origin_vertex_id,
            frame,
            from_generator,
            neighbors,
            origin_tet,
            vertex_tet_offsets,
            vertex_tet_list,
            max_boundary_radius,
        })
    }

    pub fn vertices(&self) -> &[Point3<f64>] {
        &self.vertices
    }

    pub fn tets(&self) -> &[[u32; 4]] {
        &self.tets
    }

    pub fn n_vertices(&self) -> usize {
        self.vertices.len()
    }

    pub fn n_tets(&self) -> usize {
        self.tets.len()
    }

    pub fn boundary_vertex_ids(&self) -> &[u32] {
        &self.boundary_vertex_ids
    }

    pub fn interior_vertex_ids(&self) -> &[u32] {
        &self.interior_vertex_ids
    }

    pub fn boundary_surface_ids(&self) -> &[u32] {
        &self.boundary_surface_ids
    }

    pub fn origin_vertex_id(&self) -> u32 {
        self.origin_vertex_id
    }

    pub fn frame(&self) -> InversionFrame {
        self.frame
    }

    pub fn from_generator(&self) -> bool {
        self.from_generator
    }

    pub fn neighbors(&self) -> &[[u32; 4]] {
        &self.neighbors
    }

    pub fn origin_tet(&self) -> u32 {
        self.origin_tet
    }

    pub fn max_boundary_radius(&self) -> f64 {
        self.max_boundary_radius
    }

    /// Original-coordinate boundary vertex positions, indexed by surface
    /// vertex id (the inverse of the ingest mapping).
    pub fn original_boundary_positions(&self) -> Result<Vec<Point3<f64>>, MeshError> {
        let n = self.boundary_vertex_ids.len();
        let mut positions = vec![Point3::origin(); n];
        for (&vid, &sid) in self.boundary_vertex_ids.iter().zip(&self.boundary_surface_ids) {
            if sid as usize >= n {
                return Err(MeshError::BoundaryMismatch(format!(
                    "surface id {sid} outside the {n}-vertex boundary"
                )));
            }
            positions[sid as usize] = self.frame.from_inverted(self.vertices[vid as usize].coords)?;
        }
        Ok(positions)
    }

    pub fn incident_tets(&self, vertex: u32) -> &[u32] {
        let lo = self.vertex_tet_offsets[vertex as usize] as usize;
        let hi = self.vertex_tet_offsets[vertex as usize + 1] as usize;
        &self.vertex_tet_list[lo..hi]
    }

    pub fn tet_points(&self, t: usize) -> [Point3<f64>; 4] {
        self.tets[t].map(|v| self.vertices[v as usize])
    }

    pub fn tet_volume(&self, t: usize) -> f64 {
        let [a, b, c, d] = self.tet_points(t);
        signed_tet_volume(a, b, c, d)
    }

    pub fn total_volume(&self) -> f64 {
        (0..self.tets.len()).map(|t| self.tet_volume(t)).sum()
    }

    /// Boundary faces of the complex (incident to exactly one tet), oriented
    /// outward, in deterministic tet order.
    pub fn boundary_faces(&self) -> Vec<[u32; 3]> {
        let mut faces = Vec::new();
        for (t, tet) in self.tets.iter().enumerate() {
            for k in 0..4 {
                if self.neighbors[t][k] == NO_TET {
                    faces.push(outward_face(*tet, k));
                }
            }
        }
        faces
    }

    pub fn mesh_stats(&self) -> MeshStats {
        MeshStats {
            n_verts: self.n_vertices(),
            n_tets: self.n_tets(),
            memory_bytes: 24 * self.n_vertices() as u64
                + 16 * self.n_tets() as u64
                + 8 * self.n_vertices() as u64,
        }
    }
}

/// Face of `tet` opposite local vertex `k`, wound so its normal points away
/// from the omitted vertex (outward for a positively oriented tet).
fn outward_face(tet: [u32; 4], k: usize) -> [u32; 3] {
    // For positive orientation, faces (1,2,3), (0,3,2), (0,1,3), (0,2,1)
    // all face outward.
    match k {
        0 => [tet[1], tet[2], tet[3]],
        1 => [tet[0], tet[3], tet[2]],
        2 => [tet[0], tet[1], tet[3]],
        _ => [tet[0], tet[2], tet[1]],
    }
}

pub fn signed_tet_volume(a: Point3<f64>, b: Point3<f64>, c: Point3<f64>, d: Point3<f64>) -> f64 {
    (b - a).dot(&(c - a).cross(&(d - a))) / 6.0
}
