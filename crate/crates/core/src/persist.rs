//! Durable field bundles and sampled-grid export.
//!
//! Bundle layout (little-endian, 8-byte-aligned sections):
//!
//! ```text
//! offset  size  content
//!      0     4  magic "SADF"
//!      4     4  version (u32, = 1)
//!      8     8  n_verts (u64)
//!     16     8  n_tets (u64)
//!     24     8  n_boundary (u64)
//!     32     8  origin vertex id (u64)
//!     40     8  flags (bit 0: mesh came from the generator)
//!     48    24  inversion origin (3 x f64)
//!     72     8  inversion scale (f64)
//!     80     8  solve residual norm (f64)
//!     88     8  reserved (= 0)
//!     96     -  vertices        n_verts * 3 * f64
//!                tets            n_tets * 4 * u32
//!                boundary ids    n_boundary * u32, zero-padded to 8
//!                surface ids     n_boundary * u32, zero-padded to 8
//!                V_full          n_verts * f64
//!                sigma           n_boundary * f64 (surface-vertex order)
//!                gradients       n_verts * 3 * f64
//! ```
//!
//! The factorization is not persisted: factor layouts are solver-specific
//! and dominate the size, and query-only loads cover the control-loop case.

use std::fs::File;
use std::io::{BufWriter, Read, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::{Point3, Vector3};
use thiserror::Error;

use crate::field::{Field, QueryOutcome};
use crate::kelvin::InversionFrame;
use crate::mesh::{MeshError, TetDomain};
use crate::semantics::{SemanticState, SemanticsError};
use crate::solver::FieldSolution;

const MAGIC: [u8; 4] = *b"SADF";
const VERSION: u32 = 1;
const HEADER_LEN: u64 = 96;

/// Grid samples at points the field does not cover (inside the object or at
/// the inversion origin) are written as this sentinel.
pub const GRID_SENTINEL: f64 = -1e30;

#[derive(Debug, Error)]
pub enum PersistError {
    #[error("not a field bundle: magic {0:?}")]
    BadMagic([u8; 4]),
    #[error("bundle version {0}, this build reads version {VERSION}")]
    VersionMismatch(u32),
    #[error("bundle ends early: expected {expected} bytes, file has {got}")]
    TruncatedBundle { expected: u64, got: u64 },
    #[error("bundle is inconsistent: {0}")]
    CountMismatch(String),
    #[error("refusing to persist non-finite data: {0}")]
    NonFinite(String),
    #[error("bad export grid: {0}")]
    BadGrid(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error(transparent)]
    Semantics(#[from] SemanticsError),
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> PersistError + '_ {
    move |source| PersistError::Io {
        path: path.to_path_buf(),
        source,
    }
}

fn expected_len(n_verts: u64, n_tets: u64, n_boundary: u64) -> Option<u64> {
    // u32 id sections round up to an 8-byte boundary.
    let ids = n_boundary.div_ceil(2).checked_mul(8)?;
    let mut total = HEADER_LEN;
    for part in [
        n_verts.checked_mul(24)?,
        n_tets.checked_mul(16)?,
        ids,
        ids,
        n_verts.checked_mul(8)?,
        n_boundary.checked_mul(8)?,
        n_verts.checked_mul(24)?,
    ] {
        total = total.checked_add(part)?;
    }
    Some(total)
}

struct CountingWriter<W: Write> {
    inner: W,
    written: u64,
}

impl<W: Write> CountingWriter<W> {
    fn put(&mut self, bytes: &[u8]) -> std::io::Result<()> {
        self.written += bytes.len() as u64;
        self.inner.write_all(bytes)
    }

    fn put_f64s<'a>(&mut self, values: impl IntoIterator<Item = &'a f64>) -> std::io::Result<()> {
        for v in values {
            self.put(&v.to_le_bytes())?;
        }
        Ok(())
    }

    fn put_u32s<'a>(
        &mut self,
        values: impl IntoIterator<Item = &'a u32>,
        pad_to_8: bool,
    ) -> std::io::Result<()> {
        let mut n = 0usize;
        for v in values {
            self.put(&v.to_le_bytes())?;
            n += 1;
        }
        if pad_to_8 && n % 2 == 1 {
            self.put(&[0u8; 4])?;
        }
        Ok(())
    }
}

/// Serializes a field to `path`; returns the byte count written.
///
/// The semantic vector is stored in surface-vertex order. Fields whose
/// solution predates semantics (`sigma = None`) persist sigma as
/// `-ln(V * |y|)` per boundary vertex, which reproduces the same boundary
/// data on load.
pub fn save_bundle(field: &Field, path: &Path) -> Result<u64, PersistError> {
    let domain = field.domain();
    let solution = field.solution();
    let grads = field.vertex_grads();
    let n_verts = domain.n_vertices();
    let n_boundary = domain.boundary_vertex_ids().len();

    // Sigma in surface order: invert the boundary -> surface map.
    let mut sigma = vec![0.0f64; n_boundary];
    match &solution.sigma {
        Some(state) => {
            if state.len() != n_boundary {
                return Err(PersistError::CountMismatch(format!(
                    "semantic state has {} values for {} boundary vertices",
                    state.len(),
                    n_boundary
                )));
            }
            sigma.copy_from_slice(state.sigma());
        }
        None => {
            for (slot, (&vid, &sid)) in domain
                .boundary_vertex_ids()
                .iter()
                .zip(domain.boundary_surface_ids())
                .enumerate()
            {
                if sid as usize >= n_boundary {
                    return Err(PersistError::CountMismatch(format!(
                        "surface id {sid} outside the {n_boundary}-entry sigma table"
                    )));
                }
                let g = domain.vertices()[vid as usize].coords.norm();
                sigma[sid as usize] = -(solution.v_boundary[slot] * g).ln();
            }
        }
    }

    for (name, ok) in [
        ("V", solution.v_full.iter().all(|v| v.is_finite())),
        ("sigma", sigma.iter().all(|v| v.is_finite())),
        ("gradients", grads.iter().all(|g| {
            g.x.is_finite() && g.y.is_finite() && g.z.is_finite()
        })),
    ] {
        if !ok {
            return Err(PersistError::NonFinite(name.into()));
        }
    }

    let file = File::create(path).map_err(io_err(path))?;
    let mut w = CountingWriter {
        inner: BufWriter::new(file),
        written: 0,
    };
    let frame = domain.frame();
    let put = |w: &mut CountingWriter<BufWriter<File>>| -> std::io::Result<()> {
        w.put(&MAGIC)?;
        w.put(&VERSION.to_le_bytes())?;
        w.put(&(n_verts as u64).to_le_bytes())?;
        w.put(&(domain.n_tets() as u64).to_le_bytes())?;
        w.put(&(n_boundary as u64).to_le_bytes())?;
        w.put(&(domain.origin_vertex_id() as u64).to_le_bytes())?;
        w.put(&(domain.from_generator() as u64).to_le_bytes())?;
        w.put_f64s([&frame.origin.x, &frame.origin.y, &frame.origin.z])?;
        w.put(&frame.scale.to_le_bytes())?;
        w.put(&solution.residual_norm.to_le_bytes())?;
        w.put(&0u64.to_le_bytes())?;

        w.put_f64s(domain.vertices().iter().flat_map(|p| p.coords.as_slice()))?;
        w.put_u32s(domain.tets().iter().flatten(), false)?;
        w.put_u32s(domain.boundary_vertex_ids(), true)?;
        w.put_u32s(domain.boundary_surface_ids(), true)?;
        w.put_f64s(&solution.v_full)?;
        w.put_f64s(&sigma)?;
        w.put_f64s(grads.iter().flat_map(|g| g.as_slice()))?;
        w.inner.flush()
    };
    put(&mut w).map_err(io_err(path))?;

    debug_assert_eq!(
        Some(w.written),
        expected_len(n_verts as u64, domain.n_tets() as u64, n_boundary as u64)
    );
    Ok(w.written)
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> &'a [u8] {
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        s
    }

    fn u32(&mut self) -> u32 {
        u32::from_le_bytes(self.take(4).try_into().unwrap())
    }

    fn u64(&mut self) -> u64 {
        u64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f64(&mut self) -> f64 {
        f64::from_le_bytes(self.take(8).try_into().unwrap())
    }

    fn f64s(&mut self, n: usize) -> Vec<f64> {
        (0..n).map(|_| self.f64()).collect()
    }

    fn u32s(&mut self, n: usize, padded: bool) -> Vec<u32> {
        let v: Vec<u32> = (0..n).map(|_| self.u32()).collect();
        if padded && n % 2 == 1 {
            self.take(4);
        }
        v
    }
}

/// Loads a bundle into a query-only [`Field`]. Call
/// [`Field::refactorize`] before semantic updates.
pub fn load_bundle(path: &Path) -> Result<Field, PersistError> {
    let mut file = File::open(path).map_err(io_err(path))?;
    let file_len = file.metadata().map_err(io_err(path))?.len();

    // Trust nothing beyond the header until the counts check out against
    // the actual file size.
    if file_len < HEADER_LEN {
        return Err(PersistError::TruncatedBundle {
            expected: HEADER_LEN,
            got: file_len,
        });
    }
    let mut header = [0u8; HEADER_LEN as usize];
    file.read_exact(&mut header).map_err(io_err(path))?;
    let mut r = Reader {
        buf: &header,
        pos: 0,
    };
    let magic: [u8; 4] = r.take(4).try_into().unwrap();
    if magic != MAGIC {
        return Err(PersistError::BadMagic(magic));
    }
    let version = r.u32();
    if version != VERSION {
        return Err(PersistError::VersionMismatch(version));
    }
    let n_verts = r.u64();
    let n_tets = r.u64();
    let n_boundary = r.u64();
    let origin_vertex = r.u64();
    let flags = r.u64();
    let frame_origin = Point3::new(r.f64(), r.f64(), r.f64());
    let scale = r.f64();
    let residual_norm = r.f64();

    let expected = expected_len(n_verts, n_tets, n_boundary)
        .ok_or_else(|| PersistError::CountMismatch("counts overflow".into()))?;
    if file_len < expected {
        return Err(PersistError::TruncatedBundle {
            expected,
            got: file_len,
        });
    }
    if file_len > expected {
        return Err(PersistError::CountMismatch(format!(
            "{} trailing bytes after the gradient section",
            file_len - expected
        )));
    }
    if origin_vertex >= n_verts || n_boundary > n_verts {
        return Err(PersistError::CountMismatch(format!(
            "origin vertex {origin_vertex}, {n_boundary} boundary of {n_verts} vertices"
        )));
    }

    let mut body = vec![0u8; (expected - HEADER_LEN) as usize];
    file.read_exact(&mut body).map_err(io_err(path))?;
    let mut r = Reader { buf: &body, pos: 0 };

    let (n_verts, n_tets, n_boundary) = (n_verts as usize, n_tets as usize, n_boundary as usize);
    let vertices: Vec<Point3<f64>> = (0..n_verts)
        .map(|_| Point3::new(r.f64(), r.f64(), r.f64()))
        .collect();
    let tets: Vec<[u32; 4]> = (0..n_tets)
        .map(|_| [r.u32(), r.u32(), r.u32(), r.u32()])
        .collect();
    let boundary_ids = r.u32s(n_boundary, true);
    let surface_ids = r.u32s(n_boundary, true);
    let v_full = r.f64s(n_verts);
    let sigma = r.f64s(n_boundary);
    let grads: Vec<Vector3<f64>> = (0..n_verts)
        .map(|_| Vector3::new(r.f64(), r.f64(), r.f64()))
        .collect();

    // The surface map must be a bijection for sigma indexing to be sound.
    let mut seen = vec![false; n_boundary];
    for &sid in &surface_ids {
        if sid as usize >= n_boundary || seen[sid as usize] {
            return Err(PersistError::CountMismatch(format!(
                "surface id {sid} out of range or repeated"
            )));
        }
        seen[sid as usize] = true;
    }

    let frame = InversionFrame::new(frame_origin, scale)
        .map_err(|e| PersistError::CountMismatch(e.to_string()))?;
    let boundary: Vec<(u32, u32)> = boundary_ids.into_iter().zip(surface_ids).collect();
    let domain = TetDomain::from_parts(
        vertices,
        tets,
        boundary,
        origin_vertex as u32,
        frame,
        flags & 1 != 0,
    )?;

    let state = SemanticState::from_table(sigma)?;
    let v_interior: Vec<f64> = domain
        .interior_vertex_ids()
        .iter()
        .map(|&v| v_full[v as usize])
        .collect();
    let v_boundary: Vec<f64> = domain
        .boundary_vertex_ids()
        .iter()
        .map(|&v| v_full[v as usize])
        .collect();
    let solution = FieldSolution {
        v_interior,
        v_boundary,
        v_full,
        sigma: Some(state),
        residual_norm,
        t_solve: std::time::Duration::ZERO,
    };
    Ok(Field::from_loaded(Arc::new(domain), solution, grads))
}

/// Sampling layout for [`export_grid`]: a full box or an axis-aligned slice
/// at fixed z. Every axis needs at least 2 samples.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum GridSpec {
    Volume { nx: usize, ny: usize, nz: usize },
    SliceZ { nx: usize, ny: usize, z: f64 },
}

/// Samples h on a regular grid over `bbox` and writes a legacy-VTK ASCII
/// STRUCTURED_POINTS dataset. Covered points get h; points the field does
/// not cover get [`GRID_SENTINEL`]. Returns the sample count.
pub fn export_grid(
    field: &Field,
    bbox: (Point3<f64>, Point3<f64>),
    spec: GridSpec,
    path: &Path,
) -> Result<u64, PersistError> {
    let (lo, hi) = bbox;
    let (nx, ny, nz, z_fixed) = match spec {
        GridSpec::Volume { nx, ny, nz } => (nx, ny, nz, None),
        GridSpec::SliceZ { nx, ny, z } => (nx, ny, 1, Some(z)),
    };
    if nx < 2 || ny < 2 || (nz < 2 && z_fixed.is_none()) {
        return Err(PersistError::BadGrid(format!(
            "need at least 2 samples per axis, got {nx} x {ny} x {nz}"
        )));
    }
    let checked_axes = if z_fixed.is_some() { 2 } else { 3 };
    for axis in 0..checked_axes {
        if !(hi[axis] > lo[axis]) {
            return Err(PersistError::BadGrid(format!(
                "bbox is empty on axis {axis}: [{}, {}]",
                lo[axis], hi[axis]
            )));
        }
    }

    let dx = (hi.x - lo.x) / (nx - 1) as f64;
    let dy = (hi.y - lo.y) / (ny - 1) as f64;
    let (z0, dz) = match z_fixed {
        Some(z) => (z, 1.0),
        None => (lo.z, (hi.z - lo.z) / (nz - 1) as f64),
    };

    let file = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(file);
    let count = (nx * ny * nz) as u64;
    let write = |w: &mut BufWriter<File>| -> std::io::Result<()> {
        writeln!(w, "# vtk DataFile Version 3.0")?;
        writeln!(w, "semantics-aware distance field h")?;
        writeln!(w, "ASCII")?;
        writeln!(w, "DATASET STRUCTURED_POINTS")?;
        writeln!(w, "DIMENSIONS {nx} {ny} {nz}")?;
        writeln!(w, "ORIGIN {} {} {}", lo.x, lo.y, z0)?;
        writeln!(w, "SPACING {dx} {dy} {dz}")?;
        writeln!(w, "POINT_DATA {count}")?;
        writeln!(w, "SCALARS h double 1")?;
        writeln!(w, "LOOKUP_TABLE default")?;

        let mut hint = None;
        for iz in 0..nz {
            for iy in 0..ny {
                for ix in 0..nx {
                    // For a slice nz = 1, so iz = 0 and z stays at z0.
                    let p = Point3::new(
                        lo.x + dx * ix as f64,
                        lo.y + dy * iy as f64,
                        z0 + dz * iz as f64,
                    );
                    let h = match field.query(p, hint) {
                        Ok(QueryOutcome::Exterior(r)) => {
                            hint = Some(r.tet_hint);
                            r.h
                        }
                        _ => GRID_SENTINEL,
                    };
                    writeln!(w, "{h}")?;
                }
            }
        }
        w.flush()
    };
    write(&mut w).map_err(io_err(path))?;
    Ok(count)
}
