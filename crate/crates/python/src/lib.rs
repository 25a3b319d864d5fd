//! Python bindings: a thin `Field` class over the core pipeline plus the
//! three builders. Vectors cross the boundary as plain tuples; the heavy
//! data stays on the Rust side.

use std::path::PathBuf;
use std::sync::Arc;

use pyo3::exceptions::{PyIOError, PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use sadf::na::{Point3, Vector3};
use sadf::semantics::sigma_profile_at;
use sadf::{
    assemble_laplacian, build_field, export_grid, factorize, generate_star_shaped,
    inversion_frame, load_bundle, load_surface, mesh, save_bundle, Error, GridSpec,
    QueryOutcome, SemanticProfile, SemanticState, SizingField, SurfaceFormat, SurfaceMesh,
};

fn to_py(err: Error) -> PyErr {
    match &err {
        Error::Io(_) | Error::Persist(_) => PyIOError::new_err(err.to_string()),
        Error::Solver(_) => PyRuntimeError::new_err(err.to_string()),
        _ => PyValueError::new_err(err.to_string()),
    }
}

fn point(t: (f64, f64, f64)) -> Point3<f64> {
    Point3::new(t.0, t.1, t.2)
}

/// One exterior query answer.
#[pyclass(frozen, get_all)]
struct QueryResult {
    /// Semantics-aware distance h at the query point.
    h: f64,
    /// Gradient of h in the original coordinates.
    grad: (f64, f64, f64),
    /// Enclosing tet id; pass as `hint` to accelerate a nearby follow-up.
    tet: u32,
}

#[pymethods]
impl QueryResult {
    fn __repr__(&self) -> String {
        format!(
            "QueryResult(h={}, grad=({}, {}, {}), tet={})",
            self.h, self.grad.0, self.grad.1, self.grad.2, self.tet
        )
    }
}

fn wrap_outcome(out: QueryOutcome) -> Option<QueryResult> {
    match out {
        QueryOutcome::Exterior(q) => Some(QueryResult {
            h: q.h,
            grad: (q.grad.x, q.grad.y, q.grad.z),
            tet: q.tet_hint,
        }),
        QueryOutcome::InsideObject => None,
    }
}

/// A solved semantics-aware distance field over the exterior of one object.
#[pyclass]
struct Field {
    inner: sadf::Field,
    surface: Option<SurfaceMesh>,
}

impl Field {
    fn build(
        surface: SurfaceMesh,
        lx: f64,
        ly_min: Option<f64>,
        origin: Option<(f64, f64, f64)>,
        sigma: Option<f64>,
    ) -> PyResult<Field> {
        if !(lx > 0.0) || !lx.is_finite() {
            return Err(PyValueError::new_err(format!("lx must be positive, got {lx}")));
        }
        let frame = inversion_frame(&surface, origin.map(point)).map_err(|e| to_py(e.into()))?;
        let lx_normalized = lx / frame.scale;
        let sizing = match ly_min {
            Some(floor) if floor > 0.0 && floor.is_finite() => {
                SizingField::new(lx_normalized, floor)
            }
            Some(floor) => {
                return Err(PyValueError::new_err(format!(
                    "ly_min must be positive, got {floor}"
                )));
            }
            None => SizingField::with_default_floor(
                lx_normalized,
                mesh::min_inverted_edge(&surface, &frame).map_err(|e| to_py(e.into()))?,
            ),
        };
        let domain = Arc::new(
            generate_star_shaped(&surface, frame, sizing).map_err(|e| to_py(e.into()))?,
        );
        let ops = Arc::new(assemble_laplacian(&domain).map_err(|e| to_py(e.into()))?);
        let handle = Arc::new(factorize(&ops).map_err(|e| to_py(e.into()))?);
        let state = match sigma {
            Some(v) => SemanticState::constant(v, surface.n_vertices())
                .map_err(|e| to_py(e.into()))?,
            None => SemanticState::constant(0.0, surface.n_vertices())
                .map_err(|e| to_py(e.into()))?,
        };
        let inner =
            build_field(&surface, domain, ops, handle, state).map_err(|e| to_py(e.into()))?;
        Ok(Field {
            inner,
            surface: Some(surface),
        })
    }

    /// Re-solve with a new state, attaching a factorization first if the
    /// field came from a bundle.
    fn resolve(&mut self, state: SemanticState) -> PyResult<Field> {
        if !self.inner.can_update() {
            self.inner.refactorize().map_err(|e| to_py(e.into()))?;
        }
        let inner = self.inner.with_sigma(state).map_err(|e| to_py(e.into()))?;
        Ok(Field {
            inner,
            surface: self.surface.clone(),
        })
    }

    fn boundary_points(&self) -> PyResult<Vec<Point3<f64>>> {
        match &self.surface {
            Some(s) => Ok(s.vertices().to_vec()),
            None => self
                .inner
                .domain()
                .original_boundary_positions()
                .map_err(|e| to_py(e.into())),
        }
    }
}

#[pymethods]
impl Field {
    /// h and gradient at one point; `None` when the point is inside the
    /// object (h is not defined there).
    #[pyo3(signature = (x, y, z, hint=None))]
    fn query(&self, x: f64, y: f64, z: f64, hint: Option<u32>) -> PyResult<Option<QueryResult>> {
        let out = self
            .inner
            .query(Point3::new(x, y, z), hint)
            .map_err(|e| to_py(e.into()))?;
        Ok(wrap_outcome(out))
    }

    /// Queries a point sequence with the hint rolled forward, one result or
    /// `None` per point.
    fn query_many(&self, points: Vec<(f64, f64, f64)>) -> PyResult<Vec<Option<QueryResult>>> {
        let mut hint = None;
        let mut results = Vec::with_capacity(points.len());
        for p in points {
            let out = self
                .inner
                .query(point(p), hint)
                .map_err(|e| to_py(e.into()))?;
            let wrapped = wrap_outcome(out);
            if let Some(q) = &wrapped {
                hint = Some(q.tet);
            }
            results.push(wrapped);
        }
        Ok(results)
    }

    /// New field with constant sigma, reusing the factorization.
    fn with_sigma_constant(&mut self, sigma: f64) -> PyResult<Field> {
        let n = self.boundary_points()?.len();
        let state = SemanticState::constant(sigma, n).map_err(|e| to_py(e.into()))?;
        self.resolve(state)
    }

    /// New field with one sigma value per surface vertex.
    fn with_sigma_table(&mut self, values: Vec<f64>) -> PyResult<Field> {
        let n = self.boundary_points()?.len();
        if values.len() != n {
            return Err(PyValueError::new_err(format!(
                "expected {n} sigma values, got {}",
                values.len()
            )));
        }
        let state = SemanticState::from_table(values).map_err(|e| to_py(e.into()))?;
        self.resolve(state)
    }

    /// New field with the tanh contact profile
    /// `sigma(x) = tanh(|x . e_l| - d0) * sigma_nom`.
    fn with_sigma_tanh(
        &mut self,
        sigma_nom: f64,
        d0: f64,
        e_l: (f64, f64, f64),
    ) -> PyResult<Field> {
        let profile = SemanticProfile::new(Vector3::new(e_l.0, e_l.1, e_l.2), d0, sigma_nom)
            .map_err(|e| to_py(e.into()))?;
        let positions = self.boundary_points()?;
        let state = sigma_profile_at(&positions, &profile);
        self.resolve(state)
    }

    /// Current per-vertex sigma, if the field carries one.
    fn sigma(&self) -> Option<Vec<f64>> {
        self.inner.sigma().map(|s| s.sigma().to_vec())
    }

    /// Original surface vertex positions, in sigma table order.
    fn boundary_vertices(&self) -> PyResult<Vec<(f64, f64, f64)>> {
        Ok(self
            .boundary_points()?
            .iter()
            .map(|p| (p.x, p.y, p.z))
            .collect())
    }

    /// Mesh size counters.
    fn stats(&self) -> std::collections::HashMap<String, u64> {
        let s = self.inner.domain().mesh_stats();
        let mut m = std::collections::HashMap::new();
        m.insert("n_verts".into(), s.n_verts as u64);
        m.insert("n_tets".into(), s.n_tets as u64);
        m.insert("memory_bytes".into(), s.memory_bytes as u64);
        m
    }

    #[getter]
    fn scale(&self) -> f64 {
        self.inner.domain().frame().scale
    }

    #[getter]
    fn origin(&self) -> (f64, f64, f64) {
        let o = self.inner.domain().frame().origin;
        (o.x, o.y, o.z)
    }

    /// Writes the solved field to a bundle file; returns the byte count.
    fn save(&self, path: PathBuf) -> PyResult<u64> {
        save_bundle(&self.inner, &path).map_err(|e| to_py(e.into()))
    }

    /// Samples h on a regular grid and writes a VTK STRUCTURED_POINTS file;
    /// returns the sample count.
    #[pyo3(signature = (bbox, res, path, slice_z=None))]
    fn export_grid(
        &self,
        bbox: ((f64, f64, f64), (f64, f64, f64)),
        res: (usize, usize, usize),
        path: PathBuf,
        slice_z: Option<f64>,
    ) -> PyResult<u64> {
        let spec = match slice_z {
            Some(z) => GridSpec::SliceZ {
                nx: res.0,
                ny: res.1,
                z,
            },
            None => GridSpec::Volume {
                nx: res.0,
                ny: res.1,
                nz: res.2,
            },
        };
        export_grid(&self.inner, (point(bbox.0), point(bbox.1)), spec, &path)
            .map_err(|e| to_py(e.into()))
    }

    fn __repr__(&self) -> String {
        let s = self.inner.domain().mesh_stats();
        format!("Field({} vertices, {} tets)", s.n_verts, s.n_tets)
    }
}

/// Builds a field around a generated shape: "sphere" (unit radius) or
/// "cube" (unit edge). `lx` is the target exterior resolution in the
/// object's units; `sigma` is an optional constant semantic state.
#[pyfunction]
#[pyo3(signature = (shape, lx, ly_min=None, origin=None, sigma=None))]
fn build_shape(
    shape: &str,
    lx: f64,
    ly_min: Option<f64>,
    origin: Option<(f64, f64, f64)>,
    sigma: Option<f64>,
) -> PyResult<Field> {
    let surface = match shape {
        "sphere" => {
            let subdivisions = ((1.0515 / lx).log2().round() as i64).clamp(0, 6) as u32;
            mesh::shapes::icosphere(subdivisions)
        }
        "cube" => {
            let facets = (1.2 / lx).ceil().clamp(1.0, 128.0) as u32;
            mesh::shapes::cube(0.5, facets)
        }
        other => {
            return Err(PyValueError::new_err(format!(
                "unknown shape {other:?}; expected \"sphere\" or \"cube\""
            )));
        }
    };
    Field::build(surface, lx, ly_min, origin, sigma)
}

/// Builds a field around a surface mesh file (.obj or .off).
#[pyfunction]
#[pyo3(signature = (path, lx, ly_min=None, origin=None, sigma=None))]
fn build_surface(
    path: PathBuf,
    lx: f64,
    ly_min: Option<f64>,
    origin: Option<(f64, f64, f64)>,
    sigma: Option<f64>,
) -> PyResult<Field> {
    let format = match path.extension().and_then(|e| e.to_str()) {
        Some(e) if e.eq_ignore_ascii_case("obj") => SurfaceFormat::Obj,
        Some(e) if e.eq_ignore_ascii_case("off") => SurfaceFormat::Off,
        _ => {
            return Err(PyValueError::new_err(format!(
                "cannot infer surface format from {}",
                path.display()
            )));
        }
    };
    let surface = load_surface(&path, format).map_err(|e| to_py(e.into()))?;
    Field::build(surface, lx, ly_min, origin, sigma)
}

/// Loads a saved bundle. The field answers queries immediately;
/// re-solving attaches a fresh factorization on first use.
#[pyfunction]
fn load(path: PathBuf) -> PyResult<Field> {
    let inner = load_bundle(&path).map_err(|e| to_py(e.into()))?;
    Ok(Field {
        inner,
        surface: None,
    })
}

#[pymodule]
fn sadf_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<Field>()?;
    m.add_class::<QueryResult>()?;
    m.add_function(wrap_pyfunction!(build_shape, m)?)?;
    m.add_function(wrap_pyfunction!(build_surface, m)?)?;
    m.add_function(wrap_pyfunction!(load, m)?)?;
    Ok(())
}
