//! Mesh file ingestion: OBJ/OFF surfaces, Gmsh 2.2 and TetGen tet meshes.
//! Strict parsers; malformed input is rejected, never repaired.

use std::fs;
use std::path::Path;

use nalgebra::Point3;

use super::{MeshError, SurfaceMesh, TetDomain, BOUNDARY_MATCH_TOL, NO_TET, ORIGIN_VERTEX_TOL};
use crate::kelvin::InversionFrame;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SurfaceFormat {
    Obj,
    Off,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TetMeshFormat {
    /// Gmsh MSH 2.2 ASCII, element type 4.
    GmshV2Ascii,
    /// TetGen `.node`/`.ele` pair; pass the `.node` path or the basename.
    TetGenNodeEle,
}

/// Loads and validates a closed triangle surface.
pub fn load_surface(path: &Path, format: SurfaceFormat) -> Result<SurfaceMesh, MeshError> {
    let text = read(path)?;
    let (vertices, triangles) = match format {
        SurfaceFormat::Obj => parse_obj(path, &text)?,
        SurfaceFormat::Off => parse_off(path, &text)?,
    };
    SurfaceMesh::new(vertices, triangles)
}

/// Loads an externally generated tet mesh of the inverted domain and binds
/// it to `surface`: complex boundary vertices must match the inverted
/// surface vertices within [`BOUNDARY_MATCH_TOL`], boundary triangles must
/// coincide combinatorially, and a vertex within [`ORIGIN_VERTEX_TOL`] of
/// y = 0 must exist.
pub fn load_tet_mesh(
    path: &Path,
    format: TetMeshFormat,
    frame: InversionFrame,
    surface: &SurfaceMesh,
) -> Result<TetDomain, MeshError> {
    let (vertices, tets) = match format {
        TetMeshFormat::GmshV2Ascii => parse_gmsh(path)?,
        TetMeshFormat::TetGenNodeEle => parse_tetgen(path)?,
    };

    let inverted: Vec<Point3<f64>> = surface
        .vertices()
        .iter()
        .map(|&p| Ok(Point3::from(frame.to_inverted(p)?)))
        .collect::<Result<_, MeshError>>()?;

    // Boundary vertices of the complex: vertices of faces with one incident
    // tet. Recomputed cheaply here; from_parts rebuilds full adjacency later.
    let boundary_ids = complex_boundary_vertices(vertices.len(), &tets)?;
    if boundary_ids.len() != inverted.len() {
        return Err(MeshError::BoundaryMismatch(format!(
            "{} boundary vertices in the file, {} on the inverted surface",
            boundary_ids.len(),
            inverted.len()
        )));
    }

    let pairs = match_boundary(&boundary_ids, &vertices, &inverted)?;

    // Origin vertex: nearest to y = 0, must be interior and close enough.
    let mut origin_vertex = None;
    let mut best = f64::INFINITY;
    for (i, v) in vertices.iter().enumerate() {
        let r = v.coords.norm();
        if r < best {
            best = r;
            origin_vertex = Some(i as u32);
        }
    }
    let origin_vertex = origin_vertex.ok_or(MeshError::MissingOriginVertex)?;
    if best >= ORIGIN_VERTEX_TOL {
        return Err(MeshError::MissingOriginVertex);
    }

    let domain = TetDomain::from_parts(vertices, tets, pairs, origin_vertex, frame, false)?;

    // Combinatorial boundary check: complex boundary triangles are exactly
    // the surface triangles, under the vertex match.
    let mut to_surface = vec![NO_TET; domain.n_vertices()];
    for (&dv, &sv) in domain
        .boundary_vertex_ids()
        .iter()
        .zip(domain.boundary_surface_ids())
    {
        to_surface[dv as usize] = sv;
    }
    let sort3 = |mut f: [u32; 3]| {
        f.sort_unstable();
        f
    };
    let mut complex_faces: Vec<[u32; 3]> = Vec::new();
    for face in domain.boundary_faces() {
        let mapped = face.map(|v| to_surface[v as usize]);
        if mapped.contains(&NO_TET) {
            return Err(MeshError::BoundaryMismatch(format!(
                "boundary face ({}, {}, {}) contains a vertex not matched to the surface",
                face[0], face[1], face[2]
            )));
        }
        complex_faces.push(sort3(mapped));
    }
    complex_faces.sort_unstable();
    let mut surface_faces: Vec<[u32; 3]> =
        surface.triangles().iter().map(|&t| sort3(t)).collect();
    surface_faces.sort_unstable();
    if complex_faces != surface_faces {
        return Err(MeshError::BoundaryMismatch(
            "boundary triangles do not match the inverted surface triangulation".into(),
        ));
    }

    Ok(domain)
}

fn read(path: &Path) -> Result<String, MeshError> {
    fs::read_to_string(path).map_err(|source| MeshError::Io {
        path: path.display().to_string(),
        source,
    })
}

fn parse_err(path: &Path, line: usize, msg: impl Into<String>) -> MeshError {
    MeshError::ParseError {
        path: path.display().to_string(),
        line,
        msg: msg.into(),
    }
}

fn parse_f64(path: &Path, line: usize, tok: &str) -> Result<f64, MeshError> {
    tok.parse::<f64>()
        .map_err(|_| parse_err(path, line, format!("bad float {tok:?}")))
}

fn parse_usize(path: &Path, line: usize, tok: &str) -> Result<usize, MeshError> {
    tok.parse::<usize>()
        .map_err(|_| parse_err(path, line, format!("bad integer {tok:?}")))
}

type RawSurface = (Vec<Point3<f64>>, Vec<[u32; 3]>);
type RawTets = (Vec<Point3<f64>>, Vec<[u32; 4]>);

fn parse_obj(path: &Path, text: &str) -> Result<RawSurface, MeshError> {
    let mut vertices = Vec::new();
    let mut triangles = Vec::new();
    for (ln, raw) in text.lines().enumerate() {
        let line_no = ln + 1;
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let mut toks = line.split_whitespace();
        match toks.next() {
            Some("v") => {
                let mut coords = [0.0; 3];
                for c in &mut coords {
                    let tok = toks
                        .next()
                        .ok_or_else(|| parse_err(path, line_no, "vertex needs 3 coordinates"))?;
                    *c = parse_f64(path, line_no, tok)?;
                }
                vertices.push(Point3::new(coords[0], coords[1], coords[2]));
            }
            Some("f") => {
                let mut idx = Vec::with_capacity(3);
                for tok in toks {
                    let first = tok.split('/').next().unwrap_or("");
                    let i = parse_usize(path, line_no, first)?;
                    if i == 0 || i > vertices.len() {
                        return Err(parse_err(
                            path,
                            line_no,
                            format!("face index {i} out of range (1..={})", vertices.len()),
                        ));
                    }
                    idx.push((i - 1) as u32);
                }
                if idx.len() != 3 {
                    return Err(parse_err(
                        path,
                        line_no,
                        format!("face has {} vertices; triangles only", idx.len()),
                    ));
                }
                triangles.push([idx[0], idx[1], idx[2]]);
            }
            // Normals, texcoords, groups, materials: irrelevant here.
            _ => {}
        }
    }
    if triangles.is_empty() {
        return Err(parse_err(path, 0, "no faces found"));
    }
    Ok((vertices, triangles))
}

fn parse_off(path: &Path, text: &str) -> Result<RawSurface, MeshError> {
    let mut lines = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'));

    let (ln, header) = lines
        .next()
        .ok_or_else(|| parse_err(path, 0, "empty file"))?;
    if header != "OFF" {
        return Err(parse_err(path, ln, format!("expected OFF header, got {header:?}")));
    }
    let (ln, counts) = lines
        .next()
        .ok_or_else(|| parse_err(path, ln, "missing count line"))?;
    let toks: Vec<&str> = counts.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(parse_err(path, ln, "count line needs nV nF [nE]"));
    }
    let nv = parse_usize(path, ln, toks[0])?;
    let nf = parse_usize(path, ln, toks[1])?;

    let mut vertices = Vec::with_capacity(nv);
    for _ in 0..nv {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "unexpected end of vertex list"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(path, ln, "vertex needs 3 coordinates"));
        }
        vertices.push(Point3::new(
            parse_f64(path, ln, toks[0])?,
            parse_f64(path, ln, toks[1])?,
            parse_f64(path, ln, toks[2])?,
        ));
    }
    let mut triangles = Vec::with_capacity(nf);
    for _ in 0..nf {
        let (ln, line) = lines
            .next()
            .ok_or_else(|| parse_err(path, 0, "unexpected end of face list"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.is_empty() {
            return Err(parse_err(path, ln, "empty face line"));
        }
        let k = parse_usize(path, ln, toks[0])?;
        if k != 3 {
            return Err(parse_err(path, ln, format!("face has {k} vertices; triangles only")));
        }
        if toks.len() < 4 {
            return Err(parse_err(path, ln, "face needs 3 indices"));
        }
        let mut tri = [0u32; 3];
        for (slot, tok) in tri.iter_mut().zip(&toks[1..4]) {
            let i = parse_usize(path, ln, tok)?;
            if i >= nv {
                return Err(parse_err(path, ln, format!("face index {i} out of range 0..{nv}")));
            }
            *slot = i as u32;
        }
        triangles.push(tri);
    }
    Ok((vertices, triangles))
}

fn parse_gmsh(path: &Path) -> Result<RawTets, MeshError> {
    let text = read(path)?;
    let lines: Vec<(usize, &str)> = text
        .lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .collect();
    let mut pos = 0usize;
    let mut next = |expect: Option<&str>| -> Result<(usize, &str), MeshError> {
        while pos < lines.len() && lines[pos].1.is_empty() {
            pos += 1;
        }
        if pos >= lines.len() {
            return Err(parse_err(path, 0, "unexpected end of file"));
        }
        let item = lines[pos];
        pos += 1;
        if let Some(e) = expect {
            if item.1 != e {
                return Err(parse_err(path, item.0, format!("expected {e:?}, got {:?}", item.1)));
            }
        }
        Ok(item)
    };

    next(Some("$MeshFormat"))?;
    let (ln, version) = next(None)?;
    if !version.starts_with("2.2") {
        return Err(parse_err(path, ln, format!("unsupported MSH version {version:?}; need 2.2 ASCII")));
    }
    next(Some("$EndMeshFormat"))?;

    next(Some("$Nodes"))?;
    let (ln, count) = next(None)?;
    let n_nodes = parse_usize(path, ln, count)?;
    let mut vertices = Vec::with_capacity(n_nodes);
    let mut id_to_index = std::collections::HashMap::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, line) = next(None)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() != 4 {
            return Err(parse_err(path, ln, "node line needs: id x y z"));
        }
        let id = parse_usize(path, ln, toks[0])?;
        if id_to_index.insert(id, vertices.len() as u32).is_some() {
            return Err(parse_err(path, ln, format!("duplicate node id {id}")));
        }
        vertices.push(Point3::new(
            parse_f64(path, ln, toks[1])?,
            parse_f64(path, ln, toks[2])?,
            parse_f64(path, ln, toks[3])?,
        ));
    }
    next(Some("$EndNodes"))?;

    next(Some("$Elements"))?;
    let (ln, count) = next(None)?;
    let n_elems = parse_usize(path, ln, count)?;
    let mut tets = Vec::new();
    for _ in 0..n_elems {
        let (ln, line) = next(None)?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 3 {
            return Err(parse_err(path, ln, "element line needs: id type ntags ..."));
        }
        let ty = parse_usize(path, ln, toks[1])?;
        let ntags = parse_usize(path, ln, toks[2])?;
        if ty != 4 {
            // Boundary triangles, points etc. accompany volume meshes; only
            // type 4 (4-node tet) carries the domain.
            continue;
        }
        if toks.len() != 3 + ntags + 4 {
            return Err(parse_err(path, ln, "tet element needs exactly 4 node ids"));
        }
        let mut tet = [0u32; 4];
        for (slot, tok) in tet.iter_mut().zip(&toks[3 + ntags..]) {
            let id = parse_usize(path, ln, tok)?;
            *slot = *id_to_index
                .get(&id)
                .ok_or_else(|| parse_err(path, ln, format!("unknown node id {id}")))?;
        }
        tets.push(tet);
    }
    next(Some("$EndElements"))?;

    if tets.is_empty() {
        return Err(parse_err(path, 0, "no type-4 (tet) elements found"));
    }
    Ok((vertices, tets))
}

fn parse_tetgen(path: &Path) -> Result<RawTets, MeshError> {
    let base = path.to_string_lossy();
    let base = base
        .strip_suffix(".node")
        .or_else(|| base.strip_suffix(".ele"))
        .unwrap_or(&base)
        .to_string();
    let node_path = std::path::PathBuf::from(format!("{base}.node"));
    let ele_path = std::path::PathBuf::from(format!("{base}.ele"));

    let node_text = read(&node_path)?;
    let mut node_lines = content_lines(&node_text);
    let (ln, header) = node_lines
        .next()
        .ok_or_else(|| parse_err(&node_path, 0, "empty .node file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.is_empty() {
        return Err(parse_err(&node_path, ln, "missing header"));
    }
    let n_nodes = parse_usize(&node_path, ln, toks[0])?;
    if toks.len() >= 2 && toks[1] != "3" {
        return Err(parse_err(&node_path, ln, "dimension must be 3"));
    }

    let mut ids = Vec::with_capacity(n_nodes);
    let mut vertices = Vec::with_capacity(n_nodes);
    for _ in 0..n_nodes {
        let (ln, line) = node_lines
            .next()
            .ok_or_else(|| parse_err(&node_path, 0, "unexpected end of node list"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 4 {
            return Err(parse_err(&node_path, ln, "node line needs: id x y z"));
        }
        ids.push(parse_usize(&node_path, ln, toks[0])?);
        vertices.push(Point3::new(
            parse_f64(&node_path, ln, toks[1])?,
            parse_f64(&node_path, ln, toks[2])?,
            parse_f64(&node_path, ln, toks[3])?,
        ));
    }
    // TetGen numbers nodes from 0 or 1; the first id says which.
    let index_base = *ids.first().unwrap_or(&0);
    if index_base > 1 {
        return Err(parse_err(&node_path, 0, "node ids must start at 0 or 1"));
    }
    for (k, &id) in ids.iter().enumerate() {
        if id != k + index_base {
            return Err(parse_err(&node_path, 0, format!("non-sequential node id {id}")));
        }
    }

    let ele_text = read(&ele_path)?;
    let mut ele_lines = content_lines(&ele_text);
    let (ln, header) = ele_lines
        .next()
        .ok_or_else(|| parse_err(&ele_path, 0, "empty .ele file"))?;
    let toks: Vec<&str> = header.split_whitespace().collect();
    if toks.len() < 2 {
        return Err(parse_err(&ele_path, ln, "header needs: ntets nodes_per_tet"));
    }
    let n_tets = parse_usize(&ele_path, ln, toks[0])?;
    if toks[1] != "4" {
        return Err(parse_err(&ele_path, ln, "only 4-node tets are supported"));
    }

    let mut tets = Vec::with_capacity(n_tets);
    for _ in 0..n_tets {
        let (ln, line) = ele_lines
            .next()
            .ok_or_else(|| parse_err(&ele_path, 0, "unexpected end of element list"))?;
        let toks: Vec<&str> = line.split_whitespace().collect();
        if toks.len() < 5 {
            return Err(parse_err(&ele_path, ln, "element line needs: id v0 v1 v2 v3"));
        }
        let mut tet = [0u32; 4];
        for (slot, tok) in tet.iter_mut().zip(&toks[1..5]) {
            let id = parse_usize(&ele_path, ln, tok)?;
            if id < index_base || id - index_base >= vertices.len() {
                return Err(parse_err(&ele_path, ln, format!("node id {id} out of range")));
            }
            *slot = (id - index_base) as u32;
        }
        tets.push(tet);
    }
    Ok((vertices, tets))
}

fn content_lines(text: &str) -> impl Iterator<Item = (usize, &str)> {
    text.lines()
        .enumerate()
        .map(|(i, l)| (i + 1, l.trim()))
        .filter(|(_, l)| !l.is_empty() && !l.starts_with('#'))
}

/// Vertices of faces incident to exactly one tet.
fn complex_boundary_vertices(n_vertices: usize, tets: &[[u32; 4]]) -> Result<Vec<u32>, MeshError> {
    use std::collections::HashMap;
    let mut faces: HashMap<[u32; 3], u8> = HashMap::with_capacity(tets.len() * 2);
    for tet in tets {
        for k in 0..4 {
            let mut face = [0u32; 3];
            let mut w = 0;
            for (j, &v) in tet.iter().enumerate() {
                if v as usize >= n_vertices {
                    return Err(MeshError::BadIndex { index: v, n_vertices });
                }
                if j != k {
                    face[w] = v;
                    w += 1;
                }
            }
            face.sort_unstable();
            *faces.entry(face).or_insert(0) += 1;
        }
    }
    let mut on_boundary = vec![false; n_vertices];
    for (face, count) in &faces {
        if *count == 1 {
            for &v in face {
                on_boundary[v as usize] = true;
            }
        }
    }
    Ok((0..n_vertices as u32)
        .filter(|&v| on_boundary[v as usize])
        .collect())
}

/// Bijective nearest-vertex match between complex boundary vertices and
/// inverted surface vertices, tolerance [`BOUNDARY_MATCH_TOL`].
fn match_boundary(
    boundary_ids: &[u32],
    vertices: &[Point3<f64>],
    inverted: &[Point3<f64>],
) -> Result<Vec<(u32, u32)>, MeshError> {
    let mut by_x: Vec<u32> = (0..inverted.len() as u32).collect();
    by_x.sort_unstable_by(|&a, &b| inverted[a as usize].x.total_cmp(&inverted[b as usize].x));
    let xs: Vec<f64> = by_x.iter().map(|&i| inverted[i as usize].x).collect();

    let mut taken = vec![false; inverted.len()];
    let mut pairs = Vec::with_capacity(boundary_ids.len());
    for &dv in boundary_ids {
        let p = vertices[dv as usize];
        let lo = xs.partition_point(|&x| x < p.x - BOUNDARY_MATCH_TOL);
        let mut matched = None;
        for k in lo..xs.len() {
            if xs[k] > p.x + BOUNDARY_MATCH_TOL {
                break;
            }
            let sv = by_x[k];
            if (inverted[sv as usize] - p).norm() <= BOUNDARY_MATCH_TOL {
                matched = Some(sv);
                break;
            }
        }
        let sv = matched.ok_or_else(|| {
            MeshError::BoundaryMismatch(format!(
                "boundary vertex {dv} at ({}, {}, {}) has no inverted-surface match within {BOUNDARY_MATCH_TOL:e}",
                p.x, p.y, p.z
            ))
        })?;
        if taken[sv as usize] {
            return Err(MeshError::BoundaryMismatch(format!(
                "inverted surface vertex {sv} matched twice"
            )));
        }
        taken[sv as usize] = true;
        pairs.push((dv, sv));
    }
    Ok(pairs)
}
