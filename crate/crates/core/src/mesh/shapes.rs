//! Built-in closed test surfaces. Fully deterministic: identical inputs
//! produce bit-identical meshes.

use std::collections::BTreeMap;

use nalgebra::{Point3, Vector3};

use super::SurfaceMesh;

/// Unit icosphere: subdivided icosahedron with every vertex pushed onto the
/// unit sphere. `subdivisions = s` gives `10 * 4^s + 2` vertices.
pub fn icosphere(subdivisions: u32) -> SurfaceMesh {
    let phi = (1.0 + 5f64.sqrt()) / 2.0;
    let mut vertices: Vec<Point3<f64>> = [
        (-1.0, phi, 0.0),
        (1.0, phi, 0.0),
        (-1.0, -phi, 0.0),
        (1.0, -phi, 0.0),
        (0.0, -1.0, phi),
        (0.0, 1.0, phi),
        (0.0, -1.0, -phi),
        (0.0, 1.0, -phi),
        (phi, 0.0, -1.0),
        (phi, 0.0, 1.0),
        (-phi, 0.0, -1.0),
        (-phi, 0.0, 1.0),
    ]
    .iter()
    .map(|&(x, y, z)| Point3::from(Vector3::new(x, y, z).normalize()))
    .collect();

    let mut triangles: Vec<[u32; 3]> = vec![
        [0, 11, 5],
        [0, 5, 1],
        [0, 1, 7],
        [0, 7, 10],
        [0, 10, 11],
        [1, 5, 9],
        [5, 11, 4],
        [11, 10, 2],
        [10, 7, 6],
        [7, 1, 8],
        [3, 9, 4],
        [3, 4, 2],
        [3, 2, 6],
        [3, 6, 8],
        [3, 8, 9],
        [4, 9, 5],
        [2, 4, 11],
        [6, 2, 10],
        [8, 6, 7],
        [9, 8, 1],
    ];

    for _ in 0..subdivisions {
        let mut midpoint: BTreeMap<(u32, u32), u32> = BTreeMap::new();
        let mut mid = |a: u32, b: u32, vs: &mut Vec<Point3<f64>>| -> u32 {
            let key = (a.min(b), a.max(b));
            *midpoint.entry(key).or_insert_with(|| {
                let m = (vs[a as usize].coords + vs[b as usize].coords) / 2.0;
                vs.push(Point3::from(m.normalize()));
                (vs.len() - 1) as u32
            })
        };
        let mut next = Vec::with_capacity(triangles.len() * 4);
        for &[a, b, c] in &triangles {
            let ab = mid(a, b, &mut vertices);
            let bc = mid(b, c, &mut vertices);
            let ca = mid(c, a, &mut vertices);
            next.push([a, ab, ca]);
            next.push([b, bc, ab]);
            next.push([c, ca, bc]);
            next.push([ab, bc, ca]);
        }
        triangles = next;
    }

    SurfaceMesh::new(vertices, triangles).expect("icosphere construction is valid")
}

/// Axis-aligned box surface centered at the origin with the given half
/// extents, each face gridded `n x n` (shared edges welded).
pub fn cuboid(half: Vector3<f64>, n: u32) -> SurfaceMesh {
    assert!(n >= 1, "cuboid needs at least one cell per face edge");
    assert!(half.x > 0.0 && half.y > 0.0 && half.z > 0.0);
    let n_i = n as i64;
    let mut index: BTreeMap<(i64, i64, i64), u32> = BTreeMap::new();
    let mut vertices: Vec<Point3<f64>> = Vec::new();
    let mut vertex_at = |key: (i64, i64, i64)| -> u32 {
        *index.entry(key).or_insert_with(|| {
            let p = Point3::new(
                half.x * (2.0 * key.0 as f64 / n as f64 - 1.0),
                half.y * (2.0 * key.1 as f64 / n as f64 - 1.0),
                half.z * (2.0 * key.2 as f64 / n as f64 - 1.0),
            );
            vertices.push(p);
            (vertices.len() - 1) as u32
        })
    };

    // (fixed axis, lattice value, u axis, v axis); u x v points along the
    // outward normal on every face.
    let faces: [(usize, i64, usize, usize); 6] = [
        (0, n_i, 1, 2),
        (0, 0, 2, 1),
        (1, n_i, 2, 0),
        (1, 0, 0, 2),
        (2, n_i, 0, 1),
        (2, 0, 1, 0),
    ];

    let mut triangles = Vec::with_capacity(6 * (n as usize) * (n as usize) * 2);
    for (axis, level, ua, va) in faces {
        let corner = |u: i64, v: i64| -> (i64, i64, i64) {
            let mut k = [0i64; 3];
            k[axis] = level;
            k[ua] = u;
            k[va] = v;
            (k[0], k[1], k[2])
        };
        for u in 0..n_i {
            for v in 0..n_i {
                let p00 = vertex_at(corner(u, v));
                let p10 = vertex_at(corner(u + 1, v));
                let p01 = vertex_at(corner(u, v + 1));
                let p11 = vertex_at(corner(u + 1, v + 1));
                triangles.push([p00, p10, p11]);
                triangles.push([p00, p11, p01]);
            }
        }
    }

    SurfaceMesh::new(vertices, triangles).expect("cuboid construction is valid")
}

/// Cube with half side `half`, `n x n` cells per face. `n = 1` gives the
/// canonical 8-vertex, 12-triangle cube.
pub fn cube(half: f64, n: u32) -> SurfaceMesh {
    cuboid(Vector3::new(half, half, half), n)
}

/// Torus around the z axis; major radius `r_major`, tube radius `r_minor`.
/// Not star-shaped with respect to its centroid, which is in the hole.
pub fn torus(r_major: f64, r_minor: f64, n_major: u32, n_minor: u32) -> SurfaceMesh {
    assert!(r_major > r_minor && r_minor > 0.0);
    assert!(n_major >= 3 && n_minor >= 3);
    let mut vertices = Vec::with_capacity((n_major * n_minor) as usize);
    for i in 0..n_major {
        let u = 2.0 * std::f64::consts::PI * i as f64 / n_major as f64;
        for j in 0..n_minor {
            let v = 2.0 * std::f64::consts::PI * j as f64 / n_minor as f64;
            let ring = r_major + r_minor * v.cos();
            vertices.push(Point3::new(ring * u.cos(), ring * u.sin(), r_minor * v.sin()));
        }
    }
    let at = |i: u32, j: u32| (i % n_major) * n_minor + (j % n_minor);
    let mut triangles = Vec::with_capacity((n_major * n_minor * 2) as usize);
    for i in 0..n_major {
        for j in 0..n_minor {
            let p00 = at(i, j);
            let p10 = at(i + 1, j);
            let p11 = at(i + 1, j + 1);
            let p01 = at(i, j + 1);
            triangles.push([p00, p10, p11]);
            triangles.push([p00, p11, p01]);
        }
    }
    SurfaceMesh::new(vertices, triangles).expect("torus construction is valid")
}
