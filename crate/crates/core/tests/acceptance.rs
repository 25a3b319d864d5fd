//! Acceptance gate for the whole pipeline. Each criterion runs once, prints a
//! single PASS/FAIL line with the measured numbers, and the test fails at the
//! end if any line failed. A panic inside one criterion does not stop the
//! others, so the full scoreboard always prints.

use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use nalgebra::{Point3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;
use sadf::field::{locate, BARY_TOL};
use sadf::mesh::{min_inverted_edge, shapes};
use sadf::semantics::SIGMA_LIMIT;
use sadf::{
    assemble_laplacian, build_field, export_grid, factorize, generate_star_shaped,
    inversion_frame, load_bundle, save_bundle, sigma_profile, vertex_gradients, Field,
    GradientMode, GridSpec, OperatorSet, QueryOutcome, QueryResult, SemanticProfile,
    SemanticState, SizingField, SurfaceMesh, TetDomain,
};

/// Writes directly to fd 1, past libtest's output capture: the scoreboard
/// must reach the console in plain `cargo test` runs, not only under
/// `--nocapture`.
#[cfg(unix)]
fn announce(line: String) {
    use std::io::Write;
    use std::os::unix::io::FromRawFd;
    let mut out = unsafe { std::fs::File::from_raw_fd(1) };
    let _ = writeln!(out, "{line}");
    let _ = out.flush();
    // fd 1 belongs to the process, not this File.
    std::mem::forget(out);
}

#[cfg(not(unix))]
fn announce(line: String) {
    println!("{line}");
}

fn run_criterion(
    results: &mut Vec<(u32, &'static str, Result<String, String>)>,
    n: u32,
    name: &'static str,
    body: impl FnOnce() -> Result<String, String>,
) {
    let outcome = match catch_unwind(AssertUnwindSafe(body)) {
        Ok(r) => r,
        Err(payload) => {
            let msg = payload
                .downcast_ref::<&str>()
                .map(|s| s.to_string())
                .or_else(|| payload.downcast_ref::<String>().cloned())
                .unwrap_or_else(|| "opaque panic payload".into());
            Err(format!("panicked: {msg}"))
        }
    };
    let line = match &outcome {
        Ok(detail) => format!("ACCEPTANCE {n} ({name}): PASS; {detail}"),
        Err(msg) => format!("ACCEPTANCE {n} ({name}): FAIL; {msg}"),
    };
    announce(line);
    results.push((n, name, outcome));
}

struct Built {
    surface: SurfaceMesh,
    domain: Arc<TetDomain>,
    ops: Arc<OperatorSet>,
    field: Field,
}

fn build_fixture(
    surface: SurfaceMesh,
    origin: Option<Point3<f64>>,
    lx: f64,
    floor: Option<f64>,
    state: SemanticState,
) -> Built {
    let frame = inversion_frame(&surface, origin).expect("inversion frame");
    let floor = floor.unwrap_or_else(|| {
        (0.5 * min_inverted_edge(&surface, &frame).expect("surface edges")).min(0.2)
    });
    let domain = Arc::new(
        generate_star_shaped(&surface, frame, SizingField::new(lx, floor)).expect("tet mesh"),
    );
    let ops = Arc::new(assemble_laplacian(&domain).expect("stiffness assembly"));
    let handle = Arc::new(factorize(&ops).expect("factorization"));
    let field =
        build_field(&surface, domain.clone(), ops.clone(), handle, state).expect("boundary solve");
    Built {
        surface,
        domain,
        ops,
        field,
    }
}

fn unit_dirs(rng: &mut ChaCha8Rng, n: usize) -> Vec<Vector3<f64>> {
    let mut dirs = Vec::with_capacity(n);
    while dirs.len() < n {
        let v = Vector3::new(
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
            rng.random_range(-1.0..=1.0),
        );
        let norm = v.norm();
        if norm > 1e-3 && norm <= 1.0 {
            dirs.push(v / norm);
        }
    }
    dirs
}

fn query_exterior(field: &Field, x: Point3<f64>, hint: Option<u32>) -> QueryResult {
    match field.query(x, hint).expect("query") {
        QueryOutcome::Exterior(q) => q,
        QueryOutcome::InsideObject => panic!("{x:?} unexpectedly classified inside the object"),
    }
}

fn median(mut v: Vec<f64>) -> f64 {
    v.sort_by(|a, b| a.total_cmp(b));
    let n = v.len();
    if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    }
}

/// Independent point-in-tet oracle via signed volumes, deliberately not the
/// production barycentric path.
fn oracle_bary(domain: &TetDomain, t: usize, y: Vector3<f64>) -> [f64; 4] {
    let p = domain.tet_points(t);
    let vol = |a: Point3<f64>, b: Point3<f64>, c: Point3<f64>, d: Point3<f64>| {
        (b - a).cross(&(c - a)).dot(&(d - a)) / 6.0
    };
    let yp = Point3::from(y);
    let v = vol(p[0], p[1], p[2], p[3]);
    [
        vol(yp, p[1], p[2], p[3]) / v,
        vol(p[0], yp, p[2], p[3]) / v,
        vol(p[0], p[1], yp, p[3]) / v,
        vol(p[0], p[1], p[2], yp) / v,
    ]
}

fn oracle_contains(domain: &TetDomain, t: usize, y: Vector3<f64>) -> bool {
    oracle_bary(domain, t, y).iter().all(|&l| l >= -BARY_TOL)
}

fn share_face(domain: &TetDomain, a: u32, b: u32) -> bool {
    let ta = domain.tets()[a as usize];
    let tb = domain.tets()[b as usize];
    let shared = ta.iter().filter(|v| tb.contains(v)).count();
    shared >= 3
}

/// Structural check of a STRUCTURED_POINTS export: header grammar, dimension
/// consistency, and one parseable scalar per declared point.
fn parse_vtk(path: &Path) -> Result<Vec<f64>, String> {
    let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
    let mut lines = text.lines();
    if !lines
        .next()
        .ok_or("empty file")?
        .starts_with("# vtk DataFile Version")
    {
        return Err("missing vtk header".into());
    }
    lines.next().ok_or("missing title")?;
    if lines.next() != Some("ASCII") {
        return Err("expected ASCII encoding".into());
    }
    if lines.next() != Some("DATASET STRUCTURED_POINTS") {
        return Err("expected STRUCTURED_POINTS".into());
    }
    let mut dims = 0usize;
    let mut declared = 0usize;
    let mut in_data = false;
    let mut values = Vec::new();
    for line in lines {
        if let Some(rest) = line.strip_prefix("DIMENSIONS") {
            let d: Vec<usize> = rest
                .split_whitespace()
                .map(|t| t.parse().unwrap_or(0))
                .collect();
            if d.len() != 3 || d.contains(&0) {
                return Err(format!("bad DIMENSIONS line: {line}"));
            }
            dims = d[0] * d[1] * d[2];
        } else if let Some(rest) = line.strip_prefix("POINT_DATA") {
            declared = rest
                .trim()
                .parse()
                .map_err(|_| format!("bad POINT_DATA line: {line}"))?;
        } else if line.starts_with("LOOKUP_TABLE") {
            in_data = true;
        } else if in_data {
            for tok in line.split_whitespace() {
                values.push(tok.parse::<f64>().map_err(|_| format!("bad scalar {tok}"))?);
            }
        }
    }
    if dims == 0 || dims != declared || values.len() != dims {
        return Err(format!(
            "grid size mismatch: dims {dims}, POINT_DATA {declared}, {} scalars",
            values.len()
        ));
    }
    Ok(values)
}

/// Recomputes the interior residual and the interior excursion beyond the
/// boundary-value range from the assembled blocks, independent of the
/// solver's own accounting.
fn residual_and_overshoot(b: &Built) -> (f64, f64, f64) {
    let sol = b.field.solution();
    let rhs = b.ops.coupling_block.mul_vec(&sol.v_boundary);
    let av = b.ops.interior_block.mul_vec(&sol.v_interior);
    let mut resid = 0.0f64;
    for i in 0..av.len() {
        resid = resid.max((av[i] + rhs[i]).abs());
    }
    let rhs_norm = rhs.iter().fold(0.0f64, |acc, v| acc.max(v.abs()));
    let bound = 1e-10 * rhs_norm.max(1.0);
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for &v in &sol.v_boundary {
        lo = lo.min(v);
        hi = hi.max(v);
    }
    let mut overshoot = 0.0f64;
    for &v in &sol.v_interior {
        overshoot = overshoot.max(lo - v).max(v - hi);
    }
    (resid, bound, overshoot)
}

/// Max |h - sigma_v| over queries at the original surface vertex positions.
fn boundary_error(b: &Built, sigma: &[f64]) -> f64 {
    let mut worst = 0.0f64;
    let mut hint = None;
    for (v, &s) in b.surface.vertices().iter().zip(sigma) {
        let q = query_exterior(&b.field, *v, hint);
        hint = Some(q.tet_hint);
        worst = worst.max((q.h - s).abs());
    }
    worst
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    // Off-center inversion origin: keeps the boundary data non-constant so
    // the sphere solves are not degenerate (the analytic answer stays
    // h = ln|x|), while small enough that even the coarsest level's chordal
    // boundary stays inside the |x| = 1.1 sampling shell.
    let off_center = Point3::new(0.1, 0.05, 0.02);

    // Shared fixtures. The three sphere levels back criteria 1 and 7; the
    // re-solve fixture backs criteria 4 and 5.
    let t_levels = Instant::now();
    let sphere_levels: Vec<(f64, Built)> = [(1u32, 0.2), (2, 0.1), (3, 0.05)]
        .into_iter()
        .map(|(subdiv, lx)| {
            let surf = shapes::icosphere(subdiv);
            let state = SemanticState::constant(0.0, surf.n_vertices()).expect("zero sigma");
            (lx, build_fixture(surf, Some(off_center), lx, None, state))
        })
        .collect();
    let t_levels = t_levels.elapsed();

    let big = {
        let surf = shapes::icosphere(3);
        let state = SemanticState::constant(0.0, surf.n_vertices()).expect("zero sigma");
        build_fixture(surf, Some(off_center), 0.035, Some(0.03), state)
    };

    // Criterion 1: with sigma = 0 the field must reproduce ln|x| on the unit
    // sphere, converging under refinement and exact on the boundary.
    run_criterion(&mut results, 1, "analytic sphere", || {
        let t_eval = Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0001);
        let dirs = unit_dirs(&mut rng, 10_000);
        let radii: Vec<f64> = (0..dirs.len())
            .map(|_| rng.random_range(1.1..=3.0))
            .collect();
        let mut rmse = Vec::new();
        let mut worst_boundary = 0.0f64;
        for (_, level) in &sphere_levels {
            let mut se = 0.0;
            let mut hint = None;
            for (d, &r) in dirs.iter().zip(&radii) {
                let q = query_exterior(&level.field, Point3::origin() + r * d, hint);
                hint = Some(q.tet_hint);
                se += (q.h - r.ln()).powi(2);
            }
            rmse.push((se / dirs.len() as f64).sqrt());
            let zeros = vec![0.0; level.surface.n_vertices()];
            worst_boundary = worst_boundary.max(boundary_error(level, &zeros));
        }
        let runtime = t_levels + t_eval.elapsed();
        for w in rmse.windows(2) {
            if !(w[1] < w[0]) {
                return Err(format!("rmse not strictly decreasing: {rmse:?}"));
            }
        }
        let finest = *rmse.last().expect("levels");
        if !(finest < 0.02) {
            return Err(format!("finest rmse {finest:.3e} >= 0.02"));
        }
        if !(worst_boundary < 1e-9) {
            return Err(format!("boundary error {worst_boundary:.3e} >= 1e-9"));
        }
        if runtime > Duration::from_secs(60) {
            return Err(format!("runtime {:.1}s > 60s", runtime.as_secs_f64()));
        }
        Ok(format!(
            "rmse {:.2e} / {:.2e} / {:.2e}, boundary {:.1e}, {:.1}s",
            rmse[0],
            rmse[1],
            rmse[2],
            worst_boundary,
            runtime.as_secs_f64()
        ))
    });

    // Random-sigma fixtures, shared by criteria 2, 3, 7, and 8.
    let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0002);
    let sphere_sigma: Vec<f64> = (0..shapes::icosphere(2).n_vertices())
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let rand_sphere = {
        let surf = shapes::icosphere(2);
        let state = SemanticState::from_table(sphere_sigma.clone()).expect("sigma");
        build_fixture(surf, None, 0.1, None, state)
    };
    let cube_sigma: Vec<f64> = (0..shapes::cube(0.5, 8).n_vertices())
        .map(|_| rng.random_range(-1.0..=1.0))
        .collect();
    let rand_cube = {
        let surf = shapes::cube(0.5, 8);
        let state = SemanticState::from_table(cube_sigma.clone()).expect("sigma");
        build_fixture(surf, None, 0.15, None, state)
    };

    // Criterion 2: the boundary condition is interpolated, not approximated:
    // queries at surface vertices return sigma to solver precision.
    run_criterion(&mut results, 2, "boundary exactness", || {
        let sphere_err = boundary_error(&rand_sphere, &sphere_sigma);
        let cube_err = boundary_error(&rand_cube, &cube_sigma);
        if !(sphere_err < 1e-9 && cube_err < 1e-9) {
            return Err(format!(
                "max |h - sigma|: sphere {sphere_err:.3e}, cube {cube_err:.3e} (need < 1e-9)"
            ));
        }
        Ok(format!(
            "max |h - sigma|: sphere {sphere_err:.1e}, cube {cube_err:.1e}"
        ))
    });

    // Criterion 3: linear-solver health on every fixture built above:
    // tight residual and no interior excursion past the boundary range.
    run_criterion(&mut results, 3, "residual and range", || {
        let mut worst_ratio = 0.0f64;
        let mut worst_overshoot = 0.0f64;
        let fixtures: Vec<(&str, &Built)> = vec![
            ("sphere-coarse", &sphere_levels[0].1),
            ("sphere-mid", &sphere_levels[1].1),
            ("sphere-fine", &sphere_levels[2].1),
            ("resolve", &big),
            ("rand-sphere", &rand_sphere),
            ("rand-cube", &rand_cube),
        ];
        for (label, b) in fixtures {
            let (resid, bound, overshoot) = residual_and_overshoot(b);
            if resid > bound {
                return Err(format!("{label}: residual {resid:.3e} > bound {bound:.3e}"));
            }
            if overshoot > 1e-12 {
                return Err(format!(
                    "{label}: interior leaves boundary range by {overshoot:.3e}"
                ));
            }
            worst_ratio = worst_ratio.max(resid / bound);
            worst_overshoot = worst_overshoot.max(overshoot);
        }
        Ok(format!(
            "worst residual at {:.1}% of bound, worst range excursion {:.1e}",
            100.0 * worst_ratio,
            worst_overshoot
        ))
    });

    // Criterion 4: re-solve latency with the factorization reused. 100
    // perturbed sigma vectors on the ~25k-vertex fixture.
    run_criterion(&mut results, 4, "re-solve latency", || {
        let n_verts = big.domain.mesh_stats().n_verts;
        if !(15_000..=40_000).contains(&n_verts) {
            return Err(format!("fixture has {n_verts} vertices, want ~25k"));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0004);
        let n_surf = big.surface.n_vertices();
        let mut times_ms = Vec::with_capacity(100);
        for _ in 0..100 {
            let sigma: Vec<f64> = (0..n_surf)
                .map(|_| rng.random_range(-0.1..=0.1_f64).clamp(-SIGMA_LIMIT, SIGMA_LIMIT))
                .collect();
            let state = SemanticState::from_table(sigma).expect("sigma");
            let t = Instant::now();
            let refreshed = big.field.with_sigma(state).expect("re-solve");
            times_ms.push(t.elapsed().as_secs_f64() * 1e3);
            std::hint::black_box(&refreshed);
        }
        let mean = times_ms.iter().sum::<f64>() / times_ms.len() as f64;
        if !(mean <= 100.0) {
            return Err(format!("mean re-solve {mean:.1} ms > 100 ms"));
        }
        Ok(format!(
            "mean {mean:.1} ms over {} re-solves, {n_verts} vertices",
            times_ms.len()
        ))
    });

    // Criterion 5: hinted point location on a >= 100k-tet mesh. Sequential
    // nearby queries walk a jittered path on a shell around the object.
    run_criterion(&mut results, 5, "query latency", || {
        let n_tets = big.domain.mesh_stats().n_tets;
        if n_tets < 100_000 {
            return Err(format!("fixture has {n_tets} tets, need >= 100k"));
        }
        let frame = big.domain.frame();
        let center = frame.origin;
        let radius = 1.5 * frame.scale;
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0005);
        let mut dir = Vector3::new(1.0, 0.3, -0.2).normalize();
        let mut points = Vec::with_capacity(1_000);
        for _ in 0..1_000 {
            let kick: Vector3<f64> = Vector3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            );
            dir = (dir + 0.05 * kick).normalize();
            points.push(center + radius * dir);
        }
        // Warm-up pass so neither timed pass pays first-touch costs.
        let mut hint = None;
        for &x in points.iter().take(100) {
            hint = Some(query_exterior(&big.field, x, hint).tet_hint);
        }
        let mut hint = None;
        let mut hinted = Vec::with_capacity(points.len());
        for &x in &points {
            let t = Instant::now();
            let q = query_exterior(&big.field, x, hint);
            hinted.push(t.elapsed().as_nanos() as f64 / 1e3);
            hint = Some(q.tet_hint);
        }
        let mut unhinted = Vec::with_capacity(points.len());
        for &x in &points {
            let t = Instant::now();
            let q = query_exterior(&big.field, x, None);
            unhinted.push(t.elapsed().as_nanos() as f64 / 1e3);
            std::hint::black_box(q.h);
        }
        let med_hinted = median(hinted);
        let med_unhinted = median(unhinted);
        if !(med_hinted <= 5.0) {
            return Err(format!("hinted median {med_hinted:.2} us > 5 us"));
        }
        if !(med_hinted < med_unhinted) {
            return Err(format!(
                "hinted median {med_hinted:.2} us not below unhinted {med_unhinted:.2} us"
            ));
        }
        Ok(format!(
            "hinted {med_hinted:.2} us, unhinted {med_unhinted:.2} us, {n_tets} tets"
        ))
    });

    // Criterion 6: mesh-refinement sweep through the CLI; RMSE against the
    // finest level must fall monotonically.
    run_criterion(&mut results, 6, "refinement sweep", || {
        let out = Command::new(env!("CARGO_BIN_EXE_sadf"))
            .args([
                "bench",
                "--shape",
                "cube",
                "--sweep",
                "0.2,0.1,0.05",
                "--repetitions",
                "3",
                "--queries",
                "100",
            ])
            .output()
            .map_err(|e| format!("spawn bench: {e}"))?;
        if !out.status.success() {
            return Err(format!(
                "bench exited {:?}: {}",
                out.status.code(),
                String::from_utf8_lossy(&out.stderr)
            ));
        }
        let manifest: serde_json::Value =
            serde_json::from_slice(&out.stdout).map_err(|e| format!("manifest parse: {e}"))?;
        let rows = manifest["rmse"]
            .as_array()
            .ok_or("manifest missing rmse rows")?;
        if rows.len() != 3 {
            return Err(format!("expected 3 sweep rows, got {}", rows.len()));
        }
        let rmse: Vec<f64> = rows
            .iter()
            .map(|r| r["rmse"].as_f64().ok_or("rmse row not a number"))
            .collect::<Result<_, _>>()?;
        if !(rmse[0] > rmse[1] && rmse[1] > rmse[2] && rmse[2] == 0.0) {
            return Err(format!("rmse column not strictly decreasing: {rmse:?}"));
        }
        Ok(format!(
            "rmse {:.3e} -> {:.3e} -> 0 (reference)",
            rmse[0], rmse[1]
        ))
    });

    // Criterion 7: gradient quality. Affine reproduction is exact; the
    // per-tet gradient is the derivative of the interpolant, checked against
    // central differences confined to one element; the smoothed gradient
    // tracks the analytic x/|x|^2 on the finest sphere.
    run_criterion(&mut results, 7, "gradients", || {
        let domain = &rand_sphere.domain;
        let a = Vector3::new(0.3, -1.2, 0.7);
        let affine: Vec<f64> = domain
            .vertices()
            .iter()
            .map(|p| a.dot(&p.coords) + 2.5)
            .collect();
        let grads = vertex_gradients(domain, &affine).expect("vertex gradients");
        let affine_err = grads
            .iter()
            .map(|g| (g - a).norm())
            .fold(0.0f64, f64::max);
        if !(affine_err <= 1e-12) {
            return Err(format!("affine gradient error {affine_err:.3e} > 1e-12"));
        }

        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0007);
        let delta = 1e-5;
        let mut fd_worst = 0.0f64;
        let mut checked = 0;
        while checked < 10 {
            let d = unit_dirs(&mut rng, 1)[0];
            let r = rng.random_range(1.3..=2.0);
            let x = Point3::origin() + r * d;
            let (out, _) = rand_sphere
                .field
                .query_with(x, None, GradientMode::PerTet)
                .expect("query");
            let q = match out {
                QueryOutcome::Exterior(q) => q,
                QueryOutcome::InsideObject => continue,
            };
            // Keep the whole stencil inside one element so the difference
            // quotient sees a smooth function.
            let frame = rand_sphere.domain.frame();
            let stencil_tet = |p: Point3<f64>| {
                let y = frame.to_inverted(p).ok()?;
                locate(&rand_sphere.domain, y, Some(q.tet_hint)).ok()
            };
            let mut fd = Vector3::zeros();
            let mut in_one_tet = true;
            for axis in 0..3 {
                let mut step = Vector3::zeros();
                step[axis] = delta;
                let (xp, xm) = (x + step, x - step);
                if stencil_tet(xp) != Some(q.tet_hint) || stencil_tet(xm) != Some(q.tet_hint) {
                    in_one_tet = false;
                    break;
                }
                let hp = query_exterior(&rand_sphere.field, xp, Some(q.tet_hint)).h;
                let hm = query_exterior(&rand_sphere.field, xm, Some(q.tet_hint)).h;
                fd[axis] = (hp - hm) / (2.0 * delta);
            }
            if !in_one_tet {
                continue;
            }
            checked += 1;
            fd_worst = fd_worst.max((fd - q.grad).norm() / q.grad.norm().max(1e-30));
        }
        if !(fd_worst <= 1e-4) {
            return Err(format!("fd mismatch {fd_worst:.3e} > 1e-4"));
        }

        let finest = &sphere_levels.last().expect("levels").1;
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0017);
        let dirs = unit_dirs(&mut rng, 2_000);
        let mut sphere_worst = 0.0f64;
        let mut hint = None;
        for d in &dirs {
            let r = rng.random_range(1.1..=3.0);
            let q = query_exterior(&finest.field, Point3::origin() + r * d, hint);
            hint = Some(q.tet_hint);
            let exact = d / r;
            sphere_worst = sphere_worst.max((q.grad - exact).norm() / exact.norm());
        }
        if !(sphere_worst < 0.02) {
            return Err(format!("sphere gradient error {sphere_worst:.3e} >= 2%"));
        }
        Ok(format!(
            "affine {affine_err:.1e}, fd {fd_worst:.1e}, sphere max rel {sphere_worst:.2e}"
        ))
    });

    // Criterion 8: hinted walk agrees with a brute-force membership scan on
    // 10k random points, hints drawn adversarially at random.
    run_criterion(&mut results, 8, "location oracle", || {
        let domain = &rand_sphere.domain;
        let n_tets = domain.tets().len();
        let (mut lo, mut hi) = (
            Vector3::repeat(f64::INFINITY),
            Vector3::repeat(f64::NEG_INFINITY),
        );
        for p in domain.vertices() {
            lo = lo.inf(&p.coords);
            hi = hi.sup(&p.coords);
        }
        let span = hi - lo;
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0008);
        let mut inside = 0usize;
        let mut outside = 0usize;
        for _ in 0..10_000 {
            let y = Vector3::new(
                lo.x - 0.05 * span.x + rng.random_range(0.0..=1.1) * span.x,
                lo.y - 0.05 * span.y + rng.random_range(0.0..=1.1) * span.y,
                lo.z - 0.05 * span.z + rng.random_range(0.0..=1.1) * span.z,
            );
            let hint = rng.random_range(0..n_tets as u32);
            let walked = locate(domain, y, Some(hint)).ok();
            let brute = (0..n_tets).find(|&t| oracle_contains(domain, t, y));
            match (walked, brute) {
                (None, None) => outside += 1,
                (Some(w), Some(b)) => {
                    inside += 1;
                    let agrees = w as usize == b
                        || (oracle_contains(domain, w as usize, y) && share_face(domain, w, b as u32));
                    if !agrees {
                        return Err(format!("walk found tet {w}, scan found {b} for {y:?}"));
                    }
                }
                (w, b) => {
                    return Err(format!(
                        "membership disagrees for {y:?}: walk {w:?}, scan {b:?}"
                    ));
                }
            }
        }
        Ok(format!("10000 points agree ({inside} inside, {outside} outside)"))
    });

    // Criterion 9: semantic profile on an elongated box. The sign of h at
    // the boundary must follow the sign of sigma, and slice exports of all
    // three contact scenarios must produce parseable grids.
    run_criterion(&mut results, 9, "semantic scenarios", || {
        let half = Vector3::new(0.15, 0.02, 0.02);
        let surf = shapes::cuboid(half, 6);
        let ends = SemanticProfile {
            e_l: Vector3::x(),
            d0: 0.075,
            sigma_nom: 1.0,
        };
        let handle_only = SemanticProfile {
            sigma_nom: -1.0,
            ..ends
        };
        let box_field = build_fixture(
            surf.clone(),
            None,
            0.05,
            None,
            sigma_profile(&surf, &ends),
        );
        let scenarios: Vec<(&str, Field, SemanticState)> = vec![
            (
                "tool-ends",
                box_field.field.clone(),
                sigma_profile(&surf, &ends),
            ),
            (
                "handle-only",
                box_field
                    .field
                    .with_sigma(sigma_profile(&surf, &handle_only))
                    .expect("re-solve"),
                sigma_profile(&surf, &handle_only),
            ),
            (
                "no-contact",
                box_field
                    .field
                    .with_sigma(
                        SemanticState::constant(-0.5, surf.n_vertices()).expect("sigma"),
                    )
                    .expect("re-solve"),
                SemanticState::constant(-0.5, surf.n_vertices()).expect("sigma"),
            ),
        ];
        let dir = tempfile::tempdir().map_err(|e| format!("tempdir: {e}"))?;
        let mut sign_checked = 0usize;
        for (name, field, state) in &scenarios {
            let mut hint = None;
            for (v, &s) in surf.vertices().iter().zip(state.sigma()) {
                let q = match field.query(*v, hint).expect("query") {
                    QueryOutcome::Exterior(q) => q,
                    QueryOutcome::InsideObject => {
                        return Err(format!("{name}: surface vertex classified inside"));
                    }
                };
                hint = Some(q.tet_hint);
                if s.abs() > 1e-6 {
                    sign_checked += 1;
                    if q.h.signum() != s.signum() {
                        return Err(format!(
                            "{name}: h {:.3e} disagrees with sigma {s:.3e} at {v:?}",
                            q.h
                        ));
                    }
                }
            }
            let path = dir.path().join(format!("{name}.vtk"));
            export_grid(
                field,
                (Point3::new(-0.35, -0.1, 0.0), Point3::new(0.35, 0.1, 0.0)),
                GridSpec::SliceZ {
                    nx: 70,
                    ny: 20,
                    z: 0.0,
                },
                &path,
            )
            .map_err(|e| format!("{name} export: {e}"))?;
            let values = parse_vtk(&path).map_err(|e| format!("{name} parse: {e}"))?;
            if values.len() != 70 * 20 {
                return Err(format!("{name}: expected 1400 scalars, got {}", values.len()));
            }
        }
        Ok(format!(
            "3 scenarios, {sign_checked} signed boundary vertices, 3 parsed exports"
        ))
    });

    // Criterion 10: persistence round trip is bit-exact, and a loaded field
    // answers queries bitwise identically to the one that was saved.
    run_criterion(&mut results, 10, "bundle round trip", || {
        let dir = tempfile::tempdir().map_err(|e| format!("tempdir: {e}"))?;
        let p1 = dir.path().join("a.sadf");
        let p2 = dir.path().join("b.sadf");
        save_bundle(&rand_cube.field, &p1).map_err(|e| format!("save: {e}"))?;
        let loaded = load_bundle(&p1).map_err(|e| format!("load: {e}"))?;
        save_bundle(&loaded, &p2).map_err(|e| format!("re-save: {e}"))?;
        let b1 = std::fs::read(&p1).map_err(|e| format!("read: {e}"))?;
        let b2 = std::fs::read(&p2).map_err(|e| format!("read: {e}"))?;
        if b1 != b2 {
            return Err("bundle bytes changed across a load/save cycle".into());
        }
        let scale = rand_cube.domain.frame().scale;
        let mut rng = ChaCha8Rng::seed_from_u64(0xACCE_0010);
        let dirs = unit_dirs(&mut rng, 1_000);
        let mut compared = 0usize;
        for d in &dirs {
            let r = scale * rng.random_range(1.2..=3.0);
            let x = Point3::origin() + r * d;
            let a = rand_cube.field.query(x, None).expect("query original");
            let b = loaded.query(x, None).map_err(|e| format!("loaded query: {e}"))?;
            match (a, b) {
                (QueryOutcome::Exterior(qa), QueryOutcome::Exterior(qb)) => {
                    compared += 1;
                    let same = qa.h.to_bits() == qb.h.to_bits()
                        && qa.grad.x.to_bits() == qb.grad.x.to_bits()
                        && qa.grad.y.to_bits() == qb.grad.y.to_bits()
                        && qa.grad.z.to_bits() == qb.grad.z.to_bits();
                    if !same {
                        return Err(format!("loaded field differs at {x:?}"));
                    }
                }
                (QueryOutcome::InsideObject, QueryOutcome::InsideObject) => {}
                _ => return Err(format!("membership differs at {x:?}")),
            }
        }
        Ok(format!(
            "{} bytes stable, {compared} of 1000 queries bitwise equal",
            b1.len()
        ))
    });

    let failed: Vec<String> = results
        .iter()
        .filter_map(|(n, name, r)| {
            r.as_ref()
                .err()
                .map(|msg| format!("criterion {n} ({name}): {msg}"))
        })
        .collect();
    announce(format!(
        "ACCEPTANCE: {}/{} criteria passed",
        results.len() - failed.len(),
        results.len()
    ));
    assert!(failed.is_empty(), "{}", failed.join("\n"));
}
