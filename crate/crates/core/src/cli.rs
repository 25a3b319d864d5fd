//! The `sadf` command-line front end.
//!
//! Five subcommands wire the pipeline end to end: `build` (surface to saved
//! bundle), `resolve` (new semantics on an existing bundle), `query`
//! (streamed point evaluation), `export-grid` (VTK sampling), and `bench`
//! (solve/query timing and resolution sweeps). Machine-readable output goes
//! to stdout (a JSON [`RunManifest`], or result lines for `query`); logs go
//! to stderr.
//!
//! Exit codes are fixed per error class:
//! 0 success, 2 usage, 3 kelvin, 4 mesh, 5 operators, 6 solver,
//! 7 semantics, 8 field, 9 persist, 10 io.

use std::collections::BTreeMap;
use std::fs;
use std::io::{self, BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Instant;

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use nalgebra::{Point3, Vector3};
use rand::{RngExt, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::field::{self, Field, FieldError, QueryOutcome};
use crate::kelvin::SizingField;
use crate::mesh::{self, shapes, MeshStats, SurfaceFormat, SurfaceMesh, TetMeshFormat};
use crate::operators;
use crate::persist::{self, GridSpec, GRID_SENTINEL};
use crate::semantics::{SemanticState, SigmaConfig, SIGMA_LIMIT};
use crate::solver;
use crate::Error;

/// Fixed seeds for the benchmark's random draws. Runs must be reproducible;
/// the statistics do not care which seed it is.
const BENCH_JITTER_SEED: u64 = 0x5adf_0001;
const BENCH_QUERY_SEED: u64 = 0x5adf_0002;
const BENCH_SWEEP_SEED: u64 = 0x5adf_0003;

/// Sample count for sweep RMSE columns.
const SWEEP_POINTS: usize = 2000;

/// A failed run: message for stderr plus the class exit code.
#[derive(Debug)]
pub struct Failure {
    pub code: i32,
    pub message: String,
}

impl Failure {
    fn usage(message: impl Into<String>) -> Failure {
        Failure { code: 2, message: message.into() }
    }
}

impl<E> From<E> for Failure
where
    Error: From<E>,
{
    fn from(e: E) -> Failure {
        let err = Error::from(e);
        Failure { code: exit_code(&err), message: err.to_string() }
    }
}

fn exit_code(err: &Error) -> i32 {
    match err {
        Error::Kelvin(_) => 3,
        Error::Mesh(_) => 4,
        Error::Operator(_) => 5,
        Error::Solver(_) => 6,
        Error::Semantics(_) => 7,
        Error::Field(_) => 8,
        Error::Persist(_) => 9,
        Error::Io(_) => 10,
    }
}

#[derive(Debug, Parser)]
#[command(
    name = "sadf",
    version,
    about = "Semantics-aware distance fields on unbounded exteriors",
    after_help = "Exit codes: 0 ok, 2 usage, 3 kelvin, 4 mesh, 5 operators, \
                  6 solver, 7 semantics, 8 field, 9 persist, 10 io."
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Build a field from a surface and save it as a bundle.
    Build(BuildArgs),
    /// Re-solve an existing bundle with new semantics.
    Resolve(ResolveArgs),
    /// Evaluate the field at streamed points.
    Query(QueryArgs),
    /// Sample the field on a regular grid and write legacy VTK.
    ExportGrid(ExportGridArgs),
    /// Timing statistics and resolution sweeps.
    Bench(BenchArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
enum Shape {
    Sphere,
    Cube,
}

#[derive(Debug, Args)]
struct BuildArgs {
    /// Built-in fixture surface (unit-radius sphere, unit-edge cube).
    #[arg(long, value_enum, conflicts_with = "surface")]
    shape: Option<Shape>,
    /// Surface mesh file (.obj or .off).
    #[arg(long, required_unless_present = "shape")]
    surface: Option<PathBuf>,
    /// Target exterior edge length near the surface, input units.
    #[arg(long, default_value_t = 0.1)]
    lx: f64,
    /// Edge-length floor in the inverted domain (default: half the shortest
    /// inverted surface edge).
    #[arg(long)]
    ly_min: Option<f64>,
    /// Pre-made tet mesh of the inverted domain (.msh or .node) instead of
    /// the built-in generator.
    #[arg(long)]
    mesh: Option<PathBuf>,
    /// Inversion origin "x,y,z" (default: area-weighted surface centroid).
    #[arg(long, value_parser = parse_point, allow_hyphen_values = true)]
    origin: Option<Point3<f64>>,
    /// Inline semantics, e.g. "const:0.5".
    #[arg(long, conflicts_with = "sigma_config")]
    sigma: Option<String>,
    /// Semantic config JSON ({"mode": "constant" | "table" | "tanh_profile", ...}).
    #[arg(long)]
    sigma_config: Option<PathBuf>,
    /// Output bundle path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct ResolveArgs {
    /// Input bundle.
    #[arg(long)]
    bundle: PathBuf,
    /// Inline semantics, e.g. "const:0.5".
    #[arg(long, conflicts_with = "sigma_config")]
    sigma: Option<String>,
    /// Semantic config JSON.
    #[arg(long)]
    sigma_config: Option<PathBuf>,
    /// Output bundle path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct QueryArgs {
    /// Input bundle.
    #[arg(long)]
    bundle: PathBuf,
    /// Points file, one "x y z" per line; stdin when omitted.
    #[arg(long)]
    points: Option<PathBuf>,
    /// Emit gradient columns (gx gy gz) after h.
    #[arg(long)]
    gradients: bool,
}

#[derive(Debug, Args)]
struct ExportGridArgs {
    /// Input bundle.
    #[arg(long)]
    bundle: PathBuf,
    /// Axis-aligned box "lox,loy,loz,hix,hiy,hiz".
    #[arg(long, value_parser = parse_bbox, allow_hyphen_values = true)]
    bbox: BoundingBox,
    /// Samples per axis: "nx,ny,nz", or "nx,ny" with --slice-z.
    #[arg(long)]
    res: String,
    /// Sample a single z slice at this height instead of a volume.
    #[arg(long, allow_hyphen_values = true)]
    slice_z: Option<f64>,
    /// Output VTK path.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct BenchArgs {
    /// Bundle to benchmark (refactorized for re-solves).
    #[arg(long, conflicts_with_all = ["shape", "sweep"])]
    bundle: Option<PathBuf>,
    /// Build-and-benchmark fixture.
    #[arg(long, value_enum)]
    shape: Option<Shape>,
    /// Target edge length for the fixture build.
    #[arg(long, default_value_t = 0.1)]
    lx: f64,
    /// Edge-length floor override for the fixture build.
    #[arg(long)]
    ly_min: Option<f64>,
    /// Re-solves for the t_solve statistics (sigma jittered +-0.1, fixed seed).
    #[arg(long, default_value_t = 100)]
    repetitions: usize,
    /// Queries for the hinted/unhinted medians.
    #[arg(long, default_value_t = 1000)]
    queries: usize,
    /// Comma-separated l_x levels; adds an RMSE column against the finest.
    #[arg(long)]
    sweep: Option<String>,
}

/// Axis-aligned sampling box.
#[derive(Debug, Clone, Copy)]
struct BoundingBox {
    lo: Point3<f64>,
    hi: Point3<f64>,
}

/// Wall-clock record of one run, printed as pretty JSON on stdout.
#[derive(Debug, serde::Serialize)]
pub struct RunManifest {
    pub command: String,
    pub inputs: BTreeMap<String, String>,
    pub outputs: BTreeMap<String, String>,
    pub parameters: BTreeMap<String, serde_json::Value>,
    pub timings: Timings,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub mesh: Option<MeshStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub rmse: Option<Vec<RmseRow>>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub bundle_bytes: Option<u64>,
}

/// Stage timings; each value is a wall-clock measurement of that stage only.
#[derive(Debug, Default, serde::Serialize)]
pub struct Timings {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_mesh_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_build_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_decomp_s: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_solve_ms: Option<SolveStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_query_us: Option<QueryStats>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub t_export_s: Option<f64>,
}

#[derive(Debug, serde::Serialize)]
pub struct SolveStats {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, serde::Serialize)]
pub struct QueryStats {
    pub median_hinted: f64,
    pub median_unhinted: f64,
    pub n: usize,
}

#[derive(Debug, serde::Serialize)]
pub struct RmseRow {
    pub lx: f64,
    pub rmse: f64,
}

/// Parses argv, dispatches, and returns the process exit code.
pub fn run() -> i32 {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 2,
            };
            let _ = e.print();
            return code;
        }
    };
    let result = match &cli.command {
        Command::Build(args) => cmd_build(args),
        Command::Resolve(args) => cmd_resolve(args),
        Command::Query(args) => cmd_query(args),
        Command::ExportGrid(args) => cmd_export_grid(args),
        Command::Bench(args) => cmd_bench(args),
    };
    match result {
        Ok(Some(manifest)) => {
            println!(
                "{}",
                serde_json::to_string_pretty(&manifest).expect("manifest serializes")
            );
            0
        }
        Ok(None) => 0,
        Err(f) => {
            eprintln!("sadf: error: {}", f.message);
            f.code
        }
    }
}

fn cmd_build(args: &BuildArgs) -> Result<Option<RunManifest>, Failure> {
    check_positive("--lx", args.lx)?;
    if let Some(floor) = args.ly_min {
        check_positive("--ly-min", floor)?;
    }

    let mut inputs = BTreeMap::new();
    let (surface, label) = match (args.shape, &args.surface) {
        (Some(shape), _) => make_surface(shape, args.lx),
        (None, Some(path)) => {
            let format = surface_format(path)?;
            (mesh::load_surface(path, format)?, path.display().to_string())
        }
        (None, None) => return Err(Failure::usage("one of --shape or --surface is required")),
    };
    inputs.insert("surface".into(), label);
    if let Some(path) = &args.mesh {
        inputs.insert("mesh".into(), path.display().to_string());
    }
    if let Some(path) = &args.sigma_config {
        inputs.insert("sigma_config".into(), path.display().to_string());
    }

    let state = sigma_state(
        args.sigma.as_deref(),
        args.sigma_config.as_deref(),
        true,
        surface.vertices(),
    )?;
    let sigma_label = sigma_source_label(&state);

    let built = run_pipeline(
        &surface,
        args.origin,
        args.lx,
        args.ly_min,
        args.mesh.as_deref(),
        state,
    )?;
    let bundle_bytes = persist::save_bundle(&built.field, &args.out)?;

    let frame = built.field.domain().frame();
    let mut parameters = BTreeMap::new();
    parameters.insert("lx".into(), args.lx.into());
    parameters.insert("ly_min".into(), built.ly_min.into());
    parameters.insert(
        "origin".into(),
        serde_json::json!([frame.origin.x, frame.origin.y, frame.origin.z]),
    );
    parameters.insert("scale".into(), frame.scale.into());
    parameters.insert("sigma".into(), sigma_label.into());

    let solution = built.field.solution();
    Ok(Some(RunManifest {
        command: "build".into(),
        inputs,
        outputs: BTreeMap::from([("bundle".to_string(), args.out.display().to_string())]),
        parameters,
        timings: Timings {
            t_mesh_s: Some(built.t_mesh_s),
            t_build_s: Some(built.t_build_s),
            t_decomp_s: Some(built.t_decomp_s),
            t_solve_ms: Some(SolveStats {
                mean: solution.t_solve.as_secs_f64() * 1e3,
                std: 0.0,
                n: 1,
            }),
            ..Timings::default()
        },
        mesh: Some(built.field.domain().mesh_stats()),
        rmse: None,
        bundle_bytes: Some(bundle_bytes),
    }))
}

fn cmd_resolve(args: &ResolveArgs) -> Result<Option<RunManifest>, Failure> {
    let mut field = persist::load_bundle(&args.bundle)?;
    // Semantic configs address surface vertices by original position.
    let positions = field.domain().original_boundary_positions()?;
    let state = sigma_state(
        args.sigma.as_deref(),
        args.sigma_config.as_deref(),
        false,
        &positions,
    )?;
    let sigma_label = sigma_source_label(&state);

    let t0 = Instant::now();
    field.refactorize()?;
    let t_decomp_s = t0.elapsed().as_secs_f64();
    let field = field.with_sigma(state)?;
    let bundle_bytes = persist::save_bundle(&field, &args.out)?;

    let mut inputs = BTreeMap::from([("bundle".to_string(), args.bundle.display().to_string())]);
    if let Some(path) = &args.sigma_config {
        inputs.insert("sigma_config".into(), path.display().to_string());
    }
    Ok(Some(RunManifest {
        command: "resolve".into(),
        inputs,
        outputs: BTreeMap::from([("bundle".to_string(), args.out.display().to_string())]),
        parameters: BTreeMap::from([("sigma".to_string(), sigma_label.into())]),
        timings: Timings {
            t_decomp_s: Some(t_decomp_s),
            t_solve_ms: Some(SolveStats {
                mean: field.solution().t_solve.as_secs_f64() * 1e3,
                std: 0.0,
                n: 1,
            }),
            ..Timings::default()
        },
        mesh: Some(field.domain().mesh_stats()),
        rmse: None,
        bundle_bytes: Some(bundle_bytes),
    }))
}

fn cmd_query(args: &QueryArgs) -> Result<Option<RunManifest>, Failure> {
    let field = persist::load_bundle(&args.bundle)?;
    let reader: Box<dyn BufRead> = match &args.points {
        Some(path) => Box::new(BufReader::new(fs::File::open(path).map_err(Error::Io)?)),
        None => Box::new(io::stdin().lock()),
    };
    let stdout = io::stdout();
    let mut out = BufWriter::new(stdout.lock());

    let mut hint = None;
    let mut walk_steps: Vec<usize> = Vec::new();
    let mut n_ok = 0u64;
    let mut n_inside = 0u64;
    let mut n_origin = 0u64;
    let mut n_bad = 0u64;

    for line in reader.lines() {
        let line = line.map_err(Error::Io)?;
        let text = line.trim();
        if text.is_empty() || text.starts_with('#') {
            continue;
        }
        let Some(point) = parse_point_ws(text) else {
            n_bad += 1;
            write_result(&mut out, args.gradients, GRID_SENTINEL, Vector3::zeros(), -1, "bad-point")?;
            continue;
        };
        match field.query_traced(point, hint) {
            Ok((QueryOutcome::Exterior(r), steps)) => {
                n_ok += 1;
                hint = Some(r.tet_hint);
                walk_steps.push(steps);
                write_result(&mut out, args.gradients, r.h, r.grad, r.tet_hint as i64, "ok")?;
            }
            Ok((QueryOutcome::InsideObject, _)) => {
                n_inside += 1;
                write_result(&mut out, args.gradients, GRID_SENTINEL, Vector3::zeros(), -1, "inside-object")?;
            }
            Err(FieldError::QueryAtOrigin) => {
                n_origin += 1;
                write_result(&mut out, args.gradients, GRID_SENTINEL, Vector3::zeros(), -1, "at-origin")?;
            }
            Err(e) => {
                eprintln!("sadf: query: ({} {} {}): {e}", point.x, point.y, point.z);
                write_result(&mut out, args.gradients, GRID_SENTINEL, Vector3::zeros(), -1, "error")?;
            }
        }
    }
    out.flush().map_err(Error::Io)?;

    eprintln!(
        "sadf: query: {} points, {n_ok} ok, {n_inside} inside-object, {n_origin} at-origin, {n_bad} bad",
        n_ok + n_inside + n_origin + n_bad
    );
    if !walk_steps.is_empty() {
        walk_steps.sort_unstable();
        let n = walk_steps.len();
        let le3 = walk_steps.iter().take_while(|&&s| s <= 3).count();
        eprintln!(
            "sadf: walk-steps: n={n} median={} max={} le3={:.1}%",
            walk_steps[n / 2],
            walk_steps[n - 1],
            100.0 * le3 as f64 / n as f64
        );
    }
    Ok(None)
}

fn write_result<W: Write>(
    out: &mut W,
    gradients: bool,
    h: f64,
    grad: Vector3<f64>,
    tet: i64,
    status: &str,
) -> Result<(), Failure> {
    // Default f64 formatting is shortest-round-trip, so downstream parsing
    // recovers the exact bits.
    let r = if gradients {
        writeln!(out, "{h}\t{}\t{}\t{}\t{tet}\t{status}", grad.x, grad.y, grad.z)
    } else {
        writeln!(out, "{h}\t{tet}\t{status}")
    };
    r.map_err(|e| Error::Io(e).into())
}

fn cmd_export_grid(args: &ExportGridArgs) -> Result<Option<RunManifest>, Failure> {
    let field = persist::load_bundle(&args.bundle)?;
    let (spec, res_label) = match args.slice_z {
        Some(z) => {
            let r = parse_res(&args.res, 2)?;
            (GridSpec::SliceZ { nx: r[0], ny: r[1], z }, format!("{},{}", r[0], r[1]))
        }
        None => {
            let r = parse_res(&args.res, 3)?;
            (
                GridSpec::Volume { nx: r[0], ny: r[1], nz: r[2] },
                format!("{},{},{}", r[0], r[1], r[2]),
            )
        }
    };
    let t0 = Instant::now();
    let samples = persist::export_grid(&field, (args.bbox.lo, args.bbox.hi), spec, &args.out)?;
    let t_export_s = t0.elapsed().as_secs_f64();

    let mut parameters = BTreeMap::new();
    let (lo, hi) = (args.bbox.lo, args.bbox.hi);
    parameters.insert(
        "bbox".into(),
        serde_json::json!([lo.x, lo.y, lo.z, hi.x, hi.y, hi.z]),
    );
    parameters.insert("res".into(), res_label.into());
    if let Some(z) = args.slice_z {
        parameters.insert("slice_z".into(), z.into());
    }
    parameters.insert("samples".into(), samples.into());

    Ok(Some(RunManifest {
        command: "export-grid".into(),
        inputs: BTreeMap::from([("bundle".to_string(), args.bundle.display().to_string())]),
        outputs: BTreeMap::from([("vtk".to_string(), args.out.display().to_string())]),
        parameters,
        timings: Timings { t_export_s: Some(t_export_s), ..Timings::default() },
        mesh: Some(field.domain().mesh_stats()),
        rmse: None,
        bundle_bytes: None,
    }))
}

fn cmd_bench(args: &BenchArgs) -> Result<Option<RunManifest>, Failure> {
    if args.repetitions == 0 {
        return Err(Failure::usage("--repetitions must be at least 1"));
    }
    if args.queries == 0 {
        return Err(Failure::usage("--queries must be at least 1"));
    }

    let mut inputs = BTreeMap::new();
    let mut parameters = BTreeMap::new();
    let mut timings = Timings::default();
    let mut bundle_bytes = None;
    let mut rmse = None;

    parameters.insert("repetitions".into(), args.repetitions.into());
    parameters.insert("queries".into(), args.queries.into());

    let field = match (&args.bundle, args.shape) {
        (Some(path), _) => {
            inputs.insert("bundle".into(), path.display().to_string());
            bundle_bytes = Some(fs::metadata(path).map_err(Error::Io)?.len());
            let mut field = persist::load_bundle(path)?;
            let t0 = Instant::now();
            field.refactorize()?;
            timings.t_decomp_s = Some(t0.elapsed().as_secs_f64());
            field
        }
        (None, Some(shape)) => {
            check_positive("--lx", args.lx)?;
            if let Some(floor) = args.ly_min {
                check_positive("--ly-min", floor)?;
            }
            let levels = match &args.sweep {
                Some(spec) => parse_sweep(spec)?,
                None => vec![args.lx],
            };
            let mut built = Vec::with_capacity(levels.len());
            for &lx in &levels {
                let (surface, label) = make_surface(shape, lx);
                if built.is_empty() {
                    inputs.insert("surface".into(), label);
                }
                let state = SemanticState::constant(0.0, surface.n_vertices())?;
                built.push((lx, run_pipeline(&surface, None, lx, args.ly_min, None, state)?));
            }
            if built.len() > 1 {
                rmse = Some(sweep_rmse(&built)?);
                parameters.insert(
                    "sweep".into(),
                    serde_json::json!(levels),
                );
            } else {
                parameters.insert("lx".into(), args.lx.into());
            }
            // Finest level (the sweep reference) is the benched field.
            let finest = built.pop().expect("at least one level").1;
            timings.t_mesh_s = Some(finest.t_mesh_s);
            timings.t_build_s = Some(finest.t_build_s);
            timings.t_decomp_s = Some(finest.t_decomp_s);
            finest.field
        }
        (None, None) => return Err(Failure::usage("one of --bundle or --shape is required")),
    };

    timings.t_solve_ms = Some(solve_stats(&field, args.repetitions)?);
    timings.t_query_us = Some(query_stats(&field, args.queries));

    Ok(Some(RunManifest {
        command: "bench".into(),
        inputs,
        outputs: BTreeMap::new(),
        parameters,
        timings,
        mesh: Some(field.domain().mesh_stats()),
        rmse,
        bundle_bytes,
    }))
}

/// Mean/std of the wall time of [`Field::with_sigma`] (rhs + back
/// substitution + gradient refresh) under per-vertex sigma jitter of +-0.1
/// around the field's current state, clamped to the admissible range.
fn solve_stats(field: &Field, repetitions: usize) -> Result<SolveStats, Failure> {
    let n_boundary = field.domain().boundary_vertex_ids().len();
    let base: Vec<f64> = match field.sigma() {
        Some(s) => s.sigma().to_vec(),
        None => vec![0.0; n_boundary],
    };
    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_JITTER_SEED);
    let mut times_ms = Vec::with_capacity(repetitions);
    let mut keep = None;
    for _ in 0..repetitions {
        let jittered: Vec<f64> = base
            .iter()
            .map(|&s| (s + rng.random_range(-0.1..=0.1)).clamp(-SIGMA_LIMIT, SIGMA_LIMIT))
            .collect();
        let state = SemanticState::from_table(jittered)?;
        let t0 = Instant::now();
        let solved = field.with_sigma(state)?;
        times_ms.push(t0.elapsed().as_secs_f64() * 1e3);
        keep = Some(solved);
    }
    std::hint::black_box(&keep);
    let (mean, std) = mean_std(&times_ms);
    Ok(SolveStats { mean, std, n: repetitions })
}

/// Hinted vs. unhinted per-query medians over one random walk on a shell
/// strictly outside the surface's bounding sphere.
fn query_stats(field: &Field, queries: usize) -> QueryStats {
    let frame = field.domain().frame();
    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_QUERY_SEED);
    let mut dir = Vector3::new(1.0, 0.3, -0.2).normalize();
    let radius = 1.5 * frame.scale;
    let points: Vec<Point3<f64>> = (0..queries)
        .map(|_| {
            let kick: Vector3<f64> = Vector3::new(
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
                rng.random_range(-1.0..=1.0),
            );
            dir = (dir + 0.05 * kick).normalize();
            frame.origin + radius * dir
        })
        .collect();

    let mut hinted_us = Vec::with_capacity(queries);
    let mut hint = None;
    for &p in &points {
        let t0 = Instant::now();
        let outcome = field.query(p, hint);
        hinted_us.push(t0.elapsed().as_secs_f64() * 1e6);
        if let Ok(QueryOutcome::Exterior(r)) = outcome {
            hint = Some(r.tet_hint);
        }
    }
    let mut unhinted_us = Vec::with_capacity(queries);
    for &p in &points {
        let t0 = Instant::now();
        let outcome = field.query(p, None);
        unhinted_us.push(t0.elapsed().as_secs_f64() * 1e6);
        std::hint::black_box(&outcome);
    }
    QueryStats {
        median_hinted: median(&mut hinted_us),
        median_unhinted: median(&mut unhinted_us),
        n: queries,
    }
}

/// RMSE of each level against the finest over one fixed point cloud exterior
/// to every level. `built` is sorted coarse to fine.
fn sweep_rmse(built: &[(f64, Pipeline)]) -> Result<Vec<RmseRow>, Failure> {
    let max_scale = built
        .iter()
        .map(|(_, p)| p.field.domain().frame().scale)
        .fold(0.0f64, f64::max);
    let (_, finest) = built.last().expect("sweep has levels");
    let base = finest.field.domain().frame().origin;

    let mut rng = ChaCha8Rng::seed_from_u64(BENCH_SWEEP_SEED);
    let points: Vec<Point3<f64>> = (0..SWEEP_POINTS)
        .map(|_| {
            let dir = loop {
                let v = Vector3::new(
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                    rng.random_range(-1.0..=1.0),
                );
                if v.norm_squared() > 1e-4 && v.norm_squared() <= 1.0 {
                    break v.normalize();
                }
            };
            base + dir * (max_scale * rng.random_range(1.2..=2.5))
        })
        .collect();

    let h_ref = sample_h(&finest.field, &points)?;
    let mut rows = Vec::with_capacity(built.len());
    for (lx, pipeline) in built {
        let h = sample_h(&pipeline.field, &points)?;
        let mse = h
            .iter()
            .zip(&h_ref)
            .map(|(a, b)| (a - b).powi(2))
            .sum::<f64>()
            / points.len() as f64;
        rows.push(RmseRow { lx: *lx, rmse: mse.sqrt() });
    }
    Ok(rows)
}

fn sample_h(field: &Field, points: &[Point3<f64>]) -> Result<Vec<f64>, Failure> {
    let mut hint = None;
    let mut out = Vec::with_capacity(points.len());
    for &p in points {
        match field.query(p, hint)? {
            QueryOutcome::Exterior(r) => {
                hint = Some(r.tet_hint);
                out.push(r.h);
            }
            // Points are sampled outside every bounding sphere; landing
            // inside the object means the sweep itself is broken.
            QueryOutcome::InsideObject => {
                return Err(Failure::from(Error::Field(FieldError::OutsideDomain)));
            }
        }
    }
    Ok(out)
}

/// One built field plus its stage timings, shared by build and bench.
struct Pipeline {
    field: Field,
    ly_min: f64,
    t_mesh_s: f64,
    t_build_s: f64,
    t_decomp_s: f64,
}

fn run_pipeline(
    surface: &SurfaceMesh,
    origin: Option<Point3<f64>>,
    lx: f64,
    ly_min: Option<f64>,
    tet_mesh: Option<&Path>,
    state: SemanticState,
) -> Result<Pipeline, Failure> {
    let frame = mesh::inversion_frame(surface, origin)?;
    // The sizing field lives in the normalized frame; user units divide by
    // the frame scale.
    let lx_normalized = lx / frame.scale;

    let t0 = Instant::now();
    let (domain, resolved_floor) = match tet_mesh {
        Some(path) => {
            let format = tet_mesh_format(path)?;
            (mesh::load_tet_mesh(path, format, frame, surface)?, f64::NAN)
        }
        None => {
            let sizing = match ly_min {
                Some(floor) => SizingField::new(lx_normalized, floor),
                None => SizingField::with_default_floor(
                    lx_normalized,
                    mesh::min_inverted_edge(surface, &frame)?,
                ),
            };
            (mesh::generate_star_shaped(surface, frame, sizing)?, sizing.l_y_min)
        }
    };
    let t_mesh_s = t0.elapsed().as_secs_f64();

    let t1 = Instant::now();
    let ops = Arc::new(operators::assemble_laplacian(&domain)?);
    let t_build_s = t1.elapsed().as_secs_f64();
    let handle = Arc::new(solver::factorize(&ops)?);
    let t_decomp_s = handle.t_decomp().as_secs_f64();
    let field = field::build_field(surface, Arc::new(domain), ops, handle, state)?;
    Ok(Pipeline { field, ly_min: resolved_floor, t_mesh_s, t_build_s, t_decomp_s })
}

/// Fixture surfaces tessellated to roughly match `lx`.
fn make_surface(shape: Shape, lx: f64) -> (SurfaceMesh, String) {
    match shape {
        Shape::Sphere => (
            shapes::icosphere(sphere_subdivisions(lx)),
            "shape:sphere".into(),
        ),
        Shape::Cube => (shapes::cube(0.5, cube_facets(lx)), "shape:cube".into()),
    }
}

/// Icosphere level whose edge length (about 1.05 / 2^level on the unit
/// sphere) best matches `lx`, capped to keep fixtures tractable.
fn sphere_subdivisions(lx: f64) -> u32 {
    ((1.0515 / lx).log2().round()).clamp(0.0, 6.0) as u32
}

/// Cells per cube edge: grid edges are 1/n and facet diagonals sqrt(2)/n,
/// so 1.2/lx straddles `lx` between them.
fn cube_facets(lx: f64) -> u32 {
    ((1.2 / lx).ceil() as u32).clamp(1, 128)
}

/// Semantic state from the command line: `--sigma const:<v>` inline, or a
/// JSON config file. `default_zero` supplies sigma = 0 when neither is given
/// (build); otherwise one of them is required (resolve).
fn sigma_state(
    inline: Option<&str>,
    config: Option<&Path>,
    default_zero: bool,
    positions: &[Point3<f64>],
) -> Result<SemanticState, Failure> {
    if let Some(path) = config {
        let text = fs::read_to_string(path).map_err(Error::Io)?;
        let parsed: SigmaConfig = serde_json::from_str(&text)
            .map_err(|e| Failure::usage(format!("{}: {e}", path.display())))?;
        return Ok(parsed.build_at(positions)?);
    }
    match inline {
        Some(spec) => {
            let value = spec
                .strip_prefix("const:")
                .and_then(|v| v.parse::<f64>().ok())
                .ok_or_else(|| {
                    Failure::usage(format!("--sigma expects \"const:<value>\", got \"{spec}\""))
                })?;
            Ok(SemanticState::constant(value, positions.len())?)
        }
        None if default_zero => Ok(SemanticState::constant(0.0, positions.len())?),
        None => Err(Failure::usage("one of --sigma or --sigma-config is required")),
    }
}

fn sigma_source_label(state: &SemanticState) -> String {
    match state.source() {
        crate::semantics::SigmaSource::Constant(v) => format!("const:{v}"),
        crate::semantics::SigmaSource::Table => "table".into(),
        crate::semantics::SigmaSource::TanhProfile(p) => {
            format!("tanh(|e_l.x| - {}) * {}", p.d0, p.sigma_nom)
        }
    }
}

fn surface_format(path: &Path) -> Result<SurfaceFormat, Failure> {
    match extension(path).as_deref() {
        Some("obj") => Ok(SurfaceFormat::Obj),
        Some("off") => Ok(SurfaceFormat::Off),
        _ => Err(Failure::usage(format!(
            "{}: expected a .obj or .off surface",
            path.display()
        ))),
    }
}

fn tet_mesh_format(path: &Path) -> Result<TetMeshFormat, Failure> {
    match extension(path).as_deref() {
        Some("msh") => Ok(TetMeshFormat::GmshV2Ascii),
        Some("node") | Some("ele") => Ok(TetMeshFormat::TetGenNodeEle),
        _ => Err(Failure::usage(format!(
            "{}: expected a .msh or .node/.ele tet mesh",
            path.display()
        ))),
    }
}

fn extension(path: &Path) -> Option<String> {
    path.extension().and_then(|e| e.to_str()).map(|e| e.to_ascii_lowercase())
}

fn check_positive(flag: &str, value: f64) -> Result<(), Failure> {
    if value.is_finite() && value > 0.0 {
        Ok(())
    } else {
        Err(Failure::usage(format!("{flag} must be positive and finite, got {value}")))
    }
}

/// "x,y,z" with ASCII floats.
fn parse_point(s: &str) -> Result<Point3<f64>, String> {
    let v = parse_floats(s, 3)?;
    Ok(Point3::new(v[0], v[1], v[2]))
}

/// "lox,loy,loz,hix,hiy,hiz".
fn parse_bbox(s: &str) -> Result<BoundingBox, String> {
    let v = parse_floats(s, 6)?;
    Ok(BoundingBox {
        lo: Point3::new(v[0], v[1], v[2]),
        hi: Point3::new(v[3], v[4], v[5]),
    })
}

fn parse_floats(s: &str, want: usize) -> Result<Vec<f64>, String> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != want {
        return Err(format!("expected {want} comma-separated numbers, got {}", parts.len()));
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| format!("\"{p}\" is not a number"))
        })
        .collect()
}

fn parse_res(s: &str, want: usize) -> Result<Vec<usize>, Failure> {
    let parts: Vec<&str> = s.split(',').collect();
    if parts.len() != want {
        return Err(Failure::usage(format!(
            "--res expects {want} comma-separated counts, got {}",
            parts.len()
        )));
    }
    parts
        .iter()
        .map(|p| {
            p.trim()
                .parse::<usize>()
                .map_err(|_| Failure::usage(format!("--res: \"{p}\" is not a count")))
        })
        .collect()
}

fn parse_sweep(s: &str) -> Result<Vec<f64>, Failure> {
    let mut levels: Vec<f64> = s
        .split(',')
        .map(|p| {
            p.trim()
                .parse::<f64>()
                .map_err(|_| Failure::usage(format!("--sweep: \"{p}\" is not a number")))
        })
        .collect::<Result<_, _>>()?;
    if levels.len() < 2 {
        return Err(Failure::usage("--sweep needs at least two levels"));
    }
    for &lx in &levels {
        if !(lx.is_finite() && lx > 0.0) {
            return Err(Failure::usage(format!("--sweep levels must be positive, got {lx}")));
        }
    }
    // Coarse to fine; the last level becomes the reference.
    levels.sort_by(|a, b| b.total_cmp(a));
    if levels.windows(2).any(|w| w[0] == w[1]) {
        return Err(Failure::usage("--sweep levels must be distinct"));
    }
    Ok(levels)
}

/// Whitespace-separated "x y z"; trailing fields are rejected.
fn parse_point_ws(s: &str) -> Option<Point3<f64>> {
    let mut it = s.split_whitespace();
    let x = it.next()?.parse::<f64>().ok()?;
    let y = it.next()?.parse::<f64>().ok()?;
    let z = it.next()?.parse::<f64>().ok()?;
    if it.next().is_some() {
        return None;
    }
    Some(Point3::new(x, y, z))
}

fn mean_std(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, 0.0);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}

fn median(xs: &mut [f64]) -> f64 {
    assert!(!xs.is_empty());
    xs.sort_by(f64::total_cmp);
    let n = xs.len();
    if n % 2 == 1 {
        xs[n / 2]
    } else {
        0.5 * (xs[n / 2 - 1] + xs[n / 2])
    }
}
