//! Command-line front end. Results go to stdout as JSON; errors are reported
//! by `main` as one JSON line on stderr.

use std::collections::BTreeMap;
use std::net::SocketAddr;
use std::path::{Path, PathBuf};
use std::sync::{Arc, RwLock};

use clap::{Args, Parser, Subcommand};
use fieldlabel_core::export::{export_scene, ExportConfig, OcclusionConfig, OcclusionMode};
use fieldlabel_core::field::{load_field, DensityField, RayMarchConfig};
use fieldlabel_core::geometry::{OrientedBox, RigidTransform, Vec3};
use fieldlabel_core::labeling::{
    icp_refine, load_project, save_project, tight_fit_box, Edit, IcpConfig, LabelProject, MeshLibrary, TightFitConfig,
};
use fieldlabel_core::mesh::{extract_mesh, save_obj, ExtractionConfig};
use fieldlabel_core::metrics::{
    confusions, format_depth_table, nonzero_mask, summarize, Confusion, DepthAccumulator, Granularity,
};
use fieldlabel_core::raster::{read_png_u16, MaskImage};
use fieldlabel_core::scene::{calibrate_scale, load_scene, save_transforms, SceneDescription, SceneFormat};
use serde_json::{json, Value};

use crate::api::router;
use crate::error::ServiceError;
use crate::session::{Session, SessionOptions, DEFAULT_PREVIEW_LONG_EDGE};

#[derive(Debug, Parser)]
#[command(name = "fieldlabel", version, about = "Annotate posed image scenes against a density field")]
pub struct Cli {
    /// Seed for every randomized step.
    #[arg(long, global = true, default_value_t = 0)]
    pub seed: u64,
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Load a camera file and write it back as a normalized transforms file.
    Ingest(IngestArgs),
    /// Rescale a scene so two picked points are a known distance apart.
    Calibrate(CalibrateArgs),
    /// Extract a surface mesh from the field inside a box.
    ExtractMesh(ExtractMeshArgs),
    /// Shrink a box label to the occupied part of the field.
    TightFit(TightFitArgs),
    /// Refine a mesh label pose against the field surface.
    Icp(IcpArgs),
    /// Write depth, masks and annotations for every frame.
    Export(ExportArgs),
    /// Score predicted depth or masks against ground truth.
    Eval(EvalArgs),
    /// Run the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Args)]
pub struct SceneArg {
    /// transforms.json file or COLMAP text model directory.
    #[arg(long)]
    pub scene: PathBuf,
    /// auto, transforms or colmap.
    #[arg(long, default_value = "auto")]
    pub format: String,
}

#[derive(Debug, Args)]
pub struct IngestArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct CalibrateArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    /// First point as x,y,z in scene units.
    #[arg(long, value_parser = parse_vec3)]
    pub p1: Vec3,
    #[arg(long, value_parser = parse_vec3)]
    pub p2: Vec3,
    /// Real distance between the points in meters.
    #[arg(long)]
    pub distance: f64,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct ExtractMeshArgs {
    #[arg(long)]
    pub field: PathBuf,
    /// Region as "c=x,y,z;h=hx,hy,hz[;q=w,x,y,z]".
    #[arg(long = "box", value_parser = parse_box)]
    pub region: OrientedBox,
    #[arg(long, default_value_t = ExtractionConfig::default().sigma_threshold)]
    pub tau: f64,
    #[arg(long, default_value_t = ExtractionConfig::default().resolution)]
    pub resolution: usize,
    /// Drop connected pieces with fewer triangles than this.
    #[arg(long, default_value_t = ExtractionConfig::default().min_component_size)]
    pub min_component: usize,
    /// Write vertices in the box frame instead of world coordinates.
    #[arg(long)]
    pub object_frame: bool,
    #[arg(long)]
    pub out: PathBuf,
}

#[derive(Debug, Args)]
pub struct TightFitArgs {
    #[arg(long)]
    pub project: PathBuf,
    #[arg(long)]
    pub id: u32,
    #[arg(long)]
    pub field: PathBuf,
    /// Output project; defaults to overwriting the input.
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = TightFitConfig::default().sigma_threshold)]
    pub tau: f64,
    #[arg(long, default_value_t = TightFitConfig::default().resolution)]
    pub resolution: usize,
    /// Margin in lattice cells.
    #[arg(long, default_value_t = TightFitConfig::default().padding)]
    pub padding: f64,
}

#[derive(Debug, Args)]
pub struct IcpArgs {
    #[arg(long)]
    pub project: PathBuf,
    #[arg(long)]
    pub id: u32,
    #[arg(long)]
    pub field: PathBuf,
    /// Defaults to the project's scene reference.
    #[arg(long)]
    pub scene: Option<PathBuf>,
    /// Base directory for mesh references; defaults to the project directory.
    #[arg(long)]
    pub meshes: Option<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
    #[arg(long, default_value_t = IcpConfig::default().max_iterations)]
    pub max_iterations: usize,
    #[arg(long, default_value_t = IcpConfig::default().convergence_eps)]
    pub convergence_eps: f64,
    #[arg(long, default_value_t = IcpConfig::default().max_correspondence_dist)]
    pub max_correspondence_dist: f64,
    #[arg(long, default_value_t = IcpConfig::default().sample_count)]
    pub samples: usize,
}

#[derive(Debug, Args)]
pub struct ExportArgs {
    #[arg(long)]
    pub project: PathBuf,
    /// Required for field occlusion.
    #[arg(long)]
    pub field: Option<PathBuf>,
    #[arg(long)]
    pub scene: Option<PathBuf>,
    #[arg(long)]
    pub meshes: Option<PathBuf>,
    #[arg(long)]
    pub out: PathBuf,
    /// field, sensor or none.
    #[arg(long, default_value = "field")]
    pub occlusion: String,
    /// Depth tolerance for visibility tests (meters).
    #[arg(long, default_value_t = OcclusionConfig::default().epsilon)]
    pub epsilon: f64,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Predicted PNG file or directory of PNGs.
    #[arg(long)]
    pub pred: PathBuf,
    /// Ground-truth PNG file or directory with matching names.
    #[arg(long)]
    pub gt: PathBuf,
    /// Evaluation mask (depth only); nonzero pixels are scored.
    #[arg(long)]
    pub mask: Option<PathBuf>,
    /// Score masks instead of depth: binary or category.
    #[arg(long)]
    pub segmentation: Option<String>,
    /// json or table.
    #[arg(long, default_value = "json")]
    pub output: String,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    #[command(flatten)]
    pub scene: SceneArg,
    #[arg(long)]
    pub field: PathBuf,
    /// Starts empty when absent.
    #[arg(long)]
    pub project: Option<PathBuf>,
    #[arg(long)]
    pub meshes: Option<PathBuf>,
    #[arg(long, default_value = "127.0.0.1")]
    pub host: String,
    #[arg(long, default_value_t = 8080)]
    pub port: u16,
    #[arg(long, default_value_t = DEFAULT_PREVIEW_LONG_EDGE)]
    pub preview_long_edge: u32,
}

fn parse_floats<const N: usize>(s: &str) -> Result<[f64; N], String> {
    let vals: Vec<f64> = s
        .split(',')
        .map(|v| v.trim().parse::<f64>().map_err(|e| format!("'{v}': {e}")))
        .collect::<Result<_, _>>()?;
    let arr: [f64; N] = vals
        .try_into()
        .map_err(|v: Vec<f64>| format!("expected {N} comma-separated numbers, got {}", v.len()))?;
    if arr.iter().any(|v| !v.is_finite()) {
        return Err("values must be finite".into());
    }
    Ok(arr)
}

pub fn parse_vec3(s: &str) -> Result<Vec3, String> {
    parse_floats::<3>(s).map(Vec3::from)
}

pub fn parse_box(s: &str) -> Result<OrientedBox, String> {
    let mut parts = BTreeMap::new();
    for part in s.split(';').filter(|p| !p.trim().is_empty()) {
        let (k, v) = part.split_once('=').ok_or_else(|| format!("'{part}' is not key=value"))?;
        parts.insert(k.trim().to_string(), v.to_string());
    }
    let get = |k: &str| parts.get(k).ok_or_else(|| format!("box is missing '{k}='"));
    let center = parse_vec3(get("c")?)?;
    let half = parse_vec3(get("h")?)?;
    let rotation = match parts.get("q") {
        Some(q) => RigidTransform::from_wxyz(parse_floats::<4>(q)?, center).ok_or("quaternion has zero length")?,
        None => RigidTransform::from_translation(center),
    };
    OrientedBox::new(rotation, half).ok_or_else(|| "half extents must be positive".into())
}

pub fn parse_scene_format(path: &Path, format: &str) -> Result<SceneFormat, ServiceError> {
    if format != "auto" {
        return format.parse().map_err(ServiceError::BadRequest);
    }
    if path.is_dir() {
        Ok(SceneFormat::ColmapText)
    } else {
        Ok(SceneFormat::TransformsJson)
    }
}

pub fn read_scene(path: &Path, format: &str) -> Result<SceneDescription, ServiceError> {
    let load = load_scene(path, parse_scene_format(path, format)?)?;
    for w in &load.warnings {
        log::warn!("{}: {w}", path.display());
    }
    Ok(load.scene)
}

/// Points frame paths at their files from a transforms file written at `out`.
fn rebase_paths(scene: &mut SceneDescription, out: &Path) {
    let out_dir = out.parent().unwrap_or(Path::new(""));
    let same = |a: &Path, b: &Path| match (a.canonicalize(), b.canonicalize()) {
        (Ok(a), Ok(b)) => a == b,
        _ => a == b,
    };
    let out_dir = if out_dir.as_os_str().is_empty() { Path::new(".") } else { out_dir };
    let root = if scene.root.as_os_str().is_empty() { Path::new(".") } else { scene.root.as_path() };
    if same(root, out_dir) {
        return;
    }
    let root = root.canonicalize().unwrap_or_else(|_| root.to_path_buf());
    let absolute = |rel: &str| root.join(rel).display().to_string();
    for f in &mut scene.frames {
        f.image_path = absolute(&f.image_path);
        f.sensor_depth_path = f.sensor_depth_path.as_deref().map(absolute);
    }
}

fn scene_summary(scene: &SceneDescription, out: &Path, warnings: usize) -> Value {
    json!({
        "out": out,
        "frames": scene.frames.len(),
        "scale": scene.scale,
        "aabb": scene.aabb,
        "warnings": warnings,
    })
}

fn open_field(path: &Path) -> Result<Arc<dyn DensityField>, ServiceError> {
    Ok(Arc::from(load_field(path)?))
}

fn project_dir(path: &Path) -> PathBuf {
    path.parent().map(Path::to_path_buf).unwrap_or_default()
}

/// Scene named by the project, resolved against the project directory.
fn project_scene(project: &LabelProject, project_path: &Path, explicit: Option<&Path>) -> Result<SceneDescription, ServiceError> {
    let path = match explicit {
        Some(p) => p.to_path_buf(),
        None if project.scene_ref.is_empty() => {
            return Err(ServiceError::BadRequest("project has no scene_ref; pass --scene".into()));
        }
        None => project_dir(project_path).join(&project.scene_ref),
    };
    read_scene(&path, "auto")
}

fn mesh_library(project: &LabelProject, project_path: &Path, base: Option<&Path>) -> Result<MeshLibrary, ServiceError> {
    let mut lib = MeshLibrary::new(base.map(Path::to_path_buf).unwrap_or_else(|| project_dir(project_path)));
    lib.load_project_meshes(project)?;
    Ok(lib)
}

fn object_summary(project: &LabelProject, id: u32, out: &Path) -> Value {
    json!({ "out": out, "object": project.object(id) })
}

pub fn run(cli: Cli) -> Result<Value, ServiceError> {
    match cli.command {
        Command::Ingest(a) => {
            let load = load_scene(&a.scene.scene, parse_scene_format(&a.scene.scene, &a.scene.format)?)?;
            for w in &load.warnings {
                log::warn!("{w}");
            }
            let mut scene = load.scene;
            rebase_paths(&mut scene, &a.out);
            save_transforms(&scene, &a.out)?;
            Ok(scene_summary(&scene, &a.out, load.warnings.len()))
        }
        Command::Calibrate(a) => {
            let scene = read_scene(&a.scene.scene, &a.scene.format)?;
            let mut scaled = calibrate_scale(&scene, &a.p1, &a.p2, a.distance)?;
            rebase_paths(&mut scaled, &a.out);
            save_transforms(&scaled, &a.out)?;
            Ok(scene_summary(&scaled, &a.out, 0))
        }
        Command::ExtractMesh(a) => {
            let field = open_field(&a.field)?;
            let cfg = ExtractionConfig {
                sigma_threshold: a.tau,
                resolution: a.resolution,
                min_component_size: a.min_component,
            };
            let mut mesh = extract_mesh(&*field, &a.region, &cfg)?;
            if a.object_frame {
                mesh = mesh.transformed(&a.region.pose.inverse());
                mesh.compute_normals();
            }
            save_obj(&mesh, &a.out)?;
            Ok(json!({
                "out": a.out,
                "vertex_count": mesh.vertices.len(),
                "triangle_count": mesh.triangles.len(),
                "closed": mesh.is_closed(),
            }))
        }
        Command::TightFit(a) => {
            let project = load_project(&a.project)?;
            let field = open_field(&a.field)?;
            let cfg = TightFitConfig {
                sigma_threshold: a.tau,
                padding: a.padding,
                resolution: a.resolution,
            };
            let fitted = tight_fit_box(&project, a.id, &*field, &cfg)?;
            let project = project
                .apply(&Edit::SetPose { id: a.id, pose: fitted.pose })?
                .0
                .apply(&Edit::SetHalfExtents { id: a.id, half_extents: fitted.half_extents })?
                .0;
            let out = a.out.unwrap_or(a.project);
            save_project(&project, &out)?;
            Ok(object_summary(&project, a.id, &out))
        }
        Command::Icp(a) => {
            let project = load_project(&a.project)?;
            let field = open_field(&a.field)?;
            let scene = project_scene(&project, &a.project, a.scene.as_deref())?;
            let meshes = mesh_library(&project, &a.project, a.meshes.as_deref())?;
            let cfg = IcpConfig {
                max_iterations: a.max_iterations,
                convergence_eps: a.convergence_eps,
                max_correspondence_dist: a.max_correspondence_dist,
                sample_count: a.samples,
                seed: cli.seed,
                ..Default::default()
            };
            let march = RayMarchConfig::for_bounds(&scene.aabb);
            let result = icp_refine(&project, a.id, &scene, &*field, &meshes, &march, &cfg)?;
            let project = project.apply(&Edit::SetPose { id: a.id, pose: result.transform })?.0;
            let out = a.out.unwrap_or(a.project);
            save_project(&project, &out)?;
            let mut summary = object_summary(&project, a.id, &out);
            summary["residual_rms"] = json!(result.residual_rms);
            summary["iterations"] = json!(result.iterations);
            summary["converged"] = json!(result.converged);
            summary["history"] = json!(result.history);
            Ok(summary)
        }
        Command::Export(a) => {
            let project = load_project(&a.project)?;
            let scene = project_scene(&project, &a.project, a.scene.as_deref())?;
            let meshes = mesh_library(&project, &a.project, a.meshes.as_deref())?;
            let field = a.field.as_deref().map(open_field).transpose()?;
            let mode: OcclusionMode = a.occlusion.parse().map_err(ServiceError::BadRequest)?;
            let cfg = ExportConfig {
                occlusion: OcclusionConfig { mode, epsilon: a.epsilon },
                march: RayMarchConfig::for_bounds(&scene.aabb),
            };
            let summary = export_scene(&project, &meshes, field.as_deref(), &scene, &cfg, &a.out)?;
            Ok(json!({
                "out": a.out,
                "frames": summary.frames,
                "objects": summary.objects,
                "clamped_depth_pixels": summary.clamped_depth_pixels,
                "files": summary.files.len(),
            }))
        }
        Command::Eval(a) => run_eval(&a),
        Command::Serve(a) => {
            serve(a, cli.seed)?;
            Ok(Value::Null)
        }
    }
}

/// Prediction, ground truth and optional mask paths.
type EvalPair = (PathBuf, PathBuf, Option<PathBuf>);

/// Directories are matched by file name.
fn eval_pairs(a: &EvalArgs) -> Result<Vec<EvalPair>, ServiceError> {
    if !a.pred.is_dir() {
        return Ok(vec![(a.pred.clone(), a.gt.clone(), a.mask.clone())]);
    }
    let mut names: Vec<String> = std::fs::read_dir(&a.pred)
        .map_err(|e| ServiceError::io(&a.pred, e))?
        .filter_map(|e| e.ok())
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n.ends_with(".png"))
        .collect();
    names.sort();
    let mut pairs = Vec::new();
    for n in names {
        let gt = a.gt.join(&n);
        if !gt.is_file() {
            log::warn!("no ground truth for {n}, skipped");
            continue;
        }
        let mask = a.mask.as_ref().map(|m| m.join(&n));
        pairs.push((a.pred.join(&n), gt, mask));
    }
    if pairs.is_empty() {
        return Err(ServiceError::BadRequest(format!(
            "no matching PNG files in {} and {}",
            a.pred.display(),
            a.gt.display()
        )));
    }
    Ok(pairs)
}

fn read_mask(path: &Path) -> Result<MaskImage, ServiceError> {
    Ok(read_png_u16(path)?.map(|&v| v as u32))
}

fn run_eval(a: &EvalArgs) -> Result<Value, ServiceError> {
    let pairs = eval_pairs(a)?;
    if let Some(g) = &a.segmentation {
        let granularity: Granularity = g.parse().map_err(ServiceError::BadRequest)?;
        // confusions pool over all images before averaging over classes
        let mut pooled: BTreeMap<u32, Confusion> = BTreeMap::new();
        for (pred, gt, _) in &pairs {
            for (class, c) in confusions(&read_mask(pred)?, &read_mask(gt)?, granularity)? {
                pooled.entry(class).or_default().merge(&c);
            }
        }
        let pooled: Vec<(u32, Confusion)> = pooled.into_iter().collect();
        let r = summarize(&pooled);
        return Ok(json!({
            "images": pairs.len(),
            "granularity": g,
            "f1": r.f1,
            "iou": r.iou,
            "accuracy": r.accuracy,
            "precision": r.precision,
            "recall": r.recall,
        }));
    }
    let mut acc = DepthAccumulator::default();
    for (pred, gt, mask) in &pairs {
        let pred = read_png_u16(pred)?.to_meters();
        let gt = read_png_u16(gt)?.to_meters();
        let mask = match mask {
            Some(m) => nonzero_mask(&read_png_u16(m)?),
            None => nonzero_mask(&gt),
        };
        acc.add(&pred, &gt, &mask)?;
    }
    let r = acc.finish()?;
    if a.output == "table" {
        print!("{}", format_depth_table(&[("all".to_string(), r)]));
        return Ok(Value::Null);
    }
    Ok(json!({
        "images": pairs.len(),
        "pixels": r.pixel_count,
        "rmse": r.rmse,
        "mae": r.mae,
        "rel": r.rel,
        "delta_1.05": r.delta_105,
        "delta_1.10": r.delta_110,
        "delta_1.25": r.delta_125,
    }))
}

/// Warns when the project names a different scene than the one served.
fn check_scene_ref(project: &LabelProject, project_path: &Path, scene: &Path) {
    if project.scene_ref.is_empty() {
        return;
    }
    let named = project_dir(project_path).join(&project.scene_ref);
    match (named.canonicalize(), scene.canonicalize()) {
        (Ok(a), Ok(b)) if a != b => {
            log::warn!("project scene_ref {} differs from served scene {}", a.display(), b.display())
        }
        _ => {}
    }
}

/// Builds the session a `serve` invocation would run.
pub fn build_session(a: &ServeArgs, seed: u64) -> Result<Session, ServiceError> {
    let scene = read_scene(&a.scene.scene, &a.scene.format)?;
    let field = open_field(&a.field)?;
    let project = match &a.project {
        Some(p) => load_project(p)?,
        None => LabelProject::new(&a.scene.scene.display().to_string()),
    };
    if let Some(p) = &a.project {
        check_scene_ref(&project, p, &a.scene.scene);
    }
    let mesh_dir = a
        .meshes
        .clone()
        .or_else(|| a.project.as_deref().map(project_dir))
        .unwrap_or_else(|| scene.root.clone());
    let mut meshes = MeshLibrary::new(&mesh_dir);
    meshes.load_project_meshes(&project)?;
    let options = SessionOptions {
        march: RayMarchConfig::for_bounds(&scene.aabb),
        preview_long_edge: a.preview_long_edge,
        mesh_dir: Some(mesh_dir),
        seed,
    };
    Session::new(scene, field, project, meshes, options)
}

fn serve(a: ServeArgs, seed: u64) -> Result<(), ServiceError> {
    let session = build_session(&a, seed)?;
    let addr: SocketAddr = format!("{}:{}", a.host, a.port)
        .parse()
        .map_err(|e| ServiceError::BadRequest(format!("invalid address: {e}")))?;
    let runtime = tokio::runtime::Runtime::new().map_err(|e| ServiceError::Internal(e.to_string()))?;
    runtime.block_on(async move {
        let listener = tokio::net::TcpListener::bind(addr)
            .await
            .map_err(|e| ServiceError::Io { path: addr.to_string(), source: e })?;
        log::info!("listening on {addr}");
        eprintln!("listening on http://{addr}");
        axum::serve(listener, router(Arc::new(RwLock::new(session))))
            .await
            .map_err(|e| ServiceError::Internal(e.to_string()))
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn box_argument() {
        let b = parse_box("c=1,2,3; h=0.5,0.5,0.25; q=2,0,0,0").unwrap();
        assert_eq!(b.pose.translation(), Vec3::new(1.0, 2.0, 3.0));
        assert_eq!(b.half_extents, Vec3::new(0.5, 0.5, 0.25));
        assert!(b.pose.angle_to(&RigidTransform::identity()) < 1e-12);
        assert!(parse_box("h=1,1,1").unwrap_err().contains("'c='"));
        assert!(parse_box("c=0,0,0;h=1,0,1").is_err());
        assert!(parse_vec3("1,nan,2").is_err());
    }

    #[test]
    fn scene_format_detection() {
        let dir = tempfile::tempdir().unwrap();
        assert_eq!(parse_scene_format(dir.path(), "auto").unwrap(), SceneFormat::ColmapText);
        assert_eq!(parse_scene_format(Path::new("t.json"), "auto").unwrap(), SceneFormat::TransformsJson);
        assert_eq!(parse_scene_format(Path::new("x"), "colmap").unwrap(), SceneFormat::ColmapText);
        assert!(parse_scene_format(Path::new("x"), "ply").is_err());
    }
}
