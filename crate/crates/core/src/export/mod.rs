//! Per-frame ground truth: occlusion-aware masks, depth, poses and boxes,
//! and the on-disk dataset layout.

mod patch;

use std::collections::HashMap;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::field::{pixel_field_depth, DensityField, RayMarchConfig};
use crate::geometry::{Box2D, OrientedBox, RigidTransform, TwoCornerBox, Vec3};
use crate::labeling::{LabelError, LabelObject, LabelProject, MeshLibrary, ObjectKind};
use crate::mesh::{write_obj, MeshError, MeshScene, PosedMesh, TriMesh};
use crate::raster::{
    encode_png_u16, encode_png_u8, read_png_u16, DepthMap, IdMap, MaskImage, Raster, RasterError,
};
use crate::scene::{project, Frame, SceneDescription};

pub use patch::{denormalize_depth, normalize_depth, prepare_training_patch, PatchMode, TrainingPatch, PATCH_SIZE};

pub const ANNOTATION_SCHEMA_VERSION: u32 = 1;

#[derive(Debug, Error)]
pub enum ExportError {
    #[error(transparent)]
    Raster(#[from] RasterError),
    #[error(transparent)]
    Label(#[from] LabelError),
    #[error(transparent)]
    Mesh(#[from] MeshError),
    #[error("frame {frame}: occlusion mode 'sensor' needs sensor depth, none listed")]
    MissingSensorDepth { frame: usize },
    #[error("frame {frame}: occlusion mode 'field' needs a density field")]
    MissingField { frame: usize },
    #[error("object id {0} has no class")]
    UnknownObject(u32),
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OcclusionMode {
    Field,
    Sensor,
    None,
}

impl std::str::FromStr for OcclusionMode {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "field" => Ok(Self::Field),
            "sensor" => Ok(Self::Sensor),
            "none" => Ok(Self::None),
            other => Err(format!("unknown occlusion mode '{other}' (expected field, sensor or none)")),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OcclusionConfig {
    pub mode: OcclusionMode,
    /// Tolerance (meters) for both the occlusion and the sensor combination tests.
    pub epsilon: f64,
}

impl Default for OcclusionConfig {
    fn default() -> Self {
        Self {
            mode: OcclusionMode::Field,
            epsilon: 0.01,
        }
    }
}

impl OcclusionConfig {
    pub fn validate(&self) -> Result<(), ExportError> {
        if !(self.epsilon >= 0.0) {
            return Err(ExportError::InvalidInput(format!("epsilon must be >= 0, got {}", self.epsilon)));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Masks {
    /// 255 where any instance is visible.
    pub binary: Raster<u8>,
    pub instance: MaskImage,
    pub class: MaskImage,
}

/// Visibility rule per pixel: an object fragment is shown unless the
/// occluder surface lies more than `epsilon` in front of it.
pub fn is_visible(id: u32, mesh_depth: f64, occluder_depth: f64, cfg: &OcclusionConfig) -> bool {
    id > 0 && (cfg.mode == OcclusionMode::None || occluder_depth == 0.0 || mesh_depth <= occluder_depth + cfg.epsilon)
}

pub fn compose_masks(
    id_map: &IdMap,
    mesh_depth: &DepthMap,
    occluder_depth: &DepthMap,
    cfg: &OcclusionConfig,
    class_of: &HashMap<u32, u32>,
) -> Result<Masks, ExportError> {
    cfg.validate()?;
    id_map.ensure_same_dims(mesh_depth)?;
    id_map.ensure_same_dims(occluder_depth)?;
    let (w, h) = id_map.dims();
    let mut instance = Raster::filled(w, h, 0u32);
    let mut class = Raster::filled(w, h, 0u32);
    let mut binary = Raster::filled(w, h, 0u8);
    for i in 0..w * h {
        let id = id_map.data()[i];
        if !is_visible(id, mesh_depth.data()[i], occluder_depth.data()[i], cfg) {
            continue;
        }
        let c = *class_of.get(&id).ok_or(ExportError::UnknownObject(id))?;
        instance.data_mut()[i] = id;
        class.data_mut()[i] = c;
        binary.data_mut()[i] = 255;
    }
    Ok(Masks { binary, instance, class })
}

/// Merges rendered object depth with sensor depth (meters, 0 = missing).
///
/// Where an object is rendered the sensor value is kept only if it lies more
/// than `epsilon` in front of the object surface; missing or farther sensor
/// values are replaced by the object depth.
pub fn combine_depth(mesh_depth: &DepthMap, sensor_depth: &DepthMap, epsilon: f64) -> Result<DepthMap, ExportError> {
    mesh_depth.ensure_same_dims(sensor_depth)?;
    let data = mesh_depth
        .data()
        .iter()
        .zip(sensor_depth.data())
        .map(|(&m, &s)| {
            if m == 0.0 {
                s
            } else if s == 0.0 || s > m - epsilon {
                m
            } else {
                s
            }
        })
        .collect();
    Ok(Raster::from_vec(mesh_depth.width(), mesh_depth.height(), data))
}

/// Object pose relative to the camera: inverse(camera-to-world) ∘ object-to-world.
pub fn export_pose(frame: &Frame, object_pose_world: &RigidTransform) -> RigidTransform {
    frame.pose.to_transform().inverse().compose(object_pose_world)
}

/// Tight box over the pixels equal to `object_id`, inclusive pixel indices.
pub fn export_bbox2d_modal(mask: &MaskImage, object_id: u32) -> Option<Box2D> {
    let mut lo = [usize::MAX; 2];
    let mut hi = [0usize; 2];
    for (y, row) in mask.rows().enumerate() {
        for (x, &v) in row.iter().enumerate() {
            if v == object_id {
                lo = [lo[0].min(x), lo[1].min(y)];
                hi = [hi[0].max(x), hi[1].max(y)];
            }
        }
    }
    (lo[0] != usize::MAX).then(|| Box2D {
        min: [lo[0] as f64, lo[1] as f64],
        max: [hi[0] as f64, hi[1] as f64],
    })
}

/// Box over the pixels containing any projected world vertex in front of the
/// camera, clipped to the image. Absent if nothing projects onto the image.
pub fn export_bbox2d_amodal(frame: &Frame, world_vertices: &[Vec3]) -> Option<Box2D> {
    let mut lo = [f64::INFINITY; 2];
    let mut hi = [f64::NEG_INFINITY; 2];
    for p in world_vertices {
        if let Some((u, v, _)) = project(frame, p) {
            lo = [lo[0].min(u), lo[1].min(v)];
            hi = [hi[0].max(u), hi[1].max(v)];
        }
    }
    let (w, h) = (frame.width() as f64, frame.height() as f64);
    if !lo[0].is_finite() || hi[0] < 0.0 || hi[1] < 0.0 || lo[0] >= w || lo[1] >= h {
        return None;
    }
    let clip = |x: f64, n: f64| x.floor().clamp(0.0, n - 1.0);
    Some(Box2D {
        min: [clip(lo[0], w), clip(lo[1], h)],
        max: [clip(hi[0], w), clip(hi[1], h)],
    })
}

/// World box of a label: the labeled box, or the scaled mesh's object-frame AABB.
pub fn object_world_box(object: &LabelObject, mesh: Option<&TriMesh>) -> Option<OrientedBox> {
    match object.kind {
        ObjectKind::Box => object.labeled_box(),
        ObjectKind::Mesh => object.mesh_box(mesh?),
    }
}

/// 3D box of a label in the camera frame.
pub fn export_bbox3d(object: &LabelObject, mesh: Option<&TriMesh>, frame: &Frame) -> Option<OrientedBox> {
    let world = object_world_box(object, mesh)?;
    Some(world.transformed(&frame.pose.to_transform().inverse()))
}

/// Geometry used to render a label: its mesh, or a cuboid for box labels.
/// Returned in the object frame with scale applied.
pub fn object_geometry(object: &LabelObject, meshes: &MeshLibrary) -> Result<Arc<TriMesh>, ExportError> {
    match object.kind {
        ObjectKind::Box => {
            let h = object.half_extents.ok_or_else(|| LabelError::InvalidObject {
                id: object.id,
                message: "box label needs half_extents".into(),
            })?;
            Ok(Arc::new(TriMesh::cuboid(&h)))
        }
        ObjectKind::Mesh => {
            let mesh = meshes.mesh_for(object)?;
            if object.scale == 1.0 {
                Ok(mesh)
            } else {
                Ok(Arc::new(mesh.scaled(object.scale)))
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ExportConfig {
    pub occlusion: OcclusionConfig,
    pub march: RayMarchConfig,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Box3DRecord {
    pub pose: RigidTransform,
    pub half_extents: Vec3,
    pub corners: TwoCornerBox,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ObjectAnnotation {
    pub id: u32,
    pub class_name: String,
    pub class_id: u32,
    /// Object pose in the camera frame.
    pub pose: RigidTransform,
    pub box3d: Option<Box3DRecord>,
    /// `[x_min, y_min, x_max, y_max]`, inclusive pixel indices.
    pub box2d_modal: Option<[f64; 4]>,
    pub box2d_amodal: Option<[f64; 4]>,
    pub visible_pixels: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameAnnotation {
    pub schema_version: u32,
    pub frame_index: usize,
    pub image_path: String,
    pub width: usize,
    pub height: usize,
    pub objects: Vec<ObjectAnnotation>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameExport {
    pub annotation: FrameAnnotation,
    pub masks: Masks,
    /// Object depth in meters, 0 where no object is rendered.
    pub depth: DepthMap,
    pub id_map: IdMap,
    /// Occluder depth used for masking (zeros with occlusion mode `none`).
    pub occluder_depth: DepthMap,
    pub combined_depth: Option<DepthMap>,
}

/// Geometry of every label, ready for repeated per-frame rendering.
pub struct PreparedProject {
    pub scene: MeshScene,
    geometry: HashMap<u32, Arc<TriMesh>>,
}

impl PreparedProject {
    pub fn new(project: &LabelProject, meshes: &MeshLibrary) -> Result<Self, ExportError> {
        let mut geometry = HashMap::new();
        for o in &project.objects {
            geometry.insert(o.id, object_geometry(o, meshes)?);
        }
        let posed: Vec<PosedMesh> = project
            .objects
            .iter()
            .map(|o| PosedMesh {
                object_id: o.id,
                mesh: &geometry[&o.id],
                pose: o.pose,
            })
            .collect();
        Ok(Self {
            scene: MeshScene::new(&posed),
            geometry,
        })
    }

    pub fn geometry(&self, id: u32) -> Option<&TriMesh> {
        self.geometry.get(&id).map(|m| m.as_ref())
    }
}

pub fn load_sensor_depth(scene: &SceneDescription, frame: &Frame) -> Result<Option<DepthMap>, ExportError> {
    let Some(rel) = &frame.sensor_depth_path else {
        return Ok(None);
    };
    let mm = read_png_u16(&scene.resolve(rel))?;
    if mm.dims() != (frame.width(), frame.height()) {
        return Err(RasterError::DimensionMismatch(frame.width(), frame.height(), mm.width(), mm.height()).into());
    }
    Ok(Some(mm.to_meters()))
}

/// Full annotation of one frame.
///
/// `sensor_depth` is the frame's sensor raster in meters, when available.
pub fn export_frame(
    project: &LabelProject,
    prepared: &PreparedProject,
    field: Option<&dyn DensityField>,
    frame: &Frame,
    sensor_depth: Option<&DepthMap>,
    cfg: &ExportConfig,
) -> Result<FrameExport, ExportError> {
    cfg.occlusion.validate()?;
    let (w, h) = (frame.width(), frame.height());
    let (depth, id_map) = prepared.scene.render(frame);

    let occluder_depth = match cfg.occlusion.mode {
        OcclusionMode::None => Raster::filled(w, h, 0.0),
        OcclusionMode::Sensor => sensor_depth
            .cloned()
            .ok_or(ExportError::MissingSensorDepth { frame: frame.index })?,
        OcclusionMode::Field => {
            let field = field.ok_or(ExportError::MissingField { frame: frame.index })?;
            // the field is only consulted under rendered objects
            let rows: Vec<Vec<f64>> = (0..h)
                .into_par_iter()
                .map(|y| {
                    (0..w)
                        .map(|x| {
                            if *id_map.get(x, y) > 0 {
                                pixel_field_depth(field, frame, x, y, &cfg.march)
                            } else {
                                0.0
                            }
                        })
                        .collect()
                })
                .collect();
            Raster::from_vec(w, h, rows.concat())
        }
    };
    if let Some(s) = sensor_depth {
        depth.ensure_same_dims(s)?;
    }

    let class_of = project.object_classes();
    let masks = compose_masks(&id_map, &depth, &occluder_depth, &cfg.occlusion, &class_of)?;
    let combined_depth = sensor_depth
        .map(|s| combine_depth(&depth, s, cfg.occlusion.epsilon))
        .transpose()?;

    let mut visible: HashMap<u32, usize> = HashMap::new();
    for &id in masks.instance.data() {
        if id > 0 {
            *visible.entry(id).or_default() += 1;
        }
    }
    let camera_inv = frame.pose.to_transform().inverse();
    let objects = project
        .objects
        .iter()
        .map(|o| {
            let geometry = prepared.geometry(o.id);
            let world_vertices: Vec<Vec3> = geometry
                .map(|g| g.vertices.iter().map(|v| o.pose.apply(v)).collect())
                .unwrap_or_default();
            // prepared geometry already carries the mesh scale
            let world_box = match o.kind {
                ObjectKind::Box => o.labeled_box(),
                ObjectKind::Mesh => geometry.and_then(|g| {
                    let unit = LabelObject { scale: 1.0, ..o.clone() };
                    unit.mesh_box(g)
                }),
            };
            let box3d = world_box
                .map(|b| b.transformed(&camera_inv))
                .map(|b| Box3DRecord {
                    pose: b.pose,
                    half_extents: b.half_extents,
                    corners: b.two_corner_view(),
                });
            let flat = |b: Box2D| [b.min[0], b.min[1], b.max[0], b.max[1]];
            ObjectAnnotation {
                id: o.id,
                class_name: o.class_name.clone(),
                class_id: class_of.get(&o.id).copied().unwrap_or(0),
                pose: camera_inv.compose(&o.pose),
                box3d,
                box2d_modal: export_bbox2d_modal(&masks.instance, o.id).map(flat),
                box2d_amodal: export_bbox2d_amodal(frame, &world_vertices).map(flat),
                visible_pixels: visible.get(&o.id).copied().unwrap_or(0),
            }
        })
        .collect();

    Ok(FrameExport {
        annotation: FrameAnnotation {
            schema_version: ANNOTATION_SCHEMA_VERSION,
            frame_index: frame.index,
            image_path: frame.image_path.clone(),
            width: w,
            height: h,
            objects,
        },
        masks,
        depth,
        id_map,
        occluder_depth,
        combined_depth,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExportSummary {
    pub frames: usize,
    pub objects: usize,
    pub clamped_depth_pixels: usize,
    pub files: Vec<PathBuf>,
}

#[derive(Serialize)]
struct ClassEntry<'a> {
    id: u32,
    name: &'a str,
}

#[derive(Serialize)]
struct ClassesFile<'a> {
    schema_version: u32,
    classes: Vec<ClassEntry<'a>>,
}

/// Writes `bytes` to `path` through a temporary file in the same directory.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), ExportError> {
    let io_err = |source| ExportError::Io {
        path: path.display().to_string(),
        source,
    };
    let dir = path.parent().unwrap_or_else(|| Path::new("."));
    let mut tmp = tempfile::NamedTempFile::new_in(dir).map_err(io_err)?;
    tmp.write_all(bytes).map_err(io_err)?;
    tmp.persist(path).map_err(|e| io_err(e.error))?;
    Ok(())
}

pub const LAYOUT_DIRS: [&str; 7] = [
    "depth",
    "combined_depth",
    "mask_binary",
    "mask_instance",
    "mask_class",
    "annotations",
    "meshes",
];

/// Object-frame mesh file name used in the `meshes/` directory.
pub fn mesh_file_name(object: &LabelObject) -> String {
    format!("{:06}.obj", object.id)
}

/// Exports every frame of the scene into `out_dir`.
pub fn export_scene(
    project: &LabelProject,
    meshes: &MeshLibrary,
    field: Option<&dyn DensityField>,
    scene: &SceneDescription,
    cfg: &ExportConfig,
    out_dir: &Path,
) -> Result<ExportSummary, ExportError> {
    project.validate()?;
    for d in LAYOUT_DIRS {
        let p = out_dir.join(d);
        std::fs::create_dir_all(&p).map_err(|source| ExportError::Io {
            path: p.display().to_string(),
            source,
        })?;
    }
    let prepared = PreparedProject::new(project, meshes)?;

    let per_frame: Vec<(Vec<PathBuf>, usize)> = scene
        .frames
        .par_iter()
        .map(|frame| -> Result<(Vec<PathBuf>, usize), ExportError> {
            let sensor = load_sensor_depth(scene, frame)?;
            let fe = export_frame(project, &prepared, field, frame, sensor.as_ref(), cfg)?;
            let name = format!("{:06}", frame.index);
            let mut files = Vec::new();
            let mut put = |dir: &str, ext: &str, bytes: Vec<u8>| -> Result<(), ExportError> {
                let p = out_dir.join(dir).join(format!("{name}.{ext}"));
                write_atomic(&p, &bytes)?;
                files.push(p);
                Ok(())
            };
            let (depth_mm, mut clamped) = fe.depth.to_millimeters();
            put("depth", "png", encode_png_u16(&depth_mm))?;
            if let Some(c) = &fe.combined_depth {
                let (mm, n) = c.to_millimeters();
                clamped += n;
                put("combined_depth", "png", encode_png_u16(&mm))?;
            }
            put("mask_binary", "png", encode_png_u8(&fe.masks.binary))?;
            put("mask_instance", "png", encode_png_u16(&crate::raster::mask_to_u16(&fe.masks.instance)?))?;
            put("mask_class", "png", encode_png_u16(&crate::raster::mask_to_u16(&fe.masks.class)?))?;
            let json = serde_json::to_string_pretty(&fe.annotation).expect("serializable");
            put("annotations", "json", json.into_bytes())?;
            if clamped > 0 {
                log::warn!("frame {}: {clamped} depth pixels beyond 65.535 m were clamped", frame.index);
            }
            Ok((files, clamped))
        })
        .collect::<Result<_, _>>()?;

    let mut files: Vec<PathBuf> = per_frame.iter().flat_map(|(f, _)| f.clone()).collect();
    let clamped_depth_pixels = per_frame.iter().map(|(_, c)| c).sum();

    for o in &project.objects {
        let geometry = prepared.geometry(o.id).expect("prepared");
        let p = out_dir.join("meshes").join(mesh_file_name(o));
        write_atomic(&p, write_obj(geometry).as_bytes())?;
        files.push(p);
    }
    let classes = ClassesFile {
        schema_version: ANNOTATION_SCHEMA_VERSION,
        classes: {
            let mut v: Vec<ClassEntry> = project
                .class_table
                .iter()
                .map(|(name, &id)| ClassEntry { id, name })
                .collect();
            v.sort_by_key(|c| c.id);
            v
        },
    };
    let p = out_dir.join("classes.json");
    write_atomic(&p, serde_json::to_string_pretty(&classes).expect("serializable").as_bytes())?;
    files.push(p);
    files.sort();
    Ok(ExportSummary {
        frames: scene.frames.len(),
        objects: project.objects.len(),
        clamped_depth_pixels,
        files,
    })
}
