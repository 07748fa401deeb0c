//! HTTP API over a shared [`Session`].
//!
//! Mutations take an optional `base_revision`; a stale one is rejected with
//! 409. Long operations run on a snapshot and commit only if the project has
//! not moved on in the meantime.

use std::sync::{Arc, RwLock, RwLockReadGuard, RwLockWriteGuard};

use axum::body::Bytes;
use axum::extract::{Path, Query, State};
use axum::http::{header, StatusCode};
use axum::response::{IntoResponse, Response};
use axum::routing::{get, patch, post, put};
use axum::{Json, Router};
use fieldlabel_core::export::OcclusionMode;
use fieldlabel_core::geometry::{RigidTransform, Vec3};
use fieldlabel_core::labeling::{
    icp_refine, project_from_json, project_to_json, tight_fit_box, Edit, IcpConfig, LabelObject, ObjectKind,
    TightFitConfig,
};
use fieldlabel_core::mesh::{extract_mesh, save_obj, ExtractionConfig};
use fieldlabel_core::raster::{encode_png_u16, mask_to_u16};
use serde::de::DeserializeOwned;
use serde::Deserialize;
use serde_json::{json, Value};

use crate::error::ServiceError;
use crate::render::{frame_overlay, preview_masks, render_png, RenderMode};
use crate::session::{Session, Snapshot};

pub type SharedSession = Arc<RwLock<Session>>;

type ApiResult<T> = Result<T, ServiceError>;

pub fn router(session: SharedSession) -> Router {
    Router::new()
        .route("/scene", get(get_scene))
        .route("/current-frame", put(put_current_frame))
        .route("/frames/{i}/render", get(get_render))
        .route("/frames/{i}/preview-masks", get(get_preview_masks))
        .route("/frames/{i}/annotations", get(get_annotations))
        .route("/project", get(get_project).put(put_project))
        .route("/edit-log", get(get_edit_log))
        .route("/objects", post(post_object))
        .route("/objects/{id}/pose", patch(patch_pose))
        .route("/objects/{id}/icp", post(post_icp))
        .route("/objects/{id}/tight-fit", post(post_tight_fit))
        .route("/objects/{id}/extract-mesh", post(post_extract_mesh))
        .with_state(session)
}

fn read(s: &SharedSession) -> RwLockReadGuard<'_, Session> {
    s.read().unwrap_or_else(|e| e.into_inner())
}

fn write(s: &SharedSession) -> RwLockWriteGuard<'_, Session> {
    s.write().unwrap_or_else(|e| e.into_inner())
}

/// Parses a JSON body; an empty body means all defaults.
fn parse_body<T: DeserializeOwned + Default>(body: &Bytes) -> ApiResult<T> {
    if body.iter().all(u8::is_ascii_whitespace) {
        return Ok(T::default());
    }
    parse_required(body)
}

fn parse_required<T: DeserializeOwned>(body: &Bytes) -> ApiResult<T> {
    serde_json::from_slice(body).map_err(|e| match e.classify() {
        serde_json::error::Category::Data => ServiceError::Unprocessable(format!("invalid request body: {e}")),
        _ => ServiceError::BadRequest(format!("malformed JSON: {e}")),
    })
}

async fn blocking<T: Send + 'static>(f: impl FnOnce() -> ApiResult<T> + Send + 'static) -> ApiResult<T> {
    tokio::task::spawn_blocking(f)
        .await
        .map_err(|e| ServiceError::Internal(e.to_string()))?
}

fn png(bytes: Vec<u8>) -> Response {
    ([(header::CONTENT_TYPE, "image/png")], bytes).into_response()
}

fn object_json(session: &Session, id: u32) -> Value {
    json!({
        "revision": session.revision(),
        "object": session.project().object(id),
    })
}

async fn get_scene(State(s): State<SharedSession>) -> Json<Value> {
    let s = read(&s);
    let frames: Vec<Value> = s
        .scene
        .frames
        .iter()
        .map(|f| {
            json!({
                "index": f.index,
                "image_path": f.image_path,
                "width": f.width(),
                "height": f.height(),
                "intrinsics": f.intrinsics,
                "pose": f.pose,
            })
        })
        .collect();
    Json(json!({
        "frame_count": frames.len(),
        "current_frame": s.current_frame(),
        "revision": s.revision(),
        "scale": s.scene.scale,
        "aabb": s.scene.aabb,
        "preview_long_edge": s.options.preview_long_edge,
        "frames": frames,
    }))
}

#[derive(Deserialize)]
struct CurrentFrameBody {
    index: usize,
}

async fn put_current_frame(State(s): State<SharedSession>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: CurrentFrameBody = parse_required(&body)?;
    let mut s = write(&s);
    s.set_current_frame(b.index)?;
    Ok(Json(json!({ "current_frame": s.current_frame() })))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct PreviewQuery {
    mode: Option<String>,
    long_edge: Option<u32>,
    occlusion: Option<String>,
}

/// Snapshot plus the preview-sized camera of frame `index`.
fn preview_frame(
    s: &SharedSession,
    index: usize,
    long_edge: Option<u32>,
) -> ApiResult<(Snapshot, fieldlabel_core::scene::Frame)> {
    let s = read(s);
    let frame = s.frame(index)?.downscaled(long_edge.unwrap_or(s.options.preview_long_edge));
    Ok((s.snapshot(), frame))
}

async fn get_render(
    State(s): State<SharedSession>,
    Path(index): Path<usize>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let mode: RenderMode = match q.mode.as_deref() {
        None => RenderMode::Rgb,
        Some(m) => m.parse().map_err(ServiceError::BadRequest)?,
    };
    let (snap, frame) = preview_frame(&s, index, q.long_edge)?;
    let bytes = blocking(move || render_png(&snap, &frame, mode)).await?;
    Ok(png(bytes))
}

async fn get_preview_masks(
    State(s): State<SharedSession>,
    Path(index): Path<usize>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Response> {
    let occlusion: OcclusionMode = match q.occlusion.as_deref() {
        None => OcclusionMode::Field,
        Some(m) => m.parse().map_err(ServiceError::BadRequest)?,
    };
    let (snap, frame) = preview_frame(&s, index, q.long_edge)?;
    let bytes = blocking(move || {
        let masks = preview_masks(&snap, &frame, occlusion)?;
        Ok(encode_png_u16(&mask_to_u16(&masks.instance)?))
    })
    .await?;
    Ok(png(bytes))
}

async fn get_annotations(
    State(s): State<SharedSession>,
    Path(index): Path<usize>,
    Query(q): Query<PreviewQuery>,
) -> ApiResult<Json<Value>> {
    let (snap, frame) = preview_frame(&s, index, q.long_edge)?;
    Ok(Json(serde_json::to_value(frame_overlay(&snap, &frame)).expect("serializable")))
}

fn project_value(project: &fieldlabel_core::labeling::LabelProject) -> Value {
    serde_json::from_str(&project_to_json(project)).expect("project JSON")
}

async fn get_project(State(s): State<SharedSession>) -> Json<Value> {
    let s = read(&s);
    Json(json!({ "revision": s.revision(), "project": project_value(s.project()) }))
}

#[derive(Deserialize)]
struct PutProjectBody {
    #[serde(default)]
    base_revision: Option<u64>,
    project: Value,
}

async fn put_project(State(s): State<SharedSession>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: PutProjectBody = parse_required(&body)?;
    let project = project_from_json(&b.project.to_string(), "request body")?;
    let mut s = write(&s);
    // mesh labels must resolve before the project is accepted
    let mut meshes = s.meshes.clone();
    meshes.load_project_meshes(&project)?;
    let revision = s.replace_project(b.base_revision, project)?;
    s.meshes = meshes;
    Ok(Json(json!({ "revision": revision, "project": project_value(s.project()) })))
}

async fn get_edit_log(State(s): State<SharedSession>) -> Json<Value> {
    let s = read(&s);
    Json(json!({
        "revision": s.revision(),
        "initial": project_value(s.initial_project()),
        "edits": s.edit_log(),
    }))
}

#[derive(Deserialize)]
struct NewObject {
    #[serde(default)]
    id: Option<u32>,
    class_name: String,
    kind: ObjectKind,
    pose: PoseInput,
    #[serde(default)]
    half_extents: Option<Vec3>,
    #[serde(default)]
    mesh_ref: Option<String>,
    #[serde(default)]
    scale: Option<f64>,
}

#[derive(Deserialize)]
struct PostObjectBody {
    #[serde(default)]
    base_revision: Option<u64>,
    object: NewObject,
}

async fn post_object(State(s): State<SharedSession>, body: Bytes) -> ApiResult<(StatusCode, Json<Value>)> {
    let b: PostObjectBody = parse_required(&body)?;
    let pose = b.object.pose.to_transform()?;
    let mut s = write(&s);
    let id = b.object.id.filter(|&id| id > 0).unwrap_or_else(|| s.project().next_id());
    let object = LabelObject {
        id,
        class_name: b.object.class_name,
        kind: b.object.kind,
        pose,
        half_extents: b.object.half_extents,
        mesh_ref: b.object.mesh_ref,
        scale: b.object.scale.unwrap_or(1.0),
    };
    if let Some(r) = &object.mesh_ref {
        if s.meshes.get(r).is_none() {
            s.meshes.load(r)?;
        }
    }
    s.commit(b.base_revision, vec![Edit::Add { object, index: None }])?;
    Ok((StatusCode::CREATED, Json(object_json(&s, id))))
}

/// Pose as sent by clients: unit quaternion (w, x, y, z) plus translation.
/// The quaternion is normalized here; zero or non-finite input is rejected.
#[derive(Debug, Clone, Copy, Deserialize)]
pub struct PoseInput {
    #[serde(alias = "quaternion_wxyz", alias = "quaternion")]
    pub q: [f64; 4],
    #[serde(alias = "translation")]
    pub t: [f64; 3],
}

impl PoseInput {
    pub fn to_transform(&self) -> ApiResult<RigidTransform> {
        if self.q.iter().chain(&self.t).any(|v| !v.is_finite()) {
            return Err(ServiceError::InvalidPose("non-finite component".into()));
        }
        let norm = self.q.iter().map(|v| v * v).sum::<f64>().sqrt();
        if norm <= 1e-9 {
            return Err(ServiceError::InvalidPose("quaternion has zero length".into()));
        }
        let q = self.q.map(|v| v / norm);
        RigidTransform::from_wxyz(q, Vec3::from(self.t))
            .ok_or_else(|| ServiceError::InvalidPose("quaternion could not be normalized".into()))
    }
}

#[derive(Deserialize)]
struct PatchPoseBody {
    #[serde(default)]
    base_revision: Option<u64>,
    pose: PoseInput,
}

async fn patch_pose(State(s): State<SharedSession>, Path(id): Path<u32>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: PatchPoseBody = parse_required(&body)?;
    let pose = b.pose.to_transform()?;
    let mut s = write(&s);
    s.commit(b.base_revision, vec![Edit::SetPose { id, pose }])?;
    Ok(Json(object_json(&s, id)))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct IcpBody {
    base_revision: Option<u64>,
    config: Option<IcpConfig>,
}

async fn post_icp(State(s): State<SharedSession>, Path(id): Path<u32>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: IcpBody = parse_body(&body)?;
    let snap = read(&s).snapshot();
    let base = b.base_revision.unwrap_or(snap.revision);
    let cfg = b.config.unwrap_or(IcpConfig {
        seed: snap.options.seed,
        ..Default::default()
    });
    let result = blocking(move || {
        Ok(icp_refine(
            &snap.project,
            id,
            &snap.scene,
            &*snap.field,
            &snap.meshes,
            &snap.options.march,
            &cfg,
        )?)
    })
    .await?;
    let mut s = write(&s);
    s.commit(Some(base), vec![Edit::SetPose { id, pose: result.transform }])?;
    let mut out = object_json(&s, id);
    out["residual_rms"] = json!(result.residual_rms);
    out["iterations"] = json!(result.iterations);
    out["converged"] = json!(result.converged);
    out["history"] = json!(result.history);
    Ok(Json(out))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct TightFitBody {
    base_revision: Option<u64>,
    config: Option<TightFitConfig>,
}

async fn post_tight_fit(State(s): State<SharedSession>, Path(id): Path<u32>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: TightFitBody = parse_body(&body)?;
    let snap = read(&s).snapshot();
    let base = b.base_revision.unwrap_or(snap.revision);
    let cfg = b.config.unwrap_or_default();
    let fitted = blocking(move || Ok(tight_fit_box(&snap.project, id, &*snap.field, &cfg)?)).await?;
    let mut s = write(&s);
    s.commit(
        Some(base),
        vec![
            Edit::SetPose { id, pose: fitted.pose },
            Edit::SetHalfExtents { id, half_extents: fitted.half_extents },
        ],
    )?;
    Ok(Json(object_json(&s, id)))
}

#[derive(Deserialize, Default)]
#[serde(default)]
struct ExtractBody {
    base_revision: Option<u64>,
    config: Option<ExtractionConfig>,
    /// Turn the box label into a mesh label using the new mesh.
    replace_label: bool,
}

/// Library key of the mesh extracted for object `id`.
pub fn extracted_mesh_ref(id: u32) -> String {
    format!("meshes/object_{id:06}.obj")
}

async fn post_extract_mesh(State(s): State<SharedSession>, Path(id): Path<u32>, body: Bytes) -> ApiResult<Json<Value>> {
    let b: ExtractBody = parse_body(&body)?;
    let snap = read(&s).snapshot();
    let base = b.base_revision.unwrap_or(snap.revision);
    let cfg = b.config.unwrap_or_default();
    let object = snap.project.object(id).ok_or(fieldlabel_core::labeling::LabelError::UnknownObject(id))?.clone();
    object.expect_kind(ObjectKind::Box)?;
    let region = object
        .labeled_box()
        .ok_or_else(|| ServiceError::Unprocessable(format!("object {id} has invalid half extents")))?;
    let field = snap.field.clone();
    let local = blocking(move || {
        let world = extract_mesh(&*field, &region, &cfg)?;
        if world.is_empty() {
            return Err(ServiceError::Unprocessable("no surface above the density threshold in the box".into()));
        }
        let mut local = world.transformed(&region.pose.inverse());
        local.compute_normals();
        Ok(local)
    })
    .await?;
    let mesh_ref = extracted_mesh_ref(id);
    let closed = local.is_closed();
    let (vertex_count, triangle_count) = (local.vertices.len(), local.triangles.len());

    let mut s = write(&s);
    if let Some(dir) = &s.options.mesh_dir {
        let path = dir.join(&mesh_ref);
        if let Some(parent) = path.parent() {
            std::fs::create_dir_all(parent).map_err(|e| ServiceError::io(parent, e))?;
        }
        save_obj(&local, &path)?;
    }
    let edits = if b.replace_label {
        let index = s.project().objects.iter().position(|o| o.id == id);
        let mesh_label = LabelObject::new_mesh(id, &object.class_name, object.pose, &mesh_ref, 1.0);
        vec![Edit::Remove { id }, Edit::Add { object: mesh_label, index }]
    } else {
        Vec::new()
    };
    s.meshes.insert(&mesh_ref, local);
    if !edits.is_empty() {
        s.commit(Some(base), edits)?;
    }
    let mut out = object_json(&s, id);
    out["mesh_ref"] = json!(mesh_ref);
    out["vertex_count"] = json!(vertex_count);
    out["triangle_count"] = json!(triangle_count);
    out["closed"] = json!(closed);
    Ok(Json(out))
}
