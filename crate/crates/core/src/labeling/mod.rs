//! The annotation document: labeled objects, their edits and persistence.

mod icp;
mod tight_fit;

use std::collections::{BTreeMap, HashMap, HashSet};
use std::path::{Path, PathBuf};
use std::sync::Arc;

use nalgebra::UnitQuaternion;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::geometry::{OrientedBox, RigidTransform, Vec3};
use crate::mesh::{load_obj, MeshError, TriMesh};

pub use icp::{icp_align, icp_refine, icp_target_cloud, rigid_fit, IcpConfig, IcpResult};
pub use tight_fit::{tight_fit_box, tight_fit_obb, TightFitConfig};

pub const SCHEMA_VERSION: u32 = 2;
pub const SUPPORTED_VERSIONS: [u32; 2] = [1, 2];

#[derive(Debug, Error)]
pub enum LabelError {
    #[error("unknown object id {0}")]
    UnknownObject(u32),
    #[error("duplicate object id {0}")]
    DuplicateId(u32),
    #[error("object id must be positive")]
    ZeroId,
    #[error("scale must be > 0, got {0}")]
    InvalidScale(f64),
    #[error("object {id}: {message}")]
    InvalidObject { id: u32, message: String },
    #[error("object {id} is a {actual} label, operation needs a {expected} label")]
    WrongKind {
        id: u32,
        expected: ObjectKind,
        actual: ObjectKind,
    },
    #[error("insufficient overlap: {found} correspondences within range (need {needed})")]
    InsufficientOverlap { found: usize, needed: usize },
    #[error("box contains no geometry")]
    NoGeometry,
    #[error("unsupported schema version {found} (supported: {supported:?})")]
    UnsupportedVersion { found: u32, supported: Vec<u32> },
    #[error("invalid class table: {0}")]
    ClassTable(String),
    #[error("{path}: {message}")]
    Parse { path: String, message: String },
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Mesh(#[from] MeshError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ObjectKind {
    Box,
    Mesh,
}

impl std::fmt::Display for ObjectKind {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(match self {
            ObjectKind::Box => "box",
            ObjectKind::Mesh => "mesh",
        })
    }
}

fn default_scale() -> f64 {
    1.0
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabelObject {
    pub id: u32,
    pub class_name: String,
    pub kind: ObjectKind,
    /// Object-to-world transform.
    pub pose: RigidTransform,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub half_extents: Option<Vec3>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mesh_ref: Option<String>,
    /// Uniform scale applied to the mesh in its own frame.
    #[serde(default = "default_scale")]
    pub scale: f64,
}

impl LabelObject {
    pub fn new_box(id: u32, class_name: &str, pose: RigidTransform, half_extents: Vec3) -> Self {
        Self {
            id,
            class_name: class_name.to_string(),
            kind: ObjectKind::Box,
            pose,
            half_extents: Some(half_extents),
            mesh_ref: None,
            scale: 1.0,
        }
    }

    pub fn new_mesh(id: u32, class_name: &str, pose: RigidTransform, mesh_ref: &str, scale: f64) -> Self {
        Self {
            id,
            class_name: class_name.to_string(),
            kind: ObjectKind::Mesh,
            pose,
            half_extents: None,
            mesh_ref: Some(mesh_ref.to_string()),
            scale,
        }
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        let invalid = |message: &str| LabelError::InvalidObject {
            id: self.id,
            message: message.to_string(),
        };
        if self.id == 0 {
            return Err(LabelError::ZeroId);
        }
        if !(self.scale > 0.0) || !self.scale.is_finite() {
            return Err(LabelError::InvalidScale(self.scale));
        }
        if self.class_name.is_empty() {
            return Err(invalid("class_name is empty"));
        }
        match self.kind {
            ObjectKind::Box => match self.half_extents {
                Some(h) if h.iter().all(|v| *v > 0.0 && v.is_finite()) => Ok(()),
                Some(_) => Err(invalid("half_extents must be positive")),
                None => Err(invalid("box label needs half_extents")),
            },
            ObjectKind::Mesh => match &self.mesh_ref {
                Some(r) if !r.is_empty() => Ok(()),
                _ => Err(invalid("mesh label needs mesh_ref")),
            },
        }
    }

    pub fn expect_kind(&self, expected: ObjectKind) -> Result<(), LabelError> {
        if self.kind == expected {
            Ok(())
        } else {
            Err(LabelError::WrongKind {
                id: self.id,
                expected,
                actual: self.kind,
            })
        }
    }

    /// World-space box of a box label.
    pub fn labeled_box(&self) -> Option<OrientedBox> {
        OrientedBox::new(self.pose, self.half_extents?)
    }

    /// World-space box around the scaled mesh: its object-frame AABB carried by the pose.
    pub fn mesh_box(&self, mesh: &TriMesh) -> Option<OrientedBox> {
        if mesh.vertices.is_empty() {
            return None;
        }
        let b = mesh.bounds();
        let center = b.center() * self.scale;
        let half = (b.extent() * 0.5 * self.scale).map(|h| h.max(1e-9));
        OrientedBox::new(self.pose.compose(&RigidTransform::from_translation(center)), half)
    }

    /// Mesh in world coordinates (scaled, then posed).
    pub fn posed_mesh(&self, mesh: &TriMesh) -> TriMesh {
        mesh.scaled(self.scale).transformed(&self.pose)
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct LabelProject {
    pub scene_ref: String,
    /// Class name to id; ids are dense and start at 1.
    pub class_table: BTreeMap<String, u32>,
    pub objects: Vec<LabelObject>,
}

/// A single journaled change. Every edit has an exact inverse.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "op", rename_all = "snake_case")]
pub enum Edit {
    Add {
        object: LabelObject,
        /// Position in the object list; appended when absent.
        #[serde(default, skip_serializing_if = "Option::is_none")]
        index: Option<usize>,
    },
    Remove { id: u32 },
    /// World-frame translation.
    Translate { id: u32, delta: Vec3 },
    /// World-frame rotation about the object origin, as a rotation vector (radians).
    Rotate { id: u32, axis_angle: Vec3 },
    /// Multiplies mesh scale, or box half-extents for box labels.
    Scale { id: u32, factor: f64 },
    SetPose { id: u32, pose: RigidTransform },
    SetHalfExtents { id: u32, half_extents: Vec3 },
    SetScale { id: u32, scale: f64 },
}

impl Edit {
    pub fn target(&self) -> u32 {
        match self {
            Edit::Add { object, .. } => object.id,
            Edit::Remove { id }
            | Edit::Translate { id, .. }
            | Edit::Rotate { id, .. }
            | Edit::Scale { id, .. }
            | Edit::SetPose { id, .. }
            | Edit::SetHalfExtents { id, .. }
            | Edit::SetScale { id, .. } => *id,
        }
    }
}

impl LabelProject {
    pub fn new(scene_ref: &str) -> Self {
        Self {
            scene_ref: scene_ref.to_string(),
            ..Default::default()
        }
    }

    pub fn object(&self, id: u32) -> Option<&LabelObject> {
        self.objects.iter().find(|o| o.id == id)
    }

    fn position(&self, id: u32) -> Result<usize, LabelError> {
        self.objects
            .iter()
            .position(|o| o.id == id)
            .ok_or(LabelError::UnknownObject(id))
    }

    pub fn class_id(&self, class_name: &str) -> Option<u32> {
        self.class_table.get(class_name).copied()
    }

    /// Class id of each object id.
    pub fn object_classes(&self) -> HashMap<u32, u32> {
        self.objects
            .iter()
            .filter_map(|o| Some((o.id, self.class_id(&o.class_name)?)))
            .collect()
    }

    pub fn next_id(&self) -> u32 {
        self.objects.iter().map(|o| o.id).max().unwrap_or(0) + 1
    }

    pub fn validate(&self) -> Result<(), LabelError> {
        let mut seen = HashSet::new();
        for o in &self.objects {
            o.validate()?;
            if !seen.insert(o.id) {
                return Err(LabelError::DuplicateId(o.id));
            }
            if !self.class_table.contains_key(&o.class_name) {
                return Err(LabelError::ClassTable(format!("class '{}' of object {} is not listed", o.class_name, o.id)));
            }
        }
        let mut ids: Vec<u32> = self.class_table.values().copied().collect();
        ids.sort_unstable();
        if ids.iter().enumerate().any(|(i, &id)| id != i as u32 + 1) {
            return Err(LabelError::ClassTable(format!("class ids must be 1..={}, got {ids:?}", ids.len())));
        }
        Ok(())
    }

    /// Applies an edit, returning the new project and the edit that undoes it.
    pub fn apply(&self, edit: &Edit) -> Result<(LabelProject, Edit), LabelError> {
        let mut next = self.clone();
        let inverse = match edit {
            Edit::Add { object, index } => {
                object.validate()?;
                if self.object(object.id).is_some() {
                    return Err(LabelError::DuplicateId(object.id));
                }
                if !next.class_table.contains_key(&object.class_name) {
                    let id = next.class_table.len() as u32 + 1;
                    next.class_table.insert(object.class_name.clone(), id);
                }
                let at = index.unwrap_or(next.objects.len()).min(next.objects.len());
                next.objects.insert(at, object.clone());
                Edit::Remove { id: object.id }
            }
            Edit::Remove { id } => {
                let at = self.position(*id)?;
                let removed = next.objects.remove(at);
                // drop the class again when it was the newest one and is now unused,
                // so add followed by remove restores the original table
                let class_id = next.class_table[&removed.class_name];
                let unused = next.objects.iter().all(|o| o.class_name != removed.class_name);
                if unused && class_id as usize == next.class_table.len() {
                    next.class_table.remove(&removed.class_name);
                }
                Edit::Add {
                    object: removed,
                    index: Some(at),
                }
            }
            Edit::Translate { id, delta } => {
                let at = self.position(*id)?;
                let o = &mut next.objects[at];
                let old = o.pose;
                o.pose = o.pose.with_translation(o.pose.translation() + delta);
                Edit::SetPose { id: *id, pose: old }
            }
            Edit::Rotate { id, axis_angle } => {
                let at = self.position(*id)?;
                let o = &mut next.objects[at];
                let old = o.pose;
                let q = UnitQuaternion::from_scaled_axis(*axis_angle);
                o.pose = RigidTransform::new(q * o.pose.rotation(), o.pose.translation());
                Edit::SetPose { id: *id, pose: old }
            }
            Edit::Scale { id, factor } => {
                if !(*factor > 0.0) || !factor.is_finite() {
                    return Err(LabelError::InvalidScale(*factor));
                }
                let at = self.position(*id)?;
                let o = &mut next.objects[at];
                match o.kind {
                    ObjectKind::Mesh => {
                        let old = o.scale;
                        o.scale *= factor;
                        Edit::SetScale { id: *id, scale: old }
                    }
                    ObjectKind::Box => {
                        let old = o.half_extents.expect("validated box");
                        o.half_extents = Some(old * *factor);
                        Edit::SetHalfExtents { id: *id, half_extents: old }
                    }
                }
            }
            Edit::SetPose { id, pose } => {
                let at = self.position(*id)?;
                let old = std::mem::replace(&mut next.objects[at].pose, *pose);
                Edit::SetPose { id: *id, pose: old }
            }
            Edit::SetHalfExtents { id, half_extents } => {
                let at = self.position(*id)?;
                let o = &mut next.objects[at];
                o.expect_kind(ObjectKind::Box)?;
                let old = o.half_extents.replace(*half_extents).expect("validated box");
                o.validate()?;
                Edit::SetHalfExtents { id: *id, half_extents: old }
            }
            Edit::SetScale { id, scale } => {
                if !(*scale > 0.0) || !scale.is_finite() {
                    return Err(LabelError::InvalidScale(*scale));
                }
                let at = self.position(*id)?;
                let old = std::mem::replace(&mut next.objects[at].scale, *scale);
                Edit::SetScale { id: *id, scale: old }
            }
        };
        Ok((next, inverse))
    }
}

/// Re-applies a journal to an initial project.
pub fn replay(initial: &LabelProject, log: &[Edit]) -> Result<LabelProject, LabelError> {
    log.iter()
        .try_fold(initial.clone(), |p, e| p.apply(e).map(|(next, _)| next))
}

/// A project plus its append-only edit journal and undo stack.
///
/// Undo applies the recorded inverse and journals it like any other edit,
/// so replaying the journal always reproduces the current state.
#[derive(Debug, Clone)]
pub struct Editor {
    initial: LabelProject,
    project: LabelProject,
    log: Vec<Edit>,
    undo: Vec<Edit>,
}

impl Editor {
    pub fn new(project: LabelProject) -> Self {
        Self {
            initial: project.clone(),
            project,
            log: Vec::new(),
            undo: Vec::new(),
        }
    }

    pub fn project(&self) -> &LabelProject {
        &self.project
    }

    pub fn initial(&self) -> &LabelProject {
        &self.initial
    }

    pub fn log(&self) -> &[Edit] {
        &self.log
    }

    pub fn apply(&mut self, edit: Edit) -> Result<&LabelProject, LabelError> {
        let (next, inverse) = self.project.apply(&edit)?;
        self.project = next;
        self.log.push(edit);
        self.undo.push(inverse);
        Ok(&self.project)
    }

    /// Reverts the most recent edit; `None` when there is nothing to undo.
    pub fn undo(&mut self) -> Option<Result<&LabelProject, LabelError>> {
        let inverse = self.undo.pop()?;
        Some(match self.project.apply(&inverse) {
            Ok((next, _)) => {
                self.project = next;
                self.log.push(inverse);
                Ok(&self.project)
            }
            Err(e) => Err(e),
        })
    }
}

// On-disk forms. Version 1 had no class table and no mesh scale.

#[derive(Serialize, Deserialize)]
struct ProjectFileV2 {
    schema_version: u32,
    scene_ref: String,
    class_table: BTreeMap<String, u32>,
    objects: Vec<LabelObject>,
}

#[derive(Deserialize)]
struct ProjectFileV1 {
    scene_ref: String,
    objects: Vec<ObjectV1>,
}

#[derive(Deserialize)]
struct ObjectV1 {
    id: u32,
    class_name: String,
    kind: ObjectKind,
    pose: RigidTransform,
    #[serde(default)]
    half_extents: Option<Vec3>,
    #[serde(default)]
    mesh_ref: Option<String>,
}

#[derive(Deserialize)]
struct VersionProbe {
    schema_version: Option<u32>,
}

pub fn project_to_json(project: &LabelProject) -> String {
    serde_json::to_string_pretty(&ProjectFileV2 {
        schema_version: SCHEMA_VERSION,
        scene_ref: project.scene_ref.clone(),
        class_table: project.class_table.clone(),
        objects: project.objects.clone(),
    })
    .expect("serializable")
}

pub fn project_from_json(text: &str, source: &str) -> Result<LabelProject, LabelError> {
    let parse = |e: serde_json::Error| LabelError::Parse {
        path: source.to_string(),
        message: e.to_string(),
    };
    let probe: VersionProbe = serde_json::from_str(text).map_err(parse)?;
    let version = probe.schema_version.ok_or_else(|| LabelError::Parse {
        path: source.to_string(),
        message: "missing schema_version".into(),
    })?;
    let project = match version {
        1 => {
            let v1: ProjectFileV1 = serde_json::from_str(text).map_err(parse)?;
            let mut class_table = BTreeMap::new();
            for o in &v1.objects {
                let next = class_table.len() as u32 + 1;
                class_table.entry(o.class_name.clone()).or_insert(next);
            }
            LabelProject {
                scene_ref: v1.scene_ref,
                class_table,
                objects: v1
                    .objects
                    .into_iter()
                    .map(|o| LabelObject {
                        id: o.id,
                        class_name: o.class_name,
                        kind: o.kind,
                        pose: o.pose,
                        half_extents: o.half_extents,
                        mesh_ref: o.mesh_ref,
                        scale: 1.0,
                    })
                    .collect(),
            }
        }
        2 => {
            let v2: ProjectFileV2 = serde_json::from_str(text).map_err(parse)?;
            LabelProject {
                scene_ref: v2.scene_ref,
                class_table: v2.class_table,
                objects: v2.objects,
            }
        }
        found => {
            return Err(LabelError::UnsupportedVersion {
                found,
                supported: SUPPORTED_VERSIONS.to_vec(),
            })
        }
    };
    project.validate()?;
    Ok(project)
}

pub fn save_project(project: &LabelProject, path: &Path) -> Result<(), LabelError> {
    project.validate()?;
    std::fs::write(path, project_to_json(project)).map_err(|source| LabelError::Io {
        path: path.display().to_string(),
        source,
    })
}

pub fn load_project(path: &Path) -> Result<LabelProject, LabelError> {
    let text = std::fs::read_to_string(path).map_err(|source| LabelError::Io {
        path: path.display().to_string(),
        source,
    })?;
    project_from_json(&text, &path.display().to_string())
}

/// Loads meshes referenced by `mesh_ref`, relative to a base directory, once each.
#[derive(Debug, Clone, Default)]
pub struct MeshLibrary {
    base: PathBuf,
    meshes: HashMap<String, Arc<TriMesh>>,
}

impl MeshLibrary {
    pub fn new(base: impl Into<PathBuf>) -> Self {
        Self {
            base: base.into(),
            meshes: HashMap::new(),
        }
    }

    /// Registers an in-memory mesh under a reference name.
    pub fn insert(&mut self, mesh_ref: &str, mesh: TriMesh) {
        self.meshes.insert(mesh_ref.to_string(), Arc::new(mesh));
    }

    pub fn get(&self, mesh_ref: &str) -> Option<Arc<TriMesh>> {
        self.meshes.get(mesh_ref).cloned()
    }

    pub fn load(&mut self, mesh_ref: &str) -> Result<Arc<TriMesh>, LabelError> {
        if let Some(m) = self.meshes.get(mesh_ref) {
            return Ok(m.clone());
        }
        let path = self.base.join(mesh_ref);
        let mesh = Arc::new(load_obj(&path)?);
        self.meshes.insert(mesh_ref.to_string(), mesh.clone());
        Ok(mesh)
    }

    /// Loads every mesh the project references.
    pub fn load_project_meshes(&mut self, project: &LabelProject) -> Result<(), LabelError> {
        for o in &project.objects {
            if let Some(r) = &o.mesh_ref {
                self.load(r)?;
            }
        }
        Ok(())
    }

    /// Mesh of a mesh label; errors if it was not loaded.
    pub fn mesh_for(&self, object: &LabelObject) -> Result<Arc<TriMesh>, LabelError> {
        object.expect_kind(ObjectKind::Mesh)?;
        let r = object.mesh_ref.as_deref().unwrap_or_default();
        self.get(r).ok_or_else(|| LabelError::InvalidObject {
            id: object.id,
            message: format!("mesh '{r}' is not loaded"),
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::f64::consts::FRAC_PI_2;

    fn sample_project() -> LabelProject {
        let mut p = LabelProject::new("scene/transforms.json");
        for (id, class) in [(1, "cup"), (2, "plate"), (3, "cup")] {
            let pose = RigidTransform::new(
                UnitQuaternion::from_euler_angles(0.1 * id as f64, 0.2, -0.3),
                Vec3::new(id as f64 * 0.1, -0.2, 0.7),
            );
            let o = if id == 2 {
                LabelObject::new_mesh(id, class, pose, "meshes/plate.obj", 1.5)
            } else {
                LabelObject::new_box(id, class, pose, Vec3::new(0.05, 0.06, 0.07))
            };
            p = p.apply(&Edit::Add { object: o, index: None }).unwrap().0;
        }
        p
    }

    #[test]
    fn classes_are_dense() {
        let p = sample_project();
        assert_eq!(p.class_id("cup"), Some(1));
        assert_eq!(p.class_id("plate"), Some(2));
        p.validate().unwrap();
    }

    #[test]
    fn add_then_remove_restores() {
        let p = sample_project();
        let o = LabelObject::new_box(9, "bowl", RigidTransform::identity(), Vec3::repeat(0.1));
        let (added, _) = p.apply(&Edit::Add { object: o, index: None }).unwrap();
        assert_eq!(added.class_id("bowl"), Some(3));
        let (removed, _) = added.apply(&Edit::Remove { id: 9 }).unwrap();
        assert_eq!(removed, p);
    }

    #[test]
    fn translate_back_and_forth() {
        let p = sample_project();
        let d = Vec3::new(0.3, -0.1, 0.25);
        let (a, _) = p.apply(&Edit::Translate { id: 1, delta: d }).unwrap();
        let (b, _) = a.apply(&Edit::Translate { id: 1, delta: -d }).unwrap();
        let (p0, p1) = (p.object(1).unwrap().pose, b.object(1).unwrap().pose);
        assert!((p0.translation() - p1.translation()).amax() <= 1e-12);
        assert_eq!(p0.rotation(), p1.rotation());
    }

    #[test]
    fn four_quarter_turns() {
        let p = sample_project();
        let mut q = p.clone();
        for _ in 0..4 {
            q = q
                .apply(&Edit::Rotate { id: 2, axis_angle: Vec3::new(0.0, 0.0, FRAC_PI_2) })
                .unwrap()
                .0;
        }
        let (a, b) = (p.object(2).unwrap().pose, q.object(2).unwrap().pose);
        assert!((a.to_matrix() - b.to_matrix()).amax() <= 1e-9);
    }

    #[test]
    fn edit_errors() {
        let p = sample_project();
        assert!(matches!(p.apply(&Edit::Remove { id: 42 }), Err(LabelError::UnknownObject(42))));
        assert!(matches!(p.apply(&Edit::Scale { id: 1, factor: 0.0 }), Err(LabelError::InvalidScale(_))));
        assert!(matches!(p.apply(&Edit::Scale { id: 1, factor: -2.0 }), Err(LabelError::InvalidScale(_))));
        let dup = LabelObject::new_box(1, "cup", RigidTransform::identity(), Vec3::repeat(0.1));
        assert!(matches!(p.apply(&Edit::Add { object: dup, index: None }), Err(LabelError::DuplicateId(1))));
    }

    #[test]
    fn undo_and_replay() {
        let mut ed = Editor::new(sample_project());
        ed.apply(Edit::Translate { id: 1, delta: Vec3::new(0.1, 0.0, 0.0) }).unwrap();
        ed.apply(Edit::Scale { id: 2, factor: 2.0 }).unwrap();
        ed.apply(Edit::Scale { id: 3, factor: 0.5 }).unwrap();
        ed.apply(Edit::Remove { id: 1 }).unwrap();
        let before_undo = ed.project().clone();
        ed.undo().unwrap().unwrap();
        ed.undo().unwrap().unwrap();
        assert_ne!(ed.project(), &before_undo);
        assert_eq!(replay(ed.initial(), ed.log()).unwrap(), *ed.project());
        while let Some(r) = ed.undo() {
            r.unwrap();
        }
        assert_eq!(ed.project(), ed.initial());
    }

    #[test]
    fn save_load_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("p.json");
        let p = sample_project();
        save_project(&p, &path).unwrap();
        assert_eq!(load_project(&path).unwrap(), p);
    }

    #[test]
    fn duplicate_ids_rejected_on_load() {
        let mut p = sample_project();
        p.objects[1].id = 1;
        let text = project_to_json(&p);
        assert!(matches!(project_from_json(&text, "x"), Err(LabelError::DuplicateId(1))));
    }

    #[test]
    fn unknown_version_names_supported() {
        let err = project_from_json(r#"{"schema_version": 7, "scene_ref": "", "objects": []}"#, "x").unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains('7') && msg.contains("[1, 2]"), "{msg}");
    }

    #[test]
    fn kind_fields_required() {
        let mut p = sample_project();
        p.objects[0].half_extents = None;
        assert!(matches!(p.validate(), Err(LabelError::InvalidObject { id: 1, .. })));
    }
}
