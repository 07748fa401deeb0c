//! Server-side labeling session: one writer, revisioned, journaled.

use std::path::PathBuf;
use std::sync::Arc;

use fieldlabel_core::field::{DensityField, RayMarchConfig};
use fieldlabel_core::labeling::{Edit, Editor, LabelProject, MeshLibrary};
use fieldlabel_core::scene::{Frame, SceneDescription};

use crate::error::ServiceError;

pub const DEFAULT_PREVIEW_LONG_EDGE: u32 = 640;

#[derive(Debug, Clone)]
pub struct SessionOptions {
    pub march: RayMarchConfig,
    pub preview_long_edge: u32,
    /// Where extracted meshes are written; also the mesh library base.
    pub mesh_dir: Option<PathBuf>,
    pub seed: u64,
}

pub struct Session {
    pub scene: Arc<SceneDescription>,
    pub field: Arc<dyn DensityField>,
    pub meshes: MeshLibrary,
    pub options: SessionOptions,
    editor: Editor,
    revision: u64,
    current_frame: usize,
}

/// Immutable copy of what a long-running request needs.
#[derive(Clone)]
pub struct Snapshot {
    pub revision: u64,
    pub project: LabelProject,
    pub scene: Arc<SceneDescription>,
    pub field: Arc<dyn DensityField>,
    pub meshes: MeshLibrary,
    pub options: SessionOptions,
}

impl Session {
    pub fn new(
        scene: SceneDescription,
        field: Arc<dyn DensityField>,
        project: LabelProject,
        meshes: MeshLibrary,
        options: SessionOptions,
    ) -> Result<Self, ServiceError> {
        project.validate()?;
        log::info!("session: {} frames, {} objects", scene.frames.len(), project.objects.len());
        Ok(Self {
            scene: Arc::new(scene),
            field,
            meshes,
            options,
            editor: Editor::new(project),
            revision: 0,
            current_frame: 0,
        })
    }

    pub fn revision(&self) -> u64 {
        self.revision
    }

    pub fn project(&self) -> &LabelProject {
        self.editor.project()
    }

    pub fn initial_project(&self) -> &LabelProject {
        self.editor.initial()
    }

    pub fn edit_log(&self) -> &[Edit] {
        self.editor.log()
    }

    pub fn current_frame(&self) -> usize {
        self.current_frame
    }

    pub fn frame(&self, index: usize) -> Result<&Frame, ServiceError> {
        self.scene.frames.get(index).ok_or_else(|| {
            ServiceError::NotFound(format!("frame {index} not found (scene has {} frames)", self.scene.frames.len()))
        })
    }

    pub fn set_current_frame(&mut self, index: usize) -> Result<(), ServiceError> {
        self.frame(index)?;
        self.current_frame = index;
        Ok(())
    }

    pub fn snapshot(&self) -> Snapshot {
        Snapshot {
            revision: self.revision,
            project: self.project().clone(),
            scene: self.scene.clone(),
            field: self.field.clone(),
            meshes: self.meshes.clone(),
            options: self.options.clone(),
        }
    }

    fn check_base(&self, base: Option<u64>) -> Result<(), ServiceError> {
        match base {
            Some(base) if base != self.revision => Err(ServiceError::Conflict {
                base,
                current: self.revision,
            }),
            _ => Ok(()),
        }
    }

    /// Applies `edits` as one revision; nothing changes if any edit fails.
    pub fn commit(&mut self, base: Option<u64>, edits: Vec<Edit>) -> Result<u64, ServiceError> {
        self.check_base(base)?;
        let mut next = self.editor.clone();
        for edit in edits {
            next.apply(edit)?;
        }
        self.editor = next;
        self.revision += 1;
        Ok(self.revision)
    }

    /// Replaces the whole project; the journal restarts from it.
    pub fn replace_project(&mut self, base: Option<u64>, project: LabelProject) -> Result<u64, ServiceError> {
        self.check_base(base)?;
        project.validate()?;
        self.editor = Editor::new(project);
        self.revision += 1;
        Ok(self.revision)
    }
}
